//! DPS on the scalar conjugate problem: prior N(0, 1), y = x + n, σ_n = 1,
//! y = 2. Compares guided samples with the exact posterior N(1, 0.5) and
//! prints the gap between the DPS score and the exact conditional score.
//!
//! cargo run --release --example dps_conjugate -- [samples] [gamma]

use diffcomm::channel::ForwardOperator;
use diffcomm::diffusion::{reverse_sde, NoiseSchedule};
use diffcomm::distributions::GaussianMixture;
use diffcomm::guidance::{dps_score_at, GuidanceConfig};
use diffcomm::metrics::moments;
use diffcomm::score::FnScore;

fn main() -> diffcomm::Result<()> {
    let args: Vec<String> = std::env::args().collect();
    let n = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(10_000);
    let gamma = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(0.5);
    let prior = GaussianMixture::standard_normal(1);
    let sched = NoiseSchedule::vp_linear(1e-4, 0.02, 1000)?;
    let op = ForwardOperator::identity(1).with_sigma_n(1.0)?;
    let y = [2.0];
    let g = GuidanceConfig::new(gamma);

    let guided = FnScore::new(1, |x: &[f64], level| dps_score_at(&prior, &op, &y, x, level, &g).unwrap());
    let batch = reverse_sde(&guided, &sched, n, 0)?;
    let (m, v) = moments(&batch.points)?;
    println!("gamma {gamma}: sample mean {:.4} var {:.4}  (posterior 1.0000, 0.5000)", m[0], v[0]);

    // With α² + σ² = 1 the exact likelihood score is α(y − αx)/(σ_n² + σ²).
    for i in [1, 10, 100, 500, 1000] {
        let level = sched.level(i);
        let x = [0.4];
        let dps = dps_score_at(&prior, &op, &y, &x, level, &g)?[0];
        let exact = -x[0] + level.alpha * (y[0] - level.alpha * x[0]) / (1.0 + level.variance());
        println!("step {i:4}: dps {dps:+.6} exact {exact:+.6} rel {:.2e}", ((dps - exact) / exact).abs());
    }
    Ok(())
}
