//! Train a small score network by denoising score matching on a 1D standard
//! normal source and compare it against the analytic perturbed score.
//!
//! cargo run --release --example train_score_net -- [steps] [lr] [batch] [beta_min]

use diffcomm::diffusion::NoiseSchedule;
use diffcomm::distributions::GaussianMixture;
use diffcomm::net::{train_dsm, ScoreNetwork, TrainConfig};
use diffcomm::score::ScoreModel;

fn main() -> diffcomm::Result<()> {
    let args: Vec<String> = std::env::args().collect();
    let steps = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(20_000);
    let lr = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(5e-4);
    let batch = args.get(3).and_then(|s| s.parse().ok()).unwrap_or(128);
    let beta_min = args.get(4).and_then(|s| s.parse().ok()).unwrap_or(1e-3);

    let source = GaussianMixture::standard_normal(1);
    let sched = NoiseSchedule::vp_linear(beta_min, 0.02, 1000)?;
    let init = ScoreNetwork::default_arch(1, 0)?;
    let cfg = TrainConfig {
        learning_rate: lr,
        steps,
        batch_size: batch,
        ..TrainConfig::default()
    };
    let start = std::time::Instant::now();
    let out = train_dsm(&init, &source, &sched, &cfg)?;
    let window = (steps / 20).max(1);
    let head: f64 = out.losses[..window].iter().sum::<f64>() / window as f64;
    let tail: f64 = out.losses[steps - window..].iter().sum::<f64>() / window as f64;
    println!("trained {steps} steps in {:.1?}", start.elapsed());
    println!("mean loss: first {window} steps {head:.4}, last {window} steps {tail:.4}");

    let mut total = 0.0;
    let mut count = 0;
    for t in [0.1, 0.5, 0.9] {
        let level = sched.level_at(t);
        let mut err = 0.0;
        for k in 0..=60 {
            let x = -3.0 + 0.1 * k as f64;
            let s = out.net.score(&[x], level)[0];
            let exact = source.score_at(&[x], level)[0];
            err += (s - exact).powi(2);
        }
        println!("t = {t}: mse {:.5}", err / 61.0);
        total += err;
        count += 61;
    }
    println!("mean squared score error {:.5}", total / count as f64);
    Ok(())
}
