//! Every sampler against a 1D two-component mixture with its exact score:
//! ancestral reverse SDE, Langevin, and the probability-flow ODE with Euler,
//! RK4 and predictor-corrector steps.
//!
//! cargo run --release --example samplers -- [samples]

use diffcomm::diffusion::{langevin, pf_ode, reverse_sde, LangevinConfig, NoiseSchedule, OdeMethod, SampleBatch};
use diffcomm::distributions::GaussianMixture;
use diffcomm::metrics::{moments, w1_1d};

fn main() -> diffcomm::Result<()> {
    let n: usize = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(5000);
    let gmm = GaussianMixture::from_diagonal(vec![0.3, 0.7], vec![vec![-1.5], vec![1.0]], vec![vec![0.25], vec![0.5]])?;
    let sched = NoiseSchedule::vp_linear(1e-4, 0.02, 1000)?;
    let reference: Vec<f64> = gmm.sample_points(n, 99).into_iter().map(|x| x[0]).collect();
    println!("target mean {:.4} var {:.4}", gmm.mean()[0], gmm.covariance()[0]);

    let report = |name: &str, batch: &SampleBatch| -> diffcomm::Result<()> {
        let (m, v) = moments(&batch.points)?;
        let w1 = w1_1d(&batch.column(0), &reference)?;
        println!("{name:<20} mean {:+.4} var {:.4} w1 {:.4}", m[0], v[0], w1);
        Ok(())
    };

    report("reverse sde", &reverse_sde(&gmm, &sched, n, 1)?)?;
    let init = SampleBatch::gaussian(n, 1, 1.0, 0, 2);
    let lang = langevin(|x| gmm.score(x).unwrap(), &init, LangevinConfig::new(0.005, 4000), 2)?;
    report("langevin", &lang)?;
    let x_t = SampleBatch::gaussian(n, 1, sched.terminal_variance(), sched.steps(), 3);
    for (name, method) in [("ode euler", OdeMethod::Euler), ("ode rk4", OdeMethod::Rk4), ("ode pc", OdeMethod::pc(3))] {
        report(name, &pf_ode(&gmm, &sched, method, 1000, &x_t, false)?.batch)?;
    }
    Ok(())
}
