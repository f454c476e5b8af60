//! Analytic scores of a Gaussian mixture, checked against central
//! differences of the log-density, clean and under VP perturbation.
//!
//! cargo run --release --example gmm_scores

use diffcomm::diffusion::NoiseSchedule;
use diffcomm::distributions::GaussianMixture;

fn main() -> diffcomm::Result<()> {
    let gmm = GaussianMixture::new(
        vec![0.25, 0.75],
        vec![vec![-1.0, 0.5], vec![1.5, -0.5]],
        vec![vec![0.5, 0.1, 0.1, 0.3], vec![0.4, 0.0, 0.0, 0.8]],
    )?;
    let sched = NoiseSchedule::vp_linear(1e-4, 0.02, 1000)?;
    let h = 1e-5;
    for i in [0, 100, 500, 1000] {
        let level = sched.level(i);
        let marginal = gmm.perturbed_marginal(&sched, i)?;
        let x = [0.3, -0.2];
        let s = gmm.score_at(&x, level);
        let mut fd = [0.0; 2];
        for (c, v) in fd.iter_mut().enumerate() {
            let mut xp = x;
            let mut xm = x;
            xp[c] += h;
            xm[c] -= h;
            *v = (marginal.log_density(&xp)? - marginal.log_density(&xm)?) / (2.0 * h);
        }
        println!(
            "step {i:4}  alpha {:.4} sigma {:.4}  score [{:+.6}, {:+.6}]  fd [{:+.6}, {:+.6}]",
            level.alpha, level.sigma, s[0], s[1], fd[0], fd[1]
        );
    }
    let (mean, cov) = (gmm.mean(), gmm.covariance());
    println!("mixture mean {mean:?}");
    println!("mixture covariance {cov:?}");
    Ok(())
}
