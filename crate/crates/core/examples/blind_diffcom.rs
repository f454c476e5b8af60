//! Blind decoding of an unknown scalar channel gain: joint sampling of the
//! source and the gain, located on a grid of the exact joint posterior and
//! compared with a decoder that assumes the prior-mean gain.
//!
//! cargo run --release --example blind_diffcom -- [trials]

use diffcomm::channel::{compose, noise_sigma, Channel, LinearEncoder};
use diffcomm::diffusion::NoiseSchedule;
use diffcomm::distributions::GaussianMixture;
use diffcomm::harness::blind_trial;
use diffcomm::receiver::DecoderConfig;

fn main() -> diffcomm::Result<()> {
    let trials: u64 = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(20);
    let gmm = GaussianMixture::from_diagonal(vec![0.5, 0.5], vec![vec![-1.0], vec![1.0]], vec![vec![0.0025], vec![0.0025]])?;
    let sched = NoiseSchedule::vp_linear(1e-4, 0.02, 1000)?;
    let base = compose(LinearEncoder::random(8, 1, 3)?.into(), Channel::Awgn, noise_sigma(20.0))?.calibrate_power(&gmm, 0)?;
    let mut dc = DecoderConfig::new(10.0, 0.0);
    dc.normalize_residual = true;
    let (mut hpd, mut blind, mut mism) = (0, 0.0, 0.0);
    for seed in 0..trials {
        let t = blind_trial(&gmm, &base, &sched, &dc, 1.0, 0.09, 201, seed)?;
        println!(
            "seed {seed:3}: truth ({:+.3}, {:.3}) estimate ({:+.3}, {:.3}) map ({:+.3}, {:.3})",
            t.x_true, t.h_true, t.x_hat, t.h_hat, t.map.0, t.map.1
        );
        hpd += t.in_hpd90 as u32;
        blind += t.model_residual_blind;
        mism += t.model_residual_mismatched;
    }
    let n = trials as f64;
    println!("in 90% HPD region: {hpd}/{trials}");
    println!("mean residual blind {:.4} mismatched {:.4}", blind / n, mism / n);
    Ok(())
}
