//! DiffCom decoding of a 2D mixture source sent through a random linear
//! encoder and AWGN. Compares full and adaptive starts with the linear
//! reference decoder and writes per-step diagnostics.
//!
//! cargo run --release --example diffcom_receiver -- [snr_db] [diagnostics.csv]

use diffcomm::channel::{compose, noise_sigma, Channel, LinearEncoder};
use diffcomm::diffusion::NoiseSchedule;
use diffcomm::distributions::GaussianMixture;
use diffcomm::receiver::{diffcom_decode, write_diagnostics_csv, DecoderConfig, ReferenceDecoder, StartMode};
use diffcomm::rng::{derive_seed, normal_vec, tagged_rng, NOISE_TAG};

fn main() -> diffcomm::Result<()> {
    let args: Vec<String> = std::env::args().collect();
    let snr: f64 = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(10.0);
    let gmm = GaussianMixture::from_diagonal(
        vec![0.5, 0.5],
        vec![vec![-1.0, 0.5], vec![1.0, -0.5]],
        vec![vec![0.2, 0.3], vec![0.3, 0.2]],
    )?;
    let sched = NoiseSchedule::vp_linear(5e-4, 0.1, 200)?;
    let op = compose(LinearEncoder::random(2, 2, 7)?.into(), Channel::Awgn, noise_sigma(snr))?.calibrate_power(&gmm, 0)?;
    let dec = ReferenceDecoder::conjugate_mean(&op, &gmm)?;
    let mut full = DecoderConfig::new(3.0, 1.0);
    full.normalize_residual = true;
    let adaptive = DecoderConfig {
        start: StartMode::Adaptive,
        ..full
    };

    let n = 50;
    let (mut e_full, mut e_adapt, mut e_ref, mut steps) = (0.0, 0.0, 0.0, 0.0);
    let mut last = None;
    for (k, x) in gmm.sample_points(n, 1).iter().enumerate() {
        let s = derive_seed(1, k as u64);
        let z = normal_vec(&mut tagged_rng(s, NOISE_TAG, 0), 2);
        let y: Vec<f64> = op.mean(x).iter().zip(z).map(|(m, e)| m + op.sigma_n() * e).collect();
        let a = diffcom_decode(&y, &op, &gmm, &gmm, &sched, &full, &dec, s)?;
        let b = diffcom_decode(&y, &op, &gmm, &gmm, &sched, &adaptive, &dec, s)?;
        let err = |v: &[f64]| v.iter().zip(x).map(|(p, q)| (p - q).powi(2)).sum::<f64>() / 2.0;
        e_full += err(&a.x);
        e_adapt += err(&b.x);
        e_ref += err(&dec.decode(&y));
        steps += b.steps_used as f64;
        last = Some(a);
    }
    let n = n as f64;
    println!("snr {snr} dB, sigma_n {:.4}", op.sigma_n());
    println!("mse full {:.4}  adaptive {:.4} ({:.0} steps)  reference {:.4}", e_full / n, e_adapt / n, steps / n, e_ref / n);
    if let (Some(path), Some(out)) = (args.get(2), last) {
        write_diagnostics_csv(std::fs::File::create(path)?, &out.diagnostics)?;
        println!("diagnostics -> {path}");
    }
    Ok(())
}
