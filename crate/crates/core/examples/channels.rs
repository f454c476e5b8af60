//! Channel layer: AWGN calibration, Rayleigh fading, composed forward
//! operators with their adjoints, and the condition number of a random
//! linear encoder.
//!
//! cargo run --release --example channels

use diffcomm::channel::{awgn, compose, condition_number, fading, noise_sigma, power_normalize, Channel, ChannelState, LinearEncoder};
use diffcomm::distributions::GaussianMixture;
use diffcomm::metrics::measured_snr;
use diffcomm::rng::{chain_rng, normal_vec};

fn main() -> diffcomm::Result<()> {
    let z = power_normalize(&normal_vec(&mut chain_rng(1, 0), 1_000_000))?;
    for snr in [0.0, 10.0, 20.0] {
        let y = awgn(&z, snr, 2);
        println!("awgn requested {snr:>4} dB measured {:.3} dB", measured_snr(&z, &y)?);
    }

    let state = ChannelState::rayleigh(3, 5)?;
    println!("rayleigh taps {:?}", state.taps());
    let y = fading(&z[..8], &state, 10.0, 3);
    println!("faded block {:?}", &y[..4]);

    let enc = LinearEncoder::random(4, 6, 7)?;
    println!("encoder condition number {:.4}", condition_number(enc.matrix(), 4, 6)?);
    let prior = GaussianMixture::standard_normal(6);
    let op = compose(enc.into(), Channel::Fading(state), noise_sigma(10.0))?.calibrate_power(&prior, 0)?;
    println!("operator {}→{} (cbr {:.3}), power scale {:.4}", op.in_dim(), op.out_dim(), op.cbr(), op.power_scale());

    let x = normal_vec(&mut chain_rng(9, 0), 6);
    let u = normal_vec(&mut chain_rng(9, 1), op.out_dim());
    let ax = op.mean(&x);
    let atu = op.vjp(&x, &u);
    let lhs: f64 = ax.iter().zip(&u).map(|(a, b)| a * b).sum::<f64>()
        - op.mean(&[0.0; 6]).iter().zip(&u).map(|(a, b)| a * b).sum::<f64>();
    let rhs: f64 = x.iter().zip(&atu).map(|(a, b)| a * b).sum();
    println!("adjoint check <Ax - A0, u> = {lhs:.12}, <x, Aᵀu> = {rhs:.12}");
    Ok(())
}
