//! Flow matching from N(0, 1) to N(0, 4): the analytic conditional velocity,
//! its loss floor, ODE transport, and a consistency head built on top of it.
//!
//! cargo run --release --example flow_matching -- [samples]

use diffcomm::diffusion::ode::{integrate, Solver};
use diffcomm::distributions::GaussianMixture;
use diffcomm::flow::{consistency_apply, fm_loss, fm_transport, ConsistencyHead, FnField, GaussianVelocity, TimeField};
use diffcomm::metrics::{moments, w1_1d};
use diffcomm::rng::{chain_rng, normal_vec};

fn main() -> diffcomm::Result<()> {
    let n: usize = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(50_000);
    let target = GaussianMixture::gaussian(vec![0.0], vec![4.0])?;
    let v = GaussianVelocity::new(1, 1.0, 4.0)?;
    let x0: Vec<Vec<f64>> = normal_vec(&mut chain_rng(0, 0), n).into_iter().map(|z| vec![z]).collect();
    let reference: Vec<f64> = target.sample_points(n, 1).into_iter().map(|x| x[0]).collect();
    for (name, solver) in [("euler", Solver::Euler), ("rk4", Solver::Rk4)] {
        let x1 = fm_transport(&v, &x0, 100, solver)?;
        let (_, var) = moments(&x1)?;
        let col: Vec<f64> = x1.iter().map(|x| x[0]).collect();
        println!("{name:<6} endpoint variance {:.4} w1 {:.4}", var[0], w1_1d(&col, &reference)?);
    }
    println!("fm loss of the analytic velocity {:.4}", fm_loss(&v, &target, n, 2)?);

    // Inner field chosen so the head reproduces the exact solution map back to ξ:
    // trajectories of this flow are x(t) = x(ξ) sd(t)/sd(ξ).
    let xi = 0.01;
    let sd = |t: f64| ((1.0 - t).powi(2) + 4.0 * t * t).sqrt();
    let probe = ConsistencyHead::new(FnField::new(1, |_: &[f64], _| vec![0.0]), xi)?;
    let inner = FnField::new(1, |x: &[f64], t: f64| {
        let (a, b) = (probe.c_skip(t), probe.c_out(t));
        x.iter().map(|v| if b == 0.0 { 0.0 } else { (v * sd(xi) / sd(t) - a * v) / b }).collect()
    });
    let head = ConsistencyHead::new(inner, xi)?;
    let x = [0.7];
    println!("boundary c(x, ξ) = {:?}", consistency_apply(&head, &x, xi)?);
    let mut state = x.to_vec();
    let mut t = xi;
    let h = (1.0 - xi) / 4.0;
    for _ in 0..4 {
        state = fm_transport_segment(&v, &state, t, t + h)?;
        t += h;
        println!(
            "t = {t:.4}: c_skip {:.4} c_out {:.4} state {:+.6} c(x_t, t) {:+.9}",
            head.c_skip(t),
            head.c_out(t),
            state[0],
            consistency_apply(&head, &state, t)?[0]
        );
    }
    println!("velocity at (0.7, 0.5) = {:?}", v.eval(&x, 0.5));
    Ok(())
}

fn fm_transport_segment(v: &GaussianVelocity, x: &[f64], t0: f64, t1: f64) -> diffcomm::Result<Vec<f64>> {
    let field = |x: &[f64], t: f64| v.eval(x, t);
    integrate(Solver::Rk4, &field, x, t0, t1, 1000, None)
}
