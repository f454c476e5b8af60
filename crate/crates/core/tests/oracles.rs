use diffcomm::channel::{compose, Channel, ForwardOperator, LinearEncoder};
use diffcomm::diffusion::{tweedie, NoiseSchedule};
use diffcomm::distributions::GaussianMixture;
use diffcomm::guidance::{
    blind_dps_step_at, dps_score, dps_score_at, gmm_classifier, semantic_reg_grad, GainFamily, GuidanceConfig, OperatorFamily,
};
use diffcomm::metrics::moments;
use diffcomm::net::{dsm_loss, grad_check, Activation, ScoreNetwork, TimeEmbedding, TimeSampling};
use diffcomm::receiver::{blind_diffcom_decode, diffcom_decode, DecoderConfig, ReferenceDecoder};
use diffcomm::rng::{chain_rng, normal_vec};

#[test]
fn dsm_loss_of_exact_score_at_half_alpha_bar() {
    // ½(ᾱ + ᾱ²/σ²) with ᾱ = σ² = 0.5.
    let sched = NoiseSchedule::vp_from_betas(vec![0.5]).unwrap();
    let g = GaussianMixture::standard_normal(1);
    let l = dsm_loss(&g, &g, &sched, 1_000_000, 4, TimeSampling::Fixed(1)).unwrap();
    // The per-sample loss ½(z − √ᾱ x0 ... )² has variance below 1 here.
    assert!((l - 0.5).abs() < 3e-3, "{l}");
}

#[test]
fn backprop_matches_finite_differences() {
    let net = ScoreNetwork::new(2, &[32, 32], Activation::Tanh, TimeEmbedding::Scalar, 9).unwrap();
    let fine = grad_check(&net, &[0.3, -0.7], 0.4, 1e-5).unwrap();
    let coarse = grad_check(&net, &[0.3, -0.7], 0.4, 1e-3).unwrap();
    assert!(fine <= 1e-4, "{fine}");
    assert!(coarse >= fine);
}

#[test]
fn classifier_gradient_matches_finite_difference() {
    let g = GaussianMixture::from_diagonal(vec![0.4, 0.6], vec![vec![-1.0, 0.5], vec![1.0, 0.0]], vec![vec![0.5, 0.3], vec![0.4, 0.6]])
        .unwrap()
        .with_labels(vec![0, 1])
        .unwrap();
    let sched = NoiseSchedule::vp_linear(1e-3, 0.05, 100).unwrap();
    let x = [0.2, -0.3];
    let post = gmm_classifier(&g, &x, 40, &sched).unwrap();
    let h = 1e-6;
    for c in 0..2 {
        for j in 0..2 {
            let (mut xp, mut xm) = (x, x);
            xp[j] += h;
            xm[j] -= h;
            let lp = gmm_classifier(&g, &xp, 40, &sched).unwrap().probabilities[c].ln();
            let lm = gmm_classifier(&g, &xm, 40, &sched).unwrap().probabilities[c].ln();
            let fd = (lp - lm) / (2.0 * h);
            assert!((post.gradients[c][j] - fd).abs() <= 1e-4 * fd.abs().max(1.0));
        }
    }
}

#[test]
fn semantic_gradient_matches_finite_difference() {
    let m = [1.0, 2.0, 0.0, -1.0, 0.5, 1.5];
    let x = [0.3, -1.0, 2.0];
    let r = [1.0, 0.0, -0.5];
    let g = semantic_reg_grad(&m, 2, &x, &r).unwrap();
    let f = |x: &[f64]| {
        (0..2)
            .map(|k| (0..3).map(|j| m[k * 3 + j] * (x[j] - r[j])).sum::<f64>().powi(2))
            .sum::<f64>()
    };
    for j in 0..3 {
        let h = 1e-6;
        let (mut xp, mut xm) = (x, x);
        xp[j] += h;
        xm[j] -= h;
        let fd = (f(&xp) - f(&xm)) / (2.0 * h);
        assert!((g[j] - fd).abs() <= 1e-5 * fd.abs().max(1.0));
    }
}

#[test]
fn dps_step_decreases_residual() {
    let g = GaussianMixture::from_diagonal(vec![0.5, 0.5], vec![vec![-1.0, 1.0], vec![1.0, 0.0]], vec![vec![0.3, 0.3], vec![0.3, 0.3]])
        .unwrap();
    let sched = NoiseSchedule::vp_linear(1e-3, 0.05, 100).unwrap();
    let enc = LinearEncoder::from_rows(&[vec![1.0, 0.5]], None).unwrap();
    let op = compose(enc.into(), Channel::Awgn, 0.1).unwrap();
    let y = [0.8];
    let cfg = GuidanceConfig::new(1.0);
    let mut rng = chain_rng(2, 0);
    for i in [10, 50, 90] {
        let x = normal_vec(&mut rng, 2);
        let residual = |x: &[f64]| {
            let x0 = tweedie(x, i, &g, &sched).unwrap();
            (y[0] - op.mean(&x0)[0]).powi(2)
        };
        let prior = dps_score(&g, &op, &y, &x, i, &GuidanceConfig::new(0.0), &sched).unwrap();
        let guided = dps_score(&g, &op, &y, &x, i, &cfg, &sched).unwrap();
        let step: Vec<f64> = x.iter().zip(guided.iter().zip(&prior)).map(|(a, (s, p))| a + 1e-3 * (s - p)).collect();
        assert!(residual(&step) < residual(&x));
    }
}

#[test]
fn blind_step_with_collapsed_gain_prior_is_dps() {
    let gx = GaussianMixture::standard_normal(2);
    let gh = GaussianMixture::gaussian(vec![1.3], vec![1e-12]).unwrap();
    let base = compose(LinearEncoder::random(3, 2, 1).unwrap().into(), Channel::Awgn, 0.1).unwrap();
    let family = OperatorFamily::new(base, GainFamily::Scalar);
    let known = family.at(&[1.3]).unwrap();
    let sched = NoiseSchedule::vp_linear(1e-4, 0.02, 1000).unwrap();
    let cfg = GuidanceConfig::new(0.7);
    let y = [0.5, -0.2, 1.0];
    let mut rng = chain_rng(5, 0);
    for i in [5, 200, 700] {
        let x = normal_vec(&mut rng, 2);
        let h = normal_vec(&mut rng, 1);
        let l = sched.level(i);
        let blind = blind_dps_step_at(&gx, &gh, &family, &y, &x, &h, l, l, &cfg).unwrap();
        let dps = dps_score_at(&gx, &known, &y, &x, l, &cfg).unwrap();
        for (a, b) in blind.score_x.iter().zip(&dps) {
            assert!((a - b).abs() <= 1e-6 * b.abs().max(1.0), "{a} vs {b}");
        }
    }
}

#[test]
fn joint_posterior_depends_on_the_product_only() {
    let base = ForwardOperator::identity(1).with_sigma_n(0.3).unwrap();
    let family = OperatorFamily::new(base, GainFamily::Scalar);
    let y = [0.9];
    let log_post = |x: f64, h: f64| {
        let r = y[0] - family.apply_mean(&[x], &[h])[0];
        -0.5 * x * x - 0.5 * h * h - r * r / (2.0 * 0.09)
    };
    let mut rng = chain_rng(6, 0);
    for _ in 0..50 {
        let p = normal_vec(&mut rng, 2);
        assert_eq!(log_post(p[0], p[1]), log_post(-p[0], -p[1]));
    }
}

#[test]
fn unguided_decoder_samples_the_prior() {
    let prior = GaussianMixture::from_diagonal(vec![0.3, 0.7], vec![vec![-1.5], vec![1.0]], vec![vec![0.25], vec![0.5]]).unwrap();
    let sched = NoiseSchedule::vp_linear(5e-4, 0.1, 200).unwrap();
    let op = ForwardOperator::identity(1).with_sigma_n(1.0).unwrap();
    let dec = ReferenceDecoder::pseudo_inverse(&op).unwrap();
    let dc = DecoderConfig::new(0.0, 0.0);
    let n = 4000;
    let xs: Vec<Vec<f64>> = (0..n)
        .map(|s| diffcom_decode(&[5.0], &op, &prior, &prior, &sched, &dc, &dec, s).unwrap().x)
        .collect();
    let (m, v) = moments(&xs).unwrap();
    let (pm, pv) = (prior.mean()[0], prior.covariance()[0]);
    assert!((m[0] - pm).abs() <= 3.0 * (pv / n as f64).sqrt(), "{} vs {pm}", m[0]);
    // Variance SE from the mixture's fourth central moment is below 2 pv²/n here.
    assert!((v[0] - pv).abs() <= 3.0 * (2.0 * pv * pv / n as f64).sqrt() * 1.5, "{} vs {pv}", v[0]);
}

#[test]
fn blind_decoder_with_collapsed_gain_prior_matches_known_gain() {
    let gx = GaussianMixture::standard_normal(1);
    let gh = GaussianMixture::gaussian(vec![1.5], vec![1e-12]).unwrap();
    let base = compose(LinearEncoder::random(4, 1, 2).unwrap().into(), Channel::Awgn, 0.1).unwrap();
    let family = OperatorFamily::new(base, GainFamily::Scalar);
    let known = family.at(&[1.5]).unwrap();
    let sched = NoiseSchedule::vp_linear(1e-4, 0.02, 1000).unwrap();
    let dc = DecoderConfig::new(0.5, 0.0);
    let dec = ReferenceDecoder::pseudo_inverse(&known).unwrap();
    let y = family.apply_mean(&[0.4], &[1.5]);
    for seed in 0..5 {
        let blind = blind_diffcom_decode(&y, &family, &gx, &gh, &sched, &sched, &dc, seed).unwrap();
        let plain = diffcom_decode(&y, &known, &gx, &gx, &sched, &dc, &dec, seed).unwrap();
        assert!((blind.x[0] - plain.x[0]).abs() <= 1e-3, "{} vs {}", blind.x[0], plain.x[0]);
        // the last ancestral step still injects noise of size √β₁ into the gain chain
        assert!((blind.h[0] - 1.5).abs() <= 5.0 * sched.beta(1).sqrt(), "{}", blind.h[0]);
    }
}
