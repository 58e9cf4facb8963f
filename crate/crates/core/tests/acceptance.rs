//! End-to-end acceptance checks, one test per criterion.
//!
//! Each test writes a single `criterion N: PASS|FAIL ...` line to stderr
//! (bypassing the test harness capture) and then asserts. Tolerances are
//! fixed here and never adjusted to the observed numbers.

use std::io::Write as _;

use rand::Rng;
use rand_distr::StandardNormal;
use widebnn::bounds::{
    kl_bound_gaussian, linear_lower_bound_construction, linear_mean_gap_bound, mc_opnorm_checks, second_moment_bound,
    BoundInputs,
};
use widebnn::counterexample::{
    build_counterexample_dataset, build_qc, run_counterexample_check, CheckSettings, CounterexampleSpec,
};
use widebnn::data::{make_two_points, Dataset};
use widebnn::harness::{mean_distance_bound, run_convergence, ExperimentConfig, ExperimentKind};
use widebnn::linalg::Matrix;
use widebnn::mfvi::{
    bias_only_elbo, elbo_estimate_with_noise, elbo_gradient_with_noise, kl_to_standard_normal, optimal_output_bias,
    paired_predictive_moments, Batch, LikelihoodSpec, MeanFieldGaussian, Output, TrainConfig,
};
use widebnn::net::{self, ActivationKind, ActivationSpec, Architecture, Layout};
use widebnn::nngp::{act_cross_moment, act_second_moment, output_variance, InputKernel};
use widebnn::rng_from_seed;
use widebnn::stats::{mean_se, non_increasing_trend};

fn report(n: usize, pass: bool, detail: &str) {
    let verdict = if pass { "PASS" } else { "FAIL" };
    let _ = writeln!(std::io::stderr(), "criterion {n:>2}: {verdict} {detail}");
}

// ---------------------------------------------------------------------------
// 1. Closed-form KL against numerical integration.

/// `KL(N(mu, s^2) || N(0, 1))` by composite Simpson integration of
/// `q (log q - log p)` over `mu +- 14 s`.
fn kl_numeric_1d(mu: f64, s: f64) -> f64 {
    const N: usize = 20_000;
    let lo = mu - 14.0 * s;
    let h = 28.0 * s / N as f64;
    let ln_2pi = (2.0 * std::f64::consts::PI).ln();
    let integrand = |t: f64| {
        let z = (t - mu) / s;
        let log_q = -0.5 * ln_2pi - s.ln() - 0.5 * z * z;
        let log_p = -0.5 * ln_2pi - 0.5 * t * t;
        log_q.exp() * (log_q - log_p)
    };
    let mut acc = integrand(lo) + integrand(lo + N as f64 * h);
    for i in 1..N {
        acc += integrand(lo + i as f64 * h) * if i % 2 == 1 { 4.0 } else { 2.0 };
    }
    acc * h / 3.0
}

#[test]
fn criterion_01_kl_closed_form() {
    let mut rng = rng_from_seed(101);
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let p = rng.random_range(1..=40);
        let mu: Vec<f64> = (0..p).map(|_| rng.sample(StandardNormal)).collect();
        let ls: Vec<f64> = (0..p).map(|_| rng.random_range(-2.0..1.0)).collect();
        let q = MeanFieldGaussian::new(mu.clone(), ls.clone()).unwrap();
        let numeric: f64 = mu.iter().zip(&ls).map(|(m, l)| kl_numeric_1d(*m, l.exp())).sum();
        worst = worst.max((kl_to_standard_normal(&q) - numeric).abs());
    }
    let pass = worst <= 1e-8;
    report(1, pass, &format!("max |closed form - integral| = {worst:.2e} (tol 1e-8)"));
    assert!(pass);
}

// ---------------------------------------------------------------------------
// 2. Pathwise gradient against central finite differences.

fn fd_relative_error(
    q: &MeanFieldGaussian,
    arch: &Architecture,
    data: &Dataset,
    lik: &LikelihoodSpec,
    noise: &[Vec<f64>],
) -> f64 {
    let h = 1e-5;
    let batch = Batch::full(data);
    let g = elbo_gradient_with_noise(q, arch, &batch, lik, noise).unwrap();
    let elbo = |q: &MeanFieldGaussian| elbo_estimate_with_noise(q, arch, &batch, lik, noise).unwrap().elbo;
    let mut pairs = Vec::new();
    for i in 0..q.len() {
        let mut plus = q.clone();
        let mut minus = q.clone();
        plus.mu[i] += h;
        minus.mu[i] -= h;
        pairs.push((g.mu[i], (elbo(&plus) - elbo(&minus)) / (2.0 * h)));
        let mut plus = q.clone();
        let mut minus = q.clone();
        plus.log_sigma[i] += h;
        minus.log_sigma[i] -= h;
        pairs.push((g.log_sigma[i], (elbo(&plus) - elbo(&minus)) / (2.0 * h)));
    }
    // Coordinates whose gradient is negligible next to the largest one are
    // compared on the scale of that largest gradient.
    let floor = 1e-3 * pairs.iter().fold(0.0f64, |a, p| a.max(p.1.abs()));
    pairs
        .iter()
        .map(|(a, f)| (a - f).abs() / a.abs().max(f.abs()).max(floor))
        .fold(0.0, f64::max)
}

#[test]
fn criterion_02_gradient_finite_differences() {
    let mut rng = rng_from_seed(202);
    let mut worst = 0.0f64;
    let mut cases = 0;
    for kind in ActivationKind::ALL {
        for depth in [1, 2] {
            for _ in 0..3 {
                let width = rng.random_range(1..=8);
                let d_in = rng.random_range(1..=3);
                let arch = Architecture::scalar(depth, width, d_in, kind).unwrap();
                let p = arch.param_count();
                let q = MeanFieldGaussian::new(
                    (0..p).map(|_| 0.7 * rng.sample::<f64, _>(StandardNormal)).collect(),
                    (0..p).map(|_| rng.random_range(-1.5..0.0)).collect(),
                )
                .unwrap();
                let n = 4;
                let x = Matrix::from_vec(n, d_in, (0..n * d_in).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap();
                let y: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
                let data = Dataset::new(x, y, "fd", 0.2).unwrap();
                let noise: Vec<Vec<f64>> = (0..3)
                    .map(|_| (0..p).map(|_| rng.sample(StandardNormal)).collect())
                    .collect();
                let lik = LikelihoodSpec::Gaussian { sigma2: 0.2 };
                worst = worst.max(fd_relative_error(&q, &arch, &data, &lik, &noise));
                cases += 1;
            }
        }
    }
    let pass = worst <= 1e-4;
    report(2, pass, &format!("{cases} nets, max relative error {worst:.2e} (tol 1e-4)"));
    assert!(pass);
}

// ---------------------------------------------------------------------------
// 3. Activation moments against Monte Carlo; identity output variance.

#[test]
fn criterion_03_nngp_moments_and_identity_variance() {
    const N: usize = 1_000_000;
    let mut rng = rng_from_seed(303);
    let z1: Vec<f64> = (0..N).map(|_| rng.sample(StandardNormal)).collect();
    let z2: Vec<f64> = (0..N).map(|_| rng.sample(StandardNormal)).collect();
    let mut worst_z = 0.0f64;
    for kind in ActivationKind::ALL {
        let act = ActivationSpec::new(kind);
        for k in [0.1, 1.0, 10.0] {
            let sk = f64::sqrt(k);
            let second: Vec<f64> = z1.iter().map(|z| act.eval(sk * z).powi(2)).collect();
            let m = mean_se(&second);
            let quad = act_second_moment(&act, k).unwrap();
            worst_z = worst_z.max((quad - m.mean).abs() / m.se);
            // Correlation 1/2 between the two arguments.
            let rho = 0.5;
            let cross: Vec<f64> = z1
                .iter()
                .zip(&z2)
                .map(|(a, b)| {
                    let u = sk * a;
                    let v = sk * (rho * a + (1.0 - rho * rho).sqrt() * b);
                    act.eval(u) * act.eval(v)
                })
                .collect();
            let m = mean_se(&cross);
            let quad = act_cross_moment(&act, k, rho * k, k).unwrap();
            worst_z = worst_z.max((quad - m.mean).abs() / m.se);
        }
    }
    let mut worst_identity = 0.0f64;
    for depth in 1..=4 {
        for x in [vec![0.0], vec![0.7], vec![1.0, -2.0], vec![0.3, 0.4, 0.5]] {
            let arch = Architecture::scalar(depth, 16, x.len(), ActivationKind::Identity).unwrap();
            let v = output_variance(&arch, &x, InputKernel::Scaled).unwrap();
            let expected = depth as f64 + 1.0 + x.iter().map(|a| a * a).sum::<f64>() / x.len() as f64;
            worst_identity = worst_identity.max((v - expected).abs() / expected);
        }
    }
    let pass = worst_z <= 4.0 && worst_identity <= 1e-12;
    report(
        3,
        pass,
        &format!("max |quad - MC|/SE = {worst_z:.2} (tol 4), identity variance rel err {worst_identity:.1e}"),
    );
    assert!(pass);
}

// ---------------------------------------------------------------------------
// 4. KL bound on the two-point dataset.

#[test]
fn criterion_04_two_points_kl_bound() {
    let data = make_two_points();
    // Hand evaluation: the optimal bias mean is 0, so the bound is
    // sum_i (y_i^2 + v(x_i)) / (2 sigma^2) with the prior variance bound
    // v(x) = L + 1 + x^2 = 3, giving 2 (1 + 3) / 0.05 = 160.
    let v = kl_bound_gaussian(&data, 1, 0.025).unwrap();
    let pass = (v - 160.0).abs() <= 1e-9;
    report(4, pass, &format!("kl_bound_gaussian = {v} (expected 160)"));
    assert!(pass);
}

// ---------------------------------------------------------------------------
// 5. KL of the counterexample posterior.

#[test]
fn criterion_05_qc_kl_identity() {
    let mut rng = rng_from_seed(505);
    let mut worst = 0.0f64;
    for _ in 0..50 {
        let kind = ActivationKind::ALL[rng.random_range(0..5)];
        let arch = Architecture::scalar(rng.random_range(1..=4), rng.random_range(1..=64), rng.random_range(1..=4), kind)
            .unwrap();
        let c = rng.random_range(0.0..500.0);
        let q = build_qc(&arch, c).unwrap();
        worst = worst.max((kl_to_standard_normal(&q) - c / 2.0).abs());
    }
    let pass = worst <= 1e-12;
    report(5, pass, &format!("max |KL - C/2| = {worst:.1e} (tol 1e-12)"));
    assert!(pass);
}

// ---------------------------------------------------------------------------
// 6. Counterexample dataset targets.

#[test]
fn criterion_06_counterexample_dataset() {
    let spec = CounterexampleSpec::default_relu(64).unwrap();
    let d = build_counterexample_dataset(&spec).unwrap();
    let pass = (d.y[0] - 8.24).abs() <= 0.02 && (d.y[1] - 11.66).abs() <= 0.02;
    report(6, pass, &format!("y = ({:.4}, {:.4}), expected (8.24, 11.66) +- 0.02", d.y[0], d.y[1]));
    assert!(pass);
}

// ---------------------------------------------------------------------------
// 7. Mean and second-moment bounds dominate Monte-Carlo gaps.

/// Scales a direction `(u, v)` in `(mu, log_sigma)` space so that the KL of
/// `N(t u, exp(2 t v))` equals `target`; KL is increasing in `t >= 0`.
fn q_with_kl(u: &[f64], v: &[f64], target: f64) -> MeanFieldGaussian {
    let at = |t: f64| {
        MeanFieldGaussian::new(u.iter().map(|a| t * a).collect(), v.iter().map(|b| t * b).collect()).unwrap()
    };
    let (mut lo, mut hi) = (0.0, 1.0);
    while kl_to_standard_normal(&at(hi)) < target {
        hi *= 2.0;
    }
    for _ in 0..100 {
        let mid = 0.5 * (lo + hi);
        if kl_to_standard_normal(&at(mid)) < target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    at(lo)
}

#[test]
fn criterion_07_bound_dominance() {
    let mut rng = rng_from_seed(707);
    let configs: Vec<Architecture> = [(1, 64), (1, 256), (2, 64), (2, 256)]
        .iter()
        .map(|&(l, m)| Architecture::scalar(l, m, 1, ActivationKind::Tanh).unwrap())
        .collect();
    let samples = 2000;
    let mut violations = 0;
    let mut min_mean_slack = f64::INFINITY;
    let mut min_second_slack = f64::INFINITY;
    for trial in 0..200 {
        let arch = &configs[trial % configs.len()];
        let layout = Layout::new(arch);
        let p = arch.param_count();
        let mut u = vec![0.0; p];
        let mut v = vec![0.0; p];
        match trial % 3 {
            // Diffuse perturbation of every factor.
            0 => {
                for i in 0..p {
                    u[i] = rng.sample(StandardNormal);
                    v[i] = 0.3 * rng.sample::<f64, _>(StandardNormal);
                }
            }
            // Aligned output weights and last hidden biases, the direction
            // that moves the mean most per unit of KL.
            1 => {
                for i in layout.output_layer().weight.range() {
                    u[i] = 1.0;
                }
                for i in layout.layers[arch.depth - 1].bias.unwrap().range() {
                    u[i] = 1.0;
                }
            }
            // First-layer weights and variances only.
            _ => {
                for i in layout.layers[0].weight.range() {
                    u[i] = rng.sample(StandardNormal);
                    v[i] = -0.5 * rng.random::<f64>();
                }
            }
        }
        let kl = rng.random_range(0.05..4.0);
        let q = q_with_kl(&u, &v, kl);
        let x = rng.random_range(-1.0f64..1.0);
        let pm = paired_predictive_moments(&q, arch, &Matrix::column(&[x]), samples, Output::Tilde, &mut rng).unwrap();
        let inputs = BoundInputs {
            m: arch.width,
            l: arch.depth,
            d_in: 1,
            x_norm: x.abs(),
            kl: kl_to_standard_normal(&q),
            alpha: 0.0,
        };
        let mean_bound = mean_distance_bound(arch, x.abs(), inputs.kl).unwrap().value;
        let second_bound = second_moment_bound(&inputs).unwrap().value;
        let mean_slack = mean_bound + 4.0 * pm.mean_diff_se[0] - pm.mean_diff[0].abs();
        let second_slack = second_bound + 4.0 * pm.second_diff_se[0] - pm.second_diff[0].abs();
        min_mean_slack = min_mean_slack.min(mean_slack);
        min_second_slack = min_second_slack.min(second_slack);
        if mean_slack < 0.0 || second_slack < 0.0 {
            violations += 1;
        }
    }
    let pass = violations == 0;
    report(
        7,
        pass,
        &format!("200 posteriors, {violations} violations, min slack mean {min_mean_slack:.3e}, second {min_second_slack:.3e}"),
    );
    assert!(pass);
}

// ---------------------------------------------------------------------------
// 8. Convergence sweep on the two-point dataset.

#[test]
fn criterion_08_two_points_convergence() {
    let mut cfg = ExperimentConfig::preset(ExperimentKind::Convergence);
    cfg.arch.widths = vec![64, 256, 1024, 4096];
    cfg.seeds = (0..5).collect();
    cfg.apply_desk();
    let r = run_convergence(&cfg).unwrap();
    let trend_ok = r.trend.as_ref().is_some_and(|t| t.pass);
    let below = r.below_bound();
    let wide_ok = r.widths.iter().filter(|w| w.width >= 1024).all(|w| w.mean <= 5e-2);
    let curve: Vec<String> = r
        .widths
        .iter()
        .map(|w| format!("M={}: mean {:.4} max {:.4} bound {:.3}", w.width, w.mean, w.max, w.bound))
        .collect();
    let pass = r.failures.is_empty() && trend_ok && below && wide_ok && r.widths.len() == 4;
    report(
        8,
        pass,
        &format!("trend {trend_ok}, below bound {below}, <=5e-2 at M>=1024 {wide_ok}; {}", curve.join("; ")),
    );
    assert!(pass);
}

// ---------------------------------------------------------------------------
// 9. Counterexample: odd activation loses the gap, relu keeps it.

#[test]
fn criterion_09_counterexample_sweep() {
    let widths = [64, 256, 1024, 4096];
    let spec = CounterexampleSpec::default_relu(64).unwrap();
    let cfg = TrainConfig::desk();
    let settings = CheckSettings::default();
    let erf = run_counterexample_check(&spec, ActivationKind::Erf, &widths, &cfg, settings).unwrap();
    let relu = run_counterexample_check(&spec, ActivationKind::Relu, &widths, &cfg, settings).unwrap();
    let groups: Vec<Vec<f64>> = erf.rows.iter().map(|r| vec![r.gap]).collect();
    let trend = non_increasing_trend(&groups);
    let first = &erf.rows[0];
    let last = &erf.rows[erf.rows.len() - 1];
    let shrinks =
        trend.sse_hypothesis <= trend.sse_opposite && last.gap + 4.0 * (first.gap_se.hypot(last.gap_se)) < first.gap;
    let persists = relu.gap_persists();
    let fmt = |rep: &widebnn::counterexample::CounterexampleReport| {
        rep.rows
            .iter()
            .map(|r| format!("{}:{:.3}", r.width, r.gap))
            .collect::<Vec<_>>()
            .join(" ")
    };
    let pass = shrinks && persists;
    report(
        9,
        pass,
        &format!(
            "erf shrinks {shrinks} [{}]; relu >= {:.3} {persists} [{}]",
            fmt(&erf),
            relu.threshold,
            fmt(&relu)
        ),
    );
    assert!(pass);
}

// ---------------------------------------------------------------------------
// 10. Affine-network lower-bound construction.

#[test]
fn criterion_10_linear_lower_bound() {
    let mut worst_forward = 0.0f64;
    let mut worst_bound = 0.0f64;
    let mut rng = rng_from_seed(1010);
    for _ in 0..30 {
        let depth = rng.random_range(1..=4);
        let width = rng.random_range(1..=32);
        let d_in = rng.random_range(1..=5);
        let kl = rng.random_range(0.0..20.0);
        let arch = Architecture::scalar(depth, width, d_in, ActivationKind::Identity).unwrap();
        let w = linear_lower_bound_construction(&arch, kl).unwrap();
        // Independent evaluation: for an affine network the predictive mean
        // is the network evaluated at the parameter means.
        let mut e1 = vec![0.0; d_in];
        e1[0] = 1.0;
        let f = net::forward(&arch, &w.q.mu, &Matrix::from_rows(&[e1.clone(), vec![0.0; d_in]]).unwrap()).unwrap();
        let forward_gap = f.get(0, 0) - f.get(1, 0);
        let c = (2.0 * kl / (depth as f64 + 1.0)).sqrt();
        let analytic = (d_in as f64).powf(-0.5) * (width as f64).powf(-(depth as f64) / 2.0) * c.powi(depth as i32 + 1);
        let scale = analytic.abs().max(1e-300);
        worst_forward = worst_forward
            .max((forward_gap - analytic).abs() / scale)
            .max((w.achieved_gap - analytic).abs() / scale)
            .max((w.kl - kl).abs());
        if depth == 1 {
            let b = linear_mean_gap_bound(width, 1, d_in, kl, &e1, &vec![0.0; d_in]).unwrap();
            worst_bound = worst_bound.max((b - analytic).abs() / scale);
        }
    }
    let pass = worst_forward <= 1e-12 && worst_bound <= 1e-12;
    report(
        10,
        pass,
        &format!("forward vs analytic {worst_forward:.1e}, bound vs analytic at L=1 {worst_bound:.1e} (tol 1e-12)"),
    );
    assert!(pass);
}

// ---------------------------------------------------------------------------
// 11. Stationarity of the optimal output-bias factor.

#[test]
fn criterion_11_optimal_bias_stationarity() {
    let mut rng = rng_from_seed(1111);
    let mut failures = 0;
    let mut smallest_drop = f64::INFINITY;
    for _ in 0..20 {
        let n = rng.random_range(1..=50);
        let y: Vec<f64> = (0..n).map(|_| 3.0 * rng.sample::<f64, _>(StandardNormal)).collect();
        let sigma2 = rng.random_range(0.01..2.0);
        let (mu_b, s2_b) = optimal_output_bias(&y, sigma2).unwrap();
        let best = bias_only_elbo(&y, sigma2, mu_b, s2_b);
        for (dm, ds) in [(1e-3, 0.0), (-1e-3, 0.0), (0.0, 1e-3), (0.0, -1e-3)] {
            let drop = best - bias_only_elbo(&y, sigma2, mu_b + dm, s2_b + ds);
            smallest_drop = smallest_drop.min(drop);
            if !(drop > 0.0) {
                failures += 1;
            }
        }
    }
    let pass = failures == 0;
    report(11, pass, &format!("80 perturbations, {failures} non-decreases, smallest drop {smallest_drop:.2e}"));
    assert!(pass);
}

// ---------------------------------------------------------------------------
// 12. Spectral-norm lemmas for Gaussian matrices.

#[test]
fn criterion_12_random_matrix_norms() {
    let mut rng = rng_from_seed(1212);
    let mut all = true;
    let mut lines = Vec::new();
    for (i, j) in [(8, 8), (64, 64), (16, 128)] {
        let r = mc_opnorm_checks(i, j, 1.0, 400, &mut rng).unwrap();
        let ok = r.mean_norm <= r.norm_bound + 4.0 * r.mean_norm_se
            && r.mean_sq_norm <= r.sq_norm_bound + 4.0 * r.mean_sq_norm_se;
        all &= ok && r.pass;
        lines.push(format!(
            "{i}x{j}: E||A|| {:.3} <= {:.3}, E||A||^2 {:.2} <= {:.2}",
            r.mean_norm, r.norm_bound, r.mean_sq_norm, r.sq_norm_bound
        ));
    }
    report(12, all, &lines.join("; "));
    assert!(all);
}
