//! Numerical evaluation of the prior-reversion bounds.
//!
//! Every bound returns a [`BoundReport`] carrying the value together with
//! all intermediate constants so that the numbers can be audited.

use std::collections::BTreeMap;
use std::fmt;
use std::io::Write;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::linalg::{norm2, Matrix};
use crate::mfvi::{
    kl_to_standard_normal, optimal_output_bias, paired_predictive_moments, LikelihoodSpec,
    MeanFieldGaussian, Output,
};
use crate::net::{self, Architecture, Layout, Tape};
use crate::stats::mean_se;
use crate::{Error, Result};

/// Symbols shared by the mean and second-moment bounds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundInputs {
    /// Hidden width.
    pub m: usize,
    /// Number of hidden layers.
    pub l: usize,
    pub d_in: usize,
    /// Euclidean norm of the input.
    pub x_norm: f64,
    /// `KL(Q, P)`.
    pub kl: f64,
    /// Even-part constant of the activation.
    pub alpha: f64,
}

impl BoundInputs {
    pub fn validate(&self) -> Result<()> {
        if self.m == 0 || self.l == 0 || self.d_in == 0 {
            return Err(Error::InvalidArgument("M, L and d_in must be at least 1".into()));
        }
        if !(self.x_norm >= 0.0 && self.kl >= 0.0) || !self.alpha.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "x_norm and kl must be nonnegative, got {} and {}",
                self.x_norm, self.kl
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FormulaId {
    MeanOneHiddenLayer,
    MeanDeep,
    MeanDifference,
    SecondMoment,
}

impl fmt::Display for FormulaId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            FormulaId::MeanOneHiddenLayer => "mean_1hl",
            FormulaId::MeanDeep => "mean_deep",
            FormulaId::MeanDifference => "mean_diff",
            FormulaId::SecondMoment => "second_moment",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundReport {
    pub formula: FormulaId,
    pub value: f64,
    pub constants: BTreeMap<String, f64>,
    pub inputs: BoundInputs,
}

impl BoundReport {
    fn new(formula: FormulaId, value: f64, inputs: BoundInputs, constants: &[(&str, f64)]) -> Self {
        Self {
            formula,
            value,
            constants: constants.iter().map(|(k, v)| (k.to_string(), *v)).collect(),
            inputs,
        }
    }
}

/// Writes reports as `formula_id,value,<constant columns...>`; the constant
/// columns are the union of names across reports, blank where absent.
pub fn write_reports_csv<W: Write>(reports: &[BoundReport], w: W) -> Result<()> {
    let mut names: Vec<&String> = reports.iter().flat_map(|r| r.constants.keys()).collect();
    names.sort();
    names.dedup();
    let mut wr = csv::Writer::from_writer(w);
    let mut header = vec!["formula_id".to_string(), "value".to_string()];
    header.extend(names.iter().map(|s| s.to_string()));
    wr.write_record(&header)?;
    for r in reports {
        let mut rec = vec![r.formula.to_string(), r.value.to_string()];
        rec.extend(
            names
                .iter()
                .map(|n| r.constants.get(*n).map(|v| v.to_string()).unwrap_or_default()),
        );
        wr.write_record(&rec)?;
    }
    wr.flush()?;
    Ok(())
}

/// `(2/3) sqrt((1 + ||x||^2/d_in) / M) KL` for one hidden layer.
pub fn mean_bound_1hl(inp: &BoundInputs) -> Result<BoundReport> {
    inp.validate()?;
    if inp.l != 1 {
        return Err(Error::InvalidArgument(format!(
            "the one-hidden-layer mean bound needs L = 1, got {}",
            inp.l
        )));
    }
    let c = 2.0 / 3.0;
    let v = c * ((1.0 + inp.x_norm.powi(2) / inp.d_in as f64) / inp.m as f64).sqrt() * inp.kl;
    Ok(BoundReport::new(FormulaId::MeanOneHiddenLayer, v, *inp, &[("c", c)]))
}

/// Universal constants of the deep mean bound.
pub const MEAN_C1: f64 = 4.0;
pub const MEAN_C2: f64 = 6.0;

fn deep_mean_tail(inp: &BoundInputs) -> f64 {
    let lf = inp.l as f64;
    MEAN_C1
        * MEAN_C2.powi(inp.l as i32 - 1)
        * lf
        * inp.kl
        * (2.0 * inp.kl).powf(0.5 * (lf - 1.0)).max(1.0)
        / (inp.m as f64).sqrt()
}

/// `c1 c2^{L-1} L (|alpha| + 1 + ||x||/sqrt(d_in)) / sqrt(M) KL max((2KL)^{(L-1)/2}, 1)`.
pub fn mean_bound_deep(inp: &BoundInputs) -> Result<BoundReport> {
    inp.validate()?;
    let shape = inp.alpha.abs() + 1.0 + inp.x_norm / (inp.d_in as f64).sqrt();
    let v = deep_mean_tail(inp) * shape;
    Ok(BoundReport::new(
        FormulaId::MeanDeep,
        v,
        *inp,
        &[("c1", MEAN_C1), ("c2", MEAN_C2), ("input_term", shape)],
    ))
}

/// Bound on `||E f~(x) - E f~(x')||`, the sum of the two single-point bounds.
pub fn mean_diff_bound(inp: &BoundInputs, x2_norm: f64) -> Result<BoundReport> {
    inp.validate()?;
    if !(x2_norm >= 0.0) {
        return Err(Error::InvalidArgument("x2_norm must be nonnegative".into()));
    }
    let shape = 2.0 * inp.alpha.abs() + 2.0 + (inp.x_norm + x2_norm) / (inp.d_in as f64).sqrt();
    let v = deep_mean_tail(inp) * shape;
    Ok(BoundReport::new(
        FormulaId::MeanDifference,
        v,
        *inp,
        &[("c1", MEAN_C1), ("c2", MEAN_C2), ("input_term", shape), ("x2_norm", x2_norm)],
    ))
}

/// Constants entering the second-moment bound.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SecondMomentConstants {
    pub c1: f64,
    pub c_alpha: f64,
    pub eta: f64,
    pub gamma: f64,
    pub rho: f64,
}

/// `eta` for the squared spectral norm of an `I x J` standard Gaussian
/// matrix with `max(I, J) = n`.
pub fn eta(n: usize) -> f64 {
    let s2pi = (2.0 * std::f64::consts::PI).sqrt();
    if n >= 36 {
        (37.0 + 6.0 * s2pi) / 9.0
    } else {
        4.0 * (2.0 + s2pi)
    }
}

pub fn second_moment_constants(alpha: f64, m: usize) -> SecondMomentConstants {
    let big = m >= 36;
    let c_alpha = if alpha == 0.0 { 3.0 } else { 4.0 };
    let eta = eta(m);
    let gamma = match (alpha == 0.0, big) {
        (true, true) => (2.0 / 3.0) * (13.0 + 2.0 * 43f64.sqrt()),
        (true, false) => 2.0 * (6.0 + 38f64.sqrt()),
        (false, true) => 28.0 + 793f64.sqrt(),
        (false, false) => 48.0 + 2353f64.sqrt(),
    };
    SecondMomentConstants {
        c1: 16.0 + 25.0 * std::f64::consts::SQRT_2,
        c_alpha,
        eta,
        gamma,
        rho: (c_alpha * eta).max(gamma),
    }
}

/// `c1 sqrt(L) rho^L (alpha^2 + 1 + ||x||^2/d_in) / sqrt(M) sqrt(KL) max(2KL, 1)^{L+1/2}`.
pub fn second_moment_bound(inp: &BoundInputs) -> Result<BoundReport> {
    inp.validate()?;
    let c = second_moment_constants(inp.alpha, inp.m);
    let lf = inp.l as f64;
    let shape = inp.alpha.powi(2) + 1.0 + inp.x_norm.powi(2) / inp.d_in as f64;
    let v = c.c1 * lf.sqrt() * c.rho.powi(inp.l as i32) * shape / (inp.m as f64).sqrt()
        * inp.kl.sqrt()
        * (2.0 * inp.kl).max(1.0).powf(lf + 0.5);
    Ok(BoundReport::new(
        FormulaId::SecondMoment,
        v,
        *inp,
        &[
            ("c1", c.c1),
            ("c_alpha", c.c_alpha),
            ("eta", c.eta),
            ("gamma", c.gamma),
            ("rho", c.rho),
            ("input_term", shape),
        ],
    ))
}

/// `V_P[f(x)] <= L + 1 + ||x||^2 / d_in` (equality for identity activation).
pub fn prior_variance_bound(l: usize, x: &[f64]) -> f64 {
    (l + 1) as f64 + x.iter().map(|v| v * v).sum::<f64>() / x.len() as f64
}

/// `((L+1) N + sum_n (y_n^2 + ||x_n||^2 / d_in)) / (2 sigma2)`.
pub fn kl_bound_gaussian(data: &Dataset, l: usize, sigma2: f64) -> Result<f64> {
    if !(sigma2 > 0.0) {
        return Err(Error::InvalidArgument(format!("noise variance must be positive, got {sigma2}")));
    }
    let s: f64 = (0..data.len())
        .map(|n| data.y[n].powi(2) + prior_variance_bound(l, data.x.row(n)))
        .sum();
    Ok(s / (2.0 * sigma2))
}

/// Coefficients of `log p(y | f) >= a f^2 + b f + c`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Quadratic {
    pub a: f64,
    pub b: f64,
    pub c: f64,
}

impl Quadratic {
    pub fn eval(&self, f: f64) -> f64 {
        self.a * f * f + self.b * f + self.c
    }
}

pub fn quadratic_lower_bound(lik: &LikelihoodSpec, y: f64) -> Result<Quadratic> {
    lik.validate()?;
    lik.check_target(y)?;
    Ok(match *lik {
        LikelihoodSpec::Gaussian { sigma2 } => Quadratic {
            a: -1.0 / (2.0 * sigma2),
            b: y / sigma2,
            c: -y * y / (2.0 * sigma2) - 0.5 * (2.0 * std::f64::consts::PI * sigma2).ln(),
        },
        LikelihoodSpec::StudentT { nu } => Quadratic {
            a: -(nu + 1.0) / (2.0 * nu),
            b: (nu + 1.0) * y / nu,
            c: crate::mfvi::student_t_log_normalizer(nu) - (nu + 1.0) * y * y / (2.0 * nu),
        },
        LikelihoodSpec::Logistic => Quadratic {
            a: -0.125,
            b: if y == 1.0 { 0.5 } else { -0.5 },
            c: -std::f64::consts::LN_2,
        },
    })
}

/// `C N - sum_n (a_n V(x_n) + c_n)` with `C = sup_f log p` and
/// `V(x) = L + 1 + ||x||^2 / d_in`.
pub fn kl_bound_general(data: &Dataset, l: usize, lik: &LikelihoodSpec) -> Result<f64> {
    let ceiling = lik.log_density_ceiling();
    let mut acc = 0.0;
    for n in 0..data.len() {
        let q = quadratic_lower_bound(lik, data.y[n])?;
        acc += ceiling - (q.a * prior_variance_bound(l, data.x.row(n)) + q.c);
    }
    Ok(acc)
}

/// Monte-Carlo estimate with its standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct McValue {
    pub value: f64,
    pub std_error: f64,
}

/// Analytic form of the optimal-bias KL bound given per-point prior second
/// moments `E_P[(f - b)^2]` of the bias-free output.
pub fn kl_bound_from_prior_moments(y: &[f64], second_moments: &[f64], sigma2: f64) -> Result<f64> {
    if y.len() != second_moments.len() {
        return Err(Error::ShapeMismatch("one second moment per target".into()));
    }
    let (mu_b, s2_b) = optimal_output_bias(y, sigma2)?;
    let fit: f64 = y
        .iter()
        .zip(second_moments)
        .map(|(yn, v)| (yn - mu_b).powi(2) + s2_b + v)
        .sum();
    Ok(fit / (2.0 * sigma2) + 0.5 * (mu_b * mu_b + s2_b - s2_b.ln()))
}

/// `(1/(2 sigma2)) sum_n E_P~[(y_n - f(x_n))^2] + (mu_b^2 + sigma_b^2 - log sigma_b^2)/2`
/// where `P~` is the prior with the optimal output-bias distribution. The
/// prior second moment of the bias-free output is estimated from `samples`
/// prior draws.
pub fn kl_bound_empirical<R: Rng + ?Sized>(
    data: &Dataset,
    arch: &Architecture,
    sigma2: f64,
    samples: usize,
    rng: &mut R,
) -> Result<McValue> {
    if samples < 2 {
        return Err(Error::InvalidArgument("need S >= 2 prior samples".into()));
    }
    if !arch.include_final_bias || arch.d_out != 1 {
        return Err(Error::InvalidArchitecture(
            "the optimal-bias bound needs a scalar output with a final bias".into(),
        ));
    }
    if data.d_in() != arch.d_in {
        return Err(Error::ShapeMismatch("dataset and architecture d_in differ".into()));
    }
    let (mu_b, s2_b) = optimal_output_bias(&data.y, sigma2)?;
    let layout = Layout::new(arch);
    let bias_idx = layout.output_layer().bias.expect("final bias present").offset;
    let mut tape = Tape::new(arch);
    let mut theta = vec![0.0; layout.total];
    // Per draw: (1/(2 sigma2)) sum_n (f_n - b)^2, whose mean is the variance part.
    let mut draws = Vec::with_capacity(samples);
    for _ in 0..samples {
        for t in theta.iter_mut() {
            *t = rng.sample(StandardNormal);
        }
        theta[bias_idx] = 0.0;
        let mut s = 0.0;
        for n in 0..data.len() {
            net::forward_point(arch, &layout, &theta, data.x.row(n), &mut tape);
            s += tape.output()[0].powi(2);
        }
        draws.push(s / (2.0 * sigma2));
    }
    let v = mean_se(&draws);
    let fit: f64 = data.y.iter().map(|y| (y - mu_b).powi(2) + s2_b).sum();
    Ok(McValue {
        value: fit / (2.0 * sigma2) + v.mean + 0.5 * (mu_b * mu_b + s2_b - s2_b.ln()),
        std_error: v.se,
    })
}

/// `(1/(2 sigma2)) sum_n (2 |y_n| |dmean_n| + |dsecond_n|)` where the deltas
/// between `q` and the prior are paired Monte-Carlo estimates.
pub fn kl_gap_certificate<R: Rng + ?Sized>(
    q: &MeanFieldGaussian,
    arch: &Architecture,
    data: &Dataset,
    sigma2: f64,
    samples: usize,
    rng: &mut R,
) -> Result<McValue> {
    if !(sigma2 > 0.0) {
        return Err(Error::InvalidArgument("noise variance must be positive".into()));
    }
    let pm = paired_predictive_moments(q, arch, &data.x, samples, Output::Full, rng)?;
    let mut value = 0.0;
    let mut var = 0.0;
    for n in 0..data.len() {
        let w = 2.0 * data.y[n].abs();
        value += w * pm.mean_diff[n].abs() + pm.second_diff[n].abs();
        var += (w * pm.mean_diff_se[n]).powi(2) + pm.second_diff_se[n].powi(2);
    }
    Ok(McValue {
        value: value / (2.0 * sigma2),
        std_error: var.sqrt() / (2.0 * sigma2),
    })
}

/// `d_in^{-1/2} M^{-L/2} (2 KL / (L+1))^{(L+1)/2} ||x - x'||` for affine networks.
pub fn linear_mean_gap_bound(m: usize, l: usize, d_in: usize, kl: f64, x: &[f64], x2: &[f64]) -> Result<f64> {
    if x.len() != x2.len() {
        return Err(Error::ShapeMismatch("inputs differ in length".into()));
    }
    if !(kl >= 0.0) {
        return Err(Error::InvalidArgument("kl must be nonnegative".into()));
    }
    let diff: Vec<f64> = x.iter().zip(x2).map(|(a, b)| a - b).collect();
    let lf = l as f64;
    Ok((d_in as f64).powf(-0.5) * (m as f64).powf(-0.5 * lf) * (2.0 * kl / (lf + 1.0)).powf(0.5 * (lf + 1.0)) * norm2(&diff))
}

/// Lower-bound witness for affine networks.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearLowerBound {
    pub q: MeanFieldGaussian,
    /// Mean of the single nonzero weight entry in every layer.
    pub c: f64,
    /// `E f(e_1) - E f(0)` computed by a forward pass through the means.
    pub achieved_gap: f64,
    /// `d_in^{-1/2} M^{-L/2} c^{L+1}`.
    pub analytic_gap: f64,
    pub kl: f64,
}

/// Builds `Q` with the `(1,1)` weight mean of every layer set to
/// `c = sqrt(2 KL / (L+1))`, everything else at the prior, and evaluates the
/// mean gap between `x = e_1` and `x' = 0`. For an affine network the
/// expected output is the forward pass through the means.
pub fn linear_lower_bound_construction(arch: &Architecture, kl: f64) -> Result<LinearLowerBound> {
    if arch.activation.kind != net::ActivationKind::Identity {
        return Err(Error::InvalidArgument("the linear construction needs identity activation".into()));
    }
    if !(kl >= 0.0) {
        return Err(Error::InvalidArgument("kl must be nonnegative".into()));
    }
    let lf = arch.depth as f64;
    let c = (2.0 * kl / (lf + 1.0)).sqrt();
    let layout = Layout::new(arch);
    let mut q = MeanFieldGaussian::prior(arch);
    for layer in &layout.layers {
        q.mu[layer.weight.offset] = c;
    }
    let mut e1 = vec![0.0; arch.d_in];
    e1[0] = 1.0;
    let x = Matrix::from_rows(&[e1, vec![0.0; arch.d_in]])?;
    let f = net::forward(arch, &q.mu, &x)?;
    let achieved_gap = f.get(0, 0) - f.get(1, 0);
    let analytic_gap = (arch.d_in as f64).powf(-0.5) * (arch.width as f64).powf(-0.5 * lf) * c.powi(arch.depth as i32 + 1);
    Ok(LinearLowerBound {
        kl: kl_to_standard_normal(&q),
        q,
        c,
        achieved_gap,
        analytic_gap,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamBoundCheck {
    pub name: String,
    pub lhs: f64,
    pub rhs: f64,
    /// `rhs - lhs`.
    pub slack: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamBoundReport {
    pub kl: f64,
    pub checks: Vec<ParamBoundCheck>,
}

impl ParamBoundReport {
    pub fn all_pass(&self) -> bool {
        self.checks.iter().all(|c| c.pass)
    }
}

fn check(name: impl Into<String>, lhs: f64, rhs: f64) -> ParamBoundCheck {
    // Relative floating-point allowance for equality cases.
    let tol = 1e-12 * rhs.abs().max(1.0);
    ParamBoundCheck {
        name: name.into(),
        lhs,
        rhs,
        slack: rhs - lhs,
        pass: lhs <= rhs + tol,
    }
}

/// Checks the parameter-norm consequences of a KL budget:
///
/// - `||mu||^2 <= 2 KL`
/// - `||sigma - 1||^2 <= 2 KL`
/// - `sigma_max <= 1 + sqrt(2 KL)`
/// - `||sigma^2 - 1||^2 <= (2 + sqrt(2 KL))^2 2 KL`
/// - per layer: `max Var W + max Var b + max (E b)^2 <= (sqrt 2 + sqrt(2 KL))^2`
pub fn verify_param_bounds(q: &MeanFieldGaussian, arch: &Architecture) -> Result<ParamBoundReport> {
    verify_param_bounds_with_kl(q, arch, kl_to_standard_normal(q))
}

/// [`verify_param_bounds`] against a caller-supplied KL value.
pub fn verify_param_bounds_with_kl(q: &MeanFieldGaussian, arch: &Architecture, kl: f64) -> Result<ParamBoundReport> {
    q.check_arch(arch)?;
    if !(kl >= 0.0) {
        return Err(Error::InvalidArgument(format!("kl must be nonnegative, got {kl}")));
    }
    let k = (2.0 * kl).sqrt();
    let sigma = q.sigma();
    let mu2: f64 = q.mu.iter().map(|v| v * v).sum();
    let s1: f64 = sigma.iter().map(|s| (s - 1.0).powi(2)).sum();
    let smax = sigma.iter().cloned().fold(0.0, f64::max);
    let s2: f64 = sigma.iter().map(|s| (s * s - 1.0).powi(2)).sum();
    let mut checks = vec![
        check("mean_norm", mu2, 2.0 * kl),
        check("sigma_dev_norm", s1, 2.0 * kl),
        check("sigma_max", smax, 1.0 + k),
        check("variance_dev_norm", s2, (2.0 + k).powi(2) * 2.0 * kl),
    ];
    let layout = Layout::new(arch);
    let budget = (std::f64::consts::SQRT_2 + k).powi(2);
    for (l, layer) in layout.layers.iter().enumerate() {
        let vw = layer.weight.range().map(|i| sigma[i] * sigma[i]).fold(0.0, f64::max);
        let (vb, mb) = match layer.bias {
            Some(b) => (
                b.range().map(|i| sigma[i] * sigma[i]).fold(0.0, f64::max),
                b.range().map(|i| q.mu[i] * q.mu[i]).fold(0.0, f64::max),
            ),
            None => (0.0, 0.0),
        };
        checks.push(check(format!("layer_{}", l + 1), vw + vb + mb, budget));
    }
    Ok(ParamBoundReport { kl, checks })
}

/// Monte-Carlo check of the spectral-norm moment bounds for an `I x J`
/// matrix with i.i.d. `N(0, sigma^2)` entries:
/// `E||A|| <= 2 sigma sqrt(max(I,J))` and `E||A||^2 <= eta sigma^2 max(I,J)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OpNormReport {
    pub rows: usize,
    pub cols: usize,
    pub sigma: f64,
    pub trials: usize,
    pub mean_norm: f64,
    pub mean_norm_se: f64,
    pub norm_bound: f64,
    pub mean_sq_norm: f64,
    pub mean_sq_norm_se: f64,
    pub sq_norm_bound: f64,
    pub eta: f64,
    pub pass: bool,
}

pub fn mc_opnorm_checks<R: Rng + ?Sized>(i: usize, j: usize, sigma: f64, trials: usize, rng: &mut R) -> Result<OpNormReport> {
    if trials < 30 {
        return Err(Error::InvalidArgument("need at least 30 trials".into()));
    }
    if i == 0 || j == 0 || !(sigma >= 0.0) {
        return Err(Error::InvalidArgument("matrix dimensions and sigma must be positive".into()));
    }
    let mut norms = Vec::with_capacity(trials);
    for _ in 0..trials {
        let a = nalgebra::DMatrix::<f64>::from_fn(i, j, |_, _| sigma * rng.sample::<f64, _>(StandardNormal));
        let s = a.singular_values().iter().cloned().fold(0.0, f64::max);
        norms.push(s);
    }
    let sq: Vec<f64> = norms.iter().map(|v| v * v).collect();
    let m1 = mean_se(&norms);
    let m2 = mean_se(&sq);
    let n = i.max(j) as f64;
    let e = eta(i.max(j));
    let norm_bound = 2.0 * sigma * n.sqrt();
    let sq_norm_bound = e * sigma * sigma * n;
    let pass = m1.mean <= norm_bound + 4.0 * m1.se && m2.mean <= sq_norm_bound + 4.0 * m2.se;
    Ok(OpNormReport {
        rows: i,
        cols: j,
        sigma,
        trials,
        mean_norm: m1.mean,
        mean_norm_se: m1.se,
        norm_bound,
        mean_sq_norm: m2.mean,
        mean_sq_norm_se: m2.se,
        sq_norm_bound,
        eta: e,
        pass,
    })
}
