//! Counterexample to prior reversion for activations that are not odd plus
//! a constant, and the matching non-improvability family for odd ones.
//!
//! For an activation with a nonconstant even part, the infinite-width mean
//! `lambda(x)` of a last-hidden-layer unit varies with `x`. Shifting every
//! output-weight mean to `sqrt(C/M)` gives a distribution `Q^C` with
//! `KL = C/2` whose predictive mean is `sqrt(C) lambda_M(x)`, so a dataset
//! with targets `sqrt(C) lambda(x)` cannot be ignored by the optimum.

use std::io::Write;

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::linalg::{norm2, Matrix};
use crate::mfvi::{
    elbo_estimate, kl_to_standard_normal, optimal_output_bias, train, LikelihoodSpec,
    MeanFieldGaussian, TrainConfig,
};
use crate::net::{self, ActivationKind, Architecture, Layout, Tape};
use crate::nngp::{act_deriv_mean, diag_recursion, lambda_fn, output_variance, InputKernel};
use crate::quadrature::NormalRule;
use crate::stats::{mean_se, MeanSe};
use crate::{rng_from_seed, Error, Result};

/// Noise variance of the default two-point dataset; `C` is its inverse.
pub const DEFAULT_NOISE_SIGMA2: f64 = 2.34e-3;

/// Separations `|lambda(x) - lambda(x')|` below this count as zero.
pub const MIN_SEPARATION: f64 = 1e-12;

/// Two inputs, an architecture and the budget scale `C`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CounterexampleSpec {
    pub arch: Architecture,
    pub c: f64,
    pub x: Vec<f64>,
    pub x2: Vec<f64>,
}

impl CounterexampleSpec {
    /// Validates the inputs and that `lambda` separates them.
    pub fn new(arch: Architecture, c: f64, x: Vec<f64>, x2: Vec<f64>) -> Result<Self> {
        arch.validate()?;
        if !(c > 0.0 && c.is_finite()) {
            return Err(Error::InvalidArgument(format!("C must be positive, got {c}")));
        }
        if x.len() != arch.d_in || x2.len() != arch.d_in {
            return Err(Error::ShapeMismatch("inputs must have d_in entries".into()));
        }
        let spec = Self { arch, c, x, x2 };
        let sep = spec.lambda_gap()?;
        if sep <= MIN_SEPARATION {
            return Err(Error::NoSeparation(sep));
        }
        Ok(spec)
    }

    /// Relu, one hidden layer, `x = 0`, `x' = 1`, `C = 1 / 2.34e-3`.
    pub fn default_relu(width: usize) -> Result<Self> {
        let arch = Architecture::scalar(1, width, 1, ActivationKind::Relu)?;
        Self::new(arch, 1.0 / DEFAULT_NOISE_SIGMA2, vec![0.0], vec![1.0])
    }

    /// `(lambda(x), lambda(x'))`.
    pub fn lambdas(&self) -> Result<(f64, f64)> {
        Ok((lambda_fn(&self.arch, &self.x)?, lambda_fn(&self.arch, &self.x2)?))
    }

    /// `|lambda(x) - lambda(x')|`.
    pub fn lambda_gap(&self) -> Result<f64> {
        let (a, b) = self.lambdas()?;
        Ok((a - b).abs())
    }

    /// `beta = sqrt(2) |lambda(x) - lambda(x')|`.
    pub fn beta(&self) -> Result<f64> {
        Ok(std::f64::consts::SQRT_2 * self.lambda_gap()?)
    }

    /// Ideal predictor gap `sqrt(C) |lambda(x) - lambda(x')|`.
    pub fn target_gap(&self) -> Result<f64> {
        Ok(self.c.sqrt() * self.lambda_gap()?)
    }

    /// Floor the trained mean gap is required to stay above: half the
    /// ideal predictor gap.
    pub fn gap_threshold(&self) -> Result<f64> {
        Ok(0.5 * self.target_gap()?)
    }

    fn inputs(&self) -> Matrix {
        Matrix::from_rows(&[self.x.clone(), self.x2.clone()]).expect("equal lengths checked")
    }
}

/// The prior with every output-weight mean set to `sqrt(C/M)`.
pub fn build_qc(arch: &Architecture, c: f64) -> Result<MeanFieldGaussian> {
    arch.validate()?;
    if !(c >= 0.0 && c.is_finite()) {
        return Err(Error::InvalidArgument(format!("C must be nonnegative, got {c}")));
    }
    let layout = Layout::new(arch);
    let mut q = MeanFieldGaussian::prior(arch);
    let m = (c / arch.width as f64).sqrt();
    for i in layout.output_layer().weight.range() {
        q.mu[i] = m;
    }
    Ok(q)
}

/// Two points `(x, sqrt(C) lambda(x))`, `(x', sqrt(C) lambda(x'))` with noise
/// variance `1/C`.
pub fn build_counterexample_dataset(spec: &CounterexampleSpec) -> Result<Dataset> {
    let (l1, l2) = spec.lambdas()?;
    if (l1 - l2).abs() <= MIN_SEPARATION {
        return Err(Error::NoSeparation((l1 - l2).abs()));
    }
    let s = spec.c.sqrt();
    Dataset::new(spec.inputs(), vec![s * l1, s * l2], "counterexample", 1.0 / spec.c)
}

/// `sqrt(C) beta / sqrt(2) - sqrt(2) sqrt(sigma2 C + kappa(x) + kappa(x') + beta^2)`,
/// a lower bound on the mean gap of any distribution whose ELBO beats `Q^C`
/// once the width is large. May be negative.
pub fn mean_gap_lower_bound(c: f64, sigma2: f64, beta: f64, kappa_x: f64, kappa_x2: f64) -> Result<f64> {
    if [c, sigma2, beta, kappa_x, kappa_x2].iter().any(|v| !(*v >= 0.0)) {
        return Err(Error::InvalidArgument("all inputs must be nonnegative".into()));
    }
    let s2 = std::f64::consts::SQRT_2;
    Ok(c.sqrt() * beta / s2 - s2 * (sigma2 * c + kappa_x + kappa_x2 + beta * beta).sqrt())
}

/// [`mean_gap_lower_bound`] with `sigma2 = 1/C` and NNGP output variances.
pub fn spec_gap_lower_bound(spec: &CounterexampleSpec) -> Result<f64> {
    let kx = output_variance(&spec.arch, &spec.x, InputKernel::Scaled)?;
    let kx2 = output_variance(&spec.arch, &spec.x2, InputKernel::Scaled)?;
    mean_gap_lower_bound(spec.c, 1.0 / spec.c, spec.beta()?, kx, kx2)
}

/// Monte-Carlo `E_q[f(x)] - E_q[f(x')]` with both inputs sharing each draw.
pub fn mean_gap<R: Rng + ?Sized>(
    q: &MeanFieldGaussian,
    arch: &Architecture,
    x: &[f64],
    x2: &[f64],
    samples: usize,
    rng: &mut R,
) -> Result<MeanSe> {
    q.check_arch(arch)?;
    if samples < 2 {
        return Err(Error::InvalidArgument("mean gap needs S >= 2".into()));
    }
    if x.len() != arch.d_in || x2.len() != arch.d_in {
        return Err(Error::ShapeMismatch("inputs must have d_in entries".into()));
    }
    let layout = Layout::new(arch);
    let mut tape = Tape::new(arch);
    let sigma = q.sigma();
    let mut theta = vec![0.0; q.len()];
    let mut diffs = Vec::with_capacity(samples);
    for _ in 0..samples {
        for (t, (m, s)) in theta.iter_mut().zip(q.mu.iter().zip(&sigma)) {
            *t = m + s * rng.sample::<f64, _>(StandardNormal);
        }
        net::forward_point(arch, &layout, &theta, x, &mut tape);
        let a = tape.output()[0];
        net::forward_point(arch, &layout, &theta, x2, &mut tape);
        diffs.push(a - tape.output()[0]);
    }
    Ok(mean_se(&diffs))
}

/// Per-width outcome of the counterexample experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CounterexampleRow {
    pub width: usize,
    /// `|E_q[f(x)] - E_q[f(x')]|` for the trained `q`.
    pub gap: f64,
    pub gap_se: f64,
    pub elbo_trained: f64,
    pub elbo_qc: f64,
    pub elbo_prior_optbias: f64,
    pub final_kl: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CounterexampleReport {
    pub fit_activation: ActivationKind,
    pub c: f64,
    pub target_gap: f64,
    pub threshold: f64,
    pub rows: Vec<CounterexampleRow>,
}

impl CounterexampleReport {
    pub const CSV_HEADER: [&'static str; 5] = ["width", "gap", "elbo_trained", "elbo_qc", "elbo_prior_optbias"];

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        wr.write_record(Self::CSV_HEADER)?;
        for r in &self.rows {
            wr.serialize((r.width, r.gap, r.elbo_trained, r.elbo_qc, r.elbo_prior_optbias))?;
        }
        wr.flush()?;
        Ok(())
    }

    /// Whether the trained gap stays at or above the threshold at every width.
    pub fn gap_persists(&self) -> bool {
        !self.rows.is_empty() && self.rows.iter().all(|r| r.gap >= self.threshold)
    }

    /// Whether the trained gap at the largest width is at or above the threshold.
    pub fn gap_persists_at_largest(&self) -> bool {
        self.rows
            .iter()
            .max_by_key(|r| r.width)
            .is_some_and(|r| r.gap >= self.threshold)
    }
}

/// Settings for [`run_counterexample_check`] beyond the training schedule.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CheckSettings {
    /// Draws used for mean gaps and ELBO estimates.
    pub eval_samples: usize,
    pub seed: u64,
}

impl Default for CheckSettings {
    fn default() -> Self {
        Self {
            eval_samples: 1000,
            seed: 0,
        }
    }
}

/// Trains on the counterexample dataset at each width with `fit_activation`
/// and reports the mean gap and the three ELBOs.
pub fn run_counterexample_check(
    spec: &CounterexampleSpec,
    fit_activation: ActivationKind,
    widths: &[usize],
    cfg: &TrainConfig,
    settings: CheckSettings,
) -> Result<CounterexampleReport> {
    if widths.is_empty() {
        return Err(Error::Config("width list must be nonempty".into()));
    }
    if settings.eval_samples < 2 {
        return Err(Error::Config("eval_samples must be at least 2".into()));
    }
    cfg.validate()?;
    let data = build_counterexample_dataset(spec)?;
    let lik = LikelihoodSpec::Gaussian {
        sigma2: data.noise_sigma2,
    };
    let rows = widths
        .par_iter()
        .map(|&width| {
            let arch = spec.arch.with_width(width).with_activation(fit_activation);
            let cell_cfg = cfg.with_seed(cell_seed(cfg.seed, width as u64, 0));
            let (q, history) = train(&arch, &data, &lik, &cell_cfg)?;
            let mut rng = rng_from_seed(cell_seed(settings.seed, width as u64, 1));
            let g = mean_gap(&q, &arch, &spec.x, &spec.x2, settings.eval_samples, &mut rng)?;
            let s = settings.eval_samples;
            let elbo_trained = elbo_estimate(&q, &arch, &data, &lik, s, &mut rng)?.elbo;
            let qc = build_qc(&arch, spec.c)?;
            let elbo_qc = elbo_estimate(&qc, &arch, &data, &lik, s, &mut rng)?.elbo;
            let pb = prior_with_optimal_bias(&arch, &data)?;
            let elbo_prior_optbias = elbo_estimate(&pb, &arch, &data, &lik, s, &mut rng)?.elbo;
            Ok(CounterexampleRow {
                width,
                gap: g.mean.abs(),
                gap_se: g.se,
                elbo_trained,
                elbo_qc,
                elbo_prior_optbias,
                final_kl: history.last().map_or(f64::NAN, |r| r.kl),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(CounterexampleReport {
        fit_activation,
        c: spec.c,
        target_gap: spec.target_gap()?,
        threshold: spec.gap_threshold()?,
        rows,
    })
}

/// The prior with the output bias replaced by its optimal Gaussian factor.
pub fn prior_with_optimal_bias(arch: &Architecture, data: &Dataset) -> Result<MeanFieldGaussian> {
    let (mu_b, s2_b) = optimal_output_bias(&data.y, data.noise_sigma2)?;
    let layout = Layout::new(arch);
    let b = layout
        .output_layer()
        .bias
        .ok_or_else(|| Error::InvalidArchitecture("a final bias is required".into()))?;
    let mut q = MeanFieldGaussian::prior(arch);
    q.mu[b.offset] = mu_b;
    q.log_sigma[b.offset] = 0.5 * s2_b.ln();
    Ok(q)
}

/// Deterministic per-cell seed from a base seed and two cell coordinates.
pub fn cell_seed(base: u64, a: u64, b: u64) -> u64 {
    // SplitMix64 finalizer over a simple combination.
    let mut z = base
        .wrapping_add(a.wrapping_mul(0x9E37_79B9_7F4A_7C15))
        .wrapping_add(b.wrapping_mul(0xD1B5_4A32_D192_ED03));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Builds `Q_M`: the prior with the last hidden bias means and the output
/// weight means all equal to `sqrt(K/M)`, so that `KL(Q_M, P) = K`.
pub fn build_odd_family_member(arch: &Architecture, k: f64) -> Result<MeanFieldGaussian> {
    arch.validate()?;
    if !(k >= 0.0 && k.is_finite()) {
        return Err(Error::InvalidArgument(format!("K must be nonnegative, got {k}")));
    }
    let layout = Layout::new(arch);
    let mu = (k / arch.width as f64).sqrt();
    let mut q = MeanFieldGaussian::prior(arch);
    let last_hidden = &layout.layers[arch.depth - 1];
    for i in last_hidden.bias.expect("hidden layers carry biases").range() {
        q.mu[i] = mu;
    }
    for i in layout.output_layer().weight.range() {
        q.mu[i] = mu;
    }
    Ok(q)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OddFamilyRow {
    pub width: usize,
    pub kl: f64,
    /// `sqrt(M) |E f(x) - E f(x')|` under `Q_M`.
    pub scaled_gap: f64,
    pub scaled_gap_se: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OddFamilyReport {
    pub k: f64,
    /// `|E phi'(sqrt(k(x)) Z) - E phi'(sqrt(k(x')) Z)|`.
    pub c: f64,
    /// The limit `c K`.
    pub limit: f64,
    pub rows: Vec<OddFamilyRow>,
}

/// `E[phi(m + sqrt(s) Z)]`.
fn shifted_mean(arch: &Architecture, m: f64, s: f64) -> f64 {
    let act = arch.activation;
    let r = s.sqrt();
    NormalRule::standard().expect(|z| act.eval(m + r * z))
}

/// For each width, `sqrt(M) |E_{Q_M} f(x) - E_{Q_M} f(x')|` against its
/// limit `c K`.
///
/// Under `Q_M` the expected output is `sqrt(K) E[phi(mu + sqrt(s) Z)]`
/// where `s` is the conditional variance of a last-layer pre-activation.
/// With one hidden layer `s = k^0(x, x)` and the expectation is computed by
/// quadrature; deeper networks average over prior draws of the earlier
/// layers with common random numbers for both inputs.
pub fn odd_lower_bound_family<R: Rng + ?Sized>(
    arch: &Architecture,
    k: f64,
    x: &[f64],
    x2: &[f64],
    widths: &[usize],
    samples: usize,
    rng: &mut R,
) -> Result<OddFamilyReport> {
    arch.validate()?;
    match arch.activation.kind {
        ActivationKind::Tanh | ActivationKind::Erf | ActivationKind::Sigmoid => {}
        other => return Err(Error::NotDifferentiable(other)),
    }
    if !(k > 0.0 && k.is_finite()) {
        return Err(Error::InvalidArgument(format!("K must be positive, got {k}")));
    }
    if x.len() != arch.d_in || x2.len() != arch.d_in {
        return Err(Error::ShapeMismatch("inputs must have d_in entries".into()));
    }
    if widths.is_empty() {
        return Err(Error::Config("width list must be nonempty".into()));
    }
    if arch.depth > 1 && samples < 2 {
        return Err(Error::InvalidArgument("deep family needs S >= 2".into()));
    }
    let kx = *diag_recursion(arch, x, InputKernel::Scaled)?.last().expect("depth >= 1");
    let kx2 = *diag_recursion(arch, x2, InputKernel::Scaled)?.last().expect("depth >= 1");
    let c = (act_deriv_mean(&arch.activation, kx) - act_deriv_mean(&arch.activation, kx2)).abs();
    let mut rows = Vec::with_capacity(widths.len());
    for &width in widths {
        let a = arch.with_width(width);
        let q = build_odd_family_member(&a, k)?;
        let kl = kl_to_standard_normal(&q);
        let mu = (k / width as f64).sqrt();
        let scale = (width as f64).sqrt() * k.sqrt();
        let (gap, se) = if a.depth == 1 {
            let s1 = 1.0 + x.iter().map(|v| v * v).sum::<f64>() / a.d_in as f64;
            let s2 = 1.0 + x2.iter().map(|v| v * v).sum::<f64>() / a.d_in as f64;
            (scale * (shifted_mean(&a, mu, s1) - shifted_mean(&a, mu, s2)), 0.0)
        } else {
            let front = Architecture { depth: a.depth - 1, ..a };
            let layout = Layout::new(&front);
            let mut tape = Tape::new(&front);
            let mut draws = Vec::with_capacity(samples);
            for _ in 0..samples {
                let theta = net::sample_prior(&front, rng);
                net::forward_point(&front, &layout, &theta, x, &mut tape);
                let s1 = 1.0 + norm2(tape.last_hidden()).powi(2) / width as f64;
                net::forward_point(&front, &layout, &theta, x2, &mut tape);
                let s2 = 1.0 + norm2(tape.last_hidden()).powi(2) / width as f64;
                draws.push(scale * (shifted_mean(&a, mu, s1) - shifted_mean(&a, mu, s2)));
            }
            let m = mean_se(&draws);
            (m.mean, m.se)
        };
        rows.push(OddFamilyRow {
            width,
            kl,
            scaled_gap: gap.abs(),
            scaled_gap_se: se,
        });
    }
    Ok(OddFamilyReport {
        k,
        c,
        limit: c * k,
        rows,
    })
}
