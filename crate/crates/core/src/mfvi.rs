//! Mean-field Gaussian variational inference.
//!
//! The variational family is `theta ~ N(mu, diag(sigma^2))` with
//! `sigma = exp(log_sigma)`, stored in the same flat layout as the network
//! parameters. The ELBO is estimated with the reparameterization
//! `theta = mu + sigma * eps`; its pathwise gradient is accumulated by
//! reverse-mode passes through the network, and the KL term to the
//! standard-normal prior is handled in closed form.
//!
//! Gradients are summed sample by sample in a fixed order, so results are
//! bitwise reproducible for a given seed.

use std::io::Write;

use rand::seq::index;
use rand::Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};
use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

use crate::data::Dataset;
use crate::linalg::Matrix;
use crate::net::{self, Architecture, Layout, ParamVector, Tape};
use crate::stats::mean_se;
use crate::{rng_from_seed, Error, Result};

/// Diagonal Gaussian over the flat parameter vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeanFieldGaussian {
    pub mu: Vec<f64>,
    pub log_sigma: Vec<f64>,
}

impl MeanFieldGaussian {
    pub fn new(mu: Vec<f64>, log_sigma: Vec<f64>) -> Result<Self> {
        if mu.len() != log_sigma.len() {
            return Err(Error::ShapeMismatch(format!(
                "mu has {} entries but log_sigma has {}",
                mu.len(),
                log_sigma.len()
            )));
        }
        Ok(Self { mu, log_sigma })
    }

    /// The standard-normal prior itself.
    pub fn prior(arch: &Architecture) -> Self {
        let n = arch.param_count();
        Self {
            mu: vec![0.0; n],
            log_sigma: vec![0.0; n],
        }
    }

    pub fn from_variances(mu: Vec<f64>, sigma2: &[f64]) -> Result<Self> {
        if let Some(v) = sigma2.iter().find(|v| !(**v > 0.0)) {
            return Err(Error::InvalidArgument(format!("variance must be positive, got {v}")));
        }
        Self::new(mu, sigma2.iter().map(|v| 0.5 * v.ln()).collect())
    }

    pub fn len(&self) -> usize {
        self.mu.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mu.is_empty()
    }

    pub fn sigma(&self) -> Vec<f64> {
        self.log_sigma.iter().map(|l| l.exp()).collect()
    }

    pub fn variances(&self) -> Vec<f64> {
        self.log_sigma.iter().map(|l| (2.0 * l).exp()).collect()
    }

    pub fn check_arch(&self, arch: &Architecture) -> Result<()> {
        let n = arch.param_count();
        if self.len() != n {
            return Err(Error::ShapeMismatch(format!(
                "variational family has {} parameters, architecture needs {n}",
                self.len()
            )));
        }
        Ok(())
    }
}

/// Observation model `p(y | f)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LikelihoodSpec {
    Gaussian { sigma2: f64 },
    StudentT { nu: f64 },
    Logistic,
}

impl LikelihoodSpec {
    pub fn validate(&self) -> Result<()> {
        match *self {
            LikelihoodSpec::Gaussian { sigma2 } if !(sigma2 > 0.0 && sigma2.is_finite()) => Err(
                Error::InvalidArgument(format!("gaussian variance must be positive, got {sigma2}")),
            ),
            LikelihoodSpec::StudentT { nu } if !(nu > 0.0 && nu.is_finite()) => Err(
                Error::InvalidArgument(format!("student-t degrees of freedom must be positive, got {nu}")),
            ),
            _ => Ok(()),
        }
    }

    pub fn check_target(&self, y: f64) -> Result<()> {
        match self {
            LikelihoodSpec::Logistic if y != 0.0 && y != 1.0 => Err(Error::NonBinaryTarget(y)),
            _ => Ok(()),
        }
    }

    /// `log p(y | f)`.
    #[inline]
    pub fn log_density(&self, y: f64, f: f64) -> f64 {
        match *self {
            LikelihoodSpec::Gaussian { sigma2 } => {
                -0.5 * (2.0 * std::f64::consts::PI * sigma2).ln() - (y - f).powi(2) / (2.0 * sigma2)
            }
            LikelihoodSpec::StudentT { nu } => {
                student_t_log_normalizer(nu) - 0.5 * (nu + 1.0) * (1.0 + (f - y).powi(2) / nu).ln()
            }
            LikelihoodSpec::Logistic => {
                // y f - log(1 + e^f), written to avoid overflow.
                y * f - softplus(f)
            }
        }
    }

    /// `d log p(y | f) / df`.
    #[inline]
    pub fn dlog_density(&self, y: f64, f: f64) -> f64 {
        match *self {
            LikelihoodSpec::Gaussian { sigma2 } => (y - f) / sigma2,
            LikelihoodSpec::StudentT { nu } => {
                let r = f - y;
                -(nu + 1.0) * r / (nu + r * r)
            }
            LikelihoodSpec::Logistic => y - logistic(f),
        }
    }

    /// `sup_f log p(y | f)`: the per-observation likelihood ceiling.
    pub fn log_density_ceiling(&self) -> f64 {
        match *self {
            LikelihoodSpec::Gaussian { sigma2 } => -0.5 * (2.0 * std::f64::consts::PI * sigma2).ln(),
            LikelihoodSpec::StudentT { nu } => student_t_log_normalizer(nu),
            LikelihoodSpec::Logistic => 0.0,
        }
    }
}

/// `log Gamma((nu+1)/2) - log Gamma(nu/2) - log(nu pi)/2`.
pub fn student_t_log_normalizer(nu: f64) -> f64 {
    ln_gamma(0.5 * (nu + 1.0)) - ln_gamma(0.5 * nu) - 0.5 * (nu * std::f64::consts::PI).ln()
}

#[inline]
fn softplus(f: f64) -> f64 {
    if f > 0.0 {
        f + (-f).exp().ln_1p()
    } else {
        f.exp().ln_1p()
    }
}

#[inline]
fn logistic(f: f64) -> f64 {
    if f >= 0.0 {
        1.0 / (1.0 + (-f).exp())
    } else {
        let e = f.exp();
        e / (1.0 + e)
    }
}

/// `sum_n log p(y_n | f_n)`.
pub fn log_likelihood(lik: &LikelihoodSpec, y: &[f64], f: &[f64]) -> Result<f64> {
    lik.validate()?;
    if y.len() != f.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} targets but {} predictions",
            y.len(),
            f.len()
        )));
    }
    let mut acc = 0.0;
    for (&yi, &fi) in y.iter().zip(f) {
        lik.check_target(yi)?;
        acc += lik.log_density(yi, fi);
    }
    Ok(acc)
}

/// `KL(q || N(0, I)) = (||mu||^2 + sum_i r(sigma_i^2)) / 2`, `r(a) = a - 1 - ln a`.
pub fn kl_to_standard_normal(q: &MeanFieldGaussian) -> f64 {
    let mut acc = 0.0;
    for (&m, &ls) in q.mu.iter().zip(&q.log_sigma) {
        let s2 = (2.0 * ls).exp();
        // ln(sigma^2) = 2 log_sigma exactly, avoiding a log of a rounded exp.
        acc += m * m + (s2 - 1.0 - 2.0 * ls);
    }
    0.5 * acc
}

/// `theta = mu + sigma * eps`.
pub fn sample_reparam(q: &MeanFieldGaussian, noise: &[f64]) -> Result<ParamVector> {
    if noise.len() != q.len() {
        return Err(Error::ShapeMismatch(format!(
            "noise has {} entries, variational family has {}",
            noise.len(),
            q.len()
        )));
    }
    Ok(ParamVector(
        q.mu
            .iter()
            .zip(&q.log_sigma)
            .zip(noise)
            .map(|((m, ls), e)| m + ls.exp() * e)
            .collect(),
    ))
}

/// Mini-batch view of a dataset. The log-likelihood of the batch is
/// multiplied by `scale`, normally `N / batch_size`.
#[derive(Debug, Clone, Copy)]
pub struct Batch<'a> {
    pub x: &'a Matrix,
    pub y: &'a [f64],
    pub scale: f64,
}

impl<'a> Batch<'a> {
    pub fn full(ds: &'a Dataset) -> Self {
        Self {
            x: &ds.x,
            y: &ds.y,
            scale: 1.0,
        }
    }
}

/// Monte-Carlo ELBO estimate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ElboEstimate {
    pub elbo: f64,
    /// Standard error over the likelihood draws.
    pub std_error: f64,
    pub kl: f64,
    /// Expected log-likelihood term.
    pub ell: f64,
}

/// Gradient of the ELBO with respect to `(mu, log_sigma)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ElboGradient {
    pub mu: Vec<f64>,
    pub log_sigma: Vec<f64>,
    pub estimate: ElboEstimate,
}

impl ElboGradient {
    pub fn norm(&self) -> f64 {
        self.mu
            .iter()
            .chain(&self.log_sigma)
            .map(|g| g * g)
            .sum::<f64>()
            .sqrt()
    }
}

fn check_problem(q: &MeanFieldGaussian, arch: &Architecture, batch: &Batch, lik: &LikelihoodSpec) -> Result<()> {
    arch.validate()?;
    if arch.d_out != 1 {
        return Err(Error::InvalidArchitecture(
            "the likelihood model needs a scalar output (d_out = 1)".into(),
        ));
    }
    q.check_arch(arch)?;
    lik.validate()?;
    if batch.x.rows() != batch.y.len() {
        return Err(Error::ShapeMismatch("batch inputs and targets differ in length".into()));
    }
    if batch.x.rows() > 0 && batch.x.cols() != arch.d_in {
        return Err(Error::ShapeMismatch(format!(
            "batch has {} input columns, architecture expects {}",
            batch.x.cols(),
            arch.d_in
        )));
    }
    for &y in batch.y {
        lik.check_target(y)?;
    }
    Ok(())
}

/// Shared engine: draws `samples` noise vectors from `noise` and returns the
/// estimate and, if requested, the gradient.
fn objective<N: FnMut(&mut [f64])>(
    q: &MeanFieldGaussian,
    arch: &Architecture,
    batch: &Batch,
    lik: &LikelihoodSpec,
    samples: usize,
    mut noise: N,
    want_grad: bool,
) -> Result<(ElboEstimate, Option<(Vec<f64>, Vec<f64>)>)> {
    check_problem(q, arch, batch, lik)?;
    if samples == 0 {
        return Err(Error::InvalidArgument("need at least one Monte-Carlo sample".into()));
    }
    let p = q.len();
    let layout = Layout::new(arch);
    let sigma = q.sigma();
    let mut tape = Tape::new(arch);
    let mut eps = vec![0.0; p];
    let mut theta = vec![0.0; p];
    let mut g = if want_grad { vec![0.0; p] } else { Vec::new() };
    let mut g_mu = if want_grad { vec![0.0; p] } else { Vec::new() };
    let mut g_ls = if want_grad { vec![0.0; p] } else { Vec::new() };
    let mut lls = Vec::with_capacity(samples);
    let inv_s = 1.0 / samples as f64;

    for _ in 0..samples {
        noise(&mut eps);
        for i in 0..p {
            theta[i] = q.mu[i] + sigma[i] * eps[i];
        }
        if want_grad {
            g.iter_mut().for_each(|v| *v = 0.0);
        }
        let mut ll = 0.0;
        for n in 0..batch.y.len() {
            let x = batch.x.row(n);
            net::forward_point(arch, &layout, &theta, x, &mut tape);
            let f = tape.output()[0];
            let y = batch.y[n];
            ll += lik.log_density(y, f);
            if want_grad {
                let d = batch.scale * lik.dlog_density(y, f);
                net::backward_point(arch, &layout, &theta, x, &[d], &mut tape, &mut g);
            }
        }
        lls.push(batch.scale * ll);
        if want_grad {
            for i in 0..p {
                let gi = g[i] * inv_s;
                g_mu[i] += gi;
                g_ls[i] += gi * eps[i] * sigma[i];
            }
        }
    }

    let kl = kl_to_standard_normal(q);
    let ell = lls.iter().sum::<f64>() * inv_s;
    let std_error = if samples > 1 { mean_se(&lls).se } else { f64::NAN };
    let est = ElboEstimate {
        elbo: ell - kl,
        std_error,
        kl,
        ell,
    };
    if !want_grad {
        return Ok((est, None));
    }
    for i in 0..p {
        g_mu[i] -= q.mu[i];
        g_ls[i] -= sigma[i] * sigma[i] - 1.0;
    }
    Ok((est, Some((g_mu, g_ls))))
}

fn standard_normal_fill<R: Rng + ?Sized>(rng: &mut R) -> impl FnMut(&mut [f64]) + '_ {
    move |buf: &mut [f64]| {
        for v in buf.iter_mut() {
            *v = rng.sample(StandardNormal);
        }
    }
}

fn fixed_noise(noise: &[Vec<f64>]) -> impl FnMut(&mut [f64]) + '_ {
    let mut it = noise.iter();
    move |buf: &mut [f64]| buf.copy_from_slice(it.next().expect("one noise vector per sample"))
}

fn check_noise(q: &MeanFieldGaussian, noise: &[Vec<f64>]) -> Result<()> {
    if let Some(v) = noise.iter().find(|v| v.len() != q.len()) {
        return Err(Error::ShapeMismatch(format!(
            "noise vector has {} entries, expected {}",
            v.len(),
            q.len()
        )));
    }
    Ok(())
}

/// `(1/S) sum_s log L(theta_s) - KL(q, P)` over the full dataset.
pub fn elbo_estimate<R: Rng + ?Sized>(
    q: &MeanFieldGaussian,
    arch: &Architecture,
    data: &Dataset,
    lik: &LikelihoodSpec,
    samples: usize,
    rng: &mut R,
) -> Result<ElboEstimate> {
    let batch = Batch::full(data);
    Ok(objective(q, arch, &batch, lik, samples, standard_normal_fill(rng), false)?.0)
}

/// ELBO estimate with caller-supplied noise (one vector per sample).
pub fn elbo_estimate_with_noise(
    q: &MeanFieldGaussian,
    arch: &Architecture,
    batch: &Batch,
    lik: &LikelihoodSpec,
    noise: &[Vec<f64>],
) -> Result<ElboEstimate> {
    check_noise(q, noise)?;
    Ok(objective(q, arch, batch, lik, noise.len(), fixed_noise(noise), false)?.0)
}

/// Pathwise gradient of the (scaled) mini-batch ELBO.
pub fn elbo_gradient<R: Rng + ?Sized>(
    q: &MeanFieldGaussian,
    arch: &Architecture,
    batch: &Batch,
    lik: &LikelihoodSpec,
    samples: usize,
    rng: &mut R,
) -> Result<ElboGradient> {
    let (estimate, g) = objective(q, arch, batch, lik, samples, standard_normal_fill(rng), true)?;
    let (mu, log_sigma) = g.expect("gradient requested");
    Ok(ElboGradient {
        mu,
        log_sigma,
        estimate,
    })
}

/// Gradient with caller-supplied noise, matching [`elbo_estimate_with_noise`].
pub fn elbo_gradient_with_noise(
    q: &MeanFieldGaussian,
    arch: &Architecture,
    batch: &Batch,
    lik: &LikelihoodSpec,
    noise: &[Vec<f64>],
) -> Result<ElboGradient> {
    check_noise(q, noise)?;
    let (estimate, g) = objective(q, arch, batch, lik, noise.len(), fixed_noise(noise), true)?;
    let (mu, log_sigma) = g.expect("gradient requested");
    Ok(ElboGradient {
        mu,
        log_sigma,
        estimate,
    })
}

/// `mu ~ N(0, 1)`, `sigma^2 ~ InverseGamma(nu + 1, nu)` so that `E[sigma^2] = 1`.
pub fn init_variational<R: Rng + ?Sized>(arch: &Architecture, nu: f64, rng: &mut R) -> Result<MeanFieldGaussian> {
    if !(nu > 1.0 && nu.is_finite()) {
        return Err(Error::InvalidArgument(format!("init nu must exceed 1, got {nu}")));
    }
    let n = arch.param_count();
    let mu: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
    let gamma = Gamma::new(nu + 1.0, 1.0 / nu).expect("positive shape and scale");
    let log_sigma = (0..n).map(|_| -0.5 * gamma.sample(rng).ln()).collect();
    MeanFieldGaussian::new(mu, log_sigma)
}

/// Optimal Gaussian over the output bias when everything else is the prior:
/// `mu_b = sum(y) / (N + sigma2)`, `sigma2_b = sigma2 / (N + sigma2)`.
pub fn optimal_output_bias(y: &[f64], sigma2: f64) -> Result<(f64, f64)> {
    if y.is_empty() {
        return Err(Error::InvalidArgument("optimal bias needs at least one target".into()));
    }
    if !(sigma2 > 0.0) {
        return Err(Error::InvalidArgument(format!("noise variance must be positive, got {sigma2}")));
    }
    let n = y.len() as f64;
    Ok((y.iter().sum::<f64>() / (n + sigma2), sigma2 / (n + sigma2)))
}

/// Exact ELBO of a model whose only random quantity is the output bias
/// `b ~ N(mu_b, sigma2_b)` under a Gaussian likelihood.
pub fn bias_only_elbo(y: &[f64], sigma2: f64, mu_b: f64, sigma2_b: f64) -> f64 {
    let n = y.len() as f64;
    let fit: f64 = y.iter().map(|v| (v - mu_b).powi(2) + sigma2_b).sum();
    -0.5 * n * (2.0 * std::f64::consts::PI * sigma2).ln() - fit / (2.0 * sigma2)
        - 0.5 * (mu_b * mu_b + sigma2_b - 1.0 - sigma2_b.ln())
}

/// Optimizer settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub steps: usize,
    /// Clamped to the dataset size.
    pub batch_size: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    pub mc_samples: usize,
    /// Global gradient-norm threshold.
    pub grad_clip_norm: f64,
    /// Cosine annealing restarts every this many steps.
    pub cosine_restart_period: usize,
    pub init_nu: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            steps: 20_000,
            batch_size: 100,
            learning_rate: 1e-3,
            momentum: 0.9,
            mc_samples: 16,
            grad_clip_norm: 10.0,
            cosine_restart_period: 500,
            init_nu: 100.0,
            seed: 0,
        }
    }
}

impl TrainConfig {
    /// Largest width the desk preset is meant for.
    pub const DESK_MAX_WIDTH: usize = 4096;

    /// Shorter schedule for desk-scale experiments.
    pub fn desk() -> Self {
        Self {
            steps: 5000,
            ..Self::default()
        }
    }

    pub fn with_seed(&self, seed: u64) -> Self {
        Self { seed, ..self.clone() }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str| Err(Error::Config(format!("{what} must be positive")));
        if self.batch_size == 0 {
            return bad("batch_size");
        }
        if self.mc_samples == 0 {
            return bad("mc_samples");
        }
        if self.cosine_restart_period == 0 {
            return bad("cosine_restart_period");
        }
        if !(self.learning_rate > 0.0) {
            return bad("learning_rate");
        }
        if !(self.grad_clip_norm > 0.0) {
            return bad("grad_clip_norm");
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::Config("momentum must lie in [0, 1)".into()));
        }
        if !(self.init_nu > 1.0) {
            return Err(Error::Config("init_nu must exceed 1".into()));
        }
        Ok(())
    }

    /// Learning rate at `step`: cosine decay to zero within each period.
    pub fn learning_rate_at(&self, step: usize) -> f64 {
        let t = (step % self.cosine_restart_period) as f64 / self.cosine_restart_period as f64;
        0.5 * self.learning_rate * (1.0 + (std::f64::consts::PI * t).cos())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainRecord {
    pub step: usize,
    pub elbo: f64,
    pub kl: f64,
    pub ell: f64,
    pub grad_norm: f64,
    pub lr: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    pub records: Vec<TrainRecord>,
}

impl TrainHistory {
    pub const CSV_HEADER: [&'static str; 6] = ["step", "elbo", "kl", "ell", "grad_norm", "lr"];

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        wr.write_record(Self::CSV_HEADER)?;
        for r in &self.records {
            wr.serialize((r.step, r.elbo, r.kl, r.ell, r.grad_norm, r.lr))?;
        }
        wr.flush()?;
        Ok(())
    }

    pub fn last(&self) -> Option<&TrainRecord> {
        self.records.last()
    }
}

/// Initializes from `cfg.seed` and runs [`train_from`].
pub fn train(
    arch: &Architecture,
    data: &Dataset,
    lik: &LikelihoodSpec,
    cfg: &TrainConfig,
) -> Result<(MeanFieldGaussian, TrainHistory)> {
    cfg.validate()?;
    let mut rng = rng_from_seed(cfg.seed);
    let q0 = init_variational(arch, cfg.init_nu, &mut rng)?;
    train_loop(arch, data, lik, cfg, q0, &mut rng)
}

/// SGD with momentum on `(mu, log_sigma)` starting from `q0`.
pub fn train_from(
    arch: &Architecture,
    data: &Dataset,
    lik: &LikelihoodSpec,
    cfg: &TrainConfig,
    q0: MeanFieldGaussian,
) -> Result<(MeanFieldGaussian, TrainHistory)> {
    cfg.validate()?;
    let mut rng = rng_from_seed(cfg.seed);
    train_loop(arch, data, lik, cfg, q0, &mut rng)
}

fn train_loop<R: Rng + ?Sized>(
    arch: &Architecture,
    data: &Dataset,
    lik: &LikelihoodSpec,
    cfg: &TrainConfig,
    mut q: MeanFieldGaussian,
    rng: &mut R,
) -> Result<(MeanFieldGaussian, TrainHistory)> {
    if data.is_empty() {
        return Err(Error::InvalidArgument("cannot train on an empty dataset".into()));
    }
    q.check_arch(arch)?;
    let n = data.len();
    let b = cfg.batch_size.min(n);
    let scale = n as f64 / b as f64;
    let p = q.len();
    let mut v_mu = vec![0.0; p];
    let mut v_ls = vec![0.0; p];
    let mut history = TrainHistory {
        records: Vec::with_capacity(cfg.steps),
    };
    let mut bx = Matrix::zeros(b, data.d_in());
    let mut by = vec![0.0; b];
    let full = b == n;

    for step in 0..cfg.steps {
        let lr = cfg.learning_rate_at(step);
        let batch = if full {
            Batch {
                x: &data.x,
                y: &data.y,
                scale,
            }
        } else {
            for (k, i) in index::sample(rng, n, b).into_iter().enumerate() {
                bx.row_mut(k).copy_from_slice(data.x.row(i));
                by[k] = data.y[i];
            }
            Batch {
                x: &bx,
                y: &by,
                scale,
            }
        };
        let grad = elbo_gradient(&q, arch, &batch, lik, cfg.mc_samples, rng)?;
        let norm = grad.norm();
        if !norm.is_finite() || !grad.estimate.elbo.is_finite() {
            return Err(Error::NonFinite { step });
        }
        let clip = if norm > cfg.grad_clip_norm {
            cfg.grad_clip_norm / norm
        } else {
            1.0
        };
        for i in 0..p {
            v_mu[i] = cfg.momentum * v_mu[i] + clip * grad.mu[i];
            v_ls[i] = cfg.momentum * v_ls[i] + clip * grad.log_sigma[i];
            q.mu[i] += lr * v_mu[i];
            q.log_sigma[i] += lr * v_ls[i];
        }
        history.records.push(TrainRecord {
            step,
            elbo: grad.estimate.elbo,
            kl: grad.estimate.kl,
            ell: grad.estimate.ell,
            grad_norm: norm,
            lr,
        });
    }
    Ok((q, history))
}

/// Which network output the predictive functionals are taken of.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Output {
    /// The full network output `f`.
    Full,
    /// `f` without the final bias and the even part of the activation.
    Tilde,
}

/// Per-point Monte-Carlo predictive moments.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictiveMoments {
    pub mean: Vec<f64>,
    pub second_moment: Vec<f64>,
    pub variance: Vec<f64>,
    pub mean_se: Vec<f64>,
    pub second_moment_se: Vec<f64>,
}

impl PredictiveMoments {
    fn from_draws(draws: &[Vec<f64>]) -> Self {
        let mut out = Self {
            mean: Vec::with_capacity(draws.len()),
            second_moment: Vec::with_capacity(draws.len()),
            variance: Vec::with_capacity(draws.len()),
            mean_se: Vec::with_capacity(draws.len()),
            second_moment_se: Vec::with_capacity(draws.len()),
        };
        for d in draws {
            let m = mean_se(d);
            let sq: Vec<f64> = d.iter().map(|v| v * v).collect();
            let m2 = mean_se(&sq);
            out.mean.push(m.mean);
            out.mean_se.push(m.se);
            out.second_moment.push(m2.mean);
            out.second_moment_se.push(m2.se);
            out.variance.push(m2.mean - m.mean * m.mean);
        }
        out
    }
}

/// Moments under `q` and under the prior computed from the same noise draws
/// (`theta_q = mu + sigma eps`, `theta_p = eps`), with standard errors of the
/// paired differences.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairedMoments {
    pub q: PredictiveMoments,
    pub p: PredictiveMoments,
    pub mean_diff: Vec<f64>,
    pub mean_diff_se: Vec<f64>,
    pub second_diff: Vec<f64>,
    pub second_diff_se: Vec<f64>,
}

fn output_alpha(arch: &Architecture, output: Output) -> Result<Option<f64>> {
    match output {
        Output::Full => Ok(None),
        Output::Tilde => arch.activation.odd_offset().map(Some),
    }
}

/// Evaluates outputs for every row of `x` into `out`.
fn eval_rows(
    arch: &Architecture,
    layout: &Layout,
    theta: &[f64],
    x: &Matrix,
    alpha: Option<f64>,
    tape: &mut Tape,
    out: &mut [f64],
) {
    for (n, o) in out.iter_mut().enumerate() {
        net::forward_point(arch, layout, theta, x.row(n), tape);
        let mut f = [tape.output()[0]];
        if let Some(a) = alpha {
            net::tilde_correction(layout, theta, a, &mut f);
        }
        *o = f[0];
    }
}

fn check_predictive(q: &MeanFieldGaussian, arch: &Architecture, x: &Matrix, samples: usize) -> Result<()> {
    arch.validate()?;
    q.check_arch(arch)?;
    if arch.d_out != 1 {
        return Err(Error::InvalidArchitecture("predictive moments need d_out = 1".into()));
    }
    if x.cols() != arch.d_in {
        return Err(Error::ShapeMismatch(format!(
            "inputs have {} columns, architecture expects {}",
            x.cols(),
            arch.d_in
        )));
    }
    if samples < 2 {
        return Err(Error::InvalidArgument("predictive moments need S >= 2".into()));
    }
    Ok(())
}

/// Predictive moments of the full output under `q`.
pub fn predictive_moments<R: Rng + ?Sized>(
    q: &MeanFieldGaussian,
    arch: &Architecture,
    x: &Matrix,
    samples: usize,
    rng: &mut R,
) -> Result<PredictiveMoments> {
    predictive_moments_of(q, arch, x, samples, Output::Full, rng)
}

/// Predictive moments of the chosen output under `q`.
pub fn predictive_moments_of<R: Rng + ?Sized>(
    q: &MeanFieldGaussian,
    arch: &Architecture,
    x: &Matrix,
    samples: usize,
    output: Output,
    rng: &mut R,
) -> Result<PredictiveMoments> {
    check_predictive(q, arch, x, samples)?;
    let alpha = output_alpha(arch, output)?;
    let layout = Layout::new(arch);
    let mut tape = Tape::new(arch);
    let sigma = q.sigma();
    let mut theta = vec![0.0; q.len()];
    let mut row = vec![0.0; x.rows()];
    let mut draws = vec![Vec::with_capacity(samples); x.rows()];
    for _ in 0..samples {
        for (t, (m, s)) in theta.iter_mut().zip(q.mu.iter().zip(&sigma)) {
            let e: f64 = rng.sample(StandardNormal);
            *t = m + s * e;
        }
        eval_rows(arch, &layout, &theta, x, alpha, &mut tape, &mut row);
        for (d, v) in draws.iter_mut().zip(&row) {
            d.push(*v);
        }
    }
    Ok(PredictiveMoments::from_draws(&draws))
}

/// Predictive moments under `q` and the prior with common random numbers.
pub fn paired_predictive_moments<R: Rng + ?Sized>(
    q: &MeanFieldGaussian,
    arch: &Architecture,
    x: &Matrix,
    samples: usize,
    output: Output,
    rng: &mut R,
) -> Result<PairedMoments> {
    check_predictive(q, arch, x, samples)?;
    let alpha = output_alpha(arch, output)?;
    let layout = Layout::new(arch);
    let mut tape = Tape::new(arch);
    let sigma = q.sigma();
    let p = q.len();
    let mut eps = vec![0.0; p];
    let mut theta = vec![0.0; p];
    let mut row_q = vec![0.0; x.rows()];
    let mut row_p = vec![0.0; x.rows()];
    let mut dq = vec![Vec::with_capacity(samples); x.rows()];
    let mut dp = vec![Vec::with_capacity(samples); x.rows()];
    for _ in 0..samples {
        for e in eps.iter_mut() {
            *e = rng.sample(StandardNormal);
        }
        for i in 0..p {
            theta[i] = q.mu[i] + sigma[i] * eps[i];
        }
        eval_rows(arch, &layout, &theta, x, alpha, &mut tape, &mut row_q);
        eval_rows(arch, &layout, &eps, x, alpha, &mut tape, &mut row_p);
        for n in 0..x.rows() {
            dq[n].push(row_q[n]);
            dp[n].push(row_p[n]);
        }
    }
    let mut out = PairedMoments {
        q: PredictiveMoments::from_draws(&dq),
        p: PredictiveMoments::from_draws(&dp),
        mean_diff: Vec::new(),
        mean_diff_se: Vec::new(),
        second_diff: Vec::new(),
        second_diff_se: Vec::new(),
    };
    for n in 0..x.rows() {
        let d1: Vec<f64> = dq[n].iter().zip(&dp[n]).map(|(a, b)| a - b).collect();
        let d2: Vec<f64> = dq[n].iter().zip(&dp[n]).map(|(a, b)| a * a - b * b).collect();
        let m1 = mean_se(&d1);
        let m2 = mean_se(&d2);
        out.mean_diff.push(m1.mean);
        out.mean_diff_se.push(m1.se);
        out.second_diff.push(m2.mean);
        out.second_diff_se.push(m2.se);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::make_two_points;
    use crate::net::ActivationKind;

    fn single(mu: f64, sigma2: f64) -> MeanFieldGaussian {
        MeanFieldGaussian::from_variances(vec![mu], &[sigma2]).unwrap()
    }

    #[test]
    fn kl_examples() {
        let a = Architecture::scalar(1, 3, 1, ActivationKind::Tanh).unwrap();
        assert_eq!(kl_to_standard_normal(&MeanFieldGaussian::prior(&a)), 0.0);
        assert!((kl_to_standard_normal(&single(1.0, 1.0)) - 0.5).abs() < 1e-15);
        let v = kl_to_standard_normal(&single(0.0, 4.0));
        assert!((v - 0.5 * (3.0 - 4.0f64.ln())).abs() < 1e-14);
        assert!((v - 0.806853).abs() < 1e-6);
    }

    #[test]
    fn reparam_examples() {
        let q = MeanFieldGaussian::from_variances(vec![2.0], &[9.0]).unwrap();
        assert!((sample_reparam(&q, &[1.0]).unwrap()[0] - 5.0).abs() < 1e-14);
        assert_eq!(sample_reparam(&q, &[0.0]).unwrap()[0], 2.0);
        let p = single(0.0, 1.0);
        assert_eq!(sample_reparam(&p, &[-0.3]).unwrap()[0], -0.3);
        assert!(sample_reparam(&q, &[1.0, 2.0]).is_err());
    }

    #[test]
    fn likelihood_examples() {
        let g = LikelihoodSpec::Gaussian { sigma2: 1.0 };
        let v = log_likelihood(&g, &[0.5, -1.0, 2.0], &[0.5, -1.0, 2.0]).unwrap();
        assert!((v + 1.5 * (2.0 * std::f64::consts::PI).ln()).abs() < 1e-12);
        let g = LikelihoodSpec::Gaussian { sigma2: 0.025 };
        let v = log_likelihood(&g, &[1.0], &[0.0]).unwrap();
        assert!((v - (-0.5 * (2.0 * std::f64::consts::PI * 0.025).ln() - 20.0)).abs() < 1e-12);
        assert!((v + 19.0745).abs() < 1e-4);
        let l = LikelihoodSpec::Logistic;
        assert!((log_likelihood(&l, &[1.0], &[0.0]).unwrap() - 0.5f64.ln()).abs() < 1e-15);
        assert!(matches!(log_likelihood(&l, &[0.5], &[0.0]), Err(Error::NonBinaryTarget(_))));
        // Student-t with nu = 1 is Cauchy: log(1/pi) at zero residual.
        let t = LikelihoodSpec::StudentT { nu: 1.0 };
        let v = log_likelihood(&t, &[0.0], &[0.0]).unwrap();
        assert!((v + std::f64::consts::PI.ln()).abs() < 1e-12);
        assert!(LikelihoodSpec::Gaussian { sigma2: 0.0 }.validate().is_err());
        assert!(LikelihoodSpec::StudentT { nu: -1.0 }.validate().is_err());
    }

    #[test]
    fn likelihood_derivatives_match_finite_differences() {
        let h = 1e-6;
        for lik in [
            LikelihoodSpec::Gaussian { sigma2: 0.3 },
            LikelihoodSpec::StudentT { nu: 3.0 },
            LikelihoodSpec::Logistic,
        ] {
            for (y, f) in [(1.0, 0.2), (0.0, -1.3), (1.0, 4.0)] {
                let fd = (lik.log_density(y, f + h) - lik.log_density(y, f - h)) / (2.0 * h);
                assert!((fd - lik.dlog_density(y, f)).abs() < 1e-7, "{lik:?}");
            }
        }
    }

    #[test]
    fn zero_data_elbo_is_minus_kl() {
        let a = Architecture::scalar(1, 3, 1, ActivationKind::Tanh).unwrap();
        let mut rng = rng_from_seed(1);
        let q = init_variational(&a, 100.0, &mut rng).unwrap();
        let empty = Dataset::new(Matrix::zeros(0, 1), vec![], "empty", 1.0).unwrap();
        let lik = LikelihoodSpec::Gaussian { sigma2: 1.0 };
        let e = elbo_estimate(&q, &a, &empty, &lik, 4, &mut rng).unwrap();
        assert_eq!(e.elbo, -kl_to_standard_normal(&q));
        let p = MeanFieldGaussian::prior(&a);
        let g = elbo_gradient(&p, &a, &Batch::full(&empty), &lik, 3, &mut rng).unwrap();
        assert!(g.mu.iter().chain(&g.log_sigma).all(|v| *v == 0.0));
        let e = elbo_estimate(&p, &a, &make_two_points(), &lik, 4, &mut rng).unwrap();
        assert_eq!(e.kl, 0.0);
    }

    #[test]
    fn identity_unit_network_gradient_symbolic() {
        // f = w2 (w1 x + b1) + b2 with x = 1; Gaussian sigma2 = 1, one datum.
        let a = Architecture::scalar(1, 1, 1, ActivationKind::Identity).unwrap();
        let q = MeanFieldGaussian::new(vec![0.3, -0.2, 0.7, 0.1], vec![-0.5, 0.2, 0.1, -0.3]).unwrap();
        let eps = vec![0.4, -1.1, 0.6, 0.9];
        let x = Matrix::column(&[1.0]);
        let y = [0.5];
        let lik = LikelihoodSpec::Gaussian { sigma2: 1.0 };
        let g = elbo_gradient_with_noise(&q, &a, &Batch { x: &x, y: &y, scale: 1.0 }, &lik, std::slice::from_ref(&eps)).unwrap();
        let s: Vec<f64> = q.log_sigma.iter().map(|l| l.exp()).collect();
        let t: Vec<f64> = (0..4).map(|i| q.mu[i] + s[i] * eps[i]).collect();
        let f = t[2] * (t[0] + t[1]) + t[3];
        let r = y[0] - f;
        let df = [r * t[2], r * t[2], r * (t[0] + t[1]), r];
        for i in 0..4 {
            let gm = df[i] - q.mu[i];
            let gl = df[i] * eps[i] * s[i] - (s[i] * s[i] - 1.0);
            assert!((g.mu[i] - gm).abs() < 1e-14, "mu {i}");
            assert!((g.log_sigma[i] - gl).abs() < 1e-14, "log_sigma {i}");
        }
    }

    #[test]
    fn init_variational_moments() {
        let a = Architecture::scalar(1, 33_333, 1, ActivationKind::Tanh).unwrap();
        let q = init_variational(&a, 100.0, &mut rng_from_seed(8)).unwrap();
        let s2 = q.variances();
        let m = mean_se(&s2).mean;
        assert!((m - 1.0).abs() < 0.01, "E sigma^2 {m}");
        let mm = mean_se(&q.mu).mean;
        let vm = q.mu.iter().map(|v| (v - mm).powi(2)).sum::<f64>() / q.len() as f64;
        assert!((vm - 1.0).abs() < 0.02);
        let mut rng = rng_from_seed(9);
        let theta = sample_reparam(&q, &(0..q.len()).map(|_| rng.sample(StandardNormal)).collect::<Vec<f64>>()).unwrap();
        let mt = mean_se(&theta).mean;
        let vt = theta.iter().map(|v| (v - mt).powi(2)).sum::<f64>() / q.len() as f64;
        assert!((vt - 2.0).abs() < 0.05, "Var theta {vt}");
        assert!(init_variational(&a, 1.0, &mut rng).is_err());
    }

    #[test]
    fn optimal_bias_examples() {
        let (m, s) = optimal_output_bias(&[-1.0, 1.0], 0.025).unwrap();
        assert_eq!(m, 0.0);
        assert!((s - 0.025 / 2.025).abs() < 1e-15);
        let (m, _) = optimal_output_bias(&[8.24, 11.66], 2.34e-3).unwrap();
        assert!((m - 19.9 / 2.00234).abs() < 1e-12);
        assert!((m - 9.9384).abs() < 1e-4);
        let y = vec![0.7; 100_000];
        let (m, s) = optimal_output_bias(&y, 0.1).unwrap();
        assert!((m - 0.7).abs() < 1e-5 && s < 1e-5);
        assert!(optimal_output_bias(&[], 1.0).is_err());
    }

    #[test]
    fn cosine_schedule() {
        let c = TrainConfig::default();
        assert_eq!(c.learning_rate_at(0), c.learning_rate);
        assert!((c.learning_rate_at(250) - 0.5 * c.learning_rate).abs() < 1e-15);
        assert!(c.learning_rate_at(499) < 1e-7);
        assert_eq!(c.learning_rate_at(500), c.learning_rate);
        assert_eq!(TrainConfig::desk().steps, 5000);
    }

    #[test]
    fn history_csv_header() {
        let h = TrainHistory {
            records: vec![TrainRecord {
                step: 0,
                elbo: -1.0,
                kl: 0.5,
                ell: -0.5,
                grad_norm: 2.0,
                lr: 1e-3,
            }],
        };
        let mut buf = Vec::new();
        h.write_csv(&mut buf).unwrap();
        let s = String::from_utf8(buf).unwrap();
        assert_eq!(s.lines().next().unwrap(), "step,elbo,kl,ell,grad_norm,lr");
        assert_eq!(s.lines().count(), 2);
    }

    #[test]
    fn training_is_deterministic_and_records_consistent() {
        let a = Architecture::scalar(1, 16, 1, ActivationKind::Tanh).unwrap();
        let ds = make_two_points();
        let lik = LikelihoodSpec::Gaussian { sigma2: ds.noise_sigma2 };
        let cfg = TrainConfig {
            steps: 50,
            ..TrainConfig::desk()
        };
        let (q1, h1) = train(&a, &ds, &lik, &cfg).unwrap();
        let (q2, h2) = train(&a, &ds, &lik, &cfg).unwrap();
        assert_eq!(q1, q2);
        assert_eq!(h1, h2);
        for r in &h1.records {
            assert_eq!(r.elbo, r.ell - r.kl);
        }
    }

    #[test]
    fn degenerate_q_predictive() {
        let a = Architecture::scalar(1, 4, 1, ActivationKind::Tanh).unwrap();
        let mut rng = rng_from_seed(2);
        let mut q = init_variational(&a, 100.0, &mut rng).unwrap();
        q.log_sigma.iter_mut().for_each(|v| *v = -40.0);
        let x = Matrix::column(&[-0.5, 0.8]);
        let pm = predictive_moments(&q, &a, &x, 10, &mut rng).unwrap();
        let f = net::forward(&a, &q.mu, &x).unwrap();
        for n in 0..2 {
            assert!((pm.mean[n] - f.get(n, 0)).abs() < 1e-12);
            assert!(pm.variance[n].abs() < 1e-12);
        }
    }

    mod props {
        use super::*;
        use proptest::prelude::*;
        use rand::Rng;

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(64))]
            #[test]
            fn kl_dominates_parameter_norms(mu in proptest::collection::vec(-3.0f64..3.0, 1..40),
                                            seed: u64) {
                let mut rng = rng_from_seed(seed);
                let ls: Vec<f64> = mu.iter().map(|_| rng.random_range(-2.0..2.0)).collect();
                let q = MeanFieldGaussian::new(mu, ls).unwrap();
                let kl = kl_to_standard_normal(&q);
                let mu2: f64 = q.mu.iter().map(|v| v * v).sum();
                let s1: f64 = q.sigma().iter().map(|s| (s - 1.0).powi(2)).sum();
                prop_assert!(kl >= 0.5 * mu2 - 1e-12);
                prop_assert!(kl >= 0.5 * s1 - 1e-12);
            }

            #[test]
            fn bias_optimum_is_stationary(y in proptest::collection::vec(-5.0f64..5.0, 1..20),
                                          sigma2 in 0.01f64..2.0) {
                let (m, s) = optimal_output_bias(&y, sigma2).unwrap();
                let best = bias_only_elbo(&y, sigma2, m, s);
                for (dm, ds) in [(1e-3, 0.0), (-1e-3, 0.0), (0.0, 1e-3), (0.0, -1e-3)] {
                    if s + ds <= 0.0 { continue; }
                    prop_assert!(bias_only_elbo(&y, sigma2, m + dm, s + ds) < best);
                }
            }
        }
    }
}
