//! Infinite-width (NNGP) reference quantities.
//!
//! The kernel recursion follows the network scalings exactly:
//!
//! ```text
//! k^0(x, x')   = 1 + <x, x'> / d_in                  covariance of z_1
//! k^l(x, x')   = 1 + E[phi(u) phi(v)],  (u, v) ~ N(0, k^{l-1})
//! output(x,x') = [1 if final bias] + E[phi(u) phi(v)] under k^{L-1}
//! ```
//!
//! so `k^{l-1}` is the covariance of the pre-activations `z_l`. Activation
//! moments use closed forms where they exist (identity, relu, erf) and
//! Gauss–Hermite quadrature otherwise.

use std::io::Write;

use nalgebra::{Cholesky, DMatrix, DVector};
use rand::Rng;
use rayon::prelude::*;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::linalg::{dot, Matrix};
use crate::net::{ActivationKind, ActivationSpec, Architecture};
use crate::quadrature::NormalRule;
use crate::stats::mean_se;
use crate::{Error, Result};

const FRAC_1_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

/// `E[phi(sqrt(k) Z)^2]` for `Z ~ N(0, 1)`.
pub fn act_second_moment(act: &ActivationSpec, k: f64) -> Result<f64> {
    if !(k > 0.0 && k.is_finite()) {
        return Err(Error::InvalidArgument(format!("variance must be positive, got {k}")));
    }
    Ok(match act.kind {
        ActivationKind::Identity => k,
        ActivationKind::Relu => 0.5 * k,
        ActivationKind::Erf => std::f64::consts::FRAC_2_PI * (2.0 * k / (1.0 + 2.0 * k)).asin(),
        ActivationKind::Tanh | ActivationKind::Sigmoid => {
            let s = k.sqrt();
            NormalRule::standard().expect(|z| act.eval(s * z).powi(2))
        }
    })
}

/// `E[phi(u) phi(v)]` with `(u, v) ~ N(0, [[k11, k12], [k12, k22]])`.
pub fn act_cross_moment(act: &ActivationSpec, k11: f64, k12: f64, k22: f64) -> Result<f64> {
    let tol = 1e-12 * (k11 * k22).abs().max(1.0);
    if !(k11 >= 0.0 && k22 >= 0.0) || k12 * k12 > k11 * k22 + tol || !k12.is_finite() {
        return Err(Error::NotPositiveSemidefinite(format!(
            "[[{k11}, {k12}], [{k12}, {k22}]]"
        )));
    }
    let denom = (k11 * k22).sqrt();
    Ok(match act.kind {
        ActivationKind::Identity => k12,
        ActivationKind::Relu => {
            if denom == 0.0 {
                0.0
            } else {
                let cos = (k12 / denom).clamp(-1.0, 1.0);
                let theta = cos.acos();
                denom / (2.0 * std::f64::consts::PI)
                    * (theta.sin() + (std::f64::consts::PI - theta) * cos)
            }
        }
        ActivationKind::Erf => {
            let r = 2.0 * k12 / ((1.0 + 2.0 * k11) * (1.0 + 2.0 * k22)).sqrt();
            std::f64::consts::FRAC_2_PI * r.clamp(-1.0, 1.0).asin()
        }
        ActivationKind::Tanh | ActivationKind::Sigmoid => {
            NormalRule::standard().expect2(k11, k12, k22, |u, v| act.eval(u) * act.eval(v))
        }
    })
}

/// `E[phi(sqrt(k) Z)]`; equals the even-part constant for odd-plus-constant
/// activations.
pub fn act_mean(act: &ActivationSpec, k: f64) -> f64 {
    match (act.kind, act.alpha) {
        (ActivationKind::Relu, _) => k.max(0.0).sqrt() * FRAC_1_SQRT_2PI,
        (_, Some(alpha)) => alpha,
        (_, None) => {
            let s = k.max(0.0).sqrt();
            NormalRule::standard().expect(|z| act.eval(s * z))
        }
    }
}

/// `E[phi'(sqrt(k) Z)]`.
pub fn act_deriv_mean(act: &ActivationSpec, k: f64) -> f64 {
    match act.kind {
        ActivationKind::Identity => 1.0,
        ActivationKind::Relu => 0.5,
        ActivationKind::Erf => std::f64::consts::FRAC_2_SQRT_PI / (1.0 + 2.0 * k.max(0.0)).sqrt(),
        ActivationKind::Tanh | ActivationKind::Sigmoid => {
            let s = k.max(0.0).sqrt();
            NormalRule::standard().expect(|z| act.derivative(s * z))
        }
    }
}

/// Form of the input-layer kernel.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub enum InputKernel {
    /// `1 + <x, x'> / d_in`, matching the `1/sqrt(d_in)` input scaling.
    #[default]
    Scaled,
    /// `1 + <x, x'>`, without the `1/d_in` factor.
    Literal,
}

impl InputKernel {
    fn eval(self, a: &[f64], b: &[f64]) -> f64 {
        let ip = dot(a, b);
        match self {
            InputKernel::Scaled => 1.0 + ip / a.len() as f64,
            InputKernel::Literal => 1.0 + ip,
        }
    }
}

/// Gram matrix of an NNGP kernel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KernelMatrix {
    pub entries: Matrix,
    /// Which kernel in the recursion this is: `l` for `k^l`, `depth + 1` for
    /// the output covariance.
    pub layer: usize,
    pub arch: Architecture,
}

impl KernelMatrix {
    /// Row-major CSV with a `# layer=<l>` comment line and a header.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "# layer={}", self.layer)?;
        let mut wr = csv::Writer::from_writer(w);
        let header: Vec<String> = (0..self.entries.cols()).map(|j| format!("c{j}")).collect();
        wr.write_record(&header)?;
        for i in 0..self.entries.rows() {
            wr.write_record(self.entries.row(i).iter().map(|v| v.to_string()))?;
        }
        wr.flush()?;
        Ok(())
    }
}

fn check_inputs(arch: &Architecture, x: &Matrix) -> Result<()> {
    if x.cols() != arch.d_in {
        return Err(Error::ShapeMismatch(format!(
            "inputs have {} columns, architecture expects d_in = {}",
            x.cols(),
            arch.d_in
        )));
    }
    Ok(())
}

/// Diagonal recursion `[k^0(x,x), ..., k^{L-1}(x,x)]` for one input.
pub fn diag_recursion(arch: &Architecture, x: &[f64], input: InputKernel) -> Result<Vec<f64>> {
    let mut ks = Vec::with_capacity(arch.depth);
    let mut k = input.eval(x, x);
    ks.push(k);
    for _ in 1..arch.depth {
        k = 1.0 + act_second_moment(&arch.activation, k)?;
        ks.push(k);
    }
    Ok(ks)
}

/// NNGP output variance at `x`.
pub fn output_variance(arch: &Architecture, x: &[f64], input: InputKernel) -> Result<f64> {
    let ks = diag_recursion(arch, x, input)?;
    let bias = if arch.include_final_bias { 1.0 } else { 0.0 };
    Ok(bias + act_second_moment(&arch.activation, *ks.last().expect("depth >= 1"))?)
}

/// Output covariance between every row of `x` and every row of `x2`.
pub fn nngp_kernel(arch: &Architecture, x: &Matrix, x2: &Matrix) -> Result<KernelMatrix> {
    nngp_kernel_with(arch, x, x2, InputKernel::Scaled)
}

/// [`nngp_kernel`] with an explicit input-kernel form.
pub fn nngp_kernel_with(arch: &Architecture, x: &Matrix, x2: &Matrix, input: InputKernel) -> Result<KernelMatrix> {
    arch.validate()?;
    check_inputs(arch, x)?;
    check_inputs(arch, x2)?;
    let act = arch.activation;
    let (n1, n2) = (x.rows(), x2.rows());
    let diags = |m: &Matrix| -> Result<Vec<Vec<f64>>> {
        (0..m.rows()).map(|i| diag_recursion(arch, m.row(i), input)).collect()
    };
    let d1 = diags(x)?;
    let symmetric = x == x2;
    let d2 = if symmetric { d1.clone() } else { diags(x2)? };
    let bias = if arch.include_final_bias { 1.0 } else { 0.0 };
    let entry = |i: usize, j: usize| -> Result<f64> {
        let (a, b) = (&d1[i], &d2[j]);
        let mut k = input.eval(x.row(i), x2.row(j));
        for l in 1..arch.depth {
            k = 1.0 + act_cross_moment(&act, a[l - 1], k, b[l - 1])?;
        }
        Ok(bias + act_cross_moment(&act, a[arch.depth - 1], k, b[arch.depth - 1])?)
    };
    let rows: Vec<Vec<f64>> = (0..n1)
        .into_par_iter()
        .map(|i| {
            let start = if symmetric { i } else { 0 };
            (start..n2).map(|j| entry(i, j)).collect::<Result<Vec<f64>>>()
        })
        .collect::<Result<_>>()?;
    let mut out = Matrix::zeros(n1, n2);
    for (i, row) in rows.iter().enumerate() {
        let start = if symmetric { i } else { 0 };
        for (off, v) in row.iter().enumerate() {
            out.set(i, start + off, *v);
            if symmetric {
                out.set(start + off, i, *v);
            }
        }
    }
    Ok(KernelMatrix {
        entries: out,
        layer: arch.depth + 1,
        arch: *arch,
    })
}

/// Gaussian-process predictive distribution at test points.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GPPredictive {
    pub mean: Vec<f64>,
    pub variance: Vec<f64>,
    pub covariance: Option<Matrix>,
    /// Diagonal jitter that made the factorization succeed.
    pub jitter: f64,
}

/// Initial diagonal jitter; escalated tenfold on failure.
pub const JITTER: f64 = 1e-8;
/// Number of escalations after the first attempt.
pub const JITTER_RETRIES: usize = 3;

/// Cholesky of `k + jitter I` with the escalation policy.
pub fn jittered_cholesky(k: &Matrix) -> Result<(Cholesky<f64, nalgebra::Dyn>, f64)> {
    if k.rows() != k.cols() {
        return Err(Error::ShapeMismatch("Cholesky needs a square matrix".into()));
    }
    let base = k.to_nalgebra();
    let mut jitter = JITTER;
    for attempt in 0..=JITTER_RETRIES {
        let m = &base + DMatrix::identity(k.rows(), k.rows()) * jitter;
        if let Some(c) = Cholesky::new(m) {
            return Ok((c, jitter));
        }
        if attempt < JITTER_RETRIES {
            jitter *= 10.0;
        }
    }
    Err(Error::Factorization { jitter })
}

/// Standard GP regression: `mean = K_*^T (K + s2 I)^{-1} y`,
/// `var = k_** - K_*^T (K + s2 I)^{-1} K_*`.
///
/// `k_cross` is `N_train x N_test`. Variances are clamped at zero.
pub fn gp_posterior(
    k_train: &Matrix,
    k_cross: &Matrix,
    k_test_diag: &[f64],
    y: &[f64],
    sigma2: f64,
) -> Result<GPPredictive> {
    gp_posterior_full(k_train, k_cross, k_test_diag, None, y, sigma2)
}

/// [`gp_posterior`] that also returns the test covariance when `k_test` is given.
pub fn gp_posterior_full(
    k_train: &Matrix,
    k_cross: &Matrix,
    k_test_diag: &[f64],
    k_test: Option<&Matrix>,
    y: &[f64],
    sigma2: f64,
) -> Result<GPPredictive> {
    if !(sigma2 > 0.0) {
        return Err(Error::InvalidArgument(format!("noise variance must be positive, got {sigma2}")));
    }
    let n = y.len();
    if k_train.rows() != n || k_train.cols() != n || k_cross.rows() != n || k_cross.cols() != k_test_diag.len() {
        return Err(Error::ShapeMismatch("inconsistent GP matrix shapes".into()));
    }
    let mut kn = k_train.clone();
    for i in 0..n {
        kn.set(i, i, kn.get(i, i) + sigma2);
    }
    let (chol, jitter) = jittered_cholesky(&kn)?;
    let alpha = chol.solve(&DVector::from_column_slice(y));
    let ks = k_cross.to_nalgebra();
    let mean = (ks.transpose() * &alpha).iter().copied().collect();
    let v = chol.l().solve_lower_triangular(&ks).expect("Cholesky factor is invertible");
    let variance = (0..k_test_diag.len())
        .map(|j| (k_test_diag[j] - v.column(j).norm_squared()).max(0.0))
        .collect();
    let covariance = match k_test {
        Some(kt) => {
            let c = kt.to_nalgebra() - v.transpose() * &v;
            let mut m = Matrix::zeros(c.nrows(), c.ncols());
            for i in 0..c.nrows() {
                for j in 0..c.ncols() {
                    m.set(i, j, c[(i, j)]);
                }
            }
            Some(m)
        }
        None => None,
    };
    Ok(GPPredictive {
        mean,
        variance,
        covariance,
        jitter,
    })
}

/// NNGP posterior predictive for a dataset at `x_test`.
pub fn nngp_posterior(arch: &Architecture, x_train: &Matrix, y: &[f64], x_test: &Matrix, sigma2: f64) -> Result<GPPredictive> {
    let k = nngp_kernel(arch, x_train, x_train)?;
    let ks = nngp_kernel(arch, x_train, x_test)?;
    let diag: Vec<f64> = (0..x_test.rows())
        .map(|i| output_variance(arch, x_test.row(i), InputKernel::Scaled))
        .collect::<Result<_>>()?;
    gp_posterior(&k.entries, &ks.entries, &diag, y, sigma2)
}

/// Infinite-width mean of a final-hidden-layer unit,
/// `lambda(x) = E[phi(z)]`, `z ~ N(0, k^{L-1}(x, x))`.
pub fn lambda_fn(arch: &Architecture, x: &[f64]) -> Result<f64> {
    let ks = diag_recursion(arch, x, InputKernel::Scaled)?;
    Ok(act_mean(&arch.activation, *ks.last().expect("depth >= 1")))
}

/// Post-activations of the last hidden layer for one prior draw, sampling
/// weights on the fly.
pub fn sample_last_hidden<R: Rng + ?Sized>(arch: &Architecture, x: &[f64], rng: &mut R) -> Vec<f64> {
    let m = arch.width;
    let act = arch.activation;
    let mut prev: Vec<f64> = x.to_vec();
    let mut scale = 1.0 / (arch.d_in as f64).sqrt();
    for _ in 0..arch.depth {
        let mut z = vec![0.0; m];
        for zi in z.iter_mut() {
            let mut acc = 0.0;
            for p in &prev {
                let w: f64 = rng.sample(StandardNormal);
                acc += w * p;
            }
            let b: f64 = rng.sample(StandardNormal);
            *zi = acc * scale + b;
        }
        prev = z.iter().map(|&v| act.eval(v)).collect();
        scale = 1.0 / (m as f64).sqrt();
    }
    prev
}

/// Monte-Carlo estimate of the finite-width mean `lambda_M(x)`: each draw
/// averages `phi(z_L)` over the `M` units; the standard error is across draws.
pub fn lambda_m_mc<R: Rng + ?Sized>(arch: &Architecture, x: &[f64], samples: usize, rng: &mut R) -> Result<(f64, f64)> {
    if samples < 2 {
        return Err(Error::InvalidArgument("lambda_M estimate needs S >= 2".into()));
    }
    if x.len() != arch.d_in {
        return Err(Error::ShapeMismatch("input length differs from d_in".into()));
    }
    let draws: Vec<f64> = (0..samples)
        .map(|_| {
            let h = sample_last_hidden(arch, x, rng);
            h.iter().sum::<f64>() / h.len() as f64
        })
        .collect();
    let m = mean_se(&draws);
    Ok((m.mean, m.se))
}
