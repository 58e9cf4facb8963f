//! Fully-connected network in the NTK parameterization.
//!
//! ```text
//! z_1 = W_1 x / sqrt(d_in) + b_1
//! z_l = W_l phi(z_{l-1}) / sqrt(M) + b_l        l = 2..L
//! f   = W_{L+1} phi(z_L) / sqrt(M) (+ b_{L+1})
//! ```
//!
//! All parameters live in one flat row-major vector. Layers are stored in
//! order `W_1, b_1, W_2, b_2, ..., W_{L+1}, b_{L+1}`; the final bias segment
//! is present iff `include_final_bias`.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::linalg::Matrix;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ActivationKind {
    Tanh,
    Erf,
    Relu,
    Identity,
    Sigmoid,
}

impl ActivationKind {
    pub const ALL: [ActivationKind; 5] = [
        ActivationKind::Tanh,
        ActivationKind::Erf,
        ActivationKind::Relu,
        ActivationKind::Identity,
        ActivationKind::Sigmoid,
    ];
}

impl fmt::Display for ActivationKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            ActivationKind::Tanh => "tanh",
            ActivationKind::Erf => "erf",
            ActivationKind::Relu => "relu",
            ActivationKind::Identity => "identity",
            ActivationKind::Sigmoid => "sigmoid",
        };
        f.write_str(s)
    }
}

impl FromStr for ActivationKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "tanh" => Ok(ActivationKind::Tanh),
            "erf" => Ok(ActivationKind::Erf),
            "relu" => Ok(ActivationKind::Relu),
            "identity" | "linear" => Ok(ActivationKind::Identity),
            "sigmoid" => Ok(ActivationKind::Sigmoid),
            other => Err(Error::InvalidArgument(format!("unknown activation {other:?}"))),
        }
    }
}

const TWO_OVER_SQRT_PI: f64 = std::f64::consts::FRAC_2_SQRT_PI;

/// Activation function together with the metadata the bounds need.
///
/// `alpha` is the constant even part `(phi(a) + phi(-a)) / 2`; it is `None`
/// when the even part is not constant (relu).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(from = "ActivationKind", into = "ActivationKind")]
pub struct ActivationSpec {
    pub kind: ActivationKind,
    pub alpha: Option<f64>,
    pub lipschitz: f64,
    pub is_odd_plus_constant: bool,
}

impl From<ActivationKind> for ActivationSpec {
    fn from(kind: ActivationKind) -> Self {
        let (alpha, lipschitz, odd) = match kind {
            ActivationKind::Tanh => (Some(0.0), 1.0, true),
            ActivationKind::Erf => (Some(0.0), TWO_OVER_SQRT_PI, true),
            ActivationKind::Identity => (Some(0.0), 1.0, true),
            ActivationKind::Sigmoid => (Some(0.5), 0.25, true),
            ActivationKind::Relu => (None, 1.0, false),
        };
        Self {
            kind,
            alpha,
            lipschitz,
            is_odd_plus_constant: odd,
        }
    }
}

impl From<ActivationSpec> for ActivationKind {
    fn from(spec: ActivationSpec) -> Self {
        spec.kind
    }
}

impl ActivationSpec {
    pub fn new(kind: ActivationKind) -> Self {
        kind.into()
    }

    #[inline]
    pub fn eval(&self, z: f64) -> f64 {
        match self.kind {
            ActivationKind::Tanh => z.tanh(),
            ActivationKind::Erf => statrs::function::erf::erf(z),
            ActivationKind::Relu => z.max(0.0),
            ActivationKind::Identity => z,
            // 0.5 + 0.5 tanh(z/2) keeps the odd/even split exact.
            ActivationKind::Sigmoid => 0.5 + 0.5 * (0.5 * z).tanh(),
        }
    }

    #[inline]
    pub fn derivative(&self, z: f64) -> f64 {
        match self.kind {
            ActivationKind::Tanh => {
                let t = z.tanh();
                1.0 - t * t
            }
            ActivationKind::Erf => TWO_OVER_SQRT_PI * (-z * z).exp(),
            ActivationKind::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            ActivationKind::Identity => 1.0,
            ActivationKind::Sigmoid => {
                let t = (0.5 * z).tanh();
                0.25 * (1.0 - t * t)
            }
        }
    }

    /// Constant even part, or an error for activations without one.
    pub fn odd_offset(&self) -> Result<f64> {
        match (self.is_odd_plus_constant, self.alpha) {
            (true, Some(a)) => Ok(a),
            _ => Err(Error::NoOddDecomposition(self.kind)),
        }
    }
}

/// Shape of the network: `depth` hidden layers of `width` units.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Architecture {
    pub depth: usize,
    pub width: usize,
    pub d_in: usize,
    pub d_out: usize,
    pub activation: ActivationSpec,
    pub include_final_bias: bool,
}

impl Architecture {
    pub fn new(
        depth: usize,
        width: usize,
        d_in: usize,
        d_out: usize,
        activation: ActivationKind,
        include_final_bias: bool,
    ) -> Result<Self> {
        let arch = Self {
            depth,
            width,
            d_in,
            d_out,
            activation: activation.into(),
            include_final_bias,
        };
        arch.validate()?;
        Ok(arch)
    }

    /// Scalar-output network with a final bias, the common case.
    pub fn scalar(depth: usize, width: usize, d_in: usize, activation: ActivationKind) -> Result<Self> {
        Self::new(depth, width, d_in, 1, activation, true)
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("depth", self.depth),
            ("width", self.width),
            ("d_in", self.d_in),
            ("d_out", self.d_out),
        ] {
            if v == 0 {
                return Err(Error::InvalidArchitecture(format!("{name} must be at least 1")));
            }
        }
        Ok(())
    }

    pub fn with_width(&self, width: usize) -> Self {
        Self { width, ..*self }
    }

    pub fn with_activation(&self, kind: ActivationKind) -> Self {
        Self {
            activation: kind.into(),
            ..*self
        }
    }

    pub fn param_count(&self) -> usize {
        param_count(self)
    }

    pub fn layout(&self) -> Layout {
        Layout::new(self)
    }
}

/// Number of scalar parameters implied by the architecture.
pub fn param_count(arch: &Architecture) -> usize {
    let (m, l) = (arch.width, arch.depth);
    let final_bias = if arch.include_final_bias { arch.d_out } else { 0 };
    m * arch.d_in + m + (l - 1) * (m * m + m) + arch.d_out * m + final_bias
}

/// Location of one weight matrix (row-major) or bias vector in the flat vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Segment {
    pub offset: usize,
    pub rows: usize,
    pub cols: usize,
}

impl Segment {
    #[inline]
    pub fn len(&self) -> usize {
        self.rows * self.cols
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    #[inline]
    pub fn range(&self) -> std::ops::Range<usize> {
        self.offset..self.offset + self.len()
    }
}

/// One affine map `W a * scale + b` of the network.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LayerLayout {
    pub weight: Segment,
    pub bias: Option<Segment>,
    /// `1/sqrt(fan_in)` applied to the weight product.
    pub scale: f64,
}

/// Segment offsets of every layer, a pure function of the architecture.
#[derive(Debug, Clone, PartialEq)]
pub struct Layout {
    pub layers: Vec<LayerLayout>,
    pub total: usize,
}

impl Layout {
    pub fn new(arch: &Architecture) -> Self {
        let mut layers = Vec::with_capacity(arch.depth + 1);
        let mut offset = 0;
        for l in 0..=arch.depth {
            let (rows, cols) = match l {
                0 => (arch.width, arch.d_in),
                l if l == arch.depth => (arch.d_out, arch.width),
                _ => (arch.width, arch.width),
            };
            let weight = Segment { offset, rows, cols };
            offset += weight.len();
            let bias = if l < arch.depth || arch.include_final_bias {
                let seg = Segment {
                    offset,
                    rows,
                    cols: 1,
                };
                offset += rows;
                Some(seg)
            } else {
                None
            };
            layers.push(LayerLayout {
                weight,
                bias,
                scale: 1.0 / (cols as f64).sqrt(),
            });
        }
        Self {
            layers,
            total: offset,
        }
    }

    pub fn output_layer(&self) -> &LayerLayout {
        self.layers.last().expect("layout has at least one layer")
    }

    /// Concatenates per-layer segments `[W_1, b_1, ..., W_{L+1}, b_{L+1}]`.
    pub fn pack(&self, segments: &[&[f64]]) -> Result<ParamVector> {
        let expected: Vec<usize> = self
            .layers
            .iter()
            .flat_map(|l| std::iter::once(l.weight.len()).chain(l.bias.map(|b| b.len())))
            .collect();
        if segments.len() != expected.len() {
            return Err(Error::ShapeMismatch(format!(
                "expected {} segments, got {}",
                expected.len(),
                segments.len()
            )));
        }
        let mut values = Vec::with_capacity(self.total);
        for (i, (seg, &len)) in segments.iter().zip(&expected).enumerate() {
            if seg.len() != len {
                return Err(Error::ShapeMismatch(format!(
                    "segment {i} has {} values, expected {len}",
                    seg.len()
                )));
            }
            values.extend_from_slice(seg);
        }
        Ok(ParamVector(values))
    }

    /// Inverse of [`Layout::pack`].
    pub fn unpack<'a>(&self, theta: &'a [f64]) -> Result<Vec<&'a [f64]>> {
        self.check_len(theta.len())?;
        Ok(self
            .layers
            .iter()
            .flat_map(|l| std::iter::once(l.weight).chain(l.bias))
            .map(|s| &theta[s.range()])
            .collect())
    }

    pub fn check_len(&self, len: usize) -> Result<()> {
        if len != self.total {
            return Err(Error::ShapeMismatch(format!(
                "parameter vector has {len} entries, architecture needs {}",
                self.total
            )));
        }
        Ok(())
    }
}

/// Flat parameter vector in [`Layout`] order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamVector(pub Vec<f64>);

impl std::ops::Deref for ParamVector {
    type Target = [f64];

    fn deref(&self) -> &[f64] {
        &self.0
    }
}

impl std::ops::DerefMut for ParamVector {
    fn deref_mut(&mut self) -> &mut [f64] {
        &mut self.0
    }
}

/// Each coordinate i.i.d. standard normal.
pub fn sample_prior<R: Rng + ?Sized>(arch: &Architecture, rng: &mut R) -> ParamVector {
    ParamVector(
        (0..param_count(arch))
            .map(|_| rng.sample::<f64, _>(StandardNormal))
            .collect(),
    )
}

/// Reusable buffers for one forward/backward pass through a single input.
#[derive(Debug, Clone)]
pub struct Tape {
    /// Pre-activations `z_1..z_L`.
    pre: Vec<Vec<f64>>,
    /// Post-activations `phi(z_1)..phi(z_L)`.
    post: Vec<Vec<f64>>,
    out: Vec<f64>,
    delta: Vec<f64>,
    delta_next: Vec<f64>,
}

impl Tape {
    pub fn new(arch: &Architecture) -> Self {
        Self {
            pre: vec![vec![0.0; arch.width]; arch.depth],
            post: vec![vec![0.0; arch.width]; arch.depth],
            out: vec![0.0; arch.d_out],
            delta: vec![0.0; arch.width.max(arch.d_out)],
            delta_next: vec![0.0; arch.width.max(arch.d_out)],
        }
    }

    pub fn output(&self) -> &[f64] {
        &self.out
    }

    /// Post-activations of the last hidden layer.
    pub fn last_hidden(&self) -> &[f64] {
        self.post.last().expect("depth >= 1")
    }
}

#[inline]
fn affine(layer: &LayerLayout, theta: &[f64], input: &[f64], out: &mut [f64]) {
    let w = &theta[layer.weight.range()];
    let cols = layer.weight.cols;
    for (i, o) in out.iter_mut().enumerate() {
        let row = &w[i * cols..(i + 1) * cols];
        let mut acc = 0.0;
        for (a, b) in row.iter().zip(input) {
            acc += a * b;
        }
        *o = acc * layer.scale;
    }
    if let Some(b) = layer.bias {
        for (o, bv) in out.iter_mut().zip(&theta[b.range()]) {
            *o += bv;
        }
    }
}

/// Evaluates the network at one input, recording intermediates on `tape`.
pub fn forward_point(arch: &Architecture, layout: &Layout, theta: &[f64], x: &[f64], tape: &mut Tape) {
    let act = arch.activation;
    for l in 0..arch.depth {
        let input: &[f64] = if l == 0 { x } else { &tape.post[l - 1] };
        affine(&layout.layers[l], theta, input, &mut tape.pre[l]);
        for (a, &zi) in tape.post[l].iter_mut().zip(&tape.pre[l]) {
            *a = act.eval(zi);
        }
    }
    affine(
        &layout.layers[arch.depth],
        theta,
        &tape.post[arch.depth - 1],
        &mut tape.out,
    );
}

/// Accumulates `weight * d(sum_o dout[o] f_o)/d theta` into `grad`.
///
/// Must follow [`forward_point`] on the same tape, parameters and input.
pub fn backward_point(
    arch: &Architecture,
    layout: &Layout,
    theta: &[f64],
    x: &[f64],
    dout: &[f64],
    tape: &mut Tape,
    grad: &mut [f64],
) {
    let act = arch.activation;
    let l_out = arch.depth;
    tape.delta[..arch.d_out].copy_from_slice(dout);
    let mut rows = arch.d_out;
    for l in (0..=l_out).rev() {
        let layer = &layout.layers[l];
        let input: &[f64] = if l == 0 { x } else { &tape.post[l - 1] };
        let cols = layer.weight.cols;
        let w_off = layer.weight.offset;
        for i in 0..rows {
            let d = tape.delta[i];
            if d == 0.0 {
                continue;
            }
            let ds = d * layer.scale;
            let g = &mut grad[w_off + i * cols..w_off + (i + 1) * cols];
            for (gj, a) in g.iter_mut().zip(input) {
                *gj += ds * a;
            }
        }
        if let Some(b) = layer.bias {
            for (g, d) in grad[b.range()].iter_mut().zip(&tape.delta[..rows]) {
                *g += d;
            }
        }
        if l == 0 {
            break;
        }
        // Propagate to the previous hidden layer.
        let w = &theta[layer.weight.range()];
        let next = &mut tape.delta_next[..cols];
        next.iter_mut().for_each(|v| *v = 0.0);
        for i in 0..rows {
            let ds = tape.delta[i] * layer.scale;
            if ds == 0.0 {
                continue;
            }
            for (n, wij) in next.iter_mut().zip(&w[i * cols..(i + 1) * cols]) {
                *n += ds * wij;
            }
        }
        for (n, &z) in next.iter_mut().zip(&tape.pre[l - 1]) {
            *n *= act.derivative(z);
        }
        std::mem::swap(&mut tape.delta, &mut tape.delta_next);
        rows = cols;
    }
}

fn check_inputs(arch: &Architecture, theta: &[f64], x: &Matrix) -> Result<Layout> {
    arch.validate()?;
    let layout = Layout::new(arch);
    layout.check_len(theta.len())?;
    if x.cols() != arch.d_in {
        return Err(Error::ShapeMismatch(format!(
            "inputs have {} columns, architecture expects d_in = {}",
            x.cols(),
            arch.d_in
        )));
    }
    Ok(layout)
}

/// Network outputs for every row of `x`, as an `N x d_out` matrix.
pub fn forward(arch: &Architecture, theta: &[f64], x: &Matrix) -> Result<Matrix> {
    let layout = check_inputs(arch, theta, x)?;
    let mut tape = Tape::new(arch);
    let mut out = Matrix::zeros(x.rows(), arch.d_out);
    for n in 0..x.rows() {
        forward_point(arch, &layout, theta, x.row(n), &mut tape);
        out.row_mut(n).copy_from_slice(tape.output());
    }
    Ok(out)
}

/// Strips the final bias and the even part of the final activation:
/// `f~ = f - b_{L+1} - (alpha/sqrt(M)) W_{L+1} 1`.
pub fn tilde_correction(layout: &Layout, theta: &[f64], alpha: f64, out: &mut [f64]) {
    let last = layout.output_layer();
    if let Some(b) = last.bias {
        for (o, bv) in out.iter_mut().zip(&theta[b.range()]) {
            *o -= bv;
        }
    }
    if alpha != 0.0 {
        let w = &theta[last.weight.range()];
        let cols = last.weight.cols;
        for (i, o) in out.iter_mut().enumerate() {
            let s: f64 = w[i * cols..(i + 1) * cols].iter().sum();
            *o -= alpha * s * last.scale;
        }
    }
}

/// Output excluding the final bias and the even part of the activation.
pub fn forward_tilde(arch: &Architecture, theta: &[f64], x: &Matrix) -> Result<Matrix> {
    let alpha = arch.activation.odd_offset()?;
    let layout = check_inputs(arch, theta, x)?;
    let mut out = forward(arch, theta, x)?;
    for n in 0..out.rows() {
        tilde_correction(&layout, theta, alpha, out.row_mut(n));
    }
    Ok(out)
}
