//! Quadrature rules for expectations under standard normals.
//!
//! Rules are stored with the normal density folded into the weights, so
//! that `E[g(Z)] ~= sum_i w_i g(z_i)` with `Z ~ N(0, 1)` and `sum_i w_i ~= 1`.
//!
//! Gauss–Hermite rules converge slowly for saturating integrands such as
//! `tanh(s z)` with large `s`, so the shared rule is a composite
//! Gauss–Legendre rule on `[-10, 10]` instead.

use std::sync::OnceLock;

use crate::{Error, Result};

const FRAC_1_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

/// Panels, points per panel and half-width of the shared rule.
pub const STANDARD_PANELS: usize = 20;
pub const STANDARD_ORDER: usize = 12;
pub const STANDARD_HALF_WIDTH: f64 = 10.0;

#[derive(Debug, Clone, PartialEq)]
pub struct NormalRule {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

/// Gauss–Legendre nodes and weights on `[-1, 1]`.
fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let nf = n as f64;
    let mut x = vec![0.0; n];
    let mut w = vec![0.0; n];
    for i in 0..n.div_ceil(2) {
        let mut z = (std::f64::consts::PI * (i as f64 + 0.75) / (nf + 0.5)).cos();
        let mut pp = 1.0;
        for _ in 0..100 {
            let mut p1 = 1.0;
            let mut p2 = 0.0;
            for j in 0..n {
                let p3 = p2;
                p2 = p1;
                let jf = j as f64;
                p1 = ((2.0 * jf + 1.0) * z * p2 - jf * p3) / (jf + 1.0);
            }
            pp = nf * (z * p1 - p2) / (z * z - 1.0);
            let z1 = z;
            z = z1 - p1 / pp;
            if (z - z1).abs() <= 1e-15 {
                break;
            }
        }
        x[i] = -z;
        x[n - 1 - i] = z;
        w[i] = 2.0 / ((1.0 - z * z) * pp * pp);
        w[n - 1 - i] = w[i];
    }
    (x, w)
}

impl NormalRule {
    /// `n`-point Gauss–Hermite rule, by Newton iteration on the orthonormal
    /// Hermite recurrence.
    pub fn gauss_hermite(n: usize) -> Result<Self> {
        if n == 0 {
            return Err(Error::InvalidArgument("quadrature needs at least one node".into()));
        }
        let pim4 = std::f64::consts::PI.powf(-0.25);
        let nf = n as f64;
        let mut x = vec![0.0; n];
        let mut w = vec![0.0; n];
        let mut z = 0.0_f64;
        for i in 0..n.div_ceil(2) {
            z = match i {
                0 => (2.0 * nf + 1.0).sqrt() - 1.85575 * (2.0 * nf + 1.0).powf(-0.16667),
                1 => z - 1.14 * nf.powf(0.426) / z,
                2 => 1.86 * z - 0.86 * x[0],
                3 => 1.91 * z - 0.91 * x[1],
                _ => 2.0 * z - x[i - 2],
            };
            let mut pp = 0.0;
            for _ in 0..100 {
                let mut p1 = pim4;
                let mut p2 = 0.0;
                for j in 0..n {
                    let p3 = p2;
                    p2 = p1;
                    let jf = j as f64;
                    p1 = z * (2.0 / (jf + 1.0)).sqrt() * p2 - (jf / (jf + 1.0)).sqrt() * p3;
                }
                pp = (2.0 * nf).sqrt() * p2;
                let z1 = z;
                z = z1 - p1 / pp;
                if (z - z1).abs() <= 1e-15 * z.abs().max(1.0) {
                    break;
                }
            }
            x[i] = z;
            x[n - 1 - i] = -z;
            w[i] = 2.0 / (pp * pp);
            w[n - 1 - i] = w[i];
        }
        // Convert from the exp(-x^2) weight to the standard normal density.
        let sqrt_pi = std::f64::consts::PI.sqrt();
        let nodes = x.iter().map(|v| std::f64::consts::SQRT_2 * v).collect();
        let weights = w.iter().map(|v| v / sqrt_pi).collect();
        Ok(Self { nodes, weights })
    }

    /// Composite Gauss–Legendre rule with `panels` equal panels of `order`
    /// points on `[-half_width, half_width]`, weighted by the normal density.
    pub fn composite_legendre(panels: usize, order: usize, half_width: f64) -> Result<Self> {
        if panels == 0 || order == 0 || !(half_width > 0.0) {
            return Err(Error::InvalidArgument("composite rule needs panels, order and width > 0".into()));
        }
        let (g, gw) = gauss_legendre(order);
        let h = 2.0 * half_width / panels as f64;
        let mut nodes = Vec::with_capacity(panels * order);
        let mut weights = Vec::with_capacity(panels * order);
        for p in 0..panels {
            let left = -half_width + p as f64 * h;
            for (t, wt) in g.iter().zip(&gw) {
                let z = left + 0.5 * h * (t + 1.0);
                nodes.push(z);
                weights.push(0.5 * h * wt * (-0.5 * z * z).exp() * FRAC_1_SQRT_2PI);
            }
        }
        Ok(Self { nodes, weights })
    }

    /// Shared composite rule.
    pub fn standard() -> &'static NormalRule {
        static RULE: OnceLock<NormalRule> = OnceLock::new();
        RULE.get_or_init(|| {
            NormalRule::composite_legendre(STANDARD_PANELS, STANDARD_ORDER, STANDARD_HALF_WIDTH)
                .expect("valid rule")
        })
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// `E[g(Z)]` for `Z ~ N(0, 1)`.
    pub fn expect<F: Fn(f64) -> f64>(&self, g: F) -> f64 {
        self.nodes
            .iter()
            .zip(&self.weights)
            .map(|(&z, &w)| w * g(z))
            .sum()
    }

    /// `E[g(U, V)]` for a centred bivariate normal with covariance
    /// `[[k11, k12], [k12, k22]]`, via a tensor-product rule and a 2x2
    /// Cholesky factor.
    pub fn expect2<F: Fn(f64, f64) -> f64>(&self, k11: f64, k12: f64, k22: f64, g: F) -> f64 {
        let l11 = k11.max(0.0).sqrt();
        let (l21, l22) = if l11 > 0.0 {
            let l21 = k12 / l11;
            (l21, (k22 - l21 * l21).max(0.0).sqrt())
        } else {
            (0.0, k22.max(0.0).sqrt())
        };
        let mut acc = 0.0;
        for (&z1, &w1) in self.nodes.iter().zip(&self.weights) {
            let u = l11 * z1;
            let mut inner = 0.0;
            for (&z2, &w2) in self.nodes.iter().zip(&self.weights) {
                inner += w2 * g(u, l21 * z1 + l22 * z2);
            }
            acc += w1 * inner;
        }
        acc
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hermite_weights_sum_to_one_and_nodes_symmetric() {
        for n in [1, 2, 5, 20, 64, 100] {
            let gh = NormalRule::gauss_hermite(n).unwrap();
            let s: f64 = gh.weights.iter().sum();
            assert!((s - 1.0).abs() < 1e-13, "n={n} sum={s}");
            for i in 0..n {
                assert_eq!(gh.nodes[i], -gh.nodes[n - 1 - i]);
            }
        }
    }

    #[test]
    fn legendre_integrates_polynomials() {
        let (x, w) = gauss_legendre(7);
        assert!((w.iter().sum::<f64>() - 2.0).abs() < 1e-14);
        // int_{-1}^{1} t^12 dt = 2/13
        let v: f64 = x.iter().zip(&w).map(|(t, wt)| wt * t.powi(12)).sum();
        assert!((v - 2.0 / 13.0).abs() < 1e-14);
    }

    #[test]
    fn normal_moments_exact() {
        for rule in [NormalRule::gauss_hermite(64).unwrap(), NormalRule::standard().clone()] {
            // E[Z^{2k}] = (2k-1)!!
            let mut dfact = 1.0;
            for k in 1..=8 {
                dfact *= (2 * k - 1) as f64;
                let m = rule.expect(|z| z.powi(2 * k));
                assert!((m / dfact - 1.0).abs() < 1e-11, "k={k} m={m}");
                let odd = rule.expect(|z| z.powi(2 * k - 1));
                assert!(odd.abs() < 1e-12 * dfact * (2 * k + 1) as f64, "k={k} odd={odd}");
            }
        }
    }

    #[test]
    fn smooth_expectation() {
        // E[cos(Z)] = exp(-1/2)
        let v = NormalRule::standard().expect(f64::cos);
        assert!((v - (-0.5f64).exp()).abs() < 1e-14);
    }

    #[test]
    fn saturating_integrand_is_accurate() {
        // E[erf(sqrt(k) Z)^2] = (2/pi) asin(2k/(1+2k)).
        let erf = statrs::function::erf::erf;
        for k in [0.5, 2.0, 10.0] {
            let s = f64::sqrt(k);
            let exact = std::f64::consts::FRAC_2_PI * (2.0 * k / (1.0 + 2.0 * k)).asin();
            let v = NormalRule::standard().expect(|z| erf(s * z).powi(2));
            assert!((v - exact).abs() < 1e-10, "k={k}: {v} vs {exact}");
        }
    }

    #[test]
    fn bivariate_covariance() {
        let rule = NormalRule::standard();
        let (k11, k12, k22) = (2.0, 0.7, 0.5);
        assert!((rule.expect2(k11, k12, k22, |u, v| u * v) - k12).abs() < 1e-12);
        assert!((rule.expect2(k11, k12, k22, |u, _| u * u) - k11).abs() < 1e-12);
        assert!((rule.expect2(k11, k12, k22, |_, v| v * v) - k22).abs() < 1e-12);
        // Degenerate first coordinate.
        assert!((rule.expect2(0.0, 0.0, 3.0, |_, v| v * v) - 3.0).abs() < 1e-12);
    }

    #[test]
    fn invalid_rules_rejected() {
        assert!(NormalRule::gauss_hermite(0).is_err());
        assert!(NormalRule::composite_legendre(0, 4, 1.0).is_err());
        assert!(NormalRule::composite_legendre(4, 4, 0.0).is_err());
    }
}
