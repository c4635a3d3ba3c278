//! The penalty function `k_eps`, its derivative and antiderivative, and the
//! optional spatial smoothing of the constraint threshold.
//!
//! `k_eps(s) = 1` for `s <= 0` and `e^{s/eps}` for `s >= eps`. On `(0, eps)`
//! the exponent is blended as `s * sigma(s/eps) / eps` with the quintic
//! smoothstep `sigma(x) = 6x^5 - 15x^4 + 10x^3`, which makes `k_eps` C^2 and
//! monotone.

use crate::error::{Error, Result};
use crate::grid::Grid;

/// Exponents beyond this are clamped to avoid overflow.
pub const MAX_EXPONENT: f64 = 700.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum GSmoothing {
    #[default]
    None,
    /// Symmetric box kernel of the given width in faces (odd; even widths are
    /// rounded up).
    Box(usize),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RegularizationParams {
    pub epsilon: f64,
    pub delta: f64,
    pub g_smoothing: GSmoothing,
}

impl RegularizationParams {
    pub fn new(epsilon: f64, delta: f64) -> Result<Self> {
        let p = RegularizationParams {
            epsilon,
            delta,
            g_smoothing: GSmoothing::None,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn with_smoothing(mut self, s: GSmoothing) -> Self {
        self.g_smoothing = s;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon > 0.0 && self.epsilon < 1.0) {
            return Err(Error::InvalidParams(format!(
                "epsilon must lie in (0, 1), got {}",
                self.epsilon
            )));
        }
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return Err(Error::InvalidParams(format!(
                "delta must lie in (0, 1), got {}",
                self.delta
            )));
        }
        Ok(())
    }
}

fn smoothstep(x: f64) -> f64 {
    x * x * x * (10.0 + x * (-15.0 + 6.0 * x))
}

fn smoothstep_prime(x: f64) -> f64 {
    30.0 * x * x * (1.0 - x) * (1.0 - x)
}

/// Exponent of `k_eps` in units of `s/eps`, before clamping.
fn exponent(s: f64, eps: f64) -> f64 {
    if s <= 0.0 {
        0.0
    } else if s >= eps {
        s / eps
    } else {
        let x = s / eps;
        x * smoothstep(x)
    }
}

/// `k_eps(s)` together with a flag telling whether the exponent was clamped.
pub fn penalty_k_checked(s: f64, eps: f64) -> (f64, bool) {
    let e = exponent(s, eps);
    if e > MAX_EXPONENT {
        (MAX_EXPONENT.exp(), true)
    } else {
        (e.exp(), false)
    }
}

pub fn penalty_k(s: f64, eps: f64) -> f64 {
    penalty_k_checked(s, eps).0
}

pub fn penalty_k_prime(s: f64, eps: f64) -> f64 {
    if s <= 0.0 {
        return 0.0;
    }
    let k = penalty_k(s, eps);
    if s >= eps {
        k / eps
    } else {
        let x = s / eps;
        k * (smoothstep(x) + x * smoothstep_prime(x)) / eps
    }
}

// 8-point Gauss-Legendre rule on [-1, 1].
const GL_NODES: [f64; 4] = [
    0.183_434_642_495_649_8,
    0.525_532_409_916_329,
    0.796_666_477_413_626_7,
    0.960_289_856_497_536_3,
];
const GL_WEIGHTS: [f64; 4] = [
    0.362_683_783_378_362,
    0.313_706_645_877_887_3,
    0.222_381_034_453_374_5,
    0.101_228_536_290_376_3,
];
const GL_PANELS: usize = 8;

/// `J(x) = ∫_0^x exp(y sigma(y)) dy` for `x ∈ [0, 1]`.
fn blend_integral(x: f64) -> f64 {
    let width = x / GL_PANELS as f64;
    let mut total = 0.0;
    for p in 0..GL_PANELS {
        let mid = (p as f64 + 0.5) * width;
        let half = 0.5 * width;
        for (node, w) in GL_NODES.iter().zip(GL_WEIGHTS) {
            for y in [mid - half * node, mid + half * node] {
                total += w * half * (y * smoothstep(y)).exp();
            }
        }
    }
    total
}

/// Antiderivative `K_eps(s) = ∫_0^s k_eps`, with `K_eps(0) = 0`.
pub fn penalty_big_k(s: f64, eps: f64) -> f64 {
    if s <= 0.0 {
        return s;
    }
    if s < eps {
        return eps * blend_integral(s / eps);
    }
    let head = eps * blend_integral(1.0);
    let x = s / eps;
    if x <= MAX_EXPONENT {
        head + eps * (x.exp() - std::f64::consts::E)
    } else {
        let cap = MAX_EXPONENT.exp();
        head + eps * (cap - std::f64::consts::E) + (s - MAX_EXPONENT * eps) * cap
    }
}

/// Box-kernel smoothing of a per-face threshold array along each axis,
/// clamped below at `lambda_min`.
pub fn smooth_constraint(
    grid: &Grid,
    g_values: &[f64],
    params: &RegularizationParams,
    lambda_min: f64,
) -> Vec<f64> {
    let width = match params.g_smoothing {
        GSmoothing::None | GSmoothing::Box(0) | GSmoothing::Box(1) => return g_values.to_vec(),
        GSmoothing::Box(w) => w | 1,
    };
    let radius = width / 2;
    let nx = grid.nx();
    let ny = grid.ny();
    let nxf = grid.num_x_faces();
    let mut out = g_values.to_vec();
    // (offset, columns, rows) for each face family
    let mut families = vec![(0usize, nx - 1, ny)];
    if grid.dim() == 2 {
        families.push((nxf, nx, ny - 1));
    }
    for (offset, cols, rows) in families {
        let block = &mut out[offset..offset + cols * rows];
        box_pass(block, cols, rows, radius, true);
        if grid.dim() == 2 {
            box_pass(block, cols, rows, radius, false);
        }
    }
    for v in &mut out {
        *v = v.max(lambda_min);
    }
    out
}

fn box_pass(block: &mut [f64], cols: usize, rows: usize, radius: usize, along_rows: bool) {
    let src = block.to_vec();
    let (lines, len) = if along_rows { (rows, cols) } else { (cols, rows) };
    let at = |line: usize, p: usize| {
        if along_rows {
            line * cols + p
        } else {
            p * cols + line
        }
    };
    for line in 0..lines {
        for p in 0..len {
            let lo = p.saturating_sub(radius);
            let hi = (p + radius).min(len - 1);
            let sum: f64 = (lo..=hi).map(|q| src[at(line, q)]).sum();
            block[at(line, p)] = sum / (hi - lo + 1) as f64;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn endpoint_laws() {
        for eps in [0.5, 0.1, 1e-3] {
            assert_eq!(penalty_k(-1.0, eps), 1.0);
            assert_eq!(penalty_k(0.0, eps), 1.0);
            assert!((penalty_k(2.0 * eps, eps) - 2f64.exp()).abs() < 1e-12);
        }
    }

    #[test]
    fn blend_is_monotone_between_endpoints() {
        let eps = 0.1;
        let mid = penalty_k(eps / 2.0, eps);
        assert!(mid > 1.0 && mid < 0.5f64.exp());
        let h = 1e-7;
        let d = (penalty_k(eps / 2.0 + h, eps) - penalty_k(eps / 2.0 - h, eps)) / (2.0 * h);
        assert!(d >= 0.0);
        let mut prev = 1.0;
        for i in 0..=1000 {
            let s = eps * i as f64 / 1000.0;
            let k = penalty_k(s, eps);
            assert!(k >= prev);
            prev = k;
        }
    }

    #[test]
    fn derivative_examples() {
        let eps = 0.05;
        assert_eq!(penalty_k_prime(-1.0, eps), 0.0);
        assert!((penalty_k_prime(2.0 * eps, eps) - 2f64.exp() / eps).abs() < 1e-10);
    }

    #[test]
    fn antiderivative_examples() {
        assert_eq!(penalty_big_k(-0.5, 0.1), -0.5);
        assert_eq!(penalty_big_k(0.0, 0.1), 0.0);
        let eps = 0.1;
        let v = penalty_big_k(0.3, eps);
        assert!(v > 0.3 && v < 3f64.exp() * 0.3);
        let h = 1e-5;
        let d = (penalty_big_k(0.3 + h, eps) - penalty_big_k(0.3 - h, eps)) / (2.0 * h);
        assert!((d - penalty_k(0.3, eps)).abs() < 1e-6 * penalty_k(0.3, eps));
    }

    #[test]
    fn clamping_is_reported() {
        let (v, clamped) = penalty_k_checked(1.0, 1e-3);
        assert!(clamped);
        assert_eq!(v, MAX_EXPONENT.exp());
        assert!(!penalty_k_checked(0.5, 1e-2).1);
        assert!(penalty_big_k(1.0, 1e-3).is_finite());
    }

    #[test]
    fn smoothing_examples() {
        let g = Grid::new_1d(0.0, 1.0, 11).unwrap();
        let params = RegularizationParams::new(0.1, 0.1).unwrap();
        let step: Vec<f64> = (0..10).map(|f| if f < 5 { 1.0 } else { 2.0 }).collect();
        assert_eq!(smooth_constraint(&g, &step, &params, 0.5), step);

        let boxed = params.with_smoothing(GSmoothing::Box(3));
        let out = smooth_constraint(&g, &step, &boxed, 0.5);
        assert!((out[4] - 4.0 / 3.0).abs() < 1e-12);

        let constant = vec![1.7; 10];
        for w in [3, 5, 9] {
            let out = smooth_constraint(&g, &constant, &params.with_smoothing(GSmoothing::Box(w)), 0.5);
            assert!(out.iter().all(|v| (v - 1.7).abs() < 1e-12));
        }

        let g2 = Grid::new_2d((0.0, 1.0), (0.0, 1.0), (6, 5)).unwrap();
        let constant = vec![2.5; g2.num_faces()];
        let out = smooth_constraint(&g2, &constant, &boxed, 1.0);
        assert!(out.iter().all(|v| (v - 2.5).abs() < 1e-12));
    }

    #[test]
    fn rejects_out_of_range_parameters() {
        assert!(RegularizationParams::new(0.0, 0.5).is_err());
        assert!(RegularizationParams::new(0.5, 1.0).is_err());
        assert!(RegularizationParams::new(0.5, 0.5).is_ok());
    }
}
