//! General robust loss with shape parameter `alpha` and scale `c`, plus the
//! negative log-likelihood form used when `alpha` is learned.
//!
//! ρ(x, α, c) =
//!   ½(x/c)²                                  α = 2
//!   log(½(x/c)² + 1)                         α = 0
//!   1 − exp(−½(x/c)²)                        α = ±∞
//!   |α−2|/α · (((x/c)²/|α−2| + 1)^(α/2) − 1)   otherwise
//!
//! The NLL adds `log(c) + log Z(α)` where `Z(α) = ∫ exp(−ρ(x, α, 1)) dx`.

use std::sync::OnceLock;

use super::LossError;

/// Spacing of the precomputed `log Z(α)` grid.
pub const PARTITION_GRID_STEP: f64 = 0.01;

// Trapezoid rule over x = sinh(t): the integrand decays at least like e^{-|t|}.
const QUAD_STEP: f64 = 0.02;
const QUAD_LIMIT: f64 = 50.0;

fn is_welsch(alpha: f64) -> bool {
    alpha.is_infinite()
}

/// Loss of a single residual.
pub fn rho(x: f64, alpha: f64, c: f64) -> f64 {
    let u = (x / c) * (x / c);
    if alpha == 2.0 {
        0.5 * u
    } else if alpha == 0.0 {
        (0.5 * u).ln_1p()
    } else if is_welsch(alpha) {
        -(-0.5 * u).exp_m1()
    } else {
        let b = (alpha - 2.0).abs();
        let log_s = (u / b).ln_1p();
        b / alpha * (0.5 * alpha * log_s).exp_m1()
    }
}

/// ∂ρ/∂x.
pub fn rho_grad_x(x: f64, alpha: f64, c: f64) -> f64 {
    let c2 = c * c;
    let u = x * x / c2;
    if alpha == 2.0 {
        x / c2
    } else if alpha == 0.0 {
        2.0 * x / (x * x + 2.0 * c2)
    } else if is_welsch(alpha) {
        x / c2 * (-0.5 * u).exp()
    } else {
        let b = (alpha - 2.0).abs();
        let log_s = (u / b).ln_1p();
        x / c2 * ((0.5 * alpha - 1.0) * log_s).exp()
    }
}

/// ∂ρ/∂α on the general branch. At the special values the derivative of
/// the neighbouring general branch is returned.
pub fn rho_grad_alpha(x: f64, alpha: f64, c: f64) -> f64 {
    if is_welsch(alpha) {
        return 0.0;
    }
    let alpha = nudge_off_special(alpha);
    let u = (x / c) * (x / c);
    let b = (alpha - 2.0).abs();
    let sgn = if alpha > 2.0 { 1.0 } else { -1.0 };
    let log_s = (u / b).ln_1p();
    let p = 0.5 * alpha;
    let pow_m1 = (p * log_s).exp_m1();
    let pow = pow_m1 + 1.0;
    let s = 1.0 + u / b;
    // d(b/α)/dα · (s^p − 1)
    let outer = 2.0 * sgn / (alpha * alpha) * pow_m1;
    // (b/α) · s^p · (ln s / 2 + p · d ln s / dα), with d ln s / dα = −sgn·u/(b²s)
    let inner = b / alpha * pow * (0.5 * log_s - p * sgn * u / (b * b * s));
    outer + inner
}

fn nudge_off_special(alpha: f64) -> f64 {
    const EPS: f64 = 1e-7;
    if alpha.abs() < EPS {
        EPS
    } else if (alpha - 2.0).abs() < EPS {
        2.0 - EPS
    } else {
        alpha
    }
}

fn check_scale(c: f64) -> Result<(), LossError> {
    if c > 0.0 && c.is_finite() {
        Ok(())
    } else {
        Err(LossError::NonPositiveScale(c))
    }
}

/// Mean of ρ over a residual vector.
pub fn robust_loss(residuals: &[f64], alpha: f64, c: f64) -> Result<f64, LossError> {
    check_scale(c)?;
    if residuals.is_empty() {
        return Err(LossError::EmptyBatch);
    }
    let sum: f64 = residuals.iter().map(|&x| rho(x, alpha, c)).sum();
    Ok(sum / residuals.len() as f64)
}

/// Mean ρ and its gradient with respect to each residual.
pub fn robust_loss_grad(
    residuals: &[f64],
    alpha: f64,
    c: f64,
) -> Result<(f64, Vec<f64>), LossError> {
    let value = robust_loss(residuals, alpha, c)?;
    let n = residuals.len() as f64;
    let grad = residuals
        .iter()
        .map(|&x| rho_grad_x(x, alpha, c) / n)
        .collect();
    Ok((value, grad))
}

/// Maps the unconstrained optimizer variable onto `[lo, hi]` through a sigmoid.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AlphaMap {
    pub lo: f64,
    pub hi: f64,
}

impl AlphaMap {
    pub fn new(lo: f64, hi: f64) -> Result<Self, LossError> {
        if !(lo.is_finite() && hi.is_finite() && lo >= 0.0 && lo < hi) {
            return Err(LossError::InvalidAlphaBounds(lo, hi));
        }
        Ok(Self { lo, hi })
    }

    pub fn alpha(&self, latent: f64) -> f64 {
        self.lo + (self.hi - self.lo) * sigmoid(latent)
    }

    pub fn dalpha_dlatent(&self, latent: f64) -> f64 {
        let s = sigmoid(latent);
        (self.hi - self.lo) * s * (1.0 - s)
    }

    /// Inverse map; `alpha` is pulled strictly inside the bounds first.
    pub fn latent_for(&self, alpha: f64) -> f64 {
        let span = self.hi - self.lo;
        let t = ((alpha - self.lo) / span).clamp(1e-9, 1.0 - 1e-9);
        (t / (1.0 - t)).ln()
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `Z(α)` by quadrature, for `α ≥ 0`.
pub fn partition_integral(alpha: f64) -> f64 {
    let steps = (QUAD_LIMIT / QUAD_STEP).round() as usize;
    let mut sum = 0.5 * (-rho(0.0, alpha, 1.0)).exp();
    for k in 1..=steps {
        let t = k as f64 * QUAD_STEP;
        let w = if k == steps { 0.5 } else { 1.0 };
        sum += w * (-rho(t.sinh(), alpha, 1.0)).exp() * t.cosh();
    }
    2.0 * QUAD_STEP * sum
}

/// Natural cubic spline of `log Z(α)` on a uniform grid over the bounds.
#[derive(Debug, Clone)]
pub struct LogPartition {
    lo: f64,
    step: f64,
    values: Vec<f64>,
    second: Vec<f64>,
}

impl LogPartition {
    pub fn new(map: AlphaMap) -> Self {
        let intervals = ((map.hi - map.lo) / PARTITION_GRID_STEP).round().max(1.0) as usize;
        let step = (map.hi - map.lo) / intervals as f64;
        let values: Vec<f64> = (0..=intervals)
            .map(|i| partition_integral(map.lo + i as f64 * step).ln())
            .collect();
        let second = natural_spline_second_derivatives(&values, step);
        Self {
            lo: map.lo,
            step,
            values,
            second,
        }
    }

    /// Shared table for the default `[0, 2]` bounds.
    pub fn default_bounds() -> &'static LogPartition {
        static TABLE: OnceLock<LogPartition> = OnceLock::new();
        TABLE.get_or_init(|| LogPartition::new(AlphaMap { lo: 0.0, hi: 2.0 }))
    }

    pub fn covers(&self, map: &AlphaMap) -> bool {
        let hi = self.lo + self.step * (self.values.len() - 1) as f64;
        (self.lo - map.lo).abs() < 1e-12 && (hi - map.hi).abs() < 1e-9
    }

    /// Interpolated `(log Z(α), d log Z / dα)`.
    pub fn eval(&self, alpha: f64) -> (f64, f64) {
        let last = self.values.len() - 1;
        let pos = ((alpha - self.lo) / self.step).clamp(0.0, last as f64);
        let i = (pos.floor() as usize).min(last - 1);
        let h = self.step;
        let a = (i + 1) as f64 - pos;
        let b = pos - i as f64;
        let (y0, y1) = (self.values[i], self.values[i + 1]);
        let (m0, m1) = (self.second[i], self.second[i + 1]);
        let value = a * y0
            + b * y1
            + ((a * a * a - a) * m0 + (b * b * b - b) * m1) * h * h / 6.0;
        let deriv = (y1 - y0) / h - (3.0 * a * a - 1.0) / 6.0 * h * m0
            + (3.0 * b * b - 1.0) / 6.0 * h * m1;
        (value, deriv)
    }
}

// Thomas algorithm for the natural-spline tridiagonal system.
fn natural_spline_second_derivatives(y: &[f64], h: f64) -> Vec<f64> {
    let n = y.len();
    let mut m = vec![0.0; n];
    if n < 3 {
        return m;
    }
    let inner = n - 2;
    let mut diag = vec![4.0; inner];
    let mut rhs: Vec<f64> = (1..n - 1)
        .map(|i| 6.0 * (y[i + 1] - 2.0 * y[i] + y[i - 1]) / (h * h))
        .collect();
    for i in 1..inner {
        let w = 1.0 / diag[i - 1];
        diag[i] -= w;
        rhs[i] -= w * rhs[i - 1];
    }
    m[inner] = rhs[inner - 1] / diag[inner - 1];
    for i in (0..inner - 1).rev() {
        m[i + 1] = (rhs[i] - m[i + 2]) / diag[i];
    }
    m
}

/// Value and gradients of the adaptive NLL.
#[derive(Debug, Clone)]
pub struct NllEval {
    pub value: f64,
    pub alpha: f64,
    pub grad_residuals: Vec<f64>,
    pub grad_latent: f64,
}

/// `mean ρ(x, α(latent), c) + log c + log Z(α)` with gradients.
pub fn robust_nll_grad(
    residuals: &[f64],
    latent_alpha: f64,
    c: f64,
    map: &AlphaMap,
    partition: &LogPartition,
) -> Result<NllEval, LossError> {
    check_scale(c)?;
    if residuals.is_empty() {
        return Err(LossError::EmptyBatch);
    }
    let alpha = map.alpha(latent_alpha);
    let n = residuals.len() as f64;
    let mut data = 0.0;
    let mut d_alpha = 0.0;
    let mut grad_residuals = Vec::with_capacity(residuals.len());
    for &x in residuals {
        data += rho(x, alpha, c);
        d_alpha += rho_grad_alpha(x, alpha, c);
        grad_residuals.push(rho_grad_x(x, alpha, c) / n);
    }
    let (log_z, dlog_z) = partition.eval(alpha);
    let value = data / n + c.ln() + log_z;
    let grad_alpha = d_alpha / n + dlog_z;
    Ok(NllEval {
        value,
        alpha,
        grad_residuals,
        grad_latent: grad_alpha * map.dalpha_dlatent(latent_alpha),
    })
}

pub fn robust_loss_adaptive_nll(
    residuals: &[f64],
    latent_alpha: f64,
    c: f64,
    map: &AlphaMap,
    partition: &LogPartition,
) -> Result<f64, LossError> {
    robust_nll_grad(residuals, latent_alpha, c, map, partition).map(|e| e.value)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::{PI, SQRT_2};

    #[test]
    fn zero_residual_is_zero_everywhere() {
        for &alpha in &[-4.0, -1.0, 0.0, 0.5, 1.0, 2.0, 3.0, f64::INFINITY, f64::NEG_INFINITY] {
            for &c in &[0.01, 0.1, 1.0, 7.0] {
                assert_eq!(rho(0.0, alpha, c), 0.0);
            }
        }
    }

    #[test]
    fn special_branch_values() {
        assert_eq!(robust_loss(&[2.0], 2.0, 1.0).unwrap(), 2.0);
        assert!((robust_loss(&[2.0], 0.0, 1.0).unwrap() - 3f64.ln()).abs() < 1e-15);
        let welsch = robust_loss(&[2.0], f64::INFINITY, 1.0).unwrap();
        assert!((welsch - (1.0 - (-2.0f64).exp())).abs() < 1e-15);
    }

    #[test]
    fn general_branch_approaches_welsch_for_large_negative_alpha() {
        for &x in &[0.3, 1.0, 2.5] {
            let general = rho(x, -1e7, 1.0);
            assert!((general - rho(x, f64::NEG_INFINITY, 1.0)).abs() < 1e-5);
        }
    }

    #[test]
    fn pseudo_huber_at_alpha_one() {
        let x: f64 = 1.7;
        let expected = (x * x + 1.0).sqrt() - 1.0;
        assert!((rho(x, 1.0, 1.0) - expected).abs() < 1e-14);
    }

    #[test]
    fn non_positive_scale_rejected() {
        assert!(matches!(
            robust_loss(&[1.0], 1.0, 0.0),
            Err(LossError::NonPositiveScale(_))
        ));
        assert!(matches!(
            robust_loss(&[1.0], 1.0, -1.0),
            Err(LossError::NonPositiveScale(_))
        ));
    }

    #[test]
    fn partition_known_closed_forms() {
        // α=0: Cauchy, ∫ 1/(x²/2+1) = π√2; α=2: Gaussian √(2π);
        // α=1: 2e·K₁(1) with K₁(1) = 0.6019072301972346.
        assert!((partition_integral(0.0) - PI * SQRT_2).abs() < 1e-10);
        assert!((partition_integral(2.0) - (2.0 * PI).sqrt()).abs() < 1e-12);
        let k1 = 0.601_907_230_197_234_6;
        assert!((partition_integral(1.0) - 2.0 * 1f64.exp() * k1).abs() < 1e-10);
    }

    #[test]
    fn spline_matches_grid_nodes_and_between() {
        let table = LogPartition::default_bounds();
        let (v, _) = table.eval(1.0);
        assert!((v - partition_integral(1.0).ln()).abs() < 1e-12);
        let (v, _) = table.eval(0.555);
        assert!((v - partition_integral(0.555).ln()).abs() < 1e-7);
    }

    #[test]
    fn alpha_map_stays_in_bounds() {
        let map = AlphaMap::new(0.0, 2.0).unwrap();
        for &z in &[-1e3, -40.0, -1.0, 0.0, 1.0, 40.0, 1e3] {
            let a = map.alpha(z);
            assert!((0.0..=2.0).contains(&a));
        }
        assert!((map.alpha(map.latent_for(1.3)) - 1.3).abs() < 1e-12);
        assert!(AlphaMap::new(-1.0, 2.0).is_err());
        assert!(AlphaMap::new(2.0, 2.0).is_err());
    }
}
