//! Shared numerical substrate: uniform grids, quadratic/linear forms on the
//! (mu, nu) plane, adaptive Gauss-Kronrod quadrature and 1-D Gaussian
//! convolution.

use num_complex::Complex64;

use crate::{Error, Result};

/// Default absolute quadrature tolerance used when the caller does not
/// override it. Acceptance checks all sit at 1e-6 or looser.
pub const DEFAULT_TOL: f64 = 1e-8;

/// Uniform coordinate grid on `[q_min, q_max]` with `n_points` nodes.
#[derive(Debug, Clone, PartialEq)]
pub struct QGrid {
    q_min: f64,
    q_max: f64,
    n_points: usize,
}

impl QGrid {
    pub fn new(q_min: f64, q_max: f64, n_points: usize) -> Result<Self> {
        if !(q_max > q_min) || !q_min.is_finite() || !q_max.is_finite() {
            return Err(Error::Domain(format!(
                "invalid grid bounds [{q_min}, {q_max}]"
            )));
        }
        if n_points < 8 {
            return Err(Error::Domain(format!(
                "grid needs at least 8 points, got {n_points}"
            )));
        }
        Ok(Self {
            q_min,
            q_max,
            n_points,
        })
    }

    pub fn q_min(&self) -> f64 {
        self.q_min
    }

    pub fn q_max(&self) -> f64 {
        self.q_max
    }

    pub fn n_points(&self) -> usize {
        self.n_points
    }

    pub fn spacing(&self) -> f64 {
        (self.q_max - self.q_min) / (self.n_points - 1) as f64
    }

    pub fn point(&self, i: usize) -> f64 {
        self.q_min + self.spacing() * i as f64
    }

    pub fn points(&self) -> impl Iterator<Item = f64> + '_ {
        (0..self.n_points).map(|i| self.point(i))
    }

    /// Trapezoid rule over samples on this grid.
    pub fn trapezoid(&self, values: &[f64]) -> f64 {
        assert_eq!(values.len(), self.n_points);
        let h = self.spacing();
        let inner: f64 = values[1..values.len() - 1].iter().sum();
        h * (inner + 0.5 * (values[0] + values[values.len() - 1]))
    }

    /// Linear interpolation of samples at an arbitrary abscissa; zero outside
    /// the grid.
    pub fn interpolate(&self, values: &[f64], x: f64) -> f64 {
        assert_eq!(values.len(), self.n_points);
        if x < self.q_min || x > self.q_max {
            return 0.0;
        }
        let s = (x - self.q_min) / self.spacing();
        let i = (s.floor() as usize).min(self.n_points - 2);
        let frac = s - i as f64;
        values[i] * (1.0 - frac) + values[i + 1] * frac
    }
}

/// A point (X, mu, nu) of the tomographic family. The direction (mu, nu)
/// must not be the degenerate (0, 0).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PhasePoint {
    pub x: f64,
    pub mu: f64,
    pub nu: f64,
}

impl PhasePoint {
    pub fn new(x: f64, mu: f64, nu: f64) -> Result<Self> {
        if mu == 0.0 && nu == 0.0 {
            return Err(Error::Domain(
                "degenerate direction (mu, nu) = (0, 0)".into(),
            ));
        }
        if !(x.is_finite() && mu.is_finite() && nu.is_finite()) {
            return Err(Error::Domain("non-finite phase point".into()));
        }
        Ok(Self { x, mu, nu })
    }

    pub fn scaled(&self, k: f64) -> Self {
        Self {
            x: k * self.x,
            mu: k * self.mu,
            nu: k * self.nu,
        }
    }
}

/// Quadratic form `a mu^2 + b mu nu + c nu^2` on the (mu, nu) plane.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuadraticForm2 {
    pub a: f64,
    pub b: f64,
    pub c: f64,
}

impl QuadraticForm2 {
    pub const ZERO: Self = Self {
        a: 0.0,
        b: 0.0,
        c: 0.0,
    };

    pub fn new(a: f64, b: f64, c: f64) -> Self {
        Self { a, b, c }
    }

    pub fn eval(&self, mu: f64, nu: f64) -> f64 {
        self.a * mu * mu + self.b * mu * nu + self.c * nu * nu
    }

    /// Whether the form is a valid variance, i.e. positive semidefinite.
    pub fn is_variance(&self) -> bool {
        self.a >= 0.0 && self.c >= 0.0 && 4.0 * self.a * self.c >= self.b * self.b
    }

    pub fn scaled(&self, s: f64) -> Self {
        Self::new(s * self.a, s * self.b, s * self.c)
    }

    pub fn plus(&self, other: &Self) -> Self {
        Self::new(self.a + other.a, self.b + other.b, self.c + other.c)
    }

    /// Pull-back through a linear map of the (mu, nu) plane:
    /// the returned form evaluates `self` at `map * (mu, nu)`.
    pub fn composed_with(&self, map: &[[f64; 2]; 2]) -> Self {
        let [[l00, l01], [l10, l11]] = *map;
        Self::new(
            self.a * l00 * l00 + self.b * l00 * l10 + self.c * l10 * l10,
            2.0 * self.a * l00 * l01 + self.b * (l00 * l11 + l01 * l10) + 2.0 * self.c * l10 * l11,
            self.a * l01 * l01 + self.b * l01 * l11 + self.c * l11 * l11,
        )
    }
}

/// Linear form `alpha mu + beta nu` on the (mu, nu) plane.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinearForm2 {
    pub alpha: f64,
    pub beta: f64,
}

impl LinearForm2 {
    pub const ZERO: Self = Self {
        alpha: 0.0,
        beta: 0.0,
    };

    pub fn new(alpha: f64, beta: f64) -> Self {
        Self { alpha, beta }
    }

    pub fn eval(&self, mu: f64, nu: f64) -> f64 {
        self.alpha * mu + self.beta * nu
    }

    pub fn plus(&self, other: &Self) -> Self {
        Self::new(self.alpha + other.alpha, self.beta + other.beta)
    }

    pub fn minus(&self, other: &Self) -> Self {
        Self::new(self.alpha - other.alpha, self.beta - other.beta)
    }

    /// Pull-back through a linear map of the (mu, nu) plane.
    pub fn composed_with(&self, map: &[[f64; 2]; 2]) -> Self {
        let [[l00, l01], [l10, l11]] = *map;
        Self::new(
            self.alpha * l00 + self.beta * l10,
            self.alpha * l01 + self.beta * l11,
        )
    }
}

/// Scalar values the quadrature routines can accumulate.
pub trait Integrand:
    Copy + std::ops::Add<Output = Self> + std::ops::Sub<Output = Self> + Send
{
    fn zero() -> Self;
    fn scale(self, s: f64) -> Self;
    fn norm(self) -> f64;
}

impl Integrand for f64 {
    fn zero() -> Self {
        0.0
    }
    fn scale(self, s: f64) -> Self {
        self * s
    }
    fn norm(self) -> f64 {
        self.abs()
    }
}

impl Integrand for Complex64 {
    fn zero() -> Self {
        Complex64::new(0.0, 0.0)
    }
    fn scale(self, s: f64) -> Self {
        self * s
    }
    fn norm(self) -> f64 {
        Complex64::norm(self)
    }
}

// Gauss-Kronrod 7-15 nodes and weights on [-1, 1].
const XGK: [f64; 8] = [
    0.991455371120813,
    0.949107912342759,
    0.864864423359769,
    0.741531185599394,
    0.586087235467691,
    0.405845151377397,
    0.207784955007898,
    0.0,
];
const WGK: [f64; 8] = [
    0.022935322010529,
    0.063092092629979,
    0.104790010322250,
    0.140653259715525,
    0.169004726639267,
    0.190350578064785,
    0.204432940075298,
    0.209482141084728,
];
const WG: [f64; 4] = [
    0.129484966168870,
    0.279705391489277,
    0.381830050505119,
    0.417959183673469,
];

fn gk15<T: Integrand>(f: &impl Fn(f64) -> T, lo: f64, hi: f64) -> (T, f64) {
    let c = 0.5 * (lo + hi);
    let half = 0.5 * (hi - lo);
    let fc = f(c);
    let mut kronrod = fc.scale(WGK[7]);
    let mut gauss = fc.scale(WG[3]);
    for j in 0..7 {
        let dx = half * XGK[j];
        let pair = f(c - dx) + f(c + dx);
        kronrod = kronrod + pair.scale(WGK[j]);
        if j % 2 == 1 {
            gauss = gauss + pair.scale(WG[j / 2]);
        }
    }
    let kronrod = kronrod.scale(half);
    let gauss = gauss.scale(half);
    (kronrod, (kronrod - gauss).norm())
}

const MAX_DEPTH: u32 = 40;

fn adapt<T: Integrand>(f: &impl Fn(f64) -> T, lo: f64, hi: f64, tol: f64, depth: u32) -> Result<T> {
    let (value, err) = gk15(f, lo, hi);
    if err <= tol || err <= 1e-16 * value.norm() {
        return Ok(value);
    }
    if depth >= MAX_DEPTH {
        return Err(Error::Quadrature(format!(
            "error estimate {err:.3e} above tolerance {tol:.3e} on [{lo:.6}, {hi:.6}]"
        )));
    }
    let mid = 0.5 * (lo + hi);
    let left = adapt(f, lo, mid, 0.5 * tol, depth + 1)?;
    let right = adapt(f, mid, hi, 0.5 * tol, depth + 1)?;
    Ok(left + right)
}

/// Adaptive Gauss-Kronrod quadrature of `f` over `[lo, hi]` with absolute
/// error target `tol`.
pub fn integrate_1d<T: Integrand>(f: impl Fn(f64) -> T, lo: f64, hi: f64, tol: f64) -> Result<T> {
    if !(tol > 0.0) {
        return Err(Error::Domain("quadrature tolerance must be positive".into()));
    }
    if lo == hi {
        return Ok(T::zero());
    }
    adapt(&f, lo, hi, tol, 0)
}

/// Quadrature over the whole real line through the substitution
/// `x = scale * atanh(t)`, suited to Gaussian-tailed integrands. `scale`
/// should be of the order of the integrand's width.
pub fn integrate_real_line<T: Integrand>(f: impl Fn(f64) -> T, scale: f64, tol: f64) -> Result<T> {
    if !(scale > 0.0) {
        return Err(Error::Domain("substitution scale must be positive".into()));
    }
    integrate_1d(
        move |t: f64| {
            if t.abs() >= 1.0 - 1e-12 {
                return T::zero();
            }
            let x = scale * t.atanh();
            let jac = scale / (1.0 - t * t);
            f(x).scale(jac)
        },
        -1.0,
        1.0,
        tol,
    )
}

/// Convolves samples of `f` on `grid` with a Gaussian kernel:
/// `g(X) = integral f(X') N(X'; X - mean_shift, variance) dX'`.
///
/// Zero variance is handled as an exact shift by `mean_shift` so the
/// no-measurement delta limit stays representable.
pub fn gaussian_convolve(
    grid: &QGrid,
    values: &[f64],
    mean_shift: f64,
    variance: f64,
) -> Result<Vec<f64>> {
    assert_eq!(values.len(), grid.n_points());
    if variance < 0.0 {
        return Err(Error::Domain(format!("negative variance {variance}")));
    }
    if variance == 0.0 {
        if mean_shift == 0.0 {
            return Ok(values.to_vec());
        }
        return Ok(grid
            .points()
            .map(|x| grid.interpolate(values, x - mean_shift))
            .collect());
    }

    let sigma = variance.sqrt();
    let h = grid.spacing();
    // Estimate the mass the kernel would smear past the grid edges: each
    // sample a distance d from an edge leaks at most exp(-d^2 / (2 v)) of
    // its mass (d shortened by the shift, which moves mass toward one edge).
    let margin = 8.0 * sigma + mean_shift.abs();
    let guard = ((margin / h).ceil() as usize).min(grid.n_points() / 2);
    let n_pts = grid.n_points();
    let mut loss = 0.0;
    for j in (0..guard).chain(n_pts - guard..n_pts) {
        let dist = (j.min(n_pts - 1 - j) as f64) * h;
        let d = (dist - mean_shift.abs()).max(0.0);
        loss += h * values[j].abs() * (-d * d / (2.0 * variance)).exp();
    }
    if loss > 1e-9 {
        return Err(Error::Coverage(format!(
            "an estimated mass {loss:.3e} would leave the grid"
        )));
    }

    // Kernel sampled on the grid offsets and renormalized to unit discrete
    // mass, which makes the convolution conserve the trapezoid integral
    // exactly in the interior-supported case.
    let reach = ((8.0 * sigma / h).ceil() as i64).max(1);
    let norm = 1.0 / (2.0 * std::f64::consts::PI * variance).sqrt();
    let offset = mean_shift / h;
    let n = grid.n_points();
    let out = crate::parallel::map_indexed(n, |i| {
        let mut acc = 0.0;
        let mut wsum = 0.0;
        let lo = (i as i64 - reach - offset.ceil() as i64 - 1).max(0);
        let hi = (i as i64 + reach - offset.floor() as i64 + 1).min(n as i64 - 1);
        for j in lo..=hi {
            let d = (j - i as i64) as f64 + offset;
            let w = norm * (-0.5 * d * d * h * h / variance).exp();
            acc += values[j as usize] * w;
            wsum += w;
        }
        if wsum > 0.0 {
            acc / wsum
        } else {
            0.0
        }
    });
    Ok(out)
}
