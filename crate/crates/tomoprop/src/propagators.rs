//! Structured tomogram propagators of the measured oscillator and particle:
//! an affine map of the (mu, nu) direction plus a Gaussian blur of X, with
//! precision coefficients kappa and xi encoding the measurement accuracy.

use std::f64::consts::PI;

use crate::dynamics::{ForceProfile, MeasurementSpec, ModeAccuracies, OscillatorModel};
use crate::numerics::{integrate_1d, LinearForm2, QGrid, QuadraticForm2};
use crate::tomography::{GaussianTomogram, SampledTomogram, TomogramFamily};
use crate::{Error, Result};

/// Mode sums kappa and xi of the propagator variance.
#[derive(Debug, Clone, Copy)]
pub struct PrecisionCoefficients {
    pub kappa: f64,
    pub xi: f64,
    pub n_terms_used: usize,
    pub tail_estimate: f64,
}

const ZETA4: f64 = PI * PI * PI * PI / 90.0;
const ZETA6: f64 = PI * PI * PI * PI * PI * PI / 945.0;
// alternating sums: sum (-1)^n / n^{2k}
const ALT2: f64 = -PI * PI / 12.0;
const ALT4: f64 = -7.0 * PI * PI * PI * PI / 720.0;
const ALT6: f64 = -31.0 * PI * PI * PI * PI * PI * PI / 30240.0;

fn check_resonance(model: &OscillatorModel, meas: &MeasurementSpec, n: usize) -> Result<()> {
    let omega_n = meas.mode_frequency(n);
    if model.omega > 0.0
        && meas.accuracy(n).is_finite()
        && (omega_n - model.omega).abs() < 1e-9 * omega_n.max(model.omega)
    {
        return Err(Error::Resonance);
    }
    Ok(())
}

/// Raw partial sums of the kappa and xi series over modes 1..=n_terms,
/// without tail corrections.
pub fn precision_coefficients_partial(
    model: &OscillatorModel,
    meas: &MeasurementSpec,
    n_terms: usize,
) -> Result<(f64, f64)> {
    let t = meas.duration;
    let mut kappa = 0.0;
    let mut xi = 0.0;
    for n in 1..=n_terms {
        let da = meas.accuracy(n);
        if !da.is_finite() {
            continue;
        }
        check_resonance(model, meas, n)?;
        let omega_n2 = meas.mode_frequency(n).powi(2);
        let d = omega_n2 - model.omega * model.omega;
        let term = 2.0 / (t * t) * omega_n2 / (da * da * d * d);
        kappa += term;
        xi += if n % 2 == 0 { term } else { -term };
    }
    Ok((kappa, xi))
}

/// Precision coefficients: the mode sums are summed directly to a cap and
/// completed with analytic power tails, so the quoted `tail_estimate` is the
/// residual after the correction.
pub fn precision_coefficients(
    model: &OscillatorModel,
    meas: &MeasurementSpec,
    tol: f64,
) -> Result<PrecisionCoefficients> {
    match &meas.accuracies {
        ModeAccuracies::PerMode(list) => {
            let (kappa, xi) = precision_coefficients_partial(model, meas, list.len())?;
            Ok(PrecisionCoefficients {
                kappa,
                xi,
                n_terms_used: list.len(),
                tail_estimate: 0.0,
            })
        }
        ModeAccuracies::Uniform(da) if !da.is_finite() => Ok(PrecisionCoefficients {
            kappa: 0.0,
            xi: 0.0,
            n_terms_used: 0,
            tail_estimate: 0.0,
        }),
        ModeAccuracies::Uniform(da) => {
            // Terms are (2 / (pi^2 Delta a^2)) n^2 / (n^2 - c)^2 with
            // c = (omega T / pi)^2; for n^2 >> c expand in c/n^2 and use
            // zeta-function tails up to third order.
            let c = (model.omega * meas.duration / PI).powi(2);
            let scale = 2.0 / (PI * PI * da * da);
            let mut n_terms = (4.0 * c.sqrt() + 32.0).ceil() as usize;
            loop {
                let (mut kappa, mut xi) = precision_coefficients_partial(model, meas, n_terms)?;
                let (mut p2, mut p4, mut p6) = (0.0, 0.0, 0.0);
                let (mut a2, mut a4, mut a6) = (0.0, 0.0, 0.0);
                for n in 1..=n_terms {
                    let sgn = if n % 2 == 0 { 1.0 } else { -1.0 };
                    let n2 = (n * n) as f64;
                    p2 += 1.0 / n2;
                    p4 += 1.0 / (n2 * n2);
                    p6 += 1.0 / (n2 * n2 * n2);
                    a2 += sgn / n2;
                    a4 += sgn / (n2 * n2);
                    a6 += sgn / (n2 * n2 * n2);
                }
                let (r2, r4, r6) = (PI * PI / 6.0 - p2, ZETA4 - p4, ZETA6 - p6);
                let (s2, s4, s6) = (ALT2 - a2, ALT4 - a4, ALT6 - a6);
                kappa += scale * (r2 + 2.0 * c * r4 + 3.0 * c * c * r6);
                xi += scale * (s2 + 2.0 * c * s4 + 3.0 * c * c * s6);
                let nf = n_terms as f64;
                let tail_estimate = scale * 4.0 * c.powi(3) / (7.0 * nf.powi(7))
                    / (1.0 - c / (nf * nf)).max(0.5);
                if tail_estimate <= tol {
                    return Ok(PrecisionCoefficients {
                        kappa,
                        xi,
                        n_terms_used: n_terms,
                        tail_estimate,
                    });
                }
                if n_terms >= 1 << 22 {
                    return Err(Error::Truncation {
                        tail: tail_estimate,
                        budget: tol,
                    });
                }
                n_terms *= 2;
            }
        }
    }
}

/// Tomogram propagator in structural form: the direction map L (delta
/// factors), the X-blur variance as a quadratic form in (mu, nu), and the
/// force-induced mean shift as a linear form.
#[derive(Debug, Clone)]
pub struct StructuredPropagator {
    map_matrix: [[f64; 2]; 2],
    sigma2: QuadraticForm2,
    mean_shift: LinearForm2,
    duration: f64,
}

impl StructuredPropagator {
    pub fn new(
        map_matrix: [[f64; 2]; 2],
        sigma2: QuadraticForm2,
        mean_shift: LinearForm2,
        duration: f64,
    ) -> Result<Self> {
        let det = map_matrix[0][0] * map_matrix[1][1] - map_matrix[0][1] * map_matrix[1][0];
        if (det - 1.0).abs() > 1e-12 {
            return Err(Error::Domain(format!(
                "direction map must be symplectic, det = {det}"
            )));
        }
        if !sigma2.is_variance() {
            return Err(Error::Domain("sigma2 form must be nonnegative".into()));
        }
        if !(duration > 0.0) {
            return Err(Error::Domain(format!("duration {duration} must be > 0")));
        }
        Ok(Self {
            map_matrix,
            sigma2,
            mean_shift,
            duration,
        })
    }

    pub fn map_matrix(&self) -> &[[f64; 2]; 2] {
        &self.map_matrix
    }

    pub fn sigma2_form(&self) -> &QuadraticForm2 {
        &self.sigma2
    }

    pub fn mean_shift_form(&self) -> &LinearForm2 {
        &self.mean_shift
    }

    pub fn duration(&self) -> f64 {
        self.duration
    }

    /// Mapped direction (mu', nu') entering the delta factors.
    pub fn map_direction(&self, mu: f64, nu: f64) -> (f64, f64) {
        (
            self.map_matrix[0][0] * mu + self.map_matrix[0][1] * nu,
            self.map_matrix[1][0] * mu + self.map_matrix[1][1] * nu,
        )
    }

    pub fn sigma2(&self, mu: f64, nu: f64) -> f64 {
        self.sigma2.eval(mu, nu)
    }

    pub fn mean_shift(&self, mu: f64, nu: f64) -> f64 {
        self.mean_shift.eval(mu, nu)
    }
}

fn force_moment(force: &ForceProfile, weight: impl Fn(f64) -> f64, t_total: f64) -> Result<f64> {
    match force {
        ForceProfile::Zero => Ok(0.0),
        force => integrate_1d(|t| force.eval(t) * weight(t), 0.0, t_total, 1e-10),
    }
}

/// Propagator of the continuously measured driven oscillator.
pub fn oscillator_measured_propagator(
    model: &OscillatorModel,
    meas: &MeasurementSpec,
) -> Result<StructuredPropagator> {
    let w = model.omega;
    if !(w > 0.0) {
        return Err(Error::Domain(
            "oscillator propagator needs omega > 0; use the particle form".into(),
        ));
    }
    let (m, t_total) = (model.mass, meas.duration);
    let (sin_wt, cos_wt) = (w * t_total).sin_cos();
    if !model.force.is_zero() && sin_wt.abs() < 1e-9 {
        return Err(Error::Caustic);
    }
    let pc = precision_coefficients(model, meas, 1e-10)?;
    let map_matrix = [
        [cos_wt, -m * w * sin_wt],
        [sin_wt / (m * w), cos_wt],
    ];
    let sigma2 = QuadraticForm2::new(
        2.0 * pc.kappa * sin_wt * sin_wt / (m * m * w * w),
        2.0 * pc.kappa * (2.0 * sin_wt * cos_wt) / (m * w) - 4.0 * pc.xi * sin_wt / (m * w),
        2.0 * pc.kappa * (1.0 + cos_wt * cos_wt) - 4.0 * pc.xi * cos_wt,
    );
    let alpha = force_moment(&model.force, |t| (w * (t_total - t)).sin() / (m * w), t_total)?;
    let beta = force_moment(
        &model.force,
        |t| ((w * (t_total - t)).sin() * cos_wt + (w * t).sin()) / sin_wt,
        t_total,
    )?;
    StructuredPropagator::new(map_matrix, sigma2, LinearForm2::new(alpha, beta), t_total)
}

/// Propagator of the continuously measured free particle (omega = 0,
/// uniform accuracy).
pub fn particle_measured_propagator(
    model: &OscillatorModel,
    meas: &MeasurementSpec,
) -> Result<StructuredPropagator> {
    if model.omega != 0.0 {
        return Err(Error::Domain(
            "particle propagator needs omega = 0".into(),
        ));
    }
    let da = match &meas.accuracies {
        ModeAccuracies::Uniform(da) => *da,
        ModeAccuracies::PerMode(_) => {
            return Err(Error::Domain(
                "particle propagator needs a uniform accuracy".into(),
            ))
        }
    };
    let (m, t_total) = (model.mass, meas.duration);
    let map_matrix = [[1.0, 0.0], [t_total / m, 1.0]];
    let inv = if da.is_finite() { 1.0 / (da * da) } else { 0.0 };
    let sigma2 = QuadraticForm2::new(
        2.0 * t_total * t_total * inv / (3.0 * m * m),
        2.0 * t_total * inv / m,
        2.0 * inv,
    );
    let alpha = force_moment(&model.force, |t| (t_total - t) / m, t_total)?;
    let beta = force_moment(&model.force, |_| 1.0, t_total)?;
    StructuredPropagator::new(map_matrix, sigma2, LinearForm2::new(alpha, beta), t_total)
}

/// Applies the propagator to a Gaussian tomogram, entirely in the form
/// algebra: `s2_out = 2 sigma^2 + s2_in(L(mu, nu))`, mean pulled back
/// through L and shifted by -Xbar.
pub fn apply_propagator_gaussian(
    prop: &StructuredPropagator,
    tomo: &GaussianTomogram,
) -> Result<GaussianTomogram> {
    let s2 = prop
        .sigma2_form()
        .scaled(2.0)
        .plus(&tomo.variance_form().composed_with(prop.map_matrix()));
    let mean = tomo
        .mean_form()
        .composed_with(prop.map_matrix())
        .minus(prop.mean_shift_form());
    GaussianTomogram::new(s2, mean, tomo.mean_offset())
}

/// Applies the propagator to a sampled tomogram family at one direction:
/// the input is taken at the mapped direction and the X dependence is
/// convolved with the propagator Gaussian.
pub fn apply_propagator_sampled(
    prop: &StructuredPropagator,
    tomo: &dyn TomogramFamily,
    mu: f64,
    nu: f64,
    x_grid: &QGrid,
) -> Result<SampledTomogram> {
    let (mu_p, nu_p) = prop.map_direction(mu, nu);
    let input: Vec<f64> = x_grid.points().map(|x| tomo.eval(x, mu_p, nu_p)).collect();
    let out = crate::numerics::gaussian_convolve(
        x_grid,
        &input,
        -prop.mean_shift(mu, nu),
        prop.sigma2(mu, nu),
    )?;
    SampledTomogram::new(mu, nu, x_grid.clone(), out)
}

/// Closed-form evolved tomogram of the Gaussian packet (p, l) under the
/// measured-particle propagator, assembled coefficient by coefficient
/// (independent of the apply path).
pub fn evolved_gaussian_tomogram(
    p: f64,
    l: f64,
    model: &OscillatorModel,
    meas: &MeasurementSpec,
) -> Result<GaussianTomogram> {
    if model.omega != 0.0 {
        return Err(Error::Domain("closed form covers the particle case".into()));
    }
    let da = match &meas.accuracies {
        ModeAccuracies::Uniform(da) => *da,
        ModeAccuracies::PerMode(_) => {
            return Err(Error::Domain("closed form needs a uniform accuracy".into()))
        }
    };
    if !(l > 0.0) {
        return Err(Error::Domain(format!("packet width {l} must be > 0")));
    }
    let (m, t_total) = (model.mass, meas.duration);
    let inv = if da.is_finite() { 1.0 / (da * da) } else { 0.0 };
    let r = t_total / m;
    // 2 sigma^2 + mu^2 l^2 + (nu + mu T/m)^2 / l^2, expanded in (mu, nu)
    let s2 = QuadraticForm2::new(
        4.0 * r * r * inv / 3.0 + l * l + r * r / (l * l),
        4.0 * r * inv + 2.0 * r / (l * l),
        4.0 * inv + 1.0 / (l * l),
    );
    let alpha = force_moment(&model.force, |t| (t_total - t) / m, t_total)?;
    let beta = force_moment(&model.force, |_| 1.0, t_total)?;
    // mean: (nu + mu T/m) p - Xbar
    let mean = LinearForm2::new(r * p - alpha, p - beta);
    GaussianTomogram::new(s2, mean, 0.0)
}
