//! Measured-evolution amplitudes for quadratic systems: classical boundary
//! trajectories, Fourier mode amplitudes, effective complex frequencies and
//! the analytic weighted transition amplitude.

use nalgebra::DMatrix;
use num_complex::Complex64;
use std::f64::consts::PI;
use std::sync::Arc;

use crate::numerics::{integrate_1d, QGrid};
use crate::{Error, Result};

const ZETA2: f64 = PI * PI / 6.0;
const ETA2: f64 = PI * PI / 12.0; // sum of (-1)^(n+1) / n^2

/// External driving force f(t).
#[derive(Clone)]
pub enum ForceProfile {
    Zero,
    Constant(f64),
    /// Piecewise-linear interpolation of (t, f) samples; clamped outside.
    Table(Vec<(f64, f64)>),
    Custom(Arc<dyn Fn(f64) -> f64 + Send + Sync>),
}

impl std::fmt::Debug for ForceProfile {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Self::Zero => write!(f, "Zero"),
            Self::Constant(c) => write!(f, "Constant({c})"),
            Self::Table(t) => write!(f, "Table({} samples)", t.len()),
            Self::Custom(_) => write!(f, "Custom"),
        }
    }
}

impl ForceProfile {
    pub fn eval(&self, t: f64) -> f64 {
        match self {
            Self::Zero => 0.0,
            Self::Constant(c) => *c,
            Self::Table(samples) => {
                if samples.is_empty() {
                    return 0.0;
                }
                if t <= samples[0].0 {
                    return samples[0].1;
                }
                if t >= samples[samples.len() - 1].0 {
                    return samples[samples.len() - 1].1;
                }
                let i = samples.partition_point(|(ti, _)| *ti <= t) - 1;
                let (t0, f0) = samples[i];
                let (t1, f1) = samples[i + 1];
                f0 + (f1 - f0) * (t - t0) / (t1 - t0)
            }
            Self::Custom(f) => f(t),
        }
    }

    pub fn is_zero(&self) -> bool {
        matches!(self, Self::Zero)
    }
}

/// Driven oscillator `H = p^2/(2m) + m omega^2 q^2 / 2 - q f(t)`;
/// `omega = 0` designates the free particle.
#[derive(Debug, Clone)]
pub struct OscillatorModel {
    pub mass: f64,
    pub omega: f64,
    pub force: ForceProfile,
}

impl OscillatorModel {
    pub fn new(mass: f64, omega: f64, force: ForceProfile) -> Result<Self> {
        if !(mass > 0.0) {
            return Err(Error::Domain(format!("mass {mass} must be > 0")));
        }
        if !(omega >= 0.0) {
            return Err(Error::Domain(format!("omega {omega} must be >= 0")));
        }
        Ok(Self { mass, omega, force })
    }

    pub fn free_particle(mass: f64) -> Self {
        Self::new(mass, 0.0, ForceProfile::Zero).expect("valid model")
    }
}

/// Per-mode measurement accuracies.
#[derive(Debug, Clone)]
pub enum ModeAccuracies {
    /// Finite list; modes beyond the list are unmeasured.
    PerMode(Vec<f64>),
    /// The same accuracy for every mode (the direct-measurement premise).
    Uniform(f64),
}

/// Spectral position measurement over `(0, T)`: mode amplitudes `q_n` are
/// measured with accuracies `Delta a_n`. `n_modes` caps the mode sums that
/// have no closed form.
#[derive(Debug, Clone)]
pub struct MeasurementSpec {
    pub duration: f64,
    pub accuracies: ModeAccuracies,
    pub n_modes: usize,
}

impl MeasurementSpec {
    pub fn new(duration: f64, accuracies: ModeAccuracies, n_modes: usize) -> Result<Self> {
        if !(duration > 0.0) {
            return Err(Error::Domain(format!("duration {duration} must be > 0")));
        }
        if n_modes == 0 {
            return Err(Error::Domain("n_modes must be at least 1".into()));
        }
        let ok = match &accuracies {
            ModeAccuracies::PerMode(list) => list.iter().all(|a| *a > 0.0),
            ModeAccuracies::Uniform(a) => *a > 0.0,
        };
        if !ok {
            return Err(Error::Domain("all accuracies must be positive".into()));
        }
        Ok(Self {
            duration,
            accuracies,
            n_modes,
        })
    }

    /// No measurement at all (every accuracy infinite).
    pub fn none(duration: f64) -> Self {
        Self::new(duration, ModeAccuracies::Uniform(f64::INFINITY), 1).expect("valid spec")
    }

    /// Mode frequency `Omega_n = pi n / T` (1-based).
    pub fn mode_frequency(&self, n: usize) -> f64 {
        PI * n as f64 / self.duration
    }

    /// Accuracy of mode n (1-based); infinity for unmeasured modes.
    pub fn accuracy(&self, n: usize) -> f64 {
        match &self.accuracies {
            ModeAccuracies::PerMode(list) => list.get(n - 1).copied().unwrap_or(f64::INFINITY),
            ModeAccuracies::Uniform(a) => *a,
        }
    }

    /// Number of modes carrying a finite accuracy; `None` when every mode is
    /// measured (uniform case).
    pub fn finite_mode_count(&self) -> Option<usize> {
        match &self.accuracies {
            ModeAccuracies::PerMode(list) => {
                Some(list.iter().filter(|a| a.is_finite()).count().min(list.len()))
            }
            ModeAccuracies::Uniform(a) => {
                if a.is_finite() {
                    None
                } else {
                    Some(0)
                }
            }
        }
    }

    /// Normalization of the outcome measure for mode n, chosen so that the
    /// generalized unitarity integral of U^dag U over outcomes is exactly
    /// the identity: `da_n * sqrt(2 / (pi Delta a_n^2))`.
    pub fn outcome_measure_weight(&self, n: usize) -> f64 {
        let da = self.accuracy(n);
        if da.is_finite() {
            (2.0 / (PI * da * da)).sqrt()
        } else {
            0.0
        }
    }
}

/// Measurement record: `a_n` is the outcome for mode amplitude `q_n`;
/// missing entries are zero.
#[derive(Debug, Clone, Default)]
pub struct SpectralOutcome {
    amplitudes: Vec<f64>,
}

impl SpectralOutcome {
    pub fn new(amplitudes: Vec<f64>) -> Result<Self> {
        if amplitudes.iter().any(|a| !a.is_finite()) {
            return Err(Error::Domain("outcome amplitudes must be finite".into()));
        }
        Ok(Self { amplitudes })
    }

    pub fn zero() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.amplitudes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.amplitudes.is_empty()
    }

    /// Outcome for mode n (1-based), zero when unrecorded.
    pub fn amplitude(&self, n: usize) -> f64 {
        self.amplitudes.get(n - 1).copied().unwrap_or(0.0)
    }
}

#[derive(Debug, Clone, Copy)]
enum Homogeneous {
    /// `a cos(omega t) + b sin(omega t)`
    Trig { a: f64, b: f64 },
    /// `a + b t`
    Linear { a: f64, b: f64 },
}

/// Classical boundary trajectory: solution of
/// `eta'' + omega^2 eta = f/m` with `eta(0) = q_i`, `eta(T) = q_f`.
#[derive(Debug, Clone)]
pub struct ClassicalTrajectory {
    pub q_i: f64,
    pub q_f: f64,
    pub duration: f64,
    mass: f64,
    omega: f64,
    force: ForceProfile,
    hom: Homogeneous,
}

const CAUSTIC_EPS: f64 = 1e-9;

impl ClassicalTrajectory {
    fn particular(&self, t: f64) -> f64 {
        if self.force.is_zero() || t == 0.0 {
            return 0.0;
        }
        let (m, w) = (self.mass, self.omega);
        match (&self.force, w > 0.0) {
            (ForceProfile::Constant(f0), true) => f0 / (m * w * w) * (1.0 - (w * t).cos()),
            (ForceProfile::Constant(f0), false) => f0 * t * t / (2.0 * m),
            (force, true) => integrate_1d(
                |s| (w * (t - s)).sin() * force.eval(s) / (m * w),
                0.0,
                t,
                1e-10,
            )
            .expect("smooth Duhamel integrand"),
            (force, false) => {
                integrate_1d(|s| (t - s) * force.eval(s) / m, 0.0, t, 1e-10)
                    .expect("smooth Duhamel integrand")
            }
        }
    }

    fn particular_velocity(&self, t: f64) -> f64 {
        if self.force.is_zero() || t == 0.0 {
            return 0.0;
        }
        let (m, w) = (self.mass, self.omega);
        match (&self.force, w > 0.0) {
            (ForceProfile::Constant(f0), true) => f0 / (m * w) * (w * t).sin(),
            (ForceProfile::Constant(f0), false) => f0 * t / m,
            (force, true) => {
                integrate_1d(|s| (w * (t - s)).cos() * force.eval(s) / m, 0.0, t, 1e-10)
                    .expect("smooth Duhamel integrand")
            }
            (force, false) => integrate_1d(|s| force.eval(s) / m, 0.0, t, 1e-10)
                .expect("smooth Duhamel integrand"),
        }
    }

    pub fn position(&self, t: f64) -> f64 {
        let hom = match self.hom {
            Homogeneous::Trig { a, b } => a * (self.omega * t).cos() + b * (self.omega * t).sin(),
            Homogeneous::Linear { a, b } => a + b * t,
        };
        hom + self.particular(t)
    }

    pub fn velocity(&self, t: f64) -> f64 {
        let hom = match self.hom {
            Homogeneous::Trig { a, b } => {
                self.omega * (b * (self.omega * t).cos() - a * (self.omega * t).sin())
            }
            Homogeneous::Linear { b, .. } => b,
        };
        hom + self.particular_velocity(t)
    }

    /// Sine-series amplitudes `eta_n = (2/T) int_0^T eta(t) sin(Omega_n t) dt`
    /// for n = 1..=n_modes. Closed forms for unforced trajectories,
    /// quadrature at 1e-10 otherwise.
    pub fn fourier_amplitudes(&self, n_modes: usize) -> Result<Vec<f64>> {
        let t_total = self.duration;
        let w = self.omega;
        (1..=n_modes)
            .map(|n| {
                let omega_n = PI * n as f64 / t_total;
                if w > 0.0 && (omega_n - w).abs() < 1e-12 * omega_n.max(1.0) {
                    return Err(Error::Resonance);
                }
                let sign = if n % 2 == 0 { 1.0 } else { -1.0 };
                match (&self.force, self.hom) {
                    (ForceProfile::Zero, Homogeneous::Linear { a, b }) => {
                        // (2/(pi n)) (q_i - (-1)^n q_f) for the straight line
                        let _ = (a, b);
                        Ok(2.0 / (PI * n as f64) * (self.q_i - sign * self.q_f))
                    }
                    (ForceProfile::Zero, Homogeneous::Trig { a, b }) => {
                        let d = omega_n * omega_n - w * w;
                        let cos_part = omega_n * (1.0 - sign * (w * t_total).cos()) / d;
                        let sin_part = -sign * omega_n * (w * t_total).sin() / d;
                        Ok(2.0 / t_total * (a * cos_part + b * sin_part))
                    }
                    _ => integrate_1d(
                        |t| 2.0 / t_total * self.position(t) * (omega_n * t).sin(),
                        0.0,
                        t_total,
                        1e-10,
                    ),
                }
            })
            .collect()
    }

    /// Classical action along the trajectory, via the boundary form
    /// `S = (m/2)(q_f eta'(T) - q_i eta'(0)) + (1/2) int f eta dt`.
    pub fn action(&self) -> Result<f64> {
        let boundary = self.mass / 2.0
            * (self.q_f * self.velocity(self.duration) - self.q_i * self.velocity(0.0));
        if self.force.is_zero() {
            return Ok(boundary);
        }
        let drive = integrate_1d(
            |t| 0.5 * self.force.eval(t) * self.position(t),
            0.0,
            self.duration,
            1e-10,
        )?;
        Ok(boundary + drive)
    }
}

/// Solves the classical boundary problem over `(0, T)`.
pub fn classical_trajectory(
    model: &OscillatorModel,
    q_i: f64,
    q_f: f64,
    duration: f64,
) -> Result<ClassicalTrajectory> {
    if !(duration > 0.0) {
        return Err(Error::Domain(format!("duration {duration} must be > 0")));
    }
    let w = model.omega;
    let mut traj = ClassicalTrajectory {
        q_i,
        q_f,
        duration,
        mass: model.mass,
        omega: w,
        force: model.force.clone(),
        hom: Homogeneous::Linear { a: 0.0, b: 0.0 },
    };
    if w > 0.0 {
        let s = (w * duration).sin();
        if s.abs() < CAUSTIC_EPS {
            return Err(Error::Caustic);
        }
        let a = q_i;
        traj.hom = Homogeneous::Trig { a, b: 0.0 };
        let part_t = traj.particular(duration);
        let b = (q_f - a * (w * duration).cos() - part_t) / s;
        traj.hom = Homogeneous::Trig { a, b };
    } else {
        let a = q_i;
        traj.hom = Homogeneous::Linear { a, b: 0.0 };
        let part_t = traj.particular(duration);
        let b = (q_f - a - part_t) / duration;
        traj.hom = Homogeneous::Linear { a, b };
    }
    Ok(traj)
}

/// Effective complex frequency of mode n:
/// principal root of `omega^2 - 4i / (m T Delta a_n^2)`.
pub fn effective_frequency(model: &OscillatorModel, meas: &MeasurementSpec, n: usize) -> Complex64 {
    let da = meas.accuracy(n);
    let w2 = model.omega * model.omega;
    if !da.is_finite() {
        return Complex64::from(model.omega);
    }
    Complex64::new(w2, -4.0 / (model.mass * meas.duration * da * da)).sqrt()
}

fn effective_frequency_squared(
    model: &OscillatorModel,
    meas: &MeasurementSpec,
    n: usize,
) -> Complex64 {
    let da = meas.accuracy(n);
    let w2 = model.omega * model.omega;
    if !da.is_finite() {
        return Complex64::from(w2);
    }
    Complex64::new(w2, -4.0 / (model.mass * meas.duration * da * da))
}

/// `sin(z)/z`, equal to 1 at z = 0.
fn csinc(z: Complex64) -> Complex64 {
    if z.norm() < 1e-8 {
        Complex64::from(1.0) - z * z / 6.0
    } else {
        z.sin() / z
    }
}

/// Square-root branch of the prefactor, fixed by continuity in T from the
/// short-time free kernel; the sign flips follow the caustic count
/// k = floor(omega_ref T / pi).
fn branch_sign(omega_ref: f64, duration: f64) -> f64 {
    let k = (omega_ref * duration / PI).floor().max(0.0) as i64;
    if ((k + 1) / 2) % 2 == 0 {
        1.0
    } else {
        -1.0
    }
}

/// Tail sums `sum_{n>N} 1/n^2` and `sum_{n>N} (-1)^n / n^2`.
fn mode_sum_tails(n: usize) -> (f64, f64) {
    let mut partial = 0.0;
    let mut partial_alt = 0.0;
    for k in 1..=n {
        let k2 = (k * k) as f64;
        partial += 1.0 / k2;
        partial_alt += if k % 2 == 0 { 1.0 / k2 } else { -1.0 / k2 };
    }
    (ZETA2 - partial, -ETA2 - partial_alt)
}

/// Mode factor `(Omega_n^2 - omega^2) / (Omega_n^2 - omega_{e,n}^2)` that
/// multiplies the measurement sum; 1 for unmeasured modes.
pub fn mode_ratio(model: &OscillatorModel, meas: &MeasurementSpec, n: usize) -> Complex64 {
    let da = meas.accuracy(n);
    if !da.is_finite() {
        return Complex64::from(1.0);
    }
    let omega_n2 = meas.mode_frequency(n).powi(2);
    let w2 = model.omega * model.omega;
    Complex64::from(omega_n2 - w2) / (Complex64::from(omega_n2) - effective_frequency_squared(model, meas, n))
}

/// Prefactor of the weighted amplitude (everything outside `exp(iS - sum)`).
pub fn amplitude_prefactor(model: &OscillatorModel, meas: &MeasurementSpec) -> Result<Complex64> {
    let t_total = meas.duration;
    let w = model.omega;
    let i = Complex64::new(0.0, 1.0);
    let (pref_sq, omega_ref) = match meas.finite_mode_count() {
        Some(count) => {
            let mut ratio = Complex64::from(1.0);
            for n in 1..=count {
                ratio *= mode_ratio(model, meas, n);
            }
            let base = Complex64::from(model.mass)
                / (2.0 * PI * i * t_total * csinc(Complex64::from(w * t_total)));
            (base * ratio, w)
        }
        None => {
            let we = effective_frequency(model, meas, 1);
            let base =
                Complex64::from(model.mass) / (2.0 * PI * i * t_total * csinc(we * t_total));
            (base, we.re)
        }
    };
    Ok(pref_sq.sqrt() * branch_sign(omega_ref, t_total))
}

/// Analytic weighted transition amplitude `U_{T,a}(q_f, q_i)` of the
/// spectrally measured quadratic system.
///
/// The infinite mode product collapses to `omega_e T / sin(omega_e T)`
/// factors; only the uniform-accuracy measurement sum is truncated, at
/// `meas.n_modes`, with an analytic tail correction. The overall scale is
/// fixed so that the no-measurement limit reproduces the free/oscillator
/// propagator.
pub fn weighted_amplitude(
    model: &OscillatorModel,
    meas: &MeasurementSpec,
    outcome: &SpectralOutcome,
    q_i: f64,
    q_f: f64,
) -> Result<Complex64> {
    let t_total = meas.duration;
    let traj = classical_trajectory(model, q_i, q_f, t_total)?;
    let action = traj.action()?;
    let w = model.omega;
    let i = Complex64::new(0.0, 1.0);

    let n_meas = match meas.finite_mode_count() {
        Some(count) => count,
        None => meas.n_modes,
    };
    if outcome.len() > n_meas {
        return Err(Error::Domain(format!(
            "outcome records {} modes but only {} are measured",
            outcome.len(),
            n_meas
        )));
    }
    let prefactor = amplitude_prefactor(model, meas)?;

    let modes = traj.fourier_amplitudes(n_meas)?;
    let mut meas_sum = Complex64::new(0.0, 0.0);
    for n in 1..=n_meas {
        let da = meas.accuracy(n);
        if !da.is_finite() {
            continue;
        }
        let d = modes[n - 1] - outcome.amplitude(n);
        meas_sum += Complex64::from(d * d / (da * da)) * mode_ratio(model, meas, n);
    }

    if meas.finite_mode_count().is_none() {
        // Tail of the uniform measurement sum: eta_n ~ (2/(pi n))(q_i - (-1)^n q_f)
        // and the frequency ratio tends to 1.
        let da = meas.accuracy(1);
        let n_trunc = n_meas;
        let (r2, r2_alt) = mode_sum_tails(n_trunc);
        let tail = 4.0 / (PI * PI * da * da)
            * ((q_i * q_i + q_f * q_f) * r2 - 2.0 * q_i * q_f * r2_alt);
        meas_sum += Complex64::from(tail);
        // Residual after the correction: ratio deviation O(1/n^4) plus the
        // subleading part of eta_n, both summing to O(1/N^3).
        let we2 = effective_frequency_squared(model, meas, 1);
        let scale = (q_i.abs() + q_f.abs() + 1.0).powi(2) / (da * da);
        let ratio_dev = (we2 - Complex64::from(w * w)).norm() * (t_total / PI).powi(2);
        let tail_est = 4.0 / (PI * PI) * scale * (1.0 + ratio_dev) / (n_trunc.pow(3) as f64);
        if tail_est > 1e-8 {
            return Err(Error::Truncation {
                tail: tail_est,
                budget: 1e-8,
            });
        }
    }

    Ok(prefactor * (i * action - meas_sum).exp())
}

/// Discretized generalized-unitarity matrix
/// `M[i, j] = h^2 int da sum_f U*(q_f, q_i) U(q_f, q_j)`, which approximates
/// the identity when the grid is Fourier-conjugate to the free kernel
/// (`N h^2 m / T = 2 pi`). The outcome integral runs over the first measured
/// mode on `a_grid` with the unit-preserving measure.
pub fn unitarity_matrix(
    model: &OscillatorModel,
    meas: &MeasurementSpec,
    q_grid: &QGrid,
    a_grid: &QGrid,
) -> Result<DMatrix<Complex64>> {
    let n = q_grid.n_points();
    let h = q_grid.spacing();
    let ha = a_grid.spacing();
    let measure = meas.outcome_measure_weight(1);
    if measure == 0.0 {
        return Err(Error::Domain(
            "unitarity integral needs a measured first mode".into(),
        ));
    }
    // U(q_f, q_j) for every outcome node.
    let n_a = a_grid.n_points();
    let tables: Vec<DMatrix<Complex64>> = crate::parallel::try_map_indexed(n_a, |ia| {
        let a = a_grid.point(ia);
        let outcome = SpectralOutcome::new(vec![a])?;
        let mut table = DMatrix::zeros(n, n);
        for f in 0..n {
            for j in 0..n {
                table[(f, j)] =
                    weighted_amplitude(model, meas, &outcome, q_grid.point(j), q_grid.point(f))?;
            }
        }
        Ok(table)
    })?;
    let mut m = DMatrix::zeros(n, n);
    for (ia, table) in tables.iter().enumerate() {
        let wa = if ia == 0 || ia == n_a - 1 { 0.5 } else { 1.0 };
        let weight = Complex64::from(wa * ha * measure * h * h);
        m += (table.adjoint() * table) * weight;
    }
    Ok(m)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn free(mass: f64) -> OscillatorModel {
        OscillatorModel::free_particle(mass)
    }

    #[test]
    fn straight_line_trajectory() {
        let traj = classical_trajectory(&free(1.0), 0.0, 1.0, 1.0).unwrap();
        for &t in &[0.0, 0.3, 0.7, 1.0] {
            assert_abs_diff_eq!(traj.position(t), t, epsilon = 1e-12);
        }
    }

    #[test]
    fn quarter_period_sine_trajectory() {
        let w = PI / 2.0;
        let model = OscillatorModel::new(1.0, w, ForceProfile::Zero).unwrap();
        let traj = classical_trajectory(&model, 0.0, 1.0, 1.0).unwrap();
        for &t in &[0.1, 0.5, 0.9] {
            assert_abs_diff_eq!(traj.position(t), (w * t).sin(), epsilon = 1e-12);
        }
    }

    #[test]
    fn forced_particle_parabola() {
        let f0 = 2.5;
        let model = OscillatorModel::new(1.0, 0.0, ForceProfile::Constant(f0)).unwrap();
        let traj = classical_trajectory(&model, 0.0, 0.0, 1.0).unwrap();
        for &t in &[0.2, 0.5, 0.8] {
            assert_abs_diff_eq!(traj.position(t), f0 / 2.0 * (t * t - t), epsilon = 1e-10);
        }
    }

    #[test]
    fn trajectory_satisfies_equation_of_motion() {
        let model = OscillatorModel::new(1.3, 0.9, ForceProfile::Constant(0.7)).unwrap();
        let traj = classical_trajectory(&model, -0.4, 0.8, 2.0).unwrap();
        assert_abs_diff_eq!(traj.position(0.0), -0.4, epsilon = 1e-10);
        assert_abs_diff_eq!(traj.position(2.0), 0.8, epsilon = 1e-10);
        let h = 1e-5;
        for &t in &[0.5, 1.0, 1.5] {
            let acc = (traj.position(t + h) - 2.0 * traj.position(t) + traj.position(t - h))
                / (h * h);
            let rhs = model.force.eval(t) / model.mass
                - model.omega * model.omega * traj.position(t);
            assert_abs_diff_eq!(acc, rhs, epsilon = 1e-5);
        }
    }

    #[test]
    fn caustic_rejected() {
        let model = OscillatorModel::new(1.0, PI, ForceProfile::Zero).unwrap();
        assert!(matches!(
            classical_trajectory(&model, 0.0, 1.0, 1.0),
            Err(Error::Caustic)
        ));
    }

    #[test]
    fn fourier_closed_form_matches_quadrature() {
        let model = OscillatorModel::new(1.0, 1.1, ForceProfile::Zero).unwrap();
        let traj = classical_trajectory(&model, 0.3, -0.7, 1.0).unwrap();
        let modes = traj.fourier_amplitudes(4).unwrap();
        for (idx, m) in modes.iter().enumerate() {
            let omega_n = PI * (idx + 1) as f64;
            let direct = integrate_1d(
                |t| 2.0 * traj.position(t) * (omega_n * t).sin(),
                0.0,
                1.0,
                1e-12,
            )
            .unwrap();
            assert_abs_diff_eq!(*m, direct, epsilon = 1e-10);
        }
    }

    #[test]
    fn fourier_of_straight_line() {
        let traj = classical_trajectory(&free(1.0), 0.0, 1.0, 1.0).unwrap();
        let modes = traj.fourier_amplitudes(5).unwrap();
        for (idx, m) in modes.iter().enumerate() {
            let n = idx + 1;
            let expect = 2.0 * if n % 2 == 0 { -1.0 } else { 1.0 } / (PI * n as f64);
            assert_abs_diff_eq!(*m, expect, epsilon = 1e-10);
        }
    }

    #[test]
    fn fourier_of_rest_trajectory() {
        let traj = classical_trajectory(&free(1.0), 0.0, 0.0, 1.0).unwrap();
        for m in traj.fourier_amplitudes(3).unwrap() {
            assert_abs_diff_eq!(m, 0.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn effective_frequency_limits() {
        let model = OscillatorModel::new(1.0, 2.0, ForceProfile::Zero).unwrap();
        let meas = MeasurementSpec::none(1.0);
        let we = effective_frequency(&model, &meas, 1);
        assert_abs_diff_eq!(we.re, 2.0, epsilon = 1e-15);
        assert_abs_diff_eq!(we.im, 0.0, epsilon = 1e-15);

        let meas = MeasurementSpec::new(1.0, ModeAccuracies::PerMode(vec![1.0]), 4).unwrap();
        let we = effective_frequency(&free(1.0), &meas, 1);
        let expect = 2.0 * Complex64::new(0.0, -PI / 4.0).exp();
        assert_abs_diff_eq!(we.re, expect.re, epsilon = 1e-12);
        assert_abs_diff_eq!(we.im, expect.im, epsilon = 1e-12);
        // Im(omega_e^2) < 0 for any finite accuracy
        assert!(effective_frequency_squared(&free(1.0), &meas, 1).im < 0.0);
    }

    #[test]
    fn free_amplitude_matches_propagator() {
        let meas = MeasurementSpec::none(0.8);
        let u = weighted_amplitude(&free(1.4), &meas, &SpectralOutcome::zero(), 0.3, -0.9)
            .unwrap();
        let m = 1.4;
        let t = 0.8;
        let expect = (Complex64::from(m) / (2.0 * PI * Complex64::i() * t)).sqrt()
            * (Complex64::i() * (m * (0.3f64 + 0.9).powi(2) / (2.0 * t))).exp();
        assert_abs_diff_eq!(u.re, expect.re, epsilon = 1e-10);
        assert_abs_diff_eq!(u.im, expect.im, epsilon = 1e-10);
    }

    #[test]
    fn oscillator_amplitude_matches_propagator() {
        let model = OscillatorModel::new(1.0, 1.3, ForceProfile::Zero).unwrap();
        let meas = MeasurementSpec::none(1.0);
        let (qi, qf) = (0.4, -0.2);
        let u = weighted_amplitude(&model, &meas, &SpectralOutcome::zero(), qi, qf).unwrap();
        let w: f64 = 1.3;
        let s = w / (2.0 * w.sin()) * ((qi * qi + qf * qf) * w.cos() - 2.0 * qi * qf);
        let expect = (Complex64::from(w) / (2.0 * PI * Complex64::i() * w.sin())).sqrt()
            * (Complex64::i() * s).exp();
        assert_abs_diff_eq!(u.re, expect.re, epsilon = 1e-10);
        assert_abs_diff_eq!(u.im, expect.im, epsilon = 1e-10);
    }

    #[test]
    fn on_trajectory_outcome_removes_suppression() {
        let model = free(1.0);
        let meas = MeasurementSpec::new(1.0, ModeAccuracies::PerMode(vec![0.5, 0.5]), 4).unwrap();
        let traj = classical_trajectory(&model, 0.2, 0.9, 1.0).unwrap();
        let eta = traj.fourier_amplitudes(2).unwrap();
        let on = weighted_amplitude(
            &model,
            &meas,
            &SpectralOutcome::new(eta.clone()).unwrap(),
            0.2,
            0.9,
        )
        .unwrap();
        let off = weighted_amplitude(
            &model,
            &meas,
            &SpectralOutcome::new(vec![eta[0] + 5.0, eta[1]]).unwrap(),
            0.2,
            0.9,
        )
        .unwrap();
        // on-trajectory outcome leaves only the prefactor ratio, whose
        // modulus follows from the mode factors
        let meas_free = weighted_amplitude(&model, &MeasurementSpec::none(1.0), &SpectralOutcome::zero(), 0.2, 0.9).unwrap();
        let mut expect = 1.0;
        for n in 1..=2usize {
            let omega_n2 = (PI * n as f64).powi(2);
            let we2 = Complex64::new(0.0, -4.0 / (0.5f64 * 0.5));
            expect *= (Complex64::from(omega_n2) / (Complex64::from(omega_n2) - we2)).norm();
        }
        let ratio_mod = on.norm() / meas_free.norm();
        assert_abs_diff_eq!(ratio_mod, expect.sqrt(), epsilon = 1e-10);
        assert!(off.norm() < 1e-10 * on.norm());
    }

    #[test]
    fn amplitude_peaks_at_classical_modes() {
        let model = free(1.0);
        let meas = MeasurementSpec::new(1.0, ModeAccuracies::PerMode(vec![0.7]), 4).unwrap();
        let traj = classical_trajectory(&model, -0.3, 0.5, 1.0).unwrap();
        let eta1 = traj.fourier_amplitudes(1).unwrap()[0];
        let center = weighted_amplitude(
            &model,
            &meas,
            &SpectralOutcome::new(vec![eta1]).unwrap(),
            -0.3,
            0.5,
        )
        .unwrap()
        .norm();
        for step in [-2i32, -1, 1, 2] {
            let a = eta1 + step as f64 * 0.4;
            let u = weighted_amplitude(
                &model,
                &meas,
                &SpectralOutcome::new(vec![a]).unwrap(),
                -0.3,
                0.5,
            )
            .unwrap()
            .norm();
            assert!(u <= center + 1e-12);
        }
    }

    #[test]
    fn uniform_truncation_guard() {
        let meas = MeasurementSpec::new(1.0, ModeAccuracies::Uniform(1.0), 2).unwrap();
        // N = 2 modes cannot push the tail below 1e-8
        assert!(matches!(
            weighted_amplitude(&free(1.0), &meas, &SpectralOutcome::zero(), 0.0, 1.0),
            Err(Error::Truncation { .. })
        ));
        let meas = MeasurementSpec::new(1.0, ModeAccuracies::Uniform(1.0), 2000).unwrap();
        assert!(weighted_amplitude(&free(1.0), &meas, &SpectralOutcome::zero(), 0.0, 1.0).is_ok());
    }

    #[test]
    fn unitarity_on_conjugate_grid() {
        // N h^2 m / T = 2 pi with N = 24, m = T = 1
        let n = 24usize;
        let h = (2.0 * PI / n as f64).sqrt();
        let half = h * (n - 1) as f64 / 2.0;
        let q_grid = QGrid::new(-half, half, n).unwrap();
        let a_grid = QGrid::new(-20.0, 20.0, 161).unwrap();
        let meas = MeasurementSpec::new(1.0, ModeAccuracies::PerMode(vec![3.0]), 4).unwrap();
        let m = unitarity_matrix(&free(1.0), &meas, &q_grid, &a_grid).unwrap();
        let mut defect: f64 = 0.0;
        for i in 0..n {
            for j in 0..n {
                let target = if i == j { 1.0 } else { 0.0 };
                defect = defect.max((m[(i, j)] - Complex64::from(target)).norm());
            }
        }
        assert!(defect < 1e-3, "unitarity defect {defect:.3e}");
    }
}
