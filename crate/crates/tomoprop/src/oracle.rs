//! Brute-force numeric verifiers.
//!
//! Everything here re-derives quantities that the rest of the crate computes
//! in closed form, using only low-level discretizations:
//!
//! * a discrete Gaussian path integral for the weighted transition amplitude,
//!   with Richardson extrapolation in the number of time slices;
//! * windowed double-endpoint integrals that assemble the measured tomogram
//!   propagator profile directly from the trace formula, either with an
//!   explicit outcome record (partial) or with the outcome integrated out
//!   (non-selective);
//! * a central finite-difference residual of the transport equation obeyed
//!   by the measured-particle propagator;
//! * direct quadrature of the symplectic entropy.
//!
//! The propagator trace formula contains two purely oscillatory direction
//! integrals; they are carried out analytically (each yields an exact delta
//! that collapses one endpoint variable), so the numeric object is the
//! direction-integrated `X'`-profile
//!
//! ```text
//! P(X') = (1/pi) intint dq db dk  U*(q + k nu/2, -b) U(q - k nu/2, b)
//!         exp{ik(X' + X) - i k mu q} w(q) w(b)
//! ```
//!
//! with Gaussian windows `w` regularizing the remaining conditionally
//! convergent endpoint integrals. For the particle the exact profile is the
//! Gaussian of unit mass whose variance the structured propagator predicts,
//! so fitting `P` cross-checks the closed-form variance, the mean shift, and
//! the overall (generalized-unitarity) normalization at once.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use crate::dynamics::{
    amplitude_prefactor, classical_trajectory, mode_ratio, weighted_amplitude, ForceProfile,
    MeasurementSpec, OscillatorModel, SpectralOutcome,
};
use crate::numerics::{PhasePoint, QGrid};
use crate::parallel;
use crate::propagators::StructuredPropagator;
use crate::tomography::SampledTomogram;
use crate::{Error, Result};

// ---------------------------------------------------------------------------
// Discrete Gaussian path integral
// ---------------------------------------------------------------------------

/// Weighted transition amplitude from a discrete Gaussian path integral on
/// `n_slices` time steps.
///
/// Interior points are integrated exactly as a multivariate complex Gaussian;
/// the measurement weight enters through the discrete sine transform of the
/// sliced path, so the quadratic form stays exact at the discrete level. The
/// free case is reproduced exactly for any slice count; otherwise the error
/// is `O(1/n_slices^2)` (trapezoidal action).
pub fn discrete_path_amplitude(
    model: &OscillatorModel,
    meas: &MeasurementSpec,
    outcome: &SpectralOutcome,
    q_i: f64,
    q_f: f64,
    n_slices: usize,
) -> Result<Complex64> {
    if n_slices < 4 {
        return Err(Error::Domain(format!(
            "need at least 4 time slices, got {n_slices}"
        )));
    }
    let n = n_slices;
    let dim = n - 1;
    let t_total = meas.duration;
    let eps = t_total / n as f64;
    let m = model.mass;
    let w2 = model.omega * model.omega;
    let i = Complex64::new(0.0, 1.0);

    let max_mode = match meas.finite_mode_count() {
        Some(count) => count.min(dim),
        None => dim,
    };
    if outcome.len() > max_mode {
        return Err(Error::Domain(format!(
            "outcome records {} modes but the discretization resolves {}",
            outcome.len(),
            max_mode
        )));
    }

    // Kinetic tridiagonal form over the interior points.
    let kin = DMatrix::<Complex64>::from_fn(dim, dim, |r, c| {
        if r == c {
            Complex64::from(2.0)
        } else if r.abs_diff(c) == 1 {
            Complex64::from(-1.0)
        } else {
            Complex64::from(0.0)
        }
    });

    // Perturbation: potential plus the measurement quadratic form.
    let mut pert = DMatrix::<Complex64>::zeros(dim, dim);
    for d in 0..dim {
        pert[(d, d)] -= Complex64::from(eps * eps * w2);
    }
    let mut linear = DVector::<Complex64>::zeros(dim);
    let mut constant = Complex64::new(0.0, 0.0);
    for mode in 1..=max_mode {
        let da = meas.accuracy(mode);
        if !da.is_finite() {
            continue;
        }
        let a = outcome.amplitude(mode);
        let s: Vec<f64> = (1..n)
            .map(|j| (2.0 * eps / t_total) * (PI * mode as f64 * j as f64 / n as f64).sin())
            .collect();
        let coef = 2.0 * i * eps / (m * da * da);
        for r in 0..dim {
            for c in 0..dim {
                pert[(r, c)] += coef * s[r] * s[c];
            }
        }
        for r in 0..dim {
            linear[r] += Complex64::from(2.0 * a * s[r] / (da * da));
        }
        constant -= Complex64::from(a * a / (da * da));
    }

    // Boundary and force contributions to the linear term.
    linear[0] += i * m * Complex64::from(-q_i / eps);
    linear[dim - 1] += i * m * Complex64::from(-q_f / eps);
    for j in 1..n {
        linear[j - 1] += i * eps * Complex64::from(model.force.eval(j as f64 * eps));
    }
    constant += i * Complex64::from(m * (q_i * q_i + q_f * q_f) / (2.0 * eps));
    constant -= i * Complex64::from(eps * m * w2 * (q_i * q_i + q_f * q_f) / 4.0);
    constant += i * Complex64::from(
        eps * (model.force.eval(0.0) * q_i + model.force.eval(t_total) * q_f) / 2.0,
    );

    // Quadratic form: exponent = -1/2 q^T A q + L^T q + c0 with
    // A = (m / (i eps)) B and B = kin + pert.
    let b = &kin + &pert;
    let lu = b.clone().lu();
    let solved = lu
        .solve(&linear)
        .ok_or(Error::Caustic)?;
    let mut quad = Complex64::new(0.0, 0.0);
    for (lv, sv) in linear.iter().zip(solved.iter()) {
        quad += lv * sv;
    }
    quad *= 0.5 * i * eps / m;

    let det_inv_sqrt = det_inverse_sqrt(&kin, &pert)?;
    let base = (Complex64::from(m / (2.0 * PI * eps)) / i).sqrt();
    Ok(base * det_inv_sqrt * (quad + constant).exp())
}

/// Branch-tracked `det(B)^{-1/2}` via a homotopy from the kinetic form
/// (whose determinant is real positive) to the full quadratic form.
fn det_inverse_sqrt(kin: &DMatrix<Complex64>, pert: &DMatrix<Complex64>) -> Result<Complex64> {
    let dim = kin.nrows();
    let mut steps = 16usize;
    loop {
        let mut prev = Complex64::from((dim + 1) as f64);
        let mut theta = 0.0f64;
        let mut max_jump = 0.0f64;
        let mut det = prev;
        for s in 1..=steps {
            let lam = s as f64 / steps as f64;
            det = (kin + pert * Complex64::from(lam)).lu().determinant();
            if det.norm() < 1e-280 {
                return Err(Error::Caustic);
            }
            let jump = (det / prev).arg();
            max_jump = max_jump.max(jump.abs());
            theta += jump;
            prev = det;
        }
        if max_jump < 1.0 {
            return Ok(Complex64::from_polar(det.norm().powf(-0.5), -theta / 2.0));
        }
        steps *= 2;
        if steps > 4096 {
            return Err(Error::Caustic);
        }
    }
}

/// Richardson extrapolation of [`discrete_path_amplitude`] in `1/n_slices^2`.
pub fn extrapolated_path_amplitude(
    model: &OscillatorModel,
    meas: &MeasurementSpec,
    outcome: &SpectralOutcome,
    q_i: f64,
    q_f: f64,
    slice_counts: &[usize],
) -> Result<Complex64> {
    if slice_counts.is_empty() {
        return Err(Error::Domain("no slice counts for extrapolation".into()));
    }
    let xs: Vec<f64> = slice_counts
        .iter()
        .map(|&n| 1.0 / (n * n) as f64)
        .collect();
    let mut vals: Vec<Complex64> = slice_counts
        .iter()
        .map(|&n| discrete_path_amplitude(model, meas, outcome, q_i, q_f, n))
        .collect::<Result<_>>()?;
    // Neville tableau evaluated at 1/n^2 = 0.
    let len = vals.len();
    for order in 1..len {
        for idx in 0..len - order {
            let x0 = xs[idx];
            let x1 = xs[idx + order];
            vals[idx] = (vals[idx + 1] * Complex64::from(x0) - vals[idx] * Complex64::from(x1))
                / Complex64::from(x0 - x1);
        }
    }
    Ok(vals[0])
}

// ---------------------------------------------------------------------------
// Windowed propagator profiles
// ---------------------------------------------------------------------------

/// Quadrature layout for the windowed endpoint integrals.
#[derive(Debug, Clone, Copy)]
pub struct PropagatorGrids {
    /// Half-width of the endpoint grids.
    pub q_half: f64,
    /// Endpoint grid points per axis.
    pub n_q: usize,
    /// Half-width of the spectral (k) grid.
    pub k_half: f64,
    /// Spectral grid points.
    pub n_k: usize,
    /// Gaussian window width regularizing the endpoint integrals.
    pub window: f64,
}

impl Default for PropagatorGrids {
    fn default() -> Self {
        Self {
            q_half: 14.0,
            n_q: 352,
            k_half: 6.0,
            n_k: 96,
            window: 4.0,
        }
    }
}

impl PropagatorGrids {
    /// Cheaper layout for the outcome-resolved (partial) integrals, where
    /// every node costs two amplitude evaluations.
    pub fn coarse() -> Self {
        Self {
            q_half: 9.0,
            n_q: 144,
            k_half: 6.0,
            n_k: 48,
            window: 2.5,
        }
    }

    fn q_grid(&self) -> Result<QGrid> {
        QGrid::new(-self.q_half, self.q_half, self.n_q)
    }

    fn k_grid(&self) -> Result<QGrid> {
        QGrid::new(-self.k_half, self.k_half, self.n_k)
    }
}

/// Reject endpoint grids that cannot resolve the fastest phase of the
/// integrand (kinetic chirp plus the direction couplings).
fn check_endpoint_resolution(
    model: &OscillatorModel,
    duration: f64,
    x: &PhasePoint,
    grids: &PropagatorGrids,
) -> Result<()> {
    let dq = 2.0 * grids.q_half / (grids.n_q - 1) as f64;
    let kinetic = model.mass / duration * (2.0 * grids.q_half + grids.k_half * x.nu.abs());
    let rate = kinetic + grids.k_half * x.mu.abs();
    if dq * rate > PI {
        return Err(Error::Resolution(format!(
            "endpoint step {dq:.4} cannot resolve phase rate {rate:.2}"
        )));
    }
    Ok(())
}

/// Quadratic endpoint expansion of the classical action at fixed duration:
/// `S(q_i, q_f) = cii qi^2 + cff qf^2 + cif qi qf + li qi + lf qf + c0`.
fn action_coefficients(model: &OscillatorModel, duration: f64) -> Result<[f64; 6]> {
    let s = |qi: f64, qf: f64| -> Result<f64> {
        classical_trajectory(model, qi, qf, duration)?.action()
    };
    let s00 = s(0.0, 0.0)?;
    let sp0 = s(1.0, 0.0)?;
    let sm0 = s(-1.0, 0.0)?;
    let s0p = s(0.0, 1.0)?;
    let s0m = s(0.0, -1.0)?;
    let spp = s(1.0, 1.0)?;
    let cii = (sp0 + sm0) / 2.0 - s00;
    let cff = (s0p + s0m) / 2.0 - s00;
    let li = (sp0 - sm0) / 2.0;
    let lf = (s0p - s0m) / 2.0;
    let cif = spp - s00 - cii - cff - li - lf;
    Ok([cii, cff, cif, li, lf, s00])
}

/// Endpoint-linear coefficients of the trajectory mode amplitudes:
/// `eta_n(q_i, q_f) = e_i[n] q_i + e_f[n] q_f + (force part)`.
fn eta_coefficients(
    model: &OscillatorModel,
    duration: f64,
    n_modes: usize,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let free = OscillatorModel::new(model.mass, model.omega, ForceProfile::Zero)?;
    let e_i = classical_trajectory(&free, 1.0, 0.0, duration)?.fourier_amplitudes(n_modes)?;
    let e_f = classical_trajectory(&free, 0.0, 1.0, duration)?.fourier_amplitudes(n_modes)?;
    Ok((e_i, e_f))
}

/// Non-selective pair spectrum `F(k)`: the windowed double endpoint integral
/// at fixed `k`, with the outcome integral done analytically per mode. The
/// direction-integrated profile is `(1/pi) int F(k) e^{i k X'} dk`.
pub fn nonselective_spectrum_at(
    model: &OscillatorModel,
    meas: &MeasurementSpec,
    x: &PhasePoint,
    grids: &PropagatorGrids,
    k_values: &[f64],
) -> Result<Vec<Complex64>> {
    let t_total = meas.duration;
    check_endpoint_resolution(model, t_total, x, grids)?;
    let n_modes = meas.finite_mode_count().unwrap_or(meas.n_modes);
    let [_, cff, cif, li, lf, _] = action_coefficients(model, t_total)?;
    let (e_i, e_f) = eta_coefficients(model, t_total, n_modes)?;

    // Outcome-integrated per-mode factor: (Re r)^{-1/2} exp(-d^2 |r|^2 /
    // (2 Re r Da^2)) with d the mode-amplitude difference of the two
    // trajectories. d is linear in (b, k nu), so the full exponent is the
    // quadratic 4 A b^2 - 4 B b k nu + C (k nu)^2.
    let mut g_pref = 1.0f64;
    let (mut ga, mut gb, mut gc) = (0.0f64, 0.0f64, 0.0f64);
    for mode in 1..=n_modes {
        let da = meas.accuracy(mode);
        if !da.is_finite() {
            continue;
        }
        let r = mode_ratio(model, meas, mode);
        if r.re <= 0.0 {
            return Err(Error::Domain(format!(
                "mode {mode} ratio has non-positive real part"
            )));
        }
        let coef = r.norm_sqr() / (2.0 * r.re * da * da);
        g_pref /= r.re.sqrt();
        ga += coef * e_i[mode - 1] * e_i[mode - 1];
        gb += coef * e_i[mode - 1] * e_f[mode - 1];
        gc += coef * e_f[mode - 1] * e_f[mode - 1];
    }
    let p2 = amplitude_prefactor(model, meas)?.norm_sqr() * g_pref;

    let qg = grids.q_grid()?;
    let dq = qg.spacing();
    let nodes: Vec<(f64, f64)> = (0..grids.n_q)
        .map(|iq| {
            let q = qg.point(iq);
            let mut weight = dq * (-q * q / (2.0 * grids.window * grids.window)).exp();
            if iq == 0 || iq == grids.n_q - 1 {
                weight *= 0.5;
            }
            (q, weight)
        })
        .collect();

    let ks = k_values.to_vec();
    parallel::try_map_indexed(ks.len(), move |ik| {
        let k = ks[ik];
        let kn = k * x.nu;
        let mut acc = Complex64::new(0.0, 0.0);
        for &(bq, bw) in &nodes {
            // b-dependent pieces of the phase and the outcome exponent. The
            // endpoint variable is centered (q_f = q -+ k nu / 2), which makes
            // the node set exactly conjugate-symmetric under k -> -k: the
            // chirp phase cancels and the assembled profile is real to
            // roundoff, as the exact kernel demands.
            let phase_b = 2.0 * li * bq - lf * kn;
            let gexp_b = 4.0 * ga * bq * bq - 4.0 * gb * bq * kn + gc * kn * kn;
            if gexp_b > 60.0 {
                continue;
            }
            let damp = bw * (-gexp_b).exp();
            for &(q1, qw) in &nodes {
                let ds = -2.0 * cff * q1 * kn + 2.0 * cif * bq * q1 + phase_b;
                let phase = ds + k * x.x - k * x.mu * q1;
                acc += Complex64::from_polar(damp * qw, phase);
            }
        }
        Ok(acc * Complex64::from(p2))
    })
}

/// Direction-integrated non-selective profile on an `X'` grid.
pub fn nonselective_profile(
    model: &OscillatorModel,
    meas: &MeasurementSpec,
    x: &PhasePoint,
    x_prime_grid: &QGrid,
    grids: &PropagatorGrids,
) -> Result<Vec<Complex64>> {
    let kg = grids.k_grid()?;
    let dk = kg.spacing();
    let max_xp = x_prime_grid.q_min().abs().max(x_prime_grid.q_max().abs());
    if dk * max_xp > PI {
        return Err(Error::Resolution(format!(
            "spectral step {dk:.4} cannot resolve X' out to {max_xp:.2}"
        )));
    }
    let k_values: Vec<f64> = kg.points().collect();
    let spectrum = nonselective_spectrum_at(model, meas, x, grids, &k_values)?;
    Ok(x_prime_grid
        .points()
        .map(|xp| {
            let mut acc = Complex64::new(0.0, 0.0);
            for (ik, (&k, f)) in k_values.iter().zip(spectrum.iter()).enumerate() {
                let mut weight = dk;
                if ik == 0 || ik == k_values.len() - 1 {
                    weight *= 0.5;
                }
                acc += f * Complex64::from_polar(weight, k * xp);
            }
            acc / PI
        })
        .collect())
}

/// Direction-integrated non-selective propagator value at a single `X'`.
pub fn nonselective_propagator_numeric(
    model: &OscillatorModel,
    meas: &MeasurementSpec,
    x_prime_x: f64,
    x: &PhasePoint,
    grids: &PropagatorGrids,
) -> Result<Complex64> {
    let kg = grids.k_grid()?;
    let dk = kg.spacing();
    if dk * x_prime_x.abs() > PI {
        return Err(Error::Resolution(format!(
            "spectral step {dk:.4} cannot resolve X' = {x_prime_x:.2}"
        )));
    }
    let k_values: Vec<f64> = kg.points().collect();
    let spectrum = nonselective_spectrum_at(model, meas, x, grids, &k_values)?;
    let mut acc = Complex64::new(0.0, 0.0);
    for (ik, (&k, f)) in k_values.iter().zip(spectrum.iter()).enumerate() {
        let mut weight = dk;
        if ik == 0 || ik == k_values.len() - 1 {
            weight *= 0.5;
        }
        acc += f * Complex64::from_polar(weight, k * x_prime_x);
    }
    Ok(acc / PI)
}

/// Outcome-resolved (partial) pair spectrum from explicit weighted
/// amplitudes. Expensive: two amplitude evaluations per quadrature node.
pub fn partial_spectrum_at(
    model: &OscillatorModel,
    meas: &MeasurementSpec,
    outcome: &SpectralOutcome,
    x: &PhasePoint,
    grids: &PropagatorGrids,
    k_values: &[f64],
) -> Result<Vec<Complex64>> {
    let t_total = meas.duration;
    check_endpoint_resolution(model, t_total, x, grids)?;
    let qg = grids.q_grid()?;
    let dq = qg.spacing();
    let nodes: Vec<(f64, f64)> = (0..grids.n_q)
        .map(|iq| {
            let q = qg.point(iq);
            let mut weight = dq * (-q * q / (2.0 * grids.window * grids.window)).exp();
            if iq == 0 || iq == grids.n_q - 1 {
                weight *= 0.5;
            }
            (q, weight)
        })
        .collect();
    let ks = k_values.to_vec();
    parallel::try_map_indexed(ks.len(), move |ik| {
        let k = ks[ik];
        let half_shift = 0.5 * k * x.nu;
        let mut acc = Complex64::new(0.0, 0.0);
        for &(bq, bw) in &nodes {
            for &(q1, qw) in &nodes {
                // centered endpoint variable, matching the pair spectrum
                let ua = weighted_amplitude(model, meas, outcome, -bq, q1 + half_shift)?;
                let ub = weighted_amplitude(model, meas, outcome, bq, q1 - half_shift)?;
                let phase = k * x.x - k * x.mu * q1;
                acc += ua.conj() * ub * Complex64::from_polar(bw * qw, phase);
            }
        }
        Ok(acc)
    })
}

/// Direction-integrated partial-propagator value at a single `X'`.
pub fn partial_propagator_numeric(
    model: &OscillatorModel,
    meas: &MeasurementSpec,
    outcome: &SpectralOutcome,
    x_prime_x: f64,
    x: &PhasePoint,
    grids: &PropagatorGrids,
) -> Result<Complex64> {
    let kg = grids.k_grid()?;
    let dk = kg.spacing();
    if dk * x_prime_x.abs() > PI {
        return Err(Error::Resolution(format!(
            "spectral step {dk:.4} cannot resolve X' = {x_prime_x:.2}"
        )));
    }
    let k_values: Vec<f64> = kg.points().collect();
    let spectrum = partial_spectrum_at(model, meas, outcome, x, grids, &k_values)?;
    let mut acc = Complex64::new(0.0, 0.0);
    for (ik, (&k, f)) in k_values.iter().zip(spectrum.iter()).enumerate() {
        let mut weight = dk;
        if ik == 0 || ik == k_values.len() - 1 {
            weight *= 0.5;
        }
        acc += f * Complex64::from_polar(weight, k * x_prime_x);
    }
    Ok(acc / PI)
}

/// Mass of the direction-integrated partial profile, `int P_a(X') dX'`,
/// which needs only the k = 0 slice of the spectrum. Integrated over the
/// outcome set with the unit-preserving measure it must return to 1.
pub fn partial_mass(
    model: &OscillatorModel,
    meas: &MeasurementSpec,
    outcome: &SpectralOutcome,
    x: &PhasePoint,
    grids: &PropagatorGrids,
) -> Result<Complex64> {
    let spectrum = partial_spectrum_at(model, meas, outcome, x, grids, &[0.0])?;
    Ok(spectrum[0] * Complex64::from(2.0))
}

// ---------------------------------------------------------------------------
// Gaussian profile fit
// ---------------------------------------------------------------------------

/// Result of a log-parabola fit to a sampled bell-shaped profile.
#[derive(Debug, Clone, Copy)]
pub struct GaussianFit {
    pub center: f64,
    pub variance: f64,
    pub peak: f64,
}

/// Weighted least-squares fit of `ln v = c0 + c1 x + c2 x^2` over the points
/// above a tenth of the peak; exact for Gaussian data.
pub fn gaussian_profile_fit(xs: &[f64], values: &[f64]) -> Result<GaussianFit> {
    if xs.len() != values.len() {
        return Err(Error::Domain("profile fit length mismatch".into()));
    }
    let peak = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !(peak > 0.0) {
        return Err(Error::Domain("profile fit needs positive values".into()));
    }
    let mut moments = [0.0f64; 5];
    let mut rhs = [0.0f64; 3];
    let mut used = 0usize;
    for (&x, &v) in xs.iter().zip(values.iter()) {
        if v < 0.1 * peak {
            continue;
        }
        used += 1;
        let w = v * v;
        let l = v.ln();
        let mut p = w;
        for (deg, slot) in moments.iter_mut().enumerate() {
            *slot += p;
            rhs[deg.min(2)] += if deg < 3 { w * l * x.powi(deg as i32) } else { 0.0 };
            p *= x;
        }
    }
    if used < 5 {
        return Err(Error::Domain(format!(
            "profile fit has only {used} points above threshold"
        )));
    }
    let a = nalgebra::Matrix3::new(
        moments[0], moments[1], moments[2], //
        moments[1], moments[2], moments[3], //
        moments[2], moments[3], moments[4],
    );
    let b = nalgebra::Vector3::new(rhs[0], rhs[1], rhs[2]);
    let sol = a
        .lu()
        .solve(&b)
        .ok_or_else(|| Error::Domain("degenerate profile fit system".into()))?;
    let (c0, c1, c2) = (sol[0], sol[1], sol[2]);
    if !(c2 < 0.0) {
        return Err(Error::Domain("profile is not concave in the log".into()));
    }
    let center = -c1 / (2.0 * c2);
    Ok(GaussianFit {
        center,
        variance: -1.0 / (2.0 * c2),
        peak: (c0 + c1 * center + c2 * center * center).exp(),
    })
}

// ---------------------------------------------------------------------------
// Transport-equation residual
// ---------------------------------------------------------------------------

/// Central finite-difference residual of
/// `d_T P - (mu/m) d_nu P + f(T) nu d_X P - k nu^2 d^2_X P`
/// on the Gaussian factor of the structured propagator family.
///
/// The delta factors carry the direction map and are never differenced; the
/// drift and diffusion act on the Gaussian through `sigma^2(T, mu, nu)` and
/// the mean shift, whose map-induced chain-rule terms cancel analytically.
pub fn fokker_planck_residual<F>(
    prop_family: &F,
    model: &OscillatorModel,
    x_prime_x: f64,
    x: &PhasePoint,
    t: f64,
    k_strength: f64,
    step: f64,
) -> Result<f64>
where
    F: Fn(f64) -> Result<StructuredPropagator>,
{
    let terms = transport_terms(prop_family, model, x_prime_x, x, t, step)?;
    Ok(terms.0 - k_strength * terms.1)
}

/// Diffusion strength that zeroes the finite-difference transport residual:
/// the drift part divided by `nu^2 d^2_X` of the Gaussian factor.
pub fn best_fit_k<F>(
    prop_family: &F,
    model: &OscillatorModel,
    x_prime_x: f64,
    x: &PhasePoint,
    t: f64,
    step: f64,
) -> Result<f64>
where
    F: Fn(f64) -> Result<StructuredPropagator>,
{
    let terms = transport_terms(prop_family, model, x_prime_x, x, t, step)?;
    if terms.1.abs() < 1e-300 {
        return Err(Error::Domain("vanishing diffusion term".into()));
    }
    Ok(terms.0 / terms.1)
}

fn transport_terms<F>(
    prop_family: &F,
    model: &OscillatorModel,
    x_prime_x: f64,
    x: &PhasePoint,
    t: f64,
    step: f64,
) -> Result<(f64, f64)>
where
    F: Fn(f64) -> Result<StructuredPropagator>,
{
    if !(step > 1e-10) {
        return Err(Error::Domain(format!(
            "differencing step {step} underflows"
        )));
    }
    let g = |tt: f64, nu: f64, xx: f64| -> Result<f64> {
        let prop = prop_family(tt)?;
        let s2 = prop.sigma2(x.mu, nu);
        if !(s2 > 0.0) {
            return Err(Error::Domain(format!(
                "non-positive variance {s2} at t = {tt}"
            )));
        }
        let u = xx - x_prime_x - prop.mean_shift(x.mu, nu);
        Ok((-u * u / (2.0 * s2)).exp() / (2.0 * PI * s2).sqrt())
    };
    let s2_ref = prop_family(t)?.sigma2(x.mu, x.nu);
    let ht = step * t;
    let hn = step * (x.nu.abs() + 1.0);
    let hx = step * (s2_ref.sqrt() + 1.0);

    let d_t = (g(t + ht, x.nu, x.x)? - g(t - ht, x.nu, x.x)?) / (2.0 * ht);
    let d_nu = (g(t, x.nu + hn, x.x)? - g(t, x.nu - hn, x.x)?) / (2.0 * hn);
    let center = g(t, x.nu, x.x)?;
    let d_x = (g(t, x.nu, x.x + hx)? - g(t, x.nu, x.x - hx)?) / (2.0 * hx);
    let d_xx = (g(t, x.nu, x.x + hx)? - 2.0 * center + g(t, x.nu, x.x - hx)?) / (hx * hx);

    let drift = d_t - (x.mu / model.mass) * d_nu + model.force.eval(t) * x.nu * d_x;
    Ok((drift, x.nu * x.nu * d_xx))
}

// ---------------------------------------------------------------------------
// Numeric entropy
// ---------------------------------------------------------------------------

/// Quadrature of `-T ln T` with the `0 ln 0 = 0` convention.
pub fn entropy_numeric(tomo: &SampledTomogram) -> Result<f64> {
    let mut integrand = Vec::with_capacity(tomo.values().len());
    for &v in tomo.values() {
        if v < -1e-10 {
            return Err(Error::Domain(format!(
                "tomogram value {v} is negative beyond tolerance"
            )));
        }
        integrand.push(if v > 0.0 { -v * v.ln() } else { 0.0 });
    }
    Ok(tomo.x_grid().trapezoid(&integrand))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::ModeAccuracies;
    use crate::propagators::particle_measured_propagator;
    use crate::tomography::gaussian_packet_tomogram;
    use approx::assert_abs_diff_eq;

    fn rel_err(a: Complex64, b: Complex64) -> f64 {
        (a - b).norm() / b.norm()
    }

    #[test]
    fn free_path_integral_is_exact() {
        let model = OscillatorModel::free_particle(1.3);
        let meas = MeasurementSpec::none(0.9);
        let (q_i, q_f) = (0.4, -0.7);
        for &n in &[4usize, 9, 16] {
            let num =
                discrete_path_amplitude(&model, &meas, &SpectralOutcome::zero(), q_i, q_f, n)
                    .unwrap();
            let i = Complex64::new(0.0, 1.0);
            let exact = (Complex64::from(1.3 / (2.0 * PI * 0.9)) / i).sqrt()
                * (i * Complex64::from(1.3 * (q_f - q_i) * (q_f - q_i) / (2.0 * 0.9))).exp();
            assert!(rel_err(num, exact) < 1e-12, "n = {n}: {num} vs {exact}");
        }
    }

    #[test]
    fn oscillator_path_integral_extrapolates() {
        let model = OscillatorModel::new(1.0, 1.0, ForceProfile::Zero).unwrap();
        let meas = MeasurementSpec::none(1.0);
        let outcome = SpectralOutcome::zero();
        let exact = weighted_amplitude(&model, &meas, &outcome, 0.3, -0.5).unwrap();
        let num =
            extrapolated_path_amplitude(&model, &meas, &outcome, 0.3, -0.5, &[16, 32, 64]).unwrap();
        assert!(rel_err(num, exact) < 1e-3, "{num} vs {exact}");
    }

    #[test]
    fn measured_path_integral_matches_amplitude() {
        // Uniform accuracy: every discrete mode is measured.
        let model = OscillatorModel::free_particle(1.0);
        let meas = MeasurementSpec::new(1.0, ModeAccuracies::Uniform(2.0), 400).unwrap();
        let outcome = SpectralOutcome::zero();
        let exact = weighted_amplitude(&model, &meas, &outcome, 0.5, -0.4).unwrap();
        let num =
            extrapolated_path_amplitude(&model, &meas, &outcome, 0.5, -0.4, &[16, 32, 64]).unwrap();
        assert!(rel_err(num, exact) < 1e-2, "{num} vs {exact}");

        // Two recorded modes on an oscillator with a constant drive.
        let model = OscillatorModel::new(1.0, 1.0, ForceProfile::Constant(0.5)).unwrap();
        let meas =
            MeasurementSpec::new(1.0, ModeAccuracies::PerMode(vec![1.5, 2.5]), 2).unwrap();
        let outcome = SpectralOutcome::new(vec![0.3, -0.2]).unwrap();
        let exact = weighted_amplitude(&model, &meas, &outcome, -0.2, 0.6).unwrap();
        let num =
            extrapolated_path_amplitude(&model, &meas, &outcome, -0.2, 0.6, &[16, 32, 64]).unwrap();
        assert!(rel_err(num, exact) < 1e-2, "{num} vs {exact}");
    }

    #[test]
    fn too_few_slices_rejected() {
        let model = OscillatorModel::free_particle(1.0);
        let meas = MeasurementSpec::none(1.0);
        assert!(matches!(
            discrete_path_amplitude(&model, &meas, &SpectralOutcome::zero(), 0.0, 1.0, 3),
            Err(Error::Domain(_))
        ));
    }

    fn forty_mode_meas(da: f64) -> MeasurementSpec {
        MeasurementSpec::new(1.0, ModeAccuracies::PerMode(vec![da; 40]), 40).unwrap()
    }

    #[test]
    fn nonselective_profile_matches_closed_form_variance() {
        let model = OscillatorModel::free_particle(1.0);
        let meas = forty_mode_meas(1.5);
        let x = PhasePoint::new(0.0, 0.6, 1.0).unwrap();
        let grids = PropagatorGrids::default();
        let xp_grid = QGrid::new(-8.0, 8.0, 161).unwrap();
        let profile = nonselective_profile(&model, &meas, &x, &xp_grid, &grids).unwrap();

        // Real-valued output within a small imaginary residue.
        let peak = profile.iter().map(|v| v.norm()).fold(0.0, f64::max);
        let imag = profile.iter().map(|v| v.im.abs()).fold(0.0, f64::max);
        assert!(imag < 1e-6 * peak, "imag residue {imag} vs peak {peak}");

        // Unit mass (generalized unitarity) within the window tolerance.
        let values: Vec<f64> = profile.iter().map(|v| v.re).collect();
        let mass = xp_grid.trapezoid(&values);
        assert!((mass - 1.0).abs() < 1e-2, "profile mass {mass}");

        // Gaussian fit against the uniform-accuracy closed form.
        let xs: Vec<f64> = xp_grid.points().collect();
        let fit = gaussian_profile_fit(&xs, &values).unwrap();
        let uniform = MeasurementSpec::new(1.0, ModeAccuracies::Uniform(1.5), 400).unwrap();
        let prop = particle_measured_propagator(&model, &uniform).unwrap();
        let s2 = prop.sigma2(x.mu, x.nu);
        assert!(
            (fit.variance - s2).abs() < 0.05 * s2,
            "fit variance {} vs {s2}",
            fit.variance
        );
        assert_abs_diff_eq!(fit.center, 0.0, epsilon = 0.05);
    }

    #[test]
    fn nonselective_profile_scaling_consistency() {
        // Degree -2 homogeneity of the kernel, realized on the
        // direction-integrated profile: P_{2x}(X') = P_x(X'/2) / 2.
        let model = OscillatorModel::free_particle(1.0);
        let meas = forty_mode_meas(1.5);
        let x = PhasePoint::new(0.0, 0.6, 1.0).unwrap();
        let scaled = x.scaled(2.0);

        let base_grids = PropagatorGrids::default();
        let fine_grids = PropagatorGrids {
            n_q: 448,
            ..PropagatorGrids::default()
        };
        let xp = QGrid::new(-10.0, 10.0, 81).unwrap();
        let half_xp = QGrid::new(-5.0, 5.0, 81).unwrap();

        let p_scaled = nonselective_profile(&model, &meas, &scaled, &xp, &fine_grids).unwrap();
        let p_base = nonselective_profile(&model, &meas, &x, &half_xp, &base_grids).unwrap();
        let peak = p_scaled.iter().map(|v| v.norm()).fold(0.0, f64::max);
        let worst = p_scaled
            .iter()
            .zip(p_base.iter())
            .map(|(s, b)| (s - b / Complex64::from(2.0)).norm())
            .fold(0.0, f64::max);
        assert!(worst < 1e-3 * peak, "scaling defect {worst} vs peak {peak}");
    }

    #[test]
    fn unmeasured_profile_collapses() {
        let model = OscillatorModel::free_particle(1.0);
        let x = PhasePoint::new(0.0, 0.0, 1.0).unwrap();
        let grids = PropagatorGrids::default();
        let xp_grid = QGrid::new(-8.0, 8.0, 161).unwrap();

        let _ = xp_grid;
        let measured = forty_mode_meas(1.5);
        let none = MeasurementSpec::none(1.0);

        // The spectrum is the characteristic function of the X'-profile:
        // with measurement it decays on the scale 1/sigma, without it the
        // profile collapses to the mollified delta and the spectrum stays
        // flat.
        let ks = [0.0, 4.0];
        let f_meas = nonselective_spectrum_at(&model, &measured, &x, &grids, &ks).unwrap();
        let f_none = nonselective_spectrum_at(&model, &none, &x, &grids, &ks).unwrap();
        let decay_meas = f_meas[1].norm() / f_meas[0].norm();
        let decay_none = f_none[1].norm() / f_none[0].norm();
        assert!(decay_meas < 0.01, "measured spectrum decay {decay_meas}");
        assert!(decay_none > 0.5, "unmeasured spectrum decay {decay_none}");
    }

    #[test]
    fn outcome_integration_recovers_pair_kernel() {
        // One measured mode: brute-force integration of the outcome-resolved
        // spectrum over a1 must reproduce the analytic pair kernel.
        let model = OscillatorModel::free_particle(1.0);
        let meas = MeasurementSpec::new(1.0, ModeAccuracies::PerMode(vec![1.5]), 1).unwrap();
        let x = PhasePoint::new(0.2, 0.0, 1.0).unwrap();
        let grids = PropagatorGrids::coarse();
        let k_values = [0.0, 0.8, 1.6];

        let direct = nonselective_spectrum_at(&model, &meas, &x, &grids, &k_values).unwrap();

        let a_grid = QGrid::new(-14.0, 14.0, 57).unwrap();
        let c1 = meas.outcome_measure_weight(1);
        let mut integrated = vec![Complex64::new(0.0, 0.0); k_values.len()];
        for (ia, a) in a_grid.points().enumerate() {
            let outcome = SpectralOutcome::new(vec![a]).unwrap();
            let spec = partial_spectrum_at(&model, &meas, &outcome, &x, &grids, &k_values).unwrap();
            let mut w = a_grid.spacing() * c1;
            if ia == 0 || ia == a_grid.n_points() - 1 {
                w *= 0.5;
            }
            for (acc, s) in integrated.iter_mut().zip(spec.iter()) {
                *acc += s * Complex64::from(w);
            }
        }
        for (d, n) in direct.iter().zip(integrated.iter()) {
            assert!(
                (d - n).norm() < 1e-2 * direct[0].norm(),
                "spectrum mismatch {d} vs {n}"
            );
        }
    }

    #[test]
    fn partial_mass_integrates_to_one() {
        // Generalized unitarity at the profile level: the outcome-integrated
        // mass of the partial profile returns to 1.
        let model = OscillatorModel::free_particle(1.0);
        let meas = MeasurementSpec::new(1.0, ModeAccuracies::PerMode(vec![1.5]), 1).unwrap();
        let x = PhasePoint::new(0.0, 0.0, 1.0).unwrap();
        // k = 0 only, so k_half can be nominal.  The mollifier window biases
        // the mass by O(1/W^2); two windows give a clean extrapolation.
        let a_grid = QGrid::new(-16.0, 16.0, 65).unwrap();
        let c1 = meas.outcome_measure_weight(1);
        let total_for = |window: f64| {
            let grids = PropagatorGrids {
                q_half: 14.0,
                n_q: 256,
                k_half: 0.01,
                n_k: 48,
                window,
            };
            let mut total = Complex64::new(0.0, 0.0);
            for (ia, a) in a_grid.points().enumerate() {
                let outcome = SpectralOutcome::new(vec![a]).unwrap();
                let mass = partial_mass(&model, &meas, &outcome, &x, &grids).unwrap();
                let mut w = a_grid.spacing() * c1;
                if ia == 0 || ia == a_grid.n_points() - 1 {
                    w *= 0.5;
                }
                total += mass * Complex64::from(w);
            }
            total
        };
        let t3 = total_for(3.0);
        let t4 = total_for(4.0);
        let slope = (t3 - t4) * Complex64::from(144.0 / 7.0);
        let total = t4 - slope / Complex64::from(16.0);
        assert!(
            (total - Complex64::from(1.0)).norm() < 5e-3,
            "integrated mass {total} (window 3: {t3}, window 4: {t4})"
        );
    }

    #[test]
    fn profile_fit_roundtrip() {
        let grid = QGrid::new(-5.0, 7.0, 301).unwrap();
        let xs: Vec<f64> = grid.points().collect();
        let values: Vec<f64> = xs
            .iter()
            .map(|&x| 1.7 * (-(x - 0.9) * (x - 0.9) / (2.0 * 1.3)).exp())
            .collect();
        let fit = gaussian_profile_fit(&xs, &values).unwrap();
        assert_abs_diff_eq!(fit.center, 0.9, epsilon = 1e-10);
        assert_abs_diff_eq!(fit.variance, 1.3, epsilon = 1e-9);
        assert_abs_diff_eq!(fit.peak, 1.7, epsilon = 1e-9);
    }

    fn scaled_accuracy_family(
        model: OscillatorModel,
        c: f64,
    ) -> impl Fn(f64) -> Result<StructuredPropagator> {
        move |t: f64| {
            let meas =
                MeasurementSpec::new(t, ModeAccuracies::Uniform((c / t).sqrt()), 64)?;
            particle_measured_propagator(&model, &meas)
        }
    }

    #[test]
    fn transport_residual_vanishes_for_matched_strength() {
        let model = OscillatorModel::free_particle(1.0);
        let c = 2.0;
        let family = scaled_accuracy_family(model.clone(), c);
        let x = PhasePoint::new(0.7, 0.4, 0.9).unwrap();
        let t = 1.0;

        let coarse =
            fokker_planck_residual(&family, &model, 0.2, &x, t, 1.0 / c, 1e-2).unwrap();
        let fine = fokker_planck_residual(&family, &model, 0.2, &x, t, 1.0 / c, 5e-3).unwrap();
        // Second-order differencing: quartering the residual when halving h.
        assert!(
            fine.abs() < 0.3 * coarse.abs(),
            "residuals {coarse} -> {fine}"
        );

        let mismatched =
            fokker_planck_residual(&family, &model, 0.2, &x, t, 1.5 / c, 5e-3).unwrap();
        assert!(
            mismatched.abs() > 10.0 * fine.abs(),
            "matched {fine} vs mismatched {mismatched}"
        );

        let k_best = best_fit_k(&family, &model, 0.2, &x, t, 5e-3).unwrap();
        assert!(
            (k_best - 1.0 / c).abs() < 1e-3 / c,
            "best-fit strength {k_best} vs {}",
            1.0 / c
        );
    }

    #[test]
    fn forced_drift_balances() {
        let model = OscillatorModel::new(1.0, 0.0, ForceProfile::Constant(0.8)).unwrap();
        let c = 2.0;
        let family = scaled_accuracy_family(model.clone(), c);
        let x = PhasePoint::new(0.3, 0.5, 0.8).unwrap();
        let base = fokker_planck_residual(&family, &model, 0.1, &x, 1.0, 1.0 / c, 5e-3).unwrap();
        let scale = {
            let prop = family(1.0).unwrap();
            1.0 / (2.0 * PI * prop.sigma2(x.mu, x.nu)).sqrt()
        };
        assert!(base.abs() < 1e-3 * scale, "forced residual {base}");
    }

    #[test]
    fn step_underflow_rejected() {
        let model = OscillatorModel::free_particle(1.0);
        let family = scaled_accuracy_family(model.clone(), 2.0);
        let x = PhasePoint::new(0.0, 0.0, 1.0).unwrap();
        assert!(matches!(
            fokker_planck_residual(&family, &model, 0.0, &x, 1.0, 0.5, 1e-12),
            Err(Error::Domain(_))
        ));
    }

    #[test]
    fn entropy_of_unit_gaussian() {
        let tomo = gaussian_packet_tomogram(0.0, 1.0).unwrap();
        let grid = QGrid::new(-14.0, 14.0, 2001).unwrap();
        // s^2(0, 1) = 1/l^2 = 1 for the unit packet.
        let sampled = tomo.sample(0.0, 1.0, &grid).unwrap();
        let s = entropy_numeric(&sampled).unwrap();
        assert_abs_diff_eq!(s, (1.0 + PI.ln()) / 2.0, epsilon = 1e-7);

        // Scaling s^2 by e^2 adds exactly 1: s^2(0, 1) = 1/l^2 = e^2.
        let wide = gaussian_packet_tomogram(0.0, (-1.0_f64).exp()).unwrap();
        let grid_wide = QGrid::new(-40.0, 40.0, 4001).unwrap();
        let sampled_wide = wide.sample(0.0, 1.0, &grid_wide).unwrap();
        let s_wide = entropy_numeric(&sampled_wide).unwrap();
        assert_abs_diff_eq!(s_wide - s, 1.0, epsilon = 1e-7);
    }

    #[test]
    fn entropy_matches_closed_form() {
        let tomo = gaussian_packet_tomogram(0.4, 1.2).unwrap();
        let (mu, nu) = (0.7, 0.5);
        let grid = QGrid::new(-20.0, 20.0, 3001).unwrap();
        let sampled = tomo.sample(mu, nu, &grid).unwrap();
        let closed =
            crate::analysis::symplectic_entropy_gaussian(&tomo, mu, nu).unwrap();
        assert_abs_diff_eq!(entropy_numeric(&sampled).unwrap(), closed, epsilon = 1e-7);
    }

    #[test]
    fn negative_tomogram_rejected() {
        // Negative values are refused already at construction.
        let grid = QGrid::new(-1.0, 1.0, 11).unwrap();
        let mut values = vec![0.5; 11];
        values[4] = -1e-6;
        assert!(SampledTomogram::new(0.0, 1.0, grid, values).is_err());

        // Exact zeros are fine: 0 ln 0 = 0.  Unit-mass triangular hat.
        let grid = QGrid::new(-1.0, 1.0, 11).unwrap();
        let values: Vec<f64> = grid.points().map(|x| 1.0 - x.abs()).collect();
        let tomo = SampledTomogram::new(0.0, 1.0, grid, values).unwrap();
        assert!(entropy_numeric(&tomo).unwrap().is_finite());
    }
}
