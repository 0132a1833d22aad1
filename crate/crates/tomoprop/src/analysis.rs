//! Observables on tomograms: symplectic entropy of Gaussian tomograms, the
//! measurement-induced entropy difference, and X-moments.

use crate::dynamics::{MeasurementSpec, ModeAccuracies, OscillatorModel};
use crate::tomography::{GaussianTomogram, SampledTomogram};
use crate::{Error, Result};

/// Symplectic entropy of a Gaussian tomogram at direction (mu, nu):
/// `(1 + ln pi)/2 + ln(s^2)/2`.
pub fn symplectic_entropy_gaussian(tomo: &GaussianTomogram, mu: f64, nu: f64) -> Result<f64> {
    let s2 = tomo.s2(mu, nu);
    if !(s2 > 0.0) {
        return Err(Error::Domain(format!(
            "variance {s2} at ({mu}, {nu}) must be positive"
        )));
    }
    Ok((1.0 + std::f64::consts::PI.ln()) / 2.0 + 0.5 * s2.ln())
}

/// Entropy gained by the measured particle over the unmeasured one after
/// time T, for the Gaussian packet (p, l):
/// `(1/2) ln(1 + (4/(3 Da^2)) (3 nu^2 + 3 nu mu T/m + mu^2 T^2/m^2) /
///  (mu^2 l^2 + (nu + mu T/m)^2 / l^2))`.
pub fn entropy_delta(
    p: f64,
    l: f64,
    model: &OscillatorModel,
    meas: &MeasurementSpec,
    mu: f64,
    nu: f64,
) -> Result<f64> {
    let _ = p; // the Gaussian entropy depends on the width only
    if model.omega != 0.0 {
        return Err(Error::Domain("entropy delta covers the particle case".into()));
    }
    let da = match &meas.accuracies {
        ModeAccuracies::Uniform(da) => *da,
        ModeAccuracies::PerMode(_) => {
            return Err(Error::Domain("entropy delta needs a uniform accuracy".into()))
        }
    };
    if !(l > 0.0) {
        return Err(Error::Domain(format!("packet width {l} must be > 0")));
    }
    if !da.is_finite() {
        return Ok(0.0);
    }
    let r = meas.duration / model.mass;
    let free = mu * mu * l * l + (nu + mu * r) * (nu + mu * r) / (l * l);
    if !(free > 0.0) {
        return Err(Error::Domain(format!(
            "degenerate direction ({mu}, {nu}) for the freely evolved width"
        )));
    }
    let num = 3.0 * nu * nu + 3.0 * nu * mu * r + mu * mu * r * r;
    Ok(0.5 * (1.0 + 4.0 / (3.0 * da * da) * num / free).ln())
}

/// Mean and statistical variance of X under a sampled tomogram.
pub fn tomogram_moments(tomo: &SampledTomogram) -> Result<(f64, f64)> {
    let mass = tomo.mass();
    if (mass - 1.0).abs() > 1e-6 {
        return Err(Error::Domain(format!(
            "tomogram mass {mass} deviates from 1"
        )));
    }
    let grid = tomo.x_grid();
    let weighted: Vec<f64> = grid
        .points()
        .zip(tomo.values())
        .map(|(x, v)| x * v)
        .collect();
    let mean = grid.trapezoid(&weighted) / mass;
    let centered: Vec<f64> = grid
        .points()
        .zip(tomo.values())
        .map(|(x, v)| (x - mean) * (x - mean) * v)
        .collect();
    let variance = grid.trapezoid(&centered) / mass;
    Ok((mean, variance))
}

/// Moments of a Gaussian tomogram at (mu, nu); the statistical variance is
/// `s^2 / 2` in the parameter convention of the crate.
pub fn gaussian_moments(tomo: &GaussianTomogram, mu: f64, nu: f64) -> (f64, f64) {
    (tomo.mean(mu, nu), tomo.s2(mu, nu) / 2.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::{LinearForm2, QGrid, QuadraticForm2};
    use crate::propagators::{apply_propagator_gaussian, particle_measured_propagator};
    use crate::tomography::gaussian_packet_tomogram;
    use approx::assert_abs_diff_eq;

    fn fixed_width(s2: f64) -> GaussianTomogram {
        // width independent of direction; evaluate away from (0, 0)
        GaussianTomogram::new(
            QuadraticForm2::new(s2, 0.0, s2),
            LinearForm2::new(0.0, 0.0),
            0.0,
        )
        .unwrap()
    }

    #[test]
    fn unit_variance_entropy() {
        let s = symplectic_entropy_gaussian(&fixed_width(1.0), 1.0, 0.0).unwrap();
        assert_abs_diff_eq!(s, (1.0 + std::f64::consts::PI.ln()) / 2.0, epsilon = 1e-14);
    }

    #[test]
    fn entropy_log_scaling() {
        let s1 = symplectic_entropy_gaussian(&fixed_width(0.7), 1.0, 0.0).unwrap();
        let s4 = symplectic_entropy_gaussian(&fixed_width(2.8), 1.0, 0.0).unwrap();
        assert_abs_diff_eq!(s4 - s1, 2.0f64.ln(), epsilon = 1e-13);
    }

    #[test]
    fn entropy_delta_closed_form() {
        let model = OscillatorModel::free_particle(1.0);
        let meas = MeasurementSpec::new(1.0, ModeAccuracies::Uniform(0.8), 1).unwrap();
        let (p, l) = (0.4, 1.3);

        // no measurement, no entropy gain
        let none = MeasurementSpec::none(1.0);
        assert_eq!(entropy_delta(p, l, &model, &none, 0.7, -0.2).unwrap(), 0.0);

        // mu = 0 collapses to (1/2) ln(1 + 4 l^2 / Da^2)
        let d = entropy_delta(p, l, &model, &meas, 0.0, 1.7).unwrap();
        assert_abs_diff_eq!(
            d,
            0.5 * (1.0 + 4.0 * l * l / 0.64).ln(),
            epsilon = 1e-12
        );

        // equals the difference of measured and unmeasured Gaussian entropies
        let packet = gaussian_packet_tomogram(p, l).unwrap();
        let measured = apply_propagator_gaussian(
            &particle_measured_propagator(&model, &meas).unwrap(),
            &packet,
        )
        .unwrap();
        let isolated = apply_propagator_gaussian(
            &particle_measured_propagator(&model, &none).unwrap(),
            &packet,
        )
        .unwrap();
        for &(mu, nu) in &[(1.0, 0.0), (0.3, 0.9), (-1.2, 0.5)] {
            let direct = entropy_delta(p, l, &model, &meas, mu, nu).unwrap();
            let diff = symplectic_entropy_gaussian(&measured, mu, nu).unwrap()
                - symplectic_entropy_gaussian(&isolated, mu, nu).unwrap();
            assert_abs_diff_eq!(direct, diff, epsilon = 1e-12);
        }
    }

    #[test]
    fn entropy_delta_decreases_with_accuracy() {
        let model = OscillatorModel::free_particle(1.0);
        let mut last = f64::INFINITY;
        for &da in &[0.3, 1.0, 3.0, 10.0, 100.0] {
            let meas = MeasurementSpec::new(1.0, ModeAccuracies::Uniform(da), 1).unwrap();
            let d = entropy_delta(0.0, 1.0, &model, &meas, 0.6, 0.8).unwrap();
            assert!(d >= 0.0);
            assert!(d < last);
            last = d;
        }
    }

    #[test]
    fn packet_moments() {
        let packet = gaussian_packet_tomogram(0.9, 1.0).unwrap();
        let (mean, var) = gaussian_moments(&packet, 0.0, 1.0);
        assert_abs_diff_eq!(mean, 0.9, epsilon = 1e-14);
        assert_abs_diff_eq!(var, 0.5, epsilon = 1e-14);

        let grid = QGrid::new(-12.0, 12.0, 601).unwrap();
        let sampled = packet.sample(0.4, 0.7, &grid).unwrap();
        let (mean_n, var_n) = tomogram_moments(&sampled).unwrap();
        let (mean_g, var_g) = gaussian_moments(&packet, 0.4, 0.7);
        assert_abs_diff_eq!(mean_n, mean_g, epsilon = 1e-8);
        assert_abs_diff_eq!(var_n, var_g, epsilon = 1e-6);
    }
}
