//! The tomographic map (state -> tomogram), its inverse (tomogram -> density
//! matrix), Gaussian-state tomograms and pointwise star-product kernels.

use nalgebra::DMatrix;
use num_complex::Complex64;
use std::f64::consts::PI;

use crate::numerics::{integrate_1d, LinearForm2, QGrid, QuadraticForm2};
use crate::{Error, Result};

/// Position-space wave function sampled on a uniform grid, normalized so
/// that `sum |psi|^2 * spacing = 1`.
#[derive(Debug, Clone)]
pub struct WaveFunction {
    grid: QGrid,
    amplitudes: Vec<Complex64>,
}

impl WaveFunction {
    pub fn new(grid: QGrid, mut amplitudes: Vec<Complex64>) -> Result<Self> {
        if amplitudes.len() != grid.n_points() {
            return Err(Error::Domain(format!(
                "expected {} amplitudes, got {}",
                grid.n_points(),
                amplitudes.len()
            )));
        }
        let mass: f64 = amplitudes.iter().map(|a| a.norm_sqr()).sum::<f64>() * grid.spacing();
        if !(mass > 0.0) || !mass.is_finite() {
            return Err(Error::Domain("wave function has no norm".into()));
        }
        let scale = 1.0 / mass.sqrt();
        for a in &mut amplitudes {
            *a *= scale;
        }
        Ok(Self { grid, amplitudes })
    }

    /// The Gaussian packet `(pi l^2)^{-1/4} exp(i p q - q^2 / (2 l^2))`.
    pub fn gaussian_packet(grid: &QGrid, p: f64, l: f64) -> Result<Self> {
        if !(l > 0.0) {
            return Err(Error::Domain(format!("packet width l = {l} must be > 0")));
        }
        let norm = (PI * l * l).powf(-0.25);
        let amps = grid
            .points()
            .map(|q| Complex64::new(0.0, p * q).exp() * norm * (-q * q / (2.0 * l * l)).exp())
            .collect();
        Self::new(grid.clone(), amps)
    }

    pub fn grid(&self) -> &QGrid {
        &self.grid
    }

    pub fn amplitudes(&self) -> &[Complex64] {
        &self.amplitudes
    }

    pub fn probability_density(&self) -> Vec<f64> {
        self.amplitudes.iter().map(|a| a.norm_sqr()).collect()
    }
}

/// Density matrix sampled on a uniform position grid; Hermitian with
/// `trace * spacing = 1` and spectrum bounded below by -1e-8.
#[derive(Debug, Clone)]
pub struct DensityMatrix {
    grid: QGrid,
    entries: DMatrix<Complex64>,
}

impl DensityMatrix {
    pub fn new(grid: QGrid, entries: DMatrix<Complex64>) -> Result<Self> {
        let n = grid.n_points();
        if entries.nrows() != n || entries.ncols() != n {
            return Err(Error::Domain("density matrix shape mismatch".into()));
        }
        for i in 0..n {
            for j in 0..=i {
                if (entries[(i, j)] - entries[(j, i)].conj()).norm() > 1e-10 {
                    return Err(Error::Domain(format!(
                        "density matrix not Hermitian at ({i}, {j})"
                    )));
                }
            }
        }
        let trace: Complex64 = (0..n).map(|i| entries[(i, i)]).sum();
        if (trace.re * grid.spacing() - 1.0).abs() > 1e-8 || trace.im.abs() > 1e-8 {
            return Err(Error::Domain(format!(
                "density matrix trace * spacing = {:.6e} != 1",
                trace.re * grid.spacing()
            )));
        }
        let eigen = entries.clone().symmetric_eigen();
        if eigen.eigenvalues.iter().any(|&l| l < -1e-8 / grid.spacing()) {
            return Err(Error::Domain("density matrix has a negative eigenvalue".into()));
        }
        Ok(Self { grid, entries })
    }

    pub fn from_pure(psi: &WaveFunction) -> Self {
        Self::from_mixture(&[(1.0, psi.clone())]).expect("pure state is a valid mixture")
    }

    /// Convex mixture of pure states on a common grid.
    pub fn from_mixture(components: &[(f64, WaveFunction)]) -> Result<Self> {
        let (_, first) = components
            .first()
            .ok_or_else(|| Error::Domain("empty mixture".into()))?;
        let grid = first.grid().clone();
        let total: f64 = components.iter().map(|(w, _)| *w).sum();
        if (total - 1.0).abs() > 1e-10 || components.iter().any(|(w, _)| *w < 0.0) {
            return Err(Error::Domain("mixture weights must be a distribution".into()));
        }
        let n = grid.n_points();
        let mut entries = DMatrix::zeros(n, n);
        for (w, psi) in components {
            if psi.grid() != &grid {
                return Err(Error::Domain("mixture components on different grids".into()));
            }
            let a = psi.amplitudes();
            for i in 0..n {
                for j in 0..n {
                    entries[(i, j)] += Complex64::from(*w) * a[i] * a[j].conj();
                }
            }
        }
        Self::new(grid, entries)
    }

    pub fn grid(&self) -> &QGrid {
        &self.grid
    }

    pub fn entries(&self) -> &DMatrix<Complex64> {
        &self.entries
    }

    /// Spectral decomposition into weighted normalized pure states, dropping
    /// weights below 1e-12.
    pub fn spectral_states(&self) -> Vec<(f64, WaveFunction)> {
        let eigen = self.entries.clone().symmetric_eigen();
        let h = self.grid.spacing();
        let mut out = Vec::new();
        for (k, &lambda) in eigen.eigenvalues.iter().enumerate() {
            let weight = lambda * h;
            if weight <= 1e-12 {
                continue;
            }
            let amps: Vec<Complex64> = eigen
                .eigenvectors
                .column(k)
                .iter()
                .map(|a| a / h.sqrt())
                .collect();
            if let Ok(psi) = WaveFunction::new(self.grid.clone(), amps) {
                out.push((weight, psi));
            }
        }
        out
    }
}

/// Tomogram samples at a fixed direction (mu, nu) on a uniform X grid.
#[derive(Debug, Clone)]
pub struct SampledTomogram {
    pub mu: f64,
    pub nu: f64,
    x_grid: QGrid,
    values: Vec<f64>,
}

impl SampledTomogram {
    pub fn new(mu: f64, nu: f64, x_grid: QGrid, values: Vec<f64>) -> Result<Self> {
        if values.len() != x_grid.n_points() {
            return Err(Error::Domain("tomogram sample length mismatch".into()));
        }
        if let Some(v) = values.iter().find(|v| **v < -1e-10) {
            return Err(Error::Domain(format!("negative tomogram value {v:.3e}")));
        }
        let mass = x_grid.trapezoid(&values);
        if (mass - 1.0).abs() > 1e-6 {
            return Err(Error::Domain(format!(
                "tomogram mass {mass:.8} deviates from 1 beyond 1e-6"
            )));
        }
        Ok(Self {
            mu,
            nu,
            x_grid,
            values,
        })
    }

    pub fn x_grid(&self) -> &QGrid {
        &self.x_grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn mass(&self) -> f64 {
        self.x_grid.trapezoid(&self.values)
    }
}

/// Anything that can evaluate a tomogram at arbitrary (X, mu, nu).
pub trait TomogramFamily: Sync {
    fn eval(&self, x: f64, mu: f64, nu: f64) -> f64;
}

/// Analytic Gaussian tomogram
/// `T(X, mu, nu) = (pi s^2)^{-1/2} exp(-(X - m)^2 / s^2)` with
/// `s^2 = variance_form(mu, nu)` and `m = mean_form(mu, nu) + mean_offset`.
#[derive(Debug, Clone, Copy)]
pub struct GaussianTomogram {
    variance_form: QuadraticForm2,
    mean_form: LinearForm2,
    mean_offset: f64,
}

impl GaussianTomogram {
    pub fn new(variance_form: QuadraticForm2, mean_form: LinearForm2, mean_offset: f64) -> Result<Self> {
        if !(variance_form.a > 0.0
            && variance_form.c > 0.0
            && 4.0 * variance_form.a * variance_form.c > variance_form.b * variance_form.b)
        {
            return Err(Error::Domain(
                "variance form must be positive definite on (mu, nu) != 0".into(),
            ));
        }
        Ok(Self {
            variance_form,
            mean_form,
            mean_offset,
        })
    }

    pub fn variance_form(&self) -> &QuadraticForm2 {
        &self.variance_form
    }

    pub fn mean_form(&self) -> &LinearForm2 {
        &self.mean_form
    }

    pub fn mean_offset(&self) -> f64 {
        self.mean_offset
    }

    /// Total Gaussian variance parameter `s^2(mu, nu)`; the statistical
    /// variance of X is `s^2 / 2`.
    pub fn s2(&self, mu: f64, nu: f64) -> f64 {
        self.variance_form.eval(mu, nu)
    }

    pub fn mean(&self, mu: f64, nu: f64) -> f64 {
        self.mean_form.eval(mu, nu) + self.mean_offset
    }

    pub fn sample(&self, mu: f64, nu: f64, x_grid: &QGrid) -> Result<SampledTomogram> {
        let values = x_grid.points().map(|x| self.eval(x, mu, nu)).collect();
        SampledTomogram::new(mu, nu, x_grid.clone(), values)
    }
}

impl TomogramFamily for GaussianTomogram {
    fn eval(&self, x: f64, mu: f64, nu: f64) -> f64 {
        let s2 = self.s2(mu, nu);
        let d = x - self.mean(mu, nu);
        (PI * s2).sqrt().recip() * (-d * d / s2).exp()
    }
}

/// Tomogram of the Gaussian packet with momentum `p` and width `l`:
/// `s^2 = mu^2 l^2 + nu^2 / l^2`, mean `nu p`, normalized to unit mass.
pub fn gaussian_packet_tomogram(p: f64, l: f64) -> Result<GaussianTomogram> {
    if !(l > 0.0) {
        return Err(Error::Domain(format!("packet width l = {l} must be > 0")));
    }
    GaussianTomogram::new(
        QuadraticForm2::new(l * l, 0.0, 1.0 / (l * l)),
        LinearForm2::new(0.0, p),
        0.0,
    )
}

fn check_direction(mu: f64, nu: f64) -> Result<()> {
    if mu == 0.0 && nu == 0.0 {
        return Err(Error::Domain("degenerate direction (mu, nu) = (0, 0)".into()));
    }
    Ok(())
}

fn tomogram_values_from_wavefunction(
    psi: &WaveFunction,
    mu: f64,
    nu: f64,
    x_grid: &QGrid,
) -> Result<Vec<f64>> {
    check_direction(mu, nu)?;
    let grid = psi.grid();
    let h = grid.spacing();
    if nu == 0.0 {
        // Exact marginal |psi(X / mu)|^2 / |mu|.
        let density = psi.probability_density();
        return Ok(x_grid
            .points()
            .map(|x| grid.interpolate(&density, x / mu) / mu.abs())
            .collect());
    }
    let q_extent = grid.q_min().abs().max(grid.q_max().abs());
    if (mu / nu).abs() * q_extent * h > PI / 4.0 {
        return Err(Error::Resolution(format!(
            "chirp phase step {:.3} exceeds pi/4",
            (mu / nu).abs() * q_extent * h
        )));
    }
    let x_extent = x_grid.q_min().abs().max(x_grid.q_max().abs());
    if x_extent * h / nu.abs() > PI / 2.0 {
        return Err(Error::Resolution(format!(
            "linear phase step {:.3} exceeds pi/2",
            x_extent * h / nu.abs()
        )));
    }
    let amps = psi.amplitudes();
    let qs: Vec<f64> = grid.points().collect();
    let chirp: Vec<Complex64> = qs
        .iter()
        .map(|&q| Complex64::new(0.0, mu * q * q / (2.0 * nu)).exp())
        .collect();
    let n = x_grid.n_points();
    let values = crate::parallel::map_indexed(n, |ix| {
        let x = x_grid.point(ix);
        let mut acc = Complex64::new(0.0, 0.0);
        for (j, &q) in qs.iter().enumerate() {
            let w = if j == 0 || j == qs.len() - 1 { 0.5 } else { 1.0 };
            let phase = Complex64::new(0.0, -x * q / nu).exp();
            acc += amps[j] * chirp[j] * phase * w;
        }
        let integral = acc * h;
        integral.norm_sqr() / (2.0 * PI * nu.abs())
    });
    Ok(values)
}

/// Tomogram of a pure state at direction (mu, nu), evaluated through the
/// chirp-integral form of the dequantizer (exact marginal for nu = 0).
pub fn tomogram_from_wavefunction(
    psi: &WaveFunction,
    mu: f64,
    nu: f64,
    x_grid: &QGrid,
) -> Result<SampledTomogram> {
    let values = tomogram_values_from_wavefunction(psi, mu, nu, x_grid)?;
    SampledTomogram::new(mu, nu, x_grid.clone(), values)
}

/// Tomogram of a mixed state: eigendecomposition of rho mixed with
/// eigenvalue weights.
pub fn tomogram_from_density(
    rho: &DensityMatrix,
    mu: f64,
    nu: f64,
    x_grid: &QGrid,
) -> Result<SampledTomogram> {
    check_direction(mu, nu)?;
    let mut values = vec![0.0; x_grid.n_points()];
    let mut total_weight = 0.0;
    for (weight, psi) in rho.spectral_states() {
        let part = tomogram_values_from_wavefunction(&psi, mu, nu, x_grid)?;
        for (v, p) in values.iter_mut().zip(part.iter()) {
            *v += weight * p;
        }
        total_weight += weight;
    }
    if (total_weight - 1.0).abs() > 1e-8 {
        return Err(Error::Domain(format!(
            "spectral weights sum to {total_weight:.8}"
        )));
    }
    SampledTomogram::new(mu, nu, x_grid.clone(), values)
}

/// Sampling box for the inverse map: X in [-x_max, x_max] on n_x nodes and
/// mu in [-mu_max, mu_max] on n_mu nodes (nu is fixed by the grid geometry).
#[derive(Debug, Clone, Copy)]
pub struct SampleBox {
    pub x_max: f64,
    pub n_x: usize,
    pub mu_max: f64,
    pub n_mu: usize,
}

impl Default for SampleBox {
    fn default() -> Self {
        Self {
            x_max: 50.0,
            n_x: 667,
            mu_max: 10.0,
            n_mu: 321,
        }
    }
}

/// Reconstructs the density matrix from a tomogram family.
///
/// The quantizer integral collapses analytically in nu (the quantizer matrix
/// element carries `delta(q - q' - nu)`), leaving per matrix entry
/// `rho(q, q') = (2 pi)^{-1} int dmu e^{-i mu (q + q') / 2} chi(mu, q - q')`
/// with `chi(mu, nu) = int T(X, mu, nu) e^{iX} dX`, which decays like a
/// Gaussian in mu for physical states.
pub fn density_from_tomogram(
    tomo: &dyn TomogramFamily,
    sample_box: &SampleBox,
    q_grid: &QGrid,
) -> Result<DensityMatrix> {
    let n = q_grid.n_points();
    let h = q_grid.spacing();
    let n_x = sample_box.n_x;
    let n_mu = sample_box.n_mu;
    if n_x < 8 || n_mu < 8 {
        return Err(Error::Domain("sample box too coarse".into()));
    }
    let hx = 2.0 * sample_box.x_max / (n_x - 1) as f64;
    let hmu = 2.0 * sample_box.mu_max / (n_mu - 1) as f64;
    let mus: Vec<f64> = (0..n_mu)
        .map(|i| -sample_box.mu_max + hmu * i as f64)
        .collect();
    let xs: Vec<f64> = (0..n_x)
        .map(|i| -sample_box.x_max + hx * i as f64)
        .collect();

    // chi table over the 2n-1 distinct values of nu = q_i - q_j.
    let chi_rows: Vec<Vec<Complex64>> = crate::parallel::map_indexed(2 * n - 1, |r| {
        let nu = (r as i64 - (n as i64 - 1)) as f64 * h;
        mus.iter()
            .map(|&mu| {
                if mu == 0.0 && nu == 0.0 {
                    // T(X, 0, 0) is the delta at X = 0, so chi = 1 by
                    // continuity of the direction family.
                    return Complex64::new(1.0, 0.0);
                }
                let mut acc = Complex64::new(0.0, 0.0);
                let mut mass = 0.0;
                let mut v_peak = 0.0;
                let mut x_peak = 0.0;
                for (k, &x) in xs.iter().enumerate() {
                    let w = if k == 0 || k == n_x - 1 { 0.5 } else { 1.0 };
                    let v = tomo.eval(x, mu, nu);
                    acc += Complex64::new(0.0, x).exp() * (v * w);
                    mass += v * w;
                    if v > v_peak {
                        v_peak = v;
                        x_peak = x;
                    }
                }
                if (mass * hx - 1.0).abs() <= 1e-7 {
                    return acc * hx;
                }
                // The table grid under-resolves this direction (narrow
                // tomograms at small |mu|): integrate adaptively around the
                // peak, whose width follows from the peak height.
                let s_est = 1.0 / (PI.sqrt() * v_peak);
                let half = 12.0 * s_est.max(1e-3 * hx);
                let lo = (x_peak - half).max(-sample_box.x_max);
                let hi = (x_peak + half).min(sample_box.x_max);
                integrate_1d(
                    |x| Complex64::new(0.0, x).exp() * tomo.eval(x, mu, nu),
                    lo,
                    hi,
                    1e-11,
                )
                .unwrap_or(acc * hx)
            })
            .collect()
    });

    let rows: Vec<Vec<Complex64>> = crate::parallel::map_indexed(n, |i| {
        let qi = q_grid.point(i);
        (0..n)
            .map(|j| {
                let qj = q_grid.point(j);
                let chi = &chi_rows[(i as i64 - j as i64 + n as i64 - 1) as usize];
                let mut acc = Complex64::new(0.0, 0.0);
                for (k, &mu) in mus.iter().enumerate() {
                    let w = if k == 0 || k == n_mu - 1 { 0.5 } else { 1.0 };
                    acc += chi[k] * Complex64::new(0.0, -mu * (qi + qj) / 2.0).exp() * w;
                }
                acc * hmu / (2.0 * PI)
            })
            .collect()
    });
    let mut entries = DMatrix::from_fn(n, n, |i, j| rows[i][j]);

    // Hermitize, then check the reconstruction quality before projecting the
    // numerical residue out of the spectrum.
    let mut skew: f64 = 0.0;
    for i in 0..n {
        for j in 0..n {
            skew = skew.max((entries[(i, j)] - entries[(j, i)].conj()).norm() / 2.0);
        }
    }
    if skew > 1e-6 {
        return Err(Error::Reconstruction(format!(
            "Hermiticity violated by {skew:.3e}"
        )));
    }
    let herm = (entries.clone() + entries.adjoint()) * Complex64::from(0.5);
    entries = herm;
    let trace: f64 = (0..n).map(|i| entries[(i, i)].re).sum::<f64>() * h;
    if (trace - 1.0).abs() > 1e-4 {
        return Err(Error::Reconstruction(format!(
            "trace * spacing = {trace:.6} deviates from 1 beyond 1e-4"
        )));
    }
    let eigen = entries.symmetric_eigen();
    let min_eig = eigen.eigenvalues.iter().cloned().fold(f64::INFINITY, f64::min) * h;
    if min_eig < -1e-4 {
        return Err(Error::Reconstruction(format!(
            "negative eigenvalue weight {min_eig:.3e}"
        )));
    }
    let clamped = DMatrix::from_diagonal(&eigen.eigenvalues.map(|l| Complex64::from(l.max(0.0))));
    let mut psd = &eigen.eigenvectors * clamped * eigen.eigenvectors.adjoint();
    let trace: f64 = (0..n).map(|i| psd[(i, i)].re).sum::<f64>() * h;
    psd *= Complex64::from(1.0 / trace);
    let psd = (psd.clone() + psd.adjoint()) * Complex64::from(0.5);
    DensityMatrix::new(q_grid.clone(), psd)
}

fn mollified_delta(u: f64, width: f64) -> f64 {
    (-u * u / (2.0 * width * width)).exp() / ((2.0 * PI).sqrt() * width)
}

/// Pointwise star-product kernel with the delta factor mollified by a
/// normalized Gaussian of width `delta_width`.
pub fn star_kernel(
    x1: &crate::numerics::PhasePoint,
    x2: &crate::numerics::PhasePoint,
    x: &crate::numerics::PhasePoint,
    delta_width: f64,
) -> Result<Complex64> {
    if x.nu == 0.0 {
        return Err(Error::Domain("star kernel requires nu != 0".into()));
    }
    if !(delta_width > 0.0) {
        return Err(Error::Domain("delta mollification width must be > 0".into()));
    }
    let on_shell = x.mu * (x1.nu + x2.nu) - x.nu * (x1.mu + x2.mu);
    let modulus = mollified_delta(on_shell, delta_width) / (4.0 * PI * PI);
    let phase = x1.x + x2.x - (x1.nu + x2.nu) * x.x / x.nu + (x1.nu * x2.mu - x2.nu * x1.mu) / 2.0;
    Ok(Complex64::from(modulus) * Complex64::new(0.0, phase).exp())
}

/// Commutator kernel `C = M_{x1 x2}(x) - M_{x2 x1}(x)`.
pub fn commutator_kernel(
    x1: &crate::numerics::PhasePoint,
    x2: &crate::numerics::PhasePoint,
    x: &crate::numerics::PhasePoint,
    delta_width: f64,
) -> Result<Complex64> {
    Ok(star_kernel(x1, x2, x, delta_width)? - star_kernel(x2, x1, x, delta_width)?)
}
