//! Velocity densities usable by the collision operators: analytic Gaussian mixtures
//! (with exact plane integrals and Fourier transforms) and interpolated grid data.

use std::f64::consts::PI;

use num_complex::Complex64;

use crate::error::{arg, Error, Result};
use crate::phase::{Distribution, Grid, Representation};
use crate::quad::{dot, sub, Vec3};

pub trait VelocityDensity: Sync {
    fn value(&self, v: Vec3) -> f64;

    /// ∫ over the plane through `x` orthogonal to the unit vector `omega`.
    fn plane_integral(&self, _x: Vec3, _omega: Vec3) -> Option<f64> {
        None
    }
}

/// ∫ e^{-iξ·v} f(v) dv available in closed form.
pub trait FourierDensity: Sync {
    fn fourier(&self, xi: Vec3) -> Complex64;
}

#[derive(Debug, Clone)]
struct Component {
    weight: f64,
    mean: Vec3,
    cov: [[f64; 3]; 3],
    inv: [[f64; 3]; 3],
    norm: f64,
}

fn quad_form(m: &[[f64; 3]; 3], a: Vec3) -> f64 {
    (0..3).map(|i| (0..3).map(|j| a[i] * m[i][j] * a[j]).sum::<f64>()).sum()
}

fn det3(m: &[[f64; 3]; 3]) -> f64 {
    m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1]) - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
        + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
}

fn inverse3(m: &[[f64; 3]; 3], det: f64) -> [[f64; 3]; 3] {
    let mut inv = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            let (a, b) = ((j + 1) % 3, (j + 2) % 3);
            let (c, d) = ((i + 1) % 3, (i + 2) % 3);
            inv[i][j] = (m[a][c] * m[b][d] - m[a][d] * m[b][c]) / det;
        }
    }
    inv
}

/// Σ_c w_c N(mean_c, cov_c).
#[derive(Debug, Clone, Default)]
pub struct GaussianMixture {
    comps: Vec<Component>,
}

impl GaussianMixture {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_component(mut self, weight: f64, mean: Vec3, cov: [[f64; 3]; 3]) -> Result<Self> {
        for i in 0..3 {
            for j in 0..3 {
                if (cov[i][j] - cov[j][i]).abs() > 1e-14 * (cov[i][j].abs() + cov[j][i].abs()) {
                    return arg("covariance must be symmetric");
                }
            }
        }
        let m1 = cov[0][0];
        let m2 = cov[0][0] * cov[1][1] - cov[0][1] * cov[1][0];
        let det = det3(&cov);
        if !(m1 > 0.0 && m2 > 0.0 && det > 0.0) {
            return arg("covariance must be positive definite");
        }
        self.comps.push(Component {
            weight,
            mean,
            cov,
            inv: inverse3(&cov, det),
            norm: (2.0 * PI).powf(-1.5) / det.sqrt(),
        });
        Ok(self)
    }

    pub fn with_isotropic(self, weight: f64, mean: Vec3, temperature: f64) -> Result<Self> {
        let t = temperature;
        self.with_component(weight, mean, [[t, 0.0, 0.0], [0.0, t, 0.0], [0.0, 0.0, t]])
    }

    /// mass · (2πT)^{-3/2} e^{-|v-u|²/(2T)}
    pub fn maxwellian(mass: f64, mean: Vec3, temperature: f64) -> Result<Self> {
        Self::new().with_isotropic(mass, mean, temperature)
    }

    pub fn scaled(&self, a: f64) -> Self {
        let mut out = self.clone();
        out.comps.iter_mut().for_each(|c| c.weight *= a);
        out
    }

    /// Shift every component's mean by `w`.
    pub fn shifted(&self, w: Vec3) -> Self {
        let mut out = self.clone();
        for c in &mut out.comps {
            c.mean = [c.mean[0] + w[0], c.mean[1] + w[1], c.mean[2] + w[2]];
        }
        out
    }

    pub fn mass(&self) -> f64 {
        self.comps.iter().map(|c| c.weight).sum()
    }

    /// Exact samples on the velocity block of `grid`.
    pub fn sample(&self, grid: Grid) -> Result<Distribution> {
        if grid.dim_x != 0 {
            return arg("analytic velocity densities sample onto homogeneous grids");
        }
        Distribution::from_xv(grid, |_, v| self.value(v))
    }

    /// Exact Fourier transform sampled on the ξ grid of `grid`.
    pub fn sample_fourier(&self, grid: Grid) -> Result<Distribution> {
        if grid.dim_x != 0 {
            return arg("analytic velocity densities sample onto homogeneous grids");
        }
        Distribution::from_fn(grid, Representation::XXi, 1, |c| self.fourier([c[0], c[1], c[2]]))
    }
}

impl VelocityDensity for GaussianMixture {
    fn value(&self, v: Vec3) -> f64 {
        self.comps
            .iter()
            .map(|c| {
                let d = sub(v, c.mean);
                c.weight * c.norm * (-0.5 * quad_form(&c.inv, d)).exp()
            })
            .sum()
    }

    fn plane_integral(&self, x: Vec3, omega: Vec3) -> Option<f64> {
        Some(
            self.comps
                .iter()
                .map(|c| {
                    let var = quad_form(&c.cov, omega);
                    let d = dot(omega, sub(x, c.mean));
                    c.weight * (2.0 * PI * var).powf(-0.5) * (-0.5 * d * d / var).exp()
                })
                .sum(),
        )
    }
}

impl FourierDensity for GaussianMixture {
    fn fourier(&self, xi: Vec3) -> Complex64 {
        self.comps
            .iter()
            .map(|c| Complex64::from_polar(c.weight * (-0.5 * quad_form(&c.cov, xi)).exp(), -dot(xi, c.mean)))
            .sum()
    }
}

/// How grid data are evaluated between nodes.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum GridInterp {
    Trilinear,
    /// f = W · trilinear(f/W) for a Maxwellian W with the given mean and temperature;
    /// outside the box f/W takes its edge values.
    MaxwellWeighted { mean: Vec3, temperature: f64 },
}

/// Mass, mean velocity and temperature of a nonnegative velocity block.
pub fn fit_maxwellian(grid: &Grid, data: &[f64]) -> Result<(f64, Vec3, f64)> {
    let nodes = grid.velocity_nodes();
    let (mut m, mut p, mut e) = (0.0, [0.0; 3], 0.0);
    for (v, &f) in nodes.iter().zip(data) {
        m += f;
        for a in 0..3 {
            p[a] += f * v[a];
        }
        e += f * dot(*v, *v);
    }
    if !(m > 0.0) {
        return Err(Error::Validation("cannot fit a Maxwellian to a density with nonpositive mass".into()));
    }
    let mean = [p[0] / m, p[1] / m, p[2] / m];
    let t = (e / m - dot(mean, mean)) / 3.0;
    if !(t > 0.0) {
        return Err(Error::Validation("nonpositive temperature".into()));
    }
    Ok((m * grid.dv(), mean, t))
}

/// Mean and temperature of the Gaussian best matching ln f in weighted least squares.
///
/// Exact (to roundoff) when the data are a sampled Maxwellian, unlike the discrete
/// moments, which carry the trapezoid error of a coarse grid. Falls back to the
/// moments when the fit is not a decaying Gaussian.
pub fn fit_log_gaussian(grid: &Grid, data: &[f64]) -> Result<(Vec3, f64)> {
    let (_, mean0, t0) = fit_maxwellian(grid, data)?;
    let peak = data.iter().cloned().fold(0.0, f64::max);
    let nodes = grid.velocity_nodes();
    let mut a = vec![vec![0.0; 5]; 5];
    let mut b = vec![0.0; 5];
    for (v, &f) in nodes.iter().zip(data) {
        if !(f > 1e-12 * peak) {
            continue;
        }
        let basis = [1.0, v[0], v[1], v[2], dot(*v, *v)];
        let y = f.ln();
        for i in 0..5 {
            for j in 0..5 {
                a[i][j] += f * basis[i] * basis[j];
            }
            b[i] += f * basis[i] * y;
        }
    }
    match crate::quad::solve_dense(a, b) {
        Some(c) if c[4] < 0.0 => {
            let t = -0.5 / c[4];
            Ok(([c[1] * t, c[2] * t, c[3] * t], t))
        }
        _ => Ok((mean0, t0)),
    }
}

/// A velocity block of grid data. Plain trilinear data are extended by zero outside the box.
#[derive(Debug, Clone)]
pub struct GridDensity {
    grid: Grid,
    reduced: Vec<f64>,
    interp: GridInterp,
}

impl GridDensity {
    pub fn new(grid: Grid, data: &[f64], interp: GridInterp) -> Result<Self> {
        if data.len() != grid.n_v.pow(3) {
            return arg("velocity block has the wrong length");
        }
        let reduced = match interp {
            GridInterp::Trilinear => data.to_vec(),
            GridInterp::MaxwellWeighted { temperature, .. } if !(temperature > 0.0) => {
                return arg("weight temperature must be positive");
            }
            GridInterp::MaxwellWeighted { .. } => {
                let nodes = grid.velocity_nodes();
                let tmp = GridDensity { grid, reduced: Vec::new(), interp };
                data.iter().zip(&nodes).map(|(f, v)| f / tmp.weight(*v)).collect()
            }
        };
        Ok(GridDensity { grid, reduced, interp })
    }

    /// Maxwellian weight fitted to the data itself.
    pub fn maxwell_weighted(grid: Grid, data: &[f64]) -> Result<Self> {
        let (mean, temperature) = fit_log_gaussian(&grid, data)?;
        Self::new(grid, data, GridInterp::MaxwellWeighted { mean, temperature })
    }

    pub fn interp(&self) -> GridInterp {
        self.interp
    }

    /// Unnormalized weight W(v); 1 for plain trilinear data.
    #[inline]
    pub fn weight(&self, v: Vec3) -> f64 {
        match self.interp {
            GridInterp::Trilinear => 1.0,
            GridInterp::MaxwellWeighted { mean, temperature } => {
                let d = sub(v, mean);
                (-0.5 * dot(d, d) / temperature).exp()
            }
        }
    }

    /// Trilinear interpolation of f/W.
    #[inline]
    pub fn reduced(&self, v: Vec3) -> f64 {
        let n = self.grid.n_v;
        let h = self.grid.hv();
        let lo = -self.grid.l_v;
        let mut base = [0usize; 3];
        let mut frac = [0.0; 3];
        let clamp = matches!(self.interp, GridInterp::MaxwellWeighted { .. });
        for a in 0..3 {
            let mut p = (v[a] - lo) / h;
            if !(p >= 0.0) || p > (n - 1) as f64 {
                if !clamp || p.is_nan() {
                    return 0.0;
                }
                // f/W is continued by its edge values; W supplies the decay
                p = p.clamp(0.0, (n - 1) as f64);
            }
            let i = (p.floor() as usize).min(n - 2);
            base[a] = i;
            frac[a] = p - i as f64;
        }
        let at = |i: usize, j: usize, k: usize| self.reduced[(i * n + j) * n + k];
        let (i, j, k) = (base[0], base[1], base[2]);
        let (x, y, z) = (frac[0], frac[1], frac[2]);
        let c00 = at(i, j, k) * (1.0 - z) + at(i, j, k + 1) * z;
        let c01 = at(i, j + 1, k) * (1.0 - z) + at(i, j + 1, k + 1) * z;
        let c10 = at(i + 1, j, k) * (1.0 - z) + at(i + 1, j, k + 1) * z;
        let c11 = at(i + 1, j + 1, k) * (1.0 - z) + at(i + 1, j + 1, k + 1) * z;
        let c0 = c00 * (1.0 - y) + c01 * y;
        let c1 = c10 * (1.0 - y) + c11 * y;
        c0 * (1.0 - x) + c1 * x
    }
}

impl VelocityDensity for GridDensity {
    fn value(&self, v: Vec3) -> f64 {
        let r = self.reduced(v);
        if r == 0.0 {
            0.0
        } else {
            self.weight(v) * r
        }
    }
}
