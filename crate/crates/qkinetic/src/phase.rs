//! Phase-space grids, k-particle distributions and their four Fourier sides.
//!
//! Continuous conventions: f̃(ξ) = ∫ e^{-iξ·v} f(v) dv, f(v) = (2π)^{-3} ∫ e^{iξ·v} f̃(ξ) dξ,
//! and likewise x → η. Grids are centered, z_j = (j - n/2) h, and the dual grid has
//! spacing 2π/(n h). Norms on dual axes carry the dξ/(2π) measure, which makes the
//! discrete Plancherel identity exact.

use std::f64::consts::PI;
use std::io::{Read, Write};

use num_complex::Complex64;
use rustfft::FftPlanner;

use crate::error::{arg, Error, Result};
use crate::quad::Vec3;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Grid {
    pub dim_x: usize,
    pub n_x: usize,
    pub l_x: f64,
    pub n_v: usize,
    pub l_v: f64,
}

fn check_points(name: &str, n: usize) -> Result<()> {
    if n < 4 || !n.is_power_of_two() {
        return arg(format!("{name} must be a power of two >= 4, got {n}"));
    }
    Ok(())
}

impl Grid {
    pub fn new(dim_x: usize, n_x: usize, l_x: f64, n_v: usize, l_v: f64) -> Result<Self> {
        if !matches!(dim_x, 0 | 1 | 3) {
            return arg(format!("dim_x must be 0, 1 or 3, got {dim_x}"));
        }
        check_points("n_v", n_v)?;
        if !(l_v > 0.0 && l_v.is_finite()) {
            return arg(format!("L_v must be positive, got {l_v}"));
        }
        if dim_x > 0 {
            check_points("n_x", n_x)?;
            if !(l_x > 0.0 && l_x.is_finite()) {
                return arg(format!("L_x must be positive, got {l_x}"));
            }
            if dim_x == 3 && n_x.max(n_v) > 16 {
                return arg("full 3+3D grids are limited to 16 points per axis");
            }
        }
        let (n_x, l_x) = if dim_x == 0 { (1, 0.0) } else { (n_x, l_x) };
        Ok(Grid { dim_x, n_x, l_x, n_v, l_v })
    }

    /// Spatially homogeneous grid (dim_x = 0).
    pub fn homogeneous(n_v: usize, l_v: f64) -> Result<Self> {
        Self::new(0, 1, 0.0, n_v, l_v)
    }

    pub fn hx(&self) -> f64 {
        2.0 * self.l_x / self.n_x as f64
    }
    pub fn hv(&self) -> f64 {
        2.0 * self.l_v / self.n_v as f64
    }
    pub fn d_eta(&self) -> f64 {
        PI / self.l_x
    }
    pub fn d_xi(&self) -> f64 {
        PI / self.l_v
    }
    pub fn x_coord(&self, j: usize) -> f64 {
        (j as f64 - (self.n_x / 2) as f64) * self.hx()
    }
    pub fn v_coord(&self, j: usize) -> f64 {
        (j as f64 - (self.n_v / 2) as f64) * self.hv()
    }
    pub fn eta_coord(&self, m: usize) -> f64 {
        (m as f64 - (self.n_x / 2) as f64) * self.d_eta()
    }
    pub fn xi_coord(&self, m: usize) -> f64 {
        (m as f64 - (self.n_v / 2) as f64) * self.d_xi()
    }

    pub fn axes_per_particle(&self) -> usize {
        self.dim_x + 3
    }

    pub fn shape(&self, k: usize) -> Vec<usize> {
        let mut s = Vec::with_capacity(k * self.axes_per_particle());
        for _ in 0..k {
            s.extend(std::iter::repeat(self.n_x).take(self.dim_x));
            s.extend(std::iter::repeat(self.n_v).take(3));
        }
        s
    }

    pub fn len(&self, k: usize) -> usize {
        self.shape(k).iter().product()
    }

    pub fn is_spatial_axis(&self, axis: usize) -> bool {
        axis % self.axes_per_particle() < self.dim_x
    }

    /// Volume element of one velocity cell.
    pub fn dv(&self) -> f64 {
        self.hv().powi(3)
    }

    /// Volume element of one spatial cell (1 when homogeneous).
    pub fn dx(&self) -> f64 {
        self.hx().powi(self.dim_x as i32)
    }

    /// Velocity nodes of the v-block in row-major order.
    pub fn velocity_nodes(&self) -> Vec<Vec3> {
        let n = self.n_v;
        let mut out = Vec::with_capacity(n * n * n);
        for a in 0..n {
            for b in 0..n {
                for c in 0..n {
                    out.push([self.v_coord(a), self.v_coord(b), self.v_coord(c)]);
                }
            }
        }
        out
    }

    /// Frequency nodes dual to the velocity block.
    pub fn xi_nodes(&self) -> Vec<Vec3> {
        let n = self.n_v;
        let mut out = Vec::with_capacity(n * n * n);
        for a in 0..n {
            for b in 0..n {
                for c in 0..n {
                    out.push([self.xi_coord(a), self.xi_coord(b), self.xi_coord(c)]);
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Representation {
    /// f(x, v)
    XV,
    /// f̃(x, ξ): velocity transformed
    XXi,
    /// f̌(η, ξ): both transformed
    EtaXi,
    /// f̂(η, v): position transformed
    EtaV,
}

impl Representation {
    pub fn x_transformed(self) -> bool {
        matches!(self, Representation::EtaXi | Representation::EtaV)
    }
    pub fn v_transformed(self) -> bool {
        matches!(self, Representation::XXi | Representation::EtaXi)
    }
    fn code(self) -> u8 {
        match self {
            Representation::XV => 0,
            Representation::XXi => 1,
            Representation::EtaXi => 2,
            Representation::EtaV => 3,
        }
    }
    fn from_code(c: u8) -> Option<Self> {
        Some(match c {
            0 => Representation::XV,
            1 => Representation::XXi,
            2 => Representation::EtaXi,
            3 => Representation::EtaV,
            _ => return None,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NormSpec {
    pub r: f64,
    pub s: f64,
}

impl Default for NormSpec {
    fn default() -> Self {
        NormSpec { r: 1.1, s: 0.6 }
    }
}

impl NormSpec {
    pub fn new(r: f64, s: f64) -> Result<Self> {
        if !(r >= 0.0 && s >= 0.0 && r.is_finite() && s.is_finite()) {
            return arg(format!("norm orders must be finite and >= 0, got r={r}, s={s}"));
        }
        Ok(NormSpec { r, s })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Distribution {
    pub grid: Grid,
    pub rep: Representation,
    pub k: usize,
    pub eps: Option<f64>,
    pub values: Vec<Complex64>,
}

/// Result of [`Distribution::free_transport`]; `homogeneous_noop` is set when there is
/// no spatial structure to transport.
#[derive(Debug, Clone)]
pub struct Transported {
    pub dist: Distribution,
    pub homogeneous_noop: bool,
}

impl Distribution {
    pub fn zeros(grid: Grid, rep: Representation, k: usize) -> Result<Self> {
        if !(k == 1 || k == 2) {
            return arg(format!("particle count must be 1 or 2, got {k}"));
        }
        Ok(Distribution { grid, rep, k, eps: None, values: vec![Complex64::new(0.0, 0.0); grid.len(k)] })
    }

    /// Sample a function of the full coordinate vector of `rep`
    /// (per particle: position or η components, then velocity or ξ components).
    pub fn from_fn(
        grid: Grid,
        rep: Representation,
        k: usize,
        f: impl Fn(&[f64]) -> Complex64,
    ) -> Result<Self> {
        let mut d = Self::zeros(grid, rep, k)?;
        let axes = d.axis_coords();
        let shape = grid.shape(k);
        let mut idx = vec![0usize; shape.len()];
        let mut coord: Vec<f64> = axes.iter().map(|a| a[0]).collect();
        for value in d.values.iter_mut() {
            *value = f(&coord);
            // odometer increment, last axis fastest
            for a in (0..shape.len()).rev() {
                idx[a] += 1;
                if idx[a] < shape[a] {
                    coord[a] = axes[a][idx[a]];
                    break;
                }
                idx[a] = 0;
                coord[a] = axes[a][0];
            }
        }
        Ok(d)
    }

    /// One-particle real density from f(x, v); `x` has `dim_x` entries.
    pub fn from_xv(grid: Grid, f: impl Fn(&[f64], Vec3) -> f64) -> Result<Self> {
        let dx = grid.dim_x;
        Self::from_fn(grid, Representation::XV, 1, |c| {
            Complex64::new(f(&c[..dx], [c[dx], c[dx + 1], c[dx + 2]]), 0.0)
        })
    }

    pub fn with_eps(mut self, eps: f64) -> Self {
        self.eps = Some(eps);
        self
    }

    pub fn shape(&self) -> Vec<usize> {
        self.grid.shape(self.k)
    }

    /// Coordinate values along every axis in the current representation.
    pub fn axis_coords(&self) -> Vec<Vec<f64>> {
        let g = &self.grid;
        let shape = self.shape();
        (0..shape.len())
            .map(|a| {
                let spatial = g.is_spatial_axis(a);
                let coord = |j| match (spatial, self.rep.x_transformed(), self.rep.v_transformed()) {
                    (true, true, _) => g.eta_coord(j),
                    (true, false, _) => g.x_coord(j),
                    (false, _, true) => g.xi_coord(j),
                    (false, _, false) => g.v_coord(j),
                };
                (0..shape[a]).map(coord).collect()
            })
            .collect()
    }

    /// Measure of one grid cell in the current representation.
    pub fn cell_measure(&self) -> f64 {
        let g = &self.grid;
        let x = if self.rep.x_transformed() { g.d_eta() / (2.0 * PI) } else { g.hx() };
        let v = if self.rep.v_transformed() { g.d_xi() / (2.0 * PI) } else { g.hv() };
        (x.powi(g.dim_x as i32) * v.powi(3)).powi(self.k as i32)
    }

    pub fn l2_norm(&self) -> f64 {
        (self.values.iter().map(|z| z.norm_sqr()).sum::<f64>() * self.cell_measure()).sqrt()
    }

    fn check_same_layout(&self, other: &Distribution) -> Result<()> {
        if self.grid != other.grid || self.k != other.k || self.rep != other.rep {
            return Err(Error::GridMismatch("distributions differ in grid, k or representation".into()));
        }
        Ok(())
    }

    /// self + a · other
    pub fn axpy(&self, a: f64, other: &Distribution) -> Result<Distribution> {
        self.check_same_layout(other)?;
        let mut out = self.clone();
        for (o, b) in out.values.iter_mut().zip(&other.values) {
            *o += b * a;
        }
        Ok(out)
    }

    pub fn scaled(&self, a: f64) -> Distribution {
        let mut out = self.clone();
        out.values.iter_mut().for_each(|z| *z *= a);
        out
    }

    /// ‖self − other‖ / ‖other‖ in L².
    pub fn relative_l2_distance(&self, other: &Distribution) -> Result<f64> {
        let d = self.axpy(-1.0, other)?;
        Ok(d.l2_norm() / other.l2_norm())
    }

    pub fn to_rep(&self, target: Representation) -> Distribution {
        let mut out = self.clone();
        let g = self.grid;
        let shape = self.shape();
        let mut planner = FftPlanner::<f64>::new();
        for axis in 0..shape.len() {
            let spatial = g.is_spatial_axis(axis);
            let (from, to) = if spatial {
                (self.rep.x_transformed(), target.x_transformed())
            } else {
                (self.rep.v_transformed(), target.v_transformed())
            };
            if from == to {
                continue;
            }
            let (h, dual) = if spatial { (g.hx(), g.d_eta()) } else { (g.hv(), g.d_xi()) };
            transform_axis(&mut out.values, &shape, axis, to, h, dual, &mut planner);
        }
        out.rep = target;
        out
    }

    /// ‖⟨∇_x⟩^r ⟨v⟩^s f‖, computed on the η side.
    pub fn sobolev_norm(&self, spec: NormSpec) -> f64 {
        let hat = self.to_rep(Representation::EtaV);
        let g = self.grid;
        let axes = hat.axis_coords();
        let shape = hat.shape();
        let per = g.axes_per_particle();
        let mut total = 0.0;
        let mut idx = vec![0usize; shape.len()];
        for z in &hat.values {
            let mut w = 1.0;
            for p in 0..self.k {
                let base = p * per;
                let eta2: f64 = (0..g.dim_x).map(|a| axes[base + a][idx[base + a]].powi(2)).sum();
                let v2: f64 = (0..3).map(|a| axes[base + g.dim_x + a][idx[base + g.dim_x + a]].powi(2)).sum();
                w *= (1.0 + eta2).powf(spec.r) * (1.0 + v2).powf(spec.s);
            }
            total += w * z.norm_sqr();
            for a in (0..shape.len()).rev() {
                idx[a] += 1;
                if idx[a] < shape[a] {
                    break;
                }
                idx[a] = 0;
            }
        }
        (total * hat.cell_measure()).sqrt()
    }

    /// f(x, v) ↦ f(x − vt, v), by the phase e^{−iη·v t} on the η side. In slab geometry
    /// η pairs with v₁.
    pub fn free_transport(&self, t: f64) -> Transported {
        if self.grid.dim_x == 0 {
            return Transported { dist: self.clone(), homogeneous_noop: true };
        }
        let mut hat = self.to_rep(Representation::EtaV);
        let g = self.grid;
        let axes = hat.axis_coords();
        let shape = hat.shape();
        let per = g.axes_per_particle();
        let mut idx = vec![0usize; shape.len()];
        for z in hat.values.iter_mut() {
            let mut phase = 0.0;
            for p in 0..self.k {
                let base = p * per;
                for a in 0..g.dim_x {
                    phase += axes[base + a][idx[base + a]] * axes[base + g.dim_x + a][idx[base + g.dim_x + a]];
                }
            }
            *z *= Complex64::from_polar(1.0, -phase * t);
            for a in (0..shape.len()).rev() {
                idx[a] += 1;
                if idx[a] < shape[a] {
                    break;
                }
                idx[a] = 0;
            }
        }
        Transported { dist: hat.to_rep(self.rep), homogeneous_noop: false }
    }

    /// ∫ Re f over the box (XV only meaningful).
    pub fn mass(&self) -> f64 {
        self.values.iter().map(|z| z.re).sum::<f64>() * self.cell_measure()
    }

    /// ∫∫ |f| dx dv.
    pub fn l1_norm(&self) -> f64 {
        self.values.iter().map(|z| z.norm()).sum::<f64>() * self.cell_measure()
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().map(|z| z.norm()).fold(0.0, f64::max)
    }

    pub fn min_real(&self) -> f64 {
        self.values.iter().map(|z| z.re).fold(f64::INFINITY, f64::min)
    }

    /// Mass, momentum and energy (½∫|v|² f) of a one-particle XV density.
    pub fn moments(&self) -> (f64, Vec3, f64) {
        let g = self.grid;
        let nv3 = g.n_v.pow(3);
        let nodes = g.velocity_nodes();
        let (mut m, mut p, mut e) = (0.0, [0.0; 3], 0.0);
        for (i, z) in self.values.iter().enumerate() {
            let v = nodes[i % nv3];
            m += z.re;
            for a in 0..3 {
                p[a] += z.re * v[a];
            }
            e += 0.5 * z.re * (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]);
        }
        let c = self.cell_measure();
        (m * c, [p[0] * c, p[1] * c, p[2] * c], e * c)
    }

    /// Marginal on every axis as CSV rows `axis,coord,value` (real part).
    pub fn write_marginals_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "axis,coord,value")?;
        let shape = self.shape();
        let axes = self.axis_coords();
        let cell = self.cell_measure();
        for a in 0..shape.len() {
            let mut sums = vec![0.0; shape[a]];
            let stride: usize = shape[a + 1..].iter().product();
            for (i, z) in self.values.iter().enumerate() {
                sums[(i / stride) % shape[a]] += z.re;
            }
            let step = axes[a].get(1).map_or(1.0, |c| c - axes[a][0]);
            for (j, s) in sums.iter().enumerate() {
                writeln!(w, "{a},{:.17e},{:.17e}", axes[a][j], s * cell / step.abs())?;
            }
        }
        Ok(())
    }

    const MAGIC: &'static [u8; 8] = b"QKDIST01";

    /// Flat little-endian container: header then (re, im) pairs.
    pub fn write_binary<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        let g = &self.grid;
        w.write_all(Self::MAGIC)?;
        for v in [g.dim_x as u64, g.n_x as u64, g.n_v as u64, self.k as u64] {
            w.write_all(&v.to_le_bytes())?;
        }
        for v in [g.l_x, g.l_v, self.eps.unwrap_or(f64::NAN)] {
            w.write_all(&v.to_le_bytes())?;
        }
        w.write_all(&[self.rep.code()])?;
        w.write_all(&(self.values.len() as u64).to_le_bytes())?;
        for z in &self.values {
            w.write_all(&z.re.to_le_bytes())?;
            w.write_all(&z.im.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read_binary<R: Read>(mut r: R) -> Result<Self> {
        let io = |e: std::io::Error| Error::Validation(format!("container read failed: {e}"));
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic).map_err(io)?;
        if &magic != Self::MAGIC {
            return Err(Error::Validation("bad container magic".into()));
        }
        let mut b8 = [0u8; 8];
        let mut u = |r: &mut R| -> Result<u64> {
            r.read_exact(&mut b8).map_err(io)?;
            Ok(u64::from_le_bytes(b8))
        };
        let (dim_x, n_x, n_v, k) = (u(&mut r)?, u(&mut r)?, u(&mut r)?, u(&mut r)?);
        let l_x = f64::from_bits(u(&mut r)?);
        let l_v = f64::from_bits(u(&mut r)?);
        let eps = f64::from_bits(u(&mut r)?);
        let mut code = [0u8; 1];
        r.read_exact(&mut code).map_err(io)?;
        let rep = Representation::from_code(code[0])
            .ok_or_else(|| Error::Validation("bad representation tag".into()))?;
        let count = u(&mut r)? as usize;
        let grid = if dim_x == 0 {
            Grid::homogeneous(n_v as usize, l_v)?
        } else {
            Grid::new(dim_x as usize, n_x as usize, l_x, n_v as usize, l_v)?
        };
        let mut d = Distribution::zeros(grid, rep, k as usize)?;
        if count != d.values.len() {
            return Err(Error::Validation("value count does not match header".into()));
        }
        for z in d.values.iter_mut() {
            let re = f64::from_bits(u(&mut r)?);
            let im = f64::from_bits(u(&mut r)?);
            *z = Complex64::new(re, im);
        }
        d.eps = if eps.is_nan() { None } else { Some(eps) };
        Ok(d)
    }
}

/// Centered transform along one axis. Forward: F_m = h (−1)^m Σ_j (−1)^j f_j e^{−2πimj/n};
/// inverse: f_j = (Δ/2π)(−1)^j Σ_m (−1)^m F_m e^{2πimj/n}. Both need n divisible by 4.
fn transform_axis(
    values: &mut [Complex64],
    shape: &[usize],
    axis: usize,
    forward: bool,
    h: f64,
    dual: f64,
    planner: &mut FftPlanner<f64>,
) {
    let n = shape[axis];
    let inner: usize = shape[axis + 1..].iter().product();
    let outer: usize = shape[..axis].iter().product();
    let fft = if forward { planner.plan_fft_forward(n) } else { planner.plan_fft_inverse(n) };
    let scale = if forward { h } else { dual / (2.0 * PI) };
    let mut line = vec![Complex64::new(0.0, 0.0); n];
    let mut scratch = vec![Complex64::new(0.0, 0.0); fft.get_inplace_scratch_len()];
    for o in 0..outer {
        for i in 0..inner {
            let base = o * n * inner + i;
            for j in 0..n {
                let sign = if j % 2 == 0 { 1.0 } else { -1.0 };
                line[j] = values[base + j * inner] * sign;
            }
            fft.process_with_scratch(&mut line, &mut scratch);
            for m in 0..n {
                let sign = if m % 2 == 0 { scale } else { -scale };
                values[base + m * inner] = line[m] * sign;
            }
        }
    }
}

/// One-particle density matrix γ(y; y′) on a cubic 3D grid.
#[derive(Debug, Clone)]
pub struct DensityMatrix {
    pub n: usize,
    pub l: f64,
    pub k: usize,
    /// Row-major over (y, y′), each a flattened 3D index.
    pub values: Vec<Complex64>,
}

impl DensityMatrix {
    pub fn h(&self) -> f64 {
        2.0 * self.l / self.n as f64
    }

    fn coord(&self, j: usize) -> f64 {
        (j as f64 - (self.n / 2) as f64) * self.h()
    }

    fn point(&self, flat: usize) -> Vec3 {
        let n = self.n;
        [self.coord(flat / (n * n)), self.coord((flat / n) % n), self.coord(flat % n)]
    }

    pub fn from_fn(n: usize, l: f64, gamma: impl Fn(Vec3, Vec3) -> Complex64) -> Result<Self> {
        check_points("density-matrix points", n)?;
        if n > 16 {
            return arg("density matrices are limited to 16 points per axis");
        }
        let mut dm = DensityMatrix { n, l, k: 1, values: Vec::new() };
        let m = n * n * n;
        let pts: Vec<Vec3> = (0..m).map(|i| dm.point(i)).collect();
        dm.values = Vec::with_capacity(m * m);
        for y in &pts {
            for yp in &pts {
                dm.values.push(gamma(*y, *yp));
            }
        }
        Ok(dm)
    }

    /// γ = ψ ⊗ ψ̄ for a pure state.
    pub fn from_pure(n: usize, l: f64, psi: impl Fn(Vec3) -> Complex64) -> Result<Self> {
        let mut dm = DensityMatrix { n, l, k: 1, values: Vec::new() };
        check_points("density-matrix points", n)?;
        let m = n * n * n;
        let samples: Vec<Complex64> = (0..m).map(|i| psi(dm.point(i))).collect();
        if n > 16 {
            return arg("density matrices are limited to 16 points per axis");
        }
        dm.values = Vec::with_capacity(m * m);
        for a in &samples {
            for b in &samples {
                dm.values.push(a * b.conj());
            }
        }
        Ok(dm)
    }

    pub fn trace(&self) -> f64 {
        let m = self.n.pow(3);
        (0..m).map(|i| self.values[i * m + i].re).sum::<f64>() * self.h().powi(3)
    }

    /// max |γ(y′;y) − conj γ(y;y′)| relative to max |γ|.
    pub fn hermiticity_defect(&self) -> f64 {
        let m = self.n.pow(3);
        let scale = self.values.iter().map(|z| z.norm()).fold(0.0, f64::max);
        if scale == 0.0 {
            return 0.0;
        }
        let mut worst: f64 = 0.0;
        for i in 0..m {
            for j in i..m {
                worst = worst.max((self.values[j * m + i] - self.values[i * m + j].conj()).norm());
            }
        }
        worst / scale
    }
}

/// f(x, v) = (2π)^{-3} ∫ e^{iξ·v} γ(x + εξ/2; x − εξ/2) dξ.
///
/// The ξ grid is chosen so that εξ/2 steps by whole y-cells; the resulting velocity
/// grid has half-width πε/(2h). The unpaired Nyquist ξ-plane is dropped, which keeps
/// the output exactly real for Hermitian input.
pub fn wigner(dm: &DensityMatrix, eps: f64) -> Result<Distribution> {
    if !(eps > 0.0 && eps.is_finite()) {
        return arg(format!("eps must be positive, got {eps}"));
    }
    let defect = dm.hermiticity_defect();
    if defect > 1e-12 {
        return Err(Error::Validation(format!("density matrix is not Hermitian (defect {defect:.3e})")));
    }
    let n = dm.n;
    let h = dm.h();
    let grid = Grid::new(3, n, dm.l, n, PI * eps / (2.0 * h))?;
    let mut tilde = Distribution::zeros(grid, Representation::XXi, 1)?;
    let m3 = n * n * n;
    let half = (n / 2) as isize;
    let idx3 = |a: isize, b: isize, c: isize| -> Option<usize> {
        let ok = |t: isize| t >= 0 && t < n as isize;
        (ok(a) && ok(b) && ok(c)).then(|| (a as usize * n + b as usize) * n + c as usize)
    };
    let mut out = 0;
    for x0 in 0..n as isize {
        for x1 in 0..n as isize {
            for x2 in 0..n as isize {
                for m0 in -half..half {
                    for m1 in -half..half {
                        for m2 in -half..half {
                            let nyquist = m0 == -half || m1 == -half || m2 == -half;
                            if !nyquist {
                                let plus = idx3(x0 + m0, x1 + m1, x2 + m2);
                                let minus = idx3(x0 - m0, x1 - m1, x2 - m2);
                                if let (Some(p), Some(q)) = (plus, minus) {
                                    tilde.values[out] = dm.values[p * m3 + q];
                                }
                            }
                            out += 1;
                        }
                    }
                }
            }
        }
    }
    let mut f = tilde.to_rep(Representation::XV);
    f.eps = Some(eps);
    Ok(f)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn gauss_grid() -> Grid {
        Grid::new(1, 16, 6.0, 8, 5.0).unwrap()
    }

    #[test]
    fn grid_validation() {
        assert!(Grid::new(2, 8, 1.0, 8, 1.0).is_err());
        assert!(Grid::new(1, 6, 1.0, 8, 1.0).is_err());
        assert!(Grid::new(0, 0, 0.0, 8, -1.0).is_err());
        assert!(Grid::new(3, 32, 1.0, 8, 1.0).is_err());
    }

    #[test]
    fn separable_gaussian_transforms_to_reciprocal_widths() {
        let g = Grid::new(1, 64, 8.0, 32, 5.0).unwrap();
        let f = Distribution::from_xv(g, |x, v| (-x[0] * x[0] - (v[0] * v[0] + v[1] * v[1] + v[2] * v[2])).exp()).unwrap();
        let check = f.to_rep(Representation::EtaXi);
        let axes = check.axis_coords();
        // ∫e^{-iηx} e^{-x²} dx = √π e^{-η²/4}
        let mut worst: f64 = 0.0;
        let mut i = 0;
        for &eta in &axes[0] {
            for &a in &axes[1] {
                for &b in &axes[2] {
                    for &c in &axes[3] {
                        let exact = PI.sqrt().powi(4) * (-(eta * eta + a * a + b * b + c * c) / 4.0).exp();
                        worst = worst.max((check.values[i] - exact).norm());
                        i += 1;
                    }
                }
            }
        }
        assert!(worst < 1e-10, "{worst}");
    }

    #[test]
    fn plancherel_and_round_trip() {
        let g = gauss_grid();
        let f = Distribution::from_xv(g, |x, v| (x[0].sin() + v[1]) * (-(v[0] * v[0] + v[1] * v[1] + v[2] * v[2])).exp()).unwrap();
        let n0 = f.l2_norm();
        for rep in [Representation::XXi, Representation::EtaXi, Representation::EtaV] {
            let t = f.to_rep(rep);
            assert!((t.l2_norm() - n0).abs() < 1e-12 * n0);
            let back = t.to_rep(Representation::XV);
            assert!(back.relative_l2_distance(&f).unwrap() < 1e-12);
        }
    }

    #[test]
    fn sobolev_plain_norm_and_unit_gaussian() {
        let g = Grid::new(1, 32, 8.0, 16, 7.0).unwrap();
        let raw = Distribution::from_xv(g, |x, v| (-(x[0] * x[0] + v[0] * v[0] + v[1] * v[1] + v[2] * v[2]) / 2.0).exp()).unwrap();
        let f = raw.scaled(1.0 / raw.l2_norm());
        assert!((f.sobolev_norm(NormSpec::new(0.0, 0.0).unwrap()) - 1.0).abs() < 1e-12);
        assert!(f.sobolev_norm(NormSpec::new(1.0, 0.0).unwrap()) > 1.0);
    }

    #[test]
    fn transport_group_law_and_centroid() {
        let g = Grid::new(1, 64, 16.0, 8, 4.0).unwrap();
        let f = Distribution::from_xv(g, |x, v| {
            (-(x[0] + 3.0).powi(2) * 2.0 - ((v[0] - 2.0).powi(2) + v[1] * v[1] + v[2] * v[2]) * 4.0).exp()
        })
        .unwrap();
        let a = f.free_transport(0.3).dist.free_transport(0.7).dist;
        let b = f.free_transport(1.0).dist;
        assert!(a.relative_l2_distance(&b).unwrap() < 1e-10);
        assert!(f.free_transport(0.0).dist.relative_l2_distance(&f).unwrap() < 1e-14);
        let axes = b.axis_coords();
        let nv3 = 8 * 8 * 8;
        let (mut m, mut mx) = (0.0, 0.0);
        for (i, z) in b.values.iter().enumerate() {
            m += z.re;
            mx += z.re * axes[0][i / nv3];
        }
        let expected = -3.0 + b.grid.v_coord(6); // nearest velocity node to 2.0
        assert!((mx / m - expected).abs() < g.hx(), "{} vs {}", mx / m, expected);
    }

    #[test]
    fn homogeneous_transport_is_flagged_noop() {
        let g = Grid::homogeneous(8, 4.0).unwrap();
        let f = Distribution::from_xv(g, |_, v| (-v[0] * v[0]).exp()).unwrap();
        let t = f.free_transport(1.0);
        assert!(t.homogeneous_noop);
        assert_eq!(t.dist, f);
    }

    #[test]
    fn binary_round_trip() {
        let g = gauss_grid();
        let f = Distribution::from_xv(g, |x, v| x[0] + v[2]).unwrap().with_eps(0.25);
        let mut buf = Vec::new();
        f.write_binary(&mut buf).unwrap();
        let back = Distribution::read_binary(&buf[..]).unwrap();
        assert_eq!(back, f);
    }

    #[test]
    fn wigner_of_gaussian_state() {
        let eps = 1.0;
        let dm = DensityMatrix::from_pure(16, 4.0, |y| {
            Complex64::new(PI.powf(-0.75) * (-(y[0] * y[0] + y[1] * y[1] + y[2] * y[2]) / 2.0).exp(), 0.0)
        })
        .unwrap();
        let f = wigner(&dm, eps).unwrap();
        let axes = f.axis_coords();
        let shape = f.shape();
        let mut worst: f64 = 0.0;
        let mut peak: f64 = 0.0;
        let mut idx = [0usize; 6];
        for z in &f.values {
            let c: Vec<f64> = (0..6).map(|a| axes[a][idx[a]]).collect();
            let x2 = c[0] * c[0] + c[1] * c[1] + c[2] * c[2];
            let v2 = c[3] * c[3] + c[4] * c[4] + c[5] * c[5];
            let exact = (PI * eps).powi(-3) * (-x2 - v2 / (eps * eps)).exp();
            worst = worst.max((z.re - exact).abs());
            peak = peak.max(exact);
            assert!(z.im.abs() < 1e-12 * peak.max(1e-300) || z.im.abs() < 1e-14);
            for a in (0..6).rev() {
                idx[a] += 1;
                if idx[a] < shape[a] {
                    break;
                }
                idx[a] = 0;
            }
        }
        assert!(worst < 1e-3 * peak, "{worst} vs {peak}");
        assert!((f.mass() - dm.trace()).abs() < 1e-10, "{} vs {}", f.mass(), dm.trace());
    }

    #[test]
    fn wigner_rejects_non_hermitian() {
        let dm = DensityMatrix::from_fn(4, 2.0, |y, _| Complex64::new(y[0], 0.0)).unwrap();
        assert!(wigner(&dm, 1.0).is_err());
    }
}
