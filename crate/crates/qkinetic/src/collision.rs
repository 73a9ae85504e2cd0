//! The collision operator Q = Q⁺ − Q⁻ in gain/loss (v-space) form and in the
//! oscillatory (x, ξ) form, plus conservation diagnostics.

use std::f64::consts::PI;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution as _, UnitSphere};
use rayon::prelude::*;

use crate::density::{fit_log_gaussian, FourierDensity, GridDensity, GridInterp, VelocityDensity};
use crate::error::{arg, Error, Result};
use crate::kernel::Potential;
use crate::phase::{Distribution, Grid, Representation};
use crate::quad::{add, axpy, dot, gl_uniform, sub, SphereRule, Vec3};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum VStarRule {
    /// Deterministic sum over the velocity grid in u and a product sphere rule in ω.
    GridSum,
    /// Uniform sampling of (u, ω); each output point owns the stream (seed, point index).
    MonteCarlo { trials: usize, seed: Option<u64> },
    /// Carleman form: ω on the sphere, a radial rule along ω, and exact plane integrals
    /// of the second argument over the plane orthogonal to ω. Analytic inputs only.
    Carleman,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Interpolation {
    Trilinear,
    /// Trilinear interpolation of f/W with W the Maxwellian fitted to f. Exact on
    /// Maxwellians, so Q(M, M) vanishes pointwise.
    MaxwellWeighted,
    /// Inputs are callables; use [`collide_analytic`].
    AnalyticCallable,
}

/// Restriction of the sphere rule to half of its azimuths. Both halves are
/// antipodally closed, so each one is a conservative collision operator by itself.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OmegaSubset {
    All,
    EvenAzimuth,
    OddAzimuth,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CollisionConfig {
    pub pot: Potential,
    /// Polar Gauss–Legendre nodes on cos θ ∈ [-1, 1] (even); the azimuth uses twice as
    /// many uniform points, so the full rule has 2·n_omega² nodes.
    pub n_omega: usize,
    pub vstar_rule: VStarRule,
    pub interpolation: Interpolation,
    pub omega_subset: OmegaSubset,
    /// Gauss–Legendre nodes per radial panel.
    pub n_radial: usize,
    /// Radial truncation for profiles without compact support.
    pub r_max: f64,
    /// Truncation of the s-integral in the ξ form.
    pub s_max: f64,
    /// Largest τ = s|y| visited in the ξ form; data are assumed negligible beyond it.
    pub tau_cap: f64,
}

impl CollisionConfig {
    pub fn new(pot: Potential) -> Self {
        CollisionConfig {
            pot,
            n_omega: 16,
            vstar_rule: VStarRule::GridSum,
            interpolation: Interpolation::Trilinear,
            omega_subset: OmegaSubset::All,
            n_radial: 16,
            r_max: 64.0,
            s_max: 200.0,
            tau_cap: 16.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_omega < 2 || self.n_omega % 2 != 0 {
            return arg(format!("n_omega must be even and >= 2, got {}", self.n_omega));
        }
        if self.n_radial == 0 {
            return arg("n_radial must be positive");
        }
        if let VStarRule::MonteCarlo { trials, seed } = self.vstar_rule {
            if trials < 1000 {
                return arg(format!("Monte Carlo needs at least 1000 trials, got {trials}"));
            }
            if seed.is_none() {
                return arg("Monte Carlo collision evaluation requires a seed");
            }
        }
        if !(self.s_max > 0.0 && self.tau_cap > 0.0 && self.r_max > 0.0) {
            return arg("s_max, tau_cap and r_max must be positive");
        }
        Ok(())
    }

    fn keep(&self, azimuth: usize) -> bool {
        match self.omega_subset {
            OmegaSubset::All => true,
            OmegaSubset::EvenAzimuth => azimuth % 2 == 0,
            OmegaSubset::OddAzimuth => azimuth % 2 == 1,
        }
    }

    fn filtered(&self, rule: SphereRule) -> (Vec<Vec3>, Vec<f64>) {
        let mut nodes = Vec::new();
        let mut weights = Vec::new();
        for i in 0..rule.len() {
            if self.keep(rule.azimuth_index[i]) {
                nodes.push(rule.nodes[i]);
                weights.push(rule.weights[i]);
            }
        }
        (nodes, weights)
    }

    /// Upper-hemisphere nodes with weights doubled (exact for even integrands).
    fn hemisphere(&self) -> (Vec<Vec3>, Vec<f64>) {
        let (n, w) = self.filtered(SphereRule::upper_hemisphere(self.n_omega, 2 * self.n_omega));
        (n, w.into_iter().map(|x| 2.0 * x).collect())
    }

    fn sphere(&self) -> (Vec<Vec3>, Vec<f64>) {
        self.filtered(SphereRule::product(self.n_omega, 2 * self.n_omega))
    }

    fn radial(&self) -> Vec<(f64, f64)> {
        self.pot.radial_rule(self.n_radial, self.r_max)
    }
}

/// v* = v + [ω·(u−v)]ω, u* = u − [ω·(u−v)]ω.
pub fn post_collision(v: Vec3, u: Vec3, omega: Vec3) -> (Vec3, Vec3) {
    let t = dot(omega, sub(u, v));
    (axpy(v, t, omega), axpy(u, -t, omega))
}

/// Gain and loss parts sampled on a grid.
#[derive(Debug, Clone)]
pub struct GainLoss {
    pub gain: Distribution,
    pub loss: Distribution,
}

impl GainLoss {
    pub fn total(&self) -> Distribution {
        self.gain.axpy(-1.0, &self.loss).expect("gain and loss share a layout")
    }
}

trait PairEval: Sync {
    fn f(&self, v: Vec3) -> f64;
    fn g(&self, u: Vec3) -> f64;
    /// f(v*) g(u*); v and u are passed for weight factorization.
    fn gain(&self, v: Vec3, u: Vec3, fv_weight: f64, gu_weight: f64, vs: Vec3, us: Vec3) -> f64;
    fn weights(&self, v: Vec3, u: Vec3) -> (f64, f64);
}

struct AnalyticPair<'a> {
    f: &'a dyn VelocityDensity,
    g: &'a dyn VelocityDensity,
}

impl PairEval for AnalyticPair<'_> {
    fn f(&self, v: Vec3) -> f64 {
        self.f.value(v)
    }
    fn g(&self, u: Vec3) -> f64 {
        self.g.value(u)
    }
    fn gain(&self, _: Vec3, _: Vec3, _: f64, _: f64, vs: Vec3, us: Vec3) -> f64 {
        self.f.value(vs) * self.g.value(us)
    }
    fn weights(&self, _: Vec3, _: Vec3) -> (f64, f64) {
        (1.0, 1.0)
    }
}

struct GridPair {
    f: GridDensity,
    g: GridDensity,
    shared_weight: bool,
}

impl PairEval for GridPair {
    fn f(&self, v: Vec3) -> f64 {
        self.f.value(v)
    }
    fn g(&self, u: Vec3) -> f64 {
        self.g.value(u)
    }
    #[inline]
    fn gain(&self, _: Vec3, _: Vec3, wv: f64, wu: f64, vs: Vec3, us: Vec3) -> f64 {
        let rf = self.f.reduced(vs);
        if rf == 0.0 {
            return 0.0;
        }
        let rg = self.g.reduced(us);
        if self.shared_weight {
            // W(v*)W(u*) = W(v)W(u) by energy and momentum conservation
            wv * wu * rf * rg
        } else {
            self.f.weight(vs) * self.g.weight(us) * rf * rg
        }
    }
    fn weights(&self, v: Vec3, u: Vec3) -> (f64, f64) {
        (self.f.weight(v), self.g.weight(u))
    }
}

fn gridsum_point<P: PairEval>(
    v: Vec3,
    pair: &P,
    u_nodes: &[Vec3],
    g_at_nodes: &[f64],
    hemi: &(Vec<Vec3>, Vec<f64>),
    pot: &Potential,
    du: f64,
) -> (f64, f64) {
    let (nodes, weights) = hemi;
    let (mut gain, mut loss_kernel) = (0.0, 0.0);
    for (u, &gu) in u_nodes.iter().zip(g_at_nodes) {
        let w = sub(*u, v);
        let (wv, wu) = pair.weights(v, *u);
        let mut lam = 0.0;
        let mut acc = 0.0;
        for (om, &wo) in nodes.iter().zip(weights) {
            let t = dot(*om, w);
            let b = pot.radial_weight(t);
            if b == 0.0 {
                continue;
            }
            lam += wo * b;
            let vs = axpy(v, t, *om);
            let us = axpy(*u, -t, *om);
            acc += wo * b * pair.gain(v, *u, wv, wu, vs, us);
        }
        gain += acc;
        loss_kernel += lam * gu;
    }
    let c = pot.prefactor * du;
    (gain * c, pair.f(v) * loss_kernel * c)
}

fn monte_carlo_point<P: PairEval>(
    v: Vec3,
    pair: &P,
    half_width: f64,
    trials: usize,
    seed: u64,
    stream: u64,
    pot: &Potential,
) -> (f64, f64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    let (mut gain, mut loss) = (0.0, 0.0);
    let fv = pair.f(v);
    for _ in 0..trials {
        let u = [
            rng.gen_range(-half_width..half_width),
            rng.gen_range(-half_width..half_width),
            rng.gen_range(-half_width..half_width),
        ];
        let om: [f64; 3] = UnitSphere.sample(&mut rng);
        let t = dot(om, sub(u, v));
        let b = pot.radial_weight(t);
        if b == 0.0 {
            continue;
        }
        let (wv, wu) = pair.weights(v, u);
        gain += b * pair.gain(v, u, wv, wu, axpy(v, t, om), axpy(u, -t, om));
        loss += b * fv * pair.g(u);
    }
    let c = pot.prefactor * (2.0 * half_width).powi(3) * 4.0 * PI / trials as f64;
    (gain * c, loss * c)
}

fn carleman_point(
    v: Vec3,
    f: &dyn VelocityDensity,
    g: &dyn VelocityDensity,
    sphere: &(Vec<Vec3>, Vec<f64>),
    radial: &[(f64, f64)],
    pot: &Potential,
) -> Result<(f64, f64)> {
    let (nodes, weights) = sphere;
    let (mut gain, mut loss) = (0.0, 0.0);
    for (om, &wo) in nodes.iter().zip(weights) {
        let pv = g
            .plane_integral(v, *om)
            .ok_or_else(|| Error::Unsupported("Carleman rule needs plane integrals of the second argument".into()))?;
        let (mut gs, mut ls) = (0.0, 0.0);
        for &(t, wt) in radial {
            let b = pot.radial_weight(t) * wt;
            if b == 0.0 {
                continue;
            }
            let shifted = axpy(v, t, *om);
            gs += b * f.value(shifted);
            ls += b * g.plane_integral(shifted, *om).unwrap_or(0.0);
        }
        gain += wo * gs * pv;
        loss += wo * ls;
    }
    let c = 2.0 * pot.prefactor;
    Ok((gain * c, f.value(v) * loss * c))
}

fn homogeneous_parts<P: PairEval>(
    grid: &Grid,
    pair: &P,
    cfg: &CollisionConfig,
    stream_offset: u64,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let nodes = grid.velocity_nodes();
    let pot = cfg.pot;
    let results: Vec<(f64, f64)> = match cfg.vstar_rule {
        VStarRule::GridSum => {
            let hemi = cfg.hemisphere();
            let g_nodes: Vec<f64> = nodes.iter().map(|u| pair.g(*u)).collect();
            let du = grid.dv();
            nodes
                .par_iter()
                .map(|v| gridsum_point(*v, pair, &nodes, &g_nodes, &hemi, &pot, du))
                .collect()
        }
        VStarRule::MonteCarlo { trials, seed } => {
            let seed = seed.ok_or_else(|| Error::Argument("Monte Carlo requires a seed".into()))?;
            nodes
                .par_iter()
                .enumerate()
                .map(|(i, v)| monte_carlo_point(*v, pair, grid.l_v, trials, seed, stream_offset + i as u64, &pot))
                .collect()
        }
        VStarRule::Carleman => unreachable!("handled by the analytic path"),
    };
    Ok(results.into_iter().unzip())
}

fn to_dist(grid: Grid, values: Vec<f64>) -> Distribution {
    Distribution {
        grid,
        rep: Representation::XV,
        k: 1,
        eps: None,
        values: values.into_iter().map(|x| Complex64::new(x, 0.0)).collect(),
    }
}

fn grid_density(data: &[f64], grid: Grid, interp: Interpolation) -> Result<GridDensity> {
    match interp {
        Interpolation::Trilinear => GridDensity::new(grid, data, GridInterp::Trilinear),
        Interpolation::MaxwellWeighted => {
            let abs: Vec<f64> = data.iter().map(|x| x.abs()).collect();
            match fit_log_gaussian(&grid, &abs) {
                Ok((mean, temperature)) => {
                    GridDensity::new(grid, data, GridInterp::MaxwellWeighted { mean, temperature })
                }
                // nothing to weight: a zero block
                Err(_) => GridDensity::new(grid, data, GridInterp::Trilinear),
            }
        }
        Interpolation::AnalyticCallable => {
            arg("grid inputs cannot use the analytic-callable mode; call collide_analytic")
        }
    }
}

/// Gain and loss of Q(f, g) for grid data; f sits at v and g at u.
pub fn collide_parts(f: &Distribution, g: &Distribution, cfg: &CollisionConfig) -> Result<GainLoss> {
    cfg.validate()?;
    if f.grid != g.grid {
        return Err(Error::GridMismatch("collision arguments live on different grids".into()));
    }
    if f.rep != Representation::XV || g.rep != Representation::XV || f.k != 1 || g.k != 1 {
        return arg("collide needs one-particle densities in the XV representation");
    }
    if cfg.vstar_rule == VStarRule::Carleman {
        return Err(Error::Unsupported("the Carleman rule needs analytic plane integrals".into()));
    }
    let grid = f.grid;
    let vgrid = Grid::homogeneous(grid.n_v, grid.l_v)?;
    let nv3 = grid.n_v.pow(3);
    let slabs = f.values.len() / nv3;
    let (mut gain, mut loss) = (Vec::with_capacity(f.values.len()), Vec::with_capacity(f.values.len()));
    for s in 0..slabs {
        let fs: Vec<f64> = f.values[s * nv3..(s + 1) * nv3].iter().map(|z| z.re).collect();
        let gs: Vec<f64> = g.values[s * nv3..(s + 1) * nv3].iter().map(|z| z.re).collect();
        if fs.iter().all(|x| *x == 0.0) || gs.iter().all(|x| *x == 0.0) {
            gain.extend(std::iter::repeat(0.0).take(nv3));
            loss.extend(std::iter::repeat(0.0).take(nv3));
            continue;
        }
        let fd = grid_density(&fs, vgrid, cfg.interpolation)?;
        let gd = grid_density(&gs, vgrid, cfg.interpolation)?;
        let shared_weight = fd.interp() == gd.interp();
        let pair = GridPair { f: fd, g: gd, shared_weight };
        let (a, b) = homogeneous_parts(&vgrid, &pair, cfg, (s * nv3) as u64)?;
        gain.extend(a);
        loss.extend(b);
    }
    Ok(GainLoss { gain: to_dist(grid, gain), loss: to_dist(grid, loss) })
}

/// Q(f, g) = Q⁺ − Q⁻ on the grid of `f`.
pub fn collide(f: &Distribution, g: &Distribution, cfg: &CollisionConfig) -> Result<Distribution> {
    Ok(collide_parts(f, g, cfg)?.total())
}

/// Gain and loss for callable densities, sampled at the nodes of a homogeneous grid.
pub fn collide_analytic_parts(
    f: &dyn VelocityDensity,
    g: &dyn VelocityDensity,
    grid: Grid,
    cfg: &CollisionConfig,
) -> Result<GainLoss> {
    cfg.validate()?;
    if grid.dim_x != 0 {
        return arg("analytic collision evaluation needs a homogeneous output grid");
    }
    let (gain, loss) = match cfg.vstar_rule {
        VStarRule::Carleman => {
            let sphere = cfg.sphere();
            let radial = cfg.radial();
            let nodes = grid.velocity_nodes();
            let res: Result<Vec<(f64, f64)>> = nodes
                .par_iter()
                .map(|v| carleman_point(*v, f, g, &sphere, &radial, &cfg.pot))
                .collect();
            res?.into_iter().unzip()
        }
        _ => homogeneous_parts(&grid, &AnalyticPair { f, g }, cfg, 0)?,
    };
    Ok(GainLoss { gain: to_dist(grid, gain), loss: to_dist(grid, loss) })
}

pub fn collide_analytic(
    f: &dyn VelocityDensity,
    g: &dyn VelocityDensity,
    grid: Grid,
    cfg: &CollisionConfig,
) -> Result<Distribution> {
    Ok(collide_analytic_parts(f, g, grid, cfg)?.total())
}

struct XiRules {
    sphere: (Vec<Vec3>, Vec<f64>),
    /// (r, w_r · r|φ̂(r)|², τ rule)
    radial: Vec<(f64, f64, Vec<(f64, f64)>)>,
}

impl XiRules {
    fn new(cfg: &CollisionConfig, tau_cap: f64) -> Self {
        let radial = cfg
            .radial()
            .into_iter()
            .filter_map(|(r, w)| {
                let wr = w * cfg.pot.radial_weight(r);
                if wr == 0.0 {
                    return None;
                }
                let end = (cfg.s_max * r).min(tau_cap);
                Some((r, wr, gl_uniform(0.0, end, (2.0 / r).min(1.0), 8)))
            })
            .collect();
        XiRules { sphere: cfg.sphere(), radial }
    }

    /// −(prefactor/π) Σ_{α,σ} ασ ∫dω ∫dr r|φ̂|² e^{i(σ−α) r ξ·ω/2} ∫dτ e^{−iστr} g(ξ−τω) h(τω).
    fn eval(
        &self,
        xi: Vec3,
        pot: &Potential,
        g: &impl Fn(Vec3) -> Complex64,
        h_at: &impl Fn(usize, usize, usize, Vec3) -> Complex64,
    ) -> Complex64 {
        let (nodes, weights) = &self.sphere;
        let mut total = Complex64::new(0.0, 0.0);
        for (io, (om, &wo)) in nodes.iter().zip(weights).enumerate() {
            let xo = dot(xi, *om);
            for (ir, (r, wr, taus)) in self.radial.iter().enumerate() {
                let mut s_sigma = [Complex64::new(0.0, 0.0); 2];
                for (it, &(tau, wt)) in taus.iter().enumerate() {
                    let y = crate::quad::scale(*om, tau);
                    let gh = g(sub(xi, y)) * h_at(io, ir, it, y) * wt;
                    let phase = Complex64::from_polar(1.0, -tau * r);
                    s_sigma[0] += phase * gh; // σ = +1
                    s_sigma[1] += phase.conj() * gh; // σ = −1
                }
                let mut inner = Complex64::new(0.0, 0.0);
                for alpha in [1.0f64, -1.0] {
                    for (si, sigma) in [1.0f64, -1.0].into_iter().enumerate() {
                        let ph = Complex64::from_polar(1.0, (sigma - alpha) * r * xo / 2.0);
                        inner += alpha * sigma * ph * s_sigma[si];
                    }
                }
                total += inner * (wo * wr);
            }
        }
        -total * (pot.prefactor / PI)
    }
}

/// The (x, ξ) form at a single frequency for callable transforms.
pub fn collide_xi_at(
    xi: Vec3,
    g: &dyn FourierDensity,
    h: &dyn FourierDensity,
    cfg: &CollisionConfig,
) -> Result<Complex64> {
    cfg.validate()?;
    let rules = XiRules::new(cfg, cfg.tau_cap);
    Ok(rules.eval(xi, &cfg.pot, &|z| g.fourier(z), &|_, _, _, y| h.fourier(y)))
}

/// The (x, ξ) form for callable transforms on the ξ nodes of a homogeneous grid.
pub fn collide_xi_analytic(
    g: &dyn FourierDensity,
    h: &dyn FourierDensity,
    grid: Grid,
    cfg: &CollisionConfig,
) -> Result<Distribution> {
    cfg.validate()?;
    if grid.dim_x != 0 {
        return arg("analytic xi-form evaluation needs a homogeneous output grid");
    }
    let rules = XiRules::new(cfg, cfg.tau_cap);
    let table = h_table(&rules, |y| h.fourier(y));
    let xis = grid.xi_nodes();
    let values: Vec<Complex64> = xis
        .par_iter()
        .map(|xi| rules.eval(*xi, &cfg.pot, &|z| g.fourier(z), &|io, ir, it, _| table[io][ir][it]))
        .collect();
    Ok(Distribution { grid, rep: Representation::XXi, k: 1, eps: None, values })
}

fn h_table(rules: &XiRules, h: impl Fn(Vec3) -> Complex64) -> Vec<Vec<Vec<Complex64>>> {
    rules
        .sphere
        .0
        .iter()
        .map(|om| {
            rules
                .radial
                .iter()
                .map(|(_, _, taus)| taus.iter().map(|&(tau, _)| h(crate::quad::scale(*om, tau))).collect())
                .collect()
        })
        .collect()
}

fn complex_trilinear(grid: &Grid, data: &[Complex64], xi: Vec3) -> Complex64 {
    let n = grid.n_v;
    let d = grid.d_xi();
    let lo = -((n / 2) as f64) * d;
    let mut base = [0usize; 3];
    let mut frac = [0.0; 3];
    for a in 0..3 {
        let p = (xi[a] - lo) / d;
        if !(p >= 0.0) || p > (n - 1) as f64 {
            return Complex64::new(0.0, 0.0);
        }
        let i = (p.floor() as usize).min(n - 2);
        base[a] = i;
        frac[a] = p - i as f64;
    }
    let mut out = Complex64::new(0.0, 0.0);
    for corner in 0..8 {
        let (di, dj, dk) = (corner >> 2 & 1, corner >> 1 & 1, corner & 1);
        let w = (if di == 1 { frac[0] } else { 1.0 - frac[0] })
            * (if dj == 1 { frac[1] } else { 1.0 - frac[1] })
            * (if dk == 1 { frac[2] } else { 1.0 - frac[2] });
        out += data[((base[0] + di) * n + base[1] + dj) * n + base[2] + dk] * w;
    }
    out
}

/// The (x, ξ) form on tilde-side grid data, f̃⁽²⁾ = g̃ ⊗ h̃ evaluated on the diagonal
/// x_{k+1} = x_k. Off-grid frequencies are interpolated trilinearly, zero outside.
pub fn collide_xi(g: &Distribution, h: &Distribution, cfg: &CollisionConfig) -> Result<Distribution> {
    cfg.validate()?;
    if g.k != 1 || h.k != 1 {
        return Err(Error::Unsupported(
            "collide_xi takes separable one-particle factors; nonseparable two-particle input is not supported".into(),
        ));
    }
    if g.grid != h.grid {
        return Err(Error::GridMismatch("xi-form arguments live on different grids".into()));
    }
    if g.rep != Representation::XXi || h.rep != Representation::XXi {
        return arg("collide_xi needs inputs in the XXi representation");
    }
    let grid = g.grid;
    let vgrid = Grid::homogeneous(grid.n_v, grid.l_v)?;
    let xi_max = (grid.n_v / 2) as f64 * grid.d_xi() * 3f64.sqrt();
    let rules = XiRules::new(cfg, cfg.tau_cap.min(2.0 * xi_max));
    let nv3 = grid.n_v.pow(3);
    let xis = vgrid.xi_nodes();
    let mut values = Vec::with_capacity(g.values.len());
    for s in 0..g.values.len() / nv3 {
        let gs = &g.values[s * nv3..(s + 1) * nv3];
        let hs = &h.values[s * nv3..(s + 1) * nv3];
        let table = h_table(&rules, |y| complex_trilinear(&vgrid, hs, y));
        let slab: Vec<Complex64> = xis
            .par_iter()
            .map(|xi| {
                rules.eval(*xi, &cfg.pot, &|z| complex_trilinear(&vgrid, gs, z), &|io, ir, it, _| table[io][ir][it])
            })
            .collect();
        values.extend(slab);
    }
    Ok(Distribution { grid, rep: Representation::XXi, k: 1, eps: None, values })
}

/// Moments of a collision output together with the matching absolute moments.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConservationDefect {
    pub mass: f64,
    pub momentum: Vec3,
    pub energy: f64,
    /// ∫|Q|, ∫|v||Q|, ∫|v|²|Q|: scales for relative defects.
    pub scales: [f64; 3],
}

impl ConservationDefect {
    pub fn of(q: &Distribution) -> Self {
        let g = q.grid;
        let nodes = g.velocity_nodes();
        let nv3 = nodes.len();
        let (mut m, mut p, mut e) = (0.0, [0.0; 3], 0.0);
        let mut sc = [0.0; 3];
        for (i, z) in q.values.iter().enumerate() {
            let v = nodes[i % nv3];
            let (x, v2) = (z.re, dot(v, v));
            m += x;
            for a in 0..3 {
                p[a] += x * v[a];
            }
            e += x * v2;
            sc[0] += x.abs();
            sc[1] += x.abs() * v2.sqrt();
            sc[2] += x.abs() * v2;
        }
        let c = q.cell_measure();
        ConservationDefect {
            mass: m * c,
            momentum: [p[0] * c, p[1] * c, p[2] * c],
            energy: e * c,
            scales: [sc[0] * c, sc[1] * c, sc[2] * c],
        }
    }

    /// (mass, momentum, energy) defects divided by their absolute-moment scales.
    pub fn relative(&self) -> [f64; 3] {
        let r = |x: f64, s: f64| if s > 0.0 { x.abs() / s } else { 0.0 };
        let pm = (dot(self.momentum, self.momentum)).sqrt();
        [r(self.mass, self.scales[0]), r(pm, self.scales[1]), r(self.energy, self.scales[2])]
    }

    pub fn max_relative(&self) -> f64 {
        self.relative().into_iter().fold(0.0, f64::max)
    }
}

/// Moments of Q(f, f) for grid data.
pub fn conservation_defect(f: &Distribution, cfg: &CollisionConfig) -> Result<ConservationDefect> {
    Ok(ConservationDefect::of(&collide(f, f, cfg)?))
}

/// Moments of Q(f, f) for a callable density sampled on `grid`.
pub fn conservation_defect_analytic(
    f: &dyn VelocityDensity,
    grid: Grid,
    cfg: &CollisionConfig,
) -> Result<ConservationDefect> {
    Ok(ConservationDefect::of(&collide_analytic(f, f, grid, cfg)?))
}

/// Support centroid of |Q| in velocity.
pub fn velocity_centroid(q: &Distribution) -> Vec3 {
    let nodes = q.grid.velocity_nodes();
    let nv3 = nodes.len();
    let mut c = [0.0; 3];
    let mut m = 0.0;
    for (i, z) in q.values.iter().enumerate() {
        let a = z.norm();
        c = add(c, crate::quad::scale(nodes[i % nv3], a));
        m += a;
    }
    crate::quad::scale(c, 1.0 / m)
}
