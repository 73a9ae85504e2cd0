//! ε-dependent operators of the first hierarchy row (k = 1 coupled to particle 2)
//! and the ladder experiments built on them.

use std::collections::HashMap;
use std::f64::consts::PI;
use std::io::Write;
use std::sync::{Arc, Mutex, OnceLock};

use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution as _, StandardNormal};
use rayon::prelude::*;

use crate::density::{FourierDensity, GaussianMixture};
use crate::error::{arg, Error, Result};
use crate::kernel::{Potential, PotentialKind};
use crate::phase::{Distribution, Grid, NormSpec, Representation};
use crate::quad::{add, dot, gauss_hermite, gl_uniform, linfit, norm, scale, sub, SphereRule, Vec3};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum OpTag {
    A,
    B,
    Qeps,
    QepsMinusQ0,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpsLadder {
    pub eps_values: Vec<f64>,
    pub norm_spec: NormSpec,
    pub op_tag: OpTag,
}

impl EpsLadder {
    pub fn new(eps_values: Vec<f64>, norm_spec: NormSpec, op_tag: OpTag) -> Result<Self> {
        if eps_values.len() < 4 {
            return arg(format!("an eps ladder needs at least 4 rungs, got {}", eps_values.len()));
        }
        if eps_values.iter().any(|e| !(*e > 0.0 && e.is_finite())) {
            return arg("eps values must be positive and finite");
        }
        if eps_values.windows(2).any(|w| !(w[1] < w[0])) {
            return arg("eps values must be strictly decreasing");
        }
        Ok(EpsLadder { eps_values, norm_spec, op_tag })
    }

    /// ε = 2^{-m} for m = lo..=hi.
    pub fn dyadic(lo: i32, hi: i32, norm_spec: NormSpec, op_tag: OpTag) -> Result<Self> {
        Self::new((lo..=hi).map(|m| 2f64.powi(-m)).collect(), norm_spec, op_tag)
    }
}

/// Log-log fit of norm against ε. Norms are carried in log form as well because the
/// bump-window B ladder produces values far below the f64 range.
#[derive(Debug, Clone, PartialEq)]
pub struct ScalingReport {
    pub points: Vec<(f64, f64)>,
    pub log_norms: Vec<f64>,
    pub slope: f64,
    pub residual: f64,
}

impl ScalingReport {
    pub fn fit(points: &[(f64, f64)]) -> Result<Self> {
        if points.iter().any(|&(e, n)| !(e > 0.0 && n > 0.0 && n.is_finite())) {
            return Err(Error::Guard("scaling fit needs positive finite eps and norms".into()));
        }
        let eps: Vec<f64> = points.iter().map(|p| p.0).collect();
        Self::from_log_norms(&eps, points.iter().map(|p| p.1.ln()).collect())
    }

    pub fn from_log_norms(eps: &[f64], log_norms: Vec<f64>) -> Result<Self> {
        if eps.len() != log_norms.len() || eps.len() < 2 {
            return arg("scaling fit needs at least two matched points");
        }
        if log_norms.iter().any(|l| !l.is_finite()) {
            return Err(Error::Guard(format!("non-finite log norm in ladder: {log_norms:?}")));
        }
        let xs: Vec<f64> = eps.iter().map(|e| e.ln()).collect();
        let (slope, _, residual) = linfit(&xs, &log_norms);
        let points = eps.iter().zip(&log_norms).map(|(&e, &l)| (e, l.exp())).collect();
        Ok(ScalingReport { points, log_norms, slope, residual })
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "eps,norm,log_norm")?;
        for ((e, n), l) in self.points.iter().zip(&self.log_norms) {
            writeln!(w, "{e:e},{n:e},{l:e}")?;
        }
        writeln!(w, "slope,{:e},", self.slope)?;
        writeln!(w, "residual,{:e},", self.residual)
    }
}

fn check_eps(eps: f64) -> Result<()> {
    if !(eps > 0.0 && eps.is_finite()) {
        return arg(format!("eps must be positive, got {eps}"));
    }
    Ok(())
}

/// ε-oscillations e^{ih·x/ε} must stay resolved: h_x ≤ ε/4.
fn check_resolution(grid: &Grid, eps: f64) -> Result<()> {
    if grid.dim_x > 0 && grid.hx() > 0.25 * eps {
        let need = (8.0 * grid.l_x / eps).ceil() as usize;
        return Err(Error::UnderResolved {
            what: format!("n_x at eps = {eps} on a box of half-width {}", grid.l_x),
            required: need.next_power_of_two(),
        });
    }
    Ok(())
}

fn embed(x: &[f64]) -> Vec3 {
    let mut out = [0.0; 3];
    out[..x.len()].copy_from_slice(x);
    out
}

/// Position-space potential φ(|x|) rebuilt from the radial profile of φ̂,
/// φ(ρ) = (2π²ρ)^{-1} ∫ r φ̂(r) sin(rρ) dr, tabulated on [0, RHO_MAX].
#[derive(Debug, Clone)]
pub struct PositionProfile {
    step: f64,
    table: Vec<f64>,
}

impl PositionProfile {
    pub const RHO_MAX: f64 = 64.0;
    const ENTRIES: usize = 2048;

    pub fn new(pot: &Potential) -> Self {
        let r_max = match pot.kind {
            PotentialKind::BumpWindow { c2, .. } => 2.0 * c2,
            // the tail r φ̂ ~ r^{-δ} is cut here; the singular part of φ near 0 is smoothed accordingly
            PotentialKind::PowerLaw { cutoff, .. } => 64.0 * cutoff,
        };
        let breaks = pot.breakpoints(r_max);
        let nodes: Vec<(f64, f64)> = breaks
            .windows(2)
            .flat_map(|w| gl_uniform(w[0], w[1], 0.05, 8))
            .map(|(r, w)| (r, w * r * pot.profile(r)))
            .filter(|p| p.1 != 0.0)
            .collect();
        let step = Self::RHO_MAX / Self::ENTRIES as f64;
        let table = (0..=Self::ENTRIES)
            .into_par_iter()
            .map(|i| {
                let rho = i as f64 * step;
                if i == 0 {
                    nodes.iter().map(|(r, w)| w * r).sum::<f64>() / (2.0 * PI * PI)
                } else {
                    nodes.iter().map(|(r, w)| w * (r * rho).sin()).sum::<f64>() / (2.0 * PI * PI * rho)
                }
            })
            .collect();
        PositionProfile { step, table }
    }

    /// One table per potential shape, built on first use.
    pub fn cached(pot: &Potential) -> Arc<Self> {
        static CACHE: OnceLock<Mutex<HashMap<String, Arc<PositionProfile>>>> = OnceLock::new();
        let key = format!("{:?}", pot.kind);
        let cache = CACHE.get_or_init(Default::default);
        if let Some(p) = cache.lock().unwrap().get(&key) {
            return p.clone();
        }
        let built = Arc::new(Self::new(pot));
        cache.lock().unwrap().entry(key).or_insert(built).clone()
    }

    /// Linear interpolation in the table; zero beyond RHO_MAX.
    pub fn value(&self, rho: f64) -> f64 {
        let t = rho.abs() / self.step;
        let i = t.floor() as usize;
        if i >= Self::ENTRIES {
            return 0.0;
        }
        let frac = t - i as f64;
        self.table[i] * (1.0 - frac) + self.table[i + 1] * frac
    }
}

/// −i ε^{-1/2} Σ_σ σ φ((x₁−x₂)/ε + σ(ξ₁−ξ₂)/2); positions shorter than 3 are zero-padded.
pub fn a_multiplier(phi: &PositionProfile, eps: f64, x1: &[f64], xi1: Vec3, x2: &[f64], xi2: Vec3) -> Complex64 {
    let z = scale(sub(embed(x1), embed(x2)), 1.0 / eps);
    let d = sub(xi1, xi2);
    let s = phi.value(norm(add(z, scale(d, 0.5)))) - phi.value(norm(sub(z, scale(d, 0.5))));
    Complex64::new(0.0, -s / eps.sqrt())
}

/// A^ε on a two-particle (x, ξ) density.
pub fn apply_a(f2: &Distribution, pot: &Potential, eps: f64) -> Result<Distribution> {
    check_eps(eps)?;
    if f2.k != 2 || f2.rep != Representation::XXi {
        return arg("A acts on two-particle densities in the (x, xi) representation");
    }
    check_resolution(&f2.grid, eps)?;
    let phi = PositionProfile::cached(pot);
    let d = f2.grid.dim_x;
    let v3 = |c: &[f64]| [c[0], c[1], c[2]];
    let mult = Distribution::from_fn(f2.grid, Representation::XXi, 2, |c| {
        let p = d + 3;
        a_multiplier(&phi, eps, &c[..d], v3(&c[d..p]), &c[p..p + d], v3(&c[p + d..]))
    })?;
    let mut out = f2.clone();
    out.values.iter_mut().zip(&mult.values).for_each(|(v, m)| *v *= m);
    out.eps = Some(eps);
    Ok(out)
}

/// B^ε with N = ε^{-3}: two-particle (η, ξ) density to one-particle, reading ξ₂ = 0,
/// −i ε^{-1/2} Σ_σ σ ∫ φ̂(εη₂) e^{iσεξ₁·η₂/2} f(η₁−η₂, η₂, ξ₁, 0) dη₂/(2π)^d.
/// Offsets η₁−η₂ that leave the grid contribute zero.
pub fn apply_b(f2: &Distribution, pot: &Potential, eps: f64) -> Result<Distribution> {
    check_eps(eps)?;
    if f2.k != 2 || f2.rep != Representation::EtaXi {
        return arg("B acts on two-particle densities in the (eta, xi) representation");
    }
    let g = f2.grid;
    if g.dim_x == 0 {
        return Err(Error::Unsupported("B needs at least one spatial axis".into()));
    }
    check_resolution(&g, eps)?;
    let d = g.dim_x;
    let (nx, nv) = (g.n_x, g.n_v);
    let nv3 = nv * nv * nv;
    let nxd = nx.pow(d as u32);
    let c = nv / 2;
    let xi_zero = (c * nv + c) * nv + c;
    let digits = |mut i: usize| {
        let mut m = [0usize; 3];
        for a in (0..d).rev() {
            m[a] = i % nx;
            i /= nx;
        }
        m
    };
    let measure = (g.d_eta() / (2.0 * PI)).powi(d as i32);
    let xis = g.xi_nodes();
    // per η₂ node: coordinate and φ̂(ε|η₂|)
    let eta2: Vec<(Vec3, f64)> = (0..nxd)
        .map(|i| {
            let m = digits(i);
            let mut e = [0.0; 3];
            for a in 0..d {
                e[a] = g.eta_coord(m[a]);
            }
            (e, pot.profile(eps * norm(e)))
        })
        .collect();
    let values: Vec<Complex64> = (0..nxd * nv3)
        .into_par_iter()
        .map(|o| {
            let (i1, ix) = (o / nv3, o % nv3);
            let m1 = digits(i1);
            let xi1 = xis[ix];
            let mut acc = Complex64::new(0.0, 0.0);
            'outer: for (i2, &(e2, p)) in eta2.iter().enumerate() {
                if p == 0.0 {
                    continue;
                }
                let m2 = digits(i2);
                let mut idx = 0usize;
                for a in 0..d {
                    let k = m1[a] as isize - m2[a] as isize + (nx / 2) as isize;
                    if k < 0 || k >= nx as isize {
                        continue 'outer;
                    }
                    idx = idx * nx + k as usize;
                }
                let f = f2.values[((idx * nv3 + ix) * nxd + i2) * nv3 + xi_zero];
                // Σ_σ σ e^{iσθ} = 2i sin θ
                acc += f * (p * 2.0 * (0.5 * eps * dot(xi1, e2)).sin());
            }
            // −i · 2i = 2
            acc * (measure / eps.sqrt())
        })
        .collect();
    Ok(Distribution { grid: g, rep: Representation::EtaXi, k: 1, eps: Some(eps), values })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MonteCarloSpec {
    pub samples: usize,
    pub seed: u64,
}

fn normals(seed: u64, count: usize, dim: usize) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count).map(|_| (0..dim).map(|_| StandardNormal.sample(&mut rng)).collect()).collect()
}

fn log_mean_exp(xs: &[f64]) -> f64 {
    let m = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + (xs.iter().map(|x| (x - m).exp()).sum::<f64>() / xs.len() as f64).ln()
}

/// A-ladder on f = e^{-(|x₁|²+|x₂|²)/(2ε²)} e^{-(|ξ₁|²+|ξ₂|²)/2}: the ratio
/// ‖A^ε f‖ / ‖|∇_{x₁}|^{s/2}|∇_{x₂}|^{s/2} f‖ with s from the ladder's norm spec.
/// The left side is Monte Carlo with the same normal draws on every rung.
pub fn a_ladder(pot: &Potential, ladder: &EpsLadder, mc: MonteCarloSpec) -> Result<ScalingReport> {
    if ladder.op_tag != OpTag::A {
        return arg("a_ladder needs an A-tagged ladder");
    }
    if mc.samples == 0 {
        return arg("need at least one sample");
    }
    let s = ladder.norm_spec.s;
    if s >= 1.5 {
        return arg(format!("derivative budget must be below 3/2, got {s}"));
    }
    let phi = PositionProfile::cached(pot);
    let z = normals(mc.seed, mc.samples, 12);
    let logs: Vec<f64> = ladder
        .eps_values
        .par_iter()
        .map(|&eps| {
            let h = std::f64::consts::FRAC_1_SQRT_2;
            let mean_sq = z
                .iter()
                .map(|zz| {
                    let x1 = [eps * h * zz[0], eps * h * zz[1], eps * h * zz[2]];
                    let x2 = [eps * h * zz[3], eps * h * zz[4], eps * h * zz[5]];
                    let xi1 = [h * zz[6], h * zz[7], h * zz[8]];
                    let xi2 = [h * zz[9], h * zz[10], h * zz[11]];
                    a_multiplier(&phi, eps, &x1, xi1, &x2, xi2).norm_sqr()
                })
                .sum::<f64>()
                / z.len() as f64;
            // ∫|f|² = (πε²)³ π³
            let lhs2 = (PI * eps * eps).powi(3) * PI.powi(3) * mean_sq;
            let d = fractional_gaussian_energy(eps, s);
            let rhs2 = d * d * PI.powi(3);
            0.5 * (lhs2 / rhs2).ln()
        })
        .collect();
    ScalingReport::from_log_norms(&ladder.eps_values, logs)
}

/// ∫ |η|^s |Ĝ_ε(η)|² dη/(2π)³ for Ĝ_ε = (2πε²)^{3/2} e^{-ε²|η|²/2}, by radial quadrature.
pub fn fractional_gaussian_energy(eps: f64, s: f64) -> f64 {
    let amp = (2.0 * PI * eps * eps).powi(3);
    let integral: f64 = gl_uniform(0.0, 12.0 / eps, 0.25 / eps, 16)
        .iter()
        .map(|&(r, w)| w * r.powf(2.0 + s) * (-eps * eps * r * r).exp())
        .sum();
    4.0 * PI * amp * integral / (2.0 * PI).powi(3)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BLadderConfig {
    pub mc: MonteCarloSpec,
    /// Polar nodes of the η₂ sphere rule (azimuth uses twice as many).
    pub n_polar: usize,
    pub n_radial: usize,
    /// The ξ-data sit at ξ₀ e₁/ε, where the B estimate is saturated.
    pub xi0: f64,
}

impl BLadderConfig {
    pub fn new(mc: MonteCarloSpec) -> Self {
        BLadderConfig { mc, n_polar: 16, n_radial: 8, xi0: 1.0 }
    }
}

/// ζ-interval outside which |φ̂(ζ)| vanishes.
fn profile_window(pot: &Potential) -> (f64, f64) {
    match pot.kind {
        PotentialKind::BumpWindow { c1, c2 } => (0.5 * c1, 2.0 * c2),
        PotentialKind::PowerLaw { .. } => (0.0, f64::INFINITY),
    }
}

/// B-ladder on f̌ = e^{-|η₁|²/2} e^{-|η₂|²/2} e^{-|ξ₁−ξ₀e₁/ε|²/2} e^{-|ξ₂|²/2}: the ratio
/// ‖⟨η₁⟩^{-r} B^ε f̌‖ / ‖⟨η₁⟩^{r}⟨η₂⟩^{r} f̌(·,·,·,0)‖ with r from the norm spec.
/// The η₂ integral is done in log space so that rungs far below f64 range still fit.
pub fn b_ladder(pot: &Potential, ladder: &EpsLadder, cfg: BLadderConfig) -> Result<ScalingReport> {
    if ladder.op_tag != OpTag::B {
        return arg("b_ladder needs a B-tagged ladder");
    }
    if cfg.mc.samples == 0 || cfg.n_polar < 2 || cfg.n_radial == 0 {
        return arg("b_ladder needs samples, n_polar >= 2 and n_radial >= 1");
    }
    let w = ladder.norm_spec.r;
    let z = normals(cfg.mc.seed, cfg.mc.samples, 6);
    let (lo, hi) = profile_window(pot);
    let base = SphereRule::product(cfg.n_polar, 2 * cfg.n_polar);
    let ln2pi = (2.0 * PI).ln();
    let logs: Vec<f64> = ladder
        .eps_values
        .par_iter()
        .map(|&eps| {
            let terms: Vec<f64> = z
                .iter()
                .map(|zz| {
                    let eta1 = [zz[0], zz[1], zz[2]];
                    let h = std::f64::consts::FRAC_1_SQRT_2;
                    let xi1 = [cfg.xi0 / eps + h * zz[3], h * zz[4], h * zz[5]];
                    let e1 = dot(eta1, eta1);
                    let log_j = log_abs_b_integral(pot, eps, eta1, xi1, (lo / eps, hi / eps), &base, cfg.n_radial);
                    let ln_p1 = -1.5 * ln2pi - 0.5 * e1;
                    -w * (1.0 + e1).ln() - eps.ln() + 4f64.ln() + 2.0 * log_j - 6.0 * ln2pi - ln_p1
                })
                .collect();
            let log_lhs2 = 1.5 * PI.ln() - 6.0 * ln2pi + log_mean_exp(&terms);
            let weighted: f64 = gl_uniform(0.0, 10.0, 0.5, 16)
                .iter()
                .map(|&(r, wr)| wr * 4.0 * PI * r * r * (1.0 + r * r).powf(w) * (-r * r).exp())
                .sum::<f64>()
                / (2.0 * PI).powi(3);
            let log_rhs2 = 2.0 * weighted.ln() + 1.5 * PI.ln() - 3.0 * ln2pi;
            0.5 * (log_lhs2 - log_rhs2)
        })
        .collect();
    ScalingReport::from_log_norms(&ladder.eps_values, logs)
}

/// ln |∫ φ̂(ε|η₂|) sin(εξ₁·η₂/2) e^{-|η₁|²/4 - |η₂-η₁/2|²} dη₂| over the radial window (lo, hi).
fn log_abs_b_integral(
    pot: &Potential,
    eps: f64,
    eta1: Vec3,
    xi1: Vec3,
    (lo, hi): (f64, f64),
    base: &SphereRule,
    n_radial: usize,
) -> f64 {
    let centre = 0.5 * norm(eta1);
    let r_hi = hi.min(lo.max(centre) + 8.0);
    if !(r_hi > lo) {
        return f64::NEG_INFINITY;
    }
    let mut breaks: Vec<f64> = pot.breakpoints(r_hi * eps).into_iter().map(|b| b / eps).filter(|&b| b > lo).collect();
    breaks.insert(0, lo);
    let radial: Vec<(f64, f64)> = breaks.windows(2).flat_map(|b| gl_uniform(b[0], b[1], 0.25, n_radial)).collect();
    let sphere = base.clone().aligned(eta1);
    let half = scale(eta1, 0.5);
    let e1 = 0.25 * dot(eta1, eta1);
    let mut terms = Vec::with_capacity(radial.len() * sphere.len());
    for &(r, wr) in &radial {
        let p = pot.profile(eps * r);
        if p == 0.0 {
            continue;
        }
        for (om, &wo) in sphere.nodes.iter().zip(&sphere.weights) {
            let y = scale(*om, r);
            let c = wr * wo * r * r * p * (0.5 * eps * dot(xi1, y)).sin();
            if c != 0.0 {
                let d = sub(y, half);
                terms.push((c, -e1 - dot(d, d)));
            }
        }
    }
    let m = terms.iter().map(|t| t.1).fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    let s: f64 = terms.iter().map(|(c, e)| c * (e - m).exp()).sum();
    s.abs().ln() + m
}

/// f̌(α, β, ξ₁, ξ₂) = ĝ(α) ĝ(β) k̃₁(ξ₁) k̃₂(ξ₂) with ĝ(η) = e^{-a|η|²/2}
/// and k̃ the Fourier transforms of two velocity mixtures.
#[derive(Debug, Clone)]
pub struct SeparableData {
    pub position_var: f64,
    pub k1: GaussianMixture,
    pub k2: GaussianMixture,
}

impl SeparableData {
    pub fn new(position_var: f64, k1: GaussianMixture, k2: GaussianMixture) -> Result<Self> {
        if !(position_var > 0.0 && position_var.is_finite()) {
            return arg("position variance must be positive");
        }
        Ok(SeparableData { position_var, k1, k2 })
    }

    pub fn value(&self, alpha: Vec3, beta: Vec3, xi1: Vec3, xi2: Vec3) -> Complex64 {
        let a = self.position_var;
        let g = (-0.5 * a * (dot(alpha, alpha) + dot(beta, beta))).exp();
        self.k1.fourier(xi1) * self.k2.fourier(xi2) * g
    }

    /// (ĝ * ĝ)(η) with the dual measure dη/(2π)³.
    pub fn position_convolution(&self, eta: Vec3) -> f64 {
        let a = self.position_var;
        (-0.25 * a * dot(eta, eta)).exp() * (PI / a).powf(1.5) / (2.0 * PI).powi(3)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QepsConfig {
    /// Polar nodes of the y-direction sphere (azimuth uses twice as many).
    pub n_omega: usize,
    pub n_radial: usize,
    /// Gauss–Hermite nodes per axis for the η₂ integral.
    pub n_hermite: usize,
    pub s_max: f64,
    pub tau_cap: f64,
    pub r_max: f64,
    /// Time horizon; the s-integral stops at t/ε.
    pub t: f64,
}

impl QepsConfig {
    pub fn new() -> Self {
        QepsConfig { n_omega: 6, n_radial: 6, n_hermite: 5, s_max: 200.0, tau_cap: 8.0, r_max: 64.0, t: 1.0 }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_omega < 2 || self.n_radial == 0 || self.n_hermite == 0 {
            return arg("Q^eps quadrature orders must be positive (n_omega >= 2)");
        }
        if !(self.s_max > 0.0 && self.tau_cap > 0.0 && self.r_max > 0.0 && self.t > 0.0) {
            return arg("s_max, tau_cap, r_max and t must be positive");
        }
        Ok(())
    }
}

impl Default for QepsConfig {
    fn default() -> Self {
        Self::new()
    }
}

struct QRules {
    hermite: Vec<(Vec3, f64)>,
    sphere: SphereRule,
    /// (r, w·r, φ̂(r), τ rule)
    radial: Vec<(f64, f64, f64, Vec<(f64, f64)>)>,
}

impl QRules {
    fn new(pot: &Potential, eps: f64, cfg: &QepsConfig) -> Self {
        let gh = gauss_hermite(cfg.n_hermite);
        let mut hermite = Vec::with_capacity(gh.len().pow(3));
        for &(a, wa) in &gh {
            for &(b, wb) in &gh {
                for &(c, wc) in &gh {
                    hermite.push(([a, b, c], wa * wb * wc));
                }
            }
        }
        let s_end = if eps > 0.0 { (cfg.t / eps).min(cfg.s_max) } else { cfg.s_max };
        let radial = pot
            .radial_rule(cfg.n_radial, cfg.r_max)
            .into_iter()
            .filter_map(|(r, w)| {
                let p = pot.profile(r);
                if w * r * p == 0.0 {
                    return None;
                }
                let end = (s_end * r).min(cfg.tau_cap);
                Some((r, w * r, p, gl_uniform(0.0, end, (2.0 / r).min(1.0), 8)))
            })
            .collect();
        QRules { hermite, sphere: SphereRule::product(cfg.n_omega, 2 * cfg.n_omega), radial }
    }

    /// The rescaled Q^ε with y = rω and s = τ/r,
    /// −(prefactor/π) Σ ασ ∫dη₂/(2π)³ ∫dω ∫dr r ∫dτ φ̂(εη₂−rω) φ̂(r) e^{iαξ·(εη₂−rω)/2} e^{iσrξ·ω/2}
    ///   e^{-iστ(ε(η₁−2η₂)·ω/2 + r)} f̌(η₁−η₂, η₂, ξ − τ(ω + ε(η₁−η₂)/r), τ(ω − εη₂/r)),
    /// normalized like collide_xi so that ε = 0 is the limit operator.
    fn eval(&self, data: &SeparableData, pot: &Potential, eps: f64, eta1: Vec3, xi1: Vec3) -> Complex64 {
        let a = data.position_var;
        let inv_sa = 1.0 / a.sqrt();
        let mut total = Complex64::new(0.0, 0.0);
        for &(zn, wz) in &self.hermite {
            let eta2 = add(scale(eta1, 0.5), scale(zn, inv_sa));
            let d1 = sub(eta1, eta2);
            let alpha_shift = 0.5 * eps * dot(xi1, eta2);
            let b = scale(sub(eta1, scale(eta2, 2.0)), 0.5 * eps);
            let e_eta2 = scale(eta2, eps);
            let mut acc = Complex64::new(0.0, 0.0);
            for (om, &wo) in self.sphere.nodes.iter().zip(&self.sphere.weights) {
                let xo = dot(xi1, *om);
                let bo = dot(b, *om);
                for (r, wr, pr, taus) in &self.radial {
                    let p2 = if eps == 0.0 { *pr } else { pot.profile(norm(sub(e_eta2, scale(*om, *r)))) };
                    if p2 == 0.0 {
                        continue;
                    }
                    let dir1 = add(*om, scale(d1, eps / r));
                    let dir2 = sub(*om, scale(eta2, eps / r));
                    let beta = bo + r;
                    let mut s_sigma = [Complex64::new(0.0, 0.0); 2];
                    for &(tau, wt) in taus {
                        let kk = data.k1.fourier(sub(xi1, scale(dir1, tau))) * data.k2.fourier(scale(dir2, tau)) * wt;
                        let ph = Complex64::from_polar(1.0, -tau * beta);
                        s_sigma[0] += ph * kk;
                        s_sigma[1] += ph.conj() * kk;
                    }
                    let mut inner = Complex64::new(0.0, 0.0);
                    for alpha in [1.0f64, -1.0] {
                        let pa = Complex64::from_polar(1.0, alpha * (alpha_shift - 0.5 * r * xo));
                        for (si, sigma) in [1.0f64, -1.0].into_iter().enumerate() {
                            let ps = Complex64::from_polar(1.0, 0.5 * sigma * r * xo);
                            inner += alpha * sigma * pa * ps * s_sigma[si];
                        }
                    }
                    acc += inner * (wo * wr * pr * p2);
                }
            }
            total += acc * wz;
        }
        let pre = (-0.25 * a * dot(eta1, eta1)).exp() * inv_sa.powi(3) / (2.0 * PI).powi(3);
        -total * (pre * pot.prefactor / PI)
    }
}

/// Q^ε at the given (η₁, ξ₁) points; ε = 0 evaluates the limit operator on the same rules.
pub fn apply_qeps(
    data: &SeparableData,
    pot: &Potential,
    eps: f64,
    cfg: &QepsConfig,
    points: &[(Vec3, Vec3)],
) -> Result<Vec<Complex64>> {
    cfg.validate()?;
    if !(eps >= 0.0 && eps.is_finite()) {
        return arg(format!("eps must be >= 0, got {eps}"));
    }
    let rules = QRules::new(pot, eps, cfg);
    Ok(points.par_iter().map(|&(e, x)| rules.eval(data, pot, eps, e, x)).collect())
}

pub fn apply_q0(data: &SeparableData, pot: &Potential, cfg: &QepsConfig, points: &[(Vec3, Vec3)]) -> Result<Vec<Complex64>> {
    apply_qeps(data, pot, 0.0, cfg, points)
}

/// Fails when doubling s_max moves the result by more than 1% (relative l2 over the points).
pub fn check_s_max(
    data: &SeparableData,
    pot: &Potential,
    eps: f64,
    cfg: &QepsConfig,
    points: &[(Vec3, Vec3)],
) -> Result<()> {
    let base = apply_qeps(data, pot, eps, cfg, points)?;
    let doubled = apply_qeps(data, pot, eps, &QepsConfig { s_max: 2.0 * cfg.s_max, ..*cfg }, points)?;
    let diff: f64 = base.iter().zip(&doubled).map(|(a, b)| (a - b).norm_sqr()).sum::<f64>().sqrt();
    let size: f64 = doubled.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
    if diff > 0.01 * size {
        return Err(Error::UnderResolved {
            what: format!("s_max = {} changes Q^eps by {:.2}% when doubled", cfg.s_max, 100.0 * diff / size),
            required: (2.0 * cfg.s_max).ceil() as usize,
        });
    }
    Ok(())
}

/// Output points for the L² norm: η₁ ~ N(0, I/a), ξ₁ ~ N(0, I), with their joint density.
pub fn qeps_norm_points(data: &SeparableData, count: usize, seed: u64) -> Vec<((Vec3, Vec3), f64)> {
    let inv = 1.0 / data.position_var.sqrt();
    normals(seed, count, 6)
        .into_iter()
        .map(|z| {
            let eta = [z[0] * inv, z[1] * inv, z[2] * inv];
            let xi = [z[3], z[4], z[5]];
            let q: f64 = z.iter().map(|v| v * v).sum();
            let pdf = (2.0 * PI).powi(-3) * data.position_var.powf(1.5) * (-0.5 * q).exp();
            ((eta, xi), pdf)
        })
        .collect()
}

fn mc_norm(values: &[Complex64], pdfs: &[f64]) -> f64 {
    let m = values.iter().zip(pdfs).map(|(v, p)| v.norm_sqr() / p).sum::<f64>() / values.len() as f64;
    (m / (2.0 * PI).powi(6)).sqrt()
}

#[derive(Debug, Clone, PartialEq)]
pub struct QepsReport {
    pub eps: Vec<f64>,
    pub q_norms: Vec<f64>,
    pub diff_norms: Vec<f64>,
    pub q0_norm: f64,
}

impl QepsReport {
    /// max/min of ‖Q^ε f‖ over the ladder.
    pub fn spread(&self) -> f64 {
        let max = self.q_norms.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let min = self.q_norms.iter().cloned().fold(f64::INFINITY, f64::min);
        max / min
    }

    pub fn diff_strictly_decreasing(&self) -> bool {
        self.diff_norms.windows(2).all(|w| w[1] < w[0])
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "eps,q_norm,diff_norm")?;
        for i in 0..self.eps.len() {
            writeln!(w, "{:e},{:e},{:e}", self.eps[i], self.q_norms[i], self.diff_norms[i])?;
        }
        writeln!(w, "0,{:e},0", self.q0_norm)
    }
}

/// ‖Q^ε f‖ and ‖Q^ε f − Q⁰ f‖ along the ladder, Monte Carlo over the same output points on every rung.
pub fn qeps_ladder(
    data: &SeparableData,
    pot: &Potential,
    eps_values: &[f64],
    cfg: &QepsConfig,
    mc: MonteCarloSpec,
) -> Result<QepsReport> {
    if mc.samples == 0 {
        return arg("need at least one output point");
    }
    let sampled = qeps_norm_points(data, mc.samples, mc.seed);
    let points: Vec<(Vec3, Vec3)> = sampled.iter().map(|s| s.0).collect();
    let pdfs: Vec<f64> = sampled.iter().map(|s| s.1).collect();
    let q0 = apply_q0(data, pot, cfg, &points)?;
    let mut q_norms = Vec::new();
    let mut diff_norms = Vec::new();
    for &eps in eps_values {
        check_eps(eps)?;
        let q = apply_qeps(data, pot, eps, cfg, &points)?;
        let diff: Vec<Complex64> = q.iter().zip(&q0).map(|(a, b)| a - b).collect();
        q_norms.push(mc_norm(&q, &pdfs));
        diff_norms.push(mc_norm(&diff, &pdfs));
    }
    Ok(QepsReport { eps: eps_values.to_vec(), q_norms, diff_norms, q0_norm: mc_norm(&q0, &pdfs) })
}

/// How the ladder input is built for each operator.
#[derive(Debug, Clone)]
pub enum LadderInput {
    Product(MonteCarloSpec),
    Saturating(BLadderConfig),
    Separable { data: SeparableData, cfg: QepsConfig, mc: MonteCarloSpec },
}

pub fn scaling_ladder(pot: &Potential, ladder: &EpsLadder, input: &LadderInput) -> Result<ScalingReport> {
    match (ladder.op_tag, input) {
        (OpTag::A, LadderInput::Product(mc)) => a_ladder(pot, ladder, *mc),
        (OpTag::B, LadderInput::Saturating(cfg)) => b_ladder(pot, ladder, *cfg),
        (OpTag::Qeps | OpTag::QepsMinusQ0, LadderInput::Separable { data, cfg, mc }) => {
            let rep = qeps_ladder(data, pot, &ladder.eps_values, cfg, *mc)?;
            let norms = if ladder.op_tag == OpTag::Qeps { rep.q_norms } else { rep.diff_norms };
            let points: Vec<(f64, f64)> = ladder.eps_values.iter().cloned().zip(norms).collect();
            ScalingReport::fit(&points)
        }
        (tag, _) => arg(format!("ladder input does not match operator {tag:?}")),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ladder_validation() {
        let ns = NormSpec::default();
        assert!(EpsLadder::new(vec![0.5, 0.25, 0.125], ns, OpTag::A).is_err());
        assert!(EpsLadder::new(vec![0.5, 0.25, 0.25, 0.1], ns, OpTag::A).is_err());
        assert!(EpsLadder::dyadic(2, 6, ns, OpTag::B).is_ok());
    }

    #[test]
    fn synthetic_fits() {
        let flat: Vec<(f64, f64)> = (2..7).map(|m| (2f64.powi(-m), 3.0)).collect();
        let r = ScalingReport::fit(&flat).unwrap();
        assert!(r.slope.abs() < 1e-12 && r.residual < 1e-12);
        let half: Vec<(f64, f64)> = (2..7).map(|m| (2f64.powi(-m), 2f64.powi(-m).sqrt())).collect();
        let r = ScalingReport::fit(&half).unwrap();
        assert!((r.slope - 0.5).abs() < 1e-12);
        assert!(ScalingReport::fit(&[(0.5, 0.0), (0.25, 1.0)]).is_err());
    }

    #[test]
    fn position_profile_matches_gaussian_transform() {
        // φ̂ = window; check φ(0) against (2π²)^{-1}∫ r² φ̂ dr computed independently
        let pot = Potential::bump_window(1.0, 2.0).unwrap();
        let p = PositionProfile::new(&pot);
        let direct: f64 = gl_uniform(0.0, 4.0, 0.01, 8).iter().map(|&(r, w)| w * r * r * pot.profile(r)).sum();
        assert!((p.value(0.0) - direct / (2.0 * PI * PI)).abs() < 1e-10 * direct);
        assert_eq!(p.value(100.0), 0.0);
    }

    #[test]
    fn fractional_energy_closed_form() {
        // ∫ r^{2+s} e^{-ε²r²} dr = Γ((3+s)/2) / (2 ε^{3+s}); Γ(2) = 1 at s = 1
        let eps = 0.125;
        let want = 4.0 * PI * (2.0 * PI * eps * eps).powi(3) * 0.5 / eps.powi(4) / (2.0 * PI).powi(3);
        assert!((fractional_gaussian_energy(eps, 1.0) / want - 1.0).abs() < 1e-12);
    }

    #[test]
    fn resolution_is_enforced() {
        let g = Grid::new(1, 8, 1.0, 4, 3.0).unwrap();
        let f = Distribution::zeros(g, Representation::XXi, 2).unwrap();
        let pot = Potential::bump_window(1.0, 2.0).unwrap();
        match apply_a(&f, &pot, 0.25) {
            Err(Error::UnderResolved { required, .. }) => assert_eq!(required, 32),
            other => panic!("expected under-resolution, got {other:?}"),
        }
        assert!(apply_a(&f, &pot, 1.0).is_ok());
    }
}
