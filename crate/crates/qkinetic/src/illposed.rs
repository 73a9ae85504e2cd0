//! Norm deflation below one x-derivative: the concentrated datum f, the
//! directional datum g, the loss-term product approximation Q⁻(f, g) ≈ f·r·χ(Mx)
//! with r = M^{1−s} N₂^{−s₁}, and the closed-form deflation curve of f_a.
//!
//! χ(z) = e^{−|z|²/2} has χ(0) = 1 and χ̂(z) = (2π)^{−3/2} e^{−|z|²/2} has unit
//! integral; with these the constants in the product approximation are all
//! one, and the data norms come out O(1) as they should.

use std::f64::consts::PI;
use std::io::Write;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution as _, StandardNormal, UnitSphere};
use rayon::prelude::*;

use crate::error::{arg, Error, Result};
use crate::kernel::Potential;
use crate::quad::{add, dot, gl_uniform, scale, sub, Vec3};

pub const MAX_J_SAMPLE: usize = 512;
pub const MIN_PROBE_NODES: usize = 100_000;
/// Standard errors the verdict must clear the band by before it counts.
pub const PROBE_Z: f64 = 3.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DeflationConfig {
    pub m: f64,
    pub n2: f64,
    pub s: f64,
    pub s1: f64,
    pub delta: f64,
    pub j_sample: usize,
}

fn is_dyadic(x: f64) -> bool {
    x >= 2.0 && x.is_finite() && x.log2().fract() == 0.0
}

impl DeflationConfig {
    /// s = 1 is admitted for the closed-form curve only; the bad data need s < 1.
    pub fn new(m: f64, n2: f64, s: f64, s1: f64, delta: f64, j_sample: usize) -> Result<Self> {
        if !is_dyadic(m) || !is_dyadic(n2) {
            return arg(format!("M and N2 must be powers of two >= 2, got {m} and {n2}"));
        }
        if !(s > 0.0 && s <= 1.0) {
            return arg(format!("need 0 < s <= 1, got {s}"));
        }
        if !(s1 > 0.0 && s1.is_finite()) {
            return arg(format!("velocity weight must be positive, got {s1}"));
        }
        if !(delta > 0.0 && delta.is_finite()) {
            return arg(format!("inflation exponent must be positive, got {delta}"));
        }
        if j_sample == 0 || j_sample > MAX_J_SAMPLE {
            return arg(format!("need 1 <= j_sample <= {MAX_J_SAMPLE}, got {j_sample}"));
        }
        Ok(DeflationConfig { m, n2, s, s1, delta, j_sample })
    }

    /// s₀ = s − ln ln M / ln M.
    pub fn s0(&self) -> f64 {
        let l = self.m.ln();
        self.s - l.ln() / l
    }

    /// r = M^{1−s} N₂^{−s₁}, the loss rate on the support of f.
    pub fn rate(&self) -> f64 {
        self.m.powf(1.0 - self.s) * self.n2.powf(-self.s1)
    }

    /// T* = −δ ln M / r.
    pub fn t_star(&self) -> f64 {
        -self.delta * self.m.ln() / self.rate()
    }

    /// J = M² N₂², the number of directions in the full grid.
    pub fn j_total(&self) -> usize {
        (self.m * self.m * self.n2 * self.n2) as usize
    }
}

/// ‖f_a(t)‖ ≈ M^{s₀−s} (e^{−rt} ⟨rt⟩^{s₀} + 1), constants set to one.
pub fn deflation_norm(cfg: &DeflationConfig, t: f64) -> f64 {
    log_deflation_norm(cfg, t).exp()
}

/// ln of [`deflation_norm`], finite where e^{−rt} overflows.
pub fn log_deflation_norm(cfg: &DeflationConfig, t: f64) -> f64 {
    let rt = cfg.rate() * t;
    let a = -rt + 0.5 * cfg.s0() * (rt * rt).ln_1p();
    let softplus = if a > 0.0 { a + (-a).exp().ln_1p() } else { a.exp().ln_1p() };
    // M^{s₀−s} = e^{−ln ln M} exactly
    softplus - cfg.m.ln().ln()
}

#[derive(Debug, Clone, PartialEq)]
pub struct DeflationCurve {
    pub cfg: DeflationConfig,
    pub t: Vec<f64>,
    pub norm: Vec<f64>,
}

impl DeflationCurve {
    /// norm(T*) / norm(0).
    pub fn ratio(&self) -> f64 {
        self.norm[0] / self.norm[self.norm.len() - 1]
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "t,norm")?;
        for (t, n) in self.t.iter().zip(&self.norm) {
            writeln!(w, "{t:e},{n:e}")?;
        }
        Ok(())
    }

    pub fn write_summary_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        let c = &self.cfg;
        writeln!(w, "ratio,M,s,s1,delta")?;
        writeln!(w, "{:e},{},{},{},{}", self.ratio(), c.m, c.s, c.s1, c.delta)
    }
}

/// The closed form on `n_times` equally spaced times from T* to 0.
pub fn deflation_curve(cfg: &DeflationConfig, n_times: usize) -> Result<DeflationCurve> {
    if n_times < 2 {
        return arg("need at least two times");
    }
    let ts = cfg.t_star();
    let t: Vec<f64> = (0..n_times).map(|i| ts * (1.0 - i as f64 / (n_times - 1) as f64)).collect();
    let norm = t.iter().map(|&t| deflation_norm(cfg, t)).collect();
    Ok(DeflationCurve { cfg: *cfg, t, norm })
}

/// E[(1 + Σ c_k Z_k²)^p] for standard normal Z and p < 1.
///
/// Uses (1+a)^p ∝ ∫ (1 − e^{−τ(1+a)}) τ^{−p−1} dτ for 0 < p < 1 and
/// (1+a)^p ∝ ∫ τ^{−p−1} e^{−τ(1+a)} dτ for p < 0, where the Gaussian average of
/// e^{−τa} is ∏(1 + 2τc_k)^{−1/2}. The same rule at c = 0 supplies the
/// normalization, so no Gamma function is needed.
pub fn gaussian_moment(c: [f64; 3], p: f64) -> Result<f64> {
    if !(p < 1.0 && p.is_finite()) {
        return Err(Error::Unsupported(format!("moment exponent must be below 1, got {p}")));
    }
    if c.iter().any(|&x| !(x >= 0.0 && x.is_finite())) {
        return arg(format!("scales must be nonnegative, got {c:?}"));
    }
    if p == 0.0 {
        return Ok(1.0);
    }
    let one = |c: [f64; 3]| -> f64 {
        let sc: f64 = c.iter().sum();
        // below y0 the first-order expansion in τ is exact to 1e-8
        let y0 = (1e-8 / (1.0 + sc)).ln();
        let y1 = 40f64.ln();
        let log_phi = |tau: f64| -tau - 0.5 * c.iter().map(|&ck| (2.0 * tau * ck).ln_1p()).sum::<f64>();
        let rule = gl_uniform(y0, y1, 0.5, 10);
        if p > 0.0 {
            let mid: f64 = rule.iter().map(|&(y, w)| w * -log_phi(y.exp()).exp_m1() * (-p * y).exp()).sum();
            (1.0 + sc) * ((1.0 - p) * y0).exp() / (1.0 - p) + mid + (-p * y1).exp() / p
        } else {
            let q = -p;
            let mid: f64 = rule.iter().map(|&(y, w)| w * (q * y + log_phi(y.exp())).exp()).sum();
            (q * y0).exp() / q + mid
        }
    };
    Ok(one(c) / one([0.0; 3]))
}

/// ∫ (1 + |z|²)^p e^{−z·Σz/2} dz for Σ with eigenvalues `lambda`.
fn weighted_gaussian_integral(lambda: [f64; 3], p: f64) -> Result<f64> {
    let det: f64 = lambda.iter().product();
    let m = gaussian_moment(lambda.map(|l| 1.0 / l), p)?;
    Ok((2.0 * PI).powf(1.5) / det.sqrt() * m)
}

/// The anisotropic scaling A = a_perp (I − ee^T) + a_par ee^T.
#[derive(Debug, Clone, Copy, PartialEq)]
struct Needle {
    e: Vec3,
    a_perp: f64,
    a_par: f64,
}

impl Needle {
    fn apply(&self, x: Vec3) -> Vec3 {
        let along = dot(self.e, x);
        add(scale(x, self.a_perp), scale(self.e, (self.a_par - self.a_perp) * along))
    }

    fn inverse(&self) -> Needle {
        Needle { e: self.e, a_perp: 1.0 / self.a_perp, a_par: 1.0 / self.a_par }
    }

    fn det(&self) -> f64 {
        self.a_perp * self.a_perp * self.a_par
    }

    /// Eigenvalues of A_a² + A_b². The in-plane determinant is expanded into
    /// positive terms so near-parallel axes do not cancel.
    fn sum_sq_eigs(&self, b: &Needle) -> [f64; 3] {
        let c = dot(self.e, b.e).clamp(-1.0, 1.0);
        let (c2, s2) = (c * c, 1.0 - c * c);
        let (pa, qa) = (self.a_par * self.a_par, self.a_perp * self.a_perp);
        let (pb, qb) = (b.a_par * b.a_par, b.a_perp * b.a_perp);
        let s11 = pa + qb * s2 + pb * c2;
        let s22 = qa + qb * c2 + pb * s2;
        let s12 = (pb - qb) * c * s2.sqrt();
        let det = pa * qa + pa * (qb * c2 + pb * s2) + qa * (qb * s2 + pb * c2) + pb * qb;
        let big = 0.5 * (s11 + s22 + ((s11 - s22).powi(2) + 4.0 * s12 * s12).sqrt());
        [qa + qb, big, det / big]
    }
}

/// ⟨χ(A_a·), χ(A_b·)⟩ in H^s with the unitary Fourier transform.
fn hs_inner(a: &Needle, b: &Needle, s: f64) -> Result<f64> {
    let lam = a.inverse().sum_sq_eigs(&b.inverse());
    Ok(weighted_gaussian_integral(lam, s)? / (a.det() * b.det()))
}

/// ⟨χ̂(A_a·), χ̂(A_b·)⟩ in L² with weight ⟨v⟩^{2w}.
fn l2w_inner(a: &Needle, b: &Needle, w: f64) -> Result<f64> {
    Ok(weighted_gaussian_integral(a.sum_sq_eigs(b), w)? / (2.0 * PI).powi(3))
}

fn chi(z: Vec3) -> f64 {
    (-0.5 * dot(z, z)).exp()
}

fn chi_hat(z: Vec3) -> f64 {
    (2.0 * PI).powf(-1.5) * chi(z)
}

/// n roughly equally spaced unit vectors (spherical Fibonacci lattice).
pub fn fibonacci_directions(n: usize) -> Vec<Vec3> {
    let golden = PI * (3.0 - 5f64.sqrt());
    (0..n)
        .map(|i| {
            let z = 1.0 - (2 * i + 1) as f64 / n as f64;
            let r = (1.0 - z * z).max(0.0).sqrt();
            let phi = golden * i as f64;
            [r * phi.cos(), r * phi.sin(), z]
        })
        .collect()
}

/// The data pair (f, g). g carries the sampled directions only, each standing in
/// for J / j_sample directions of the full grid.
#[derive(Debug, Clone, PartialEq)]
pub struct BadData {
    pub cfg: DeflationConfig,
    pub directions: Vec<Vec3>,
}

pub fn build_bad_data(cfg: &DeflationConfig) -> Result<BadData> {
    if cfg.s >= 1.0 {
        return arg(format!("s = {} is outside the ill-posed range s < 1", cfg.s));
    }
    let n = cfg.j_sample.min(cfg.j_total());
    Ok(BadData { cfg: *cfg, directions: fibonacci_directions(n) })
}

impl BadData {
    fn needle(&self, e: Vec3) -> Needle {
        Needle { e, a_perp: self.cfg.m, a_par: 1.0 / self.cfg.n2 }
    }

    fn f_needle(&self) -> Needle {
        Needle { e: [0.0, 0.0, 1.0], a_perp: self.cfg.m, a_par: self.cfg.m }
    }

    /// J / j_sample.
    pub fn direction_weight(&self) -> f64 {
        self.cfg.j_total() as f64 / self.directions.len() as f64
    }

    fn g_amplitude(&self) -> f64 {
        let c = &self.cfg;
        c.m.powf(1.0 - c.s) * c.n2.powf(-2.0 - c.s1)
    }

    /// M^{3−s} χ(Mx) χ̂(Mv).
    pub fn f(&self, x: Vec3, v: Vec3) -> f64 {
        let m = self.cfg.m;
        m.powf(3.0 - self.cfg.s) * chi(scale(x, m)) * chi_hat(scale(v, m))
    }

    pub fn g(&self, x: Vec3, v: Vec3) -> f64 {
        let sum: f64 = self
            .directions
            .iter()
            .map(|&e| {
                let a = self.needle(e);
                chi(a.apply(x)) * chi_hat(a.apply(v))
            })
            .sum();
        self.g_amplitude() * self.direction_weight() * sum
    }

    /// ‖f‖ in H^s_x L^{2,s₁}_v.
    pub fn f_norm(&self) -> Result<f64> {
        let a = self.f_needle();
        let c = &self.cfg;
        let sq = c.m.powf(6.0 - 2.0 * c.s) * hs_inner(&a, &a, c.s)? * l2w_inner(&a, &a, c.s1)?;
        Ok(sq.sqrt())
    }

    /// Norm of one directional summand; rotation invariance makes it the same for all.
    pub fn g_summand_norm(&self) -> Result<f64> {
        let a = self.needle([0.0, 0.0, 1.0]);
        let c = &self.cfg;
        Ok(self.g_amplitude() * (hs_inner(&a, &a, c.s)? * l2w_inner(&a, &a, c.s1)?).sqrt())
    }

    /// ‖g‖ over the full grid by additivity: √J times the summand norm.
    pub fn g_norm(&self) -> Result<f64> {
        Ok((self.cfg.j_total() as f64).sqrt() * self.g_summand_norm()?)
    }

    /// (Σ_ij ⟨g_i, g_j⟩) / (Σ_i ‖g_i‖²) over the sampled directions: one when the
    /// square of the sum equals the sum of the squares.
    pub fn overlap_ratio(&self) -> Result<f64> {
        let c = self.cfg;
        let needles: Vec<Needle> = self.directions.iter().map(|&e| self.needle(e)).collect();
        let rows: Vec<f64> = needles
            .par_iter()
            .map(|a| {
                needles
                    .iter()
                    .map(|b| Ok(hs_inner(a, b, c.s)? * l2w_inner(a, b, c.s1)?))
                    .sum::<Result<f64>>()
            })
            .collect::<Result<_>>()?;
        let diag = hs_inner(&needles[0], &needles[0], c.s)? * l2w_inner(&needles[0], &needles[0], c.s1)?;
        Ok(rows.iter().sum::<f64>() / (diag * needles.len() as f64))
    }

    /// f · r · χ(Mx), the predicted loss term.
    pub fn predicted_loss(&self, x: Vec3, v: Vec3) -> f64 {
        self.f(x, v) * self.cfg.rate() * chi(scale(x, self.cfg.m))
    }

    /// Points drawn from the shape of f: x, v ~ N(0, M^{−2} I).
    pub fn support_points(&self, n: usize, seed: u64) -> Vec<(Vec3, Vec3)> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let h = 1.0 / self.cfg.m;
        let mut draw = || -> Vec3 {
            [0; 3].map(|_| {
                let z: f64 = StandardNormal.sample(&mut rng);
                h * z
            })
        };
        (0..n).map(|_| (draw(), draw())).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LossKernel {
    /// 1/⟨u⟩.
    Surrogate,
    /// Λ(u)/C with Λ the angular integral of the cross-section and C = lim |u|Λ(u).
    CrossSection(Potential),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossProbeConfig {
    pub kernel: LossKernel,
    pub nodes: usize,
    pub band: f64,
    pub seed: u64,
}

pub const SURROGATE_BAND: f64 = 0.5;
pub const CROSS_SECTION_BAND: f64 = 0.75;

impl LossProbeConfig {
    pub fn surrogate(seed: u64) -> Self {
        LossProbeConfig { kernel: LossKernel::Surrogate, nodes: MIN_PROBE_NODES, band: SURROGATE_BAND, seed }
    }

    pub fn cross_section(pot: Potential, seed: u64) -> Self {
        LossProbeConfig { kernel: LossKernel::CrossSection(pot), nodes: MIN_PROBE_NODES, band: CROSS_SECTION_BAND, seed }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Verdict {
    Pass,
    Fail,
    Inconclusive,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProbePoint {
    pub x: Vec3,
    pub v: Vec3,
    pub quadrature: f64,
    pub stderr: f64,
    pub predicted: f64,
}

impl ProbePoint {
    pub fn relative_error(&self) -> f64 {
        (self.quadrature / self.predicted - 1.0).abs()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LossProbe {
    pub points: Vec<ProbePoint>,
    pub relative_error: f64,
    pub stderr: f64,
    pub band: f64,
}

impl LossProbe {
    /// Pass or fail only when the band is at least PROBE_Z standard errors away.
    pub fn verdict(&self) -> Verdict {
        if PROBE_Z * self.stderr >= (self.band - self.relative_error).abs() {
            Verdict::Inconclusive
        } else if self.relative_error <= self.band {
            Verdict::Pass
        } else {
            Verdict::Fail
        }
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "x1,x2,x3,v1,v2,v3,quadrature,stderr,predicted,relative_error")?;
        for p in &self.points {
            writeln!(
                w,
                "{:e},{:e},{:e},{:e},{:e},{:e},{:e},{:e},{:e},{:e}",
                p.x[0],
                p.x[1],
                p.x[2],
                p.v[0],
                p.v[1],
                p.v[2],
                p.quadrature,
                p.stderr,
                p.predicted,
                p.relative_error()
            )?;
        }
        Ok(())
    }
}

/// Monte Carlo value of Q⁻(f, g)(x, v) = f(x, v) ∫ g(x, v₂) K(v − v₂) dv₂ against
/// the product form. Node n uses direction n mod j_sample, v₂ drawn from that
/// summand's Gaussian and, for the cross-section, a uniform ω.
pub fn loss_probe(data: &BadData, points: &[(Vec3, Vec3)], probe: &LossProbeConfig) -> Result<LossProbe> {
    if probe.nodes < MIN_PROBE_NODES {
        return arg(format!("need at least {MIN_PROBE_NODES} nodes per point, got {}", probe.nodes));
    }
    if points.is_empty() {
        return arg("no probe points");
    }
    if !(probe.band > 0.0) {
        return arg(format!("band must be positive, got {}", probe.band));
    }
    let tail = match probe.kernel {
        LossKernel::Surrogate => 1.0,
        LossKernel::CrossSection(pot) => {
            let c = pot.loss_tail_constant(16);
            if !(c > 0.0) {
                return arg("cross-section has zero strength");
            }
            c
        }
    };
    let js = data.directions.len();
    let needles: Vec<Needle> = data.directions.iter().map(|&e| data.needle(e)).collect();
    let inv: Vec<Needle> = needles.iter().map(Needle::inverse).collect();
    // amplitude · (J/js) · js · |det A|^{-1}
    let pre = data.g_amplitude() * data.cfg.j_total() as f64 / needles[0].det();
    // every direction gets the same number of nodes
    let nodes = probe.nodes.div_ceil(js) * js;
    let out: Vec<ProbePoint> = points
        .par_iter()
        .enumerate()
        .map(|(i, &(x, v))| {
            let mut rng = ChaCha8Rng::seed_from_u64(probe.seed);
            rng.set_stream(i as u64);
            let space: Vec<f64> = needles.iter().map(|a| chi(a.apply(x))).collect();
            let (mut sum, mut sq) = (0.0, 0.0);
            for n in 0..nodes {
                let j = n % js;
                let z: Vec3 = [0; 3].map(|_| StandardNormal.sample(&mut rng));
                let u = sub(v, inv[j].apply(z));
                let k = match probe.kernel {
                    LossKernel::Surrogate => 1.0 / (1.0 + dot(u, u)).sqrt(),
                    LossKernel::CrossSection(pot) => {
                        let om: Vec3 = UnitSphere.sample(&mut rng);
                        4.0 * PI * pot.cross_section_unchecked(u, om)
                    }
                };
                let val = space[j] * k;
                sum += val;
                sq += val * val;
            }
            let nn = nodes as f64;
            let mean = sum / nn;
            let var = (sq / nn - mean * mean).max(0.0) * nn / (nn - 1.0);
            let scale_f = data.f(x, v) * pre / tail;
            ProbePoint {
                x,
                v,
                quadrature: scale_f * mean,
                stderr: scale_f * (var / nn).sqrt(),
                predicted: data.predicted_loss(x, v),
            }
        })
        .collect();
    if out.iter().any(|p| !(p.predicted > 0.0)) {
        return Err(Error::Guard("predicted loss underflows at a probe point".into()));
    }
    let np = out.len() as f64;
    let relative_error = out.iter().map(ProbePoint::relative_error).sum::<f64>() / np;
    let stderr = out.iter().map(|p| (p.stderr / p.predicted).powi(2)).sum::<f64>().sqrt() / np;
    Ok(LossProbe { points: out, relative_error, stderr, band: probe.band })
}

