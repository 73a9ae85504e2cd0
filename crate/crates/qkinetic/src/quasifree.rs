//! Quasi-free wave-packet states: cycle coordinates, the closed-form marginal
//! terms, normalization of the N-packet ensemble and the random-walk picture of
//! collision jitter.
//!
//! The packet profile χ is the L²-normalized Gaussian π^{-3/4} e^{-|z|²/2}, and
//! Y, W are standard normal, so every closed form below is an explicit Gaussian.

use std::f64::consts::PI;
use std::io::Write;

use itertools::Itertools;
use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution as _, StandardNormal};
use rayon::prelude::*;

use crate::bbgky::ScalingReport;
use crate::error::{arg, Error, Result};
use crate::quad::{add, dot, gl_panels, scale, sub, Vec3};

/// A permutation π of {0..k} together with the semiclassical scale.
#[derive(Debug, Clone, PartialEq)]
pub struct CycleFrame {
    pub pi: Vec<usize>,
    pub eps: f64,
}

impl CycleFrame {
    pub fn new(pi: Vec<usize>, eps: f64) -> Result<Self> {
        if !(eps > 0.0 && eps.is_finite()) {
            return arg(format!("eps must be positive, got {eps}"));
        }
        let mut seen = vec![false; pi.len()];
        for &j in &pi {
            if j >= pi.len() || seen[j] {
                return arg(format!("{pi:?} is not a permutation"));
            }
            seen[j] = true;
        }
        Ok(CycleFrame { pi, eps })
    }

    pub fn identity(k: usize, eps: f64) -> Result<Self> {
        Self::new((0..k).collect(), eps)
    }

    pub fn k(&self) -> usize {
        self.pi.len()
    }

    fn check_len(&self, a: &[Vec3], b: &[Vec3]) -> Result<()> {
        if a.len() != self.k() || b.len() != self.k() {
            return arg(format!("frame has k = {}, got {} and {} points", self.k(), a.len(), b.len()));
        }
        Ok(())
    }
}

/// (x, ξ) → (p, q) with p_j = ½(x_j + x_π(j)) + ½ε(ξ_j − ξ_π(j)) and
/// q_j = ½(ξ_j + ξ_π(j)) + ½(x_j − x_π(j))/ε.
pub fn cycle_coords(x: &[Vec3], xi: &[Vec3], frame: &CycleFrame) -> Result<(Vec<Vec3>, Vec<Vec3>)> {
    frame.check_len(x, xi)?;
    let e = frame.eps;
    let mut p = Vec::with_capacity(x.len());
    let mut q = Vec::with_capacity(x.len());
    for (j, &m) in frame.pi.iter().enumerate() {
        if m == j {
            p.push(x[j]);
            q.push(xi[j]);
            continue;
        }
        p.push(add(scale(add(x[j], x[m]), 0.5), scale(sub(xi[j], xi[m]), 0.5 * e)));
        q.push(add(scale(add(xi[j], xi[m]), 0.5), scale(sub(x[j], x[m]), 0.5 / e)));
    }
    Ok((p, q))
}

/// Inverse of [`cycle_coords`]. With a_j = x_j + εξ_j and b_j = x_j − εξ_j the
/// map reads p_j ± εq_j = a_j, b_π(j), which is solved directly.
pub fn cycle_coords_inverse(p: &[Vec3], q: &[Vec3], frame: &CycleFrame) -> Result<(Vec<Vec3>, Vec<Vec3>)> {
    frame.check_len(p, q)?;
    let e = frame.eps;
    let k = frame.k();
    let mut a = vec![[0.0; 3]; k];
    let mut b = vec![[0.0; 3]; k];
    for (j, &m) in frame.pi.iter().enumerate() {
        a[j] = add(p[j], scale(q[j], e));
        b[m] = sub(p[j], scale(q[j], e));
    }
    let mut x = Vec::with_capacity(k);
    let mut xi = Vec::with_capacity(k);
    for j in 0..k {
        if frame.pi[j] == j {
            x.push(p[j]);
            xi.push(q[j]);
        } else {
            x.push(scale(add(a[j], b[j]), 0.5));
            xi.push(scale(sub(a[j], b[j]), 0.5 / e));
        }
    }
    Ok((x, xi))
}

fn gauss_pdf(y: Vec3) -> f64 {
    (2.0 * PI).powf(-1.5) * (-0.5 * dot(y, y)).exp()
}

/// Ĝ(ζ) = ∫ e^{-iζ·w} G(w) dw for the standard normal G.
fn gauss_hat(z: Vec3) -> f64 {
    (-0.5 * dot(z, z)).exp()
}

/// The averaged π-term of the k-particle marginal at time offsets t_j:
/// ∏_j (1+4t_j²)^{-3/2} Ĝ_W(2q_j/s_j) G_Y(p_j/s_j) e^{-4it_j q_j·p_j/s_j²}, s_j² = 1+4t_j².
pub fn cycle_term_closed_form(frame: &CycleFrame, t_off: &[f64], x: &[Vec3], xi: &[Vec3]) -> Result<Complex64> {
    if t_off.len() != frame.k() {
        return arg(format!("need {} time offsets, got {}", frame.k(), t_off.len()));
    }
    let (p, q) = cycle_coords(x, xi, frame)?;
    let mut out = Complex64::new(1.0, 0.0);
    for j in 0..frame.k() {
        let s2 = 1.0 + 4.0 * t_off[j] * t_off[j];
        let s = s2.sqrt();
        let amp = s2.powf(-1.5) * gauss_hat(scale(q[j], 2.0 / s)) * gauss_pdf(scale(p[j], 1.0 / s));
        out *= Complex64::from_polar(amp, -4.0 * t_off[j] * dot(q[j], p[j]) / s2);
    }
    Ok(out)
}

/// The local Maxwellian e^{-|x−tv|²/2} e^{-|v|²/8}, normalized to unit mass.
/// It is the inverse Fourier transform ξ → v of the identity term.
pub fn local_maxwellian(x: Vec3, v: Vec3, t: f64) -> f64 {
    let d = sub(x, scale(v, t));
    (-0.5 * dot(d, d) - dot(v, v) / 8.0).exp() / (64.0 * PI.powi(3))
}

/// Sampled packet centres. Samples are a pure function of (n, seed, stream), so
/// an ensemble is reproduced from its parameters alone.
#[derive(Debug, Clone, PartialEq)]
pub struct WavePacketEnsemble {
    pub n: usize,
    pub eps: f64,
    pub y: Vec<Vec3>,
    pub w: Vec<Vec3>,
    pub t_off: Vec<f64>,
    pub seed: u64,
}

impl WavePacketEnsemble {
    pub fn sample(n: usize, eps: f64, seed: u64) -> Result<Self> {
        Self::sample_stream(n, eps, seed, 0)
    }

    pub fn sample_stream(n: usize, eps: f64, seed: u64, stream: u64) -> Result<Self> {
        if n == 0 {
            return arg("ensemble needs at least one packet");
        }
        if !(eps > 0.0 && eps.is_finite()) {
            return arg(format!("eps must be positive, got {eps}"));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream);
        let mut draw = || -> Vec3 { [0; 3].map(|_| StandardNormal.sample(&mut rng)) };
        let y = (0..n).map(|_| draw()).collect();
        let w = (0..n).map(|_| draw()).collect();
        Ok(WavePacketEnsemble { n, eps, y, w, t_off: vec![0.0; n], seed })
    }

    pub fn with_offsets(mut self, t_off: Vec<f64>) -> Result<Self> {
        if t_off.len() != self.n || t_off.iter().any(|t| !t.is_finite()) {
            return arg("need one finite time offset per packet");
        }
        self.t_off = t_off;
        Ok(self)
    }

    fn centre(&self, a: usize) -> Vec3 {
        add(self.y[a], scale(self.w[a], 2.0 * self.t_off[a]))
    }

    /// ε^{-3/2} ∫ χ((x−c_a)/√ε) χ̄((x−c_b)/√ε) e^{ix·(W_a−W_b)/ε} dx with c = Y + 2tW.
    pub fn overlap(&self, a: usize, b: usize) -> Complex64 {
        let (ca, cb) = (self.centre(a), self.centre(b));
        let dc = sub(ca, cb);
        let dw = sub(self.w[a], self.w[b]);
        let e = self.eps;
        let amp = (-(dot(dc, dc) + dot(dw, dw)) / (4.0 * e)).exp();
        Complex64::from_polar(amp, dot(dw, add(ca, cb)) / (2.0 * e))
    }

    /// ‖Ψ_N‖² with κ² = 1/(N! ε^{3N/2}). The double sum over (σ, σ′) collapses to
    /// N! times the permanent of the overlap matrix.
    pub fn norm_sq(&self) -> Result<f64> {
        if self.n > 4 {
            return Err(Error::Unsupported(format!("normalization needs N <= 4, got {}", self.n)));
        }
        let m: Vec<Vec<Complex64>> = (0..self.n).map(|a| (0..self.n).map(|b| self.overlap(a, b)).collect()).collect();
        let perm: Complex64 = (0..self.n)
            .permutations(self.n)
            .map(|nu| nu.iter().enumerate().map(|(i, &j)| m[i][j]).product::<Complex64>())
            .sum();
        Ok(perm.re)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Normalization {
    pub n: usize,
    pub eps: f64,
    pub trials: usize,
    pub estimate: f64,
    pub stderr: f64,
}

impl Normalization {
    /// The remainder bound ε^{3/2}/(1 − ε^{3/2}) on |estimate − 1|.
    pub fn remainder_bound(&self) -> f64 {
        let e = self.eps.powf(1.5);
        e / (1.0 - e)
    }

    pub fn write_csv<W: Write>(rows: &[Normalization], mut w: W) -> std::io::Result<()> {
        writeln!(w, "n,eps,trials,estimate,stderr,remainder_bound")?;
        for r in rows {
            writeln!(w, "{},{:e},{},{:e},{:e},{:e}", r.n, r.eps, r.trials, r.estimate, r.stderr, r.remainder_bound())?;
        }
        Ok(())
    }
}

/// Monte Carlo estimate of E‖Ψ_N‖². Trial i draws its ensemble from stream i of
/// `seed`, so runs at different ε share their random numbers.
pub fn normalization_check(n: usize, eps: f64, trials: usize, seed: u64) -> Result<Normalization> {
    if n > 4 {
        return Err(Error::Unsupported(format!("normalization needs N <= 4, got {n}")));
    }
    if trials < 200 {
        return arg(format!("need at least 200 trials, got {trials}"));
    }
    let vals: Vec<f64> = (0..trials as u64)
        .into_par_iter()
        .map(|i| WavePacketEnsemble::sample_stream(n, eps, seed, i)?.norm_sq())
        .collect::<Result<_>>()?;
    let mean = vals.iter().sum::<f64>() / trials as f64;
    let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (trials - 1) as f64;
    Ok(Normalization { n, eps, trials, estimate: mean, stderr: (var / trials as f64).sqrt() })
}

/// Number of fixed-point-free permutations of k elements.
pub fn derangements(k: u32) -> Result<u64> {
    if k > 20 {
        return Err(Error::Overflow(format!("D({k}) does not fit in 64 bits")));
    }
    let (mut prev, mut cur) = (1u64, 0u64);
    if k == 0 {
        return Ok(1);
    }
    for m in 2..=k as u64 {
        (prev, cur) = (cur, (m - 1) * (cur + prev));
    }
    Ok(cur)
}

/// |E_k| = C(n, k) D(k): permutations agreeing with a fixed σ off exactly k slots.
pub fn class_size(n: u32, k: u32) -> Result<u64> {
    if k > n {
        return arg(format!("k = {k} exceeds n = {n}"));
    }
    let mut binom = 1u64;
    for i in 0..k as u64 {
        binom = binom
            .checked_mul(n as u64 - i)
            .ok_or_else(|| Error::Overflow(format!("C({n}, {k})")))?
            / (i + 1);
    }
    binom.checked_mul(derangements(k)?).ok_or_else(|| Error::Overflow(format!("|E_{k}| for n = {n}")))
}

/// Weight on the frequency variables in the two-cycle norm: ⟨ξ⟩^{-w} with w just above 3/2.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CycleNormConfig {
    pub xi_weight: f64,
    pub n_gl: usize,
}

impl Default for CycleNormConfig {
    fn default() -> Self {
        CycleNormConfig { xi_weight: 1.55, n_gl: 12 }
    }
}

/// ∫∫ F(|(S+D)/2|) F(|(S−D)/2|) e^{-α|S|² − β|D|²} dS dD for radial F, in polar
/// coordinates for S, D and their relative angle. Radial panels are laid out on
/// both the unit scale and the 1/√β scale, so small β stays resolved.
fn pair_integral(alpha: f64, beta: f64, n: usize, f: impl Fn(f64) -> f64 + Sync) -> f64 {
    let s_max = (46.0 / alpha).sqrt();
    let sig = gl_panels(&(0..=8).map(|i| s_max * i as f64 / 8.0).collect::<Vec<_>>(), n);
    let r_wide = 1.0 / beta.sqrt();
    let r_max = (46.0 / beta).sqrt();
    let mut breaks = vec![0.0];
    let mut r = 0.0;
    while r < (2.0 * s_max).min(r_max) {
        r += 0.5;
        breaks.push(r);
    }
    while r < r_wide {
        r *= 1.5;
        breaks.push(r);
    }
    while r < r_max {
        r += 0.5 * r_wide;
        breaks.push(r);
    }
    let rr = gl_panels(&breaks, n);
    // graded towards θ = 0 and θ = π, where one of the two arguments can vanish
    let mut tb: Vec<f64> = (1..=8).map(|i| 0.5 * PI * 0.5f64.powi(9 - i)).collect();
    tb.insert(0, 0.0);
    let upper: Vec<f64> = tb.iter().rev().map(|t| PI - t).collect();
    tb.extend(upper.into_iter().skip(1));
    let th: Vec<(f64, f64)> = gl_panels(&tb, n).into_iter().map(|(t, w)| (t.cos(), w * t.sin())).collect();
    let total: f64 = sig
        .par_iter()
        .map(|&(s, ws)| {
            let mut acc = 0.0;
            for &(r, wr) in &rr {
                let g = (-beta * r * r).exp();
                if g == 0.0 {
                    continue;
                }
                let base = 0.25 * (s * s + r * r);
                let mut inner = 0.0;
                for &(c, wc) in &th {
                    let cross = 0.5 * s * r * c;
                    let up = (base + cross).max(0.0).sqrt();
                    let um = (base - cross).max(0.0).sqrt();
                    inner += wc * f(up) * f(um);
                }
                acc += wr * r * r * g * inner;
            }
            ws * s * s * (-alpha * s * s).exp() * acc
        })
        .collect::<Vec<_>>()
        .iter()
        .sum();
    8.0 * PI * PI * total
}

/// ln of ‖⟨ξ₁⟩^{-w}⟨ξ₂⟩^{-w} |∇_{x₁}|^s |∇_{x₂}|^s f̃_{(12)}‖_{L²} for the k = 2,
/// π = (12), t = 0 closed-form term.
///
/// That term is (2π)^{-3} e^{-|x₁+x₂|²/4 − |x₁−x₂|²/ε²} e^{-ε²|ξ₁−ξ₂|²/4 − |ξ₁+ξ₂|²},
/// separable in x and ξ, so the squared norm is a product of two pair integrals:
/// the x-part through Plancherel and the ξ-part directly.
pub fn cycle_log_norm(s: f64, eps: f64, cfg: &CycleNormConfig) -> Result<f64> {
    if !(eps > 0.0 && eps.is_finite()) {
        return arg(format!("eps must be positive, got {eps}"));
    }
    if !(s >= 0.0 && s.is_finite()) {
        return arg(format!("derivative order must be nonnegative, got {s}"));
    }
    if !(cfg.xi_weight > 0.75) {
        return arg(format!("frequency weight must exceed 3/4, got {}", cfg.xi_weight));
    }
    if cfg.n_gl < 4 {
        return arg("need at least 4 Gauss-Legendre nodes per panel");
    }
    let w2 = 2.0 * cfg.xi_weight;
    let jx = pair_integral(0.5, eps * eps / 8.0, cfg.n_gl, |u| if s == 0.0 { 1.0 } else { u.powf(2.0 * s) });
    let jxi = pair_integral(2.0, eps * eps / 2.0, cfg.n_gl, |u| (1.0 + u * u).powf(-0.5 * w2));
    // |f̂|² in x carries π⁶ε⁶ and (2π)^{-6} from Plancherel; each change to
    // sum/difference variables costs 1/8
    let ln_x = 6.0 * eps.ln() - 9.0 * 2f64.ln() + jx.ln();
    let ln_xi = jxi.ln() - 3.0 * 2f64.ln();
    let out = -3.0 * (2.0 * PI).ln() + 0.5 * (ln_x + ln_xi);
    if !out.is_finite() {
        return Err(Error::Guard(format!("non-finite cycle norm at eps = {eps}, s = {s}")));
    }
    Ok(out)
}

/// Log-log fit of the two-cycle norm against ε. The expected slope is 3/2 − 2s.
pub fn cycle_scaling_fit(s: f64, eps_values: &[f64], cfg: &CycleNormConfig) -> Result<ScalingReport> {
    let logs = eps_values.iter().map(|&e| cycle_log_norm(s, e, cfg)).collect::<Result<Vec<_>>>()?;
    ScalingReport::from_log_norms(eps_values, logs)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WalkStats {
    pub n: usize,
    pub trials: usize,
    pub mean_crossings: f64,
    pub crossings_stderr: f64,
    pub mean_sq_displacement: f64,
}

impl WalkStats {
    /// The large-n law 2√n/π for the expected number of zero crossings.
    pub fn predicted_crossings(&self) -> f64 {
        2.0 * (self.n as f64).sqrt() / PI
    }

    pub fn write_csv<W: Write>(rows: &[WalkStats], mut w: W) -> std::io::Result<()> {
        writeln!(w, "n,trials,mean_crossings,stderr,predicted,mean_sq_displacement")?;
        for r in rows {
            writeln!(
                w,
                "{},{},{:e},{:e},{:e},{:e}",
                r.n,
                r.trials,
                r.mean_crossings,
                r.crossings_stderr,
                r.predicted_crossings(),
                r.mean_sq_displacement
            )?;
        }
        Ok(())
    }
}

/// Gaussian random walk S_m = U_1 + … + U_m for m ≤ n. A crossing is a strict
/// sign change between S_m and S_{m+1}.
pub fn random_walk_crossings(n: usize, trials: usize, seed: u64) -> Result<WalkStats> {
    if n == 0 || trials < 2 {
        return arg("need at least one step and two trials");
    }
    let per: Vec<(f64, f64)> = (0..trials as u64)
        .into_par_iter()
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(i);
            let mut s = 0.0f64;
            let mut crossings = 0u64;
            for _ in 0..n {
                let u: f64 = StandardNormal.sample(&mut rng);
                let next = s + u;
                if s * next < 0.0 {
                    crossings += 1;
                }
                s = next;
            }
            (crossings as f64, s * s)
        })
        .collect();
    let t = trials as f64;
    let mean = per.iter().map(|p| p.0).sum::<f64>() / t;
    let var = per.iter().map(|p| (p.0 - mean).powi(2)).sum::<f64>() / (t - 1.0);
    Ok(WalkStats {
        n,
        trials,
        mean_crossings: mean,
        crossings_stderr: (var / t).sqrt(),
        mean_sq_displacement: per.iter().map(|p| p.1).sum::<f64>() / t,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn derangement_recurrence_start() {
        assert_eq!(derangements(2).unwrap(), 1);
        assert_eq!(derangements(5).unwrap(), 44);
        assert_eq!(derangements(20).unwrap(), 895_014_631_192_902_121);
    }

    #[test]
    fn single_packet_overlaps_itself_exactly() {
        let e = WavePacketEnsemble::sample(1, 0.1, 4).unwrap();
        assert_eq!(e.norm_sq().unwrap(), 1.0);
    }
}
