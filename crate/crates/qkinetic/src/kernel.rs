//! Fourier-side interaction profiles and the collision cross-section.

use std::f64::consts::PI;

use crate::error::{arg, Result};
use crate::quad::{dot, gl_panels, norm, Vec3};

/// Prefactor appearing in the gain/loss decomposition.
pub const PREFACTOR_GAIN_LOSS: f64 = 0.5;
/// Prefactor written in front of the collision kernel, 1/(8π²).
pub const PREFACTOR_KERNEL: f64 = 1.0 / (8.0 * PI * PI);

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PotentialKind {
    /// |φ̂|² = 1 on [c1, c2], 0 outside [c1/2, 2c2], C^∞ ramps between.
    BumpWindow { c1: f64, c2: f64 },
    /// |φ̂(ζ)| = (ζ/a)^s (1 + (ζ/a)²)^{-(s+1+δ)/2} with a = `cutoff`, δ = `outer_decay`.
    PowerLaw { s: f64, outer_decay: f64, cutoff: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Potential {
    pub kind: PotentialKind,
    pub prefactor: f64,
}

pub const DEFAULT_OUTER_DECAY: f64 = 0.5;

/// The C^∞ ramp e^{-1/t} / (e^{-1/t} + e^{-1/(1-t)}), clamped to [0, 1].
pub fn smooth_step(t: f64) -> f64 {
    if t <= 0.0 {
        0.0
    } else if t >= 1.0 {
        1.0
    } else {
        // ratio form avoids underflow near the ends
        1.0 / (1.0 + (1.0 / t - 1.0 / (1.0 - t)).exp())
    }
}

impl Potential {
    pub fn bump_window(c1: f64, c2: f64) -> Result<Self> {
        if !(c1 > 0.0 && c2 > c1 && c2.is_finite()) {
            return arg(format!("bump window needs 0 < c1 < c2, got c1={c1}, c2={c2}"));
        }
        Ok(Potential { kind: PotentialKind::BumpWindow { c1, c2 }, prefactor: PREFACTOR_GAIN_LOSS })
    }

    pub fn power_law(s: f64, outer_decay: f64, cutoff: f64) -> Result<Self> {
        if !(s > 0.0 && s.is_finite()) {
            return arg(format!("power-law exponent must be positive, got {s}"));
        }
        if !(outer_decay > 0.0 && outer_decay.is_finite()) {
            return arg(format!("outer decay must be positive, got {outer_decay}"));
        }
        if !(cutoff > 0.0 && cutoff.is_finite()) {
            return arg(format!("cutoff must be positive, got {cutoff}"));
        }
        Ok(Potential {
            kind: PotentialKind::PowerLaw { s, outer_decay, cutoff },
            prefactor: PREFACTOR_GAIN_LOSS,
        })
    }

    pub fn with_prefactor(mut self, prefactor: f64) -> Self {
        self.prefactor = prefactor;
        self
    }

    /// Same profile with zero strength; collisions switch off.
    pub fn switched_off(self) -> Self {
        self.with_prefactor(0.0)
    }

    /// |φ̂| as a function of |ζ|.
    pub fn profile(&self, r: f64) -> f64 {
        let r = r.abs();
        match self.kind {
            PotentialKind::BumpWindow { c1, c2 } => {
                if r <= 0.5 * c1 || r >= 2.0 * c2 {
                    0.0
                } else if r < c1 {
                    smooth_step((r - 0.5 * c1) / (0.5 * c1))
                } else if r <= c2 {
                    1.0
                } else {
                    smooth_step((2.0 * c2 - r) / c2)
                }
            }
            PotentialKind::PowerLaw { s, outer_decay, cutoff } => {
                if r == 0.0 {
                    return 0.0;
                }
                let x = r / cutoff;
                x.powf(s) * (1.0 + x * x).powf(-0.5 * (s + 1.0 + outer_decay))
            }
        }
    }

    pub fn profile_at(&self, zeta: Vec3) -> f64 {
        self.profile(norm(zeta))
    }

    /// The exponent s with |φ̂(ζ)| ≲ |ζ|^s near zero. The bump vanishes identically there.
    pub fn small_scale_exponent(&self) -> Option<f64> {
        match self.kind {
            PotentialKind::BumpWindow { .. } => None,
            PotentialKind::PowerLaw { s, .. } => Some(s),
        }
    }

    /// t |φ̂(t)|², the radial collision weight without prefactor.
    pub fn radial_weight(&self, t: f64) -> f64 {
        let p = self.profile(t);
        t.abs() * p * p
    }

    /// prefactor · |ω·v_rel| · |φ̂((ω·v_rel)ω)|².
    pub fn cross_section(&self, v_rel: Vec3, omega: Vec3) -> Result<f64> {
        let n = norm(omega);
        if !((n - 1.0).abs() <= 1e-12) {
            return arg(format!("omega must be a unit vector, |omega| = {n}"));
        }
        Ok(self.cross_section_unchecked(v_rel, omega))
    }

    #[inline]
    pub(crate) fn cross_section_unchecked(&self, v_rel: Vec3, omega: Vec3) -> f64 {
        self.prefactor * self.radial_weight(dot(omega, v_rel))
    }

    /// Radius beyond which the profile is identically zero, if any.
    pub fn support_radius(&self) -> Option<f64> {
        match self.kind {
            PotentialKind::BumpWindow { c2, .. } => Some(2.0 * c2),
            PotentialKind::PowerLaw { .. } => None,
        }
    }

    /// Panel breakpoints adapted to the profile, covering [0, r_max].
    pub fn breakpoints(&self, r_max: f64) -> Vec<f64> {
        let mut b = match self.kind {
            PotentialKind::BumpWindow { c1, c2 } => vec![0.5 * c1, c1, c2, 2.0 * c2],
            PotentialKind::PowerLaw { cutoff, .. } => {
                // geometric refinement towards the |ζ|^s cusp at zero
                let mut v = vec![0.0];
                let mut r = cutoff * 2f64.powi(-14);
                while r < r_max {
                    v.push(r);
                    r *= 2.0;
                }
                v
            }
        };
        b.retain(|&x| x < r_max);
        b.push(r_max);
        b
    }

    /// Radial rule for ∫_0^{r_max} (...) dr adapted to the profile.
    pub fn radial_rule(&self, n_per_panel: usize, r_max: f64) -> Vec<(f64, f64)> {
        let r_max = match self.support_radius() {
            Some(s) => s.min(r_max),
            None => r_max,
        };
        gl_panels(&self.breakpoints(r_max), n_per_panel)
    }

    /// I(R) = ∫_0^R t |φ̂(t)|² dt.
    pub fn radial_mass(&self, r: f64, n_per_panel: usize) -> f64 {
        self.radial_rule(n_per_panel, r)
            .iter()
            .map(|&(t, w)| w * self.radial_weight(t))
            .sum()
    }

    /// Λ(w) = ∫_{S²} cross_section(w, ω) dω = 4π · prefactor · I(|w|)/|w|.
    pub fn loss_kernel(&self, w: f64, n_per_panel: usize) -> f64 {
        let w = w.abs();
        if w == 0.0 {
            return 0.0;
        }
        4.0 * PI * self.prefactor * self.radial_mass(w, n_per_panel) / w
    }

    /// lim_{w→∞} w Λ(w) = 4π · prefactor · I(∞).
    pub fn loss_tail_constant(&self, n_per_panel: usize) -> f64 {
        let r = match self.kind {
            PotentialKind::BumpWindow { c2, .. } => 2.0 * c2,
            // the tail of I beyond r is O((cutoff/r)^{2δ})
            PotentialKind::PowerLaw { cutoff, outer_decay, .. } => cutoff * 1e9f64.powf(0.5 / outer_decay),
        };
        4.0 * PI * self.prefactor * self.radial_mass(r, n_per_panel)
    }

    /// ∫_{S²} cross_section(v_rel, ω) dω by a product rule whose pole is aligned with
    /// v_rel. `n_omega` is the number of polar Gauss–Legendre nodes on cos θ ∈ [-1, 1];
    /// the polar nodes are mirrored so the rule is antipodally symmetric, and the
    /// polar panels are split where |v_rel| cos θ crosses a profile breakpoint.
    pub fn angular_loss_integral(&self, v_rel: Vec3, n_omega: usize) -> Result<f64> {
        if n_omega < 8 || n_omega % 2 != 0 {
            return arg(format!("n_omega must be even and at least 8, got {n_omega}"));
        }
        let speed = norm(v_rel);
        if speed == 0.0 {
            return Ok(0.0);
        }
        // breakpoints in cos θ on [0, 1]
        let mut cuts: Vec<f64> = self
            .breakpoints(speed)
            .into_iter()
            .map(|r| r / speed)
            .filter(|&c| c > 0.0 && c < 1.0)
            .collect();
        cuts.insert(0, 0.0);
        cuts.push(1.0);
        let half = gl_panels(&cuts, n_omega / 2);
        // the azimuthal integral is exact for the aligned rule
        let upper: f64 = half
            .iter()
            .map(|&(c, w)| w * self.radial_weight(speed * c))
            .sum();
        Ok(2.0 * PI * self.prefactor * 2.0 * upper)
    }
}
