//! Transport–collision splitting for ∂_t f + v·∇_x f = Q(f, f).
//!
//! Transport is exact (spectral). The collision flow is itself split into two halves
//! of the sphere rule (even and odd azimuths); each half conserves mass, momentum and
//! energy and annihilates Maxwellians, so the splitting error is visible even in the
//! homogeneous setting where transport is trivial.

use std::io::Write;

use num_complex::Complex64;

use crate::collision::{collide, CollisionConfig, OmegaSubset};
use crate::density::fit_log_gaussian;
use crate::error::{arg, Error, Result};
use crate::phase::{Distribution, Grid, NormSpec, Representation};
use crate::quad::{dot, solve_dense};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Splitting {
    Lie,
    Strang,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Substep {
    Euler,
    RK4,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverConfig {
    pub dt: f64,
    pub t_end: f64,
    pub splitting: Splitting,
    pub collision_substep: Substep,
    pub diagnostics_every: usize,
    /// Split the collision flow into the two azimuthal halves of the sphere rule.
    pub split_collision: bool,
    /// Project each collision evaluation onto zero mass, momentum and energy change.
    pub conservative_projection: bool,
}

impl SolverConfig {
    pub fn new(dt: f64, t_end: f64) -> Self {
        SolverConfig {
            dt,
            t_end,
            splitting: Splitting::Strang,
            collision_substep: Substep::RK4,
            diagnostics_every: 1,
            split_collision: true,
            conservative_projection: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return arg(format!("dt must be positive, got {}", self.dt));
        }
        if !(self.t_end >= self.dt * (1.0 - 1e-12)) {
            return arg(format!("horizon T = {} is shorter than dt = {}", self.t_end, self.dt));
        }
        if self.diagnostics_every == 0 {
            return arg("diagnostics_every must be at least 1");
        }
        Ok(())
    }

    pub fn steps(&self) -> usize {
        (self.t_end / self.dt).round().max(1.0) as usize
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Diagnostics {
    pub t: f64,
    pub mass: f64,
    pub momentum: [f64; 3],
    /// ½∫|v|² f
    pub energy: f64,
    pub entropy: f64,
    pub min_f: f64,
    /// ‖f‖ in H^{1.1}_x L^{2,0.1}_v
    pub h_norm: f64,
    /// ‖f‖ in H^{0.6}_x L^{2,0.6}_v
    pub h_norm_half: f64,
    pub l1: f64,
}

pub const H_NORM: NormSpec = NormSpec { r: 1.1, s: 0.1 };
pub const H_NORM_HALF: NormSpec = NormSpec { r: 0.6, s: 0.6 };

impl Diagnostics {
    pub fn of(t: f64, f: &Distribution) -> Self {
        let (mass, momentum, energy) = f.moments();
        Diagnostics {
            t,
            mass,
            momentum,
            energy,
            entropy: entropy(f),
            min_f: f.min_real(),
            h_norm: f.sobolev_norm(H_NORM),
            h_norm_half: f.sobolev_norm(H_NORM_HALF),
            l1: f.l1_norm(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub snapshots: Vec<Distribution>,
    pub diagnostics: Vec<Diagnostics>,
    pub warnings: Vec<String>,
}

impl Trajectory {
    pub fn last(&self) -> &Distribution {
        self.snapshots.last().expect("trajectory has the initial snapshot")
    }

    /// Rows `t,mass,px,py,pz,energy,entropy,min_f,h_norm`.
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "t,mass,px,py,pz,energy,entropy,min_f,h_norm")?;
        for d in &self.diagnostics {
            writeln!(
                w,
                "{:.17e},{:.17e},{:.17e},{:.17e},{:.17e},{:.17e},{:.17e},{:.17e},{:.17e}",
                d.t, d.mass, d.momentum[0], d.momentum[1], d.momentum[2], d.energy, d.entropy, d.min_f, d.h_norm
            )?;
        }
        Ok(())
    }
}

/// S = −∫ f ln f with f clamped below at 1e-30 of its peak.
pub fn entropy(f: &Distribution) -> f64 {
    let peak = f.values.iter().map(|z| z.re).fold(0.0, f64::max);
    if peak <= 0.0 {
        return 0.0;
    }
    let floor = 1e-30 * peak;
    -f.values
        .iter()
        .map(|z| {
            let x = z.re.max(floor);
            x * x.ln()
        })
        .sum::<f64>()
        * f.cell_measure()
}

/// Remove the mass, momentum and energy content of `q` slab by slab, with the
/// correction shaped by the Maxwellian fitted to `f` (weighted least squares).
fn project_conservative(q: &mut Distribution, f: &Distribution) -> Result<()> {
    let grid = q.grid;
    let vgrid = Grid::homogeneous(grid.n_v, grid.l_v)?;
    let nodes = vgrid.velocity_nodes();
    let nv3 = nodes.len();
    for s in 0..q.values.len() / nv3 {
        let fs: Vec<f64> = f.values[s * nv3..(s + 1) * nv3].iter().map(|z| z.re.abs()).collect();
        let Ok((mean, t)) = fit_log_gaussian(&vgrid, &fs) else { continue };
        let weight: Vec<f64> = nodes
            .iter()
            .map(|v| {
                let d = [v[0] - mean[0], v[1] - mean[1], v[2] - mean[2]];
                (-0.5 * dot(d, d) / t).exp()
            })
            .collect();
        let basis = |v: &[f64; 3]| [1.0, v[0], v[1], v[2], dot(*v, *v)];
        let mut a = vec![vec![0.0; 5]; 5];
        let mut b = vec![0.0; 5];
        for (i, v) in nodes.iter().enumerate() {
            let p = basis(v);
            let qi = q.values[s * nv3 + i].re;
            for r in 0..5 {
                for c in 0..5 {
                    a[r][c] += p[r] * weight[i] * p[c];
                }
                b[r] += p[r] * qi;
            }
        }
        let lambda = solve_dense(a, b).ok_or_else(|| Error::Guard("singular moment projection".into()))?;
        for (i, v) in nodes.iter().enumerate() {
            let p = basis(v);
            let corr: f64 = (0..5).map(|r| lambda[r] * p[r]).sum::<f64>() * weight[i];
            q.values[s * nv3 + i] -= Complex64::new(corr, 0.0);
        }
    }
    Ok(())
}

struct Stepper<'a> {
    cfg: &'a SolverConfig,
    ccfg: CollisionConfig,
}

impl Stepper<'_> {
    fn rhs(&self, f: &Distribution, subset: OmegaSubset) -> Result<Distribution> {
        let mut c = self.ccfg;
        c.omega_subset = subset;
        let mut q = collide(f, f, &c)?;
        if self.cfg.conservative_projection {
            project_conservative(&mut q, f)?;
        }
        Ok(q)
    }

    fn collision_flow(&self, f: &Distribution, dt: f64, subset: OmegaSubset) -> Result<Distribution> {
        if self.ccfg.pot.prefactor == 0.0 {
            return Ok(f.clone());
        }
        match self.cfg.collision_substep {
            Substep::Euler => f.axpy(dt, &self.rhs(f, subset)?),
            Substep::RK4 => {
                let k1 = self.rhs(f, subset)?;
                let k2 = self.rhs(&f.axpy(0.5 * dt, &k1)?, subset)?;
                let k3 = self.rhs(&f.axpy(0.5 * dt, &k2)?, subset)?;
                let k4 = self.rhs(&f.axpy(dt, &k3)?, subset)?;
                let mut out = f.clone();
                for i in 0..out.values.len() {
                    out.values[i] += (k1.values[i] + k2.values[i] * 2.0 + k3.values[i] * 2.0 + k4.values[i]) * (dt / 6.0);
                }
                Ok(out)
            }
        }
    }

    fn collide_step(&self, f: &Distribution, dt: f64, symmetric: bool) -> Result<Distribution> {
        if !self.cfg.split_collision {
            return self.collision_flow(f, dt, OmegaSubset::All);
        }
        if symmetric {
            let a = self.collision_flow(f, 0.5 * dt, OmegaSubset::EvenAzimuth)?;
            let b = self.collision_flow(&a, dt, OmegaSubset::OddAzimuth)?;
            self.collision_flow(&b, 0.5 * dt, OmegaSubset::EvenAzimuth)
        } else {
            let a = self.collision_flow(f, dt, OmegaSubset::EvenAzimuth)?;
            self.collision_flow(&a, dt, OmegaSubset::OddAzimuth)
        }
    }

    fn step(&self, f: &Distribution, dt: f64) -> Result<Distribution> {
        match self.cfg.splitting {
            Splitting::Lie => {
                let t = f.free_transport(dt).dist;
                self.collide_step(&t, dt, false)
            }
            Splitting::Strang => {
                let t = f.free_transport(0.5 * dt).dist;
                let c = self.collide_step(&t, dt, true)?;
                Ok(c.free_transport(0.5 * dt).dist)
            }
        }
    }
}

pub fn solve(f0: &Distribution, cfg: &SolverConfig, ccfg: &CollisionConfig) -> Result<Trajectory> {
    cfg.validate()?;
    ccfg.validate()?;
    if f0.rep != Representation::XV || f0.k != 1 {
        return arg("solve needs a one-particle density in the XV representation");
    }
    let mut warnings = Vec::new();
    let peak0 = f0.max_abs();
    let min0 = f0.min_real();
    if min0 < 0.0 {
        warnings.push(format!("initial data slightly negative (min {min0:.3e})"));
    }
    if !f0.mass().is_finite() {
        return arg("initial data have non-finite mass");
    }
    if f0.grid.dim_x == 0 && ccfg.pot.prefactor == 0.0 {
        warnings.push("homogeneous run without collisions is a no-op".into());
    }
    let stepper = Stepper { cfg, ccfg: *ccfg };
    let steps = cfg.steps();
    let dt = cfg.t_end / steps as f64;
    let mut f = f0.clone();
    let mut traj = Trajectory {
        times: vec![0.0],
        snapshots: vec![f0.clone()],
        diagnostics: vec![Diagnostics::of(0.0, f0)],
        warnings,
    };
    for n in 1..=steps {
        f = stepper.step(&f, dt)?;
        let peak = f.max_abs();
        if !peak.is_finite() || peak > 1e3 * peak0.max(f64::MIN_POSITIVE) {
            return Err(Error::Guard(format!("sup norm grew from {peak0:.3e} to {peak:.3e} at step {n}; reduce dt")));
        }
        if n % cfg.diagnostics_every == 0 || n == steps {
            let t = n as f64 * dt;
            traj.times.push(t);
            traj.diagnostics.push(Diagnostics::of(t, &f));
            traj.snapshots.push(f.clone());
        }
    }
    Ok(traj)
}

/// ‖f(T) − g(T)‖ / ‖f0 − g0‖ in H^{1.1}_x L^{2,0.1}_v; 0 when the data coincide.
pub fn continuity_probe(
    f0: &Distribution,
    g0: &Distribution,
    cfg: &SolverConfig,
    ccfg: &CollisionConfig,
) -> Result<f64> {
    let d0 = f0.axpy(-1.0, g0)?.sobolev_norm(H_NORM);
    if d0 == 0.0 {
        return Ok(0.0);
    }
    let f = solve(f0, cfg, ccfg)?;
    let g = solve(g0, cfg, ccfg)?;
    Ok(f.last().axpy(-1.0, g.last())?.sobolev_norm(H_NORM) / d0)
}
