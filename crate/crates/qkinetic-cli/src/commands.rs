use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use qkinetic::bbgky::{
    a_ladder, b_ladder, qeps_ladder, BLadderConfig, EpsLadder, MonteCarloSpec, OpTag, QepsConfig, SeparableData,
};
use qkinetic::boardgame::{region_equality, tabulate, ClassRow, Skeleton};
use qkinetic::collision::{
    collide_analytic_parts, CollisionConfig, ConservationDefect, Interpolation, VStarRule,
};
use qkinetic::density::GaussianMixture;
use qkinetic::illposed::{
    build_bad_data, deflation_curve, loss_probe, DeflationConfig, LossProbeConfig, Verdict, MIN_PROBE_NODES,
};
use qkinetic::kernel::Potential;
use qkinetic::phase::{Distribution, Grid, NormSpec};
use qkinetic::quasifree::{
    cycle_scaling_fit, derangements, normalization_check, random_walk_crossings, CycleNormConfig, Normalization,
    WalkStats,
};
use qkinetic::solver::{solve, SolverConfig, Splitting, Substep};
use thiserror::Error;

use crate::config::{key, required, ConfigError, Key, Params};

#[derive(Debug, Error)]
pub enum RunError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Numerics(#[from] qkinetic::Error),
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

#[derive(Debug, Clone, PartialEq)]
pub enum Outcome {
    Ok(String),
    CheckFailed(String),
    Inconclusive(String),
}

pub struct Run {
    pub outcome: Outcome,
    pub files: Vec<PathBuf>,
}

struct Out<'a> {
    dir: &'a Path,
    files: Vec<PathBuf>,
}

impl Out<'_> {
    fn write(&mut self, name: &str, body: impl FnOnce(&mut BufWriter<File>) -> std::io::Result<()>) -> Result<(), RunError> {
        let path = self.dir.join(name);
        let mut w = BufWriter::new(File::create(&path)?);
        body(&mut w)?;
        w.flush()?;
        self.files.push(path);
        Ok(())
    }

    fn csv(&mut self, name: &str) -> Result<csv::Writer<File>, RunError> {
        let path = self.dir.join(name);
        let w = csv::Writer::from_path(&path)?;
        self.files.push(path);
        Ok(w)
    }
}

const POTENTIAL_KEYS: [Key; 6] = [
    key("potential", "bump", "bump | power_law"),
    key("pot_c1", "1", "bump window inner edge"),
    key("pot_c2", "2", "bump window outer edge"),
    key("pot_s", "0.6", "power-law exponent near zero"),
    key("pot_outer_decay", "0.5", "power-law decay exponent at infinity"),
    key("pot_cutoff", "1", "power-law crossover scale"),
];

fn potential(p: &Params) -> Result<Potential, RunError> {
    Ok(match p.choice("potential", &["bump", "power_law"])? {
        "bump" => Potential::bump_window(p.get("pot_c1")?, p.get("pot_c2")?)?,
        _ => Potential::power_law(p.get("pot_s")?, p.get("pot_outer_decay")?, p.get("pot_cutoff")?)?,
    })
}

fn with_potential(keys: &[Key]) -> Vec<Key> {
    POTENTIAL_KEYS.iter().chain(keys).copied().collect()
}

// ---- collide-check

pub fn collide_keys() -> Vec<Key> {
    with_potential(&[
        key("density", "mixture", "mixture (two anisotropic Gaussians) | maxwellian"),
        key("n_v", "16", "velocity nodes per axis"),
        key("l_v", "6", "velocity half-width"),
        key("n_omega", "8", "polar nodes of the sphere rule"),
        key("n_radial", "8", "radial nodes per panel"),
        key("defect_threshold", "1e-6", "bound on each relative conservation defect"),
        key("annihilation_threshold", "1e-3", "bound on |Q(M,M)|/|Q-(M,M)| (maxwellian only)"),
    ])
}

pub const COLLIDE_CSV: &str = "report.csv: quantity,value,threshold,pass
  quantity is mass_defect, momentum_defect, energy_defect (relative to the
  absolute moments of Q, or of the loss term for the Maxwellian) and, for the
  Maxwellian, annihilation_ratio.";

pub fn collide_check(p: &Params, dir: &Path) -> Result<Run, RunError> {
    let mut cfg = CollisionConfig::new(potential(p)?);
    cfg.n_omega = p.get("n_omega")?;
    cfg.n_radial = p.get("n_radial")?;
    cfg.vstar_rule = VStarRule::Carleman;
    cfg.interpolation = Interpolation::AnalyticCallable;
    let grid = Grid::homogeneous(p.get("n_v")?, p.get("l_v")?)?;
    let maxwellian = p.choice("density", &["mixture", "maxwellian"])? == "maxwellian";
    let f = if maxwellian {
        GaussianMixture::maxwellian(1.0, [0.0; 3], 1.0)?
    } else {
        GaussianMixture::new()
            .with_component(0.6, [0.8, 0.0, 0.0], [[0.7, 0.0, 0.0], [0.0, 0.9, 0.0], [0.0, 0.0, 1.1]])?
            .with_component(0.4, [-0.9, 0.4, 0.0], [[0.9, 0.2, 0.0], [0.2, 0.7, 0.0], [0.0, 0.0, 0.8]])?
    };
    let parts = collide_analytic_parts(&f, &f, grid, &cfg)?;
    let q = parts.total();
    // Q(M, M) vanishes up to rounding, so its own absolute moments are no scale
    let defect = if maxwellian {
        let (d, l) = (ConservationDefect::of(&q), ConservationDefect::of(&parts.loss));
        let pm = d.momentum.iter().map(|x| x * x).sum::<f64>().sqrt();
        [d.mass.abs() / l.scales[0], pm / l.scales[1], d.energy.abs() / l.scales[2]]
    } else {
        ConservationDefect::of(&q).relative()
    };
    let tol: f64 = p.get("defect_threshold")?;
    let mut rows: Vec<(&str, f64, f64)> = ["mass_defect", "momentum_defect", "energy_defect"]
        .into_iter()
        .zip(defect)
        .map(|(n, d)| (n, d, tol))
        .collect();
    if maxwellian {
        rows.push(("annihilation_ratio", q.l2_norm() / parts.loss.l2_norm(), p.get("annihilation_threshold")?));
    }
    let mut out = Out { dir, files: vec![] };
    let mut w = out.csv("report.csv")?;
    w.write_record(["quantity", "value", "threshold", "pass"])?;
    let mut failed = vec![];
    for (name, v, t) in &rows {
        let pass = *v <= *t;
        if !pass {
            failed.push(*name);
        }
        w.write_record([name.to_string(), format!("{v:e}"), format!("{t:e}"), pass.to_string()])?;
    }
    w.flush()?;
    let summary: Vec<String> = rows.iter().map(|(n, v, _)| format!("{n} {v:.3e}")).collect();
    let outcome = if failed.is_empty() {
        Outcome::Ok(summary.join(", "))
    } else {
        Outcome::CheckFailed(format!("above threshold: {}", failed.join(", ")))
    };
    Ok(Run { outcome, files: out.files })
}

// ---- solve

pub fn solve_keys() -> Vec<Key> {
    with_potential(&[
        key("initial", "bimodal", "bimodal | maxwellian"),
        key("mass", "1", "total mass of the initial data"),
        key("n_v", "8", "velocity nodes per axis"),
        key("l_v", "6", "velocity half-width"),
        key("n_omega", "4", "polar nodes of the sphere rule"),
        key("dt", "0.1", "time step"),
        key("t_end", "1", "horizon"),
        key("splitting", "strang", "strang | lie"),
        key("substep", "rk4", "rk4 | euler"),
        key("split_collision", "true", "split the collision flow into two conservative halves"),
        key("conservative_projection", "true", "project collision output onto zero moment change"),
        key("diagnostics_every", "1", "steps between diagnostics rows"),
    ])
}

pub const SOLVE_CSV: &str = "trajectory.csv: t,mass,px,py,pz,energy,entropy,min_f,h_norm";

fn bimodal(g: Grid) -> qkinetic::Result<Distribution> {
    let f = Distribution::from_xv(g, |_, v| {
        let a = (-((v[0] - 1.2).powi(2) + v[1] * v[1] + v[2] * v[2])).exp();
        let b = (-((v[0] + 1.2).powi(2) + (v[1] - 0.3).powi(2) + v[2] * v[2]) / 1.4).exp();
        a + 0.7 * b
    })?;
    let m = f.mass();
    Ok(f.scaled(1.0 / m))
}

pub fn run_solve(p: &Params, dir: &Path) -> Result<Run, RunError> {
    let mut cc = CollisionConfig::new(potential(p)?);
    cc.n_omega = p.get("n_omega")?;
    cc.interpolation = Interpolation::MaxwellWeighted;
    let mut sc = SolverConfig::new(p.get("dt")?, p.get("t_end")?);
    sc.splitting = match p.choice("splitting", &["strang", "lie"])? {
        "strang" => Splitting::Strang,
        _ => Splitting::Lie,
    };
    sc.collision_substep = match p.choice("substep", &["rk4", "euler"])? {
        "rk4" => Substep::RK4,
        _ => Substep::Euler,
    };
    sc.split_collision = p.get("split_collision")?;
    sc.conservative_projection = p.get("conservative_projection")?;
    sc.diagnostics_every = p.get("diagnostics_every")?;
    let g = Grid::homogeneous(p.get("n_v")?, p.get("l_v")?)?;
    let f0 = match p.choice("initial", &["bimodal", "maxwellian"])? {
        "bimodal" => bimodal(g)?,
        _ => {
            let m = Distribution::from_xv(g, |_, v| (-0.5 * (v[0] * v[0] + v[1] * v[1] + v[2] * v[2])).exp())?;
            let mass = m.mass();
            m.scaled(1.0 / mass)
        }
    };
    let mass: f64 = p.get("mass")?;
    let tr = solve(&f0.scaled(mass), &sc, &cc)?;
    let mut out = Out { dir, files: vec![] };
    out.write("trajectory.csv", |w| tr.write_csv(w))?;
    let (a, b) = (tr.diagnostics[0], tr.diagnostics[tr.diagnostics.len() - 1]);
    let msg = format!(
        "{} rows, mass drift {:.3e}, entropy {:.6} -> {:.6}",
        tr.diagnostics.len(),
        (b.mass - a.mass).abs() / a.mass,
        a.entropy,
        b.entropy
    );
    Ok(Run { outcome: Outcome::Ok(msg), files: out.files })
}

// ---- bbgky-ladder

pub fn bbgky_keys() -> Vec<Key> {
    with_potential(&[
        key("operator", "a", "a | b | qeps"),
        key("eps_lo", "2", "ladder starts at eps = 2^-eps_lo"),
        key("eps_hi", "6", "ladder ends at eps = 2^-eps_hi"),
        key("norm_r", "1.1", "weight order r of the norms"),
        key("norm_s", "0.6", "derivative order s of the norms"),
        key("samples", "2000", "Monte Carlo samples (output points for qeps)"),
        required("seed", "Monte Carlo seed (required)"),
        key("n_polar", "16", "b: polar nodes of the sphere rule"),
        key("n_radial", "8", "b, qeps: radial nodes"),
        key("xi0", "1", "b: frequency offset of the data"),
        key("n_omega", "6", "qeps: polar nodes of the sphere rule"),
        key("n_hermite", "5", "qeps: Gauss-Hermite nodes per axis"),
    ])
}

pub const BBGKY_CSV: &str = "ladder.csv (a, b): eps,norm,log_norm, then footer rows with the fitted slope and residual
qeps.csv (qeps): eps,q_norm,diff_norm, last row eps = 0 holds the limit norm";

pub fn bbgky_ladder(p: &Params, dir: &Path) -> Result<Run, RunError> {
    let pot = potential(p)?;
    let mc = MonteCarloSpec { samples: p.get("samples")?, seed: p.seed("Monte Carlo ladders")? };
    let op = p.choice("operator", &["a", "b", "qeps"])?;
    let (lo, hi): (i32, i32) = (p.get("eps_lo")?, p.get("eps_hi")?);
    let spec = NormSpec::new(p.get("norm_r")?, p.get("norm_s")?)?;
    let mut out = Out { dir, files: vec![] };
    let msg = match op {
        "a" | "b" => {
            let report = if op == "a" {
                a_ladder(&pot, &EpsLadder::dyadic(lo, hi, spec, OpTag::A)?, mc)?
            } else {
                let mut cfg = BLadderConfig::new(mc);
                cfg.n_polar = p.get("n_polar")?;
                cfg.n_radial = p.get("n_radial")?;
                cfg.xi0 = p.get("xi0")?;
                b_ladder(&pot, &EpsLadder::dyadic(lo, hi, spec, OpTag::B)?, cfg)?
            };
            out.write("ladder.csv", |w| report.write_csv(w))?;
            format!("slope {:.4}, residual {:.3e}", report.slope, report.residual)
        }
        _ => {
            let k1 = GaussianMixture::new()
                .with_component(1.0, [0.3, 0.0, -0.2], [[0.9, 0.1, 0.0], [0.1, 1.1, 0.0], [0.0, 0.0, 1.0]])?;
            let k2 = GaussianMixture::maxwellian(1.0, [-0.2, 0.1, 0.0], 0.8)?;
            let data = SeparableData::new(1.0, k1, k2)?;
            let cfg = QepsConfig {
                n_omega: p.get("n_omega")?,
                n_radial: p.get("n_radial")?,
                n_hermite: p.get("n_hermite")?,
                ..QepsConfig::new()
            };
            let eps = EpsLadder::dyadic(lo, hi, spec, OpTag::Qeps)?.eps_values;
            let report = qeps_ladder(&data, &pot, &eps, &cfg, mc)?;
            out.write("qeps.csv", |w| report.write_csv(w))?;
            format!("spread {:.4}, differences decreasing: {}", report.spread(), report.diff_strictly_decreasing())
        }
    };
    Ok(Run { outcome: Outcome::Ok(msg), files: out.files })
}

// ---- quasifree

pub fn quasifree_keys() -> Vec<Key> {
    vec![
        key("task", "normalization", "normalization | cycle_fit | walk | derangements"),
        key("n", "2", "normalization: particles; walk: steps"),
        key("eps", "0.1", "normalization: semiclassical scale"),
        key("trials", "2000", "normalization, walk: Monte Carlo trials"),
        required("seed", "Monte Carlo seed (required for normalization and walk)"),
        key("s", "0.75", "cycle_fit: regularity exponent"),
        key("eps_lo", "3", "cycle_fit: ladder starts at eps = 2^-eps_lo"),
        key("eps_hi", "7", "cycle_fit: ladder ends at eps = 2^-eps_hi"),
        key("xi_weight", "1.55", "cycle_fit: frequency weight exponent"),
        key("n_gl", "12", "cycle_fit: Gauss-Legendre nodes per panel"),
        key("k_max", "8", "derangements: largest k"),
    ]
}

pub const QUASIFREE_CSV: &str = "normalization.csv: n,eps,trials,estimate,stderr,remainder_bound
cycle_fit.csv: eps,norm,log_norm, then footer rows with the fitted slope and residual
walk.csv: n,trials,mean_crossings,stderr,predicted,mean_sq_displacement
derangements.csv: k,derangements";

pub fn quasifree(p: &Params, dir: &Path) -> Result<Run, RunError> {
    let mut out = Out { dir, files: vec![] };
    let msg = match p.choice("task", &["normalization", "cycle_fit", "walk", "derangements"])? {
        "normalization" => {
            let r = normalization_check(p.get("n")?, p.get("eps")?, p.get("trials")?, p.seed("normalization")?)?;
            out.write("normalization.csv", |w| Normalization::write_csv(&[r], w))?;
            format!("E|Psi|^2 = {:.5} +- {:.2e}", r.estimate, r.stderr)
        }
        "cycle_fit" => {
            let (lo, hi): (i32, i32) = (p.get("eps_lo")?, p.get("eps_hi")?);
            if lo >= hi {
                return Err(ConfigError::Plain(format!("need eps_lo < eps_hi, got {lo} and {hi}")).into());
            }
            let eps: Vec<f64> = (lo..=hi).map(|m| 2f64.powi(-m)).collect();
            let cfg = CycleNormConfig { xi_weight: p.get("xi_weight")?, n_gl: p.get("n_gl")? };
            let r = cycle_scaling_fit(p.get("s")?, &eps, &cfg)?;
            out.write("cycle_fit.csv", |w| r.write_csv(w))?;
            format!("slope {:.4}, residual {:.3e}", r.slope, r.residual)
        }
        "walk" => {
            let r = random_walk_crossings(p.get("n")?, p.get("trials")?, p.seed("random walks")?)?;
            out.write("walk.csv", |w| WalkStats::write_csv(&[r], w))?;
            format!("crossings {:.3} vs {:.3}", r.mean_crossings, r.predicted_crossings())
        }
        _ => {
            let k_max: u32 = p.get("k_max")?;
            let mut w = out.csv("derangements.csv")?;
            w.write_record(["k", "derangements"])?;
            for k in 0..=k_max {
                w.write_record([k.to_string(), derangements(k)?.to_string()])?;
            }
            w.flush()?;
            format!("D(0..={k_max}) written")
        }
    };
    Ok(Run { outcome: Outcome::Ok(msg), files: out.files })
}

// ---- boardgame

pub fn boardgame_keys() -> Vec<Key> {
    vec![
        key("mode", "tabulate", "tabulate | region"),
        key("k", "4", "number of collapsing steps"),
        key("points", "100000", "region: Monte Carlo points per class"),
        required("seed", "Monte Carlo seed (required for region)"),
    ]
}

pub const BOARDGAME_CSV: &str = "classes_k<k>.csv: skeleton_id,class_size,canonical_mu,inequalities
region_k<k>.csv: skeleton_id,class_size,points,union_hits,domain_hits,mismatches,expected_fraction";

pub fn boardgame(p: &Params, dir: &Path) -> Result<Run, RunError> {
    let k: usize = p.get("k")?;
    let mut out = Out { dir, files: vec![] };
    if p.choice("mode", &["tabulate", "region"])? == "tabulate" {
        let mut rows = tabulate(k)?;
        rows.sort_by(|a, b| a.skeleton.id().cmp(&b.skeleton.id()));
        out.write(&format!("classes_k{k}.csv"), |w| ClassRow::write_csv(&rows, w))?;
        let total: usize = rows.iter().map(|r| r.class_size).sum();
        let msg = format!("{} skeletons, class sizes sum to {total}", rows.len());
        return Ok(Run { outcome: Outcome::Ok(msg), files: out.files });
    }
    let seed = p.seed("region checks")?;
    let points: usize = p.get("points")?;
    let mut skels = Skeleton::all(k)?;
    skels.sort_by_key(|s| s.id());
    let mut w = out.csv(&format!("region_k{k}.csv"))?;
    w.write_record(["skeleton_id", "class_size", "points", "union_hits", "domain_hits", "mismatches", "expected_fraction"])?;
    let mut mismatches = 0;
    for s in &skels {
        let r = region_equality(s, points, seed)?;
        mismatches += r.mismatches;
        w.write_record([
            s.id(),
            r.class_size.to_string(),
            r.points.to_string(),
            r.union_hits.to_string(),
            r.domain_hits.to_string(),
            r.mismatches.to_string(),
            format!("{:e}", r.expected_fraction()),
        ])?;
    }
    w.flush()?;
    let outcome = if mismatches == 0 {
        Outcome::Ok(format!("{} classes, no mismatches", skels.len()))
    } else {
        Outcome::CheckFailed(format!("{mismatches} points disagree between union and domain"))
    };
    Ok(Run { outcome, files: out.files })
}

// ---- illposed

pub fn illposed_keys() -> Vec<Key> {
    vec![
        key("m", "1024", "spatial frequency M (power of two)"),
        key("n2", "4", "needle aspect N2 (power of two)"),
        key("s", "0.5", "Sobolev order, 0 < s <= 1 (s < 1 for the probe)"),
        key("s1", "0.5", "velocity weight order"),
        key("delta", "0.25", "inflation exponent"),
        key("j_sample", "64", "needle directions actually summed"),
        key("n_times", "65", "points on the deflation curve"),
        key("probe", "none", "none | surrogate | cross_section"),
        key("probe_points", "8", "probe: points drawn from f"),
        key("nodes", "100000", "probe: Monte Carlo nodes per point"),
        required("seed", "Monte Carlo seed (required when probe != none)"),
        key("probe_s", "0.6", "cross_section: power-law exponent of the potential"),
        required("band", "probe: pass band on the relative error (default 0.5 surrogate, 0.75 cross_section)"),
    ]
}

pub const ILLPOSED_CSV: &str = "deflation.csv: t,norm (t from T* up to 0)
deflation_summary.csv: ratio,M,s,s1,delta
probe.csv: x1,x2,x3,v1,v2,v3,quadrature,stderr,predicted,relative_error";

pub fn illposed(p: &Params, dir: &Path) -> Result<Run, RunError> {
    let cfg = DeflationConfig::new(
        p.get("m")?,
        p.get("n2")?,
        p.get("s")?,
        p.get("s1")?,
        p.get("delta")?,
        p.get("j_sample")?,
    )?;
    let curve = deflation_curve(&cfg, p.get("n_times")?)?;
    let mut out = Out { dir, files: vec![] };
    out.write("deflation.csv", |w| curve.write_csv(w))?;
    out.write("deflation_summary.csv", |w| curve.write_summary_csv(w))?;
    let mut msg = format!(
        "norm(0) {:.4e}, norm(T*) {:.4e}, ratio {:.4}",
        curve.norm[curve.norm.len() - 1],
        curve.norm[0],
        curve.ratio()
    );
    let kind = p.choice("probe", &["none", "surrogate", "cross_section"])?;
    if kind == "none" {
        return Ok(Run { outcome: Outcome::Ok(msg), files: out.files });
    }
    let seed = p.seed("the loss probe")?;
    let mut probe = if kind == "surrogate" {
        LossProbeConfig::surrogate(seed)
    } else {
        LossProbeConfig::cross_section(Potential::power_law(p.get("probe_s")?, 0.5, 1.0)?, seed)
    };
    probe.nodes = p.get("nodes")?;
    if p.has("band") {
        probe.band = p.get("band")?;
    }
    if probe.nodes < MIN_PROBE_NODES {
        return Err(ConfigError::Plain(format!("nodes must be at least {MIN_PROBE_NODES}")).into());
    }
    let data = build_bad_data(&cfg)?;
    let points = data.support_points(p.get("probe_points")?, seed);
    let r = loss_probe(&data, &points, &probe)?;
    out.write("probe.csv", |w| r.write_csv(w))?;
    msg += &format!(
        "; probe relative error {:.3} +- {:.2e} against band {}",
        r.relative_error, r.stderr, r.band
    );
    let outcome = match r.verdict() {
        Verdict::Pass => Outcome::Ok(msg),
        Verdict::Fail => Outcome::CheckFailed(msg),
        Verdict::Inconclusive => Outcome::Inconclusive(msg),
    };
    Ok(Run { outcome, files: out.files })
}
