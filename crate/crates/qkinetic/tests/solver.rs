use qkinetic::collision::{CollisionConfig, Interpolation};
use qkinetic::density::{GaussianMixture, VelocityDensity};
use qkinetic::kernel::Potential;
use qkinetic::phase::{Distribution, Grid};
use qkinetic::solver::*;
use qkinetic::Error;

fn bump() -> Potential {
    Potential::bump_window(1.0, 2.0).unwrap()
}

fn cheap(pot: Potential) -> CollisionConfig {
    CollisionConfig { n_omega: 2, interpolation: Interpolation::MaxwellWeighted, ..CollisionConfig::new(pot) }
}

fn bimodal() -> GaussianMixture {
    GaussianMixture::new()
        .with_isotropic(0.5, [0.9, 0.0, 0.0], 0.8)
        .unwrap()
        .with_isotropic(0.5, [-0.9, 0.2, 0.0], 0.8)
        .unwrap()
}

fn inhomogeneous(scale: f64) -> Distribution {
    let g = Grid::new(1, 8, 3.0, 4, 4.0).unwrap();
    let b = bimodal();
    Distribution::from_xv(g, |x, v| scale * (1.0 + 0.3 * (std::f64::consts::PI * x[0] / 3.0).cos()) * b.value(v)).unwrap()
}

#[test]
fn zero_potential_is_free_transport() {
    let f0 = inhomogeneous(1.0);
    let traj = solve(&f0, &SolverConfig::new(0.25, 1.0), &cheap(bump().switched_off())).unwrap();
    let want = f0.free_transport(1.0).dist;
    assert!(traj.last().relative_l2_distance(&want).unwrap() < 1e-12);
    assert_eq!(traj.times.len(), 5);
    assert!(traj.times.windows(2).all(|w| w[1] > w[0]));
}

#[test]
fn homogeneous_without_collisions_warns() {
    let g = Grid::homogeneous(4, 4.0).unwrap();
    let f0 = bimodal().sample(g).unwrap();
    let traj = solve(&f0, &SolverConfig::new(0.5, 1.0), &cheap(bump().switched_off())).unwrap();
    assert_eq!(traj.last(), &f0);
    assert!(traj.warnings.iter().any(|w| w.contains("no-op")));
}

#[test]
fn short_homogeneous_run_keeps_mass_and_entropy() {
    let g = Grid::homogeneous(8, 6.0).unwrap();
    let f0 = bimodal().sample(g).unwrap();
    let f0 = f0.scaled(1.0 / f0.mass());
    let traj = solve(&f0, &SolverConfig::new(0.1, 0.5), &cheap(bump())).unwrap();
    let m0 = traj.diagnostics[0].mass;
    let l0 = traj.diagnostics[0].l1;
    for w in traj.diagnostics.windows(2) {
        assert!((w[1].mass - m0).abs() <= 1e-10 * m0);
        assert!(w[1].entropy >= w[0].entropy - 1e-8, "{} -> {}", w[0].entropy, w[1].entropy);
    }
    let last = traj.diagnostics.last().unwrap();
    assert!((last.l1 - l0).abs() <= 1e-4 * l0);
    assert!(last.min_f >= -1e-10);
    assert!(last.entropy > traj.diagnostics[0].entropy);
}

#[test]
fn maxwellian_has_the_larger_entropy() {
    let g = Grid::homogeneous(16, 7.0).unwrap();
    let m = GaussianMixture::maxwellian(1.0, [0.0; 3], 1.0).unwrap().sample(g).unwrap();
    // equal mass, zero momentum, and mean temperature 1
    let p = GaussianMixture::new()
        .with_isotropic(0.5, [0.0; 3], 0.6)
        .unwrap()
        .with_isotropic(0.5, [0.0; 3], 1.4)
        .unwrap()
        .sample(g)
        .unwrap();
    let (em, ep) = (m.moments().2, p.moments().2);
    // the wide component loses about 5e-6 of its energy to the box edge
    assert!((em - ep).abs() < 2e-5, "{em} {ep}");
    assert!(entropy(&m) > entropy(&p));
    // closed form for the unit Maxwellian: (3/2)(1 + ln 2π)
    let exact = 1.5 * (1.0 + (2.0 * std::f64::consts::PI).ln());
    assert!((entropy(&m) - exact).abs() < 1e-6, "{}", entropy(&m));
}

#[test]
fn entropy_is_not_homogeneous() {
    let g = Grid::homogeneous(16, 7.0).unwrap();
    let m = GaussianMixture::maxwellian(1.0, [0.0; 3], 1.0).unwrap().sample(g).unwrap();
    let s1 = entropy(&m);
    let s2 = entropy(&m.scaled(2.0));
    // −∫2f ln 2f = 2S − 2 ln 2 ∫f
    assert!((s2 - (2.0 * s1 - 2.0 * 2f64.ln() * m.mass())).abs() < 1e-10);
    assert!((s2 - 7.1273368).abs() < 1e-6, "{s2}");
}

#[test]
fn continuity_probe_examples() {
    let f0 = inhomogeneous(0.2);
    let cfg = SolverConfig::new(0.1, 0.2);
    let ccfg = cheap(bump());
    assert_eq!(continuity_probe(&f0, &f0, &cfg, &ccfg).unwrap(), 0.0);
    let bumpy = Distribution::from_xv(f0.grid, |x, v| {
        (-(x[0] * x[0]) - 0.5 * (v[0] * v[0] + v[1] * v[1] + v[2] * v[2])).exp()
    })
    .unwrap();
    let g0 = f0.axpy(1e-4, &bumpy).unwrap();
    let r = continuity_probe(&f0, &g0, &cfg, &ccfg).unwrap();
    assert!(r > 0.0 && r <= 4.0, "{r}");
    let a = continuity_probe(&f0, &f0.scaled(1.001), &cfg, &ccfg).unwrap();
    let b = continuity_probe(&f0, &f0.scaled(1.0001), &cfg, &ccfg).unwrap();
    assert!((a / b - 1.0).abs() < 0.1, "{a} {b}");
}

#[test]
fn blow_up_is_guarded() {
    let g = Grid::homogeneous(8, 6.0).unwrap();
    let f0 = bimodal().sample(g).unwrap().scaled(400.0);
    let mut cfg = SolverConfig::new(1.0, 20.0);
    cfg.splitting = Splitting::Lie;
    cfg.collision_substep = Substep::Euler;
    cfg.conservative_projection = false;
    let ccfg = CollisionConfig { n_omega: 2, ..CollisionConfig::new(bump()) };
    assert!(matches!(solve(&f0, &cfg, &ccfg), Err(Error::Guard(_))));
}

#[test]
fn diagnostics_csv_columns() {
    let g = Grid::homogeneous(4, 4.0).unwrap();
    let f0 = bimodal().sample(g).unwrap();
    let traj = solve(&f0, &SolverConfig::new(0.5, 1.0), &cheap(bump())).unwrap();
    let mut buf = Vec::new();
    traj.write_csv(&mut buf).unwrap();
    let text = String::from_utf8(buf).unwrap();
    assert!(text.starts_with("t,mass,px,py,pz,energy,entropy,min_f,h_norm\n"));
    assert_eq!(text.lines().count(), 1 + traj.diagnostics.len());
}
