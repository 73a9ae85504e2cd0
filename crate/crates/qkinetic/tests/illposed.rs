use std::f64::consts::PI;

use proptest::prelude::*;
use qkinetic::illposed::*;
use qkinetic::kernel::{Potential, DEFAULT_OUTER_DECAY};
use qkinetic::quad::{gauss_hermite, gl_uniform};
use qkinetic::Error;

fn base() -> DeflationConfig {
    DeflationConfig::new(8.0, 4.0, 0.5, 0.5, 0.25, 64).unwrap()
}

/// ∫_0^∞ F(r) r² e^{-r²/2} √(2/π) dr, the χ₃ average of F(|Z|).
fn chi3_average(f: impl Fn(f64) -> f64) -> f64 {
    gl_uniform(0.0, 14.0, 0.25, 12)
        .iter()
        .map(|&(r, w)| w * f(r) * r * r * (-0.5 * r * r).exp())
        .sum::<f64>()
        * (2.0 / PI).sqrt()
}

/// ∫∫ F(ρ, t) 2πρ dρ dt over cylindrical coordinates, with scales for each axis.
fn cylinder(rho_scale: f64, t_scale: f64, f: impl Fn(f64, f64) -> f64) -> f64 {
    let rho = gl_uniform(0.0, 12.0 * rho_scale, 0.25 * rho_scale, 12);
    let t = gl_uniform(-12.0 * t_scale, 12.0 * t_scale, 0.25 * t_scale, 12);
    let mut acc = 0.0;
    for &(r, wr) in &rho {
        for &(z, wz) in &t {
            acc += wr * wz * 2.0 * PI * r * f(r, z);
        }
    }
    acc
}

#[test]
fn config_is_checked() {
    assert!(DeflationConfig::new(6.0, 4.0, 0.5, 0.5, 0.25, 8).is_err());
    assert!(DeflationConfig::new(8.0, 1.0, 0.5, 0.5, 0.25, 8).is_err());
    assert!(DeflationConfig::new(8.0, 4.0, 0.0, 0.5, 0.25, 8).is_err());
    assert!(DeflationConfig::new(8.0, 4.0, 1.2, 0.5, 0.25, 8).is_err());
    assert!(DeflationConfig::new(8.0, 4.0, 0.5, 0.0, 0.25, 8).is_err());
    assert!(DeflationConfig::new(8.0, 4.0, 0.5, 0.5, 0.25, 0).is_err());
    assert!(DeflationConfig::new(8.0, 4.0, 0.5, 0.5, 0.25, MAX_J_SAMPLE + 1).is_err());
    let c = base();
    assert_eq!(c.j_total(), 1024);
    assert!(c.s0() < c.s);
    assert!((c.t_star() - (-0.25 * 8f64.ln() / (8f64.sqrt() / 2.0))).abs() < 1e-14);
}

#[test]
fn bad_data_needs_s_below_one() {
    let c = DeflationConfig::new(8.0, 4.0, 1.0, 0.5, 0.25, 8).unwrap();
    assert!(matches!(build_bad_data(&c), Err(Error::Argument(_))));
}

#[test]
fn gaussian_moment_isotropic() {
    for &(c, p) in &[(0.5, 0.5), (3.0, 0.25), (40.0, 0.9), (2.0, -0.7), (0.1, -2.5), (1e4, 0.5)] {
        let got = gaussian_moment([c; 3], p).unwrap();
        let want = chi3_average(|r| (1.0 + c * r * r).powf(p));
        assert!((got / want - 1.0).abs() < 1e-7, "c={c} p={p}: {got} vs {want}");
    }
    assert_eq!(gaussian_moment([5.0, 1.0, 2.0], 0.0).unwrap(), 1.0);
    assert!(matches!(gaussian_moment([1.0; 3], 1.0), Err(Error::Unsupported(_))));
    assert!(gaussian_moment([-1.0, 1.0, 1.0], 0.5).is_err());
}

#[test]
fn gaussian_moment_anisotropic() {
    let gh = gauss_hermite(60);
    for &(c, p) in &[([0.3, 1.0, 2.5], 0.5), ([0.05, 0.2, 0.7], -0.6), ([0.01, 0.5, 1.5], 0.8)] {
        let mut want = 0.0;
        for &(x, wx) in &gh {
            for &(y, wy) in &gh {
                for &(z, wz) in &gh {
                    let a = 2.0 * (c[0] * x * x + c[1] * y * y + c[2] * z * z);
                    want += wx * wy * wz * (1.0 + a).powf(p);
                }
            }
        }
        want *= PI.powf(-1.5);
        let got = gaussian_moment(c, p).unwrap();
        assert!((got / want - 1.0).abs() < 1e-5, "{c:?} {p}: {got} vs {want}");
    }
}

#[test]
fn data_norms_are_order_one() {
    let d = build_bad_data(&base()).unwrap();
    let (f, g) = (d.f_norm().unwrap(), d.g_norm().unwrap());
    assert!((0.25..=4.0).contains(&f), "{f}");
    assert!((0.25..=4.0).contains(&g), "{g}");
}

#[test]
fn f_norm_by_radial_quadrature() {
    for &(m, s, s1) in &[(8.0, 0.5, 0.5), (32.0, 0.8, 0.3), (4.0, 0.2, 0.9)] {
        let c = DeflationConfig::new(m, 4.0, s, s1, 0.25, 8).unwrap();
        let sph = |scale: f64, f: &dyn Fn(f64) -> f64| -> f64 {
            gl_uniform(0.0, 12.0 * scale, 0.1 * scale, 12).iter().map(|&(r, w)| w * 4.0 * PI * r * r * f(r)).sum()
        };
        let x = m.powi(-6) * sph(m, &|r| (1.0 + r * r).powf(s) * (-(r / m).powi(2)).exp());
        let v = (2.0 * PI).powi(-3) * sph(1.0 / m, &|r| (1.0 + r * r).powf(s1) * (-(m * r).powi(2)).exp());
        let want = (m.powf(6.0 - 2.0 * s) * x * v).sqrt();
        let got = build_bad_data(&c).unwrap().f_norm().unwrap();
        assert!((got / want - 1.0).abs() < 1e-7, "{got} {want}");
    }
}

#[test]
fn g_summand_norm_by_cylindrical_quadrature() {
    let c = base();
    let (m, n2, s, s1) = (c.m, c.n2, c.s, c.s1);
    let det = m * m / n2;
    let x = cylinder(m, 1.0 / n2, |r, t| (1.0 + r * r + t * t).powf(s) * (-(r / m).powi(2) - (n2 * t).powi(2)).exp())
        / (det * det);
    let v = cylinder(1.0 / m, n2, |r, t| (1.0 + r * r + t * t).powf(s1) * (-(m * r).powi(2) - (t / n2).powi(2)).exp())
        / (2.0 * PI).powi(3);
    let want = m.powf(1.0 - s) * n2.powf(-2.0 - s1) * (x * v).sqrt();
    let d = build_bad_data(&c).unwrap();
    let got = d.g_summand_norm().unwrap();
    assert!((got / want - 1.0).abs() < 1e-6, "{got} {want}");
    assert!((d.g_norm().unwrap() - 32.0 * got).abs() < 1e-12);
}

#[test]
fn f_is_concentrated() {
    let d = build_bad_data(&base()).unwrap();
    let peak = d.f([0.0; 3], [0.0; 3]);
    assert!((peak - 8f64.powf(2.5) * (2.0 * PI).powf(-1.5)).abs() < 1e-12 * peak);
    assert!(d.f([7.0 / 8.0, 0.0, 0.0], [0.0; 3]) <= 1e-8 * peak);
    assert!(d.f([0.0; 3], [0.0, 0.0, 1.0]) <= 1e-8 * peak);
}

#[test]
fn g_sums_every_direction_when_the_grid_is_small() {
    let c = DeflationConfig::new(2.0, 2.0, 0.5, 0.5, 0.25, 64).unwrap();
    let d = build_bad_data(&c).unwrap();
    assert_eq!(d.directions.len(), 16);
    assert_eq!(d.direction_weight(), 1.0);
    // at the origin each summand contributes χ(0) χ̂(0)
    let want = 2f64.powf(0.5) * 2f64.powf(-2.5) * 16.0 * (2.0 * PI).powf(-1.5);
    assert!((d.g([0.0; 3], [0.0; 3]) - want).abs() < 1e-14);
    for e in &d.directions {
        assert!((e.iter().map(|x| x * x).sum::<f64>() - 1.0).abs() < 1e-14);
    }
}

#[test]
fn g_norm_is_stable_under_doubling() {
    for js in [16, 32, 64, 128, 256] {
        let a = build_bad_data(&DeflationConfig { j_sample: js, ..base() }).unwrap();
        let b = build_bad_data(&DeflationConfig { j_sample: 2 * js, ..base() }).unwrap();
        assert_eq!(a.g_norm().unwrap(), b.g_norm().unwrap());
        // the subsampled g keeps the full-grid value at the origin
        let (ga, gb) = (a.g([0.0; 3], [0.0; 3]), b.g([0.0; 3], [0.0; 3]));
        assert!((ga / gb - 1.0).abs() < 1e-12);
    }
}

/// Explicit matrix a_perp² I + (a_par² − a_perp²) e eᵀ.
fn needle_matrix(e: [f64; 3], a_perp: f64, a_par: f64) -> [[f64; 3]; 3] {
    let mut m = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            m[i][j] = (a_par * a_par - a_perp * a_perp) * e[i] * e[j] + if i == j { a_perp * a_perp } else { 0.0 };
        }
    }
    m
}

fn cholesky(a: [[f64; 3]; 3]) -> [[f64; 3]; 3] {
    let mut l = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..=i {
            let s: f64 = (0..j).map(|k| l[i][k] * l[j][k]).sum();
            l[i][j] = if i == j { (a[i][i] - s).sqrt() } else { (a[i][j] - s) / l[j][j] };
        }
    }
    l
}

/// ∫ (1+|z|²)^p e^{-z·Σz/2} dz via z = L^{-T} y and tensor Gauss–Hermite.
fn weighted_gaussian_oracle(sigma: [[f64; 3]; 3], p: f64) -> f64 {
    let l = cholesky(sigma);
    let det = l[0][0] * l[1][1] * l[2][2];
    let gh = gauss_hermite(50);
    let mut acc = 0.0;
    for &(a, wa) in &gh {
        for &(b, wb) in &gh {
            for &(c, wc) in &gh {
                let y = [a * 2f64.sqrt(), b * 2f64.sqrt(), c * 2f64.sqrt()];
                // back substitution for Lᵀ z = y
                let mut z = [0.0; 3];
                for i in (0..3).rev() {
                    let s: f64 = (i + 1..3).map(|k| l[k][i] * z[k]).sum();
                    z[i] = (y[i] - s) / l[i][i];
                }
                acc += wa * wb * wc * (1.0 + z.iter().map(|x| x * x).sum::<f64>()).powf(p);
            }
        }
    }
    acc * 2f64.powf(1.5) / det
}

fn add_m(a: [[f64; 3]; 3], b: [[f64; 3]; 3]) -> [[f64; 3]; 3] {
    let mut c = a;
    for i in 0..3 {
        for j in 0..3 {
            c[i][j] += b[i][j];
        }
    }
    c
}

#[test]
fn overlap_of_two_directions_by_explicit_matrices() {
    let c = DeflationConfig::new(2.0, 2.0, 0.5, 0.5, 0.25, 2).unwrap();
    let d = build_bad_data(&c).unwrap();
    let (ea, eb) = (d.directions[0], d.directions[1]);
    let (m, n2) = (c.m, c.n2);
    let det = m * m / n2;
    // H^s part through the inverse scalings, L² part directly
    let hs = |x: [f64; 3], y: [f64; 3]| {
        weighted_gaussian_oracle(add_m(needle_matrix(x, 1.0 / m, n2), needle_matrix(y, 1.0 / m, n2)), c.s) / (det * det)
    };
    let l2 = |x: [f64; 3], y: [f64; 3]| {
        weighted_gaussian_oracle(add_m(needle_matrix(x, m, 1.0 / n2), needle_matrix(y, m, 1.0 / n2)), c.s1)
            / (2.0 * PI).powi(3)
    };
    let want = 1.0 + hs(ea, eb) * l2(ea, eb) / (hs(ea, ea) * l2(ea, ea));
    let got = d.overlap_ratio().unwrap();
    assert!((got - want).abs() < 1e-6, "{got} {want}");
    assert!(got > 1.0);
}

#[test]
fn sparse_directions_are_nearly_additive() {
    let mut prev = f64::INFINITY;
    for js in [32, 16, 8, 4] {
        let r = build_bad_data(&DeflationConfig { j_sample: js, ..base() }).unwrap().overlap_ratio().unwrap();
        assert!(r >= 1.0 && r < prev, "{js}: {r}");
        prev = r;
    }
    // square of the sum within 10% of the sum of squares once the directions separate
    let r16 = build_bad_data(&DeflationConfig { j_sample: 16, ..base() }).unwrap().overlap_ratio().unwrap();
    assert!(r16 <= 1.1, "{r16}");
    let finer = DeflationConfig::new(32.0, 8.0, 0.5, 0.5, 0.25, 16).unwrap();
    assert!(build_bad_data(&finer).unwrap().overlap_ratio().unwrap() < r16);
}

/// ∫ χ̂(A v₂) K(|v₂|) dv₂ for one direction, by cylindrical quadrature.
fn needle_kernel_integral(c: &DeflationConfig, k: impl Fn(f64) -> f64) -> f64 {
    let (m, n2) = (c.m, c.n2);
    (2.0 * PI).powf(-1.5)
        * cylinder(1.0 / m, n2, |r, t| (-0.5 * ((m * r).powi(2) + (t / n2).powi(2))).exp() * k((r * r + t * t).sqrt()))
}

#[test]
fn loss_at_the_origin_matches_deterministic_quadrature() {
    let c = base();
    let d = build_bad_data(&c).unwrap();
    let amp = c.m.powf(1.0 - c.s) * c.n2.powf(-2.0 - c.s1) * c.j_total() as f64;
    let f0 = d.f([0.0; 3], [0.0; 3]);
    let origin = [([0.0; 3], [0.0; 3])];

    let r = loss_probe(&d, &origin, &LossProbeConfig::surrogate(1)).unwrap();
    let want = f0 * amp * needle_kernel_integral(&c, |u| 1.0 / (1.0 + u * u).sqrt());
    let p = r.points[0];
    assert!((p.quadrature - want).abs() < 4.0 * p.stderr, "{} {} {}", p.quadrature, want, p.stderr);
    assert!(p.stderr < 0.01 * want);

    let pot = Potential::power_law(0.6, DEFAULT_OUTER_DECAY, 1.0).unwrap();
    let tail = 1e9 * pot.loss_kernel(1e9, 16);
    let r = loss_probe(&d, &origin, &LossProbeConfig::cross_section(pot, 1)).unwrap();
    let want = f0 * amp * needle_kernel_integral(&c, |u| pot.loss_kernel(u, 16)) / tail;
    let p = r.points[0];
    assert!((p.quadrature - want).abs() < 4.0 * p.stderr, "{} {} {}", p.quadrature, want, p.stderr);
}

#[test]
fn product_form_misses_the_logarithm_at_the_origin() {
    // along each needle ∫ e^{-t²/2N₂²} ⟨t⟩^{-1} dt grows like 2 ln N₂, where the
    // product form counts N₂ · N₂^{-1}; at N₂ = 4 the gap is already 70%
    let c = base();
    let d = build_bad_data(&c).unwrap();
    let r = loss_probe(&d, &[([0.0; 3], [0.0; 3])], &LossProbeConfig::surrogate(2)).unwrap();
    let ratio = r.points[0].quadrature / r.points[0].predicted;
    let exact = c.m * c.m * needle_kernel_integral(&c, |u| 1.0 / (1.0 + u * u).sqrt());
    assert!((ratio / exact - 1.0).abs() < 0.01, "{ratio} {exact}");
    assert!(ratio > 1.5);
}

#[test]
fn far_points_are_small_on_both_sides() {
    let d = build_bad_data(&base()).unwrap();
    let peak = d.predicted_loss([0.0; 3], [0.0; 3]);
    let r = loss_probe(&d, &[([0.75, 0.0, 0.0], [0.0; 3]), ([0.0; 3], [0.0, 0.8, 0.0])], &LossProbeConfig::surrogate(3))
        .unwrap();
    for p in &r.points {
        assert!(p.quadrature <= 1e-8 * peak && p.predicted <= 1e-8 * peak, "{p:?}");
    }
}

#[test]
fn probe_is_reproducible_and_checked() {
    let d = build_bad_data(&DeflationConfig { j_sample: 16, ..base() }).unwrap();
    let pts = d.support_points(3, 9);
    assert_eq!(pts, d.support_points(3, 9));
    let a = loss_probe(&d, &pts, &LossProbeConfig::surrogate(4)).unwrap();
    let b = loss_probe(&d, &pts, &LossProbeConfig::surrogate(4)).unwrap();
    assert_eq!(a, b);
    let mut buf = Vec::new();
    a.write_csv(&mut buf).unwrap();
    let text = String::from_utf8(buf).unwrap();
    assert!(text.starts_with("x1,x2,x3,v1,v2,v3,quadrature,stderr,predicted,relative_error\n"));
    assert_eq!(text.lines().count(), 4);
    let few = LossProbeConfig { nodes: 1000, ..LossProbeConfig::surrogate(4) };
    assert!(loss_probe(&d, &pts, &few).is_err());
    assert!(loss_probe(&d, &[], &LossProbeConfig::surrogate(4)).is_err());
}

#[test]
fn verdicts() {
    let probe = |relative_error, stderr| LossProbe { points: vec![], relative_error, stderr, band: 0.5 };
    assert_eq!(probe(0.3, 0.01).verdict(), Verdict::Pass);
    assert_eq!(probe(0.7, 0.01).verdict(), Verdict::Fail);
    assert_eq!(probe(0.48, 0.01).verdict(), Verdict::Inconclusive);
    assert_eq!(probe(0.3, 0.1).verdict(), Verdict::Inconclusive);
    assert!(SURROGATE_BAND < CROSS_SECTION_BAND);
}

#[test]
fn deflation_endpoints_at_m_1024() {
    let c = DeflationConfig::new(1024.0, 4.0, 0.5, 0.5, 0.25, 8).unwrap();
    let curve = deflation_curve(&c, 33).unwrap();
    let l = 1024f64.ln();
    let n0 = *curve.norm.last().unwrap();
    assert!(n0 <= 2.0 / l);
    assert!((n0 - 2.0 / l).abs() < 1e-15);
    // at T* the exponent is δ ln M, so norm(T*) = (M^δ ⟨δ ln M⟩^{s₀} + 1) / ln M
    let want = (1024f64.powf(0.25) * (1.0 + (0.25 * l).powi(2)).powf(0.5 * c.s0()) + 1.0) / l;
    assert!((curve.norm[0] - want).abs() < 1e-12 * want);
    assert_eq!(curve.t[0], c.t_star());
    assert_eq!(*curve.t.last().unwrap(), 0.0);
    // deflates monotonically forward in time
    assert!(curve.norm.windows(2).all(|w| w[1] < w[0]));
}

#[test]
fn ratio_grows_along_the_m_ladder() {
    let mut prev = 0.0;
    for m in [64.0, 256.0, 1024.0, 4096.0] {
        let c = DeflationConfig::new(m, 4.0, 0.5, 0.5, 0.25, 8).unwrap();
        let r = deflation_curve(&c, 5).unwrap().ratio();
        assert!(r > prev, "{m}: {r}");
        prev = r;
    }
}

#[test]
fn rate_stops_growing_at_s_one() {
    let at = |m: f64, s: f64| DeflationConfig::new(m, 4.0, s, 0.5, 0.25, 8).unwrap();
    assert_eq!(at(64.0, 1.0).rate(), at(1024.0, 1.0).rate());
    let c = at(1024.0, 1.0);
    assert!((c.t_star() + 0.25 * 1024f64.ln() * 4f64.sqrt()).abs() < 1e-12);
    assert!(at(1024.0, 0.5).rate() / at(64.0, 0.5).rate() > 3.9);
}

#[test]
fn curve_csv() {
    let c = DeflationConfig::new(256.0, 4.0, 0.5, 0.5, 0.25, 8).unwrap();
    let curve = deflation_curve(&c, 4).unwrap();
    let mut a = Vec::new();
    curve.write_csv(&mut a).unwrap();
    let a = String::from_utf8(a).unwrap();
    assert!(a.starts_with("t,norm\n"));
    assert_eq!(a.lines().count(), 5);
    let mut b = Vec::new();
    curve.write_summary_csv(&mut b).unwrap();
    let b = String::from_utf8(b).unwrap();
    assert!(b.starts_with("ratio,M,s,s1,delta\n"));
    assert!(b.trim_end().ends_with(",256,0.5,0.5,0.25"), "{b}");
    assert!(deflation_curve(&c, 1).is_err());
}

proptest! {
    #[test]
    fn deflation_at_fixed_time_weakens_with_s(
        mexp in 2i32..14,
        a in 0.01f64..0.98,
        gap in 0.001f64..0.5,
        t in -10.0f64..-1e-3,
    ) {
        let b = (a + gap).min(0.99);
        prop_assume!(b > a);
        let m = 2f64.powi(mexp);
        let ratio = |s: f64| {
            let c = DeflationConfig::new(m, 4.0, s, 0.5, 0.25, 8).unwrap();
            log_deflation_norm(&c, t) - log_deflation_norm(&c, 0.0)
        };
        prop_assert!(ratio(b) < ratio(a));
    }
}
