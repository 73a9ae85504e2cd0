//! Quadrature building blocks shared by the modules.

use std::collections::HashMap;
use std::num::NonZeroUsize;
use std::sync::{Mutex, OnceLock};

use gauss_quad::hermite::GaussHermite;
use gauss_quad::legendre::GaussLegendre;

pub type Vec3 = [f64; 3];

pub fn dot(a: Vec3, b: Vec3) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

pub fn norm(a: Vec3) -> f64 {
    dot(a, a).sqrt()
}

pub fn add(a: Vec3, b: Vec3) -> Vec3 {
    [a[0] + b[0], a[1] + b[1], a[2] + b[2]]
}

pub fn sub(a: Vec3, b: Vec3) -> Vec3 {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

pub fn scale(a: Vec3, s: f64) -> Vec3 {
    [a[0] * s, a[1] * s, a[2] * s]
}

/// `a + s b`
pub fn axpy(a: Vec3, s: f64, b: Vec3) -> Vec3 {
    [a[0] + s * b[0], a[1] + s * b[1], a[2] + s * b[2]]
}

fn cached(kind: u8, n: usize, build: impl FnOnce() -> Vec<(f64, f64)>) -> Vec<(f64, f64)> {
    static CACHE: OnceLock<Mutex<HashMap<(u8, usize), Vec<(f64, f64)>>>> = OnceLock::new();
    let cache = CACHE.get_or_init(|| Mutex::new(HashMap::new()));
    if let Some(rule) = cache.lock().unwrap().get(&(kind, n)) {
        return rule.clone();
    }
    let rule = build();
    cache.lock().unwrap().insert((kind, n), rule.clone());
    rule
}

/// Gauss–Legendre nodes and weights on [-1, 1], sorted by node.
pub fn gauss_legendre(n: usize) -> Vec<(f64, f64)> {
    assert!(n > 0, "Gauss-Legendre rule needs at least one node");
    cached(0, n, || {
        let mut rule = GaussLegendre::new(NonZeroUsize::new(n).unwrap())
            .as_node_weight_pairs()
            .to_vec();
        rule.sort_by(|a, b| a.0.total_cmp(&b.0));
        rule
    })
}

/// Gauss–Hermite rule for the weight e^{-x²}.
pub fn gauss_hermite(n: usize) -> Vec<(f64, f64)> {
    assert!(n > 0, "Gauss-Hermite rule needs at least one node");
    cached(1, n, || {
        let mut rule = GaussHermite::new(NonZeroUsize::new(n).unwrap())
            .as_node_weight_pairs()
            .to_vec();
        rule.sort_by(|a, b| a.0.total_cmp(&b.0));
        rule
    })
}

/// Composite Gauss–Legendre rule over consecutive breakpoints.
pub fn gl_panels(breaks: &[f64], n: usize) -> Vec<(f64, f64)> {
    let base = gauss_legendre(n);
    let mut out = Vec::with_capacity(n * breaks.len().saturating_sub(1));
    for pair in breaks.windows(2) {
        let (a, b) = (pair[0], pair[1]);
        if b <= a {
            continue;
        }
        let (mid, half) = (0.5 * (a + b), 0.5 * (b - a));
        out.extend(base.iter().map(|&(x, w)| (mid + half * x, half * w)));
    }
    out
}

/// Composite rule on [a, b] with panels no longer than `max_len`.
pub fn gl_uniform(a: f64, b: f64, max_len: f64, n: usize) -> Vec<(f64, f64)> {
    if b <= a {
        return Vec::new();
    }
    let panels = ((b - a) / max_len).ceil().max(1.0) as usize;
    let breaks: Vec<f64> = (0..=panels)
        .map(|i| a + (b - a) * i as f64 / panels as f64)
        .collect();
    gl_panels(&breaks, n)
}

/// Product rule on S²: Gauss–Legendre in cos θ times uniform azimuth.
///
/// With an even polar count the node set is closed under ω → −ω, which makes
/// even integrands integrate with exact antipodal symmetry.
#[derive(Debug, Clone)]
pub struct SphereRule {
    pub nodes: Vec<Vec3>,
    pub weights: Vec<f64>,
    /// Azimuthal index of each node, used to split the rule into two halves.
    pub azimuth_index: Vec<usize>,
}

impl SphereRule {
    pub fn product(n_polar: usize, n_azimuth: usize) -> Self {
        Self::build(n_polar, n_azimuth, false)
    }

    /// Only the nodes with cos θ > 0; weights sum to 2π.
    pub fn upper_hemisphere(n_polar: usize, n_azimuth: usize) -> Self {
        Self::build(n_polar, n_azimuth, true)
    }

    fn build(n_polar: usize, n_azimuth: usize, upper: bool) -> Self {
        let gl = gauss_legendre(n_polar);
        let dphi = 2.0 * std::f64::consts::PI / n_azimuth as f64;
        let mut nodes = Vec::new();
        let mut weights = Vec::new();
        let mut azimuth_index = Vec::new();
        for &(c, w) in &gl {
            if upper && c <= 0.0 {
                continue;
            }
            let s = (1.0 - c * c).max(0.0).sqrt();
            for k in 0..n_azimuth {
                let phi = (k as f64 + 0.5) * dphi;
                nodes.push([s * phi.cos(), s * phi.sin(), c]);
                weights.push(w * dphi);
                azimuth_index.push(k);
            }
        }
        SphereRule { nodes, weights, azimuth_index }
    }

    /// Rotate the rule so that its pole points along `axis`.
    pub fn aligned(mut self, axis: Vec3) -> Self {
        let n = norm(axis);
        if n == 0.0 {
            return self;
        }
        let e3 = scale(axis, 1.0 / n);
        let helper = if e3[0].abs() < 0.9 { [1.0, 0.0, 0.0] } else { [0.0, 1.0, 0.0] };
        let e1 = {
            let t = axpy(helper, -dot(helper, e3), e3);
            scale(t, 1.0 / norm(t))
        };
        let e2 = [
            e3[1] * e1[2] - e3[2] * e1[1],
            e3[2] * e1[0] - e3[0] * e1[2],
            e3[0] * e1[1] - e3[1] * e1[0],
        ];
        for p in &mut self.nodes {
            let [a, b, c] = *p;
            *p = [
                a * e1[0] + b * e2[0] + c * e3[0],
                a * e1[1] + b * e2[1] + c * e3[1],
                a * e1[2] + b * e2[2] + c * e3[2],
            ];
        }
        self
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }
}

/// Least-squares line fit; returns (slope, intercept, RMS residual).
pub fn linfit(xs: &[f64], ys: &[f64]) -> (f64, f64, f64) {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let slope = if sxx > 0.0 { sxy / sxx } else { 0.0 };
    let intercept = my - slope * mx;
    let rss: f64 = xs
        .iter()
        .zip(ys)
        .map(|(x, y)| (y - intercept - slope * x).powi(2))
        .sum();
    (slope, intercept, (rss / n).sqrt())
}

/// Solve a small dense system in place by partial-pivot elimination.
pub(crate) fn solve_dense(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Option<Vec<f64>> {
    let n = b.len();
    for col in 0..n {
        let piv = (col..n).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))?;
        if a[piv][col].abs() < 1e-300 {
            return None;
        }
        a.swap(col, piv);
        b.swap(col, piv);
        for row in col + 1..n {
            let factor = a[row][col] / a[col][col];
            for k in col..n {
                a[row][k] -= factor * a[col][k];
            }
            b[row] -= factor * b[col];
        }
    }
    let mut x = vec![0.0; n];
    for row in (0..n).rev() {
        let s: f64 = (row + 1..n).map(|k| a[row][k] * x[k]).sum();
        x[row] = (b[row] - s) / a[row][row];
    }
    Some(x)
}
