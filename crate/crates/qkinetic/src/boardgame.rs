//! The Klainerman–Machedon board game: collapsing maps μ with μ(j) < j, their
//! admissible binary trees, skeleton classes and the time domains T(μ).
//!
//! Labels follow the hierarchy: node 1 is the root and only ever has a right
//! child (node 2), and a k-step expansion has nodes 1..=k+1.

use std::collections::HashMap;
use std::fmt;
use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{arg, Error, Result};

/// Largest k for which classes are enumerated label by label.
pub const MAX_CLASS_K: usize = 8;
/// Largest k for which all skeletons are materialized.
pub const MAX_SKELETON_K: usize = 12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Side {
    Left,
    Right,
}

/// μ on {2, …, k+1}; stored as `mu[j - 2]`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct CollapsingMap {
    mu: Vec<usize>,
}

impl CollapsingMap {
    pub fn new(mu: Vec<usize>) -> Result<Self> {
        if mu.is_empty() {
            return arg("a collapsing map needs k >= 1");
        }
        for (i, &m) in mu.iter().enumerate() {
            let j = i + 2;
            if m < 1 || m >= j {
                return Err(Error::Validation(format!("mu({j}) = {m} violates 1 <= mu(j) < j")));
            }
        }
        Ok(CollapsingMap { mu })
    }

    pub fn k(&self) -> usize {
        self.mu.len()
    }

    /// μ(j) for 2 ≤ j ≤ k+1.
    pub fn get(&self, j: usize) -> usize {
        self.mu[j - 2]
    }

    pub fn values(&self) -> &[usize] {
        &self.mu
    }

    pub fn is_upper_echelon(&self) -> bool {
        self.mu.windows(2).all(|w| w[0] <= w[1])
    }

    /// All k! maps, in lexicographic order.
    pub fn all(k: usize) -> Result<Vec<Self>> {
        if k == 0 || k > MAX_CLASS_K {
            return Err(Error::Unsupported(format!("enumerating all maps needs 1 <= k <= {MAX_CLASS_K}")));
        }
        let mut out = vec![Vec::new()];
        for j in 2..=k + 1 {
            out = out
                .into_iter()
                .flat_map(|p: Vec<usize>| {
                    (1..j).map(move |m| {
                        let mut q = p.clone();
                        q.push(m);
                        q
                    })
                })
                .collect();
        }
        Ok(out.into_iter().map(|mu| CollapsingMap { mu }).collect())
    }
}

impl fmt::Display for CollapsingMap {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.mu.iter().map(|m| m.to_string()).collect();
        write!(f, "{}", parts.join(" "))
    }
}

/// An admissible labelled binary tree on nodes 1..=k+1. Children are indexed by
/// label; slot 0 is unused.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct EchelonTree {
    left: Vec<Option<usize>>,
    right: Vec<Option<usize>>,
}

impl EchelonTree {
    /// Builds and checks a tree from (parent, side, child) edges.
    pub fn from_edges(k: usize, edges: &[(usize, Side, usize)]) -> Result<Self> {
        if k == 0 {
            return arg("a tree needs k >= 1");
        }
        let n = k + 1;
        let mut t = EchelonTree { left: vec![None; n + 1], right: vec![None; n + 1] };
        let mut parent = vec![None; n + 1];
        for &(p, side, c) in edges {
            if !(1..=n).contains(&p) || !(2..=n).contains(&c) {
                return Err(Error::Validation(format!("edge {p} -> {c} leaves the labels 1..={n}")));
            }
            if c <= p {
                return Err(Error::Validation(format!("child {c} is not larger than its parent {p}")));
            }
            if parent[c].replace(p).is_some() {
                return Err(Error::Validation(format!("node {c} has two parents")));
            }
            let slot = match side {
                Side::Left => &mut t.left[p],
                Side::Right => &mut t.right[p],
            };
            if slot.replace(c).is_some() {
                return Err(Error::Validation(format!("node {p} has two {side:?} children")));
            }
        }
        if t.left[1].is_some() || t.right[1] != Some(2) {
            return Err(Error::Validation("the root must have node 2 as its only (right) child".into()));
        }
        // every child is larger than its parent, so one parent per node makes a tree
        if let Some(c) = (2..=n).find(|&c| parent[c].is_none()) {
            return Err(Error::Validation(format!("node {c} is detached")));
        }
        Ok(t)
    }

    pub fn k(&self) -> usize {
        self.left.len() - 2
    }

    pub fn left(&self, label: usize) -> Option<usize> {
        self.left[label]
    }

    pub fn right(&self, label: usize) -> Option<usize> {
        self.right[label]
    }

    pub fn edges(&self) -> Vec<(usize, Side, usize)> {
        let mut out = Vec::new();
        for p in 1..self.left.len() {
            if let Some(c) = self.left[p] {
                out.push((p, Side::Left, c));
            }
            if let Some(c) = self.right[p] {
                out.push((p, Side::Right, c));
            }
        }
        out
    }

    /// Labels below node 2 in preorder.
    fn preorder(&self) -> Vec<usize> {
        let mut out = Vec::with_capacity(self.k());
        let mut stack = vec![2];
        while let Some(v) = stack.pop() {
            out.push(v);
            if let Some(r) = self.right[v] {
                stack.push(r);
            }
            if let Some(l) = self.left[v] {
                stack.push(l);
            }
        }
        out
    }

    pub fn skeleton(&self) -> Skeleton {
        let code = self
            .preorder()
            .into_iter()
            .map(|v| self.left[v].is_some() as u8 | (self.right[v].is_some() as u8) << 1)
            .collect();
        Skeleton { code }
    }
}

/// Algorithm "μ to tree": node j gets as left child the first a > j with
/// μ(a) = μ(j) and as right child the first b > j with μ(b) = j.
pub fn mu_to_tree(m: &CollapsingMap) -> EchelonTree {
    let n = m.k() + 1;
    let mut left = vec![None; n + 1];
    let mut right = vec![None; n + 1];
    right[1] = Some(2);
    for j in 2..=n {
        left[j] = (j + 1..=n).find(|&a| m.get(a) == m.get(j));
        right[j] = (j + 1..=n).find(|&b| m.get(b) == j);
    }
    EchelonTree { left, right }
}

/// Algorithm "tree to μ": a right child maps to its parent, a left child to
/// μ(parent). Labels are visited upwards so μ(parent) is always known.
pub fn tree_to_mu(t: &EchelonTree) -> CollapsingMap {
    let n = t.k() + 1;
    let mut parent = vec![(0, Side::Left); n + 1];
    for (p, side, c) in t.edges() {
        parent[c] = (p, side);
    }
    let mut mu = vec![0usize; n + 1];
    for c in 2..=n {
        mu[c] = match parent[c] {
            (p, Side::Right) => p,
            (p, Side::Left) => mu[p],
        };
    }
    CollapsingMap { mu: mu[2..].to_vec() }
}

/// Unlabelled shape of the tree below the root, as preorder child-presence
/// bits (1 = left child, 2 = right child).
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Skeleton {
    code: Vec<u8>,
}

struct Shape {
    left: Vec<Option<usize>>,
    right: Vec<Option<usize>>,
}

impl Skeleton {
    pub fn from_code(code: Vec<u8>) -> Result<Self> {
        let s = Skeleton { code };
        s.shape()?;
        Ok(s)
    }

    pub fn k(&self) -> usize {
        self.code.len()
    }

    pub fn code(&self) -> &[u8] {
        &self.code
    }

    /// Hashable identifier: the preorder code as a digit string.
    pub fn id(&self) -> String {
        self.code.iter().map(|b| char::from(b'0' + b)).collect()
    }

    /// k nodes, each the left child of the previous one.
    pub fn left_chain(k: usize) -> Result<Self> {
        if k == 0 {
            return arg("a skeleton needs at least one node");
        }
        let mut code = vec![1u8; k];
        code[k - 1] = 0;
        Ok(Skeleton { code })
    }

    /// All Catalan(k) shapes with k nodes.
    pub fn all(k: usize) -> Result<Vec<Self>> {
        if k == 0 || k > MAX_SKELETON_K {
            return Err(Error::Unsupported(format!("skeleton enumeration needs 1 <= k <= {MAX_SKELETON_K}")));
        }
        let mut by_size: Vec<Vec<Vec<u8>>> = vec![vec![Vec::new()]];
        for n in 1..=k {
            let mut cur = Vec::new();
            for l in 0..n {
                for a in &by_size[l] {
                    for b in &by_size[n - 1 - l] {
                        let bits = (l > 0) as u8 | ((n - 1 - l > 0) as u8) << 1;
                        let mut code = vec![bits];
                        code.extend_from_slice(a);
                        code.extend_from_slice(b);
                        cur.push(code);
                    }
                }
            }
            by_size.push(cur);
        }
        Ok(by_size.pop().unwrap().into_iter().map(|code| Skeleton { code }).collect())
    }

    /// Positions are preorder indices.
    fn shape(&self) -> Result<Shape> {
        fn walk(code: &[u8], pos: &mut usize, left: &mut Vec<Option<usize>>, right: &mut Vec<Option<usize>>) -> Option<usize> {
            let me = *pos;
            let bits = *code.get(me)?;
            if bits > 3 {
                return None;
            }
            *pos += 1;
            left.push(None);
            right.push(None);
            if bits & 1 != 0 {
                left[me] = Some(walk(code, pos, left, right)?);
            }
            if bits & 2 != 0 {
                right[me] = Some(walk(code, pos, left, right)?);
            }
            Some(me)
        }
        let (mut left, mut right) = (Vec::new(), Vec::new());
        let mut pos = 0;
        if self.code.is_empty() || walk(&self.code, &mut pos, &mut left, &mut right).is_none() || pos != self.code.len() {
            return Err(Error::Validation(format!("'{}' is not a preorder skeleton code", self.id())));
        }
        Ok(Shape { left, right })
    }
}

fn label_shape(shape: &Shape, labels: &[usize]) -> EchelonTree {
    let n = labels.len() + 1;
    let mut left = vec![None; n + 1];
    let mut right = vec![None; n + 1];
    right[1] = Some(labels[0]);
    for (p, &lab) in labels.iter().enumerate() {
        left[lab] = shape.left[p].map(|c| labels[c]);
        right[lab] = shape.right[p].map(|c| labels[c]);
    }
    EchelonTree { left, right }
}

/// Algorithm "tree to upper echelon": label the top node 2; give j+1 to the
/// left child of j if there is one, otherwise to the empty right slot of the
/// smallest labelled node that has one.
pub fn canonicalize(skel: &Skeleton) -> EchelonTree {
    let shape = skel.shape().expect("skeletons are validated on construction");
    let k = skel.k();
    let mut labels = vec![0usize; k];
    let mut at = vec![0usize; k + 2];
    labels[0] = 2;
    at[2] = 0;
    for j in 2..=k {
        let p = at[j];
        let next = match shape.left[p] {
            Some(c) => c,
            None => (2..=j)
                .filter_map(|l| shape.right[at[l]].filter(|&c| labels[c] == 0))
                .next()
                .expect("an unlabelled node always hangs off a labelled one"),
        };
        labels[next] = j + 1;
        at[j + 1] = next;
    }
    label_shape(&shape, &labels)
}

/// All admissible labelings of the skeleton, as position → label vectors.
fn labelings(shape: &Shape, k: usize) -> Vec<Vec<usize>> {
    fn go(shape: &Shape, next: usize, frontier: &mut Vec<usize>, labels: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if frontier.is_empty() {
            out.push(labels.clone());
            return;
        }
        for i in 0..frontier.len() {
            let p = frontier.remove(i);
            labels[p] = next;
            let added: Vec<usize> = [shape.left[p], shape.right[p]].into_iter().flatten().collect();
            frontier.extend(&added);
            go(shape, next + 1, frontier, labels, out);
            frontier.truncate(frontier.len() - added.len());
            frontier.insert(i, p);
            labels[p] = 0;
        }
    }
    let mut out = Vec::new();
    go(shape, 2, &mut vec![0], &mut vec![0; k], &mut out);
    out
}

/// Every collapsing map whose tree has this skeleton.
pub fn enumerate_class(skel: &Skeleton) -> Result<Vec<CollapsingMap>> {
    if skel.k() > MAX_CLASS_K {
        return Err(Error::Unsupported(format!("class enumeration needs k <= {MAX_CLASS_K}, got {}", skel.k())));
    }
    let shape = skel.shape()?;
    let mut out: Vec<CollapsingMap> = labelings(&shape, skel.k()).iter().map(|l| tree_to_mu(&label_shape(&shape, l))).collect();
    out.sort();
    Ok(out)
}

/// Catalan(k), the number of skeletons with k nodes.
pub fn count_skeletons(k: usize) -> Result<u64> {
    let mut c: u128 = 1;
    for n in 0..k as u128 {
        c = c * 2 * (2 * n + 1) / (n + 2);
        if c > u64::MAX as u128 {
            return Err(Error::Overflow(format!("Catalan({k}) does not fit in 64 bits")));
        }
    }
    Ok(c as u64)
}

/// The inequalities t_parent ≥ t_child, one per edge including t₁ ≥ t₂.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TimeDomain {
    pub pairs: Vec<(usize, usize)>,
}

impl TimeDomain {
    /// `t[i]` is t_{i+1}.
    pub fn contains(&self, t: &[f64]) -> bool {
        self.pairs.iter().all(|&(a, b)| t[a - 1] >= t[b - 1])
    }
}

impl fmt::Display for TimeDomain {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.pairs.iter().map(|(a, b)| format!("t{a}>=t{b}")).collect();
        write!(f, "{}", parts.join(";"))
    }
}

pub fn time_domain(t: &EchelonTree) -> TimeDomain {
    let mut pairs: Vec<(usize, usize)> = t.edges().into_iter().map(|(p, _, c)| (p, c)).collect();
    pairs.sort();
    TimeDomain { pairs }
}

fn swap(j: usize, x: usize) -> usize {
    match x {
        _ if x == j => j + 1,
        _ if x == j + 1 => j,
        _ => x,
    }
}

/// KM(j, j+1): μ′ = (j j+1)∘μ∘(j j+1), σ′ = (j j+1)∘σ, allowed when
/// μ(j) ≠ μ(j+1) and μ(j+1) < j. `sigma[i]` is σ(i + 2).
pub fn km_move(m: &CollapsingMap, sigma: &[usize], j: usize) -> Result<(CollapsingMap, Vec<usize>)> {
    let k = m.k();
    if sigma.len() != k {
        return arg(format!("sigma must permute 2..={}, got {} entries", k + 1, sigma.len()));
    }
    let mut seen = vec![false; k + 2];
    for &s in sigma {
        if !(2..=k + 1).contains(&s) || std::mem::replace(&mut seen[s], true) {
            return arg(format!("{sigma:?} is not a permutation of 2..={}", k + 1));
        }
    }
    if !(2..=k).contains(&j) {
        return arg(format!("move index {j} outside 2..={k}"));
    }
    if m.get(j) == m.get(j + 1) || m.get(j + 1) >= j {
        return Err(Error::Validation(format!("KM({j},{}) is not acceptable for mu = {m}", j + 1)));
    }
    let mu = (2..=k + 1).map(|i| swap(j, m.get(swap(j, i)))).collect();
    let s = sigma.iter().map(|&x| swap(j, x)).collect();
    Ok((CollapsingMap { mu }, s))
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClassRow {
    pub skeleton: Skeleton,
    pub class_size: usize,
    pub canonical: CollapsingMap,
    pub domain: TimeDomain,
}

impl ClassRow {
    pub fn write_csv<W: Write>(rows: &[ClassRow], mut w: W) -> std::io::Result<()> {
        writeln!(w, "skeleton_id,class_size,canonical_mu,inequalities")?;
        for r in rows {
            writeln!(w, "{},{},{},{}", r.skeleton.id(), r.class_size, r.canonical, r.domain)?;
        }
        Ok(())
    }
}

/// One row per skeleton with k nodes; class sizes sum to k!.
pub fn tabulate(k: usize) -> Result<Vec<ClassRow>> {
    if k == 0 || k > MAX_CLASS_K {
        return Err(Error::Unsupported(format!("tabulation needs 1 <= k <= {MAX_CLASS_K}")));
    }
    Skeleton::all(k)?
        .into_par_iter()
        .map(|s| {
            let canon = canonicalize(&s);
            Ok(ClassRow { class_size: enumerate_class(&s)?.len(), canonical: tree_to_mu(&canon), domain: time_domain(&canon), skeleton: s })
        })
        .collect()
}

/// Monte Carlo comparison of ∪_{μ_m ∼ μ} {t₁ ≥ t_{ρ_m(2)} ≥ …} with T(μ) on [0,1]^k, t₁ = 1.
#[derive(Debug, Clone, PartialEq)]
pub struct RegionCheck {
    pub k: usize,
    pub class_size: usize,
    pub points: usize,
    pub union_hits: usize,
    pub domain_hits: usize,
    pub mismatches: usize,
}

impl RegionCheck {
    /// Each simplex has volume 1/k!, so T(μ) has volume class_size/k!.
    pub fn expected_fraction(&self) -> f64 {
        self.class_size as f64 / (1..=self.k).map(|i| i as f64).product::<f64>()
    }
}

pub fn region_equality(skel: &Skeleton, points: usize, seed: u64) -> Result<RegionCheck> {
    let k = skel.k();
    let canon = canonicalize(skel);
    let domain = time_domain(&canon);
    let canon_order = canon.preorder();
    // member label ℓ sits at the canonical node order[ℓ]
    let orders: Vec<Vec<usize>> = enumerate_class(skel)?
        .iter()
        .map(|m| {
            let member = mu_to_tree(m).preorder();
            let mut at = vec![0; k + 2];
            for (pos, &lab) in member.iter().enumerate() {
                at[lab] = canon_order[pos];
            }
            at
        })
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut t = vec![1.0; k + 1];
    let (mut union_hits, mut domain_hits, mut mismatches) = (0, 0, 0);
    for _ in 0..points {
        for v in t.iter_mut().skip(1) {
            *v = rng.gen::<f64>();
        }
        let in_union = orders.iter().any(|at| (2..=k).all(|l| t[at[l] - 1] >= t[at[l + 1] - 1]));
        let in_domain = domain.contains(&t);
        union_hits += in_union as usize;
        domain_hits += in_domain as usize;
        mismatches += (in_union != in_domain) as usize;
    }
    Ok(RegionCheck { k, class_size: orders.len(), points, union_hits, domain_hits, mismatches })
}

/// Groups all k! maps by the skeleton of their tree.
pub fn classes_by_skeleton(k: usize) -> Result<HashMap<Skeleton, Vec<CollapsingMap>>> {
    let mut out: HashMap<Skeleton, Vec<CollapsingMap>> = HashMap::new();
    for m in CollapsingMap::all(k)? {
        out.entry(mu_to_tree(&m).skeleton()).or_default().push(m);
    }
    Ok(out)
}
