//! Labelled trees, stable supercurves, and the Gromov distance `ρ_ε` between them.
//!
//! Vertices are 0-based in this API. The parent-vector encoding used for files is
//! 1-based: vertex `i ≥ 2` has parent `j_i < i`.

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use rayon::prelude::*;
use serde::Serialize;

use crate::energy::{energy_curve, energy_section, hbar, Cap, Region};
use crate::error::{Error, Result};
use crate::fields::{GlobalCurve, SuperSection, Target};
use crate::geometry::{fibonacci_points, LineBundle, Moebius, SpherePoint, C};
use crate::poly::Poly;
use crate::optim::NelderMead;

/// Largest tree for which homomorphisms are enumerated.
pub const MAX_HOM_VERTICES: usize = 8;

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct LabelledTree {
    /// `parents[i - 1]` is the parent of vertex `i`.
    parents: Vec<usize>,
    /// Marked point index ↦ vertex.
    labels: Vec<usize>,
}

impl LabelledTree {
    pub fn new(parents: Vec<usize>, labels: Vec<usize>) -> Result<Self> {
        for (i, &p) in parents.iter().enumerate() {
            if p > i {
                return Err(Error::Tree(format!("vertex {} has parent {p}, which is not smaller", i + 1)));
            }
        }
        let n = parents.len() + 1;
        if let Some(&l) = labels.iter().find(|&&l| l >= n) {
            return Err(Error::Tree(format!("label points to vertex {l} of a {n}-vertex tree")));
        }
        Ok(LabelledTree { parents, labels })
    }

    pub fn single(marked: usize) -> Self {
        LabelledTree { parents: vec![], labels: vec![0; marked] }
    }

    /// From the 1-based parent vector `(j₂, …, j_N)` and 1-based labels.
    pub fn decode(parent_vector: &[usize], labels: &[usize]) -> Result<Self> {
        let mut parents = Vec::with_capacity(parent_vector.len());
        for (k, &j) in parent_vector.iter().enumerate() {
            let i = k + 2;
            if j < 1 || j >= i {
                return Err(Error::Tree(format!("entry j_{i} = {j} violates 1 ≤ j_i < i")));
            }
            parents.push(j - 1);
        }
        let mut ls = Vec::with_capacity(labels.len());
        for &l in labels {
            if l < 1 {
                return Err(Error::Tree("labels are 1-based".into()));
            }
            ls.push(l - 1);
        }
        LabelledTree::new(parents, ls)
    }

    pub fn encode(&self) -> (Vec<usize>, Vec<usize>) {
        (self.parents.iter().map(|p| p + 1).collect(), self.labels.iter().map(|l| l + 1).collect())
    }

    pub fn len(&self) -> usize {
        self.parents.len() + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn parent(&self, v: usize) -> Option<usize> {
        if v == 0 {
            None
        } else {
            self.parents.get(v - 1).copied()
        }
    }

    /// Edges as `(parent, child)`.
    pub fn edges(&self) -> Vec<(usize, usize)> {
        self.parents.iter().enumerate().map(|(i, &p)| (p, i + 1)).collect()
    }

    /// Both orientations of every edge, sorted.
    pub fn oriented_edges(&self) -> Vec<(usize, usize)> {
        let mut v: Vec<_> = self.edges().into_iter().flat_map(|(a, b)| [(a, b), (b, a)]).collect();
        v.sort();
        v
    }

    pub fn adjacent(&self, a: usize, b: usize) -> bool {
        self.parent(a) == Some(b) || self.parent(b) == Some(a)
    }

    pub fn neighbors(&self, a: usize) -> Vec<usize> {
        let mut v: Vec<usize> = self.parent(a).into_iter().collect();
        v.extend(self.parents.iter().enumerate().filter(|(_, &p)| p == a).map(|(i, _)| i + 1));
        v.sort();
        v
    }

    /// `T_{αβ}`: the vertices on β's side once the edge `αβ` is removed.
    pub fn subtree(&self, a: usize, b: usize) -> Result<Vec<usize>> {
        if a >= self.len() || b >= self.len() || !self.adjacent(a, b) {
            return Err(Error::Tree(format!("vertices {a} and {b} are not adjacent")));
        }
        let mut seen = BTreeSet::from([a, b]);
        let mut queue = VecDeque::from([b]);
        while let Some(v) = queue.pop_front() {
            for w in self.neighbors(v) {
                if seen.insert(w) {
                    queue.push_back(w);
                }
            }
        }
        seen.remove(&a);
        Ok(seen.into_iter().collect())
    }

    /// The neighbour of `a` on the path towards `b` (`a ≠ b`).
    pub fn toward(&self, a: usize, b: usize) -> Option<usize> {
        if a == b {
            return None;
        }
        self.neighbors(a).into_iter().find(|&w| self.subtree(a, w).map(|s| s.contains(&b)).unwrap_or(false))
    }

    pub fn is_connected(&self, set: &[usize]) -> bool {
        let set: BTreeSet<usize> = set.iter().copied().collect();
        let Some(&start) = set.iter().next() else { return false };
        let mut seen = BTreeSet::from([start]);
        let mut queue = VecDeque::from([start]);
        while let Some(v) = queue.pop_front() {
            for w in self.neighbors(v) {
                if set.contains(&w) && seen.insert(w) {
                    queue.push_back(w);
                }
            }
        }
        seen == set
    }
}

/// All surjective label-respecting homomorphisms `T → T'` whose fibres are subtrees,
/// as vertex maps. Built by contracting edge subsets and matching the quotient.
pub fn homomorphisms(t: &LabelledTree, t2: &LabelledTree) -> Result<Vec<Vec<usize>>> {
    if t.len() > MAX_HOM_VERTICES {
        return Err(Error::Tree(format!("homomorphism enumeration is limited to {MAX_HOM_VERTICES} vertices, got {}", t.len())));
    }
    if t.labels.len() != t2.labels.len() || t2.len() > t.len() {
        return Ok(vec![]);
    }
    let edges = t.edges();
    let mut out = BTreeSet::new();
    for mask in 0u32..(1 << edges.len()) {
        if (edges.len() - mask.count_ones() as usize) + 1 != t2.len() {
            continue;
        }
        // union-find over contracted edges
        let mut class: Vec<usize> = (0..t.len()).collect();
        fn root(c: &mut [usize], v: usize) -> usize {
            let mut r = v;
            while c[r] != r {
                r = c[r];
            }
            c[v] = r;
            r
        }
        for (k, &(a, b)) in edges.iter().enumerate() {
            if mask >> k & 1 == 1 {
                let (ra, rb) = (root(&mut class, a), root(&mut class, b));
                class[ra.max(rb)] = ra.min(rb);
            }
        }
        let roots: Vec<usize> = (0..t.len()).map(|v| root(&mut class, v)).collect();
        let ids: Vec<usize> = roots.iter().copied().collect::<BTreeSet<_>>().into_iter().collect();
        let q: Vec<usize> = roots.iter().map(|r| ids.binary_search(r).unwrap()).collect();
        let qedges: BTreeSet<(usize, usize)> = edges
            .iter()
            .enumerate()
            .filter(|(k, _)| mask >> k & 1 == 0)
            .map(|(_, &(a, b))| (q[a].min(q[b]), q[a].max(q[b])))
            .collect();
        let mut g: Vec<Option<usize>> = vec![None; ids.len()];
        let mut ok = true;
        for (i, &l) in t.labels.iter().enumerate() {
            let want = t2.labels[i];
            match g[q[l]] {
                None => g[q[l]] = Some(want),
                Some(x) if x != want => ok = false,
                _ => {}
            }
        }
        if !ok {
            continue;
        }
        let mut used = vec![false; t2.len()];
        for x in g.iter().flatten() {
            if used[*x] {
                ok = false;
            }
            used[*x] = true;
        }
        if !ok {
            continue;
        }
        let mut found = Vec::new();
        extend_iso(&qedges, t2, &mut g, &mut used, 0, &mut found);
        for g in found {
            out.insert(q.iter().map(|&c| g[c]).collect::<Vec<usize>>());
        }
    }
    Ok(out.into_iter().collect())
}

fn extend_iso(
    qedges: &BTreeSet<(usize, usize)>,
    t2: &LabelledTree,
    g: &mut Vec<Option<usize>>,
    used: &mut Vec<bool>,
    k: usize,
    found: &mut Vec<Vec<usize>>,
) {
    let consistent = |g: &[Option<usize>]| {
        qedges.iter().all(|&(a, b)| match (g[a], g[b]) {
            (Some(x), Some(y)) => t2.adjacent(x, y),
            _ => true,
        })
    };
    if k == g.len() {
        if consistent(g) {
            found.push(g.iter().map(|x| x.unwrap()).collect());
        }
        return;
    }
    if g[k].is_some() {
        if consistent(g) {
            extend_iso(qedges, t2, g, used, k + 1, found);
        }
        return;
    }
    for v in 0..t2.len() {
        if used[v] {
            continue;
        }
        g[k] = Some(v);
        used[v] = true;
        if consistent(g) {
            extend_iso(qedges, t2, g, used, k + 1, found);
        }
        g[k] = None;
        used[v] = false;
    }
}

/// Label-respecting tree isomorphisms.
pub fn isomorphisms(t: &LabelledTree, t2: &LabelledTree) -> Result<Vec<Vec<usize>>> {
    if t.len() != t2.len() {
        return Ok(vec![]);
    }
    homomorphisms(t, t2)
}

pub fn check_homomorphism(t: &LabelledTree, t2: &LabelledTree, f: &[usize]) -> Result<()> {
    if f.len() != t.len() || f.iter().any(|&v| v >= t2.len()) {
        return Err(Error::Tree("vertex map has the wrong shape".into()));
    }
    if t.labels.len() != t2.labels.len() || t.labels.iter().zip(&t2.labels).any(|(&a, &b)| f[a] != b) {
        return Err(Error::Tree("vertex map does not respect the labels".into()));
    }
    for v in 0..t2.len() {
        let fibre: Vec<usize> = (0..t.len()).filter(|&a| f[a] == v).collect();
        if !t.is_connected(&fibre) {
            return Err(Error::Tree(format!("fibre over vertex {v} is empty or disconnected")));
        }
    }
    for (a, b) in t.edges() {
        if f[a] != f[b] && !t2.adjacent(f[a], f[b]) {
            return Err(Error::Tree(format!("edge {a}-{b} maps to a non-edge")));
        }
    }
    Ok(())
}

/// A stable supercurve: one section (which carries its curve) per vertex, nodal points
/// for both orientations of each edge, and marked points on the labelled vertices.
#[derive(Clone, Debug)]
pub struct StableSupercurve {
    pub tree: LabelledTree,
    pub components: Vec<SuperSection>,
    pub nodal: BTreeMap<(usize, usize), SpherePoint>,
    pub marked: Vec<SpherePoint>,
}

impl StableSupercurve {
    pub fn new(
        tree: LabelledTree,
        components: Vec<SuperSection>,
        nodal: BTreeMap<(usize, usize), SpherePoint>,
        marked: Vec<SpherePoint>,
    ) -> Result<Self> {
        if components.len() != tree.len() {
            return Err(Error::Tree(format!("{} components for {} vertices", components.len(), tree.len())));
        }
        if marked.len() != tree.labels.len() {
            return Err(Error::Tree(format!("{} marked points for {} labels", marked.len(), tree.labels.len())));
        }
        let keys: Vec<_> = nodal.keys().copied().collect();
        if keys != tree.oriented_edges() {
            return Err(Error::Tree("nodal points must be given for both orientations of every edge".into()));
        }
        let target = components[0].curve().target();
        if components.iter().any(|c| c.curve().target() != target) {
            return Err(Error::Tree("components map into different targets".into()));
        }
        if nodal.values().chain(&marked).any(|p| !p.is_valid()) {
            return Err(Error::InvalidPoint("non-finite special point".into()));
        }
        Ok(StableSupercurve { tree, components, nodal, marked })
    }

    pub fn single(section: SuperSection, marked: Vec<SpherePoint>) -> Self {
        StableSupercurve { tree: LabelledTree::single(marked.len()), components: vec![section], nodal: BTreeMap::new(), marked }
    }

    pub fn curve(&self, a: usize) -> &GlobalCurve {
        self.components[a].curve()
    }

    pub fn target(&self) -> Target {
        self.curve(0).target()
    }

    /// `z_{αβ}` for any `α ≠ β`: the nodal point on α on the path towards β.
    pub fn z(&self, a: usize, b: usize) -> SpherePoint {
        let w = self.tree.toward(a, b).expect("distinct vertices of a tree");
        self.nodal[&(a, w)]
    }

    /// `z_{αi}`: the marked point itself on `α_i`, otherwise the nodal point towards it.
    pub fn z_marked(&self, a: usize, i: usize) -> SpherePoint {
        let ai = self.tree.labels[i];
        if ai == a {
            self.marked[i]
        } else {
            self.z(a, ai)
        }
    }

    pub fn nodal_points(&self, a: usize) -> Vec<SpherePoint> {
        self.tree.neighbors(a).into_iter().map(|b| self.nodal[&(a, b)]).collect()
    }

    /// `Y_α`: nodal points followed by the marked points on α.
    pub fn special_points(&self, a: usize) -> Vec<SpherePoint> {
        let mut v = self.nodal_points(a);
        v.extend(self.tree.labels.iter().zip(&self.marked).filter(|(&l, _)| l == a).map(|(_, &p)| p));
        v
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Violation {
    NodalMismatch { alpha: usize, beta: usize, distance: f64 },
    Coincident { alpha: usize, distance: f64 },
    Unstable { alpha: usize, special: usize },
    GhostSection { alpha: usize },
}

pub const NODAL_TOLERANCE: f64 = 1e-8;

/// Checks nodal matching, distinct special points and stability; empty when valid.
pub fn validate_stable(x: &StableSupercurve) -> Vec<Violation> {
    let mut out = Vec::new();
    for (a, b) in x.tree.edges() {
        let d = x.target().distance(&x.curve(a).point(&x.nodal[&(a, b)]), &x.curve(b).point(&x.nodal[&(b, a)]));
        if !(d <= NODAL_TOLERANCE) {
            out.push(Violation::NodalMismatch { alpha: a, beta: b, distance: d });
        }
    }
    for a in 0..x.tree.len() {
        let y = x.special_points(a);
        let mut min = f64::INFINITY;
        for i in 0..y.len() {
            for j in i + 1..y.len() {
                min = min.min(y[i].chordal_distance(&y[j]));
            }
        }
        if min <= 1e-12 {
            out.push(Violation::Coincident { alpha: a, distance: min });
        }
        if x.curve(a).is_constant() {
            if y.len() < 3 {
                out.push(Violation::Unstable { alpha: a, special: y.len() });
            }
            if !x.components[a].is_zero() {
                out.push(Violation::GhostSection { alpha: a });
            }
        }
    }
    out
}

#[derive(Clone, Debug, Serialize)]
pub struct EdgeMass {
    pub alpha: usize,
    pub beta: usize,
    pub phi: f64,
    pub psi: f64,
}

/// Component energies and the subtree masses `m_{αβ}`.
#[derive(Clone, Debug, Serialize)]
pub struct Masses {
    pub phi: Vec<f64>,
    pub psi: Vec<f64>,
    pub edges: Vec<EdgeMass>,
    pub total_phi: f64,
    pub total_psi: f64,
}

impl Masses {
    pub fn edge(&self, a: usize, b: usize) -> (f64, f64) {
        self.edges.iter().find(|e| e.alpha == a && e.beta == b).map(|e| (e.phi, e.psi)).unwrap_or((0.0, 0.0))
    }
}

pub fn component_masses(x: &StableSupercurve, rel_tol: f64) -> Result<Masses> {
    let mut phi = Vec::with_capacity(x.tree.len());
    let mut psi = Vec::with_capacity(x.tree.len());
    for s in &x.components {
        phi.push(energy_curve(s.curve(), &Region::Sphere, rel_tol)?.value);
        psi.push(energy_section(s, &Region::Sphere, rel_tol)?.value);
    }
    let mut edges = Vec::new();
    for (a, b) in x.tree.oriented_edges() {
        let sub = x.tree.subtree(a, b)?;
        edges.push(EdgeMass { alpha: a, beta: b, phi: sub.iter().map(|&g| phi[g]).sum(), psi: sub.iter().map(|&g| psi[g]).sum() });
    }
    let (total_phi, total_psi) = (phi.iter().sum(), psi.iter().sum());
    Ok(Masses { phi, psi, edges, total_phi, total_psi })
}

/// `E_α(U) = E(φ_α, U) + Σ_{β: αEβ, z_{αβ} ∈ U} m_{αβ}` for curve and section.
pub fn restricted_energy(x: &StableSupercurve, masses: &Masses, a: usize, region: &Region, rel_tol: f64) -> Result<(f64, f64)> {
    let s = &x.components[a];
    let mut e_phi = energy_curve(s.curve(), region, rel_tol)?.value;
    let mut e_psi = energy_section(s, region, rel_tol)?.value;
    for b in x.tree.neighbors(a) {
        if region.contains(&x.nodal[&(a, b)]) {
            let (mp, ms) = masses.edge(a, b);
            e_phi += mp;
            e_psi += ms;
        }
    }
    Ok((e_phi, e_psi))
}

/// Restriction to a connected vertex set. Boundary nodal points become marked points
/// appended after the surviving original ones. Returns the curve and new ↦ old vertices.
pub fn restriction(x: &StableSupercurve, set: &[usize]) -> Result<(StableSupercurve, Vec<usize>)> {
    if set.iter().any(|&v| v >= x.tree.len()) || !x.tree.is_connected(set) {
        return Err(Error::Tree("restriction needs a nonempty connected vertex set".into()));
    }
    let keep: BTreeSet<usize> = set.iter().copied().collect();
    // Breadth-first order from the smallest kept vertex gives a valid parent vector.
    let start = *keep.iter().next().unwrap();
    let mut order = vec![start];
    let mut k = 0;
    while k < order.len() {
        for w in x.tree.neighbors(order[k]) {
            if keep.contains(&w) && !order.contains(&w) {
                order.push(w);
            }
        }
        k += 1;
    }
    let new_of = |v: usize| order.iter().position(|&o| o == v).unwrap();
    let parents: Vec<usize> = order[1..]
        .iter()
        .map(|&v| x.tree.neighbors(v).into_iter().filter(|w| keep.contains(w)).map(new_of).min().unwrap())
        .collect();
    let mut labels = Vec::new();
    let mut marked = Vec::new();
    for (i, &l) in x.tree.labels.iter().enumerate() {
        if keep.contains(&l) {
            labels.push(new_of(l));
            marked.push(x.marked[i]);
        }
    }
    for &v in &order {
        for w in x.tree.neighbors(v) {
            if !keep.contains(&w) {
                labels.push(new_of(v));
                marked.push(x.nodal[&(v, w)]);
            }
        }
    }
    let tree = LabelledTree::new(parents, labels)?;
    let mut nodal = BTreeMap::new();
    for (&(a, b), &z) in &x.nodal {
        if keep.contains(&a) && keep.contains(&b) {
            nodal.insert((new_of(a), new_of(b)), z);
        }
    }
    let components = order.iter().map(|&v| x.components[v].clone()).collect();
    Ok((StableSupercurve::new(tree, components, nodal, marked)?, order))
}

/// A homomorphism `f` together with one Möbius map per source vertex.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Witness {
    pub f: Vec<usize>,
    pub maps: Vec<Moebius>,
}

fn in_ball(center: &SpherePoint, eps: f64, p: &SpherePoint) -> bool {
    match p.coord(center.chart) {
        Some(w) => (w - center.z).norm() < eps,
        None => false,
    }
}

/// Pointwise distance between fibre vectors of `ψ` at `z` and of `ψ'` at `z`, after
/// parallel transport along the minimal geodesic; `None` beyond the injectivity radius.
fn section_gap(a: &SuperSection, b: &SuperSection, z: &SpherePoint, sign: f64) -> Option<f64> {
    let w = (0.5 * a.bundle().fiber_weight(z)).sqrt();
    let (u1, h1) = a.horizontal(z);
    let (u2, h2) = b.horizontal(z);
    let target = a.curve().target();
    let moved: Vec<C> = match target {
        Target::Flat(_) => h2,
        Target::Projective(_) => {
            let c: C = u1.iter().zip(&u2).map(|(x, y)| x.conj() * y).sum();
            let cos = c.norm().min(1.0);
            if cos.acos() >= target.injectivity_radius() {
                return None;
            }
            let phase = if c.norm() > 0.0 { c.conj() / c.norm() } else { C::new(1.0, 0.0) };
            let u2: Vec<C> = u2.iter().map(|x| x * phase).collect();
            let h2: Vec<C> = h2.iter().map(|x| x * phase).collect();
            let sin = (1.0 - cos * cos).max(0.0).sqrt();
            if sin < 1e-12 {
                h2
            } else {
                let e: Vec<C> = u2.iter().zip(&u1).map(|(x, y)| (x - y * cos) / sin).collect();
                let t2: Vec<C> = u1.iter().zip(&e).map(|(x, y)| -x * sin + y * cos).collect();
                let coef: C = t2.iter().zip(&h2).map(|(x, y)| x.conj() * y).sum();
                h2.iter().zip(&t2).zip(&e).map(|((h, t), e)| h - t * coef + e * coef).collect()
            }
        }
    };
    Some(w * h1.iter().zip(&moved).map(|(x, y)| (x - y * sign).norm_sqr()).sum::<f64>().sqrt())
}

/// Largest value over the grid points outside the balls; with `refine`, points in the
/// top decile are re-sampled at nearby jittered points. A lower bound on the true sup.
fn sphere_sup(grid: &[SpherePoint], balls: &[SpherePoint], eps: f64, refine: bool, f: &dyn Fn(&SpherePoint) -> f64) -> f64 {
    let keep = |p: &SpherePoint| !balls.iter().any(|c| in_ball(c, eps, p));
    let mut vals: Vec<(f64, SpherePoint)> = grid.iter().filter(|p| keep(p)).map(|p| (f(p), *p)).collect();
    let mut best = vals.iter().map(|v| v.0).fold(0.0, f64::max);
    if best.is_infinite() || !refine || vals.is_empty() {
        return best;
    }
    vals.sort_by(|a, b| b.0.total_cmp(&a.0));
    let spacing = (4.0 * std::f64::consts::PI / grid.len() as f64).sqrt();
    for (_, p) in vals.iter().take(vals.len().div_ceil(10)) {
        let v = p.to_unit_vector();
        for k in 0..6 {
            let t = std::f64::consts::PI * k as f64 / 3.0;
            // a tangent frame at v
            let a = if v[2].abs() < 0.9 { [0.0, 0.0, 1.0] } else { [1.0, 0.0, 0.0] };
            let e1 = normalize(cross(v, a));
            let e2 = cross(v, e1);
            let s = 0.5 * spacing;
            let q = SpherePoint::from_unit_vector([
                v[0] + s * (t.cos() * e1[0] + t.sin() * e2[0]),
                v[1] + s * (t.cos() * e1[1] + t.sin() * e2[1]),
                v[2] + s * (t.cos() * e1[2] + t.sin() * e2[2]),
            ]);
            if keep(&q) {
                best = best.max(f(&q));
            }
        }
    }
    best
}

fn cross(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]]
}

fn normalize(a: [f64; 3]) -> [f64; 3] {
    let n = (a[0] * a[0] + a[1] * a[1] + a[2] * a[2]).sqrt();
    [a[0] / n, a[1] / n, a[2] / n]
}

/// Map and section sup distances of `φ'_{f(α)} ∘ m` against `φ_α` off `B_ε(Z_α)`.
fn component_gap(x: &StableSupercurve, x2: &StableSupercurve, a: usize, fa: usize, m: &Moebius, eps: f64, grid: &[SpherePoint], refine: bool) -> (f64, f64) {
    let s1 = &x.components[a];
    let s2 = x2.components[fa].pullback(m);
    let target = x.target();
    let balls = if eps > 0.0 { x.nodal_points(a) } else { vec![] };
    let map = sphere_sup(grid, &balls, eps, refine, &|p| target.distance(&s1.curve().point(p), &s2.curve().point(p)));
    let section = if s1.is_zero() && s2.is_zero() {
        0.0
    } else {
        let odd = s1.bundle().degree() % 2 != 0;
        let signs: &[f64] = if odd { &[1.0, -1.0] } else { &[1.0] };
        signs
            .iter()
            .map(|&sg| sphere_sup(grid, &balls, eps, refine, &|p| section_gap(s1, &s2, p, sg).unwrap_or(f64::INFINITY)))
            .fold(f64::INFINITY, f64::min)
    };
    (map, section)
}

/// Point terms of ρ that involve only `m_α`: nodal references towards vertices with a
/// different image, and all marked-point references.
fn point_gap(x: &StableSupercurve, x2: &StableSupercurve, f: &[usize], a: usize, m: &Moebius) -> f64 {
    let inv = m.inverse();
    let mut worst: f64 = 0.0;
    for b in 0..x.tree.len() {
        if f[b] != f[a] {
            worst = worst.max(inv.apply(&x2.z(f[a], f[b])).chordal_distance(&x.z(a, b)));
        }
    }
    for i in 0..x.marked.len() {
        worst = worst.max(inv.apply(&x2.z_marked(f[a], i)).chordal_distance(&x.z_marked(a, i)));
    }
    worst
}

/// The seven suprema of `ρ_ε(x, x'; f, {m_α})`.
#[derive(Clone, Debug, Serialize)]
pub struct RhoBreakdown {
    pub eps: f64,
    /// energy (φ), energy (ψ), map, section, collapsed edges, nodal, marked
    pub terms: [f64; 7],
    pub total: f64,
    pub witness: Witness,
}

pub const TERM_NAMES: [&str; 7] = ["energy-phi", "energy-psi", "map", "section", "rescaling", "nodal", "marked"];

#[derive(Clone, Debug)]
pub struct RhoOptions {
    pub grid: usize,
    pub search_grid: usize,
    pub rel_tol: f64,
    pub search_tol: f64,
    pub max_evals: usize,
}

impl Default for RhoOptions {
    fn default() -> Self {
        RhoOptions { grid: 10_000, search_grid: 300, rel_tol: 1e-10, search_tol: 1e-4, max_evals: 1500 }
    }
}

fn image_region(region: Region, m: &Moebius) -> Result<Region> {
    if *m == Moebius::identity() {
        Ok(region)
    } else {
        region.image(m)
    }
}

/// Energy terms over every oriented edge, collapsed or not.
fn energy_terms(x: &StableSupercurve, x2: &StableSupercurve, w: &Witness, eps: f64, rel_tol: f64) -> Result<(f64, f64)> {
    let m1 = component_masses(x, rel_tol)?;
    let m2 = component_masses(x2, rel_tol)?;
    let (mut t1, mut t2) = (0.0f64, 0.0f64);
    for (a, b) in x.tree.oriented_edges() {
        let u = Region::disc(x.nodal[&(a, b)], eps);
        let (e1, s1) = restricted_energy(x, &m1, a, &u, rel_tol)?;
        let (e2, s2) = restricted_energy(x2, &m2, w.f[a], &image_region(u, &w.maps[a])?, rel_tol)?;
        t1 = t1.max((e1 - e2).abs());
        t2 = t2.max((s1 - s2).abs());
    }
    Ok((t1, t2))
}

/// `sup d(m_β⁻¹ ∘ m_α, z_{βα})` off `B_ε(z_{αβ})` over pairs with `f(α) = f(β)`.
fn rescaling_term(x: &StableSupercurve, w: &Witness, eps: f64, grid: &[SpherePoint], adjacent_only: bool, refine: bool) -> f64 {
    let mut worst: f64 = 0.0;
    for a in 0..x.tree.len() {
        for b in 0..x.tree.len() {
            if a == b || w.f[a] != w.f[b] || (adjacent_only && !x.tree.adjacent(a, b)) {
                continue;
            }
            let g = w.maps[b].inverse().compose(&w.maps[a]);
            let zba = x.z(b, a);
            worst = worst.max(sphere_sup(grid, &[x.z(a, b)], eps, refine, &|p| g.apply(p).chordal_distance(&zba)));
        }
    }
    worst
}

/// `d(m_β⁻¹(z'_{f(β)f(α)}), z_{βα})` over pairs with `f(α) ≠ f(β)`.
fn nodal_term(x: &StableSupercurve, x2: &StableSupercurve, w: &Witness, adjacent_only: bool) -> f64 {
    let mut worst: f64 = 0.0;
    for a in 0..x.tree.len() {
        for b in 0..x.tree.len() {
            if w.f[a] == w.f[b] || (adjacent_only && !x.tree.adjacent(a, b)) {
                continue;
            }
            let p = w.maps[b].inverse().apply(&x2.z(w.f[b], w.f[a]));
            worst = worst.max(p.chordal_distance(&x.z(b, a)));
        }
    }
    worst
}

/// `d(m_α⁻¹(z'_{f(α)i}), z_{αi})`, over all α or only `α = α_i`.
fn marked_term(x: &StableSupercurve, x2: &StableSupercurve, w: &Witness, all: bool) -> f64 {
    let mut worst: f64 = 0.0;
    for i in 0..x.marked.len() {
        for a in 0..x.tree.len() {
            if !all && a != x.tree.labels[i] {
                continue;
            }
            let p = w.maps[a].inverse().apply(&x2.z_marked(w.f[a], i));
            worst = worst.max(p.chordal_distance(&x.z_marked(a, i)));
        }
    }
    worst
}

fn check_witness(x: &StableSupercurve, x2: &StableSupercurve, w: &Witness) -> Result<()> {
    check_homomorphism(&x.tree, &x2.tree, &w.f)?;
    if w.maps.len() != x.tree.len() {
        return Err(Error::Tree("one Möbius map per vertex is required".into()));
    }
    Ok(())
}

pub fn rho_eval(x: &StableSupercurve, x2: &StableSupercurve, w: &Witness, eps: f64, opts: &RhoOptions) -> Result<RhoBreakdown> {
    if !(eps > 0.0) {
        return Err(Error::Invalid("ε must be positive".into()));
    }
    check_witness(x, x2, w)?;
    let grid = fibonacci_points(opts.grid);
    let (e_phi, e_psi) = energy_terms(x, x2, w, eps, opts.rel_tol)?;
    let (mut map, mut section) = (0.0f64, 0.0f64);
    for a in 0..x.tree.len() {
        let (m, s) = component_gap(x, x2, a, w.f[a], &w.maps[a], eps, &grid, true);
        map = map.max(m);
        section = section.max(s);
    }
    let terms = [
        e_phi,
        e_psi,
        map,
        section,
        rescaling_term(x, w, eps, &grid, false, true),
        nodal_term(x, x2, w, false),
        marked_term(x, x2, w, true),
    ];
    Ok(RhoBreakdown { eps, terms, total: terms.iter().sum(), witness: w.clone() })
}

/// Sample points on α where φ_α is immersed, away from special points and spread out.
fn graph_samples(x: &StableSupercurve, a: usize) -> Vec<SpherePoint> {
    let curve = x.curve(a);
    let special = x.special_points(a);
    let cands: Vec<SpherePoint> = fibonacci_points(60)
        .into_iter()
        .filter(|p| special.iter().all(|s| s.chordal_distance(p) > 0.3) && curve.energy_density(p) > 1e-3)
        .collect();
    let mut out: Vec<SpherePoint> = Vec::new();
    while out.len() < 3 {
        let next = cands
            .iter()
            .filter(|p| !out.contains(p))
            .max_by(|p, q| {
                let dp = out.iter().map(|o| o.chordal_distance(p)).fold(f64::INFINITY, f64::min);
                let dq = out.iter().map(|o| o.chordal_distance(q)).fold(f64::INFINITY, f64::min);
                dp.total_cmp(&dq)
            })
            .copied();
        match next {
            Some(p) => out.push(p),
            None => break,
        }
    }
    out
}

/// Approximate preimages of the target point `y` under `curve`, nearest first.
fn preimages(curve: &GlobalCurve, y: &[C]) -> Vec<SpherePoint> {
    let comps = curve.components();
    let target = curve.target();
    let istar = (0..y.len()).max_by(|&i, &j| y[i].norm().total_cmp(&y[j].norm())).unwrap();
    let mut r = crate::poly::Poly::zero();
    for (j, pj) in comps.iter().enumerate() {
        if j == istar {
            continue;
        }
        // fixed generic weights
        let c = C::new(1.0 + 0.37 * j as f64, 0.61 * j as f64 - 0.2);
        r = r.add(&pj.scale(y[istar] * c).sub(&comps[istar].scale(y[j] * c)));
    }
    let mut pts: Vec<SpherePoint> = r.roots().into_iter().map(SpherePoint::finite).collect();
    pts.push(SpherePoint::infinity());
    let mut scored: Vec<(f64, SpherePoint)> = pts.into_iter().map(|p| (target.distance(&curve.point(&p), y), p)).collect();
    scored.sort_by(|a, b| a.0.total_cmp(&b.0));
    let best = scored.first().map(|s| s.0).unwrap_or(0.0);
    scored.into_iter().filter(|s| s.0 <= best + 0.1).take(6).map(|s| s.1).collect()
}

/// Where the special point of α pointing to β (or marked point `i`) should land on `f(α)`.
fn correspondences(x: &StableSupercurve, x2: &StableSupercurve, f: &[usize], a: usize) -> Vec<(SpherePoint, SpherePoint)> {
    let fa = f[a];
    let mut out = Vec::new();
    for b in x.tree.neighbors(a) {
        let sub = x.tree.subtree(a, b).unwrap();
        let dirs: BTreeSet<usize> = sub.iter().filter(|&&g| f[g] != fa).map(|&g| x2.tree.toward(fa, f[g]).unwrap()).collect();
        let to = if dirs.len() == 1 {
            Some(x2.nodal[&(fa, *dirs.iter().next().unwrap())])
        } else if dirs.is_empty() {
            (0..x.marked.len()).find(|&i| sub.contains(&x.tree.labels[i])).map(|i| x2.z_marked(fa, i))
        } else {
            None
        };
        if let Some(to) = to {
            out.push((x.nodal[&(a, b)], to));
        }
    }
    for i in 0..x.marked.len() {
        if x.tree.labels[i] == a {
            out.push((x.marked[i], x2.z_marked(fa, i)));
        }
    }
    out
}

fn seeds(x: &StableSupercurve, x2: &StableSupercurve, f: &[usize], a: usize) -> Vec<Moebius> {
    let mut out = vec![Moebius::identity()];
    let pairs = correspondences(x, x2, f, a);
    let distinct = |v: &[SpherePoint]| (0..v.len()).all(|i| (i + 1..v.len()).all(|j| v[i].chordal_distance(&v[j]) > 1e-9));
    if pairs.len() >= 3 {
        for i in 0..pairs.len() {
            for j in i + 1..pairs.len() {
                for k in j + 1..pairs.len() {
                    let from = [pairs[i].0, pairs[j].0, pairs[k].0];
                    let to = [pairs[i].1, pairs[j].1, pairs[k].1];
                    if distinct(&from) && distinct(&to) {
                        if let Ok(m) = Moebius::from_three_points(from, to) {
                            out.push(m);
                        }
                    }
                }
            }
        }
    }
    if pairs.len() == 2 && distinct(&[pairs[0].0, pairs[1].0]) && distinct(&[pairs[0].1, pairs[1].1]) {
        // maps sending each pair to {0, ∞}, joined by scalings
        let normalize = |p: SpherePoint, q: SpherePoint| {
            let third = [C::new(1.0, 0.0), C::new(-1.0, 0.0), C::new(0.0, 1.0)]
                .into_iter()
                .map(SpherePoint::finite)
                .find(|t| t.chordal_distance(&p) > 1e-3 && t.chordal_distance(&q) > 1e-3)
                .unwrap();
            Moebius::from_three_points([p, q, third], [SpherePoint::origin(), SpherePoint::infinity(), SpherePoint::finite(C::new(1.0, 0.0))])
        };
        if let (Ok(s), Ok(t)) = (normalize(pairs[0].0, pairs[1].0), normalize(pairs[0].1, pairs[1].1)) {
            for r in [1.0, 3.0, 10.0, 30.0, 100.0, 1.0 / 3.0, 0.1, 1.0 / 30.0, 0.01] {
                for k in 0..8 {
                    if let Ok(l) = Moebius::scaling(C::from_polar(r, std::f64::consts::FRAC_PI_4 * k as f64)) {
                        out.push(t.inverse().compose(&l).compose(&s));
                    }
                }
            }
        }
    }
    if pairs.len() == 1 {
        out.push(Moebius::centering(&pairs[0].1).compose(&Moebius::centering(&pairs[0].0).inverse()));
    }
    let c1 = x.curve(a);
    let c2 = x2.curve(f[a]);
    if !c1.is_constant() && !c2.is_constant() {
        let zs = graph_samples(x, a);
        if zs.len() == 3 {
            let pre: Vec<Vec<SpherePoint>> = zs.iter().map(|z| preimages(c2, &c1.point(z))).collect();
            for p in &pre[0] {
                for q in &pre[1] {
                    for r in &pre[2] {
                        if distinct(&[*p, *q, *r]) {
                            if let Ok(m) = Moebius::from_three_points([zs[0], zs[1], zs[2]], [*p, *q, *r]) {
                                out.push(m);
                            }
                        }
                    }
                }
            }
        }
    }
    out
}

/// `m₀ ∘ (I + X)` with traceless `X` given by six reals, renormalized to `det = 1`.
fn perturb(m0: &Moebius, x: &[f64]) -> Option<Moebius> {
    let a = C::new(1.0 + x[0], x[1]);
    let b = C::new(x[2], x[3]);
    let c = C::new(x[4], x[5]);
    let d = C::new(1.0 - x[0], -x[1]);
    let det = a * d - b * c;
    if det.norm() < 1e-8 {
        return None;
    }
    let s = det.sqrt();
    Some(m0.compose(&Moebius { a: a / s, b: b / s, c: c / s, d: d / s }))
}

/// Cost used by the per-vertex search: sup distances plus the point terms of `m_α`.
fn vertex_cost(x: &StableSupercurve, x2: &StableSupercurve, f: &[usize], a: usize, m: &Moebius, eps: f64, grid: &[SpherePoint]) -> f64 {
    let (map, section) = component_gap(x, x2, a, f[a], m, eps, grid, false);
    let v = map + section.min(10.0) + point_gap(x, x2, f, a, m);
    if v.is_finite() { v } else { f64::MAX }
}

fn search_vertex(x: &StableSupercurve, x2: &StableSupercurve, f: &[usize], a: usize, eps: f64, grid: &[SpherePoint], opts: &RhoOptions) -> Moebius {
    let mut scored: Vec<(f64, Moebius)> = seeds(x, x2, f, a).into_iter().map(|m| (vertex_cost(x, x2, f, a, &m, eps, grid), m)).collect();
    scored.sort_by(|p, q| p.0.total_cmp(&q.0));
    scored.dedup_by(|p, q| (p.0 - q.0).abs() < 1e-14);
    let nm = NelderMead { max_evals: opts.max_evals, f_tol: 1e-14, x_tol: 1e-12, initial_step: 0.05 };
    let mut best = scored[0];
    for (v0, m0) in scored.into_iter().take(3) {
        if v0 <= 1e-13 {
            break;
        }
        let cost = |p: &[f64]| match perturb(&m0, p) {
            Some(m) => vertex_cost(x, x2, f, a, &m, eps, grid),
            None => f64::MAX,
        };
        let r = nm.minimize(&cost, &[0.0; 6]);
        if r.value < best.0 {
            if let Some(m) = perturb(&m0, &r.x) {
                best = (r.value, m);
            }
        }
    }
    // Restarts from the optimum escape the stalls of the simplex on the nonsmooth sup.
    for _ in 0..8 {
        if best.0 <= 1e-13 {
            break;
        }
        let m0 = best.1;
        let cost = |p: &[f64]| match perturb(&m0, p) {
            Some(m) => vertex_cost(x, x2, f, a, &m, eps, grid),
            None => f64::MAX,
        };
        let r = nm.minimize(&cost, &[0.0; 6]);
        match perturb(&m0, &r.x) {
            Some(m) if r.value < best.0 - 1e-3 * opts.search_tol => best = (r.value, m),
            _ => break,
        }
    }
    best.1
}

/// Terms three to seven of `ρ_ε` on a coarse grid without refinement.
fn coarse_total(x: &StableSupercurve, x2: &StableSupercurve, w: &Witness, eps: f64, grid: &[SpherePoint]) -> f64 {
    let (mut map, mut section) = (0.0f64, 0.0f64);
    for a in 0..x.tree.len() {
        let (m, s) = component_gap(x, x2, a, w.f[a], &w.maps[a], eps, grid, false);
        map = map.max(m);
        section = section.max(s.min(10.0));
    }
    let v = map + section + rescaling_term(x, w, eps, grid, false, false) + nodal_term(x, x2, w, false) + marked_term(x, x2, w, true);
    if v.is_finite() { v } else { f64::MAX }
}

/// Joint descent over all maps when `f` collapses an edge, since the rescaling term
/// couples the maps of the collapsed vertices.
fn polish(x: &StableSupercurve, x2: &StableSupercurve, w: Witness, eps: f64, grid: &[SpherePoint], opts: &RhoOptions) -> Witness {
    let collapsed = x.tree.edges().iter().any(|&(a, b)| w.f[a] == w.f[b]);
    if !collapsed {
        return w;
    }
    let n = x.tree.len();
    let nm = NelderMead { max_evals: opts.max_evals * n, f_tol: 1e-14, x_tol: 1e-12, initial_step: 0.01 };
    let mut best = (coarse_total(x, x2, &w, eps, grid), w);
    for _ in 0..8 {
        let base = best.1.clone();
        let apply = |p: &[f64]| -> Option<Witness> {
            let maps = (0..n).map(|a| perturb(&base.maps[a], &p[6 * a..6 * a + 6])).collect::<Option<Vec<_>>>()?;
            Some(Witness { f: base.f.clone(), maps })
        };
        let cost = |p: &[f64]| apply(p).map_or(f64::MAX, |w| coarse_total(x, x2, &w, eps, grid));
        let r = nm.minimize(&cost, &vec![0.0; 6 * n]);
        match apply(&r.x) {
            Some(w) if r.value < best.0 - 1e-3 * opts.search_tol => best = (r.value, w),
            _ => break,
        }
    }
    best.1
}

/// Witness search for one homomorphism.
pub fn search_witness(x: &StableSupercurve, x2: &StableSupercurve, f: &[usize], eps: f64, opts: &RhoOptions) -> Witness {
    let grid = fibonacci_points(opts.search_grid);
    let maps = (0..x.tree.len()).map(|a| search_vertex(x, x2, f, a, eps, &grid, opts)).collect();
    polish(x, x2, Witness { f: f.to_vec(), maps }, eps, &grid, opts)
}

/// Upper bound on `ρ_ε(x, x')`; `None` means no admissible homomorphism (ρ = ∞).
pub fn rho_distance(x: &StableSupercurve, x2: &StableSupercurve, eps: f64, opts: &RhoOptions) -> Result<Option<RhoBreakdown>> {
    let fs = homomorphisms(&x.tree, &x2.tree)?;
    let results: Vec<Result<RhoBreakdown>> = fs
        .par_iter()
        .map(|f| {
            let w = search_witness(x, x2, f, eps, opts);
            rho_eval(x, x2, &w, eps, opts)
        })
        .collect();
    let mut best: Option<RhoBreakdown> = None;
    for r in results {
        let r = r?;
        // ties keep the lexicographically first f, which comes first in `fs`
        if best.as_ref().map_or(true, |b| r.total < b.total) {
            best = Some(r);
        }
    }
    Ok(best)
}

/// Residual of the equivalence relations for a candidate witness.
pub fn equivalence_residual(x: &StableSupercurve, x2: &StableSupercurve, w: &Witness, grid: usize) -> Result<f64> {
    check_witness(x, x2, w)?;
    let pts = fibonacci_points(grid);
    let mut worst: f64 = 0.0;
    for a in 0..x.tree.len() {
        let (m, s) = component_gap(x, x2, a, w.f[a], &w.maps[a], 0.0, &pts, true);
        worst = worst.max(m).max(s);
    }
    for (&(a, b), z) in &x.nodal {
        worst = worst.max(w.maps[a].apply(z).chordal_distance(&x2.nodal[&(w.f[a], w.f[b])]));
    }
    for (i, z) in x.marked.iter().enumerate() {
        worst = worst.max(w.maps[x.tree.labels[i]].apply(z).chordal_distance(&x2.marked[i]));
    }
    Ok(worst)
}

/// Searches tree isomorphisms and Möbius maps relating `x` to `x'` within `tol`.
pub fn equivalent(x: &StableSupercurve, x2: &StableSupercurve, tol: f64) -> Option<Witness> {
    let opts = RhoOptions::default();
    let isos = isomorphisms(&x.tree, &x2.tree).ok()?;
    for f in isos {
        let w = search_witness(x, x2, &f, 0.0, &opts);
        if let Ok(r) = equivalence_residual(x, x2, &w, 2000) {
            if r <= tol {
                return Some(w);
            }
        }
    }
    None
}

fn angular_radius(center: &SpherePoint, eps: f64) -> Result<([f64; 3], f64)> {
    let cap = Cap::from_disc(center, eps)?;
    Ok((cap.axis, cap.h.clamp(-1.0, 1.0).acos()))
}

/// Largest ε on the ladder `0.5 · 0.8^k` with `E(φ_α, B_ε(Z_α)) < ħ/2` on every sphere and
/// pairwise disjoint nodal balls.
pub fn auto_epsilon(x: &StableSupercurve, rel_tol: f64) -> Result<f64> {
    let half = 0.5 * hbar(rel_tol)?;
    let mut eps = 0.5;
    while eps > 1e-6 {
        let mut ok = true;
        'vertices: for a in 0..x.tree.len() {
            let z = x.nodal_points(a);
            let mut caps = Vec::new();
            for p in &z {
                caps.push(angular_radius(p, eps)?);
            }
            for i in 0..caps.len() {
                for j in i + 1..caps.len() {
                    let dot: f64 = (0..3).map(|k| caps[i].0[k] * caps[j].0[k]).sum();
                    if dot.clamp(-1.0, 1.0).acos() <= caps[i].1 + caps[j].1 {
                        ok = false;
                        break 'vertices;
                    }
                }
            }
            let e: f64 = z.iter().map(|p| energy_curve(x.curve(a), &Region::disc(*p, eps), rel_tol).map(|e| e.value)).sum::<Result<f64>>()?;
            if e >= half {
                ok = false;
                break;
            }
        }
        if ok {
            return Ok(eps);
        }
        eps *= 0.8;
    }
    Err(Error::Invalid("no admissible ε found".into()))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Axiom {
    Map,
    Energy,
    Rescaling,
    NodalPoints,
    MarkedPoints,
}

impl Axiom {
    pub const ALL: [Axiom; 5] = [Axiom::Map, Axiom::Energy, Axiom::Rescaling, Axiom::NodalPoints, Axiom::MarkedPoints];
}

#[derive(Clone, Debug, Serialize)]
pub struct AxiomLadder {
    pub axiom: Axiom,
    pub residuals: Vec<f64>,
    pub pass: bool,
}

#[derive(Clone, Debug, Serialize)]
pub struct ConvergenceReport {
    pub eps: f64,
    pub tol: f64,
    pub axioms: Vec<AxiomLadder>,
    pub witnesses: Vec<Option<Witness>>,
    pub pass: bool,
}

impl ConvergenceReport {
    pub fn ladder(&self, axiom: Axiom) -> &AxiomLadder {
        self.axioms.iter().find(|l| l.axiom == axiom).unwrap()
    }

    pub fn failing(&self) -> Vec<Axiom> {
        self.axioms.iter().filter(|l| !l.pass).map(|l| l.axiom).collect()
    }
}

/// Evaluates the five convergence axioms for `sequence → limit` at every member. Missing
/// witnesses are discovered with the `ρ_ε` search.
pub fn gromov_convergence_check(
    sequence: &[StableSupercurve],
    limit: &StableSupercurve,
    witnesses: Option<&[Witness]>,
    eps: f64,
    tol: f64,
    opts: &RhoOptions,
) -> Result<ConvergenceReport> {
    if let Some(w) = witnesses {
        if w.len() != sequence.len() {
            return Err(Error::Invalid(format!("{} witnesses for {} sequence members", w.len(), sequence.len())));
        }
    }
    if sequence.is_empty() {
        return Err(Error::Invalid("empty sequence".into()));
    }
    let grid = fibonacci_points(opts.grid);
    let mut rows: Vec<[f64; 5]> = Vec::new();
    let mut used = Vec::new();
    for (k, xn) in sequence.iter().enumerate() {
        let w = match witnesses {
            Some(ws) => Some(ws[k].clone()),
            None => rho_distance(limit, xn, eps, opts)?.map(|b| b.witness),
        };
        let Some(w) = w else {
            rows.push([f64::INFINITY; 5]);
            used.push(None);
            continue;
        };
        check_witness(limit, xn, &w)?;
        let mut map: f64 = 0.0;
        for a in 0..limit.tree.len() {
            let (m, s) = component_gap(limit, xn, a, w.f[a], &w.maps[a], eps, &grid, true);
            map = map.max(m).max(s);
        }
        let (e1, e2) = energy_terms(limit, xn, &w, eps, opts.rel_tol)?;
        rows.push([
            map,
            e1.max(e2),
            rescaling_term(limit, &w, eps, &grid, true, true),
            nodal_term(limit, xn, &w, true),
            marked_term(limit, xn, &w, false),
        ]);
        used.push(Some(w));
    }
    let axioms: Vec<AxiomLadder> = Axiom::ALL
        .iter()
        .enumerate()
        .map(|(k, &axiom)| {
            let residuals: Vec<f64> = rows.iter().map(|r| r[k]).collect();
            let pass = *residuals.last().unwrap() <= tol;
            AxiomLadder { axiom, residuals, pass }
        })
        .collect();
    let pass = axioms.iter().all(|l| l.pass);
    Ok(ConvergenceReport { eps, tol, axioms, witnesses: used, pass })
}

/// Pulls every component back by its own Möbius map, moving the special points along, so
/// the result is equivalent to `x` through the inverse maps.
pub fn reparametrize(x: &StableSupercurve, maps: &[Moebius]) -> Result<StableSupercurve> {
    if maps.len() != x.tree.len() {
        return Err(Error::Tree("one Möbius map per vertex is required".into()));
    }
    let components = x.components.iter().zip(maps).map(|(s, m)| s.pullback(m)).collect();
    let nodal = x.nodal.iter().map(|(&(a, b), z)| ((a, b), maps[a].inverse().apply(z))).collect();
    let marked = x.marked.iter().enumerate().map(|(i, z)| maps[x.tree.labels[i]].inverse().apply(z)).collect();
    StableSupercurve::new(x.tree.clone(), components, nodal, marked)
}

fn ghost(bundle: LineBundle) -> SuperSection {
    let curve = GlobalCurve::projective(vec![Poly::constant(C::new(1.0, 0.0)), Poly::zero()]).unwrap();
    SuperSection::zero(&curve, bundle)
}

fn two_vertex(a: SuperSection, b: SuperSection, z01: SpherePoint, z10: SpherePoint, labels: Vec<usize>, marked: Vec<SpherePoint>) -> Result<StableSupercurve> {
    let nodal = BTreeMap::from([((0, 1), z01), ((1, 0), z10)]);
    StableSupercurve::new(LabelledTree::new(vec![0], labels)?, vec![a, b], nodal, marked)
}

/// Limit of the bubbling family `z + ν⁻¹/z`: the identity with a degree-one bubble
/// attached at 0, one marked point at 1 on each sphere.
pub fn bubble_tree_limit(bundle: LineBundle) -> StableSupercurve {
    let id = crate::fields::identity_curve();
    let bub = GlobalCurve::projective(vec![Poly::monomial(1, C::new(1.0, 0.0)), Poly::constant(C::new(1.0, 0.0))]).unwrap();
    let one = SpherePoint::finite(C::new(1.0, 0.0));
    two_vertex(SuperSection::zero(&id, bundle), SuperSection::zero(&bub, bundle), SpherePoint::origin(), SpherePoint::infinity(), vec![0, 1], vec![one, one])
        .unwrap()
}

/// The family member `z + ν⁻¹/z` with marked points 1 and `1/ν`.
pub fn bubble_tree_member(bundle: LineBundle, nu: f64) -> Result<StableSupercurve> {
    let curve = crate::fields::bubble_curve(1.0 / nu)?;
    Ok(StableSupercurve::single(
        SuperSection::zero(&curve, bundle),
        vec![SpherePoint::finite(C::new(1.0, 0.0)), SpherePoint::finite(C::new(1.0 / nu, 0.0))],
    ))
}

/// Both spheres collapse; the bubble sphere is reached through `w ↦ w/ν`.
pub fn collapse_witness(nu: f64) -> Result<Witness> {
    Ok(Witness { f: vec![0, 0], maps: vec![Moebius::identity(), Moebius::scaling(C::new(1.0 / nu, 0.0))?] })
}

/// Two ghost spheres joined at `0 ~ ∞`, marks 1, −1 on the first and 0, 1 on the second:
/// the limit of two marked points colliding at 0.
pub fn ghost_tree_limit(bundle: LineBundle) -> StableSupercurve {
    let p = |x: f64| SpherePoint::finite(C::new(x, 0.0));
    two_vertex(ghost(bundle), ghost(bundle), p(0.0), SpherePoint::infinity(), vec![0, 0, 1, 1], vec![p(1.0), p(-1.0), p(0.0), p(1.0)]).unwrap()
}

/// One ghost sphere with marks 1, −1, 0, `1/ν`.
pub fn ghost_tree_member(bundle: LineBundle, nu: f64) -> StableSupercurve {
    let p = |x: f64| SpherePoint::finite(C::new(x, 0.0));
    StableSupercurve::single(ghost(bundle), vec![p(1.0), p(-1.0), p(0.0), p(1.0 / nu)])
}
