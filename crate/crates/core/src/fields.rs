//! Holomorphic curves into CPⁿ or Cⁿ, sections of `L_d ⊗ φ*T`, Moebius pullbacks,
//! local supercurves with pluggable `J̃`, `D̃`, and PDE residuals.

use crate::error::{Error, Result};
use crate::geometry::{Chart, LineBundle, Moebius, SpherePoint, C};
use crate::poly::Poly;
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand::SeedableRng;
use serde::{Deserialize, Serialize};
use std::sync::Arc;

const ZERO: C = C::new(0.0, 0.0);
const I: C = C::new(0.0, 1.0);

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "dim", rename_all = "lowercase")]
pub enum Target {
    Flat(usize),
    Projective(usize),
}

impl Target {
    /// Complex dimension.
    pub fn dim(&self) -> usize {
        match *self {
            Target::Flat(n) | Target::Projective(n) => n,
        }
    }

    /// Length of the coordinate vector used to represent a point.
    pub fn lift_len(&self) -> usize {
        match *self {
            Target::Flat(n) => n,
            Target::Projective(n) => n + 1,
        }
    }

    /// Riemannian distance; Fubini–Study normalized so that CP¹ has area π.
    pub fn distance(&self, a: &[C], b: &[C]) -> f64 {
        match self {
            Target::Flat(_) => a.iter().zip(b).map(|(x, y)| (x - y).norm_sqr()).sum::<f64>().sqrt(),
            Target::Projective(_) => {
                let inner: C = a.iter().zip(b).map(|(x, y)| x.conj() * y).sum();
                let wedge = wedge_norm_sqr(a, b).sqrt();
                wedge.atan2(inner.norm())
            }
        }
    }

    /// Distance beyond which geodesics stop being unique.
    pub fn injectivity_radius(&self) -> f64 {
        match self {
            Target::Flat(_) => f64::INFINITY,
            Target::Projective(_) => std::f64::consts::FRAC_PI_2,
        }
    }
}

/// `Σ_{i<j} |a_i b_j − a_j b_i|²`.
pub fn wedge_norm_sqr(a: &[C], b: &[C]) -> f64 {
    let mut s = 0.0;
    for i in 0..a.len() {
        for j in i + 1..a.len() {
            s += (a[i] * b[j] - a[j] * b[i]).norm_sqr();
        }
    }
    s
}

fn norm_sqr(v: &[C]) -> f64 {
    v.iter().map(|x| x.norm_sqr()).sum()
}

/// Index pairs `(i, j)`, `i < j`, in the order used for wedge components.
pub fn pairs(m: usize) -> Vec<(usize, usize)> {
    let mut v = Vec::new();
    for i in 0..m {
        for j in i + 1..m {
            v.push((i, j));
        }
    }
    v
}

/// FS norm² of the tangent vector `[V]` at `[P]`.
pub fn fs_tangent_norm_sqr(p: &[C], v: &[C]) -> f64 {
    let pp = norm_sqr(p);
    wedge_norm_sqr(v, p) / (pp * pp)
}

/// A holomorphic sphere `S² → X` given by polynomial components in chart 0
/// (homogeneous lift for CPⁿ).
#[derive(Clone, Debug, PartialEq)]
pub struct GlobalCurve {
    target: Target,
    degree: usize,
    c0: Vec<Poly>,
    c1: Vec<Poly>,
}

impl GlobalCurve {
    pub fn projective(comps: Vec<Poly>) -> Result<Self> {
        if comps.len() < 2 {
            return Err(Error::Invalid("a curve in CPⁿ needs at least two components".into()));
        }
        let degree = comps.iter().filter_map(|p| p.degree()).max().ok_or_else(|| Error::Invalid("all components vanish".into()))?;
        let c1 = comps.iter().map(|p| p.reversed(degree)).collect();
        let curve = GlobalCurve { target: Target::Projective(comps.len() - 1), degree, c0: comps, c1 };
        let sep = curve.separation();
        if !(sep >= 1e-10) {
            return Err(Error::Invalid(format!("components share a zero (separation {sep:e})")));
        }
        Ok(curve)
    }

    /// Constant map into Cⁿ; nonconstant entire maps from S² to Cⁿ do not exist.
    pub fn flat(value: Vec<C>) -> Result<Self> {
        if value.is_empty() {
            return Err(Error::Invalid("flat target needs positive dimension".into()));
        }
        let c0: Vec<Poly> = value.iter().map(|&v| Poly::constant(v)).collect();
        Ok(GlobalCurve { target: Target::Flat(value.len()), degree: 0, c1: c0.clone(), c0 })
    }

    /// Minimum over the candidate common zeros of `|P| / (‖P‖ (1+|z|²)^{k/2})`.
    pub fn separation(&self) -> f64 {
        let norm = self.c0.iter().map(|p| p.norm_sqr()).sum::<f64>().sqrt();
        if self.degree == 0 {
            return norm;
        }
        let k = self.degree;
        let lead: f64 = self.c0.iter().map(|p| p.coeff(k).norm_sqr()).sum::<f64>().sqrt();
        let mut best = lead / norm;
        let pick = self
            .c0
            .iter()
            .filter(|p| p.degree() == Some(k))
            .max_by(|a, b| a.coeff(k).norm().partial_cmp(&b.coeff(k).norm()).unwrap())
            .unwrap();
        for r in pick.roots() {
            let v: f64 = self.c0.iter().map(|p| p.eval(r).norm_sqr()).sum::<f64>().sqrt();
            best = best.min(v / (norm * (1.0 + r.norm_sqr()).powf(k as f64 / 2.0)));
        }
        best
    }

    pub fn target(&self) -> Target {
        self.target
    }

    pub fn degree(&self) -> usize {
        self.degree
    }

    pub fn components(&self) -> &[Poly] {
        &self.c0
    }

    pub fn chart_components(&self, chart: Chart) -> &[Poly] {
        match chart {
            Chart::Zero => &self.c0,
            Chart::One => &self.c1,
        }
    }

    pub fn is_constant(&self) -> bool {
        self.degree == 0
    }

    /// Lift value and its z-derivative in the chart of `p`.
    pub fn jet(&self, p: &SpherePoint) -> (Vec<C>, Vec<C>) {
        self.chart_components(p.chart).iter().map(|q| q.eval_d(p.z)).unzip()
    }

    pub fn lift_at(&self, p: &SpherePoint) -> Vec<C> {
        self.chart_components(p.chart).iter().map(|q| q.eval(p.z)).collect()
    }

    /// Unit-norm lift (projective) or the point itself (flat).
    pub fn point(&self, p: &SpherePoint) -> Vec<C> {
        let v = self.lift_at(p);
        match self.target {
            Target::Flat(_) => v,
            Target::Projective(_) => {
                let n = norm_sqr(&v).sqrt();
                v.into_iter().map(|x| x / n).collect()
            }
        }
    }

    /// `|φ'|²_g` with respect to the chart coordinate.
    pub fn chart_density(&self, p: &SpherePoint) -> f64 {
        if self.degree == 0 {
            return 0.0;
        }
        let (v, dv) = self.jet(p);
        fs_tangent_norm_sqr(&v, &dv)
    }

    /// Energy density `½|dφ|²` relative to the FS area form (chart-free).
    pub fn energy_density(&self, p: &SpherePoint) -> f64 {
        let s = 1.0 + p.z.norm_sqr();
        self.chart_density(p) * s * s
    }

    /// Points where energy may concentrate, with a length scale in the point's chart.
    ///
    /// A root `b` of one component carries the scale `max_k |P_k(b)| / |P_j'(b)|`: a pole-like
    /// bubble of that size sits at `b`. Only scales below `cutoff` are returned.
    pub fn concentration_hints(&self, cutoff: f64) -> Vec<(SpherePoint, f64)> {
        let mut out = Vec::new();
        if self.degree == 0 {
            return out;
        }
        for chart in [Chart::Zero, Chart::One] {
            let comps = self.chart_components(chart);
            for (j, pj) in comps.iter().enumerate() {
                let dp = pj.derivative();
                for b in pj.roots() {
                    let inside = match chart {
                        Chart::Zero => b.norm() <= 1.0,
                        Chart::One => b.norm() < 1.0,
                    };
                    if !inside {
                        continue;
                    }
                    let other = comps.iter().enumerate().filter(|(k, _)| *k != j).map(|(_, q)| q.eval(b).norm()).fold(0.0, f64::max);
                    let slope = dp.eval(b).norm();
                    let scale = if slope > 0.0 { (other / slope).max(1e-14) } else { 1e-14 };
                    if scale < cutoff {
                        out.push((SpherePoint { chart, z: b }, scale));
                    }
                }
            }
        }
        out
    }

    /// `φ ∘ m`, computed exactly.
    pub fn pullback(&self, m: &Moebius) -> GlobalCurve {
        if self.degree == 0 {
            return self.clone();
        }
        let comps: Vec<Poly> = self.c0.iter().map(|q| q.mobius_compose(self.degree, m.a, m.b, m.c, m.d)).collect();
        let c1 = comps.iter().map(|q| q.reversed(self.degree)).collect();
        GlobalCurve { target: self.target, degree: self.degree, c0: comps, c1 }
    }

    pub fn distance_at(&self, other: &GlobalCurve, p: &SpherePoint, q: &SpherePoint) -> f64 {
        self.target.distance(&self.point(p), &other.point(q))
    }
}

/// A section of `L_d ⊗ φ*TX`. For CPⁿ it is stored through the wedge `W = V ∧ P` of a
/// homogeneous representative `V`, which determines `[V] mod P` and is polynomial in
/// both charts.
#[derive(Clone, Debug, PartialEq)]
pub struct SuperSection {
    bundle: LineBundle,
    curve: GlobalCurve,
    wdeg: i64,
    w0: Vec<Poly>,
    w1: Vec<Poly>,
}

impl SuperSection {
    fn formal_degree(curve: &GlobalCurve, d: i32) -> i64 {
        match curve.target {
            Target::Flat(_) => d as i64,
            Target::Projective(_) => 2 * curve.degree as i64 + d as i64,
        }
    }

    pub fn zero(curve: &GlobalCurve, bundle: LineBundle) -> Self {
        let m = match curve.target {
            Target::Flat(n) => n,
            Target::Projective(n) => (n + 1) * n / 2,
        };
        SuperSection {
            bundle,
            curve: curve.clone(),
            wdeg: Self::formal_degree(curve, bundle.degree()),
            w0: vec![Poly::zero(); m],
            w1: vec![Poly::zero(); m],
        }
    }

    /// Builds the section represented by the polynomial vector `v`. Rejects
    /// representatives whose chart-1 transform has a pole.
    pub fn from_vector(curve: &GlobalCurve, bundle: LineBundle, v: Vec<Poly>) -> Result<Self> {
        if v.len() != curve.target.lift_len() {
            return Err(Error::Invalid(format!("section needs {} components, got {}", curve.target.lift_len(), v.len())));
        }
        let w0: Vec<Poly> = match curve.target {
            Target::Flat(_) => v,
            Target::Projective(_) => {
                let p = &curve.c0;
                pairs(p.len()).iter().map(|&(i, j)| v[i].mul(&p[j]).sub(&v[j].mul(&p[i]))).collect()
            }
        };
        Self::from_wedge(curve, bundle, w0)
    }

    /// Builds a section from chart-0 wedge components `W_ij` (`i < j`), or the vector
    /// itself for flat targets.
    pub fn from_wedge(curve: &GlobalCurve, bundle: LineBundle, w0: Vec<Poly>) -> Result<Self> {
        let m = match curve.target {
            Target::Flat(n) => n,
            Target::Projective(n) => (n + 1) * n / 2,
        };
        if w0.len() != m {
            return Err(Error::Invalid(format!("section needs {m} wedge components, got {}", w0.len())));
        }
        let wdeg = Self::formal_degree(curve, bundle.degree());
        let scale = w0.iter().map(|w| w.max_abs()).fold(0.0, f64::max);
        let all_zero = scale == 0.0;
        if curve.is_constant() && bundle.degree() < 0 && !all_zero {
            return Err(Error::Invalid("constant map with d < 0 carries only the zero section".into()));
        }
        if all_zero {
            return Ok(Self::zero(curve, bundle));
        }
        if wdeg < 0 {
            return Err(Error::Invalid("no nonzero sections in negative total degree".into()));
        }
        let wd = wdeg as usize;
        let mut w0c = Vec::with_capacity(w0.len());
        for w in w0 {
            for i in wd + 1..w.coeffs.len() {
                if w.coeffs[i].norm() > 1e-10 * scale.max(1.0) {
                    return Err(Error::Invalid(format!("section has a pole at infinity (coefficient of degree {i})")));
                }
            }
            let mut c = w.coeffs;
            c.truncate(wd + 1);
            w0c.push(Poly::new(c));
        }
        let w1 = w0c.iter().map(|w| w.reversed(wd)).collect();
        Ok(SuperSection { bundle, curve: curve.clone(), wdeg, w0: w0c, w1 })
    }

    pub fn bundle(&self) -> LineBundle {
        self.bundle
    }

    pub fn curve(&self) -> &GlobalCurve {
        &self.curve
    }

    pub fn is_zero(&self) -> bool {
        self.w0.iter().all(|w| w.is_zero())
    }

    pub fn wedge_components(&self, chart: Chart) -> &[Poly] {
        match chart {
            Chart::Zero => &self.w0,
            Chart::One => &self.w1,
        }
    }

    pub fn scale(&self, c: C) -> SuperSection {
        let mut s = self.clone();
        s.w0 = s.w0.iter().map(|w| w.scale(c)).collect();
        s.w1 = s.w1.iter().map(|w| w.scale(c)).collect();
        s
    }

    /// `(P, W)` evaluated in the chart of `p`.
    pub fn values(&self, p: &SpherePoint) -> (Vec<C>, Vec<C>) {
        let pv = self.curve.lift_at(p);
        let wv = self.wedge_components(p.chart).iter().map(|w| w.eval(p.z)).collect();
        (pv, wv)
    }

    /// `|ψ|²` in the bundle metric: `½ g(ψ_θ, ψ_θ) |θ|²_H`.
    pub fn norm_sqr(&self, p: &SpherePoint) -> f64 {
        let (pv, wv) = self.values(p);
        let g = match self.curve.target {
            Target::Flat(_) => norm_sqr(&wv),
            Target::Projective(_) => {
                let pp = norm_sqr(&pv);
                norm_sqr(&wv) / (pp * pp)
            }
        };
        0.5 * g * self.bundle.fiber_weight(p)
    }

    /// `½ |ψ|^{-4/d}` relative to the FS area form.
    pub fn energy_density(&self, p: &SpherePoint) -> f64 {
        let n = self.norm_sqr(p);
        let d = self.bundle.degree();
        let e = match d {
            -1 => n * n,
            -2 => n,
            _ => n.powf(-2.0 / d as f64),
        };
        0.5 * e
    }

    /// Unit lift of `φ(p)` and the horizontal tangent vector at it, without the fiber weight.
    pub fn horizontal(&self, p: &SpherePoint) -> (Vec<C>, Vec<C>) {
        let (pv, wv) = self.values(p);
        match self.curve.target {
            Target::Flat(_) => (pv, wv),
            Target::Projective(_) => {
                let m = pv.len();
                let pn = norm_sqr(&pv).sqrt();
                let mut h = vec![ZERO; m];
                for (k, &(i, j)) in pairs(m).iter().enumerate() {
                    h[i] += wv[k] * pv[j].conj();
                    h[j] -= wv[k] * pv[i].conj();
                }
                let s = pn * pn * pn;
                (pv.iter().map(|x| x / pn).collect(), h.into_iter().map(|x| x / s).collect())
            }
        }
    }

    /// `ψ ∘ m`: `(cz+d)^{2k+d} W(m z)`, exact.
    pub fn pullback(&self, m: &Moebius) -> SuperSection {
        let curve = self.curve.pullback(m);
        if self.is_zero() {
            return SuperSection::zero(&curve, self.bundle);
        }
        let wd = self.wdeg as usize;
        let w0: Vec<Poly> = self.w0.iter().map(|w| w.mobius_compose(wd, m.a, m.b, m.c, m.d)).collect();
        let w1 = w0.iter().map(|w| w.reversed(wd)).collect();
        SuperSection { bundle: self.bundle, curve, wdeg: self.wdeg, w0, w1 }
    }

    /// A polynomial vector `V` with `V ∧ P = W` (minimum-norm coefficients).
    pub fn vector_representative(&self) -> Vec<Poly> {
        let m = self.curve.target.lift_len();
        if self.is_zero() {
            return vec![Poly::zero(); m];
        }
        if let Target::Flat(_) = self.curve.target {
            return self.w0.clone();
        }
        let k = self.curve.degree as i64;
        let nv = (k + self.bundle.degree() as i64).max(k - 1).max(0) as usize;
        let p = &self.curve.c0;
        let pr = pairs(m);
        let wd = self.wdeg.max(0) as usize;
        let rows = pr.len() * (wd.max(nv + k as usize) + 1);
        let cols = m * (nv + 1);
        let mut a = DMatrix::<C>::zeros(rows, cols);
        let mut b = DVector::<C>::zeros(rows);
        let stride = wd.max(nv + k as usize) + 1;
        for (r, &(i, j)) in pr.iter().enumerate() {
            for e in 0..stride {
                let row = r * stride + e;
                b[row] = self.w0[r].coeff(e);
                for s in 0..=nv.min(e) {
                    a[(row, i * (nv + 1) + s)] += p[j].coeff(e - s);
                    a[(row, j * (nv + 1) + s)] -= p[i].coeff(e - s);
                }
            }
        }
        let svd = a.svd(true, true);
        let x = svd.solve(&b, 1e-12).unwrap_or_else(|_| DVector::zeros(cols));
        (0..m).map(|i| Poly::new((0..=nv).map(|s| x[i * (nv + 1) + s]).collect())).collect()
    }

    /// Affine point `φ/φ_j` and affine section value in target chart `j` at `p`, as full
    /// length vectors with entry `j` equal to 1 and 0.
    pub fn affine(&self, p: &SpherePoint, j: usize) -> (Vec<C>, Vec<C>) {
        let ([phi, _], [psi, _]) = self.affine_jet(p.chart, p.z, j);
        match self.curve.target {
            Target::Flat(_) => (phi, psi),
            Target::Projective(_) => {
                let mut a = phi;
                let mut b = psi;
                a.insert(j, C::new(1.0, 0.0));
                b.insert(j, ZERO);
                (a, b)
            }
        }
    }

    /// Affine data in target chart `j` at `z` (chart `chart`): `(φ_a, ψ_a)` and their z-derivatives.
    fn affine_jet(&self, chart: Chart, z: C, j: usize) -> ([Vec<C>; 2], [Vec<C>; 2]) {
        let pc = self.curve.chart_components(chart);
        let wc = self.wedge_components(chart);
        match self.curve.target {
            Target::Flat(_) => {
                let phi: Vec<C> = pc.iter().map(|q| q.eval(z)).collect();
                let (psi, dpsi): (Vec<C>, Vec<C>) = wc.iter().map(|q| q.eval_d(z)).unzip();
                ([phi.clone(), vec![ZERO; phi.len()]], [psi, dpsi])
            }
            Target::Projective(_) => {
                let m = pc.len();
                let (pj, dpj) = pc[j].eval_d(z);
                let pr = pairs(m);
                let mut phi = Vec::with_capacity(m - 1);
                let mut dphi = Vec::with_capacity(m - 1);
                let mut psi = Vec::with_capacity(m - 1);
                let mut dpsi = Vec::with_capacity(m - 1);
                for i in (0..m).filter(|&i| i != j) {
                    let (pi, dpi) = pc[i].eval_d(z);
                    phi.push(pi / pj);
                    dphi.push((dpi * pj - pi * dpj) / (pj * pj));
                    // W_ij with sign so that ψ_i = W_ij / P_j².
                    let (idx, sign) = if i < j {
                        (pr.iter().position(|&x| x == (i, j)).unwrap(), 1.0)
                    } else {
                        (pr.iter().position(|&x| x == (j, i)).unwrap(), -1.0)
                    };
                    let (w, dw) = wc[idx].eval_d(z);
                    let (w, dw) = (w * sign, dw * sign);
                    psi.push(w / (pj * pj));
                    dpsi.push((dw * pj - w * dpj * 2.0) / (pj * pj * pj));
                }
                ([phi, dphi], [psi, dpsi])
            }
        }
    }
}

/// Levi-Civita Christoffel term of the FS metric in an affine chart:
/// `Γ(u, v) = −(u ⟨w̄, v⟩ + v ⟨w̄, u⟩) / (1 + |w|²)`.
pub fn fs_christoffel(w: &[C], u: &[C], v: &[C]) -> Vec<C> {
    let s = 1.0 + norm_sqr(w);
    let wv: C = w.iter().zip(v).map(|(a, b)| a.conj() * b).sum();
    let wu: C = w.iter().zip(u).map(|(a, b)| a.conj() * b).sum();
    u.iter().zip(v).map(|(&ui, &vi)| -(ui * wv + vi * wu) / s).collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Connection {
    Trivial,
    LeviCivita,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum Diff {
    Central(f64),
    Exact,
}

/// Rectangular evaluation grid of `n × n` points.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    pub s0: f64,
    pub s1: f64,
    pub t0: f64,
    pub t1: f64,
    pub n: usize,
}

impl Grid {
    pub fn square(half: f64, n: usize) -> Self {
        Grid { s0: -half, s1: half, t0: -half, t1: half, n }
    }

    pub fn points(&self) -> Vec<(f64, f64)> {
        let n = self.n.max(1);
        let step = |a: f64, b: f64, i: usize| if n == 1 { 0.5 * (a + b) } else { a + (b - a) * i as f64 / (n - 1) as f64 };
        let mut v = Vec::with_capacity(n * n);
        for i in 0..n {
            for j in 0..n {
                v.push((step(self.s0, self.s1, i), step(self.t0, self.t1, j)));
            }
        }
        v
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Residual {
    pub phi: f64,
    pub psi: f64,
}

fn cnorm(v: &[C]) -> f64 {
    norm_sqr(v).sqrt()
}

/// Sup over both charts of `|∂_sφ + J∂_tφ|` and `|∂_sψ + J∂_tψ + D̃ψ|` in affine target charts.
pub fn residual_global(curve: &GlobalCurve, section: &SuperSection, conn: Connection, grid: &Grid, diff: Diff) -> Result<Residual> {
    if section.curve != *curve {
        return Err(Error::Invalid("section is not over the given curve".into()));
    }
    if let (Target::Projective(_), Connection::Trivial) = (curve.target, conn) {
        return Err(Error::Unsupported("the trivial connection is not defined globally on CPⁿ".into()));
    }
    let lc = matches!(curve.target, Target::Projective(_)) && conn == Connection::LeviCivita;
    let mut out = Residual { phi: 0.0, psi: 0.0 };
    for chart in [Chart::Zero, Chart::One] {
        for (s, t) in grid.points() {
            let z = C::new(s, t);
            let j = match curve.target {
                Target::Flat(_) => 0,
                Target::Projective(_) => {
                    let v = curve.lift_at(&SpherePoint { chart, z });
                    (0..v.len()).max_by(|&a, &b| v[a].norm().partial_cmp(&v[b].norm()).unwrap()).unwrap()
                }
            };
            let (phi_s, phi_t, psi_s, psi_t, phi0, psi0) = match diff {
                Diff::Exact => {
                    let ([phi, dphi], [psi, dpsi]) = section.affine_jet(chart, z, j);
                    let dphi_t: Vec<C> = dphi.iter().map(|x| x * I).collect();
                    let dpsi_t: Vec<C> = dpsi.iter().map(|x| x * I).collect();
                    (dphi, dphi_t, dpsi, dpsi_t, phi, psi)
                }
                Diff::Central(h) => {
                    let at = |dz: C| section.affine_jet(chart, z + dz, j);
                    let (sp, sm, tp, tm) = (at(C::new(h, 0.0)), at(C::new(-h, 0.0)), at(C::new(0.0, h)), at(C::new(0.0, -h)));
                    let cd = |a: &Vec<C>, b: &Vec<C>| -> Vec<C> { a.iter().zip(b).map(|(x, y)| (x - y) / (2.0 * h)).collect() };
                    let ([phi, _], [psi, _]) = at(ZERO);
                    (cd(&sp.0[0], &sm.0[0]), cd(&tp.0[0], &tm.0[0]), cd(&sp.1[0], &sm.1[0]), cd(&tp.1[0], &tm.1[0]), phi, psi)
                }
            };
            let rphi: Vec<C> = phi_s.iter().zip(&phi_t).map(|(a, b)| a + I * b).collect();
            let mut rpsi: Vec<C> = psi_s.iter().zip(&psi_t).map(|(a, b)| a + I * b).collect();
            if lc {
                let g1 = fs_christoffel(&phi0, &phi_s, &psi0);
                let g2 = fs_christoffel(&phi0, &phi_t, &psi0);
                for k in 0..rpsi.len() {
                    rpsi[k] += g1[k] + I * g2[k];
                }
            }
            let (a, b) = (cnorm(&rphi), cnorm(&rpsi));
            if !(a.is_finite() && b.is_finite()) {
                return Err(Error::NonFinite("residual evaluation".into()));
            }
            out.phi = out.phi.max(a);
            out.psi = out.psi.max(b);
        }
    }
    Ok(out)
}

/// Catalog of exact holomorphic supercurves.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum CatalogKind {
    Identity,
    Power { k: usize },
    Bubble { eps: f64 },
    RandomRational { degree: usize, seed: u64 },
}

fn c(re: f64, im: f64) -> C {
    C::new(re, im)
}

pub fn identity_curve() -> GlobalCurve {
    GlobalCurve::projective(vec![Poly::constant(c(1.0, 0.0)), Poly::monomial(1, c(1.0, 0.0))]).unwrap()
}

/// `φ(z) = z^k` on CP¹.
pub fn power_curve(k: usize) -> Result<GlobalCurve> {
    GlobalCurve::projective(vec![Poly::constant(c(1.0, 0.0)), Poly::monomial(k, c(1.0, 0.0))])
}

/// `φ(z) = z + ε/z`, homogeneous lift `(z, z² + ε)`.
pub fn bubble_curve(eps: f64) -> Result<GlobalCurve> {
    if eps == 0.0 || !eps.is_finite() {
        return Err(Error::Invalid("bubble parameter must be finite and nonzero".into()));
    }
    GlobalCurve::projective(vec![Poly::monomial(1, c(1.0, 0.0)), Poly::new(vec![c(eps, 0.0), c(0.0, 0.0), c(1.0, 0.0)])])
}

pub fn gaussian(rng: &mut ChaCha8Rng) -> C {
    let u: f64 = rng.gen_range(1e-12..1.0);
    let v: f64 = rng.gen_range(0.0..1.0);
    let r = (-2.0 * u.ln()).sqrt() / std::f64::consts::SQRT_2;
    C::from_polar(r, 2.0 * std::f64::consts::PI * v)
}

pub fn random_poly(rng: &mut ChaCha8Rng, degree: usize, scale: f64) -> Poly {
    Poly::new((0..=degree).map(|_| gaussian(rng) * scale).collect())
}

/// Random rational curve of exact degree `degree` into CPⁿ.
pub fn random_curve(rng: &mut ChaCha8Rng, n: usize, degree: usize) -> GlobalCurve {
    loop {
        let comps: Vec<Poly> = (0..=n).map(|_| random_poly(rng, degree, 1.0)).collect();
        if let Ok(g) = GlobalCurve::projective(comps) {
            if g.degree() == degree && g.separation() > 1e-3 {
                return g;
            }
        }
    }
}

/// Random section of `L_d ⊗ φ*T`. For `d = −2` the `∂φ` direction is included.
pub fn random_section(rng: &mut ChaCha8Rng, curve: &GlobalCurve, bundle: LineBundle, scale: f64) -> SuperSection {
    let k = curve.degree() as i64;
    let d = bundle.degree() as i64;
    let m = curve.target().lift_len();
    if k + d < -1 || (k + d < 0 && d != -2) || curve.is_constant() && d < 0 {
        return SuperSection::zero(curve, bundle);
    }
    let mut v: Vec<Poly> = if k + d >= 0 {
        (0..m).map(|_| random_poly(rng, (k + d) as usize, scale)).collect()
    } else {
        vec![Poly::zero(); m]
    };
    if d == -2 {
        let a = gaussian(rng) * scale;
        for (vi, pi) in v.iter_mut().zip(curve.components()) {
            *vi = vi.add(&pi.derivative().scale(a));
        }
    }
    SuperSection::from_vector(curve, bundle, v).unwrap_or_else(|_| SuperSection::zero(curve, bundle))
}

/// Builds a catalog instance with the zero section (or a random one for `RandomRational`).
pub fn make_instance(kind: CatalogKind, d: i32) -> Result<(GlobalCurve, SuperSection)> {
    let bundle = LineBundle::new(d)?;
    let curve = match kind {
        CatalogKind::Identity => identity_curve(),
        CatalogKind::Power { k } => power_curve(k)?,
        CatalogKind::Bubble { eps } => bubble_curve(eps)?,
        CatalogKind::RandomRational { degree, seed } => {
            if degree == 0 {
                return Err(Error::Invalid("random rational curves need degree ≥ 1".into()));
            }
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let curve = random_curve(&mut rng, 1, degree);
            let sec = random_section(&mut rng, &curve, bundle, 1.0);
            return Ok((curve, sec));
        }
    };
    let sec = SuperSection::zero(&curve, bundle);
    Ok((curve, sec))
}

pub type VecField = Arc<dyn Fn(f64, f64) -> DVector<f64> + Send + Sync>;
pub type MatField = Arc<dyn Fn(f64, f64) -> DMatrix<f64> + Send + Sync>;
pub type JetField = Arc<dyn Fn(f64, f64) -> (DVector<f64>, DVector<f64>) + Send + Sync>;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum PlanarDomain {
    Rect { s0: f64, s1: f64, t0: f64, t1: f64 },
    Disc { cs: f64, ct: f64, r: f64 },
}

impl PlanarDomain {
    /// Whether the closed `margin`-neighbourhood of `(s, t)` lies inside.
    pub fn contains_with_margin(&self, s: f64, t: f64, margin: f64) -> bool {
        match *self {
            PlanarDomain::Rect { s0, s1, t0, t1 } => s - margin > s0 && s + margin < s1 && t - margin > t0 && t + margin < t1,
            PlanarDomain::Disc { cs, ct, r } => ((s - cs).powi(2) + (t - ct).powi(2)).sqrt() + margin < r,
        }
    }

    /// Whether the closed disc of radius `rad` about `(s, t)` lies inside.
    pub fn contains_disc(&self, s: f64, t: f64, rad: f64) -> bool {
        match *self {
            PlanarDomain::Rect { .. } => self.contains_with_margin(s, t, rad),
            PlanarDomain::Disc { cs, ct, r } => ((s - cs).powi(2) + (t - ct).powi(2)).sqrt() + rad <= r,
        }
    }
}

/// Complex vector to `ℝ^{2n}`, interleaving real and imaginary parts.
pub fn to_real(v: &[C]) -> DVector<f64> {
    DVector::from_iterator(2 * v.len(), v.iter().flat_map(|x| [x.re, x.im]))
}

pub fn from_real(v: &DVector<f64>) -> Vec<C> {
    (0..v.len() / 2).map(|i| C::new(v[2 * i], v[2 * i + 1])).collect()
}

/// The standard complex structure on `ℝ^{2n}` in the interleaved layout.
pub fn j0(dim: usize) -> DMatrix<f64> {
    let mut j = DMatrix::zeros(dim, dim);
    for k in 0..dim / 2 {
        j[(2 * k, 2 * k + 1)] = -1.0;
        j[(2 * k + 1, 2 * k)] = 1.0;
    }
    j
}

/// Real matrix of the ℂ-linear map `v ↦ a v`.
pub fn complex_to_real(a: &DMatrix<C>) -> DMatrix<f64> {
    let (r, cc) = a.shape();
    let mut m = DMatrix::zeros(2 * r, 2 * cc);
    for i in 0..r {
        for j in 0..cc {
            let z = a[(i, j)];
            m[(2 * i, 2 * j)] = z.re;
            m[(2 * i, 2 * j + 1)] = -z.im;
            m[(2 * i + 1, 2 * j)] = z.im;
            m[(2 * i + 1, 2 * j + 1)] = z.re;
        }
    }
    m
}

/// Local supercurve `(φ, ψ)` on a planar domain with `J̃ = J∘φ` and `D̃ = D(φ)·∂_sφ`.
#[derive(Clone)]
pub struct LocalPair {
    pub domain: PlanarDomain,
    pub dim: usize,
    pub phi: VecField,
    pub psi: VecField,
    pub j: MatField,
    pub d: MatField,
    pub phi_jet: Option<JetField>,
    pub psi_jet: Option<JetField>,
}

impl std::fmt::Debug for LocalPair {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("LocalPair").field("domain", &self.domain).field("dim", &self.dim).finish_non_exhaustive()
    }
}

/// Central-difference partials of a vector field.
pub fn central_partials(f: &(dyn Fn(f64, f64) -> DVector<f64> + Send + Sync), s: f64, t: f64, h: f64) -> (DVector<f64>, DVector<f64>) {
    ((f(s + h, t) - f(s - h, t)) / (2.0 * h), (f(s, t + h) - f(s, t - h)) / (2.0 * h))
}

pub fn central_partials_mat(f: &(dyn Fn(f64, f64) -> DMatrix<f64> + Send + Sync), s: f64, t: f64, h: f64) -> (DMatrix<f64>, DMatrix<f64>) {
    ((f(s + h, t) - f(s - h, t)) / (2.0 * h), (f(s, t + h) - f(s, t - h)) / (2.0 * h))
}

impl LocalPair {
    pub fn new(domain: PlanarDomain, dim: usize, phi: VecField, psi: VecField, j: MatField, d: MatField) -> Self {
        LocalPair { domain, dim, phi, psi, j, d, phi_jet: None, psi_jet: None }
    }

    /// Assembles `J̃`, `D̃` from target fields `J(x)` and `D(x)·v`; `∂_sφ` by central
    /// differences of step `h`.
    pub fn from_target_fields(
        domain: PlanarDomain,
        dim: usize,
        phi: VecField,
        psi: VecField,
        jx: Arc<dyn Fn(&DVector<f64>) -> DMatrix<f64> + Send + Sync>,
        dx: Arc<dyn Fn(&DVector<f64>, &DVector<f64>) -> DMatrix<f64> + Send + Sync>,
        h: f64,
    ) -> Self {
        let p1 = phi.clone();
        let j: MatField = Arc::new(move |s, t| jx(&p1(s, t)));
        let p2 = phi.clone();
        let d: MatField = Arc::new(move |s, t| {
            let ds = (p2(s + h, t) - p2(s - h, t)) / (2.0 * h);
            dx(&p2(s, t), &ds)
        });
        LocalPair::new(domain, dim, phi, psi, j, d)
    }

    /// Flat model: `J ≡ J₀`, `D ≡ 0`, complex polynomial `φ`, `ψ` with exact jets.
    pub fn flat_polynomial(domain: PlanarDomain, phi: Vec<Poly>, psi: Vec<Poly>) -> Self {
        let dim = 2 * phi.len();
        let holo = |p: Vec<Poly>| -> (VecField, JetField) {
            let p = Arc::new(p);
            let q = p.clone();
            let f: VecField = Arc::new(move |s, t| to_real(&p.iter().map(|x| x.eval(C::new(s, t))).collect::<Vec<_>>()));
            let g: JetField = Arc::new(move |s, t| {
                let dz: Vec<C> = q.iter().map(|x| x.eval_d(C::new(s, t)).1).collect();
                (to_real(&dz), to_real(&dz.iter().map(|x| x * I).collect::<Vec<_>>()))
            });
            (f, g)
        };
        let (phi, phi_jet) = holo(phi);
        let (psi, psi_jet) = holo(psi);
        let jm = j0(dim);
        LocalPair {
            domain,
            dim,
            phi,
            psi,
            j: Arc::new(move |_, _| jm.clone()),
            d: Arc::new(move |_, _| DMatrix::zeros(dim, dim)),
            phi_jet: Some(phi_jet),
            psi_jet: Some(psi_jet),
        }
    }

    pub fn dphi(&self, s: f64, t: f64, h: f64) -> (DVector<f64>, DVector<f64>) {
        match &self.phi_jet {
            Some(f) => f(s, t),
            None => central_partials(&*self.phi, s, t, h),
        }
    }

    pub fn dpsi(&self, s: f64, t: f64, h: f64) -> (DVector<f64>, DVector<f64>) {
        match &self.psi_jet {
            Some(f) => f(s, t),
            None => central_partials(&*self.psi, s, t, h),
        }
    }

    /// Max of `‖J̃² + 1‖` over the grid.
    pub fn structure_defect(&self, grid: &Grid) -> f64 {
        let id = DMatrix::<f64>::identity(self.dim, self.dim);
        grid.points().iter().map(|&(s, t)| {
            let j = (self.j)(s, t);
            (&j * &j + &id).norm()
        }).fold(0.0, f64::max)
    }

    /// Replaces `ψ` (and its jet) by `c ψ`.
    pub fn scale_psi(&self, c: f64) -> LocalPair {
        let mut lp = self.clone();
        let psi = self.psi.clone();
        lp.psi = Arc::new(move |s, t| psi(s, t) * c);
        if let Some(jet) = self.psi_jet.clone() {
            lp.psi_jet = Some(Arc::new(move |s, t| {
                let (a, b) = jet(s, t);
                (a * c, b * c)
            }));
        }
        lp
    }
}

/// Sup over the grid of the two local residual norms. Derivatives by central differences
/// of step `h` unless the pair carries exact jets.
pub fn residual_local(lp: &LocalPair, grid: &Grid, h: f64) -> Result<Residual> {
    if !(h > 0.0) {
        return Err(Error::Invalid("finite-difference step must be positive".into()));
    }
    let pts = grid.points();
    for &(s, t) in &pts {
        if !lp.domain.contains_with_margin(s, t, 2.0 * h) {
            return Err(Error::Invalid(format!("grid point ({s}, {t}) closer than 2h to the domain boundary")));
        }
    }
    let mut out = Residual { phi: 0.0, psi: 0.0 };
    for (s, t) in pts {
        let j = (lp.j)(s, t);
        let d = (lp.d)(s, t);
        let (ps, pt) = lp.dphi(s, t, h);
        let (qs, qt) = lp.dpsi(s, t, h);
        let psi = (lp.psi)(s, t);
        let a = (&ps + &j * &pt).norm();
        let b = (&qs + &j * &qt + &d * &psi).norm();
        if !(a.is_finite() && b.is_finite()) {
            return Err(Error::NonFinite(format!("field evaluation at ({s}, {t})")));
        }
        out.phi = out.phi.max(a);
        out.psi = out.psi.max(b);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bubble_curve_has_degree_two() {
        let g = bubble_curve(0.01).unwrap();
        assert_eq!(g.degree(), 2);
        assert!(g.separation() > 1e-3);
        assert!(bubble_curve(0.0).is_err());
    }

    #[test]
    fn common_zero_rejected() {
        let z = Poly::monomial(1, c(1.0, 0.0));
        assert!(GlobalCurve::projective(vec![z.clone(), z.mul(&z)]).is_err());
    }

    #[test]
    fn ghost_rule() {
        let g = GlobalCurve::projective(vec![Poly::constant(c(1.0, 0.0)), Poly::constant(c(2.0, 0.0))]).unwrap();
        let b = LineBundle::new(-1).unwrap();
        assert!(SuperSection::from_vector(&g, b, vec![Poly::constant(c(1.0, 0.0)), Poly::zero()]).is_err());
        assert!(SuperSection::from_vector(&g, b, vec![Poly::zero(), Poly::zero()]).unwrap().is_zero());
    }

    #[test]
    fn derivative_section_for_d_minus_two() {
        let g = power_curve(3).unwrap();
        let b = LineBundle::new(-2).unwrap();
        let v: Vec<Poly> = g.components().iter().map(|p| p.derivative()).collect();
        let s = SuperSection::from_vector(&g, b, v).unwrap();
        assert!(!s.is_zero());
        // V = P' has a pole at ∞ as a vector but not modulo P.
        let far = SpherePoint::infinity();
        assert!(s.norm_sqr(&far).is_finite());
        let bad = SuperSection::from_vector(&g, b, vec![Poly::zero(), Poly::monomial(5, c(1.0, 0.0))]);
        assert!(bad.is_err());
    }

    #[test]
    fn vector_representative_reproduces_section() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let g = random_curve(&mut rng, 2, 2);
        let b = LineBundle::new(-2).unwrap();
        let s = random_section(&mut rng, &g, b, 1.0);
        let v = s.vector_representative();
        let s2 = SuperSection::from_vector(&g, b, v).unwrap();
        for z in [c(0.1, 0.2), c(-0.7, 0.3)] {
            let p = SpherePoint::finite(z);
            assert!((s.norm_sqr(&p) - s2.norm_sqr(&p)).abs() < 1e-10 * (1.0 + s.norm_sqr(&p)));
        }
    }

    #[test]
    fn trivial_connection_refused_on_projective() {
        let (g, s) = make_instance(CatalogKind::Identity, -1).unwrap();
        assert!(residual_global(&g, &s, Connection::Trivial, &Grid::square(0.9, 3), Diff::Exact).is_err());
    }

    #[test]
    fn projective_distance_range() {
        let t = Target::Projective(1);
        let a = [c(1.0, 0.0), c(0.0, 0.0)];
        let b = [c(0.0, 0.0), c(0.0, 2.0)];
        assert!((t.distance(&a, &b) - std::f64::consts::FRAC_PI_2).abs() < 1e-15);
        assert_eq!(t.distance(&a, &a), 0.0);
    }
}
