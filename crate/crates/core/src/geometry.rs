//! Two-chart Riemann sphere, the Moebius group as SL(2,C), line bundles `L_d`
//! and the induced Hermitian metrics.

use crate::error::{Error, Result};
use nalgebra::DMatrix;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

pub type C = Complex64;

const ONE: C = C::new(1.0, 0.0);
const ZERO: C = C::new(0.0, 0.0);

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Chart {
    Zero,
    One,
}

impl Chart {
    pub fn index(self) -> usize {
        match self {
            Chart::Zero => 0,
            Chart::One => 1,
        }
    }

    pub fn other(self) -> Chart {
        match self {
            Chart::Zero => Chart::One,
            Chart::One => Chart::Zero,
        }
    }
}

/// A point of S² in chart 0 (`z`) or chart 1 (`w = 1/z`).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpherePoint {
    pub chart: Chart,
    pub z: C,
}

impl SpherePoint {
    pub fn new(chart: Chart, z: C) -> Result<Self> {
        if !z.is_finite() {
            return Err(Error::InvalidPoint(format!("non-finite coordinate {z}")));
        }
        Ok(SpherePoint { chart, z })
    }

    /// Chart-0 point, put in canonical form.
    pub fn finite(z: C) -> Self {
        SpherePoint { chart: Chart::Zero, z }.canonical()
    }

    pub fn origin() -> Self {
        SpherePoint { chart: Chart::Zero, z: ZERO }
    }

    pub fn infinity() -> Self {
        SpherePoint { chart: Chart::One, z: ZERO }
    }

    pub fn is_valid(&self) -> bool {
        self.z.is_finite()
    }

    /// Homogeneous coordinates `[X : Y]` with `z = X/Y`.
    pub fn homogeneous(&self) -> (C, C) {
        match self.chart {
            Chart::Zero => (self.z, ONE),
            Chart::One => (ONE, self.z),
        }
    }

    pub fn from_homogeneous(x: C, y: C) -> Result<Self> {
        if !(x.is_finite() && y.is_finite()) || (x.norm() == 0.0 && y.norm() == 0.0) {
            return Err(Error::InvalidPoint("degenerate homogeneous coordinates".into()));
        }
        if x.norm() <= y.norm() {
            Ok(SpherePoint { chart: Chart::Zero, z: x / y })
        } else {
            Ok(SpherePoint { chart: Chart::One, z: y / x })
        }
    }

    /// Coordinate in the requested chart, `None` when the point is that chart's pole.
    pub fn coord(&self, chart: Chart) -> Option<C> {
        if chart == self.chart {
            Some(self.z)
        } else if self.z.norm() == 0.0 {
            None
        } else {
            Some(ONE / self.z)
        }
    }

    /// Chart 0 when |z| ≤ 1 (in chart-0 terms), chart 1 otherwise.
    pub fn canonical(&self) -> Self {
        let n = self.z.norm();
        match self.chart {
            Chart::Zero if n > 1.0 => SpherePoint { chart: Chart::One, z: ONE / self.z },
            Chart::One if n >= 1.0 => SpherePoint { chart: Chart::Zero, z: ONE / self.z },
            _ => *self,
        }
    }

    /// Keeps the current chart unless the coordinate leaves the disc of radius 1.1.
    pub fn stabilized(&self) -> Self {
        if self.z.norm() > 1.1 {
            self.canonical()
        } else {
            *self
        }
    }

    pub fn is_infinity(&self) -> bool {
        self.chart == Chart::One && self.z.norm() == 0.0
    }

    /// Stereographic image on the unit sphere; 0 goes to the south pole.
    pub fn to_unit_vector(&self) -> [f64; 3] {
        let (x, y) = self.homogeneous();
        let n = x.norm_sqr() + y.norm_sqr();
        let p = x * y.conj();
        [2.0 * p.re / n, 2.0 * p.im / n, (x.norm_sqr() - y.norm_sqr()) / n]
    }

    pub fn from_unit_vector(v: [f64; 3]) -> Self {
        let r = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
        let (a, b, c) = (v[0] / r, v[1] / r, v[2] / r);
        if c <= 0.0 {
            SpherePoint { chart: Chart::Zero, z: C::new(a, b) / (1.0 - c) }
        } else {
            SpherePoint { chart: Chart::One, z: C::new(a, -b) / (1.0 + c) }
        }
    }

    /// Euclidean distance of the stereographic images on the unit sphere.
    pub fn chordal_distance(&self, o: &SpherePoint) -> f64 {
        let (x1, y1) = self.homogeneous();
        let (x2, y2) = o.homogeneous();
        let num = (x1 * y2 - y1 * x2).norm();
        2.0 * num / ((x1.norm_sqr() + y1.norm_sqr()).sqrt() * (x2.norm_sqr() + y2.norm_sqr()).sqrt())
    }
}

/// Fubini–Study area density `(1+|z|²)^{-2}` in either chart; total area π.
pub fn sphere_density(z: C) -> f64 {
    let s = 1.0 + z.norm_sqr();
    1.0 / (s * s)
}

/// A Moebius transformation `z ↦ (az+b)/(cz+d)` with `ad − bc = 1`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Moebius {
    pub a: C,
    pub b: C,
    pub c: C,
    pub d: C,
}

impl Moebius {
    /// Normalizes an invertible matrix to determinant one (principal square root).
    pub fn new(a: C, b: C, c: C, d: C) -> Result<Self> {
        let det = a * d - b * c;
        let scale = a.norm().max(b.norm()).max(c.norm()).max(d.norm());
        if !det.is_finite() || det.norm() <= 1e-300 || det.norm() < 1e-24 * scale * scale {
            return Err(Error::SingularMoebius(det.norm()));
        }
        let s = det.sqrt();
        Ok(Moebius { a: a / s, b: b / s, c: c / s, d: d / s })
    }

    pub fn identity() -> Self {
        Moebius { a: ONE, b: ZERO, c: ZERO, d: ONE }
    }

    /// Unitary element `[[a, b], [−b̄, ā]]` after normalizing `|a|² + |b|² = 1`.
    pub fn rotation(a: C, b: C) -> Result<Self> {
        let n = (a.norm_sqr() + b.norm_sqr()).sqrt();
        if n == 0.0 || !n.is_finite() {
            return Err(Error::SingularMoebius(0.0));
        }
        let (a, b) = (a / n, b / n);
        Ok(Moebius { a, b, c: -b.conj(), d: a.conj() })
    }

    /// `z ↦ e^{iθ} z`.
    pub fn rotation_angle(theta: f64) -> Self {
        Moebius { a: C::from_polar(1.0, theta / 2.0), b: ZERO, c: ZERO, d: C::from_polar(1.0, -theta / 2.0) }
    }

    /// `z ↦ α z`.
    pub fn scaling(alpha: C) -> Result<Self> {
        if alpha.norm() == 0.0 || !alpha.is_finite() {
            return Err(Error::SingularMoebius(0.0));
        }
        let s = alpha.sqrt();
        Ok(Moebius { a: s, b: ZERO, c: ZERO, d: ONE / s })
    }

    /// `z ↦ z + b`.
    pub fn translation(b: C) -> Self {
        Moebius { a: ONE, b, c: ZERO, d: ONE }
    }

    /// The rotation taking 0 to `p`.
    pub fn centering(p: &SpherePoint) -> Self {
        let (x, y) = p.homogeneous();
        let n = (x.norm_sqr() + y.norm_sqr()).sqrt();
        let (x, y) = (x / n, y / n);
        Moebius { a: y.conj(), b: x, c: -x.conj(), d: y }
    }

    /// The map sending `from[i]` to `to[i]` for three distinct points each.
    pub fn from_three_points(from: [SpherePoint; 3], to: [SpherePoint; 3]) -> Result<Self> {
        let s = Self::to_standard(from)?;
        let t = Self::to_standard(to)?;
        Ok(t.inverse().compose(&s))
    }

    /// Sends the three points to 0, 1, ∞.
    fn to_standard(p: [SpherePoint; 3]) -> Result<Self> {
        let h: Vec<(C, C)> = p.iter().map(|q| q.homogeneous()).collect();
        let det = |u: (C, C), v: (C, C)| u.0 * v.1 - u.1 * v.0;
        let k1 = det(h[1], h[2]);
        let k3 = det(h[1], h[0]);
        Moebius::new(h[0].1 * k1, -h[0].0 * k1, h[2].1 * k3, -h[2].0 * k3)
    }

    /// Matrix product `self · other`, i.e. the map `self ∘ other`.
    pub fn compose(&self, o: &Moebius) -> Moebius {
        let m = Moebius {
            a: self.a * o.a + self.b * o.c,
            b: self.a * o.b + self.b * o.d,
            c: self.c * o.a + self.d * o.c,
            d: self.c * o.b + self.d * o.d,
        };
        // Renormalize only to absorb rounding; the sign of the product is kept.
        let det = m.det();
        let s = det.sqrt();
        if (s - ONE).norm() < 1e-6 {
            Moebius { a: m.a / s, b: m.b / s, c: m.c / s, d: m.d / s }
        } else {
            m
        }
    }

    pub fn inverse(&self) -> Moebius {
        Moebius { a: self.d, b: -self.b, c: -self.c, d: self.a }
    }

    pub fn negate(&self) -> Moebius {
        Moebius { a: -self.a, b: -self.b, c: -self.c, d: -self.d }
    }

    pub fn det(&self) -> C {
        self.a * self.d - self.b * self.c
    }

    pub fn is_valid(&self) -> bool {
        (self.det() - ONE).norm() <= 1e-12 * (1.0 + self.frobenius_sqr())
    }

    pub fn frobenius_sqr(&self) -> f64 {
        self.a.norm_sqr() + self.b.norm_sqr() + self.c.norm_sqr() + self.d.norm_sqr()
    }

    fn image_homogeneous(&self, p: &SpherePoint) -> (C, C) {
        let (x, y) = p.homogeneous();
        (self.a * x + self.b * y, self.c * x + self.d * y)
    }

    pub fn apply(&self, p: &SpherePoint) -> SpherePoint {
        let (x, y) = self.image_homogeneous(p);
        SpherePoint::from_homogeneous(x, y).unwrap_or(SpherePoint { chart: Chart::Zero, z: C::new(f64::NAN, f64::NAN) })
    }

    pub fn apply_c(&self, z: C) -> SpherePoint {
        self.apply(&SpherePoint { chart: Chart::Zero, z })
    }

    /// `m'(z) = (cz+d)^{-2}` in chart 0.
    pub fn derivative(&self, z: C) -> C {
        let den = self.c * z + self.d;
        ONE / (den * den)
    }

    /// `λ_m(p) = |m'|² (1+|z|²)² / (1+|m(z)|²)²`, evaluated chart-free.
    pub fn conformal_factor(&self, p: &SpherePoint) -> f64 {
        let (x, y) = p.homogeneous();
        let (u, v) = self.image_homogeneous(p);
        let num = x.norm_sqr() + y.norm_sqr();
        let den = u.norm_sqr() + v.norm_sqr();
        let det = self.det().norm();
        let r = det * num / den;
        r * r
    }

    /// Image point (canonical chart) together with the factor by which `√(dm)^d`
    /// acts between the chart trivializations at `p` and at `m(p)`.
    pub fn lift(&self, d: i32, p: &SpherePoint) -> Result<(SpherePoint, C)> {
        if d == 0 {
            return Err(Error::ZeroDegree);
        }
        if !p.is_valid() {
            return Err(Error::InvalidPoint("lift at a non-finite point".into()));
        }
        let (u, v) = self.image_homogeneous(p);
        let q = SpherePoint::from_homogeneous(u, v)?;
        let den = match q.chart {
            Chart::Zero => v,
            Chart::One => u,
        };
        Ok((q, den.powi(-d)))
    }

    pub fn lift_factor(&self, d: i32, p: &SpherePoint) -> Result<C> {
        self.lift(d, p).map(|x| x.1)
    }

    pub fn to_reals(&self) -> [f64; 8] {
        [self.a.re, self.a.im, self.b.re, self.b.im, self.c.re, self.c.im, self.d.re, self.d.im]
    }

    pub fn from_reals(r: &[f64]) -> Result<Self> {
        if r.len() != 8 {
            return Err(Error::Invalid(format!("expected 8 reals for a Moebius map, got {}", r.len())));
        }
        Moebius::new(C::new(r[0], r[1]), C::new(r[2], r[3]), C::new(r[4], r[5]), C::new(r[6], r[7]))
    }
}

/// The line bundle `L_d` on S² with transition `z^{-d}` from chart 0 to chart 1.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LineBundle {
    degree: i32,
}

impl LineBundle {
    pub fn new(degree: i32) -> Result<Self> {
        if degree == 0 {
            return Err(Error::ZeroDegree);
        }
        Ok(LineBundle { degree })
    }

    pub fn degree(&self) -> i32 {
        self.degree
    }

    /// Degrees other than −1 and −2 have no established energy normalization.
    pub fn is_experimental(&self) -> bool {
        !matches!(self.degree, -1 | -2)
    }

    /// Coefficient change chart 0 → chart 1 at the chart-0 coordinate `z`.
    pub fn transition(&self, z: C) -> C {
        z.powi(-self.degree)
    }

    /// `|θ|²_H = (1+|z|²)^{-d}` for the chart frame θ, same formula in both charts.
    pub fn fiber_weight(&self, p: &SpherePoint) -> f64 {
        (1.0 + p.z.norm_sqr()).powi(-self.degree)
    }
}

/// `n` quasi-uniform points on the sphere (Fibonacci lattice), in canonical charts.
pub fn fibonacci_points(n: usize) -> Vec<SpherePoint> {
    let golden = std::f64::consts::PI * (3.0 - 5f64.sqrt());
    (0..n)
        .map(|i| {
            let zc = 1.0 - (2.0 * i as f64 + 1.0) / n as f64;
            let r = (1.0 - zc * zc).max(0.0).sqrt();
            let th = golden * i as f64;
            SpherePoint::from_unit_vector([r * th.cos(), r * th.sin(), zc])
        })
        .collect()
}

/// Bundle metric `½ g(v1, v2) |θ|²_H` where `g = Re h` and `h` is the Hermitian
/// target metric given by the matrix `metric`.
pub fn bundle_inner(bundle: &LineBundle, p: &SpherePoint, metric: &DMatrix<C>, v1: &[C], v2: &[C]) -> Result<f64> {
    let n = metric.nrows();
    if metric.ncols() != n || v1.len() != n || v2.len() != n {
        return Err(Error::Invalid("dimension mismatch in bundle_inner".into()));
    }
    let herm = (metric - metric.adjoint()).norm() <= 1e-12 * (1.0 + metric.norm());
    let mut re = DMatrix::<f64>::zeros(2 * n, 2 * n);
    for i in 0..n {
        for j in 0..n {
            let m = metric[(i, j)];
            re[(i, j)] = m.re;
            re[(i + n, j + n)] = m.re;
            re[(i, j + n)] = -m.im;
            re[(i + n, j)] = m.im;
        }
    }
    if !herm || re.cholesky().is_none() {
        return Err(Error::NotPositiveDefinite);
    }
    let mut h = ZERO;
    for i in 0..n {
        for j in 0..n {
            h += v1[i].conj() * metric[(i, j)] * v2[j];
        }
    }
    Ok(0.5 * h.re * bundle.fiber_weight(p))
}
