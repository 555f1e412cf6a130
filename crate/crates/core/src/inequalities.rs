//! Mean value inequalities, the local isoperimetric inequality and puncture decay fits,
//! evaluated with constants assembled from sup norms of `J̃`, `D̃` and their derivatives.

use crate::energy::integrate_planar;
use crate::error::{Error, Result};
use crate::fields::{gaussian, j0, to_real, LocalPair, MatField, PlanarDomain};
use crate::poly::Poly;
use crate::quadrature::{adaptive, Cell};
use crate::geometry::C;
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;
use std::sync::Arc;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HypothesisCheck {
    pub name: String,
    pub value: f64,
    pub bound: f64,
    pub pass: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InequalityReport {
    pub name: String,
    pub lhs: f64,
    pub rhs: f64,
    pub constants: Vec<(String, f64)>,
    pub hypotheses: Vec<HypothesisCheck>,
    pub pass: bool,
}

impl InequalityReport {
    fn new(name: &str, lhs: f64, rhs: f64, constants: Vec<(String, f64)>, hypotheses: Vec<HypothesisCheck>) -> Self {
        let pass = hypotheses.iter().all(|h| h.pass) && lhs <= rhs;
        InequalityReport { name: name.into(), lhs, rhs, constants, hypotheses, pass }
    }

    pub fn hypotheses_hold(&self) -> bool {
        self.hypotheses.iter().all(|h| h.pass)
    }
}

fn hyp(name: &str, value: f64, bound: f64) -> HypothesisCheck {
    HypothesisCheck { name: name.into(), value, bound, pass: value < bound }
}

/// Settings for the sup-norm and integral estimates.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckOptions {
    /// Points per side of the square grid clipped to the ball.
    pub grid: usize,
    /// Multiplier on every sup-norm estimate.
    pub safety: f64,
    /// Step for derivatives of `J̃`, `D̃`.
    pub h: f64,
    pub rel_tol: f64,
}

impl Default for CheckOptions {
    fn default() -> Self {
        CheckOptions { grid: 256, safety: 2.0, h: 1e-3, rel_tol: 1e-9 }
    }
}

/// The coefficient fields of `Δψ = Lψ + M ∂_sψ + N ∂_tψ`.
struct Coefficients {
    j: MatField,
    d: MatField,
    h: f64,
}

impl Coefficients {
    fn ds(&self, f: &MatField, s: f64, t: f64) -> DMatrix<f64> {
        (f(s + self.h, t) - f(s - self.h, t)) / (2.0 * self.h)
    }

    fn dt(&self, f: &MatField, s: f64, t: f64) -> DMatrix<f64> {
        (f(s, t + self.h) - f(s, t - self.h)) / (2.0 * self.h)
    }

    fn lmn(&self, s: f64, t: f64) -> [DMatrix<f64>; 3] {
        let jd: MatField = {
            let (j, d) = (self.j.clone(), self.d.clone());
            Arc::new(move |s, t| j(s, t) * d(s, t))
        };
        let j = (self.j)(s, t);
        let d = (self.d)(s, t);
        let l = -self.ds(&self.d, s, t) + self.dt(&jd, s, t);
        let m = -&d + self.dt(&self.j, s, t);
        let n = -self.ds(&self.j, s, t) + &j * &d;
        [l, m, n]
    }

    fn lmn_field(self: &Arc<Self>, k: usize) -> MatField {
        let me = self.clone();
        Arc::new(move |s, t| me.lmn(s, t)[k].clone())
    }
}

/// Grid points of the closed ball `B_rad(0)`, origin included.
fn ball_grid(rad: f64, n: usize) -> Vec<(f64, f64)> {
    let n = n.max(2);
    let mut v = vec![(0.0, 0.0)];
    for i in 0..n {
        for k in 0..n {
            let s = -rad + 2.0 * rad * i as f64 / (n - 1) as f64;
            let t = -rad + 2.0 * rad * k as f64 / (n - 1) as f64;
            if s * s + t * t <= rad * rad {
                v.push((s, t));
            }
        }
    }
    v
}

#[derive(Default)]
struct Sups {
    l: f64,
    m: f64,
    n: f64,
    x: f64,
    y: f64,
    z: f64,
    xp: f64,
    yp: f64,
    zp: f64,
}

fn sup_norms(lp: &LocalPair, rad: f64, opts: &CheckOptions, second: bool) -> Sups {
    let co = Arc::new(Coefficients { j: lp.j.clone(), d: lp.d.clone(), h: opts.h });
    let (lf, mf, nf) = (co.lmn_field(0), co.lmn_field(1), co.lmn_field(2));
    let mut out = Sups::default();
    for (s, t) in ball_grid(rad, opts.grid) {
        let [l, m, n] = co.lmn(s, t);
        out.l = out.l.max(l.norm());
        out.m = out.m.max(m.norm());
        out.n = out.n.max(n.norm());
        if second {
            let x = co.ds(&lf, s, t);
            let y = &l + co.ds(&mf, s, t);
            let z = co.ds(&nf, s, t);
            let xp = co.dt(&lf, s, t);
            let yp = &l + co.dt(&nf, s, t);
            let zp = co.dt(&mf, s, t);
            out.x = out.x.max(x.norm());
            out.y = out.y.max(y.norm());
            out.z = out.z.max(z.norm());
            out.xp = out.xp.max(xp.norm());
            out.yp = out.yp.max(yp.norm());
            out.zp = out.zp.max(zp.norm());
        }
    }
    let k = opts.safety;
    for v in [&mut out.l, &mut out.m, &mut out.n, &mut out.x, &mut out.y, &mut out.z, &mut out.xp, &mut out.yp, &mut out.zp] {
        *v *= k;
    }
    out
}

fn constant_a(s: &Sups) -> f64 {
    let two_sqrt_a = 2.0 * s.l + 0.5 * s.m * s.m + 0.5 * s.n * s.n;
    (two_sqrt_a / 2.0).powi(2)
}

fn dpsi_sqr(lp: &LocalPair, s: f64, t: f64, h: f64) -> f64 {
    let (a, b) = lp.dpsi(s, t, h);
    a.norm_squared() + b.norm_squared()
}

fn ball(r: f64) -> PlanarDomain {
    PlanarDomain::Disc { cs: 0.0, ct: 0.0, r }
}

fn require_ball(lp: &LocalPair, rad: f64) -> Result<()> {
    if !(rad > 0.0) || !lp.domain.contains_disc(0.0, 0.0, rad + 2.0 * 1e-3) {
        return Err(Error::Invalid(format!("B_{rad} is not inside the domain")));
    }
    Ok(())
}

/// `|ψ(0)|² ≤ a r²/8 + 8/(π r²) ∫_{B_r} |ψ|²` given `∫_{B_r} |ψ|² < π/16`.
pub fn mvi1_check(lp: &LocalPair, r: f64, opts: &CheckOptions) -> Result<InequalityReport> {
    require_ball(lp, r)?;
    let sups = sup_norms(lp, r, opts, false);
    let a = constant_a(&sups);
    let psi = lp.psi.clone();
    let int = integrate_planar(&move |s, t| psi(s, t).norm_squared(), &ball(r), opts.rel_tol)?.value;
    let lhs = (lp.psi)(0.0, 0.0).norm_squared();
    let rhs = a * r * r / 8.0 + 8.0 / (PI * r * r) * int;
    Ok(InequalityReport::new(
        "mvi1",
        lhs,
        rhs,
        vec![("a".into(), a), ("L".into(), sups.l), ("M".into(), sups.m), ("N".into(), sups.n), ("r".into(), r)],
        vec![hyp("int_B_r |psi|^2", int, PI / 16.0)],
    ))
}

/// `|dψ(0)|² ≤ ¼ + (P+Q) r²/4 + a r⁴/16 + 8/(π r²) ∫_{B_r} |dψ|²` given
/// `∫_{B_2r} |ψ|² < π/16` and `∫_{B_r} |dψ|² < π/64`.
pub fn mvi2_check(lp: &LocalPair, r: f64, opts: &CheckOptions) -> Result<InequalityReport> {
    require_ball(lp, 2.0 * r)?;
    let sups = sup_norms(lp, 2.0 * r, opts, true);
    let a = constant_a(&sups);
    let common = sups.m * sups.m + sups.n * sups.n + 4.0;
    let p = (0.25 * (sups.x * sups.x + 4.0 * sups.y + sups.z * sups.z + common) / 2.0).powi(2);
    let q = (0.25 * (sups.xp * sups.xp + 4.0 * sups.yp + sups.zp * sups.zp + common) / 2.0).powi(2);
    let c = (p + q) / 4.0;
    let d = a / 16.0;
    let psi = lp.psi.clone();
    let int_psi = integrate_planar(&move |s, t| psi(s, t).norm_squared(), &ball(2.0 * r), opts.rel_tol)?.value;
    let h = opts.h;
    let int_dpsi = integrate_planar(&|s, t| dpsi_sqr(lp, s, t, h), &ball(r), opts.rel_tol)?.value;
    let lhs = dpsi_sqr(lp, 0.0, 0.0, h);
    let rhs = 0.25 + c * r * r + d * r.powi(4) + 8.0 / (PI * r * r) * int_dpsi;
    Ok(InequalityReport::new(
        "mvi2",
        lhs,
        rhs,
        vec![("a".into(), a), ("P".into(), p), ("Q".into(), q), ("c".into(), c), ("d".into(), d), ("r".into(), r)],
        vec![hyp("int_B_2r |psi|^2", int_psi, PI / 16.0), hyp("int_B_r |dpsi|^2", int_dpsi, PI / 64.0)],
    ))
}

/// `∫_{B_r} ψ*ω₀ ≤ c · l(γ_r)²` with `ω₀(v, w) = g(J₀v, w)`. `metric` defaults to the
/// Euclidean product and is averaged to a symmetric `J₀`-invariant form.
pub fn isoperimetric_check(lp: &LocalPair, metric: Option<&DMatrix<f64>>, r: f64, c: f64, rel_tol: f64) -> Result<InequalityReport> {
    require_ball(lp, r)?;
    let dim = lp.dim;
    let jm = j0(dim);
    let g = match metric {
        Some(g) if g.shape() == (dim, dim) => {
            let sym = (g + g.transpose()) / 2.0;
            (&sym + jm.transpose() * &sym * &jm) / 2.0
        }
        Some(_) => return Err(Error::Invalid("metric dimension mismatch".into())),
        None => DMatrix::identity(dim, dim),
    };
    if g.clone().cholesky().is_none() {
        return Err(Error::NotPositiveDefinite);
    }
    let h = 1e-4;
    let omega = jm.transpose() * &g;
    let area = integrate_planar(
        &|s, t| {
            let (a, b) = lp.dpsi(s, t, h);
            (a.transpose() * &omega * b)[(0, 0)]
        },
        &ball(r),
        rel_tol,
    )?;
    let speed = |th: f64, _: f64| {
        let (a, b) = lp.dpsi(r * th.cos(), r * th.sin(), h);
        let v: DVector<f64> = (a * (-th.sin()) + b * th.cos()) * r;
        (v.transpose() * &g * &v)[(0, 0)].max(0.0).sqrt()
    };
    let cells: Vec<Cell> = (0..8).map(|k| Cell { x0: PI * k as f64 / 4.0, x1: PI * (k + 1) as f64 / 4.0, y0: 0.0, y1: 1.0 }).collect();
    let len = adaptive(&speed, &cells, rel_tol, 1e-15)?.value;
    let lhs = area.value;
    let rhs = c * len * len;
    // Equality cases are decided up to the quadrature error.
    let slack = 1e-9 * (lhs.abs() + rhs.abs());
    let mut rep = InequalityReport::new("isoperimetric", lhs, rhs, vec![("c".into(), c), ("length".into(), len), ("r".into(), r)], vec![]);
    rep.pass = lhs <= rhs + slack;
    Ok(rep)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecayFit {
    pub radii: Vec<f64>,
    pub sup_sqr: Vec<f64>,
    pub slope: f64,
    pub nu: f64,
    pub b: f64,
}

/// Least-squares fit of `log sup_θ |dψ(r,θ)|²` against `log r`.
pub fn decay_fit_profile(dpsi_sqr_at: &dyn Fn(f64, f64) -> f64, radii: &[f64], angles: usize) -> Result<DecayFit> {
    if radii.len() < 4 {
        return Err(Error::Invalid(format!("decay fit needs at least 4 radii, got {}", radii.len())));
    }
    let angles = angles.max(1);
    let mut sup = Vec::with_capacity(radii.len());
    for &r in radii {
        if !(r > 0.0) {
            return Err(Error::Invalid("radii must be positive".into()));
        }
        let m = (0..angles)
            .map(|k| {
                let th = 2.0 * PI * k as f64 / angles as f64;
                dpsi_sqr_at(r * th.cos(), r * th.sin())
            })
            .fold(0.0, f64::max);
        if !(m > 0.0) || !m.is_finite() {
            return Err(Error::NonFinite(format!("sup |dpsi|^2 = {m} at r = {r}")));
        }
        sup.push(m);
    }
    let x: Vec<f64> = radii.iter().map(|r| r.ln()).collect();
    let y: Vec<f64> = sup.iter().map(|v| v.ln()).collect();
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxy: f64 = x.iter().zip(&y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    let slope = sxy / sxx;
    let b = (my - slope * mx).exp();
    Ok(DecayFit { radii: radii.to_vec(), sup_sqr: sup, slope, nu: 1.0 + slope / 2.0, b })
}

pub fn decay_fit(lp: &LocalPair, radii: &[f64], angles: usize) -> Result<DecayFit> {
    decay_fit_profile(&|s, t| dpsi_sqr(lp, s, t, 1e-5), radii, angles)
}

/// A random local supercurve built by a gauge change of a flat holomorphic pair.
///
/// With `F(x) = x + εQ(x)` for a random quadratic `Q` and `G = dF(φ₀)`, the pair
/// `φ = F(φ₀)`, `ψ = Gχ` solves the local equations for `J̃ = G J₀ G⁻¹` and
/// `D̃ = −(∂_sG + J̃ ∂_tG) G⁻¹`.
#[derive(Clone, Debug)]
pub struct RandomInstance {
    pub lp: LocalPair,
    pub r: f64,
    pub seed: u64,
}

struct Gauge {
    eps: f64,
    /// `hess[k]` is the symmetric Hessian of `Q_k`.
    hess: Vec<DMatrix<f64>>,
    phi0: Vec<Poly>,
    chi: Vec<Poly>,
}

impl Gauge {
    fn real_jet(p: &[Poly], s: f64, t: f64) -> (DVector<f64>, DVector<f64>, DVector<f64>) {
        let z = C::new(s, t);
        let (v, dz): (Vec<C>, Vec<C>) = p.iter().map(|q| q.eval_d(z)).unzip();
        let dt: Vec<C> = dz.iter().map(|x| x * C::new(0.0, 1.0)).collect();
        (to_real(&v), to_real(&dz), to_real(&dt))
    }

    fn dq(&self, x: &DVector<f64>) -> DMatrix<f64> {
        let n = x.len();
        let mut m = DMatrix::zeros(n, n);
        for k in 0..n {
            let row = &self.hess[k] * x;
            for i in 0..n {
                m[(k, i)] = row[i];
            }
        }
        m
    }

    fn g(&self, x: &DVector<f64>) -> DMatrix<f64> {
        DMatrix::identity(x.len(), x.len()) + self.dq(x) * self.eps
    }

    fn phi(&self, s: f64, t: f64) -> DVector<f64> {
        let (x, _, _) = Self::real_jet(&self.phi0, s, t);
        let q = DVector::from_iterator(x.len(), (0..x.len()).map(|k| 0.5 * (x.transpose() * &self.hess[k] * &x)[(0, 0)]));
        &x + q * self.eps
    }

    fn phi_jet(&self, s: f64, t: f64) -> (DVector<f64>, DVector<f64>) {
        let (x, xs, xt) = Self::real_jet(&self.phi0, s, t);
        let g = self.g(&x);
        (&g * xs, &g * xt)
    }

    /// `(G, ∂_sG, ∂_tG)`.
    fn g_jet(&self, s: f64, t: f64) -> (DMatrix<f64>, DMatrix<f64>, DMatrix<f64>) {
        let (x, xs, xt) = Self::real_jet(&self.phi0, s, t);
        (self.g(&x), self.dq(&xs) * self.eps, self.dq(&xt) * self.eps)
    }

    fn j(&self, s: f64, t: f64) -> DMatrix<f64> {
        let (g, _, _) = self.g_jet(s, t);
        let gi = g.clone().try_inverse().expect("gauge is invertible on the domain");
        &g * j0(g.nrows()) * gi
    }

    fn d(&self, s: f64, t: f64) -> DMatrix<f64> {
        let (g, gs, gt) = self.g_jet(s, t);
        let gi = g.clone().try_inverse().expect("gauge is invertible on the domain");
        let j = &g * j0(g.nrows()) * &gi;
        -(gs + j * gt) * gi
    }

    fn psi(&self, s: f64, t: f64) -> DVector<f64> {
        let (x, _, _) = Self::real_jet(&self.phi0, s, t);
        let (c, _, _) = Self::real_jet(&self.chi, s, t);
        self.g(&x) * c
    }

    fn psi_jet(&self, s: f64, t: f64) -> (DVector<f64>, DVector<f64>) {
        let (g, gs, gt) = self.g_jet(s, t);
        let (c, cs, ct) = Self::real_jet(&self.chi, s, t);
        (gs * &c + &g * cs, gt * &c + &g * ct)
    }
}

/// Deterministic random instance on the unit disc with `ψ` scaled into the mean value
/// hypotheses for a random radius `r ≤ 0.4`.
pub fn random_instance(seed: u64) -> Result<RandomInstance> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = rng.gen_range(1..=2usize);
    let dim = 2 * n;
    let phi0: Vec<Poly> = (0..n).map(|_| random_poly_deg(&mut rng, 2, 0.5)).collect();
    let chi: Vec<Poly> = (0..n).map(|_| random_poly_deg(&mut rng, 3, 1.0)).collect();
    let hess: Vec<DMatrix<f64>> = (0..dim)
        .map(|_| {
            let a = DMatrix::from_fn(dim, dim, |_, _| gaussian(&mut rng).re);
            (&a + a.transpose()) / 2.0
        })
        .collect();
    // Keep ‖ε dQ‖ below ~0.4 on the image of the unit disc.
    let xmax = phi0.iter().map(|p| p.coeffs.iter().map(|c| c.norm()).sum::<f64>()).fold(0.0, f64::max) * (n as f64).sqrt() + 1e-3;
    let hmax = hess.iter().map(|h| h.norm()).fold(0.0, f64::max) * (dim as f64).sqrt();
    let eps = rng.gen_range(0.05..0.4) / (hmax * xmax).max(1e-9);
    let gauge = Arc::new(Gauge { eps, hess, phi0, chi });
    let domain = PlanarDomain::Disc { cs: 0.0, ct: 0.0, r: 1.0 };
    let gs: Vec<Arc<Gauge>> = (0..6).map(|_| gauge.clone()).collect();
    let mut lp = LocalPair::new(
        domain,
        dim,
        { let g = gs[0].clone(); Arc::new(move |s, t| g.phi(s, t)) },
        { let g = gs[1].clone(); Arc::new(move |s, t| g.psi(s, t)) },
        { let g = gs[2].clone(); Arc::new(move |s, t| g.j(s, t)) },
        { let g = gs[3].clone(); Arc::new(move |s, t| g.d(s, t)) },
    );
    lp.phi_jet = Some({ let g = gs[4].clone(); Arc::new(move |s, t| g.phi_jet(s, t)) });
    lp.psi_jet = Some({ let g = gs[5].clone(); Arc::new(move |s, t| g.psi_jet(s, t)) });
    let r: f64 = rng.gen_range(0.1..0.4);
    let int_psi = integrate_planar(&|s, t| (lp.psi)(s, t).norm_squared(), &ball(2.0 * r), 1e-9)?.value;
    let int_dpsi = integrate_planar(&|s, t| dpsi_sqr(&lp, s, t, 0.0), &ball(r), 1e-9)?.value;
    let room = (PI / 16.0 / int_psi).min(PI / 64.0 / int_dpsi);
    let c = (rng.gen_range(0.05..0.95) * room).sqrt();
    Ok(RandomInstance { lp: lp.scale_psi(c), r, seed })
}

fn random_poly_deg(rng: &mut ChaCha8Rng, degree: usize, scale: f64) -> Poly {
    let d = rng.gen_range(0..=degree);
    let mut p = crate::fields::random_poly(rng, d, scale);
    if p.coeffs.iter().all(|c| c.norm() == 0.0) {
        p = Poly::constant(C::new(scale, 0.0));
    }
    p
}
