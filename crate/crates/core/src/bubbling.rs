//! Degenerating families: concentration detection, rescaling, bubble fits and the
//! energy identities relating masses to bubble energies.

use crate::energy::{aitken, energy_curve, energy_section, mass_profile, MassProfile, Region};
use crate::error::{Error, Result};
use crate::fields::{bubble_curve, pairs, GlobalCurve, SuperSection, Target};
use crate::geometry::{fibonacci_points, Chart, LineBundle, Moebius, SpherePoint, C};
use crate::optim::NelderMead;
use crate::poly::Poly;
use crate::quadrature::{adaptive, Cell};
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use std::sync::Arc;

pub type Generator = Arc<dyn Fn(f64) -> Result<(GlobalCurve, SuperSection)> + Send + Sync>;

/// A sequence `ν ↦ (φ^ν, ψ^ν)` evaluated on a finite increasing ladder.
#[derive(Clone)]
pub struct Family {
    pub name: String,
    pub ladder: Vec<f64>,
    generator: Generator,
}

impl std::fmt::Debug for Family {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Family").field("name", &self.name).field("ladder", &self.ladder).finish()
    }
}

/// `ν_k = ν₀ 2^k`, `k < count`.
pub fn geometric_ladder(nu0: f64, count: usize) -> Vec<f64> {
    (0..count).map(|k| nu0 * 2f64.powi(k as i32)).collect()
}

impl Family {
    pub fn new(name: impl Into<String>, ladder: Vec<f64>, generator: Generator) -> Result<Self> {
        if ladder.is_empty() || ladder.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::Invalid("ladder must be nonempty and increasing".into()));
        }
        Ok(Family { name: name.into(), ladder, generator })
    }

    pub fn member(&self, nu: f64) -> Result<(GlobalCurve, SuperSection)> {
        (self.generator)(nu)
    }

    pub fn last(&self) -> f64 {
        *self.ladder.last().unwrap()
    }

    /// The fixed pair `(φ, ψ)` for every ν.
    pub fn constant(curve: GlobalCurve, section: SuperSection, ladder: Vec<f64>) -> Result<Self> {
        Family::new("constant", ladder, Arc::new(move |_| Ok((curve.clone(), section.clone()))))
    }

    /// `φ^ν = z + ν^{-1}/z` with the zero section of `L_d`.
    pub fn bubble(d: i32, ladder: Vec<f64>) -> Result<Self> {
        let bundle = LineBundle::new(d)?;
        Family::new(
            "bubble",
            ladder,
            Arc::new(move |nu| {
                let g = bubble_curve(1.0 / nu)?;
                let s = SuperSection::zero(&g, bundle);
                Ok((g, s))
            }),
        )
    }

    /// `(φ, ψ) ∘ (z ↦ ν z)`.
    pub fn pullback(curve: GlobalCurve, section: SuperSection, ladder: Vec<f64>) -> Result<Self> {
        Family::new(
            "pullback",
            ladder,
            Arc::new(move |nu| {
                let m = Moebius::scaling(C::new(nu, 0.0))?;
                Ok((curve.pullback(&m), section.pullback(&m)))
            }),
        )
    }

    /// Members pulled back by the per-ν maps of a rescaling.
    pub fn rescaled(&self, r: &Rescaling) -> Result<Self> {
        let base = self.clone();
        let maps: Vec<(f64, Moebius)> = r.nus.iter().cloned().zip(r.maps.iter().cloned()).collect();
        Family::new(
            format!("{}-rescaled", self.name),
            r.nus.clone(),
            Arc::new(move |nu| {
                let m = maps
                    .iter()
                    .find(|(n, _)| (n - nu).abs() <= 1e-12 * nu.abs())
                    .ok_or_else(|| Error::Invalid(format!("rescaled family is defined on its ladder only (ν = {nu})")))?
                    .1;
                let (g, s) = base.member(nu)?;
                Ok((g.pullback(&m), s.pullback(&m)))
            }),
        )
    }
}

fn chart_cell_masses(curve: &GlobalCurve, chart: Chart, n: usize, half: f64) -> Result<Vec<f64>> {
    let h = 2.0 * half / n as f64;
    let mut out = Vec::with_capacity(n * n);
    for i in 0..n {
        for k in 0..n {
            let cell = Cell { x0: -half + i as f64 * h, x1: -half + (i + 1) as f64 * h, y0: -half + k as f64 * h, y1: -half + (k + 1) as f64 * h };
            let f = |x: f64, y: f64| {
                let z = C::new(x, y);
                curve.energy_density(&SpherePoint { chart, z }) * crate::geometry::sphere_density(z)
            };
            out.push(adaptive(&f, &[cell], 1e-6, 1e-12)?.value);
        }
    }
    Ok(out)
}

/// Maximizes the energy density near `start` by a local search in the chart of `start`.
fn density_argmax(curve: &GlobalCurve, start: &SpherePoint, step: f64) -> SpherePoint {
    let chart = start.chart;
    let f = |x: &[f64]| {
        let v = curve.energy_density(&SpherePoint { chart, z: C::new(x[0], x[1]) });
        if v > 0.0 { -v.ln() } else { f64::INFINITY }
    };
    let nm = NelderMead { max_evals: 2000, f_tol: 1e-15, x_tol: 1e-14 * (1.0 + start.z.norm()), initial_step: step };
    let m = nm.minimize(&f, &[start.z.re, start.z.im]);
    SpherePoint { chart, z: C::new(m.x[0], m.x[1]) }.canonical()
}

/// Ball radius for the mass threshold of a detected point.
pub const DETECTION_RADIUS: f64 = 0.05;

/// Points where `E(φ^ν, B_ε(z))` at the largest ν exceeds `hbar / 2`.
pub fn detect_concentration(family: &Family, grid: usize, hbar: f64) -> Result<Vec<SpherePoint>> {
    detect_in(family, grid, hbar, None)
}

fn detect_in(family: &Family, grid: usize, hbar: f64, exclude: Option<(SpherePoint, f64)>) -> Result<Vec<SpherePoint>> {
    let (curve, _) = family.member(family.last())?;
    if curve.is_constant() {
        return Ok(vec![]);
    }
    let n = grid.max(3) | 1;
    let half = 1.1;
    let h = 2.0 * half / n as f64;
    let mut found: Vec<SpherePoint> = Vec::new();
    for chart in [Chart::Zero, Chart::One] {
        let mass = chart_cell_masses(&curve, chart, n, half)?;
        for i in 0..n {
            for k in 0..n {
                let m = mass[i * n + k];
                let mut local_max = true;
                let mut agg = 0.0;
                for di in -1i64..=1 {
                    for dk in -1i64..=1 {
                        let (a, b) = (i as i64 + di, k as i64 + dk);
                        if a < 0 || b < 0 || a >= n as i64 || b >= n as i64 {
                            continue;
                        }
                        let v = mass[a as usize * n + b as usize];
                        agg += v;
                        if (di, dk) != (0, 0) && v > m {
                            local_max = false;
                        }
                    }
                }
                if !local_max || agg < hbar / 4.0 {
                    continue;
                }
                let c = C::new(-half + (i as f64 + 0.5) * h, -half + (k as f64 + 0.5) * h);
                let p = density_argmax(&curve, &SpherePoint { chart, z: c }, h / 4.0);
                if let Some((q, r)) = exclude {
                    if p.chordal_distance(&q) < r {
                        continue;
                    }
                }
                if found.iter().any(|q| q.chordal_distance(&p) < 2.0 * DETECTION_RADIUS) {
                    continue;
                }
                let ball = energy_curve(&curve, &Region::disc(p, DETECTION_RADIUS), 1e-8)?.value;
                if ball >= hbar / 2.0 {
                    found.push(p);
                }
            }
        }
    }
    Ok(found)
}

/// Per-ν recentring and scale: `m^ν(w) = R_{z^ν}(δ^ν w)` with `z^ν` the density maximum near
/// `z₀` and `δ^ν = 1 / |dφ^ν(z^ν)|`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Rescaling {
    pub center: SpherePoint,
    pub nus: Vec<f64>,
    pub centers: Vec<SpherePoint>,
    pub deltas: Vec<f64>,
    pub maps: Vec<Moebius>,
    /// Log-log slope of `δ^ν` against ν.
    pub slope: f64,
}

fn loglog_slope(x: &[f64], y: &[f64]) -> f64 {
    let lx: Vec<f64> = x.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = y.iter().map(|v| v.ln()).collect();
    let n = lx.len() as f64;
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let sxy: f64 = lx.iter().zip(&ly).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = lx.iter().map(|a| (a - mx).powi(2)).sum();
    if sxx > 0.0 { sxy / sxx } else { 0.0 }
}

/// Radius of the ball around `z₀` searched for the derivative maximum.
pub const RESCALING_RADIUS: f64 = 0.1;

pub fn select_rescaling(family: &Family, z0: &SpherePoint) -> Result<Rescaling> {
    let z0 = z0.canonical();
    let mut centers = Vec::new();
    let mut deltas = Vec::new();
    let mut prev: Option<SpherePoint> = None;
    for &nu in &family.ladder {
        let (curve, _) = family.member(nu)?;
        // coarse search in the chart of z₀, then local refinement
        let mut cands = vec![z0];
        let k = 20;
        for i in 0..=k {
            for j in 0..=k {
                let dz = C::new(-1.0 + 2.0 * i as f64 / k as f64, -1.0 + 2.0 * j as f64 / k as f64) * RESCALING_RADIUS;
                if dz.norm() <= RESCALING_RADIUS {
                    cands.push(SpherePoint { chart: z0.chart, z: z0.z + dz });
                }
            }
        }
        if let Some(p) = prev {
            cands.push(p);
        }
        let dens = |p: &SpherePoint| curve.energy_density(p);
        let best = cands.iter().cloned().max_by(|a, b| dens(a).total_cmp(&dens(b))).unwrap();
        let prev_best = prev.map(|p| density_argmax(&curve, &p, RESCALING_RADIUS / 1000.0));
        let mut zc = density_argmax(&curve, &best, RESCALING_RADIUS / 20.0);
        if let Some(p) = prev_best {
            if dens(&p) > dens(&zc) {
                zc = p;
            }
        }
        let dphi = (2.0 * dens(&zc)).sqrt();
        if !(dphi > 0.0) || !dphi.is_finite() {
            return Err(Error::NoBlowUp);
        }
        prev = Some(zc);
        centers.push(zc);
        deltas.push(1.0 / dphi);
    }
    let slope = if deltas.len() >= 2 { loglog_slope(&family.ladder, &deltas) } else { 0.0 };
    let shrink = deltas.last().unwrap() / deltas[0];
    if deltas.len() < 2 || slope > -0.25 || shrink > 0.5 {
        return Err(Error::NoBlowUp);
    }
    let maps = centers
        .iter()
        .zip(&deltas)
        .map(|(c, &d)| Ok(Moebius::centering(c).compose(&Moebius::scaling(C::new(d, 0.0))?)))
        .collect::<Result<Vec<_>>>()?;
    Ok(Rescaling { center: z0, nus: family.ladder.clone(), centers, deltas, maps, slope })
}

/// Rescaling with prescribed `δ^ν` about a fixed center.
pub fn fixed_rescaling(family: &Family, z0: &SpherePoint, deltas: &[f64]) -> Result<Rescaling> {
    if deltas.len() != family.ladder.len() {
        return Err(Error::Invalid("one δ per ladder entry required".into()));
    }
    let z0 = z0.canonical();
    let maps = deltas
        .iter()
        .map(|&d| Ok(Moebius::centering(&z0).compose(&Moebius::scaling(C::new(d, 0.0))?)))
        .collect::<Result<Vec<_>>>()?;
    let slope = loglog_slope(&family.ladder, deltas);
    Ok(Rescaling { center: z0, nus: family.ladder.clone(), centers: vec![z0; deltas.len()], deltas: deltas.to_vec(), maps, slope })
}

/// A fitted limit: curve, section and sup residuals over the samples.
#[derive(Clone, Debug)]
pub struct Fit {
    pub curve: GlobalCurve,
    pub section: SuperSection,
    pub degree: usize,
    /// Sup target distance between fitted and sampled points.
    pub residual: f64,
    /// Sup deviation of `|ψ|²` between fitted and sampled sections.
    pub section_residual: f64,
    pub converged: bool,
}

pub const FIT_TOLERANCE: f64 = 1e-4;
pub const MAX_FIT_DEGREE: usize = 6;

/// Samples of the limiting pair: affine point and section per sample, in the dominant
/// target chart, extrapolated along the ladder.
struct Samples {
    points: Vec<SpherePoint>,
    charts: Vec<usize>,
    phi: Vec<Vec<C>>,
    psi: Vec<Vec<C>>,
    norm: Vec<f64>,
}

fn caitken(x: &[C]) -> C {
    let n = x.len();
    if n < 3 {
        return x[n - 1];
    }
    let (a, b, c) = (x[n - 3], x[n - 2], x[n - 1]);
    let den = (c - b) - (b - a);
    if den.norm() <= 1e-13 * (a.norm() + b.norm() + c.norm()) {
        return c;
    }
    let r = (c - b) / (b - a);
    // Only accelerate sequences that actually contract.
    if !(r.norm() < 0.9) {
        return c;
    }
    c - (c - b) * (c - b) / den
}

fn sample_limit(members: &[(GlobalCurve, SuperSection)], points: &[SpherePoint]) -> Result<Samples> {
    let (last_curve, _) = members.last().unwrap();
    let m = last_curve.target().lift_len();
    let mut out = Samples { points: points.to_vec(), charts: vec![], phi: vec![], psi: vec![], norm: vec![] };
    for p in points {
        let lift = last_curve.lift_at(p);
        let j = (0..m).max_by(|&a, &b| lift[a].norm().total_cmp(&lift[b].norm())).unwrap();
        let mut phis = Vec::new();
        let mut psis = Vec::new();
        let mut norms = Vec::new();
        for (_, s) in members {
            let (a, b) = s.affine(p, j);
            phis.push(a);
            psis.push(b);
            norms.push(s.norm_sqr(p));
        }
        let phi: Vec<C> = (0..m).map(|i| caitken(&phis.iter().map(|v| v[i]).collect::<Vec<_>>())).collect();
        let psi: Vec<C> = (0..m).map(|i| caitken(&psis.iter().map(|v| v[i]).collect::<Vec<_>>())).collect();
        let nrm = aitken(&norms);
        if phi.iter().chain(&psi).any(|c| !c.is_finite()) {
            return Err(Error::NonFinite("limit sample".into()));
        }
        out.charts.push(j);
        out.phi.push(phi);
        out.psi.push(psi);
        out.norm.push(nrm);
    }
    Ok(out)
}

fn fit_curve(samples: &Samples, k: usize) -> Option<(GlobalCurve, f64)> {
    let m = samples.phi[0].len();
    let nc = m * (k + 1);
    let mut a = DMatrix::<C>::zeros(samples.points.len() * m, nc);
    for (r, (p, u)) in samples.points.iter().zip(&samples.phi).enumerate() {
        let z = p.coord(Chart::Zero)?;
        let un: f64 = u.iter().map(|x| x.norm_sqr()).sum::<f64>().sqrt();
        let u: Vec<C> = u.iter().map(|x| x / un).collect();
        // rows of (I − u uᴴ) applied to the coefficient vector
        for i in 0..m {
            for l in 0..m {
                let proj = if i == l { C::new(1.0, 0.0) } else { C::new(0.0, 0.0) } - u[i] * u[l].conj();
                let mut zp = C::new(1.0, 0.0);
                for e in 0..=k {
                    a[(r * m + i, l * (k + 1) + e)] += proj * zp;
                    zp *= z;
                }
            }
        }
    }
    let svd = a.svd(false, true);
    let vt = svd.v_t?;
    let sv = &svd.singular_values;
    let idx = (0..sv.len()).min_by(|&x, &y| sv[x].total_cmp(&sv[y]))?;
    let row = vt.row(idx);
    let comps: Vec<Poly> = (0..m).map(|l| Poly::new((0..=k).map(|e| row[l * (k + 1) + e].conj()).collect())).collect();
    let scale = comps.iter().map(|p| p.max_abs()).fold(0.0, f64::max);
    let comps: Vec<Poly> = comps
        .into_iter()
        .map(|p| Poly::new(p.coeffs.into_iter().map(|c| if c.norm() < 1e-11 * scale { C::new(0.0, 0.0) } else { c }).collect()))
        .collect();
    let curve = GlobalCurve::projective(comps).ok()?;
    let target = curve.target();
    let res = samples
        .points
        .iter()
        .zip(&samples.phi)
        .map(|(p, u)| target.distance(&curve.point(p), u))
        .fold(0.0, f64::max);
    Some((curve, res))
}

fn fit_section(samples: &Samples, curve: &GlobalCurve, bundle: LineBundle) -> Result<(SuperSection, f64)> {
    let m = curve.target().lift_len();
    let pr = pairs(m);
    let wdeg = 2 * curve.degree() as i64 + bundle.degree() as i64;
    if samples.psi.iter().all(|v| v.iter().all(|c| c.norm() == 0.0)) || wdeg < 0 {
        let s = SuperSection::zero(curve, bundle);
        let dev = samples.norm.iter().map(|n| n.abs()).fold(0.0, f64::max);
        return Ok((s, dev));
    }
    let wd = wdeg as usize;
    let rows = samples.points.len() * pr.len();
    let cols = pr.len() * (wd + 1);
    let mut a = DMatrix::<C>::zeros(rows, cols);
    let mut b = nalgebra::DVector::<C>::zeros(rows);
    for (r, (p, psi)) in samples.points.iter().zip(&samples.psi).enumerate() {
        let z = p.coord(Chart::Zero).ok_or_else(|| Error::InvalidPoint("fit sample at ∞".into()))?;
        let j = samples.charts[r];
        let pt = curve.lift_at(p);
        let wgt = 1.0 / pt[j].norm_sqr();
        for (q, &(x, y)) in pr.iter().enumerate() {
            let row = r * pr.len() + q;
            b[row] = (psi[x] * pt[y] - psi[y] * pt[x]) * pt[j] * wgt;
            let mut zp = C::new(1.0, 0.0);
            for e in 0..=wd {
                a[(row, q * (wd + 1) + e)] = zp * wgt;
                zp *= z;
            }
        }
    }
    let x = a.svd(true, true).solve(&b, 1e-13).map_err(|e| Error::Invalid(e.to_string()))?;
    let w0: Vec<Poly> = (0..pr.len()).map(|q| Poly::new((0..=wd).map(|e| x[q * (wd + 1) + e]).collect())).collect();
    let s = SuperSection::from_wedge(curve, bundle, w0)?;
    let dev = samples.points.iter().zip(&samples.norm).map(|(p, n)| (s.norm_sqr(p) - n).abs()).fold(0.0, f64::max);
    Ok((s, dev))
}

fn fit_limit(members: &[(GlobalCurve, SuperSection)], points: &[SpherePoint]) -> Result<Fit> {
    let (c_last, s_last) = members.last().unwrap();
    if let Target::Flat(_) = c_last.target() {
        return Err(Error::Unsupported("limit fits are implemented for projective targets".into()));
    }
    // Every sample in the chart-0 trivialization the fitted polynomials use.
    let points: Vec<SpherePoint> = points.iter().filter_map(|p| p.coord(Chart::Zero).map(|z| SpherePoint { chart: Chart::Zero, z })).collect();
    let samples = sample_limit(members, &points)?;
    let mut best: Option<(GlobalCurve, f64)> = None;
    for k in 0..=MAX_FIT_DEGREE {
        if let Some((c, r)) = fit_curve(&samples, k) {
            let better = best.as_ref().map_or(true, |(_, b)| r < *b);
            if better {
                best = Some((c, r));
            }
            if r < FIT_TOLERANCE {
                break;
            }
        }
    }
    let (curve, residual) = best.ok_or_else(|| Error::Invalid("no admissible rational fit".into()))?;
    let (section, section_residual) = fit_section(&samples, &curve, s_last.bundle())?;
    Ok(Fit { degree: curve.degree(), curve, section, residual, section_residual, converged: residual < FIT_TOLERANCE })
}

/// Annulus samples `|w| ∈ [0.5, 2]` in chart 0.
pub fn annulus_samples() -> Vec<SpherePoint> {
    let mut v = Vec::new();
    for i in 0..5 {
        let r = 0.5 * 4f64.powf(i as f64 / 4.0);
        for k in 0..16 {
            let th = 2.0 * std::f64::consts::PI * (k as f64 + 0.5 * i as f64) / 16.0;
            v.push(SpherePoint { chart: Chart::Zero, z: C::from_polar(r, th) });
        }
    }
    v
}

/// Limit of the rescaled members on the annulus ladder.
pub fn rescaled_limit(family: &Family, r: &Rescaling) -> Result<Fit> {
    let fam = family.rescaled(r)?;
    let members: Vec<_> = fam.ladder.iter().map(|&nu| fam.member(nu)).collect::<Result<_>>()?;
    fit_limit(&members, &annulus_samples())
}

/// Limit of the family away from `points` (balls of chordal radius `0.2`).
pub fn limit_curve(family: &Family, points: &[SpherePoint]) -> Result<Fit> {
    let samples: Vec<SpherePoint> = fibonacci_points(400)
        .into_iter()
        .filter(|p| points.iter().all(|q| p.chordal_distance(q) > 0.2))
        .filter_map(|p| p.coord(Chart::Zero).filter(|z| z.norm() < 4.0).map(|z| SpherePoint { chart: Chart::Zero, z }))
        .collect();
    let members: Vec<_> = family.ladder.iter().map(|&nu| family.member(nu)).collect::<Result<_>>()?;
    fit_limit(&members, &samples)
}

/// `d(φ(z₀), φ̃(z∞))` in the target.
pub fn connect_check(limit: &GlobalCurve, bubble: &GlobalCurve, z0: &SpherePoint, z_inf: &SpherePoint) -> f64 {
    limit.target().distance(&limit.point(z0), &bubble.point(z_inf))
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Conservation {
    /// `|E(φ̃) + Σ m_j^φ − m_0^φ|`.
    pub residual_iii: f64,
    /// `|E(ψ̃) + Σ m_j^ψ − m_0^ψ|`, present for `d = −1`.
    pub residual_v: Option<f64>,
    pub v_skipped: bool,
    pub bubble_energy_phi: f64,
    pub bubble_energy_psi: f64,
    pub secondary_phi: f64,
    pub secondary_psi: f64,
}

#[derive(Clone, Debug)]
pub struct BubblePoint {
    pub center: SpherePoint,
    pub profile: MassProfile,
    pub rescaling: Option<Rescaling>,
    pub fit: Option<Fit>,
    pub secondary: Vec<BubblePoint>,
    pub conservation: Option<Conservation>,
    pub annulus_psi: Option<AnnulusLadder>,
    pub note: Option<String>,
}

#[derive(Clone, Debug)]
pub struct BubbleReport {
    pub family: String,
    pub hbar: f64,
    pub points: Vec<BubblePoint>,
    pub limit: Option<Fit>,
    pub connect: Vec<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BubbleOptions {
    pub grid: usize,
    /// `ε_k = eps0 2^{-k}`.
    pub eps0: f64,
    pub eps_count: usize,
    pub rel_tol: f64,
    pub max_depth: usize,
}

impl Default for BubbleOptions {
    fn default() -> Self {
        BubbleOptions { grid: 21, eps0: 0.4, eps_count: 4, rel_tol: 1e-8, max_depth: 3 }
    }
}

fn eps_ladder(o: &BubbleOptions) -> Vec<f64> {
    (0..o.eps_count.max(1)).map(|k| o.eps0 * 0.5f64.powi(k as i32)).collect()
}

fn member_fn(family: &Family) -> impl Fn(f64) -> Result<(GlobalCurve, SuperSection)> + Sync + '_ {
    move |nu| family.member(nu)
}

/// `∫_{A(δ^ν/ε, ε)} |ψ^ν|^{-4/d}` around the per-ν centers on an (ε, ν) ladder, with the
/// ν → ∞ then ε → 0 extrapolation.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct AnnulusLadder {
    pub eps: Vec<f64>,
    pub nus: Vec<f64>,
    /// `raw[i][k]`; NaN where the annulus is empty.
    pub raw: Vec<Vec<f64>>,
    pub by_eps: Vec<f64>,
    pub limit: f64,
}

pub fn annulus_psi_energy(family: &Family, r: &Rescaling, eps: &[f64], rel_tol: f64) -> Result<AnnulusLadder> {
    let members: Vec<_> = r.nus.iter().map(|&nu| family.member(nu)).collect::<Result<_>>()?;
    let mut raw = Vec::new();
    let mut by_eps = Vec::new();
    for &e in eps {
        let mut row = Vec::new();
        for (i, (_, s)) in members.iter().enumerate() {
            let inner = r.deltas[i] / e;
            row.push(if inner < e {
                energy_section(s, &Region::Annulus { center: r.centers[i], inner, outer: e }, rel_tol)?.value
            } else {
                f64::NAN
            });
        }
        let valid: Vec<f64> = row.iter().cloned().filter(|v| v.is_finite()).collect();
        if !valid.is_empty() {
            by_eps.push(aitken(&valid).max(0.0));
        }
        raw.push(row);
    }
    let limit = if by_eps.is_empty() { f64::NAN } else { aitken(&by_eps).max(0.0) };
    Ok(AnnulusLadder { eps: eps.to_vec(), nus: r.nus.clone(), raw, by_eps, limit })
}

fn analyze_point(family: &Family, z: SpherePoint, hbar: f64, o: &BubbleOptions, depth: usize) -> Result<BubblePoint> {
    let eps = eps_ladder(o);
    let profile = mass_profile(&member_fn(family), z, &eps, &family.ladder, o.rel_tol)?;
    let mut bp = BubblePoint { center: z, profile, rescaling: None, fit: None, secondary: vec![], conservation: None, annulus_psi: None, note: None };
    let r = match select_rescaling(family, &z) {
        Ok(r) => r,
        Err(e) => {
            bp.note = Some(e.to_string());
            return Ok(bp);
        }
    };
    bp.annulus_psi = Some(annulus_psi_energy(family, &r, &eps, o.rel_tol)?);
    match rescaled_limit(family, &r) {
        Ok(fit) => bp.fit = Some(fit),
        Err(e) => bp.note = Some(e.to_string()),
    }
    if depth + 1 < o.max_depth {
        let resc = family.rescaled(&r)?;
        // ∞ on the bubble is where it attaches to the rest of the tree
        let sec = detect_in(&resc, o.grid, hbar, Some((SpherePoint::infinity(), 0.5)))?;
        for p in sec {
            bp.secondary.push(analyze_point(&resc, p, hbar, o, depth + 1)?);
        }
    }
    bp.rescaling = Some(r);
    if bp.fit.is_some() {
        bp.conservation = Some(conservation_check(&bp, o.rel_tol)?);
    }
    Ok(bp)
}

/// Identities (iii) and (v) for an analyzed point.
pub fn conservation_check(bp: &BubblePoint, rel_tol: f64) -> Result<Conservation> {
    let fit = bp.fit.as_ref().ok_or_else(|| Error::Invalid("no bubble fit".into()))?;
    let e_phi = energy_curve(&fit.curve, &Region::Sphere, rel_tol)?.value;
    let e_psi = energy_section(&fit.section, &Region::Sphere, rel_tol)?.value;
    let sec_phi: f64 = bp.secondary.iter().map(|s| s.profile.m_phi).sum();
    let sec_psi: f64 = bp.secondary.iter().map(|s| s.profile.m_psi).sum();
    let residual_iii = (e_phi + sec_phi - bp.profile.m_phi).abs();
    let d = fit.section.bundle().degree();
    let (residual_v, v_skipped) = if d == -1 { (Some((e_psi + sec_psi - bp.profile.m_psi).abs()), false) } else { (None, true) };
    Ok(Conservation { residual_iii, residual_v, v_skipped, bubble_energy_phi: e_phi, bubble_energy_psi: e_psi, secondary_phi: sec_phi, secondary_psi: sec_psi })
}

/// Detection, rescaling, fitting and conservation for every concentration point.
pub fn analyze(family: &Family, hbar: f64, o: &BubbleOptions) -> Result<BubbleReport> {
    let pts = detect_concentration(family, o.grid, hbar)?;
    let mut points = Vec::new();
    for p in pts {
        points.push(analyze_point(family, p, hbar, o, 0)?);
    }
    let centers: Vec<SpherePoint> = points.iter().map(|p| p.center).collect();
    let limit = if centers.is_empty() { None } else { limit_curve(family, &centers).ok() };
    let mut connect = Vec::new();
    if let Some(l) = &limit {
        for p in &points {
            if let Some(f) = &p.fit {
                connect.push(connect_check(&l.curve, &f.curve, &p.center, &SpherePoint::infinity()));
            }
        }
    }
    Ok(BubbleReport { family: family.name.clone(), hbar, points, limit, connect })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_family_has_no_concentration() {
        let g = crate::fields::identity_curve();
        let s = SuperSection::zero(&g, LineBundle::new(-1).unwrap());
        let f = Family::constant(g, s, geometric_ladder(1.0, 4)).unwrap();
        assert!(detect_concentration(&f, 11, std::f64::consts::PI).unwrap().is_empty());
        assert!(matches!(select_rescaling(&f, &SpherePoint::origin()), Err(Error::NoBlowUp)));
    }

    #[test]
    fn aitken_on_complex_geometric_sequence() {
        let l = C::new(1.0, -2.0);
        let q = C::new(0.3, 0.1);
        let x: Vec<C> = (0..3).map(|k| l + q.powi(k) * C::new(0.5, 0.5)).collect();
        assert!((caitken(&x) - l).norm() < 1e-13);
    }
}
