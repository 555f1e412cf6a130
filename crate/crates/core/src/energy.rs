//! Regions of S², quadrature of scalar densities, curve/section/local energies and
//! ε-ball mass profiles.

use crate::error::{Error, Result};
use crate::fields::{GlobalCurve, LocalPair, PlanarDomain, SuperSection};
use crate::geometry::{sphere_density, Chart, Moebius, SpherePoint, C};
use crate::quadrature::{adaptive, polar_cells, Cell, Estimate};
use serde::{Deserialize, Serialize};

pub const DEFAULT_REL_TOL: f64 = 1e-8;
const ABS_FLOOR: f64 = 1e-15;

/// `{x ∈ S² : axis · x ≥ h}` on the unit sphere.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Cap {
    pub axis: [f64; 3],
    pub h: f64,
}

fn dot(a: [f64; 3], b: [f64; 3]) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

fn cross(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]]
}

fn sub(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

impl Cap {
    /// Cap bounded by the circle through three points, on the side of `inside`.
    pub fn through(b: [SpherePoint; 3], inside: &SpherePoint) -> Result<Cap> {
        let v: Vec<[f64; 3]> = b.iter().map(|p| p.to_unit_vector()).collect();
        let n = cross(sub(v[1], v[0]), sub(v[2], v[0]));
        let len = dot(n, n).sqrt();
        if !(len > 0.0) || !len.is_finite() {
            return Err(Error::Invalid("degenerate circle".into()));
        }
        let n = [n[0] / len, n[1] / len, n[2] / len];
        let h = (dot(n, v[0]) + dot(n, v[1]) + dot(n, v[2])) / 3.0;
        let x = inside.to_unit_vector();
        if dot(n, x) >= h {
            Ok(Cap { axis: n, h })
        } else {
            Ok(Cap { axis: [-n[0], -n[1], -n[2]], h: -h })
        }
    }

    /// The chart disc `|z − c| < r` as a cap.
    pub fn from_disc(center: &SpherePoint, r: f64) -> Result<Cap> {
        let at = |k: f64| {
            let z = center.z + C::from_polar(r, 2.0 * std::f64::consts::PI * k / 3.0);
            SpherePoint { chart: center.chart, z }
        };
        Cap::through([at(0.0), at(1.0), at(2.0)], center)
    }

    pub fn contains(&self, p: &SpherePoint) -> bool {
        dot(self.axis, p.to_unit_vector()) >= self.h
    }

    /// Center on the sphere.
    pub fn center(&self) -> SpherePoint {
        SpherePoint::from_unit_vector(self.axis)
    }

    fn boundary_points(&self) -> [SpherePoint; 3] {
        let n = self.axis;
        let t = if n[0].abs() < 0.9 { [1.0, 0.0, 0.0] } else { [0.0, 1.0, 0.0] };
        let u = cross(n, t);
        let ul = dot(u, u).sqrt();
        let u = [u[0] / ul, u[1] / ul, u[2] / ul];
        let v = cross(n, u);
        let s = (1.0 - self.h * self.h).max(0.0).sqrt();
        let at = |k: f64| {
            let a = 2.0 * std::f64::consts::PI * k / 3.0;
            let (c, si) = (a.cos(), a.sin());
            SpherePoint::from_unit_vector([
                self.h * n[0] + s * (c * u[0] + si * v[0]),
                self.h * n[1] + s * (c * u[1] + si * v[1]),
                self.h * n[2] + s * (c * u[2] + si * v[2]),
            ])
        };
        [at(0.0), at(1.0), at(2.0)]
    }

    /// Image under `m`.
    pub fn image(&self, m: &Moebius) -> Result<Cap> {
        let b = self.boundary_points().map(|p| m.apply(&p));
        Cap::through(b, &m.apply(&self.center()))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Region {
    Sphere,
    /// Coordinate disc `|z − center| < radius` in the center's chart.
    Disc { center: SpherePoint, radius: f64 },
    Annulus { center: SpherePoint, inner: f64, outer: f64 },
    /// Sphere minus pairwise disjoint coordinate discs.
    Complement { discs: Vec<(SpherePoint, f64)> },
    /// `[sphere] + Σ sign · cap`, used for Moebius images.
    Caps { sphere: bool, terms: Vec<(f64, Cap)> },
}

impl Region {
    pub fn disc(center: SpherePoint, radius: f64) -> Region {
        Region::Disc { center, radius }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = match self {
            Region::Sphere => true,
            Region::Disc { center, radius } => *radius > 0.0 && center.is_valid(),
            Region::Annulus { center, inner, outer } => *inner > 0.0 && inner < outer && center.is_valid(),
            Region::Complement { discs } => discs.iter().all(|(c, r)| *r > 0.0 && c.is_valid()),
            Region::Caps { terms, .. } => terms.iter().all(|(_, c)| c.h.abs() < 1.0),
        };
        if ok {
            Ok(())
        } else {
            Err(Error::Invalid(format!("malformed region {self:?}")))
        }
    }

    pub fn contains(&self, p: &SpherePoint) -> bool {
        let in_disc = |c: &SpherePoint, r: f64| p.coord(c.chart).map_or(false, |z| (z - c.z).norm() < r);
        match self {
            Region::Sphere => true,
            Region::Disc { center, radius } => in_disc(center, *radius),
            Region::Annulus { center, inner, outer } => in_disc(center, *outer) && !in_disc(center, *inner) && p.coord(center.chart).map_or(false, |z| (z - center.z).norm() > *inner),
            Region::Complement { discs } => !discs.iter().any(|(c, r)| in_disc(c, *r)),
            Region::Caps { sphere, terms } => {
                let s: f64 = (*sphere as i32 as f64) + terms.iter().filter(|(_, c)| c.contains(p)).map(|(s, _)| s).sum::<f64>();
                s > 0.5
            }
        }
    }

    /// Signed cap decomposition.
    pub fn to_caps(&self) -> Result<(bool, Vec<(f64, Cap)>)> {
        Ok(match self {
            Region::Sphere => (true, vec![]),
            Region::Disc { center, radius } => (false, vec![(1.0, Cap::from_disc(center, *radius)?)]),
            Region::Annulus { center, inner, outer } => {
                (false, vec![(1.0, Cap::from_disc(center, *outer)?), (-1.0, Cap::from_disc(center, *inner)?)])
            }
            Region::Complement { discs } => {
                let mut v = Vec::new();
                for (c, r) in discs {
                    v.push((-1.0, Cap::from_disc(c, *r)?));
                }
                (true, v)
            }
            Region::Caps { sphere, terms } => (*sphere, terms.clone()),
        })
    }

    /// `m(U)`.
    pub fn image(&self, m: &Moebius) -> Result<Region> {
        let (sphere, terms) = self.to_caps()?;
        let mut out = Vec::new();
        for (s, c) in terms {
            out.push((s, c.image(m)?));
        }
        Ok(Region::Caps { sphere, terms: out })
    }

    /// `m^{-1}(U)`.
    pub fn preimage(&self, m: &Moebius) -> Result<Region> {
        self.image(&m.inverse())
    }
}

struct Piece {
    rot: Option<Moebius>,
    chart: Chart,
    center: C,
    r0: f64,
    r1: f64,
    sign: f64,
}

fn sphere_pieces(sign: f64) -> Vec<Piece> {
    [Chart::Zero, Chart::One]
        .into_iter()
        .map(|chart| Piece { rot: None, chart, center: C::new(0.0, 0.0), r0: 0.0, r1: 1.0, sign })
        .collect()
}

fn cap_pieces(sign: f64, cap: &Cap) -> Vec<Piece> {
    if cap.h >= 0.0 {
        // angular radius α with cos α = h; chart radius tan(α/2)
        let rho = ((1.0 - cap.h) / (1.0 + cap.h)).sqrt();
        let rot = Moebius::centering(&cap.center());
        vec![Piece { rot: Some(rot), chart: Chart::Zero, center: C::new(0.0, 0.0), r0: 0.0, r1: rho, sign }]
    } else {
        let mut v = sphere_pieces(sign);
        v.extend(cap_pieces(-sign, &Cap { axis: [-cap.axis[0], -cap.axis[1], -cap.axis[2]], h: -cap.h }));
        v
    }
}

fn pieces(region: &Region) -> Result<Vec<Piece>> {
    region.validate()?;
    Ok(match region {
        Region::Sphere => sphere_pieces(1.0),
        Region::Disc { center, radius } => vec![Piece { rot: None, chart: center.chart, center: center.z, r0: 0.0, r1: *radius, sign: 1.0 }],
        Region::Annulus { center, inner, outer } => {
            vec![Piece { rot: None, chart: center.chart, center: center.z, r0: *inner, r1: *outer, sign: 1.0 }]
        }
        Region::Complement { discs } => {
            let mut v = sphere_pieces(1.0);
            for (c, r) in discs {
                v.push(Piece { rot: None, chart: c.chart, center: c.z, r0: 0.0, r1: *r, sign: -1.0 });
            }
            v
        }
        Region::Caps { sphere, terms } => {
            let mut v = if *sphere { sphere_pieces(1.0) } else { vec![] };
            for (s, c) in terms {
                v.extend(cap_pieces(*s, c));
            }
            v
        }
    })
}

/// Roots whose bubble scale is below this get pre-refined cells.
pub const HINT_CUTOFF: f64 = 0.05;

/// `∫_U f dA` for a scalar `f` given relative to the FS area form.
pub fn integrate(density: &(dyn Fn(&SpherePoint) -> f64 + Sync), region: &Region, rel_tol: f64) -> Result<Estimate> {
    integrate_hinted(density, region, rel_tol, &[])
}

/// Splits the cell containing `(x, y)` until it is no wider than `sx` by `sy`.
fn refine_around(cells: &mut Vec<Cell>, x: f64, y: f64, sx: f64, sy: f64) {
    for _ in 0..80 {
        let Some(i) = cells.iter().position(|c| c.x0 <= x && x <= c.x1 && c.y0 <= y && y <= c.y1) else {
            return;
        };
        let c = cells[i];
        let wide_x = c.x1 - c.x0 > sx;
        let wide_y = c.y1 - c.y0 > sy;
        if !wide_x && !wide_y {
            return;
        }
        cells.swap_remove(i);
        let xm = if wide_x { 0.5 * (c.x0 + c.x1) } else { c.x1 };
        let ym = if wide_y { 0.5 * (c.y0 + c.y1) } else { c.y1 };
        for (x0, x1) in [(c.x0, xm), (xm, c.x1)] {
            for (y0, y1) in [(c.y0, ym), (ym, c.y1)] {
                if x1 > x0 && y1 > y0 {
                    cells.push(Cell { x0, x1, y0, y1 });
                }
            }
        }
    }
}

/// As [`integrate`], with the initial cells pre-refined near `hints` (point, chart scale).
pub fn integrate_hinted(
    density: &(dyn Fn(&SpherePoint) -> f64 + Sync),
    region: &Region,
    rel_tol: f64,
    hints: &[(SpherePoint, f64)],
) -> Result<Estimate> {
    let ps = pieces(region)?;
    // Piece tolerances are apportioned from a rough first pass.
    let mut out = Estimate::zero();
    for p in &ps {
        let f = |rho: f64, theta: f64| {
            let z = p.center + C::from_polar(rho, theta);
            let q = SpherePoint { chart: p.chart, z };
            let q = match &p.rot {
                Some(m) => m.apply(&q),
                None => q,
            };
            density(&q) * sphere_density(z) * rho
        };
        let mut cells = polar_cells(p.r0, p.r1);
        let inv = p.rot.map(|m| m.inverse());
        for (h, s) in hints {
            let q = match &inv {
                Some(m) => m.apply(h),
                None => *h,
            };
            let Some(w) = q.coord(p.chart) else { continue };
            let rel = w - p.center;
            let rho = rel.norm();
            if rho < p.r0 || rho > p.r1 {
                continue;
            }
            // Carry the scale through the FS metric into the piece coordinate.
            let fs = 2.0 * s / (1.0 + h.z.norm_sqr());
            let local = 0.5 * fs * (1.0 + w.norm_sqr());
            let theta = rel.arg().rem_euclid(2.0 * std::f64::consts::PI);
            refine_around(&mut cells, rho, theta, 2.0 * local, 2.0 * local / rho.max(local));
        }
        let e = adaptive(&f, &cells, rel_tol / ps.len() as f64, ABS_FLOOR)?;
        out = out.add(e, p.sign);
    }
    Ok(out)
}

/// `E(φ, U) = ½ ∫_U |dφ|² dvol`.
pub fn energy_curve(curve: &GlobalCurve, region: &Region, rel_tol: f64) -> Result<Estimate> {
    if curve.is_constant() {
        return Ok(Estimate::zero());
    }
    integrate_hinted(&|p| curve.energy_density(p), region, rel_tol, &curve.concentration_hints(HINT_CUTOFF))
}

/// `E(ψ, U) = ½ ∫_U |ψ|^{-4/d} dvol`.
pub fn energy_section(section: &SuperSection, region: &Region, rel_tol: f64) -> Result<Estimate> {
    if section.is_zero() {
        return Ok(Estimate::zero());
    }
    integrate_hinted(&|p| section.energy_density(p), region, rel_tol, &section.curve().concentration_hints(HINT_CUTOFF))
}

/// Flat-metric integral over a planar disc or rectangle.
pub fn integrate_planar(f: &(dyn Fn(f64, f64) -> f64 + Sync), region: &PlanarDomain, rel_tol: f64) -> Result<Estimate> {
    match *region {
        PlanarDomain::Disc { cs, ct, r } => {
            let g = |rho: f64, th: f64| f(cs + rho * th.cos(), ct + rho * th.sin()) * rho;
            adaptive(&g, &polar_cells(0.0, r), rel_tol, ABS_FLOOR)
        }
        PlanarDomain::Rect { s0, s1, t0, t1 } => {
            let g = |s: f64, t: f64| f(s, t);
            let mut cells = Vec::new();
            for i in 0..2 {
                for j in 0..2 {
                    let (a, b) = (s0 + (s1 - s0) * i as f64 / 2.0, s0 + (s1 - s0) * (i + 1) as f64 / 2.0);
                    let (c, d) = (t0 + (t1 - t0) * j as f64 / 2.0, t0 + (t1 - t0) * (j + 1) as f64 / 2.0);
                    cells.push(Cell { x0: a, x1: b, y0: c, y1: d });
                }
            }
            adaptive(&g, &cells, rel_tol, ABS_FLOOR)
        }
    }
}

/// `∫_U |dφ|² + |ψ|² + |dψ|²` with the flat metric; derivative step `h` for opaque fields.
pub fn local_super_energy(lp: &LocalPair, region: &PlanarDomain, rel_tol: f64, h: f64) -> Result<Estimate> {
    let f = |s: f64, t: f64| {
        let (a, b) = lp.dphi(s, t, h);
        let (c, d) = lp.dpsi(s, t, h);
        a.norm_squared() + b.norm_squared() + (lp.psi)(s, t).norm_squared() + c.norm_squared() + d.norm_squared()
    };
    integrate_planar(&f, region, rel_tol)
}

/// Minimum energy over a sample of degree-one rational maps (the sphere area).
pub fn hbar(rel_tol: f64) -> Result<f64> {
    use crate::fields::identity_curve;
    let id = identity_curve();
    let maps = [
        Moebius::identity(),
        Moebius::scaling(C::new(5.0, 0.0))?,
        Moebius::new(C::new(1.0, 0.5), C::new(2.0, 0.0), C::new(-0.3, 0.2), C::new(0.7, -0.1))?,
    ];
    let mut best = f64::INFINITY;
    for m in maps {
        best = best.min(energy_curve(&id.pullback(&m), &Region::Sphere, rel_tol)?.value);
    }
    Ok(best)
}

/// Aitken Δ² on the last three entries; falls back to the last entry.
pub fn aitken(x: &[f64]) -> f64 {
    let n = x.len();
    if n < 3 {
        return *x.last().unwrap_or(&0.0);
    }
    let (a, b, c) = (x[n - 3], x[n - 2], x[n - 1]);
    let den = (c - b) - (b - a);
    if den.abs() <= 1e-14 * (a.abs() + b.abs() + c.abs()) || !den.is_finite() {
        return c;
    }
    let acc = c - (c - b) * (c - b) / den;
    // A sign change of the differences means the ladder is not in its asymptotic regime.
    if (c - b) * (b - a) <= 0.0 {
        return c;
    }
    acc
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct MassProfile {
    pub center: SpherePoint,
    pub epsilons: Vec<f64>,
    pub nus: Vec<f64>,
    /// `raw_phi[i][k] = E(φ^{ν_k}, B_{ε_i}(z₀))`.
    pub raw_phi: Vec<Vec<f64>>,
    pub raw_psi: Vec<Vec<f64>>,
    /// ν-extrapolated masses per ε.
    pub mass_phi: Vec<f64>,
    pub mass_psi: Vec<f64>,
    pub m_phi: f64,
    pub m_psi: f64,
    pub monotone: bool,
}

pub type Member<'a> = dyn Fn(f64) -> Result<(GlobalCurve, SuperSection)> + Sync + 'a;

/// ε-ball masses on a ν ladder, extrapolated ν → ∞ and then ε → 0.
pub fn mass_profile(member: &Member, center: SpherePoint, epsilons: &[f64], nus: &[f64], rel_tol: f64) -> Result<MassProfile> {
    if epsilons.is_empty() || nus.is_empty() {
        return Err(Error::Invalid("empty ladder".into()));
    }
    let members: Vec<(GlobalCurve, SuperSection)> = nus.iter().map(|&nu| member(nu)).collect::<Result<_>>()?;
    let mut raw_phi = Vec::new();
    let mut raw_psi = Vec::new();
    for &eps in epsilons {
        let reg = Region::disc(center, eps);
        let mut rp = Vec::new();
        let mut rs = Vec::new();
        for (g, s) in &members {
            rp.push(energy_curve(g, &reg, rel_tol)?.value);
            rs.push(energy_section(s, &reg, rel_tol)?.value);
        }
        raw_phi.push(rp);
        raw_psi.push(rs);
    }
    let mass_phi: Vec<f64> = raw_phi.iter().map(|r| aitken(r)).collect();
    let mass_psi: Vec<f64> = raw_psi.iter().map(|r| aitken(r)).collect();
    let tol = 1e-8 * (1.0 + mass_phi.iter().chain(&mass_psi).fold(0.0f64, |a, b| a.max(b.abs())));
    let mono = |v: &[f64]| v.windows(2).all(|w| w[1] <= w[0] + tol);
    let monotone = mono(&mass_phi) && mono(&mass_psi);
    let m_phi = aitken(&mass_phi);
    let m_psi = aitken(&mass_psi);
    Ok(MassProfile {
        center,
        epsilons: epsilons.to_vec(),
        nus: nus.to_vec(),
        raw_phi,
        raw_psi,
        mass_phi,
        mass_psi,
        m_phi,
        m_psi,
        monotone,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    #[test]
    fn needle_bubble_is_resolved() {
        use crate::poly::Poly;
        // a/(z − c): a full sphere of energy packed into radius ~a around c
        let (a, c) = (1e-6, 0.02);
        let curve = GlobalCurve::projective(vec![Poly::from_real(&[-c, 1.0]), Poly::from_real(&[a])]).unwrap();
        let e = energy_curve(&curve, &Region::disc(SpherePoint::origin(), 0.05), 1e-8).unwrap();
        assert!((e.value - PI).abs() < 1e-6, "{}", e.value);
        let rot = Moebius::rotation_angle(0.7);
        let caps = Region::disc(SpherePoint::origin(), 0.05).image(&rot).unwrap();
        let e = energy_curve(&curve.pullback(&rot.inverse()), &caps, 1e-8).unwrap();
        assert!((e.value - PI).abs() < 1e-6, "{}", e.value);
    }

    #[test]
    fn sphere_area() {
        let e = integrate(&|_| 1.0, &Region::Sphere, 1e-10).unwrap();
        assert!((e.value - PI).abs() < 1e-8);
    }

    #[test]
    fn cap_from_disc_contains_center() {
        let c = SpherePoint::finite(C::new(0.3, -0.2));
        let cap = Cap::from_disc(&c, 0.1).unwrap();
        assert!(cap.contains(&c));
        assert!(!cap.contains(&SpherePoint::finite(C::new(0.3, 0.0))));
    }

    #[test]
    fn disc_area_matches_closed_form() {
        // ∫_{|z|<r} (1+|z|²)^{-2} = π r² / (1 + r²)
        let r = 0.7;
        let e = integrate(&|_| 1.0, &Region::disc(SpherePoint::origin(), r), 1e-10).unwrap();
        assert!((e.value - PI * r * r / (1.0 + r * r)).abs() < 1e-9);
        let cap = Region::Caps { sphere: false, terms: vec![(1.0, Cap::from_disc(&SpherePoint::origin(), r).unwrap())] };
        let e2 = integrate(&|_| 1.0, &cap, 1e-10).unwrap();
        assert!((e2.value - e.value).abs() < 1e-9);
    }

    #[test]
    fn aitken_is_exact_on_geometric_sequences() {
        let x = [3.0 + 0.5, 3.0 + 0.125, 3.0 + 0.03125];
        assert!((aitken(&x) - 3.0).abs() < 1e-14);
    }
}
