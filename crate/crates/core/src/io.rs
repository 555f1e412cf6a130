//! JSON records for curves, sections, stable supercurves and reports.
//!
//! Complex numbers are `[re, im]` pairs and polynomials are coefficient lists in
//! increasing degree. Vertices and labels in stable-curve files are 1-based.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::bubbling::{BubblePoint, BubbleReport, Fit};
use crate::error::{Error, Result};
use crate::fields::{GlobalCurve, SuperSection, Target};
use crate::geometry::{Chart, LineBundle, Moebius, SpherePoint, C};
use crate::moduli::{LabelledTree, StableSupercurve};
use crate::poly::Poly;

type Coeffs = Vec<[f64; 2]>;

fn poly_of(c: &Coeffs) -> Poly {
    Poly::new(c.iter().map(|&[re, im]| C::new(re, im)).collect())
}

fn coeffs_of(p: &Poly) -> Coeffs {
    p.coeffs.iter().map(|c| [c.re, c.im]).collect()
}

fn at(path: &str, e: Error) -> Error {
    Error::Invalid(format!("{path}: {e}"))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CurveRecord {
    /// `projective` (homogeneous components) or `flat` (constant value).
    pub target: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub degree: Option<usize>,
    pub components: Vec<Coeffs>,
}

impl CurveRecord {
    pub fn from_curve(curve: &GlobalCurve) -> Self {
        let target = match curve.target() {
            Target::Flat(_) => "flat",
            Target::Projective(_) => "projective",
        };
        CurveRecord { target: target.into(), degree: Some(curve.degree()), components: curve.components().iter().map(coeffs_of).collect() }
    }

    pub fn to_curve(&self) -> Result<GlobalCurve> {
        let curve = match self.target.as_str() {
            "projective" => GlobalCurve::projective(self.components.iter().map(poly_of).collect()).map_err(|e| at("curve.components", e))?,
            "flat" => {
                let mut value = Vec::new();
                for (i, c) in self.components.iter().enumerate() {
                    if c.len() > 1 && c[1..].iter().any(|x| x[0] != 0.0 || x[1] != 0.0) {
                        return Err(Error::Invalid(format!("curve.components[{i}]: flat curves on S² are constant")));
                    }
                    let [re, im] = c.first().copied().unwrap_or([0.0, 0.0]);
                    value.push(C::new(re, im));
                }
                GlobalCurve::flat(value).map_err(|e| at("curve.components", e))?
            }
            other => return Err(Error::Invalid(format!("curve.target: unknown target `{other}` (expected projective or flat)"))),
        };
        if let Some(d) = self.degree {
            if d != curve.degree() {
                return Err(Error::Invalid(format!("curve.degree: declared {d}, components have degree {}", curve.degree())));
            }
        }
        Ok(curve)
    }
}

/// A curve with a section. The section is given either as a polynomial vector
/// representative or through its wedge components; omitting both means `ψ = 0`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InstanceRecord {
    pub curve: CurveRecord,
    pub bundle: i32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub vector: Option<Vec<Coeffs>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub wedge: Option<Vec<Coeffs>>,
}

impl InstanceRecord {
    pub fn from_section(section: &SuperSection) -> Self {
        let wedge = if section.is_zero() { None } else { Some(section.wedge_components(Chart::Zero).iter().map(coeffs_of).collect()) };
        InstanceRecord { curve: CurveRecord::from_curve(section.curve()), bundle: section.bundle().degree(), vector: None, wedge }
    }

    pub fn to_section(&self) -> Result<SuperSection> {
        let curve = self.curve.to_curve()?;
        let bundle = LineBundle::new(self.bundle).map_err(|e| at("bundle", e))?;
        match (&self.vector, &self.wedge) {
            (Some(_), Some(_)) => Err(Error::Invalid("section: give either `vector` or `wedge`, not both".into())),
            (Some(v), None) => SuperSection::from_vector(&curve, bundle, v.iter().map(poly_of).collect()).map_err(|e| at("vector", e)),
            (None, Some(w)) => SuperSection::from_wedge(&curve, bundle, w.iter().map(poly_of).collect()).map_err(|e| at("wedge", e)),
            (None, None) => Ok(SuperSection::zero(&curve, bundle)),
        }
    }
}

/// `"inf"`, a finite `[re, im]`, or an explicit chart coordinate.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum PointRecord {
    Named(String),
    Finite([f64; 2]),
    Chart { chart: u8, z: [f64; 2] },
}

impl PointRecord {
    pub fn from_point(p: &SpherePoint) -> Self {
        PointRecord::Chart { chart: p.chart.index() as u8, z: [p.z.re, p.z.im] }
    }

    pub fn to_point(&self) -> Result<SpherePoint> {
        match self {
            PointRecord::Named(s) if s == "inf" || s == "infinity" => Ok(SpherePoint::infinity()),
            PointRecord::Named(s) => Err(Error::InvalidPoint(format!("unknown point name `{s}`"))),
            PointRecord::Finite([re, im]) => {
                let z = C::new(*re, *im);
                if !z.is_finite() {
                    return Err(Error::InvalidPoint("non-finite coordinate".into()));
                }
                Ok(SpherePoint::finite(z))
            }
            PointRecord::Chart { chart, z } => {
                let chart = match chart {
                    0 => Chart::Zero,
                    1 => Chart::One,
                    c => return Err(Error::InvalidPoint(format!("chart must be 0 or 1, got {c}"))),
                };
                SpherePoint::new(chart, C::new(z[0], z[1]))
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TreeRecord {
    pub parent_vector: Vec<usize>,
    #[serde(default)]
    pub labels: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NodalRecord {
    pub edge: [usize; 2],
    pub point: PointRecord,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StableRecord {
    pub tree: TreeRecord,
    pub components: Vec<InstanceRecord>,
    #[serde(default)]
    pub nodal: Vec<NodalRecord>,
    #[serde(default)]
    pub marked: Vec<PointRecord>,
}

impl StableRecord {
    pub fn from_stable(x: &StableSupercurve) -> Self {
        let (parent_vector, labels) = x.tree.encode();
        StableRecord {
            tree: TreeRecord { parent_vector, labels },
            components: x.components.iter().map(InstanceRecord::from_section).collect(),
            nodal: x.nodal.iter().map(|(&(a, b), p)| NodalRecord { edge: [a + 1, b + 1], point: PointRecord::from_point(p) }).collect(),
            marked: x.marked.iter().map(PointRecord::from_point).collect(),
        }
    }

    pub fn to_stable(&self) -> Result<StableSupercurve> {
        let tree = LabelledTree::decode(&self.tree.parent_vector, &self.tree.labels).map_err(|e| at("tree", e))?;
        let components = self
            .components
            .iter()
            .enumerate()
            .map(|(i, c)| c.to_section().map_err(|e| at(&format!("components[{i}]"), e)))
            .collect::<Result<Vec<_>>>()?;
        let mut nodal = BTreeMap::new();
        for (i, n) in self.nodal.iter().enumerate() {
            if n.edge[0] < 1 || n.edge[1] < 1 {
                return Err(Error::Invalid(format!("nodal[{i}].edge: vertices are 1-based")));
            }
            let p = n.point.to_point().map_err(|e| at(&format!("nodal[{i}].point"), e))?;
            if nodal.insert((n.edge[0] - 1, n.edge[1] - 1), p).is_some() {
                return Err(Error::Invalid(format!("nodal[{i}].edge: duplicate edge")));
            }
        }
        let marked = self
            .marked
            .iter()
            .enumerate()
            .map(|(i, p)| p.to_point().map_err(|e| at(&format!("marked[{i}]"), e)))
            .collect::<Result<Vec<_>>>()?;
        StableSupercurve::new(tree, components, nodal, marked)
    }
}

pub fn moebius_record(m: &Moebius) -> [f64; 8] {
    m.to_reals()
}

fn parse<T: for<'de> Deserialize<'de>>(text: &str) -> Result<T> {
    serde_json::from_str(text).map_err(|e| Error::Invalid(format!("parse error: {e}")))
}

pub fn parse_instance(text: &str) -> Result<SuperSection> {
    parse::<InstanceRecord>(text)?.to_section()
}

pub fn parse_stable(text: &str) -> Result<StableSupercurve> {
    parse::<StableRecord>(text)?.to_stable()
}

pub fn instance_json(section: &SuperSection) -> Value {
    serde_json::to_value(InstanceRecord::from_section(section)).unwrap()
}

pub fn stable_json(x: &StableSupercurve) -> Value {
    serde_json::to_value(StableRecord::from_stable(x)).unwrap()
}

fn fit_json(f: &Fit) -> Value {
    json!({
        "instance": instance_json(&f.section),
        "degree": f.degree,
        "residual": f.residual,
        "section_residual": f.section_residual,
        "converged": f.converged,
    })
}

fn point_json(p: &BubblePoint) -> Value {
    json!({
        "center": PointRecord::from_point(&p.center),
        "profile": p.profile,
        "rescaling": p.rescaling,
        "fit": p.fit.as_ref().map(fit_json),
        "conservation": p.conservation,
        "annulus_psi": p.annulus_psi,
        "secondary": p.secondary.iter().map(point_json).collect::<Vec<_>>(),
        "note": p.note,
    })
}

pub fn bubble_report_json(r: &BubbleReport) -> Value {
    json!({
        "family": r.family,
        "hbar": r.hbar,
        "points": r.points.iter().map(point_json).collect::<Vec<_>>(),
        "limit": r.limit.as_ref().map(fit_json),
        "connect": r.connect,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fields::{bubble_curve, random_curve, random_section};
    use crate::moduli::bubble_tree_limit;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn instance_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let b = LineBundle::new(-1).unwrap();
        let curve = random_curve(&mut rng, 2, 2);
        let s = random_section(&mut rng, &curve, b, 1.0);
        let text = instance_json(&s).to_string();
        let back = parse_instance(&text).unwrap();
        assert_eq!(back, s);
    }

    #[test]
    fn stable_round_trip() {
        let x = bubble_tree_limit(LineBundle::new(-2).unwrap());
        let back = parse_stable(&stable_json(&x).to_string()).unwrap();
        assert_eq!(back.tree, x.tree);
        assert_eq!(back.nodal, x.nodal);
        assert_eq!(back.marked, x.marked);
        assert_eq!(back.components, x.components);
    }

    #[test]
    fn errors_name_the_field() {
        let e = parse_instance(r#"{"curve": {"target": "projective", "components": [[[1,0]], [[0,0],[1,0]]]}, "bundle": 0}"#).unwrap_err();
        assert!(e.to_string().contains("bundle"), "{e}");
        let e = parse_instance(r#"{"curve": {"target": "sphere", "components": []}, "bundle": -1}"#).unwrap_err();
        assert!(e.to_string().contains("curve.target"), "{e}");
        let e = parse_instance(r#"{"curve": {"target": "projective", "components": [[[1,0]]]}, "bundl": -1}"#).unwrap_err();
        assert!(e.to_string().contains("bundl"), "{e}");
    }

    #[test]
    fn point_forms() {
        let p: PointRecord = serde_json::from_str("\"inf\"").unwrap();
        assert!(p.to_point().unwrap().is_infinity());
        let p: PointRecord = serde_json::from_str("[2.0, 0.0]").unwrap();
        assert_eq!(p.to_point().unwrap(), SpherePoint::finite(C::new(2.0, 0.0)));
        let s = SuperSection::zero(&bubble_curve(0.1).unwrap(), LineBundle::new(-1).unwrap());
        assert!(instance_json(&s).get("wedge").is_none());
    }
}
