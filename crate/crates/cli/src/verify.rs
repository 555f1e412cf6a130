//! Randomized verification suites behind `supercurve verify`.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;
use supercurve::energy::{energy_curve, energy_section, Region};
use supercurve::fields::{
    gaussian, make_instance, random_curve, random_poly, random_section, residual_global, CatalogKind, Connection, Diff,
    Grid, LocalPair, PlanarDomain,
};
use supercurve::inequalities::{isoperimetric_check, mvi1_check, mvi2_check, random_instance, CheckOptions};
use supercurve::poly::Poly;
use supercurve::{LineBundle, Moebius, SpherePoint, C};

use crate::output::{float, Table};

#[derive(Clone, Copy, Debug, PartialEq, Eq, clap::ValueEnum)]
pub enum Suite {
    Invariance,
    Mvi,
    Isoperimetric,
    Residuals,
}

#[derive(Clone, Debug)]
pub struct SuiteOptions {
    pub count: usize,
    pub seed: u64,
    pub rel_tol: f64,
    pub grid: usize,
    /// Constant of the isoperimetric suite.
    pub constant: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct Summary {
    pub suite: String,
    pub count: usize,
    pub passed: usize,
    pub failed: usize,
    /// Instances whose hypotheses did not hold; counted as neither pass nor fail.
    pub skipped: usize,
    pub errors: usize,
    pub worst: f64,
}

enum Outcome {
    Pass(f64),
    Fail(f64),
    Skip,
}

struct Row {
    outcome: Result<Outcome, String>,
    cells: Vec<String>,
}

pub fn run(suite: Suite, o: &SuiteOptions) -> (Summary, Table) {
    let (header, f): (Vec<&'static str>, fn(usize, u64, &SuiteOptions) -> Row) = match suite {
        Suite::Invariance => (vec!["index", "seed", "degree", "d", "e_phi", "e_phi_pulled", "e_psi", "e_psi_pulled"], invariance),
        Suite::Mvi => (vec!["index", "seed", "r", "mvi1_lhs", "mvi1_rhs", "mvi2_lhs", "mvi2_rhs", "hypotheses"], mvi),
        Suite::Isoperimetric => (vec!["index", "seed", "r", "lhs", "rhs"], isoperimetric),
        Suite::Residuals => (vec!["index", "instance", "d", "exact_phi", "exact_psi", "central_phi", "central_psi", "slope_phi", "slope_psi"], residuals),
    };
    let rows: Vec<Row> = (0..o.count).into_par_iter().map(|i| f(i, o.seed.wrapping_add(i as u64), o)).collect();
    let mut table = Table::new(header.into_iter().chain(["status"]).collect());
    let mut s = Summary {
        suite: format!("{suite:?}").to_lowercase(),
        count: o.count,
        passed: 0,
        failed: 0,
        skipped: 0,
        errors: 0,
        worst: 0.0,
    };
    for mut r in rows {
        let status = match r.outcome {
            Ok(Outcome::Pass(m)) => {
                s.passed += 1;
                s.worst = s.worst.max(m);
                "pass".to_string()
            }
            Ok(Outcome::Fail(m)) => {
                s.failed += 1;
                s.worst = s.worst.max(m);
                "fail".to_string()
            }
            Ok(Outcome::Skip) => {
                s.skipped += 1;
                "skip".to_string()
            }
            Err(e) => {
                s.errors += 1;
                format!("error: {e}")
            }
        };
        r.cells.resize(table.header.len() - 1, String::new());
        r.cells.push(status);
        table.push(r.cells);
    }
    (s, table)
}

impl Summary {
    pub fn ok(&self) -> bool {
        self.failed == 0 && self.errors == 0
    }
}

fn random_moebius(rng: &mut ChaCha8Rng) -> Moebius {
    loop {
        if let Ok(m) = Moebius::new(gaussian(rng), gaussian(rng), gaussian(rng), gaussian(rng)) {
            if m.frobenius_sqr() < 30.0 {
                return m;
            }
        }
    }
}

/// Energies of `φ`, `ψ` on a random disc against `φ ∘ m`, `ψ ∘ m` on its preimage.
fn invariance(i: usize, seed: u64, o: &SuiteOptions) -> Row {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let degree = rng.gen_range(1..=3usize);
    let d = if rng.gen_bool(0.5) { -1 } else { -2 };
    let curve = random_curve(&mut rng, 1, degree);
    let section = random_section(&mut rng, &curve, LineBundle::new(d).unwrap(), 1.0);
    let m = random_moebius(&mut rng);
    let center = SpherePoint::finite(gaussian(&mut rng) * 0.5);
    let region = Region::disc(center, rng.gen_range(0.3..1.5));
    let mut cells = vec![i.to_string(), seed.to_string(), degree.to_string(), d.to_string()];
    let outcome = (|| -> supercurve::Result<Outcome> {
        let pre = region.preimage(&m)?;
        let a = energy_curve(&curve, &region, o.rel_tol)?.value;
        let b = energy_curve(&curve.pullback(&m), &pre, o.rel_tol)?.value;
        let c = energy_section(&section, &region, o.rel_tol)?.value;
        let e = energy_section(&section.pullback(&m), &pre, o.rel_tol)?.value;
        cells.extend([a, b, c, e].map(float));
        let gap = ((a - b).abs() / a.abs().max(1.0)).max((c - e).abs() / c.abs().max(1.0));
        Ok(if gap <= 1e-6 { Outcome::Pass(gap) } else { Outcome::Fail(gap) })
    })();
    Row { outcome: outcome.map_err(|e| e.to_string()), cells }
}

fn mvi(i: usize, seed: u64, o: &SuiteOptions) -> Row {
    let mut cells = vec![i.to_string(), seed.to_string()];
    let outcome = (|| -> supercurve::Result<Outcome> {
        let inst = random_instance(seed)?;
        let opts = CheckOptions { grid: o.grid, rel_tol: o.rel_tol, ..Default::default() };
        let a = mvi1_check(&inst.lp, inst.r, &opts)?;
        let b = mvi2_check(&inst.lp, inst.r, &opts)?;
        let hyp = a.hypotheses_hold() && b.hypotheses_hold();
        cells.extend([inst.r, a.lhs, a.rhs, b.lhs, b.rhs].map(float));
        cells.push(hyp.to_string());
        let ratio = (a.lhs / a.rhs).max(b.lhs / b.rhs);
        Ok(if !hyp {
            Outcome::Skip
        } else if a.pass && b.pass {
            Outcome::Pass(ratio)
        } else {
            Outcome::Fail(ratio)
        })
    })();
    Row { outcome: outcome.map_err(|e| e.to_string()), cells }
}

/// Random holomorphic `ψ` in `C` or `C²` on a disc of radius 2.
fn isoperimetric(i: usize, seed: u64, o: &SuiteOptions) -> Row {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = rng.gen_range(1..=2usize);
    let psi: Vec<Poly> = (0..n)
        .map(|_| {
            let deg = rng.gen_range(1..=3usize);
            random_poly(&mut rng, deg, 1.0)
        })
        .collect();
    let phi = vec![Poly::monomial(1, C::new(1.0, 0.0)); n];
    let r: f64 = rng.gen_range(0.2..1.0);
    let lp = LocalPair::flat_polynomial(PlanarDomain::Disc { cs: 0.0, ct: 0.0, r: 2.0 }, phi, psi);
    let mut cells = vec![i.to_string(), seed.to_string(), float(r)];
    let outcome = (|| -> supercurve::Result<Outcome> {
        let rep = isoperimetric_check(&lp, None, r, o.constant, o.rel_tol.min(1e-10))?;
        cells.extend([rep.lhs, rep.rhs].map(float));
        let ratio = if rep.rhs > 0.0 { rep.lhs / rep.rhs } else { f64::INFINITY };
        Ok(if rep.pass { Outcome::Pass(ratio) } else { Outcome::Fail(ratio) })
    })();
    Row { outcome: outcome.map_err(|e| e.to_string()), cells }
}

pub const RESIDUAL_TOLERANCE: f64 = 1e-6;
/// Below this the difference quotients are dominated by roundoff and no slope is fitted.
pub const RESIDUAL_FLOOR: f64 = 1e-9;

fn catalog_entry(i: usize, seed: u64) -> CatalogKind {
    match i % 4 {
        0 => CatalogKind::Identity,
        1 => CatalogKind::Power { k: 1 + (i / 4) % 5 },
        2 => CatalogKind::Bubble { eps: 10f64.powi(-(((i / 4) % 4) as i32)) },
        _ => CatalogKind::RandomRational { degree: 1 + (i / 4) % 3, seed },
    }
}

/// Catalog instances: the exact-derivative residual is at most `RESIDUAL_TOLERANCE` and the
/// central-difference residual decays like `h²` between `h = 1e-3` and `h/2`.
fn residuals(i: usize, seed: u64, _o: &SuiteOptions) -> Row {
    let kind = catalog_entry(i, seed);
    let d = if (i / 2) % 2 == 0 { -1 } else { -2 };
    let mut cells = vec![i.to_string(), serde_json::to_string(&kind).unwrap(), d.to_string()];
    let outcome = (|| -> supercurve::Result<Outcome> {
        let (curve, section) = make_instance(kind, d)?;
        let grid = Grid::square(1.0, 9);
        let at = |diff| residual_global(&curve, &section, Connection::LeviCivita, &grid, diff);
        let (exact, coarse, fine) = (at(Diff::Exact)?, at(Diff::Central(1e-3))?, at(Diff::Central(5e-4))?);
        let slope = |a: f64, b: f64| if b <= RESIDUAL_FLOOR { 2.0 } else { (a / b).log2() };
        let (sp, ss) = (slope(coarse.phi, fine.phi), slope(coarse.psi, fine.psi));
        cells.extend([exact.phi, exact.psi, coarse.phi, coarse.psi, sp, ss].map(float));
        let worst = exact.phi.max(exact.psi);
        let ok = worst <= RESIDUAL_TOLERANCE && (sp - 2.0).abs() <= 0.1 && (ss - 2.0).abs() <= 0.1;
        Ok(if ok { Outcome::Pass(worst) } else { Outcome::Fail(worst) })
    })();
    Row { outcome: outcome.map_err(|e| e.to_string()), cells }
}

pub fn default_constant() -> f64 {
    1.0 / (4.0 * PI)
}
