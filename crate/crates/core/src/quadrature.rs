//! Adaptive tensor Gauss–Legendre cubature on rectangles with bisection driven by a
//! global error heap.

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};
use std::cmp::Ordering;
use std::collections::BinaryHeap;
use std::sync::OnceLock;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub value: f64,
    pub error: f64,
}

impl Estimate {
    pub fn zero() -> Self {
        Estimate { value: 0.0, error: 0.0 }
    }

    pub fn add(self, o: Estimate, sign: f64) -> Estimate {
        Estimate { value: self.value + sign * o.value, error: self.error + o.error }
    }
}

/// Nodes and weights of the n-point rule on [-1, 1].
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut x = vec![0.0; n];
    let mut w = vec![0.0; n];
    for i in 0..(n + 1) / 2 {
        let mut z = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, 0.0);
            for j in 0..n {
                let p2 = p1;
                p1 = p0;
                p0 = ((2 * j + 1) as f64 * z * p1 - j as f64 * p2) / (j + 1) as f64;
            }
            dp = n as f64 * (z * p0 - p1) / (z * z - 1.0);
            let dz = p0 / dp;
            z -= dz;
            if dz.abs() < 1e-16 {
                break;
            }
        }
        x[i] = -z;
        x[n - 1 - i] = z;
        w[i] = 2.0 / ((1.0 - z * z) * dp * dp);
        w[n - 1 - i] = w[i];
    }
    (x, w)
}

struct Rules {
    hi: (Vec<f64>, Vec<f64>),
    lo: (Vec<f64>, Vec<f64>),
}

fn rules() -> &'static Rules {
    static R: OnceLock<Rules> = OnceLock::new();
    R.get_or_init(|| Rules { hi: gauss_legendre(10), lo: gauss_legendre(6) })
}

#[derive(Clone, Copy, Debug)]
pub struct Cell {
    pub x0: f64,
    pub x1: f64,
    pub y0: f64,
    pub y1: f64,
}

struct Scored {
    cell: Cell,
    value: f64,
    error: f64,
    depth: u32,
}

impl PartialEq for Scored {
    fn eq(&self, o: &Self) -> bool {
        self.error == o.error
    }
}
impl Eq for Scored {}
impl PartialOrd for Scored {
    fn partial_cmp(&self, o: &Self) -> Option<Ordering> {
        Some(self.cmp(o))
    }
}
impl Ord for Scored {
    fn cmp(&self, o: &Self) -> Ordering {
        self.error.total_cmp(&o.error)
    }
}

fn tensor(f: &dyn Fn(f64, f64) -> f64, c: &Cell, rule: &(Vec<f64>, Vec<f64>)) -> f64 {
    let (hx, mx) = (0.5 * (c.x1 - c.x0), 0.5 * (c.x1 + c.x0));
    let (hy, my) = (0.5 * (c.y1 - c.y0), 0.5 * (c.y1 + c.y0));
    let mut s = 0.0;
    for (xi, wi) in rule.0.iter().zip(&rule.1) {
        let x = mx + hx * xi;
        let mut row = 0.0;
        for (yj, wj) in rule.0.iter().zip(&rule.1) {
            row += wj * f(x, my + hy * yj);
        }
        s += wi * row;
    }
    s * hx * hy
}

fn score(f: &dyn Fn(f64, f64) -> f64, cell: Cell, depth: u32) -> Scored {
    let r = rules();
    let hi = tensor(f, &cell, &r.hi);
    let lo = tensor(f, &cell, &r.lo);
    Scored { cell, value: hi, error: (hi - lo).abs(), depth }
}

pub const MAX_CELLS: usize = 40_000;
const MAX_DEPTH: u32 = 60;

/// Integrates `f` over the union of `cells` until the summed error estimate is at most
/// `rel_tol · |I| + abs_tol`.
pub fn adaptive(f: &dyn Fn(f64, f64) -> f64, cells: &[Cell], rel_tol: f64, abs_tol: f64) -> Result<Estimate> {
    let mut heap: BinaryHeap<Scored> = cells.iter().map(|&c| score(f, c, 0)).collect();
    let mut count = heap.len();
    let mut total: f64 = heap.iter().map(|s| s.value).sum();
    let mut err: f64 = heap.iter().map(|s| s.error).sum();
    let mut since_resum = 0usize;
    loop {
        if !total.is_finite() || !err.is_finite() {
            return Err(Error::NonFinite("integrand".into()));
        }
        if err <= rel_tol * total.abs() + abs_tol || count >= MAX_CELLS || since_resum >= 256 {
            // Running sums drift; confirm with exact sums.
            total = heap.iter().map(|s| s.value).sum();
            err = heap.iter().map(|s| s.error).sum();
            since_resum = 0;
            if err <= rel_tol * total.abs() + abs_tol {
                return Ok(Estimate { value: total, error: err });
            }
            if count >= MAX_CELLS {
                return Err(Error::Quadrature { estimate: total, error: err });
            }
        }
        let worst = heap.pop().unwrap();
        if worst.depth >= MAX_DEPTH {
            return Err(Error::Quadrature { estimate: total, error: err });
        }
        total -= worst.value;
        err -= worst.error;
        let c = worst.cell;
        let (xm, ym) = (0.5 * (c.x0 + c.x1), 0.5 * (c.y0 + c.y1));
        for sub in [
            Cell { x0: c.x0, x1: xm, y0: c.y0, y1: ym },
            Cell { x0: xm, x1: c.x1, y0: c.y0, y1: ym },
            Cell { x0: c.x0, x1: xm, y0: ym, y1: c.y1 },
            Cell { x0: xm, x1: c.x1, y0: ym, y1: c.y1 },
        ] {
            let sc = score(f, sub, worst.depth + 1);
            total += sc.value;
            err += sc.error;
            heap.push(sc);
        }
        count += 3;
        since_resum += 1;
    }
}

/// Cells covering `r0 ≤ ρ ≤ r1`, `0 ≤ θ ≤ 2π` with geometric radial spacing.
pub fn polar_cells(r0: f64, r1: f64) -> Vec<Cell> {
    let mut radii = vec![r1];
    if r0 == 0.0 {
        let mut r = r1;
        for _ in 0..4 {
            r /= 4.0;
            radii.push(r);
        }
        radii.push(0.0);
    } else {
        let steps = ((r1 / r0).ln() / 4f64.ln()).ceil().clamp(1.0, 8.0) as usize;
        let q = (r0 / r1).powf(1.0 / steps as f64);
        let mut r = r1;
        for _ in 0..steps - 1 {
            r *= q;
            radii.push(r);
        }
        radii.push(r0);
    }
    radii.reverse();
    let sectors = 4;
    let mut cells = Vec::new();
    for w in radii.windows(2) {
        for k in 0..sectors {
            let a = 2.0 * std::f64::consts::PI * k as f64 / sectors as f64;
            let b = 2.0 * std::f64::consts::PI * (k + 1) as f64 / sectors as f64;
            cells.push(Cell { x0: w[0], x1: w[1], y0: a, y1: b });
        }
    }
    cells
}
