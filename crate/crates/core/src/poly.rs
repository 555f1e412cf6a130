//! Dense complex polynomials, coefficients in ascending order.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

type C = Complex64;

#[derive(Clone, Debug, PartialEq, Default, Serialize, Deserialize)]
pub struct Poly {
    pub coeffs: Vec<C>,
}

impl Poly {
    pub fn new(coeffs: Vec<C>) -> Self {
        let mut p = Poly { coeffs };
        p.trim();
        p
    }

    pub fn zero() -> Self {
        Poly { coeffs: Vec::new() }
    }

    pub fn constant(c: C) -> Self {
        Poly::new(vec![c])
    }

    pub fn monomial(k: usize, c: C) -> Self {
        let mut v = vec![C::new(0.0, 0.0); k + 1];
        v[k] = c;
        Poly::new(v)
    }

    pub fn from_real(c: &[f64]) -> Self {
        Poly::new(c.iter().map(|&x| C::new(x, 0.0)).collect())
    }

    /// Drops exactly-zero leading coefficients.
    fn trim(&mut self) {
        while matches!(self.coeffs.last(), Some(c) if c.re == 0.0 && c.im == 0.0) {
            self.coeffs.pop();
        }
    }

    pub fn is_zero(&self) -> bool {
        self.coeffs.is_empty()
    }

    pub fn degree(&self) -> Option<usize> {
        if self.coeffs.is_empty() {
            None
        } else {
            Some(self.coeffs.len() - 1)
        }
    }

    /// Degree after discarding leading coefficients below `tol` relative to the largest one.
    pub fn effective_degree(&self, tol: f64) -> Option<usize> {
        let m = self.max_abs();
        if m == 0.0 {
            return None;
        }
        (0..self.coeffs.len()).rev().find(|&i| self.coeffs[i].norm() > tol * m)
    }

    pub fn coeff(&self, i: usize) -> C {
        self.coeffs.get(i).copied().unwrap_or_default()
    }

    pub fn max_abs(&self) -> f64 {
        self.coeffs.iter().map(|c| c.norm()).fold(0.0, f64::max)
    }

    pub fn norm_sqr(&self) -> f64 {
        self.coeffs.iter().map(|c| c.norm_sqr()).sum()
    }

    pub fn eval(&self, z: C) -> C {
        self.coeffs.iter().rev().fold(C::new(0.0, 0.0), |acc, &c| acc * z + c)
    }

    /// Value and first derivative by Horner.
    pub fn eval_d(&self, z: C) -> (C, C) {
        let mut p = C::new(0.0, 0.0);
        let mut dp = C::new(0.0, 0.0);
        for &c in self.coeffs.iter().rev() {
            dp = dp * z + p;
            p = p * z + c;
        }
        (p, dp)
    }

    pub fn derivative(&self) -> Poly {
        if self.coeffs.len() <= 1 {
            return Poly::zero();
        }
        Poly::new(
            self.coeffs
                .iter()
                .enumerate()
                .skip(1)
                .map(|(i, &c)| c * i as f64)
                .collect(),
        )
    }

    pub fn scale(&self, s: C) -> Poly {
        Poly::new(self.coeffs.iter().map(|&c| c * s).collect())
    }

    pub fn add(&self, o: &Poly) -> Poly {
        let n = self.coeffs.len().max(o.coeffs.len());
        Poly::new((0..n).map(|i| self.coeff(i) + o.coeff(i)).collect())
    }

    pub fn sub(&self, o: &Poly) -> Poly {
        let n = self.coeffs.len().max(o.coeffs.len());
        Poly::new((0..n).map(|i| self.coeff(i) - o.coeff(i)).collect())
    }

    pub fn mul(&self, o: &Poly) -> Poly {
        if self.is_zero() || o.is_zero() {
            return Poly::zero();
        }
        let mut v = vec![C::new(0.0, 0.0); self.coeffs.len() + o.coeffs.len() - 1];
        for (i, &a) in self.coeffs.iter().enumerate() {
            for (j, &b) in o.coeffs.iter().enumerate() {
                v[i + j] += a * b;
            }
        }
        Poly::new(v)
    }

    pub fn pow(&self, k: usize) -> Poly {
        let mut r = Poly::constant(C::new(1.0, 0.0));
        for _ in 0..k {
            r = r.mul(self);
        }
        r
    }

    /// `u^n p(1/u)`; requires `deg p <= n`.
    pub fn reversed(&self, n: usize) -> Poly {
        assert!(self.coeffs.len() <= n + 1, "reversal degree below polynomial degree");
        let mut v = vec![C::new(0.0, 0.0); n + 1];
        for (i, &c) in self.coeffs.iter().enumerate() {
            v[n - i] = c;
        }
        Poly::new(v)
    }

    /// `sum_j p_j (a z + b)^j (c z + d)^(n - j)`, i.e. `(cz+d)^n p((az+b)/(cz+d))`.
    pub fn mobius_compose(&self, n: usize, a: C, b: C, c: C, d: C) -> Poly {
        assert!(self.coeffs.len() <= n + 1, "formal degree below polynomial degree");
        let num = Poly::new(vec![b, a]);
        let den = Poly::new(vec![d, c]);
        let num_pows: Vec<Poly> = (0..=n).scan(Poly::constant(C::new(1.0, 0.0)), |acc, i| {
            let cur = acc.clone();
            if i < n {
                *acc = acc.mul(&num);
            }
            Some(cur)
        }).collect();
        let den_pows: Vec<Poly> = (0..=n).scan(Poly::constant(C::new(1.0, 0.0)), |acc, i| {
            let cur = acc.clone();
            if i < n {
                *acc = acc.mul(&den);
            }
            Some(cur)
        }).collect();
        let mut out = Poly::zero();
        for (j, &cj) in self.coeffs.iter().enumerate() {
            if cj.norm() == 0.0 {
                continue;
            }
            out = out.add(&num_pows[j].mul(&den_pows[n - j]).scale(cj));
        }
        out
    }

    /// All complex roots (Aberth iteration). Empty for constants.
    pub fn roots(&self) -> Vec<C> {
        let deg = match self.effective_degree(1e-14) {
            Some(d) if d > 0 => d,
            _ => return Vec::new(),
        };
        let lead = self.coeffs[deg];
        let p = Poly::new(self.coeffs[..=deg].iter().map(|&c| c / lead).collect());
        let radius = 1.0 + p.coeffs[..deg].iter().map(|c| c.norm()).fold(0.0, f64::max);
        let mut z: Vec<C> = (0..deg)
            .map(|k| C::from_polar(0.5 * radius, 2.0 * std::f64::consts::PI * (k as f64 + 0.25) / deg as f64))
            .collect();
        for _ in 0..500 {
            let mut moved = 0.0f64;
            for i in 0..deg {
                let (v, dv) = p.eval_d(z[i]);
                if v.norm() == 0.0 {
                    continue;
                }
                let ratio = v / dv;
                let s: C = (0..deg).filter(|&j| j != i).map(|j| C::new(1.0, 0.0) / (z[i] - z[j])).sum();
                let step = ratio / (C::new(1.0, 0.0) - ratio * s);
                if step.is_finite() {
                    z[i] -= step;
                    moved = moved.max(step.norm() / (1.0 + z[i].norm()));
                }
            }
            if moved < 1e-15 {
                break;
            }
        }
        z
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn c(re: f64, im: f64) -> C {
        C::new(re, im)
    }

    #[test]
    fn horner_and_derivative() {
        let p = Poly::from_real(&[1.0, -2.0, 3.0]);
        let z = c(0.5, -1.0);
        let (v, dv) = p.eval_d(z);
        assert!((v - (c(1.0, 0.0) - z * 2.0 + z * z * 3.0)).norm() < 1e-14);
        assert!((dv - (c(-2.0, 0.0) + z * 6.0)).norm() < 1e-14);
        assert_eq!(p.derivative(), Poly::from_real(&[-2.0, 6.0]));
    }

    #[test]
    fn reversal_round_trip() {
        let p = Poly::from_real(&[1.0, 2.0]);
        assert_eq!(p.reversed(3), Poly::new(vec![c(0., 0.), c(0., 0.), c(2., 0.), c(1., 0.)]));
        assert_eq!(p.reversed(3).reversed(3), p);
    }

    #[test]
    fn mobius_compose_matches_pointwise() {
        let p = Poly::new(vec![c(0.3, 1.0), c(-1.0, 0.5), c(2.0, 0.0)]);
        let (a, b, cc, d) = (c(1.0, 0.2), c(0.5, 0.0), c(-0.3, 0.1), c(0.9, 0.0));
        let q = p.mobius_compose(3, a, b, cc, d);
        for z in [c(0.1, 0.2), c(-2.0, 1.0), c(3.0, -0.5)] {
            let den = cc * z + d;
            let want = den.powi(3) * p.eval((a * z + b) / den);
            assert!((q.eval(z) - want).norm() < 1e-12 * (1.0 + want.norm()));
        }
    }

    #[test]
    fn roots_of_cubic() {
        let p = Poly::from_real(&[-6.0, 11.0, -6.0, 1.0]);
        let mut r: Vec<f64> = p.roots().iter().map(|z| z.re).collect();
        r.sort_by(|a, b| a.partial_cmp(b).unwrap());
        for (x, want) in r.iter().zip([1.0, 2.0, 3.0]) {
            assert!((x - want).abs() < 1e-10);
        }
    }
}
