//! Small numerical building blocks: compensated summation, circle trapezoid
//! rules with node doubling, and Gauss–Legendre nodes.

use num_complex::Complex64;

use crate::error::{Error, Result};

/// Kahan–Babuška (Neumaier) compensated sum.
#[derive(Clone, Copy, Debug, Default)]
pub struct KahanSum {
    sum: f64,
    comp: f64,
}

impl KahanSum {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, v: f64) {
        let t = self.sum + v;
        if self.sum.abs() >= v.abs() {
            self.comp += (self.sum - t) + v;
        } else {
            self.comp += (v - t) + self.sum;
        }
        self.sum = t;
    }

    pub fn value(&self) -> f64 {
        self.sum + self.comp
    }
}

/// Smallest node count tried by the adaptive circle rules.
pub const MIN_NODES: usize = 32;
/// Node cap for the adaptive circle rules.
pub const MAX_NODES: usize = 1 << 16;
/// Relative self-consistency demanded between successive doublings.
pub const DOUBLING_TOL: f64 = 1e-10;

/// Result of an adaptive contour quadrature.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ContourValue {
    pub value: Complex64,
    /// Nodes per contour at acceptance.
    pub nodes: usize,
    /// `|I_{2n} − I_n|` at acceptance.
    pub residual: f64,
}

/// Node `j` of an `n`-point equispaced grid on `|z − c| = r`.
pub fn circle_node(center: Complex64, radius: f64, j: usize, n: usize) -> Complex64 {
    center + Complex64::from_polar(radius, std::f64::consts::TAU * j as f64 / n as f64)
}

/// Trapezoid estimate of `(2πi)⁻¹ ∮ f(z) dz` on `|z − c| = r` with `n` nodes.
fn circle_sum<F>(f: &F, center: Complex64, radius: f64, n: usize, offset: usize, stride: usize) -> Result<Complex64>
where
    F: Fn(Complex64) -> Result<Complex64>,
{
    let mut acc = Complex64::new(0.0, 0.0);
    let mut j = offset;
    while j < n {
        let z = circle_node(center, radius, j, n);
        acc += f(z)? * (z - center);
        j += stride;
    }
    Ok(acc)
}

/// `(2πi)⁻¹ ∮ f(z) dz` by the trapezoid rule, doubling nodes (and reusing the
/// old ones) until two successive estimates agree to [`DOUBLING_TOL`] relative.
/// `scale` is an absolute floor for the relative test (use 0 for none).
pub fn contour_integral<F>(f: F, center: Complex64, radius: f64, scale: f64) -> Result<ContourValue>
where
    F: Fn(Complex64) -> Result<Complex64>,
{
    let mut n = MIN_NODES;
    let mut sum = circle_sum(&f, center, radius, n, 0, 1)?;
    let mut prev = sum / n as f64;
    loop {
        let two_n = 2 * n;
        sum += circle_sum(&f, center, radius, two_n, 1, 2)?;
        let cur = sum / two_n as f64;
        let residual = (cur - prev).norm();
        if residual <= DOUBLING_TOL * cur.norm().max(scale) {
            return Ok(ContourValue { value: cur, nodes: two_n, residual });
        }
        if two_n >= MAX_NODES {
            return Err(Error::Numerical(format!(
                "contour quadrature did not converge with {two_n} nodes (residual {residual:e})"
            )));
        }
        prev = cur;
        n = two_n;
    }
}

/// `(2πi)⁻² ∮_{|z|=r_z} ∮_{|w|=r_w} f(z,w) dw dz` on centred circles, with
/// simultaneous node doubling in both variables. `f` receives the whole node
/// grid at once so callers can factor the integrand.
pub fn double_contour_integral<F>(f: F, r_z: f64, r_w: f64, scale: f64) -> Result<ContourValue>
where
    F: Fn(&[Complex64], &[Complex64]) -> Result<Complex64>,
{
    let grid = |n: usize, r: f64| -> Vec<Complex64> {
        (0..n).map(|j| circle_node(Complex64::new(0.0, 0.0), r, j, n)).collect()
    };
    let eval = |n: usize| -> Result<Complex64> {
        let zs = grid(n, r_z);
        let ws = grid(n, r_w);
        Ok(f(&zs, &ws)? / (n * n) as f64)
    };
    let mut n = MIN_NODES;
    let mut prev = eval(n)?;
    loop {
        let two_n = 2 * n;
        let cur = eval(two_n)?;
        let residual = (cur - prev).norm();
        if residual <= DOUBLING_TOL * cur.norm().max(scale) {
            return Ok(ContourValue { value: cur, nodes: two_n, residual });
        }
        if two_n >= 4096 {
            return Err(Error::Numerical(format!(
                "double contour quadrature did not converge with {two_n}² nodes (residual {residual:e})"
            )));
        }
        prev = cur;
        n = two_n;
    }
}

/// Gauss–Legendre nodes and weights on `[-1, 1]` (Newton on `P_n`).
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut x = vec![0.0; n];
    let mut w = vec![0.0; n];
    for i in 0..n.div_ceil(2) {
        let mut t = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, t);
            for k in 2..=n {
                let p2 = ((2 * k - 1) as f64 * t * p1 - (k - 1) as f64 * p0) / k as f64;
                p0 = p1;
                p1 = p2;
            }
            let pn = if n == 0 { 1.0 } else if n == 1 { t } else { p1 };
            let pn1 = if n == 1 { 1.0 } else { p0 };
            dp = n as f64 * (t * pn - pn1) / (t * t - 1.0);
            let dt = pn / dp;
            t -= dt;
            if dt.abs() < 1e-16 {
                break;
            }
        }
        x[i] = -t;
        x[n - 1 - i] = t;
        let wi = 2.0 / ((1.0 - t * t) * dp * dp);
        w[i] = wi;
        w[n - 1 - i] = wi;
    }
    (x, w)
}

/// Gauss–Legendre rule mapped to `[a, b]`.
pub fn gauss_legendre_on(a: f64, b: f64, n: usize) -> (Vec<f64>, Vec<f64>) {
    let (x, w) = gauss_legendre(n);
    let (h, c) = ((b - a) / 2.0, (b + a) / 2.0);
    (x.iter().map(|t| c + h * t).collect(), w.iter().map(|v| v * h).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kahan_beats_naive() {
        let mut k = KahanSum::new();
        for _ in 0..10 {
            k.add(0.1);
        }
        assert_eq!(k.value(), 1.0);
        let mut k = KahanSum::new();
        k.add(1e16);
        k.add(1.0);
        k.add(-1e16);
        assert_eq!(k.value(), 1.0);
    }

    #[test]
    fn residue_of_simple_pole() {
        let c = Complex64::new(0.0, 0.0);
        let v = contour_integral(|z| Ok(z.exp() / (z * z)), c, 0.5, 0.0).unwrap();
        assert!((v.value - 1.0).norm() < 1e-13);
    }

    #[test]
    fn double_integral_gff_kernel() {
        // (2πi)^-2 ∮∮ 1/(z−w)² · z^{-1}... pick ∮∮ (1/z)(1/w) = 1.
        let v = double_contour_integral(
            |zs, ws| {
                let mut acc = Complex64::new(0.0, 0.0);
                for z in zs {
                    for w in ws {
                        acc += (1.0 / (z * w)) * z * w;
                    }
                }
                Ok(acc)
            },
            0.6,
            0.3,
            0.0,
        )
        .unwrap();
        assert!((v.value - 1.0).norm() < 1e-13);
    }

    #[test]
    fn gauss_legendre_integrates_polynomials() {
        let (x, w) = gauss_legendre_on(0.0, 2.0, 12);
        let s: f64 = x.iter().zip(&w).map(|(x, w)| w * x.powi(11)).sum();
        assert!((s - 2f64.powi(12) / 12.0).abs() < 1e-10);
        let (_, w) = gauss_legendre(7);
        assert!((w.iter().sum::<f64>() - 2.0).abs() < 1e-14);
    }
}
