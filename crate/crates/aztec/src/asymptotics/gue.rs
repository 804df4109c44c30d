//! Squared-GUE environments: semicircle quantiles, the limit-shape function
//! `𝐅` and the covariance kernel `𝐆` of the linear statistics
//! `Σ φ(z, l_i)`, `φ(z, x) = (x² + 1)/(2 − z − (z − 1)x²)`.

use num_complex::Complex64 as C;
use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::numeric::{contour_integral, double_contour_integral, gauss_legendre_on, ContourValue};

/// Semicircle distribution function on `[−2, 2]`.
pub fn semicircle_cdf(x: f64) -> f64 {
    if x <= -2.0 {
        return 0.0;
    }
    if x >= 2.0 {
        return 1.0;
    }
    0.5 + x * (4.0 - x * x).sqrt() / (4.0 * PI) + (x / 2.0).asin() / PI
}

const SC_MIN_NODES: usize = 32;
const SC_MAX_NODES: usize = 8192;

/// `(2π)⁻¹ ∫_a^b f(x) √(4 − x²) dx` for `−2 ≤ a ≤ b ≤ 2`, via `x = 2 sin θ`
/// and Gauss–Legendre with doubling to `1e−14` relative agreement.
pub fn semicircle_integral_c<F: Fn(f64) -> C>(f: F, a: f64, b: f64) -> Result<C> {
    if !(-2.0..=2.0).contains(&a) || !(-2.0..=2.0).contains(&b) || a > b {
        return Err(Error::Domain(format!("semicircle integral over [{a}, {b}]")));
    }
    let (ta, tb) = ((a / 2.0).asin(), (b / 2.0).asin());
    if ta == tb {
        return Ok(C::new(0.0, 0.0));
    }
    let rule = |n: usize| -> C {
        let (th, wt) = gauss_legendre_on(ta, tb, n);
        th.iter()
            .zip(&wt)
            .map(|(&t, &w)| {
                let c = t.cos();
                f(2.0 * t.sin()) * (4.0 * c * c * w)
            })
            .sum::<C>()
            / (2.0 * PI)
    };
    let mut n = SC_MIN_NODES;
    let mut prev = rule(n);
    loop {
        n *= 2;
        let cur = rule(n);
        if (cur - prev).norm() <= 1e-14 * cur.norm().max(1e-300) || (cur - prev).norm() < 1e-300 {
            return Ok(cur);
        }
        if n >= SC_MAX_NODES {
            return Err(Error::Numerical(format!("semicircle quadrature unresolved at {n} nodes")));
        }
        prev = cur;
    }
}

pub fn semicircle_integral<F: Fn(f64) -> f64>(f: F, a: f64, b: f64) -> Result<f64> {
    semicircle_integral_c(|x| C::new(f(x), 0.0), a, b).map(|v| v.re)
}

/// `ε_γ` with semicircle mass `1 − γ` on `[−2, ε_γ]`, by bisection.
pub fn gue_epsilon(gamma: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&gamma) {
        return Err(Error::Domain(format!("γ = {gamma} outside [0, 1]")));
    }
    if gamma == 0.0 {
        return Ok(2.0);
    }
    if gamma == 1.0 {
        return Ok(-2.0);
    }
    let target = 1.0 - gamma;
    let (mut lo, mut hi) = (-2.0f64, 2.0f64);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if semicircle_cdf(mid) < target {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo < 1e-15 {
            break;
        }
    }
    let eps = 0.5 * (lo + hi);
    let res = (semicircle_cdf(eps) - target).abs();
    if res > 1e-12 {
        return Err(Error::Numerical(format!("ε_γ residual {res:e}")));
    }
    Ok(eps)
}

/// `φ(z, x)`.
pub fn phi(z: C, x: f64) -> C {
    (x * x + 1.0) / (2.0 - z - (z - 1.0) * x * x)
}

fn check_singular(z: C, eps: f64) -> Result<()> {
    // Poles of φ(z, x), x ∈ [−2, ε]: z = (2 + x²)/(1 + x²) on [6/5, hi].
    let lo = 1.2;
    let hi = if eps >= 0.0 { 2.0 } else { (2.0 + eps * eps) / (1.0 + eps * eps) };
    let dist = if z.re < lo {
        C::new(z.re - lo, z.im).norm()
    } else if z.re > hi {
        C::new(z.re - hi, z.im).norm()
    } else {
        z.im.abs()
    };
    if dist < 1e-6 {
        return Err(Error::Domain(format!("z = {z} on the singular set [{lo}, {hi}]")));
    }
    Ok(())
}

/// Closed form of `𝐅(z) = (2π)⁻¹ ∫_{−2}^{ε_γ} φ(z, x) √(4 − x²) dx` with principal branches.
pub fn gue_f(z: C, gamma: f64) -> Result<C> {
    gue_f_eps(z, gue_epsilon(gamma)?)
}

pub fn gue_f_eps(z: C, eps: f64) -> Result<C> {
    check_singular(z, eps)?;
    if (z - 1.0).norm() < 1e-3 {
        return Err(Error::Domain(format!("z = {z} too close to 1 for the closed form")));
    }
    if eps <= -2.0 {
        return Ok(C::new(0.0, 0.0));
    }
    let zm1 = z - 1.0;
    let s = (2.0 - z).sqrt() * (6.0 - 5.0 * z).sqrt();
    let ratio = (6.0 - 5.0 * z).sqrt() / (2.0 - z).sqrt();
    let at = if eps >= 2.0 {
        C::new(PI, 0.0)
    } else {
        (ratio * (eps / (4.0 - eps * eps).sqrt())).atan() + PI / 2.0
    };
    let root = (4.0 - eps * eps).max(0.0).sqrt();
    Ok((3.0 - 2.0 * z) / (2.0 * PI * zm1 * zm1) * ((eps / 2.0).asin() + PI / 2.0) - eps * root / (4.0 * PI * zm1)
        + (5.0 * z - 6.0) / (2.0 * PI * zm1 * zm1 * s) * at)
}

/// `𝐅(z)` by direct quadrature.
pub fn gue_f_quadrature(z: C, gamma: f64) -> Result<C> {
    let eps = gue_epsilon(gamma)?;
    check_singular(z, eps)?;
    semicircle_integral_c(|x| phi(z, x), -2.0, eps)
}

/// Largest second difference of the closed form along `|z| = radius`
/// (2¹⁴ nodes), relative to `max |𝐅|`. A branch jump shows up as `O(1)`.
pub fn gue_f_branch_jump(radius: f64, gamma: f64) -> Result<f64> {
    let n = 1 << 14;
    let eps = gue_epsilon(gamma)?;
    let vals: Vec<C> = (0..n)
        .map(|j| gue_f_eps(C::from_polar(radius, std::f64::consts::TAU * j as f64 / n as f64), eps))
        .collect::<Result<_>>()?;
    let scale = vals.iter().fold(0.0f64, |a, v| a.max(v.norm())).max(1e-300);
    let jump = (0..n)
        .map(|j| (vals[(j + 1) % n] - 2.0 * vals[j] + vals[(j + n - 1) % n]).norm())
        .fold(0.0, f64::max);
    Ok(jump / scale)
}

/// Quadrature for `𝐆` on `[−2, ε]`: nodes `x = 2 sin θ` with weights `dθ`.
#[derive(Clone, Debug)]
pub struct GueCovariance {
    pub eps: f64,
    x: Vec<f64>,
    w: Vec<f64>,
}

impl GueCovariance {
    /// Quadrature for level `γ`, with the node count doubled until `𝐆` agrees
    /// to `1e−13` at the extreme points of `|z|, |w| ≤ radius`.
    pub fn new(gamma: f64, radius: f64) -> Result<Self> {
        Self::with_eps(gue_epsilon(gamma)?, radius)
    }

    pub fn with_eps(eps: f64, radius: f64) -> Result<Self> {
        let probes = [C::new(radius, 0.0), C::new(-radius, 0.0), C::new(0.0, radius), C::new(0.6 * radius, -0.8 * radius)];
        let build = |n: usize| {
            let (x, w) = gauss_legendre_on(-PI / 2.0, (eps / 2.0).clamp(-1.0, 1.0).asin(), n);
            GueCovariance { eps, x: x.iter().map(|t| 2.0 * t.sin()).collect(), w }
        };
        let mut n = 32;
        let mut prev = build(n);
        loop {
            n *= 2;
            let cur = build(n);
            let mut diff = 0.0f64;
            let mut size = 0.0f64;
            for &z in &probes {
                for &w in &probes {
                    let (a, b) = (cur.eval(z, w), prev.eval(z, w));
                    diff = diff.max((a - b).norm());
                    size = size.max(a.norm());
                }
            }
            if diff <= 1e-13 * size || diff < 1e-28 {
                return Ok(cur);
            }
            if n >= 4096 {
                return Err(Error::Numerical(format!("𝐆 quadrature unresolved at {n} nodes (difference {diff:e})")));
            }
            prev = cur;
        }
    }

    pub fn nodes(&self) -> usize {
        self.x.len()
    }

    /// `u(x) = 1/(2 − z − (z−1)x²)` at the nodes, plus at `ε`.
    fn u(&self, z: C) -> (Vec<C>, C) {
        let (a, b) = (2.0 - z, 1.0 - z);
        (self.x.iter().map(|x| 1.0 / (a + b * x * x)).collect(), 1.0 / (a + b * self.eps * self.eps))
    }

    /// `𝐆(z, w)`: the double integral with kernel `(4 − xy)/(x − y)²` plus the
    /// boundary term at `ε`.
    ///
    /// With `(φ(z,x) − φ(z,y))/(x − y) = (x + y) u_z(x) u_z(y)`, the double
    /// integral separates into the moments `m_p = ∫ x^p u_z u_w dθ`.
    pub fn eval(&self, z: C, w: C) -> C {
        let (uz, ez) = self.u(z);
        let (uw, ew) = self.u(w);
        self.from_nodes(&uz, ez, &uw, ew)
    }

    fn from_nodes(&self, uz: &[C], ez: C, uw: &[C], ew: C) -> C {
        let mut m = [C::new(0.0, 0.0); 4];
        for ((x, wt), (a, b)) in self.x.iter().zip(&self.w).zip(uz.iter().zip(uw)) {
            let v = a * b * wt;
            m[0] += v;
            m[1] += v * x;
            m[2] += v * (x * x);
            m[3] += v * (x * x * x);
        }
        let double = (8.0 * m[0] * m[2] + 8.0 * m[1] * m[1] - 2.0 * m[1] * m[3] - 2.0 * m[2] * m[2]) / (4.0 * PI * PI);
        let e = self.eps;
        let root = (4.0 - e * e).max(0.0).sqrt();
        if root == 0.0 {
            return double;
        }
        let boundary = ez * ew * (m[3] + e * m[2] - e * e * m[1] - e * e * e * m[0]);
        double - root / (2.0 * PI * PI) * boundary
    }

    /// `𝐆` on the product grid, row-major in `zs`.
    pub fn eval_grid(&self, zs: &[C], ws: &[C]) -> Vec<C> {
        let uws: Vec<(Vec<C>, C)> = ws.iter().map(|&w| self.u(w)).collect();
        let mut out = Vec::with_capacity(zs.len() * ws.len());
        for &z in zs {
            let (uz, ez) = self.u(z);
            for (uw, ew) in &uws {
                out.push(self.from_nodes(&uz, ez, uw, *ew));
            }
        }
        out
    }
}

/// `𝐆(z, w)` at level `γ`.
pub fn gue_g(z: C, w: C, gamma: f64) -> Result<C> {
    let eps = gue_epsilon(gamma)?;
    check_singular(z, eps)?;
    check_singular(w, eps)?;
    let r = z.norm().max(w.norm());
    Ok(GueCovariance::with_eps(eps, r)?.eval(z, w))
}

/// Full-spectrum shape: `X(z) = ((3 − 2z)S + 5z − 6)/(2(z − 1)²S)`, `S = √(2−z)√(6−5z)`.
pub fn gue_full_shape(z: C) -> C {
    let s = (2.0 - z).sqrt() * (6.0 - 5.0 * z).sqrt();
    let zm1 = z - 1.0;
    ((3.0 - 2.0 * z) * s + 5.0 * z - 6.0) / (2.0 * zm1 * zm1 * s)
}

/// `R(z, w) = (24 − 16z − 16w + 10zw)/((2−z)(2−w)) · √((2−z)(2−w)/((6−5z)(6−5w)))`;
/// `𝐆` for the full spectrum is `(R − 2)/(2(z − w)²)`.
pub fn gue_full_r(z: C, w: C) -> C {
    let (a, b) = ((2.0 - z).sqrt(), (2.0 - w).sqrt());
    let (c, d) = ((6.0 - 5.0 * z).sqrt(), (6.0 - 5.0 * w).sqrt());
    (24.0 - 16.0 * z - 16.0 * w + 10.0 * z * w) / ((2.0 - z) * (2.0 - w)) * (a * b / (c * d))
}

/// Default radii `(r_w, r_z)` for the full-spectrum formula.
pub const GUE_FULL_RADII: (f64, f64) = (0.45, 0.9);

fn full_bracket(z: C, gamma: f64) -> C {
    (1.0 / gamma - 1.0) * (1.0 - z) * gue_full_shape(z) + (z - 1.0) / z
}

/// `lim N^{−k1−k2} Cov(p_{k1}, p_{k2})` at level `N = γM` when the weights above
/// level `N` are squared eigenvalues of a GUE of size `M − N` and `β = 1/2` below:
///
/// `(2πi)⁻² ∮_{|w|=r_w} ∮_{|z|=r_z} B(z)^{k1} B(w)^{k2} R(z,w)/(2(z − w)²) dz dw`,
/// `B(z) = (1/γ − 1)(1 − z)X(z) + (z − 1)/z`; the kernel is `𝐆 + 1/(z − w)²`.
pub fn gue_full_cov(k1: usize, k2: usize, gamma: f64, radii: Option<(f64, f64)>) -> Result<ContourValue> {
    if !(gamma > 0.0 && gamma < 1.0) {
        return Err(Error::Domain(format!("γ = {gamma} outside (0, 1)")));
    }
    let (r_w, r_z) = radii.unwrap_or(GUE_FULL_RADII);
    if !(r_w > 0.0 && r_z > r_w) {
        return Err(Error::Contour(format!("need 0 < r_w < r_z, got ({r_w}, {r_z})")));
    }
    if r_z >= 1.2 {
        return Err(Error::Config(format!("radius {r_z} reaches the branch point 6/5")));
    }
    if k1 == 0 || k2 == 0 {
        return Ok(ContourValue { value: C::new(0.0, 0.0), nodes: 0, residual: 0.0 });
    }
    double_contour_integral(
        |zs, ws| {
            let bz: Vec<C> = zs.iter().map(|&z| full_bracket(z, gamma).powu(k1 as u32) * z).collect();
            let bw: Vec<C> = ws.iter().map(|&w| full_bracket(w, gamma).powu(k2 as u32) * w).collect();
            let mut acc = C::new(0.0, 0.0);
            for (z, a) in zs.iter().zip(&bz) {
                for (w, b) in ws.iter().zip(&bw) {
                    let d = z - w;
                    acc += a * b * gue_full_r(*z, *w) / (2.0 * d * d);
                }
            }
            Ok(acc)
        },
        r_z,
        r_w,
        1e-8,
    )
}

/// The LLN moment of the full-spectrum variant, `(2πi(k+1))⁻¹ ∮ B^{k+1}/(z − 1) dz`.
pub fn gue_full_limit_moment(k: usize, gamma: f64) -> Result<ContourValue> {
    contour_integral(|z| Ok(full_bracket(z, gamma).powu(k as u32 + 1) / ((z - 1.0) * (k + 1) as f64)), C::new(0.0, 0.0), 0.5, 1e-8)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    #[test]
    fn epsilon_values() {
        assert!(gue_epsilon(0.5).unwrap().abs() < 1e-12);
        assert_eq!(gue_epsilon(1.0).unwrap(), -2.0);
        assert!((gue_epsilon(1e-12).unwrap() - 2.0).abs() < 1e-6);
        let es: Vec<f64> = (1..20).map(|i| gue_epsilon(i as f64 / 20.0).unwrap()).collect();
        assert!(es.windows(2).all(|w| w[1] < w[0]));
        for e in [-1.5, -0.3, 0.7, 1.9] {
            let mass = semicircle_integral(|_| 1.0, -2.0, e).unwrap();
            assert!((mass - semicircle_cdf(e)).abs() < 1e-13);
        }
    }

    #[test]
    fn f_closed_form_matches_quadrature() {
        assert_eq!(gue_f(C::new(0.3, 0.1), 1.0).unwrap(), C::new(0.0, 0.0));
        let z0 = C::new(0.0, 0.0);
        assert!((gue_f(z0, 0.5).unwrap() - gue_f_quadrature(z0, 0.5).unwrap()).norm() < 1e-10);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let mut worst = 0.0f64;
        for _ in 0..20 {
            let z = C::from_polar(0.9, rng.random_range(0.0..std::f64::consts::TAU));
            worst = worst.max((gue_f(z, 0.3).unwrap() - gue_f_quadrature(z, 0.3).unwrap()).norm());
        }
        assert!(worst < 1e-8, "{worst:e}");
        // Full spectrum reduces to X(z).
        let z = C::new(-0.4, 0.5);
        assert!((gue_f_eps(z, 2.0).unwrap() - gue_full_shape(z)).norm() < 1e-12);
        assert!(gue_f_branch_jump(0.9, 0.3).unwrap() < 1e-4);
    }

    #[test]
    fn singular_points_are_domain_errors() {
        assert!(matches!(gue_f(C::new(1.5, 0.0), 0.5), Err(Error::Domain(_))));
        assert!(matches!(gue_f(C::new(1.0, 0.0), 0.5), Err(Error::Domain(_))));
        assert!(matches!(gue_g(C::new(1.3, 0.0), C::new(0.2, 0.0), 0.2), Err(Error::Domain(_))));
    }

    /// Direct tensor quadrature of the difference-quotient form, diagonal included.
    fn g_tensor(z: C, w: C, eps: f64, n: usize) -> C {
        let (th, wt) = gauss_legendre_on(-PI / 2.0, (eps / 2.0).asin(), n);
        let xs: Vec<f64> = th.iter().map(|t| 2.0 * t.sin()).collect();
        let dq = |z: C, x: f64, y: f64| {
            if x == y {
                // ∂ₓφ(z, x)
                2.0 * x / ((2.0 - z - (z - 1.0) * x * x) * (2.0 - z - (z - 1.0) * x * x))
            } else {
                (phi(z, x) - phi(z, y)) / (x - y)
            }
        };
        let mut double = C::new(0.0, 0.0);
        for (i, &x) in xs.iter().enumerate() {
            for (j, &y) in xs.iter().enumerate() {
                double += dq(z, x, y) * dq(w, x, y) * (4.0 - x * y) * wt[i] * wt[j];
            }
        }
        let mut bnd = C::new(0.0, 0.0);
        for (i, &x) in xs.iter().enumerate() {
            bnd += dq(z, x, eps) * dq(w, x, eps) * (x - eps) * wt[i];
        }
        double / (4.0 * PI * PI) - (4.0 - eps * eps).max(0.0).sqrt() / (2.0 * PI * PI) * bnd
    }

    #[test]
    fn g_factored_matches_tensor_and_is_symmetric() {
        let (z, w) = (C::new(0.3, 0.4), C::new(-0.5, 0.1));
        for gamma in [0.2, 0.5, 0.8] {
            let eps = gue_epsilon(gamma).unwrap();
            let g = gue_g(z, w, gamma).unwrap();
            assert!((g - g_tensor(z, w, eps, 200)).norm() < 1e-10 * g.norm().max(1.0));
            assert!((g - gue_g(w, z, gamma).unwrap()).norm() < 1e-12);
        }
        assert_eq!(gue_g(z, w, 1.0).unwrap(), C::new(0.0, 0.0));
    }

    #[test]
    fn g_full_spectrum_matches_linear_statistics() {
        // f(2cos θ) = Σ a_k cos kθ ⇒ Var Σ f(λ_i) → ¼ Σ k a_k². x ↦ x: a_1 = 2 (variance 1);
        // x ↦ x²: a_2 = 2 (variance 2). Here both enter through 𝐆 at special points.
        let q = GueCovariance::with_eps(2.0, 0.9).unwrap();
        // φ(0, x) = (x²+1)/(2+x²) = 1 − 1/(2+x²): compare with Chebyshev coefficients.
        let m = 512;
        let coef = |k: usize| {
            (0..m)
                .map(|j| {
                    let t = PI * (j as f64 + 0.5) / m as f64;
                    phi(C::new(0.0, 0.0), 2.0 * t.cos()).re * (k as f64 * t).cos()
                })
                .sum::<f64>()
                * 2.0
                / m as f64
        };
        let var: f64 = (1..60).map(|k| 0.25 * k as f64 * coef(k).powi(2)).sum();
        let g = q.eval(C::new(0.0, 0.0), C::new(0.0, 0.0));
        assert!((g.re - var).abs() < 1e-12 && g.im.abs() < 1e-15, "{g} vs {var}");
        // Closed form (R − 2)/(2(z − w)²) away from the diagonal.
        for (z, w) in [(C::new(0.3, 0.2), C::new(-0.4, 0.1)), (C::new(0.8, 0.0), C::new(0.1, -0.6))] {
            let d = z - w;
            let closed = (gue_full_r(z, w) - 2.0) / (2.0 * d * d);
            assert!((q.eval(z, w) - closed).norm() < 1e-11, "{} vs {closed}", q.eval(z, w));
        }
        assert!((gue_full_r(C::new(0.0, 0.0), C::new(0.0, 0.0)) - 2.0).norm() < 1e-15);
    }

    #[test]
    fn full_cov_properties() {
        assert_eq!(gue_full_cov(0, 2, 0.5, None).unwrap().value, C::new(0.0, 0.0));
        let a = gue_full_cov(1, 2, 0.4, None).unwrap().value;
        let b = gue_full_cov(2, 1, 0.4, None).unwrap().value;
        assert!((a - b).norm() < 1e-9 * a.norm().max(1.0));
        let v = gue_full_cov(1, 1, 0.5, None).unwrap().value;
        assert!(v.re > 0.0 && v.im.abs() < 1e-12);
        assert!(matches!(gue_full_cov(1, 1, 0.5, Some((0.5, 1.3))), Err(Error::Config(_))));
        assert!((gue_full_limit_moment(0, 0.5).unwrap().value - 1.0).norm() < 1e-10);
    }

    #[test]
    fn bracket_without_one_minus_z_gives_negative_variance() {
        // Without the (1 − z) factor on the shape term the k = 1 "variance" is negative.
        let gamma = 0.5;
        let bare = |z: C| (1.0 / gamma - 1.0) * gue_full_shape(z) + (z - 1.0) / z;
        let v = double_contour_integral(
            |zs, ws| {
                let mut acc = C::new(0.0, 0.0);
                for &z in zs {
                    for &w in ws {
                        let d = z - w;
                        acc += bare(z) * bare(w) * gue_full_r(z, w) / (2.0 * d * d) * z * w;
                    }
                }
                Ok(acc)
            },
            0.9,
            0.45,
            1e-8,
        )
        .unwrap();
        assert!(v.value.re < 0.0, "{}", v.value);
    }
}
