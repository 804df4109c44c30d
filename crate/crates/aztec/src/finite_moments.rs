//! Exact quenched moments at finite `N, M` for a fixed environment.
//!
//! With `g(z) = Π_{j>N}(1 − β_j z)` and `h(z) = Π_{i≤N}(z − y_i)`, the ordered
//! tuple sums over `β_j/(1 − β_j z)` equal `(−1)^r g^{(r)}/g` and the subset sums
//! over `1/(z − y_i)` equal `h^{(r)}/(r!·h)`. Both ratios come from complete Bell
//! polynomials of the log-derivatives, so no subset is ever enumerated.

use num_complex::Complex64;

use crate::enumeration::{exact_joint_moments, MAX_ENUMERATION_M};
use crate::error::{usage, Error, Result};
use crate::model::WeightEnvironment;
use crate::numeric::{contour_integral, double_contour_integral, ContourValue};
use crate::report::{MomentValue, Provenance};

/// Highest moment order supported.
pub const MAX_ORDER: usize = 10;
/// Highest derivative order in the Bell-polynomial combination.
pub const R_MAX: usize = 12;

const POLE_TOL: f64 = 1e-8;

/// Stirling number of the second kind, `0 ≤ m ≤ k ≤ 12`.
pub fn stirling2(k: usize, m: usize) -> Result<u64> {
    if m > k || k > R_MAX {
        return usage(format!("stirling2 needs 0 ≤ m ≤ k ≤ {R_MAX}, got ({k}, {m})"));
    }
    let mut row = vec![1u64];
    for n in 1..=k {
        let mut next = vec![0u64; n + 1];
        for j in 1..=n {
            next[j] = j as u64 * row.get(j).copied().unwrap_or(0) + row[j - 1];
        }
        row = next;
    }
    Ok(row[m])
}

fn binom(n: usize, k: usize) -> f64 {
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

/// Which product a point set builds.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Role {
    /// `g(z) = Π (1 − β z)`.
    Beta,
    /// `h(z) = Π (z − y)`.
    Y,
}

/// Complete Bell polynomials `Y_0..Y_r` of `d[1..=r]` (`d[0]` ignored).
fn complete_bell(d: &[Complex64], r_max: usize) -> Vec<Complex64> {
    let mut y = vec![Complex64::new(1.0, 0.0)];
    for r in 0..r_max {
        let mut acc = Complex64::new(0.0, 0.0);
        for j in 0..=r {
            acc += binom(r, j) * y[r - j] * d[j + 1];
        }
        y.push(acc);
    }
    y
}

/// `P^{(r)}(z)/P(z)` for `r = 0..=r_max`, `P` the product of the given role.
pub fn log_derivative_ratios(points: &[f64], role: Role, z: Complex64, r_max: usize) -> Result<Vec<Complex64>> {
    if r_max > R_MAX {
        return usage(format!("derivative order {r_max} above {R_MAX}"));
    }
    // power sums Σ t^r of the per-point terms t
    let mut sums = vec![Complex64::new(0.0, 0.0); r_max + 1];
    for (idx, &p) in points.iter().enumerate() {
        let t = match role {
            Role::Beta => {
                let d = 1.0 - p * z;
                if d.norm() < POLE_TOL {
                    return Err(Error::Contour(format!("z = {z} hits the pole 1/β of point {idx}")));
                }
                p / d
            }
            Role::Y => {
                let d = z - p;
                if d.norm() < POLE_TOL {
                    return Err(Error::Contour(format!("z = {z} hits y of point {idx}")));
                }
                1.0 / d
            }
        };
        let mut tp = Complex64::new(1.0, 0.0);
        for s in sums.iter_mut().skip(1) {
            tp *= t;
            *s += tp;
        }
    }
    let mut d = vec![Complex64::new(0.0, 0.0); r_max + 1];
    let mut fact = 1.0;
    for r in 1..=r_max {
        if r > 1 {
            fact *= (r - 1) as f64;
        }
        d[r] = match role {
            Role::Beta => -fact * sums[r],
            Role::Y => (if r % 2 == 1 { fact } else { -fact }) * sums[r],
        };
    }
    Ok(complete_bell(&d, r_max))
}

/// A circle `|z − center| = radius`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ContourSpec {
    pub center: Complex64,
    pub radius: f64,
}

impl ContourSpec {
    pub fn circle(radius: f64) -> Self {
        Self { center: Complex64::new(0.0, 0.0), radius }
    }
}

/// Admissible radii `(lo, hi)` for level `n_y` on the `y` side and `n_beta` on the
/// `β` side: `max_{i≤n_y}|y_i| < r < min(1, min_{j>n_beta} 1/β_j)`.
pub fn admissible_band(env: &WeightEnvironment, n_y: usize, n_beta: usize) -> Result<(f64, f64)> {
    let lo = env.y()[..n_y].iter().fold(0.0f64, |a, y| a.max(y.abs()));
    let hi = env.beta()[n_beta..].iter().fold(1.0f64, |a, b| a.min(1.0 / b));
    if lo >= hi {
        return Err(Error::Contour(format!("empty admissible band ({lo}, {hi})")));
    }
    Ok((lo, hi))
}

/// Band bottom used for radius placement: keeps contours away from the origin
/// when all `y` vanish (the band then starts at 0).
fn effective_low(lo: f64, hi: f64) -> f64 {
    lo.max(0.25 * hi)
}

/// Log-scale midpoint of the admissible band.
pub fn default_contour(env: &WeightEnvironment, n: usize) -> Result<ContourSpec> {
    let (lo, hi) = admissible_band(env, n, n)?;
    let lo = effective_low(lo, hi);
    Ok(ContourSpec::circle((lo * hi).sqrt()))
}

/// Radii `(r_inner, r_outer)` at 40% and 70% of the band on a log scale.
pub fn default_nested(env: &WeightEnvironment, n1: usize, n2: usize) -> Result<(f64, f64)> {
    let (lo, hi) = admissible_band(env, n2, n1)?;
    let lo = effective_low(lo, hi);
    Ok((lo * (hi / lo).powf(0.4), lo * (hi / lo).powf(0.7)))
}

fn check_level(env: &WeightEnvironment, n: usize, k: usize) -> Result<()> {
    if n == 0 || n >= env.m() {
        return usage(format!("need 1 ≤ N < M, got N = {n}, M = {}", env.m()));
    }
    if k > MAX_ORDER {
        return usage(format!("moment order {k} above {MAX_ORDER}"));
    }
    Ok(())
}

fn check_contour(env: &WeightEnvironment, n_y: usize, n_beta: usize, r: f64) -> Result<()> {
    let (lo, hi) = admissible_band(env, n_y, n_beta)?;
    if !(r > lo && r < hi) {
        return Err(Error::Contour(format!("radius {r} outside admissible band ({lo}, {hi})")));
    }
    Ok(())
}

/// `ℱ_k = f⁻¹ D_k f` at level `N` (with `D_k = V⁻¹ Σ x_i^k ∂_i^k V`):
/// `(2πi)⁻¹∮ (1−z)^k Σ_m C(k,m) (−1)^k/(m+1) · h^{(m+1)}/h · g^{(k−m)}/g dz`.
pub fn f_k(env: &WeightEnvironment, n: usize, k: usize, contour: Option<ContourSpec>) -> Result<ContourValue> {
    check_level(env, n, k)?;
    let c = match contour {
        Some(c) => c,
        None => default_contour(env, n)?,
    };
    if c.center != Complex64::new(0.0, 0.0) {
        return usage("contours for ℱ_k are centred at the origin");
    }
    check_contour(env, n, n, c.radius)?;
    let ys = &env.y()[..n];
    let bs = &env.beta()[n..];
    let sign = if k % 2 == 0 { 1.0 } else { -1.0 };
    let integrand = |z: Complex64| -> Result<Complex64> {
        let hr = log_derivative_ratios(ys, Role::Y, z, k + 1)?;
        let gr = log_derivative_ratios(bs, Role::Beta, z, k)?;
        let mut acc = Complex64::new(0.0, 0.0);
        for m in 0..=k {
            acc += binom(k, m) / (m + 1) as f64 * hr[m + 1] * gr[k - m];
        }
        Ok(sign * (1.0 - z).powi(k as i32) * acc)
    };
    // ℱ_k combines moments of integer-valued statistics and may vanish exactly
    // (e.g. M = 2), so accuracy is absolute below magnitude 1.
    contour_integral(integrand, c.center, c.radius, 1.0)
}

/// `E[p_k] = Σ_{m=1}^k S(k,m) ℱ_m`; `k = 0` gives `N`.
pub fn expectation_pk(env: &WeightEnvironment, n: usize, k: usize) -> Result<f64> {
    check_level(env, n, k)?;
    if k == 0 {
        return Ok(n as f64);
    }
    let c = default_contour(env, n)?;
    let mut total = 0.0;
    for m in 1..=k {
        total += stirling2(k, m)? as f64 * f_k(env, n, m, Some(c))?.value.re;
    }
    Ok(total)
}

/// Bernoulli identity `E[p_1] = N(N−1)/2 + Σ_{i≤N<j} a_ij`.
pub fn bernoulli_mean_p1(env: &WeightEnvironment, n: usize) -> f64 {
    let mut s = (n * (n - 1)) as f64 / 2.0;
    for i in 1..=n {
        for j in n + 1..=env.m() {
            s += env.bernoulli_param(i, j);
        }
    }
    s
}

/// Bernoulli identity `Var(p_1) = Σ_{i≤N<j} a_ij(1 − a_ij)`.
pub fn bernoulli_var_p1(env: &WeightEnvironment, n: usize) -> f64 {
    let mut s = 0.0;
    for i in 1..=n {
        for j in n + 1..=env.m() {
            let a = env.bernoulli_param(i, j);
            s += a * (1.0 - a);
        }
    }
    s
}

/// Leading double-contour term `𝒢` of `Cov(p_{k1}^{(N1)}, p_{k2}^{(N2)})` built
/// from the operators `D_{k1}` (level `N1`, second applied, inner contour `w`)
/// and `D_{k2}` (level `N2`, first applied, outer contour `z`), `N1 ≤ N2`:
///
/// `(2πi)⁻² ∮∮ (1−z)^{k2}(1−w)^{k1}/(z−w)² · Z(z) W(w) dw dz` with
/// `Z = (−1)^{k2} Σ_m C(k2,m) g^{(k2−m)}/g · h^{(m)}/h` and
/// `W = (−1)^{k1} Σ_{μ<k1} C(k1,μ)(k1−μ)/(μ+1) · g^{(k1−μ−1)}/g · h^{(μ+1)}/h`.
///
/// The remainder `ℋ` is not included. `radii = (r_w, r_z)`.
pub fn g_leading(
    env: &WeightEnvironment,
    n1: usize,
    n2: usize,
    k1: usize,
    k2: usize,
    radii: Option<(f64, f64)>,
) -> Result<ContourValue> {
    check_level(env, n1, k1)?;
    check_level(env, n2, k2)?;
    if n1 > n2 {
        return usage("G_leading needs N1 ≤ N2");
    }
    let zero = ContourValue { value: Complex64::new(0.0, 0.0), nodes: 0, residual: 0.0 };
    if k1 == 0 || k2 == 0 {
        return Ok(zero);
    }
    let (r_w, r_z) = match radii {
        Some(r) => r,
        None => default_nested(env, n1, n2)?,
    };
    check_contour(env, n1, n1, r_w)?;
    check_contour(env, n2, n2, r_z)?;
    if r_z - r_w < 1e-6 {
        return Err(Error::Contour(format!(
            "contours |w| = {r_w} and |z| = {r_z} collide; the outer radius must exceed the inner one"
        )));
    }
    let (ys2, bs2) = (&env.y()[..n2], &env.beta()[n2..]);
    let (ys1, bs1) = (&env.y()[..n1], &env.beta()[n1..]);
    let sz = if k2 % 2 == 0 { 1.0 } else { -1.0 };
    let sw = if k1 % 2 == 0 { 1.0 } else { -1.0 };
    let zfac = |z: Complex64| -> Result<Complex64> {
        let hr = log_derivative_ratios(ys2, Role::Y, z, k2)?;
        let gr = log_derivative_ratios(bs2, Role::Beta, z, k2)?;
        let s: Complex64 = (0..=k2).map(|m| binom(k2, m) * gr[k2 - m] * hr[m]).sum();
        Ok(sz * (1.0 - z).powi(k2 as i32) * s * z)
    };
    let wfac = |w: Complex64| -> Result<Complex64> {
        let hr = log_derivative_ratios(ys1, Role::Y, w, k1)?;
        let gr = log_derivative_ratios(bs1, Role::Beta, w, k1)?;
        let s: Complex64 = (0..k1)
            .map(|mu| binom(k1, mu) * (k1 - mu) as f64 / (mu + 1) as f64 * gr[k1 - mu - 1] * hr[mu + 1])
            .sum();
        Ok(sw * (1.0 - w).powi(k1 as i32) * s * w)
    };
    double_contour_integral(
        |zs, ws| {
            let a: Vec<Complex64> = zs.iter().map(|&z| zfac(z)).collect::<Result<_>>()?;
            let b: Vec<Complex64> = ws.iter().map(|&w| wfac(w)).collect::<Result<_>>()?;
            let mut acc = Complex64::new(0.0, 0.0);
            for (z, az) in zs.iter().zip(&a) {
                for (w, bw) in ws.iter().zip(&b) {
                    let d = z - w;
                    acc += az * bw / (d * d);
                }
            }
            Ok(acc)
        },
        r_z,
        r_w,
        1e-6,
    )
}

/// `Cov_λ(p_{k1}, p_{k2})` at level `N`: exact by enumeration when `M ≤ 6`,
/// otherwise `Σ S(k1,m1) S(k2,m2) 𝒢_{m1,m2}` flagged as leading order.
pub fn quenched_central_moment_mc_free(env: &WeightEnvironment, n: usize, k1: usize, k2: usize) -> Result<MomentValue> {
    if env.m() <= MAX_ENUMERATION_M {
        let v = exact_joint_moments(env, &[n, n], &[k1 as u32, k2 as u32], true)?;
        return Ok(MomentValue { value: v, provenance: Provenance::ExactEnum });
    }
    leading_order_covariance(env, n, k1, k2)
}

/// The leading-order route of [`quenched_central_moment_mc_free`], at any `M`.
pub fn leading_order_covariance(env: &WeightEnvironment, n: usize, k1: usize, k2: usize) -> Result<MomentValue> {
    let mut v = 0.0;
    for m1 in 1..=k1 {
        for m2 in 1..=k2 {
            let s = (stirling2(k1, m1)? * stirling2(k2, m2)?) as f64;
            v += s * g_leading(env, n, n, m1, m2, None)?.value.re;
        }
    }
    Ok(MomentValue { value: v, provenance: Provenance::LeadingOrder })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::enumeration::exact_joint_moments;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_env(m: usize, seed: u64) -> WeightEnvironment {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let beta = (0..m).map(|_| rng.random_range(0.05..0.95)).collect();
        let y = (0..m).map(|_| rng.random_range(-0.85..0.85)).collect();
        WeightEnvironment::new(beta, y).unwrap()
    }

    #[test]
    fn stirling_values() {
        assert_eq!(stirling2(3, 2).unwrap(), 3);
        assert_eq!(stirling2(4, 2).unwrap(), 7);
        for k in 0..=12 {
            assert_eq!(stirling2(k, k).unwrap(), 1);
        }
        assert_eq!(stirling2(12, 1).unwrap(), 1);
        assert!(stirling2(13, 1).is_err());
        assert!(stirling2(2, 3).is_err());
    }

    #[test]
    fn log_derivative_examples() {
        let z = Complex64::new(0.3, 0.2);
        let b = 0.4;
        let r = log_derivative_ratios(&[b], Role::Beta, z, 1).unwrap();
        assert_eq!(r[0], Complex64::new(1.0, 0.0));
        assert!((r[1] + b / (1.0 - b * z)).norm() < 1e-15);
        let r = log_derivative_ratios(&[b, b], Role::Beta, Complex64::new(0.0, 0.0), 2).unwrap();
        assert!((r[2] - 2.0 * b * b).norm() < 1e-15);
        assert!(log_derivative_ratios(&[0.5], Role::Beta, Complex64::new(2.0, 0.0), 1).is_err());
    }

    /// Independent oracle: derivatives of a product by expanding its polynomial.
    #[test]
    fn ratios_match_polynomial_derivatives() {
        let pts = [0.3, -0.5, 0.1, 0.7];
        let z = Complex64::new(0.2, -0.4);
        for role in [Role::Beta, Role::Y] {
            // coefficients of Π(a_i z + b_i) in increasing degree
            let mut poly = vec![Complex64::new(1.0, 0.0)];
            for &p in &pts {
                let (a, b) = match role {
                    Role::Beta => (-p, 1.0),
                    Role::Y => (1.0, -p),
                };
                let mut next = vec![Complex64::new(0.0, 0.0); poly.len() + 1];
                for (i, c) in poly.iter().enumerate() {
                    next[i] += c * b;
                    next[i + 1] += c * a;
                }
                poly = next;
            }
            let deriv = |r: usize| -> Complex64 {
                poly.iter()
                    .enumerate()
                    .filter(|(i, _)| *i >= r)
                    .map(|(i, c)| c * ((i - r + 1)..=i).product::<usize>() as f64 * z.powi((i - r) as i32))
                    .sum()
            };
            let ratios = log_derivative_ratios(&pts, role, z, 5).unwrap();
            for (r, v) in ratios.iter().enumerate() {
                let expect = deriv(r) / deriv(0);
                assert!((v - expect).norm() < 1e-11 * expect.norm().max(1.0), "{role:?} r={r}");
            }
        }
    }

    #[test]
    fn f0_is_n() {
        let env = random_env(7, 3);
        let v = f_k(&env, 4, 0, None).unwrap();
        assert!((v.value.re - 4.0).abs() < 1e-10 && v.value.im.abs() < 1e-9);
    }

    #[test]
    fn first_moment_matches_bernoulli_identity() {
        let env = random_env(4, 11);
        let e = expectation_pk(&env, 2, 1).unwrap();
        assert!((e - bernoulli_mean_p1(&env, 2)).abs() < 1e-10);
    }

    #[test]
    fn moments_match_enumeration() {
        for (m, n, k, seed) in [(3, 1, 2, 1u64), (5, 3, 3, 2), (4, 2, 3, 3), (5, 1, 2, 4), (5, 4, 3, 5)] {
            let env = random_env(m, seed);
            let exact = exact_joint_moments(&env, &[n], &[k as u32], false).unwrap();
            let quad = expectation_pk(&env, n, k).unwrap();
            assert!((exact - quad).abs() < 1e-8 * exact.abs().max(1.0), "M={m} N={n} k={k}: {exact} vs {quad}");
        }
    }

    #[test]
    fn doubling_beyond_acceptance_is_stable() {
        let env = random_env(12, 8);
        let c = default_contour(&env, 6).unwrap();
        let v = f_k(&env, 6, 3, Some(c)).unwrap();
        assert!(v.residual <= 1e-10 * v.value.norm());
        assert!(v.value.im.abs() < 1e-9 * v.value.norm().max(1.0));
    }

    #[test]
    fn inadmissible_contour_is_rejected() {
        let env = random_env(4, 1);
        assert!(matches!(f_k(&env, 2, 1, Some(ContourSpec::circle(1.5))), Err(Error::Contour(_))));
        assert!(f_k(&env, 4, 1, None).is_err());
    }

    #[test]
    fn g_leading_zero_order_and_collision() {
        let env = random_env(6, 2);
        assert_eq!(g_leading(&env, 3, 3, 0, 2, None).unwrap().value, Complex64::new(0.0, 0.0));
        let r = default_nested(&env, 3, 3).unwrap();
        assert!(matches!(g_leading(&env, 3, 3, 1, 1, Some((r.0, r.0))), Err(Error::Contour(_))));
    }

    /// For k1 = k2 = 1 the leading term already equals the exact variance.
    #[test]
    fn g11_equals_bernoulli_variance() {
        let env = random_env(9, 21);
        let g = g_leading(&env, 4, 4, 1, 1, None).unwrap().value.re;
        assert!((g - bernoulli_var_p1(&env, 4)).abs() < 1e-9);
    }

    /// The leading term is symmetric only asymptotically: the relative
    /// asymmetry is O(1/M), the same order as the omitted remainder.
    #[test]
    fn g_leading_is_asymptotically_symmetric() {
        let rel = |m: usize, a: usize, b: usize| {
            let env = WeightEnvironment::new(vec![0.3; m], vec![0.2; m]).unwrap();
            let x = g_leading(&env, m / 2, m / 2, a, b, None).unwrap().value.re;
            let y = g_leading(&env, m / 2, m / 2, b, a, None).unwrap().value.re;
            ((x - y) / x).abs()
        };
        for (a, b) in [(1, 2), (2, 3)] {
            let (r1, r2) = (rel(160, a, b), rel(320, a, b));
            assert!(r2 < 5e-3, "({a},{b}) asymmetry {r2}");
            assert!((r1 / r2 - 2.0).abs() < 0.2, "({a},{b}) asymmetry not O(1/M): {r1} {r2}");
        }
        let env = random_env(10, 4);
        let x = g_leading(&env, 5, 5, 1, 1, None).unwrap().value.re;
        assert!(x > 0.0);
    }

    #[test]
    fn g_leading_large_m_trend() {
        for m in [100, 200, 400] {
            let env = WeightEnvironment::new(vec![0.5; m], vec![0.0; m]).unwrap();
            let g = g_leading(&env, m / 2, m / 2, 1, 1, None).unwrap().value.re / (m * m) as f64;
            if m == 400 {
                assert!((g / (1.0 / 16.0) - 1.0).abs() < 0.02);
            }
        }
    }

    #[test]
    fn routing_and_remainder() {
        let env = random_env(4, 17);
        let exact = quenched_central_moment_mc_free(&env, 2, 2, 2).unwrap();
        assert_eq!(exact.provenance, Provenance::ExactEnum);
        let lead = leading_order_covariance(&env, 2, 2, 2).unwrap();
        assert_eq!(lead.provenance, Provenance::LeadingOrder);
        assert!((exact.value - lead.value).abs() > 1e-6, "remainder should be visible at M = 4");
        let big = WeightEnvironment::new(vec![0.5; 100], vec![0.0; 100]).unwrap();
        assert_eq!(
            quenched_central_moment_mc_free(&big, 50, 1, 1).unwrap().provenance,
            Provenance::LeadingOrder
        );
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]
        #[test]
        fn f0_is_n_everywhere(seed in 0u64..10_000, m in 2usize..60, frac in 0.05f64..0.95) {
            let env = random_env(m, seed);
            let n = ((m as f64 * frac) as usize).clamp(1, m - 1);
            let v = f_k(&env, n, 0, None).unwrap();
            prop_assert!((v.value.re - n as f64).abs() < 1e-10 * n as f64);
            prop_assert!(v.value.im.abs() < 1e-9);
        }

        #[test]
        fn p1_bernoulli_everywhere(seed in 0u64..10_000, m in 2usize..80, frac in 0.05f64..0.95) {
            let env = random_env(m, seed);
            let n = ((m as f64 * frac) as usize).clamp(1, m - 1);
            let e = expectation_pk(&env, n, 1).unwrap();
            let b = bernoulli_mean_p1(&env, n);
            prop_assert!((e - b).abs() < 1e-9 * b.max(1.0));
        }
    }
}
