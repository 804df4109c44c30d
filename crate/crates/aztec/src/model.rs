//! Signatures, interlacing, weight environments and covering weights.
//!
//! A dimer covering of the Aztec diamond of size `M` is encoded as a chain
//! `∅ ≺ θ¹ ≻ᵥ λ¹ ≺ θ² ≻ᵥ λ² ≺ … ≺ θᴹ ≻ᵥ λᴹ`, with `θⁱ, λⁱ` of length `i`
//! and `λᴹ` the all-zero signature.

use serde::{Deserialize, Serialize};

use crate::error::{usage, Error, Result};

/// Default admissibility margin for `y` (so `|y_i| < 1 − δ`).
pub const DEFAULT_DELTA: f64 = 0.1;

/// Non-increasing integer tuple (an element of `GT_N`).
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "Vec<i64>", into = "Vec<i64>")]
pub struct Signature {
    parts: Vec<i64>,
}

impl Signature {
    pub fn new(parts: Vec<i64>) -> Result<Self> {
        if parts.windows(2).any(|w| w[0] < w[1]) {
            return Err(Error::Precondition(format!(
                "signature parts must be non-increasing: {parts:?}"
            )));
        }
        Ok(Self { parts })
    }

    /// All-zero signature of length `n`.
    pub fn zeros(n: usize) -> Self {
        Self { parts: vec![0; n] }
    }

    pub fn empty() -> Self {
        Self { parts: Vec::new() }
    }

    pub fn parts(&self) -> &[i64] {
        &self.parts
    }

    pub fn len(&self) -> usize {
        self.parts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.parts.is_empty()
    }

    /// `|λ|`, the sum of parts.
    pub fn size(&self) -> i64 {
        self.parts.iter().sum()
    }

    pub fn nonzero_parts(&self) -> usize {
        self.parts.iter().filter(|&&p| p != 0).count()
    }

    /// Conjugate diagram `λ′` (length `λ_1`); requires non-negative parts.
    pub fn conjugate(&self) -> Result<Self> {
        if self.parts.last().is_some_and(|&p| p < 0) {
            return usage("conjugate of a signature with negative parts");
        }
        let width = self.parts.first().copied().unwrap_or(0) as usize;
        let parts = (1..=width as i64)
            .map(|c| self.parts.iter().filter(|&&p| p >= c).count() as i64)
            .collect();
        Ok(Self { parts })
    }

    /// Same parts padded with zeros (or truncated of zeros) to length `n`.
    pub fn padded(&self, n: usize) -> Result<Self> {
        if self.nonzero_parts() > n || self.parts.last().is_some_and(|&p| p < 0) {
            return usage(format!("cannot pad {:?} to length {n}", self.parts));
        }
        let mut parts: Vec<i64> = self.parts.iter().copied().filter(|&p| p > 0).collect();
        parts.resize(n, 0);
        Ok(Self { parts })
    }
}

impl TryFrom<Vec<i64>> for Signature {
    type Error = Error;
    fn try_from(parts: Vec<i64>) -> Result<Self> {
        Signature::new(parts)
    }
}

impl From<Signature> for Vec<i64> {
    fn from(s: Signature) -> Self {
        s.parts
    }
}

/// `mu ≺ lam`: `lam_i ≥ mu_i ≥ lam_{i+1}`, with `len(mu) = len(lam) − 1`.
pub fn is_interlacing(mu: &Signature, lam: &Signature) -> Result<bool> {
    if mu.len() + 1 != lam.len() {
        return usage(format!(
            "interlacing needs lengths N−1 and N, got {} and {}",
            mu.len(),
            lam.len()
        ));
    }
    let (m, l) = (mu.parts(), lam.parts());
    Ok((0..m.len()).all(|i| l[i] >= m[i] && m[i] >= l[i + 1]))
}

/// `theta ≻ᵥ lam`: coordinatewise difference in `{0, 1}`.
pub fn is_vertical_interlacing(theta: &Signature, lam: &Signature) -> Result<bool> {
    if theta.len() != lam.len() {
        return usage(format!(
            "vertical interlacing needs equal lengths, got {} and {}",
            theta.len(),
            lam.len()
        ));
    }
    Ok(theta
        .parts()
        .iter()
        .zip(lam.parts())
        .all(|(t, l)| matches!(t - l, 0 | 1)))
}

/// `p_k = Σ_i (λ_i + N − i)^k`, exact.
pub fn power_sum(lam: &Signature, k: u32) -> i128 {
    let n = lam.len() as i64;
    lam.parts()
        .iter()
        .enumerate()
        .map(|(i, &p)| ((p + n - 1 - i as i64) as i128).pow(k))
        .sum()
}

/// `p_k` in floating point (for statistics at large `M`).
pub fn power_sum_f64(lam: &Signature, k: u32) -> f64 {
    let n = lam.len() as i64;
    lam.parts()
        .iter()
        .enumerate()
        .map(|(i, &p)| ((p + n - 1 - i as i64) as f64).powi(k as i32))
        .sum()
}

/// Empirical measure of the shifted particles `(λ_i + N − i)/N`, each of mass `1/N`.
#[derive(Clone, Debug, PartialEq)]
pub struct EmpiricalMeasure {
    atoms: Vec<f64>,
}

impl EmpiricalMeasure {
    pub fn of(lam: &Signature) -> Self {
        let n = lam.len() as i64;
        let atoms = lam
            .parts()
            .iter()
            .enumerate()
            .map(|(i, &p)| (p + n - 1 - i as i64) as f64 / n as f64)
            .collect();
        Self { atoms }
    }

    /// Strictly decreasing.
    pub fn atoms(&self) -> &[f64] {
        &self.atoms
    }

    pub fn cdf(&self, t: f64) -> f64 {
        if self.atoms.is_empty() {
            return 0.0;
        }
        self.atoms.iter().filter(|&&a| a <= t).count() as f64 / self.atoms.len() as f64
    }
}

/// Fraction of the atoms of `m[λ]` that are `≤ t`.
pub fn empirical_cdf(lam: &Signature, t: f64) -> f64 {
    EmpiricalMeasure::of(lam).cdf(t)
}

#[derive(Deserialize)]
struct RawEnvironment {
    #[serde(rename = "M")]
    m: usize,
    beta: Vec<f64>,
    y: Vec<f64>,
    #[serde(default = "default_delta")]
    delta: f64,
}

fn default_delta() -> f64 {
    DEFAULT_DELTA
}

/// Edge weights of one diamond with `u = v = 1`: `w_i = β_i/(1−β_i)`, `x_i = 1 − y_i`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawEnvironment")]
pub struct WeightEnvironment {
    #[serde(rename = "M")]
    m: usize,
    beta: Vec<f64>,
    y: Vec<f64>,
    delta: f64,
}

impl TryFrom<RawEnvironment> for WeightEnvironment {
    type Error = Error;
    fn try_from(r: RawEnvironment) -> Result<Self> {
        if r.m != r.beta.len() || r.m != r.y.len() {
            return Err(Error::Precondition(format!(
                "M = {} but {} betas and {} ys",
                r.m,
                r.beta.len(),
                r.y.len()
            )));
        }
        Self::with_delta(r.beta, r.y, r.delta)
    }
}

impl WeightEnvironment {
    pub fn new(beta: Vec<f64>, y: Vec<f64>) -> Result<Self> {
        Self::with_delta(beta, y, DEFAULT_DELTA)
    }

    pub fn with_delta(beta: Vec<f64>, y: Vec<f64>, delta: f64) -> Result<Self> {
        if beta.is_empty() || beta.len() != y.len() {
            return Err(Error::Precondition(format!(
                "need M ≥ 1 betas and as many ys, got {} and {}",
                beta.len(),
                y.len()
            )));
        }
        if !(delta > 0.0 && delta < 2.0) {
            return Err(Error::Precondition(format!("delta {delta} outside (0,2)")));
        }
        if let Some(i) = beta.iter().position(|b| !(*b > 0.0 && *b < 1.0)) {
            return Err(Error::Precondition(format!(
                "beta[{i}] = {} outside (0,1)",
                beta[i]
            )));
        }
        if let Some(i) = y.iter().position(|v| !(v.abs() < 1.0 - delta)) {
            return Err(Error::Precondition(format!(
                "|y[{i}]| = {} not below 1 − δ = {}",
                y[i].abs(),
                1.0 - delta
            )));
        }
        Ok(Self { m: beta.len(), beta, y, delta })
    }

    /// Build from `(w, x)` directly; `w_i > 0` and `x_i` inside `(δ, 2−δ)`.
    pub fn from_wx(w: &[f64], x: &[f64]) -> Result<Self> {
        let beta = w.iter().map(|w| w / (1.0 + w)).collect();
        let y = x.iter().map(|x| 1.0 - x).collect();
        Self::new(beta, y)
    }

    /// All weights equal to one (`β = 1/2`, `y = 0`).
    pub fn uniform(m: usize) -> Self {
        Self::new(vec![0.5; m], vec![0.0; m]).expect("unit weights are admissible")
    }

    pub fn m(&self) -> usize {
        self.m
    }
    pub fn delta(&self) -> f64 {
        self.delta
    }
    pub fn beta(&self) -> &[f64] {
        &self.beta
    }
    pub fn y(&self) -> &[f64] {
        &self.y
    }
    /// `w_i` for 1-based `i`.
    pub fn w(&self, i: usize) -> f64 {
        let b = self.beta[i - 1];
        b / (1.0 - b)
    }
    /// `x_i` for 1-based `i`.
    pub fn x(&self, i: usize) -> f64 {
        1.0 - self.y[i - 1]
    }

    /// `a_ij = x_i w_j / (1 + x_i w_j)` (1-based).
    pub fn bernoulli_param(&self, i: usize, j: usize) -> f64 {
        let t = self.x(i) * self.w(j);
        t / (1.0 + t)
    }
}

/// The signatures `θ⁽ⁱ⁾, λ⁽ⁱ⁾`, `i = 1..M`, of one covering.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct InterlacingChain {
    pub theta: Vec<Signature>,
    pub lambda: Vec<Signature>,
}

impl InterlacingChain {
    pub fn m(&self) -> usize {
        self.theta.len()
    }

    /// Checks every interlacing relation and the terminal condition `λᴹ = 0`.
    pub fn validate(&self, m: usize) -> Result<()> {
        let bad = |msg: String| Err(Error::Precondition(msg));
        if self.theta.len() != m || self.lambda.len() != m {
            return bad(format!("chain has {} levels, expected {m}", self.theta.len()));
        }
        let mut prev = Signature::empty();
        for i in 0..m {
            let (t, l) = (&self.theta[i], &self.lambda[i]);
            if t.len() != i + 1 || l.len() != i + 1 {
                return bad(format!("level {} has wrong lengths", i + 1));
            }
            if !is_interlacing(&prev, t)? {
                return bad(format!("λ^({}) ⊀ θ^({})", i, i + 1));
            }
            if !is_vertical_interlacing(t, l)? {
                return bad(format!("θ^({0}) not ≻ᵥ λ^({0})", i + 1));
            }
            prev = l.clone();
        }
        if prev.parts().iter().any(|&p| p != 0) {
            return bad("λ^(M) must be the zero signature".into());
        }
        Ok(())
    }

    /// Per-level exponents `(a_i, b_i) = (|θⁱ| − |λⁱ|, |θⁱ| − |λⁱ⁻¹|)`.
    pub fn exponents(&self) -> Vec<(i64, i64)> {
        let mut prev = 0;
        self.theta
            .iter()
            .zip(&self.lambda)
            .map(|(t, l)| {
                let e = (t.size() - l.size(), t.size() - prev);
                prev = l.size();
                e
            })
            .collect()
    }
}

/// Product of edge weights `Π_i w_i^{a_i} x_i^{b_i}` (`u = v = 1`).
pub fn covering_weight(chain: &InterlacingChain, env: &WeightEnvironment) -> Result<f64> {
    chain.validate(env.m())?;
    let extreme = (1..=env.m()).any(|i| {
        let (w, x) = (env.w(i), env.x(i));
        !(1e-8..=1e8).contains(&w) || !(1e-8..=1e8).contains(&x)
    });
    if extreme {
        return Ok(log_weight_unchecked(chain, env).exp());
    }
    Ok(chain
        .exponents()
        .iter()
        .enumerate()
        .map(|(i, &(a, b))| env.w(i + 1).powi(a as i32) * env.x(i + 1).powi(b as i32))
        .product())
}

/// `log` of [`covering_weight`].
pub fn log_covering_weight(chain: &InterlacingChain, env: &WeightEnvironment) -> Result<f64> {
    chain.validate(env.m())?;
    Ok(log_weight_unchecked(chain, env))
}

fn log_weight_unchecked(chain: &InterlacingChain, env: &WeightEnvironment) -> f64 {
    chain
        .exponents()
        .iter()
        .enumerate()
        .map(|(i, &(a, b))| a as f64 * env.w(i + 1).ln() + b as f64 * env.x(i + 1).ln())
        .sum()
}

/// Monomial exponents of the general four-weight form
/// `Π v_i^{M−i+1} u_i^i (w_i/u_i)^{a_i} (x_i/v_i)^{b_i}`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FullWeightExponents {
    pub u: Vec<i64>,
    pub v: Vec<i64>,
    pub w: Vec<i64>,
    pub x: Vec<i64>,
}

pub fn full_weight_exponents(chain: &InterlacingChain) -> FullWeightExponents {
    let m = chain.m() as i64;
    let ex = chain.exponents();
    let mut out = FullWeightExponents {
        u: vec![],
        v: vec![],
        w: vec![],
        x: vec![],
    };
    for (idx, &(a, b)) in ex.iter().enumerate() {
        let i = idx as i64 + 1;
        out.u.push(i - a);
        out.v.push(m - i + 1 - b);
        out.w.push(a);
        out.x.push(b);
    }
    out
}

/// Numeric value of the four-weight form; all slices have length `M`.
pub fn covering_weight_full(
    chain: &InterlacingChain,
    u: &[f64],
    v: &[f64],
    w: &[f64],
    x: &[f64],
) -> Result<f64> {
    let m = chain.m();
    if [u.len(), v.len(), w.len(), x.len()].iter().any(|&l| l != m) {
        return usage("weight vectors must all have length M");
    }
    chain.validate(m)?;
    let e = full_weight_exponents(chain);
    Ok((0..m)
        .map(|i| {
            u[i].powi(e.u[i] as i32)
                * v[i].powi(e.v[i] as i32)
                * w[i].powi(e.w[i] as i32)
                * x[i].powi(e.x[i] as i32)
        })
        .product())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn sig(p: &[i64]) -> Signature {
        Signature::new(p.to_vec()).unwrap()
    }

    #[test]
    fn interlacing_examples() {
        assert!(is_interlacing(&sig(&[2]), &sig(&[2, 1])).unwrap());
        assert!(!is_interlacing(&sig(&[0]), &sig(&[3, 1])).unwrap());
        assert!(is_interlacing(&Signature::empty(), &sig(&[7])).unwrap());
        assert!(is_interlacing(&sig(&[1, 1]), &sig(&[2])).is_err());
    }

    #[test]
    fn vertical_examples() {
        assert!(is_vertical_interlacing(&sig(&[2, 1]), &sig(&[1, 1])).unwrap());
        assert!(!is_vertical_interlacing(&sig(&[2, 0]), &sig(&[0, 0])).unwrap());
        assert!(is_vertical_interlacing(&sig(&[5, 3, 0]), &sig(&[5, 3, 0])).unwrap());
        assert!(is_vertical_interlacing(&sig(&[1]), &sig(&[1, 0])).is_err());
    }

    #[test]
    fn power_sum_examples() {
        assert_eq!(power_sum(&sig(&[0, 0, 0]), 1), 3);
        assert_eq!(power_sum(&sig(&[2, 1]), 2), 10);
        assert_eq!(power_sum(&sig(&[4, 2, 2, 0]), 0), 4);
    }

    #[test]
    fn cdf_examples() {
        assert_eq!(empirical_cdf(&sig(&[0, 0]), 1.0), 1.0);
        assert_eq!(empirical_cdf(&sig(&[0, 0]), 0.25), 0.5);
        assert_eq!(empirical_cdf(&sig(&[3]), -1.0), 0.0);
    }

    #[test]
    fn rejects_increasing_parts() {
        assert!(Signature::new(vec![1, 2]).is_err());
    }

    fn zero_chain(m: usize) -> InterlacingChain {
        InterlacingChain {
            theta: (1..=m).map(Signature::zeros).collect(),
            lambda: (1..=m).map(Signature::zeros).collect(),
        }
    }

    #[test]
    fn zero_chain_has_unit_weight() {
        let env = WeightEnvironment::new(vec![0.3, 0.8, 0.6], vec![0.2, -0.5, 0.1]).unwrap();
        assert_eq!(covering_weight(&zero_chain(3), &env).unwrap(), 1.0);
    }

    #[test]
    fn size_one_weight() {
        let env = WeightEnvironment::from_wx(&[2.0], &[0.5]).unwrap();
        let chain = InterlacingChain {
            theta: vec![sig(&[1])],
            lambda: vec![sig(&[0])],
        };
        assert!((covering_weight(&chain, &env).unwrap() - 1.0).abs() < 1e-15);
    }

    /// The size-3 covering whose monomial is u3 v3 u2 u1 v1² x2² x1 w3² w2.
    #[test]
    fn size_three_figure_monomial() {
        let chain = InterlacingChain {
            theta: vec![sig(&[1]), sig(&[2, 1]), sig(&[1, 1, 0])],
            lambda: vec![sig(&[1]), sig(&[1, 1]), sig(&[0, 0, 0])],
        };
        chain.validate(3).unwrap();
        let e = full_weight_exponents(&chain);
        assert_eq!(e.u, vec![1, 1, 1]);
        assert_eq!(e.v, vec![2, 0, 1]);
        assert_eq!(e.w, vec![0, 1, 2]);
        assert_eq!(e.x, vec![1, 2, 0]);
        let (u, v, w, x) = ([2.0, 3.0, 5.0], [7.0, 11.0, 13.0], [17.0, 19.0, 23.0], [29.0, 31.0, 37.0]);
        let expected = u[2] * v[2] * u[1] * u[0] * v[0] * v[0] * x[1] * x[1] * x[0] * w[2] * w[2] * w[1];
        let got = covering_weight_full(&chain, &u, &v, &w, &x).unwrap();
        assert!((got / expected - 1.0).abs() < 1e-14);
    }

    #[test]
    fn log_space_path_agrees() {
        let chain = InterlacingChain {
            theta: vec![sig(&[1]), sig(&[2, 1]), sig(&[1, 1, 0])],
            lambda: vec![sig(&[1]), sig(&[1, 1]), sig(&[0, 0, 0])],
        };
        let env = WeightEnvironment::new(vec![1e-9, 0.5, 1.0 - 1e-9], vec![0.0; 3]).unwrap();
        let direct: f64 = chain
            .exponents()
            .iter()
            .enumerate()
            .map(|(i, &(a, b))| env.w(i + 1).powi(a as i32) * env.x(i + 1).powi(b as i32))
            .product();
        let got = covering_weight(&chain, &env).unwrap();
        assert!((got / direct - 1.0).abs() < 1e-9);
    }

    #[test]
    fn environment_validation_and_json() {
        assert!(WeightEnvironment::new(vec![1.0], vec![0.0]).is_err());
        assert!(WeightEnvironment::new(vec![0.5], vec![0.95]).is_err());
        let env = WeightEnvironment::new(vec![0.25, 0.5], vec![0.1, -0.2]).unwrap();
        let s = serde_json::to_string(&env).unwrap();
        assert!(s.contains("\"M\":2"));
        let back: WeightEnvironment = serde_json::from_str(&s).unwrap();
        assert_eq!(back, env);
        let d: WeightEnvironment =
            serde_json::from_str(r#"{"M":1,"beta":[0.5],"y":[0.0]}"#).unwrap();
        assert_eq!(d.delta(), DEFAULT_DELTA);
        assert!(serde_json::from_str::<WeightEnvironment>(r#"{"M":2,"beta":[0.5],"y":[0.0]}"#).is_err());
        assert!((env.w(1) - 1.0 / 3.0).abs() < 1e-15);
        assert!((env.x(2) - 1.2).abs() < 1e-15);
        assert_eq!(serde_json::to_string(&sig(&[3, 1])).unwrap(), "[3,1]");
    }

    fn arb_signature() -> impl Strategy<Value = Signature> {
        prop::collection::vec(0i64..12, 0..8).prop_map(|mut v| {
            v.sort_unstable_by(|a, b| b.cmp(a));
            Signature::new(v).unwrap()
        })
    }

    proptest! {
        #[test]
        fn conjugation_is_an_involution(lam in arb_signature()) {
            let c = lam.conjugate().unwrap();
            prop_assert_eq!(c.size(), lam.size());
            let back = c.conjugate().unwrap();
            let trimmed = lam.padded(lam.nonzero_parts()).unwrap();
            prop_assert_eq!(back.parts(), trimmed.parts());
        }

        #[test]
        fn p0_is_length(lam in arb_signature()) {
            prop_assert_eq!(power_sum(&lam, 0), lam.len() as i128);
        }

        #[test]
        fn cdf_is_monotone(lam in arb_signature(), a in -2.0f64..4.0, b in -2.0f64..4.0) {
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            prop_assert!(empirical_cdf(&lam, lo) <= empirical_cdf(&lam, hi));
            if !lam.is_empty() {
                prop_assert_eq!(empirical_cdf(&lam, -1e9), 0.0);
                prop_assert_eq!(empirical_cdf(&lam, 1e9), 1.0);
                let atoms = EmpiricalMeasure::of(&lam);
                prop_assert!(atoms.atoms().windows(2).all(|w| w[0] > w[1]));
            }
        }

        #[test]
        fn weights_are_positive(betas in prop::collection::vec(0.01f64..0.99, 3), ys in prop::collection::vec(-0.85f64..0.85, 3)) {
            let env = WeightEnvironment::new(betas, ys).unwrap();
            let chain = InterlacingChain {
                theta: vec![sig(&[1]), sig(&[2, 1]), sig(&[1, 1, 0])],
                lambda: vec![sig(&[1]), sig(&[1, 1]), sig(&[0, 0, 0])],
            };
            prop_assert!(covering_weight(&chain, &env).unwrap() > 0.0);
        }
    }
}
