//! Random environments and the empirical coefficient series of their power sums.
//!
//! Three concrete families are provided: i.i.d. pairs `(y, β)`, a finite-state
//! stationary Markov chain of pairs, and squared GUE eigenvalues
//! (`β = (l² + 1)/(l² + 2)`, `x ≡ 1`). Each environment draw is a pure function
//! of `(model, M, seed)`; batches split the seed into ChaCha streams.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{ChiSquared, Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::asymptotics::gue;
use crate::error::{Error, Result};
use crate::model::{WeightEnvironment, DEFAULT_DELTA};
use crate::numeric::gauss_legendre_on;
use crate::report::Provenance;

fn config<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Config(msg.into()))
}

/// Law of one real coordinate.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum Marginal {
    Point { value: f64 },
    Discrete { values: Vec<f64>, probs: Vec<f64> },
    Uniform { lo: f64, hi: f64 },
}

/// Gauss–Legendre nodes used to integrate against uniform marginals.
const UNIFORM_NODES: usize = 64;

impl Marginal {
    fn validate(&self) -> Result<()> {
        match self {
            Marginal::Point { value } if !value.is_finite() => config("non-finite point mass"),
            Marginal::Discrete { values, probs } => {
                if values.is_empty() || values.len() != probs.len() {
                    return config("discrete law needs as many probabilities as values");
                }
                if probs.iter().any(|p| !(*p >= 0.0)) || (probs.iter().sum::<f64>() - 1.0).abs() > 1e-12 {
                    return config("discrete probabilities must be non-negative and sum to 1");
                }
                Ok(())
            }
            Marginal::Uniform { lo, hi } if !(lo < hi) => config(format!("uniform law needs lo < hi, got [{lo}, {hi}]")),
            _ => Ok(()),
        }
    }

    /// Weighted atoms (exact for discrete laws, Gauss–Legendre for uniform).
    fn atoms(&self) -> Vec<(f64, f64)> {
        match self {
            Marginal::Point { value } => vec![(*value, 1.0)],
            Marginal::Discrete { values, probs } => values.iter().copied().zip(probs.iter().copied()).collect(),
            Marginal::Uniform { lo, hi } => {
                let (x, w) = gauss_legendre_on(*lo, *hi, UNIFORM_NODES);
                x.into_iter().zip(w.into_iter().map(|w| w / (hi - lo))).collect()
            }
        }
    }

    /// Closed support hull `[min, max]`.
    fn hull(&self) -> (f64, f64) {
        match self {
            Marginal::Point { value } => (*value, *value),
            Marginal::Discrete { values, .. } => values.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(*v), b.max(*v))),
            Marginal::Uniform { lo, hi } => (*lo, *hi),
        }
    }

    fn sample<R: Rng>(&self, rng: &mut R) -> f64 {
        match self {
            Marginal::Point { value } => *value,
            Marginal::Discrete { values, probs } => values[pick(probs, rng)],
            Marginal::Uniform { lo, hi } => rng.random_range(*lo..*hi),
        }
    }
}

fn pick<R: Rng>(probs: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    probs.len() - 1
}

/// One atom of a joint law of `(y, β)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PairAtom {
    pub y: f64,
    pub beta: f64,
    pub prob: f64,
}

/// Law of one pair `(y_j, β_j)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum PairLaw {
    Joint { atoms: Vec<PairAtom> },
    Independent { y: Marginal, beta: Marginal },
}

impl PairLaw {
    /// Two equiprobable `β` values, `y ≡ 0`.
    pub fn two_point_beta(a: f64, b: f64) -> Self {
        PairLaw::Independent {
            y: Marginal::Point { value: 0.0 },
            beta: Marginal::Discrete { values: vec![a, b], probs: vec![0.5, 0.5] },
        }
    }

    pub fn point(y: f64, beta: f64) -> Self {
        PairLaw::Independent { y: Marginal::Point { value: y }, beta: Marginal::Point { value: beta } }
    }

    /// Checks the law and that its support respects the weight bands for `delta`.
    pub fn validate(&self, delta: f64) -> Result<()> {
        match self {
            PairLaw::Joint { atoms } => {
                if atoms.is_empty() || atoms.iter().any(|a| !(a.prob >= 0.0)) {
                    return config("joint law needs non-negative atoms");
                }
                if (atoms.iter().map(|a| a.prob).sum::<f64>() - 1.0).abs() > 1e-12 {
                    return config("joint probabilities must sum to 1");
                }
            }
            PairLaw::Independent { y, beta } => {
                y.validate()?;
                beta.validate()?;
            }
        }
        let (b_lo, b_hi) = self.beta_hull();
        let y_max = self.y_abs_max();
        if !(b_lo > 0.0 && b_hi < 1.0) {
            return config(format!("β support [{b_lo}, {b_hi}] not inside (0, 1)"));
        }
        if !(y_max < 1.0 - delta) {
            return config(format!("|y| support reaches {y_max}, not below 1 − δ = {}", 1.0 - delta));
        }
        Ok(())
    }

    pub fn beta_hull(&self) -> (f64, f64) {
        match self {
            PairLaw::Joint { atoms } => atoms.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), t| (a.min(t.beta), b.max(t.beta))),
            PairLaw::Independent { beta, .. } => beta.hull(),
        }
    }

    pub fn y_abs_max(&self) -> f64 {
        match self {
            PairLaw::Joint { atoms } => atoms.iter().fold(0.0, |a, t| a.max(t.y.abs())),
            PairLaw::Independent { y, .. } => {
                let (a, b) = y.hull();
                a.abs().max(b.abs())
            }
        }
    }

    /// Weighted support points `(y, β, weight)`; products of marginals when independent.
    pub fn atoms(&self) -> Vec<PairAtom> {
        match self {
            PairLaw::Joint { atoms } => atoms.clone(),
            PairLaw::Independent { y, beta } => {
                let (ya, ba) = (y.atoms(), beta.atoms());
                ya.iter()
                    .flat_map(|&(y, py)| ba.iter().map(move |&(b, pb)| PairAtom { y, beta: b, prob: py * pb }))
                    .collect()
            }
        }
    }

    /// `E[f(y, β)]`.
    pub fn expect<T, F>(&self, f: F) -> T
    where
        T: std::ops::Add<Output = T> + std::ops::Mul<f64, Output = T> + Default,
        F: Fn(f64, f64) -> T,
    {
        self.atoms().into_iter().fold(T::default(), |acc, a| acc + f(a.y, a.beta) * a.prob)
    }

    pub fn sample<R: Rng>(&self, rng: &mut R) -> (f64, f64) {
        match self {
            PairLaw::Joint { atoms } => {
                let probs: Vec<f64> = atoms.iter().map(|a| a.prob).collect();
                let a = atoms[pick(&probs, rng)];
                (a.y, a.beta)
            }
            PairLaw::Independent { y, beta } => (y.sample(rng), beta.sample(rng)),
        }
    }
}

/// Finite-state chain of pairs `(y, β)`, run from its stationary law.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MarkovChain {
    /// State values `(y, β)`.
    pub states: Vec<(f64, f64)>,
    /// Row-stochastic transition matrix.
    pub transition: Vec<Vec<f64>>,
}

impl MarkovChain {
    pub fn validate(&self, delta: f64) -> Result<()> {
        let s = self.states.len();
        if s == 0 || self.transition.len() != s || self.transition.iter().any(|r| r.len() != s) {
            return config(format!("transition matrix must be {s}×{s}"));
        }
        for (i, row) in self.transition.iter().enumerate() {
            if row.iter().any(|p| !(*p >= 0.0)) || (row.iter().sum::<f64>() - 1.0).abs() > 1e-12 {
                return config(format!("row {i} of the transition matrix is not a probability vector"));
            }
        }
        for &(y, b) in &self.states {
            if !(b > 0.0 && b < 1.0) || !(y.abs() < 1.0 - delta) {
                return config(format!("state (y = {y}, β = {b}) outside the weight bands"));
            }
        }
        Ok(())
    }

    pub fn matrix(&self) -> DMatrix<f64> {
        let s = self.states.len();
        DMatrix::from_fn(s, s, |i, j| self.transition[i][j])
    }

    /// Stationary law `π P = π`; fails for chains without a unique one.
    pub fn stationary(&self) -> Result<Vec<f64>> {
        let s = self.states.len();
        let p = self.matrix();
        let mut a = p.transpose() - DMatrix::identity(s, s);
        for j in 0..s {
            a[(s - 1, j)] = 1.0;
        }
        let mut rhs = DVector::zeros(s);
        rhs[s - 1] = 1.0;
        let pi = a
            .lu()
            .solve(&rhs)
            .ok_or_else(|| Error::Config("transition matrix has no unique stationary law".into()))?;
        if pi.iter().any(|v| *v < -1e-12) {
            return config("stationary solve produced negative mass");
        }
        Ok(pi.iter().map(|v| v.max(0.0)).collect())
    }

    /// Trajectory of state indices of length `m`, started from stationarity.
    pub fn trajectory<R: Rng>(&self, m: usize, rng: &mut R) -> Result<Vec<usize>> {
        let pi = self.stationary()?;
        let mut s = pick(&pi, rng);
        let mut out = Vec::with_capacity(m);
        for _ in 0..m {
            out.push(s);
            s = pick(&self.transition[s], rng);
        }
        Ok(out)
    }
}

/// The studied environment classes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "variant", rename_all = "kebab-case", deny_unknown_fields)]
pub enum ModelKind {
    /// Fixed values, repeated cyclically up to length `M`.
    Deterministic { beta: Vec<f64>, y: Vec<f64> },
    Iid { law: PairLaw },
    Markov { chain: MarkovChain },
    /// `β_{M−i+1} = (l_i²+1)/(l_i²+2)` from the ordered spectrum of a size-`M` GUE.
    Gue,
    /// `β = 1/2` up to level `⌊γM⌋`, squared GUE eigenvalues of size `M − ⌊γM⌋` above.
    GueFull { gamma: f64 },
}

/// An environment class with its band parameter `δ`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EnvironmentModel {
    #[serde(flatten)]
    pub kind: ModelKind,
    pub delta: f64,
}

fn default_delta() -> f64 {
    DEFAULT_DELTA
}

// `flatten` would silently accept unknown keys, so `delta` is split off by hand
// and the rest must match one variant exactly.
impl<'de> Deserialize<'de> for EnvironmentModel {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        use serde::de::Error as _;
        let mut map = serde_json::Map::<String, serde_json::Value>::deserialize(d)?;
        let delta = match map.remove("delta") {
            Some(v) => f64::deserialize(v).map_err(D::Error::custom)?,
            None => default_delta(),
        };
        let kind = ModelKind::deserialize(serde_json::Value::Object(map)).map_err(D::Error::custom)?;
        Ok(Self { kind, delta })
    }
}

impl EnvironmentModel {
    pub fn new(kind: ModelKind) -> Self {
        Self { kind, delta: DEFAULT_DELTA }
    }

    pub fn validate(&self) -> Result<()> {
        match &self.kind {
            ModelKind::Deterministic { beta, y } => {
                if beta.is_empty() || beta.len() != y.len() {
                    return config("deterministic model needs equally many β and y values");
                }
                WeightEnvironment::with_delta(beta.clone(), y.clone(), self.delta).map_err(|e| Error::Config(e.to_string()))?;
                Ok(())
            }
            ModelKind::Iid { law } => law.validate(self.delta),
            ModelKind::Markov { chain } => {
                chain.validate(self.delta)?;
                chain.stationary().map(|_| ())
            }
            ModelKind::Gue => Ok(()),
            ModelKind::GueFull { gamma } if !(*gamma > 0.0 && *gamma < 1.0) => config(format!("gue-full needs γ in (0,1), got {gamma}")),
            ModelKind::GueFull { .. } => Ok(()),
        }
    }

    pub fn is_random(&self) -> bool {
        !matches!(self.kind, ModelKind::Deterministic { .. })
    }

    /// One environment of size `m` drawn from `rng`.
    pub fn generate_with<R: Rng>(&self, m: usize, rng: &mut R) -> Result<WeightEnvironment> {
        if m == 0 {
            return config("environment size M must be positive");
        }
        match &self.kind {
            ModelKind::Deterministic { beta, y } => {
                let b = (0..m).map(|i| beta[i % beta.len()]).collect();
                let v = (0..m).map(|i| y[i % y.len()]).collect();
                WeightEnvironment::with_delta(b, v, self.delta)
            }
            ModelKind::Iid { law } => iid_with(law, m, self.delta, rng),
            ModelKind::Markov { chain } => markov_with(chain, m, self.delta, rng),
            ModelKind::Gue => gue_with(m, self.delta, rng),
            ModelKind::GueFull { gamma } => {
                let n = (gamma * m as f64).floor() as usize;
                if n == 0 || n >= m {
                    return config(format!("level ⌊γM⌋ = {n} outside [1, M) for M = {m}"));
                }
                gue_full_with(m, n, self.delta, rng)
            }
        }
    }

    pub fn generate(&self, m: usize, seed: u64) -> Result<WeightEnvironment> {
        self.validate()?;
        self.generate_with(m, &mut ChaCha8Rng::seed_from_u64(seed))
    }

    /// Applies `f` to `count` environments (environment `e` uses stream `e` of
    /// `seed`), in parallel, returning results in index order.
    pub fn map_batch<T, F>(&self, m: usize, count: usize, seed: u64, f: F) -> Result<Vec<T>>
    where
        T: Send,
        F: Fn(usize, &WeightEnvironment) -> Result<T> + Sync,
    {
        self.validate()?;
        (0..count)
            .into_par_iter()
            .map(|e| {
                let mut rng = env_rng(seed, e);
                let env = self.generate_with(m, &mut rng)?;
                f(e, &env)
            })
            .collect()
    }
}

/// RNG of environment `index` in a batch seeded by `seed`.
pub fn env_rng(seed: u64, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64);
    rng
}

fn iid_with<R: Rng>(law: &PairLaw, m: usize, delta: f64, rng: &mut R) -> Result<WeightEnvironment> {
    let (y, beta): (Vec<f64>, Vec<f64>) = (0..m).map(|_| law.sample(rng)).unzip();
    WeightEnvironment::with_delta(beta, y, delta)
}

fn markov_with<R: Rng>(chain: &MarkovChain, m: usize, delta: f64, rng: &mut R) -> Result<WeightEnvironment> {
    let path = chain.trajectory(m, rng)?;
    let (y, beta) = path.iter().map(|&s| chain.states[s]).unzip();
    WeightEnvironment::with_delta(beta, y, delta)
}

/// `(l² + 1)/(l² + 2)`.
pub fn gue_beta(l: f64) -> f64 {
    (l * l + 1.0) / (l * l + 2.0)
}

fn gue_with<R: Rng>(m: usize, delta: f64, rng: &mut R) -> Result<WeightEnvironment> {
    let l = gue_spectrum(m, rng)?;
    let mut beta = vec![0.0; m];
    for (i, li) in l.iter().enumerate() {
        beta[m - 1 - i] = gue_beta(*li);
    }
    WeightEnvironment::with_delta(beta, vec![0.0; m], delta)
}

fn gue_full_with<R: Rng>(m: usize, n: usize, delta: f64, rng: &mut R) -> Result<WeightEnvironment> {
    let l = gue_spectrum(m - n, rng)?;
    let mut beta = vec![0.5; m];
    for (i, li) in l.iter().enumerate() {
        beta[m - 1 - i] = gue_beta(*li);
    }
    WeightEnvironment::with_delta(beta, vec![0.0; m], delta)
}

pub fn gen_iid(law: &PairLaw, m: usize, seed: u64) -> Result<WeightEnvironment> {
    EnvironmentModel::new(ModelKind::Iid { law: law.clone() }).generate(m, seed)
}

pub fn gen_markov(chain: &MarkovChain, m: usize, seed: u64) -> Result<WeightEnvironment> {
    EnvironmentModel::new(ModelKind::Markov { chain: chain.clone() }).generate(m, seed)
}

pub fn gen_gue(m: usize, seed: u64) -> Result<WeightEnvironment> {
    gue_with(m, DEFAULT_DELTA, &mut ChaCha8Rng::seed_from_u64(seed))
}

pub fn gen_gue_full(m: usize, n: usize, seed: u64) -> Result<WeightEnvironment> {
    if n == 0 || n >= m {
        return config(format!("need 1 ≤ N < M, got N = {n}, M = {m}"));
    }
    gue_full_with(m, n, DEFAULT_DELTA, &mut ChaCha8Rng::seed_from_u64(seed))
}

/// Ordered eigenvalues of an `n × n` GUE matrix scaled to the semicircle on
/// `[−2, 2]`, from the β = 2 tridiagonal model (diagonal `N(0,1)`,
/// off-diagonal `χ_{2(n−k)}/√2`), divided by `√n`.
pub fn gue_spectrum<R: Rng>(n: usize, rng: &mut R) -> Result<Vec<f64>> {
    let mut d: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
    let mut e = vec![0.0; n];
    for (k, ek) in e.iter_mut().enumerate().take(n.saturating_sub(1)) {
        let dof = 2.0 * (n - 1 - k) as f64;
        let chi2: f64 = ChiSquared::new(dof).map_err(|e| Error::Numerical(e.to_string()))?.sample(rng);
        *ek = (chi2 / 2.0).sqrt();
    }
    tridiagonal_eigenvalues(&mut d, &mut e)?;
    let s = (n as f64).sqrt();
    let mut l: Vec<f64> = d.into_iter().map(|v| v / s).collect();
    l.sort_by(|a, b| a.total_cmp(b));
    Ok(l)
}

/// Eigenvalues of the symmetric tridiagonal matrix with diagonal `d` and
/// off-diagonal `e[i]` (coupling `i`, `i+1`; `e[n−1]` ignored), by implicit QL
/// with Wilkinson shifts. Overwrites `d` with the (unsorted) eigenvalues.
pub fn tridiagonal_eigenvalues(d: &mut [f64], e: &mut [f64]) -> Result<()> {
    let n = d.len();
    if n == 0 {
        return Ok(());
    }
    e[n - 1] = 0.0;
    for l in 0..n {
        let mut iter = 0;
        loop {
            let mut m = l;
            while m + 1 < n {
                let dd = d[m].abs() + d[m + 1].abs();
                if e[m].abs() <= f64::EPSILON * dd {
                    break;
                }
                m += 1;
            }
            if m == l {
                break;
            }
            iter += 1;
            if iter > 60 {
                return Err(Error::Numerical("tridiagonal QL did not converge".into()));
            }
            let mut g = (d[l + 1] - d[l]) / (2.0 * e[l]);
            let mut r = g.hypot(1.0);
            g = d[m] - d[l] + e[l] / (g + r.copysign(g));
            let (mut s, mut c, mut p) = (1.0, 1.0, 0.0);
            let mut deflated = false;
            let mut i = m;
            while i > l {
                i -= 1;
                let f = s * e[i];
                let b = c * e[i];
                r = f.hypot(g);
                e[i + 1] = r;
                if r == 0.0 {
                    d[i + 1] -= p;
                    e[m] = 0.0;
                    deflated = true;
                    break;
                }
                s = f / r;
                c = g / r;
                g = d[i + 1] - p;
                r = (d[i] - g) * s + 2.0 * c * b;
                p = s * r;
                d[i + 1] = g + p;
                g = c * r - b;
            }
            if deflated {
                continue;
            }
            d[l] -= p;
            e[l] = g;
            e[m] = 0.0;
        }
    }
    Ok(())
}

/// Kolmogorov–Smirnov distance between the empirical law of `xs` and the semicircle.
pub fn semicircle_ks_distance(xs: &[f64]) -> f64 {
    let mut v = xs.to_vec();
    v.sort_by(|a, b| a.total_cmp(b));
    let n = v.len() as f64;
    v.iter()
        .enumerate()
        .map(|(i, &x)| {
            let f = gue::semicircle_cdf(x);
            (f - i as f64 / n).abs().max(((i + 1) as f64 / n - f).abs())
        })
        .fold(0.0, f64::max)
}

/// Which coefficient family a [`SeriesData`] holds.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum SeriesRole {
    /// `𝔠_i = lim E Y_{i,N}` (prefix averages of `y^i`).
    F1,
    /// `𝔤_i = lim E X_{i,N,M}` (suffix averages of `β^i`).
    F2,
    /// `M · Cov(X_{i,N_a,M}, X_{j,N_b,M})`.
    G1,
    /// `M · Cov(Y_{i,N_a}, Y_{j,N_b})`.
    G2,
    /// `M · Cov(X_{i,N_a,M}, Y_{j,N_b})`.
    G3,
    /// As `G1` with `M²`.
    G1hat,
    G2hat,
    G3hat,
}

/// Power-sum statistic kind of a coefficient index.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Stat {
    /// `X_{i,N,M} = (M−N)⁻¹ Σ_{j>N} β_j^i`, paired with a variable `z`.
    X,
    /// `Y_{i,N} = N⁻¹ Σ_{j≤N} y_j^i`, paired with `1/z`.
    Y,
}

impl SeriesRole {
    pub fn is_covariance(self) -> bool {
        !matches!(self, SeriesRole::F1 | SeriesRole::F2)
    }

    /// Statistic kinds of the two indices (first index at `γ_a`).
    pub fn stats(self) -> (Stat, Stat) {
        use SeriesRole::*;
        match self {
            F1 | G2 | G2hat => (Stat::Y, Stat::Y),
            F2 | G1 | G1hat => (Stat::X, Stat::X),
            G3 | G3hat => (Stat::X, Stat::Y),
        }
    }

    /// Power of `M` multiplying the covariance.
    pub fn m_power(self) -> i32 {
        use SeriesRole::*;
        match self {
            F1 | F2 => 0,
            G1 | G2 | G3 => 1,
            G1hat | G2hat | G3hat => 2,
        }
    }
}

/// Smallest allowed truncation order and the cap for adaptive raising.
pub const DEFAULT_ORDER: usize = 40;
pub const MAX_ORDER: usize = 1024;
/// Coefficient size at which truncation is accepted.
pub const TAIL_TOL: f64 = 1e-12;

/// A truncated coefficient family.
///
/// One-index roles (`F1`, `F2`) store `coefficients[0][i]`, `i ≥ 0`, with the
/// constant term `1`. Covariance roles store `coefficients[i−1][j−1]` for
/// `i, j ≥ 1`, the first index belonging to level `gammas.0`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeriesData {
    pub role: SeriesRole,
    pub gammas: (f64, f64),
    pub m: usize,
    pub num_envs: usize,
    pub coefficients: Vec<Vec<f64>>,
    pub std_errors: Vec<Vec<f64>>,
    pub provenance: Provenance,
    /// Reference coefficients from a closed form or quadrature, when available.
    pub reference: Option<Vec<Vec<f64>>>,
    /// Bound `ρ` on coefficient growth `|c_i| ≲ ρ^i` (largest `|β|` or `|y|` seen).
    pub growth: (f64, f64),
    /// Error bars widened (too few environments) or truncation not certified.
    pub flagged: bool,
    pub notes: Vec<String>,
}

impl SeriesData {
    pub fn order(&self) -> usize {
        if self.role.is_covariance() {
            self.coefficients.len()
        } else {
            self.coefficients[0].len() - 1
        }
    }

    /// Copy with the coefficients replaced by the attached reference values.
    pub fn with_reference(&self) -> Result<SeriesData> {
        let r = self.reference.clone().ok_or_else(|| Error::Config(format!("{:?} series has no reference", self.role)))?;
        Ok(SeriesData { coefficients: r, provenance: Provenance::ClosedForm, ..self.clone() })
    }

    /// `Σ_{i≥0} c_i u^i` for one-index roles.
    pub fn eval1(&self, u: num_complex::Complex64) -> num_complex::Complex64 {
        self.coefficients[0].iter().rev().fold(num_complex::Complex64::new(0.0, 0.0), |acc, c| acc * u + c)
    }

    /// `Σ_{i,j≥1} c_ij u^i v^j` for covariance roles.
    pub fn eval2(&self, u: num_complex::Complex64, v: num_complex::Complex64) -> num_complex::Complex64 {
        self.eval2_grid(&[u], &[v])[0]
    }

    /// `Σ c_ij u^i v^j` on the product grid `us × vs`, row-major in `us`.
    pub fn eval2_grid(&self, us: &[num_complex::Complex64], vs: &[num_complex::Complex64]) -> Vec<num_complex::Complex64> {
        use num_complex::Complex64 as C;
        let t = self.coefficients.len();
        let powers = |x: C| -> Vec<C> {
            let mut p = Vec::with_capacity(t);
            let mut cur = x;
            for _ in 0..t {
                p.push(cur);
                cur *= x;
            }
            p
        };
        // cu[a][j] = Σ_i c_ij u_a^i
        let cu: Vec<Vec<C>> = us
            .iter()
            .map(|&u| {
                let pu = powers(u);
                let mut row = vec![C::new(0.0, 0.0); t];
                for (i, pi) in pu.iter().enumerate() {
                    for (j, r) in row.iter_mut().enumerate() {
                        *r += self.coefficients[i][j] * pi;
                    }
                }
                row
            })
            .collect();
        let pv: Vec<Vec<C>> = vs.iter().map(|&v| powers(v)).collect();
        let mut out = Vec::with_capacity(us.len() * vs.len());
        for row in &cu {
            for p in &pv {
                out.push(row.iter().zip(p).map(|(a, b)| a * b).sum());
            }
        }
        out
    }

    /// Radii window where the truncated tails are below [`TAIL_TOL`]:
    /// `X`-indexed variables need `|z| < hi`, `Y`-indexed ones `|z| > lo`.
    pub fn certified_band(&self) -> (f64, f64) {
        let (sa, sb) = self.role.stats();
        let t = self.order().max(1) as f64;
        // Size of the last coefficient along each index.
        let lasts = if self.role.is_covariance() {
            let c = &self.coefficients;
            let n = c.len();
            let row = (0..n).map(|k| c[n - 1][k].abs()).fold(0.0, f64::max);
            let col = (0..n).map(|k| c[k][n - 1].abs()).fold(0.0, f64::max);
            [row, col]
        } else {
            let v = self.coefficients[0].last().map_or(0.0, |c| c.abs());
            [v, v]
        };
        let (mut lo, mut hi) = (0.0f64, f64::INFINITY);
        let (gx, gy) = self.growth;
        for (s, last) in [(sa, lasts[0]), (sb, lasts[1])] {
            match s {
                Stat::X => {
                    let r = if last > 0.0 { (TAIL_TOL / last).powf(1.0 / t) } else { f64::INFINITY };
                    hi = hi.min(r.min(if gx > 0.0 { 1.0 / gx } else { f64::INFINITY }));
                }
                Stat::Y => {
                    let r = if last > 0.0 { (last / TAIL_TOL).powf(1.0 / t) } else { 0.0 };
                    lo = lo.max(r.max(gy));
                }
            }
        }
        (lo, hi)
    }
}

/// Per-environment power-sum averages at the requested levels.
struct LevelStats {
    /// `x[level][i−1] = X_{i,N,M}`.
    x: Vec<Vec<f64>>,
    /// `y[level][i−1] = Y_{i,N}`.
    y: Vec<Vec<f64>>,
}

fn level_stats(env: &WeightEnvironment, levels: &[usize], t: usize) -> LevelStats {
    let m = env.m();
    let mut x = Vec::with_capacity(levels.len());
    let mut y = Vec::with_capacity(levels.len());
    for &n in levels {
        let mut sx = vec![0.0; t];
        for &b in &env.beta()[n..] {
            let mut p = b;
            for s in sx.iter_mut() {
                *s += p;
                p *= b;
            }
        }
        let cx = (m - n) as f64;
        x.push(sx.into_iter().map(|v| v / cx).collect());
        let mut sy = vec![0.0; t];
        for &v in &env.y()[..n] {
            let mut p = v;
            for s in sy.iter_mut() {
                *s += p;
                p *= v;
            }
        }
        let cy = n.max(1) as f64;
        y.push(sy.into_iter().map(|v| v / cy).collect());
    }
    LevelStats { x, y }
}

/// Level `⌊γM⌋`; `γ = 0` (all `β`) and `γ = 1` (all `y`) are allowed as endpoints.
pub fn level(gamma: f64, m: usize) -> Result<usize> {
    if !(0.0..=1.0).contains(&gamma) {
        return config(format!("γ = {gamma} outside [0, 1]"));
    }
    Ok((gamma * m as f64 + 1e-9).floor() as usize)
}

/// A requested coefficient family.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeriesRequest {
    pub role: SeriesRole,
    /// `(γ_a, γ_b)`; one-index roles use `γ_a`.
    pub gammas: (f64, f64),
}

/// Monte Carlo estimates of the coefficient families over `num_envs`
/// environments for each `M` in `m_list`.
///
/// Truncation starts at [`DEFAULT_ORDER`] and is raised until the a-priori
/// bound `ρ^T` (largest `|β|`, `|y|` observed) falls below [`TAIL_TOL`]. With
/// fewer than 1000 environments, covariance error bars are widened by the
/// Student-t/normal quantile ratio and the series is flagged.
pub fn estimate_series(
    model: &EnvironmentModel,
    requests: &[SeriesRequest],
    m_list: &[usize],
    num_envs: usize,
    seed: u64,
) -> Result<Vec<SeriesData>> {
    if num_envs < 2 {
        return config("need at least two environments");
    }
    let mut out = Vec::new();
    for &m in m_list {
        let mut levels: Vec<usize> = Vec::new();
        for r in requests {
            for g in [r.gammas.0, r.gammas.1] {
                let n = level(g, m)?;
                if n > m {
                    return config(format!("level {n} above M = {m}"));
                }
                if !levels.contains(&n) {
                    levels.push(n);
                }
            }
        }
        // Growth bounds from the generated environments.
        let bounds = model.map_batch(m, num_envs, seed, |_, env| {
            let b = env.beta().iter().fold(0.0f64, |a, v| a.max(v.abs()));
            let y = env.y().iter().fold(0.0f64, |a, v| a.max(v.abs()));
            Ok((b, y))
        })?;
        let gx = bounds.iter().fold(0.0f64, |a, b| a.max(b.0));
        let gy = bounds.iter().fold(0.0f64, |a, b| a.max(b.1));
        let rho = gx.max(gy);
        let mut t = DEFAULT_ORDER;
        while t < MAX_ORDER && rho > 0.0 && rho.powi(t as i32) * (m as f64).powi(2) > TAIL_TOL {
            t *= 2;
        }
        let t = t.min(MAX_ORDER);
        let stats = model.map_batch(m, num_envs, seed, |_, env| Ok(level_stats(env, &levels, t)))?;
        for r in requests {
            let mut s = assemble(r, m, &levels, &stats, t)?;
            s.growth = (gx, gy);
            s.reference = reference_coefficients(model, r, m, t).ok().flatten();
            widen_and_flag(&mut s, num_envs, t);
            out.push(s);
        }
    }
    Ok(out)
}

fn assemble(r: &SeriesRequest, m: usize, levels: &[usize], stats: &[LevelStats], t: usize) -> Result<SeriesData> {
    let la = levels.iter().position(|&n| n == level(r.gammas.0, m).unwrap()).unwrap();
    let lb = levels.iter().position(|&n| n == level(r.gammas.1, m).unwrap()).unwrap();
    let n_env = stats.len() as f64;
    let pick = |s: &LevelStats, stat: Stat, l: usize| -> Vec<f64> {
        match stat {
            Stat::X => s.x[l].clone(),
            Stat::Y => s.y[l].clone(),
        }
    };
    let (sa, sb) = r.role.stats();
    let (coefficients, std_errors) = if !r.role.is_covariance() {
        let mut mean = vec![0.0; t];
        let mut sq = vec![0.0; t];
        for s in stats {
            for (i, v) in pick(s, sa, la).iter().enumerate() {
                mean[i] += v;
                sq[i] += v * v;
            }
        }
        let mut c = vec![1.0];
        let mut e = vec![0.0];
        for i in 0..t {
            let mu = mean[i] / n_env;
            c.push(mu);
            e.push(((sq[i] / n_env - mu * mu).max(0.0) / (n_env - 1.0)).sqrt());
        }
        (vec![c], vec![e])
    } else {
        let a: Vec<Vec<f64>> = stats.iter().map(|s| pick(s, sa, la)).collect();
        let b: Vec<Vec<f64>> = stats.iter().map(|s| pick(s, sb, lb)).collect();
        let mean = |v: &[Vec<f64>]| -> Vec<f64> {
            let mut mu = vec![0.0; t];
            for row in v {
                for (i, x) in row.iter().enumerate() {
                    mu[i] += x;
                }
            }
            mu.into_iter().map(|x| x / n_env).collect()
        };
        let (ma, mb) = (mean(&a), mean(&b));
        let scale = (m as f64).powi(r.role.m_power());
        let mut c = vec![vec![0.0; t]; t];
        let mut c2 = vec![vec![0.0; t]; t];
        for (ra, rb) in a.iter().zip(&b) {
            for i in 0..t {
                let da = ra[i] - ma[i];
                for j in 0..t {
                    let p = da * (rb[j] - mb[j]);
                    c[i][j] += p;
                    c2[i][j] += p * p;
                }
            }
        }
        let mut e = vec![vec![0.0; t]; t];
        for i in 0..t {
            for j in 0..t {
                let mu = c[i][j] / n_env;
                let var = (c2[i][j] / n_env - mu * mu).max(0.0);
                e[i][j] = scale * (var / n_env).sqrt();
                c[i][j] = scale * c[i][j] / (n_env - 1.0);
            }
        }
        (c, e)
    };
    Ok(SeriesData {
        role: r.role,
        gammas: r.gammas,
        m,
        num_envs: stats.len(),
        coefficients,
        std_errors,
        provenance: Provenance::MonteCarlo,
        reference: None,
        growth: (0.0, 0.0),
        flagged: false,
        notes: Vec::new(),
    })
}

fn widen_and_flag(s: &mut SeriesData, num_envs: usize, t: usize) {
    if s.role.is_covariance() && num_envs < 1000 {
        let tq = StudentsT::new(0.0, 1.0, (num_envs - 1) as f64).map(|d| d.inverse_cdf(0.975)).unwrap_or(f64::INFINITY);
        let factor = tq / 1.959963984540054;
        s.std_errors.iter_mut().flatten().for_each(|e| *e *= factor);
        s.flagged = true;
        s.notes.push(format!("only {num_envs} environments: error bars widened by {factor:.4}"));
    }
    let last = if s.role.is_covariance() {
        (0..t).map(|k| s.coefficients[t - 1][k].abs().max(s.coefficients[k][t - 1].abs())).fold(0.0, f64::max)
    } else {
        s.coefficients[0][t].abs()
    };
    if last > TAIL_TOL {
        s.flagged = true;
        s.notes.push(format!("truncation at order {t} leaves coefficients of size {last:e}"));
    }
}

/// Limit coefficients from the model's closed form, where one exists.
pub fn reference_coefficients(model: &EnvironmentModel, r: &SeriesRequest, m: usize, t: usize) -> Result<Option<Vec<Vec<f64>>>> {
    let (ga, gb) = r.gammas;
    // M²-scaled covariances of i.i.d. or mixing environments diverge.
    if r.role.m_power() == 2 && matches!(model.kind, ModelKind::Iid { .. } | ModelKind::Markov { .. }) {
        return Ok(None);
    }
    match &model.kind {
        ModelKind::Deterministic { beta, y } => {
            let env = model.generate(m, 0)?;
            let _ = (beta, y);
            if r.role.is_covariance() {
                return Ok(Some(vec![vec![0.0; t]; t]));
            }
            let st = level_stats(&env, &[level(ga, m)?], t);
            let v = match r.role {
                SeriesRole::F1 => &st.y[0],
                _ => &st.x[0],
            };
            Ok(Some(vec![std::iter::once(1.0).chain(v.iter().copied()).collect()]))
        }
        ModelKind::Iid { law } => Ok(Some(iid_reference(law, r.role, ga, gb, t))),
        ModelKind::Markov { chain } => markov_reference(chain, r.role, ga, gb, t).map(Some),
        ModelKind::Gue | ModelKind::GueFull { .. } if r.role == SeriesRole::F2 => {
            let eps = match model.kind {
                ModelKind::Gue => gue::gue_epsilon(ga)?,
                _ => 2.0,
            };
            let mass = gue::semicircle_cdf(eps);
            let mut c = vec![1.0];
            for i in 1..=t {
                c.push(gue::semicircle_integral(|x| gue_beta(x).powi(i as i32), -2.0, eps)? / mass);
            }
            Ok(Some(vec![c]))
        }
        _ => Ok(None),
    }
}

/// Covariance-role scaling of i.i.d. pairs: `M Cov(A_{N_a}, B_{N_b})` equals
/// `overlap/(size_a size_b) · Cov(a, b)` per unit `M`.
fn overlap_factor(sa: Stat, ga: f64, sb: Stat, gb: f64) -> f64 {
    let range = |s: Stat, g: f64| match s {
        Stat::X => (g, 1.0),
        Stat::Y => (0.0, g),
    };
    let (a0, a1) = range(sa, ga);
    let (b0, b1) = range(sb, gb);
    let ov = (a1.min(b1) - a0.max(b0)).max(0.0);
    ov / ((a1 - a0) * (b1 - b0))
}

fn stat_value(s: Stat, y: f64, beta: f64) -> f64 {
    match s {
        Stat::X => beta,
        Stat::Y => y,
    }
}

fn iid_reference(law: &PairLaw, role: SeriesRole, ga: f64, gb: f64, t: usize) -> Vec<Vec<f64>> {
    let (sa, sb) = role.stats();
    if !role.is_covariance() {
        let mut c = vec![1.0];
        for i in 1..=t {
            c.push(law.expect(|y, b| stat_value(sa, y, b).powi(i as i32)));
        }
        return vec![c];
    }
    let f = overlap_factor(sa, ga, sb, gb);
    let atoms = law.atoms();
    let ma: Vec<f64> = (1..=t).map(|i| law.expect(|y, b| stat_value(sa, y, b).powi(i as i32))).collect();
    let mb: Vec<f64> = (1..=t).map(|j| law.expect(|y, b| stat_value(sb, y, b).powi(j as i32))).collect();
    let mut c = vec![vec![0.0; t]; t];
    for a in &atoms {
        let (va, vb) = (stat_value(sa, a.y, a.beta), stat_value(sb, a.y, a.beta));
        let mut pa = 1.0;
        for i in 0..t {
            pa *= va;
            let mut pb = 1.0;
            for j in 0..t {
                pb *= vb;
                c[i][j] += a.prob * (pa - ma[i]) * (pb - mb[j]);
            }
        }
    }
    c.iter_mut().flatten().for_each(|v| *v *= f);
    c
}

fn markov_reference(chain: &MarkovChain, role: SeriesRole, ga: f64, gb: f64, t: usize) -> Result<Vec<Vec<f64>>> {
    let pi = chain.stationary()?;
    let (sa, sb) = role.stats();
    let val = |s: Stat, k: usize, i: usize| stat_value(s, chain.states[k].0, chain.states[k].1).powi(i as i32);
    if !role.is_covariance() {
        let mut c = vec![1.0];
        for i in 1..=t {
            c.push((0..pi.len()).map(|k| pi[k] * val(sa, k, i)).sum());
        }
        return Ok(vec![c]);
    }
    let sum = crate::asymptotics::markov::lag_sum_matrix(chain, 1e-15)?;
    let f = overlap_factor(sa, ga, sb, gb);
    let s = pi.len();
    let mut c = vec![vec![0.0; t]; t];
    for i in 0..t {
        let fa: Vec<f64> = (0..s).map(|k| val(sa, k, i + 1)).collect();
        for j in 0..t {
            let fb: Vec<f64> = (0..s).map(|k| val(sb, k, j + 1)).collect();
            c[i][j] = f * crate::asymptotics::markov::long_run_cov(&pi, &sum, &fa, &fb);
        }
    }
    Ok(c)
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::SymmetricEigen;

    fn two_point() -> EnvironmentModel {
        EnvironmentModel::new(ModelKind::Iid { law: PairLaw::two_point_beta(0.3, 0.7) })
    }

    #[test]
    fn iid_support_and_reproducibility() {
        let env = gen_iid(&PairLaw::two_point_beta(0.3, 0.7), 4, 1).unwrap();
        assert!(env.beta().iter().all(|b| *b == 0.3 || *b == 0.7));
        assert_eq!(env, gen_iid(&PairLaw::two_point_beta(0.3, 0.7), 4, 1).unwrap());
        let point = gen_iid(&PairLaw::point(0.1, 0.4), 6, 9).unwrap();
        assert!(point.beta().iter().all(|b| *b == 0.4) && point.y().iter().all(|y| *y == 0.1));
    }

    #[test]
    fn iid_law_of_large_numbers() {
        let law = PairLaw::Independent { y: Marginal::Uniform { lo: -0.2, hi: 0.3 }, beta: Marginal::Uniform { lo: 0.2, hi: 0.6 } };
        let env = gen_iid(&law, 1_000_000, 4).unwrap();
        let mean = env.beta().iter().sum::<f64>() / 1e6;
        let sd = (0.4f64.powi(2) / 12.0 / 1e6).sqrt();
        assert!((mean - 0.4).abs() < 3.0 * sd);
        assert!(env.y().iter().all(|y| (-0.2..0.3).contains(y)));
    }

    #[test]
    fn support_violations_are_config_errors() {
        let bad = PairLaw::two_point_beta(0.3, 1.0);
        assert!(matches!(gen_iid(&bad, 4, 1), Err(Error::Config(_))));
        let bad_y = PairLaw::point(0.95, 0.5);
        assert!(matches!(gen_iid(&bad_y, 4, 1), Err(Error::Config(_))));
        let chain = MarkovChain { states: vec![(0.0, 0.3), (0.0, 0.7)], transition: vec![vec![0.5, 0.6], vec![0.5, 0.5]] };
        assert!(matches!(gen_markov(&chain, 4, 1), Err(Error::Config(_))));
    }

    #[test]
    fn markov_reductions_and_lag_one() {
        let iid_like = MarkovChain { states: vec![(0.0, 0.3), (0.0, 0.7)], transition: vec![vec![0.5, 0.5], vec![0.5, 0.5]] };
        assert_eq!(iid_like.stationary().unwrap(), vec![0.5, 0.5]);
        let frozen = MarkovChain {
            states: vec![(0.0, 0.3), (0.0, 0.7)],
            transition: vec![vec![1.0 - 1e-9, 1e-9], vec![1e-9, 1.0 - 1e-9]],
        };
        let env = gen_markov(&frozen, 1000, 3).unwrap();
        assert!(env.beta().windows(2).all(|w| w[0] == w[1]));

        // Lag-1 autocovariance of β: π-weighted (P − 1π)f against the empirical one.
        let chain = MarkovChain { states: vec![(0.0, 0.3), (0.0, 0.7)], transition: vec![vec![0.8, 0.2], vec![0.4, 0.6]] };
        let pi = chain.stationary().unwrap();
        assert!((pi[0] - 2.0 / 3.0).abs() < 1e-14);
        let f = [0.3, 0.7];
        let mean: f64 = pi[0] * f[0] + pi[1] * f[1];
        let lag1: f64 = (0..2).map(|a| (0..2).map(|b| pi[a] * chain.transition[a][b] * (f[a] - mean) * (f[b] - mean)).sum::<f64>()).sum();
        let m = 1_000_000;
        let env = gen_markov(&chain, m, 8).unwrap();
        let b = env.beta();
        let mu = b.iter().sum::<f64>() / m as f64;
        let emp = b.windows(2).map(|w| (w[0] - mu) * (w[1] - mu)).sum::<f64>() / (m - 1) as f64;
        // Batch-means error bar.
        let batches: Vec<f64> = b
            .chunks(10_000)
            .map(|c| c.windows(2).map(|w| (w[0] - mu) * (w[1] - mu)).sum::<f64>() / (c.len() - 1) as f64)
            .collect();
        let bm = batches.iter().sum::<f64>() / batches.len() as f64;
        let se = (batches.iter().map(|v| (v - bm).powi(2)).sum::<f64>() / (batches.len() - 1) as f64 / batches.len() as f64).sqrt();
        assert!((emp - lag1).abs() < 3.0 * se, "{emp} vs {lag1} (se {se})");
    }

    #[test]
    fn tridiagonal_solver_matches_dense() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for n in [1usize, 2, 3, 7, 30] {
            let d: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
            let e: Vec<f64> = (0..n).map(|_| rng.random::<f64>()).collect();
            let dense = DMatrix::from_fn(n, n, |i, j| {
                if i == j {
                    d[i]
                } else if i + 1 == j {
                    e[i]
                } else if j + 1 == i {
                    e[j]
                } else {
                    0.0
                }
            });
            let mut want: Vec<f64> = SymmetricEigen::new(dense).eigenvalues.iter().copied().collect();
            want.sort_by(|a, b| a.total_cmp(b));
            let (mut dd, mut ee) = (d.clone(), e.clone());
            tridiagonal_eigenvalues(&mut dd, &mut ee).unwrap();
            dd.sort_by(|a, b| a.total_cmp(b));
            for (a, b) in dd.iter().zip(&want) {
                assert!((a - b).abs() < 1e-12, "n = {n}: {a} vs {b}");
            }
        }
    }

    #[test]
    fn gue_environments() {
        let env = gen_gue(300, 2).unwrap();
        assert!(env.beta().iter().all(|b| *b > 0.5 && *b < 1.0));
        assert!(env.y().iter().all(|y| *y == 0.0));
        let full = gen_gue_full(300, 120, 2).unwrap();
        assert!(full.beta()[..120].iter().all(|b| *b == 0.5));
        assert!(full.beta()[120..].iter().all(|b| *b > 0.5 && *b < 1.0));
        let l = gue_spectrum(2000, &mut ChaCha8Rng::seed_from_u64(11)).unwrap();
        assert!(semicircle_ks_distance(&l) < 0.02);
    }

    #[test]
    fn deterministic_series_vanish() {
        let model = EnvironmentModel::new(ModelKind::Deterministic { beta: vec![0.3, 0.6], y: vec![0.1, -0.2] });
        let req = [
            SeriesRequest { role: SeriesRole::G1, gammas: (0.5, 0.5) },
            SeriesRequest { role: SeriesRole::G3, gammas: (0.25, 0.5) },
            SeriesRequest { role: SeriesRole::F2, gammas: (0.5, 0.5) },
        ];
        let s = estimate_series(&model, &req, &[40], 5, 1).unwrap();
        assert!(s[0].coefficients.iter().flatten().all(|c| *c == 0.0));
        assert!(s[1].coefficients.iter().flatten().all(|c| *c == 0.0));
        assert_eq!(s[2].coefficients[0][0], 1.0);
        assert!((s[2].coefficients[0][1] - 0.45).abs() < 1e-15);
        assert!(s[0].flagged, "five environments must widen and flag");
    }

    #[test]
    fn iid_q11_matches_partial_sum_variance() {
        // M Cov(X_1, X_1) at level γ: M · Var β / (M − N) → Var β/(1 − γ).
        let s = estimate_series(&two_point(), &[SeriesRequest { role: SeriesRole::G1, gammas: (0.5, 0.5) }], &[200], 4000, 7).unwrap();
        let q11 = s[0].coefficients[0][0];
        let want = 0.04 / 0.5;
        assert!((q11 - want).abs() < 3.0 * s[0].std_errors[0][0], "{q11} vs {want}");
        let r = s[0].reference.as_ref().unwrap();
        assert!((r[0][0] - want).abs() < 1e-14);
        assert!(!s[0].flagged);
    }

    #[test]
    fn error_bars_shrink_with_more_environments() {
        let req = [SeriesRequest { role: SeriesRole::G1, gammas: (0.5, 0.5) }];
        let small = estimate_series(&two_point(), &req, &[100], 1000, 3).unwrap();
        let large = estimate_series(&two_point(), &req, &[100], 4000, 3).unwrap();
        let ratio = small[0].std_errors[0][0] / large[0].std_errors[0][0];
        assert!((ratio - 2.0).abs() < 0.3, "ratio {ratio}");
    }

    #[test]
    fn gue_g1_matches_semicircle_integral() {
        let model = EnvironmentModel::new(ModelKind::Gue);
        let s = estimate_series(&model, &[SeriesRequest { role: SeriesRole::F2, gammas: (0.0, 0.0) }], &[400], 200, 5).unwrap();
        let want = gue::semicircle_integral(gue_beta, -2.0, 2.0).unwrap();
        let g1 = s[0].coefficients[0][1];
        assert!((g1 - want).abs() < 3.0 * s[0].std_errors[0][1] + 1e-3, "{g1} vs {want}");
        assert!((s[0].reference.as_ref().unwrap()[0][1] - want).abs() < 1e-12);
    }

    #[test]
    fn batches_are_thread_count_independent() {
        let model = two_point();
        let a = model.map_batch(50, 20, 9, |_, e| Ok(e.clone())).unwrap();
        let pool = rayon::ThreadPoolBuilder::new().num_threads(3).build().unwrap();
        let b = pool.install(|| model.map_batch(50, 20, 9, |_, e| Ok(e.clone()))).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn config_round_trip() {
        let model = EnvironmentModel::new(ModelKind::Markov {
            chain: MarkovChain { states: vec![(0.1, 0.3), (-0.1, 0.7)], transition: vec![vec![0.9, 0.1], vec![0.2, 0.8]] },
        });
        let json = serde_json::to_string(&model).unwrap();
        assert_eq!(serde_json::from_str::<EnvironmentModel>(&json).unwrap(), model);
        let t = toml::to_string(&two_point()).unwrap();
        assert_eq!(toml::from_str::<EnvironmentModel>(&t).unwrap(), two_point());
    }
}
