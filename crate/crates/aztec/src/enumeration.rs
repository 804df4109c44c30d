//! Brute-force ground truth at small size.
//!
//! Chains are generated level by level, `λ⁽ⁱ⁻¹⁾ → θ⁽ⁱ⁾ → λ⁽ⁱ⁾`, using the part
//! bounds `θ⁽ⁱ⁾_1 ≤ M − i + 1` and `λ⁽ⁱ⁾_1 ≤ M − i`. The second bound is also
//! sufficient for a partial chain to be completable (append a zero, then
//! strip one from every positive part), so nothing is generated in vain.

use std::collections::HashMap;
use std::path::Path;

use crate::error::{usage, Error, Result};
use crate::model::{covering_weight, power_sum_f64, InterlacingChain, Signature, WeightEnvironment};
use crate::numeric::KahanSum;

/// Largest size accepted by the streaming enumerator.
pub const MAX_ENUMERATION_M: usize = 6;
/// Largest size for which a full [`ExactDistribution`] is materialised.
pub const MAX_MATERIALISED_M: usize = 5;

/// All `θ` of length `prev.len() + 1` with `prev ≺ θ`, `θ ≥ 0`, `θ_1 ≤ bound`.
fn horizontal_extensions(prev: &[i64], bound: i64) -> Vec<Vec<i64>> {
    let n = prev.len() + 1;
    let range = |j: usize| -> (i64, i64) {
        let lo = if j < prev.len() { prev[j] } else { 0 };
        let hi = if j == 0 { bound } else { prev[j - 1] };
        (lo, hi)
    };
    let mut out = vec![Vec::with_capacity(n)];
    for j in 0..n {
        let (lo, hi) = range(j);
        let mut next = Vec::new();
        for partial in &out {
            for v in lo..=hi {
                let mut p = partial.clone();
                p.push(v);
                next.push(p);
            }
        }
        out = next;
    }
    out
}

/// All `λ = θ − ε`, `ε ∈ {0,1}ⁿ`, non-increasing, non-negative, `λ_1 ≤ bound`.
fn vertical_removals(theta: &[i64], bound: i64) -> Vec<Vec<i64>> {
    let n = theta.len();
    let mut out = Vec::new();
    for mask in 0u32..(1 << n) {
        let lam: Vec<i64> = (0..n).map(|j| theta[j] - ((mask >> j) & 1) as i64).collect();
        let ok = lam.iter().all(|&p| p >= 0)
            && lam.windows(2).all(|w| w[0] >= w[1])
            && lam.first().is_none_or(|&p| p <= bound);
        if ok {
            out.push(lam);
        }
    }
    out
}

type Step = (Signature, Signature);

fn level_steps(prev: &Signature, level: usize, m: usize) -> Vec<Step> {
    let theta_bound = (m - level + 1) as i64;
    let lambda_bound = (m - level) as i64;
    let mut steps = Vec::new();
    for t in horizontal_extensions(prev.parts(), theta_bound) {
        for l in vertical_removals(&t, lambda_bound) {
            steps.push((Signature::new(t.clone()).unwrap(), Signature::new(l).unwrap()));
        }
    }
    steps
}

/// Depth-first stream over every valid chain of size `M`.
pub struct ChainIter {
    m: usize,
    frames: Vec<(Vec<Step>, usize)>,
    done: bool,
}

impl ChainIter {
    fn current_lambda(&self) -> Signature {
        match self.frames.last() {
            Some((steps, idx)) => steps[*idx].1.clone(),
            None => Signature::empty(),
        }
    }

    /// Extend the stack down to level M from the current position.
    fn descend(&mut self) {
        while self.frames.len() < self.m {
            let level = self.frames.len() + 1;
            let steps = level_steps(&self.current_lambda(), level, self.m);
            debug_assert!(!steps.is_empty(), "bounds guarantee completability");
            self.frames.push((steps, 0));
        }
    }

    /// Move to the next leaf; false when exhausted.
    fn advance(&mut self) -> bool {
        while let Some((steps, idx)) = self.frames.last_mut() {
            if *idx + 1 < steps.len() {
                *idx += 1;
                self.descend();
                return true;
            }
            self.frames.pop();
        }
        false
    }
}

impl Iterator for ChainIter {
    type Item = InterlacingChain;

    fn next(&mut self) -> Option<InterlacingChain> {
        if self.done {
            return None;
        }
        let chain = InterlacingChain {
            theta: self.frames.iter().map(|(s, i)| s[*i].0.clone()).collect(),
            lambda: self.frames.iter().map(|(s, i)| s[*i].1.clone()).collect(),
        };
        if !self.advance() {
            self.done = true;
        }
        Some(chain)
    }
}

/// Every valid chain of size `M ≤ 6`, each exactly once.
pub fn enumerate_chains(m: usize) -> Result<ChainIter> {
    if m == 0 {
        return usage("enumeration needs M ≥ 1");
    }
    if m > MAX_ENUMERATION_M {
        return Err(Error::Refused(format!(
            "brute-force enumeration is limited to M ≤ {MAX_ENUMERATION_M} (M = {m} has 2^{} chains)",
            m * (m + 1) / 2
        )));
    }
    let mut it = ChainIter { m, frames: Vec::new(), done: false };
    it.descend();
    Ok(it)
}

/// `Π_{1≤i≤j≤M} (1 + x_i w_j)`.
pub fn partition_function_product(env: &WeightEnvironment) -> f64 {
    let m = env.m();
    let mut z = 1.0;
    for i in 1..=m {
        for j in i..=m {
            z *= 1.0 + env.x(i) * env.w(j);
        }
    }
    z
}

/// Sum of covering weights over all chains (`M ≤ 6`).
pub fn partition_function_sum(env: &WeightEnvironment) -> Result<f64> {
    let mut acc = KahanSum::new();
    for chain in enumerate_chains(env.m())? {
        acc.add(covering_weight(&chain, env)?);
    }
    Ok(acc.value())
}

/// Partition function, by summation when `M ≤ 6` and by the product otherwise.
pub fn partition_function(env: &WeightEnvironment) -> Result<f64> {
    if env.m() <= MAX_ENUMERATION_M {
        partition_function_sum(env)
    } else {
        Ok(partition_function_product(env))
    }
}

/// The full law on chains for a fixed environment.
#[derive(Clone, Debug)]
pub struct ExactDistribution {
    pub entries: Vec<(InterlacingChain, f64)>,
    pub env: WeightEnvironment,
}

impl ExactDistribution {
    pub fn build(env: &WeightEnvironment) -> Result<Self> {
        if env.m() > MAX_MATERIALISED_M {
            return Err(Error::Refused(format!(
                "materialised distributions are limited to M ≤ {MAX_MATERIALISED_M}; use the streaming helpers"
            )));
        }
        let mut entries = Vec::new();
        let mut total = KahanSum::new();
        for chain in enumerate_chains(env.m())? {
            let w = covering_weight(&chain, env)?;
            total.add(w);
            entries.push((chain, w));
        }
        let z = total.value();
        for e in &mut entries {
            e.1 /= z;
        }
        Ok(Self { entries, env: env.clone() })
    }

    pub fn m(&self) -> usize {
        self.env.m()
    }

    /// Law of `λ⁽ᴺ⁾`.
    pub fn marginal(&self, n: usize) -> HashMap<Signature, f64> {
        let mut acc: HashMap<Signature, KahanSum> = HashMap::new();
        for (chain, p) in &self.entries {
            acc.entry(chain.lambda[n - 1].clone()).or_default().add(*p);
        }
        acc.into_iter().map(|(k, v)| (k, v.value())).collect()
    }

    /// One row per chain: flattened `θ⁽¹⁾, λ⁽¹⁾, θ⁽²⁾, …` parts, then the probability.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut wtr = csv::Writer::from_path(path)?;
        let m = self.m();
        let mut header = Vec::new();
        for i in 1..=m {
            for name in ["theta", "lambda"] {
                header.extend((1..=i).map(|j| format!("{name}{i}_{j}")));
            }
        }
        header.push("probability".into());
        wtr.write_record(&header)?;
        for (chain, p) in &self.entries {
            let mut row = Vec::with_capacity(header.len());
            for (t, l) in chain.theta.iter().zip(&chain.lambda) {
                row.extend(t.parts().iter().map(|v| v.to_string()));
                row.extend(l.parts().iter().map(|v| v.to_string()));
            }
            row.push(format!("{p:.17e}"));
            wtr.write_record(&row)?;
        }
        wtr.flush()?;
        Ok(())
    }
}

/// Schur polynomial `s_λ(values)` by the branching rule
/// `s_λ(x_1..x_n) = Σ_{μ ≺ λ} s_μ(x_1..x_{n−1}) x_n^{|λ|−|μ|}`.
pub fn schur_polynomial(lam: &Signature, values: &[f64]) -> Result<f64> {
    if lam.parts().last().is_some_and(|&p| p < 0) {
        return usage(format!("Schur polynomial of negative parts {:?}", lam.parts()));
    }
    if lam.nonzero_parts() > values.len() {
        return usage(format!(
            "{} nonzero parts but only {} variables",
            lam.nonzero_parts(),
            values.len()
        ));
    }
    let full = lam.padded(values.len())?;
    let mut memo = HashMap::new();
    Ok(schur_rec(full.parts(), values, &mut memo))
}

fn schur_rec(lam: &[i64], values: &[f64], memo: &mut HashMap<Vec<i64>, f64>) -> f64 {
    let n = lam.len();
    if n == 0 {
        return 1.0;
    }
    if lam.iter().all(|&p| p == 0) {
        return 1.0;
    }
    if n == 1 {
        return values[0].powi(lam[0] as i32);
    }
    if let Some(&v) = memo.get(lam) {
        return v;
    }
    let size: i64 = lam.iter().sum();
    let xn = values[n - 1];
    let mut acc = 0.0;
    // μ_j ∈ [λ_{j+1}, λ_j] for j = 0..n−2.
    let mut mu: Vec<i64> = lam[1..].to_vec();
    loop {
        let mu_size: i64 = mu.iter().sum();
        acc += schur_rec(&mu, &values[..n - 1], memo) * xn.powi((size - mu_size) as i32);
        // odometer increment
        let mut j = n - 1;
        loop {
            if j == 0 {
                memo.insert(lam.to_vec(), acc);
                return acc;
            }
            j -= 1;
            if mu[j] < lam[j] {
                mu[j] += 1;
                for (t, v) in mu.iter_mut().enumerate().skip(j + 1) {
                    *v = lam[t + 1];
                }
                break;
            }
        }
    }
}

/// `ρ_{β,y}[λ] = Π_{i≤N<j}(1 + w_j x_i)⁻¹ s_λ(x_1..x_N) s_{λ′}(w_{N+1..M})`.
pub fn schur_measure_probability(env: &WeightEnvironment, n: usize, lam: &Signature) -> Result<f64> {
    let m = env.m();
    let xs: Vec<f64> = (1..=n).map(|i| env.x(i)).collect();
    let ws: Vec<f64> = (n + 1..=m).map(|j| env.w(j)).collect();
    let conj = lam.conjugate()?;
    if conj.nonzero_parts() > ws.len() {
        return Ok(0.0);
    }
    let mut norm = 1.0;
    for x in &xs {
        for w in &ws {
            norm *= 1.0 + w * x;
        }
    }
    Ok(schur_polynomial(lam, &xs)? * schur_polynomial(&conj, &ws)? / norm)
}

/// Max discrepancy between the enumerated law of `λ⁽ᴺ⁾` and the Schur measure
/// (including the mass the Schur measure would put outside the enumerated support).
pub fn verify_marginal(env: &WeightEnvironment, n: usize) -> Result<f64> {
    let m = env.m();
    if n == 0 || n >= m {
        return usage(format!("verify_marginal needs 1 ≤ N < M, got N = {n}, M = {m}"));
    }
    if m > MAX_MATERIALISED_M {
        return Err(Error::Refused(format!("verify_marginal is limited to M ≤ {MAX_MATERIALISED_M}")));
    }
    let dist = ExactDistribution::build(env)?;
    let marg = dist.marginal(n);
    let mut worst: f64 = 0.0;
    let mut schur_total = KahanSum::new();
    for (lam, p) in &marg {
        let q = schur_measure_probability(env, n, lam)?;
        schur_total.add(q);
        worst = worst.max((p - q).abs());
    }
    Ok(worst.max((1.0 - schur_total.value()).abs()))
}

/// `E[Π_j (p_{k_j}^{(N_j)} − c_j)]` with `c_j = E p_{k_j}^{(N_j)}` when `centered`,
/// `c_j = 0` otherwise, by full summation (`M ≤ 6`). Levels run over `1..=M`.
pub fn exact_joint_moments(
    env: &WeightEnvironment,
    levels: &[usize],
    ks: &[u32],
    centered: bool,
) -> Result<f64> {
    let m = env.m();
    if levels.len() != ks.len() {
        return usage("levels and ks must have equal length");
    }
    if levels.windows(2).any(|w| w[0] > w[1]) || levels.iter().any(|&n| n == 0 || n > m) {
        return usage(format!("levels must be non-decreasing within 1..=M, got {levels:?}"));
    }
    let z = partition_function_sum(env)?;
    let stat = |chain: &InterlacingChain, j: usize| power_sum_f64(&chain.lambda[levels[j] - 1], ks[j]);
    let mut means = vec![0.0; ks.len()];
    if centered {
        let mut acc = vec![KahanSum::new(); ks.len()];
        for chain in enumerate_chains(m)? {
            let p = covering_weight(&chain, env)? / z;
            for (j, a) in acc.iter_mut().enumerate() {
                a.add(p * stat(&chain, j));
            }
        }
        means = acc.iter().map(KahanSum::value).collect();
    }
    let mut acc = KahanSum::new();
    for chain in enumerate_chains(m)? {
        let p = covering_weight(&chain, env)? / z;
        let prod: f64 = (0..ks.len()).map(|j| stat(&chain, j) - means[j]).product();
        acc.add(p * prod);
    }
    let v = acc.value();
    if centered && ks.len() == 1 {
        return Ok(0.0);
    }
    Ok(v)
}

/// Exact law of `|λ⁽ᴺ⁾|` as a probability vector indexed by size.
pub fn exact_size_law(env: &WeightEnvironment, n: usize) -> Result<Vec<f64>> {
    let dist = ExactDistribution::build(env)?;
    let mut law = vec![0.0; n * (env.m() - n) + 1];
    for (lam, p) in dist.marginal(n) {
        law[lam.size() as usize] += p;
    }
    Ok(law)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_env(m: usize, seed: u64) -> WeightEnvironment {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let beta = (0..m).map(|_| rng.random_range(0.05..0.95)).collect();
        let y = (0..m).map(|_| rng.random_range(-0.85..0.85)).collect();
        WeightEnvironment::new(beta, y).unwrap()
    }

    fn sig(p: &[i64]) -> Signature {
        Signature::new(p.to_vec()).unwrap()
    }

    #[test]
    fn chain_counts() {
        for m in 1..=5 {
            let mut seen = std::collections::HashSet::new();
            for c in enumerate_chains(m).unwrap() {
                c.validate(m).unwrap();
                assert!(seen.insert(c));
            }
            assert_eq!(seen.len(), 1usize << (m * (m + 1) / 2), "M = {m}");
        }
        assert!(matches!(enumerate_chains(7), Err(Error::Refused(_))));
    }

    #[test]
    fn partition_function_examples() {
        assert!((partition_function(&WeightEnvironment::uniform(3)).unwrap() - 64.0).abs() < 1e-12);
        let env = WeightEnvironment::from_wx(&[2.0], &[0.5]).unwrap();
        assert!((partition_function(&env).unwrap() - 2.0).abs() < 1e-12);
        let env = WeightEnvironment::new(vec![1e-12; 2], vec![0.0; 2]).unwrap();
        assert!((partition_function(&env).unwrap() - 1.0).abs() < 1e-10);
    }

    #[test]
    fn sum_matches_product() {
        for s in 0..50u64 {
            let env = random_env(1 + (s as usize % 4), s);
            let a = partition_function_sum(&env).unwrap();
            let b = partition_function_product(&env);
            assert!((a / b - 1.0).abs() < 1e-10);
        }
    }

    #[test]
    fn schur_examples() {
        let (a, b) = (0.3, 1.7);
        assert!((schur_polynomial(&sig(&[1]), &[a, b]).unwrap() - (a + b)).abs() < 1e-15);
        assert!((schur_polynomial(&sig(&[1, 1]), &[a, b]).unwrap() - a * b).abs() < 1e-15);
        assert_eq!(schur_polynomial(&sig(&[2, 1]), &[1.0, 1.0]).unwrap(), 2.0);
        assert!(schur_polynomial(&sig(&[1, -1]), &[1.0, 1.0]).is_err());
        // s_(2,1)(1,1,1) = 8 SSYT
        assert_eq!(schur_polynomial(&sig(&[2, 1]), &[1.0, 1.0, 1.0]).unwrap(), 8.0);
        // symmetry
        let v = [0.4, 1.3, 0.7];
        let p = [1.3, 0.7, 0.4];
        let l = sig(&[3, 1]);
        assert!((schur_polynomial(&l, &v).unwrap() - schur_polynomial(&l, &p).unwrap()).abs() < 1e-12);
    }

    #[test]
    fn marginal_examples() {
        assert!(verify_marginal(&WeightEnvironment::uniform(2), 1).unwrap() <= 1e-10);
        assert!(verify_marginal(&random_env(3, 42), 2).unwrap() <= 1e-10);
        assert!(verify_marginal(&WeightEnvironment::uniform(1), 1).is_err());
    }

    #[test]
    fn centered_first_moment_is_zero_and_p0_constant() {
        let env = random_env(3, 5);
        assert_eq!(exact_joint_moments(&env, &[2], &[1], true).unwrap(), 0.0);
        assert!(exact_joint_moments(&env, &[2, 2], &[0, 0], true).unwrap().abs() < 1e-14);
        let env1 = WeightEnvironment::from_wx(&[1.0], &[1.0]).unwrap();
        assert_eq!(exact_joint_moments(&env1, &[1], &[1], false).unwrap(), 0.0);
    }

    /// Var(p_1) at level N equals Σ a_ij(1 − a_ij) over i ≤ N < j.
    #[test]
    fn bernoulli_variance_identity() {
        let env = random_env(4, 9);
        let var = exact_joint_moments(&env, &[2, 2], &[1, 1], true).unwrap();
        let mut expect = 0.0;
        for i in 1..=2 {
            for j in 3..=4 {
                let a = env.bernoulli_param(i, j);
                expect += a * (1.0 - a);
            }
        }
        assert!((var - expect).abs() < 1e-12);
    }

    /// The law of |λ^(N)| is the convolution of independent Bernoulli(a_ij).
    #[test]
    fn size_law_is_bernoulli_convolution() {
        for seed in 0..4 {
            for m in 2..=4 {
                let env = random_env(m, 100 + seed);
                for n in 1..m {
                    let mut law = vec![1.0];
                    for i in 1..=n {
                        for j in n + 1..=m {
                            let a = env.bernoulli_param(i, j);
                            let mut next = vec![0.0; law.len() + 1];
                            for (s, p) in law.iter().enumerate() {
                                next[s] += p * (1.0 - a);
                                next[s + 1] += p * a;
                            }
                            law = next;
                        }
                    }
                    let exact = exact_size_law(&env, n).unwrap();
                    for (p, q) in law.iter().zip(&exact) {
                        assert!((p - q).abs() < 1e-12);
                    }
                }
            }
        }
    }

    #[test]
    fn csv_export_has_one_row_per_chain() {
        let dist = ExactDistribution::build(&WeightEnvironment::uniform(2)).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.csv");
        dist.write_csv(&path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert_eq!(text.lines().count(), 9);
        assert!(text.starts_with("theta1_1,lambda1_1,theta2_1,theta2_2,lambda2_1,lambda2_2,probability"));
    }
}
