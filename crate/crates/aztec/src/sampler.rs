//! Exact sampling of the single-level marginal `λ⁽ᴺ⁾` through dual RSK.
//!
//! A 0/1 matrix with independent entries `P(A_ij = 1) = a_ij = x_i w_j/(1 + x_i w_j)`
//! (rows `i ≤ N`, columns `j > N`) has weight `Π (x_i w_j)^{A_ij}/(1 + x_i w_j)`.
//! Reading columns left to right and row-inserting each column's row indices in
//! decreasing order builds a semistandard tableau `P` in the alphabet `[N]`
//! whose recording tableau grows by vertical strips; the shape therefore has
//! law `∝ s_λ(x) s_{λ′}(w)`. The convention is pinned by a goodness-of-fit
//! test against enumeration.

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{usage, Result};
use crate::model::{power_sum_f64, Signature, WeightEnvironment};

/// Samples per deterministic RNG stream.
pub const CHUNK: usize = 2048;

/// Independent Bernoulli bits with their parameters, `N × (M − N)`, row-major.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BernoulliMatrix {
    pub rows: usize,
    pub cols: usize,
    pub bits: Vec<u8>,
    pub params: Vec<f64>,
}

impl BernoulliMatrix {
    pub fn ones(&self) -> usize {
        self.bits.iter().map(|&b| b as usize).sum()
    }

    pub fn bit(&self, i: usize, j: usize) -> bool {
        self.bits[i * self.cols + j] == 1
    }
}

fn check_level(env: &WeightEnvironment, n: usize) -> Result<()> {
    if n == 0 || n >= env.m() {
        return usage(format!("need 1 ≤ N < M, got N = {n}, M = {}", env.m()));
    }
    Ok(())
}

fn params(env: &WeightEnvironment, n: usize) -> Vec<f64> {
    let cols = env.m() - n;
    let mut p = Vec::with_capacity(n * cols);
    for i in 1..=n {
        for j in n + 1..=env.m() {
            p.push(env.bernoulli_param(i, j));
        }
    }
    p
}

pub fn sample_bernoulli_matrix(env: &WeightEnvironment, n: usize, seed: u64) -> Result<BernoulliMatrix> {
    check_level(env, n)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let params = params(env, n);
    let bits = params.iter().map(|&a| (rng.random::<f64>() < a) as u8).collect();
    Ok(BernoulliMatrix { rows: n, cols: env.m() - n, bits, params })
}

/// Row insertion tableau over the alphabet `1..=N`, stored flat: at most
/// `N` rows, each at most `M − N` long (the shape fits in an `N × (M−N)` box).
#[derive(Clone, Debug, Default)]
struct Tableau {
    width: usize,
    cells: Vec<u16>,
    lens: Vec<usize>,
}

impl Tableau {
    fn with_box(rows: usize, width: usize) -> Self {
        Self { width, cells: vec![0; rows * width], lens: vec![0; rows] }
    }

    /// Insert `x`, bumping the leftmost entry strictly greater than it.
    #[inline]
    fn insert(&mut self, mut x: u16) {
        for (r, len) in self.lens.iter_mut().enumerate() {
            let row = &mut self.cells[r * self.width..r * self.width + *len];
            let pos = row.partition_point(|&v| v <= x);
            if pos == row.len() {
                self.cells[r * self.width + pos] = x;
                *len += 1;
                return;
            }
            std::mem::swap(&mut row[pos], &mut x);
        }
        unreachable!("insertion outside the N × (M−N) box");
    }

    fn shape(&self, n: usize) -> Signature {
        let mut parts: Vec<i64> = self.lens.iter().map(|&l| l as i64).collect();
        parts.resize(n, 0);
        Signature::new(parts).expect("tableau rows have weakly decreasing lengths")
    }
}

/// The same tableau held as cumulative letter counts: `counts[r][ℓ]` is the
/// number of entries `≤ ℓ + 1` in row `r`. Inserting `x` scans a staircase of
/// total length `≤ N − x`, since bumped letters strictly increase.
#[derive(Clone, Debug)]
struct CountTableau {
    n: usize,
    counts: Vec<u16>,
}

impl CountTableau {
    fn new(n: usize) -> Self {
        Self { n, counts: vec![0; n * n] }
    }

    fn clear(&mut self) {
        self.counts.iter_mut().for_each(|c| *c = 0);
    }

    /// Insert the 0-based letter `x`.
    #[inline]
    fn insert(&mut self, mut x: usize) {
        let n = self.n;
        for r in 0..n {
            let row = &mut self.counts[r * n..(r + 1) * n];
            let base = row[x];
            let mut l = x;
            while l < n && row[l] == base {
                row[l] += 1;
                l += 1;
            }
            if l == n {
                return;
            }
            // `l` is the smallest letter above `x` present in the row: bumped.
            x = l;
        }
        unreachable!("insertion below row N");
    }

    fn shape(&self) -> Signature {
        let n = self.n;
        let parts = (0..n).map(|r| self.counts[r * n + n - 1] as i64).collect();
        Signature::new(parts).expect("tableau rows have weakly decreasing lengths")
    }
}

/// Shape of the insertion tableau of the matrix's column-wise biword.
pub fn dual_rsk_shape(mat: &BernoulliMatrix) -> Signature {
    let mut t = Tableau::with_box(mat.rows, mat.cols);
    for j in 0..mat.cols {
        for i in (0..mat.rows).rev() {
            if mat.bit(i, j) {
                t.insert(i as u16 + 1);
            }
        }
    }
    t.shape(mat.rows)
}

/// Reusable sampler for one `(env, N)`; bits are drawn by integer thresholds.
#[derive(Clone, Debug)]
pub struct LambdaSampler {
    n: usize,
    cols: usize,
    /// Column-major thresholds: `thresholds[j*N + i]`, `P(u32 < t) = a_ij`.
    thresholds: Vec<u64>,
}

/// Outcome of one draw: the shape and the number of ones in the matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct Draw {
    pub lambda: Signature,
    pub ones: usize,
}

impl LambdaSampler {
    pub fn new(env: &WeightEnvironment, n: usize) -> Result<Self> {
        check_level(env, n)?;
        let cols = env.m() - n;
        let mut thresholds = vec![0u64; n * cols];
        for j in 0..cols {
            for i in 0..n {
                let a = env.bernoulli_param(i + 1, n + 1 + j);
                thresholds[j * n + i] = (a * 4294967296.0).round() as u64;
            }
        }
        Ok(Self { n, cols, thresholds })
    }

    fn draw_into<R: RngCore>(&self, rng: &mut R, t: &mut CountTableau) -> Draw {
        t.clear();
        let mut ones = 0;
        for j in 0..self.cols {
            let col = &self.thresholds[j * self.n..(j + 1) * self.n];
            for i in (0..self.n).rev() {
                if (rng.next_u32() as u64) < col[i] {
                    t.insert(i);
                    ones += 1;
                }
            }
        }
        Draw { lambda: t.shape(), ones }
    }

    pub fn draw<R: RngCore>(&self, rng: &mut R) -> Draw {
        self.draw_into(rng, &mut CountTableau::new(self.n))
    }

    /// `count` draws mapped through `f`, in a fixed order that does not depend
    /// on the thread count: chunk `c` uses stream `c` of the seed.
    pub fn draw_many<T, F>(&self, count: usize, seed: u64, f: F) -> Vec<T>
    where
        T: Send,
        F: Fn(&Draw) -> T + Sync,
    {
        let chunks = count.div_ceil(CHUNK);
        let per_chunk: Vec<Vec<T>> = (0..chunks)
            .into_par_iter()
            .map(|c| {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                rng.set_stream(c as u64);
                let mut t = CountTableau::new(self.n);
                let len = CHUNK.min(count - c * CHUNK);
                (0..len).map(|_| f(&self.draw_into(&mut rng, &mut t))).collect()
            })
            .collect();
        per_chunk.into_iter().flatten().collect()
    }
}

/// One exact draw of `λ⁽ᴺ⁾`, zero-padded to length `N`.
pub fn sample_lambda(env: &WeightEnvironment, n: usize, seed: u64) -> Result<Signature> {
    let s = LambdaSampler::new(env, n)?;
    Ok(s.draw(&mut ChaCha8Rng::seed_from_u64(seed)).lambda)
}

/// Sample means and covariances of `p_k`, with jackknife standard errors.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct McMoments {
    pub ks: Vec<u32>,
    pub num_samples: usize,
    pub means: Vec<f64>,
    pub mean_se: Vec<f64>,
    /// Row-major `ks.len() × ks.len()`.
    pub cov: Vec<f64>,
    pub cov_se: Vec<f64>,
    /// Draws whose shape size differed from the matrix's ones count (always 0).
    pub invariant_violations: usize,
}

impl McMoments {
    pub fn cov(&self, a: usize, b: usize) -> f64 {
        self.cov[a * self.ks.len() + b]
    }
    pub fn cov_se(&self, a: usize, b: usize) -> f64 {
        self.cov_se[a * self.ks.len() + b]
    }
}

/// Number of jackknife blocks.
const BLOCKS: usize = 50;

/// Means and covariances with delete-one-block jackknife errors.
pub fn moments_with_jackknife(samples: &[Vec<f64>]) -> (Vec<f64>, Vec<f64>, Vec<f64>, Vec<f64>) {
    let n = samples.len();
    let d = samples.first().map_or(0, Vec::len);
    let stats = |skip: Option<(usize, usize)>| -> (Vec<f64>, Vec<f64>) {
        let keep = |i: usize| skip.is_none_or(|(a, b)| i < a || i >= b);
        let cnt = (0..n).filter(|&i| keep(i)).count() as f64;
        let mut mean = vec![0.0; d];
        for (i, s) in samples.iter().enumerate().filter(|(i, _)| keep(*i)) {
            let _ = i;
            for k in 0..d {
                mean[k] += s[k];
            }
        }
        mean.iter_mut().for_each(|m| *m /= cnt);
        let mut cov = vec![0.0; d * d];
        for s in samples.iter().enumerate().filter(|(i, _)| keep(*i)).map(|(_, s)| s) {
            for a in 0..d {
                for b in 0..d {
                    cov[a * d + b] += (s[a] - mean[a]) * (s[b] - mean[b]);
                }
            }
        }
        cov.iter_mut().for_each(|c| *c /= cnt - 1.0);
        (mean, cov)
    };
    let (mean, cov) = stats(None);
    let blocks = BLOCKS.min(n);
    let mut mean_se = vec![0.0; d];
    let mut cov_se = vec![0.0; d * d];
    if blocks >= 2 {
        let bounds: Vec<(usize, usize)> = (0..blocks).map(|b| (b * n / blocks, (b + 1) * n / blocks)).collect();
        let reps: Vec<(Vec<f64>, Vec<f64>)> = bounds.iter().map(|&r| stats(Some(r))).collect();
        let f = (blocks - 1) as f64 / blocks as f64;
        for k in 0..d {
            let avg = reps.iter().map(|r| r.0[k]).sum::<f64>() / blocks as f64;
            mean_se[k] = (f * reps.iter().map(|r| (r.0[k] - avg).powi(2)).sum::<f64>()).sqrt();
        }
        for c in 0..d * d {
            let avg = reps.iter().map(|r| r.1[c]).sum::<f64>() / blocks as f64;
            cov_se[c] = (f * reps.iter().map(|r| (r.1[c] - avg).powi(2)).sum::<f64>()).sqrt();
        }
    }
    (mean, mean_se, cov, cov_se)
}

/// Monte Carlo moments of `{p_k}` at level `N` from exact draws.
pub fn monte_carlo_moments(
    env: &WeightEnvironment,
    n: usize,
    ks: &[u32],
    num_samples: usize,
    seed: u64,
) -> Result<McMoments> {
    if num_samples < 2 {
        return usage("need at least two samples");
    }
    let sampler = LambdaSampler::new(env, n)?;
    let rows: Vec<(Vec<f64>, bool)> = sampler.draw_many(num_samples, seed, |d| {
        (
            ks.iter().map(|&k| power_sum_f64(&d.lambda, k)).collect(),
            d.lambda.size() as usize != d.ones,
        )
    });
    let violations = rows.iter().filter(|r| r.1).count();
    let samples: Vec<Vec<f64>> = rows.into_iter().map(|r| r.0).collect();
    let (means, mean_se, cov, cov_se) = moments_with_jackknife(&samples);
    Ok(McMoments {
        ks: ks.to_vec(),
        num_samples,
        means,
        mean_se,
        cov,
        cov_se,
        invariant_violations: violations,
    })
}
