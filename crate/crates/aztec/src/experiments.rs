//! Batch experiment drivers: law of large numbers, annealed fluctuations in
//! both regimes, quenched fluctuations and the GUE demonstration.
//!
//! Every driver returns a [`MomentReport`]; [`write_outputs`] serialises it as
//! CSV (frozen schema) plus a JSON summary carrying the configuration hash.
//! Reports depend only on the configuration and its seed.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::asymptotics::{
    self, gue, stationary_law, EnvKernel, GueKernel, GueShape, IidKernel, LawShape, LevelShape, MarkovKernel, Regime,
    ZeroKernel,
};
use crate::enumeration::{enumerate_chains, exact_joint_moments, verify_marginal, MAX_ENUMERATION_M};
use crate::environment::{env_rng, gue_spectrum, semicircle_ks_distance, EnvironmentModel, ModelKind, PairAtom, PairLaw};
use crate::error::{Error, Result};
use crate::finite_moments::{bernoulli_mean_p1, bernoulli_var_p1, expectation_pk, g_leading, stirling2, MAX_ORDER};
use crate::model::WeightEnvironment;
use crate::report::{MomentReport, Provenance, ReportRow};
use crate::sampler::{moments_with_jackknife, monte_carlo_moments};

/// Tail tolerance for Markov long-run sums in the drivers.
const MARKOV_TAIL_TOL: f64 = 1e-14;

/// Which driver to run.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentKind {
    Lln,
    AnnealedSqrt,
    AnnealedM,
    Quenched,
    GueDemo,
}

impl ExperimentKind {
    pub fn name(self) -> &'static str {
        match self {
            ExperimentKind::Lln => "lln",
            ExperimentKind::AnnealedSqrt => "annealed-sqrt",
            ExperimentKind::AnnealedM => "annealed-m",
            ExperimentKind::Quenched => "quenched",
            ExperimentKind::GueDemo => "gue-demo",
        }
    }
}

/// Acceptance thresholds used in the summary.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Tolerances {
    /// A row agrees when its relative gap is at most `rel`…
    #[serde(default = "default_rel")]
    pub rel: f64,
    /// …or its `|z|` is at most `z`.
    #[serde(default = "default_z")]
    pub z: f64,
}

fn default_rel() -> f64 {
    0.05
}
fn default_z() -> f64 {
    3.0
}

impl Default for Tolerances {
    fn default() -> Self {
        Self { rel: default_rel(), z: default_z() }
    }
}

/// A batch experiment.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment: ExperimentKind,
    pub model: EnvironmentModel,
    pub m_list: Vec<usize>,
    /// One-level runs at each `γ`.
    #[serde(default)]
    pub gammas: Vec<f64>,
    /// Extra two-level pairs `(γ₁, γ₂)`, `γ₁ ≤ γ₂`.
    #[serde(default)]
    pub level_pairs: Vec<(f64, f64)>,
    pub ks: Vec<usize>,
    /// Environments in outer Monte Carlo loops.
    #[serde(default = "default_envs")]
    pub num_envs: usize,
    /// Environments on which quenched finite-size covariances are evaluated
    /// when no closed form exists.
    #[serde(default = "default_quenched_envs")]
    pub quenched_envs: usize,
    /// Exact draws per fixed environment.
    #[serde(default = "default_samples")]
    pub num_samples: usize,
    /// Fixed environments in quenched runs.
    #[serde(default = "default_realizations")]
    pub realizations: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub out_dir: Option<PathBuf>,
    #[serde(default)]
    pub svg: bool,
    #[serde(default)]
    pub tolerances: Tolerances,
}

fn default_envs() -> usize {
    1000
}
fn default_quenched_envs() -> usize {
    50
}
fn default_samples() -> usize {
    100_000
}
fn default_realizations() -> usize {
    2
}

fn config_err<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Config(msg.into()))
}

/// `⌊γM⌋`.
fn level_of(gamma: f64, m: usize) -> usize {
    (gamma * m as f64 + 1e-9).floor() as usize
}

impl ExperimentConfig {
    /// A configuration with default counts.
    pub fn new(experiment: ExperimentKind, model: EnvironmentModel, m_list: Vec<usize>, gammas: Vec<f64>, ks: Vec<usize>) -> Self {
        Self {
            experiment,
            model,
            m_list,
            gammas,
            level_pairs: Vec::new(),
            ks,
            num_envs: default_envs(),
            quenched_envs: default_quenched_envs(),
            num_samples: default_samples(),
            realizations: default_realizations(),
            seed: 0,
            out_dir: None,
            svg: false,
            tolerances: Tolerances::default(),
        }
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let c: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        c.validate()?;
        Ok(c)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let c: Self = serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        c.validate()?;
        Ok(c)
    }

    /// Reads TOML or JSON by file extension (`.json` → JSON, otherwise TOML).
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        if path.extension().is_some_and(|e| e == "json") {
            Self::from_json(&text)
        } else {
            Self::from_toml(&text)
        }
    }

    /// All `(γ₁, γ₂)` pairs: the diagonal of `gammas`, then `level_pairs`.
    pub fn pairs(&self) -> Vec<(f64, f64)> {
        self.gammas.iter().map(|&g| (g, g)).chain(self.level_pairs.iter().copied()).collect()
    }

    /// `(k, l)` with `k ≤ l` from `ks`, or all ordered pairs for two levels.
    fn exponent_pairs(&self, (g1, g2): (f64, f64)) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        for (a, &k) in self.ks.iter().enumerate() {
            for (b, &l) in self.ks.iter().enumerate() {
                if g1 != g2 || a <= b {
                    out.push((k, l));
                }
            }
        }
        out
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        if self.m_list.is_empty() {
            return config_err("m_list is empty");
        }
        if self.ks.is_empty() && self.experiment != ExperimentKind::GueDemo {
            return config_err("ks is empty");
        }
        if let Some(k) = self.ks.iter().find(|&&k| k > MAX_ORDER) {
            return config_err(format!("moment order {k} above {MAX_ORDER}"));
        }
        if self.pairs().is_empty() {
            return config_err("no levels: give gammas or level_pairs");
        }
        for &(g1, g2) in &self.pairs() {
            if !(g1 > 0.0 && g1 <= g2 && g2 < 1.0) {
                return config_err(format!("level pair ({g1}, {g2}) must satisfy 0 < γ₁ ≤ γ₂ < 1"));
            }
            for &m in &self.m_list {
                for g in [g1, g2] {
                    let n = level_of(g, m);
                    if n < 1 || n >= m {
                        return config_err(format!("level ⌊{g}·{m}⌋ = {n} outside [1, M)"));
                    }
                }
            }
        }
        if self.num_envs < 2 || self.num_samples < 2 || self.realizations < 1 || self.quenched_envs < 1 {
            return config_err("sample counts too small");
        }
        if !(self.tolerances.rel > 0.0 && self.tolerances.z > 0.0) {
            return config_err("tolerances must be positive");
        }
        Ok(())
    }

    /// SHA-256 of the canonical JSON encoding.
    pub fn hash(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("config serialises");
        Sha256::digest(&bytes).iter().fold(String::with_capacity(64), |mut s, b| {
            let _ = write!(s, "{b:02x}");
            s
        })
    }
}

/// Runs the configured experiment.
pub fn run(config: &ExperimentConfig) -> Result<MomentReport> {
    config.validate()?;
    match config.experiment {
        ExperimentKind::Lln => run_lln(config),
        ExperimentKind::AnnealedSqrt => run_annealed(config, Regime::Sqrt),
        ExperimentKind::AnnealedM => run_annealed(config, Regime::M),
        ExperimentKind::Quenched => run_quenched(config),
        ExperimentKind::GueDemo => run_gue_demo(config),
    }
}

/// Law of one period of a deterministic model (marginals are all the limit sees).
fn period_law(beta: &[f64], y: &[f64]) -> PairLaw {
    let p = 1.0 / beta.len() as f64;
    PairLaw::Joint { atoms: beta.iter().zip(y).map(|(&beta, &y)| PairAtom { y, beta, prob: p }).collect() }
}

/// Limit shape of `model` at level `γ`.
pub fn shape_for(model: &EnvironmentModel, gamma: f64) -> Result<Box<dyn LevelShape>> {
    Ok(match &model.kind {
        ModelKind::Deterministic { beta, y } => Box::new(LawShape::new(&period_law(beta, y), gamma)?),
        ModelKind::Iid { law } => Box::new(LawShape::new(law, gamma)?),
        ModelKind::Markov { chain } => Box::new(LawShape::new(&stationary_law(chain)?, gamma)?),
        ModelKind::Gue => Box::new(GueShape { gamma, full: false }),
        ModelKind::GueFull { gamma: g } => {
            if (g - gamma).abs() > 1e-12 {
                return config_err(format!("gue-full model splits at γ = {g}; level γ = {gamma} is not covered"));
            }
            Box::new(GueShape { gamma, full: true })
        }
    })
}

/// Environment kernel of `model` for the regime.
pub fn kernel_for(model: &EnvironmentModel, gammas: (f64, f64), regime: Regime) -> Result<Box<dyn EnvKernel>> {
    let sqrt = regime == Regime::Sqrt;
    Ok(match (&model.kind, sqrt) {
        (ModelKind::Deterministic { .. }, _) => Box::new(ZeroKernel),
        (ModelKind::Iid { law }, true) => Box::new(IidKernel::new(law, gammas)?),
        (ModelKind::Markov { chain }, true) => Box::new(MarkovKernel::new(chain, gammas, MARKOV_TAIL_TOL)?),
        (ModelKind::Gue | ModelKind::GueFull { .. }, false) => {
            if gammas.0 != gammas.1 {
                return config_err("GUE kernels are implemented for one level only");
            }
            shape_for(model, gammas.0)?;
            let full = matches!(model.kind, ModelKind::GueFull { .. });
            Box::new(GueKernel::new(gammas.0, full, 1.0)?)
        }
        (_, true) => return config_err("regime √M needs a deterministic, i.i.d. or Markov environment"),
        (_, false) => return config_err("regime M needs a deterministic or GUE environment"),
    })
}

/// `E p_k` at level `N` (closed form for `k ≤ 1`).
fn mean_pk(env: &WeightEnvironment, n: usize, k: usize) -> Result<f64> {
    match k {
        0 => Ok(n as f64),
        1 => Ok(bernoulli_mean_p1(env, n)),
        _ => expectation_pk(env, n, k),
    }
}

/// `Cov_λ(p_k^{(N₁)}, p_l^{(N₂)})` at a fixed environment: closed form, full
/// enumeration for `M ≤ 6`, otherwise the leading contour term.
pub fn quenched_finite_cov(env: &WeightEnvironment, n1: usize, n2: usize, k: usize, l: usize) -> Result<(f64, Provenance)> {
    if k == 0 || l == 0 {
        return Ok((0.0, Provenance::ClosedForm));
    }
    if n1 == n2 && k == 1 && l == 1 {
        return Ok((bernoulli_var_p1(env, n1), Provenance::ClosedForm));
    }
    if env.m() <= MAX_ENUMERATION_M {
        return Ok((exact_joint_moments(env, &[n1, n2], &[k as u32, l as u32], true)?, Provenance::ExactEnum));
    }
    let mut v = 0.0;
    for m1 in 1..=k {
        for m2 in 1..=l {
            let s = (stirling2(k, m1)? * stirling2(l, m2)?) as f64;
            v += s * g_leading(env, n1, n2, m1, m2, None)?.value.re;
        }
    }
    Ok((v, Provenance::LeadingOrder))
}

fn mean_se(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0).max(1.0);
    (mean, (var / n).sqrt())
}

/// Jackknife blocks for higher moments.
const MOMENT_BLOCKS: usize = 50;

/// Standardised third and fourth moments with delete-one-block jackknife errors.
pub fn standardized_moments(xs: &[f64]) -> [(f64, f64); 2] {
    let stat = |keep: &dyn Fn(usize) -> bool| -> [f64; 2] {
        let v: Vec<f64> = xs.iter().enumerate().filter(|(i, _)| keep(*i)).map(|(_, x)| *x).collect();
        let n = v.len() as f64;
        let mean = v.iter().sum::<f64>() / n;
        let m2 = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
        let m3 = v.iter().map(|x| (x - mean).powi(3)).sum::<f64>() / n;
        let m4 = v.iter().map(|x| (x - mean).powi(4)).sum::<f64>() / n;
        if m2 == 0.0 {
            return [0.0, 0.0];
        }
        [m3 / m2.powf(1.5), m4 / (m2 * m2)]
    };
    let full = stat(&|_| true);
    let n = xs.len();
    let blocks = MOMENT_BLOCKS.min(n);
    if blocks < 2 {
        return [(full[0], f64::NAN), (full[1], f64::NAN)];
    }
    let reps: Vec<[f64; 2]> = (0..blocks)
        .map(|b| {
            let (lo, hi) = (b * n / blocks, (b + 1) * n / blocks);
            stat(&|i| i < lo || i >= hi)
        })
        .collect();
    let f = (blocks - 1) as f64 / blocks as f64;
    let se = |j: usize| {
        let avg = reps.iter().map(|r| r[j]).sum::<f64>() / blocks as f64;
        (f * reps.iter().map(|r| (r[j] - avg).powi(2)).sum::<f64>()).sqrt()
    };
    [(full[0], se(0)), (full[1], se(1))]
}

fn diag_key(name: &str, m: usize, g: (f64, f64), k: usize, l: usize) -> String {
    format!("{name}:M={m}:g={},{}:k={k},l={l}", g.0, g.1)
}

/// Law of large numbers: `E[p_k]/N^{k+1}` (environment-averaged when random)
/// against `𝔪_k`.
pub fn run_lln(config: &ExperimentConfig) -> Result<MomentReport> {
    config.validate()?;
    let mut rep = MomentReport::new("lln");
    let random = config.model.is_random();
    for &g in &config.gammas {
        let shape = shape_for(&config.model, g)?;
        for &k in &config.ks {
            let pred = asymptotics::limit_moment(shape.as_ref(), k, None)?.value.re;
            let mut gaps = Vec::new();
            for &m in &config.m_list {
                let n = level_of(g, m);
                let scale = (n as f64).powi(k as i32 + 1);
                let count = if random { config.num_envs } else { 1 };
                let vals = config.model.map_batch(m, count, config.seed, |_, env| Ok(mean_pk(env, n, k)? / scale))?;
                let (value, se) = if random {
                    let (a, b) = mean_se(&vals);
                    (a, Some(b))
                } else {
                    (vals[0], None)
                };
                let prov = match (k, random) {
                    (0, _) => Provenance::ClosedForm,
                    (_, true) => Provenance::MonteCarlo,
                    (1, false) => Provenance::ClosedForm,
                    _ => Provenance::Quadrature,
                };
                let pred_prov = if k == 0 { Provenance::ClosedForm } else { Provenance::Quadrature };
                let row = ReportRow::new("mean", m, (g, g), (k as u32, 0), value, se, prov, Some((pred, pred_prov)));
                gaps.push((value - pred).abs());
                rep.rows.push(row);
            }
            if gaps.len() >= 2 {
                let key = format!("gap_trend:g={g}:k={k}");
                rep.diagnostics.push((key, gaps[gaps.len() - 1] - gaps[0]));
            }
        }
    }
    Ok(rep)
}

/// Annealed fluctuations: environment covariance of the quenched means, the
/// average quenched covariance, and (regime `M`) their sum, each against the
/// matching limit formula. Gaussianity of the quenched means is checked
/// through their standardised third and fourth moments.
pub fn run_annealed(config: &ExperimentConfig, regime: Regime) -> Result<MomentReport> {
    config.validate()?;
    let mut rep = MomentReport::new(match regime {
        Regime::Sqrt => "annealed-sqrt",
        Regime::M => "annealed-m",
    });
    // Fails early on regime/model mismatch.
    kernel_for(&config.model, config.pairs()[0], regime)?;
    let wick4 = asymptotics::wick_moment(|_, _| 1.0, &[0, 0, 0, 0])?;
    for &m in &config.m_list {
        for pair in config.pairs() {
            let (g1, g2) = pair;
            let (n1, n2) = (level_of(g1, m), level_of(g2, m));
            let (s1, s2) = (shape_for(&config.model, g1)?, shape_for(&config.model, g2)?);
            let kernel = kernel_for(&config.model, pair, regime)?;
            let ks = config.ks.clone();
            // Per environment: E p_k at both levels.
            let random = config.model.is_random();
            let env_count = if random { config.num_envs } else { 2 };
            let means = config.model.map_batch(m, env_count, config.seed, |_, env| {
                let a: Vec<f64> = ks.iter().map(|&k| mean_pk(env, n1, k)).collect::<Result<_>>()?;
                let b: Vec<f64> = ks.iter().map(|&k| mean_pk(env, n2, k)).collect::<Result<_>>()?;
                Ok((a, b))
            })?;
            for (k, l) in config.exponent_pairs(pair) {
                let (ik, il) = (ks.iter().position(|&x| x == k).unwrap(), ks.iter().position(|&x| x == l).unwrap());
                let p = (k + l) as i32;
                let env_scale = (m as f64).powi(p + if regime == Regime::Sqrt { 1 } else { 0 });
                let q_scale = (m as f64).powi(p);
                // Level N₂ carries k (outer contour), level N₁ carries l.
                let samples: Vec<Vec<f64>> = means.iter().map(|(a, b)| vec![b[ik] / env_scale.sqrt(), a[il] / env_scale.sqrt()]).collect();
                let (_, _, cov, cov_se) = moments_with_jackknife(&samples);
                // A deterministic environment has no environment fluctuations.
                let (env_v, env_se, env_prov) =
                    if random { (cov[1], cov_se[1], Provenance::MonteCarlo) } else { (0.0, 0.0, Provenance::ClosedForm) };

                // Average quenched covariance (closed form on every environment when available).
                let closed = k == 0 || l == 0 || (n1 == n2 && k == 1 && l == 1) || m <= MAX_ENUMERATION_M;
                let count = if !random { 1 } else if closed { config.num_envs } else { config.quenched_envs.min(config.num_envs) };
                let qs = config.model.map_batch(m, count, config.seed, |_, env| quenched_finite_cov(env, n1, n2, l, k))?;
                let q_prov = qs.first().map_or(Provenance::ClosedForm, |q| q.1);
                let qv: Vec<f64> = qs.iter().map(|q| q.0 / q_scale).collect();
                let (q_mean, q_se) = mean_se(&qv);
                let (q_se, q_row_prov) = if random {
                    (Some(q_se), if q_prov == Provenance::LeadingOrder { q_prov } else { Provenance::MonteCarlo })
                } else {
                    (None, q_prov)
                };

                let kl = (k as u32, l as u32);
                let env_row_se = random.then_some(env_se);
                match regime {
                    Regime::Sqrt => {
                        let pred = asymptotics::annealed_cov_sqrt(s1.as_ref(), s2.as_ref(), kernel.as_ref(), k, l, None)?.value.re;
                        rep.rows.push(ReportRow::new("env", m, pair, kl, env_v, env_row_se, env_prov, Some((pred, Provenance::Quadrature))));
                        let qpred = asymptotics::quenched_cov(s1.as_ref(), s2.as_ref(), k, l, None)?.value.re;
                        rep.rows.push(ReportRow::new("quenched-mean", m, pair, kl, q_mean, q_se, q_row_prov, Some((qpred, Provenance::Quadrature))));
                    }
                    Regime::M => {
                        let am = asymptotics::annealed_cov_m(s1.as_ref(), s2.as_ref(), kernel.as_ref(), k, l, None)?;
                        rep.rows.push(ReportRow::new("env", m, pair, kl, env_v, env_row_se, env_prov, Some((am.env.value.re, Provenance::Quadrature))));
                        rep.rows.push(ReportRow::new("quenched-mean", m, pair, kl, q_mean, q_se, q_row_prov, Some((am.gff.value.re, Provenance::Quadrature))));
                        let total = env_v + q_mean;
                        let total_se = env_row_se.map(|e| (e * e + q_se.unwrap_or(0.0).powi(2)).sqrt());
                        let total_prov = if q_row_prov == Provenance::LeadingOrder || !random { q_row_prov } else { Provenance::MonteCarlo };
                        rep.rows.push(ReportRow::new("total", m, pair, kl, total, total_se, total_prov, Some((am.total.value.re, Provenance::Quadrature))));
                        if let ModelKind::GueFull { gamma } = config.model.kind {
                            if g1 == g2 && (g1 - gamma).abs() < 1e-12 {
                                let closed = gue::gue_full_cov(k, l, gamma, None)?.value.re * gamma.powi(p);
                                rep.rows.push(ReportRow::new("total-closed-form", m, pair, kl, total, total_se, total_prov, Some((closed, Provenance::ClosedForm))));
                            }
                        }
                    }
                }
                if k == l && g1 == g2 && random {
                    let xs: Vec<f64> = samples.iter().map(|s| s[0]).collect();
                    let [(s3, s3_se), (s4, s4_se)] = standardized_moments(&xs);
                    rep.rows.push(ReportRow::new("skewness", m, pair, kl, s3, Some(s3_se), Provenance::MonteCarlo, Some((0.0, Provenance::ClosedForm))));
                    rep.rows.push(ReportRow::new("kurtosis", m, pair, kl, s4, Some(s4_se), Provenance::MonteCarlo, Some((wick4, Provenance::ClosedForm))));
                }
            }
        }
    }
    Ok(rep)
}

/// Quenched fluctuations at fixed environments: Monte Carlo (or, for `M ≤ 6`,
/// exact) covariances of `(p_k/M^k, p_l/M^l)` against the limit formula, on
/// several independent environments.
pub fn run_quenched(config: &ExperimentConfig) -> Result<MomentReport> {
    config.validate()?;
    let mut rep = MomentReport::new("quenched");
    for &m in &config.m_list {
        for pair in config.pairs() {
            let (g1, g2) = pair;
            if g1 != g2 && m > MAX_ENUMERATION_M {
                return Err(Error::Refused(format!(
                    "two-level quenched covariances need joint samples of several levels, which the single-level \
                     sampler does not produce; use M ≤ {MAX_ENUMERATION_M} (exact enumeration) or γ₁ = γ₂"
                )));
            }
            let (n1, n2) = (level_of(g1, m), level_of(g2, m));
            let (s1, s2) = (shape_for(&config.model, g1)?, shape_for(&config.model, g2)?);
            let ks: Vec<u32> = config.ks.iter().map(|&k| k as u32).collect();
            let mut est: Vec<Vec<(f64, Option<f64>)>> = Vec::new();
            let kls = config.exponent_pairs(pair);
            for r in 0..config.realizations {
                let env = config.model.generate_with(m, &mut env_rng(config.seed, r))?;
                let label = format!("realization-{r}");
                let mc = if m > MAX_ENUMERATION_M {
                    Some(monte_carlo_moments(&env, n1, &ks, config.num_samples, config.seed.wrapping_add(1 + r as u64))?)
                } else {
                    None
                };
                let mut row_est = Vec::new();
                for &(k, l) in &kls {
                    let scale = (m as f64).powi((k + l) as i32);
                    let pred = asymptotics::quenched_cov(s1.as_ref(), s2.as_ref(), k, l, None)?.value.re;
                    let (v, se, prov) = if k == 0 || l == 0 {
                        (0.0, None, Provenance::ClosedForm)
                    } else if let Some(mc) = &mc {
                        let (a, b) = (config.ks.iter().position(|&x| x == k).unwrap(), config.ks.iter().position(|&x| x == l).unwrap());
                        (mc.cov(a, b) / scale, Some(mc.cov_se(a, b) / scale), Provenance::MonteCarlo)
                    } else {
                        let v = exact_joint_moments(&env, &[n1, n2], &[l as u32, k as u32], true)?;
                        (v / scale, None, Provenance::ExactEnum)
                    };
                    rep.rows.push(ReportRow::new(label.clone(), m, pair, (k as u32, l as u32), v, se, prov, Some((pred, Provenance::Quadrature))));
                    row_est.push((v, se));
                }
                if let Some(mc) = &mc {
                    rep.diagnostics.push((format!("invariant_violations:M={m}:r={r}"), mc.invariant_violations as f64));
                }
                est.push(row_est);
            }
            // Environment independence: largest pairwise z-distance between realizations.
            for (j, &(k, l)) in kls.iter().enumerate() {
                let mut worst: f64 = 0.0;
                for a in 0..est.len() {
                    for b in a + 1..est.len() {
                        let ((va, sa), (vb, sb)) = (est[a][j], est[b][j]);
                        let d = (va - vb).abs();
                        let s = (sa.unwrap_or(0.0).powi(2) + sb.unwrap_or(0.0).powi(2)).sqrt();
                        worst = worst.max(if s > 0.0 { d / s } else { d });
                    }
                }
                rep.diagnostics.push((diag_key("spread_z", m, pair, k, l), worst));
            }
        }
    }
    Ok(rep)
}

/// Number of contour points in the closed-form-vs-quadrature residual table.
const F_RESIDUAL_POINTS: usize = 20;
/// Radius of those points.
const F_RESIDUAL_RADIUS: f64 = 0.9;

/// GUE demonstration: the `ε_γ` curve, closed-form-vs-quadrature residuals of
/// `𝐅`, semicircle KS distances of sampled spectra, and the annealed regime-`M`
/// pipeline on the full-spectrum variant at each `γ`.
pub fn run_gue_demo(config: &ExperimentConfig) -> Result<MomentReport> {
    config.validate()?;
    let mut rep = MomentReport::new("gue-demo");
    let mut curve: Vec<f64> = (1..20).map(|i| i as f64 / 20.0).chain(config.gammas.iter().copied()).collect();
    curve.sort_by(f64::total_cmp);
    curve.dedup();
    let mut eps = Vec::new();
    for &g in &curve {
        let e = gue::gue_epsilon(g)?;
        eps.push(e);
        rep.rows.push(ReportRow::new("epsilon", 0, (g, g), (0, 0), e, None, Provenance::Quadrature, None));
    }
    let monotone = eps.windows(2).all(|w| w[1] < w[0]);
    rep.diagnostics.push(("epsilon_monotone".into(), if monotone { 1.0 } else { 0.0 }));
    let mut worst: f64 = 0.0;
    for &g in &config.gammas {
        for j in 0..F_RESIDUAL_POINTS {
            let theta = std::f64::consts::TAU * (j as f64 + 0.5) / F_RESIDUAL_POINTS as f64;
            let z = num_complex::Complex64::from_polar(F_RESIDUAL_RADIUS, theta);
            let r = (gue::gue_f(z, g)? - gue::gue_f_quadrature(z, g)?).norm();
            worst = worst.max(r);
            rep.rows.push(ReportRow::new("f-residual", 0, (g, g), (j as u32, 0), r, None, Provenance::Quadrature, None));
        }
    }
    rep.diagnostics.push(("max_f_residual".into(), worst));
    for &m in &config.m_list {
        let l = gue_spectrum(m, &mut env_rng(config.seed, 0))?;
        rep.diagnostics.push((format!("semicircle_ks:M={m}"), semicircle_ks_distance(&l)));
    }
    for &g in &config.gammas {
        let mut sub = config.clone();
        sub.experiment = ExperimentKind::AnnealedM;
        sub.model = EnvironmentModel { kind: ModelKind::GueFull { gamma: g }, delta: config.model.delta };
        sub.gammas = vec![g];
        sub.level_pairs.clear();
        let r = run_annealed(&sub, Regime::M)?;
        rep.rows.extend(r.rows.into_iter().map(|mut row| {
            row.label = format!("gue-full-{}", row.label);
            row
        }));
    }
    Ok(rep)
}

/// Quick internal checks at small sizes; every row carries a prediction and
/// [`selftest_passed`] decides the verdict.
pub fn run_selftest() -> Result<MomentReport> {
    let mut rep = MomentReport::new("selftest");
    let ok = |p: f64| Some((p, Provenance::ClosedForm));
    let chains = enumerate_chains(3)?.count() as f64;
    rep.rows.push(ReportRow::new("chain-count", 3, (0.0, 0.0), (0, 0), chains, None, Provenance::ExactEnum, ok(64.0)));
    let env = WeightEnvironment::new(vec![0.3, 0.6, 0.45, 0.2], vec![0.1, -0.2, 0.25, 0.0])?;
    for n in 1..4 {
        let gap = verify_marginal(&env, n)?;
        rep.rows.push(ReportRow::new("marginal-gap", 4, (0.0, 0.0), (n as u32, 0), gap, None, Provenance::ExactEnum, ok(0.0)));
        for k in 1..=3 {
            let exact = exact_joint_moments(&env, &[n], &[k], false)?;
            let via = expectation_pk(&env, n, k as usize)?;
            rep.rows.push(ReportRow::new("mean-vs-enum", 4, (0.0, 0.0), (k, 0), via, None, Provenance::Quadrature, Some((exact, Provenance::ExactEnum))));
        }
    }
    let law = PairLaw::two_point_beta(0.3, 0.7);
    let shape = LawShape::new(&law, 0.5)?;
    let m0 = asymptotics::limit_moment(&shape, 0, None)?.value.re;
    rep.rows.push(ReportRow::new("limit-moment-0", 0, (0.5, 0.5), (0, 0), m0, None, Provenance::Quadrature, ok(1.0)));
    let closed = asymptotics::iid_cov_closed_form(&law, 0.5, 0.5, 1, 1)?.value.re;
    rep.rows.push(ReportRow::new("iid-cov-11", 0, (0.5, 0.5), (1, 1), closed, None, Provenance::Quadrature, Some((0.005, Provenance::ClosedForm))));
    let q = asymptotics::quenched_cov(&LawShape::new(&PairLaw::point(0.0, 0.5), 0.5)?, &LawShape::new(&PairLaw::point(0.0, 0.5), 0.5)?, 1, 1, None)?.value.re;
    rep.rows.push(ReportRow::new("quenched-11", 0, (0.5, 0.5), (1, 1), q, None, Provenance::Quadrature, Some((1.0 / 16.0, Provenance::ClosedForm))));
    let e = gue::gue_epsilon(0.5)?;
    rep.rows.push(ReportRow::new("epsilon-half", 0, (0.5, 0.5), (0, 0), e, None, Provenance::Quadrature, ok(0.0)));
    let w = asymptotics::wick_moment(|_, _| 2.0, &[1, 1, 1, 1])?;
    rep.rows.push(ReportRow::new("wick-4", 0, (0.0, 0.0), (0, 0), w, None, Provenance::ClosedForm, ok(12.0)));
    Ok(rep)
}

/// Absolute tolerance of the self-test rows.
pub const SELFTEST_TOL: f64 = 1e-8;

pub fn selftest_passed(rep: &MomentReport) -> bool {
    rep.rows.iter().all(|r| r.prediction.is_some_and(|p| (r.value - p).abs() <= SELFTEST_TOL * p.abs().max(1.0)))
}

/// Whether a row agrees with its prediction under `tol`; rows without a
/// prediction count as agreeing.
pub fn row_agrees(r: &ReportRow, tol: &Tolerances) -> bool {
    let Some(p) = r.prediction else { return true };
    if r.z_score.is_some_and(|z| z.abs() <= tol.z) {
        return true;
    }
    match r.rel_gap {
        Some(g) => g <= tol.rel,
        None => (r.value - p).abs() <= 1e-12,
    }
}

/// JSON summary written next to the CSV.
#[derive(Clone, Debug, Serialize)]
pub struct Summary<'a> {
    pub experiment: &'a str,
    pub config_hash: String,
    pub config: &'a ExperimentConfig,
    pub rows: usize,
    pub rows_within_tolerance: usize,
    pub max_abs_z: Option<f64>,
    pub diagnostics: &'a [(String, f64)],
}

pub fn summarize<'a>(rep: &'a MomentReport, config: &'a ExperimentConfig) -> Summary<'a> {
    let within = rep.rows.iter().filter(|r| row_agrees(r, &config.tolerances)).count();
    let max_z = rep.rows.iter().filter_map(|r| r.z_score).map(f64::abs).fold(None, |a: Option<f64>, z| Some(a.map_or(z, |a| a.max(z))));
    Summary {
        experiment: &rep.experiment,
        config_hash: config.hash(),
        config,
        rows: rep.rows.len(),
        rows_within_tolerance: within,
        max_abs_z: max_z,
        diagnostics: &rep.diagnostics,
    }
}

/// Writes `<experiment>.csv`, `<experiment>.json` and, when requested,
/// `<experiment>.svg` into `dir`; returns the written paths.
pub fn write_outputs(rep: &MomentReport, config: &ExperimentConfig, dir: &Path) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir)?;
    let base = dir.join(&rep.experiment);
    let csv_path = base.with_extension("csv");
    rep.write_csv(std::fs::File::create(&csv_path)?)?;
    let json_path = base.with_extension("json");
    let mut text = serde_json::to_string_pretty(&summarize(rep, config))?;
    text.push('\n');
    std::fs::write(&json_path, text)?;
    let mut out = vec![csv_path, json_path];
    if config.svg {
        let svg_path = base.with_extension("svg");
        std::fs::write(&svg_path, render_svg(rep))?;
        out.push(svg_path);
    }
    Ok(out)
}

/// Line plot of `|value − prediction|` against `M` (log–log), one line per
/// `(label, γ₁, γ₂, k, l)` with at least one positive gap.
pub fn render_svg(rep: &MomentReport) -> String {
    type Key = (String, u64, u64, u32, u32);
    let mut series: Vec<(Key, Vec<(f64, f64)>)> = Vec::new();
    for r in &rep.rows {
        let Some(p) = r.prediction else { continue };
        let gap = (r.value - p).abs();
        if r.m == 0 || gap <= 0.0 {
            continue;
        }
        let key = (r.label.clone(), r.gamma1.to_bits(), r.gamma2.to_bits(), r.k, r.l);
        let pt = ((r.m as f64).log10(), gap.log10());
        match series.iter_mut().find(|(k, _)| *k == key) {
            Some((_, v)) => v.push(pt),
            None => series.push((key, vec![pt])),
        }
    }
    let (w, h, pad) = (640.0, 400.0, 50.0);
    let pts = series.iter().flat_map(|(_, v)| v.iter());
    let (mut x0, mut x1, mut y0, mut y1) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
    for &(x, y) in pts {
        x0 = x0.min(x);
        x1 = x1.max(x);
        y0 = y0.min(y);
        y1 = y1.max(y);
    }
    if !x0.is_finite() {
        (x0, x1, y0, y1) = (0.0, 1.0, 0.0, 1.0);
    }
    if x1 - x0 < 1e-9 {
        x1 = x0 + 1.0;
    }
    if y1 - y0 < 1e-9 {
        y1 = y0 + 1.0;
    }
    let sx = |x: f64| pad + (x - x0) / (x1 - x0) * (w - 2.0 * pad);
    let sy = |y: f64| h - pad - (y - y0) / (y1 - y0) * (h - 2.0 * pad);
    let mut s = String::new();
    let _ = writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}">"#);
    let _ = writeln!(s, r#"<rect width="{w}" height="{h}" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<text x="{}" y="20" font-size="14" text-anchor="middle">{}: |value − prediction| vs M (log–log)</text>"#,
        w / 2.0,
        rep.experiment
    );
    let _ = writeln!(s, r#"<line x1="{pad}" y1="{}" x2="{}" y2="{}" stroke="black"/>"#, h - pad, w - pad, h - pad);
    let _ = writeln!(s, r#"<line x1="{pad}" y1="{pad}" x2="{pad}" y2="{}" stroke="black"/>"#, h - pad);
    let _ = writeln!(s, r#"<text x="{pad}" y="{}" font-size="11">log10 M: {x0:.3} … {x1:.3}</text>"#, h - 15.0);
    let _ = writeln!(s, r#"<text x="5" y="{}" font-size="11">log10 gap: {y0:.2} … {y1:.2}</text>"#, pad - 10.0);
    const COLORS: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf"];
    for (i, (key, v)) in series.iter().enumerate() {
        let c = COLORS[i % COLORS.len()];
        let path: Vec<String> = v.iter().map(|&(x, y)| format!("{:.2},{:.2}", sx(x), sy(y))).collect();
        let _ = writeln!(s, r#"<polyline fill="none" stroke="{c}" stroke-width="1.5" points="{}"/>"#, path.join(" "));
        for &(x, y) in v {
            let _ = writeln!(s, r#"<circle cx="{:.2}" cy="{:.2}" r="3" fill="{c}"/>"#, sx(x), sy(y));
        }
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{}" font-size="10" fill="{c}">{} g=({},{}) k={} l={}</text>"#,
            w - pad - 150.0,
            pad + 12.0 * i as f64,
            key.0,
            f64::from_bits(key.1),
            f64::from_bits(key.2),
            key.3,
            key.4
        );
    }
    s.push_str("</svg>\n");
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::environment::Marginal;

    fn det_half() -> EnvironmentModel {
        EnvironmentModel::new(ModelKind::Deterministic { beta: vec![0.5], y: vec![0.0] })
    }

    fn two_point() -> EnvironmentModel {
        EnvironmentModel::new(ModelKind::Iid { law: PairLaw::two_point_beta(0.3, 0.7) })
    }

    #[test]
    fn lln_deterministic_k0_is_exactly_one() {
        let c = ExperimentConfig::new(ExperimentKind::Lln, det_half(), vec![20, 40], vec![0.5], vec![0, 1]);
        let rep = run(&c).unwrap();
        for r in rep.rows.iter().filter(|r| r.k == 0) {
            assert_eq!(r.value, 1.0);
            assert!((r.prediction.unwrap() - 1.0).abs() < 1e-8);
        }
    }

    #[test]
    fn lln_deterministic_matches_within_two_percent() {
        let c = ExperimentConfig::new(ExperimentKind::Lln, det_half(), vec![400], vec![0.5], vec![1, 2, 3]);
        for r in run(&c).unwrap().rows {
            assert!(r.rel_gap.unwrap() <= 0.02, "k = {}: {:?}", r.k, r.rel_gap);
        }
    }

    #[test]
    fn lln_random_gap_shrinks() {
        let law = PairLaw::Independent { y: Marginal::Uniform { lo: -0.2, hi: 0.2 }, beta: Marginal::Uniform { lo: 0.2, hi: 0.6 } };
        let mut c = ExperimentConfig::new(ExperimentKind::Lln, EnvironmentModel::new(ModelKind::Iid { law }), vec![20, 320], vec![0.5], vec![1]);
        c.num_envs = 200;
        let rep = run(&c).unwrap();
        assert!(rep.diagnostic("gap_trend:g=0.5:k=1").unwrap() < 0.0);
    }

    #[test]
    fn annealed_deterministic_env_variance_is_zero() {
        let mut c = ExperimentConfig::new(ExperimentKind::AnnealedSqrt, det_half(), vec![30], vec![0.5], vec![1, 2]);
        c.num_envs = 5;
        c.quenched_envs = 1;
        let rep = run(&c).unwrap();
        for r in rep.rows.iter().filter(|r| r.label == "env") {
            assert_eq!(r.value, 0.0);
            assert_eq!(r.prediction, Some(0.0));
        }
    }

    #[test]
    fn regime_mismatch_is_config_error() {
        let mut c = ExperimentConfig::new(ExperimentKind::AnnealedM, two_point(), vec![30], vec![0.5], vec![1]);
        c.num_envs = 5;
        assert!(matches!(run(&c), Err(Error::Config(_))));
        c.experiment = ExperimentKind::AnnealedSqrt;
        c.model = EnvironmentModel::new(ModelKind::Gue);
        assert!(matches!(run(&c), Err(Error::Config(_))));
    }

    #[test]
    fn annealed_sqrt_small_run_is_reasonable() {
        let mut c = ExperimentConfig::new(ExperimentKind::AnnealedSqrt, two_point(), vec![100], vec![0.5], vec![1]);
        c.num_envs = 2000;
        let rep = run(&c).unwrap();
        let env = rep.rows.iter().find(|r| r.label == "env").unwrap();
        // y ≡ 0: the environment part is exact at finite M.
        assert!(env.z_score.unwrap().abs() < 4.0, "{env:?}");
        assert!((env.prediction.unwrap() - 0.005).abs() < 1e-9);
    }

    #[test]
    fn quenched_refuses_two_levels_at_large_m() {
        let mut c = ExperimentConfig::new(ExperimentKind::Quenched, two_point(), vec![50], vec![], vec![1]);
        c.level_pairs = vec![(0.3, 0.6)];
        assert!(matches!(run(&c), Err(Error::Refused(_))));
    }

    #[test]
    fn quenched_small_m_uses_enumeration_and_k0_is_zero() {
        let mut c = ExperimentConfig::new(ExperimentKind::Quenched, two_point(), vec![5], vec![0.4], vec![0, 1]);
        c.level_pairs = vec![(0.2, 0.6)];
        c.realizations = 2;
        let rep = run(&c).unwrap();
        assert!(rep.rows.iter().filter(|r| r.k == 0 || r.l == 0).all(|r| r.value == 0.0));
        assert!(rep.rows.iter().filter(|r| r.k > 0 && r.l > 0).all(|r| r.provenance == Provenance::ExactEnum && r.std_error.is_none()));
    }

    #[test]
    fn gue_demo_tables() {
        let mut c = ExperimentConfig::new(ExperimentKind::GueDemo, EnvironmentModel::new(ModelKind::Gue), vec![60], vec![0.5], vec![1]);
        c.num_envs = 50;
        let rep = run(&c).unwrap();
        assert!(rep.rows.iter().any(|r| r.label == "epsilon" && r.gamma1 == 0.5 && r.value.abs() < 1e-12));
        assert_eq!(rep.diagnostic("epsilon_monotone"), Some(1.0));
        assert!(rep.diagnostic("max_f_residual").unwrap() < 1e-8);
        assert!(rep.rows.iter().any(|r| r.label == "gue-full-total-closed-form"));
    }

    #[test]
    fn selftest_passes() {
        let rep = run_selftest().unwrap();
        assert!(selftest_passed(&rep), "{:#?}", rep.rows);
    }

    #[test]
    fn config_validation_and_round_trip() {
        let mut c = ExperimentConfig::new(ExperimentKind::Lln, two_point(), vec![10], vec![0.05], vec![1]);
        assert!(matches!(c.validate(), Err(Error::Config(_))));
        c.gammas = vec![0.5];
        c.validate().unwrap();
        let t = toml::to_string(&c).unwrap();
        assert_eq!(ExperimentConfig::from_toml(&t).unwrap(), c);
        let j = serde_json::to_string(&c).unwrap();
        assert_eq!(ExperimentConfig::from_json(&j).unwrap(), c);
        assert!(ExperimentConfig::from_toml(&format!("{t}\nbogus = 1\n")).is_err());
        c.ks = vec![11];
        assert!(c.validate().is_err());
    }

    #[test]
    fn outputs_are_byte_identical() {
        let mut c = ExperimentConfig::new(ExperimentKind::Lln, two_point(), vec![20, 40], vec![0.5], vec![1, 2]);
        c.num_envs = 20;
        c.svg = true;
        let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
        let pa = write_outputs(&run(&c).unwrap(), &c, a.path()).unwrap();
        let pool = rayon::ThreadPoolBuilder::new().num_threads(2).build().unwrap();
        let pb = pool.install(|| write_outputs(&run(&c).unwrap(), &c, b.path())).unwrap();
        assert_eq!(pa.len(), 3);
        for (x, y) in pa.iter().zip(&pb) {
            assert_eq!(std::fs::read(x).unwrap(), std::fs::read(y).unwrap(), "{x:?}");
        }
        let csv = std::fs::read_to_string(&pa[0]).unwrap();
        assert!(csv.starts_with("label,M,gamma1,gamma2,k,l,value,std_error,provenance"));
        let json: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&pa[1]).unwrap()).unwrap();
        assert_eq!(json["config_hash"].as_str().unwrap(), c.hash());
    }

    #[test]
    fn standardized_moments_of_symmetric_sample() {
        let xs: Vec<f64> = (0..1000).map(|i| if i % 2 == 0 { 1.0 } else { -1.0 }).collect();
        let [(s3, _), (s4, _)] = standardized_moments(&xs);
        assert!(s3.abs() < 1e-12 && (s4 - 1.0).abs() < 1e-12);
    }
}
