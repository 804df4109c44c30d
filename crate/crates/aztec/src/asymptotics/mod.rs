//! Limit formulas: limit-shape moments, annealed covariances in the `√M` and
//! `M` regimes, the quenched (GFF) covariance, Wick assembly, and the closed
//! forms of the i.i.d., Markov and GUE environments.
//!
//! Two-level formulas take the lower level `γ₁` (exponent `l`, inner variable
//! `w`) and the upper level `γ₂` (exponent `k`, outer variable `z`) and return
//! `M`-normalised limits of `E[ṗ_l^{(N₁)} ṗ_k^{(N₂)}]`: by `M^{k+l+1}` in the
//! `√M` regime and by `M^{k+l}` otherwise. One-level variants return
//! `N`-normalised values; [`n_normalised`] converts.

pub mod gue;
pub mod kernel;
pub mod markov;
pub mod shape;

use num_complex::Complex64 as C;
use serde::Serialize;

use crate::environment::{MarkovChain, PairAtom, PairLaw, SeriesData, SeriesRole};
use crate::error::{Error, Result};
use crate::finite_moments::MAX_ORDER;
use crate::numeric::{contour_integral, double_contour_integral, ContourValue};

pub use kernel::{EnvKernel, GueKernel, IidKernel, MarkovKernel, SeriesKernel, ZeroKernel};
pub use shape::{bracket_m, bracket_n, GueShape, LawShape, LevelShape, SeriesShape};

/// Absolute floor for the relative node-doubling test of the double integrals.
const SCALE: f64 = 1e-8;

/// Scaling regime of the environment fluctuations.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Regime {
    Sqrt,
    M,
}

/// `M`-normalised → `N`-normalised (`N = γM`) for a one-level covariance.
pub fn n_normalised(value: f64, gamma: f64, k: usize, l: usize, regime: Regime) -> f64 {
    let p = (k + l) as i32 + if regime == Regime::Sqrt { 1 } else { 0 };
    value / gamma.powi(p)
}

/// Machine-readable record of one formula evaluation.
#[derive(Clone, Debug, Serialize)]
pub struct FormulaRecord {
    pub formula: String,
    pub inputs: serde_json::Value,
    pub radii: Vec<f64>,
    pub nodes: usize,
    pub value: [f64; 2],
    pub residual: f64,
}

impl FormulaRecord {
    pub fn new(formula: &str, inputs: serde_json::Value, radii: &[f64], v: &ContourValue) -> Self {
        Self { formula: formula.into(), inputs, radii: radii.to_vec(), nodes: v.nodes, value: [v.value.re, v.value.im], residual: v.residual }
    }
}

fn zero() -> ContourValue {
    ContourValue { value: C::new(0.0, 0.0), nodes: 0, residual: 0.0 }
}

fn intersect(bands: &[(f64, f64)]) -> Result<(f64, f64)> {
    let (lo, hi) = bands.iter().fold((0.0f64, f64::INFINITY), |(a, b), (c, d)| (a.max(*c), b.min(*d)));
    if !(lo < hi) {
        return Err(Error::Config(format!("empty admissibility band ({lo}, {hi})")));
    }
    Ok((lo, hi))
}

/// Log-midpoint of `(max(lo, hi/4), hi)`.
pub fn default_radius(band: (f64, f64)) -> f64 {
    let (lo, hi) = band;
    let lo = lo.max(0.25 * hi);
    (lo * hi).sqrt()
}

/// Nested radii `(r_w, r_z)`: `(0.45, 0.9)·hi`, or the 20%/80% log-points
/// when the band bottom is too high; requires `r_z ≥ 1.1 r_w` (convergence
/// is geometric in the radius ratios, so thinner bands only cost nodes).
pub fn default_nested(band: (f64, f64)) -> Result<(f64, f64)> {
    let (lo, hi) = band;
    if lo < 0.45 * hi / 1.05 {
        return Ok((0.45 * hi, 0.9 * hi));
    }
    let (r_w, r_z) = (lo * (hi / lo).powf(0.2), lo * (hi / lo).powf(0.8));
    if r_z < 1.1 * r_w {
        return Err(Error::Config(format!("band ({lo}, {hi}) too thin for nested contours")));
    }
    Ok((r_w, r_z))
}

fn check_radius(r: f64, band: (f64, f64)) -> Result<()> {
    if !(r > band.0 && r < band.1) {
        return Err(Error::Config(format!("radius {r} outside admissible band ({}, {})", band.0, band.1)));
    }
    Ok(())
}

fn check_order(k: usize) -> Result<()> {
    if k > MAX_ORDER {
        return Err(Error::Usage(format!("moment order {k} above {MAX_ORDER}")));
    }
    Ok(())
}

fn check_levels(s1: &dyn LevelShape, s2: &dyn LevelShape) -> Result<()> {
    if s1.gamma() > s2.gamma() {
        return Err(Error::Usage(format!("levels must satisfy γ₁ ≤ γ₂, got {} > {}", s1.gamma(), s2.gamma())));
    }
    Ok(())
}

/// `𝔪_k = (2πi(k+1))⁻¹ ∮ B_γ(z)^{k+1}/(z − 1) dz` on `|z| = radius`.
pub fn limit_moment(shape: &dyn LevelShape, k: usize, radius: Option<f64>) -> Result<ContourValue> {
    check_order(k)?;
    let band = intersect(&[shape.band(), (0.0, 1.0)])?;
    let r = radius.unwrap_or_else(|| default_radius(band));
    check_radius(r, band)?;
    let kp = (k + 1) as u32;
    contour_integral(|z| Ok(bracket_n(shape, z)?.powu(kp) / ((z - 1.0) * kp as f64)), C::new(0.0, 0.0), r, SCALE)
}

/// `𝔪_k` for independent i.i.d. `y` and `β`, in expectation form:
/// `B(z) = (1/γ − 1) E[(β − βz)/(1 − βz)] + E[(z − 1)/(z − y)]`.
pub fn limit_moment_iid(law: &PairLaw, gamma: f64, k: usize, radius: Option<f64>) -> Result<ContourValue> {
    check_order(k)?;
    let atoms = law.atoms();
    let lo = law.y_abs_max();
    let hi = (1.0 / law.beta_hull().1).min(1.0);
    let r = radius.unwrap_or_else(|| default_radius((lo, hi)));
    check_radius(r, (lo, hi))?;
    let kp = (k + 1) as u32;
    contour_integral(
        |z| {
            let mut b = C::new(0.0, 0.0);
            for a in &atoms {
                b += a.prob * ((1.0 / gamma - 1.0) * (a.beta - a.beta * z) / (1.0 - a.beta * z) + (z - 1.0) / (z - a.y));
            }
            Ok(b.powu(kp) / ((z - 1.0) * kp as f64))
        },
        C::new(0.0, 0.0),
        r,
        SCALE,
    )
}

/// `ΣΣ A₂(z)^k A₁(w)^l F(z, w)` over the grid (the `1/(zw)` of the measure
/// cancels against the `zw` of the trapezoid weights).
fn shaped_sum(
    s1: &dyn LevelShape,
    s2: &dyn LevelShape,
    k: usize,
    l: usize,
    zs: &[C],
    ws: &[C],
    factor: &[C],
) -> Result<C> {
    let az: Vec<C> = zs.iter().map(|&z| bracket_m(s2, z).map(|a| a.powu(k as u32))).collect::<Result<_>>()?;
    let aw: Vec<C> = ws.iter().map(|&w| bracket_m(s1, w).map(|a| a.powu(l as u32))).collect::<Result<_>>()?;
    let mut acc = C::new(0.0, 0.0);
    for (a, za) in az.iter().enumerate() {
        for (b, wb) in aw.iter().enumerate() {
            acc += za * wb * factor[a * ws.len() + b];
        }
    }
    Ok(acc)
}

/// Regime `√M`, two levels:
/// `(2πi)⁻² ∮∮ (zw)⁻¹ A_{γ₂}(z)^k A_{γ₁}(w)^l K(z, w) dz dw`.
///
/// The integrand has no `z = w` singularity, so `radii = (r_w, r_z)` may coincide.
pub fn annealed_cov_sqrt(
    s1: &dyn LevelShape,
    s2: &dyn LevelShape,
    kernel: &dyn EnvKernel,
    k: usize,
    l: usize,
    radii: Option<(f64, f64)>,
) -> Result<ContourValue> {
    check_order(k)?;
    check_order(l)?;
    if k == 0 || l == 0 {
        return Ok(zero());
    }
    let band = intersect(&[s1.band(), s2.band(), kernel.band()])?;
    let (r_w, r_z) = radii.unwrap_or_else(|| {
        let r = default_radius(band);
        (r, r)
    });
    check_radius(r_w, band)?;
    check_radius(r_z, band)?;
    double_contour_integral(|zs, ws| shaped_sum(s1, s2, k, l, zs, ws, &kernel.eval_grid(zs, ws)?), r_z, r_w, SCALE)
}

/// One-level coefficient families in the normalisation of the one-level
/// theorems (`(M−N)`, `N`, `√((M−N)N)` for regime `√M`; their squares and
/// `N(M−N)` for regime `M`), rebuilt from `M`-scaled series at `(γ, γ)`.
#[derive(Clone, Debug)]
pub struct OneLevelSeries {
    pub gamma: f64,
    pub regime: Regime,
    q: SeriesData,
    p: SeriesData,
    s: SeriesData,
}

impl OneLevelSeries {
    pub fn new(series: &[SeriesData], gamma: f64, regime: Regime) -> Result<Self> {
        let (r1, r2, r3, pow) = match regime {
            Regime::Sqrt => (SeriesRole::G1, SeriesRole::G2, SeriesRole::G3, 1),
            Regime::M => (SeriesRole::G1hat, SeriesRole::G2hat, SeriesRole::G3hat, 2),
        };
        let find = |role: SeriesRole, f: f64| -> Result<SeriesData> {
            let s = series
                .iter()
                .find(|s| s.role == role && s.gammas == (gamma, gamma))
                .ok_or_else(|| Error::Config(format!("missing {role:?} series at γ = {gamma}")))?;
            let mut s = s.clone();
            s.coefficients.iter_mut().flatten().for_each(|c| *c *= f);
            Ok(s)
        };
        let half = pow as f64 / 2.0;
        Ok(Self {
            gamma,
            regime,
            q: find(r1, (1.0 - gamma).powi(pow))?,
            p: find(r2, gamma.powi(pow))?,
            s: find(r3, (gamma * (1.0 - gamma)).powf(half))?,
        })
    }

    fn band(&self) -> (f64, f64) {
        [&self.q, &self.p, &self.s]
            .iter()
            .map(|s| s.certified_band())
            .fold((0.0f64, f64::INFINITY), |(lo, hi), (a, b)| (lo.max(a), hi.min(b)))
    }
}

/// One-level regime `√M` covariance, `N`-normalised (`N^{k₁+k₂+1}`):
/// `(2πi)⁻² ∮∮ (zw)⁻¹ B(z)^{k₁} B(w)^{k₂} [G₂(1/z,1/w) − √(1/γ−1)(G₃(w,1/z) + G₃(z,1/w)) + (1/γ−1)G₁(z,w)]`.
pub fn annealed_cov_sqrt_one_level(
    shape: &dyn LevelShape,
    g: &OneLevelSeries,
    k1: usize,
    k2: usize,
    radii: Option<(f64, f64)>,
) -> Result<ContourValue> {
    if g.regime != Regime::Sqrt {
        return Err(Error::Usage("regime-√M formula needs √M series".into()));
    }
    one_level(shape, g, k1, k2, radii, false)
}

/// One-level regime `M` covariance, `N`-normalised (`N^{k₁+k₂}`):
/// `(2πi)⁻² ∮∮ (zw)⁻¹ B(z)^{k₁} B(w)^{k₂} [Ĝ₂(1/z,1/w) − Ĝ₃(w,1/z) − Ĝ₃(z,1/w) + Ĝ₁(z,w) + zw/(z−w)²]`.
pub fn annealed_cov_m_one_level(
    shape: &dyn LevelShape,
    g: &OneLevelSeries,
    k1: usize,
    k2: usize,
    radii: Option<(f64, f64)>,
) -> Result<ContourValue> {
    if g.regime != Regime::M {
        return Err(Error::Usage("regime-M formula needs hatted series".into()));
    }
    one_level(shape, g, k1, k2, radii, true)
}

fn one_level(
    shape: &dyn LevelShape,
    g: &OneLevelSeries,
    k1: usize,
    k2: usize,
    radii: Option<(f64, f64)>,
    gff: bool,
) -> Result<ContourValue> {
    check_order(k1)?;
    check_order(k2)?;
    if (shape.gamma() - g.gamma).abs() > 1e-15 {
        return Err(Error::Usage("shape and series levels differ".into()));
    }
    if k1 == 0 || k2 == 0 {
        return Ok(zero());
    }
    let band = intersect(&[shape.band(), g.band()])?;
    let (r_w, r_z) = match radii {
        Some(r) => r,
        None => default_nested(band)?,
    };
    check_radius(r_w, band)?;
    check_radius(r_z, band)?;
    if gff && r_z <= r_w {
        return Err(Error::Contour(format!("need r_z > r_w, got ({r_w}, {r_z})")));
    }
    let t = if gff { 1.0 } else { (1.0 / g.gamma - 1.0).sqrt() };
    let t2 = if gff { 1.0 } else { 1.0 / g.gamma - 1.0 };
    double_contour_integral(
        |zs, ws| {
            let bz: Vec<C> = zs.iter().map(|&z| bracket_n(shape, z).map(|b| b.powu(k1 as u32))).collect::<Result<_>>()?;
            let bw: Vec<C> = ws.iter().map(|&w| bracket_n(shape, w).map(|b| b.powu(k2 as u32))).collect::<Result<_>>()?;
            let izs: Vec<C> = zs.iter().map(|z| 1.0 / z).collect();
            let iws: Vec<C> = ws.iter().map(|w| 1.0 / w).collect();
            let g1 = g.q.eval2_grid(zs, ws);
            let g2 = g.p.eval2_grid(&izs, &iws);
            let g3a = g.s.eval2_grid(ws, &izs);
            let g3b = g.s.eval2_grid(zs, &iws);
            let (n, m) = (zs.len(), ws.len());
            let mut acc = C::new(0.0, 0.0);
            for a in 0..n {
                for b in 0..m {
                    let mut br = g2[a * m + b] - t * (g3a[b * n + a] + g3b[a * m + b]) + t2 * g1[a * m + b];
                    if gff {
                        let d = zs[a] - ws[b];
                        br += zs[a] * ws[b] / (d * d);
                    }
                    acc += bz[a] * bw[b] * br;
                }
            }
            Ok(acc)
        },
        r_z,
        r_w,
        SCALE,
    )
}

/// Regime-`M` covariance split into its Gaussian-free-field and environment parts.
#[derive(Clone, Copy, Debug)]
pub struct AnnealedM {
    pub total: ContourValue,
    pub gff: ContourValue,
    pub env: ContourValue,
}

/// Regime `M`, two levels:
/// `(2πi)⁻² ∮_{|w|=r_w} ∮_{|z|=r_z} (zw)⁻¹ A_{γ₂}(z)^k A_{γ₁}(w)^l (K(z,w) + zw/(z−w)²) dz dw`.
pub fn annealed_cov_m(
    s1: &dyn LevelShape,
    s2: &dyn LevelShape,
    kernel: &dyn EnvKernel,
    k: usize,
    l: usize,
    radii: Option<(f64, f64)>,
) -> Result<AnnealedM> {
    check_order(k)?;
    check_order(l)?;
    check_levels(s1, s2)?;
    if k == 0 || l == 0 {
        return Ok(AnnealedM { total: zero(), gff: zero(), env: zero() });
    }
    let band = intersect(&[s1.band(), s2.band(), kernel.band()])?;
    let (r_w, r_z) = match radii {
        Some(r) => r,
        None => default_nested(band)?,
    };
    if r_z <= r_w {
        return Err(Error::Contour(format!("contours collide: need r_z > r_w, got ({r_w}, {r_z})")));
    }
    check_radius(r_w, band)?;
    check_radius(r_z, band)?;
    let gff_factor = |zs: &[C], ws: &[C]| -> Vec<C> {
        let mut f = Vec::with_capacity(zs.len() * ws.len());
        for z in zs {
            for w in ws {
                let d = z - w;
                f.push(z * w / (d * d));
            }
        }
        f
    };
    let total = double_contour_integral(
        |zs, ws| {
            let mut f = kernel.eval_grid(zs, ws)?;
            for (a, g) in f.iter_mut().zip(gff_factor(zs, ws)) {
                *a += g;
            }
            shaped_sum(s1, s2, k, l, zs, ws, &f)
        },
        r_z,
        r_w,
        SCALE,
    )?;
    let gff = double_contour_integral(|zs, ws| shaped_sum(s1, s2, k, l, zs, ws, &gff_factor(zs, ws)), r_z, r_w, SCALE)?;
    let env = double_contour_integral(|zs, ws| shaped_sum(s1, s2, k, l, zs, ws, &kernel.eval_grid(zs, ws)?), r_z, r_w, SCALE)?;
    Ok(AnnealedM { total, gff, env })
}

/// Quenched covariance
/// `(2πi)⁻² ∮_{|w|=r_w} ∮_{|z|=r_z} A_{γ₂}(z)^k A_{γ₁}(w)^l/(z − w)² dz dw`,
/// normalised by `M^{k+l}`.
pub fn quenched_cov(
    s1: &dyn LevelShape,
    s2: &dyn LevelShape,
    k: usize,
    l: usize,
    radii: Option<(f64, f64)>,
) -> Result<ContourValue> {
    check_order(k)?;
    check_order(l)?;
    check_levels(s1, s2)?;
    if k == 0 || l == 0 {
        return Ok(zero());
    }
    let band = intersect(&[s1.band(), s2.band()])?;
    let (r_w, r_z) = match radii {
        Some(r) => r,
        None => default_nested(band)?,
    };
    if r_z <= r_w {
        return Err(Error::Contour(format!("contours collide: need r_z > r_w, got ({r_w}, {r_z})")));
    }
    check_radius(r_w, band)?;
    check_radius(r_z, band)?;
    double_contour_integral(
        |zs, ws| {
            let mut acc = C::new(0.0, 0.0);
            let aw: Vec<C> = ws.iter().map(|&w| Ok(bracket_m(s1, w)?.powu(l as u32) * w)).collect::<Result<_>>()?;
            for &z in zs {
                let az = bracket_m(s2, z)?.powu(k as u32) * z;
                for (w, b) in ws.iter().zip(&aw) {
                    let d = z - w;
                    acc += az * b / (d * d);
                }
            }
            Ok(acc)
        },
        r_z,
        r_w,
        SCALE,
    )
}

/// Largest supported Wick order.
pub const MAX_WICK: usize = 8;

/// `E[Π ξ_{k_i}]` for a centred Gaussian vector with covariance `cov`: zero for
/// odd `ν`, the sum over perfect pairings otherwise.
pub fn wick_moment<F: Fn(usize, usize) -> f64>(cov: F, ks: &[usize]) -> Result<f64> {
    if ks.len() > MAX_WICK {
        return Err(Error::Usage(format!("Wick order {} above {MAX_WICK}", ks.len())));
    }
    fn rec<F: Fn(usize, usize) -> f64>(cov: &F, rest: &[usize]) -> f64 {
        if rest.is_empty() {
            return 1.0;
        }
        let (first, tail) = (rest[0], &rest[1..]);
        (0..tail.len())
            .map(|j| {
                let others: Vec<usize> = tail.iter().enumerate().filter(|(i, _)| *i != j).map(|(_, v)| *v).collect();
                cov(first, tail[j]) * rec(cov, &others)
            })
            .sum()
    }
    if ks.len() % 2 == 1 {
        return Ok(0.0);
    }
    Ok(rec(&cov, ks))
}

/// Regime-`√M` two-level covariance of i.i.d. pairs, from the law directly.
pub fn iid_cov_closed_form(law: &PairLaw, gamma1: f64, gamma2: f64, k: usize, l: usize) -> Result<ContourValue> {
    let (s1, s2) = (LawShape::new(law, gamma1)?, LawShape::new(law, gamma2)?);
    let kernel = IidKernel::new(law, (gamma1, gamma2))?;
    annealed_cov_sqrt(&s1, &s2, &kernel, k, l, None)
}

/// Stationary law of a chain as a joint law of pairs.
pub fn stationary_law(chain: &MarkovChain) -> Result<PairLaw> {
    let pi = chain.stationary()?;
    Ok(PairLaw::Joint {
        atoms: chain.states.iter().zip(&pi).map(|(&(y, beta), &prob)| PairAtom { y, beta, prob }).collect(),
    })
}

/// Regime-`√M` two-level covariance of a stationary chain (long-run kernels
/// summed to `tail_tol`).
pub fn markov_cov_closed_form(
    chain: &MarkovChain,
    gamma1: f64,
    gamma2: f64,
    k: usize,
    l: usize,
    tail_tol: f64,
) -> Result<ContourValue> {
    let law = stationary_law(chain)?;
    let (s1, s2) = (LawShape::new(&law, gamma1)?, LawShape::new(&law, gamma2)?);
    let kernel = MarkovKernel::new(chain, (gamma1, gamma2), tail_tol)?;
    annealed_cov_sqrt(&s1, &s2, &kernel, k, l, None)
}
