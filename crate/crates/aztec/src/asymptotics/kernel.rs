//! Environment covariance kernels for two levels `γ₁ ≤ γ₂`.
//!
//! A kernel returns, for `z` attached to level `γ₂` and `w` to level `γ₁`,
//!
//! `Σ_{a,b ∈ {X,Y}} c_a(γ₁) c_b(γ₂) Σ_{i,j} K_ab[i][j] φ_a(w)^i φ_b(z)^j`,
//!
//! with `c_X(γ) = 1 − γ`, `c_Y(γ) = −γ`, `φ_X(u) = u`, `φ_Y(u) = 1/u` and
//! `K_ab[i][j]` the scaled covariance of `V^a_{i,N₁}` with `V^b_{j,N₂}`.

use nalgebra::DMatrix;
use num_complex::Complex64 as C;

use super::gue::GueCovariance;
use super::markov::{lag_sum_matrix, long_run_cov_c};
use crate::environment::{MarkovChain, PairLaw, SeriesData, SeriesRole, Stat};
use crate::error::{Error, Result};

pub trait EnvKernel: Sync {
    /// Kernel on the grid `zs × ws`, row-major in `zs`.
    fn eval_grid(&self, zs: &[C], ws: &[C]) -> Result<Vec<C>>;
    /// Radii `(lo, hi)` where the kernel is valid.
    fn band(&self) -> (f64, f64);

    fn eval(&self, z: C, w: C) -> Result<C> {
        Ok(self.eval_grid(&[z], &[w])?[0])
    }
}

/// Deterministic environments.
pub struct ZeroKernel;

impl EnvKernel for ZeroKernel {
    fn eval_grid(&self, zs: &[C], ws: &[C]) -> Result<Vec<C>> {
        Ok(vec![C::new(0.0, 0.0); zs.len() * ws.len()])
    }
    fn band(&self) -> (f64, f64) {
        (0.0, f64::INFINITY)
    }
}

/// Kernel assembled from four estimated covariance series.
#[derive(Clone, Debug)]
pub struct SeriesKernel {
    gammas: (f64, f64),
    /// `(X at γ₁, X at γ₂)`.
    g1: SeriesData,
    /// `(Y at γ₁, Y at γ₂)`.
    g2: SeriesData,
    /// `(X at γ₁, Y at γ₂)`.
    g3_xy: SeriesData,
    /// `(X at γ₂, Y at γ₁)`.
    g3_yx: SeriesData,
}

impl SeriesKernel {
    /// Picks the four series at `(γ₁, γ₂)` from `series` (regime `√M` roles
    /// `G1..G3`, or regime `M` roles `G1hat..G3hat` when `hat`).
    pub fn from_series(series: &[SeriesData], gammas: (f64, f64), hat: bool) -> Result<Self> {
        let (r1, r2, r3) = if hat {
            (SeriesRole::G1hat, SeriesRole::G2hat, SeriesRole::G3hat)
        } else {
            (SeriesRole::G1, SeriesRole::G2, SeriesRole::G3)
        };
        let find = |role: SeriesRole, g: (f64, f64)| -> Result<SeriesData> {
            series
                .iter()
                .find(|s| s.role == role && s.gammas == g)
                .cloned()
                .ok_or_else(|| Error::Config(format!("missing {role:?} series at γ = {g:?}")))
        };
        let (a, b) = gammas;
        Ok(Self { gammas, g1: find(r1, (a, b))?, g2: find(r2, (a, b))?, g3_xy: find(r3, (a, b))?, g3_yx: find(r3, (b, a))? })
    }

    /// Series requests needed by [`SeriesKernel::from_series`].
    pub fn requests(gammas: (f64, f64), hat: bool) -> Vec<crate::environment::SeriesRequest> {
        use crate::environment::SeriesRequest;
        let (r1, r2, r3) = if hat {
            (SeriesRole::G1hat, SeriesRole::G2hat, SeriesRole::G3hat)
        } else {
            (SeriesRole::G1, SeriesRole::G2, SeriesRole::G3)
        };
        let (a, b) = gammas;
        vec![
            SeriesRequest { role: r1, gammas: (a, b) },
            SeriesRequest { role: r2, gammas: (a, b) },
            SeriesRequest { role: r3, gammas: (a, b) },
            SeriesRequest { role: r3, gammas: (b, a) },
        ]
    }

    /// The same four series with level order reversed (transposed coefficients).
    pub fn swapped(&self) -> Self {
        let tr = |s: &SeriesData| -> SeriesData {
            let t = s.coefficients.len();
            let c = (0..t).map(|i| (0..t).map(|j| s.coefficients[j][i]).collect()).collect();
            SeriesData { coefficients: c, gammas: (s.gammas.1, s.gammas.0), ..s.clone() }
        };
        Self {
            gammas: (self.gammas.1, self.gammas.0),
            g1: tr(&self.g1),
            g2: tr(&self.g2),
            g3_xy: self.g3_yx.clone(),
            g3_yx: self.g3_xy.clone(),
        }
    }
}

impl EnvKernel for SeriesKernel {
    fn eval_grid(&self, zs: &[C], ws: &[C]) -> Result<Vec<C>> {
        let (g1, g2) = self.gammas;
        let inv = |v: &[C]| -> Vec<C> { v.iter().map(|x| 1.0 / x).collect() };
        let (izs, iws) = (inv(zs), inv(ws));
        // Each series is evaluated with its first index at its first level.
        let xx = self.g1.eval2_grid(ws, zs);
        let yy = self.g2.eval2_grid(&iws, &izs);
        let xy = self.g3_xy.eval2_grid(ws, &izs);
        let yx = self.g3_yx.eval2_grid(zs, &iws);
        let (n, m) = (zs.len(), ws.len());
        let mut out = Vec::with_capacity(n * m);
        for a in 0..n {
            for b in 0..m {
                let wz = b * n + a;
                out.push(
                    (1.0 - g1) * (1.0 - g2) * xx[wz] + g1 * g2 * yy[wz]
                        - (1.0 - g1) * g2 * xy[wz]
                        - g1 * (1.0 - g2) * yx[a * m + b],
                );
            }
        }
        Ok(out)
    }

    fn band(&self) -> (f64, f64) {
        [&self.g1, &self.g2, &self.g3_xy, &self.g3_yx]
            .iter()
            .map(|s| s.certified_band())
            .fold((0.0f64, f64::INFINITY), |(lo, hi), (a, b)| (lo.max(a), hi.min(b)))
    }
}

/// `Cov` of the generating functions `βu/(1 − βu)` (`X`) and `y/(u − y)` (`Y`).
pub(crate) fn gen_fn(s: Stat, y: f64, beta: f64, u: C) -> C {
    match s {
        Stat::X => beta * u / (1.0 - beta * u),
        Stat::Y => y / (u - y),
    }
}

/// Regime-`√M` kernel of i.i.d. pairs:
/// `(1−γ₂) Cov(X(z), X(w)) + γ₁ Cov(Y(z), Y(w)) + (γ₁−γ₂) Cov(Y(z), X(w))`.
#[derive(Clone, Debug)]
pub struct IidKernel {
    gammas: (f64, f64),
    atoms: Vec<(f64, f64, f64)>,
}

impl IidKernel {
    pub fn new(law: &PairLaw, gammas: (f64, f64)) -> Result<Self> {
        if !(gammas.0 <= gammas.1) {
            return Err(Error::Usage("kernel levels must satisfy γ₁ ≤ γ₂".into()));
        }
        Ok(Self { gammas, atoms: law.atoms().into_iter().map(|a| (a.y, a.beta, a.prob)).collect() })
    }

    fn cov(&self, sa: Stat, u: C, sb: Stat, v: C) -> C {
        let (mut ea, mut eb, mut eab) = (C::new(0.0, 0.0), C::new(0.0, 0.0), C::new(0.0, 0.0));
        for &(y, b, p) in &self.atoms {
            let (fa, fb) = (gen_fn(sa, y, b, u), gen_fn(sb, y, b, v));
            ea += p * fa;
            eb += p * fb;
            eab += p * fa * fb;
        }
        eab - ea * eb
    }

    /// The interaction term `(γ₁ − γ₂) Cov(Y(z), X(w))` alone.
    pub fn cross_term(&self, z: C, w: C) -> C {
        (self.gammas.0 - self.gammas.1) * self.cov(Stat::Y, z, Stat::X, w)
    }
}

impl EnvKernel for IidKernel {
    fn eval_grid(&self, zs: &[C], ws: &[C]) -> Result<Vec<C>> {
        let (g1, g2) = self.gammas;
        let mut out = Vec::with_capacity(zs.len() * ws.len());
        for &z in zs {
            for &w in ws {
                out.push(
                    (1.0 - g2) * self.cov(Stat::X, z, Stat::X, w) + g1 * self.cov(Stat::Y, z, Stat::Y, w) + self.cross_term(z, w),
                );
            }
        }
        Ok(out)
    }

    fn band(&self) -> (f64, f64) {
        let lo = self.atoms.iter().fold(0.0f64, |a, t| a.max(t.0.abs()));
        let hi = self.atoms.iter().fold(f64::INFINITY, |a, t| a.min(1.0 / t.1));
        (lo, hi)
    }
}

/// Regime-`√M` kernel of a stationary finite-state chain:
/// `(1−γ₂)Φ(z,w) + γ₁Ψ(z,w) + (γ₁−γ₂)Ξ(z,w)` with long-run covariances.
#[derive(Clone, Debug)]
pub struct MarkovKernel {
    gammas: (f64, f64),
    chain: MarkovChain,
    pi: Vec<f64>,
    lag_sum: DMatrix<f64>,
}

impl MarkovKernel {
    pub fn new(chain: &MarkovChain, gammas: (f64, f64), tail_tol: f64) -> Result<Self> {
        if !(gammas.0 <= gammas.1) {
            return Err(Error::Usage("kernel levels must satisfy γ₁ ≤ γ₂".into()));
        }
        chain.validate(0.0)?;
        Ok(Self { gammas, chain: chain.clone(), pi: chain.stationary()?, lag_sum: lag_sum_matrix(chain, tail_tol)? })
    }

    fn values(&self, s: Stat, u: C) -> Vec<C> {
        self.chain.states.iter().map(|&(y, b)| gen_fn(s, y, b, u)).collect()
    }
}

impl EnvKernel for MarkovKernel {
    fn eval_grid(&self, zs: &[C], ws: &[C]) -> Result<Vec<C>> {
        let (g1, g2) = self.gammas;
        let xw: Vec<Vec<C>> = ws.iter().map(|&w| self.values(Stat::X, w)).collect();
        let yw: Vec<Vec<C>> = ws.iter().map(|&w| self.values(Stat::Y, w)).collect();
        let mut out = Vec::with_capacity(zs.len() * ws.len());
        for &z in zs {
            let (xz, yz) = (self.values(Stat::X, z), self.values(Stat::Y, z));
            for b in 0..ws.len() {
                let phi = long_run_cov_c(&self.pi, &self.lag_sum, &xz, &xw[b]);
                let psi = long_run_cov_c(&self.pi, &self.lag_sum, &yz, &yw[b]);
                let xi = long_run_cov_c(&self.pi, &self.lag_sum, &yz, &xw[b]);
                out.push((1.0 - g2) * phi + g1 * psi + (g1 - g2) * xi);
            }
        }
        Ok(out)
    }

    fn band(&self) -> (f64, f64) {
        let lo = self.chain.states.iter().fold(0.0f64, |a, t| a.max(t.0.abs()));
        let hi = self.chain.states.iter().fold(f64::INFINITY, |a, t| a.min(1.0 / t.1));
        (lo, hi)
    }
}

/// Regime-`M` kernel of one squared-GUE level: `zw 𝐆(z, w)`.
#[derive(Clone, Debug)]
pub struct GueKernel {
    quad: GueCovariance,
}

impl GueKernel {
    /// `full` uses the whole spectrum (`ε = 2`); otherwise `ε_γ`.
    pub fn new(gamma: f64, full: bool, max_radius: f64) -> Result<Self> {
        let quad = if full { GueCovariance::with_eps(2.0, max_radius)? } else { GueCovariance::new(gamma, max_radius)? };
        Ok(Self { quad })
    }
}

impl EnvKernel for GueKernel {
    fn eval_grid(&self, zs: &[C], ws: &[C]) -> Result<Vec<C>> {
        let g = self.quad.eval_grid(zs, ws);
        let mut out = Vec::with_capacity(g.len());
        for (a, z) in zs.iter().enumerate() {
            for (b, w) in ws.iter().enumerate() {
                out.push(z * w * g[a * ws.len() + b]);
            }
        }
        Ok(out)
    }

    fn band(&self) -> (f64, f64) {
        (0.0, 1.2)
    }
}
