//! Limit-shape inputs `F₁`, `F₂` at one level.

use num_complex::Complex64 as C;

use super::gue::{gue_f, gue_full_shape};
use crate::environment::{PairLaw, SeriesData, SeriesRole};
use crate::error::{Error, Result};

/// The pair `(F₁, F₂)` at level `γ`: `F₁(u) = Σ 𝔠_i u^i` from the `y` below
/// the level, `F₂(z) = Σ 𝔤_i z^i` from the `β` above it.
pub trait LevelShape: Sync {
    fn gamma(&self) -> f64;
    /// `F₂(z) − 1`.
    fn f2_minus_one(&self, z: C) -> Result<C>;
    fn f1(&self, u: C) -> Result<C>;
    /// Radii `(lo, hi)` where `F₁(1/z)` and `F₂(z)` are both valid; `hi ≤ 1`.
    fn band(&self) -> (f64, f64);
}

/// `A_γ(z) = (1−γ)((1−z)/z)(F₂(z) − 1) + γ((z−1)/z)F₁(1/z)`, the `M`-normalised bracket.
pub fn bracket_m(s: &dyn LevelShape, z: C) -> Result<C> {
    let g = s.gamma();
    Ok((1.0 - g) * (1.0 - z) / z * s.f2_minus_one(z)? + g * (z - 1.0) / z * s.f1(1.0 / z)?)
}

/// `B_γ = A_γ/γ`, the `N`-normalised bracket
/// `(1/γ − 1)((1−z)/z)(F₂(z) − 1) + ((z−1)/z)F₁(1/z)`.
pub fn bracket_n(s: &dyn LevelShape, z: C) -> Result<C> {
    let g = s.gamma();
    Ok((1.0 / g - 1.0) * (1.0 - z) / z * s.f2_minus_one(z)? + (z - 1.0) / z * s.f1(1.0 / z)?)
}

/// Shape from estimated (or reference) coefficient series.
#[derive(Clone, Debug)]
pub struct SeriesShape {
    gamma: f64,
    f1: SeriesData,
    f2: SeriesData,
}

impl SeriesShape {
    pub fn new(gamma: f64, f1: SeriesData, f2: SeriesData) -> Result<Self> {
        if f1.role != SeriesRole::F1 || f2.role != SeriesRole::F2 {
            return Err(Error::Config("series shape needs an F1 and an F2 series".into()));
        }
        check_gamma(gamma)?;
        Ok(Self { gamma, f1, f2 })
    }

    /// Replaces the estimated coefficients by the attached reference values.
    pub fn from_reference(gamma: f64, f1: &SeriesData, f2: &SeriesData) -> Result<Self> {
        Self::new(gamma, f1.with_reference()?, f2.with_reference()?)
    }
}

fn check_gamma(gamma: f64) -> Result<()> {
    if !(gamma > 0.0 && gamma <= 1.0) {
        return Err(Error::Config(format!("γ = {gamma} outside (0, 1]")));
    }
    Ok(())
}

impl LevelShape for SeriesShape {
    fn gamma(&self) -> f64 {
        self.gamma
    }
    fn f2_minus_one(&self, z: C) -> Result<C> {
        Ok(self.f2.eval1(z) - self.f2.coefficients[0][0])
    }
    fn f1(&self, u: C) -> Result<C> {
        Ok(self.f1.eval1(u))
    }
    fn band(&self) -> (f64, f64) {
        let lo = self.f1.certified_band().0;
        let hi = self.f2.certified_band().1.min(1.0);
        (lo, hi)
    }
}

/// Exact shape of i.i.d. (or stationary) pairs: `F₂ = E[1/(1−βz)]`, `F₁ = E[1/(1−yu)]`.
#[derive(Clone, Debug)]
pub struct LawShape {
    gamma: f64,
    atoms: Vec<(f64, f64, f64)>,
}

impl LawShape {
    pub fn new(law: &PairLaw, gamma: f64) -> Result<Self> {
        check_gamma(gamma)?;
        Ok(Self { gamma, atoms: law.atoms().into_iter().map(|a| (a.y, a.beta, a.prob)).collect() })
    }
}

impl LevelShape for LawShape {
    fn gamma(&self) -> f64 {
        self.gamma
    }
    fn f2_minus_one(&self, z: C) -> Result<C> {
        Ok(self.atoms.iter().map(|&(_, b, p)| p * b * z / (1.0 - b * z)).sum())
    }
    fn f1(&self, u: C) -> Result<C> {
        Ok(self.atoms.iter().map(|&(y, _, p)| p / (1.0 - y * u)).sum())
    }
    fn band(&self) -> (f64, f64) {
        let lo = self.atoms.iter().fold(0.0f64, |a, t| a.max(t.0.abs()));
        let hi = self.atoms.iter().fold(1.0f64, |a, t| a.min(1.0 / t.1));
        (lo, hi)
    }
}

/// Squared-GUE shape: `y ≡ 0`; above the level, `β` from the lowest part of the
/// spectrum (`full = false`, `F₂ − 1 = z𝐅(z)/(1 − γ)`) or from a full
/// independent spectrum (`full = true`, `F₂ − 1 = zX(z)`).
#[derive(Clone, Copy, Debug)]
pub struct GueShape {
    pub gamma: f64,
    pub full: bool,
}

impl LevelShape for GueShape {
    fn gamma(&self) -> f64 {
        self.gamma
    }
    fn f2_minus_one(&self, z: C) -> Result<C> {
        if self.full {
            Ok(z * gue_full_shape(z))
        } else {
            Ok(z * gue_f(z, self.gamma)? / (1.0 - self.gamma))
        }
    }
    fn f1(&self, _u: C) -> Result<C> {
        Ok(C::new(1.0, 0.0))
    }
    fn band(&self) -> (f64, f64) {
        (0.0, 1.0)
    }
}
