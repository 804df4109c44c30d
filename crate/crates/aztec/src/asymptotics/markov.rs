//! Long-run covariances of finite-state stationary chains.

use nalgebra::DMatrix;
use num_complex::Complex64 as C;

use crate::environment::MarkovChain;
use crate::error::{Error, Result};

/// Second-largest eigenvalue modulus of `P`.
pub fn second_eigenvalue_modulus(chain: &MarkovChain) -> f64 {
    let mut mods: Vec<f64> = chain.matrix().complex_eigenvalues().iter().map(|l| l.norm()).collect();
    mods.sort_by(|a, b| b.total_cmp(a));
    mods.get(1).copied().unwrap_or(0.0)
}

/// `S = Σ_{m≥1} (P^m − 1πᵀ)`, summed until the geometric tail bound
/// `‖(P − 1πᵀ)^m‖/(1 − |λ₂|)` drops below `tail_tol`, then checked against the
/// fundamental-matrix identity `S = (I − P + 1πᵀ)⁻¹ − I`.
pub fn lag_sum_matrix(chain: &MarkovChain, tail_tol: f64) -> Result<DMatrix<f64>> {
    let rho = second_eigenvalue_modulus(chain);
    if rho >= 1.0 - 1e-12 {
        return Err(Error::Domain(format!("chain is not ergodic: |λ₂| = {rho}")));
    }
    let pi = chain.stationary()?;
    let s = pi.len();
    let p = chain.matrix();
    let proj = DMatrix::from_fn(s, s, |_, j| pi[j]);
    let d = &p - &proj;
    let mut term = d.clone();
    let mut sum = DMatrix::zeros(s, s);
    let mut m = 0usize;
    loop {
        sum += &term;
        m += 1;
        let size = term.iter().fold(0.0f64, |a, v| a.max(v.abs()));
        if size * (s as f64) / (1.0 - rho) < tail_tol || size == 0.0 {
            break;
        }
        if m > 10_000_000 {
            return Err(Error::Numerical("lag series did not reach the tail tolerance".into()));
        }
        term = &term * &d;
    }
    let fundamental = (DMatrix::identity(s, s) - &p + &proj)
        .try_inverse()
        .ok_or_else(|| Error::Numerical("singular fundamental matrix".into()))?
        - DMatrix::identity(s, s);
    let gap = (&fundamental - &sum).iter().fold(0.0f64, |a, v| a.max(v.abs()));
    if gap > 1e-8_f64.max(100.0 * tail_tol) {
        return Err(Error::Numerical(format!("lag sum and fundamental matrix disagree by {gap:e}")));
    }
    Ok(sum)
}

/// `Cov_π(f, g) + Σ_{m≥1} [Cov(f(s₀), g(s_m)) + Cov(g(s₀), f(s_m))]` (bilinear).
pub fn long_run_cov_c(pi: &[f64], sum: &DMatrix<f64>, f: &[C], g: &[C]) -> C {
    let mean = |v: &[C]| -> C { v.iter().zip(pi).map(|(a, p)| a * p).sum() };
    let (mf, mg) = (mean(f), mean(g));
    let fc: Vec<C> = f.iter().map(|v| v - mf).collect();
    let gc: Vec<C> = g.iter().map(|v| v - mg).collect();
    let apply = |v: &[C]| -> Vec<C> {
        (0..pi.len()).map(|a| (0..pi.len()).map(|b| v[b] * sum[(a, b)]).sum()).collect()
    };
    let (sg, sf) = (apply(&gc), apply(&fc));
    (0..pi.len()).map(|a| pi[a] * (fc[a] * gc[a] + fc[a] * sg[a] + gc[a] * sf[a])).sum()
}

pub fn long_run_cov(pi: &[f64], sum: &DMatrix<f64>, f: &[f64], g: &[f64]) -> f64 {
    let fc: Vec<C> = f.iter().map(|v| C::new(*v, 0.0)).collect();
    let gc: Vec<C> = g.iter().map(|v| C::new(*v, 0.0)).collect();
    long_run_cov_c(pi, sum, &fc, &gc).re
}

#[cfg(test)]
mod tests {
    use super::*;

    fn chain(p: f64, q: f64) -> MarkovChain {
        MarkovChain { states: vec![(0.0, 0.3), (0.0, 0.7)], transition: vec![vec![1.0 - p, p], vec![q, 1.0 - q]] }
    }

    #[test]
    fn two_state_long_run_variance() {
        // Two-state chain: λ₂ = 1 − p − q and the long-run variance of the
        // indicator is π₀π₁(1 + λ₂)/(1 − λ₂).
        let c = chain(0.2, 0.4);
        let s = lag_sum_matrix(&c, 1e-15).unwrap();
        let pi = c.stationary().unwrap();
        let lam = 1.0 - 0.2 - 0.4;
        let ind = [1.0, 0.0];
        let want = pi[0] * pi[1] * (1.0 + lam) / (1.0 - lam);
        assert!((long_run_cov(&pi, &s, &ind, &ind) - want).abs() < 1e-13);
        assert!((second_eigenvalue_modulus(&c) - lam).abs() < 1e-12);
    }

    #[test]
    fn identical_rows_have_no_lag_terms() {
        let c = MarkovChain { states: vec![(0.0, 0.3), (0.1, 0.7), (0.0, 0.5)], transition: vec![vec![0.2, 0.5, 0.3]; 3] };
        let s = lag_sum_matrix(&c, 1e-15).unwrap();
        assert!(s.iter().all(|v| v.abs() < 1e-15));
    }

    #[test]
    fn periodic_chain_is_rejected() {
        let c = MarkovChain { states: vec![(0.0, 0.3), (0.0, 0.7)], transition: vec![vec![0.0, 1.0], vec![1.0, 0.0]] };
        assert!(matches!(lag_sum_matrix(&c, 1e-12), Err(Error::Domain(_))));
    }
}
