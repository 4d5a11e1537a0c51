//! Pooled least squares on the defactored, regime-expanded system.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::defactor::DefactoredPanel;
use crate::error::{Error, Result};
use crate::linalg::{ensure_well_posed, solve_spd, solve_spd_vec};
use crate::panel::BreakSet;

/// Smallest admissible eigenvalue of a Gram matrix scaled by the regressors' pre-projection variation.
pub const PD_TOLERANCE: f64 = 1e-10;

#[derive(Debug, Clone)]
pub struct FitResult {
    pub beta: DVector<f64>,
    /// `(δ_1', …, δ_{k+1}')'`.
    pub delta: DVector<f64>,
    /// `Δ_j = δ_{j+1} − δ_j`, stacked.
    pub increments: DVector<f64>,
    pub ssr: f64,
    /// `T × N`.
    pub residuals: DMatrix<f64>,
    /// Rows of `M_X̃ W̃`, one `T × (k+1)p_w` block per unit.
    pub checked_w: Vec<DMatrix<f64>>,
    /// `W̃' M_X̃ W̃` (unscaled).
    pub checked_gram: DMatrix<f64>,
    pub breaks: BreakSet,
    pub p_w: usize,
}

impl FitResult {
    pub fn n_units(&self) -> usize {
        self.residuals.ncols()
    }
    pub fn n_periods(&self) -> usize {
        self.residuals.nrows()
    }
    pub fn p_x(&self) -> usize {
        self.beta.len()
    }
    pub fn k(&self) -> usize {
        self.breaks.k()
    }
    /// `δ_j` for regime `j` (zero-based).
    pub fn regime_delta(&self, j: usize) -> DVector<f64> {
        self.delta.rows(j * self.p_w, self.p_w).into_owned()
    }
    /// `Δ_j` for break `j` (zero-based).
    pub fn increment(&self, j: usize) -> DVector<f64> {
        self.increments.rows(j * self.p_w, self.p_w).into_owned()
    }

    pub fn summary(&self, x_names: &[String], w_names: &[String]) -> FitSummary {
        FitSummary {
            breaks: self.breaks.dates().to_vec(),
            beta: x_names.iter().cloned().zip(self.beta.iter().cloned()).collect(),
            delta: (0..=self.k())
                .map(|j| w_names.iter().cloned().zip(self.regime_delta(j).iter().cloned()).collect())
                .collect(),
            increments: (0..self.k())
                .map(|j| w_names.iter().cloned().zip(self.increment(j).iter().cloned()).collect())
                .collect(),
            ssr: self.ssr,
        }
    }
}

/// Serializable view of a fit; coefficient vectors carry their regressor names.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitSummary {
    pub breaks: Vec<usize>,
    pub beta: Vec<(String, f64)>,
    /// One entry per regime.
    pub delta: Vec<Vec<(String, f64)>>,
    /// One entry per break.
    pub increments: Vec<Vec<(String, f64)>>,
    pub ssr: f64,
}

/// `δ̂ = (W̃'M_X̃W̃)⁻¹W̃'M_X̃Ỹ`, `β̂` from the remaining normal equations, `ε̂ = M_X̃(Ỹ − W̃δ̂)`.
pub fn fit(d: &DefactoredPanel) -> Result<FitResult> {
    let n = d.n_units();
    let t_len = d.n_periods();
    let p_x = d.p_x();
    let q_w = d.w[0].ncols();

    let dof = (n * t_len) as i64 - (n * d.diagnostic.rank) as i64 - (p_x + q_w) as i64;
    if dof < 1 {
        return Err(Error::Infeasible(format!(
            "no residual degrees of freedom (N = {n}, T = {t_len}, rank(Z̄) = {}, {} regressors)",
            d.diagnostic.rank,
            p_x + q_w
        )));
    }
    let mut sxx = DMatrix::zeros(p_x, p_x);
    let mut sxw = DMatrix::zeros(p_x, q_w);
    let mut sww = DMatrix::zeros(q_w, q_w);
    let mut sxy = DVector::zeros(p_x);
    let mut swy = DVector::zeros(q_w);
    for i in 0..n {
        let (xi, wi, yi) = (&d.x[i], &d.w[i], d.y.column(i));
        sxx += xi.tr_mul(xi);
        sxw += xi.tr_mul(wi);
        sww += wi.tr_mul(wi);
        sxy += xi.tr_mul(&yi);
        swy += wi.tr_mul(&yi);
    }

    let (b_w, b_y) = if p_x > 0 {
        ensure_well_posed(&sxx, &d.raw_scale_x, PD_TOLERANCE, "X̃'X̃")?;
        (
            solve_spd(&sxx, &sxw, "X̃'X̃")?,
            solve_spd_vec(&sxx, &sxy, "X̃'X̃")?,
        )
    } else {
        (DMatrix::zeros(0, q_w), DVector::zeros(0))
    };
    let checked_gram = &sww - sxw.transpose() * &b_w;
    ensure_well_posed(&checked_gram, &d.raw_scale_w, PD_TOLERANCE, "W̃'M_X̃W̃")?;
    let rhs = &swy - b_w.transpose() * &sxy;
    let delta = solve_spd_vec(&checked_gram, &rhs, "W̃'M_X̃W̃")?;
    let beta = &b_y - &b_w * &delta;

    let mut residuals = DMatrix::zeros(t_len, n);
    let mut checked_w = Vec::with_capacity(n);
    for i in 0..n {
        let (xi, wi) = (&d.x[i], &d.w[i]);
        let fitted = xi * &beta + wi * &delta;
        residuals.set_column(i, &(d.y.column(i) - fitted));
        checked_w.push(if p_x > 0 { wi - xi * &b_w } else { wi.clone() });
    }
    let ssr = residuals.iter().map(|e| e * e).sum();

    let p_w = d.p_w;
    let k = d.breaks.k();
    let increments = DVector::from_fn(k * p_w, |r, _| {
        let (j, c) = (r / p_w, r % p_w);
        delta[(j + 1) * p_w + c] - delta[j * p_w + c]
    });
    Ok(FitResult {
        beta,
        delta,
        increments,
        ssr,
        residuals,
        checked_w,
        checked_gram,
        breaks: d.breaks.clone(),
        p_w,
    })
}
