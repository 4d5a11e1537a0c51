//! Bartlett-kernel long-run covariance of the defactored moment `ε̂_it w̌_it`.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimator::FitResult;
use crate::linalg::{inverse_spd, min_eigenvalue, symmetrize};

/// Relative tolerance for the PSD assertion on `Φ̂` (scaled by its largest diagonal entry).
const PSD_TOLERANCE: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct HacSpec {
    pub bandwidth: usize,
}

impl HacSpec {
    pub fn new(bandwidth: usize) -> Self {
        Self { bandwidth }
    }

    /// `⌊4(T/100)^{2/9}⌋`.
    pub fn default_for(n_periods: usize) -> Self {
        Self::new((4.0 * (n_periods as f64 / 100.0).powf(2.0 / 9.0)).floor() as usize)
    }

    pub fn resolve(bandwidth: Option<usize>, n_periods: usize) -> Self {
        bandwidth.map(Self::new).unwrap_or_else(|| Self::default_for(n_periods))
    }

    /// Bartlett weight `1 − l/(L+1)`.
    pub fn weight(&self, lag: usize) -> f64 {
        1.0 - lag as f64 / (self.bandwidth + 1) as f64
    }
}

#[derive(Debug, Clone)]
pub struct CovarianceEstimate {
    pub bandwidth: usize,
    /// `(NT)⁻¹ W̃'M_X̃W̃`.
    pub omega: DMatrix<f64>,
    pub phi: DMatrix<f64>,
    /// `Ω̂⁻¹Φ̂Ω̂⁻¹`.
    pub v: DMatrix<f64>,
    /// `p_w × p_w` moment matrices of each estimated regime.
    pub regime_omega: Vec<DMatrix<f64>>,
    pub regime_phi: Vec<DMatrix<f64>>,
}

/// `Σ_i Σ_{t=l}^{T−1} a_it b'_{i,t−l}` restricted to `rows`.
fn lagged_cross(h: &[DMatrix<f64>], lag: usize, rows: std::ops::Range<usize>) -> DMatrix<f64> {
    let q = h[0].ncols();
    let mut out = DMatrix::zeros(q, q);
    let len = rows.len();
    if lag >= len {
        return out;
    }
    for hi in h {
        let lead = hi.rows(rows.start + lag, len - lag);
        let back = hi.rows(rows.start, len - lag);
        out += lead.tr_mul(&back);
    }
    out
}

fn bartlett(h: &[DMatrix<f64>], spec: &HacSpec, rows: std::ops::Range<usize>) -> DMatrix<f64> {
    let mut phi = lagged_cross(h, 0, rows.clone());
    let max_lag = spec.bandwidth.min(rows.len().saturating_sub(1));
    for lag in 1..=max_lag {
        let l = lagged_cross(h, lag, rows.clone());
        phi += (l.clone() + l.transpose()) * spec.weight(lag);
    }
    symmetrize(&phi)
}

fn check_psd(phi: &DMatrix<f64>) -> Result<()> {
    let scale = phi.diagonal().iter().cloned().fold(0.0, f64::max);
    let min = min_eigenvalue(phi);
    if min < -PSD_TOLERANCE * scale.max(f64::MIN_POSITIVE) {
        return Err(Error::NotPsd(min));
    }
    Ok(())
}

pub fn hac_covariance(fit: &FitResult, spec: &HacSpec) -> Result<CovarianceEstimate> {
    let n = fit.n_units();
    let t_len = fit.n_periods();
    if spec.bandwidth >= t_len {
        return Err(Error::InvalidArgument(format!(
            "bandwidth {} must be smaller than T = {t_len}",
            spec.bandwidth
        )));
    }
    let p_w = fit.p_w;
    let nt = (n * t_len) as f64;
    let h: Vec<DMatrix<f64>> = (0..n)
        .map(|i| {
            let mut hi = fit.checked_w[i].clone();
            for (t, mut row) in hi.row_iter_mut().enumerate() {
                row *= fit.residuals[(t, i)];
            }
            hi
        })
        .collect();
    let omega = symmetrize(&(&fit.checked_gram / nt));
    let phi = bartlett(&h, spec, 0..t_len) / nt;
    check_psd(&phi)?;
    let omega_inv = inverse_spd(&omega, "Ω̂ (the breaking regressors lack variation in some regime)")?;
    let v = symmetrize(&(&omega_inv * &phi * &omega_inv));

    // Per regime: the regime blocks of each w̌ row summed into one p_w vector.
    let collapse = |m: &DMatrix<f64>| -> DMatrix<f64> {
        DMatrix::from_fn(m.nrows(), p_w, |t, c| {
            (0..m.ncols() / p_w).map(|j| m[(t, j * p_w + c)]).sum()
        })
    };
    let wc: Vec<DMatrix<f64>> = fit.checked_w.iter().map(collapse).collect();
    let hc: Vec<DMatrix<f64>> = h.iter().map(collapse).collect();
    let mut regime_omega = Vec::new();
    let mut regime_phi = Vec::new();
    for r in fit.breaks.regimes() {
        let scale = (n * r.len()) as f64;
        regime_omega.push(symmetrize(&(lagged_cross(&wc, 0, r.clone()) / scale)));
        let pj = bartlett(&hc, spec, r) / scale;
        check_psd(&pj)?;
        regime_phi.push(pj);
    }
    Ok(CovarianceEstimate {
        bandwidth: spec.bandwidth,
        omega,
        phi,
        v,
        regime_omega,
        regime_phi,
    })
}
