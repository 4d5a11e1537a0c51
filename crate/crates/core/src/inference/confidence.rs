//! Confidence intervals for break dates from the argmax law of `V_j(s)`.

use serde::{Deserialize, Serialize};

use super::argmax::ArgmaxLaw;
use super::hac::CovarianceEstimate;
use crate::error::{Error, Result};
use crate::estimator::FitResult;

/// `Δ'Ω_jΔ` below this fraction of `‖Δ‖²·tr(Ω_j)` counts as no break.
const WEAK_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BreakInterval {
    /// 1-based break index.
    pub index: usize,
    pub date: usize,
    pub xi: f64,
    pub phi1: f64,
    pub phi2: f64,
    /// `(1 − α/2)` quantile of the argmax.
    pub c_alpha: f64,
    /// `Δ'Φ_jΔ / (N (Δ'Ω_jΔ)²)`.
    pub scale: f64,
    pub lo: usize,
    pub hi: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BreakConfidence {
    pub level: f64,
    pub intervals: Vec<BreakInterval>,
}

fn quad(d: &nalgebra::DVector<f64>, m: &nalgebra::DMatrix<f64>) -> f64 {
    (d.transpose() * m * d)[(0, 0)]
}

pub fn break_confidence(fit: &FitResult, cov: &CovarianceEstimate, level: f64) -> Result<BreakConfidence> {
    if !(level > 0.0 && level < 1.0) {
        return Err(Error::InvalidArgument(format!("confidence level must lie in (0, 1), got {level}")));
    }
    let k = fit.k();
    if k == 0 {
        return Err(Error::InvalidArgument("confidence intervals need at least one break".into()));
    }
    let alpha = 1.0 - level;
    let n = fit.n_units() as f64;
    let t_len = fit.n_periods();
    let mut intervals = Vec::with_capacity(k);
    for j in 0..k {
        let delta = fit.increment(j);
        let (om_j, om_j1) = (&cov.regime_omega[j], &cov.regime_omega[j + 1]);
        let (ph_j, ph_j1) = (&cov.regime_phi[j], &cov.regime_phi[j + 1]);
        let d_om = quad(&delta, om_j);
        let d_om1 = quad(&delta, om_j1);
        let floor = WEAK_TOLERANCE * delta.norm_squared() * om_j.trace().max(om_j1.trace());
        if !(d_om > floor && d_om1 > floor) || delta.norm_squared() == 0.0 {
            return Err(Error::WeakBreak { index: j + 1, value: d_om });
        }
        let d_ph = quad(&delta, ph_j);
        let xi = d_om1 / d_om;
        let phi1 = d_ph / d_om;
        let phi2 = quad(&delta, ph_j1) / d_om1;
        let law = ArgmaxLaw::new(xi, phi1, phi2).map_err(|_| Error::WeakBreak { index: j + 1, value: d_ph })?;
        let c_alpha = law.quantile(1.0 - alpha / 2.0)?;
        let scale = d_ph / (n * d_om * d_om);
        let half = (c_alpha * scale).floor().max(0.0);
        let date = fit.breaks.dates()[j];
        let half = if half > t_len as f64 { t_len } else { half as usize };
        intervals.push(BreakInterval {
            index: j + 1,
            date,
            xi,
            phi1,
            phi2,
            c_alpha,
            scale,
            lo: date.saturating_sub(half + 1).max(1),
            hi: (date + half + 1).min(t_len),
        });
    }
    Ok(BreakConfidence { level, intervals })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::inference::hac::{hac_covariance, HacSpec};
    use crate::panel::{BreakSet, PanelDataset, PanelParts};
    use crate::search::{full_fit, SearchOptions};
    use nalgebra::DMatrix;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn fitted(n: usize, shift: f64, seed: u64) -> FitResult {
        let t_len = 20;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut draw = |r, c| DMatrix::from_fn(r, c, |_, _| rng.random::<f64>() - 0.5);
        let w: Vec<_> = (0..n).map(|_| draw(t_len, 1)).collect();
        let e = draw(t_len, n);
        let y = DMatrix::from_fn(t_len, n, |t, i| {
            let d = if t < 10 { 1.0 } else { 1.0 + shift };
            d * w[i][(t, 0)] + 0.3 * e[(t, i)]
        });
        let data = PanelDataset::new(PanelParts { y, x: vec![DMatrix::zeros(t_len, 0); n], w, ..Default::default() }).unwrap();
        full_fit(&data, &BreakSet::new(vec![10], t_len).unwrap(), &SearchOptions::default()).unwrap()
    }

    #[test]
    fn intervals_contain_the_date_and_grow_with_level() {
        let f = fitted(40, 0.4, 1);
        let cov = hac_covariance(&f, &HacSpec::new(1)).unwrap();
        let mut prev = (usize::MAX, 0);
        for level in [0.5, 0.8, 0.9, 0.95, 0.99] {
            let ci = break_confidence(&f, &cov, level).unwrap();
            let iv = &ci.intervals[0];
            assert!(iv.lo <= iv.date && iv.date <= iv.hi);
            assert!(iv.lo <= prev.0 && iv.hi >= prev.1);
            prev = (iv.lo, iv.hi);
        }
    }

    #[test]
    fn zero_increment_is_weak() {
        let mut f = fitted(20, 0.4, 2);
        let cov = hac_covariance(&f, &HacSpec::new(1)).unwrap();
        f.increments.fill(0.0);
        assert!(matches!(break_confidence(&f, &cov, 0.95), Err(Error::WeakBreak { index: 1, .. })));
    }
}
