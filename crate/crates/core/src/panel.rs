//! Panel data model, break sets and trimming.

use std::ops::Range;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Balanced `N × T` panel.
///
/// `y` is stored `T × N` (one column per unit); `x` and `w` hold one `T × p`
/// matrix per unit. Observed factors are common series of shape `T × p_d`.
#[derive(Debug, Clone, PartialEq)]
pub struct PanelDataset {
    y: DMatrix<f64>,
    x: Vec<DMatrix<f64>>,
    w: Vec<DMatrix<f64>>,
    observed_factors: DMatrix<f64>,
    unit_labels: Vec<String>,
    period_labels: Vec<String>,
    x_names: Vec<String>,
    w_names: Vec<String>,
    factor_names: Vec<String>,
}

/// Raw parts for [`PanelDataset::new`].
#[derive(Debug, Clone, Default)]
pub struct PanelParts {
    pub y: DMatrix<f64>,
    pub x: Vec<DMatrix<f64>>,
    pub w: Vec<DMatrix<f64>>,
    pub observed_factors: Option<DMatrix<f64>>,
    pub unit_labels: Option<Vec<String>>,
    pub period_labels: Option<Vec<String>>,
    pub x_names: Option<Vec<String>>,
    pub w_names: Option<Vec<String>>,
    pub factor_names: Option<Vec<String>>,
}

impl PanelDataset {
    pub fn new(parts: PanelParts) -> Result<Self> {
        let (t_len, n) = parts.y.shape();
        if n < 2 {
            return Err(Error::Schema(format!("need at least 2 units, got {n}")));
        }
        if parts.x.len() != n || parts.w.len() != n {
            return Err(Error::Schema(format!(
                "expected {n} per-unit regressor blocks, got {} (x) and {} (w)",
                parts.x.len(),
                parts.w.len()
            )));
        }
        let p_x = parts.x[0].ncols();
        let p_w = parts.w[0].ncols();
        if p_w == 0 {
            return Err(Error::Schema("at least one breaking regressor is required".into()));
        }
        for (i, (xi, wi)) in parts.x.iter().zip(&parts.w).enumerate() {
            if xi.shape() != (t_len, p_x) || wi.shape() != (t_len, p_w) {
                return Err(Error::Schema(format!("unit {i}: regressor block has the wrong shape")));
            }
        }
        let all_finite = parts.y.iter().all(|v| v.is_finite())
            && parts.x.iter().chain(&parts.w).all(|m| m.iter().all(|v| v.is_finite()));
        if !all_finite {
            return Err(Error::Schema("panel contains non-finite values".into()));
        }
        let observed_factors = parts.observed_factors.unwrap_or_else(|| DMatrix::zeros(t_len, 0));
        if observed_factors.nrows() != t_len {
            return Err(Error::Schema("observed factors must have T rows".into()));
        }
        let p_d = observed_factors.ncols();
        let labels = |given: Option<Vec<String>>, len: usize, prefix: &str| -> Result<Vec<String>> {
            match given {
                Some(v) if v.len() == len => Ok(v),
                Some(v) => Err(Error::Schema(format!(
                    "{prefix}: expected {len} labels, got {}",
                    v.len()
                ))),
                None => Ok((1..=len).map(|i| format!("{prefix}{i}")).collect()),
            }
        };
        Ok(Self {
            unit_labels: labels(parts.unit_labels, n, "unit")?,
            period_labels: labels(parts.period_labels, t_len, "")?,
            x_names: labels(parts.x_names, p_x, "x")?,
            w_names: labels(parts.w_names, p_w, "w")?,
            factor_names: labels(parts.factor_names, p_d, "f")?,
            y: parts.y,
            x: parts.x,
            w: parts.w,
            observed_factors,
        })
    }

    pub fn n_units(&self) -> usize {
        self.y.ncols()
    }
    pub fn n_periods(&self) -> usize {
        self.y.nrows()
    }
    pub fn p_x(&self) -> usize {
        self.x[0].ncols()
    }
    pub fn p_w(&self) -> usize {
        self.w[0].ncols()
    }
    pub fn p_d(&self) -> usize {
        self.observed_factors.ncols()
    }
    /// `T × N`, column `i` is unit `i`'s series.
    pub fn y(&self) -> &DMatrix<f64> {
        &self.y
    }
    pub fn x(&self) -> &[DMatrix<f64>] {
        &self.x
    }
    pub fn w(&self) -> &[DMatrix<f64>] {
        &self.w
    }
    pub fn observed_factors(&self) -> &DMatrix<f64> {
        &self.observed_factors
    }
    pub fn unit_labels(&self) -> &[String] {
        &self.unit_labels
    }
    pub fn period_labels(&self) -> &[String] {
        &self.period_labels
    }
    pub fn x_names(&self) -> &[String] {
        &self.x_names
    }
    pub fn w_names(&self) -> &[String] {
        &self.w_names
    }
    pub fn factor_names(&self) -> &[String] {
        &self.factor_names
    }

    /// Checks `T ≥ p_x + 2·p_w + 2`, the shortest panel in which a one-break model is estimable.
    pub fn check_estimable(&self) -> Result<()> {
        let need = self.p_x() + 2 * self.p_w() + 2;
        if self.n_periods() < need {
            return Err(Error::Infeasible(format!(
                "T = {} is too short for p_x = {}, p_w = {} (need T >= {need})",
                self.n_periods(),
                self.p_x(),
                self.p_w()
            )));
        }
        Ok(())
    }

    /// Same panel with `y` replaced (used by rescaling checks and simulations).
    pub fn with_y(&self, y: DMatrix<f64>) -> Result<Self> {
        if y.shape() != self.y.shape() {
            return Err(Error::Schema("replacement y has the wrong shape".into()));
        }
        let mut out = self.clone();
        out.y = y;
        Ok(out)
    }

    /// Keeps the units at `order` (in that order). Used for relabeling checks.
    pub fn select_units(&self, order: &[usize]) -> Result<Self> {
        let y = DMatrix::from_fn(self.n_periods(), order.len(), |t, i| self.y[(t, order[i])]);
        Self::new(PanelParts {
            y,
            x: order.iter().map(|&i| self.x[i].clone()).collect(),
            w: order.iter().map(|&i| self.w[i].clone()).collect(),
            observed_factors: Some(self.observed_factors.clone()),
            unit_labels: Some(order.iter().map(|&i| self.unit_labels[i].clone()).collect()),
            period_labels: Some(self.period_labels.clone()),
            x_names: Some(self.x_names.clone()),
            w_names: Some(self.w_names.clone()),
            factor_names: Some(self.factor_names.clone()),
        })
    }
}

/// Ordered break dates `T_1 < … < T_k`, 1-based, with `T_0 = 0` and `T_{k+1} = T` implied.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct BreakSet {
    dates: Vec<usize>,
    n_periods: usize,
}

impl BreakSet {
    pub fn new(dates: Vec<usize>, n_periods: usize) -> Result<Self> {
        if dates.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::InvalidArgument(format!(
                "break dates must be strictly increasing: {dates:?}"
            )));
        }
        if let (Some(&first), Some(&last)) = (dates.first(), dates.last()) {
            if first < 1 || last + 1 > n_periods {
                return Err(Error::InvalidArgument(format!(
                    "break dates must lie in [1, {}]: {dates:?}",
                    n_periods.saturating_sub(1)
                )));
            }
        }
        Ok(Self { dates, n_periods })
    }

    pub fn empty(n_periods: usize) -> Self {
        Self {
            dates: Vec::new(),
            n_periods,
        }
    }

    pub fn dates(&self) -> &[usize] {
        &self.dates
    }
    pub fn k(&self) -> usize {
        self.dates.len()
    }
    pub fn n_periods(&self) -> usize {
        self.n_periods
    }
    pub fn n_regimes(&self) -> usize {
        self.dates.len() + 1
    }

    /// `[0, T_1, …, T_k, T]`.
    pub fn boundaries(&self) -> Vec<usize> {
        let mut b = Vec::with_capacity(self.dates.len() + 2);
        b.push(0);
        b.extend_from_slice(&self.dates);
        b.push(self.n_periods);
        b
    }

    /// Zero-based period ranges of each regime.
    pub fn regimes(&self) -> Vec<Range<usize>> {
        self.boundaries().windows(2).map(|w| w[0]..w[1]).collect()
    }

    /// Regime index of every (zero-based) period.
    pub fn regime_of_period(&self) -> Vec<usize> {
        let mut out = Vec::with_capacity(self.n_periods);
        for (j, r) in self.regimes().into_iter().enumerate() {
            out.extend(std::iter::repeat_n(j, r.len()));
        }
        out
    }

    pub fn fractions(&self) -> Vec<f64> {
        self.dates
            .iter()
            .map(|&d| d as f64 / self.n_periods as f64)
            .collect()
    }

    pub fn with_added(&self, date: usize) -> Result<Self> {
        let mut d = self.dates.clone();
        d.push(date);
        d.sort_unstable();
        Self::new(d, self.n_periods)
    }
}

/// Trimming fraction ε: every regime must cover at least ε·T periods.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Trimming {
    epsilon: f64,
}

impl Default for Trimming {
    fn default() -> Self {
        Self { epsilon: 0.15 }
    }
}

// εT, 1/ε are computed in floating point; snap values within this distance of an integer.
const SNAP: f64 = 1e-9;

impl Trimming {
    pub fn new(epsilon: f64) -> Result<Self> {
        if !(epsilon > 0.0 && epsilon < 0.5) {
            return Err(Error::InvalidArgument(format!(
                "trimming must lie in (0, 0.5), got {epsilon}"
            )));
        }
        Ok(Self { epsilon })
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    /// `⌊1/ε⌋ − 2`, floored at zero.
    pub fn max_breaks(&self) -> usize {
        let inv = (1.0 / self.epsilon + SNAP).floor() as usize;
        inv.saturating_sub(2)
    }

    /// `⌈εT⌉`, at least one period.
    pub fn min_length(&self, n_periods: usize) -> usize {
        ((self.epsilon * n_periods as f64 - SNAP).ceil() as usize).max(1)
    }

    pub fn check_capacity(&self, k: usize) -> Result<()> {
        if k > self.max_breaks() {
            Err(Error::Capacity {
                requested: k,
                max: self.max_breaks(),
                epsilon: self.epsilon,
            })
        } else {
            Ok(())
        }
    }

    pub fn is_admissible(&self, breaks: &BreakSet) -> bool {
        let h = self.min_length(breaks.n_periods());
        breaks.boundaries().windows(2).all(|w| w[1] - w[0] >= h)
    }

    /// Lazily enumerates every admissible `k`-break set in lexicographic order.
    pub fn enumerate_admissible(&self, k: usize, n_periods: usize) -> Result<Admissible> {
        self.check_capacity(k)?;
        Ok(Admissible::new(k, n_periods, self.min_length(n_periods)))
    }
}

/// Iterator over admissible break sets (odometer over dates).
#[derive(Debug, Clone)]
pub struct Admissible {
    current: Option<Vec<usize>>,
    n_periods: usize,
    h: usize,
}

impl Admissible {
    fn new(k: usize, n_periods: usize, h: usize) -> Self {
        let first: Vec<usize> = (1..=k).map(|j| j * h).collect();
        let feasible = (k + 1) * h <= n_periods;
        Self {
            current: feasible.then_some(first),
            n_periods,
            h,
        }
    }

    fn upper(&self, j: usize, k: usize) -> usize {
        // T_j ≤ T − (k − j + 1)·h for zero-based j.
        self.n_periods - (k - j) * self.h
    }
}

impl Iterator for Admissible {
    type Item = BreakSet;

    fn next(&mut self) -> Option<BreakSet> {
        let cur = self.current.take()?;
        let out = BreakSet {
            dates: cur.clone(),
            n_periods: self.n_periods,
        };
        let k = cur.len();
        let mut next = cur;
        let mut j = k;
        loop {
            if j == 0 {
                self.current = None;
                break;
            }
            j -= 1;
            if next[j] < self.upper(j, k) {
                next[j] += 1;
                for l in j + 1..k {
                    next[l] = next[l - 1] + self.h;
                }
                self.current = Some(next);
                break;
            }
        }
        Some(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn max_breaks_formula() {
        assert_eq!(Trimming::new(0.05).unwrap().max_breaks(), 18);
        assert_eq!(Trimming::new(0.15).unwrap().max_breaks(), 4);
        assert_eq!(Trimming::new(0.25).unwrap().max_breaks(), 2);
        assert_eq!(Trimming::new(0.10).unwrap().max_breaks(), 8);
        assert_eq!(Trimming::new(0.45).unwrap().max_breaks(), 0);
    }

    #[test]
    fn min_length_uses_ceiling() {
        let t = Trimming::new(0.15).unwrap();
        assert_eq!(t.min_length(100), 15);
        assert_eq!(t.min_length(20), 3);
        assert_eq!(t.min_length(50), 8);
    }

    #[test]
    fn one_break_at_t100() {
        let sets: Vec<_> = Trimming::new(0.15)
            .unwrap()
            .enumerate_admissible(1, 100)
            .unwrap()
            .collect();
        assert_eq!(sets.len(), 71);
        assert_eq!(sets[0].dates(), &[15]);
        assert_eq!(sets[70].dates(), &[85]);
    }

    #[test]
    fn two_breaks_match_brute_force() {
        let trim = Trimming::new(0.25).unwrap();
        let got: Vec<Vec<usize>> = trim
            .enumerate_admissible(2, 20)
            .unwrap()
            .map(|b| b.dates().to_vec())
            .collect();
        let mut want = Vec::new();
        for t1 in 1..20 {
            for t2 in t1 + 1..20 {
                if t1 >= 5 && t2 - t1 >= 5 && t2 <= 15 {
                    want.push(vec![t1, t2]);
                }
            }
        }
        assert_eq!(got, want);
    }

    #[test]
    fn capacity_error() {
        let err = Trimming::new(0.25).unwrap().enumerate_admissible(3, 40).unwrap_err();
        assert!(matches!(err, Error::Capacity { max: 2, .. }));
    }

    #[test]
    fn zero_breaks_yield_empty_set() {
        let sets: Vec<_> = Trimming::default().enumerate_admissible(0, 10).unwrap().collect();
        assert_eq!(sets, vec![BreakSet::empty(10)]);
    }

    #[test]
    fn regimes_partition_periods() {
        let b = BreakSet::new(vec![3, 7], 10).unwrap();
        assert_eq!(b.regimes(), vec![0..3, 3..7, 7..10]);
        assert_eq!(b.regime_of_period(), vec![0, 0, 0, 1, 1, 1, 1, 2, 2, 2]);
        assert!(BreakSet::new(vec![0], 10).is_err());
        assert!(BreakSet::new(vec![10], 10).is_err());
        assert!(BreakSet::new(vec![4, 4], 10).is_err());
    }
}
