//! The F test at known dates, `supF(k)`, `WDmaxF(k_max)`, `F(k+1|k)` and the sequential
//! estimate of the number of breaks.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, FisherSnedecor};

use super::critical::{CriticalValueTable, CvKind, STANDARD_LEVELS};
use super::hac::{hac_covariance, CovarianceEstimate, HacSpec};
use crate::error::{Error, ErrorCategory, Result};
use crate::estimator::FitResult;
use crate::panel::{BreakSet, PanelDataset, Trimming};
use crate::search::{estimate_breaks, full_fit, BreakSearch, SearchOptions};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TestKind {
    FKnown,
    SupF,
    WdmaxF,
    SeqF,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestComponent {
    /// `k` for WDmax terms, the regime (1-based) for seqF.
    pub index: usize,
    pub statistic: f64,
    pub weight: f64,
    pub breaks: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestReport {
    pub kind: TestKind,
    pub statistic: f64,
    /// `k` for F and supF, `k_max` for WDmax, the number of breaks under the null for seqF.
    pub k: usize,
    pub epsilon: Option<f64>,
    pub p_w: usize,
    pub bandwidth: usize,
    pub level: f64,
    pub critical_value: f64,
    pub critical_values: BTreeMap<String, f64>,
    pub reject: bool,
    pub p_value: Option<f64>,
    /// Break set at which the statistic is attained.
    pub breaks: Vec<usize>,
    pub limit: String,
    pub components: Vec<TestComponent>,
    pub warnings: Vec<String>,
}

/// Formats a level as a percentage key, e.g. `0.025` → `"2.5%"`.
pub fn level_key(level: f64) -> String {
    let pct = (level * 100.0 * 1e6).round() / 1e6;
    format!("{pct}%")
}

/// How `supF(k)` locates its break set.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SupMethod {
    /// `F` at the SSR-minimizing dates from the iterative estimator.
    #[default]
    Estimated,
    /// Maximum of `F` over every admissible break set; refused beyond [`MAX_EXHAUSTIVE_SETS`].
    Exhaustive,
}

/// Largest number of admissible break sets the exhaustive supremum will evaluate.
pub const MAX_EXHAUSTIVE_SETS: usize = 250_000;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TestOptions {
    pub trim: Trimming,
    /// `None` selects `⌊4(T/100)^{2/9}⌋`.
    pub bandwidth: Option<usize>,
    pub level: f64,
    pub search: SearchOptions,
    #[serde(default)]
    pub sup: SupMethod,
}

impl Default for TestOptions {
    fn default() -> Self {
        Self {
            trim: Trimming::default(),
            bandwidth: None,
            level: 0.05,
            search: SearchOptions::default(),
            sup: SupMethod::default(),
        }
    }
}

impl TestOptions {
    fn hac(&self, n_periods: usize) -> HacSpec {
        HacSpec::resolve(self.bandwidth, n_periods)
    }

    fn check_level(&self) -> Result<()> {
        if self.level > 0.0 && self.level < 1.0 {
            Ok(())
        } else {
            Err(Error::InvalidArgument(format!("level must lie in (0, 1), got {}", self.level)))
        }
    }
}

/// `I_k ⊗ (I_{p_w}, −I_{p_w})`.
pub fn break_restriction(k: usize, p_w: usize) -> DMatrix<f64> {
    let mut r = DMatrix::zeros(k * p_w, (k + 1) * p_w);
    for j in 0..k {
        for c in 0..p_w {
            r[(j * p_w + c, j * p_w + c)] = 1.0;
            r[(j * p_w + c, (j + 1) * p_w + c)] = -1.0;
        }
    }
    r
}

/// `N(T − p_x − r·p_w) − p_x − r·p_w` for `r` regimes.
pub fn dof_factor(n: usize, t_len: usize, p_x: usize, p_w: usize, regimes: usize) -> Result<f64> {
    let q = (p_x + regimes * p_w) as i64;
    let v = n as i64 * (t_len as i64 - q) - q;
    if v < 1 {
        return Err(Error::Infeasible(format!(
            "no degrees of freedom left for the F statistic (N = {n}, T = {t_len}, {q} coefficients)"
        )));
    }
    Ok(v as f64)
}

/// `dof/rows(R) · (Rδ̂)'(RV̂R')⁻¹(Rδ̂)`.
pub fn wald_f(fit: &FitResult, cov: &CovarianceEstimate, r: &DMatrix<f64>, dof: f64) -> Result<f64> {
    let rd: DVector<f64> = r * &fit.delta;
    let rvr = r * &cov.v * r.transpose();
    let chol = crate::linalg::symmetrize(&rvr)
        .cholesky()
        .ok_or_else(|| Error::Singular("R V̂ R' (the restricted covariance is degenerate)".into()))?;
    let z = chol.solve(&rd);
    Ok(dof / r.nrows() as f64 * rd.dot(&z))
}

/// F statistic for `H₀: δ_1 = … = δ_{k+1}` at the fit's own dates.
pub fn f_statistic(fit: &FitResult, cov: &CovarianceEstimate) -> Result<f64> {
    let k = fit.k();
    if k == 0 {
        return Err(Error::InvalidArgument("the F statistic needs at least one break".into()));
    }
    let dof = dof_factor(fit.n_units(), fit.n_periods(), fit.p_x(), fit.p_w, k + 1)?;
    wald_f(fit, cov, &break_restriction(k, fit.p_w), dof)
}

/// F test at known dates against the `F(k·p_w, dof)` reference.
pub fn f_known(fit: &FitResult, cov: &CovarianceEstimate, level: f64) -> Result<TestReport> {
    let k = fit.k();
    let statistic = f_statistic(fit, cov)?;
    let df1 = (k * fit.p_w) as f64;
    let df2 = dof_factor(fit.n_units(), fit.n_periods(), fit.p_x(), fit.p_w, k + 1)?;
    let dist = FisherSnedecor::new(df1, df2).map_err(|e| Error::Internal(e.to_string()))?;
    let mut critical_values = BTreeMap::new();
    for l in STANDARD_LEVELS.iter().chain(std::iter::once(&level)) {
        critical_values.insert(level_key(*l), dist.inverse_cdf(1.0 - l));
    }
    let critical_value = dist.inverse_cdf(1.0 - level);
    Ok(TestReport {
        kind: TestKind::FKnown,
        statistic,
        k,
        epsilon: None,
        p_w: fit.p_w,
        bandwidth: cov.bandwidth,
        level,
        critical_value,
        critical_values,
        reject: statistic > critical_value,
        p_value: Some(dist.sf(statistic)),
        breaks: fit.breaks.dates().to_vec(),
        limit: format!("F({df1}, {df2})"),
        components: Vec::new(),
        warnings: Vec::new(),
    })
}

fn table_values<F: Fn(f64) -> Result<f64>>(level: f64, lookup: F) -> Result<(f64, BTreeMap<String, f64>)> {
    let critical_value = lookup(level)?;
    let mut map = BTreeMap::new();
    for l in STANDARD_LEVELS {
        if let Ok(v) = lookup(l) {
            map.insert(level_key(l), v);
        }
    }
    map.insert(level_key(level), critical_value);
    Ok((critical_value, map))
}

/// `supF(k)` and the fit at its break set, per [`TestOptions::sup`].
pub fn sup_f_statistic(data: &PanelDataset, k: usize, opts: &TestOptions) -> Result<(f64, FitResult, Vec<String>)> {
    if k == 0 {
        return Err(Error::InvalidArgument("supF needs k ≥ 1".into()));
    }
    if opts.sup == SupMethod::Exhaustive {
        return exhaustive_sup_f(data, k, opts);
    }
    let est = estimate_breaks(data, &BreakSearch::Global { k }, &opts.trim, &opts.search)?;
    let cov = hac_covariance(&est.fit, &opts.hac(data.n_periods()))?;
    let statistic = f_statistic(&est.fit, &cov)?;
    let mut warnings = Vec::new();
    if !est.converged {
        warnings.push(format!(
            "break-date iteration stopped after {} passes without converging",
            est.iterations
        ));
    }
    Ok((statistic, est.fit, warnings))
}

/// Largest `F(𝒯)` over all admissible `k`-break sets; ties go to the lexicographically first set.
fn exhaustive_sup_f(data: &PanelDataset, k: usize, opts: &TestOptions) -> Result<(f64, FitResult, Vec<String>)> {
    data.check_estimable()?;
    let t_len = data.n_periods();
    let sets: Vec<BreakSet> = opts.trim.enumerate_admissible(k, t_len)?.take(MAX_EXHAUSTIVE_SETS + 1).collect();
    if sets.len() > MAX_EXHAUSTIVE_SETS {
        return Err(Error::Infeasible(format!(
            "more than {MAX_EXHAUSTIVE_SETS} admissible {k}-break sets; use the estimated supremum"
        )));
    }
    if sets.is_empty() {
        return Err(Error::Infeasible(format!("no admissible {k}-break set for T = {t_len}")));
    }
    let hac = opts.hac(t_len);
    let values: Vec<Result<f64>> = sets
        .par_iter()
        .map(|b| {
            let fit = full_fit(data, b, &opts.search)?;
            f_statistic(&fit, &hac_covariance(&fit, &hac)?)
        })
        .collect();
    let mut best: Option<(usize, f64)> = None;
    let mut skipped = 0;
    for (i, v) in values.into_iter().enumerate() {
        match v {
            Ok(v) if best.is_none_or(|(_, b)| v > b) => best = Some((i, v)),
            Ok(_) => {}
            Err(e) if recoverable(&e) => skipped += 1,
            Err(e) => return Err(e),
        }
    }
    let (idx, statistic) = best.ok_or_else(|| Error::Infeasible(format!("F could not be computed at any {k}-break set")))?;
    let mut warnings = Vec::new();
    if skipped > 0 {
        warnings.push(format!("{skipped} of {} break sets could not be fitted", sets.len()));
    }
    Ok((statistic, full_fit(data, &sets[idx], &opts.search)?, warnings))
}

pub fn sup_f(data: &PanelDataset, k: usize, opts: &TestOptions, table: &CriticalValueTable) -> Result<TestReport> {
    opts.check_level()?;
    let (p_w, eps) = (data.p_w(), opts.trim.epsilon());
    let (critical_value, critical_values) =
        table_values(opts.level, |l| table.value(CvKind::SupF, k, p_w, eps, l))?;
    let (statistic, fit, warnings) = sup_f_statistic(data, k, opts)?;
    Ok(TestReport {
        kind: TestKind::SupF,
        statistic,
        k,
        epsilon: Some(eps),
        p_w,
        bandwidth: opts.hac(data.n_periods()).bandwidth,
        level: opts.level,
        critical_value,
        critical_values,
        reject: statistic > critical_value,
        p_value: None,
        breaks: fit.breaks.dates().to_vec(),
        limit: format!("sup Q({k}) with p_w = {p_w}, epsilon = {eps}"),
        components: Vec::new(),
        warnings,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum WdmaxWeights {
    /// `c_{α,1}/c_{α,k} = 1`.
    Unit,
    /// `c_{α,1}/c_{α,k}` from the table at the test level.
    LevelMatched,
}

pub fn wdmax_f(
    data: &PanelDataset,
    k_max: usize,
    weights: WdmaxWeights,
    opts: &TestOptions,
    table: &CriticalValueTable,
) -> Result<TestReport> {
    opts.check_level()?;
    if k_max == 0 {
        return Err(Error::InvalidArgument("WDmax needs k_max ≥ 1".into()));
    }
    opts.trim.check_capacity(k_max)?;
    let (p_w, eps) = (data.p_w(), opts.trim.epsilon());
    let kind = match weights {
        WdmaxWeights::Unit => CvKind::WdmaxUnit,
        WdmaxWeights::LevelMatched => CvKind::Wdmax,
    };
    let (critical_value, critical_values) = table_values(opts.level, |l| table.value(kind, k_max, p_w, eps, l))?;
    let weight_of = |k: usize| -> Result<f64> {
        match weights {
            WdmaxWeights::Unit => Ok(1.0),
            WdmaxWeights::LevelMatched => Ok(table.value(CvKind::SupF, 1, p_w, eps, opts.level)?
                / table.value(CvKind::SupF, k, p_w, eps, opts.level)?),
        }
    };
    let mut components = Vec::with_capacity(k_max);
    let mut warnings = Vec::new();
    for k in 1..=k_max {
        let (s, fit, w) = sup_f_statistic(data, k, opts)?;
        warnings.extend(w.into_iter().map(|m| format!("k = {k}: {m}")));
        components.push(TestComponent {
            index: k,
            statistic: s,
            weight: weight_of(k)?,
            breaks: fit.breaks.dates().to_vec(),
        });
    }
    let best = components
        .iter()
        .max_by(|a, b| (a.weight * a.statistic).total_cmp(&(b.weight * b.statistic)).then(b.index.cmp(&a.index)))
        .expect("k_max ≥ 1");
    let statistic = best.weight * best.statistic;
    Ok(TestReport {
        kind: TestKind::WdmaxF,
        statistic,
        k: k_max,
        epsilon: Some(eps),
        p_w,
        bandwidth: opts.hac(data.n_periods()).bandwidth,
        level: opts.level,
        critical_value,
        critical_values,
        reject: statistic > critical_value,
        p_value: None,
        breaks: best.breaks.clone(),
        limit: format!("max over k ≤ {k_max} of weighted sup Q(k) with p_w = {p_w}, epsilon = {eps}"),
        components,
        warnings,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SeqMode {
    /// Maximum over regimes and candidate dates of the single-restriction F.
    #[default]
    MaxF,
    /// Per regime, F at the date minimizing the SSR; maximum over regimes.
    MinSsr,
}

/// Candidate dates for a new break inside each regime: `[⌈T_{j−1} + εΔ_j⌉, ⌊T_j − εΔ_j⌋]`.
pub fn seq_windows(breaks: &BreakSet, trim: &Trimming) -> Vec<Option<(usize, usize)>> {
    let eps = trim.epsilon();
    breaks
        .regimes()
        .iter()
        .map(|r| {
            let (start, end) = (r.start as f64, r.end as f64);
            let span = end - start;
            let lo = ((start + eps * span) - 1e-9).ceil() as usize;
            let hi = ((end - eps * span) + 1e-9).floor() as usize;
            let lo = lo.max(r.start + 1);
            let hi = hi.min(r.end - 1);
            (lo <= hi).then_some((lo, hi))
        })
        .collect()
}

/// Single-restriction F for `δ_j = δ_{j+1}` at the augmented set's break `j`.
fn seq_candidate(data: &PanelDataset, base: &BreakSet, tau: usize, opts: &TestOptions) -> Result<(f64, BreakSet)> {
    let set = base.with_added(tau)?;
    let j = set.dates().iter().position(|&d| d == tau).expect("date was added");
    let fit = full_fit(data, &set, &opts.search)?;
    let cov = hac_covariance(&fit, &opts.hac(data.n_periods()))?;
    let p_w = data.p_w();
    let k1 = set.k();
    let full = break_restriction(k1, p_w);
    let r = full.rows(j * p_w, p_w).into_owned();
    let dof = dof_factor(data.n_units(), data.n_periods(), data.p_x(), p_w, k1 + 1)?;
    Ok((wald_f(&fit, &cov, &r, dof)?, set))
}

fn recoverable(e: &Error) -> bool {
    matches!(e.category(), ErrorCategory::Numerical | ErrorCategory::Infeasible)
}

/// `F(k+1|k)` at the null break set `base`.
pub fn seq_f_statistic(
    data: &PanelDataset,
    base: &BreakSet,
    mode: SeqMode,
    opts: &TestOptions,
) -> Result<(f64, Vec<TestComponent>, Vec<usize>, Vec<String>)> {
    data.check_estimable()?;
    if base.n_periods() != data.n_periods() {
        return Err(Error::InvalidArgument("break set and panel differ in T".into()));
    }
    let windows = seq_windows(base, &opts.trim);
    if windows.iter().all(Option::is_none) {
        return Err(Error::Infeasible("no regime is long enough to admit another break".into()));
    }
    let mut components = Vec::new();
    let mut warnings = Vec::new();
    for (j, w) in windows.iter().enumerate() {
        let Some((lo, hi)) = *w else {
            warnings.push(format!("regime {} is too short to split", j + 1));
            continue;
        };
        let candidates: Vec<usize> = match mode {
            SeqMode::MaxF => (lo..=hi).collect(),
            SeqMode::MinSsr => {
                let search = BreakSearch::AddOne { base: base.clone(), regime: j, window: lo..=hi };
                match estimate_breaks(data, &search, &opts.trim, &opts.search) {
                    Ok(est) => est
                        .best_breaks
                        .dates()
                        .iter()
                        .copied()
                        .filter(|d| !base.dates().contains(d))
                        .collect(),
                    Err(e) if recoverable(&e) => {
                        warnings.push(format!("regime {}: {e}", j + 1));
                        continue;
                    }
                    Err(e) => return Err(e),
                }
            }
        };
        let mut best: Option<(f64, BreakSet)> = None;
        let mut skipped = 0;
        for tau in candidates {
            match seq_candidate(data, base, tau, opts) {
                Ok((f, set)) => {
                    if best.as_ref().is_none_or(|(b, _)| f > *b) {
                        best = Some((f, set));
                    }
                }
                Err(e) if recoverable(&e) => skipped += 1,
                Err(e) => return Err(e),
            }
        }
        if skipped > 0 {
            warnings.push(format!("regime {}: {skipped} candidate dates could not be fitted", j + 1));
        }
        if let Some((f, set)) = best {
            components.push(TestComponent { index: j + 1, statistic: f, weight: 1.0, breaks: set.dates().to_vec() });
        }
    }
    let best = components
        .iter()
        .max_by(|a, b| a.statistic.total_cmp(&b.statistic).then(b.index.cmp(&a.index)))
        .ok_or_else(|| Error::Infeasible("no candidate break could be fitted in any regime".into()))?;
    Ok((best.statistic, components.clone(), best.breaks.clone(), warnings))
}

pub fn seq_f(
    data: &PanelDataset,
    base: &BreakSet,
    mode: SeqMode,
    opts: &TestOptions,
    table: &CriticalValueTable,
) -> Result<TestReport> {
    opts.check_level()?;
    let (p_w, eps, k) = (data.p_w(), opts.trim.epsilon(), base.k());
    let (critical_value, critical_values) = table_values(opts.level, |l| table.seq_value(k, p_w, eps, l))?;
    let (statistic, components, breaks, warnings) = seq_f_statistic(data, base, mode, opts)?;
    Ok(TestReport {
        kind: TestKind::SeqF,
        statistic,
        k,
        epsilon: Some(eps),
        p_w,
        bandwidth: opts.hac(data.n_periods()).bandwidth,
        level: opts.level,
        critical_value,
        critical_values,
        reject: statistic > critical_value,
        p_value: None,
        breaks,
        limit: format!("maximum of {} independent sup Q(1) with p_w = {p_w}, epsilon = {eps}", k + 1),
        components,
        warnings,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "policy", content = "value")]
pub enum AlphaPolicy {
    Fixed(f64),
    /// `α = K/(NT)`.
    Shrinking(f64),
}

impl AlphaPolicy {
    pub fn resolve(&self, n: usize, t_len: usize) -> Result<f64> {
        let a = match *self {
            AlphaPolicy::Fixed(a) => a,
            AlphaPolicy::Shrinking(k) => k / (n * t_len) as f64,
        };
        if a > 0.0 && a < 1.0 {
            Ok(a)
        } else {
            Err(Error::InvalidArgument(format!("significance level must lie in (0, 1), got {a}")))
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SequentialStep {
    pub null_breaks: Vec<usize>,
    pub statistic: f64,
    pub critical_value: f64,
    pub reject: bool,
    /// Regime (1-based) with the largest statistic.
    pub regime: usize,
    /// Break set after adding the estimated break, when the null was rejected.
    pub new_breaks: Option<Vec<usize>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BreakCount {
    pub k_hat: usize,
    pub breaks: Vec<usize>,
    pub alpha: f64,
    pub steps: Vec<SequentialStep>,
    pub truncated: bool,
    pub warnings: Vec<String>,
}

/// Sequential `F(k+1|k)` testing from `k = 0` until the first non-rejection or `k_cap`.
pub fn estimate_num_breaks(
    data: &PanelDataset,
    alpha: AlphaPolicy,
    k_cap: usize,
    mode: SeqMode,
    opts: &TestOptions,
    table: &CriticalValueTable,
) -> Result<BreakCount> {
    opts.trim.check_capacity(k_cap)?;
    let alpha = alpha.resolve(data.n_units(), data.n_periods())?;
    let opts = TestOptions { level: alpha, ..*opts };
    let mut breaks = BreakSet::empty(data.n_periods());
    let mut steps = Vec::new();
    let mut warnings = Vec::new();
    let mut truncated = false;
    loop {
        if breaks.k() >= k_cap {
            if steps.last().is_some_and(|s: &SequentialStep| s.reject) {
                truncated = true;
                warnings.push(format!(
                    "stopped at the cap of {k_cap} breaks while the last test still rejected"
                ));
            }
            break;
        }
        let report = match seq_f(data, &breaks, mode, &opts, table) {
            Ok(r) => r,
            Err(Error::Infeasible(m)) if breaks.k() > 0 => {
                warnings.push(format!("stopped at {} breaks: {m}", breaks.k()));
                break;
            }
            Err(e) => return Err(e),
        };
        warnings.extend(report.warnings.iter().cloned());
        let top = report
            .components
            .iter()
            .max_by(|a, b| a.statistic.total_cmp(&b.statistic).then(b.index.cmp(&a.index)))
            .expect("seq_f returns at least one component");
        let mut step = SequentialStep {
            null_breaks: breaks.dates().to_vec(),
            statistic: report.statistic,
            critical_value: report.critical_value,
            reject: report.reject,
            regime: top.index,
            new_breaks: None,
        };
        if !report.reject {
            steps.push(step);
            break;
        }
        let window = seq_windows(&breaks, &opts.trim)[top.index - 1].expect("component regime has a window");
        let search = BreakSearch::AddOne { base: breaks.clone(), regime: top.index - 1, window: window.0..=window.1 };
        let est = estimate_breaks(data, &search, &opts.trim, &opts.search)?;
        breaks = est.best_breaks;
        step.new_breaks = Some(breaks.dates().to_vec());
        steps.push(step);
    }
    Ok(BreakCount {
        k_hat: breaks.k(),
        breaks: breaks.dates().to_vec(),
        alpha,
        steps,
        truncated,
        warnings,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::panel::PanelParts;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn panel(n: usize, t_len: usize, shift: f64, seed: u64) -> PanelDataset {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut draw = |r, c| DMatrix::from_fn(r, c, |_, _| rng.random::<f64>() - 0.5);
        let x: Vec<_> = (0..n).map(|_| draw(t_len, 1)).collect();
        let w: Vec<_> = (0..n).map(|_| draw(t_len, 1)).collect();
        let e = draw(t_len, n);
        let y = DMatrix::from_fn(t_len, n, |t, i| {
            let d = if t < t_len / 2 { 1.0 } else { 1.0 + shift };
            x[i][(t, 0)] + d * w[i][(t, 0)] + e[(t, i)]
        });
        PanelDataset::new(PanelParts { y, x, w, ..Default::default() }).unwrap()
    }

    #[test]
    fn exhaustive_sup_dominates_and_matches_first_sequential_step() {
        let data = panel(8, 24, 0.3, 7);
        let opts = TestOptions { sup: SupMethod::Exhaustive, ..Default::default() };
        let (sup, fit, _) = sup_f_statistic(&data, 1, &opts).unwrap();
        let base = BreakSet::new(vec![], 24).unwrap();
        let (seq, _, _, _) = seq_f_statistic(&data, &base, SeqMode::MaxF, &opts).unwrap();
        assert!((sup - seq).abs() <= 1e-10 * sup.abs());
        let hac = opts.hac(24);
        let (sup2, _, _) = sup_f_statistic(&data, 2, &opts).unwrap();
        for b in opts.trim.enumerate_admissible(2, 24).unwrap().step_by(5) {
            let f2 = full_fit(&data, &b, &opts.search).unwrap();
            let f = f_statistic(&f2, &hac_covariance(&f2, &hac).unwrap()).unwrap();
            assert!(sup2 >= f);
        }
        let est = TestOptions::default();
        let (at_argmin, _, _) = sup_f_statistic(&data, 1, &est).unwrap();
        assert!(sup >= at_argmin);
        assert_eq!(fit.breaks.k(), 1);
    }

    #[test]
    fn restriction_layout() {
        let r = break_restriction(2, 1);
        assert_eq!(r, DMatrix::from_row_slice(2, 3, &[1.0, -1.0, 0.0, 0.0, 1.0, -1.0]));
    }

    #[test]
    fn equal_regime_coefficients_give_zero() {
        let data = panel(10, 20, 0.0, 1);
        let b = BreakSet::new(vec![10], 20).unwrap();
        let mut fit = full_fit(&data, &b, &SearchOptions::default()).unwrap();
        let cov = hac_covariance(&fit, &HacSpec::new(1)).unwrap();
        fit.delta[1] = fit.delta[0];
        assert_eq!(f_statistic(&fit, &cov).unwrap(), 0.0);
    }

    #[test]
    fn scaling_y_leaves_f_unchanged() {
        let data = panel(12, 20, 0.5, 2);
        let scaled = data.with_y(data.y() * 10.0).unwrap();
        let b = BreakSet::new(vec![8], 20).unwrap();
        let f = |d: &PanelDataset| {
            let fit = full_fit(d, &b, &SearchOptions::default()).unwrap();
            f_statistic(&fit, &hac_covariance(&fit, &HacSpec::new(2)).unwrap()).unwrap()
        };
        let (a, s) = (f(&data), f(&scaled));
        assert!((a - s).abs() < 1e-9 * a.abs(), "{a} vs {s}");
    }

    #[test]
    fn f_known_detects_a_large_shift() {
        let data = panel(30, 20, 2.0, 3);
        let b = BreakSet::new(vec![10], 20).unwrap();
        let fit = full_fit(&data, &b, &SearchOptions::default()).unwrap();
        let cov = hac_covariance(&fit, &HacSpec::new(2)).unwrap();
        let r = f_known(&fit, &cov, 0.05).unwrap();
        assert!(r.reject);
        assert!(r.p_value.unwrap() < 1e-6);
        assert_eq!(r.critical_values.len(), 4);
        assert!(r.critical_values["1%"] > r.critical_values["10%"]);
    }

    #[test]
    fn windows_respect_trimming() {
        let trim = Trimming::new(0.2).unwrap();
        let w = seq_windows(&BreakSet::empty(20), &trim);
        assert_eq!(w, vec![Some((4, 16))]);
        let w = seq_windows(&BreakSet::new(vec![7], 20).unwrap(), &trim);
        assert_eq!(w, vec![Some((2, 5)), Some((10, 17))]);
        let w = seq_windows(&BreakSet::new(vec![1], 20).unwrap(), &trim);
        assert_eq!(w[0], None);
    }

    #[test]
    fn level_keys() {
        assert_eq!(level_key(0.025), "2.5%");
        assert_eq!(level_key(0.1), "10%");
        assert_eq!(level_key(0.01), "1%");
    }
}
