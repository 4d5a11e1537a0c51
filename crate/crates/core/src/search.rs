//! Break-date search.
//!
//! Segment SSRs come from a [`SegmentEngine`], which precomputes the Gram
//! `G_ts = Σ_i u_it u_is'` of `u_it = (target, regressors)` so that each segment
//! costs `O(ℓ²)` regardless of `N`. With regime-local averages the SSR of a break
//! set is the sum of its segment SSRs, which is what the dynamic program needs.

use std::ops::RangeInclusive;
use std::sync::atomic::{AtomicUsize, Ordering};

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::defactor::{build_averages, project, AverageOptions, RCOND_ERROR};
use crate::error::{Error, Result};
use crate::estimator::{fit, FitResult, PD_TOLERANCE};
use crate::linalg::{column_basis, expand_by_regime, scaled_min_eigenvalue, solve_spd_vec};
use crate::panel::{BreakSet, PanelDataset, PanelParts, Trimming};

/// Relative tolerance under which two SSRs count as tied.
pub const TIE_TOLERANCE: f64 = 1e-12;

/// Pooled SSR of regime-local pure-change regressions on arbitrary segments.
pub struct SegmentEngine {
    t_len: usize,
    n: usize,
    d: usize,
    /// `[t][s][c][e]`, `d × d` blocks.
    gram: Vec<f64>,
    /// Prefix sums of the diagonal blocks, `(T+1)` blocks.
    diag_prefix: Vec<f64>,
    averages: DMatrix<f64>,
    evaluations: AtomicUsize,
}

impl SegmentEngine {
    /// `target` is `T × N`; `regressors[i]` is unit `i`'s `T × d_r` block; `averages` is `T × q`.
    pub fn new(target: &DMatrix<f64>, regressors: &[DMatrix<f64>], averages: DMatrix<f64>) -> Self {
        let (t_len, n) = target.shape();
        let d = 1 + regressors[0].ncols();
        let mut u = DMatrix::zeros(t_len * d, n);
        for i in 0..n {
            for t in 0..t_len {
                u[(t * d, i)] = target[(t, i)];
                for c in 1..d {
                    u[(t * d + c, i)] = regressors[i][(t, c - 1)];
                }
            }
        }
        let full = &u * u.transpose();
        let dd = d * d;
        let mut gram = vec![0.0; t_len * t_len * dd];
        for t in 0..t_len {
            for s in 0..t_len {
                let base = (t * t_len + s) * dd;
                for c in 0..d {
                    for e in 0..d {
                        gram[base + c * d + e] = full[(t * d + c, s * d + e)];
                    }
                }
            }
        }
        let mut diag_prefix = vec![0.0; (t_len + 1) * dd];
        for t in 0..t_len {
            let g = (t * t_len + t) * dd;
            for c in 0..dd {
                diag_prefix[(t + 1) * dd + c] = diag_prefix[t * dd + c] + gram[g + c];
            }
        }
        Self {
            t_len,
            n,
            d,
            gram,
            diag_prefix,
            averages,
            evaluations: AtomicUsize::new(0),
        }
    }

    pub fn n_periods(&self) -> usize {
        self.t_len
    }

    /// Number of segment evaluations so far.
    pub fn evaluations(&self) -> usize {
        self.evaluations.load(Ordering::Relaxed)
    }

    /// SSR on zero-based periods `a..=b`; `None` when the segment cannot be fitted.
    pub fn ssr(&self, a: usize, b: usize) -> Option<f64> {
        self.evaluations.fetch_add(1, Ordering::Relaxed);
        let len = b + 1 - a;
        let q = self.averages.ncols();
        let d_r = self.d - 1;
        if len <= q || self.n * (len - q) <= d_r {
            return None;
        }
        let dd = self.d * self.d;
        let mut c: Vec<f64> = (0..dd)
            .map(|k| self.diag_prefix[(b + 1) * dd + k] - self.diag_prefix[a * dd + k])
            .collect();
        let raw_scale: Vec<f64> = (1..self.d).map(|i| c[i * self.d + i]).collect();
        if q > 0 {
            let basis = column_basis(&self.averages.rows(a, len).into_owned());
            if basis.rank < q || basis.rcond < RCOND_ERROR {
                return None;
            }
            let p = &basis.q * basis.q.transpose();
            for t in 0..len {
                let row = ((a + t) * self.t_len + a) * dd;
                for s in 0..len {
                    let w = p[(t, s)];
                    let g = &self.gram[row + s * dd..row + (s + 1) * dd];
                    for (ck, gk) in c.iter_mut().zip(g) {
                        *ck -= w * gk;
                    }
                }
            }
        }
        let d = self.d;
        let crr = DMatrix::from_fn(d_r, d_r, |i, j| 0.5 * (c[(i + 1) * d + j + 1] + c[(j + 1) * d + i + 1]));
        let cr = DVector::from_fn(d_r, |i, _| 0.5 * (c[(i + 1) * d] + c[i + 1]));
        if scaled_min_eigenvalue(&crr, &raw_scale) <= PD_TOLERANCE {
            return None;
        }
        let coef = solve_spd_vec(&crr, &cr, "segment Gram").ok()?;
        Some((c[0] - cr.dot(&coef)).max(0.0))
    }
}

/// Triangular table of segment SSRs over `1 ≤ a ≤ b ≤ T`, `+∞` where infeasible.
#[derive(Debug, Clone, PartialEq)]
pub struct SegmentTable {
    t_len: usize,
    min_len: usize,
    values: Vec<f64>,
}

impl SegmentTable {
    /// Evaluates every segment of length at least `min_len`, in parallel.
    pub fn build(engine: &SegmentEngine, min_len: usize) -> Self {
        Self::from_fn(engine.n_periods(), min_len, |a, b| engine.ssr(a, b))
    }

    /// Table from an arbitrary segment cost, for zero-based inclusive `a..=b`.
    pub fn from_fn<F>(t_len: usize, min_len: usize, cost: F) -> Self
    where
        F: Fn(usize, usize) -> Option<f64> + Sync,
    {
        let rows: Vec<Vec<f64>> = (0..t_len)
            .into_par_iter()
            .map(|a| {
                (a..t_len)
                    .map(|b| {
                        if b + 1 - a < min_len {
                            f64::INFINITY
                        } else {
                            cost(a, b).unwrap_or(f64::INFINITY)
                        }
                    })
                    .collect()
            })
            .collect();
        Self {
            t_len,
            min_len,
            values: rows.into_iter().flatten().collect(),
        }
    }

    pub fn n_periods(&self) -> usize {
        self.t_len
    }
    pub fn min_length(&self) -> usize {
        self.min_len
    }
    pub fn n_entries(&self) -> usize {
        self.values.len()
    }

    /// Cost of zero-based periods `a..=b`.
    pub fn get(&self, a: usize, b: usize) -> f64 {
        let offset = a * self.t_len - a * a.saturating_sub(1) / 2;
        self.values[offset + b - a]
    }
}

/// Minimum-SSR partitions into `k' + 1` segments for every `k' ≤ k`.
///
/// Among partitions within [`TIE_TOLERANCE`] of the minimum the lexicographically
/// smallest date vector wins. Reported SSRs are summed left to right.
pub fn dp_minimize(table: &SegmentTable, k: usize) -> Result<Vec<(BreakSet, f64)>> {
    let t_len = table.n_periods();
    // suffix[j][a]: best cost of periods a.. split into j + 1 segments.
    let mut suffix = vec![vec![f64::INFINITY; t_len + 1]; k + 1];
    for a in 0..t_len {
        suffix[0][a] = table.get(a, t_len - 1);
    }
    for j in 1..=k {
        for a in 0..t_len {
            let mut best = f64::INFINITY;
            for b in a..t_len - 1 {
                let v = table.get(a, b) + suffix[j - 1][b + 1];
                if v < best {
                    best = v;
                }
            }
            suffix[j][a] = best;
        }
    }
    (0..=k)
        .map(|kk| {
            let min = suffix[kk][0];
            if !min.is_finite() {
                return Err(Error::Infeasible(format!(
                    "no partition into {} regimes of at least {} periods can be fitted",
                    kk + 1,
                    table.min_length()
                )));
            }
            let threshold = min + TIE_TOLERANCE * min.abs();
            let mut dates = Vec::with_capacity(kk);
            let mut a = 0;
            let mut partial = 0.0;
            for j in (1..=kk).rev() {
                let mut chosen = None;
                let mut fallback = (f64::INFINITY, a);
                for b in a..t_len - 1 {
                    let v = partial + table.get(a, b) + suffix[j - 1][b + 1];
                    if v <= threshold {
                        chosen = Some(b);
                        break;
                    }
                    if v < fallback.0 {
                        fallback = (v, b);
                    }
                }
                let b = chosen.unwrap_or(fallback.1);
                partial += table.get(a, b);
                dates.push(b + 1);
                a = b + 1;
            }
            partial += table.get(a, t_len - 1);
            Ok((BreakSet::new(dates, t_len)?, partial))
        })
        .collect()
}

/// Search target for [`estimate_breaks`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum BreakSearch {
    /// All admissible `k`-break sets.
    Global { k: usize },
    /// One extra break inside regime `regime` (zero-based) of `base`, at a date in `window`.
    AddOne {
        base: BreakSet,
        regime: usize,
        window: RangeInclusive<usize>,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SearchOptions {
    /// Put the panel's observed factors into `Z̄`.
    pub observed: bool,
    /// Add one intercept per regime to `Z̄`.
    pub breaking_constant: bool,
    pub max_iter: usize,
}

impl Default for SearchOptions {
    fn default() -> Self {
        Self {
            observed: true,
            breaking_constant: false,
            max_iter: 10,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SearchResult {
    pub best_breaks: BreakSet,
    /// Search objective at `best_breaks` (regime-local averages, `β̂` fixed at `search_beta`).
    pub best_ssr: f64,
    pub per_k_optima: Vec<(BreakSet, f64)>,
    pub iterations: usize,
    pub converged: bool,
    pub previous_breaks: Option<BreakSet>,
    /// `β̂` held fixed during the last search pass; `None` when `X` was treated as breaking.
    pub search_beta: Option<DVector<f64>>,
    /// Segment evaluations in the last search pass.
    pub evaluations: usize,
    /// Joint fit at `best_breaks` with the full `Z̄(𝒯̂)`.
    pub fit: FitResult,
}

/// Serializable digest of a [`SearchResult`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchSummary {
    pub breaks: Vec<usize>,
    pub ssr: f64,
    pub per_k_optima: Vec<(Vec<usize>, f64)>,
    pub iterations: usize,
    pub converged: bool,
    pub previous_breaks: Option<Vec<usize>>,
}

impl SearchResult {
    pub fn summary(&self) -> SearchSummary {
        SearchSummary {
            breaks: self.best_breaks.dates().to_vec(),
            ssr: self.best_ssr,
            per_k_optima: self
                .per_k_optima
                .iter()
                .map(|(b, s)| (b.dates().to_vec(), *s))
                .collect(),
            iterations: self.iterations,
            converged: self.converged,
            previous_breaks: self.previous_breaks.as_ref().map(|b| b.dates().to_vec()),
        }
    }
}

/// Pure-change view of the panel: `X` breaking alongside `W` when `beta` is `None`,
/// otherwise target `y − Xβ` with `W` alone.
pub fn pure_change_panel(data: &PanelDataset, beta: Option<&DVector<f64>>) -> Result<PanelDataset> {
    let n = data.n_units();
    let (y, w, w_names) = match beta {
        None => {
            let w = (0..n)
                .map(|i| {
                    let (xi, wi) = (&data.x()[i], &data.w()[i]);
                    let mut m = DMatrix::zeros(xi.nrows(), xi.ncols() + wi.ncols());
                    m.columns_mut(0, xi.ncols()).copy_from(xi);
                    m.columns_mut(xi.ncols(), wi.ncols()).copy_from(wi);
                    m
                })
                .collect();
            let names = data.x_names().iter().chain(data.w_names()).cloned().collect();
            (data.y().clone(), w, names)
        }
        Some(beta) => {
            let mut y = data.y().clone();
            for i in 0..n {
                let xb = &data.x()[i] * beta;
                let mut col = y.column_mut(i);
                col -= xb;
            }
            (y, data.w().to_vec(), data.w_names().to_vec())
        }
    };
    PanelDataset::new(PanelParts {
        y,
        x: vec![DMatrix::zeros(data.n_periods(), 0); n],
        w,
        observed_factors: Some(data.observed_factors().clone()),
        unit_labels: Some(data.unit_labels().to_vec()),
        period_labels: Some(data.period_labels().to_vec()),
        x_names: Some(Vec::new()),
        w_names: Some(w_names),
        factor_names: Some(data.factor_names().to_vec()),
    })
}

/// Fit of the search objective at a given break set, through explicit projection.
pub fn pure_change_fit(
    data: &PanelDataset,
    beta: Option<&DVector<f64>>,
    breaks: &BreakSet,
    opts: &SearchOptions,
) -> Result<FitResult> {
    let view = pure_change_panel(data, beta)?;
    let avg = build_averages(&view, breaks, &AverageOptions::w_only(opts.observed, opts.breaking_constant));
    fit(&project(&view, &avg, breaks)?)
}

/// Joint fit with the full `Z̄(𝒯)`.
pub fn full_fit(data: &PanelDataset, breaks: &BreakSet, opts: &SearchOptions) -> Result<FitResult> {
    let avg = build_averages(data, breaks, &AverageOptions::full(opts.observed, opts.breaking_constant));
    fit(&project(data, &avg, breaks)?)
}

/// Segment engine for the search objective.
pub fn search_engine(data: &PanelDataset, beta: Option<&DVector<f64>>, opts: &SearchOptions) -> Result<SegmentEngine> {
    let view = pure_change_panel(data, beta)?;
    let empty = BreakSet::empty(data.n_periods());
    let avg = build_averages(&view, &empty, &AverageOptions::w_only(opts.observed, opts.breaking_constant));
    Ok(SegmentEngine::new(view.y(), view.w(), avg.z_bar))
}

struct Pass {
    breaks: BreakSet,
    ssr: f64,
    per_k: Vec<(BreakSet, f64)>,
    evaluations: usize,
}

fn search_pass(
    data: &PanelDataset,
    beta: Option<&DVector<f64>>,
    search: &BreakSearch,
    trim: &Trimming,
    opts: &SearchOptions,
) -> Result<Pass> {
    let engine = search_engine(data, beta, opts)?;
    match search {
        BreakSearch::Global { k } => {
            let table = SegmentTable::build(&engine, trim.min_length(data.n_periods()));
            let per_k = dp_minimize(&table, *k)?;
            let (breaks, ssr) = per_k[*k].clone();
            Ok(Pass {
                breaks,
                ssr,
                per_k,
                evaluations: engine.evaluations(),
            })
        }
        BreakSearch::AddOne { base, regime, window } => {
            let (breaks, ssr) = add_one(&engine, base, *regime, window)?;
            Ok(Pass {
                per_k: vec![(breaks.clone(), ssr)],
                breaks,
                ssr,
                evaluations: engine.evaluations(),
            })
        }
    }
}

/// Best single split of one regime of `base`, other regimes held fixed.
fn add_one(
    engine: &SegmentEngine,
    base: &BreakSet,
    regime: usize,
    window: &RangeInclusive<usize>,
) -> Result<(BreakSet, f64)> {
    let regimes = base.regimes();
    let target = regimes
        .get(regime)
        .ok_or_else(|| Error::InvalidArgument(format!("regime {regime} does not exist")))?;
    let (lo, hi) = (*window.start(), *window.end());
    if lo <= target.start || hi >= target.end || lo > hi {
        return Err(Error::Infeasible(format!(
            "empty search window in regime {}",
            regime + 1
        )));
    }
    let fixed: Vec<Option<f64>> = regimes
        .iter()
        .enumerate()
        .map(|(j, r)| if j == regime { Some(0.0) } else { engine.ssr(r.start, r.end - 1) })
        .collect();
    let costs: Vec<(usize, f64)> = (lo..=hi)
        .map(|tau| {
            let mut total = 0.0;
            for (j, r) in regimes.iter().enumerate() {
                let part = if j == regime {
                    match (engine.ssr(r.start, tau - 1), engine.ssr(tau, r.end - 1)) {
                        (Some(a), Some(b)) => {
                            total += a;
                            Some(b)
                        }
                        _ => None,
                    }
                } else {
                    fixed[j]
                };
                match part {
                    Some(v) => total += v,
                    None => return (tau, f64::INFINITY),
                }
            }
            (tau, total)
        })
        .collect();
    let min = costs.iter().map(|c| c.1).fold(f64::INFINITY, f64::min);
    if !min.is_finite() {
        return Err(Error::Infeasible(format!(
            "no split of regime {} can be fitted",
            regime + 1
        )));
    }
    let threshold = min + TIE_TOLERANCE * min.abs();
    let (tau, ssr) = *costs.iter().find(|c| c.1 <= threshold).expect("minimum attained");
    Ok((base.with_added(tau)?, ssr))
}

/// `β̂` from `y − W(𝒯)δ̂` on `X`, both projected off `(X̄, observed, indicators)`.
fn update_beta(
    data: &PanelDataset,
    breaks: &BreakSet,
    delta_w: &DVector<f64>,
    opts: &SearchOptions,
) -> Result<DVector<f64>> {
    let regime_of = breaks.regime_of_period();
    let mut y = data.y().clone();
    for i in 0..data.n_units() {
        let wi = expand_by_regime(&data.w()[i], &regime_of, breaks.n_regimes());
        let mut col = y.column_mut(i);
        col -= wi * delta_w;
    }
    let residual_panel = data.with_y(y)?;
    let avg = build_averages(&residual_panel, breaks, &AverageOptions::x_only(opts.observed, opts.breaking_constant));
    let d = project(&residual_panel, &avg, breaks)?;
    let p_x = data.p_x();
    let mut sxx = DMatrix::zeros(p_x, p_x);
    let mut sxy = DVector::zeros(p_x);
    for i in 0..data.n_units() {
        sxx += d.x[i].tr_mul(&d.x[i]);
        sxy += d.x[i].tr_mul(&d.y.column(i));
    }
    crate::linalg::ensure_well_posed(&sxx, &d.raw_scale_x, PD_TOLERANCE, "X̃'X̃")?;
    solve_spd_vec(&sxx, &sxy, "X̃'X̃")
}

/// `δ̂_w` per regime from the pure-change fit in which `X` also breaks.
fn breaking_w_coefficients(data: &PanelDataset, breaks: &BreakSet, opts: &SearchOptions) -> Result<DVector<f64>> {
    let f = pure_change_fit(data, None, breaks, opts)?;
    let (p_x, p_w) = (data.p_x(), data.p_w());
    let block = p_x + p_w;
    Ok(DVector::from_fn(breaks.n_regimes() * p_w, |r, _| {
        let (j, c) = (r / p_w, r % p_w);
        f.delta[j * block + p_x + c]
    }))
}

/// Estimates break dates by the iterative algorithm for partial structural change:
/// (1) search with `X` breaking too, (2) update `β̂`, (3) search on `y − Xβ̂`,
/// (4) joint fit, (5) repeat 3–4 until the break set stops changing.
pub fn estimate_breaks(
    data: &PanelDataset,
    search: &BreakSearch,
    trim: &Trimming,
    opts: &SearchOptions,
) -> Result<SearchResult> {
    data.check_estimable()?;
    let t_len = data.n_periods();
    if let BreakSearch::Global { k } = search {
        trim.check_capacity(*k)?;
        if *k == 0 {
            let empty = BreakSet::empty(t_len);
            let fit = full_fit(data, &empty, opts)?;
            return Ok(SearchResult {
                best_breaks: empty.clone(),
                best_ssr: fit.ssr,
                per_k_optima: vec![(empty, fit.ssr)],
                iterations: 0,
                converged: true,
                previous_breaks: None,
                search_beta: None,
                evaluations: 0,
                fit,
            });
        }
    }

    let first = search_pass(data, None, search, trim, opts)?;
    if data.p_x() == 0 {
        let fit = full_fit(data, &first.breaks, opts)?;
        return Ok(SearchResult {
            best_breaks: first.breaks,
            best_ssr: first.ssr,
            per_k_optima: first.per_k,
            iterations: 1,
            converged: true,
            previous_breaks: None,
            search_beta: None,
            evaluations: first.evaluations,
            fit,
        });
    }

    let delta_w = breaking_w_coefficients(data, &first.breaks, opts)?;
    let mut beta = update_beta(data, &first.breaks, &delta_w, opts)?;
    let mut previous = first.breaks;
    let mut iterations = 0;
    loop {
        iterations += 1;
        let pass = search_pass(data, Some(&beta), search, trim, opts)?;
        let fit = full_fit(data, &pass.breaks, opts)?;
        let converged = pass.breaks == previous;
        if converged || iterations >= opts.max_iter.max(1) {
            return Ok(SearchResult {
                best_breaks: pass.breaks,
                best_ssr: pass.ssr,
                per_k_optima: pass.per_k,
                iterations,
                converged,
                previous_breaks: Some(previous),
                search_beta: Some(beta),
                evaluations: pass.evaluations,
                fit,
            });
        }
        beta = fit.beta.clone();
        previous = pass.breaks;
    }
}
