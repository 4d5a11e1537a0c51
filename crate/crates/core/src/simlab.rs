//! Synthetic panels with interactive effects and planted breaks, and Monte Carlo drivers.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::inference::confidence::break_confidence;
use crate::inference::critical::CriticalValueTable;
use crate::inference::hac::{hac_covariance, HacSpec};
use crate::inference::testing::{
    estimate_num_breaks, f_known, seq_f, sup_f, wdmax_f, AlphaPolicy, SeqMode, SupMethod, TestOptions, WdmaxWeights,
};
use crate::panel::{BreakSet, PanelDataset, PanelParts, Trimming};
use crate::rng::{self, var};
use crate::search::{estimate_breaks, full_fit, BreakSearch, SearchOptions};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind")]
pub enum FactorProcess {
    /// `f_t ≡ 1` in every factor.
    Constant,
    /// Stationary `f_t = ρ f_{t−1} + √(1−ρ²) sd z_t`.
    Ar1 { rho: f64, sd: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind")]
pub enum NoiseProcess {
    Iid,
    Ar1 { rho: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseSpec {
    pub sd: f64,
    pub process: NoiseProcess,
    /// Unit variances drawn from `U[1 − h, 1 + h]`.
    #[serde(default)]
    pub heteroskedasticity: f64,
}

impl NoiseSpec {
    pub fn iid(sd: f64) -> Self {
        Self { sd, process: NoiseProcess::Iid, heteroskedasticity: 0.0 }
    }
}

/// Loadings `γ_i = γ̄ + η_i` with `η_i ~ N(0, dispersion²)` entrywise.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LoadingSpec {
    pub mean: f64,
    pub dispersion: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DgpSpec {
    pub n: usize,
    pub t: usize,
    pub p_x: usize,
    pub p_w: usize,
    /// Number of unobserved factors.
    pub m: usize,
    #[serde(default)]
    pub breaks: Vec<usize>,
    pub beta: Vec<f64>,
    /// One row of `p_w` coefficients per regime.
    pub deltas: Vec<Vec<f64>>,
    /// Trimming under which the planted breaks must be admissible.
    pub epsilon: f64,
    pub factors: FactorProcess,
    pub loading_y: LoadingSpec,
    pub loading_x: LoadingSpec,
    pub loading_w: LoadingSpec,
    pub noise_y: NoiseSpec,
    pub noise_x: NoiseSpec,
    pub noise_w: NoiseSpec,
    pub seed: u64,
}

/// True parameters of a generated panel, kept apart from the data handed to estimators.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Truth {
    breaks: BreakSet,
    beta: Vec<f64>,
    deltas: Vec<Vec<f64>>,
}

impl Truth {
    pub fn breaks(&self) -> &BreakSet {
        &self.breaks
    }
    pub fn beta(&self) -> &[f64] {
        &self.beta
    }
    pub fn deltas(&self) -> &[Vec<f64>] {
        &self.deltas
    }
}

impl DgpSpec {
    /// `p_x = p_w = m = 2`, AR(1) factors, no breaks.
    pub fn null(n: usize, t: usize, seed: u64) -> Self {
        Self {
            n,
            t,
            p_x: 2,
            p_w: 2,
            m: 2,
            breaks: Vec::new(),
            beta: vec![1.0, 1.0],
            deltas: vec![vec![1.0, 1.0]],
            epsilon: 0.15,
            factors: FactorProcess::Ar1 { rho: 0.5, sd: 1.0 },
            loading_y: LoadingSpec { mean: 1.0, dispersion: 0.5 },
            loading_x: LoadingSpec { mean: 1.0, dispersion: 0.5 },
            loading_w: LoadingSpec { mean: 1.0, dispersion: 0.5 },
            noise_y: NoiseSpec::iid(1.0),
            noise_x: NoiseSpec::iid(1.0),
            noise_w: NoiseSpec::iid(1.0),
            seed,
        }
    }

    /// [`DgpSpec::null`] with breaks at `dates`; regime `j` has `δ_j = δ_1 + j·shift·1/√p_w`,
    /// so each `‖Δ_j‖ = shift` (in units of the error standard deviation).
    pub fn with_breaks(mut self, dates: &[usize], shift: f64) -> Self {
        let step = shift / (self.p_w as f64).sqrt();
        self.breaks = dates.to_vec();
        self.deltas = (0..=dates.len())
            .map(|j| vec![1.0 + j as f64 * step; self.p_w])
            .collect();
        self
    }

    pub fn validate(&self) -> Result<BreakSet> {
        let bad = |m: String| Err(Error::Config(m));
        if self.n < 2 || self.t < 2 {
            return bad("need N ≥ 2 and T ≥ 2".into());
        }
        if self.p_w == 0 {
            return bad("need at least one breaking regressor".into());
        }
        let cap = if self.p_x > 0 { self.p_x.min(self.p_w) } else { self.p_w };
        if self.m > cap {
            return bad(format!("m = {} factors exceeds min(p_x, p_w) = {cap}; the rank condition fails", self.m));
        }
        if self.beta.len() != self.p_x {
            return bad(format!("beta has {} entries, expected {}", self.beta.len(), self.p_x));
        }
        if self.deltas.len() != self.breaks.len() + 1 || self.deltas.iter().any(|d| d.len() != self.p_w) {
            return bad("deltas need one row of p_w entries per regime".into());
        }
        let trim = Trimming::new(self.epsilon)?;
        let breaks = BreakSet::new(self.breaks.clone(), self.t)?;
        if !trim.is_admissible(&breaks) {
            return bad(format!("planted breaks are not admissible under epsilon = {}", self.epsilon));
        }
        for (name, s) in [("noise_y", &self.noise_y), ("noise_x", &self.noise_x), ("noise_w", &self.noise_w)] {
            if !(s.sd >= 0.0) || !(0.0..1.0).contains(&s.heteroskedasticity) {
                return bad(format!("{name}: need sd ≥ 0 and heteroskedasticity in [0, 1)"));
            }
            if let NoiseProcess::Ar1 { rho } = s.process {
                if !(rho.abs() < 1.0) {
                    return bad(format!("{name}: AR coefficient must lie in (−1, 1)"));
                }
            }
        }
        if let FactorProcess::Ar1 { rho, .. } = self.factors {
            if !(rho.abs() < 1.0) {
                return bad("factor AR coefficient must lie in (−1, 1)".into());
            }
        }
        Ok(breaks)
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("spec serializes")
    }
}

/// Mean loading matrix `m × p` with entries `mean·0.5^{|a−c|}`; full row rank for `m ≤ p`.
fn mean_loadings(mean: f64, m: usize, p: usize) -> DMatrix<f64> {
    DMatrix::from_fn(m, p, |a, c| mean * 0.5f64.powi((a as i32 - c as i32).abs()))
}

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    StandardNormal.sample(rng)
}

/// `T × cols` noise drawn unit by unit from one stream.
fn noise(rng: &mut ChaCha8Rng, spec: &NoiseSpec, t_len: usize, cols: usize) -> DMatrix<f64> {
    let h = spec.heteroskedasticity;
    let scale = if h > 0.0 { spec.sd * rng.random_range(1.0 - h..=1.0 + h).sqrt() } else { spec.sd };
    let mut out = DMatrix::zeros(t_len, cols);
    for c in 0..cols {
        match spec.process {
            NoiseProcess::Iid => {
                for t in 0..t_len {
                    out[(t, c)] = scale * normal(rng);
                }
            }
            NoiseProcess::Ar1 { rho } => {
                let innov = (1.0 - rho * rho).sqrt();
                let mut e = normal(rng);
                for t in 0..t_len {
                    if t > 0 {
                        e = rho * e + innov * normal(rng);
                    }
                    out[(t, c)] = scale * e;
                }
            }
        }
    }
    out
}

fn loadings(rng: &mut ChaCha8Rng, spec: &LoadingSpec, mean: &DMatrix<f64>) -> DMatrix<f64> {
    mean.map(|v| v + spec.dispersion * normal(rng))
}

/// Draws replication `rep` of the design.
pub fn generate_rep(spec: &DgpSpec, rep: u64) -> Result<(PanelDataset, Truth)> {
    let breaks = spec.validate()?;
    let (n, t_len, m) = (spec.n, spec.t, spec.m);
    let mut frng = rng::stream(spec.seed, rep, rng::COMMON, var::FACTORS);
    let mut f = DMatrix::zeros(t_len, m);
    for a in 0..m {
        match spec.factors {
            FactorProcess::Constant => f.column_mut(a).fill(1.0),
            FactorProcess::Ar1 { rho, sd } => {
                let innov = (1.0 - rho * rho).sqrt() * sd;
                let mut v = sd * normal(&mut frng);
                for t in 0..t_len {
                    if t > 0 {
                        v = rho * v + innov * normal(&mut frng);
                    }
                    f[(t, a)] = v;
                }
            }
        }
    }
    let gy_mean = mean_loadings(spec.loading_y.mean, m, 1);
    let gx_mean = mean_loadings(spec.loading_x.mean, m, spec.p_x);
    let gw_mean = mean_loadings(spec.loading_w.mean, m, spec.p_w);
    let regime = breaks.regime_of_period();
    let beta = DVector::from_column_slice(&spec.beta);
    let deltas: Vec<DVector<f64>> = spec.deltas.iter().map(|d| DVector::from_column_slice(d)).collect();

    let units: Vec<(DMatrix<f64>, DMatrix<f64>, DVector<f64>)> = (0..n as u64)
        .map(|i| {
            let lrng = |v| rng::stream(spec.seed, rep, i, v);
            let gy = loadings(&mut lrng(var::LOADING_Y), &spec.loading_y, &gy_mean);
            let gx = loadings(&mut lrng(var::LOADING_X), &spec.loading_x, &gx_mean);
            let gw = loadings(&mut lrng(var::LOADING_W), &spec.loading_w, &gw_mean);
            let xi = &f * gx + noise(&mut lrng(var::NOISE_X), &spec.noise_x, t_len, spec.p_x);
            let wi = &f * gw + noise(&mut lrng(var::NOISE_W), &spec.noise_w, t_len, spec.p_w);
            let e = noise(&mut lrng(var::NOISE_Y), &spec.noise_y, t_len, 1);
            let common = &f * gy;
            let yi = DVector::from_fn(t_len, |t, _| {
                let xb = (xi.row(t) * &beta)[(0, 0)];
                let wd = (wi.row(t) * &deltas[regime[t]])[(0, 0)];
                xb + wd + common[(t, 0)] + e[(t, 0)]
            });
            (xi, wi, yi)
        })
        .collect();
    let mut y = DMatrix::zeros(t_len, n);
    let mut x = Vec::with_capacity(n);
    let mut w = Vec::with_capacity(n);
    for (i, (xi, wi, yi)) in units.into_iter().enumerate() {
        y.set_column(i, &yi);
        x.push(xi);
        w.push(wi);
    }
    let data = PanelDataset::new(PanelParts { y, x, w, ..Default::default() })?;
    Ok((data, Truth { breaks, beta: spec.beta.clone(), deltas: spec.deltas.clone() }))
}

pub fn generate(spec: &DgpSpec) -> Result<(PanelDataset, Truth)> {
    generate_rep(spec, 0)
}

/// Which test a size or power experiment runs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "test")]
pub enum TestChoice {
    FKnown { breaks: Vec<usize> },
    SupF { k: usize },
    Wdmax { k_max: usize, weights: WdmaxWeights },
    /// `F(k+1|k)` at the estimated `k`-break set.
    SeqF { k: usize, mode: SeqMode },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentKind {
    Size,
    Power,
    HitRate,
    Khat,
    Coverage,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToolboxConfig {
    pub epsilon: f64,
    pub bandwidth: Option<usize>,
    pub level: f64,
    pub search: SearchOptions,
    pub test: Option<TestChoice>,
    /// Break count passed to the date estimator (hit rate and coverage); defaults to the design's.
    pub k: Option<usize>,
    pub k_cap: usize,
    pub seq_mode: SeqMode,
    pub ci_level: f64,
    #[serde(default)]
    pub sup: SupMethod,
}

impl Default for ToolboxConfig {
    fn default() -> Self {
        Self {
            epsilon: 0.15,
            bandwidth: None,
            level: 0.05,
            search: SearchOptions::default(),
            test: None,
            k: None,
            k_cap: 4,
            seq_mode: SeqMode::default(),
            ci_level: 0.95,
            sup: SupMethod::default(),
        }
    }
}

impl ToolboxConfig {
    fn test_options(&self) -> Result<TestOptions> {
        Ok(TestOptions {
            trim: Trimming::new(self.epsilon)?,
            bandwidth: self.bandwidth,
            level: self.level,
            search: self.search,
            sup: self.sup,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedOutcome {
    pub rep: u64,
    /// Binary score (rejection, exact hit, k̂ = k⁰, coverage).
    pub success: Option<bool>,
    /// `Σ_j |T̂_j − T⁰_j|` for date experiments, `k̂` for khat, the statistic for tests.
    pub value: Option<f64>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Rate {
    pub name: String,
    pub estimate: f64,
    pub se: f64,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McReport {
    pub kind: ExperimentKind,
    pub reps: usize,
    pub spec: DgpSpec,
    pub config: ToolboxConfig,
    pub outcomes: Vec<SeedOutcome>,
    pub rates: Vec<Rate>,
    pub failures: usize,
    pub failure_rate: f64,
}

impl McReport {
    pub fn rate(&self, name: &str) -> Option<&Rate> {
        self.rates.iter().find(|r| r.name == name)
    }

    /// Plain-text summary.
    pub fn table(&self) -> String {
        let mut out = format!(
            "{:?} experiment: N = {}, T = {}, breaks = {:?}, {} replications, {} failed\n",
            self.kind, self.spec.n, self.spec.t, self.spec.breaks, self.reps, self.failures
        );
        out.push_str(&format!("{:<24}{:>12}{:>12}{:>10}\n", "measure", "estimate", "MC s.e.", "count"));
        for r in &self.rates {
            out.push_str(&format!("{:<24}{:>12.4}{:>12.4}{:>10}\n", r.name, r.estimate, r.se, r.count));
        }
        out
    }
}

/// Pairwise summation, so the sum does not depend on accumulation order beyond the input order.
pub fn pairwise_sum(v: &[f64]) -> f64 {
    if v.len() <= 8 {
        return v.iter().sum();
    }
    let mid = v.len() / 2;
    pairwise_sum(&v[..mid]) + pairwise_sum(&v[mid..])
}

fn binary_rate(name: &str, outcomes: &[SeedOutcome]) -> Rate {
    let scored: Vec<bool> = outcomes.iter().filter_map(|o| o.success).collect();
    let count = scored.len();
    let hits = scored.iter().filter(|&&b| b).count();
    let p = if count > 0 { hits as f64 / count as f64 } else { f64::NAN };
    Rate { name: name.into(), estimate: p, se: (p * (1.0 - p) / count as f64).sqrt(), count }
}

fn mean_rate(name: &str, outcomes: &[SeedOutcome]) -> Rate {
    let v: Vec<f64> = outcomes.iter().filter_map(|o| o.value).collect();
    let count = v.len();
    let mean = pairwise_sum(&v) / count as f64;
    let dev: Vec<f64> = v.iter().map(|x| (x - mean).powi(2)).collect();
    let var = if count > 1 { pairwise_sum(&dev) / (count - 1) as f64 } else { f64::NAN };
    Rate { name: name.into(), estimate: mean, se: (var / count as f64).sqrt(), count }
}

fn run_one(
    kind: ExperimentKind,
    data: &PanelDataset,
    truth: &Truth,
    config: &ToolboxConfig,
    table: &CriticalValueTable,
) -> Result<(Option<bool>, Option<f64>)> {
    let opts = config.test_options()?;
    let k_true = truth.breaks().k();
    match kind {
        ExperimentKind::Size | ExperimentKind::Power => {
            let test = config
                .test
                .as_ref()
                .ok_or_else(|| Error::Config("size and power experiments need a `test`".into()))?;
            let report = match test {
                TestChoice::FKnown { breaks } => {
                    let b = BreakSet::new(breaks.clone(), data.n_periods())?;
                    let fit = full_fit(data, &b, &opts.search)?;
                    let cov = hac_covariance(&fit, &HacSpec::resolve(opts.bandwidth, data.n_periods()))?;
                    f_known(&fit, &cov, opts.level)?
                }
                TestChoice::SupF { k } => sup_f(data, *k, &opts, table)?,
                TestChoice::Wdmax { k_max, weights } => wdmax_f(data, *k_max, *weights, &opts, table)?,
                TestChoice::SeqF { k, mode } => {
                    let base = if *k == 0 {
                        BreakSet::empty(data.n_periods())
                    } else {
                        estimate_breaks(data, &BreakSearch::Global { k: *k }, &opts.trim, &opts.search)?.best_breaks
                    };
                    seq_f(data, &base, *mode, &opts, table)?
                }
            };
            Ok((Some(report.reject), Some(report.statistic)))
        }
        ExperimentKind::HitRate | ExperimentKind::Coverage => {
            let k = config.k.unwrap_or(k_true);
            if k != k_true || k == 0 {
                return Err(Error::Config("date experiments need k equal to the planted count, at least 1".into()));
            }
            let est = estimate_breaks(data, &BreakSearch::Global { k }, &opts.trim, &opts.search)?;
            let dist: f64 = est
                .best_breaks
                .dates()
                .iter()
                .zip(truth.breaks().dates())
                .map(|(a, b)| (*a as f64 - *b as f64).abs())
                .sum();
            if kind == ExperimentKind::HitRate {
                return Ok((Some(dist == 0.0), Some(dist)));
            }
            let cov = hac_covariance(&est.fit, &HacSpec::resolve(opts.bandwidth, data.n_periods()))?;
            let ci = break_confidence(&est.fit, &cov, config.ci_level)?;
            let covered = ci
                .intervals
                .iter()
                .zip(truth.breaks().dates())
                .all(|(iv, &d)| iv.lo <= d && d <= iv.hi);
            let width = ci.intervals.iter().map(|iv| (iv.hi - iv.lo) as f64).sum::<f64>();
            Ok((Some(covered), Some(width)))
        }
        ExperimentKind::Khat => {
            let count = estimate_num_breaks(
                data,
                AlphaPolicy::Fixed(opts.level),
                config.k_cap,
                config.seq_mode,
                &opts,
                table,
            )?;
            Ok((Some(count.k_hat == k_true), Some(count.k_hat as f64)))
        }
    }
}

/// Runs `reps` replications of `spec` (replication `r` uses the stream key `(seed, r)`).
pub fn run_experiment(
    kind: ExperimentKind,
    spec: &DgpSpec,
    config: &ToolboxConfig,
    reps: usize,
    table: &CriticalValueTable,
) -> Result<McReport> {
    if reps < 100 {
        return Err(Error::InvalidArgument(format!("experiments need at least 100 replications, got {reps}")));
    }
    spec.validate()?;
    config.test_options()?;
    let outcomes: Vec<SeedOutcome> = (0..reps as u64)
        .into_par_iter()
        .map(|rep| {
            let result = generate_rep(spec, rep).and_then(|(data, truth)| run_one(kind, &data, &truth, config, table));
            match result {
                Ok((success, value)) => SeedOutcome { rep, success, value, error: None },
                Err(e) => SeedOutcome { rep, success: None, value: None, error: Some(e.to_string()) },
            }
        })
        .collect();
    let failures = outcomes.iter().filter(|o| o.error.is_some()).count();
    let (binary, mean) = match kind {
        ExperimentKind::Size | ExperimentKind::Power => ("rejection", "mean statistic"),
        ExperimentKind::HitRate => ("exact hit", "mean |T̂ − T⁰|"),
        ExperimentKind::Khat => ("k̂ = k⁰", "mean k̂"),
        ExperimentKind::Coverage => ("coverage", "mean width"),
    };
    let rates = vec![binary_rate(binary, &outcomes), mean_rate(mean, &outcomes)];
    Ok(McReport {
        kind,
        reps,
        spec: spec.clone(),
        config: config.clone(),
        outcomes,
        rates,
        failures,
        failure_rate: failures as f64 / reps as f64,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn noiseless_without_loadings_is_exact() {
        let mut spec = DgpSpec::null(5, 12, 1).with_breaks(&[6], 1.0);
        let zero = LoadingSpec { mean: 0.0, dispersion: 0.0 };
        spec.loading_y = zero;
        spec.noise_y = NoiseSpec::iid(0.0);
        let (data, truth) = generate(&spec).unwrap();
        for i in 0..5 {
            for t in 0..12 {
                let d = &truth.deltas()[usize::from(t >= 6)];
                let expect = data.x()[i][(t, 0)] + data.x()[i][(t, 1)] + d[0] * data.w()[i][(t, 0)] + d[1] * data.w()[i][(t, 1)];
                assert!((data.y()[(t, i)] - expect).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn same_seed_same_panel() {
        let spec = DgpSpec::null(6, 10, 4);
        assert_eq!(generate_rep(&spec, 3).unwrap().0, generate_rep(&spec, 3).unwrap().0);
        assert_ne!(generate_rep(&spec, 3).unwrap().0, generate_rep(&spec, 4).unwrap().0);
    }

    #[test]
    fn constant_factor_is_unit_effect() {
        let mut spec = DgpSpec::null(4, 8, 2);
        spec.m = 1;
        spec.factors = FactorProcess::Constant;
        spec.noise_y = NoiseSpec::iid(0.0);
        let (data, _) = generate(&spec).unwrap();
        // y − x'β − w'δ is constant over time within a unit.
        for i in 0..4 {
            let r: Vec<f64> = (0..8)
                .map(|t| data.y()[(t, i)] - data.x()[i].row(t).sum() - data.w()[i].row(t).sum())
                .collect();
            assert!(r.iter().all(|v| (v - r[0]).abs() < 1e-12));
        }
    }

    #[test]
    fn rank_condition_is_enforced() {
        let mut spec = DgpSpec::null(4, 8, 2);
        spec.m = 3;
        assert!(matches!(spec.validate(), Err(Error::Config(_))));
    }

    #[test]
    fn toml_round_trip() {
        let spec = DgpSpec::null(50, 20, 9).with_breaks(&[10], 2.0);
        assert_eq!(DgpSpec::from_toml(&spec.to_toml()).unwrap(), spec);
    }

    #[test]
    fn pairwise_sum_small_and_large() {
        let v: Vec<f64> = (1..=100).map(f64::from).collect();
        assert_eq!(pairwise_sum(&v), 5050.0);
    }
}
