//! Command-line front end.

use std::fmt::Write as _;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use nalgebra::DVector;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Error, Result};
use crate::inference::confidence::{break_confidence, BreakConfidence};
use crate::inference::critical::{simulate_critical_values, CriticalValueTable, CvSimSpec};
use crate::inference::hac::{hac_covariance, CovarianceEstimate, HacSpec};
use crate::inference::testing::{
    estimate_num_breaks, f_known, seq_f, sup_f, wdmax_f, AlphaPolicy, SeqMode, SupMethod, TestOptions, TestReport,
    WdmaxWeights,
};
use crate::ingest::{load_panel_path, write_panel, PanelSchema};
use crate::panel::{BreakSet, PanelDataset, Trimming};
use crate::search::{estimate_breaks, full_fit, BreakSearch, SearchOptions};
use crate::simlab::{generate, run_experiment, DgpSpec, ExperimentKind, TestChoice, ToolboxConfig};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Parser)]
#[command(name = "panelbreak", version, about = "Structural breaks in panels with interactive effects")]
pub struct Cli {
    /// Worker threads (results do not depend on this).
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// TOML file whose entries override the command-line flags.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Test for breaks.
    Test {
        #[arg(value_enum)]
        test: TestName,
        #[command(flatten)]
        args: RunArgs,
    },
    /// Estimate break dates and coefficients.
    Estimate(RunArgs),
    /// Confidence intervals for break dates.
    Ci(RunArgs),
    /// Estimate the number of breaks by sequential testing.
    Khat(RunArgs),
    /// Critical-value tables.
    Cv {
        #[command(subcommand)]
        action: CvAction,
    },
    /// Monte Carlo experiments on synthetic panels.
    Simulate(SimArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TestName {
    Supf,
    Wdmax,
    Seqf,
    Fknown,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OutputFormat {
    Json,
    Text,
    Both,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CvSource {
    Embedded,
    Simulate,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum WeightsArg {
    Unit,
    Matched,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SupArg {
    Estimated,
    Exhaustive,
}

impl From<SupArg> for SupMethod {
    fn from(a: SupArg) -> Self {
        match a {
            SupArg::Estimated => SupMethod::Estimated,
            SupArg::Exhaustive => SupMethod::Exhaustive,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SeqModeArg {
    Maxf,
    Minssr,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentArg {
    Size,
    Power,
    HitRate,
    Khat,
    Coverage,
}

/// Options shared by the estimation and testing commands. Every field can also be set in the config file.
#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunArgs {
    /// Long-format CSV panel.
    #[arg(long)]
    pub input: Option<PathBuf>,
    #[arg(long)]
    pub unit_col: Option<String>,
    #[arg(long)]
    pub period_col: Option<String>,
    #[arg(long)]
    pub y: Option<String>,
    /// Regressors with stable coefficients.
    #[arg(long, value_delimiter = ',')]
    pub x: Option<Vec<String>>,
    /// Regressors with breaking coefficients.
    #[arg(long, value_delimiter = ',')]
    pub w: Option<Vec<String>>,
    /// Observed common factors, constant within a period.
    #[arg(long, value_delimiter = ',')]
    pub factors: Option<Vec<String>>,
    /// Add one constant per regime to the cross-section averages.
    #[arg(long)]
    pub breaking_constant: Option<bool>,
    /// Number of breaks (estimate, ci, supf) or the largest number considered (wdmax, khat).
    #[arg(long)]
    pub breaks: Option<usize>,
    #[arg(long)]
    pub kmax: Option<usize>,
    /// Known break dates, as period positions (the last period of each regime).
    #[arg(long, value_delimiter = ',')]
    pub dates: Option<Vec<usize>>,
    #[arg(long)]
    pub trim: Option<f64>,
    #[arg(long)]
    pub alpha: Option<f64>,
    /// `α = K/(NT)` for sequential testing.
    #[arg(long)]
    pub alpha_shrink: Option<f64>,
    #[arg(long)]
    pub bandwidth: Option<usize>,
    #[arg(long, value_enum)]
    pub weights: Option<WeightsArg>,
    #[arg(long, value_enum)]
    pub seq_mode: Option<SeqModeArg>,
    /// Locate supF at the estimated dates or by searching every admissible break set.
    #[arg(long, value_enum)]
    pub sup: Option<SupArg>,
    /// Confidence level for break-date intervals.
    #[arg(long)]
    pub level: Option<f64>,
    #[arg(long)]
    pub max_iter: Option<usize>,
    #[arg(long, value_enum)]
    pub cv: Option<CvSource>,
    /// Critical-value table file (overrides the embedded one).
    #[arg(long)]
    pub cv_table: Option<PathBuf>,
    #[arg(long)]
    pub cv_reps: Option<usize>,
    #[arg(long)]
    pub cv_grid: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, value_enum)]
    pub format: Option<OutputFormat>,
    /// Write the JSON report here instead of standard output.
    #[arg(long)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum CvAction {
    /// Simulate a critical-value table.
    Simulate(CvArgs),
}

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CvArgs {
    #[arg(long)]
    pub max_pw: Option<usize>,
    #[arg(long, value_delimiter = ',')]
    pub epsilons: Option<Vec<f64>>,
    #[arg(long)]
    pub kmax: Option<usize>,
    #[arg(long)]
    pub grid: Option<usize>,
    #[arg(long)]
    pub reps: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimArgs {
    /// TOML design; the built-in null design (N = 100, T = 50) when absent.
    #[arg(long)]
    pub dgp: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub experiment: Option<ExperimentArg>,
    #[arg(long)]
    pub reps: Option<usize>,
    #[arg(long, value_enum)]
    pub test: Option<TestName>,
    #[arg(long)]
    pub k: Option<usize>,
    #[arg(long)]
    pub kmax: Option<usize>,
    #[arg(long, value_delimiter = ',')]
    pub dates: Option<Vec<usize>>,
    #[arg(long, value_enum)]
    pub weights: Option<WeightsArg>,
    #[arg(long, value_enum)]
    pub seq_mode: Option<SeqModeArg>,
    /// Locate supF at the estimated dates or by searching every admissible break set.
    #[arg(long, value_enum)]
    pub sup: Option<SupArg>,
    #[arg(long)]
    pub trim: Option<f64>,
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long)]
    pub bandwidth: Option<usize>,
    #[arg(long)]
    pub level: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub cv_table: Option<PathBuf>,
    /// Write replication 0 of the design as a long-format CSV and skip the experiment.
    #[arg(long)]
    pub write_panel: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub format: Option<OutputFormat>,
    #[arg(long)]
    pub output: Option<PathBuf>,
}

macro_rules! override_from {
    ($base:expr, $file:expr, $($f:ident),* $(,)?) => {
        $( if $file.$f.is_some() { $base.$f = $file.$f.clone(); } )*
    };
}

impl RunArgs {
    fn merge(&mut self, file: &RunArgs) {
        override_from!(
            self, file, input, unit_col, period_col, y, x, w, factors, breaking_constant, breaks, kmax, dates, trim,
            alpha, alpha_shrink, bandwidth, weights, seq_mode, sup, level, max_iter, cv, cv_table, cv_reps, cv_grid, seed,
            format, output
        );
    }
}

impl CvArgs {
    fn merge(&mut self, file: &CvArgs) {
        override_from!(self, file, max_pw, epsilons, kmax, grid, reps, seed, output);
    }
}

impl SimArgs {
    fn merge(&mut self, file: &SimArgs) {
        override_from!(
            self, file, dgp, experiment, reps, test, k, kmax, dates, weights, seq_mode, sup, trim, alpha, bandwidth, level,
            seed, cv_table, write_panel, format, output
        );
    }
}

/// What a command produced: the JSON report, an optional text rendering, and where the JSON goes.
#[derive(Debug, Clone)]
pub struct Output {
    pub json: Value,
    pub text: Option<String>,
    pub format: OutputFormat,
    pub path: Option<PathBuf>,
    /// Raw file content written instead of JSON (critical-value CSV, panel CSV).
    pub raw: Option<String>,
}

impl Output {
    /// Writes the artifacts; returns what belongs on standard output.
    pub fn emit(&self) -> Result<String> {
        let json = serde_json::to_string_pretty(&self.json)? + "\n";
        let mut stdout = String::new();
        if let Some(raw) = &self.raw {
            match &self.path {
                Some(p) => std::fs::write(p, raw)?,
                None => stdout.push_str(raw),
            }
            return Ok(stdout);
        }
        let show_text = matches!(self.format, OutputFormat::Text | OutputFormat::Both);
        let show_json = matches!(self.format, OutputFormat::Json | OutputFormat::Both);
        if show_text {
            if let Some(t) = &self.text {
                stdout.push_str(t);
            }
        }
        match &self.path {
            Some(p) if show_json || self.format == OutputFormat::Text => std::fs::write(p, &json)?,
            _ if show_json => stdout.push_str(&json),
            _ => {}
        }
        Ok(stdout)
    }
}

fn read_config<T: for<'de> Deserialize<'de>>(path: &PathBuf) -> Result<T> {
    let text = std::fs::read_to_string(path)?;
    toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
}

/// Executes a parsed command line.
pub fn run(cli: Cli) -> Result<Output> {
    let threads = cli.threads;
    let config = cli.config.clone();
    let work = move || -> Result<Output> {
        match cli.command {
            Command::Test { test, mut args } => {
                if let Some(p) = &config {
                    args.merge(&read_config(p)?);
                }
                run_test(test, &args)
            }
            Command::Estimate(mut args) => {
                if let Some(p) = &config {
                    args.merge(&read_config(p)?);
                }
                run_estimate(&args)
            }
            Command::Ci(mut args) => {
                if let Some(p) = &config {
                    args.merge(&read_config(p)?);
                }
                run_ci(&args)
            }
            Command::Khat(mut args) => {
                if let Some(p) = &config {
                    args.merge(&read_config(p)?);
                }
                run_khat(&args)
            }
            Command::Cv { action: CvAction::Simulate(mut args) } => {
                if let Some(p) = &config {
                    args.merge(&read_config(p)?);
                }
                run_cv_simulate(&args)
            }
            Command::Simulate(mut args) => {
                if let Some(p) = &config {
                    args.merge(&read_config(p)?);
                }
                run_simulate(&args)
            }
        }
    };
    match threads {
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n.max(1))
            .build()
            .map_err(|e| Error::Internal(e.to_string()))?
            .install(work),
        None => work(),
    }
}

struct Context {
    data: PanelDataset,
    opts: TestOptions,
}

fn load(args: &RunArgs) -> Result<Context> {
    let input = args.input.as_ref().ok_or_else(|| Error::Config("`--input` is required".into()))?;
    let w = args.w.clone().unwrap_or_default();
    if w.is_empty() {
        return Err(Error::Config("`--w` must name at least one breaking regressor".into()));
    }
    let schema = PanelSchema {
        unit: args.unit_col.clone().unwrap_or_else(|| "unit".into()),
        period: args.period_col.clone().unwrap_or_else(|| "period".into()),
        y: args.y.clone().unwrap_or_else(|| "y".into()),
        x: args.x.clone().unwrap_or_default(),
        w,
        factors: args.factors.clone().unwrap_or_default(),
    };
    let data = load_panel_path(input, &schema)?;
    let opts = test_options(args)?;
    Ok(Context { data, opts })
}

fn test_options(args: &RunArgs) -> Result<TestOptions> {
    let search = SearchOptions {
        observed: true,
        breaking_constant: args.breaking_constant.unwrap_or(false),
        max_iter: args.max_iter.unwrap_or(10),
    };
    Ok(TestOptions {
        trim: Trimming::new(args.trim.unwrap_or(0.15))?,
        bandwidth: args.bandwidth,
        level: args.alpha.unwrap_or(0.05),
        search,
        sup: args.sup.map(Into::into).unwrap_or_default(),
    })
}

fn provenance_json(table: &CriticalValueTable) -> Value {
    serde_json::to_value(table.provenance()).expect("provenance serializes")
}

/// Provenance of the table a command used, or of the default table flagged `"used": false`.
fn cv_provenance(table: Option<&CriticalValueTable>) -> Value {
    let (mut v, used) = match table {
        Some(t) => (provenance_json(t), true),
        None => match CriticalValueTable::default_table() {
            Ok(t) => (provenance_json(&t), false),
            Err(_) => (json!({}), false),
        },
    };
    v["used"] = Value::Bool(used);
    v
}

/// Embedded (or `--cv-table`/environment) table, or one simulated for the needed keys.
fn critical_table(args: &RunArgs, p_w: usize, k_max: usize) -> Result<CriticalValueTable> {
    match args.cv.unwrap_or(CvSource::Embedded) {
        CvSource::Embedded => match &args.cv_table {
            Some(p) => CriticalValueTable::load(p),
            None => CriticalValueTable::default_table(),
        },
        CvSource::Simulate => {
            let eps = args.trim.unwrap_or(0.15);
            simulate_critical_values(&CvSimSpec {
                max_p_w: p_w,
                epsilons: vec![eps],
                k_cap: k_max.max(1).min(Trimming::new(eps)?.max_breaks().max(1)),
                grid: args.cv_grid.unwrap_or(1000),
                reps: args.cv_reps.unwrap_or(20_000),
                seed: args.seed.unwrap_or(1),
            })
        }
    }
}

fn envelope(command: &str, args: &impl Serialize, table: Option<&CriticalValueTable>, result: Value) -> Value {
    json!({
        "tool": "panelbreak",
        "version": VERSION,
        "command": command,
        "config": args,
        "critical_values": cv_provenance(table),
        "result": result,
    })
}

fn stars(p: f64) -> &'static str {
    if p < 0.01 {
        "***"
    } else if p < 0.05 {
        "**"
    } else if p < 0.10 {
        "*"
    } else {
        ""
    }
}

fn test_text(r: &TestReport) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "{:?} test (k = {}, p_w = {}, bandwidth = {})", r.kind, r.k, r.p_w, r.bandwidth);
    let _ = writeln!(s, "statistic          {:>12.4}", r.statistic);
    for (k, v) in &r.critical_values {
        let _ = writeln!(s, "critical value {:>5} {:>10.4}", k, v);
    }
    if let Some(p) = r.p_value {
        let _ = writeln!(s, "p-value            {:>12.4}", p);
    }
    let _ = writeln!(s, "reject at {}        {}", r.level, if r.reject { "yes" } else { "no" });
    if !r.breaks.is_empty() {
        let _ = writeln!(s, "break set          {:?}", r.breaks);
    }
    for c in &r.components {
        let _ = writeln!(s, "  component {:>3}: {:>10.4} (weight {:.4}) at {:?}", c.index, c.statistic, c.weight, c.breaks);
    }
    for w in &r.warnings {
        let _ = writeln!(s, "warning: {w}");
    }
    s
}

fn run_test(test: TestName, args: &RunArgs) -> Result<Output> {
    let ctx = load(args)?;
    let data = &ctx.data;
    let p_w = data.p_w();
    let (report, table) = match test {
        TestName::Fknown => {
            let dates = args.dates.clone().ok_or_else(|| Error::Config("`test fknown` needs `--dates`".into()))?;
            let b = BreakSet::new(dates, data.n_periods())?;
            data.check_estimable()?;
            let fit = full_fit(data, &b, &ctx.opts.search)?;
            let cov = hac_covariance(&fit, &HacSpec::resolve(ctx.opts.bandwidth, data.n_periods()))?;
            (f_known(&fit, &cov, ctx.opts.level)?, None)
        }
        TestName::Supf => {
            let k = args.breaks.unwrap_or(1);
            let table = critical_table(args, p_w, k)?;
            (sup_f(data, k, &ctx.opts, &table)?, Some(table))
        }
        TestName::Wdmax => {
            let k_max = args.kmax.unwrap_or(5.min(ctx.opts.trim.max_breaks()));
            let weights = match args.weights.unwrap_or(WeightsArg::Matched) {
                WeightsArg::Unit => WdmaxWeights::Unit,
                WeightsArg::Matched => WdmaxWeights::LevelMatched,
            };
            let table = critical_table(args, p_w, k_max)?;
            (wdmax_f(data, k_max, weights, &ctx.opts, &table)?, Some(table))
        }
        TestName::Seqf => {
            let base = match (&args.dates, args.breaks) {
                (Some(d), _) => BreakSet::new(d.clone(), data.n_periods())?,
                (None, Some(k)) if k > 0 => {
                    estimate_breaks(data, &BreakSearch::Global { k }, &ctx.opts.trim, &ctx.opts.search)?.best_breaks
                }
                _ => BreakSet::empty(data.n_periods()),
            };
            let table = critical_table(args, p_w, 1)?;
            (seq_f(data, &base, seq_mode(args.seq_mode), &ctx.opts, &table)?, Some(table))
        }
    };
    let text = test_text(&report);
    let result = serde_json::to_value(&report)?;
    Ok(Output {
        json: envelope("test", &json!({ "test": test, "args": args }), table.as_ref(), result),
        text: Some(text),
        format: args.format.unwrap_or(OutputFormat::Json),
        path: args.output.clone(),
        raw: None,
    })
}

fn seq_mode(arg: Option<SeqModeArg>) -> SeqMode {
    match arg {
        Some(SeqModeArg::Minssr) => SeqMode::MinSsr,
        _ => SeqMode::MaxF,
    }
}

#[derive(Debug, Clone, Serialize)]
struct CoefficientRow {
    regressor: String,
    term: String,
    estimate: f64,
    se: f64,
    p_value: f64,
    stars: &'static str,
}

/// `δ_1` then `Δ_1 … Δ_k` for each breaking regressor, with HAC standard errors.
fn reparameterized(data: &PanelDataset, fit: &crate::estimator::FitResult, cov: &CovarianceEstimate) -> Vec<CoefficientRow> {
    let p_w = fit.p_w;
    let nt = (fit.n_units() * fit.n_periods()) as f64;
    let normal = Normal::standard();
    let mut rows = Vec::new();
    for c in 0..p_w {
        for j in 0..=fit.k() {
            let mut a = DVector::zeros(fit.delta.len());
            let (term, estimate) = if j == 0 {
                a[c] = 1.0;
                ("delta_1".to_string(), fit.delta[c])
            } else {
                a[j * p_w + c] = 1.0;
                a[(j - 1) * p_w + c] = -1.0;
                (format!("Delta_{j}"), fit.increments[(j - 1) * p_w + c])
            };
            let se = ((a.transpose() * &cov.v * &a)[(0, 0)] / nt).max(0.0).sqrt();
            let p_value = 2.0 * normal.sf((estimate / se).abs());
            rows.push(CoefficientRow {
                regressor: data.w_names()[c].clone(),
                term,
                estimate,
                se,
                p_value,
                stars: stars(p_value),
            });
        }
    }
    rows
}

fn coefficient_text(rows: &[CoefficientRow]) -> String {
    let mut s = format!("{:<14}{:<10}{:>12}{:>12}\n", "regressor", "term", "estimate", "s.e.");
    for r in rows {
        let _ = writeln!(s, "{:<14}{:<10}{:>12.4}{:>12.4} {}", r.regressor, r.term, r.estimate, r.se, r.stars);
    }
    s.push_str("* p < 0.10, ** p < 0.05, *** p < 0.01\n");
    s
}

fn interval_text(data: &PanelDataset, ci: &BreakConfidence) -> String {
    let labels = data.period_labels();
    let pct = ci.level * 100.0;
    let mut s = format!("{:<8}{:>14}   {}% confidence interval\n", "break", "date", pct);
    for iv in &ci.intervals {
        let _ = writeln!(
            s,
            "{:<8}{:>14}   [{}, {}]",
            iv.index,
            labels[iv.date - 1],
            labels[iv.lo - 1],
            labels[iv.hi - 1]
        );
    }
    s
}

fn estimate_core(args: &RunArgs, ctx: &Context) -> Result<(crate::search::SearchResult, CovarianceEstimate)> {
    let data = &ctx.data;
    let est = match &args.dates {
        Some(d) => {
            data.check_estimable()?;
            let b = BreakSet::new(d.clone(), data.n_periods())?;
            let fit = full_fit(data, &b, &ctx.opts.search)?;
            crate::search::SearchResult {
                best_breaks: b.clone(),
                best_ssr: fit.ssr,
                per_k_optima: vec![(b, fit.ssr)],
                iterations: 0,
                converged: true,
                previous_breaks: None,
                search_beta: None,
                evaluations: 0,
                fit,
            }
        }
        None => {
            let k = args.breaks.ok_or_else(|| Error::Config("give `--breaks` or `--dates`".into()))?;
            estimate_breaks(data, &BreakSearch::Global { k }, &ctx.opts.trim, &ctx.opts.search)?
        }
    };
    let cov = hac_covariance(&est.fit, &HacSpec::resolve(ctx.opts.bandwidth, data.n_periods()))?;
    Ok((est, cov))
}

fn run_estimate(args: &RunArgs) -> Result<Output> {
    let ctx = load(args)?;
    let data = &ctx.data;
    let (est, cov) = estimate_core(args, &ctx)?;
    let rows = reparameterized(data, &est.fit, &cov);
    let labels: Vec<&String> = est.best_breaks.dates().iter().map(|&d| &data.period_labels()[d - 1]).collect();
    let result = json!({
        "search": est.summary(),
        "break_labels": labels,
        "fit": est.fit.summary(data.x_names(), data.w_names()),
        "coefficients": rows,
        "bandwidth": cov.bandwidth,
    });
    let mut text = format!("break dates: {:?}\n", labels);
    text.push_str(&coefficient_text(&rows));
    Ok(Output {
        json: envelope("estimate", args, None, result),
        text: Some(text),
        format: args.format.unwrap_or(OutputFormat::Json),
        path: args.output.clone(),
        raw: None,
    })
}

fn run_ci(args: &RunArgs) -> Result<Output> {
    let ctx = load(args)?;
    let (est, cov) = estimate_core(args, &ctx)?;
    let ci = break_confidence(&est.fit, &cov, args.level.unwrap_or(0.95))?;
    let text = interval_text(&ctx.data, &ci);
    let result = json!({ "search": est.summary(), "confidence": ci });
    Ok(Output {
        json: envelope("ci", args, None, result),
        text: Some(text),
        format: args.format.unwrap_or(OutputFormat::Json),
        path: args.output.clone(),
        raw: None,
    })
}

fn run_khat(args: &RunArgs) -> Result<Output> {
    let ctx = load(args)?;
    let k_cap = args.kmax.unwrap_or(5.min(ctx.opts.trim.max_breaks()));
    let table = critical_table(args, ctx.data.p_w(), 1)?;
    let alpha = match args.alpha_shrink {
        Some(k) => AlphaPolicy::Shrinking(k),
        None => AlphaPolicy::Fixed(ctx.opts.level),
    };
    let count = estimate_num_breaks(&ctx.data, alpha, k_cap, seq_mode(args.seq_mode), &ctx.opts, &table)?;
    let mut text = format!("estimated number of breaks: {} (alpha = {})\n", count.k_hat, count.alpha);
    for s in &count.steps {
        let _ = writeln!(
            text,
            "  F({}|{}) = {:.4} vs {:.4}: {}",
            s.null_breaks.len() + 1,
            s.null_breaks.len(),
            s.statistic,
            s.critical_value,
            if s.reject { "reject" } else { "accept" }
        );
    }
    for w in &count.warnings {
        let _ = writeln!(text, "warning: {w}");
    }
    Ok(Output {
        json: envelope("khat", args, Some(&table), serde_json::to_value(&count)?),
        text: Some(text),
        format: args.format.unwrap_or(OutputFormat::Json),
        path: args.output.clone(),
        raw: None,
    })
}

fn run_cv_simulate(args: &CvArgs) -> Result<Output> {
    let base = CvSimSpec::embedded_design();
    let spec = CvSimSpec {
        max_p_w: args.max_pw.unwrap_or(base.max_p_w),
        epsilons: args.epsilons.clone().unwrap_or(base.epsilons),
        k_cap: args.kmax.unwrap_or(base.k_cap),
        grid: args.grid.unwrap_or(base.grid),
        reps: args.reps.unwrap_or(base.reps),
        seed: args.seed.unwrap_or(base.seed),
    };
    let table = simulate_critical_values(&spec)?
        .with_generation_date(chrono::Local::now().format("%Y-%m-%d").to_string());
    Ok(Output {
        json: envelope("cv simulate", args, Some(&table), json!({ "entries": table.entry_count() })),
        text: None,
        format: OutputFormat::Json,
        path: args.output.clone(),
        raw: Some(table.to_csv()),
    })
}

fn run_simulate(args: &SimArgs) -> Result<Output> {
    let mut spec = match &args.dgp {
        Some(p) => DgpSpec::from_toml(&std::fs::read_to_string(p)?)?,
        None => DgpSpec::null(100, 50, 1),
    };
    if let Some(s) = args.seed {
        spec.seed = s;
    }
    if let Some(path) = &args.write_panel {
        let (data, _) = generate(&spec)?;
        let mut buf = Vec::new();
        write_panel(&mut buf, &data, &crate::ingest::default_schema(&data))?;
        return Ok(Output {
            json: Value::Null,
            text: None,
            format: OutputFormat::Json,
            path: Some(path.clone()),
            raw: Some(String::from_utf8(buf).map_err(|e| Error::Internal(e.to_string()))?),
        });
    }
    let kind = match args.experiment.unwrap_or(ExperimentArg::Size) {
        ExperimentArg::Size => ExperimentKind::Size,
        ExperimentArg::Power => ExperimentKind::Power,
        ExperimentArg::HitRate => ExperimentKind::HitRate,
        ExperimentArg::Khat => ExperimentKind::Khat,
        ExperimentArg::Coverage => ExperimentKind::Coverage,
    };
    let weights = match args.weights.unwrap_or(WeightsArg::Matched) {
        WeightsArg::Unit => WdmaxWeights::Unit,
        WeightsArg::Matched => WdmaxWeights::LevelMatched,
    };
    let mode = seq_mode(args.seq_mode);
    let test = args.test.map(|t| match t {
        TestName::Supf => TestChoice::SupF { k: args.k.unwrap_or(1) },
        TestName::Wdmax => TestChoice::Wdmax { k_max: args.kmax.unwrap_or(3), weights },
        TestName::Seqf => TestChoice::SeqF { k: args.k.unwrap_or(0), mode },
        TestName::Fknown => TestChoice::FKnown { breaks: args.dates.clone().unwrap_or_default() },
    });
    let defaults = ToolboxConfig::default();
    let config = ToolboxConfig {
        epsilon: args.trim.unwrap_or(spec.epsilon),
        bandwidth: args.bandwidth,
        level: args.alpha.unwrap_or(defaults.level),
        test: test.or(Some(TestChoice::SupF { k: 1 })),
        k: args.k,
        k_cap: args.kmax.unwrap_or(defaults.k_cap),
        seq_mode: mode,
        ci_level: args.level.unwrap_or(defaults.ci_level),
        sup: args.sup.map(Into::into).unwrap_or_default(),
        ..defaults
    };
    let table = match &args.cv_table {
        Some(p) => CriticalValueTable::load(p)?,
        None => CriticalValueTable::default_table()?,
    };
    let report = run_experiment(kind, &spec, &config, args.reps.unwrap_or(1000), &table)?;
    let text = report.table();
    Ok(Output {
        json: envelope("simulate", args, Some(&table), serde_json::to_value(&report)?),
        text: Some(text),
        format: args.format.unwrap_or(OutputFormat::Json),
        path: args.output.clone(),
        raw: None,
    })
}

/// Parses `argv`, runs, prints, and returns the process exit code.
pub fn main_with_args<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match run(cli).and_then(|out| out.emit()) {
        Ok(stdout) => {
            print!("{stdout}");
            0
        }
        Err(e) => {
            eprintln!("error: {e}");
            e.category().exit_code()
        }
    }
}
