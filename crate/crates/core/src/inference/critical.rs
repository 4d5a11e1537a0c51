//! Critical-value tables for `supF`, `WDmaxF` and `F(k+1|k)`.
//!
//! Tables are simulated from the limit process (see [`super::supq`]) and stored as
//! versioned CSV. The seqF values are never stored: they follow from the `sup Q(1)`
//! tail through `cv_seq(α, k) = cv_supQ1(1 − (1 − α)^{1/(k+1)})`.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io::Read;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::supq::{brownian_paths, sup_q, GridTrim};
use crate::error::{Error, Result};
use crate::panel::Trimming;

pub const FORMAT_VERSION: u32 = 1;
pub const TABLE_ENV: &str = "PANELBREAK_CV_TABLE";
pub const STANDARD_LEVELS: [f64; 4] = [0.10, 0.05, 0.025, 0.01];

/// Levels stored for `sup Q(1)`, dense enough in the tail for the seqF transform.
pub const TAIL_LEVELS: [f64; 27] = [
    0.0005, 0.001, 0.0015, 0.002, 0.003, 0.004, 0.005, 0.006, 0.0075, 0.01, 0.0125, 0.015, 0.02,
    0.025, 0.03, 0.04, 0.05, 0.06, 0.075, 0.1, 0.125, 0.15, 0.2, 0.25, 0.3, 0.4, 0.5,
];

const EMBEDDED: &str = include_str!("../../data/critical_values.csv");
const SECTIONS: usize = 10;
const EPS_MATCH: f64 = 1e-9;
const LEVEL_MATCH: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CvKind {
    /// `sup Q(k)`.
    SupF,
    /// `max_{k ≤ k_max} sup Q(k)`.
    WdmaxUnit,
    /// `max_{k ≤ k_max} (c_{α,1}/c_{α,k}) sup Q(k)` with level-matched weights.
    Wdmax,
}

impl CvKind {
    pub fn as_str(self) -> &'static str {
        match self {
            CvKind::SupF => "supf",
            CvKind::WdmaxUnit => "wdmax-unit",
            CvKind::Wdmax => "wdmax",
        }
    }

    fn parse(s: &str) -> Option<Self> {
        match s {
            "supf" => Some(CvKind::SupF),
            "wdmax-unit" => Some(CvKind::WdmaxUnit),
            "wdmax" => Some(CvKind::Wdmax),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TableSource {
    Embedded,
    File(String),
    Simulated,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub source: TableSource,
    pub format_version: u32,
    pub seed: u64,
    pub reps: usize,
    pub grid: usize,
    pub generated: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CvEntry {
    pub value: f64,
    pub se: f64,
}

// Key: (kind, k, p_w, ε in units of 1e-9) → level-sorted entries.
type Key = (CvKind, usize, usize, i64);

#[derive(Debug, Clone)]
pub struct CriticalValueTable {
    provenance: Provenance,
    entries: BTreeMap<Key, Vec<(f64, CvEntry)>>,
}

fn eps_key(epsilon: f64) -> i64 {
    (epsilon / EPS_MATCH).round() as i64
}

fn describe(kind: &str, k: usize, p_w: usize, epsilon: f64, level: f64) -> String {
    format!("{kind} with k = {k}, p_w = {p_w}, epsilon = {epsilon}, level = {level}")
}

impl CriticalValueTable {
    pub fn provenance(&self) -> &Provenance {
        &self.provenance
    }

    /// The table compiled into the library.
    pub fn embedded() -> Self {
        let mut t = Self::parse(EMBEDDED.as_bytes()).expect("embedded critical-value table is valid");
        t.provenance.source = TableSource::Embedded;
        t
    }

    /// The table named by `PANELBREAK_CV_TABLE`, or the embedded one.
    pub fn default_table() -> Result<Self> {
        match std::env::var_os(TABLE_ENV) {
            Some(p) if !p.is_empty() => Self::load(p),
            _ => Ok(Self::embedded()),
        }
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let mut t = Self::parse(std::fs::File::open(path)?)?;
        t.provenance.source = TableSource::File(path.display().to_string());
        Ok(t)
    }

    pub fn parse<R: Read>(mut source: R) -> Result<Self> {
        let mut text = String::new();
        source.read_to_string(&mut text)?;
        let mut meta: BTreeMap<String, String> = BTreeMap::new();
        let mut body = String::new();
        for line in text.lines() {
            if let Some(c) = line.strip_prefix('#') {
                for item in c.split(',') {
                    if let Some((k, v)) = item.split_once('=') {
                        meta.insert(k.trim().to_string(), v.trim().to_string());
                    }
                }
            } else if !line.trim().is_empty() {
                body.push_str(line);
                body.push('\n');
            }
        }
        let field = |name: &str| -> Result<&String> {
            meta.get(name)
                .ok_or_else(|| Error::Schema(format!("critical-value table lacks `{name}` in its header")))
        };
        let num = |name: &str| -> Result<u64> {
            field(name)?
                .parse()
                .map_err(|_| Error::Schema(format!("critical-value table header `{name}` is not an integer")))
        };
        let version = num("format")? as u32;
        if version != FORMAT_VERSION {
            return Err(Error::Schema(format!(
                "critical-value table format {version} is not supported (expected {FORMAT_VERSION})"
            )));
        }
        let provenance = Provenance {
            source: TableSource::Simulated,
            format_version: version,
            seed: num("seed")?,
            reps: num("reps")? as usize,
            grid: num("grid")? as usize,
            generated: meta.get("generated").cloned(),
        };
        #[derive(Deserialize)]
        struct Row {
            kind: String,
            k: usize,
            p_w: usize,
            epsilon: f64,
            level: f64,
            value: f64,
            se: f64,
        }
        let mut table = Self { provenance, entries: BTreeMap::new() };
        let mut reader = csv::Reader::from_reader(body.as_bytes());
        for row in reader.deserialize::<Row>() {
            let row = row?;
            let kind = CvKind::parse(&row.kind)
                .ok_or_else(|| Error::Schema(format!("unknown critical-value kind `{}`", row.kind)))?;
            table.insert(kind, row.k, row.p_w, row.epsilon, row.level, CvEntry { value: row.value, se: row.se });
        }
        Ok(table)
    }

    fn insert(&mut self, kind: CvKind, k: usize, p_w: usize, epsilon: f64, level: f64, entry: CvEntry) {
        let list = self.entries.entry((kind, k, p_w, eps_key(epsilon))).or_default();
        list.push((level, entry));
        list.sort_by(|a, b| a.0.total_cmp(&b.0));
    }

    pub fn to_csv(&self) -> String {
        let p = &self.provenance;
        let mut out = String::new();
        let _ = writeln!(out, "# panelbreak critical values, format={}", p.format_version);
        let _ = write!(out, "# seed={}, reps={}, grid={}", p.seed, p.reps, p.grid);
        if let Some(g) = &p.generated {
            let _ = write!(out, ", generated={g}");
        }
        out.push('\n');
        out.push_str("kind,k,p_w,epsilon,level,value,se\n");
        for ((kind, k, p_w, e), list) in &self.entries {
            for (level, entry) in list {
                let _ = writeln!(
                    out,
                    "{},{k},{p_w},{},{level},{},{}",
                    kind.as_str(),
                    *e as f64 / (1.0 / EPS_MATCH).round(),
                    entry.value,
                    entry.se
                );
            }
        }
        out
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_csv())?;
        Ok(())
    }

    pub fn entry_count(&self) -> usize {
        self.entries.values().map(Vec::len).sum()
    }

    /// Critical value at `level`, interpolated linearly in `log(level)` between stored levels.
    pub fn value(&self, kind: CvKind, k: usize, p_w: usize, epsilon: f64, level: f64) -> Result<f64> {
        self.entry(kind, k, p_w, epsilon, level).map(|e| e.value)
    }

    pub fn entry(&self, kind: CvKind, k: usize, p_w: usize, epsilon: f64, level: f64) -> Result<CvEntry> {
        let missing = || Error::MissingCriticalValue(describe(kind.as_str(), k, p_w, epsilon, level));
        if !(level > 0.0 && level < 1.0) {
            return Err(Error::InvalidArgument(format!("level must lie in (0, 1), got {level}")));
        }
        let list = self.entries.get(&(kind, k, p_w, eps_key(epsilon))).ok_or_else(missing)?;
        if let Some((_, e)) = list.iter().find(|(l, _)| (l - level).abs() <= LEVEL_MATCH * level) {
            return Ok(*e);
        }
        let hi = list.iter().position(|(l, _)| *l > level).ok_or_else(missing)?;
        if hi == 0 {
            return Err(missing());
        }
        let (l0, e0) = list[hi - 1];
        let (l1, e1) = list[hi];
        let w = (level.ln() - l0.ln()) / (l1.ln() - l0.ln());
        Ok(CvEntry {
            value: e0.value + w * (e1.value - e0.value),
            se: e0.se.max(e1.se),
        })
    }

    /// Critical value of `F(k+1|k)`: the `sup Q(1)` value at level `1 − (1 − α)^{1/(k+1)}`.
    pub fn seq_value(&self, k: usize, p_w: usize, epsilon: f64, level: f64) -> Result<f64> {
        let adjusted = seq_adjusted_level(level, k);
        self.value(CvKind::SupF, 1, p_w, epsilon, adjusted).map_err(|e| match e {
            Error::MissingCriticalValue(_) => {
                Error::MissingCriticalValue(describe("seqf", k, p_w, epsilon, level))
            }
            other => other,
        })
    }

    /// The levels stored for a key, ascending.
    pub fn levels(&self, kind: CvKind, k: usize, p_w: usize, epsilon: f64) -> Vec<f64> {
        self.entries
            .get(&(kind, k, p_w, eps_key(epsilon)))
            .map(|l| l.iter().map(|(a, _)| *a).collect())
            .unwrap_or_default()
    }
}

/// `1 − (1 − α)^{1/(k+1)}`, computed without cancellation.
pub fn seq_adjusted_level(alpha: f64, k: usize) -> f64 {
    -((-alpha).ln_1p() / (k + 1) as f64).exp_m1()
}

/// What to simulate: every `p_w ≤ max_p_w`, every trimming, every `k ≤ min(k_cap, max_breaks)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvSimSpec {
    pub max_p_w: usize,
    pub epsilons: Vec<f64>,
    pub k_cap: usize,
    pub grid: usize,
    pub reps: usize,
    pub seed: u64,
}

impl CvSimSpec {
    /// The design of the embedded table.
    pub fn embedded_design() -> Self {
        Self {
            max_p_w: 5,
            epsilons: vec![0.05, 0.10, 0.15, 0.20, 0.25],
            k_cap: 9,
            grid: 2000,
            reps: 100_000,
            seed: 20_240_517,
        }
    }

    fn validate(&self) -> Result<Vec<(f64, GridTrim)>> {
        if self.max_p_w == 0 || self.k_cap == 0 {
            return Err(Error::InvalidArgument("p_w and k_max must be at least 1".into()));
        }
        if self.reps < 2 * SECTIONS {
            return Err(Error::InvalidArgument(format!("at least {} replications are needed", 2 * SECTIONS)));
        }
        if self.grid < 20 {
            return Err(Error::InvalidArgument("the grid needs at least 20 steps".into()));
        }
        let mut trims = Vec::new();
        for &e in &self.epsilons {
            let trim = Trimming::new(e)?;
            let k_max = trim.max_breaks().min(self.k_cap);
            if k_max == 0 {
                return Err(Error::Capacity { requested: 1, max: 0, epsilon: e });
            }
            trims.push((e, GridTrim { min_len: trim.min_length(self.grid), k_max }));
        }
        if trims.is_empty() {
            return Err(Error::InvalidArgument("no trimming levels given".into()));
        }
        Ok(trims)
    }
}

/// Empirical `(1 − level)` quantile: the `⌈(1 − level)n⌉`-th order statistic.
pub fn upper_quantile(sorted: &[f64], level: f64) -> f64 {
    let n = sorted.len();
    let rank = (((1.0 - level) * n as f64) - 1e-9).ceil() as usize;
    sorted[rank.clamp(1, n) - 1]
}

fn quantile_with_se(draws: &[f64], level: f64) -> CvEntry {
    let mut all = draws.to_vec();
    all.sort_by(f64::total_cmp);
    let value = upper_quantile(&all, level);
    let len = draws.len() / SECTIONS;
    let qs: Vec<f64> = (0..SECTIONS)
        .map(|s| {
            let mut part = draws[s * len..(s + 1) * len].to_vec();
            part.sort_by(f64::total_cmp);
            upper_quantile(&part, level)
        })
        .collect();
    let mean = qs.iter().sum::<f64>() / SECTIONS as f64;
    let var = qs.iter().map(|q| (q - mean).powi(2)).sum::<f64>() / (SECTIONS - 1) as f64;
    CvEntry { value, se: (var / SECTIONS as f64).sqrt() }
}

/// Simulates `sup Q(k)` draws, indexed `[rep][p − 1][trim][k − 1]`.
pub fn simulate_draws(spec: &CvSimSpec) -> Result<Vec<Vec<Vec<Vec<f64>>>>> {
    let trims: Vec<GridTrim> = spec.validate()?.into_iter().map(|(_, t)| t).collect();
    Ok((0..spec.reps as u64)
        .into_par_iter()
        .map(|rep| {
            let paths = brownian_paths(spec.seed, rep, spec.max_p_w, spec.grid);
            sup_q(&paths, spec.grid, &trims)
        })
        .collect())
}

pub fn simulate_critical_values(spec: &CvSimSpec) -> Result<CriticalValueTable> {
    let trims = spec.validate()?;
    let draws = simulate_draws(spec)?;
    let mut table = CriticalValueTable {
        provenance: Provenance {
            source: TableSource::Simulated,
            format_version: FORMAT_VERSION,
            seed: spec.seed,
            reps: spec.reps,
            grid: spec.grid,
            generated: None,
        },
        entries: BTreeMap::new(),
    };
    for p in 1..=spec.max_p_w {
        for (ti, &(eps, trim)) in trims.iter().enumerate() {
            let per_k: Vec<Vec<f64>> = (1..=trim.k_max)
                .map(|k| draws.iter().map(|d| d[p - 1][ti][k - 1]).collect())
                .collect();
            let mut supf = vec![BTreeMap::new(); trim.k_max];
            for k in 1..=trim.k_max {
                let levels: &[f64] = if k == 1 { &TAIL_LEVELS } else { &STANDARD_LEVELS };
                for &level in levels {
                    let e = quantile_with_se(&per_k[k - 1], level);
                    table.insert(CvKind::SupF, k, p, eps, level, e);
                    supf[k - 1].insert(eps_key(level), e.value);
                }
            }
            let mut running = per_k[0].clone();
            for k_max in 1..=trim.k_max {
                for (r, v) in running.iter_mut().zip(&per_k[k_max - 1]) {
                    *r = r.max(*v);
                }
                for &level in &STANDARD_LEVELS {
                    table.insert(CvKind::WdmaxUnit, k_max, p, eps, level, quantile_with_se(&running, level));
                    let c1 = supf[0][&eps_key(level)];
                    let weighted: Vec<f64> = (0..draws.len())
                        .map(|r| {
                            (1..=k_max)
                                .map(|k| c1 / supf[k - 1][&eps_key(level)] * per_k[k - 1][r])
                                .fold(f64::NEG_INFINITY, f64::max)
                        })
                        .collect();
                    table.insert(CvKind::Wdmax, k_max, p, eps, level, quantile_with_se(&weighted, level));
                }
            }
        }
    }
    Ok(table)
}

impl CriticalValueTable {
    /// Stamps the generation date; kept out of [`simulate_critical_values`] so its output is deterministic.
    pub fn with_generation_date(mut self, date: String) -> Self {
        self.provenance.generated = Some(date);
        self
    }
}
