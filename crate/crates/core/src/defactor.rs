//! Cross-section averages and the CCE projection `M = I − Z̄(Z̄'Z̄)⁻¹Z̄'`.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{column_basis, expand_by_regime};
use crate::panel::{BreakSet, PanelDataset};

/// Reciprocal condition of `Z̄'Z̄` below which projection is refused.
pub const RCOND_ERROR: f64 = 1e-12;
/// Reciprocal condition below which a warning is attached.
pub const RCOND_WARN: f64 = 1e-8;

/// How a block of columns enters `Z̄`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AverageMode {
    Omit,
    /// One column per variable over the whole sample.
    Pooled,
    /// Block-diagonal by regime: regime `j` columns are zero outside regime `j`.
    ByRegime,
}

/// Column selection for [`build_averages`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AverageOptions {
    pub x: AverageMode,
    pub w: AverageMode,
    pub observed: AverageMode,
    /// Adds one indicator column per regime.
    pub breaking_constant: bool,
}

impl AverageOptions {
    /// `Z̄(𝒯) = (X̄, W̄(𝒯), observed factors, indicators)`, the final-fit layout.
    pub fn full(observed: bool, breaking_constant: bool) -> Self {
        Self {
            x: AverageMode::Pooled,
            w: AverageMode::ByRegime,
            observed: if observed { AverageMode::Pooled } else { AverageMode::Omit },
            breaking_constant,
        }
    }

    /// Everything regime-local, so the projector is block diagonal over regimes.
    pub fn pure_change(observed: bool, breaking_constant: bool) -> Self {
        Self {
            x: AverageMode::ByRegime,
            w: AverageMode::ByRegime,
            observed: if observed { AverageMode::ByRegime } else { AverageMode::Omit },
            breaking_constant,
        }
    }

    /// `X̄` (plus observed factors and indicators), used when updating `β̂`.
    pub fn x_only(observed: bool, breaking_constant: bool) -> Self {
        Self {
            x: AverageMode::Pooled,
            w: AverageMode::Omit,
            observed: if observed { AverageMode::Pooled } else { AverageMode::Omit },
            breaking_constant,
        }
    }

    /// Regime-local `W̄(𝒯)` only.
    pub fn w_only(observed: bool, breaking_constant: bool) -> Self {
        Self {
            x: AverageMode::Omit,
            w: AverageMode::ByRegime,
            observed: if observed { AverageMode::ByRegime } else { AverageMode::Omit },
            breaking_constant,
        }
    }
}

/// The matrix `Z̄` with readable column names.
#[derive(Debug, Clone, PartialEq)]
pub struct AverageBlock {
    pub z_bar: DMatrix<f64>,
    pub column_names: Vec<String>,
    pub breaks: BreakSet,
}

impl AverageBlock {
    pub fn n_columns(&self) -> usize {
        self.z_bar.ncols()
    }
}

/// `T × p` cross-section mean of per-unit blocks, summed in unit order.
pub fn cross_section_mean(blocks: &[DMatrix<f64>]) -> DMatrix<f64> {
    let (t_len, p) = blocks.first().map(|b| b.shape()).unwrap_or((0, 0));
    let mut acc = DMatrix::zeros(t_len, p);
    for b in blocks {
        acc += b;
    }
    acc / blocks.len().max(1) as f64
}

fn push_block(
    cols: &mut Vec<DMatrix<f64>>,
    names: &mut Vec<String>,
    block: &DMatrix<f64>,
    labels: &[String],
    mode: AverageMode,
    breaks: &BreakSet,
) {
    match mode {
        AverageMode::Omit => {}
        AverageMode::Pooled => {
            cols.push(block.clone());
            names.extend(labels.iter().cloned());
        }
        AverageMode::ByRegime => {
            let regime_of = breaks.regime_of_period();
            cols.push(expand_by_regime(block, &regime_of, breaks.n_regimes()));
            for j in 0..breaks.n_regimes() {
                names.extend(labels.iter().map(|l| format!("{l}[r{}]", j + 1)));
            }
        }
    }
}

/// Builds `Z̄` for the given break set and column selection.
pub fn build_averages(data: &PanelDataset, breaks: &BreakSet, opts: &AverageOptions) -> AverageBlock {
    let t_len = data.n_periods();
    let mut cols = Vec::new();
    let mut names = Vec::new();
    let x_names: Vec<String> = data.x_names().iter().map(|n| format!("mean({n})")).collect();
    let w_names: Vec<String> = data.w_names().iter().map(|n| format!("mean({n})")).collect();
    if data.p_x() > 0 {
        push_block(&mut cols, &mut names, &cross_section_mean(data.x()), &x_names, opts.x, breaks);
    }
    push_block(&mut cols, &mut names, &cross_section_mean(data.w()), &w_names, opts.w, breaks);
    if data.p_d() > 0 {
        push_block(
            &mut cols,
            &mut names,
            data.observed_factors(),
            data.factor_names(),
            opts.observed,
            breaks,
        );
    }
    if opts.breaking_constant {
        let ones = DMatrix::from_element(t_len, 1, 1.0);
        push_block(&mut cols, &mut names, &ones, &["const".to_string()], AverageMode::ByRegime, breaks);
    }
    let q: usize = cols.iter().map(|c| c.ncols()).sum();
    let mut z_bar = DMatrix::zeros(t_len, q);
    let mut at = 0;
    for c in &cols {
        z_bar.columns_mut(at, c.ncols()).copy_from(c);
        at += c.ncols();
    }
    AverageBlock {
        z_bar,
        column_names: names,
        breaks: breaks.clone(),
    }
}

/// Numerical rank of `Z̄` and related warnings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankDiagnostic {
    pub columns: usize,
    pub rank: usize,
    pub rcond: f64,
    pub warnings: Vec<String>,
}

/// Reports the column rank of `Z̄`; `m_assumed` is the number of unobserved factors the user expects.
pub fn check_rank(avg: &AverageBlock, m_assumed: usize) -> RankDiagnostic {
    let basis = column_basis(&avg.z_bar);
    let q = avg.n_columns();
    let mut warnings = Vec::new();
    if basis.rank < q {
        warnings.push(format!(
            "Z̄ has rank {} < {q} columns; averages are collinear or the factor space is under-spanned (suspect: {})",
            basis.rank,
            suspect_columns(&basis.weakest_direction, &avg.column_names).join(", ")
        ));
    }
    let k = avg.breaks.k();
    let averaged = avg
        .column_names
        .iter()
        .filter(|n| n.starts_with("mean("))
        .count();
    if (k + 2) * m_assumed > averaged {
        warnings.push(format!(
            "{m_assumed} factors with {k} breaks need (k+2)m = {} averages, only {averaged} available",
            (k + 2) * m_assumed
        ));
    }
    RankDiagnostic {
        columns: q,
        rank: basis.rank,
        rcond: basis.rcond,
        warnings,
    }
}

fn suspect_columns(direction: &nalgebra::DVector<f64>, names: &[String]) -> Vec<String> {
    let max = direction.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
    direction
        .iter()
        .zip(names)
        .filter(|(v, _)| v.abs() >= 0.1 * max && max > 0.0)
        .map(|(_, n)| n.clone())
        .collect()
}

/// Annihilator of `span(Z̄)`, held as an orthonormal basis `Q` so that `M v = v − Q(Q'v)`.
#[derive(Debug, Clone)]
pub struct Projector {
    q: DMatrix<f64>,
    diagnostic: RankDiagnostic,
}

impl Projector {
    /// Errors when `Z̄'Z̄` is numerically singular; warns when it is merely ill-conditioned.
    pub fn new(avg: &AverageBlock) -> Result<Self> {
        let basis = column_basis(&avg.z_bar);
        let q_cols = avg.n_columns();
        if q_cols > 0 && (basis.rcond < RCOND_ERROR || basis.rank < q_cols) {
            return Err(Error::IllConditioned {
                rcond: basis.rcond,
                columns: suspect_columns(&basis.weakest_direction, &avg.column_names),
            });
        }
        let mut warnings = Vec::new();
        if q_cols > 0 && basis.rcond < RCOND_WARN {
            warnings.push(format!(
                "Z̄'Z̄ is ill-conditioned (reciprocal condition {:.3e}); suspect columns: {}",
                basis.rcond,
                suspect_columns(&basis.weakest_direction, &avg.column_names).join(", ")
            ));
        }
        Ok(Self {
            diagnostic: RankDiagnostic {
                columns: q_cols,
                rank: basis.rank,
                rcond: basis.rcond,
                warnings,
            },
            q: basis.q,
        })
    }

    pub fn diagnostic(&self) -> &RankDiagnostic {
        &self.diagnostic
    }

    /// `M v` for every column of `v`.
    pub fn apply(&self, v: &DMatrix<f64>) -> DMatrix<f64> {
        if self.q.ncols() == 0 {
            return v.clone();
        }
        let coef = self.q.transpose() * v;
        v - &self.q * coef
    }

    /// Explicit `T × T` matrix `M`.
    pub fn matrix(&self) -> DMatrix<f64> {
        let t_len = self.q.nrows();
        DMatrix::identity(t_len, t_len) - &self.q * self.q.transpose()
    }
}

/// `y`, `X`, `W(𝒯)` after projection, one `T`-row block per unit.
#[derive(Debug, Clone)]
pub struct DefactoredPanel {
    /// `T × N`.
    pub y: DMatrix<f64>,
    pub x: Vec<DMatrix<f64>>,
    /// Regime-expanded, `T × (k+1)p_w` per unit.
    pub w: Vec<DMatrix<f64>>,
    pub breaks: BreakSet,
    pub p_w: usize,
    pub diagnostic: RankDiagnostic,
    /// Column sums of squares of `X` before projection.
    pub raw_scale_x: Vec<f64>,
    /// Column sums of squares of the regime-expanded `W` before projection.
    pub raw_scale_w: Vec<f64>,
}

impl DefactoredPanel {
    pub fn n_units(&self) -> usize {
        self.y.ncols()
    }
    pub fn n_periods(&self) -> usize {
        self.y.nrows()
    }
    pub fn p_x(&self) -> usize {
        self.x.first().map(|m| m.ncols()).unwrap_or(0)
    }
}

fn column_sums_of_squares(blocks: &[DMatrix<f64>]) -> Vec<f64> {
    let p = blocks.first().map(|b| b.ncols()).unwrap_or(0);
    (0..p)
        .map(|c| blocks.iter().map(|b| b.column(c).norm_squared()).sum())
        .collect()
}

/// Projects every unit's `y`, `X` and regime-expanded `W(𝒯)` off `span(Z̄)`.
pub fn project(data: &PanelDataset, avg: &AverageBlock, breaks: &BreakSet) -> Result<DefactoredPanel> {
    if breaks.n_periods() != data.n_periods() || avg.z_bar.nrows() != data.n_periods() {
        return Err(Error::InvalidArgument(
            "break set and averages must cover the panel's periods".into(),
        ));
    }
    let projector = Projector::new(avg)?;
    let regime_of = breaks.regime_of_period();
    let y = projector.apply(data.y());
    let x = data.x().iter().map(|xi| projector.apply(xi)).collect();
    let expanded: Vec<DMatrix<f64>> = data
        .w()
        .iter()
        .map(|wi| expand_by_regime(wi, &regime_of, breaks.n_regimes()))
        .collect();
    let w = expanded.iter().map(|wi| projector.apply(wi)).collect();
    Ok(DefactoredPanel {
        y,
        x,
        w,
        breaks: breaks.clone(),
        p_w: data.p_w(),
        diagnostic: projector.diagnostic,
        raw_scale_x: column_sums_of_squares(data.x()),
        raw_scale_w: column_sums_of_squares(&expanded),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::panel::PanelParts;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_panel(n: usize, t_len: usize, p_x: usize, p_w: usize, seed: u64) -> PanelDataset {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut draw = |r: usize, c: usize| DMatrix::from_fn(r, c, |_, _| rng.random::<f64>() - 0.5);
        PanelDataset::new(PanelParts {
            y: draw(t_len, n),
            x: (0..n).map(|_| draw(t_len, p_x)).collect(),
            w: (0..n).map(|_| draw(t_len, p_w)).collect(),
            ..Default::default()
        })
        .unwrap()
    }

    #[test]
    fn block_diagonal_w_bar() {
        // two units whose w average is (1, 2, 3, 4)
        let w0 = DMatrix::from_column_slice(4, 1, &[0., 2., 2., 3.]);
        let w1 = DMatrix::from_column_slice(4, 1, &[2., 2., 4., 5.]);
        let data = PanelDataset::new(PanelParts {
            y: DMatrix::zeros(4, 2),
            x: vec![DMatrix::zeros(4, 0); 2],
            w: vec![w0, w1],
            ..Default::default()
        })
        .unwrap();
        let breaks = BreakSet::new(vec![2], 4).unwrap();
        let avg = build_averages(&data, &breaks, &AverageOptions::full(false, false));
        assert_eq!(avg.z_bar, DMatrix::from_row_slice(4, 2, &[1., 0., 2., 0., 0., 3., 0., 4.]));
        assert_eq!(avg.column_names, vec!["mean(w1)[r1]", "mean(w1)[r2]"]);
    }

    #[test]
    fn k0_layout() {
        let data = random_panel(5, 8, 2, 1, 1);
        let avg = build_averages(&data, &BreakSet::empty(8), &AverageOptions::full(true, false));
        assert_eq!(avg.n_columns(), 3);
        assert_eq!(avg.z_bar.column(0), cross_section_mean(data.x()).column(0));
    }

    #[test]
    fn single_unit_mean_is_identity() {
        let m = DMatrix::from_fn(4, 2, |i, j| (i * 2 + j) as f64);
        assert_eq!(cross_section_mean(std::slice::from_ref(&m)), m);
    }

    #[test]
    fn indicators_per_regime() {
        let data = random_panel(3, 6, 0, 1, 2);
        let breaks = BreakSet::new(vec![2, 4], 6).unwrap();
        let avg = build_averages(&data, &breaks, &AverageOptions::full(false, true));
        assert_eq!(avg.n_columns(), 6);
        let ind = avg.z_bar.columns(3, 3).into_owned();
        for t in 0..6 {
            for j in 0..3 {
                assert_eq!(ind[(t, j)], if t / 2 == j { 1.0 } else { 0.0 });
            }
        }
    }

    #[test]
    fn duplicated_column_flagged() {
        let data = random_panel(4, 10, 1, 1, 3);
        let mut avg = build_averages(&data, &BreakSet::empty(10), &AverageOptions::full(false, false));
        let dup = avg.z_bar.column(0).into_owned();
        avg.z_bar = avg.z_bar.clone().insert_column(2, 0.0);
        avg.z_bar.set_column(2, &dup);
        avg.column_names.push("copy".into());
        let diag = check_rank(&avg, 0);
        assert_eq!(diag.rank, 2);
        assert_eq!(diag.warnings.len(), 1);
        match Projector::new(&avg).unwrap_err() {
            Error::IllConditioned { columns, .. } => {
                assert!(columns.contains(&"copy".to_string()));
                assert!(columns.contains(&"mean(x1)".to_string()));
            }
            e => panic!("unexpected {e}"),
        }
    }

    #[test]
    fn full_rank_no_warning() {
        let data = random_panel(4, 10, 1, 1, 4);
        let avg = build_averages(&data, &BreakSet::empty(10), &AverageOptions::full(false, false));
        let diag = check_rank(&avg, 0);
        assert_eq!(diag.rank, 2);
        assert!(diag.warnings.is_empty());
    }

    #[test]
    fn explicit_inverse_agrees_with_basis() {
        let data = random_panel(3, 6, 1, 1, 5);
        let avg = build_averages(&data, &BreakSet::empty(6), &AverageOptions::full(false, false));
        let z = &avg.z_bar;
        let direct = DMatrix::identity(6, 6)
            - z * (z.transpose() * z).try_inverse().unwrap() * z.transpose();
        let qr = z.clone().qr();
        let q = qr.q();
        let via_qr = DMatrix::identity(6, 6) - &q * q.transpose();
        let m = Projector::new(&avg).unwrap().matrix();
        assert!((&m - &direct).amax() < 1e-10);
        assert!((&m - &via_qr).amax() < 1e-10);
    }

    #[test]
    fn span_member_is_annihilated() {
        let data = random_panel(4, 9, 1, 2, 6);
        let avg = build_averages(&data, &BreakSet::empty(9), &AverageOptions::full(false, false));
        let coef = DMatrix::from_column_slice(3, 1, &[0.3, -1.0, 2.0]);
        let inside = &avg.z_bar * coef;
        let p = Projector::new(&avg).unwrap();
        assert!(p.apply(&inside).amax() < 1e-12);
        let once = p.apply(data.y());
        assert!((p.apply(&once) - &once).amax() < 1e-12);
    }
}
