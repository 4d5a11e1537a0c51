//! Randomized inputs and invariant checks shared by the property tests and the acceptance run.
#![allow(dead_code)]

use nalgebra::DMatrix;
use panelbreak::defactor::{build_averages, AverageOptions, Projector};
use panelbreak::inference::critical::{seq_adjusted_level, upper_quantile, CriticalValueTable, CvKind};
use panelbreak::inference::hac::{hac_covariance, HacSpec};
use panelbreak::inference::testing::f_statistic;
use panelbreak::search::{dp_minimize, estimate_breaks, full_fit, search_engine, BreakSearch, SearchOptions, SegmentTable};
use panelbreak::{BreakSet, PanelDataset, PanelParts, Trimming};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Shape of a random panel.
#[derive(Debug, Clone)]
pub struct Design {
    pub n: usize,
    pub t: usize,
    pub p_x: usize,
    pub p_w: usize,
    pub k: usize,
    pub seed: u64,
}

pub fn design(n: std::ops::RangeInclusive<usize>, t: std::ops::RangeInclusive<usize>, k_max: usize) -> impl Strategy<Value = Design> {
    (n, t, 0..=2usize, 1..=2usize, 0..=k_max, any::<u64>())
        .prop_map(|(n, t, p_x, p_w, k, seed)| {
            // Five regimes at ε = 0.2, each long enough to leave variation after defactoring.
            let t = t.max(5 * (2 * p_w + p_x + 3));
            Design { n, t, p_x, p_w, k, seed }
        })
}

/// Factor-driven panel with heteroskedastic noise; regimes shift δ by unit steps.
pub fn panel(d: &Design) -> PanelDataset {
    let mut rng = ChaCha8Rng::seed_from_u64(d.seed);
    let mut g = move || rng.random::<f64>() * 2.0 - 1.0;
    let f: Vec<[f64; 2]> = (0..d.t).map(|_| [1.0 + g(), g()]).collect();
    let mut x = Vec::new();
    let mut w = Vec::new();
    let mut y = DMatrix::zeros(d.t, d.n);
    let shift = d.t / (d.k + 1);
    for i in 0..d.n {
        let gam = [g(), g()];
        let load = |g: &mut dyn FnMut() -> f64, t: usize| gam[0] * f[t][0] + gam[1] * f[t][1] + g();
        let xi = DMatrix::from_fn(d.t, d.p_x, |t, _| load(&mut g, t));
        let wi = DMatrix::from_fn(d.t, d.p_w, |t, _| load(&mut g, t));
        let scale = 0.5 + g().abs();
        for t in 0..d.t {
            let regime = (t / shift.max(1)).min(d.k) as f64;
            let xb: f64 = xi.row(t).sum();
            let wd: f64 = wi.row(t).iter().map(|v| v * (1.0 + regime)).sum();
            y[(t, i)] = xb + wd + gam[0] * f[t][0] - gam[1] * f[t][1] + scale * g();
        }
        x.push(xi);
        w.push(wi);
    }
    PanelDataset::new(PanelParts { y, x, w, ..Default::default() }).expect("valid panel")
}

/// Random admissible `k`-break set for a trimming with at least `k` breaks of capacity.
pub fn breaks(rng: &mut ChaCha8Rng, trim: &Trimming, k: usize, t: usize) -> BreakSet {
    let all: Vec<BreakSet> = trim.enumerate_admissible(k, t).expect("capacity").collect();
    all[rng.random_range(0..all.len())].clone()
}

fn rel(a: f64, b: f64) -> f64 {
    a / b.max(f64::MIN_POSITIVE)
}

pub fn check_projection(d: &Design) -> Result<(), String> {
    let data = panel(d);
    let mut rng = ChaCha8Rng::seed_from_u64(d.seed ^ 1);
    let trim = Trimming::new(0.2).unwrap();
    let b = breaks(&mut rng, &trim, d.k.min(trim.max_breaks()), d.t);
    let avg = build_averages(&data, &b, &AverageOptions::full(true, rng.random()));
    let p = Projector::new(&avg).map_err(|e| e.to_string())?;
    let m = p.matrix();
    let norm = m.norm();
    let idem = (&m * &m - &m).norm();
    let sym = (&m - m.transpose()).norm();
    let ann = (&m * &avg.z_bar).norm();
    if rel(idem, norm) > 1e-8 || rel(sym, norm) > 1e-8 {
        return Err(format!("M not a projection: ‖M²−M‖/‖M‖ = {:e}, asymmetry {:e}", rel(idem, norm), rel(sym, norm)));
    }
    if rel(ann, avg.z_bar.norm()) > 1e-8 {
        return Err(format!("‖M Z̄‖/‖Z̄‖ = {:e}", rel(ann, avg.z_bar.norm())));
    }
    let v = DMatrix::from_fn(d.t, 3, |_, _| rng.random::<f64>());
    let once = p.apply(&v);
    if rel((p.apply(&once) - &once).norm(), v.norm()) > 1e-8 {
        return Err("projecting twice differs from once".into());
    }
    Ok(())
}

pub fn check_phi_psd(d: &Design) -> Result<(), String> {
    let data = panel(d);
    let mut rng = ChaCha8Rng::seed_from_u64(d.seed ^ 2);
    let trim = Trimming::new(0.2).unwrap();
    let b = breaks(&mut rng, &trim, d.k.min(trim.max_breaks()), d.t);
    let fit = full_fit(&data, &b, &SearchOptions::default()).map_err(|e| e.to_string())?;
    let l = rng.random_range(0..d.t);
    let cov = hac_covariance(&fit, &HacSpec::new(l)).map_err(|e| e.to_string())?;
    for (name, m) in std::iter::once(("pooled", &cov.phi)).chain(cov.regime_phi.iter().map(|m| ("regime", m))) {
        let eig = m.clone().symmetric_eigenvalues();
        let max = eig.iter().fold(0.0_f64, |a, v| a.max(v.abs()));
        let min = eig.iter().cloned().fold(f64::INFINITY, f64::min);
        if min < -1e-10 * max {
            return Err(format!("{name} Φ̂ has eigenvalue {min:e} (max {max:e}) at L = {l}"));
        }
        if (m - m.transpose()).norm() > 1e-12 * m.norm() {
            return Err(format!("{name} Φ̂ is not symmetric"));
        }
    }
    Ok(())
}

pub fn check_f_scale(d: &Design, c: f64) -> Result<(), String> {
    let data = panel(d);
    let k = d.k.max(1);
    let trim = Trimming::new(0.15).unwrap();
    let opts = SearchOptions::default();
    let scaled = data.with_y(data.y() * c).map_err(|e| e.to_string())?;
    let f = |p: &PanelDataset| -> Result<(Vec<usize>, f64), String> {
        let est = estimate_breaks(p, &BreakSearch::Global { k }, &trim, &opts).map_err(|e| e.to_string())?;
        let cov = hac_covariance(&est.fit, &HacSpec::default_for(p.n_periods())).map_err(|e| e.to_string())?;
        Ok((est.best_breaks.dates().to_vec(), f_statistic(&est.fit, &cov).map_err(|e| e.to_string())?))
    };
    let (b0, f0) = f(&data)?;
    let (b1, f1) = f(&scaled)?;
    if b0 != b1 {
        return Err(format!("break dates moved under y ↦ {c}·y: {b0:?} → {b1:?}"));
    }
    if (f0 - f1).abs() > 1e-8 * f0.abs().max(1.0) {
        return Err(format!("F changed under y ↦ {c}·y: {f0} → {f1}"));
    }
    Ok(())
}

pub fn check_ssr_monotone(d: &Design) -> Result<(), String> {
    let data = panel(d);
    let mut rng = ChaCha8Rng::seed_from_u64(d.seed ^ 3);
    let trim = Trimming::new(0.2).unwrap();
    let k = d.k.clamp(1, trim.max_breaks());
    let fine = breaks(&mut rng, &trim, k, d.t);
    let mut dates = fine.dates().to_vec();
    dates.remove(rng.random_range(0..dates.len()));
    let coarse = BreakSet::new(dates, d.t).unwrap();
    let opts = SearchOptions::default();
    let s1 = full_fit(&data, &fine, &opts).map_err(|e| e.to_string())?.ssr;
    let s0 = full_fit(&data, &coarse, &opts).map_err(|e| e.to_string())?.ssr;
    if s1 > s0 * (1.0 + 1e-10) {
        return Err(format!("SSR rose from {s0} to {s1} when adding a break"));
    }
    let engine = search_engine(&data, None, &opts).map_err(|e| e.to_string())?;
    let h = trim.min_length(d.t);
    let table = SegmentTable::build(&engine, h);
    let per_k = dp_minimize(&table, trim.max_breaks()).map_err(|e| e.to_string())?;
    for w in per_k.windows(2) {
        // Only guaranteed when some regime of the k-optimum can itself be split admissibly.
        let splittable = w[0].0.regimes().iter().any(|r| r.len() >= 2 * h);
        if splittable && w[1].1 > w[0].1 {
            return Err(format!("optimal SSR rose from {} to {} with one more break", w[0].1, w[1].1));
        }
    }
    Ok(())
}

/// `seqF(α, k)` equals the one-break supF value at `1 − (1 − α)^{1/(k+1)}`, and quantiles are order statistics.
pub fn check_order_statistic(table: &CriticalValueTable, alpha: f64, k: usize, p_w: usize, eps: f64, sample: &[f64], level: f64) -> Result<(), String> {
    let seq = table.seq_value(k, p_w, eps, alpha).map_err(|e| e.to_string())?;
    let direct = table.value(CvKind::SupF, 1, p_w, eps, seq_adjusted_level(alpha, k)).map_err(|e| e.to_string())?;
    if seq != direct {
        return Err(format!("seqF({alpha}, {k}) = {seq} but supF(1) at adjusted level = {direct}"));
    }
    let adj = seq_adjusted_level(alpha, k);
    if ((1.0 - adj).powi(k as i32 + 1) - (1.0 - alpha)).abs() > 1e-12 {
        return Err(format!("adjusted level {adj} does not invert (1 − α)^(k+1)"));
    }
    let mut sorted = sample.to_vec();
    sorted.sort_by(f64::total_cmp);
    let q = upper_quantile(&sorted, level);
    // Oracle: smallest sample value whose empirical CDF reaches 1 − level.
    let n = sorted.len() as f64;
    let oracle = sorted
        .iter()
        .copied()
        .find(|&v| sorted.iter().filter(|&&u| u <= v).count() as f64 >= (1.0 - level) * n - 1e-9)
        .unwrap();
    if q != oracle {
        return Err(format!("upper quantile {q} ≠ order statistic {oracle} (n = {}, level = {level})", sorted.len()));
    }
    Ok(())
}
