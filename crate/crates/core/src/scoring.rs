//! Forecast evaluation: sample CRPS, RMSE, and report tables aggregated per
//! model and series.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::str::FromStr;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::error::{domain, Error, Result};
use crate::ts_model::Variant;

/// Sample CRPS, `(1/n) Σ|x_i − y| − (1/(2n²)) Σ_i Σ_j |x_i − x_j|`.
pub fn crps_sample(samples: &[f64], y: f64) -> Result<f64> {
    if samples.len() < 2 {
        return domain(format!(
            "CRPS needs at least 2 samples, got {}",
            samples.len()
        ));
    }
    if !y.is_finite() || samples.iter().any(|x| !x.is_finite()) {
        return domain("CRPS inputs must be finite");
    }
    let mut sorted = samples.to_vec();
    sorted.sort_by(f64::total_cmp);
    Ok(crps_sorted(&sorted, y))
}

/// [`crps_sample`] for an ascending sample (no validation).
pub fn crps_sorted(sorted: &[f64], y: f64) -> f64 {
    let n = sorted.len() as f64;
    let abs_dev: f64 = sorted.iter().map(|x| (x - y).abs()).sum();
    // Σ_{i<j} (x_j − x_i) accumulated over consecutive gaps.
    let spread: f64 = sorted
        .windows(2)
        .enumerate()
        .map(|(k, w)| {
            let k = (k + 1) as f64;
            k * (n - k) * (w[1] - w[0])
        })
        .sum();
    (abs_dev / n - spread / (n * n)).max(0.0)
}

pub fn rmse(preds: &[f64], actuals: &[f64]) -> Result<f64> {
    if preds.len() != actuals.len() {
        return Err(Error::Dimension {
            expected: preds.len(),
            got: actuals.len(),
        });
    }
    if preds.is_empty() {
        return domain("RMSE of an empty sequence");
    }
    let mse = preds
        .iter()
        .zip(actuals)
        .map(|(p, a)| (p - a) * (p - a))
        .sum::<f64>()
        / preds.len() as f64;
    Ok(mse.sqrt())
}

/// A forecasting model taking part in a study.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum ModelKind {
    Copula(Variant),
    Garch,
}

impl ModelKind {
    pub const ALL: [ModelKind; 5] = [
        ModelKind::Copula(Variant::StemDvine),
        ModelKind::Garch,
        ModelKind::Copula(Variant::TemT),
        ModelKind::Copula(Variant::StemT),
        ModelKind::Copula(Variant::StemGaussian),
    ];

    pub fn name(self) -> &'static str {
        match self {
            ModelKind::Copula(v) => v.name(),
            ModelKind::Garch => "garch",
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            ModelKind::Copula(v) => v.label(),
            ModelKind::Garch => "AVT-GARCH (simplified)",
        }
    }
}

impl FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s == "garch" {
            Ok(ModelKind::Garch)
        } else {
            s.parse().map(ModelKind::Copula)
        }
    }
}

impl TryFrom<String> for ModelKind {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<ModelKind> for String {
    fn from(m: ModelKind) -> String {
        m.name().to_string()
    }
}

impl std::fmt::Display for ModelKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Point forecast rules.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PointKind {
    Mean,
    Mode,
    Ann,
}

impl PointKind {
    pub fn label(self) -> &'static str {
        match self {
            PointKind::Mean => "Mean",
            PointKind::Mode => "Mode",
            PointKind::Ann => "ANN",
        }
    }
}

/// One scored forecast of one series by one model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForecastRecord {
    /// Index of the forecast target in the differenced series.
    pub target_index: usize,
    pub target_date: Option<NaiveDate>,
    pub model: ModelKind,
    pub series: String,
    pub realized: f64,
    pub crps: f64,
    pub mean: f64,
    pub mode: Option<f64>,
    pub ann: Option<f64>,
    /// Quantile level chosen by the ANN.
    pub ann_level: Option<f64>,
    /// MSE-optimal quantile level given the realization.
    pub optimal_level: f64,
    /// False for the records used to train the ANN.
    pub rmse_eligible: bool,
}

impl ForecastRecord {
    pub fn point(&self, kind: PointKind) -> Option<f64> {
        match kind {
            PointKind::Mean => Some(self.mean),
            PointKind::Mode => self.mode,
            PointKind::Ann => self.ann,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreCell {
    pub value: f64,
    pub n_forecasts: usize,
    pub start: Option<NaiveDate>,
    pub end: Option<NaiveDate>,
}

/// Aggregated scores: mean CRPS per (model, series) and RMSE per
/// (model, point rule, series).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreReport {
    pub series: Vec<String>,
    pub crps: BTreeMap<(ModelKind, String), ScoreCell>,
    pub rmse: BTreeMap<(ModelKind, PointKind, String), ScoreCell>,
    pub notes: Vec<String>,
}

fn window(records: &[&ForecastRecord]) -> (Option<NaiveDate>, Option<NaiveDate>) {
    let dates = records.iter().filter_map(|r| r.target_date);
    (dates.clone().min(), dates.max())
}

/// Aggregates a record stream. Series appear in order of first occurrence.
pub fn aggregate_report(records: &[ForecastRecord]) -> Result<ScoreReport> {
    if records.is_empty() {
        return domain("cannot aggregate an empty record window");
    }
    let mut series = Vec::new();
    for r in records {
        if !series.contains(&r.series) {
            series.push(r.series.clone());
        }
    }
    let mut groups: BTreeMap<(ModelKind, String), Vec<&ForecastRecord>> = BTreeMap::new();
    for r in records {
        groups
            .entry((r.model, r.series.clone()))
            .or_default()
            .push(r);
    }
    let mut crps = BTreeMap::new();
    let mut rmse_cells = BTreeMap::new();
    for ((model, s), mut recs) in groups {
        // Fixed summation order makes the result independent of record order.
        recs.sort_by_key(|r| r.target_index);
        let (start, end) = window(&recs);
        let value = recs.iter().map(|r| r.crps).sum::<f64>() / recs.len() as f64;
        crps.insert(
            (model, s.clone()),
            ScoreCell {
                value,
                n_forecasts: recs.len(),
                start,
                end,
            },
        );
        let eligible: Vec<&ForecastRecord> =
            recs.iter().copied().filter(|r| r.rmse_eligible).collect();
        for kind in [PointKind::Mean, PointKind::Mode, PointKind::Ann] {
            let pairs: Vec<(f64, f64)> = eligible
                .iter()
                .filter_map(|r| r.point(kind).map(|p| (p, r.realized)))
                .collect();
            if pairs.is_empty() {
                continue;
            }
            let (p, a): (Vec<f64>, Vec<f64>) = pairs.into_iter().unzip();
            let (start, end) = window(&eligible);
            rmse_cells.insert(
                (model, kind, s.clone()),
                ScoreCell {
                    value: rmse(&p, &a)?,
                    n_forecasts: p.len(),
                    start,
                    end,
                },
            );
        }
    }
    Ok(ScoreReport {
        series,
        crps,
        rmse: rmse_cells,
        notes: Vec::new(),
    })
}

/// Leading RMSE columns; remaining (model, rule) pairs follow.
const RMSE_PRIMARY: [(ModelKind, PointKind); 5] = [
    (ModelKind::Copula(Variant::StemDvine), PointKind::Ann),
    (ModelKind::Garch, PointKind::Mean),
    (ModelKind::Copula(Variant::StemDvine), PointKind::Mean),
    (ModelKind::Copula(Variant::StemDvine), PointKind::Mode),
    (ModelKind::Copula(Variant::TemT), PointKind::Ann),
];

fn rmse_label(model: ModelKind, kind: PointKind) -> String {
    match (model, kind) {
        (ModelKind::Garch, PointKind::Mean) => model.label().to_string(),
        _ => format!("{} {}", model.label(), kind.label()),
    }
}

impl ScoreReport {
    pub fn crps_columns(&self) -> Vec<ModelKind> {
        let present: BTreeSet<ModelKind> = self.crps.keys().map(|k| k.0).collect();
        ModelKind::ALL
            .into_iter()
            .filter(|m| present.contains(m))
            .collect()
    }

    pub fn rmse_columns(&self) -> Vec<(ModelKind, PointKind)> {
        let present: BTreeSet<(ModelKind, PointKind)> =
            self.rmse.keys().map(|k| (k.0, k.1)).collect();
        let mut cols: Vec<(ModelKind, PointKind)> = RMSE_PRIMARY
            .into_iter()
            .filter(|c| present.contains(c))
            .collect();
        for m in ModelKind::ALL {
            for k in [PointKind::Ann, PointKind::Mean, PointKind::Mode] {
                if present.contains(&(m, k)) && !cols.contains(&(m, k)) {
                    cols.push((m, k));
                }
            }
        }
        cols
    }

    pub fn crps_value(&self, model: ModelKind, series: &str) -> Option<f64> {
        self.crps.get(&(model, series.to_string())).map(|c| c.value)
    }

    pub fn rmse_value(&self, model: ModelKind, kind: PointKind, series: &str) -> Option<f64> {
        self.rmse
            .get(&(model, kind, series.to_string()))
            .map(|c| c.value)
    }

    /// Long-format delimiter-separated table.
    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record([
            "table",
            "column",
            "model",
            "point",
            "series",
            "value",
            "n_forecasts",
            "start",
            "end",
        ])?;
        let date = |d: Option<NaiveDate>| d.map(|d| d.to_string()).unwrap_or_default();
        for m in self.crps_columns() {
            for s in &self.series {
                if let Some(c) = self.crps.get(&(m, s.clone())) {
                    w.write_record([
                        "crps",
                        m.label(),
                        m.name(),
                        "",
                        s,
                        &format!("{:.10}", c.value),
                        &c.n_forecasts.to_string(),
                        &date(c.start),
                        &date(c.end),
                    ])?;
                }
            }
        }
        for (m, k) in self.rmse_columns() {
            for s in &self.series {
                if let Some(c) = self.rmse.get(&(m, k, s.clone())) {
                    w.write_record([
                        "rmse",
                        &rmse_label(m, k),
                        m.name(),
                        k.label(),
                        s,
                        &format!("{:.10}", c.value),
                        &c.n_forecasts.to_string(),
                        &date(c.start),
                        &date(c.end),
                    ])?;
                }
            }
        }
        let bytes = w.into_inner().map_err(|e| Error::Data(e.to_string()))?;
        String::from_utf8(bytes).map_err(|e| Error::Data(e.to_string()))
    }

    /// Both tables as aligned text, series in rows and models in columns.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let crps_cols = self.crps_columns();
        let header: Vec<String> = crps_cols.iter().map(|m| m.label().to_string()).collect();
        let rows: Vec<Vec<Option<&ScoreCell>>> = self
            .series
            .iter()
            .map(|s| {
                crps_cols
                    .iter()
                    .map(|&m| self.crps.get(&(m, s.clone())))
                    .collect()
            })
            .collect();
        let _ = writeln!(
            out,
            "CRPS{}",
            window_caption(rows.iter().flatten().flatten().copied())
        );
        out.push_str(&render_table(&self.series, &header, &rows));

        let rmse_cols = self.rmse_columns();
        let header: Vec<String> = rmse_cols.iter().map(|&(m, k)| rmse_label(m, k)).collect();
        let rows: Vec<Vec<Option<&ScoreCell>>> = self
            .series
            .iter()
            .map(|s| {
                rmse_cols
                    .iter()
                    .map(|&(m, k)| self.rmse.get(&(m, k, s.clone())))
                    .collect()
            })
            .collect();
        let _ = writeln!(
            out,
            "\nRMSE{}",
            window_caption(rows.iter().flatten().flatten().copied())
        );
        out.push_str(&render_table(&self.series, &header, &rows));
        if !self.notes.is_empty() {
            out.push_str("\nNotes:\n");
            for (i, n) in self.notes.iter().enumerate() {
                let _ = writeln!(out, "  [{}] {}", i + 1, n);
            }
        }
        out
    }
}

fn window_caption<'a>(cells: impl Iterator<Item = &'a ScoreCell>) -> String {
    let cells: Vec<&ScoreCell> = cells.collect();
    let start = cells.iter().filter_map(|c| c.start).min();
    let end = cells.iter().filter_map(|c| c.end).max();
    let n = cells.iter().map(|c| c.n_forecasts).max().unwrap_or(0);
    match (start, end) {
        (Some(a), Some(b)) => format!(" ({a} to {b}, {n} forecasts)"),
        _ => format!(" ({n} forecasts)"),
    }
}

fn render_table(series: &[String], header: &[String], rows: &[Vec<Option<&ScoreCell>>]) -> String {
    let first = series
        .iter()
        .map(String::len)
        .chain(["Series".len()])
        .max()
        .unwrap_or(6);
    let widths: Vec<usize> = header.iter().map(|h| h.len().max(8)).collect();
    let mut out = format!("{:<first$}", "Series");
    for (h, w) in header.iter().zip(&widths) {
        let _ = write!(out, "  {h:>w$}");
    }
    out.push('\n');
    for (s, row) in series.iter().zip(rows) {
        let _ = write!(out, "{s:<first$}");
        for (cell, w) in row.iter().zip(&widths) {
            let text = cell.map_or("-".to_string(), |c| format!("{:.4}", c.value));
            let _ = write!(out, "  {text:>w$}");
        }
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn naive_crps(x: &[f64], y: f64) -> f64 {
        let n = x.len() as f64;
        let a: f64 = x.iter().map(|v| (v - y).abs()).sum::<f64>() / n;
        let b: f64 = x
            .iter()
            .flat_map(|u| x.iter().map(move |v| (u - v).abs()))
            .sum::<f64>();
        a - b / (2.0 * n * n)
    }

    /// ∫ (F_n(x) − 1{x ≥ y})² dx by midpoint rule on a fine grid.
    fn integrated_crps(x: &[f64], y: f64) -> f64 {
        let lo = x.iter().copied().fold(y, f64::min) - 1.0;
        let hi = x.iter().copied().fold(y, f64::max) + 1.0;
        let steps = 400_000;
        let h = (hi - lo) / steps as f64;
        (0..steps)
            .map(|i| {
                let t = lo + (i as f64 + 0.5) * h;
                let f = x.iter().filter(|&&v| v <= t).count() as f64 / x.len() as f64;
                let step = if t >= y { 1.0 } else { 0.0 };
                (f - step).powi(2) * h
            })
            .sum()
    }

    #[test]
    fn crps_examples() {
        assert_eq!(crps_sample(&[2.0, 2.0, 2.0], 2.0).unwrap(), 0.0);
        assert!((crps_sample(&[0.0, 1.0], 0.0).unwrap() - 0.25).abs() < 1e-15);
        assert!(crps_sample(&[1.0], 0.0).is_err());
        assert!(crps_sample(&[1.0, f64::NAN], 0.0).is_err());
        let x = [0.3, -1.2, 4.0, 2.5];
        let c = 7.25;
        let shifted: Vec<f64> = x.iter().map(|v| v + c).collect();
        assert!(
            (crps_sample(&shifted, 0.9 + c).unwrap() - crps_sample(&x, 0.9).unwrap()).abs() < 1e-12
        );
        let scaled: Vec<f64> = x.iter().map(|v| v * 3.0).collect();
        assert!(
            (crps_sample(&scaled, 2.7).unwrap() - 3.0 * crps_sample(&x, 0.9).unwrap()).abs()
                < 1e-12
        );
    }

    #[test]
    fn crps_matches_numeric_integration() {
        let sets: [(&[f64], f64); 5] = [
            (&[0.0, 1.0], 0.0),
            (&[0.0, 1.0, 2.0], 1.5),
            (&[-1.0, 3.0], 5.0),
            (&[0.5, 0.5, 0.7], 0.6),
            (&[-2.0, -1.0, 0.0, 1.0, 2.0], -3.0),
        ];
        for (x, y) in sets {
            let a = crps_sample(x, y).unwrap();
            assert!((a - integrated_crps(x, y)).abs() < 1e-3, "{x:?} {y}");
        }
    }

    #[test]
    fn sorted_formula_matches_naive_double_sum() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for n in [2, 3, 10, 257, 2000] {
            let x: Vec<f64> = (0..n).map(|_| rng.random::<f64>() * 10.0 - 5.0).collect();
            let y = rng.random::<f64>() * 12.0 - 6.0;
            assert!((crps_sample(&x, y).unwrap() - naive_crps(&x, y)).abs() < 1e-10);
        }
    }

    proptest! {
        #[test]
        fn sorted_formula_proptest(x in proptest::collection::vec(-50.0f64..50.0, 2..200), y in -60.0f64..60.0) {
            prop_assert!((crps_sample(&x, y).unwrap() - naive_crps(&x, y)).abs() < 1e-10);
        }
    }

    #[test]
    fn rmse_examples() {
        assert_eq!(rmse(&[1.0, 2.0], &[1.0, 2.0]).unwrap(), 0.0);
        assert!((rmse(&[1.5, 2.5], &[1.0, 2.0]).unwrap() - 0.5).abs() < 1e-15);
        assert!((rmse(&[0.0, 0.0], &[3.0, 4.0]).unwrap() - 12.5f64.sqrt()).abs() < 1e-9);
        assert!((12.5f64.sqrt() - 3.5355).abs() < 1e-4);
        assert!(rmse(&[1.0], &[1.0, 2.0]).is_err());
        assert!(rmse(&[], &[]).is_err());
    }

    fn record(
        model: ModelKind,
        series: &str,
        idx: usize,
        realized: f64,
        crps: f64,
        mean: f64,
        eligible: bool,
    ) -> ForecastRecord {
        ForecastRecord {
            target_index: idx,
            target_date: NaiveDate::from_ymd_opt(2020, 1, 1)
                .map(|d| d + chrono::Days::new(idx as u64)),
            model,
            series: series.into(),
            realized,
            crps,
            mean,
            mode: Some(mean),
            ann: None,
            ann_level: None,
            optimal_level: 0.5,
            rmse_eligible: eligible,
        }
    }

    #[test]
    fn perfect_forecast_report() {
        let r = record(ModelKind::Garch, "gas", 0, 1.0, 0.0, 1.0, true);
        let rep = aggregate_report(&[r]).unwrap();
        assert_eq!(rep.crps_value(ModelKind::Garch, "gas"), Some(0.0));
        assert_eq!(
            rep.rmse_value(ModelKind::Garch, PointKind::Mean, "gas"),
            Some(0.0)
        );
        assert!(aggregate_report(&[]).is_err());
    }

    #[test]
    fn aggregation_matches_brute_force_and_groups() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let models = [ModelKind::Copula(Variant::TemT), ModelKind::Garch];
        let mut records = Vec::new();
        for i in 0..200 {
            for m in models {
                for s in ["gas", "oil"] {
                    let bias = if s == "oil" { 100.0 } else { 0.0 };
                    records.push(record(
                        m,
                        s,
                        i,
                        rng.random::<f64>() + bias,
                        rng.random(),
                        rng.random::<f64>() + bias,
                        i >= 50,
                    ));
                }
            }
        }
        let rep = aggregate_report(&records).unwrap();
        for m in models {
            for s in ["gas", "oil"] {
                let sel: Vec<&ForecastRecord> = records
                    .iter()
                    .filter(|r| r.model == m && r.series == s)
                    .collect();
                let crps = sel.iter().map(|r| r.crps).sum::<f64>() / sel.len() as f64;
                let elig: Vec<&&ForecastRecord> = sel.iter().filter(|r| r.rmse_eligible).collect();
                let mse = elig
                    .iter()
                    .map(|r| (r.mean - r.realized).powi(2))
                    .sum::<f64>()
                    / elig.len() as f64;
                assert!((rep.crps_value(m, s).unwrap() - crps).abs() < 1e-12);
                assert!(
                    (rep.rmse_value(m, PointKind::Mean, s).unwrap() - mse.sqrt()).abs() < 1e-12
                );
                assert_eq!(rep.crps[&(m, s.to_string())].n_forecasts, 200);
                assert_eq!(
                    rep.rmse[&(m, PointKind::Mean, s.to_string())].n_forecasts,
                    150
                );
            }
        }
        // Shuffling leaves the report unchanged.
        let mut shuffled = records.clone();
        shuffled.reverse();
        shuffled.swap(3, 300);
        let rep2 = aggregate_report(&shuffled).unwrap();
        assert_eq!(rep.crps, rep2.crps);
        assert_eq!(rep.rmse, rep2.rmse);
    }

    #[test]
    fn table_columns_follow_paper_layout() {
        let mut records = Vec::new();
        for m in ModelKind::ALL.iter().rev() {
            let mut r = record(*m, "gas", 0, 1.0, 0.1, 1.0, true);
            if matches!(
                m,
                ModelKind::Copula(Variant::StemDvine) | ModelKind::Copula(Variant::TemT)
            ) {
                r.ann = Some(1.1);
            }
            if *m == ModelKind::Garch {
                r.mode = None;
            }
            records.push(r);
        }
        let rep = aggregate_report(&records).unwrap();
        assert_eq!(rep.crps_columns(), ModelKind::ALL.to_vec());
        let labels: Vec<String> = rep
            .rmse_columns()
            .iter()
            .map(|&(m, k)| rmse_label(m, k))
            .collect();
        assert_eq!(
            &labels[..5],
            &[
                "S-Tem D-Vine ANN",
                "AVT-GARCH (simplified)",
                "S-Tem D-Vine Mean",
                "S-Tem D-Vine Mode",
                "Tem-t ANN"
            ]
        );
        let text = rep.to_text();
        assert!(text.contains("AVT-GARCH (simplified)"));
        let csv = rep.to_csv().unwrap();
        assert!(csv.lines().next().unwrap().starts_with("table,column"));
    }

    #[test]
    fn model_kind_names() {
        for m in ModelKind::ALL {
            assert_eq!(m.name().parse::<ModelKind>().unwrap(), m);
        }
        assert_eq!(
            serde_json::to_string(&ModelKind::Garch).unwrap(),
            "\"garch\""
        );
    }
}
