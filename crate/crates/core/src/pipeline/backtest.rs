//! Expanding-window forecasting study.

use std::path::Path;

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::adf::adf_test;
use super::data::Dataset;
use super::rng::{substream, Purpose};
use crate::ann_quantile::{
    build_features, level_of_sorted, mlp_forward, mlp_train, AnnTrainingRecord, TrainConfig,
    DEFAULT_PAST_LEVELS, DEFAULT_WINDOW,
};
use crate::benchmark_garch::{
    final_state, fit_arx_avtgarch_with, forecast_arx_avtgarch, update_state, ArxAvtGarchModel,
    GarchFitOptions, GarchState,
};
use crate::copula_pair::PairFamily;
use crate::error::{Error, Result};
use crate::kde::kde_argmax_sample;
use crate::scoring::{aggregate_report, crps_sorted, ForecastRecord, ModelKind, ScoreReport};
use crate::ts_model::{
    fit_st_model, forecast_distribution, sample_mean, sorted_quantile, ProbForecast,
    SpatioTemporalModel, Variant,
};

const NEUTRAL_LEVEL: f64 = 0.5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AnnConfig {
    pub window: usize,
    pub past_levels: usize,
    pub train: TrainConfig,
}

impl Default for AnnConfig {
    fn default() -> Self {
        Self {
            window: DEFAULT_WINDOW,
            past_levels: DEFAULT_PAST_LEVELS,
            train: TrainConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BacktestConfig {
    pub initial_window: usize,
    pub refit_every: usize,
    pub mc_samples: usize,
    pub ann_training_forecasts: usize,
    pub models: Vec<ModelKind>,
    pub seed: u64,
    /// Pair families offered to the D-vine.
    pub candidates: Vec<PairFamily>,
    pub ann: AnnConfig,
    /// Optimizer starts for warm-started benchmark refits.
    pub garch_refit_starts: usize,
    /// Target indices whose forecast samples are returned.
    pub dump_targets: Vec<usize>,
}

impl Default for BacktestConfig {
    fn default() -> Self {
        Self {
            initial_window: 1000,
            refit_every: 1,
            mc_samples: 1000,
            ann_training_forecasts: 1000,
            models: ModelKind::ALL.to_vec(),
            seed: 0,
            candidates: PairFamily::ALL.to_vec(),
            ann: AnnConfig::default(),
            garch_refit_starts: 1,
            dump_targets: Vec::new(),
        }
    }
}

impl BacktestConfig {
    /// Checks the configuration against a dataset of `t` level observations.
    pub fn validate(&self, t: usize) -> Result<()> {
        if self.initial_window + self.ann_training_forecasts >= t {
            return Err(Error::Config(format!(
                "initial_window + ann_training_forecasts = {} must be below the {t} observations",
                self.initial_window + self.ann_training_forecasts
            )));
        }
        if self.mc_samples < 100 {
            return Err(Error::Config(format!(
                "mc_samples must be at least 100, got {}",
                self.mc_samples
            )));
        }
        if self.refit_every == 0 {
            return Err(Error::Config("refit_every must be positive".into()));
        }
        if self.models.is_empty() {
            return Err(Error::Config("no models selected".into()));
        }
        if self.initial_window <= self.ann.window {
            return Err(Error::Config(
                "initial_window must exceed the ANN lag window".into(),
            ));
        }
        Ok(())
    }
}

/// A model run through the study. `history` holds every differenced
/// observation strictly before the forecast target.
pub trait Forecaster {
    fn kind(&self) -> ModelKind;
    /// Dataset series this forecaster predicts, in output order.
    fn series(&self) -> &[usize];
    /// Identifier of the random substream.
    fn stream(&self) -> u64;
    fn refit(&mut self, history: &[Vec<f64>]) -> Result<()>;
    fn forecast(
        &mut self,
        history: &[Vec<f64>],
        n: usize,
        rng: &mut ChaCha8Rng,
    ) -> Result<ProbForecast>;
}

fn model_id(kind: ModelKind) -> u64 {
    match kind {
        ModelKind::Garch => 1,
        ModelKind::Copula(Variant::TemT) => 2,
        ModelKind::Copula(Variant::StemGaussian) => 3,
        ModelKind::Copula(Variant::StemT) => 4,
        ModelKind::Copula(Variant::StemDvine) => 5,
    }
}

fn column(history: &[Vec<f64>], s: usize) -> Vec<f64> {
    history.iter().map(|r| r[s]).collect()
}

struct CopulaForecaster {
    variant: Variant,
    series: Vec<usize>,
    names: Vec<String>,
    candidates: Vec<PairFamily>,
    model: Option<SpatioTemporalModel>,
}

impl Forecaster for CopulaForecaster {
    fn kind(&self) -> ModelKind {
        ModelKind::Copula(self.variant)
    }

    fn series(&self) -> &[usize] {
        &self.series
    }

    fn stream(&self) -> u64 {
        model_id(self.kind()) * 1000
            + if self.series.len() == 1 {
                self.series[0] as u64
            } else {
                999
            }
    }

    fn refit(&mut self, history: &[Vec<f64>]) -> Result<()> {
        self.model = None;
        let cols: Vec<Vec<f64>> = self.series.iter().map(|&s| column(history, s)).collect();
        self.model = Some(fit_st_model(
            &cols,
            &self.names,
            self.variant,
            &self.candidates,
        )?);
        Ok(())
    }

    fn forecast(
        &mut self,
        history: &[Vec<f64>],
        n: usize,
        rng: &mut ChaCha8Rng,
    ) -> Result<ProbForecast> {
        let model = self
            .model
            .as_ref()
            .ok_or_else(|| Error::State("model not fitted".into()))?;
        let last = history
            .last()
            .ok_or_else(|| Error::State("empty history".into()))?;
        let x_prev: Vec<f64> = self.series.iter().map(|&s| last[s]).collect();
        forecast_distribution(model, &x_prev, n, rng)
    }
}

/// Benchmark for one series; regressors are the other series' previous values.
struct GarchForecaster {
    series: [usize; 1],
    d: usize,
    refit_starts: usize,
    fitted: Option<(ArxAvtGarchModel, GarchState, usize)>,
    warm: Option<ArxAvtGarchModel>,
}

/// Regressor row for observation `i` of series `s`.
fn regressors(history: &[Vec<f64>], s: usize, d: usize, i: usize) -> Vec<f64> {
    (0..d)
        .filter(|&j| j != s)
        .map(|j| if i == 0 { 0.0 } else { history[i - 1][j] })
        .collect()
}

impl Forecaster for GarchForecaster {
    fn kind(&self) -> ModelKind {
        ModelKind::Garch
    }

    fn series(&self) -> &[usize] {
        &self.series
    }

    fn stream(&self) -> u64 {
        model_id(ModelKind::Garch) * 1000 + self.series[0] as u64
    }

    fn refit(&mut self, history: &[Vec<f64>]) -> Result<()> {
        self.fitted = None;
        let y = column(history, self.series[0]);
        let x: Vec<Vec<f64>> = (0..history.len())
            .map(|i| regressors(history, self.series[0], self.d, i))
            .collect();
        let opts = GarchFitOptions {
            warm_start: self.warm.clone(),
            starts: self.warm.as_ref().map(|_| self.refit_starts),
            max_iters: None,
        };
        let fit = fit_arx_avtgarch_with(&y, &x, &opts)?;
        let state = final_state(&fit.model, &y, &x)?;
        self.warm = Some(fit.model.clone());
        self.fitted = Some((fit.model, state, history.len() - 1));
        Ok(())
    }

    fn forecast(
        &mut self,
        history: &[Vec<f64>],
        n: usize,
        rng: &mut ChaCha8Rng,
    ) -> Result<ProbForecast> {
        let s = self.series[0];
        let t = history.len();
        let d = self.d;
        let (model, state, at) = self
            .fitted
            .as_mut()
            .ok_or_else(|| Error::State("model not fitted".into()))?;
        while *at + 1 < t {
            *at += 1;
            *state = update_state(
                model,
                *state,
                history[*at][s],
                &regressors(history, s, d, *at),
            );
        }
        let x_now = regressors(history, s, d, t);
        let (f, _) = forecast_arx_avtgarch(model, state.y, &x_now, state.sigma, state.eps, n, rng)?;
        Ok(f)
    }
}

/// Standard forecasters for the configured models.
pub fn standard_forecasters(data: &Dataset, cfg: &BacktestConfig) -> Vec<Box<dyn Forecaster>> {
    let d = data.d();
    let mut out: Vec<Box<dyn Forecaster>> = Vec::new();
    for &kind in &cfg.models {
        match kind {
            ModelKind::Copula(Variant::TemT) => {
                for s in 0..d {
                    out.push(Box::new(CopulaForecaster {
                        variant: Variant::TemT,
                        series: vec![s],
                        names: vec![data.series_names[s].clone()],
                        candidates: cfg.candidates.clone(),
                        model: None,
                    }));
                }
            }
            ModelKind::Copula(variant) => out.push(Box::new(CopulaForecaster {
                variant,
                series: (0..d).collect(),
                names: data.series_names.clone(),
                candidates: cfg.candidates.clone(),
                model: None,
            })),
            ModelKind::Garch => {
                for s in 0..d {
                    out.push(Box::new(GarchForecaster {
                        series: [s],
                        d,
                        refit_starts: cfg.garch_refit_starts,
                        fitted: None,
                        warm: None,
                    }));
                }
            }
        }
    }
    out
}

/// Forecast samples kept for external plotting.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleDump {
    pub model: ModelKind,
    pub target_index: usize,
    pub series: String,
    pub samples: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct BacktestOutput {
    pub report: ScoreReport,
    pub records: Vec<ForecastRecord>,
    pub dumps: Vec<SampleDump>,
}

/// Record under construction; `sorted` is kept for ANN scoring.
struct Pending {
    record: ForecastRecord,
    series_index: usize,
    order: usize,
    sorted: Option<Vec<f64>>,
}

/// Expanding-window study with the models named in `cfg`.
pub fn expanding_backtest(data: &Dataset, cfg: &BacktestConfig) -> Result<BacktestOutput> {
    run_backtest(data, cfg, standard_forecasters(data, cfg))
}

/// Expanding-window study over arbitrary forecasters. Origin `t` forecasts
/// `diffs[t]` from `diffs[..t]`, for `t` from `initial_window` to the end.
pub fn run_backtest(
    data: &Dataset,
    cfg: &BacktestConfig,
    mut forecasters: Vec<Box<dyn Forecaster>>,
) -> Result<BacktestOutput> {
    cfg.validate(data.len())?;
    let diffs = &data.diffs;
    let n_diffs = diffs.len();
    let ann_start = cfg.initial_window + cfg.ann_training_forecasts;
    let mut notes = Vec::new();
    for s in 0..data.d() {
        let col: Vec<f64> = column(&diffs[..cfg.initial_window], s);
        match adf_test(&col) {
            Ok(r) if !r.reject => notes.push(format!(
                "unit root not rejected at 1% for differenced '{}' over the initial window (ADF {:.2})",
                data.series_names[s], r.statistic
            )),
            Ok(_) => {}
            Err(e) => notes.push(format!("ADF screening skipped for '{}': {e}", data.series_names[s])),
        }
    }

    let mut pending: Vec<Pending> = Vec::new();
    let mut dumps = Vec::new();
    for (order, f) in forecasters.iter_mut().enumerate() {
        let kind = f.kind();
        let series = f.series().to_vec();
        let mut refit_due = true;
        for t in cfg.initial_window..n_diffs {
            let history = &diffs[..t];
            if refit_due || (t - cfg.initial_window) % cfg.refit_every == 0 {
                if let Err(e) = f.refit(history) {
                    refit_due = true;
                    notes.push(format!(
                        "{kind} {}: fit failed at target {t}, excluded: {e}",
                        names(data, &series)
                    ));
                    continue;
                }
                refit_due = false;
            }
            let mut rng = substream(cfg.seed, f.stream(), t as u64, Purpose::Forecast);
            let forecast = match f.forecast(history, cfg.mc_samples, &mut rng) {
                Ok(fc) => fc,
                Err(e) => {
                    notes.push(format!(
                        "{kind} {}: forecast failed at target {t}, excluded: {e}",
                        names(data, &series)
                    ));
                    continue;
                }
            };
            let eligible = t >= ann_start;
            for (k, &s) in series.iter().enumerate() {
                let y = diffs[t][s];
                let mut sorted = forecast.series(k).to_vec();
                sorted.sort_by(f64::total_cmp);
                let mean = sample_mean(forecast.series(k));
                if cfg.dump_targets.contains(&t) {
                    dumps.push(SampleDump {
                        model: kind,
                        target_index: t,
                        series: data.series_names[s].clone(),
                        samples: forecast.series(k).to_vec(),
                    });
                }
                let record = ForecastRecord {
                    target_index: t,
                    target_date: Some(data.diff_date(t)),
                    model: kind,
                    series: data.series_names[s].clone(),
                    realized: y,
                    crps: crps_sorted(&sorted, y),
                    mean,
                    mode: eligible.then(|| kde_argmax_sample(&sorted)),
                    ann: None,
                    ann_level: None,
                    optimal_level: level_of_sorted(&sorted, y),
                    rmse_eligible: eligible,
                };
                let keep = eligible && kind != ModelKind::Garch;
                pending.push(Pending {
                    record,
                    series_index: s,
                    order,
                    sorted: keep.then_some(sorted),
                });
            }
        }
    }

    attach_ann(data, cfg, &forecasters, &mut pending, &mut notes);

    pending.sort_by_key(|p| (p.record.target_index, p.order, p.series_index));
    let records: Vec<ForecastRecord> = pending.into_iter().map(|p| p.record).collect();
    let mut report = aggregate_report(&records)?;
    report.notes.extend(notes);
    Ok(BacktestOutput {
        report,
        records,
        dumps,
    })
}

fn names(data: &Dataset, series: &[usize]) -> String {
    let v: Vec<&str> = series
        .iter()
        .map(|&s| data.series_names[s].as_str())
        .collect();
    format!("[{}]", v.join(","))
}

/// Trains one selector per (copula model, series) on the first
/// `ann_training_forecasts` targets and scores the later records.
fn attach_ann(
    data: &Dataset,
    cfg: &BacktestConfig,
    forecasters: &[Box<dyn Forecaster>],
    pending: &mut [Pending],
    notes: &mut Vec<String>,
) {
    let d = data.d();
    let ann_start = cfg.initial_window + cfg.ann_training_forecasts;
    let (w, k) = (cfg.ann.window, cfg.ann.past_levels);
    for (order, f) in forecasters.iter().enumerate() {
        if f.kind() == ModelKind::Garch {
            continue;
        }
        for &s in f.series() {
            let mut idx: Vec<usize> = (0..pending.len())
                .filter(|&i| pending[i].order == order && pending[i].series_index == s)
                .collect();
            idx.sort_by_key(|&i| pending[i].record.target_index);
            let mut features = Vec::with_capacity(idx.len());
            let mut past: Vec<f64> = vec![NEUTRAL_LEVEL; k];
            for &i in &idx {
                let t = pending[i].record.target_index;
                let lags: Vec<&[f64]> = (1..=w).map(|l| data.diffs[t - l].as_slice()).collect();
                features.push(build_features(&lags, &past));
                // The realized level of this target is known from the next origin on.
                past.rotate_right(1);
                if k > 0 {
                    past[0] = pending[i].record.optimal_level;
                }
            }
            let training: Vec<AnnTrainingRecord> = idx
                .iter()
                .zip(&features)
                .filter(|(&i, _)| pending[i].record.target_index < ann_start)
                .map(|(&i, x)| AnnTrainingRecord {
                    features: x.clone(),
                    target_level: pending[i].record.optimal_level,
                })
                .collect();
            let mut rng = substream(cfg.seed, f.stream() * 100 + s as u64, 0, Purpose::AnnTrain);
            let selector = match mlp_train(&training, d, w, k, &cfg.ann.train, &mut rng) {
                Ok((sel, _)) => sel,
                Err(e) => {
                    notes.push(format!(
                        "{} [{}]: ANN training failed: {e}",
                        f.kind(),
                        data.series_names[s]
                    ));
                    continue;
                }
            };
            for (&i, x) in idx.iter().zip(&features) {
                let Some(sorted) = pending[i].sorted.take() else {
                    continue;
                };
                match mlp_forward(&selector, x) {
                    Ok(level) => {
                        pending[i].record.ann_level = Some(level);
                        pending[i].record.ann = Some(sorted_quantile(&sorted, level));
                    }
                    Err(e) => notes.push(format!("{}: ANN inference failed: {e}", f.kind())),
                }
            }
        }
    }
}

/// Writes the record log as CSV.
pub fn write_records_csv(records: &[ForecastRecord], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in records {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_records_csv(path: &Path) -> Result<Vec<ForecastRecord>> {
    let mut r = csv::Reader::from_path(path)?;
    r.deserialize()
        .map(|rec| rec.map_err(Error::from))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pipeline::synth::{desk_study_spec, synth_generate, SynthSpec};
    use crate::scoring::PointKind;

    fn small_data(t: usize, seed: u64) -> Dataset {
        let spec = desk_study_spec(seed);
        synth_generate(&SynthSpec { t, ..spec }).unwrap()
    }

    fn small_cfg(models: Vec<ModelKind>) -> BacktestConfig {
        BacktestConfig {
            initial_window: 200,
            refit_every: 25,
            mc_samples: 200,
            ann_training_forecasts: 60,
            models,
            seed: 11,
            ann: AnnConfig {
                train: TrainConfig {
                    epochs: 20,
                    ..TrainConfig::default()
                },
                ..AnnConfig::default()
            },
            ..BacktestConfig::default()
        }
    }

    #[test]
    fn config_validation() {
        let cfg = BacktestConfig::default();
        assert!(cfg.validate(2000).is_err());
        assert!(cfg.validate(2001).is_ok());
        assert!(cfg.validate(2861).is_ok());
        assert!(BacktestConfig {
            mc_samples: 50,
            ..cfg.clone()
        }
        .validate(2861)
        .is_err());
        assert!(BacktestConfig {
            refit_every: 0,
            ..cfg
        }
        .validate(2861)
        .is_err());
        let json = r#"{"initial_window": 500, "models": ["tem_t", "garch"]}"#;
        let parsed: BacktestConfig = serde_json::from_str(json).unwrap();
        assert_eq!(parsed.initial_window, 500);
        assert_eq!(parsed.mc_samples, 1000);
        assert_eq!(
            parsed.models,
            vec![ModelKind::Copula(Variant::TemT), ModelKind::Garch]
        );
    }

    #[test]
    fn one_record_per_model_and_series_at_the_last_origin() {
        let data = small_data(260, 1);
        let cfg = BacktestConfig {
            initial_window: 258,
            ann_training_forecasts: 0,
            ..small_cfg(vec![
                ModelKind::Copula(Variant::StemGaussian),
                ModelKind::Copula(Variant::TemT),
            ])
        };
        let out = expanding_backtest(&data, &cfg).unwrap();
        assert_eq!(out.records.len(), 2 * data.d());
        assert!(out.records.iter().all(|r| r.target_index == 258));
        assert!(out
            .report
            .notes
            .iter()
            .any(|n| n.contains("ANN training failed")));
    }

    #[test]
    fn report_windows_partition() {
        let data = small_data(300, 2);
        let cfg = small_cfg(vec![
            ModelKind::Copula(Variant::StemGaussian),
            ModelKind::Copula(Variant::TemT),
        ]);
        let out = expanding_backtest(&data, &cfg).unwrap();
        let crps_count = data.len() - 1 - cfg.initial_window;
        for s in &data.series_names {
            for m in [
                ModelKind::Copula(Variant::StemGaussian),
                ModelKind::Copula(Variant::TemT),
            ] {
                assert_eq!(out.report.crps[&(m, s.clone())].n_forecasts, crps_count);
                for kind in [PointKind::Mean, PointKind::Mode, PointKind::Ann] {
                    assert_eq!(
                        out.report.rmse[&(m, kind, s.clone())].n_forecasts,
                        crps_count - cfg.ann_training_forecasts
                    );
                }
            }
        }
        let first = out.records.iter().find(|r| r.rmse_eligible).unwrap();
        assert_eq!(
            first.target_index,
            cfg.initial_window + cfg.ann_training_forecasts
        );
    }

    #[test]
    fn no_look_ahead() {
        let data = small_data(300, 3);
        let cut = 260;
        let mut poisoned = data.clone();
        for row in poisoned.diffs.iter_mut().skip(cut) {
            for v in row.iter_mut() {
                *v = 1e6;
            }
        }
        let cfg = small_cfg(vec![
            ModelKind::Copula(Variant::StemT),
            ModelKind::Copula(Variant::TemT),
        ]);
        let a = expanding_backtest(&data, &cfg).unwrap();
        let b = expanding_backtest(&poisoned, &cfg).unwrap();
        let early = |o: &BacktestOutput| -> Vec<ForecastRecord> {
            o.records
                .iter()
                .filter(|r| r.target_index < cut)
                .cloned()
                .collect()
        };
        assert!(!early(&a).is_empty());
        assert_eq!(early(&a), early(&b));
    }

    #[test]
    fn garch_benchmark_runs_and_refits_are_expanding() {
        let data = small_data(330, 4);
        let cfg = BacktestConfig {
            initial_window: 260,
            ..small_cfg(vec![ModelKind::Garch])
        };
        let out = expanding_backtest(&data, &cfg).unwrap();
        assert_eq!(out.records.len(), (data.len() - 1 - 260) * data.d());
        assert!(out
            .records
            .iter()
            .all(|r| r.ann.is_none() && r.crps.is_finite()));
        assert!(out
            .report
            .rmse
            .keys()
            .any(|(m, k, _)| *m == ModelKind::Garch && *k == PointKind::Mean));
    }

    struct Oracle {
        diffs: Vec<Vec<f64>>,
        series: Vec<usize>,
    }

    impl Forecaster for Oracle {
        fn kind(&self) -> ModelKind {
            ModelKind::Copula(Variant::StemGaussian)
        }
        fn series(&self) -> &[usize] {
            &self.series
        }
        fn stream(&self) -> u64 {
            1
        }
        fn refit(&mut self, _: &[Vec<f64>]) -> Result<()> {
            Ok(())
        }
        fn forecast(
            &mut self,
            history: &[Vec<f64>],
            n: usize,
            _: &mut ChaCha8Rng,
        ) -> Result<ProbForecast> {
            let next = &self.diffs[history.len()];
            ProbForecast::new(
                None,
                self.series.iter().map(|&s| vec![next[s]; n]).collect(),
            )
        }
    }

    #[test]
    fn perfect_foresight_scores_zero() {
        let data = small_data(300, 5);
        let cfg = small_cfg(vec![ModelKind::Copula(Variant::StemGaussian)]);
        let oracle = Oracle {
            diffs: data.diffs.clone(),
            series: (0..data.d()).collect(),
        };
        let out = run_backtest(&data, &cfg, vec![Box::new(oracle)]).unwrap();
        assert!(out.report.crps.values().all(|c| c.value == 0.0));
        assert!(out.report.rmse.values().all(|c| c.value == 0.0));
        assert!(out.report.rmse.keys().any(|(_, k, _)| *k == PointKind::Ann));
    }

    #[test]
    fn failures_become_notes_and_logs_roundtrip() {
        let data = small_data(300, 6);
        let cfg = BacktestConfig {
            dump_targets: vec![200],
            ..small_cfg(vec![ModelKind::Garch, ModelKind::Copula(Variant::TemT)])
        };
        let out = expanding_backtest(&data, &cfg).unwrap();
        assert!(out
            .report
            .notes
            .iter()
            .any(|n| n.starts_with("garch") && n.contains("excluded")));
        assert!(out
            .records
            .iter()
            .filter(|r| r.model == ModelKind::Garch)
            .all(|r| r.target_index >= 250));
        assert_eq!(out.dumps.len(), data.d());

        let path =
            std::env::temp_dir().join(format!("stcopula-records-{}.csv", std::process::id()));
        write_records_csv(&out.records, &path).unwrap();
        assert_eq!(read_records_csv(&path).unwrap(), out.records);
        std::fs::remove_file(&path).unwrap();
    }
}
