use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use serde::Serialize;

use stcopula::benchmark_garch::{
    final_state, fit_arx_avtgarch, forecast_arx_avtgarch, ArxAvtGarchModel,
};
use stcopula::copula_pair::PairFamily;
use stcopula::pipeline::backtest::{read_records_csv, write_records_csv};
use stcopula::pipeline::rng::{substream, Purpose};
use stcopula::pipeline::synth::desk_study_spec;
use stcopula::pipeline::{
    adf_test, expanding_backtest, synth_generate, AdfResult, BacktestConfig, Dataset, SynthSpec,
};
use stcopula::scoring::{aggregate_report, ModelKind, ScoreReport};
use stcopula::ts_model::{fit_st_model, forecast_distribution, ProbForecast, SpatioTemporalModel, Variant};
use stcopula::{Error, Result};

#[derive(Parser)]
#[command(name = "stcopula", version, about = "Spatio-temporal copula forecasting and backtesting")]
struct Cli {
    /// JSON configuration (synthetic spec for `simulate`, study config for `backtest`).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Root seed; overrides the configuration.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Comma-separated models: tem_t, stem_gaussian, stem_t, stem_dvine, garch.
    #[arg(long, global = true, value_delimiter = ',')]
    models: Option<Vec<ModelKind>>,
    #[arg(long, global = true, default_value = "out")]
    output_dir: PathBuf,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Aligns, imputes and screens CSV price data.
    Ingest {
        /// One wide CSV or one `date,value` CSV per series.
        #[arg(required = true)]
        inputs: Vec<PathBuf>,
    },
    /// Generates a synthetic dataset.
    Simulate {
        /// Built-in four-series heavy-tailed generator instead of `--config`.
        #[arg(long)]
        desk_study: bool,
        /// Number of level observations (overrides the generator config).
        #[arg(long)]
        t: Option<usize>,
    },
    /// Fits models on the full differenced dataset.
    Fit {
        #[arg(long)]
        data: PathBuf,
    },
    /// One-step-ahead forecast samples from models written by `fit`.
    Forecast {
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value_t = 1000)]
        samples: usize,
    },
    /// Expanding-window forecasting study.
    Backtest {
        #[arg(long)]
        data: PathBuf,
    },
    /// Rebuilds score tables from a record log.
    Report {
        #[arg(long)]
        records: PathBuf,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    fs::create_dir_all(&cli.output_dir)?;
    let out = cli.output_dir.as_path();
    match &cli.command {
        Command::Ingest { inputs } => ingest(inputs, out),
        Command::Simulate { desk_study, t } => simulate(&cli, *desk_study, *t),
        Command::Fit { data } => fit(&Dataset::read_wide_csv(data)?, &models(&cli), out),
        Command::Forecast { data, samples } => {
            forecast(&Dataset::read_wide_csv(data)?, &models(&cli), *samples, cli.seed.unwrap_or(0), out)
        }
        Command::Backtest { data } => backtest(&cli, &Dataset::read_wide_csv(data)?),
        Command::Report { records } => {
            let report = aggregate_report(&read_records_csv(records)?)?;
            write_report(&report, out)
        }
    }
}

fn models(cli: &Cli) -> Vec<ModelKind> {
    cli.models.clone().unwrap_or_else(|| ModelKind::ALL.to_vec())
}

fn write_json<T: Serialize>(value: &T, path: &Path) -> Result<()> {
    fs::write(path, serde_json::to_string_pretty(value)?)?;
    Ok(())
}

#[derive(Serialize)]
struct Screening {
    series: String,
    levels: Option<AdfResult>,
    diffs: Option<AdfResult>,
}

fn ingest(inputs: &[PathBuf], out: &Path) -> Result<()> {
    let data = if inputs.len() == 1 {
        Dataset::read_wide_csv(&inputs[0])?
    } else {
        let paths: Vec<&Path> = inputs.iter().map(PathBuf::as_path).collect();
        Dataset::read_series_files(&paths)?
    };
    let screening: Vec<Screening> = (0..data.d())
        .map(|s| Screening {
            series: data.series_names[s].clone(),
            levels: adf_test(&data.level_column(s)).ok(),
            diffs: adf_test(&data.diff_column(s)).ok(),
        })
        .collect();
    data.write_csv(&out.join("dataset.csv"))?;
    write_json(&screening, &out.join("adf.json"))?;
    println!("{} observations of {} series written to {}", data.len(), data.d(), out.display());
    for s in &screening {
        if let Some(r) = s.diffs.filter(|r| !r.reject) {
            println!("warning: unit root not rejected for differenced '{}' (ADF {:.2})", s.series, r.statistic);
        }
    }
    Ok(())
}

fn simulate(cli: &Cli, desk_study: bool, t: Option<usize>) -> Result<()> {
    let mut spec: SynthSpec = match (&cli.config, desk_study) {
        (Some(path), false) => serde_json::from_str(&fs::read_to_string(path)?)?,
        (None, true) => desk_study_spec(0),
        _ => return Err(Error::Config("simulate needs exactly one of --config or --desk-study".into())),
    };
    if let Some(seed) = cli.seed {
        spec.seed = seed;
    }
    if let Some(t) = t {
        spec.t = t;
    }
    let data = synth_generate(&spec)?;
    let path = cli.output_dir.join("dataset.csv");
    data.write_csv(&path)?;
    write_json(&spec, &cli.output_dir.join("synth_spec.json"))?;
    println!("{} observations of {} series written to {}", data.len(), data.d(), path.display());
    Ok(())
}

/// Model file stem and the dataset series it covers.
fn units(kind: ModelKind, data: &Dataset) -> Vec<(String, Vec<usize>)> {
    match kind {
        ModelKind::Copula(Variant::TemT) | ModelKind::Garch => (0..data.d())
            .map(|s| (format!("{}_{}", kind.name(), data.series_names[s]), vec![s]))
            .collect(),
        ModelKind::Copula(_) => vec![(kind.name().to_string(), (0..data.d()).collect())],
    }
}

fn garch_regressors(data: &Dataset, s: usize) -> Vec<Vec<f64>> {
    (0..data.diffs.len())
        .map(|i| {
            (0..data.d())
                .filter(|&j| j != s)
                .map(|j| if i == 0 { 0.0 } else { data.diffs[i - 1][j] })
                .collect()
        })
        .collect()
}

fn fit(data: &Dataset, kinds: &[ModelKind], out: &Path) -> Result<()> {
    for &kind in kinds {
        for (stem, series) in units(kind, data) {
            let path = out.join(format!("{stem}.json"));
            match kind {
                ModelKind::Copula(variant) => {
                    let cols: Vec<Vec<f64>> = series.iter().map(|&s| data.diff_column(s)).collect();
                    let names: Vec<String> = series.iter().map(|&s| data.series_names[s].clone()).collect();
                    fit_st_model(&cols, &names, variant, &PairFamily::ALL)?.save(&path)?;
                }
                ModelKind::Garch => {
                    let s = series[0];
                    let fit = fit_arx_avtgarch(&data.diff_column(s), &garch_regressors(data, s))?;
                    for w in &fit.warnings {
                        println!("warning: {stem}: {w}");
                    }
                    write_json(&fit.model, &path)?;
                }
            }
            println!("fitted {stem} -> {}", path.display());
        }
    }
    Ok(())
}

fn write_samples(f: &ProbForecast, names: &[String], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(names)?;
    for i in 0..f.n() {
        w.write_record((0..f.d()).map(|s| f.series(s)[i].to_string()))?;
    }
    w.flush()?;
    Ok(())
}

fn forecast(data: &Dataset, kinds: &[ModelKind], n: usize, seed: u64, out: &Path) -> Result<()> {
    let last = data.diffs.last().ok_or_else(|| Error::Data("dataset has no differences".into()))?;
    for (k, &kind) in kinds.iter().enumerate() {
        for (u, (stem, series)) in units(kind, data).into_iter().enumerate() {
            let path = out.join(format!("{stem}.json"));
            let mut rng = substream(seed, (k * 100 + u) as u64, data.diffs.len() as u64, Purpose::Forecast);
            let names: Vec<String> = series.iter().map(|&s| data.series_names[s].clone()).collect();
            let f = match kind {
                ModelKind::Copula(_) => {
                    let model = SpatioTemporalModel::load(&path)?;
                    let x_prev: Vec<f64> = series.iter().map(|&s| last[s]).collect();
                    forecast_distribution(&model, &x_prev, n, &mut rng)?
                }
                ModelKind::Garch => {
                    let model: ArxAvtGarchModel = serde_json::from_str(&fs::read_to_string(&path)?)?;
                    let s = series[0];
                    let x = garch_regressors(data, s);
                    let state = final_state(&model, &data.diff_column(s), &x)?;
                    let x_now: Vec<f64> = (0..data.d()).filter(|&j| j != s).map(|j| last[j]).collect();
                    let (f, warning) =
                        forecast_arx_avtgarch(&model, state.y, &x_now, state.sigma, state.eps, n, &mut rng)?;
                    if let Some(w) = warning {
                        println!("warning: {stem}: {w}");
                    }
                    f
                }
            };
            let dest = out.join(format!("forecast_{stem}.csv"));
            write_samples(&f, &names, &dest)?;
            println!("{n} samples from {stem} -> {}", dest.display());
        }
    }
    Ok(())
}

fn backtest(cli: &Cli, data: &Dataset) -> Result<()> {
    let mut cfg: BacktestConfig = match &cli.config {
        Some(path) => serde_json::from_str(&fs::read_to_string(path)?)?,
        None => BacktestConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(models) = &cli.models {
        cfg.models = models.clone();
    }
    let out = cli.output_dir.as_path();
    let result = expanding_backtest(data, &cfg)?;
    write_records_csv(&result.records, &out.join("records.csv"))?;
    for dump in &result.dumps {
        let f = ProbForecast::new(None, vec![dump.samples.clone()])?;
        let name = format!("samples_{}_{}_{}.csv", dump.model, dump.series, dump.target_index);
        write_samples(&f, std::slice::from_ref(&dump.series), &out.join(name))?;
    }
    write_json(&cfg, &out.join("config.json"))?;
    write_report(&result.report, out)
}

fn write_report(report: &ScoreReport, out: &Path) -> Result<()> {
    let text = report.to_text();
    fs::write(out.join("report.txt"), &text)?;
    fs::write(out.join("report.csv"), report.to_csv()?)?;
    print!("{text}");
    Ok(())
}
