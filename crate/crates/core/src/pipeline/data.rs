//! Datasets: CSV ingestion, calendar alignment, imputation and differencing.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use chrono::{Datelike, NaiveDate, Weekday};

use crate::error::{Error, Result};

/// Aligned price levels and their first differences.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub timestamps: Vec<NaiveDate>,
    pub series_names: Vec<String>,
    /// `levels[t][series]`.
    pub levels: Vec<Vec<f64>>,
    /// `diffs[t][series] = levels[t+1][series] − levels[t][series]`.
    pub diffs: Vec<Vec<f64>>,
}

impl Dataset {
    pub fn new(
        timestamps: Vec<NaiveDate>,
        series_names: Vec<String>,
        levels: Vec<Vec<f64>>,
    ) -> Result<Self> {
        let d = series_names.len();
        if d == 0 {
            return Err(Error::Data("dataset needs at least one series".into()));
        }
        if timestamps.len() != levels.len() {
            return Err(Error::Dimension {
                expected: timestamps.len(),
                got: levels.len(),
            });
        }
        if let Some(row) = levels.iter().find(|r| r.len() != d) {
            return Err(Error::Dimension {
                expected: d,
                got: row.len(),
            });
        }
        if let Some(w) = timestamps.windows(2).find(|w| w[0] >= w[1]) {
            return Err(Error::Data(format!(
                "timestamps not strictly increasing at {}",
                w[1]
            )));
        }
        if levels.iter().flatten().any(|x| !x.is_finite()) {
            return Err(Error::Data("missing or non-finite level".into()));
        }
        let columns: Vec<Vec<f64>> = (0..d)
            .map(|s| levels.iter().map(|r| r[s]).collect())
            .collect();
        let diff_cols = columns
            .iter()
            .map(|c| difference(c))
            .collect::<Result<Vec<_>>>()?;
        let diffs = (0..levels.len() - 1)
            .map(|t| diff_cols.iter().map(|c| c[t]).collect())
            .collect();
        Ok(Self {
            timestamps,
            series_names,
            levels,
            diffs,
        })
    }

    pub fn d(&self) -> usize {
        self.series_names.len()
    }

    /// Number of level observations.
    pub fn len(&self) -> usize {
        self.levels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.levels.is_empty()
    }

    /// Differenced series `s`.
    pub fn diff_column(&self, s: usize) -> Vec<f64> {
        self.diffs.iter().map(|r| r[s]).collect()
    }

    pub fn level_column(&self, s: usize) -> Vec<f64> {
        self.levels.iter().map(|r| r[s]).collect()
    }

    /// Date of the level that closes difference `t`.
    pub fn diff_date(&self, t: usize) -> NaiveDate {
        self.timestamps[t + 1]
    }

    /// Wide CSV: `date,<series...>` with one row per timestamp.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        let mut header = vec!["date".to_string()];
        header.extend(self.series_names.iter().cloned());
        w.write_record(&header)?;
        for (date, row) in self.timestamps.iter().zip(&self.levels) {
            let mut rec = vec![date.format("%Y-%m-%d").to_string()];
            rec.extend(row.iter().map(|x| x.to_string()));
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }

    /// Reads a wide CSV; empty cells are gaps closed by LOCF.
    pub fn read_wide_csv(path: &Path) -> Result<Self> {
        let mut r = csv::Reader::from_path(path)?;
        let header = r.headers()?.clone();
        if header.len() < 2 {
            return Err(Error::Data(format!(
                "{}: expected a date column and at least one series",
                path.display()
            )));
        }
        let names: Vec<String> = header.iter().skip(1).map(str::to_string).collect();
        let mut series: Vec<BTreeMap<NaiveDate, f64>> = vec![BTreeMap::new(); names.len()];
        for rec in r.records() {
            let rec = rec?;
            let date = parse_date(&rec[0])?;
            for (s, cell) in rec.iter().skip(1).enumerate() {
                if let Some(v) = parse_cell(cell)? {
                    series[s].insert(date, v);
                }
            }
        }
        align(names, series)
    }

    /// Reads one `date,value` file per series; the series name is the value
    /// column header.
    pub fn read_series_files(paths: &[&Path]) -> Result<Self> {
        let mut names = Vec::new();
        let mut series = Vec::new();
        for path in paths {
            let mut r = csv::Reader::from_path(path)?;
            let header = r.headers()?.clone();
            if header.len() != 2 {
                return Err(Error::Data(format!(
                    "{}: expected two columns (date, value)",
                    path.display()
                )));
            }
            names.push(header[1].to_string());
            let mut m = BTreeMap::new();
            for rec in r.records() {
                let rec = rec?;
                if let Some(v) = parse_cell(&rec[1])? {
                    m.insert(parse_date(&rec[0])?, v);
                }
            }
            series.push(m);
        }
        align(names, series)
    }
}

fn parse_date(s: &str) -> Result<NaiveDate> {
    NaiveDate::parse_from_str(s.trim(), "%Y-%m-%d")
        .map_err(|e| Error::Data(format!("bad date '{s}': {e}")))
}

fn parse_cell(s: &str) -> Result<Option<f64>> {
    let s = s.trim();
    if s.is_empty() || s.eq_ignore_ascii_case("na") || s.eq_ignore_ascii_case("nan") {
        return Ok(None);
    }
    s.parse()
        .map(Some)
        .map_err(|_| Error::Data(format!("bad number '{s}'")))
}

/// Aligns series on the union of their dates, then imputes each by LOCF.
fn align(names: Vec<String>, series: Vec<BTreeMap<NaiveDate, f64>>) -> Result<Dataset> {
    let calendar: BTreeSet<NaiveDate> = series.iter().flat_map(|m| m.keys().copied()).collect();
    let dates: Vec<NaiveDate> = calendar.into_iter().collect();
    let mut columns = Vec::with_capacity(series.len());
    for (name, m) in names.iter().zip(&series) {
        let raw: Vec<Option<f64>> = dates.iter().map(|d| m.get(d).copied()).collect();
        columns.push(locf_impute(&raw).map_err(|e| Error::Data(format!("series '{name}': {e}")))?);
    }
    let levels = (0..dates.len())
        .map(|t| columns.iter().map(|c| c[t]).collect())
        .collect();
    Dataset::new(dates, names, levels)
}

/// Fills every gap with the most recent preceding value.
pub fn locf_impute(series: &[Option<f64>]) -> Result<Vec<f64>> {
    let mut last = match series.first() {
        Some(Some(v)) => *v,
        Some(None) => return Err(Error::Data("leading gap has no prior value".into())),
        None => return Ok(Vec::new()),
    };
    Ok(series
        .iter()
        .map(|v| {
            if let Some(v) = v {
                last = *v;
            }
            last
        })
        .collect())
}

/// First differences `levels[t+1] − levels[t]`.
pub fn difference(levels: &[f64]) -> Result<Vec<f64>> {
    if levels.len() < 2 {
        return Err(Error::Data(format!(
            "differencing needs at least 2 values, got {}",
            levels.len()
        )));
    }
    Ok(levels.windows(2).map(|w| w[1] - w[0]).collect())
}

/// `n` consecutive weekdays starting at `start` (or the next weekday).
pub fn business_days(start: NaiveDate, n: usize) -> Vec<NaiveDate> {
    let mut out = Vec::with_capacity(n);
    let mut d = start;
    while out.len() < n {
        if !matches!(d.weekday(), Weekday::Sat | Weekday::Sun) {
            out.push(d);
        }
        d = d.succ_opt().expect("date overflow");
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::fs;

    fn date(s: &str) -> NaiveDate {
        parse_date(s).unwrap()
    }

    #[test]
    fn locf_examples() {
        assert_eq!(
            locf_impute(&[Some(1.0), None, Some(2.0)]).unwrap(),
            vec![1.0, 1.0, 2.0]
        );
        assert_eq!(
            locf_impute(&[Some(1.0), Some(4.0)]).unwrap(),
            vec![1.0, 4.0]
        );
        assert_eq!(
            locf_impute(&[Some(1.0), None, None, Some(5.0)]).unwrap(),
            vec![1.0, 1.0, 1.0, 5.0]
        );
        assert!(locf_impute(&[None, Some(1.0)]).is_err());
    }

    #[test]
    fn difference_examples() {
        assert_eq!(difference(&[1.0, 3.0, 6.0]).unwrap(), vec![2.0, 3.0]);
        assert_eq!(difference(&[2.5; 4]).unwrap(), vec![0.0; 3]);
        assert!(difference(&[1.0]).is_err());
        let levels = [3.0, 4.0, 8.0, -1.0, 2.0];
        let diffs = difference(&levels).unwrap();
        let mut acc = levels[0];
        for (i, d) in diffs.iter().enumerate() {
            acc += d;
            assert_eq!(acc, levels[i + 1]);
        }
    }

    #[test]
    fn dataset_invariants() {
        let ts = business_days(date("2020-01-03"), 3);
        assert_eq!(
            ts,
            vec![date("2020-01-03"), date("2020-01-06"), date("2020-01-07")]
        );
        let ds = Dataset::new(
            ts.clone(),
            vec!["a".into()],
            vec![vec![1.0], vec![3.0], vec![6.0]],
        )
        .unwrap();
        assert_eq!(ds.diffs, vec![vec![2.0], vec![3.0]]);
        assert_eq!(ds.diff_date(0), ts[1]);
        let back = vec![ts[1], ts[0], ts[2]];
        assert!(Dataset::new(back, vec!["a".into()], vec![vec![1.0]; 3]).is_err());
    }

    #[test]
    fn union_calendar_then_locf() {
        let dir = std::env::temp_dir().join(format!("stcopula-data-{}", std::process::id()));
        fs::create_dir_all(&dir).unwrap();
        let a = dir.join("a.csv");
        let b = dir.join("b.csv");
        fs::write(&a, "date,gas\n2020-01-01,1\n2020-01-02,2\n2020-01-04,4\n").unwrap();
        fs::write(&b, "date,oil\n2020-01-01,10\n2020-01-03,30\n2020-01-04,\n").unwrap();
        let ds = Dataset::read_series_files(&[&a, &b]).unwrap();
        assert_eq!(ds.len(), 4);
        assert_eq!(ds.level_column(0), vec![1.0, 2.0, 2.0, 4.0]);
        assert_eq!(ds.level_column(1), vec![10.0, 10.0, 30.0, 30.0]);

        let wide = dir.join("wide.csv");
        ds.write_csv(&wide).unwrap();
        assert_eq!(Dataset::read_wide_csv(&wide).unwrap(), ds);

        fs::write(&a, "date,gas\n2020-01-02,1\n").unwrap();
        fs::write(&b, "date,oil\n2020-01-01,1\n").unwrap();
        assert!(Dataset::read_series_files(&[&a, &b]).is_err());
        fs::remove_dir_all(&dir).unwrap();
    }
}
