//! Multilayer-perceptron quantile selector: predicts which quantile level of a
//! probabilistic forecast to report as the point forecast.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{domain, Error, Result};
use crate::ts_model::{sorted_quantile, ProbForecast};

pub const DEFAULT_HIDDEN: [usize; 2] = [32, 16];
pub const DEFAULT_WINDOW: usize = 5;
pub const DEFAULT_PAST_LEVELS: usize = 3;
const MIN_RECORDS: usize = 50;
const VALIDATION_FRACTION: f64 = 0.1;

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Fully connected network: tanh hidden layers, one sigmoid output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    sizes: Vec<usize>,
    /// `weights[l]` is row-major `sizes[l+1] × sizes[l]`.
    weights: Vec<Vec<f64>>,
    biases: Vec<Vec<f64>>,
}

impl Mlp {
    /// All-zero parameters.
    pub fn zeros(sizes: &[usize]) -> Result<Self> {
        if sizes.len() < 2 || *sizes.last().unwrap() != 1 || sizes.contains(&0) {
            return domain(format!("invalid layer sizes {sizes:?}"));
        }
        let weights = sizes.windows(2).map(|w| vec![0.0; w[0] * w[1]]).collect();
        let biases = sizes[1..].iter().map(|&n| vec![0.0; n]).collect();
        Ok(Self {
            sizes: sizes.to_vec(),
            weights,
            biases,
        })
    }

    /// Glorot-uniform weights, zero biases.
    pub fn random<R: Rng + ?Sized>(sizes: &[usize], rng: &mut R) -> Result<Self> {
        let mut m = Self::zeros(sizes)?;
        for (l, w) in m.weights.iter_mut().enumerate() {
            let limit = (6.0 / (sizes[l] + sizes[l + 1]) as f64).sqrt();
            for v in w.iter_mut() {
                *v = rng.random_range(-limit..limit);
            }
        }
        Ok(m)
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn input_dim(&self) -> usize {
        self.sizes[0]
    }

    pub fn n_params(&self) -> usize {
        self.weights.iter().chain(&self.biases).map(Vec::len).sum()
    }

    /// Flattened parameters: per layer, weights then biases.
    pub fn params(&self) -> Vec<f64> {
        let mut p = Vec::with_capacity(self.n_params());
        for (w, b) in self.weights.iter().zip(&self.biases) {
            p.extend_from_slice(w);
            p.extend_from_slice(b);
        }
        p
    }

    pub fn set_params(&mut self, p: &[f64]) -> Result<()> {
        if p.len() != self.n_params() {
            return Err(Error::Dimension {
                expected: self.n_params(),
                got: p.len(),
            });
        }
        let mut at = 0;
        for (w, b) in self.weights.iter_mut().zip(self.biases.iter_mut()) {
            let (nw, nb) = (w.len(), b.len());
            w.copy_from_slice(&p[at..at + nw]);
            at += nw;
            b.copy_from_slice(&p[at..at + nb]);
            at += nb;
        }
        Ok(())
    }

    pub fn output_bias_mut(&mut self) -> &mut f64 {
        &mut self.biases.last_mut().unwrap()[0]
    }

    /// Activations of every layer (input included).
    fn activations(&self, x: &[f64]) -> Vec<Vec<f64>> {
        let layers = self.weights.len();
        let mut acts = Vec::with_capacity(layers + 1);
        acts.push(x.to_vec());
        for l in 0..layers {
            let (n_in, n_out) = (self.sizes[l], self.sizes[l + 1]);
            let prev = &acts[l];
            let w = &self.weights[l];
            let out: Vec<f64> = (0..n_out)
                .map(|o| {
                    let z = self.biases[l][o]
                        + w[o * n_in..(o + 1) * n_in]
                            .iter()
                            .zip(prev)
                            .map(|(a, b)| a * b)
                            .sum::<f64>();
                    if l + 1 == layers {
                        sigmoid(z)
                    } else {
                        z.tanh()
                    }
                })
                .collect();
            acts.push(out);
        }
        acts
    }

    pub fn forward(&self, x: &[f64]) -> Result<f64> {
        if x.len() != self.input_dim() {
            return Err(Error::Dimension {
                expected: self.input_dim(),
                got: x.len(),
            });
        }
        Ok(self.activations(x).last().unwrap()[0])
    }

    /// Mean squared error over `(inputs, targets)` and its gradient with
    /// respect to [`Mlp::params`].
    pub fn loss_and_gradient(&self, inputs: &[&[f64]], targets: &[f64]) -> (f64, Vec<f64>) {
        let layers = self.weights.len();
        let mut gw: Vec<Vec<f64>> = self.weights.iter().map(|w| vec![0.0; w.len()]).collect();
        let mut gb: Vec<Vec<f64>> = self.biases.iter().map(|b| vec![0.0; b.len()]).collect();
        let n = inputs.len() as f64;
        let mut loss = 0.0;
        for (x, &t) in inputs.iter().zip(targets) {
            let acts = self.activations(x);
            let y = acts[layers][0];
            loss += (y - t) * (y - t);
            // dL/dz at the output: 2 (y − t) σ'(z) / n
            let mut delta = vec![2.0 * (y - t) * y * (1.0 - y) / n];
            for l in (0..layers).rev() {
                let (n_in, n_out) = (self.sizes[l], self.sizes[l + 1]);
                let prev = &acts[l];
                for o in 0..n_out {
                    gb[l][o] += delta[o];
                    let row = &mut gw[l][o * n_in..(o + 1) * n_in];
                    for (g, &a) in row.iter_mut().zip(prev) {
                        *g += delta[o] * a;
                    }
                }
                if l > 0 {
                    let w = &self.weights[l];
                    delta = (0..n_in)
                        .map(|i| {
                            let back: f64 = (0..n_out).map(|o| w[o * n_in + i] * delta[o]).sum();
                            back * (1.0 - prev[i] * prev[i])
                        })
                        .collect();
                }
            }
        }
        let mut g = Vec::with_capacity(self.n_params());
        for (w, b) in gw.into_iter().zip(gb) {
            g.extend(w);
            g.extend(b);
        }
        (loss / n, g)
    }

    pub fn mse(&self, inputs: &[&[f64]], targets: &[f64]) -> f64 {
        inputs
            .iter()
            .zip(targets)
            .map(|(x, t)| (self.activations(x).last().unwrap()[0] - t).powi(2))
            .sum::<f64>()
            / inputs.len() as f64
    }
}

/// One training example: features and the MSE-optimal level.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnTrainingRecord {
    pub features: Vec<f64>,
    pub target_level: f64,
}

/// Network plus feature layout and standardization of the lagged-value block.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpQuantileSelector {
    pub mlp: Mlp,
    pub n_series: usize,
    pub window: usize,
    pub past_levels: usize,
    /// Mean and sd of each lagged-value feature.
    pub shift: Vec<f64>,
    pub scale: Vec<f64>,
}

impl MlpQuantileSelector {
    pub fn new(mlp: Mlp, n_series: usize, window: usize, past_levels: usize) -> Result<Self> {
        let lagged = n_series * window;
        if mlp.input_dim() != lagged + past_levels {
            return Err(Error::Dimension {
                expected: lagged + past_levels,
                got: mlp.input_dim(),
            });
        }
        Ok(Self {
            mlp,
            n_series,
            window,
            past_levels,
            shift: vec![0.0; lagged],
            scale: vec![1.0; lagged],
        })
    }

    /// Default architecture with all-zero parameters.
    pub fn zeros(n_series: usize, window: usize, past_levels: usize) -> Result<Self> {
        let sizes = default_sizes(n_series * window + past_levels);
        Self::new(Mlp::zeros(&sizes)?, n_series, window, past_levels)
    }

    pub fn input_dim(&self) -> usize {
        self.mlp.input_dim()
    }

    fn standardize(&self, features: &[f64]) -> Vec<f64> {
        let lagged = self.shift.len();
        features
            .iter()
            .enumerate()
            .map(|(i, &x)| {
                if i < lagged {
                    (x - self.shift[i]) / self.scale[i]
                } else {
                    x
                }
            })
            .collect()
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let join = |v: &[f64]| {
            v.iter()
                .map(|x| format!("{x:e}"))
                .collect::<Vec<_>>()
                .join(" ")
        };
        let sizes: Vec<String> = self.mlp.sizes.iter().map(usize::to_string).collect();
        let _ = writeln!(out, "layers {}", sizes.join(" "));
        let _ = writeln!(
            out,
            "features {} {} {}",
            self.n_series, self.window, self.past_levels
        );
        let _ = writeln!(out, "shift {}", join(&self.shift));
        let _ = writeln!(out, "scale {}", join(&self.scale));
        for (w, b) in self.mlp.weights.iter().zip(&self.mlp.biases) {
            let _ = writeln!(out, "weights {}", join(w));
            let _ = writeln!(out, "biases {}", join(b));
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        let mut field = |name: &str| -> Result<Vec<String>> {
            let line = lines
                .next()
                .ok_or_else(|| Error::Data(format!("missing '{name}' line")))?;
            let mut parts = line.split_whitespace();
            if parts.next() != Some(name) {
                return Err(Error::Data(format!("expected '{name}' line, got '{line}'")));
            }
            Ok(parts.map(str::to_string).collect())
        };
        let parse_usize = |v: Vec<String>| -> Result<Vec<usize>> {
            v.iter()
                .map(|s| {
                    s.parse()
                        .map_err(|_| Error::Data(format!("bad integer '{s}'")))
                })
                .collect()
        };
        let parse_f64 = |v: Vec<String>| -> Result<Vec<f64>> {
            v.iter()
                .map(|s| {
                    s.parse()
                        .map_err(|_| Error::Data(format!("bad number '{s}'")))
                })
                .collect()
        };
        let sizes = parse_usize(field("layers")?)?;
        let feats = parse_usize(field("features")?)?;
        if feats.len() != 3 {
            return Err(Error::Data("features line needs three integers".into()));
        }
        let shift = parse_f64(field("shift")?)?;
        let scale = parse_f64(field("scale")?)?;
        let mut mlp = Mlp::zeros(&sizes)?;
        for l in 0..sizes.len() - 1 {
            let w = parse_f64(field("weights")?)?;
            let b = parse_f64(field("biases")?)?;
            if w.len() != mlp.weights[l].len() || b.len() != mlp.biases[l].len() {
                return Err(Error::Data(format!(
                    "layer {l} parameter count does not match the header"
                )));
            }
            mlp.weights[l] = w;
            mlp.biases[l] = b;
        }
        let mut sel = Self::new(mlp, feats[0], feats[1], feats[2])?;
        if shift.len() != sel.shift.len() || scale.len() != sel.scale.len() {
            return Err(Error::Data(
                "standardization vectors do not match the feature layout".into(),
            ));
        }
        sel.shift = shift;
        sel.scale = scale;
        Ok(sel)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_text())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_text(&fs::read_to_string(path)?)
    }
}

pub fn default_sizes(input: usize) -> Vec<usize> {
    let mut s = vec![input];
    s.extend_from_slice(&DEFAULT_HIDDEN);
    s.push(1);
    s
}

/// Feature vector: lagged values `lags[0]` (most recent) .. `lags[W-1]`, each a
/// d-vector, followed by past optimal levels (most recent first).
pub fn build_features(lags: &[&[f64]], past_levels: &[f64]) -> Vec<f64> {
    lags.iter()
        .flat_map(|row| row.iter().copied())
        .chain(past_levels.iter().copied())
        .collect()
}

/// Predicted quantile level in (0,1).
pub fn mlp_forward(m: &MlpQuantileSelector, features: &[f64]) -> Result<f64> {
    if features.len() != m.input_dim() {
        return Err(Error::Dimension {
            expected: m.input_dim(),
            got: features.len(),
        });
    }
    m.mlp.forward(&m.standardize(features))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub step_size: f64,
    pub momentum: f64,
    pub batch_size: usize,
    pub hidden: Vec<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 200,
            step_size: 0.05,
            momentum: 0.9,
            batch_size: 32,
            hidden: DEFAULT_HIDDEN.to_vec(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct TrainReport {
    pub best_epoch: usize,
    pub initial_validation_loss: f64,
    pub best_validation_loss: f64,
    pub final_training_loss: f64,
}

/// Trains a selector by mini-batch gradient descent with momentum on the
/// MSE between predicted and target levels. The last 10% of records
/// (chronologically) are held out; the parameters of the epoch with the
/// lowest validation loss are returned.
pub fn mlp_train<R: Rng + ?Sized>(
    records: &[AnnTrainingRecord],
    n_series: usize,
    window: usize,
    past_levels: usize,
    cfg: &TrainConfig,
    rng: &mut R,
) -> Result<(MlpQuantileSelector, TrainReport)> {
    if records.len() < MIN_RECORDS {
        return Err(Error::Fit(format!(
            "ANN training needs at least {MIN_RECORDS} records, got {}",
            records.len()
        )));
    }
    let dim = n_series * window + past_levels;
    if let Some(r) = records.iter().find(|r| r.features.len() != dim) {
        return Err(Error::Dimension {
            expected: dim,
            got: r.features.len(),
        });
    }
    let n_val = ((records.len() as f64 * VALIDATION_FRACTION).round() as usize).max(1);
    let n_train = records.len() - n_val;

    let mut sizes = vec![dim];
    sizes.extend_from_slice(&cfg.hidden);
    sizes.push(1);
    let mut sel =
        MlpQuantileSelector::new(Mlp::random(&sizes, rng)?, n_series, window, past_levels)?;
    let lagged = n_series * window;
    for i in 0..lagged {
        let col: Vec<f64> = records[..n_train].iter().map(|r| r.features[i]).collect();
        let mean = col.iter().sum::<f64>() / col.len() as f64;
        let sd = (col.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / col.len() as f64).sqrt();
        sel.shift[i] = mean;
        sel.scale[i] = if sd > 0.0 { sd } else { 1.0 };
    }
    let inputs: Vec<Vec<f64>> = records
        .iter()
        .map(|r| sel.standardize(&r.features))
        .collect();
    let targets: Vec<f64> = records.iter().map(|r| r.target_level).collect();
    let val_x: Vec<&[f64]> = inputs[n_train..].iter().map(Vec::as_slice).collect();
    let val_t = &targets[n_train..];

    let initial_validation_loss = sel.mlp.mse(&val_x, val_t);
    let mut best = (0usize, initial_validation_loss, sel.mlp.clone());
    let mut params = sel.mlp.params();
    let mut velocity = vec![0.0; params.len()];
    let mut order: Vec<usize> = (0..n_train).collect();
    let mut final_training_loss = f64::NAN;
    for epoch in 1..=cfg.epochs {
        order.shuffle(rng);
        let mut epoch_loss = 0.0;
        for batch in order.chunks(cfg.batch_size.max(1)) {
            let bx: Vec<&[f64]> = batch.iter().map(|&i| inputs[i].as_slice()).collect();
            let bt: Vec<f64> = batch.iter().map(|&i| targets[i]).collect();
            let (loss, grad) = sel.mlp.loss_and_gradient(&bx, &bt);
            if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
                return Err(Error::TrainingDiverged { epoch });
            }
            epoch_loss += loss * batch.len() as f64;
            for ((p, v), g) in params.iter_mut().zip(velocity.iter_mut()).zip(&grad) {
                *v = cfg.momentum * *v - cfg.step_size * g;
                *p += *v;
            }
            sel.mlp.set_params(&params)?;
        }
        final_training_loss = epoch_loss / n_train as f64;
        let val = sel.mlp.mse(&val_x, val_t);
        if !val.is_finite() {
            return Err(Error::TrainingDiverged { epoch });
        }
        if val < best.1 {
            best = (epoch, val, sel.mlp.clone());
        }
    }
    sel.mlp = best.2;
    Ok((
        sel,
        TrainReport {
            best_epoch: best.0,
            initial_validation_loss,
            best_validation_loss: best.1,
            final_training_loss,
        },
    ))
}

/// Level whose type-7 empirical quantile of the series' samples equals `y`,
/// clipped to `[1/(n+1), n/(n+1)]`.
pub fn optimal_quantile_target(f: &ProbForecast, series: usize, y: f64) -> f64 {
    let mut sorted = f.series(series).to_vec();
    sorted.sort_by(f64::total_cmp);
    level_of_sorted(&sorted, y)
}

/// [`optimal_quantile_target`] for an ascending sample.
pub fn level_of_sorted(sorted: &[f64], y: f64) -> f64 {
    let n = sorted.len();
    let lo = 1.0 / (n as f64 + 1.0);
    let hi = n as f64 / (n as f64 + 1.0);
    let j = sorted.partition_point(|&x| x <= y);
    let h = if j == 0 {
        0.0
    } else if j == n {
        (n - 1) as f64
    } else {
        let (a, b) = (sorted[j - 1], sorted[j]);
        (j - 1) as f64 + (y - a) / (b - a)
    };
    (h / (n - 1) as f64).clamp(lo, hi)
}

/// Point forecast at the level chosen by the network.
pub fn ann_point_forecast(
    m: &MlpQuantileSelector,
    features: &[f64],
    f: &ProbForecast,
    series: usize,
) -> Result<f64> {
    let level = mlp_forward(m, features)?;
    let mut sorted = f.series(series).to_vec();
    sorted.sort_by(f64::total_cmp);
    Ok(sorted_quantile(&sorted, level))
}
