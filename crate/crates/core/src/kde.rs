//! Gaussian kernel density estimates with Silverman's bandwidth, used for
//! mode-based point forecasts and for counting modes of forecast densities.

const GRID_POINTS: usize = 512;
const MODE_FLOOR: f64 = 0.1;
/// Kernel contributions beyond this many bandwidths are below 1e-15.
const KERNEL_CUTOFF: f64 = 8.5;

fn mean_sd(samples: &[f64]) -> (f64, f64) {
    let n = samples.len() as f64;
    let mean = samples.iter().sum::<f64>() / n;
    let var = samples.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0).max(1.0);
    (mean, var.sqrt())
}

/// 1.06 σ̂ n^(-1/5).
pub fn silverman_bandwidth(samples: &[f64]) -> f64 {
    let (_, sd) = mean_sd(samples);
    1.06 * sd * (samples.len() as f64).powf(-0.2)
}

/// Unnormalized KDE evaluated on `GRID_POINTS` equally spaced points spanning
/// the sample range. Returns `(grid, density)`.
pub fn kde_grid(samples: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let h = silverman_bandwidth(samples);
    let lo = samples.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = samples.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let step = (hi - lo) / (GRID_POINTS - 1) as f64;
    let grid: Vec<f64> = (0..GRID_POINTS).map(|i| lo + step * i as f64).collect();
    if !(h > 0.0) {
        let mut dens = vec![0.0; GRID_POINTS];
        dens[0] = 1.0;
        return (grid, dens);
    }
    let mut sorted = samples.to_vec();
    sorted.sort_by(f64::total_cmp);
    let dens = grid
        .iter()
        .map(|&g| {
            let from = sorted.partition_point(|&x| x < g - KERNEL_CUTOFF * h);
            let to = sorted.partition_point(|&x| x <= g + KERNEL_CUTOFF * h);
            sorted[from..to]
                .iter()
                .map(|&x| {
                    let z = (g - x) / h;
                    (-0.5 * z * z).exp()
                })
                .sum::<f64>()
        })
        .collect();
    (grid, dens)
}

/// Number of strict local maxima of the grid KDE that reach at least 10% of
/// the global peak.
pub fn count_modes(samples: &[f64]) -> usize {
    let (_, dens) = kde_grid(samples);
    let peak = dens.iter().copied().fold(0.0, f64::max);
    let n = dens.len();
    (0..n)
        .filter(|&i| {
            let left = if i == 0 {
                f64::NEG_INFINITY
            } else {
                dens[i - 1]
            };
            let right = if i + 1 == n {
                f64::NEG_INFINITY
            } else {
                dens[i + 1]
            };
            dens[i] > left && dens[i] > right && dens[i] >= MODE_FLOOR * peak
        })
        .count()
}

/// The sample point with the highest KDE value (ties resolve to the smallest
/// sample). Zero-variance input returns the common value.
pub fn kde_argmax_sample(samples: &[f64]) -> f64 {
    let mut sorted = samples.to_vec();
    sorted.sort_by(f64::total_cmp);
    let h = silverman_bandwidth(&sorted);
    if !(h > 0.0) {
        return sorted[0];
    }
    let reach = KERNEL_CUTOFF * h;
    let mut best = (f64::NEG_INFINITY, sorted[0]);
    let (mut lo, mut hi) = (0usize, 0usize);
    for i in 0..sorted.len() {
        let x = sorted[i];
        while sorted[lo] < x - reach {
            lo += 1;
        }
        while hi < sorted.len() && sorted[hi] <= x + reach {
            hi += 1;
        }
        let dens: f64 = sorted[lo..hi]
            .iter()
            .map(|&y| {
                let z = (x - y) / h;
                (-0.5 * z * z).exp()
            })
            .sum();
        if dens > best.0 {
            best = (dens, x);
        }
    }
    best.1
}
