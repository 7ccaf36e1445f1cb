//! Least-squares rate fitting on time series.

/// Slope and intercept of the least-squares line through (t, y).
pub fn linear_fit(t: &[f64], y: &[f64]) -> (f64, f64) {
    assert_eq!(t.len(), y.len());
    let n = t.len() as f64;
    let mt = t.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let mut sxx = 0.0;
    let mut sxy = 0.0;
    for (a, b) in t.iter().zip(y) {
        sxx += (a - mt) * (a - mt);
        sxy += (a - mt) * (b - my);
    }
    let slope = sxy / sxx;
    (slope, my - slope * mt)
}

/// Exponential rate of a positive decaying series: the negated slope of
/// log(y) over the window [t_lo, t_hi]. Points with y below `floor` are
/// dropped.
pub fn log_slope_rate(t: &[f64], y: &[f64], t_lo: f64, t_hi: f64, floor: f64) -> Option<f64> {
    let mut ts = Vec::new();
    let mut ls = Vec::new();
    for (a, b) in t.iter().zip(y) {
        if *a >= t_lo && *a <= t_hi && *b > floor {
            ts.push(*a);
            ls.push(b.ln());
        }
    }
    if ts.len() < 4 {
        return None;
    }
    Some(-linear_fit(&ts, &ls).0)
}

/// Trapezoid running mean of width `window`, evaluated where the full window
/// fits inside the series. Damps oscillations around a decaying envelope so
/// that log-slope fits see the mean decay.
pub fn running_mean(t: &[f64], y: &[f64], window: f64) -> (Vec<f64>, Vec<f64>) {
    assert_eq!(t.len(), y.len());
    let n = t.len();
    if window <= 0.0 || n < 3 {
        return (t.to_vec(), y.to_vec());
    }
    let mut prefix = vec![0.0; n];
    for i in 1..n {
        prefix[i] = prefix[i - 1] + 0.5 * (t[i] - t[i - 1]) * (y[i] + y[i - 1]);
    }
    let mut ts = Vec::new();
    let mut ys = Vec::new();
    let mut j = 0usize;
    for i in 0..n {
        if t[i] + window > t[n - 1] {
            break;
        }
        while j + 1 < n && t[j + 1] <= t[i] + window {
            j += 1;
        }
        // integral over [t_i, t_i + window] with a linear tail correction
        let mut integral = prefix[j] - prefix[i];
        if j + 1 < n && t[j] < t[i] + window {
            let frac = (t[i] + window - t[j]) / (t[j + 1] - t[j]);
            let y_end = y[j] + frac * (y[j + 1] - y[j]);
            integral += 0.5 * (t[i] + window - t[j]) * (y[j] + y_end);
        }
        ts.push(t[i]);
        ys.push(integral / window);
    }
    (ts, ys)
}

/// Block-bootstrap confidence interval for the fitted rate: refits on
/// contiguous block resamples and reports the spread.
pub fn block_bootstrap_rate_ci(
    t: &[f64],
    y: &[f64],
    t_lo: f64,
    t_hi: f64,
    floor: f64,
    n_boot: usize,
    seed: u64,
) -> Option<(f64, f64, f64)> {
    use rand::{Rng, SeedableRng};
    let rate = log_slope_rate(t, y, t_lo, t_hi, floor)?;
    let idx: Vec<usize> = (0..t.len())
        .filter(|&i| t[i] >= t_lo && t[i] <= t_hi && y[i] > floor)
        .collect();
    if idx.len() < 8 {
        return Some((rate, rate, rate));
    }
    let block = (idx.len() / 8).max(2);
    let n_blocks = idx.len() / block;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let mut rates = Vec::with_capacity(n_boot);
    for _ in 0..n_boot {
        let mut ts = Vec::new();
        let mut ls = Vec::new();
        for _ in 0..n_blocks {
            let start = rng.gen_range(0..=idx.len() - block);
            for &i in &idx[start..start + block] {
                ts.push(t[i]);
                ls.push(y[i].ln());
            }
        }
        rates.push(-linear_fit(&ts, &ls).0);
    }
    rates.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let lo = rates[(0.025 * n_boot as f64) as usize];
    let hi = rates[((0.975 * n_boot as f64) as usize).min(n_boot - 1)];
    Some((rate, lo, hi))
}
