//! Per-window statistics over a single sensor series.

use super::FeatureError;

pub const DFA_MIN_LEN: usize = 64;
pub const SAMPEN_MIN_LEN: usize = 50;

pub fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return f64::NAN;
    }
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Population variance.
pub fn variance(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return f64::NAN;
    }
    let m = mean(xs);
    xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / xs.len() as f64
}

pub fn std_dev(xs: &[f64]) -> f64 {
    variance(xs).sqrt()
}

/// Population skewness `m3 / m2^1.5`; zero for a flat series.
pub fn skewness(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return f64::NAN;
    }
    let n = xs.len() as f64;
    let m = mean(xs);
    let (m2, m3) = xs.iter().fold((0.0, 0.0), |(a, b), x| {
        let d = x - m;
        (a + d * d, b + d * d * d)
    });
    let (m2, m3) = (m2 / n, m3 / n);
    if m2 <= f64::EPSILON * m.abs().max(1.0) {
        0.0
    } else {
        m3 / m2.powf(1.5)
    }
}

pub fn min(xs: &[f64]) -> f64 {
    xs.iter().copied().fold(f64::NAN, f64::min)
}

pub fn max(xs: &[f64]) -> f64 {
    xs.iter().copied().fold(f64::NAN, f64::max)
}

/// Autocorrelation at `lag`, normalised by the lag-0 sum of squares.
pub fn autocorrelation(xs: &[f64], lag: usize) -> f64 {
    if xs.len() <= lag + 1 {
        return f64::NAN;
    }
    let m = mean(xs);
    let denom: f64 = xs.iter().map(|x| (x - m).powi(2)).sum();
    if denom == 0.0 {
        return f64::NAN;
    }
    let num: f64 = xs.windows(lag + 1).map(|w| (w[0] - m) * (w[lag] - m)).sum();
    num / denom
}

/// Variance of first differences.
pub fn diff_variance(xs: &[f64]) -> f64 {
    if xs.len() < 2 {
        return f64::NAN;
    }
    let diffs: Vec<f64> = xs.windows(2).map(|w| w[1] - w[0]).collect();
    variance(&diffs)
}

/// Detrended fluctuation analysis scaling exponent.
///
/// The mean-removed series is integrated, split into non-overlapping boxes
/// for log-spaced box sizes between 4 and `len / 4`, linearly detrended per
/// box, and α is the least-squares slope of `ln F(n)` against `ln n`.
pub fn dfa_alpha(series: &[f64]) -> Result<f64, FeatureError> {
    let len = series.len();
    if len < DFA_MIN_LEN {
        return Err(FeatureError::SeriesTooShort { len, min: DFA_MIN_LEN });
    }
    let m = mean(series);
    let mut profile = Vec::with_capacity(len);
    let mut acc = 0.0;
    for x in series {
        acc += x - m;
        profile.push(acc);
    }

    let sizes = log_spaced_sizes(4, len / 4, 16);
    let mut log_n = Vec::with_capacity(sizes.len());
    let mut log_f = Vec::with_capacity(sizes.len());
    for &s in &sizes {
        let boxes = len / s;
        // Regressor t = 0..s-1 is shared by every box.
        let t_mean = (s as f64 - 1.0) / 2.0;
        let stt: f64 = (0..s).map(|t| (t as f64 - t_mean).powi(2)).sum();
        let mut sq = 0.0;
        for b in 0..boxes {
            let seg = &profile[b * s..(b + 1) * s];
            let y_mean = mean(seg);
            let sty: f64 = seg.iter().enumerate().map(|(t, y)| (t as f64 - t_mean) * (y - y_mean)).sum();
            let slope = sty / stt;
            sq += seg
                .iter()
                .enumerate()
                .map(|(t, y)| {
                    let fit = y_mean + slope * (t as f64 - t_mean);
                    (y - fit).powi(2)
                })
                .sum::<f64>();
        }
        let f = (sq / (boxes * s) as f64).sqrt();
        if f > 0.0 {
            log_n.push((s as f64).ln());
            log_f.push(f.ln());
        }
    }
    if log_n.len() < 2 {
        return Err(FeatureError::ConstantSeries);
    }
    Ok(ols_slope(&log_n, &log_f))
}

fn log_spaced_sizes(lo: usize, hi: usize, count: usize) -> Vec<usize> {
    let (l, h) = ((lo as f64).ln(), (hi as f64).ln());
    let mut sizes: Vec<usize> = (0..count)
        .map(|i| (l + (h - l) * i as f64 / (count - 1) as f64).exp().round() as usize)
        .filter(|s| *s >= lo && *s <= hi)
        .collect();
    sizes.dedup();
    sizes
}

fn ols_slope(x: &[f64], y: &[f64]) -> f64 {
    let (mx, my) = (mean(x), mean(y));
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    sxy / sxx
}

/// Sample entropy with template length `m` and tolerance `r_factor * std`.
///
/// Counts template pairs (i < j) over the first `len - m` start positions
/// under the Chebyshev distance. When no length-`m + 1` pair matches the
/// value is capped at `ln(B) + 1` so the feature stays finite.
pub fn sample_entropy(series: &[f64], m: usize, r_factor: f64) -> Result<f64, FeatureError> {
    let len = series.len();
    if len < SAMPEN_MIN_LEN {
        return Err(FeatureError::SeriesTooShort { len, min: SAMPEN_MIN_LEN });
    }
    let sd = std_dev(series);
    if !(sd > 0.0) {
        return Err(FeatureError::ConstantSeries);
    }
    let r = r_factor * sd;
    let templates = len - m;

    // Sweep templates ordered by their first sample; only neighbours within
    // r on that coordinate can match.
    let mut order: Vec<usize> = (0..templates).collect();
    order.sort_by(|&a, &b| series[a].total_cmp(&series[b]).then(a.cmp(&b)));

    let (mut b_count, mut a_count) = (0u64, 0u64);
    for (pos, &i) in order.iter().enumerate() {
        let xi = series[i];
        for &j in &order[pos + 1..] {
            if series[j] - xi > r {
                break;
            }
            if (1..m).all(|k| (series[i + k] - series[j + k]).abs() <= r) {
                b_count += 1;
                if (series[i + m] - series[j + m]).abs() <= r {
                    a_count += 1;
                }
            }
        }
    }

    if a_count == 0 {
        return Ok((b_count.max(1) as f64).ln() + 1.0);
    }
    Ok(-(a_count as f64 / b_count as f64).ln())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::seq::SliceRandom;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn white_noise(len: usize, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..len).map(|_| StandardNormal.sample(&mut rng)).collect()
    }

    /// Direct O(n²) template count, independent of the sorted sweep.
    fn sampen_brute_force(x: &[f64], m: usize, r: f64) -> f64 {
        let n = x.len() - m;
        let (mut b, mut a) = (0u64, 0u64);
        for i in 0..n {
            for j in (i + 1)..n {
                let dm = (0..m).map(|k| (x[i + k] - x[j + k]).abs()).fold(0.0, f64::max);
                if dm <= r {
                    b += 1;
                    if (x[i + m] - x[j + m]).abs() <= r {
                        a += 1;
                    }
                }
            }
        }
        if a == 0 {
            (b.max(1) as f64).ln() + 1.0
        } else {
            -(a as f64 / b as f64).ln()
        }
    }

    #[test]
    fn moments() {
        let xs = [1.0, 2.0, 3.0, 4.0];
        assert_eq!(mean(&xs), 2.5);
        assert_eq!(variance(&xs), 1.25);
        assert_eq!(skewness(&xs), 0.0);
        assert!(skewness(&[1.0, 1.0, 1.0, 10.0]) > 0.0);
        assert_eq!(skewness(&[3.0, 3.0]), 0.0);
        assert_eq!(min(&xs), 1.0);
        assert_eq!(max(&xs), 4.0);
        assert!(mean(&[]).is_nan());
    }

    #[test]
    fn second_order_statistics() {
        let alternating: Vec<f64> = (0..20).map(|i| if i % 2 == 0 { 1.0 } else { -1.0 }).collect();
        assert!(autocorrelation(&alternating, 1) < -0.9);
        assert!(autocorrelation(&alternating, 2) > 0.8);
        assert_eq!(diff_variance(&[1.0, 2.0, 3.0, 4.0]), 0.0);
        assert!(autocorrelation(&[2.0; 10], 1).is_nan());
    }

    #[test]
    fn dfa_white_noise_is_half() {
        // Monte-Carlo check of the asymptotic α = 0.5, averaged over seeds.
        let alphas: Vec<f64> = (0..8).map(|s| dfa_alpha(&white_noise(4096, s)).unwrap()).collect();
        let avg = mean(&alphas);
        assert!((avg - 0.5).abs() < 0.05, "mean alpha {avg}");
        for a in alphas {
            assert!((a - 0.5).abs() < 0.1, "alpha {a}");
        }
    }

    #[test]
    fn dfa_random_walk_is_one_and_a_half() {
        let alphas: Vec<f64> = (0..8)
            .map(|seed| {
                let mut acc = 0.0;
                let walk: Vec<f64> = white_noise(4096, 100 + seed)
                    .into_iter()
                    .map(|x| {
                        acc += x;
                        acc
                    })
                    .collect();
                dfa_alpha(&walk).unwrap()
            })
            .collect();
        let m = mean(&alphas);
        assert!((m - 1.5).abs() < 0.1, "mean alpha {m}");
        for a in alphas {
            assert!((a - 1.5).abs() < 0.2, "alpha {a}");
        }
    }

    #[test]
    fn dfa_too_short() {
        assert!(matches!(
            dfa_alpha(&white_noise(32, 1)),
            Err(FeatureError::SeriesTooShort { len: 32, min: 64 })
        ));
    }

    #[test]
    fn sampen_matches_brute_force() {
        for seed in 0..5 {
            let x = white_noise(300, seed);
            let r = 0.2 * std_dev(&x);
            let fast = sample_entropy(&x, 2, 0.2).unwrap();
            let oracle = sampen_brute_force(&x, 2, r);
            assert!((fast - oracle).abs() < 1e-12, "{fast} vs {oracle}");
        }
    }

    #[test]
    fn sampen_periodic_vs_shuffled() {
        let periodic: Vec<f64> = (0..100).map(|i| if i % 2 == 0 { 1.0 } else { 2.0 }).collect();
        let p = sample_entropy(&periodic, 2, 0.2).unwrap();
        let oracle_p = sampen_brute_force(&periodic, 2, 0.2 * std_dev(&periodic));
        assert!((p - oracle_p).abs() < 1e-12);
        assert!(p < 0.3, "periodic sampen {p}");

        let mut shuffled = periodic.clone();
        shuffled.shuffle(&mut ChaCha8Rng::seed_from_u64(7));
        let s = sample_entropy(&shuffled, 2, 0.2).unwrap();
        let oracle_s = sampen_brute_force(&shuffled, 2, 0.2 * std_dev(&shuffled));
        assert!((s - oracle_s).abs() < 1e-12);
        assert!(s > p, "shuffled {s} <= periodic {p}");
    }

    #[test]
    fn sampen_errors_and_cap() {
        assert!(matches!(sample_entropy(&[5.0; 80], 2, 0.2), Err(FeatureError::ConstantSeries)));
        assert!(matches!(
            sample_entropy(&white_noise(20, 3), 2, 0.2),
            Err(FeatureError::SeriesTooShort { .. })
        ));
        // A tiny tolerance leaves no length-3 matches: capped, finite.
        let x = white_noise(60, 9);
        let v = sample_entropy(&x, 2, 1e-9).unwrap();
        assert!(v.is_finite());
        assert_eq!(v, sampen_brute_force(&x, 2, 1e-9 * std_dev(&x)));
    }
}
