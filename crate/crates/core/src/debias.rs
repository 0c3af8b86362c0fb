//! Rating normalization, median binarization and the views/age
//! correlation audit.
//!
//! Rating counts grow with the number of viewers, and the number of viewers
//! carries publicity, reputation and age effects. Dividing each count by the
//! talk's total count removes the viewer multiplier: if `r_i = f_i · V` then
//! `r_i / Σ r_j = f_i / Σ f_j` for every `V`.

use std::fmt::Write as _;

use rayon::prelude::*;
use thiserror::Error;

use crate::corpus::{Talk, CATEGORIES, NUM_CATEGORIES};

#[derive(Debug, Error, PartialEq)]
pub enum DebiasError {
    #[error("no ratings")]
    NoRatings,
    #[error("degenerate series")]
    DegenerateSeries,
    #[error("series lengths differ ({0} vs {1})")]
    LengthMismatch(usize, usize),
    #[error("need at least 2 observations, got {0}")]
    TooShort(usize),
    #[error("category {category}, {column}: {source}")]
    Column {
        category: &'static str,
        column: &'static str,
        #[source]
        source: Box<DebiasError>,
    },
    #[error("median_binarize: empty fit set")]
    EmptyFitSet,
    #[error("median_binarize: fit index {0} out of range")]
    FitIndexOutOfRange(usize),
}

pub type Result<T> = std::result::Result<T, DebiasError>;

pub type Ratings = [f64; NUM_CATEGORIES];
pub type Labels = [u8; NUM_CATEGORIES];

/// Debiased rating vector and its binarized labels.
#[derive(Debug, Clone, PartialEq)]
pub struct ScaledRatings {
    pub scaled: Ratings,
    pub labels: Labels,
}

/// Each count divided by the talk's total count.
pub fn scale_ratings(counts: &[u64; NUM_CATEGORIES]) -> Result<Ratings> {
    let total: u64 = counts.iter().sum();
    if total == 0 {
        return Err(DebiasError::NoRatings);
    }
    let total = total as f64;
    Ok(counts.map(|c| c as f64 / total))
}

/// Raw counts as reals, for the unscaled ablation.
pub fn unscaled_ratings(counts: &[u64; NUM_CATEGORIES]) -> Ratings {
    counts.map(|c| c as f64)
}

pub fn median(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        (values[n / 2 - 1] + values[n / 2]) / 2.0
    }
}

/// Per-category thresholds fit on a subset and reused for held-out rows.
#[derive(Debug, Clone, PartialEq)]
pub struct Thresholds(pub Ratings);

impl Thresholds {
    /// Label 1 iff strictly above the threshold.
    pub fn apply(&self, row: &Ratings) -> Labels {
        let mut labels = [0u8; NUM_CATEGORIES];
        for i in 0..NUM_CATEGORIES {
            labels[i] = u8::from(row[i] > self.0[i]);
        }
        labels
    }
}

/// Fits per-column medians on `fit_indices` and labels every row.
pub fn median_binarize(matrix: &[Ratings], fit_indices: &[usize]) -> Result<(Vec<Labels>, Thresholds)> {
    if fit_indices.is_empty() {
        return Err(DebiasError::EmptyFitSet);
    }
    if let Some(&bad) = fit_indices.iter().find(|&&i| i >= matrix.len()) {
        return Err(DebiasError::FitIndexOutOfRange(bad));
    }
    let mut thresholds = [0.0; NUM_CATEGORIES];
    for (c, t) in thresholds.iter_mut().enumerate() {
        let mut column: Vec<f64> = fit_indices.iter().map(|&i| matrix[i][c]).collect();
        *t = median(&mut column);
    }
    let thresholds = Thresholds(thresholds);
    let labels = matrix.iter().map(|row| thresholds.apply(row)).collect();
    Ok((labels, thresholds))
}

/// Pearson product-moment correlation.
pub fn pearson(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() {
        return Err(DebiasError::LengthMismatch(x.len(), y.len()));
    }
    let n = x.len();
    if n < 2 {
        return Err(DebiasError::TooShort(n));
    }
    let mean_x = x.iter().sum::<f64>() / n as f64;
    let mean_y = y.iter().sum::<f64>() / n as f64;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (dx, dy) = (a - mean_x, b - mean_y);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(DebiasError::DegenerateSeries);
    }
    Ok((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CorrelationRow {
    pub raw_views: f64,
    pub scaled_views: f64,
    pub raw_age: f64,
    pub scaled_age: f64,
}

impl CorrelationRow {
    fn columns(&self) -> [f64; 4] {
        [self.raw_views, self.scaled_views, self.raw_age, self.scaled_age]
    }
}

/// Correlation of raw and scaled ratings with total views and talk age.
#[derive(Debug, Clone, PartialEq)]
pub struct CorrelationReport {
    pub rows: [CorrelationRow; NUM_CATEGORIES],
    pub average: CorrelationRow,
}

const COLUMN_NAMES: [&str; 4] = ["raw vs views", "scaled vs views", "raw vs age", "scaled vs age"];

pub fn correlation_report(talks: &[Talk]) -> Result<CorrelationReport> {
    if talks.len() < 2 {
        return Err(DebiasError::TooShort(talks.len()));
    }
    let views: Vec<f64> = talks.iter().map(|t| t.total_views as f64).collect();
    let age: Vec<f64> = talks.iter().map(|t| t.age_days as f64).collect();
    let scaled: Vec<Ratings> = talks
        .iter()
        .map(|t| scale_ratings(&t.rating_counts))
        .collect::<Result<_>>()?;

    let rows: Vec<CorrelationRow> = (0..NUM_CATEGORIES)
        .into_par_iter()
        .map(|c| {
            let raw: Vec<f64> = talks.iter().map(|t| t.rating_counts[c] as f64).collect();
            let sc: Vec<f64> = scaled.iter().map(|r| r[c]).collect();
            let series = [(&raw, &views), (&sc, &views), (&raw, &age), (&sc, &age)];
            let mut out = [0.0; 4];
            for (k, (x, y)) in series.iter().enumerate() {
                out[k] = pearson(x, y).map_err(|e| DebiasError::Column {
                    category: CATEGORIES[c],
                    column: COLUMN_NAMES[k],
                    source: Box::new(e),
                })?;
            }
            Ok(CorrelationRow {
                raw_views: out[0],
                scaled_views: out[1],
                raw_age: out[2],
                scaled_age: out[3],
            })
        })
        .collect::<Result<_>>()?;

    let n = NUM_CATEGORIES as f64;
    let mean = |f: fn(&CorrelationRow) -> f64| rows.iter().map(f).sum::<f64>() / n;
    let average = CorrelationRow {
        raw_views: mean(|r| r.raw_views),
        scaled_views: mean(|r| r.scaled_views),
        raw_age: mean(|r| r.raw_age),
        scaled_age: mean(|r| r.scaled_age),
    };
    Ok(CorrelationReport {
        rows: rows.try_into().expect("14 rows"),
        average,
    })
}

impl CorrelationReport {
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        writeln!(
            out,
            "{:<14} {:>12} {:>12} {:>12} {:>12}",
            "", "views/raw", "views/scaled", "age/raw", "age/scaled"
        )
        .unwrap();
        let line = |out: &mut String, name: &str, row: &CorrelationRow| {
            let [a, b, c, d] = row.columns();
            writeln!(out, "{name:<14} {a:>12.3} {b:>12.3} {c:>12.3} {d:>12.3}").unwrap();
        };
        for (name, row) in CATEGORIES.iter().zip(&self.rows) {
            line(&mut out, name, row);
        }
        writeln!(out, "{}", "-".repeat(66)).unwrap();
        line(&mut out, "Average", &self.average);
        out
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("category,raw_views,scaled_views,raw_age,scaled_age\n");
        let rows = CATEGORIES.iter().copied().zip(&self.rows).chain(std::iter::once(("Average", &self.average)));
        for (name, row) in rows {
            let [a, b, c, d] = row.columns();
            writeln!(out, "{name},{a},{b},{c},{d}").unwrap();
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn uniform_counts() {
        let s = scale_ratings(&[3; 14]).unwrap();
        for v in s {
            assert_abs_diff_eq!(v, 1.0 / 14.0, epsilon = 1e-15);
        }
    }

    #[test]
    fn proportional_counts_match() {
        let c = [4, 1, 0, 9, 2, 2, 7, 3, 0, 1, 5, 6, 8, 1];
        assert_eq!(scale_ratings(&c).unwrap(), scale_ratings(&c.map(|x| 7 * x)).unwrap());
    }

    #[test]
    fn single_category_mass() {
        let mut c = [0; 14];
        c[0] = 5;
        let mut expected = [0.0; 14];
        expected[0] = 1.0;
        assert_eq!(scale_ratings(&c).unwrap(), expected);
        assert_eq!(scale_ratings(&[0; 14]), Err(DebiasError::NoRatings));
    }

    fn column_matrix(col: &[f64]) -> Vec<Ratings> {
        col.iter().map(|&v| [v; 14]).collect()
    }

    #[test]
    fn odd_median_strict() {
        let m = column_matrix(&[0.1, 0.2, 0.3]);
        let (labels, t) = median_binarize(&m, &[0, 1, 2]).unwrap();
        assert_eq!(t.0[0], 0.2);
        let col: Vec<u8> = labels.iter().map(|l| l[0]).collect();
        assert_eq!(col, [0, 0, 1]);
    }

    #[test]
    fn even_median_is_midpoint() {
        let m = column_matrix(&[4.0, 1.0, 3.0, 2.0]);
        let (_, t) = median_binarize(&m, &[0, 1, 2, 3]).unwrap();
        assert_eq!(t.0[5], 2.5);
    }

    #[test]
    fn constant_column_all_zero() {
        let m = column_matrix(&[0.5; 6]);
        let (labels, _) = median_binarize(&m, &[0, 1, 2, 3, 4, 5]).unwrap();
        assert!(labels.iter().all(|l| l.iter().all(|&x| x == 0)));
    }

    #[test]
    fn thresholds_come_from_fit_rows_only() {
        let m = column_matrix(&[1.0, 2.0, 3.0, 100.0, -100.0]);
        let (labels, t) = median_binarize(&m, &[0, 1, 2]).unwrap();
        assert_eq!(t.0[0], 2.0);
        assert_eq!(labels[3][0], 1);
        assert_eq!(labels[4][0], 0);
        assert_eq!(median_binarize(&m, &[]), Err(DebiasError::EmptyFitSet));
    }

    #[test]
    fn odd_random_columns_at_most_half_ones() {
        // Brute-force count: a value exceeds the median of an odd-length
        // sample iff more than half of the sample lies at or below it.
        let mut rng = ChaCha8Rng::seed_from_u64(101);
        let m: Vec<Ratings> = (0..101)
            .map(|_| std::array::from_fn(|_| rng.gen_range(0..20) as f64 / 20.0))
            .collect();
        let all: Vec<usize> = (0..101).collect();
        let (labels, _) = median_binarize(&m, &all).unwrap();
        for c in 0..14 {
            let ones = labels.iter().filter(|l| l[c] == 1).count();
            let brute = (0..101)
                .filter(|&i| (0..101).filter(|&j| m[j][c] < m[i][c]).count() >= 51)
                .count();
            assert_eq!(ones, brute);
            assert!(ones <= 50);
        }
    }

    #[test]
    fn pearson_cases() {
        let x = [1.0, 2.0, 3.0, 4.0];
        assert_abs_diff_eq!(pearson(&x, &x).unwrap(), 1.0, epsilon = 1e-15);
        let neg: Vec<f64> = x.iter().map(|v| -v).collect();
        assert_abs_diff_eq!(pearson(&x, &neg).unwrap(), -1.0, epsilon = 1e-15);
        // Hand computation: dx = [-1.5,-.5,.5,1.5], dy = [-1.75,.25,-.75,2.25]
        // Σdxdy = 5.5, Σdx² = 5, Σdy² = 8.75 → 5.5 / √43.75
        let expected = 5.5 / 43.75f64.sqrt();
        assert_abs_diff_eq!(pearson(&x, &[1.0, 3.0, 2.0, 5.0]).unwrap(), expected, epsilon = 1e-15);
        assert_abs_diff_eq!(expected, 0.831_521_840_6, epsilon = 1e-9);
        assert_eq!(pearson(&x, &[2.0; 4]), Err(DebiasError::DegenerateSeries));
    }

    fn synthetic_talk(rng: &mut ChaCha8Rng, fractions: &[f64; 14], views: u64, age: u64) -> Talk {
        let counts = fractions.map(|f| {
            let noise = 1.0 + rng.gen_range(-0.05..0.05);
            (f * views as f64 * noise).round().max(1.0) as u64
        });
        Talk {
            id: String::new(),
            title: String::new(),
            transcript: String::new(),
            sentences: vec![],
            rating_counts: counts,
            total_views: views,
            age_days: age,
            keywords: vec![],
        }
    }

    #[test]
    fn report_collapses_views_correlation() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let fractions: [f64; 14] = std::array::from_fn(|i| 0.002 + 0.001 * i as f64);
        let talks: Vec<Talk> = (0..300)
            .map(|_| {
                let views = rng.gen_range(10_000..2_000_000);
                let age = rng.gen_range(200..4000);
                synthetic_talk(&mut rng, &fractions, views, age)
            })
            .collect();
        let report = correlation_report(&talks).unwrap();
        assert!(report.average.raw_views > 0.9);
        assert!(report.average.scaled_views.abs() < 0.1);
        let mean = report.rows.iter().map(|r| r.scaled_age).sum::<f64>() / 14.0;
        assert_abs_diff_eq!(report.average.scaled_age, mean, epsilon = 1e-15);
        for row in &report.rows {
            assert!(row.columns().iter().all(|v| (-1.0..=1.0).contains(v)));
        }
        let csv = report.to_csv();
        assert_eq!(csv.lines().count(), 16);
        assert!(report.to_text().contains("Jaw-Dropping"));
    }

    #[test]
    fn duplicated_talks_with_jitter_smoke() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let fractions = [0.07; 14];
        let talks: Vec<Talk> = (0..10)
            .map(|i| synthetic_talk(&mut rng, &fractions, 5000 + (i % 2) * 10, 300 + i))
            .collect();
        assert!(correlation_report(&talks).is_ok());
    }

    #[test]
    fn constant_views_is_degenerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let fractions = [0.07; 14];
        let talks: Vec<Talk> = (0..5).map(|i| synthetic_talk(&mut rng, &fractions, 5000, 300 + i)).collect();
        let err = correlation_report(&talks).unwrap_err();
        assert_eq!(err.to_string(), "category Beautiful, raw vs views: degenerate series");
    }

    proptest! {
        #[test]
        fn scale_invariant(c in prop::array::uniform14(0u64..1000), k in 1u64..100) {
            prop_assume!(c.iter().sum::<u64>() > 0);
            let base = scale_ratings(&c).unwrap();
            prop_assert_eq!(base, scale_ratings(&c.map(|x| x * k)).unwrap());
            prop_assert!((base.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        }

        #[test]
        fn labels_invariant_to_per_talk_multipliers(
            rows in prop::collection::vec((prop::array::uniform14(1u64..500), 1u64..20), 3..25),
        ) {
            let plain: Vec<Ratings> = rows.iter().map(|(c, _)| scale_ratings(c).unwrap()).collect();
            let scaled: Vec<Ratings> = rows.iter().map(|(c, k)| scale_ratings(&c.map(|x| x * k)).unwrap()).collect();
            let fit: Vec<usize> = (0..rows.len()).collect();
            prop_assert_eq!(median_binarize(&plain, &fit).unwrap(), median_binarize(&scaled, &fit).unwrap());
        }
    }
}
