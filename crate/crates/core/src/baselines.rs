//! Lexicon-count features with linear SVM and ℓ1-logistic classifiers,
//! one binary model per rating category.

use std::collections::{BTreeMap, HashSet};
use std::path::Path;

use rayon::prelude::*;
use thiserror::Error;

use crate::autodiff::Tensor;
use crate::checkpoint::{CheckpointError, Container};
use crate::corpus::NUM_CATEGORIES;
use crate::debias::Labels;

#[derive(Debug, Error)]
pub enum BaselineError {
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("lexicon line {line}: {message}")]
    Lexicon { line: usize, message: String },
    #[error("lexicon has no categories")]
    EmptyLexicon,
    #[error("talk has no tokens")]
    NoTokens,
    #[error("{rows} feature rows vs {labels} labels")]
    LengthMismatch { rows: usize, labels: usize },
    #[error("need at least 2 training points, got {0}")]
    TooFew(usize),
    #[error("single-class training set")]
    SingleClass,
    #[error("label {0} is not ±1")]
    BadLabel(f64),
    #[error("feature row {row} has length {found}, expected {expected}")]
    RowLength { row: usize, expected: usize, found: usize },
    #[error("C must be finite and >= 0, got {0}")]
    BadC(f64),
    #[error("category {category}: {source}")]
    Category {
        category: usize,
        #[source]
        source: Box<BaselineError>,
    },
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error("unknown baseline kind `{0}`")]
    UnknownKind(String),
}

pub type Result<T> = std::result::Result<T, BaselineError>;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Pattern {
    Literal(String),
    /// Matches any token starting with the stored stem.
    Prefix(String),
}

impl Pattern {
    pub fn parse(raw: &str) -> Option<Self> {
        let raw = raw.to_lowercase();
        match raw.strip_suffix('*') {
            Some("") => None,
            Some(stem) if stem.contains('*') => None,
            Some(stem) => Some(Pattern::Prefix(stem.to_string())),
            None if raw.contains('*') => None,
            None => Some(Pattern::Literal(raw)),
        }
    }

    pub fn matches(&self, token: &str) -> bool {
        match self {
            Pattern::Literal(w) => token == w,
            Pattern::Prefix(stem) => token.starts_with(stem.as_str()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Lexicon {
    categories: Vec<String>,
    patterns: Vec<Vec<Pattern>>,
}

impl Lexicon {
    pub fn new(entries: Vec<(String, Vec<Pattern>)>) -> Result<Self> {
        if entries.is_empty() {
            return Err(BaselineError::EmptyLexicon);
        }
        let mut seen = HashSet::new();
        for (i, (name, pats)) in entries.iter().enumerate() {
            if !seen.insert(name.clone()) {
                return Err(BaselineError::Lexicon {
                    line: i + 1,
                    message: format!("duplicate category `{name}`"),
                });
            }
            if pats.is_empty() {
                return Err(BaselineError::Lexicon {
                    line: i + 1,
                    message: format!("category `{name}` has no patterns"),
                });
            }
        }
        let (categories, patterns) = entries.into_iter().unzip();
        Ok(Self { categories, patterns })
    }

    /// Parses `category: word1 word2 stem* ...` lines. Blank lines and
    /// lines starting with `#` are skipped.
    pub fn parse(text: &str) -> Result<Self> {
        let mut entries = Vec::new();
        let mut seen = HashSet::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let err = |message: String| BaselineError::Lexicon { line: i + 1, message };
            let (name, rest) = line
                .split_once(':')
                .ok_or_else(|| err("expected `category: patterns...`".into()))?;
            let name = name.trim();
            if name.is_empty() {
                return Err(err("empty category name".into()));
            }
            if !seen.insert(name.to_string()) {
                return Err(err(format!("duplicate category `{name}`")));
            }
            let pats = rest
                .split_whitespace()
                .map(|p| Pattern::parse(p).ok_or_else(|| err(format!("bad pattern `{p}`"))))
                .collect::<Result<Vec<_>>>()?;
            if pats.is_empty() {
                return Err(err(format!("category `{name}` has no patterns")));
            }
            entries.push((name.to_string(), pats));
        }
        Self::new(entries)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    pub fn categories(&self) -> &[String] {
        &self.categories
    }

    pub fn len(&self) -> usize {
        self.categories.len()
    }

    pub fn is_empty(&self) -> bool {
        self.categories.is_empty()
    }
}

/// Fraction of tokens matched by each lexicon category. A token may count
/// toward several categories; matching is case-insensitive.
pub fn extract_features<'a>(tokens: impl IntoIterator<Item = &'a str>, lex: &Lexicon) -> Result<Vec<f64>> {
    let mut counts = vec![0usize; lex.len()];
    let mut total = 0usize;
    for token in tokens {
        total += 1;
        let lower = token.to_lowercase();
        for (c, pats) in lex.patterns.iter().enumerate() {
            if pats.iter().any(|p| p.matches(&lower)) {
                counts[c] += 1;
            }
        }
    }
    if total == 0 {
        return Err(BaselineError::NoTokens);
    }
    Ok(counts.into_iter().map(|c| c as f64 / total as f64).collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LinearKind {
    /// Decision `w·x − b ≥ 0`.
    Svm,
    /// Decision `w·x + b ≥ 0`.
    Lasso,
}

impl LinearKind {
    pub fn name(self) -> &'static str {
        match self {
            LinearKind::Svm => "svm",
            LinearKind::Lasso => "lasso",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "svm" => Some(LinearKind::Svm),
            "lasso" => Some(LinearKind::Lasso),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LinearModel {
    pub kind: LinearKind,
    pub w: Vec<f64>,
    pub b: f64,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Signed margin in the model's own sign convention.
pub fn decision(kind: LinearKind, w: &[f64], b: f64, x: &[f64]) -> f64 {
    match kind {
        LinearKind::Svm => dot(w, x) - b,
        LinearKind::Lasso => dot(w, x) + b,
    }
}

/// 1 iff the decision value is ≥ 0.
pub fn predict_linear(kind: LinearKind, w: &[f64], b: f64, x: &[f64]) -> u8 {
    u8::from(decision(kind, w, b, x) >= 0.0)
}

impl LinearModel {
    pub fn predict(&self, x: &[f64]) -> u8 {
        predict_linear(self.kind, &self.w, self.b, x)
    }
}

/// `½‖w‖² + C Σ max(0, 1 − y(w·x − b))`.
pub fn svm_objective(x: &[Vec<f64>], y: &[f64], c: f64, w: &[f64], b: f64) -> f64 {
    let hinge: f64 = x
        .iter()
        .zip(y)
        .map(|(xi, yi)| (1.0 - yi * (dot(w, xi) - b)).max(0.0))
        .sum();
    0.5 * dot(w, w) + c * hinge
}

fn softplus(z: f64) -> f64 {
    z.max(0.0) + (-z.abs()).exp().ln_1p()
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// `‖w‖₁ + C Σ log(1 + exp(−y(w·x + b)))`.
pub fn lasso_objective(x: &[Vec<f64>], y: &[f64], c: f64, w: &[f64], b: f64) -> f64 {
    let loss: f64 = x.iter().zip(y).map(|(xi, yi)| softplus(-yi * (dot(w, xi) + b))).sum();
    w.iter().map(|v| v.abs()).sum::<f64>() + c * loss
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverOptions {
    pub max_iter: usize,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self { max_iter: 5000 }
    }
}

fn validate(x: &[Vec<f64>], y: &[f64], c: f64) -> Result<usize> {
    if x.len() != y.len() {
        return Err(BaselineError::LengthMismatch { rows: x.len(), labels: y.len() });
    }
    if x.len() < 2 {
        return Err(BaselineError::TooFew(x.len()));
    }
    if !(c.is_finite() && c >= 0.0) {
        return Err(BaselineError::BadC(c));
    }
    if let Some(&bad) = y.iter().find(|&&v| v != 1.0 && v != -1.0) {
        return Err(BaselineError::BadLabel(bad));
    }
    if y.iter().all(|&v| v == y[0]) {
        return Err(BaselineError::SingleClass);
    }
    let d = x[0].len();
    for (row, xi) in x.iter().enumerate() {
        if xi.len() != d {
            return Err(BaselineError::RowLength { row, expected: d, found: xi.len() });
        }
    }
    Ok(d)
}

/// Length of one constant-step phase of the SVM solver.
pub const SVM_PHASE: usize = 200;

/// Subgradient descent on the hinge-form primal, in phases of
/// [`SVM_PHASE`] steps of constant length along the normalized subgradient.
/// Each phase restarts from the best iterate so far with half the previous
/// step; the first step is `R/4` with `R = √(2Cn)` bounding `‖w*‖`.
/// Returns the best iterate by objective.
pub fn train_svm(x: &[Vec<f64>], y: &[f64], c: f64, opts: SolverOptions) -> Result<LinearModel> {
    let d = validate(x, y, c)?;
    let mut w = vec![0.0; d];
    let mut b = 0.0;
    let mut best = (svm_objective(x, y, c, &w, b), w.clone(), b);
    let mut step = 0.25 * (2.0 * c * x.len() as f64).sqrt();
    let mut gw = vec![0.0; d];
    for t in 0..opts.max_iter {
        if t > 0 && t % SVM_PHASE == 0 {
            w.clone_from(&best.1);
            b = best.2;
            step *= 0.5;
        }
        gw.copy_from_slice(&w);
        let mut gb = 0.0;
        for (xi, &yi) in x.iter().zip(y) {
            if yi * (dot(&w, xi) - b) < 1.0 {
                for (g, v) in gw.iter_mut().zip(xi) {
                    *g -= c * yi * v;
                }
                gb += c * yi;
            }
        }
        let norm = (dot(&gw, &gw) + gb * gb).sqrt();
        if norm == 0.0 {
            break;
        }
        for (wi, g) in w.iter_mut().zip(&gw) {
            *wi -= step * g / norm;
        }
        b -= step * gb / norm;
        let obj = svm_objective(x, y, c, &w, b);
        if obj < best.0 {
            best = (obj, w.clone(), b);
        }
    }
    Ok(LinearModel { kind: LinearKind::Svm, w: best.1, b: best.2 })
}

/// Largest eigenvalue of `Σ [x;1][x;1]ᵀ` by power iteration.
fn gram_spectral_norm(x: &[Vec<f64>]) -> f64 {
    let d = x[0].len() + 1;
    let mut v = vec![1.0 / (d as f64).sqrt(); d];
    let mut lambda = 0.0;
    for _ in 0..200 {
        let mut next = vec![0.0; d];
        for xi in x {
            let proj = dot(&v[..d - 1], xi) + v[d - 1];
            for (n, a) in next.iter_mut().zip(xi.iter().chain(std::iter::once(&1.0))) {
                *n += proj * a;
            }
        }
        let norm = dot(&next, &next).sqrt();
        if norm == 0.0 {
            return 0.0;
        }
        let converged = (norm - lambda).abs() <= 1e-12 * norm;
        lambda = norm;
        v = next.into_iter().map(|n| n / norm).collect();
        if converged {
            break;
        }
    }
    lambda
}

fn soft_threshold(v: f64, t: f64) -> f64 {
    if v > t {
        v - t
    } else if v < -t {
        v + t
    } else {
        0.0
    }
}

/// Accelerated proximal gradient (soft-thresholding on `w`, `b`
/// unpenalized) with function-value restarts. Returns the best iterate.
pub fn train_lasso(x: &[Vec<f64>], y: &[f64], c: f64, opts: SolverOptions) -> Result<LinearModel> {
    let d = validate(x, y, c)?;
    let zero = LinearModel { kind: LinearKind::Lasso, w: vec![0.0; d], b: 0.0 };
    if c == 0.0 {
        return Ok(zero);
    }
    let lipschitz = 0.25 * c * gram_spectral_norm(x) * 1.01;
    let step = 1.0 / lipschitz;
    let obj = |w: &[f64], b: f64| lasso_objective(x, y, c, w, b);

    let (mut w, mut b) = (vec![0.0; d], 0.0);
    let (mut zw, mut zb) = (w.clone(), b);
    let mut momentum = 1.0_f64;
    let mut current = obj(&w, b);
    let mut best = (current, w.clone(), b);
    let mut gw = vec![0.0; d];
    for _ in 0..opts.max_iter {
        gw.iter_mut().for_each(|g| *g = 0.0);
        let mut gb = 0.0;
        for (xi, &yi) in x.iter().zip(y) {
            let s = -yi * c * sigmoid(-yi * (dot(&zw, xi) + zb));
            for (g, v) in gw.iter_mut().zip(xi) {
                *g += s * v;
            }
            gb += s;
        }
        let next_w: Vec<f64> = zw
            .iter()
            .zip(&gw)
            .map(|(z, g)| soft_threshold(z - step * g, step))
            .collect();
        let next_b = zb - step * gb;
        let next_obj = obj(&next_w, next_b);
        if next_obj > current {
            // Restart momentum from the last accepted point.
            zw.clone_from(&w);
            zb = b;
            momentum = 1.0;
            continue;
        }
        let next_m = (1.0 + (1.0 + 4.0 * momentum * momentum).sqrt()) / 2.0;
        let beta = (momentum - 1.0) / next_m;
        zw = next_w.iter().zip(&w).map(|(n, o)| n + beta * (n - o)).collect();
        zb = next_b + beta * (next_b - b);
        w = next_w;
        b = next_b;
        momentum = next_m;
        current = next_obj;
        if current < best.0 {
            best = (current, w.clone(), b);
        }
    }
    Ok(LinearModel { kind: LinearKind::Lasso, w: best.1, b: best.2 })
}

pub fn train_linear(kind: LinearKind, x: &[Vec<f64>], y: &[f64], c: f64, opts: SolverOptions) -> Result<LinearModel> {
    match kind {
        LinearKind::Svm => train_svm(x, y, c, opts),
        LinearKind::Lasso => train_lasso(x, y, c, opts),
    }
}

/// Per-feature affine map fit on training rows: `(x − mean) / scale`.
#[derive(Debug, Clone, PartialEq)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub scale: Vec<f64>,
}

impl Standardizer {
    /// Constant features get scale 1.
    pub fn fit(rows: &[Vec<f64>]) -> Self {
        let d = rows.first().map_or(0, Vec::len);
        let n = rows.len().max(1) as f64;
        let mean: Vec<f64> = (0..d).map(|j| rows.iter().map(|r| r[j]).sum::<f64>() / n).collect();
        let scale = (0..d)
            .map(|j| {
                let var = rows.iter().map(|r| (r[j] - mean[j]).powi(2)).sum::<f64>() / n;
                if var > 0.0 {
                    var.sqrt()
                } else {
                    1.0
                }
            })
            .collect();
        Self { mean, scale }
    }

    pub fn apply(&self, row: &[f64]) -> Vec<f64> {
        row.iter()
            .zip(&self.mean)
            .zip(&self.scale)
            .map(|((x, m), s)| (x - m) / s)
            .collect()
    }
}

/// Fourteen per-category linear models over standardized lexicon features.
#[derive(Debug, Clone, PartialEq)]
pub struct BaselineModel {
    pub kind: LinearKind,
    pub standardizer: Standardizer,
    pub models: Vec<LinearModel>,
    /// Selected C for each category.
    pub c: Vec<f64>,
}

fn to_signed(labels: &[Labels], category: usize) -> Vec<f64> {
    labels.iter().map(|l| if l[category] == 1 { 1.0 } else { -1.0 }).collect()
}

fn accuracy(model: &LinearModel, x: &[Vec<f64>], y: &[f64]) -> f64 {
    let hits = x
        .iter()
        .zip(y)
        .filter(|(xi, &yi)| (model.predict(xi) == 1) == (yi > 0.0))
        .count();
    hits as f64 / x.len().max(1) as f64
}

/// Trains one model per category for every C in `c_grid` and keeps the one
/// with the best dev accuracy (ties go to the smaller C).
pub fn fit_baseline(
    kind: LinearKind,
    train_x: &[Vec<f64>],
    train_labels: &[Labels],
    dev_x: &[Vec<f64>],
    dev_labels: &[Labels],
    c_grid: &[f64],
    opts: SolverOptions,
) -> Result<BaselineModel> {
    let standardizer = Standardizer::fit(train_x);
    let tx: Vec<Vec<f64>> = train_x.iter().map(|r| standardizer.apply(r)).collect();
    let dx: Vec<Vec<f64>> = dev_x.iter().map(|r| standardizer.apply(r)).collect();
    let mut grid = c_grid.to_vec();
    grid.sort_by(f64::total_cmp);
    let fitted = (0..NUM_CATEGORIES)
        .into_par_iter()
        .map(|category| {
            let wrap = |e: BaselineError| BaselineError::Category { category, source: Box::new(e) };
            let ty = to_signed(train_labels, category);
            let dy = to_signed(dev_labels, category);
            let mut best: Option<(f64, f64, LinearModel)> = None;
            for &c in &grid {
                let m = train_linear(kind, &tx, &ty, c, opts).map_err(wrap)?;
                let acc = if dx.is_empty() { accuracy(&m, &tx, &ty) } else { accuracy(&m, &dx, &dy) };
                if best.as_ref().is_none_or(|(a, _, _)| acc > *a) {
                    best = Some((acc, c, m));
                }
            }
            let (_, c, m) = best.ok_or_else(|| wrap(BaselineError::BadC(f64::NAN)))?;
            Ok((c, m))
        })
        .collect::<Result<Vec<_>>>()?;
    let (c, models) = fitted.into_iter().unzip();
    Ok(BaselineModel { kind, standardizer, models, c })
}

impl BaselineModel {
    pub fn predict(&self, features: &[f64]) -> Labels {
        let x = self.standardizer.apply(features);
        std::array::from_fn(|k| self.models[k].predict(&x))
    }

    pub fn to_container(&self) -> Container {
        let mut meta = BTreeMap::new();
        meta.insert("kind".to_string(), self.kind.name().to_string());
        meta.insert("features".to_string(), self.standardizer.mean.len().to_string());
        let mut tensors = vec![
            ("feature_mean".to_string(), Tensor::vector(self.standardizer.mean.clone())),
            ("feature_scale".to_string(), Tensor::vector(self.standardizer.scale.clone())),
            ("c".to_string(), Tensor::vector(self.c.clone())),
        ];
        for (k, m) in self.models.iter().enumerate() {
            tensors.push((format!("w_{k}"), Tensor::vector(m.w.clone())));
            tensors.push((format!("b_{k}"), Tensor::scalar(m.b)));
        }
        Container { meta, tensors }
    }

    pub fn from_container(c: &Container) -> Result<Self> {
        let kind_str = c.meta("kind")?;
        let kind = LinearKind::parse(kind_str).ok_or_else(|| BaselineError::UnknownKind(kind_str.to_string()))?;
        let get = |name: &str| -> Result<Vec<f64>> {
            c.tensor(name)
                .map(|t| t.data().to_vec())
                .ok_or_else(|| CheckpointError::MissingMeta(name.to_string()).into())
        };
        let standardizer = Standardizer { mean: get("feature_mean")?, scale: get("feature_scale")? };
        let d = standardizer.mean.len();
        let mut models = Vec::with_capacity(NUM_CATEGORIES);
        for k in 0..NUM_CATEGORIES {
            let w = get(&format!("w_{k}"))?;
            if w.len() != d {
                return Err(BaselineError::RowLength { row: k, expected: d, found: w.len() });
            }
            let b = get(&format!("b_{k}"))?;
            models.push(LinearModel { kind, w, b: b[0] });
        }
        Ok(Self { kind, standardizer, models, c: get("c")? })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn happy() -> Lexicon {
        Lexicon::parse("happy: glad joy*\nsad: cry*\n").unwrap()
    }

    #[test]
    fn prefix_and_literal_matching() {
        let f = extract_features(["glad", "joyful", "sad", "glad"], &happy()).unwrap();
        assert_eq!(f, vec![0.75, 0.0]);
        let f = extract_features(["Joy", "crying", "gladly"], &happy()).unwrap();
        assert_abs_diff_eq!(f[0], 1.0 / 3.0);
        assert_abs_diff_eq!(f[1], 1.0 / 3.0);
        assert!(matches!(extract_features([], &happy()), Err(BaselineError::NoTokens)));
    }

    #[test]
    fn token_counts_toward_several_categories() {
        let lex = Lexicon::parse("a: fun*\nb: funny\n").unwrap();
        assert_eq!(extract_features(["funny", "x"], &lex).unwrap(), vec![0.5, 0.5]);
    }

    #[test]
    fn lexicon_errors() {
        let msg = |t: &str| Lexicon::parse(t).unwrap_err().to_string();
        assert_eq!(msg("a: x\na: y"), "lexicon line 2: duplicate category `a`");
        assert_eq!(msg("a:"), "lexicon line 1: category `a` has no patterns");
        assert_eq!(msg("a x"), "lexicon line 1: expected `category: patterns...`");
        assert_eq!(msg("a: *"), "lexicon line 1: bad pattern `*`");
        assert_eq!(msg("a: x*y"), "lexicon line 1: bad pattern `x*y`");
        assert_eq!(msg("# only comments\n"), "lexicon has no categories");
    }

    #[test]
    fn sample_lexicon_golden() {
        // Counted by an independent script over the same tokens.
        let lex = Lexicon::parse(
            "posemo: good great love* happ*\nnegemo: bad hate* sad\nsocial: we you they friend*\ncogmech: think* know* because\n",
        )
        .unwrap();
        let text = "we think the world is good because we love our friends and we know they are happy \
                    but some hate what they know and feel sad";
        let f = extract_features(text.split_whitespace(), &lex).unwrap();
        let expected = [3.0 / 26.0, 2.0 / 26.0, 6.0 / 26.0, 4.0 / 26.0];
        for (a, e) in f.iter().zip(expected) {
            assert_abs_diff_eq!(*a, e, epsilon = 1e-15);
        }
    }

    #[test]
    fn tie_convention_and_sign_conventions() {
        assert_eq!(predict_linear(LinearKind::Svm, &[0.0], 0.0, &[3.0]), 1);
        assert_eq!(predict_linear(LinearKind::Lasso, &[0.0], 0.0, &[3.0]), 1);
        assert_eq!(predict_linear(LinearKind::Svm, &[1.0], 2.0, &[1.0]), 0);
        assert_eq!(predict_linear(LinearKind::Lasso, &[1.0], 2.0, &[1.0]), 1);
    }

    fn pair() -> (Vec<Vec<f64>>, Vec<f64>) {
        (vec![vec![1.0], vec![-1.0]], vec![1.0, -1.0])
    }

    #[test]
    fn separable_pair() {
        let (x, y) = pair();
        let svm = train_svm(&x, &y, 100.0, SolverOptions::default()).unwrap();
        assert_eq!(accuracy(&svm, &x, &y), 1.0);
        // Optimum is w = 1, b = 0 with zero hinge; objective 0.5.
        assert_abs_diff_eq!(svm_objective(&x, &y, 100.0, &svm.w, svm.b), 0.5, epsilon = 5e-3);
        // At C = 1 the gradient at w = 0 equals the ℓ1 threshold, so w = 0 is optimal.
        let lasso = train_lasso(&x, &y, 5.0, SolverOptions::default()).unwrap();
        assert!(lasso.w[0] > 0.0);
        assert_eq!(accuracy(&lasso, &x, &y), 1.0);
    }

    #[test]
    fn degenerate_c() {
        let (x, y) = pair();
        assert_eq!(train_svm(&x, &y, 0.0, SolverOptions::default()).unwrap().w, vec![0.0]);
        assert_eq!(train_lasso(&x, &y, 0.0, SolverOptions::default()).unwrap().w, vec![0.0]);
        assert_eq!(train_lasso(&x, &y, 1e-3, SolverOptions::default()).unwrap().w, vec![0.0]);
    }

    #[test]
    fn input_errors() {
        let o = SolverOptions::default();
        assert!(matches!(train_svm(&[vec![1.0], vec![2.0]], &[1.0, 1.0], 1.0, o), Err(BaselineError::SingleClass)));
        assert!(matches!(train_lasso(&[vec![1.0]], &[1.0], 1.0, o), Err(BaselineError::TooFew(1))));
        assert!(matches!(train_svm(&[vec![1.0], vec![2.0]], &[1.0, 0.0], 1.0, o), Err(BaselineError::BadLabel(_))));
        assert!(matches!(train_svm(&[vec![1.0], vec![2.0]], &[1.0], 1.0, o), Err(BaselineError::LengthMismatch { .. })));
        assert!(matches!(train_svm(&[vec![1.0], vec![2.0]], &[1.0, -1.0], -1.0, o), Err(BaselineError::BadC(_))));
    }

    #[test]
    fn random_model_matches_independent_sign() {
        // w = [0.3, -1.2], b = 0.5, x = [2, 0.4]: w·x = 0.12.
        assert_eq!(predict_linear(LinearKind::Svm, &[0.3, -1.2], 0.5, &[2.0, 0.4]), 0);
        assert_eq!(predict_linear(LinearKind::Lasso, &[0.3, -1.2], 0.5, &[2.0, 0.4]), 1);
    }

    #[test]
    fn container_round_trip() {
        let model = BaselineModel {
            kind: LinearKind::Lasso,
            standardizer: Standardizer { mean: vec![0.1, 0.2], scale: vec![1.0, 0.5] },
            models: (0..NUM_CATEGORIES)
                .map(|k| LinearModel { kind: LinearKind::Lasso, w: vec![k as f64, -0.5], b: 0.25 })
                .collect(),
            c: vec![1.0; NUM_CATEGORIES],
        };
        let back = BaselineModel::from_container(&Container::parse(&model.to_container().to_text().unwrap()).unwrap()).unwrap();
        assert_eq!(back, model);
    }

    proptest! {
        #[test]
        fn features_in_unit_interval_and_ratio_invariant(words in prop::collection::vec("(glad|joyous|cry|sad|x|y)", 1..40)) {
            let lex = happy();
            let f = extract_features(words.iter().map(String::as_str), &lex).unwrap();
            prop_assert!(f.iter().all(|v| (0.0..=1.0).contains(v)));
            let doubled: Vec<&str> = words.iter().chain(&words).map(String::as_str).collect();
            prop_assert_eq!(extract_features(doubled, &lex).unwrap(), f);
        }

        #[test]
        fn best_iterate_objective_non_increasing(seed in 0u64..50) {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let x: Vec<Vec<f64>> = (0..12).map(|_| vec![rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0)]).collect();
            let mut y: Vec<f64> = x.iter().map(|r| if r[0] + 0.3 * r[1] > 0.0 { 1.0 } else { -1.0 }).collect();
            y[0] = 1.0;
            y[1] = -1.0;
            let mut last_svm = f64::INFINITY;
            let mut last_lasso = f64::INFINITY;
            for iters in [1, 10, 100, 500] {
                let o = SolverOptions { max_iter: iters };
                let s = train_svm(&x, &y, 1.0, o).unwrap();
                let l = train_lasso(&x, &y, 1.0, o).unwrap();
                let so = svm_objective(&x, &y, 1.0, &s.w, s.b);
                let lo = lasso_objective(&x, &y, 1.0, &l.w, l.b);
                prop_assert!(so <= last_svm);
                prop_assert!(lo <= last_lasso);
                last_svm = so;
                last_lasso = lo;
            }
        }
    }
}
