//! Potential models with exact gradients, the unbiased minibatch gradient
//! estimator for logistic-regression posteriors, and dataset ingestion with
//! PCA whitening.

use nalgebra::{DMatrix, DVector};
use std::fmt;
use std::fs;
use std::path::Path;

use crate::core::RngStream;

#[derive(Debug, thiserror::Error)]
pub enum PotentialError {
    #[error("double well requires a > 0 and b > 0 (confining), got a={a}, b={b}")]
    NonConfining { a: f64, b: f64 },
    #[error("dimension mismatch: model dimension {expected}, position length {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("position entries must be finite")]
    NonFinite,
}

#[derive(Debug, thiserror::Error)]
pub enum DataError {
    #[error("{path}:{line}: {msg}")]
    Parse { path: String, line: usize, msg: String },
    #[error("{path}:{line}: label must be 0 or 1, got `{value}`")]
    BadLabel { path: String, line: usize, value: String },
    #[error("dataset is empty")]
    Empty,
    #[error("dataset contains non-finite feature values")]
    NonFinite,
    #[error("requested {requested} components but effective rank is {effective}")]
    Rank { requested: usize, effective: usize },
    #[error("feature dimension mismatch: train has {train}, test has {test}")]
    SplitMismatch { train: usize, test: usize },
    #[error("minibatch size must be >= 1, got {0}")]
    BadMinibatch(usize),
    #[error("io error reading {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

/// Which split a dataset belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Test,
}

/// Binary-labelled feature matrix, one row per observation.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub features: DMatrix<f64>,
    pub labels: Vec<u8>,
    pub split: Split,
}

impl Dataset {
    pub fn new(features: DMatrix<f64>, labels: Vec<u8>, split: Split) -> Result<Self, DataError> {
        if features.nrows() == 0 || features.nrows() != labels.len() {
            return Err(DataError::Empty);
        }
        if features.iter().any(|x| !x.is_finite()) {
            return Err(DataError::NonFinite);
        }
        if labels.iter().any(|&y| y > 1) {
            return Err(DataError::BadLabel {
                path: "<memory>".into(),
                line: 0,
                value: "non-binary".into(),
            });
        }
        Ok(Self { features, labels, split })
    }

    pub fn n_rows(&self) -> usize {
        self.features.nrows()
    }

    pub fn dim(&self) -> usize {
        self.features.ncols()
    }
}

/// A potential energy `U` with an exact analytic gradient.
#[derive(Clone)]
pub enum PotentialModel {
    /// `U(q) = |q|^2 / 2` in dimension `n`.
    Harmonic { n: usize },
    /// `U(q) = (b/a) (q^2 - a)^2 + c q`, one-dimensional, confining for a,b > 0.
    DoubleWell { a: f64, b: f64, c: f64 },
    /// Negative log posterior of logistic regression with Gaussian prior.
    BlrPosterior { dataset: Dataset, prior_sigma2: f64 },
}

impl fmt::Debug for PotentialModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PotentialModel::Harmonic { n } => write!(f, "Harmonic(n={n})"),
            PotentialModel::DoubleWell { a, b, c } => write!(f, "DoubleWell(a={a},b={b},c={c})"),
            PotentialModel::BlrPosterior { dataset, prior_sigma2 } => write!(
                f,
                "BlrPosterior(rows={}, d={}, prior_sigma2={prior_sigma2})",
                dataset.n_rows(),
                dataset.dim()
            ),
        }
    }
}

impl PotentialModel {
    pub fn harmonic(n: usize) -> Self {
        PotentialModel::Harmonic { n }
    }

    pub fn double_well(a: f64, b: f64, c: f64) -> Result<Self, PotentialError> {
        if !(a > 0.0) || !(b > 0.0) {
            return Err(PotentialError::NonConfining { a, b });
        }
        Ok(PotentialModel::DoubleWell { a, b, c })
    }

    pub fn blr(dataset: Dataset, prior_sigma2: f64) -> Self {
        PotentialModel::BlrPosterior { dataset, prior_sigma2 }
    }

    pub fn dim(&self) -> usize {
        match self {
            PotentialModel::Harmonic { n } => *n,
            PotentialModel::DoubleWell { .. } => 1,
            PotentialModel::BlrPosterior { dataset, .. } => dataset.dim(),
        }
    }

    fn check_input(&self, q: &[f64]) -> Result<(), PotentialError> {
        if q.len() != self.dim() {
            return Err(PotentialError::DimensionMismatch {
                expected: self.dim(),
                got: q.len(),
            });
        }
        if q.iter().any(|x| !x.is_finite()) {
            return Err(PotentialError::NonFinite);
        }
        Ok(())
    }

    /// Energy and exact gradient at `q`.
    pub fn evaluate(&self, q: &[f64]) -> Result<(f64, Vec<f64>), PotentialError> {
        self.check_input(q)?;
        Ok(match self {
            PotentialModel::Harmonic { .. } => {
                let u = 0.5 * q.iter().map(|x| x * x).sum::<f64>();
                (u, q.to_vec())
            }
            PotentialModel::DoubleWell { a, b, c } => {
                let x = q[0];
                let u = (b / a) * (x * x - a).powi(2) + c * x;
                let g = (4.0 * b / a) * x * (x * x - a) + c;
                (u, vec![g])
            }
            PotentialModel::BlrPosterior { dataset, prior_sigma2 } => {
                let (u, g) = blr_energy_gradient(dataset, *prior_sigma2, q);
                (u, g)
            }
        })
    }

    /// Gradient only.
    pub fn gradient(&self, q: &[f64]) -> Result<Vec<f64>, PotentialError> {
        Ok(self.evaluate(q)?.1)
    }
}

/// Gradient value together with the minibatch indices that produced it
/// (empty for the exact gradient).
#[derive(Debug, Clone, PartialEq)]
pub struct GradientEstimate {
    pub value: Vec<f64>,
    pub minibatch_indices: Vec<usize>,
}

/// Numerically stable logistic function `1 / (1 + exp(-t))`.
pub fn sigmoid(t: f64) -> f64 {
    if t >= 0.0 {
        1.0 / (1.0 + (-t).exp())
    } else {
        let e = t.exp();
        e / (1.0 + e)
    }
}

/// Stable `log(1 + exp(t))`.
fn log1p_exp(t: f64) -> f64 {
    if t > 0.0 {
        t + (-t).exp().ln_1p()
    } else {
        t.exp().ln_1p()
    }
}

fn blr_energy_gradient(dataset: &Dataset, prior_sigma2: f64, q: &[f64]) -> (f64, Vec<f64>) {
    let d = dataset.dim();
    let mut u = q.iter().map(|x| x * x).sum::<f64>() / (2.0 * prior_sigma2);
    let mut grad: Vec<f64> = q.iter().map(|x| x / prior_sigma2).collect();
    for j in 0..dataset.n_rows() {
        let row = dataset.features.row(j);
        let t: f64 = (0..d).map(|i| row[i] * q[i]).sum();
        let y = dataset.labels[j] as f64;
        u += log1p_exp(t) - y * t;
        let r = sigmoid(t) - y;
        for i in 0..d {
            grad[i] += r * row[i];
        }
    }
    (u, grad)
}

/// Exact (full-data) gradient of the negative log posterior:
/// `q / sigma^2 + sum_j (sigmoid(x_j . q) - y_j) x_j`.
pub fn blr_full_gradient(dataset: &Dataset, prior_sigma2: f64, q: &[f64]) -> GradientEstimate {
    let (_, value) = blr_energy_gradient(dataset, prior_sigma2, q);
    GradientEstimate { value, minibatch_indices: Vec::new() }
}

/// Minibatch gradient for a given index multiset: the data-term sum over the
/// indices is rescaled by `n_rows / indices.len()`.
pub fn blr_minibatch_gradient_with_indices(
    dataset: &Dataset,
    prior_sigma2: f64,
    q: &[f64],
    indices: &[usize],
) -> GradientEstimate {
    let d = dataset.dim();
    let scale = dataset.n_rows() as f64 / indices.len() as f64;
    let mut value: Vec<f64> = q.iter().map(|x| x / prior_sigma2).collect();
    for &j in indices {
        let row = dataset.features.row(j);
        let t: f64 = (0..d).map(|i| row[i] * q[i]).sum();
        let r = sigmoid(t) - dataset.labels[j] as f64;
        for i in 0..d {
            value[i] += scale * r * row[i];
        }
    }
    GradientEstimate { value, minibatch_indices: indices.to_vec() }
}

/// Unbiased minibatch gradient: `m` indices sampled uniformly with
/// replacement, data term rescaled by `n_rows / m`.
pub fn blr_minibatch_gradient(
    dataset: &Dataset,
    prior_sigma2: f64,
    q: &[f64],
    m: usize,
    rng: &mut RngStream,
) -> Result<GradientEstimate, DataError> {
    if m == 0 {
        return Err(DataError::BadMinibatch(m));
    }
    let indices: Vec<usize> = (0..m).map(|_| rng.uniform_index(dataset.n_rows())).collect();
    Ok(blr_minibatch_gradient_with_indices(dataset, prior_sigma2, q, &indices))
}

/// Average likelihood of a labelled set under parameters `q`:
/// `(1/N) sum_j p(y_j, x_j | q)` with the logistic likelihood.
pub fn average_likelihood(dataset: &Dataset, q: &[f64]) -> f64 {
    let d = dataset.dim();
    let mut acc = 0.0;
    for j in 0..dataset.n_rows() {
        let row = dataset.features.row(j);
        let t: f64 = (0..d).map(|i| row[i] * q[i]).sum();
        let sign = if dataset.labels[j] == 1 { 1.0 } else { -1.0 };
        acc += sigmoid(sign * t);
    }
    acc / dataset.n_rows() as f64
}

/// Parse a dataset from CSV: comma-separated reals, final column an integer
/// label in {0, 1}, optional single header line. No quoting.
pub fn load_dataset(path: &Path, header: bool, split: Split) -> Result<Dataset, DataError> {
    let text = fs::read_to_string(path).map_err(|source| DataError::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse_dataset(&text, header, split, &path.display().to_string())
}

pub fn parse_dataset(
    text: &str,
    header: bool,
    split: Split,
    path: &str,
) -> Result<Dataset, DataError> {
    let mut rows: Vec<Vec<f64>> = Vec::new();
    let mut labels: Vec<u8> = Vec::new();
    let mut width = None;
    for (i, line) in text.lines().enumerate() {
        let line_no = i + 1;
        if i == 0 && header {
            continue;
        }
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() < 2 {
            return Err(DataError::Parse {
                path: path.into(),
                line: line_no,
                msg: format!("expected at least 2 comma-separated fields, got {}", fields.len()),
            });
        }
        let d = fields.len() - 1;
        match width {
            None => width = Some(d),
            Some(w) if w != d => {
                return Err(DataError::Parse {
                    path: path.into(),
                    line: line_no,
                    msg: format!("row has {d} feature columns, expected {w}"),
                })
            }
            _ => {}
        }
        let mut row = Vec::with_capacity(d);
        for f in &fields[..d] {
            let v: f64 = f.trim().parse().map_err(|_| DataError::Parse {
                path: path.into(),
                line: line_no,
                msg: format!("cannot parse `{}` as a real number", f.trim()),
            })?;
            if !v.is_finite() {
                return Err(DataError::NonFinite);
            }
            row.push(v);
        }
        let label_str = fields[d].trim();
        let label = match label_str {
            "0" => 0u8,
            "1" => 1u8,
            _ => {
                return Err(DataError::BadLabel {
                    path: path.into(),
                    line: line_no,
                    value: label_str.into(),
                })
            }
        };
        rows.push(row);
        labels.push(label);
    }
    if rows.is_empty() {
        return Err(DataError::Empty);
    }
    let d = rows[0].len();
    let features = DMatrix::from_fn(rows.len(), d, |r, c| rows[r][c]);
    Dataset::new(features, labels, split)
}

/// Center (train statistics), project onto the top-`k` principal components
/// of the train covariance, and scale each retained component to unit train
/// variance. The test split is transformed with train statistics only.
pub fn pca_whiten(
    train: &Dataset,
    test: &Dataset,
    k: usize,
) -> Result<(Dataset, Dataset), DataError> {
    let d = train.dim();
    if test.dim() != d {
        return Err(DataError::SplitMismatch { train: d, test: test.dim() });
    }
    let n = train.n_rows();
    let mean: DVector<f64> = DVector::from_fn(d, |i, _| train.features.column(i).sum() / n as f64);
    let mut centered = train.features.clone();
    for mut row in centered.row_iter_mut() {
        for i in 0..d {
            row[i] -= mean[i];
        }
    }
    let denom = if n > 1 { (n - 1) as f64 } else { 1.0 };
    let cov = centered.transpose() * &centered / denom;
    let eig = nalgebra::SymmetricEigen::new(cov);
    // sort eigenpairs by decreasing eigenvalue
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[j].partial_cmp(&eig.eigenvalues[i]).unwrap());
    let lambda_max = eig.eigenvalues[order[0]].max(0.0);
    let tol = lambda_max * 1e-10;
    let effective = order.iter().filter(|&&i| eig.eigenvalues[i] > tol).count();
    if k > effective {
        return Err(DataError::Rank { requested: k, effective });
    }
    let mut components = DMatrix::<f64>::zeros(d, k);
    for (out_col, &i) in order[..k].iter().enumerate() {
        let mut v = eig.eigenvectors.column(i).clone_owned();
        // sign convention: largest-magnitude loading entry positive
        let apex = v.iter().cloned().fold(0.0f64, |acc, x| if x.abs() > acc.abs() { x } else { acc });
        if apex < 0.0 {
            v.neg_mut();
        }
        let scale = 1.0 / eig.eigenvalues[i].sqrt();
        components.set_column(out_col, &(v * scale));
    }
    let transform = |ds: &Dataset| -> Dataset {
        let mut c = ds.features.clone();
        for mut row in c.row_iter_mut() {
            for i in 0..d {
                row[i] -= mean[i];
            }
        }
        Dataset {
            features: c * &components,
            labels: ds.labels.clone(),
            split: ds.split,
        }
    };
    Ok((transform(train), transform(test)))
}

/// Synthetic logistic-regression data with known ground-truth parameters:
/// features are standard normal, labels Bernoulli with success probability
/// `sigmoid(x . q_star)`.
pub fn synthetic_logistic(
    n_rows: usize,
    q_star: &[f64],
    rng: &mut RngStream,
    split: Split,
) -> Dataset {
    let d = q_star.len();
    let mut features = DMatrix::<f64>::zeros(n_rows, d);
    let mut labels = Vec::with_capacity(n_rows);
    for r in 0..n_rows {
        let mut t = 0.0;
        for c in 0..d {
            let x = rng.standard_normal();
            features[(r, c)] = x;
            t += x * q_star[c];
        }
        labels.push(if rng.uniform() < sigmoid(t) { 1u8 } else { 0u8 });
    }
    Dataset { features, labels, split }
}
