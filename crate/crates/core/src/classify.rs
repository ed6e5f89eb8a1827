//! Gaussian discriminant analysis: LDA (pooled covariance) and QDA
//! (per-class covariances), with leave-one-out cross-validation.

use std::fmt;
use std::io::Write;
use std::path::Path;
use std::str::FromStr;

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::write_atomic;
use crate::mvstats::GroupedFeatures;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DiscriminantKind {
    Linear,
    Quadratic,
}

impl fmt::Display for DiscriminantKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            DiscriminantKind::Linear => "lda",
            DiscriminantKind::Quadratic => "qda",
        })
    }
}

impl FromStr for DiscriminantKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "lda" | "linear" => Ok(DiscriminantKind::Linear),
            "qda" | "quadratic" => Ok(DiscriminantKind::Quadratic),
            other => Err(Error::invalid(format!("unknown discriminant kind `{other}`"))),
        }
    }
}

/// How class priors are set when fitting.
#[derive(Debug, Clone, PartialEq, Default)]
pub enum PriorPolicy {
    /// Class proportions of the training data.
    #[default]
    SampleProportions,
    Equal,
    /// Explicit priors in class order; normalized to sum to one.
    Fixed(Vec<f64>),
}

#[derive(Debug, Clone)]
struct ClassDensity {
    mean: DVector<f64>,
    chol: Cholesky<f64, Dyn>,
    ln_det: f64,
}

#[derive(Debug, Clone)]
pub struct DiscriminantModel {
    kind: DiscriminantKind,
    classes: Vec<String>,
    priors: Vec<f64>,
    means: Vec<DVector<f64>>,
    /// One matrix for LDA, one per class for QDA.
    covariances: Vec<DMatrix<f64>>,
    densities: Vec<ClassDensity>,
}

/// Class posteriors for one observation.
#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub label: String,
    pub class_index: usize,
    /// Aligned with [`DiscriminantModel::classes`].
    pub posteriors: Vec<f64>,
}

fn factor(cov: &DMatrix<f64>, group: &str) -> Result<Cholesky<f64, Dyn>> {
    let singular = || Error::SingularCovariance {
        group: group.to_string(),
    };
    let chol = Cholesky::new(cov.clone()).ok_or_else(singular)?;
    let diag = chol.l_dirty().diagonal();
    if !(diag.min() > diag.max() * 1e-10) {
        return Err(singular());
    }
    Ok(chol)
}

impl DiscriminantModel {
    /// Builds a model from explicit parameters (class order as given).
    pub fn from_parts(
        kind: DiscriminantKind,
        classes: Vec<String>,
        priors: Vec<f64>,
        means: Vec<DVector<f64>>,
        covariances: Vec<DMatrix<f64>>,
    ) -> Result<Self> {
        let g = classes.len();
        if g < 2 || priors.len() != g || means.len() != g {
            return Err(Error::invalid("classes, priors and means must agree and number at least two"));
        }
        let expected_covs = match kind {
            DiscriminantKind::Linear => 1,
            DiscriminantKind::Quadratic => g,
        };
        if covariances.len() != expected_covs {
            return Err(Error::DimensionMismatch {
                expected: expected_covs,
                got: covariances.len(),
            });
        }
        let total: f64 = priors.iter().sum();
        if priors.iter().any(|&p| !(p > 0.0)) || !((total - 1.0).abs() < 1e-9) {
            return Err(Error::invalid("priors must be positive and sum to one"));
        }
        let p = means[0].len();
        if means.iter().any(|m| m.len() != p)
            || covariances.iter().any(|c| c.nrows() != p || c.ncols() != p)
        {
            return Err(Error::invalid("inconsistent parameter dimensions"));
        }
        let factors: Vec<Cholesky<f64, Dyn>> = covariances
            .iter()
            .enumerate()
            .map(|(k, c)| {
                let name = match kind {
                    DiscriminantKind::Linear => "pooled",
                    DiscriminantKind::Quadratic => classes[k].as_str(),
                };
                factor(c, name)
            })
            .collect::<Result<_>>()?;
        let densities = means
            .iter()
            .enumerate()
            .map(|(k, m)| {
                let chol = factors[if factors.len() == 1 { 0 } else { k }].clone();
                let ln_det = 2.0 * chol.l_dirty().diagonal().iter().map(|d| d.ln()).sum::<f64>();
                ClassDensity {
                    mean: m.clone(),
                    chol,
                    ln_det,
                }
            })
            .collect();
        Ok(DiscriminantModel {
            kind,
            classes,
            priors,
            means,
            covariances,
            densities,
        })
    }

    pub fn kind(&self) -> DiscriminantKind {
        self.kind
    }

    pub fn classes(&self) -> &[String] {
        &self.classes
    }

    pub fn priors(&self) -> &[f64] {
        &self.priors
    }

    pub fn means(&self) -> &[DVector<f64>] {
        &self.means
    }

    pub fn covariances(&self) -> &[DMatrix<f64>] {
        &self.covariances
    }

    pub fn dim(&self) -> usize {
        self.means[0].len()
    }

    /// `ln pi_k + ln N(x; m_k, S_k)` up to a constant shared by all classes.
    pub fn log_scores(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                got: x.len(),
            });
        }
        let x = DVector::from_column_slice(x);
        Ok(self
            .densities
            .iter()
            .zip(&self.priors)
            .map(|(d, prior)| {
                let diff = &x - &d.mean;
                let maha = diff.dot(&d.chol.solve(&diff));
                prior.ln() - 0.5 * d.ln_det - 0.5 * maha
            })
            .collect())
    }

    /// For LDA, the affine discriminants `delta_k(x) = w_k . x + c_k`.
    pub fn linear_discriminants(&self) -> Option<Vec<(DVector<f64>, f64)>> {
        if self.kind != DiscriminantKind::Linear {
            return None;
        }
        Some(
            self.densities
                .iter()
                .zip(&self.priors)
                .map(|(d, prior)| {
                    let w = d.chol.solve(&d.mean);
                    let c = prior.ln() - 0.5 * d.mean.dot(&w);
                    (w, c)
                })
                .collect(),
        )
    }

    pub fn to_record(&self) -> ModelRecord {
        let mat = |m: &DMatrix<f64>| -> Vec<Vec<f64>> {
            (0..m.nrows()).map(|i| m.row(i).iter().copied().collect()).collect()
        };
        ModelRecord {
            version: MODEL_VERSION,
            kind: self.kind,
            classes: self.classes.clone(),
            priors: self.priors.clone(),
            means: self.means.iter().map(|m| m.iter().copied().collect()).collect(),
            covariances: self.covariances.iter().map(mat).collect(),
        }
    }

    pub fn from_record(rec: ModelRecord) -> Result<Self> {
        if rec.version != MODEL_VERSION {
            return Err(Error::invalid(format!("unsupported model version {}", rec.version)));
        }
        let covariances = rec
            .covariances
            .iter()
            .map(|rows| {
                let p = rows.len();
                if rows.iter().any(|r| r.len() != p) {
                    return Err(Error::invalid("covariance is not square"));
                }
                Ok(DMatrix::from_fn(p, p, |i, j| rows[i][j]))
            })
            .collect::<Result<Vec<_>>>()?;
        let means = rec.means.iter().map(|m| DVector::from_column_slice(m)).collect();
        Self::from_parts(rec.kind, rec.classes, rec.priors, means, covariances)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(&self.to_record())?;
        write_atomic(path, |w| w.write_all(text.as_bytes()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let rec: ModelRecord = serde_json::from_str(&std::fs::read_to_string(path)?)?;
        Self::from_record(rec)
    }
}

pub const MODEL_VERSION: u32 = 1;

/// Serialized form of a [`DiscriminantModel`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelRecord {
    pub version: u32,
    pub kind: DiscriminantKind,
    pub classes: Vec<String>,
    pub priors: Vec<f64>,
    pub means: Vec<Vec<f64>>,
    pub covariances: Vec<Vec<Vec<f64>>>,
}

fn resolve_priors(data: &GroupedFeatures, policy: &PriorPolicy) -> Result<Vec<f64>> {
    let g = data.g();
    match policy {
        PriorPolicy::SampleProportions => {
            let n = data.n() as f64;
            Ok(data.group_sizes().iter().map(|&k| k as f64 / n).collect())
        }
        PriorPolicy::Equal => Ok(vec![1.0 / g as f64; g]),
        PriorPolicy::Fixed(p) => {
            if p.len() != g {
                return Err(Error::DimensionMismatch {
                    expected: g,
                    got: p.len(),
                });
            }
            let total: f64 = p.iter().sum();
            if p.iter().any(|&v| !(v > 0.0)) || !total.is_finite() {
                return Err(Error::invalid("priors must be positive"));
            }
            Ok(p.iter().map(|v| v / total).collect())
        }
    }
}

/// Fits LDA or QDA. Class order is the lexicographic group order of `data`.
pub fn fit(data: &GroupedFeatures, kind: DiscriminantKind, priors: &PriorPolicy) -> Result<DiscriminantModel> {
    fit_with_ridge(data, kind, priors, 0.0)
}

/// As [`fit`], adding `ridge * I` to every covariance estimate. Exploratory
/// use only; the reproduction pipeline always fits with `ridge = 0`.
pub fn fit_with_ridge(
    data: &GroupedFeatures,
    kind: DiscriminantKind,
    priors: &PriorPolicy,
    ridge: f64,
) -> Result<DiscriminantModel> {
    if !(ridge >= 0.0) {
        return Err(Error::invalid("ridge must be >= 0"));
    }
    let (n, p, g) = (data.n(), data.p(), data.g());
    let mut covariances = match kind {
        DiscriminantKind::Linear => {
            if n < g + p {
                return Err(Error::InsufficientData(format!(
                    "LDA needs n >= g + p, got n = {n}, g = {g}, p = {p}"
                )));
            }
            vec![data.pooled_covariance()]
        }
        DiscriminantKind::Quadratic => {
            if let Some(k) = data.group_sizes().iter().position(|&nk| nk < p + 1) {
                return Err(Error::InsufficientData(format!(
                    "QDA needs at least {} cases in group `{}`",
                    p + 1,
                    data.groups()[k]
                )));
            }
            data.group_covariances()
        }
    };
    if ridge > 0.0 {
        for c in &mut covariances {
            for i in 0..p {
                c[(i, i)] += ridge;
            }
        }
    }
    DiscriminantModel::from_parts(
        kind,
        data.groups().to_vec(),
        resolve_priors(data, priors)?,
        data.group_means(),
        covariances,
    )
}

pub fn predict(model: &DiscriminantModel, x: &[f64]) -> Result<Prediction> {
    let scores = model.log_scores(x)?;
    let top = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let weights: Vec<f64> = scores.iter().map(|s| (s - top).exp()).collect();
    let total: f64 = weights.iter().sum();
    let posteriors: Vec<f64> = weights.iter().map(|w| w / total).collect();
    // first maximum wins, so ties go to the lexicographically smaller class
    let mut best = 0;
    for (k, s) in scores.iter().enumerate() {
        if *s > scores[best] {
            best = k;
        }
    }
    Ok(Prediction {
        label: model.classes[best].clone(),
        class_index: best,
        posteriors,
    })
}

/// Resubstitution error of `model` on `data`.
pub fn training_error(data: &GroupedFeatures, model: &DiscriminantModel) -> Result<f64> {
    let mut wrong = 0usize;
    for i in 0..data.n() {
        let row: Vec<f64> = data.row(i).iter().copied().collect();
        if predict(model, &row)?.label != data.label(i) {
            wrong += 1;
        }
    }
    Ok(wrong as f64 / data.n() as f64)
}

#[derive(Debug, Clone)]
pub struct LoocvResult {
    pub error_rate: f64,
    /// Prediction for case `i` from the model fit without it.
    pub predictions: Vec<Prediction>,
}

/// Leave-one-out cross-validation. Priors follow `priors` on each reduced
/// training set.
pub fn loocv(data: &GroupedFeatures, kind: DiscriminantKind, priors: &PriorPolicy) -> Result<LoocvResult> {
    let predictions = (0..data.n())
        .into_par_iter()
        .map(|i| {
            let fold = || -> Result<Prediction> {
                let model = fit(&data.without(i)?, kind, priors)?;
                if model.classes() != data.groups() {
                    return Err(Error::InsufficientData("a class vanished from the fold".into()));
                }
                let row: Vec<f64> = data.row(i).iter().copied().collect();
                predict(&model, &row)
            };
            fold().map_err(|e| Error::LoocvFold {
                case: i,
                source: Box::new(e),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let wrong = predictions
        .iter()
        .enumerate()
        .filter(|(i, p)| p.label != data.label(*i))
        .count();
    Ok(LoocvResult {
        error_rate: wrong as f64 / data.n() as f64,
        predictions,
    })
}

/// Writes `pattern_id,predicted,true,posterior_<class>...`.
pub fn write_predictions_csv(
    path: &Path,
    classes: &[String],
    ids: &[String],
    truth: &[Option<String>],
    predictions: &[Prediction],
) -> Result<()> {
    write_atomic(path, |w| {
        write!(w, "pattern_id,predicted,true")?;
        for c in classes {
            write!(w, ",posterior_{c}")?;
        }
        writeln!(w)?;
        for ((id, t), p) in ids.iter().zip(truth).zip(predictions) {
            write!(w, "{id},{},{}", p.label, t.as_deref().unwrap_or(""))?;
            for v in &p.posteriors {
                write!(w, ",{v}")?;
            }
            writeln!(w)?;
        }
        Ok(())
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn labels(spec: &[(&str, usize)]) -> Vec<String> {
        spec.iter()
            .flat_map(|(l, n)| std::iter::repeat_n(l.to_string(), *n))
            .collect()
    }

    fn gaussian_groups(seed: u64, n: usize, shift: f64, scale_b: f64) -> GroupedFeatures {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut rows = Vec::new();
        for k in 0..2 {
            for _ in 0..n {
                let z0: f64 = rng.sample(StandardNormal);
                let z1: f64 = rng.sample(StandardNormal);
                rows.push(if k == 0 {
                    vec![z0, z1]
                } else {
                    vec![shift + scale_b * z0, scale_b * z1]
                });
            }
        }
        GroupedFeatures::new(&rows, &labels(&[("a", n), ("b", n)])).unwrap()
    }

    #[test]
    fn default_priors_are_proportions() {
        let rows = vec![vec![0.0], vec![1.0], vec![0.5], vec![-0.0], vec![-1.0], vec![-0.5]];
        let d = GroupedFeatures::new(&rows, &labels(&[("a", 3), ("b", 3)])).unwrap();
        let m = fit(&d, DiscriminantKind::Linear, &PriorPolicy::default()).unwrap();
        assert_eq!(m.priors(), &[0.5, 0.5]);
        let fixed = fit(&d, DiscriminantKind::Linear, &PriorPolicy::Fixed(vec![3.0, 1.0])).unwrap();
        assert_eq!(fixed.priors(), &[0.75, 0.25]);
    }

    #[test]
    fn model_means_match_group_means() {
        let d = gaussian_groups(1, 15, 2.0, 1.0);
        let m = fit(&d, DiscriminantKind::Quadratic, &PriorPolicy::default()).unwrap();
        for (a, b) in m.means().iter().zip(d.group_means()) {
            assert!((a - b).amax() < 1e-12);
        }
    }

    #[test]
    fn lda_boundary_at_midpoint() {
        let rows = vec![vec![0.0], vec![1.0], vec![2.0], vec![4.0], vec![5.0], vec![6.0]];
        let d = GroupedFeatures::new(&rows, &labels(&[("a", 3), ("b", 3)])).unwrap();
        let m = fit(&d, DiscriminantKind::Linear, &PriorPolicy::Equal).unwrap();
        let mid = predict(&m, &[3.0]).unwrap();
        assert_relative_eq!(mid.posteriors[0], 0.5, epsilon = 1e-12);
        assert_eq!(mid.label, "a"); // exact tie goes to the first class
        assert_eq!(predict(&m, &[2.99]).unwrap().label, "a");
        assert_eq!(predict(&m, &[3.01]).unwrap().label, "b");
    }

    #[test]
    fn prediction_at_class_mean() {
        let d = gaussian_groups(2, 20, 3.0, 1.0);
        let m = fit(&d, DiscriminantKind::Linear, &PriorPolicy::Equal).unwrap();
        for (k, mean) in m.means().iter().enumerate() {
            let p = predict(&m, mean.as_slice()).unwrap();
            assert_eq!(p.class_index, k);
            assert_relative_eq!(p.posteriors.iter().sum::<f64>(), 1.0, epsilon = 1e-12);
        }
        assert!(matches!(predict(&m, &[1.0]), Err(Error::DimensionMismatch { .. })));
    }

    #[test]
    fn qda_matches_direct_density_comparison() {
        let d = gaussian_groups(3, 25, 0.5, 2.5);
        let m = fit(&d, DiscriminantKind::Quadratic, &PriorPolicy::default()).unwrap();
        // oracle: explicit 2x2 inverse and determinant, full Gaussian density
        let dens = |x: &[f64], mean: &DVector<f64>, s: &DMatrix<f64>| {
            let det = s[(0, 0)] * s[(1, 1)] - s[(0, 1)] * s[(1, 0)];
            let (a, b, c) = (s[(1, 1)] / det, -s[(0, 1)] / det, s[(0, 0)] / det);
            let (u, v) = (x[0] - mean[0], x[1] - mean[1]);
            let q = a * u * u + 2.0 * b * u * v + c * v * v;
            (-0.5 * q).exp() / (2.0 * std::f64::consts::PI * det.sqrt())
        };
        let covs = d.group_covariances();
        let means = d.group_means();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..200 {
            let x = [rng.random::<f64>() * 8.0 - 4.0, rng.random::<f64>() * 8.0 - 4.0];
            let fa = 0.5 * dens(&x, &means[0], &covs[0]);
            let fb = 0.5 * dens(&x, &means[1], &covs[1]);
            let p = predict(&m, &x).unwrap();
            if (fa - fb).abs() > 1e-12 * (fa + fb) {
                assert_eq!(p.class_index, if fa >= fb { 0 } else { 1 });
            }
            assert_relative_eq!(p.posteriors[0], fa / (fa + fb), max_relative = 1e-9, epsilon = 1e-300);
        }
    }

    #[test]
    fn separable_clusters_have_zero_errors() {
        let d = gaussian_groups(5, 20, 50.0, 1.0);
        for kind in [DiscriminantKind::Linear, DiscriminantKind::Quadratic] {
            let m = fit(&d, kind, &PriorPolicy::default()).unwrap();
            assert_eq!(training_error(&d, &m).unwrap(), 0.0);
            assert_eq!(loocv(&d, kind, &PriorPolicy::default()).unwrap().error_rate, 0.0);
        }
    }

    #[test]
    fn toy_confusion_by_hand() {
        // a: 0, 1, 5   b: 3, 6, 7 -> pooled LDA with equal priors splits at 11/3
        let rows: Vec<Vec<f64>> = [0.0, 1.0, 5.0, 3.0, 6.0, 7.0].iter().map(|&v| vec![v]).collect();
        let d = GroupedFeatures::new(&rows, &labels(&[("a", 3), ("b", 3)])).unwrap();
        let m = fit(&d, DiscriminantKind::Linear, &PriorPolicy::default()).unwrap();
        // misclassified by hand: 5 (a, above 3.67) and 3 (b, below 3.67)
        assert_relative_eq!(training_error(&d, &m).unwrap(), 2.0 / 6.0);
    }

    #[test]
    fn singular_covariance_is_an_error() {
        let rows = vec![vec![1.0, 1.0], vec![2.0, 2.0], vec![3.0, 3.0], vec![1.0, 1.0], vec![0.0, 0.0], vec![5.0, 5.0]];
        let d = GroupedFeatures::new(&rows, &labels(&[("a", 3), ("b", 3)])).unwrap();
        assert!(matches!(
            fit(&d, DiscriminantKind::Linear, &PriorPolicy::default()),
            Err(Error::SingularCovariance { .. })
        ));
        assert!(fit_with_ridge(&d, DiscriminantKind::Linear, &PriorPolicy::default(), 1e-3).is_ok());
    }

    #[test]
    fn qda_requires_enough_cases() {
        let d = gaussian_groups(6, 2, 1.0, 1.0);
        assert!(matches!(
            fit(&d, DiscriminantKind::Quadratic, &PriorPolicy::default()),
            Err(Error::InsufficientData(_))
        ));
        let err = loocv(&gaussian_groups(6, 3, 1.0, 1.0), DiscriminantKind::Quadratic, &PriorPolicy::default())
            .unwrap_err();
        assert!(matches!(err, Error::LoocvFold { case: 0, .. }));
    }

    #[test]
    fn lda_score_differences_are_affine() {
        let d = gaussian_groups(7, 30, 1.0, 1.0);
        let m = fit(&d, DiscriminantKind::Linear, &PriorPolicy::default()).unwrap();
        let lin = m.linear_discriminants().unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for _ in 0..50 {
            let x = [rng.random::<f64>() * 4.0 - 2.0, rng.random::<f64>() * 4.0 - 2.0];
            let s = m.log_scores(&x).unwrap();
            let xv = DVector::from_column_slice(&x);
            let delta = (lin[0].0.dot(&xv) + lin[0].1) - (lin[1].0.dot(&xv) + lin[1].1);
            assert_relative_eq!(s[0] - s[1], delta, epsilon = 1e-9);
        }
        assert!(fit(&d, DiscriminantKind::Quadratic, &PriorPolicy::default())
            .unwrap()
            .linear_discriminants()
            .is_none());
    }

    #[test]
    fn model_json_round_trip() {
        let d = gaussian_groups(9, 12, 1.0, 2.0);
        let m = fit(&d, DiscriminantKind::Quadratic, &PriorPolicy::default()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.json");
        m.save(&path).unwrap();
        let back = DiscriminantModel::load(&path).unwrap();
        assert_eq!(back.to_record(), m.to_record());
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.contains("\"version\": 1") && text.contains("\"kind\": \"quadratic\""));
    }

    #[test]
    fn kind_parsing() {
        assert_eq!("LDA".parse::<DiscriminantKind>().unwrap(), DiscriminantKind::Linear);
        assert_eq!("quadratic".parse::<DiscriminantKind>().unwrap(), DiscriminantKind::Quadratic);
        assert!("svm".parse::<DiscriminantKind>().is_err());
    }
}
