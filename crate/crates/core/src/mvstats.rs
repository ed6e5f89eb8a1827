//! Multivariate tests on grouped feature vectors.
//!
//! - **Box's M**: equality of group covariance matrices, chi-square approximation
//! - **MANOVA**: Pillai trace (headline) and Wilks lambda, approximate F
//! - **ANOVA**: one-way F test on a single coordinate

use std::io::Write;
use std::path::Path;

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF, FisherSnedecor};

use crate::error::{Error, Result};
use crate::io::write_atomic;
use crate::spectral::{FeatureTable, FeatureVector};

/// `n x p` observations with a class tag per row.
///
/// Groups are ordered lexicographically by tag; `group_index()[i]` is the
/// position of row `i`'s tag in [`GroupedFeatures::groups`].
#[derive(Debug, Clone, PartialEq)]
pub struct GroupedFeatures {
    data: DMatrix<f64>,
    membership: Vec<usize>,
    groups: Vec<String>,
    sizes: Vec<usize>,
}

impl GroupedFeatures {
    pub fn new(rows: &[Vec<f64>], labels: &[String]) -> Result<Self> {
        if rows.len() != labels.len() {
            return Err(Error::DimensionMismatch {
                expected: rows.len(),
                got: labels.len(),
            });
        }
        let p = rows.first().map_or(0, Vec::len);
        if p == 0 {
            return Err(Error::InsufficientData("no features".into()));
        }
        if let Some(bad) = rows.iter().find(|r| r.len() != p) {
            return Err(Error::DimensionMismatch {
                expected: p,
                got: bad.len(),
            });
        }
        if rows.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::invalid("non-finite feature value"));
        }
        let mut groups: Vec<String> = labels.to_vec();
        groups.sort();
        groups.dedup();
        if groups.len() < 2 {
            return Err(Error::InsufficientData("need at least two groups".into()));
        }
        let membership: Vec<usize> = labels
            .iter()
            .map(|l| groups.binary_search(l).expect("label collected above"))
            .collect();
        let mut sizes = vec![0; groups.len()];
        for &k in &membership {
            sizes[k] += 1;
        }
        if let Some(k) = sizes.iter().position(|&s| s < 2) {
            return Err(Error::InsufficientData(format!(
                "group `{}` has fewer than two observations",
                groups[k]
            )));
        }
        let data = DMatrix::from_fn(rows.len(), p, |i, j| rows[i][j]);
        Ok(GroupedFeatures {
            data,
            membership,
            groups,
            sizes,
        })
    }

    /// Every feature vector must carry a label.
    pub fn from_features(features: &[FeatureVector]) -> Result<Self> {
        let labels = features
            .iter()
            .enumerate()
            .map(|(i, f)| {
                f.label
                    .clone()
                    .ok_or_else(|| Error::invalid(format!("feature vector #{i} has no label")))
            })
            .collect::<Result<Vec<_>>>()?;
        let rows: Vec<Vec<f64>> = features.iter().map(|f| f.mu.clone()).collect();
        Self::new(&rows, &labels)
    }

    pub fn from_table(table: &FeatureTable) -> Result<Self> {
        let labels = table
            .labels
            .iter()
            .zip(&table.ids)
            .map(|(l, id)| {
                l.clone()
                    .ok_or_else(|| Error::invalid(format!("pattern `{id}` has no label")))
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(&table.rows, &labels)
    }

    pub fn n(&self) -> usize {
        self.data.nrows()
    }

    pub fn p(&self) -> usize {
        self.data.ncols()
    }

    pub fn g(&self) -> usize {
        self.groups.len()
    }

    pub fn groups(&self) -> &[String] {
        &self.groups
    }

    pub fn group_sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn group_index(&self) -> &[usize] {
        &self.membership
    }

    pub fn data(&self) -> &DMatrix<f64> {
        &self.data
    }

    pub fn row(&self, i: usize) -> DVector<f64> {
        self.data.row(i).transpose()
    }

    pub fn label(&self, i: usize) -> &str {
        &self.groups[self.membership[i]]
    }

    /// Copy without row `i`, used by leave-one-out.
    pub fn without(&self, i: usize) -> Result<Self> {
        let rows: Vec<Vec<f64>> = (0..self.n())
            .filter(|&j| j != i)
            .map(|j| self.data.row(j).iter().copied().collect())
            .collect();
        let labels: Vec<String> = (0..self.n())
            .filter(|&j| j != i)
            .map(|j| self.label(j).to_string())
            .collect();
        Self::new(&rows, &labels)
    }

    pub fn grand_mean(&self) -> DVector<f64> {
        self.data.row_mean().transpose()
    }

    pub fn group_means(&self) -> Vec<DVector<f64>> {
        let mut sums = vec![DVector::<f64>::zeros(self.p()); self.g()];
        for (i, &k) in self.membership.iter().enumerate() {
            sums[k] += self.data.row(i).transpose();
        }
        sums.iter_mut()
            .zip(&self.sizes)
            .for_each(|(s, &n)| *s /= n as f64);
        sums
    }

    /// Per-group sums of squares and cross products about the group mean.
    pub fn group_sscp(&self) -> Vec<DMatrix<f64>> {
        let means = self.group_means();
        let mut out = vec![DMatrix::<f64>::zeros(self.p(), self.p()); self.g()];
        for (i, &k) in self.membership.iter().enumerate() {
            let d = self.data.row(i).transpose() - &means[k];
            out[k].ger(1.0, &d, &d, 1.0);
        }
        out
    }

    /// Unbiased (`n_k - 1` denominator) covariance of each group.
    pub fn group_covariances(&self) -> Vec<DMatrix<f64>> {
        self.group_sscp()
            .into_iter()
            .zip(&self.sizes)
            .map(|(s, &n)| s / (n as f64 - 1.0))
            .collect()
    }

    /// Within-group SSCP `W`.
    pub fn within(&self) -> DMatrix<f64> {
        self.group_sscp()
            .into_iter()
            .fold(DMatrix::zeros(self.p(), self.p()), |acc, s| acc + s)
    }

    /// Between-group SSCP `B = sum_k n_k (m_k - m)(m_k - m)^T`.
    pub fn between(&self) -> DMatrix<f64> {
        let grand = self.grand_mean();
        let mut b = DMatrix::<f64>::zeros(self.p(), self.p());
        for (m, &n) in self.group_means().iter().zip(&self.sizes) {
            let d = m - &grand;
            b.ger(n as f64, &d, &d, 1.0);
        }
        b
    }

    /// Pooled covariance `W / (n - g)`.
    pub fn pooled_covariance(&self) -> DMatrix<f64> {
        self.within() / (self.n() - self.g()) as f64
    }
}

/// Outcome of a hypothesis test.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestResult {
    pub method: String,
    /// Reference-distribution statistic (chi-square or F).
    pub statistic: f64,
    pub df1: f64,
    pub df2: Option<f64>,
    pub p_value: f64,
    /// Untransformed statistic: Box's M, Pillai V or Wilks lambda.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub raw: Option<f64>,
}

pub(crate) fn chi2_sf(x: f64, df: f64) -> f64 {
    if !(x > 0.0) {
        return 1.0;
    }
    let d = ChiSquared::new(df).expect("positive degrees of freedom");
    d.sf(x).clamp(0.0, 1.0)
}

pub(crate) fn f_sf(x: f64, df1: f64, df2: f64) -> f64 {
    if !(x > 0.0) {
        return 1.0;
    }
    if x.is_infinite() {
        return 0.0;
    }
    let d = FisherSnedecor::new(df1, df2).expect("positive degrees of freedom");
    d.sf(x).clamp(0.0, 1.0)
}

fn cholesky(m: &DMatrix<f64>) -> Option<Cholesky<f64, Dyn>> {
    let c = Cholesky::new(m.clone())?;
    let diag = c.l_dirty().diagonal();
    let lo = diag.min();
    let hi = diag.max();
    // pivots this small relative to the largest mean the matrix is singular
    (lo > hi * 1e-10).then_some(c)
}

fn ln_det(m: &DMatrix<f64>) -> Option<f64> {
    let c = cholesky(m)?;
    Some(2.0 * c.l_dirty().diagonal().iter().map(|d| d.ln()).sum::<f64>())
}

/// Box's M test for homogeneity of group covariance matrices.
///
/// `M = (n-g) ln|S_pooled| - sum_k (n_k-1) ln|S_k|`, scaled by Box's factor
/// `1 - c` and referred to chi-square with `(g-1) p (p+1) / 2` df.
pub fn boxm_test(data: &GroupedFeatures) -> Result<TestResult> {
    let (n, p, g) = (data.n() as f64, data.p(), data.g() as f64);
    for (k, &nk) in data.group_sizes().iter().enumerate() {
        if nk < p + 1 {
            return Err(Error::InsufficientData(format!(
                "group `{}` has {nk} observations, Box's M needs at least {}",
                data.groups()[k],
                p + 1
            )));
        }
    }
    let covs = data.group_covariances();
    let mut weighted = 0.0;
    for (k, (s, &nk)) in covs.iter().zip(data.group_sizes()).enumerate() {
        let ld = ln_det(s).ok_or_else(|| Error::SingularCovariance {
            group: data.groups()[k].clone(),
        })?;
        weighted += (nk as f64 - 1.0) * ld;
    }
    let pooled_ld = ln_det(&data.pooled_covariance()).ok_or_else(|| Error::SingularCovariance {
        group: "pooled".into(),
    })?;
    let m = (n - g) * pooled_ld - weighted;

    let pf = p as f64;
    let inv_sum: f64 = data.group_sizes().iter().map(|&nk| 1.0 / (nk as f64 - 1.0)).sum();
    let c = (inv_sum - 1.0 / (n - g)) * (2.0 * pf * pf + 3.0 * pf - 1.0) / (6.0 * (pf + 1.0) * (g - 1.0));
    let chi = m * (1.0 - c);
    let df = (g - 1.0) * pf * (pf + 1.0) / 2.0;
    Ok(TestResult {
        method: "boxm".into(),
        statistic: chi,
        df1: df,
        df2: None,
        p_value: chi2_sf(chi, df),
        raw: Some(m),
    })
}

struct Manova {
    n: f64,
    p: f64,
    g: f64,
    b: DMatrix<f64>,
    w: DMatrix<f64>,
    t: DMatrix<f64>,
}

fn manova_parts(data: &GroupedFeatures) -> Result<Manova> {
    let (n, p, g) = (data.n(), data.p(), data.g());
    if n <= g + p {
        return Err(Error::InsufficientData(format!(
            "MANOVA needs n > g + p, got n = {n}, g = {g}, p = {p}"
        )));
    }
    let b = data.between();
    let w = data.within();
    let t = &b + &w;
    Ok(Manova {
        n: n as f64,
        p: p as f64,
        g: g as f64,
        b,
        w,
        t,
    })
}

/// One-way MANOVA with Pillai's trace `V = tr(B (B+W)^-1)` and its
/// approximate F.
pub fn manova_pillai(data: &GroupedFeatures) -> Result<TestResult> {
    let Manova { n, p, g, b, t, .. } = manova_parts(data)?;
    let chol = cholesky(&t).ok_or_else(|| Error::SingularSystem("B + W is singular".into()))?;
    let v = chol.solve(&b).trace();

    let s = p.min(g - 1.0);
    let m = ((p - g + 1.0).abs() - 1.0) / 2.0;
    let nn = (n - g - p - 1.0) / 2.0;
    let df1 = s * (2.0 * m + s + 1.0);
    let df2 = s * (2.0 * nn + s + 1.0);
    let f = if v >= s {
        f64::INFINITY
    } else {
        (df2 / df1) * v / (s - v)
    };
    Ok(TestResult {
        method: "manova_pillai".into(),
        statistic: f,
        df1,
        df2: Some(df2),
        p_value: f_sf(f, df1, df2),
        raw: Some(v),
    })
}

/// One-way MANOVA with Wilks' lambda `|W| / |B+W|` and Rao's F.
pub fn manova_wilks(data: &GroupedFeatures) -> Result<TestResult> {
    let Manova { n, p, g, w, t, .. } = manova_parts(data)?;
    let ld_t = ln_det(&t).ok_or_else(|| Error::SingularSystem("B + W is singular".into()))?;
    let ld_w = ln_det(&w).ok_or_else(|| Error::SingularSystem("W is singular".into()))?;
    let lambda = (ld_w - ld_t).exp().min(1.0);

    let dh = g - 1.0;
    let de = n - g;
    let denom = p * p + dh * dh - 5.0;
    let tt = if denom > 0.0 {
        ((p * p * dh * dh - 4.0) / denom).sqrt()
    } else {
        1.0
    };
    let df1 = p * dh;
    let wdf = de + dh - (p + dh + 1.0) / 2.0;
    let df2 = wdf * tt - (p * dh - 2.0) / 2.0;
    let root = lambda.powf(1.0 / tt);
    let f = if root > 0.0 {
        ((1.0 - root) / root) * df2 / df1
    } else {
        f64::INFINITY
    };
    Ok(TestResult {
        method: "manova_wilks".into(),
        statistic: f,
        df1,
        df2: Some(df2),
        p_value: f_sf(f, df1, df2),
        raw: Some(lambda),
    })
}

/// One-way ANOVA on coordinate `q` (0-based).
pub fn anova_univariate(data: &GroupedFeatures, q: usize) -> Result<TestResult> {
    if q >= data.p() {
        return Err(Error::invalid(format!(
            "coefficient index {q} out of range for p = {}",
            data.p()
        )));
    }
    let (n, g) = (data.n(), data.g());
    if n <= g {
        return Err(Error::InsufficientData("ANOVA needs n > g".into()));
    }
    let col = data.data().column(q);
    let grand = col.mean();
    let mut sums = vec![0.0; g];
    for (i, &k) in data.group_index().iter().enumerate() {
        sums[k] += col[i];
    }
    let means: Vec<f64> = sums
        .iter()
        .zip(data.group_sizes())
        .map(|(s, &nk)| s / nk as f64)
        .collect();
    let ssb: f64 = means
        .iter()
        .zip(data.group_sizes())
        .map(|(m, &nk)| nk as f64 * (m - grand).powi(2))
        .sum();
    let ssw: f64 = data
        .group_index()
        .iter()
        .enumerate()
        .map(|(i, &k)| (col[i] - means[k]).powi(2))
        .sum();
    if !(ssw > 0.0) {
        return Err(Error::InsufficientData(format!(
            "zero within-group variance in coefficient {}",
            q + 1
        )));
    }
    let df1 = (g - 1) as f64;
    let df2 = (n - g) as f64;
    let f = (ssb / df1) / (ssw / df2);
    Ok(TestResult {
        method: format!("anova_mu{}", q + 1),
        statistic: f,
        df1,
        df2: Some(df2),
        p_value: f_sf(f, df1, df2),
        raw: None,
    })
}

/// Box's M, both MANOVA statistics, then ANOVA on every coordinate.
pub fn full_report(data: &GroupedFeatures) -> Result<Vec<TestResult>> {
    let mut out = vec![boxm_test(data)?, manova_pillai(data)?, manova_wilks(data)?];
    for q in 0..data.p() {
        out.push(anova_univariate(data, q)?);
    }
    Ok(out)
}

pub fn write_results_csv(results: &[TestResult], path: &Path) -> Result<()> {
    write_atomic(path, |w| {
        writeln!(w, "method,statistic,df1,df2,p_value")?;
        for r in results {
            let df2 = r.df2.map(|d| d.to_string()).unwrap_or_default();
            writeln!(w, "{},{},{},{},{}", r.method, r.statistic, r.df1, df2, r.p_value)?;
        }
        Ok(())
    })
}

pub fn read_results_csv(path: &Path) -> Result<Vec<TestResult>> {
    let mut reader = csv::Reader::from_path(path)?;
    let mut out = Vec::new();
    for rec in reader.records() {
        let rec = rec?;
        let line = rec.position().map_or(0, |p| p.line() as usize);
        let num = |i: usize| -> Result<f64> {
            rec[i].parse::<f64>().map_err(|_| Error::Parse {
                path: path.to_path_buf(),
                line,
                msg: format!("bad number `{}`", &rec[i]),
            })
        };
        if rec.len() != 5 {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                line,
                msg: "expected 5 fields".into(),
            });
        }
        out.push(TestResult {
            method: rec[0].to_string(),
            statistic: num(1)?,
            df1: num(2)?,
            df2: if rec[3].is_empty() { None } else { Some(num(3)?) },
            p_value: num(4)?,
            raw: None,
        });
    }
    Ok(out)
}

pub fn write_results_json(results: &[TestResult], path: &Path) -> Result<()> {
    let text = serde_json::to_string_pretty(results)?;
    write_atomic(path, |w| w.write_all(text.as_bytes()))
}
