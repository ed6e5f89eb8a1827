//! Eigenbasis of the anchor Gram matrix and finite feature vectors.
//!
//! With `K = sum_q l_q v_q v_q^T`, a grid element `sum_l beta_l k(., a_l)` has
//! coordinates `mu_q = sqrt(l_q) * (v_q . beta)` in the orthonormal system
//! `{ sum_l v_ql k(., a_l) / sqrt(l_q) }`. Truncating after `r` terms yields the
//! feature vector consumed by the multivariate tests and classifiers.

use std::fs;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rayon::prelude::*;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::io::write_atomic;
use crate::kernel::{gram_matrix, Expansion, GridElement, KernelConfig};
use crate::pointpat::Grid;

/// Default rank tolerance, relative to the leading eigenvalue.
pub const DEFAULT_RANK_TOL: f64 = 1e-10;

/// Eigenvector components below this magnitude are skipped when fixing signs.
const SIGN_EPS: f64 = 1e-8;

#[derive(Debug, Clone)]
pub struct SpectralBasis {
    eigenvalues: Vec<f64>,
    /// Column `q` is `v_q`.
    eigenvectors: DMatrix<f64>,
    grid: Arc<Grid>,
    kernel: KernelConfig,
    rank: usize,
    rank_tol: f64,
    key: String,
    fingerprint: String,
}

/// Canonical text identifying a basis. Floats use `{:?}` so they round-trip.
pub fn basis_key(grid: &Grid, kernel: &KernelConfig, rank_tol: f64) -> String {
    let w = grid.window();
    format!(
        "window={:?},{:?},{:?},{:?};h={:?};sigma={:?};form={};rank_tol={:?}",
        w.xmin(),
        w.xmax(),
        w.ymin(),
        w.ymax(),
        grid.step(),
        kernel.sigma(),
        kernel.form(),
        rank_tol
    )
}

fn fingerprint(key: &str) -> String {
    Sha256::digest(key.as_bytes())
        .iter()
        .take(8)
        .map(|b| format!("{b:02x}"))
        .collect()
}

/// Eigenpairs of a symmetric matrix, eigenvalues decreasing and clamped at
/// zero, eigenvectors in columns with the sign convention of
/// [`spectral_basis`].
pub fn sorted_eigen(matrix: DMatrix<f64>) -> Result<(Vec<f64>, DMatrix<f64>)> {
    let n = matrix.nrows();
    let eig = SymmetricEigen::try_new(matrix, f64::EPSILON, 0)
        .ok_or_else(|| Error::Decomposition(format!("no convergence on a {n} x {n} matrix")))?;

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]).then(a.cmp(&b)));

    let mut eigenvalues = Vec::with_capacity(n);
    let mut eigenvectors = DMatrix::<f64>::zeros(n, n);
    for (dst, &src) in order.iter().enumerate() {
        eigenvalues.push(eig.eigenvalues[src].max(0.0));
        let mut col = eig.eigenvectors.column(src).into_owned();
        if let Some(lead) = col.iter().find(|v| v.abs() > SIGN_EPS) {
            if *lead < 0.0 {
                col.neg_mut();
            }
        }
        eigenvectors.set_column(dst, &col);
    }
    Ok((eigenvalues, eigenvectors))
}

/// Full symmetric eigendecomposition of the anchor Gram matrix.
///
/// Eigenvalues are sorted in decreasing order and those below
/// `rank_tol * l_1` are excluded from the rank; negative ones are clamped to
/// zero. Each eigenvector is signed so that its first component of magnitude
/// above 1e-8 is positive.
pub fn spectral_basis(grid: Arc<Grid>, kernel: KernelConfig, rank_tol: f64) -> Result<SpectralBasis> {
    let gram = gram_matrix(grid.anchors(), &kernel)?;
    spectral_basis_from_gram(grid, kernel, rank_tol, gram)
}

pub fn spectral_basis_from_gram(
    grid: Arc<Grid>,
    kernel: KernelConfig,
    rank_tol: f64,
    gram: DMatrix<f64>,
) -> Result<SpectralBasis> {
    if !(rank_tol >= 0.0) || !rank_tol.is_finite() {
        return Err(Error::invalid(format!("rank tolerance must be >= 0, got {rank_tol}")));
    }
    let n = grid.len();
    if gram.nrows() != n || gram.ncols() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: gram.nrows(),
        });
    }
    let (eigenvalues, eigenvectors) = sorted_eigen(gram)?;
    let cutoff = rank_tol * eigenvalues.first().copied().unwrap_or(0.0);
    let rank = eigenvalues.iter().filter(|&&l| l > cutoff).count();
    let key = basis_key(&grid, &kernel, rank_tol);
    Ok(SpectralBasis {
        eigenvalues,
        eigenvectors,
        grid,
        kernel,
        rank,
        rank_tol,
        fingerprint: fingerprint(&key),
        key,
    })
}

impl SpectralBasis {
    pub fn eigenvalues(&self) -> &[f64] {
        &self.eigenvalues
    }

    pub fn eigenvectors(&self) -> &DMatrix<f64> {
        &self.eigenvectors
    }

    pub fn grid(&self) -> &Arc<Grid> {
        &self.grid
    }

    pub fn kernel(&self) -> &KernelConfig {
        &self.kernel
    }

    /// Number of eigenvalues above the rank tolerance.
    pub fn rank(&self) -> usize {
        self.rank
    }

    pub fn rank_tol(&self) -> f64 {
        self.rank_tol
    }

    pub fn key(&self) -> &str {
        &self.key
    }

    pub fn fingerprint(&self) -> &str {
        &self.fingerprint
    }

    /// Gram matrix rebuilt from the decomposition, `V diag(l) V^T`.
    pub fn reconstructed_gram(&self) -> DMatrix<f64> {
        let scaled = &self.eigenvectors * DMatrix::from_diagonal(&DVector::from_column_slice(&self.eigenvalues));
        scaled * self.eigenvectors.transpose()
    }

    fn check_order(&self, r: usize) -> Result<()> {
        if r == 0 || r > self.rank {
            return Err(Error::invalid(format!(
                "truncation order {r} outside 1..={}",
                self.rank
            )));
        }
        Ok(())
    }
}

/// Truncated coordinates of one element in a [`SpectralBasis`].
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureVector {
    pub mu: Vec<f64>,
    /// Fingerprint of the basis the coordinates refer to.
    pub basis: String,
    pub label: Option<String>,
}

impl FeatureVector {
    pub fn order(&self) -> usize {
        self.mu.len()
    }
}

pub fn project(ge: &GridElement, basis: &SpectralBasis, r: usize) -> Result<FeatureVector> {
    basis.check_order(r)?;
    if ge.kernel() != &basis.kernel {
        return Err(Error::KernelMismatch);
    }
    if !ge.grid().same_lattice(&basis.grid) {
        return Err(Error::GridMismatch);
    }
    let beta = DVector::from_column_slice(ge.beta());
    let mu = (0..r)
        .map(|q| basis.eigenvalues[q].sqrt() * basis.eigenvectors.column(q).dot(&beta))
        .collect();
    Ok(FeatureVector {
        mu,
        basis: basis.fingerprint.clone(),
        label: None,
    })
}

/// Projects many elements in parallel; output order follows input order.
pub fn project_all(elements: &[GridElement], basis: &SpectralBasis, r: usize) -> Result<Vec<FeatureVector>> {
    elements.par_iter().map(|e| project(e, basis, r)).collect()
}

pub fn feature_inner(f: &FeatureVector, g: &FeatureVector) -> Result<f64> {
    if f.basis != g.basis {
        return Err(Error::invalid("feature vectors refer to different bases"));
    }
    if f.mu.len() != g.mu.len() {
        return Err(Error::DimensionMismatch {
            expected: f.mu.len(),
            got: g.mu.len(),
        });
    }
    Ok(f.mu.iter().zip(&g.mu).map(|(a, b)| a * b).sum())
}

/// Grid element `sum_{q<=r} (mu_q / sqrt(l_q)) v_q`; zero eigenvalues are skipped.
pub fn reconstruct(f: &FeatureVector, basis: &SpectralBasis) -> Result<GridElement> {
    if f.basis != basis.fingerprint {
        return Err(Error::invalid("feature vector refers to a different basis"));
    }
    basis.check_order(f.order())?;
    let n = basis.grid.len();
    let mut beta = DVector::<f64>::zeros(n);
    for (q, mu) in f.mu.iter().enumerate() {
        let l = basis.eigenvalues[q];
        if l > 0.0 {
            beta.axpy(mu / l.sqrt(), &basis.eigenvectors.column(q), 1.0);
        }
    }
    GridElement::new(beta.as_slice().to_vec(), Arc::clone(&basis.grid), basis.kernel)
}

// -- basis cache ----------------------------------------------------------------

const CACHE_MAGIC: &[u8; 8] = b"PPKBASIS";
const CACHE_VERSION: u32 = 1;

pub fn cache_path(dir: &Path, grid: &Grid, kernel: &KernelConfig, rank_tol: f64) -> PathBuf {
    dir.join(format!("basis-{}.bin", fingerprint(&basis_key(grid, kernel, rank_tol))))
}

pub fn write_basis(basis: &SpectralBasis, path: &Path) -> Result<()> {
    write_atomic(path, |w| {
        w.write_all(CACHE_MAGIC)?;
        w.write_all(&CACHE_VERSION.to_le_bytes())?;
        w.write_all(&(basis.key.len() as u64).to_le_bytes())?;
        w.write_all(basis.key.as_bytes())?;
        w.write_all(&(basis.eigenvalues.len() as u64).to_le_bytes())?;
        w.write_all(&(basis.rank as u64).to_le_bytes())?;
        for v in basis.eigenvalues.iter().chain(basis.eigenvectors.as_slice()) {
            w.write_all(&v.to_le_bytes())?;
        }
        Ok(())
    })
}

fn read_u64(r: &mut impl Read) -> std::io::Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

/// Reads a cached basis, checking that it was built for `grid` and `kernel`.
pub fn read_basis(path: &Path, grid: Arc<Grid>, kernel: KernelConfig, rank_tol: f64) -> Result<SpectralBasis> {
    let expected = basis_key(&grid, &kernel, rank_tol);
    let mismatch = |msg: String| Error::CacheMismatch(format!("{}: {msg}", path.display()));
    let mut r = std::io::BufReader::new(fs::File::open(path)?);
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    let mut version = [0u8; 4];
    r.read_exact(&mut version)?;
    if &magic != CACHE_MAGIC || u32::from_le_bytes(version) != CACHE_VERSION {
        return Err(mismatch("not a basis cache file of this version".into()));
    }
    let key_len = read_u64(&mut r)? as usize;
    if key_len > 4096 {
        return Err(mismatch("corrupt key length".into()));
    }
    let mut key = vec![0u8; key_len];
    r.read_exact(&mut key)?;
    let key = String::from_utf8(key).map_err(|_| mismatch("corrupt key".into()))?;
    if key != expected {
        return Err(mismatch(format!("built for `{key}`, expected `{expected}`")));
    }
    let n = read_u64(&mut r)? as usize;
    if n != grid.len() {
        return Err(mismatch(format!("{n} anchors, grid has {}", grid.len())));
    }
    let rank = read_u64(&mut r)? as usize;
    let mut values = vec![0f64; n + n * n];
    let mut buf = [0u8; 8];
    for v in values.iter_mut() {
        r.read_exact(&mut buf)?;
        *v = f64::from_le_bytes(buf);
    }
    let eigenvectors = DMatrix::from_column_slice(n, n, &values[n..]);
    values.truncate(n);
    Ok(SpectralBasis {
        eigenvalues: values,
        eigenvectors,
        grid,
        kernel,
        rank,
        rank_tol,
        fingerprint: fingerprint(&key),
        key,
    })
}

/// Loads the basis from `dir` when cached, otherwise computes and stores it.
/// The flag is `true` on a cache hit.
pub fn load_or_compute_basis(
    dir: &Path,
    grid: Arc<Grid>,
    kernel: KernelConfig,
    rank_tol: f64,
) -> Result<(SpectralBasis, bool)> {
    let path = cache_path(dir, &grid, &kernel, rank_tol);
    if path.exists() {
        log::info!("basis cache hit: {}", path.display());
        return Ok((read_basis(&path, grid, kernel, rank_tol)?, true));
    }
    log::info!("basis cache miss: computing {} anchors", grid.len());
    let basis = spectral_basis(grid, kernel, rank_tol)?;
    write_basis(&basis, &path)?;
    Ok((basis, false))
}

// -- feature CSV ----------------------------------------------------------------

/// Rows of `pattern_id,label,mu1,...,mur`.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureTable {
    pub ids: Vec<String>,
    pub labels: Vec<Option<String>>,
    pub rows: Vec<Vec<f64>>,
}

impl FeatureTable {
    pub fn order(&self) -> usize {
        self.rows.first().map_or(0, Vec::len)
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let r = self.order();
        write_atomic(path, |w| {
            write!(w, "pattern_id,label")?;
            for q in 1..=r {
                write!(w, ",mu{q}")?;
            }
            writeln!(w)?;
            for ((id, label), row) in self.ids.iter().zip(&self.labels).zip(&self.rows) {
                write!(w, "{id},{}", label.as_deref().unwrap_or(""))?;
                for v in row {
                    write!(w, ",{v}")?;
                }
                writeln!(w)?;
            }
            Ok(())
        })
    }

    pub fn read(path: &Path) -> Result<Self> {
        let mut reader = csv::ReaderBuilder::new()
            .trim(csv::Trim::All)
            .from_path(path)?;
        let header = reader.headers()?.clone();
        let r = header.len().saturating_sub(2);
        let well_formed = header.len() >= 3
            && &header[0] == "pattern_id"
            && &header[1] == "label"
            && (1..=r).all(|q| header[q + 1] == *format!("mu{q}"));
        if !well_formed {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                line: 1,
                msg: "expected header `pattern_id,label,mu1,...,mur`".into(),
            });
        }
        let mut table = FeatureTable {
            ids: Vec::new(),
            labels: Vec::new(),
            rows: Vec::new(),
        };
        for rec in reader.records() {
            let rec = rec?;
            let line = rec.position().map_or(0, |p| p.line() as usize);
            let perr = |msg: String| Error::Parse {
                path: path.to_path_buf(),
                line,
                msg,
            };
            let row = (2..rec.len())
                .map(|i| rec[i].parse::<f64>().map_err(|_| perr(format!("bad value `{}`", &rec[i]))))
                .collect::<Result<Vec<f64>>>()?;
            if table.ids.contains(&rec[0].to_string()) {
                return Err(Error::DuplicatePatternId(rec[0].to_string()));
            }
            table.ids.push(rec[0].to_string());
            table.labels.push((!rec[1].is_empty()).then(|| rec[1].to_string()));
            table.rows.push(row);
        }
        Ok(table)
    }
}
