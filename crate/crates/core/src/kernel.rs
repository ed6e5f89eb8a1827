//! Gaussian kernel, Gram matrices and kernel expansions.
//!
//! A pattern `{x_1, ..., x_N}` is embedded as the function
//! `f(y) = sum_i k(y, x_i)`. Everything downstream works with finite kernel
//! expansions `sum_i c_i k(., z_i)`, so evaluation and inner products are exact
//! double sums and never truncated.
//!
//! To compare patterns with different atom sets, each embedding is smoothed
//! onto a shared anchor grid `a_1..a_N` by regularized least squares: the
//! coefficients solve `(gamma*N*I + K) beta = b` where `b_l = f(a_l)` and
//! `K` is the anchor Gram matrix.

use std::fmt;
use std::io::Write;
use std::path::Path;
use std::str::FromStr;
use std::sync::Arc;

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::write_atomic;
use crate::pointpat::{Grid, Point, PointPattern};

/// Functional form of the Gaussian kernel.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
pub enum KernelForm {
    /// `exp(-d^2 / (2 sigma^2))`
    #[default]
    Gaussian,
    /// `exp(-d^2 / sigma^2)`, kept for sensitivity checks.
    GaussianNoHalf,
}

impl fmt::Display for KernelForm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            KernelForm::Gaussian => "gaussian",
            KernelForm::GaussianNoHalf => "gaussian-nohalf",
        })
    }
}

impl FromStr for KernelForm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "gaussian" => Ok(KernelForm::Gaussian),
            "gaussian-nohalf" => Ok(KernelForm::GaussianNoHalf),
            other => Err(Error::invalid(format!(
                "unknown kernel form `{other}` (expected gaussian | gaussian-nohalf)"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KernelConfig {
    sigma: f64,
    form: KernelForm,
}

impl KernelConfig {
    pub fn new(sigma: f64) -> Result<Self> {
        Self::with_form(sigma, KernelForm::Gaussian)
    }

    pub fn with_form(sigma: f64, form: KernelForm) -> Result<Self> {
        if !(sigma > 0.0) || !sigma.is_finite() {
            return Err(Error::invalid(format!("kernel bandwidth must be > 0, got {sigma}")));
        }
        Ok(KernelConfig { sigma, form })
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn form(&self) -> KernelForm {
        self.form
    }

    #[inline]
    pub fn eval(&self, x: &Point, y: &Point) -> f64 {
        let s2 = self.sigma * self.sigma;
        let denom = match self.form {
            KernelForm::Gaussian => 2.0 * s2,
            KernelForm::GaussianNoHalf => s2,
        };
        (-x.dist2(y) / denom).exp()
    }
}

pub fn kernel_eval(x: &Point, y: &Point, cfg: &KernelConfig) -> f64 {
    cfg.eval(x, y)
}

/// Kernel matrix `K[i, j] = k(p_i, p_j)`.
pub fn gram_matrix(points: &[Point], cfg: &KernelConfig) -> Result<DMatrix<f64>> {
    if points.is_empty() {
        return Err(Error::invalid("gram matrix of an empty point list"));
    }
    let n = points.len();
    let mut k = DMatrix::<f64>::identity(n, n);
    for j in 0..n {
        for i in (j + 1)..n {
            let v = cfg.eval(&points[i], &points[j]);
            k[(i, j)] = v;
            k[(j, i)] = v;
        }
    }
    Ok(k)
}

/// A finite kernel expansion `sum_i c_i k(., z_i)`.
pub trait Expansion {
    fn atoms(&self) -> &[Point];
    fn coeffs(&self) -> &[f64];
    fn kernel(&self) -> &KernelConfig;
}

/// Element of the span of kernel sections with arbitrary atoms.
#[derive(Debug, Clone, PartialEq)]
pub struct RkhsElement {
    atoms: Vec<Point>,
    coeffs: Vec<f64>,
    kernel: KernelConfig,
}

impl RkhsElement {
    pub fn new(atoms: Vec<Point>, coeffs: Vec<f64>, kernel: KernelConfig) -> Result<Self> {
        if atoms.len() != coeffs.len() {
            return Err(Error::DimensionMismatch {
                expected: atoms.len(),
                got: coeffs.len(),
            });
        }
        Ok(RkhsElement {
            atoms,
            coeffs,
            kernel,
        })
    }

    pub fn zero(kernel: KernelConfig) -> Self {
        RkhsElement {
            atoms: Vec::new(),
            coeffs: Vec::new(),
            kernel,
        }
    }

    /// The kernel section `k(., x)`.
    pub fn section(x: Point, kernel: KernelConfig) -> Self {
        RkhsElement {
            atoms: vec![x],
            coeffs: vec![1.0],
            kernel,
        }
    }
}

impl Expansion for RkhsElement {
    fn atoms(&self) -> &[Point] {
        &self.atoms
    }
    fn coeffs(&self) -> &[f64] {
        &self.coeffs
    }
    fn kernel(&self) -> &KernelConfig {
        &self.kernel
    }
}

/// Kernel expansion over the anchors of a grid.
#[derive(Debug, Clone)]
pub struct GridElement {
    beta: Vec<f64>,
    grid: Arc<Grid>,
    kernel: KernelConfig,
}

impl GridElement {
    pub fn new(beta: Vec<f64>, grid: Arc<Grid>, kernel: KernelConfig) -> Result<Self> {
        if beta.len() != grid.len() {
            return Err(Error::DimensionMismatch {
                expected: grid.len(),
                got: beta.len(),
            });
        }
        if beta.iter().any(|b| !b.is_finite()) {
            return Err(Error::invalid("non-finite grid coefficient"));
        }
        Ok(GridElement { beta, grid, kernel })
    }

    pub fn zero(grid: Arc<Grid>, kernel: KernelConfig) -> Self {
        GridElement {
            beta: vec![0.0; grid.len()],
            grid,
            kernel,
        }
    }

    pub fn beta(&self) -> &[f64] {
        &self.beta
    }

    pub fn grid(&self) -> &Arc<Grid> {
        &self.grid
    }

    pub fn compatible(&self, other: &GridElement) -> Result<()> {
        if self.kernel != other.kernel {
            return Err(Error::KernelMismatch);
        }
        if !(Arc::ptr_eq(&self.grid, &other.grid) || self.grid.same_lattice(&other.grid)) {
            return Err(Error::GridMismatch);
        }
        Ok(())
    }
}

impl Expansion for GridElement {
    fn atoms(&self) -> &[Point] {
        self.grid.anchors()
    }
    fn coeffs(&self) -> &[f64] {
        &self.beta
    }
    fn kernel(&self) -> &KernelConfig {
        &self.kernel
    }
}

/// Embeds a counting measure as `sum_i k(., x_i)`.
pub fn embed(pattern: &PointPattern, cfg: &KernelConfig) -> RkhsElement {
    RkhsElement {
        atoms: pattern.points().to_vec(),
        coeffs: vec![1.0; pattern.len()],
        kernel: *cfg,
    }
}

/// Pointwise value of the expansion at `x`.
pub fn evaluate<E: Expansion + ?Sized>(e: &E, x: &Point) -> f64 {
    let k = e.kernel();
    e.atoms()
        .iter()
        .zip(e.coeffs())
        .fold(0.0, |acc, (z, c)| acc + c * k.eval(z, x))
}

/// Exact RKHS inner product `sum_i sum_j a_i b_j k(x_i, y_j)`.
pub fn inner_product<A, B>(a: &A, b: &B) -> Result<f64>
where
    A: Expansion + ?Sized,
    B: Expansion + ?Sized,
{
    if a.kernel() != b.kernel() {
        return Err(Error::KernelMismatch);
    }
    let k = a.kernel();
    let mut total = 0.0;
    for (x, ca) in a.atoms().iter().zip(a.coeffs()) {
        if *ca == 0.0 {
            continue;
        }
        let row: f64 = b
            .atoms()
            .iter()
            .zip(b.coeffs())
            .fold(0.0, |acc, (y, cb)| acc + cb * k.eval(x, y));
        total += ca * row;
    }
    Ok(total)
}

/// `beta_1^T K beta_2` for two elements on the grid whose Gram matrix is `gram`.
pub fn grid_inner_product(a: &GridElement, b: &GridElement, gram: &DMatrix<f64>) -> Result<f64> {
    a.compatible(b)?;
    if gram.nrows() != a.beta.len() || gram.ncols() != b.beta.len() {
        return Err(Error::DimensionMismatch {
            expected: a.beta.len(),
            got: gram.nrows(),
        });
    }
    let ba = DVector::from_column_slice(&a.beta);
    let bb = DVector::from_column_slice(&b.beta);
    Ok(ba.dot(&(gram * bb)))
}

/// Default relative tolerance of the representer solve residual.
pub const DEFAULT_TOL_SOLVE: f64 = 1e-8;

/// Factored representer system for one grid, kernel and `gamma`.
///
/// Building the Cholesky factor is O(N^3); each [`Smoother::smooth`] call is
/// then O(N * atoms + N^2).
pub struct Smoother {
    grid: Arc<Grid>,
    kernel: KernelConfig,
    gamma: f64,
    system: DMatrix<f64>,
    chol: Cholesky<f64, Dyn>,
    tol_solve: f64,
}

impl fmt::Debug for Smoother {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Smoother")
            .field("anchors", &self.grid.len())
            .field("kernel", &self.kernel)
            .field("gamma", &self.gamma)
            .finish()
    }
}

/// Pivot-ratio condition bound above which the factorization is treated as
/// singular.
const MAX_PIVOT_CONDITION: f64 = 1.0 / f64::EPSILON;

impl Smoother {
    pub fn new(grid: Arc<Grid>, kernel: KernelConfig, gamma: f64) -> Result<Self> {
        let gram = gram_matrix(grid.anchors(), &kernel)?;
        Self::from_gram(grid, kernel, gamma, gram)
    }

    /// Reuses an already computed anchor Gram matrix.
    pub fn from_gram(
        grid: Arc<Grid>,
        kernel: KernelConfig,
        gamma: f64,
        gram: DMatrix<f64>,
    ) -> Result<Self> {
        if !(gamma >= 0.0) || !gamma.is_finite() {
            return Err(Error::invalid(format!("gamma must be >= 0, got {gamma}")));
        }
        let n = grid.len();
        if gram.nrows() != n || gram.ncols() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                got: gram.nrows(),
            });
        }
        let mut system = gram;
        let shift = gamma * n as f64;
        for i in 0..n {
            system[(i, i)] += shift;
        }
        let chol = Cholesky::new(system.clone()).ok_or_else(|| {
            Error::SingularSystem(format!("gamma = {gamma}: matrix is not positive definite"))
        })?;
        let diag = chol.l_dirty().diagonal();
        let (lo, hi) = diag
            .iter()
            .fold((f64::INFINITY, 0.0f64), |(lo, hi), &d| (lo.min(d), hi.max(d)));
        let cond = (hi / lo).powi(2);
        if !(cond < MAX_PIVOT_CONDITION) {
            return Err(Error::SingularSystem(format!(
                "gamma = {gamma}: pivot condition estimate {cond:e}"
            )));
        }
        Ok(Smoother {
            grid,
            kernel,
            gamma,
            system,
            chol,
            tol_solve: DEFAULT_TOL_SOLVE,
        })
    }

    pub fn with_tol_solve(mut self, tol: f64) -> Self {
        self.tol_solve = tol;
        self
    }

    pub fn grid(&self) -> &Arc<Grid> {
        &self.grid
    }

    pub fn kernel(&self) -> &KernelConfig {
        &self.kernel
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    /// Representer-theorem fit of `e` on the grid.
    pub fn smooth<E: Expansion + ?Sized>(&self, e: &E) -> Result<GridElement> {
        if e.kernel() != &self.kernel {
            return Err(Error::KernelMismatch);
        }
        let b = DVector::from_iterator(
            self.grid.len(),
            self.grid.anchors().iter().map(|a| evaluate(e, a)),
        );
        let beta = self.chol.solve(&b);
        let residual = (&self.system * &beta - &b).amax();
        let tol = self.tol_solve * b.amax();
        if residual > tol {
            return Err(Error::Residual { residual, tol });
        }
        GridElement::new(beta.as_slice().to_vec(), Arc::clone(&self.grid), self.kernel)
    }

    /// Smooths many elements in parallel; output order follows input order.
    pub fn smooth_all<E: Expansion + Sync>(&self, elements: &[E]) -> Result<Vec<GridElement>> {
        elements.par_iter().map(|e| self.smooth(e)).collect()
    }
}

/// One-shot representer fit. Prefer [`Smoother`] for more than one element.
pub fn smooth_to_grid<E: Expansion + ?Sized>(
    e: &E,
    grid: &Arc<Grid>,
    gamma: f64,
) -> Result<GridElement> {
    Smoother::new(Arc::clone(grid), *e.kernel(), gamma)?.smooth(e)
}

/// Vector-space mean of grid elements.
pub fn mean_element(elements: &[GridElement]) -> Result<GridElement> {
    let first = elements
        .first()
        .ok_or_else(|| Error::invalid("mean of an empty element list"))?;
    let mut acc = vec![0.0; first.beta.len()];
    for e in elements {
        first.compatible(e)?;
        for (a, b) in acc.iter_mut().zip(&e.beta) {
            *a += b;
        }
    }
    let n = elements.len() as f64;
    acc.iter_mut().for_each(|a| *a /= n);
    GridElement::new(acc, Arc::clone(&first.grid), first.kernel)
}

/// Smallest `gamma` of the form `10^(k/10)` for which the condition number of
/// `gamma*N*I + K`, computed from the Gram eigenvalues, stays below
/// `max_condition`. Negative eigenvalues are treated as zero.
pub fn minimal_gamma(gram_eigenvalues: &[f64], max_condition: f64) -> Option<f64> {
    let n = gram_eigenvalues.len() as f64;
    let top = gram_eigenvalues.iter().cloned().fold(0.0f64, f64::max);
    let bottom = gram_eigenvalues
        .iter()
        .cloned()
        .fold(f64::INFINITY, f64::min)
        .max(0.0);
    (-200..=40)
        .map(|k| 10f64.powf(k as f64 / 10.0))
        .find(|&g| (top + g * n) / (bottom + g * n) < max_condition)
}

/// Writes `x,y,value` for every anchor of `grid`, in anchor order.
pub fn export_field<E: Expansion + ?Sized>(e: &E, grid: &Grid, path: &Path) -> Result<()> {
    let values: Vec<f64> = grid.anchors().iter().map(|a| evaluate(e, a)).collect();
    write_atomic(path, |w| {
        writeln!(w, "x,y,value")?;
        for (a, v) in grid.anchors().iter().zip(&values) {
            writeln!(w, "{},{},{}", a.x, a.y, v)?;
        }
        Ok(())
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pointpat::{make_grid, simulate_hppp, Window};
    use approx::assert_relative_eq;

    fn cfg() -> KernelConfig {
        KernelConfig::new(0.1).unwrap()
    }

    #[test]
    fn kernel_values() {
        let c = cfg();
        let x = Point::new(0.3, 0.4);
        assert_eq!(kernel_eval(&x, &x, &c), 1.0);
        let y = Point::new(0.3 + 0.06, 0.4 + 0.08); // distance 0.1 = sigma
        assert_relative_eq!(kernel_eval(&x, &y, &c), (-0.5f64).exp(), max_relative = 1e-12);
        assert_relative_eq!(kernel_eval(&x, &y, &c), 0.6065306597126334, max_relative = 1e-12);
        assert_eq!(kernel_eval(&x, &y, &c), kernel_eval(&y, &x, &c));
        let alt = KernelConfig::with_form(0.1, KernelForm::GaussianNoHalf).unwrap();
        assert_relative_eq!(kernel_eval(&x, &y, &alt), (-1.0f64).exp(), max_relative = 1e-12);
    }

    #[test]
    fn kernel_config_validation() {
        assert!(KernelConfig::new(0.0).is_err());
        assert!(KernelConfig::new(-1.0).is_err());
        assert_eq!("gaussian-nohalf".parse::<KernelForm>().unwrap(), KernelForm::GaussianNoHalf);
        assert!("laplace".parse::<KernelForm>().is_err());
    }

    #[test]
    fn gram_small_cases() {
        let c = cfg();
        assert!(gram_matrix(&[], &c).is_err());
        assert_eq!(gram_matrix(&[Point::new(0.5, 0.5)], &c).unwrap()[(0, 0)], 1.0);
        let p = Point::new(0.2, 0.2);
        let g = gram_matrix(&[p, p], &c).unwrap();
        assert_eq!(g, DMatrix::from_element(2, 2, 1.0));
        let mut ev: Vec<f64> = g.symmetric_eigenvalues().iter().cloned().collect();
        ev.sort_by(f64::total_cmp);
        assert_relative_eq!(ev[0], 0.0, epsilon = 1e-12);
        assert_relative_eq!(ev[1], 2.0, epsilon = 1e-12);

        let grid = make_grid(Window::unit(), 0.5).unwrap();
        assert_eq!(gram_matrix(grid.anchors(), &c).unwrap().trace(), 9.0);
    }

    #[test]
    fn embed_and_evaluate() {
        let c = cfg();
        let w = Window::unit();
        let zero = embed(&PointPattern::empty(w), &c);
        assert!(zero.atoms().is_empty());
        assert_eq!(evaluate(&zero, &Point::new(0.1, 0.2)), 0.0);

        let x = Point::new(0.25, 0.75);
        let one = embed(&PointPattern::new(vec![x], w).unwrap(), &c);
        assert_eq!(evaluate(&one, &x), 1.0);

        let pat = simulate_hppp(40.0, w, 3).unwrap();
        let e = embed(&pat, &c);
        assert!(e.coeffs().iter().all(|&v| v == 1.0));
        let y = Point::new(0.41, 0.59);
        let mut direct = 0.0;
        for p in pat.points() {
            let d2 = (p.x - y.x).powi(2) + (p.y - y.y).powi(2);
            direct += (-d2 / (2.0 * 0.01)).exp();
        }
        assert_relative_eq!(evaluate(&e, &y), direct, max_relative = 1e-12);
    }

    #[test]
    fn reproducing_on_sections() {
        let c = cfg();
        let x = Point::new(0.1, 0.9);
        let y = Point::new(0.3, 0.7);
        let kx = RkhsElement::section(x, c);
        let ky = RkhsElement::section(y, c);
        assert_relative_eq!(inner_product(&kx, &ky).unwrap(), c.eval(&x, &y), max_relative = 1e-14);
        assert_eq!(inner_product(&kx, &kx).unwrap(), 1.0);
        let other = RkhsElement::section(x, KernelConfig::new(0.2).unwrap());
        assert!(matches!(inner_product(&kx, &other), Err(Error::KernelMismatch)));
    }

    #[test]
    fn rkhs_element_length_check() {
        assert!(RkhsElement::new(vec![Point::new(0.0, 0.0)], vec![], cfg()).is_err());
    }

    #[test]
    fn grid_inner_product_matches_double_sum() {
        let c = cfg();
        let grid = Arc::new(make_grid(Window::unit(), 0.125).unwrap());
        let gram = gram_matrix(grid.anchors(), &c).unwrap();
        let n = grid.len();
        let a: Vec<f64> = (0..n).map(|i| ((i * 7 % 13) as f64 - 6.0) / 5.0).collect();
        let b: Vec<f64> = (0..n).map(|i| ((i * 5 % 11) as f64 - 5.0) / 3.0).collect();
        let ga = GridElement::new(a.clone(), Arc::clone(&grid), c).unwrap();
        let gb = GridElement::new(b.clone(), Arc::clone(&grid), c).unwrap();
        // oracle: explicit double loop over anchors
        let mut oracle = 0.0;
        for (ai, pi) in a.iter().zip(grid.anchors()) {
            for (bj, pj) in b.iter().zip(grid.anchors()) {
                oracle += ai * bj * c.eval(pi, pj);
            }
        }
        assert_relative_eq!(grid_inner_product(&ga, &gb, &gram).unwrap(), oracle, max_relative = 1e-10);
        assert_relative_eq!(inner_product(&ga, &gb).unwrap(), oracle, max_relative = 1e-10);
    }

    #[test]
    fn smoothing_recovers_grid_expansion() {
        let c = KernelConfig::new(0.2).unwrap();
        let grid = Arc::new(make_grid(Window::unit(), 0.25).unwrap());
        let n = grid.len();
        let coef: Vec<f64> = (0..n).map(|i| (i as f64 * 0.37).sin()).collect();
        let e = RkhsElement::new(grid.anchors().to_vec(), coef.clone(), c).unwrap();
        let s = smooth_to_grid(&e, &grid, 0.0).unwrap();
        for (got, want) in s.beta().iter().zip(&coef) {
            assert!((got - want).abs() < 1e-8, "{got} vs {want}");
        }
    }

    #[test]
    fn smoothing_zero_element() {
        let c = cfg();
        let grid = Arc::new(make_grid(Window::unit(), 0.2).unwrap());
        for gamma in [0.0, 1e-4, 1.0] {
            let s = smooth_to_grid(&RkhsElement::zero(c), &grid, gamma).unwrap();
            assert!(s.beta().iter().all(|&b| b == 0.0));
        }
    }

    #[test]
    fn smoothing_reports_singular_system() {
        // wide kernel on a fine grid: Gram is numerically rank deficient
        let c = KernelConfig::new(0.5).unwrap();
        let grid = Arc::new(make_grid(Window::unit(), 0.05).unwrap());
        let err = Smoother::new(Arc::clone(&grid), c, 0.0).unwrap_err();
        assert!(matches!(err, Error::SingularSystem(_)), "{err}");
        assert!(Smoother::new(grid, c, 1e-3).is_ok());
        assert!(Smoother::new(Arc::new(make_grid(Window::unit(), 0.5).unwrap()), c, -1.0).is_err());
    }

    #[test]
    fn smoothing_residual_and_kernel_check() {
        let c = KernelConfig::new(0.05).unwrap();
        let grid = Arc::new(make_grid(Window::unit(), 0.05).unwrap());
        let sm = Smoother::new(Arc::clone(&grid), c, 0.000127).unwrap();
        let pat = simulate_hppp(80.0, Window::unit(), 11).unwrap();
        let g = sm.smooth(&embed(&pat, &c)).unwrap();
        assert_eq!(g.beta().len(), 441);
        let wrong = embed(&pat, &KernelConfig::new(0.07).unwrap());
        assert!(matches!(sm.smooth(&wrong), Err(Error::KernelMismatch)));
    }

    #[test]
    fn ridge_shrinkage_is_monotone() {
        let c = KernelConfig::new(0.1).unwrap();
        let grid = Arc::new(make_grid(Window::unit(), 0.1).unwrap());
        let gram = gram_matrix(grid.anchors(), &c).unwrap();
        for seed in 0..5 {
            let e = embed(&simulate_hppp(30.0, Window::unit(), seed).unwrap(), &c);
            let mut last = f64::INFINITY;
            for gamma in [1e-5, 1e-4, 1e-3, 1e-2, 1e-1] {
                let sm = Smoother::from_gram(Arc::clone(&grid), c, gamma, gram.clone()).unwrap();
                let norm = DVector::from_column_slice(sm.smooth(&e).unwrap().beta()).norm();
                assert!(norm <= last + 1e-12);
                last = norm;
            }
        }
    }

    #[test]
    fn mean_of_elements() {
        let c = cfg();
        let grid = Arc::new(make_grid(Window::unit(), 0.5).unwrap());
        let beta: Vec<f64> = (0..9).map(|i| i as f64 - 4.0).collect();
        let e = GridElement::new(beta.clone(), Arc::clone(&grid), c).unwrap();
        assert_eq!(mean_element(std::slice::from_ref(&e)).unwrap().beta(), &beta[..]);
        let neg = GridElement::new(beta.iter().map(|b| -b).collect(), Arc::clone(&grid), c).unwrap();
        assert!(mean_element(&[e.clone(), neg]).unwrap().beta().iter().all(|&b| b == 0.0));
        assert!(mean_element(&[]).is_err());
        let other = GridElement::zero(Arc::new(make_grid(Window::unit(), 0.25).unwrap()), c);
        assert!(matches!(mean_element(&[e, other]), Err(Error::GridMismatch)));
    }

    #[test]
    fn minimal_gamma_search() {
        let ev = [4.0, 1.0, 1e-20, 0.0];
        let g = minimal_gamma(&ev, 1e12).unwrap();
        assert!((4.0 + g * 4.0) / (g * 4.0) < 1e12);
        let smaller = g / 10f64.powf(0.1);
        assert!((4.0 + smaller * 4.0) / (smaller * 4.0) >= 1e12);
    }

    #[test]
    fn field_export() {
        let c = cfg();
        let grid = make_grid(Window::unit(), 0.25).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("f.csv");
        export_field(&RkhsElement::zero(c), &grid, &path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next(), Some("x,y,value"));
        assert!(lines.all(|l| l.ends_with(",0")));

        let centre = RkhsElement::section(Point::new(0.5, 0.5), c);
        export_field(&centre, &grid, &path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        let best = text
            .lines()
            .skip(1)
            .max_by(|a, b| {
                let va: f64 = a.rsplit(',').next().unwrap().parse().unwrap();
                let vb: f64 = b.rsplit(',').next().unwrap().parse().unwrap();
                va.total_cmp(&vb)
            })
            .unwrap();
        assert_eq!(best, "0.5,0.5,1");
    }
}
