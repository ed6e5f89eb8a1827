//! Pattern -> embedding -> grid smoothing -> truncated spectral features.

use std::path::Path;
use std::sync::Arc;

use rayon::prelude::*;

use crate::config::PipelineConfig;
use crate::error::{Error, Result};
use crate::kernel::{embed, gram_matrix, GridElement, KernelConfig, Smoother};
use crate::pointpat::{make_grid, Grid, LabeledPatternSet, PointPattern};
use crate::spectral::{
    load_or_compute_basis, project, spectral_basis_from_gram, FeatureTable, FeatureVector, SpectralBasis,
};

/// Everything that depends only on the configuration: grid, factored
/// representer system and eigenbasis.
#[derive(Debug)]
pub struct FeaturePipeline {
    config: PipelineConfig,
    kernel: KernelConfig,
    smoother: Smoother,
    basis: SpectralBasis,
}

impl FeaturePipeline {
    pub fn new(config: PipelineConfig) -> Result<Self> {
        config.validate()?;
        let kernel = config.kernel()?;
        let grid = Arc::new(make_grid(config.window, config.h)?);
        let gram = gram_matrix(grid.anchors(), &kernel)?;
        let basis = spectral_basis_from_gram(Arc::clone(&grid), kernel, config.rank_tol, gram.clone())?;
        let smoother = Smoother::from_gram(grid, kernel, config.gamma, gram)?.with_tol_solve(config.tol_solve);
        Self::assemble(config, kernel, smoother, basis)
    }

    /// Like [`FeaturePipeline::new`] but reuses an eigenbasis cached in
    /// `dir`. The flag reports a cache hit.
    pub fn with_cache(config: PipelineConfig, dir: &Path) -> Result<(Self, bool)> {
        config.validate()?;
        let kernel = config.kernel()?;
        let grid = Arc::new(make_grid(config.window, config.h)?);
        let (basis, hit) = load_or_compute_basis(dir, Arc::clone(&grid), kernel, config.rank_tol)?;
        let smoother = Smoother::new(grid, kernel, config.gamma)?.with_tol_solve(config.tol_solve);
        Ok((Self::assemble(config, kernel, smoother, basis)?, hit))
    }

    fn assemble(config: PipelineConfig, kernel: KernelConfig, smoother: Smoother, basis: SpectralBasis) -> Result<Self> {
        if config.r > basis.rank() {
            return Err(Error::invalid(format!(
                "truncation order {} exceeds the numerical rank {} of the Gram matrix",
                config.r,
                basis.rank()
            )));
        }
        Ok(FeaturePipeline {
            config,
            kernel,
            smoother,
            basis,
        })
    }

    pub fn config(&self) -> &PipelineConfig {
        &self.config
    }

    pub fn kernel(&self) -> &KernelConfig {
        &self.kernel
    }

    pub fn grid(&self) -> &Arc<Grid> {
        self.smoother.grid()
    }

    pub fn basis(&self) -> &SpectralBasis {
        &self.basis
    }

    pub fn smoother(&self) -> &Smoother {
        &self.smoother
    }

    fn check_window(&self, pattern: &PointPattern) -> Result<()> {
        if pattern.window() != &self.config.window {
            return Err(Error::invalid("pattern window differs from the configured window"));
        }
        Ok(())
    }

    pub fn smooth(&self, pattern: &PointPattern) -> Result<GridElement> {
        self.check_window(pattern)?;
        self.smoother.smooth(&embed(pattern, &self.kernel))
    }

    pub fn features(&self, pattern: &PointPattern) -> Result<FeatureVector> {
        let mut f = project(&self.smooth(pattern)?, &self.basis, self.config.r)?;
        f.label = pattern.label.clone();
        Ok(f)
    }

    /// Parallel over patterns; output order follows input order.
    pub fn features_all(&self, patterns: &[PointPattern]) -> Result<Vec<FeatureVector>> {
        patterns.par_iter().map(|p| self.features(p)).collect()
    }

    pub fn smooth_all(&self, patterns: &[PointPattern]) -> Result<Vec<GridElement>> {
        patterns.par_iter().map(|p| self.smooth(p)).collect()
    }

    pub fn feature_table(&self, set: &LabeledPatternSet) -> Result<FeatureTable> {
        let features = self.features_all(set.patterns())?;
        Ok(FeatureTable {
            ids: (0..set.len()).map(|i| set.pattern_id(i)).collect(),
            labels: set.patterns().iter().map(|p| p.label.clone()).collect(),
            rows: features.into_iter().map(|f| f.mu).collect(),
        })
    }
}
