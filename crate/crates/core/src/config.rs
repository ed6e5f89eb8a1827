//! Pipeline parameters and the `section.key=value` config file.
//!
//! ```text
//! # defaults for the pyramidal-neuron analysis
//! window.bounds=0,1,0,1
//! kernel.sigma=0.05
//! kernel.form=gaussian
//! grid.h=0.02
//! smooth.gamma=0.000127
//! spectral.r=6
//! run.seed=1
//! ```

use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::kernel::{KernelConfig, KernelForm, DEFAULT_TOL_SOLVE};
use crate::pointpat::Window;
use crate::spectral::DEFAULT_RANK_TOL;

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    pub window: Window,
    pub h: f64,
    pub sigma: f64,
    pub form: KernelForm,
    pub gamma: f64,
    pub r: usize,
    pub seed: u64,
    pub rank_tol: f64,
    pub tol_solve: f64,
    /// Covariance ridge for exploratory classification; 0 disables it.
    pub ridge: f64,
    pub cache_dir: Option<PathBuf>,
}

impl Default for PipelineConfig {
    /// Parameters of the real-data analysis: sigma 0.05, h 0.02,
    /// gamma 0.000127, r 6 on the unit square.
    fn default() -> Self {
        PipelineConfig {
            window: Window::unit(),
            h: 0.02,
            sigma: 0.05,
            form: KernelForm::Gaussian,
            gamma: 0.000127,
            r: 6,
            seed: 1,
            rank_tol: DEFAULT_RANK_TOL,
            tol_solve: DEFAULT_TOL_SOLVE,
            ridge: 0.0,
            cache_dir: None,
        }
    }
}

impl PipelineConfig {
    /// Parameters of the simulation experiments: sigma 0.02, h 0.05, r 7.
    pub fn experiment() -> Self {
        PipelineConfig {
            h: 0.05,
            sigma: 0.02,
            r: 7,
            ..Self::default()
        }
    }

    pub fn kernel(&self) -> Result<KernelConfig> {
        KernelConfig::with_form(self.sigma, self.form)
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("grid.h", self.h),
            ("kernel.sigma", self.sigma),
            ("smooth.gamma", self.gamma),
            ("smooth.tol_solve", self.tol_solve),
            ("spectral.rank_tol", self.rank_tol),
        ];
        for (key, v) in positive {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::invalid(format!("{key} must be positive, got {v}")));
            }
        }
        if self.r == 0 {
            return Err(Error::invalid("spectral.r must be at least 1"));
        }
        if !(self.ridge >= 0.0) {
            return Err(Error::invalid("classify.ridge must be >= 0"));
        }
        if self.h > self.window.width().min(self.window.height()) {
            return Err(Error::invalid("grid.h exceeds the window size"));
        }
        Ok(())
    }

    /// Applies `key=value` lines on top of `self`.
    pub fn apply_text(mut self, text: &str, origin: &Path) -> Result<Self> {
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let perr = |msg: String| Error::Parse {
                path: origin.to_path_buf(),
                line: i + 1,
                msg,
            };
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| perr(format!("expected `section.key=value`, got `{line}`")))?;
            self.set(key.trim(), value.trim()).map_err(|e| perr(e.to_string()))?;
        }
        Ok(self)
    }

    pub fn load(path: &Path, base: Self) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        base.apply_text(&text, path)
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        fn num<T: std::str::FromStr>(key: &str, v: &str) -> Result<T> {
            v.parse()
                .map_err(|_| Error::invalid(format!("{key}: cannot parse `{v}`")))
        }
        match key {
            "window.bounds" => {
                let b: Vec<f64> = value
                    .split(',')
                    .map(|s| num::<f64>(key, s.trim()))
                    .collect::<Result<_>>()?;
                if b.len() != 4 {
                    return Err(Error::invalid("window.bounds needs xmin,xmax,ymin,ymax"));
                }
                self.window = Window::new(b[0], b[1], b[2], b[3])?;
            }
            "kernel.sigma" => self.sigma = num(key, value)?,
            "kernel.form" => self.form = value.parse()?,
            "grid.h" => self.h = num(key, value)?,
            "smooth.gamma" => self.gamma = num(key, value)?,
            "smooth.tol_solve" => self.tol_solve = num(key, value)?,
            "spectral.r" => self.r = num(key, value)?,
            "spectral.rank_tol" => self.rank_tol = num(key, value)?,
            "run.seed" => self.seed = num(key, value)?,
            "classify.ridge" => self.ridge = num(key, value)?,
            "paths.cache" => self.cache_dir = Some(PathBuf::from(value)),
            other => return Err(Error::invalid(format!("unknown config key `{other}`"))),
        }
        Ok(())
    }

    /// Renders the config in the file format, one key per line.
    pub fn to_text(&self) -> String {
        let w = &self.window;
        let mut s = format!(
            "window.bounds={},{},{},{}\nkernel.sigma={}\nkernel.form={}\ngrid.h={}\nsmooth.gamma={}\n\
             smooth.tol_solve={}\nspectral.r={}\nspectral.rank_tol={}\nrun.seed={}\nclassify.ridge={}\n",
            w.xmin(),
            w.xmax(),
            w.ymin(),
            w.ymax(),
            self.sigma,
            self.form,
            self.h,
            self.gamma,
            self.tol_solve,
            self.r,
            self.rank_tol,
            self.seed,
            self.ridge
        );
        if let Some(dir) = &self.cache_dir {
            s.push_str(&format!("paths.cache={}\n", dir.display()));
        }
        s
    }
}
