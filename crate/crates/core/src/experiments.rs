//! Seeded simulation scenarios and the supervised-classification
//! reproduction study.
//!
//! Three two-class scenarios on the unit square:
//!
//! | scenario            | class 1       | class 2                         | n per class | classifier |
//! |---------------------|---------------|---------------------------------|-------------|------------|
//! | `hppp-hppp-50-100`  | HPPP(50)      | HPPP(100)                       | 20          | LDA        |
//! | `hppp-hppp-90-100`  | HPPP(90)      | HPPP(100)                       | 20          | LDA        |
//! | `hppp-pcpp-36-36`   | HPPP(36)      | PCPP(kappa 6, 6 points, r 0.2)  | 30          | QDA        |
//!
//! Pattern `i` of class `c` under run seed `s` is drawn with
//! `derive_seed(s, c, i)`, so every pattern is reproducible on its own.

use std::fmt;
use std::io::Write;
use std::path::Path;
use std::str::FromStr;

use crate::classify::{fit, loocv, training_error, DiscriminantKind, PriorPolicy};
use crate::error::{Error, Result};
use crate::io::write_atomic;
use crate::mvstats::GroupedFeatures;
use crate::pipeline::FeaturePipeline;
use crate::pointpat::{derive_seed, simulate_hppp, simulate_pcpp, LabeledPatternSet, PointPattern, Window};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ProcessSpec {
    Hppp { lambda: f64 },
    Pcpp { kappa: f64, cluster_size: usize, radius: f64 },
}

impl ProcessSpec {
    pub fn simulate(&self, window: Window, seed: u64) -> Result<PointPattern> {
        match *self {
            ProcessSpec::Hppp { lambda } => simulate_hppp(lambda, window, seed),
            ProcessSpec::Pcpp {
                kappa,
                cluster_size,
                radius,
            } => simulate_pcpp(kappa, cluster_size, radius, window, seed),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Scenario {
    Hppp50vs100,
    Hppp90vs100,
    HpppVsPcpp36,
}

impl Scenario {
    pub const ALL: [Scenario; 3] = [Scenario::Hppp50vs100, Scenario::Hppp90vs100, Scenario::HpppVsPcpp36];

    pub fn name(&self) -> &'static str {
        match self {
            Scenario::Hppp50vs100 => "hppp-hppp-50-100",
            Scenario::Hppp90vs100 => "hppp-hppp-90-100",
            Scenario::HpppVsPcpp36 => "hppp-pcpp-36-36",
        }
    }

    pub fn description(&self) -> &'static str {
        match self {
            Scenario::Hppp50vs100 => "HPPP lambda=50 vs HPPP lambda=100, 20+20 patterns",
            Scenario::Hppp90vs100 => "HPPP lambda=90 vs HPPP lambda=100, 20+20 patterns",
            Scenario::HpppVsPcpp36 => "HPPP lambda=36 vs PCPP kappa=6 x 6 in r=0.2, 30+30 patterns",
        }
    }

    /// `(label, process)` per class.
    pub fn classes(&self) -> [(&'static str, ProcessSpec); 2] {
        match self {
            Scenario::Hppp50vs100 => [
                ("hppp050", ProcessSpec::Hppp { lambda: 50.0 }),
                ("hppp100", ProcessSpec::Hppp { lambda: 100.0 }),
            ],
            Scenario::Hppp90vs100 => [
                ("hppp090", ProcessSpec::Hppp { lambda: 90.0 }),
                ("hppp100", ProcessSpec::Hppp { lambda: 100.0 }),
            ],
            Scenario::HpppVsPcpp36 => [
                ("hppp036", ProcessSpec::Hppp { lambda: 36.0 }),
                (
                    "pcpp036",
                    ProcessSpec::Pcpp {
                        kappa: 6.0,
                        cluster_size: 6,
                        radius: 0.2,
                    },
                ),
            ],
        }
    }

    pub fn per_class(&self) -> usize {
        match self {
            Scenario::HpppVsPcpp36 => 30,
            _ => 20,
        }
    }

    /// Classifier used for the headline numbers.
    pub fn kind(&self) -> DiscriminantKind {
        match self {
            Scenario::HpppVsPcpp36 => DiscriminantKind::Quadratic,
            _ => DiscriminantKind::Linear,
        }
    }

    /// Published `(training, cross-validation)` error rates.
    pub fn reference(&self) -> (f64, f64) {
        match self {
            Scenario::Hppp50vs100 => (0.0, 0.0),
            Scenario::Hppp90vs100 => (0.1, 0.1755),
            Scenario::HpppVsPcpp36 => (0.05, 0.117),
        }
    }
}

impl fmt::Display for Scenario {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Scenario {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Scenario::ALL
            .into_iter()
            .find(|sc| sc.name() == s.trim())
            .ok_or_else(|| Error::invalid(format!("unknown scenario `{s}`")))
    }
}

pub fn simulate_scenario(scenario: Scenario, window: Window, seed: u64) -> Result<LabeledPatternSet> {
    let mut patterns = Vec::with_capacity(2 * scenario.per_class());
    for (c, (label, process)) in scenario.classes().iter().enumerate() {
        for i in 0..scenario.per_class() {
            let s = derive_seed(seed, c as u64, i as u64);
            patterns.push(
                process
                    .simulate(window, s)?
                    .with_label(*label)
                    .with_id(format!("{label}_{:02}", i + 1)),
            );
        }
    }
    LabeledPatternSet::new(window, patterns)
}

/// Errors of one simulated replicate.
#[derive(Debug, Clone, PartialEq)]
pub struct ReplicateOutcome {
    pub seed: u64,
    /// Resubstitution error of the scenario's classifier.
    pub training: f64,
    /// Leave-one-out error of the scenario's classifier.
    pub loocv: f64,
    /// Leave-one-out error of the other discriminant kind.
    pub alt_loocv: f64,
    /// Share of correctly classified LOOCV cases with posterior > 0.95.
    pub confident_correct: f64,
}

pub fn run_replicate(scenario: Scenario, pipeline: &FeaturePipeline, seed: u64) -> Result<ReplicateOutcome> {
    let set = simulate_scenario(scenario, pipeline.config().window, seed)?;
    let data = GroupedFeatures::from_features(&pipeline.features_all(set.patterns())?)?;
    let kind = scenario.kind();
    let alt = match kind {
        DiscriminantKind::Linear => DiscriminantKind::Quadratic,
        DiscriminantKind::Quadratic => DiscriminantKind::Linear,
    };
    let priors = PriorPolicy::default();
    let model = fit(&data, kind, &priors)?;
    let cv = loocv(&data, kind, &priors)?;
    let correct: Vec<f64> = cv
        .predictions
        .iter()
        .enumerate()
        .filter(|(i, p)| p.label == data.label(*i))
        .map(|(_, p)| p.posteriors[p.class_index])
        .collect();
    let confident_correct = if correct.is_empty() {
        0.0
    } else {
        correct.iter().filter(|&&p| p > 0.95).count() as f64 / correct.len() as f64
    };
    Ok(ReplicateOutcome {
        seed,
        training: training_error(&data, &model)?,
        loocv: cv.error_rate,
        alt_loocv: loocv(&data, alt, &priors)?.error_rate,
        confident_correct,
    })
}

/// Acceptance band for the mean errors of one scenario.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Band {
    pub training: (f64, f64),
    pub loocv: (f64, f64),
    /// Require mean alternative-kind LOOCV >= mean headline LOOCV.
    pub alt_not_better: bool,
}

impl Band {
    pub fn for_scenario(scenario: Scenario) -> Band {
        match scenario {
            Scenario::Hppp50vs100 => Band {
                training: (0.0, 0.0),
                loocv: (0.0, 0.05),
                alt_not_better: false,
            },
            Scenario::Hppp90vs100 => Band {
                training: (0.0, 0.25),
                loocv: (0.05, 0.35),
                alt_not_better: false,
            },
            Scenario::HpppVsPcpp36 => Band {
                training: (0.0, 1.0),
                loocv: (0.02, 0.30),
                alt_not_better: true,
            },
        }
    }
}

#[derive(Debug, Clone)]
pub struct ScenarioSummary {
    pub scenario: Scenario,
    pub replicates: Vec<ReplicateOutcome>,
    pub mean_training: f64,
    pub mean_loocv: f64,
    pub mean_alt_loocv: f64,
    pub band: Band,
}

impl ScenarioSummary {
    pub fn from_replicates(scenario: Scenario, replicates: Vec<ReplicateOutcome>) -> Self {
        let n = replicates.len().max(1) as f64;
        let mean = |f: fn(&ReplicateOutcome) -> f64| replicates.iter().map(f).sum::<f64>() / n;
        ScenarioSummary {
            scenario,
            mean_training: mean(|r| r.training),
            mean_loocv: mean(|r| r.loocv),
            mean_alt_loocv: mean(|r| r.alt_loocv),
            band: Band::for_scenario(scenario),
            replicates,
        }
    }

    pub fn training_ok(&self) -> bool {
        let (lo, hi) = self.band.training;
        self.mean_training >= lo && self.mean_training <= hi
    }

    pub fn loocv_ok(&self) -> bool {
        let (lo, hi) = self.band.loocv;
        self.mean_loocv >= lo && self.mean_loocv <= hi
    }

    pub fn ordering_ok(&self) -> bool {
        !self.band.alt_not_better || self.mean_alt_loocv >= self.mean_loocv
    }

    pub fn passed(&self) -> bool {
        self.training_ok() && self.loocv_ok() && self.ordering_ok()
    }
}

pub fn run_scenario(scenario: Scenario, pipeline: &FeaturePipeline, seeds: &[u64]) -> Result<ScenarioSummary> {
    let replicates = seeds
        .iter()
        .map(|&s| run_replicate(scenario, pipeline, s))
        .collect::<Result<Vec<_>>>()?;
    Ok(ScenarioSummary::from_replicates(scenario, replicates))
}

/// Known experiment ids for `reproduce`.
pub fn experiment_scenarios(id: &str) -> Result<Vec<Scenario>> {
    match id {
        "table2" => Ok(Scenario::ALL.to_vec()),
        other => other
            .parse::<Scenario>()
            .map(|s| vec![s])
            .map_err(|_| Error::invalid(format!("unknown experiment `{other}`"))),
    }
}

/// Parses `1..10` (inclusive), `3` or `1,4,9`.
pub fn parse_seeds(text: &str) -> Result<Vec<u64>> {
    let bad = || Error::invalid(format!("cannot parse seed list `{text}`"));
    let mut out = Vec::new();
    for part in text.split(',').map(str::trim).filter(|p| !p.is_empty()) {
        if let Some((a, b)) = part.split_once("..") {
            let a: u64 = a.trim().parse().map_err(|_| bad())?;
            let b: u64 = b.trim().trim_start_matches('=').parse().map_err(|_| bad())?;
            if b < a {
                return Err(bad());
            }
            out.extend(a..=b);
        } else {
            out.push(part.parse().map_err(|_| bad())?);
        }
    }
    if out.is_empty() {
        return Err(bad());
    }
    Ok(out)
}

fn band_text((lo, hi): (f64, f64)) -> String {
    format!("[{lo}, {hi}]")
}

/// Markdown report comparing mean errors with the published values.
pub fn render_report(summaries: &[ScenarioSummary], pipeline: &FeaturePipeline) -> String {
    let c = pipeline.config();
    let mut s = String::from("# Supervised classification reproduction\n\n");
    s.push_str(&format!(
        "sigma = {}, h = {} ({} anchors), gamma = {}, r = {}, kernel = {}\n\n",
        c.sigma,
        c.h,
        pipeline.grid().len(),
        c.gamma,
        c.r,
        c.form
    ));
    s.push_str("| scenario | kind | seeds | reference train | reference CV | mean train | mean CV | mean CV (other kind) | train band | CV band | result |\n");
    s.push_str("|---|---|---|---|---|---|---|---|---|---|---|\n");
    for sm in summaries {
        let (rt, rc) = sm.scenario.reference();
        s.push_str(&format!(
            "| {} | {} | {} | {} | {} | {:.4} | {:.4} | {:.4} | {} | {} | {} |\n",
            sm.scenario,
            sm.scenario.kind(),
            sm.replicates.len(),
            rt,
            rc,
            sm.mean_training,
            sm.mean_loocv,
            sm.mean_alt_loocv,
            band_text(sm.band.training),
            band_text(sm.band.loocv),
            if sm.passed() { "PASS" } else { "FAIL" }
        ));
    }
    s.push('\n');
    for sm in summaries {
        let conf = sm.replicates.iter().map(|r| r.confident_correct).sum::<f64>() / sm.replicates.len().max(1) as f64;
        s.push_str(&format!(
            "- {}: {}. Mean share of correct LOOCV cases with posterior > 0.95: {:.3}.\n",
            sm.scenario,
            sm.scenario.description(),
            conf
        ));
    }
    s
}

pub fn write_summary_csv(summaries: &[ScenarioSummary], path: &Path) -> Result<()> {
    write_atomic(path, |w| {
        writeln!(
            w,
            "scenario,kind,seeds,reference_training,reference_loocv,mean_training,mean_loocv,mean_alt_loocv,passed"
        )?;
        for sm in summaries {
            let (rt, rc) = sm.scenario.reference();
            writeln!(
                w,
                "{},{},{},{},{},{},{},{},{}",
                sm.scenario,
                sm.scenario.kind(),
                sm.replicates.len(),
                rt,
                rc,
                sm.mean_training,
                sm.mean_loocv,
                sm.mean_alt_loocv,
                sm.passed()
            )?;
        }
        Ok(())
    })
}

pub fn write_replicates_csv(summaries: &[ScenarioSummary], path: &Path) -> Result<()> {
    write_atomic(path, |w| {
        writeln!(w, "scenario,seed,training,loocv,alt_loocv,confident_correct")?;
        for sm in summaries {
            for r in &sm.replicates {
                writeln!(
                    w,
                    "{},{},{},{},{},{}",
                    sm.scenario, r.seed, r.training, r.loocv, r.alt_loocv, r.confident_correct
                )?;
            }
        }
        Ok(())
    })
}
