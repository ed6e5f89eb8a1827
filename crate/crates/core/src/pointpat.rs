//! Point patterns, rectangular windows, anchor grids and seeded simulators.
//!
//! All simulators draw from [`ChaCha8Rng`] seeded with a single `u64` per
//! pattern. Given the same parameters and seed a simulator returns the same
//! pattern within a build; bit-identity across builds of the dependency
//! stack is not promised.
//!
//! # Pattern CSV
//!
//! ```text
//! #window,0,1,0,1
//! p01,normal,0.31,0.74
//! p01,normal,0.12,0.05
//! p02,,,
//! ```
//!
//! Rows are `pattern_id,label,x,y`. The rows of one pattern are contiguous.
//! A row whose `x` and `y` fields are both empty declares a pattern with no
//! points; an empty label marks an unlabeled pattern.

use std::collections::HashSet;
use std::io::Write;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::write_atomic;

/// A location in the plane.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub const fn new(x: f64, y: f64) -> Self {
        Point { x, y }
    }

    #[inline]
    pub fn dist2(&self, other: &Point) -> f64 {
        let dx = self.x - other.x;
        let dy = self.y - other.y;
        dx * dx + dy * dy
    }
}

/// Closed axis-aligned rectangle `[xmin, xmax] x [ymin, ymax]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Window {
    xmin: f64,
    xmax: f64,
    ymin: f64,
    ymax: f64,
}

impl Window {
    pub fn new(xmin: f64, xmax: f64, ymin: f64, ymax: f64) -> Result<Self> {
        let finite = [xmin, xmax, ymin, ymax].iter().all(|v| v.is_finite());
        if !finite || xmax <= xmin || ymax <= ymin {
            return Err(Error::invalid(format!(
                "degenerate window [{xmin}, {xmax}] x [{ymin}, {ymax}]"
            )));
        }
        Ok(Window {
            xmin,
            xmax,
            ymin,
            ymax,
        })
    }

    pub fn unit() -> Self {
        Window {
            xmin: 0.0,
            xmax: 1.0,
            ymin: 0.0,
            ymax: 1.0,
        }
    }

    pub fn xmin(&self) -> f64 {
        self.xmin
    }
    pub fn xmax(&self) -> f64 {
        self.xmax
    }
    pub fn ymin(&self) -> f64 {
        self.ymin
    }
    pub fn ymax(&self) -> f64 {
        self.ymax
    }
    pub fn width(&self) -> f64 {
        self.xmax - self.xmin
    }
    pub fn height(&self) -> f64 {
        self.ymax - self.ymin
    }
    pub fn area(&self) -> f64 {
        self.width() * self.height()
    }

    /// Closed-boundary membership.
    pub fn contains(&self, p: &Point) -> bool {
        p.x >= self.xmin && p.x <= self.xmax && p.y >= self.ymin && p.y <= self.ymax
    }

    fn check(&self, p: &Point) -> Result<()> {
        if self.contains(p) {
            Ok(())
        } else {
            Err(Error::OutsideWindow {
                x: p.x,
                y: p.y,
                xmin: self.xmin,
                xmax: self.xmax,
                ymin: self.ymin,
                ymax: self.ymax,
            })
        }
    }

    fn uniform_point<R: Rng>(&self, rng: &mut R) -> Point {
        Point::new(
            self.xmin + self.width() * rng.random::<f64>(),
            self.ymin + self.height() * rng.random::<f64>(),
        )
    }
}

/// A finite point configuration observed in a window.
#[derive(Debug, Clone, PartialEq)]
pub struct PointPattern {
    points: Vec<Point>,
    window: Window,
    pub label: Option<String>,
    pub id: Option<String>,
}

impl PointPattern {
    /// Fails with [`Error::OutsideWindow`] if any point is not in `window`.
    pub fn new(points: Vec<Point>, window: Window) -> Result<Self> {
        for p in &points {
            if !p.x.is_finite() || !p.y.is_finite() {
                return Err(Error::invalid("non-finite coordinate"));
            }
            window.check(p)?;
        }
        Ok(PointPattern {
            points,
            window,
            label: None,
            id: None,
        })
    }

    pub fn empty(window: Window) -> Self {
        PointPattern {
            points: Vec::new(),
            window,
            label: None,
            id: None,
        }
    }

    pub fn with_label(mut self, label: impl Into<String>) -> Self {
        self.label = Some(label.into());
        self
    }

    pub fn with_id(mut self, id: impl Into<String>) -> Self {
        self.id = Some(id.into());
        self
    }

    pub fn points(&self) -> &[Point] {
        &self.points
    }

    pub fn window(&self) -> &Window {
        &self.window
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

/// Regular lattice of anchors covering a window, endpoints included.
///
/// Anchors are stored row-major: `x` varies fastest, so anchor `(i, j)` sits
/// at index `j * nx + i` with coordinates `(xmin + i*h, ymin + j*h)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid {
    anchors: Vec<Point>,
    step: f64,
    window: Window,
    nx: usize,
    ny: usize,
}

/// Slack for the floor in `width / h` so that e.g. `1.0 / 0.02` yields 50.
const LATTICE_EPS: f64 = 1e-9;

pub fn make_grid(window: Window, h: f64) -> Result<Grid> {
    if !(h > 0.0) || !h.is_finite() {
        return Err(Error::invalid(format!("grid step must be positive, got {h}")));
    }
    if h > window.width().min(window.height()) * (1.0 + LATTICE_EPS) {
        return Err(Error::invalid(format!(
            "grid step {h} exceeds the shorter window side"
        )));
    }
    let nx = (window.width() / h + LATTICE_EPS).floor() as usize + 1;
    let ny = (window.height() / h + LATTICE_EPS).floor() as usize + 1;
    let mut anchors = Vec::with_capacity(nx * ny);
    for j in 0..ny {
        let y = (window.ymin + j as f64 * h).min(window.ymax);
        for i in 0..nx {
            let x = (window.xmin + i as f64 * h).min(window.xmax);
            anchors.push(Point::new(x, y));
        }
    }
    Ok(Grid {
        anchors,
        step: h,
        window,
        nx,
        ny,
    })
}

impl Grid {
    pub fn anchors(&self) -> &[Point] {
        &self.anchors
    }
    pub fn step(&self) -> f64 {
        self.step
    }
    pub fn window(&self) -> &Window {
        &self.window
    }
    pub fn len(&self) -> usize {
        self.anchors.len()
    }
    pub fn is_empty(&self) -> bool {
        self.anchors.is_empty()
    }
    /// Lattice shape `(nx, ny)`.
    pub fn shape(&self) -> (usize, usize) {
        (self.nx, self.ny)
    }

    /// Same lattice, without comparing every anchor.
    pub fn same_lattice(&self, other: &Grid) -> bool {
        self.window == other.window
            && self.step == other.step
            && self.nx == other.nx
            && self.ny == other.ny
    }
}

/// Patterns sharing one window.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledPatternSet {
    window: Window,
    patterns: Vec<PointPattern>,
}

impl LabeledPatternSet {
    pub fn new(window: Window, patterns: Vec<PointPattern>) -> Result<Self> {
        let mut seen = HashSet::new();
        for p in &patterns {
            if p.window != window {
                return Err(Error::invalid("pattern window differs from set window"));
            }
            if let Some(id) = &p.id {
                if !seen.insert(id.clone()) {
                    return Err(Error::DuplicatePatternId(id.clone()));
                }
            }
        }
        Ok(LabeledPatternSet { window, patterns })
    }

    pub fn window(&self) -> &Window {
        &self.window
    }

    pub fn patterns(&self) -> &[PointPattern] {
        &self.patterns
    }

    pub fn into_patterns(self) -> Vec<PointPattern> {
        self.patterns
    }

    pub fn len(&self) -> usize {
        self.patterns.len()
    }

    pub fn is_empty(&self) -> bool {
        self.patterns.is_empty()
    }

    /// Distinct labels in lexicographic order.
    pub fn labels(&self) -> Vec<String> {
        let mut labels: Vec<String> = self
            .patterns
            .iter()
            .filter_map(|p| p.label.clone())
            .collect();
        labels.sort();
        labels.dedup();
        labels
    }

    /// Checks the requirements for tests and classifiers: every pattern
    /// labeled and at least two distinct labels.
    pub fn require_labeled(&self) -> Result<()> {
        if let Some(i) = self.patterns.iter().position(|p| p.label.is_none()) {
            return Err(Error::invalid(format!("pattern #{i} has no label")));
        }
        if self.labels().len() < 2 {
            return Err(Error::InsufficientData(
                "need at least two distinct labels".into(),
            ));
        }
        Ok(())
    }

    /// Pattern id, or `p<index>` (1-based, zero padded) when absent.
    pub fn pattern_id(&self, index: usize) -> String {
        self.patterns[index]
            .id
            .clone()
            .unwrap_or_else(|| format!("p{:03}", index + 1))
    }
}

// -- seeding -----------------------------------------------------------------

/// SplitMix64 finalizer.
fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derives an independent per-pattern seed from a run seed, a stream tag
/// (e.g. the class index) and the pattern index.
pub fn derive_seed(seed: u64, stream: u64, index: u64) -> u64 {
    mix64(mix64(mix64(seed) ^ stream.wrapping_mul(0xD6E8_FEB8_6659_FD93)) ^ index)
}

fn rng_for(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn poisson_count<R: Rng>(mean: f64, rng: &mut R) -> Result<usize> {
    if mean == 0.0 {
        return Ok(0);
    }
    let dist = Poisson::new(mean).map_err(|e| Error::invalid(format!("poisson mean {mean}: {e}")))?;
    Ok(dist.sample(rng) as usize)
}

// -- simulators --------------------------------------------------------------

/// Homogeneous Poisson process with intensity `lambda` per unit area.
pub fn simulate_hppp(lambda: f64, window: Window, seed: u64) -> Result<PointPattern> {
    if !(lambda >= 0.0) || !lambda.is_finite() {
        return Err(Error::invalid(format!("intensity must be >= 0, got {lambda}")));
    }
    let mut rng = rng_for(seed);
    let n = poisson_count(lambda * window.area(), &mut rng)?;
    let points = (0..n).map(|_| window.uniform_point(&mut rng)).collect();
    Ok(PointPattern {
        points,
        window,
        label: None,
        id: None,
    })
}

/// Full output of one cluster-process draw.
#[derive(Debug, Clone)]
pub struct ClusterRealization {
    pub pattern: PointPattern,
    pub parents: Vec<Point>,
    /// Offspring count before clipping, always `parents.len() * cluster_size`.
    pub unclipped: usize,
}

/// Poisson cluster process: parents form an HPPP(`kappa`) in the window and
/// each parent gets exactly `cluster_size` offspring uniform in the closed
/// disc of `radius` around it. Offspring outside the window are discarded.
pub fn simulate_pcpp(
    kappa: f64,
    cluster_size: usize,
    radius: f64,
    window: Window,
    seed: u64,
) -> Result<PointPattern> {
    simulate_pcpp_detailed(kappa, cluster_size, radius, window, seed).map(|r| r.pattern)
}

pub fn simulate_pcpp_detailed(
    kappa: f64,
    cluster_size: usize,
    radius: f64,
    window: Window,
    seed: u64,
) -> Result<ClusterRealization> {
    if !(kappa >= 0.0) || !kappa.is_finite() {
        return Err(Error::invalid(format!("parent intensity must be >= 0, got {kappa}")));
    }
    if !(radius > 0.0) || !radius.is_finite() {
        return Err(Error::invalid(format!("cluster radius must be > 0, got {radius}")));
    }
    let mut rng = rng_for(seed);
    let n_parents = poisson_count(kappa * window.area(), &mut rng)?;
    let parents: Vec<Point> = (0..n_parents).map(|_| window.uniform_point(&mut rng)).collect();
    let mut points = Vec::with_capacity(n_parents * cluster_size);
    for parent in &parents {
        for _ in 0..cluster_size {
            // sqrt of a uniform radius fraction gives area-uniform samples
            let rho = radius * rng.random::<f64>().sqrt();
            let theta = std::f64::consts::TAU * rng.random::<f64>();
            let p = Point::new(parent.x + rho * theta.cos(), parent.y + rho * theta.sin());
            if window.contains(&p) {
                points.push(p);
            }
        }
    }
    Ok(ClusterRealization {
        pattern: PointPattern {
            points,
            window,
            label: None,
            id: None,
        },
        unclipped: parents.len() * cluster_size,
        parents,
    })
}

// -- CSV ---------------------------------------------------------------------

fn parse_f64(field: &str, what: &str, path: &Path, line: usize) -> Result<f64> {
    field.trim().parse::<f64>().map_err(|_| Error::Parse {
        path: path.to_path_buf(),
        line,
        msg: format!("cannot parse {what} `{field}`"),
    })
}

pub fn load_patterns(path: impl AsRef<Path>) -> Result<LabeledPatternSet> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path)?;
    parse_patterns(&text, path)
}

/// Parses pattern CSV text; `origin` is only used in error messages.
pub fn parse_patterns(text: &str, origin: &Path) -> Result<LabeledPatternSet> {
    let perr = |line: usize, msg: String| Error::Parse {
        path: origin.to_path_buf(),
        line,
        msg,
    };
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());

    let mut records = reader.records();
    let header = match records.next() {
        Some(rec) => rec?,
        None => return Err(perr(1, "missing `#window` header".into())),
    };
    if header.len() != 5 || header.get(0) != Some("#window") {
        return Err(perr(1, "expected `#window,xmin,xmax,ymin,ymax`".into()));
    }
    let w: Vec<f64> = (1..5)
        .map(|i| parse_f64(&header[i], "window bound", origin, 1))
        .collect::<Result<_>>()?;
    let window = Window::new(w[0], w[1], w[2], w[3])?;

    let mut patterns: Vec<PointPattern> = Vec::new();
    let mut seen: HashSet<String> = HashSet::new();
    for rec in records {
        let rec = rec?;
        let line = rec.position().map(|p| p.line() as usize).unwrap_or(0);
        if rec.len() == 1 && rec[0].is_empty() {
            continue;
        }
        if rec.len() != 4 {
            return Err(perr(line, format!("expected 4 fields, found {}", rec.len())));
        }
        let id = &rec[0];
        if id.is_empty() {
            return Err(perr(line, "empty pattern id".into()));
        }
        let label = (!rec[1].is_empty()).then(|| rec[1].to_string());

        let continuing = patterns
            .last()
            .is_some_and(|p| p.id.as_deref() == Some(id));
        if !continuing {
            if !seen.insert(id.to_string()) {
                return Err(Error::DuplicatePatternId(id.to_string()));
            }
            patterns.push(PointPattern {
                points: Vec::new(),
                window,
                label: label.clone(),
                id: Some(id.to_string()),
            });
        }
        let current = patterns.last_mut().expect("pattern pushed above");
        if current.label != label {
            return Err(perr(line, format!("label changes within pattern `{id}`")));
        }
        match (rec[2].is_empty(), rec[3].is_empty()) {
            (true, true) => {}
            (false, false) => {
                let p = Point::new(
                    parse_f64(&rec[2], "x", origin, line)?,
                    parse_f64(&rec[3], "y", origin, line)?,
                );
                if !p.x.is_finite() || !p.y.is_finite() {
                    return Err(perr(line, "non-finite coordinate".into()));
                }
                window.check(&p)?;
                current.points.push(p);
            }
            _ => return Err(perr(line, "only one coordinate given".into())),
        }
    }
    LabeledPatternSet::new(window, patterns)
}

pub fn format_patterns(set: &LabeledPatternSet) -> String {
    let w = set.window();
    let mut out = format!(
        "#window,{},{},{},{}\n",
        w.xmin(),
        w.xmax(),
        w.ymin(),
        w.ymax()
    );
    for (i, p) in set.patterns().iter().enumerate() {
        let id = set.pattern_id(i);
        let label = p.label.as_deref().unwrap_or("");
        if p.is_empty() {
            out.push_str(&format!("{id},{label},,\n"));
        }
        for q in p.points() {
            // `{}` on f64 prints the shortest representation that round-trips
            out.push_str(&format!("{id},{label},{},{}\n", q.x, q.y));
        }
    }
    out
}

pub fn save_patterns(set: &LabeledPatternSet, path: impl AsRef<Path>) -> Result<()> {
    for p in set.patterns() {
        for field in [p.id.as_deref(), p.label.as_deref()].into_iter().flatten() {
            if field.contains([',', '\n', '"']) {
                return Err(Error::invalid(format!("id/label `{field}` contains a separator")));
            }
        }
    }
    write_atomic(path.as_ref(), |f| f.write_all(format_patterns(set).as_bytes()))
}
