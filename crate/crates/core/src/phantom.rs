//! Synthetic phantoms and simulated observations.

use rand_distr::{Distribution, StandardNormal};

use crate::error::{Result, SepError};
use crate::model::{apply_operator, HierarchicalModel, ImageGrid, LinearOperatorSpec};
use crate::rng::{stream, tags};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PhantomKind {
    Cylinder,
    FourCircles,
}

impl std::str::FromStr for PhantomKind {
    type Err = SepError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "cylinder" => Ok(Self::Cylinder),
            "four_circles" | "four-circles" => Ok(Self::FourCircles),
            other => Err(SepError::Config(format!("unknown phantom kind '{other}'"))),
        }
    }
}

/// A filled disk in pixel coordinates (row, col of the centre).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Disk {
    pub center_row: f64,
    pub center_col: f64,
    pub radius: f64,
}

impl Disk {
    pub fn contains(&self, i: usize, j: usize) -> bool {
        let di = i as f64 - self.center_row;
        let dj = j as f64 - self.center_col;
        di * di + dj * dj <= self.radius * self.radius
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PhantomSpec {
    pub kind: PhantomKind,
    pub rows: usize,
    pub cols: usize,
    pub intensity: f64,
    pub disks: Vec<Disk>,
}

impl PhantomSpec {
    /// Centred disk of radius `0.3 min(rows, cols)`.
    pub fn cylinder(rows: usize, cols: usize, intensity: f64) -> Self {
        let radius = 0.3 * rows.min(cols) as f64;
        let disk = Disk {
            center_row: (rows as f64 - 1.0) / 2.0,
            center_col: (cols as f64 - 1.0) / 2.0,
            radius,
        };
        Self {
            kind: PhantomKind::Cylinder,
            rows,
            cols,
            intensity,
            disks: vec![disk],
        }
    }

    /// One disk of radius `0.12 min(rows, cols)` centred in each quadrant.
    pub fn four_circles(rows: usize, cols: usize, intensity: f64) -> Self {
        let radius = 0.12 * rows.min(cols) as f64;
        let (r, c) = (rows as f64, cols as f64);
        let disks = [(0.25, 0.25), (0.25, 0.75), (0.75, 0.25), (0.75, 0.75)]
            .iter()
            .map(|&(fr, fc)| Disk {
                center_row: fr * r - 0.5,
                center_col: fc * c - 0.5,
                radius,
            })
            .collect();
        Self {
            kind: PhantomKind::FourCircles,
            rows,
            cols,
            intensity,
            disks,
        }
    }

    pub fn with_kind(kind: PhantomKind, rows: usize, cols: usize, intensity: f64) -> Self {
        match kind {
            PhantomKind::Cylinder => Self::cylinder(rows, cols, intensity),
            PhantomKind::FourCircles => Self::four_circles(rows, cols, intensity),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.rows == 0 || self.cols == 0 {
            return Err(SepError::Shape("phantom grid must be non-empty".into()));
        }
        if !(self.intensity > 0.0) || !self.intensity.is_finite() {
            return Err(SepError::Domain(format!(
                "intensity must be positive, got {}",
                self.intensity
            )));
        }
        for d in &self.disks {
            let fits = d.radius > 0.0
                && d.center_row - d.radius >= -0.5
                && d.center_col - d.radius >= -0.5
                && d.center_row + d.radius <= self.rows as f64 - 0.5
                && d.center_col + d.radius <= self.cols as f64 - 0.5;
            if !fits {
                return Err(SepError::Domain(format!(
                    "disk {d:?} does not fit in a {}x{} grid",
                    self.rows, self.cols
                )));
            }
        }
        Ok(())
    }
}

/// Binary image: `intensity` inside any disk, zero elsewhere.
pub fn make_phantom(spec: &PhantomSpec) -> Result<ImageGrid> {
    spec.validate()?;
    ImageGrid::from_fn(spec.rows, spec.cols, |i, j| {
        if spec.disks.iter().any(|d| d.contains(i, j)) {
            spec.intensity
        } else {
            0.0
        }
    })
}

/// `y = G x + e` with `e ~ N(0, noise_sd^2)` per pixel.
pub fn simulate_observation(x: &ImageGrid, model: &HierarchicalModel, noise_sd: f64, seed: u64) -> Result<ImageGrid> {
    if !(noise_sd > 0.0) || !noise_sd.is_finite() {
        return Err(SepError::Domain(format!("noise sd must be positive, got {noise_sd}")));
    }
    let gx = apply_operator(&model.forward, x)?;
    let mut rng = stream(seed, tags::PHANTOM_NOISE);
    gx.map(|m| {
        let z: f64 = StandardNormal.sample(&mut rng);
        m + noise_sd * z
    })
}

/// Rescales `x` so that the mean of `(L x)^2` equals `1 / precision`, i.e. the
/// field has the given empirical prior precision.
pub fn scale_to_prior_precision(x: &ImageGrid, l: &LinearOperatorSpec, precision: f64) -> Result<ImageGrid> {
    if !(precision > 0.0) {
        return Err(SepError::Domain(format!("precision must be positive, got {precision}")));
    }
    let lx = apply_operator(l, x)?;
    let ms = lx.sum_squares() / lx.len() as f64;
    if !(ms > 0.0) {
        return Err(SepError::Domain("field has zero energy under L".into()));
    }
    let s = (1.0 / (precision * ms)).sqrt();
    x.map(|v| s * v)
}
