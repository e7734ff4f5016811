//! Per-pixel value grids and point annotations: the class-probability map,
//! boundary-strength maps, RGB images, target point labels and dense
//! pseudo-masks, plus a gradient-magnitude proxy for low-level contours.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::GridDims;

/// Tolerance for the per-pixel probability-sum invariant of [`SemanticMap`].
pub const PROB_SUM_TOL: f64 = 1e-6;

/// Per-pixel class-probability grid with `channels` classes.
///
/// Values are stored interleaved: `data[pixel * channels + class]`.
/// Construction checks finiteness; [`SemanticMap::validate_probabilities`]
/// additionally enforces the probability invariants and is applied at codec
/// and pipeline boundaries (loss evaluators accept perturbed, unnormalized
/// grids).
#[derive(Debug, Clone, PartialEq)]
pub struct SemanticMap {
    dims: GridDims,
    channels: usize,
    data: Vec<f64>,
}

impl SemanticMap {
    pub fn new(height: usize, width: usize, channels: usize, data: Vec<f64>) -> Result<Self> {
        let dims = GridDims::new(height, width)?;
        if channels == 0 {
            return Err(Error::InvalidArgument {
                name: "channels",
                reason: "need at least one class".into(),
            });
        }
        if data.len() != dims.pixels() * channels {
            return Err(Error::ShapeMismatch {
                context: "semantic map data",
                expected: (dims.pixels() * channels).to_string(),
                got: data.len().to_string(),
            });
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                context: "semantic map",
                index: i,
            });
        }
        Ok(Self {
            dims,
            channels,
            data,
        })
    }

    pub fn dims(&self) -> GridDims {
        self.dims
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn value(&self, pixel: usize, class: usize) -> f64 {
        self.data[pixel * self.channels + class]
    }

    pub fn pixel(&self, pixel: usize) -> &[f64] {
        &self.data[pixel * self.channels..(pixel + 1) * self.channels]
    }

    pub fn values(&self) -> &[f64] {
        &self.data
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    /// L1 distance between the class-probability vectors of two pixels.
    pub fn l1_distance(&self, a: usize, b: usize) -> f64 {
        self.pixel(a)
            .iter()
            .zip(self.pixel(b))
            .map(|(x, y)| (x - y).abs())
            .sum()
    }

    /// Class of largest probability at `pixel` (lowest class wins ties).
    pub fn argmax_class(&self, pixel: usize) -> usize {
        let mut best = 0;
        for c in 1..self.channels {
            if self.value(pixel, c) > self.value(pixel, best) {
                best = c;
            }
        }
        best
    }

    /// Checks that every pixel holds a probability vector: entries in [0,1]
    /// and summing to 1 within [`PROB_SUM_TOL`]. Reports the first offending
    /// pixel.
    pub fn validate_probabilities(&self) -> Result<()> {
        for j in 0..self.dims.pixels() {
            let mut sum = 0.0;
            for c in 0..self.channels {
                let v = self.value(j, c);
                if !(-PROB_SUM_TOL..=1.0 + PROB_SUM_TOL).contains(&v) {
                    return Err(Error::InvalidMap {
                        reason: format!("class {c} probability {v} outside [0,1]"),
                        pixel: j,
                    });
                }
                sum += v;
            }
            if (sum - 1.0).abs() > PROB_SUM_TOL {
                return Err(Error::InvalidMap {
                    reason: format!("probabilities sum to {sum}"),
                    pixel: j,
                });
            }
        }
        Ok(())
    }
}

/// One-channel boundary-strength grid with values in [0,1].
#[derive(Debug, Clone, PartialEq)]
pub struct BoundaryMap {
    dims: GridDims,
    data: Vec<f64>,
}

impl BoundaryMap {
    pub fn new(height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        let dims = GridDims::new(height, width)?;
        if data.len() != dims.pixels() {
            return Err(Error::ShapeMismatch {
                context: "boundary map data",
                expected: dims.pixels().to_string(),
                got: data.len().to_string(),
            });
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                context: "boundary map",
                index: i,
            });
        }
        Ok(Self { dims, data })
    }

    pub fn zeros(height: usize, width: usize) -> Result<Self> {
        let dims = GridDims::new(height, width)?;
        Ok(Self {
            dims,
            data: vec![0.0; dims.pixels()],
        })
    }

    pub fn dims(&self) -> GridDims {
        self.dims
    }

    pub fn value(&self, pixel: usize) -> f64 {
        self.data[pixel]
    }

    pub fn values(&self) -> &[f64] {
        &self.data
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn validate_range(&self) -> Result<()> {
        for (j, &v) in self.data.iter().enumerate() {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::InvalidMap {
                    reason: format!("boundary value {v} outside [0,1]"),
                    pixel: j,
                });
            }
        }
        Ok(())
    }

    /// Pointwise maximum of two boundary maps.
    pub fn combine_max(&self, other: &BoundaryMap) -> Result<BoundaryMap> {
        if self.dims != other.dims {
            return Err(Error::ShapeMismatch {
                context: "boundary map combination",
                expected: format!("{}x{}", self.dims.height, self.dims.width),
                got: format!("{}x{}", other.dims.height, other.dims.width),
            });
        }
        let data = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| a.max(*b))
            .collect();
        Ok(BoundaryMap {
            dims: self.dims,
            data,
        })
    }
}

/// RGB image grid; channels are conventionally in [0,1].
#[derive(Debug, Clone, PartialEq)]
pub struct RgbImage {
    dims: GridDims,
    data: Vec<f64>, // interleaved r,g,b per pixel
}

impl RgbImage {
    pub fn new(height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        let dims = GridDims::new(height, width)?;
        if data.len() != dims.pixels() * 3 {
            return Err(Error::ShapeMismatch {
                context: "rgb image data",
                expected: (dims.pixels() * 3).to_string(),
                got: data.len().to_string(),
            });
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                context: "rgb image",
                index: i,
            });
        }
        Ok(Self { dims, data })
    }

    pub fn dims(&self) -> GridDims {
        self.dims
    }

    pub fn rgb(&self, pixel: usize) -> [f64; 3] {
        [
            self.data[pixel * 3],
            self.data[pixel * 3 + 1],
            self.data[pixel * 3 + 2],
        ]
    }

    pub fn values(&self) -> &[f64] {
        &self.data
    }

    /// Rec. 601 luma.
    pub fn luminance(&self, pixel: usize) -> f64 {
        let [r, g, b] = self.rgb(pixel);
        0.299 * r + 0.587 * g + 0.114 * b
    }
}

/// Whether a target is a countable instance or an amorphous region.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TargetKind {
    Thing,
    Stuff,
}

impl TargetKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            TargetKind::Thing => "thing",
            TargetKind::Stuff => "stuff",
        }
    }

    pub fn parse(token: &str) -> Result<Self> {
        match token {
            "thing" => Ok(TargetKind::Thing),
            "stuff" => Ok(TargetKind::Stuff),
            other => Err(Error::InvalidPoints(format!(
                "unknown kind token {other:?} (expected thing|stuff)"
            ))),
        }
    }
}

/// One ground-truth point label: a single annotated pixel per target.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PointAnnotation {
    pub target_id: u32,
    pub class_id: usize,
    pub kind: TargetKind,
    pub x: usize,
    pub y: usize,
}

impl PointAnnotation {
    pub fn pixel(&self, dims: GridDims) -> usize {
        dims.index(self.x, self.y)
    }
}

/// Checks the annotation-set invariants against a grid and class count.
pub fn validate_points(
    points: &[PointAnnotation],
    dims: GridDims,
    channels: usize,
) -> Result<()> {
    if points.is_empty() {
        return Err(Error::InvalidPoints("annotation set is empty".into()));
    }
    let mut seen = std::collections::BTreeSet::new();
    for p in points {
        if p.target_id == 0 {
            return Err(Error::InvalidPoints("target_id 0 is reserved".into()));
        }
        if !seen.insert(p.target_id) {
            return Err(Error::InvalidPoints(format!(
                "duplicate target_id {}",
                p.target_id
            )));
        }
        if !dims.contains(p.x, p.y) {
            return Err(Error::InvalidPoints(format!(
                "point for target {} at ({},{}) outside {}x{} grid",
                p.target_id, p.x, p.y, dims.height, dims.width
            )));
        }
        if p.class_id >= channels {
            return Err(Error::InvalidPoints(format!(
                "class_id {} of target {} out of range (N_c = {channels})",
                p.class_id, p.target_id
            )));
        }
    }
    Ok(())
}

/// Dense per-pixel target assignment plus the target_id -> (class, kind)
/// lookup. Target ids are >= 1; 0 is reserved for unassigned intermediate
/// state and never appears in a finalized mask.
#[derive(Debug, Clone, PartialEq)]
pub struct PseudoMask {
    dims: GridDims,
    target: Vec<u32>,
    lookup: BTreeMap<u32, (usize, TargetKind)>,
}

impl PseudoMask {
    pub fn new(
        height: usize,
        width: usize,
        target: Vec<u32>,
        lookup: BTreeMap<u32, (usize, TargetKind)>,
    ) -> Result<Self> {
        let dims = GridDims::new(height, width)?;
        if target.len() != dims.pixels() {
            return Err(Error::ShapeMismatch {
                context: "pseudo mask data",
                expected: dims.pixels().to_string(),
                got: target.len().to_string(),
            });
        }
        if lookup.contains_key(&0) {
            return Err(Error::InvalidPoints("target_id 0 is reserved".into()));
        }
        for (j, &t) in target.iter().enumerate() {
            if !lookup.contains_key(&t) {
                return Err(Error::InvalidMap {
                    reason: format!("target id {t} missing from lookup"),
                    pixel: j,
                });
            }
        }
        Ok(Self {
            dims,
            target,
            lookup,
        })
    }

    pub fn dims(&self) -> GridDims {
        self.dims
    }

    pub fn target(&self, pixel: usize) -> u32 {
        self.target[pixel]
    }

    pub fn targets(&self) -> &[u32] {
        &self.target
    }

    pub fn lookup(&self) -> &BTreeMap<u32, (usize, TargetKind)> {
        &self.lookup
    }

    pub fn class_of(&self, target_id: u32) -> Option<usize> {
        self.lookup.get(&target_id).map(|&(c, _)| c)
    }

    pub fn kind_of(&self, target_id: u32) -> Option<TargetKind> {
        self.lookup.get(&target_id).map(|&(_, k)| k)
    }

    /// Pixel count per target id (targets with zero pixels keep a 0 entry).
    pub fn pixel_counts(&self) -> BTreeMap<u32, u64> {
        let mut counts: BTreeMap<u32, u64> = self.lookup.keys().map(|&t| (t, 0)).collect();
        for &t in &self.target {
            *counts.get_mut(&t).expect("validated at construction") += 1;
        }
        counts
    }
}

/// Low-level contour proxy: max-normalized gradient magnitude of the
/// luminance channel, from 3x3 central differences with clamped borders.
/// A constant image yields an all-zero map.
pub fn low_level_boundary(image: &RgbImage) -> BoundaryMap {
    let dims = image.dims();
    let (h, w) = (dims.height, dims.width);
    let luma: Vec<f64> = (0..dims.pixels()).map(|j| image.luminance(j)).collect();
    let at = |x: usize, y: usize| luma[dims.index(x, y)];
    let mut mag = vec![0.0; dims.pixels()];
    let mut max = 0.0f64;
    for y in 0..h {
        for x in 0..w {
            let xm = x.saturating_sub(1);
            let xp = (x + 1).min(w - 1);
            let ym = y.saturating_sub(1);
            let yp = (y + 1).min(h - 1);
            let gx = (at(xp, y) - at(xm, y)) / 2.0;
            let gy = (at(x, yp) - at(x, ym)) / 2.0;
            let g = (gx * gx + gy * gy).sqrt();
            mag[dims.index(x, y)] = g;
            max = max.max(g);
        }
    }
    if max > 0.0 {
        for v in mag.iter_mut() {
            *v /= max;
        }
    }
    BoundaryMap { dims, data: mag }
}

/// Pixels with an axis-adjacent neighbor of a different target id.
pub fn outline_pixels(mask: &PseudoMask) -> Vec<bool> {
    let dims = mask.dims();
    let mut outline = vec![false; dims.pixels()];
    for y in 0..dims.height {
        for x in 0..dims.width {
            let j = dims.index(x, y);
            for (dx, dy) in [(1isize, 0isize), (-1, 0), (0, 1), (0, -1)] {
                let nx = x as isize + dx;
                let ny = y as isize + dy;
                if nx >= 0
                    && ny >= 0
                    && dims.contains(nx as usize, ny as usize)
                    && mask.target(dims.index(nx as usize, ny as usize)) != mask.target(j)
                {
                    outline[j] = true;
                    break;
                }
            }
        }
    }
    outline
}
