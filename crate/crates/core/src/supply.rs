//! Per-supplier unit numbers: how many pixels each annotated point supplies
//! in the balanced transport problem.
//!
//! Three schemes: equal division of the pixel count, counting the
//! nearest-point assignment, and the centroid refinement that re-sources the
//! nearest assignment from region centroids before counting.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{build_cost_matrix, CostMatrix, EdgeWeightField, GridDims};
use crate::maps::PointAnnotation;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SupplyScheme {
    EqualDivision,
    NearestGt,
    NearestCentroid,
}

impl SupplyScheme {
    pub fn as_str(&self) -> &'static str {
        match self {
            SupplyScheme::EqualDivision => "equal_division",
            SupplyScheme::NearestGt => "nearest_gt",
            SupplyScheme::NearestCentroid => "nearest_centroid",
        }
    }

    pub fn parse(token: &str) -> Result<Self> {
        match token {
            "equal_division" => Ok(SupplyScheme::EqualDivision),
            "nearest_gt" => Ok(SupplyScheme::NearestGt),
            "nearest_centroid" => Ok(SupplyScheme::NearestCentroid),
            other => Err(Error::InvalidArgument {
                name: "scheme",
                reason: format!(
                    "unknown scheme {other:?} (expected equal_division|nearest_gt|nearest_centroid)"
                ),
            }),
        }
    }
}

/// Integer unit numbers per supplier; they always sum to the pixel count.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SupplyVector {
    pub counts: Vec<u64>,
    pub scheme: SupplyScheme,
    pub centroid_iterations: usize,
}

impl SupplyVector {
    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn as_f64(&self) -> Vec<f64> {
        self.counts.iter().map(|&c| c as f64).collect()
    }
}

/// Per-pixel supplier index chosen by minimum cost.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct InitialAssignment {
    label: Vec<usize>,
}

impl InitialAssignment {
    pub fn from_labels(label: Vec<usize>) -> Self {
        Self { label }
    }

    pub fn label(&self, pixel: usize) -> usize {
        self.label[pixel]
    }

    pub fn labels(&self) -> &[usize] {
        &self.label
    }
}

/// `label(j) = argmin_i cost(i,j)`, lowest supplier index on ties.
pub fn initial_assignment(cost: &CostMatrix) -> InitialAssignment {
    let mut label = vec![0usize; cost.n];
    for (j, slot) in label.iter_mut().enumerate() {
        let mut best = 0usize;
        let mut best_cost = cost.get(0, j);
        for i in 1..cost.m {
            let c = cost.get(i, j);
            if c < best_cost {
                best = i;
                best_cost = c;
            }
        }
        *slot = best;
    }
    InitialAssignment { label }
}

/// The owned pixel nearest (Euclidean, row-major order on ties) to the mean
/// coordinate of the supplier's region. A supplier owning no pixels keeps
/// `fallback` (its annotated point).
pub fn region_centroid(
    assignment: &InitialAssignment,
    dims: GridDims,
    supplier: usize,
    fallback: usize,
) -> usize {
    let mut count = 0.0f64;
    let mut sum_x = 0.0f64;
    let mut sum_y = 0.0f64;
    for (j, &label) in assignment.label.iter().enumerate() {
        if label == supplier {
            let (x, y) = dims.coords(j);
            sum_x += x as f64;
            sum_y += y as f64;
            count += 1.0;
        }
    }
    if count == 0.0 {
        return fallback;
    }
    let mean_x = sum_x / count;
    let mean_y = sum_y / count;
    let mut best = None;
    let mut best_d = f64::INFINITY;
    for (j, &label) in assignment.label.iter().enumerate() {
        if label == supplier {
            let (x, y) = dims.coords(j);
            let d = (x as f64 - mean_x).powi(2) + (y as f64 - mean_y).powi(2);
            if d < best_d {
                best_d = d;
                best = Some(j);
            }
        }
    }
    best.expect("count > 0")
}

/// Supplies plus the cost sources they imply: the annotated points for the
/// direct schemes, the final centroids for the centroid scheme.
#[derive(Debug, Clone)]
pub struct SupplyOutcome {
    pub supplies: SupplyVector,
    pub sources: Vec<usize>,
}

/// Computes unit numbers, reusing a precomputed point-source cost matrix.
pub fn compute_supplies_with_cost(
    weights: &EdgeWeightField,
    points: &[PointAnnotation],
    scheme: SupplyScheme,
    centroid_iterations: usize,
    point_cost: &CostMatrix,
) -> Result<SupplyOutcome> {
    let dims = weights.dims();
    let m = points.len();
    let n = dims.pixels();
    if m == 0 {
        return Err(Error::InvalidPoints("annotation set is empty".into()));
    }
    if scheme == SupplyScheme::NearestCentroid && centroid_iterations == 0 {
        return Err(Error::InvalidArgument {
            name: "centroid_iterations",
            reason: "must be >= 1".into(),
        });
    }
    let gt_pixels: Vec<usize> = points.iter().map(|p| p.pixel(dims)).collect();
    if point_cost.m != m || point_cost.n != n {
        return Err(Error::ShapeMismatch {
            context: "point cost matrix",
            expected: format!("{m}x{n}"),
            got: format!("{}x{}", point_cost.m, point_cost.n),
        });
    }

    let (counts, sources) = match scheme {
        SupplyScheme::EqualDivision => {
            let base = (n / m) as u64;
            let rem = n % m;
            let counts = (0..m)
                .map(|i| base + if i < rem { 1 } else { 0 })
                .collect();
            (counts, gt_pixels)
        }
        SupplyScheme::NearestGt => {
            let assignment = initial_assignment(point_cost);
            (count_labels(&assignment, m), gt_pixels)
        }
        SupplyScheme::NearestCentroid => {
            let mut assignment = initial_assignment(point_cost);
            let mut sources = gt_pixels.clone();
            for _ in 0..centroid_iterations {
                sources = (0..m)
                    .map(|i| region_centroid(&assignment, dims, i, gt_pixels[i]))
                    .collect();
                let cost = build_cost_matrix(weights, &sources)?;
                assignment = initial_assignment(&cost);
            }
            (count_labels(&assignment, m), sources)
        }
    };

    Ok(SupplyOutcome {
        supplies: SupplyVector {
            counts,
            scheme,
            centroid_iterations,
        },
        sources,
    })
}

/// Computes unit numbers from the annotated points alone.
pub fn compute_supplies(
    weights: &EdgeWeightField,
    points: &[PointAnnotation],
    scheme: SupplyScheme,
    centroid_iterations: usize,
) -> Result<SupplyVector> {
    let dims = weights.dims();
    if points.is_empty() {
        return Err(Error::InvalidPoints("annotation set is empty".into()));
    }
    let gt_pixels: Vec<usize> = points.iter().map(|p| p.pixel(dims)).collect();
    let point_cost = build_cost_matrix(weights, &gt_pixels)?;
    compute_supplies_with_cost(weights, points, scheme, centroid_iterations, &point_cost)
        .map(|o| o.supplies)
}

fn count_labels(assignment: &InitialAssignment, m: usize) -> Vec<u64> {
    let mut counts = vec![0u64; m];
    for &l in assignment.labels() {
        counts[l] += 1;
    }
    counts
}
