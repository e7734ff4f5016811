//! End-to-end pseudo-mask generation: merge boundary maps, build geodesic
//! costs from the annotated points, compute supplies, solve the balanced
//! transport problem with every pixel demanding one unit, and decode the
//! plan by per-pixel argmax. Also provides the per-pixel minimum-cost
//! baseline the transport solution is compared against.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{
    build_cost_matrix, build_edge_weights, CostMatrix, GridDims, DEFAULT_EDGE_FLOOR,
};
use crate::maps::{validate_points, BoundaryMap, PointAnnotation, PseudoMask, SemanticMap};
use crate::ot::{plan_cost, sinkhorn_solve, SinkhornConfig, TransportPlan, TransportProblem};
use crate::supply::{compute_supplies_with_cost, initial_assignment, SupplyScheme};

/// How the high- and low-level boundary maps are merged per pixel.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BoundaryCombine {
    Max,
    HighOnly,
    LowOnly,
}

impl BoundaryCombine {
    pub fn as_str(&self) -> &'static str {
        match self {
            BoundaryCombine::Max => "max",
            BoundaryCombine::HighOnly => "high_only",
            BoundaryCombine::LowOnly => "low_only",
        }
    }

    pub fn parse(token: &str) -> Result<Self> {
        match token {
            "max" => Ok(BoundaryCombine::Max),
            "high_only" => Ok(BoundaryCombine::HighOnly),
            "low_only" => Ok(BoundaryCombine::LowOnly),
            other => Err(Error::InvalidArgument {
                name: "boundary_combine",
                reason: format!("unknown mode {other:?} (expected max|high_only|low_only)"),
            }),
        }
    }
}

/// All pipeline knobs with their default values.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    /// Weight of the boundary term in the edge length.
    pub beta: f64,
    /// Sinkhorn regularization coefficient.
    pub lambda: f64,
    pub sinkhorn_iterations: usize,
    pub supply_scheme: SupplyScheme,
    pub centroid_iterations: usize,
    pub boundary_combine: BoundaryCombine,
    /// Hand the solver costs rebuilt from the refined centroids instead of
    /// the annotated points (centroid scheme only).
    pub cost_from_centroids: bool,
    pub log_domain: bool,
    pub normalize_cost: bool,
    /// Added to every edge weight so costs strictly increase with hop count.
    pub edge_floor: f64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            beta: 0.1,
            lambda: 0.1,
            sinkhorn_iterations: 80,
            supply_scheme: SupplyScheme::NearestCentroid,
            centroid_iterations: 1,
            boundary_combine: BoundaryCombine::Max,
            cost_from_centroids: false,
            log_domain: false,
            normalize_cost: true,
            edge_floor: DEFAULT_EDGE_FLOOR,
        }
    }
}

impl PipelineConfig {
    fn sinkhorn(&self) -> SinkhornConfig {
        SinkhornConfig {
            lambda: self.lambda,
            iterations: self.sinkhorn_iterations,
            log_domain: self.log_domain,
            normalize_cost: self.normalize_cost,
        }
    }
}

/// Machine-readable run record for regression tracking.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Diagnostics {
    pub schema_version: u32,
    pub suppliers: usize,
    pub pixels: usize,
    pub supply_scheme: SupplyScheme,
    pub centroid_iterations: usize,
    pub marginal_error: f64,
    pub transport_cost: f64,
    pub supplies: BTreeMap<u32, u64>,
    pub per_target_pixels: BTreeMap<u32, u64>,
}

fn lookup_from_points(
    points: &[PointAnnotation],
) -> BTreeMap<u32, (usize, crate::maps::TargetKind)> {
    points
        .iter()
        .map(|p| (p.target_id, (p.class_id, p.kind)))
        .collect()
}

/// Assigns each pixel the target of the supplier with the largest plan
/// entry in its column (lowest supplier index on ties).
pub fn decode_plan(
    plan: &TransportPlan,
    points: &[PointAnnotation],
    dims: GridDims,
) -> Result<PseudoMask> {
    if plan.n != dims.pixels() {
        return Err(Error::ShapeMismatch {
            context: "plan columns vs pixels",
            expected: dims.pixels().to_string(),
            got: plan.n.to_string(),
        });
    }
    if plan.m != points.len() {
        return Err(Error::ShapeMismatch {
            context: "plan rows vs annotations",
            expected: points.len().to_string(),
            got: plan.m.to_string(),
        });
    }
    let mut target = vec![0u32; plan.n];
    for (j, slot) in target.iter_mut().enumerate() {
        let mut best = 0usize;
        let mut best_mass = plan.gamma(0, j);
        for i in 1..plan.m {
            let g = plan.gamma(i, j);
            if g > best_mass {
                best = i;
                best_mass = g;
            }
        }
        if best_mass <= 0.0 {
            return Err(Error::Internal(format!(
                "plan column {j} carries no mass; demand feasibility violated"
            )));
        }
        *slot = points[best].target_id;
    }
    PseudoMask::new(dims.height, dims.width, target, lookup_from_points(points))
}

/// Per-pixel independent argmin assignment over the same cost matrix (the
/// local alternative the transport plan is compared against).
pub fn minimum_cost_baseline(
    cost: &CostMatrix,
    points: &[PointAnnotation],
    dims: GridDims,
) -> Result<PseudoMask> {
    if cost.m != points.len() {
        return Err(Error::ShapeMismatch {
            context: "cost rows vs annotations",
            expected: points.len().to_string(),
            got: cost.m.to_string(),
        });
    }
    if cost.n != dims.pixels() {
        return Err(Error::ShapeMismatch {
            context: "cost columns vs pixels",
            expected: dims.pixels().to_string(),
            got: cost.n.to_string(),
        });
    }
    let assignment = initial_assignment(cost);
    let target: Vec<u32> = assignment
        .labels()
        .iter()
        .map(|&i| points[i].target_id)
        .collect();
    PseudoMask::new(dims.height, dims.width, target, lookup_from_points(points))
}

/// Intermediate products of a pipeline run, exposed so callers can reuse
/// the cost matrix (e.g. for the minimum-cost comparison).
pub struct PipelineRun {
    pub mask: PseudoMask,
    pub plan: TransportPlan,
    pub diagnostics: Diagnostics,
    /// Costs handed to the solver (from centroids when so configured).
    pub ot_cost_matrix: CostMatrix,
    /// Costs from the annotated points.
    pub point_cost_matrix: CostMatrix,
}

/// Runs the full pipeline and returns the decoded mask, the plan and
/// diagnostics.
pub fn generate_pseudo_mask(
    semantic: &SemanticMap,
    boundary_high: &BoundaryMap,
    boundary_low: &BoundaryMap,
    points: &[PointAnnotation],
    config: &PipelineConfig,
) -> Result<(PseudoMask, TransportPlan, Diagnostics)> {
    let run = run_pipeline(semantic, boundary_high, boundary_low, points, config)?;
    Ok((run.mask, run.plan, run.diagnostics))
}

/// As [`generate_pseudo_mask`], returning the intermediate matrices too.
pub fn run_pipeline(
    semantic: &SemanticMap,
    boundary_high: &BoundaryMap,
    boundary_low: &BoundaryMap,
    points: &[PointAnnotation],
    config: &PipelineConfig,
) -> Result<PipelineRun> {
    let dims = semantic.dims();
    semantic.validate_probabilities()?;
    boundary_high.validate_range()?;
    boundary_low.validate_range()?;
    validate_points(points, dims, semantic.channels())?;

    let boundary = match config.boundary_combine {
        BoundaryCombine::Max => boundary_high.combine_max(boundary_low)?,
        BoundaryCombine::HighOnly => boundary_high.clone(),
        BoundaryCombine::LowOnly => boundary_low.clone(),
    };

    let weights =
        build_edge_weights(semantic, &boundary, config.beta)?.with_floor(config.edge_floor);
    let gt_pixels: Vec<usize> = points.iter().map(|p| p.pixel(dims)).collect();
    let point_cost = build_cost_matrix(&weights, &gt_pixels)?;

    let outcome = compute_supplies_with_cost(
        &weights,
        points,
        config.supply_scheme,
        config.centroid_iterations,
        &point_cost,
    )?;

    let ot_cost = if config.cost_from_centroids && outcome.sources != gt_pixels {
        build_cost_matrix(&weights, &outcome.sources)?
    } else {
        point_cost.clone()
    };

    let n = dims.pixels();
    let problem = TransportProblem::new(
        ot_cost.values().to_vec(),
        outcome.supplies.as_f64(),
        vec![1.0; n],
    )?;
    let plan = sinkhorn_solve(&problem, &config.sinkhorn())?;
    let transport_cost = plan_cost(&problem, &plan)?;
    let mask = decode_plan(&plan, points, dims)?;

    let supplies: BTreeMap<u32, u64> = points
        .iter()
        .zip(&outcome.supplies.counts)
        .map(|(p, &c)| (p.target_id, c))
        .collect();
    let diagnostics = Diagnostics {
        schema_version: 1,
        suppliers: points.len(),
        pixels: n,
        supply_scheme: config.supply_scheme,
        centroid_iterations: config.centroid_iterations,
        marginal_error: plan.converged_marginal_error,
        transport_cost,
        supplies,
        per_target_pixels: mask.pixel_counts(),
    };
    Ok(PipelineRun {
        mask,
        plan,
        diagnostics,
        ot_cost_matrix: ot_cost,
        point_cost_matrix: point_cost,
    })
}
