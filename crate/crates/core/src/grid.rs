//! 8-connected pixel graph with map-derived edge lengths and geodesic
//! (shortest-path) costs from source pixels.
//!
//! An image of `height * width` pixels is a planar graph where every pixel is
//! adjacent to its eight neighbors. Edge lengths combine the semantic and
//! boundary distances of adjacent pixels; the cost of reaching a pixel from a
//! source is the minimum summed edge length over all connecting paths,
//! computed with Dijkstra's algorithm.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::maps::{BoundaryMap, SemanticMap};

/// Added to every edge weight by the pipeline so costs strictly increase with
/// hop count and argmin ties stay rare.
pub const DEFAULT_EDGE_FLOOR: f64 = 1e-6;

/// Grid extent shared by all per-pixel value types. Pixels are indexed
/// row-major: `index = y * width + x`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GridDims {
    pub height: usize,
    pub width: usize,
}

impl GridDims {
    pub fn new(height: usize, width: usize) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::InvalidArgument {
                name: "dims",
                reason: format!("grid must be non-empty, got {height}x{width}"),
            });
        }
        Ok(Self { height, width })
    }

    pub fn pixels(&self) -> usize {
        self.height * self.width
    }

    pub fn index(&self, x: usize, y: usize) -> usize {
        debug_assert!(x < self.width && y < self.height);
        y * self.width + x
    }

    pub fn coords(&self, index: usize) -> (usize, usize) {
        (index % self.width, index / self.width)
    }

    pub fn contains(&self, x: usize, y: usize) -> bool {
        x < self.width && y < self.height
    }

    fn fmt_shape(&self) -> String {
        format!("{}x{}", self.height, self.width)
    }
}

/// The eight neighbor offsets, and the four "forward" ones that enumerate
/// every undirected edge exactly once (east, south-west, south, south-east).
pub const NEIGHBOR_OFFSETS: [(isize, isize); 8] = [
    (1, 0),
    (-1, 0),
    (0, 1),
    (0, -1),
    (1, 1),
    (-1, -1),
    (1, -1),
    (-1, 1),
];
pub const FORWARD_OFFSETS: [(isize, isize); 4] = [(1, 0), (-1, 1), (0, 1), (1, 1)];

/// Visits each undirected 8-neighbor edge of the grid once, as
/// `(pixel_a, pixel_b)` with `a` the lexicographically earlier endpoint.
pub fn for_each_edge(dims: GridDims, mut f: impl FnMut(usize, usize)) {
    for y in 0..dims.height {
        for x in 0..dims.width {
            let a = dims.index(x, y);
            for (dx, dy) in FORWARD_OFFSETS {
                let nx = x as isize + dx;
                let ny = y as isize + dy;
                if nx >= 0 && ny >= 0 && dims.contains(nx as usize, ny as usize) {
                    f(a, dims.index(nx as usize, ny as usize));
                }
            }
        }
    }
}

/// Symmetric nonnegative edge lengths for every 8-neighbor pixel pair.
///
/// Storage is one value per pixel and forward direction; the symmetric
/// counterpart is resolved through the canonical endpoint.
#[derive(Debug, Clone)]
pub struct EdgeWeightField {
    dims: GridDims,
    // weights[d][pixel] = length of the edge from `pixel` along FORWARD_OFFSETS[d];
    // f64::INFINITY where the neighbor falls outside the grid.
    weights: [Vec<f64>; 4],
}

impl EdgeWeightField {
    pub fn dims(&self) -> GridDims {
        self.dims
    }

    /// Builds a field from a closure over unordered adjacent pairs.
    pub fn from_fn(dims: GridDims, mut f: impl FnMut(usize, usize) -> f64) -> Result<Self> {
        let n = dims.pixels();
        let mut weights = [
            vec![f64::INFINITY; n],
            vec![f64::INFINITY; n],
            vec![f64::INFINITY; n],
            vec![f64::INFINITY; n],
        ];
        for y in 0..dims.height {
            for x in 0..dims.width {
                let a = dims.index(x, y);
                for (d, (dx, dy)) in FORWARD_OFFSETS.iter().enumerate() {
                    let nx = x as isize + dx;
                    let ny = y as isize + dy;
                    if nx >= 0 && ny >= 0 && dims.contains(nx as usize, ny as usize) {
                        let b = dims.index(nx as usize, ny as usize);
                        let w = f(a, b);
                        if !w.is_finite() || w < 0.0 {
                            return Err(Error::InvalidArgument {
                                name: "edge_weight",
                                reason: format!("weight({a},{b}) = {w} must be finite and >= 0"),
                            });
                        }
                        weights[d][a] = w;
                    }
                }
            }
        }
        Ok(Self { dims, weights })
    }

    /// Length of the edge between adjacent pixels `a` and `b`, or `None` if
    /// they are not 8-neighbors.
    pub fn weight(&self, a: usize, b: usize) -> Option<f64> {
        let (ax, ay) = self.dims.coords(a);
        let (bx, by) = self.dims.coords(b);
        let dx = bx as isize - ax as isize;
        let dy = by as isize - ay as isize;
        for (d, off) in FORWARD_OFFSETS.iter().enumerate() {
            if (dx, dy) == *off {
                return Some(self.weights[d][a]);
            }
            if (-dx, -dy) == *off {
                return Some(self.weights[d][b]);
            }
        }
        None
    }

    /// Returns a copy with `floor` added to every edge weight.
    pub fn with_floor(mut self, floor: f64) -> Self {
        for dir in self.weights.iter_mut() {
            for w in dir.iter_mut() {
                if w.is_finite() {
                    *w += floor;
                }
            }
        }
        self
    }

    fn neighbors(&self, pixel: usize, out: &mut Vec<(usize, f64)>) {
        out.clear();
        let (x, y) = self.dims.coords(pixel);
        for (d, (dx, dy)) in FORWARD_OFFSETS.iter().enumerate() {
            // forward edge
            let nx = x as isize + dx;
            let ny = y as isize + dy;
            if nx >= 0 && ny >= 0 && self.dims.contains(nx as usize, ny as usize) {
                let b = self.dims.index(nx as usize, ny as usize);
                out.push((b, self.weights[d][pixel]));
            }
            // reverse edge
            let px = x as isize - dx;
            let py = y as isize - dy;
            if px >= 0 && py >= 0 && self.dims.contains(px as usize, py as usize) {
                let b = self.dims.index(px as usize, py as usize);
                out.push((b, self.weights[d][b]));
            }
        }
    }
}

/// Geodesic cost from a fixed source to every pixel.
#[derive(Debug, Clone)]
pub struct CostField {
    dims: GridDims,
    source: usize,
    cost: Vec<f64>,
}

impl CostField {
    pub fn dims(&self) -> GridDims {
        self.dims
    }

    pub fn source(&self) -> usize {
        self.source
    }

    pub fn cost(&self, pixel: usize) -> f64 {
        self.cost[pixel]
    }

    pub fn values(&self) -> &[f64] {
        &self.cost
    }
}

/// Dense m-by-n matrix of geodesic costs, one row per source pixel.
#[derive(Debug, Clone)]
pub struct CostMatrix {
    pub m: usize,
    pub n: usize,
    data: Vec<f64>,
}

impl CostMatrix {
    pub fn from_rows(rows: Vec<Vec<f64>>) -> Result<Self> {
        let m = rows.len();
        if m == 0 {
            return Err(Error::InvalidArgument {
                name: "rows",
                reason: "matrix needs at least one row".into(),
            });
        }
        let n = rows[0].len();
        let mut data = Vec::with_capacity(m * n);
        for row in &rows {
            if row.len() != n {
                return Err(Error::ShapeMismatch {
                    context: "cost matrix rows",
                    expected: n.to_string(),
                    got: row.len().to_string(),
                });
            }
            data.extend_from_slice(row);
        }
        Ok(Self { m, n, data })
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.n + j]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.n..(i + 1) * self.n]
    }

    pub fn values(&self) -> &[f64] {
        &self.data
    }

    pub fn into_values(self) -> Vec<f64> {
        self.data
    }
}

/// Computes the combined edge length for every adjacent pixel pair:
/// `weight(k,l) = d_s(k,l) + beta * d_b(k,l)` with
/// `d_s` half the L1 distance between the class-probability vectors and
/// `d_b` the larger of the two boundary values.
pub fn build_edge_weights(
    semantic: &SemanticMap,
    boundary: &BoundaryMap,
    beta: f64,
) -> Result<EdgeWeightField> {
    let dims = semantic.dims();
    if boundary.dims() != dims {
        return Err(Error::ShapeMismatch {
            context: "semantic vs boundary map",
            expected: dims.fmt_shape(),
            got: boundary.dims().fmt_shape(),
        });
    }
    if !beta.is_finite() || beta < 0.0 {
        return Err(Error::InvalidArgument {
            name: "beta",
            reason: format!("must be finite and >= 0, got {beta}"),
        });
    }
    EdgeWeightField::from_fn(dims, |a, b| {
        let d_s = 0.5 * semantic.l1_distance(a, b);
        let d_b = boundary.value(a).max(boundary.value(b));
        d_s + beta * d_b
    })
}

#[derive(PartialEq)]
struct HeapEntry {
    cost: f64,
    pixel: usize,
}

impl Eq for HeapEntry {}

impl Ord for HeapEntry {
    fn cmp(&self, other: &Self) -> Ordering {
        // min-heap on cost; pixel index breaks ties so pop order is total
        other
            .cost
            .partial_cmp(&self.cost)
            .unwrap()
            .then_with(|| other.pixel.cmp(&self.pixel))
    }
}

impl PartialOrd for HeapEntry {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Single-source shortest-path costs over the 8-connected grid (Dijkstra).
pub fn geodesic_costs(weights: &EdgeWeightField, source: usize) -> Result<CostField> {
    let dims = weights.dims();
    let n = dims.pixels();
    if source >= n {
        return Err(Error::InvalidArgument {
            name: "source",
            reason: format!("pixel {source} outside grid of {n} pixels"),
        });
    }
    let mut cost = vec![f64::INFINITY; n];
    let mut settled = vec![false; n];
    let mut heap = BinaryHeap::with_capacity(n);
    let mut nbrs = Vec::with_capacity(8);
    cost[source] = 0.0;
    heap.push(HeapEntry {
        cost: 0.0,
        pixel: source,
    });
    while let Some(HeapEntry { cost: c, pixel }) = heap.pop() {
        if settled[pixel] {
            continue;
        }
        settled[pixel] = true;
        weights.neighbors(pixel, &mut nbrs);
        for &(next, w) in &nbrs {
            let candidate = c + w;
            if candidate < cost[next] {
                cost[next] = candidate;
                heap.push(HeapEntry {
                    cost: candidate,
                    pixel: next,
                });
            }
        }
    }
    Ok(CostField {
        dims,
        source,
        cost,
    })
}

/// Stacks one geodesic cost row per source, in row-major pixel order.
///
/// Rows are computed in parallel; each row only depends on its own source, so
/// the result is identical to sequential execution.
pub fn build_cost_matrix(weights: &EdgeWeightField, sources: &[usize]) -> Result<CostMatrix> {
    if sources.is_empty() {
        return Err(Error::InvalidArgument {
            name: "sources",
            reason: "at least one source pixel is required".into(),
        });
    }
    let n = weights.dims().pixels();
    for &s in sources {
        if s >= n {
            return Err(Error::InvalidArgument {
                name: "sources",
                reason: format!("pixel {s} outside grid of {n} pixels"),
            });
        }
    }
    let rows: Vec<Vec<f64>> = sources
        .par_iter()
        .map(|&s| {
            geodesic_costs(weights, s)
                .expect("source validated above")
                .cost
        })
        .collect();
    CostMatrix::from_rows(rows)
}
