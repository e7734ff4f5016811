//! Weak-supervision loss evaluators with analytic gradients, verified
//! against central finite differences.
//!
//! The semantic objective combines the partial cross-entropy over annotated
//! pixels with two affinity terms: a local one over 8-neighbor pairs whose
//! LAB color similarity passes a threshold, and a long-range one that
//! filters the class probabilities along minimum-spanning-tree paths
//! weighted by accumulated squared RGB differences. The boundary objective
//! ties the boundary map to a pseudo-mask through the affinity
//! `A_kl = 1 - max(b_k, b_l)`.
//!
//! These evaluators exist to verify the formulas; the gradients are exact
//! subgradients under the documented tie and clamp rules.

use crate::color::srgb_to_lab;
use crate::error::{Error, Result};
use crate::grid::for_each_edge;
use crate::maps::{BoundaryMap, PointAnnotation, PseudoMask, RgbImage, SemanticMap};

/// Log arguments are clamped below at this value.
pub const EPS_PROB: f64 = 1e-12;

/// Deviations below this magnitude count as sitting on the |.| kink and get
/// a zero subgradient, so rounding dust cannot inject sign noise.
const DEV_EPS: f64 = 1e-12;

/// Scales and thresholds of the loss terms.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct LossConfig {
    /// Weight of the local LAB affinity term.
    pub alpha1: f64,
    /// Weight of the long-range RGB tree term.
    pub alpha2: f64,
    /// LAB similarity threshold for a pair to participate.
    pub tau: f64,
    /// LAB kernel scale.
    pub theta1: f64,
    /// RGB tree kernel scale.
    pub theta2: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            alpha1: 3.0,
            alpha2: 3.0,
            tau: 0.3,
            theta1: 2.0,
            theta2: 0.02,
        }
    }
}

fn clamped_neg_log(v: f64) -> (f64, f64) {
    // returns (-log(max(v, eps)), d/dv)
    if v > EPS_PROB {
        (-v.ln(), -1.0 / v)
    } else {
        (-EPS_PROB.ln(), 0.0)
    }
}

/// Mean negative log-probability of the annotated class at each annotated
/// pixel. The gradient is zero away from the annotated entries.
pub fn partial_cross_entropy(
    semantic: &SemanticMap,
    points: &[PointAnnotation],
) -> Result<(f64, Vec<f64>)> {
    if points.is_empty() {
        return Err(Error::InvalidPoints("annotation set is empty".into()));
    }
    let dims = semantic.dims();
    let channels = semantic.channels();
    let mut grad = vec![0.0; dims.pixels() * channels];
    let mut loss = 0.0;
    let weight = 1.0 / points.len() as f64;
    for p in points {
        if !dims.contains(p.x, p.y) || p.class_id >= channels {
            return Err(Error::InvalidPoints(format!(
                "annotation for target {} outside the map",
                p.target_id
            )));
        }
        let idx = p.pixel(dims) * channels + p.class_id;
        let (l, dl) = clamped_neg_log(semantic.values()[idx]);
        loss += weight * l;
        grad[idx] += weight * dl;
    }
    Ok((loss, grad))
}

/// Local LAB affinity loss: over 8-neighbor pairs whose LAB similarity
/// `exp(-||lab_i - lab_j|| / theta1)` reaches `tau`, the mean of
/// `-log(P_i . P_j)`. Returns zero when no pair passes.
pub fn lab_affinity_loss(
    semantic: &SemanticMap,
    image: &RgbImage,
    config: &LossConfig,
) -> Result<(f64, Vec<f64>)> {
    let dims = semantic.dims();
    if image.dims() != dims {
        return Err(Error::ShapeMismatch {
            context: "semantic map vs image",
            expected: format!("{}x{}", dims.height, dims.width),
            got: format!("{}x{}", image.dims().height, image.dims().width),
        });
    }
    let channels = semantic.channels();
    let lab: Vec<[f64; 3]> = (0..dims.pixels())
        .map(|j| srgb_to_lab(image.rgb(j)))
        .collect();

    let mut passing = Vec::new();
    for_each_edge(dims, |a, b| {
        let d = ((lab[a][0] - lab[b][0]).powi(2)
            + (lab[a][1] - lab[b][1]).powi(2)
            + (lab[a][2] - lab[b][2]).powi(2))
        .sqrt();
        let similarity = (-d / config.theta1).exp();
        if similarity >= config.tau {
            passing.push((a, b));
        }
    });

    let mut grad = vec![0.0; dims.pixels() * channels];
    if passing.is_empty() {
        return Ok((0.0, grad));
    }
    let weight = 1.0 / passing.len() as f64;
    let mut loss = 0.0;
    for &(a, b) in &passing {
        let pa = semantic.pixel(a);
        let pb = semantic.pixel(b);
        let dot: f64 = pa.iter().zip(pb).map(|(x, y)| x * y).sum();
        let (l, dl) = clamped_neg_log(dot);
        loss += weight * l;
        if dl != 0.0 {
            for c in 0..channels {
                grad[a * channels + c] += weight * dl * pb[c];
                grad[b * channels + c] += weight * dl * pa[c];
            }
        }
    }
    Ok((loss, grad))
}

/// A spanning tree over the image pixels with one squared-RGB-difference
/// weight per edge.
#[derive(Debug, Clone)]
pub struct SpanningTree {
    n: usize,
    edges: Vec<(usize, usize, f64)>,
}

impl SpanningTree {
    pub fn vertex_count(&self) -> usize {
        self.n
    }

    pub fn edges(&self) -> &[(usize, usize, f64)] {
        &self.edges
    }

    pub fn total_weight(&self) -> f64 {
        self.edges.iter().map(|&(_, _, w)| w).sum()
    }
}

struct UnionFind {
    parent: Vec<usize>,
}

impl UnionFind {
    fn new(n: usize) -> Self {
        Self {
            parent: (0..n).collect(),
        }
    }

    fn find(&mut self, mut v: usize) -> usize {
        while self.parent[v] != v {
            self.parent[v] = self.parent[self.parent[v]];
            v = self.parent[v];
        }
        v
    }

    fn union(&mut self, a: usize, b: usize) -> bool {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra == rb {
            return false;
        }
        self.parent[ra.max(rb)] = ra.min(rb);
        true
    }
}

/// Kruskal over the 8-connected grid with edge weight `||r_a - r_b||^2`;
/// the edge order (weight, then endpoints) is total, so the tree is
/// deterministic.
pub fn build_mst(image: &RgbImage) -> SpanningTree {
    let dims = image.dims();
    let n = dims.pixels();
    let mut edges: Vec<(usize, usize, f64)> = Vec::with_capacity(4 * n);
    for_each_edge(dims, |a, b| {
        let ra = image.rgb(a);
        let rb = image.rgb(b);
        let w = (ra[0] - rb[0]).powi(2) + (ra[1] - rb[1]).powi(2) + (ra[2] - rb[2]).powi(2);
        edges.push((a, b, w));
    });
    edges.sort_by(|x, y| {
        x.2.partial_cmp(&y.2)
            .unwrap()
            .then(x.0.cmp(&y.0))
            .then(x.1.cmp(&y.1))
    });
    let mut uf = UnionFind::new(n);
    let mut tree = Vec::with_capacity(n.saturating_sub(1));
    for (a, b, w) in edges {
        if uf.union(a, b) {
            tree.push((a, b, w));
            if tree.len() + 1 == n {
                break;
            }
        }
    }
    SpanningTree { n, edges: tree }
}

/// Rooted view of the tree for the two-pass filter.
struct RootedTree {
    order: Vec<usize>, // BFS order from the root
    parent: Vec<usize>,
    parent_factor: Vec<f64>, // exp(-w/theta2) of the edge to the parent
}

fn root_tree(tree: &SpanningTree, theta2: f64) -> RootedTree {
    let n = tree.n;
    let mut adj: Vec<Vec<(usize, f64)>> = vec![Vec::new(); n];
    for &(a, b, w) in &tree.edges {
        let f = (-w / theta2).exp();
        adj[a].push((b, f));
        adj[b].push((a, f));
    }
    let mut order = Vec::with_capacity(n);
    let mut parent = vec![usize::MAX; n];
    let mut parent_factor = vec![0.0; n];
    let mut visited = vec![false; n];
    let mut queue = std::collections::VecDeque::new();
    visited[0] = true;
    queue.push_back(0);
    while let Some(v) = queue.pop_front() {
        order.push(v);
        for &(u, f) in &adj[v] {
            if !visited[u] {
                visited[u] = true;
                parent[u] = v;
                parent_factor[u] = f;
                queue.push_back(u);
            }
        }
    }
    debug_assert_eq!(order.len(), n, "tree must span all pixels");
    RootedTree {
        order,
        parent,
        parent_factor,
    }
}

/// Two-pass tree filter: `out[v] = sum_j S_vj * vals[j]` where `S_vj` is the
/// product of the edge factors along the tree path (S_vv = 1).
fn tree_filter(rooted: &RootedTree, vals: &[f64]) -> Vec<f64> {
    let n = vals.len();
    let mut up = vals.to_vec();
    for &v in rooted.order.iter().rev() {
        if rooted.parent[v] != usize::MAX {
            up[rooted.parent[v]] += rooted.parent_factor[v] * up[v];
        }
    }
    let mut total = vec![0.0; n];
    for &v in &rooted.order {
        let p = rooted.parent[v];
        total[v] = if p == usize::MAX {
            up[v]
        } else {
            let f = rooted.parent_factor[v];
            up[v] + f * (total[p] - f * up[v])
        };
    }
    total
}

/// All-pairs similarities by walking the tree from every source; the
/// quadratic reference route for the filter.
fn pairwise_similarities(tree: &SpanningTree, theta2: f64) -> Vec<Vec<f64>> {
    let n = tree.n;
    let mut adj: Vec<Vec<(usize, f64)>> = vec![Vec::new(); n];
    for &(a, b, w) in &tree.edges {
        adj[a].push((b, w));
        adj[b].push((a, w));
    }
    let mut sim = vec![vec![0.0; n]; n];
    for (start, row) in sim.iter_mut().enumerate() {
        let mut path_sum = vec![f64::INFINITY; n];
        path_sum[start] = 0.0;
        let mut stack = vec![start];
        while let Some(v) = stack.pop() {
            for &(u, w) in &adj[v] {
                if path_sum[u].is_infinite() {
                    path_sum[u] = path_sum[v] + w;
                    stack.push(u);
                }
            }
        }
        for j in 0..n {
            row[j] = (-path_sum[j] / theta2).exp();
        }
    }
    sim
}

fn check_tree_spans(semantic: &SemanticMap, tree: &SpanningTree) -> Result<()> {
    let n = semantic.dims().pixels();
    if tree.n != n || (n > 1 && tree.edges.len() != n - 1) {
        return Err(Error::ShapeMismatch {
            context: "spanning tree vs semantic map",
            expected: format!("{} vertices, {} edges", n, n.saturating_sub(1)),
            got: format!("{} vertices, {} edges", tree.n, tree.edges.len()),
        });
    }
    Ok(())
}

fn rgb_tree_loss_from_parts(
    semantic: &SemanticMap,
    z2: &[f64],
    filter: impl Fn(&[f64]) -> Vec<f64>,
) -> (f64, Vec<f64>) {
    let n = semantic.dims().pixels();
    let channels = semantic.channels();
    let norm = 1.0 / (n * channels) as f64;
    let mut loss = 0.0;
    let mut grad = vec![0.0; n * channels];
    for c in 0..channels {
        let vals: Vec<f64> = (0..n).map(|j| semantic.value(j, c)).collect();
        let agg = filter(&vals);
        let sign: Vec<f64> = (0..n)
            .map(|i| {
                let dev = vals[i] - agg[i] / z2[i];
                if dev.abs() <= DEV_EPS {
                    0.0
                } else {
                    dev.signum()
                }
            })
            .collect();
        for i in 0..n {
            loss += norm * (vals[i] - agg[i] / z2[i]).abs();
        }
        let weighted: Vec<f64> = (0..n).map(|i| sign[i] / z2[i]).collect();
        let spread = filter(&weighted);
        for k in 0..n {
            grad[k * channels + c] = norm * (sign[k] - spread[k]);
        }
    }
    (loss, grad)
}

/// Long-range RGB affinity loss via the O(n)-per-channel two-pass tree
/// dynamic program.
pub fn rgb_tree_loss(
    semantic: &SemanticMap,
    tree: &SpanningTree,
    config: &LossConfig,
) -> Result<(f64, Vec<f64>)> {
    check_tree_spans(semantic, tree)?;
    let rooted = root_tree(tree, config.theta2);
    let n = semantic.dims().pixels();
    let z2 = tree_filter(&rooted, &vec![1.0; n]);
    Ok(rgb_tree_loss_from_parts(semantic, &z2, |vals| {
        tree_filter(&rooted, vals)
    }))
}

/// Same loss through the naive quadratic path-sum evaluation; the reference
/// the fast path is checked against.
pub fn rgb_tree_loss_naive(
    semantic: &SemanticMap,
    tree: &SpanningTree,
    config: &LossConfig,
) -> Result<(f64, Vec<f64>)> {
    check_tree_spans(semantic, tree)?;
    let sim = pairwise_similarities(tree, config.theta2);
    let n = semantic.dims().pixels();
    let z2: Vec<f64> = (0..n).map(|i| sim[i].iter().sum()).collect();
    Ok(rgb_tree_loss_from_parts(semantic, &z2, |vals| {
        (0..n)
            .map(|i| sim[i].iter().zip(vals).map(|(s, v)| s * v).sum())
            .collect()
    }))
}

/// Pair-set sizes behind the boundary loss normalizers.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BoundaryPairCounts {
    pub same_thing: usize,
    pub same_stuff: usize,
    pub different: usize,
}

/// Boundary affinity loss over 8-neighbor pairs: pairs inside the same
/// thing or stuff target push the boundary down through `-log A`, pairs
/// across targets push it up through `-log(1 - A)`, with
/// `A = 1 - max(b_k, b_l)`. Empty pair sets contribute zero. The max
/// gradient routes to the larger argument and splits on ties.
pub fn boundary_affinity_loss(
    boundary: &BoundaryMap,
    mask: &PseudoMask,
) -> Result<(f64, Vec<f64>, BoundaryPairCounts)> {
    let dims = boundary.dims();
    if mask.dims() != dims {
        return Err(Error::ShapeMismatch {
            context: "boundary map vs mask",
            expected: format!("{}x{}", dims.height, dims.width),
            got: format!("{}x{}", mask.dims().height, mask.dims().width),
        });
    }
    let mut same_thing = Vec::new();
    let mut same_stuff = Vec::new();
    let mut different = Vec::new();
    for_each_edge(dims, |a, b| {
        let ta = mask.target(a);
        let tb = mask.target(b);
        if ta == tb {
            match mask.kind_of(ta).expect("mask lookup is total") {
                crate::maps::TargetKind::Thing => same_thing.push((a, b)),
                crate::maps::TargetKind::Stuff => same_stuff.push((a, b)),
            }
        } else {
            different.push((a, b));
        }
    });
    let counts = BoundaryPairCounts {
        same_thing: same_thing.len(),
        same_stuff: same_stuff.len(),
        different: different.len(),
    };

    let mut loss = 0.0;
    let mut grad = vec![0.0; dims.pixels()];
    // max subgradient: all to the larger argument, half each on a tie
    let route = |k: usize, l: usize, vals: &[f64]| -> [(usize, f64); 2] {
        if vals[k] > vals[l] {
            [(k, 1.0), (l, 0.0)]
        } else if vals[l] > vals[k] {
            [(k, 0.0), (l, 1.0)]
        } else {
            [(k, 0.5), (l, 0.5)]
        }
    };
    let vals = boundary.values();
    for (pairs, scale) in [(&same_thing, 0.5), (&same_stuff, 0.5)] {
        if pairs.is_empty() {
            continue;
        }
        let weight = scale / pairs.len() as f64;
        for &(k, l) in pairs.iter() {
            let m = vals[k].max(vals[l]);
            let a = 1.0 - m;
            let (l_term, dl_da) = clamped_neg_log(a);
            loss += weight * l_term;
            if dl_da != 0.0 {
                // dA/db = -route
                for (p, share) in route(k, l, vals) {
                    grad[p] += weight * dl_da * (-share);
                }
            }
        }
    }
    if !different.is_empty() {
        let weight = 1.0 / different.len() as f64;
        for &(k, l) in &different {
            let m = vals[k].max(vals[l]);
            // -log(1 - A) = -log(max(b_k, b_l))
            let (l_term, dl_dm) = clamped_neg_log(m);
            loss += weight * l_term;
            if dl_dm != 0.0 {
                for (p, share) in route(k, l, vals) {
                    grad[p] += weight * dl_dm * share;
                }
            }
        }
    }
    Ok((loss, grad, counts))
}

/// Weighted combination of the three semantic-map loss terms.
pub fn combine_semantic_losses(partial: f64, lab: f64, rgb: f64, config: &LossConfig) -> f64 {
    partial + config.alpha1 * lab + config.alpha2 * rgb
}

/// Full semantic objective: partial cross-entropy plus the weighted LAB and
/// RGB affinity terms.
pub fn semantic_loss_total(
    semantic: &SemanticMap,
    image: &RgbImage,
    points: &[PointAnnotation],
    tree: &SpanningTree,
    config: &LossConfig,
) -> Result<f64> {
    let (partial, _) = partial_cross_entropy(semantic, points)?;
    let (lab, _) = lab_affinity_loss(semantic, image, config)?;
    let (rgb, _) = rgb_tree_loss(semantic, tree, config)?;
    Ok(combine_semantic_losses(partial, lab, rgb, config))
}

/// Central-difference check of an evaluator's analytic gradient over the
/// given coordinates; reports the max relative error over coordinates whose
/// analytic gradient magnitude exceeds 1e-8.
pub fn finite_difference_check_at(
    mut f: impl FnMut(&[f64]) -> (f64, Vec<f64>),
    input: &[f64],
    step: f64,
    coords: &[usize],
) -> Result<f64> {
    if !(step > 0.0 && step.is_finite()) {
        return Err(Error::InvalidArgument {
            name: "step",
            reason: format!("must be finite and > 0, got {step}"),
        });
    }
    let (_, grad) = f(input);
    let mut x = input.to_vec();
    let mut worst = 0.0f64;
    for &i in coords {
        if grad[i].abs() <= 1e-8 {
            continue;
        }
        let orig = x[i];
        x[i] = orig + step;
        let plus = f(&x).0;
        x[i] = orig - step;
        let minus = f(&x).0;
        x[i] = orig;
        let fd = (plus - minus) / (2.0 * step);
        worst = worst.max((fd - grad[i]).abs() / grad[i].abs());
    }
    Ok(worst)
}

/// [`finite_difference_check_at`] over every coordinate.
pub fn finite_difference_check(
    f: impl FnMut(&[f64]) -> (f64, Vec<f64>),
    input: &[f64],
    step: f64,
) -> Result<f64> {
    let coords: Vec<usize> = (0..input.len()).collect();
    finite_difference_check_at(f, input, step, &coords)
}
