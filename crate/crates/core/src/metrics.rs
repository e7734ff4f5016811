//! Segment IoU and panoptic quality.
//!
//! Segments of the same class match when their IoU exceeds 0.5, which makes
//! the matching unique. Per class, SQ is the mean IoU over matches and
//! RQ = TP / (TP + FP/2 + FN/2); PQ = SQ * RQ. Same-class stuff segments are
//! merged per side before matching, and classes absent from both masks are
//! excluded from the averages.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::maps::{PseudoMask, TargetKind};

/// `|a intersect b| / |a union b|` for two pixel sets; both sets empty is
/// rejected rather than defined as zero.
pub fn segment_iou(
    a: &std::collections::BTreeSet<usize>,
    b: &std::collections::BTreeSet<usize>,
) -> Result<f64> {
    if a.is_empty() && b.is_empty() {
        return Err(Error::InvalidArgument {
            name: "segments",
            reason: "IoU of two empty sets is undefined".into(),
        });
    }
    let inter = a.intersection(b).count() as f64;
    let union = (a.len() + b.len()) as f64 - inter;
    Ok(inter / union)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassScore {
    pub pq: f64,
    pub sq: f64,
    pub rq: f64,
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub kind: TargetKind,
}

/// Aggregate and per-class panoptic quality.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PanopticScore {
    pub pq: f64,
    pub sq: f64,
    pub rq: f64,
    pub pq_thing: f64,
    pub pq_stuff: f64,
    pub per_class: BTreeMap<usize, ClassScore>,
}

/// Segment key after stuff merging: things stay per target, stuff collapses
/// to one segment per class and side.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
enum SegmentKey {
    Thing(u32),
    Stuff(usize),
}

struct Segments {
    // per segment: key index -> (class, kind, size)
    class: Vec<usize>,
    kind: Vec<TargetKind>,
    size: Vec<u64>,
    // per pixel: segment index
    label: Vec<usize>,
}

fn segment_mask(mask: &PseudoMask) -> Segments {
    let mut index: BTreeMap<SegmentKey, usize> = BTreeMap::new();
    let mut class = Vec::new();
    let mut kind = Vec::new();
    let mut size = Vec::new();
    let mut label = Vec::with_capacity(mask.targets().len());
    for &t in mask.targets() {
        let (c, k) = mask.lookup()[&t];
        let key = match k {
            TargetKind::Thing => SegmentKey::Thing(t),
            TargetKind::Stuff => SegmentKey::Stuff(c),
        };
        let idx = *index.entry(key).or_insert_with(|| {
            class.push(c);
            kind.push(k);
            size.push(0);
            class.len() - 1
        });
        size[idx] += 1;
        label.push(idx);
    }
    Segments {
        class,
        kind,
        size,
        label,
    }
}

/// Panoptic quality of `pred` against `gt` over the same grid.
pub fn panoptic_quality(pred: &PseudoMask, gt: &PseudoMask) -> Result<PanopticScore> {
    if pred.dims() != gt.dims() {
        return Err(Error::ShapeMismatch {
            context: "pred vs gt mask",
            expected: format!("{}x{}", gt.dims().height, gt.dims().width),
            got: format!("{}x{}", pred.dims().height, pred.dims().width),
        });
    }
    let gs = segment_mask(gt);
    let ps = segment_mask(pred);

    let mut inter: BTreeMap<(usize, usize), u64> = BTreeMap::new();
    for (g, p) in gs.label.iter().zip(&ps.label) {
        *inter.entry((*g, *p)).or_insert(0) += 1;
    }

    let mut gt_matched = vec![false; gs.size.len()];
    let mut pred_matched = vec![false; ps.size.len()];
    struct ClassAccum {
        tp: usize,
        fp: usize,
        fn_: usize,
        iou_sum: f64,
        kind: TargetKind,
    }
    let mut per_class: BTreeMap<usize, ClassAccum> = BTreeMap::new();
    fn accum(
        map: &mut BTreeMap<usize, ClassAccum>,
        class: usize,
        kind: TargetKind,
    ) -> &mut ClassAccum {
        map.entry(class).or_insert(ClassAccum {
            tp: 0,
            fp: 0,
            fn_: 0,
            iou_sum: 0.0,
            kind,
        })
    }

    for (&(g, p), &count) in &inter {
        if gs.class[g] != ps.class[p] {
            continue;
        }
        let union = gs.size[g] + ps.size[p] - count;
        let iou = count as f64 / union as f64;
        if iou > 0.5 {
            if gt_matched[g] || pred_matched[p] {
                return Err(Error::Internal(
                    "IoU > 0.5 matching produced a duplicate match".into(),
                ));
            }
            gt_matched[g] = true;
            pred_matched[p] = true;
            let entry = accum(&mut per_class, gs.class[g], gs.kind[g]);
            entry.tp += 1;
            entry.iou_sum += iou;
        }
    }
    for g in 0..gs.size.len() {
        if !gt_matched[g] {
            accum(&mut per_class, gs.class[g], gs.kind[g]).fn_ += 1;
        }
    }
    for p in 0..ps.size.len() {
        if !pred_matched[p] {
            accum(&mut per_class, ps.class[p], ps.kind[p]).fp += 1;
        }
    }
    // ground truth decides a class's kind when the two sides disagree
    for g in 0..gs.size.len() {
        accum(&mut per_class, gs.class[g], gs.kind[g]).kind = gs.kind[g];
    }

    let mut scores: BTreeMap<usize, ClassScore> = BTreeMap::new();
    for (&class, a) in &per_class {
        let denom = a.tp as f64 + 0.5 * (a.fp + a.fn_) as f64;
        let sq = if a.tp > 0 {
            a.iou_sum / a.tp as f64
        } else {
            0.0
        };
        let rq = if denom > 0.0 { a.tp as f64 / denom } else { 0.0 };
        scores.insert(
            class,
            ClassScore {
                pq: sq * rq,
                sq,
                rq,
                tp: a.tp,
                fp: a.fp,
                fn_: a.fn_,
                kind: a.kind,
            },
        );
    }

    let mean = |iter: &mut dyn Iterator<Item = f64>| -> f64 {
        let values: Vec<f64> = iter.collect();
        if values.is_empty() {
            0.0
        } else {
            values.iter().sum::<f64>() / values.len() as f64
        }
    };
    let pq = mean(&mut scores.values().map(|s| s.pq));
    let sq = mean(&mut scores.values().map(|s| s.sq));
    let rq = mean(&mut scores.values().map(|s| s.rq));
    let pq_thing = mean(
        &mut scores
            .values()
            .filter(|s| s.kind == TargetKind::Thing)
            .map(|s| s.pq),
    );
    let pq_stuff = mean(
        &mut scores
            .values()
            .filter(|s| s.kind == TargetKind::Stuff)
            .map(|s| s.pq),
    );
    Ok(PanopticScore {
        pq,
        sq,
        rq,
        pq_thing,
        pq_stuff,
        per_class: scores,
    })
}

/// Mean IoU of same-target-id segments between two masks over the same
/// grid; targets present in either mask participate (a missing side counts
/// as the empty set).
pub fn mean_target_iou(pred: &PseudoMask, gt: &PseudoMask) -> Result<f64> {
    if pred.dims() != gt.dims() {
        return Err(Error::ShapeMismatch {
            context: "pred vs gt mask",
            expected: format!("{}x{}", gt.dims().height, gt.dims().width),
            got: format!("{}x{}", pred.dims().height, pred.dims().width),
        });
    }
    let mut ids: Vec<u32> = gt.lookup().keys().cloned().collect();
    for id in pred.lookup().keys() {
        if !ids.contains(id) {
            ids.push(*id);
        }
    }
    let mut total = 0.0;
    for &id in &ids {
        let mut inter = 0u64;
        let mut union = 0u64;
        for (a, b) in pred.targets().iter().zip(gt.targets()) {
            let in_a = *a == id;
            let in_b = *b == id;
            if in_a && in_b {
                inter += 1;
            }
            if in_a || in_b {
                union += 1;
            }
        }
        if union > 0 {
            total += inter as f64 / union as f64;
        }
    }
    Ok(total / ids.len() as f64)
}
