//! Deterministic synthetic scenes with known ground truth, used as
//! oracle-backed fixtures: flat-colored targets painted in declaration
//! order, a semantic map derived from the one-hot ground truth, an outline
//! boundary map, and one uniformly sampled annotation point per target.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::grid::GridDims;
use crate::maps::{
    outline_pixels, BoundaryMap, PointAnnotation, PseudoMask, RgbImage, SemanticMap, TargetKind,
};

/// Target geometry on the canvas.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Geometry {
    Rect {
        x: usize,
        y: usize,
        w: usize,
        h: usize,
    },
    Circle {
        cx: usize,
        cy: usize,
        r: usize,
    },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ShapeSpec {
    pub class_id: usize,
    pub kind: TargetKind,
    pub geom: Geometry,
}

/// Declarative scene description. Shapes are painted in order, later shapes
/// over earlier ones; target ids are assigned 1..=len in declaration order.
#[derive(Debug, Clone, PartialEq)]
pub struct SceneSpec {
    pub width: usize,
    pub height: usize,
    pub num_classes: usize,
    /// Amplitude of the uniform noise added to the semantic map.
    pub noise: f64,
    /// Mix weight of the box-blurred one-hot component, in [0, 0.5) so the
    /// per-pixel argmax class always stays the ground-truth class.
    pub blur_strength: f64,
    pub blur_radius: usize,
    pub shapes: Vec<ShapeSpec>,
}

/// Everything a scene provides: the fixture inputs and the ground truth.
#[derive(Debug, Clone)]
pub struct Scene {
    pub image: RgbImage,
    pub semantic: SemanticMap,
    pub boundary: BoundaryMap,
    pub points: Vec<PointAnnotation>,
    pub gt_mask: PseudoMask,
}

impl SceneSpec {
    /// Parses the plain-text scene format:
    ///
    /// ```text
    /// canvas W H
    /// classes N
    /// noise F           # optional, default 0
    /// blur STRENGTH R   # optional, default 0 0
    /// rect CLASS kind X Y W H
    /// circle CLASS kind CX CY R
    /// ```
    pub fn parse(text: &str) -> Result<SceneSpec> {
        let mut width = None;
        let mut height = None;
        let mut num_classes = None;
        let mut noise = 0.0;
        let mut blur_strength = 0.0;
        let mut blur_radius = 0usize;
        let mut shapes = Vec::new();
        let bad = |lineno: usize, msg: &str| {
            Error::InvalidScene(format!("line {}: {msg}", lineno + 1))
        };
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let toks: Vec<&str> = line.split_whitespace().collect();
            match toks[0] {
                "canvas" if toks.len() == 3 => {
                    width = Some(toks[1].parse().map_err(|_| bad(lineno, "bad width"))?);
                    height = Some(toks[2].parse().map_err(|_| bad(lineno, "bad height"))?);
                }
                "classes" if toks.len() == 2 => {
                    num_classes =
                        Some(toks[1].parse().map_err(|_| bad(lineno, "bad class count"))?);
                }
                "noise" if toks.len() == 2 => {
                    noise = toks[1].parse().map_err(|_| bad(lineno, "bad noise"))?;
                }
                "blur" if toks.len() == 3 => {
                    blur_strength = toks[1].parse().map_err(|_| bad(lineno, "bad blur"))?;
                    blur_radius = toks[2].parse().map_err(|_| bad(lineno, "bad blur radius"))?;
                }
                "rect" if toks.len() == 7 => {
                    let nums: Vec<usize> = toks[3..]
                        .iter()
                        .map(|t| t.parse().map_err(|_| bad(lineno, "bad rect geometry")))
                        .collect::<Result<_>>()?;
                    shapes.push(ShapeSpec {
                        class_id: toks[1].parse().map_err(|_| bad(lineno, "bad class"))?,
                        kind: TargetKind::parse(toks[2])
                            .map_err(|_| bad(lineno, "bad kind"))?,
                        geom: Geometry::Rect {
                            x: nums[0],
                            y: nums[1],
                            w: nums[2],
                            h: nums[3],
                        },
                    });
                }
                "circle" if toks.len() == 6 => {
                    let nums: Vec<usize> = toks[3..]
                        .iter()
                        .map(|t| t.parse().map_err(|_| bad(lineno, "bad circle geometry")))
                        .collect::<Result<_>>()?;
                    shapes.push(ShapeSpec {
                        class_id: toks[1].parse().map_err(|_| bad(lineno, "bad class"))?,
                        kind: TargetKind::parse(toks[2])
                            .map_err(|_| bad(lineno, "bad kind"))?,
                        geom: Geometry::Circle {
                            cx: nums[0],
                            cy: nums[1],
                            r: nums[2],
                        },
                    });
                }
                other => return Err(bad(lineno, &format!("unrecognized directive {other:?}"))),
            }
        }
        Ok(SceneSpec {
            width: width.ok_or_else(|| Error::InvalidScene("missing canvas".into()))?,
            height: height.ok_or_else(|| Error::InvalidScene("missing canvas".into()))?,
            num_classes: num_classes
                .ok_or_else(|| Error::InvalidScene("missing classes".into()))?,
            noise,
            blur_strength,
            blur_radius,
            shapes,
        })
    }

    fn validate(&self) -> Result<GridDims> {
        let dims = GridDims::new(self.height, self.width)?;
        if self.num_classes == 0 {
            return Err(Error::InvalidScene("need at least one class".into()));
        }
        if self.shapes.is_empty() {
            return Err(Error::InvalidScene("scene has no shapes".into()));
        }
        if self.shapes.len() > u16::MAX as usize {
            return Err(Error::InvalidScene("too many targets for 16-bit ids".into()));
        }
        if !(0.0..1.0).contains(&self.noise) {
            return Err(Error::InvalidScene(format!(
                "noise {} outside [0,1)",
                self.noise
            )));
        }
        if !(0.0..0.5).contains(&self.blur_strength) {
            return Err(Error::InvalidScene(format!(
                "blur strength {} outside [0,0.5)",
                self.blur_strength
            )));
        }
        for (i, s) in self.shapes.iter().enumerate() {
            if s.class_id >= self.num_classes {
                return Err(Error::InvalidScene(format!(
                    "shape {i}: class {} out of range",
                    s.class_id
                )));
            }
            let inside = match s.geom {
                Geometry::Rect { x, y, w, h } => {
                    w > 0 && h > 0 && x + w <= self.width && y + h <= self.height
                }
                Geometry::Circle { cx, cy, r } => {
                    cx >= r && cy >= r && cx + r < self.width && cy + r < self.height
                }
            };
            if !inside {
                return Err(Error::InvalidScene(format!(
                    "shape {i} falls outside the {}x{} canvas",
                    self.height, self.width
                )));
            }
        }
        Ok(dims)
    }
}

fn paint_targets(spec: &SceneSpec, dims: GridDims) -> Result<Vec<u32>> {
    let mut target = vec![0u32; dims.pixels()];
    for (i, s) in spec.shapes.iter().enumerate() {
        let id = (i + 1) as u32;
        match s.geom {
            Geometry::Rect { x, y, w, h } => {
                for yy in y..y + h {
                    for xx in x..x + w {
                        target[dims.index(xx, yy)] = id;
                    }
                }
            }
            Geometry::Circle { cx, cy, r } => {
                let rr = (r * r) as isize;
                for yy in cy - r..=cy + r {
                    for xx in cx - r..=cx + r {
                        let dx = xx as isize - cx as isize;
                        let dy = yy as isize - cy as isize;
                        if dx * dx + dy * dy <= rr {
                            target[dims.index(xx, yy)] = id;
                        }
                    }
                }
            }
        }
    }
    if let Some(j) = target.iter().position(|&t| t == 0) {
        let (x, y) = dims.coords(j);
        return Err(Error::InvalidScene(format!(
            "pixel ({x},{y}) is covered by no shape"
        )));
    }
    Ok(target)
}

fn box_blur_channel(dims: GridDims, src: &[f64], radius: usize) -> Vec<f64> {
    let r = radius as isize;
    let mut out = vec![0.0; dims.pixels()];
    for y in 0..dims.height as isize {
        for x in 0..dims.width as isize {
            let mut sum = 0.0;
            let mut count = 0.0;
            for dy in -r..=r {
                for dx in -r..=r {
                    let (nx, ny) = (x + dx, y + dy);
                    if nx >= 0
                        && ny >= 0
                        && dims.contains(nx as usize, ny as usize)
                    {
                        sum += src[dims.index(nx as usize, ny as usize)];
                        count += 1.0;
                    }
                }
            }
            out[dims.index(x as usize, y as usize)] = sum / count;
        }
    }
    out
}

/// Generates the scene deterministically from `(spec, seed)`.
pub fn synth_scene(spec: &SceneSpec, seed: u64) -> Result<Scene> {
    let dims = spec.validate()?;
    let n = dims.pixels();
    let target = paint_targets(spec, dims)?;
    let num_targets = spec.shapes.len();

    let mut owned: Vec<Vec<usize>> = vec![Vec::new(); num_targets];
    for (j, &t) in target.iter().enumerate() {
        owned[t as usize - 1].push(j);
    }
    for (i, pixels) in owned.iter().enumerate() {
        if pixels.is_empty() {
            return Err(Error::InvalidScene(format!(
                "target {} is fully occluded by later shapes",
                i + 1
            )));
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    // Flat per-target colors with evenly spread luminance so every target
    // contact shows up in the luminance gradient.
    let mut palette = Vec::with_capacity(num_targets);
    for i in 0..num_targets {
        let base = 0.15 + 0.7 * i as f64 / (num_targets.max(2) - 1) as f64;
        let color = [
            (base + rng.gen_range(0.0..0.08)).clamp(0.0, 1.0),
            (base + rng.gen_range(0.0..0.08)).clamp(0.0, 1.0),
            (base + rng.gen_range(0.0..0.08)).clamp(0.0, 1.0),
        ];
        palette.push(color);
    }
    let mut image_data = Vec::with_capacity(n * 3);
    for &t in &target {
        image_data.extend_from_slice(&palette[t as usize - 1]);
    }
    let image = RgbImage::new(spec.height, spec.width, image_data)?;

    // Semantic map: one-hot ground truth, optionally mixed with its box blur,
    // plus bounded uniform noise, renormalized per pixel.
    let channels = spec.num_classes;
    let mut sem = vec![0.0f64; n * channels];
    for (j, &t) in target.iter().enumerate() {
        sem[j * channels + spec.shapes[t as usize - 1].class_id] = 1.0;
    }
    if spec.blur_strength > 0.0 && spec.blur_radius > 0 {
        let mu = spec.blur_strength;
        for c in 0..channels {
            let plane: Vec<f64> = (0..n).map(|j| sem[j * channels + c]).collect();
            let blurred = box_blur_channel(dims, &plane, spec.blur_radius);
            for j in 0..n {
                sem[j * channels + c] = (1.0 - mu) * plane[j] + mu * blurred[j];
            }
        }
    }
    if spec.noise > 0.0 {
        for v in sem.iter_mut() {
            *v += rng.gen_range(0.0..spec.noise);
        }
    }
    for j in 0..n {
        let row = &mut sem[j * channels..(j + 1) * channels];
        let sum: f64 = row.iter().sum();
        for v in row.iter_mut() {
            *v /= sum;
        }
    }
    let semantic = SemanticMap::new(spec.height, spec.width, channels, sem)?;

    let lookup: BTreeMap<u32, (usize, TargetKind)> = spec
        .shapes
        .iter()
        .enumerate()
        .map(|(i, s)| ((i + 1) as u32, (s.class_id, s.kind)))
        .collect();
    let gt_mask = PseudoMask::new(spec.height, spec.width, target, lookup)?;

    let outline = outline_pixels(&gt_mask);
    let boundary = BoundaryMap::new(
        spec.height,
        spec.width,
        outline.iter().map(|&o| if o { 1.0 } else { 0.0 }).collect(),
    )?;

    let mut points = Vec::with_capacity(num_targets);
    for (i, pixels) in owned.iter().enumerate() {
        let pick = pixels[rng.gen_range(0..pixels.len())];
        let (x, y) = dims.coords(pick);
        let s = &spec.shapes[i];
        points.push(PointAnnotation {
            target_id: (i + 1) as u32,
            class_id: s.class_id,
            kind: s.kind,
            x,
            y,
        });
    }

    Ok(Scene {
        image,
        semantic,
        boundary,
        points,
        gt_mask,
    })
}

/// Boundary map marking pixels whose axis neighbor belongs to a different
/// class (not merely a different target). Same-class instance contacts stay
/// unmarked, which is the ambiguous case a local per-pixel assignment cannot
/// resolve.
pub fn class_outline_boundary(mask: &PseudoMask) -> BoundaryMap {
    let dims = mask.dims();
    let class_at = |j: usize| mask.class_of(mask.target(j)).expect("mask lookup is total");
    let mut data = vec![0.0f64; dims.pixels()];
    for y in 0..dims.height {
        for x in 0..dims.width {
            let j = dims.index(x, y);
            for (dx, dy) in [(1isize, 0isize), (-1, 0), (0, 1), (0, -1)] {
                let nx = x as isize + dx;
                let ny = y as isize + dy;
                if nx >= 0
                    && ny >= 0
                    && dims.contains(nx as usize, ny as usize)
                    && class_at(dims.index(nx as usize, ny as usize)) != class_at(j)
                {
                    data[j] = 1.0;
                    break;
                }
            }
        }
    }
    BoundaryMap::new(dims.height, dims.width, data).expect("finite values")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two_squares_spec() -> SceneSpec {
        SceneSpec {
            width: 16,
            height: 12,
            num_classes: 3,
            noise: 0.0,
            blur_strength: 0.0,
            blur_radius: 0,
            shapes: vec![
                ShapeSpec {
                    class_id: 0,
                    kind: TargetKind::Stuff,
                    geom: Geometry::Rect {
                        x: 0,
                        y: 0,
                        w: 16,
                        h: 12,
                    },
                },
                ShapeSpec {
                    class_id: 1,
                    kind: TargetKind::Thing,
                    geom: Geometry::Rect {
                        x: 2,
                        y: 3,
                        w: 4,
                        h: 4,
                    },
                },
                ShapeSpec {
                    class_id: 1,
                    kind: TargetKind::Thing,
                    geom: Geometry::Rect {
                        x: 10,
                        y: 5,
                        w: 4,
                        h: 4,
                    },
                },
            ],
        }
    }

    #[test]
    fn full_canvas_stuff_target_is_one_hot() {
        let spec = SceneSpec {
            width: 6,
            height: 5,
            num_classes: 2,
            noise: 0.0,
            blur_strength: 0.0,
            blur_radius: 0,
            shapes: vec![ShapeSpec {
                class_id: 1,
                kind: TargetKind::Stuff,
                geom: Geometry::Rect {
                    x: 0,
                    y: 0,
                    w: 6,
                    h: 5,
                },
            }],
        };
        let scene = synth_scene(&spec, 3).unwrap();
        for j in 0..30 {
            assert_eq!(scene.semantic.value(j, 1), 1.0);
            assert_eq!(scene.semantic.value(j, 0), 0.0);
            assert_eq!(scene.gt_mask.target(j), 1);
        }
        assert!(scene.boundary.values().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn two_squares_have_two_thing_ids_and_one_stuff_id() {
        let scene = synth_scene(&two_squares_spec(), 9).unwrap();
        let lookup = scene.gt_mask.lookup();
        assert_eq!(lookup.len(), 3);
        assert_eq!(lookup[&1], (0, TargetKind::Stuff));
        assert_eq!(lookup[&2], (1, TargetKind::Thing));
        assert_eq!(lookup[&3], (1, TargetKind::Thing));
    }

    #[test]
    fn same_seed_is_bit_identical() {
        let spec = SceneSpec {
            noise: 0.2,
            blur_strength: 0.3,
            blur_radius: 1,
            ..two_squares_spec()
        };
        let a = synth_scene(&spec, 1234).unwrap();
        let b = synth_scene(&spec, 1234).unwrap();
        assert_eq!(a.image, b.image);
        assert_eq!(a.semantic, b.semantic);
        assert_eq!(a.boundary, b.boundary);
        assert_eq!(a.points, b.points);
        assert_eq!(a.gt_mask, b.gt_mask);
        let c = synth_scene(&spec, 1235).unwrap();
        assert_ne!(a.semantic, c.semantic);
    }

    #[test]
    fn argmax_class_is_ground_truth_at_zero_noise() {
        let spec = SceneSpec {
            blur_strength: 0.45,
            blur_radius: 2,
            ..two_squares_spec()
        };
        let scene = synth_scene(&spec, 5).unwrap();
        for j in 0..scene.semantic.dims().pixels() {
            let gt_class = scene
                .gt_mask
                .class_of(scene.gt_mask.target(j))
                .unwrap();
            assert_eq!(scene.semantic.argmax_class(j), gt_class, "pixel {j}");
        }
        scene.semantic.validate_probabilities().unwrap();
    }

    #[test]
    fn gradient_proxy_support_equals_outline_set() {
        use crate::maps::low_level_boundary;
        let scene = synth_scene(&two_squares_spec(), 21).unwrap();
        let proxy = low_level_boundary(&scene.image);
        let outline = outline_pixels(&scene.gt_mask);
        for j in 0..outline.len() {
            assert_eq!(
                proxy.value(j) > 0.0,
                outline[j],
                "pixel {j}: proxy {} outline {}",
                proxy.value(j),
                outline[j]
            );
        }
    }

    #[test]
    fn shape_outside_canvas_rejected() {
        let mut spec = two_squares_spec();
        spec.shapes[1].geom = Geometry::Rect {
            x: 14,
            y: 3,
            w: 4,
            h: 4,
        };
        assert!(matches!(
            synth_scene(&spec, 0),
            Err(Error::InvalidScene(_))
        ));
    }

    #[test]
    fn occluded_target_rejected() {
        let mut spec = two_squares_spec();
        // paint a copy of shape 2 over shape 1 exactly
        spec.shapes[2] = spec.shapes[1];
        assert!(matches!(
            synth_scene(&spec, 0),
            Err(Error::InvalidScene(_))
        ));
    }

    #[test]
    fn uncovered_pixel_rejected() {
        let spec = SceneSpec {
            width: 4,
            height: 4,
            num_classes: 1,
            noise: 0.0,
            blur_strength: 0.0,
            blur_radius: 0,
            shapes: vec![ShapeSpec {
                class_id: 0,
                kind: TargetKind::Stuff,
                geom: Geometry::Rect {
                    x: 0,
                    y: 0,
                    w: 4,
                    h: 3,
                },
            }],
        };
        assert!(matches!(
            synth_scene(&spec, 0),
            Err(Error::InvalidScene(_))
        ));
    }

    #[test]
    fn parse_roundtrip_of_scene_text() {
        let text = "\
# demo scene
canvas 16 12
classes 3
noise 0.0
blur 0.0 0
rect 0 stuff 0 0 16 12
rect 1 thing 2 3 4 4
rect 1 thing 10 5 4 4
";
        let spec = SceneSpec::parse(text).unwrap();
        assert_eq!(spec, two_squares_spec());
        assert!(SceneSpec::parse("canvas 4\n").is_err());
        assert!(SceneSpec::parse("canvas 4 4\nclasses 1\nblob 0 stuff 0 0\n").is_err());
    }
}
