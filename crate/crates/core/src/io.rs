//! File codecs: PFM float maps, 16-bit PGM masks and plain-text point
//! annotations.
//!
//! Float maps use the portable float map format with scanlines stored
//! top-to-bottom and a negative scale field signalling little-endian
//! samples. A one-channel map is a `Pf` file; an RGB image is a `PF` file;
//! a semantic map with `N_c` classes is a single `Pf` file of height
//! `N_c * H` (one plane per class) with a sidecar `<path>.meta` holding
//! `channels=N_c`.
//!
//! Masks are binary PGM (`P5`, maxval 65535, big-endian 16-bit samples equal
//! to the target id) with a sidecar `<path>.meta` holding one
//! `target_id class_id kind` line per target.
//!
//! Points files hold one `target_id class_id kind x y` annotation per line;
//! `#` starts a comment.

use std::collections::BTreeMap;
use std::fs;
use std::io::{BufRead, BufReader, Read};
use std::path::Path;

use crate::error::{Error, Result};
use crate::grid::GridDims;
use crate::maps::{BoundaryMap, PointAnnotation, PseudoMask, RgbImage, SemanticMap, TargetKind};

fn codec_err(path: &Path, reason: impl Into<String>) -> Error {
    Error::Codec {
        path: path.display().to_string(),
        reason: reason.into(),
    }
}

fn sidecar_path(path: &Path) -> std::path::PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".meta");
    std::path::PathBuf::from(s)
}

fn read_header_line<R: BufRead>(r: &mut R, path: &Path, what: &str) -> Result<String> {
    let mut line = String::new();
    let n = r
        .read_line(&mut line)
        .map_err(|e| codec_err(path, format!("reading {what}: {e}")))?;
    if n == 0 {
        return Err(codec_err(path, format!("missing {what} line")));
    }
    Ok(line.trim().to_string())
}

struct PfmPayload {
    width: usize,
    height: usize,
    channels: usize,
    data: Vec<f32>,
}

fn read_pfm(path: &Path) -> Result<PfmPayload> {
    let file = fs::File::open(path).map_err(|e| codec_err(path, e.to_string()))?;
    let mut r = BufReader::new(file);
    let magic = read_header_line(&mut r, path, "magic")?;
    let channels = match magic.as_str() {
        "Pf" => 1,
        "PF" => 3,
        other => return Err(codec_err(path, format!("bad magic {other:?}"))),
    };
    let dims_line = read_header_line(&mut r, path, "dimensions")?;
    let parts: Vec<&str> = dims_line.split_whitespace().collect();
    if parts.len() != 2 {
        return Err(codec_err(path, format!("bad dimensions line {dims_line:?}")));
    }
    let width: usize = parts[0]
        .parse()
        .map_err(|_| codec_err(path, format!("bad width {:?}", parts[0])))?;
    let height: usize = parts[1]
        .parse()
        .map_err(|_| codec_err(path, format!("bad height {:?}", parts[1])))?;
    if width == 0 || height == 0 {
        return Err(codec_err(path, "zero dimension"));
    }
    let scale_line = read_header_line(&mut r, path, "scale")?;
    let scale: f32 = scale_line
        .parse()
        .map_err(|_| codec_err(path, format!("bad scale {scale_line:?}")))?;
    if scale == 0.0 || !scale.is_finite() {
        return Err(codec_err(path, format!("bad scale {scale}")));
    }
    let little_endian = scale < 0.0;
    let count = width * height * channels;
    let mut buf = vec![0u8; count * 4];
    r.read_exact(&mut buf)
        .map_err(|_| codec_err(path, format!("truncated payload, expected {count} samples")))?;
    let mut trailing = [0u8; 1];
    if r.read(&mut trailing).map_err(|e| codec_err(path, e.to_string()))? != 0 {
        return Err(codec_err(path, "trailing bytes after payload"));
    }
    let mut data = Vec::with_capacity(count);
    for (i, chunk) in buf.chunks_exact(4).enumerate() {
        let bytes = [chunk[0], chunk[1], chunk[2], chunk[3]];
        let v = if little_endian {
            f32::from_le_bytes(bytes)
        } else {
            f32::from_be_bytes(bytes)
        };
        if !v.is_finite() {
            return Err(codec_err(path, format!("non-finite sample at index {i}")));
        }
        data.push(v);
    }
    Ok(PfmPayload {
        width,
        height,
        channels,
        data,
    })
}

fn write_pfm(path: &Path, width: usize, height: usize, channels: usize, data: &[f32]) -> Result<()> {
    debug_assert_eq!(data.len(), width * height * channels);
    let magic = match channels {
        1 => "Pf",
        3 => "PF",
        other => {
            return Err(Error::InvalidArgument {
                name: "channels",
                reason: format!("pfm supports 1 or 3 channels, got {other}"),
            })
        }
    };
    let mut out = Vec::with_capacity(data.len() * 4 + 32);
    out.extend_from_slice(format!("{magic}\n{width} {height}\n-1.0\n").as_bytes());
    for v in data {
        out.extend_from_slice(&v.to_le_bytes());
    }
    fs::write(path, out).map_err(|e| codec_err(path, e.to_string()))
}

/// Writes a one-channel boundary map as a `Pf` file.
pub fn write_boundary_map(map: &BoundaryMap, path: &Path) -> Result<()> {
    let dims = map.dims();
    let data: Vec<f32> = map.values().iter().map(|&v| v as f32).collect();
    write_pfm(path, dims.width, dims.height, 1, &data)
}

/// Reads a one-channel boundary map, validating the [0,1] range.
pub fn read_boundary_map(path: &Path) -> Result<BoundaryMap> {
    let p = read_pfm(path)?;
    if p.channels != 1 {
        return Err(codec_err(path, "boundary map must be one channel (Pf)"));
    }
    let map = BoundaryMap::new(p.height, p.width, p.data.iter().map(|&v| v as f64).collect())?;
    map.validate_range()?;
    Ok(map)
}

/// Writes a semantic map as stacked per-class planes plus a channel sidecar.
pub fn write_semantic_map(map: &SemanticMap, path: &Path) -> Result<()> {
    let dims = map.dims();
    let channels = map.channels();
    let n = dims.pixels();
    let mut planes = vec![0f32; n * channels];
    for j in 0..n {
        for c in 0..channels {
            planes[c * n + j] = map.value(j, c) as f32;
        }
    }
    write_pfm(path, dims.width, dims.height * channels, 1, &planes)?;
    fs::write(sidecar_path(path), format!("channels={channels}\n"))
        .map_err(|e| codec_err(&sidecar_path(path), e.to_string()))
}

/// Reads a semantic map (plane-stacked `Pf` plus sidecar), validating the
/// per-pixel probability invariants.
pub fn read_semantic_map(path: &Path) -> Result<SemanticMap> {
    let side = sidecar_path(path);
    let text = fs::read_to_string(&side).map_err(|e| codec_err(&side, e.to_string()))?;
    let line = text.trim();
    let channels: usize = line
        .strip_prefix("channels=")
        .and_then(|v| v.parse().ok())
        .ok_or_else(|| codec_err(&side, format!("expected channels=N, got {line:?}")))?;
    if channels == 0 {
        return Err(codec_err(&side, "channels must be >= 1"));
    }
    let p = read_pfm(path)?;
    if p.channels != 1 {
        return Err(codec_err(path, "semantic map must be stored as Pf planes"));
    }
    if p.height % channels != 0 {
        return Err(codec_err(
            path,
            format!("stored height {} not divisible by channels {channels}", p.height),
        ));
    }
    let height = p.height / channels;
    let n = height * p.width;
    let mut data = vec![0f64; n * channels];
    for c in 0..channels {
        for j in 0..n {
            data[j * channels + c] = p.data[c * n + j] as f64;
        }
    }
    let map = SemanticMap::new(height, p.width, channels, data)?;
    map.validate_probabilities()?;
    Ok(map)
}

/// Writes an RGB image as a color `PF` file.
pub fn write_image(image: &RgbImage, path: &Path) -> Result<()> {
    let dims = image.dims();
    let data: Vec<f32> = image.values().iter().map(|&v| v as f32).collect();
    write_pfm(path, dims.width, dims.height, 3, &data)
}

pub fn read_image(path: &Path) -> Result<RgbImage> {
    let p = read_pfm(path)?;
    if p.channels != 3 {
        return Err(codec_err(path, "image must be a color PF file"));
    }
    RgbImage::new(p.height, p.width, p.data.iter().map(|&v| v as f64).collect())
}

/// Writes a pseudo-mask as a 16-bit PGM plus a target lookup sidecar.
pub fn write_mask(mask: &PseudoMask, path: &Path) -> Result<()> {
    let dims = mask.dims();
    let mut out = Vec::with_capacity(dims.pixels() * 2 + 32);
    out.extend_from_slice(format!("P5\n{} {}\n65535\n", dims.width, dims.height).as_bytes());
    for &t in mask.targets() {
        if t > u16::MAX as u32 {
            return Err(Error::InvalidArgument {
                name: "target_id",
                reason: format!("{t} exceeds the 16-bit mask sample range"),
            });
        }
        out.extend_from_slice(&(t as u16).to_be_bytes());
    }
    fs::write(path, out).map_err(|e| codec_err(path, e.to_string()))?;
    let mut side = String::new();
    for (&id, &(class, kind)) in mask.lookup() {
        side.push_str(&format!("{id} {class} {}\n", kind.as_str()));
    }
    fs::write(sidecar_path(path), side).map_err(|e| codec_err(&sidecar_path(path), e.to_string()))
}

pub fn read_mask(path: &Path) -> Result<PseudoMask> {
    let file = fs::File::open(path).map_err(|e| codec_err(path, e.to_string()))?;
    let mut r = BufReader::new(file);
    let magic = read_header_line(&mut r, path, "magic")?;
    if magic != "P5" {
        return Err(codec_err(path, format!("bad magic {magic:?}, expected P5")));
    }
    let mut dims_line = read_header_line(&mut r, path, "dimensions")?;
    while dims_line.starts_with('#') {
        dims_line = read_header_line(&mut r, path, "dimensions")?;
    }
    let parts: Vec<&str> = dims_line.split_whitespace().collect();
    if parts.len() != 2 {
        return Err(codec_err(path, format!("bad dimensions line {dims_line:?}")));
    }
    let width: usize = parts[0]
        .parse()
        .map_err(|_| codec_err(path, format!("bad width {:?}", parts[0])))?;
    let height: usize = parts[1]
        .parse()
        .map_err(|_| codec_err(path, format!("bad height {:?}", parts[1])))?;
    let maxval = read_header_line(&mut r, path, "maxval")?;
    if maxval != "65535" {
        return Err(codec_err(path, format!("expected maxval 65535, got {maxval:?}")));
    }
    let count = width * height;
    let mut buf = vec![0u8; count * 2];
    r.read_exact(&mut buf)
        .map_err(|_| codec_err(path, format!("truncated payload, expected {count} samples")))?;
    let mut trailing = [0u8; 1];
    if r.read(&mut trailing).map_err(|e| codec_err(path, e.to_string()))? != 0 {
        return Err(codec_err(path, "trailing bytes after payload"));
    }
    let target: Vec<u32> = buf
        .chunks_exact(2)
        .map(|c| u16::from_be_bytes([c[0], c[1]]) as u32)
        .collect();

    let side = sidecar_path(path);
    let text = fs::read_to_string(&side).map_err(|e| codec_err(&side, e.to_string()))?;
    let mut lookup: BTreeMap<u32, (usize, TargetKind)> = BTreeMap::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let toks: Vec<&str> = line.split_whitespace().collect();
        if toks.len() != 3 {
            return Err(codec_err(
                &side,
                format!("line {}: expected `target_id class_id kind`", lineno + 1),
            ));
        }
        let id: u32 = toks[0]
            .parse()
            .map_err(|_| codec_err(&side, format!("line {}: bad target id", lineno + 1)))?;
        let class: usize = toks[1]
            .parse()
            .map_err(|_| codec_err(&side, format!("line {}: bad class id", lineno + 1)))?;
        let kind = TargetKind::parse(toks[2])?;
        if lookup.insert(id, (class, kind)).is_some() {
            return Err(codec_err(
                &side,
                format!("duplicate target_id {id} in lookup"),
            ));
        }
    }
    PseudoMask::new(height, width, target, lookup)
}

/// A float map read back from disk: semantic when the channel sidecar is
/// present, boundary otherwise.
#[derive(Debug, Clone, PartialEq)]
pub enum MapFile {
    Semantic(SemanticMap),
    Boundary(BoundaryMap),
}

/// Reads either map kind, dispatching on the sidecar.
pub fn read_map(path: &Path) -> Result<MapFile> {
    if sidecar_path(path).exists() {
        Ok(MapFile::Semantic(read_semantic_map(path)?))
    } else {
        Ok(MapFile::Boundary(read_boundary_map(path)?))
    }
}

pub fn write_map(map: &MapFile, path: &Path) -> Result<()> {
    match map {
        MapFile::Semantic(m) => write_semantic_map(m, path),
        MapFile::Boundary(m) => write_boundary_map(m, path),
    }
}

/// Writes annotations as `target_id class_id kind x y` lines.
pub fn write_points(points: &[PointAnnotation], path: &Path) -> Result<()> {
    let mut out = String::from("# target_id class_id kind x y\n");
    for p in points {
        out.push_str(&format!(
            "{} {} {} {} {}\n",
            p.target_id,
            p.class_id,
            p.kind.as_str(),
            p.x,
            p.y
        ));
    }
    fs::write(path, out).map_err(|e| codec_err(path, e.to_string()))
}

/// Reads annotations, rejecting duplicate target ids and coordinates outside
/// `dims`.
pub fn read_points(path: &Path, dims: GridDims) -> Result<Vec<PointAnnotation>> {
    let text = fs::read_to_string(path).map_err(|e| codec_err(path, e.to_string()))?;
    let mut points = Vec::new();
    let mut seen = std::collections::BTreeSet::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let toks: Vec<&str> = line.split_whitespace().collect();
        if toks.len() != 5 {
            return Err(codec_err(
                path,
                format!("line {}: expected `target_id class_id kind x y`", lineno + 1),
            ));
        }
        let target_id: u32 = toks[0]
            .parse()
            .map_err(|_| codec_err(path, format!("line {}: bad target id", lineno + 1)))?;
        if target_id == 0 {
            return Err(Error::InvalidPoints("target_id 0 is reserved".into()));
        }
        if !seen.insert(target_id) {
            return Err(Error::InvalidPoints(format!(
                "duplicate target_id {target_id}"
            )));
        }
        let class_id: usize = toks[1]
            .parse()
            .map_err(|_| codec_err(path, format!("line {}: bad class id", lineno + 1)))?;
        let kind = TargetKind::parse(toks[2])?;
        let x: usize = toks[3]
            .parse()
            .map_err(|_| codec_err(path, format!("line {}: bad x", lineno + 1)))?;
        let y: usize = toks[4]
            .parse()
            .map_err(|_| codec_err(path, format!("line {}: bad y", lineno + 1)))?;
        if !dims.contains(x, y) {
            return Err(Error::InvalidPoints(format!(
                "point for target {target_id} at ({x},{y}) outside {}x{} grid",
                dims.height, dims.width
            )));
        }
        points.push(PointAnnotation {
            target_id,
            class_id,
            kind,
            x,
            y,
        });
    }
    if points.is_empty() {
        return Err(Error::InvalidPoints(format!(
            "{} contains no annotations",
            path.display()
        )));
    }
    Ok(points)
}
