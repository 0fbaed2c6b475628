//! File formats: depth PNGs, intrinsics and pose files, floorplan rasters,
//! CSV tables, XYZ clouds, the little-endian binary dumps (`FEAT`, `PDEP`,
//! `POST`), PGM heatmaps and `key = value` configs.

use std::collections::BTreeMap;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use nalgebra::{Matrix4, Point3};
use thiserror::Error;

use crate::contrastive::{FeatureMap, FeatureOrigin, MatchSet};
use crate::eval::{ExperimentConfig, LocalizationRecord, Mode, Pipeline};
use crate::filter::PosteriorGrid;
use crate::floorplan::{Cell, OccupancyGrid, Pose2, RayScan};
use crate::geom::{CameraIntrinsics, DepthImage, RigidPose3};
use crate::mining::{MinedPair, PixelCorrespondenceSet};
use crate::obsmodel::DepthDistribution;
use crate::sim::{Profile, ScenarioSpec, Trajectory};

/// Rotation tolerance applied when loading pose files.
pub const POSE_FILE_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Error)]
pub enum IoError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}:{line}: {msg}")]
    Parse { path: PathBuf, line: usize, msg: String },
    #[error("{path}: {msg}")]
    Format { path: PathBuf, msg: String },
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> IoError + '_ {
    move |source| IoError::Io { path: path.to_path_buf(), source }
}

fn format_err(path: &Path, msg: impl Into<String>) -> IoError {
    IoError::Format { path: path.to_path_buf(), msg: msg.into() }
}

fn parse_err(path: &Path, line: usize, msg: impl Into<String>) -> IoError {
    IoError::Parse { path: path.to_path_buf(), line, msg: msg.into() }
}

pub fn read_text(path: &Path) -> Result<String, IoError> {
    fs::read_to_string(path).map_err(io_err(path))
}

pub fn write_text(path: &Path, text: &str) -> Result<(), IoError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(io_err(dir))?;
    }
    fs::write(path, text).map_err(io_err(path))
}

fn write_bytes(path: &Path, bytes: &[u8]) -> Result<(), IoError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(io_err(dir))?;
    }
    fs::write(path, bytes).map_err(io_err(path))
}

fn read_bytes(path: &Path) -> Result<Vec<u8>, IoError> {
    fs::read(path).map_err(io_err(path))
}

/// Parses `key = value` lines; `#` starts a comment and `[section]` headers
/// prefix the following keys as `section.key`.
pub fn parse_kv(text: &str, path: &Path) -> Result<BTreeMap<String, String>, IoError> {
    let mut out = BTreeMap::new();
    let mut section = String::new();
    for (n, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        if let Some(name) = line.strip_prefix('[').and_then(|l| l.strip_suffix(']')) {
            section = name.trim().to_string();
            continue;
        }
        let (k, v) = line.split_once('=').ok_or_else(|| parse_err(path, n + 1, "expected key = value"))?;
        let key = if section.is_empty() { k.trim().to_string() } else { format!("{section}.{}", k.trim()) };
        out.insert(key, v.trim().to_string());
    }
    Ok(out)
}

pub fn read_kv(path: &Path) -> Result<BTreeMap<String, String>, IoError> {
    parse_kv(&read_text(path)?, path)
}

fn kv_get<T: std::str::FromStr>(kv: &BTreeMap<String, String>, key: &str, path: &Path) -> Result<Option<T>, IoError> {
    kv.get(key).map(|v| v.parse::<T>().map_err(|_| format_err(path, format!("bad value for {key}: {v}")))).transpose()
}

fn kv_req<T: std::str::FromStr>(kv: &BTreeMap<String, String>, key: &str, path: &Path) -> Result<T, IoError> {
    kv_get(kv, key, path)?.ok_or_else(|| format_err(path, format!("missing key {key}")))
}

pub fn read_intrinsics(path: &Path) -> Result<CameraIntrinsics, IoError> {
    let kv = read_kv(path)?;
    let k = CameraIntrinsics {
        fx: kv_req(&kv, "fx", path)?,
        fy: kv_req(&kv, "fy", path)?,
        cx: kv_req(&kv, "cx", path)?,
        cy: kv_req(&kv, "cy", path)?,
        width: kv_req(&kv, "width", path)?,
        height: kv_req(&kv, "height", path)?,
    };
    k.validate().map_err(|e| format_err(path, e.to_string()))?;
    Ok(k)
}

pub fn write_intrinsics(path: &Path, k: &CameraIntrinsics) -> Result<(), IoError> {
    write_text(path, &format!("fx = {}\nfy = {}\ncx = {}\ncy = {}\nwidth = {}\nheight = {}\n", k.fx, k.fy, k.cx, k.cy, k.width, k.height))
}

/// Four whitespace-separated rows per frame (camera-to-world).
pub fn read_poses(path: &Path) -> Result<Vec<RigidPose3>, IoError> {
    let text = read_text(path)?;
    let rows: Vec<(usize, Vec<f64>)> = text
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty() && !l.trim_start().starts_with('#'))
        .map(|(n, l)| {
            l.split_whitespace()
                .map(|t| t.parse::<f64>().map_err(|_| parse_err(path, n + 1, format!("not a number: {t}"))))
                .collect::<Result<Vec<_>, _>>()
                .map(|r| (n + 1, r))
        })
        .collect::<Result<_, _>>()?;
    if rows.len() % 4 != 0 {
        return Err(format_err(path, format!("{} rows is not a multiple of 4", rows.len())));
    }
    rows.chunks(4)
        .map(|block| {
            let mut m = Matrix4::zeros();
            for (r, (line, vals)) in block.iter().enumerate() {
                if vals.len() != 4 {
                    return Err(parse_err(path, *line, "expected 4 values"));
                }
                for c in 0..4 {
                    m[(r, c)] = vals[c];
                }
            }
            RigidPose3::from_matrix4(&m, POSE_FILE_TOLERANCE).map_err(|e| parse_err(path, block[0].0, e.to_string()))
        })
        .collect()
}

pub fn write_poses(path: &Path, poses: &[RigidPose3]) -> Result<(), IoError> {
    let mut s = String::new();
    for p in poses {
        let m = p.to_matrix4();
        for r in 0..4 {
            s.push_str(&format!("{} {} {} {}\n", m[(r, 0)], m[(r, 1)], m[(r, 2)], m[(r, 3)]));
        }
    }
    write_text(path, &s)
}

fn decode_png(path: &Path) -> Result<(png::OutputInfo, Vec<u8>), IoError> {
    let file = fs::File::open(path).map_err(io_err(path))?;
    let decoder = png::Decoder::new(std::io::BufReader::new(file));
    let mut reader = decoder.read_info().map_err(|e| format_err(path, e.to_string()))?;
    let mut buf = vec![0; reader.output_buffer_size().ok_or_else(|| format_err(path, "image too large"))?];
    let info = reader.next_frame(&mut buf).map_err(|e| format_err(path, e.to_string()))?;
    buf.truncate(info.buffer_size());
    Ok((info, buf))
}

fn encode_png(path: &Path, width: u32, height: u32, depth: png::BitDepth, data: &[u8]) -> Result<(), IoError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(io_err(dir))?;
    }
    let file = fs::File::create(path).map_err(io_err(path))?;
    let mut enc = png::Encoder::new(BufWriter::new(file), width, height);
    enc.set_color(png::ColorType::Grayscale);
    enc.set_depth(depth);
    let mut w = enc.write_header().map_err(|e| format_err(path, e.to_string()))?;
    w.write_image_data(data).map_err(|e| format_err(path, e.to_string()))
}

/// 16-bit grayscale PNG in millimeters; 0 marks an invalid pixel.
pub fn read_depth_png(path: &Path) -> Result<DepthImage, IoError> {
    let (info, buf) = decode_png(path)?;
    if info.color_type != png::ColorType::Grayscale || info.bit_depth != png::BitDepth::Sixteen {
        return Err(format_err(path, "depth PNG must be 16-bit grayscale"));
    }
    let values = buf.chunks_exact(2).map(|b| u16::from_be_bytes([b[0], b[1]]) as f64 / 1000.0).collect();
    DepthImage::new(info.width, info.height, values).map_err(|e| format_err(path, e.to_string()))
}

pub fn write_depth_png(path: &Path, depth: &DepthImage) -> Result<(), IoError> {
    let data: Vec<u8> = depth.values().iter().flat_map(|d| ((d * 1000.0).round().clamp(0.0, 65535.0) as u16).to_be_bytes()).collect();
    encode_png(path, depth.width(), depth.height(), png::BitDepth::Sixteen, &data)
}

/// 8-bit raster: PGM (P5 or P2) or grayscale PNG. Rows run top to bottom.
pub fn read_gray8(path: &Path) -> Result<(usize, usize, Vec<u8>), IoError> {
    let bytes = read_bytes(path)?;
    if bytes.starts_with(b"P5") || bytes.starts_with(b"P2") {
        return parse_pgm(&bytes, path);
    }
    let (info, buf) = decode_png(path)?;
    if info.color_type != png::ColorType::Grayscale || info.bit_depth != png::BitDepth::Eight {
        return Err(format_err(path, "raster PNG must be 8-bit grayscale"));
    }
    Ok((info.width as usize, info.height as usize, buf))
}

fn parse_pgm(bytes: &[u8], path: &Path) -> Result<(usize, usize, Vec<u8>), IoError> {
    let mut pos = 2;
    let mut header = [0usize; 3];
    for h in header.iter_mut() {
        loop {
            while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
                pos += 1;
            }
            if pos < bytes.len() && bytes[pos] == b'#' {
                while pos < bytes.len() && bytes[pos] != b'\n' {
                    pos += 1;
                }
            } else {
                break;
            }
        }
        let start = pos;
        while pos < bytes.len() && bytes[pos].is_ascii_digit() {
            pos += 1;
        }
        *h = std::str::from_utf8(&bytes[start..pos]).ok().and_then(|s| s.parse().ok()).ok_or_else(|| format_err(path, "bad PGM header"))?;
    }
    let [w, h, maxval] = header;
    if maxval == 0 || maxval > 255 {
        return Err(format_err(path, "only 8-bit PGM is supported"));
    }
    let scale = |v: usize| ((v * 255) / maxval) as u8;
    let data: Vec<u8> = if bytes[1] == b'5' {
        let body = &bytes[pos + 1..];
        if body.len() < w * h {
            return Err(format_err(path, "truncated PGM"));
        }
        body[..w * h].iter().map(|&v| scale(v as usize)).collect()
    } else {
        let vals: Vec<u8> = std::str::from_utf8(&bytes[pos..])
            .map_err(|_| format_err(path, "bad PGM body"))?
            .split_whitespace()
            .map(|t| t.parse::<usize>().map(scale).map_err(|_| format_err(path, "bad PGM value")))
            .collect::<Result<_, _>>()?;
        if vals.len() < w * h {
            return Err(format_err(path, "truncated PGM"));
        }
        vals
    };
    Ok((w, h, data))
}

pub fn write_pgm(path: &Path, width: usize, height: usize, data: &[u8]) -> Result<(), IoError> {
    let mut bytes = format!("P5\n{width} {height}\n255\n").into_bytes();
    bytes.extend_from_slice(data);
    write_bytes(path, &bytes)
}

/// Sidecar keys for a floorplan raster.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FloorplanMeta {
    pub resolution: f64,
    pub origin: (f64, f64),
}

pub fn read_floorplan_meta(path: &Path) -> Result<FloorplanMeta, IoError> {
    let kv = read_kv(path)?;
    Ok(FloorplanMeta {
        resolution: kv_req(&kv, "resolution_m", path)?,
        origin: (kv_get(&kv, "origin_x_m", path)?.unwrap_or(0.0), kv_get(&kv, "origin_y_m", path)?.unwrap_or(0.0)),
    })
}

/// Raster value `< 128` is occupied; the top image row is the highest `y`.
/// A nonzero value in the optional mask marks a cell unknown.
pub fn read_floorplan(raster: &Path, meta: &Path, unknown_mask: Option<&Path>) -> Result<OccupancyGrid, IoError> {
    let m = read_floorplan_meta(meta)?;
    let (w, h, data) = read_gray8(raster)?;
    let mask = unknown_mask.map(read_gray8).transpose()?;
    if let Some((mw, mh, _)) = &mask {
        if (*mw, *mh) != (w, h) {
            return Err(format_err(unknown_mask.expect("mask path"), "mask size differs from raster"));
        }
    }
    let mut cells = vec![Cell::Free; w * h];
    for row in 0..h {
        let iy = h - 1 - row;
        for ix in 0..w {
            let p = row * w + ix;
            cells[iy * w + ix] = if mask.as_ref().is_some_and(|(_, _, d)| d[p] != 0) {
                Cell::Unknown
            } else if data[p] < 128 {
                Cell::Occupied
            } else {
                Cell::Free
            };
        }
    }
    OccupancyGrid::new(w, h, m.resolution, m.origin, cells).map_err(|e| format_err(raster, e.to_string()))
}

/// Writes `<stem>.pgm`-style raster plus its sidecar (and mask when unknown cells exist).
pub fn write_floorplan(raster: &Path, meta: &Path, grid: &OccupancyGrid) -> Result<(), IoError> {
    let (w, h) = (grid.width(), grid.height());
    let mut data = vec![0u8; w * h];
    let mut mask = vec![0u8; w * h];
    for iy in 0..h {
        let row = h - 1 - iy;
        for ix in 0..w {
            let c = grid.cell(ix, iy);
            data[row * w + ix] = if c == Cell::Free { 255 } else { 0 };
            mask[row * w + ix] = if c == Cell::Unknown { 255 } else { 0 };
        }
    }
    write_pgm(raster, w, h, &data)?;
    if mask.iter().any(|m| *m != 0) {
        write_pgm(&raster.with_extension("unknown.pgm"), w, h, &mask)?;
    }
    let (ox, oy) = grid.origin();
    write_text(meta, &format!("resolution_m = {}\norigin_x_m = {ox}\norigin_y_m = {oy}\n", grid.resolution()))
}

fn csv_rows(path: &Path, header: &str) -> Result<Vec<(usize, Vec<String>)>, IoError> {
    let text = read_text(path)?;
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    match lines.next() {
        Some((_, h)) if h.trim() == header => {}
        _ => return Err(parse_err(path, 1, format!("expected header {header}"))),
    }
    let cols = header.split(',').count();
    lines
        .map(|(n, l)| {
            let f: Vec<String> = l.split(',').map(|s| s.trim().to_string()).collect();
            if f.len() != cols {
                return Err(parse_err(path, n + 1, format!("expected {cols} fields")));
            }
            Ok((n + 1, f))
        })
        .collect()
}

fn field<T: std::str::FromStr>(path: &Path, line: usize, s: &str) -> Result<T, IoError> {
    s.parse().map_err(|_| parse_err(path, line, format!("bad field {s}")))
}

pub fn write_scan(path: &Path, scan: &RayScan) -> Result<(), IoError> {
    let mut s = String::from("angle_rad,depth_m\n");
    for (a, d) in scan.angles.iter().zip(&scan.depths) {
        s.push_str(&format!("{a},{d}\n"));
    }
    write_text(path, &s)
}

/// The field of view is recovered from the angles (full circle when the
/// first angle is `-pi` and the spacing is `2pi / V`).
pub fn read_scan(path: &Path) -> Result<RayScan, IoError> {
    let rows = csv_rows(path, "angle_rad,depth_m")?;
    let mut angles = Vec::with_capacity(rows.len());
    let mut depths = Vec::with_capacity(rows.len());
    for (n, f) in &rows {
        angles.push(field::<f64>(path, *n, &f[0])?);
        depths.push(field::<f64>(path, *n, &f[1])?);
    }
    let v = angles.len();
    if v < 2 {
        return Err(format_err(path, "need at least two rays to recover the field of view"));
    }
    let step = (angles[v - 1] - angles[0]) / (v - 1) as f64;
    let full = (angles[0] + std::f64::consts::PI).abs() < 1e-9 && (step * v as f64 - std::f64::consts::TAU).abs() < 1e-9;
    let fov = if full { std::f64::consts::TAU } else { angles[v - 1] - angles[0] };
    let scan = RayScan::new(fov, depths).map_err(|e| format_err(path, e.to_string()))?;
    if scan.angles.iter().zip(&angles).any(|(a, b)| (a - b).abs() > 1e-9) {
        return Err(format_err(path, "angles are not equiangular"));
    }
    Ok(scan)
}

pub fn write_correspondences(path: &Path, set: &PixelCorrespondenceSet) -> Result<(), IoError> {
    let mut s = String::from("ua,va,ub,vb\n");
    for ((ua, va), (ub, vb)) in &set.pairs {
        s.push_str(&format!("{ua},{va},{ub},{vb}\n"));
    }
    write_text(path, &s)
}

pub fn read_correspondences(path: &Path) -> Result<Vec<((u32, u32), (u32, u32))>, IoError> {
    csv_rows(path, "ua,va,ub,vb")?
        .iter()
        .map(|(n, f)| Ok(((field(path, *n, &f[0])?, field(path, *n, &f[1])?), (field(path, *n, &f[2])?, field(path, *n, &f[3])?))))
        .collect()
}

pub fn write_pairs(path: &Path, pairs: &[MinedPair]) -> Result<(), IoError> {
    let mut s = String::from("frame_a,frame_b,ratio\n");
    for p in pairs {
        s.push_str(&format!("{},{},{}\n", p.frame_a, p.frame_b, p.ratio));
    }
    write_text(path, &s)
}

pub fn read_pairs(path: &Path) -> Result<Vec<MinedPair>, IoError> {
    csv_rows(path, "frame_a,frame_b,ratio")?
        .iter()
        .map(|(n, f)| Ok(MinedPair { frame_a: field(path, *n, &f[0])?, frame_b: field(path, *n, &f[1])?, ratio: field(path, *n, &f[2])? }))
        .collect()
}

pub fn write_matches(path: &Path, m: &MatchSet) -> Result<(), IoError> {
    let mut s = String::from("i,j\n");
    for (i, j) in &m.pairs {
        s.push_str(&format!("{i},{j}\n"));
    }
    write_text(path, &s)
}

pub fn read_matches(path: &Path) -> Result<MatchSet, IoError> {
    let pairs = csv_rows(path, "i,j")?.iter().map(|(n, f)| Ok((field(path, *n, &f[0])?, field(path, *n, &f[1])?))).collect::<Result<_, IoError>>()?;
    Ok(MatchSet::new(pairs))
}

pub fn write_xyz(path: &Path, points: &[Point3<f64>]) -> Result<(), IoError> {
    let mut s = String::with_capacity(points.len() * 24);
    for p in points {
        s.push_str(&format!("{} {} {}\n", p.x, p.y, p.z));
    }
    write_text(path, &s)
}

pub fn read_xyz(path: &Path) -> Result<Vec<Point3<f64>>, IoError> {
    read_text(path)?
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(n, l)| {
            let v: Vec<f64> = l.split_whitespace().map(|t| field(path, n + 1, t)).collect::<Result<_, _>>()?;
            if v.len() != 3 {
                return Err(parse_err(path, n + 1, "expected x y z"));
            }
            Ok(Point3::new(v[0], v[1], v[2]))
        })
        .collect()
}

fn push_u32(buf: &mut Vec<u8>, v: usize) {
    buf.extend_from_slice(&(v as u32).to_le_bytes());
}

fn push_f32s(buf: &mut Vec<u8>, vals: impl IntoIterator<Item = f64>) {
    for v in vals {
        buf.extend_from_slice(&(v as f32).to_le_bytes());
    }
}

struct BinReader<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> BinReader<'a> {
    fn new(bytes: &'a [u8], path: &'a Path, magic: &[u8; 4]) -> Result<Self, IoError> {
        if bytes.len() < 4 || &bytes[..4] != magic {
            return Err(format_err(path, format!("missing magic {}", String::from_utf8_lossy(magic))));
        }
        Ok(Self { bytes, pos: 4, path })
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8], IoError> {
        let end = self.pos.checked_add(n).filter(|e| *e <= self.bytes.len()).ok_or_else(|| format_err(self.path, "truncated file"))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<usize, IoError> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]) as usize)
    }

    fn f32s(&mut self, n: usize) -> Result<Vec<f64>, IoError> {
        let len = n.checked_mul(4).ok_or_else(|| format_err(self.path, "size overflow"))?;
        Ok(self.take(len)?.chunks_exact(4).map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64).collect())
    }

    fn finish(&self) -> Result<(), IoError> {
        if self.pos != self.bytes.len() {
            return Err(format_err(self.path, "trailing bytes"));
        }
        Ok(())
    }
}

pub fn write_features(path: &Path, f: &FeatureMap) -> Result<(), IoError> {
    let mut buf = b"FEAT".to_vec();
    push_u32(&mut buf, f.len());
    push_u32(&mut buf, f.dim());
    push_f32s(&mut buf, f.data().iter().copied());
    write_bytes(path, &buf)
}

pub fn read_features(path: &Path, origin: FeatureOrigin) -> Result<FeatureMap, IoError> {
    let bytes = read_bytes(path)?;
    let mut r = BinReader::new(&bytes, path, b"FEAT")?;
    let (n, dim) = (r.u32()?, r.u32()?);
    let data = r.f32s(n.checked_mul(dim).ok_or_else(|| format_err(path, "size overflow"))?)?;
    r.finish()?;
    FeatureMap::new(dim, data, origin).map_err(|e| format_err(path, e.to_string()))
}

pub fn write_distribution(path: &Path, p: &DepthDistribution) -> Result<(), IoError> {
    let mut buf = b"PDEP".to_vec();
    push_u32(&mut buf, p.rays());
    push_u32(&mut buf, p.hypotheses());
    push_f32s(&mut buf, p.depth_grid().iter().copied());
    push_f32s(&mut buf, p.probs().iter().copied());
    write_bytes(path, &buf)
}

/// Rows are renormalized after the f32 round trip.
pub fn read_distribution(path: &Path) -> Result<DepthDistribution, IoError> {
    let bytes = read_bytes(path)?;
    let mut r = BinReader::new(&bytes, path, b"PDEP")?;
    let (v, k) = (r.u32()?, r.u32()?);
    let grid = r.f32s(k)?;
    let mut probs = r.f32s(v.checked_mul(k).ok_or_else(|| format_err(path, "size overflow"))?)?;
    r.finish()?;
    if k > 0 {
        for row in probs.chunks_mut(k) {
            let s: f64 = row.iter().sum();
            if s > 0.0 {
                row.iter_mut().for_each(|x| *x /= s);
            }
        }
    }
    DepthDistribution::new(grid, probs).map_err(|e| format_err(path, e.to_string()))
}

/// Raw posterior volume, `probs[(iy * width + ix) * orientations + o]`.
#[derive(Debug, Clone, PartialEq)]
pub struct PosteriorDump {
    pub height: usize,
    pub width: usize,
    pub orientations: usize,
    pub probs: Vec<f64>,
}

impl PosteriorDump {
    pub fn from_posterior(p: &PosteriorGrid) -> Self {
        Self { height: p.height(), width: p.width(), orientations: p.orientations(), probs: p.probs().to_vec() }
    }

    pub fn max_over_orientations(&self) -> Vec<f64> {
        self.probs.chunks(self.orientations.max(1)).map(|c| c.iter().copied().fold(0.0, f64::max)).collect()
    }
}

pub fn write_posterior(path: &Path, p: &PosteriorGrid) -> Result<(), IoError> {
    write_posterior_dump(path, &PosteriorDump::from_posterior(p))
}

pub fn write_posterior_dump(path: &Path, d: &PosteriorDump) -> Result<(), IoError> {
    let mut buf = b"POST".to_vec();
    push_u32(&mut buf, d.height);
    push_u32(&mut buf, d.width);
    push_u32(&mut buf, d.orientations);
    push_f32s(&mut buf, d.probs.iter().copied());
    write_bytes(path, &buf)
}

pub fn read_posterior(path: &Path) -> Result<PosteriorDump, IoError> {
    let bytes = read_bytes(path)?;
    let mut r = BinReader::new(&bytes, path, b"POST")?;
    let (height, width, orientations) = (r.u32()?, r.u32()?, r.u32()?);
    let n = height.checked_mul(width).and_then(|x| x.checked_mul(orientations)).ok_or_else(|| format_err(path, "size overflow"))?;
    let probs = r.f32s(n)?;
    r.finish()?;
    Ok(PosteriorDump { height, width, orientations, probs })
}

/// 8-bit heatmap of the per-cell maximum, scaled so the peak is 255 and
/// oriented with the highest `y` on top.
pub fn heatmap_bytes(d: &PosteriorDump) -> Vec<u8> {
    let m = d.max_over_orientations();
    let peak = m.iter().copied().fold(0.0, f64::max);
    let mut out = vec![0u8; d.width * d.height];
    for iy in 0..d.height {
        for ix in 0..d.width {
            let v = if peak > 0.0 { m[iy * d.width + ix] / peak } else { 0.0 };
            out[(d.height - 1 - iy) * d.width + ix] = (v * 255.0).round() as u8;
        }
    }
    out
}

pub fn write_heatmap_pgm(path: &Path, p: &PosteriorGrid) -> Result<(), IoError> {
    let d = PosteriorDump::from_posterior(p);
    write_pgm(path, d.width, d.height, &heatmap_bytes(&d))
}

pub fn write_records(path: &Path, records: &[LocalizationRecord]) -> Result<(), IoError> {
    let mut s = String::from("seq,step,est_x,est_y,est_phi,gt_x,gt_y,gt_phi\n");
    for r in records {
        s.push_str(&format!("{},{},{},{},{},{},{},{}\n", r.seq, r.step, r.estimate.x, r.estimate.y, r.estimate.phi, r.gt.x, r.gt.y, r.gt.phi));
    }
    write_text(path, &s)
}

pub fn read_records(path: &Path) -> Result<Vec<LocalizationRecord>, IoError> {
    csv_rows(path, "seq,step,est_x,est_y,est_phi,gt_x,gt_y,gt_phi")?
        .iter()
        .map(|(n, f)| {
            let g = |i: usize| field::<f64>(path, *n, &f[i]);
            Ok(LocalizationRecord {
                seq: field(path, *n, &f[0])?,
                step: field(path, *n, &f[1])?,
                estimate: Pose2 { x: g(2)?, y: g(3)?, phi: g(4)? },
                gt: Pose2 { x: g(5)?, y: g(6)?, phi: g(7)? },
            })
        })
        .collect()
}

/// Writes `trajectory.csv` plus one `scan_XXXX.csv` per step into `dir`.
pub fn write_trajectory(dir: &Path, traj: &Trajectory) -> Result<(), IoError> {
    let mut s = String::from("step,x,y,phi,dx,dy,dphi,scan\n");
    for (k, (p, d)) in traj.poses.iter().zip(&traj.deltas).enumerate() {
        let name = format!("scan_{k:04}.csv");
        write_scan(&dir.join(&name), &traj.scans[k])?;
        s.push_str(&format!("{k},{},{},{},{},{},{},{name}\n", p.x, p.y, p.phi, d.0, d.1, d.2));
    }
    write_text(&dir.join("trajectory.csv"), &s)
}

/// Reads a trajectory CSV; scan paths resolve relative to the CSV's directory.
pub fn read_trajectory(path: &Path) -> Result<Trajectory, IoError> {
    let dir = path.parent().unwrap_or(Path::new("."));
    let mut t = Trajectory { poses: Vec::new(), deltas: Vec::new(), scans: Vec::new() };
    for (n, f) in csv_rows(path, "step,x,y,phi,dx,dy,dphi,scan")? {
        let g = |i: usize| field::<f64>(path, n, &f[i]);
        t.poses.push(Pose2 { x: g(1)?, y: g(2)?, phi: g(3)? });
        t.deltas.push((g(4)?, g(5)?, g(6)?));
        t.scans.push(read_scan(&dir.join(&f[7]))?);
    }
    if t.poses.is_empty() {
        return Err(format_err(path, "empty trajectory"));
    }
    Ok(t)
}

/// Applies recognized keys of a `key = value` map onto `spec`.
pub fn apply_scenario_kv(spec: &mut ScenarioSpec, kv: &BTreeMap<String, String>, path: &Path) -> Result<(), IoError> {
    macro_rules! set {
        ($($key:literal => $field:ident),* $(,)?) => {
            $(if let Some(v) = kv_get(kv, $key, path)? { spec.$field = v; })*
        };
    }
    set!(
        "seed" => seed, "width" => width, "height" => height, "resolution" => resolution,
        "rooms" => rooms, "room_min" => room_min, "door_width" => door_width,
        "clutter_count" => clutter_count, "clutter_min" => clutter_min, "clutter_max" => clutter_max,
        "steps" => steps, "step_length" => step_length, "turn_sigma" => turn_sigma,
        "turn_probability" => turn_probability, "jitter_sigma" => jitter_sigma,
    );
    if let Some(bins) = kv_get::<usize>(kv, "lattice_bins", path)? {
        spec.lattice_bins = (bins > 0).then_some(bins);
    }
    if let Some(p) = kv.get("profile") {
        spec.profile = match p.to_ascii_lowercase().as_str() {
            "forward" | "forwardonly" | "forward_only" => Profile::ForwardOnly,
            "general" => Profile::General,
            other => return Err(format_err(path, format!("unknown profile {other}"))),
        };
    }
    Ok(())
}

pub fn read_scenario_spec(path: &Path) -> Result<ScenarioSpec, IoError> {
    let mut spec = ScenarioSpec::default();
    apply_scenario_kv(&mut spec, &read_kv(path)?, path)?;
    Ok(spec)
}

pub fn scenario_spec_text(spec: &ScenarioSpec) -> String {
    let profile = match spec.profile {
        Profile::ForwardOnly => "forward",
        Profile::General => "general",
    };
    format!(
        "seed = {}\nwidth = {}\nheight = {}\nresolution = {}\nrooms = {}\nroom_min = {}\ndoor_width = {}\n\
         clutter_count = {}\nclutter_min = {}\nclutter_max = {}\nprofile = {profile}\nsteps = {}\n\
         step_length = {}\nturn_sigma = {}\nturn_probability = {}\njitter_sigma = {}\nlattice_bins = {}\n",
        spec.seed,
        spec.width,
        spec.height,
        spec.resolution,
        spec.rooms,
        spec.room_min,
        spec.door_width,
        spec.clutter_count,
        spec.clutter_min,
        spec.clutter_max,
        spec.steps,
        spec.step_length,
        spec.turn_sigma,
        spec.turn_probability,
        spec.jitter_sigma,
        spec.lattice_bins.unwrap_or(0)
    )
}

/// Reads an experiment config. Scenario keys live under `[scenario]`,
/// everything else under `[experiment]`:
///
/// ```text
/// [scenario]
/// seed = 7
/// clutter_count = 5
///
/// [experiment]
/// scenarios = 20
/// mode = tracking        # single | tracking | mcl
/// pipeline = fused       # oracle | fused | single
/// omega = 0.5
/// sigma = 0.1
/// ```
pub fn read_experiment_config(path: &Path) -> Result<ExperimentConfig, IoError> {
    let kv = read_kv(path)?;
    let mut cfg = ExperimentConfig::default();
    let scenario: BTreeMap<String, String> = kv.iter().filter_map(|(k, v)| k.strip_prefix("scenario.").map(|k| (k.to_string(), v.clone()))).collect();
    apply_scenario_kv(&mut cfg.scenario, &scenario, path)?;
    let ex: BTreeMap<String, String> = kv.iter().filter_map(|(k, v)| k.strip_prefix("experiment.").map(|k| (k.to_string(), v.clone()))).collect();
    apply_experiment_kv(&mut cfg, &ex, path)?;
    Ok(cfg)
}

/// Applies recognized experiment keys onto `cfg`.
pub fn apply_experiment_kv(cfg: &mut ExperimentConfig, kv: &BTreeMap<String, String>, path: &Path) -> Result<(), IoError> {
    macro_rules! set {
        ($($key:literal => $($field:ident).+),* $(,)?) => {
            $(if let Some(v) = kv_get(kv, $key, path)? { cfg.$($field).+ = v; })*
        };
    }
    set!(
        "scenarios" => scenarios, "rays" => obs.rays, "sigma" => obs.sigma, "dropout" => obs.dropout,
        "max_range" => obs.max_range, "single_rays" => single_rays, "single_sigma" => single_sigma,
        "spread" => spread, "orientations" => orientations, "lambda_depth" => likelihood.lambda_depth,
        "lambda_shape" => likelihood.lambda_shape, "sigma_trans" => sigma_trans, "sigma_rot" => sigma_rot,
    );
    if let Some(deg) = kv_get::<f64>(kv, "fov_deg", path)? {
        cfg.obs.fov = deg.to_radians();
    }
    if let Some(m) = kv.get("mode") {
        cfg.mode = match m.to_ascii_lowercase().as_str() {
            "single" | "single_frame" | "singleframe" => Mode::SingleFrame,
            "tracking" | "track" => Mode::Tracking,
            "mcl" => Mode::Mcl,
            other => return Err(format_err(path, format!("unknown mode {other}"))),
        };
    }
    let omega = kv_get::<f64>(kv, "omega", path)?;
    if let Some(p) = kv.get("pipeline") {
        cfg.pipeline = match p.to_ascii_lowercase().as_str() {
            "oracle" => Pipeline::Oracle,
            "fused" => Pipeline::Fused { omega: omega.unwrap_or(0.5) },
            "single" | "single_only" => Pipeline::SingleOnly,
            other => return Err(format_err(path, format!("unknown pipeline {other}"))),
        };
    } else if let Some(omega) = omega {
        cfg.pipeline = Pipeline::Fused { omega };
    }
    Ok(())
}

/// Buffered line writer that creates parent directories.
pub fn create(path: &Path) -> Result<BufWriter<fs::File>, IoError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(io_err(dir))?;
    }
    Ok(BufWriter::new(fs::File::create(path).map_err(io_err(path))?))
}

pub fn flush(w: &mut impl Write, path: &Path) -> Result<(), IoError> {
    w.flush().map_err(io_err(path))
}
