//! In-memory point-cloud representation, weak-label bookkeeping, and file IO.
//!
//! On-disk ASCII layout is whitespace-separated `x y z [r g b] [class [instance]]`
//! with colors stored as 0-255 integers in files and `[0,1]` in memory. PLY
//! support covers ascii and binary_little_endian files with the properties
//! x/y/z/red/green/blue/label.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::scalar::{Scalar, Vec3};

/// Class id of an unlabeled point. Used as the sentinel everywhere.
pub const UNLABELED: i32 = -1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CloudFormat {
    AsciiXyz,
    Ply,
}

/// Point cloud with optional per-point channels. All present channels have
/// the same length as `positions`.
#[derive(Debug, Clone, Default)]
pub struct PointCloud<S: Scalar = f64> {
    pub positions: Vec<Vec3<S>>,
    /// RGB in [0,1].
    pub colors: Option<Vec<Vec3<S>>>,
    /// Unit normals.
    pub normals: Option<Vec<Vec3<S>>>,
    /// Curvature proxy in [0, 1/3].
    pub curvatures: Option<Vec<S>>,
    /// Ground-truth class ids, evaluation only. -1 means unlabeled.
    pub gt_labels: Option<Vec<i32>>,
    /// Ground-truth instance ids, evaluation only.
    pub gt_instances: Option<Vec<i32>>,
}

impl<S: Scalar> PointCloud<S> {
    pub fn from_positions(positions: Vec<Vec3<S>>) -> Self {
        Self {
            positions,
            ..Self::default()
        }
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    /// Checks channel-length agreement and value ranges.
    pub fn validate(&self) -> Result<()> {
        let n = self.len();
        let check = |len: usize, name: &str| {
            if len != n {
                Err(Error::Shape(format!(
                    "channel {name} has {len} entries, expected {n}"
                )))
            } else {
                Ok(())
            }
        };
        if let Some(c) = &self.colors {
            check(c.len(), "colors")?;
            for (i, c) in c.iter().enumerate() {
                let ok = |v: S| v >= S::zero() && v <= S::one();
                if !(ok(c.x) && ok(c.y) && ok(c.z)) {
                    return Err(Error::Shape(format!("color {i} outside [0,1]")));
                }
            }
        }
        if let Some(nrm) = &self.normals {
            check(nrm.len(), "normals")?;
            let tol = S::from_f64_lossy(1e-6);
            for (i, v) in nrm.iter().enumerate() {
                if (v.norm() - S::one()).abs() > tol {
                    return Err(Error::Shape(format!("normal {i} is not unit length")));
                }
            }
        }
        if let Some(k) = &self.curvatures {
            check(k.len(), "curvatures")?;
        }
        if let Some(l) = &self.gt_labels {
            check(l.len(), "gt_labels")?;
        }
        if let Some(l) = &self.gt_instances {
            check(l.len(), "gt_instances")?;
        }
        Ok(())
    }

    /// Number of classes implied by gt labels (max id + 1), 0 when absent.
    pub fn num_gt_classes(&self) -> usize {
        self.gt_labels
            .as_ref()
            .map(|l| l.iter().copied().max().map_or(0, |m| (m + 1).max(0) as usize))
            .unwrap_or(0)
    }
}

/// Weak supervision: a tiny set of labeled point indices.
#[derive(Debug, Clone)]
pub struct WeakLabelSet {
    /// (point_index, class_id), point indices unique.
    pub entries: Vec<(usize, i32)>,
    /// Total class count.
    pub num_classes: usize,
    /// Per-class point counts in the (training) cloud, used for tie-breaking.
    pub class_frequency: Vec<usize>,
}

impl WeakLabelSet {
    pub fn class_of(&self, point: usize) -> Option<i32> {
        self.entries
            .iter()
            .find(|(p, _)| *p == point)
            .map(|(_, c)| *c)
    }
}

/// Randomly samples weak labels from the ground truth, guaranteeing at least
/// one labeled point per present class. Deterministic for a fixed seed.
pub fn sample_weak_labels<S: Scalar>(
    cloud: &PointCloud<S>,
    fraction: f64,
    rng_seed: u64,
) -> Result<WeakLabelSet> {
    let gt = cloud
        .gt_labels
        .as_ref()
        .ok_or(Error::MissingChannel("gt_labels"))?;
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::Config(format!("fraction {fraction} outside (0,1]")));
    }
    let num_classes = cloud.num_gt_classes();
    let mut class_frequency = vec![0usize; num_classes];
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); num_classes];
    for (i, &c) in gt.iter().enumerate() {
        if c >= 0 {
            class_frequency[c as usize] += 1;
            by_class[c as usize].push(i);
        }
    }
    let present: Vec<usize> = (0..num_classes).filter(|&c| class_frequency[c] > 0).collect();

    let n = cloud.len();
    // round-half-up, then clamp up to the present class count
    let target = (((fraction * n as f64) + 0.5).floor() as usize).max(present.len());

    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let mut chosen: Vec<usize> = Vec::with_capacity(target);
    let mut taken = vec![false; n];
    for &c in &present {
        let idx = *by_class[c].choose(&mut rng).expect("present class");
        chosen.push(idx);
        taken[idx] = true;
    }
    let mut pool: Vec<usize> = (0..n).filter(|&i| gt[i] >= 0 && !taken[i]).collect();
    pool.shuffle(&mut rng);
    for idx in pool {
        if chosen.len() >= target {
            break;
        }
        chosen.push(idx);
    }
    let entries = chosen.into_iter().map(|i| (i, gt[i])).collect();
    Ok(WeakLabelSet {
        entries,
        num_classes,
        class_frequency,
    })
}

/// Per-point output row of the pipeline.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PointAssignment {
    /// -1 marks a point owned by no region (e.g. filtered away).
    pub region_id: i64,
    pub class_id: i32,
    pub confidence: f64,
}

/// Writes `index region class confidence` rows, index-sorted.
pub fn save_labels(assignments: &[PointAssignment], path: &Path) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for (i, a) in assignments.iter().enumerate() {
        writeln!(
            w,
            "{} {} {} {}",
            i,
            a.region_id,
            a.class_id,
            format_sig6(a.confidence)
        )
        .map_err(|e| Error::io(path, e))?;
    }
    Ok(())
}

pub fn load_labels(path: &Path) -> Result<Vec<PointAssignment>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (lineno, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let toks: Vec<&str> = line.split_whitespace().collect();
        if toks.len() != 4 {
            return Err(Error::parse(path, lineno + 1, "expected 4 columns"));
        }
        let index: usize = toks[0]
            .parse()
            .map_err(|_| Error::parse(path, lineno + 1, "bad index"))?;
        if index != out.len() {
            return Err(Error::parse(path, lineno + 1, "indices must be dense and sorted"));
        }
        out.push(PointAssignment {
            region_id: toks[1]
                .parse()
                .map_err(|_| Error::parse(path, lineno + 1, "bad region id"))?,
            class_id: toks[2]
                .parse()
                .map_err(|_| Error::parse(path, lineno + 1, "bad class id"))?,
            confidence: toks[3]
                .parse()
                .map_err(|_| Error::parse(path, lineno + 1, "bad confidence"))?,
        });
    }
    Ok(out)
}

/// Writes a weak-label set as `index class` rows.
pub fn save_weak_labels(weak: &WeakLabelSet, path: &Path) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    writeln!(w, "# num_classes {}", weak.num_classes).map_err(|e| Error::io(path, e))?;
    writeln!(
        w,
        "# class_frequency {}",
        weak.class_frequency
            .iter()
            .map(|c| c.to_string())
            .collect::<Vec<_>>()
            .join(" ")
    )
    .map_err(|e| Error::io(path, e))?;
    for (i, c) in &weak.entries {
        writeln!(w, "{i} {c}").map_err(|e| Error::io(path, e))?;
    }
    Ok(())
}

pub fn load_weak_labels(path: &Path) -> Result<WeakLabelSet> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut entries = Vec::new();
    let mut num_classes = 0usize;
    let mut class_frequency = Vec::new();
    for (lineno, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        let t = line.trim();
        if t.is_empty() {
            continue;
        }
        if let Some(rest) = t.strip_prefix("# num_classes") {
            num_classes = rest
                .trim()
                .parse()
                .map_err(|_| Error::parse(path, lineno + 1, "bad num_classes"))?;
            continue;
        }
        if let Some(rest) = t.strip_prefix("# class_frequency") {
            class_frequency = rest
                .split_whitespace()
                .map(|x| x.parse::<usize>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|_| Error::parse(path, lineno + 1, "bad class_frequency"))?;
            continue;
        }
        if t.starts_with('#') {
            continue;
        }
        let toks: Vec<&str> = t.split_whitespace().collect();
        if toks.len() != 2 {
            return Err(Error::parse(path, lineno + 1, "expected `index class`"));
        }
        entries.push((
            toks[0]
                .parse()
                .map_err(|_| Error::parse(path, lineno + 1, "bad index"))?,
            toks[1]
                .parse()
                .map_err(|_| Error::parse(path, lineno + 1, "bad class"))?,
        ));
    }
    if num_classes == 0 {
        num_classes = entries.iter().map(|(_, c)| c + 1).max().unwrap_or(0).max(0) as usize;
    }
    if class_frequency.len() != num_classes {
        class_frequency = vec![0; num_classes];
        for (_, c) in &entries {
            if *c >= 0 {
                class_frequency[*c as usize] += 1;
            }
        }
    }
    Ok(WeakLabelSet {
        entries,
        num_classes,
        class_frequency,
    })
}

/// Formats with 6 significant digits, the convention for all numeric output.
pub fn format_sig6(v: f64) -> String {
    if v == 0.0 {
        return "0".to_string();
    }
    let s = format!("{v:.*e}", 5);
    // re-render from the exponent form so plain magnitudes stay readable
    let parsed: f64 = s.parse().unwrap();
    if parsed.abs() >= 1e-4 && parsed.abs() < 1e9 {
        let mag = parsed.abs().log10().floor() as i32;
        let decimals = (5 - mag).max(0) as usize;
        let out = format!("{parsed:.*}", decimals);
        // strip trailing zeros but keep at least one digit
        if out.contains('.') {
            let trimmed = out.trim_end_matches('0').trim_end_matches('.');
            trimmed.to_string()
        } else {
            out
        }
    } else {
        s
    }
}

pub fn load_cloud<S: Scalar>(path: &Path, format: CloudFormat) -> Result<PointCloud<S>> {
    match format {
        CloudFormat::AsciiXyz => load_ascii(path),
        CloudFormat::Ply => load_ply(path),
    }
}

/// Guesses the format from the file extension (`.ply` vs anything else).
pub fn load_cloud_auto<S: Scalar>(path: &Path) -> Result<PointCloud<S>> {
    let fmt = if path.extension().map(|e| e.eq_ignore_ascii_case("ply")) == Some(true) {
        CloudFormat::Ply
    } else {
        CloudFormat::AsciiXyz
    };
    load_cloud(path, fmt)
}

fn parse_coord<S: Scalar>(
    tok: &str,
    path: &Path,
    lineno: usize,
) -> Result<S> {
    let v: f64 = tok
        .parse()
        .map_err(|_| Error::parse(path, lineno, format!("bad number `{tok}`")))?;
    if !v.is_finite() {
        return Err(Error::data(path, lineno, format!("non-finite coordinate `{tok}`")));
    }
    Ok(S::from_f64_lossy(v))
}

fn load_ascii<S: Scalar>(path: &Path) -> Result<PointCloud<S>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut positions = Vec::new();
    let mut colors: Vec<Vec3<S>> = Vec::new();
    let mut labels: Vec<i32> = Vec::new();
    let mut instances: Vec<i32> = Vec::new();
    let mut width: Option<usize> = None;
    for (idx, line) in BufReader::new(file).lines().enumerate() {
        let lineno = idx + 1;
        let line = line.map_err(|e| Error::io(path, e))?;
        let t = line.trim();
        if t.is_empty() || t.starts_with('#') {
            continue;
        }
        let toks: Vec<&str> = t.split_whitespace().collect();
        match width {
            None => {
                if ![3, 4, 5, 6, 7, 8].contains(&toks.len()) {
                    return Err(Error::parse(
                        path,
                        lineno,
                        format!("expected 3-8 columns, got {}", toks.len()),
                    ));
                }
                width = Some(toks.len());
            }
            Some(w) if w != toks.len() => {
                return Err(Error::parse(
                    path,
                    lineno,
                    format!("inconsistent column count {} vs {}", toks.len(), w),
                ));
            }
            _ => {}
        }
        let w = width.unwrap();
        positions.push(Vec3::new(
            parse_coord(toks[0], path, lineno)?,
            parse_coord(toks[1], path, lineno)?,
            parse_coord(toks[2], path, lineno)?,
        ));
        let mut cursor = 3;
        if w >= 6 {
            let mut rgb = [S::zero(); 3];
            for (k, slot) in rgb.iter_mut().enumerate() {
                let v: f64 = toks[cursor + k]
                    .parse()
                    .map_err(|_| Error::parse(path, lineno, "bad color value"))?;
                if !(0.0..=255.0).contains(&v) {
                    return Err(Error::data(path, lineno, "color outside 0-255"));
                }
                *slot = S::from_f64_lossy(v / 255.0);
            }
            colors.push(Vec3::new(rgb[0], rgb[1], rgb[2]));
            cursor += 3;
        }
        if cursor < w {
            labels.push(
                toks[cursor]
                    .parse()
                    .map_err(|_| Error::parse(path, lineno, "bad label"))?,
            );
            cursor += 1;
        }
        if cursor < w {
            instances.push(
                toks[cursor]
                    .parse()
                    .map_err(|_| Error::parse(path, lineno, "bad instance id"))?,
            );
        }
    }
    let cloud = PointCloud {
        positions,
        colors: if colors.is_empty() { None } else { Some(colors) },
        normals: None,
        curvatures: None,
        gt_labels: if labels.is_empty() { None } else { Some(labels) },
        gt_instances: if instances.is_empty() { None } else { Some(instances) },
    };
    cloud.validate()?;
    Ok(cloud)
}

/// Saves in the canonical ASCII layout, emitting whichever optional channels
/// are present (colors always before labels).
pub fn save_cloud_ascii<S: Scalar>(cloud: &PointCloud<S>, path: &Path) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for i in 0..cloud.len() {
        let p = cloud.positions[i].to_array_f64();
        let mut row = format!(
            "{} {} {}",
            format_sig6(p[0]),
            format_sig6(p[1]),
            format_sig6(p[2])
        );
        if let Some(colors) = &cloud.colors {
            let c = colors[i].to_array_f64();
            row.push_str(&format!(
                " {} {} {}",
                (c[0] * 255.0).round() as u8,
                (c[1] * 255.0).round() as u8,
                (c[2] * 255.0).round() as u8
            ));
        }
        if let Some(labels) = &cloud.gt_labels {
            row.push_str(&format!(" {}", labels[i]));
            if let Some(inst) = &cloud.gt_instances {
                row.push_str(&format!(" {}", inst[i]));
            }
        }
        writeln!(w, "{row}").map_err(|e| Error::io(path, e))?;
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum PlyEncoding {
    Ascii,
    BinaryLittleEndian,
}

#[derive(Debug, Clone, Copy)]
enum PlyType {
    F32,
    F64,
    U8,
    I32,
    U32,
    I16,
    U16,
    I8,
}

impl PlyType {
    fn parse(name: &str) -> Option<Self> {
        Some(match name {
            "float" | "float32" => PlyType::F32,
            "double" | "float64" => PlyType::F64,
            "uchar" | "uint8" => PlyType::U8,
            "char" | "int8" => PlyType::I8,
            "short" | "int16" => PlyType::I16,
            "ushort" | "uint16" => PlyType::U16,
            "int" | "int32" => PlyType::I32,
            "uint" | "uint32" => PlyType::U32,
            _ => return None,
        })
    }

    fn size(self) -> usize {
        match self {
            PlyType::F64 => 8,
            PlyType::F32 | PlyType::I32 | PlyType::U32 => 4,
            PlyType::I16 | PlyType::U16 => 2,
            PlyType::U8 | PlyType::I8 => 1,
        }
    }

    fn read_le(self, bytes: &[u8]) -> f64 {
        match self {
            PlyType::F32 => f32::from_le_bytes(bytes[..4].try_into().unwrap()) as f64,
            PlyType::F64 => f64::from_le_bytes(bytes[..8].try_into().unwrap()),
            PlyType::U8 => bytes[0] as f64,
            PlyType::I8 => bytes[0] as i8 as f64,
            PlyType::I16 => i16::from_le_bytes(bytes[..2].try_into().unwrap()) as f64,
            PlyType::U16 => u16::from_le_bytes(bytes[..2].try_into().unwrap()) as f64,
            PlyType::I32 => i32::from_le_bytes(bytes[..4].try_into().unwrap()) as f64,
            PlyType::U32 => u32::from_le_bytes(bytes[..4].try_into().unwrap()) as f64,
        }
    }
}

fn load_ply<S: Scalar>(path: &Path) -> Result<PointCloud<S>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = BufReader::new(file);

    let mut encoding = None;
    let mut vertex_count = 0usize;
    let mut props: Vec<(String, PlyType)> = Vec::new();
    let mut in_vertex_element = false;
    let mut lineno = 0usize;
    loop {
        let mut line = String::new();
        let n = reader.read_line(&mut line).map_err(|e| Error::io(path, e))?;
        if n == 0 {
            return Err(Error::parse(path, lineno, "unexpected EOF in PLY header"));
        }
        lineno += 1;
        let t = line.trim();
        if lineno == 1 {
            if t != "ply" {
                return Err(Error::parse(path, 1, "missing `ply` magic"));
            }
            continue;
        }
        let toks: Vec<&str> = t.split_whitespace().collect();
        match toks.first().copied() {
            Some("format") => {
                encoding = match toks.get(1).copied() {
                    Some("ascii") => Some(PlyEncoding::Ascii),
                    Some("binary_little_endian") => Some(PlyEncoding::BinaryLittleEndian),
                    other => {
                        return Err(Error::parse(
                            path,
                            lineno,
                            format!("unsupported PLY format {other:?}"),
                        ))
                    }
                };
            }
            Some("element") => {
                in_vertex_element = toks.get(1) == Some(&"vertex");
                if in_vertex_element {
                    vertex_count = toks
                        .get(2)
                        .and_then(|v| v.parse().ok())
                        .ok_or_else(|| Error::parse(path, lineno, "bad vertex count"))?;
                }
            }
            Some("property") if in_vertex_element => {
                if toks.len() != 3 || toks[1] == "list" {
                    return Err(Error::parse(path, lineno, "unsupported vertex property"));
                }
                let ty = PlyType::parse(toks[1])
                    .ok_or_else(|| Error::parse(path, lineno, "unknown property type"))?;
                props.push((toks[2].to_string(), ty));
            }
            Some("end_header") => break,
            _ => {}
        }
    }
    let encoding = encoding.ok_or_else(|| Error::parse(path, lineno, "missing format line"))?;

    let find = |name: &str| props.iter().position(|(n, _)| n == name);
    let (ix, iy, iz) = match (find("x"), find("y"), find("z")) {
        (Some(a), Some(b), Some(c)) => (a, b, c),
        _ => return Err(Error::parse(path, lineno, "PLY lacks x/y/z properties")),
    };
    let rgb = match (find("red"), find("green"), find("blue")) {
        (Some(r), Some(g), Some(b)) => Some((r, g, b)),
        _ => None,
    };
    let ilabel = find("label");

    let mut rows: Vec<Vec<f64>> = Vec::with_capacity(vertex_count);
    match encoding {
        PlyEncoding::Ascii => {
            for _ in 0..vertex_count {
                let mut line = String::new();
                let n = reader.read_line(&mut line).map_err(|e| Error::io(path, e))?;
                if n == 0 {
                    return Err(Error::parse(path, lineno, "truncated PLY body"));
                }
                lineno += 1;
                let vals: Vec<f64> = line
                    .split_whitespace()
                    .map(|t| t.parse::<f64>())
                    .collect::<std::result::Result<_, _>>()
                    .map_err(|_| Error::parse(path, lineno, "bad PLY value"))?;
                if vals.len() != props.len() {
                    return Err(Error::parse(path, lineno, "wrong PLY column count"));
                }
                rows.push(vals);
            }
        }
        PlyEncoding::BinaryLittleEndian => {
            let row_size: usize = props.iter().map(|(_, t)| t.size()).sum();
            let mut buf = vec![0u8; row_size];
            for _ in 0..vertex_count {
                reader
                    .read_exact(&mut buf)
                    .map_err(|e| Error::io(path, e))?;
                let mut vals = Vec::with_capacity(props.len());
                let mut off = 0;
                for (_, ty) in &props {
                    vals.push(ty.read_le(&buf[off..]));
                    off += ty.size();
                }
                rows.push(vals);
            }
        }
    }

    let mut positions = Vec::with_capacity(rows.len());
    let mut colors = rgb.map(|_| Vec::with_capacity(rows.len()));
    let mut labels = ilabel.map(|_| Vec::with_capacity(rows.len()));
    for (i, row) in rows.iter().enumerate() {
        let (x, y, z) = (row[ix], row[iy], row[iz]);
        if !(x.is_finite() && y.is_finite() && z.is_finite()) {
            return Err(Error::data(path, i + 1, "non-finite coordinate"));
        }
        positions.push(Vec3::<S>::from_f64(x, y, z));
        if let (Some((r, g, b)), Some(out)) = (rgb, colors.as_mut()) {
            out.push(Vec3::<S>::from_f64(
                row[r] / 255.0,
                row[g] / 255.0,
                row[b] / 255.0,
            ));
        }
        if let (Some(il), Some(out)) = (ilabel, labels.as_mut()) {
            out.push(row[il] as i32);
        }
    }
    let cloud = PointCloud {
        positions,
        colors,
        normals: None,
        curvatures: None,
        gt_labels: labels,
        gt_instances: None,
    };
    cloud.validate()?;
    Ok(cloud)
}

#[cfg(test)]
mod tests {
    use super::*;
    

    fn tmpfile(name: &str, contents: &[u8]) -> std::path::PathBuf {
        let dir = std::env::temp_dir().join("cloudmerge-core-tests");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join(name);
        let mut f = File::create(&path).unwrap();
        f.write_all(contents).unwrap();
        path
    }

    #[test]
    fn ascii_three_lines() {
        let p = tmpfile("three.xyz", b"0 0 0\n1 0 0\n0 1 0\n");
        let cloud: PointCloud = load_cloud(&p, CloudFormat::AsciiXyz).unwrap();
        assert_eq!(cloud.len(), 3);
        assert!(cloud.colors.is_none());
        assert_eq!(cloud.positions[1], Vec3::new(1.0, 0.0, 0.0));
    }

    #[test]
    fn ascii_nan_is_data_error_with_line() {
        let p = tmpfile("nan.xyz", b"0 0 nan\n");
        let err = load_cloud::<f64>(&p, CloudFormat::AsciiXyz).unwrap_err();
        match err {
            Error::Data { line, .. } => assert_eq!(line, 1),
            other => panic!("expected data error, got {other:?}"),
        }
    }

    #[test]
    fn ply_color_normalization() {
        let body = "ply\nformat ascii 1.0\nelement vertex 2\nproperty float x\nproperty float y\nproperty float z\nproperty uchar red\nproperty uchar green\nproperty uchar blue\nend_header\n0 0 0 255 0 128\n1 1 1 0 255 0\n";
        let p = tmpfile("colors.ply", body.as_bytes());
        let cloud: PointCloud = load_cloud(&p, CloudFormat::Ply).unwrap();
        let c = cloud.colors.as_ref().unwrap();
        assert!((c[0].x - 1.0).abs() < 1e-12);
        assert!((c[0].y).abs() < 1e-12);
    }

    #[test]
    fn ply_binary_roundtrip_values() {
        let mut body: Vec<u8> = b"ply\nformat binary_little_endian 1.0\nelement vertex 2\nproperty float x\nproperty float y\nproperty float z\nproperty int label\nend_header\n".to_vec();
        for (p, l) in [([0.5f32, 1.0, -2.0], 3i32), ([0.0, 0.0, 0.0], -1)] {
            for v in p {
                body.extend_from_slice(&v.to_le_bytes());
            }
            body.extend_from_slice(&l.to_le_bytes());
        }
        let p = tmpfile("bin.ply", &body);
        let cloud: PointCloud = load_cloud(&p, CloudFormat::Ply).unwrap();
        assert_eq!(cloud.len(), 2);
        assert_eq!(cloud.gt_labels.as_ref().unwrap(), &vec![3, -1]);
        assert!((cloud.positions[0].x - 0.5).abs() < 1e-7);
    }

    #[test]
    fn load_save_load_identity() {
        let p = tmpfile("rt.xyz", b"0 0 0 255 0 0 1\n1 2 3 0 128 255 -1\n");
        let a: PointCloud = load_cloud(&p, CloudFormat::AsciiXyz).unwrap();
        let p2 = std::env::temp_dir().join("cloudmerge-core-tests/rt2.xyz");
        save_cloud_ascii(&a, &p2).unwrap();
        let b: PointCloud = load_cloud(&p2, CloudFormat::AsciiXyz).unwrap();
        assert_eq!(a.len(), b.len());
        for i in 0..a.len() {
            assert!(a.positions[i].distance(b.positions[i]) < 1e-6);
            assert!(
                a.colors.as_ref().unwrap()[i].distance(b.colors.as_ref().unwrap()[i]) < 1e-6
            );
        }
        assert_eq!(a.gt_labels, b.gt_labels);
    }

    fn two_class_cloud(n: usize) -> PointCloud {
        let positions = (0..n)
            .map(|i| Vec3::new(i as f64, 0.0, 0.0))
            .collect();
        let gt = (0..n).map(|i| (i % 2) as i32).collect();
        PointCloud {
            positions,
            gt_labels: Some(gt),
            ..PointCloud::default()
        }
    }

    #[test]
    fn weak_labels_min_two_classes() {
        let cloud = two_class_cloud(1000);
        let w = sample_weak_labels(&cloud, 0.002, 7).unwrap();
        assert_eq!(w.entries.len(), 2);
        let classes: std::collections::HashSet<i32> =
            w.entries.iter().map(|(_, c)| *c).collect();
        assert_eq!(classes.len(), 2);
    }

    #[test]
    fn weak_labels_deterministic() {
        let cloud = two_class_cloud(500);
        let a = sample_weak_labels(&cloud, 0.01, 42).unwrap();
        let b = sample_weak_labels(&cloud, 0.01, 42).unwrap();
        assert_eq!(a.entries, b.entries);
    }

    #[test]
    fn weak_labels_counted_against_rule() {
        // N=10000, fraction=0.002, 3 classes -> 20 entries, >=1 per class
        let n = 10000;
        let positions = (0..n).map(|i| Vec3::new(i as f64, 0.0, 0.0)).collect();
        let gt: Vec<i32> = (0..n).map(|i| (i % 3) as i32).collect();
        let cloud = PointCloud {
            positions,
            gt_labels: Some(gt.clone()),
            ..PointCloud::default()
        };
        let w = sample_weak_labels(&cloud, 0.002, 11).unwrap();
        assert_eq!(w.entries.len(), 20);
        let mut per_class = [0usize; 3];
        let unique: std::collections::HashSet<usize> =
            w.entries.iter().map(|(i, _)| *i).collect();
        assert_eq!(unique.len(), w.entries.len());
        for (i, c) in &w.entries {
            assert_eq!(gt[*i], *c);
            per_class[*c as usize] += 1;
        }
        assert!(per_class.iter().all(|&c| c >= 1));
    }

    #[test]
    fn weak_labels_missing_channel() {
        let cloud = PointCloud::<f64>::from_positions(vec![Vec3::zero(); 5]);
        assert!(matches!(
            sample_weak_labels(&cloud, 0.5, 0),
            Err(Error::MissingChannel(_))
        ));
    }

    #[test]
    fn label_file_roundtrip() {
        let rows = vec![
            PointAssignment {
                region_id: 0,
                class_id: 1,
                confidence: 0.875,
            },
            PointAssignment {
                region_id: 3,
                class_id: -1,
                confidence: 0.0,
            },
        ];
        let path = std::env::temp_dir().join("cloudmerge-core-tests/labels.txt");
        std::fs::create_dir_all(path.parent().unwrap()).unwrap();
        save_labels(&rows, &path).unwrap();
        let back = load_labels(&path).unwrap();
        assert_eq!(rows, back);
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.starts_with("0 0 1 0.875\n"));
        assert!(text.contains("\n1 3 -1 0"));
    }

    #[test]
    fn sig6_formatting() {
        assert_eq!(format_sig6(0.0), "0");
        assert_eq!(format_sig6(1.0), "1");
        assert_eq!(format_sig6(0.5), "0.5");
        assert_eq!(format_sig6(123456.6), "123457");
        assert_eq!(format_sig6(0.1234567), "0.123457");
    }
}
