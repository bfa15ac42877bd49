use std::fs;
use std::io::Write;
use std::path::Path;

use super::{pose_from_matrix, pose_to_matrix, PointCloud};
use crate::error::{Error, Result};

/// On-disk cloud encodings.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CloudFormat {
    PlyAscii,
    PlyBinaryLe,
    /// 8-byte little-endian count followed by `count` xyz float32 triples.
    RawF32,
}

impl CloudFormat {
    pub fn from_extension(path: &Path) -> Option<Self> {
        match path.extension()?.to_str()? {
            "ply" => Some(CloudFormat::PlyBinaryLe),
            "bin" | "raw" => Some(CloudFormat::RawF32),
            _ => None,
        }
    }
}

impl std::str::FromStr for CloudFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ply_ascii" => Ok(CloudFormat::PlyAscii),
            "ply_binary_le" => Ok(CloudFormat::PlyBinaryLe),
            "raw_f32" => Ok(CloudFormat::RawF32),
            other => Err(Error::invalid(format!("unknown cloud format {other:?}"))),
        }
    }
}

pub fn load_point_cloud(path: impl AsRef<Path>, format: CloudFormat) -> Result<PointCloud> {
    let bytes = fs::read(path.as_ref())?;
    let (points, pose) = match format {
        CloudFormat::RawF32 => (parse_raw(&bytes)?, None),
        CloudFormat::PlyAscii | CloudFormat::PlyBinaryLe => parse_ply(&bytes, format)?,
    };
    let frame_id = path
        .as_ref()
        .file_stem()
        .and_then(|s| s.to_str())
        .unwrap_or_default()
        .to_string();
    let mut pc = PointCloud::new(points)?.with_frame_id(frame_id);
    if let Some(m) = pose {
        pc = pc.with_pose(pose_from_matrix(&m)?);
    }
    Ok(pc)
}

/// Write a cloud. Extra per-vertex float properties are only supported by
/// the PLY encodings.
pub fn save_point_cloud(
    path: impl AsRef<Path>,
    pc: &PointCloud,
    format: CloudFormat,
    extra: &[(&str, &[f32])],
) -> Result<()> {
    for (name, values) in extra {
        if values.len() != pc.len() {
            return Err(Error::invalid(format!(
                "property {name} has {} values for {} points",
                values.len(),
                pc.len()
            )));
        }
    }
    let mut out = Vec::with_capacity(pc.len() * 12 + 256);
    match format {
        CloudFormat::RawF32 => {
            if !extra.is_empty() {
                return Err(Error::invalid("raw_f32 cannot carry extra properties"));
            }
            out.extend_from_slice(&(pc.len() as u64).to_le_bytes());
            for p in pc.points() {
                for v in p {
                    out.extend_from_slice(&(*v as f32).to_le_bytes());
                }
            }
        }
        CloudFormat::PlyAscii | CloudFormat::PlyBinaryLe => {
            let fmt = if format == CloudFormat::PlyAscii {
                "ascii"
            } else {
                "binary_little_endian"
            };
            write!(out, "ply\nformat {fmt} 1.0\n")?;
            if let Some(pose) = &pc.sensor_pose {
                let vals: Vec<String> = pose_to_matrix(pose).iter().flatten().map(|v| format!("{v:?}")).collect();
                writeln!(out, "comment sensor_pose {}", vals.join(" "))?;
            }
            write!(out, "element vertex {}\n", pc.len())?;
            out.extend_from_slice(b"property float x\nproperty float y\nproperty float z\n");
            for (name, _) in extra {
                writeln!(out, "property float {name}")?;
            }
            out.extend_from_slice(b"end_header\n");
            for (i, p) in pc.points().iter().enumerate() {
                let row = p
                    .iter()
                    .map(|v| *v as f32)
                    .chain(extra.iter().map(|(_, vals)| vals[i]));
                if format == CloudFormat::PlyAscii {
                    let fields: Vec<String> = row.map(|v| format!("{v:?}")).collect();
                    writeln!(out, "{}", fields.join(" "))?;
                } else {
                    for v in row {
                        out.extend_from_slice(&v.to_le_bytes());
                    }
                }
            }
        }
    }
    fs::write(path, out)?;
    Ok(())
}

fn parse_raw(bytes: &[u8]) -> Result<Vec<[f64; 3]>> {
    if bytes.len() < 8 {
        return Err(Error::parse(bytes.len() as u64, "missing 8-byte point count"));
    }
    let count = u64::from_le_bytes(bytes[..8].try_into().unwrap()) as usize;
    if count == 0 {
        return Err(Error::parse(0, "zero points"));
    }
    let need = count
        .checked_mul(12)
        .and_then(|n| n.checked_add(8))
        .ok_or_else(|| Error::parse(0, "point count overflows"))?;
    if bytes.len() < need {
        return Err(Error::parse(
            bytes.len() as u64,
            format!("truncated payload: {count} points need {need} bytes"),
        ));
    }
    Ok(bytes[8..need]
        .chunks_exact(12)
        .map(|c| {
            let f = |o: usize| f32::from_le_bytes(c[o..o + 4].try_into().unwrap()) as f64;
            [f(0), f(4), f(8)]
        })
        .collect())
}

#[derive(Clone, Copy, Debug)]
enum Scalar {
    I8,
    U8,
    I16,
    U16,
    I32,
    U32,
    F32,
    F64,
}

impl Scalar {
    fn parse(name: &str) -> Option<Self> {
        Some(match name {
            "char" | "int8" => Scalar::I8,
            "uchar" | "uint8" => Scalar::U8,
            "short" | "int16" => Scalar::I16,
            "ushort" | "uint16" => Scalar::U16,
            "int" | "int32" => Scalar::I32,
            "uint" | "uint32" => Scalar::U32,
            "float" | "float32" => Scalar::F32,
            "double" | "float64" => Scalar::F64,
            _ => return None,
        })
    }

    fn size(self) -> usize {
        match self {
            Scalar::I8 | Scalar::U8 => 1,
            Scalar::I16 | Scalar::U16 => 2,
            Scalar::I32 | Scalar::U32 | Scalar::F32 => 4,
            Scalar::F64 => 8,
        }
    }

    fn read_le(self, b: &[u8]) -> f64 {
        match self {
            Scalar::I8 => b[0] as i8 as f64,
            Scalar::U8 => b[0] as f64,
            Scalar::I16 => i16::from_le_bytes([b[0], b[1]]) as f64,
            Scalar::U16 => u16::from_le_bytes([b[0], b[1]]) as f64,
            Scalar::I32 => i32::from_le_bytes(b[..4].try_into().unwrap()) as f64,
            Scalar::U32 => u32::from_le_bytes(b[..4].try_into().unwrap()) as f64,
            Scalar::F32 => f32::from_le_bytes(b[..4].try_into().unwrap()) as f64,
            Scalar::F64 => f64::from_le_bytes(b[..8].try_into().unwrap()),
        }
    }
}

struct PlyHeader {
    vertex_count: usize,
    props: Vec<(String, Scalar)>,
    body_offset: usize,
    ascii: bool,
    pose: Option<[[f64; 4]; 4]>,
}

fn parse_ply_header(bytes: &[u8]) -> Result<PlyHeader> {
    let mut offset = 0usize;
    let mut lines = Vec::new();
    loop {
        let rest = &bytes[offset..];
        let end = rest
            .iter()
            .position(|&b| b == b'\n')
            .ok_or_else(|| Error::parse(bytes.len() as u64, "header not terminated by end_header"))?;
        let line = std::str::from_utf8(&rest[..end])
            .map_err(|_| Error::parse(offset as u64, "header is not UTF-8"))?
            .trim_end_matches('\r')
            .trim()
            .to_string();
        lines.push((offset, line.clone()));
        offset += end + 1;
        if line == "end_header" {
            break;
        }
    }
    if lines.first().map(|(_, l)| l.as_str()) != Some("ply") {
        return Err(Error::parse(0, "missing ply magic"));
    }
    let mut ascii = None;
    let mut vertex_count = None;
    let mut pose = None;
    let mut props = Vec::new();
    let mut in_vertex = false;
    for (at, line) in &lines[1..] {
        let toks: Vec<&str> = line.split_whitespace().collect();
        match toks.as_slice() {
            ["format", "ascii", _] => ascii = Some(true),
            ["format", "binary_little_endian", _] => ascii = Some(false),
            ["format", other, _] => {
                return Err(Error::parse(*at as u64, format!("unsupported format {other}")))
            }
            ["element", name, count] => {
                in_vertex = *name == "vertex";
                if in_vertex {
                    vertex_count = Some(count.parse::<usize>().map_err(|_| {
                        Error::parse(*at as u64, format!("bad vertex count {count:?}"))
                    })?);
                } else if vertex_count.is_none() {
                    return Err(Error::parse(*at as u64, "vertex element must come first"));
                }
            }
            ["property", "list", ..] if in_vertex => {
                return Err(Error::parse(*at as u64, "list properties on vertices unsupported"))
            }
            ["property", ty, name] if in_vertex => {
                let scalar = Scalar::parse(ty)
                    .ok_or_else(|| Error::parse(*at as u64, format!("unknown type {ty}")))?;
                props.push((name.to_string(), scalar));
            }
            ["comment", "sensor_pose", vals @ ..] => {
                let v: Vec<f64> = vals
                    .iter()
                    .map(|t| t.parse::<f64>())
                    .collect::<std::result::Result<_, _>>()
                    .map_err(|_| Error::parse(*at as u64, "bad sensor_pose value"))?;
                if v.len() != 16 {
                    return Err(Error::parse(*at as u64, "sensor_pose needs 16 values"));
                }
                pose = Some(std::array::from_fn(|r| std::array::from_fn(|c| v[4 * r + c])));
            }
            ["comment", ..] | ["obj_info", ..] | ["property", ..] | ["end_header"] | [] => {}
            _ => return Err(Error::parse(*at as u64, format!("unexpected header line {line:?}"))),
        }
    }
    let ascii = ascii.ok_or_else(|| Error::parse(0, "missing format line"))?;
    let vertex_count = vertex_count.ok_or_else(|| Error::parse(0, "missing vertex element"))?;
    if vertex_count == 0 {
        return Err(Error::parse(0, "zero points"));
    }
    for axis in ["x", "y", "z"] {
        if !props.iter().any(|(n, _)| n == axis) {
            return Err(Error::parse(0, format!("missing vertex property {axis}")));
        }
    }
    Ok(PlyHeader {
        vertex_count,
        props,
        body_offset: offset,
        ascii,
        pose,
    })
}

fn parse_ply(bytes: &[u8], format: CloudFormat) -> Result<(Vec<[f64; 3]>, Option<[[f64; 4]; 4]>)> {
    let header = parse_ply_header(bytes)?;
    let want_ascii = format == CloudFormat::PlyAscii;
    if header.ascii != want_ascii {
        return Err(Error::parse(0, "PLY encoding does not match the requested format"));
    }
    let axis = |name: &str| header.props.iter().position(|(n, _)| n == name).unwrap();
    let (ix, iy, iz) = (axis("x"), axis("y"), axis("z"));
    let mut points = Vec::with_capacity(header.vertex_count);
    if header.ascii {
        let mut offset = header.body_offset;
        for v in 0..header.vertex_count {
            let rest = &bytes[offset.min(bytes.len())..];
            if rest.is_empty() {
                return Err(Error::parse(
                    bytes.len() as u64,
                    format!("truncated payload: vertex {v} of {} missing", header.vertex_count),
                ));
            }
            let end = rest.iter().position(|&b| b == b'\n').unwrap_or(rest.len());
            let line = std::str::from_utf8(&rest[..end])
                .map_err(|_| Error::parse(offset as u64, "vertex line is not UTF-8"))?;
            let vals: Vec<f64> = line
                .split_whitespace()
                .map(|t| t.parse::<f64>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|_| Error::parse(offset as u64, format!("bad vertex line {line:?}")))?;
            if vals.len() < header.props.len() {
                return Err(Error::parse(
                    offset as u64,
                    format!("vertex {v} has {} of {} fields", vals.len(), header.props.len()),
                ));
            }
            points.push([vals[ix], vals[iy], vals[iz]]);
            offset += end + 1;
        }
    } else {
        let stride: usize = header.props.iter().map(|(_, s)| s.size()).sum();
        let mut offsets = Vec::with_capacity(header.props.len());
        let mut acc = 0;
        for (_, s) in &header.props {
            offsets.push(acc);
            acc += s.size();
        }
        let need = header.body_offset + stride * header.vertex_count;
        if bytes.len() < need {
            return Err(Error::parse(
                bytes.len() as u64,
                format!(
                    "truncated payload: {} vertices need {need} bytes",
                    header.vertex_count
                ),
            ));
        }
        for v in 0..header.vertex_count {
            let row = &bytes[header.body_offset + v * stride..];
            let read = |i: usize| header.props[i].1.read_le(&row[offsets[i]..]);
            points.push([read(ix), read(iy), read(iz)]);
        }
    }
    Ok((points, header.pose))
}
