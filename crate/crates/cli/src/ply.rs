//! Minimal PLY point clouds: `double x y z` vertices with optional
//! `uchar red green blue`, in ASCII or binary little-endian encoding.

use std::io::{BufRead, Write};

use nalgebra::Vector3;

use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PlyFormat {
    Ascii,
    BinaryLittleEndian,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct PointCloud {
    pub points: Vec<Vector3<f64>>,
    /// Either empty or one color per point.
    pub colors: Vec<[u8; 3]>,
}

impl PointCloud {
    pub fn push(&mut self, p: Vector3<f64>, color: [u8; 3]) {
        self.points.push(p);
        self.colors.push(color);
    }
}

fn bad(msg: impl Into<String>) -> CliError {
    CliError::Validation(format!("ply: {}", msg.into()))
}

pub fn write_ply<W: Write>(mut out: W, cloud: &PointCloud, format: PlyFormat) -> std::io::Result<()> {
    let colored = !cloud.colors.is_empty();
    assert!(!colored || cloud.colors.len() == cloud.points.len(), "one color per point");
    let fmt = match format {
        PlyFormat::Ascii => "ascii",
        PlyFormat::BinaryLittleEndian => "binary_little_endian",
    };
    writeln!(out, "ply\nformat {fmt} 1.0\nelement vertex {}", cloud.points.len())?;
    writeln!(out, "property double x\nproperty double y\nproperty double z")?;
    if colored {
        writeln!(out, "property uchar red\nproperty uchar green\nproperty uchar blue")?;
    }
    writeln!(out, "end_header")?;
    for (i, p) in cloud.points.iter().enumerate() {
        match format {
            PlyFormat::Ascii => {
                write!(out, "{} {} {}", p.x, p.y, p.z)?;
                if colored {
                    let [r, g, b] = cloud.colors[i];
                    write!(out, " {r} {g} {b}")?;
                }
                writeln!(out)?;
            }
            PlyFormat::BinaryLittleEndian => {
                for c in p.iter() {
                    out.write_all(&c.to_le_bytes())?;
                }
                if colored {
                    out.write_all(&cloud.colors[i])?;
                }
            }
        }
    }
    out.flush()
}

/// Reads files produced by [`write_ply`].
pub fn read_ply<R: BufRead>(mut input: R) -> CliResult<PointCloud> {
    let mut line = String::new();
    let mut next_line = |input: &mut R| -> CliResult<String> {
        line.clear();
        let n = input.read_line(&mut line).map_err(|e| bad(e.to_string()))?;
        if n == 0 {
            return Err(bad("unexpected end of header"));
        }
        Ok(line.trim_end().to_string())
    };
    if next_line(&mut input)? != "ply" {
        return Err(bad("missing magic"));
    }
    let mut format = None;
    let mut count = None;
    let mut props = Vec::new();
    loop {
        let l = next_line(&mut input)?;
        let words: Vec<&str> = l.split_whitespace().collect();
        match words.as_slice() {
            ["format", "ascii", "1.0"] => format = Some(PlyFormat::Ascii),
            ["format", "binary_little_endian", "1.0"] => format = Some(PlyFormat::BinaryLittleEndian),
            ["element", "vertex", n] => count = Some(n.parse::<usize>().map_err(|_| bad("bad vertex count"))?),
            ["property", ty, name] => props.push((ty.to_string(), name.to_string())),
            ["comment", ..] => {}
            ["end_header"] => break,
            _ => return Err(bad(format!("unsupported header line {l:?}"))),
        }
    }
    let (Some(format), Some(count)) = (format, count) else {
        return Err(bad("header lacks format or vertex count"));
    };
    let xyz = ["x", "y", "z"].map(|n| ("double".to_string(), n.to_string()));
    let rgb = ["red", "green", "blue"].map(|n| ("uchar".to_string(), n.to_string()));
    let colored = if props == xyz {
        false
    } else if props.len() == 6 && props[..3] == xyz && props[3..] == rgb {
        true
    } else {
        return Err(bad("expected double x y z with optional uchar red green blue"));
    };

    let mut cloud = PointCloud::default();
    match format {
        PlyFormat::Ascii => {
            let mut body = String::new();
            input.read_to_string(&mut body).map_err(|e| bad(e.to_string()))?;
            let mut rows = body.lines();
            for _ in 0..count {
                let row = rows.next().ok_or_else(|| bad("truncated body"))?;
                let f: Vec<&str> = row.split_whitespace().collect();
                if f.len() != if colored { 6 } else { 3 } {
                    return Err(bad("wrong field count"));
                }
                let c = |k: usize| f[k].parse::<f64>().map_err(|_| bad("bad coordinate"));
                cloud.points.push(Vector3::new(c(0)?, c(1)?, c(2)?));
                if colored {
                    let u = |k: usize| f[k].parse::<u8>().map_err(|_| bad("bad color"));
                    cloud.colors.push([u(3)?, u(4)?, u(5)?]);
                }
            }
        }
        PlyFormat::BinaryLittleEndian => {
            let stride = if colored { 27 } else { 24 };
            let mut buf = vec![0u8; stride];
            for _ in 0..count {
                input.read_exact(&mut buf).map_err(|_| bad("truncated body"))?;
                let c = |k: usize| f64::from_le_bytes(buf[8 * k..8 * k + 8].try_into().expect("8 bytes"));
                cloud.points.push(Vector3::new(c(0), c(1), c(2)));
                if colored {
                    cloud.colors.push([buf[24], buf[25], buf[26]]);
                }
            }
        }
    }
    Ok(cloud)
}
