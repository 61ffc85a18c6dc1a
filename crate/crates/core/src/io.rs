//! On-disk artifacts: field CSVs, PPM heatmaps, JSON-lines metrics and
//! model checkpoints.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{PixelError, Result};
use crate::grid::{Domain, GridShape, GridStack, Kernel};
use crate::net::{Mlp, Model, PinnModel, PixelModel};
use crate::refsol::{Provenance, ReferenceField};

pub const FIELD_HEADER: &str = "x,t,u_pred,u_ref,abs_err";
pub const CHECKPOINT_MAGIC: &[u8; 8] = b"PXMODEL1";

/// One row of a field export.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FieldRow {
    pub x: f64,
    pub t: f64,
    pub u_pred: f64,
    pub u_ref: f64,
    pub abs_err: f64,
}

/// Write predictions next to a reference, one row per grid point in the
/// reference's storage order. Numbers use the shortest representation that
/// parses back to the same double.
pub fn export_field(path: &Path, reference: &ReferenceField, pred: &[f64]) -> Result<()> {
    if pred.len() != reference.len() {
        return Err(PixelError::SizeMismatch { expected: reference.len(), got: pred.len() });
    }
    if let Some(k) = pred.iter().position(|v| !v.is_finite()) {
        return Err(PixelError::Numerical(format!("prediction {k} is not finite")));
    }
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "{FIELD_HEADER}")?;
    for (((x, t), &r), &p) in reference.points().zip(&reference.u).zip(pred) {
        writeln!(w, "{x:e},{t:e},{p:e},{r:e},{:e}", (p - r).abs())?;
    }
    w.flush()?;
    Ok(())
}

pub fn import_field(path: &Path) -> Result<Vec<FieldRow>> {
    let reader = BufReader::new(File::open(path)?);
    let mut lines = reader.lines();
    let header = lines.next().transpose()?.unwrap_or_default();
    if header.trim() != FIELD_HEADER {
        return Err(PixelError::Format(format!("expected header '{FIELD_HEADER}', found '{header}'")));
    }
    let mut rows = Vec::new();
    for (k, line) in lines.enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let vals: Vec<f64> = line
            .split(',')
            .map(|s| s.trim().parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| PixelError::Format(format!("line {}: {e}", k + 2)))?;
        if vals.len() != 5 {
            return Err(PixelError::Format(format!("line {}: expected 5 columns, found {}", k + 2, vals.len())));
        }
        rows.push(FieldRow { x: vals[0], t: vals[1], u_pred: vals[2], u_ref: vals[3], abs_err: vals[4] });
    }
    Ok(rows)
}

/// Rebuild a reference field from the `x`, `t` and `u_ref` columns of a
/// field export. Rows must cover a tensor grid in `x`-major order.
pub fn import_reference(path: &Path) -> Result<ReferenceField> {
    let rows = import_field(path)?;
    let Some(first) = rows.first() else {
        return Err(PixelError::Format("field file has no rows".into()));
    };
    let nt = rows.iter().take_while(|r| r.x == first.x).count();
    if nt == 0 || rows.len() % nt != 0 {
        return Err(PixelError::Format("rows do not form a tensor grid".into()));
    }
    let ts: Vec<f64> = rows[..nt].iter().map(|r| r.t).collect();
    let xs: Vec<f64> = rows.iter().step_by(nt).map(|r| r.x).collect();
    for (k, r) in rows.iter().enumerate() {
        if r.x != xs[k / nt] || r.t != ts[k % nt] {
            return Err(PixelError::Format(format!("row {} breaks the x-major grid order", k + 2)));
        }
    }
    let u = rows.iter().map(|r| r.u_ref).collect();
    ReferenceField::new(xs, ts, u, Provenance::Oracle, BTreeMap::new())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Palette {
    Gray,
    /// Blue through white to red.
    Diverging,
}

impl Palette {
    fn color(self, s: f64) -> [u8; 3] {
        let s = s.clamp(0.0, 1.0);
        let q = |v: f64| (v * 255.0).round() as u8;
        match self {
            Palette::Gray => [q(s); 3],
            Palette::Diverging => {
                if s < 0.5 {
                    let a = s / 0.5;
                    [q(a), q(a), 255]
                } else {
                    let a = (1.0 - s) / 0.5;
                    [255, q(a), q(a)]
                }
            }
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Palette::Gray => "gray",
            Palette::Diverging => "diverging",
        }
    }
}

/// Path of the color-scale sidecar written next to a heatmap.
pub fn sidecar_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".range");
    PathBuf::from(s)
}

/// Binary PPM with one pixel per grid point: `x` runs left to right and `t`
/// bottom to top. Values map linearly from `[min, max]` onto the palette.
pub fn render_heatmap(values: &[f64], nx: usize, nt: usize, path: &Path, palette: Palette) -> Result<()> {
    if nx == 0 || nt == 0 {
        return Err(PixelError::Domain("heatmap needs a non-empty field".into()));
    }
    if values.len() != nx * nt {
        return Err(PixelError::SizeMismatch { expected: nx * nt, got: values.len() });
    }
    let lo = values.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !lo.is_finite() || !hi.is_finite() {
        return Err(PixelError::Numerical("heatmap values must be finite".into()));
    }
    let span = hi - lo;
    let mut w = BufWriter::new(File::create(path)?);
    write!(w, "P6\n{nx} {nt}\n255\n")?;
    for row in 0..nt {
        let j = nt - 1 - row;
        for i in 0..nx {
            let v = values[i * nt + j];
            let s = if span > 0.0 { (v - lo) / span } else { 0.5 };
            w.write_all(&palette.color(s))?;
        }
    }
    w.flush()?;
    std::fs::write(sidecar_path(path), format!("min {lo:e}\nmax {hi:e}\npalette {}\n", palette.name()))?;
    Ok(())
}

/// Decoded PPM image: width, height and RGB triples in row order.
pub fn read_ppm(path: &Path) -> Result<(usize, usize, Vec<[u8; 3]>)> {
    let mut bytes = Vec::new();
    File::open(path)?.read_to_end(&mut bytes)?;
    let mut fields = Vec::new();
    let mut pos = 0;
    while fields.len() < 4 {
        while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(PixelError::Format("truncated PPM header".into()));
        }
        fields.push(String::from_utf8_lossy(&bytes[start..pos]).into_owned());
    }
    pos += 1;
    if fields[0] != "P6" || fields[3] != "255" {
        return Err(PixelError::Format("expected a P6 image with maxval 255".into()));
    }
    let parse = |s: &str| s.parse::<usize>().map_err(|e| PixelError::Format(format!("bad PPM size: {e}")));
    let (w, h) = (parse(&fields[1])?, parse(&fields[2])?);
    let body = bytes.get(pos..).unwrap_or_default();
    if body.len() != 3 * w * h {
        return Err(PixelError::Format(format!("PPM body has {} bytes, expected {}", body.len(), 3 * w * h)));
    }
    Ok((w, h, body.chunks_exact(3).map(|c| [c[0], c[1], c[2]]).collect()))
}

/// One JSON object per line.
pub fn write_jsonl<T: Serialize>(records: &[T], path: &Path) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    for r in records {
        serde_json::to_writer(&mut w, r).map_err(|e| PixelError::Format(e.to_string()))?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_metrics(history: &[crate::train::MetricRecord], path: &Path) -> Result<()> {
    write_jsonl(history, path)
}

pub fn read_jsonl<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>> {
    let reader = BufReader::new(File::open(path)?);
    let mut out = Vec::new();
    for (k, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| PixelError::Format(format!("line {}: {e}", k + 1)))?);
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
enum ModelHeader {
    Pixel { shape: GridShape, domain: Domain, kernel: Kernel, head: Mlp, coeffs: Vec<String> },
    Pinn { domain: Domain, net: Mlp, coeffs: Vec<String> },
}

/// Checkpoint layout: the 8-byte magic, a little-endian `u32` header length,
/// the JSON model header, a little-endian `u64` parameter count and the
/// parameters as little-endian doubles.
pub fn save_checkpoint(model: &Model, path: &Path) -> Result<()> {
    let header = match model {
        Model::Pixel(m) => ModelHeader::Pixel {
            shape: m.stack.shape,
            domain: m.stack.domain,
            kernel: m.stack.kernel,
            head: m.head.clone(),
            coeffs: m.coeffs.clone(),
        },
        Model::Pinn(m) => ModelHeader::Pinn { domain: m.domain, net: m.net.clone(), coeffs: m.coeffs.clone() },
    };
    let json = serde_json::to_vec(&header).map_err(|e| PixelError::Format(e.to_string()))?;
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(CHECKPOINT_MAGIC)?;
    w.write_all(&(json.len() as u32).to_le_bytes())?;
    w.write_all(&json)?;
    let params = model.params();
    w.write_all(&(params.len() as u64).to_le_bytes())?;
    for p in params {
        w.write_all(&p.to_le_bytes())?;
    }
    w.flush()?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<Model> {
    let mut bytes = Vec::new();
    File::open(path)?.read_to_end(&mut bytes)?;
    let short = || PixelError::Format("checkpoint is truncated".into());
    if bytes.len() < 12 || &bytes[..8] != CHECKPOINT_MAGIC {
        return Err(PixelError::Format("not a model checkpoint".into()));
    }
    let hlen = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    let json = bytes.get(12..12 + hlen).ok_or_else(short)?;
    let header: ModelHeader = serde_json::from_slice(json).map_err(|e| PixelError::Format(e.to_string()))?;
    let mut pos = 12 + hlen;
    let n = u64::from_le_bytes(bytes.get(pos..pos + 8).ok_or_else(short)?.try_into().unwrap()) as usize;
    pos += 8;
    let body = bytes.get(pos..).ok_or_else(short)?;
    if body.len() != 8 * n {
        return Err(PixelError::Format(format!("expected {n} parameters, found {} bytes", body.len())));
    }
    let params: Vec<f64> = body.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
    Ok(match header {
        ModelHeader::Pixel { shape, domain, kernel, head, coeffs } => {
            let stack = GridStack::new(GridShape::new(shape.grids, shape.channels, shape.h, shape.w)?, domain, kernel);
            Model::Pixel(PixelModel::from_parts(stack, head, coeffs, params)?)
        }
        ModelHeader::Pinn { domain, net, coeffs } => Model::Pinn(PinnModel::from_parts(domain, net, coeffs, params)?),
    })
}
