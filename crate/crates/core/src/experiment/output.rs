//! Density images, raw dumps, VTK files and history CSVs.

use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::material::DensityField;
use crate::optimize::HistoryRecord;

pub const HISTORY_HEADER: &str = "iter,objective,lambda,nominal_compliance,volume,p,step,wall_time_s";

/// Gray level `round(255 (1 − h))` with ties rounded up; material is dark.
pub fn gray_level(h: f64) -> u8 {
    let v = 255.0 * (1.0 - h.clamp(0.0, 1.0));
    (v + 0.5).floor().min(255.0) as u8
}

/// Rows from the top of the domain down, each left to right.
fn top_down_rows(h: &DensityField) -> impl Iterator<Item = &[f64]> {
    h.values().chunks(h.nx()).rev()
}

pub fn write_pgm<W: Write>(h: &DensityField, out: &mut W) -> std::io::Result<()> {
    writeln!(out, "P2")?;
    writeln!(out, "{} {}", h.nx(), h.ny())?;
    writeln!(out, "255")?;
    for row in top_down_rows(h) {
        let line: Vec<String> = row.iter().map(|v| gray_level(*v).to_string()).collect();
        writeln!(out, "{}", line.join(" "))?;
    }
    Ok(())
}

/// `u32` width and height (little endian), then `f64` values from the top row down.
pub fn write_raw<W: Write>(h: &DensityField, out: &mut W) -> std::io::Result<()> {
    out.write_all(&(h.nx() as u32).to_le_bytes())?;
    out.write_all(&(h.ny() as u32).to_le_bytes())?;
    for row in top_down_rows(h) {
        for v in row {
            out.write_all(&v.to_le_bytes())?;
        }
    }
    Ok(())
}

/// Reads a raw dump back as `(nx, ny, values)` in bottom-up element order.
pub fn read_raw<R: Read>(input: &mut R) -> Result<(usize, usize, Vec<f64>)> {
    let mut bytes = Vec::new();
    input.read_to_end(&mut bytes)?;
    if bytes.len() < 8 {
        return Err(Error::Numerical("raw density: truncated header".into()));
    }
    let nx = u32::from_le_bytes(bytes[0..4].try_into().expect("4 bytes")) as usize;
    let ny = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes")) as usize;
    let body = &bytes[8..];
    if body.len() != nx * ny * 8 {
        return Err(Error::Numerical(format!(
            "raw density: expected {} values for {nx}x{ny}, found {} bytes",
            nx * ny,
            body.len()
        )));
    }
    let top_down: Vec<f64> = body
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
        .collect();
    let mut values = Vec::with_capacity(nx * ny);
    if nx > 0 {
        for row in top_down.chunks(nx).rev() {
            values.extend_from_slice(row);
        }
    }
    Ok((nx, ny, values))
}

/// Legacy ASCII structured points with one cell scalar `density`.
pub fn write_vtk<W: Write>(h: &DensityField, hx: f64, hy: f64, out: &mut W) -> std::io::Result<()> {
    writeln!(out, "# vtk DataFile Version 3.0")?;
    writeln!(out, "density")?;
    writeln!(out, "ASCII")?;
    writeln!(out, "DATASET STRUCTURED_POINTS")?;
    writeln!(out, "DIMENSIONS {} {} 1", h.nx() + 1, h.ny() + 1)?;
    writeln!(out, "ORIGIN 0 0 0")?;
    writeln!(out, "SPACING {hx:e} {hy:e} 1")?;
    writeln!(out, "CELL_DATA {}", h.values().len())?;
    writeln!(out, "SCALARS density double 1")?;
    writeln!(out, "LOOKUP_TABLE default")?;
    for v in h.values() {
        writeln!(out, "{v:.16e}")?;
    }
    Ok(())
}

/// Seventeen significant digits.
pub fn format_float(v: f64) -> String {
    format!("{v:.16e}")
}

pub fn write_history<W: Write>(records: &[HistoryRecord], out: &mut W) -> std::io::Result<()> {
    writeln!(out, "{HISTORY_HEADER}")?;
    for r in records {
        writeln!(
            out,
            "{},{},{},{},{},{},{},{}",
            r.iteration,
            format_float(r.objective),
            format_float(r.lambda),
            format_float(r.nominal_compliance),
            format_float(r.volume),
            format_float(r.p),
            format_float(r.step),
            format_float(r.wall_time_s)
        )?;
    }
    Ok(())
}

fn with_file(path: &Path, f: impl FnOnce(&mut BufWriter<File>) -> std::io::Result<()>) -> Result<()> {
    let wrap = |e: std::io::Error| {
        Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display())))
    };
    let mut out = BufWriter::new(File::create(path).map_err(wrap)?);
    f(&mut out).map_err(wrap)?;
    out.flush().map_err(wrap)
}

pub fn emit_pgm(h: &DensityField, path: &Path) -> Result<()> {
    with_file(path, |w| write_pgm(h, w))
}

pub fn emit_raw(h: &DensityField, path: &Path) -> Result<()> {
    with_file(path, |w| write_raw(h, w))
}

pub fn emit_vtk(h: &DensityField, hx: f64, hy: f64, path: &Path) -> Result<()> {
    with_file(path, |w| write_vtk(h, hx, hy, w))
}

pub fn emit_history(records: &[HistoryRecord], path: &Path) -> Result<()> {
    with_file(path, |w| write_history(records, w))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn field(values: Vec<f64>) -> DensityField {
        DensityField::from_grid(3, 2, 1.0, values).unwrap()
    }

    #[test]
    fn gray_levels() {
        assert_eq!(gray_level(1.0), 0);
        assert_eq!(gray_level(0.0), 255);
        assert_eq!(gray_level(0.5), 128);
    }

    #[test]
    fn pgm_layout() {
        let mut out = Vec::new();
        write_pgm(&field(vec![1.0, 1.0, 1.0, 0.0, 0.5, 0.0]), &mut out).unwrap();
        assert_eq!(String::from_utf8(out).unwrap(), "P2\n3 2\n255\n255 128 255\n0 0 0\n");
    }

    #[test]
    fn raw_round_trip() {
        let values = vec![0.1, 0.2, 1.0 / 3.0, 0.0, 1.0, f64::MIN_POSITIVE];
        let mut out = Vec::new();
        write_raw(&field(values.clone()), &mut out).unwrap();
        assert_eq!(out.len(), 8 + 6 * 8);
        let (nx, ny, back) = read_raw(&mut out.as_slice()).unwrap();
        assert_eq!((nx, ny), (3, 2));
        assert_eq!(back.iter().map(|v| v.to_bits()).collect::<Vec<_>>(), values.iter().map(|v| v.to_bits()).collect::<Vec<_>>());
    }

    #[test]
    fn empty_history_is_header_only() {
        let mut out = Vec::new();
        write_history(&[], &mut out).unwrap();
        assert_eq!(String::from_utf8(out).unwrap(), format!("{HISTORY_HEADER}\n"));
    }

    #[test]
    fn history_values_round_trip() {
        let r = HistoryRecord {
            iteration: 3,
            objective: 1.0 / 3.0,
            lambda: 2e-7,
            nominal_compliance: 13.99,
            volume: 0.2,
            p: 3.0,
            step: 0.125,
            wall_time_s: 0.0,
        };
        let mut out = Vec::new();
        write_history(&[r.clone(), r], &mut out).unwrap();
        let text = String::from_utf8(out).unwrap();
        let rows: Vec<&str> = text.lines().collect();
        assert!(rows.iter().all(|l| l.split(',').count() == 8));
        let objective: f64 = rows[1].split(',').nth(1).unwrap().parse().unwrap();
        assert_eq!(objective, 1.0 / 3.0);
        assert!(!text.contains('\r'));
    }
}
