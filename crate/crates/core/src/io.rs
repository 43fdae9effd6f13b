//! Versioned CSV tables, grid exports and nodal dumps.
//!
//! Every CSV begins with `#schema=<n>`; optional further `#key=value` lines
//! carry metadata; then a header row and the records.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::fields::{CellTensorGrid, GridSource};
use crate::solver::ScalarField;
use crate::tensor::SymTensor;

pub const SCHEMA_VERSION: u32 = 1;
pub const NODAL_MAGIC: &[u8; 8] = b"HLNODE01";
pub const GRID_MAGIC: &[u8; 8] = b"HLGRID01";

#[derive(Debug, thiserror::Error)]
pub enum IoError {
    #[error("{path}: {source}")]
    File { path: String, source: std::io::Error },
    #[error("{path}: schema version {found} is not supported (expected {expected})")]
    Schema { path: String, found: String, expected: u32 },
    #[error("{path}: {message}")]
    Format { path: String, message: String },
}

pub type IoResult<T> = std::result::Result<T, IoError>;

fn file_err(path: &Path) -> impl Fn(std::io::Error) -> IoError + '_ {
    move |source| IoError::File { path: path.display().to_string(), source }
}

fn format_err(path: &Path, message: impl ToString) -> IoError {
    IoError::Format { path: path.display().to_string(), message: message.to_string() }
}

/// Writes `rows` under a `#schema=1` line and any `meta` comment lines.
pub fn write_csv<T: Serialize>(path: &Path, meta: &[(&str, String)], rows: &[T]) -> IoResult<()> {
    let file = File::create(path).map_err(file_err(path))?;
    let mut out = BufWriter::new(file);
    writeln!(out, "#schema={SCHEMA_VERSION}").map_err(file_err(path))?;
    for (k, v) in meta {
        writeln!(out, "#{k}={v}").map_err(file_err(path))?;
    }
    let mut w = csv::Writer::from_writer(out);
    if rows.is_empty() {
        w.flush().map_err(file_err(path))?;
        return Ok(());
    }
    for r in rows {
        w.serialize(r).map_err(|e| format_err(path, e))?;
    }
    w.flush().map_err(file_err(path))?;
    Ok(())
}

/// Metadata lines and records of a versioned CSV.
#[derive(Debug, Clone, PartialEq)]
pub struct CsvTable<T> {
    pub meta: Vec<(String, String)>,
    pub rows: Vec<T>,
}

impl<T> CsvTable<T> {
    pub fn meta_value(&self, key: &str) -> Option<&str> {
        self.meta.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }
}

/// Reads a versioned CSV, rejecting schema versions other than the current one.
pub fn read_csv<T: DeserializeOwned>(path: &Path) -> IoResult<CsvTable<T>> {
    let file = File::open(path).map_err(file_err(path))?;
    let mut reader = BufReader::new(file);
    let mut meta = Vec::new();
    let mut line = String::new();
    let mut body = String::new();
    let mut saw_schema = false;
    loop {
        line.clear();
        if reader.read_line(&mut line).map_err(file_err(path))? == 0 {
            break;
        }
        let Some(comment) = line.strip_prefix('#') else {
            body.push_str(&line);
            break;
        };
        let (k, v) = comment.trim_end().split_once('=').ok_or_else(|| format_err(path, "malformed comment line"))?;
        if !saw_schema {
            if k != "schema" {
                return Err(format_err(path, "first line must be #schema=<version>"));
            }
            if v != SCHEMA_VERSION.to_string() {
                return Err(IoError::Schema { path: path.display().to_string(), found: v.to_string(), expected: SCHEMA_VERSION });
            }
            saw_schema = true;
        } else {
            meta.push((k.to_string(), v.to_string()));
        }
    }
    if !saw_schema {
        return Err(format_err(path, "missing #schema line"));
    }
    reader.read_to_string(&mut body).map_err(file_err(path))?;
    let mut r = csv::Reader::from_reader(body.as_bytes());
    let rows = r.deserialize().collect::<Result<Vec<T>, _>>().map_err(|e| format_err(path, e))?;
    Ok(CsvTable { meta, rows })
}

/// One cell of a grid export.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct GridCsvRow {
    pub cell: usize,
    pub entries: String,
}

fn grid_meta(grid: &CellTensorGrid) -> Vec<(&'static str, String)> {
    let (seed, kind) = grid.source().map_or((String::from("none"), String::from("explicit")), |s| (s.seed.to_string(), s.kind.clone()));
    let corner: Vec<String> = grid.corner()[..grid.dim()].iter().map(|c| c.to_string()).collect();
    vec![
        ("d", grid.dim().to_string()),
        ("r", grid.side().to_string()),
        ("m", grid.cells_per_unit().to_string()),
        ("seed", seed),
        ("kind", kind),
        ("corner", corner.join(" ")),
    ]
}

/// Cell tensors as CSV: one row per cell in x-fastest order with the
/// upper-triangular entries `a11 a12 … a1d a22 … add` as columns.
pub fn write_grid_csv(path: &Path, grid: &CellTensorGrid) -> IoResult<()> {
    let dim = grid.dim();
    let file = File::create(path).map_err(file_err(path))?;
    let mut out = BufWriter::new(file);
    let io = file_err(path);
    writeln!(out, "#schema={SCHEMA_VERSION}").map_err(&io)?;
    for (k, v) in grid_meta(grid) {
        writeln!(out, "#{k}={v}").map_err(&io)?;
    }
    let mut header = vec![String::from("cell")];
    for i in 0..dim {
        for j in i..dim {
            header.push(format!("a{}{}", i + 1, j + 1));
        }
    }
    writeln!(out, "{}", header.join(",")).map_err(&io)?;
    for (c, t) in grid.cells().iter().enumerate() {
        let vals: Vec<String> = t.upper_triangle(dim).iter().map(|v| v.to_string()).collect();
        writeln!(out, "{c},{}", vals.join(",")).map_err(&io)?;
    }
    out.flush().map_err(&io)
}

/// Inverse of [`write_grid_csv`].
pub fn read_grid_csv(path: &Path) -> IoResult<CellTensorGrid> {
    let text = std::fs::read_to_string(path).map_err(file_err(path))?;
    let mut lines = text.lines();
    let first = lines.next().ok_or_else(|| format_err(path, "empty file"))?;
    let version = first.strip_prefix("#schema=").ok_or_else(|| format_err(path, "missing #schema line"))?;
    if version != SCHEMA_VERSION.to_string() {
        return Err(IoError::Schema { path: path.display().to_string(), found: version.into(), expected: SCHEMA_VERSION });
    }
    let mut meta = std::collections::HashMap::new();
    let mut cells = Vec::new();
    let mut dim = 0;
    for line in lines {
        if let Some(c) = line.strip_prefix('#') {
            if let Some((k, v)) = c.split_once('=') {
                meta.insert(k.to_string(), v.to_string());
            }
            continue;
        }
        if line.starts_with("cell") {
            dim = meta.get("d").and_then(|v| v.parse().ok()).ok_or_else(|| format_err(path, "missing #d"))?;
            continue;
        }
        let vals: Vec<f64> = line
            .split(',')
            .skip(1)
            .map(|v| v.parse::<f64>().map_err(|e| format_err(path, e)))
            .collect::<IoResult<_>>()?;
        cells.push(SymTensor::from_upper_triangle(dim, &vals));
    }
    let get = |k: &str| -> IoResult<usize> { meta.get(k).and_then(|v| v.parse().ok()).ok_or_else(|| format_err(path, format!("missing #{k}"))) };
    let grid = CellTensorGrid::from_cells(dim, get("r")?, get("m")?, cells).map_err(|e| format_err(path, e))?;
    let source = match meta.get("seed").and_then(|s| s.parse::<u64>().ok()) {
        Some(seed) => Some(GridSource { seed, kind: meta.get("kind").cloned().unwrap_or_default() }),
        None => None,
    };
    let corner: Vec<i64> = meta.get("corner").map(|c| c.split_whitespace().filter_map(|v| v.parse().ok()).collect()).unwrap_or_default();
    Ok(grid.with_placement(&corner, source))
}

fn put_u32(out: &mut impl Write, v: u32) -> std::io::Result<()> {
    out.write_all(&v.to_le_bytes())
}

fn put_f64(out: &mut impl Write, v: f64) -> std::io::Result<()> {
    out.write_all(&v.to_le_bytes())
}

/// Binary grid export: magic `HLGRID01`, `u32` d, `u32` r, `u32` m, `u64`
/// seed, `i64` corner[d], then for each cell (x-fastest) the d(d+1)/2
/// upper-triangular entries as little-endian `f64`.
pub fn write_grid_binary(path: &Path, grid: &CellTensorGrid) -> IoResult<()> {
    let dim = grid.dim();
    let file = File::create(path).map_err(file_err(path))?;
    let mut out = BufWriter::new(file);
    let io = file_err(path);
    out.write_all(GRID_MAGIC).map_err(&io)?;
    put_u32(&mut out, dim as u32).map_err(&io)?;
    put_u32(&mut out, grid.side() as u32).map_err(&io)?;
    put_u32(&mut out, grid.cells_per_unit() as u32).map_err(&io)?;
    out.write_all(&grid.source().map_or(0, |s| s.seed).to_le_bytes()).map_err(&io)?;
    for c in &grid.corner()[..dim] {
        out.write_all(&c.to_le_bytes()).map_err(&io)?;
    }
    for t in grid.cells() {
        for v in t.upper_triangle(dim) {
            put_f64(&mut out, v).map_err(&io)?;
        }
    }
    out.flush().map_err(&io)
}

/// Nodal dump: magic `HLNODE01`, `u32` d, `u32` nodes per axis, `f64`
/// spacing, `f64` origin[d], then one little-endian `f64` per node
/// (x-fastest).
pub fn write_nodal(path: &Path, field: &ScalarField) -> IoResult<()> {
    let g = field.geometry;
    let file = File::create(path).map_err(file_err(path))?;
    let mut out = BufWriter::new(file);
    let io = file_err(path);
    out.write_all(NODAL_MAGIC).map_err(&io)?;
    put_u32(&mut out, g.dim as u32).map_err(&io)?;
    put_u32(&mut out, g.nodes_per_axis() as u32).map_err(&io)?;
    put_f64(&mut out, g.spacing).map_err(&io)?;
    for o in &g.origin[..g.dim] {
        put_f64(&mut out, *o).map_err(&io)?;
    }
    for v in &field.values {
        put_f64(&mut out, *v).map_err(&io)?;
    }
    out.flush().map_err(&io)
}

/// Inverse of [`write_nodal`].
pub fn read_nodal(path: &Path) -> IoResult<ScalarField> {
    let bytes = std::fs::read(path).map_err(file_err(path))?;
    let bad = || format_err(path, "truncated or malformed nodal dump");
    if bytes.len() < 16 || &bytes[..8] != NODAL_MAGIC {
        return Err(bad());
    }
    let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().unwrap()) as usize;
    let f64_at = |o: usize| f64::from_le_bytes(bytes[o..o + 8].try_into().unwrap());
    let dim = u32_at(8);
    let np = u32_at(12);
    if !(1..=3).contains(&dim) || np < 2 {
        return Err(bad());
    }
    let header = 16 + 8 + 8 * dim;
    let count = np.pow(dim as u32);
    if bytes.len() != header + 8 * count {
        return Err(bad());
    }
    let spacing = f64_at(16);
    let mut origin = [0.0; 3];
    for (k, o) in origin.iter_mut().enumerate().take(dim) {
        *o = f64_at(24 + 8 * k);
    }
    let values = (0..count).map(|i| f64_at(header + 8 * i)).collect();
    let geometry = crate::fields::Geometry { dim, n: np - 1, spacing, origin };
    Ok(ScalarField { geometry, values, bc: crate::solver::BoundaryCondition::None, stats: None })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fields::{gen_checkerboard, sample_on_grid, Cube};

    #[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
    struct Row {
        scale: usize,
        label: String,
        value: f64,
    }

    #[test]
    fn csv_round_trip_and_schema_check() {
        let dir = std::env::temp_dir().join(format!("homlab-io-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("t.csv");
        let rows = vec![Row { scale: 8, label: "e1+e2".into(), value: 0.1 + 0.2 }, Row { scale: 16, label: "e1".into(), value: -1e-300 }];
        write_csv(&path, &[("d", "2".into())], &rows).unwrap();
        let back: CsvTable<Row> = read_csv(&path).unwrap();
        assert_eq!(back.rows, rows);
        assert_eq!(back.meta_value("d"), Some("2"));
        let text = std::fs::read_to_string(&path).unwrap().replacen("#schema=1", "#schema=7", 1);
        std::fs::write(&path, text).unwrap();
        assert!(matches!(read_csv::<Row>(&path), Err(IoError::Schema { .. })));
        std::fs::remove_dir_all(&dir).unwrap();
    }

    #[test]
    fn grid_and_nodal_round_trip() {
        let dir = std::env::temp_dir().join(format!("homlab-grid-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let f = gen_checkerboard(2, 1.0, 4.0, 0.5, 3).unwrap();
        let g = sample_on_grid(&f, &Cube::at(&[-2, 1], 4), 2).unwrap();
        write_grid_csv(&dir.join("g.csv"), &g).unwrap();
        assert_eq!(read_grid_csv(&dir.join("g.csv")).unwrap(), g);
        write_grid_binary(&dir.join("g.bin"), &g).unwrap();
        let len = std::fs::metadata(dir.join("g.bin")).unwrap().len() as usize;
        assert_eq!(len, 8 + 12 + 8 + 16 + 64 * 3 * 8);
        let u = ScalarField::from_fn(*g.geometry(), |x| x[0] * 0.5 + x[1]);
        write_nodal(&dir.join("u.bin"), &u).unwrap();
        let back = read_nodal(&dir.join("u.bin")).unwrap();
        assert_eq!(back.values, u.values);
        assert_eq!(back.geometry, u.geometry);
        std::fs::remove_dir_all(&dir).unwrap();
    }
}
