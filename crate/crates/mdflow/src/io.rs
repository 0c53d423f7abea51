//! CSV tables, grid dumps and JSON summaries.

use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::path::Path;

use mdflow_core::jko::{Grid, GridMeasure};
use mdflow_core::particles::TrajectoryRecord;
use mdflow_core::transport::TransportPlan;
use serde::Serialize;

use crate::experiments::Table;
use crate::{io_err, Error, Result};

const GRID_MAGIC: &[u8; 8] = b"MDFGRID1";

fn csv_writer(path: &Path) -> Result<csv::Writer<File>> {
    let f = File::create(path).map_err(io_err(path))?;
    Ok(csv::Writer::from_writer(f))
}

/// One header row of `name [unit]` columns plus a trailing provenance column.
pub fn write_table_csv(table: &Table, path: &Path) -> Result<()> {
    let mut w = csv_writer(path)?;
    let mut header: Vec<String> = table
        .columns
        .iter()
        .map(|c| format!("{} [{}]", c.name, c.unit))
        .collect();
    header.push("provenance".into());
    w.write_record(&header)?;
    for row in &table.rows {
        let mut rec: Vec<String> = row.values.iter().map(|v| format!("{v:e}")).collect();
        rec.push(row.provenance.clone());
        w.write_record(&rec)?;
    }
    w.flush().map_err(io_err(path))?;
    Ok(())
}

/// Cell centers and densities of the masked cells.
pub fn write_grid_csv(gm: &GridMeasure, path: &Path) -> Result<()> {
    let mut w = csv_writer(path)?;
    let axes = ["x", "y", "z"];
    let mut header: Vec<&str> = axes[..gm.grid.dim].to_vec();
    header.push("u");
    w.write_record(&header)?;
    for k in 0..gm.grid.len() {
        if !gm.mask[k] {
            continue;
        }
        let c = gm.grid.center(k);
        let mut rec: Vec<String> = c[..gm.grid.dim].iter().map(|v| format!("{v:e}")).collect();
        rec.push(format!("{:e}", gm.density[k]));
        w.write_record(&rec)?;
    }
    w.flush().map_err(io_err(path))?;
    Ok(())
}

/// Binary layout, all little-endian: magic `MDFGRID1`; `u32` dim; three `u64` extents;
/// three `f64` origin components; `f64` h; `f64` t; then one `f64` density per cell
/// (first axis fastest) followed by one mask byte per cell.
pub fn write_grid_binary(gm: &GridMeasure, path: &Path) -> Result<()> {
    let f = File::create(path).map_err(io_err(path))?;
    let mut w = BufWriter::new(f);
    let g = &gm.grid;
    let mut buf = Vec::with_capacity(80 + 9 * g.len());
    buf.extend_from_slice(GRID_MAGIC);
    buf.extend_from_slice(&(g.dim as u32).to_le_bytes());
    for n in g.n {
        buf.extend_from_slice(&(n as u64).to_le_bytes());
    }
    for o in g.origin {
        buf.extend_from_slice(&o.to_le_bytes());
    }
    buf.extend_from_slice(&g.h.to_le_bytes());
    buf.extend_from_slice(&gm.time.to_le_bytes());
    for u in &gm.density {
        buf.extend_from_slice(&u.to_le_bytes());
    }
    buf.extend(gm.mask.iter().map(|&m| m as u8));
    w.write_all(&buf).map_err(io_err(path))?;
    w.flush().map_err(io_err(path))?;
    Ok(())
}

pub fn read_grid_binary(path: &Path) -> Result<GridMeasure> {
    let mut bytes = Vec::new();
    File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(io_err(path))?;
    let bad = || Error::Scenario(format!("{}: not a grid dump", path.display()));
    let mut pos = 0usize;
    let mut take = |n: usize| -> Result<&[u8]> {
        let s = bytes.get(pos..pos + n).ok_or_else(bad)?;
        pos += n;
        Ok(s)
    };
    if take(8)? != GRID_MAGIC {
        return Err(bad());
    }
    let dim = u32::from_le_bytes(take(4)?.try_into().unwrap()) as usize;
    let mut n = [0usize; 3];
    for v in &mut n {
        *v = u64::from_le_bytes(take(8)?.try_into().unwrap()) as usize;
    }
    let mut origin = [0.0; 3];
    for v in &mut origin {
        *v = f64::from_le_bytes(take(8)?.try_into().unwrap());
    }
    let h = f64::from_le_bytes(take(8)?.try_into().unwrap());
    let t = f64::from_le_bytes(take(8)?.try_into().unwrap());
    let grid = Grid::new(dim, &n[..dim], origin, h)?;
    let len = grid.len();
    let mut density = Vec::with_capacity(len);
    for _ in 0..len {
        density.push(f64::from_le_bytes(take(8)?.try_into().unwrap()));
    }
    let mask = take(len)?.iter().map(|&b| b != 0).collect();
    Ok(GridMeasure::new(grid, density, mask, t)?)
}

/// Rows `(t, particle, x.., mass)` for every recorded snapshot.
pub fn write_trajectory_csv(rec: &TrajectoryRecord, dim: usize, path: &Path) -> Result<()> {
    let mut w = csv_writer(path)?;
    let axes = ["x", "y", "z"];
    let mut header = vec!["t", "particle"];
    header.extend_from_slice(&axes[..dim]);
    header.push("mass");
    w.write_record(&header)?;
    for (t, snap) in rec.times.iter().zip(&rec.snapshots) {
        for (i, (p, m)) in snap.iter().zip(&rec.masses).enumerate() {
            let mut r = vec![format!("{t:e}"), i.to_string()];
            r.extend(p[..dim].iter().map(|v| format!("{v:e}")));
            r.push(format!("{m:e}"));
            w.write_record(&r)?;
        }
    }
    w.flush().map_err(io_err(path))?;
    Ok(())
}

/// Coupling triplets `(i, j, gamma_ij)`.
pub fn write_plan_csv(plan: &TransportPlan, path: &Path) -> Result<()> {
    let mut w = csv_writer(path)?;
    w.write_record(["i", "j", "gamma"])?;
    for &(i, j, g) in &plan.entries {
        w.write_record([i.to_string(), j.to_string(), format!("{g:e}")])?;
    }
    w.flush().map_err(io_err(path))?;
    Ok(())
}

pub fn write_json<T: Serialize>(value: &T, path: &Path) -> Result<()> {
    let f = File::create(path).map_err(io_err(path))?;
    let mut w = BufWriter::new(f);
    serde_json::to_writer_pretty(&mut w, value)?;
    w.write_all(b"\n").map_err(io_err(path))?;
    w.flush().map_err(io_err(path))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use mdflow_core::geometry::BoxDomain;
    use mdflow_core::linalg::ZERO;

    #[test]
    fn grid_dump_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let dom = BoxDomain::new(2, ZERO, [1.0, 0.5, 0.0]).unwrap();
        let g = Grid::covering(2, ZERO, [1.0, 0.5, 0.0], 0.1).unwrap();
        let gm = GridMeasure::from_fn(g, &dom, 0.25, |x| 1.0 + x[0] * x[1]).unwrap();
        let p = dir.path().join("g.bin");
        write_grid_binary(&gm, &p).unwrap();
        assert_eq!(read_grid_binary(&p).unwrap(), gm);
        let bytes = std::fs::read(&p).unwrap();
        assert_eq!(&bytes[..8], GRID_MAGIC);
        assert_eq!(bytes.len(), 8 + 4 + 24 + 24 + 16 + 9 * gm.grid.len());
    }

    #[test]
    fn truncated_dump_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("bad.bin");
        std::fs::write(&p, b"MDFGRID1\x01\x00").unwrap();
        assert!(read_grid_binary(&p).is_err());
    }
}
