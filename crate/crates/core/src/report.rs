//! CSV and JSON output.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::Serialize;

use crate::cardinality::Surface;
use crate::closed_form::FrontierPoint;
use crate::Result;

pub fn write_json<T: Serialize + ?Sized>(path: impl AsRef<Path>, value: &T) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut w, value)?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}

/// One CSV row per record, header taken from the field names.
pub fn write_csv<T: Serialize>(writer: impl Write, rows: &[T]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_csv_path<T: Serialize>(path: impl AsRef<Path>, rows: &[T]) -> Result<()> {
    write_csv(File::create(path)?, rows)
}

#[derive(Debug, Clone, Serialize)]
pub struct FrontierRow {
    pub kind: &'static str,
    pub kappa: f64,
    /// Empty for MV rows.
    pub epsilon: Option<f64>,
    pub variance: f64,
    #[serde(rename = "return")]
    pub expected_return: f64,
}

impl FrontierRow {
    pub fn from_point(p: &FrontierPoint, epsilon: Option<f64>) -> Self {
        Self {
            kind: if epsilon.is_some() { "RMV" } else { "MV" },
            kappa: p.kappa,
            epsilon,
            variance: p.variance,
            expected_return: p.expected_return,
        }
    }
}

/// Long format: `epsilon,phi,cardinality,objective`.
pub fn write_surface_csv(writer: impl Write, surface: &Surface) -> Result<()> {
    write_csv(writer, &surface.cells)
}

#[derive(Debug, Serialize)]
struct SurfaceGrid<'a> {
    kappa: f64,
    backend: crate::cardinality::SurfaceBackend,
    robust_term: &'static str,
    epsilon: &'a [f64],
    phi: &'a [f64],
    /// Rows indexed by epsilon.
    cardinality: Vec<Vec<usize>>,
}

pub fn write_surface_json(path: impl AsRef<Path>, surface: &Surface) -> Result<()> {
    let grid = SurfaceGrid {
        kappa: surface.kappa,
        backend: surface.backend,
        robust_term: "ellipsoid",
        epsilon: &surface.epsilon_grid,
        phi: &surface.phi_grid,
        cardinality: surface.grid(),
    };
    write_json(path, &grid)
}
