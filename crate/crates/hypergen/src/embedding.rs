//! Embedding containers and their CSV serialization.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use ndarray::{Array1, Array2};

use crate::error::{Error, Result};

/// A set of hyperlink embeddings: one K-dimensional row per hyperlink.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingSet {
    x: Array2<f64>,
}

impl EmbeddingSet {
    pub fn new(x: Array2<f64>) -> Result<Self> {
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::Validation("embedding entries must be finite".into()));
        }
        Ok(Self { x })
    }

    /// Number of embeddings.
    pub fn m(&self) -> usize {
        self.x.nrows()
    }

    /// Latent dimension.
    pub fn k(&self) -> usize {
        self.x.ncols()
    }

    pub fn matrix(&self) -> &Array2<f64> {
        &self.x
    }

    pub fn into_matrix(self) -> Array2<f64> {
        self.x
    }
}

/// Node-side parameters: node embeddings `z_i`, degree scalars `alpha_i`,
/// and the cached mean degree parameter.
#[derive(Debug, Clone, PartialEq)]
pub struct NodeParams {
    z: Array2<f64>,
    alpha: Array1<f64>,
    alpha_bar: f64,
}

impl NodeParams {
    pub fn new(z: Array2<f64>, alpha: Array1<f64>) -> Result<Self> {
        if z.nrows() != alpha.len() {
            return Err(Error::DimensionMismatch(format!(
                "Z has {} rows but alpha has {} entries",
                z.nrows(),
                alpha.len()
            )));
        }
        if z.iter().any(|v| !v.is_finite()) || alpha.iter().any(|v| !v.is_finite()) {
            return Err(Error::Validation("node parameters must be finite".into()));
        }
        let alpha_bar = if alpha.is_empty() {
            0.0
        } else {
            alpha.sum() / alpha.len() as f64
        };
        Ok(Self { z, alpha, alpha_bar })
    }

    pub fn n(&self) -> usize {
        self.z.nrows()
    }

    pub fn k(&self) -> usize {
        self.z.ncols()
    }

    pub fn z(&self) -> &Array2<f64> {
        &self.z
    }

    pub fn alpha(&self) -> &Array1<f64> {
        &self.alpha
    }

    pub fn alpha_bar(&self) -> f64 {
        self.alpha_bar
    }
}

/// Write a matrix as CSV with a comment header recording the shape, e.g.
/// `# m=300 K=2`. Values use shortest round-trip formatting so files
/// reload bit-exactly.
pub fn write_matrix_csv(
    path: impl AsRef<Path>,
    mat: &Array2<f64>,
    row_label: &str,
) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "# {}={} K={}", row_label, mat.nrows(), mat.ncols())?;
    for row in mat.rows() {
        let cells: Vec<String> = row.iter().map(|v| format!("{v}")).collect();
        writeln!(w, "{}", cells.join(","))?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_matrix_csv(path: impl AsRef<Path>) -> Result<Array2<f64>> {
    let reader = BufReader::new(File::open(path)?);
    let mut rows: Vec<Vec<f64>> = Vec::new();
    let mut ncols = None;
    for (idx, line) in reader.lines().enumerate() {
        let line = line?;
        if line.starts_with('#') || line.trim().is_empty() {
            continue;
        }
        let row: Vec<f64> = line
            .split(',')
            .map(|tok| {
                tok.trim().parse().map_err(|_| Error::Parse {
                    line: idx + 1,
                    msg: format!("expected float, got {tok:?}"),
                })
            })
            .collect::<Result<_>>()?;
        match ncols {
            None => ncols = Some(row.len()),
            Some(c) if c != row.len() => {
                return Err(Error::Parse {
                    line: idx + 1,
                    msg: format!("expected {c} columns, got {}", row.len()),
                })
            }
            _ => {}
        }
        rows.push(row);
    }
    let ncols = ncols.unwrap_or(0);
    let flat: Vec<f64> = rows.iter().flatten().copied().collect();
    Array2::from_shape_vec((rows.len(), ncols), flat)
        .map_err(|e| Error::Validation(e.to_string()))
}

pub fn write_vector_csv(path: impl AsRef<Path>, v: &Array1<f64>, row_label: &str) -> Result<()> {
    let col = v.view().insert_axis(ndarray::Axis(1)).to_owned();
    write_matrix_csv(path, &col, row_label)
}

pub fn read_vector_csv(path: impl AsRef<Path>) -> Result<Array1<f64>> {
    let mat = read_matrix_csv(path)?;
    if mat.ncols() != 1 {
        return Err(Error::Validation(format!(
            "expected a single-column CSV, got {} columns",
            mat.ncols()
        )));
    }
    Ok(mat.column(0).to_owned())
}
