//! Plain-text matrix input/output.
//!
//! Numeric tables are UTF-8 CSV (or TSV), row-major, `.` decimal separator,
//! with an optional single header line. The writer emits 17 significant
//! digits so that save -> load is an exact round trip for finite doubles.
//! Kernel matrices carry their kind in a JSON sidecar next to the CSV.

use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::genodata::{CovariateDesign, GenotypeMatrix, PhenotypeVector};
use crate::kernels::{KernelKind, KernelMatrix};

/// Supported table formats.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TableFormat {
    Csv,
    Tsv,
}

impl TableFormat {
    pub fn delimiter(self) -> char {
        match self {
            TableFormat::Csv => ',',
            TableFormat::Tsv => '\t',
        }
    }

    /// Picks the format from a file extension, defaulting to CSV.
    pub fn from_path(path: &Path) -> TableFormat {
        match path.extension().and_then(|e| e.to_str()) {
            Some("tsv") => TableFormat::Tsv,
            _ => TableFormat::Csv,
        }
    }
}

/// Parses a rectangular numeric table, skipping one header line if the first
/// line has any cell that does not parse as a number.
pub fn read_matrix(path: &Path, format: TableFormat) -> Result<Array2<f64>> {
    let text = fs::read_to_string(path)?;
    parse_matrix(&text, format)
}

/// Parses matrix text. Row/column positions in errors are 1-based and refer
/// to the original file, including any header line.
pub fn parse_matrix(text: &str, format: TableFormat) -> Result<Array2<f64>> {
    let delim = format.delimiter();
    let mut rows: Vec<Vec<f64>> = Vec::new();
    let mut width: Option<usize> = None;
    let mut first_data_line = true;
    for (line_idx, raw_line) in text.lines().enumerate() {
        let line = raw_line.trim_end_matches('\r');
        if line.trim().is_empty() {
            continue;
        }
        let cells: Vec<&str> = line.split(delim).collect();
        let mut parsed = Vec::with_capacity(cells.len());
        let mut failed_at: Option<usize> = None;
        for (col_idx, cell) in cells.iter().enumerate() {
            match cell.trim().parse::<f64>() {
                Ok(v) => parsed.push(v),
                Err(_) => {
                    failed_at = Some(col_idx);
                    break;
                }
            }
        }
        if let Some(col_idx) = failed_at {
            if first_data_line {
                // Header line: skip it entirely.
                first_data_line = false;
                continue;
            }
            return Err(Error::Parse {
                row: line_idx + 1,
                col: col_idx + 1,
                message: format!("cell '{}' is not numeric", cells[col_idx].trim()),
            });
        }
        first_data_line = false;
        match width {
            None => width = Some(parsed.len()),
            Some(w) if w != parsed.len() => {
                return Err(Error::Parse {
                    row: line_idx + 1,
                    col: parsed.len().min(w) + 1,
                    message: format!("expected {w} columns, found {}", parsed.len()),
                });
            }
            _ => {}
        }
        rows.push(parsed);
    }
    let width = width.ok_or_else(|| Error::Parse {
        row: 1,
        col: 1,
        message: "table is empty".into(),
    })?;
    let mut data = Array2::<f64>::zeros((rows.len(), width));
    for (i, row) in rows.iter().enumerate() {
        for (j, v) in row.iter().enumerate() {
            data[[i, j]] = *v;
        }
    }
    Ok(data)
}

fn format_value(v: f64) -> String {
    // 17 significant digits: enough for exact f64 round trips.
    format!("{v:.16e}")
}

/// Writes a matrix with 17 significant digits per cell and no header.
pub fn write_matrix(path: &Path, values: &Array2<f64>, format: TableFormat) -> Result<()> {
    let delim = format.delimiter();
    let mut out = String::new();
    for row in values.rows() {
        let mut first = true;
        for v in row.iter() {
            if !first {
                out.push(delim);
            }
            out.push_str(&format_value(*v));
            first = false;
        }
        out.push('\n');
    }
    write_atomic(path, out.as_bytes())
}

/// Writes a vector as a single-column table.
pub fn write_vector(path: &Path, values: &Array1<f64>, format: TableFormat) -> Result<()> {
    let col = values
        .view()
        .into_shape_with_order((values.len(), 1))
        .expect("reshape vector");
    write_matrix(path, &col.to_owned(), format)
}

/// Reads a single-column (or single-row) table as a vector.
pub fn read_vector(path: &Path, format: TableFormat) -> Result<Array1<f64>> {
    let m = read_matrix(path, format)?;
    let (n, p) = m.dim();
    if p == 1 {
        Ok(m.column(0).to_owned())
    } else if n == 1 {
        Ok(m.row(0).to_owned())
    } else {
        Err(Error::Dimension(format!(
            "expected a vector file, got a {n}x{p} table"
        )))
    }
}

pub fn load_genotypes(path: &Path, format: TableFormat) -> Result<GenotypeMatrix> {
    GenotypeMatrix::new(read_matrix(path, format)?)
}

pub fn load_phenotypes(path: &Path, format: TableFormat) -> Result<PhenotypeVector> {
    PhenotypeVector::new(read_vector(path, format)?)
}

pub fn load_covariates(path: &Path, format: TableFormat) -> Result<CovariateDesign> {
    CovariateDesign::new(read_matrix(path, format)?)
}

/// Kernel sidecar metadata.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct KernelMetadata {
    pub kind: KernelKind,
    pub n: usize,
    /// Builder parameters worth reproducing (width, depth, seed, ...).
    #[serde(default, skip_serializing_if = "serde_json::Map::is_empty")]
    pub params: serde_json::Map<String, serde_json::Value>,
}

/// Path of the metadata sidecar for a kernel CSV.
pub fn kernel_metadata_path(kernel_path: &Path) -> PathBuf {
    let mut os = kernel_path.as_os_str().to_owned();
    os.push(".meta.json");
    PathBuf::from(os)
}

/// Writes a kernel matrix plus its JSON metadata sidecar.
pub fn write_kernel(
    path: &Path,
    kernel: &KernelMatrix,
    params: serde_json::Map<String, serde_json::Value>,
    format: TableFormat,
) -> Result<()> {
    write_matrix(path, kernel.values(), format)?;
    let meta = KernelMetadata {
        kind: kernel.kind(),
        n: kernel.n(),
        params,
    };
    let text = serde_json::to_string_pretty(&meta)
        .map_err(|e| Error::Numeric(format!("failed to encode kernel metadata: {e}")))?;
    write_atomic(&kernel_metadata_path(path), text.as_bytes())
}

/// Reads a kernel matrix; the kind comes from the sidecar when present and
/// defaults to GRM otherwise.
pub fn read_kernel(path: &Path, format: TableFormat) -> Result<KernelMatrix> {
    let values = read_matrix(path, format)?;
    let meta_path = kernel_metadata_path(path);
    let kind = if meta_path.exists() {
        let text = fs::read_to_string(&meta_path)?;
        let meta: KernelMetadata = serde_json::from_str(&text)
            .map_err(|e| Error::Config(format!("bad kernel metadata {}: {e}", meta_path.display())))?;
        meta.kind
    } else {
        KernelKind::Grm
    };
    KernelMatrix::new(values, kind)
}

/// Writes bytes through a temporary file and an atomic rename.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let parent = path.parent().unwrap_or_else(|| Path::new("."));
    if !parent.as_os_str().is_empty() {
        fs::create_dir_all(parent)?;
    }
    let tmp = path.with_extension("tmp-write");
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}
