//! Dataset and matrix CSV files, written atomically.

use std::io::Write;
use std::path::Path;

use ddlqr::{Dataset, Matrix};

use crate::CliError;

/// Writes `contents` to `path` through a temporary file in the same
/// directory followed by a rename.
pub fn write_atomic(path: &Path, contents: &[u8]) -> Result<(), CliError> {
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d,
        _ => Path::new("."),
    };
    std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| CliError::io(dir, e))?;
    tmp.write_all(contents).map_err(|e| CliError::io(path, e))?;
    tmp.as_file().sync_all().map_err(|e| CliError::io(path, e))?;
    tmp.persist(path).map_err(|e| CliError::io(path, e.error))?;
    Ok(())
}

/// Formats a value with 17 significant digits, enough to round-trip.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

fn csv_bytes(header: Option<Vec<String>>, rows: impl Iterator<Item = Vec<String>>) -> Result<Vec<u8>, CliError> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(Vec::new());
    let fail = |e: csv::Error| CliError::Input(format!("csv encoding failed: {e}"));
    if let Some(h) = header {
        w.write_record(&h).map_err(fail)?;
    }
    for r in rows {
        w.write_record(&r).map_err(fail)?;
    }
    w.into_inner()
        .map_err(|e| CliError::Input(format!("csv encoding failed: {e}")))
}

pub fn dataset_csv(data: &Dataset) -> Result<Vec<u8>, CliError> {
    let mut header = vec!["k".to_string()];
    header.extend((1..=data.inputs()).map(|i| format!("u{i}")));
    header.extend((1..=data.outputs()).map(|i| format!("y{i}")));
    header.extend((1..=data.states()).map(|i| format!("x{i}")));
    let rows = (0..data.len()).map(|k| {
        let mut row = vec![k.to_string()];
        for m in [&data.u, &data.y, &data.x] {
            row.extend(m.row(k).iter().map(|&v| fmt_f64(v)));
        }
        row
    });
    csv_bytes(Some(header), rows)
}

pub fn write_dataset(path: &Path, data: &Dataset) -> Result<(), CliError> {
    write_atomic(path, &dataset_csv(data)?)
}

fn parse_cell(path: &Path, line: u64, col: &str, cell: &str) -> Result<f64, CliError> {
    cell.trim().parse::<f64>().map_err(|_| {
        CliError::Input(format!(
            "{}: line {line}, column `{col}`: `{cell}` is not a number",
            path.display()
        ))
    })
}

/// Reads a dataset CSV with header `k,u1..up,y1..yq,x1..xn`.
pub fn read_dataset(path: &Path, sample_time: Option<f64>) -> Result<Dataset, CliError> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(path)
        .map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?;
    let header: Vec<String> = reader
        .headers()
        .map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?
        .iter()
        .map(|h| h.trim().to_string())
        .collect();
    let bad_header = || {
        CliError::Input(format!(
            "{}: header must be k,u1..up,y1..yq,x1..xn, found `{}`",
            path.display(),
            header.join(",")
        ))
    };
    if header.first().map(String::as_str) != Some("k") {
        return Err(bad_header());
    }
    let count = |prefix: char| header.iter().filter(|h| h.starts_with(prefix)).count();
    let (p, q, n) = (count('u'), count('y'), count('x'));
    let expected: Vec<String> = std::iter::once("k".to_string())
        .chain((1..=p).map(|i| format!("u{i}")))
        .chain((1..=q).map(|i| format!("y{i}")))
        .chain((1..=n).map(|i| format!("x{i}")))
        .collect();
    if expected != header || p == 0 || q == 0 {
        return Err(bad_header());
    }
    let mut u = Vec::new();
    let mut y = Vec::new();
    let mut x = Vec::new();
    for (idx, record) in reader.records().enumerate() {
        let line = idx as u64 + 2;
        let record = record.map_err(|e| CliError::Input(format!("{}: line {line}: {e}", path.display())))?;
        if record.len() != header.len() {
            return Err(CliError::Input(format!(
                "{}: line {line} has {} fields, header has {}",
                path.display(),
                record.len(),
                header.len()
            )));
        }
        for (j, cell) in record.iter().enumerate().skip(1) {
            let v = parse_cell(path, line, &header[j], cell)?;
            match j {
                j if j <= p => u.push(v),
                j if j <= p + q => y.push(v),
                _ => x.push(v),
            }
        }
    }
    let t = u.len() / p;
    Dataset::new(
        Matrix::from_row_slice(t, p, &u),
        Matrix::from_row_slice(t, q, &y),
        Matrix::from_row_slice(t, n, &x),
        sample_time,
    )
    .map_err(|e| CliError::Input(format!("{}: {e}", path.display())))
}

/// Headerless CSV, one matrix row per line.
pub fn matrix_csv(m: &Matrix) -> Result<Vec<u8>, CliError> {
    csv_bytes(None, m.row_iter().map(|r| r.iter().map(|&v| fmt_f64(v)).collect()))
}

pub fn write_matrix(path: &Path, m: &Matrix) -> Result<(), CliError> {
    write_atomic(path, &matrix_csv(m)?)
}

pub fn read_matrix_csv(path: &Path) -> Result<Matrix, CliError> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .from_path(path)
        .map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?;
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (idx, record) in reader.records().enumerate() {
        let line = idx as u64 + 1;
        let record = record.map_err(|e| CliError::Input(format!("{}: line {line}: {e}", path.display())))?;
        let row = record
            .iter()
            .enumerate()
            .map(|(j, c)| parse_cell(path, line, &(j + 1).to_string(), c))
            .collect::<Result<Vec<_>, _>>()?;
        rows.push(row);
    }
    let cols = rows.first().map_or(0, Vec::len);
    if rows.is_empty() || cols == 0 {
        return Err(CliError::Input(format!("{}: matrix file is empty", path.display())));
    }
    Ok(Matrix::from_fn(rows.len(), cols, |i, j| rows[i][j]))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn seventeen_digits_round_trip() {
        for v in [0.1, 1.0 / 3.0, -2.5e-300, 6.02214076e23, f64::MIN_POSITIVE, 0.0] {
            assert_eq!(fmt_f64(v).parse::<f64>().unwrap(), v);
        }
    }

    #[test]
    fn matrix_file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("k.csv");
        let m = Matrix::from_row_slice(2, 3, &[1.0, -2.0, 3.5, 1e-12, 0.1, 7.0]);
        write_matrix(&path, &m).unwrap();
        assert_eq!(read_matrix_csv(&path).unwrap(), m);
    }

    #[test]
    fn rejects_bad_header() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.csv");
        std::fs::write(&path, "k,y1,u1\n0,1,2\n").unwrap();
        let err = read_dataset(&path, None).unwrap_err();
        assert!(err.to_string().contains("header"));
    }

    #[test]
    fn reports_bad_cell_location() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.csv");
        std::fs::write(&path, "k,u1,y1,x1\n0,1,2,3\n1,4,oops,6\n").unwrap();
        let err = read_dataset(&path, None).unwrap_err().to_string();
        assert!(err.contains("line 3") && err.contains("y1"), "{err}");
    }
}
