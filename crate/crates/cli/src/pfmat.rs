//! `pfmat` sparse matrix text format.
//!
//! ```text
//! pfmat 1 <nrows> <ncols> <nnz>
//! <row> <col> <value>        (nnz lines, 0-based, row-major)
//! checksum <FNV-1a 64-bit hex of every preceding byte>
//! ```
//!
//! Values are written with 17 significant digits, which round-trips every
//! `f64`.

use std::fmt::Write;

use pfstab_core::sparse::CsrMatrix;

use crate::store::fnv1a;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum PfmatError {
    #[error("line {line}: {message}")]
    Syntax { line: usize, message: String },
    #[error("checksum mismatch: file says {stored}, content hashes to {computed}")]
    Checksum { stored: String, computed: String },
    #[error("file ends before the checksum line")]
    Truncated,
    #[error("invalid matrix: {0}")]
    Matrix(String),
}

pub fn to_string(m: &CsrMatrix) -> String {
    let mut out = String::with_capacity(40 * m.nnz() + 64);
    writeln!(out, "pfmat 1 {} {} {}", m.nrows(), m.ncols(), m.nnz()).unwrap();
    for (r, c, v) in m.triplets() {
        writeln!(out, "{r} {c} {v:.16e}").unwrap();
    }
    let sum = fnv1a(out.as_bytes());
    writeln!(out, "checksum {sum:016x}").unwrap();
    out
}

pub fn parse(text: &str) -> Result<CsrMatrix, PfmatError> {
    let syntax = |line: usize, message: &str| PfmatError::Syntax {
        line,
        message: message.to_string(),
    };
    let body_end = match text.trim_end_matches('\n').rfind('\n') {
        Some(i) => i + 1,
        None => return Err(PfmatError::Truncated),
    };
    let (body, last) = text.split_at(body_end);
    let stored = last
        .trim_end()
        .strip_prefix("checksum ")
        .ok_or(PfmatError::Truncated)?;
    let computed = format!("{:016x}", fnv1a(body.as_bytes()));
    if stored != computed {
        return Err(PfmatError::Checksum {
            stored: stored.to_string(),
            computed,
        });
    }
    let mut lines = body.lines();
    let header: Vec<&str> = lines
        .next()
        .ok_or(PfmatError::Truncated)?
        .split_whitespace()
        .collect();
    if header.len() != 5 || header[0] != "pfmat" || header[1] != "1" {
        return Err(syntax(1, "expected `pfmat 1 <nrows> <ncols> <nnz>`"));
    }
    let num = |s: &str| s.parse::<usize>().map_err(|_| syntax(1, "bad dimension"));
    let (nrows, ncols, nnz) = (num(header[2])?, num(header[3])?, num(header[4])?);
    let mut rows: Vec<Vec<(usize, f64)>> = vec![Vec::new(); nrows];
    let mut count = 0;
    let mut last_pos: Option<(usize, usize)> = None;
    for (k, line) in lines.enumerate() {
        let ln = k + 2;
        let f: Vec<&str> = line.split_whitespace().collect();
        if f.len() != 3 {
            return Err(syntax(ln, "expected `<row> <col> <value>`"));
        }
        let r: usize = f[0].parse().map_err(|_| syntax(ln, "bad row"))?;
        let c: usize = f[1].parse().map_err(|_| syntax(ln, "bad column"))?;
        let v: f64 = f[2].parse().map_err(|_| syntax(ln, "bad value"))?;
        if r >= nrows || c >= ncols {
            return Err(syntax(ln, "index out of range"));
        }
        if last_pos.is_some_and(|p| p >= (r, c)) {
            return Err(syntax(ln, "entries are not in row-major order"));
        }
        last_pos = Some((r, c));
        rows[r].push((c, v));
        count += 1;
    }
    if count != nnz {
        return Err(PfmatError::Matrix(format!(
            "header announces {nnz} entries, found {count}"
        )));
    }
    CsrMatrix::from_rows(ncols, rows).map_err(|e| PfmatError::Matrix(e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_is_exact() {
        let m = CsrMatrix::from_dense(&[
            vec![0.1, 0.0, 1.0 / 3.0],
            vec![0.0, 0.0, 0.0],
            vec![f64::MIN_POSITIVE, 0.7, 1e-300],
        ]);
        let text = to_string(&m);
        assert!(text.starts_with("pfmat 1 3 3 5\n"));
        assert_eq!(parse(&text).unwrap(), m);
    }

    #[test]
    fn corruption_is_detected() {
        let m = CsrMatrix::from_dense(&[vec![0.5, 0.5], vec![0.0, 1.0]]);
        let text = to_string(&m);
        let flipped = text.replacen("0 1 5", "0 1 6", 1);
        assert!(matches!(parse(&flipped), Err(PfmatError::Checksum { .. })));
        let cut = &text[..text.len() / 2];
        assert!(parse(cut).is_err());
        assert_eq!(parse("pfmat 1 1 1 0\n"), Err(PfmatError::Truncated));
    }
}
