//! Matrix Market reader and writer for dense operators and vectors.
//!
//! Reads `coordinate` and `array` layouts with `real` or `integer` fields and
//! `general`, `symmetric` or `skew-symmetric` symmetry. Writes `array real
//! general`, column-major, using the shortest representation that parses back
//! to the same `f64`.

use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use super::{DenseOperator, LinalgError, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Layout {
    Coordinate,
    Array,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Symmetry {
    General,
    Symmetric,
    SkewSymmetric,
}

struct Dense {
    rows: usize,
    cols: usize,
    /// row-major
    data: Vec<f64>,
}

fn parse_err(line: usize, msg: impl Into<String>) -> LinalgError {
    LinalgError::Parse {
        line,
        msg: msg.into(),
    }
}

fn parse_header(line_no: usize, line: &str) -> Result<(Layout, Symmetry)> {
    let tokens: Vec<String> = line
        .split_whitespace()
        .map(str::to_ascii_lowercase)
        .collect();
    if tokens.len() != 5 || tokens[0] != "%%matrixmarket" || tokens[1] != "matrix" {
        return Err(parse_err(line_no, "missing %%MatrixMarket matrix header"));
    }
    let layout = match tokens[2].as_str() {
        "coordinate" => Layout::Coordinate,
        "array" => Layout::Array,
        other => return Err(parse_err(line_no, format!("unsupported layout `{other}`"))),
    };
    match tokens[3].as_str() {
        "real" | "integer" | "double" => {}
        other => return Err(parse_err(line_no, format!("unsupported field `{other}`"))),
    }
    let symmetry = match tokens[4].as_str() {
        "general" => Symmetry::General,
        "symmetric" => Symmetry::Symmetric,
        "skew-symmetric" => Symmetry::SkewSymmetric,
        other => {
            return Err(parse_err(
                line_no,
                format!("unsupported symmetry `{other}`"),
            ))
        }
    };
    Ok((layout, symmetry))
}

fn parse_num<T: std::str::FromStr>(line_no: usize, tok: Option<&str>) -> Result<T> {
    let tok = tok.ok_or_else(|| parse_err(line_no, "missing value"))?;
    tok.parse()
        .map_err(|_| parse_err(line_no, format!("cannot parse `{tok}`")))
}

fn read_dense<R: Read>(reader: R) -> Result<Dense> {
    let mut lines = BufReader::new(reader).lines().enumerate();
    let (layout, symmetry) = match lines.next() {
        Some((i, line)) => parse_header(i + 1, &line?)?,
        None => return Err(parse_err(1, "empty input")),
    };

    let mut body = Vec::new();
    for (i, line) in lines {
        let line = line?;
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('%') {
            continue;
        }
        body.push((i + 1, trimmed.to_owned()));
    }
    let mut body = body.into_iter();
    let (size_line, size) = body
        .next()
        .ok_or_else(|| parse_err(0, "missing size line"))?;
    let mut toks = size.split_whitespace();
    let rows: usize = parse_num(size_line, toks.next())?;
    let cols: usize = parse_num(size_line, toks.next())?;
    if symmetry != Symmetry::General && rows != cols {
        return Err(parse_err(
            size_line,
            "symmetric storage requires a square matrix",
        ));
    }
    let mut data = vec![0.0; rows * cols];

    match layout {
        Layout::Coordinate => {
            let nnz: usize = parse_num(size_line, toks.next())?;
            let mut seen = 0;
            for (ln, entry) in body {
                let mut t = entry.split_whitespace();
                let i: usize = parse_num(ln, t.next())?;
                let j: usize = parse_num(ln, t.next())?;
                let v: f64 = parse_num(ln, t.next())?;
                if i == 0 || j == 0 || i > rows || j > cols {
                    return Err(parse_err(ln, format!("index ({i}, {j}) out of range")));
                }
                let (i, j) = (i - 1, j - 1);
                data[i * cols + j] += v;
                match symmetry {
                    Symmetry::Symmetric if i != j => data[j * cols + i] += v,
                    Symmetry::SkewSymmetric if i != j => data[j * cols + i] -= v,
                    _ => {}
                }
                seen += 1;
            }
            if seen != nnz {
                return Err(parse_err(
                    size_line,
                    format!("expected {nnz} entries, found {seen}"),
                ));
            }
        }
        Layout::Array => {
            let values: Vec<(usize, f64)> = body
                .map(|(ln, v)| parse_num::<f64>(ln, Some(&v)).map(|x| (ln, x)))
                .collect::<Result<_>>()?;
            // column-major; symmetric variants store the lower triangle only
            let mut it = values.into_iter();
            for j in 0..cols {
                let start = match symmetry {
                    Symmetry::General => 0,
                    Symmetry::Symmetric => j,
                    Symmetry::SkewSymmetric => j + 1,
                };
                for i in start..rows {
                    let (_, v) = it
                        .next()
                        .ok_or_else(|| parse_err(size_line, "too few array values"))?;
                    data[i * cols + j] = v;
                    match symmetry {
                        Symmetry::Symmetric => data[j * cols + i] = v,
                        Symmetry::SkewSymmetric => data[j * cols + i] = -v,
                        Symmetry::General => {}
                    }
                }
            }
            if let Some((ln, _)) = it.next() {
                return Err(parse_err(ln, "too many array values"));
            }
        }
    }
    Ok(Dense { rows, cols, data })
}

pub fn read_matrix<R: Read>(reader: R) -> Result<DenseOperator> {
    let d = read_dense(reader)?;
    if d.rows != d.cols {
        return Err(LinalgError::NotSquare {
            rows: d.rows,
            cols: d.cols,
        });
    }
    DenseOperator::new(d.rows, d.data)
}

/// Reads a one-column array (or coordinate) file as a vector.
pub fn read_vector<R: Read>(reader: R) -> Result<Vec<f64>> {
    let d = read_dense(reader)?;
    if d.cols != 1 {
        return Err(parse_err(
            0,
            format!("expected one column, found {}", d.cols),
        ));
    }
    Ok(d.data)
}

pub fn write_matrix<W: Write>(mut w: W, a: &DenseOperator) -> Result<()> {
    let n = a.dim;
    writeln!(w, "%%MatrixMarket matrix array real general")?;
    writeln!(w, "{n} {n}")?;
    for j in 0..n {
        for i in 0..n {
            writeln!(w, "{:e}", a.get(i, j))?;
        }
    }
    Ok(())
}

pub fn write_vector<W: Write>(mut w: W, v: &[f64]) -> Result<()> {
    writeln!(w, "%%MatrixMarket matrix array real general")?;
    writeln!(w, "{} 1", v.len())?;
    for x in v {
        writeln!(w, "{x:e}")?;
    }
    Ok(())
}

pub fn load_matrix(path: impl AsRef<Path>) -> Result<DenseOperator> {
    read_matrix(std::fs::File::open(path)?)
}

pub fn load_vector(path: impl AsRef<Path>) -> Result<Vec<f64>> {
    read_vector(std::fs::File::open(path)?)
}

pub fn save_matrix(path: impl AsRef<Path>, a: &DenseOperator) -> Result<()> {
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    write_matrix(&mut w, a)?;
    w.flush()?;
    Ok(())
}

pub fn save_vector(path: impl AsRef<Path>, v: &[f64]) -> Result<()> {
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    write_vector(&mut w, v)?;
    w.flush()?;
    Ok(())
}
