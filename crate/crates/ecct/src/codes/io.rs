//! PCM file ingestion and export: the standard sparse `alist` format and
//! plain whitespace-separated `dense01` rows. Round trips are bit-exact.

use super::CodesError;
use crate::gf2::BitMatrix;
use std::path::Path;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PcmFormat {
    Alist,
    Dense01,
}

impl std::str::FromStr for PcmFormat {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "alist" => Ok(PcmFormat::Alist),
            "dense01" => Ok(PcmFormat::Dense01),
            other => Err(format!("unknown PCM format {other:?} (alist | dense01)")),
        }
    }
}

pub fn load_pcm(path: &Path, format: PcmFormat) -> Result<BitMatrix, CodesError> {
    let text = std::fs::read_to_string(path)?;
    match format {
        PcmFormat::Alist => parse_alist(&text),
        PcmFormat::Dense01 => parse_dense01(&text),
    }
}

pub fn save_pcm(path: &Path, format: PcmFormat, m: &BitMatrix) -> Result<(), CodesError> {
    let text = match format {
        PcmFormat::Alist => format_alist(m),
        PcmFormat::Dense01 => format_dense01(m),
    };
    std::fs::write(path, text)?;
    Ok(())
}

/// Whitespace-separated 0/1 rows, one matrix row per line.
pub fn parse_dense01(text: &str) -> Result<BitMatrix, CodesError> {
    let mut rows: Vec<Vec<u8>> = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let mut row = Vec::new();
        for tok in line.split_whitespace() {
            match tok {
                "0" => row.push(0),
                "1" => row.push(1),
                other => {
                    return Err(CodesError::ParseError {
                        line: lineno + 1,
                        reason: format!("expected 0 or 1, found {other:?}"),
                    })
                }
            }
        }
        if let Some(first) = rows.first() {
            if row.len() != first.len() {
                return Err(CodesError::ParseError {
                    line: lineno + 1,
                    reason: format!("row has {} entries, expected {}", row.len(), first.len()),
                });
            }
        }
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(CodesError::ParseError { line: 1, reason: "empty matrix".into() });
    }
    Ok(BitMatrix::from_rows(&rows))
}

pub fn format_dense01(m: &BitMatrix) -> String {
    let mut out = String::new();
    for r in 0..m.rows() {
        let row: Vec<String> = (0..m.cols()).map(|c| m.get(r, c).to_string()).collect();
        out.push_str(&row.join(" "));
        out.push('\n');
    }
    out
}

struct TokenStream<'a> {
    tokens: Vec<(usize, &'a str)>, // (line number, token)
    pos: usize,
}

impl<'a> TokenStream<'a> {
    fn new(text: &'a str) -> Self {
        let mut tokens = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            for tok in line.split_whitespace() {
                tokens.push((lineno + 1, tok));
            }
        }
        TokenStream { tokens, pos: 0 }
    }

    fn next_usize(&mut self, what: &str) -> Result<(usize, usize), CodesError> {
        let Some(&(line, tok)) = self.tokens.get(self.pos) else {
            return Err(CodesError::ParseError {
                line: self.tokens.last().map_or(1, |t| t.0),
                reason: format!("unexpected end of file while reading {what}"),
            });
        };
        self.pos += 1;
        let v = tok.parse::<usize>().map_err(|_| CodesError::ParseError {
            line,
            reason: format!("expected integer for {what}, found {tok:?}"),
        })?;
        Ok((line, v))
    }
}

/// Standard alist layout: `n m`, max column/row degrees, per-column degrees,
/// per-row degrees, then 1-based index lists padded with zeros to the
/// respective max degree.
pub fn parse_alist(text: &str) -> Result<BitMatrix, CodesError> {
    let mut ts = TokenStream::new(text);
    let (_, n) = ts.next_usize("column count n")?;
    let (_, m) = ts.next_usize("row count m")?;
    if n == 0 || m == 0 {
        return Err(CodesError::ParseError { line: 1, reason: "zero-sized matrix".into() });
    }
    let (_, max_col_deg) = ts.next_usize("max column degree")?;
    let (_, max_row_deg) = ts.next_usize("max row degree")?;

    let mut col_degs = Vec::with_capacity(n);
    for j in 0..n {
        let (line, d) = ts.next_usize(&format!("degree of column {}", j + 1))?;
        if d > max_col_deg {
            return Err(CodesError::InconsistentDegrees(format!(
                "column {} degree {} exceeds declared maximum {} (line {})",
                j + 1,
                d,
                max_col_deg,
                line
            )));
        }
        col_degs.push(d);
    }
    let mut row_degs = Vec::with_capacity(m);
    for i in 0..m {
        let (line, d) = ts.next_usize(&format!("degree of row {}", i + 1))?;
        if d > max_row_deg {
            return Err(CodesError::InconsistentDegrees(format!(
                "row {} degree {} exceeds declared maximum {} (line {})",
                i + 1,
                d,
                max_row_deg,
                line
            )));
        }
        row_degs.push(d);
    }

    let mut mat = BitMatrix::zeros(m, n);
    for j in 0..n {
        let mut seen = 0usize;
        for slot in 0..max_col_deg {
            let (line, v) = ts.next_usize(&format!("column {} entry", j + 1))?;
            if v == 0 {
                continue; // padding
            }
            if v > m {
                return Err(CodesError::ParseError {
                    line,
                    reason: format!("column {} references row {} > m = {}", j + 1, v, m),
                });
            }
            if slot >= col_degs[j] {
                return Err(CodesError::InconsistentDegrees(format!(
                    "column {} has more than {} entries",
                    j + 1,
                    col_degs[j]
                )));
            }
            mat.set(v - 1, j, 1);
            seen += 1;
        }
        if seen != col_degs[j] {
            return Err(CodesError::InconsistentDegrees(format!(
                "column {} lists {} entries, degree says {}",
                j + 1,
                seen,
                col_degs[j]
            )));
        }
    }
    // Row lists must agree with the column lists.
    for i in 0..m {
        let mut listed = vec![false; n];
        for _ in 0..max_row_deg {
            let (line, v) = ts.next_usize(&format!("row {} entry", i + 1))?;
            if v == 0 {
                continue;
            }
            if v > n {
                return Err(CodesError::ParseError {
                    line,
                    reason: format!("row {} references column {} > n = {}", i + 1, v, n),
                });
            }
            listed[v - 1] = true;
        }
        for j in 0..n {
            if listed[j] != (mat.get(i, j) == 1) {
                return Err(CodesError::InconsistentDegrees(format!(
                    "row {} and column {} lists disagree",
                    i + 1,
                    j + 1
                )));
            }
        }
        if listed.iter().filter(|&&b| b).count() != row_degs[i] {
            return Err(CodesError::InconsistentDegrees(format!(
                "row {} degree mismatch",
                i + 1
            )));
        }
    }
    Ok(mat)
}

pub fn format_alist(mat: &BitMatrix) -> String {
    let (m, n) = (mat.rows(), mat.cols());
    let col_supports: Vec<Vec<usize>> = (0..n)
        .map(|j| (0..m).filter(|&i| mat.get(i, j) == 1).collect())
        .collect();
    let row_supports: Vec<Vec<usize>> = (0..m).map(|i| mat.row_support(i)).collect();
    let max_col = col_supports.iter().map(Vec::len).max().unwrap_or(0);
    let max_row = row_supports.iter().map(Vec::len).max().unwrap_or(0);

    let join = |v: &[String]| v.join(" ");
    let mut out = String::new();
    out.push_str(&format!("{n} {m}\n{max_col} {max_row}\n"));
    out.push_str(&join(
        &col_supports.iter().map(|s| s.len().to_string()).collect::<Vec<_>>(),
    ));
    out.push('\n');
    out.push_str(&join(
        &row_supports.iter().map(|s| s.len().to_string()).collect::<Vec<_>>(),
    ));
    out.push('\n');
    for s in &col_supports {
        let mut toks: Vec<String> = s.iter().map(|i| (i + 1).to_string()).collect();
        toks.resize(max_col, "0".to_string());
        out.push_str(&join(&toks));
        out.push('\n');
    }
    for s in &row_supports {
        let mut toks: Vec<String> = s.iter().map(|j| (j + 1).to_string()).collect();
        toks.resize(max_row, "0".to_string());
        out.push_str(&join(&toks));
        out.push('\n');
    }
    out
}
