//! The `MRF-TXT v1` line format.
//!
//! ```text
//! mrf <n> <edge count>
//! node <i> <|D_i|> <psi_i values>
//! edge <i> <j> <row-major psi_ij values>
//! ```

use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use super::MarkovRandomField;
use crate::error::{Error, Result};
use crate::scalar::Real;

pub fn write_mrf_txt<T: Real, W: Write>(mrf: &MarkovRandomField<T>, mut out: W) -> Result<()> {
    writeln!(out, "mrf {} {}", mrf.node_count(), mrf.edge_count())?;
    for i in 0..mrf.node_count() {
        write!(out, "node {} {}", i, mrf.domain(i))?;
        for v in mrf.node_factor(i) {
            write!(out, " {v}")?;
        }
        writeln!(out)?;
    }
    for (e, &(i, j)) in mrf.edges().iter().enumerate() {
        write!(out, "edge {i} {j}")?;
        for v in mrf.edge_factor(e) {
            write!(out, " {v}")?;
        }
        writeln!(out)?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_mrf_txt<T: Real>(path: impl AsRef<Path>) -> Result<MarkovRandomField<T>> {
    let file = std::fs::File::open(path)?;
    parse_mrf_txt(BufReader::new(file))
}

fn parse_err(line: usize, msg: impl Into<String>) -> Error {
    Error::Parse { line, msg: msg.into() }
}

fn field<F: std::str::FromStr>(tok: Option<&str>, line: usize, what: &str) -> Result<F> {
    let tok = tok.ok_or_else(|| parse_err(line, format!("missing {what}")))?;
    tok.parse()
        .map_err(|_| parse_err(line, format!("invalid {what} `{tok}`")))
}

pub fn parse_mrf_txt<T: Real, R: BufRead>(input: R) -> Result<MarkovRandomField<T>> {
    let mut lines = input
        .lines()
        .enumerate()
        .map(|(k, l)| (k + 1, l))
        .filter(|(_, l)| !matches!(l, Ok(s) if s.trim().is_empty()));

    let (hl, header) = lines.next().ok_or_else(|| parse_err(1, "empty input"))?;
    let header = header?;
    let mut tok = header.split_whitespace();
    if tok.next() != Some("mrf") {
        return Err(parse_err(hl, "expected `mrf <n> <edges>` header"));
    }
    let n: usize = field(tok.next(), hl, "node count")?;
    let m: usize = field(tok.next(), hl, "edge count")?;
    if tok.next().is_some() {
        return Err(parse_err(hl, "trailing tokens in header"));
    }

    let mut domains = vec![0usize; n];
    let mut node_factors: Vec<Option<Vec<T>>> = vec![None; n];
    for _ in 0..n {
        let (ln, line) = lines
            .next()
            .ok_or_else(|| parse_err(hl, format!("expected {n} node lines")))?;
        let line = line?;
        let mut tok = line.split_whitespace();
        if tok.next() != Some("node") {
            return Err(parse_err(ln, "expected `node` line"));
        }
        let i: usize = field(tok.next(), ln, "node index")?;
        let d: usize = field(tok.next(), ln, "domain size")?;
        if i >= n {
            return Err(parse_err(ln, format!("node index {i} out of range")));
        }
        if node_factors[i].is_some() {
            return Err(parse_err(ln, format!("node {i} defined twice")));
        }
        let values = tok
            .map(|t| field::<T>(Some(t), ln, "factor value"))
            .collect::<Result<Vec<T>>>()?;
        if values.len() != d {
            return Err(parse_err(
                ln,
                format!("node {i}: {} values for domain size {d}", values.len()),
            ));
        }
        domains[i] = d;
        node_factors[i] = Some(values);
    }

    let mut edges = Vec::with_capacity(m);
    let mut edge_factors = Vec::with_capacity(m);
    for _ in 0..m {
        let (ln, line) = lines
            .next()
            .ok_or_else(|| parse_err(hl, format!("expected {m} edge lines")))?;
        let line = line?;
        let mut tok = line.split_whitespace();
        if tok.next() != Some("edge") {
            return Err(parse_err(ln, "expected `edge` line"));
        }
        let i: usize = field(tok.next(), ln, "edge endpoint")?;
        let j: usize = field(tok.next(), ln, "edge endpoint")?;
        if i >= n || j >= n {
            return Err(parse_err(ln, "edge endpoint out of range"));
        }
        let values = tok
            .map(|t| field::<T>(Some(t), ln, "factor value"))
            .collect::<Result<Vec<T>>>()?;
        if values.len() != domains[i] * domains[j] {
            return Err(parse_err(
                ln,
                format!(
                    "edge {{{i}, {j}}}: {} values for shape {}x{}",
                    values.len(),
                    domains[i],
                    domains[j]
                ),
            ));
        }
        edges.push((i, j));
        edge_factors.push(values);
    }
    if let Some((ln, _)) = lines.next() {
        return Err(parse_err(ln, "unexpected trailing content"));
    }

    let node_factors = node_factors.into_iter().map(Option::unwrap).collect();
    MarkovRandomField::new(domains, node_factors, edges, edge_factors)
}
