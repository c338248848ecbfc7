//! Marginals file: a `marginals v1` header, then `node <i> <p_0> ... <p_{d-1}>`.

use std::io::{BufRead, Write};

use crate::error::{CliError, CliResult};

pub const HEADER: &str = "marginals v1";

pub fn write_marginals<W: Write>(marginals: &[Vec<f64>], mut out: W) -> CliResult<()> {
    writeln!(out, "{HEADER}")?;
    for (i, m) in marginals.iter().enumerate() {
        write!(out, "node {i}")?;
        for p in m {
            write!(out, " {p}")?;
        }
        writeln!(out)?;
    }
    out.flush()?;
    Ok(())
}

pub fn parse_marginals<R: BufRead>(input: R) -> CliResult<Vec<Vec<f64>>> {
    let mut out = Vec::new();
    for (k, line) in input.lines().enumerate() {
        let line = line?;
        let line = line.trim();
        let err = |msg: &str| CliError::Io(format!("marginals line {}: {msg}", k + 1));
        if line.is_empty() {
            continue;
        }
        if k == 0 {
            if line != HEADER {
                return Err(err("expected `marginals v1` header"));
            }
            continue;
        }
        let mut tok = line.split_whitespace();
        if tok.next() != Some("node") {
            return Err(err("expected `node <i> <probabilities>`"));
        }
        let i: usize = tok
            .next()
            .and_then(|t| t.parse().ok())
            .ok_or_else(|| err("invalid node index"))?;
        if i != out.len() {
            return Err(err("node indices must be consecutive from 0"));
        }
        let probs = tok
            .map(|t| t.parse::<f64>().map_err(|_| err("invalid probability")))
            .collect::<CliResult<Vec<f64>>>()?;
        out.push(probs);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip() {
        let m = vec![vec![0.25, 0.75], vec![1.0], vec![0.1, 0.2, 0.7]];
        let mut buf = Vec::new();
        write_marginals(&m, &mut buf).unwrap();
        assert_eq!(parse_marginals(&buf[..]).unwrap(), m);
    }

    #[test]
    fn rejects_gaps() {
        let text = "marginals v1\nnode 1 0.5 0.5\n";
        assert!(parse_marginals(text.as_bytes()).is_err());
    }
}
