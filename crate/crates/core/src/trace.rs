//! Per-iteration chain summaries and their CSV form.

use std::io::{self, Write};

/// One iteration's scalars.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceRow {
    pub iter: usize,
    pub k: usize,
    pub gamma0: f64,
    pub c: f64,
    pub r_dot: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ChainTrace {
    rows: Vec<TraceRow>,
}

pub const TRACE_CSV_HEADER: &str = "iter,K_J,gamma0,c,r_dot";

impl ChainTrace {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, row: TraceRow) {
        self.rows.push(row);
    }

    pub fn rows(&self) -> &[TraceRow] {
        &self.rows
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn last(&self) -> Option<&TraceRow> {
        self.rows.last()
    }

    pub fn k_values(&self) -> Vec<f64> {
        self.rows.iter().map(|r| r.k as f64).collect()
    }

    /// Writes `# `-prefixed comment lines, the header, then one row per
    /// iteration. Floats use the shortest representation that round-trips.
    pub fn write_csv<W: Write>(&self, mut w: W, comments: &[String]) -> io::Result<()> {
        for c in comments {
            writeln!(w, "# {c}")?;
        }
        writeln!(w, "{TRACE_CSV_HEADER}")?;
        for r in &self.rows {
            writeln!(w, "{},{},{},{},{}", r.iter, r.k, r.gamma0, r.c, r.r_dot)?;
        }
        Ok(())
    }
}
