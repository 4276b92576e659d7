//! Versioned text reports of a solve.
//!
//! The header block holds one `key value` pair per line; vectors are written
//! as `key len values…`. An optional `trace` table with one row per iteration
//! follows. Numbers use the shortest representation that parses back to the
//! same value, so two identical runs produce byte-identical reports.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use mpcqp::solver::SolveReport;
use thiserror::Error;

pub const REPORT_VERSION: u32 = 1;
const MAGIC: &str = "mpcqp-report";

pub const TRACE_COLUMNS: [&str; 12] = [
    "iter", "mu", "sigma", "alpha_aff", "alpha", "res_g", "res_b", "res_d", "res_m", "corrector", "qr", "itref",
];

#[derive(Debug, Error, PartialEq)]
pub enum ReportError {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("unsupported report version {found} (expected {REPORT_VERSION})")]
    VersionMismatch { found: String },
}

/// Context of a solve that is not part of the solver output.
#[derive(Clone, Debug, PartialEq)]
pub struct ReportMeta {
    pub kind: String,
    pub mode: String,
    pub path: String,
    pub objective: f64,
}

fn push_vec(out: &mut String, key: &str, v: &[f64]) {
    write!(out, "{} {}", key, v.len()).unwrap();
    for x in v {
        write!(out, " {:e}", x).unwrap();
    }
    out.push('\n');
}

pub fn render(meta: &ReportMeta, rep: &SolveReport, trace: bool) -> String {
    let mut out = String::new();
    let st = &rep.stats;
    writeln!(out, "{} {}", MAGIC, REPORT_VERSION).unwrap();
    writeln!(out, "kind {}", meta.kind).unwrap();
    writeln!(out, "mode {}", meta.mode).unwrap();
    writeln!(out, "path {}", meta.path).unwrap();
    writeln!(out, "status {}", st.status.name()).unwrap();
    writeln!(out, "exit_code {}", st.status.exit_code()).unwrap();
    writeln!(out, "iterations {}", st.iterations).unwrap();
    for (k, v) in [
        ("res_g", rep.residuals.res_g),
        ("res_b", rep.residuals.res_b),
        ("res_d", rep.residuals.res_d),
        ("res_m", rep.residuals.res_m),
        ("mu", rep.residuals.mu),
        ("objective", meta.objective),
    ] {
        writeln!(out, "{} {:e}", k, v).unwrap();
    }
    push_vec(&mut out, "y", &rep.solution.y);
    push_vec(&mut out, "pi", &rep.solution.pi);
    push_vec(&mut out, "lam", &rep.solution.lam);
    push_vec(&mut out, "t", &rep.solution.t);
    if trace {
        writeln!(out, "trace {}", st.trace.len()).unwrap();
        out.push_str(&TRACE_COLUMNS.join("\t"));
        out.push('\n');
        for (i, s) in st.trace.iter().enumerate() {
            writeln!(
                out,
                "{}\t{:e}\t{:e}\t{:e}\t{:e}\t{:e}\t{:e}\t{:e}\t{:e}\t{}\t{}\t{}",
                i, s.mu, s.sigma, s.alpha_aff, s.alpha, s.res_g, s.res_b, s.res_d, s.res_m,
                s.corrector as u8, s.qr_used as u8, s.itref_steps
            )
            .unwrap();
        }
    }
    out
}

/// Header keys of a report and their raw values. The trace table, if any,
/// is returned row by row.
#[derive(Clone, Debug, PartialEq, Default)]
pub struct ParsedReport {
    pub keys: BTreeMap<String, String>,
    pub trace: Vec<Vec<String>>,
}

impl ParsedReport {
    pub fn get(&self, key: &str) -> Option<&str> {
        self.keys.get(key).map(String::as_str)
    }

    pub fn number(&self, key: &str) -> Option<f64> {
        self.get(key)?.parse().ok()
    }

    /// A `key len values…` entry; `None` if missing or malformed.
    pub fn vector(&self, key: &str) -> Option<Vec<f64>> {
        let mut it = self.get(key)?.split(' ');
        let n: usize = it.next()?.parse().ok()?;
        let v: Vec<f64> = it.map(str::parse).collect::<Result<_, _>>().ok()?;
        (v.len() == n).then_some(v)
    }
}

pub fn parse(text: &str) -> Result<ParsedReport, ReportError> {
    let err = |line: usize, message: &str| ReportError::Parse { line, message: message.into() };
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l));
    let (_, head) = lines.next().ok_or_else(|| err(1, "empty report"))?;
    match head.split_once(' ') {
        Some((MAGIC, v)) if v == REPORT_VERSION.to_string() => {}
        Some((MAGIC, v)) => return Err(ReportError::VersionMismatch { found: v.into() }),
        _ => return Err(err(1, "missing report header")),
    }
    let mut out = ParsedReport::default();
    while let Some((no, line)) = lines.next() {
        let (key, value) = line.split_once(' ').ok_or_else(|| err(no, "expected `key value`"))?;
        if key == "trace" {
            let rows: usize = value.parse().map_err(|_| err(no, "bad trace length"))?;
            let (hno, header) = lines.next().ok_or_else(|| err(no + 1, "missing trace header"))?;
            if header.split('\t').ne(TRACE_COLUMNS) {
                return Err(err(hno, "unexpected trace columns"));
            }
            for _ in 0..rows {
                let (rno, row) = lines.next().ok_or_else(|| err(no, "truncated trace"))?;
                let cells: Vec<String> = row.split('\t').map(str::to_owned).collect();
                if cells.len() != TRACE_COLUMNS.len() {
                    return Err(err(rno, "wrong number of trace columns"));
                }
                out.trace.push(cells);
            }
            continue;
        }
        if out.keys.insert(key.to_owned(), value.to_owned()).is_some() {
            return Err(err(no, &format!("duplicate key `{}`", key)));
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use mpcqp::ipm_core::{IpmArg, Mode};
    use mpcqp::qp_data::objective;

    fn sample(trace: bool) -> String {
        let mut rng = mpcqp::testgen::rng(11);
        let qp = mpcqp::testgen::random_dense_qp(&mut rng, 4, 1, 3, 0, 0);
        let rep = mpcqp::solver::solve_dense_qp(&qp, &IpmArg::new(Mode::Balance), None);
        let meta = ReportMeta {
            kind: "dense".into(),
            mode: "balance".into(),
            path: "ocp".into(),
            objective: objective(&qp, &rep.solution),
        };
        render(&meta, &rep, trace)
    }

    #[test]
    fn render_then_parse() {
        let text = sample(true);
        let p = parse(&text).unwrap();
        assert_eq!(p.get("status"), Some("Success"));
        assert_eq!(p.get("exit_code"), Some("0"));
        let iters: usize = p.get("iterations").unwrap().parse().unwrap();
        assert_eq!(p.trace.len(), iters);
        assert!(p.number("mu").unwrap() >= 0.0);
        assert_eq!(p.vector("y").unwrap().len(), 4);
        assert!(p.vector("status").is_none());
    }

    #[test]
    fn trace_is_optional() {
        let p = parse(&sample(false)).unwrap();
        assert!(p.trace.is_empty());
        assert!(p.get("objective").is_some());
    }

    #[test]
    fn rejects_other_versions_and_garbage() {
        assert!(matches!(parse("mpcqp-report 2\n"), Err(ReportError::VersionMismatch { .. })));
        assert!(matches!(parse("hello\n"), Err(ReportError::Parse { line: 1, .. })));
        assert!(matches!(parse("mpcqp-report 1\nstatus\n"), Err(ReportError::Parse { line: 2, .. })));
        assert!(matches!(parse("mpcqp-report 1\na 1\na 2\n"), Err(ReportError::Parse { line: 3, .. })));
    }
}
