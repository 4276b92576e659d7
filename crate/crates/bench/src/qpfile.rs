//! Line-based text format for the three QP types.
//!
//! ```text
//! mpcqp-qp 1
//! kind ocp
//! horizon 2
//! nx 2 2 2
//! nu 1 1 0
//! nb 1 0 0
//! ng 0 0 0
//! ns 0 0 0
//! stage 0
//! R mat 1 1
//! 1
//! r vec 1 0.5
//! idxb idx 1 0
//! A mat 2 2
//! ...
//! ```
//!
//! Dense QPs use `kind dense`, a single `dim nv ne nb ng ns` line and one
//! `stage 0` section with the dense field names. Tree QPs use `kind tree`,
//! a `parent` line (`-` for the root) and one section per node. Every field
//! is written as `name mat rows cols` followed by one line per row (none
//! when `cols` is zero), or as
//! `name vec|idx len values…` on a single line. Numbers use the shortest
//! representation that parses back to the same value.

use std::fmt::Write as _;
use std::path::Path;

use mpcqp::linalg::Mat;
use mpcqp::qp_data::{
    DenseQp, DenseQpDim, FieldValue, OcpQp, OcpQpDim, QpError, TreeOcpQp, TreeOcpQpDim, DENSE_FIELDS,
    OCP_DYNAMICS_FIELDS, STAGE_FIELDS,
};
use thiserror::Error;

pub const FORMAT_VERSION: u32 = 1;
const MAGIC: &str = "mpcqp-qp";

#[derive(Debug, Error)]
pub enum QpFileError {
    #[error("line {line}: {message}")]
    ParseError { line: usize, message: String },
    #[error("unsupported format version {found} (expected {FORMAT_VERSION})")]
    VersionMismatch { found: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Clone, Debug, PartialEq)]
pub enum AnyQp {
    Dense(DenseQp),
    Ocp(OcpQp),
    Tree(TreeOcpQp),
}

impl AnyQp {
    pub fn kind(&self) -> &'static str {
        match self {
            AnyQp::Dense(_) => "dense",
            AnyQp::Ocp(_) => "ocp",
            AnyQp::Tree(_) => "tree",
        }
    }
}

fn join<T: ToString>(v: &[T]) -> String {
    v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(" ")
}

fn write_field(out: &mut String, name: &str, value: &FieldValue) {
    match value {
        FieldValue::Mat(m) => {
            let _ = writeln!(out, "{} mat {} {}", name, m.rows(), m.cols());
            for i in (0..m.rows()).filter(|_| m.cols() > 0) {
                let row: Vec<f64> = (0..m.cols()).map(|j| m[(i, j)]).collect();
                let _ = writeln!(out, "{}", join(&row));
            }
        }
        FieldValue::Vec(v) => {
            let _ = writeln!(out, "{} vec {} {}", name, v.len(), join(v));
        }
        FieldValue::Idx(v) => {
            let _ = writeln!(out, "{} idx {} {}", name, v.len(), join(v));
        }
    }
}

/// Serializes a QP; every catalog field is written.
pub fn to_text(qp: &AnyQp) -> String {
    let mut out = format!("{} {}\nkind {}\n", MAGIC, FORMAT_VERSION, qp.kind());
    let stage_fields = |out: &mut String, get: &dyn Fn(&str) -> Result<FieldValue, QpError>, dynamics: bool| {
        for (name, _) in STAGE_FIELDS {
            write_field(out, name, &get(name).expect("catalog field"));
        }
        if dynamics {
            for (name, _) in OCP_DYNAMICS_FIELDS {
                write_field(out, name, &get(name).expect("catalog field"));
            }
        }
    };
    match qp {
        AnyQp::Dense(q) => {
            let d = q.dim();
            let _ = writeln!(out, "dim {} {} {} {} {}", d.nv, d.ne, d.nb, d.ng, d.ns);
            out.push_str("stage 0\n");
            for (name, _) in DENSE_FIELDS {
                write_field(&mut out, name, &q.get_field(name).expect("catalog field"));
            }
        }
        AnyQp::Ocp(q) => {
            let d = q.dim();
            let _ = writeln!(out, "horizon {}", d.n);
            for (key, v) in [("nx", &d.nx), ("nu", &d.nu), ("nb", &d.nb), ("ng", &d.ng), ("ns", &d.ns)] {
                let _ = writeln!(out, "{} {}", key, join(v));
            }
            for k in 0..=d.n {
                let _ = writeln!(out, "stage {}", k);
                stage_fields(&mut out, &|name| q.get_field(name, k), k < d.n);
            }
        }
        AnyQp::Tree(q) => {
            let d = q.dim();
            let parents: Vec<String> = d.parent.iter().map(|p| p.map_or("-".into(), |p| p.to_string())).collect();
            let _ = writeln!(out, "parent {}", parents.join(" "));
            for (key, v) in [("nx", &d.nx), ("nu", &d.nu), ("nb", &d.nb), ("ng", &d.ng), ("ns", &d.ns)] {
                let _ = writeln!(out, "{} {}", key, join(v));
            }
            for m in 0..d.num_nodes() {
                let _ = writeln!(out, "node {}", m);
                stage_fields(&mut out, &|name| q.get_field(name, m), m > 0);
            }
        }
    }
    out
}

pub fn qp_write(path: impl AsRef<Path>, qp: &AnyQp) -> Result<(), QpFileError> {
    std::fs::write(path, to_text(qp))?;
    Ok(())
}

pub fn qp_read(path: impl AsRef<Path>) -> Result<AnyQp, QpFileError> {
    from_text(&std::fs::read_to_string(path)?)
}

struct Lines<'a> {
    it: std::iter::Peekable<std::iter::Enumerate<std::str::Lines<'a>>>,
    last: usize,
}

impl<'a> Lines<'a> {
    fn new(s: &'a str) -> Self {
        Self { it: s.lines().enumerate().peekable(), last: 0 }
    }

    fn err<T>(&self, line: usize, message: impl Into<String>) -> Result<T, QpFileError> {
        Err(QpFileError::ParseError { line, message: message.into() })
    }

    /// Next non-empty line as `(line number, tokens)`.
    fn next(&mut self) -> Result<(usize, Vec<&'a str>), QpFileError> {
        for (i, l) in self.it.by_ref() {
            self.last = i + 1;
            let toks: Vec<&str> = l.split_whitespace().collect();
            if !toks.is_empty() {
                return Ok((i + 1, toks));
            }
        }
        self.err(self.last + 1, "unexpected end of file")
    }

    fn at_end(&mut self) -> bool {
        while let Some((_, l)) = self.it.peek() {
            if !l.trim().is_empty() {
                return false;
            }
            self.it.next();
        }
        true
    }

    fn keyed(&mut self, key: &str) -> Result<(usize, Vec<&'a str>), QpFileError> {
        let (n, toks) = self.next()?;
        if toks[0] != key {
            return self.err(n, format!("expected `{}`, found `{}`", key, toks[0]));
        }
        Ok((n, toks[1..].to_vec()))
    }

    fn usizes(&mut self, key: &str, len: Option<usize>) -> Result<Vec<usize>, QpFileError> {
        let (n, toks) = self.keyed(key)?;
        let v = parse_all::<usize>(n, &toks)?;
        if let Some(len) = len {
            if v.len() != len {
                return self.err(n, format!("`{}` needs {} entries, found {}", key, len, v.len()));
            }
        }
        Ok(v)
    }
}

fn parse_all<T: std::str::FromStr>(line: usize, toks: &[&str]) -> Result<Vec<T>, QpFileError> {
    toks.iter()
        .map(|t| t.parse::<T>().map_err(|_| QpFileError::ParseError { line, message: format!("invalid number `{}`", t) }))
        .collect()
}

/// Reads one `name kind …` field.
fn read_field(lines: &mut Lines) -> Result<(usize, String, FieldValue), QpFileError> {
    let (n, toks) = lines.next()?;
    if toks.len() < 3 {
        return lines.err(n, "malformed field header");
    }
    let name = toks[0].to_string();
    let len = parse_all::<usize>(n, &toks[2..3])?[0];
    let value = match toks[1] {
        "mat" => {
            if toks.len() != 4 {
                return lines.err(n, format!("field `{}`: expected `mat rows cols`", name));
            }
            let cols = parse_all::<usize>(n, &toks[3..4])?[0];
            let mut m = Mat::zeros(len, cols);
            for i in (0..len).filter(|_| cols > 0) {
                let (rn, row) = lines.next()?;
                let vals = parse_all::<f64>(rn, &row)?;
                if vals.len() != cols {
                    return lines.err(rn, format!("field `{}`: row needs {} entries, found {}", name, cols, vals.len()));
                }
                for (j, v) in vals.into_iter().enumerate() {
                    m[(i, j)] = v;
                }
            }
            FieldValue::Mat(m)
        }
        "vec" | "idx" => {
            let rest = &toks[3..];
            if rest.len() != len {
                return lines.err(n, format!("field `{}` needs {} entries, found {}", name, len, rest.len()));
            }
            if toks[1] == "vec" {
                FieldValue::Vec(parse_all::<f64>(n, rest)?)
            } else {
                FieldValue::Idx(parse_all::<usize>(n, rest)?)
            }
        }
        other => return lines.err(n, format!("field `{}`: unknown kind `{}`", name, other)),
    };
    Ok((n, name, value))
}

fn field_error(line: usize, e: QpError) -> QpFileError {
    let message = match e {
        QpError::UnknownField(f) => format!("unknown field `{}`", f),
        other => other.to_string(),
    };
    QpFileError::ParseError { line, message }
}

/// Reads the fields of one section until the next section header or the end.
fn read_section(
    lines: &mut Lines,
    header: &str,
    mut set: impl FnMut(&str, FieldValue) -> Result<(), QpError>,
) -> Result<(), QpFileError> {
    loop {
        if lines.at_end() {
            return Ok(());
        }
        if let Some((_, l)) = lines.it.peek() {
            if l.split_whitespace().next() == Some(header) {
                return Ok(());
            }
        }
        let (n, name, value) = read_field(lines)?;
        set(&name, value).map_err(|e| field_error(n, e))?;
    }
}

fn section_index(lines: &mut Lines, header: &str, expected: usize) -> Result<(), QpFileError> {
    let (n, toks) = lines.keyed(header)?;
    let k = parse_all::<usize>(n, &toks)?;
    if k != [expected] {
        return lines.err(n, format!("expected `{} {}`", header, expected));
    }
    Ok(())
}

pub fn from_text(text: &str) -> Result<AnyQp, QpFileError> {
    let mut lines = Lines::new(text);
    let (n, toks) = lines.next()?;
    if toks[0] != MAGIC || toks.len() != 2 {
        return lines.err(n, format!("missing `{} <version>` header", MAGIC));
    }
    if toks[1] != FORMAT_VERSION.to_string() {
        return Err(QpFileError::VersionMismatch { found: toks[1].to_string() });
    }
    let (n, kind) = lines.keyed("kind")?;
    let create_err = |n: usize, e: QpError| QpFileError::ParseError { line: n, message: e.to_string() };
    let qp = match kind.first().copied() {
        Some("dense") => {
            let (n, d) = lines.keyed("dim")?;
            let d = parse_all::<usize>(n, &d)?;
            if d.len() != 5 {
                return lines.err(n, "`dim` needs nv ne nb ng ns");
            }
            let mut qp = DenseQp::create(&DenseQpDim::new(d[0], d[1], d[2], d[3], d[4])).map_err(|e| create_err(n, e))?;
            section_index(&mut lines, "stage", 0)?;
            read_section(&mut lines, "stage", |name, v| qp.set_field(name, v))?;
            AnyQp::Dense(qp)
        }
        Some("ocp") => {
            let (hn, h) = lines.keyed("horizon")?;
            let h = parse_all::<usize>(hn, &h)?;
            if h.len() != 1 {
                return lines.err(hn, "`horizon` needs one value");
            }
            let k = h[0] + 1;
            let nx = lines.usizes("nx", Some(k))?;
            let nu = lines.usizes("nu", Some(k))?;
            let nb = lines.usizes("nb", Some(k))?;
            let ng = lines.usizes("ng", Some(k))?;
            let ns = lines.usizes("ns", Some(k))?;
            let mut qp = OcpQp::create(&OcpQpDim::new(h[0], nx, nu, nb, ng, ns)).map_err(|e| create_err(hn, e))?;
            for s in 0..k {
                section_index(&mut lines, "stage", s)?;
                read_section(&mut lines, "stage", |name, v| qp.set_field(name, s, v))?;
            }
            AnyQp::Ocp(qp)
        }
        Some("tree") => {
            let (pn, p) = lines.keyed("parent")?;
            let parent = p
                .iter()
                .map(|t| if *t == "-" { Ok(None) } else { parse_all::<usize>(pn, &[t]).map(|v| Some(v[0])) })
                .collect::<Result<Vec<_>, _>>()?;
            let k = parent.len();
            let nx = lines.usizes("nx", Some(k))?;
            let nu = lines.usizes("nu", Some(k))?;
            let nb = lines.usizes("nb", Some(k))?;
            let ng = lines.usizes("ng", Some(k))?;
            let ns = lines.usizes("ns", Some(k))?;
            let dim = TreeOcpQpDim::new(parent, nx, nu, nb, ng, ns);
            let mut qp = TreeOcpQp::create(&dim).map_err(|e| create_err(pn, e))?;
            for m in 0..k {
                section_index(&mut lines, "node", m)?;
                read_section(&mut lines, "node", |name, v| qp.set_field(name, m, v))?;
            }
            AnyQp::Tree(qp)
        }
        _ => return lines.err(n, "kind must be dense, ocp or tree"),
    };
    if !lines.at_end() {
        let (n, _) = lines.next()?;
        return lines.err(n, "trailing content");
    }
    Ok(qp)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mass_spring::{gen_mass_spring, MassSpringConfig};
    use mpcqp::testgen::{self, OcpGen};

    fn fields_equal(a: &AnyQp, b: &AnyQp) -> bool {
        let same = |x: FieldValue, y: FieldValue| x.kind() == y.kind() && format!("{:?}", x) == format!("{:?}", y);
        match (a, b) {
            (AnyQp::Ocp(a), AnyQp::Ocp(b)) => (0..=a.horizon()).all(|k| {
                STAGE_FIELDS.iter().all(|(f, _)| same(a.get_field(f, k).unwrap(), b.get_field(f, k).unwrap()))
            }),
            (AnyQp::Dense(a), AnyQp::Dense(b)) => {
                DENSE_FIELDS.iter().all(|(f, _)| same(a.get_field(f).unwrap(), b.get_field(f).unwrap()))
            }
            _ => false,
        }
    }

    #[test]
    fn mass_spring_round_trip() {
        let qp = AnyQp::Ocp(gen_mass_spring(&MassSpringConfig::new(2, 10)).unwrap());
        let back = from_text(&to_text(&qp)).unwrap();
        assert!(fields_equal(&qp, &back));
        assert_eq!(qp, back);
    }

    #[test]
    fn random_round_trips_are_exact() {
        let mut rng = testgen::rng(7);
        let dense = AnyQp::Dense(testgen::random_dense_qp(&mut rng, 5, 2, 3, 2, 2));
        let ocp = AnyQp::Ocp(testgen::random_ocp_qp(&mut rng, &OcpGen::new(3, 3, 2).boxes(1, 2).general(1).soft(2)));
        let parent = TreeOcpQpDim::scenario_parents(3, 1, 2);
        let tree = AnyQp::Tree(testgen::random_tree_qp(&mut rng, &parent, &OcpGen::new(3, 2, 1).boxes(1, 1).soft(1)));
        for qp in [dense, ocp, tree] {
            let text = to_text(&qp);
            let back = from_text(&text).unwrap();
            assert_eq!(qp, back, "{}", qp.kind());
            assert_eq!(to_text(&back), text);
        }
    }

    #[test]
    fn truncated_file() {
        let text = to_text(&AnyQp::Ocp(gen_mass_spring(&MassSpringConfig::new(2, 2)).unwrap()));
        let cut: String = text.lines().take(20).collect::<Vec<_>>().join("\n");
        assert!(matches!(from_text(&cut), Err(QpFileError::ParseError { .. })));
        let half = &text[..text.len() / 2];
        assert!(matches!(from_text(half), Err(QpFileError::ParseError { .. })));
    }

    #[test]
    fn unknown_field_is_named() {
        let text = to_text(&AnyQp::Ocp(gen_mass_spring(&MassSpringConfig::new(2, 1)).unwrap()));
        let bad = text.replacen("\nr vec", "\nbogus vec", 1);
        match from_text(&bad) {
            Err(QpFileError::ParseError { line, message }) => {
                assert!(message.contains("bogus"), "{}", message);
                assert_eq!(bad.lines().nth(line - 1).unwrap().split_whitespace().next(), Some("bogus"));
            }
            other => panic!("unexpected {:?}", other),
        }
    }

    #[test]
    fn version_mismatch() {
        let text = to_text(&AnyQp::Ocp(gen_mass_spring(&MassSpringConfig::new(2, 1)).unwrap()));
        let bad = text.replacen("mpcqp-qp 1", "mpcqp-qp 9", 1);
        assert!(matches!(from_text(&bad), Err(QpFileError::VersionMismatch { .. })));
    }

    #[test]
    fn bad_number_reports_line() {
        let text = to_text(&AnyQp::Ocp(gen_mass_spring(&MassSpringConfig::new(2, 1)).unwrap()));
        let bad = text.replacen("lb vec 5 -0.5", "lb vec 5 x", 1);
        assert!(matches!(from_text(&bad), Err(QpFileError::ParseError { message, .. }) if message.contains("`x`")));
    }
}
