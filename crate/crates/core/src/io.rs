//! Plain-text file formats and atomic writes.
//!
//! Every format here parses what it writes back to an identical value. Matrices, coarse maps and
//! schedules carry hexadecimal floats; CSV columns carry 17 significant decimal digits.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use num_complex::Complex64;
use thiserror::Error;

use crate::coarsen::{CoarseMap, ComplexMatrix, Partition};
use crate::dynamics::{Schedule, Trajectory, TrajectoryMeta};
use crate::experiment::StudyRow;
use crate::graph::Graph;
use crate::hexfloat;
use crate::linalg::Matrix;
use crate::train::EvalReport;

#[derive(Debug, Error)]
pub enum IoError {
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("{0}")]
    Invalid(String),
}

fn perr<T>(line: usize, msg: impl Into<String>) -> Result<T, IoError> {
    Err(IoError::Parse { line, msg: msg.into() })
}

/// Write through a sibling temporary file and rename it over `path`.
pub fn atomic_write(path: &Path, contents: &str) -> Result<(), IoError> {
    let wrap = |source| IoError::Io { path: path.display().to_string(), source };
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(wrap)?;
    }
    let name = path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
    let tmp = path.with_file_name(format!(".{name}.tmp{}", std::process::id()));
    fs::write(&tmp, contents).map_err(wrap)?;
    fs::rename(&tmp, path).map_err(|e| {
        let _ = fs::remove_file(&tmp);
        wrap(e)
    })
}

pub fn read_text(path: &Path) -> Result<String, IoError> {
    fs::read_to_string(path).map_err(|source| IoError::Io { path: path.display().to_string(), source })
}

/// Non-blank, non-comment lines with their 1-based numbers, split on whitespace.
fn tokens(text: &str) -> impl Iterator<Item = (usize, Vec<&str>)> {
    text.lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'))
        .map(|(i, l)| (i, l.split_whitespace().collect()))
}

fn float(line: usize, s: &str) -> Result<f64, IoError> {
    hexfloat::parse(s).map_or_else(|| perr(line, format!("bad number '{s}'")), Ok)
}

fn int<T: std::str::FromStr>(line: usize, s: &str) -> Result<T, IoError> {
    s.parse().or_else(|_| perr(line, format!("bad integer '{s}'")))
}

fn expect_len(line: usize, parts: &[&str], n: usize) -> Result<(), IoError> {
    if parts.len() == n {
        Ok(())
    } else {
        perr(line, format!("expected {n} fields, found {}", parts.len()))
    }
}

// ---------------------------------------------------------------- graphs

/// One `graph N J` block per graph followed by its `edge i j [w]` lines.
pub fn format_graphs(graphs: &[Graph]) -> String {
    let mut s = String::new();
    for g in graphs {
        let _ = writeln!(s, "graph {} {}", g.node_count(), g.topology_index());
        for (i, j, w) in g.edges() {
            match w {
                Some(w) => writeln!(s, "edge {i} {j} {}", hexfloat::format(w)),
                None => writeln!(s, "edge {i} {j}"),
            }
            .unwrap();
        }
    }
    s
}

pub fn parse_graphs(text: &str) -> Result<Vec<Graph>, IoError> {
    struct Pending {
        line: usize,
        n: usize,
        index: usize,
        edges: Vec<(usize, usize, Option<f64>)>,
    }
    fn finish(p: Pending) -> Result<Graph, IoError> {
        let weighted = p.edges.iter().filter(|e| e.2.is_some()).count();
        let g = if weighted == p.edges.len() {
            let e: Vec<_> = p.edges.iter().map(|&(i, j, w)| (i, j, w.unwrap())).collect();
            Graph::new(p.n, &e, p.index)
        } else if weighted == 0 {
            let e: Vec<_> = p.edges.iter().map(|&(i, j, _)| (i, j)).collect();
            Graph::unweighted(p.n, &e, p.index)
        } else {
            return perr(p.line, "graph mixes weighted and unweighted edges");
        };
        g.or_else(|e| perr(p.line, e.to_string()))
    }
    let mut out = Vec::new();
    let mut cur: Option<Pending> = None;
    for (line, parts) in tokens(text) {
        match parts[0] {
            "graph" => {
                expect_len(line, &parts, 3)?;
                if let Some(p) = cur.take() {
                    out.push(finish(p)?);
                }
                cur = Some(Pending { line, n: int(line, parts[1])?, index: int(line, parts[2])?, edges: Vec::new() });
            }
            "edge" => {
                let Some(p) = cur.as_mut() else { return perr(line, "edge before any graph header") };
                let w = match parts.len() {
                    3 => None,
                    4 => Some(float(line, parts[3])?),
                    _ => return perr(line, "expected 'edge i j [w]'"),
                };
                p.edges.push((int(line, parts[1])?, int(line, parts[2])?, w));
            }
            other => return perr(line, format!("unknown record '{other}'")),
        }
    }
    if let Some(p) = cur {
        out.push(finish(p)?);
    }
    Ok(out)
}

// ---------------------------------------------------------------- trajectories

/// CSV with header `t,J,s_0,...`; a leading comment carries the metadata.
pub fn format_trajectory(tr: &Trajectory) -> String {
    let mut s = String::new();
    let m = &tr.meta;
    let _ = writeln!(s, "# seed {} dt {} system {}", m.seed, hexfloat::format(m.dt), m.system_hash);
    s.push_str("t,J");
    for c in 0..tr.dim() {
        let _ = write!(s, ",s_{c}");
    }
    s.push('\n');
    for k in 0..tr.len() {
        let _ = write!(s, "{:.16e},{}", tr.times[k], tr.topo_indices[k]);
        for v in tr.states.row(k) {
            let _ = write!(s, ",{v:.16e}");
        }
        s.push('\n');
    }
    s
}

pub fn parse_trajectory(text: &str) -> Result<Trajectory, IoError> {
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l.trim())).filter(|(_, l)| !l.is_empty());
    let (line, meta_line) = lines.next().ok_or_else(|| IoError::Invalid("empty trajectory file".into()))?;
    let meta_parts: Vec<&str> = meta_line.trim_start_matches('#').split_whitespace().collect();
    if meta_parts.len() != 6 || meta_parts[0] != "seed" || meta_parts[2] != "dt" || meta_parts[4] != "system" {
        return perr(line, "expected '# seed <u64> dt <f64> system <u64>'");
    }
    let meta = TrajectoryMeta {
        seed: int(line, meta_parts[1])?,
        dt: float(line, meta_parts[3])?,
        system_hash: int(line, meta_parts[5])?,
    };
    let (line, header) = lines.next().ok_or_else(|| IoError::Invalid("missing CSV header".into()))?;
    let cols: Vec<&str> = header.split(',').collect();
    if cols.len() < 2 || cols[0] != "t" || cols[1] != "J" {
        return perr(line, "header must start with 't,J'");
    }
    let dim = cols.len() - 2;
    let (mut times, mut topo, mut data) = (Vec::new(), Vec::new(), Vec::new());
    for (line, row) in lines {
        let f: Vec<&str> = row.split(',').collect();
        if f.len() != dim + 2 {
            return perr(line, format!("expected {} columns, found {}", dim + 2, f.len()));
        }
        times.push(float(line, f[0])?);
        topo.push(int(line, f[1])?);
        for v in &f[2..] {
            data.push(float(line, v)?);
        }
    }
    let states = Matrix::from_vec(times.len(), dim, data);
    Ok(Trajectory { times, states, topo_indices: topo, meta })
}

// ---------------------------------------------------------------- schedules

pub fn format_schedule(s: &Schedule) -> String {
    let mut out = format!("schedule {} {}\n", hexfloat::format(s.total_time), hexfloat::format(s.dt));
    for &(t, j) in &s.segments {
        let _ = writeln!(out, "segment {} {j}", hexfloat::format(t));
    }
    out
}

pub fn parse_schedule(text: &str) -> Result<Schedule, IoError> {
    let mut it = tokens(text);
    let (line, head) = it.next().ok_or_else(|| IoError::Invalid("empty schedule file".into()))?;
    if head[0] != "schedule" {
        return perr(line, "expected 'schedule <total_time> <dt>'");
    }
    expect_len(line, &head, 3)?;
    let (total_time, dt) = (float(line, head[1])?, float(line, head[2])?);
    let mut segments = Vec::new();
    for (line, parts) in it {
        if parts[0] != "segment" {
            return perr(line, format!("unknown record '{}'", parts[0]));
        }
        expect_len(line, &parts, 3)?;
        segments.push((float(line, parts[1])?, int(line, parts[2])?));
    }
    Ok(Schedule { segments, total_time, dt })
}

// ---------------------------------------------------------------- matrices and coarse maps

pub fn format_matrix(name: &str, m: &Matrix) -> String {
    let mut s = format!("matrix {name} {} {}\n", m.rows(), m.cols());
    for r in 0..m.rows() {
        let row: Vec<String> = m.row(r).iter().map(|&v| hexfloat::format(v)).collect();
        s.push_str(&row.join(" "));
        s.push('\n');
    }
    s
}

/// Every `matrix name rows cols` block in order; other records are returned untouched.
fn split_matrices(text: &str) -> Result<(Vec<(String, Matrix)>, Vec<(usize, Vec<String>)>), IoError> {
    let mut mats = Vec::new();
    let mut rest = Vec::new();
    let mut it = tokens(text);
    while let Some((line, parts)) = it.next() {
        if parts[0] != "matrix" {
            rest.push((line, parts.iter().map(|s| s.to_string()).collect()));
            continue;
        }
        expect_len(line, &parts, 4)?;
        let (rows, cols): (usize, usize) = (int(line, parts[2])?, int(line, parts[3])?);
        let mut data = Vec::with_capacity(rows * cols);
        for _ in 0..rows {
            let Some((l, row)) = it.next() else { return perr(line, "matrix is missing rows") };
            if row.len() != cols {
                return perr(l, format!("expected {cols} entries, found {}", row.len()));
            }
            for v in row {
                data.push(float(l, v)?);
            }
        }
        mats.push((parts[1].to_string(), Matrix::from_vec(rows, cols, data)));
    }
    Ok((mats, rest))
}

pub fn parse_matrices(text: &str) -> Result<Vec<(String, Matrix)>, IoError> {
    let (mats, rest) = split_matrices(text)?;
    match rest.first() {
        Some((line, parts)) => perr(*line, format!("unknown record '{}'", parts[0])),
        None => Ok(mats),
    }
}

fn join<T: ToString>(v: &[T]) -> String {
    v.iter().map(T::to_string).collect::<Vec<_>>().join(" ")
}

pub fn format_coarse_map(map: &CoarseMap) -> String {
    let p = &map.partition;
    let mut s = format!("coarsemap {} {}\n", p.node_count(), p.group_count());
    let _ = writeln!(s, "node_dims {}", join(p.node_dims()));
    let _ = writeln!(s, "assignment {}", join(p.assignment()));
    let _ = writeln!(s, "resolved_dims {}", join(&map.resolved_dims));
    let _ = writeln!(s, "r {}", hexfloat::format(map.r));
    for (name, m) in [("phi", &map.phi), ("psi", &map.psi), ("phi_plus", &map.phi_plus), ("psi_plus", &map.psi_plus)] {
        s.push_str(&format_matrix(name, m));
    }
    s
}

pub fn parse_coarse_map(text: &str) -> Result<CoarseMap, IoError> {
    let (mats, rest) = split_matrices(text)?;
    let mut fields: std::collections::HashMap<String, (usize, Vec<String>)> = Default::default();
    for (line, parts) in rest {
        fields.insert(parts[0].clone(), (line, parts[1..].to_vec()));
    }
    let get = |k: &str| fields.get(k).ok_or_else(|| IoError::Invalid(format!("coarse map is missing '{k}'")));
    let ints = |k: &str| -> Result<Vec<usize>, IoError> {
        let (line, v) = get(k)?;
        v.iter().map(|s| int(*line, s)).collect()
    };
    let (hline, head) = get("coarsemap")?;
    if head.len() != 2 {
        return perr(*hline, "expected 'coarsemap <nodes> <groups>'");
    }
    let (n, groups): (usize, usize) = (int(*hline, &head[0])?, int(*hline, &head[1])?);
    let partition = Partition::new(&ints("node_dims")?, &ints("assignment")?)
        .map_err(|e| IoError::Invalid(e.to_string()))?;
    if partition.node_count() != n || partition.group_count() != groups {
        return perr(*hline, "header does not match the partition");
    }
    let resolved_dims = ints("resolved_dims")?;
    let (rline, r) = get("r")?;
    let r = float(*rline, r.first().map_or("", |s| s.as_str()))?;
    let take = |name: &str| -> Result<Matrix, IoError> {
        mats.iter()
            .position(|(n, _)| n == name)
            .map(|i| mats[i].1.clone())
            .ok_or_else(|| IoError::Invalid(format!("coarse map is missing matrix '{name}'")))
    };
    let (phi, psi, phi_plus, psi_plus) = (take("phi")?, take("psi")?, take("phi_plus")?, take("psi_plus")?);
    let nx = partition.state_dim();
    let nr: usize = resolved_dims.iter().sum();
    if resolved_dims.len() != groups
        || phi.shape() != (nx, nr)
        || phi_plus.shape() != (nr, nx)
        || psi.shape() != (nx, nx - nr)
        || psi_plus.shape() != (nx - nr, nx)
    {
        return Err(IoError::Invalid("coarse map matrix shapes are inconsistent".into()));
    }
    Ok(CoarseMap { partition, resolved_dims, phi, psi, phi_plus, psi_plus, r })
}

// ---------------------------------------------------------------- admittance

/// `admittance N` followed by `y i j re im` lines for the nonzero entries.
pub fn format_admittance(y: &ComplexMatrix) -> String {
    let mut s = format!("admittance {}\n", y.n);
    for i in 0..y.n {
        for j in 0..y.n {
            let v = y.get(i, j);
            if v != Complex64::new(0.0, 0.0) {
                let _ = writeln!(s, "y {i} {j} {} {}", hexfloat::format(v.re), hexfloat::format(v.im));
            }
        }
    }
    s
}

pub fn parse_admittance(text: &str) -> Result<ComplexMatrix, IoError> {
    let mut it = tokens(text);
    let (line, head) = it.next().ok_or_else(|| IoError::Invalid("empty admittance file".into()))?;
    if head[0] != "admittance" {
        return perr(line, "expected 'admittance <N>'");
    }
    expect_len(line, &head, 2)?;
    let n: usize = int(line, head[1])?;
    if n == 0 {
        return perr(line, "admittance matrix must have at least one bus");
    }
    let mut y = ComplexMatrix::zeros(n);
    for (line, parts) in it {
        if parts[0] != "y" {
            return perr(line, format!("unknown record '{}'", parts[0]));
        }
        expect_len(line, &parts, 5)?;
        let (i, j): (usize, usize) = (int(line, parts[1])?, int(line, parts[2])?);
        if i >= n || j >= n {
            return perr(line, format!("entry ({i}, {j}) outside a {n}-bus matrix"));
        }
        y.set(i, j, Complex64::new(float(line, parts[3])?, float(line, parts[4])?));
    }
    Ok(y)
}

// ---------------------------------------------------------------- reports and CSV tables

/// `key = value` lines.
pub fn format_report(entries: &[(String, String)]) -> String {
    entries.iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
}

pub fn parse_report(text: &str) -> Result<Vec<(String, String)>, IoError> {
    text.lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'))
        .map(|(line, l)| match l.split_once('=') {
            Some((k, v)) => Ok((k.trim().to_string(), v.trim().to_string())),
            None => perr(line, "expected 'key = value'"),
        })
        .collect()
}

pub fn eval_report_entries(report: &EvalReport) -> Vec<(String, String)> {
    let mut out = vec![
        ("mean".to_string(), format!("{:e}", report.mean)),
        ("std".to_string(), format!("{:e}", report.std)),
        ("trajectories".to_string(), report.per_trajectory.len().to_string()),
    ];
    for (i, v) in report.per_trajectory.iter().enumerate() {
        out.push((format!("nrmse.{i}"), format!("{v:e}")));
    }
    for (k, v) in &report.config {
        out.push((format!("config.{k}"), v.clone()));
    }
    out
}

pub fn parse_eval_report(text: &str) -> Result<EvalReport, IoError> {
    let entries = parse_report(text)?;
    let mut values = Vec::new();
    let mut config = Vec::new();
    for (k, v) in entries {
        if let Some(i) = k.strip_prefix("nrmse.") {
            let i: usize = int(0, i)?;
            if i != values.len() {
                return Err(IoError::Invalid(format!("nrmse entries out of order at {k}")));
            }
            values.push(float(0, &v)?);
        } else if let Some(c) = k.strip_prefix("config.") {
            config.push((c.to_string(), v));
        }
    }
    Ok(EvalReport::from_values(values, config))
}

pub const STUDY_HEADER: &str = "hops,T,d_eps,seed,nrmse";

pub fn format_study(rows: &[StudyRow]) -> String {
    let mut s = format!("{STUDY_HEADER}\n");
    for r in rows {
        let _ = writeln!(s, "{},{},{},{},{:.16e}", r.hops, r.delay, r.d_eps, r.seed, r.nrmse);
    }
    s
}

pub fn parse_study(text: &str) -> Result<Vec<StudyRow>, IoError> {
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l.trim())).filter(|(_, l)| !l.is_empty());
    match lines.next() {
        Some((_, h)) if h == STUDY_HEADER => {}
        Some((line, _)) => return perr(line, format!("expected header '{STUDY_HEADER}'")),
        None => return Err(IoError::Invalid("empty study file".into())),
    }
    lines
        .map(|(line, l)| {
            let f: Vec<&str> = l.split(',').collect();
            expect_len(line, &f, 5)?;
            let nrmse = float(line, f[4])?;
            Ok(StudyRow {
                hops: int(line, f[0])?,
                delay: int(line, f[1])?,
                d_eps: float(line, f[2])?,
                seed: int(line, f[3])?,
                nrmse,
                error: nrmse.is_nan().then(|| "run failed".to_string()),
            })
        })
        .collect()
}

/// `epoch,loss` table.
pub fn format_losses(losses: &[f64]) -> String {
    let mut s = String::from("epoch,loss\n");
    for (e, l) in losses.iter().enumerate() {
        let _ = writeln!(s, "{e},{l:.16e}");
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn graph_round_trip_and_errors() {
        let a = Graph::new(3, &[(0, 1, 0.1), (1, 0, 0.1), (2, 2, 3.0)], 4).unwrap();
        let b = Graph::unweighted(2, &[(0, 1)], 0).unwrap();
        let text = format_graphs(&[a.clone(), b.clone()]);
        assert_eq!(parse_graphs(&text).unwrap(), vec![a, b]);
        assert!(parse_graphs("graph 2 0\nedge 0 5 1.0\n").is_err());
        assert!(parse_graphs("edge 0 1 1.0\n").is_err());
        assert!(parse_graphs("graph 2 0\nedge 0 1 1.0\nedge 1 0\n").is_err());
        let decimal = parse_graphs("# comment\ngraph 2 1\nedge 0 1 0.5\n").unwrap();
        assert_eq!(decimal[0].weight(0, 1), Some(0.5));
    }

    #[test]
    fn schedule_round_trip() {
        let s = Schedule { segments: vec![(0.0, 0), (1.23, 2)], total_time: 5.0, dt: 0.01 };
        assert_eq!(parse_schedule(&format_schedule(&s)).unwrap(), s);
    }

    #[test]
    fn matrix_round_trip_is_exact() {
        let m = Matrix::from_rows(&[vec![0.1, -1.0 / 3.0], vec![f64::MIN_POSITIVE / 8.0, 1e300]]);
        let parsed = parse_matrices(&format_matrix("m", &m)).unwrap();
        assert_eq!(parsed, vec![("m".to_string(), m)]);
        assert!(parse_matrices("matrix m 2 1\n1\n").is_err());
    }

    #[test]
    fn admittance_round_trip() {
        let mut y = ComplexMatrix::zeros(2);
        y.set(0, 1, Complex64::new(0.5, -2.0));
        y.set(1, 1, Complex64::new(0.0, 1.0 / 7.0));
        assert_eq!(parse_admittance(&format_admittance(&y)).unwrap(), y);
        assert!(parse_admittance("admittance 2\ny 0 2 1 1\n").is_err());
    }

    #[test]
    fn report_round_trip() {
        let r = EvalReport::from_values(vec![0.1, 0.25, 1.0 / 3.0], vec![("T".into(), "50".into())]);
        let back = parse_eval_report(&format_report(&eval_report_entries(&r))).unwrap();
        assert_eq!(back, r);
    }

    #[test]
    fn study_round_trip() {
        let rows = vec![
            StudyRow { hops: 2, delay: 50, d_eps: 0.75, seed: 3, nrmse: 0.123456789, error: None },
            StudyRow { hops: 1, delay: 10, d_eps: 0.19, seed: 0, nrmse: f64::NAN, error: Some("run failed".into()) },
        ];
        let back = parse_study(&format_study(&rows)).unwrap();
        assert_eq!(back[0], rows[0]);
        assert!(back[1].nrmse.is_nan() && back[1].error.is_some());
    }

    #[test]
    fn atomic_write_replaces_contents() {
        let dir = std::env::temp_dir().join(format!("mzgraph-io-{}", std::process::id()));
        let path = dir.join("a.txt");
        atomic_write(&path, "one").unwrap();
        atomic_write(&path, "two").unwrap();
        assert_eq!(read_text(&path).unwrap(), "two");
        assert_eq!(fs::read_dir(&dir).unwrap().count(), 1);
        fs::remove_dir_all(dir).unwrap();
    }
}
