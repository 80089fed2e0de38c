//! Text checkpoints: `key value` header lines, then `tensor <name> <rows> <cols>` blocks whose
//! rows hold hexadecimal-float values.

use thiserror::Error;

use crate::hexfloat;
use crate::linalg::Matrix;

use super::nn::ParamStore;

pub const MAGIC: &str = "mzgraph-checkpoint 1";

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CheckpointError {
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("missing header key {0}")]
    MissingKey(String),
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Checkpoint {
    pub header: Vec<(String, String)>,
    pub params: ParamStore,
}

impl Checkpoint {
    pub fn get(&self, key: &str) -> Result<&str, CheckpointError> {
        self.header
            .iter()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v.as_str())
            .ok_or_else(|| CheckpointError::MissingKey(key.to_string()))
    }

    pub fn to_text(&self) -> String {
        let mut out = String::from(MAGIC);
        out.push('\n');
        for (k, v) in &self.header {
            out.push_str(&format!("{k} {v}\n"));
        }
        for (name, value) in self.params.names().iter().zip(self.params.values()) {
            out.push_str(&format!("tensor {name} {} {}\n", value.rows(), value.cols()));
            for r in 0..value.rows() {
                let row: Vec<String> = value.row(r).iter().map(|&v| hexfloat::format(v)).collect();
                out.push_str(&row.join(" "));
                out.push('\n');
            }
        }
        out
    }

    pub fn parse(text: &str) -> Result<Self, CheckpointError> {
        let err = |line: usize, msg: &str| CheckpointError::Parse { line: line + 1, msg: msg.to_string() };
        let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
        match lines.next() {
            Some((_, l)) if l.trim() == MAGIC => {}
            Some((i, _)) => return Err(err(i, "not a checkpoint")),
            None => return Err(err(0, "empty checkpoint")),
        }
        let mut ck = Checkpoint::default();
        let mut pending: Option<(String, usize, usize, Vec<f64>, usize)> = None;
        let flush = |p: Option<(String, usize, usize, Vec<f64>, usize)>, ck: &mut Checkpoint| -> Result<(), CheckpointError> {
            if let Some((name, rows, cols, data, start)) = p {
                if data.len() != rows * cols {
                    return Err(err(start, "tensor value count does not match its shape"));
                }
                ck.params.add(name, Matrix::from_vec(rows, cols, data));
            }
            Ok(())
        };
        for (i, line) in lines {
            let fields: Vec<&str> = line.split_whitespace().collect();
            if fields[0] == "tensor" {
                flush(pending.take(), &mut ck)?;
                if fields.len() != 4 {
                    return Err(err(i, "expected `tensor <name> <rows> <cols>`"));
                }
                let rows = fields[2].parse().map_err(|_| err(i, "bad row count"))?;
                let cols = fields[3].parse().map_err(|_| err(i, "bad column count"))?;
                pending = Some((fields[1].to_string(), rows, cols, Vec::with_capacity(rows * cols), i));
            } else if let Some((_, _, _, data, _)) = pending.as_mut() {
                for f in fields {
                    data.push(hexfloat::parse(f).ok_or_else(|| err(i, "bad float"))?);
                }
            } else {
                let (k, v) = line.trim().split_once(' ').ok_or_else(|| err(i, "expected `key value`"))?;
                ck.header.push((k.to_string(), v.trim().to_string()));
            }
        }
        flush(pending, &mut ck)?;
        Ok(ck)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bit_exact_round_trip() {
        let mut params = ParamStore::new();
        params.add("a.w", Matrix::from_rows(&[vec![0.1, -1e-300], vec![f64::MAX, 5e-324]]));
        params.add("a.b", Matrix::from_rows(&[vec![std::f64::consts::E]]));
        let ck = Checkpoint { header: vec![("T".into(), "50".into()), ("variant".into(), "chebconv".into())], params };
        let back = Checkpoint::parse(&ck.to_text()).unwrap();
        assert_eq!(back, ck);
        assert_eq!(back.get("T").unwrap(), "50");
        assert!(Checkpoint::parse("tensor x 1 1\n").is_err());
        let short = format!("{MAGIC}\ntensor x 1 2\n0x1p+0\n");
        assert!(matches!(Checkpoint::parse(&short), Err(CheckpointError::Parse { .. })));
    }
}
