//! Plain-text model files.
//!
//! One `key value…` entry per line. Floats use 17 significant digits, so a
//! reload reproduces every weight exactly. Weight matrices are flattened
//! row-major (hidden: H rows of D inputs; output: O rows of H hidden units).

use std::fs;
use std::io::Write;
use std::path::Path;

use super::{MlpParams, NetError, Result, Shape, StopReason};
use crate::dataset::FeatureScaling;
use crate::fsutil::write_atomic;

const MAGIC: &str = "etpa-mlp v1";

#[derive(Debug, Clone, PartialEq)]
pub struct ModelFile {
    pub params: MlpParams,
    /// Feature scaling the network was trained under.
    pub scaling: Option<FeatureScaling>,
    pub seed: u64,
    pub epochs_run: usize,
    pub best_epoch: usize,
    pub stop_reason: StopReason,
    pub best_validation_loss: f64,
}

fn floats(out: &mut dyn Write, key: &str, values: &[f64]) -> std::io::Result<()> {
    write!(out, "{key}")?;
    for v in values {
        write!(out, " {v:.16e}")?;
    }
    writeln!(out)
}

pub fn write_model(model: &ModelFile, path: &Path) -> Result<()> {
    let p = &model.params;
    let s = p.shape();
    write_atomic(path, |out| {
        writeln!(out, "{MAGIC}")?;
        writeln!(out, "input_dim {}", s.input)?;
        writeln!(out, "hidden_dim {}", s.hidden)?;
        writeln!(out, "output_dim {}", s.output)?;
        writeln!(out, "seed {}", model.seed)?;
        writeln!(out, "epochs_run {}", model.epochs_run)?;
        writeln!(out, "best_epoch {}", model.best_epoch)?;
        writeln!(out, "stop_reason {}", model.stop_reason.as_str())?;
        writeln!(out, "best_validation_loss {:.16e}", model.best_validation_loss)?;
        if let Some(sc) = &model.scaling {
            floats(out, "scaling_min", &sc.min)?;
            floats(out, "scaling_max", &sc.max)?;
        }
        floats(out, "hidden_weights", p.hidden_weights())?;
        floats(out, "hidden_biases", p.hidden_biases())?;
        floats(out, "output_weights", p.output_weights())?;
        floats(out, "output_biases", p.output_biases())
    })?;
    Ok(())
}

struct Lines<'a> {
    iter: std::iter::Enumerate<std::str::Lines<'a>>,
    line: usize,
}

impl<'a> Lines<'a> {
    fn err(&self, reason: impl Into<String>) -> NetError {
        NetError::ModelFormat {
            line: self.line,
            reason: reason.into(),
        }
    }

    /// Next entry, which must have the given key.
    fn entry(&mut self, key: &str) -> Result<Vec<&'a str>> {
        let (i, text) = self
            .iter
            .next()
            .ok_or_else(|| self.err(format!("missing {key}")))?;
        self.line = i + 1;
        let mut parts = text.split_whitespace();
        match parts.next() {
            Some(k) if k == key => Ok(parts.collect()),
            other => Err(self.err(format!("expected {key}, found {other:?}"))),
        }
    }

    fn peek_key(&mut self) -> Option<&'a str> {
        self.iter
            .clone()
            .next()
            .and_then(|(_, t)| t.split_whitespace().next())
    }

    fn scalar<T: std::str::FromStr>(&mut self, key: &str) -> Result<T> {
        let v = self.entry(key)?;
        match v.as_slice() {
            [one] => one.parse().map_err(|_| self.err(format!("bad {key} value {one:?}"))),
            _ => Err(self.err(format!("{key} takes one value"))),
        }
    }

    fn floats(&mut self, key: &str, expected: usize) -> Result<Vec<f64>> {
        let v = self.entry(key)?;
        if v.len() != expected {
            return Err(self.err(format!("{key}: expected {expected} values, found {}", v.len())));
        }
        v.iter()
            .map(|s| s.parse::<f64>().map_err(|_| self.err(format!("bad number {s:?}"))))
            .collect()
    }
}

pub fn read_model(path: &Path) -> Result<ModelFile> {
    let text = fs::read_to_string(path)?;
    let mut lines = Lines {
        iter: text.lines().enumerate(),
        line: 0,
    };
    match lines.iter.next() {
        Some((_, first)) if first.trim() == MAGIC => lines.line = 1,
        _ => return Err(lines.err("not an etpa model file")),
    }
    let input: usize = lines.scalar("input_dim")?;
    let hidden: usize = lines.scalar("hidden_dim")?;
    let output: usize = lines.scalar("output_dim")?;
    if input == 0 || hidden == 0 || output == 0 {
        return Err(lines.err("zero dimension"));
    }
    let shape = Shape::new(input, hidden, output);
    let seed: u64 = lines.scalar("seed")?;
    let epochs_run: usize = lines.scalar("epochs_run")?;
    let best_epoch: usize = lines.scalar("best_epoch")?;
    let reason: String = lines.scalar("stop_reason")?;
    let stop_reason =
        StopReason::parse(&reason).ok_or_else(|| lines.err(format!("unknown stop reason {reason:?}")))?;
    let best_validation_loss: f64 = lines.scalar("best_validation_loss")?;
    let scaling = if lines.peek_key() == Some("scaling_min") {
        let min = lines.floats("scaling_min", input)?;
        let max = lines.floats("scaling_max", input)?;
        Some(FeatureScaling { min, max })
    } else {
        None
    };
    let mut values = lines.floats("hidden_weights", hidden * input)?;
    values.extend(lines.floats("hidden_biases", hidden)?);
    values.extend(lines.floats("output_weights", output * hidden)?);
    values.extend(lines.floats("output_biases", output)?);
    let params = MlpParams::from_flat(shape, values)?;
    if !params.is_finite() {
        return Err(lines.err("non-finite weight"));
    }
    Ok(ModelFile {
        params,
        scaling,
        seed,
        epochs_run,
        best_epoch,
        stop_reason,
        best_validation_loss,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::neuralnet::init_params;
    use crate::rng::{stream, Purpose};

    fn model(with_scaling: bool) -> ModelFile {
        let shape = Shape::new(6, 3, 4);
        ModelFile {
            params: init_params(shape, &mut stream(2, Purpose::Init, 0, 0)),
            scaling: with_scaling.then(|| FeatureScaling {
                min: vec![0.0, 0.1, 0.2, 0.3, 0.4, 1.0 / 3.0],
                max: vec![1.0; 6],
            }),
            seed: 2,
            epochs_run: 40,
            best_epoch: 34,
            stop_reason: StopReason::ValidationStall,
            best_validation_loss: 0.123_456_789_012_345_67,
        }
    }

    #[test]
    fn round_trip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        for with in [true, false] {
            let p = dir.path().join(format!("m{with}.txt"));
            let m = model(with);
            write_model(&m, &p).unwrap();
            assert_eq!(read_model(&p).unwrap(), m);
        }
    }

    #[test]
    fn floats_carry_seventeen_digits() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.txt");
        write_model(&model(false), &p).unwrap();
        let text = fs::read_to_string(&p).unwrap();
        let line = text.lines().find(|l| l.starts_with("hidden_weights")).unwrap();
        let first = line.split_whitespace().nth(1).unwrap();
        let mantissa = first.trim_start_matches('-').split('e').next().unwrap();
        assert_eq!(mantissa.replace('.', "").len(), 17);
    }

    #[test]
    fn truncated_file_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.txt");
        write_model(&model(false), &p).unwrap();
        let text = fs::read_to_string(&p).unwrap();
        let cut: Vec<&str> = text.lines().take(11).collect();
        fs::write(&p, cut.join("\n")).unwrap();
        assert!(matches!(read_model(&p), Err(NetError::ModelFormat { .. })));
    }
}
