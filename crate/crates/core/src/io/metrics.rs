use std::fs::File;
use std::io::Write;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::trainer::{Checkpoint, MetricsRecord, TrainSink};

pub const METRICS_FILE: &str = "metrics.csv";
pub const LAMBDA_AGENTS_FILE: &str = "lambda_agents.csv";
pub const CHECKPOINT_FILE: &str = "checkpoint.json";

/// `step,J,G_gap_1..K,lambda_mean_1..K,lambda_disagreement,critic_disagreement,alpha,beta,gamma`
pub fn metrics_header(k: usize) -> Vec<String> {
    let mut h = vec!["step".to_string(), "J".to_string()];
    h.extend((1..=k).map(|i| format!("G_gap_{i}")));
    h.extend((1..=k).map(|i| format!("lambda_mean_{i}")));
    for c in ["lambda_disagreement", "critic_disagreement", "alpha", "beta", "gamma"] {
        h.push(c.to_string());
    }
    h
}

/// `step,lambda_{agent}_{constraint}` with 1-based indices.
pub fn lambda_agents_header(n: usize, k: usize) -> Vec<String> {
    let mut h = vec!["step".to_string()];
    for a in 1..=n {
        h.extend((1..=k).map(|i| format!("lambda_{a}_{i}")));
    }
    h
}

fn num(v: f64) -> String {
    format!("{v:?}")
}

pub fn metrics_row(r: &MetricsRecord) -> Vec<String> {
    let mut row = vec![r.step.to_string(), num(r.j)];
    row.extend(r.g_gap.iter().copied().map(num));
    row.extend(r.lambda_mean.iter().copied().map(num));
    for v in [r.lambda_disagreement, r.critic_disagreement, r.alpha, r.beta, r.gamma] {
        row.push(num(v));
    }
    row
}

fn lambda_row(r: &MetricsRecord) -> Vec<String> {
    let mut row = vec![r.step.to_string()];
    row.extend(r.lambda_agents.iter().flatten().copied().map(num));
    row
}

/// Writes both CSV files and the latest checkpoint into a run directory.
pub struct CsvSink {
    dir: PathBuf,
    metrics: csv::Writer<File>,
    lambdas: csv::Writer<File>,
    num_agents: usize,
    num_constraints: usize,
}

fn open_append(path: &Path) -> Result<File> {
    std::fs::OpenOptions::new()
        .append(true)
        .open(path)
        .map_err(|e| Error::io(path, e))
}

fn create(path: &Path) -> Result<File> {
    File::create(path).map_err(|e| Error::io(path, e))
}

impl CsvSink {
    /// Fresh files with headers.
    pub fn create(dir: &Path, num_agents: usize, num_constraints: usize) -> Result<Self> {
        let mut metrics = csv::Writer::from_writer(create(&dir.join(METRICS_FILE))?);
        metrics.write_record(metrics_header(num_constraints))?;
        let mut lambdas = csv::Writer::from_writer(create(&dir.join(LAMBDA_AGENTS_FILE))?);
        lambdas.write_record(lambda_agents_header(num_agents, num_constraints))?;
        let mut sink = Self {
            dir: dir.to_path_buf(),
            metrics,
            lambdas,
            num_agents,
            num_constraints,
        };
        sink.flush()?;
        Ok(sink)
    }

    /// Continue existing files after dropping every row past `step`.
    pub fn resume(dir: &Path, num_agents: usize, num_constraints: usize, step: u64) -> Result<Self> {
        truncate_after(&dir.join(METRICS_FILE), step)?;
        truncate_after(&dir.join(LAMBDA_AGENTS_FILE), step)?;
        let metrics = csv::WriterBuilder::new()
            .has_headers(false)
            .from_writer(open_append(&dir.join(METRICS_FILE))?);
        let lambdas = csv::WriterBuilder::new()
            .has_headers(false)
            .from_writer(open_append(&dir.join(LAMBDA_AGENTS_FILE))?);
        Ok(Self {
            dir: dir.to_path_buf(),
            metrics,
            lambdas,
            num_agents,
            num_constraints,
        })
    }

    pub fn flush(&mut self) -> Result<()> {
        self.metrics
            .flush()
            .map_err(|e| Error::io(self.dir.join(METRICS_FILE), e))?;
        self.lambdas
            .flush()
            .map_err(|e| Error::io(self.dir.join(LAMBDA_AGENTS_FILE), e))
    }
}

impl TrainSink for CsvSink {
    fn record(&mut self, record: &MetricsRecord) -> Result<()> {
        if record.g_gap.len() != self.num_constraints || record.lambda_agents.len() != self.num_agents {
            return Err(Error::shape(
                "metrics record",
                self.num_agents * self.num_constraints,
                record.lambda_agents.iter().map(Vec::len).sum(),
            ));
        }
        self.metrics.write_record(metrics_row(record))?;
        self.lambdas.write_record(lambda_row(record))?;
        self.flush()
    }

    fn checkpoint(&mut self, checkpoint: &Checkpoint) -> Result<()> {
        self.flush()?;
        write_atomic(&self.dir.join(CHECKPOINT_FILE), checkpoint.to_json()?.as_bytes())
    }
}

/// Write to a sibling temp file, then rename over `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension("tmp");
    let mut f = create(&tmp)?;
    f.write_all(bytes).map_err(|e| Error::io(&tmp, e))?;
    f.sync_all().map_err(|e| Error::io(&tmp, e))?;
    std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

fn truncate_after(path: &Path, step: u64) -> Result<()> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut kept = String::with_capacity(text.len());
    for (i, line) in text.lines().enumerate() {
        if i > 0 {
            let s: u64 = line
                .split(',')
                .next()
                .and_then(|f| f.parse().ok())
                .ok_or_else(|| Error::Parse {
                    path: path.to_path_buf(),
                    message: format!("line {}: bad step field", i + 1),
                })?;
            if s > step {
                break;
            }
        }
        kept.push_str(line);
        kept.push('\n');
    }
    write_atomic(path, kept.as_bytes())
}

/// Columns of a metrics CSV, by name.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsTable {
    pub header: Vec<String>,
    pub columns: Vec<Vec<f64>>,
}

impl MetricsTable {
    pub fn read(path: &Path) -> Result<Self> {
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let mut rdr = csv::Reader::from_reader(file);
        let header: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
        let mut columns = vec![Vec::new(); header.len()];
        for (line, rec) in rdr.records().enumerate() {
            let rec = rec?;
            for (col, field) in columns.iter_mut().zip(rec.iter()) {
                col.push(field.parse::<f64>().map_err(|_| Error::Parse {
                    path: path.to_path_buf(),
                    message: format!("row {}: '{field}' is not a number", line + 1),
                })?);
            }
        }
        Ok(Self { header, columns })
    }

    pub fn len(&self) -> usize {
        self.columns.first().map_or(0, Vec::len)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn column(&self, name: &str) -> Option<&[f64]> {
        self.header
            .iter()
            .position(|h| h == name)
            .map(|i| self.columns[i].as_slice())
    }

    /// Names of the form `{prefix}{i}`, in order, for i = 1, 2, ...
    pub fn indexed(&self, prefix: &str) -> Vec<&str> {
        let mut out = Vec::new();
        for i in 1.. {
            let name = format!("{prefix}{i}");
            match self.header.iter().find(|h| **h == name) {
                Some(h) => out.push(h.as_str()),
                None => break,
            }
        }
        out
    }

    /// Error naming every column in `names` that is absent.
    pub fn require(&self, names: &[&str], path: &Path) -> Result<()> {
        let missing: Vec<&str> = names
            .iter()
            .copied()
            .filter(|n| self.column(n).is_none())
            .collect();
        if missing.is_empty() {
            Ok(())
        } else {
            Err(Error::Parse {
                path: path.to_path_buf(),
                message: format!("missing columns: {}", missing.join(", ")),
            })
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn record(step: u64) -> MetricsRecord {
        MetricsRecord {
            step,
            j: -1.25,
            g_gap: vec![0.1, -0.2],
            lambda_mean: vec![0.5, 0.0],
            lambda_disagreement: 1e-3,
            critic_disagreement: 0.25,
            alpha: 1.0,
            beta: 0.5,
            gamma: 0.25,
            lambda_agents: vec![vec![0.5, 0.0], vec![0.5, 0.0]],
        }
    }

    #[test]
    fn golden_header() {
        assert_eq!(
            metrics_header(1).join(","),
            "step,J,G_gap_1,lambda_mean_1,lambda_disagreement,critic_disagreement,alpha,beta,gamma"
        );
        assert_eq!(
            metrics_header(2).join(","),
            "step,J,G_gap_1,G_gap_2,lambda_mean_1,lambda_mean_2,lambda_disagreement,critic_disagreement,alpha,beta,gamma"
        );
        assert_eq!(lambda_agents_header(2, 1).join(","), "step,lambda_1_1,lambda_2_1");
    }

    #[test]
    fn rows_round_trip_through_the_reader() {
        let dir = tempfile::tempdir().unwrap();
        let mut sink = CsvSink::create(dir.path(), 2, 2).unwrap();
        sink.record(&record(0)).unwrap();
        sink.record(&record(100)).unwrap();
        drop(sink);
        let t = MetricsTable::read(&dir.path().join(METRICS_FILE)).unwrap();
        assert_eq!(t.len(), 2);
        assert_eq!(t.column("step").unwrap(), &[0.0, 100.0]);
        assert_eq!(t.column("G_gap_2").unwrap(), &[-0.2, -0.2]);
        assert_eq!(t.indexed("lambda_mean_"), vec!["lambda_mean_1", "lambda_mean_2"]);
    }

    #[test]
    fn resume_drops_rows_after_the_checkpoint() {
        let dir = tempfile::tempdir().unwrap();
        let mut sink = CsvSink::create(dir.path(), 2, 2).unwrap();
        for s in [0, 10, 20, 30] {
            sink.record(&record(s)).unwrap();
        }
        drop(sink);
        let mut sink = CsvSink::resume(dir.path(), 2, 2, 10).unwrap();
        sink.record(&record(20)).unwrap();
        drop(sink);
        let t = MetricsTable::read(&dir.path().join(METRICS_FILE)).unwrap();
        assert_eq!(t.column("step").unwrap(), &[0.0, 10.0, 20.0]);
        let l = MetricsTable::read(&dir.path().join(LAMBDA_AGENTS_FILE)).unwrap();
        assert_eq!(l.len(), 3);
    }

    #[test]
    fn missing_columns_are_named() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.csv");
        std::fs::write(&p, "step,J\n0,1.0\n").unwrap();
        let t = MetricsTable::read(&p).unwrap();
        let err = t.require(&["step", "lambda_disagreement", "G_gap_1"], &p).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("lambda_disagreement") && msg.contains("G_gap_1"), "{msg}");
    }

    #[test]
    fn wrong_shape_is_refused() {
        let dir = tempfile::tempdir().unwrap();
        let mut sink = CsvSink::create(dir.path(), 3, 2).unwrap();
        assert!(sink.record(&record(0)).is_err());
    }
}
