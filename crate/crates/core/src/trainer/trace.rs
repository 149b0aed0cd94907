use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::metrics::CorrectnessBitmap;

pub const SUMMARY_COLUMNS: [&str; 6] = ["epoch", "loss", "accuracy", "agg_prob", "entropy", "kld"];

/// Metrics of one evaluated epoch. Epoch 0 is the model before any step.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochTrace {
    pub epoch: usize,
    /// Learning rate of the step that ended this epoch (0 at epoch 0).
    pub lr: f64,
    pub loss: f64,
    pub accuracy: f64,
    pub agg_prob: f64,
    /// Alphabet entropy in nats, renormalised over the alphabet.
    pub entropy: f64,
    pub entropy_skipped: usize,
    pub kld: f64,
    pub kld_clamped: usize,
    /// Greedy correctness over the random span as a `0`/`1` string.
    pub correct: String,
}

impl EpochTrace {
    pub fn bitmap(&self) -> CorrectnessBitmap {
        CorrectnessBitmap::from_bitstring(self.epoch, &self.correct).expect("trace holds a valid bitstring")
    }
}

/// Appends one JSON line per trace and flushes after each, so a run that
/// dies still leaves every completed epoch on disk.
pub struct JsonlTraceWriter {
    out: BufWriter<File>,
}

impl JsonlTraceWriter {
    pub fn create(path: &Path) -> Result<Self> {
        Ok(Self {
            out: BufWriter::new(File::create(path)?),
        })
    }

    pub fn write(&mut self, trace: &EpochTrace) -> Result<()> {
        serde_json::to_writer(&mut self.out, trace)?;
        self.out.write_all(b"\n")?;
        self.out.flush()?;
        Ok(())
    }
}

pub fn write_trace_jsonl(path: &Path, traces: &[EpochTrace]) -> Result<()> {
    let mut w = JsonlTraceWriter::create(path)?;
    for t in traces {
        w.write(t)?;
    }
    Ok(())
}

pub fn read_trace_jsonl(path: &Path) -> Result<Vec<EpochTrace>> {
    let mut out = Vec::new();
    for line in BufReader::new(File::open(path)?).lines() {
        let line = line?;
        if !line.trim().is_empty() {
            out.push(serde_json::from_str(&line)?);
        }
    }
    Ok(out)
}

pub fn write_summary_csv(path: &Path, traces: &[EpochTrace]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(SUMMARY_COLUMNS)?;
    for t in traces {
        w.write_record([
            t.epoch.to_string(),
            t.loss.to_string(),
            t.accuracy.to_string(),
            t.agg_prob.to_string(),
            t.entropy.to_string(),
            t.kld.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}
