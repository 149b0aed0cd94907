use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::manifest::Manifest;
use super::phase::{phase_detect, Phases};
use super::plot::{trace_charts, Baseline, Chart, Series, SummaryRow};
use crate::bridge::{BridgeClient, Endpoint};
use crate::error::{LabError, Result};
use crate::metrics::{
    self, contiguous_recall, discrepancy, memorisation_epochs, order_correlation, MemorisationEpochs, OrderCorrelation,
};
use crate::micro_lm::MicroModel;
use crate::probes::probe_sweep;
use crate::string_lab::{Recipe, TokenString};
use crate::trainer::{
    run_memorisation_with, run_sequential, write_summary_csv, EpochTrace, JsonlTraceWriter, Learner, MicroLearner,
    SequentialRun,
};

/// Name of the marker file left in a directory whose stage failed.
pub const FAILED_MARKER: &str = "FAILED";

/// A JSON body tagged with the hash of the manifest that produced it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Stamped<T> {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub manifest_hash: Option<String>,
    #[serde(flatten)]
    pub body: T,
}

pub fn write_stamped<T: Serialize>(path: &Path, hash: Option<&str>, body: &T) -> Result<()> {
    let v = Stamped {
        manifest_hash: hash.map(str::to_string),
        body,
    };
    fs::write(path, serde_json::to_string_pretty(&v)? + "\n")?;
    Ok(())
}

/// Reads a string file (stamped or bare) and checks it against its recipe.
pub fn read_string_file(path: &Path) -> Result<TokenString> {
    let text = fs::read_to_string(path)?;
    let s: Stamped<TokenString> = serde_json::from_str(&text)?;
    s.body.verify()?;
    Ok(s.body)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Stage {
    /// Realise and write the strings only.
    Generate,
    /// Train one model per string, then metrics and probes.
    Train,
    /// Train one model on all strings in turn.
    Sequential,
}

#[derive(Clone, Debug, Default)]
pub struct RunOptions {
    /// Output root; overrides `MEMLAB_OUT` and the manifest's `out_dir`.
    pub out_root: Option<PathBuf>,
    /// Bridge endpoint; overrides the manifest's.
    pub bridge_endpoint: Option<String>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochValue {
    pub epoch: usize,
    pub value: f64,
}

/// Derived metrics of one string's run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunMetrics {
    pub ell: usize,
    pub span_len: usize,
    pub phases: Phases,
    /// First evaluated epoch with accuracy 1.
    pub full_memorisation_epoch: Option<usize>,
    /// First evaluated epoch with accuracy at least 0.99.
    pub epochs_to_99: Option<usize>,
    pub memorisation_epochs: MemorisationEpochs,
    /// Position against stable memorisation epoch; `None` when undefined.
    pub order_correlation: Option<OrderCorrelation>,
    pub discrepancy: Vec<EpochValue>,
    /// At the final epoch; `None` when the window does not fit.
    pub contiguous_recall: Option<f64>,
}

impl RunMetrics {
    pub fn compute(traces: &[EpochTrace], ell: usize, m: &Manifest) -> Result<Self> {
        let last = traces.last().ok_or_else(|| LabError::invalid("empty trace"))?;
        let bitmaps: Vec<_> = traces.iter().map(EpochTrace::bitmap).collect();
        let mem = memorisation_epochs(&bitmaps)?;
        let disc = bitmaps
            .iter()
            .filter_map(|b| {
                discrepancy(b, &m.metrics.discrepancy).ok().map(|value| EpochValue { epoch: b.epoch, value })
            })
            .collect();
        Ok(Self {
            ell,
            span_len: last.correct.len(),
            phases: phase_detect(traces, ell, &m.metrics.phase)?,
            full_memorisation_epoch: traces.iter().find(|t| t.accuracy >= 1.0).map(|t| t.epoch),
            epochs_to_99: traces.iter().find(|t| t.accuracy >= 0.99).map(|t| t.epoch),
            order_correlation: order_correlation(&mem.initial).ok(),
            memorisation_epochs: mem,
            discrepancy: disc,
            contiguous_recall: contiguous_recall(&last.bitmap(), m.metrics.contiguous_window).ok(),
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StringRunSummary {
    pub name: String,
    pub recipe_seed: u64,
    pub ell: usize,
    pub len: usize,
    pub epochs_run: usize,
    pub final_accuracy: f64,
    pub final_entropy: f64,
    pub guess_plateau: Option<std::ops::RangeInclusive<usize>>,
    pub memorisation_onset: Option<usize>,
    pub full_memorisation_epoch: Option<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SequentialSummary {
    pub strings: Vec<String>,
    pub epochs_per_string: usize,
    /// Epochs of its own training until each string reached accuracy 0.99.
    pub epochs_to_99: Vec<Option<usize>>,
    pub peak_accuracy: Vec<f64>,
    pub final_accuracy: Vec<Option<f64>>,
}

impl SequentialSummary {
    fn new(names: Vec<String>, run: &SequentialRun) -> Self {
        let k = names.len();
        Self {
            strings: names,
            epochs_per_string: run.epochs_per_string,
            epochs_to_99: (0..k).map(|j| run.epochs_to(j, 0.99)).collect(),
            peak_accuracy: (0..k).map(|j| run.peak(j)).collect(),
            final_accuracy: (0..k).map(|j| run.final_accuracy(j)).collect(),
        }
    }
}

/// What `run_manifest` did; also written to `report.json`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub name: String,
    pub manifest_hash: String,
    pub seed: u64,
    pub string_seeds: Vec<(String, u64)>,
    pub runs: Vec<StringRunSummary>,
    pub sequential: Option<SequentialSummary>,
    #[serde(skip)]
    pub out_dir: PathBuf,
}

/// Connects to the manifest's bridge endpoint when it names one, otherwise
/// builds a fresh micro model.
pub fn open_learner(m: &Manifest) -> Result<Box<dyn Learner + Send>> {
    match m.bridge_endpoint.as_deref() {
        Some(ep) => {
            let mut client = BridgeClient::connect(&Endpoint::parse(ep)?)?;
            if let Some(model) = &m.bridge_model {
                client.init(model, m.seed)?;
            }
            Ok(Box::new(client))
        }
        None => Ok(Box::new(MicroLearner::new(MicroModel::init(m.model.clone())?, m.train.adam))),
    }
}

fn mark_failed(dir: &Path, e: &LabError) {
    let _ = fs::create_dir_all(dir);
    let _ = fs::write(dir.join(FAILED_MARKER), format!("{e}\n"));
}

fn summary_rows(traces: &[EpochTrace]) -> Vec<SummaryRow> {
    traces
        .iter()
        .map(|t| SummaryRow {
            epoch: t.epoch,
            loss: t.loss,
            accuracy: t.accuracy,
            agg_prob: t.agg_prob,
            entropy: t.entropy,
            kld: t.kld,
        })
        .collect()
}

/// Charts for runs that may differ in alphabet size: one pair of guess
/// baselines per distinct `ℓ`.
pub fn comparison_charts(runs: &[(String, Vec<SummaryRow>)], ells: &[usize]) -> Vec<(&'static str, Chart)> {
    let distinct: BTreeSet<usize> = ells.iter().copied().collect();
    if distinct.len() == 1 {
        return trace_charts(runs, distinct.first().copied());
    }
    let mut charts = trace_charts(runs, None);
    for (stem, chart) in &mut charts {
        for &l in &distinct {
            let lf = l as f64;
            match *stem {
                "accuracy" => chart.baselines.push(Baseline {
                    label: format!("1/ℓ, ℓ={l}"),
                    y: 1.0 / lf,
                }),
                "entropy" | "loss" => chart.baselines.push(Baseline {
                    label: format!("ln ℓ, ℓ={l}"),
                    y: lf.ln(),
                }),
                _ => {}
            }
        }
    }
    charts
}

fn write_charts(dir: &Path, charts: &[(&'static str, Chart)], meta: &str) -> Result<()> {
    for (stem, chart) in charts {
        chart.write(&dir.join(format!("{stem}.svg")), Some(meta))?;
    }
    Ok(())
}

struct Ctx<'a> {
    m: &'a Manifest,
    hash: &'a str,
    root: &'a Path,
}

impl Ctx<'_> {
    fn meta(&self, what: &str) -> String {
        format!("manifest sha256 {}; {what}; global seed {}", self.hash, self.m.seed)
    }

    fn write_string(&self, dir: &Path, s: &TokenString) -> Result<()> {
        fs::create_dir_all(dir)?;
        write_stamped::<Recipe>(&dir.join("recipe.json"), Some(self.hash), s.recipe())?;
        write_stamped(&dir.join("string.json"), Some(self.hash), s)
    }

    fn train_one(&self, name: &str, s: &TokenString) -> Result<(StringRunSummary, Vec<SummaryRow>)> {
        let dir = self.root.join(name);
        let _ = fs::remove_file(dir.join(FAILED_MARKER));
        self.train_one_in(&dir, name, s).inspect_err(|e| mark_failed(&dir, e))
    }

    fn train_one_in(&self, dir: &Path, name: &str, s: &TokenString) -> Result<(StringRunSummary, Vec<SummaryRow>)> {
        let m = self.m;
        self.write_string(dir, s)?;
        let mut learner = open_learner(m)?;
        let ckpt_dir = dir.join("checkpoints");
        if !m.checkpoint_epochs.is_empty() {
            fs::create_dir_all(&ckpt_dir)?;
        }
        let mut writer = JsonlTraceWriter::create(&dir.join("trace.jsonl"))?;
        let mut seen = Vec::new();
        let result = run_memorisation_with(&mut *learner, s, &m.train, &mut |t, l| {
            writer.write(t)?;
            seen.push(t.clone());
            if m.checkpoint_epochs.contains(&t.epoch) {
                l.save(&ckpt_dir.join(format!("epoch_{:06}.ckpt", t.epoch)))?;
            }
            Ok(())
        });
        write_summary_csv(&dir.join("summary.csv"), &seen)?;
        let traces = result?;
        learner.save(&dir.join("final.ckpt"))?;

        let alphabet = s.sampling_alphabet()?;
        let ell = s.alphabet()?.len();
        let rm = RunMetrics::compute(&traces, ell, m)?;
        write_stamped(&dir.join("metrics.json"), Some(self.hash), &rm)?;
        if let Ok(profile) = metrics::in_context_profile(&*learner, s, &alphabet, m.metrics.in_context_window) {
            let mut w = csv::Writer::from_path(dir.join("in_context.csv"))?;
            w.write_record(["position", "alphabet_mass"])?;
            for (j, v) in profile.iter().enumerate() {
                w.write_record([(j + m.metrics.in_context_window - 1).to_string(), v.to_string()])?;
            }
            w.flush()?;
        }
        for (i, spec) in m.probes.iter().enumerate() {
            let report = probe_sweep(&*learner, s, spec)?;
            report.write_csv(&dir.join(format!("probes_{i}.csv")))?;
            write_stamped(&dir.join(format!("probes_{i}.json")), Some(self.hash), &report)?;
        }
        let rows = summary_rows(&traces);
        let meta = self.meta(&format!("string {name}; recipe seed {}", s.recipe().seed));
        write_charts(dir, &trace_charts(&[(name.to_string(), rows.clone())], Some(ell)), &meta)?;

        let last = traces.last().expect("trace has epoch 0");
        let summary = StringRunSummary {
            name: name.to_string(),
            recipe_seed: s.recipe().seed,
            ell,
            len: s.len(),
            epochs_run: last.epoch,
            final_accuracy: last.accuracy,
            final_entropy: last.entropy,
            guess_plateau: rm.phases.guess_plateau.clone(),
            memorisation_onset: rm.phases.memorisation_onset,
            full_memorisation_epoch: rm.full_memorisation_epoch,
        };
        Ok((summary, rows))
    }

    fn sequential(&self, strings: &[(String, TokenString)]) -> Result<SequentialSummary> {
        let dir = self.root.join("sequential");
        let _ = fs::remove_file(dir.join(FAILED_MARKER));
        self.sequential_in(&dir, strings).inspect_err(|e| mark_failed(&dir, e))
    }

    fn sequential_in(&self, dir: &Path, strings: &[(String, TokenString)]) -> Result<SequentialSummary> {
        let m = self.m;
        fs::create_dir_all(dir)?;
        let per = m.sequential.as_ref().map_or(m.train.epochs, |q| q.epochs_per_string);
        let mut learner = open_learner(m)?;
        let seqs: Vec<TokenString> = strings.iter().map(|(_, s)| s.clone()).collect();
        let run = run_sequential(&mut *learner, &seqs, per, &m.train)?;
        learner.save(&dir.join("final.ckpt"))?;
        let total = strings.len() * per;
        let mut w = csv::Writer::from_path(dir.join("accuracy_matrix.csv"))?;
        let mut header = vec!["string".to_string()];
        header.extend((1..=total).map(|g| g.to_string()));
        w.write_record(&header)?;
        for ((name, _), row) in strings.iter().zip(&run.accuracy) {
            let mut rec = vec![name.clone()];
            rec.extend(row[1..].iter().map(|a| a.map(|v| v.to_string()).unwrap_or_default()));
            w.write_record(&rec)?;
        }
        w.flush()?;
        let summary = SequentialSummary::new(strings.iter().map(|(n, _)| n.clone()).collect(), &run);
        write_stamped(&dir.join("sequential.json"), Some(self.hash), &summary)?;
        let chart = Chart {
            title: "Accuracy during sequential training".into(),
            x_label: "epoch".into(),
            y_label: "accuracy".into(),
            series: strings
                .iter()
                .zip(&run.accuracy)
                .map(|((name, _), row)| Series {
                    name: name.clone(),
                    points: row.iter().enumerate().filter_map(|(g, a)| a.map(|v| (g as f64, v))).collect(),
                })
                .collect(),
            baselines: Vec::new(),
        };
        chart.write(&dir.join("accuracy.svg"), Some(&self.meta("sequential")))?;
        Ok(summary)
    }
}

/// Runs one stage of `m` and writes its artifacts under
/// `<out root>/<name>/`. A failing stage leaves its partial outputs and a
/// `FAILED` marker next to them.
pub fn run_manifest(m: &Manifest, stage: Stage, opts: &RunOptions) -> Result<RunReport> {
    let mut effective = m.clone();
    if let Some(ep) = &opts.bridge_endpoint {
        effective.bridge_endpoint = Some(ep.clone());
    }
    let m = &effective;
    m.validate()?;
    let hash = m.hash()?;
    let root = m.artifact_dir(opts.out_root.as_deref());
    fs::create_dir_all(&root)?;
    let _ = fs::remove_file(root.join(FAILED_MARKER));
    let result = run_in(m, stage, &hash, &root);
    if let Err(e) = &result {
        mark_failed(&root, e);
    }
    result
}

fn run_in(m: &Manifest, stage: Stage, hash: &str, root: &Path) -> Result<RunReport> {
    fs::write(root.join("manifest.toml"), m.to_toml()?)?;
    fs::write(root.join("manifest.sha256"), format!("{hash}\n"))?;
    let ctx = Ctx { m, hash, root };
    let strings = m.realize_strings()?;
    let mut report = RunReport {
        name: m.name.clone(),
        manifest_hash: hash.to_string(),
        seed: m.seed,
        string_seeds: strings.iter().map(|(n, s)| (n.clone(), s.recipe().seed)).collect(),
        runs: Vec::new(),
        sequential: None,
        out_dir: root.to_path_buf(),
    };
    match stage {
        Stage::Generate => {
            for (name, s) in &strings {
                ctx.write_string(&root.join(name), s)?;
            }
        }
        Stage::Train => {
            let results: Vec<_> = strings.par_iter().map(|(name, s)| ctx.train_one(name, s)).collect();
            let mut runs = Vec::new();
            for r in results {
                runs.push(r?);
            }
            let ells: Vec<usize> = runs.iter().map(|(s, _)| s.ell).collect();
            let series: Vec<(String, Vec<SummaryRow>)> = runs.iter().map(|(s, r)| (s.name.clone(), r.clone())).collect();
            let cmp = root.join("comparison");
            fs::create_dir_all(&cmp)?;
            write_charts(&cmp, &comparison_charts(&series, &ells), &ctx.meta("comparison"))?;
            report.runs = runs.into_iter().map(|(s, _)| s).collect();
        }
        Stage::Sequential => {
            for (name, s) in &strings {
                ctx.write_string(&root.join(name), s)?;
            }
            report.sequential = Some(ctx.sequential(&strings)?);
        }
    }
    fs::write(root.join("report.json"), serde_json::to_string_pretty(&report)? + "\n")?;
    Ok(report)
}
