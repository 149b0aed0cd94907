use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::phase::PhaseTolerances;
use crate::error::{LabError, Result};
use crate::metrics::DiscrepancyConfig;
use crate::micro_lm::ModelConfig;
use crate::probes::ProbeSpec;
use crate::string_lab::{Recipe, TokenString};
use crate::trainer::TrainConfig;

/// Environment variable that replaces the manifest's `out_dir`.
pub const OUT_ENV: &str = "MEMLAB_OUT";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StringEntry {
    pub name: String,
    #[serde(flatten)]
    pub recipe: Recipe,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MetricSet {
    #[serde(default = "default_window")]
    pub contiguous_window: usize,
    #[serde(default = "default_window")]
    pub in_context_window: usize,
    #[serde(default)]
    pub discrepancy: DiscrepancyConfig,
    #[serde(default)]
    pub phase: PhaseTolerances,
}

fn default_window() -> usize {
    50
}

impl Default for MetricSet {
    fn default() -> Self {
        Self {
            contiguous_window: 50,
            in_context_window: 50,
            discrepancy: DiscrepancyConfig::default(),
            phase: PhaseTolerances::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SequentialSpec {
    pub epochs_per_string: usize,
}

/// One experiment: strings to generate, a model to train, what to measure.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub name: String,
    /// Global seed: model initialisation and trainer randomness.
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_out_dir")]
    pub out_dir: PathBuf,
    /// Each string is run this many times with recipe seeds `seed, seed+1, …`.
    #[serde(default = "default_repeats")]
    pub repeats: usize,
    #[serde(default)]
    pub model: ModelConfig,
    #[serde(default)]
    pub bridge_endpoint: Option<String>,
    /// Model name or path sent to the bridge's `init` op before each run.
    #[serde(default)]
    pub bridge_model: Option<String>,
    #[serde(default)]
    pub train: TrainConfig,
    pub strings: Vec<StringEntry>,
    #[serde(default)]
    pub probes: Vec<ProbeSpec>,
    #[serde(default)]
    pub metrics: MetricSet,
    #[serde(default)]
    pub sequential: Option<SequentialSpec>,
    /// Epochs after which a checkpoint is written (the final model always is).
    #[serde(default)]
    pub checkpoint_epochs: Vec<usize>,
}

fn default_out_dir() -> PathBuf {
    PathBuf::from("runs")
}

fn default_repeats() -> usize {
    1
}

impl Manifest {
    pub fn from_toml(text: &str) -> Result<Self> {
        let m: Manifest = toml::from_str(text).map_err(|e| LabError::Manifest(e.to_string()))?;
        m.validate()?;
        Ok(m)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| LabError::Manifest(format!("{}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| LabError::Manifest(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(LabError::Manifest(m));
        if self.name.is_empty() || self.name.contains(['/', '\\']) || self.name.starts_with('.') {
            return bad(format!("name {:?} is not a plain directory name", self.name));
        }
        if self.strings.is_empty() {
            return bad("no strings declared".into());
        }
        if self.repeats == 0 {
            return bad("repeats must be at least 1".into());
        }
        let mut names: Vec<&str> = self.strings.iter().map(|s| s.name.as_str()).collect();
        names.sort_unstable();
        if names.windows(2).any(|w| w[0] == w[1]) {
            return bad("string names must be unique".into());
        }
        if let Some(s) = self.strings.iter().find(|s| s.name.is_empty() || s.name.contains(['/', '\\'])) {
            return bad(format!("string name {:?} is not a plain file name", s.name));
        }
        let wrap = |e: LabError| LabError::Manifest(e.to_string());
        self.train.validate().map_err(wrap)?;
        if self.bridge_endpoint.is_none() {
            self.model.validate().map_err(wrap)?;
        }
        for p in &self.probes {
            p.validate().map_err(wrap)?;
        }
        if let Some(&e) = self
            .checkpoint_epochs
            .iter()
            .find(|&&e| e > self.train.epochs || (e % self.train.eval_every != 0 && e != self.train.epochs))
        {
            return bad(format!("checkpoint epoch {e} is not an evaluated epoch"));
        }
        if let Some(seq) = &self.sequential {
            if seq.epochs_per_string == 0 {
                return bad("epochs_per_string must be at least 1".into());
            }
        }
        Ok(())
    }

    /// Applies command-line overrides (seed) and fills model and trainer
    /// seeds from the global seed.
    pub fn with_seed(mut self, seed: Option<u64>) -> Self {
        if let Some(s) = seed {
            self.seed = s;
        }
        self.model.init_seed = self.seed;
        self.train.seed = self.seed;
        self
    }

    /// SHA-256 (hex) of the manifest's canonical JSON form.
    pub fn hash(&self) -> Result<String> {
        let json = serde_json::to_vec(self)?;
        Ok(Sha256::digest(&json).iter().map(|b| format!("{b:02x}")).collect())
    }

    /// Output root: explicit override, then `MEMLAB_OUT`, then `out_dir`.
    pub fn artifact_dir(&self, override_root: Option<&Path>) -> PathBuf {
        let root = match override_root {
            Some(p) => p.to_path_buf(),
            None => std::env::var_os(OUT_ENV).map(PathBuf::from).unwrap_or_else(|| self.out_dir.clone()),
        };
        root.join(&self.name)
    }

    /// Every (run name, realised string) pair, repeats included.
    pub fn realize_strings(&self) -> Result<Vec<(String, TokenString)>> {
        let mut out = Vec::new();
        for entry in &self.strings {
            for r in 0..self.repeats {
                let mut recipe = entry.recipe.clone();
                recipe.seed = recipe.seed.wrapping_add(r as u64);
                let name = if self.repeats == 1 {
                    entry.name.clone()
                } else {
                    format!("{}_r{r}", entry.name)
                };
                out.push((name, recipe.realize().map_err(|e| LabError::Manifest(format!("string {}: {e}", entry.name)))?));
            }
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const TEXT: &str = r#"
name = "demo"
seed = 3

[model]
vocab_size = 64
d_model = 16
n_layers = 1
n_heads = 2
d_ff = 32
max_seq_len = 64
pos_encoding = "rotary"
bos_token_id = 63
init_seed = 0

[train]
epochs = 5
initial_lr = 0.001
lr_schedule = "linear_decay_to_zero"
eval_every = 1
seed = 0
batch_regime = { regime = "single" }

[[strings]]
name = "u"
kind = "uniform"
n = 32
seed = 1
alphabet = { ell = 8, vocab_size = 64, kind = "latin", seed = 0 }

[[strings]]
name = "h"
kind = "entropy_matched"
n = 32
target_entropy = 1.0
seed = 2
alphabet = { ell = 8, vocab_size = 64, kind = "latin", seed = 0 }
"#;

    #[test]
    fn parses_and_round_trips() {
        let m = Manifest::from_toml(TEXT).unwrap().with_seed(None);
        assert_eq!(m.model.init_seed, 3);
        assert_eq!(m.strings.len(), 2);
        let back = Manifest::from_toml(&m.to_toml().unwrap()).unwrap();
        assert_eq!(back, m);
        assert_eq!(back.hash().unwrap(), m.hash().unwrap());
        assert_eq!(m.hash().unwrap().len(), 64);
        let other = m.clone().with_seed(Some(4));
        assert_ne!(other.hash().unwrap(), m.hash().unwrap());
    }

    #[test]
    fn repeats_shift_string_seeds() {
        let mut m = Manifest::from_toml(TEXT).unwrap();
        m.repeats = 2;
        let s = m.realize_strings().unwrap();
        assert_eq!(s.len(), 4);
        assert_eq!(s[1].0, "u_r1");
        assert_eq!(s[1].1.recipe().seed, 2);
    }

    #[test]
    fn rejects_bad_manifests() {
        assert!(matches!(Manifest::from_toml("name = 3"), Err(LabError::Manifest(_))));
        assert!(matches!(Manifest::from_toml(&TEXT.replace("epochs = 5", "epochs = 0")), Err(LabError::Manifest(_))));
        assert!(Manifest::from_toml(&TEXT.replace("name = \"h\"", "name = \"u\"")).is_err());
        assert!(Manifest::from_toml(&format!("bogus = 1\n{TEXT}")).is_err());
    }

    #[test]
    fn out_dir_precedence() {
        let m = Manifest::from_toml(TEXT).unwrap();
        assert_eq!(m.artifact_dir(Some(Path::new("/x"))), PathBuf::from("/x/demo"));
    }
}
