#![allow(dead_code)]

pub mod oracles;

use memlab::micro_lm::{MicroModel, ModelConfig, PosEncoding};
use memlab::string_lab::{make_alphabet, uniform_string, Alphabet, AlphabetKind, TokenString};
use memlab::trainer::{AdamConfig, MicroLearner, TrainConfig};

pub const VOCAB: usize = 64;
pub const BOS: u32 = 63;

pub fn tiny_config(seed: u64) -> ModelConfig {
    ModelConfig {
        vocab_size: VOCAB,
        d_model: 32,
        n_layers: 1,
        n_heads: 2,
        d_ff: 64,
        max_seq_len: 256,
        pos_encoding: PosEncoding::Rotary,
        bos_token_id: BOS,
        init_seed: seed,
        embed_init_std: 0.02,
    }
}

pub fn tiny_learner(seed: u64) -> MicroLearner {
    MicroLearner::new(MicroModel::init(tiny_config(seed)).unwrap(), AdamConfig::default())
}

pub fn alphabet(ell: usize) -> Alphabet {
    make_alphabet(ell, VOCAB, AlphabetKind::Latin, 0).unwrap()
}

pub fn string(ell: usize, n: usize, seed: u64) -> TokenString {
    uniform_string(&alphabet(ell), n, seed).unwrap()
}

pub fn train_cfg(epochs: usize, lr: f64) -> TrainConfig {
    TrainConfig {
        epochs,
        initial_lr: lr,
        ..TrainConfig::default()
    }
}

/// A seconds-long manifest on the tiny model; `extra` is appended verbatim.
pub fn tiny_manifest(name: &str, epochs: usize, extra: &str) -> String {
    format!(
        r#"
name = "{name}"
seed = 0
checkpoint_epochs = [{ckpt}]

[model]
vocab_size = 64
d_model = 32
n_layers = 1
n_heads = 2
d_ff = 64
max_seq_len = 256
pos_encoding = "rotary"
bos_token_id = 63
init_seed = 0
embed_init_std = 0.02

[train]
epochs = {epochs}
initial_lr = 0.01
lr_schedule = "linear_decay_to_zero"
eval_every = 1
seed = 0
batch_regime = {{ regime = "single" }}

[metrics]
contiguous_window = 10
in_context_window = 10

[[strings]]
name = "a"
kind = "uniform"
n = 48
seed = 1
alphabet = {{ ell = 8, vocab_size = 64, kind = "latin", seed = 0 }}

[[strings]]
name = "b"
kind = "uniform"
n = 48
seed = 2
alphabet = {{ ell = 8, vocab_size = 64, kind = "latin", seed = 0 }}

[[probes]]
prefix_lengths = [1, 4, "full"]
policies = ["random", "constant"]
gc_scales = [0.0, 1.0]
samples_per_position = 3
positions = {{ mode = "all" }}
seed = 0
{extra}
"#,
        ckpt = epochs.clamp(1, 10)
    )
}
