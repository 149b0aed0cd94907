use std::ops::Range;

use serde::{Deserialize, Serialize};

use super::config::{ModelConfig, PosEncoding};

/// One named tensor inside the flat parameter buffer.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub offset: usize,
}

impl TensorEntry {
    pub fn numel(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn range(&self) -> Range<usize> {
        self.offset..self.offset + self.numel()
    }
}

#[derive(Clone, Debug)]
pub(crate) struct LayerIdx {
    pub ln1_w: Range<usize>,
    pub ln1_b: Range<usize>,
    pub qkv_w: Range<usize>,
    pub qkv_b: Range<usize>,
    pub proj_w: Range<usize>,
    pub proj_b: Range<usize>,
    pub ln2_w: Range<usize>,
    pub ln2_b: Range<usize>,
    pub fc_w: Range<usize>,
    pub fc_b: Range<usize>,
    pub out_w: Range<usize>,
    pub out_b: Range<usize>,
}

/// Offsets of every tensor in the flat buffer. Weight matrices are stored
/// `[in, out]` row-major so a linear layer is `x @ W + b`.
#[derive(Clone, Debug)]
pub struct Layout {
    pub(crate) entries: Vec<TensorEntry>,
    pub(crate) wte: Range<usize>,
    pub(crate) wpe: Option<Range<usize>>,
    pub(crate) layers: Vec<LayerIdx>,
    pub(crate) lnf_w: Range<usize>,
    pub(crate) lnf_b: Range<usize>,
    pub(crate) head: Range<usize>,
    pub(crate) total: usize,
}

impl Layout {
    pub fn new(cfg: &ModelConfig) -> Self {
        let (v, d, f) = (cfg.vocab_size, cfg.d_model, cfg.d_ff);
        let mut entries = Vec::new();
        let mut offset = 0;
        let mut push = |name: String, shape: Vec<usize>| -> Range<usize> {
            let e = TensorEntry { name, shape, offset };
            let r = e.range();
            offset = r.end;
            entries.push(e);
            r
        };
        let wte = push("wte".into(), vec![v, d]);
        let wpe = match cfg.pos_encoding {
            PosEncoding::Absolute => Some(push("wpe".into(), vec![cfg.max_seq_len, d])),
            PosEncoding::Rotary => None,
        };
        let layers = (0..cfg.n_layers)
            .map(|l| LayerIdx {
                ln1_w: push(format!("h{l}.ln1.w"), vec![d]),
                ln1_b: push(format!("h{l}.ln1.b"), vec![d]),
                qkv_w: push(format!("h{l}.attn.qkv.w"), vec![d, 3 * d]),
                qkv_b: push(format!("h{l}.attn.qkv.b"), vec![3 * d]),
                proj_w: push(format!("h{l}.attn.proj.w"), vec![d, d]),
                proj_b: push(format!("h{l}.attn.proj.b"), vec![d]),
                ln2_w: push(format!("h{l}.ln2.w"), vec![d]),
                ln2_b: push(format!("h{l}.ln2.b"), vec![d]),
                fc_w: push(format!("h{l}.mlp.fc.w"), vec![d, f]),
                fc_b: push(format!("h{l}.mlp.fc.b"), vec![f]),
                out_w: push(format!("h{l}.mlp.proj.w"), vec![f, d]),
                out_b: push(format!("h{l}.mlp.proj.b"), vec![d]),
            })
            .collect();
        let lnf_w = push("lnf.w".into(), vec![d]);
        let lnf_b = push("lnf.b".into(), vec![d]);
        let head = push("lm_head".into(), vec![d, v]);
        let total = head.end;
        Layout {
            entries,
            wte,
            wpe,
            layers,
            lnf_w,
            lnf_b,
            head,
            total,
        }
    }

    pub fn entries(&self) -> &[TensorEntry] {
        &self.entries
    }

    pub fn total(&self) -> usize {
        self.total
    }

    pub fn entry(&self, name: &str) -> Option<&TensorEntry> {
        self.entries.iter().find(|e| e.name == name)
    }
}
