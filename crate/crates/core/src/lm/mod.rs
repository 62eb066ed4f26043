//! A small transformer encoder written from scratch: token + learned position
//! embeddings, pre-LN blocks, a `[CLS]` classification head, a weight-tied
//! masked-LM head and a two-block augmentation head feeding the MLM head.
//!
//! Parameters are stored as `f32`; activations and gradients are `f64`.

mod checkpoint;
mod gradcheck;
mod model;
mod ops;
mod optim;

use std::fmt;
use std::ops::Range;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use checkpoint::{load_checkpoint, save_checkpoint, CHECKPOINT_VERSION};
pub use gradcheck::{gradient_check, TensorCheck, ABS_FLOOR};
pub use model::{
    batch_loss, loss_and_grad, loss_coarse, loss_fine, AugTrace, Batch, CamInput, CoarseExample,
    FineExample, ForwardTrace, Mode,
};
pub use optim::{backward_step, Adam, AdamConfig};

/// Number of transformer blocks in the augmentation head.
pub const AUG_LAYERS: usize = 2;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub n_layers: usize,
    pub n_heads: usize,
    pub d_model: usize,
    pub d_ff: usize,
    pub max_len: usize,
    pub vocab_size: usize,
    pub n_aug_layers: usize,
    pub dropout: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            n_layers: 4,
            n_heads: 4,
            d_model: 128,
            d_ff: 512,
            max_len: 128,
            vocab_size: 0,
            n_aug_layers: AUG_LAYERS,
            dropout: 0.1,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: &str| Err(Error::InvalidInput(format!("model config: {m}")));
        if self.n_layers == 0 || self.n_heads == 0 || self.d_model == 0 || self.d_ff == 0 {
            return fail("layer, head and width sizes must be positive");
        }
        if !self.d_model.is_multiple_of(self.n_heads) {
            return fail("d_model must be divisible by n_heads");
        }
        if self.n_aug_layers != AUG_LAYERS {
            return fail("the augmentation head has exactly two layers");
        }
        if self.vocab_size == 0 || self.max_len == 0 {
            return fail("vocab_size and max_len must be positive");
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return fail("dropout must lie in [0, 1)");
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.d_model / self.n_heads
    }
}

/// Location of one parameter tensor inside the flat buffer (row-major).
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) struct Tensor {
    pub off: usize,
    pub rows: usize,
    pub cols: usize,
}

impl Tensor {
    pub fn len(self) -> usize {
        self.rows * self.cols
    }

    pub fn range(self) -> Range<usize> {
        self.off..self.off + self.len()
    }

    pub fn of(self, p: &[f32]) -> &[f32] {
        &p[self.range()]
    }
}

#[derive(Clone, Debug)]
pub(crate) struct BlockLayout {
    pub ln1_g: Tensor,
    pub ln1_b: Tensor,
    pub wq: Tensor,
    pub bq: Tensor,
    pub wk: Tensor,
    pub bk: Tensor,
    pub wv: Tensor,
    pub bv: Tensor,
    pub wo: Tensor,
    pub bo: Tensor,
    pub ln2_g: Tensor,
    pub ln2_b: Tensor,
    pub w1: Tensor,
    pub b1: Tensor,
    pub w2: Tensor,
    pub b2: Tensor,
}

/// Named tensor with its shape, in checkpoint order.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TensorSpec {
    pub name: String,
    pub shape: Vec<usize>,
    #[serde(skip)]
    pub(crate) offset: usize,
}

impl TensorSpec {
    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn range(&self) -> Range<usize> {
        self.offset..self.offset + self.len()
    }
}

#[derive(Clone, Debug)]
pub(crate) struct Layout {
    pub tok_emb: Tensor,
    pub pos_emb: Tensor,
    pub emb_ln_g: Tensor,
    pub emb_ln_b: Tensor,
    pub blocks: Vec<BlockLayout>,
    pub final_ln_g: Tensor,
    pub final_ln_b: Tensor,
    pub aug: Vec<BlockLayout>,
    pub mlm_dense: Tensor,
    pub mlm_dense_b: Tensor,
    pub mlm_ln_g: Tensor,
    pub mlm_ln_b: Tensor,
    pub mlm_bias: Tensor,
    pub cls_dense: Tensor,
    pub cls_dense_b: Tensor,
    pub cls_out: Tensor,
    pub cls_out_b: Tensor,
    pub specs: Vec<TensorSpec>,
    pub total: usize,
}

#[derive(Default)]
struct LayoutBuilder {
    specs: Vec<TensorSpec>,
    total: usize,
}

impl LayoutBuilder {
    fn push(&mut self, name: String, rows: usize, cols: usize) -> Tensor {
        let t = Tensor {
            off: self.total,
            rows,
            cols,
        };
        let shape = if rows == 1 {
            vec![cols]
        } else {
            vec![rows, cols]
        };
        self.specs.push(TensorSpec {
            name,
            shape,
            offset: self.total,
        });
        self.total += rows * cols;
        t
    }

    fn block(&mut self, prefix: &str, d: usize, ff: usize) -> BlockLayout {
        let mut t = |name: &str, r, c| self.push(format!("{prefix}.{name}"), r, c);
        BlockLayout {
            ln1_g: t("ln1.gamma", 1, d),
            ln1_b: t("ln1.beta", 1, d),
            wq: t("attn.wq", d, d),
            bq: t("attn.bq", 1, d),
            wk: t("attn.wk", d, d),
            bk: t("attn.bk", 1, d),
            wv: t("attn.wv", d, d),
            bv: t("attn.bv", 1, d),
            wo: t("attn.wo", d, d),
            bo: t("attn.bo", 1, d),
            ln2_g: t("ln2.gamma", 1, d),
            ln2_b: t("ln2.beta", 1, d),
            w1: t("ffn.w1", d, ff),
            b1: t("ffn.b1", 1, ff),
            w2: t("ffn.w2", ff, d),
            b2: t("ffn.b2", 1, d),
        }
    }
}

impl Layout {
    pub fn new(cfg: &ModelConfig) -> Self {
        let (d, ff, v) = (cfg.d_model, cfg.d_ff, cfg.vocab_size);
        let mut b = LayoutBuilder::default();
        let tok_emb = b.push("embed.token".into(), v, d);
        let pos_emb = b.push("embed.position".into(), cfg.max_len, d);
        let emb_ln_g = b.push("embed.ln.gamma".into(), 1, d);
        let emb_ln_b = b.push("embed.ln.beta".into(), 1, d);
        let blocks = (0..cfg.n_layers)
            .map(|l| b.block(&format!("encoder.{l}"), d, ff))
            .collect();
        let final_ln_g = b.push("encoder.final_ln.gamma".into(), 1, d);
        let final_ln_b = b.push("encoder.final_ln.beta".into(), 1, d);
        let aug = (0..cfg.n_aug_layers)
            .map(|l| b.block(&format!("aug.{l}"), d, ff))
            .collect();
        let mlm_dense = b.push("mlm.dense.w".into(), d, d);
        let mlm_dense_b = b.push("mlm.dense.b".into(), 1, d);
        let mlm_ln_g = b.push("mlm.ln.gamma".into(), 1, d);
        let mlm_ln_b = b.push("mlm.ln.beta".into(), 1, d);
        let mlm_bias = b.push("mlm.bias".into(), 1, v);
        let cls_dense = b.push("cls.dense.w".into(), d, d);
        let cls_dense_b = b.push("cls.dense.b".into(), 1, d);
        let cls_out = b.push("cls.out.w".into(), d, 2);
        let cls_out_b = b.push("cls.out.b".into(), 1, 2);
        Layout {
            tok_emb,
            pos_emb,
            emb_ln_g,
            emb_ln_b,
            blocks,
            final_ln_g,
            final_ln_b,
            aug,
            mlm_dense,
            mlm_dense_b,
            mlm_ln_g,
            mlm_ln_b,
            mlm_bias,
            cls_dense,
            cls_dense_b,
            cls_out,
            cls_out_b,
            specs: b.specs,
            total: b.total,
        }
    }
}

/// All trainable weights of one model, with their configuration.
#[derive(Clone)]
pub struct ModelParams {
    config: ModelConfig,
    layout: Layout,
    data: Vec<f32>,
}

impl fmt::Debug for ModelParams {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ModelParams")
            .field("config", &self.config)
            .field("n_params", &self.data.len())
            .finish()
    }
}

impl PartialEq for ModelParams {
    fn eq(&self, other: &Self) -> bool {
        self.config == other.config && self.data == other.data
    }
}

impl ModelParams {
    /// Gaussian(0, 0.02) weights, Gaussian(0, 1/sqrt(d_model)) embeddings,
    /// zero biases, unit layer-norm gains.
    pub fn init(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let layout = Layout::new(&config);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let normal = Normal::new(0.0f32, 0.02).expect("valid std");
        let embed = Normal::new(0.0f32, (config.d_model as f32).sqrt().recip()).expect("valid std");
        let mut data = vec![0.0f32; layout.total];
        for spec in &layout.specs {
            let slot = &mut data[spec.range()];
            if spec.name.ends_with(".gamma") {
                slot.fill(1.0);
            } else if spec.name.starts_with("embed.") && spec.shape.len() == 2 {
                slot.iter_mut().for_each(|x| *x = embed.sample(&mut rng));
            } else if spec.shape.len() == 2 {
                slot.iter_mut().for_each(|x| *x = normal.sample(&mut rng));
            }
        }
        Ok(ModelParams {
            config,
            layout,
            data,
        })
    }

    pub(crate) fn from_parts(config: ModelConfig, data: Vec<f32>) -> Result<Self> {
        config.validate()?;
        let layout = Layout::new(&config);
        if layout.total != data.len() {
            return Err(Error::Checkpoint(format!(
                "expected {} parameters for this config, found {}",
                layout.total,
                data.len()
            )));
        }
        Ok(ModelParams {
            config,
            layout,
            data,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn n_params(&self) -> usize {
        self.data.len()
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn tensors(&self) -> &[TensorSpec] {
        &self.layout.specs
    }

    pub fn tensor(&self, name: &str) -> Option<&[f32]> {
        self.layout
            .specs
            .iter()
            .find(|s| s.name == name)
            .map(|s| &self.data[s.range()])
    }

    pub fn tensor_mut(&mut self, name: &str) -> Option<&mut [f32]> {
        let range = self.layout.specs.iter().find(|s| s.name == name)?.range();
        Some(&mut self.data[range])
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    /// Zeroes the output projections of every augmentation block so the head
    /// becomes an exact residual passthrough.
    pub fn zero_aug_residuals(&mut self) {
        for b in self.layout.aug.clone() {
            for t in [b.wo, b.bo, b.w2, b.b2] {
                self.data[t.range()].fill(0.0);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn tiny(vocab: usize) -> ModelConfig {
        ModelConfig {
            n_layers: 1,
            n_heads: 2,
            d_model: 8,
            d_ff: 16,
            max_len: 12,
            vocab_size: vocab,
            n_aug_layers: 2,
            dropout: 0.0,
        }
    }

    #[test]
    fn layout_is_contiguous_and_complete() {
        let cfg = tiny(20);
        let l = Layout::new(&cfg);
        let mut off = 0;
        for s in &l.specs {
            assert_eq!(s.offset, off);
            off += s.len();
        }
        assert_eq!(off, l.total);
        let names: std::collections::HashSet<_> = l.specs.iter().map(|s| &s.name).collect();
        assert_eq!(names.len(), l.specs.len());
        assert_eq!(l.tok_emb.len(), 20 * 8);
        assert_eq!(l.aug.len(), 2);
    }

    #[test]
    fn config_validation() {
        let mut cfg = tiny(10);
        assert!(cfg.validate().is_ok());
        cfg.n_heads = 3;
        assert!(cfg.validate().is_err());
        let mut cfg = tiny(10);
        cfg.n_aug_layers = 1;
        assert!(cfg.validate().is_err());
        let mut cfg = tiny(10);
        cfg.vocab_size = 0;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn init_is_seeded() {
        let a = ModelParams::init(tiny(10), 1).unwrap();
        let b = ModelParams::init(tiny(10), 1).unwrap();
        let c = ModelParams::init(tiny(10), 2).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
        assert!(a
            .tensor("embed.ln.gamma")
            .unwrap()
            .iter()
            .all(|&g| g == 1.0));
        assert!(a.tensor("mlm.bias").unwrap().iter().all(|&g| g == 0.0));
    }
}
