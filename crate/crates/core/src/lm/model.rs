use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::ops::{
    apply_mask, dropout_mask, gelu, gelu_grad, layer_norm, layer_norm_backward, linear,
    linear_backward, log_softmax, softmax_in_place, LnCache,
};
use super::{BlockLayout, ModelConfig, ModelParams};
use crate::corpus::TermId;
use crate::error::{Error, Result};

/// Examples per gradient chunk. Chunks are summed in index order so results
/// do not depend on the thread count.
const GRAD_CHUNK: usize = 4;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    /// Dropout off; the forward pass is a pure function of params and input.
    Eval,
    /// Dropout on, masks drawn from a stream derived from `seed`.
    Train { seed: u64 },
}

impl Mode {
    fn rng(self, stream: u64) -> Option<ChaCha8Rng> {
        match self {
            Mode::Eval => None,
            Mode::Train { seed } => {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                rng.set_stream(stream);
                Some(rng)
            }
        }
    }
}

#[derive(Clone, Debug)]
struct BlockCache {
    ln1: LnCache,
    a: Vec<f64>,
    q: Vec<f64>,
    k: Vec<f64>,
    v: Vec<f64>,
    probs: Vec<f64>,
    o: Vec<f64>,
    drop1: Option<Vec<f64>>,
    ln2: LnCache,
    b: Vec<f64>,
    u: Vec<f64>,
    h: Vec<f64>,
    drop2: Option<Vec<f64>>,
}

/// Encoder activations for one sequence; `hidden` is the final
/// representation, `len × d_model`.
#[derive(Clone, Debug)]
pub struct ForwardTrace {
    ids: Vec<TermId>,
    d: usize,
    emb_ln: LnCache,
    emb_drop: Option<Vec<f64>>,
    blocks: Vec<BlockCache>,
    final_ln: LnCache,
    hidden: Vec<f64>,
}

impl ForwardTrace {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn ids(&self) -> &[TermId] {
        &self.ids
    }

    pub fn hidden(&self) -> &[f64] {
        &self.hidden
    }

    pub fn hidden_row(&self, i: usize) -> &[f64] {
        &self.hidden[i * self.d..(i + 1) * self.d]
    }
}

/// Output of the augmentation head applied to an encoder trace.
#[derive(Clone, Debug)]
pub struct AugTrace {
    d: usize,
    blocks: Vec<BlockCache>,
    hidden: Vec<f64>,
}

impl AugTrace {
    pub fn hidden(&self) -> &[f64] {
        &self.hidden
    }

    pub fn hidden_row(&self, i: usize) -> &[f64] {
        &self.hidden[i * self.d..(i + 1) * self.d]
    }
}

struct MlmCache {
    input: Vec<f64>,
    u: Vec<f64>,
    ln: LnCache,
    t: Vec<f64>,
}

fn attention(
    q: &[f64],
    k: &[f64],
    v: &[f64],
    n: usize,
    heads: usize,
    d: usize,
) -> (Vec<f64>, Vec<f64>) {
    let dh = d / heads;
    let scale = 1.0 / (dh as f64).sqrt();
    let mut probs = vec![0.0; heads * n * n];
    let mut o = vec![0.0; n * d];
    for h in 0..heads {
        let c0 = h * dh;
        for i in 0..n {
            let row = &mut probs[(h * n + i) * n..(h * n + i + 1) * n];
            let qi = &q[i * d + c0..i * d + c0 + dh];
            for (j, r) in row.iter_mut().enumerate() {
                let kj = &k[j * d + c0..j * d + c0 + dh];
                *r = qi.iter().zip(kj).map(|(a, b)| a * b).sum::<f64>() * scale;
            }
            softmax_in_place(row);
            let oi = &mut o[i * d + c0..i * d + c0 + dh];
            for (j, &pij) in row.iter().enumerate() {
                let vj = &v[j * d + c0..j * d + c0 + dh];
                oi.iter_mut().zip(vj).for_each(|(a, b)| *a += pij * b);
            }
        }
    }
    (o, probs)
}

#[allow(clippy::too_many_arguments)]
fn attention_backward(
    cache: &BlockCache,
    d_o: &[f64],
    n: usize,
    heads: usize,
    d: usize,
    dq: &mut [f64],
    dk: &mut [f64],
    dv: &mut [f64],
) {
    let dh = d / heads;
    let scale = 1.0 / (dh as f64).sqrt();
    let mut dp = vec![0.0; n];
    for h in 0..heads {
        let c0 = h * dh;
        for i in 0..n {
            let row = &cache.probs[(h * n + i) * n..(h * n + i + 1) * n];
            let doi = &d_o[i * d + c0..i * d + c0 + dh];
            for j in 0..n {
                let vj = &cache.v[j * d + c0..j * d + c0 + dh];
                dp[j] = doi.iter().zip(vj).map(|(a, b)| a * b).sum();
                let dvj = &mut dv[j * d + c0..j * d + c0 + dh];
                dvj.iter_mut().zip(doi).for_each(|(g, x)| *g += row[j] * x);
            }
            let dot: f64 = row.iter().zip(&dp).map(|(a, b)| a * b).sum();
            for j in 0..n {
                let ds = row[j] * (dp[j] - dot) * scale;
                if ds == 0.0 {
                    continue;
                }
                for c in c0..c0 + dh {
                    dq[i * d + c] += ds * cache.k[j * d + c];
                    dk[j * d + c] += ds * cache.q[i * d + c];
                }
            }
        }
    }
}

fn block_forward(
    p: &[f32],
    bl: &BlockLayout,
    cfg: &ModelConfig,
    x: &[f64],
    n: usize,
    rng: &mut Option<ChaCha8Rng>,
) -> (Vec<f64>, BlockCache) {
    let d = cfg.d_model;
    let (a, ln1) = layer_norm(p, bl.ln1_g, bl.ln1_b, x, n);
    let q = linear(p, bl.wq, bl.bq, &a, n);
    let k = linear(p, bl.wk, bl.bk, &a, n);
    let v = linear(p, bl.wv, bl.bv, &a, n);
    let (o, probs) = attention(&q, &k, &v, n, cfg.n_heads, d);
    let mut attn = linear(p, bl.wo, bl.bo, &o, n);
    let drop1 = dropout_mask(rng.as_mut(), n * d, cfg.dropout);
    apply_mask(&mut attn, &drop1);
    let mid: Vec<f64> = x.iter().zip(&attn).map(|(a, b)| a + b).collect();
    let (b, ln2) = layer_norm(p, bl.ln2_g, bl.ln2_b, &mid, n);
    let u = linear(p, bl.w1, bl.b1, &b, n);
    let h: Vec<f64> = u.iter().map(|&x| gelu(x)).collect();
    let mut f = linear(p, bl.w2, bl.b2, &h, n);
    let drop2 = dropout_mask(rng.as_mut(), n * d, cfg.dropout);
    apply_mask(&mut f, &drop2);
    let out = mid.iter().zip(&f).map(|(a, b)| a + b).collect();
    let cache = BlockCache {
        ln1,
        a,
        q,
        k,
        v,
        probs,
        o,
        drop1,
        ln2,
        b,
        u,
        h,
        drop2,
    };
    (out, cache)
}

fn block_backward(
    p: &[f32],
    bl: &BlockLayout,
    cfg: &ModelConfig,
    cache: &BlockCache,
    n: usize,
    dout: &[f64],
    grads: &mut [f64],
) -> Vec<f64> {
    let d = cfg.d_model;
    let mut dmid = dout.to_vec();
    let mut df = dout.to_vec();
    apply_mask(&mut df, &cache.drop2);
    let mut dh = vec![0.0; n * cfg.d_ff];
    linear_backward(p, bl.w2, bl.b2, &cache.h, n, &df, Some(&mut dh), grads);
    let du: Vec<f64> = dh
        .iter()
        .zip(&cache.u)
        .map(|(g, &u)| g * gelu_grad(u))
        .collect();
    let mut db = vec![0.0; n * d];
    linear_backward(p, bl.w1, bl.b1, &cache.b, n, &du, Some(&mut db), grads);
    layer_norm_backward(p, bl.ln2_g, bl.ln2_b, &cache.ln2, &db, &mut dmid, grads);

    let mut dx = dmid.clone();
    let mut dattn = dmid;
    apply_mask(&mut dattn, &cache.drop1);
    let mut d_o = vec![0.0; n * d];
    linear_backward(p, bl.wo, bl.bo, &cache.o, n, &dattn, Some(&mut d_o), grads);
    let (mut dq, mut dk, mut dv) = (vec![0.0; n * d], vec![0.0; n * d], vec![0.0; n * d]);
    attention_backward(cache, &d_o, n, cfg.n_heads, d, &mut dq, &mut dk, &mut dv);
    let mut da = vec![0.0; n * d];
    linear_backward(p, bl.wq, bl.bq, &cache.a, n, &dq, Some(&mut da), grads);
    linear_backward(p, bl.wk, bl.bk, &cache.a, n, &dk, Some(&mut da), grads);
    linear_backward(p, bl.wv, bl.bv, &cache.a, n, &dv, Some(&mut da), grads);
    layer_norm_backward(p, bl.ln1_g, bl.ln1_b, &cache.ln1, &da, &mut dx, grads);
    dx
}

impl ModelParams {
    fn check_ids(&self, ids: &[TermId]) -> Result<()> {
        if ids.is_empty() {
            return Err(Error::InvalidInput(
                "cannot encode an empty sequence".into(),
            ));
        }
        if ids.len() > self.config.max_len {
            return Err(Error::TooLong {
                len: ids.len(),
                max_len: self.config.max_len,
            });
        }
        if let Some(&bad) = ids.iter().find(|&&t| t as usize >= self.config.vocab_size) {
            return Err(Error::InvalidInput(format!(
                "token id {bad} outside vocabulary of size {}",
                self.config.vocab_size
            )));
        }
        Ok(())
    }

    fn encode_with(&self, ids: &[TermId], rng: &mut Option<ChaCha8Rng>) -> Result<ForwardTrace> {
        self.check_ids(ids)?;
        let (p, lay, cfg) = (&self.data[..], &self.layout, &self.config);
        let (n, d) = (ids.len(), cfg.d_model);
        let tok = lay.tok_emb.of(p);
        let pos = lay.pos_emb.of(p);
        let mut e = vec![0.0; n * d];
        for (i, &id) in ids.iter().enumerate() {
            let t = &tok[id as usize * d..(id as usize + 1) * d];
            let q = &pos[i * d..(i + 1) * d];
            for c in 0..d {
                e[i * d + c] = t[c] as f64 + q[c] as f64;
            }
        }
        let (mut x, emb_ln) = layer_norm(p, lay.emb_ln_g, lay.emb_ln_b, &e, n);
        let emb_drop = dropout_mask(rng.as_mut(), n * d, cfg.dropout);
        apply_mask(&mut x, &emb_drop);
        let mut blocks = Vec::with_capacity(lay.blocks.len());
        for bl in &lay.blocks {
            let (y, cache) = block_forward(p, bl, cfg, &x, n, rng);
            x = y;
            blocks.push(cache);
        }
        let (hidden, final_ln) = layer_norm(p, lay.final_ln_g, lay.final_ln_b, &x, n);
        Ok(ForwardTrace {
            ids: ids.to_vec(),
            d,
            emb_ln,
            emb_drop,
            blocks,
            final_ln,
            hidden,
        })
    }

    /// Runs the encoder over one sequence. Sequences longer than `max_len`
    /// are rejected rather than truncated.
    pub fn encode(&self, ids: &[TermId], mode: Mode) -> Result<ForwardTrace> {
        self.encode_with(ids, &mut mode.rng(0))
    }

    /// Eval-mode encoding of several sequences, in parallel.
    pub fn encode_batch(&self, batch: &[Vec<TermId>]) -> Result<Vec<ForwardTrace>> {
        batch
            .par_iter()
            .map(|ids| self.encode(ids, Mode::Eval))
            .collect()
    }

    fn encoder_backward(&self, trace: &ForwardTrace, dh: &[f64], grads: &mut [f64]) {
        let (p, lay, cfg) = (&self.data[..], &self.layout, &self.config);
        let (n, d) = (trace.len(), cfg.d_model);
        let mut dx = vec![0.0; n * d];
        layer_norm_backward(
            p,
            lay.final_ln_g,
            lay.final_ln_b,
            &trace.final_ln,
            dh,
            &mut dx,
            grads,
        );
        for (bl, cache) in lay.blocks.iter().zip(&trace.blocks).rev() {
            dx = block_backward(p, bl, cfg, cache, n, &dx, grads);
        }
        apply_mask(&mut dx, &trace.emb_drop);
        let mut de = vec![0.0; n * d];
        layer_norm_backward(
            p,
            lay.emb_ln_g,
            lay.emb_ln_b,
            &trace.emb_ln,
            &dx,
            &mut de,
            grads,
        );
        for (i, &id) in trace.ids.iter().enumerate() {
            let t0 = lay.tok_emb.off + id as usize * d;
            let p0 = lay.pos_emb.off + i * d;
            for c in 0..d {
                grads[t0 + c] += de[i * d + c];
                grads[p0 + c] += de[i * d + c];
            }
        }
    }

    fn aug_with(&self, trace: &ForwardTrace, rng: &mut Option<ChaCha8Rng>) -> AugTrace {
        let n = trace.len();
        let mut x = trace.hidden.clone();
        let mut blocks = Vec::with_capacity(self.layout.aug.len());
        for bl in &self.layout.aug {
            let (y, cache) = block_forward(&self.data, bl, &self.config, &x, n, rng);
            x = y;
            blocks.push(cache);
        }
        AugTrace {
            d: trace.d,
            blocks,
            hidden: x,
        }
    }

    /// Applies the two augmentation blocks on top of the encoder output.
    pub fn aug_encode(&self, trace: &ForwardTrace, mode: Mode) -> AugTrace {
        self.aug_with(trace, &mut mode.rng(1))
    }

    fn aug_backward(&self, aug: &AugTrace, n: usize, dh: &[f64], grads: &mut [f64]) -> Vec<f64> {
        let mut dx = dh.to_vec();
        for (bl, cache) in self.layout.aug.iter().zip(&aug.blocks).rev() {
            dx = block_backward(&self.data, bl, &self.config, cache, n, &dx, grads);
        }
        dx
    }

    fn cls_forward(&self, h0: &[f64]) -> ([f64; 2], Vec<f64>) {
        let (p, lay) = (&self.data[..], &self.layout);
        let z: Vec<f64> = linear(p, lay.cls_dense, lay.cls_dense_b, h0, 1)
            .into_iter()
            .map(f64::tanh)
            .collect();
        let out = linear(p, lay.cls_out, lay.cls_out_b, &z, 1);
        ([out[0], out[1]], z)
    }

    fn cls_backward(
        &self,
        h0: &[f64],
        z: &[f64],
        dlogits: [f64; 2],
        grads: &mut [f64],
    ) -> Vec<f64> {
        let (p, lay) = (&self.data[..], &self.layout);
        let mut dz = vec![0.0; z.len()];
        linear_backward(
            p,
            lay.cls_out,
            lay.cls_out_b,
            z,
            1,
            &dlogits,
            Some(&mut dz),
            grads,
        );
        let dpre: Vec<f64> = dz.iter().zip(z).map(|(g, z)| g * (1.0 - z * z)).collect();
        let mut dh = vec![0.0; h0.len()];
        linear_backward(
            p,
            lay.cls_dense,
            lay.cls_dense_b,
            h0,
            1,
            &dpre,
            Some(&mut dh),
            grads,
        );
        dh
    }

    /// Class probabilities from the first (`[CLS]`) position of the trace.
    pub fn classify(&self, trace: &ForwardTrace) -> [f64; 2] {
        let (mut logits, _) = self.cls_forward(trace.hidden_row(0));
        softmax_in_place(&mut logits);
        logits
    }

    fn mlm_forward(&self, row: &[f64]) -> (Vec<f64>, MlmCache) {
        let (p, lay) = (&self.data[..], &self.layout);
        let d = self.config.d_model;
        let u = linear(p, lay.mlm_dense, lay.mlm_dense_b, row, 1);
        let g: Vec<f64> = u.iter().map(|&x| gelu(x)).collect();
        let (t, ln) = layer_norm(p, lay.mlm_ln_g, lay.mlm_ln_b, &g, 1);
        let tok = lay.tok_emb.of(p);
        let logits = lay
            .mlm_bias
            .of(p)
            .iter()
            .enumerate()
            .map(|(v, &b)| {
                let e = &tok[v * d..(v + 1) * d];
                b as f64 + e.iter().zip(&t).map(|(&w, x)| w as f64 * x).sum::<f64>()
            })
            .collect();
        (
            logits,
            MlmCache {
                input: row.to_vec(),
                u,
                ln,
                t,
            },
        )
    }

    fn mlm_backward(&self, cache: &MlmCache, dlogits: &[f64], grads: &mut [f64]) -> Vec<f64> {
        let (p, lay) = (&self.data[..], &self.layout);
        let d = self.config.d_model;
        let tok = lay.tok_emb.of(p);
        let mut dt = vec![0.0; d];
        for (v, &dl) in dlogits.iter().enumerate() {
            grads[lay.mlm_bias.off + v] += dl;
            let g0 = lay.tok_emb.off + v * d;
            for c in 0..d {
                grads[g0 + c] += dl * cache.t[c];
                dt[c] += dl * tok[v * d + c] as f64;
            }
        }
        let mut dg = vec![0.0; d];
        layer_norm_backward(
            p,
            lay.mlm_ln_g,
            lay.mlm_ln_b,
            &cache.ln,
            &dt,
            &mut dg,
            grads,
        );
        let du: Vec<f64> = dg
            .iter()
            .zip(&cache.u)
            .map(|(g, &u)| g * gelu_grad(u))
            .collect();
        let mut drow = vec![0.0; d];
        linear_backward(
            p,
            lay.mlm_dense,
            lay.mlm_dense_b,
            &cache.input,
            1,
            &du,
            Some(&mut drow),
            grads,
        );
        drow
    }

    /// Log-probabilities over the vocabulary at each queried row of a
    /// `len × d_model` hidden-state matrix.
    pub fn mlm_log_probs(&self, hidden: &[f64], positions: &[usize]) -> Result<Vec<Vec<f64>>> {
        let d = self.config.d_model;
        let n = hidden.len() / d;
        positions
            .iter()
            .map(|&i| {
                if i >= n {
                    return Err(Error::InvalidInput(format!(
                        "position {i} outside sequence of length {n}"
                    )));
                }
                Ok(log_softmax(
                    &self.mlm_forward(&hidden[i * d..(i + 1) * d]).0,
                ))
            })
            .collect()
    }

    /// Vocabulary distributions at the queried positions.
    pub fn mlm_probs(&self, hidden: &[f64], positions: &[usize]) -> Result<Vec<Vec<f64>>> {
        Ok(self
            .mlm_log_probs(hidden, positions)?
            .into_iter()
            .map(|row| row.into_iter().map(f64::exp).collect())
            .collect())
    }
}

/// A `[CLS]`-prefixed masked sentence with its binary label.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CoarseExample {
    pub ids: Vec<TermId>,
    pub label: u8,
}

/// The heavily masked copy of a sentence used by the augmentation branch.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CamInput {
    pub ids: Vec<TermId>,
    pub positions: Vec<usize>,
    pub targets: Vec<TermId>,
}

/// A single-target masked sentence, optionally paired with its CAM copy.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FineExample {
    pub ids: Vec<TermId>,
    pub target_pos: usize,
    pub target: TermId,
    pub cam: Option<CamInput>,
}

#[derive(Clone, Copy, Debug)]
pub enum Batch<'a> {
    Coarse(&'a [CoarseExample]),
    /// `cam_weight = 0` skips the augmentation branch entirely.
    Fine {
        examples: &'a [FineExample],
        cam_weight: f64,
    },
}

impl Batch<'_> {
    pub fn len(&self) -> usize {
        match self {
            Batch::Coarse(x) => x.len(),
            Batch::Fine { examples, .. } => examples.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Cross-entropy of `logits` against `target`; returns the loss and `softmax - onehot`.
fn cross_entropy(logits: &[f64], target: usize) -> (f64, Vec<f64>) {
    let lp = log_softmax(logits);
    let loss = -lp[target];
    let mut grad: Vec<f64> = lp.into_iter().map(f64::exp).collect();
    grad[target] -= 1.0;
    (loss, grad)
}

fn scale(v: &mut [f64], s: f64) {
    v.iter_mut().for_each(|x| *x *= s);
}

fn coarse_example(
    m: &ModelParams,
    ex: &CoarseExample,
    rng: &mut Option<ChaCha8Rng>,
    s: f64,
    grads: Option<&mut [f64]>,
) -> Result<f64> {
    if ex.label > 1 {
        return Err(Error::InvalidInput(format!(
            "coarse label must be 0 or 1, got {}",
            ex.label
        )));
    }
    let trace = m.encode_with(&ex.ids, rng)?;
    let h0 = trace.hidden_row(0).to_vec();
    let (logits, z) = m.cls_forward(&h0);
    let (loss, mut dl) = cross_entropy(&logits, ex.label as usize);
    if let Some(grads) = grads {
        scale(&mut dl, s);
        let dh0 = m.cls_backward(&h0, &z, [dl[0], dl[1]], grads);
        let mut dh = vec![0.0; trace.hidden.len()];
        dh[..dh0.len()].copy_from_slice(&dh0);
        m.encoder_backward(&trace, &dh, grads);
    }
    Ok(loss)
}

fn fine_example(
    m: &ModelParams,
    ex: &FineExample,
    cam_weight: f64,
    rngs: (&mut Option<ChaCha8Rng>, &mut Option<ChaCha8Rng>),
    s: f64,
    mut grads: Option<&mut [f64]>,
) -> Result<f64> {
    let d = m.config.d_model;
    if ex.target_pos >= ex.ids.len() {
        return Err(Error::InvalidInput(
            "MLM target position outside the sentence".into(),
        ));
    }
    let trace = m.encode_with(&ex.ids, rngs.0)?;
    let (logits, cache) = m.mlm_forward(trace.hidden_row(ex.target_pos));
    let (mut loss, mut dl) = cross_entropy(&logits, ex.target as usize);
    if let Some(g) = grads.as_deref_mut() {
        scale(&mut dl, s);
        let drow = m.mlm_backward(&cache, &dl, g);
        let mut dh = vec![0.0; trace.hidden.len()];
        dh[ex.target_pos * d..(ex.target_pos + 1) * d].copy_from_slice(&drow);
        m.encoder_backward(&trace, &dh, g);
    }
    if cam_weight == 0.0 {
        return Ok(loss);
    }
    let cam = ex.cam.as_ref().ok_or_else(|| {
        Error::InvalidInput("CAM branch enabled but example has no CAM input".into())
    })?;
    if cam.positions.is_empty() || cam.positions.len() != cam.targets.len() {
        return Err(Error::InvalidInput(
            "CAM input needs at least one masked position".into(),
        ));
    }
    let trace = m.encode_with(&cam.ids, rngs.1)?;
    let aug = m.aug_with(&trace, rngs.1);
    let n_cam = cam.positions.len() as f64;
    let mut dh = grads.as_ref().map(|_| vec![0.0; aug.hidden.len()]);
    let mut cam_loss = 0.0;
    for (&pos, &target) in cam.positions.iter().zip(&cam.targets) {
        if pos >= cam.ids.len() {
            return Err(Error::InvalidInput(
                "CAM position outside the sentence".into(),
            ));
        }
        let (logits, cache) = m.mlm_forward(aug.hidden_row(pos));
        let (l, mut dl) = cross_entropy(&logits, target as usize);
        cam_loss += l;
        if let (Some(g), Some(dh)) = (grads.as_deref_mut(), dh.as_mut()) {
            scale(&mut dl, s * cam_weight / n_cam);
            let drow = m.mlm_backward(&cache, &dl, g);
            dh[pos * d..(pos + 1) * d]
                .iter_mut()
                .zip(&drow)
                .for_each(|(a, b)| *a += b);
        }
    }
    if let (Some(g), Some(dh)) = (grads, dh) {
        let dhat = m.aug_backward(&aug, trace.len(), &dh, g);
        m.encoder_backward(&trace, &dhat, g);
    }
    loss += cam_weight * cam_loss / n_cam;
    Ok(loss)
}

fn example_loss(
    m: &ModelParams,
    batch: Batch<'_>,
    i: usize,
    mode: Mode,
    s: f64,
    grads: Option<&mut [f64]>,
) -> Result<f64> {
    let stream = 2 * i as u64;
    match batch {
        Batch::Coarse(xs) => coarse_example(m, &xs[i], &mut mode.rng(stream), s, grads),
        Batch::Fine {
            examples,
            cam_weight,
        } => fine_example(
            m,
            &examples[i],
            cam_weight,
            (&mut mode.rng(stream), &mut mode.rng(stream + 1)),
            s,
            grads,
        ),
    }
}

/// Mean batch loss and its gradient with respect to every parameter.
pub fn loss_and_grad(m: &ModelParams, batch: Batch<'_>, mode: Mode) -> Result<(f64, Vec<f64>)> {
    let b = batch.len();
    if b == 0 {
        return Err(Error::NothingToTrain);
    }
    let s = 1.0 / b as f64;
    let n_chunks = b.div_ceil(GRAD_CHUNK);
    let parts: Vec<(f64, Vec<f64>)> = (0..n_chunks)
        .into_par_iter()
        .map(|c| {
            let mut g = vec![0.0; m.n_params()];
            let mut loss = 0.0;
            for i in c * GRAD_CHUNK..((c + 1) * GRAD_CHUNK).min(b) {
                loss += example_loss(m, batch, i, mode, s, Some(&mut g))?;
            }
            Ok((loss, g))
        })
        .collect::<Result<_>>()?;
    let mut parts = parts.into_iter();
    let (mut loss, mut grads) = parts.next().expect("at least one chunk");
    for (l, g) in parts {
        loss += l;
        grads.iter_mut().zip(&g).for_each(|(a, b)| *a += b);
    }
    Ok((loss * s, grads))
}

/// Eval-mode mean loss without gradients.
pub fn batch_loss(m: &ModelParams, batch: Batch<'_>) -> Result<f64> {
    let b = batch.len();
    if b == 0 {
        return Err(Error::NothingToTrain);
    }
    let losses: Vec<f64> = (0..b)
        .into_par_iter()
        .map(|i| example_loss(m, batch, i, Mode::Eval, 1.0, None))
        .collect::<Result<_>>()?;
    Ok(losses.iter().sum::<f64>() / b as f64)
}

/// Mean negative log-likelihood of the gold class.
pub fn loss_coarse(p: &[[f64; 2]], labels: &[u8]) -> Result<f64> {
    if p.len() != labels.len() || p.is_empty() {
        return Err(Error::InvalidInput(
            "need one non-empty probability row per label".into(),
        ));
    }
    let total: f64 = p
        .iter()
        .zip(labels)
        .map(|(row, &y)| -row[y.min(1) as usize].ln())
        .sum();
    Ok(total / p.len() as f64)
}

/// Cross-entropy of the MLM branch at its single target plus the mean
/// cross-entropy of the augmentation branch over its masked positions.
pub fn loss_fine(
    mlm_dist: &[f64],
    target: TermId,
    cam_dists: &[Vec<f64>],
    cam_targets: &[TermId],
) -> Result<f64> {
    if cam_dists.is_empty() {
        return Err(Error::InvalidInput(
            "CAM branch needs at least one masked position".into(),
        ));
    }
    if cam_dists.len() != cam_targets.len() {
        return Err(Error::InvalidInput(
            "one CAM target per CAM distribution".into(),
        ));
    }
    let cam: f64 = cam_dists
        .iter()
        .zip(cam_targets)
        .map(|(row, &t)| -row[t as usize].ln())
        .sum::<f64>()
        / cam_dists.len() as f64;
    Ok(-mlm_dist[target as usize].ln() + cam)
}
