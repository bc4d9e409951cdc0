use crate::autodiff::{Bindings, Graph, NodeId};
use crate::corpus::EOS_ID;

use super::*;

/// Summed token cross-entropy of a batch and its parameter gradients.
#[derive(Clone, Debug)]
pub struct BatchLoss {
    pub loss: f64,
    /// Target tokens scored, `</s>` included.
    pub tokens: usize,
    /// One gradient per parameter, in [`PARAM_NAMES`] order.
    pub grads: Vec<Array>,
}

struct Builder<'m> {
    g: Graph,
    p: Vec<NodeId>,
    model: &'m Model,
}

impl Builder<'_> {
    fn lstm(&mut self, w: usize, b: usize, x: NodeId, h: NodeId, c: NodeId) -> (NodeId, NodeId) {
        let n = self.model.config.hidden;
        let g = &mut self.g;
        let input = g.concat(&[x, h]);
        let wx = g.matvec(self.p[w], input);
        let z = g.add(wx, self.p[b]);
        let zi = g.slice(z, 0, n);
        let zf = g.slice(z, n, n);
        let zg = g.slice(z, 2 * n, n);
        let zo = g.slice(z, 3 * n, n);
        let i = g.sigmoid(zi);
        let f = g.sigmoid(zf);
        let cand = g.tanh(zg);
        let o = g.sigmoid(zo);
        let keep = g.mul(f, c);
        let write = g.mul(i, cand);
        let c2 = g.add(keep, write);
        let tc = g.tanh(c2);
        let h2 = g.mul(o, tc);
        (h2, c2)
    }

    fn mask(&mut self, x: NodeId, mask: Option<NodeId>) -> NodeId {
        match mask {
            Some(m) => self.g.mul(x, m),
            None => x,
        }
    }

    fn sentence(&mut self, source: &[u32], target: &[u32], masks: Option<&SentenceMasks>, out: &mut Vec<NodeId>) {
        let cfg = &self.model.config;
        let (hid, tv) = (cfg.hidden, cfg.target_vocab);
        let constant = |b: &mut Self, v: &[f64]| b.g.constant(Array::vector(v.to_vec()));
        let m = masks.map(|m| {
            [
                constant(self, &m.enc_fwd_input),
                constant(self, &m.enc_fwd_hidden),
                constant(self, &m.enc_bwd_input),
                constant(self, &m.enc_bwd_hidden),
                constant(self, &m.dec_input),
                constant(self, &m.dec_hidden),
                constant(self, &m.output),
            ]
        });
        let mk = |i: usize| m.map(|m| m[i]);
        let zero = self.g.constant(Array::zeros(&[hid]));

        let run = |b: &mut Self, order: Vec<usize>, w: usize, bias: usize, mi: Option<NodeId>, mh: Option<NodeId>| {
            let mut out = vec![zero; source.len()];
            let (mut h, mut c) = (zero, zero);
            for i in order {
                let e = b.g.gather(b.p[SRC_EMBED], source[i] as usize);
                let x = b.mask(e, mi);
                let hin = b.mask(h, mh);
                (h, c) = b.lstm(w, bias, x, hin, c);
                out[i] = h;
            }
            out
        };
        let fwd = run(self, (0..source.len()).collect(), ENC_FWD_W, ENC_FWD_B, mk(0), mk(1));
        let bwd = run(self, (0..source.len()).rev().collect(), ENC_BWD_W, ENC_BWD_B, mk(2), mk(3));

        let g = &mut self.g;
        let states: Vec<NodeId> = fwd.iter().zip(&bwd).map(|(&f, &b)| g.concat(&[f, b])).collect();
        let hmat = g.stack(&states);
        let keys = g.matmul_t(hmat, self.p[ATT_ENC]);
        let init = g.matvec(self.p[DEC_INIT_W], bwd[0]);
        let mut h = g.add(init, self.p[DEC_INIT_B]);
        let mut c = zero;
        let lex = self
            .model
            .lexicon_bias()
            .map(|(prior, eps)| (g.constant(prior.dense(source, tv)), eps));

        let mut prev = EOS_ID;
        for &y in target.iter().chain(std::iter::once(&EOS_ID)) {
            let g = &mut self.g;
            let q = g.matvec(self.p[ATT_DEC], h);
            let pre = g.add_row(keys, q);
            let e = g.tanh(pre);
            let scores = g.matvec(e, self.p[ATT_V]);
            let a = g.softmax(scores);
            let ctx = g.vecmat(a, hmat);
            let emb = g.gather(self.p[TGT_EMBED], prev as usize);
            let x = g.concat(&[emb, ctx]);
            let x = self.mask(x, mk(4));
            let hin = self.mask(h, mk(5));
            (h, c) = self.lstm(DEC_W, DEC_B, x, hin, c);
            let g = &mut self.g;
            let o = g.concat(&[h, ctx]);
            let o = self.mask(o, mk(6));
            let g = &mut self.g;
            let wo = g.matvec(self.p[OUT_W], o);
            let mut logits = g.add(wo, self.p[OUT_B]);
            if let Some((l, eps)) = lex {
                let mix = g.matvec(l, a);
                let floored = g.add_scalar(mix, eps);
                let bias = g.log(floored);
                logits = g.add(logits, bias);
            }
            out.push(g.cross_entropy(logits, y as usize));
            prev = y;
        }
    }
}

/// Teacher-forced loss of `(source, target)` pairs; each target is scored
/// with a trailing `</s>`. `masks`, when given, holds one entry per pair.
pub fn batch_loss(
    model: &Model,
    batch: &[(&[u32], &[u32])],
    masks: Option<&[SentenceMasks]>,
    batch_id: usize,
) -> Result<BatchLoss, ModelError> {
    if batch.is_empty() {
        return Err(ModelError::EmptySequence("batch"));
    }
    if let Some(m) = masks {
        assert_eq!(m.len(), batch.len(), "one mask set per sentence pair");
    }
    let mut g = Graph::new();
    let p = PARAM_NAMES
        .iter()
        .enumerate()
        .map(|(k, name)| g.param(name, model.params.shared(k)))
        .collect();
    let mut b = Builder { g, p, model };
    let mut terms = Vec::new();
    for (k, (src, tgt)) in batch.iter().enumerate() {
        model.check_ids(src, "source")?;
        if !tgt.is_empty() {
            model.check_ids(tgt, "target")?;
        }
        b.sentence(src, tgt, masks.map(|m| &m[k]), &mut terms);
    }
    let total = b.g.add_n(&terms);
    let values = b.g.evaluate(Bindings::new()).map_err(|e| match e {
        AutodiffError::NonFinite { .. } => ModelError::NonFiniteLoss { batch: batch_id },
        other => other.into(),
    })?;
    let loss = values.get(total).item();
    if !loss.is_finite() {
        return Err(ModelError::NonFiniteLoss { batch: batch_id });
    }
    let mut grads = b.g.backward(&values, total)?;
    let grads = b
        .p
        .iter()
        .map(|&id| grads.take(id).expect("every parameter receives a gradient"))
        .collect();
    Ok(BatchLoss {
        loss,
        tokens: terms.len(),
        grads,
    })
}
