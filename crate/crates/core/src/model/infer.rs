use super::*;
use crate::autodiff::{dot, log_sum_exp, matvec_into, sigmoid, softmax_in_place};
use crate::corpus::EOS_ID;

/// Encoder output for one source sentence.
#[derive(Clone, Debug)]
pub struct Encoded {
    pub source: Vec<u32>,
    /// `[forward; backward]` state per position, `2 × hidden` wide.
    pub states: Vec<Vec<f64>>,
    /// Attention projection of each state, computed once per sentence.
    pub(crate) keys: Vec<Vec<f64>>,
    /// Backward state at position 0, i.e. after reading the whole sentence.
    pub final_backward: Vec<f64>,
}

impl Encoded {
    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DecoderState {
    pub h: Vec<f64>,
    pub c: Vec<f64>,
}

#[derive(Clone, Debug)]
pub struct StepOutput {
    pub distribution: Vec<f64>,
    pub attention: Vec<f64>,
    pub state: DecoderState,
}

fn masked(x: &[f64], mask: Option<&[f64]>) -> Vec<f64> {
    match mask {
        Some(m) => x.iter().zip(m).map(|(a, b)| a * b).collect(),
        None => x.to_vec(),
    }
}

/// One LSTM update on `[x; h]` with gate rows input, forget, cell, output.
fn lstm(w: &Array, b: &Array, x: &[f64], h: &[f64], c: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let n = h.len();
    let mut input = Vec::with_capacity(x.len() + n);
    input.extend_from_slice(x);
    input.extend_from_slice(h);
    let mut z = vec![0.0; 4 * n];
    matvec_into(w.data(), &input, &mut z);
    for (zi, bi) in z.iter_mut().zip(b.data()) {
        *zi += bi;
    }
    let mut h2 = vec![0.0; n];
    let mut c2 = vec![0.0; n];
    for k in 0..n {
        let i = sigmoid(z[k]);
        let f = sigmoid(z[n + k]);
        let g = z[2 * n + k].tanh();
        let o = sigmoid(z[3 * n + k]);
        c2[k] = f * c[k] + i * g;
        h2[k] = o * c2[k].tanh();
    }
    (h2, c2)
}

fn affine(w: &Array, b: &Array, x: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; w.rows()];
    matvec_into(w.data(), x, &mut out);
    for (o, bi) in out.iter_mut().zip(b.data()) {
        *o += bi;
    }
    out
}

impl Model {
    /// Runs both encoder directions over `source`.
    pub fn encode(&self, source: &[u32], dropout: Dropout<'_>) -> Result<Encoded, ModelError> {
        self.check_ids(source, "source")?;
        let m = match dropout {
            Dropout::Off => None,
            Dropout::Masks(m) => Some(m),
        };
        let h = self.config.hidden;
        let emb = self.p(SRC_EMBED);
        let run = |order: &mut dyn Iterator<Item = usize>, w: usize, b: usize, mi: Option<&[f64]>, mh: Option<&[f64]>| {
            let mut out = vec![Vec::new(); source.len()];
            let (mut hs, mut cs) = (vec![0.0; h], vec![0.0; h]);
            for i in order {
                let x = masked(emb.row(source[i] as usize), mi);
                let hin = masked(&hs, mh);
                (hs, cs) = lstm(self.p(w), self.p(b), &x, &hin, &cs);
                out[i] = hs.clone();
            }
            out
        };
        let fwd = run(
            &mut (0..source.len()),
            ENC_FWD_W,
            ENC_FWD_B,
            m.map(|m| m.enc_fwd_input.as_slice()),
            m.map(|m| m.enc_fwd_hidden.as_slice()),
        );
        let bwd = run(
            &mut (0..source.len()).rev(),
            ENC_BWD_W,
            ENC_BWD_B,
            m.map(|m| m.enc_bwd_input.as_slice()),
            m.map(|m| m.enc_bwd_hidden.as_slice()),
        );
        let att = self.p(ATT_ENC);
        let mut states = Vec::with_capacity(source.len());
        let mut keys = Vec::with_capacity(source.len());
        for (f, b) in fwd.into_iter().zip(&bwd) {
            let mut s = f;
            s.extend_from_slice(b);
            let mut k = vec![0.0; self.config.attention];
            matvec_into(att.data(), &s, &mut k);
            states.push(s);
            keys.push(k);
        }
        Ok(Encoded {
            source: source.to_vec(),
            states,
            keys,
            final_backward: bwd[0].clone(),
        })
    }

    /// Wraps externally supplied `2 × hidden` states, computing attention keys.
    pub fn encoded_from_states(&self, source: &[u32], states: Vec<Vec<f64>>, final_backward: Vec<f64>) -> Encoded {
        let keys = states
            .iter()
            .map(|s| {
                let mut k = vec![0.0; self.config.attention];
                matvec_into(self.p(ATT_ENC).data(), s, &mut k);
                k
            })
            .collect();
        Encoded {
            source: source.to_vec(),
            states,
            keys,
            final_backward,
        }
    }

    /// Decoder state before the first target word: an affine map of the
    /// final backward encoder state, with a zero cell.
    pub fn initial_state(&self, enc: &Encoded) -> DecoderState {
        DecoderState {
            h: affine(self.p(DEC_INIT_W), self.p(DEC_INIT_B), &enc.final_backward),
            c: vec![0.0; self.config.hidden],
        }
    }

    /// MLP attention: `score_i = v·tanh(W_e h_i + W_d s)`, softmax, weighted
    /// sum of encoder states. Returns `(context, weights)`.
    pub fn attend(&self, enc: &Encoded, query: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let mut q = vec![0.0; self.config.attention];
        matvec_into(self.p(ATT_DEC).data(), query, &mut q);
        let v = self.p(ATT_V).data();
        let mut weights: Vec<f64> = enc
            .keys
            .iter()
            .map(|k| {
                let e: Vec<f64> = k.iter().zip(&q).map(|(a, b)| (a + b).tanh()).collect();
                dot(v, &e)
            })
            .collect();
        softmax_in_place(&mut weights);
        let mut ctx = vec![0.0; 2 * self.config.hidden];
        for (a, s) in weights.iter().zip(&enc.states) {
            crate::autodiff::axpy(*a, s, &mut ctx);
        }
        (ctx, weights)
    }

    /// Unnormalized output scores plus attention and the updated state.
    pub(crate) fn step_logits(
        &self,
        prev: u32,
        state: &DecoderState,
        enc: &Encoded,
        dropout: Dropout<'_>,
    ) -> (Vec<f64>, Vec<f64>, DecoderState) {
        let m = match dropout {
            Dropout::Off => None,
            Dropout::Masks(m) => Some(m),
        };
        let (ctx, attention) = self.attend(enc, &state.h);
        let mut x = self.p(TGT_EMBED).row(prev as usize).to_vec();
        x.extend_from_slice(&ctx);
        let x = masked(&x, m.map(|m| m.dec_input.as_slice()));
        let hin = masked(&state.h, m.map(|m| m.dec_hidden.as_slice()));
        let (h, c) = lstm(self.p(DEC_W), self.p(DEC_B), &x, &hin, &state.c);
        let mut o = h.clone();
        o.extend_from_slice(&ctx);
        let o = masked(&o, m.map(|m| m.output.as_slice()));
        let mut logits = affine(self.p(OUT_W), self.p(OUT_B), &o);
        if let Some((prior, eps)) = self.lexicon_bias() {
            let mut mix = vec![0.0; logits.len()];
            for (&x, &a) in enc.source.iter().zip(&attention) {
                for &(y, p) in prior.row(x) {
                    mix[y as usize] += a * p;
                }
            }
            for (l, s) in logits.iter_mut().zip(mix) {
                *l += (s + eps).ln();
            }
        }
        (logits, attention, DecoderState { h, c })
    }

    /// One decoder step: attention with the incoming state as query, LSTM
    /// update on `[embedding(prev); context]`, softmax output.
    pub fn decode_step(&self, prev: u32, state: &DecoderState, enc: &Encoded, dropout: Dropout<'_>) -> StepOutput {
        let (mut distribution, attention, state) = self.step_logits(prev, state, enc, dropout);
        softmax_in_place(&mut distribution);
        StepOutput {
            distribution,
            attention,
            state,
        }
    }

    /// Negative log-likelihood of `target` followed by `</s>`.
    pub fn sentence_nll(&self, source: &[u32], target: &[u32], dropout: Dropout<'_>) -> Result<f64, ModelError> {
        if !target.is_empty() {
            self.check_ids(target, "target")?;
        }
        let enc = self.encode(source, dropout)?;
        let mut state = self.initial_state(&enc);
        let mut prev = EOS_ID;
        let mut nll = 0.0;
        for &y in target.iter().chain(std::iter::once(&EOS_ID)) {
            let (logits, _, next) = self.step_logits(prev, &state, &enc, dropout);
            nll += log_sum_exp(&logits) - logits[y as usize];
            state = next;
            prev = y;
        }
        Ok(nll)
    }
}
