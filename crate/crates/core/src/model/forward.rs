use super::{Thpn, DECODER_HOPS};
use crate::corpus::{EncodedContext, Vocabulary};
use crate::numerics::{Graph, RngState, Var};
use crate::retrieval::RetrievedAnswers;
use crate::{Error, Result};

/// One example turned into vocabulary ids and effective copy masks.
#[derive(Clone, Debug)]
pub struct Prepared {
    pub(crate) ctx_features: Vec<Vec<usize>>,
    pub(crate) query: Vec<usize>,
    pub(crate) answer_ids: Vec<usize>,
    /// Emitted tokens of the history memory (sentinel last).
    pub history_tokens: Vec<String>,
    /// Emitted tokens of the retrieved memory (sentinel last).
    pub retrieved_tokens: Vec<String>,
    /// Effective copy mask over the history memory; false at the sentinel.
    pub r_h: Vec<bool>,
    /// Effective copy mask over the retrieved memory; false at the sentinel.
    pub r_r: Vec<bool>,
}

impl Prepared {
    pub fn history_len(&self) -> usize {
        self.history_tokens.len()
    }

    pub fn retrieved_len(&self) -> usize {
        self.retrieved_tokens.len()
    }

    /// Softmax support of the entity pointer: copyable slots plus sentinel.
    pub fn history_support(&self) -> Vec<bool> {
        support(&self.r_h)
    }

    pub fn retrieved_support(&self) -> Vec<bool> {
        support(&self.r_r)
    }
}

fn support(mask: &[bool]) -> Vec<bool> {
    let last = mask.len() - 1;
    mask.iter()
        .enumerate()
        .map(|(i, &m)| m || i == last)
        .collect()
}

fn ids(vocab: &Vocabulary, tokens: &[String]) -> Vec<usize> {
    tokens.iter().map(|t| vocab.id(t)).collect()
}

/// Hop readouts of the memory encoder.
#[derive(Clone, Debug)]
pub struct EncoderOutput {
    /// `c^1 .. c^K`.
    pub readouts: Vec<Var>,
    /// `q^1 .. q^{K+1}`.
    pub queries: Vec<Var>,
    /// `p^1 .. p^K`.
    pub attention: Vec<Var>,
}

/// Embedded decoder memory `[history ; retrieved]` under `D^1 .. D^4`.
#[derive(Clone, Debug)]
pub struct DecoderMemory {
    pub tables: [Var; DECODER_HOPS + 1],
    pub history_len: usize,
    pub retrieved_len: usize,
}

#[derive(Clone, Debug)]
pub struct MemnnOutput {
    /// `o^1 .. o^3`.
    pub readouts: [Var; DECODER_HOPS],
    /// Per-hop attention over the whole decoder memory.
    pub attention: [Var; DECODER_HOPS],
    /// Attention logits per hop.
    pub logits: [Var; DECODER_HOPS],
}

#[derive(Clone, Copy, Debug)]
pub struct Distributions {
    /// Over the vocabulary.
    pub p_v: Var,
    /// Over the history memory.
    pub p_h: Var,
    /// Over the retrieved memory.
    pub p_r: Var,
}

#[derive(Clone, Copy, Debug)]
pub struct StepOutput {
    /// Recurrent state `h_t`, before output dropout.
    pub h: Var,
    pub dist: Distributions,
}

/// Per-example values reused by every decoding step.
#[derive(Clone, Debug)]
pub struct ExampleState {
    pub encoder: EncoderOutput,
    pub h_a: Var,
    pub memory: DecoderMemory,
}

impl Thpn {
    /// Maps an example to ids and applies the configured masking and
    /// retrieval ablation.
    pub fn prepare(&self, context: &EncodedContext, retrieved: &RetrievedAnswers) -> Prepared {
        let sentinel_only;
        let retrieved = if self.config.ablation.no_ir {
            sentinel_only = RetrievedAnswers::sentinel_only();
            &sentinel_only
        } else {
            retrieved
        };
        let v = &self.vocab;
        let masking = self.config.masking;
        let r_h = if masking.mask_history_new {
            context.r_h.clone()
        } else {
            context.items.iter().map(|it| !it.is_sentinel).collect()
        };
        let r_r = if masking.mask_retrieved_ew {
            retrieved.r_r.clone()
        } else {
            retrieved
                .flat_items
                .iter()
                .map(|it| !it.is_sentinel)
                .collect()
        };
        let retrieved_tokens: Vec<String> = retrieved
            .flat_items
            .iter()
            .map(|it| it.emit_token.clone())
            .collect();
        Prepared {
            ctx_features: context
                .items
                .iter()
                .map(|it| ids(v, &it.feature_tokens))
                .collect(),
            query: ids(v, &context.query),
            answer_ids: ids(v, &retrieved_tokens),
            history_tokens: context
                .items
                .iter()
                .map(|it| it.emit_token.clone())
                .collect(),
            retrieved_tokens,
            r_h,
            r_r,
        }
    }

    /// Multi-hop attention over the history/KB memory. Hop `k` addresses
    /// with `M^k` and reads out with `M^{k+1}`; the query is updated
    /// additively.
    pub fn encode(
        &self,
        g: &mut Graph<'_>,
        vars: &[Var],
        prep: &Prepared,
    ) -> Result<EncoderOutput> {
        let l = &self.layout;
        let d = self.config.dim;
        let mems = l
            .enc
            .iter()
            .map(|&t| g.gather_sum(vars[t], prep.ctx_features.clone()))
            .collect::<Result<Vec<_>>>()?;
        let mut q = match self.config.query_init {
            super::QueryInit::Learned => vars[l.q0],
            super::QueryInit::LastUtterance if prep.query.is_empty() => g.zeros(d),
            super::QueryInit::LastUtterance => {
                let s = g.gather_sum(vars[l.enc[0]], vec![prep.query.clone()])?;
                let s = g.reshape(s, [d])?;
                g.scale(s, 1.0 / prep.query.len() as f64)
            }
        };
        let mut out = EncoderOutput {
            readouts: Vec::new(),
            queries: vec![q],
            attention: Vec::new(),
        };
        for k in 0..self.config.hops {
            let logits = g.matmul(mems[k], q)?;
            let p = g.softmax(logits)?;
            let c = g.matmul(p, mems[k + 1])?;
            q = g.add(q, c)?;
            out.attention.push(p);
            out.readouts.push(c);
            out.queries.push(q);
        }
        Ok(out)
    }

    /// `h_a = W_2 tanh(Σ_i W_1 [c^K; a_i])`, evaluated as
    /// `W_2 tanh(W_1 [m c^K; Σ_i a_i])`.
    pub fn encode_answers(
        &self,
        g: &mut Graph<'_>,
        vars: &[Var],
        prep: &Prepared,
        c_last: Var,
    ) -> Result<Var> {
        let l = &self.layout;
        let m = prep.answer_ids.len();
        let a = g.gather_sum(
            vars[l.emb],
            prep.answer_ids.iter().map(|&i| vec![i]).collect(),
        )?;
        let a_sum = g.sum_rows(a)?;
        let c_m = g.scale(c_last, m as f64);
        let x = g.concat(&[c_m, a_sum], 0)?;
        let h = g.matmul(x, vars[l.ans_w1])?;
        let h = g.tanh(h);
        g.matmul(h, vars[l.ans_w2])
    }

    /// `H^c = Σ_i α_i c^i` with `α = softmax_i(vᵀ tanh(W_h h + W_c c^i + b))`.
    pub fn hop_attention(
        &self,
        g: &mut Graph<'_>,
        vars: &[Var],
        h_prev: Var,
        readouts: &[Var],
    ) -> Result<Var> {
        let l = &self.layout;
        let d = self.config.dim;
        if readouts.len() == 1 {
            return Ok(readouts[0]);
        }
        let hw = g.matmul(h_prev, vars[l.attn_wh])?;
        let hw = g.add(hw, vars[l.attn_b])?;
        let mut scores = Vec::with_capacity(readouts.len());
        let mut rows = Vec::with_capacity(readouts.len());
        for &c in readouts {
            let cw = g.matmul(c, vars[l.attn_wc])?;
            let e = g.add(hw, cw)?;
            let e = g.tanh(e);
            let s = g.matmul(e, vars[l.attn_v])?;
            scores.push(g.reshape(s, [1])?);
            rows.push(g.reshape(c, [1, d])?);
        }
        let scores = g.concat(&scores, 0)?;
        let alpha = g.softmax(scores)?;
        let cmat = g.concat(&rows, 0)?;
        g.matmul(alpha, cmat)
    }

    /// `H^g = σ(h_a ⊙ h_{t-1}) ⊙ h_a`.
    pub fn gate(g: &mut Graph<'_>, h_a: Var, h_prev: Var) -> Result<Var> {
        let x = g.mul(h_a, h_prev)?;
        let s = g.sigmoid(x);
        g.mul(s, h_a)
    }

    /// GRU cell: `r, z = σ(..)`, `n = tanh(W_xn x + b_xn + r ⊙ (W_hn s + b_hn))`,
    /// `h' = (1 - z) ⊙ n + z ⊙ s`.
    pub fn gru(&self, g: &mut Graph<'_>, vars: &[Var], x: Var, state: Var) -> Result<Var> {
        let l = &self.layout;
        let d = self.config.dim;
        let gx = g.matmul(x, vars[l.gru_wx])?;
        let gx = g.add(gx, vars[l.gru_bx])?;
        let gh = g.matmul(state, vars[l.gru_wh])?;
        let gh = g.add(gh, vars[l.gru_bh])?;
        let rz_x = g.slice_rows(gx, 0, 2 * d)?;
        let rz_h = g.slice_rows(gh, 0, 2 * d)?;
        let rz = g.add(rz_x, rz_h)?;
        let rz = g.sigmoid(rz);
        let r = g.slice_rows(rz, 0, d)?;
        let z = g.slice_rows(rz, d, d)?;
        let n_x = g.slice_rows(gx, 2 * d, d)?;
        let n_h = g.slice_rows(gh, 2 * d, d)?;
        let n_h = g.mul(r, n_h)?;
        let n = g.add(n_x, n_h)?;
        let n = g.tanh(n);
        let diff = g.sub(state, n)?;
        let zd = g.mul(z, diff)?;
        g.add(n, zd)
    }

    /// Input state `h*_{t-1} = tanh(W_s [h_{t-1}; H^c; H^g] + b_s)`.
    pub fn decoder_state(
        &self,
        g: &mut Graph<'_>,
        vars: &[Var],
        h_prev: Var,
        h_c: Var,
        h_g: Var,
    ) -> Result<Var> {
        let l = &self.layout;
        let x = g.concat(&[h_prev, h_c, h_g], 0)?;
        let s = g.matmul(x, vars[l.state_w])?;
        let s = g.add(s, vars[l.state_b])?;
        Ok(g.tanh(s))
    }

    /// One GRU step. At the first step (`h_prev = None`) the state is `h_a`
    /// itself; afterwards it is the projection of `[h; H^c; H^g]`.
    #[allow(clippy::too_many_arguments)]
    pub fn decoder_step(
        &self,
        g: &mut Graph<'_>,
        vars: &[Var],
        ex: &ExampleState,
        y_prev: usize,
        h_prev: Option<Var>,
        training: bool,
        rng: &mut RngState,
    ) -> Result<Var> {
        let state = match h_prev {
            None => ex.h_a,
            Some(h) => {
                let h_c = self.hop_attention(g, vars, h, &ex.encoder.readouts)?;
                let h_g = if self.config.ablation.no_gate {
                    ex.h_a
                } else {
                    Self::gate(g, ex.h_a, h)?
                };
                self.decoder_state(g, vars, h, h_c, h_g)?
            }
        };
        let x = g.embedding_lookup(vars[self.layout.emb], y_prev)?;
        let x = g.dropout(x, self.config.dropout, training, rng)?;
        self.gru(g, vars, x, state)
    }

    pub fn decoder_memory(
        &self,
        g: &mut Graph<'_>,
        vars: &[Var],
        prep: &Prepared,
    ) -> Result<DecoderMemory> {
        let mut features = prep.ctx_features.clone();
        features.extend(prep.answer_ids.iter().map(|&i| vec![i]));
        let mut tables = [Var::default(); DECODER_HOPS + 1];
        for (k, t) in tables.iter_mut().enumerate() {
            *t = g.gather_sum(vars[self.layout.dec[k]], features.clone())?;
        }
        Ok(DecoderMemory {
            tables,
            history_len: prep.history_len(),
            retrieved_len: prep.retrieved_len(),
        })
    }

    /// Three hops over the decoder memory with `h_t` as the first query.
    /// Hop 1 attends everywhere, hop 2 only to the retrieved segment and
    /// hop 3 only to the history segment.
    pub fn decoder_memnn(
        &self,
        g: &mut Graph<'_>,
        mem: &DecoderMemory,
        h_t: Var,
    ) -> Result<MemnnOutput> {
        let (nh, nr) = (mem.history_len, mem.retrieved_len);
        let retrieved_seg: Vec<bool> = (0..nh + nr).map(|i| i >= nh).collect();
        let history_seg: Vec<bool> = (0..nh + nr).map(|i| i < nh).collect();
        let masks = [
            None,
            Some(retrieved_seg.as_slice()),
            Some(history_seg.as_slice()),
        ];
        let mut u = h_t;
        let mut readouts = [Var::default(); DECODER_HOPS];
        let mut attention = [Var::default(); DECODER_HOPS];
        let mut logits = [Var::default(); DECODER_HOPS];
        for k in 0..DECODER_HOPS {
            let s = g.matmul(mem.tables[k], u)?;
            let p = g.masked_softmax(s, masks[k])?;
            let o = g.matmul(p, mem.tables[k + 1])?;
            if k + 1 < DECODER_HOPS {
                u = g.add(u, o)?;
            }
            readouts[k] = o;
            attention[k] = p;
            logits[k] = s;
        }
        Ok(MemnnOutput {
            readouts,
            attention,
            logits,
        })
    }

    /// `P_v = softmax(W_v [o^1; h_t])`; `P_r` and `P_h` are the hop-2 and
    /// hop-3 attentions on their segments, renormalised over copyable slots
    /// plus the sentinel.
    pub fn distributions(
        &self,
        g: &mut Graph<'_>,
        vars: &[Var],
        prep: &Prepared,
        h_t: Var,
        memnn: &MemnnOutput,
    ) -> Result<Distributions> {
        let (nh, nr) = (prep.history_len(), prep.retrieved_len());
        let x = g.concat(&[memnn.readouts[0], h_t], 0)?;
        let lv = g.matmul(x, vars[self.layout.vocab_w])?;
        let p_v = g.softmax(lv)?;
        let lr = g.slice_rows(memnn.logits[1], nh, nr)?;
        let p_r = g.masked_softmax(lr, Some(&prep.retrieved_support()))?;
        let lh = g.slice_rows(memnn.logits[2], 0, nh)?;
        let p_h = g.masked_softmax(lh, Some(&prep.history_support()))?;
        Ok(Distributions { p_v, p_h, p_r })
    }

    /// Encoder, answer encoder and decoder memory for one example.
    pub fn example_state(
        &self,
        g: &mut Graph<'_>,
        vars: &[Var],
        prep: &Prepared,
    ) -> Result<ExampleState> {
        if prep.history_len() == 0 || prep.retrieved_len() == 0 {
            return Err(Error::Data("empty memory".into()));
        }
        let encoder = self.encode(g, vars, prep)?;
        let h_a = if self.config.ablation.no_ir {
            g.zeros(self.config.dim)
        } else {
            let c_last = *encoder.readouts.last().expect("at least one hop");
            self.encode_answers(g, vars, prep, c_last)?
        };
        let memory = self.decoder_memory(g, vars, prep)?;
        Ok(ExampleState {
            encoder,
            h_a,
            memory,
        })
    }

    /// Decoder step followed by the memory network and the three heads.
    #[allow(clippy::too_many_arguments)]
    pub fn step(
        &self,
        g: &mut Graph<'_>,
        vars: &[Var],
        prep: &Prepared,
        ex: &ExampleState,
        y_prev: usize,
        h_prev: Option<Var>,
        training: bool,
        rng: &mut RngState,
    ) -> Result<StepOutput> {
        let h = self.decoder_step(g, vars, ex, y_prev, h_prev, training, rng)?;
        let h_out = g.dropout(h, self.config.dropout, training, rng)?;
        let memnn = self.decoder_memnn(g, &ex.memory, h_out)?;
        let dist = self.distributions(g, vars, prep, h_out, &memnn)?;
        Ok(StepOutput { h, dist })
    }

    /// Teacher-forced pass: step `t` is fed `inputs[t]` (the first being
    /// the start symbol).
    pub fn teacher_forced(
        &self,
        g: &mut Graph<'_>,
        vars: &[Var],
        prep: &Prepared,
        inputs: &[usize],
        training: bool,
        rng: &mut RngState,
    ) -> Result<Vec<Distributions>> {
        let ex = self.example_state(g, vars, prep)?;
        let mut h = None;
        let mut out = Vec::with_capacity(inputs.len());
        for &y in inputs {
            let s = self.step(g, vars, prep, &ex, y, h, training, rng)?;
            h = Some(s.h);
            out.push(s.dist);
        }
        Ok(out)
    }
}
