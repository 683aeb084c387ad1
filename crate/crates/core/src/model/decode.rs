use serde::{Deserialize, Serialize};

use super::{Prepared, Thpn};
use crate::corpus::{EncodedContext, Vocabulary};
use crate::numerics::{Graph, RngState};
use crate::retrieval::RetrievedAnswers;
use crate::Result;

/// Where an emitted token came from.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Source {
    Vocab,
    History,
    Retrieved,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub token: String,
    pub source: Source,
    /// Slot index in the source memory, or vocabulary id.
    pub position: usize,
}

/// A greedy decode: tokens (without the end symbol) and one provenance
/// record per token.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Generated {
    pub tokens: Vec<String>,
    pub provenance: Vec<Provenance>,
}

/// Index of the first maximum.
pub fn argmax(p: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in p.iter().enumerate() {
        if x > p[best] {
            best = i;
        }
    }
    best
}

/// Priority selection `P_r > P_h > P_v`: a pointer wins when its argmax is a
/// copyable, non-sentinel slot. With `use_pointers` off the vocabulary head
/// always decides.
pub fn select_token(
    p_v: &[f64],
    p_h: &[f64],
    p_r: &[f64],
    prep: &Prepared,
    vocab: &Vocabulary,
    use_pointers: bool,
) -> Provenance {
    if use_pointers {
        let r = argmax(p_r);
        if r + 1 < p_r.len() && prep.r_r[r] {
            return Provenance {
                token: prep.retrieved_tokens[r].clone(),
                source: Source::Retrieved,
                position: r,
            };
        }
        let h = argmax(p_h);
        if h + 1 < p_h.len() && prep.r_h[h] {
            return Provenance {
                token: prep.history_tokens[h].clone(),
                source: Source::History,
                position: h,
            };
        }
    }
    let v = argmax(p_v);
    Provenance {
        token: vocab.token(v).to_string(),
        source: Source::Vocab,
        position: v,
    }
}

impl Thpn {
    /// Greedy decoding until the end symbol or `max_len` tokens.
    pub fn generate(
        &self,
        context: &EncodedContext,
        retrieved: &RetrievedAnswers,
        max_len: usize,
    ) -> Result<Generated> {
        let prep = self.prepare(context, retrieved);
        self.generate_prepared(&prep, max_len)
    }

    pub fn generate_prepared(&self, prep: &Prepared, max_len: usize) -> Result<Generated> {
        let mut out = Generated::default();
        if max_len == 0 {
            return Ok(out);
        }
        // evaluation mode never draws from the generator
        let mut rng = RngState::new(0);
        let mut g = Graph::new();
        let vars = self.bind(&mut g);
        let ex = self.example_state(&mut g, &vars, prep)?;
        let mut y = Vocabulary::SOS_ID;
        let mut h = None;
        let use_pointers = !self.config.ablation.no_ptr;
        for _ in 0..max_len {
            let s = self.step(&mut g, &vars, prep, &ex, y, h, false, &mut rng)?;
            h = Some(s.h);
            let pick = select_token(
                g.value(s.dist.p_v),
                g.value(s.dist.p_h),
                g.value(s.dist.p_r),
                prep,
                &self.vocab,
                use_pointers,
            );
            if pick.source == Source::Vocab && pick.position == Vocabulary::EOS_ID {
                break;
            }
            y = self.vocab.id(&pick.token);
            out.tokens.push(pick.token.clone());
            out.provenance.push(pick);
        }
        Ok(out)
    }
}
