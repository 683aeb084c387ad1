//! The network: a multi-hop memory encoder over history and KB, an encoder
//! for the retrieved guidance answers, a gated GRU decoder, and a decoder
//! memory network whose hop attentions double as the entity and pattern
//! pointers.

mod decode;
mod forward;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

pub use decode::{argmax, select_token, Generated, Provenance, Source};
pub use forward::{
    DecoderMemory, Distributions, EncoderOutput, ExampleState, MemnnOutput, Prepared, StepOutput,
};

use crate::corpus::Vocabulary;
use crate::numerics::{init_normal, init_orthogonal, init_zeros, Graph, RngState, Tensor, Var};
use crate::{Error, Result};

/// Hops of the decoder memory network. Hop 2 feeds the pattern pointer and
/// hop 3 the entity pointer, so this is not configurable.
pub const DECODER_HOPS: usize = 3;
/// Standard deviation of every non-recurrent weight at initialisation.
pub const INIT_STD: f64 = 0.01;
/// Default generation length cap.
pub const DEFAULT_MAX_LEN: usize = 30;

/// Component switches for ablation runs.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Ablation {
    /// No retrieval: `h_a = 0` and the retrieved memory is the sentinel alone.
    pub no_ir: bool,
    /// No pointers: tokens always come from the vocabulary head.
    pub no_ptr: bool,
    /// No answer gate: the decoder state receives `h_a` in place of `H^g`.
    pub no_gate: bool,
}

/// Copy masks. When a flag is off, every non-sentinel slot of that memory is
/// copyable.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Masking {
    /// Block non-entity history words from the entity pointer.
    pub mask_history_new: bool,
    /// Block entity words in retrieved answers from the pattern pointer.
    pub mask_retrieved_ew: bool,
}

impl Default for Masking {
    fn default() -> Self {
        Masking {
            mask_history_new: true,
            mask_retrieved_ew: true,
        }
    }
}

/// How the first encoder query is formed.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QueryInit {
    /// Mean of the first-hop embeddings of the last user utterance.
    #[default]
    LastUtterance,
    /// A learned constant vector.
    Learned,
}

impl FromStr for QueryInit {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "last_utterance" => Ok(QueryInit::LastUtterance),
            "learned" => Ok(QueryInit::Learned),
            _ => Err(Error::Config(format!("unknown query init {s:?}"))),
        }
    }
}

impl fmt::Display for QueryInit {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            QueryInit::LastUtterance => "last_utterance",
            QueryInit::Learned => "learned",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub dim: usize,
    pub hops: usize,
    pub dropout: f64,
    pub query_init: QueryInit,
    pub ablation: Ablation,
    pub masking: Masking,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            dim: 256,
            hops: 3,
            dropout: 0.4,
            query_init: QueryInit::default(),
            ablation: Ablation::default(),
            masking: Masking::default(),
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 {
            return Err(Error::Config("dim must be positive".into()));
        }
        if self.hops == 0 {
            return Err(Error::Config("hops must be at least 1".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!(
                "dropout {} outside [0, 1)",
                self.dropout
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Init {
    Normal,
    /// `[d, 3d]`: three orthogonal `d x d` blocks side by side.
    OrthogonalGates,
    Zeros,
}

/// Parameter indices into [`Thpn::params`].
#[derive(Clone, Debug)]
pub(crate) struct Layout {
    pub enc: Vec<usize>,
    pub q0: usize,
    pub ans_w1: usize,
    pub ans_w2: usize,
    pub emb: usize,
    pub gru_wx: usize,
    pub gru_wh: usize,
    pub gru_bx: usize,
    pub gru_bh: usize,
    pub attn_wh: usize,
    pub attn_wc: usize,
    pub attn_b: usize,
    pub attn_v: usize,
    pub state_w: usize,
    pub state_b: usize,
    pub vocab_w: usize,
    pub dec: [usize; DECODER_HOPS + 1],
}

type Spec = (String, Vec<usize>, Init);

fn layout(hops: usize, d: usize, v: usize) -> (Layout, Vec<Spec>) {
    let mut specs: Vec<Spec> = Vec::new();
    let mut add = |name: String, shape: Vec<usize>, init: Init| {
        specs.push((name, shape, init));
        specs.len() - 1
    };
    let enc = (1..=hops + 1)
        .map(|k| add(format!("enc.M{k}"), vec![v, d], Init::Normal))
        .collect();
    let q0 = add("enc.q0".into(), vec![d], Init::Normal);
    let ans_w1 = add("ans.W1".into(), vec![2 * d, d], Init::Normal);
    let ans_w2 = add("ans.W2".into(), vec![d, d], Init::Normal);
    let emb = add("dec.emb".into(), vec![v, d], Init::Normal);
    let gru_wx = add("dec.gru.w_x".into(), vec![d, 3 * d], Init::Normal);
    let gru_wh = add("dec.gru.w_h".into(), vec![d, 3 * d], Init::OrthogonalGates);
    let gru_bx = add("dec.gru.b_x".into(), vec![3 * d], Init::Zeros);
    let gru_bh = add("dec.gru.b_h".into(), vec![3 * d], Init::Zeros);
    let attn_wh = add("dec.attn.w_h".into(), vec![d, d], Init::Normal);
    let attn_wc = add("dec.attn.w_c".into(), vec![d, d], Init::Normal);
    let attn_b = add("dec.attn.b".into(), vec![d], Init::Zeros);
    let attn_v = add("dec.attn.v".into(), vec![d], Init::Normal);
    let state_w = add("dec.state.w".into(), vec![3 * d, d], Init::Normal);
    let state_b = add("dec.state.b".into(), vec![d], Init::Zeros);
    let vocab_w = add("dec.vocab.w".into(), vec![2 * d, v], Init::Normal);
    let dec = std::array::from_fn(|k| add(format!("dec.mem.D{}", k + 1), vec![v, d], Init::Normal));
    let layout = Layout {
        enc,
        q0,
        ans_w1,
        ans_w2,
        emb,
        gru_wx,
        gru_wh,
        gru_bx,
        gru_bh,
        attn_wh,
        attn_wc,
        attn_b,
        attn_v,
        state_w,
        state_b,
        vocab_w,
        dec,
    };
    (layout, specs)
}

/// A THPN model: configuration, vocabulary and named parameters.
#[derive(Clone, Debug)]
pub struct Thpn {
    config: ModelConfig,
    vocab: Vocabulary,
    names: Vec<String>,
    params: Vec<Tensor>,
    pub(crate) layout: Layout,
}

impl Thpn {
    /// Freshly initialised model: orthogonal recurrent weights, `N(0, 0.01²)`
    /// for other weights and embeddings, zero biases.
    pub fn new(config: ModelConfig, vocab: Vocabulary, rng: &mut RngState) -> Result<Self> {
        config.validate()?;
        let d = config.dim;
        let (layout, specs) = layout(config.hops, d, vocab.len());
        let mut names = Vec::with_capacity(specs.len());
        let mut params = Vec::with_capacity(specs.len());
        for (name, shape, init) in specs {
            let t = match init {
                Init::Normal => init_normal(&shape, 0.0, INIT_STD, rng),
                Init::Zeros => init_zeros(&shape),
                Init::OrthogonalGates => {
                    let blocks: Vec<Tensor> = (0..3).map(|_| init_orthogonal(d, d, rng)).collect();
                    let mut data = Vec::with_capacity(3 * d * d);
                    for r in 0..d {
                        for b in &blocks {
                            data.extend_from_slice(b.row(r));
                        }
                    }
                    Tensor::new(shape, data)?
                }
            };
            names.push(name);
            params.push(t.requiring_grad());
        }
        Ok(Thpn {
            config,
            vocab,
            names,
            params,
            layout,
        })
    }

    /// Rebuilds a model from stored tensors. Every expected parameter must be
    /// present with the expected shape.
    pub fn from_tensors(
        config: ModelConfig,
        vocab: Vocabulary,
        tensors: Vec<(String, Tensor)>,
    ) -> Result<Self> {
        config.validate()?;
        let (layout, specs) = layout(config.hops, config.dim, vocab.len());
        if tensors.len() != specs.len() {
            return Err(Error::Incompatible(format!(
                "expected {} tensors, found {}",
                specs.len(),
                tensors.len()
            )));
        }
        let mut names = Vec::with_capacity(specs.len());
        let mut params = Vec::with_capacity(specs.len());
        for ((name, shape, _), (got_name, t)) in specs.into_iter().zip(tensors) {
            if name != got_name {
                return Err(Error::Incompatible(format!(
                    "expected tensor {name}, found {got_name}"
                )));
            }
            if t.shape() != shape.as_slice() {
                return Err(Error::Incompatible(format!(
                    "tensor {name} has shape {:?}, expected {:?}",
                    t.shape(),
                    shape
                )));
            }
            names.push(name);
            params.push(t.requiring_grad());
        }
        Ok(Thpn {
            config,
            vocab,
            names,
            params,
            layout,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn vocab(&self) -> &Vocabulary {
        &self.vocab
    }

    pub fn param_names(&self) -> &[String] {
        &self.names
    }

    pub fn params(&self) -> &[Tensor] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Tensor] {
        &mut self.params
    }

    pub fn param(&self, name: &str) -> Option<&Tensor> {
        self.names
            .iter()
            .position(|n| n == name)
            .map(|i| &self.params[i])
    }

    pub fn param_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.names
            .iter()
            .position(|n| n == name)
            .map(|i| &mut self.params[i])
    }

    pub fn num_parameters(&self) -> usize {
        self.params.iter().map(Tensor::len).sum()
    }

    /// Changes ablation, masking and dropout settings in place. Shapes do not
    /// depend on them.
    pub fn set_behaviour(
        &mut self,
        ablation: Ablation,
        masking: Masking,
        dropout: f64,
    ) -> Result<()> {
        let cfg = ModelConfig {
            ablation,
            masking,
            dropout,
            ..self.config
        };
        cfg.validate()?;
        self.config = cfg;
        Ok(())
    }

    /// Rounds every parameter to `f32` precision, the storage precision of
    /// checkpoints.
    pub fn round_to_f32(&mut self) {
        for p in &mut self.params {
            p.data_mut().iter_mut().for_each(|x| *x = *x as f32 as f64);
        }
    }

    /// Loads whitespace-separated `token v1 .. vd` lines into the first
    /// encoder table and the decoder token embedding. Returns the number of
    /// vocabulary rows set; unknown tokens are skipped.
    pub fn load_pretrained_embeddings(&mut self, text: &str) -> Result<usize> {
        let d = self.config.dim;
        let mut rows = Vec::new();
        for (i, line) in text.lines().enumerate() {
            let mut parts = line.split_whitespace();
            let Some(tok) = parts.next() else { continue };
            let v: Vec<f64> = parts
                .map(str::parse)
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| Error::Parse {
                    line: i + 1,
                    msg: format!("{e}"),
                })?;
            if v.len() != d {
                // fastText-style header "count dim"
                if i == 0 && v.len() == 1 {
                    continue;
                }
                return Err(Error::Parse {
                    line: i + 1,
                    msg: format!("vector of length {}, model dim is {d}", v.len()),
                });
            }
            if let Some(id) = self.vocab.get(tok) {
                rows.push((id, v));
            }
        }
        for idx in [self.layout.enc[0], self.layout.emb] {
            for (id, v) in &rows {
                self.params[idx].row_mut(*id).copy_from_slice(v);
            }
        }
        Ok(rows.len())
    }

    /// Registers every parameter on `g`, in [`Thpn::params`] order.
    pub fn bind<'a>(&'a self, g: &mut Graph<'a>) -> Vec<Var> {
        self.params.iter().map(|p| g.param(p)).collect()
    }
}
