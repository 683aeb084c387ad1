use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::model::{Ablation, Masking, ModelConfig, DEFAULT_MAX_LEN};
use crate::retrieval::{Method, RetrievalConfig};
use crate::{Error, Result};

/// Weights of the vocabulary, entity-pointer and pattern-pointer loss terms.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub vocab: f64,
    pub history: f64,
    pub retrieved: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            vocab: 1.0,
            history: 1.0,
            retrieved: 1.0,
        }
    }
}

/// Validation metric used to pick the best epoch.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SelectMetric {
    #[default]
    Accuracy,
    Bleu,
}

impl FromStr for SelectMetric {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "accuracy" => Ok(SelectMetric::Accuracy),
            "bleu" => Ok(SelectMetric::Bleu),
            _ => Err(Error::Config(format!("unknown selection metric {s:?}"))),
        }
    }
}

impl fmt::Display for SelectMetric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SelectMetric::Accuracy => "accuracy",
            SelectMetric::Bleu => "bleu",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Hyperparams {
    pub model: ModelConfig,
    pub lr: f64,
    pub clip: f64,
    pub epochs: usize,
    pub seed: u64,
    pub theta: f64,
    pub method: Method,
    pub loss_weights: LossWeights,
    pub max_len: usize,
    pub select_metric: SelectMetric,
}

impl Default for Hyperparams {
    fn default() -> Self {
        Hyperparams {
            model: ModelConfig::default(),
            lr: 1e-4,
            clip: 10.0,
            epochs: 30,
            seed: 0,
            theta: 0.8,
            method: Method::Cosine,
            loss_weights: LossWeights::default(),
            max_len: DEFAULT_MAX_LEN,
            select_metric: SelectMetric::default(),
        }
    }
}

/// Every key accepted by [`Hyperparams::set`].
pub const HYPERPARAM_KEYS: [&str; 20] = [
    "clip",
    "dim",
    "dropout",
    "epochs",
    "hops",
    "loss_weight_history",
    "loss_weight_retrieved",
    "loss_weight_vocab",
    "lr",
    "mask_history_new",
    "mask_retrieved_ew",
    "max_len",
    "method",
    "no_gate",
    "no_ir",
    "no_ptr",
    "query_init",
    "seed",
    "select_metric",
    "theta",
];

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("invalid value {value:?} for {key}")))
}

impl Hyperparams {
    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.retrieval()?;
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return Err(Error::Config(format!(
                "learning rate {} must be a finite non-negative number",
                self.lr
            )));
        }
        if !(self.clip > 0.0) {
            return Err(Error::Config(format!(
                "clip threshold {} must be positive",
                self.clip
            )));
        }
        let w = self.loss_weights;
        if [w.vocab, w.history, w.retrieved]
            .iter()
            .any(|x| !(*x >= 0.0 && x.is_finite()))
        {
            return Err(Error::Config(
                "loss weights must be finite and non-negative".into(),
            ));
        }
        Ok(())
    }

    pub fn retrieval(&self) -> Result<RetrievalConfig> {
        RetrievalConfig::new(self.theta, self.method)
    }

    pub fn ablation(&self) -> Ablation {
        self.model.ablation
    }

    pub fn masking(&self) -> Masking {
        self.model.masking
    }

    /// Sets one field from its text form.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let m = &mut self.model;
        match key {
            "clip" => self.clip = parse(key, value)?,
            "dim" => m.dim = parse(key, value)?,
            "dropout" => m.dropout = parse(key, value)?,
            "epochs" => self.epochs = parse(key, value)?,
            "hops" => m.hops = parse(key, value)?,
            "loss_weight_history" => self.loss_weights.history = parse(key, value)?,
            "loss_weight_retrieved" => self.loss_weights.retrieved = parse(key, value)?,
            "loss_weight_vocab" => self.loss_weights.vocab = parse(key, value)?,
            "lr" => self.lr = parse(key, value)?,
            "mask_history_new" => m.masking.mask_history_new = parse(key, value)?,
            "mask_retrieved_ew" => m.masking.mask_retrieved_ew = parse(key, value)?,
            "max_len" => self.max_len = parse(key, value)?,
            "method" => self.method = value.parse()?,
            "no_gate" => m.ablation.no_gate = parse(key, value)?,
            "no_ir" => m.ablation.no_ir = parse(key, value)?,
            "no_ptr" => m.ablation.no_ptr = parse(key, value)?,
            "query_init" => m.query_init = value.parse()?,
            "seed" => self.seed = parse(key, value)?,
            "select_metric" => self.select_metric = value.parse()?,
            "theta" => self.theta = parse(key, value)?,
            _ => return Err(Error::Config(format!("unknown hyperparameter {key:?}"))),
        }
        Ok(())
    }

    /// Key/value pairs in key order. Floats use the shortest text that
    /// parses back to the same value.
    pub fn to_pairs(&self) -> BTreeMap<&'static str, String> {
        let m = &self.model;
        let w = &self.loss_weights;
        BTreeMap::from([
            ("clip", self.clip.to_string()),
            ("dim", m.dim.to_string()),
            ("dropout", m.dropout.to_string()),
            ("epochs", self.epochs.to_string()),
            ("hops", m.hops.to_string()),
            ("loss_weight_history", w.history.to_string()),
            ("loss_weight_retrieved", w.retrieved.to_string()),
            ("loss_weight_vocab", w.vocab.to_string()),
            ("lr", self.lr.to_string()),
            ("mask_history_new", m.masking.mask_history_new.to_string()),
            ("mask_retrieved_ew", m.masking.mask_retrieved_ew.to_string()),
            ("max_len", self.max_len.to_string()),
            ("method", self.method.to_string()),
            ("no_gate", m.ablation.no_gate.to_string()),
            ("no_ir", m.ablation.no_ir.to_string()),
            ("no_ptr", m.ablation.no_ptr.to_string()),
            ("query_init", m.query_init.to_string()),
            ("seed", self.seed.to_string()),
            ("select_metric", self.select_metric.to_string()),
            ("theta", self.theta.to_string()),
        ])
    }

    /// `key=value` lines in key order.
    pub fn to_canonical(&self) -> String {
        self.to_pairs()
            .iter()
            .map(|(k, v)| format!("{k}={v}\n"))
            .collect()
    }

    /// Inverse of [`to_canonical`](Self::to_canonical); every key must be
    /// present exactly once.
    pub fn from_canonical(text: &str) -> Result<Self> {
        let mut hp = Hyperparams::default();
        let mut seen = BTreeMap::new();
        for line in text.lines().filter(|l| !l.trim().is_empty()) {
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("malformed hyperparameter line {line:?}")))?;
            if seen.insert(k.to_string(), ()).is_some() {
                return Err(Error::Config(format!("duplicate hyperparameter {k}")));
            }
            hp.set(k, v)?;
        }
        if let Some(missing) = HYPERPARAM_KEYS.iter().find(|k| !seen.contains_key(**k)) {
            return Err(Error::Config(format!("missing hyperparameter {missing}")));
        }
        Ok(hp)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn canonical_round_trip() {
        let mut hp = Hyperparams::default();
        hp.set("theta", "0.3").unwrap();
        hp.set("lr", "0.00012").unwrap();
        hp.set("no_gate", "true").unwrap();
        hp.set("method", "bm25").unwrap();
        let text = hp.to_canonical();
        assert!(text.starts_with("clip=10\ndim=256\n"));
        assert!(text.contains("no_gate=true\n"));
        assert_eq!(Hyperparams::from_canonical(&text).unwrap(), hp);
        assert_eq!(text.lines().count(), HYPERPARAM_KEYS.len());
        let keys: Vec<&str> = hp.to_pairs().keys().copied().collect();
        assert_eq!(keys, HYPERPARAM_KEYS);
    }

    #[test]
    fn rejects_bad_input() {
        let mut hp = Hyperparams::default();
        assert!(hp.set("bogus", "1").is_err());
        assert!(hp.set("dim", "x").is_err());
        assert!(Hyperparams::from_canonical("dim=8\n").is_err());
        hp.theta = 0.0;
        assert!(hp.validate().is_err());
        let hp = Hyperparams {
            lr: -1.0,
            ..Hyperparams::default()
        };
        assert!(hp.validate().is_err());
    }
}
