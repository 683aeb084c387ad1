use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use serde_json::{json, Value};

use crate::corpus::{SynthConfig, TaskStyle};
use crate::training::Hyperparams;
use crate::{Error, Result};

/// Where dialogues come from: a directory of split files, or the synthetic
/// generator.
#[derive(Clone, Debug, PartialEq)]
pub struct DataSpec {
    pub path: Option<PathBuf>,
    pub n_dialogues: usize,
    pub n_restaurants: usize,
    pub style: TaskStyle,
    pub split_train: f64,
    pub split_valid: f64,
}

impl Default for DataSpec {
    fn default() -> Self {
        DataSpec {
            path: None,
            n_dialogues: 1000,
            n_restaurants: 30,
            style: TaskStyle::Slots,
            split_train: 0.8,
            split_valid: 0.1,
        }
    }
}

impl DataSpec {
    pub fn synth(&self, seed: u64) -> SynthConfig {
        SynthConfig {
            n_restaurants: self.n_restaurants,
            n_dialogues: self.n_dialogues,
            style: self.style,
            seed,
        }
    }

    /// Split sizes for `n` dialogues; the test split takes the remainder.
    pub fn split_sizes(&self, n: usize) -> (usize, usize, usize) {
        let train = ((n as f64 * self.split_train).round() as usize).min(n);
        let valid = ((n as f64 * self.split_valid).round() as usize).min(n - train);
        (train, valid, n - train - valid)
    }
}

/// Everything a command needs, resolved from defaults, an optional config
/// file and command-line flags (in increasing precedence).
#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub data: DataSpec,
    pub out: PathBuf,
    pub vectors: Option<PathBuf>,
    pub embeddings: Option<PathBuf>,
    pub hp: Hyperparams,
    /// Keys set by the config file or a flag, as opposed to defaults.
    pub explicit: BTreeSet<String>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            data: DataSpec::default(),
            out: PathBuf::from("runs/default"),
            vectors: None,
            embeddings: None,
            hp: Hyperparams::default(),
            explicit: BTreeSet::new(),
        }
    }
}

const SECTIONS: [(&str, &[&str]); 5] = [
    (
        "data",
        &[
            "data",
            "n_dialogues",
            "n_restaurants",
            "style",
            "split_train",
            "split_valid",
        ],
    ),
    ("retrieval", &["method", "theta", "vectors"]),
    (
        "model",
        &[
            "dim",
            "hops",
            "dropout",
            "query_init",
            "no_ir",
            "no_ptr",
            "no_gate",
            "mask_history_new",
            "mask_retrieved_ew",
            "embeddings",
        ],
    ),
    (
        "training",
        &[
            "seed",
            "lr",
            "clip",
            "epochs",
            "loss_weight_vocab",
            "loss_weight_history",
            "loss_weight_retrieved",
            "select_metric",
            "max_len",
        ],
    ),
    ("output", &["out"]),
];

fn parse_num<T: std::str::FromStr>(key: &str, v: &str) -> Result<T> {
    v.parse()
        .map_err(|_| Error::Config(format!("invalid value {v:?} for {key}")))
}

fn opt_path(v: &str) -> Option<PathBuf> {
    (!v.is_empty()).then(|| PathBuf::from(v))
}

/// Parses `key = value` lines grouped under `[section]` headers. Sections
/// only group keys; each key may appear once. `#` starts a comment line.
pub fn parse_config_text(text: &str) -> Result<Vec<(String, String)>> {
    let mut out = Vec::new();
    let mut seen = BTreeSet::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let err = |msg: String| Error::Parse { line: i + 1, msg };
        if line.starts_with('[') {
            if !line.ends_with(']') || line.len() < 3 {
                return Err(err(format!("malformed section header {line:?}")));
            }
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| err(format!("expected key = value, got {line:?}")))?;
        let (k, v) = (k.trim(), v.trim());
        if k.is_empty() {
            return Err(err("empty key".into()));
        }
        if !seen.insert(k.to_string()) {
            return Err(err(format!("duplicate key {k}")));
        }
        out.push((k.to_string(), v.to_string()));
    }
    Ok(out)
}

impl RunConfig {
    /// Sets one key from its text form and marks it explicit.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let d = &mut self.data;
        match key {
            "data" => d.path = opt_path(value),
            "n_dialogues" => d.n_dialogues = parse_num(key, value)?,
            "n_restaurants" => d.n_restaurants = parse_num(key, value)?,
            "style" => d.style = value.parse()?,
            "split_train" => d.split_train = parse_num(key, value)?,
            "split_valid" => d.split_valid = parse_num(key, value)?,
            "out" => self.out = PathBuf::from(value),
            "vectors" => self.vectors = opt_path(value),
            "embeddings" => self.embeddings = opt_path(value),
            _ => self.hp.set(key, value)?,
        }
        self.explicit.insert(key.to_string());
        Ok(())
    }

    pub fn apply_file(&mut self, path: &Path) -> Result<()> {
        let text = std::fs::read_to_string(path)?;
        for (k, v) in parse_config_text(&text)? {
            self.set(&k, &v)?;
        }
        Ok(())
    }

    pub fn is_explicit(&self, key: &str) -> bool {
        self.explicit.contains(key)
    }

    pub fn validate(&self) -> Result<()> {
        self.hp.validate()?;
        let d = &self.data;
        let ok = |x: f64| (0.0..=1.0).contains(&x);
        if !ok(d.split_train) || !ok(d.split_valid) || d.split_train + d.split_valid > 1.0 + 1e-12 {
            return Err(Error::Config(
                "split fractions must lie in [0, 1] and sum to at most 1".into(),
            ));
        }
        Ok(())
    }

    fn pairs(&self) -> BTreeMap<String, String> {
        let path = |p: &Option<PathBuf>| {
            p.as_ref()
                .map_or(String::new(), |p| p.display().to_string())
        };
        let d = &self.data;
        let mut m: BTreeMap<String, String> = self
            .hp
            .to_pairs()
            .into_iter()
            .map(|(k, v)| (k.to_string(), v))
            .collect();
        m.insert("data".into(), path(&d.path));
        m.insert("n_dialogues".into(), d.n_dialogues.to_string());
        m.insert("n_restaurants".into(), d.n_restaurants.to_string());
        m.insert("style".into(), d.style.to_string());
        m.insert("split_train".into(), d.split_train.to_string());
        m.insert("split_valid".into(), d.split_valid.to_string());
        m.insert("out".into(), self.out.display().to_string());
        m.insert("vectors".into(), path(&self.vectors));
        m.insert("embeddings".into(), path(&self.embeddings));
        m
    }

    /// The resolved configuration in the config-file format; reading it
    /// back yields an equal configuration.
    pub fn to_text(&self) -> String {
        let pairs = self.pairs();
        let mut out = String::new();
        for (section, keys) in SECTIONS {
            out.push_str(&format!("[{section}]\n"));
            for k in keys {
                out.push_str(&format!("{k} = {}\n", pairs[*k]));
            }
            out.push('\n');
        }
        out
    }

    /// The resolved configuration as a JSON object, grouped by section.
    pub fn to_json(&self) -> Value {
        let pairs = self.pairs();
        let mut root = serde_json::Map::new();
        for (section, keys) in SECTIONS {
            let obj: serde_json::Map<String, Value> = keys
                .iter()
                .map(|k| (k.to_string(), json!(pairs[*k])))
                .collect();
            root.insert(section.to_string(), Value::Object(obj));
        }
        Value::Object(root)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::training::HYPERPARAM_KEYS;

    #[test]
    fn sections_cover_every_key_once() {
        let all: Vec<&str> = SECTIONS
            .iter()
            .flat_map(|(_, k)| k.iter().copied())
            .collect();
        let set: BTreeSet<&str> = all.iter().copied().collect();
        assert_eq!(all.len(), set.len());
        for k in HYPERPARAM_KEYS {
            assert!(set.contains(k), "{k}");
        }
        assert_eq!(set.len(), RunConfig::default().pairs().len());
    }

    #[test]
    fn text_round_trip() {
        let mut c = RunConfig::default();
        c.set("theta", "0.6").unwrap();
        c.set("no_gate", "true").unwrap();
        c.set("data", "some/dir").unwrap();
        c.set("style", "kb_lookup").unwrap();
        let text = c.to_text();
        let mut back = RunConfig::default();
        for (k, v) in parse_config_text(&text).unwrap() {
            back.set(&k, &v).unwrap();
        }
        assert_eq!(back.hp, c.hp);
        assert_eq!(back.data, c.data);
        assert_eq!(back.to_text(), text);
        assert_eq!(c.to_json()["retrieval"]["theta"], "0.6");
    }

    #[test]
    fn parser_errors() {
        assert!(parse_config_text("[data\nx=1").is_err());
        assert!(parse_config_text("novalue").is_err());
        assert!(parse_config_text("a=1\n[s]\na=2").is_err());
        assert_eq!(
            parse_config_text("# c\n[s]\n a = b c \n").unwrap(),
            vec![("a".to_string(), "b c".to_string())]
        );
        let mut c = RunConfig::default();
        assert!(c.set("bogus", "1").is_err());
        c.set("split_train", "0.95").unwrap();
        assert!(c.validate().is_err());
    }

    #[test]
    fn split_sizes() {
        let d = DataSpec::default();
        assert_eq!(d.split_sizes(100), (80, 10, 10));
        assert_eq!(d.split_sizes(7), (6, 1, 0));
    }
}
