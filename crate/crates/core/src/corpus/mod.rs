//! Dialogue data model, file formats, entity tagging and memory construction.

mod babi;
mod context;
mod entity;
mod jsonl;
mod synth;
mod vocab;

use serde::{Deserialize, Serialize};

pub use babi::{parse_babi, serialize_babi};
pub use context::{
    build_context, history_before, EncodedContext, MemoryItem, SpeakerTag, SENTINEL,
};
pub use entity::{tag_entities, tag_tokens, EntitySet, EntityTag};
pub use jsonl::{read_jsonl, read_jsonl_str, to_jsonl};
pub use synth::{generate_synthetic, SynthConfig, TaskStyle};
pub use vocab::{build_vocab, Vocabulary, EOS, PAD, SOS, UNK};

/// Lower-cases and splits on whitespace.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split_whitespace().map(str::to_lowercase).collect()
}

/// A `(subject, relation, object)` fact. Serialised as a 3-element array.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(from = "[String; 3]", into = "[String; 3]")]
pub struct KbTriple {
    pub subject: String,
    pub relation: String,
    pub object: String,
}

impl KbTriple {
    pub fn new(
        subject: impl Into<String>,
        relation: impl Into<String>,
        object: impl Into<String>,
    ) -> Self {
        KbTriple {
            subject: subject.into(),
            relation: relation.into(),
            object: object.into(),
        }
    }
}

impl From<[String; 3]> for KbTriple {
    fn from([subject, relation, object]: [String; 3]) -> Self {
        KbTriple {
            subject,
            relation,
            object,
        }
    }
}

impl From<KbTriple> for [String; 3] {
    fn from(t: KbTriple) -> Self {
        [t.subject, t.relation, t.object]
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Speaker {
    User,
    System,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Utterance {
    pub speaker: Speaker,
    pub tokens: Vec<String>,
}

impl Utterance {
    pub fn user(tokens: Vec<String>) -> Self {
        Utterance {
            speaker: Speaker::User,
            tokens,
        }
    }

    pub fn system(tokens: Vec<String>) -> Self {
        Utterance {
            speaker: Speaker::System,
            tokens,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Turn {
    pub user: Vec<String>,
    pub system: Vec<String>,
}

impl Turn {
    pub fn new(user: &str, system: &str) -> Self {
        Turn {
            user: tokenize(user),
            system: tokenize(system),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Dialogue {
    pub turns: Vec<Turn>,
    pub kb: Vec<KbTriple>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub domain: Option<String>,
}

impl Dialogue {
    /// Utterances in order `u_1, s_1, ..., u_T, s_T`.
    pub fn utterances(&self) -> Vec<Utterance> {
        self.turns
            .iter()
            .flat_map(|t| {
                [
                    Utterance::user(t.user.clone()),
                    Utterance::system(t.system.clone()),
                ]
            })
            .collect()
    }
}

/// A user utterance and the system reply that followed it.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct QaPair {
    pub question: Vec<String>,
    pub answer: Vec<String>,
}

/// One pair per `(u_i, s_i)` turn, in corpus order.
pub fn extract_qa_pairs(dialogues: &[Dialogue]) -> Vec<QaPair> {
    dialogues
        .iter()
        .flat_map(|d| d.turns.iter())
        .map(|t| QaPair {
            question: t.user.clone(),
            answer: t.system.clone(),
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tokenization_lowercases() {
        assert_eq!(
            tokenize("  Hello  World\tfoo_BAR "),
            vec!["hello", "world", "foo_bar"]
        );
    }

    #[test]
    fn qa_pairs_follow_turns() {
        let d = Dialogue {
            turns: vec![
                Turn::new("hi", "hello"),
                Turn::new("a b", "c"),
                Turn::new("d", "e f"),
            ],
            kb: vec![],
            domain: None,
        };
        let pairs = extract_qa_pairs(&[d.clone()]);
        assert_eq!(pairs.len(), 3);
        assert_eq!(pairs[1].question, d.turns[1].user);
        assert_eq!(pairs[2].answer, d.turns[2].system);
        let pairs = extract_qa_pairs(&[d.clone(), d]);
        assert_eq!(pairs.len(), 6);
    }

    #[test]
    fn triple_json_is_an_array() {
        let t = KbTriple::new("a", "b", "c");
        assert_eq!(serde_json::to_string(&t).unwrap(), r#"["a","b","c"]"#);
        let back: KbTriple = serde_json::from_str(r#"["a","b","c"]"#).unwrap();
        assert_eq!(back, t);
    }
}
