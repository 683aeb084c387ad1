use std::collections::{BTreeSet, HashMap};

use super::context::{turn_marker, MAX_TURN_MARKER, SENTINEL, SYSTEM_MARKER, USER_MARKER};
use super::Dialogue;
use crate::{Error, Result};

pub const PAD: &str = "<pad>";
pub const UNK: &str = "<unk>";
pub const SOS: &str = "<sos>";
pub const EOS: &str = "<eos>";

const RESERVED: [&str; 5] = [PAD, UNK, SOS, EOS, SENTINEL];

/// Token/index bijection. Reserved symbols occupy indices `0..5`; every
/// other token follows in sorted order.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
}

impl Vocabulary {
    pub const PAD_ID: usize = 0;
    pub const UNK_ID: usize = 1;
    pub const SOS_ID: usize = 2;
    pub const EOS_ID: usize = 3;
    pub const SENTINEL_ID: usize = 4;

    /// Rebuilds a vocabulary from its ordered token list (e.g. from a checkpoint).
    pub fn from_tokens(tokens: Vec<String>) -> Result<Self> {
        if tokens.len() < RESERVED.len()
            || tokens[..RESERVED.len()]
                .iter()
                .zip(RESERVED)
                .any(|(a, b)| a != b)
        {
            return Err(Error::Incompatible(
                "vocabulary does not start with the reserved symbols".into(),
            ));
        }
        let mut index = HashMap::with_capacity(tokens.len());
        for (i, t) in tokens.iter().enumerate() {
            if index.insert(t.clone(), i).is_some() {
                return Err(Error::Incompatible(format!(
                    "duplicate vocabulary token {t:?}"
                )));
            }
        }
        Ok(Vocabulary { tokens, index })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    /// Index of `token`, or the UNK index when absent.
    pub fn id(&self, token: &str) -> usize {
        self.index.get(token).copied().unwrap_or(Self::UNK_ID)
    }

    pub fn get(&self, token: &str) -> Option<usize> {
        self.index.get(token).copied()
    }

    pub fn token(&self, id: usize) -> &str {
        &self.tokens[id]
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }
}

/// Vocabulary over every utterance and KB token of `dialogues`, plus reserved
/// symbols and memory markers. Independent of dialogue order.
pub fn build_vocab(dialogues: &[Dialogue]) -> Vocabulary {
    let mut set: BTreeSet<String> = BTreeSet::new();
    for d in dialogues {
        for t in &d.turns {
            set.extend(t.user.iter().cloned());
            set.extend(t.system.iter().cloned());
        }
        for k in &d.kb {
            set.insert(k.subject.clone());
            set.insert(k.relation.clone());
            set.insert(k.object.clone());
        }
    }
    set.insert(USER_MARKER.to_string());
    set.insert(SYSTEM_MARKER.to_string());
    for i in 0..MAX_TURN_MARKER {
        set.insert(turn_marker(i));
    }
    for r in RESERVED {
        set.remove(r);
    }
    let tokens: Vec<String> = RESERVED.iter().map(|s| s.to_string()).chain(set).collect();
    Vocabulary::from_tokens(tokens).expect("reserved prefix and unique tokens")
}
