use super::{tag_tokens, Dialogue, EntitySet, EntityTag, KbTriple, Speaker, Utterance};
use crate::{Error, Result};

/// Sentinel token terminating every memory sequence.
pub const SENTINEL: &str = "$$$";
/// Speaker markers added to history slot features.
pub const USER_MARKER: &str = "$u";
pub const SYSTEM_MARKER: &str = "$s";
/// Turn markers run `turn_1..=turn_16`; later turns share the last marker.
pub const MAX_TURN_MARKER: usize = 16;

pub fn turn_marker(turn_index: usize) -> String {
    format!("turn_{}", (turn_index + 1).min(MAX_TURN_MARKER))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum SpeakerTag {
    User,
    System,
    Kb,
    Answer,
}

/// One memory slot.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MemoryItem {
    /// Token emitted when a pointer copies this slot.
    pub emit_token: String,
    /// Tokens whose embeddings are summed into the slot vector.
    pub feature_tokens: Vec<String>,
    pub speaker: SpeakerTag,
    pub turn_index: usize,
    pub tag: EntityTag,
    pub is_sentinel: bool,
}

impl MemoryItem {
    pub fn sentinel() -> Self {
        MemoryItem {
            emit_token: SENTINEL.to_string(),
            feature_tokens: vec![SENTINEL.to_string()],
            speaker: SpeakerTag::Kb,
            turn_index: 0,
            tag: EntityTag::New,
            is_sentinel: true,
        }
    }
}

/// Flattened history + KB memory with its copy mask.
///
/// Layout: one slot per history token, one slot per KB triple, then the
/// sentinel. `r_h[i]` is true when slot `i` may be copied: entity history
/// tokens and every KB slot; never non-entity tokens or the sentinel.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct EncodedContext {
    pub items: Vec<MemoryItem>,
    pub r_h: Vec<bool>,
    /// Tokens of the final user utterance (the current query).
    pub query: Vec<String>,
}

impl EncodedContext {
    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn sentinel_position(&self) -> usize {
        self.items.len() - 1
    }
}

/// Builds the memory for history `u_1, s_1, ..., u_i` and the dialogue KB.
pub fn build_context(history: &[Utterance], kb: &[KbTriple]) -> Result<EncodedContext> {
    let last = history
        .last()
        .ok_or_else(|| Error::Data("empty dialogue history".into()))?;
    if last.speaker != Speaker::User {
        return Err(Error::Data("history must end with a user utterance".into()));
    }
    let entities = EntitySet::from_kb(kb);
    let mut items = Vec::new();
    let mut turn = 0;
    for (pos, u) in history.iter().enumerate() {
        if pos > 0 && u.speaker == Speaker::User {
            turn += 1;
        }
        let (tag, marker) = match u.speaker {
            Speaker::User => (SpeakerTag::User, USER_MARKER),
            Speaker::System => (SpeakerTag::System, SYSTEM_MARKER),
        };
        let tm = turn_marker(turn);
        for (tok, et) in u.tokens.iter().zip(tag_tokens(&u.tokens, &entities)) {
            items.push(MemoryItem {
                emit_token: tok.clone(),
                feature_tokens: vec![tok.clone(), marker.to_string(), tm.clone()],
                speaker: tag,
                turn_index: turn,
                tag: et,
                is_sentinel: false,
            });
        }
    }
    for t in kb {
        items.push(MemoryItem {
            emit_token: t.object.clone(),
            feature_tokens: vec![t.subject.clone(), t.relation.clone(), t.object.clone()],
            speaker: SpeakerTag::Kb,
            turn_index: turn,
            tag: EntityTag::Ew,
            is_sentinel: false,
        });
    }
    items.push(MemoryItem::sentinel());
    let r_h = items
        .iter()
        .map(|it| !it.is_sentinel && it.tag == EntityTag::Ew)
        .collect();
    Ok(EncodedContext {
        items,
        r_h,
        query: last.tokens.clone(),
    })
}

/// History `u_1, s_1, ..., u_turn` of a dialogue, ending at the user side of
/// turn `turn` (0-based).
pub fn history_before(dialogue: &Dialogue, turn: usize) -> Vec<Utterance> {
    let mut h = Vec::with_capacity(2 * turn + 1);
    for t in &dialogue.turns[..turn] {
        h.push(Utterance::user(t.user.clone()));
        h.push(Utterance::system(t.system.clone()));
    }
    h.push(Utterance::user(dialogue.turns[turn].user.clone()));
    h
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::tokenize;

    #[test]
    fn single_new_utterance() {
        let ctx = build_context(&[Utterance::user(tokenize("hi"))], &[]).unwrap();
        let emitted: Vec<&str> = ctx.items.iter().map(|i| i.emit_token.as_str()).collect();
        assert_eq!(emitted, vec!["hi", "$$$"]);
        assert_eq!(ctx.r_h, vec![false, false]);
        assert_eq!(ctx.query, vec!["hi"]);
    }

    #[test]
    fn mask_follows_entity_tags() {
        let kb = vec![KbTriple::new("resto_x", "r_cuisine", "thai")];
        let ctx = build_context(&[Utterance::user(tokenize("i want thai food"))], &kb).unwrap();
        assert_eq!(ctx.r_h, vec![false, false, true, false, true, false]);
        let kb_slot = &ctx.items[4];
        assert_eq!(kb_slot.emit_token, "thai");
        assert_eq!(kb_slot.feature_tokens, vec!["resto_x", "r_cuisine", "thai"]);
        assert!(ctx.items.last().unwrap().is_sentinel);
    }

    #[test]
    fn item_count_and_turn_markers() {
        let h = vec![
            Utterance::user(tokenize("a b")),
            Utterance::system(tokenize("c")),
            Utterance::user(tokenize("d e f")),
        ];
        let kb = vec![KbTriple::new("s", "r", "o"), KbTriple::new("s2", "r", "o2")];
        let ctx = build_context(&h, &kb).unwrap();
        assert_eq!(ctx.len(), 2 + 1 + 3 + kb.len() + 1);
        assert_eq!(ctx.items[0].feature_tokens, vec!["a", "$u", "turn_1"]);
        assert_eq!(ctx.items[2].feature_tokens, vec!["c", "$s", "turn_1"]);
        assert_eq!(ctx.items[3].feature_tokens, vec!["d", "$u", "turn_2"]);
        assert_eq!(ctx.query, vec!["d", "e", "f"]);
    }

    #[test]
    fn errors() {
        assert!(build_context(&[], &[]).is_err());
        assert!(build_context(&[Utterance::system(tokenize("x"))], &[]).is_err());
    }

    #[test]
    fn turn_marker_is_capped() {
        assert_eq!(turn_marker(0), "turn_1");
        assert_eq!(turn_marker(15), "turn_16");
        assert_eq!(turn_marker(40), "turn_16");
    }
}
