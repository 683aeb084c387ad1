use std::collections::BTreeSet;

use super::{Dialogue, KbTriple};

/// Entity-word / non-entity-word classification of a token.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum EntityTag {
    Ew,
    New,
}

/// Surface forms that count as entities: subjects and objects of KB triples.
/// Relation names are not entities.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct EntitySet(BTreeSet<String>);

impl EntitySet {
    pub fn from_kb(kb: &[KbTriple]) -> Self {
        EntitySet(
            kb.iter()
                .flat_map(|t| [t.subject.clone(), t.object.clone()])
                .collect(),
        )
    }

    /// Union over the KBs of every dialogue.
    pub fn from_dialogues(dialogues: &[Dialogue]) -> Self {
        EntitySet(
            dialogues
                .iter()
                .flat_map(|d| d.kb.iter())
                .flat_map(|t| [t.subject.clone(), t.object.clone()])
                .collect(),
        )
    }

    pub fn union(&self, other: &EntitySet) -> EntitySet {
        EntitySet(self.0.union(&other.0).cloned().collect())
    }

    pub fn contains(&self, token: &str) -> bool {
        self.0.contains(token)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &str> {
        self.0.iter().map(String::as_str)
    }
}

pub fn tag_tokens(tokens: &[String], entities: &EntitySet) -> Vec<EntityTag> {
    tokens
        .iter()
        .map(|t| {
            if entities.contains(t) {
                EntityTag::Ew
            } else {
                EntityTag::New
            }
        })
        .collect()
}

/// Tags for every utterance of `dialogue`, in `u_1, s_1, ...` order, against
/// the dialogue's own KB.
pub fn tag_entities(dialogue: &Dialogue) -> Vec<Vec<EntityTag>> {
    let entities = EntitySet::from_kb(&dialogue.kb);
    dialogue
        .utterances()
        .iter()
        .map(|u| tag_tokens(&u.tokens, &entities))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{tokenize, Turn};

    #[test]
    fn weather_example() {
        let d = Dialogue {
            turns: vec![Turn::new(
                "what is the temperature of carson on tuesday",
                "ok",
            )],
            kb: vec![KbTriple::new("carson", "tuesday", "low_of_20f")],
            domain: None,
        };
        let tags = &tag_entities(&d)[0];
        let toks = tokenize("what is the temperature of carson on tuesday");
        for (t, tag) in toks.iter().zip(tags) {
            let want = if t == "carson" {
                EntityTag::Ew
            } else {
                EntityTag::New
            };
            // "tuesday" is the relation of the only triple, so not an entity here
            assert_eq!(*tag, want, "{t}");
        }

        // with tuesday also appearing as a subject it becomes an entity
        let mut d2 = d.clone();
        d2.kb.push(KbTriple::new("tuesday", "r_date", "tuesday"));
        let tags = &tag_entities(&d2)[0];
        let ew: Vec<&String> = toks
            .iter()
            .zip(tags)
            .filter(|(_, t)| **t == EntityTag::Ew)
            .map(|(w, _)| w)
            .collect();
        assert_eq!(ew, vec!["carson", "tuesday"]);
    }

    #[test]
    fn empty_kb_means_all_new() {
        let d = Dialogue {
            turns: vec![Turn::new("book a table", "sure")],
            kb: vec![],
            domain: None,
        };
        assert!(tag_entities(&d)
            .iter()
            .flatten()
            .all(|t| *t == EntityTag::New));
    }

    #[test]
    fn relation_only_tokens_are_new() {
        let kb = vec![
            KbTriple::new("resto_a", "r_phone", "resto_a_phone"),
            KbTriple::new("resto_b", "r_cuisine", "thai"),
        ];
        let toks = tokenize("r_phone resto_a thai r_cuisine resto_a_phone other");
        let tags = tag_tokens(&toks, &EntitySet::from_kb(&kb));
        // membership oracle over subject/object sets
        let subjects_objects: Vec<&str> = kb
            .iter()
            .flat_map(|t| [t.subject.as_str(), t.object.as_str()])
            .collect();
        for (t, tag) in toks.iter().zip(tags) {
            let want = if subjects_objects.contains(&t.as_str()) {
                EntityTag::Ew
            } else {
                EntityTag::New
            };
            assert_eq!(tag, want, "{t}");
        }
    }
}
