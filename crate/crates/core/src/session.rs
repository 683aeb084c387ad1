//! Stateful multi-turn chat over a trained model.

use serde::Serialize;

use crate::corpus::{build_context, tokenize, EntitySet, KbTriple, Utterance};
use crate::model::{Generated, Thpn};
use crate::retrieval::{QaRepository, RetrievedAnswer, RetrievedAnswers};
use crate::training::Hyperparams;
use crate::{Error, Result};

/// One system reply with the guidance it used.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Reply {
    pub text: String,
    pub retrieved: Vec<RetrievedAnswerView>,
    pub generated: Generated,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RetrievedAnswerView {
    pub pair_id: usize,
    pub text: String,
    pub score: f64,
}

impl From<&RetrievedAnswer> for RetrievedAnswerView {
    fn from(a: &RetrievedAnswer) -> Self {
        RetrievedAnswerView {
            pair_id: a.pair_id,
            text: a.tokens.join(" "),
            score: a.score,
        }
    }
}

/// Dialogue history and KB accumulated across turns.
#[derive(Debug)]
pub struct ChatSession {
    model: Thpn,
    hp: Hyperparams,
    repo: Option<QaRepository>,
    lexicon: EntitySet,
    history: Vec<Utterance>,
    kb: Vec<KbTriple>,
}

impl ChatSession {
    /// `lexicon` is the training entity lexicon used for retrieved-answer
    /// masking; `repo` may be omitted, in which case no guidance is used.
    pub fn new(
        model: Thpn,
        hp: Hyperparams,
        repo: Option<QaRepository>,
        lexicon: EntitySet,
    ) -> Self {
        ChatSession {
            model,
            hp,
            repo,
            lexicon,
            history: Vec::new(),
            kb: Vec::new(),
        }
    }

    pub fn model(&self) -> &Thpn {
        &self.model
    }

    pub fn hyperparams(&self) -> &Hyperparams {
        &self.hp
    }

    pub fn history(&self) -> &[Utterance] {
        &self.history
    }

    pub fn kb(&self) -> &[KbTriple] {
        &self.kb
    }

    pub fn repository(&self) -> Option<&QaRepository> {
        self.repo.as_ref()
    }

    pub fn add_kb(&mut self, subject: &str, relation: &str, object: &str) -> Result<()> {
        let parts = [subject, relation, object];
        if parts
            .iter()
            .any(|p| p.is_empty() || p.split_whitespace().count() != 1)
        {
            return Err(Error::Data(
                "a KB triple needs three single-token fields".into(),
            ));
        }
        self.kb.push(KbTriple::new(
            subject.to_lowercase(),
            relation.to_lowercase(),
            object.to_lowercase(),
        ));
        Ok(())
    }

    /// Forgets the dialogue history. The KB is kept.
    pub fn reset(&mut self) {
        self.history.clear();
    }

    /// Forgets both history and KB.
    pub fn clear(&mut self) {
        self.history.clear();
        self.kb.clear();
    }

    /// Answers `utterance` and appends both sides to the history.
    pub fn respond(&mut self, utterance: &str) -> Result<Reply> {
        let tokens = tokenize(utterance);
        if tokens.is_empty() {
            return Err(Error::Data("empty utterance".into()));
        }
        let mut history = self.history.clone();
        history.push(Utterance::user(tokens));
        let context = build_context(&history, &self.kb)?;
        let retrieved = match (&self.repo, self.hp.model.ablation.no_ir) {
            (Some(repo), false) => {
                let entities = EntitySet::from_kb(&self.kb).union(&self.lexicon);
                repo.retrieve(&context.query, &self.hp.retrieval()?, &entities, None)
            }
            _ => RetrievedAnswers::sentinel_only(),
        };
        let generated = self.model.generate(&context, &retrieved, self.hp.max_len)?;
        history.push(Utterance::system(generated.tokens.clone()));
        self.history = history;
        Ok(Reply {
            text: generated.tokens.join(" "),
            retrieved: retrieved
                .answers
                .iter()
                .map(RetrievedAnswerView::from)
                .collect(),
            generated,
        })
    }
}
