//! Teacher-forced training: pointer targets with sentinel fallback, the
//! three-headed loss, per-example Adam updates, best-epoch selection and
//! checkpoints.

mod checkpoint;
mod hyper;

use std::ops::ControlFlow;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use checkpoint::{
    load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint, CHECKPOINT_MAGIC,
    CHECKPOINT_VERSION,
};
pub use hyper::{Hyperparams, LossWeights, SelectMetric, HYPERPARAM_KEYS};

use crate::corpus::{
    build_context, build_vocab, history_before, Dialogue, EncodedContext, EntitySet, Vocabulary,
};
use crate::metrics::{bleu, per_response_accuracy};
use crate::model::{Distributions, Generated, Prepared, Thpn};
use crate::numerics::{adam_step, clip_global_norm, AdamState, Graph, RngState, Var};
use crate::retrieval::{QaRepository, RetrievalConfig, RetrievedAnswers};
use crate::{Error, Result};

/// One system turn to predict.
#[derive(Clone, Debug)]
pub struct Example {
    pub dialogue: usize,
    pub turn: usize,
    /// Index of this turn among all turns of its corpus, which is its pair id
    /// in a repository built from that corpus.
    pub pair_id: usize,
    pub context: EncodedContext,
    pub retrieved: RetrievedAnswers,
    pub gold: Vec<String>,
    pub domain: Option<String>,
}

/// Builds one example per turn. Retrieval runs only when `repo` is given;
/// otherwise the retrieved memory is the sentinel alone. With `exclude_self`
/// the example's own pair is removed from its candidates, which requires
/// `repo` to have been built from exactly `dialogues`.
pub fn build_examples(
    dialogues: &[Dialogue],
    repo: Option<&QaRepository>,
    retrieval: &RetrievalConfig,
    lexicon: &EntitySet,
    exclude_self: bool,
) -> Result<Vec<Example>> {
    let mut slots = Vec::new();
    for (di, d) in dialogues.iter().enumerate() {
        for ti in 0..d.turns.len() {
            slots.push((di, ti, slots.len()));
        }
    }
    if let (true, Some(r)) = (exclude_self, repo) {
        if r.len() != slots.len() {
            return Err(Error::Config(format!(
                "repository holds {} pairs but the corpus has {} turns",
                r.len(),
                slots.len()
            )));
        }
    }
    slots
        .into_par_iter()
        .map(|(di, ti, pair_id)| {
            let d = &dialogues[di];
            let context = build_context(&history_before(d, ti), &d.kb)?;
            let retrieved = match repo {
                Some(r) => {
                    let entities = EntitySet::from_kb(&d.kb).union(lexicon);
                    r.retrieve(
                        &context.query,
                        retrieval,
                        &entities,
                        exclude_self.then_some(pair_id),
                    )
                }
                None => RetrievedAnswers::sentinel_only(),
            };
            Ok(Example {
                dialogue: di,
                turn: ti,
                pair_id,
                context,
                retrieved,
                gold: d.turns[ti].system.clone(),
                domain: d.domain.clone(),
            })
        })
        .collect()
}

/// Per-step supervision for the three heads.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PointerTargets {
    /// Decoder inputs: the start symbol followed by the gold tokens.
    pub inputs: Vec<usize>,
    pub vocab: Vec<usize>,
    pub history: Vec<usize>,
    pub retrieved: Vec<usize>,
}

impl PointerTargets {
    pub fn len(&self) -> usize {
        self.vocab.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vocab.is_empty()
    }
}

fn last_copyable(tokens: &[String], mask: &[bool], token: &str) -> usize {
    let sentinel = tokens.len() - 1;
    (0..sentinel)
        .rev()
        .find(|&i| mask[i] && tokens[i] == token)
        .unwrap_or(sentinel)
}

/// Targets for `gold` followed by the end symbol: the vocabulary id, and for
/// each pointer the last copyable slot holding the token, else its
/// sentinel. `prep` already carries the masks selected by the masking flags.
pub fn build_targets(gold: &[String], prep: &Prepared, vocab: &Vocabulary) -> PointerTargets {
    let mut t = PointerTargets {
        inputs: vec![Vocabulary::SOS_ID],
        vocab: Vec::with_capacity(gold.len() + 1),
        history: Vec::with_capacity(gold.len() + 1),
        retrieved: Vec::with_capacity(gold.len() + 1),
    };
    for tok in gold {
        let id = vocab.id(tok);
        t.inputs.push(id);
        t.vocab.push(id);
        t.history
            .push(last_copyable(&prep.history_tokens, &prep.r_h, tok));
        t.retrieved
            .push(last_copyable(&prep.retrieved_tokens, &prep.r_r, tok));
    }
    t.vocab.push(Vocabulary::EOS_ID);
    t.history.push(prep.history_len() - 1);
    t.retrieved.push(prep.retrieved_len() - 1);
    t
}

/// Mean over steps of the weighted sum of the three negative
/// log-likelihoods. Pointer terms are dropped when `use_pointers` is off.
pub fn loss(
    g: &mut Graph<'_>,
    dists: &[Distributions],
    targets: &PointerTargets,
    weights: &LossWeights,
    use_pointers: bool,
) -> Result<Var> {
    if dists.len() != targets.len() || dists.is_empty() {
        return Err(Error::Data(format!(
            "{} steps for {} targets",
            dists.len(),
            targets.len()
        )));
    }
    let mut terms = Vec::with_capacity(3 * dists.len());
    let weighted = |g: &mut Graph<'_>, v: Var, w: f64| if w == 1.0 { v } else { g.scale(v, w) };
    for (t, d) in dists.iter().enumerate() {
        let v = g.nll(d.p_v, targets.vocab[t])?;
        terms.push(weighted(g, v, weights.vocab));
        if use_pointers {
            let h = g.nll(d.p_h, targets.history[t])?;
            terms.push(weighted(g, h, weights.history));
            let r = g.nll(d.p_r, targets.retrieved[t])?;
            terms.push(weighted(g, r, weights.retrieved));
        }
    }
    let total = g.add_all(&terms)?;
    Ok(g.scale(total, 1.0 / dists.len() as f64))
}

/// Loss of one example and the gradient of every parameter (`None` where the
/// parameter did not influence the loss).
pub fn example_gradients(
    model: &Thpn,
    prep: &Prepared,
    targets: &PointerTargets,
    weights: &LossWeights,
    training: bool,
    rng: &mut RngState,
) -> Result<(f64, Vec<Option<Vec<f64>>>)> {
    let mut g = Graph::new();
    let vars = model.bind(&mut g);
    let dists = model.teacher_forced(&mut g, &vars, prep, &targets.inputs, training, rng)?;
    let l = loss(
        &mut g,
        &dists,
        targets,
        weights,
        !model.config().ablation.no_ptr,
    )?;
    let value = g.item(l);
    let mut grads = g.backward(l)?;
    Ok((value, vars.iter().map(|&v| grads.take(v)).collect()))
}

/// Loss value only, in evaluation mode.
pub fn example_loss(
    model: &Thpn,
    prep: &Prepared,
    targets: &PointerTargets,
    weights: &LossWeights,
) -> Result<f64> {
    let mut g = Graph::new();
    let vars = model.bind(&mut g);
    let mut rng = RngState::new(0);
    let dists = model.teacher_forced(&mut g, &vars, prep, &targets.inputs, false, &mut rng)?;
    let l = loss(
        &mut g,
        &dists,
        targets,
        weights,
        !model.config().ablation.no_ptr,
    )?;
    Ok(g.item(l))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_metric: Option<f64>,
    pub seconds: f64,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    /// Parameters of the best epoch, rounded to checkpoint precision.
    pub model: Thpn,
    pub log: Vec<EpochLog>,
    pub best_epoch: usize,
    /// Loss of the very first update, before any parameter changed.
    pub first_step_loss: f64,
}

/// Greedy decodes of `examples`, in order.
pub fn decode_all(model: &Thpn, examples: &[Example], max_len: usize) -> Result<Vec<Generated>> {
    examples
        .par_iter()
        .map(|e| model.generate(&e.context, &e.retrieved, max_len))
        .collect()
}

/// The validation score used for model selection.
pub fn validation_metric(model: &Thpn, examples: &[Example], hp: &Hyperparams) -> Result<f64> {
    let preds: Vec<Vec<String>> = decode_all(model, examples, hp.max_len)?
        .into_iter()
        .map(|g| g.tokens)
        .collect();
    let gold: Vec<Vec<String>> = examples.iter().map(|e| e.gold.clone()).collect();
    match hp.select_metric {
        SelectMetric::Accuracy => per_response_accuracy(&gold, &preds),
        SelectMetric::Bleu => bleu(&gold, &preds),
    }
}

/// Trains a fresh model on `train`, selecting the epoch with the best
/// validation metric on `valid` (the last epoch when `valid` is empty).
/// `repo` must be built from `train`; it is not queried under `no_ir`.
pub fn train(
    train: &[Dialogue],
    valid: &[Dialogue],
    repo: Option<&QaRepository>,
    hp: &Hyperparams,
    on_epoch: impl FnMut(&EpochLog),
) -> Result<TrainOutcome> {
    let mut on_epoch = on_epoch;
    train_with(
        train,
        valid,
        repo,
        hp,
        |_| Ok(()),
        |e| {
            on_epoch(e);
            ControlFlow::Continue(())
        },
    )
}

/// [`train`] with a hook that may modify the freshly initialised model, for
/// example to load pretrained embeddings. Returning `Break` from `on_epoch`
/// ends training after that epoch; selection still covers every epoch run.
pub fn train_with(
    train: &[Dialogue],
    valid: &[Dialogue],
    repo: Option<&QaRepository>,
    hp: &Hyperparams,
    init: impl FnOnce(&mut Thpn) -> Result<()>,
    mut on_epoch: impl FnMut(&EpochLog) -> ControlFlow<()>,
) -> Result<TrainOutcome> {
    hp.validate()?;
    if train.iter().all(|d| d.turns.is_empty()) {
        return Err(Error::Config("empty training set".into()));
    }
    let vocab = build_vocab(train);
    let lexicon = EntitySet::from_dialogues(train);
    let rcfg = hp.retrieval()?;
    let repo = if hp.model.ablation.no_ir { None } else { repo };
    if !hp.model.ablation.no_ir && repo.is_none() {
        return Err(Error::Config(
            "training with retrieval needs a repository".into(),
        ));
    }
    let train_ex = build_examples(train, repo, &rcfg, &lexicon, true)?;
    let valid_ex = build_examples(valid, repo, &rcfg, &lexicon, false)?;

    let root = RngState::new(hp.seed);
    let mut model = Thpn::new(hp.model, vocab, &mut root.fork(1))?;
    init(&mut model)?;
    let mut order_rng = root.fork(2);
    let mut dropout_rng = root.fork(3);

    let preps: Vec<Prepared> = train_ex
        .iter()
        .map(|e| model.prepare(&e.context, &e.retrieved))
        .collect();
    let targets: Vec<PointerTargets> = train_ex
        .iter()
        .zip(&preps)
        .map(|(e, p)| build_targets(&e.gold, p, model.vocab()))
        .collect();

    let mut adam = AdamState::new(model.params(), hp.lr);
    let mut log = Vec::with_capacity(hp.epochs);
    let mut best: Option<(f64, usize, Vec<crate::numerics::Tensor>)> = None;
    let mut first_step_loss = f64::NAN;
    let mut order: Vec<usize> = (0..train_ex.len()).collect();
    for epoch in 1..=hp.epochs {
        let start = Instant::now();
        order_rng.shuffle(&mut order);
        let mut total = 0.0;
        for &i in &order {
            let (l, grads) = example_gradients(
                &model,
                &preps[i],
                &targets[i],
                &hp.loss_weights,
                true,
                &mut dropout_rng,
            )?;
            if first_step_loss.is_nan() {
                first_step_loss = l;
            }
            total += l;
            for (p, g) in model.params_mut().iter_mut().zip(grads) {
                match g {
                    Some(g) => p.set_grad(g)?,
                    None => p.clear_grad(),
                }
            }
            clip_global_norm(model.params_mut(), hp.clip);
            adam_step(model.params_mut(), &mut adam);
        }
        let train_loss = total / order.len() as f64;
        let val_metric = if valid_ex.is_empty() {
            None
        } else {
            Some(validation_metric(&model, &valid_ex, hp)?)
        };
        let entry = EpochLog {
            epoch,
            train_loss,
            val_metric,
            seconds: start.elapsed().as_secs_f64(),
        };
        log::info!(
            "epoch {epoch}: train loss {train_loss:.4}, validation {}",
            val_metric.map_or("n/a".to_string(), |m| format!("{m:.4}"))
        );
        let flow = on_epoch(&entry);
        log.push(entry);
        let score = val_metric.unwrap_or(f64::NEG_INFINITY);
        if best
            .as_ref()
            .is_none_or(|(b, _, _)| score > *b || val_metric.is_none())
        {
            best = Some((score, epoch, model.params().to_vec()));
        }
        if flow.is_break() {
            break;
        }
    }
    let best_epoch = match best {
        Some((_, epoch, params)) => {
            for (p, b) in model.params_mut().iter_mut().zip(params) {
                *p = b;
            }
            epoch
        }
        None => 0,
    };
    for p in model.params_mut() {
        p.clear_grad();
    }
    model.round_to_f32();
    Ok(TrainOutcome {
        model,
        log,
        best_epoch,
        first_step_loss,
    })
}
