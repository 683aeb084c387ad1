#![allow(dead_code)]

use thpn::corpus::{
    build_context, extract_qa_pairs, generate_synthetic, tokenize, Dialogue, EncodedContext,
    EntitySet, KbTriple, SynthConfig, TaskStyle, Utterance, Vocabulary,
};
use thpn::model::{select_token, ModelConfig, Prepared, Source, Thpn};
use thpn::numerics::{Graph, RngState};
use thpn::retrieval::{QaRepository, RetrievedAnswer, RetrievedAnswers, WordVectors};
use thpn::training::{build_targets, example_gradients, example_loss, LossWeights, PointerTargets};

pub fn corpus(n: usize, restaurants: usize, style: TaskStyle, seed: u64) -> Vec<Dialogue> {
    generate_synthetic(&SynthConfig {
        n_restaurants: restaurants,
        n_dialogues: n,
        style,
        seed,
    })
    .unwrap()
}

pub fn cosine_repo(train: &[Dialogue]) -> QaRepository {
    QaRepository::cosine(extract_qa_pairs(train), WordVectors::one_hot()).unwrap()
}

/// Twelve tokens: the seven memory/control symbols, one turn marker and four
/// words.
pub fn tiny_vocab() -> Vocabulary {
    let toks = [
        "<pad>", "<unk>", "<sos>", "<eos>", "$$$", "$u", "$s", "turn_1", "hi", "table", "paris",
        "ok",
    ];
    Vocabulary::from_tokens(toks.iter().map(|s| s.to_string()).collect()).unwrap()
}

pub fn tiny_config() -> ModelConfig {
    ModelConfig {
        dim: 8,
        hops: 3,
        dropout: 0.0,
        ..ModelConfig::default()
    }
}

/// Weights drawn at 0.4·N(0, 1) so that every gradient is well away from
/// zero.
pub fn tiny_model(seed: u64, config: ModelConfig) -> Thpn {
    let mut rng = RngState::new(seed);
    let mut m = Thpn::new(config, tiny_vocab(), &mut rng).unwrap();
    for p in m.params_mut() {
        for x in p.data_mut() {
            *x = 0.4 * rng.normal();
        }
    }
    m
}

/// Four history tokens plus one KB triple; a three-token retrieved answer.
pub fn tiny_example() -> (EncodedContext, RetrievedAnswers) {
    let kb = vec![KbTriple::new("paris", "table", "ok")];
    let ctx = build_context(&[Utterance::user(tokenize("hi table paris ok"))], &kb).unwrap();
    let answers = vec![RetrievedAnswer {
        pair_id: 0,
        tokens: tokenize("ok paris hi"),
        score: 0.9,
    }];
    (
        ctx,
        RetrievedAnswers::from_answers(answers, &EntitySet::from_kb(&kb)),
    )
}

/// Worst per-tensor relative error `‖a − n‖ / max(‖a‖, ‖n‖)` between tape
/// gradients and central differences (h = 1e-6) of the training loss.
pub fn gradient_check(
    model: &mut Thpn,
    prep: &Prepared,
    targets: &PointerTargets,
) -> (f64, String) {
    let w = LossWeights::default();
    let (_, grads) =
        example_gradients(model, prep, targets, &w, false, &mut RngState::new(0)).unwrap();
    let h = 1e-6;
    let mut worst = (0.0, String::new());
    for (pi, g) in grads.iter().enumerate() {
        let (mut diff, mut na, mut nn) = (0.0f64, 0.0f64, 0.0f64);
        for j in 0..model.params()[pi].len() {
            let orig = model.params()[pi].data()[j];
            model.params_mut()[pi].data_mut()[j] = orig + h;
            let up = example_loss(model, prep, targets, &w).unwrap();
            model.params_mut()[pi].data_mut()[j] = orig - h;
            let down = example_loss(model, prep, targets, &w).unwrap();
            model.params_mut()[pi].data_mut()[j] = orig;
            let n = (up - down) / (2.0 * h);
            let a = g.as_ref().map_or(0.0, |g| g[j]);
            diff += (a - n).powi(2);
            na += a * a;
            nn += n * n;
        }
        let denom = na.sqrt().max(nn.sqrt());
        let rel = if denom > 0.0 {
            diff.sqrt() / denom
        } else {
            0.0
        };
        if rel > worst.0 {
            worst = (rel, model.param_names()[pi].clone());
        }
    }
    worst
}

pub fn tiny_gradient_error(seed: u64, config: ModelConfig, gold: &str) -> (f64, String) {
    let mut m = tiny_model(seed, config);
    let (ctx, ret) = tiny_example();
    let prep = m.prepare(&ctx, &ret);
    let t = build_targets(&tokenize(gold), &prep, m.vocab());
    gradient_check(&mut m, &prep, &t)
}

/// Counts from an instrumented greedy decode.
#[derive(Debug, Default, Clone, Copy)]
pub struct StepAudit {
    pub steps: usize,
    pub violations: usize,
}

/// Greedy decoding that checks, at every step, that the three heads are
/// probability vectors with exact zeros off their supports and that the
/// emitted token never comes from a masked slot or a sentinel.
pub fn audited_decode(
    model: &Thpn,
    prep: &Prepared,
    max_len: usize,
    audit: &mut StepAudit,
) -> Vec<String> {
    let mut g = Graph::new();
    let vars = model.bind(&mut g);
    let mut rng = RngState::new(0);
    let ex = model.example_state(&mut g, &vars, prep).unwrap();
    let use_ptr = !model.config().ablation.no_ptr;
    let mut y = Vocabulary::SOS_ID;
    let mut h = None;
    let mut out = Vec::new();
    for _ in 0..max_len {
        let s = model
            .step(&mut g, &vars, prep, &ex, y, h, false, &mut rng)
            .unwrap();
        h = Some(s.h);
        let (pv, ph, pr) = (
            g.value(s.dist.p_v).to_vec(),
            g.value(s.dist.p_h).to_vec(),
            g.value(s.dist.p_r).to_vec(),
        );
        audit.steps += 1;
        let ok_dist = |p: &[f64], support: Option<&[bool]>| {
            let sum: f64 = p.iter().sum();
            (sum - 1.0).abs() <= 1e-12
                && p.iter().all(|&x| x >= 0.0)
                && support.is_none_or(|s| p.iter().zip(s).all(|(&x, &m)| m || x == 0.0))
        };
        if !ok_dist(&pv, None)
            || !ok_dist(&ph, Some(&prep.history_support()))
            || !ok_dist(&pr, Some(&prep.retrieved_support()))
        {
            audit.violations += 1;
        }
        let p = select_token(&pv, &ph, &pr, prep, model.vocab(), use_ptr);
        let bad = match p.source {
            Source::History => !prep.r_h[p.position] || p.position == prep.history_len() - 1,
            Source::Retrieved => !prep.r_r[p.position] || p.position == prep.retrieved_len() - 1,
            Source::Vocab => false,
        };
        if bad {
            audit.violations += 1;
        }
        if p.source == Source::Vocab && p.position == Vocabulary::EOS_ID {
            break;
        }
        y = model.vocab().id(&p.token);
        out.push(p.token);
    }
    out
}
