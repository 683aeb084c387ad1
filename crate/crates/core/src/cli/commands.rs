use std::io::{BufRead, IsTerminal, Write};
use std::ops::ControlFlow;
use std::path::{Path, PathBuf};

use serde::Serialize;
use serde_json::{json, Value};

use super::RunConfig;
use crate::corpus::{
    build_vocab, extract_qa_pairs, generate_synthetic, parse_babi, read_jsonl, serialize_babi,
    to_jsonl, Dialogue, EntitySet,
};
use crate::metrics::{MetricsReport, Scored};
use crate::model::{Generated, Source, Thpn};
use crate::retrieval::{read_external_vectors, Method, QaRepository, RetrievalConfig, WordVectors};
use crate::session::{ChatSession, RetrievedAnswerView};
use crate::training::{
    build_examples, decode_all, load_checkpoint, train_with, write_checkpoint, EpochLog, Example,
    Hyperparams, TrainOutcome,
};
use crate::util::write_atomic;
use crate::{Error, Result};

pub const SPLITS: [&str; 3] = ["train", "valid", "test"];

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Splits {
    pub train: Vec<Dialogue>,
    pub valid: Vec<Dialogue>,
    pub test: Vec<Dialogue>,
}

fn read_split(dir: &Path, name: &str) -> Result<Option<Vec<Dialogue>>> {
    let jsonl = dir.join(format!("{name}.jsonl"));
    if jsonl.exists() {
        let f = std::fs::File::open(&jsonl)?;
        return read_jsonl(std::io::BufReader::new(f)).map(Some);
    }
    for file in [format!("{name}.babi.txt"), format!("{name}.txt")] {
        let p = dir.join(file);
        if p.exists() {
            return parse_babi(&std::fs::read_to_string(p)?).map(Some);
        }
    }
    Ok(None)
}

/// Reads `train`, `valid` and `test` from the data directory (JSON lines,
/// else bAbI text), or generates and splits a synthetic corpus with `seed`.
/// Only the training split is mandatory.
pub fn load_splits(cfg: &RunConfig, seed: u64) -> Result<Splits> {
    match &cfg.data.path {
        Some(dir) => {
            let train = read_split(dir, "train")?.ok_or_else(|| {
                Error::Data(format!("no train.jsonl or train.txt in {}", dir.display()))
            })?;
            Ok(Splits {
                train,
                valid: read_split(dir, "valid")?.unwrap_or_default(),
                test: read_split(dir, "test")?.unwrap_or_default(),
            })
        }
        None => {
            let mut all = generate_synthetic(&cfg.data.synth(seed))?;
            let (n_train, n_valid, _) = cfg.data.split_sizes(all.len());
            let test = all.split_off(n_train + n_valid);
            let valid = all.split_off(n_train);
            Ok(Splits {
                train: all,
                valid,
                test,
            })
        }
    }
}

/// The guidance repository over `train` for the configured backend.
pub fn build_repository(
    train: &[Dialogue],
    method: Method,
    vectors: Option<&Path>,
) -> Result<QaRepository> {
    let pairs = extract_qa_pairs(train);
    match method {
        Method::Bm25 => QaRepository::bm25(pairs),
        Method::Cosine => QaRepository::cosine(pairs, WordVectors::one_hot()),
        Method::External => {
            let path = vectors
                .ok_or_else(|| Error::Config("the external method needs --vectors".into()))?;
            let f = std::fs::File::open(path)?;
            QaRepository::external(pairs, read_external_vectors(std::io::BufReader::new(f))?)
        }
    }
}

pub fn cmd_gen_data(cfg: &RunConfig) -> Result<()> {
    let s = load_splits(
        &RunConfig {
            data: crate::cli::DataSpec {
                path: None,
                ..cfg.data.clone()
            },
            ..cfg.clone()
        },
        cfg.hp.seed,
    )?;
    for (name, d) in SPLITS.iter().zip([&s.train, &s.valid, &s.test]) {
        write_atomic(
            &cfg.out.join(format!("{name}.jsonl")),
            to_jsonl(d)?.as_bytes(),
        )?;
        write_atomic(
            &cfg.out.join(format!("{name}.babi.txt")),
            serialize_babi(d).as_bytes(),
        )?;
        println!("{name}: {} dialogues", d.len());
    }
    Ok(())
}

fn checkpoint_path(cfg: &RunConfig, explicit: Option<&Path>) -> PathBuf {
    explicit.map_or_else(|| cfg.out.join("model.thpn"), Path::to_path_buf)
}

/// One progress line for a finished epoch.
pub fn epoch_line(cfg: &RunConfig, e: &EpochLog) -> String {
    format!(
        "epoch {:>3}  train_loss {:.6}  val_{} {}  ({:.1}s)",
        e.epoch,
        e.train_loss,
        cfg.hp.select_metric,
        e.val_metric
            .map_or("n/a".to_string(), |m| format!("{m:.4}")),
        e.seconds
    )
}

/// Trains, writing `<out>/model.thpn`, `<out>/train_log.jsonl` and
/// `<out>/run_config.txt`. `progress` sees each epoch as it finishes.
pub fn cmd_train(cfg: &RunConfig, mut progress: impl FnMut(&EpochLog)) -> Result<TrainOutcome> {
    let splits = load_splits(cfg, cfg.hp.seed)?;
    let repo = if cfg.hp.model.ablation.no_ir {
        None
    } else {
        Some(build_repository(
            &splits.train,
            cfg.hp.method,
            cfg.vectors.as_deref(),
        )?)
    };
    let embeddings = cfg
        .embeddings
        .as_ref()
        .map(std::fs::read_to_string)
        .transpose()?;
    let log_path = cfg.out.join("train_log.jsonl");
    let mut log_text = String::new();
    let mut log_err = None;
    let outcome = train_with(
        &splits.train,
        &splits.valid,
        repo.as_ref(),
        &cfg.hp,
        |m: &mut Thpn| {
            if let Some(text) = &embeddings {
                let n = m.load_pretrained_embeddings(text)?;
                log::info!("initialised {n} embedding rows from pretrained vectors");
            }
            Ok(())
        },
        |e| {
            progress(e);
            let line = serde_json::to_string(e).map(|l| l + "\n");
            match line.map_err(Error::from).and_then(|l| {
                log_text.push_str(&l);
                write_atomic(&log_path, log_text.as_bytes())
            }) {
                Ok(()) => ControlFlow::Continue(()),
                Err(err) => {
                    log_err = Some(err);
                    ControlFlow::Break(())
                }
            }
        },
    )?;
    if let Some(e) = log_err {
        return Err(e);
    }
    write_checkpoint(&checkpoint_path(cfg, None), &outcome.model, &cfg.hp)?;
    write_atomic(&cfg.out.join("run_config.txt"), cfg.to_text().as_bytes())?;
    Ok(outcome)
}

const ARCHITECTURE_KEYS: [&str; 8] = [
    "dim",
    "hops",
    "query_init",
    "no_ir",
    "no_ptr",
    "no_gate",
    "mask_history_new",
    "mask_retrieved_ew",
];
const DECODING_KEYS: [&str; 4] = ["theta", "method", "max_len", "seed"];

/// Combines a checkpoint's hyperparameters with the run configuration:
/// retrieval and decoding keys set explicitly win; explicit architecture
/// keys must agree with the checkpoint.
fn resolve_with_checkpoint(cfg: &RunConfig, stored: &Hyperparams) -> Result<RunConfig> {
    let want = cfg.hp.to_pairs();
    let have = stored.to_pairs();
    for k in ARCHITECTURE_KEYS {
        if cfg.is_explicit(k) && want[k] != have[k] {
            return Err(Error::Incompatible(format!(
                "checkpoint has {k}={}, configuration asks for {}",
                have[k], want[k]
            )));
        }
    }
    let mut out = RunConfig {
        hp: *stored,
        ..cfg.clone()
    };
    for k in DECODING_KEYS {
        if cfg.is_explicit(k) {
            out.hp.set(k, &want[k])?;
        }
    }
    Ok(out)
}

fn load_model(cfg: &RunConfig, checkpoint: Option<&Path>) -> Result<(Thpn, RunConfig)> {
    let path = checkpoint_path(cfg, checkpoint);
    if !path.exists() {
        return Err(Error::Data(format!(
            "checkpoint {} not found",
            path.display()
        )));
    }
    let (model, stored) = load_checkpoint(&path, None)?;
    let resolved = resolve_with_checkpoint(cfg, &stored)?;
    Ok((model, resolved))
}

/// The corpus view an evaluation needs: repository, lexicon and examples.
struct EvalData {
    lexicon: EntitySet,
    repo: Option<QaRepository>,
    splits: Splits,
}

fn eval_data(cfg: &RunConfig, model: Option<&Thpn>) -> Result<EvalData> {
    let splits = load_splits(cfg, cfg.hp.seed)?;
    if splits.test.is_empty() {
        return Err(Error::Data("the test split is empty".into()));
    }
    if let Some(m) = model {
        if build_vocab(&splits.train).tokens() != m.vocab().tokens() {
            return Err(Error::Incompatible(
                "checkpoint vocabulary differs from the training split's vocabulary".into(),
            ));
        }
    }
    let repo = if cfg.hp.model.ablation.no_ir {
        None
    } else {
        Some(build_repository(
            &splits.train,
            cfg.hp.method,
            cfg.vectors.as_deref(),
        )?)
    };
    Ok(EvalData {
        lexicon: EntitySet::from_dialogues(&splits.train),
        repo,
        splits,
    })
}

fn examples_at(data: &EvalData, retrieval: &RetrievalConfig) -> Result<Vec<Example>> {
    build_examples(
        &data.splits.test,
        data.repo.as_ref(),
        retrieval,
        &data.lexicon,
        false,
    )
}

fn report_for(
    examples: &[Example],
    predicted: &[Generated],
    lexicon: &EntitySet,
    config: Value,
) -> Result<MetricsReport> {
    let items: Vec<Scored<'_>> = examples
        .iter()
        .zip(predicted)
        .map(|(e, p)| Scored {
            gold: &e.gold,
            predicted: &p.tokens,
            domain: e.domain.as_deref(),
            retrieved: e.retrieved.answers.len(),
        })
        .collect();
    MetricsReport::compute(&items, lexicon, config)
}

fn dump_lines(examples: &[Example], predicted: &[Generated]) -> Result<String> {
    let mut out = String::new();
    for (e, p) in examples.iter().zip(predicted) {
        let context: Vec<&str> = e
            .context
            .items
            .iter()
            .filter(|i| !i.is_sentinel)
            .map(|i| i.emit_token.as_str())
            .collect();
        let retrieved: Vec<RetrievedAnswerView> = e
            .retrieved
            .answers
            .iter()
            .map(RetrievedAnswerView::from)
            .collect();
        let line = json!({
            "dialogue": e.dialogue,
            "turn": e.turn,
            "context": context.join(" "),
            "retrieved": retrieved,
            "gold": e.gold.join(" "),
            "predicted": p.tokens.join(" "),
            "provenance": p.provenance,
        });
        out.push_str(&serde_json::to_string(&line)?);
        out.push('\n');
    }
    Ok(out)
}

fn with_section(mut config: Value, name: &str, section: Value) -> Value {
    if let Value::Object(m) = &mut config {
        m.insert(name.to_string(), section);
    }
    config
}

#[derive(Clone, Debug)]
pub struct EvalOutcome {
    pub report: MetricsReport,
    pub predictions: Vec<Generated>,
    pub examples: Vec<Example>,
}

/// Greedy decoding over the test split. Writes `<out>/report.json` and,
/// when asked, a per-response dump.
pub fn cmd_eval(
    cfg: &RunConfig,
    checkpoint: Option<&Path>,
    oracle: bool,
    dump: Option<&Path>,
) -> Result<EvalOutcome> {
    let (model, resolved) = if oracle {
        (None, cfg.clone())
    } else {
        let (m, r) = load_model(cfg, checkpoint)?;
        (Some(m), r)
    };
    let data = eval_data(&resolved, model.as_ref())?;
    let examples = examples_at(&data, &resolved.hp.retrieval()?)?;
    let predictions = match &model {
        Some(m) => decode_all(m, &examples, resolved.hp.max_len)?,
        None => examples
            .iter()
            .map(|e| Generated {
                tokens: e.gold.clone(),
                provenance: Vec::new(),
            })
            .collect(),
    };
    let eval_section = json!({
        "checkpoint": if oracle { String::new() } else { checkpoint_path(cfg, checkpoint).display().to_string() },
        "oracle": oracle,
    });
    let config = with_section(resolved.to_json(), "eval", eval_section);
    let report = report_for(&examples, &predictions, &data.lexicon, config)?;
    let text = report.to_json()?;
    write_atomic(&resolved.out.join("report.json"), text.as_bytes())?;
    if let Some(p) = dump {
        write_atomic(p, dump_lines(&examples, &predictions)?.as_bytes())?;
    }
    Ok(EvalOutcome {
        report,
        predictions,
        examples,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SweepRow {
    pub theta: f64,
    pub avg_retrieved: f64,
    pub per_response_accuracy: f64,
    pub bleu: f64,
    pub entity_f1: f64,
}

/// Evaluates one model under each threshold, re-running retrieval every
/// time. Trains a model first when no checkpoint exists.
pub fn cmd_sweep_theta(
    cfg: &RunConfig,
    checkpoint: Option<&Path>,
    thetas: &[f64],
) -> Result<Vec<SweepRow>> {
    if thetas.is_empty() {
        return Err(Error::Config("no thresholds to sweep".into()));
    }
    let configs = thetas
        .iter()
        .map(|&t| RetrievalConfig::new(t, cfg.hp.method))
        .collect::<Result<Vec<_>>>()?;
    if checkpoint.is_none() && !checkpoint_path(cfg, None).exists() {
        cmd_train(cfg, |e| println!("{}", epoch_line(cfg, e)))?;
    }
    let (model, resolved) = load_model(cfg, checkpoint)?;
    let data = eval_data(&resolved, Some(&model))?;
    let mut rows = Vec::with_capacity(thetas.len());
    println!(
        "{:>6}  {:>13}  {:>8}  {:>8}  {:>9}",
        "theta", "avg_retrieved", "accuracy", "bleu", "entity_f1"
    );
    for rc in configs {
        let rc = RetrievalConfig::new(rc.theta, resolved.hp.method)?;
        let examples = examples_at(&data, &rc)?;
        let preds = decode_all(&model, &examples, resolved.hp.max_len)?;
        let r = report_for(&examples, &preds, &data.lexicon, Value::Null)?;
        let row = SweepRow {
            theta: rc.theta,
            avg_retrieved: r.avg_retrieved,
            per_response_accuracy: r.per_response_accuracy,
            bleu: r.bleu,
            entity_f1: r.entity_f1,
        };
        println!(
            "{:>6.2}  {:>13.2}  {:>8.4}  {:>8.4}  {:>9.4}",
            row.theta, row.avg_retrieved, row.per_response_accuracy, row.bleu, row.entity_f1
        );
        rows.push(row);
    }
    let doc = json!({ "config": resolved.to_json(), "rows": rows });
    write_atomic(
        &resolved.out.join("sweep.json"),
        (serde_json::to_string_pretty(&doc)? + "\n").as_bytes(),
    )?;
    Ok(rows)
}

fn paint(token: &str, source: Source, color: bool) -> String {
    match (color, source) {
        (false, _) | (true, Source::Vocab) => token.to_string(),
        (true, Source::History) => format!("\x1b[32m{token}\x1b[0m"),
        (true, Source::Retrieved) => format!("\x1b[36m{token}\x1b[0m"),
    }
}

fn source_letter(s: Source) -> &'static str {
    match s {
        Source::Vocab => "v",
        Source::History => "h",
        Source::Retrieved => "r",
    }
}

/// Read-eval loop over `input`. Returns on `/quit` or end of input.
pub fn chat_loop(
    session: &mut ChatSession,
    input: impl BufRead,
    mut out: impl Write,
    color: bool,
) -> Result<()> {
    writeln!(
        out,
        "commands: /reset, /kb <subject> <relation> <object>, /quit"
    )?;
    write!(out, "> ")?;
    out.flush()?;
    for line in input.lines() {
        let line = line?;
        let line = line.trim();
        if line == "/quit" {
            return Ok(());
        } else if line == "/reset" {
            session.reset();
            writeln!(out, "history cleared")?;
        } else if let Some(rest) = line.strip_prefix("/kb") {
            let parts: Vec<&str> = rest.split_whitespace().collect();
            match parts.as_slice() {
                [s, r, o] if rest.starts_with(' ') => {
                    session.add_kb(s, r, o)?;
                    writeln!(out, "kb: {s} {r} {o}")?;
                }
                _ => writeln!(out, "usage: /kb <subject> <relation> <object>")?,
            }
        } else if line.starts_with('/') {
            writeln!(out, "unknown command {line}")?;
        } else if !line.is_empty() {
            match session.respond(line) {
                Ok(reply) => {
                    for a in &reply.retrieved {
                        writeln!(out, "  guide {:.3}  {}", a.score, a.text)?;
                    }
                    let painted: Vec<String> = reply
                        .generated
                        .provenance
                        .iter()
                        .map(|p| paint(&p.token, p.source, color))
                        .collect();
                    let sources: Vec<&str> = reply
                        .generated
                        .provenance
                        .iter()
                        .map(|p| source_letter(p.source))
                        .collect();
                    writeln!(out, "system: {}", painted.join(" "))?;
                    writeln!(out, "source: {}", sources.join(" "))?;
                }
                Err(e) => writeln!(out, "error: {e}")?,
            }
        }
        write!(out, "> ")?;
        out.flush()?;
    }
    Ok(())
}

pub fn cmd_chat(cfg: &RunConfig, checkpoint: Option<&Path>) -> Result<()> {
    let (model, resolved) = load_model(cfg, checkpoint)?;
    let splits = load_splits(&resolved, resolved.hp.seed)?;
    let repo = if resolved.hp.model.ablation.no_ir {
        None
    } else {
        Some(build_repository(
            &splits.train,
            resolved.hp.method,
            resolved.vectors.as_deref(),
        )?)
    };
    let mut session = ChatSession::new(
        model,
        resolved.hp,
        repo,
        EntitySet::from_dialogues(&splits.train),
    );
    let stdout = std::io::stdout();
    let color = stdout.is_terminal();
    chat_loop(&mut session, std::io::stdin().lock(), stdout.lock(), color)
}
