//! Command-line surface: run configuration, data loading and the commands
//! behind the `thpn` binary.

mod commands;
mod config;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

pub use commands::{
    build_repository, chat_loop, cmd_chat, cmd_eval, cmd_gen_data, cmd_sweep_theta, cmd_train,
    epoch_line, load_splits, EvalOutcome, Splits, SweepRow,
};
pub use config::{parse_config_text, DataSpec, RunConfig};

use crate::Error;

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DATA: i32 = 2;
pub const EXIT_INCOMPATIBLE: i32 = 3;

/// Process exit status for an error.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config(_) => EXIT_USAGE,
        Error::Incompatible(_) => EXIT_INCOMPATIBLE,
        _ => EXIT_DATA,
    }
}

#[derive(Debug, Parser)]
#[command(
    name = "thpn",
    version,
    about = "Template-guided hybrid pointer network for task-oriented dialogue"
)]
pub struct Cli {
    /// Log progress to stderr.
    #[arg(short, long, global = true)]
    pub verbose: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate synthetic train/valid/test dialogues.
    GenData(Common),
    /// Train a model and write its checkpoint and epoch log.
    Train(Common),
    /// Evaluate a checkpoint on the test split.
    Eval {
        #[command(flatten)]
        common: Common,
        /// Checkpoint to evaluate (default: <out>/model.thpn).
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Score the gold responses against themselves.
        #[arg(long)]
        oracle: bool,
        /// Write one JSON line per test response.
        #[arg(long)]
        dump: Option<PathBuf>,
    },
    /// Re-run retrieval and evaluation for several thresholds.
    SweepTheta {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Comma-separated thresholds in (0, 1].
        #[arg(
            long,
            value_delimiter = ',',
            default_value = "0.3,0.4,0.5,0.6,0.7,0.8,0.9,1.0"
        )]
        thetas: Vec<f64>,
    },
    /// Talk to a trained model.
    Chat {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
}

/// Flags shared by every command. Each overrides the same-named config key.
#[derive(Debug, Default, Args)]
pub struct Common {
    /// Config file of `key = value` lines with `[section]` headers.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Directory holding train/valid/test splits (omit to use the generator).
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub theta: Option<f64>,
    /// bm25, cosine or external.
    #[arg(long)]
    pub method: Option<String>,
    #[arg(long)]
    pub hops: Option<usize>,
    #[arg(long)]
    pub dim: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub clip: Option<f64>,
    #[arg(long)]
    pub dropout: Option<f64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub no_ir: bool,
    #[arg(long)]
    pub no_ptr: bool,
    #[arg(long)]
    pub no_gate: bool,
    #[arg(long)]
    pub no_mask_history: bool,
    #[arg(long)]
    pub no_mask_retrieved: bool,
    #[arg(long)]
    pub max_len: Option<usize>,
    #[arg(long)]
    pub n_dialogues: Option<usize>,
    #[arg(long)]
    pub n_restaurants: Option<usize>,
    /// slots, kb_lookup or full.
    #[arg(long)]
    pub style: Option<String>,
    /// JSON lines of {"id", "vector"} for the external retrieval backend.
    #[arg(long)]
    pub vectors: Option<PathBuf>,
    /// Word vectors in fastText text format for embedding initialisation.
    #[arg(long)]
    pub embeddings: Option<PathBuf>,
    /// last_utterance or learned.
    #[arg(long)]
    pub query_init: Option<String>,
    /// accuracy or bleu.
    #[arg(long)]
    pub select_metric: Option<String>,
}

impl Common {
    /// Flag values as config keys, in a fixed order.
    pub fn overrides(&self) -> Vec<(&'static str, String)> {
        let mut o = Vec::new();
        let mut put = |k: &'static str, v: Option<String>| {
            if let Some(v) = v {
                o.push((k, v));
            }
        };
        let path = |p: &Option<PathBuf>| p.as_ref().map(|p| p.display().to_string());
        put("data", path(&self.data));
        put("out", path(&self.out));
        put("seed", self.seed.map(|v| v.to_string()));
        put("theta", self.theta.map(|v| v.to_string()));
        put("method", self.method.clone());
        put("hops", self.hops.map(|v| v.to_string()));
        put("dim", self.dim.map(|v| v.to_string()));
        put("lr", self.lr.map(|v| v.to_string()));
        put("clip", self.clip.map(|v| v.to_string()));
        put("dropout", self.dropout.map(|v| v.to_string()));
        put("epochs", self.epochs.map(|v| v.to_string()));
        put("no_ir", self.no_ir.then(|| "true".into()));
        put("no_ptr", self.no_ptr.then(|| "true".into()));
        put("no_gate", self.no_gate.then(|| "true".into()));
        put(
            "mask_history_new",
            self.no_mask_history.then(|| "false".into()),
        );
        put(
            "mask_retrieved_ew",
            self.no_mask_retrieved.then(|| "false".into()),
        );
        put("max_len", self.max_len.map(|v| v.to_string()));
        put("n_dialogues", self.n_dialogues.map(|v| v.to_string()));
        put("n_restaurants", self.n_restaurants.map(|v| v.to_string()));
        put("style", self.style.clone());
        put("vectors", path(&self.vectors));
        put("embeddings", path(&self.embeddings));
        put("query_init", self.query_init.clone());
        put("select_metric", self.select_metric.clone());
        o
    }

    /// Defaults, then the config file, then flags.
    pub fn resolve(&self) -> crate::Result<RunConfig> {
        let mut cfg = RunConfig::default();
        if let Some(p) = &self.config {
            cfg.apply_file(p)?;
        }
        for (k, v) in self.overrides() {
            cfg.set(k, &v)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Runs a parsed command line and returns the exit status.
pub fn run(cli: Cli) -> i32 {
    let result = match cli.command {
        Command::GenData(c) => c.resolve().and_then(|cfg| cmd_gen_data(&cfg)),
        Command::Train(c) => c.resolve().and_then(|cfg| {
            let out = cmd_train(&cfg, |e| println!("{}", epoch_line(&cfg, e)))?;
            println!(
                "best epoch {} of {}; checkpoint {}",
                out.best_epoch,
                out.log.len(),
                cfg.out.join("model.thpn").display()
            );
            Ok(())
        }),
        Command::Eval {
            common,
            checkpoint,
            oracle,
            dump,
        } => common
            .resolve()
            .and_then(|cfg| cmd_eval(&cfg, checkpoint.as_deref(), oracle, dump.as_deref()))
            .and_then(|out| {
                print!("{}", out.report.to_json()?);
                Ok(())
            }),
        Command::SweepTheta {
            common,
            checkpoint,
            thetas,
        } => common
            .resolve()
            .and_then(|cfg| cmd_sweep_theta(&cfg, checkpoint.as_deref(), &thetas).map(|_| ())),
        Command::Chat { common, checkpoint } => common
            .resolve()
            .and_then(|cfg| cmd_chat(&cfg, checkpoint.as_deref())),
    };
    match result {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flags_map_to_keys() {
        let cli = Cli::try_parse_from([
            "thpn",
            "train",
            "--theta",
            "0.5",
            "--no-gate",
            "--no-mask-retrieved",
            "--dim",
            "64",
        ])
        .unwrap();
        let Command::Train(c) = cli.command else {
            panic!()
        };
        let cfg = c.resolve().unwrap();
        assert_eq!(cfg.hp.theta, 0.5);
        assert!(cfg.hp.model.ablation.no_gate);
        assert!(!cfg.hp.model.masking.mask_retrieved_ew);
        assert!(cfg.hp.model.masking.mask_history_new);
        assert_eq!(cfg.hp.model.dim, 64);
        assert!(cfg.is_explicit("theta") && !cfg.is_explicit("lr"));
    }

    #[test]
    fn flags_override_config_file() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("run.cfg");
        std::fs::write(
            &p,
            "[retrieval]\ntheta = 0.3\nmethod = bm25\n[training]\nepochs = 4\n",
        )
        .unwrap();
        let cli = Cli::try_parse_from([
            "thpn",
            "train",
            "--config",
            p.to_str().unwrap(),
            "--theta",
            "0.9",
        ])
        .unwrap();
        let Command::Train(c) = cli.command else {
            panic!()
        };
        let cfg = c.resolve().unwrap();
        assert_eq!(cfg.hp.theta, 0.9);
        assert_eq!(cfg.hp.epochs, 4);
        assert_eq!(cfg.hp.method.to_string(), "bm25");
    }

    #[test]
    fn exit_codes() {
        assert_eq!(exit_code(&Error::Config("x".into())), EXIT_USAGE);
        assert_eq!(exit_code(&Error::Data("x".into())), EXIT_DATA);
        assert_eq!(
            exit_code(&Error::Parse {
                line: 1,
                msg: "x".into()
            }),
            EXIT_DATA
        );
        assert_eq!(
            exit_code(&Error::Incompatible("x".into())),
            EXIT_INCOMPATIBLE
        );
        let bad = Common {
            theta: Some(0.0),
            ..Common::default()
        };
        assert_eq!(exit_code(&bad.resolve().unwrap_err()), EXIT_USAGE);
    }
}
