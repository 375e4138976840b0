use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use sumlab::corpus::synthetic::{generate, SyntheticConfig};
use sumlab::corpus::{write_records, SplitTag};
use sumlab::lab::{self, Format, ModelOptions, RunOptions};
use sumlab::metrics::DEFAULT_ALPHA;
use sumlab::models::Arch;
use sumlab::trainer::TrainConfig;
use sumlab::Result;

#[derive(Parser, Debug)]
#[command(
    name = "sumlab",
    version,
    about = "Train and evaluate code summarization models"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Tokenize, filter, split by project and build vocabularies
    Prepare {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Keep samples whose code length is at or above this quantile
        #[arg(long)]
        quantile: Option<f64>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 2000)]
        src_vocab: usize,
        #[arg(long, default_value_t = 300)]
        tgt_vocab: usize,
        #[arg(long, default_value_t = 0.8)]
        train_ratio: f64,
        #[arg(long, default_value_t = 0.1)]
        val_ratio: f64,
        #[arg(long, default_value_t = 0.1)]
        test_ratio: f64,
    },
    /// Train one model; writes model.json and history.csv
    Train {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0.1)]
        epsilon: f64,
        #[command(flatten)]
        run: RunArgs,
    },
    /// Greedy-decode a split with a checkpoint
    Predict {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, value_enum, default_value_t = Split::Test)]
        split: Split,
        #[arg(long)]
        out: PathBuf,
    },
    /// BLEU, METEOR and similarity of a predictions file
    Score {
        #[arg(long)]
        predictions: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Paired t-tests between two predictions files
    Compare {
        #[arg(long)]
        baseline: PathBuf,
        #[arg(long)]
        candidate: PathBuf,
        #[arg(long, default_value_t = DEFAULT_ALPHA)]
        alpha: f64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train with and without smoothing under one seed and compare
    PairRun {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0.1)]
        epsilon: f64,
        #[arg(long, default_value_t = DEFAULT_ALPHA)]
        alpha: f64,
        #[command(flatten)]
        run: RunArgs,
    },
    /// Grid of smoothing values across target vocabulary sizes
    Sweep {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_delimiter = ',')]
        epsilons: Option<Vec<f64>>,
        #[arg(long, value_delimiter = ',')]
        vocab_sizes: Option<Vec<usize>>,
        #[arg(long, default_value_t = DEFAULT_ALPHA)]
        alpha: f64,
        #[command(flatten)]
        run: RunArgs,
    },
    /// Word counts of predictions files
    Diversity {
        #[arg(required = true)]
        files: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Predict the stemmed first comment word as a class label
    Actionword {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_delimiter = ',')]
        epsilons: Option<Vec<f64>>,
        #[command(flatten)]
        run: RunArgs,
    },
    /// Re-render a saved result table
    Report {
        #[arg(long)]
        table: PathBuf,
        #[arg(long, value_enum, default_value_t = TableFormat::Md)]
        format: TableFormat,
    },
    /// Write a synthetic corpus with Zipf-distributed comment nouns
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 800)]
        samples: usize,
        #[arg(long, default_value_t = 16)]
        projects: usize,
        #[arg(long, default_value_t = 1.1)]
        zipf_exponent: f64,
        #[arg(long, default_value_t = 7)]
        seed: u64,
    },
}

#[derive(Args, Debug)]
struct RunArgs {
    #[arg(long, default_value = "attendgru")]
    arch: Arch,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    learning_rate: Option<f64>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    embed: Option<usize>,
    #[arg(long)]
    hidden: Option<usize>,
    #[arg(long)]
    heads: Option<usize>,
    #[arg(long)]
    layers: Option<usize>,
    #[arg(long)]
    dropout: Option<f64>,
    #[arg(long)]
    code_len: Option<usize>,
    #[arg(long)]
    ast_len: Option<usize>,
    #[arg(long)]
    comment_len: Option<usize>,
    /// Record wall-clock seconds in history.csv
    #[arg(long)]
    timing: bool,
}

impl RunArgs {
    fn options(&self, default_epochs: usize) -> RunOptions {
        let d = ModelOptions::default();
        let t = TrainConfig::default();
        RunOptions {
            model: ModelOptions {
                arch: self.arch,
                embed_dim: self.embed.unwrap_or(d.embed_dim),
                hidden_dim: self.hidden.unwrap_or(d.hidden_dim),
                heads: self.heads.unwrap_or(d.heads),
                layers: self.layers.unwrap_or(d.layers),
                dropout: self.dropout.unwrap_or(d.dropout),
                code_len: self.code_len.unwrap_or(d.code_len),
                ast_len: self.ast_len.unwrap_or(d.ast_len),
                comment_len: self.comment_len.unwrap_or(d.comment_len),
            },
            epochs: self.epochs.unwrap_or(default_epochs),
            batch_size: self.batch_size.unwrap_or(t.batch_size),
            learning_rate: self.learning_rate.unwrap_or(t.learning_rate),
            seed: self.seed,
            timing: self.timing,
        }
    }
}

#[derive(ValueEnum, Clone, Copy, Debug)]
enum Split {
    Train,
    Val,
    Test,
}

impl From<Split> for SplitTag {
    fn from(s: Split) -> Self {
        match s {
            Split::Train => SplitTag::Train,
            Split::Val => SplitTag::Val,
            Split::Test => SplitTag::Test,
        }
    }
}

#[derive(ValueEnum, Clone, Copy, Debug)]
enum TableFormat {
    Md,
    Csv,
}

fn run(command: Command) -> Result<String> {
    Ok(match command {
        Command::Prepare {
            input,
            out,
            quantile,
            seed,
            src_vocab,
            tgt_vocab,
            train_ratio,
            val_ratio,
            test_ratio,
        } => {
            let opts = lab::PrepareOptions {
                input,
                out,
                quantile,
                ratios: (train_ratio, val_ratio, test_ratio),
                seed,
                src_vocab,
                tgt_vocab,
            };
            lab::cmd_prepare(&opts)?.to_string()
        }
        Command::Train {
            data,
            out,
            epsilon,
            run,
        } => lab::cmd_train(&lab::TrainCmd {
            data,
            out,
            run: run.options(TrainConfig::default().epochs),
            epsilon,
        })?,
        Command::Predict {
            model,
            data,
            split,
            out,
        } => lab::cmd_predict(&model, &data, split.into(), &out)?,
        Command::Score { predictions, out } => lab::cmd_score(&predictions, &out)?,
        Command::Compare {
            baseline,
            candidate,
            alpha,
            out,
        } => lab::cmd_compare(&baseline, &candidate, alpha, &out)?,
        Command::PairRun {
            data,
            out,
            epsilon,
            alpha,
            run,
        } => {
            let cmd = lab::PairRunCmd {
                run: run.options(lab::PAIR_EPOCHS),
                epsilon,
                alpha,
                ..lab::PairRunCmd::new(data, out)
            };
            lab::render_report(&lab::cmd_pair_run(&cmd)?, Format::Markdown)?
        }
        Command::Sweep {
            data,
            out,
            epsilons,
            vocab_sizes,
            alpha,
            run,
        } => {
            let mut cmd = lab::SweepCmd::new(data, out);
            cmd.run = run.options(lab::SWEEP_EPOCHS);
            cmd.alpha = alpha;
            if let Some(e) = epsilons {
                cmd.epsilons = e;
            }
            if let Some(v) = vocab_sizes {
                cmd.vocab_sizes = v;
            }
            lab::render_report(&lab::cmd_sweep(&cmd)?, Format::Markdown)?
        }
        Command::Diversity { files, out } => {
            lab::cmd_diversity(&files, &out)?;
            std::fs::read_to_string(out.join("diversity.md")).unwrap_or_default()
        }
        Command::Actionword {
            data,
            out,
            epsilons,
            run,
        } => {
            let mut cmd = lab::ActionWordCmd::new(data, out);
            cmd.run = run.options(TrainConfig::default().epochs);
            if let Some(e) = epsilons {
                cmd.epsilons = e;
            }
            lab::cmd_actionword(&cmd)?;
            std::fs::read_to_string(cmd.out.join("actionword.md")).unwrap_or_default()
        }
        Command::Report { table, format } => {
            let f = match format {
                TableFormat::Md => Format::Markdown,
                TableFormat::Csv => Format::Csv,
            };
            lab::cmd_report(&table, f)?
        }
        Command::Synth {
            out,
            samples,
            projects,
            zipf_exponent,
            seed,
        } => {
            let recs = generate(&SyntheticConfig {
                samples,
                projects,
                zipf_exponent,
                seed,
            })?;
            write_records(&out, &recs)?;
            format!("{} records written to {}", recs.len(), out.display())
        }
    })
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli.command) {
        Ok(text) => {
            if !text.is_empty() {
                println!("{}", text.trim_end());
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
