use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use bsnn::analysis::{
    bench, export_prune_curve, export_schedule, fanout_histogram, layer_sparsity_report,
    schedule_curve, sparsity_sweep, write_bench_csv, write_fanout_csv, write_layer_csv,
    write_sweep_csv, BenchConfig, SweepGrid,
};
use bsnn::rnn::{
    evaluate, evaluate_bsr, iters_per_epoch, load_checkpoint, load_corpus, planned_hyper,
    save_checkpoint, synthetic_corpus, train, Checkpoint, RunReport, TrainingConfig, EVAL_LANES,
};

#[derive(Parser)]
#[command(name = "bsnn", version, about = "Block-sparse recurrent network toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Output {
    /// CSV output path (stdout when omitted)
    #[arg(short = 'o', long = "csv")]
    csv: Option<PathBuf>,
}

impl Output {
    fn open(&self) -> Result<Box<dyn Write>> {
        Ok(match &self.csv {
            Some(p) => Box::new(BufWriter::new(
                File::create(p).with_context(|| format!("cannot create {}", p.display()))?,
            )),
            None => Box::new(io::stdout().lock()),
        })
    }
}

#[derive(Subcommand)]
enum Command {
    /// Train a model from a key=value config file
    Train {
        config: PathBuf,
        /// Write the final checkpoint here
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Write the run report (JSON) here
        #[arg(long)]
        report: Option<PathBuf>,
        /// Pruning curve CSV (iteration, thresholds, sparsity)
        #[command(flatten)]
        out: Output,
    },
    /// Held-out cross-entropy (nats/token) of a checkpoint on a text file
    Eval {
        checkpoint: PathBuf,
        corpus: PathBuf,
        #[command(flatten)]
        out: Output,
    },
    /// Threshold curve a config would follow
    PruneSchedule {
        config: PathBuf,
        /// Iterations per epoch; derived from data.path when omitted
        #[arg(long)]
        iters_per_epoch: Option<usize>,
        #[command(flatten)]
        out: Output,
    },
    /// Time dense, CSR and BSR sparse-times-dense products
    Bench {
        #[arg(long, default_value_t = 1760)]
        rows: usize,
        #[arg(long, default_value_t = 1760)]
        cols: usize,
        #[arg(long, default_value_t = 0.9)]
        sparsity: f64,
        /// Comma-separated block sizes, e.g. 1x1,4x4,16x16
        #[arg(long, default_value = "1x1,4x4,16x16")]
        blocks: String,
        /// Comma-separated batch sizes
        #[arg(long, default_value = "1,8,32,64")]
        batches: String,
        #[arg(long, default_value_t = 5)]
        reps: usize,
        #[arg(long, default_value_t = 7)]
        seed: u64,
        #[command(flatten)]
        out: Output,
    },
    /// Diagnostics over a checkpoint or run report
    Report {
        #[command(subcommand)]
        kind: ReportKind,
    },
    /// Train one model per point of a key=v1,v2 grid
    Sweep {
        config: PathBuf,
        grid: PathBuf,
        #[command(flatten)]
        out: Output,
    },
    /// Write a synthetic English-like corpus
    GenCorpus {
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long, default_value_t = 200_000)]
        bytes: usize,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Subcommand)]
enum ReportKind {
    /// Output-connection histogram per layer of a checkpoint
    Fanout {
        checkpoint: PathBuf,
        #[arg(long, default_value_t = 8)]
        bin_width: usize,
        #[command(flatten)]
        out: Output,
    },
    /// Block and elementwise sparsity of every prunable matrix
    Layers {
        checkpoint: PathBuf,
        #[command(flatten)]
        out: Output,
    },
    /// Pruning curve from a JSON run report
    Curve {
        report: PathBuf,
        #[command(flatten)]
        out: Output,
    },
}

fn parse_list<T: std::str::FromStr>(s: &str, what: &str) -> Result<Vec<T>> {
    s.split(',')
        .map(|v| {
            v.trim()
                .parse()
                .map_err(|_| anyhow::anyhow!("invalid {what} {v:?}"))
        })
        .collect()
}

fn load_config(path: &Path) -> Result<TrainingConfig> {
    TrainingConfig::from_file(path).with_context(|| format!("config {}", path.display()))
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Train {
            config,
            checkpoint,
            report,
            out,
        } => {
            let cfg = load_config(&config)?;
            let corpus = load_corpus(&cfg)?;
            let mut outcome = train(&cfg, &corpus)?;
            if let Some(path) = &checkpoint {
                let ck = Checkpoint {
                    config_hash: cfg.hash(),
                    model: outcome.model.clone(),
                    vocab: outcome.vocab.clone(),
                    block_h: cfg.block_h,
                    block_w: cfg.block_w,
                    masks: outcome.masks.clone(),
                };
                save_checkpoint(path, &ck, cfg.checkpoint_dtype)?;
                outcome.report.checkpoint = Some(path.display().to_string());
            }
            if let Some(path) = &report {
                std::fs::write(path, outcome.report.to_json()?)
                    .with_context(|| format!("cannot write {}", path.display()))?;
            }
            if out.csv.is_some() {
                export_prune_curve(&outcome.report, out.open()?)?;
            }
            let r = &outcome.report;
            eprintln!(
                "iterations {} | valid loss {:.4} | block sparsity {:.4} | nonzeros {}/{}",
                r.records.len(),
                r.final_valid_loss,
                r.final_block_sparsity,
                r.nonzero_count,
                r.param_count
            );
            outcome.check()?;
        }
        Command::Eval {
            checkpoint,
            corpus,
            out,
        } => {
            let ck = load_checkpoint(&checkpoint)
                .with_context(|| format!("checkpoint {}", checkpoint.display()))?;
            let text = std::fs::read(&corpus)
                .with_context(|| format!("cannot read {}", corpus.display()))?;
            let tokens = ck.vocab.encode(&text);
            let dense = evaluate(&ck.model, &tokens)?;
            let sparse = evaluate_bsr(&ck.model, &tokens, ck.block_h, ck.block_w)?;
            let mut w = csv::Writer::from_writer(out.open()?);
            w.write_record(["kernel", "loss", "tokens", "lanes"])?;
            for (kernel, loss) in [("dense", dense), ("bsr", sparse)] {
                w.write_record([
                    kernel.to_string(),
                    loss.to_string(),
                    tokens.len().to_string(),
                    EVAL_LANES.to_string(),
                ])?;
            }
            w.flush()?;
        }
        Command::PruneSchedule {
            config,
            iters_per_epoch: ipe,
            out,
        } => {
            let cfg = load_config(&config)?;
            let ipe = match ipe {
                Some(n) => n,
                None => iters_per_epoch(&cfg, load_corpus(&cfg)?.len())?,
            };
            let warm = match &cfg.prune.warm_checkpoint {
                Some(p) => Some(load_checkpoint(p)?.model),
                None => None,
            };
            let (rec, lin) = planned_hyper(&cfg, ipe, warm.as_ref())?;
            export_schedule(&schedule_curve(&rec, &lin, ipe * cfg.epochs), out.open()?)?;
        }
        Command::Bench {
            rows,
            cols,
            sparsity,
            blocks,
            batches,
            reps,
            seed,
            out,
        } => {
            let blocks = blocks
                .split(',')
                .map(|b| Ok(bsnn::rnn::config::parse_block(b.trim())?))
                .collect::<Result<Vec<_>>>()?;
            let cfg = BenchConfig {
                rows,
                cols,
                sparsity,
                blocks,
                batches: parse_list(&batches, "batch size")?,
                repetitions: reps,
                seed,
            };
            write_bench_csv(&bench(&cfg)?, out.open()?)?;
        }
        Command::Report { kind } => match kind {
            ReportKind::Fanout {
                checkpoint,
                bin_width,
                out,
            } => {
                let ck = load_checkpoint(&checkpoint)
                    .with_context(|| format!("checkpoint {}", checkpoint.display()))?;
                let hists = fanout_histogram(&ck.model)?;
                for h in &hists {
                    eprintln!("{}: {} of {} neurons dead", h.layer, h.dead(), h.neurons());
                }
                write_fanout_csv(&hists, bin_width, out.open()?)?;
            }
            ReportKind::Layers { checkpoint, out } => {
                let ck = load_checkpoint(&checkpoint)
                    .with_context(|| format!("checkpoint {}", checkpoint.display()))?;
                write_layer_csv(&layer_sparsity_report(&ck)?, out.open()?)?;
            }
            ReportKind::Curve { report, out } => {
                let text = std::fs::read_to_string(&report)
                    .with_context(|| format!("cannot read {}", report.display()))?;
                export_prune_curve(&RunReport::from_json(&text)?, out.open()?)?;
            }
        },
        Command::Sweep { config, grid, out } => {
            let cfg = load_config(&config)?;
            let grid_text = std::fs::read_to_string(&grid)
                .with_context(|| format!("cannot read {}", grid.display()))?;
            let grid = SweepGrid::parse(&grid_text)?;
            let corpus = load_corpus(&cfg)?;
            write_sweep_csv(&sparsity_sweep(&cfg, &grid, &corpus)?, out.open()?)?;
        }
        Command::GenCorpus { seed, bytes, out } => {
            if bytes == 0 {
                bail!("--bytes must be positive");
            }
            std::fs::write(&out, synthetic_corpus(seed, bytes))
                .with_context(|| format!("cannot write {}", out.display()))?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let msg = format!("{e:#}").replace('\n', " ");
            eprintln!("error: {msg}");
            ExitCode::FAILURE
        }
    }
}
