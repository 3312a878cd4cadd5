use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Parser, Subcommand};
use rayon::prelude::*;
use serde::Serialize;

use tapir_core::config::Config;
use tapir_core::corpus::synth::{generate, SynthConfig};
use tapir_core::corpus::{encode, load_conll, write_conll, Corpus};
use tapir_core::engine::{Labeler, PrefixTimeline, TapirModel};
use tapir_core::evalkit::{metrics_report, throughput_bench, BenchResult, MetricsReport};
use tapir_core::layers::AttnMode;
use tapir_core::signal::{generate_actions, train_action_generator, ActionsFile};
use tapir_core::tensorkit::Checkpoint;
use tapir_core::trainer::{train_reference, train_reviser, train_tapir, EpochLog, TrainReport};
use tapir_core::{Error, Result};

#[derive(Parser)]
#[command(name = "tapir", version, about = "Incremental sequence labelling with adaptive revision")]
struct Cli {
    /// Run single-threaded and leave wall-clock timings out of reports.
    #[arg(long, global = true)]
    deterministic: bool,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train the one-layer action generator and write WRITE/REVISE sequences.
    GenActions {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        model_out: Option<PathBuf>,
    },
    /// Train the reviser.
    TrainReviser {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        model_out: PathBuf,
    },
    /// Train the restart-incremental reference.
    TrainReference {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        model_out: PathBuf,
    },
    /// Train the incremental model around a trained reviser.
    TrainTapir {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        actions: PathBuf,
        #[arg(long)]
        reviser: PathBuf,
        #[arg(long)]
        model_out: PathBuf,
    },
    /// Run a model incrementally over a corpus and report metrics.
    Eval {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        corpus: PathBuf,
        /// Output delay; defaults to the delay the model was trained with.
        #[arg(long, value_parser = clap::value_parser!(u8).range(0..=2))]
        delay: Option<u8>,
        /// Revision threshold; defaults to the model's configured value.
        #[arg(long)]
        tau: Option<f64>,
        #[arg(long)]
        report: Option<PathBuf>,
        /// Also write every prefix timeline.
        #[arg(long)]
        timelines: Option<PathBuf>,
    },
    /// Compare incremental throughput against the restart reference.
    Bench {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        reference: PathBuf,
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        report: Option<PathBuf>,
        #[arg(long)]
        tau: Option<f64>,
        #[arg(long, default_value_t = 1)]
        warmup: usize,
        #[arg(long, default_value_t = 3)]
        iters: usize,
    },
    /// Evaluate one model at several thresholds.
    SweepTau {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long, value_delimiter = ',', default_value = "0,0.1,0.2,0.3,0.4,0.5,0.6,0.7,0.8,0.9,1")]
        taus: Vec<f64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Write a synthetic slot-filling corpus in CoNLL format.
    Synth {
        #[arg(long, default_value_t = 2000)]
        sentences: usize,
        #[arg(long, default_value_t = 42119392)]
        seed: u64,
        #[arg(long, default_value_t = 0)]
        min_len: usize,
        #[arg(long)]
        out: PathBuf,
    },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn load_config(path: Option<&Path>) -> Result<Config> {
    match path {
        Some(p) => Config::load(p),
        None => Ok(Config::default()),
    }
}

fn print_log(l: &EpochLog) {
    println!("{l}");
}

fn summary(what: &str, r: &TrainReport) {
    println!(
        "{what}: best epoch {} of {}, val loss {:.6}, val metric {:.6}",
        r.best_epoch,
        r.history.len() / 2,
        r.best_val_loss,
        r.best_val_metric
    );
}

fn write_json<S: Serialize>(path: &Path, value: &S) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| Error::Data(e.to_string()))?;
    std::fs::write(path, text + "\n")?;
    Ok(())
}

#[allow(clippy::large_enum_variant)]
enum Model {
    Labeler(Labeler),
    Tapir(TapirModel),
}

fn load_model(path: &Path) -> Result<Model> {
    let ckpt = Checkpoint::<f32>::load(path)?;
    match ckpt.hparams.get("model").map(String::as_str) {
        Some("tapir") => Ok(Model::Tapir(TapirModel::from_checkpoint(&ckpt)?)),
        Some("labeler") => Ok(Model::Labeler(Labeler::from_checkpoint(&ckpt)?)),
        other => Err(Error::Checkpoint(format!("unknown model kind {other:?} in {}", path.display()))),
    }
}

fn load_tapir(path: &Path) -> Result<TapirModel> {
    match load_model(path)? {
        Model::Tapir(m) => Ok(m),
        Model::Labeler(_) => Err(Error::Config(format!("{} is not an incremental model", path.display()))),
    }
}

fn load_labeler(path: &Path) -> Result<Labeler> {
    match load_model(path)? {
        Model::Labeler(m) => Ok(m),
        Model::Tapir(_) => Err(Error::Config(format!("{} is not a reviser or reference model", path.display()))),
    }
}

fn check_tau(tau: f64) -> Result<f64> {
    if (0.0..=1.0).contains(&tau) {
        Ok(tau)
    } else {
        Err(Error::Config(format!("tau must be in [0, 1], got {tau}")))
    }
}

/// Runs `f` over every sentence, in parallel unless `deterministic`.
/// Results keep corpus order either way.
fn per_sentence<F>(ids: &[Vec<usize>], deterministic: bool, f: F) -> Result<Vec<PrefixTimeline>>
where
    F: Fn(&[usize]) -> Result<PrefixTimeline> + Sync,
{
    if deterministic {
        ids.iter().map(|s| f(s)).collect()
    } else {
        ids.par_iter().map(|s| f(s)).collect()
    }
}

fn encoded(corpus: &Corpus, vocab: &tapir_core::corpus::Vocab) -> Vec<Vec<usize>> {
    corpus.sentences.iter().map(|s| encode(s, vocab)).collect()
}

fn gold(corpus: &Corpus, labels: &tapir_core::corpus::LabelSet) -> Result<Vec<Vec<usize>>> {
    corpus.sentences.iter().map(|s| labels.encode(&s.labels)).collect()
}

fn eval_timelines(model: &Model, ids: &[Vec<usize>], tau: Option<f64>, delay: Option<u8>, det: bool) -> Result<Vec<PrefixTimeline>> {
    match model {
        Model::Tapir(m) => {
            let tau = check_tau(tau.unwrap_or(m.config.tau))?;
            let d = delay.map_or(m.delay, usize::from);
            if d != m.delay {
                return Err(Error::Config(format!(
                    "model was trained with delay {}, cannot evaluate at delay {d}",
                    m.delay
                )));
            }
            per_sentence(ids, det, |s| m.run_sentence(s, tau, d))
        }
        Model::Labeler(m) => {
            if tau.is_some() {
                return Err(Error::Config("tau applies only to incremental models".into()));
            }
            if delay.unwrap_or(0) != 0 {
                return Err(Error::Config(
                    "restart models are evaluated undelayed; delayed scores are in eo_d1/eo_d2".into(),
                ));
            }
            per_sentence(ids, det, |s| m.run_restart_incremental(s, AttnMode::Full))
        }
    }
}

fn labels_of(model: &Model) -> (&tapir_core::corpus::Vocab, &tapir_core::corpus::LabelSet) {
    match model {
        Model::Tapir(m) => (&m.vocab, &m.labels),
        Model::Labeler(m) => (&m.vocab, &m.labels),
    }
}

#[derive(Serialize)]
struct BenchReport {
    tapir: BenchResult,
    reference: BenchResult,
    speedup: f64,
    tau: f64,
    revise_ratio: f64,
    mean_length: f64,
    /// Restart token forwards predicted by `T(T + 1) / 2` per sentence.
    expected_restart_forwards: usize,
    restart_forwards_match: bool,
}

#[derive(Serialize)]
struct SweepRow {
    tau: f64,
    eo: f64,
    ct: f64,
    rc: f64,
    score: f64,
    revise_ratio: f64,
    reviser_calls: usize,
}

fn run(cli: Cli) -> Result<()> {
    let det = cli.deterministic;
    match cli.command {
        Command::Synth {
            sentences,
            seed,
            min_len,
            out,
        } => {
            let corpus = generate(&SynthConfig {
                sentences,
                seed,
                min_len,
                ..Default::default()
            });
            write_conll(&corpus, &out)?;
            println!("wrote {} sentences to {}", corpus.len(), out.display());
        }
        Command::GenActions {
            config,
            corpus,
            out,
            model_out,
        } => {
            let cfg = load_config(config.as_deref())?;
            let corpus = load_conll(&corpus)?;
            let (lt, report) = train_action_generator(&corpus, &cfg, &mut print_log)?;
            summary("action generator", &report);
            let actions = generate_actions(&lt, &corpus)?;
            actions.save(&out)?;
            if let Some(p) = model_out {
                lt.save(p)?;
            }
            let (w, r) = actions.distribution();
            println!("wrote {} sequences to {} (write {w:.4}, revise {r:.4})", actions.sequences.len(), out.display());
        }
        Command::TrainReviser {
            config,
            corpus,
            model_out,
        } => {
            let cfg = load_config(config.as_deref())?;
            let corpus = load_conll(&corpus)?;
            let (m, report) = train_reviser(&corpus, &cfg, &mut print_log)?;
            summary("reviser", &report);
            m.save(&model_out)?;
        }
        Command::TrainReference {
            config,
            corpus,
            model_out,
        } => {
            let cfg = load_config(config.as_deref())?;
            let corpus = load_conll(&corpus)?;
            let (m, report) = train_reference(&corpus, &cfg, &mut print_log)?;
            summary("reference", &report);
            m.save(&model_out)?;
        }
        Command::TrainTapir {
            config,
            corpus,
            actions,
            reviser,
            model_out,
        } => {
            let cfg = load_config(config.as_deref())?;
            let corpus = load_conll(&corpus)?;
            let actions = ActionsFile::load(&actions)?;
            let reviser = load_labeler(&reviser)?;
            let (m, report) = train_tapir(&corpus, &actions, &reviser, &cfg, &mut print_log)?;
            summary("tapir", &report);
            m.save(&model_out)?;
        }
        Command::Eval {
            model,
            corpus,
            delay,
            tau,
            report,
            timelines,
        } => {
            let model = load_model(&model)?;
            let corpus = load_conll(&corpus)?;
            let (vocab, labels) = labels_of(&model);
            let ids = encoded(&corpus, vocab);
            let gold = gold(&corpus, labels)?;
            let start = Instant::now();
            let tls = eval_timelines(&model, &ids, tau, delay, det)?;
            let elapsed = start.elapsed().as_secs_f64();
            let mut r: MetricsReport = metrics_report(&tls, &gold, labels)?;
            if !det {
                r.sents_per_sec = Some(tls.len() as f64 / elapsed.max(1e-9));
            }
            println!(
                "eo={:.4} ct={:.4} rc={:.4} f1={} accuracy={:.4} revise_ratio={:.4}",
                r.eo,
                r.ct,
                r.rc,
                r.f1.map_or("n/a".to_string(), |f| format!("{f:.4}")),
                r.accuracy,
                r.revise_ratio
            );
            if let Some(p) = report {
                std::fs::write(p, r.to_json() + "\n")?;
            }
            if let Some(p) = timelines {
                let text: String = tls.iter().map(|t| t.dump(labels) + "\n").collect();
                std::fs::write(p, text)?;
            }
        }
        Command::Bench {
            model,
            reference,
            corpus,
            report,
            tau,
            warmup,
            iters,
        } => {
            let m = load_tapir(&model)?;
            let r = load_labeler(&reference)?;
            let tau = check_tau(tau.unwrap_or(m.config.tau))?;
            let corpus = load_conll(&corpus)?;
            let ids = encoded(&corpus, &m.vocab);
            let ref_ids = encoded(&corpus, &r.vocab);
            let mut steps = 0;
            let mut revises = 0;
            let tapir = throughput_bench(
                |s| {
                    let tl = m.run_sentence(s, tau, m.delay)?;
                    steps += tl.actions.len();
                    revises += tl.revise_count();
                    Ok(tl.counters)
                },
                &ids,
                warmup,
                iters,
            )?;
            let reference = throughput_bench(|s| Ok(r.run_restart_incremental(s, AttnMode::Full)?.counters), &ref_ids, warmup, iters)?;
            let expected: usize = ids.iter().map(|s| s.len() * (s.len() + 1) / 2).sum();
            let out = BenchReport {
                speedup: tapir.sents_per_sec / reference.sents_per_sec,
                tapir,
                reference,
                tau,
                revise_ratio: revises as f64 / steps.max(1) as f64,
                mean_length: corpus.tokens() as f64 / corpus.len() as f64,
                expected_restart_forwards: expected,
                restart_forwards_match: reference.token_forwards == expected,
            };
            println!(
                "tapir {:.1} sent/s, reference {:.1} sent/s, speedup {:.2}x, revise ratio {:.4}",
                out.tapir.sents_per_sec, out.reference.sents_per_sec, out.speedup, out.revise_ratio
            );
            if let Some(p) = report {
                write_json(&p, &out)?;
            }
        }
        Command::SweepTau { model, corpus, taus, out } => {
            let m = load_tapir(&model)?;
            let corpus = load_conll(&corpus)?;
            let ids = encoded(&corpus, &m.vocab);
            let gold = gold(&corpus, &m.labels)?;
            let mut w = csv::Writer::from_path(&out).map_err(|e| Error::Data(e.to_string()))?;
            for tau in taus {
                let tau = check_tau(tau)?;
                let tls = per_sentence(&ids, det, |s| m.run_sentence(s, tau, m.delay))?;
                let r = metrics_report(&tls, &gold, &m.labels)?;
                let row = SweepRow {
                    tau,
                    eo: r.eo,
                    ct: r.ct,
                    rc: r.rc,
                    score: r.f1.unwrap_or(r.accuracy),
                    revise_ratio: r.revise_ratio,
                    reviser_calls: r.reviser_calls,
                };
                println!(
                    "tau={tau:.2} eo={:.4} ct={:.4} rc={:.4} score={:.4} reviser_calls={}",
                    row.eo, row.ct, row.rc, row.score, row.reviser_calls
                );
                w.serialize(row).map_err(|e| Error::Data(e.to_string()))?;
            }
            w.flush()?;
        }
    }
    Ok(())
}
