//! Thin command-line front end. All behavior lives in the library; this
//! binary only parses arguments, wires files to library calls, and maps
//! outcomes to exit codes: 0 full success, 1 any training cell failed,
//! 2 configuration or setup error. Log level comes from RUST_LOG alone.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use fewner::corpus::{self, Scheme};
use fewner::experiment::{
    self, ExperimentSpec, RunOptions, SyntheticSource,
};
use fewner::ndcore::{mix_seed, Rng};

#[derive(Parser)]
#[command(name = "fewner", version, about = "Few-shot NER laboratory")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run an experiment spec and write results, history, and summary files.
    Run {
        /// Experiment spec (JSON).
        #[arg(long)]
        spec: PathBuf,
        /// Output directory; overrides `out_dir` from the spec.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Record test F1 after every epoch (slower).
        #[arg(long)]
        history: bool,
        /// Worker threads for cell-level parallelism.
        #[arg(long, default_value_t = 1)]
        workers: usize,
    },
    /// Score predictions against gold labels with chunk F1 for one class.
    Score {
        /// Gold corpus (CoNLL `token tag`).
        #[arg(long)]
        gold: PathBuf,
        /// Predicted corpus (CoNLL `token tag`, same tokens as gold).
        #[arg(long)]
        pred: PathBuf,
        /// Entity class to score.
        #[arg(long)]
        class: String,
    },
    /// Generate a synthetic corpus pair from a generator spec.
    Synth {
        /// Generator spec (JSON: `{"seed": .., "spec": {..}}`).
        #[arg(long)]
        spec: PathBuf,
        /// Output directory for train.conll and validation.conll.
        #[arg(long)]
        out: PathBuf,
    },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(cell_failures) if cell_failures == 0 => ExitCode::SUCCESS,
        Ok(_) => ExitCode::from(1),
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(2)
        }
    }
}

/// Runs one subcommand; Ok carries the number of failed cells.
fn dispatch(cli: Cli) -> fewner::Result<usize> {
    match cli.command {
        Command::Run { spec, out, history, workers } => {
            let spec = ExperimentSpec::load(spec)?;
            let outdir = out
                .or_else(|| spec.out_dir.clone())
                .ok_or_else(|| {
                    fewner::Error::Spec("no output directory: pass --out or set out_dir".into())
                })?;
            let report = experiment::run_experiment(&spec, RunOptions { history, workers })?;
            experiment::emit_reports(&report, &outdir)?;
            print!("{}", experiment::render_summary(&report.rows));
            if !report.failures.is_empty() {
                eprintln!(
                    "{} of {} cells failed; see {}",
                    report.failures.len(),
                    report.failures.len() + report.rows.iter().map(|r| r.seed_f1.len()).sum::<usize>(),
                    outdir.join("failures.txt").display()
                );
            }
            println!("reports written to {}", outdir.display());
            Ok(report.failures.len())
        }
        Command::Score { gold, pred, class } => {
            let gold = corpus::read_conll(gold)?;
            let pred = corpus::read_conll(pred)?;
            if gold.len() != pred.len() {
                return Err(fewner::Error::Contract(format!(
                    "gold has {} sentences, pred has {}",
                    gold.len(),
                    pred.len()
                )));
            }
            for (i, (g, p)) in gold.iter().zip(&pred).enumerate() {
                if g.tokens != p.tokens {
                    return Err(fewner::Error::Contract(format!(
                        "token mismatch in sentence {}",
                        i + 1
                    )));
                }
            }
            let scheme = gold.first().map(|s| s.scheme).unwrap_or(Scheme::Bio);
            let pred_tags: Vec<Vec<String>> = pred.into_iter().map(|s| s.tags).collect();
            let report = experiment::score_predictions(&gold, &pred_tags, &class, scheme)?;
            println!(
                "class {class}: tp {} fp {} fn {} precision {:.4} recall {:.4} f1 {:.4}",
                report.tp, report.fp, report.fn_, report.precision, report.recall, report.f1
            );
            Ok(0)
        }
        Command::Synth { spec, out } => {
            let body = std::fs::read_to_string(&spec)?;
            let source: SyntheticSource = serde_json::from_str(&body)
                .map_err(|e| fewner::Error::Spec(format!("generator spec does not parse: {e}")))?;
            source.spec.validate()?;
            let mut rng = Rng::seed(mix_seed(source.seed, &["synthetic-corpus"]));
            let (train, validation) = corpus::generate_synthetic_corpus(&source.spec, &mut rng)?;
            std::fs::create_dir_all(&out)?;
            corpus::write_conll(out.join("train.conll"), &train)?;
            corpus::write_conll(out.join("validation.conll"), &validation)?;
            println!(
                "wrote {} train and {} validation sentences to {}",
                train.len(),
                validation.len(),
                out.display()
            );
            Ok(0)
        }
    }
}
