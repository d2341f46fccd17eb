//! Experiment orchestration: spec parsing, task construction, regime
//! dispatch across (class, regime, seed) cells, optional per-epoch history
//! capture, and report emission. Cells are independent and may run on a
//! worker pool; every artifact is deterministic for a given spec.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use crate::corpus::{
    self, make_task, LabeledSentence, Scheme, SynthSpec, TaskDataset,
};
use crate::encoder::EmbeddingTable;
use crate::error::{Error, Result};
use crate::eval::{chunk_f1, to_to_bio, F1Report};
use crate::ndcore::{mix_seed, Rng};
use crate::regimes::{self, Regime, RegimeConfig, TrainedModel};

/// Synthetic data source: a generator spec plus the corpus seed.
#[derive(Clone, Debug, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticSource {
    #[serde(default)]
    pub seed: u64,
    pub spec: SynthSpec,
}

/// On-disk corpus pair.
#[derive(Clone, Debug, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CorpusPaths {
    pub train: PathBuf,
    pub validation: PathBuf,
}

/// Fixed random word vectors over the corpus vocabulary, for runs without a
/// pretrained embedding file.
#[derive(Clone, Debug, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RandomEmbeddingSpec {
    pub dim: usize,
    #[serde(default)]
    pub seed: u64,
}

/// Partial training-recipe overrides applied on top of the defaults for
/// every cell.
#[derive(Clone, Debug, Default, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigOverrides {
    pub n_support: Option<usize>,
    pub p_in_domain: Option<f64>,
    pub epochs: Option<usize>,
    pub steps_per_epoch: Option<usize>,
    pub warm_epochs: Option<usize>,
    pub batch_in_domain: Option<usize>,
    pub batch_warm_up: Option<usize>,
    pub support_cap: Option<usize>,
    pub query_cap: Option<usize>,
    pub lr: Option<f64>,
    pub l2: Option<f64>,
    pub dropout: Option<f64>,
    pub proto_dim: Option<usize>,
    pub b_o_init: Option<f64>,
    pub char_dim: Option<usize>,
    pub char_hidden: Option<usize>,
    pub word_hidden: Option<usize>,
}

impl ConfigOverrides {
    pub fn apply(&self, cfg: &mut RegimeConfig) {
        macro_rules! set {
            ($($field:ident),*) => {
                $(if let Some(v) = self.$field { cfg.$field = v; })*
            };
        }
        set!(
            n_support,
            p_in_domain,
            epochs,
            steps_per_epoch,
            batch_in_domain,
            batch_warm_up,
            support_cap,
            query_cap,
            lr,
            l2,
            dropout,
            proto_dim,
            b_o_init,
            char_dim,
            char_hidden,
            word_hidden
        );
        if self.warm_epochs.is_some() {
            cfg.warm_epochs = self.warm_epochs;
        }
    }
}

fn default_seeds() -> Vec<u64> {
    vec![0, 1, 2, 3]
}

/// A full experiment description, normally loaded from JSON. Exactly one
/// data source and one embedding source must be given; unknown keys are
/// rejected.
#[derive(Clone, Debug, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSpec {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub corpus: Option<CorpusPaths>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub synthetic: Option<SyntheticSource>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub embeddings: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub random_embeddings: Option<RandomEmbeddingSpec>,
    pub classes: Vec<String>,
    pub regimes: Vec<Regime>,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    #[serde(default)]
    pub scheme: Scheme,
    #[serde(default)]
    pub config: ConfigOverrides,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out_dir: Option<PathBuf>,
}

impl ExperimentSpec {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let body = std::fs::read_to_string(path)?;
        let spec: ExperimentSpec = serde_json::from_str(&body).map_err(|e| {
            Error::Spec(format!("experiment spec does not parse: {e}"))
        })?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.classes.is_empty() {
            return Err(Error::Spec("at least one target class is required".into()));
        }
        if self.regimes.is_empty() {
            return Err(Error::Spec("at least one regime is required".into()));
        }
        if self.seeds.is_empty() {
            return Err(Error::Spec("at least one seed is required".into()));
        }
        match (&self.corpus, &self.synthetic) {
            (Some(_), None) | (None, Some(_)) => {}
            _ => {
                return Err(Error::Spec(
                    "exactly one of `corpus` and `synthetic` must be given".into(),
                ))
            }
        }
        match (&self.embeddings, &self.random_embeddings) {
            (Some(_), None) | (None, Some(_)) => {}
            _ => {
                return Err(Error::Spec(
                    "exactly one of `embeddings` and `random_embeddings` must be given".into(),
                ))
            }
        }
        if let Some(synth) = &self.synthetic {
            synth.spec.validate()?;
        }
        Ok(())
    }
}

/// Runtime knobs that are not part of the experiment definition.
#[derive(Clone, Copy, Debug)]
pub struct RunOptions {
    /// Capture per-epoch test F1 for every cell (slower).
    pub history: bool,
    /// Worker threads for cell-level parallelism.
    pub workers: usize,
}

impl Default for RunOptions {
    fn default() -> Self {
        RunOptions { history: false, workers: 1 }
    }
}

/// Aggregated score for one (class, regime) group.
#[derive(Clone, Debug, PartialEq)]
pub struct ResultRow {
    pub class: String,
    pub regime: Regime,
    pub mean_f1: f64,
    pub std_f1: f64,
    pub seed_f1: Vec<(u64, f64)>,
    pub selected_epoch: usize,
}

/// One per-epoch observation from a history-capturing run.
#[derive(Clone, Debug, PartialEq)]
pub struct HistoryRow {
    pub epoch: usize,
    pub class: String,
    pub regime: Regime,
    pub seed: u64,
    pub f1: f64,
}

/// A cell that returned an error instead of a score.
#[derive(Clone, Debug)]
pub struct CellFailure {
    pub class: String,
    pub regime: Regime,
    pub seed: u64,
    pub error: String,
}

#[derive(Clone, Debug, Default)]
pub struct ExperimentReport {
    pub rows: Vec<ResultRow>,
    pub history: Vec<HistoryRow>,
    pub failures: Vec<CellFailure>,
}

/// Corpora plus word vectors, resolved from the spec's declared sources.
pub struct LoadedData {
    pub train: Vec<LabeledSentence>,
    pub validation: Vec<LabeledSentence>,
    pub table: EmbeddingTable,
}

pub fn load_data(spec: &ExperimentSpec) -> Result<LoadedData> {
    let (train, validation) = match (&spec.corpus, &spec.synthetic) {
        (Some(paths), None) => (
            corpus::read_conll(&paths.train)?,
            corpus::read_conll(&paths.validation)?,
        ),
        (None, Some(synth)) => {
            let mut rng = Rng::seed(mix_seed(synth.seed, &["synthetic-corpus"]));
            corpus::generate_synthetic_corpus(&synth.spec, &mut rng)?
        }
        _ => return Err(Error::Spec("no data source".into())),
    };
    let table = match (&spec.embeddings, &spec.random_embeddings) {
        (Some(path), None) => EmbeddingTable::load(path)?,
        (None, Some(random)) => {
            let mut rng = Rng::seed(mix_seed(random.seed, &["random-embeddings"]));
            let words = train
                .iter()
                .chain(&validation)
                .flat_map(|s| s.tokens.iter().map(String::as_str));
            EmbeddingTable::random(words, random.dim, &mut rng)
        }
        _ => return Err(Error::Spec("no embedding source".into())),
    };
    Ok(LoadedData { train, validation, table })
}

/// Scores predictions against gold, converting both sides of a TO-scheme
/// task to chunk boundaries first (gold scoring is always chunk-level BIO).
pub fn score_predictions(
    gold: &[LabeledSentence],
    pred: &[Vec<String>],
    class: &str,
    scheme: Scheme,
) -> Result<F1Report> {
    match scheme {
        Scheme::Bio => chunk_f1(gold, pred, class),
        Scheme::To => {
            let gold_bio: Vec<LabeledSentence> = gold
                .iter()
                .map(|s| LabeledSentence {
                    tokens: s.tokens.clone(),
                    tags: to_to_bio(&s.tags),
                    scheme: Scheme::Bio,
                })
                .collect();
            let pred_bio: Vec<Vec<String>> = pred.iter().map(|p| to_to_bio(p)).collect();
            chunk_f1(&gold_bio, &pred_bio, class)
        }
    }
}

/// Predicts a test pool in slices so one tape never holds the whole set.
pub fn predict_pool(
    model: &TrainedModel,
    table: &EmbeddingTable,
    pool: &[LabeledSentence],
) -> Result<Vec<Vec<String>>> {
    let mut out = Vec::with_capacity(pool.len());
    for chunk in pool.chunks(32) {
        let refs: Vec<&LabeledSentence> = chunk.iter().collect();
        out.extend(model.predict_batch(table, &refs)?);
    }
    Ok(out)
}

struct CellScore {
    f1: f64,
    history: Vec<f64>,
}

fn run_cell(
    task: &TaskDataset,
    table: &EmbeddingTable,
    spec: &ExperimentSpec,
    regime: Regime,
    seed: u64,
    capture_history: bool,
) -> Result<CellScore> {
    let mut cfg = RegimeConfig::new(regime, seed);
    spec.config.apply(&mut cfg);
    cfg.validate()?;
    // The few-shot draw is shared by every regime at one (class, seed) so
    // regimes are compared on identical samples.
    let mut split_rng = Rng::seed(mix_seed(seed, &["few-shot", &task.class]));
    let cell_task = task.with_few_shot_split(cfg.n_support, &mut split_rng)?;
    let mut history = Vec::new();
    let model = if capture_history {
        let mut probe = |_epoch: usize, snapshot: &TrainedModel| -> Result<f64> {
            let pred = predict_pool(snapshot, table, &cell_task.test)?;
            let report = score_predictions(&cell_task.test, &pred, &cell_task.class, cell_task.scheme)?;
            Ok(report.f1)
        };
        regimes::train(&cell_task, table, &cfg, Some(&mut probe))?
    } else {
        regimes::train(&cell_task, table, &cfg, None)?
    };
    history.extend(model.history.test_f1.iter().copied());
    let pred = predict_pool(&model, table, &cell_task.test)?;
    let report = score_predictions(&cell_task.test, &pred, &cell_task.class, cell_task.scheme)?;
    Ok(CellScore { f1: report.f1, history })
}

fn population_std(values: &[f64], mean: f64) -> f64 {
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / values.len() as f64;
    var.sqrt()
}

/// Runs every (class, regime, seed) cell and aggregates per (class, regime).
/// Cell failures are recorded and the rest of the run continues.
pub fn run_experiment(spec: &ExperimentSpec, opts: RunOptions) -> Result<ExperimentReport> {
    spec.validate()?;
    let data = load_data(spec)?;
    let mut tasks: BTreeMap<String, TaskDataset> = BTreeMap::new();
    for class in &spec.classes {
        tasks.insert(
            class.clone(),
            make_task(&data.train, &data.validation, class, spec.scheme)?,
        );
    }

    struct Cell<'a> {
        class: &'a str,
        regime: Regime,
        seed: u64,
    }
    let mut cells = Vec::new();
    for class in &spec.classes {
        for &regime in &spec.regimes {
            for &seed in &spec.seeds {
                cells.push(Cell { class, regime, seed });
            }
        }
    }

    let next = AtomicUsize::new(0);
    let outcomes: Mutex<Vec<Option<Result<CellScore>>>> =
        Mutex::new((0..cells.len()).map(|_| None).collect());
    let workers = opts.workers.max(1).min(cells.len().max(1));
    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                if i >= cells.len() {
                    break;
                }
                let cell = &cells[i];
                log::info!(
                    "cell {}/{}: class {} regime {} seed {}",
                    i + 1,
                    cells.len(),
                    cell.class,
                    cell.regime,
                    cell.seed
                );
                let outcome = run_cell(
                    &tasks[cell.class],
                    &data.table,
                    spec,
                    cell.regime,
                    cell.seed,
                    opts.history,
                );
                outcomes.lock().expect("worker poisoned the outcome lock")[i] = Some(outcome);
            });
        }
    });
    let outcomes = outcomes.into_inner().expect("worker poisoned the outcome lock");

    let mut report = ExperimentReport::default();
    let mut groups: BTreeMap<(String, String), Vec<(u64, f64, Vec<f64>)>> = BTreeMap::new();
    for (cell, outcome) in cells.iter().zip(outcomes) {
        match outcome.expect("every cell ran") {
            Ok(score) => {
                groups
                    .entry((cell.class.to_string(), cell.regime.id().to_string()))
                    .or_default()
                    .push((cell.seed, score.f1, score.history));
            }
            Err(err) => {
                log::error!(
                    "cell failed: class {} regime {} seed {}: {err}",
                    cell.class,
                    cell.regime,
                    cell.seed
                );
                report.failures.push(CellFailure {
                    class: cell.class.to_string(),
                    regime: cell.regime,
                    seed: cell.seed,
                    error: err.to_string(),
                });
            }
        }
    }

    let mut epochs_default = RegimeConfig::new(Regime::Base, 0);
    spec.config.apply(&mut epochs_default);
    for ((class, regime_id), mut cells) in groups {
        let regime = Regime::parse(&regime_id)?;
        cells.sort_by_key(|(seed, _, _)| *seed);
        let f1s: Vec<f64> = cells.iter().map(|(_, f1, _)| *f1).collect();
        let mean = f1s.iter().sum::<f64>() / f1s.len() as f64;
        let histories: Vec<Vec<f64>> = cells
            .iter()
            .filter(|(_, _, h)| !h.is_empty())
            .map(|(_, _, h)| h.clone())
            .collect();
        let selected_epoch = if histories.is_empty() {
            epochs_default.epochs - 1
        } else {
            regimes::select_epoch(&histories)?
        };
        for (seed, _, history) in &cells {
            for (epoch, f1) in history.iter().enumerate() {
                report.history.push(HistoryRow {
                    epoch,
                    class: class.clone(),
                    regime,
                    seed: *seed,
                    f1: *f1,
                });
            }
        }
        report.rows.push(ResultRow {
            class,
            regime,
            mean_f1: mean,
            std_f1: population_std(&f1s, mean),
            seed_f1: cells.iter().map(|(s, f1, _)| (*s, *f1)).collect(),
            selected_epoch,
        });
    }
    report
        .history
        .sort_by(|a, b| (&a.class, a.regime.id(), a.seed, a.epoch)
            .cmp(&(&b.class, b.regime.id(), b.seed, b.epoch)));
    Ok(report)
}

/// Writes results.csv and a readable summary table into `outdir`, plus
/// history.csv when per-epoch history was captured and failures.txt when
/// any cell failed.
pub fn emit_reports(report: &ExperimentReport, outdir: impl AsRef<Path>) -> Result<()> {
    let outdir = outdir.as_ref();
    std::fs::create_dir_all(outdir)?;

    let mut results = String::from("class,regime,mean_f1,std_f1,selected_epoch,seeds,seed_f1s\n");
    for row in &report.rows {
        let seeds = row
            .seed_f1
            .iter()
            .map(|(s, _)| s.to_string())
            .collect::<Vec<_>>()
            .join(";");
        let f1s = row
            .seed_f1
            .iter()
            .map(|(_, f1)| f1.to_string())
            .collect::<Vec<_>>()
            .join(";");
        results.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            row.class, row.regime, row.mean_f1, row.std_f1, row.selected_epoch, seeds, f1s
        ));
    }
    std::fs::write(outdir.join("results.csv"), results)?;

    if !report.history.is_empty() {
        let mut history = String::from("epoch,class,regime,seed,f1\n");
        for h in &report.history {
            history.push_str(&format!(
                "{},{},{},{},{}\n",
                h.epoch, h.class, h.regime, h.seed, h.f1
            ));
        }
        std::fs::write(outdir.join("history.csv"), history)?;
    }

    std::fs::write(outdir.join("summary.txt"), render_summary(&report.rows))?;

    if !report.failures.is_empty() {
        let mut body = String::new();
        for f in &report.failures {
            body.push_str(&format!(
                "class {} regime {} seed {}: {}\n",
                f.class, f.regime, f.seed, f.error
            ));
        }
        std::fs::write(outdir.join("failures.txt"), body)?;
    }
    Ok(())
}

/// Plain-text score table; the best mean per class carries a `*` marker.
pub fn render_summary(rows: &[ResultRow]) -> String {
    let mut best: BTreeMap<&str, f64> = BTreeMap::new();
    for row in rows {
        let entry = best.entry(row.class.as_str()).or_insert(f64::NEG_INFINITY);
        if row.mean_f1 > *entry {
            *entry = row.mean_f1;
        }
    }
    let mut out = format!(
        "{:<12} {:<16} {:>8} {:>8}  best\n",
        "class", "regime", "mean_f1", "std_f1"
    );
    for row in rows {
        let marker = if row.mean_f1 == best[row.class.as_str()] {
            "*"
        } else {
            ""
        };
        out.push_str(&format!(
            "{:<12} {:<16} {:>8.4} {:>8.4}  {}\n",
            row.class,
            row.regime.id(),
            row.mean_f1,
            row.std_f1,
            marker
        ));
    }
    out
}

/// Reads results.csv back into rows; inverse of `emit_reports` for the
/// results table.
pub fn parse_results_csv(path: impl AsRef<Path>) -> Result<Vec<ResultRow>> {
    let path = path.as_ref();
    let body = std::fs::read_to_string(path)?;
    let mut rows = Vec::new();
    for (i, line) in body.lines().enumerate() {
        if i == 0 || line.is_empty() {
            continue;
        }
        let parse_err = |msg: String| Error::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            msg,
        };
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 7 {
            return Err(parse_err(format!("expected 7 columns, got {}", fields.len())));
        }
        let num = |s: &str| -> Result<f64> {
            s.parse::<f64>()
                .map_err(|_| parse_err(format!("bad number `{s}`")))
        };
        let seeds: Vec<u64> = if fields[5].is_empty() {
            vec![]
        } else {
            fields[5]
                .split(';')
                .map(|s| {
                    s.parse::<u64>()
                        .map_err(|_| parse_err(format!("bad seed `{s}`")))
                })
                .collect::<Result<_>>()?
        };
        let f1s: Vec<f64> = if fields[6].is_empty() {
            vec![]
        } else {
            fields[6].split(';').map(num).collect::<Result<_>>()?
        };
        if seeds.len() != f1s.len() {
            return Err(parse_err("seed and f1 lists differ in length".into()));
        }
        rows.push(ResultRow {
            class: fields[0].to_string(),
            regime: Regime::parse(fields[1])?,
            mean_f1: num(fields[2])?,
            std_f1: num(fields[3])?,
            selected_epoch: fields[4]
                .parse()
                .map_err(|_| parse_err(format!("bad epoch `{}`", fields[4])))?,
            seed_f1: seeds.into_iter().zip(f1s).collect(),
        });
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::ClassSpec;

    fn tiny_synth_spec() -> SynthSpec {
        let class = |names: &[&str], p: f64| ClassSpec {
            lexicon: names.iter().map(|n| n.to_string()).collect(),
            carrier_prob: p,
        };
        SynthSpec {
            classes: BTreeMap::from([
                ("Loc".to_string(), class(&["Arden", "Brix", "Corin", "Dray"], 0.4)),
                ("Org".to_string(), class(&["Umbra", "Vex", "Wold", "Yarrow"], 0.4)),
            ]),
            background: ["the", "market", "rose", "on", "quiet", "news"]
                .iter()
                .map(|s| s.to_string())
                .collect(),
            train_sentences: 60,
            validation_sentences: 40,
            sentence_len: [3, 6],
        }
    }

    fn tiny_spec(outdir: Option<PathBuf>) -> ExperimentSpec {
        ExperimentSpec {
            corpus: None,
            synthetic: Some(SyntheticSource { seed: 5, spec: tiny_synth_spec() }),
            embeddings: None,
            random_embeddings: Some(RandomEmbeddingSpec { dim: 4, seed: 1 }),
            classes: vec!["Loc".to_string()],
            regimes: vec![Regime::BaseProto],
            seeds: vec![0, 1],
            scheme: Scheme::Bio,
            config: ConfigOverrides {
                n_support: Some(4),
                epochs: Some(2),
                steps_per_epoch: Some(3),
                warm_epochs: Some(1),
                proto_dim: Some(4),
                char_dim: Some(3),
                char_hidden: Some(2),
                word_hidden: Some(3),
                ..ConfigOverrides::default()
            },
            out_dir: outdir,
        }
    }

    #[test]
    fn unknown_spec_keys_are_rejected() {
        let err = serde_json::from_str::<ExperimentSpec>(
            r#"{"classes":["A"],"regimes":["Base"],"mystery":1}"#,
        );
        assert!(err.is_err());
    }

    #[test]
    fn spec_validation_requires_one_source_of_each_kind() {
        let mut spec = tiny_spec(None);
        spec.synthetic = None;
        assert!(spec.validate().is_err());
        let mut spec = tiny_spec(None);
        spec.random_embeddings = None;
        assert!(spec.validate().is_err());
        let mut spec = tiny_spec(None);
        spec.classes.clear();
        assert!(spec.validate().is_err());
        assert!(tiny_spec(None).validate().is_ok());
    }

    #[test]
    fn one_cell_group_yields_one_row_with_per_seed_scores() {
        let report = run_experiment(&tiny_spec(None), RunOptions::default()).unwrap();
        assert!(report.failures.is_empty());
        assert_eq!(report.rows.len(), 1);
        let row = &report.rows[0];
        assert_eq!(row.class, "Loc");
        assert_eq!(row.seed_f1.len(), 2);
        let mean = (row.seed_f1[0].1 + row.seed_f1[1].1) / 2.0;
        assert!((row.mean_f1 - mean).abs() < 1e-12);
        assert_eq!(row.selected_epoch, 1);
        assert!(report.history.is_empty());
    }

    #[test]
    fn reruns_and_worker_counts_do_not_change_results() {
        let spec = tiny_spec(None);
        let a = run_experiment(&spec, RunOptions { history: false, workers: 1 }).unwrap();
        let b = run_experiment(&spec, RunOptions { history: false, workers: 4 }).unwrap();
        assert_eq!(a.rows, b.rows);

        let mut permuted = spec.clone();
        permuted.seeds = vec![1, 0];
        let c = run_experiment(&permuted, RunOptions::default()).unwrap();
        assert_eq!(a.rows, c.rows);
    }

    #[test]
    fn history_capture_records_per_epoch_rows_and_selects_an_epoch() {
        let spec = tiny_spec(None);
        let report = run_experiment(&spec, RunOptions { history: true, workers: 1 }).unwrap();
        // 2 seeds x 2 epochs.
        assert_eq!(report.history.len(), 4);
        assert!(report.rows[0].selected_epoch < 2);
        for h in &report.history {
            assert!((0.0..=1.0).contains(&h.f1));
        }
    }

    #[test]
    fn reports_round_trip_and_mark_the_best_regime() {
        let rows = vec![
            ResultRow {
                class: "Loc".into(),
                regime: Regime::Base,
                mean_f1: 0.5,
                std_f1: 0.1,
                seed_f1: vec![(0, 0.4), (1, 0.6)],
                selected_epoch: 9,
            },
            ResultRow {
                class: "Loc".into(),
                regime: Regime::WarmProtoCrf,
                mean_f1: 0.6,
                std_f1: 0.0,
                seed_f1: vec![(0, 0.6), (1, 0.6)],
                selected_epoch: 3,
            },
        ];
        let report = ExperimentReport { rows: rows.clone(), history: vec![], failures: vec![] };
        let dir = tempfile::tempdir().unwrap();
        emit_reports(&report, dir.path()).unwrap();
        let parsed = parse_results_csv(dir.path().join("results.csv")).unwrap();
        assert_eq!(parsed, rows);

        let summary = std::fs::read_to_string(dir.path().join("summary.txt")).unwrap();
        let marked: Vec<&str> = summary.lines().filter(|l| l.trim_end().ends_with('*')).collect();
        assert_eq!(marked.len(), 1);
        assert!(marked[0].contains("WarmProto-CRF"));

        // No history captured, no failures: neither file appears.
        assert!(!dir.path().join("history.csv").exists());
        assert!(!dir.path().join("failures.txt").exists());

        let with_history = ExperimentReport {
            rows,
            history: vec![HistoryRow {
                epoch: 0,
                class: "Loc".into(),
                regime: Regime::Base,
                seed: 1,
                f1: 0.25,
            }],
            failures: vec![],
        };
        emit_reports(&with_history, dir.path()).unwrap();
        let history = std::fs::read_to_string(dir.path().join("history.csv")).unwrap();
        assert_eq!(history, "epoch,class,regime,seed,f1\n0,Loc,Base,1,0.25\n");
    }

    #[test]
    fn emitted_files_are_byte_identical_across_reruns() {
        let spec = tiny_spec(None);
        let run = || {
            let report = run_experiment(&spec, RunOptions::default()).unwrap();
            let dir = tempfile::tempdir().unwrap();
            emit_reports(&report, dir.path()).unwrap();
            std::fs::read(dir.path().join("results.csv")).unwrap()
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn to_scheme_scoring_converts_before_chunking() {
        let gold = vec![LabeledSentence::new(
            vec!["visit".into(), "nara".into(), "japan".into()],
            vec!["O".into(), "Loc".into(), "Loc".into()],
            Scheme::To,
        )
        .unwrap()];
        let pred = vec![vec!["O".to_string(), "Loc".to_string(), "Loc".to_string()]];
        let report = score_predictions(&gold, &pred, "Loc", Scheme::To).unwrap();
        assert_eq!((report.tp, report.fp, report.fn_), (1, 0, 0));
        // A boundary disagreement inside the run is invisible under TO.
        let pred = vec![vec!["O".to_string(), "O".to_string(), "Loc".to_string()]];
        let report = score_predictions(&gold, &pred, "Loc", Scheme::To).unwrap();
        assert_eq!((report.tp, report.fp, report.fn_), (0, 1, 1));
    }
}
