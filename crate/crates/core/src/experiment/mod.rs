//! End-to-end commands: generate, augment, train, evaluate, ablate.

mod evaluate;

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

pub use evaluate::{evaluate_model, score_domain, EvalSplit};

use crate::augment::{featurize, run_augmentation, AugmentReport, AugmentedDataset, Featurized, ITEM_FIELDS, USER_FIELDS};
use crate::config::{DataSource, ExperimentConfig};
use crate::data::{
    generate_synthetic, metrics_rows, preprocess, read_interactions, write_jsonl, write_metrics_csv, CorpusStats, Domain,
    MetricsRow, RankingMetrics, RawInteraction, SplitDataset,
};
use crate::error::{Error, Result};
use crate::fed::{
    run_training, write_loss_terms, write_round_reports, Checkpoint, ClientData, ClientState, RoundReport, TrainContext,
    TrainingOutcome,
};
use crate::model::{ModelParams, ModelShape};
use crate::rng::{label, stream};

pub const INTERACTIONS_FILE: &str = "interactions.jsonl";
pub const AUGMENTED_DIR: &str = "augmented";

/// Everything training and evaluation need, built once per corpus.
#[derive(Clone, Debug)]
pub struct Prepared {
    pub dataset: SplitDataset,
    pub augmented: AugmentedDataset,
    pub features: Featurized,
}

impl Prepared {
    pub fn new(dataset: SplitDataset, augmented: AugmentedDataset) -> Self {
        let features = featurize(&augmented);
        Self { dataset, augmented, features }
    }

    /// Same corpus with augmentation stripped.
    pub fn without_augmentation(&self) -> Self {
        Self::new(self.dataset.clone(), AugmentedDataset::none(&self.dataset))
    }

    pub fn shape(&self) -> ModelShape {
        let v = &self.features.vocab;
        ModelShape {
            items_a: self.dataset.catalog_a.len(),
            items_b: self.dataset.catalog_b.len(),
            feat_vocab_a: v.feat_a.len().max(1),
            feat_vocab_b: v.feat_b.len().max(1),
            side_vocab: v.side.len().max(1),
        }
    }

    pub fn stats(&self) -> CorpusStats {
        let base = CorpusStats::from_split(&self.dataset);
        let r = self.augmented.report(Default::default());
        if r.items_augmented == 0 && r.expanded_positives_a + r.expanded_positives_b == 0 {
            return base;
        }
        base.with_augmentation(r.expanded_positives_a, r.expanded_positives_b, ITEM_FIELDS, USER_FIELDS)
    }
}

/// Raw interactions from the configured source, or from `data_dir` when it holds a corpus.
pub fn load_corpus(cfg: &ExperimentConfig, data_dir: Option<&Path>) -> Result<Vec<RawInteraction>> {
    if let Some(path) = data_dir.map(|d| d.join(INTERACTIONS_FILE)).filter(|p| p.exists()) {
        return read_interactions(&path);
    }
    match cfg.data.source {
        DataSource::Synthetic => generate_synthetic(&cfg.data.synthetic),
        DataSource::Files => read_interactions(cfg.data.interactions.as_deref().expect("validated")),
    }
}

/// Split corpus plus augmentation: loaded from `data_dir/augmented` when
/// present, otherwise computed with the configured backend (or skipped when
/// augmentation is disabled).
pub fn prepare(cfg: &ExperimentConfig, data_dir: Option<&Path>) -> Result<Prepared> {
    let dataset = preprocess(&load_corpus(cfg, data_dir)?, &cfg.data.filter)?;
    if !cfg.augment.enabled {
        let none = AugmentedDataset::none(&dataset);
        return Ok(Prepared::new(dataset, none));
    }
    let saved = data_dir.map(|d| d.join(AUGMENTED_DIR)).filter(|p| p.join("users.jsonl").exists());
    let augmented = match saved {
        Some(dir) => AugmentedDataset::load(&dir, &dataset)?,
        None => {
            let client = cfg.augment.build_client(cfg.seed)?;
            run_augmentation(&dataset, &cfg.augment, &client, cfg.seed)?
        }
    };
    Ok(Prepared::new(dataset, augmented))
}

fn ensure_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    Ok(())
}

/// Echoes the resolved config for provenance.
pub fn write_config_echo(cfg: &ExperimentConfig, dir: &Path) -> Result<()> {
    ensure_dir(dir)?;
    std::fs::write(dir.join("config.toml"), cfg.to_toml())?;
    Ok(())
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    std::fs::write(path, text)?;
    Ok(())
}

/// Writes the raw corpus and its statistics.
pub fn cmd_generate(cfg: &ExperimentConfig, out: &Path) -> Result<CorpusStats> {
    cfg.validate()?;
    let raw = load_corpus(cfg, None)?;
    write_config_echo(cfg, out)?;
    write_jsonl(&out.join(INTERACTIONS_FILE), &raw)?;
    let stats = CorpusStats::from_split(&preprocess(&raw, &cfg.data.filter)?);
    write_json(&out.join("stats.json"), &stats)?;
    Ok(stats)
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct AugmentSummary {
    pub report: AugmentReport,
    pub stats: CorpusStats,
}

/// Runs the augmentation pipeline; originals in `data_dir` are only read.
pub fn cmd_augment(cfg: &ExperimentConfig, data_dir: &Path, out: &Path) -> Result<AugmentSummary> {
    cfg.validate()?;
    let dataset = preprocess(&load_corpus(cfg, Some(data_dir))?, &cfg.data.filter)?;
    let client = cfg.augment.build_client(cfg.seed)?;
    let augmented = run_augmentation(&dataset, &cfg.augment, &client, cfg.seed)?;
    write_config_echo(cfg, out)?;
    augmented.save(&out.join(AUGMENTED_DIR))?;
    let report = augmented.report(client.stats());
    let stats = Prepared::new(dataset, augmented).stats();
    let summary = AugmentSummary { report, stats };
    write_json(&out.join("augment_report.json"), &summary)?;
    Ok(summary)
}

/// Result of training one configuration in memory.
pub struct TrainRun {
    pub outcome: TrainingOutcome,
    pub clients: Vec<ClientState>,
}

/// Initializes the model and clients and runs federated training.
pub fn train(cfg: &ExperimentConfig, prep: &Prepared, observer: Option<&mut dyn FnMut(&[u8])>) -> Result<TrainRun> {
    cfg.validate()?;
    let privacy = cfg.privacy.effective();
    let mut clients = prep
        .dataset
        .users
        .iter()
        .zip(&prep.augmented.users)
        .zip(&prep.features.side)
        .map(|((u, a), side)| {
            let data = ClientData::build(u, a, side.clone(), prep.dataset.catalog_a.len(), prep.dataset.catalog_b.len());
            ClientState::new(data, &privacy, cfg.federation.rho)
        })
        .collect::<Result<Vec<_>>>()?;
    let mut init_rng = stream(cfg.seed, &[label::INIT]);
    let init = ModelParams::new(&cfg.model, &prep.shape(), &mut init_rng)?;
    let ctx = TrainContext { model: &cfg.model, fed: &cfg.federation, features: &prep.features.items, seed: cfg.seed };
    let outcome = run_training(init, &mut clients, &ctx, observer)?;
    Ok(TrainRun { outcome, clients })
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TrainSummary {
    pub rounds_run: usize,
    pub terminated: bool,
    pub first_loss: Option<f64>,
    pub last_loss: Option<f64>,
    pub stopped_clients: usize,
    /// Relative to the run directory, so identical runs write identical summaries.
    pub checkpoint: PathBuf,
}

fn loss_at(reports: &[RoundReport], last: bool) -> Option<f64> {
    let mut it = reports.iter().filter(|r| r.loss.is_some());
    let r = if last { it.next_back() } else { it.next() };
    r.map(RoundReport::mean_loss)
}

/// Writes the outputs of a finished run: checkpoint, round and loss CSVs, accountant traces.
pub fn write_run(cfg: &ExperimentConfig, prep: &Prepared, run: &TrainRun, out: &Path) -> Result<TrainSummary> {
    write_config_echo(cfg, out)?;
    let checkpoint = PathBuf::from("checkpoint.json");
    Checkpoint::new(cfg.hash(), run.outcome.model.round, cfg.model.clone(), run.outcome.model.params.clone())
        .save(&out.join(&checkpoint))?;
    write_round_reports(&out.join("rounds.csv"), &run.outcome.reports)?;
    write_loss_terms(&out.join("loss_terms.csv"), &run.outcome.reports)?;
    let traces = out.join("traces");
    ensure_dir(&traces)?;
    // a disabled accountant still counts steps, but there is nothing to audit
    for c in run.clients.iter().filter(|_| cfg.privacy.enabled) {
        if !c.privacy.trace().is_empty() {
            let name = &prep.dataset.user_names[c.data.user];
            let safe: String = name.chars().map(|ch| if ch.is_ascii_alphanumeric() || ch == '-' || ch == '_' { ch } else { '_' }).collect();
            c.privacy.write_trace_csv(&traces.join(format!("{safe}.csv")))?;
        }
    }
    let summary = TrainSummary {
        rounds_run: run.outcome.reports.len(),
        terminated: run.outcome.terminated,
        first_loss: loss_at(&run.outcome.reports, false),
        last_loss: loss_at(&run.outcome.reports, true),
        stopped_clients: run.clients.iter().filter(|c| c.privacy.stopped).count(),
        checkpoint,
    };
    write_json(&out.join("train_summary.json"), &summary)?;
    Ok(summary)
}

pub fn cmd_train(cfg: &ExperimentConfig, data_dir: Option<&Path>, out: &Path) -> Result<TrainSummary> {
    cfg.validate()?;
    let prep = prepare(cfg, data_dir)?;
    let run = train(cfg, &prep, None)?;
    write_run(cfg, &prep, &run, out)
}

/// Ranks held-out test items of every user and writes `metrics.csv`.
pub fn cmd_evaluate(
    cfg: &ExperimentConfig,
    checkpoint: &Path,
    data_dir: Option<&Path>,
    out: &Path,
) -> Result<Vec<(Domain, RankingMetrics)>> {
    cfg.validate()?;
    let ck = Checkpoint::load(checkpoint)?;
    let prep = prepare(cfg, data_dir)?;
    if ck.params.shape() != prep.shape() {
        return Err(Error::Checkpoint(format!(
            "checkpoint shape {:?} does not match the corpus shape {:?}",
            ck.params.shape(),
            prep.shape()
        )));
    }
    let metrics = evaluate_model(&ck.params, &prep, &ck.model, EvalSplit::Test, cfg.eval.negatives, &cfg.eval.ks, cfg.seed)?;
    ensure_dir(out)?;
    write_metrics_csv(&out.join("metrics.csv"), &metrics_rows("idst-cl", &metrics))?;
    Ok(metrics)
}

/// Ablation arms, named after the variants they reproduce.
pub const ABLATION_ARMS: [&str; 6] = ["full", "no-privaugnet", "no-idra", "no-cdrd", "no-adaldp", "static-ldp"];

/// Config for one ablation arm derived from the base config.
pub fn arm_config(base: &ExperimentConfig, arm: &str) -> Result<ExperimentConfig> {
    let mut cfg = base.clone();
    match arm {
        "full" => {}
        "no-privaugnet" => cfg.augment.enabled = false,
        "no-idra" => cfg.model.lambda_idra = 0.0,
        "no-cdrd" => cfg.model.lambda_cdrd = 0.0,
        "no-adaldp" => cfg.privacy.enabled = false,
        "static-ldp" => cfg.privacy.decay = 1.0,
        other => return Err(Error::Config(format!("unknown ablation arm {other}"))),
    }
    Ok(cfg)
}

/// Trains and evaluates one arm on a prepared corpus.
pub fn run_arm(cfg: &ExperimentConfig, prep: &Prepared) -> Result<(TrainRun, Vec<(Domain, RankingMetrics)>)> {
    let prep_arm;
    let prep = if cfg.augment.enabled {
        prep
    } else {
        prep_arm = prep.without_augmentation();
        &prep_arm
    };
    let run = train(cfg, prep, None)?;
    let metrics = evaluate_model(
        &run.outcome.model.params,
        prep,
        &cfg.model,
        EvalSplit::Test,
        cfg.eval.negatives,
        &cfg.eval.ks,
        cfg.seed,
    )?;
    Ok((run, metrics))
}

/// Runs every arm on one shared corpus and seed; writes `ablation.csv` plus per-arm run directories.
pub fn cmd_ablate(cfg: &ExperimentConfig, data_dir: Option<&Path>, out: &Path) -> Result<Vec<MetricsRow>> {
    cfg.validate()?;
    let base = ExperimentConfig { augment: crate::augment::AugmentConfig { enabled: true, ..cfg.augment.clone() }, ..cfg.clone() };
    let prep = prepare(&base, data_dir)?;
    write_config_echo(cfg, out)?;
    let mut rows = Vec::new();
    for arm in ABLATION_ARMS {
        let arm_cfg = arm_config(cfg, arm)?;
        let (run, metrics) = run_arm(&arm_cfg, &prep)?;
        let arm_prep = if arm_cfg.augment.enabled { prep.clone() } else { prep.without_augmentation() };
        write_run(&arm_cfg, &arm_prep, &run, &out.join(arm))?;
        write_metrics_csv(&out.join(arm).join("metrics.csv"), &metrics_rows(arm, &metrics))?;
        log::info!("arm {arm}: NDCG@10 A {:.4} B {:.4}", metrics[0].1.ndcg(10), metrics[1].1.ndcg(10));
        rows.extend(metrics_rows(arm, &metrics));
    }
    write_metrics_csv(&out.join("ablation.csv"), &rows)?;
    Ok(rows)
}
