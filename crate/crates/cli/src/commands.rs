use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use affectva::corpus::{self, build_corpus as merge, corpus_stats, subsample_per_dataset, Corpus, CorpusStats, Fold, SkippedDataset};
use affectva::experiments::{
    load_cell_records, load_results, render_zero_shot, run_plan, ComparisonTable, ExperimentPlan, Scale,
    DESK_EPOCHS, DESK_LEARNING_RATE, DESK_MAX_PER_DATASET, RESULTS_FILE,
};
use affectva::metrics::{evaluate_grouped, GroupBy};
use affectva::model::artifact;
use affectva::trainer::{train_fold, write_run_dir, TrainConfig};
use affectva::fixture;
use serde::{Deserialize, Serialize};

use crate::failure::{Failure, DATA, REFUSED, USAGE};

#[derive(Serialize)]
struct BuildReport<'a> {
    seed: u64,
    included: &'a [String],
    skipped: &'a [SkippedDataset],
    #[serde(flatten)]
    stats: &'a CorpusStats,
}

pub fn build_corpus(manifest: &Path, output: &Path, stats: &Path, data_root: &Path, seed: u64) -> Result<(), Failure> {
    if !manifest.exists() {
        return Err(Failure::usage(format!("manifest {} does not exist", manifest.display())));
    }
    let descriptors = corpus::load_manifest(manifest)?;
    let outcome = merge(&descriptors, data_root, seed).map_err(|e| match e {
        corpus::CorpusError::EmptyCorpus => Failure::new(DATA, anyhow::anyhow!("none of the {} datasets were found under {}", descriptors.len(), data_root.display())),
        e => e.into(),
    })?;
    if outcome.included.is_empty() {
        return Err(Failure::new(DATA, anyhow::anyhow!("none of the manifest's datasets were found under {}", data_root.display())));
    }
    for s in &outcome.skipped {
        eprintln!("warning: skipped dataset `{}` ({}: {})", s.id, s.path.display(), s.reason);
    }
    create_parent(output)?;
    outcome.corpus.save(output)?;
    let report = BuildReport {
        seed,
        included: &outcome.included,
        skipped: &outcome.skipped,
        stats: &corpus_stats(&outcome.corpus)?,
    };
    write_json(stats, &report)?;
    println!(
        "corpus: {} instances from {} datasets ({} skipped) -> {}",
        outcome.corpus.len(),
        outcome.included.len(),
        outcome.skipped.len(),
        output.display()
    );
    Ok(())
}

/// Train command config file.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunConfig {
    /// Merged corpus; relative paths resolve against the config file.
    pub corpus: PathBuf,
    #[serde(default = "default_runs_root")]
    pub runs_root: PathBuf,
    #[serde(default)]
    pub run_id: Option<String>,
    #[serde(default = "both_folds")]
    pub folds: Vec<Fold>,
    pub train: TrainConfig,
}

fn default_runs_root() -> PathBuf {
    PathBuf::from("runs")
}

fn both_folds() -> Vec<Fold> {
    vec![Fold::A, Fold::B]
}

pub struct TrainArgs {
    pub config: PathBuf,
    pub corpus: Option<PathBuf>,
    pub seed: Option<u64>,
    pub desk: bool,
    pub runs_root: Option<PathBuf>,
    pub run_id: Option<String>,
    pub force: bool,
}

pub fn train(args: TrainArgs) -> Result<(), Failure> {
    let mut cfg: RunConfig = read_json(&args.config)?;
    let base = config_dir(&args.config);
    let corpus_path = args.corpus.unwrap_or_else(|| base.join(&cfg.corpus));
    let runs_root = args.runs_root.unwrap_or_else(|| base.join(&cfg.runs_root));
    if let Some(seed) = args.seed {
        cfg.train.seed = seed;
    }
    if args.desk {
        cfg.train.epochs = DESK_EPOCHS;
        cfg.train.learning_rate = DESK_LEARNING_RATE;
    }
    cfg.train.validate()?;
    if cfg.folds.is_empty() || cfg.folds.contains(&Fold::Unassigned) {
        return Err(Failure::usage("`folds` must list A and/or B"));
    }
    let corpus = load_corpus(&corpus_path)?;
    let corpus = if args.desk {
        subsample_per_dataset(&corpus, DESK_MAX_PER_DATASET, cfg.train.seed)
    } else {
        corpus
    };

    let run_id = args.run_id.or(cfg.run_id.clone()).unwrap_or_else(|| {
        format!("{}_{}_seed{}", cfg.train.model.checkpoint_id.replace(['/', '\\'], "_"), cfg.train.loss.kind.slug(), cfg.train.seed)
    });
    let run_dir = runs_root.join(&run_id);
    claim_dir(&run_dir, args.force)?;

    for &fold in &cfg.folds {
        let mut config = cfg.train.clone();
        config.fold_to_train = fold;
        let trained = train_fold(&corpus, fold, &config)?;
        let dir = run_dir.join(format!("fold_{fold}"));
        write_run_dir(&dir, &trained, &config)?;
        let alpha = trained.alpha.map(|a| format!(", alpha {a:.4}")).unwrap_or_default();
        println!(
            "fold {fold}: {} instances, {} steps, final loss {:.6}{alpha} -> {}",
            trained.train_ids.len(),
            trained.log.total_steps,
            trained.log.final_loss().unwrap_or(f64::NAN),
            dir.display()
        );
    }
    Ok(())
}

#[derive(Serialize)]
struct PredictionLine<'a> {
    text: &'a str,
    valence: Option<f64>,
    arousal: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    error: Option<&'static str>,
}

pub fn predict(model_dir: &Path, input: Option<&Path>, output: Option<&Path>) -> Result<(), Failure> {
    let model = artifact::load_predictor(model_dir)
        .map_err(|e| Failure::new(USAGE, e).context(format!("cannot load predictor from {}", model_dir.display())))?;
    let lines: Vec<String> = match input {
        Some(p) => {
            let f = std::fs::File::open(p).map_err(|e| Failure::new(USAGE, e).context(format!("cannot read {}", p.display())))?;
            BufReader::new(f).lines().collect::<Result<_, _>>()?
        }
        None => std::io::stdin().lock().lines().collect::<Result<_, _>>()?,
    };
    let scorable: Vec<String> = lines.iter().filter(|l| !l.trim().is_empty()).cloned().collect();
    let mut preds = model.predict_batch(&scorable)?.into_iter();

    let mut out: Box<dyn Write> = match output {
        Some(p) => {
            create_parent(p)?;
            Box::new(BufWriter::new(std::fs::File::create(p)?))
        }
        None => Box::new(BufWriter::new(std::io::stdout().lock())),
    };
    for text in &lines {
        let line = if text.trim().is_empty() {
            PredictionLine { text, valence: None, arousal: None, error: Some("empty text") }
        } else {
            let p = preds.next().expect("one prediction per nonblank line");
            PredictionLine { text, valence: Some(p.valence), arousal: Some(p.arousal), error: None }
        };
        serde_json::to_writer(&mut out, &line).map_err(|e| Failure::new(1, e))?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

pub fn experiment(
    plan_path: &Path,
    corpus: Option<PathBuf>,
    seed: Option<u64>,
    scale: Option<Scale>,
    out_root: &Path,
    force: bool,
) -> Result<(), Failure> {
    let mut plan: ExperimentPlan = read_json(plan_path)?;
    if let Some(c) = corpus {
        plan.corpus = c;
    } else {
        plan.corpus = config_dir(plan_path).join(&plan.corpus);
    }
    if let Some(s) = seed {
        plan.seed = s;
    }
    if let Some(s) = scale {
        plan.scale = s;
    }
    plan.validate()?;
    let corpus = load_corpus(&plan.corpus)?;
    claim_dir(&out_root.join(&plan.name), force)?;
    let outcome = run_plan(&plan, &corpus, out_root)?;
    print!("{}", outcome.index.comparison.render());
    let failed = outcome.index.grid.iter().filter(|c| c.error.is_some()).count();
    if failed > 0 {
        eprintln!("warning: {failed} of {} cells failed; see {}", outcome.index.grid.len(), outcome.dir.join(RESULTS_FILE).display());
    }
    println!("results -> {}", outcome.dir.display());
    Ok(())
}

pub fn report(results: &Path, group_by: Option<GroupBy>, csv: bool) -> Result<(), Failure> {
    if !results.join(RESULTS_FILE).exists() {
        return Err(Failure::usage(format!("{} has no {RESULTS_FILE}", results.display())));
    }
    let index = load_results(results)?;
    let table = ComparisonTable::from_rows(index.comparison.rows.clone());
    let mut out = String::new();
    if csv {
        out.push_str(&table.to_csv());
    } else {
        out.push_str(&format!("{} ({:?} scale)\n", index.name, index.scale));
        out.push_str(&table.render());
    }
    if let Some(g) = group_by {
        for cell in index.grid.iter().filter(|c| c.error.is_none()) {
            let records = load_cell_records(results, &cell.dir)?;
            let report = evaluate_grouped(&records, g).map_err(|e| Failure::new(DATA, e))?;
            if csv {
                out.push_str(&format!("# {} {}\n{}", cell.model, cell.loss, report.to_csv()));
            } else {
                out.push_str(&format!("\n{} / {} by {g}\n{}", cell.model.label(), cell.loss.label(), report.render()));
            }
        }
    }
    if !csv {
        for z in &index.zero_shot {
            out.push_str(&format!("\nzero-shot {} / {} holding out {}\n", z.model.label(), z.loss.label(), z.holdout.join(", ")));
            match &z.error {
                Some(e) => out.push_str(&format!("failed: {e}\n")),
                None => {
                    out.push_str("trained on all:\n");
                    out.push_str(&render_zero_shot(&z.reference_rows));
                    out.push_str("trained without holdout:\n");
                    out.push_str(&render_zero_shot(&z.rows));
                }
            }
        }
        for a in &index.ablation {
            out.push_str(&format!("\nablation {} / {} excluding {}\n", a.model.label(), a.loss.label(), a.excluded.join(", ")));
            match &a.error {
                Some(e) => out.push_str(&format!("failed: {e}\n")),
                None => {
                    let cell = |v: Option<f64>| v.map_or_else(|| "n/a".to_string(), |x| format!("{x:.4}"));
                    for d in &a.delta {
                        out.push_str(&format!("{:<8} {:>8} -> {:>8} ({:>8})\n", d.metric, cell(d.baseline), cell(d.ablated), cell(d.delta)));
                    }
                }
            }
        }
    }
    print!("{out}");
    Ok(())
}

pub fn make_fixture(dir: &Path, seed: u64) -> Result<(), Failure> {
    let manifest = fixture::write_fixture(dir, seed)?;
    println!("fixture: {} datasets -> {}", manifest.len(), dir.display());
    Ok(())
}

fn load_corpus(path: &Path) -> Result<Corpus, Failure> {
    if !path.exists() {
        return Err(Failure::usage(format!("corpus {} does not exist", path.display())));
    }
    Ok(Corpus::load(path)?)
}

/// Refuses to reuse an existing directory unless `force`; with `force` the
/// old contents are removed first.
fn claim_dir(dir: &Path, force: bool) -> Result<(), Failure> {
    if dir.exists() {
        if !force {
            return Err(Failure::new(
                REFUSED,
                anyhow::anyhow!("{} already exists; pass --force to overwrite", dir.display()),
            ));
        }
        std::fs::remove_dir_all(dir)?;
    }
    Ok(())
}

fn config_dir(path: &Path) -> PathBuf {
    match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
        _ => PathBuf::from("."),
    }
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T, Failure> {
    let bytes = std::fs::read(path).map_err(|e| Failure::new(USAGE, e).context(format!("cannot read {}", path.display())))?;
    serde_json::from_slice(&bytes).map_err(|e| Failure::new(USAGE, e).context(format!("invalid {}", path.display())))
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<(), Failure> {
    create_parent(path)?;
    let mut s = serde_json::to_string_pretty(value).map_err(|e| Failure::new(1, e))?;
    s.push('\n');
    std::fs::write(path, s)?;
    Ok(())
}

fn create_parent(path: &Path) -> Result<(), Failure> {
    if let Some(p) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(p)?;
    }
    Ok(())
}
