use std::fs;
use std::io::{BufRead, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{bail, Context};
use log::{info, warn};
use serde::{Deserialize, Serialize};
use serde_json::json;
use specdistill::corpus::{gen_fruit_world, gen_synthetic_dialogues, load_corpus, CorpusOptions, DialogueTemplates, ParallelCorpus, TokenId, Vocabulary, FRUIT_DISTRIBUTION};
use specdistill::distill::{run_distillation, ModelPool, RunStatus};
use specdistill::evaluator::{
    adversuc, build_eval_dataset, machine_pairs, machine_vs_random, random_pairs, sample_sources, train_evaluator, Evaluator, EvaluatorReport,
    EvaluatorTask,
};
use specdistill::metrics::IterationReport;
use specdistill::policy::{self, BaselineEstimator, PolicyReport, PolicySelector};
use specdistill::seed;
use specdistill::seq2seq::{sampling::DEFAULT_TOP_K, DecodeStrategy, Responder};

use crate::config::{CorpusSource, RunConfig};

pub const CONFIG_FILE: &str = "config.toml";
const DISTILL_DONE: &str = "distill.done";
const EVALUATOR_DIR: &str = "evaluator";
const POLICY_DIR: &str = "policy";
const REPORT_DIR: &str = "report";
const DONE: &str = "done.json";
const HVM_CKPT: &str = "human_vs_machine.ckpt";
const POLICY_CKPT: &str = "policy.ckpt";

/// Result of a stage; `Saturated` maps to its own exit code.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Status {
    Done,
    Saturated,
}

#[derive(Debug, Serialize, Deserialize)]
struct DistillDone {
    status: RunStatus,
    rounds: usize,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct AdversarialRow {
    pub strategy: String,
    pub adversuc: f64,
    pub machine_vs_random: f64,
    pub machine_vs_random_heldout: f64,
}

#[derive(Debug, Serialize, Deserialize)]
struct EvaluatorMetrics {
    human_vs_machine: EvaluatorReport,
    adversarial: Vec<AdversarialRow>,
}

#[derive(Debug, Serialize, Deserialize)]
struct PolicyMetrics {
    training: PolicyReport,
    /// Share of held-out sources routed to each pool index at test time.
    selection: Vec<f64>,
}

pub fn require_run_dir(run_dir: &Path) -> anyhow::Result<()> {
    if !run_dir.is_dir() {
        bail!("run directory {} does not exist", run_dir.display());
    }
    Ok(())
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> anyhow::Result<()> {
    fs::write(path, serde_json::to_string_pretty(value)? + "\n").with_context(|| format!("writing {}", path.display()))
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> anyhow::Result<T> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(serde_json::from_str(&text)?)
}

pub fn run_config(run_dir: &Path) -> anyhow::Result<RunConfig> {
    RunConfig::load(&run_dir.join(CONFIG_FILE))
}

/// Training and evaluation corpora stored in the run directory.
pub struct Corpora {
    pub train: ParallelCorpus,
    pub dev: Option<ParallelCorpus>,
}

impl Corpora {
    /// Dev split when present, else the training corpus.
    pub fn eval(&self) -> &ParallelCorpus {
        self.dev.as_ref().unwrap_or(&self.train)
    }

    fn build(config: &RunConfig) -> anyhow::Result<Self> {
        let spec = &config.corpus;
        let all = match spec.source {
            CorpusSource::Fruit => gen_fruit_world(&FRUIT_DISTRIBUTION, spec.size, seed::derive(config.seed, "corpus", 0))?,
            CorpusSource::Synthetic => {
                let t = DialogueTemplates::desk_default(spec.generic_fraction);
                gen_synthetic_dialogues(&t, spec.size, seed::derive(config.seed, "corpus", 0))?.corpus
            }
            CorpusSource::File => {
                let path = spec.path.as_ref().expect("validated");
                let options = CorpusOptions { max_vocab: spec.max_vocab, min_count: spec.min_count, max_len: spec.max_len };
                load_corpus(path, options).with_context(|| format!("loading corpus {}", path.display()))?
            }
        };
        if spec.dev_size == 0 {
            return Ok(Self { train: all, dev: None });
        }
        if spec.dev_size >= all.len() {
            bail!(crate::ConfigError(format!("corpus.dev_size {} leaves no training data out of {}", spec.dev_size, all.len())));
        }
        let (train, dev) = all.split(spec.dev_size, seed::derive(config.seed, "dev", 0));
        Ok(Self { train, dev: Some(dev) })
    }

    fn save(&self, run_dir: &Path) -> anyhow::Result<()> {
        let dir = run_dir.join("corpus");
        fs::create_dir_all(&dir)?;
        self.train.vocab().save(&dir.join("vocab.txt"))?;
        fs::write(dir.join("train.tsv"), self.train.to_tsv())?;
        if let Some(dev) = &self.dev {
            fs::write(dir.join("dev.tsv"), dev.to_tsv())?;
        }
        Ok(())
    }

    pub fn load(run_dir: &Path) -> anyhow::Result<Self> {
        let dir = run_dir.join("corpus");
        let vocab = Arc::new(Vocabulary::load(&dir.join("vocab.txt")).context("loading run vocabulary")?);
        let train = ParallelCorpus::from_tsv(&fs::read_to_string(dir.join("train.tsv"))?, Arc::clone(&vocab))?;
        let dev_path = dir.join("dev.tsv");
        let dev = if dev_path.exists() { Some(ParallelCorpus::from_tsv(&fs::read_to_string(dev_path)?, vocab)?) } else { None };
        Ok(Self { train, dev })
    }
}

/// Removes the artifacts a stage and everything downstream of it own.
fn clear(run_dir: &Path, stage: &str) -> anyhow::Result<()> {
    let mut doomed: Vec<PathBuf> = vec![run_dir.join(REPORT_DIR), run_dir.join(POLICY_DIR)];
    if stage != "policy" {
        doomed.push(run_dir.join(EVALUATOR_DIR));
    }
    if stage == "distill" {
        doomed.push(run_dir.join(DISTILL_DONE));
        doomed.push(run_dir.join("corpus"));
        for entry in fs::read_dir(run_dir)? {
            let path = entry?.path();
            if path.file_name().and_then(|n| n.to_str()).is_some_and(|n| n.starts_with("iter_")) {
                doomed.push(path);
            }
        }
    }
    for p in doomed {
        if p.is_dir() {
            fs::remove_dir_all(&p)?;
        } else if p.exists() {
            fs::remove_file(&p)?;
        }
    }
    Ok(())
}

pub fn distill(config: &RunConfig, run_dir: &Path, force: bool) -> anyhow::Result<Status> {
    let done = run_dir.join(DISTILL_DONE);
    if done.exists() && !force {
        let d: DistillDone = read_json(&done)?;
        info!("distillation already finished ({} rounds, {:?}); use --force to rerun", d.rounds, d.status);
        return Ok(if d.status == RunStatus::Saturated { Status::Saturated } else { Status::Done });
    }
    let corpora = Corpora::build(config)?;
    fs::create_dir_all(run_dir).with_context(|| format!("creating {}", run_dir.display()))?;
    clear(run_dir, "distill")?;
    fs::write(run_dir.join(CONFIG_FILE), config.to_toml()?)?;
    corpora.save(run_dir)?;
    info!("distilling {} training pairs for up to {} rounds", corpora.train.len(), config.distill.iterations);
    let run = run_distillation(&corpora.train, corpora.dev.as_ref(), &config.distill, config.seed, Some(run_dir))?;
    let rows = run.pool.iteration_report(corpora.eval())?;
    fs::create_dir_all(run_dir.join(REPORT_DIR))?;
    write_iteration_report(run_dir, &rows)?;
    write_json(&done, &DistillDone { status: run.status, rounds: run.rounds.len() })?;
    match run.status {
        RunStatus::Complete => Ok(Status::Done),
        RunStatus::Saturated => {
            warn!("no frequent responses after round {}; pool stops at {} models", run.rounds.len(), run.pool.len());
            Ok(Status::Saturated)
        }
    }
}

fn load_pool(run_dir: &Path) -> anyhow::Result<ModelPool> {
    if !run_dir.join(DISTILL_DONE).exists() {
        bail!("no finished model pool in {}; run `distill` first", run_dir.display());
    }
    let pool = ModelPool::load_dir(run_dir)?;
    if pool.is_empty() {
        bail!("model pool in {} is empty", run_dir.display());
    }
    Ok(pool)
}

fn table_strategies(config: &RunConfig) -> [DecodeStrategy; 3] {
    let k = match config.decode {
        DecodeStrategy::StochasticGreedy { k } => k,
        _ => DEFAULT_TOP_K,
    };
    [DecodeStrategy::Greedy, DecodeStrategy::Sample, DecodeStrategy::StochasticGreedy { k }]
}

pub fn train_evaluators(config: &RunConfig, run_dir: &Path, force: bool) -> anyhow::Result<Status> {
    let dir = run_dir.join(EVALUATOR_DIR);
    if dir.join(DONE).exists() && !force {
        info!("evaluator already trained; use --force to retrain");
        return Ok(Status::Done);
    }
    let pool = load_pool(run_dir)?;
    let corpora = Corpora::load(run_dir)?;
    let v = corpora.train.vocab().len();
    let s = config.seed;

    let data = build_eval_dataset(&corpora.train, &pool.models, config.evaluator_pairs, seed::derive(s, "eval-data", 0))?;
    let (hvm, hvm_report) = train_evaluator(&data, EvaluatorTask::HumanVsMachine, v, &config.evaluator, seed::derive(s, "hvm", 0))?;
    info!("human-vs-machine evaluator: held-out accuracy {:.3}", hvm_report.heldout_accuracy);

    // Decoding-strategy comparison on the full-data model.
    let iter1 = &pool.models[..1];
    let test_sources = sample_sources(corpora.eval(), config.test_sources, seed::derive(s, "test-sources", 0))?;
    let train_sources = sample_sources(&corpora.train, config.evaluator_pairs, seed::derive(s, "mvr-sources", 0))?;
    let mut evaluators = Vec::new();
    let mut rows = Vec::new();
    for (k, strategy) in table_strategies(config).into_iter().enumerate() {
        let sk = seed::derive(s, "strategy", k as u64);
        let test_machine = machine_pairs(&test_sources, iter1, strategy, seed::derive(sk, "test", 0))?;
        let mut mvr_data = machine_pairs(&train_sources, iter1, strategy, seed::derive(sk, "train", 0))?;
        mvr_data.extend(random_pairs(&train_sources, &corpora.train, seed::derive(sk, "random", 0))?);
        let (mvr, report) = train_evaluator(&mvr_data, EvaluatorTask::MachineVsRandom, v, &config.evaluator, seed::derive(sk, "mvr", 0))?;
        let test_random = random_pairs(&test_sources, corpora.eval(), seed::derive(sk, "test-random", 0))?;
        let row = AdversarialRow {
            strategy: strategy.name().to_string(),
            adversuc: adversuc(&hvm, &test_machine)?,
            machine_vs_random: machine_vs_random(&mvr, &test_machine, &test_random)?,
            machine_vs_random_heldout: report.heldout_accuracy,
        };
        info!("{}: AdverSuc {:.3}, machine-vs-random {:.3}", row.strategy, row.adversuc, row.machine_vs_random);
        evaluators.push((strategy, mvr));
        rows.push(row);
    }

    clear(run_dir, "evaluator")?;
    fs::create_dir_all(&dir)?;
    fs::write(dir.join(CONFIG_FILE), config.to_toml()?)?;
    hvm.save(&config.evaluator, &dir.join(HVM_CKPT))?;
    for (strategy, ev) in &evaluators {
        ev.save(&config.evaluator, &dir.join(format!("machine_vs_random_{}.ckpt", strategy.name().replace(' ', "_"))))?;
    }
    write_json(&dir.join("metrics.json"), &EvaluatorMetrics { human_vs_machine: hvm_report, adversarial: rows })?;
    write_json(&dir.join(DONE), &json!({ "pool_size": pool.len() }))?;
    Ok(Status::Done)
}

pub fn train_policy(config: &RunConfig, run_dir: &Path, force: bool) -> anyhow::Result<Status> {
    let dir = run_dir.join(POLICY_DIR);
    if dir.join(DONE).exists() && !force {
        info!("policy already trained; use --force to retrain");
        return Ok(Status::Done);
    }
    let pool = load_pool(run_dir)?;
    let hvm_path = run_dir.join(EVALUATOR_DIR).join(HVM_CKPT);
    if !run_dir.join(EVALUATOR_DIR).join(DONE).exists() {
        bail!("no trained evaluator in {}; run `train-evaluator` first", run_dir.display());
    }
    let (hvm, _) = Evaluator::load(&hvm_path)?;
    let corpora = Corpora::load(run_dir)?;
    let s = config.seed;
    let pc = &config.policy;
    let inputs = sample_sources(&corpora.train, config.policy_inputs, seed::derive(s, "policy-inputs", 0))?;
    let mut selector = PolicySelector::new(corpora.train.vocab().len(), pool.len(), pc.embed_dim, pc.hidden_dim, seed::derive(s, "policy", 0))?;
    let mut baseline = BaselineEstimator::new(pc.hidden_dim, pc.baseline_hidden, seed::derive(s, "baseline", 0));
    let training = policy::train_policy(&mut selector, &mut baseline, &pool.models, &hvm, &inputs, pc, seed::derive(s, "episodes", 0))?;
    let test_sources = sample_sources(corpora.eval(), config.test_sources, seed::derive(s, "test-sources", 0))?;
    let selection = policy::selection_histogram(&selector, &test_sources);
    info!("policy selection shares: {selection:?}");

    clear(run_dir, "policy")?;
    fs::create_dir_all(&dir)?;
    fs::write(dir.join(CONFIG_FILE), config.to_toml()?)?;
    policy::save(&selector, &baseline, pc, &dir.join(POLICY_CKPT))?;
    write_json(&dir.join("metrics.json"), &PolicyMetrics { training, selection })?;
    write_json(&dir.join(DONE), &json!({ "pool_size": pool.len() }))?;
    Ok(Status::Done)
}

/// Answers each input line with `index \t response`, the index 1-based.
pub fn respond<R: BufRead, W: Write>(
    run_dir: &Path,
    strategy: DecodeStrategy,
    seed_value: u64,
    input: R,
    mut out: W,
) -> anyhow::Result<()> {
    let pool = load_pool(run_dir)?;
    let policy_path = run_dir.join(POLICY_DIR).join(POLICY_CKPT);
    let selector = if run_dir.join(POLICY_DIR).join(DONE).exists() {
        let (p, _, _) = policy::load(&policy_path)?;
        if p.pool_size() != pool.len() {
            bail!("policy covers {} models but the pool has {}", p.pool_size(), pool.len());
        }
        Some(p)
    } else {
        warn!("no trained policy in {}; answering with Iter1", run_dir.display());
        None
    };
    let vocab = pool.models[0].vocab().clone();
    for (n, line) in input.lines().enumerate() {
        let line = line?;
        let source: Vec<TokenId> = vocab.encode(line.trim());
        let index = match &selector {
            Some(p) if !source.is_empty() => policy::select_model(p, &source),
            _ => 0,
        };
        let mut rng = seed::derived_rng(seed_value, "respond", n as u64);
        let response = pool.models[index].respond(&source, strategy, &mut rng);
        writeln!(out, "{}\t{}", index + 1, vocab.decode(&response))?;
    }
    Ok(())
}

fn write_iteration_report(run_dir: &Path, rows: &[IterationReport]) -> anyhow::Result<()> {
    let dir = run_dir.join(REPORT_DIR);
    let mut tsv = String::from("iteration\ttrain_size\tppl\toracle_ppl\tdiv1\tdiv2\n");
    for r in rows {
        tsv.push_str(&format!("{}\t{}\t{:.6}\t{:.6}\t{:.6}\t{:.6}\n", r.iteration, r.train_size, r.dev_ppl, r.oracle_ppl, r.div1, r.div2));
    }
    fs::write(dir.join("iterations.tsv"), tsv)?;
    write_json(&dir.join("iterations.json"), &rows)
}

/// Rebuilds the report files from the run directory and prints them.
pub fn report<W: Write>(run_dir: &Path, mut out: W) -> anyhow::Result<()> {
    let pool = load_pool(run_dir)?;
    let corpora = Corpora::load(run_dir)?;
    let dir = run_dir.join(REPORT_DIR);
    fs::create_dir_all(&dir)?;
    let rows = pool.iteration_report(corpora.eval())?;
    write_iteration_report(run_dir, &rows)?;
    writeln!(out, "# distillation rounds\n{}", specdistill::metrics::format_iteration_table(&rows))?;

    let ev_dir = run_dir.join(EVALUATOR_DIR);
    if ev_dir.join(DONE).exists() {
        let m: EvaluatorMetrics = read_json(&ev_dir.join("metrics.json"))?;
        let mut tsv = String::from("strategy\tadversuc\tmachine_vs_random\n");
        writeln!(out, "# decoding strategies (human-vs-machine held-out accuracy {:.3})", m.human_vs_machine.heldout_accuracy)?;
        writeln!(out, "{:<18} {:>9} {:>18}", "strategy", "AdverSuc", "machine-vs-random")?;
        for r in &m.adversarial {
            tsv.push_str(&format!("{}\t{:.6}\t{:.6}\n", r.strategy, r.adversuc, r.machine_vs_random));
            writeln!(out, "{:<18} {:>9.3} {:>18.3}", r.strategy, r.adversuc, r.machine_vs_random)?;
        }
        fs::write(dir.join("adversarial.tsv"), tsv)?;
        writeln!(out)?;
    } else {
        writeln!(out, "# decoding strategies: no trained evaluator\n")?;
    }

    let pol_dir = run_dir.join(POLICY_DIR);
    if pol_dir.join(DONE).exists() {
        let m: PolicyMetrics = read_json(&pol_dir.join("metrics.json"))?;
        let mut tsv = String::from("model\tshare\n");
        writeln!(out, "# model selection (mean training reward {:.3})", m.training.mean_reward)?;
        for (i, share) in m.selection.iter().enumerate() {
            tsv.push_str(&format!("{}\t{:.6}\n", i + 1, share));
            writeln!(out, "Iter{:<3} {:>6.1}%", i + 1, 100.0 * share)?;
        }
        fs::write(dir.join("selection.tsv"), tsv)?;
    } else {
        writeln!(out, "# model selection: no trained policy")?;
    }
    Ok(())
}
