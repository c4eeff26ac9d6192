//! `cgpo`: run the confidence-guided preference pipeline stage by stage.

mod config;
mod error;
mod stage;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use cgpo_core::confidence::{calibrate, collect_confidences, CalibrationReport};
use cgpo_core::corpus::{build_corpus, read_problems, ProblemInstance, Tokenizer};
use cgpo_core::eval::{
    avg_tokens_per_pair, evaluate_accuracy, positional_stats, render_scaling_table, render_threshold_table,
    scaling_sweep, threshold_sweep, write_csv, SweepSetup,
};
use cgpo_core::model::{load_checkpoint, pretrain, sample, save_checkpoint, Checkpoint, SamplingConfig};
use cgpo_core::pairs::{build_dataset, read_pairs, write_dataset, PreferenceTriplet};
use cgpo_core::reward::McReward;
use cgpo_core::{jsonl, rng, trainer};
use clap::{Args, Parser, Subcommand};
use serde_json::json;

use config::{parse_override, RunConfig};
use error::CliError;
use stage::{io_err, Stage};

#[derive(Parser)]
#[command(name = "cgpo", version, about = "Confidence-guided step-wise preference optimization")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// Flat JSON configuration file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override any configuration field, e.g. `--set d_model=64`.
    #[arg(long = "set", value_parser = parse_override)]
    overrides: Vec<(String, serde_json::Value)>,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Subcommand)]
enum Command {
    /// Write train.jsonl and eval.jsonl.
    GenCorpus {
        #[command(flatten)]
        common: Common,
    },
    /// Supervised pretraining of the initial policy.
    Pretrain {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        corpus: PathBuf,
    },
    /// Sample once per prompt and derive the split and stop thresholds.
    Calibrate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        prompts: PathBuf,
        #[arg(long)]
        q_split: Option<f64>,
        #[arg(long)]
        q_stop: Option<f64>,
    },
    /// Build preference triplets.
    BuildPairs {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        prompts: PathBuf,
        #[arg(long)]
        calibration: PathBuf,
        #[arg(long)]
        k: Option<usize>,
        #[arg(long)]
        m: Option<usize>,
        #[arg(long)]
        workers: Option<usize>,
    },
    /// Preference training against the frozen initial policy.
    Train {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        pairs: PathBuf,
        #[arg(long)]
        beta: Option<f64>,
        #[arg(long)]
        lr: Option<f64>,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        batch: Option<usize>,
    },
    /// Greedy accuracy on an evaluation set.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        eval_set: PathBuf,
    },
    /// Analysis reports.
    Analyze {
        #[command(subcommand)]
        analysis: Analysis,
    },
    /// Pretty-print one triplet.
    Inspect {
        #[arg(long)]
        pairs: PathBuf,
        #[arg(long, default_value_t = 0)]
        index: usize,
    },
}

#[derive(Subcommand)]
enum Analysis {
    /// Position of the first error relative to the lowest-confidence token.
    Positional {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        prompts: PathBuf,
    },
    /// Average segment tokens per pair.
    Tokens {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        pairs: PathBuf,
    },
    /// Rebuild (and optionally retrain) per stop quantile.
    SweepThreshold {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        prompts: PathBuf,
        #[arg(long)]
        eval_set: Option<PathBuf>,
        #[arg(long, value_delimiter = ',', default_values_t = [0.02, 0.04, 0.06, 0.08])]
        q_stop: Vec<f64>,
        /// Build datasets only.
        #[arg(long)]
        no_train: bool,
    },
    /// Build, train and evaluate per samples-per-prompt value.
    SweepScale {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        prompts: PathBuf,
        #[arg(long)]
        eval_set: Option<PathBuf>,
        #[arg(long, value_delimiter = ',', default_values_t = [1, 2, 4, 8])]
        m: Vec<usize>,
        /// Triplets on which to measure the trained margin.
        #[arg(long)]
        held_out_pairs: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", e.json_line());
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn load_config(common: &Common, flags: Vec<(&str, Option<serde_json::Value>)>) -> Result<RunConfig, CliError> {
    let mut overrides = common.overrides.clone();
    overrides.extend(flags.into_iter().filter_map(|(k, v)| v.map(|v| (k.to_string(), v))));
    RunConfig::load(common.config.as_deref(), &overrides)
}

fn opt<T: serde::Serialize>(v: Option<T>) -> Option<serde_json::Value> {
    v.map(|x| json!(x))
}

fn load_model(path: &Path) -> Result<Checkpoint, CliError> {
    Ok(load_checkpoint(path, &Tokenizer::new())?)
}

fn load_prompts(path: &Path, max: usize) -> Result<Vec<ProblemInstance>, CliError> {
    let mut problems = read_problems(path)?;
    if problems.is_empty() {
        return Err(CliError::Io(format!("{}: no problems", path.display())));
    }
    if max > 0 {
        problems.truncate(max);
    }
    Ok(problems)
}

fn write_text(path: &Path, text: &str) -> Result<(), CliError> {
    std::fs::write(path, text).map_err(|e| io_err(path, e))
}

fn cache_hit(stage: &Stage) -> bool {
    let hit = stage.cached();
    if hit {
        println!("{}: cache hit ({}), outputs in {}", stage.name, stage.cache_key, stage.dir.display());
    }
    hit
}

fn run(command: Command) -> Result<(), CliError> {
    match command {
        Command::GenCorpus { common } => {
            let cfg = load_config(&common, vec![])?;
            let corpus = cfg.corpus()?;
            let stage = Stage::begin("gen-corpus", &common.out, &cfg, corpus.seed, &json!(corpus), &[])?;
            if cache_hit(&stage) {
                return Ok(());
            }
            let files = build_corpus(&corpus, &common.out)?;
            stage.finish(&["train.jsonl", "eval.jsonl"])?;
            println!("wrote {} and {}", files.train.display(), files.eval.display());
        }
        Command::Pretrain { common, corpus } => {
            let cfg = load_config(&common, vec![])?;
            let train_path = corpus.join("train.jsonl");
            let key = json!({"model": cfg.model(), "pretrain": cfg.pretrain(), "validation": cfg.pretrain_validation});
            let stage = Stage::begin("pretrain", &common.out, &cfg, cfg.pretrain_seed, &key, &[&train_path])?;
            if cache_hit(&stage) {
                return Ok(());
            }
            let mut problems = load_prompts(&train_path, 0)?;
            let n_val = cfg.pretrain_validation.min(problems.len() / 2);
            let validation = problems.split_off(problems.len() - n_val);
            let mut steps = Vec::new();
            let (ckpt, report) = pretrain::<f32>(&problems, &validation, &cfg.model(), &cfg.pretrain(), |s| {
                if let Some(acc) = s.validation_accuracy {
                    println!("step {:>6}  loss {:.4}  validation accuracy {:.4}", s.step, s.loss, acc);
                }
                steps.push(s.clone());
            })?;
            save_checkpoint(&ckpt, &stage.path("policy.ckpt"))?;
            jsonl::write(&stage.path("pretrain_metrics.jsonl"), &steps)?;
            jsonl::write_json(&stage.path("pretrain_report.json"), &report)?;
            stage.finish(&["policy.ckpt", "pretrain_metrics.jsonl", "pretrain_report.json"])?;
            println!("model {} after {} steps", ckpt.model_id(), report.steps);
        }
        Command::Calibrate {
            common,
            model,
            prompts,
            q_split,
            q_stop,
        } => {
            let cfg = load_config(&common, vec![("q_split", opt(q_split)), ("q_stop", opt(q_stop))])?;
            let key = json!({"sampling": cfg.sampling(), "q": [cfg.q_split, cfg.q_stop], "max_prompts": cfg.max_prompts});
            let stage = Stage::begin("calibrate", &common.out, &cfg, cfg.sampling_seed, &key, &[&model, &prompts])?;
            if cache_hit(&stage) {
                return Ok(());
            }
            let ckpt = load_model(&model)?;
            let policy = ckpt.policy::<f32>()?;
            let problems = load_prompts(&prompts, cfg.max_prompts)?;
            let tok = Tokenizer::new();
            let xs = problems
                .iter()
                .map(|p| tok.prompt_tokens(&p.expression))
                .collect::<Result<Vec<_>, _>>()?;
            let confidences = collect_confidences(&policy, &xs, &cfg.sampling())?;
            let t = calibrate(&confidences, cfg.q_split, cfg.q_stop)?;
            let report = CalibrationReport {
                q_split: t.q_split,
                q_stop: t.q_stop,
                tau_split: t.tau_split,
                tau_stop: t.tau_stop,
                calibration_size: t.calibration_size,
                model_id: ckpt.model_id(),
            };
            jsonl::write_json(&stage.path("calibration.json"), &report)?;
            stage.finish(&["calibration.json"])?;
            println!(
                "tau_split {:.6}  tau_stop {:.6}  from {} confidences",
                report.tau_split, report.tau_stop, report.calibration_size
            );
        }
        Command::BuildPairs {
            common,
            model,
            prompts,
            calibration,
            k,
            m,
            workers,
        } => {
            let cfg = load_config(&common, vec![("k", opt(k)), ("m", opt(m)), ("workers", opt(workers))])?;
            let report: CalibrationReport = jsonl::read_json(&calibration)?;
            let pairs_cfg = cfg.pairs(report.thresholds());
            // worker count does not change the output, so it stays out of the key
            let keyed = cgpo_core::PairBuilderConfig {
                workers: 0,
                ..pairs_cfg.clone()
            };
            let key = json!({"pairs": keyed, "reward": cfg.reward(), "max_prompts": cfg.max_prompts});
            let stage = Stage::begin(
                "build-pairs",
                &common.out,
                &cfg,
                cfg.sampling_seed,
                &key,
                &[&model, &prompts, &calibration],
            )?;
            if cache_hit(&stage) {
                return Ok(());
            }
            let ckpt = load_model(&model)?;
            if ckpt.model_id() != report.model_id {
                return Err(CliError::Config(format!(
                    "calibration was computed for model {}, not {}",
                    report.model_id,
                    ckpt.model_id()
                )));
            }
            let policy = ckpt.policy::<f32>()?;
            let problems = load_prompts(&prompts, cfg.max_prompts)?;
            let dataset = build_dataset(&policy, &McReward::new(cfg.reward()), &problems, &pairs_cfg)?;
            write_dataset(&dataset, &common.out)?;
            stage.finish(&["pairs.jsonl", "build_report.json"])?;
            println!(
                "{} triplets from {} prompts x {} samples; skipped {:?}",
                dataset.report.n_built, dataset.report.n_prompts, dataset.report.samples_per_prompt, dataset.report.skip_counts
            );
        }
        Command::Train {
            common,
            model,
            pairs,
            beta,
            lr,
            epochs,
            batch,
        } => {
            let cfg = load_config(
                &common,
                vec![("beta", opt(beta)), ("lr", opt(lr)), ("epochs", opt(epochs)), ("batch_size", opt(batch))],
            )?;
            let key = json!(cfg.train());
            let stage = Stage::begin("train", &common.out, &cfg, cfg.train_seed, &key, &[&model, &pairs])?;
            if cache_hit(&stage) {
                return Ok(());
            }
            let initial = load_model(&model)?;
            let triplets = read_pairs(&pairs)?;
            let mut log = Vec::new();
            let trained = trainer::train::<f32>(&initial, &triplets, &cfg.train(), |s| log.push(s.clone()))?;
            save_checkpoint(&trained, &stage.path("policy.ckpt"))?;
            jsonl::write(&stage.path("metrics.jsonl"), &log)?;
            stage.finish(&["policy.ckpt", "metrics.jsonl"])?;
            if let Some(last) = log.last() {
                println!(
                    "{} steps; last loss {:.4}, margin accuracy {:.3}",
                    log.len(),
                    last.loss,
                    last.margin_accuracy
                );
            }
        }
        Command::Eval {
            common,
            model,
            eval_set,
        } => {
            let cfg = load_config(&common, vec![])?;
            let key = json!({"max_new_tokens": cfg.eval_max_new_tokens});
            let stage = Stage::begin("eval", &common.out, &cfg, 0, &key, &[&model, &eval_set])?;
            if cache_hit(&stage) {
                return Ok(());
            }
            let policy = load_model(&model)?.policy::<f32>()?;
            let problems = load_prompts(&eval_set, 0)?;
            let report = evaluate_accuracy(&policy, &problems, cfg.eval_max_new_tokens)?;
            jsonl::write_json(&stage.path("eval_report.json"), &report)?;
            let text = format!(
                "model {}\nproblems {}\ncorrect {}\naccuracy {:.4}\n",
                report.model_id, report.n_problems, report.n_correct, report.accuracy
            );
            write_text(&stage.path("eval_report.txt"), &text)?;
            stage.finish(&["eval_report.json", "eval_report.txt"])?;
            print!("{text}");
        }
        Command::Analyze { analysis } => analyze(analysis)?,
        Command::Inspect { pairs, index } => inspect(&pairs, index)?,
    }
    Ok(())
}

fn analyze(analysis: Analysis) -> Result<(), CliError> {
    match analysis {
        Analysis::Positional { common, model, prompts } => {
            let cfg = load_config(&common, vec![])?;
            let key = json!({"sampling": cfg.sampling(), "max_prompts": cfg.max_prompts});
            let stage = Stage::begin("analyze-positional", &common.out, &cfg, cfg.sampling_seed, &key, &[&model, &prompts])?;
            if cache_hit(&stage) {
                return Ok(());
            }
            let policy = load_model(&model)?.policy::<f32>()?;
            let problems = load_prompts(&prompts, cfg.max_prompts)?;
            let tok = Tokenizer::new();
            let samples = problems
                .iter()
                .enumerate()
                .map(|(i, p)| {
                    let sampling = SamplingConfig {
                        seed: rng::derive_seed(cfg.sampling_seed, &[i as u64]),
                        ..cfg.sampling()
                    };
                    sample(&policy, &tok.prompt_tokens(&p.expression)?, &sampling)
                })
                .collect::<Result<Vec<_>, _>>()?;
            let report = positional_stats(&samples, &problems)?;
            jsonl::write_json(&stage.path("positional.json"), &report)?;
            write_text(&stage.path("positional.txt"), &report.render())?;
            stage.finish(&["positional.json", "positional.txt"])?;
            print!("{}", report.render());
        }
        Analysis::Tokens { common, pairs } => {
            let cfg = load_config(&common, vec![])?;
            let stage = Stage::begin("analyze-tokens", &common.out, &cfg, 0, &json!({}), &[&pairs])?;
            if cache_hit(&stage) {
                return Ok(());
            }
            let triplets = read_pairs(&pairs)?;
            let avg = avg_tokens_per_pair(&triplets)?;
            let report = json!({"n_pairs": triplets.len(), "avg_tokens_per_pair": avg});
            jsonl::write_json(&stage.path("tokens.json"), &report)?;
            stage.finish(&["tokens.json"])?;
            println!("{} pairs, {avg:.3} segment tokens per pair", triplets.len());
        }
        Analysis::SweepThreshold {
            common,
            model,
            prompts,
            eval_set,
            q_stop,
            no_train,
        } => {
            let cfg = load_config(&common, vec![])?;
            let key = json!({"config": cfg, "q_stop": q_stop, "train": !no_train});
            let mut inputs: Vec<&Path> = vec![&model, &prompts];
            if let Some(e) = &eval_set {
                inputs.push(e);
            }
            let stage = Stage::begin("sweep-threshold", &common.out, &cfg, cfg.sampling_seed, &key, &inputs)?;
            if cache_hit(&stage) {
                return Ok(());
            }
            let ctx = SweepInputs::load(&cfg, &model, &prompts, eval_set.as_deref())?;
            let setup = ctx.setup(&cfg, (!no_train).then(|| cfg.train()), None);
            let rows = threshold_sweep(&setup, &q_stop)?;
            write_csv(&stage.path("sweep_threshold.csv"), &rows)?;
            jsonl::write_json(&stage.path("sweep_threshold.json"), &rows)?;
            let table = render_threshold_table(&rows);
            write_text(&stage.path("sweep_threshold.txt"), &table)?;
            stage.finish(&["sweep_threshold.csv", "sweep_threshold.json", "sweep_threshold.txt"])?;
            print!("{table}");
        }
        Analysis::SweepScale {
            common,
            model,
            prompts,
            eval_set,
            m,
            held_out_pairs,
        } => {
            let cfg = load_config(&common, vec![])?;
            let key = json!({"config": cfg, "m": m});
            let mut inputs: Vec<&Path> = vec![&model, &prompts];
            if let Some(e) = &eval_set {
                inputs.push(e);
            }
            if let Some(h) = &held_out_pairs {
                inputs.push(h);
            }
            let stage = Stage::begin("sweep-scale", &common.out, &cfg, cfg.sampling_seed, &key, &inputs)?;
            if cache_hit(&stage) {
                return Ok(());
            }
            let held_out = held_out_pairs.as_deref().map(read_pairs).transpose()?;
            let ctx = SweepInputs::load(&cfg, &model, &prompts, eval_set.as_deref())?;
            let setup = ctx.setup(&cfg, Some(cfg.train()), held_out.as_deref());
            let rows = scaling_sweep(&setup, &m)?;
            write_csv(&stage.path("sweep_scale.csv"), &rows)?;
            jsonl::write_json(&stage.path("sweep_scale.json"), &rows)?;
            let table = render_scaling_table(&rows);
            write_text(&stage.path("sweep_scale.txt"), &table)?;
            stage.finish(&["sweep_scale.csv", "sweep_scale.json", "sweep_scale.txt"])?;
            print!("{table}");
        }
    }
    Ok(())
}

struct SweepInputs {
    initial: Checkpoint,
    reward: McReward,
    prompts: Vec<ProblemInstance>,
    eval: Vec<ProblemInstance>,
    confidences: Vec<f64>,
}

impl SweepInputs {
    fn load(cfg: &RunConfig, model: &Path, prompts: &Path, eval_set: Option<&Path>) -> Result<Self, CliError> {
        let initial = load_model(model)?;
        let prompts = load_prompts(prompts, cfg.max_prompts)?;
        let eval = eval_set.map(|p| load_prompts(p, 0)).transpose()?.unwrap_or_default();
        let tok = Tokenizer::new();
        let xs = prompts
            .iter()
            .map(|p| tok.prompt_tokens(&p.expression))
            .collect::<Result<Vec<_>, _>>()?;
        let confidences = collect_confidences(&initial.policy::<f32>()?, &xs, &cfg.sampling())?;
        Ok(Self {
            initial,
            reward: McReward::new(cfg.reward()),
            prompts,
            eval,
            confidences,
        })
    }

    fn setup<'a>(
        &'a self,
        cfg: &RunConfig,
        train: Option<trainer::TrainConfig>,
        held_out: Option<&'a [PreferenceTriplet]>,
    ) -> SweepSetup<'a, McReward> {
        let thresholds = calibrate(&self.confidences, cfg.q_split, cfg.q_stop).expect("nonempty confidences");
        SweepSetup {
            initial: &self.initial,
            reward: &self.reward,
            prompts: &self.prompts,
            calibration: &self.confidences,
            q_split: cfg.q_split,
            pairs: cfg.pairs(thresholds),
            train,
            eval_problems: &self.eval,
            eval_max_new_tokens: cfg.eval_max_new_tokens,
            held_out,
        }
    }
}

fn inspect(pairs: &Path, index: usize) -> Result<(), CliError> {
    let triplets = read_pairs(pairs)?;
    if triplets.is_empty() {
        return Err(CliError::Io(format!("{}: dataset is empty", pairs.display())));
    }
    let t = triplets.get(index).ok_or_else(|| {
        CliError::Config(format!("index {index} out of range (dataset has {} triplets)", triplets.len()))
    })?;
    let tok = Tokenizer::new();
    let show = |tokens: &[u32]| format!("{:?}", tok.decode_display(tokens));
    println!("triplet {index} of {}", triplets.len());
    println!("prompt        {}", t.prompt);
    println!("s_init        {}", show(&t.s_init_tokens));
    println!("branch index  {}", t.branch_index);
    println!("chosen        {}  score {:.3}  stop {}", show(&t.chosen_tokens), t.chosen_score, t.stop_chosen.as_str());
    println!(
        "rejected      {}  score {:.3}  stop {}",
        show(&t.rejected_tokens),
        t.rejected_score,
        t.stop_rejected.as_str()
    );
    println!("tau split/stop {:.6} / {:.6}", t.tau_split, t.tau_stop);
    println!("model {}  seed {}", t.model_id, t.seed);
    Ok(())
}
