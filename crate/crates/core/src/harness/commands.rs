//! The work behind each CLI subcommand. Every command writes its artifacts
//! and a manifest into the output directory.

use std::fs;
use std::path::Path;

use serde::Serialize;

use super::{
    analyze_morse, emit_heatmap_with_axis, run_ablation, HarnessError, PhaseSeeds, Result, RunConfig, RunManifest,
};
use crate::agent::{
    deviation_stats, evaluate, load_agent, save_agent, train_bc, train_td3bst, AgentCheckpoint, BcWeighting,
    DeviationStats, EvalStats, Objective,
};
use crate::envdata::{
    four_mode_dataset, generate_maze_dataset, save_dataset, Env, EnvSpec, Environment, ReplayDataset, StateNormalizer,
};
use crate::morse::{density_grid, grid_axis, save_morse, train_morse, MorseModel};

pub const DATASET_FILE: &str = "dataset.bstd";
pub const MORSE_FILE: &str = "morse.bstm";
pub const AGENT_FILE: &str = "agent.bsta";
const CERTAINTY_SAMPLES: usize = 10;
const DENSITY_RESOLUTION: usize = 101;
const DEVIATION_BINS: usize = 20;

/// Cloning baselines selectable in place of the actor-critic learner.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Baseline {
    Bc,
    WeightedBc,
}

fn prepare(out: &Path) -> Result<()> {
    fs::create_dir_all(out).map_err(|e| HarnessError::io(out, e))
}

fn read_input(path: &Path, what: &str) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| HarnessError::Config(format!("cannot read {what} {}: {e}", path.display())))
}

/// Input artifacts named by the config, read up front so their bytes enter
/// the manifest hash.
struct Inputs {
    dataset: Option<Vec<u8>>,
    morse: Option<Vec<u8>>,
    agent: Option<Vec<u8>>,
}

impl Inputs {
    fn read(cfg: &RunConfig, dataset: bool, morse: bool, agent: bool) -> Result<Self> {
        let get = |want: bool, p: &Option<std::path::PathBuf>, what: &str| match (want, p) {
            (true, Some(p)) => read_input(p, what).map(Some),
            _ => Ok(None),
        };
        Ok(Self {
            dataset: get(dataset, &cfg.inputs.dataset, "dataset")?,
            morse: get(morse, &cfg.inputs.morse, "Morse model")?,
            agent: get(agent, &cfg.inputs.agent, "agent checkpoint")?,
        })
    }

    fn slices(&self) -> Vec<&[u8]> {
        [&self.dataset, &self.morse, &self.agent].into_iter().flatten().map(|b| b.as_slice()).collect()
    }
}

fn generate_dataset(cfg: &RunConfig, env: &Env, seed: u64) -> Result<ReplayDataset> {
    match (&cfg.env, env.as_maze()) {
        (EnvSpec::PointMaze(_), Some(maze)) => Ok(generate_maze_dataset(maze, &cfg.dataset.maze, seed)?.0),
        _ => Ok(four_mode_dataset(cfg.dataset.bandit_points, seed)?),
    }
}

fn obtain_dataset(
    cfg: &RunConfig,
    env: &Env,
    inputs: &Inputs,
    seeds: &PhaseSeeds,
    manifest: &mut RunManifest,
) -> Result<ReplayDataset> {
    let d = match &inputs.dataset {
        Some(bytes) => crate::envdata::read_dataset(bytes)?,
        None => manifest.time("generate", || generate_dataset(cfg, env, seeds.data))?,
    };
    if d.state_dim() != env.state_dim() || d.action_dim() != env.action_dim() {
        return Err(HarnessError::Config(format!(
            "dataset dims ({}, {}) do not match the environment",
            d.state_dim(),
            d.action_dim()
        )));
    }
    manifest.state_normalizer = Some(StateNormalizer::from_dataset(&d));
    Ok(d)
}

fn obtain_morse(
    cfg: &RunConfig,
    dataset: &ReplayDataset,
    inputs: &Inputs,
    seeds: &PhaseSeeds,
    manifest: &mut RunManifest,
) -> Result<MorseModel> {
    match &inputs.morse {
        Some(bytes) => Ok(crate::morse::read_morse(&mut bytes.as_slice())?),
        None => manifest.time("train-morse", || Ok(train_morse(dataset, &cfg.morse, seeds.morse)?.0)),
    }
}

fn write_rows<T: Serialize>(path: &Path, rows: impl IntoIterator<Item = T>) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| HarnessError::io(path, e))
}

#[derive(Serialize)]
struct LossRow {
    step: usize,
    loss: f64,
}

#[derive(Serialize)]
struct EvalRow {
    step: usize,
    episodes: usize,
    mean_return: f64,
    success_rate: f64,
}

impl EvalRow {
    fn new(step: usize, e: &EvalStats) -> Self {
        Self {
            step,
            episodes: e.episodes,
            mean_return: e.mean_return,
            success_rate: e.success_rate,
        }
    }
}

#[derive(Serialize)]
struct DeviationRow {
    bin_lo: f64,
    bin_hi: f64,
    count: usize,
}

fn write_deviation(path: &Path, d: &DeviationStats) -> Result<()> {
    write_rows(
        path,
        d.counts.iter().enumerate().map(|(i, &count)| DeviationRow {
            bin_lo: i as f64 * d.bin_width,
            bin_hi: (i + 1) as f64 * d.bin_width,
            count,
        }),
    )
}

/// Certainty grid over the action square at the first dataset state.
fn write_density(model: &MorseModel, dataset: &ReplayDataset, out: &Path, manifest: &mut RunManifest) -> Result<()> {
    if model.action_dim() != 2 || dataset.is_empty() {
        return Ok(());
    }
    let grid = density_grid(model, dataset.state(0), DENSITY_RESOLUTION)?;
    let axis = grid_axis(DENSITY_RESOLUTION);
    emit_heatmap_with_axis(grid.view(), Some(&axis), &out.join("density.pgm"))?;
    manifest.output("density.pgm");
    manifest.output("density.csv");
    Ok(())
}

pub fn run_gen_data(cfg: &RunConfig, seed: u64, out: &Path) -> Result<RunManifest> {
    prepare(out)?;
    let mut manifest = RunManifest::new("gen-data", cfg, seed, &[]);
    let seeds = manifest.seeds;
    let env = cfg.env.build()?;
    let d = match (&cfg.env, env.as_maze()) {
        (EnvSpec::PointMaze(_), Some(maze)) => {
            let (d, report) = manifest.time("generate", || Ok(generate_maze_dataset(maze, &cfg.dataset.maze, seeds.data)?))?;
            if report.end_to_end_fraction > 0.05 {
                manifest.warnings.push(format!(
                    "end-to-end success fraction {} exceeds 0.05",
                    report.end_to_end_fraction
                ));
            }
            let path = out.join("generation.json");
            fs::write(&path, serde_json::to_string_pretty(&report).expect("report serializes"))
                .map_err(|e| HarnessError::io(&path, e))?;
            manifest.output("generation.json");
            d
        }
        _ => manifest.time("generate", || Ok(four_mode_dataset(cfg.dataset.bandit_points, seeds.data)?))?,
    };
    save_dataset(&d, &out.join(DATASET_FILE))?;
    manifest.output(DATASET_FILE);
    manifest.state_normalizer = Some(StateNormalizer::from_dataset(&d));
    manifest.write(out)?;
    Ok(manifest)
}

pub fn run_train_morse(cfg: &RunConfig, seed: u64, out: &Path) -> Result<RunManifest> {
    prepare(out)?;
    let inputs = Inputs::read(cfg, true, false, false)?;
    let mut manifest = RunManifest::new("train-morse", cfg, seed, &inputs.slices());
    let seeds = manifest.seeds;
    let env = cfg.env.build()?;
    let d = obtain_dataset(cfg, &env, &inputs, &seeds, &mut manifest)?;
    let (model, history) = manifest.time("train-morse", || Ok(train_morse(&d, &cfg.morse, seeds.morse)?))?;
    save_morse(&model, &out.join(MORSE_FILE))?;
    manifest.output(MORSE_FILE);
    write_rows(
        &out.join("morse_loss.csv"),
        history.losses.iter().enumerate().map(|(i, &loss)| LossRow { step: i + 1, loss }),
    )?;
    manifest.output("morse_loss.csv");
    let analysis = analyze_morse(&model, &d, CERTAINTY_SAMPLES, seeds.eval)?;
    analysis.write_summary(&out.join("certainty_summary.csv"), CERTAINTY_SAMPLES)?;
    manifest.output("certainty_summary.csv");
    write_density(&model, &d, out, &mut manifest)?;
    manifest.write(out)?;
    Ok(manifest)
}

pub fn run_train_agent(cfg: &RunConfig, seed: u64, out: &Path, baseline: Option<Baseline>) -> Result<RunManifest> {
    prepare(out)?;
    let wants_morse = match baseline {
        Some(Baseline::WeightedBc) => true,
        Some(Baseline::Bc) => false,
        None => cfg.agent.objective == Objective::Bst,
    };
    let inputs = Inputs::read(cfg, true, wants_morse, false)?;
    let command = match baseline {
        None => "train-agent",
        Some(Baseline::Bc) => "train-agent/bc",
        Some(Baseline::WeightedBc) => "train-agent/weighted-bc",
    };
    let mut manifest = RunManifest::new(command, cfg, seed, &inputs.slices());
    let seeds = manifest.seeds;
    let env = cfg.env.build()?;
    let d = obtain_dataset(cfg, &env, &inputs, &seeds, &mut manifest)?;
    let morse = if wants_morse {
        Some(obtain_morse(cfg, &d, &inputs, &seeds, &mut manifest)?)
    } else {
        None
    };

    let (checkpoint, policy) = match baseline {
        Some(b) => {
            let weighting = match (&morse, b) {
                (Some(m), Baseline::WeightedBc) => BcWeighting::Morse(m),
                _ => BcWeighting::Uniform,
            };
            let policy = manifest.time("train-bc", || Ok(train_bc(&d, &cfg.bc, weighting, seeds.agent)?))?;
            (AgentCheckpoint::policy_only(policy.clone()), policy)
        }
        None => {
            let outcome =
                manifest.time("train-agent", || Ok(train_td3bst(&d, Some(&env), morse.as_ref(), &cfg.agent, seeds.agent)?))?;
            write_rows(&out.join("metrics.csv"), &outcome.metrics)?;
            manifest.output("metrics.csv");
            write_rows(
                &out.join("evaluations.csv"),
                outcome.evaluations.iter().map(|(step, e)| EvalRow::new(*step, e)),
            )?;
            manifest.output("evaluations.csv");
            if outcome.violations() > 0 {
                manifest.warnings.push(format!("{} coefficient bound violations", outcome.violations()));
            }
            manifest.warnings.extend(outcome.warnings.iter().cloned());
            if let Err(e) = outcome.audit.verify(cfg.agent.policy_delay) {
                manifest.warnings.push(format!("update schedule audit failed: {e}"));
            }
            (outcome.checkpoint(), outcome.policy)
        }
    };
    save_agent(&checkpoint, &out.join(AGENT_FILE))?;
    manifest.output(AGENT_FILE);

    if cfg.agent.final_eval_episodes > 0 {
        let stats = manifest.time("evaluate", || {
            Ok(evaluate(&mut policy.clone(), &env, cfg.agent.final_eval_episodes, seeds.eval)?)
        })?;
        write_rows(&out.join("final_eval.csv"), [EvalRow::new(cfg.agent.steps, &stats)])?;
        manifest.output("final_eval.csv");
    }
    write_deviation(&out.join("deviation.csv"), &deviation_stats(&policy, &d, DEVIATION_BINS)?)?;
    manifest.output("deviation.csv");
    manifest.write(out)?;
    Ok(manifest)
}

pub fn run_evaluate(cfg: &RunConfig, seed: u64, out: &Path) -> Result<RunManifest> {
    let Some(path) = &cfg.inputs.agent else {
        return Err(HarnessError::Config("evaluate needs inputs.agent".into()));
    };
    prepare(out)?;
    let inputs = Inputs::read(cfg, true, false, true)?;
    let mut manifest = RunManifest::new("evaluate", cfg, seed, &inputs.slices());
    let seeds = manifest.seeds;
    let env = cfg.env.build()?;
    let ckpt = load_agent(path)?;
    if ckpt.policy.state_dim() != env.state_dim() || ckpt.policy.action_dim() != env.action_dim() {
        return Err(HarnessError::Config("agent checkpoint does not match the environment".into()));
    }
    let episodes = cfg.agent.final_eval_episodes.max(1);
    let stats = manifest.time("evaluate", || Ok(evaluate(&mut ckpt.policy.clone(), &env, episodes, seeds.eval)?))?;
    write_rows(&out.join("eval.csv"), [EvalRow::new(0, &stats)])?;
    manifest.output("eval.csv");
    let d = obtain_dataset(cfg, &env, &inputs, &seeds, &mut manifest)?;
    write_deviation(&out.join("deviation.csv"), &deviation_stats(&ckpt.policy, &d, DEVIATION_BINS)?)?;
    manifest.output("deviation.csv");
    manifest.write(out)?;
    Ok(manifest)
}

pub fn run_analyze_morse(cfg: &RunConfig, seed: u64, out: &Path) -> Result<RunManifest> {
    prepare(out)?;
    let inputs = Inputs::read(cfg, true, true, false)?;
    let mut manifest = RunManifest::new("analyze-morse", cfg, seed, &inputs.slices());
    let seeds = manifest.seeds;
    let env = cfg.env.build()?;
    let d = obtain_dataset(cfg, &env, &inputs, &seeds, &mut manifest)?;
    let model = obtain_morse(cfg, &d, &inputs, &seeds, &mut manifest)?;
    let analysis = manifest.time("analyze", || analyze_morse(&model, &d, CERTAINTY_SAMPLES, seeds.eval))?;
    analysis.write_samples(&out.join("certainty.csv"))?;
    analysis.write_summary(&out.join("certainty_summary.csv"), CERTAINTY_SAMPLES)?;
    manifest.output("certainty.csv");
    manifest.output("certainty_summary.csv");
    write_density(&model, &d, out, &mut manifest)?;
    manifest.write(out)?;
    Ok(manifest)
}

pub fn run_ablate(cfg: &RunConfig, seed: u64, out: &Path) -> Result<RunManifest> {
    let Some(spec) = &cfg.ablation else {
        return Err(HarnessError::Config("ablate needs an ablation section".into()));
    };
    spec.validate()?;
    prepare(out)?;
    let inputs = Inputs::read(cfg, true, false, false)?;
    let mut manifest = RunManifest::new("ablate", cfg, seed, &inputs.slices());
    let seeds = manifest.seeds;
    let env = cfg.env.build()?;
    let d = obtain_dataset(cfg, &env, &inputs, &seeds, &mut manifest)?;
    let result = manifest.time("sweep", || run_ablation(cfg, spec, seed, &d, &env))?;
    result.write_rows(&out.join("ablation.csv"))?;
    result.write_histograms(&out.join("deviation_histograms.csv"))?;
    manifest.output("ablation.csv");
    manifest.output("deviation_histograms.csv");
    let violations: usize = result.rows.iter().map(|r| r.violations).sum();
    if violations > 0 {
        manifest.warnings.push(format!("{violations} coefficient bound violations"));
    }
    manifest.write(out)?;
    Ok(manifest)
}
