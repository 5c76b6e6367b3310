use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{thread_cap, HarnessError, PhaseSeeds, Result, RunConfig};
use crate::agent::{deviation_stats, train_td3bst, DeviationStats, Objective, TargetMode};
use crate::envdata::{derive_seed, Env, ReplayDataset};
use crate::morse::{density_grid, grid_fraction_above, train_morse, MorseModel};

/// Histogram bins for deviation statistics.
const DEVIATION_BINS: usize = 20;
/// Resolution of the action grid used for the area-above-one-half measure.
const GRID_RESOLUTION: usize = 101;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CdqArm {
    pub critics: usize,
    pub mode: TargetMode,
}

impl CdqArm {
    pub const BASELINE: CdqArm = CdqArm {
        critics: 2,
        mode: TargetMode::ClippedDouble,
    };

    fn label(&self) -> String {
        let mode = match self.mode {
            TargetMode::ClippedDouble => "cdq",
            TargetMode::Independent => "independent",
        };
        format!("{}/{mode}", self.critics)
    }
}

fn default_cdq_arms() -> Vec<CdqArm> {
    vec![
        CdqArm::BASELINE,
        CdqArm {
            critics: 2,
            mode: TargetMode::Independent,
        },
        CdqArm {
            critics: 10,
            mode: TargetMode::Independent,
        },
    ]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "variable", rename_all = "snake_case", deny_unknown_fields)]
pub enum Sweep {
    /// Kernel scale; the default set is `{1, k/2, k}`.
    Lambda {
        #[serde(default)]
        values: Option<Vec<f64>>,
    },
    /// μ
    Temperature { values: Vec<f64> },
    /// Ensemble size under the base config's target mode.
    Critics { values: Vec<usize> },
    /// Ensemble size and target mode together, compared against two
    /// clipped-double critics.
    Cdq {
        #[serde(default = "default_cdq_arms")]
        arms: Vec<CdqArm>,
    },
}

fn default_seeds() -> usize {
    3
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AblationSpec {
    pub sweep: Sweep,
    #[serde(default = "default_seeds")]
    pub seeds: usize,
}

impl AblationSpec {
    pub fn validate(&self) -> Result<()> {
        if self.seeds == 0 {
            return Err(HarnessError::Config("ablation needs at least one seed".into()));
        }
        let empty = match &self.sweep {
            Sweep::Lambda { values } => values.as_ref().is_some_and(|v| v.is_empty()),
            Sweep::Temperature { values } => values.is_empty(),
            Sweep::Critics { values } => values.is_empty(),
            Sweep::Cdq { arms } => arms.is_empty(),
        };
        if empty {
            return Err(HarnessError::Argument("ablation sweep has no values".into()));
        }
        match &self.sweep {
            Sweep::Lambda { values: Some(v) } if v.iter().any(|x| !(*x > 0.0)) => {
                Err(HarnessError::Config("lambda values must be positive".into()))
            }
            Sweep::Temperature { values } if values.iter().any(|x| !(*x > 0.0)) => {
                Err(HarnessError::Config("temperature values must be positive".into()))
            }
            Sweep::Critics { values } if values.contains(&0) => {
                Err(HarnessError::Config("critic counts must be positive".into()))
            }
            Sweep::Cdq { arms } if !arms.contains(&CdqArm::BASELINE) => Err(HarnessError::Config(
                "cdq sweep is missing its baseline arm (2 critics, clipped double)".into(),
            )),
            Sweep::Cdq { arms } if arms.iter().any(|a| a.critics == 0) => {
                Err(HarnessError::Config("critic counts must be positive".into()))
            }
            _ => Ok(()),
        }
    }
}

/// One trained agent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArmResult {
    /// Position of the arm in the sweep; labels need not be unique.
    pub arm_index: usize,
    pub label: String,
    pub seed_index: usize,
    /// Final-evaluation mean return.
    pub score: f64,
    pub success_rate: f64,
    pub deviation: DeviationStats,
    /// Share of the action grid at the first dataset state with certainty
    /// above one half (2-D actions only).
    pub grid_fraction: Option<f64>,
    pub violations: usize,
}

/// Seed-aggregated results for one arm.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub variable: String,
    pub value: String,
    pub seeds: usize,
    pub score_mean: f64,
    pub score_std: f64,
    pub success_mean: f64,
    pub deviation_mean: f64,
    pub deviation_std: f64,
    pub grid_fraction_mean: Option<f64>,
    /// Percent change of the mean score against the baseline arm.
    pub pct_change: Option<f64>,
    pub violations: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub rows: Vec<SweepRow>,
    pub arms: Vec<ArmResult>,
}

#[derive(Serialize)]
struct HistogramRow<'a> {
    value: &'a str,
    bin_lo: f64,
    bin_hi: f64,
    count: usize,
}

impl SweepResult {
    pub fn row(&self, value: &str) -> Option<&SweepRow> {
        self.rows.iter().find(|r| r.value == value)
    }

    pub fn write_rows(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        for r in &self.rows {
            w.serialize(r)?;
        }
        w.flush().map_err(|e| HarnessError::io(path, e))
    }

    /// Deviation histograms summed over seeds, one block per arm.
    pub fn write_histograms(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        for (index, row) in self.rows.iter().enumerate() {
            let arms: Vec<_> = self.arms.iter().filter(|a| a.arm_index == index).collect();
            let Some(first) = arms.first() else { continue };
            let width = first.deviation.bin_width;
            for (i, _) in first.deviation.counts.iter().enumerate() {
                w.serialize(HistogramRow {
                    value: &row.value,
                    bin_lo: i as f64 * width,
                    bin_hi: (i + 1) as f64 * width,
                    count: arms.iter().map(|a| a.deviation.counts[i]).sum(),
                })?;
            }
        }
        w.flush().map_err(|e| HarnessError::io(path, e))
    }
}

fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

fn pool() -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(thread_cap())
        .build()
        .map_err(|e| HarnessError::Argument(e.to_string()))
}

fn seeds_for(master: u64, index: usize) -> PhaseSeeds {
    PhaseSeeds::split(derive_seed(master, 1000 + index as u64))
}

fn train_arm(
    arm_index: usize,
    label: &str,
    cfg: &RunConfig,
    morse: Option<&MorseModel>,
    seed_index: usize,
    seeds: PhaseSeeds,
    dataset: &ReplayDataset,
    env: &Env,
) -> Result<ArmResult> {
    let out = train_td3bst(dataset, Some(env), morse, &cfg.agent, seeds.agent)?;
    let eval = out
        .final_eval
        .clone()
        .ok_or_else(|| HarnessError::Config("ablation arms need final_eval_episodes > 0".into()))?;
    let grid_fraction = match morse {
        Some(m) if m.action_dim() == 2 => {
            let grid = density_grid(m, dataset.state(0), GRID_RESOLUTION)?;
            Some(grid_fraction_above(&grid, 0.5))
        }
        _ => None,
    };
    Ok(ArmResult {
        arm_index,
        label: label.to_string(),
        seed_index,
        score: eval.mean_return,
        success_rate: eval.success_rate,
        deviation: deviation_stats(&out.policy, dataset, DEVIATION_BINS)?,
        grid_fraction,
        violations: out.violations(),
    })
}

fn needs_morse(cfg: &RunConfig) -> bool {
    cfg.agent.objective == Objective::Bst
}

/// Runs every arm under every seed. With `per_arm_morse` each arm trains
/// its own Morse model; otherwise one model per seed is shared.
fn run_sweep(
    variable: &str,
    arms: Vec<(String, RunConfig)>,
    per_arm_morse: bool,
    baseline: Option<&str>,
    seeds: usize,
    master: u64,
    dataset: &ReplayDataset,
    env: &Env,
) -> Result<SweepResult> {
    if arms.is_empty() {
        return Err(HarnessError::Argument("empty sweep".into()));
    }
    if seeds == 0 {
        return Err(HarnessError::Argument("need at least one seed".into()));
    }
    let pool = pool()?;
    let shared: Vec<Option<MorseModel>> = if per_arm_morse || !needs_morse(&arms[0].1) {
        vec![None; seeds]
    } else {
        pool.install(|| {
            (0..seeds)
                .into_par_iter()
                .map(|s| Ok(Some(train_morse(dataset, &arms[0].1.morse, seeds_for(master, s).morse)?.0)))
                .collect::<Result<Vec<_>>>()
        })?
    };
    let jobs: Vec<(usize, usize)> = (0..arms.len()).flat_map(|a| (0..seeds).map(move |s| (a, s))).collect();
    let results = pool.install(|| {
        jobs.par_iter()
            .map(|&(a, s)| {
                let (label, cfg) = &arms[a];
                let phase = seeds_for(master, s);
                let own;
                let morse = if per_arm_morse && needs_morse(cfg) {
                    own = train_morse(dataset, &cfg.morse, phase.morse)?.0;
                    Some(&own)
                } else {
                    shared[s].as_ref()
                };
                train_arm(a, label, cfg, morse, s, phase, dataset, env)
            })
            .collect::<Result<Vec<_>>>()
    })?;

    let mut rows = Vec::with_capacity(arms.len());
    for (a, (label, _)) in arms.iter().enumerate() {
        let mine: Vec<&ArmResult> = results.iter().filter(|r| r.arm_index == a).collect();
        let scores: Vec<f64> = mine.iter().map(|r| r.score).collect();
        let devs: Vec<f64> = mine.iter().map(|r| r.deviation.mean).collect();
        let (score_mean, score_std) = mean_std(&scores);
        let (deviation_mean, deviation_std) = mean_std(&devs);
        let fractions: Vec<f64> = mine.iter().filter_map(|r| r.grid_fraction).collect();
        rows.push(SweepRow {
            variable: variable.to_string(),
            value: label.clone(),
            seeds: mine.len(),
            score_mean,
            score_std,
            success_mean: mine.iter().map(|r| r.success_rate).sum::<f64>() / mine.len() as f64,
            deviation_mean,
            deviation_std,
            grid_fraction_mean: (!fractions.is_empty()).then(|| mean_std(&fractions).0),
            pct_change: None,
            violations: mine.iter().map(|r| r.violations).sum(),
        });
    }
    if let Some(base) = baseline {
        let base_score = rows.iter().find(|r| r.value == base).map(|r| r.score_mean);
        let base_score = base_score.ok_or_else(|| HarnessError::Config(format!("baseline arm {base} missing")))?;
        for r in &mut rows {
            r.pct_change = Some(if r.score_mean == base_score {
                0.0
            } else {
                100.0 * (r.score_mean - base_score) / base_score.abs()
            });
        }
    }
    Ok(SweepResult { rows, arms: results })
}

/// Retrains the Morse model and the agent for each λ.
pub fn ablate_lambda(
    base: &RunConfig,
    values: &[f64],
    seeds: usize,
    master: u64,
    dataset: &ReplayDataset,
    env: &Env,
) -> Result<SweepResult> {
    if !needs_morse(base) {
        return Err(HarnessError::Config("a lambda sweep needs the bst objective".into()));
    }
    let arms = values
        .iter()
        .map(|&v| {
            let mut cfg = base.clone();
            cfg.morse.scale = Some(v);
            (v.to_string(), cfg)
        })
        .collect();
    run_sweep("lambda", arms, true, None, seeds, master, dataset, env)
}

pub fn ablate_temperature(
    base: &RunConfig,
    values: &[f64],
    seeds: usize,
    master: u64,
    dataset: &ReplayDataset,
    env: &Env,
) -> Result<SweepResult> {
    let arms = values
        .iter()
        .map(|&v| {
            let mut cfg = base.clone();
            cfg.agent.temperature = v;
            (v.to_string(), cfg)
        })
        .collect();
    run_sweep("temperature", arms, false, None, seeds, master, dataset, env)
}

pub fn ablate_critics(
    base: &RunConfig,
    values: &[usize],
    seeds: usize,
    master: u64,
    dataset: &ReplayDataset,
    env: &Env,
) -> Result<SweepResult> {
    let arms = values
        .iter()
        .map(|&v| {
            let mut cfg = base.clone();
            cfg.agent.critics = v;
            (v.to_string(), cfg)
        })
        .collect();
    run_sweep("critics", arms, false, None, seeds, master, dataset, env)
}

/// Score per arm and percent change against two clipped-double critics.
pub fn ablate_cdq(
    base: &RunConfig,
    arms: &[CdqArm],
    seeds: usize,
    master: u64,
    dataset: &ReplayDataset,
    env: &Env,
) -> Result<SweepResult> {
    if !arms.contains(&CdqArm::BASELINE) {
        return Err(HarnessError::Config(
            "cdq sweep is missing its baseline arm (2 critics, clipped double)".into(),
        ));
    }
    let configs = arms
        .iter()
        .map(|arm| {
            let mut cfg = base.clone();
            cfg.agent.critics = arm.critics;
            cfg.agent.target_mode = arm.mode;
            (arm.label(), cfg)
        })
        .collect();
    run_sweep("cdq", configs, false, Some(&CdqArm::BASELINE.label()), seeds, master, dataset, env)
}

/// Dispatches on the sweep variable in `spec`.
pub fn run_ablation(
    base: &RunConfig,
    spec: &AblationSpec,
    master: u64,
    dataset: &ReplayDataset,
    env: &Env,
) -> Result<SweepResult> {
    spec.validate()?;
    match &spec.sweep {
        Sweep::Lambda { values } => {
            let k = dataset.action_dim() as f64;
            let values = values.clone().unwrap_or_else(|| vec![1.0, k / 2.0, k]);
            ablate_lambda(base, &values, spec.seeds, master, dataset, env)
        }
        Sweep::Temperature { values } => ablate_temperature(base, values, spec.seeds, master, dataset, env),
        Sweep::Critics { values } => ablate_critics(base, values, spec.seeds, master, dataset, env),
        Sweep::Cdq { arms } => ablate_cdq(base, arms, spec.seeds, master, dataset, env),
    }
}
