//! Behavior data for the point maze.
//!
//! Each episode follows the shortest cell path between a random pair of open
//! cells with Gaussian action noise. Pairs that would carry a start cell
//! straight to the goal are rejected, so reaching the goal from a start
//! requires stitching pieces of different episodes together.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::maze::{toward, Cell};
use super::{derive_seed, EnvError, Environment, PointMaze, ReplayDataset, Result, Transition};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MazeDataConfig {
    pub episodes: usize,
    /// Standard deviation of the Gaussian noise added to each action component.
    pub action_noise: f64,
    /// Distance at which a waypoint counts as reached.
    pub waypoint_tolerance: f64,
    /// Step cap per episode; `0` means the environment horizon.
    pub max_steps: usize,
    /// Reject origin/destination pairs that lead from a start cell to the goal.
    pub exclude_start_to_goal: bool,
}

impl Default for MazeDataConfig {
    fn default() -> Self {
        Self {
            episodes: 500,
            action_noise: 0.3,
            waypoint_tolerance: 0.2,
            max_steps: 0,
            exclude_start_to_goal: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationReport {
    pub episodes: usize,
    pub transitions: usize,
    /// Episodes that collected the goal reward at any point.
    pub goal_episodes: usize,
    /// Episodes that began in a start cell and reached the goal.
    pub end_to_end_successes: usize,
    pub end_to_end_fraction: f64,
}

/// Result of following one waypoint list.
#[derive(Debug, Clone)]
pub struct Rollout {
    pub transitions: Vec<Transition>,
    pub reached_goal: bool,
}

/// Follows cell-center waypoints from `start` with the given action noise,
/// stopping at the last waypoint, the goal, or `max_steps`.
pub fn rollout_waypoints<R: Rng + ?Sized>(
    maze: &PointMaze,
    start: [f64; 2],
    waypoints: &[[f64; 2]],
    noise: f64,
    tolerance: f64,
    max_steps: usize,
    rng: &mut R,
) -> Result<Rollout> {
    let gauss = if noise > 0.0 {
        Some(Normal::new(0.0, noise).map_err(|e| EnvError::Config(e.to_string()))?)
    } else {
        None
    };
    let mut s = start.to_vec();
    let mut next = Vec::with_capacity(2);
    let mut idx = 0;
    let mut transitions = Vec::new();
    let mut reached_goal = false;
    while transitions.len() < max_steps && idx < waypoints.len() {
        let wp = waypoints[idx];
        let dist = ((s[0] - wp[0]).powi(2) + (s[1] - wp[1]).powi(2)).sqrt();
        if dist <= tolerance {
            idx += 1;
            continue;
        }
        let mut a = toward(&s, wp, maze.step_scale);
        if let Some(g) = &gauss {
            for v in &mut a {
                *v = (*v + g.sample(rng)).clamp(-1.0, 1.0);
            }
        }
        let out = maze.step(&s, &a, &mut next)?;
        transitions.push(Transition {
            state: s.clone(),
            action: a.to_vec(),
            reward: out.reward,
            next_state: next.clone(),
            done: out.done,
        });
        if out.done {
            reached_goal = true;
            break;
        }
        std::mem::swap(&mut s, &mut next);
    }
    Ok(Rollout {
        transitions,
        reached_goal,
    })
}

pub fn generate_maze_dataset(maze: &PointMaze, cfg: &MazeDataConfig, seed: u64) -> Result<(ReplayDataset, GenerationReport)> {
    if cfg.episodes < 1 {
        return Err(EnvError::Argument("need at least one episode".into()));
    }
    let layout = &maze.layout;
    if !layout.is_connected() {
        return Err(EnvError::Config("maze has open cells that cannot reach the goal".into()));
    }
    let cells = layout.open_cells();
    if cells.len() < 2 {
        return Err(EnvError::Config("maze needs at least two open cells".into()));
    }
    let max_steps = if cfg.max_steps == 0 { maze.horizon() } else { cfg.max_steps };
    let goal = layout.goal();

    let mut data = ReplayDataset::new(2, 2);
    let mut report = GenerationReport {
        episodes: cfg.episodes,
        transitions: 0,
        goal_episodes: 0,
        end_to_end_successes: 0,
        end_to_end_fraction: 0.0,
    };
    for ep in 0..cfg.episodes {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, ep as u64));
        let (origin, dest) = loop {
            let o = cells[rng.random_range(0..cells.len())];
            let d = cells[rng.random_range(0..cells.len())];
            if o == d {
                continue;
            }
            let from_start = layout.cell(o.0, o.1) == Cell::Start;
            if cfg.exclude_start_to_goal && from_start {
                // the whole path must avoid the goal cell
                let path = layout.shortest_path(o, d).expect("connected");
                if path.contains(&goal) {
                    continue;
                }
            }
            break (o, d);
        };
        let path = layout.shortest_path(origin, dest).expect("connected");
        let waypoints: Vec<[f64; 2]> = path[1..].iter().map(|&c| layout.center(c)).collect();
        let c = layout.center(origin);
        let j = maze.start_jitter;
        let start = if j > 0.0 {
            [c[0] + rng.random_range(-j..=j), c[1] + rng.random_range(-j..=j)]
        } else {
            c
        };
        let rollout = rollout_waypoints(
            maze,
            start,
            &waypoints,
            cfg.action_noise,
            cfg.waypoint_tolerance,
            max_steps,
            &mut rng,
        )?;
        if rollout.transitions.is_empty() {
            continue;
        }
        data.begin_episode();
        for t in &rollout.transitions {
            data.push(t)?;
        }
        if rollout.reached_goal {
            report.goal_episodes += 1;
            if layout.cell(origin.0, origin.1) == Cell::Start {
                report.end_to_end_successes += 1;
            }
        }
    }
    report.transitions = data.len();
    report.end_to_end_fraction = report.end_to_end_successes as f64 / cfg.episodes as f64;
    data.source = Some(serde_json::json!({
        "generator": "maze_waypoints",
        "config": cfg,
        "seed": seed,
        "report": &report,
    }));
    Ok((data, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::envdata::MazeLayout;

    fn maze(name: &str) -> PointMaze {
        PointMaze::new(MazeLayout::builtin(name).unwrap(), 0.15, 0.3, 300).unwrap()
    }

    #[test]
    fn noiseless_start_to_goal_reaches_goal() {
        let m = maze("large");
        let l = &m.layout;
        let path = l.shortest_path(l.starts()[0], l.goal()).unwrap();
        let wps: Vec<[f64; 2]> = path[1..].iter().map(|&c| l.center(c)).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let r = rollout_waypoints(&m, l.center(l.starts()[0]), &wps, 0.0, 0.2, 1000, &mut rng).unwrap();
        assert!(r.reached_goal);
    }

    #[test]
    fn default_dataset_requires_stitching() {
        let m = maze("umaze");
        let (d, report) = generate_maze_dataset(&m, &MazeDataConfig::default(), 3).unwrap();
        assert!(report.end_to_end_fraction <= 0.05, "{report:?}");
        assert!(report.goal_episodes > 0);
        assert_eq!(d.len(), report.transitions);
        for r in d.rewards() {
            assert!(*r == 0.0 || *r == 1.0);
        }
        for i in 0..d.len() {
            assert!(d.action(i).iter().all(|a| (-1.0..=1.0).contains(a)));
        }
    }

    #[test]
    fn generation_is_deterministic() {
        let m = maze("medium");
        let cfg = MazeDataConfig {
            episodes: 40,
            ..Default::default()
        };
        let a = generate_maze_dataset(&m, &cfg, 17).unwrap().0;
        let b = generate_maze_dataset(&m, &cfg, 17).unwrap().0;
        assert_eq!(a, b);
    }

    #[test]
    fn zero_episodes_rejected() {
        let m = maze("umaze");
        let cfg = MazeDataConfig {
            episodes: 0,
            ..Default::default()
        };
        assert!(generate_maze_dataset(&m, &cfg, 0).is_err());
    }

    #[test]
    fn disconnected_maze_is_config_error() {
        let layout = MazeLayout::parse("#####\n#S#G#\n#####").unwrap();
        let m = PointMaze::new(layout, 0.15, 0.3, 50).unwrap();
        assert!(matches!(
            generate_maze_dataset(&m, &MazeDataConfig::default(), 0),
            Err(EnvError::Config(_))
        ));
    }
}
