//! Browser bindings for the four-mode bandit demo.
//!
//! Each export has a plain Rust twin so it can be exercised natively.

use bst_core::agent::{train_bc, BcConfig, BcWeighting};
use bst_core::envdata::four_mode_dataset;
use bst_core::morse::{density_grid, train_morse, KernelKind, KernelSpec, MorseConfig};
use bst_core::nn::AdamConfig;
use wasm_bindgen::prelude::*;

const DATA_POINTS: usize = 128;

fn kernel_kind(name: &str) -> Result<KernelKind, String> {
    match name {
        "rbf" => Ok(KernelKind::Rbf),
        "rq" => Ok(KernelKind::RationalQuadratic),
        other => Err(format!("unknown kernel {other:?}, expected \"rbf\" or \"rq\"")),
    }
}

fn morse_config(kind: KernelKind, lambda: f64, steps: usize) -> MorseConfig {
    MorseConfig {
        kernel: kind,
        scale: Some(lambda),
        hidden: vec![64, 64],
        steps,
        batch_size: 128,
        optimizer: AdamConfig {
            learning_rate: 1e-3,
            ..Default::default()
        },
        ..Default::default()
    }
}

/// Kernel value at `points` evenly spaced distances in `[0, max_distance]`.
pub fn kernel_profile_values(
    kernel: &str,
    lambda: f64,
    mixture: f64,
    max_distance: f64,
    points: usize,
) -> Result<Vec<f64>, String> {
    let spec = match kernel_kind(kernel)? {
        KernelKind::Rbf => KernelSpec::rbf(lambda),
        KernelKind::RationalQuadratic => KernelSpec::rational_quadratic(lambda, mixture),
    };
    spec.validate().map_err(|e| e.to_string())?;
    if points < 2 {
        return Err("need at least two points".into());
    }
    Ok((0..points)
        .map(|i| {
            let d = max_distance * i as f64 / (points - 1) as f64;
            spec.value(d * d)
        })
        .collect())
}

/// Row-major certainty grid over the action square, `resolution²` values.
pub fn morse_density_values(
    kernel: &str,
    lambda: f64,
    steps: usize,
    resolution: usize,
    seed: u64,
) -> Result<Vec<f64>, String> {
    let data = four_mode_dataset(DATA_POINTS, seed).map_err(|e| e.to_string())?;
    let cfg = morse_config(kernel_kind(kernel)?, lambda, steps);
    let (model, _) = train_morse(&data, &cfg, seed).map_err(|e| e.to_string())?;
    let grid = density_grid(&model, &[0.0, 0.0], resolution).map_err(|e| e.to_string())?;
    Ok(grid.iter().copied().collect())
}

/// Final actions of plain and Morse-weighted cloning: `[bc_x, bc_y, wbc_x, wbc_y]`.
pub fn cloning_actions(lambda: f64, steps: usize, seed: u64) -> Result<Vec<f64>, String> {
    let data = four_mode_dataset(DATA_POINTS, seed).map_err(|e| e.to_string())?;
    let (model, _) =
        train_morse(&data, &morse_config(KernelKind::Rbf, lambda, 3000), seed).map_err(|e| e.to_string())?;
    let cfg = BcConfig {
        steps,
        batch_size: 128,
        hidden: vec![64, 64],
        optimizer: AdamConfig {
            learning_rate: 1e-3,
            ..Default::default()
        },
        ..Default::default()
    };
    let mut out = Vec::with_capacity(4);
    for weighting in [BcWeighting::Uniform, BcWeighting::Morse(&model)] {
        let policy = train_bc(&data, &cfg, weighting, seed).map_err(|e| e.to_string())?;
        out.extend(policy.action(&[0.0, 0.0]).map_err(|e| e.to_string())?);
    }
    Ok(out)
}

#[wasm_bindgen]
pub fn kernel_profile(
    kernel: &str,
    lambda: f64,
    mixture: f64,
    max_distance: f64,
    points: usize,
) -> Result<Vec<f64>, JsValue> {
    kernel_profile_values(kernel, lambda, mixture, max_distance, points).map_err(|e| JsValue::from_str(&e))
}

#[wasm_bindgen]
pub fn morse_density(kernel: &str, lambda: f64, steps: usize, resolution: usize, seed: u32) -> Result<Vec<f64>, JsValue> {
    morse_density_values(kernel, lambda, steps, resolution, seed.into()).map_err(|e| JsValue::from_str(&e))
}

#[wasm_bindgen]
pub fn bc_vs_weighted(lambda: f64, steps: usize, seed: u32) -> Result<Vec<f64>, JsValue> {
    cloning_actions(lambda, steps, seed.into()).map_err(|e| JsValue::from_str(&e))
}

/// Mode centers as `[x0, y0, x1, y1, ...]`.
#[wasm_bindgen]
pub fn mode_centers() -> Vec<f64> {
    bst_core::envdata::MODE_CENTERS.iter().flatten().copied().collect()
}
