use serde::{Deserialize, Serialize};

use super::{MorseError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KernelKind {
    /// `exp(−λ²/2 · d²)`
    Rbf,
    /// `(1 + λ²/(2κ) · d²)^(−κ)`
    RationalQuadratic,
}

impl KernelKind {
    pub(crate) fn tag(self) -> u8 {
        match self {
            KernelKind::Rbf => 0,
            KernelKind::RationalQuadratic => 1,
        }
    }

    pub(crate) fn from_tag(tag: u8) -> Option<Self> {
        match tag {
            0 => Some(KernelKind::Rbf),
            1 => Some(KernelKind::RationalQuadratic),
            _ => None,
        }
    }
}

/// A Morse kernel: equal to 1 exactly when its arguments coincide and
/// strictly decreasing in their squared distance.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KernelSpec {
    pub kind: KernelKind,
    /// λ
    pub scale: f64,
    /// κ, only used by the rational-quadratic kernel.
    #[serde(default = "default_mixture")]
    pub mixture: f64,
}

fn default_mixture() -> f64 {
    1.0
}

impl KernelSpec {
    pub fn rbf(scale: f64) -> Self {
        Self {
            kind: KernelKind::Rbf,
            scale,
            mixture: default_mixture(),
        }
    }

    pub fn rational_quadratic(scale: f64, mixture: f64) -> Self {
        Self {
            kind: KernelKind::RationalQuadratic,
            scale,
            mixture,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.scale > 0.0) || !self.scale.is_finite() {
            return Err(MorseError::Config(format!("kernel scale must be positive, got {}", self.scale)));
        }
        if self.kind == KernelKind::RationalQuadratic && (!(self.mixture > 0.0) || !self.mixture.is_finite()) {
            return Err(MorseError::Config(format!(
                "rational-quadratic mixture must be positive, got {}",
                self.mixture
            )));
        }
        Ok(())
    }

    fn half_scale_sq(&self) -> f64 {
        0.5 * self.scale * self.scale
    }

    /// `log K` as a function of the squared distance, in closed form.
    pub fn log_value(&self, d2: f64) -> f64 {
        match self.kind {
            KernelKind::Rbf => -self.half_scale_sq() * d2,
            KernelKind::RationalQuadratic => -self.mixture * (self.half_scale_sq() / self.mixture * d2).ln_1p(),
        }
    }

    /// `K` as a function of the squared distance.
    pub fn value(&self, d2: f64) -> f64 {
        if d2 == 0.0 {
            return 1.0;
        }
        self.log_value(d2).exp()
    }

    /// `∂ log K / ∂ d²`.
    pub fn dlog_dd2(&self, d2: f64) -> f64 {
        let h = self.half_scale_sq();
        match self.kind {
            KernelKind::Rbf => -h,
            KernelKind::RationalQuadratic => -h / (1.0 + h / self.mixture * d2),
        }
    }

    /// `∂K / ∂ d²`.
    pub fn dvalue_dd2(&self, d2: f64) -> f64 {
        self.value(d2) * self.dlog_dd2(d2)
    }

    /// `K(z1, z2)`.
    pub fn eval(&self, z1: &[f64], z2: &[f64]) -> Result<f64> {
        self.validate()?;
        if z1.len() != z2.len() {
            return Err(MorseError::Dimension {
                context: "kernel arguments",
                expected: z1.len(),
                got: z2.len(),
            });
        }
        Ok(self.value(squared_distance(z1, z2)))
    }
}

pub fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}
