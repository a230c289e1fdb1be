//! Interpolation schedules between source and target latents.
//!
//! A schedule maps progress `m` in `[0, 1]` to a mix weight `w(m)` in `[0, 1]`.
//! The interpolated state is `(1 - w) * z_src + w * z_dst`. Three shapes are
//! provided:
//!
//! * linear: `w = m`
//! * exponential: `w = (e^{k(m-1)} - e^{-k}) / (1 - e^{-k} + eps)`
//! * cosine: `w = (1 - cos(pi m)) / 2`
//!
//! The exponential bounds `e^{-k}` and `1` are the extremes of `e^{k(m-1)}`
//! over `[0, 1]`, so the weight is normalized to `[0, 1)`.
//!
//! All schedule math is `f64`; latents are widened before weights apply.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::LatentTensor;

pub const DEFAULT_EXPO_EPS: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScheduleKind {
    Linear,
    #[serde(rename = "expo")]
    Exponential,
    Cosine,
}

impl fmt::Display for ScheduleKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ScheduleKind::Linear => "linear",
            ScheduleKind::Exponential => "expo",
            ScheduleKind::Cosine => "cosine",
        })
    }
}

impl FromStr for ScheduleKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "linear" => Ok(ScheduleKind::Linear),
            "expo" | "exponential" => Ok(ScheduleKind::Exponential),
            "cosine" => Ok(ScheduleKind::Cosine),
            other => Err(Error::Config(format!(
                "unknown schedule `{other}`, expected linear, expo or cosine"
            ))),
        }
    }
}

/// A validated interpolation schedule.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ScheduleRepr", into = "ScheduleRepr")]
pub struct Schedule {
    kind: ScheduleKind,
    k: Option<f64>,
    eps: f64,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ScheduleRepr {
    kind: ScheduleKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    k: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    eps: Option<f64>,
}

impl TryFrom<ScheduleRepr> for Schedule {
    type Error = Error;

    fn try_from(r: ScheduleRepr) -> Result<Self> {
        let s = Schedule::new(r.kind, r.k)?;
        match r.eps {
            Some(eps) => s.with_eps(eps),
            None => Ok(s),
        }
    }
}

impl From<Schedule> for ScheduleRepr {
    fn from(s: Schedule) -> Self {
        ScheduleRepr {
            kind: s.kind,
            k: s.k,
            eps: (s.kind == ScheduleKind::Exponential).then_some(s.eps),
        }
    }
}

impl Default for Schedule {
    fn default() -> Self {
        Schedule::cosine()
    }
}

impl fmt::Display for Schedule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.k {
            Some(k) => write!(f, "{} k={}", self.kind, k),
            None => write!(f, "{}", self.kind),
        }
    }
}

impl Schedule {
    /// `k` is required for the exponential kind and rejected for the others.
    pub fn new(kind: ScheduleKind, k: Option<f64>) -> Result<Self> {
        match (kind, k) {
            (ScheduleKind::Exponential, Some(k)) => Self::exponential(k),
            (ScheduleKind::Exponential, None) => Err(Error::Config(
                "exponential schedule needs a steepness k".into(),
            )),
            (_, Some(_)) => Err(Error::Config(format!(
                "{kind} schedule takes no steepness parameter"
            ))),
            (_, None) => Ok(Self {
                kind,
                k: None,
                eps: 0.0,
            }),
        }
    }

    pub fn linear() -> Self {
        Self {
            kind: ScheduleKind::Linear,
            k: None,
            eps: 0.0,
        }
    }

    pub fn cosine() -> Self {
        Self {
            kind: ScheduleKind::Cosine,
            k: None,
            eps: 0.0,
        }
    }

    pub fn exponential(k: f64) -> Result<Self> {
        if !(k.is_finite() && k > 0.0) {
            return Err(Error::Domain(format!(
                "exponential steepness must be positive, got {k}"
            )));
        }
        Ok(Self {
            kind: ScheduleKind::Exponential,
            k: Some(k),
            eps: DEFAULT_EXPO_EPS,
        })
    }

    /// Overrides the exponential denominator guard.
    pub fn with_eps(mut self, eps: f64) -> Result<Self> {
        if self.kind != ScheduleKind::Exponential {
            return Err(Error::Config(format!("{} schedule has no eps", self.kind)));
        }
        if !(eps.is_finite() && eps > 0.0) {
            return Err(Error::Domain(format!("eps must be positive, got {eps}")));
        }
        self.eps = eps;
        Ok(self)
    }

    pub fn kind(&self) -> ScheduleKind {
        self.kind
    }

    pub fn k(&self) -> Option<f64> {
        self.k
    }

    pub fn eps(&self) -> f64 {
        self.eps
    }

    /// Mix weight at progress `m`.
    pub fn mix_weight(&self, m: f64) -> Result<f64> {
        if !(0.0..=1.0).contains(&m) {
            return Err(Error::Domain(format!("progress {m} outside [0, 1]")));
        }
        Ok(self.weight_unchecked(m))
    }

    pub(crate) fn weight_unchecked(&self, m: f64) -> f64 {
        match self.kind {
            ScheduleKind::Linear => m,
            ScheduleKind::Cosine => 0.5 * (1.0 - (PI * m).cos()),
            ScheduleKind::Exponential => {
                let k = self.k.expect("exponential schedule carries k");
                let lo = (-k).exp();
                ((k * (m - 1.0)).exp() - lo) / (1.0 - lo + self.eps)
            }
        }
    }

    /// Largest distance of `w(1)` from 1 caused by the denominator guard.
    pub fn endpoint_slack(&self) -> f64 {
        1.0 - self.weight_unchecked(1.0)
    }

    /// `(1 - w) * z1 + w * z2` elementwise.
    pub fn interpolate(&self, z1: &LatentTensor, z2: &LatentTensor, m: f64) -> Result<LatentTensor> {
        z1.check_compatible(z2)?;
        let w = self.mix_weight(m)?;
        let mut out = vec![0.0f32; z1.len()];
        blend_into(w, z1.data(), z2.data(), &mut out);
        z1.with_data(out)
    }
}

/// Free-function form of [`Schedule::mix_weight`].
pub fn mix_weight(schedule: &Schedule, m: f64) -> Result<f64> {
    schedule.mix_weight(m)
}

/// Free-function form of [`Schedule::interpolate`].
pub fn interpolate(
    schedule: &Schedule,
    z1: &LatentTensor,
    z2: &LatentTensor,
    m: f64,
) -> Result<LatentTensor> {
    schedule.interpolate(z1, z2, m)
}

pub(crate) fn blend_into(w: f64, z1: &[f32], z2: &[f32], out: &mut [f32]) {
    let keep = 1.0 - w;
    for ((o, &a), &b) in out.iter_mut().zip(z1).zip(z2) {
        *o = (keep * f64::from(a) + w * f64::from(b)) as f32;
    }
}

/// Progress values visited by the Euler sampler, with their step sizes.
#[derive(Debug, Clone, PartialEq)]
pub struct StepGrid {
    steps: Vec<f64>,
    deltas: Vec<f64>,
}

impl StepGrid {
    /// `s_i = (1 - cos(pi i / (T-1))) / 2` for `i = 0..T`.
    pub fn cosine(t: usize) -> Result<Self> {
        Self::for_schedule(&Schedule::cosine(), t)
    }

    /// `s_i = w(i / (T-1)) / w(1)` for any schedule.
    ///
    /// Dividing by `w(1)` removes the exponential guard slack so the grid
    /// always ends exactly at 1; the cosine and linear grids are unaffected.
    pub fn for_schedule(schedule: &Schedule, t: usize) -> Result<Self> {
        if t < 2 {
            return Err(Error::Domain(format!("grid needs at least 2 points, got {t}")));
        }
        let last = (t - 1) as f64;
        let end = schedule.weight_unchecked(1.0);
        let steps: Vec<f64> = (0..t)
            .map(|i| schedule.weight_unchecked(i as f64 / last) / end)
            .collect();
        let deltas = steps.windows(2).map(|p| p[1] - p[0]).collect();
        Ok(Self { steps, deltas })
    }

    pub fn steps(&self) -> &[f64] {
        &self.steps
    }

    pub fn deltas(&self) -> &[f64] {
        &self.deltas
    }

    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }
}

/// The cosine inference grid with `t` points.
pub fn inference_grid(t: usize) -> Result<StepGrid> {
    StepGrid::cosine(t)
}
