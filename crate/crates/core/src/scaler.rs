//! Percentile-based per-channel scaling.
//!
//! Each channel maps through `(v - pmin) / (pmax - pmin + eps)` where `pmin`
//! and `pmax` are percentiles of the training pixels. Nothing is clipped to the
//! unit interval; an optional raw-unit ceiling (`clip_high`) caps values before
//! the map for deployments with saturated inputs.

use std::collections::BTreeSet;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::ImageChip;

pub const DEFAULT_EPS: f64 = 1e-6;
/// Percentile bounds for radar chips.
pub const RADAR_PERCENTILES: (f64, f64) = (0.1, 99.9);
/// Percentile bounds for optical chips.
pub const OPTICAL_PERCENTILES: (f64, f64) = (1.0, 98.0);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalerParams {
    pub channels: usize,
    pub pmin: Vec<f64>,
    pub pmax: Vec<f64>,
    pub eps: f64,
    pub pmin_pct: f64,
    pub pmax_pct: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub clip_high: Option<f64>,
}

const FIELDS: [&str; 7] = [
    "channels", "pmin", "pmax", "eps", "pmin_pct", "pmax_pct", "clip_high",
];

/// Percentile `pct` of sorted `values` by linear interpolation between
/// adjacent order statistics (rank `pct / 100 * (n - 1)`).
pub fn percentile_sorted(values: &[f64], pct: f64) -> f64 {
    debug_assert!(!values.is_empty());
    let rank = pct / 100.0 * (values.len() - 1) as f64;
    let lo = rank.floor() as usize;
    let hi = rank.ceil() as usize;
    let frac = rank - lo as f64;
    values[lo] + (values[hi] - values[lo]) * frac
}

/// Fits per-channel percentile bounds over every pixel of every chip.
pub fn fit(chips: &[ImageChip], pmin_pct: f64, pmax_pct: f64) -> Result<ScalerParams> {
    let first = chips
        .first()
        .ok_or_else(|| Error::Fit("cannot fit a scaler on zero chips".into()))?;
    if !(0.0..100.0).contains(&pmin_pct) || !(pmin_pct < pmax_pct && pmax_pct <= 100.0) {
        return Err(Error::Fit(format!(
            "percentiles must satisfy 0 <= pmin < pmax <= 100, got ({pmin_pct}, {pmax_pct})"
        )));
    }
    let channels = first.channels();
    if let Some(bad) = chips.iter().find(|c| c.channels() != channels) {
        return Err(Error::Fit(format!(
            "mixed channel counts: {} and {}",
            channels,
            bad.channels()
        )));
    }

    let mut pmin = Vec::with_capacity(channels);
    let mut pmax = Vec::with_capacity(channels);
    for c in 0..channels {
        let mut values: Vec<f64> = chips
            .iter()
            .flat_map(|chip| chip.channel(c).iter().map(|&v| f64::from(v)))
            .collect();
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Fit(format!("channel {c} holds non-finite values")));
        }
        values.sort_unstable_by(f64::total_cmp);
        let lo = percentile_sorted(&values, pmin_pct);
        let hi = percentile_sorted(&values, pmax_pct);
        if hi <= lo {
            return Err(Error::DegenerateChannel {
                channel: c,
                value: lo,
            });
        }
        pmin.push(lo);
        pmax.push(hi);
    }
    Ok(ScalerParams {
        channels,
        pmin,
        pmax,
        eps: DEFAULT_EPS,
        pmin_pct,
        pmax_pct,
        clip_high: None,
    })
}

impl ScalerParams {
    fn check(&self, chip: &ImageChip) -> Result<()> {
        if chip.channels() != self.channels {
            return Err(Error::Shape(format!(
                "scaler fitted on {} channels, chip has {}",
                self.channels,
                chip.channels()
            )));
        }
        Ok(())
    }

    pub fn with_clip_high(mut self, ceiling: Option<f64>) -> Self {
        self.clip_high = ceiling;
        self
    }

    pub fn transform(&self, chip: &ImageChip) -> Result<ImageChip> {
        self.check(chip)?;
        let n = chip.plane_len();
        let mut out = Vec::with_capacity(chip.data().len());
        for c in 0..self.channels {
            let lo = self.pmin[c];
            let denom = self.pmax[c] - lo + self.eps;
            out.extend(chip.data()[c * n..(c + 1) * n].iter().map(|&v| {
                let mut v = f64::from(v);
                if let Some(ceiling) = self.clip_high {
                    v = v.min(ceiling);
                }
                ((v - lo) / denom) as f32
            }));
        }
        Ok(chip.map_data(out))
    }

    /// Algebraic inverse of [`transform`](Self::transform) (exact when
    /// `clip_high` is unset).
    pub fn inverse_transform(&self, chip: &ImageChip) -> Result<ImageChip> {
        self.check(chip)?;
        let n = chip.plane_len();
        let mut out = Vec::with_capacity(chip.data().len());
        for c in 0..self.channels {
            let lo = self.pmin[c];
            let span = self.pmax[c] - lo + self.eps;
            out.extend(
                chip.data()[c * n..(c + 1) * n]
                    .iter()
                    .map(|&s| (f64::from(s) * span + lo) as f32),
            );
        }
        Ok(chip.map_data(out))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("scaler params serialize")
    }

    /// Parses parameters, returning the names of any unrecognized fields.
    pub fn from_json(text: &str) -> Result<(Self, Vec<String>)> {
        let value: serde_json::Value =
            serde_json::from_str(text).map_err(|e| Error::Parse(format!("scaler: {e}")))?;
        let unknown: Vec<String> = match &value {
            serde_json::Value::Object(map) => {
                let known: BTreeSet<&str> = FIELDS.into_iter().collect();
                map.keys()
                    .filter(|k| !known.contains(k.as_str()))
                    .cloned()
                    .collect()
            }
            _ => return Err(Error::Parse("scaler: expected a JSON object".into())),
        };
        let params: ScalerParams =
            serde_json::from_value(value).map_err(|e| Error::Parse(format!("scaler: {e}")))?;
        params.validate()?;
        Ok((params, unknown))
    }

    fn validate(&self) -> Result<()> {
        if self.pmin.len() != self.channels || self.pmax.len() != self.channels {
            return Err(Error::Parse(format!(
                "scaler: {} channels but {} pmin / {} pmax entries",
                self.channels,
                self.pmin.len(),
                self.pmax.len()
            )));
        }
        if let Some(c) = (0..self.channels).find(|&c| self.pmax[c] <= self.pmin[c]) {
            return Err(Error::Parse(format!("scaler: channel {c} has pmax <= pmin")));
        }
        Ok(())
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_json()).map_err(|e| Error::io(path, e))
    }

    /// Loads parameters; unknown fields are logged and ignored.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let (params, unknown) = Self::from_json(&text)?;
        for field in unknown {
            log::warn!("{}: ignoring unknown scaler field `{field}`", path.display());
        }
        Ok(params)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn single(values: Vec<f32>) -> ImageChip {
        let n = values.len();
        ImageChip::new(["x"], 1, n, values).unwrap()
    }

    #[test]
    fn extrema_for_full_range() {
        let chip = single((0..100).map(|v| v as f32).collect());
        let p = fit(&[chip], 0.0, 100.0).unwrap();
        assert_eq!((p.pmin[0], p.pmax[0]), (0.0, 99.0));
    }

    #[test]
    fn interpolated_percentiles_match_brute_force() {
        // Oracle: sort, locate the fractional rank, interpolate by hand.
        let values: Vec<f32> = (0..=100).rev().map(|v| v as f32).collect();
        let p = fit(&[single(values)], 1.0, 98.0).unwrap();
        let mut sorted: Vec<f64> = (0..=100).map(f64::from).collect();
        sorted.sort_by(f64::total_cmp);
        let oracle = |pct: f64| {
            let pos = pct * 100.0 / 100.0;
            let i = pos as usize;
            sorted[i] + (pos - i as f64) * (sorted[(i + 1).min(100)] - sorted[i])
        };
        assert_eq!(p.pmin[0], oracle(1.0));
        assert_eq!(p.pmax[0], oracle(98.0));
        assert_eq!((p.pmin[0], p.pmax[0]), (1.0, 98.0));
    }

    #[test]
    fn fractional_rank_interpolates() {
        // n = 4, rank for 50% = 1.5 -> halfway between 10 and 20
        let p = fit(&[single(vec![40.0, 10.0, 20.0, 0.0])], 50.0, 100.0).unwrap();
        assert_eq!(p.pmin[0], 15.0);
    }

    #[test]
    fn radar_db_range() {
        let values: Vec<f32> = (0..=2500).map(|i| -25.0 + i as f32 * 0.01).collect();
        let p = fit(&[single(values)], RADAR_PERCENTILES.0, RADAR_PERCENTILES.1).unwrap();
        assert!((p.pmin[0] + 25.0).abs() < 0.05);
        assert!(p.pmax[0].abs() < 0.05);
    }

    #[test]
    fn fit_errors() {
        assert!(matches!(fit(&[], 1.0, 98.0), Err(Error::Fit(_))));
        assert!(matches!(
            fit(&[single(vec![3.0; 10])], 1.0, 98.0),
            Err(Error::DegenerateChannel { channel: 0, .. })
        ));
        assert!(fit(&[single(vec![1.0, 2.0])], 50.0, 10.0).is_err());
        let two = ImageChip::new(["a", "b"], 1, 2, vec![0.0, 1.0, 2.0, 3.0]).unwrap();
        assert!(fit(&[single(vec![1.0, 2.0]), two], 0.0, 100.0).is_err());
    }

    #[test]
    fn transform_examples() {
        let p = ScalerParams {
            channels: 1,
            pmin: vec![-25.0],
            pmax: vec![0.0],
            eps: DEFAULT_EPS,
            pmin_pct: 0.1,
            pmax_pct: 99.9,
            clip_high: None,
        };
        let out = p.transform(&single(vec![-25.0, 0.0, -12.5, -40.0, 10.0])).unwrap();
        let d = out.data();
        assert_eq!(d[0], 0.0);
        assert!((f64::from(d[1]) - 25.0 / (25.0 + 1e-6)).abs() < 1e-7);
        assert!((d[2] - 0.5).abs() < 1e-6);
        assert!(d[3] < 0.0 && d[4] > 1.0, "no clipping");

        let back = p.inverse_transform(&single(vec![0.0, 0.5])).unwrap();
        assert_eq!(back.data()[0], -25.0);
        assert!((back.data()[1] + 12.5).abs() < 1e-5);

        let clipped = p.clone().with_clip_high(Some(-5.0));
        let out = clipped.transform(&single(vec![10.0, -5.0])).unwrap();
        assert_eq!(out.data()[0], out.data()[1]);

        let wrong = ImageChip::new(["a", "b"], 1, 1, vec![0.0, 0.0]).unwrap();
        assert!(matches!(p.transform(&wrong), Err(Error::Shape(_))));
        assert!(matches!(p.inverse_transform(&wrong), Err(Error::Shape(_))));
    }

    #[test]
    fn json_round_trip_is_exact() {
        let p = ScalerParams {
            channels: 2,
            pmin: vec![0.1 + 0.2, -1.0 / 3.0],
            pmax: vec![std::f64::consts::PI, 7e-300],
            eps: DEFAULT_EPS,
            pmin_pct: 0.1,
            pmax_pct: 99.9,
            clip_high: Some(5000.0),
        };
        let (back, unknown) = ScalerParams::from_json(&p.to_json()).unwrap();
        assert_eq!(back, p);
        assert!(unknown.is_empty());
    }

    #[test]
    fn json_missing_and_extra_fields() {
        let err = ScalerParams::from_json(
            r#"{"channels":1,"pmin":[0],"eps":1e-6,"pmin_pct":1,"pmax_pct":98}"#,
        )
        .unwrap_err();
        assert!(matches!(err, Error::Parse(_)));
        assert!(err.to_string().contains("pmax"), "{err}");

        let (p, unknown) = ScalerParams::from_json(
            r#"{"channels":1,"pmin":[0],"pmax":[1],"eps":1e-6,"pmin_pct":1,"pmax_pct":98,"note":"x"}"#,
        )
        .unwrap();
        assert_eq!(p.pmax, vec![1.0]);
        assert_eq!(unknown, vec!["note".to_string()]);

        assert!(ScalerParams::from_json("[1,2]").is_err());
        assert!(ScalerParams::from_json("{not json").is_err());
    }

    #[test]
    fn save_load() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("s.json");
        let p = fit(&[single(vec![1.0, 5.0, 3.0])], 0.0, 100.0).unwrap();
        p.save(&path).unwrap();
        assert_eq!(ScalerParams::load(&path).unwrap(), p);
    }
}
