//! MSE, R², PSNR and SSIM, plus evaluation reports.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::inference::{spectral_views, TranslationResult};
use crate::tensor::{ImageChip, LatentTensor};

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
const SSIM_K1: f64 = 0.01;
const SSIM_K2: f64 = 0.03;

fn same_len(a: &[f32], b: &[f32]) -> Result<()> {
    if a.len() != b.len() || a.is_empty() {
        return Err(Error::Shape(format!("metric inputs have {} and {} elements", a.len(), b.len())));
    }
    Ok(())
}

pub fn mse(a: &[f32], b: &[f32]) -> Result<f64> {
    same_len(a, b)?;
    Ok(a.iter().zip(b).map(|(x, y)| (*x as f64 - *y as f64).powi(2)).sum::<f64>() / a.len() as f64)
}

/// Coefficient of determination with the target mean taken over all elements.
pub fn r2(pred: &[f32], target: &[f32]) -> Result<f64> {
    same_len(pred, target)?;
    let n = target.len() as f64;
    let mean = target.iter().map(|&v| v as f64).sum::<f64>() / n;
    let ss_tot: f64 = target.iter().map(|&v| (v as f64 - mean).powi(2)).sum();
    if ss_tot <= 0.0 {
        return Err(Error::Domain("r2 is undefined for a constant target".into()));
    }
    let ss_res: f64 = pred
        .iter()
        .zip(target)
        .map(|(&p, &t)| (p as f64 - t as f64).powi(2))
        .sum();
    Ok(1.0 - ss_res / ss_tot)
}

/// `10 log10(max^2 / mse)`; `+inf` for a perfect match.
pub fn psnr_from_mse(mse: f64, max_val: f64) -> f64 {
    if mse == 0.0 {
        return f64::INFINITY;
    }
    10.0 * (max_val * max_val / mse).log10()
}

pub fn psnr(a: &[f32], b: &[f32], max_val: f64) -> Result<f64> {
    Ok(psnr_from_mse(mse(a, b)?, max_val))
}

fn gaussian_window() -> [f64; SSIM_WINDOW] {
    let mut g = [0.0; SSIM_WINDOW];
    let c = (SSIM_WINDOW / 2) as f64;
    for (i, v) in g.iter_mut().enumerate() {
        *v = (-((i as f64 - c).powi(2)) / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
    }
    let s: f64 = g.iter().sum();
    g.iter_mut().for_each(|v| *v /= s);
    g
}

/// Separable Gaussian filtering over valid window positions only.
fn filter_valid(x: &[f64], h: usize, w: usize, g: &[f64; SSIM_WINDOW]) -> Vec<f64> {
    let (ho, wo) = (h - SSIM_WINDOW + 1, w - SSIM_WINDOW + 1);
    let mut rows = vec![0.0; h * wo];
    for y in 0..h {
        for x0 in 0..wo {
            rows[y * wo + x0] = (0..SSIM_WINDOW).map(|k| g[k] * x[y * w + x0 + k]).sum();
        }
    }
    let mut out = vec![0.0; ho * wo];
    for y0 in 0..ho {
        for x0 in 0..wo {
            out[y0 * wo + x0] = (0..SSIM_WINDOW).map(|k| g[k] * rows[(y0 + k) * wo + x0]).sum();
        }
    }
    out
}

/// Mean local SSIM of two single-channel `h x w` maps with dynamic range 1.
pub fn ssim(a: &[f32], b: &[f32], h: usize, w: usize) -> Result<f64> {
    same_len(a, b)?;
    if a.len() != h * w {
        return Err(Error::Shape(format!("ssim inputs hold {} values, not {h}x{w}", a.len())));
    }
    if h < SSIM_WINDOW || w < SSIM_WINDOW {
        return Err(Error::Domain(format!(
            "ssim needs at least {SSIM_WINDOW}x{SSIM_WINDOW} pixels, got {h}x{w}"
        )));
    }
    let g = gaussian_window();
    let fa: Vec<f64> = a.iter().map(|&v| v as f64).collect();
    let fb: Vec<f64> = b.iter().map(|&v| v as f64).collect();
    let prod = |x: &[f64], y: &[f64]| -> Vec<f64> { x.iter().zip(y).map(|(p, q)| p * q).collect() };
    let mu_a = filter_valid(&fa, h, w, &g);
    let mu_b = filter_valid(&fb, h, w, &g);
    let e_aa = filter_valid(&prod(&fa, &fa), h, w, &g);
    let e_bb = filter_valid(&prod(&fb, &fb), h, w, &g);
    let e_ab = filter_valid(&prod(&fa, &fb), h, w, &g);
    let (c1, c2) = (SSIM_K1 * SSIM_K1, SSIM_K2 * SSIM_K2);
    let n = mu_a.len();
    let total: f64 = (0..n)
        .map(|i| {
            let (ma, mb) = (mu_a[i], mu_b[i]);
            let va = e_aa[i] - ma * ma;
            let vb = e_bb[i] - mb * mb;
            let cov = e_ab[i] - ma * mb;
            ((2.0 * ma * mb + c1) * (2.0 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2))
        })
        .sum();
    Ok(total / n as f64)
}

/// Mean SSIM over channels.
pub fn ssim_chip(a: &ImageChip, b: &ImageChip) -> Result<f64> {
    if a.shape() != b.shape() {
        return Err(Error::Shape(format!("ssim shapes differ: {:?} vs {:?}", a.shape(), b.shape())));
    }
    let (c, h, w) = a.shape();
    let mut total = 0.0;
    for ch in 0..c {
        total += ssim(a.channel(ch), b.channel(ch), h, w)?;
    }
    Ok(total / c as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Scores {
    pub mse: f64,
    pub r2: f64,
    pub psnr_db: f64,
    pub ssim: f64,
}

/// Metrics of one target (latent, rgb, ndvi or ndwi) over an evaluation set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TargetRecord {
    pub name: String,
    /// Mean of per-chip MSE.
    pub mse: f64,
    /// Mean of per-chip R².
    pub r2: f64,
    /// PSNR of the mean MSE, so `psnr_db = -10 log10(mse)` holds exactly.
    pub psnr_db: f64,
    /// Mean of per-chip SSIM.
    pub ssim: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub steps: usize,
    pub schedule: String,
    pub seed: u64,
    pub count: usize,
    pub records: Vec<TargetRecord>,
}

impl MetricReport {
    pub fn record(&self, name: &str) -> Option<&TargetRecord> {
        self.records.iter().find(|r| r.name == name)
    }
}

/// Ground truth for one evaluation chip.
#[derive(Debug, Clone, PartialEq)]
pub struct Truth {
    pub id: String,
    pub latent: LatentTensor,
    /// Scaled optical chip (R, G, B, NIR).
    pub optical: ImageChip,
}

fn chip_scores(pred: &ImageChip, truth: &ImageChip) -> Result<[f64; 3]> {
    Ok([
        mse(pred.data(), truth.data())?,
        r2(pred.data(), truth.data())?,
        ssim_chip(pred, truth)?,
    ])
}

pub const TARGETS: [&str; 4] = ["latent", "rgb", "ndvi", "ndwi"];

pub fn report(
    results: &[TranslationResult],
    truth: &[Truth],
    steps: usize,
    schedule: &str,
    seed: u64,
    index_eps: f64,
) -> Result<MetricReport> {
    if results.is_empty() || results.len() != truth.len() {
        return Err(Error::Pairing(format!(
            "{} results against {} ground-truth chips",
            results.len(),
            truth.len()
        )));
    }
    let mut sums = [[0.0f64; 3]; 4];
    for (res, t) in results.iter().zip(truth) {
        if res.id != t.id {
            return Err(Error::Pairing(format!("result {} is paired with truth {}", res.id, t.id)));
        }
        let tv = spectral_views(&t.optical, index_eps)?;
        let latent_pred = res.latent.to_chip();
        let latent_true = t.latent.to_chip();
        let pairs = [
            (&latent_pred, &latent_true),
            (&res.views.rgb, &tv.rgb),
            (&res.views.ndvi, &tv.ndvi),
            (&res.views.ndwi, &tv.ndwi),
        ];
        for (k, (p, q)) in pairs.iter().enumerate() {
            let s = chip_scores(p, q).map_err(|e| e.with_chip(res.id.clone()))?;
            sums[k].iter_mut().zip(s).for_each(|(a, b)| *a += b);
        }
    }
    let n = results.len() as f64;
    let records = TARGETS
        .iter()
        .zip(sums)
        .map(|(name, s)| {
            let mse = s[0] / n;
            TargetRecord {
                name: name.to_string(),
                mse,
                r2: s[1] / n,
                psnr_db: psnr_from_mse(mse, 1.0),
                ssim: s[2] / n,
            }
        })
        .collect();
    Ok(MetricReport {
        steps,
        schedule: schedule.to_string(),
        seed,
        count: results.len(),
        records,
    })
}

pub const TABLE_HEADER: &str = "Method,Steps,MSE_latent,R2_latent,RGB_SSIM,RGB_PSNR,NDVI_SSIM,NDWI_SSIM";

/// One row per report, columns as in [`TABLE_HEADER`].
pub fn table_csv(rows: &[(String, MetricReport)]) -> Result<String> {
    let mut out = format!("{TABLE_HEADER}\n");
    for (method, r) in rows {
        let get = |name: &str| {
            r.record(name)
                .ok_or_else(|| Error::Pairing(format!("report for {method} lacks target {name}")))
        };
        let (lat, rgb, ndvi, ndwi) = (get("latent")?, get("rgb")?, get("ndvi")?, get("ndwi")?);
        out.push_str(&format!(
            "{method},{},{:.6},{:.6},{:.6},{:.4},{:.6},{:.6}\n",
            r.steps, lat.mse, lat.r2, rgb.ssim, rgb.psnr_db, ndvi.ssim, ndwi.ssim
        ));
    }
    Ok(out)
}

/// `target,mse,r2,psnr_db,ssim` for a single report.
pub fn report_csv(r: &MetricReport) -> String {
    let mut out = String::from("target,mse,r2,psnr_db,ssim\n");
    for rec in &r.records {
        out.push_str(&format!("{},{},{},{},{}\n", rec.name, rec.mse, rec.r2, rec.psnr_db, rec.ssim));
    }
    out
}
