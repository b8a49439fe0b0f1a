use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::Result;

/// Scores of one generated clip or the mean over several.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub psnr: Option<f64>,
    pub ssim: Option<f64>,
    pub mask_iou: Option<f64>,
    pub box_iou: Option<f64>,
    pub flicker: Option<f64>,
    /// Mean absolute pixel error inside the ground-truth mask.
    #[serde(default)]
    pub mae_inside: Option<f64>,
    #[serde(default)]
    pub mae_outside: Option<f64>,
}

impl Metrics {
    /// The report columns in order.
    pub fn columns(&self) -> [Option<f64>; 5] {
        [self.psnr, self.ssim, self.mask_iou, self.box_iou, self.flicker]
    }

    pub fn has_nan(&self) -> bool {
        self.columns().iter().chain([self.mae_inside, self.mae_outside].iter()).flatten().any(|v| v.is_nan())
    }

    /// Field-wise mean; a field is missing in the result if it is missing
    /// in any input.
    pub fn mean(items: &[Metrics]) -> Metrics {
        let avg = |f: fn(&Metrics) -> Option<f64>| -> Option<f64> {
            if items.is_empty() {
                return None;
            }
            let vals: Option<Vec<f64>> = items.iter().map(f).collect();
            vals.map(|v| v.iter().sum::<f64>() / v.len() as f64)
        };
        Metrics {
            psnr: avg(|m| m.psnr),
            ssim: avg(|m| m.ssim),
            mask_iou: avg(|m| m.mask_iou),
            box_iou: avg(|m| m.box_iou),
            flicker: avg(|m| m.flicker),
            mae_inside: avg(|m| m.mae_inside),
            mae_outside: avg(|m| m.mae_outside),
        }
    }
}

pub const COLUMNS: [&str; 7] = ["config", "seed", "PSNR", "SSIM", "M_IoU", "B_IoU", "flicker"];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub config: String,
    pub seed: u64,
    pub metrics: Metrics,
}

/// Mean and sample standard deviation of one column over seeds.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Stat {
    pub mean: f64,
    pub std: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub config: String,
    pub seeds: usize,
    pub psnr: Option<Stat>,
    pub ssim: Option<Stat>,
    pub mask_iou: Option<Stat>,
    pub box_iou: Option<Stat>,
    pub flicker: Option<Stat>,
}

fn stat(vals: &[Option<f64>]) -> Option<Stat> {
    let v: Vec<f64> = vals.iter().copied().collect::<Option<_>>()?;
    if v.is_empty() {
        return None;
    }
    let mean = v.iter().sum::<f64>() / v.len() as f64;
    let std = if v.len() > 1 {
        (v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (v.len() - 1) as f64).sqrt()
    } else {
        0.0
    };
    Some(Stat { mean, std })
}

/// One summary row per config, in order of first appearance.
pub fn summarize(results: &[RunResult]) -> Vec<SummaryRow> {
    let mut order: Vec<&str> = Vec::new();
    let mut groups: BTreeMap<&str, Vec<&Metrics>> = BTreeMap::new();
    for r in results {
        if !groups.contains_key(r.config.as_str()) {
            order.push(&r.config);
        }
        groups.entry(&r.config).or_default().push(&r.metrics);
    }
    order
        .into_iter()
        .map(|name| {
            let ms = &groups[name];
            let col = |i: usize| stat(&ms.iter().map(|m| m.columns()[i]).collect::<Vec<_>>());
            SummaryRow {
                config: name.to_string(),
                seeds: ms.len(),
                psnr: col(0),
                ssim: col(1),
                mask_iou: col(2),
                box_iou: col(3),
                flicker: col(4),
            }
        })
        .collect()
}

fn cell(v: Option<f64>) -> String {
    v.map_or_else(|| "n/a".to_string(), |v| format!("{v:.6}"))
}

fn stat_cell(s: Option<Stat>) -> String {
    s.map_or_else(|| "n/a".to_string(), |s| format!("{:.6} ± {:.6}", s.mean, s.std))
}

/// Per-run rows followed by one `mean±std` row per config.
pub fn report_csv(results: &[RunResult]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(COLUMNS)?;
    for r in results {
        let mut rec = vec![r.config.clone(), r.seed.to_string()];
        rec.extend(r.metrics.columns().iter().map(|v| cell(*v)));
        w.write_record(&rec)?;
    }
    for s in summarize(results) {
        let mut rec = vec![s.config.clone(), "mean±std".to_string()];
        rec.extend([s.psnr, s.ssim, s.mask_iou, s.box_iou, s.flicker].iter().map(|v| stat_cell(*v)));
        w.write_record(&rec)?;
    }
    let bytes = w.into_inner().map_err(|e| crate::Error::Invalid(e.to_string()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

#[derive(Serialize)]
struct JsonReport<'a> {
    columns: [&'static str; 7],
    runs: &'a [RunResult],
    summary: Vec<SummaryRow>,
}

pub fn report_json(results: &[RunResult]) -> Result<String> {
    Ok(serde_json::to_string_pretty(&JsonReport { columns: COLUMNS, runs: results, summary: summarize(results) })?)
}
