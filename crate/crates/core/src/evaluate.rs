//! Ensemble evaluation of a trained surrogate on fresh fields.
//!
//! Each field gets the surrogate's extraction rate and a full simulation with
//! that rate. Failed simulations are kept as rows with status `failed` and
//! excluded from the statistics.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::physics::PhysicsModel;
use crate::seeds::{derive_seed, Stream};
use crate::surrogate::Surrogate;
use crate::training::FieldSampler;

/// Default success band around the target, Pa.
pub const DEFAULT_THRESHOLD: f64 = 1e4;

#[derive(Debug, Clone, PartialEq)]
pub struct EvalRow {
    pub seed: u64,
    /// m³/s
    pub extraction_rate: f64,
    /// Pa; NaN when the simulation failed.
    pub critical_pressure: f64,
    pub error: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalSummary {
    pub n_samples: usize,
    pub n_failed: usize,
    pub mean_rate: f64,
    pub median_rate: f64,
    /// Linear interpolation between order statistics.
    pub p90_rate: f64,
    /// Mean rate over the injection rate.
    pub mean_rate_fraction: f64,
    /// RMS of `p − target`, Pa.
    pub pressure_rmse: f64,
    /// Share of successful samples with `|p − target| <= threshold`.
    pub fraction_within: f64,
    pub threshold: f64,
    pub target: f64,
    pub injection_rate: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub rows: Vec<EvalRow>,
    pub summary: EvalSummary,
}

/// Settings for [`evaluate_ensemble`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalSettings {
    pub n_samples: usize,
    pub run_seed: u64,
    pub threshold: f64,
    pub target: f64,
}

fn quantile(sorted: &[f64], q: f64) -> f64 {
    if sorted.is_empty() {
        return f64::NAN;
    }
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

/// Statistics over the successful rows.
pub fn summarize(rows: &[EvalRow], threshold: f64, target: f64, injection_rate: f64) -> EvalSummary {
    let ok: Vec<&EvalRow> = rows.iter().filter(|r| r.error.is_none()).collect();
    let n = ok.len() as f64;
    let mut rates: Vec<f64> = ok.iter().map(|r| r.extraction_rate).collect();
    let mean_rate = rates.iter().sum::<f64>() / n;
    rates.sort_by(f64::total_cmp);
    let sq: f64 = ok.iter().map(|r| (r.critical_pressure - target).powi(2)).sum();
    let within = ok.iter().filter(|r| (r.critical_pressure - target).abs() <= threshold).count();
    EvalSummary {
        n_samples: rows.len(),
        n_failed: rows.len() - ok.len(),
        mean_rate,
        median_rate: quantile(&rates, 0.5),
        p90_rate: quantile(&rates, 0.9),
        mean_rate_fraction: mean_rate / injection_rate,
        pressure_rmse: (sq / n).sqrt(),
        fraction_within: within as f64 / n,
        threshold,
        target,
        injection_rate,
    }
}

/// Surrogate rate and simulated critical pressure on `n_samples` fields
/// drawn from the evaluation seed stream.
pub fn evaluate_ensemble(
    surrogate: &Surrogate,
    sampler: &FieldSampler,
    model: &PhysicsModel,
    settings: &EvalSettings,
) -> Result<EvalReport> {
    if settings.n_samples == 0 {
        return Err(Error::InvalidInput("n_samples must be at least 1".into()));
    }
    let rows: Vec<EvalRow> = (0..settings.n_samples as u64)
        .into_par_iter()
        .map(|i| {
            let seed = derive_seed(Stream::Evaluation, settings.run_seed, i);
            let run = || -> Result<(f64, f64)> {
                let sample = sampler.draw(seed)?;
                let rate = surrogate.predict_normalized(&sample.input)?.rate;
                Ok((rate, model.critical_pressure(&sample.perm, rate)?))
            };
            match run() {
                Ok((rate, p)) => EvalRow { seed, extraction_rate: rate, critical_pressure: p, error: None },
                Err(e) => EvalRow { seed, extraction_rate: f64::NAN, critical_pressure: f64::NAN, error: Some(e.to_string()) },
            }
        })
        .collect();
    let summary = summarize(&rows, settings.threshold, settings.target, model.wells.injection_rate);
    Ok(EvalReport { rows, summary })
}

/// Columns: seed, extraction_rate_m3s, rate_fraction (of injection),
/// critical_pressure_pa, status (`ok` or the error text with commas
/// replaced).
pub fn samples_csv(report: &EvalReport) -> String {
    let mut out = String::from("seed,extraction_rate_m3s,rate_fraction,critical_pressure_pa,status\n");
    let q = report.summary.injection_rate;
    for r in &report.rows {
        let status = r.error.as_deref().map_or("ok".to_string(), |e| e.replace([',', '\n'], ";"));
        let _ = writeln!(out, "{},{},{},{},{}", r.seed, r.extraction_rate, r.extraction_rate / q, r.critical_pressure, status);
    }
    out
}

pub fn summary_csv(s: &EvalSummary) -> String {
    let mut out = String::from("key,value\n");
    let items: [(&str, String); 12] = [
        ("n_samples", s.n_samples.to_string()),
        ("n_failed", s.n_failed.to_string()),
        ("mean_rate_m3s", s.mean_rate.to_string()),
        ("median_rate_m3s", s.median_rate.to_string()),
        ("p90_rate_m3s", s.p90_rate.to_string()),
        ("mean_rate_fraction", s.mean_rate_fraction.to_string()),
        ("pressure_rmse_pa", s.pressure_rmse.to_string()),
        ("fraction_within", s.fraction_within.to_string()),
        ("threshold_pa", s.threshold.to_string()),
        ("target_pa", s.target.to_string()),
        ("injection_rate_m3s", s.injection_rate.to_string()),
        ("status", if s.n_failed == 0 { "complete".into() } else { "partial".into() }),
    ];
    for (k, v) in items {
        let _ = writeln!(out, "{k},{v}");
    }
    out
}

/// Minimal SVG bar chart of a histogram.
pub fn histogram_svg(values: &[f64], bins: usize, title: &str, x_label: &str) -> String {
    let (w, h, pad) = (640.0, 400.0, 50.0);
    let finite: Vec<f64> = values.iter().copied().filter(|v| v.is_finite()).collect();
    let bins = bins.max(1);
    let (lo, hi) = finite.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(*v), b.max(*v)));
    let (lo, hi) = if finite.is_empty() {
        (0.0, 1.0)
    } else if hi > lo {
        (lo, hi)
    } else {
        (lo - 0.5, hi + 0.5)
    };
    let mut counts = vec![0usize; bins];
    for v in &finite {
        let b = (((v - lo) / (hi - lo)) * bins as f64).floor() as usize;
        counts[b.min(bins - 1)] += 1;
    }
    let top = counts.iter().copied().max().unwrap_or(0).max(1) as f64;
    let bw = (w - 2.0 * pad) / bins as f64;
    let mut s = String::new();
    let _ = writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}">"#);
    let _ = writeln!(s, r#"<rect width="{w}" height="{h}" fill="white"/>"#);
    let _ = writeln!(s, r#"<text x="{}" y="24" font-family="sans-serif" font-size="16" text-anchor="middle">{}</text>"#, w / 2.0, escape(title));
    for (i, c) in counts.iter().enumerate() {
        let bh = (h - 2.0 * pad) * *c as f64 / top;
        let _ = writeln!(
            s,
            r##"<rect x="{:.2}" y="{:.2}" width="{:.2}" height="{:.2}" fill="#4a7ab5" stroke="white"/>"##,
            pad + i as f64 * bw,
            h - pad - bh,
            bw,
            bh
        );
    }
    let _ = writeln!(s, r#"<line x1="{pad}" y1="{0}" x2="{1}" y2="{0}" stroke="black"/>"#, h - pad, w - pad);
    let _ = writeln!(s, r#"<text x="{pad}" y="{}" font-family="sans-serif" font-size="12">{}</text>"#, h - pad + 16.0, fmt_tick(lo));
    let _ = writeln!(
        s,
        r#"<text x="{}" y="{}" font-family="sans-serif" font-size="12" text-anchor="end">{}</text>"#,
        w - pad,
        h - pad + 16.0,
        fmt_tick(hi)
    );
    let _ = writeln!(
        s,
        r#"<text x="{}" y="{}" font-family="sans-serif" font-size="13" text-anchor="middle">{}</text>"#,
        w / 2.0,
        h - 12.0,
        escape(x_label)
    );
    let _ = writeln!(s, r#"<text x="12" y="{pad}" font-family="sans-serif" font-size="12">max {}</text>"#, top as usize);
    s.push_str("</svg>\n");
    s
}

fn fmt_tick(v: f64) -> String {
    format!("{v:.4e}")
}

fn escape(t: &str) -> String {
    t.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Writes `eval_samples.csv`, `eval_summary.csv`, `rate_hist.svg` and
/// `pressure_hist.svg` into `dir`, creating it if needed.
pub fn emit_report(report: &EvalReport, dir: &Path) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir)?;
    let rates: Vec<f64> = report.rows.iter().map(|r| r.extraction_rate / report.summary.injection_rate).collect();
    let pressures: Vec<f64> = report.rows.iter().map(|r| r.critical_pressure / 1e6).collect();
    let files = [
        ("eval_samples.csv", samples_csv(report)),
        ("eval_summary.csv", summary_csv(&report.summary)),
        ("rate_hist.svg", histogram_svg(&rates, 30, "Extraction rate", "fraction of injection rate")),
        ("pressure_hist.svg", histogram_svg(&pressures, 30, "Critical-cell pressure", "MPa")),
    ];
    let mut paths = Vec::new();
    for (name, body) in files {
        let p = dir.join(name);
        std::fs::write(&p, body)?;
        paths.push(p);
    }
    Ok(paths)
}
