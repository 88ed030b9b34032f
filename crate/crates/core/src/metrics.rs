//! Presentation-attack error rates and detection-error-tradeoff curves.
//!
//! Scores are liveness probabilities: a sample is labelled live iff
//! `score >= threshold`.

use std::io::Write;
use std::path::Path;

use image::{GrayImage, Luma};
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, Label, SampleRecord};
use crate::error::{Error, Result};
use crate::model::ExpressNet;
use crate::scalar::Scalar;

pub const DET_GRID: usize = 1001;

fn percent(count: usize, total: usize, op: &'static str) -> Result<f64> {
    if total == 0 {
        return Err(Error::invalid(op, "total count is zero, rate is undefined"));
    }
    if count > total {
        return Err(Error::invalid(op, format!("{count} misclassified out of {total}")));
    }
    Ok(100.0 * count as f64 / total as f64)
}

/// Percentage of spoof samples accepted as live.
pub fn apcer(spoof_misclassified: usize, spoof_total: usize) -> Result<f64> {
    percent(spoof_misclassified, spoof_total, "apcer")
}

/// Percentage of live samples rejected as spoof.
pub fn bpcer(live_misclassified: usize, live_total: usize) -> Result<f64> {
    percent(live_misclassified, live_total, "bpcer")
}

pub fn ace(apcer: f64, bpcer: f64) -> f64 {
    (apcer + bpcer) / 2.0
}

pub fn accuracy(ace: f64) -> f64 {
    100.0 - ace
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub threshold: f64,
    pub live_total: usize,
    pub spoof_total: usize,
    pub live_misclassified: usize,
    pub spoof_misclassified: usize,
    pub apcer: f64,
    pub bpcer: f64,
    pub ace: f64,
    pub accuracy: f64,
}

impl EvalReport {
    pub fn from_scores(scores: &[f64], labels: &[Label], threshold: f64) -> Result<Self> {
        check_pairs(scores, labels)?;
        let mut r = EvalReport {
            threshold,
            live_total: 0,
            spoof_total: 0,
            live_misclassified: 0,
            spoof_misclassified: 0,
            apcer: 0.0,
            bpcer: 0.0,
            ace: 0.0,
            accuracy: 0.0,
        };
        for (&s, &l) in scores.iter().zip(labels) {
            let predicted = Label::from_score(s, threshold);
            match l {
                Label::Live => {
                    r.live_total += 1;
                    r.live_misclassified += usize::from(predicted != l);
                }
                Label::Spoof => {
                    r.spoof_total += 1;
                    r.spoof_misclassified += usize::from(predicted != l);
                }
            }
        }
        r.apcer = apcer(r.spoof_misclassified, r.spoof_total)?;
        r.bpcer = bpcer(r.live_misclassified, r.live_total)?;
        r.ace = ace(r.apcer, r.bpcer);
        r.accuracy = accuracy(r.ace);
        Ok(r)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn write_json(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json() + "\n").map_err(|e| Error::io(path, e))
    }

    pub fn read_json(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|source| Error::Json { path: path.to_path_buf(), source })
    }
}

fn check_pairs(scores: &[f64], labels: &[Label]) -> Result<()> {
    if scores.len() != labels.len() {
        return Err(Error::shape("metrics", format!("{} scores for {} labels", scores.len(), labels.len())));
    }
    if let Some(s) = scores.iter().find(|s| s.is_nan()) {
        return Err(Error::invalid("metrics", format!("score {s}")));
    }
    if !labels.contains(&Label::Live) {
        return Err(Error::SingleClass("spoof only"));
    }
    if !labels.contains(&Label::Spoof) {
        return Err(Error::SingleClass("live only"));
    }
    Ok(())
}

/// Anything that can assign liveness scores to samples.
pub trait Scorer {
    fn score(&self, samples: &[SampleRecord]) -> Result<Vec<f64>>;
}

impl<T: Scalar> Scorer for ExpressNet<T> {
    fn score(&self, samples: &[SampleRecord]) -> Result<Vec<f64>> {
        self.score_samples(samples)
    }
}

impl<F: Fn(&SampleRecord) -> f64> Scorer for F {
    fn score(&self, samples: &[SampleRecord]) -> Result<Vec<f64>> {
        Ok(samples.iter().map(self).collect())
    }
}

pub fn evaluate(scorer: &impl Scorer, dataset: &Dataset, threshold: f64) -> Result<EvalReport> {
    dataset.require_both_classes()?;
    let scores = scorer.score(dataset.samples())?;
    EvalReport::from_scores(&scores, &dataset.labels(), threshold)
}

/// Arithmetic mean of per-dataset rates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AverageReport {
    pub datasets: usize,
    pub apcer: f64,
    pub bpcer: f64,
    pub ace: f64,
    pub accuracy: f64,
}

pub fn average_reports(reports: &[EvalReport]) -> Result<AverageReport> {
    if reports.is_empty() {
        return Err(Error::invalid("average_reports", "no reports"));
    }
    let n = reports.len() as f64;
    let mean = |f: fn(&EvalReport) -> f64| reports.iter().map(f).sum::<f64>() / n;
    Ok(AverageReport {
        datasets: reports.len(),
        apcer: mean(|r| r.apcer),
        bpcer: mean(|r| r.bpcer),
        ace: mean(|r| r.ace),
        accuracy: mean(|r| r.accuracy),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DetPoint {
    pub threshold: f64,
    pub apcer: f64,
    pub bpcer: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetCurve {
    /// Ascending in threshold.
    pub points: Vec<DetPoint>,
}

/// Sweeps `n_thresholds` evenly spaced thresholds over `[0, 1]` inclusive.
pub fn det_curve(scores: &[f64], labels: &[Label], n_thresholds: usize) -> Result<DetCurve> {
    check_pairs(scores, labels)?;
    if n_thresholds < 2 {
        return Err(Error::invalid("det_curve", format!("need at least 2 thresholds, got {n_thresholds}")));
    }
    let sorted = |want: Label| {
        let mut v: Vec<f64> = scores.iter().zip(labels).filter(|&(_, &l)| l == want).map(|(&s, _)| s).collect();
        v.sort_by(f64::total_cmp);
        v
    };
    let live = sorted(Label::Live);
    let spoof = sorted(Label::Spoof);
    let mut points = Vec::with_capacity(n_thresholds);
    for i in 0..n_thresholds {
        let t = i as f64 / (n_thresholds - 1) as f64;
        // below t → spoof
        let live_rejected = live.partition_point(|&s| s < t);
        let spoof_accepted = spoof.len() - spoof.partition_point(|&s| s < t);
        points.push(DetPoint {
            threshold: t,
            apcer: apcer(spoof_accepted, spoof.len())?,
            bpcer: bpcer(live_rejected, live.len())?,
        });
    }
    Ok(DetCurve { points })
}

/// Lowest BPCER among grid points whose APCER does not exceed `target_apcer`.
/// Step lookup on the grid, no interpolation.
pub fn bpcer_at_apcer(curve: &DetCurve, target_apcer: f64) -> Result<f64> {
    curve
        .points
        .iter()
        .filter(|p| p.apcer <= target_apcer)
        .map(|p| p.bpcer)
        .min_by(f64::total_cmp)
        .ok_or_else(|| Error::invalid("bpcer_at_apcer", format!("no threshold reaches APCER ≤ {target_apcer}%")))
}

impl DetCurve {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("threshold,apcer,bpcer\n");
        for p in &self.points {
            s.push_str(&format!("{},{},{}\n", p.threshold, p.apcer, p.bpcer));
        }
        s
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(self.to_csv().as_bytes()).map_err(|e| Error::io(path, e))
    }

    /// Renders the curve with both axes log-scaled from 0.01% to 100%.
    /// Zero rates are drawn on the lower edge.
    pub fn plot(&self, side: u32) -> GrayImage {
        const DECADES: f64 = 4.0;
        let margin = side / 10;
        let span = side - 2 * margin;
        let mut img = GrayImage::from_pixel(side, side, Luma([255]));
        let to_px = |rate: f64| -> f64 {
            let r = rate.clamp(0.01, 100.0);
            (r.log10() + 2.0) / DECADES * span as f64
        };
        for d in 0..=DECADES as u32 {
            let off = margin + d * span / DECADES as u32;
            for k in margin..=margin + span {
                img.put_pixel(off, k, Luma([200]));
                img.put_pixel(k, off, Luma([200]));
            }
        }
        for k in margin..=margin + span {
            img.put_pixel(margin, k, Luma([0]));
            img.put_pixel(k, margin + span, Luma([0]));
        }
        let pos = |p: &DetPoint| {
            let x = margin as f64 + to_px(p.apcer);
            let y = (margin + span) as f64 - to_px(p.bpcer);
            (x, y)
        };
        for w in self.points.windows(2) {
            let (a, b) = (pos(&w[0]), pos(&w[1]));
            let steps = ((b.0 - a.0).abs().max((b.1 - a.1).abs()).ceil() as usize).max(1);
            for s in 0..=steps {
                let f = s as f64 / steps as f64;
                let x = (a.0 + f * (b.0 - a.0)).round() as u32;
                let y = (a.1 + f * (b.1 - a.1)).round() as u32;
                img.put_pixel(x.min(side - 1), y.min(side - 1), Luma([0]));
            }
        }
        img
    }

    pub fn write_plot(&self, path: &Path, side: u32) -> Result<()> {
        self.plot(side).save(path).map_err(|source| Error::Image { path: path.to_path_buf(), source })
    }
}
