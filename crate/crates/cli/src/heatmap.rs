//! Frame-similarity heatmaps between two clips.

use crate::csvio::{self, CsvLog};
use crate::svg;
use crate::{HarnessError, Result};
use deg_core::frame::Frame;
use deg_core::guidance::GuidanceClip;
use deg_core::latent::{diagonal_margin, similarity_heatmap, EncoderParams};
use deg_core::matrix::Matrix;
use std::path::Path;

pub const INTERVALS: [usize; 3] = [1, 3, 5];

/// Init seed of the frozen random baseline encoder.
pub const RANDOM_ENCODER_SEED: u64 = 0x0BAD_5EED;

#[derive(Clone, Debug, PartialEq)]
pub struct HeatmapSummary {
    pub encoder: &'static str,
    pub interval: usize,
    pub frames: usize,
    pub diag_mean: f64,
    pub margin: f64,
}

fn every(frames: &[Frame], k: usize) -> Vec<Frame> {
    frames.iter().step_by(k).cloned().collect()
}

fn diag_mean(h: &Matrix<f32>) -> f64 {
    let n = h.rows().min(h.cols());
    (0..n).map(|i| h.get(i, i) as f64).sum::<f64>() / n.max(1) as f64
}

/// Similarity matrices (rows: clip B, columns: clip A) for each interval,
/// for the trained encoder and the random baseline.
pub fn compute(
    trained: &EncoderParams<f32>,
    a: &GuidanceClip,
    b: &GuidanceClip,
) -> Result<Vec<(HeatmapSummary, Matrix<f32>)>> {
    for clip in [a, b] {
        if let Some(f) = clip.frames.first() {
            trained.check_frame(f)?;
        }
    }
    if a.is_empty() || b.is_empty() {
        return Err(HarnessError::Runtime("heatmap clips must not be empty".into()));
    }
    let random = EncoderParams::<f32>::init(trained.arch().clone(), RANDOM_ENCODER_SEED);
    let mut out = Vec::new();
    for (name, enc) in [("trained", trained), ("random", &random)] {
        for k in INTERVALS {
            let (fa, fb) = (every(&a.frames, k), every(&b.frames, k));
            let h = similarity_heatmap(enc, &fa, &fb)?;
            let summary = HeatmapSummary {
                encoder: name,
                interval: k,
                frames: fa.len().min(fb.len()),
                diag_mean: diag_mean(&h),
                margin: diagonal_margin(&h) as f64,
            };
            out.push((summary, h));
        }
    }
    Ok(out)
}

/// Writes `heatmap.csv`, `heatmap_summary.csv` and one SVG per matrix.
pub fn run(trained: &EncoderParams<f32>, a: &GuidanceClip, b: &GuidanceClip, out: &Path) -> Result<Vec<HeatmapSummary>> {
    std::fs::create_dir_all(out)?;
    let results = compute(trained, a, b)?;
    let mut cells = CsvLog::create(&out.join("heatmap.csv"), &csvio::HEATMAP)?;
    let mut summary = CsvLog::create(&out.join("heatmap_summary.csv"), &csvio::HEATMAP_SUMMARY)?;
    for (s, h) in &results {
        for r in 0..h.rows() {
            for c in 0..h.cols() {
                cells.row([s.encoder.to_string(), s.interval.to_string(), r.to_string(), c.to_string(), h.get(r, c).to_string()])?;
            }
        }
        summary.row([
            s.encoder.to_string(),
            s.interval.to_string(),
            s.frames.to_string(),
            s.diag_mean.to_string(),
            s.margin.to_string(),
        ])?;
    }
    cells.sync()?;
    summary.sync()?;
    // SVGs are rendered from the CSV just written.
    for (s, m) in read_matrices(&out.join("heatmap.csv"))? {
        let title = format!("{} encoder, interval {}", s.0, s.1);
        std::fs::write(out.join(format!("heatmap_{}_{}.svg", s.0, s.1)), svg::heatmap(&title, m.rows(), m.cols(), m.data()))?;
    }
    Ok(results.into_iter().map(|r| r.0).collect())
}

/// Reads the long-form heatmap CSV back into matrices keyed by
/// `(encoder, interval)`, in file order.
pub fn read_matrices(path: &Path) -> Result<Vec<((String, usize), Matrix<f64>)>> {
    let mut rdr = csv::Reader::from_path(path)?;
    let mut groups: Vec<((String, usize), Vec<(usize, usize, f64)>)> = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let parse = |i: usize| rec[i].parse::<f64>().map_err(|e| HarnessError::Runtime(format!("{}: {e}", path.display())));
        let key = (rec[0].to_string(), parse(1)? as usize);
        let cell = (parse(2)? as usize, parse(3)? as usize, parse(4)?);
        match groups.last_mut() {
            Some((k, v)) if *k == key => v.push(cell),
            _ => groups.push((key, vec![cell])),
        }
    }
    Ok(groups
        .into_iter()
        .map(|(k, cells)| {
            let rows = cells.iter().map(|c| c.0).max().unwrap_or(0) + 1;
            let cols = cells.iter().map(|c| c.1).max().unwrap_or(0) + 1;
            let mut m = Matrix::zeros(rows, cols);
            for (r, c, v) in cells {
                m.set(r, c, v);
            }
            (k, m)
        })
        .collect())
}
