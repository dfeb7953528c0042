//! Preprocessing and update timings over a grid of sizes and dictionaries.

use std::time::{Duration, Instant};

use dictseg::phantom::{disk_scribbles, disks, DiskParams, ScribbleParams};
use dictseg::prelude::*;
use serde::Serialize;

use crate::error::{CliError, Result};

#[derive(Debug, Clone)]
pub struct BenchParams {
    /// Square phantom side lengths.
    pub sizes: Vec<usize>,
    pub patch_sizes: Vec<usize>,
    /// `(branching, layers)` pairs.
    pub trees: Vec<(usize, usize)>,
    /// Timed updates per configuration, after one warm-up.
    pub repeats: usize,
    pub seed: u64,
    pub iterations: usize,
    pub subsample: Subsample,
    pub options: UpdateOptions,
}

impl Default for BenchParams {
    fn default() -> Self {
        BenchParams {
            sizes: vec![512],
            patch_sizes: vec![9],
            trees: vec![(5, 4)],
            repeats: 15,
            seed: 1,
            iterations: TreeParams::default().iterations,
            subsample: DictionaryConfig::default().subsample,
            options: UpdateOptions::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Percentiles {
    pub p50: f64,
    pub p90: f64,
    pub p99: f64,
    pub mean: f64,
}

/// Nearest-rank percentiles in milliseconds.
pub fn percentiles(samples: &[Duration]) -> Percentiles {
    let mut ms: Vec<f64> = samples.iter().map(|d| d.as_secs_f64() * 1e3).collect();
    ms.sort_by(f64::total_cmp);
    let rank = |q: f64| {
        if ms.is_empty() {
            return f64::NAN;
        }
        let k = ((q * ms.len() as f64).ceil() as usize).clamp(1, ms.len());
        ms[k - 1]
    };
    Percentiles {
        p50: rank(0.5),
        p90: rank(0.9),
        p99: rank(0.99),
        mean: ms.iter().sum::<f64>() / ms.len() as f64,
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct BenchRecord {
    pub size: usize,
    pub patch_size: usize,
    pub branching: usize,
    pub layers: usize,
    pub dictionary_size: usize,
    pub nnz: usize,
    pub marked_pixels: usize,
    pub dictionary_ms: f64,
    pub assignment_ms: f64,
    pub biadjacency_ms: f64,
    pub normalization_ms: f64,
    pub update_ms: Percentiles,
}

impl BenchRecord {
    /// Assignment image, `B` and both transforms.
    pub fn graph_ms(&self) -> f64 {
        self.assignment_ms + self.biadjacency_ms + self.normalization_ms
    }
}

fn ms(d: Duration) -> f64 {
    d.as_secs_f64() * 1e3
}

/// A disk phantom with disk density held at 300 per 512².
pub fn bench_image(size: usize, seed: u64) -> Result<(PixelGrid, UserMarking)> {
    let count = ((300 * size * size) as f64 / (512.0 * 512.0)).round().max(1.0) as usize;
    let p = disks(&DiskParams {
        width: size,
        height: size,
        count,
        seed,
        ..Default::default()
    })?;
    let marks = disk_scribbles(&p, &ScribbleParams::default())?;
    Ok((p.image, marks))
}

pub fn run(params: &BenchParams, mut report: impl FnMut(&BenchRecord)) -> Result<Vec<BenchRecord>> {
    if params.repeats == 0 {
        return Err(CliError::Invalid("bench needs at least one repeat".into()));
    }
    let mut records = Vec::new();
    for &size in &params.sizes {
        let (image, marks) = bench_image(size, params.seed)?;
        for &patch_size in &params.patch_sizes {
            for &(branching, layers) in &params.trees {
                let config = DictionaryConfig {
                    patch_size,
                    tree: TreeParams {
                        branching,
                        layers,
                        iterations: params.iterations,
                        seed: params.seed,
                    },
                    subsample: params.subsample,
                    ..Default::default()
                };
                let seg = Segmenter::build(&image, &config)?;
                seg.update(&marks, &params.options)?;
                let samples = (0..params.repeats)
                    .map(|_| {
                        let t = Instant::now();
                        seg.update(&marks, &params.options).map(|_| t.elapsed())
                    })
                    .collect::<dictseg::Result<Vec<_>>>()?;
                let timings = seg.timings();
                let record = BenchRecord {
                    size,
                    patch_size,
                    branching,
                    layers,
                    dictionary_size: seg.tree().len(),
                    nnz: seg.graph().nnz(),
                    marked_pixels: marks.len(),
                    dictionary_ms: ms(timings.dictionary),
                    assignment_ms: ms(timings.assignment),
                    biadjacency_ms: ms(timings.biadjacency),
                    normalization_ms: ms(timings.normalization),
                    update_ms: percentiles(&samples),
                };
                report(&record);
                records.push(record);
            }
        }
    }
    Ok(records)
}

pub fn table_header() -> String {
    format!(
        "{:>6} {:>3} {:>3} {:>3} {:>6} {:>11} {:>9} {:>9} {:>9} {:>9} {:>9} {:>9}",
        "size", "M", "b", "t", "K", "nnz", "dict_ms", "graph_ms", "upd_p50", "upd_p90", "upd_p99", "marks"
    )
}

pub fn table_row(r: &BenchRecord) -> String {
    format!(
        "{:>6} {:>3} {:>3} {:>3} {:>6} {:>11} {:>9.1} {:>9.1} {:>9.1} {:>9.1} {:>9.1} {:>9}",
        r.size,
        r.patch_size,
        r.branching,
        r.layers,
        r.dictionary_size,
        r.nnz,
        r.dictionary_ms,
        r.graph_ms(),
        r.update_ms.p50,
        r.update_ms.p90,
        r.update_ms.p99,
        r.marked_pixels
    )
}
