//! Segmentation cleanup and blob-centre detection.

use std::collections::VecDeque;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::GridShape;

/// Per-voxel class labels of a stack of equally sized slices. A single
/// slice is a 2D label map.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelVolume {
    width: usize,
    height: usize,
    depth: usize,
    labels: Vec<u16>,
}

impl LabelVolume {
    pub fn new(width: usize, height: usize, depth: usize, labels: Vec<u16>) -> Result<Self> {
        if labels.len() != width * height * depth {
            return Err(Error::shape(width * height * depth, labels.len()));
        }
        Ok(LabelVolume {
            width,
            height,
            depth,
            labels,
        })
    }

    pub fn from_slices(shape: GridShape, slices: Vec<Vec<u16>>) -> Result<Self> {
        let depth = slices.len();
        if let Some(bad) = slices.iter().position(|s| s.len() != shape.len()) {
            return Err(Error::Slice {
                index: bad,
                source: Box::new(Error::shape(shape.len(), slices[bad].len())),
            });
        }
        Self::new(shape.width, shape.height, depth, slices.concat())
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn depth(&self) -> usize {
        self.depth
    }

    pub fn labels(&self) -> &[u16] {
        &self.labels
    }

    pub fn slice(&self, z: usize) -> &[u16] {
        let n = self.width * self.height;
        &self.labels[z * n..(z + 1) * n]
    }

    /// Face neighbours: 4 within a slice, plus 2 across slices for volumes.
    fn neighbours(&self, v: usize, out: &mut Vec<usize>) {
        out.clear();
        let n = self.width * self.height;
        let (z, rem) = (v / n, v % n);
        let (x, y) = (rem % self.width, rem / self.width);
        if x > 0 {
            out.push(v - 1);
        }
        if x + 1 < self.width {
            out.push(v + 1);
        }
        if y > 0 {
            out.push(v - self.width);
        }
        if y + 1 < self.height {
            out.push(v + self.width);
        }
        if z > 0 {
            out.push(v - n);
        }
        if z + 1 < self.depth {
            out.push(v + n);
        }
    }
}

/// Relabels connected components of `class` with fewer than `min_size`
/// voxels to the most frequent non-zero label on their outer boundary (ties
/// to the lower label). Components without a labelled neighbour are kept.
pub fn remove_small_components(volume: &LabelVolume, class: u16, min_size: usize) -> LabelVolume {
    let mut out = volume.clone();
    let total = volume.labels.len();
    let mut visited = vec![false; total];
    let mut queue = VecDeque::new();
    let mut component = Vec::new();
    let mut nbrs = Vec::with_capacity(6);
    let mut votes = std::collections::BTreeMap::<u16, usize>::new();

    for start in 0..total {
        if visited[start] || volume.labels[start] != class {
            continue;
        }
        component.clear();
        votes.clear();
        visited[start] = true;
        queue.push_back(start);
        while let Some(v) = queue.pop_front() {
            component.push(v);
            volume.neighbours(v, &mut nbrs);
            for &u in &nbrs {
                let label = volume.labels[u];
                if label == class {
                    if !visited[u] {
                        visited[u] = true;
                        queue.push_back(u);
                    }
                } else if label != 0 {
                    *votes.entry(label).or_default() += 1;
                }
            }
        }
        if component.len() >= min_size {
            continue;
        }
        let mut best: Option<(u16, usize)> = None;
        for (&label, &count) in &votes {
            if best.is_none_or(|(_, c)| count > c) {
                best = Some((label, count));
            }
        }
        if let Some((label, _)) = best {
            for &v in &component {
                out.labels[v] = label;
            }
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CentreOptions {
    /// Half-width `r` of the `(2r+1)²` window a maximum must strictly dominate.
    pub window_radius: usize,
    /// Minimum Euclidean distance between reported centres.
    pub min_distance: f64,
    /// Maxima at or below this value are ignored.
    pub threshold: f64,
}

impl Default for CentreOptions {
    fn default() -> Self {
        CentreOptions {
            window_radius: 2,
            min_distance: 4.0,
            threshold: 0.5,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Centre {
    pub x: usize,
    pub y: usize,
    pub slice: usize,
    pub score: f64,
}

/// Strict local maxima of a probability layer above `threshold`, greedily
/// thinned to `min_distance` and sorted by descending score.
///
/// A connected plateau of exactly equal values counts as one maximum when it
/// fits in the window and everything else in the windows of its pixels is
/// strictly lower; it is reported at its pixel nearest to the plateau mean.
pub fn detect_centres(layer: &[f64], shape: GridShape, opts: &CentreOptions) -> Result<Vec<Centre>> {
    if layer.len() != shape.len() {
        return Err(Error::shape(shape.len(), layer.len()));
    }
    let (w, h) = (shape.width, shape.height);
    let r = opts.window_radius.max(1);
    let window = |x: usize, y: usize| {
        (y.saturating_sub(r)..(y + r + 1).min(h))
            .flat_map(move |yy| (x.saturating_sub(r)..(x + r + 1).min(w)).map(move |xx| xx + yy * w))
    };
    let area = (2 * r + 1) * (2 * r + 1);
    let mut seen = vec![false; w * h];
    let mut candidates = Vec::new();
    for y in 0..h {
        for x in 0..w {
            let i = x + y * w;
            let v = layer[i];
            if v <= opts.threshold || seen[i] || window(x, y).any(|j| layer[j] > v) {
                continue;
            }
            if window(x, y).all(|j| j == i || layer[j] < v) {
                candidates.push(Centre { x, y, slice: 0, score: v });
                continue;
            }
            let plateau = equal_region(layer, w, h, i, area + 1, &mut seen);
            if plateau.len() > area {
                continue;
            }
            let bounded = plateau.iter().all(|&p| {
                window(p % w, p / w).all(|j| layer[j] < v || (layer[j] == v && plateau.contains(&j)))
            });
            if !bounded {
                continue;
            }
            let n = plateau.len() as f64;
            let mx = plateau.iter().map(|&p| (p % w) as f64).sum::<f64>() / n;
            let my = plateau.iter().map(|&p| (p / w) as f64).sum::<f64>() / n;
            let best = plateau
                .iter()
                .copied()
                .min_by(|&a, &b| {
                    let da = ((a % w) as f64 - mx).powi(2) + ((a / w) as f64 - my).powi(2);
                    let db = ((b % w) as f64 - mx).powi(2) + ((b / w) as f64 - my).powi(2);
                    da.total_cmp(&db).then(a.cmp(&b))
                })
                .expect("plateau holds its seed");
            candidates.push(Centre { x: best % w, y: best / w, slice: 0, score: v });
        }
    }
    candidates.sort_by(|a, b| {
        b.score
            .total_cmp(&a.score)
            .then((a.y, a.x).cmp(&(b.y, b.x)))
    });
    let min_sq = opts.min_distance * opts.min_distance;
    let mut kept: Vec<Centre> = Vec::new();
    for c in candidates {
        let far = kept.iter().all(|k| {
            let dx = k.x as f64 - c.x as f64;
            let dy = k.y as f64 - c.y as f64;
            dx * dx + dy * dy >= min_sq
        });
        if far {
            kept.push(c);
        }
    }
    Ok(kept)
}

/// 8-connected pixels with exactly the value at `seed`, stopping once `limit`
/// pixels are found. Visited pixels are flagged in `seen`.
fn equal_region(layer: &[f64], w: usize, h: usize, seed: usize, limit: usize, seen: &mut [bool]) -> Vec<usize> {
    let v = layer[seed];
    let mut region = vec![seed];
    seen[seed] = true;
    let mut next = 0;
    while next < region.len() && region.len() < limit {
        let p = region[next];
        next += 1;
        let (x, y) = (p % w, p / w);
        for yy in y.saturating_sub(1)..(y + 2).min(h) {
            for xx in x.saturating_sub(1)..(x + 2).min(w) {
                let q = xx + yy * w;
                if !seen[q] && layer[q] == v {
                    seen[q] = true;
                    region.push(q);
                }
            }
        }
    }
    region
}

/// Writes `x,y,slice,score` rows with a header line.
pub fn write_centres_csv<W: Write>(centres: &[Centre], mut out: W) -> Result<()> {
    writeln!(out, "x,y,slice,score")?;
    for c in centres {
        writeln!(out, "{},{},{},{}", c.x, c.y, c.slice, c.score)?;
    }
    Ok(())
}

/// Approximate cell extents: pixels whose centre-class probability exceeds
/// the boundary-class probability are given the 1-based index of the nearest
/// centre; all other pixels get 0.
pub fn estimate_cell_extents(
    centre_layer: &[f64],
    boundary_layer: &[f64],
    centres: &[Centre],
    shape: GridShape,
) -> Result<Vec<u32>> {
    if centre_layer.len() != shape.len() || boundary_layer.len() != shape.len() {
        return Err(Error::shape(
            shape.len(),
            format!("{} and {}", centre_layer.len(), boundary_layer.len()),
        ));
    }
    let mut out = vec![0u32; shape.len()];
    if centres.is_empty() {
        return Ok(out);
    }
    for (i, o) in out.iter_mut().enumerate() {
        if boundary_layer[i] >= centre_layer[i] {
            continue;
        }
        let (x, y) = ((i % shape.width) as f64, (i / shape.width) as f64);
        let mut best = 0;
        let mut best_d = f64::INFINITY;
        for (k, c) in centres.iter().enumerate() {
            let d = (c.x as f64 - x).powi(2) + (c.y as f64 - y).powi(2);
            if d < best_d {
                best_d = d;
                best = k;
            }
        }
        *o = best as u32 + 1;
    }
    Ok(out)
}
