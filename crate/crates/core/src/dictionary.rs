//! Hierarchical k-means dictionary and the assignment image.
//!
//! Nodes are numbered 1..=K in breadth-first order: the root is node 1 and
//! the children of node `p` are `b(p-1)+2 ..= b(p-1)+b+1`. Every node, root
//! included, is a dictionary element, so `K = (b^(t+1) - 1) / (b - 1)`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{ExtractorKind, FeatureExtractor, FeatureSet, PatchExtractor};
use crate::grid::{GridShape, PatchShape, PixelGrid};

/// Upper bound on dictionary size; keeps `M²K` within `u32` indices for
/// reasonable patch sizes.
pub const MAX_NODES: usize = 1 << 22;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TreeParams {
    pub branching: usize,
    pub layers: usize,
    pub iterations: usize,
    pub seed: u64,
}

impl Default for TreeParams {
    fn default() -> Self {
        TreeParams {
            branching: 5,
            layers: 4,
            iterations: 10,
            seed: 0,
        }
    }
}

/// `K = (b^(t+1) - 1) / (b - 1)`, or `None` on overflow.
pub fn node_count(branching: usize, layers: usize) -> Option<usize> {
    let mut total: usize = 0;
    let mut width: usize = 1;
    for _ in 0..=layers {
        total = total.checked_add(width)?;
        width = width.checked_mul(branching)?;
    }
    Some(total)
}

impl TreeParams {
    pub fn validate(&self) -> Result<usize> {
        if self.branching < 2 {
            return Err(Error::Config(format!(
                "branching factor must be at least 2, got {}",
                self.branching
            )));
        }
        if self.iterations == 0 {
            return Err(Error::Config("k-means needs at least one iteration".into()));
        }
        match node_count(self.branching, self.layers) {
            Some(k) if k <= MAX_NODES => Ok(k),
            _ => Err(Error::Config(format!(
                "tree with b={} and t={} exceeds {MAX_NODES} nodes",
                self.branching, self.layers
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct KMeansTree {
    params: TreeParams,
    patch: PatchShape,
    channels: usize,
    dim: usize,
    /// Centres of all nodes, node `id` at `(id-1)*dim`.
    centres: Vec<f64>,
    non_empty: Vec<bool>,
}

impl KMeansTree {
    /// Reassembles a tree from stored parts, checking sizes.
    pub fn from_parts(
        params: TreeParams,
        patch: PatchShape,
        channels: usize,
        centres: Vec<f64>,
        non_empty: Vec<bool>,
    ) -> Result<Self> {
        let k = params.validate()?;
        let dim = patch.area() * channels;
        if non_empty.len() != k || centres.len() != k * dim {
            return Err(Error::Corruption(format!(
                "tree expects {k} nodes of dimension {dim}, got {} flags and {} values",
                non_empty.len(),
                centres.len()
            )));
        }
        if !non_empty.first().copied().unwrap_or(false) {
            return Err(Error::Corruption("root node is empty".into()));
        }
        Ok(KMeansTree {
            params,
            patch,
            channels,
            dim,
            centres,
            non_empty,
        })
    }

    pub fn params(&self) -> TreeParams {
        self.params
    }

    pub fn patch(&self) -> PatchShape {
        self.patch
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn feature_len(&self) -> usize {
        self.dim
    }

    /// Total node count `K`.
    pub fn len(&self) -> usize {
        self.non_empty.len()
    }

    pub fn is_empty(&self) -> bool {
        self.non_empty.is_empty()
    }

    pub fn centres(&self) -> &[f64] {
        &self.centres
    }

    pub fn non_empty_mask(&self) -> &[bool] {
        &self.non_empty
    }

    pub fn centre(&self, id: usize) -> &[f64] {
        &self.centres[(id - 1) * self.dim..id * self.dim]
    }

    pub fn is_node_empty(&self, id: usize) -> bool {
        !self.non_empty[id - 1]
    }

    /// Ids of the children of node `id`, empty for leaves.
    pub fn children(&self, id: usize) -> std::ops::Range<usize> {
        let b = self.params.branching;
        let first = b * (id - 1) + 2;
        if first > self.len() {
            first..first
        } else {
            first..first + b
        }
    }

    /// Descends from the root, always moving to the nearest non-empty child,
    /// until a leaf or a node without non-empty children is reached. Returns
    /// the node nearest to `feature` among all nodes on that path; ties go
    /// to the lower id.
    pub fn nearest_along_path(&self, feature: &[f64]) -> usize {
        let mut node = 1;
        let mut best = 1;
        let mut best_dist = sq_dist(feature, self.centre(1));
        loop {
            let mut next = None;
            let mut next_dist = f64::INFINITY;
            for child in self.children(node) {
                if self.is_node_empty(child) {
                    continue;
                }
                let d = sq_dist(feature, self.centre(child));
                if d < next_dist {
                    next_dist = d;
                    next = Some(child);
                }
            }
            let Some(child) = next else {
                return best;
            };
            if next_dist < best_dist {
                best_dist = next_dist;
                best = child;
            }
            node = child;
        }
    }
}

#[inline]
fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Builds the tree by recursive k-means on the members of each node.
pub fn build_tree(
    features: &FeatureSet,
    params: TreeParams,
    patch: PatchShape,
    channels: usize,
) -> Result<KMeansTree> {
    let k = params.validate()?;
    let dim = patch.area() * channels;
    if features.is_empty() {
        return Err(Error::Config("cannot build a dictionary from zero features".into()));
    }
    if features.dim() != dim {
        return Err(Error::shape(
            format!("features of length {dim}"),
            features.dim(),
        ));
    }
    let b = params.branching;
    let mut centres = vec![0.0; k * dim];
    let mut non_empty = vec![false; k];
    let mut members: Vec<Vec<u32>> = vec![Vec::new(); k];
    members[0] = (0..features.len() as u32).collect();
    mean_into(features, &members[0], &mut centres[..dim]);
    non_empty[0] = true;

    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let first_leaf = k - b.pow(params.layers as u32) + 1;
    for id in 1..first_leaf {
        let node_members = std::mem::take(&mut members[id - 1]);
        if !non_empty[id - 1] || node_members.len() < b {
            continue;
        }
        let (child_centres, labels) = kmeans(features, &node_members, b, params.iterations, &mut rng);
        let first_child = b * (id - 1) + 2;
        for (&m, &label) in node_members.iter().zip(&labels) {
            members[first_child + label - 1].push(m);
        }
        for c in 0..b {
            let child = first_child + c;
            if !members[child - 1].is_empty() {
                non_empty[child - 1] = true;
                centres[(child - 1) * dim..child * dim]
                    .copy_from_slice(&child_centres[c * dim..(c + 1) * dim]);
            }
        }
    }
    KMeansTree::from_parts(params, patch, channels, centres, non_empty)
}

fn mean_into(features: &FeatureSet, members: &[u32], out: &mut [f64]) {
    out.fill(0.0);
    for &m in members {
        for (o, v) in out.iter_mut().zip(features.get(m as usize)) {
            *o += v;
        }
    }
    let inv = 1.0 / members.len() as f64;
    out.iter_mut().for_each(|o| *o *= inv);
}

/// Lloyd iterations with farthest-point seeding. Returns the `b×dim`
/// centres and the cluster label of every member.
fn kmeans(
    features: &FeatureSet,
    members: &[u32],
    b: usize,
    iterations: usize,
    rng: &mut ChaCha8Rng,
) -> (Vec<f64>, Vec<usize>) {
    let dim = features.dim();
    let point = |i: usize| features.get(members[i] as usize);

    let mut centres = Vec::with_capacity(b * dim);
    let first = rng.random_range(0..members.len());
    centres.extend_from_slice(point(first));
    let mut min_dist: Vec<f64> = (0..members.len())
        .map(|i| sq_dist(point(i), point(first)))
        .collect();
    for _ in 1..b {
        let mut far = 0;
        for (i, &d) in min_dist.iter().enumerate() {
            if d > min_dist[far] {
                far = i;
            }
        }
        let seed_point = point(far).to_vec();
        for (i, d) in min_dist.iter_mut().enumerate() {
            *d = d.min(sq_dist(point(i), &seed_point));
        }
        centres.extend_from_slice(&seed_point);
    }

    let mut labels = vec![0usize; members.len()];
    let mut sums = vec![0.0; b * dim];
    let mut counts = vec![0usize; b];
    for _ in 0..iterations {
        for (i, label) in labels.iter_mut().enumerate() {
            let p = point(i);
            let mut best = 0;
            let mut best_d = f64::INFINITY;
            for c in 0..b {
                let d = sq_dist(p, &centres[c * dim..(c + 1) * dim]);
                if d < best_d {
                    best_d = d;
                    best = c;
                }
            }
            *label = best;
        }
        sums.fill(0.0);
        counts.fill(0);
        for (i, &label) in labels.iter().enumerate() {
            counts[label] += 1;
            for (s, v) in sums[label * dim..(label + 1) * dim].iter_mut().zip(point(i)) {
                *s += v;
            }
        }
        for c in 0..b {
            if counts[c] > 0 {
                let inv = 1.0 / counts[c] as f64;
                for (dst, s) in centres[c * dim..(c + 1) * dim]
                    .iter_mut()
                    .zip(&sums[c * dim..(c + 1) * dim])
                {
                    *dst = s * inv;
                }
            }
        }
    }
    (centres, labels)
}

/// Per-pixel dictionary node ids; 0 marks boundary pixels without a patch.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AssignmentImage {
    shape: GridShape,
    patch: PatchShape,
    values: Vec<u32>,
}

impl AssignmentImage {
    /// Wraps raw ids, checking that exactly the boundary band is zero.
    pub fn from_values(shape: GridShape, patch: PatchShape, values: Vec<u32>) -> Result<Self> {
        if values.len() != shape.len() {
            return Err(Error::shape(shape.len(), values.len()));
        }
        for y in 0..shape.height {
            for x in 0..shape.width {
                let v = values[x + y * shape.width];
                if patch.fits(shape, x, y) != (v != 0) {
                    return Err(Error::Corruption(format!(
                        "assignment {v} at ({x}, {y}) inconsistent with patch size {}",
                        patch.size()
                    )));
                }
            }
        }
        Ok(AssignmentImage {
            shape,
            patch,
            values,
        })
    }

    pub fn shape(&self) -> GridShape {
        self.shape
    }

    pub fn patch(&self) -> PatchShape {
        self.patch
    }

    pub fn values(&self) -> &[u32] {
        &self.values
    }

    pub fn get(&self, x: usize, y: usize) -> u32 {
        self.values[x + y * self.shape.width]
    }

    pub fn max_id(&self) -> u32 {
        self.values.iter().copied().max().unwrap_or(0)
    }

    pub fn nonzero_count(&self) -> usize {
        self.values.iter().filter(|&&v| v != 0).count()
    }
}

/// Assigns every non-boundary pixel of `image` to a dictionary node.
pub fn assign_image(image: &PixelGrid, tree: &KMeansTree) -> Result<AssignmentImage> {
    if image.channels() != tree.channels() {
        return Err(Error::Config(format!(
            "image has {} channels, dictionary expects {}",
            image.channels(),
            tree.channels()
        )));
    }
    let extractor = PatchExtractor::new(ExtractorKind::MultichannelPatch, tree.patch().size())?;
    extractor.validate(image)?;
    let s = tree.patch().half();
    let (w, h) = (image.width(), image.height());
    let mut values = vec![0u32; w * h];
    values
        .par_chunks_mut(w)
        .enumerate()
        .filter(|(y, _)| *y >= s && *y + s < h)
        .for_each_init(
            || vec![0.0; tree.feature_len()],
            |buf, (y, row)| {
                for (x, v) in row.iter_mut().enumerate().take(w - s).skip(s) {
                    extractor.extract_into(image, x, y, buf);
                    *v = tree.nearest_along_path(buf) as u32;
                }
            },
        );
    Ok(AssignmentImage {
        shape: image.shape(),
        patch: tree.patch(),
        values,
    })
}
