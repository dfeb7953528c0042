//! Per-pixel feature vectors for clustering and assignment.
//!
//! Patch features list window values with `dy` outermost, then `dx`, then
//! channel. The ordering is part of the model file format
//! ([`FEATURE_ORDER_DY_DX_CHANNEL`]).

use rand::{seq::index, Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{PatchShape, PixelGrid};

/// Tag stored in model files for the `(dy, dx, channel)` feature layout.
pub const FEATURE_ORDER_DY_DX_CHANNEL: u32 = 1;

/// Computes a feature vector for a pixel centre. `patch_size` is the overlap
/// size used when linking the image to the dictionary.
pub trait FeatureExtractor: Send + Sync {
    fn patch(&self) -> PatchShape;

    fn feature_len(&self, channels: usize) -> usize;

    /// Checks that `image` can be processed by this extractor.
    fn validate(&self, image: &PixelGrid) -> Result<()>;

    /// Writes the feature for centre `(x, y)` into `out`. The caller
    /// guarantees the centre is valid and `out` has `feature_len` entries.
    fn extract_into(&self, image: &PixelGrid, x: usize, y: usize, out: &mut [f64]);
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum ExtractorKind {
    /// Raw intensities of a single-channel patch.
    #[default]
    IntensityPatch,
    /// All channels of the patch concatenated.
    MultichannelPatch,
}

impl std::str::FromStr for ExtractorKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "intensity-patch" | "intensity" => Ok(ExtractorKind::IntensityPatch),
            "multichannel-patch" | "multichannel" | "rgb" => Ok(ExtractorKind::MultichannelPatch),
            other => Err(Error::Config(format!("unknown extractor kind '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PatchExtractor {
    kind: ExtractorKind,
    patch: PatchShape,
}

impl PatchExtractor {
    pub fn new(kind: ExtractorKind, patch_size: usize) -> Result<Self> {
        Ok(PatchExtractor {
            kind,
            patch: PatchShape::new(patch_size)?,
        })
    }

    pub fn kind(&self) -> ExtractorKind {
        self.kind
    }
}

impl FeatureExtractor for PatchExtractor {
    fn patch(&self) -> PatchShape {
        self.patch
    }

    fn feature_len(&self, channels: usize) -> usize {
        self.patch.area() * channels
    }

    fn validate(&self, image: &PixelGrid) -> Result<()> {
        if self.kind == ExtractorKind::IntensityPatch && image.channels() != 1 {
            return Err(Error::Config(format!(
                "intensity patches need a single-channel image, got {} channels",
                image.channels()
            )));
        }
        let m = self.patch.size();
        if image.width() < m || image.height() < m {
            return Err(Error::Config(format!(
                "image {}x{} is smaller than the {m}x{m} patch",
                image.width(),
                image.height()
            )));
        }
        Ok(())
    }

    fn extract_into(&self, image: &PixelGrid, x: usize, y: usize, out: &mut [f64]) {
        let s = self.patch.half();
        let m = self.patch.size();
        let c = image.channels();
        let row_len = m * c;
        let stride = image.width() * c;
        let data = image.data();
        let mut start = ((x - s) + (y - s) * image.width()) * c;
        for dst in out.chunks_exact_mut(row_len) {
            dst.copy_from_slice(&data[start..start + row_len]);
            start += stride;
        }
    }
}

/// The patch feature centred at 0-based `(x, y)`.
pub fn extract_patch(image: &PixelGrid, x: usize, y: usize, patch_size: usize) -> Result<Vec<f64>> {
    let patch = PatchShape::new(patch_size)?;
    if !patch.fits(image.shape(), x, y) {
        return Err(Error::NoPatch {
            x,
            y,
            patch_size,
        });
    }
    let extractor = PatchExtractor {
        kind: ExtractorKind::MultichannelPatch,
        patch,
    };
    let mut out = vec![0.0; extractor.feature_len(image.channels())];
    extractor.extract_into(image, x, y, &mut out);
    Ok(out)
}

/// A flat collection of equally long feature vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureSet {
    dim: usize,
    data: Vec<f64>,
}

impl FeatureSet {
    pub fn new(dim: usize, data: Vec<f64>) -> Result<Self> {
        if dim == 0 || data.len() % dim != 0 {
            return Err(Error::shape(format!("multiple of {dim}"), data.len()));
        }
        Ok(FeatureSet { dim, data })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let dim = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != dim) {
            return Err(Error::Config("feature vectors differ in length".into()));
        }
        Self::new(dim, rows.concat())
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.data.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn get(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn iter(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks_exact(self.dim)
    }
}

/// How many patches to draw when building a dictionary.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Subsample {
    All,
    Count(usize),
    /// Fraction of all valid centres, in `(0, 1]`.
    Rate(f64),
}

impl Subsample {
    fn target(self, population: usize) -> Result<usize> {
        let t = match self {
            Subsample::All => population,
            Subsample::Count(c) => c,
            Subsample::Rate(r) => {
                if !(r > 0.0 && r <= 1.0) {
                    return Err(Error::Config(format!("subsample rate {r} outside (0, 1]")));
                }
                (r * population as f64).round() as usize
            }
        };
        Ok(t.min(population))
    }
}

/// Training features plus the centres they were taken from.
#[derive(Debug, Clone)]
pub struct TrainingSet {
    pub features: FeatureSet,
    pub centres: Vec<(usize, usize)>,
}

/// Draws a spatially stratified subset of patch features.
///
/// The valid-centre region is split into a grid of roughly equal cells, one
/// jittered centre is drawn per cell, and a seeded subset of cells is kept
/// when there are more cells than requested.
pub fn extract_training_set(
    image: &PixelGrid,
    extractor: &dyn FeatureExtractor,
    subsample: Subsample,
    seed: u64,
) -> Result<TrainingSet> {
    extractor.validate(image)?;
    let patch = extractor.patch();
    let s = patch.half();
    let w = image.width() - 2 * s;
    let h = image.height() - 2 * s;
    let population = w * h;
    let target = subsample.target(population)?;

    let centres: Vec<(usize, usize)> = if target == population {
        (0..h)
            .flat_map(|y| (0..w).map(move |x| (x + s, y + s)))
            .collect()
    } else {
        stratified_centres(w, h, target, seed)
            .into_iter()
            .map(|(x, y)| (x + s, y + s))
            .collect()
    };

    let dim = extractor.feature_len(image.channels());
    let mut data = vec![0.0; dim * centres.len()];
    for (out, &(x, y)) in data.chunks_exact_mut(dim).zip(&centres) {
        extractor.extract_into(image, x, y, out);
    }
    Ok(TrainingSet {
        features: FeatureSet::new(dim, data)?,
        centres,
    })
}

fn stratified_centres(w: usize, h: usize, target: usize, seed: u64) -> Vec<(usize, usize)> {
    if target == 0 {
        return Vec::new();
    }
    let mut cx = ((target as f64 * w as f64 / h as f64).sqrt().ceil() as usize).clamp(1, w);
    let mut cy = target.div_ceil(cx).clamp(1, h);
    while cx * cy < target {
        if cy < h {
            cy += 1;
        } else {
            cx += 1;
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut chosen = index::sample(&mut rng, cx * cy, target).into_vec();
    chosen.sort_unstable();
    chosen
        .into_iter()
        .map(|cell| {
            let (gx, gy) = (cell % cx, cell / cx);
            let (x0, x1) = (gx * w / cx, (gx + 1) * w / cx);
            let (y0, y1) = (gy * h / cy, (gy + 1) * h / cy);
            (rng.random_range(x0..x1), rng.random_range(y0..y1))
        })
        .collect()
}
