//! Preprocessing of one image into everything the interactive loop needs.

use std::sync::Arc;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::dictionary::{assign_image, build_tree, AssignmentImage, KMeansTree, TreeParams};
use crate::error::Result;
use crate::features::{extract_training_set, ExtractorKind, FeatureExtractor, PatchExtractor, Subsample};
use crate::graph::{build_biadjacency, normalize, BiadjacencyGraph, TransformPair};
use crate::grid::PixelGrid;
use crate::propagation::{update_detailed, UpdateOptions, UpdateResult, UserMarking};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DictionaryConfig {
    pub patch_size: usize,
    pub extractor: ExtractorKind,
    pub tree: TreeParams,
    pub subsample: Subsample,
}

impl Default for DictionaryConfig {
    fn default() -> Self {
        DictionaryConfig {
            patch_size: 9,
            extractor: ExtractorKind::IntensityPatch,
            tree: TreeParams::default(),
            subsample: Subsample::Count(20_000),
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct BuildTimings {
    pub dictionary: Duration,
    pub assignment: Duration,
    pub biadjacency: Duration,
    pub normalization: Duration,
}

/// Dictionary, assignment image, biadjacency graph and transforms of one
/// image.
#[derive(Debug, Clone)]
pub struct Segmenter {
    tree: Arc<KMeansTree>,
    assignment: AssignmentImage,
    graph: BiadjacencyGraph,
    transforms: TransformPair,
    timings: BuildTimings,
}

impl Segmenter {
    /// Learns a dictionary from `image` and links the image to it.
    pub fn build(image: &PixelGrid, config: &DictionaryConfig) -> Result<Self> {
        let extractor = PatchExtractor::new(config.extractor, config.patch_size)?;
        config.tree.validate()?;
        extractor.validate(image)?;
        let start = Instant::now();
        let training = extract_training_set(image, &extractor, config.subsample, config.tree.seed)?;
        let k = config.tree.validate()?;
        if training.features.len() < k {
            log::warn!(
                "{} training patches for a dictionary of {k} elements",
                training.features.len()
            );
        }
        let tree = build_tree(&training.features, config.tree, extractor.patch(), image.channels())?;
        let dictionary = start.elapsed();
        let mut seg = Self::with_tree(image, Arc::new(tree))?;
        seg.timings.dictionary = dictionary;
        Ok(seg)
    }

    /// Links `image` to an existing dictionary.
    pub fn with_tree(image: &PixelGrid, tree: Arc<KMeansTree>) -> Result<Self> {
        let t = Instant::now();
        let assignment = assign_image(image, &tree)?;
        let assignment_time = t.elapsed();
        let t = Instant::now();
        let graph = build_biadjacency(&assignment, tree.len())?;
        let biadjacency = t.elapsed();
        let t = Instant::now();
        let transforms = normalize(&graph);
        let normalization = t.elapsed();
        Ok(Segmenter {
            tree,
            assignment,
            graph,
            transforms,
            timings: BuildTimings {
                dictionary: Duration::ZERO,
                assignment: assignment_time,
                biadjacency,
                normalization,
            },
        })
    }

    pub fn tree(&self) -> &Arc<KMeansTree> {
        &self.tree
    }

    pub fn assignment(&self) -> &AssignmentImage {
        &self.assignment
    }

    pub fn graph(&self) -> &BiadjacencyGraph {
        &self.graph
    }

    pub fn transforms(&self) -> &TransformPair {
        &self.transforms
    }

    pub fn timings(&self) -> BuildTimings {
        self.timings
    }

    pub fn update(&self, marks: &UserMarking, opts: &UpdateOptions) -> Result<UpdateResult> {
        update_detailed(marks, &self.transforms, opts)
    }
}
