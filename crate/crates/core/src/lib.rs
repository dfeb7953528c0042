//! Interactive segmentation of patterned images by propagating sparse user
//! markings through an image↔dictionary linear operator.
//!
//! The pipeline:
//!
//! 1. [`features`]: patch feature vectors for every valid pixel centre.
//! 2. [`dictionary`]: a hierarchical k-means tree over a subset of patches,
//!    and the assignment image mapping every centre to a tree node.
//! 3. [`graph`]: the sparse biadjacency matrix `B` between image pixels and
//!    dictionary pixels and its two averaging transforms `T1`, `T2`.
//! 4. [`propagation`]: user marks to probabilities, `P = T2·T1·L`, with the
//!    optional two-step variants.
//! 5. [`transfer`]: dictionary probabilities `D = T1·L` applied to new images.
//! 6. [`postproc`]: small-component removal and centre detection.
//!
//! ```
//! use dictseg::prelude::*;
//!
//! let phantom = dictseg::phantom::two_texture(&Default::default()).unwrap();
//! let config = DictionaryConfig {
//!     patch_size: 5,
//!     tree: TreeParams { branching: 3, layers: 2, ..Default::default() },
//!     ..Default::default()
//! };
//! let seg = Segmenter::build(&phantom.image, &config).unwrap();
//! let mut marks = UserMarking::new(phantom.image.shape().len(), 2).unwrap();
//! marks.set(64 * 128 + 10, 1).unwrap();
//! marks.set(64 * 128 + 120, 2).unwrap();
//! let result = seg.update(&marks, &UpdateOptions::default()).unwrap();
//! let labels = segment(&result.probabilities, DEFAULT_EPSILON);
//! assert_eq!(labels.len(), 128 * 128);
//! ```

pub mod dictionary;
pub mod error;
pub mod features;
pub mod graph;
pub mod grid;
pub mod io;
pub mod modelfile;
pub mod phantom;
pub mod postproc;
pub mod propagation;
pub mod segmenter;
pub mod transfer;

pub use error::{Error, Result};

pub mod prelude {
    pub use crate::dictionary::{assign_image, build_tree, AssignmentImage, KMeansTree, TreeParams};
    pub use crate::error::{Error, Result};
    pub use crate::features::{ExtractorKind, FeatureExtractor, PatchExtractor, Subsample};
    pub use crate::graph::{build_biadjacency, normalize, BiadjacencyGraph, RowNormalized, TransformPair};
    pub use crate::grid::{ClassStack, GridShape, LabelStack, PatchShape, PixelGrid, ProbabilityStack};
    pub use crate::postproc::{CentreOptions, LabelVolume};
    pub use crate::propagation::{segment, update, UpdateOptions, UserMarking, DEFAULT_EPSILON};
    pub use crate::segmenter::{DictionaryConfig, Segmenter};
    pub use crate::transfer::{apply_to_image, apply_to_stack, StackOptions, TrainedModel};
}
