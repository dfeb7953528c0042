//! Reusing learned dictionary probabilities on unseen images and stacks.

use std::path::Path;
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dictionary::{assign_image, KMeansTree};
use crate::error::{Error, Result};
use crate::features::ExtractorKind;
use crate::graph::{build_biadjacency, normalize, TransformPair};
use crate::grid::{ClassStack, GridShape, LabelStack, PixelGrid, ProbabilityStack};
use crate::io::{encode_tiff_u16, encode_tiff_u8, quantize_u16};
use crate::modelfile::{
    f64s_to_bytes, read_dictionary, write_dictionary, Cursor, Section, TAG_METADATA,
    TAG_PROBABILITIES,
};
use crate::postproc::{
    detect_centres, remove_small_components, write_centres_csv, Centre, CentreOptions, LabelVolume,
};
use crate::propagation::{segment, UpdateOptions, DEFAULT_EPSILON};

/// Where a model came from.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelMetadata {
    pub source: Option<String>,
    pub extractor: ExtractorKind,
    pub options: Option<UpdateOptions>,
    pub marked_pixels: usize,
}

/// A dictionary plus the class probabilities of each dictionary pixel.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainedModel {
    tree: Arc<KMeansTree>,
    probabilities: ClassStack,
    empty: Vec<bool>,
    metadata: ModelMetadata,
}

/// `D = T1·L`; rows of empty dictionary pixels are zero.
pub fn dictionary_probabilities(labels: &LabelStack, transforms: &TransformPair) -> Result<ClassStack> {
    transforms.t1().apply(labels)
}

impl TrainedModel {
    /// Folds the final label stack of a session into dictionary probabilities.
    pub fn train(
        tree: Arc<KMeansTree>,
        transforms: &TransformPair,
        final_labels: &LabelStack,
        metadata: ModelMetadata,
    ) -> Result<Self> {
        let probabilities = dictionary_probabilities(final_labels, transforms)?;
        Self::from_parts(
            tree,
            probabilities,
            transforms.empty_dict_pixels().to_vec(),
            metadata,
        )
    }

    pub fn from_parts(
        tree: Arc<KMeansTree>,
        probabilities: ClassStack,
        empty: Vec<bool>,
        metadata: ModelMetadata,
    ) -> Result<Self> {
        let m = tree.patch().area() * tree.len();
        if probabilities.rows() != m || empty.len() != m {
            return Err(Error::shape(
                format!("{m} dictionary pixels"),
                format!("{} probability rows, {} mask entries", probabilities.rows(), empty.len()),
            ));
        }
        if probabilities.classes() < 2 {
            return Err(Error::Config("a model needs at least two classes".into()));
        }
        Ok(TrainedModel {
            tree,
            probabilities,
            empty,
            metadata,
        })
    }

    pub fn tree(&self) -> &Arc<KMeansTree> {
        &self.tree
    }

    pub fn classes(&self) -> usize {
        self.probabilities.classes()
    }

    pub fn probabilities(&self) -> &ClassStack {
        &self.probabilities
    }

    pub fn empty_mask(&self) -> &[bool] {
        &self.empty
    }

    pub fn metadata(&self) -> &ModelMetadata {
        &self.metadata
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let m = self.probabilities.rows();
        let mut prob = Vec::with_capacity(12 + m + 8 * self.probabilities.data().len());
        prob.extend_from_slice(&(self.classes() as u32).to_le_bytes());
        prob.extend_from_slice(&(m as u64).to_le_bytes());
        prob.extend(self.empty.iter().map(|&e| e as u8));
        prob.extend(f64s_to_bytes(self.probabilities.data()));
        let meta = serde_json::to_vec(&self.metadata).expect("metadata serializes");
        let sections = [
            Section {
                tag: TAG_PROBABILITIES,
                payload: prob,
            },
            Section {
                tag: TAG_METADATA,
                payload: meta,
            },
        ];
        let mut out = Vec::new();
        write_dictionary(&self.tree, &sections, &mut out).expect("writing to memory");
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let (tree, sections) = read_dictionary(bytes)?;
        let prob = sections
            .iter()
            .find(|s| s.tag == TAG_PROBABILITIES)
            .ok_or_else(|| Error::Corruption("model has no probability section".into()))?;
        let mut cur = Cursor::new(&prob.payload);
        let classes = cur.u32()? as usize;
        let rows = cur.u64()? as usize;
        let empty = cur.take(rows)?.iter().map(|&b| b != 0).collect();
        let values = cur.f64s(
            rows.checked_mul(classes)
                .ok_or_else(|| Error::Corruption("probability size overflow".into()))?,
        )?;
        if !cur.is_done() {
            return Err(Error::Corruption("trailing bytes in probability section".into()));
        }
        let probabilities = ClassStack::from_vec(rows, classes, values)?;
        let metadata = match sections.iter().find(|s| s.tag == TAG_METADATA) {
            Some(s) => serde_json::from_slice(&s.payload)
                .map_err(|e| Error::Corruption(format!("model metadata: {e}")))?,
            None => ModelMetadata::default(),
        };
        Self::from_parts(Arc::new(tree), probabilities, empty, metadata)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}

/// `P̂ = T̂2·D` for an image linked to the model's dictionary.
pub fn apply_to_image(image: &PixelGrid, model: &TrainedModel) -> Result<ProbabilityStack> {
    let assignment = assign_image(image, model.tree())?;
    let graph = build_biadjacency(&assignment, model.tree().len())?;
    let transforms = normalize(&graph);
    transforms.t2().apply(model.probabilities())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct StackOptions {
    pub epsilon: f64,
    /// `(class, min_size)`: components of `class` smaller than `min_size`
    /// voxels are merged into their surroundings.
    pub min_component: Option<(u16, usize)>,
    /// `(class, options)`: centres detected on that class layer per slice.
    pub centres: Option<(u16, CentreOptions)>,
    /// Upper bound on worker threads; 0 uses the global pool.
    pub max_workers: usize,
}

impl Default for StackOptions {
    fn default() -> Self {
        StackOptions {
            epsilon: DEFAULT_EPSILON,
            min_component: None,
            centres: None,
            max_workers: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct StackOutput {
    pub probabilities: Vec<ProbabilityStack>,
    pub labels: LabelVolume,
    pub centres: Vec<Centre>,
}

/// Applies the model slice by slice, then postprocesses the label volume.
/// `progress` receives `(finished_slices, total)`.
pub fn apply_to_stack(
    slices: &[PixelGrid],
    model: &TrainedModel,
    opts: &StackOptions,
    progress: &(dyn Fn(usize, usize) + Sync),
) -> Result<StackOutput> {
    let first = slices
        .first()
        .ok_or_else(|| Error::Config("empty image stack".into()))?;
    let shape = first.shape();
    for (index, s) in slices.iter().enumerate() {
        if s.shape() != shape || s.channels() != first.channels() {
            return Err(Error::Slice {
                index,
                source: Box::new(Error::shape(
                    format!("{}x{}x{}", shape.width, shape.height, first.channels()),
                    format!("{}x{}x{}", s.width(), s.height(), s.channels()),
                )),
            });
        }
    }
    if let Some((class, _)) = opts.centres {
        if class == 0 || class as usize > model.classes() {
            return Err(Error::Config(format!("centre class {class} not in model")));
        }
    }

    let done = std::sync::atomic::AtomicUsize::new(0);
    let total = slices.len();
    let run = || {
        slices
            .par_iter()
            .enumerate()
            .map(|(index, s)| {
                let p = apply_to_image(s, model).map_err(|e| Error::Slice {
                    index,
                    source: Box::new(e),
                })?;
                let finished = done.fetch_add(1, std::sync::atomic::Ordering::SeqCst) + 1;
                progress(finished, total);
                Ok(p)
            })
            .collect::<Result<Vec<_>>>()
    };
    let probabilities = if opts.max_workers > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(opts.max_workers)
            .build()
            .map_err(|e| Error::Config(format!("worker pool: {e}")))?
            .install(run)?
    } else {
        run()?
    };

    let maps = probabilities.iter().map(|p| segment(p, opts.epsilon)).collect();
    let mut labels = LabelVolume::from_slices(shape, maps)?;
    if let Some((class, min_size)) = opts.min_component {
        labels = remove_small_components(&labels, class, min_size);
    }
    let mut centres = Vec::new();
    if let Some((class, centre_opts)) = opts.centres {
        for (z, p) in probabilities.iter().enumerate() {
            let layer = p.layer(class as usize - 1);
            centres.extend(
                detect_centres(&layer, shape, &centre_opts)?
                    .into_iter()
                    .map(|c| Centre { slice: z, ..c }),
            );
        }
    }
    Ok(StackOutput {
        probabilities,
        labels,
        centres,
    })
}

/// Output files of a transferred stack: `labels.tif` (8-bit class ids, 0 =
/// unresolved), one `probability_c{c}.tif` per class (16-bit,
/// `round(65535·p)`) and `centres.csv` when `with_centres` is set.
pub fn encode_stack_outputs(out: &StackOutput, with_centres: bool) -> Result<Vec<(String, Vec<u8>)>> {
    let shape = GridShape::new(out.labels.width(), out.labels.height());
    let mut files = Vec::new();
    let pages: Vec<Vec<u8>> = (0..out.labels.depth())
        .map(|z| out.labels.slice(z).iter().map(|&l| l.min(255) as u8).collect())
        .collect();
    files.push(("labels.tif".to_string(), encode_tiff_u8(shape, &pages)?));
    let classes = out.probabilities.first().map_or(0, |p| p.classes());
    for c in 0..classes {
        let pages: Vec<Vec<u16>> = out
            .probabilities
            .iter()
            .map(|p| (0..p.rows()).map(|i| quantize_u16(p.row(i)[c])).collect())
            .collect();
        files.push((format!("probability_c{}.tif", c + 1), encode_tiff_u16(shape, &pages)?));
    }
    if with_centres {
        let mut csv = Vec::new();
        write_centres_csv(&out.centres, &mut csv)?;
        files.push(("centres.csv".to_string(), csv));
    }
    Ok(files)
}
