//! Offline training from a marks file and transfer to new images.

use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use dictseg::io::{
    encode_label_png, encode_probabilities, encode_probability_png, read_image, read_label_png, write_file,
};
use dictseg::prelude::*;
use dictseg::segmenter::BuildTimings;
use dictseg::transfer::{encode_stack_outputs, ModelMetadata, StackOutput};

use crate::error::{CliError, Result};
use crate::settings::Settings;

pub const MODEL_FILE: &str = "model.dseg";
pub const PROBABILITIES_FILE: &str = "probabilities.prob";
pub const SEGMENTATION_FILE: &str = "segmentation.png";

/// Full-precision probabilities of slice `z` written by [`apply`].
pub fn slice_probabilities_file(z: usize) -> String {
    format!("slice_{z:04}.prob")
}

#[derive(Debug)]
pub struct TrainReport {
    pub model: TrainedModel,
    pub probabilities: ProbabilityStack,
    pub timings: BuildTimings,
    pub update_ms: f64,
    pub files: Vec<PathBuf>,
}

/// Reads a single image; multi-page files are rejected.
pub fn read_single_image(path: &Path) -> Result<PixelGrid> {
    let mut pages = read_image(path)?;
    if pages.len() != 1 {
        return Err(CliError::Invalid(format!(
            "{}: expected one image, found {} pages",
            path.display(),
            pages.len()
        )));
    }
    Ok(pages.remove(0))
}

/// Reads a marks PNG (palette index or gray value = class, 0 = unmarked).
pub fn read_marks(path: &Path, shape: GridShape, classes: Option<usize>) -> Result<UserMarking> {
    let (marks_shape, labels) = read_label_png(path)?;
    if marks_shape != shape {
        return Err(CliError::Invalid(format!(
            "{}: marks are {}x{}, image is {}x{}",
            path.display(),
            marks_shape.width,
            marks_shape.height,
            shape.width,
            shape.height
        )));
    }
    let top = labels.iter().copied().max().unwrap_or(0) as usize;
    let classes = classes.unwrap_or(top.max(2));
    Ok(UserMarking::from_label_map(&labels, classes)?)
}

/// Builds the dictionary and graph of `image`, propagates `marks` and
/// writes the model plus probability and segmentation outputs to `out`.
pub fn train(image: &PixelGrid, marks: &UserMarking, settings: &Settings, source: Option<String>, out: &Path) -> Result<TrainReport> {
    let config = settings.dictionary();
    let options = settings.update_options()?;
    let seg = Segmenter::build(image, &config)?;
    let t = Instant::now();
    let result = seg.update(marks, &options)?;
    let update_ms = t.elapsed().as_secs_f64() * 1e3;
    let model = TrainedModel::train(
        Arc::clone(seg.tree()),
        seg.transforms(),
        &result.final_labels,
        ModelMetadata {
            source,
            extractor: config.extractor,
            options: Some(options),
            marked_pixels: marks.len(),
        },
    )?;

    let shape = image.shape();
    let p = &result.probabilities;
    let mut files = vec![
        (MODEL_FILE.to_string(), model.to_bytes()),
        (PROBABILITIES_FILE.to_string(), encode_probabilities(shape, p)?),
        (
            SEGMENTATION_FILE.to_string(),
            encode_label_png(shape, &segment(p, options.epsilon))?,
        ),
    ];
    for c in 0..p.classes() {
        files.push((
            format!("probability_c{}.png", c + 1),
            encode_probability_png(shape, &p.layer(c))?,
        ));
    }
    let files = write_all(out, files)?;
    Ok(TrainReport {
        model,
        probabilities: result.probabilities,
        timings: seg.timings(),
        update_ms,
        files,
    })
}

/// Reads every page of every input, in order.
pub fn read_stack(inputs: &[PathBuf]) -> Result<Vec<PixelGrid>> {
    let mut slices = Vec::new();
    for p in inputs {
        slices.extend(read_image(p)?);
    }
    if slices.is_empty() {
        return Err(CliError::Invalid("no input images".into()));
    }
    Ok(slices)
}

/// Transfers `model` to every slice and writes the stack outputs plus one
/// full-precision probability file per slice.
pub fn apply(model: &TrainedModel, slices: &[PixelGrid], settings: &Settings, out: &Path) -> Result<(StackOutput, Vec<PathBuf>)> {
    let opts = settings.stack_options();
    let progress = |done: usize, total: usize| log::info!("slice {done}/{total}");
    let output = apply_to_stack(slices, model, &opts, &progress)?;
    let mut files = encode_stack_outputs(&output, opts.centres.is_some())?;
    let shape = slices[0].shape();
    for (z, p) in output.probabilities.iter().enumerate() {
        files.push((slice_probabilities_file(z), encode_probabilities(shape, p)?));
    }
    let files = write_all(out, files)?;
    Ok((output, files))
}

fn write_all(dir: &Path, files: Vec<(String, Vec<u8>)>) -> Result<Vec<PathBuf>> {
    files
        .into_iter()
        .map(|(name, bytes)| {
            let path = dir.join(name);
            write_file(&path, &bytes)?;
            Ok(path)
        })
        .collect()
}
