//! From user markings to probability images.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::TransformPair;
use crate::grid::{ClassStack, LabelStack, ProbabilityStack};

/// Default margin below which two class values count as tied.
pub const DEFAULT_EPSILON: f64 = 1e-6;

/// Sparse per-pixel class marks. Classes are 1-based; setting a pixel twice
/// keeps the latest class.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct UserMarking {
    pixels: usize,
    classes: usize,
    marks: BTreeMap<u32, u16>,
}

impl UserMarking {
    pub fn new(pixels: usize, classes: usize) -> Result<Self> {
        if classes < 2 || classes > u16::MAX as usize {
            return Err(Error::Config(format!(
                "class count must be between 2 and {}, got {classes}",
                u16::MAX
            )));
        }
        if pixels > u32::MAX as usize {
            return Err(Error::Config(format!("{pixels} pixels exceed 32-bit indexing")));
        }
        Ok(UserMarking {
            pixels,
            classes,
            marks: BTreeMap::new(),
        })
    }

    /// Reads a label map where 0 means unmarked and `c` marks class `c`.
    pub fn from_label_map(labels: &[u16], classes: usize) -> Result<Self> {
        let mut marking = Self::new(labels.len(), classes)?;
        for (i, &c) in labels.iter().enumerate() {
            if c != 0 {
                marking.set(i, c as usize)?;
            }
        }
        Ok(marking)
    }

    pub fn pixels(&self) -> usize {
        self.pixels
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn len(&self) -> usize {
        self.marks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.marks.is_empty()
    }

    /// Marks pixel `i` with `class`, returning the previous mark.
    pub fn set(&mut self, i: usize, class: usize) -> Result<Option<usize>> {
        if i >= self.pixels {
            return Err(Error::Bounds(format!(
                "pixel {i} outside image of {} pixels",
                self.pixels
            )));
        }
        if class == 0 || class > self.classes {
            return Err(Error::Config(format!(
                "class {class} outside 1..={}",
                self.classes
            )));
        }
        Ok(self.marks.insert(i as u32, class as u16).map(usize::from))
    }

    /// Removes the mark of pixel `i`, returning it.
    pub fn clear(&mut self, i: usize) -> Option<usize> {
        self.marks.remove(&(i as u32)).map(usize::from)
    }

    pub fn get(&self, i: usize) -> Option<usize> {
        self.marks.get(&(i as u32)).map(|&c| usize::from(c))
    }

    /// `(pixel, class)` pairs in pixel order.
    pub fn iter(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.marks
            .iter()
            .map(|(&i, &c)| (i as usize, usize::from(c)))
    }

    /// Dense label map, 0 for unmarked pixels.
    pub fn to_label_map(&self) -> Vec<u16> {
        let mut out = vec![0u16; self.pixels];
        for (&i, &c) in &self.marks {
            out[i as usize] = c;
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct UpdateOptions {
    /// Number of diffusion steps, 1 or 2.
    pub steps: u8,
    /// Binarise between the two diffusions.
    pub binarise: bool,
    /// Re-impose user marks between the two diffusions.
    pub overwrite: bool,
    pub epsilon: f64,
}

impl Default for UpdateOptions {
    fn default() -> Self {
        UpdateOptions {
            steps: 2,
            binarise: true,
            overwrite: true,
            epsilon: DEFAULT_EPSILON,
        }
    }
}

impl UpdateOptions {
    pub fn single_step() -> Self {
        UpdateOptions {
            steps: 1,
            binarise: false,
            overwrite: false,
            epsilon: DEFAULT_EPSILON,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(1..=2).contains(&self.steps) {
            return Err(Error::Config(format!(
                "diffusion steps must be 1 or 2, got {}",
                self.steps
            )));
        }
        if !(self.epsilon >= 0.0 && self.epsilon.is_finite()) {
            return Err(Error::Config(format!("invalid tie tolerance {}", self.epsilon)));
        }
        Ok(())
    }
}

/// One-hot rows for marked pixels, `1/C` everywhere else.
pub fn fill_unlabeled(marks: &UserMarking) -> LabelStack {
    let c = marks.classes();
    let mut stack = ClassStack::filled(marks.pixels(), c, 1.0 / c as f64);
    write_marks(&mut stack, marks);
    stack
}

fn write_marks(stack: &mut ClassStack, marks: &UserMarking) {
    for (i, class) in marks.iter() {
        let row = stack.row_mut(i);
        row.fill(0.0);
        row[class - 1] = 1.0;
    }
}

/// `P = T2·(T1·L)`.
pub fn propagate_once(labels: &LabelStack, transforms: &TransformPair) -> Result<ProbabilityStack> {
    let dict = transforms.t1().apply(labels)?;
    transforms.t2().apply(&dict)
}

/// Index of the unique maximum of `row`, if it beats the runner-up by more
/// than `epsilon`.
#[inline]
pub fn clear_argmax(row: &[f64], epsilon: f64) -> Option<usize> {
    let mut best = 0;
    for (c, &v) in row.iter().enumerate().skip(1) {
        if v > row[best] {
            best = c;
        }
    }
    let runner_up = row
        .iter()
        .enumerate()
        .filter(|&(c, _)| c != best)
        .map(|(_, &v)| v)
        .fold(f64::NEG_INFINITY, f64::max);
    (row[best] - runner_up > epsilon).then_some(best)
}

/// One-hot rows where the maximum is clear; ambiguous rows keep their values.
pub fn binarise(probabilities: &ProbabilityStack, epsilon: f64) -> LabelStack {
    let mut out = probabilities.clone();
    let classes = out.classes();
    for row in out.data_mut().chunks_exact_mut(classes) {
        if let Some(best) = clear_argmax(row, epsilon) {
            row.fill(0.0);
            row[best] = 1.0;
        }
    }
    out
}

/// Replaces rows of marked pixels by their one-hot labels.
pub fn overwrite(stack: &ClassStack, marks: &UserMarking) -> Result<ClassStack> {
    check_marks(stack, marks)?;
    let mut out = stack.clone();
    write_marks(&mut out, marks);
    Ok(out)
}

fn check_marks(stack: &ClassStack, marks: &UserMarking) -> Result<()> {
    if stack.rows() != marks.pixels() || stack.classes() != marks.classes() {
        return Err(Error::shape(
            format!("{}x{} stack", marks.pixels(), marks.classes()),
            format!("{}x{}", stack.rows(), stack.classes()),
        ));
    }
    Ok(())
}

/// Output of [`update_detailed`].
#[derive(Debug, Clone)]
pub struct UpdateResult {
    pub probabilities: ProbabilityStack,
    /// The label stack fed into the last diffusion. `T1` applied to it gives
    /// the dictionary probabilities behind `probabilities`.
    pub final_labels: LabelStack,
}

/// Runs the configured diffusion pipeline on a marking.
pub fn update(marks: &UserMarking, transforms: &TransformPair, opts: &UpdateOptions) -> Result<ProbabilityStack> {
    update_detailed(marks, transforms, opts).map(|r| r.probabilities)
}

pub fn update_detailed(
    marks: &UserMarking,
    transforms: &TransformPair,
    opts: &UpdateOptions,
) -> Result<UpdateResult> {
    opts.validate()?;
    if marks.pixels() != transforms.image_pixels() {
        return Err(Error::shape(
            format!("marking over {} pixels", transforms.image_pixels()),
            marks.pixels(),
        ));
    }
    let initial = fill_unlabeled(marks);
    if opts.steps == 1 {
        let probabilities = propagate_once(&initial, transforms)?;
        return Ok(UpdateResult {
            probabilities,
            final_labels: initial,
        });
    }
    let mut labels = propagate_once(&initial, transforms)?;
    if opts.binarise {
        labels = binarise(&labels, opts.epsilon);
    }
    if opts.overwrite {
        write_marks(&mut labels, marks);
    }
    let probabilities = propagate_once(&labels, transforms)?;
    Ok(UpdateResult {
        probabilities,
        final_labels: labels,
    })
}

/// Per-pixel class `1..=C` of the clear maximum, or 0 when unresolved.
pub fn segment(probabilities: &ProbabilityStack, epsilon: f64) -> Vec<u16> {
    probabilities
        .data()
        .chunks_exact(probabilities.classes())
        .map(|row| clear_argmax(row, epsilon).map_or(0, |c| c as u16 + 1))
        .collect()
}
