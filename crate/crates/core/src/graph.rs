//! The image↔dictionary biadjacency matrix and its two averaging transforms.
//!
//! `B` is `n×m` with `n = X·Y` image pixels and `m = M²·K` dictionary pixels.
//! An entry `(i, j)` means image pixel `i` sits at displacement `(dx, dy)` of
//! a patch assigned to cluster `k`, with `j = (dx, dy, k)`. A pair `(i, j)`
//! fixes the displacement, hence the patch centre, so every relation occurs
//! at most once and `B` is binary. Only the sparsity pattern is stored.
//!
//! `T1 = diag(Bᵀ1)⁻¹Bᵀ` averages image values into dictionary pixels and
//! `T2 = diag(B1)⁻¹B` averages dictionary values back onto the image. Both
//! are stored as a shared pattern plus one weight per row.

use std::io::Write;
use std::sync::Arc;

use rayon::prelude::*;

use crate::dictionary::AssignmentImage;
use crate::error::{Error, Result};
use crate::grid::{ClassStack, GridShape, PatchShape};

/// Compressed sparse rows of a 0/1 matrix.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SparsePattern {
    rows: usize,
    cols: usize,
    indptr: Vec<usize>,
    indices: Vec<u32>,
}

impl SparsePattern {
    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn nnz(&self) -> usize {
        self.indices.len()
    }

    /// Column indices of row `r`, ascending.
    #[inline]
    pub fn row(&self, r: usize) -> &[u32] {
        &self.indices[self.indptr[r]..self.indptr[r + 1]]
    }

    pub fn row_len(&self, r: usize) -> usize {
        self.indptr[r + 1] - self.indptr[r]
    }

    pub fn indptr(&self) -> &[usize] {
        &self.indptr
    }

    pub fn indices(&self) -> &[u32] {
        &self.indices
    }

    /// Counting-sort transpose; rows of the result are ascending.
    pub fn transpose(&self) -> SparsePattern {
        let mut counts = vec![0usize; self.cols + 1];
        for &c in &self.indices {
            counts[c as usize + 1] += 1;
        }
        for c in 0..self.cols {
            counts[c + 1] += counts[c];
        }
        let indptr = counts.clone();
        let mut next = counts;
        let mut indices = vec![0u32; self.nnz()];
        for r in 0..self.rows {
            for &c in self.row(r) {
                let slot = &mut next[c as usize];
                indices[*slot] = r as u32;
                *slot += 1;
            }
        }
        SparsePattern {
            rows: self.cols,
            cols: self.rows,
            indptr,
            indices,
        }
    }
}

/// `B` together with its transpose and the degree vectors.
#[derive(Debug, Clone)]
pub struct BiadjacencyGraph {
    shape: GridShape,
    patch: PatchShape,
    clusters: usize,
    image_to_dict: Arc<SparsePattern>,
    dict_to_image: Arc<SparsePattern>,
}

impl BiadjacencyGraph {
    pub fn shape(&self) -> GridShape {
        self.shape
    }

    pub fn patch(&self) -> PatchShape {
        self.patch
    }

    /// Number of dictionary elements `K`.
    pub fn clusters(&self) -> usize {
        self.clusters
    }

    /// `n = X·Y`.
    pub fn image_pixels(&self) -> usize {
        self.shape.len()
    }

    /// `m = M²·K`.
    pub fn dict_pixels(&self) -> usize {
        self.patch.area() * self.clusters
    }

    pub fn nnz(&self) -> usize {
        self.image_to_dict.nnz()
    }

    /// `B` as rows over image pixels.
    pub fn b(&self) -> &SparsePattern {
        &self.image_to_dict
    }

    /// `Bᵀ` as rows over dictionary pixels.
    pub fn bt(&self) -> &SparsePattern {
        &self.dict_to_image
    }

    /// Row sums `B·1` (length `n`).
    pub fn image_degrees(&self) -> Vec<usize> {
        (0..self.image_pixels())
            .map(|i| self.image_to_dict.row_len(i))
            .collect()
    }

    /// Column sums `Bᵀ·1` (length `m`).
    pub fn dict_degrees(&self) -> Vec<usize> {
        (0..self.dict_pixels())
            .map(|j| self.dict_to_image.row_len(j))
            .collect()
    }

    /// Writes `B` in Matrix Market coordinate format with 1-based indices.
    pub fn write_matrix_market<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "%%MatrixMarket matrix coordinate integer general")?;
        writeln!(
            out,
            "{} {} {}",
            self.image_pixels(),
            self.dict_pixels(),
            self.nnz()
        )?;
        for i in 0..self.image_pixels() {
            for &j in self.image_to_dict.row(i) {
                writeln!(out, "{} {} 1", i + 1, j + 1)?;
            }
        }
        Ok(())
    }
}

/// Builds `B` from an assignment image over a dictionary of `clusters`
/// elements.
pub fn build_biadjacency(assignment: &AssignmentImage, clusters: usize) -> Result<BiadjacencyGraph> {
    let max = assignment.max_id() as usize;
    if max > clusters {
        return Err(Error::Corruption(format!(
            "assignment references node {max} but the dictionary has {clusters}"
        )));
    }
    let patch = assignment.patch();
    let shape = assignment.shape();
    let m = patch.area() * clusters;
    if m > u32::MAX as usize || shape.len() > u32::MAX as usize {
        return Err(Error::Config(format!(
            "{m} dictionary pixels or {} image pixels exceed 32-bit indexing",
            shape.len()
        )));
    }
    let rows = build_rows(assignment, m);
    let cols = rows.transpose();
    Ok(BiadjacencyGraph {
        shape,
        patch,
        clusters,
        image_to_dict: Arc::new(rows),
        dict_to_image: Arc::new(cols),
    })
}

/// Range of valid patch centres along one axis covering coordinate `v`.
#[inline]
fn covering_centres(v: usize, s: usize, len: usize) -> std::ops::Range<usize> {
    if len < 2 * s + 1 {
        return 0..0;
    }
    let lo = v.saturating_sub(s).max(s);
    let hi = (v + s).min(len - 1 - s);
    if lo > hi {
        0..0
    } else {
        lo..hi + 1
    }
}

fn build_rows(assignment: &AssignmentImage, m: usize) -> SparsePattern {
    let shape = assignment.shape();
    let (w, h) = (shape.width, shape.height);
    let patch = assignment.patch();
    let s = patch.half();
    let area = patch.area() as u32;
    let size = patch.size();
    let values = assignment.values();

    let x_len: Vec<usize> = (0..w).map(|x| covering_centres(x, s, w).len()).collect();
    let mut indptr = Vec::with_capacity(w * h + 1);
    indptr.push(0usize);
    for y in 0..h {
        let ny = covering_centres(y, s, h).len();
        for &nx in &x_len {
            indptr.push(indptr.last().unwrap() + nx * ny);
        }
    }
    let mut indices = vec![0u32; *indptr.last().unwrap()];

    // Split the index buffer into one mutable slice per image row.
    let mut row_slices = Vec::with_capacity(h);
    let mut rest = indices.as_mut_slice();
    for y in 0..h {
        let len = indptr[(y + 1) * w] - indptr[y * w];
        let (head, tail) = rest.split_at_mut(len);
        row_slices.push(head);
        rest = tail;
    }

    row_slices.into_par_iter().enumerate().for_each(|(y, out)| {
        let ys = covering_centres(y, s, h);
        let mut pos = 0;
        for x in 0..w {
            let start = pos;
            for cy in ys.clone() {
                // Displacement of pixel y relative to centre cy is y - cy.
                let disp_row = (y + s - cy) * size;
                for cx in covering_centres(x, s, w) {
                    let k = values[cx + cy * w];
                    debug_assert!(k != 0);
                    let disp = disp_row + (x + s - cx);
                    out[pos] = disp as u32 + (k - 1) * area;
                    pos += 1;
                }
            }
            let row = &mut out[start..pos];
            row.sort_unstable();
            debug_assert!(row.windows(2).all(|p| p[0] < p[1]));
        }
    });

    SparsePattern {
        rows: w * h,
        cols: m,
        indptr,
        indices,
    }
}

/// A row-normalized 0/1 matrix: entry `(r, c)` equals `weights[r]` when
/// `c` is in the pattern of row `r`.
#[derive(Debug, Clone)]
pub struct RowNormalized {
    pattern: Arc<SparsePattern>,
    weights: Vec<f64>,
}

impl RowNormalized {
    fn from_pattern(pattern: Arc<SparsePattern>) -> Self {
        let weights = (0..pattern.rows())
            .map(|r| match pattern.row_len(r) {
                0 => 0.0,
                len => 1.0 / len as f64,
            })
            .collect();
        RowNormalized { pattern, weights }
    }

    pub fn rows(&self) -> usize {
        self.pattern.rows()
    }

    pub fn cols(&self) -> usize {
        self.pattern.cols()
    }

    pub fn pattern(&self) -> &SparsePattern {
        &self.pattern
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// All stored `(row, col, value)` entries in row order.
    pub fn entries(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        (0..self.rows()).flat_map(move |r| {
            self.pattern
                .row(r)
                .iter()
                .map(move |&c| (r, c as usize, self.weights[r]))
        })
    }

    /// Sparse times dense: `self · input`.
    pub fn apply(&self, input: &ClassStack) -> Result<ClassStack> {
        if input.rows() != self.cols() {
            return Err(Error::shape(
                format!("{} rows", self.cols()),
                format!("{} rows", input.rows()),
            ));
        }
        let classes = input.classes();
        let mut out = ClassStack::zeros(self.rows(), classes);
        match classes {
            1 => self.apply_fixed::<1>(input.data(), out.data_mut()),
            2 => self.apply_fixed::<2>(input.data(), out.data_mut()),
            3 => self.apply_fixed::<3>(input.data(), out.data_mut()),
            4 => self.apply_fixed::<4>(input.data(), out.data_mut()),
            _ => self.apply_dynamic(classes, input.data(), out.data_mut()),
        }
        Ok(out)
    }

    fn apply_fixed<const C: usize>(&self, input: &[f64], out: &mut [f64]) {
        const CHUNK: usize = 1024;
        out.par_chunks_mut(C * CHUNK)
            .enumerate()
            .for_each(|(chunk, block)| {
                let base = chunk * CHUNK;
                for (local, dst) in block.chunks_exact_mut(C).enumerate() {
                    let r = base + local;
                    let mut acc = [0.0f64; C];
                    for &col in self.pattern.row(r) {
                        let src = &input[col as usize * C..col as usize * C + C];
                        for c in 0..C {
                            acc[c] += src[c];
                        }
                    }
                    let w = self.weights[r];
                    for c in 0..C {
                        dst[c] = acc[c] * w;
                    }
                }
            });
    }

    fn apply_dynamic(&self, classes: usize, input: &[f64], out: &mut [f64]) {
        out.par_chunks_mut(classes)
            .with_min_len(1024)
            .enumerate()
            .for_each(|(r, dst)| {
                for &col in self.pattern.row(r) {
                    let src = &input[col as usize * classes..(col as usize + 1) * classes];
                    for (d, s) in dst.iter_mut().zip(src) {
                        *d += s;
                    }
                }
                let w = self.weights[r];
                dst.iter_mut().for_each(|d| *d *= w);
            });
    }
}

/// `T1` (dictionary × image) and `T2` (image × dictionary).
#[derive(Debug, Clone)]
pub struct TransformPair {
    image_to_dict: RowNormalized,
    dict_to_image: RowNormalized,
    empty_dict_pixels: Vec<bool>,
}

impl TransformPair {
    /// `T1`, mapping image values to dictionary pixels.
    pub fn t1(&self) -> &RowNormalized {
        &self.image_to_dict
    }

    /// `T2`, mapping dictionary values to image pixels.
    pub fn t2(&self) -> &RowNormalized {
        &self.dict_to_image
    }

    /// Dictionary pixels with no related image pixel (zero rows of `T1`).
    pub fn empty_dict_pixels(&self) -> &[bool] {
        &self.empty_dict_pixels
    }

    pub fn image_pixels(&self) -> usize {
        self.dict_to_image.rows()
    }

    pub fn dict_pixels(&self) -> usize {
        self.image_to_dict.rows()
    }
}

pub fn normalize(graph: &BiadjacencyGraph) -> TransformPair {
    let image_to_dict = RowNormalized::from_pattern(graph.dict_to_image.clone());
    let dict_to_image = RowNormalized::from_pattern(graph.image_to_dict.clone());
    let empty_dict_pixels = (0..image_to_dict.rows())
        .map(|j| image_to_dict.pattern.row_len(j) == 0)
        .collect();
    TransformPair {
        image_to_dict,
        dict_to_image,
        empty_dict_pixels,
    }
}

/// `T1 · V`: averages image values over the pixels related to each
/// dictionary pixel. Rows of empty dictionary pixels are zero.
pub fn apply_image_to_dict(transforms: &TransformPair, values: &ClassStack) -> Result<ClassStack> {
    transforms.t1().apply(values)
}

/// `T2 · W`: averages dictionary values over the dictionary pixels related to
/// each image pixel.
pub fn apply_dict_to_image(transforms: &TransformPair, values: &ClassStack) -> Result<ClassStack> {
    transforms.t2().apply(values)
}
