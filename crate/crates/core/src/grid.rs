//! Raster and stack types shared by every stage of the pipeline.
//!
//! All linear indices are 0-based. An image pixel `(x, y)` maps to
//! `x + y * width`; a dictionary pixel at displacement `(dx, dy)` in the patch
//! of cluster `k` (1-based cluster ids, 0 is reserved for "unassigned") maps to
//! `(dx + s) + (dy + s) * M + (k - 1) * M²`.

use crate::error::{Error, Result};

/// Width and height of an image grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct GridShape {
    pub width: usize,
    pub height: usize,
}

impl GridShape {
    pub fn new(width: usize, height: usize) -> Self {
        GridShape { width, height }
    }

    /// Number of pixels `n = X·Y`.
    pub fn len(&self) -> usize {
        self.width * self.height
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn linear_index(&self, x: usize, y: usize) -> Result<usize> {
        if x >= self.width || y >= self.height {
            return Err(Error::Bounds(format!(
                "pixel ({x}, {y}) outside {}x{} grid",
                self.width, self.height
            )));
        }
        Ok(x + y * self.width)
    }

    pub fn coords(&self, index: usize) -> Result<(usize, usize)> {
        if index >= self.len() {
            return Err(Error::Bounds(format!(
                "linear index {index} outside grid of {} pixels",
                self.len()
            )));
        }
        Ok((index % self.width, index / self.width))
    }
}

/// Geometry of a square, odd-sized patch.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct PatchShape {
    size: usize,
}

impl PatchShape {
    pub fn new(size: usize) -> Result<Self> {
        if size == 0 || size % 2 == 0 {
            return Err(Error::Config(format!(
                "patch size must be a positive odd number, got {size}"
            )));
        }
        Ok(PatchShape { size })
    }

    /// Patch side `M`.
    pub fn size(&self) -> usize {
        self.size
    }

    /// Half-width `s = (M - 1) / 2`.
    pub fn half(&self) -> usize {
        self.size / 2
    }

    /// Number of pixels in one patch, `M²`.
    pub fn area(&self) -> usize {
        self.size * self.size
    }

    /// Index of displacement `(dx, dy)` within a patch, in `0..M²`.
    pub fn displacement_index(&self, dx: isize, dy: isize) -> Result<usize> {
        let s = self.half() as isize;
        if dx.abs() > s || dy.abs() > s {
            return Err(Error::Bounds(format!(
                "displacement ({dx}, {dy}) outside patch of half-width {s}"
            )));
        }
        Ok((dx + s) as usize + (dy + s) as usize * self.size)
    }

    /// Linear index of dictionary pixel `(dx, dy, k)` for 1-based cluster id `k`.
    pub fn dict_linear_index(&self, dx: isize, dy: isize, k: usize) -> Result<usize> {
        if k == 0 {
            return Err(Error::Bounds("cluster ids start at 1".into()));
        }
        Ok(self.displacement_index(dx, dy)? + (k - 1) * self.area())
    }

    /// Inverse of [`PatchShape::dict_linear_index`].
    pub fn dict_coords(&self, j: usize) -> (isize, isize, usize) {
        let s = self.half() as isize;
        let within = j % self.area();
        let k = j / self.area() + 1;
        let dx = (within % self.size) as isize - s;
        let dy = (within / self.size) as isize - s;
        (dx, dy, k)
    }

    /// Number of valid patch centres on a grid, `(X - 2s)(Y - 2s)`.
    pub fn centre_count(&self, shape: GridShape) -> usize {
        let s2 = 2 * self.half();
        shape.width.saturating_sub(s2) * shape.height.saturating_sub(s2)
    }

    /// Whether an `M×M` window centred at `(x, y)` fits inside the grid.
    pub fn fits(&self, shape: GridShape, x: usize, y: usize) -> bool {
        let s = self.half();
        x >= s && y >= s && x + s < shape.width && y + s < shape.height
    }
}

/// Multi-channel raster with values normalized to `[0, 1]`, row-major with
/// channels interleaved.
#[derive(Debug, Clone, PartialEq)]
pub struct PixelGrid {
    width: usize,
    height: usize,
    channels: usize,
    data: Vec<f64>,
}

impl PixelGrid {
    pub fn new(width: usize, height: usize, channels: usize, data: Vec<f64>) -> Result<Self> {
        if channels == 0 {
            return Err(Error::Config("an image needs at least one channel".into()));
        }
        let expected = width * height * channels;
        if data.len() != expected {
            return Err(Error::shape(
                format!("{expected} values ({width}x{height}x{channels})"),
                data.len(),
            ));
        }
        if let Some(bad) = data.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::Config(format!(
                "pixel values must be finite and within [0, 1], found {bad}"
            )));
        }
        Ok(PixelGrid {
            width,
            height,
            channels,
            data,
        })
    }

    /// Grid filled with a single value on every channel.
    pub fn constant(width: usize, height: usize, channels: usize, value: f64) -> Result<Self> {
        Self::new(width, height, channels, vec![value; width * height * channels])
    }

    pub fn from_u8(width: usize, height: usize, channels: usize, raw: &[u8]) -> Result<Self> {
        let data = raw.iter().map(|&v| f64::from(v) / 255.0).collect();
        Self::new(width, height, channels, data)
    }

    pub fn from_u16(width: usize, height: usize, channels: usize, raw: &[u16]) -> Result<Self> {
        let data = raw.iter().map(|&v| f64::from(v) / 65535.0).collect();
        Self::new(width, height, channels, data)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn shape(&self) -> GridShape {
        GridShape::new(self.width, self.height)
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize, channel: usize) -> f64 {
        self.data[(x + y * self.width) * self.channels + channel]
    }

    /// All channel values of one pixel.
    #[inline]
    pub fn pixel(&self, x: usize, y: usize) -> &[f64] {
        let start = (x + y * self.width) * self.channels;
        &self.data[start..start + self.channels]
    }
}

/// An `n×C` row-major matrix of per-pixel (or per-dictionary-pixel) class
/// values.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassStack {
    rows: usize,
    classes: usize,
    data: Vec<f64>,
}

/// User labels arranged as an `n×C` stack.
pub type LabelStack = ClassStack;
/// Per-pixel class probabilities, `n×C`.
pub type ProbabilityStack = ClassStack;

impl ClassStack {
    pub fn zeros(rows: usize, classes: usize) -> Self {
        ClassStack {
            rows,
            classes,
            data: vec![0.0; rows * classes],
        }
    }

    pub fn filled(rows: usize, classes: usize, value: f64) -> Self {
        ClassStack {
            rows,
            classes,
            data: vec![value; rows * classes],
        }
    }

    pub fn from_vec(rows: usize, classes: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * classes {
            return Err(Error::shape(
                format!("{} values ({rows}x{classes})", rows * classes),
                data.len(),
            ));
        }
        Ok(ClassStack {
            rows,
            classes,
            data,
        })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.classes..(i + 1) * self.classes]
    }

    #[inline]
    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.classes..(i + 1) * self.classes]
    }

    /// One class layer as a contiguous vector of length `rows`.
    pub fn layer(&self, class: usize) -> Vec<f64> {
        self.data
            .iter()
            .skip(class)
            .step_by(self.classes)
            .copied()
            .collect()
    }

    pub fn row_sums(&self) -> Vec<f64> {
        self.data
            .chunks_exact(self.classes)
            .map(|r| r.iter().sum())
            .collect()
    }

    /// Largest absolute entrywise difference. Panics on shape mismatch.
    pub fn max_abs_diff(&self, other: &ClassStack) -> f64 {
        assert_eq!((self.rows, self.classes), (other.rows, other.classes));
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn image_index_examples() {
        // 1-based (x, y) from the 9x6 example grid, shifted to 0-based.
        let shape = GridShape::new(9, 6);
        let one_based = |x: usize, y: usize| shape.linear_index(x - 1, y - 1).unwrap() + 1;
        assert_eq!(one_based(1, 1), 1);
        assert_eq!(one_based(3, 2), 12);
        assert_eq!(one_based(9, 6), 54);
        assert_eq!(shape.len(), 54);
    }

    #[test]
    fn image_index_out_of_range() {
        let shape = GridShape::new(9, 6);
        assert!(matches!(shape.linear_index(9, 0), Err(Error::Bounds(_))));
        assert!(matches!(shape.linear_index(0, 6), Err(Error::Bounds(_))));
        assert!(shape.coords(54).is_err());
    }

    #[test]
    fn image_index_roundtrip_exhaustive() {
        for (w, h) in [(1, 1), (3, 7), (9, 6), (16, 5)] {
            let shape = GridShape::new(w, h);
            let mut seen = vec![false; shape.len()];
            for y in 0..h {
                for x in 0..w {
                    let i = shape.linear_index(x, y).unwrap();
                    assert!(!seen[i]);
                    seen[i] = true;
                    assert_eq!(shape.coords(i).unwrap(), (x, y));
                }
            }
            assert!(seen.into_iter().all(|v| v));
        }
    }

    #[test]
    fn dict_index_examples() {
        let p = PatchShape::new(3).unwrap();
        assert_eq!(p.dict_linear_index(-1, -1, 1).unwrap(), 0);
        assert_eq!(p.dict_linear_index(0, 0, 1).unwrap(), 4);
        let k = 17;
        assert_eq!(p.dict_linear_index(1, 1, k).unwrap(), 9 * k - 1);
    }

    #[test]
    fn dict_index_errors() {
        assert!(matches!(PatchShape::new(4), Err(Error::Config(_))));
        assert!(matches!(PatchShape::new(0), Err(Error::Config(_))));
        let p = PatchShape::new(5).unwrap();
        assert!(matches!(p.dict_linear_index(3, 0, 1), Err(Error::Bounds(_))));
        assert!(matches!(p.dict_linear_index(0, -3, 1), Err(Error::Bounds(_))));
        assert!(p.dict_linear_index(0, 0, 0).is_err());
    }

    #[test]
    fn dict_index_is_bijection() {
        for m in [1, 3, 5, 9] {
            let p = PatchShape::new(m).unwrap();
            let s = p.half() as isize;
            let k_max = 4;
            let mut seen = vec![false; p.area() * k_max];
            for k in 1..=k_max {
                for dy in -s..=s {
                    for dx in -s..=s {
                        let j = p.dict_linear_index(dx, dy, k).unwrap();
                        assert!(!seen[j]);
                        seen[j] = true;
                        assert_eq!(p.dict_coords(j), (dx, dy, k));
                    }
                }
            }
            assert!(seen.into_iter().all(|v| v));
        }
    }

    #[test]
    fn pixel_grid_rejects_bad_values() {
        assert!(PixelGrid::new(2, 2, 1, vec![0.0; 3]).is_err());
        assert!(PixelGrid::new(1, 1, 1, vec![1.5]).is_err());
        assert!(PixelGrid::new(1, 1, 1, vec![f64::NAN]).is_err());
        assert!(PixelGrid::new(1, 1, 0, vec![]).is_err());
        let g = PixelGrid::from_u16(1, 1, 1, &[65535]).unwrap();
        assert_eq!(g.get(0, 0, 0), 1.0);
    }

    #[test]
    fn centre_count_matches_fits() {
        let p = PatchShape::new(5).unwrap();
        let shape = GridShape::new(11, 7);
        let count = (0..7)
            .flat_map(|y| (0..11).map(move |x| (x, y)))
            .filter(|&(x, y)| p.fits(shape, x, y))
            .count();
        assert_eq!(count, p.centre_count(shape));
        assert_eq!(count, 7 * 3);
    }
}
