//! Synthetic test images with exact ground truth.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{GridShape, PixelGrid};
use crate::propagation::UserMarking;

/// Background class of every phantom.
pub const BACKGROUND: u16 = 1;

#[derive(Debug, Clone)]
pub struct Phantom {
    pub image: PixelGrid,
    /// Ground-truth class per pixel, 1-based.
    pub truth: Vec<u16>,
    pub classes: usize,
    /// Object centres, `(x, y)` in pixels.
    pub centres: Vec<(f64, f64)>,
    /// Object radii, parallel to `centres` (empty for texture phantoms).
    pub radii: Vec<f64>,
}

impl Phantom {
    pub fn shape(&self) -> GridShape {
        self.image.shape()
    }
}

/// Randomly packed, non-overlapping bright disks on a dark background, with
/// additive Gaussian noise. A proxy for fibre cross-sections.
///
/// The truth has two classes: pixels within `centre_radius` of a disk centre
/// are class 2, everything else (including disk rims) is class 1.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DiskParams {
    pub width: usize,
    pub height: usize,
    pub count: usize,
    pub radius_min: f64,
    pub radius_max: f64,
    /// Minimum gap between disk edges.
    pub gap: f64,
    pub foreground: f64,
    pub background: f64,
    pub noise: f64,
    pub centre_radius: f64,
    pub seed: u64,
}

impl Default for DiskParams {
    fn default() -> Self {
        DiskParams {
            width: 512,
            height: 512,
            count: 300,
            radius_min: 7.0,
            radius_max: 9.0,
            gap: 2.0,
            foreground: 0.7,
            background: 0.3,
            noise: 0.08,
            centre_radius: 5.0,
            seed: 1,
        }
    }
}

fn check_size(width: usize, height: usize) -> Result<()> {
    if width == 0 || height == 0 {
        return Err(Error::Config("phantom must have a positive size".into()));
    }
    Ok(())
}

fn add_noise(values: &mut [f64], sigma: f64, rng: &mut ChaCha8Rng) -> Result<()> {
    if sigma > 0.0 {
        let normal = Normal::new(0.0, sigma).map_err(|e| Error::Config(e.to_string()))?;
        for v in values.iter_mut() {
            *v += normal.sample(rng);
        }
    }
    values.iter_mut().for_each(|v| *v = v.clamp(0.0, 1.0));
    Ok(())
}

pub fn disks(params: &DiskParams) -> Result<Phantom> {
    check_size(params.width, params.height)?;
    if !(params.radius_min > 0.0 && params.radius_min <= params.radius_max) {
        return Err(Error::Config("disk radii must satisfy 0 < min <= max".into()));
    }
    if params.centre_radius.is_nan() || params.centre_radius < 0.0 {
        return Err(Error::Config("centre radius must be non-negative".into()));
    }
    let (w, h) = (params.width, params.height);
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let mut centres: Vec<(f64, f64)> = Vec::with_capacity(params.count);
    let mut radii: Vec<f64> = Vec::with_capacity(params.count);
    let max_attempts = 2000 * params.count.max(1);
    let mut attempts = 0;
    while centres.len() < params.count && attempts < max_attempts {
        attempts += 1;
        let r = rng.random_range(params.radius_min..=params.radius_max);
        let margin = r + 1.0;
        if (w as f64) < 2.0 * margin || (h as f64) < 2.0 * margin {
            break;
        }
        let x = rng.random_range(margin..w as f64 - margin);
        let y = rng.random_range(margin..h as f64 - margin);
        let clear = centres.iter().zip(&radii).all(|(&(cx, cy), &cr)| {
            let d = ((x - cx).powi(2) + (y - cy).powi(2)).sqrt();
            d >= r + cr + params.gap
        });
        if clear {
            centres.push((x, y));
            radii.push(r);
        }
    }
    if centres.len() < params.count {
        log::warn!(
            "placed {} of {} disks in a {w}x{h} image",
            centres.len(),
            params.count
        );
    }

    let mut inside = vec![false; w * h];
    let mut truth = vec![BACKGROUND; w * h];
    for (&(cx, cy), &r) in centres.iter().zip(&radii) {
        let (x0, x1) = ((cx - r).floor().max(0.0) as usize, ((cx + r).ceil() as usize).min(w - 1));
        let (y0, y1) = ((cy - r).floor().max(0.0) as usize, ((cy + r).ceil() as usize).min(h - 1));
        for y in y0..=y1 {
            for x in x0..=x1 {
                let d2 = (x as f64 - cx).powi(2) + (y as f64 - cy).powi(2);
                if d2 <= r * r {
                    inside[x + y * w] = true;
                }
                if d2 <= params.centre_radius * params.centre_radius {
                    truth[x + y * w] = 2;
                }
            }
        }
    }
    let mut values: Vec<f64> = inside
        .iter()
        .map(|&d| if d { params.foreground } else { params.background })
        .collect();
    add_noise(&mut values, params.noise, &mut rng)?;
    Ok(Phantom {
        image: PixelGrid::new(w, h, 1, values)?,
        truth,
        classes: 2,
        centres,
        radii,
    })
}

/// Two periodic textures (class 1 stripes, class 2 checks) separated by a
/// wavy vertical boundary.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TextureParams {
    pub width: usize,
    pub height: usize,
    pub period: usize,
    pub noise: f64,
    pub seed: u64,
}

impl Default for TextureParams {
    fn default() -> Self {
        TextureParams {
            width: 128,
            height: 128,
            period: 6,
            noise: 0.05,
            seed: 1,
        }
    }
}

pub fn two_texture(params: &TextureParams) -> Result<Phantom> {
    check_size(params.width, params.height)?;
    if params.period < 2 {
        return Err(Error::Config("texture period must be at least 2".into()));
    }
    let (w, h, p) = (params.width, params.height, params.period);
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let phase = rng.random_range(0.0..std::f64::consts::TAU);
    let mut truth = vec![BACKGROUND; w * h];
    let mut values = vec![0.0; w * h];
    for y in 0..h {
        let boundary = w as f64 / 2.0 + (w as f64 / 8.0) * (y as f64 / h as f64 * 6.0 + phase).sin();
        for x in 0..w {
            let i = x + y * w;
            let stripes = (x / (p / 2).max(1)) % 2 == 0;
            let checks = ((x / p) + (y / p)) % 2 == 0;
            if (x as f64) < boundary {
                values[i] = if stripes { 0.8 } else { 0.2 };
            } else {
                truth[i] = 2;
                values[i] = if checks { 0.75 } else { 0.25 };
            }
        }
    }
    add_noise(&mut values, params.noise, &mut rng)?;
    Ok(Phantom {
        image: PixelGrid::new(w, h, 1, values)?,
        truth,
        classes: 2,
        centres: Vec::new(),
        radii: Vec::new(),
    })
}

/// RGB cells: background (class 1), a dark membrane ring (class 2) and a
/// light interior (class 3).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CellParams {
    pub width: usize,
    pub height: usize,
    pub count: usize,
    pub radius_min: f64,
    pub radius_max: f64,
    pub membrane: f64,
    pub noise: f64,
    pub seed: u64,
}

impl Default for CellParams {
    fn default() -> Self {
        CellParams {
            width: 256,
            height: 256,
            count: 40,
            radius_min: 8.0,
            radius_max: 12.0,
            membrane: 2.0,
            noise: 0.04,
            seed: 1,
        }
    }
}

pub fn cells(params: &CellParams) -> Result<Phantom> {
    let base = disks(&DiskParams {
        width: params.width,
        height: params.height,
        count: params.count,
        radius_min: params.radius_min,
        radius_max: params.radius_max,
        gap: 1.0,
        foreground: 1.0,
        background: 0.0,
        noise: 0.0,
        centre_radius: 0.0,
        seed: params.seed,
    })?;
    let (w, h) = (params.width, params.height);
    let mut truth = base.truth;
    for (&(cx, cy), &r) in base.centres.iter().zip(&base.radii) {
        let inner = (r - params.membrane).max(0.0);
        let (x0, x1) = ((cx - r).floor().max(0.0) as usize, ((cx + r).ceil() as usize).min(w - 1));
        let (y0, y1) = ((cy - r).floor().max(0.0) as usize, ((cy + r).ceil() as usize).min(h - 1));
        for y in y0..=y1 {
            for x in x0..=x1 {
                let d2 = (x as f64 - cx).powi(2) + (y as f64 - cy).powi(2);
                if d2 <= r * r {
                    truth[x + y * w] = if d2 <= inner * inner { 3 } else { 2 };
                }
            }
        }
    }
    const COLOURS: [[f64; 3]; 3] = [[0.92, 0.85, 0.9], [0.35, 0.15, 0.45], [0.8, 0.55, 0.75]];
    let mut values: Vec<f64> = truth
        .iter()
        .flat_map(|&t| COLOURS[t as usize - 1])
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed ^ 0x9e37_79b9_7f4a_7c15);
    add_noise(&mut values, params.noise, &mut rng)?;
    Ok(Phantom {
        image: PixelGrid::new(w, h, 3, values)?,
        truth,
        classes: 3,
        centres: base.centres,
        radii: base.radii,
    })
}

/// Scripted user input for a disk phantom: a small dot of class 2 at every
/// disk centre plus sparse horizontal strokes of class 1 on pixels farther
/// than `exclusion` from every centre.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScribbleParams {
    /// Radius of each centre dot; 0 marks a single pixel.
    pub dot_radius: f64,
    /// Vertical spacing of background strokes.
    pub line_spacing: usize,
    /// Every n-th pixel along a background stroke is marked.
    pub line_step: usize,
    pub exclusion: f64,
}

impl Default for ScribbleParams {
    fn default() -> Self {
        ScribbleParams {
            dot_radius: 1.0,
            line_spacing: 64,
            line_step: 3,
            exclusion: 6.0,
        }
    }
}

pub fn disk_scribbles(phantom: &Phantom, params: &ScribbleParams) -> Result<UserMarking> {
    let shape = phantom.shape();
    let (w, h) = (shape.width, shape.height);
    let mut marks = UserMarking::new(shape.len(), phantom.classes)?;
    let r = params.dot_radius;
    for &(cx, cy) in &phantom.centres {
        let (x0, x1) = ((cx - r).floor().max(0.0) as usize, ((cx + r).ceil() as usize).min(w - 1));
        let (y0, y1) = ((cy - r).floor().max(0.0) as usize, ((cy + r).ceil() as usize).min(h - 1));
        let mut any = false;
        for y in y0..=y1 {
            for x in x0..=x1 {
                if (x as f64 - cx).powi(2) + (y as f64 - cy).powi(2) <= r * r {
                    marks.set(x + y * w, 2)?;
                    any = true;
                }
            }
        }
        if !any {
            let (x, y) = (cx.round() as usize, cy.round() as usize);
            marks.set(x.min(w - 1) + y.min(h - 1) * w, 2)?;
        }
    }
    let spacing = params.line_spacing.max(1);
    let step = params.line_step.max(1);
    let mut y = spacing / 2;
    while y < h {
        for x in (0..w).step_by(step) {
            let clear = phantom.centres.iter().all(|&(cx, cy)| {
                (x as f64 - cx).hypot(y as f64 - cy) > params.exclusion
            });
            if clear {
                marks.set(x + y * w, BACKGROUND as usize)?;
            }
        }
        y += spacing;
    }
    Ok(marks)
}
