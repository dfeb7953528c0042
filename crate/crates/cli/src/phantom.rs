//! Synthetic images with ground truth and scripted marks.

use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, ValueEnum};
use dictseg::io::{encode_grid_png, encode_label_png, write_file};
use dictseg::phantom::{cells, disk_scribbles, disks, two_texture, CellParams, DiskParams, Phantom, ScribbleParams, TextureParams};
use dictseg::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::Result;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PhantomKind {
    Disks,
    TwoTexture,
    Cells,
}

#[derive(Debug, Clone, Args)]
pub struct PhantomArgs {
    #[arg(long, value_enum, default_value = "disks")]
    pub kind: PhantomKind,
    #[arg(long, default_value_t = 512)]
    pub width: usize,
    #[arg(long, default_value_t = 512)]
    pub height: usize,
    /// Number of objects (disks or cells).
    #[arg(long)]
    pub count: Option<usize>,
    #[arg(long)]
    pub noise: Option<f64>,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
}

impl Default for PhantomArgs {
    fn default() -> Self {
        PhantomArgs {
            kind: PhantomKind::Disks,
            width: 512,
            height: 512,
            count: None,
            noise: None,
            seed: 1,
        }
    }
}

pub fn generate(args: &PhantomArgs) -> Result<Phantom> {
    let (width, height, seed) = (args.width, args.height, args.seed);
    Ok(match args.kind {
        PhantomKind::Disks => {
            let d = DiskParams::default();
            disks(&DiskParams {
                width,
                height,
                count: args.count.unwrap_or(d.count),
                noise: args.noise.unwrap_or(d.noise),
                seed,
                ..d
            })?
        }
        PhantomKind::TwoTexture => {
            let d = TextureParams::default();
            two_texture(&TextureParams {
                width,
                height,
                noise: args.noise.unwrap_or(d.noise),
                seed,
                ..d
            })?
        }
        PhantomKind::Cells => {
            let d = CellParams::default();
            cells(&CellParams {
                width,
                height,
                count: args.count.unwrap_or(d.count),
                noise: args.noise.unwrap_or(d.noise),
                seed,
                ..d
            })?
        }
    })
}

/// Disk phantoms get centre dots plus background strokes; the others get
/// a sparse grid of truth samples.
pub fn scripted_marks(phantom: &Phantom, kind: PhantomKind) -> Result<UserMarking> {
    if kind == PhantomKind::Disks {
        return Ok(disk_scribbles(phantom, &ScribbleParams::default())?);
    }
    let shape = phantom.shape();
    let mut marks = UserMarking::new(shape.len(), phantom.classes)?;
    for y in (4..shape.height).step_by(16) {
        for x in (4..shape.width).step_by(16) {
            let i = y * shape.width + x;
            marks.set(i, phantom.truth[i] as usize)?;
        }
    }
    Ok(marks)
}

/// Writes `image.png`, `truth.png`, `marks.png` and `centres.csv`.
pub fn write(phantom: &Phantom, marks: &UserMarking, out: &Path) -> Result<Vec<PathBuf>> {
    let shape = phantom.shape();
    let mut csv = Vec::new();
    writeln!(csv, "x,y,radius").map_err(dictseg::Error::from)?;
    for (i, (x, y)) in phantom.centres.iter().enumerate() {
        let r = phantom.radii.get(i).copied().unwrap_or(0.0);
        writeln!(csv, "{x},{y},{r}").map_err(dictseg::Error::from)?;
    }
    let files = [
        ("image.png", encode_grid_png(&phantom.image)?),
        ("truth.png", encode_label_png(shape, &phantom.truth)?),
        ("marks.png", encode_label_png(shape, &marks.to_label_map())?),
        ("centres.csv", csv),
    ];
    let mut paths = Vec::new();
    for (name, bytes) in files {
        let p = out.join(name);
        write_file(&p, &bytes)?;
        paths.push(p);
    }
    Ok(paths)
}
