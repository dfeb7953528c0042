//! Inputs shared by the benchmarks.

use dictseg::phantom::{disk_scribbles, disks, DiskParams, ScribbleParams};
use dictseg::prelude::*;

/// A square disk phantom with 300 disks per 512² and its scripted marks.
pub fn disk_input(size: usize) -> (PixelGrid, UserMarking) {
    let count = ((300 * size * size) as f64 / (512.0 * 512.0)).round().max(1.0) as usize;
    let p = disks(&DiskParams {
        width: size,
        height: size,
        count,
        ..Default::default()
    })
    .expect("valid phantom");
    let marks = disk_scribbles(&p, &ScribbleParams::default()).expect("valid marks");
    (p.image, marks)
}

pub fn config(patch_size: usize, branching: usize, layers: usize) -> DictionaryConfig {
    DictionaryConfig {
        patch_size,
        tree: TreeParams {
            branching,
            layers,
            ..Default::default()
        },
        ..Default::default()
    }
}
