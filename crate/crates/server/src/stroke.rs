//! Round-brush rasterization of polyline strokes.

use serde::{Deserialize, Serialize};

use crate::error::ApiError;

pub const MAX_RADIUS: f64 = 256.0;

/// A polyline painted with a round brush. `class` is `None` for the eraser.
///
/// On the wire: `{"points": [[x, y], ...], "radius": r, "class": c}` or
/// `{"points": [...], "radius": r, "eraser": true}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "StrokeWire", into = "StrokeWire")]
pub struct Stroke {
    pub points: Vec<[f64; 2]>,
    pub radius: f64,
    pub class: Option<u16>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct StrokeWire {
    points: Vec<[f64; 2]>,
    #[serde(default)]
    radius: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    class: Option<u16>,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    eraser: bool,
}

impl TryFrom<StrokeWire> for Stroke {
    type Error = String;

    fn try_from(w: StrokeWire) -> Result<Self, String> {
        match (w.class, w.eraser) {
            (Some(_), true) => Err("a stroke is either a class or an eraser".into()),
            (None, false) => Err("a stroke needs a class or \"eraser\": true".into()),
            (class, _) => Ok(Stroke {
                points: w.points,
                radius: w.radius,
                class,
            }),
        }
    }
}

impl From<Stroke> for StrokeWire {
    fn from(s: Stroke) -> Self {
        StrokeWire {
            points: s.points,
            radius: s.radius,
            eraser: s.class.is_none(),
            class: s.class,
        }
    }
}

impl Stroke {
    pub fn validate(&self, classes: usize) -> Result<(), ApiError> {
        if let Some(c) = self.class {
            if c == 0 || c as usize > classes {
                return Err(ApiError::BadRequest(format!(
                    "unknown class {c}; classes are 1..={classes}"
                )));
            }
        }
        if !(self.radius >= 0.0 && self.radius <= MAX_RADIUS) {
            return Err(ApiError::BadRequest(format!(
                "brush radius must be in [0, {MAX_RADIUS}]"
            )));
        }
        if self.points.iter().flatten().any(|v| !v.is_finite()) {
            return Err(ApiError::BadRequest("stroke points must be finite".into()));
        }
        Ok(())
    }
}

fn segment_distance(p: [f64; 2], a: [f64; 2], b: [f64; 2]) -> f64 {
    let (dx, dy) = (b[0] - a[0], b[1] - a[1]);
    let len2 = dx * dx + dy * dy;
    let t = if len2 == 0.0 {
        0.0
    } else {
        (((p[0] - a[0]) * dx + (p[1] - a[1]) * dy) / len2).clamp(0.0, 1.0)
    };
    (p[0] - a[0] - t * dx).hypot(p[1] - a[1] - t * dy)
}

/// Linear indices of pixels whose centre lies within the brush radius (at
/// least half a pixel) of the polyline, clipped to the image.
pub fn rasterize(stroke: &Stroke, width: usize, height: usize) -> Vec<usize> {
    let r = stroke.radius.max(0.5);
    let mut out = Vec::new();
    if stroke.points.is_empty() || width == 0 || height == 0 {
        return out;
    }
    let segments: Vec<([f64; 2], [f64; 2])> = if stroke.points.len() == 1 {
        vec![(stroke.points[0], stroke.points[0])]
    } else {
        stroke.points.windows(2).map(|w| (w[0], w[1])).collect()
    };
    let clamp = |v: f64, hi: usize| v.clamp(0.0, (hi - 1) as f64) as usize;
    for (a, b) in segments {
        let x0 = clamp((a[0].min(b[0]) - r).floor(), width);
        let x1 = clamp((a[0].max(b[0]) + r).ceil(), width);
        let y0 = clamp((a[1].min(b[1]) - r).floor(), height);
        let y1 = clamp((a[1].max(b[1]) + r).ceil(), height);
        for y in y0..=y1 {
            for x in x0..=x1 {
                if segment_distance([x as f64, y as f64], a, b) <= r {
                    out.push(x + y * width);
                }
            }
        }
    }
    out.sort_unstable();
    out.dedup();
    out
}
