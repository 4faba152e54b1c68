//! Signed distance to simple cell outlines: positive inside, negative outside.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Shape {
    Circle { center: [f64; 2], radius: f64 },
    /// Simple polygon with counterclockwise vertices.
    Polygon { vertices: Vec<[f64; 2]> },
}

impl Shape {
    pub fn circle(center: [f64; 2], radius: f64) -> Shape {
        Shape::Circle { center, radius }
    }

    pub fn polygon(vertices: Vec<[f64; 2]>) -> Result<Shape> {
        let shape = Shape::Polygon { vertices };
        shape.validate()?;
        Ok(shape)
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            Shape::Circle { radius, .. } if !(*radius > 0.0) => Err(Error::InvalidParameter(
                format!("circle radius must be positive, got {radius}"),
            )),
            Shape::Polygon { vertices } if vertices.len() < 3 => Err(Error::DegeneratePolygon(
                format!("{} vertices, need at least 3", vertices.len()),
            )),
            _ => Ok(()),
        }
    }

    pub fn signed_distance(&self, x: [f64; 2]) -> f64 {
        match self {
            Shape::Circle { center, radius } => {
                radius - ((x[0] - center[0]).powi(2) + (x[1] - center[1]).powi(2)).sqrt()
            }
            Shape::Polygon { vertices } => {
                let n = vertices.len();
                let mut dist = f64::INFINITY;
                for i in 0..n {
                    dist = dist.min(segment_distance(x, vertices[i], vertices[(i + 1) % n]));
                }
                if dist == 0.0 {
                    0.0
                } else if winding_number(vertices, x) != 0 {
                    dist
                } else {
                    -dist
                }
            }
        }
    }
}

/// Signed distance to a circle or polygon; see [`Shape::signed_distance`].
pub fn signed_distance(shape: &Shape, x: [f64; 2]) -> Result<f64> {
    shape.validate()?;
    Ok(shape.signed_distance(x))
}

fn segment_distance(x: [f64; 2], a: [f64; 2], b: [f64; 2]) -> f64 {
    let ab = [b[0] - a[0], b[1] - a[1]];
    let ax = [x[0] - a[0], x[1] - a[1]];
    let len2 = ab[0] * ab[0] + ab[1] * ab[1];
    let t = if len2 > 0.0 {
        ((ax[0] * ab[0] + ax[1] * ab[1]) / len2).clamp(0.0, 1.0)
    } else {
        0.0
    };
    let d = [ax[0] - t * ab[0], ax[1] - t * ab[1]];
    (d[0] * d[0] + d[1] * d[1]).sqrt()
}

fn winding_number(poly: &[[f64; 2]], x: [f64; 2]) -> i32 {
    let n = poly.len();
    let mut wn = 0;
    for i in 0..n {
        let (a, b) = (poly[i], poly[(i + 1) % n]);
        let side = (b[0] - a[0]) * (x[1] - a[1]) - (x[0] - a[0]) * (b[1] - a[1]);
        if a[1] <= x[1] {
            if b[1] > x[1] && side > 0.0 {
                wn += 1;
            }
        } else if b[1] <= x[1] && side < 0.0 {
            wn -= 1;
        }
    }
    wn
}
