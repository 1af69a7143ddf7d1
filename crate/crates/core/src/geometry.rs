//! Polygon geofences and point-in-polygon containment.
//!
//! Coordinates are treated as a flat plane with longitude on the x axis and
//! latitude on the y axis. Fences crossing the antimeridian or enclosing a
//! pole are not supported; they validate but containment results for them
//! are meaningless.

use num_traits::Float;
use thiserror::Error;

use crate::codec::GeolocationBlock;

/// Points closer than this many degrees to a fence edge count as inside.
pub const EDGE_EPSILON: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Point<T> {
    pub latitude: T,
    pub longitude: T,
}

impl<T: Float> Point<T> {
    pub fn new(latitude: T, longitude: T) -> Self {
        Point {
            latitude,
            longitude,
        }
    }

    pub fn is_finite(&self) -> bool {
        self.latitude.is_finite() && self.longitude.is_finite()
    }

    pub fn in_range(&self) -> bool {
        let lat = T::from(90.0).unwrap();
        let lon = T::from(180.0).unwrap();
        self.latitude.abs() <= lat && self.longitude.abs() <= lon
    }

    fn offset_by(self, anchor: Point<T>) -> Point<T> {
        Point::new(
            anchor.latitude + self.latitude,
            anchor.longitude + self.longitude,
        )
    }
}

impl From<&GeolocationBlock> for Point<f64> {
    fn from(g: &GeolocationBlock) -> Self {
        Point::new(g.latitude, g.longitude)
    }
}

impl From<GeolocationBlock> for Point<f64> {
    fn from(g: GeolocationBlock) -> Self {
        Point::from(&g)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FenceMode {
    /// Vertices are absolute coordinates.
    Static,
    /// Vertices are offsets from the owner's last known location.
    Dynamic,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Fence<T> {
    pub mode: FenceMode,
    pub vertices: Vec<Point<T>>,
}

impl<T: Float> Fence<T> {
    pub fn new(mode: FenceMode, vertices: Vec<Point<T>>) -> Self {
        Fence { mode, vertices }
    }

    pub fn validate(&self) -> Result<(), GeometryError> {
        validate_fence(self)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
pub enum GeometryError {
    #[error("TooFewVertices: polygon has {0} vertices, need at least 3")]
    TooFewVertices(usize),
    #[error("NonFiniteVertex: vertex {0} is not finite")]
    NonFiniteVertex(usize),
    #[error("OutOfRange: vertex {0} lies outside latitude [-90, 90] / longitude [-180, 180]")]
    OutOfRange(usize),
    #[error("DegenerateEdge: vertex {0} repeats the previous vertex")]
    DegenerateEdge(usize),
    #[error("NonFinitePoint: query point is not finite")]
    NonFinitePoint,
    #[error("NoAnchor: dynamic fence has no anchor location")]
    NoAnchor,
}

/// Checks a closed vertex ring: at least three finite, in-range vertices and
/// no zero-length edge (including the closing edge).
pub fn validate_ring<T: Float>(vertices: &[Point<T>]) -> Result<(), GeometryError> {
    if vertices.len() < 3 {
        return Err(GeometryError::TooFewVertices(vertices.len()));
    }
    for (i, v) in vertices.iter().enumerate() {
        if !v.is_finite() {
            return Err(GeometryError::NonFiniteVertex(i));
        }
        if !v.in_range() {
            return Err(GeometryError::OutOfRange(i));
        }
    }
    for i in 0..vertices.len() {
        let prev = vertices[(i + vertices.len() - 1) % vertices.len()];
        if vertices[i] == prev {
            return Err(GeometryError::DegenerateEdge(i));
        }
    }
    Ok(())
}

pub fn validate_fence<T: Float>(f: &Fence<T>) -> Result<(), GeometryError> {
    validate_ring(&f.vertices)
}

/// Absolute polygon for a fence. Dynamic fences are translated to `anchor`;
/// static fences ignore it.
pub fn resolve_fence<T: Float>(
    f: &Fence<T>,
    anchor: Option<Point<T>>,
) -> Result<Vec<Point<T>>, GeometryError> {
    validate_fence(f)?;
    match f.mode {
        FenceMode::Static => Ok(f.vertices.clone()),
        FenceMode::Dynamic => {
            let anchor = anchor.ok_or(GeometryError::NoAnchor)?;
            Ok(f.vertices.iter().map(|v| v.offset_by(anchor)).collect())
        }
    }
}

fn near_segment<T: Float>(p: Point<T>, a: Point<T>, b: Point<T>, eps: T) -> bool {
    let (px, py) = (p.longitude, p.latitude);
    let (ax, ay) = (a.longitude, a.latitude);
    let (dx, dy) = (b.longitude - ax, b.latitude - ay);
    let len2 = dx * dx + dy * dy;
    let t = if len2 > T::zero() {
        (((px - ax) * dx + (py - ay) * dy) / len2)
            .max(T::zero())
            .min(T::one())
    } else {
        T::zero()
    };
    let (cx, cy) = (ax + t * dx - px, ay + t * dy - py);
    (cx * cx + cy * cy).sqrt() <= eps
}

/// Even-odd containment. Points within [`EDGE_EPSILON`] degrees of an edge
/// are inside.
pub fn point_in_polygon<T: Float>(p: Point<T>, poly: &[Point<T>]) -> Result<bool, GeometryError> {
    validate_ring(poly)?;
    if !p.is_finite() {
        return Err(GeometryError::NonFinitePoint);
    }
    let eps = T::from(EDGE_EPSILON).unwrap();
    let n = poly.len();
    if (0..n).any(|i| near_segment(p, poly[i], poly[(i + 1) % n], eps)) {
        return Ok(true);
    }

    let (x, y) = (p.longitude, p.latitude);
    let mut inside = false;
    let mut j = n - 1;
    for i in 0..n {
        let (xi, yi) = (poly[i].longitude, poly[i].latitude);
        let (xj, yj) = (poly[j].longitude, poly[j].latitude);
        if (yi > y) != (yj > y) && x < (xj - xi) * (y - yi) / (yj - yi) + xi {
            inside = !inside;
        }
        j = i;
    }
    Ok(inside)
}
