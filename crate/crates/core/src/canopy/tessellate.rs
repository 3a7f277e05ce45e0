//! Triangle meshes for the shapes canopies are assembled from.

use thiserror::Error;

use crate::geometry::Vec3;

pub type Triangle = [Vec3; 3];

/// Upper bound on sphere refinement levels (8 * 4^8 ≈ 5e5 triangles).
pub const MAX_SPHERE_SUBDIVISIONS: u32 = 8;

#[derive(Debug, Error, PartialEq)]
pub enum TessellationError {
    #[error("{what} must be finite and > 0, got {value}")]
    NonPositive { what: &'static str, value: f64 },
    #[error("sphere subdivisions must be in 1..={MAX_SPHERE_SUBDIVISIONS}, got {0}")]
    Subdivisions(u32),
    #[error("cylinder needs at least 3 segments, got {0}")]
    Segments(u32),
    #[error("{0} must be a nonzero, finite vector")]
    ZeroVector(&'static str),
}

fn positive(what: &'static str, value: f64) -> Result<(), TessellationError> {
    if value > 0.0 && value.is_finite() {
        Ok(())
    } else {
        Err(TessellationError::NonPositive { what, value })
    }
}

fn nonzero(what: &'static str, v: Vec3) -> Result<Vec3, TessellationError> {
    if v.is_finite() && v.length() > 0.0 {
        Ok(v)
    } else {
        Err(TessellationError::ZeroVector(what))
    }
}

/// Flips the winding if needed so the face normal points along `outward`.
fn orient(tri: Triangle, outward: Vec3) -> Triangle {
    let n = (tri[1] - tri[0]).cross(tri[2] - tri[0]);
    if n.dot(outward) < 0.0 {
        [tri[0], tri[2], tri[1]]
    } else {
        tri
    }
}

/// Closed sphere from a refined octahedron: `8 * 4^subdivisions` triangles
/// with outward normals.
pub fn tessellate_sphere(
    center: Vec3,
    radius: f64,
    subdivisions: u32,
) -> Result<Vec<Triangle>, TessellationError> {
    positive("radius", radius)?;
    if !(1..=MAX_SPHERE_SUBDIVISIONS).contains(&subdivisions) {
        return Err(TessellationError::Subdivisions(subdivisions));
    }

    let mut faces: Vec<Triangle> = Vec::with_capacity(8);
    for sx in [1.0, -1.0] {
        for sy in [1.0, -1.0] {
            for sz in [1.0, -1.0] {
                let tri = [Vec3::X * sx, Vec3::Y * sy, Vec3::Z * sz];
                faces.push(orient(tri, Vec3::new(sx, sy, sz)));
            }
        }
    }
    for _ in 0..subdivisions {
        let mut next = Vec::with_capacity(faces.len() * 4);
        for [a, b, c] in faces {
            let ab = ((a + b) * 0.5).normalize();
            let bc = ((b + c) * 0.5).normalize();
            let ca = ((c + a) * 0.5).normalize();
            next.extend([[a, ab, ca], [ab, b, bc], [ca, bc, c], [ab, bc, ca]]);
        }
        faces = next;
    }
    Ok(faces
        .into_iter()
        .map(|t| t.map(|v| center + v * radius))
        .collect())
}

/// Capped cylinder from `a` to `b`: `2 * segments` side triangles plus a
/// `segments`-triangle fan on each end, all facing outward.
pub fn tessellate_cylinder(
    a: Vec3,
    b: Vec3,
    radius: f64,
    segments: u32,
) -> Result<Vec<Triangle>, TessellationError> {
    positive("radius", radius)?;
    if segments < 3 {
        return Err(TessellationError::Segments(segments));
    }
    let axis = nonzero("cylinder axis", b - a)?.normalize();
    let (u, w) = axis.orthonormal_basis();
    let ring: Vec<Vec3> = (0..segments)
        .map(|k| {
            let phi = std::f64::consts::TAU * k as f64 / segments as f64;
            (u * phi.cos() + w * phi.sin()) * radius
        })
        .collect();

    let n = segments as usize;
    let mut tris = Vec::with_capacity(4 * n);
    for k in 0..n {
        let (p, q) = (ring[k], ring[(k + 1) % n]);
        let radial = (p + q) * 0.5;
        tris.push(orient([a + p, a + q, b + q], radial));
        tris.push(orient([a + p, b + q, b + p], radial));
    }
    for k in 0..n {
        let (p, q) = (ring[k], ring[(k + 1) % n]);
        tris.push(orient([a, a + p, a + q], -axis));
    }
    for k in 0..n {
        let (p, q) = (ring[k], ring[(k + 1) % n]);
        tris.push(orient([b, b + p, b + q], axis));
    }
    Ok(tris)
}

/// Flat rectangular card of `length` along `direction` and `width` across,
/// hinged at `anchor`; two triangles with the same winding.
pub fn leaf_card(
    anchor: Vec3,
    direction: Vec3,
    length: f64,
    width: f64,
) -> Result<[Triangle; 2], TessellationError> {
    let d = nonzero("leaf direction", direction)?.normalize();
    let mut side = d.cross(Vec3::Z);
    if side.length() < 1e-9 {
        side = d.cross(Vec3::X);
    }
    leaf_card_oriented(anchor, d, side, length, width)
}

/// [`leaf_card`] with an explicit across-leaf axis (projected to be
/// perpendicular to `direction`).
pub fn leaf_card_oriented(
    anchor: Vec3,
    direction: Vec3,
    side: Vec3,
    length: f64,
    width: f64,
) -> Result<[Triangle; 2], TessellationError> {
    positive("leaf length", length)?;
    positive("leaf width", width)?;
    let d = nonzero("leaf direction", direction)?.normalize();
    let side = side - d * side.dot(d);
    let s = nonzero("leaf side axis", side)?.normalize() * (0.5 * width);
    let tip = anchor + d * length;
    let quad = [anchor - s, anchor + s, tip + s, tip - s];
    Ok([[quad[0], quad[1], quad[2]], [quad[0], quad[2], quad[3]]])
}
