//! Labeled triangle scenes and closest-hit queries.

use serde::{Deserialize, Serialize};
use smallvec::SmallVec;
use thiserror::Error;

use crate::bvh::Bvh;
use crate::geometry::{Ray, Vec3};
use crate::spectral::{Material, MaterialError};

/// Minimum triangle area (m²) accepted into a scene.
pub const MIN_TRIANGLE_AREA: f64 = 1e-12;

/// Hits closer than this (m) to the current best are tied and resolved by
/// primitive index.
pub const TIE_EPSILON: f64 = 1e-12;

/// Origin offset (m) along the geometric normal for secondary rays.
pub const DEFAULT_RAY_EPSILON: f64 = 1e-4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ClassId {
    Background,
    Bark,
    Leaf,
    Walnut,
    Ground,
}

impl ClassId {
    pub const ALL: [ClassId; 5] = [
        ClassId::Background,
        ClassId::Bark,
        ClassId::Leaf,
        ClassId::Walnut,
        ClassId::Ground,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ClassId::Background => "background",
            ClassId::Bark => "bark",
            ClassId::Leaf => "leaf",
            ClassId::Walnut => "walnut",
            ClassId::Ground => "ground",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Primitive {
    pub vertices: [Vec3; 3],
    pub material_id: u32,
    /// Walnut instance (1..=K); 0 for everything else.
    pub instance_id: u32,
    pub class_id: ClassId,
}

impl Primitive {
    pub fn new(vertices: [Vec3; 3], material_id: u32, instance_id: u32, class_id: ClassId) -> Self {
        Self {
            vertices,
            material_id,
            instance_id,
            class_id,
        }
    }

    /// Unnormalized geometric normal `(v1 - v0) x (v2 - v0)`.
    pub fn raw_normal(&self) -> Vec3 {
        let [a, b, c] = self.vertices;
        (b - a).cross(c - a)
    }

    pub fn normal(&self) -> Vec3 {
        self.raw_normal().normalize()
    }

    pub fn area(&self) -> f64 {
        0.5 * self.raw_normal().length()
    }

    pub fn is_degenerate(&self) -> bool {
        !(self.area() > MIN_TRIANGLE_AREA)
    }

    pub fn translated(mut self, offset: Vec3) -> Self {
        for v in &mut self.vertices {
            *v += offset;
        }
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HitRecord {
    pub t: f64,
    pub point: Vec3,
    /// Unit normal from the winding order; not flipped toward the ray.
    pub geometric_normal: Vec3,
    pub primitive_index: usize,
    /// Weights of vertices 1 and 2.
    pub barycentrics: (f64, f64),
}

/// Per-ray constants of the watertight intersection test (Woop, Benthin and
/// Wald 2013): a shear/permutation that maps the ray onto the +z axis.
#[derive(Debug, Clone, Copy)]
pub(crate) struct RayKernel {
    origin: Vec3,
    kx: usize,
    ky: usize,
    kz: usize,
    sx: f64,
    sy: f64,
    sz: f64,
}

impl RayKernel {
    pub(crate) fn new(ray: &Ray) -> Self {
        let d = ray.direction;
        let kz = d.max_axis();
        let mut kx = (kz + 1) % 3;
        let mut ky = (kx + 1) % 3;
        if d[kz] < 0.0 {
            std::mem::swap(&mut kx, &mut ky);
        }
        Self {
            origin: ray.origin,
            kx,
            ky,
            kz,
            sx: d[kx] / d[kz],
            sy: d[ky] / d[kz],
            sz: 1.0 / d[kz],
        }
    }

    /// `(t, u, v)` when the ray meets the triangle strictly inside `(t_min, t_max)`.
    #[inline]
    pub(crate) fn intersect(&self, tri: &[Vec3; 3], t_min: f64, t_max: f64) -> Option<(f64, f64, f64)> {
        let (kx, ky, kz) = (self.kx, self.ky, self.kz);
        let a = tri[0] - self.origin;
        let b = tri[1] - self.origin;
        let c = tri[2] - self.origin;

        let ax = a[kx] - self.sx * a[kz];
        let ay = a[ky] - self.sy * a[kz];
        let bx = b[kx] - self.sx * b[kz];
        let by = b[ky] - self.sy * b[kz];
        let cx = c[kx] - self.sx * c[kz];
        let cy = c[ky] - self.sy * c[kz];

        let e0 = cx * by - cy * bx;
        let e1 = ax * cy - ay * cx;
        let e2 = bx * ay - by * ax;

        if (e0 < 0.0 || e1 < 0.0 || e2 < 0.0) && (e0 > 0.0 || e1 > 0.0 || e2 > 0.0) {
            return None;
        }
        let det = e0 + e1 + e2;
        if det == 0.0 {
            return None;
        }

        let az = self.sz * a[kz];
        let bz = self.sz * b[kz];
        let cz = self.sz * c[kz];
        let t = (e0 * az + e1 * bz + e2 * cz) / det;
        if !(t > t_min && t < t_max) {
            return None;
        }
        Some((t, e1 / det, e2 / det))
    }
}

/// Ray/triangle intersection: `(t, u, v)` with `t` in `(t_min, t_max)`.
///
/// Rays through a shared edge or vertex report a hit on at least one of the
/// adjacent triangles.
pub fn ray_triangle(ray: &Ray, tri: &Primitive) -> Option<(f64, f64, f64)> {
    RayKernel::new(ray).intersect(&tri.vertices, ray.t_min, ray.t_max)
}

/// Accumulates candidate hits and resolves the closest one independently of
/// visit order: the minimum `t`, with every hit within [`TIE_EPSILON`] of it
/// tied and decided by lowest primitive index.
#[derive(Debug)]
pub(crate) struct ClosestHit {
    best_t: f64,
    candidates: SmallVec<[(f64, u32, f64, f64); 4]>,
}

impl ClosestHit {
    pub(crate) fn new() -> Self {
        Self {
            best_t: f64::INFINITY,
            candidates: SmallVec::new(),
        }
    }

    /// Largest `t` that can still affect the result.
    #[inline]
    pub(crate) fn bound(&self) -> f64 {
        self.best_t + TIE_EPSILON
    }

    #[inline]
    pub(crate) fn offer(&mut self, t: f64, index: u32, u: f64, v: f64) {
        if t > self.bound() {
            return;
        }
        if t < self.best_t {
            self.best_t = t;
            let limit = self.bound();
            self.candidates.retain(|c| c.0 <= limit);
        }
        self.candidates.push((t, index, u, v));
    }

    pub(crate) fn finish(self) -> Option<(f64, u32, f64, f64)> {
        self.candidates.into_iter().min_by_key(|c| c.1)
    }
}

#[derive(Debug, Error)]
pub enum SceneError {
    #[error("primitive {index}: degenerate triangle (area {area:e} m²)")]
    Degenerate { index: usize, area: f64 },
    #[error("primitive {index}: non-finite vertex")]
    NonFinite { index: usize },
    #[error("primitive {index}: material_id {material_id} out of range ({count} materials)")]
    MaterialOutOfRange {
        index: usize,
        material_id: u32,
        count: usize,
    },
    #[error("primitive {index}: walnut primitive must carry instance_id > 0")]
    WalnutWithoutInstance { index: usize },
    #[error("primitive {index}: {class} primitive carries instance_id {instance_id}, expected 0")]
    InstanceOnNonWalnut {
        index: usize,
        class: &'static str,
        instance_id: u32,
    },
    #[error("walnut instance ids are not contiguous: {count} distinct ids, max id {max}")]
    NonContiguousInstances { count: usize, max: u32 },
    #[error("material {index}: {source}")]
    Material {
        index: usize,
        #[source]
        source: MaterialError,
    },
    #[error("materials disagree on band count: material {index} has {found}, expected {expected}")]
    BandMismatch {
        index: usize,
        found: usize,
        expected: usize,
    },
}

/// Immutable scene: primitives, materials and the acceleration index.
#[derive(Debug, Clone)]
pub struct Scene {
    primitives: Vec<Primitive>,
    materials: Vec<Material>,
    index: Bvh,
    instance_count: u32,
}

impl Scene {
    /// Validates labels, materials and geometry, then builds the index.
    pub fn new(primitives: Vec<Primitive>, materials: Vec<Material>) -> Result<Self, SceneError> {
        let band_count = materials.first().map(|m| m.band_count());
        for (index, m) in materials.iter().enumerate() {
            m.validate().map_err(|source| SceneError::Material { index, source })?;
            if let Some(expected) = band_count {
                if m.band_count() != expected {
                    return Err(SceneError::BandMismatch {
                        index,
                        found: m.band_count(),
                        expected,
                    });
                }
            }
        }

        let mut ids = Vec::new();
        for (index, p) in primitives.iter().enumerate() {
            if !p.vertices.iter().all(|v| v.is_finite()) {
                return Err(SceneError::NonFinite { index });
            }
            if p.is_degenerate() {
                return Err(SceneError::Degenerate {
                    index,
                    area: p.area(),
                });
            }
            if p.material_id as usize >= materials.len() {
                return Err(SceneError::MaterialOutOfRange {
                    index,
                    material_id: p.material_id,
                    count: materials.len(),
                });
            }
            match (p.class_id, p.instance_id) {
                (ClassId::Walnut, 0) => return Err(SceneError::WalnutWithoutInstance { index }),
                (ClassId::Walnut, id) => ids.push(id),
                (_, 0) => {}
                (class, instance_id) => {
                    return Err(SceneError::InstanceOnNonWalnut {
                        index,
                        class: class.name(),
                        instance_id,
                    })
                }
            }
        }
        ids.sort_unstable();
        ids.dedup();
        let max = ids.last().copied().unwrap_or(0);
        if max as usize != ids.len() {
            return Err(SceneError::NonContiguousInstances {
                count: ids.len(),
                max,
            });
        }

        let index = Bvh::build(&primitives);
        Ok(Self {
            primitives,
            materials,
            index,
            instance_count: max,
        })
    }

    pub fn primitives(&self) -> &[Primitive] {
        &self.primitives
    }

    pub fn materials(&self) -> &[Material] {
        &self.materials
    }

    pub fn index(&self) -> &Bvh {
        &self.index
    }

    /// Number of walnut instances (ids `1..=K`).
    pub fn instance_count(&self) -> u32 {
        self.instance_count
    }

    pub fn material_of(&self, primitive_index: usize) -> &Material {
        &self.materials[self.primitives[primitive_index].material_id as usize]
    }

    pub fn intersect_closest(&self, ray: &Ray) -> Option<HitRecord> {
        self.index
            .closest(ray)
            .map(|(t, i, u, v)| self.hit_record(ray, t, i as usize, u, v))
    }

    pub fn intersect_any(&self, ray: &Ray) -> bool {
        self.index.any(ray)
    }

    /// Closest hit by testing every primitive; same result as
    /// [`Scene::intersect_closest`], for benchmarks and cross-checks.
    pub fn intersect_closest_linear(&self, ray: &Ray) -> Option<HitRecord> {
        let kernel = RayKernel::new(ray);
        let mut closest = ClosestHit::new();
        for (i, p) in self.primitives.iter().enumerate() {
            let t_max = ray.t_max.min(closest.bound());
            if let Some((t, u, v)) = kernel.intersect(&p.vertices, ray.t_min, t_max) {
                closest.offer(t, i as u32, u, v);
            }
        }
        closest
            .finish()
            .map(|(t, i, u, v)| self.hit_record(ray, t, i as usize, u, v))
    }

    fn hit_record(&self, ray: &Ray, t: f64, primitive_index: usize, u: f64, v: f64) -> HitRecord {
        HitRecord {
            t,
            point: ray.at(t),
            geometric_normal: self.primitives[primitive_index].normal(),
            primitive_index,
            barycentrics: (u, v),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tri(z: f64) -> Primitive {
        Primitive::new(
            [
                Vec3::new(-1.0, -1.0, z),
                Vec3::new(1.0, -1.0, z),
                Vec3::new(0.0, 1.0, z),
            ],
            0,
            0,
            ClassId::Leaf,
        )
    }

    fn down_ray() -> Ray {
        Ray::new(Vec3::new(0.0, 0.0, 1.0), -Vec3::Z)
    }

    fn scene(prims: Vec<Primitive>) -> Scene {
        Scene::new(prims, vec![Material::gray(4, 0.5)]).unwrap()
    }

    #[test]
    fn axis_aligned_hit() {
        let (t, u, v) = ray_triangle(&down_ray(), &tri(0.0)).unwrap();
        assert_eq!(t, 1.0);
        assert!(u >= 0.0 && v >= 0.0 && u + v <= 1.0);
    }

    #[test]
    fn parallel_ray_misses() {
        let r = Ray::new(Vec3::new(0.0, 0.0, 1.0), Vec3::X);
        assert!(ray_triangle(&r, &tri(0.0)).is_none());
    }

    #[test]
    fn shifted_triangle() {
        let (t, _, _) = ray_triangle(&down_ray(), &tri(0.25)).unwrap();
        assert_eq!(t, 0.75);
    }

    #[test]
    fn hit_outside_range_is_rejected() {
        let r = down_ray().with_range(0.0, 0.5);
        assert!(ray_triangle(&r, &tri(0.0)).is_none());
        let r = down_ray().with_range(1.0, 2.0);
        assert!(ray_triangle(&r, &tri(0.0)).is_none());
    }

    #[test]
    fn barycentrics_reconstruct_point() {
        let p = tri(0.0);
        let r = Ray::new(Vec3::new(0.3, -0.2, 2.0), Vec3::new(0.05, 0.1, -1.0));
        let (t, u, v) = ray_triangle(&r, &p).unwrap();
        let [a, b, c] = p.vertices;
        let q = a * (1.0 - u - v) + b * u + c * v;
        assert!((q - r.at(t)).length() < 1e-12);
    }

    #[test]
    fn shared_edge_is_watertight() {
        // Two triangles sharing the edge x = 0; rays aimed exactly at the edge.
        let left = Primitive::new(
            [Vec3::new(-1.0, -1.0, 0.0), Vec3::new(0.0, -1.0, 0.0), Vec3::new(0.0, 1.0, 0.0)],
            0,
            0,
            ClassId::Leaf,
        );
        let right = Primitive::new(
            [Vec3::new(0.0, -1.0, 0.0), Vec3::new(1.0, -1.0, 0.0), Vec3::new(0.0, 1.0, 0.0)],
            0,
            0,
            ClassId::Leaf,
        );
        for k in 0..200 {
            let y = -0.99 + 1.98 * k as f64 / 199.0;
            let r = Ray::new(Vec3::new(0.37, 0.11, 1.3), Vec3::new(-0.37, y - 0.11, -1.3));
            assert!(
                ray_triangle(&r, &left).is_some() || ray_triangle(&r, &right).is_some(),
                "edge ray {k} leaked"
            );
        }
    }

    #[test]
    fn nearer_triangle_wins() {
        let s = scene(vec![tri(-1.0), tri(0.0)]);
        let hit = s.intersect_closest(&down_ray()).unwrap();
        assert_eq!(hit.primitive_index, 1);
        assert_eq!(hit.point.z, 0.0);
    }

    #[test]
    fn coplanar_tie_prefers_lowest_index() {
        let s = scene(vec![tri(0.0), tri(0.0), tri(0.0)]);
        assert_eq!(s.intersect_closest(&down_ray()).unwrap().primitive_index, 0);
        assert_eq!(s.intersect_closest_linear(&down_ray()).unwrap().primitive_index, 0);
    }

    #[test]
    fn miss_returns_none() {
        let s = scene(vec![tri(0.0)]);
        let r = Ray::new(Vec3::new(5.0, 5.0, 1.0), -Vec3::Z);
        assert!(s.intersect_closest(&r).is_none());
        assert!(!s.intersect_any(&r));
    }

    #[test]
    fn any_hit_respects_t_max() {
        let s = scene(vec![tri(0.0)]);
        assert!(s.intersect_any(&down_ray()));
        assert!(!s.intersect_any(&down_ray().with_range(0.0, 0.9)));
    }

    #[test]
    fn empty_scene_has_no_hits() {
        let s = Scene::new(Vec::new(), Vec::new()).unwrap();
        assert!(s.intersect_closest(&down_ray()).is_none());
        assert!(!s.intersect_any(&down_ray()));
    }

    #[test]
    fn rejects_bad_labels() {
        let mut walnut = tri(0.0);
        walnut.class_id = ClassId::Walnut;
        let err = Scene::new(vec![walnut], vec![Material::gray(4, 0.5)]).unwrap_err();
        assert!(matches!(err, SceneError::WalnutWithoutInstance { index: 0 }));

        let mut leaf = tri(0.0);
        leaf.instance_id = 3;
        assert!(matches!(
            Scene::new(vec![leaf], vec![Material::gray(4, 0.5)]),
            Err(SceneError::InstanceOnNonWalnut { .. })
        ));

        walnut.instance_id = 2;
        assert!(matches!(
            Scene::new(vec![walnut], vec![Material::gray(4, 0.5)]),
            Err(SceneError::NonContiguousInstances { count: 1, max: 2 })
        ));
    }

    #[test]
    fn rejects_degenerate_and_bad_material() {
        let flat = Primitive::new([Vec3::ZERO, Vec3::X, Vec3::X * 2.0], 0, 0, ClassId::Bark);
        assert!(matches!(
            Scene::new(vec![flat], vec![Material::gray(4, 0.5)]),
            Err(SceneError::Degenerate { .. })
        ));
        let mut p = tri(0.0);
        p.material_id = 1;
        assert!(matches!(
            Scene::new(vec![p], vec![Material::gray(4, 0.5)]),
            Err(SceneError::MaterialOutOfRange { .. })
        ));
    }
}
