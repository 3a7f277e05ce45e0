//! Procedural walnut trees and orchards.
//!
//! A tree is a trunk cylinder topped by recursive axial branching: every node
//! spawns `branches_per_node` children tilted by `branch_angle` from the
//! parent axis and scaled by `branch_length_ratio`. Leaves are flat cards
//! scattered along each branch, and nuts are clusters of spheres hanging from
//! the branch tips. Each walnut gets its own instance id.

mod tessellate;

use std::f64::consts::TAU;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use tessellate::{
    leaf_card, leaf_card_oriented, tessellate_cylinder, tessellate_sphere, TessellationError,
    Triangle, MAX_SPHERE_SUBDIVISIONS,
};

use crate::geometry::Vec3;
use crate::rng::purpose_rng;
use crate::scene::{ClassId, Primitive, Scene, SceneError};
use crate::spectral::MaterialLibrary;

/// Branches never point further below the horizon than this (sine of the
/// elevation), which keeps crowns above the ground.
const MIN_BRANCH_RISE: f64 = 0.05;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CanopyParams {
    pub trunk_height: f64,
    pub trunk_radius: f64,
    pub branch_levels: u32,
    pub branches_per_node: u32,
    /// Degrees between a child branch and its parent axis.
    pub branch_angle: f64,
    pub branch_length_ratio: f64,
    pub leaves_per_branch: u32,
    pub leaf_length: f64,
    pub leaf_width: f64,
    pub nut_clusters: u32,
    pub nuts_per_cluster: u32,
    pub nut_radius: f64,
    /// 0 gives perfectly regular trees; 1 is the maximum randomization.
    pub jitter: f64,
    pub seed: u64,
}

impl Default for CanopyParams {
    /// A ~4 m walnut-like tree.
    fn default() -> Self {
        Self {
            trunk_height: 1.6,
            trunk_radius: 0.12,
            branch_levels: 4,
            branches_per_node: 3,
            branch_angle: 38.0,
            branch_length_ratio: 0.72,
            leaves_per_branch: 24,
            leaf_length: 0.12,
            leaf_width: 0.06,
            nut_clusters: 14,
            nuts_per_cluster: 3,
            nut_radius: 0.02,
            jitter: 0.5,
            seed: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TessellationQuality {
    pub sphere_subdivisions: u32,
    pub cylinder_segments: u32,
}

impl Default for TessellationQuality {
    fn default() -> Self {
        Self {
            sphere_subdivisions: 2,
            cylinder_segments: 8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OrchardParams {
    pub rows: u32,
    pub cols: u32,
    /// Distance between rows (along y).
    pub row_spacing: f64,
    /// Distance between trees within a row (along x).
    pub col_spacing: f64,
    /// Ground margin beyond the outermost trees.
    pub ground_extent: f64,
    pub tree: CanopyParams,
    /// Give tree `i` the seed `tree.seed + i` instead of sharing `tree.seed`.
    #[serde(default = "default_true")]
    pub vary_tree_seeds: bool,
}

fn default_true() -> bool {
    true
}

impl Default for OrchardParams {
    fn default() -> Self {
        Self {
            rows: 3,
            cols: 3,
            row_spacing: 6.0,
            col_spacing: 5.0,
            ground_extent: 20.0,
            tree: CanopyParams::default(),
            vary_tree_seeds: true,
        }
    }
}

#[derive(Debug, Error)]
pub enum CanopyError {
    #[error("invalid {field}: {reason}")]
    Invalid { field: &'static str, reason: String },
    #[error(transparent)]
    Tessellation(#[from] TessellationError),
    #[error(transparent)]
    Scene(#[from] SceneError),
}

fn invalid(field: &'static str, reason: impl Into<String>) -> CanopyError {
    CanopyError::Invalid {
        field,
        reason: reason.into(),
    }
}

fn require_length(field: &'static str, v: f64) -> Result<(), CanopyError> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(invalid(field, format!("must be a positive length, got {v}")))
    }
}

impl CanopyParams {
    pub fn validate(&self) -> Result<(), CanopyError> {
        require_length("trunk_height", self.trunk_height)?;
        require_length("trunk_radius", self.trunk_radius)?;
        require_length("leaf_length", self.leaf_length)?;
        require_length("leaf_width", self.leaf_width)?;
        require_length("nut_radius", self.nut_radius)?;
        if self.branches_per_node < 1 {
            return Err(invalid("branches_per_node", "must be >= 1"));
        }
        if self.nuts_per_cluster < 1 {
            return Err(invalid("nuts_per_cluster", "must be >= 1"));
        }
        if !(self.branch_length_ratio > 0.0 && self.branch_length_ratio < 1.0) {
            return Err(invalid(
                "branch_length_ratio",
                format!("must lie in (0, 1), got {}", self.branch_length_ratio),
            ));
        }
        if !(0.0..=1.0).contains(&self.jitter) {
            return Err(invalid("jitter", format!("must lie in [0, 1], got {}", self.jitter)));
        }
        if !(0.0..180.0).contains(&self.branch_angle) {
            return Err(invalid(
                "branch_angle",
                format!("must lie in [0, 180) degrees, got {}", self.branch_angle),
            ));
        }
        Ok(())
    }

    /// Walnuts per tree.
    pub fn nut_count(&self) -> u32 {
        self.nut_clusters * self.nuts_per_cluster
    }
}

impl TessellationQuality {
    pub fn validate(&self) -> Result<(), CanopyError> {
        if !(1..=MAX_SPHERE_SUBDIVISIONS).contains(&self.sphere_subdivisions) {
            return Err(invalid(
                "sphere_subdivisions",
                format!("must lie in 1..={MAX_SPHERE_SUBDIVISIONS}"),
            ));
        }
        if self.cylinder_segments < 3 {
            return Err(invalid("cylinder_segments", "must be >= 3"));
        }
        Ok(())
    }
}

impl OrchardParams {
    pub fn validate(&self) -> Result<(), CanopyError> {
        if self.rows < 1 {
            return Err(invalid("rows", "must be >= 1"));
        }
        if self.cols < 1 {
            return Err(invalid("cols", "must be >= 1"));
        }
        require_length("row_spacing", self.row_spacing)?;
        require_length("col_spacing", self.col_spacing)?;
        require_length("ground_extent", self.ground_extent)?;
        self.tree.validate()
    }

    pub fn tree_count(&self) -> u32 {
        self.rows * self.cols
    }
}

/// Counts of what went into a generated tree.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct TreeStats {
    /// Branch segments, excluding the trunk.
    pub branches: u32,
    /// Terminal segments: `branches_per_node ^ branch_levels` (the trunk when
    /// there are no branch levels).
    pub tips: u32,
    pub leaves: u32,
    pub nuts: u32,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Tree {
    pub primitives: Vec<Primitive>,
    pub stats: TreeStats,
}

#[derive(Debug, Clone, Copy)]
struct Segment {
    start: Vec3,
    end: Vec3,
    radius: f64,
    level: u32,
}

impl Segment {
    fn direction(&self) -> Vec3 {
        (self.end - self.start).normalize()
    }

    fn length(&self) -> f64 {
        (self.end - self.start).length()
    }
}

/// `1 + u * jitter * spread` with `u` uniform in `[-1, 1]`.
fn jittered(rng: &mut ChaCha8Rng, jitter: f64, spread: f64) -> f64 {
    1.0 + rng.random_range(-1.0..=1.0) * jitter * spread
}

fn clamp_rise(d: Vec3) -> Vec3 {
    if d.z >= MIN_BRANCH_RISE {
        return d;
    }
    let horizontal = Vec3::new(d.x, d.y, 0.0);
    let horizontal = if horizontal.length() > 1e-12 {
        horizontal.normalize()
    } else {
        Vec3::X
    };
    horizontal * (1.0 - MIN_BRANCH_RISE * MIN_BRANCH_RISE).sqrt() + Vec3::Z * MIN_BRANCH_RISE
}

/// Trunk first, then branches level by level.
fn grow_skeleton(params: &CanopyParams) -> Vec<Segment> {
    let mut rng = purpose_rng(params.seed, "branches");
    let trunk = Segment {
        start: Vec3::ZERO,
        end: Vec3::new(0.0, 0.0, params.trunk_height),
        radius: params.trunk_radius,
        level: 0,
    };
    let mut segments = vec![trunk];
    let mut frontier = vec![(trunk, 0.0_f64)];
    let b = params.branches_per_node;
    let angle = params.branch_angle.to_radians();

    for level in 1..=params.branch_levels {
        let mut next = Vec::with_capacity(frontier.len() * b as usize);
        for (parent, phase) in &frontier {
            let axis = parent.direction();
            let (u, w) = axis.orthonormal_basis();
            for k in 0..b {
                let sector = TAU / b as f64;
                let phi = phase + sector * k as f64 + rng.random_range(-0.5..=0.5) * sector * params.jitter;
                let theta = angle * jittered(&mut rng, params.jitter, 0.3);
                let dir = axis * theta.cos() + (u * phi.cos() + w * phi.sin()) * theta.sin();
                let dir = clamp_rise(dir.normalize());
                let length = parent.length() * params.branch_length_ratio * jittered(&mut rng, params.jitter, 0.2);
                let child = Segment {
                    start: parent.end,
                    end: parent.end + dir * length,
                    radius: parent.radius * params.branch_length_ratio,
                    level,
                };
                segments.push(child);
                // Golden-angle phase offset keeps siblings of siblings apart.
                next.push((child, phase + 2.399_963 * (k + 1) as f64));
            }
        }
        frontier = next;
    }
    segments
}

/// Moves every vertex up by the same amount if any lies below the ground.
fn lift_above_ground(tris: &mut [Triangle]) {
    let min_z = tris
        .iter()
        .flat_map(|t| t.iter())
        .fold(f64::INFINITY, |m, v| m.min(v.z));
    if min_z < 0.0 {
        let up = Vec3::new(0.0, 0.0, -min_z);
        for t in tris.iter_mut() {
            for v in t.iter_mut() {
                *v += up;
            }
        }
    }
}

fn push_all(out: &mut Vec<Primitive>, tris: Vec<Triangle>, class: ClassId, instance_id: u32) {
    let material_id = MaterialLibrary::material_id(class);
    out.extend(
        tris.into_iter()
            .map(|t| Primitive::new(t, material_id, instance_id, class)),
    );
}

/// Tree geometry plus counts; walnut ids are `1..=nut_count`.
pub fn grow_tree(params: &CanopyParams, quality: &TessellationQuality) -> Result<Tree, CanopyError> {
    params.validate()?;
    quality.validate()?;

    let skeleton = grow_skeleton(params);
    let mut primitives = Vec::new();
    let mut stats = TreeStats {
        branches: skeleton.len() as u32 - 1,
        ..TreeStats::default()
    };

    for seg in &skeleton {
        let mut tris = tessellate_cylinder(seg.start, seg.end, seg.radius, quality.cylinder_segments)?;
        lift_above_ground(&mut tris);
        push_all(&mut primitives, tris, ClassId::Bark, 0);
    }

    let mut leaf_rng = purpose_rng(params.seed, "leaves");
    for seg in skeleton.iter().filter(|s| s.level > 0) {
        let axis = seg.direction();
        let (u, w) = axis.orthonormal_basis();
        for _ in 0..params.leaves_per_branch {
            let along = leaf_rng.random_range(0.3..=1.0);
            let phi = leaf_rng.random_range(0.0..TAU);
            let radial = u * phi.cos() + w * phi.sin();
            let anchor = seg.start + (seg.end - seg.start) * along + radial * seg.radius;
            // Leaves splay out from the twig and droop a little.
            let droop = leaf_rng.random_range(-0.6..=0.2);
            let dir = (radial + axis * 0.4 + Vec3::Z * droop).normalize();
            let roll = leaf_rng.random_range(0.0..TAU);
            let (su, sw) = dir.orthonormal_basis();
            let side = su * roll.cos() + sw * roll.sin();
            let length = params.leaf_length * jittered(&mut leaf_rng, params.jitter, 0.25);
            let width = params.leaf_width * jittered(&mut leaf_rng, params.jitter, 0.25);
            let mut tris = leaf_card_oriented(anchor, dir, side, length, width)?.to_vec();
            lift_above_ground(&mut tris);
            push_all(&mut primitives, tris, ClassId::Leaf, 0);
            stats.leaves += 1;
        }
    }

    let tips: Vec<&Segment> = skeleton
        .iter()
        .filter(|s| s.level == params.branch_levels)
        .collect();
    stats.tips = tips.len() as u32;

    let mut nut_rng = purpose_rng(params.seed, "nuts");
    let r = params.nut_radius;
    let n = params.nuts_per_cluster;
    let mut next_id = 1;
    for _ in 0..params.nut_clusters {
        let tip = tips[nut_rng.random_range(0..tips.len())];
        let lateral = Vec3::new(
            nut_rng.random_range(-1.0..=1.0),
            nut_rng.random_range(-1.0..=1.0),
            0.0,
        ) * (params.leaf_length * params.jitter);
        let center = tip.end + lateral - Vec3::Z * (tip.radius + 1.5 * r);
        let ring = if n > 1 {
            1.1 * r / (std::f64::consts::PI / n as f64).sin()
        } else {
            0.0
        };
        let phase = nut_rng.random_range(0.0..TAU);
        for j in 0..n {
            let phi = phase + TAU * j as f64 / n as f64;
            let drop = nut_rng.random_range(0.0..=1.0) * r * params.jitter;
            let c = center + Vec3::new(phi.cos(), phi.sin(), 0.0) * ring - Vec3::Z * drop;
            let mut tris = tessellate_sphere(c, r, quality.sphere_subdivisions)?;
            lift_above_ground(&mut tris);
            push_all(&mut primitives, tris, ClassId::Walnut, next_id);
            next_id += 1;
            stats.nuts += 1;
        }
    }

    Ok(Tree { primitives, stats })
}

/// Triangles for one tree rooted at the origin: bark, leaf cards and
/// walnuts (ids `1..=nut_clusters * nuts_per_cluster`).
pub fn generate_tree(params: &CanopyParams, quality: &TessellationQuality) -> Result<Vec<Primitive>, CanopyError> {
    grow_tree(params, quality).map(|t| t.primitives)
}

/// Grid positions (after jitter) of every tree, row-major.
pub fn tree_positions(params: &OrchardParams) -> Vec<Vec3> {
    let mut rng = purpose_rng(params.tree.seed, "orchard-layout");
    let mut out = Vec::with_capacity(params.tree_count() as usize);
    for row in 0..params.rows {
        for col in 0..params.cols {
            let x = (col as f64 - (params.cols - 1) as f64 / 2.0) * params.col_spacing;
            let y = (row as f64 - (params.rows - 1) as f64 / 2.0) * params.row_spacing;
            let dx: f64 = rng.random_range(-0.15..=0.15) * params.col_spacing * params.tree.jitter;
            let dy: f64 = rng.random_range(-0.15..=0.15) * params.row_spacing * params.tree.jitter;
            out.push(Vec3::new(x + dx, y + dy, 0.0));
        }
    }
    out
}

/// All orchard triangles: trees in row-major order followed by the two
/// ground triangles. Walnut ids run `1..=K` across the whole orchard.
pub fn generate_orchard_primitives(
    params: &OrchardParams,
    quality: &TessellationQuality,
) -> Result<Vec<Primitive>, CanopyError> {
    params.validate()?;
    quality.validate()?;

    let positions = tree_positions(params);
    let mut primitives = Vec::new();
    let mut id_offset = 0;
    for (i, &pos) in positions.iter().enumerate() {
        let mut tree = params.tree.clone();
        if params.vary_tree_seeds {
            tree.seed = tree.seed.wrapping_add(i as u64);
        }
        let grown = grow_tree(&tree, quality)?;
        primitives.extend(grown.primitives.into_iter().map(|mut p| {
            if p.instance_id > 0 {
                p.instance_id += id_offset;
            }
            p.translated(pos)
        }));
        id_offset += grown.stats.nuts;
    }

    let lo = positions.iter().fold(Vec3::splat(f64::INFINITY), |m, &p| m.min(p));
    let hi = positions.iter().fold(Vec3::splat(f64::NEG_INFINITY), |m, &p| m.max(p));
    let e = params.ground_extent;
    let corners = [
        Vec3::new(lo.x - e, lo.y - e, 0.0),
        Vec3::new(hi.x + e, lo.y - e, 0.0),
        Vec3::new(hi.x + e, hi.y + e, 0.0),
        Vec3::new(lo.x - e, hi.y + e, 0.0),
    ];
    push_all(
        &mut primitives,
        vec![
            [corners[0], corners[1], corners[2]],
            [corners[0], corners[2], corners[3]],
        ],
        ClassId::Ground,
        0,
    );
    Ok(primitives)
}

/// Orchard scene with the given materials.
pub fn generate_orchard(
    params: &OrchardParams,
    quality: &TessellationQuality,
    materials: &MaterialLibrary,
) -> Result<Scene, CanopyError> {
    let primitives = generate_orchard_primitives(params, quality)?;
    Ok(Scene::new(primitives, materials.to_vec())?)
}
