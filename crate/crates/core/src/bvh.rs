//! Bounding volume hierarchy over scene triangles.
//!
//! Built top-down with a binned surface-area heuristic and flattened into an
//! array; the two children of an interior node are stored next to each other.
//! Queries go through the same triangle kernel and tie resolution as the
//! linear scan in [`crate::scene::Scene::intersect_closest_linear`], so both
//! paths return identical hits.


use crate::geometry::{Aabb, Ray, Vec3};
use crate::scene::{ClosestHit, Primitive, RayKernel};

const BIN_COUNT: usize = 16;
const MAX_LEAF_SIZE: usize = 4;
const TRAVERSAL_COST: f64 = 1.0;
const INTERSECTION_COST: f64 = 1.0;
/// Triangles longer than this multiple of the median longest edge are
/// referenced through several smaller boxes.
const LONG_EDGE_FACTOR: f64 = 4.0;
/// At most `2^MAX_SPLIT_DEPTH` references per triangle.
const MAX_SPLIT_DEPTH: u32 = 4;

#[derive(Debug, Clone, Copy)]
struct Node {
    bounds: Aabb,
    /// Leaf: first triangle. Interior: index of the left child.
    first: u32,
    /// Triangle count for leaves, 0 for interior nodes.
    count: u32,
}

/// Traversal node: bounds rounded outward to `f32`, two nodes per cache line.
#[derive(Debug, Clone, Copy)]
struct PackedNode {
    /// `min.x, min.y, min.z, max.x, max.y, max.z`.
    planes: [f32; 6],
    first: u32,
    count: u32,
}

fn round_down(x: f64) -> f32 {
    let f = x as f32;
    if f as f64 > x {
        f.next_down()
    } else {
        f
    }
}

fn round_up(x: f64) -> f32 {
    let f = x as f32;
    if (f as f64) < x {
        f.next_up()
    } else {
        f
    }
}

impl PackedNode {
    fn pack(node: &Node) -> Self {
        let (lo, hi) = (node.bounds.min, node.bounds.max);
        Self {
            planes: [
                round_down(lo.x),
                round_down(lo.y),
                round_down(lo.z),
                round_up(hi.x),
                round_up(hi.y),
                round_up(hi.z),
            ],
            first: node.first,
            count: node.count,
        }
    }

    /// Bounds containing the build-time box.
    #[inline(always)]
    fn bounds(&self) -> Aabb {
        let p = self.planes.map(f64::from);
        Aabb {
            min: Vec3::new(p[0], p[1], p[2]),
            max: Vec3::new(p[3], p[4], p[5]),
        }
    }
}

#[derive(Debug, Clone, Copy)]
struct BuildRef {
    bounds: Aabb,
    centroid: Vec3,
    index: u32,
}

#[derive(Debug, Clone, Default)]
pub struct Bvh {
    nodes: Vec<PackedNode>,
    /// Triangle vertices in leaf order.
    triangles: Vec<[Vec3; 3]>,
    /// Original primitive index of each entry in `triangles`.
    ids: Vec<u32>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BvhStats {
    pub nodes: usize,
    pub leaves: usize,
    pub max_depth: usize,
    pub max_leaf_size: usize,
}

impl Bvh {
    pub fn build(primitives: &[Primitive]) -> Self {
        if primitives.is_empty() {
            return Self::default();
        }
        let long_edge = long_edge_threshold(primitives);
        let mut refs: Vec<BuildRef> = Vec::with_capacity(primitives.len());
        for (i, p) in primitives.iter().enumerate() {
            push_refs(&mut refs, &p.vertices, i as u32, long_edge, MAX_SPLIT_DEPTH);
        }

        let mut nodes = Vec::with_capacity(2 * refs.len() / MAX_LEAF_SIZE + 1);
        nodes.push(Node {
            bounds: Aabb::EMPTY,
            first: 0,
            count: 0,
        });
        build_node(&mut nodes, 0, &mut refs, 0);

        let triangles = refs
            .iter()
            .map(|r| primitives[r.index as usize].vertices)
            .collect();
        let ids = refs.iter().map(|r| r.index).collect();
        Self {
            nodes: nodes.iter().map(PackedNode::pack).collect(),
            triangles,
            ids,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn bounds(&self) -> Aabb {
        self.nodes.first().map_or(Aabb::EMPTY, PackedNode::bounds)
    }

    pub fn stats(&self) -> BvhStats {
        let mut stats = BvhStats {
            nodes: self.nodes.len(),
            leaves: 0,
            max_depth: 0,
            max_leaf_size: 0,
        };
        if self.nodes.is_empty() {
            return stats;
        }
        let mut stack = vec![(0usize, 1usize)];
        while let Some((i, depth)) = stack.pop() {
            let node = self.nodes[i];
            stats.max_depth = stats.max_depth.max(depth);
            if node.count > 0 {
                stats.leaves += 1;
                stats.max_leaf_size = stats.max_leaf_size.max(node.count as usize);
            } else {
                stack.push((node.first as usize, depth + 1));
                stack.push((node.first as usize + 1, depth + 1));
            }
        }
        stats
    }

    /// Closest hit as `(t, primitive_index, u, v)`.
    pub(crate) fn closest(&self, ray: &Ray) -> Option<(f64, u32, f64, f64)> {
        if self.nodes.is_empty() {
            return None;
        }
        match SlabTest::new(ray) {
            Some(fast) => self.closest_with(ray, &fast),
            None => self.closest_with(ray, &GeneralTest::new(ray)),
        }
    }

    pub(crate) fn any(&self, ray: &Ray) -> bool {
        if self.nodes.is_empty() {
            return false;
        }
        match SlabTest::new(ray) {
            Some(fast) => self.any_with(ray, &fast),
            None => self.any_with(ray, &GeneralTest::new(ray)),
        }
    }

    #[inline(always)]
    fn closest_with<B: BoxTest>(&self, ray: &Ray, test: &B) -> Option<(f64, u32, f64, f64)> {
        let kernel = RayKernel::new(ray);
        let mut closest = ClosestHit::new();
        let mut stack = Stack::<(u32, f64)>::new();
        let box_hit = |n: &PackedNode, t_max: f64| test.hit(n, ray.t_min, t_max);

        if let Some(t) = box_hit(&self.nodes[0], ray.t_max) {
            stack.push((0, t));
        }
        while let Some((i, entry)) = stack.pop() {
            let limit = ray.t_max.min(closest.bound());
            if entry > limit {
                continue;
            }
            let node = &self.nodes[i as usize];
            if node.count > 0 {
                let start = node.first as usize;
                for k in start..start + node.count as usize {
                    let limit = ray.t_max.min(closest.bound());
                    if let Some((t, u, v)) = kernel.intersect(&self.triangles[k], ray.t_min, limit) {
                        closest.offer(t, self.ids[k], u, v);
                    }
                }
                continue;
            }
            let left = node.first;
            let right = left + 1;
            let hit_l = box_hit(&self.nodes[left as usize], limit);
            let hit_r = box_hit(&self.nodes[right as usize], limit);
            match (hit_l, hit_r) {
                (Some(tl), Some(tr)) => {
                    // Nearer child on top of the stack.
                    if tl <= tr {
                        stack.push((right, tr));
                        stack.push((left, tl));
                    } else {
                        stack.push((left, tl));
                        stack.push((right, tr));
                    }
                }
                (Some(tl), None) => stack.push((left, tl)),
                (None, Some(tr)) => stack.push((right, tr)),
                (None, None) => {}
            }
        }
        closest.finish()
    }

    #[inline(always)]
    fn any_with<B: BoxTest>(&self, ray: &Ray, test: &B) -> bool {
        let kernel = RayKernel::new(ray);
        let mut stack = Stack::<u32>::new();
        let box_hit = |n: &PackedNode| test.hit(n, ray.t_min, ray.t_max);
        if box_hit(&self.nodes[0]).is_some() {
            stack.push(0);
        }
        while let Some(i) = stack.pop() {
            let node = &self.nodes[i as usize];
            if node.count > 0 {
                let start = node.first as usize;
                let tris = &self.triangles[start..start + node.count as usize];
                if tris
                    .iter()
                    .any(|tri| kernel.intersect(tri, ray.t_min, ray.t_max).is_some())
                {
                    return true;
                }
                continue;
            }
            let left = node.first;
            let right = left + 1;
            // Nearer child first: occluders close to the origin end the search sooner.
            match (
                box_hit(&self.nodes[left as usize]),
                box_hit(&self.nodes[right as usize]),
            ) {
                (Some(tl), Some(tr)) => {
                    if tl <= tr {
                        stack.push(right);
                        stack.push(left);
                    } else {
                        stack.push(left);
                        stack.push(right);
                    }
                }
                (Some(_), None) => stack.push(left),
                (None, Some(_)) => stack.push(right),
                (None, None) => {}
            }
        }
        false
    }
}

/// Traversal stack: a fixed array, spilling to the heap only for unusually
/// deep trees.
struct Stack<T: Copy + Default> {
    items: [T; 64],
    len: usize,
    spill: Vec<T>,
}

impl<T: Copy + Default> Stack<T> {
    #[inline(always)]
    fn new() -> Self {
        Self {
            items: [T::default(); 64],
            len: 0,
            spill: Vec::new(),
        }
    }

    #[inline(always)]
    fn push(&mut self, v: T) {
        if self.len < 64 {
            self.items[self.len] = v;
            self.len += 1;
        } else {
            self.spill.push(v);
        }
    }

    #[inline(always)]
    fn pop(&mut self) -> Option<T> {
        if let Some(v) = self.spill.pop() {
            return Some(v);
        }
        if self.len == 0 {
            return None;
        }
        self.len -= 1;
        Some(self.items[self.len])
    }
}

trait BoxTest {
    /// Entry distance when the ray meets the node bounds within `[t_min, t_max]`.
    fn hit(&self, node: &PackedNode, t_min: f64, t_max: f64) -> Option<f64>;
}

/// Fallback for rays with a zero direction component, NaN-safe via [`Aabb::hit`].
struct GeneralTest {
    origin: Vec3,
    inv: Vec3,
}

impl GeneralTest {
    fn new(ray: &Ray) -> Self {
        Self {
            origin: ray.origin,
            inv: reciprocal(ray.direction),
        }
    }
}

impl BoxTest for GeneralTest {
    #[inline(always)]
    fn hit(&self, node: &PackedNode, t_min: f64, t_max: f64) -> Option<f64> {
        node.bounds().hit(self.origin, self.inv, t_min, t_max)
    }
}

/// Slab test for rays whose inverse direction is finite on every axis, so no
/// slab product can be NaN. Near and far planes are chosen from the direction
/// signs.
struct SlabTest {
    origin: [f64; 3],
    inv: [f64; 3],
    negative: [bool; 3],
}

#[inline(always)]
fn fmax(a: f64, b: f64) -> f64 {
    if a > b {
        a
    } else {
        b
    }
}

#[inline(always)]
fn fmin(a: f64, b: f64) -> f64 {
    if a < b {
        a
    } else {
        b
    }
}

impl SlabTest {
    fn new(ray: &Ray) -> Option<Self> {
        let inv = reciprocal(ray.direction);
        let inv = [inv.x, inv.y, inv.z];
        if !inv.iter().all(|v| v.is_finite()) {
            return None;
        }
        let o = ray.origin;
        Some(Self {
            origin: [o.x, o.y, o.z],
            inv,
            negative: inv.map(|v| v < 0.0),
        })
    }

    #[inline(always)]
    fn axis<const K: usize>(&self, p: &[f32; 6]) -> (f64, f64) {
        const WIDEN: f64 = 1.0 + 4.0 * f64::EPSILON;
        let (lo, hi) = if self.negative[K] { (p[K + 3], p[K]) } else { (p[K], p[K + 3]) };
        let t0 = (lo as f64 - self.origin[K]) * self.inv[K];
        let t1 = (hi as f64 - self.origin[K]) * self.inv[K] * WIDEN;
        (t0, t1)
    }
}

impl BoxTest for SlabTest {
    #[inline(always)]
    fn hit(&self, node: &PackedNode, t_min: f64, t_max: f64) -> Option<f64> {
        let p = &node.planes;
        let (x0, x1) = self.axis::<0>(p);
        let (y0, y1) = self.axis::<1>(p);
        let (z0, z1) = self.axis::<2>(p);
        let near = fmax(fmax(t_min, x0), fmax(y0, z0));
        let far = fmin(fmin(t_max, x1), fmin(y1, z1));
        (near <= far).then_some(near)
    }
}

fn reciprocal(d: Vec3) -> Vec3 {
    Vec3::new(1.0 / d.x, 1.0 / d.y, 1.0 / d.z)
}

fn longest_edge(t: &[Vec3; 3]) -> (usize, f64) {
    (0..3)
        .map(|k| (k, (t[(k + 1) % 3] - t[k]).length()))
        .fold((0, f64::NEG_INFINITY), |best, e| if e.1 > best.1 { e } else { best })
}

fn long_edge_threshold(primitives: &[Primitive]) -> f64 {
    let mut edges: Vec<f64> = primitives.iter().map(|p| longest_edge(&p.vertices).1).collect();
    let mid = edges.len() / 2;
    let (_, median, _) = edges.select_nth_unstable_by(mid, f64::total_cmp);
    LONG_EDGE_FACTOR * *median
}

/// References to triangle `index`, splitting long triangles at the midpoint
/// of their longest edge. Each reference box is padded, so together they
/// cover the whole triangle; leaves still store the original triangle.
fn push_refs(refs: &mut Vec<BuildRef>, tri: &[Vec3; 3], index: u32, long_edge: f64, depth: u32) {
    let (k, len) = longest_edge(tri);
    if depth == 0 || !(len > long_edge) {
        let b = Aabb::from_points(tri);
        let scale = b.min.x.abs().max(b.min.y.abs()).max(b.min.z.abs()).max(b.max.x.abs()).max(b.max.y.abs()).max(b.max.z.abs());
        let pad = Vec3::splat(1e-9 * scale.max(1.0));
        let bounds = Aabb {
            min: b.min - pad,
            max: b.max + pad,
        };
        refs.push(BuildRef {
            bounds,
            centroid: bounds.centroid(),
            index,
        });
        return;
    }
    let (a, b, c) = (tri[k], tri[(k + 1) % 3], tri[(k + 2) % 3]);
    let m = (a + b) * 0.5;
    push_refs(refs, &[a, m, c], index, long_edge, depth - 1);
    push_refs(refs, &[m, b, c], index, long_edge, depth - 1);
}

/// Fills `nodes[node]` from `refs` (a slice starting at triangle `offset`).
fn build_node(nodes: &mut Vec<Node>, node: usize, refs: &mut [BuildRef], offset: usize) {
    let bounds = refs.iter().fold(Aabb::EMPTY, |b, r| b.union(r.bounds));
    let centroid_bounds = refs.iter().fold(Aabb::EMPTY, |b, r| b.grow(r.centroid));
    let n = refs.len();

    let make_leaf = |nodes: &mut Vec<Node>| {
        nodes[node] = Node {
            bounds,
            first: offset as u32,
            count: n as u32,
        };
    };

    if n <= MAX_LEAF_SIZE {
        make_leaf(nodes);
        return;
    }
    let axis = centroid_bounds.extent().max_axis();
    let lo = centroid_bounds.min[axis];
    let hi = centroid_bounds.max[axis];
    if !(hi > lo) {
        // All centroids coincide; no split separates them.
        make_leaf(nodes);
        return;
    }

    let mid = match sah_split(refs, &bounds, &centroid_bounds) {
        Some(mid) => mid,
        None if n <= 4 * MAX_LEAF_SIZE => {
            make_leaf(nodes);
            return;
        }
        None => {
            refs.sort_unstable_by(|a, b| {
                a.centroid[axis]
                    .total_cmp(&b.centroid[axis])
                    .then(a.index.cmp(&b.index))
            });
            n / 2
        }
    };

    let left = nodes.len();
    let placeholder = Node {
        bounds: Aabb::EMPTY,
        first: 0,
        count: 0,
    };
    nodes.push(placeholder);
    nodes.push(placeholder);
    nodes[node] = Node {
        bounds,
        first: left as u32,
        count: 0,
    };
    let (l, r) = refs.split_at_mut(mid);
    build_node(nodes, left, l, offset);
    build_node(nodes, left + 1, r, offset + mid);
}

/// Partitions `refs` at the cheapest binned SAH plane and returns the split
/// point, or `None` when keeping the node whole is cheaper.
fn sah_split(refs: &mut [BuildRef], bounds: &Aabb, centroid_bounds: &Aabb) -> Option<usize> {
    let parent_area = bounds.surface_area();
    let leaf_cost = INTERSECTION_COST * refs.len() as f64;
    let mut best: Option<(f64, usize, usize)> = None;

    for axis in 0..3 {
        let lo = centroid_bounds.min[axis];
        let extent = centroid_bounds.max[axis] - lo;
        if !(extent > 0.0) {
            continue;
        }
        let scale = BIN_COUNT as f64 / extent;
        let mut bins = [(Aabb::EMPTY, 0usize); BIN_COUNT];
        for r in refs.iter() {
            let b = bin_of(r.centroid[axis], lo, scale);
            bins[b].0 = bins[b].0.union(r.bounds);
            bins[b].1 += 1;
        }

        let mut right_area = [0.0; BIN_COUNT];
        let mut right_count = [0usize; BIN_COUNT];
        let mut acc = (Aabb::EMPTY, 0usize);
        for b in (1..BIN_COUNT).rev() {
            acc = (acc.0.union(bins[b].0), acc.1 + bins[b].1);
            right_area[b] = acc.0.surface_area();
            right_count[b] = acc.1;
        }
        let mut left = (Aabb::EMPTY, 0usize);
        for split in 1..BIN_COUNT {
            left = (left.0.union(bins[split - 1].0), left.1 + bins[split - 1].1);
            if left.1 == 0 || right_count[split] == 0 {
                continue;
            }
            let cost = TRAVERSAL_COST
                + INTERSECTION_COST
                    * (left.0.surface_area() * left.1 as f64
                        + right_area[split] * right_count[split] as f64)
                    / parent_area;
            if best.is_none_or(|(c, _, _)| cost < c) {
                best = Some((cost, axis, split));
            }
        }
    }

    let (cost, axis, split) = best?;
    if cost >= leaf_cost && refs.len() <= 4 * MAX_LEAF_SIZE {
        return None;
    }
    let lo = centroid_bounds.min[axis];
    let scale = BIN_COUNT as f64 / (centroid_bounds.max[axis] - lo);
    let mut mid = 0;
    for i in 0..refs.len() {
        if bin_of(refs[i].centroid[axis], lo, scale) < split {
            refs.swap(i, mid);
            mid += 1;
        }
    }
    (mid > 0 && mid < refs.len()).then_some(mid)
}

fn bin_of(c: f64, lo: f64, scale: f64) -> usize {
    (((c - lo) * scale) as usize).min(BIN_COUNT - 1)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::ClassId;

    fn grid(n: usize) -> Vec<Primitive> {
        let mut prims = Vec::new();
        for i in 0..n {
            for j in 0..n {
                let o = Vec3::new(i as f64, j as f64, (i * j % 3) as f64 * 0.1);
                prims.push(Primitive::new(
                    [o, o + Vec3::new(0.9, 0.0, 0.0), o + Vec3::new(0.0, 0.9, 0.0)],
                    0,
                    0,
                    ClassId::Leaf,
                ));
            }
        }
        prims
    }

    #[test]
    fn every_primitive_lands_in_exactly_one_leaf() {
        let prims = grid(20);
        let bvh = Bvh::build(&prims);
        let mut ids = bvh.ids.clone();
        ids.sort_unstable();
        assert_eq!(ids, (0..prims.len() as u32).collect::<Vec<_>>());
        let stats = bvh.stats();
        assert!(stats.max_leaf_size <= 4 * MAX_LEAF_SIZE);
        assert!(stats.leaves >= prims.len() / (4 * MAX_LEAF_SIZE));
    }

    fn with_long_triangles() -> Vec<Primitive> {
        let mut prims = grid(12);
        prims.push(Primitive::new(
            [Vec3::new(-1.0, 5.0, 0.5), Vec3::new(14.0, 5.3, 0.5), Vec3::new(-1.0, 5.8, 0.6)],
            0,
            0,
            ClassId::Bark,
        ));
        prims.push(Primitive::new(
            [Vec3::new(3.0, -2.0, 0.2), Vec3::new(3.4, 15.0, 0.2), Vec3::new(3.1, -2.0, 1.0)],
            0,
            0,
            ClassId::Bark,
        ));
        prims
    }

    #[test]
    fn node_bounds_contain_children() {
        let prims = with_long_triangles();
        let bvh = Bvh::build(&prims);
        let mut covered = vec![Aabb::EMPTY; prims.len()];
        for node in &bvh.nodes {
            if node.count == 0 {
                for child in [node.first, node.first + 1] {
                    let c = bvh.nodes[child as usize].bounds();
                    assert_eq!(node.bounds().union(c), node.bounds());
                }
            } else {
                for &id in &bvh.ids[node.first as usize..(node.first + node.count) as usize] {
                    covered[id as usize] = covered[id as usize].union(node.bounds());
                }
            }
        }
        for (p, c) in prims.iter().zip(&covered) {
            assert_eq!(c.union(Aabb::from_points(&p.vertices)), *c);
        }
    }

    #[test]
    fn long_triangles_get_several_references() {
        let prims = with_long_triangles();
        let bvh = Bvh::build(&prims);
        let count = |id: u32| bvh.ids.iter().filter(|&&i| i == id).count();
        assert_eq!(count(0), 1);
        assert!(count(144) > 1);
        assert!(count(145) > 1);
        assert!(count(144) <= 1 << MAX_SPLIT_DEPTH);
        let r = Ray::new(Vec3::new(12.5, 5.31, 3.0), -Vec3::Z);
        assert_eq!(bvh.closest(&r).unwrap().1, 144);
        assert!(bvh.any(&r));
    }

    #[test]
    fn identical_triangles_become_one_leaf() {
        let p = grid(1)[0];
        let bvh = Bvh::build(&vec![p; 10]);
        assert_eq!(bvh.stats().leaves, 1);
        let r = Ray::new(Vec3::new(0.2, 0.2, 1.0), -Vec3::Z);
        assert_eq!(bvh.closest(&r).unwrap().1, 0);
    }

    #[test]
    fn empty_index() {
        let bvh = Bvh::build(&[]);
        assert!(bvh.is_empty());
        let r = Ray::new(Vec3::ZERO, Vec3::Z);
        assert!(bvh.closest(&r).is_none());
        assert!(!bvh.any(&r));
    }
}
