//! The acceleration index against a brute-force closest-hit search.

use orchardsynth::scene::ray_triangle;
use orchardsynth::spectral::Material;
use orchardsynth::{ClassId, HitRecord, Primitive, Ray, Scene, Vec3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Minimum `t` over every primitive; hits within 1e-12 of it count as ties
/// and go to the lowest index.
fn brute_force(scene: &Scene, ray: &Ray) -> Option<(f64, usize)> {
    let hits: Vec<(f64, usize)> = scene
        .primitives()
        .iter()
        .enumerate()
        .filter_map(|(i, p)| ray_triangle(ray, p).map(|(t, _, _)| (t, i)))
        .collect();
    let best = hits.iter().map(|h| h.0).fold(f64::INFINITY, f64::min);
    hits.into_iter().filter(|h| h.0 <= best + 1e-12).min_by_key(|h| h.1)
}

fn unit(rng: &mut ChaCha8Rng) -> Vec3 {
    loop {
        let v = Vec3::new(
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
        );
        let l = v.length();
        if l > 0.1 && l <= 1.0 {
            return v * (1.0 / l);
        }
    }
}

fn random_scene(rng: &mut ChaCha8Rng, n: usize) -> Scene {
    let mut prims = Vec::with_capacity(n);
    while prims.len() < n {
        let c = Vec3::new(
            rng.random_range(-10.0..10.0),
            rng.random_range(-10.0..10.0),
            rng.random_range(-10.0..10.0),
        );
        // Mostly small triangles with a few long slivers.
        let size = if rng.random_bool(0.02) { 6.0 } else { 0.4 };
        let v = [0, 1, 2].map(|_| c + unit(rng) * rng.random_range(0.05..size));
        let p = Primitive::new(v, 0, 0, ClassId::Leaf);
        if !p.is_degenerate() {
            prims.push(p);
        }
    }
    Scene::new(prims, vec![Material::gray(1, 0.5)]).unwrap()
}

fn key(h: Option<HitRecord>) -> Option<(f64, usize)> {
    h.map(|h| (h.t, h.primitive_index))
}

#[test]
fn closest_hit_matches_brute_force() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let scene = random_scene(&mut rng, 10_000);
    let mut hits = 0;
    for _ in 0..1000 {
        let origin = Vec3::new(
            rng.random_range(-14.0..14.0),
            rng.random_range(-14.0..14.0),
            rng.random_range(-14.0..14.0),
        );
        let ray = Ray::new(origin, unit(&mut rng));
        let expected = brute_force(&scene, &ray);
        assert_eq!(key(scene.intersect_closest(&ray)), expected);
        assert_eq!(key(scene.intersect_closest_linear(&ray)), expected);
        assert_eq!(scene.intersect_any(&ray), expected.is_some());
        hits += expected.is_some() as usize;
    }
    assert!(hits > 300, "only {hits} of 1000 rays hit anything");
}

#[test]
fn axis_aligned_rays_match_brute_force() {
    // Zero direction components take the NaN-safe box test.
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let scene = random_scene(&mut rng, 2_000);
    for i in 0..600 {
        let axis = [Vec3::X, Vec3::Y, Vec3::Z][i % 3] * if i % 2 == 0 { 1.0 } else { -1.0 };
        let mut origin = Vec3::new(
            rng.random_range(-10.0..10.0),
            rng.random_range(-10.0..10.0),
            rng.random_range(-10.0..10.0),
        );
        origin = origin - axis * 12.0;
        let ray = Ray::new(origin, axis);
        assert_eq!(key(scene.intersect_closest(&ray)), brute_force(&scene, &ray));
    }
}

#[test]
fn bounded_rays_respect_their_range() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let scene = random_scene(&mut rng, 3_000);
    for _ in 0..500 {
        let origin = Vec3::new(rng.random_range(-5.0..5.0), rng.random_range(-5.0..5.0), 0.0);
        let ray = Ray::new(origin, unit(&mut rng)).with_range(rng.random_range(0.0..2.0), rng.random_range(2.0..8.0));
        let expected = brute_force(&scene, &ray);
        assert_eq!(key(scene.intersect_closest(&ray)), expected);
        assert_eq!(scene.intersect_any(&ray), expected.is_some());
    }
}
