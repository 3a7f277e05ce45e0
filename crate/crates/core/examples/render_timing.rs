//! Times scene construction and a full render of the default orchard.

use std::time::Instant;

use orchardsynth::canopy::generate_orchard;
use orchardsynth::render::render;
use orchardsynth::{BandSet, Camera, Lighting, MaterialLibrary, OrchardParams, TessellationQuality, Vec3};

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let width: u32 = args.get(1).map_or(640, |a| a.parse().unwrap());
    let height: u32 = args.get(2).map_or(480, |a| a.parse().unwrap());
    let spp: u32 = args.get(3).map_or(4, |a| a.parse().unwrap());
    let sky: u32 = args.get(4).map_or(4, |a| a.parse().unwrap());

    let t = Instant::now();
    let scene = generate_orchard(
        &OrchardParams::default(),
        &TessellationQuality::default(),
        &MaterialLibrary::default(),
    )
    .unwrap();
    println!(
        "scene: {} triangles, {} walnuts, built in {:.2?}",
        scene.primitives().len(),
        scene.instance_count(),
        t.elapsed()
    );

    let mut camera = Camera::new(Vec3::new(0.0, -9.0, 3.0), Vec3::new(0.0, 0.0, 2.5), 60.0, width, height);
    camera.samples_per_pixel = spp;
    let lighting = Lighting {
        sky_samples: sky,
        ..Lighting::default()
    };
    let repeats: u32 = args.get(5).map_or(1, |a| a.parse().unwrap());
    let mut best = std::time::Duration::MAX;
    for _ in 0..repeats {
        let t = Instant::now();
        render(&scene, &camera, &lighting, &BandSet::default()).unwrap();
        best = best.min(t.elapsed());
    }
    println!("render {width}x{height} spp={spp} sky={sky}: {:.2?}", best);
}
