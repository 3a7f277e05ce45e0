//! Batch generation: scene, camera pose, render, tone map and labels for each
//! image of a [`GenerationJob`](crate::config::GenerationJob).

use std::path::{Path, PathBuf};

use rand::Rng;
use thiserror::Error;

use crate::autolabel::{extract_boxes, to_annotations, write_annotation_file, Annotation, LabelFileError};
use crate::camera::Camera;
use crate::canopy::{generate_orchard, CanopyError};
use crate::config::{ConfigError, RunConfig};
use crate::dataset::{DatasetEntry, DatasetError, DatasetManifest, ImageBand, Source};
use crate::geometry::Vec3;
use crate::image::ImageError;
use crate::render::{render_with, tonemap, RenderError, RenderSettings};
use crate::rng::{child_seed, purpose_rng};
use crate::scene::Scene;

pub const RGB_MANIFEST: &str = "manifest_rgb.tsv";
pub const NIR_MANIFEST: &str = "manifest_nir.tsv";

/// Lowest camera height above the ground plane (m).
const MIN_CAMERA_HEIGHT: f64 = 0.1;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("scene: {0}")]
    Canopy(#[from] CanopyError),
    #[error("render: {0}")]
    Render(#[from] RenderError),
    #[error(transparent)]
    Image(#[from] ImageError),
    #[error(transparent)]
    Label(#[from] LabelFileError),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("worker pool: {0}")]
    ThreadPool(String),
}

impl PipelineError {
    /// True for failures of the file system rather than of the inputs.
    pub fn is_io(&self) -> bool {
        match self {
            Self::Io { .. } => true,
            Self::Config(e) => matches!(e, ConfigError::Io { .. }),
            Self::Render(e) => matches!(e, RenderError::Io { .. }),
            Self::Image(e) => matches!(e, ImageError::Io { .. }),
            Self::Label(e) => matches!(e, LabelFileError::Io { .. }),
            Self::Dataset(e) => e.is_io(),
            _ => false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct GenerateSummary {
    pub images: u32,
    pub boxes: usize,
    pub rgb_manifest: PathBuf,
    pub nir_manifest: Option<PathBuf>,
}

/// Seed of image `index` (1-based).
pub fn image_seed(config: &RunConfig, index: u32) -> u64 {
    child_seed(config.generation.master_seed, "image", index as u64)
}

/// Camera for image `index`: a fixed pose from `render.cameras` when given,
/// otherwise a point on a spherical shell around a jittered look-at inside
/// the region of interest.
pub fn camera_for(config: &RunConfig, index: u32) -> Camera {
    let r = &config.render;
    let seed = image_seed(config, index);
    let pixel_seed = child_seed(seed, "pixels", r.seed);
    if !r.cameras.is_empty() {
        let mut cam = r.cameras[(index as usize - 1) % r.cameras.len()].clone();
        cam.seed = pixel_seed;
        return cam;
    }
    let g = &config.generation;
    let mut rng = purpose_rng(seed, "camera");
    let mut uniform = |[lo, hi]: [f64; 2]| if hi > lo { rng.random_range(lo..=hi) } else { lo };
    let distance = uniform(g.distance);
    let azimuth = uniform(g.azimuth).to_radians();
    let elevation = uniform(g.elevation).to_radians();
    let j = g.roi_jitter;
    let jitter = Vec3::new(uniform([-j, j]), uniform([-j, j]), uniform([-j, j]));
    let look_at = g.roi_center + jitter;
    let offset = Vec3::new(
        elevation.cos() * azimuth.cos(),
        elevation.cos() * azimuth.sin(),
        elevation.sin(),
    ) * distance;
    let mut position = look_at + offset;
    position.z = position.z.max(MIN_CAMERA_HEIGHT);
    let mut cam = Camera::new(position, look_at, r.vertical_fov, r.width, r.height);
    cam.samples_per_pixel = r.samples_per_pixel;
    cam.seed = pixel_seed;
    cam
}

/// The orchard seen by image `index`.
pub fn scene_for(config: &RunConfig, index: u32) -> Result<Scene, PipelineError> {
    let mut orchard = config.scene.orchard.clone();
    if config.generation.vary_scene {
        orchard.tree.seed = child_seed(image_seed(config, index), "scene", 0);
    }
    Ok(generate_orchard(&orchard, &config.scene.quality, &config.scene.materials)?)
}

/// Output of one image before it is written.
pub struct RenderedImage {
    pub rgb: crate::image::Image8,
    pub nir: Option<crate::image::Image8>,
    pub annotations: Vec<Annotation>,
    pub radiance: crate::render::RadianceImage,
}

pub fn render_image(config: &RunConfig, scene: &Scene, camera: &Camera) -> Result<RenderedImage, PipelineError> {
    let settings = RenderSettings {
        ray_epsilon: config.render.ray_epsilon,
    };
    let bands = &config.scene.bands;
    let (radiance, labels) = render_with(scene, camera, &config.render.lighting, bands, &settings)?;
    let mapped = tonemap(&radiance, bands, &config.render.tonemap)?;
    let boxes = extract_boxes(&labels, config.label.min_pixels);
    Ok(RenderedImage {
        rgb: mapped.rgb,
        nir: mapped.nir,
        annotations: to_annotations(&boxes, camera.width, camera.height),
        radiance,
    })
}

fn build_pool(threads: usize) -> Result<rayon::ThreadPool, PipelineError> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| PipelineError::ThreadPool(e.to_string()))
}

/// Writes `img_NNNNN.png`, `img_NNNNN_nir.png` and `img_NNNNN.txt` for
/// `i = 1..=count`, plus one synthetic manifest per band. `threads` caps the
/// render workers (0 = one per core); output bytes do not depend on it.
pub fn generate(config: &RunConfig, out_dir: &Path, threads: usize) -> Result<GenerateSummary, PipelineError> {
    config.validate()?;
    let pool = build_pool(threads)?;
    std::fs::create_dir_all(out_dir).map_err(|source| PipelineError::Io {
        path: out_dir.to_path_buf(),
        source,
    })?;
    let has_nir = config.scene.bands.position("NIR").is_ok();
    let mut rgb_manifest = DatasetManifest::new("synthetic-rgb", ImageBand::Rgb);
    let mut nir_manifest = DatasetManifest::new("synthetic-nir", ImageBand::Nir);
    let mut summary = GenerateSummary::default();
    let shared_scene = if config.generation.vary_scene {
        None
    } else {
        Some(scene_for(config, 1)?)
    };

    for index in 1..=config.generation.count {
        let stem = format!("img_{index:05}");
        let owned;
        let scene = match &shared_scene {
            Some(s) => s,
            None => {
                owned = scene_for(config, index)?;
                &owned
            }
        };
        let camera = camera_for(config, index);
        let img = pool.install(|| render_image(config, scene, &camera))?;

        let label_name = format!("{stem}.txt");
        write_annotation_file(&out_dir.join(&label_name), &img.annotations)?;
        let rgb_name = format!("{stem}.png");
        img.rgb.write_png(&out_dir.join(&rgb_name))?;
        rgb_manifest.entries.push(DatasetEntry::new(
            &rgb_name,
            Some(PathBuf::from(&label_name)),
            Source::Synthetic,
            ImageBand::Rgb,
        ));
        if let Some(nir) = &img.nir {
            let nir_name = format!("{stem}_nir.png");
            nir.write_png(&out_dir.join(&nir_name))?;
            nir_manifest.entries.push(DatasetEntry::new(
                &nir_name,
                Some(PathBuf::from(&label_name)),
                Source::Synthetic,
                ImageBand::Nir,
            ));
        }
        if config.render.write_raw {
            img.radiance
                .write_raw(&out_dir.join(format!("{stem}.f32")), &config.scene.bands)?;
        }
        summary.images += 1;
        summary.boxes += img.annotations.len();
    }

    summary.rgb_manifest = out_dir.join(RGB_MANIFEST);
    rgb_manifest.write(&summary.rgb_manifest)?;
    if has_nir {
        let path = out_dir.join(NIR_MANIFEST);
        nir_manifest.write(&path)?;
        summary.nir_manifest = Some(path);
    }
    Ok(summary)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sampled_cameras_respect_ranges() {
        let config = RunConfig::default();
        let g = &config.generation;
        for i in 1..=200 {
            let cam = camera_for(&config, i);
            cam.validate().unwrap();
            let d = (cam.position - cam.look_at).length();
            assert!(d <= g.distance[1] + 1e-9, "distance {d}");
            if cam.position.z > MIN_CAMERA_HEIGHT {
                assert!(d >= g.distance[0] - 1e-9, "distance {d}");
            }
            let off = cam.look_at - g.roi_center;
            assert!(off.x.abs().max(off.y.abs()).max(off.z.abs()) <= g.roi_jitter + 1e-12);
        }
    }

    #[test]
    fn poses_are_seeded_per_image() {
        let config = RunConfig::default();
        assert_eq!(camera_for(&config, 3), camera_for(&config, 3));
        assert_ne!(camera_for(&config, 3), camera_for(&config, 4));
    }

    #[test]
    fn fixed_cameras_cycle() {
        let mut config = RunConfig::default();
        let a = Camera::new(Vec3::new(0.0, -5.0, 2.0), Vec3::new(0.0, 0.0, 2.0), 50.0, 8, 8);
        let b = Camera::new(Vec3::new(5.0, 0.0, 2.0), Vec3::new(0.0, 0.0, 2.0), 50.0, 8, 8);
        config.render.cameras = vec![a.clone(), b.clone()];
        assert_eq!(camera_for(&config, 1).position, a.position);
        assert_eq!(camera_for(&config, 2).position, b.position);
        assert_eq!(camera_for(&config, 3).position, a.position);
    }
}
