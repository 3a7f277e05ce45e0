//! Reverse ray tracing with a single scattering event.
//!
//! A primary ray finds the visible surface, which is then lit by
//!
//! ```text
//! L[b] = ρ[b]/π · (E_sun[b] · max(0, n·s) · V_sun + E_sky[b] · S)
//!      + τ[b]/π ·  E_sun[b] · max(0, −n·s) · V_back
//! ```
//!
//! with `n` the geometric normal turned toward the viewer, `s` the sun
//! direction, `V_sun`/`V_back` shadow-ray visibilities from the lit and the far
//! side, and `S` the unoccluded fraction of cosine-weighted sky samples.
//! There are no inter-reflections. Surfaces are Lambertian on both sides.

use std::f64::consts::{FRAC_1_PI, TAU};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autolabel::{label_for_hit, LabelImage};
use crate::camera::{Camera, CameraError};
use crate::geometry::{Ray, Vec3};
use crate::image::Image8;
use crate::rng::CounterRng;
use crate::scene::{HitRecord, Scene, DEFAULT_RAY_EPSILON};
use crate::spectral::{BandError, BandSet, Lighting, LightingError};

#[derive(Debug, Error)]
pub enum RenderError {
    #[error("camera: {0}")]
    Camera(#[from] CameraError),
    #[error("lighting: {0}")]
    Lighting(#[from] LightingError),
    #[error("bands: {0}")]
    Bands(#[from] BandError),
    #[error("scene materials have {found} bands but the band set has {expected}")]
    BandCount { found: usize, expected: usize },
    #[error("ray epsilon {0} must be finite and >= 0")]
    Epsilon(f64),
    #[error("tone map {0}")]
    ToneMap(String),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

/// Row-major, band-interleaved radiance (W m⁻² sr⁻¹ per band).
#[derive(Debug, Clone, PartialEq)]
pub struct RadianceImage {
    pub width: u32,
    pub height: u32,
    pub bands: usize,
    pub data: Vec<f64>,
}

impl RadianceImage {
    pub fn new(width: u32, height: u32, bands: usize) -> Self {
        Self {
            width,
            height,
            bands,
            data: vec![0.0; width as usize * height as usize * bands],
        }
    }

    pub fn pixel(&self, x: u32, y: u32) -> &[f64] {
        let i = (y as usize * self.width as usize + x as usize) * self.bands;
        &self.data[i..i + self.bands]
    }

    /// One band as a row-major plane.
    pub fn band(&self, b: usize) -> Vec<f64> {
        self.data.iter().skip(b).step_by(self.bands).copied().collect()
    }

    /// Little-endian `f32` values, band-major (all of band 0, then band 1, ...).
    pub fn to_raw_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.data.len() * 4);
        for b in 0..self.bands {
            for v in self.data.iter().skip(b).step_by(self.bands) {
                out.extend_from_slice(&(*v as f32).to_le_bytes());
            }
        }
        out
    }

    /// Writes the raw dump to `path` and a JSON sidecar (`<path>.json`) with
    /// width, height and band names.
    pub fn write_raw(&self, path: &Path, bands: &BandSet) -> Result<(), RenderError> {
        let io = |p: &Path| {
            let path = p.display().to_string();
            move |source| RenderError::Io { path, source }
        };
        std::fs::write(path, self.to_raw_bytes()).map_err(io(path))?;
        let sidecar = RawSidecar {
            width: self.width,
            height: self.height,
            bands: bands.names(),
            dtype: "float32-le".to_string(),
            layout: "band-major".to_string(),
        };
        let json_path = path.with_extension(match path.extension() {
            Some(ext) => format!("{}.json", ext.to_string_lossy()),
            None => "json".to_string(),
        });
        let text = serde_json::to_string_pretty(&sidecar).expect("sidecar serializes");
        std::fs::write(&json_path, text + "\n").map_err(io(&json_path))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawSidecar {
    pub width: u32,
    pub height: u32,
    pub bands: Vec<String>,
    pub dtype: String,
    pub layout: String,
}

/// Renderer knobs not tied to the camera or lights.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RenderSettings {
    /// Origin offset along the normal for shadow and sky rays (m).
    pub ray_epsilon: f64,
}

impl Default for RenderSettings {
    fn default() -> Self {
        Self {
            ray_epsilon: DEFAULT_RAY_EPSILON,
        }
    }
}

/// Cosine-weighted direction about `n`.
fn cosine_sample(n: Vec3, u1: f64, u2: f64) -> Vec3 {
    let (t, s) = n.orthonormal_basis();
    let r = u1.sqrt();
    let phi = TAU * u2;
    (t * (r * phi.cos()) + s * (r * phi.sin()) + n * (1.0 - u1).max(0.0).sqrt()).normalize()
}

/// Radiance leaving `hit` back along `ray`, accumulated into `out` (one
/// entry per band).
#[allow(clippy::too_many_arguments)]
fn shade_into(
    scene: &Scene,
    ray: &Ray,
    hit: &HitRecord,
    lighting: &Lighting,
    settings: &RenderSettings,
    rng: &mut CounterRng,
    weight: f64,
    out: &mut [f64],
) {
    let material = scene.material_of(hit.primitive_index);
    let mut n = hit.geometric_normal;
    if n.dot(ray.direction) > 0.0 {
        n = -n;
    }
    let s = lighting.sun_direction;
    let cos_sun = n.dot(s);
    let eps = settings.ray_epsilon;
    let reflects = material.reflectance.iter().any(|&r| r > 0.0);
    let transmits = material.transmittance.iter().any(|&t| t > 0.0);

    let front = if reflects && cos_sun > 0.0 {
        let shadow = Ray::new(hit.point + n * eps, s);
        if scene.intersect_any(&shadow) {
            0.0
        } else {
            cos_sun
        }
    } else {
        0.0
    };
    let back = if transmits && cos_sun < 0.0 {
        let shadow = Ray::new(hit.point - n * eps, s);
        if scene.intersect_any(&shadow) {
            0.0
        } else {
            -cos_sun
        }
    } else {
        0.0
    };
    let sky = if !reflects || lighting.sky_samples == 0 {
        1.0
    } else {
        let origin = hit.point + n * eps;
        let open = (0..lighting.sky_samples)
            .filter(|_| {
                let (u1, u2) = (rng.next_f64(), rng.next_f64());
                !scene.intersect_any(&Ray::new(origin, cosine_sample(n, u1, u2)))
            })
            .count();
        open as f64 / lighting.sky_samples as f64
    };

    for (b, slot) in out.iter_mut().enumerate() {
        let e_sun = lighting.sun_irradiance[b];
        let reflected = material.reflectance[b] * (e_sun * front + lighting.sky_irradiance[b] * sky);
        let transmitted = material.transmittance[b] * e_sun * back;
        *slot += weight * FRAC_1_PI * (reflected + transmitted);
    }
}

/// Radiance per band for one surface hit. `rng` supplies the sky samples.
pub fn shade(
    scene: &Scene,
    ray: &Ray,
    hit: &HitRecord,
    lighting: &Lighting,
    rng: &mut CounterRng,
) -> Vec<f64> {
    let mut out = vec![0.0; lighting.sun_irradiance.len()];
    shade_into(scene, ray, hit, lighting, &RenderSettings::default(), rng, 1.0, &mut out);
    out
}

fn validate_inputs(scene: &Scene, camera: &Camera, lighting: &Lighting, bands: &BandSet, settings: &RenderSettings) -> Result<(), RenderError> {
    camera.validate()?;
    bands.validate()?;
    lighting.validate(bands.len())?;
    if let Some(m) = scene.materials().first() {
        if m.band_count() != bands.len() {
            return Err(RenderError::BandCount {
                found: m.band_count(),
                expected: bands.len(),
            });
        }
    }
    if !(settings.ray_epsilon >= 0.0 && settings.ray_epsilon.is_finite()) {
        return Err(RenderError::Epsilon(settings.ray_epsilon));
    }
    Ok(())
}

pub fn render(
    scene: &Scene,
    camera: &Camera,
    lighting: &Lighting,
    bands: &BandSet,
) -> Result<(RadianceImage, LabelImage), RenderError> {
    render_with(scene, camera, lighting, bands, &RenderSettings::default())
}

/// Averages `samples_per_pixel` shaded primary rays per pixel; misses see the
/// sky at `E_sky/π`. With one sample the ray goes through the pixel center,
/// otherwise sample positions are drawn from the pixel's random stream. The
/// label image comes from the center ray. Rows are rendered in parallel on
/// the current rayon pool; the output does not depend on the worker count.
pub fn render_with(
    scene: &Scene,
    camera: &Camera,
    lighting: &Lighting,
    bands: &BandSet,
    settings: &RenderSettings,
) -> Result<(RadianceImage, LabelImage), RenderError> {
    validate_inputs(scene, camera, lighting, bands, settings)?;

    let nb = bands.len();
    let (w, h) = (camera.width, camera.height);
    let frame = camera.frame();
    let spp = camera.samples_per_pixel;
    let weight = 1.0 / spp as f64;
    let background: Vec<f64> = lighting.sky_irradiance.iter().map(|e| e * FRAC_1_PI).collect();

    let mut radiance = RadianceImage::new(w, h, nb);
    let mut labels = LabelImage::new(w, h);

    radiance
        .data
        .par_chunks_mut(w as usize * nb)
        .zip(labels.ids.par_chunks_mut(w as usize))
        .enumerate()
        .for_each(|(py, (row, label_row))| {
            let py = py as u32;
            for px in 0..w {
                let out = &mut row[px as usize * nb..(px as usize + 1) * nb];
                let mut center_label = None;
                for sample in 0..spp {
                    let mut rng = CounterRng::for_pixel(camera.seed, px, py, sample);
                    let jitter = if spp == 1 {
                        (0.5, 0.5)
                    } else {
                        (rng.next_f64(), rng.next_f64())
                    };
                    let ray = frame.ray(px, py, jitter);
                    let hit = scene.intersect_closest(&ray);
                    if spp == 1 {
                        center_label = Some(label_for_hit(scene, hit.as_ref()));
                    }
                    match hit {
                        Some(hit) => shade_into(scene, &ray, &hit, lighting, settings, &mut rng, weight, out),
                        None => {
                            for (o, bg) in out.iter_mut().zip(&background) {
                                *o += weight * bg;
                            }
                        }
                    }
                }
                label_row[px as usize] = center_label.unwrap_or_else(|| {
                    let ray = frame.ray(px, py, (0.5, 0.5));
                    label_for_hit(scene, scene.intersect_closest(&ray).as_ref())
                });
            }
        });
    Ok((radiance, labels))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ToneMap {
    pub exposure: f64,
    pub gamma: f64,
}

impl Default for ToneMap {
    fn default() -> Self {
        Self {
            exposure: 4.0,
            gamma: 2.2,
        }
    }
}

impl ToneMap {
    pub fn validate(&self) -> Result<(), RenderError> {
        if !(self.exposure > 0.0 && self.exposure.is_finite()) {
            return Err(RenderError::ToneMap(format!("exposure {} must be > 0", self.exposure)));
        }
        if !(self.gamma > 0.0 && self.gamma.is_finite()) {
            return Err(RenderError::ToneMap(format!("gamma {} must be > 0", self.gamma)));
        }
        Ok(())
    }

    /// `clamp(exposure · L, 0, 1)^(1/gamma)` quantized with round-half-up.
    pub fn apply(&self, radiance: f64) -> u8 {
        let v = (self.exposure * radiance).clamp(0.0, 1.0).powf(1.0 / self.gamma);
        (v * 255.0 + 0.5).floor() as u8
    }
}

/// 8-bit outputs of one render.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ToneMapped {
    /// Bands R, G, B.
    pub rgb: Image8,
    /// Band NIR, when the band set has one.
    pub nir: Option<Image8>,
}

pub fn tonemap(img: &RadianceImage, bands: &BandSet, tm: &ToneMap) -> Result<ToneMapped, RenderError> {
    tm.validate()?;
    if bands.len() != img.bands {
        return Err(RenderError::BandCount {
            found: img.bands,
            expected: bands.len(),
        });
    }
    let rgb_idx = [bands.position("R")?, bands.position("G")?, bands.position("B")?];
    let mut rgb = Image8::new(img.width, img.height, 3);
    for (dst, px) in rgb.data.chunks_mut(3).zip(img.data.chunks(img.bands)) {
        for (d, &b) in dst.iter_mut().zip(&rgb_idx) {
            *d = tm.apply(px[b]);
        }
    }
    let nir = match bands.position("NIR") {
        Ok(b) => {
            let mut nir = Image8::new(img.width, img.height, 1);
            for (d, px) in nir.data.iter_mut().zip(img.data.chunks(img.bands)) {
                *d = tm.apply(px[b]);
            }
            Some(nir)
        }
        Err(_) => None,
    };
    Ok(ToneMapped { rgb, nir })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::{ClassId, Primitive};
    use crate::spectral::Material;

    fn quad(z: f64, half: f64, material_id: u32) -> Vec<Primitive> {
        let c = [
            Vec3::new(-half, -half, z),
            Vec3::new(half, -half, z),
            Vec3::new(half, half, z),
            Vec3::new(-half, half, z),
        ];
        vec![
            Primitive::new([c[0], c[1], c[2]], material_id, 0, ClassId::Ground),
            Primitive::new([c[0], c[2], c[3]], material_id, 0, ClassId::Ground),
        ]
    }

    fn zenith_sun(sky: f64) -> Lighting {
        Lighting {
            sun_direction: Vec3::Z,
            sun_irradiance: vec![1.0; 4],
            sky_irradiance: vec![sky; 4],
            sky_samples: 0,
        }
    }

    fn down_hit(scene: &Scene) -> (Ray, HitRecord) {
        let ray = Ray::new(Vec3::new(0.1, 0.2, 2.0), -Vec3::Z);
        let hit = scene.intersect_closest(&ray).unwrap();
        (ray, hit)
    }

    #[test]
    fn lit_floor_closed_form() {
        let scene = Scene::new(quad(0.0, 5.0, 0), vec![Material::gray(4, 0.5)]).unwrap();
        let (ray, hit) = down_hit(&scene);
        let l = shade(&scene, &ray, &hit, &zenith_sun(0.0), &mut CounterRng::new(0));
        for v in l {
            assert!((v - 0.5 / std::f64::consts::PI).abs() < 1e-12);
        }
    }

    #[test]
    fn black_absorber() {
        let black = Material::gray(4, 0.0);
        let scene = Scene::new(quad(0.0, 5.0, 0), vec![black]).unwrap();
        let (ray, hit) = down_hit(&scene);
        let mut light = zenith_sun(0.3);
        light.sky_samples = 8;
        assert!(shade(&scene, &ray, &hit, &light, &mut CounterRng::new(0)).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn shadowed_floor_is_dark() {
        let mut prims = quad(0.0, 5.0, 0);
        prims.extend(quad(1.0, 0.5, 0));
        let scene = Scene::new(prims, vec![Material::gray(4, 0.5)]).unwrap();
        let ray = Ray::new(Vec3::new(3.0, 3.0, 2.0), Vec3::new(-3.0, -3.0, -2.0));
        let hit = scene.intersect_closest(&ray).unwrap();
        assert!(hit.point.z.abs() < 1e-9);
        let l = shade(&scene, &ray, &hit, &zenith_sun(0.0), &mut CounterRng::new(0));
        assert!(l.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn backlit_leaf_transmits() {
        let leaf = Material::new(vec![0.0; 4], vec![0.3; 4]).unwrap();
        let scene = Scene::new(quad(0.0, 1.0, 0), vec![leaf]).unwrap();
        // Viewer below the card, sun overhead: only transmitted light arrives.
        let ray = Ray::new(Vec3::new(0.0, 0.0, -1.0), Vec3::Z);
        let hit = scene.intersect_closest(&ray).unwrap();
        let l = shade(&scene, &ray, &hit, &zenith_sun(0.0), &mut CounterRng::new(0));
        for v in l {
            assert!((v - 0.3 / std::f64::consts::PI).abs() < 1e-12);
        }
    }

    #[test]
    fn open_sky_fraction_is_one() {
        let scene = Scene::new(quad(0.0, 50.0, 0), vec![Material::gray(4, 0.5)]).unwrap();
        let (ray, hit) = down_hit(&scene);
        let mut light = zenith_sun(1.0);
        light.sun_irradiance = vec![0.0; 4];
        light.sky_samples = 32;
        let l = shade(&scene, &ray, &hit, &light, &mut CounterRng::new(3));
        for v in l {
            assert!((v - 0.5 / std::f64::consts::PI).abs() < 1e-12);
        }
    }

    #[test]
    fn empty_scene_shows_sky() {
        let scene = Scene::new(Vec::new(), Vec::new()).unwrap();
        let cam = Camera::new(Vec3::new(0.0, -3.0, 1.0), Vec3::ZERO, 60.0, 8, 6);
        let (img, labels) = render(&scene, &cam, &zenith_sun(0.7), &BandSet::default()).unwrap();
        assert!(img.data.iter().all(|&v| (v - 0.7 / std::f64::consts::PI).abs() < 1e-15));
        assert!(labels.ids.iter().all(|&id| id == 0));
    }

    #[test]
    fn tonemap_arithmetic() {
        let tm = ToneMap {
            exposure: 1.0,
            gamma: 1.0,
        };
        assert_eq!(tm.apply(0.0), 0);
        assert_eq!(tm.apply(0.5), 128);
        assert_eq!(tm.apply(1.0), 255);
        assert_eq!(tm.apply(7.0), 255);
        assert_eq!(tm.apply(-1.0), 0);
        assert_eq!(ToneMap::default().apply(10.0), 255);
    }

    #[test]
    fn tonemap_packs_rgb_and_nir() {
        let bands = BandSet::default();
        let mut img = RadianceImage::new(1, 1, 4);
        img.data.copy_from_slice(&[0.1, 0.2, 0.3, 0.4]);
        let tm = ToneMap {
            exposure: 1.0,
            gamma: 1.0,
        };
        let out = tonemap(&img, &bands, &tm).unwrap();
        assert_eq!(out.rgb.data, [tm.apply(0.3), tm.apply(0.2), tm.apply(0.1)]);
        assert_eq!(out.nir.unwrap().data, [tm.apply(0.4)]);
    }

    #[test]
    fn raw_dump_is_band_major() {
        let mut img = RadianceImage::new(2, 1, 2);
        img.data.copy_from_slice(&[1.0, 10.0, 2.0, 20.0]);
        let raw = img.to_raw_bytes();
        let vals: Vec<f32> = raw.chunks(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect();
        assert_eq!(vals, [1.0, 2.0, 10.0, 20.0]);
    }

    #[test]
    fn band_mismatch_rejected() {
        let scene = Scene::new(quad(0.0, 1.0, 0), vec![Material::gray(3, 0.5)]).unwrap();
        let cam = Camera::new(Vec3::new(0.0, -3.0, 1.0), Vec3::ZERO, 60.0, 4, 4);
        assert!(matches!(
            render(&scene, &cam, &zenith_sun(0.0), &BandSet::default()),
            Err(RenderError::BandCount { found: 3, expected: 4 })
        ));
    }
}
