//! Spectral bands, surface optical properties and illumination.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::Vec3;
use crate::scene::ClassId;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Band {
    pub name: String,
    /// Center wavelength (nm).
    pub wavelength_nm: f64,
}

/// Ordered list of delta bands. Every per-band array in the crate follows
/// this order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct BandSet {
    bands: Vec<Band>,
}

#[derive(Debug, Error, PartialEq)]
pub enum BandError {
    #[error("band set is empty")]
    Empty,
    #[error("duplicate band name {0:?}")]
    DuplicateName(String),
    #[error("band {name:?}: wavelength {wavelength_nm} nm must be > 0")]
    BadWavelength { name: String, wavelength_nm: f64 },
    #[error("band {0:?} not present in band set")]
    Missing(String),
}

impl BandSet {
    pub fn new(bands: Vec<Band>) -> Result<Self, BandError> {
        let set = Self { bands };
        set.validate()?;
        Ok(set)
    }

    pub fn validate(&self) -> Result<(), BandError> {
        if self.bands.is_empty() {
            return Err(BandError::Empty);
        }
        for (i, b) in self.bands.iter().enumerate() {
            if !(b.wavelength_nm > 0.0 && b.wavelength_nm.is_finite()) {
                return Err(BandError::BadWavelength {
                    name: b.name.clone(),
                    wavelength_nm: b.wavelength_nm,
                });
            }
            if self.bands[..i].iter().any(|o| o.name == b.name) {
                return Err(BandError::DuplicateName(b.name.clone()));
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.bands.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bands.is_empty()
    }

    pub fn bands(&self) -> &[Band] {
        &self.bands
    }

    pub fn names(&self) -> Vec<String> {
        self.bands.iter().map(|b| b.name.clone()).collect()
    }

    pub fn position(&self, name: &str) -> Result<usize, BandError> {
        self.bands
            .iter()
            .position(|b| b.name == name)
            .ok_or_else(|| BandError::Missing(name.to_string()))
    }
}

impl Default for BandSet {
    /// B 450, G 550, R 650, NIR 850 nm.
    fn default() -> Self {
        let band = |name: &str, wavelength_nm| Band {
            name: name.to_string(),
            wavelength_nm,
        };
        Self {
            bands: vec![
                band("B", 450.0),
                band("G", 550.0),
                band("R", 650.0),
                band("NIR", 850.0),
            ],
        }
    }
}

/// Lambertian reflectance and transmittance per band.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Material {
    pub reflectance: Vec<f64>,
    pub transmittance: Vec<f64>,
}

#[derive(Debug, Error, PartialEq)]
pub enum MaterialError {
    #[error("reflectance has {reflectance} bands but transmittance has {transmittance}")]
    LengthMismatch {
        reflectance: usize,
        transmittance: usize,
    },
    #[error("band {band}: {what} {value} outside [0, 1]")]
    OutOfRange {
        band: usize,
        what: &'static str,
        value: f64,
    },
    #[error("band {band}: reflectance + transmittance = {sum} exceeds 1")]
    EnergyGain { band: usize, sum: f64 },
}

impl Material {
    pub fn new(reflectance: Vec<f64>, transmittance: Vec<f64>) -> Result<Self, MaterialError> {
        let m = Self {
            reflectance,
            transmittance,
        };
        m.validate()?;
        Ok(m)
    }

    /// Opaque material with the same reflectance in every band.
    pub fn gray(bands: usize, reflectance: f64) -> Self {
        Self {
            reflectance: vec![reflectance; bands],
            transmittance: vec![0.0; bands],
        }
    }

    pub fn band_count(&self) -> usize {
        self.reflectance.len()
    }

    pub fn validate(&self) -> Result<(), MaterialError> {
        if self.reflectance.len() != self.transmittance.len() {
            return Err(MaterialError::LengthMismatch {
                reflectance: self.reflectance.len(),
                transmittance: self.transmittance.len(),
            });
        }
        for (band, (&r, &t)) in self.reflectance.iter().zip(&self.transmittance).enumerate() {
            for (what, value) in [("reflectance", r), ("transmittance", t)] {
                if !(0.0..=1.0).contains(&value) {
                    return Err(MaterialError::OutOfRange { band, what, value });
                }
            }
            if r + t > 1.0 {
                return Err(MaterialError::EnergyGain { band, sum: r + t });
            }
        }
        Ok(())
    }

    /// Absorptance `1 - ρ - τ` per band.
    pub fn absorptance(&self) -> Vec<f64> {
        self.reflectance
            .iter()
            .zip(&self.transmittance)
            .map(|(r, t)| 1.0 - r - t)
            .collect()
    }
}

/// Materials for each generated surface class, in default-band order
/// (B, G, R, NIR). Vegetation reflects and transmits strongly in NIR, and the
/// walnut husk sits well above the leaf plateau there while matching it in the
/// visible bands.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MaterialLibrary {
    pub bark: Material,
    pub leaf: Material,
    pub walnut: Material,
    pub ground: Material,
}

impl MaterialLibrary {
    /// Materials in scene order; see [`MaterialLibrary::material_id`].
    pub fn to_vec(&self) -> Vec<Material> {
        vec![
            self.bark.clone(),
            self.leaf.clone(),
            self.walnut.clone(),
            self.ground.clone(),
        ]
    }

    /// Index of a class's material in [`MaterialLibrary::to_vec`].
    pub fn material_id(class: ClassId) -> u32 {
        match class {
            ClassId::Bark | ClassId::Background => 0,
            ClassId::Leaf => 1,
            ClassId::Walnut => 2,
            ClassId::Ground => 3,
        }
    }

    pub fn validate(&self, bands: &BandSet) -> Result<(), (&'static str, MaterialError)> {
        for (name, m) in [
            ("bark", &self.bark),
            ("leaf", &self.leaf),
            ("walnut", &self.walnut),
            ("ground", &self.ground),
        ] {
            m.validate().map_err(|e| (name, e))?;
            if m.band_count() != bands.len() {
                return Err((
                    name,
                    MaterialError::LengthMismatch {
                        reflectance: m.band_count(),
                        transmittance: bands.len(),
                    },
                ));
            }
        }
        Ok(())
    }
}

impl Default for MaterialLibrary {
    fn default() -> Self {
        Self {
            leaf: Material {
                reflectance: vec![0.05, 0.15, 0.08, 0.45],
                transmittance: vec![0.02, 0.08, 0.04, 0.40],
            },
            walnut: Material {
                reflectance: vec![0.06, 0.16, 0.10, 0.65],
                transmittance: vec![0.0; 4],
            },
            bark: Material {
                reflectance: vec![0.08, 0.10, 0.12, 0.30],
                transmittance: vec![0.0; 4],
            },
            ground: Material {
                reflectance: vec![0.10, 0.15, 0.20, 0.25],
                transmittance: vec![0.0; 4],
            },
        }
    }
}

/// Sun plus uniform diffuse sky.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Lighting {
    /// Unit vector from the scene toward the sun.
    pub sun_direction: Vec3,
    /// Direct-beam irradiance on a surface facing the sun, per band (W m⁻²).
    pub sun_irradiance: Vec<f64>,
    /// Hemispherically integrated diffuse-sky irradiance, per band (W m⁻²).
    pub sky_irradiance: Vec<f64>,
    /// Occlusion samples for the sky term; 0 treats the sky as unoccluded.
    pub sky_samples: u32,
}

#[derive(Debug, Error, PartialEq)]
pub enum LightingError {
    #[error("sun_direction must be a unit vector above the horizon (z > 0)")]
    SunDirection,
    #[error("{what} has {found} bands, expected {expected}")]
    BandCount {
        what: &'static str,
        found: usize,
        expected: usize,
    },
    #[error("{what}[{band}] = {value} must be finite and >= 0")]
    Negative {
        what: &'static str,
        band: usize,
        value: f64,
    },
}

impl Lighting {
    /// Sun at the given elevation/azimuth (degrees; azimuth from +x toward +y).
    pub fn sun_from_angles(elevation_deg: f64, azimuth_deg: f64) -> Vec3 {
        let (el, az) = (elevation_deg.to_radians(), azimuth_deg.to_radians());
        Vec3::new(el.cos() * az.cos(), el.cos() * az.sin(), el.sin())
    }

    pub fn validate(&self, bands: usize) -> Result<(), LightingError> {
        if !(self.sun_direction.is_normalized() && self.sun_direction.z > 0.0) {
            return Err(LightingError::SunDirection);
        }
        for (what, values) in [("sun_irradiance", &self.sun_irradiance), ("sky_irradiance", &self.sky_irradiance)] {
            if values.len() != bands {
                return Err(LightingError::BandCount {
                    what,
                    found: values.len(),
                    expected: bands,
                });
            }
            if let Some((band, &value)) = values
                .iter()
                .enumerate()
                .find(|(_, v)| !(v.is_finite() && **v >= 0.0))
            {
                return Err(LightingError::Negative { what, band, value });
            }
        }
        Ok(())
    }
}

impl Default for Lighting {
    fn default() -> Self {
        Self {
            sun_direction: Lighting::sun_from_angles(55.0, 210.0),
            sun_irradiance: vec![1.0; 4],
            sky_irradiance: vec![0.25; 4],
            sky_samples: 4,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_bands() {
        let b = BandSet::default();
        assert_eq!(b.names(), ["B", "G", "R", "NIR"]);
        assert_eq!(b.position("NIR").unwrap(), 3);
        assert!(b.validate().is_ok());
    }

    #[test]
    fn band_validation() {
        let band = |n: &str, w| Band {
            name: n.into(),
            wavelength_nm: w,
        };
        assert_eq!(BandSet::new(vec![]).unwrap_err(), BandError::Empty);
        assert!(matches!(
            BandSet::new(vec![band("A", 500.0), band("A", 600.0)]),
            Err(BandError::DuplicateName(_))
        ));
        assert!(matches!(
            BandSet::new(vec![band("A", 0.0)]),
            Err(BandError::BadWavelength { .. })
        ));
    }

    #[test]
    fn default_materials_conserve_energy() {
        let lib = MaterialLibrary::default();
        assert!(lib.validate(&BandSet::default()).is_ok());
        for m in lib.to_vec() {
            assert!(m.absorptance().iter().all(|&a| a >= 0.0));
        }
    }

    #[test]
    fn energy_gain_is_rejected() {
        let err = Material::new(vec![0.7], vec![0.4]).unwrap_err();
        assert!(matches!(err, MaterialError::EnergyGain { band: 0, .. }));
        assert!(matches!(
            Material::new(vec![1.2], vec![0.0]),
            Err(MaterialError::OutOfRange { .. })
        ));
    }

    #[test]
    fn lighting_validation() {
        let mut l = Lighting::default();
        assert!(l.validate(4).is_ok());
        assert!(matches!(l.validate(3), Err(LightingError::BandCount { .. })));
        l.sun_direction = Vec3::new(0.0, 1.0, 0.0);
        assert_eq!(l.validate(4), Err(LightingError::SunDirection));
        l.sun_direction = Vec3::Z;
        l.sky_irradiance[2] = -1.0;
        assert!(matches!(l.validate(4), Err(LightingError::Negative { band: 2, .. })));
    }
}
