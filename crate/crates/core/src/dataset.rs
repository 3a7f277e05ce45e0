//! Detection dataset manifests: mixing real and synthetic sets, per-image
//! train/val splits, and export to a trainer-facing directory tree.
//!
//! Manifest file layout: one JSON header line `{"name":..,"band":..,"seed":..}`
//! followed by one tab-separated line per entry:
//! `image<TAB>label<TAB>source<TAB>band<TAB>split` (an empty label field
//! means the image has no label file).

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autolabel::{parse_annotations, LabelParseError};
use crate::image::{Image8, ImageError};
use crate::rng::purpose_rng;

macro_rules! text_enum {
    ($name:ident { $($variant:ident => $text:literal),+ $(,)? }) => {
        impl $name {
            pub fn as_str(&self) -> &'static str {
                match self { $(Self::$variant => $text),+ }
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(self.as_str())
            }
        }

        impl FromStr for $name {
            type Err = String;
            fn from_str(s: &str) -> Result<Self, String> {
                match s {
                    $($text => Ok(Self::$variant),)+
                    other => Err(format!(
                        concat!("unknown ", stringify!($name), " {:?} (expected one of: ", $($text, " "),+, ")"),
                        other
                    )),
                }
            }
        }
    };
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Source {
    Real,
    Synthetic,
}
text_enum!(Source { Real => "real", Synthetic => "synthetic" });

/// Which camera band a dataset holds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ImageBand {
    Rgb,
    Nir,
}
text_enum!(ImageBand { Rgb => "rgb", Nir => "nir" });

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Unassigned,
}
text_enum!(Split { Train => "train", Val => "val", Unassigned => "unassigned" });

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DatasetEntry {
    pub image: PathBuf,
    pub label: Option<PathBuf>,
    pub source: Source,
    pub band: ImageBand,
    pub split: Split,
}

impl DatasetEntry {
    pub fn new(image: impl Into<PathBuf>, label: Option<PathBuf>, source: Source, band: ImageBand) -> Self {
        Self {
            image: image.into(),
            label,
            source,
            band,
            split: Split::Unassigned,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DatasetManifest {
    pub name: String,
    pub band: ImageBand,
    /// Seed of the shuffle that assigned the splits, if any.
    pub seed: Option<u64>,
    pub entries: Vec<DatasetEntry>,
}

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("manifest {0:?} has no entries")]
    Empty(String),
    #[error("entry {index} has an empty image path")]
    EmptyPath { index: usize },
    #[error("duplicate image path {0}")]
    DuplicatePath(PathBuf),
    #[error("entry {image} has band {found}, manifest band is {expected}")]
    EntryBand {
        image: PathBuf,
        expected: ImageBand,
        found: ImageBand,
    },
    #[error("band mismatch: real set is {real}, synthetic set is {synthetic}")]
    BandMismatch { real: ImageBand, synthetic: ImageBand },
    #[error("entry {0} is already assigned to a split")]
    AlreadySplit(PathBuf),
    #[error("entry {0} has no split assigned")]
    Unassigned(PathBuf),
    #[error("invalid ratio {0:?}: expected two positive integers a:b")]
    Ratio(String),
    #[error("missing file {0}")]
    MissingFile(PathBuf),
    #[error("two {split} images export to the same name {name}")]
    NameCollision { split: Split, name: String },
    #[error("label file {path}: {source}")]
    Label {
        path: PathBuf,
        #[source]
        source: LabelParseError,
    },
    #[error("{path}: line {line}: {message}")]
    Format { path: String, line: usize, message: String },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Image(#[from] ImageError),
}

impl DatasetError {
    /// True for failures of the file system rather than of the inputs.
    pub fn is_io(&self) -> bool {
        match self {
            Self::Io { .. } => true,
            Self::Image(e) => matches!(e, ImageError::Io { .. }),
            _ => false,
        }
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> DatasetError + '_ {
    move |source| DatasetError::Io {
        path: path.to_path_buf(),
        source,
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    name: String,
    band: ImageBand,
    seed: Option<u64>,
}

impl DatasetManifest {
    pub fn new(name: impl Into<String>, band: ImageBand) -> Self {
        Self {
            name: name.into(),
            band,
            seed: None,
            entries: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn count(&self, split: Split) -> usize {
        self.entries.iter().filter(|e| e.split == split).count()
    }

    pub fn count_source(&self, source: Source) -> usize {
        self.entries.iter().filter(|e| e.source == source).count()
    }

    /// Non-empty paths, one band, unique image paths.
    pub fn validate(&self) -> Result<(), DatasetError> {
        let mut seen = HashSet::new();
        for (index, e) in self.entries.iter().enumerate() {
            if e.image.as_os_str().is_empty() || e.label.as_ref().is_some_and(|l| l.as_os_str().is_empty()) {
                return Err(DatasetError::EmptyPath { index });
            }
            if e.band != self.band {
                return Err(DatasetError::EntryBand {
                    image: e.image.clone(),
                    expected: self.band,
                    found: e.band,
                });
            }
            if !seen.insert(&e.image) {
                return Err(DatasetError::DuplicatePath(e.image.clone()));
            }
        }
        Ok(())
    }

    pub fn to_text(&self) -> String {
        let header = Header {
            name: self.name.clone(),
            band: self.band,
            seed: self.seed,
        };
        let mut out = serde_json::to_string(&header).expect("header serializes");
        out.push('\n');
        for e in &self.entries {
            let label = e.label.as_ref().map(|l| l.display().to_string()).unwrap_or_default();
            out.push_str(&format!(
                "{}\t{}\t{}\t{}\t{}\n",
                e.image.display(),
                label,
                e.source,
                e.band,
                e.split
            ));
        }
        out
    }

    /// Parses manifest text; `origin` only labels error messages.
    pub fn parse(text: &str, origin: &str) -> Result<Self, DatasetError> {
        let fmt_err = |line: usize, message: String| DatasetError::Format {
            path: origin.to_string(),
            line,
            message,
        };
        let mut lines = text.lines().enumerate();
        let (_, first) = lines.next().ok_or_else(|| fmt_err(1, "missing JSON header".into()))?;
        let header: Header = serde_json::from_str(first).map_err(|e| fmt_err(1, format!("bad header: {e}")))?;
        let mut m = DatasetManifest {
            name: header.name,
            band: header.band,
            seed: header.seed,
            entries: Vec::new(),
        };
        for (i, raw) in lines {
            let line = i + 1;
            if raw.trim().is_empty() {
                continue;
            }
            let f: Vec<&str> = raw.split('\t').collect();
            if f.len() != 5 {
                return Err(fmt_err(line, format!("expected 5 tab-separated fields, found {}", f.len())));
            }
            m.entries.push(DatasetEntry {
                image: PathBuf::from(f[0]),
                label: (!f[1].is_empty()).then(|| PathBuf::from(f[1])),
                source: f[2].parse().map_err(|e| fmt_err(line, e))?,
                band: f[3].parse().map_err(|e| fmt_err(line, e))?,
                split: f[4].parse().map_err(|e| fmt_err(line, e))?,
            });
        }
        m.validate()?;
        Ok(m)
    }

    /// Reads a manifest file. Relative entry paths are resolved against the
    /// manifest's directory.
    pub fn read(path: &Path) -> Result<Self, DatasetError> {
        let text = std::fs::read_to_string(path).map_err(io_err(path))?;
        let mut m = Self::parse(&text, &path.display().to_string())?;
        let base = path.parent().unwrap_or(Path::new(""));
        let base = std::path::absolute(base).map_err(io_err(path))?;
        for e in &mut m.entries {
            if e.image.is_relative() {
                e.image = base.join(&e.image);
            }
            if let Some(l) = e.label.as_mut().filter(|l| l.is_relative()) {
                *l = base.join(&*l);
            }
        }
        m.validate()?;
        Ok(m)
    }

    pub fn write(&self, path: &Path) -> Result<(), DatasetError> {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir).map_err(io_err(dir))?;
        }
        std::fs::write(path, self.to_text()).map_err(io_err(path))
    }
}

/// Train-to-val ratio `a:b` with both parts positive.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct SplitRatio {
    pub train: u32,
    pub val: u32,
}

impl SplitRatio {
    pub fn new(train: u32, val: u32) -> Result<Self, DatasetError> {
        if train == 0 || val == 0 {
            return Err(DatasetError::Ratio(format!("{train}:{val}")));
        }
        Ok(Self { train, val })
    }

    /// Number of train entries out of `n`: `floor(n * a / (a + b))`.
    pub fn train_count(&self, n: usize) -> usize {
        (n as u128 * self.train as u128 / (self.train as u128 + self.val as u128)) as usize
    }
}

impl Default for SplitRatio {
    fn default() -> Self {
        Self { train: 4, val: 1 }
    }
}

impl FromStr for SplitRatio {
    type Err = DatasetError;
    fn from_str(s: &str) -> Result<Self, DatasetError> {
        let bad = || DatasetError::Ratio(s.to_string());
        let (a, b) = s.split_once(':').ok_or_else(bad)?;
        let a: u32 = a.trim().parse().map_err(|_| bad())?;
        let b: u32 = b.trim().parse().map_err(|_| bad())?;
        Self::new(a, b).map_err(|_| bad())
    }
}

impl TryFrom<String> for SplitRatio {
    type Error = DatasetError;
    fn try_from(s: String) -> Result<Self, DatasetError> {
        s.parse()
    }
}

impl From<SplitRatio> for String {
    fn from(r: SplitRatio) -> String {
        r.to_string()
    }
}

impl fmt::Display for SplitRatio {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.train, self.val)
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct SplitOptions {
    /// Put every synthetic entry in train and split only the real ones.
    pub synthetic_train_only: bool,
}

/// Shuffles with `seed` and sends the first `floor(n·a/(a+b))` entries to
/// train, the rest to val. Entry order in the manifest is preserved.
pub fn split(
    manifest: &DatasetManifest,
    ratio: SplitRatio,
    seed: u64,
    options: SplitOptions,
) -> Result<DatasetManifest, DatasetError> {
    manifest.validate()?;
    if manifest.is_empty() {
        return Err(DatasetError::Empty(manifest.name.clone()));
    }
    if let Some(e) = manifest.entries.iter().find(|e| e.split != Split::Unassigned) {
        return Err(DatasetError::AlreadySplit(e.image.clone()));
    }
    let mut out = manifest.clone();
    out.seed = Some(seed);
    let mut pool: Vec<usize> = Vec::with_capacity(out.len());
    for (i, e) in out.entries.iter_mut().enumerate() {
        if options.synthetic_train_only && e.source == Source::Synthetic {
            e.split = Split::Train;
        } else {
            pool.push(i);
        }
    }
    pool.shuffle(&mut purpose_rng(seed, "split"));
    let n_train = ratio.train_count(pool.len());
    for (k, &i) in pool.iter().enumerate() {
        out.entries[i].split = if k < n_train { Split::Train } else { Split::Val };
    }
    Ok(out)
}

/// Real entries followed by synthetic ones, each unchanged.
pub fn mix(real: &DatasetManifest, synthetic: &DatasetManifest) -> Result<DatasetManifest, DatasetError> {
    if real.band != synthetic.band {
        return Err(DatasetError::BandMismatch {
            real: real.band,
            synthetic: synthetic.band,
        });
    }
    real.validate()?;
    synthetic.validate()?;
    let mut out = real.clone();
    out.name = format!("{}+{}", real.name, synthetic.name);
    if synthetic.is_empty() {
        out.name = real.name.clone();
    }
    out.entries.extend(synthetic.entries.iter().cloned());
    out.validate()?;
    Ok(out)
}

/// Replicates a single-channel image into three identical channels.
pub fn nir_to_three_channel(img: &Image8) -> Result<Image8, ImageError> {
    if img.channels != 1 {
        return Err(ImageError::Channels {
            expected: 1,
            found: img.channels,
        });
    }
    let data = img.data.iter().flat_map(|&v| [v, v, v]).collect();
    Ok(Image8::from_raw(img.width, img.height, 3, data).expect("size matches"))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ExportOptions {
    /// Write single-channel NIR PNGs as three identical channels.
    pub nir_three_channel: bool,
}

impl Default for ExportOptions {
    fn default() -> Self {
        Self {
            nir_three_channel: true,
        }
    }
}

pub const DATA_YAML: &str = "data.yaml";
pub const EXPORT_MANIFEST: &str = "manifest.tsv";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct ExportSummary {
    pub train: usize,
    pub val: usize,
}

struct Planned<'a> {
    entry: &'a DatasetEntry,
    image_dst: PathBuf,
    label_dst: PathBuf,
}

/// Writes `images/{train,val}`, `labels/{train,val}`, `data.yaml` and a
/// `manifest.tsv` describing the exported tree. Everything is checked before
/// the first file is written. Images without a label file get an empty one.
pub fn export(manifest: &DatasetManifest, out_dir: &Path, options: ExportOptions) -> Result<ExportSummary, DatasetError> {
    manifest.validate()?;
    let mut names: BTreeMap<(Split, String), &Path> = BTreeMap::new();
    let mut plan = Vec::with_capacity(manifest.len());
    for e in &manifest.entries {
        if e.split == Split::Unassigned {
            return Err(DatasetError::Unassigned(e.image.clone()));
        }
        if !e.image.is_file() {
            return Err(DatasetError::MissingFile(e.image.clone()));
        }
        if let Some(label) = &e.label {
            if !label.is_file() {
                return Err(DatasetError::MissingFile(label.clone()));
            }
            let text = std::fs::read_to_string(label).map_err(io_err(label))?;
            parse_annotations(&text).map_err(|source| DatasetError::Label {
                path: label.clone(),
                source,
            })?;
        }
        let file_name = e
            .image
            .file_name()
            .ok_or_else(|| DatasetError::EmptyPath { index: plan.len() })?
            .to_string_lossy()
            .into_owned();
        let stem = e.image.file_stem().unwrap_or_default().to_string_lossy().into_owned();
        if names.insert((e.split, stem.clone()), &e.image).is_some() {
            return Err(DatasetError::NameCollision {
                split: e.split,
                name: stem,
            });
        }
        plan.push(Planned {
            entry: e,
            image_dst: Path::new("images").join(e.split.as_str()).join(&file_name),
            label_dst: Path::new("labels").join(e.split.as_str()).join(format!("{stem}.txt")),
        });
    }

    for sub in ["images/train", "images/val", "labels/train", "labels/val"] {
        let d = out_dir.join(sub);
        std::fs::create_dir_all(&d).map_err(io_err(&d))?;
    }
    plan.par_iter().try_for_each(|p| copy_entry(p, out_dir, options))?;

    let mut exported = DatasetManifest {
        name: manifest.name.clone(),
        band: manifest.band,
        seed: manifest.seed,
        entries: Vec::with_capacity(plan.len()),
    };
    for p in &plan {
        exported.entries.push(DatasetEntry {
            image: p.image_dst.clone(),
            label: Some(p.label_dst.clone()),
            ..p.entry.clone()
        });
    }
    exported.write(&out_dir.join(EXPORT_MANIFEST))?;
    let yaml_path = out_dir.join(DATA_YAML);
    std::fs::write(&yaml_path, data_yaml(out_dir)?).map_err(io_err(&yaml_path))?;
    Ok(ExportSummary {
        train: exported.count(Split::Train),
        val: exported.count(Split::Val),
    })
}

fn data_yaml(out_dir: &Path) -> Result<String, DatasetError> {
    let root = std::path::absolute(out_dir).map_err(io_err(out_dir))?;
    Ok(format!(
        "path: {}\ntrain: images/train\nval: images/val\nnc: 1\nnames: [\"walnut\"]\n",
        root.display()
    ))
}

fn copy_entry(p: &Planned<'_>, out_dir: &Path, options: ExportOptions) -> Result<(), DatasetError> {
    let e = p.entry;
    let dst = out_dir.join(&p.image_dst);
    let is_png = e.image.extension().is_some_and(|x| x.eq_ignore_ascii_case("png"));
    let mut copied = false;
    if options.nir_three_channel && e.band == ImageBand::Nir && is_png {
        let img = Image8::read_png(&e.image)?;
        if img.channels == 1 {
            nir_to_three_channel(&img)?.write_png(&dst)?;
            copied = true;
        }
    }
    if !copied {
        std::fs::copy(&e.image, &dst).map_err(io_err(&e.image))?;
    }
    let label_dst = out_dir.join(&p.label_dst);
    match &e.label {
        Some(src) => std::fs::copy(src, &label_dst).map(|_| ()).map_err(io_err(src))?,
        None => std::fs::write(&label_dst, "").map_err(io_err(&label_dst))?,
    }
    Ok(())
}

/// Reads back the manifest of an exported tree.
pub fn read_exported(out_dir: &Path) -> Result<DatasetManifest, DatasetError> {
    DatasetManifest::read(&out_dir.join(EXPORT_MANIFEST))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn manifest(n: usize, source: Source, band: ImageBand, prefix: &str) -> DatasetManifest {
        let mut m = DatasetManifest::new(prefix, band);
        for i in 0..n {
            m.entries.push(DatasetEntry::new(
                format!("{prefix}/img_{i:05}.png"),
                Some(format!("{prefix}/img_{i:05}.txt").into()),
                source,
                band,
            ));
        }
        m
    }

    #[test]
    fn split_counts() {
        for (n, train) in [(1500, 1200), (5, 4), (2000, 1600), (1, 0), (7, 5)] {
            let m = manifest(n, Source::Real, ImageBand::Rgb, "r");
            let s = split(&m, SplitRatio::default(), 3, SplitOptions::default()).unwrap();
            assert_eq!(s.count(Split::Train), train, "n = {n}");
            assert_eq!(s.count(Split::Val), n - train);
            assert_eq!(s.seed, Some(3));
        }
    }

    #[test]
    fn split_is_seeded() {
        let m = manifest(50, Source::Real, ImageBand::Rgb, "r");
        let a = split(&m, SplitRatio::default(), 11, SplitOptions::default()).unwrap();
        let b = split(&m, SplitRatio::default(), 11, SplitOptions::default()).unwrap();
        let c = split(&m, SplitRatio::default(), 12, SplitOptions::default()).unwrap();
        assert_eq!(a, b);
        assert_ne!(a.entries, c.entries);
        assert_eq!(a.count(Split::Train), c.count(Split::Train));
    }

    #[test]
    fn split_rejects_empty_and_resplit() {
        let empty = DatasetManifest::new("e", ImageBand::Rgb);
        assert!(matches!(
            split(&empty, SplitRatio::default(), 0, SplitOptions::default()),
            Err(DatasetError::Empty(_))
        ));
        let m = manifest(5, Source::Real, ImageBand::Rgb, "r");
        let s = split(&m, SplitRatio::default(), 0, SplitOptions::default()).unwrap();
        assert!(matches!(
            split(&s, SplitRatio::default(), 0, SplitOptions::default()),
            Err(DatasetError::AlreadySplit(_))
        ));
    }

    #[test]
    fn synthetic_train_only() {
        let m = mix(
            &manifest(10, Source::Real, ImageBand::Rgb, "r"),
            &manifest(4, Source::Synthetic, ImageBand::Rgb, "s"),
        )
        .unwrap();
        let opts = SplitOptions {
            synthetic_train_only: true,
        };
        let s = split(&m, SplitRatio::default(), 1, opts).unwrap();
        assert!(s
            .entries
            .iter()
            .filter(|e| e.source == Source::Synthetic)
            .all(|e| e.split == Split::Train));
        assert_eq!(s.count(Split::Train), 8 + 4);
    }

    #[test]
    fn ratio_parsing() {
        assert_eq!("4:1".parse::<SplitRatio>().unwrap(), SplitRatio::default());
        assert_eq!("3:2".parse::<SplitRatio>().unwrap().train_count(10), 6);
        for bad in ["4", "0:1", "4:0", "a:b", "-1:2"] {
            assert!(bad.parse::<SplitRatio>().is_err(), "{bad}");
        }
    }

    #[test]
    fn mix_concatenates() {
        let r = manifest(15, Source::Real, ImageBand::Rgb, "r");
        let s = manifest(5, Source::Synthetic, ImageBand::Rgb, "s");
        let m = mix(&r, &s).unwrap();
        assert_eq!(m.len(), 20);
        assert_eq!(&m.entries[..15], &r.entries[..]);
        assert_eq!(&m.entries[15..], &s.entries[..]);
        assert_eq!(mix(&r, &DatasetManifest::new("x", ImageBand::Rgb)).unwrap(), r);
    }

    #[test]
    fn mix_rejects_band_mismatch_and_duplicates() {
        let r = manifest(3, Source::Real, ImageBand::Rgb, "r");
        let err = mix(&r, &manifest(3, Source::Synthetic, ImageBand::Nir, "s")).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("rgb") && msg.contains("nir"), "{msg}");
        assert!(matches!(mix(&r, &r), Err(DatasetError::DuplicatePath(_))));
    }

    #[test]
    fn manifest_text_roundtrip() {
        let mut m = manifest(4, Source::Synthetic, ImageBand::Nir, "s");
        m.entries[2].label = None;
        let m = split(&m, SplitRatio::default(), 9, SplitOptions::default()).unwrap();
        let back = DatasetManifest::parse(&m.to_text(), "mem").unwrap();
        assert_eq!(back, m);
        assert!(m.to_text().starts_with(r#"{"name":"s","band":"nir","seed":9}"#));
    }

    #[test]
    fn manifest_parse_errors_name_line() {
        let err = DatasetManifest::parse("{\"name\":\"a\",\"band\":\"rgb\",\"seed\":null}\nx\ty\n", "m.tsv").unwrap_err();
        assert!(err.to_string().contains("line 2"), "{err}");
    }

    #[test]
    fn nir_replication() {
        let img = Image8::from_raw(2, 1, 1, vec![0, 200]).unwrap();
        let out = nir_to_three_channel(&img).unwrap();
        assert_eq!(out.data, [0, 0, 0, 200, 200, 200]);
        assert!(nir_to_three_channel(&out).is_err());
    }
}
