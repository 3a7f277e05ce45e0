use std::path::{Path, PathBuf};

use orchardsynth::autolabel::{write_annotation_file, Annotation};
use orchardsynth::dataset::{self, DatasetError, ExportOptions, SplitOptions, DATA_YAML};
use orchardsynth::image::Image8;
use orchardsynth::{DatasetEntry, DatasetManifest, ImageBand, Source, Split, SplitRatio};

fn stub_set(dir: &Path, n: usize, band: ImageBand, source: Source, prefix: &str) -> DatasetManifest {
    let mut m = DatasetManifest::new(prefix, band);
    let channels = if band == ImageBand::Nir { 1 } else { 3 };
    for i in 0..n {
        let image = dir.join(format!("{prefix}_{i:04}.png"));
        let mut img = Image8::new(4, 3, channels);
        img.data.iter_mut().enumerate().for_each(|(k, v)| *v = (k * 7 + i) as u8);
        img.write_png(&image).unwrap();
        let label = dir.join(format!("{prefix}_{i:04}.txt"));
        let ann = Annotation {
            class_id: 0,
            x_center: 0.5,
            y_center: 0.5,
            width: 0.25,
            height: 0.5,
        };
        write_annotation_file(&label, &vec![ann; i % 3]).unwrap();
        m.entries.push(DatasetEntry::new(image, Some(label), source, band));
    }
    m
}

fn tree_files(root: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push((p.strip_prefix(root).unwrap().to_path_buf(), std::fs::read(&p).unwrap()));
            }
        }
    }
    out.sort();
    out
}

fn count_files(dir: &Path) -> usize {
    std::fs::read_dir(dir).unwrap().count()
}

#[test]
fn export_places_each_split() {
    let tmp = tempfile::tempdir().unwrap();
    let m = stub_set(tmp.path(), 25, ImageBand::Rgb, Source::Real, "r");
    let s = dataset::split(&m, SplitRatio::default(), 4, SplitOptions::default()).unwrap();
    let out = tmp.path().join("tree");
    let summary = dataset::export(&s, &out, ExportOptions::default()).unwrap();
    assert_eq!((summary.train, summary.val), (20, 5));
    assert_eq!(count_files(&out.join("images/train")), 20);
    assert_eq!(count_files(&out.join("labels/train")), 20);
    assert_eq!(count_files(&out.join("images/val")), 5);
    assert_eq!(count_files(&out.join("labels/val")), 5);

    let yaml = std::fs::read_to_string(out.join(DATA_YAML)).unwrap();
    assert!(yaml.contains("train: images/train\n"));
    assert!(yaml.contains("val: images/val\n"));
    assert!(yaml.contains("nc: 1\n"));
    let root = yaml.lines().next().unwrap().strip_prefix("path: ").unwrap();
    assert!(Path::new(root).is_absolute());

    for e in &s.entries {
        let name = e.image.file_name().unwrap();
        let copied = out.join("images").join(e.split.as_str()).join(name);
        assert_eq!(std::fs::read(&e.image).unwrap(), std::fs::read(copied).unwrap());
    }
}

#[test]
fn export_is_idempotent() {
    let tmp = tempfile::tempdir().unwrap();
    let m = stub_set(tmp.path(), 12, ImageBand::Rgb, Source::Real, "r");
    let s = dataset::split(&m, SplitRatio::new(3, 1).unwrap(), 1, SplitOptions::default()).unwrap();
    let out = tmp.path().join("tree");
    dataset::export(&s, &out, ExportOptions::default()).unwrap();
    let first = tree_files(&out);
    dataset::export(&s, &out, ExportOptions::default()).unwrap();
    assert_eq!(first, tree_files(&out));
}

#[test]
fn exported_manifest_round_trips() {
    let tmp = tempfile::tempdir().unwrap();
    let m = stub_set(tmp.path(), 10, ImageBand::Rgb, Source::Real, "r");
    let s = dataset::split(&m, SplitRatio::default(), 2, SplitOptions::default()).unwrap();
    let out = tmp.path().join("tree");
    dataset::export(&s, &out, ExportOptions::default()).unwrap();
    let back = dataset::read_exported(&out).unwrap();
    assert_eq!(back.len(), s.len());
    assert_eq!(back.seed, Some(2));
    for (a, b) in s.entries.iter().zip(&back.entries) {
        assert_eq!(a.split, b.split);
        assert_eq!(a.source, b.source);
        assert_eq!(std::fs::read(&a.image).unwrap(), std::fs::read(&b.image).unwrap());
        assert_eq!(
            std::fs::read(a.label.as_ref().unwrap()).unwrap(),
            std::fs::read(b.label.as_ref().unwrap()).unwrap()
        );
    }
}

#[test]
fn missing_image_fails_before_writing() {
    let tmp = tempfile::tempdir().unwrap();
    let m = stub_set(tmp.path(), 6, ImageBand::Rgb, Source::Real, "r");
    let s = dataset::split(&m, SplitRatio::default(), 2, SplitOptions::default()).unwrap();
    std::fs::remove_file(&s.entries[4].image).unwrap();
    let out = tmp.path().join("tree");
    let err = dataset::export(&s, &out, ExportOptions::default()).unwrap_err();
    assert!(matches!(err, DatasetError::MissingFile(ref p) if p == &s.entries[4].image), "{err}");
    assert!(!out.exists());
}

#[test]
fn unlabeled_images_get_empty_label_files() {
    let tmp = tempfile::tempdir().unwrap();
    let mut m = stub_set(tmp.path(), 5, ImageBand::Rgb, Source::Real, "r");
    for e in &mut m.entries {
        e.label = None;
    }
    let s = dataset::split(&m, SplitRatio::default(), 2, SplitOptions::default()).unwrap();
    let out = tmp.path().join("tree");
    dataset::export(&s, &out, ExportOptions::default()).unwrap();
    for e in &s.entries {
        let stem = e.image.file_stem().unwrap().to_string_lossy();
        let label = out.join("labels").join(e.split.as_str()).join(format!("{stem}.txt"));
        assert_eq!(std::fs::read_to_string(label).unwrap(), "");
    }
}

#[test]
fn nir_exports_as_three_channels_unless_asked() {
    let tmp = tempfile::tempdir().unwrap();
    let m = stub_set(tmp.path(), 5, ImageBand::Nir, Source::Synthetic, "n");
    let s = dataset::split(&m, SplitRatio::default(), 2, SplitOptions::default()).unwrap();

    let out = tmp.path().join("three");
    dataset::export(&s, &out, ExportOptions::default()).unwrap();
    let back = dataset::read_exported(&out).unwrap();
    for (a, b) in s.entries.iter().zip(&back.entries) {
        let src = Image8::read_png(&a.image).unwrap();
        let dst = Image8::read_png(&b.image).unwrap();
        assert_eq!(dst.channels, 3);
        for (i, px) in dst.data.chunks(3).enumerate() {
            assert_eq!(px, [src.data[i]; 3]);
        }
    }

    let out = tmp.path().join("one");
    let options = ExportOptions {
        nir_three_channel: false,
    };
    dataset::export(&s, &out, options).unwrap();
    let back = dataset::read_exported(&out).unwrap();
    assert_eq!(Image8::read_png(&back.entries[0].image).unwrap().channels, 1);
}

#[test]
fn synthetic_train_only_keeps_synthetic_out_of_val() {
    let tmp = tempfile::tempdir().unwrap();
    let real = stub_set(tmp.path(), 15, ImageBand::Rgb, Source::Real, "r");
    let synth = stub_set(tmp.path(), 5, ImageBand::Rgb, Source::Synthetic, "s");
    let mixed = dataset::mix(&real, &synth).unwrap();
    let options = SplitOptions {
        synthetic_train_only: true,
    };
    let s = dataset::split(&mixed, SplitRatio::default(), 3, options).unwrap();
    assert!(s
        .entries
        .iter()
        .filter(|e| e.source == Source::Synthetic)
        .all(|e| e.split == Split::Train));
    assert_eq!(s.count(Split::Val), 3);
    assert_eq!(s.count(Split::Train), 17);
}

#[test]
fn written_manifest_reads_back_from_another_directory() {
    let tmp = tempfile::tempdir().unwrap();
    let m = stub_set(tmp.path(), 3, ImageBand::Rgb, Source::Real, "r");
    let path = tmp.path().join("sub/m.tsv");
    std::fs::create_dir_all(path.parent().unwrap()).unwrap();
    m.write(&path).unwrap();
    let back = DatasetManifest::read(&path).unwrap();
    assert_eq!(back.entries.len(), 3);
    for (a, b) in m.entries.iter().zip(&back.entries) {
        assert_eq!(std::fs::read(&a.image).unwrap(), std::fs::read(&b.image).unwrap());
    }
}
