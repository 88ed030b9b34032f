use std::path::Path;

use expressnet::data::{laplacian_energy, make_synthetic_split, synth_fingerprint, SyntheticSpec};
use expressnet::{load_dataset, Error, Label, Split, TrainConfig};
use image::{GrayImage, Luma};

fn write_png(path: &Path, value: u8) {
    GrayImage::from_pixel(9, 7, Luma([value])).save(path).unwrap();
}

fn layout(root: &Path, live: &[&str], spoof: &[&str]) {
    for (dir, names) in [("live", live), ("spoof", spoof)] {
        std::fs::create_dir_all(root.join(dir)).unwrap();
        for (i, n) in names.iter().enumerate() {
            write_png(&root.join(dir).join(n), i as u8 * 40);
        }
    }
}

#[test]
fn loads_in_lexicographic_order_with_directory_labels() {
    let dir = tempfile::tempdir().unwrap();
    layout(dir.path(), &["c.png", "a.png", "b.bmp"], &["z.png", "y.png"]);
    let d = load_dataset(dir.path(), Split::Train).unwrap();
    let labels: Vec<f64> = d.labels().iter().map(|l| l.value()).collect();
    assert_eq!(labels, [1.0, 1.0, 1.0, 0.0, 0.0]);
    let ids: Vec<&str> = d.samples().iter().map(|s| s.id.as_str()).collect();
    assert_eq!(ids, ["live/a.png", "live/b.bmp", "live/c.png", "spoof/y.png", "spoof/z.png"]);
}

#[test]
fn empty_spoof_loads_but_training_rejects_it() {
    let dir = tempfile::tempdir().unwrap();
    layout(dir.path(), &["a.png", "b.png"], &[]);
    let d = load_dataset(dir.path(), Split::Train).unwrap();
    assert_eq!(d.len(), 2);
    let cfg = expressnet::ExpressNetConfig::micro();
    let r = expressnet::train::train::<f32>(cfg, &d, None, TrainConfig { epochs: 1, ..TrainConfig::default() }, None);
    assert!(matches!(r, Err(Error::SingleClass(_))));
}

#[test]
fn non_image_file_is_named_in_the_error() {
    let dir = tempfile::tempdir().unwrap();
    layout(dir.path(), &["a.png"], &["b.png"]);
    std::fs::write(dir.path().join("spoof").join("notes.txt"), "x").unwrap();
    let e = load_dataset(dir.path(), Split::Test).unwrap_err();
    assert!(e.to_string().contains("notes.txt"), "{e}");
    assert!(e.is_data_error());

    std::fs::remove_file(dir.path().join("spoof").join("notes.txt")).unwrap();
    std::fs::write(dir.path().join("live").join("broken.png"), b"not a png").unwrap();
    let e = load_dataset(dir.path(), Split::Test).unwrap_err();
    assert!(e.to_string().contains("broken.png"), "{e}");
}

#[test]
fn missing_subdirectory_is_named() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::create_dir_all(dir.path().join("live")).unwrap();
    let e = load_dataset(dir.path(), Split::Test).unwrap_err();
    assert!(e.to_string().contains("spoof"), "{e}");
}

#[test]
fn synthetic_live_has_more_high_frequency_energy_than_its_spoof() {
    for seed in 0..20 {
        let live = laplacian_energy(&synth_fingerprint(seed, Label::Live, 128).image);
        let spoof = laplacian_energy(&synth_fingerprint(seed, Label::Spoof, 128).image);
        assert!(live > spoof, "seed {seed}: {live} vs {spoof}");
    }
}

#[test]
fn single_threshold_on_laplacian_energy_separates_100_pairs() {
    let mut energies: Vec<(f64, Label)> = Vec::new();
    for seed in 1000..1100 {
        for label in [Label::Live, Label::Spoof] {
            energies.push((laplacian_energy(&synth_fingerprint(seed, label, 128).image), label));
        }
    }
    // best single threshold, brute force over every midpoint
    let mut values: Vec<f64> = energies.iter().map(|e| e.0).collect();
    values.sort_by(f64::total_cmp);
    let best = values
        .windows(2)
        .map(|w| (w[0] + w[1]) / 2.0)
        .map(|t| energies.iter().filter(|(e, l)| (*e >= t) == (*l == Label::Live)).count())
        .max()
        .unwrap();
    let acc = best as f64 / energies.len() as f64;
    assert!(acc >= 0.95, "separation accuracy {acc}");
}

#[test]
fn synthetic_split_round_trips_through_the_directory_layout() {
    let (train, test) = make_synthetic_split(SyntheticSpec { n_live: 3, n_spoof: 2, seed: 4, size: 48 });
    let dir = tempfile::tempdir().unwrap();
    test.materialize(dir.path()).unwrap();
    train.materialize(dir.path()).unwrap();
    let back = load_dataset(dir.path(), Split::Train).unwrap();
    assert_eq!(back.len(), train.len() + test.len());
    assert_eq!(back.count(Label::Live), 3);
    for s in train.samples() {
        let file = s.id.rsplit('/').next().unwrap();
        let loaded = back.samples().iter().find(|b| b.id.ends_with(&format!("{file}.png"))).unwrap();
        assert_eq!(loaded.image, s.image);
    }
}
