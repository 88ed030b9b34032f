//! Dataset ingestion, preprocessing and synthetic fingerprints.

mod synth;

pub use image::GrayImage;
pub use synth::{laplacian_energy, make_synthetic_split, synth_fingerprint, SyntheticSpec};

use std::collections::HashSet;
use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Side length every sample is resized to before entering the network.
pub const INPUT_SIZE: usize = 512;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Label {
    Spoof = 0,
    Live = 1,
}

impl Label {
    pub fn value(self) -> f64 {
        self as u8 as f64
    }

    pub fn from_score(score: f64, threshold: f64) -> Self {
        if score >= threshold {
            Label::Live
        } else {
            Label::Spoof
        }
    }

    pub fn dir_name(self) -> &'static str {
        match self {
            Label::Live => "live",
            Label::Spoof => "spoof",
        }
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.dir_name())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Source {
    File(PathBuf),
    Synthetic { seed: u64 },
}

#[derive(Debug, Clone)]
pub struct SampleRecord {
    pub id: String,
    pub label: Label,
    pub source: Source,
    pub image: GrayImage,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

#[derive(Debug, Clone)]
pub struct Dataset {
    pub split: Split,
    samples: Vec<SampleRecord>,
}

impl Dataset {
    pub fn new(split: Split, samples: Vec<SampleRecord>) -> Result<Self> {
        let mut seen = HashSet::new();
        for s in &samples {
            if !seen.insert(s.id.as_str()) {
                return Err(Error::Dataset(format!("duplicate sample id `{}`", s.id)));
            }
            if s.image.width() == 0 || s.image.height() == 0 {
                return Err(Error::Dataset(format!("sample `{}` has an empty image", s.id)));
            }
        }
        Ok(Dataset { split, samples })
    }

    pub fn samples(&self) -> &[SampleRecord] {
        &self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn labels(&self) -> Vec<Label> {
        self.samples.iter().map(|s| s.label).collect()
    }

    pub fn count(&self, label: Label) -> usize {
        self.samples.iter().filter(|s| s.label == label).count()
    }

    /// Errors unless both classes are present.
    pub fn require_both_classes(&self) -> Result<()> {
        match (self.count(Label::Live), self.count(Label::Spoof)) {
            (0, _) => Err(Error::SingleClass("no live samples")),
            (_, 0) => Err(Error::SingleClass("no spoof samples")),
            _ => Ok(()),
        }
    }

    /// Writes the dataset as `<root>/live/*.png` and `<root>/spoof/*.png`.
    pub fn materialize(&self, root: &Path) -> Result<()> {
        for label in [Label::Live, Label::Spoof] {
            let dir = root.join(label.dir_name());
            std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        }
        for s in &self.samples {
            let file = s.id.rsplit('/').next().unwrap_or(&s.id);
            let path = root.join(s.label.dir_name()).join(format!("{file}.png"));
            s.image.save(&path).map_err(|source| Error::Image { path, source })?;
        }
        Ok(())
    }
}

fn is_image_file(path: &Path) -> bool {
    path.extension()
        .and_then(|e| e.to_str())
        .is_some_and(|e| matches!(e.to_ascii_lowercase().as_str(), "png" | "bmp"))
}

/// Decodes an image file as 8-bit luma.
pub fn read_gray(path: &Path) -> Result<GrayImage> {
    Ok(image::open(path).map_err(|source| Error::Image { path: path.to_path_buf(), source })?.to_luma8())
}

/// Loads `<root>/live` and `<root>/spoof` in lexicographic file order,
/// live samples first. Colour images are converted to luma.
pub fn load_dataset(root: &Path, split: Split) -> Result<Dataset> {
    if !root.is_dir() {
        return Err(Error::Dataset(format!("dataset directory {} does not exist", root.display())));
    }
    let mut samples = Vec::new();
    for label in [Label::Live, Label::Spoof] {
        let dir = root.join(label.dir_name());
        if !dir.is_dir() {
            return Err(Error::Dataset(format!("missing subdirectory {}", dir.display())));
        }
        let mut files: Vec<PathBuf> = std::fs::read_dir(&dir)
            .map_err(|e| Error::io(&dir, e))?
            .map(|entry| entry.map(|e| e.path()).map_err(|e| Error::io(&dir, e)))
            .collect::<Result<_>>()?;
        files.retain(|p| p.is_file());
        files.sort();
        for path in files {
            if !is_image_file(&path) {
                return Err(Error::Dataset(format!("{} is not a PNG or BMP image", path.display())));
            }
            let image = read_gray(&path)?;
            let name = path.file_name().and_then(|n| n.to_str()).unwrap_or_default();
            samples.push(SampleRecord {
                id: format!("{}/{name}", label.dir_name()),
                label,
                source: Source::File(path.clone()),
                image,
            });
        }
    }
    Dataset::new(split, samples)
}

/// Bilinear resize (half-pixel centres) to `size × size`, scaled to [0, 1].
pub fn preprocess_to<T: Scalar>(image: &GrayImage, size: usize) -> Tensor<T> {
    let (w, h) = (image.width() as usize, image.height() as usize);
    let raw = image.as_raw();
    let axis = |out: usize, len: usize| -> Vec<(usize, usize, f64)> {
        let scale = len as f64 / size as f64;
        (0..out)
            .map(|i| {
                let src = ((i as f64 + 0.5) * scale - 0.5).clamp(0.0, (len - 1) as f64);
                let lo = src.floor() as usize;
                (lo, (lo + 1).min(len - 1), src - lo as f64)
            })
            .collect()
    };
    let xs = axis(size, w);
    let ys = axis(size, h);
    let lerp = |a: f64, b: f64, t: f64| a + t * (b - a);
    let px = |x: usize, y: usize| raw[y * w + x] as f64;
    let mut data = Vec::with_capacity(size * size);
    for &(y0, y1, fy) in &ys {
        for &(x0, x1, fx) in &xs {
            let top = lerp(px(x0, y0), px(x1, y0), fx);
            let bottom = lerp(px(x0, y1), px(x1, y1), fx);
            data.push(T::of(lerp(top, bottom, fy) / 255.0));
        }
    }
    Tensor::new([1, 1, size, size], data).expect("size × size")
}

/// [`preprocess_to`] at the network's native 512 × 512 resolution.
pub fn preprocess<T: Scalar>(image: &GrayImage) -> Tensor<T> {
    preprocess_to(image, INPUT_SIZE)
}

#[cfg(test)]
mod tests {
    use super::*;
    use image::Luma;

    #[test]
    fn preprocess_is_scaling_at_native_size() {
        let img = GrayImage::from_fn(512, 512, |x, y| Luma([((x * 7 + y * 3) % 256) as u8]));
        let t = preprocess::<f32>(&img);
        assert_eq!(t.shape(), &[1, 1, 512, 512]);
        for (v, p) in t.data().iter().zip(img.as_raw()) {
            assert_eq!(*v, (*p as f64 / 255.0) as f32);
        }
    }

    #[test]
    fn preprocess_constant_image_any_size() {
        for (w, h) in [(1024, 768), (37, 5), (1, 1)] {
            let img = GrayImage::from_pixel(w, h, Luma([128]));
            let t = preprocess::<f64>(&img);
            assert_eq!(t.shape(), &[1, 1, 512, 512]);
            assert!(t.data().iter().all(|&v| v == 128.0 / 255.0));
        }
    }

    #[test]
    fn preprocess_upscale_interpolates() {
        let img = GrayImage::from_raw(2, 1, vec![0, 255]).unwrap();
        let t = preprocess_to::<f64>(&img, 4);
        let row = &t.data()[..4];
        assert_eq!(row, &[0.0, 0.25, 0.75, 1.0]);
    }

    fn write_png(path: &Path, v: u8) {
        GrayImage::from_pixel(4, 4, Luma([v])).save(path).unwrap();
    }

    #[test]
    fn loads_layout_in_lexicographic_order() {
        let dir = tempfile::tempdir().unwrap();
        for d in ["live", "spoof"] {
            std::fs::create_dir(dir.path().join(d)).unwrap();
        }
        for name in ["c.png", "a.png", "b.bmp"] {
            let p = dir.path().join("live").join(name);
            GrayImage::from_pixel(3, 3, Luma([9])).save(&p).unwrap();
        }
        write_png(&dir.path().join("spoof/z.png"), 1);
        write_png(&dir.path().join("spoof/y.png"), 2);
        let ds = load_dataset(dir.path(), Split::Train).unwrap();
        let ids: Vec<&str> = ds.samples().iter().map(|s| s.id.as_str()).collect();
        assert_eq!(ids, ["live/a.png", "live/b.bmp", "live/c.png", "spoof/y.png", "spoof/z.png"]);
        let labels: Vec<f64> = ds.labels().iter().map(|l| l.value()).collect();
        assert_eq!(labels, [1.0, 1.0, 1.0, 0.0, 0.0]);
    }

    #[test]
    fn empty_spoof_dir_loads_but_is_single_class() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::create_dir_all(dir.path().join("live")).unwrap();
        std::fs::create_dir_all(dir.path().join("spoof")).unwrap();
        write_png(&dir.path().join("live/a.png"), 3);
        let ds = load_dataset(dir.path(), Split::Train).unwrap();
        assert_eq!(ds.len(), 1);
        assert!(matches!(ds.require_both_classes(), Err(Error::SingleClass(_))));
    }

    #[test]
    fn loader_errors_name_the_path() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::create_dir_all(dir.path().join("live")).unwrap();
        let err = load_dataset(dir.path(), Split::Train).unwrap_err();
        assert!(err.to_string().contains("spoof"), "{err}");
        std::fs::create_dir_all(dir.path().join("spoof")).unwrap();
        std::fs::write(dir.path().join("spoof/notes.txt"), "hello").unwrap();
        let err = load_dataset(dir.path(), Split::Train).unwrap_err();
        assert!(err.to_string().contains("notes.txt"), "{err}");
        std::fs::remove_file(dir.path().join("spoof/notes.txt")).unwrap();
        std::fs::write(dir.path().join("spoof/broken.png"), "not a png").unwrap();
        let err = load_dataset(dir.path(), Split::Train).unwrap_err();
        assert!(err.to_string().contains("broken.png"), "{err}");
        assert!(err.is_data_error());
    }
}
