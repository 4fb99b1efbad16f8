//! Dataset directory layout `root/{images,masks}/NAME.(png|pgm)` and 8-bit
//! image codecs.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use image::{DynamicImage, GrayImage, ImageBuffer, Luma, Rgb, RgbImage};
use log::warn;

use crate::error::{HclError, Result};
use crate::tensor::Tensor;

const EXTENSIONS: [&str; 2] = ["png", "pgm"];

fn open_image(path: &Path) -> Result<DynamicImage> {
    image::open(path).map_err(|source| HclError::Image {
        path: path.to_path_buf(),
        source,
    })
}

fn quantize(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Loads an 8-bit gray or RGB image as a `3×H×W` tensor in `[0,1]`; gray
/// images are replicated across channels.
pub fn read_image(path: &Path) -> Result<Tensor> {
    let rgb = open_image(path)?.to_rgb8();
    let (w, h) = (rgb.width() as usize, rgb.height() as usize);
    let mut data = vec![0.0; 3 * h * w];
    for (x, y, px) in rgb.enumerate_pixels() {
        for c in 0..3 {
            data[(c * h + y as usize) * w + x as usize] = px[c] as f64 / 255.0;
        }
    }
    Tensor::new([3, h, w], data)
}

/// Loads a mask as an `H×W` tensor of {0,1}, thresholding gray values at 128.
pub fn read_mask(path: &Path) -> Result<Tensor> {
    let gray = open_image(path)?.to_luma8();
    let (w, h) = (gray.width() as usize, gray.height() as usize);
    let data = gray.pixels().map(|p| if p[0] >= 128 { 1.0 } else { 0.0 }).collect();
    Tensor::new([h, w], data)
}

/// Loads a gray map as an `H×W` tensor in `[0,1]` without thresholding.
pub fn read_gray(path: &Path) -> Result<Tensor> {
    let gray = open_image(path)?.to_luma8();
    let (w, h) = (gray.width() as usize, gray.height() as usize);
    Tensor::new([h, w], gray.pixels().map(|p| p[0] as f64 / 255.0).collect())
}

fn save(img: DynamicImage, path: &Path) -> Result<()> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            fs::create_dir_all(dir).map_err(|e| HclError::io(dir, e))?;
        }
    }
    img.save(path).map_err(|source| HclError::Image {
        path: path.to_path_buf(),
        source,
    })
}

/// Writes a `3×H×W` (RGB) or `H×W` / `1×H×W` (gray) tensor in `[0,1]`.
pub fn write_image(path: &Path, t: &Tensor) -> Result<()> {
    match *t.shape() {
        [3, h, w] => {
            let img: RgbImage = ImageBuffer::from_fn(w as u32, h as u32, |x, y| {
                let at = |c: usize| t.data()[(c * h + y as usize) * w + x as usize];
                Rgb([quantize(at(0)), quantize(at(1)), quantize(at(2))])
            });
            save(DynamicImage::ImageRgb8(img), path)
        }
        [1, h, w] | [h, w] => {
            let img: GrayImage = ImageBuffer::from_fn(w as u32, h as u32, |x, y| {
                Luma([quantize(t.data()[y as usize * w + x as usize])])
            });
            save(DynamicImage::ImageLuma8(img), path)
        }
        _ => Err(HclError::shape("write_image", format!("{:?}", t.shape()))),
    }
}

/// Writes raw 8-bit gray pixels as a binary PGM.
pub fn write_pgm(path: &Path, width: usize, height: usize, pixels: &[u8]) -> Result<()> {
    let img = GrayImage::from_raw(width as u32, height as u32, pixels.to_vec())
        .ok_or_else(|| HclError::shape("write_pgm", format!("{} pixels for {width}×{height}", pixels.len())))?;
    save(DynamicImage::ImageLuma8(img), path)
}

/// Min-max normalized 8-bit heatmap of an `H×W` map.
pub fn write_heatmap(path: &Path, map: &Tensor) -> Result<()> {
    let [h, w] = *map.shape() else {
        return Err(HclError::shape("write_heatmap", format!("{:?}", map.shape())));
    };
    let (lo, hi) = map
        .data()
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), &v| (l.min(v), h.max(v)));
    let span = if hi > lo { hi - lo } else { 1.0 };
    let px: Vec<u8> = map.data().iter().map(|v| quantize((v - lo) / span)).collect();
    write_pgm(path, w, h, &px)
}

/// PNG/PGM files of a directory keyed by file stem.
pub fn stems_in(dir: &Path) -> Result<BTreeMap<String, PathBuf>> {
    let mut out = BTreeMap::new();
    let entries = fs::read_dir(dir).map_err(|e| HclError::io(dir, e))?;
    for entry in entries {
        let path = entry.map_err(|e| HclError::io(dir, e))?.path();
        let ext = path
            .extension()
            .and_then(|e| e.to_str())
            .map(str::to_ascii_lowercase);
        if !ext.is_some_and(|e| EXTENSIONS.contains(&e.as_str())) {
            continue;
        }
        if let Some(stem) = path.file_stem().and_then(|s| s.to_str()) {
            out.insert(stem.to_string(), path);
        }
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SamplePaths {
    pub name: String,
    pub image: PathBuf,
    pub mask: PathBuf,
}

/// Image/mask pairs of a dataset directory, in lexicographic name order.
#[derive(Clone, Debug)]
pub struct Dataset {
    pub root: PathBuf,
    pub samples: Vec<SamplePaths>,
    /// Stems present on only one side.
    pub unmatched: Vec<String>,
}

impl Dataset {
    pub fn open(root: &Path) -> Result<Dataset> {
        let images = stems_in(&root.join("images"))?;
        let masks = stems_in(&root.join("masks"))?;
        let mut samples = Vec::new();
        let mut unmatched = Vec::new();
        for (name, image) in &images {
            match masks.get(name) {
                Some(mask) => samples.push(SamplePaths {
                    name: name.clone(),
                    image: image.clone(),
                    mask: mask.clone(),
                }),
                None => unmatched.push(name.clone()),
            }
        }
        unmatched.extend(masks.keys().filter(|k| !images.contains_key(*k)).cloned());
        for name in &unmatched {
            warn!("skipping {name}: no matching image/mask pair in {}", root.display());
        }
        if samples.is_empty() {
            return Err(HclError::Dataset(format!(
                "no image/mask pairs under {}",
                root.display()
            )));
        }
        Ok(Dataset {
            root: root.to_path_buf(),
            samples,
            unmatched,
        })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Loads every pair; unreadable pairs are returned as errors per item.
    pub fn iter(&self) -> impl Iterator<Item = (String, Result<(Tensor, Tensor)>)> + '_ {
        self.samples.iter().map(|s| {
            let loaded = read_image(&s.image).and_then(|img| {
                let mask = read_mask(&s.mask)?;
                if img.shape()[1..] != *mask.shape() {
                    return Err(HclError::Dataset(format!(
                        "{}: image {:?} and mask {:?} differ in size",
                        s.name,
                        img.shape(),
                        mask.shape()
                    )));
                }
                Ok((img, mask))
            });
            (s.name.clone(), loaded)
        })
    }
}

/// Writes a sample into `root/{images,masks}/NAME.png`.
pub fn write_sample(root: &Path, name: &str, image: &Tensor, mask: &Tensor) -> Result<()> {
    write_image(&root.join("images").join(format!("{name}.png")), image)?;
    write_image(&root.join("masks").join(format!("{name}.png")), mask)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mask_threshold_at_128() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.pgm");
        write_pgm(&p, 3, 1, &[127, 128, 200]).unwrap();
        assert_eq!(read_mask(&p).unwrap().data(), &[0.0, 1.0, 1.0]);
    }

    #[test]
    fn image_round_trip_within_quantization() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("x.png");
        let t = Tensor::from_fn([3, 5, 7], |i| ((i * 31) % 97) as f64 / 97.0);
        write_image(&p, &t).unwrap();
        let back = read_image(&p).unwrap();
        assert!(back.max_abs_diff(&t) <= 0.5 / 255.0 + 1e-12);
    }

    #[test]
    fn empty_dataset_is_an_error() {
        let dir = tempfile::tempdir().unwrap();
        fs::create_dir_all(dir.path().join("images")).unwrap();
        fs::create_dir_all(dir.path().join("masks")).unwrap();
        assert!(matches!(Dataset::open(dir.path()), Err(HclError::Dataset(_))));
    }

    #[test]
    fn unmatched_stems_are_skipped() {
        let dir = tempfile::tempdir().unwrap();
        let img = Tensor::full([3, 4, 4], 0.5);
        let mask = Tensor::zeros([4, 4]);
        write_sample(dir.path(), "b", &img, &mask).unwrap();
        write_sample(dir.path(), "a", &img, &mask).unwrap();
        write_image(&dir.path().join("images/orphan.png"), &img).unwrap();
        let ds = Dataset::open(dir.path()).unwrap();
        let names: Vec<_> = ds.samples.iter().map(|s| s.name.as_str()).collect();
        assert_eq!(names, ["a", "b"]);
        assert_eq!(ds.unmatched, ["orphan"]);
    }
}
