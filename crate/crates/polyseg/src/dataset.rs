//! Image/mask folders on disk: `<root>/images/*.{png,jpg,jpeg}` paired by
//! file stem with `<root>/masks/*.png`.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use image::imageops::{self, FilterType};
use image::{GrayImage, RgbImage};
use polyseg_core::data::ImageSample;
use polyseg_core::nn::resize_bilinear;
use polyseg_core::{Shape, Tensor};

const IMAGE_EXTENSIONS: [&str; 3] = ["png", "jpg", "jpeg"];

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ManifestEntry {
    pub id: String,
    pub image: PathBuf,
    pub mask: PathBuf,
}

fn files_by_stem(dir: &Path, extensions: &[&str]) -> Result<BTreeMap<String, PathBuf>> {
    let mut out = BTreeMap::new();
    let entries = fs::read_dir(dir).with_context(|| format!("cannot read {}", dir.display()))?;
    for entry in entries {
        let path = entry?.path();
        if !path.is_file() {
            continue;
        }
        let ext = path.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase);
        if !ext.is_some_and(|e| extensions.contains(&e.as_str())) {
            bail!("unexpected file {}", path.display());
        }
        let stem = path.file_stem().and_then(|s| s.to_str()).context("non UTF-8 file name")?.to_string();
        if let Some(prev) = out.insert(stem, path.clone()) {
            bail!("{} and {} share a stem", prev.display(), path.display());
        }
    }
    Ok(out)
}

/// Pairs every image with its mask, sorted by id.
pub fn scan_dataset(root: &Path) -> Result<Vec<ManifestEntry>> {
    if !root.is_dir() {
        bail!("dataset root {} does not exist", root.display());
    }
    let images = files_by_stem(&root.join("images"), &IMAGE_EXTENSIONS)?;
    let mut masks = files_by_stem(&root.join("masks"), &["png"])?;
    if images.is_empty() {
        bail!("no images under {}", root.join("images").display());
    }
    let mut manifest = Vec::with_capacity(images.len());
    for (id, image) in images {
        let mask = masks.remove(&id).with_context(|| format!("no mask for {}", image.display()))?;
        manifest.push(ManifestEntry { id, image, mask });
    }
    if let Some(orphan) = masks.values().next() {
        bail!("mask {} has no matching image", orphan.display());
    }
    Ok(manifest)
}

fn rgb_to_tensor(img: &RgbImage) -> Tensor {
    let (w, h) = img.dimensions();
    let data = img.as_raw().iter().map(|&v| f32::from(v) / 255.0).collect();
    Tensor::from_vec(Shape::new(1, h as usize, w as usize, 3), data).expect("buffer matches shape")
}

/// Decodes an RGB image and resizes it bilinearly to `size`², values in [0, 1].
pub fn load_image(path: &Path, size: usize) -> Result<Tensor> {
    let img = image::open(path).with_context(|| format!("cannot decode {}", path.display()))?.to_rgb8();
    let t = rgb_to_tensor(&img);
    let s = t.shape();
    Ok(if (s.h, s.w) == (size, size) {
        t
    } else {
        resize_bilinear(&t, size, size).map(|v| v.clamp(0.0, 1.0))
    })
}

/// Decodes a mask, resizes it with nearest neighbour and binarizes at >127.
pub fn load_mask(path: &Path, size: usize) -> Result<Tensor> {
    let img = image::open(path).with_context(|| format!("cannot decode {}", path.display()))?.to_luma8();
    let img = if img.dimensions() == (size as u32, size as u32) {
        img
    } else {
        imageops::resize(&img, size as u32, size as u32, FilterType::Nearest)
    };
    let data = img.as_raw().iter().map(|&v| if v > 127 { 1.0 } else { 0.0 }).collect();
    Ok(Tensor::from_vec(Shape::new(1, size, size, 1), data)?)
}

pub fn load_sample(entry: &ManifestEntry, size: usize) -> Result<ImageSample> {
    let image = load_image(&entry.image, size)?;
    let mask = load_mask(&entry.mask, size)?;
    Ok(ImageSample::new(entry.id.clone(), image, mask)?)
}

pub fn load_dataset(root: &Path, size: usize) -> Result<Vec<ImageSample>> {
    scan_dataset(root)?.iter().map(|e| load_sample(e, size)).collect()
}

pub fn quantize(v: f32) -> u8 {
    (255.0 * v.clamp(0.0, 1.0)).round() as u8
}

/// Writes samples as `images/<id>.png` (8-bit RGB) and `masks/<id>.png` (0/255).
pub fn write_dataset(root: &Path, samples: &[ImageSample]) -> Result<()> {
    let (images, masks) = (root.join("images"), root.join("masks"));
    fs::create_dir_all(&images).with_context(|| format!("cannot create {}", images.display()))?;
    fs::create_dir_all(&masks).with_context(|| format!("cannot create {}", masks.display()))?;
    for s in samples {
        let (h, w) = s.size();
        let rgb: Vec<u8> = s.image.data().iter().map(|&v| quantize(v)).collect();
        let rgb = RgbImage::from_raw(w as u32, h as u32, rgb).expect("buffer matches size");
        let path = images.join(format!("{}.png", s.id));
        rgb.save(&path).with_context(|| format!("cannot write {}", path.display()))?;
        let m: Vec<u8> = s.mask.data().iter().map(|&v| if v > 0.5 { 255 } else { 0 }).collect();
        let m = GrayImage::from_raw(w as u32, h as u32, m).expect("buffer matches size");
        let path = masks.join(format!("{}.png", s.id));
        m.save(&path).with_context(|| format!("cannot write {}", path.display()))?;
    }
    Ok(())
}
