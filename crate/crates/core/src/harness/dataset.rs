use std::path::Path;

use candle_core::Tensor;
use image::imageops::FilterType;
use image::{GrayImage, Luma};

use crate::error::{Error, Result};
use crate::field::DEVICE;

const EXTENSIONS: [&str; 3] = ["png", "pgm", "pnm"];

/// Images loaded from a directory, named by file stem.
#[derive(Clone, Debug)]
pub struct Dataset {
    pub images: Vec<(String, Tensor)>,
    /// Files that looked like images but could not be decoded.
    pub skipped: usize,
}

impl Dataset {
    pub fn tensors(&self) -> Vec<Tensor> {
        self.images.iter().map(|(_, t)| t.clone()).collect()
    }

    pub fn ids(&self) -> Vec<String> {
        self.images.iter().map(|(n, _)| n.clone()).collect()
    }
}

/// Loads every image under `dir` (non-recursive, sorted by file name) as
/// grayscale in `[0, 1]`, center-cropped to a square and resized to
/// `size × size` when `size` is given.
pub fn ingest_dataset(dir: &Path, size: Option<usize>) -> Result<Dataset> {
    let mut paths: Vec<_> = std::fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.is_file()
                && p.extension()
                    .and_then(|e| e.to_str())
                    .is_some_and(|e| EXTENSIONS.contains(&e.to_ascii_lowercase().as_str()))
        })
        .collect();
    paths.sort();
    let mut images = Vec::with_capacity(paths.len());
    let mut skipped = 0;
    for p in &paths {
        match load_image(p, size) {
            Ok(item) => images.push(item),
            Err(e) => {
                log::warn!("skipping {}: {e}", p.display());
                skipped += 1;
            }
        }
    }
    if images.is_empty() {
        return Err(Error::invalid(format!("no readable images in {}", dir.display())));
    }
    Ok(Dataset { images, skipped })
}

/// Loads one image the way [`ingest_dataset`] does, named by file stem.
pub fn load_image(path: &Path, size: Option<usize>) -> Result<(String, Tensor)> {
    let img = image::open(path)?;
    let id = path.file_stem().and_then(|s| s.to_str()).unwrap_or("image").to_string();
    Ok((id, to_tensor(&prepare(img.to_luma8(), size))?))
}

fn prepare(img: GrayImage, size: Option<usize>) -> GrayImage {
    let Some(size) = size else {
        return img;
    };
    let (w, h) = img.dimensions();
    let side = w.min(h);
    let cropped = image::imageops::crop_imm(&img, (w - side) / 2, (h - side) / 2, side, side).to_image();
    if side as usize == size {
        cropped
    } else {
        image::imageops::resize(&cropped, size as u32, size as u32, FilterType::Triangle)
    }
}

fn to_tensor(img: &GrayImage) -> Result<Tensor> {
    let (w, h) = img.dimensions();
    let data: Vec<f64> = img.pixels().map(|p| p.0[0] as f64 / 255.0).collect();
    Ok(Tensor::from_vec(data, (h as usize, w as usize), &DEVICE)?)
}

/// Writes an `[H, W]` tensor in `[0, 1]` as an 8-bit PNG.
pub fn write_png(image: &Tensor, path: &Path) -> Result<()> {
    let (h, w) = image.dims2()?;
    let values = image.flatten_all()?.to_vec1::<f64>()?;
    let mut out = GrayImage::new(w as u32, h as u32);
    for (i, v) in values.iter().enumerate() {
        let px = (v.clamp(0.0, 1.0) * 255.0).round() as u8;
        out.put_pixel((i % w) as u32, (i / w) as u32, Luma([px]));
    }
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)?;
    }
    out.save(path)?;
    Ok(())
}
