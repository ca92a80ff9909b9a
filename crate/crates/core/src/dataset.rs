//! Labeled segmentation datasets and their on-disk layout.
//!
//! ```text
//! root/manifest.json   num_classes, class_names, color_map (+ optional generator echo)
//! root/images/*.png    8-bit RGB (or grayscale) images
//! root/masks/*.png     8-bit single-channel masks, pixel value = class index
//! ```
//!
//! Images and masks are paired by filename stem, which is also the sample id.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};

use image::{DynamicImage, GrayImage, RgbImage};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::tensor::{Image, Mask, SampleId, TensorError};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const IMAGES_DIR: &str = "images";
pub const MASKS_DIR: &str = "masks";

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("no samples found in {0}")]
    NoSamples(PathBuf),
    #[error("missing mask for image {0}")]
    MissingMask(String),
    #[error("missing image for mask {0}")]
    MissingImage(String),
    #[error("label out of range in {file}: label {label} with num_classes={num_classes}")]
    LabelOutOfRange {
        file: String,
        label: u8,
        num_classes: usize,
    },
    #[error("dimension mismatch in {file}: {detail}")]
    DimensionMismatch { file: String, detail: String },
    #[error("duplicate sample id {0}")]
    DuplicateId(SampleId),
    #[error("invalid manifest: {0}")]
    Manifest(String),
    #[error("unsupported image format in {file}: {detail}")]
    Format { file: String, detail: String },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Image {
        path: PathBuf,
        #[source]
        source: image::ImageError,
    },
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> DatasetError + '_ {
    move |source| DatasetError::Io {
        path: path.to_path_buf(),
        source,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub image: Image,
    pub mask: Mask,
}

impl Sample {
    pub fn id(&self) -> &SampleId {
        self.image.id()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub num_classes: usize,
    pub class_names: Vec<String>,
    #[serde(default)]
    pub color_map: Vec<[u8; 3]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub generator: Option<serde_json::Value>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    samples: Vec<Sample>,
    num_classes: usize,
    class_names: Vec<String>,
    color_map: Vec<[u8; 3]>,
    generator: Option<serde_json::Value>,
}

impl Dataset {
    /// Validates and sorts the samples by id.
    pub fn new(
        mut samples: Vec<Sample>,
        num_classes: usize,
        class_names: Vec<String>,
    ) -> Result<Self, DatasetError> {
        if num_classes == 0 || num_classes > 256 {
            return Err(DatasetError::Manifest(format!(
                "num_classes must be in 1..=256, got {num_classes}"
            )));
        }
        if class_names.len() != num_classes {
            return Err(DatasetError::Manifest(format!(
                "{} class names for {num_classes} classes",
                class_names.len()
            )));
        }
        samples.sort_by(|a, b| a.id().cmp(b.id()));
        for pair in samples.windows(2) {
            if pair[0].id() == pair[1].id() {
                return Err(DatasetError::DuplicateId(pair[0].id().clone()));
            }
        }
        for s in &samples {
            check_pair(&s.image, &s.mask, num_classes, s.id().as_str())?;
        }
        Ok(Dataset {
            samples,
            num_classes,
            class_names,
            color_map: default_color_map(num_classes),
            generator: None,
        })
    }

    pub fn with_color_map(mut self, color_map: Vec<[u8; 3]>) -> Result<Self, DatasetError> {
        if color_map.len() != self.num_classes {
            return Err(DatasetError::Manifest(format!(
                "{} colors for {} classes",
                color_map.len(),
                self.num_classes
            )));
        }
        self.color_map = color_map;
        Ok(self)
    }

    pub fn with_generator(mut self, generator: serde_json::Value) -> Self {
        self.generator = Some(generator);
        self
    }

    pub fn samples(&self) -> &[Sample] {
        &self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn class_names(&self) -> &[String] {
        &self.class_names
    }

    pub fn color_map(&self) -> &[[u8; 3]] {
        &self.color_map
    }

    pub fn generator(&self) -> Option<&serde_json::Value> {
        self.generator.as_ref()
    }

    pub fn ids(&self) -> impl Iterator<Item = &SampleId> {
        self.samples.iter().map(Sample::id)
    }

    pub fn get(&self, id: &SampleId) -> Option<&Sample> {
        self.samples
            .binary_search_by(|s| s.id().cmp(id))
            .ok()
            .map(|i| &self.samples[i])
    }

    pub fn manifest(&self) -> Manifest {
        Manifest {
            num_classes: self.num_classes,
            class_names: self.class_names.clone(),
            color_map: self.color_map.clone(),
            generator: self.generator.clone(),
        }
    }
}

fn check_pair(
    image: &Image,
    mask: &Mask,
    num_classes: usize,
    file: &str,
) -> Result<(), DatasetError> {
    if image.id() != mask.id() {
        return Err(DatasetError::DimensionMismatch {
            file: file.to_owned(),
            detail: format!("image id {} paired with mask id {}", image.id(), mask.id()),
        });
    }
    if image.height() != mask.height() || image.width() != mask.width() {
        return Err(DatasetError::DimensionMismatch {
            file: file.to_owned(),
            detail: format!(
                "image is {}x{}, mask is {}x{}",
                image.height(),
                image.width(),
                mask.height(),
                mask.width()
            ),
        });
    }
    if let Err(TensorError::LabelRange { label, .. }) = mask.validate_classes(num_classes) {
        return Err(DatasetError::LabelOutOfRange {
            file: file.to_owned(),
            label,
            num_classes,
        });
    }
    Ok(())
}

/// Evenly spread display colors, one per class.
pub fn default_color_map(num_classes: usize) -> Vec<[u8; 3]> {
    (0..num_classes)
        .map(|k| {
            let h = k as f64 / num_classes.max(1) as f64;
            let (r, g, b) = hsv_to_rgb(h, 0.75, 0.9);
            [r, g, b]
        })
        .collect()
}

fn hsv_to_rgb(h: f64, s: f64, v: f64) -> (u8, u8, u8) {
    let i = (h * 6.0).floor();
    let f = h * 6.0 - i;
    let p = v * (1.0 - s);
    let q = v * (1.0 - f * s);
    let t = v * (1.0 - (1.0 - f) * s);
    let (r, g, b) = match (i as i64).rem_euclid(6) {
        0 => (v, t, p),
        1 => (q, v, p),
        2 => (p, v, t),
        3 => (p, q, v),
        4 => (t, p, v),
        _ => (v, p, q),
    };
    let to = |c: f64| (c * 255.0).round() as u8;
    (to(r), to(g), to(b))
}

/// Encodes an image as an 8-bit PNG (grayscale for one channel, RGB for
/// three).
pub fn encode_image_png(image: &Image) -> Result<Vec<u8>, DatasetError> {
    let raw = image.to_u8();
    let (w, h) = (image.width() as u32, image.height() as u32);
    let dynamic = match image.channels() {
        1 => DynamicImage::ImageLuma8(GrayImage::from_raw(w, h, raw).expect("buffer size")),
        3 => DynamicImage::ImageRgb8(RgbImage::from_raw(w, h, raw).expect("buffer size")),
        c => {
            return Err(DatasetError::Format {
                file: image.id().to_string(),
                detail: format!("{c} channels cannot be stored as PNG"),
            })
        }
    };
    encode_png(&dynamic)
}

pub fn encode_mask_png(mask: &Mask) -> Result<Vec<u8>, DatasetError> {
    let gray = GrayImage::from_raw(
        mask.width() as u32,
        mask.height() as u32,
        mask.labels().to_vec(),
    )
    .expect("buffer size");
    encode_png(&DynamicImage::ImageLuma8(gray))
}

/// Encodes an 8-bit single-channel raster (row-major) as PNG.
pub fn encode_gray_png(width: usize, height: usize, data: Vec<u8>) -> Result<Vec<u8>, DatasetError> {
    let gray = GrayImage::from_raw(width as u32, height as u32, data).ok_or_else(|| {
        DatasetError::Format {
            file: "<buffer>".into(),
            detail: "buffer does not match dimensions".into(),
        }
    })?;
    encode_png(&DynamicImage::ImageLuma8(gray))
}

fn encode_png(img: &DynamicImage) -> Result<Vec<u8>, DatasetError> {
    let mut out = std::io::Cursor::new(Vec::new());
    img.write_to(&mut out, image::ImageFormat::Png)
        .map_err(|source| DatasetError::Image {
            path: PathBuf::from("<memory>"),
            source,
        })?;
    Ok(out.into_inner())
}

/// Decodes a single-channel 8-bit PNG into a mask.
pub fn decode_mask_png(id: SampleId, bytes: &[u8]) -> Result<Mask, DatasetError> {
    let img = image::load_from_memory_with_format(bytes, image::ImageFormat::Png).map_err(
        |source| DatasetError::Image {
            path: PathBuf::from(id.as_str()),
            source,
        },
    )?;
    mask_from_dynamic(id, img)
}

fn mask_from_dynamic(id: SampleId, img: DynamicImage) -> Result<Mask, DatasetError> {
    match img {
        DynamicImage::ImageLuma8(gray) => {
            let (w, h) = gray.dimensions();
            Ok(Mask::new(id, h as usize, w as usize, gray.into_raw())?)
        }
        other => Err(DatasetError::Format {
            file: id.to_string(),
            detail: format!("mask must be 8-bit single channel, got {:?}", other.color()),
        }),
    }
}

fn image_from_dynamic(id: SampleId, img: DynamicImage) -> Result<Image, DatasetError> {
    match img {
        DynamicImage::ImageLuma8(gray) => {
            let (w, h) = gray.dimensions();
            Ok(Image::from_u8(id, h as usize, w as usize, 1, gray.as_raw())?)
        }
        DynamicImage::ImageRgb8(rgb) => {
            let (w, h) = rgb.dimensions();
            Ok(Image::from_u8(id, h as usize, w as usize, 3, rgb.as_raw())?)
        }
        other => Err(DatasetError::Format {
            file: id.to_string(),
            detail: format!("image must be 8-bit RGB or grayscale, got {:?}", other.color()),
        }),
    }
}

fn png_stems(dir: &Path) -> Result<BTreeMap<String, PathBuf>, DatasetError> {
    let mut out = BTreeMap::new();
    if !dir.is_dir() {
        return Ok(out);
    }
    for entry in fs::read_dir(dir).map_err(io_err(dir))? {
        let path = entry.map_err(io_err(dir))?.path();
        if path.extension().and_then(|e| e.to_str()) == Some("png") {
            if let Some(stem) = path.file_stem().and_then(|s| s.to_str()) {
                out.insert(stem.to_owned(), path.clone());
            }
        }
    }
    Ok(out)
}

fn open_png(path: &Path) -> Result<DynamicImage, DatasetError> {
    let bytes = fs::read(path).map_err(io_err(path))?;
    image::load_from_memory_with_format(&bytes, image::ImageFormat::Png).map_err(|source| {
        DatasetError::Image {
            path: path.to_path_buf(),
            source,
        }
    })
}

pub fn read_manifest(root: &Path) -> Result<Manifest, DatasetError> {
    let path = root.join(MANIFEST_FILE);
    let text = fs::read_to_string(&path).map_err(io_err(&path))?;
    serde_json::from_str(&text).map_err(|e| DatasetError::Manifest(format!("{}: {e}", path.display())))
}

/// Loads a dataset directory. Samples are ordered by filename stem.
pub fn load_dataset(root: &Path) -> Result<Dataset, DatasetError> {
    let images = png_stems(&root.join(IMAGES_DIR))?;
    let masks = png_stems(&root.join(MASKS_DIR))?;
    if images.is_empty() && masks.is_empty() {
        return Err(DatasetError::NoSamples(root.to_path_buf()));
    }
    let manifest = read_manifest(root)?;

    for stem in masks.keys() {
        if !images.contains_key(stem) {
            return Err(DatasetError::MissingImage(format!("{stem}.png")));
        }
    }
    let mut samples = Vec::with_capacity(images.len());
    for (stem, image_path) in &images {
        let file = format!("{stem}.png");
        let mask_path = masks
            .get(stem)
            .ok_or_else(|| DatasetError::MissingMask(file.clone()))?;
        let id = SampleId::new(stem.clone());
        let image = image_from_dynamic(id.clone(), open_png(image_path)?)?;
        let mask = mask_from_dynamic(id, open_png(mask_path)?)?;
        check_pair(&image, &mask, manifest.num_classes, &file)?;
        samples.push(Sample { image, mask });
    }

    let mut ds = Dataset::new(samples, manifest.num_classes, manifest.class_names)?;
    if !manifest.color_map.is_empty() {
        ds = ds.with_color_map(manifest.color_map)?;
    }
    ds.generator = manifest.generator;
    Ok(ds)
}

/// Writes a dataset directory readable by [`load_dataset`]. Image values are
/// quantized to 8 bits.
pub fn write_dataset(ds: &Dataset, root: &Path) -> Result<(), DatasetError> {
    let mut seen = BTreeSet::new();
    for s in ds.samples() {
        if !seen.insert(s.id()) {
            return Err(DatasetError::DuplicateId(s.id().clone()));
        }
    }
    let images_dir = root.join(IMAGES_DIR);
    let masks_dir = root.join(MASKS_DIR);
    fs::create_dir_all(&images_dir).map_err(io_err(&images_dir))?;
    fs::create_dir_all(&masks_dir).map_err(io_err(&masks_dir))?;

    let manifest_path = root.join(MANIFEST_FILE);
    let manifest = serde_json::to_string_pretty(&ds.manifest())
        .map_err(|e| DatasetError::Manifest(e.to_string()))?;
    fs::write(&manifest_path, manifest).map_err(io_err(&manifest_path))?;

    for s in ds.samples() {
        let name = format!("{}.png", s.id());
        let p = images_dir.join(&name);
        fs::write(&p, encode_image_png(&s.image)?).map_err(io_err(&p))?;
        let p = masks_dir.join(&name);
        fs::write(&p, encode_mask_png(&s.mask)?).map_err(io_err(&p))?;
    }
    Ok(())
}
