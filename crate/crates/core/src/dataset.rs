//! Labeled 64x64 patch construction from (image, binary mask) pairs, the
//! dihedral jitter augmentation, and a seeded synthetic village-texture
//! corpus so the whole pipeline is testable without proprietary imagery.

use crate::raster::{Raster, RasterError};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum DatasetError {
    #[error("mask value {value} at index {index} is not binary")]
    NonBinaryMask { index: usize, value: f64 },
    #[error("image {image:?} and mask {mask:?} differ in pixel size")]
    ImageMaskMismatch {
        image: (usize, usize, usize),
        mask: (usize, usize, usize),
    },
    #[error("image {width}x{height} is smaller than one {crop}x{crop} crop")]
    ImageTooSmall {
        width: usize,
        height: usize,
        crop: usize,
    },
    #[error("invalid extraction config: {0}")]
    BadConfig(String),
    #[error(transparent)]
    Raster(#[from] RasterError),
}

/// Binary patch class; built structures are the positive class.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum PatchClass {
    NonBuilt = 0,
    Built = 1,
}

impl PatchClass {
    pub fn index(self) -> usize {
        self as usize
    }
}

/// Outcome of thresholding a mask crop. Crops whose built fraction falls
/// between the two thresholds belong to neither class and are dropped.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CropLabel {
    Built,
    NonBuilt,
    Discard,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledPatch {
    pub pixels: Raster,
    pub label: PatchClass,
    pub source_id: String,
    /// Top-left (col, row) of the original crop in the source image.
    pub origin: (usize, usize),
    pub augmented: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExtractionConfig {
    pub crop_size: usize,
    pub out_size: usize,
    pub pos_threshold: f64,
    pub neg_threshold: f64,
    pub patches_per_image: usize,
    pub rng_seed: u64,
}

impl Default for ExtractionConfig {
    fn default() -> Self {
        ExtractionConfig {
            crop_size: 128,
            out_size: 64,
            pos_threshold: 0.75,
            neg_threshold: 0.1,
            patches_per_image: 64,
            rng_seed: 0,
        }
    }
}

impl ExtractionConfig {
    pub fn validate(&self) -> Result<(), DatasetError> {
        if !(self.neg_threshold >= 0.0
            && self.neg_threshold < self.pos_threshold
            && self.pos_threshold <= 1.0)
        {
            return Err(DatasetError::BadConfig(format!(
                "thresholds must satisfy 0 <= neg < pos <= 1, got neg={} pos={}",
                self.neg_threshold, self.pos_threshold
            )));
        }
        if self.out_size == 0 || self.crop_size < self.out_size {
            return Err(DatasetError::BadConfig(format!(
                "crop_size {} must be >= out_size {} > 0",
                self.crop_size, self.out_size
            )));
        }
        if self.crop_size % self.out_size != 0 {
            return Err(DatasetError::BadConfig(format!(
                "crop_size {} must be an integer multiple of out_size {} for area averaging",
                self.crop_size, self.out_size
            )));
        }
        Ok(())
    }
}

/// Classifies one mask crop by its fraction of set pixels. The bounds are
/// strict: a fraction exactly at a threshold falls in the discard band.
pub fn label_from_mask(mask_crop: &Raster, cfg: &ExtractionConfig) -> Result<CropLabel, DatasetError> {
    cfg.validate()?;
    let mut ones = 0usize;
    for (index, &value) in mask_crop.values().iter().enumerate() {
        if value == 1.0 {
            ones += 1;
        } else if value != 0.0 {
            return Err(DatasetError::NonBinaryMask { index, value });
        }
    }
    let fraction = ones as f64 / mask_crop.values().len() as f64;
    Ok(if fraction > cfg.pos_threshold {
        CropLabel::Built
    } else if fraction < cfg.neg_threshold {
        CropLabel::NonBuilt
    } else {
        CropLabel::Discard
    })
}

/// Downsamples by an integer factor with exact area averaging: each output
/// pixel is the mean of its `factor x factor` source block.
pub fn area_downsample(src: &Raster, factor: usize) -> Result<Raster, RasterError> {
    if factor == 0 || src.width() % factor != 0 || src.height() % factor != 0 {
        return Err(RasterError::ShapeMismatch {
            expected: (src.width(), src.height(), src.channels()),
            got: (factor, factor, src.channels()),
        });
    }
    if factor == 1 {
        return Ok(src.clone());
    }
    let (w, h, ch) = (src.width() / factor, src.height() / factor, src.channels());
    let norm = 1.0 / (factor * factor) as f64;
    let mut values = vec![0.0; w * h * ch];
    for oy in 0..h {
        for ox in 0..w {
            for c in 0..ch {
                let mut sum = 0.0;
                for dy in 0..factor {
                    for dx in 0..factor {
                        sum += src.get(ox * factor + dx, oy * factor + dy, c);
                    }
                }
                values[(oy * w + ox) * ch + c] = sum * norm;
            }
        }
    }
    Raster::new(w, h, ch, values)
}

/// Extracts `patches_per_image` random crops, labels each against the mask
/// at crop resolution, drops the discard band, and area-averages survivors
/// down to `out_size`. Deterministic for a fixed `rng_seed`.
pub fn extract_patches(
    image: &Raster,
    mask: &Raster,
    source_id: &str,
    cfg: &ExtractionConfig,
) -> Result<Vec<LabeledPatch>, DatasetError> {
    cfg.validate()?;
    if image.width() != mask.width() || image.height() != mask.height() {
        return Err(DatasetError::ImageMaskMismatch {
            image: image.shape(),
            mask: mask.shape(),
        });
    }
    if image.width() < cfg.crop_size || image.height() < cfg.crop_size {
        return Err(DatasetError::ImageTooSmall {
            width: image.width(),
            height: image.height(),
            crop: cfg.crop_size,
        });
    }
    let factor = cfg.crop_size / cfg.out_size;
    let max_col = image.width() - cfg.crop_size;
    let max_row = image.height() - cfg.crop_size;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.rng_seed);
    let mut patches = Vec::new();
    for _ in 0..cfg.patches_per_image {
        let col = rng.gen_range(0..=max_col);
        let row = rng.gen_range(0..=max_row);
        let label = match label_from_mask(&mask.crop(col, row, cfg.crop_size)?, cfg)? {
            CropLabel::Built => PatchClass::Built,
            CropLabel::NonBuilt => PatchClass::NonBuilt,
            CropLabel::Discard => continue,
        };
        let pixels = area_downsample(&image.crop(col, row, cfg.crop_size)?, factor)?;
        patches.push(LabeledPatch {
            pixels,
            label,
            source_id: source_id.to_string(),
            origin: (col, row),
            augmented: false,
        });
    }
    Ok(patches)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Dihedral {
    Rot90,
    Rot180,
    Rot270,
    FlipH,
    FlipV,
    Transpose,
    AntiTranspose,
}

const AUGMENTATIONS: [Dihedral; 7] = [
    Dihedral::FlipH,
    Dihedral::FlipV,
    Dihedral::Rot90,
    Dihedral::Rot180,
    Dihedral::Rot270,
    Dihedral::Transpose,
    Dihedral::AntiTranspose,
];

fn transform_square(src: &Raster, op: Dihedral) -> Raster {
    let n = src.width();
    debug_assert_eq!(n, src.height());
    let ch = src.channels();
    let mut values = vec![0.0; n * n * ch];
    for y in 0..n {
        for x in 0..n {
            let (sx, sy) = match op {
                Dihedral::FlipH => (n - 1 - x, y),
                Dihedral::FlipV => (x, n - 1 - y),
                Dihedral::Rot90 => (y, n - 1 - x),
                Dihedral::Rot180 => (n - 1 - x, n - 1 - y),
                Dihedral::Rot270 => (n - 1 - y, x),
                Dihedral::Transpose => (y, x),
                Dihedral::AntiTranspose => (n - 1 - y, n - 1 - x),
            };
            for c in 0..ch {
                values[(y * n + x) * ch + c] = src.get(sx, sy, c);
            }
        }
    }
    Raster::new(n, n, ch, values).expect("transform preserves shape and range")
}

/// Returns the patch plus its seven dihedral copies (both axis flips, both
/// diagonal flips, and the three right-angle rotations). Labels and origins
/// are carried over unchanged; the copies are flagged augmented.
pub fn jitter(patch: &LabeledPatch) -> Vec<LabeledPatch> {
    let mut out = Vec::with_capacity(1 + AUGMENTATIONS.len());
    out.push(patch.clone());
    for &op in &AUGMENTATIONS {
        out.push(LabeledPatch {
            pixels: transform_square(&patch.pixels, op),
            label: patch.label,
            source_id: patch.source_id.clone(),
            origin: patch.origin,
            augmented: true,
        });
    }
    out
}

/// Parameters for the synthetic corpus generator. Blob radii are in pixels
/// and bound the footprint of one settlement; centers are placed so every
/// blob fits inside the frame.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticConfig {
    pub n_images: usize,
    pub size: usize,
    pub min_blobs: usize,
    pub max_blobs: usize,
    pub min_radius: f64,
    pub max_radius: f64,
    pub rng_seed: u64,
}

impl SyntheticConfig {
    pub fn for_size(n_images: usize, size: usize, rng_seed: u64) -> Self {
        SyntheticConfig {
            n_images,
            size,
            min_blobs: 1,
            max_blobs: 3,
            min_radius: 0.16 * size as f64,
            max_radius: 0.26 * size as f64,
            rng_seed,
        }
    }

    /// Satellite discs extend the footprint beyond the main radius.
    pub fn footprint_radius(radius: f64) -> f64 {
        radius * 1.05
    }
}

struct Disc {
    cx: f64,
    cy: f64,
    r: f64,
}

/// Generates `(image, mask)` pairs: lumpy high-contrast "rooftop" texture
/// blobs on a smooth ground background, with the mask set exactly on blob
/// pixels. Bit-deterministic per seed.
pub fn generate_synthetic_corpus(n_images: usize, size: usize, rng_seed: u64) -> Vec<(Raster, Raster)> {
    generate_synthetic_corpus_with(&SyntheticConfig::for_size(n_images, size, rng_seed))
}

pub fn generate_synthetic_corpus_with(cfg: &SyntheticConfig) -> Vec<(Raster, Raster)> {
    (0..cfg.n_images)
        .map(|i| synthetic_pair(cfg, i))
        .collect()
}

fn synthetic_pair(cfg: &SyntheticConfig, index: usize) -> (Raster, Raster) {
    let size = cfg.size;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.rng_seed ^ (0x9e37_79b9_7f4a_7c15u64.wrapping_mul(index as u64 + 1)));

    let mut discs: Vec<Disc> = Vec::new();
    if cfg.max_blobs > 0 {
        let n_blobs = rng.gen_range(cfg.min_blobs.max(1)..=cfg.max_blobs);
        for _ in 0..n_blobs {
            let r = rng.gen_range(cfg.min_radius..=cfg.max_radius);
            let margin = SyntheticConfig::footprint_radius(r).ceil() + 1.0;
            if 2.0 * margin >= size as f64 {
                continue;
            }
            let cx = rng.gen_range(margin..size as f64 - margin);
            let cy = rng.gen_range(margin..size as f64 - margin);
            discs.push(Disc { cx, cy, r });
            // A few satellite discs make the outline lumpy while keeping
            // the union connected and hole-free.
            for _ in 0..3 {
                let angle = rng.gen_range(0.0..std::f64::consts::TAU);
                let dist = 0.6 * r;
                discs.push(Disc {
                    cx: cx + dist * angle.cos(),
                    cy: cy + dist * angle.sin(),
                    r: 0.45 * r,
                });
            }
        }
    }

    // Low-frequency ground undulation parameters.
    let kx = rng.gen_range(1.0..3.0);
    let ky = rng.gen_range(1.0..3.0);
    let phase_x = rng.gen_range(0.0..std::f64::consts::TAU);
    let phase_y = rng.gen_range(0.0..std::f64::consts::TAU);
    let texture_salt: u64 = rng.gen();

    let mut image = vec![0.0f64; size * size * 3];
    let mut mask = vec![0.0f64; size * size];
    let tau = std::f64::consts::TAU;
    for y in 0..size {
        for x in 0..size {
            let inside = discs.iter().any(|d| {
                let dx = x as f64 - d.cx;
                let dy = y as f64 - d.cy;
                dx * dx + dy * dy <= d.r * d.r
            });
            let idx = (y * size + x) * 3;
            if inside {
                mask[y * size + x] = 1.0;
                // 5 px "house" cells: mostly bright rooftops with dark
                // gaps, high contrast at a scale that survives the 2x
                // area-average down to training resolution.
                let h = pixel_hash(texture_salt, x / 5, y / 5);
                let bright = h % 5 != 0;
                let tone = if bright {
                    0.72 + 0.2 * unit(h >> 8)
                } else {
                    0.12 + 0.1 * unit(h >> 8)
                };
                let speck = 0.04 * (unit(pixel_hash(texture_salt, x, y)) - 0.5);
                let v = (tone + speck).clamp(0.0, 1.0);
                image[idx] = (v + 0.03).min(1.0);
                image[idx + 1] = v;
                image[idx + 2] = (v - 0.03).max(0.0);
            } else {
                let u = x as f64 / size as f64;
                let v = y as f64 / size as f64;
                let undulation = 0.06
                    * (tau * kx * u + phase_x).sin()
                    * (tau * ky * v + phase_y).sin();
                let grain = 0.01 * (unit(pixel_hash(texture_salt, x, y)) - 0.5);
                let g = (0.5 + undulation + grain).clamp(0.0, 1.0);
                image[idx] = (g + 0.02).min(1.0);
                image[idx + 1] = g;
                image[idx + 2] = (g - 0.04).max(0.0);
            }
        }
    }
    (
        Raster::new(size, size, 3, image).expect("synthetic image in range"),
        Raster::new(size, size, 1, mask).expect("synthetic mask binary"),
    )
}

fn pixel_hash(salt: u64, x: usize, y: usize) -> u64 {
    let mut h = salt ^ (x as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15);
    h ^= (y as u64).wrapping_mul(0xc2b2_ae3d_27d4_eb4f);
    h = h.wrapping_mul(0xff51_afd7_ed55_8ccd);
    h ^= h >> 33;
    h = h.wrapping_mul(0xc4ce_b9fe_1a85_ec53);
    h ^ (h >> 33)
}

fn unit(h: u64) -> f64 {
    (h & 0xffff_ffff) as f64 / u32::MAX as f64
}
