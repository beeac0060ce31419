//! Raster container, geo-referencing, bilinear resampling and mean-image
//! normalization shared by every stage of the pipeline.
//!
//! A [`Raster`] stores row-major `height x width x channels` scalars in
//! `[0, 1]`. Rasters produced by mean subtraction are flagged `centered`
//! and may hold values in `[-1, 1]` instead.

use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum RasterError {
    #[error("raster has zero pixels")]
    Empty,
    #[error("value {value} at index {index} outside the allowed range")]
    ValueOutOfRange { index: usize, value: f64 },
    #[error("{got} values do not fill {width}x{height}x{channels}")]
    LengthMismatch {
        got: usize,
        width: usize,
        height: usize,
        channels: usize,
    },
    #[error("shape mismatch: expected {expected:?}, got {got:?}")]
    ShapeMismatch {
        expected: (usize, usize, usize),
        got: (usize, usize, usize),
    },
    #[error("target dimension is zero")]
    ZeroTarget,
    #[error("target {0}x{1} is smaller than the source")]
    TargetSmallerThanSource(usize, usize),
    #[error("no patches given")]
    NoPatches,
    #[error("geo transform must have px_w > 0, px_h < 0 and a non-zero determinant")]
    InvalidGeoTransform,
    #[error("geo transform is singular")]
    SingularGeoTransform,
}

/// Affine mapping from pixel `(col, row)` to world `(lon, lat)` degrees.
///
/// Matches the six-parameter world-file model: no reprojection, the plane
/// is assumed to be WGS84 lon/lat directly.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GeoTransform {
    pub origin_lon: f64,
    pub origin_lat: f64,
    /// Degrees per pixel eastward, positive.
    pub px_w: f64,
    /// Degrees per pixel southward, negative.
    pub px_h: f64,
    pub skew_x: f64,
    pub skew_y: f64,
}

impl GeoTransform {
    pub fn new(
        origin_lon: f64,
        origin_lat: f64,
        px_w: f64,
        px_h: f64,
        skew_x: f64,
        skew_y: f64,
    ) -> Result<Self, RasterError> {
        let gt = GeoTransform {
            origin_lon,
            origin_lat,
            px_w,
            px_h,
            skew_x,
            skew_y,
        };
        if !(px_w > 0.0) || !(px_h < 0.0) || gt.determinant() == 0.0 {
            return Err(RasterError::InvalidGeoTransform);
        }
        Ok(gt)
    }

    /// North-up transform without skew.
    pub fn north_up(origin_lon: f64, origin_lat: f64, px_w: f64, px_h: f64) -> Result<Self, RasterError> {
        Self::new(origin_lon, origin_lat, px_w, px_h, 0.0, 0.0)
    }

    pub fn determinant(&self) -> f64 {
        self.px_w * self.px_h - self.skew_x * self.skew_y
    }

    /// Pixel `(col, row)` to world `(lon, lat)`. Pure affine; fractional
    /// pixel coordinates are fine.
    pub fn pixel_to_world(&self, col: f64, row: f64) -> (f64, f64) {
        let lon = self.origin_lon + col * self.px_w + row * self.skew_x;
        let lat = self.origin_lat + col * self.skew_y + row * self.px_h;
        (lon, lat)
    }

    /// Exact affine inverse of [`pixel_to_world`](Self::pixel_to_world).
    pub fn world_to_pixel(&self, lon: f64, lat: f64) -> Result<(f64, f64), RasterError> {
        let det = self.determinant();
        if det == 0.0 {
            return Err(RasterError::SingularGeoTransform);
        }
        let dlon = lon - self.origin_lon;
        let dlat = lat - self.origin_lat;
        let col = (self.px_h * dlon - self.skew_x * dlat) / det;
        let row = (self.px_w * dlat - self.skew_y * dlon) / det;
        Ok((col, row))
    }
}

/// H x W x C grid of scalars, row-major, channel-interleaved.
#[derive(Debug, Clone, PartialEq)]
pub struct Raster {
    width: usize,
    height: usize,
    channels: usize,
    values: Vec<f64>,
    pub geo: Option<GeoTransform>,
    centered: bool,
}

impl Raster {
    /// Builds a raster and checks the `[0, 1]` value invariant.
    pub fn new(width: usize, height: usize, channels: usize, values: Vec<f64>) -> Result<Self, RasterError> {
        Self::build(width, height, channels, values, false)
    }

    /// Builds a mean-subtracted raster; values may span `[-1, 1]`.
    pub fn new_centered(
        width: usize,
        height: usize,
        channels: usize,
        values: Vec<f64>,
    ) -> Result<Self, RasterError> {
        Self::build(width, height, channels, values, true)
    }

    fn build(
        width: usize,
        height: usize,
        channels: usize,
        values: Vec<f64>,
        centered: bool,
    ) -> Result<Self, RasterError> {
        if width == 0 || height == 0 || channels == 0 {
            return Err(RasterError::Empty);
        }
        if values.len() != width * height * channels {
            return Err(RasterError::LengthMismatch {
                got: values.len(),
                width,
                height,
                channels,
            });
        }
        let lo = if centered { -1.0 } else { 0.0 };
        for (index, &value) in values.iter().enumerate() {
            if !(value >= lo && value <= 1.0) {
                return Err(RasterError::ValueOutOfRange { index, value });
            }
        }
        Ok(Raster {
            width,
            height,
            channels,
            values,
            geo: None,
            centered,
        })
    }

    pub fn filled(width: usize, height: usize, channels: usize, value: f64) -> Result<Self, RasterError> {
        Self::new(width, height, channels, vec![value; width * height * channels])
    }

    pub fn with_geo(mut self, geo: GeoTransform) -> Self {
        self.geo = Some(geo);
        self
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        (self.width, self.height, self.channels)
    }

    pub fn is_centered(&self) -> bool {
        self.centered
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    #[inline]
    pub fn get(&self, col: usize, row: usize, channel: usize) -> f64 {
        debug_assert!(col < self.width && row < self.height && channel < self.channels);
        self.values[(row * self.width + col) * self.channels + channel]
    }

    #[inline]
    pub fn set(&mut self, col: usize, row: usize, channel: usize, value: f64) {
        debug_assert!(col < self.width && row < self.height && channel < self.channels);
        self.values[(row * self.width + col) * self.channels + channel] = value;
    }

    /// Copies the `size x size` window with top-left pixel `(col, row)`.
    pub fn crop(&self, col: usize, row: usize, size: usize) -> Result<Raster, RasterError> {
        if col + size > self.width || row + size > self.height {
            return Err(RasterError::ShapeMismatch {
                expected: (size, size, self.channels),
                got: (self.width - col, self.height - row, self.channels),
            });
        }
        let mut values = Vec::with_capacity(size * size * self.channels);
        for r in row..row + size {
            let start = (r * self.width + col) * self.channels;
            values.extend_from_slice(&self.values[start..start + size * self.channels]);
        }
        Self::build(size, size, self.channels, values, self.centered)
    }
}

/// Align-corners bilinear upsampling: source position for target index `t`
/// is `t * (src - 1) / (dst - 1)`, so corner pixels are copied verbatim and
/// every output value is a convex combination of at most four source values.
///
/// The geo transform, if any, is carried over unchanged; callers that need
/// the map re-referenced to the new grid must attach their own transform.
pub fn bilinear_upsample(src: &Raster, out_w: usize, out_h: usize) -> Result<Raster, RasterError> {
    if out_w == 0 || out_h == 0 {
        return Err(RasterError::ZeroTarget);
    }
    if out_w < src.width || out_h < src.height {
        return Err(RasterError::TargetSmallerThanSource(out_w, out_h));
    }
    let ch = src.channels;
    let mut values = vec![0.0; out_w * out_h * ch];
    let scale = |t: usize, dst: usize, s: usize| -> f64 {
        if dst <= 1 {
            0.0
        } else {
            t as f64 * (s - 1) as f64 / (dst - 1) as f64
        }
    };
    for oy in 0..out_h {
        let sy = scale(oy, out_h, src.height);
        let y0 = sy.floor() as usize;
        let y1 = (y0 + 1).min(src.height - 1);
        let fy = sy - y0 as f64;
        for ox in 0..out_w {
            let sx = scale(ox, out_w, src.width);
            let x0 = sx.floor() as usize;
            let x1 = (x0 + 1).min(src.width - 1);
            let fx = sx - x0 as f64;
            for c in 0..ch {
                let v00 = src.get(x0, y0, c);
                let v01 = src.get(x1, y0, c);
                let v10 = src.get(x0, y1, c);
                let v11 = src.get(x1, y1, c);
                let top = v00 + (v01 - v00) * fx;
                let bot = v10 + (v11 - v10) * fx;
                values[(oy * out_w + ox) * ch + c] = top + (bot - top) * fy;
            }
        }
    }
    let mut out = Raster::build(out_w, out_h, ch, values, src.centered)?;
    out.geo = src.geo;
    Ok(out)
}

/// Per-pixel, per-channel mean over a set of equally shaped patches.
#[derive(Debug, Clone, PartialEq)]
pub struct MeanImage {
    raster: Raster,
}

impl MeanImage {
    pub fn raster(&self) -> &Raster {
        &self.raster
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        self.raster.shape()
    }
}

/// Arithmetic mean of the given patches, pixel by pixel.
pub fn compute_mean_image(patches: &[Raster]) -> Result<MeanImage, RasterError> {
    let first = patches.first().ok_or(RasterError::NoPatches)?;
    let shape = first.shape();
    let mut acc = vec![0.0f64; first.values.len()];
    for patch in patches {
        if patch.shape() != shape {
            return Err(RasterError::ShapeMismatch {
                expected: shape,
                got: patch.shape(),
            });
        }
        for (a, v) in acc.iter_mut().zip(&patch.values) {
            *a += v;
        }
    }
    let n = patches.len() as f64;
    for a in acc.iter_mut() {
        *a /= n;
    }
    Ok(MeanImage {
        raster: Raster::new(shape.0, shape.1, shape.2, acc)?,
    })
}

/// `patch - mean`, flagged centered. Shapes must match exactly.
pub fn subtract_mean(patch: &Raster, mean: &MeanImage) -> Result<Raster, RasterError> {
    if patch.shape() != mean.raster.shape() {
        return Err(RasterError::ShapeMismatch {
            expected: mean.raster.shape(),
            got: patch.shape(),
        });
    }
    let values = patch
        .values
        .iter()
        .zip(&mean.raster.values)
        .map(|(p, m)| p - m)
        .collect();
    let mut out = Raster::build(patch.width, patch.height, patch.channels, values, true)?;
    out.geo = patch.geo;
    Ok(out)
}

/// Centers an area larger than one patch by subtracting the mean image at
/// every patch-sized tile position: pixel `(x, y)` gets
/// `mean(x mod mw, y mod mh)`.
pub fn subtract_mean_tiled(area: &Raster, mean: &MeanImage) -> Result<Raster, RasterError> {
    let (mw, mh, mc) = mean.raster.shape();
    if area.channels != mc {
        return Err(RasterError::ShapeMismatch {
            expected: (area.width, area.height, mc),
            got: area.shape(),
        });
    }
    let mut values = Vec::with_capacity(area.values.len());
    for y in 0..area.height {
        let my = y % mh;
        for x in 0..area.width {
            let mx = x % mw;
            for c in 0..mc {
                values.push(area.get(x, y, c) - mean.raster.get(mx, my, c));
            }
        }
    }
    let mut out = Raster::build(area.width, area.height, area.channels, values, true)?;
    out.geo = area.geo;
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_raster(rng: &mut ChaCha8Rng, w: usize, h: usize, c: usize) -> Raster {
        let values = (0..w * h * c).map(|_| rng.gen::<f64>()).collect();
        Raster::new(w, h, c, values).unwrap()
    }

    /// Closed-form align-corners bilinear sample, evaluated independently
    /// of the implementation's loop structure.
    fn bilinear_formula(src: &Raster, sx: f64, sy: f64, c: usize) -> f64 {
        let x0 = sx.floor();
        let y0 = sy.floor();
        let fx = sx - x0;
        let fy = sy - y0;
        let xi = x0 as usize;
        let yi = y0 as usize;
        let x1 = (xi + 1).min(src.width() - 1);
        let y1 = (yi + 1).min(src.height() - 1);
        (1.0 - fy) * ((1.0 - fx) * src.get(xi, yi, c) + fx * src.get(x1, yi, c))
            + fy * ((1.0 - fx) * src.get(xi, y1, c) + fx * src.get(x1, y1, c))
    }

    #[test]
    fn upsample_constant_map_stays_constant() {
        let src = Raster::filled(5, 4, 1, 0.7).unwrap();
        let out = bilinear_upsample(&src, 31, 17).unwrap();
        assert!(out.values().iter().all(|&v| (v - 0.7).abs() < 1e-12));
    }

    #[test]
    fn upsample_2x2_to_3x3_matches_hand_formula() {
        let src = Raster::new(2, 2, 1, vec![0.0, 1.0, 1.0, 0.0]).unwrap();
        let out = bilinear_upsample(&src, 3, 3).unwrap();
        let expected = [0.0, 0.5, 1.0, 0.5, 0.5, 0.5, 1.0, 0.5, 0.0];
        for (got, want) in out.values().iter().zip(expected) {
            assert!((got - want).abs() < 1e-12, "got {got}, want {want}");
        }
        // Same values from the closed-form formula at each target coordinate.
        for oy in 0..3 {
            for ox in 0..3 {
                let v = bilinear_formula(&src, ox as f64 * 0.5, oy as f64 * 0.5, 0);
                assert!((out.get(ox, oy, 0) - v).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn upsample_57_to_512_has_pipeline_shape() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let src = random_raster(&mut rng, 57, 57, 1);
        let out = bilinear_upsample(&src, 512, 512).unwrap();
        assert_eq!(out.shape(), (512, 512, 1));
        // Corner pixels are preserved by align-corners sampling.
        assert_eq!(out.get(0, 0, 0), src.get(0, 0, 0));
        assert_eq!(out.get(511, 511, 0), src.get(56, 56, 0));
    }

    #[test]
    fn upsample_same_size_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let src = random_raster(&mut rng, 9, 6, 3);
        let out = bilinear_upsample(&src, 9, 6).unwrap();
        assert_eq!(out, src);
    }

    #[test]
    fn upsample_matches_formula_on_random_maps() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..5 {
            let src = random_raster(&mut rng, 7, 5, 2);
            let out = bilinear_upsample(&src, 13, 19).unwrap();
            for oy in 0..19 {
                for ox in 0..13 {
                    let sx = ox as f64 * 6.0 / 12.0;
                    let sy = oy as f64 * 4.0 / 18.0;
                    for c in 0..2 {
                        let want = bilinear_formula(&src, sx, sy, c);
                        assert!((out.get(ox, oy, c) - want).abs() < 1e-12);
                    }
                }
            }
        }
    }

    #[test]
    fn upsample_rejects_bad_targets() {
        let src = Raster::filled(4, 4, 1, 0.2).unwrap();
        assert_eq!(bilinear_upsample(&src, 0, 8), Err(RasterError::ZeroTarget));
        assert_eq!(
            bilinear_upsample(&src, 3, 8),
            Err(RasterError::TargetSmallerThanSource(3, 8))
        );
    }

    #[test]
    fn raster_rejects_out_of_range_and_bad_lengths() {
        assert!(matches!(
            Raster::new(2, 2, 1, vec![0.0, 0.5, 1.0, 1.5]),
            Err(RasterError::ValueOutOfRange { index: 3, .. })
        ));
        assert!(matches!(
            Raster::new(2, 2, 1, vec![0.0; 5]),
            Err(RasterError::LengthMismatch { .. })
        ));
        assert_eq!(Raster::new(0, 2, 1, vec![]), Err(RasterError::Empty));
        // Centered rasters accept negatives down to -1.
        assert!(Raster::new_centered(1, 1, 1, vec![-0.75]).is_ok());
        assert!(Raster::new_centered(1, 1, 1, vec![-1.25]).is_err());
    }

    #[test]
    fn mean_of_zero_and_one_patches_is_half() {
        let a = Raster::filled(4, 4, 3, 0.0).unwrap();
        let b = Raster::filled(4, 4, 3, 1.0).unwrap();
        let mean = compute_mean_image(&[a, b]).unwrap();
        assert!(mean.raster().values().iter().all(|&v| v == 0.5));
    }

    #[test]
    fn mean_of_single_patch_is_the_patch() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let p = random_raster(&mut rng, 8, 8, 3);
        let mean = compute_mean_image(std::slice::from_ref(&p)).unwrap();
        assert_eq!(mean.raster(), &p);
    }

    #[test]
    fn mean_matches_accumulation_oracle_exactly() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let patches: Vec<Raster> = (0..100).map(|_| random_raster(&mut rng, 6, 6, 3)).collect();
        let mean = compute_mean_image(&patches).unwrap();
        // Independent oracle: plain per-pixel sum divided by the count.
        let n = patches.len();
        for idx in 0..6 * 6 * 3 {
            let mut sum = 0.0;
            for p in &patches {
                sum += p.values()[idx];
            }
            assert_eq!(mean.raster().values()[idx], sum / n as f64);
        }
    }

    #[test]
    fn mean_rejects_empty_and_mismatched_input() {
        assert_eq!(compute_mean_image(&[]), Err(RasterError::NoPatches));
        let a = Raster::filled(4, 4, 1, 0.1).unwrap();
        let b = Raster::filled(5, 4, 1, 0.1).unwrap();
        assert!(matches!(
            compute_mean_image(&[a, b]),
            Err(RasterError::ShapeMismatch { .. })
        ));
    }

    #[test]
    fn subtract_mean_centers_values() {
        let patch = Raster::filled(4, 4, 3, 1.0).unwrap();
        let mean = compute_mean_image(&[Raster::filled(4, 4, 3, 0.25).unwrap()]).unwrap();
        let out = subtract_mean(&patch, &mean).unwrap();
        assert!(out.is_centered());
        assert!(out.values().iter().all(|&v| v == 0.75));

        let zero = subtract_mean(mean.raster(), &mean).unwrap();
        assert!(zero.values().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn subtract_mean_matches_elementwise_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let patch = random_raster(&mut rng, 8, 8, 3);
        let mean = compute_mean_image(&[random_raster(&mut rng, 8, 8, 3)]).unwrap();
        let out = subtract_mean(&patch, &mean).unwrap();
        for idx in 0..patch.values().len() {
            assert_eq!(out.values()[idx], patch.values()[idx] - mean.raster().values()[idx]);
        }
        let small = Raster::filled(4, 4, 3, 0.5).unwrap();
        assert!(matches!(
            subtract_mean(&small, &mean),
            Err(RasterError::ShapeMismatch { .. })
        ));
    }

    #[test]
    fn subtract_mean_tiled_repeats_the_mean_image() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let area = random_raster(&mut rng, 10, 7, 2);
        let mean = compute_mean_image(&[random_raster(&mut rng, 4, 3, 2)]).unwrap();
        let out = subtract_mean_tiled(&area, &mean).unwrap();
        for y in 0..7 {
            for x in 0..10 {
                for c in 0..2 {
                    let want = area.get(x, y, c) - mean.raster().get(x % 4, y % 3, c);
                    assert_eq!(out.get(x, y, c), want);
                }
            }
        }
    }

    #[test]
    fn pixel_to_world_origin_and_hand_affine() {
        let gt = GeoTransform::north_up(70.0, 29.0, 0.001, -0.001).unwrap();
        assert_eq!(gt.pixel_to_world(0.0, 0.0), (70.0, 29.0));
        let (lon, lat) = gt.pixel_to_world(100.0, 50.0);
        assert!((lon - 70.1).abs() < 1e-12);
        assert!((lat - 28.95).abs() < 1e-12);
    }

    #[test]
    fn world_to_pixel_is_exact_inverse() {
        let gt = GeoTransform::new(70.0, 29.0, 0.001, -0.0015, 0.0002, -0.0001).unwrap();
        let (col, row) = gt.world_to_pixel(70.0, 29.0).unwrap();
        assert!(col.abs() < 1e-12 && row.abs() < 1e-12);

        let mut rng = ChaCha8Rng::seed_from_u64(33);
        for _ in 0..1000 {
            let c = rng.gen_range(-1000.0..1000.0);
            let r = rng.gen_range(-1000.0..1000.0);
            let (lon, lat) = gt.pixel_to_world(c, r);
            let (c2, r2) = gt.world_to_pixel(lon, lat).unwrap();
            assert!((c2 - c).abs() < 1e-9 && (r2 - r).abs() < 1e-9);

            // Explicit 2x2 matrix-inverse oracle.
            let det = gt.px_w * gt.px_h - gt.skew_x * gt.skew_y;
            let dlon = lon - gt.origin_lon;
            let dlat = lat - gt.origin_lat;
            let oc = (gt.px_h * dlon - gt.skew_x * dlat) / det;
            let or = (gt.px_w * dlat - gt.skew_y * dlon) / det;
            assert_eq!((c2, r2), (oc, or));
        }
    }

    #[test]
    fn geo_transform_validates_scales() {
        assert!(GeoTransform::north_up(0.0, 0.0, -0.001, -0.001).is_err());
        assert!(GeoTransform::north_up(0.0, 0.0, 0.001, 0.001).is_err());
        // Determinant zero: px_w*px_h == skew_x*skew_y.
        assert!(GeoTransform::new(0.0, 0.0, 0.001, -0.001, 0.001, -0.001).is_err());
    }

    #[test]
    fn crop_reads_the_expected_window() {
        let mut rng = ChaCha8Rng::seed_from_u64(41);
        let r = random_raster(&mut rng, 12, 9, 3);
        let c = r.crop(3, 2, 5).unwrap();
        assert_eq!(c.shape(), (5, 5, 3));
        for y in 0..5 {
            for x in 0..5 {
                for ch in 0..3 {
                    assert_eq!(c.get(x, y, ch), r.get(3 + x, 2 + y, ch));
                }
            }
        }
        assert!(r.crop(10, 0, 5).is_err());
    }
}
