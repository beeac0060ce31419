//! Probability map to polygon post-processing: thresholding, morphological
//! cleanup, 8-connected component labeling, outer-contour tracing at pixel
//! corners, ring simplification, and the probability heat grid.

use crate::raster::Raster;
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum VectorizeError {
    #[error("expected a single-channel raster, got {0} channels")]
    MultiChannel(usize),
    #[error("structuring element is empty")]
    EmptyStructuringElement,
    #[error("heat cell size must be at least 1 pixel")]
    ZeroCellSize,
    #[error("component {0} has no pixels")]
    EmptyRegion(u32),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BinaryMask {
    width: usize,
    height: usize,
    bits: Vec<bool>,
}

impl BinaryMask {
    pub fn new(width: usize, height: usize) -> BinaryMask {
        BinaryMask {
            width,
            height,
            bits: vec![false; width * height],
        }
    }

    pub fn from_fn(width: usize, height: usize, f: impl Fn(usize, usize) -> bool) -> BinaryMask {
        let mut mask = BinaryMask::new(width, height);
        for y in 0..height {
            for x in 0..width {
                mask.bits[y * width + x] = f(x, y);
            }
        }
        mask
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    /// Out-of-frame coordinates read as background.
    #[inline]
    pub fn get(&self, x: isize, y: isize) -> bool {
        if x < 0 || y < 0 || x >= self.width as isize || y >= self.height as isize {
            false
        } else {
            self.bits[y as usize * self.width + x as usize]
        }
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, v: bool) {
        self.bits[y * self.width + x] = v;
    }

    pub fn count_ones(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }
}

/// Offsets (dx, dy) of a flat structuring element.
#[derive(Debug, Clone, PartialEq)]
pub struct StructuringElement {
    offsets: Vec<(i32, i32)>,
}

impl StructuringElement {
    /// Centered odd square, e.g. `square(3)` for the default 3x3 element.
    pub fn square(side: usize) -> StructuringElement {
        let half = (side / 2) as i32;
        let mut offsets = Vec::with_capacity(side * side);
        for dy in -half..=half {
            for dx in -half..=half {
                offsets.push((dx, dy));
            }
        }
        StructuringElement { offsets }
    }

    pub fn square3() -> StructuringElement {
        Self::square(3)
    }

    fn check(&self) -> Result<(), VectorizeError> {
        if self.offsets.is_empty() {
            Err(VectorizeError::EmptyStructuringElement)
        } else {
            Ok(())
        }
    }
}

/// Bit is set wherever the probability is greater than or equal to `tau`
/// (the threshold itself maps to 1).
pub fn binarize(prob: &Raster, tau: f64) -> Result<BinaryMask, VectorizeError> {
    if prob.channels() != 1 {
        return Err(VectorizeError::MultiChannel(prob.channels()));
    }
    let mut mask = BinaryMask::new(prob.width(), prob.height());
    for (i, &v) in prob.values().iter().enumerate() {
        mask.bits[i] = v >= tau;
    }
    Ok(mask)
}

/// Minkowski dilation with zero padding outside the frame.
pub fn dilate(mask: &BinaryMask, se: &StructuringElement) -> Result<BinaryMask, VectorizeError> {
    se.check()?;
    let mut out = BinaryMask::new(mask.width, mask.height);
    for y in 0..mask.height as isize {
        for x in 0..mask.width as isize {
            let hit = se
                .offsets
                .iter()
                .any(|&(dx, dy)| mask.get(x - dx as isize, y - dy as isize));
            out.bits[y as usize * mask.width + x as usize] = hit;
        }
    }
    Ok(out)
}

/// Minkowski erosion with zero padding, so the frame border always erodes.
pub fn erode(mask: &BinaryMask, se: &StructuringElement) -> Result<BinaryMask, VectorizeError> {
    se.check()?;
    let mut out = BinaryMask::new(mask.width, mask.height);
    for y in 0..mask.height as isize {
        for x in 0..mask.width as isize {
            let all = se
                .offsets
                .iter()
                .all(|&(dx, dy)| mask.get(x + dx as isize, y + dy as isize));
            out.bits[y as usize * mask.width + x as usize] = all;
        }
    }
    Ok(out)
}

pub fn open(mask: &BinaryMask, se: &StructuringElement) -> Result<BinaryMask, VectorizeError> {
    dilate(&erode(mask, se)?, se)
}

pub fn close(mask: &BinaryMask, se: &StructuringElement) -> Result<BinaryMask, VectorizeError> {
    erode(&dilate(mask, se)?, se)
}

/// Salt-and-pepper cleanup before polygon fitting: one opening (removes
/// speckles) followed by one closing (fills small holes), 3x3 square.
pub fn clean(mask: &BinaryMask) -> BinaryMask {
    clean_with(mask, &StructuringElement::square3(), 1).expect("default element is non-empty")
}

pub fn clean_with(
    mask: &BinaryMask,
    se: &StructuringElement,
    iterations: usize,
) -> Result<BinaryMask, VectorizeError> {
    se.check()?;
    let mut m = mask.clone();
    for _ in 0..iterations {
        m = erode(&m, se)?;
    }
    for _ in 0..iterations {
        m = dilate(&m, se)?;
    }
    for _ in 0..iterations {
        m = dilate(&m, se)?;
    }
    for _ in 0..iterations {
        m = erode(&m, se)?;
    }
    Ok(m)
}

/// Dense component labels: 0 is background, set pixels carry 1..=count.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Labels {
    width: usize,
    height: usize,
    labels: Vec<u32>,
    count: u32,
}

impl Labels {
    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn count(&self) -> u32 {
        self.count
    }

    #[inline]
    pub fn get(&self, x: isize, y: isize) -> u32 {
        if x < 0 || y < 0 || x >= self.width as isize || y >= self.height as isize {
            0
        } else {
            self.labels[y as usize * self.width + x as usize]
        }
    }

    pub fn component_pixels(&self, id: u32) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        for y in 0..self.height {
            for x in 0..self.width {
                if self.labels[y * self.width + x] == id {
                    out.push((x, y));
                }
            }
        }
        out
    }

    pub fn raw(&self) -> &[u32] {
        &self.labels
    }
}

/// 8-connected component labeling. Labels are assigned in raster-scan
/// order of each component's first pixel, so the result is deterministic.
pub fn connected_components(mask: &BinaryMask) -> Labels {
    let (w, h) = (mask.width, mask.height);
    let mut labels = vec![0u32; w * h];
    let mut count = 0u32;
    let mut stack = Vec::new();
    for start_y in 0..h {
        for start_x in 0..w {
            let idx = start_y * w + start_x;
            if !mask.bits[idx] || labels[idx] != 0 {
                continue;
            }
            count += 1;
            labels[idx] = count;
            stack.push((start_x, start_y));
            while let Some((x, y)) = stack.pop() {
                for dy in -1i32..=1 {
                    for dx in -1i32..=1 {
                        if dx == 0 && dy == 0 {
                            continue;
                        }
                        let nx = x as i32 + dx;
                        let ny = y as i32 + dy;
                        if nx < 0 || ny < 0 || nx >= w as i32 || ny >= h as i32 {
                            continue;
                        }
                        let nidx = ny as usize * w + nx as usize;
                        if mask.bits[nidx] && labels[nidx] == 0 {
                            labels[nidx] = count;
                            stack.push((nx as usize, ny as usize));
                        }
                    }
                }
            }
        }
    }
    Labels {
        width: w,
        height: h,
        labels,
        count,
    }
}

/// Closed outer ring of one component, vertices at pixel corners, stored
/// without the closing repeat. Positive shoelace area by construction.
#[derive(Debug, Clone, PartialEq)]
pub struct PixelPolygon {
    pub ring: Vec<(f64, f64)>,
    pub component_id: u32,
}

impl PixelPolygon {
    pub fn signed_area(&self) -> f64 {
        signed_area(&self.ring)
    }
}

pub fn signed_area(ring: &[(f64, f64)]) -> f64 {
    let n = ring.len();
    let mut acc = 0.0;
    for i in 0..n {
        let (x0, y0) = ring[i];
        let (x1, y1) = ring[(i + 1) % n];
        acc += x0 * y1 - x1 * y0;
    }
    acc / 2.0
}

const EAST: u8 = 0;
const SOUTH: u8 = 1;
const WEST: u8 = 2;

fn step(v: (i64, i64), d: u8) -> (i64, i64) {
    match d {
        EAST => (v.0 + 1, v.1),
        SOUTH => (v.0, v.1 + 1),
        WEST => (v.0 - 1, v.1),
        _ => (v.0, v.1 - 1),
    }
}

/// Traces the outer boundary of the component along pixel cracks, keeping
/// the region on the right of the walk. The left-turn preference at
/// pinch vertices keeps diagonally connected parts on one closed walk,
/// matching the 8-connected labeling; hole boundaries are ignored.
pub fn trace_polygon(labels: &Labels, id: u32) -> Result<PixelPolygon, VectorizeError> {
    // Topmost-leftmost pixel; its top-left corner starts the walk eastward.
    let mut start_pixel = None;
    'scan: for y in 0..labels.height {
        for x in 0..labels.width {
            if labels.labels[y * labels.width + x] == id && id != 0 {
                start_pixel = Some((x as i64, y as i64));
                break 'scan;
            }
        }
    }
    let Some((px, py)) = start_pixel else {
        return Err(VectorizeError::EmptyRegion(id));
    };
    let inside = |x: i64, y: i64| labels.get(x as isize, y as isize) == id;

    let v0 = (px, py);
    let d0 = EAST;
    let mut edges: Vec<((i64, i64), u8)> = Vec::new();
    let mut v = v0;
    let mut d = d0;
    let cap = 8 * (labels.width + 2) * (labels.height + 2);
    loop {
        edges.push((v, d));
        if edges.len() > cap {
            unreachable!("contour walk failed to close");
        }
        v = step(v, d);
        // Pixels ahead-left and ahead-right of the continuation ray.
        let (left, right) = match d {
            EAST => ((v.0, v.1 - 1), (v.0, v.1)),
            SOUTH => ((v.0, v.1), (v.0 - 1, v.1)),
            WEST => ((v.0 - 1, v.1), (v.0 - 1, v.1 - 1)),
            _ => ((v.0 - 1, v.1 - 1), (v.0, v.1 - 1)),
        };
        d = if inside(left.0, left.1) {
            (d + 3) % 4 // turn left
        } else if inside(right.0, right.1) {
            d // straight on
        } else {
            (d + 1) % 4 // turn right
        };
        if v == v0 && d == d0 {
            break;
        }
    }

    // Keep only direction changes as ring vertices.
    let n = edges.len();
    let mut ring = Vec::new();
    for i in 0..n {
        let prev = edges[(i + n - 1) % n].1;
        if edges[i].1 != prev {
            ring.push((edges[i].0 .0 as f64, edges[i].0 .1 as f64));
        }
    }
    debug_assert!(ring.len() >= 3);
    Ok(PixelPolygon {
        ring,
        component_id: id,
    })
}

fn point_segment_distance(p: (f64, f64), a: (f64, f64), b: (f64, f64)) -> f64 {
    let (vx, vy) = (b.0 - a.0, b.1 - a.1);
    let len2 = vx * vx + vy * vy;
    if len2 == 0.0 {
        return ((p.0 - a.0).powi(2) + (p.1 - a.1).powi(2)).sqrt();
    }
    let t = (((p.0 - a.0) * vx + (p.1 - a.1) * vy) / len2).clamp(0.0, 1.0);
    let (cx, cy) = (a.0 + t * vx, a.1 + t * vy);
    ((p.0 - cx).powi(2) + (p.1 - cy).powi(2)).sqrt()
}

fn douglas_peucker(points: &[(f64, f64)], epsilon: f64, out: &mut Vec<(f64, f64)>) {
    if points.len() <= 2 {
        out.extend_from_slice(&points[..points.len().saturating_sub(1)]);
        return;
    }
    let (first, last) = (points[0], points[points.len() - 1]);
    let mut max_dist = -1.0;
    let mut max_idx = 0;
    for (i, &p) in points.iter().enumerate().skip(1).take(points.len() - 2) {
        let dist = point_segment_distance(p, first, last);
        if dist > max_dist {
            max_dist = dist;
            max_idx = i;
        }
    }
    if max_dist > epsilon {
        douglas_peucker(&points[..=max_idx], epsilon, out);
        douglas_peucker(&points[max_idx..], epsilon, out);
    } else {
        out.push(first);
    }
}

/// Douglas-Peucker ring simplification. Every original vertex stays within
/// `epsilon` of the simplified ring; an epsilon of zero (or a result that
/// would degenerate below a triangle) returns the input unchanged.
pub fn simplify_polygon(poly: &PixelPolygon, epsilon: f64) -> PixelPolygon {
    if epsilon <= 0.0 || poly.ring.len() <= 3 {
        return poly.clone();
    }
    // Split the ring at vertex 0 and the vertex farthest from it, then
    // simplify the two open chains independently.
    let far = poly
        .ring
        .iter()
        .enumerate()
        .max_by(|(_, a), (_, b)| {
            let da = (a.0 - poly.ring[0].0).powi(2) + (a.1 - poly.ring[0].1).powi(2);
            let db = (b.0 - poly.ring[0].0).powi(2) + (b.1 - poly.ring[0].1).powi(2);
            da.partial_cmp(&db).unwrap()
        })
        .map(|(i, _)| i)
        .unwrap_or(0);
    if far == 0 {
        return poly.clone();
    }
    let chain_a: Vec<(f64, f64)> = poly.ring[..=far].to_vec();
    let mut chain_b: Vec<(f64, f64)> = poly.ring[far..].to_vec();
    chain_b.push(poly.ring[0]);

    let mut ring = Vec::new();
    douglas_peucker(&chain_a, epsilon, &mut ring);
    douglas_peucker(&chain_b, epsilon, &mut ring);

    // The chains share their split vertices; drop any duplicates.
    ring.dedup();
    if ring.len() > 1 && ring[0] == *ring.last().unwrap() {
        ring.pop();
    }
    if ring.len() < 3 || signed_area(&ring) == 0.0 {
        return poly.clone();
    }
    PixelPolygon {
        ring,
        component_id: poly.component_id,
    }
}

/// One tile of the probability grid with the mean probability of the
/// pixels it covers. Edge cells may be smaller than the nominal size.
#[derive(Debug, Clone, PartialEq)]
pub struct HeatCell {
    pub x0: usize,
    pub y0: usize,
    pub width: usize,
    pub height: usize,
    pub mean_prob: f64,
}

pub fn grid_heatmap(prob: &Raster, cell: usize) -> Result<Vec<HeatCell>, VectorizeError> {
    if prob.channels() != 1 {
        return Err(VectorizeError::MultiChannel(prob.channels()));
    }
    if cell == 0 {
        return Err(VectorizeError::ZeroCellSize);
    }
    let mut cells = Vec::new();
    let mut y0 = 0;
    while y0 < prob.height() {
        let h = cell.min(prob.height() - y0);
        let mut x0 = 0;
        while x0 < prob.width() {
            let w = cell.min(prob.width() - x0);
            let mut sum = 0.0;
            for y in y0..y0 + h {
                for x in x0..x0 + w {
                    sum += prob.get(x, y, 0);
                }
            }
            cells.push(HeatCell {
                x0,
                y0,
                width: w,
                height: h,
                mean_prob: sum / (w * h) as f64,
            });
            x0 += cell;
        }
        y0 += cell;
    }
    Ok(cells)
}
