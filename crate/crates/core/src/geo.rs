//! World-coordinate geometry and correlation analytics: local metric
//! projection, polygon areas, activity-point buffers, coverage percentages,
//! quarterly bucketing, and school banding.
//!
//! All metric work happens in an equirectangular projection around a local
//! reference point (spherical radius 6378137 m), which keeps distortion
//! below ~0.02% at regional scale and makes every quantity checkable with
//! closed-form oracles.

use chrono::{DateTime, Datelike, Months, NaiveDate, Utc};
use std::collections::HashSet;
use thiserror::Error;

/// Equatorial radius of the WGS84 sphere model, meters.
pub const EARTH_RADIUS_M: f64 = 6_378_137.0;

const DEG: f64 = std::f64::consts::PI / 180.0;

#[derive(Debug, Error, PartialEq)]
pub enum GeoError {
    #[error("coordinate ({lon}, {lat}) outside valid lon/lat ranges")]
    CoordinateOutOfRange { lon: f64, lat: f64 },
    #[error("reference latitude {0} is too close to a pole")]
    PolarReference(f64),
    #[error("ring needs at least 3 distinct vertices, got {0}")]
    TooFewVertices(usize),
    #[error("ring is degenerate (zero area)")]
    DegenerateRing,
    #[error("segment is degenerate for coverage rasterization")]
    DegenerateSegment,
    #[error("buffer radius {0} must be positive and finite")]
    BadBufferRadius(f64),
    #[error("buffer needs at least 8 vertices, got {0}")]
    TooFewBufferVertices(usize),
    #[error("histogram edges must be strictly increasing")]
    UnsortedEdges,
}

/// Rounds to `digits` significant decimal digits. Exported coordinates are
/// canonicalized this way once, so emit/parse cycles are exact.
pub fn round_sig(x: f64, digits: i32) -> f64 {
    if x == 0.0 || !x.is_finite() {
        return x;
    }
    let magnitude = x.abs().log10().floor() as i32;
    let factor = 10f64.powi(digits - 1 - magnitude);
    (x * factor).round() / factor
}

fn check_lon_lat(lon: f64, lat: f64) -> Result<(), GeoError> {
    if !(-180.0..=180.0).contains(&lon) || !(-90.0..=90.0).contains(&lat) {
        return Err(GeoError::CoordinateOutOfRange { lon, lat });
    }
    Ok(())
}

fn check_reference(lat0: f64) -> Result<(), GeoError> {
    if lat0.abs() >= 89.9 {
        return Err(GeoError::PolarReference(lat0));
    }
    Ok(())
}

/// Equirectangular projection of one point to meters east/north of `ref_pt`.
pub fn project(p: (f64, f64), ref_pt: (f64, f64)) -> Result<(f64, f64), GeoError> {
    check_reference(ref_pt.1)?;
    let cos0 = (ref_pt.1 * DEG).cos();
    Ok((
        EARTH_RADIUS_M * (p.0 - ref_pt.0) * DEG * cos0,
        EARTH_RADIUS_M * (p.1 - ref_pt.1) * DEG,
    ))
}

/// Inverse of [`project`].
pub fn unproject(xy: (f64, f64), ref_pt: (f64, f64)) -> Result<(f64, f64), GeoError> {
    check_reference(ref_pt.1)?;
    let cos0 = (ref_pt.1 * DEG).cos();
    Ok((
        ref_pt.0 + xy.0 / (EARTH_RADIUS_M * DEG * cos0),
        ref_pt.1 + xy.1 / (EARTH_RADIUS_M * DEG),
    ))
}

pub fn local_project(points: &[(f64, f64)], ref_pt: (f64, f64)) -> Result<Vec<(f64, f64)>, GeoError> {
    points.iter().map(|&p| project(p, ref_pt)).collect()
}

fn shoelace(ring: &[(f64, f64)]) -> f64 {
    let n = ring.len();
    let mut acc = 0.0;
    for i in 0..n {
        let (x0, y0) = ring[i];
        let (x1, y1) = ring[(i + 1) % n];
        acc += x0 * y1 - x1 * y0;
    }
    acc / 2.0
}

fn ring_vertex_mean(ring: &[(f64, f64)]) -> (f64, f64) {
    let n = ring.len() as f64;
    let (sx, sy) = ring
        .iter()
        .fold((0.0, 0.0), |(sx, sy), &(x, y)| (sx + x, sy + y));
    (sx / n, sy / n)
}

/// Absolute shoelace area of a lon/lat ring, in square meters, computed in
/// a local projection referenced at the ring's vertex mean.
pub fn polygon_area_m2(ring: &[(f64, f64)]) -> Result<f64, GeoError> {
    if ring.len() < 3 {
        return Err(GeoError::TooFewVertices(ring.len()));
    }
    let projected = local_project(ring, ring_vertex_mean(ring))?;
    let area = shoelace(&projected).abs();
    if area == 0.0 {
        return Err(GeoError::DegenerateRing);
    }
    Ok(area)
}

/// Regular n-gon of circumradius `radius_m` meters around `p`, returned as
/// a lon/lat ring (counterclockwise, unclosed).
pub fn buffer_point(p: (f64, f64), radius_m: f64, n: usize) -> Result<Vec<(f64, f64)>, GeoError> {
    if !(radius_m > 0.0) || !radius_m.is_finite() {
        return Err(GeoError::BadBufferRadius(radius_m));
    }
    if n < 8 {
        return Err(GeoError::TooFewBufferVertices(n));
    }
    check_lon_lat(p.0, p.1)?;
    let mut ring = Vec::with_capacity(n);
    for k in 0..n {
        let angle = k as f64 / n as f64 * std::f64::consts::TAU;
        let xy = (radius_m * angle.cos(), radius_m * angle.sin());
        ring.push(unproject(xy, p)?);
    }
    Ok(ring)
}

fn on_segment(p: (f64, f64), a: (f64, f64), b: (f64, f64)) -> bool {
    let (vx, vy) = (b.0 - a.0, b.1 - a.1);
    let (wx, wy) = (p.0 - a.0, p.1 - a.1);
    let cross = vx * wy - vy * wx;
    let scale = vx.abs().max(vy.abs()).max(1.0);
    if cross.abs() > 1e-12 * scale * scale {
        return false;
    }
    let dot = wx * vx + wy * vy;
    let len2 = vx * vx + vy * vy;
    dot >= -1e-12 * scale * scale && dot <= len2 + 1e-12 * scale * scale
}

/// Even-odd ray casting; points on the boundary count as inside.
pub fn point_in_polygon(p: (f64, f64), ring: &[(f64, f64)]) -> bool {
    let n = ring.len();
    if n < 3 {
        return false;
    }
    for i in 0..n {
        if on_segment(p, ring[i], ring[(i + 1) % n]) {
            return true;
        }
    }
    let mut inside = false;
    for i in 0..n {
        let (x0, y0) = ring[i];
        let (x1, y1) = ring[(i + 1) % n];
        if (y0 > p.1) != (y1 > p.1) {
            let t = (p.1 - y0) / (y1 - y0);
            if p.0 < x0 + t * (x1 - x0) {
                inside = !inside;
            }
        }
    }
    inside
}

fn orient(a: (f64, f64), b: (f64, f64), c: (f64, f64)) -> f64 {
    (b.0 - a.0) * (c.1 - a.1) - (b.1 - a.1) * (c.0 - a.0)
}

fn segments_intersect(a: (f64, f64), b: (f64, f64), c: (f64, f64), d: (f64, f64)) -> bool {
    let d1 = orient(c, d, a);
    let d2 = orient(c, d, b);
    let d3 = orient(a, b, c);
    let d4 = orient(a, b, d);
    if ((d1 > 0.0 && d2 < 0.0) || (d1 < 0.0 && d2 > 0.0))
        && ((d3 > 0.0 && d4 < 0.0) || (d3 < 0.0 && d4 > 0.0))
    {
        return true;
    }
    on_segment(a, c, d) || on_segment(b, c, d) || on_segment(c, a, b) || on_segment(d, a, b)
}

/// True when the two rings share any area or touch.
pub fn polygons_intersect(a: &[(f64, f64)], b: &[(f64, f64)]) -> bool {
    if a.len() < 3 || b.len() < 3 {
        return false;
    }
    if point_in_polygon(a[0], b) || point_in_polygon(b[0], a) {
        return true;
    }
    for i in 0..a.len() {
        let (a0, a1) = (a[i], a[(i + 1) % a.len()]);
        for j in 0..b.len() {
            let (b0, b1) = (b[j], b[(j + 1) % b.len()]);
            if segments_intersect(a0, a1, b0, b1) {
                return true;
            }
        }
    }
    false
}

/// Settlement outline in world coordinates. Construction canonicalizes the
/// ring: the closing repeat is dropped, coordinates are rounded to nine
/// significant digits, and the orientation is normalized counterclockwise.
#[derive(Debug, Clone, PartialEq)]
pub struct SettlementPolygon {
    pub id: u64,
    pub ring: Vec<(f64, f64)>,
    pub area_m2: f64,
    pub centroid: (f64, f64),
}

impl SettlementPolygon {
    pub fn new(id: u64, ring: Vec<(f64, f64)>) -> Result<SettlementPolygon, GeoError> {
        let mut ring = ring;
        if ring.len() > 1 && ring.first() == ring.last() {
            ring.pop();
        }
        if ring.len() < 3 {
            return Err(GeoError::TooFewVertices(ring.len()));
        }
        for &(lon, lat) in &ring {
            check_lon_lat(lon, lat)?;
        }
        for p in ring.iter_mut() {
            *p = (round_sig(p.0, 9), round_sig(p.1, 9));
        }
        if shoelace(&ring) < 0.0 {
            ring.reverse();
        }
        let area_m2 = polygon_area_m2(&ring)?;
        let centroid = ring_vertex_mean(&ring);
        let centroid = (round_sig(centroid.0, 9), round_sig(centroid.1, 9));
        Ok(SettlementPolygon {
            id,
            ring,
            area_m2,
            centroid,
        })
    }
}

/// One tagged inoculation activity point.
#[derive(Debug, Clone, PartialEq)]
pub struct ActivityRecord {
    pub vaccinator_id: String,
    pub lon: f64,
    pub lat: f64,
    pub timestamp: DateTime<Utc>,
}

impl ActivityRecord {
    pub fn new(
        vaccinator_id: String,
        lon: f64,
        lat: f64,
        timestamp: DateTime<Utc>,
    ) -> Result<ActivityRecord, GeoError> {
        check_lon_lat(lon, lat)?;
        Ok(ActivityRecord {
            vaccinator_id,
            lon,
            lat,
            timestamp,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SchoolRecord {
    pub school_id: String,
    pub lon: f64,
    pub lat: f64,
}

impl SchoolRecord {
    pub fn new(school_id: String, lon: f64, lat: f64) -> Result<SchoolRecord, GeoError> {
        check_lon_lat(lon, lat)?;
        Ok(SchoolRecord { school_id, lon, lat })
    }
}

/// One three-calendar-month window of the analysis period.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct QuarterBucket {
    pub index: usize,
    pub start: NaiveDate,
    /// Inclusive last day.
    pub end: NaiveDate,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AnalyticsConfig {
    pub buffer_radius_m: f64,
    pub buffer_vertices: usize,
    pub coverage_cell_m: f64,
    pub quarter_anchor: NaiveDate,
    pub window_months: u32,
}

impl Default for AnalyticsConfig {
    fn default() -> Self {
        AnalyticsConfig {
            buffer_radius_m: 200.0,
            buffer_vertices: 32,
            coverage_cell_m: 10.0,
            quarter_anchor: NaiveDate::from_ymd_opt(2015, 8, 1).unwrap(),
            window_months: 17,
        }
    }
}

impl AnalyticsConfig {
    pub fn bucket_count(&self) -> usize {
        (self.window_months as usize).div_ceil(3)
    }

    /// The consecutive three-month buckets tiling the analysis window;
    /// the final bucket may span fewer months.
    pub fn quarter_buckets(&self) -> Vec<QuarterBucket> {
        let window_end = self.quarter_anchor + Months::new(self.window_months);
        (0..self.bucket_count())
            .map(|index| {
                let start = self.quarter_anchor + Months::new(3 * index as u32);
                let next = (start + Months::new(3)).min(window_end);
                QuarterBucket {
                    index,
                    start,
                    end: next.pred_opt().expect("window start is not the minimum date"),
                }
            })
            .collect()
    }
}

/// Records split by quarter; indices refer into the input slice. Records
/// outside the analysis window land in `out_of_window`.
#[derive(Debug, Clone, PartialEq)]
pub struct QuarterPartition {
    pub buckets: Vec<QuarterBucket>,
    pub per_bucket: Vec<Vec<usize>>,
    pub out_of_window: Vec<usize>,
}

/// Bucket index is whole months since the anchor, integer-divided by 3.
pub fn bucket_quarters(records: &[ActivityRecord], cfg: &AnalyticsConfig) -> QuarterPartition {
    let buckets = cfg.quarter_buckets();
    let mut per_bucket = vec![Vec::new(); buckets.len()];
    let mut out_of_window = Vec::new();
    let anchor = cfg.quarter_anchor;
    for (i, record) in records.iter().enumerate() {
        let date = record.timestamp.date_naive();
        let months = (date.year() - anchor.year()) * 12 + date.month() as i32
            - anchor.month() as i32
            - i32::from(date.day() < anchor.day());
        if months < 0 || months >= cfg.window_months as i32 {
            out_of_window.push(i);
        } else {
            per_bucket[months as usize / 3].push(i);
        }
    }
    QuarterPartition {
        buckets,
        per_bucket,
        out_of_window,
    }
}

fn buffer_ring_projected(
    record: &ActivityRecord,
    ref_pt: (f64, f64),
    cfg: &AnalyticsConfig,
) -> Result<Vec<(f64, f64)>, GeoError> {
    let ring = buffer_point((record.lon, record.lat), cfg.buffer_radius_m, cfg.buffer_vertices)?;
    local_project(&ring, ref_pt)
}

/// Distinct vaccinators whose buffered activity points touch each segment.
pub fn vaccinators_per_segment(
    records: &[ActivityRecord],
    segments: &[SettlementPolygon],
    cfg: &AnalyticsConfig,
) -> Result<Vec<usize>, GeoError> {
    let mut counts = Vec::with_capacity(segments.len());
    for segment in segments {
        let ring = local_project(&segment.ring, segment.centroid)?;
        let mut seen: HashSet<&str> = HashSet::new();
        for record in records {
            if seen.contains(record.vaccinator_id.as_str()) {
                continue;
            }
            let buffer = buffer_ring_projected(record, segment.centroid, cfg)?;
            if polygons_intersect(&buffer, &ring) {
                seen.insert(record.vaccinator_id.as_str());
            }
        }
        counts.push(seen.len());
    }
    Ok(counts)
}

/// Percent of the segment's area covered by the union of activity buffers,
/// estimated on a square raster of `coverage_cell_m` cells in the local
/// projection and clamped to [0, 100].
pub fn coverage_percent(
    segment: &SettlementPolygon,
    records: &[ActivityRecord],
    cfg: &AnalyticsConfig,
) -> Result<f64, GeoError> {
    let ring = local_project(&segment.ring, segment.centroid)?;
    let buffers: Vec<Vec<(f64, f64)>> = records
        .iter()
        .map(|r| buffer_ring_projected(r, segment.centroid, cfg))
        .collect::<Result<_, _>>()?;

    let (mut min_x, mut min_y, mut max_x, mut max_y) =
        (f64::INFINITY, f64::INFINITY, f64::NEG_INFINITY, f64::NEG_INFINITY);
    for &(x, y) in &ring {
        min_x = min_x.min(x);
        min_y = min_y.min(y);
        max_x = max_x.max(x);
        max_y = max_y.max(y);
    }
    let cell = cfg.coverage_cell_m;
    if !(cell > 0.0) {
        return Err(GeoError::DegenerateSegment);
    }
    let nx = ((max_x - min_x) / cell).ceil() as usize;
    let ny = ((max_y - min_y) / cell).ceil() as usize;
    let mut total = 0u64;
    let mut covered = 0u64;
    for iy in 0..ny {
        let y = min_y + (iy as f64 + 0.5) * cell;
        for ix in 0..nx {
            let x = min_x + (ix as f64 + 0.5) * cell;
            if !point_in_polygon((x, y), &ring) {
                continue;
            }
            total += 1;
            if buffers.iter().any(|b| point_in_polygon((x, y), b)) {
                covered += 1;
            }
        }
    }
    if total == 0 {
        return Err(GeoError::DegenerateSegment);
    }
    Ok((100.0 * covered as f64 / total as f64).clamp(0.0, 100.0))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SchoolBand {
    Red,
    LightGreen,
    MidGreen,
    DarkGreen,
}

impl SchoolBand {
    /// No schools is red; one or two light green; more than ten dark
    /// green; the middle range in between.
    pub fn from_count(count: usize) -> SchoolBand {
        match count {
            0 => SchoolBand::Red,
            1..=2 => SchoolBand::LightGreen,
            3..=10 => SchoolBand::MidGreen,
            _ => SchoolBand::DarkGreen,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            SchoolBand::Red => "Red",
            SchoolBand::LightGreen => "LightGreen",
            SchoolBand::MidGreen => "MidGreen",
            SchoolBand::DarkGreen => "DarkGreen",
        }
    }

    pub fn parse(name: &str) -> Option<SchoolBand> {
        Some(match name {
            "Red" => SchoolBand::Red,
            "LightGreen" => SchoolBand::LightGreen,
            "MidGreen" => SchoolBand::MidGreen,
            "DarkGreen" => SchoolBand::DarkGreen,
            _ => return None,
        })
    }
}

/// Boundary-inclusive point-in-polygon school counts and bands.
pub fn school_stats(
    schools: &[SchoolRecord],
    segments: &[SettlementPolygon],
) -> Vec<(usize, SchoolBand)> {
    segments
        .iter()
        .map(|segment| {
            let count = schools
                .iter()
                .filter(|s| point_in_polygon((s.lon, s.lat), &segment.ring))
                .count();
            (count, SchoolBand::from_count(count))
        })
        .collect()
}

/// Left-closed right-open bins; the last bin also includes its right edge.
pub fn histogram(values: &[f64], edges: &[f64]) -> Result<Vec<usize>, GeoError> {
    if edges.len() < 2 || edges.windows(2).any(|w| w[0] >= w[1]) {
        return Err(GeoError::UnsortedEdges);
    }
    let mut counts = vec![0usize; edges.len() - 1];
    for &v in values {
        if v < edges[0] || v > *edges.last().unwrap() {
            continue;
        }
        // partition_point gives the first edge greater than v.
        let upper = edges.partition_point(|&e| e <= v);
        let bin = if upper == edges.len() {
            counts.len() - 1
        } else {
            upper - 1
        };
        counts[bin] += 1;
    }
    Ok(counts)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuarterStats {
    pub vaccinator_count: usize,
    pub coverage_percent: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SegmentReport {
    pub segment_id: u64,
    pub area_m2: f64,
    pub quarters: Vec<QuarterStats>,
    pub school_count: usize,
    pub school_band: SchoolBand,
}

/// Full correlation pass: per-quarter vaccinator counts and coverage for
/// every segment, plus school banding. Returns the reports (ordered by
/// segment id) and the number of out-of-window activity records.
pub fn build_reports(
    segments: &[SettlementPolygon],
    activities: &[ActivityRecord],
    schools: &[SchoolRecord],
    cfg: &AnalyticsConfig,
) -> Result<(Vec<SegmentReport>, usize), GeoError> {
    let partition = bucket_quarters(activities, cfg);
    let school_info = school_stats(schools, segments);

    let mut reports = Vec::with_capacity(segments.len());
    for (seg_idx, segment) in segments.iter().enumerate() {
        let mut quarters = Vec::with_capacity(partition.buckets.len());
        for bucket_records in &partition.per_bucket {
            let subset: Vec<ActivityRecord> = bucket_records
                .iter()
                .map(|&i| activities[i].clone())
                .collect();
            let vaccinator_count =
                vaccinators_per_segment(&subset, std::slice::from_ref(segment), cfg)?[0];
            let coverage = if subset.is_empty() {
                0.0
            } else {
                coverage_percent(segment, &subset, cfg)?
            };
            quarters.push(QuarterStats {
                vaccinator_count,
                coverage_percent: coverage,
            });
        }
        let (school_count, school_band) = school_info[seg_idx];
        reports.push(SegmentReport {
            segment_id: segment.id,
            area_m2: segment.area_m2,
            quarters,
            school_count,
            school_band,
        });
    }
    reports.sort_by_key(|r| r.segment_id);
    Ok((reports, partition.out_of_window.len()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use chrono::TimeZone;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn ts(s: &str) -> DateTime<Utc> {
        DateTime::parse_from_rfc3339(s).unwrap().with_timezone(&Utc)
    }

    fn activity(id: &str, lon: f64, lat: f64, when: &str) -> ActivityRecord {
        ActivityRecord::new(id.into(), lon, lat, ts(when)).unwrap()
    }

    /// Axis-aligned square segment of the given side length, meters.
    fn square_segment(id: u64, center: (f64, f64), side_m: f64) -> SettlementPolygon {
        let h = side_m / 2.0;
        let ring = [(-h, -h), (h, -h), (h, h), (-h, h)]
            .iter()
            .map(|&xy| unproject(xy, center).unwrap())
            .collect();
        SettlementPolygon::new(id, ring).unwrap()
    }

    #[test]
    fn projection_of_reference_is_origin_and_scale_checks_out() {
        let r = (70.3, 29.1);
        assert_eq!(project(r, r).unwrap(), (0.0, 0.0));

        // 0.001 degrees of longitude at the equator.
        let (x, y) = project((0.001, 0.0), (0.0, 0.0)).unwrap();
        assert!((x - 111.3194908).abs() < 1e-4, "x = {x}");
        assert!(y.abs() < 1e-12);
    }

    #[test]
    fn projection_round_trips() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let r = (71.0, 28.5);
        for _ in 0..100 {
            let p = (r.0 + rng.gen_range(-0.5..0.5), r.1 + rng.gen_range(-0.5..0.5));
            let xy = project(p, r).unwrap();
            let back = unproject(xy, r).unwrap();
            assert!((back.0 - p.0).abs() < 1e-9 && (back.1 - p.1).abs() < 1e-9);
        }
        assert!(matches!(
            project((0.0, 89.95), (0.0, 89.95)),
            Err(GeoError::PolarReference(_))
        ));
    }

    #[test]
    fn equatorial_milli_degree_square_area() {
        let ring = vec![(0.0, 0.0), (0.001, 0.0), (0.001, 0.001), (0.0, 0.001)];
        let area = polygon_area_m2(&ring).unwrap();
        let expected = 12392.0;
        assert!(
            (area - expected).abs() / expected < 0.005,
            "area {area}, expected about {expected}"
        );

        let mut reversed = ring.clone();
        reversed.reverse();
        assert_eq!(polygon_area_m2(&reversed).unwrap(), area);
    }

    /// Winding-number containment, used as the independent oracle.
    fn winding_inside(p: (f64, f64), ring: &[(f64, f64)]) -> bool {
        let mut angle = 0.0;
        let n = ring.len();
        for i in 0..n {
            let (x0, y0) = ring[i];
            let (x1, y1) = ring[(i + 1) % n];
            let a = (y0 - p.1).atan2(x0 - p.0);
            let b = (y1 - p.1).atan2(x1 - p.0);
            let mut d = b - a;
            while d > std::f64::consts::PI {
                d -= std::f64::consts::TAU;
            }
            while d < -std::f64::consts::PI {
                d += std::f64::consts::TAU;
            }
            angle += d;
        }
        angle.abs() > std::f64::consts::PI
    }

    #[test]
    fn convex_ring_areas_match_monte_carlo_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..3 {
            // Rotated ellipse sampled at even angles: convex by construction.
            let center = (rng.gen_range(60.0..80.0), rng.gen_range(20.0..35.0));
            let a = rng.gen_range(150.0..500.0);
            let b = rng.gen_range(150.0..500.0);
            let rot: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
            let n = 40;
            let local: Vec<(f64, f64)> = (0..n)
                .map(|i| {
                    let t = i as f64 / n as f64 * std::f64::consts::TAU;
                    let (x, y) = (a * t.cos(), b * t.sin());
                    (x * rot.cos() - y * rot.sin(), x * rot.sin() + y * rot.cos())
                })
                .collect();
            let ring: Vec<(f64, f64)> = local
                .iter()
                .map(|&xy| unproject(xy, center).unwrap())
                .collect();
            let area = polygon_area_m2(&ring).unwrap();

            // Monte-Carlo rejection sampling in the local frame.
            let extent = a.max(b) * 1.05;
            let samples = 100_000;
            let mut hits = 0u32;
            for _ in 0..samples {
                let p = (rng.gen_range(-extent..extent), rng.gen_range(-extent..extent));
                if winding_inside(p, &local) {
                    hits += 1;
                }
            }
            let mc = hits as f64 / samples as f64 * (2.0 * extent).powi(2);
            assert!(
                (area - mc).abs() / mc < 0.01,
                "shoelace {area} vs monte carlo {mc}"
            );
        }
    }

    #[test]
    fn buffer_geometry_matches_regular_polygon_formula() {
        let p = (71.2, 28.9);
        let ring = buffer_point(p, 200.0, 32).unwrap();
        assert_eq!(ring.len(), 32);

        let area = polygon_area_m2(&ring).unwrap();
        let expected = 0.5 * 32.0 * 200.0 * 200.0 * (std::f64::consts::TAU / 32.0).sin();
        assert!(
            (area - expected).abs() / expected < 1e-3,
            "area {area}, formula {expected}"
        );

        assert!(point_in_polygon(p, &ring));

        for &v in &ring {
            let (x, y) = project(v, p).unwrap();
            let dist = (x * x + y * y).sqrt();
            assert!((dist - 200.0).abs() < 0.1, "vertex at {dist} m");
        }

        assert!(matches!(buffer_point(p, 0.0, 32), Err(GeoError::BadBufferRadius(_))));
        assert!(matches!(buffer_point(p, 200.0, 4), Err(GeoError::TooFewBufferVertices(4))));
    }

    #[test]
    fn point_in_polygon_basics_and_oracle_agreement() {
        let segment = square_segment(1, (70.0, 29.0), 400.0);
        assert!(point_in_polygon(segment.centroid, &segment.ring));
        assert!(!point_in_polygon((71.0, 29.0), &segment.ring));
        // Vertices and edge midpoints are boundary, hence inside.
        assert!(point_in_polygon(segment.ring[0], &segment.ring));
        let mid = (
            (segment.ring[0].0 + segment.ring[1].0) / 2.0,
            (segment.ring[0].1 + segment.ring[1].1) / 2.0,
        );
        assert!(point_in_polygon(mid, &segment.ring));

        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut ring = Vec::new();
        for i in 0..12 {
            let t = i as f64 / 12.0 * std::f64::consts::TAU;
            let r = rng.gen_range(0.3..1.0);
            ring.push((70.0 + r * t.cos(), 29.0 + r * t.sin()));
        }
        for _ in 0..10_000 {
            let p = (70.0 + rng.gen_range(-1.2..1.2), 29.0 + rng.gen_range(-1.2..1.2));
            assert_eq!(point_in_polygon(p, &ring), winding_inside(p, &ring));
        }
    }

    #[test]
    fn quarter_bucketing_matches_month_arithmetic() {
        let cfg = AnalyticsConfig::default();
        let buckets = cfg.quarter_buckets();
        assert_eq!(buckets.len(), 6);
        assert_eq!(buckets[0].start, NaiveDate::from_ymd_opt(2015, 8, 1).unwrap());
        assert_eq!(buckets[0].end, NaiveDate::from_ymd_opt(2015, 10, 31).unwrap());
        // The final bucket is the partial November-December 2016 window.
        assert_eq!(buckets[5].start, NaiveDate::from_ymd_opt(2016, 11, 1).unwrap());
        assert_eq!(buckets[5].end, NaiveDate::from_ymd_opt(2016, 12, 31).unwrap());

        let records = vec![
            activity("v1", 70.0, 29.0, "2015-08-15T10:00:00Z"),
            activity("v2", 70.0, 29.0, "2015-11-01T00:00:00Z"),
            activity("v3", 70.0, 29.0, "2016-12-31T23:59:59Z"),
            activity("v4", 70.0, 29.0, "2015-07-31T23:59:59Z"),
            activity("v5", 70.0, 29.0, "2017-01-01T00:00:00Z"),
        ];
        let partition = bucket_quarters(&records, &cfg);
        assert_eq!(partition.per_bucket[0], vec![0]);
        assert_eq!(partition.per_bucket[1], vec![1]);
        assert_eq!(partition.per_bucket[5], vec![2]);
        assert_eq!(partition.out_of_window, vec![3, 4]);

        // Every record lands in exactly one bucket or out-of-window.
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let random: Vec<ActivityRecord> = (0..200)
            .map(|i| {
                let days = rng.gen_range(-100..700);
                let date = NaiveDate::from_ymd_opt(2015, 8, 1).unwrap() + chrono::Duration::days(days);
                ActivityRecord::new(
                    format!("v{i}"),
                    70.0,
                    29.0,
                    Utc.from_utc_datetime(&date.and_hms_opt(12, 0, 0).unwrap()),
                )
                .unwrap()
            })
            .collect();
        let partition = bucket_quarters(&random, &cfg);
        let mut seen = vec![0usize; random.len()];
        for bucket in &partition.per_bucket {
            for &i in bucket {
                seen[i] += 1;
            }
        }
        for &i in &partition.out_of_window {
            seen[i] += 1;
        }
        assert!(seen.iter().all(|&c| c == 1));
    }

    #[test]
    fn vaccinator_counting_is_distinct_and_local() {
        let cfg = AnalyticsConfig::default();
        let near = square_segment(1, (70.0, 29.0), 400.0);
        let far = square_segment(2, (70.1, 29.0), 400.0); // ~9.7 km away
        let segments = vec![near.clone(), far];

        assert_eq!(
            vaccinators_per_segment(&[], &segments, &cfg).unwrap(),
            vec![0, 0]
        );

        let one = vec![activity("v1", near.centroid.0, near.centroid.1, "2015-09-01T08:00:00Z")];
        assert_eq!(vaccinators_per_segment(&one, &segments, &cfg).unwrap(), vec![1, 0]);

        let mut many = Vec::new();
        for i in 0..50 {
            many.push(activity(
                "v1",
                near.centroid.0 + (i as f64) * 1e-6,
                near.centroid.1,
                "2015-09-01T08:00:00Z",
            ));
        }
        assert_eq!(vaccinators_per_segment(&many, &segments, &cfg).unwrap(), vec![1, 0]);
    }

    #[test]
    fn coverage_of_centered_point_matches_circle_fraction() {
        let cfg = AnalyticsConfig::default();
        let segment = square_segment(1, (70.0, 29.0), 400.0);
        assert_eq!(coverage_percent(&segment, &[], &cfg).unwrap(), 0.0);

        let center = vec![activity("v1", segment.centroid.0, segment.centroid.1, "2015-09-01T08:00:00Z")];
        let coverage = coverage_percent(&segment, &center, &cfg).unwrap();
        let analytic = 100.0 * std::f64::consts::PI * 200.0 * 200.0 / 160_000.0;
        assert!(
            (coverage - analytic).abs() < 2.0,
            "coverage {coverage}, analytic {analytic}"
        );

        // Enough points blanket the whole segment.
        let mut blanket = Vec::new();
        for iy in 0..5 {
            for ix in 0..5 {
                let xy = ((ix as f64 - 2.0) * 100.0, (iy as f64 - 2.0) * 100.0);
                let (lon, lat) = unproject(xy, segment.centroid).unwrap();
                blanket.push(activity("v1", lon, lat, "2015-09-01T08:00:00Z"));
            }
        }
        assert_eq!(coverage_percent(&segment, &blanket, &cfg).unwrap(), 100.0);
    }

    #[test]
    fn coverage_is_monotone_and_duplicate_idempotent() {
        let cfg = AnalyticsConfig::default();
        let segment = square_segment(1, (70.0, 29.0), 500.0);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut records = Vec::new();
        let mut last = 0.0;
        for i in 0..5 {
            let xy = (rng.gen_range(-250.0..250.0), rng.gen_range(-250.0..250.0));
            let (lon, lat) = unproject(xy, segment.centroid).unwrap();
            records.push(activity(&format!("v{i}"), lon, lat, "2015-09-01T08:00:00Z"));
            let coverage = coverage_percent(&segment, &records, &cfg).unwrap();
            assert!(coverage >= last - 1e-12, "coverage dropped {last} -> {coverage}");
            last = coverage;
        }

        let mut doubled = records.clone();
        doubled.extend(records.iter().cloned());
        assert_eq!(
            coverage_percent(&segment, &records, &cfg).unwrap(),
            coverage_percent(&segment, &doubled, &cfg).unwrap()
        );
    }

    #[test]
    fn school_banding_matches_count_rules() {
        let segment = square_segment(1, (70.0, 29.0), 400.0);
        let segments = vec![segment.clone()];
        let school = |i: usize, dx: f64| {
            let (lon, lat) = unproject((dx, 0.0), segment.centroid).unwrap();
            SchoolRecord::new(format!("s{i}"), lon, lat).unwrap()
        };

        assert_eq!(school_stats(&[], &segments)[0], (0, SchoolBand::Red));

        let two: Vec<SchoolRecord> = (0..2).map(|i| school(i, i as f64 * 10.0)).collect();
        assert_eq!(school_stats(&two, &segments)[0], (2, SchoolBand::LightGreen));

        let five: Vec<SchoolRecord> = (0..5).map(|i| school(i, i as f64 * 10.0)).collect();
        assert_eq!(school_stats(&five, &segments)[0], (5, SchoolBand::MidGreen));

        let twelve: Vec<SchoolRecord> = (0..12).map(|i| school(i, i as f64 * 10.0)).collect();
        assert_eq!(school_stats(&twelve, &segments)[0], (12, SchoolBand::DarkGreen));
    }

    #[test]
    fn histogram_binning() {
        assert_eq!(histogram(&[], &[0.0, 1.0, 2.0]).unwrap(), vec![0, 0]);
        assert_eq!(histogram(&[1.0, 2.0, 3.0], &[0.0, 2.0, 4.0]).unwrap(), vec![1, 2]);
        // Last bin is right-closed.
        assert_eq!(histogram(&[4.0], &[0.0, 2.0, 4.0]).unwrap(), vec![0, 1]);
        assert_eq!(histogram(&[1.0], &[2.0, 1.0]), Err(GeoError::UnsortedEdges));

        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let values: Vec<f64> = (0..500).map(|_| rng.gen_range(-1.0..11.0)).collect();
        let edges = [0.0, 2.5, 5.0, 7.5, 10.0];
        let counts = histogram(&values, &edges).unwrap();
        let in_range = values.iter().filter(|&&v| (0.0..=10.0).contains(&v)).count();
        assert_eq!(counts.iter().sum::<usize>(), in_range);
    }

    #[test]
    fn settlement_polygon_canonicalization() {
        // Closing repeat dropped, clockwise input re-oriented.
        let ring = vec![
            (70.0, 29.0),
            (70.0, 29.001),
            (70.001, 29.001),
            (70.001, 29.0),
            (70.0, 29.0),
        ];
        let poly = SettlementPolygon::new(7, ring).unwrap();
        assert_eq!(poly.ring.len(), 4);
        assert!(shoelace(&poly.ring) > 0.0);
        assert!(poly.area_m2 > 0.0);
        let (clon, clat) = poly.centroid;
        assert!(clon > 70.0 && clon < 70.001 && clat > 29.0 && clat < 29.001);

        assert!(matches!(
            SettlementPolygon::new(1, vec![(0.0, 0.0), (1.0, 1.0)]),
            Err(GeoError::TooFewVertices(2))
        ));
        assert!(matches!(
            SettlementPolygon::new(1, vec![(200.0, 0.0), (1.0, 1.0), (2.0, 2.0)]),
            Err(GeoError::CoordinateOutOfRange { .. })
        ));
    }

    #[test]
    fn reports_aggregate_everything() {
        let cfg = AnalyticsConfig::default();
        let a = square_segment(2, (70.0, 29.0), 400.0);
        let b = square_segment(1, (70.1, 29.0), 400.0);
        let segments = vec![a.clone(), b.clone()];
        let activities = vec![
            activity("v1", a.centroid.0, a.centroid.1, "2015-09-01T08:00:00Z"),
            activity("v2", a.centroid.0, a.centroid.1, "2016-12-01T08:00:00Z"),
            activity("v1", b.centroid.0, b.centroid.1, "2018-01-01T08:00:00Z"),
        ];
        let schools = vec![SchoolRecord::new("s1".into(), a.centroid.0, a.centroid.1).unwrap()];
        let (reports, skipped) = build_reports(&segments, &activities, &schools, &cfg).unwrap();
        assert_eq!(skipped, 1);
        assert_eq!(reports.len(), 2);
        // Sorted by id.
        assert_eq!(reports[0].segment_id, 1);
        assert_eq!(reports[1].segment_id, 2);
        let seg_a = &reports[1];
        assert_eq!(seg_a.quarters.len(), 6);
        assert_eq!(seg_a.quarters[0].vaccinator_count, 1);
        assert_eq!(seg_a.quarters[5].vaccinator_count, 1);
        assert!(seg_a.quarters[0].coverage_percent > 0.0);
        assert_eq!(seg_a.quarters[1].vaccinator_count, 0);
        assert_eq!(seg_a.quarters[1].coverage_percent, 0.0);
        assert_eq!(seg_a.school_count, 1);
        assert_eq!(seg_a.school_band, SchoolBand::LightGreen);
    }
}
