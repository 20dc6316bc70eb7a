//! Edge detection and line extraction inside a remapped searching region.

use std::path::Path;

use nalgebra::Point2;
use serde::{Deserialize, Serialize};

use crate::geometry::{CddConfig, Csr, Line2};
use crate::ipcm::{map_line_to_original, warp_csr, RemapConfig, RemapError, WarpSettings, WarpedCsr};
use crate::raster::{gaussian_blur, save_pgm, FloatImage, GrayImage, Raster};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum EdgeError {
    #[error("image is empty")]
    EmptyImage,
    #[error("invalid thresholds: low {low}, high {high}")]
    InvalidThresholds { low: f32, high: f32 },
}

#[derive(Debug, thiserror::Error)]
pub enum ExtractError {
    #[error(transparent)]
    Remap(#[from] RemapError),
    #[error(transparent)]
    Edge(#[from] EdgeError),
}

/// Hysteresis thresholds on the 3×3 Sobel magnitude of an 8-bit image.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EdgeThresholds {
    pub low: f32,
    pub high: f32,
    pub blur_sigma: f64,
}

impl Default for EdgeThresholds {
    fn default() -> Self {
        Self { low: 40.0, high: 100.0, blur_sigma: 1.2 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct HoughConfig {
    /// Half-width of the searched angle band around horizontal, degrees.
    pub angle_band_deg: f64,
    pub angle_step_deg: f64,
    /// Minimum support as a fraction of the region width.
    pub min_votes_fraction: f64,
    pub max_lines: usize,
}

impl Default for HoughConfig {
    fn default() -> Self {
        Self { angle_band_deg: 20.0, angle_step_deg: 1.0, min_votes_fraction: 0.5, max_lines: 6 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ClusterTolerance {
    pub tol_a: f64,
    pub tol_b: f64,
}

impl Default for ClusterTolerance {
    fn default() -> Self {
        Self { tol_a: 0.02, tol_b: 3.0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LineExtractionConfig {
    pub edges: EdgeThresholds,
    pub hough: HoughConfig,
    pub cluster: ClusterTolerance,
}

/// Thin binary edge map with sub-pixel row offsets of every edge pixel.
#[derive(Debug, Clone)]
pub struct EdgeMap {
    pub mask: Raster<bool>,
    /// Vertical offset of the magnitude peak from the pixel center, in `[-0.5, 0.5]`.
    pub sub_v: FloatImage,
    /// Gradient components, used to skip steep edges when voting.
    pub gx: FloatImage,
    pub gy: FloatImage,
}

impl EdgeMap {
    pub fn count(&self) -> usize {
        self.mask.data().iter().filter(|&&e| e).count()
    }

    pub fn to_gray(&self) -> GrayImage {
        self.mask.map(|e| if e { 255 } else { 0 })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VotedLine {
    pub line: Line2,
    pub votes: f64,
}

/// At most six lines, strongest first unless stated otherwise.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct LineSet {
    pub lines: Vec<VotedLine>,
}

impl LineSet {
    pub fn len(&self) -> usize {
        self.lines.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lines.is_empty()
    }

    pub fn total_votes(&self) -> f64 {
        self.lines.iter().map(|l| l.votes).sum()
    }

    pub fn iter_lines(&self) -> impl Iterator<Item = &Line2> {
        self.lines.iter().map(|l| &l.line)
    }
}

/// Canny edge detector: Gaussian smoothing, Sobel gradient, non-maximum
/// suppression along the quantized gradient direction, hysteresis.
pub fn detect_edges(img: &FloatImage, low: f32, high: f32, blur_sigma: f64) -> Result<EdgeMap, EdgeError> {
    if img.is_empty() {
        return Err(EdgeError::EmptyImage);
    }
    if !(low > 0.0 && low < high) {
        return Err(EdgeError::InvalidThresholds { low, high });
    }
    let smooth = gaussian_blur(img, blur_sigma);
    let (w, h) = (img.width(), img.height());
    let mut gx = FloatImage::filled(w, h, 0.0);
    let mut gy = FloatImage::filled(w, h, 0.0);
    let mut mag = FloatImage::filled(w, h, 0.0);
    for y in 0..h {
        for x in 0..w {
            let p = |dx: isize, dy: isize| smooth.get_clamped(x as isize + dx, y as isize + dy);
            let sx = p(1, -1) + 2.0 * p(1, 0) + p(1, 1) - p(-1, -1) - 2.0 * p(-1, 0) - p(-1, 1);
            let sy = p(-1, 1) + 2.0 * p(0, 1) + p(1, 1) - p(-1, -1) - 2.0 * p(0, -1) - p(1, -1);
            gx.set(x, y, sx);
            gy.set(x, y, sy);
            mag.set(x, y, (sx * sx + sy * sy).sqrt());
        }
    }

    // 0 = strong, 1 = weak, 2 = none
    let mut class = Raster::filled(w, h, 2u8);
    let mut sub_v = FloatImage::filled(w, h, 0.0);
    for y in 0..h {
        for x in 0..w {
            let m = mag.get(x, y);
            if m < low {
                continue;
            }
            let (dx, dy) = quantize_direction(gx.get(x, y), gy.get(x, y));
            let at = |sx: isize, sy: isize| mag.get_clamped(x as isize + sx, y as isize + sy);
            let (m1, m2) = (at(dx, dy), at(-dx, -dy));
            // ties broken towards the forward neighbour to keep chains 1 px thick
            if m < m2 || m <= m1 {
                continue;
            }
            class.set(x, y, if m >= high { 0 } else { 1 });
            let (up, down) = (at(0, -1), at(0, 1));
            let denom = up - 2.0 * m + down;
            if denom < 0.0 {
                sub_v.set(x, y, (0.5 * (up - down) / denom).clamp(-0.5, 0.5));
            }
        }
    }

    let mut mask = Raster::filled(w, h, false);
    let mut stack: Vec<(usize, usize)> = Vec::new();
    for y in 0..h {
        for x in 0..w {
            if class.get(x, y) == 0 && !mask.get(x, y) {
                mask.set(x, y, true);
                stack.push((x, y));
                while let Some((cx, cy)) = stack.pop() {
                    for ny in cy.saturating_sub(1)..(cy + 2).min(h) {
                        for nx in cx.saturating_sub(1)..(cx + 2).min(w) {
                            if class.get(nx, ny) < 2 && !mask.get(nx, ny) {
                                mask.set(nx, ny, true);
                                stack.push((nx, ny));
                            }
                        }
                    }
                }
            }
        }
    }
    for (s, &m) in sub_v.data_mut().iter_mut().zip(mask.data()) {
        if !m {
            *s = 0.0;
        }
    }
    Ok(EdgeMap { mask, sub_v, gx, gy })
}

fn quantize_direction(gx: f32, gy: f32) -> (isize, isize) {
    let angle = gy.atan2(gx).to_degrees();
    let a = if angle < 0.0 { angle + 180.0 } else { angle };
    if !(22.5..157.5).contains(&a) {
        (1, 0)
    } else if a < 67.5 {
        (1, 1)
    } else if a < 112.5 {
        (0, 1)
    } else {
        (-1, 1)
    }
}

/// Hough line with the edge pixels that support it, in raster coordinates.
#[derive(Debug, Clone)]
pub struct SupportedLine {
    pub line: Line2,
    pub votes: f64,
    pub support: Vec<Point2<f64>>,
}

/// Coarse (angle, offset) accumulator followed by least-squares refinement.
///
/// Offsets are binned at 1 px. Local accumulator maxima seed a refinement
/// that fits the sub-pixel edge points within a shrinking band; the number
/// of points within 1 px of the refined line is its vote count.
pub fn vote_lines_with_support(edges: &EdgeMap, cfg: &HoughConfig) -> Vec<SupportedLine> {
    let (w, h) = (edges.mask.width(), edges.mask.height());
    let mut points = Vec::new();
    for y in 0..h {
        for x in 0..w {
            // steep edges cannot belong to a near-horizontal line
            if edges.mask.get(x, y) && edges.gx.get(x, y).abs() <= edges.gy.get(x, y).abs() {
                points.push(Point2::new(x as f64, y as f64 + edges.sub_v.get(x, y) as f64));
            }
        }
    }
    if points.is_empty() || cfg.max_lines == 0 {
        return Vec::new();
    }
    let uc = (w as f64 - 1.0) / 2.0;
    let n_half = (cfg.angle_band_deg / cfg.angle_step_deg).floor() as i64;
    let angles: Vec<f64> = (-n_half..=n_half).map(|k| (k as f64 * cfg.angle_step_deg).to_radians()).collect();
    let rho_max = (uc.abs() + h as f64).ceil() as i64 + 2;
    let n_rho = (2 * rho_max + 1) as usize;
    let mut acc = vec![0u32; angles.len() * n_rho];
    for p in &points {
        let (u, v) = (p.x - uc, p.y.round());
        for (ai, phi) in angles.iter().enumerate() {
            let rho = v * phi.cos() - u * phi.sin();
            let ri = (rho.round() as i64 + rho_max) as usize;
            acc[ai * n_rho + ri] += 1;
        }
    }

    let min_votes = cfg.min_votes_fraction * w as f64;
    let seed_votes = (0.1 * w as f64).max(5.0) as u32;
    let mut seeds = Vec::new();
    for ai in 0..angles.len() {
        for ri in 0..n_rho {
            let c = acc[ai * n_rho + ri];
            if c < seed_votes {
                continue;
            }
            let mut is_peak = true;
            'nb: for da in -1i64..=1 {
                for dr in -2i64..=2 {
                    let (a2, r2) = (ai as i64 + da, ri as i64 + dr);
                    if (da, dr) == (0, 0) || a2 < 0 || r2 < 0 || a2 >= angles.len() as i64 || r2 >= n_rho as i64 {
                        continue;
                    }
                    let c2 = acc[a2 as usize * n_rho + r2 as usize];
                    // plateau ties resolved by scan order
                    if c2 > c || (c2 == c && (a2, r2) < (ai as i64, ri as i64)) {
                        is_peak = false;
                        break 'nb;
                    }
                }
            }
            if is_peak {
                seeds.push((c, ai, ri));
            }
        }
    }
    seeds.sort_by(|x, y| y.0.cmp(&x.0).then(x.1.cmp(&y.1)).then(x.2.cmp(&y.2)));
    seeds.truncate(64);

    let mut found: Vec<SupportedLine> = Vec::new();
    for (_, ai, ri) in seeds {
        let phi = angles[ai];
        let rho = ri as f64 - rho_max as f64;
        // v = tan(phi) * (u - uc) + rho / cos(phi)
        let mut a = phi.tan();
        let mut b = rho / phi.cos() - a * uc;
        let mut ok = true;
        for band in [2.0, 1.5, 1.0] {
            let sel: Vec<&Point2<f64>> = points.iter().filter(|p| (p.y - a * p.x - b).abs() <= band).collect();
            match fit_line(sel.iter().map(|p| (p.x, p.y))) {
                Some((na, nb)) => {
                    a = na;
                    b = nb;
                }
                None => {
                    ok = false;
                    break;
                }
            }
        }
        if !ok || a.abs() > cfg.angle_band_deg.to_radians().tan() + 1e-9 {
            continue;
        }
        let support: Vec<Point2<f64>> = points.iter().filter(|p| (p.y - a * p.x - b).abs() <= 1.0).copied().collect();
        let votes = support.len() as f64;
        if votes < min_votes {
            continue;
        }
        let Ok(line) = Line2::new(a, b) else { continue };
        let duplicate = found.iter().any(|f| {
            (f.line.v_at(0.0) - line.v_at(0.0)).abs() <= 1.5 && (f.line.v_at(w as f64 - 1.0) - line.v_at(w as f64 - 1.0)).abs() <= 1.5
        });
        if !duplicate {
            found.push(SupportedLine { line, votes, support });
        }
    }
    found.sort_by(|x, y| y.votes.total_cmp(&x.votes).then(y.line.b.total_cmp(&x.line.b)));
    found.truncate(cfg.max_lines);
    found
}

pub fn vote_lines(edges: &EdgeMap, cfg: &HoughConfig) -> LineSet {
    LineSet {
        lines: vote_lines_with_support(edges, cfg)
            .into_iter()
            .map(|s| VotedLine { line: s.line, votes: s.votes })
            .collect(),
    }
}

/// Ordinary least squares `v = a·u + b`; `None` for fewer than 3 points or no
/// horizontal spread.
pub fn fit_line(pts: impl Iterator<Item = (f64, f64)>) -> Option<(f64, f64)> {
    let (mut n, mut su, mut sv, mut suu, mut suv) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for (u, v) in pts {
        n += 1.0;
        su += u;
        sv += v;
        suu += u * u;
        suv += u * v;
    }
    if n < 3.0 {
        return None;
    }
    let var = suu - su * su / n;
    if var < 1e-6 * n {
        return None;
    }
    let a = (suv - su * sv / n) / var;
    Some((a, (sv - a * su) / n))
}

/// Merges lines closer than the tolerances on both `a` and `b` (single
/// linkage); each cluster becomes the mean line with the summed votes.
///
/// Merging repeats until no pair is within tolerance, so the result is a
/// fixed point. Output is ordered by votes, then by intercept.
pub fn cluster_lines(ls: &LineSet, tol: &ClusterTolerance) -> LineSet {
    let mut current = ls.lines.clone();
    loop {
        let n = current.len();
        let mut parent: Vec<usize> = (0..n).collect();
        fn root(p: &mut [usize], mut i: usize) -> usize {
            while p[i] != i {
                p[i] = p[p[i]];
                i = p[i];
            }
            i
        }
        for i in 0..n {
            for j in i + 1..n {
                let (li, lj) = (current[i].line, current[j].line);
                if (li.a - lj.a).abs() <= tol.tol_a && (li.b - lj.b).abs() <= tol.tol_b {
                    let (ri, rj) = (root(&mut parent, i), root(&mut parent, j));
                    parent[ri.max(rj)] = ri.min(rj);
                }
            }
        }
        let mut groups: Vec<Vec<usize>> = Vec::new();
        let mut index_of = vec![usize::MAX; n];
        for i in 0..n {
            let r = root(&mut parent, i);
            if index_of[r] == usize::MAX {
                index_of[r] = groups.len();
                groups.push(Vec::new());
            }
            groups[index_of[r]].push(i);
        }
        let merged = groups.len() < n;
        let mut next: Vec<VotedLine> = groups
            .iter()
            .map(|g| {
                let k = g.len() as f64;
                let a = g.iter().map(|&i| current[i].line.a).sum::<f64>() / k;
                let b = g.iter().map(|&i| current[i].line.b).sum::<f64>() / k;
                VotedLine { line: Line2 { a, b }, votes: g.iter().map(|&i| current[i].votes).sum() }
            })
            .collect();
        next.sort_by(|x, y| y.votes.total_cmp(&x.votes).then(y.line.b.total_cmp(&x.line.b)));
        current = next;
        if !merged {
            return LineSet { lines: current };
        }
    }
}

/// Intermediate products of one extraction, kept for debugging.
#[derive(Debug, Clone)]
pub struct Extraction {
    pub warped: WarpedCsr,
    pub edges: EdgeMap,
    /// Lines in warped raster coordinates.
    pub remapped: Vec<SupportedLine>,
    /// Final lines in original image coordinates, lowest first.
    pub lines: LineSet,
}

/// Back-maps one remapped line. Supporting edge points are inverse mapped and
/// refitted in the original image, where the curb edges are straight; the
/// sampled-chord mapping is the fallback when the support is unusable.
fn back_map(line: &SupportedLine, warped: &WarpedCsr, cfg: &RemapConfig) -> Result<Line2, RemapError> {
    let mapped: Vec<Point2<f64>> = line
        .support
        .iter()
        .filter_map(|p| {
            let r = warped.to_remapped(p);
            cfg.inverse_map(r.x, r.y).ok()
        })
        .collect();
    if let Some((a, b)) = fit_line(mapped.iter().map(|p| (p.x, p.y))) {
        if let Ok(l) = Line2::new(a, b) {
            return Ok(l);
        }
    }
    let (u_min, u_max) = warped.column_span();
    Ok(map_line_to_original(&warped.line_to_remapped(&line.line), cfg, u_min, u_max)?.0)
}

pub fn extract_lines_detailed(
    frame: &GrayImage,
    csr: &Csr,
    remap: &RemapConfig,
    cdd: &CddConfig,
    warp: &WarpSettings,
    cfg: &LineExtractionConfig,
) -> Result<Extraction, ExtractError> {
    let warped = warp_csr(frame, csr, remap, cdd, warp)?;
    let edges = detect_edges(&warped.image, cfg.edges.low, cfg.edges.high, cfg.edges.blur_sigma)?;
    let remapped = vote_lines_with_support(&edges, &cfg.hough);
    let mut original = LineSet::default();
    for l in &remapped {
        original.lines.push(VotedLine { line: back_map(l, &warped, remap)?, votes: l.votes });
    }
    let mut lines = cluster_lines(&original, &cfg.cluster);
    lines.lines.sort_by(|x, y| y.line.b.total_cmp(&x.line.b));
    Ok(Extraction { warped, edges, remapped, lines })
}

/// Candidate curb-edge lines of a frame in original image coordinates,
/// sorted by intercept, lowest line in the image first.
pub fn extract_lines(
    frame: &GrayImage,
    csr: &Csr,
    remap: &RemapConfig,
    cdd: &CddConfig,
    warp: &WarpSettings,
    cfg: &LineExtractionConfig,
) -> Result<LineSet, ExtractError> {
    Ok(extract_lines_detailed(frame, csr, remap, cdd, warp, cfg)?.lines)
}

/// Draws lines into a copy of `img` with intensity 255.
pub fn overlay_lines(img: &GrayImage, lines: impl IntoIterator<Item = Line2>) -> GrayImage {
    let mut out = img.clone();
    let (w, h) = (out.width(), out.height());
    for l in lines {
        for u in 0..w {
            let v = l.v_at(u as f64).round();
            if v >= 0.0 && (v as usize) < h {
                out.set(u, v as usize, 255);
            }
        }
    }
    out
}

/// Writes `warped.pgm`, `edges.pgm`, `lines.pgm` (remapped overlay) and
/// `frame_lines.pgm` (original overlay) into `dir`.
pub fn write_debug(dir: &Path, frame: &GrayImage, ex: &Extraction) -> std::io::Result<()> {
    std::fs::create_dir_all(dir)?;
    let warped = ex.warped.image.to_gray();
    save_pgm(dir.join("warped.pgm"), &warped, &[])?;
    save_pgm(dir.join("edges.pgm"), &ex.edges.to_gray(), &[])?;
    save_pgm(dir.join("lines.pgm"), &overlay_lines(&warped, ex.remapped.iter().map(|l| l.line)), &[])?;
    save_pgm(dir.join("frame_lines.pgm"), &overlay_lines(frame, ex.lines.iter_lines().copied()), &[])
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn line_image(w: usize, h: usize, lines: &[(f64, f64, usize, usize)], bg: f32, fg: f32) -> FloatImage {
        // each entry is (a, b, u_start, u_end); pixels below the line get `fg`
        let mut img = FloatImage::filled(w, h, bg);
        for &(a, b, u0, u1) in lines {
            for u in u0..u1 {
                let v = a * u as f64 + b;
                for y in 0..h {
                    if (y as f64) > v && (y as f64) < v + 3.0 {
                        img.set(u, y, fg);
                    }
                }
            }
        }
        img
    }

    #[test]
    fn constant_image_has_no_edges() {
        let img = FloatImage::filled(40, 30, 77.0);
        assert_eq!(detect_edges(&img, 40.0, 100.0, 1.2).unwrap().count(), 0);
    }

    #[test]
    fn empty_image_and_bad_thresholds_are_rejected() {
        assert_eq!(detect_edges(&FloatImage::filled(0, 0, 0.0), 40.0, 100.0, 1.2).unwrap_err(), EdgeError::EmptyImage);
        let img = FloatImage::filled(4, 4, 0.0);
        assert!(detect_edges(&img, 100.0, 40.0, 1.2).is_err());
        assert!(detect_edges(&img, 0.0, 40.0, 1.2).is_err());
    }

    #[test]
    fn horizontal_step_gives_one_thin_chain() {
        let mut img = FloatImage::filled(50, 40, 50.0);
        for y in 20..40 {
            for x in 0..50 {
                img.set(x, y, 150.0);
            }
        }
        let e = detect_edges(&img, 40.0, 100.0, 1.2).unwrap();
        for x in 2..48 {
            let rows: Vec<usize> = (0..40).filter(|&y| e.mask.get(x, y)).collect();
            assert_eq!(rows.len(), 1, "column {x}: {rows:?}");
            let v = rows[0] as f64 + e.sub_v.get(x, rows[0]) as f64;
            assert!((v - 19.5).abs() < 0.1, "column {x}: {v}");
        }
    }

    #[test]
    fn single_line_is_recovered() {
        let (a, b) = (0.1, 30.0);
        let img = line_image(300, 120, &[(a, b, 0, 300)], 60.0, 160.0);
        let e = detect_edges(&img, 40.0, 100.0, 1.2).unwrap();
        let ls = vote_lines(&e, &HoughConfig::default());
        // the rendered band has an upper and a lower boundary
        assert_eq!(ls.len(), 2);
        let top = ls.lines.iter().min_by(|x, y| x.line.b.total_cmp(&y.line.b)).unwrap().line;
        assert!((top.a.atan() - a.atan()).abs().to_degrees() < 0.5);
        assert!((top.b - (b + 0.5)).abs() < 1.0, "{top:?}");
    }

    #[test]
    fn six_line_cap_keeps_the_longest() {
        let mut lines = Vec::new();
        for k in 0..8 {
            // lengths 300, 290, ..., 230 px; all above the 50% vote floor
            lines.push((0.0, 15.0 + 12.0 * k as f64, 0, 300 - 10 * k));
        }
        let img = line_image(300, 120, &lines, 60.0, 160.0);
        let e = detect_edges(&img, 40.0, 100.0, 1.2).unwrap();
        let ls = vote_lines(&e, &HoughConfig::default());
        assert_eq!(ls.len(), 6);
        for l in &ls.lines {
            assert!(l.line.b < 15.0 + 12.0 * 3.0 + 4.0, "{l:?}");
        }
    }

    #[test]
    fn empty_edge_map_gives_no_lines() {
        let e = detect_edges(&FloatImage::filled(30, 30, 1.0), 40.0, 100.0, 1.2).unwrap();
        assert!(vote_lines(&e, &HoughConfig::default()).is_empty());
    }

    fn ls(items: &[(f64, f64, f64)]) -> LineSet {
        LineSet { lines: items.iter().map(|&(a, b, v)| VotedLine { line: Line2 { a, b }, votes: v }).collect() }
    }

    #[test]
    fn close_lines_merge_to_their_mean() {
        let out = cluster_lines(&ls(&[(0.01, 100.2, 5.0), (0.012, 100.9, 3.0)]), &ClusterTolerance { tol_a: 0.05, tol_b: 2.0 });
        assert_eq!(out.len(), 1);
        assert!((out.lines[0].line.a - 0.011).abs() < 1e-12);
        assert!((out.lines[0].line.b - 100.55).abs() < 1e-12);
        assert_eq!(out.lines[0].votes, 8.0);
    }

    #[test]
    fn distant_lines_are_unchanged() {
        let input = ls(&[(0.0, 100.0, 5.0), (0.0, 110.0, 3.0), (0.2, 100.0, 2.0)]);
        let out = cluster_lines(&input, &ClusterTolerance::default());
        assert_eq!(out, input);
    }

    proptest! {
        #[test]
        fn clustering_is_idempotent_and_conserves_votes(
            items in prop::collection::vec((-0.1f64..0.1, 0.0f64..30.0, 1.0f64..100.0), 0..8)
        ) {
            let tol = ClusterTolerance::default();
            let once = cluster_lines(&ls(&items), &tol);
            let twice = cluster_lines(&once, &tol);
            prop_assert_eq!(&once, &twice);
            prop_assert!(once.len() <= items.len());
            let total: f64 = items.iter().map(|i| i.2).sum();
            prop_assert!((once.total_votes() - total).abs() < 1e-9);
        }

        #[test]
        fn hough_never_returns_more_than_six(n in 0usize..10, seed in 0u64..1000) {
            let lines: Vec<_> = (0..n)
                .map(|k| (((seed + k as u64) % 7) as f64 * 0.01 - 0.03, 8.0 + 11.0 * k as f64, 0, 200))
                .collect();
            let img = line_image(200, 130, &lines, 40.0, 200.0);
            let e = detect_edges(&img, 40.0, 100.0, 1.2).unwrap();
            prop_assert!(vote_lines(&e, &HoughConfig::default()).len() <= 6);
        }
    }
}
