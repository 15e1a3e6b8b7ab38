//! Built-in fiducial glyph detector.
//!
//! Pipeline: luminance threshold → connected components → solid-square
//! finder candidates → geometric grouping (L-shaped triple for TEXT, square
//! quad for FACE) → least-squares homography from finder bounding-box
//! corners → adaptive cell sampling → checksum-validated decode.
//!
//! Mirror reflections flip glyphs, so every hypothesis is tried under the
//! four axis flips. Confidence is 1.0 only on checksum pass; otherwise it is
//! the matched fraction of the known finder/gap template, and candidates
//! without enough local contrast are rejected outright so blurred glyphs
//! cannot masquerade as confident detections.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::glyph::{
    decode_payload_cells, decode_payload_cells_exact, is_finder_cell, PlaqueKind, FINDER_CELLS,
    MARKER_CELLS, PAYLOAD_CELLS, PAYLOAD_OFFSET,
};
use crate::raster::LinearImage;

/// Luminance below this reads as "dark" in the initial segmentation.
pub const DARK_THRESHOLD: f32 = 0.35;
/// Minimum white-minus-black luminance separation for a credible glyph.
pub const MIN_CONTRAST: f32 = 0.3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RegionClass {
    Face,
    Text,
}

/// A detected sensitive-information region on one image.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Region {
    pub frame_id: u32,
    /// (x0, y0, x1, y1), inclusive-exclusive pixel bounds.
    pub bbox: (usize, usize, usize, usize),
    pub class: RegionClass,
    pub confidence: f64,
    pub decoded_payload: Option<String>,
}

impl Region {
    pub fn validate(&self, width: usize, height: usize) -> crate::Result<()> {
        let (x0, y0, x1, y1) = self.bbox;
        if x0 >= x1 || x1 > width || y0 >= y1 || y1 > height {
            return Err(crate::Error::InvalidInput(format!(
                "region bbox ({x0},{y0},{x1},{y1}) out of bounds for {width}x{height}"
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy)]
struct Candidate {
    /// Inclusive pixel bounds.
    bbox: (usize, usize, usize, usize),
    center: (f64, f64),
}

fn find_candidates(img: &LinearImage) -> Vec<Candidate> {
    let (w, h) = (img.width, img.height);
    let dark: Vec<bool> = (0..w * h)
        .map(|i| img.luminance(i % w, i / w) < DARK_THRESHOLD)
        .collect();
    let mut labels = vec![u32::MAX; w * h];
    let mut comps: Vec<(usize, usize, usize, usize, usize)> = Vec::new(); // x0,y0,x1,y1,count
    let mut stack = Vec::new();
    for start in 0..w * h {
        if !dark[start] || labels[start] != u32::MAX {
            continue;
        }
        let id = comps.len() as u32;
        labels[start] = id;
        stack.push(start);
        let (mut x0, mut y0, mut x1, mut y1, mut n) = (w, h, 0usize, 0usize, 0usize);
        while let Some(i) = stack.pop() {
            let (x, y) = (i % w, i / w);
            n += 1;
            x0 = x0.min(x);
            y0 = y0.min(y);
            x1 = x1.max(x);
            y1 = y1.max(y);
            for dy in -1i64..=1 {
                for dx in -1i64..=1 {
                    let (nx, ny) = (x as i64 + dx, y as i64 + dy);
                    if nx < 0 || ny < 0 || nx >= w as i64 || ny >= h as i64 {
                        continue;
                    }
                    let j = ny as usize * w + nx as usize;
                    if dark[j] && labels[j] == u32::MAX {
                        labels[j] = id;
                        stack.push(j);
                    }
                }
            }
        }
        comps.push((x0, y0, x1, y1, n));
    }
    let mut out = Vec::new();
    for (x0, y0, x1, y1, n) in comps {
        let bw = x1 - x0 + 1;
        let bh = y1 - y0 + 1;
        if bw < 3 || bh < 3 || bw > w / 3 || bh > h / 3 {
            continue;
        }
        let fill = n as f64 / (bw * bh) as f64;
        let aspect = bw as f64 / bh as f64;
        if fill < 0.7 || !(0.45..=2.2).contains(&aspect) {
            continue;
        }
        out.push(Candidate {
            bbox: (x0, y0, x1, y1),
            center: ((x0 + x1) as f64 / 2.0 + 0.5, (y0 + y1) as f64 / 2.0 + 0.5),
        });
    }
    // Keep the grouping combinatorics bounded on busy images.
    out.truncate(64);
    out
}

/// 3x3 homography in row-major form mapping marker coordinates to pixels.
pub(crate) struct Homography(pub(crate) [f64; 9]);

impl Homography {
    pub(crate) fn apply(&self, x: f64, y: f64) -> (f64, f64) {
        let m = &self.0;
        let wv = m[6] * x + m[7] * y + m[8];
        (
            (m[0] * x + m[1] * y + m[2]) / wv,
            (m[3] * x + m[4] * y + m[5]) / wv,
        )
    }
}

/// Direct linear transform from point correspondences (least squares via
/// SVD); `None` for degenerate configurations.
pub(crate) fn dlt(pairs: &[((f64, f64), (f64, f64))]) -> Option<Homography> {
    let n = pairs.len();
    if n < 4 {
        return None;
    }
    // At least 9 rows (padding with zero rows as needed): a thin SVD of a
    // matrix with fewer rows than columns omits the null-space right singular
    // vector that holds the solution.
    let mut a = DMatrix::<f64>::zeros((2 * n).max(9), 9);
    for (i, ((mx, my), (px, py))) in pairs.iter().enumerate() {
        let r = 2 * i;
        a[(r, 0)] = *mx;
        a[(r, 1)] = *my;
        a[(r, 2)] = 1.0;
        a[(r, 6)] = -px * mx;
        a[(r, 7)] = -px * my;
        a[(r, 8)] = -px;
        a[(r + 1, 3)] = *mx;
        a[(r + 1, 4)] = *my;
        a[(r + 1, 5)] = 1.0;
        a[(r + 1, 6)] = -py * mx;
        a[(r + 1, 7)] = -py * my;
        a[(r + 1, 8)] = -py;
    }
    let svd = a.svd(false, true);
    let vt = svd.v_t?;
    // Row of V^T for the smallest singular value (nalgebra does not promise
    // any ordering of the singular values).
    let min_idx = svd
        .singular_values
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.partial_cmp(b.1).unwrap())?
        .0;
    let hvec = vt.row(min_idx);
    let mut h = [0.0; 9];
    for (i, v) in hvec.iter().enumerate() {
        h[i] = *v;
    }
    if h[8].abs() < 1e-12 && h[6].abs() < 1e-12 && h[7].abs() < 1e-12 {
        return None;
    }
    Some(Homography(h))
}

#[derive(Debug, Clone, Copy)]
enum Flip {
    None,
    X,
    Y,
    Both,
}

impl Flip {
    const ALL: [Flip; 4] = [Flip::None, Flip::X, Flip::Y, Flip::Both];

    fn apply(&self, x: f64, y: f64) -> (f64, f64) {
        let m = MARKER_CELLS as f64;
        match self {
            Flip::None => (x, y),
            Flip::X => (m - x, y),
            Flip::Y => (x, m - y),
            Flip::Both => (m - x, m - y),
        }
    }
}

/// Marker-space boxes of the three/four finder squares: TL, TR, BL, BR.
const FINDER_BOXES: [(f64, f64, f64, f64); 4] = {
    let f = FINDER_CELLS as f64;
    let m = MARKER_CELLS as f64;
    [
        (0.0, 0.0, f, f),
        (m - f, 0.0, m, f),
        (0.0, m - f, f, m),
        (m - f, m - f, m, m),
    ]
};

fn box_corners_flipped(b: (f64, f64, f64, f64), flip: Flip) -> [(f64, f64); 4] {
    let (ax, ay) = flip.apply(b.0, b.1);
    let (bx, by) = flip.apply(b.2, b.3);
    let (x0, x1) = (ax.min(bx), ax.max(bx));
    let (y0, y1) = (ay.min(by), ay.max(by));
    [(x0, y0), (x1, y0), (x0, y1), (x1, y1)]
}

fn candidate_corners(c: &Candidate) -> [(f64, f64); 4] {
    let (x0, y0, x1, y1) = c.bbox;
    let (x0, y0) = (x0 as f64, y0 as f64);
    let (x1, y1) = (x1 as f64 + 1.0, y1 as f64 + 1.0);
    [(x0, y0), (x1, y0), (x0, y1), (x1, y1)]
}

/// Luminance sample at a continuous pixel position; out-of-bounds reads as
/// bright so truncated glyphs fail cleanly.
fn lum_at(img: &LinearImage, x: f64, y: f64) -> f32 {
    if x < 0.0 || y < 0.0 {
        return 1.0;
    }
    let (xi, yi) = (x.floor() as usize, y.floor() as usize);
    if xi >= img.width || yi >= img.height {
        return 1.0;
    }
    img.luminance(xi, yi)
}

struct SampledGlyph {
    /// Marker cells, row-major, `true` = dark.
    cells: Vec<bool>,
    contrast: f32,
}

/// Sample all marker cells through the homography with 3x3 majority voting
/// per cell and an adaptive mid-reference threshold.
fn sample_marker(img: &LinearImage, hom: &Homography, flip: Flip) -> SampledGlyph {
    let offs = [-1.0 / 3.0, 0.0, 1.0 / 3.0];
    let sample_cell_lum = |row: usize, col: usize| -> f32 {
        let mut acc = 0.0f32;
        for oy in offs {
            for ox in offs {
                let (mx, my) = flip.apply(col as f64 + 0.5 + ox, row as f64 + 0.5 + oy);
                let (px, py) = hom.apply(mx, my);
                acc += lum_at(img, px, py);
            }
        }
        acc / 9.0
    };
    // Reference levels: finder interiors should be dark, the gap ring just
    // inside the finders should be light.
    let mut black = 0.0f32;
    let mut nb = 0;
    for (row, col) in [
        (1usize, 1usize),
        (1, MARKER_CELLS - 2),
        (MARKER_CELLS - 2, 1),
    ] {
        black += sample_cell_lum(row, col);
        nb += 1;
    }
    black /= nb as f32;
    let gap = FINDER_CELLS; // row/col index of the white gap ring
    let mut white = 0.0f32;
    let mut nw = 0;
    for col in [gap, MARKER_CELLS / 2, MARKER_CELLS - 1 - gap] {
        white += sample_cell_lum(gap, col);
        white += sample_cell_lum(MARKER_CELLS - 1 - gap, col);
        nw += 2;
    }
    white /= nw as f32;
    let mid = (black + white) / 2.0;
    let mut cells = vec![false; MARKER_CELLS * MARKER_CELLS];
    for row in 0..MARKER_CELLS {
        for col in 0..MARKER_CELLS {
            let mut votes = 0;
            for oy in offs {
                for ox in offs {
                    let (mx, my) = flip.apply(col as f64 + 0.5 + ox, row as f64 + 0.5 + oy);
                    let (px, py) = hom.apply(mx, my);
                    if lum_at(img, px, py) < mid {
                        votes += 1;
                    }
                }
            }
            cells[row * MARKER_CELLS + col] = votes >= 5;
        }
    }
    SampledGlyph {
        cells,
        contrast: white - black,
    }
}

/// Fraction of deterministic template cells (finder squares dark, gap ring
/// light) matching the sampled grid.
fn template_match_fraction(cells: &[bool], kind: PlaqueKind) -> f64 {
    let gap0 = FINDER_CELLS;
    let gap1 = MARKER_CELLS - 1 - FINDER_CELLS;
    let mut matches = 0usize;
    let mut total = 0usize;
    for row in 0..MARKER_CELLS {
        for col in 0..MARKER_CELLS {
            let expected = if is_finder_cell(row, col, kind) {
                Some(true)
            } else if row == gap0 || row == gap1 || col == gap0 || col == gap1 {
                Some(false)
            } else {
                None
            };
            if let Some(e) = expected {
                total += 1;
                if cells[row * MARKER_CELLS + col] == e {
                    matches += 1;
                }
            }
        }
    }
    matches as f64 / total as f64
}

fn payload_cells(cells: &[bool]) -> Vec<bool> {
    let mut out = Vec::with_capacity(PAYLOAD_CELLS * PAYLOAD_CELLS);
    for row in 0..PAYLOAD_CELLS {
        for col in 0..PAYLOAD_CELLS {
            out.push(cells[(row + PAYLOAD_OFFSET) * MARKER_CELLS + col + PAYLOAD_OFFSET]);
        }
    }
    out
}

fn marker_bbox_pixels(
    hom: &Homography,
    width: usize,
    height: usize,
) -> (usize, usize, usize, usize) {
    let m = MARKER_CELLS as f64;
    let pts = [(0.0, 0.0), (m, 0.0), (0.0, m), (m, m)];
    let (mut x0, mut y0, mut x1, mut y1) = (f64::INFINITY, f64::INFINITY, 0.0f64, 0.0f64);
    for (x, y) in pts {
        let (px, py) = hom.apply(x, y);
        x0 = x0.min(px);
        y0 = y0.min(py);
        x1 = x1.max(px);
        y1 = y1.max(py);
    }
    let cx0 = x0.floor().max(0.0) as usize;
    let cy0 = y0.floor().max(0.0) as usize;
    let cx1 = (x1.ceil() as usize).min(width).max(cx0 + 1);
    let cy1 = (y1.ceil() as usize).min(height).max(cy0 + 1);
    (cx0, cy0, cx1.min(width), cy1.min(height))
}

struct Hypothesis {
    /// Candidate indices: right-angle corner, horizontal neighbor, vertical
    /// neighbor, optional fourth.
    a: usize,
    b: usize,
    c: usize,
    d: Option<usize>,
}

fn group_hypotheses(cands: &[Candidate]) -> Vec<Hypothesis> {
    let expected_ratio = (MARKER_CELLS - FINDER_CELLS) as f64 / FINDER_CELLS as f64; // 5.5
    let mut out = Vec::new();
    let n = cands.len();
    for a in 0..n {
        for b in 0..n {
            if b == a {
                continue;
            }
            for c in b + 1..n {
                if c == a {
                    continue;
                }
                let (ax, ay) = cands[a].center;
                let v1 = (cands[b].center.0 - ax, cands[b].center.1 - ay);
                let v2 = (cands[c].center.0 - ax, cands[c].center.1 - ay);
                let l1 = (v1.0 * v1.0 + v1.1 * v1.1).sqrt();
                let l2 = (v2.0 * v2.0 + v2.1 * v2.1).sqrt();
                if l1 < 1.0 || l2 < 1.0 || l1 / l2 > 2.5 || l2 / l1 > 2.5 {
                    continue;
                }
                let cosang = (v1.0 * v2.0 + v1.1 * v2.1) / (l1 * l2);
                if cosang.abs() > 0.3 {
                    continue;
                }
                // Spacing-to-finder-size ratio, checked per leg against the
                // candidates' bbox extent along the leg's dominant axis so an
                // anisotropic (foreshortened) view still passes.
                let extent = |i: usize, v: (f64, f64)| -> f64 {
                    let (x0, y0, x1, y1) = cands[i].bbox;
                    if v.0.abs() >= v.1.abs() {
                        (x1 - x0 + 1) as f64
                    } else {
                        (y1 - y0 + 1) as f64
                    }
                };
                let r1 = 2.0 * l1 / (extent(a, v1) + extent(b, v1));
                let r2 = 2.0 * l2 / (extent(a, v2) + extent(c, v2));
                if r1 < 0.55 * expected_ratio
                    || r1 > 1.7 * expected_ratio
                    || r2 < 0.55 * expected_ratio
                    || r2 > 1.7 * expected_ratio
                {
                    continue;
                }
                let spacing = (l1 + l2) / 2.0;
                // Predicted fourth corner for FACE glyphs.
                let dx = cands[b].center.0 + cands[c].center.0 - ax;
                let dy = cands[b].center.1 + cands[c].center.1 - ay;
                let fourth = (0..n).filter(|&i| i != a && i != b && i != c).find(|&i| {
                    let (ix, iy) = cands[i].center;
                    ((ix - dx).powi(2) + (iy - dy).powi(2)).sqrt() < 0.25 * spacing
                });
                out.push(Hypothesis { a, b, c, d: fourth });
            }
        }
    }
    out
}

/// Run the built-in detector on one linear-light image.
pub fn detect_glyphs(img: &LinearImage) -> Vec<Region> {
    let cands = find_candidates(img);
    let mut regions: Vec<Region> = Vec::new();
    for hyp in group_hypotheses(&cands) {
        let mut best: Option<Region> = None;
        // Exact decodes first across every orientation: a merged (error-
        // corrected) decode of a wrongly-oriented sampling must never preempt
        // a clean decode of the right one.
        'flips: for strict in [true, false] {
            for flip in Flip::ALL {
                for swap in [false, true] {
                    let (bi, ci) = if swap { (hyp.c, hyp.b) } else { (hyp.b, hyp.c) };
                    let mut pairs = Vec::with_capacity(16);
                    let mut add = |box_idx: usize, cand: &Candidate| {
                        let mk = box_corners_flipped(FINDER_BOXES[box_idx], flip);
                        let px = candidate_corners(cand);
                        for (m, p) in mk.iter().zip(px.iter()) {
                            pairs.push((*m, *p));
                        }
                    };
                    add(0, &cands[hyp.a]);
                    add(1, &cands[bi]);
                    add(2, &cands[ci]);
                    if let Some(d) = hyp.d {
                        add(3, &cands[d]);
                    }
                    let Some(hom) = dlt(&pairs) else { continue };
                    let sampled = sample_marker(img, &hom, flip);
                    if sampled.contrast < MIN_CONTRAST {
                        continue;
                    }
                    let bbox = marker_bbox_pixels(&hom, img.width, img.height);
                    let kind_guess = if hyp.d.is_some() {
                        PlaqueKind::Face
                    } else {
                        PlaqueKind::Text
                    };
                    let frac = template_match_fraction(&sampled.cells, kind_guess);
                    let decoded = if strict {
                        decode_payload_cells_exact(&payload_cells(&sampled.cells))
                    } else if frac >= 0.95 {
                        // The error-tolerant merged decode accepts any
                        // codeword near the sampled bits, and short payloads
                        // are near-zero codewords — so a ghost arrangement
                        // sampling mostly blank background could "decode".
                        // Nearly the entire deterministic finder/gap template
                        // must match before that tolerance is unlocked; a
                        // ghost cannot reproduce those hundred-odd
                        // geometry-determined cells.
                        decode_payload_cells(&payload_cells(&sampled.cells))
                    } else {
                        None
                    };
                    if let Some((payload, kind)) = decoded {
                        best = Some(Region {
                            frame_id: 0,
                            bbox,
                            class: match kind {
                                PlaqueKind::Face => RegionClass::Face,
                                PlaqueKind::Text => RegionClass::Text,
                            },
                            confidence: 1.0,
                            decoded_payload: Some(payload),
                        });
                        break 'flips;
                    }
                    if strict {
                        continue;
                    }
                    // Below this the "glyph" is mostly hallucinated geometry.
                    if frac >= 0.6 && frac > best.as_ref().map_or(0.0, |r| r.confidence) {
                        best = Some(Region {
                            frame_id: 0,
                            bbox,
                            class: match kind_guess {
                                PlaqueKind::Face => RegionClass::Face,
                                PlaqueKind::Text => RegionClass::Text,
                            },
                            confidence: frac,
                            decoded_payload: None,
                        });
                    }
                }
            }
        }
        if let Some(r) = best {
            regions.push(r);
        }
    }
    dedup_regions(regions)
}

fn overlap_fraction(a: (usize, usize, usize, usize), b: (usize, usize, usize, usize)) -> f64 {
    let ix = a.2.min(b.2).saturating_sub(a.0.max(b.0));
    let iy = a.3.min(b.3).saturating_sub(a.1.max(b.1));
    let inter = (ix * iy) as f64;
    let area_a = ((a.2 - a.0) * (a.3 - a.1)) as f64;
    let area_b = ((b.2 - b.0) * (b.3 - b.1)) as f64;
    inter / area_a.min(area_b).max(1.0)
}

fn dedup_regions(mut regions: Vec<Region>) -> Vec<Region> {
    regions.sort_by(|a, b| {
        b.confidence
            .partial_cmp(&a.confidence)
            .unwrap()
            // A decoded payload beats a bare template match at equal
            // confidence: a ghost arrangement can tile the deterministic
            // template cells perfectly while scrambling the payload.
            .then(
                b.decoded_payload
                    .is_some()
                    .cmp(&a.decoded_payload.is_some()),
            )
            .then(a.bbox.cmp(&b.bbox))
    });
    let mut kept: Vec<Region> = Vec::new();
    for r in regions {
        // Ghost hypotheses built from finder subsets of a real glyph always
        // intersect it substantially; suppress on any meaningful overlap.
        if kept.iter().all(|k| overlap_fraction(k.bbox, r.bbox) < 0.1) {
            kept.push(r);
        }
    }
    kept.sort_by_key(|r| r.bbox);
    kept
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::glyph::encode_plaque;
    use crate::raster::LinearImage;

    /// Paint a glyph (quiet border included) onto a light background.
    fn paint_glyph(
        img: &mut LinearImage,
        payload: &str,
        kind: PlaqueKind,
        x0: usize,
        y0: usize,
        cell: usize,
        mirror: bool,
    ) {
        let g = encode_plaque(payload, kind).unwrap();
        for row in 0..g.size {
            for col in 0..g.size {
                let src_col = if mirror { g.size - 1 - col } else { col };
                let v = if g.get(row, src_col) { 0.05f32 } else { 0.85 };
                for dy in 0..cell {
                    for dx in 0..cell {
                        img.set(x0 + col * cell + dx, y0 + row * cell + dy, [v; 3]);
                    }
                }
            }
        }
    }

    fn light_image(w: usize, h: usize) -> LinearImage {
        LinearImage::filled(w, h, [0.7; 3])
    }

    #[test]
    fn clean_text_glyph_decodes_with_full_confidence() {
        let mut img = light_image(300, 300);
        paint_glyph(
            &mut img,
            "LICENSE 12345",
            PlaqueKind::Text,
            40,
            50,
            6,
            false,
        );
        let regions = detect_glyphs(&img);
        assert_eq!(regions.len(), 1, "{regions:?}");
        let r = &regions[0];
        assert_eq!(r.class, RegionClass::Text);
        assert_eq!(r.confidence, 1.0);
        assert_eq!(r.decoded_payload.as_deref(), Some("LICENSE 12345"));
        // Marker bbox within the painted area.
        assert!(r.bbox.0 >= 40 && r.bbox.2 <= 40 + 30 * 6);
    }

    #[test]
    fn face_glyph_detected_with_four_finders() {
        let mut img = light_image(260, 260);
        paint_glyph(&mut img, "FACE ALICE", PlaqueKind::Face, 30, 30, 5, false);
        let regions = detect_glyphs(&img);
        assert_eq!(regions.len(), 1, "{regions:?}");
        assert_eq!(regions[0].class, RegionClass::Face, "{regions:?}");
        assert_eq!(
            regions[0].decoded_payload.as_deref(),
            Some("FACE ALICE"),
            "{regions:?}"
        );
    }

    #[test]
    fn mirrored_glyph_still_decodes() {
        let mut img = light_image(300, 300);
        paint_glyph(&mut img, "PASSPORT X91", PlaqueKind::Text, 60, 40, 6, true);
        let regions = detect_glyphs(&img);
        assert_eq!(regions.len(), 1);
        assert_eq!(regions[0].decoded_payload.as_deref(), Some("PASSPORT X91"));
        assert_eq!(regions[0].confidence, 1.0);
    }

    #[test]
    fn blank_image_yields_nothing() {
        assert!(detect_glyphs(&light_image(200, 200)).is_empty());
    }

    #[test]
    fn two_glyphs_detected_separately() {
        let mut img = light_image(500, 260);
        paint_glyph(&mut img, "CARD 4111", PlaqueKind::Text, 20, 30, 6, false);
        paint_glyph(&mut img, "FACE BOB", PlaqueKind::Face, 260, 30, 6, false);
        let mut regions = detect_glyphs(&img);
        regions.sort_by_key(|r| r.bbox.0);
        assert_eq!(regions.len(), 2, "{regions:?}");
        assert_eq!(regions[0].decoded_payload.as_deref(), Some("CARD 4111"));
        assert_eq!(regions[1].decoded_payload.as_deref(), Some("FACE BOB"));
    }

    #[test]
    fn occluded_glyph_never_wrong_payload_at_full_confidence() {
        for cover in [0.3f64, 0.5, 0.7] {
            let mut img = light_image(300, 300);
            paint_glyph(&mut img, "SECRET CODE", PlaqueKind::Text, 40, 40, 6, false);
            // Occlude the right portion of the glyph with background.
            let glyph_px = 30 * 6;
            let cut = 40 + ((1.0 - cover) * glyph_px as f64) as usize;
            for y in 40..40 + glyph_px {
                for x in cut..40 + glyph_px {
                    img.set(x, y, [0.7; 3]);
                }
            }
            for r in detect_glyphs(&img) {
                if r.confidence == 1.0 {
                    assert_eq!(r.decoded_payload.as_deref(), Some("SECRET CODE"));
                }
            }
        }
    }

    #[test]
    fn blurred_glyph_is_low_confidence_or_absent() {
        let mut img = light_image(300, 300);
        paint_glyph(
            &mut img,
            "LICENSE 12345",
            PlaqueKind::Text,
            40,
            50,
            6,
            false,
        );
        let blurred = crate::filter::gaussian_blur(&img, 15.0);
        for r in detect_glyphs(&blurred) {
            assert!(r.confidence < 0.5, "{r:?}");
            assert!(r.decoded_payload.is_none());
        }
    }

    #[test]
    fn perspective_compressed_glyph_decodes() {
        // Simulate a yaw view: horizontally squash the glyph to 55%.
        let mut flat = light_image(300, 300);
        paint_glyph(&mut flat, "EXP 09 29", PlaqueKind::Text, 30, 60, 8, false);
        let mut img = light_image(300, 300);
        for y in 0..300 {
            for x in 0..165 {
                img.set(60 + x, y, flat.sample_bilinear(x as f64 / 0.55, y as f64));
            }
        }
        let regions = detect_glyphs(&img);
        assert!(
            regions
                .iter()
                .any(|r| r.decoded_payload.as_deref() == Some("EXP 09 29")),
            "{regions:?}"
        );
    }
}
