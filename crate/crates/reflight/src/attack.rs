//! Reflection extraction attack: unwrap the reflective region of a rendered
//! virtual object into an undistorted view, run the glyph detector over the
//! evidence images, and score extraction success against the ground truth.
//!
//! Text success follows the absolute edit-distance rule: the decoded value
//! must be nonempty and within Levenshtein distance 9 of the truth. Face
//! success requires a face-class detection at confidence at least 0.5,
//! preferring an exact payload match and falling back to any remaining
//! confident face detection (the analog of a box-overlap check that does not
//! verify identity).

use serde::{Deserialize, Serialize};

use crate::detect::{detect_glyphs, dlt, Region, RegionClass};
use crate::geom::{project, Vec3};
use crate::metrics::levenshtein;
use crate::raster::LinearImage;
use crate::render::{RenderOutput, RenderView};
use crate::{Error, Result};

/// Edit distances below this count as successful text extraction.
pub const TEXT_DISTANCE_LIMIT: usize = 10;
/// Minimum detection confidence for a face extraction.
pub const FACE_CONFIDENCE_MIN: f64 = 0.5;

// ---------------------------------------------------------------------------
// Unwrapping
// ---------------------------------------------------------------------------

/// Project world-space corners into the view's pixel coordinates.
///
/// Errors if any corner is behind the camera.
pub fn project_corners(view: &RenderView, corners: &[Vec3; 4]) -> Result<[(f64, f64); 4]> {
    let world_to_cam = view.pose.invert();
    let mut out = [(0.0, 0.0); 4];
    for (i, c) in corners.iter().enumerate() {
        let cam = world_to_cam.apply(*c);
        out[i] = project(cam, &view.intrinsics).ok_or_else(|| {
            Error::InvalidInput(format!("corner {i} does not project into the view"))
        })?;
    }
    Ok(out)
}

fn collinear(a: (f64, f64), b: (f64, f64), c: (f64, f64)) -> bool {
    let cross = (b.0 - a.0) * (c.1 - a.1) - (b.1 - a.1) * (c.0 - a.0);
    let scale = ((b.0 - a.0).hypot(b.1 - a.1)) * ((c.0 - a.0).hypot(c.1 - a.1));
    cross.abs() < 1e-9 * scale.max(1.0)
}

/// Rectify the quadrilateral `corners` (pixel coordinates, in TL, TR, BR, BL
/// order) of a rendering into an axis-aligned `out_width` x `out_height`
/// image by homography with bilinear sampling.
pub fn unwrap_mirror(
    rendering: &LinearImage,
    corners: &[(f64, f64); 4],
    out_width: usize,
    out_height: usize,
) -> Result<LinearImage> {
    for i in 0..4 {
        for j in i + 1..4 {
            for k in j + 1..4 {
                if collinear(corners[i], corners[j], corners[k]) {
                    return Err(Error::InvalidInput(
                        "degenerate mirror quad: collinear projected corners".into(),
                    ));
                }
            }
        }
    }
    let (w, h) = (out_width as f64, out_height as f64);
    let dst = [(0.0, 0.0), (w, 0.0), (w, h), (0.0, h)];
    let pairs: Vec<_> = dst.iter().copied().zip(corners.iter().copied()).collect();
    let hom = dlt(&pairs)
        .ok_or_else(|| Error::InvalidInput("degenerate mirror quad: homography failed".into()))?;
    let mut out = LinearImage::new(out_width, out_height);
    for y in 0..out_height {
        for x in 0..out_width {
            let (px, py) = hom.apply(x as f64 + 0.5, y as f64 + 0.5);
            // Homography works in pixel-edge coordinates; bilinear sampling
            // indexes pixel centers.
            out.set(x, y, rendering.sample_bilinear(px - 0.5, py - 0.5));
        }
    }
    Ok(out)
}

/// A lat-long unwrap of a sphere reflection; cells nobody scattered into are
/// invalid and read as bright background.
#[derive(Debug, Clone)]
pub struct Panorama {
    pub image: LinearImage,
    pub valid: Vec<bool>,
}

impl Panorama {
    pub fn valid_fraction(&self) -> f64 {
        let n = self.valid.iter().filter(|&&v| v).count();
        n as f64 / self.valid.len().max(1) as f64
    }
}

/// Scatter each hit pixel's color to the lat-long cell of its emitted
/// reflection direction (x = azimuth, y = polar angle from +Y).
pub fn unwrap_sphere(rendering: &RenderOutput, out_width: usize, out_height: usize) -> Panorama {
    let mut sum = vec![[0.0f64; 3]; out_width * out_height];
    let mut count = vec![0u32; out_width * out_height];
    let img = &rendering.color;
    for y in 0..img.height {
        for x in 0..img.width {
            if !rendering.is_hit(x, y) {
                continue;
            }
            let d = rendering.reflection[y * img.width + x];
            let az = d.z.atan2(d.x);
            let polar = d.y.clamp(-1.0, 1.0).acos();
            let u = (((az / std::f64::consts::TAU + 0.5) * out_width as f64) as usize)
                .min(out_width - 1);
            let v =
                ((polar / std::f64::consts::PI * out_height as f64) as usize).min(out_height - 1);
            let c = img.get(x, y);
            for ch in 0..3 {
                sum[v * out_width + u][ch] += c[ch] as f64;
            }
            count[v * out_width + u] += 1;
        }
    }
    let mut image = LinearImage::filled(out_width, out_height, [1.0; 3]);
    let mut valid = vec![false; out_width * out_height];
    for i in 0..out_width * out_height {
        if count[i] > 0 {
            valid[i] = true;
            image.set(
                i % out_width,
                i / out_width,
                [
                    (sum[i][0] / count[i] as f64) as f32,
                    (sum[i][1] / count[i] as f64) as f32,
                    (sum[i][2] / count[i] as f64) as f32,
                ],
            );
        }
    }
    Panorama { image, valid }
}

/// Fill invalid panorama cells from the mean of valid neighbors, repeatedly.
/// Validity flags are updated as cells fill, so decoding sees a closed image.
pub fn close_panorama_holes(pano: &mut Panorama, passes: usize) {
    let (w, h) = (pano.image.width, pano.image.height);
    for _ in 0..passes {
        let prev = pano.image.clone();
        let prev_valid = pano.valid.clone();
        let mut changed = false;
        for y in 0..h {
            for x in 0..w {
                if prev_valid[y * w + x] {
                    continue;
                }
                let mut acc = [0.0f32; 3];
                let mut n = 0;
                for dy in -1i64..=1 {
                    for dx in -1i64..=1 {
                        let (nx, ny) = (x as i64 + dx, y as i64 + dy);
                        if nx < 0 || ny < 0 || nx >= w as i64 || ny >= h as i64 {
                            continue;
                        }
                        if prev_valid[ny as usize * w + nx as usize] {
                            let c = prev.get(nx as usize, ny as usize);
                            for ch in 0..3 {
                                acc[ch] += c[ch];
                            }
                            n += 1;
                        }
                    }
                }
                if n >= 3 {
                    pano.image.set(
                        x,
                        y,
                        [acc[0] / n as f32, acc[1] / n as f32, acc[2] / n as f32],
                    );
                    pano.valid[y * w + x] = true;
                    changed = true;
                }
            }
        }
        if !changed {
            break;
        }
    }
}

// ---------------------------------------------------------------------------
// Extraction scoring
// ---------------------------------------------------------------------------

/// One piece of sensitive information present in the scene.
#[derive(Debug, Clone)]
pub struct GroundTruthField {
    pub payload: String,
    pub class: RegionClass,
}

/// Scoring outcome for one ground-truth field.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FieldRecord {
    pub truth: String,
    pub class: RegionClass,
    /// Best decoded value, or empty when nothing usable was detected.
    pub decoded: String,
    pub distance: usize,
    pub exact: bool,
    pub success: bool,
}

/// Extraction outcome over one evidence set.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExtractionReport {
    pub records: Vec<FieldRecord>,
    pub text_rate: Option<f64>,
    pub face_rate: Option<f64>,
    pub overall_rate: f64,
}

impl ExtractionReport {
    fn rate(records: &[&FieldRecord]) -> Option<f64> {
        if records.is_empty() {
            None
        } else {
            Some(records.iter().filter(|r| r.success).count() as f64 / records.len() as f64)
        }
    }
}

/// Whether a decoded text value counts as a successful extraction of `truth`.
pub fn text_success(decoded: &str, truth: &str) -> (usize, bool) {
    let d = levenshtein(decoded, truth);
    (d, !decoded.is_empty() && d < TEXT_DISTANCE_LIMIT)
}

/// Run the detector over every evidence image and score each field.
///
/// Evidence is cumulative: detections from all images pool together, so
/// adding an image (for example an unwrapped view) never decreases any rate.
pub fn extract(evidence: &[LinearImage], fields: &[GroundTruthField]) -> Result<ExtractionReport> {
    if fields.is_empty() {
        return Err(Error::InvalidInput(
            "ground-truth field list is empty".into(),
        ));
    }
    let mut regions: Vec<Region> = Vec::new();
    for img in evidence {
        regions.extend(detect_glyphs(img));
    }
    let mut records = Vec::with_capacity(fields.len());
    // Face regions at usable confidence, deduplicated by decoded payload so
    // repeated detections of one physical glyph count once.
    let mut face_regions: Vec<&Region> = Vec::new();
    for r in &regions {
        if r.class != RegionClass::Face || r.confidence < FACE_CONFIDENCE_MIN {
            continue;
        }
        let dup = r.decoded_payload.is_some()
            && face_regions
                .iter()
                .any(|f| f.decoded_payload == r.decoded_payload);
        if !dup {
            face_regions.push(r);
        }
    }
    let mut face_used = vec![false; face_regions.len()];
    // Distinct decoded text values; each satisfies at most one field so a
    // short payload cannot "extract" several unrelated short truths through
    // the absolute distance threshold.
    let mut text_values: Vec<&str> = regions
        .iter()
        .filter(|r| r.class == RegionClass::Text)
        .filter_map(|r| r.decoded_payload.as_deref())
        .filter(|p| !p.is_empty())
        .collect();
    text_values.sort_unstable();
    text_values.dedup();
    let text_fields: Vec<usize> = fields
        .iter()
        .enumerate()
        .filter(|(_, f)| f.class == RegionClass::Text)
        .map(|(i, _)| i)
        .collect();
    // Greedy min-distance assignment of decoded values to text fields.
    let mut assignment: Vec<Option<&str>> = vec![None; fields.len()];
    let mut pairs: Vec<(usize, usize, usize)> = Vec::new(); // (distance, field, value)
    for &fi in &text_fields {
        for (vi, v) in text_values.iter().enumerate() {
            pairs.push((levenshtein(v, &fields[fi].payload), fi, vi));
        }
    }
    pairs.sort_unstable();
    let mut value_used = vec![false; text_values.len()];
    for (_, fi, vi) in pairs {
        if assignment[fi].is_none() && !value_used[vi] {
            assignment[fi] = Some(text_values[vi]);
            value_used[vi] = true;
        }
    }
    // Exact payload matches first.
    let mut face_fallback_fields: Vec<usize> = Vec::new();
    for (fi, field) in fields.iter().enumerate() {
        match field.class {
            RegionClass::Text => {
                let decoded = assignment[fi].unwrap_or("");
                let (distance, success) = text_success(decoded, &field.payload);
                records.push(FieldRecord {
                    truth: field.payload.clone(),
                    class: RegionClass::Text,
                    decoded: decoded.to_string(),
                    distance,
                    exact: decoded == field.payload,
                    success,
                });
            }
            RegionClass::Face => {
                let hit = face_regions
                    .iter()
                    .position(|r| r.decoded_payload.as_deref() == Some(field.payload.as_str()));
                if let Some(i) = hit {
                    face_used[i] = true;
                    records.push(FieldRecord {
                        truth: field.payload.clone(),
                        class: RegionClass::Face,
                        decoded: field.payload.clone(),
                        distance: 0,
                        exact: true,
                        success: true,
                    });
                } else {
                    face_fallback_fields.push(records.len());
                    records.push(FieldRecord {
                        truth: field.payload.clone(),
                        class: RegionClass::Face,
                        decoded: String::new(),
                        distance: levenshtein("", &field.payload),
                        exact: false,
                        success: false,
                    });
                }
            }
        }
    }
    // Fallback: remaining confident face detections satisfy remaining face
    // fields, without payload verification.
    let mut spare = face_used.iter().filter(|&&u| !u).count();
    for idx in face_fallback_fields {
        if spare == 0 {
            break;
        }
        spare -= 1;
        let rec = &mut records[idx];
        rec.success = true;
        if let Some(i) = face_used.iter().position(|&u| !u) {
            face_used[i] = true;
            if let Some(p) = &face_regions[i].decoded_payload {
                rec.decoded = p.clone();
                rec.distance = levenshtein(p, &rec.truth);
            }
        }
    }
    let text: Vec<&FieldRecord> = records
        .iter()
        .filter(|r| r.class == RegionClass::Text)
        .collect();
    let face: Vec<&FieldRecord> = records
        .iter()
        .filter(|r| r.class == RegionClass::Face)
        .collect();
    let all: Vec<&FieldRecord> = records.iter().collect();
    Ok(ExtractionReport {
        text_rate: ExtractionReport::rate(&text),
        face_rate: ExtractionReport::rate(&face),
        overall_rate: ExtractionReport::rate(&all).unwrap_or(0.0),
        records,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::glyph::{encode_plaque, PlaqueKind};

    fn paint_glyph(
        img: &mut LinearImage,
        payload: &str,
        kind: PlaqueKind,
        x0: usize,
        y0: usize,
        cell: usize,
    ) {
        let g = encode_plaque(payload, kind).unwrap();
        for row in 0..g.size {
            for col in 0..g.size {
                let v = if g.get(row, col) { 0.05f32 } else { 0.85 };
                for dy in 0..cell {
                    for dx in 0..cell {
                        img.set(x0 + col * cell + dx, y0 + row * cell + dy, [v; 3]);
                    }
                }
            }
        }
    }

    fn checkerboard(w: usize, h: usize, cell: usize) -> LinearImage {
        let mut img = LinearImage::new(w, h);
        for y in 0..h {
            for x in 0..w {
                let v = if ((x / cell) + (y / cell)) % 2 == 0 {
                    0.9
                } else {
                    0.1
                };
                img.set(x, y, [v; 3]);
            }
        }
        img
    }

    #[test]
    fn axis_aligned_quad_unwraps_to_identity() {
        let img = checkerboard(120, 80, 10);
        let corners = [(0.0, 0.0), (120.0, 0.0), (120.0, 80.0), (0.0, 80.0)];
        let out = unwrap_mirror(&img, &corners, 120, 80).unwrap();
        for y in 1..79 {
            for x in 1..119 {
                let (a, b) = (img.get(x, y), out.get(x, y));
                for c in 0..3 {
                    assert!((a[c] - b[c]).abs() < 1e-6, "({x},{y})");
                }
            }
        }
    }

    #[test]
    fn perspective_checkerboard_round_trips() {
        // Forward-warp a checkerboard onto a quad, then unwrap it back.
        let src = checkerboard(100, 100, 10);
        let quad = [(30.0, 20.0), (250.0, 40.0), (230.0, 230.0), (20.0, 200.0)];
        let dst_rect = [(0.0, 0.0), (100.0, 0.0), (100.0, 100.0), (0.0, 100.0)];
        let pairs: Vec<_> = quad.iter().copied().zip(dst_rect.iter().copied()).collect();
        let inv = dlt(&pairs).unwrap(); // pixel -> source coords
        let mut warped = LinearImage::filled(280, 260, [0.5; 3]);
        for y in 0..260 {
            for x in 0..280 {
                let (sx, sy) = inv.apply(x as f64 + 0.5, y as f64 + 0.5);
                if sx >= 0.0 && sy >= 0.0 && sx < 100.0 && sy < 100.0 {
                    warped.set(x, y, src.sample_bilinear(sx - 0.5, sy - 0.5));
                }
            }
        }
        let out = unwrap_mirror(&warped, &quad, 100, 100).unwrap();
        // Cell centers must match the original checkerboard.
        for cy in 0..10 {
            for cx in 0..10 {
                let (x, y) = (cx * 10 + 5, cy * 10 + 5);
                let got = out.get(x, y)[0];
                let want = src.get(x, y)[0];
                assert!(
                    (got - want).abs() < 0.1,
                    "cell ({cx},{cy}): got {got}, want {want}"
                );
            }
        }
    }

    #[test]
    fn collinear_corners_error() {
        let img = checkerboard(50, 50, 5);
        let corners = [(0.0, 0.0), (10.0, 10.0), (20.0, 20.0), (0.0, 40.0)];
        assert!(unwrap_mirror(&img, &corners, 50, 50).is_err());
    }

    fn fake_sphere_output(w: usize, h: usize, color: [f32; 3]) -> RenderOutput {
        let mut out = RenderOutput {
            color: LinearImage::filled(w, h, color),
            hit: vec![false; w * h],
            reflection: vec![Vec3::new(0.0, 1.0, 0.0); w * h],
        };
        // Hit pixels spread over a band of directions.
        for y in 0..h {
            for x in 0..w {
                if x % 2 == 0 {
                    out.hit[y * w + x] = true;
                    let az = (x as f64 / w as f64 - 0.5) * std::f64::consts::PI;
                    let polar = (0.25 + 0.5 * y as f64 / h as f64) * std::f64::consts::PI;
                    out.reflection[y * w + x] =
                        Vec3::new(polar.sin() * az.cos(), polar.cos(), polar.sin() * az.sin());
                }
            }
        }
        out
    }

    #[test]
    fn constant_sphere_unwraps_to_constant_valid_cells() {
        let rendering = fake_sphere_output(64, 64, [0.2, 0.4, 0.6]);
        let pano = unwrap_sphere(&rendering, 128, 64);
        assert!(pano.valid_fraction() > 0.05);
        for y in 0..64 {
            for x in 0..128 {
                if pano.valid[y * 128 + x] {
                    let c = pano.image.get(x, y);
                    assert!((c[0] - 0.2).abs() < 1e-6);
                    assert!((c[1] - 0.4).abs() < 1e-6);
                    assert!((c[2] - 0.6).abs() < 1e-6);
                }
            }
        }
    }

    #[test]
    fn empty_hit_mask_gives_all_invalid() {
        let rendering = RenderOutput {
            color: LinearImage::filled(32, 32, [0.5; 3]),
            hit: vec![false; 32 * 32],
            reflection: vec![Vec3::new(0.0, 1.0, 0.0); 32 * 32],
        };
        let pano = unwrap_sphere(&rendering, 64, 32);
        assert!(pano.valid.iter().all(|&v| !v));
    }

    #[test]
    fn hole_closing_fills_enclosed_gaps() {
        let mut pano = Panorama {
            image: LinearImage::filled(16, 16, [0.3; 3]),
            valid: vec![true; 256],
        };
        pano.valid[8 * 16 + 8] = false;
        pano.image.set(8, 8, [1.0; 3]);
        close_panorama_holes(&mut pano, 2);
        assert!(pano.valid[8 * 16 + 8]);
        assert!((pano.image.get(8, 8)[0] - 0.3).abs() < 1e-6);
    }

    fn fields(specs: &[(&str, RegionClass)]) -> Vec<GroundTruthField> {
        specs
            .iter()
            .map(|(p, c)| GroundTruthField {
                payload: p.to_string(),
                class: *c,
            })
            .collect()
    }

    #[test]
    fn three_of_four_fields_is_rate_three_quarters() {
        let mut img = LinearImage::filled(700, 500, [0.7; 3]);
        paint_glyph(&mut img, "CARD 4111", PlaqueKind::Text, 20, 30, 6);
        paint_glyph(&mut img, "EXP 09 29", PlaqueKind::Text, 240, 30, 6);
        paint_glyph(&mut img, "FACE BOB", PlaqueKind::Face, 460, 30, 6);
        let truth = fields(&[
            ("CARD 4111", RegionClass::Text),
            ("EXP 09 29", RegionClass::Text),
            ("FACE BOB", RegionClass::Face),
            ("CVV 123", RegionClass::Text), // absent from the image
        ]);
        let report = extract(&[img], &truth).unwrap();
        assert_eq!(report.overall_rate, 0.75);
        assert_eq!(report.face_rate, Some(1.0));
        let miss = report
            .records
            .iter()
            .find(|r| r.truth == "CVV 123")
            .unwrap();
        assert!(!miss.success);
    }

    #[test]
    fn text_success_boundaries() {
        // Nonempty and distance 9 -> success; distance 10 -> failure.
        let truth = "ABCDEFGHIJKLM";
        let nine_off = "ABCD000000000"; // 9 substitutions
        let ten_off = "ABC0000000000"; // 10 substitutions
        assert_eq!(text_success(nine_off, truth), (9, true));
        assert_eq!(text_success(ten_off, truth), (10, false));
        // Empty decode always fails, even at distance < 10.
        let (d, ok) = text_success("", "SHORT");
        assert_eq!(d, 5);
        assert!(!ok);
    }

    #[test]
    fn adding_evidence_never_decreases_rates() {
        let mut img1 = LinearImage::filled(300, 300, [0.7; 3]);
        paint_glyph(&mut img1, "CARD 4111", PlaqueKind::Text, 40, 40, 6);
        let mut img2 = LinearImage::filled(300, 300, [0.7; 3]);
        paint_glyph(&mut img2, "FACE BOB", PlaqueKind::Face, 40, 40, 6);
        let truth = fields(&[
            ("CARD 4111", RegionClass::Text),
            ("FACE BOB", RegionClass::Face),
        ]);
        let one = extract(&[img1.clone()], &truth).unwrap();
        let both = extract(&[img1, img2], &truth).unwrap();
        assert!(both.overall_rate >= one.overall_rate);
        assert_eq!(one.overall_rate, 0.5);
        assert_eq!(both.overall_rate, 1.0);
    }

    #[test]
    fn face_fallback_accepts_unverified_confident_detection() {
        // A face glyph with a payload different from the ground truth still
        // satisfies one face field via the fallback (overlap-check analog).
        let mut img = LinearImage::filled(300, 300, [0.7; 3]);
        paint_glyph(&mut img, "FACE CAROL", PlaqueKind::Face, 40, 40, 6);
        let truth = fields(&[("FACE BOB", RegionClass::Face)]);
        let report = extract(&[img], &truth).unwrap();
        assert_eq!(report.face_rate, Some(1.0));
        assert_eq!(report.records[0].decoded, "FACE CAROL");
        assert!(!report.records[0].exact);
    }

    #[test]
    fn empty_fields_error() {
        assert!(extract(&[LinearImage::filled(32, 32, [0.7; 3])], &[]).is_err());
    }
}
