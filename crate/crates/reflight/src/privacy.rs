//! Index-based point-cloud color swapping defense and the defense policy
//! that falls back to restricted rendering.
//!
//! Sensitive regions are detected on the source RGB frames (built-in fiducial
//! detector or an external detector process), mapped to depth-grid indices via
//! per-point provenance, and the affected point colors are swapped for colors
//! from a pre-blurred copy of the source frame after fusion completes.
//! Geometry is never touched, so reconstruction output positions are
//! bit-identical with the defense on or off.

use std::collections::BTreeMap;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::process::{Child, ChildStdin, Command, Stdio};
use std::sync::mpsc;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::cloud::{fuse, FusionParams, FusionResult, ProvenancedPointCloud};
use crate::detect::{detect_glyphs, Region, RegionClass};
use crate::filter::gaussian_blur;
use crate::geom::Vec3;
use crate::raster::{LinearImage, SrgbImage};
use crate::scene::CaptureFrame;
use crate::{Error, Result};

/// Policy knobs for when the color-swap defense is trusted and when the
/// pipeline must fall back to restricted rendering.
#[derive(Debug, Clone, Copy)]
pub struct DefensePolicy {
    /// Any detected region below this confidence triggers the fallback.
    pub min_detector_confidence: f64,
    /// Explicit flag for a scene known to change during capture; forces the
    /// fallback unconditionally.
    pub dynamic_environment: bool,
    /// Depth-grid cells added around each mapped bbox to absorb RGB-to-depth
    /// quantization at region borders.
    pub expansion_margin: usize,
}

impl Default for DefensePolicy {
    fn default() -> Self {
        Self {
            min_detector_confidence: 0.5,
            dynamic_environment: false,
            expansion_margin: 1,
        }
    }
}

impl DefensePolicy {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.min_detector_confidence) {
            return Err(Error::InvalidInput(format!(
                "min_detector_confidence {} outside [0,1]",
                self.min_detector_confidence
            )));
        }
        Ok(())
    }
}

/// Depth-grid cells flagged for the color swap, per frame, each tagged with
/// the region that produced it (an index into [`DetectionIndexSet::regions`]).
#[derive(Debug, Clone, Default)]
pub struct DetectionIndexSet {
    pub regions: Vec<Region>,
    frames: BTreeMap<u32, BTreeMap<(u16, u16), usize>>,
}

impl DetectionIndexSet {
    pub fn contains(&self, frame_id: u32, u: u16, v: u16) -> bool {
        self.frames
            .get(&frame_id)
            .is_some_and(|cells| cells.contains_key(&(u, v)))
    }

    /// Region that flagged a given cell, if any.
    pub fn region_for(&self, frame_id: u32, u: u16, v: u16) -> Option<&Region> {
        self.frames
            .get(&frame_id)
            .and_then(|cells| cells.get(&(u, v)))
            .map(|&i| &self.regions[i])
    }

    pub fn frame_ids(&self) -> impl Iterator<Item = u32> + '_ {
        self.frames.keys().copied()
    }

    pub fn cell_count(&self) -> usize {
        self.frames.values().map(|c| c.len()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.values().all(|c| c.is_empty())
    }

    /// Merge another index set (used when accumulating per-frame results).
    pub fn extend(&mut self, other: DetectionIndexSet) {
        let offset = self.regions.len();
        self.regions.extend(other.regions);
        for (frame_id, cells) in other.frames {
            let entry = self.frames.entry(frame_id).or_default();
            for ((u, v), idx) in cells {
                entry.entry((u, v)).or_insert(idx + offset);
            }
        }
    }
}

/// Map RGB-pixel regions to depth-grid cells.
///
/// Each bbox `(x0, y0, x1, y1)` covers depth cells
/// `[floor(x0/s) − m, ceil(x1/s) + m) × [floor(y0/s) − m, ceil(y1/s) + m)`,
/// clipped to the grid, where `s` is the RGB/depth resolution factor and `m`
/// the expansion margin.
pub fn regions_to_indices(
    regions: &[Region],
    scale: usize,
    depth_width: usize,
    depth_height: usize,
    margin: usize,
) -> DetectionIndexSet {
    let mut set = DetectionIndexSet::default();
    for (ri, region) in regions.iter().enumerate() {
        let (x0, y0, x1, y1) = region.bbox;
        let u0 = (x0 / scale).saturating_sub(margin);
        let v0 = (y0 / scale).saturating_sub(margin);
        let u1 = (x1.div_ceil(scale) + margin).min(depth_width);
        let v1 = (y1.div_ceil(scale) + margin).min(depth_height);
        let cells = set.frames.entry(region.frame_id).or_default();
        for v in v0..v1 {
            for u in u0..u1 {
                cells.entry((u as u16, v as u16)).or_insert(ri);
            }
        }
    }
    set.regions = regions.to_vec();
    set
}

/// Blur standard deviation for obfuscation frames, in pixels.
pub fn obfuscation_sigma(width: usize, height: usize) -> f64 {
    (0.05 * width.min(height) as f64).max(3.0)
}

/// Produce the obfuscation source for one frame: a Gaussian-blurred copy in
/// linear light, strong enough that the built-in decoder fails on any glyph.
pub fn blur_frame(rgb: &SrgbImage) -> LinearImage {
    gaussian_blur(&rgb.to_linear(), obfuscation_sigma(rgb.width, rgb.height))
}

/// A blurred source frame plus the RGB/depth factor needed to index it from
/// depth-grid provenance.
#[derive(Debug, Clone)]
pub struct BlurredFrame {
    pub image: LinearImage,
    pub scale: usize,
}

/// Swap the colors of flagged points for colors from the blurred frames.
///
/// A point with provenance `(frame_id, u, v)` in the index set takes the
/// blurred frame's color at RGB pixel `(u·s + s/2, v·s + s/2)`. Positions,
/// confidence, provenance, and all other points' colors are unchanged.
pub fn ipc2s_swap(
    pc: &ProvenancedPointCloud,
    idx: &DetectionIndexSet,
    blurred: &BTreeMap<u32, BlurredFrame>,
) -> Result<ProvenancedPointCloud> {
    for frame_id in idx.frame_ids() {
        if !blurred.contains_key(&frame_id) {
            return Err(Error::InvalidInput(format!(
                "no blurred frame for frame_id {frame_id} referenced by the index set"
            )));
        }
    }
    let mut out = pc.clone();
    for i in 0..pc.len() {
        let prov = pc.provenance[i];
        if !idx.contains(prov.frame_id, prov.u, prov.v) {
            continue;
        }
        let bf = &blurred[&prov.frame_id];
        let s = bf.scale;
        let px = |c: usize| (c * s + s / 2).min(bf.image.width.max(1) - 1);
        let py = |c: usize| (c * s + s / 2).min(bf.image.height.max(1) - 1);
        out.colors[i] = bf.image.get(px(prov.u as usize), py(prov.v as usize));
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// Detectors
// ---------------------------------------------------------------------------

/// Default per-frame response timeout for external detectors.
pub const EXTERNAL_DETECTOR_TIMEOUT: Duration = Duration::from_secs(10);

/// Region source: the built-in fiducial detector or an external process
/// speaking the line-oriented JSON protocol.
pub enum Detector {
    BuiltIn,
    External(ExternalDetector),
}

impl Detector {
    /// Detect regions on one frame. `rgb_path` is where the frame can be (or
    /// has been) materialized for an external process.
    pub fn detect(
        &mut self,
        frame_id: u32,
        rgb: &SrgbImage,
        rgb_path: Option<&Path>,
    ) -> Result<Vec<Region>> {
        match self {
            Detector::BuiltIn => {
                let mut regions = detect_glyphs(&rgb.to_linear());
                for r in &mut regions {
                    r.frame_id = frame_id;
                }
                Ok(regions)
            }
            Detector::External(ext) => ext.detect(frame_id, rgb, rgb_path),
        }
    }
}

#[derive(Serialize)]
struct WireRequest<'a> {
    frame_id: u32,
    rgb_path: &'a str,
}

#[derive(Deserialize)]
struct WireRegion {
    bbox: [usize; 4],
    class: String,
    confidence: f64,
    #[serde(default)]
    payload: Option<String>,
}

#[derive(Deserialize)]
struct WireResponse {
    frame_id: u32,
    regions: Vec<WireRegion>,
}

/// Handle to a spawned external detector process.
///
/// Per frame, one line of JSON `{"frame_id":n,"rgb_path":"..."}` is written to
/// the process's standard input and one line
/// `{"frame_id":n,"regions":[{"bbox":[x0,y0,x1,y1],"class":"face"|"text",
/// "confidence":c,"payload":...}]}` is read back from its standard output. A
/// missed per-frame timeout or a nonzero exit makes the detector unavailable.
pub struct ExternalDetector {
    child: Child,
    stdin: Option<ChildStdin>,
    lines: mpsc::Receiver<std::io::Result<String>>,
    timeout: Duration,
    /// Directory for materializing frames that only exist in memory.
    scratch: PathBuf,
    broken: bool,
}

impl ExternalDetector {
    /// Launch `command` through the shell with piped standard input/output.
    pub fn spawn(command: &str, scratch: &Path, timeout: Duration) -> Result<Self> {
        let mut child = Command::new("sh")
            .arg("-c")
            .arg(command)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .spawn()
            .map_err(|e| Error::DetectorUnavailable(format!("spawn failed: {e}")))?;
        let stdin = child.stdin.take();
        let stdout = child.stdout.take().expect("piped stdout");
        let (tx, rx) = mpsc::channel();
        std::thread::spawn(move || {
            let reader = BufReader::new(stdout);
            for line in reader.lines() {
                if tx.send(line).is_err() {
                    break;
                }
            }
        });
        Ok(Self {
            child,
            stdin,
            lines: rx,
            timeout,
            scratch: scratch.to_path_buf(),
            broken: false,
        })
    }

    fn unavailable(&mut self, reason: String) -> Error {
        self.broken = true;
        let _ = self.child.kill();
        let _ = self.child.wait();
        Error::DetectorUnavailable(reason)
    }

    pub fn detect(
        &mut self,
        frame_id: u32,
        rgb: &SrgbImage,
        rgb_path: Option<&Path>,
    ) -> Result<Vec<Region>> {
        if self.broken {
            return Err(Error::DetectorUnavailable(
                "detector process previously failed".into(),
            ));
        }
        let path = match rgb_path {
            Some(p) => p.to_path_buf(),
            None => {
                let p = self.scratch.join(format!("frame_{frame_id:06}.png"));
                write_srgb_png(rgb, &p)?;
                p
            }
        };
        let request = serde_json::to_string(&WireRequest {
            frame_id,
            rgb_path: &path.to_string_lossy(),
        })?;
        let write_result = match self.stdin.as_mut() {
            Some(stdin) => writeln!(stdin, "{request}").and_then(|()| stdin.flush()),
            None => Err(std::io::Error::other("stdin closed")),
        };
        if let Err(e) = write_result {
            return Err(self.unavailable(format!("write to detector failed: {e}")));
        }
        let line = match self.lines.recv_timeout(self.timeout) {
            Ok(Ok(line)) => line,
            Ok(Err(e)) => return Err(self.unavailable(format!("read from detector failed: {e}"))),
            Err(_) => {
                let status = self
                    .child
                    .try_wait()
                    .ok()
                    .flatten()
                    .map(|s| format!("exited with {s}"))
                    .unwrap_or_else(|| format!("no response within {:?}", self.timeout));
                return Err(self.unavailable(format!("detector {status}")));
            }
        };
        let response: WireResponse = serde_json::from_str(&line)
            .map_err(|e| self.unavailable(format!("malformed detector response: {e}")))?;
        if response.frame_id != frame_id {
            return Err(self.unavailable(format!(
                "detector answered frame {} for request {}",
                response.frame_id, frame_id
            )));
        }
        let mut regions = Vec::with_capacity(response.regions.len());
        for wr in response.regions {
            let class = match wr.class.as_str() {
                "face" => RegionClass::Face,
                "text" => RegionClass::Text,
                other => {
                    return Err(self.unavailable(format!("unknown region class `{other}`")));
                }
            };
            let region = Region {
                frame_id,
                bbox: (wr.bbox[0], wr.bbox[1], wr.bbox[2], wr.bbox[3]),
                class,
                confidence: wr.confidence,
                decoded_payload: wr.payload,
            };
            region.validate(rgb.width, rgb.height)?;
            regions.push(region);
        }
        Ok(regions)
    }
}

impl Drop for ExternalDetector {
    fn drop(&mut self) {
        self.stdin.take(); // close stdin so a well-behaved detector exits
        let _ = self.child.kill();
        let _ = self.child.wait();
    }
}

fn write_srgb_png(rgb: &SrgbImage, path: &Path) -> Result<()> {
    let mut img = image::RgbImage::new(rgb.width as u32, rgb.height as u32);
    for y in 0..rgb.height {
        for x in 0..rgb.width {
            img.put_pixel(x as u32, y as u32, image::Rgb(rgb.get(x, y)));
        }
    }
    img.save(path)?;
    Ok(())
}

// ---------------------------------------------------------------------------
// Defense driver
// ---------------------------------------------------------------------------

/// Per-frame record of what the detector reported.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FrameDetection {
    pub frame_id: u32,
    pub regions: Vec<Region>,
}

/// Decision trail for one defense run.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct DefenseLog {
    pub per_frame: Vec<FrameDetection>,
    pub decision: String,
}

/// Outcome of the defense: a color-swapped cloud, or an instruction to render
/// with the restricted material clamp instead.
pub enum DefenseOutcome {
    DefendedCloud {
        fusion: FusionResult,
        index: DetectionIndexSet,
        log: DefenseLog,
    },
    FallbackR2 {
        reason: String,
        log: DefenseLog,
    },
}

impl DefenseOutcome {
    pub fn log(&self) -> &DefenseLog {
        match self {
            DefenseOutcome::DefendedCloud { log, .. } => log,
            DefenseOutcome::FallbackR2 { log, .. } => log,
        }
    }
}

/// Run detection, blurring, fusion, and the color swap over a capture.
///
/// Falls back to restricted rendering when the policy marks the environment
/// dynamic, when the detector errors on any frame, or when any detected
/// region's confidence is below the policy threshold. Detection and blurring
/// are pure per-frame passes; the swap is a single pass after fusion.
pub fn run_defense(
    frames: &[CaptureFrame],
    anchor: Vec3,
    detector: &mut Detector,
    policy: &DefensePolicy,
    fusion_params: &FusionParams,
) -> Result<DefenseOutcome> {
    policy.validate()?;
    if frames.is_empty() {
        return Err(Error::InvalidInput(
            "defense needs at least one frame".into(),
        ));
    }
    let mut log = DefenseLog::default();
    if policy.dynamic_environment {
        log.decision = "FALLBACK_R2: dynamic environment".into();
        return Ok(DefenseOutcome::FallbackR2 {
            reason: "dynamic environment".into(),
            log,
        });
    }
    let mut index = DetectionIndexSet::default();
    let mut blurred = BTreeMap::new();
    for frame in frames {
        let regions = match detector.detect(frame.frame_id, &frame.rgb, None) {
            Ok(r) => r,
            Err(Error::DetectorUnavailable(reason)) => {
                log.decision = format!("FALLBACK_R2: detector unavailable ({reason})");
                return Ok(DefenseOutcome::FallbackR2 {
                    reason: "detector unavailable".into(),
                    log,
                });
            }
            Err(e) => return Err(e),
        };
        if let Some(low) = regions
            .iter()
            .find(|r| r.confidence < policy.min_detector_confidence)
        {
            log.per_frame.push(FrameDetection {
                frame_id: frame.frame_id,
                regions: regions.clone(),
            });
            log.decision = format!(
                "FALLBACK_R2: region confidence {:.2} below threshold {:.2} on frame {}",
                low.confidence, policy.min_detector_confidence, frame.frame_id
            );
            return Ok(DefenseOutcome::FallbackR2 {
                reason: "low detector confidence".into(),
                log,
            });
        }
        if !regions.is_empty() {
            index.extend(regions_to_indices(
                &regions,
                frame.rgb_depth_scale(),
                frame.depth.width,
                frame.depth.height,
                policy.expansion_margin,
            ));
            blurred.insert(
                frame.frame_id,
                BlurredFrame {
                    image: blur_frame(&frame.rgb),
                    scale: frame.rgb_depth_scale(),
                },
            );
        }
        log.per_frame.push(FrameDetection {
            frame_id: frame.frame_id,
            regions,
        });
    }
    let mut fusion = fuse(frames, anchor, fusion_params)?;
    fusion.cloud = ipc2s_swap(&fusion.cloud, &index, &blurred)?;
    log.decision = format!(
        "DEFENDED_CLOUD: {} regions, {} flagged depth cells",
        index.regions.len(),
        index.cell_count()
    );
    Ok(DefenseOutcome::DefendedCloud { fusion, index, log })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cloud::Provenance;
    use crate::detect::RegionClass;
    use crate::glyph::{encode_plaque, PlaqueKind};
    use crate::raster::Confidence;
    use crate::scene::{capture, make_default_suite, CaptureConfig, NO_PLAQUE};

    fn region(frame_id: u32, bbox: (usize, usize, usize, usize)) -> Region {
        Region {
            frame_id,
            bbox,
            class: RegionClass::Text,
            confidence: 1.0,
            decoded_payload: None,
        }
    }

    #[test]
    fn bbox_maps_to_expected_cell_range() {
        let idx = regions_to_indices(&[region(3, (100, 50, 200, 150))], 5, 64, 48, 0);
        assert_eq!(idx.cell_count(), 20 * 20);
        assert!(idx.contains(3, 20, 10));
        assert!(idx.contains(3, 39, 29));
        assert!(!idx.contains(3, 40, 10));
        assert!(!idx.contains(3, 20, 30));
        assert!(!idx.contains(3, 19, 10));
        assert!(!idx.contains(2, 20, 10));
    }

    #[test]
    fn corner_bbox_clips_to_grid() {
        let idx = regions_to_indices(&[region(0, (0, 0, 10, 10))], 5, 64, 48, 1);
        assert!(idx.contains(0, 0, 0));
        assert!(idx.contains(0, 2, 2));
        assert!(!idx.contains(0, 3, 0));
        // Opposite corner.
        let idx = regions_to_indices(&[region(0, (315, 235, 320, 240))], 5, 64, 48, 1);
        assert!(idx.contains(0, 63, 47));
        assert!(idx.contains(0, 62, 46));
        assert!(!idx.contains(0, 61, 47));
    }

    #[test]
    fn empty_regions_give_empty_set() {
        let idx = regions_to_indices(&[], 5, 64, 48, 1);
        assert!(idx.is_empty());
        assert_eq!(idx.cell_count(), 0);
    }

    #[test]
    fn blur_of_constant_frame_is_constant() {
        let mut rgb = SrgbImage::new(40, 30);
        for y in 0..30 {
            for x in 0..40 {
                rgb.set(x, y, [120, 90, 200]);
            }
        }
        let blurred = blur_frame(&rgb);
        let expected = rgb.linear(0, 0);
        for y in 0..30 {
            for x in 0..40 {
                let got = blurred.get(x, y);
                for c in 0..3 {
                    assert!((got[c] - expected[c]).abs() < 1e-5);
                }
            }
        }
    }

    #[test]
    fn blurred_plaque_no_longer_decodes() {
        let mut img = LinearImage::filled(300, 300, [0.7; 3]);
        let g = encode_plaque("LICENSE 12345", PlaqueKind::Text).unwrap();
        let cell = 6;
        for row in 0..g.size {
            for col in 0..g.size {
                let v = if g.get(row, col) { 0.05f32 } else { 0.85 };
                for dy in 0..cell {
                    for dx in 0..cell {
                        img.set(40 + col * cell + dx, 50 + row * cell + dy, [v; 3]);
                    }
                }
            }
        }
        assert!(detect_glyphs(&img)
            .iter()
            .any(|r| r.decoded_payload.is_some()));
        let blurred = blur_frame(&img.to_srgb());
        assert!(detect_glyphs(&blurred)
            .iter()
            .all(|r| r.decoded_payload.is_none()));
    }

    fn tiny_cloud() -> ProvenancedPointCloud {
        let mut pc = ProvenancedPointCloud::default();
        for i in 0..10u16 {
            pc.push(
                Vec3::new(i as f64 * 0.1, 0.0, 1.0),
                [0.5, 0.4, 0.3],
                Confidence::High,
                Provenance {
                    frame_id: 0,
                    u: i,
                    v: 2,
                },
            );
        }
        pc
    }

    fn blurred_map(scale: usize) -> BTreeMap<u32, BlurredFrame> {
        let mut m = BTreeMap::new();
        m.insert(
            0,
            BlurredFrame {
                image: LinearImage::filled(100, 50, [0.1, 0.2, 0.3]),
                scale,
            },
        );
        m
    }

    #[test]
    fn swap_with_empty_index_is_identity() {
        let pc = tiny_cloud();
        let out = ipc2s_swap(&pc, &DetectionIndexSet::default(), &BTreeMap::new()).unwrap();
        assert_eq!(out.positions, pc.positions);
        assert_eq!(out.colors, pc.colors);
        assert_eq!(out.provenance, pc.provenance);
    }

    #[test]
    fn swap_with_all_flagged_replaces_every_color() {
        let pc = tiny_cloud();
        let idx = regions_to_indices(&[region(0, (0, 0, 100, 50))], 5, 20, 10, 0);
        let out = ipc2s_swap(&pc, &idx, &blurred_map(5)).unwrap();
        assert_eq!(out.positions, pc.positions);
        assert_eq!(out.confidence, pc.confidence);
        assert_eq!(out.provenance, pc.provenance);
        for c in &out.colors {
            assert_eq!(*c, [0.1, 0.2, 0.3]);
        }
    }

    #[test]
    fn swap_missing_blurred_frame_errors() {
        let pc = tiny_cloud();
        let idx = regions_to_indices(&[region(0, (0, 0, 100, 50))], 5, 20, 10, 0);
        let err = ipc2s_swap(&pc, &idx, &BTreeMap::new()).unwrap_err();
        assert!(matches!(err, Error::InvalidInput(_)), "{err}");
    }

    #[test]
    fn swap_only_touches_flagged_points() {
        let pc = tiny_cloud();
        // Flag only u in [2, 5): rgb x range [10, 25) at scale 5.
        let idx = regions_to_indices(&[region(0, (10, 10, 25, 15))], 5, 20, 10, 0);
        let out = ipc2s_swap(&pc, &idx, &blurred_map(5)).unwrap();
        for i in 0..pc.len() {
            let u = pc.provenance[i].u;
            if (2..5).contains(&u) {
                assert_eq!(out.colors[i], [0.1, 0.2, 0.3]);
            } else {
                assert_eq!(out.colors[i], pc.colors[i]);
            }
        }
    }

    #[test]
    fn dynamic_flag_forces_fallback() {
        let suite = &make_default_suite()[0];
        let cap = capture(
            &suite.scene,
            &crate::scene::Trajectory {
                poses: suite.trajectory.poses[..2].to_vec(),
            },
            &CaptureConfig::desk(1),
        )
        .unwrap();
        let policy = DefensePolicy {
            dynamic_environment: true,
            ..DefensePolicy::default()
        };
        let out = run_defense(
            &cap.frames,
            suite.anchor,
            &mut Detector::BuiltIn,
            &policy,
            &FusionParams::default(),
        )
        .unwrap();
        match out {
            DefenseOutcome::FallbackR2 { reason, log } => {
                assert_eq!(reason, "dynamic environment");
                assert!(log.decision.contains("dynamic environment"));
            }
            DefenseOutcome::DefendedCloud { .. } => panic!("expected fallback"),
        }
    }

    #[test]
    fn crashing_external_detector_falls_back() {
        let suite = &make_default_suite()[0];
        let cap = capture(
            &suite.scene,
            &crate::scene::Trajectory {
                poses: suite.trajectory.poses[..2].to_vec(),
            },
            &CaptureConfig::desk(1),
        )
        .unwrap();
        let dir = tempfile::tempdir().unwrap();
        let ext = ExternalDetector::spawn("exit 7", dir.path(), Duration::from_secs(5)).unwrap();
        let out = run_defense(
            &cap.frames,
            suite.anchor,
            &mut Detector::External(ext),
            &DefensePolicy::default(),
            &FusionParams::default(),
        )
        .unwrap();
        match out {
            DefenseOutcome::FallbackR2 { reason, .. } => {
                assert_eq!(reason, "detector unavailable");
            }
            DefenseOutcome::DefendedCloud { .. } => panic!("expected fallback"),
        }
    }

    #[test]
    fn envmap_differs_only_at_texels_sourced_from_flagged_points() {
        use crate::envmap::{splat_near_field, SplatParams, NO_SOURCE};
        let suite = &make_default_suite()[0];
        let cap = capture(
            &suite.scene,
            &crate::scene::Trajectory {
                poses: suite.trajectory.poses[..3].to_vec(),
            },
            &CaptureConfig::desk(1),
        )
        .unwrap();
        let params = FusionParams::default();
        let undefended = fuse(&cap.frames, suite.anchor, &params).unwrap();
        let out = run_defense(
            &cap.frames,
            suite.anchor,
            &mut Detector::BuiltIn,
            &DefensePolicy::default(),
            &params,
        )
        .unwrap();
        let DefenseOutcome::DefendedCloud { fusion, index, .. } = out else {
            panic!("expected defended cloud");
        };
        let r = 64;
        let sp = SplatParams::default();
        let env_plain = splat_near_field(&undefended.cloud, suite.anchor, r, &sp);
        let env_swap = splat_near_field(&fusion.cloud, suite.anchor, r, &sp);
        let mut diffs = 0usize;
        for face in 0..6 {
            for v in 0..r {
                for u in 0..r {
                    if env_plain.cubemap.get(face, u, v) == env_swap.cubemap.get(face, u, v) {
                        continue;
                    }
                    diffs += 1;
                    let src = env_plain.source_at(face, u, v);
                    assert_eq!(src, env_swap.source_at(face, u, v));
                    assert_ne!(src, NO_SOURCE);
                    let prov = undefended.cloud.provenance[src as usize];
                    assert!(
                        index.contains(prov.frame_id, prov.u, prov.v),
                        "texel ({face},{u},{v}) changed but its source point is unflagged"
                    );
                }
            }
        }
        assert!(diffs > 50, "expected plaque texels to change, got {diffs}");
    }

    #[test]
    fn defense_covers_all_plaque_points_and_preserves_geometry() {
        let suite = &make_default_suite()[0];
        let cfg = CaptureConfig::desk(1);
        let cap = capture(&suite.scene, &suite.trajectory, &cfg).unwrap();
        let params = FusionParams::default();
        let undefended = fuse(&cap.frames, suite.anchor, &params).unwrap();
        let out = run_defense(
            &cap.frames,
            suite.anchor,
            &mut Detector::BuiltIn,
            &DefensePolicy::default(),
            &params,
        )
        .unwrap();
        let DefenseOutcome::DefendedCloud { fusion, index, .. } = out else {
            panic!("expected defended cloud");
        };
        // Geometry invariance: positions and corrections bit-identical.
        assert_eq!(fusion.cloud.positions, undefended.cloud.positions);
        assert_eq!(fusion.cloud.provenance, undefended.cloud.provenance);
        assert_eq!(fusion.corrections.len(), undefended.corrections.len());
        for (a, b) in fusion.corrections.iter().zip(&undefended.corrections) {
            match (a, b) {
                (None, None) => {}
                (Some(a), Some(b)) => {
                    assert_eq!(a.rotation, b.rotation);
                    assert_eq!(a.translation, b.translation);
                }
                _ => panic!("corrections differ in shape"),
            }
        }
        // Ground-truth coverage: every fused point whose rgb footprint lands
        // on a plaque marker must be flagged (and hence color-swapped).
        let scale = cfg.rgb_width / cfg.depth_width;
        let mut covered = 0usize;
        let mut swapped = 0usize;
        for i in 0..fusion.cloud.len() {
            let prov = fusion.cloud.provenance[i];
            let mask = &cap.plaque_masks[prov.frame_id as usize];
            let x = (prov.u as usize * scale + scale / 2).min(cfg.rgb_width - 1);
            let y = (prov.v as usize * scale + scale / 2).min(cfg.rgb_height - 1);
            if mask[y * cfg.rgb_width + x] != NO_PLAQUE {
                covered += 1;
                assert!(
                    index.contains(prov.frame_id, prov.u, prov.v),
                    "plaque point at frame {} cell ({},{}) not flagged",
                    prov.frame_id,
                    prov.u,
                    prov.v
                );
            }
            if fusion.cloud.colors[i] != undefended.cloud.colors[i] {
                swapped += 1;
                assert!(index.contains(prov.frame_id, prov.u, prov.v));
            }
        }
        assert!(
            covered > 100,
            "expected many plaque-sourced points, got {covered}"
        );
        assert!(swapped >= covered, "swap must cover all plaque points");
    }
}
