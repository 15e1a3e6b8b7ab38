//! Session persistence — the on-disk contract between pipeline stages.
//!
//! Layout: `manifest.json`, `frames/NNNNNN.{rgb,depth,conf}.png`, plus
//! `envmap.rgcm` for the reconstructed cubemap. RGB is 8-bit sRGB PNG, depth
//! 16-bit PNG in millimeters (0 = invalid), confidence 8-bit PNG holding
//! {0,1,2}. Every frame file's SHA-256 is pinned in the manifest; mismatch
//! reads fail loudly. The capture simulator reports millimeter-quantized
//! depth, so a write/read cycle reproduces every frame bit for bit.

use std::io::Cursor;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::envmap::{Cubemap, FACE_COUNT};
use crate::error::{Error, Result};
use crate::geom::{Intrinsics, Mat3, RigidTransform, Vec3};
use crate::raster::{Confidence, ConfidenceImage, DepthImage, LinearImage, SrgbImage};
use crate::scene::CaptureFrame;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FrameEntry {
    pub frame_id: u32,
    /// Camera-to-world pose, row-major 4x4.
    pub pose: [[f64; 4]; 4],
    pub rgb: String,
    pub depth: String,
    pub confidence: String,
    pub sha256_rgb: String,
    pub sha256_depth: String,
    pub sha256_confidence: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SessionManifest {
    pub session_id: String,
    pub intrinsics_rgb: Intrinsics,
    pub intrinsics_depth: Intrinsics,
    /// Virtual-object rendering position, world meters.
    pub anchor: [f64; 3],
    pub frames: Vec<FrameEntry>,
}

impl SessionManifest {
    pub fn anchor_vec(&self) -> Vec3 {
        Vec3::new(self.anchor[0], self.anchor[1], self.anchor[2])
    }

    pub fn validate(&self) -> Result<()> {
        for w in self.frames.windows(2) {
            if w[1].frame_id <= w[0].frame_id {
                return Err(Error::InvalidInput(format!(
                    "frame ids must be unique and sorted ({} then {})",
                    w[0].frame_id, w[1].frame_id
                )));
            }
        }
        Ok(())
    }
}

pub fn pose_to_matrix(t: &RigidTransform) -> [[f64; 4]; 4] {
    let mut m = [[0.0; 4]; 4];
    for r in 0..3 {
        for c in 0..3 {
            m[r][c] = t.rotation[(r, c)];
        }
        m[r][3] = t.translation[r];
    }
    m[3][3] = 1.0;
    m
}

pub fn matrix_to_pose(m: &[[f64; 4]; 4]) -> Result<RigidTransform> {
    if m[3] != [0.0, 0.0, 0.0, 1.0] {
        return Err(Error::InvalidInput(
            "pose matrix bottom row must be [0 0 0 1]".into(),
        ));
    }
    let rot = Mat3::from_fn(|r, c| m[r][c]);
    let t = RigidTransform::new(rot, Vec3::new(m[0][3], m[1][3], m[2][3]));
    if !t.is_rigid(1e-6) {
        return Err(Error::InvalidInput(
            "pose matrix is not a rigid transform".into(),
        ));
    }
    Ok(t)
}

fn sha256_hex(bytes: &[u8]) -> String {
    let mut h = Sha256::new();
    h.update(bytes);
    format!("{:x}", h.finalize())
}

fn encode_rgb_png(img: &SrgbImage) -> Result<Vec<u8>> {
    let mut buf = image::RgbImage::new(img.width as u32, img.height as u32);
    for y in 0..img.height {
        for x in 0..img.width {
            buf.put_pixel(x as u32, y as u32, image::Rgb(img.get(x, y)));
        }
    }
    let mut out = Vec::new();
    image::DynamicImage::ImageRgb8(buf)
        .write_to(&mut Cursor::new(&mut out), image::ImageFormat::Png)?;
    Ok(out)
}

fn encode_depth_png(img: &DepthImage) -> Result<Vec<u8>> {
    let mut buf =
        image::ImageBuffer::<image::Luma<u16>, Vec<u16>>::new(img.width as u32, img.height as u32);
    for y in 0..img.height {
        for x in 0..img.width {
            let mm = (img.get(x, y) as f64 * 1000.0).round().clamp(0.0, 65535.0) as u16;
            buf.put_pixel(x as u32, y as u32, image::Luma([mm]));
        }
    }
    let mut out = Vec::new();
    image::DynamicImage::ImageLuma16(buf)
        .write_to(&mut Cursor::new(&mut out), image::ImageFormat::Png)?;
    Ok(out)
}

fn encode_conf_png(img: &ConfidenceImage) -> Result<Vec<u8>> {
    let mut buf = image::GrayImage::new(img.width as u32, img.height as u32);
    for y in 0..img.height {
        for x in 0..img.width {
            buf.put_pixel(x as u32, y as u32, image::Luma([img.get(x, y) as u8]));
        }
    }
    let mut out = Vec::new();
    image::DynamicImage::ImageLuma8(buf)
        .write_to(&mut Cursor::new(&mut out), image::ImageFormat::Png)?;
    Ok(out)
}

fn read_checked(path: &Path, expected_sha: &str) -> Result<Vec<u8>> {
    if !path.exists() {
        return Err(Error::MissingArtifact(path.to_path_buf()));
    }
    let bytes = std::fs::read(path)?;
    if sha256_hex(&bytes) != expected_sha {
        return Err(Error::Corrupt {
            path: path.to_path_buf(),
            reason: "checksum mismatch".into(),
        });
    }
    Ok(bytes)
}

/// Write frames and manifest under `dir`. Depth is stored as millimeters on
/// disk; the capture simulator already reports millimeter-quantized depth, so
/// every field round-trips bit-exactly.
pub fn write_session(
    frames: &[CaptureFrame],
    session_id: &str,
    anchor: Vec3,
    dir: &Path,
) -> Result<SessionManifest> {
    if frames.is_empty() {
        return Err(Error::InvalidInput(
            "cannot write a session with no frames".into(),
        ));
    }
    std::fs::create_dir_all(dir.join("frames"))?;
    let mut entries = Vec::with_capacity(frames.len());
    for f in frames {
        let stem = format!("frames/{:06}", f.frame_id);
        let rgb_rel = format!("{stem}.rgb.png");
        let depth_rel = format!("{stem}.depth.png");
        let conf_rel = format!("{stem}.conf.png");
        let rgb_bytes = encode_rgb_png(&f.rgb)?;
        let depth_bytes = encode_depth_png(&f.depth)?;
        let conf_bytes = encode_conf_png(&f.confidence)?;
        std::fs::write(dir.join(&rgb_rel), &rgb_bytes)?;
        std::fs::write(dir.join(&depth_rel), &depth_bytes)?;
        std::fs::write(dir.join(&conf_rel), &conf_bytes)?;
        entries.push(FrameEntry {
            frame_id: f.frame_id,
            pose: pose_to_matrix(&f.pose),
            rgb: rgb_rel,
            depth: depth_rel,
            confidence: conf_rel,
            sha256_rgb: sha256_hex(&rgb_bytes),
            sha256_depth: sha256_hex(&depth_bytes),
            sha256_confidence: sha256_hex(&conf_bytes),
        });
    }
    let manifest = SessionManifest {
        session_id: session_id.to_string(),
        intrinsics_rgb: frames[0].intrinsics_rgb,
        intrinsics_depth: frames[0].intrinsics_depth,
        anchor: [anchor.x, anchor.y, anchor.z],
        frames: entries,
    };
    manifest.validate()?;
    let mut json = serde_json::to_string_pretty(&manifest)?;
    json.push('\n');
    std::fs::write(dir.join("manifest.json"), json)?;
    Ok(manifest)
}

pub fn read_session(dir: &Path) -> Result<(SessionManifest, Vec<CaptureFrame>)> {
    let manifest_path = dir.join("manifest.json");
    if !manifest_path.exists() {
        return Err(Error::MissingArtifact(manifest_path));
    }
    let manifest: SessionManifest = serde_json::from_slice(&std::fs::read(&manifest_path)?)?;
    manifest.validate()?;
    let mut frames = Vec::with_capacity(manifest.frames.len());
    for e in &manifest.frames {
        let rgb_path = dir.join(&e.rgb);
        let depth_path = dir.join(&e.depth);
        let conf_path = dir.join(&e.confidence);
        let rgb_img = decode_rgb(&rgb_path, &read_checked(&rgb_path, &e.sha256_rgb)?)?;
        let depth_img = decode_depth(&depth_path, &read_checked(&depth_path, &e.sha256_depth)?)?;
        let conf_img = decode_conf(&conf_path, &read_checked(&conf_path, &e.sha256_confidence)?)?;
        frames.push(CaptureFrame {
            frame_id: e.frame_id,
            rgb: rgb_img,
            depth: depth_img,
            confidence: conf_img,
            pose: matrix_to_pose(&e.pose)?,
            intrinsics_rgb: manifest.intrinsics_rgb,
            intrinsics_depth: manifest.intrinsics_depth,
        });
    }
    Ok((manifest, frames))
}

fn decode_rgb(path: &Path, bytes: &[u8]) -> Result<SrgbImage> {
    let img = image::load_from_memory(bytes)
        .map_err(|e| load_err(path, e))?
        .into_rgb8();
    let mut out = SrgbImage::new(img.width() as usize, img.height() as usize);
    for (x, y, p) in img.enumerate_pixels() {
        out.set(x as usize, y as usize, p.0);
    }
    Ok(out)
}

fn decode_depth(path: &Path, bytes: &[u8]) -> Result<DepthImage> {
    let img = image::load_from_memory(bytes)
        .map_err(|e| load_err(path, e))?
        .into_luma16();
    let mut out = DepthImage::new(img.width() as usize, img.height() as usize);
    for (x, y, p) in img.enumerate_pixels() {
        out.set(x as usize, y as usize, p.0[0] as f32 / 1000.0);
    }
    Ok(out)
}

fn decode_conf(path: &Path, bytes: &[u8]) -> Result<ConfidenceImage> {
    let img = image::load_from_memory(bytes)
        .map_err(|e| load_err(path, e))?
        .into_luma8();
    let mut out =
        ConfidenceImage::new(img.width() as usize, img.height() as usize, Confidence::Low);
    for (x, y, p) in img.enumerate_pixels() {
        let c = Confidence::from_u8(p.0[0]).map_err(|_| Error::Corrupt {
            path: path.to_path_buf(),
            reason: format!("confidence value {} out of range", p.0[0]),
        })?;
        out.set(x as usize, y as usize, c);
    }
    Ok(out)
}

fn load_err(path: &Path, e: image::ImageError) -> Error {
    Error::Load {
        path: path.to_path_buf(),
        reason: e.to_string(),
    }
}

const CUBEMAP_MAGIC: &[u8; 4] = b"RGCM";
const FLOAT_IMAGE_MAGIC: &[u8; 4] = b"RGIM";
const FORMAT_VERSION: u32 = 1;

/// Raw HDR cubemap: 24-byte header (magic "RGCM", version, face size,
/// channels, reserved), then per face per channel one R*R plane of
/// little-endian f32, row-major.
pub fn write_cubemap(cm: &Cubemap, path: &Path) -> Result<()> {
    let r = cm.resolution;
    let mut out = Vec::with_capacity(24 + FACE_COUNT * 3 * r * r * 4);
    out.extend_from_slice(CUBEMAP_MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(r as u32).to_le_bytes());
    out.extend_from_slice(&3u32.to_le_bytes());
    out.extend_from_slice(&[0u8; 8]);
    for face in &cm.faces {
        for ch in 0..3 {
            for px in &face.data {
                out.extend_from_slice(&px[ch].to_le_bytes());
            }
        }
    }
    std::fs::write(path, out)?;
    Ok(())
}

pub fn read_cubemap(path: &Path) -> Result<Cubemap> {
    if !path.exists() {
        return Err(Error::MissingArtifact(path.to_path_buf()));
    }
    let bytes = std::fs::read(path)?;
    let corrupt = |reason: &str| Error::Corrupt {
        path: path.to_path_buf(),
        reason: reason.into(),
    };
    if bytes.len() < 24 || &bytes[0..4] != CUBEMAP_MAGIC {
        return Err(corrupt("bad magic or short header"));
    }
    let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().unwrap());
    if u32_at(4) != FORMAT_VERSION {
        return Err(corrupt("unsupported version"));
    }
    let r = u32_at(8) as usize;
    let channels = u32_at(12) as usize;
    if channels != 3 {
        return Err(corrupt("expected 3 channels"));
    }
    let expected = 24 + FACE_COUNT * channels * r * r * 4;
    if bytes.len() != expected {
        return Err(corrupt(&format!(
            "payload size {} does not match header ({} expected)",
            bytes.len(),
            expected
        )));
    }
    let mut cm = Cubemap::new(r);
    let mut off = 24;
    for face in &mut cm.faces {
        for ch in 0..3 {
            for px in &mut face.data {
                px[ch] = f32::from_le_bytes(bytes[off..off + 4].try_into().unwrap());
                off += 4;
            }
        }
    }
    Ok(cm)
}

/// Raw float image with the same header scheme as the cubemap, magic "RGIM":
/// width, height, channels, then planar little-endian f32.
pub fn write_float_image(img: &LinearImage, path: &Path) -> Result<()> {
    let mut out = Vec::with_capacity(24 + 3 * img.data.len() * 4);
    out.extend_from_slice(FLOAT_IMAGE_MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(img.width as u32).to_le_bytes());
    out.extend_from_slice(&(img.height as u32).to_le_bytes());
    out.extend_from_slice(&3u32.to_le_bytes());
    out.extend_from_slice(&[0u8; 4]);
    for ch in 0..3 {
        for px in &img.data {
            out.extend_from_slice(&px[ch].to_le_bytes());
        }
    }
    std::fs::write(path, out)?;
    Ok(())
}

pub fn read_float_image(path: &Path) -> Result<LinearImage> {
    if !path.exists() {
        return Err(Error::MissingArtifact(path.to_path_buf()));
    }
    let bytes = std::fs::read(path)?;
    let corrupt = |reason: &str| Error::Corrupt {
        path: path.to_path_buf(),
        reason: reason.into(),
    };
    if bytes.len() < 24 || &bytes[0..4] != FLOAT_IMAGE_MAGIC {
        return Err(corrupt("bad magic or short header"));
    }
    let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().unwrap());
    if u32_at(4) != FORMAT_VERSION {
        return Err(corrupt("unsupported version"));
    }
    let (w, h) = (u32_at(8) as usize, u32_at(12) as usize);
    if u32_at(16) != 3 {
        return Err(corrupt("expected 3 channels"));
    }
    if bytes.len() != 24 + 3 * w * h * 4 {
        return Err(corrupt("payload size does not match header"));
    }
    let mut img = LinearImage::new(w, h);
    let mut off = 24;
    for ch in 0..3 {
        for px in &mut img.data {
            px[ch] = f32::from_le_bytes(bytes[off..off + 4].try_into().unwrap());
            off += 4;
        }
    }
    Ok(img)
}

/// Tone-mapped PNG (clamp + sRGB curve) for human inspection.
pub fn write_preview_png(img: &LinearImage, path: &Path) -> Result<()> {
    std::fs::write(path, encode_rgb_png(&img.to_srgb())?)?;
    Ok(())
}
