//! Cubemap environment maps: near-field point splatting, far-field fill,
//! and roughness prefiltering.
//!
//! The cubemap uses the classic face convention (+X, -X, +Y, -Y, +Z, -Z with
//! the standard sc/tc tables), so `dir_to_texel` and `texel_to_dir` are exact
//! inverses at texel centers. Splatting keeps, per texel, the index of the
//! winning source point, which is what ties rendered reflections back to
//! fused-cloud provenance.

use std::f64::consts::PI;
use std::path::Path;

use crate::cloud::ProvenancedPointCloud;
use crate::error::{Error, Result};
use crate::geom::Vec3;
use crate::raster::LinearImage;

pub const FACE_COUNT: usize = 6;

/// Texel marked as "no source point" in the index records.
pub const NO_SOURCE: u32 = u32::MAX;

#[derive(Debug, Clone, PartialEq)]
pub struct Cubemap {
    pub resolution: usize,
    /// Face order: +X, -X, +Y, -Y, +Z, -Z.
    pub faces: Vec<LinearImage>,
}

impl Cubemap {
    pub fn new(resolution: usize) -> Self {
        Self {
            resolution,
            faces: (0..FACE_COUNT)
                .map(|_| LinearImage::new(resolution, resolution))
                .collect(),
        }
    }

    #[inline]
    pub fn get(&self, face: usize, u: usize, v: usize) -> [f32; 3] {
        self.faces[face].get(u, v)
    }

    #[inline]
    pub fn set(&mut self, face: usize, u: usize, v: usize, px: [f32; 3]) {
        self.faces[face].set(u, v, px);
    }

    /// Nearest-texel lookup by direction.
    pub fn sample_nearest(&self, dir: Vec3) -> [f32; 3] {
        let (f, u, v) = dir_to_texel(dir, self.resolution);
        self.get(f, u, v)
    }

    /// Bilinear lookup by direction, clamped at face edges. Texel centers
    /// return the stored value exactly.
    pub fn sample(&self, dir: Vec3) -> [f32; 3] {
        let face = dir_to_face(dir);
        let (sc, tc, ma) = face_coords(dir, face);
        let r = self.resolution as f64;
        let x = (sc / ma + 1.0) / 2.0 * r - 0.5;
        let y = (tc / ma + 1.0) / 2.0 * r - 0.5;
        self.faces[face].sample_bilinear(x, y)
    }

    /// Solid-angle-weighted mean color — the "energy" preserved by
    /// prefiltering.
    pub fn mean_energy(&self) -> [f64; 3] {
        let mut sum = [0.0f64; 3];
        let mut wsum = 0.0f64;
        for f in 0..FACE_COUNT {
            for v in 0..self.resolution {
                for u in 0..self.resolution {
                    let w = texel_solid_angle(u, v, self.resolution);
                    let c = self.get(f, u, v);
                    for k in 0..3 {
                        sum[k] += w * c[k] as f64;
                    }
                    wsum += w;
                }
            }
        }
        [sum[0] / wsum, sum[1] / wsum, sum[2] / wsum]
    }

    /// Write one PNG per face (`face0.png` .. `face5.png`) for inspection.
    pub fn write_face_previews(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        for (i, face) in self.faces.iter().enumerate() {
            let srgb = face.to_srgb();
            let mut buf = image::RgbImage::new(srgb.width as u32, srgb.height as u32);
            for y in 0..srgb.height {
                for x in 0..srgb.width {
                    buf.put_pixel(x as u32, y as u32, image::Rgb(srgb.get(x, y)));
                }
            }
            buf.save(dir.join(format!("face{i}.png")))?;
        }
        Ok(())
    }
}

/// Face-plane coordinates (sc/ma, tc/ma) for a direction on a given face.
fn face_coords(dir: Vec3, face: usize) -> (f64, f64, f64) {
    let (x, y, z) = (dir.x, dir.y, dir.z);
    match face {
        0 => (-z, -y, x),  // +X
        1 => (z, -y, -x),  // -X
        2 => (x, z, y),    // +Y
        3 => (x, -z, -y),  // -Y
        4 => (x, -y, z),   // +Z
        5 => (-x, -y, -z), // -Z
        _ => unreachable!(),
    }
}

/// Face index for a direction: the dominant axis, ties resolved in x, y, z
/// order so the mapping is total.
pub fn dir_to_face(dir: Vec3) -> usize {
    let (ax, ay, az) = (dir.x.abs(), dir.y.abs(), dir.z.abs());
    if ax >= ay && ax >= az {
        if dir.x >= 0.0 {
            0
        } else {
            1
        }
    } else if ay >= az {
        if dir.y >= 0.0 {
            2
        } else {
            3
        }
    } else if dir.z >= 0.0 {
        4
    } else {
        5
    }
}

/// Map a direction to (face, u, v) at resolution `r`.
pub fn dir_to_texel(dir: Vec3, r: usize) -> (usize, usize, usize) {
    let face = dir_to_face(dir);
    let (sc, tc, ma) = face_coords(dir, face);
    let s = (sc / ma + 1.0) / 2.0;
    let t = (tc / ma + 1.0) / 2.0;
    let u = ((s * r as f64).floor() as isize).clamp(0, r as isize - 1) as usize;
    let v = ((t * r as f64).floor() as isize).clamp(0, r as isize - 1) as usize;
    (face, u, v)
}

/// Unit direction through the center of texel (face, u, v).
pub fn texel_to_dir(face: usize, u: usize, v: usize, r: usize) -> Vec3 {
    let s = (u as f64 + 0.5) / r as f64 * 2.0 - 1.0;
    let t = (v as f64 + 0.5) / r as f64 * 2.0 - 1.0;
    face_dir(face, s, t)
}

/// Direction for continuous face-plane coordinates (s, t) in [-1, 1]
/// (values outside that range walk onto neighboring faces after
/// normalization).
pub fn face_dir(face: usize, s: f64, t: f64) -> Vec3 {
    let v = match face {
        0 => Vec3::new(1.0, -t, -s),
        1 => Vec3::new(-1.0, -t, s),
        2 => Vec3::new(s, 1.0, t),
        3 => Vec3::new(s, -1.0, -t),
        4 => Vec3::new(s, -t, 1.0),
        5 => Vec3::new(-s, -t, -1.0),
        _ => unreachable!(),
    };
    v.normalize()
}

/// Exact solid angle of texel (u, v) on any face (faces are symmetric).
pub fn texel_solid_angle(u: usize, v: usize, r: usize) -> f64 {
    fn area(x: f64, y: f64) -> f64 {
        (x * y).atan2((x * x + y * y + 1.0).sqrt())
    }
    let s0 = u as f64 / r as f64 * 2.0 - 1.0;
    let s1 = (u + 1) as f64 / r as f64 * 2.0 - 1.0;
    let t0 = v as f64 / r as f64 * 2.0 - 1.0;
    let t1 = (v + 1) as f64 / r as f64 * 2.0 - 1.0;
    area(s1, t1) - area(s0, t1) - area(s1, t0) + area(s0, t0)
}

/// Near-field splat output: colors plus per-texel depth and winning source
/// point index (`NO_SOURCE` where only far-field content exists).
#[derive(Debug, Clone)]
pub struct SplattedEnvmap {
    pub cubemap: Cubemap,
    /// Distance from anchor per texel, `f32::INFINITY` where unset.
    pub depth: Vec<Vec<f32>>,
    /// Index into the splatted cloud per texel.
    pub source: Vec<Vec<u32>>,
}

impl SplattedEnvmap {
    fn new(r: usize) -> Self {
        Self {
            cubemap: Cubemap::new(r),
            depth: vec![vec![f32::INFINITY; r * r]; FACE_COUNT],
            source: vec![vec![NO_SOURCE; r * r]; FACE_COUNT],
        }
    }

    #[inline]
    pub fn is_set(&self, face: usize, u: usize, v: usize) -> bool {
        self.source[face][v * self.cubemap.resolution + u] != NO_SOURCE
    }

    pub fn source_at(&self, face: usize, u: usize, v: usize) -> u32 {
        self.source[face][v * self.cubemap.resolution + u]
    }

    pub fn set_fraction(&self) -> f64 {
        let r = self.cubemap.resolution;
        let set: usize = self
            .source
            .iter()
            .map(|f| f.iter().filter(|&&s| s != NO_SOURCE).count())
            .sum();
        set as f64 / (FACE_COUNT * r * r) as f64
    }
}

#[derive(Debug, Clone, Copy)]
pub struct SplatParams {
    /// Effective world-space footprint of a point, meters; controls the
    /// Chebyshev splat radius `clamp(round(k * R / (2 pi d)), 1, 8)`.
    pub footprint: f64,
    /// Number of hole-closing passes after splatting.
    pub closing_passes: usize,
    /// Depth difference treated as a genuine occlusion, meters. Candidates
    /// within this band of each other compete on angular proximity to the
    /// texel center instead of raw depth, which keeps co-surface detail
    /// crisp instead of letting whichever point is marginally nearer smear
    /// its color across neighboring texels.
    pub occlusion_eps: f64,
}

impl Default for SplatParams {
    fn default() -> Self {
        Self {
            footprint: 0.025,
            closing_passes: 2,
            occlusion_eps: 0.03,
        }
    }
}

/// Z-buffered splat of the fused cloud onto a cubemap centered at `anchor`.
pub fn splat_near_field(
    cloud: &ProvenancedPointCloud,
    anchor: Vec3,
    resolution: usize,
    params: &SplatParams,
) -> SplattedEnvmap {
    let r = resolution;
    let mut out = SplattedEnvmap::new(r);
    // Angular distance (radians) between each texel's center and the
    // direction of the point currently written there; used to resolve
    // same-surface contention during splatting only.
    let mut angles = vec![vec![f32::INFINITY; r * r]; FACE_COUNT];
    for i in 0..cloud.len() {
        let offset = cloud.positions[i] - anchor;
        let dist = offset.norm();
        if dist < 1e-6 {
            continue;
        }
        let dir = offset / dist;
        let (face, u, v) = dir_to_texel(dir, r);
        let radius =
            ((params.footprint * r as f64 / (2.0 * PI * dist)).round() as i64).clamp(1, 8) as i64;
        // Square (Chebyshev) splat, walking across face seams by going
        // through continuous face coordinates.
        let (sc, tc, ma) = face_coords(dir, face);
        let s_center = sc / ma;
        let t_center = tc / ma;
        let step = 2.0 / r as f64;
        for dv in -radius..=radius {
            for du in -radius..=radius {
                let s = s_center + du as f64 * step;
                let t = t_center + dv as f64 * step;
                let d = face_dir(face, s, t);
                let (f2, u2, v2) = dir_to_texel(d, r);
                // `dir_to_texel` clamps; drop offsets that did not land where
                // they aimed (beyond the 90-degree face frustum).
                if (s.abs() > 1.0 || t.abs() > 1.0) && f2 == face {
                    continue;
                }
                let _ = (u, v);
                let idx = v2 * r + u2;
                let old_depth = out.depth[f2][idx] as f64;
                let ang = dir
                    .dot(&texel_to_dir(f2, u2, v2, r))
                    .clamp(-1.0, 1.0)
                    .acos() as f32;
                // Clearly nearer points occlude; clearly farther ones are
                // occluded; within the band the angularly closest point wins.
                let take = if dist < old_depth - params.occlusion_eps {
                    true
                } else if dist > old_depth + params.occlusion_eps {
                    false
                } else {
                    ang < angles[f2][idx]
                };
                if take {
                    out.depth[f2][idx] = dist as f32;
                    out.source[f2][idx] = i as u32;
                    out.cubemap.faces[f2].set(u2, v2, cloud.colors[i]);
                    angles[f2][idx] = ang;
                }
            }
        }
    }
    for _ in 0..params.closing_passes {
        if !close_small_holes(&mut out) {
            break;
        }
    }
    out
}

/// Fill unset texels that are mostly surrounded by set ones, copying the
/// nearest-depth neighbor (color, depth and source index) so the
/// source-point invariant survives.
fn close_small_holes(env: &mut SplattedEnvmap) -> bool {
    let r = env.cubemap.resolution;
    let mut fills: Vec<(usize, usize, usize, usize, usize, usize)> = Vec::new();
    for face in 0..FACE_COUNT {
        for v in 0..r {
            for u in 0..r {
                if env.is_set(face, u, v) {
                    continue;
                }
                let mut set_neighbors = 0;
                let mut best: Option<(f32, usize, usize, usize)> = None;
                for dv in -1i64..=1 {
                    for du in -1i64..=1 {
                        if du == 0 && dv == 0 {
                            continue;
                        }
                        let s =
                            ((u as f64 + 0.5) / r as f64 * 2.0 - 1.0) + du as f64 * 2.0 / r as f64;
                        let t =
                            ((v as f64 + 0.5) / r as f64 * 2.0 - 1.0) + dv as f64 * 2.0 / r as f64;
                        let (f2, u2, v2) = dir_to_texel(face_dir(face, s, t), r);
                        if (s.abs() > 1.0 || t.abs() > 1.0) && f2 == face {
                            continue;
                        }
                        if env.is_set(f2, u2, v2) {
                            set_neighbors += 1;
                            let d = env.depth[f2][v2 * r + u2];
                            if best.map_or(true, |(bd, ..)| d < bd) {
                                best = Some((d, f2, u2, v2));
                            }
                        }
                    }
                }
                if set_neighbors >= 5 {
                    let (_, f2, u2, v2) = best.unwrap();
                    fills.push((face, u, v, f2, u2, v2));
                }
            }
        }
    }
    let changed = !fills.is_empty();
    for (face, u, v, f2, u2, v2) in fills {
        let idx = v * r + u;
        let src_idx = v2 * r + u2;
        env.depth[face][idx] = env.depth[f2][src_idx];
        env.source[face][idx] = env.source[f2][src_idx];
        let c = env.cubemap.get(f2, u2, v2);
        env.cubemap.set(face, u, v, c);
    }
    changed
}

/// Background content for texels the near field never touched.
#[derive(Debug, Clone)]
pub enum FarField {
    /// Neutral vertical luminance gradient (bright toward +Y).
    Procedural,
    /// Equirectangular HDR panorama, blurred so it reads as distant context.
    File(std::path::PathBuf),
}

/// Fill unset texels in place; set texels are never touched.
pub fn fill_far_field(env: &mut SplattedEnvmap, far: &FarField) -> Result<()> {
    let r = env.cubemap.resolution;
    let sample: Box<dyn Fn(Vec3) -> [f32; 3]> = match far {
        FarField::Procedural => Box::new(|dir: Vec3| {
            let lum = (0.55 + 0.25 * dir.y) as f32;
            [lum, lum, lum]
        }),
        FarField::File(path) => {
            let pano = load_equirect_blurred(path, (r as f64 / 32.0).max(1.0))?;
            Box::new(move |dir: Vec3| {
                let lon = dir.x.atan2(dir.z); // [-pi, pi]
                let lat = dir.y.asin(); // [-pi/2, pi/2]
                let x = (lon + PI) / (2.0 * PI) * pano.width as f64;
                let y = (lat + PI / 2.0) / PI * pano.height as f64;
                pano.sample_bilinear(x - 0.5, y - 0.5)
            })
        }
    };
    for face in 0..FACE_COUNT {
        for v in 0..r {
            for u in 0..r {
                if !env.is_set(face, u, v) {
                    env.cubemap.faces[face].set(u, v, sample(texel_to_dir(face, u, v, r)));
                }
            }
        }
    }
    Ok(())
}

fn load_equirect_blurred(path: &Path, sigma: f64) -> Result<LinearImage> {
    let img = image::open(path)
        .map_err(|e| Error::Load {
            path: path.to_path_buf(),
            reason: e.to_string(),
        })?
        .into_rgb32f();
    let (w, h) = (img.width() as usize, img.height() as usize);
    let mut lin = LinearImage::new(w, h);
    for y in 0..h {
        for x in 0..w {
            let p = img.get_pixel(x as u32, y as u32);
            lin.set(x, y, [p[0], p[1], p[2]]);
        }
    }
    Ok(crate::filter::gaussian_blur(&lin, sigma))
}

/// Roughness-indexed blurred copies of an environment map. Level 0 is the
/// unfiltered input; level L-1 approximates a fully diffuse lookup.
#[derive(Debug, Clone)]
pub struct PrefilteredEnvmap {
    pub levels: Vec<Cubemap>,
}

impl PrefilteredEnvmap {
    pub fn level_count(&self) -> usize {
        self.levels.len()
    }

    /// Level index for a roughness in [0, 1].
    pub fn level_for_roughness(&self, roughness: f64) -> usize {
        let l = self.levels.len();
        ((roughness.clamp(0.0, 1.0) * (l - 1) as f64).round() as usize).min(l - 1)
    }
}

/// Angular Gaussian blur width for level `level` of `count`.
///
/// Quadratic in the level fraction, so with the linear roughness-to-level
/// mapping the effective width grows like `roughness^2 * 45deg` -- low
/// roughness keeps reflections recognizable while still wiping out
/// sub-degree detail, matching how microfacet lobes narrow near mirror
/// finish.
pub fn level_sigma(level: usize, count: usize) -> f64 {
    let t = level as f64 / (count - 1) as f64;
    t * t * PI / 4.0
}

/// Build `count` levels (default 5). Each blurred level is computed by
/// solid-angle-weighted downsampling, a full-sphere Gaussian-lobe
/// convolution at reduced resolution, per-face bilinear upsampling, and an
/// exact energy renormalization back to the level-0 mean.
pub fn prefilter(cubemap: &Cubemap, count: usize) -> Result<PrefilteredEnvmap> {
    if count < 2 {
        return Err(Error::InvalidInput(
            "prefilter needs at least 2 levels".into(),
        ));
    }
    let base_energy = cubemap.mean_energy();
    let mut levels = vec![cubemap.clone()];
    for level in 1..count {
        let sigma = level_sigma(level, count);
        let work = work_resolution(sigma, cubemap.resolution);
        let small = downsample(cubemap, work);
        let blurred = convolve_sphere(&small, sigma);
        let mut up = upsample(&blurred, cubemap.resolution);
        renormalize(&mut up, base_energy);
        levels.push(up);
    }
    Ok(PrefilteredEnvmap { levels })
}

fn work_resolution(sigma: f64, max_r: usize) -> usize {
    let target = (PI / sigma).ceil() as usize;
    let mut r = 4usize;
    while r < target {
        r *= 2;
    }
    r.min(max_r.max(4))
}

fn downsample(src: &Cubemap, r: usize) -> Cubemap {
    if r >= src.resolution {
        return src.clone();
    }
    let mut sums = vec![vec![[0.0f64; 4]; r * r]; FACE_COUNT];
    for f in 0..FACE_COUNT {
        for v in 0..src.resolution {
            for u in 0..src.resolution {
                let w = texel_solid_angle(u, v, src.resolution);
                let (f2, u2, v2) = dir_to_texel(texel_to_dir(f, u, v, src.resolution), r);
                let c = src.get(f, u, v);
                let acc = &mut sums[f2][v2 * r + u2];
                for k in 0..3 {
                    acc[k] += w * c[k] as f64;
                }
                acc[3] += w;
            }
        }
    }
    let mut out = Cubemap::new(r);
    for f in 0..FACE_COUNT {
        for v in 0..r {
            for u in 0..r {
                let acc = sums[f][v * r + u];
                if acc[3] > 0.0 {
                    out.set(
                        f,
                        u,
                        v,
                        [
                            (acc[0] / acc[3]) as f32,
                            (acc[1] / acc[3]) as f32,
                            (acc[2] / acc[3]) as f32,
                        ],
                    );
                }
            }
        }
    }
    out
}

/// Full spherical convolution with an angular Gaussian kernel.
fn convolve_sphere(src: &Cubemap, sigma: f64) -> Cubemap {
    let r = src.resolution;
    let texels: Vec<(Vec3, f64, [f32; 3])> = (0..FACE_COUNT)
        .flat_map(|f| (0..r).flat_map(move |v| (0..r).map(move |u| (f, u, v))))
        .map(|(f, u, v)| {
            (
                texel_to_dir(f, u, v, r),
                texel_solid_angle(u, v, r),
                src.get(f, u, v),
            )
        })
        .collect();
    let inv_two_sigma2 = 1.0 / (2.0 * sigma * sigma);
    let mut out = Cubemap::new(r);
    for f in 0..FACE_COUNT {
        for v in 0..r {
            for u in 0..r {
                let center = texel_to_dir(f, u, v, r);
                let mut acc = [0.0f64; 3];
                let mut wsum = 0.0f64;
                for (dir, omega, color) in &texels {
                    let cos = center.dot(dir).clamp(-1.0, 1.0);
                    let theta = cos.acos();
                    let w = (-theta * theta * inv_two_sigma2).exp() * omega;
                    if w > 1e-12 {
                        for k in 0..3 {
                            acc[k] += w * color[k] as f64;
                        }
                        wsum += w;
                    }
                }
                out.set(
                    f,
                    u,
                    v,
                    [
                        (acc[0] / wsum) as f32,
                        (acc[1] / wsum) as f32,
                        (acc[2] / wsum) as f32,
                    ],
                );
            }
        }
    }
    out
}

fn upsample(src: &Cubemap, r: usize) -> Cubemap {
    if r == src.resolution {
        return src.clone();
    }
    let mut out = Cubemap::new(r);
    let scale = src.resolution as f64 / r as f64;
    for f in 0..FACE_COUNT {
        for v in 0..r {
            for u in 0..r {
                let x = (u as f64 + 0.5) * scale - 0.5;
                let y = (v as f64 + 0.5) * scale - 0.5;
                out.set(f, u, v, src.faces[f].sample_bilinear(x, y));
            }
        }
    }
    out
}

fn renormalize(map: &mut Cubemap, target: [f64; 3]) {
    let actual = map.mean_energy();
    let mut scale = [1.0f32; 3];
    for k in 0..3 {
        if actual[k] > 1e-9 {
            scale[k] = (target[k] / actual[k]) as f32;
        }
    }
    for face in &mut map.faces {
        for px in &mut face.data {
            for k in 0..3 {
                px[k] *= scale[k];
            }
        }
    }
}
