//! Image-quality and string-distance metrics used by the evaluation:
//! PSNR, windowed SSIM, and Levenshtein distance.
//!
//! Image metrics operate on linear-light float renders (not tone-mapped
//! PNGs) for determinism, and the masked variants restrict scoring to the
//! union of two renders' hit masks so the background never dilutes the
//! comparison.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::raster::LinearImage;

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct QualityScore {
    /// Decibels; `f64::INFINITY` for identical images.
    pub psnr: f64,
    pub ssim: f64,
}

/// Peak signal-to-noise ratio over all pixels and channels, range [0, 1].
/// Identical images give `+INFINITY`.
pub fn psnr(a: &LinearImage, b: &LinearImage) -> Result<f64> {
    a.ensure_same_shape(b)?;
    let mask = vec![true; a.width * a.height];
    psnr_masked(a, b, &mask)
}

/// PSNR restricted to pixels where `mask` is true.
pub fn psnr_masked(a: &LinearImage, b: &LinearImage, mask: &[bool]) -> Result<f64> {
    a.ensure_same_shape(b)?;
    let mut se = 0.0f64;
    let mut n = 0usize;
    for (i, (&m, (pa, pb))) in mask.iter().zip(a.data.iter().zip(&b.data)).enumerate() {
        let _ = i;
        if !m {
            continue;
        }
        for c in 0..3 {
            let d = pa[c] as f64 - pb[c] as f64;
            se += d * d;
        }
        n += 1;
    }
    if n == 0 {
        return Err(Error::InvalidInput("psnr mask selects no pixels".into()));
    }
    let mse = se / (3 * n) as f64;
    if mse == 0.0 {
        Ok(f64::INFINITY)
    } else {
        Ok(10.0 * (1.0 / mse).log10())
    }
}

const SSIM_WINDOW: usize = 11;
const SSIM_SIGMA: f64 = 1.5;
const SSIM_K1: f64 = 0.01;
const SSIM_K2: f64 = 0.03;

fn ssim_kernel() -> [f64; SSIM_WINDOW] {
    let mut k = [0.0; SSIM_WINDOW];
    let c = (SSIM_WINDOW / 2) as f64;
    let mut sum = 0.0;
    for (i, w) in k.iter_mut().enumerate() {
        *w = (-((i as f64 - c).powi(2)) / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
        sum += *w;
    }
    for w in &mut k {
        *w /= sum;
    }
    k
}

/// Mean windowed SSIM over channels; windows fully inside the image.
pub fn ssim(a: &LinearImage, b: &LinearImage) -> Result<f64> {
    ssim_masked(a, b, &vec![true; a.width * a.height])
}

/// SSIM averaged over windows whose center pixel is selected by `mask`.
pub fn ssim_masked(a: &LinearImage, b: &LinearImage, mask: &[bool]) -> Result<f64> {
    a.ensure_same_shape(b)?;
    let (w, h) = (a.width, a.height);
    if w < SSIM_WINDOW || h < SSIM_WINDOW {
        return Err(Error::InvalidInput(format!(
            "ssim requires at least {SSIM_WINDOW}x{SSIM_WINDOW}, got {w}x{h}"
        )));
    }
    let kernel = ssim_kernel();
    let half = SSIM_WINDOW / 2;
    let c1 = (SSIM_K1 * SSIM_K1) as f64;
    let c2 = (SSIM_K2 * SSIM_K2) as f64;

    // Separable weighted local statistics over the five product planes.
    let plane = |f: &dyn Fn(usize) -> f64| -> Vec<f64> { (0..w * h).map(f).collect() };
    let mut total = 0.0f64;
    let mut count = 0usize;
    for ch in 0..3 {
        let pa = plane(&|i| a.data[i][ch] as f64);
        let pb = plane(&|i| b.data[i][ch] as f64);
        let paa = plane(&|i| pa[i] * pa[i]);
        let pbb = plane(&|i| pb[i] * pb[i]);
        let pab = plane(&|i| pa[i] * pb[i]);
        let filt = |p: &[f64]| separable_filter(p, w, h, &kernel);
        let (ma, mb) = (filt(&pa), filt(&pb));
        let (saa, sbb, sab) = (filt(&paa), filt(&pbb), filt(&pab));
        for y in half..h - half {
            for x in half..w - half {
                let i = y * w + x;
                if !mask[i] {
                    continue;
                }
                let mu_a = ma[i];
                let mu_b = mb[i];
                let va = saa[i] - mu_a * mu_a;
                let vb = sbb[i] - mu_b * mu_b;
                let cov = sab[i] - mu_a * mu_b;
                let s = ((2.0 * mu_a * mu_b + c1) * (2.0 * cov + c2))
                    / ((mu_a * mu_a + mu_b * mu_b + c1) * (va + vb + c2));
                total += s;
                count += 1;
            }
        }
    }
    if count == 0 {
        return Err(Error::InvalidInput(
            "ssim mask selects no interior windows".into(),
        ));
    }
    Ok(total / count as f64)
}

/// Horizontal-then-vertical weighted filtering; only interior values (where
/// the window fits) are consumed by the caller.
fn separable_filter(p: &[f64], w: usize, h: usize, kernel: &[f64; SSIM_WINDOW]) -> Vec<f64> {
    let half = SSIM_WINDOW / 2;
    let mut horiz = vec![0.0f64; w * h];
    for y in 0..h {
        for x in half..w - half {
            let mut acc = 0.0;
            for (k, kw) in kernel.iter().enumerate() {
                acc += kw * p[y * w + x + k - half];
            }
            horiz[y * w + x] = acc;
        }
    }
    let mut out = vec![0.0f64; w * h];
    for y in half..h - half {
        for x in half..w - half {
            let mut acc = 0.0;
            for (k, kw) in kernel.iter().enumerate() {
                acc += kw * horiz[(y + k - half) * w + x];
            }
            out[y * w + x] = acc;
        }
    }
    out
}

/// Masked PSNR and SSIM in one call.
pub fn masked_quality(a: &LinearImage, b: &LinearImage, mask: &[bool]) -> Result<QualityScore> {
    Ok(QualityScore {
        psnr: psnr_masked(a, b, mask)?,
        ssim: ssim_masked(a, b, mask)?,
    })
}

/// Minimum number of single-character insertions, deletions and
/// substitutions transforming `a` into `b`.
pub fn levenshtein(a: &str, b: &str) -> usize {
    let a: Vec<char> = a.chars().collect();
    let b: Vec<char> = b.chars().collect();
    let mut prev: Vec<usize> = (0..=b.len()).collect();
    let mut cur = vec![0usize; b.len() + 1];
    for (i, &ca) in a.iter().enumerate() {
        cur[0] = i + 1;
        for (j, &cb) in b.iter().enumerate() {
            let sub = prev[j] + usize::from(ca != cb);
            cur[j + 1] = sub.min(prev[j + 1] + 1).min(cur[j] + 1);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_image(w: usize, h: usize, seed: u64) -> LinearImage {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut img = LinearImage::new(w, h);
        for p in img.data.iter_mut() {
            *p = [rng.gen(), rng.gen(), rng.gen()];
        }
        img
    }

    #[test]
    fn psnr_identity_is_infinite() {
        let a = random_image(16, 16, 1);
        assert!(psnr(&a, &a).unwrap().is_infinite());
    }

    #[test]
    fn psnr_half_offset_is_6_02_db() {
        // 0.0 vs 0.5 everywhere: MSE 0.25, no clipping involved.
        let a = LinearImage::filled(16, 16, [0.0; 3]);
        let b = LinearImage::filled(16, 16, [0.5; 3]);
        assert!((psnr(&a, &b).unwrap() - 6.0206).abs() < 1e-4);
    }

    #[test]
    fn psnr_shape_mismatch_errors() {
        let a = LinearImage::new(8, 8);
        let b = LinearImage::new(8, 9);
        assert!(psnr(&a, &b).is_err());
    }

    #[test]
    fn psnr_decreases_with_noise_amplitude() {
        let a = LinearImage::filled(16, 16, [0.5; 3]);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let noise: Vec<[f32; 3]> = (0..256)
            .map(|_| {
                [
                    rng.gen::<f32>() - 0.5,
                    rng.gen::<f32>() - 0.5,
                    rng.gen::<f32>() - 0.5,
                ]
            })
            .collect();
        let mut prev = f64::INFINITY;
        for amp in [0.05f32, 0.1, 0.2, 0.4] {
            let mut b = a.clone();
            for (p, n) in b.data.iter_mut().zip(&noise) {
                for c in 0..3 {
                    p[c] += amp * n[c];
                }
            }
            let v = psnr(&a, &b).unwrap();
            assert!(v < prev, "{v} !< {prev} at amp {amp}");
            prev = v;
        }
    }

    #[test]
    fn ssim_identity_and_symmetry() {
        let a = random_image(32, 32, 3);
        let b = random_image(32, 32, 4);
        assert!((ssim(&a, &a).unwrap() - 1.0).abs() < 1e-9);
        assert!((ssim(&a, &b).unwrap() - ssim(&b, &a).unwrap()).abs() < 1e-9);
    }

    #[test]
    fn ssim_rejects_small_images() {
        let a = LinearImage::new(10, 32);
        assert!(ssim(&a, &a).is_err());
    }

    #[test]
    fn ssim_detects_local_permutation() {
        let a = random_image(32, 32, 5);
        let mut b = a.clone();
        let p = b.get(15, 15);
        b.set(15, 15, b.get(16, 15));
        b.set(16, 15, p);
        assert!(ssim(&a, &b).unwrap() < 1.0 - 1e-6);
    }

    /// Direct per-window double-loop SSIM, the independent oracle.
    fn ssim_naive(a: &LinearImage, b: &LinearImage) -> f64 {
        let kernel1d = ssim_kernel();
        let half = SSIM_WINDOW / 2;
        let (w, h) = (a.width, a.height);
        let c1 = SSIM_K1 * SSIM_K1;
        let c2 = SSIM_K2 * SSIM_K2;
        let mut total = 0.0;
        let mut count = 0usize;
        for ch in 0..3 {
            for y in half..h - half {
                for x in half..w - half {
                    let (mut mu_a, mut mu_b) = (0.0f64, 0.0f64);
                    let (mut saa, mut sbb, mut sab) = (0.0f64, 0.0f64, 0.0f64);
                    for dy in 0..SSIM_WINDOW {
                        for dx in 0..SSIM_WINDOW {
                            let wgt = kernel1d[dy] * kernel1d[dx];
                            let va = a.get(x + dx - half, y + dy - half)[ch] as f64;
                            let vb = b.get(x + dx - half, y + dy - half)[ch] as f64;
                            mu_a += wgt * va;
                            mu_b += wgt * vb;
                            saa += wgt * va * va;
                            sbb += wgt * vb * vb;
                            sab += wgt * va * vb;
                        }
                    }
                    let va = saa - mu_a * mu_a;
                    let vb = sbb - mu_b * mu_b;
                    let cov = sab - mu_a * mu_b;
                    total += ((2.0 * mu_a * mu_b + c1) * (2.0 * cov + c2))
                        / ((mu_a * mu_a + mu_b * mu_b + c1) * (va + vb + c2));
                    count += 1;
                }
            }
        }
        total / count as f64
    }

    #[test]
    fn ssim_matches_direct_formula_oracle() {
        let a = random_image(64, 64, 6);
        let b = random_image(64, 64, 7);
        assert!((ssim(&a, &b).unwrap() - ssim_naive(&a, &b)).abs() < 1e-6);
    }

    #[test]
    fn masked_metrics_ignore_background() {
        let a = random_image(32, 32, 8);
        let mut b = a.clone();
        // Corrupt only the left half; mask only the right half.
        for y in 0..32 {
            for x in 0..16 {
                b.set(x, y, [0.0; 3]);
            }
        }
        let mask: Vec<bool> = (0..32 * 32).map(|i| (i % 32) >= 16).collect();
        assert!(psnr_masked(&a, &b, &mask).unwrap().is_infinite());
        // SSIM windows centered on the right half still overlap the damage
        // near the boundary, so just require near-1 far from full-frame.
        assert!(ssim_masked(&a, &b, &mask).unwrap() > ssim(&a, &b).unwrap());
    }

    #[test]
    fn levenshtein_basics() {
        assert_eq!(levenshtein("", "abc"), 3);
        assert_eq!(levenshtein("abc", "abc"), 0);
        assert_eq!(levenshtein("kitten", "sitting"), 3);
    }

    fn all_strings(max_len: usize) -> Vec<String> {
        let mut out = vec![String::new()];
        let mut frontier = vec![String::new()];
        for _ in 0..max_len {
            let mut next = Vec::new();
            for s in &frontier {
                for c in ['a', 'b'] {
                    let mut t = s.clone();
                    t.push(c);
                    next.push(t);
                }
            }
            out.extend(next.iter().cloned());
            frontier = next;
        }
        out
    }

    /// Breadth-first search over single-character edits.
    fn bfs_distance(a: &str, b: &str) -> usize {
        use std::collections::{HashSet, VecDeque};
        let mut seen = HashSet::new();
        let mut q = VecDeque::new();
        q.push_back((a.to_string(), 0usize));
        seen.insert(a.to_string());
        while let Some((s, d)) = q.pop_front() {
            if s == b {
                return d;
            }
            if s.len() > b.len().max(a.len()) + 1 {
                continue;
            }
            let chars: Vec<char> = s.chars().collect();
            let mut push = |t: String| {
                if seen.insert(t.clone()) {
                    q.push_back((t, d + 1));
                }
            };
            for i in 0..=chars.len() {
                for c in ['a', 'b'] {
                    let mut t: Vec<char> = chars.clone();
                    t.insert(i, c);
                    push(t.into_iter().collect());
                }
            }
            for i in 0..chars.len() {
                let mut t = chars.clone();
                t.remove(i);
                push(t.into_iter().collect());
                for c in ['a', 'b'] {
                    let mut t = chars.clone();
                    t[i] = c;
                    push(t.into_iter().collect());
                }
            }
        }
        unreachable!("bfs exhausts only when unreachable, which cannot happen")
    }

    #[test]
    fn levenshtein_matches_exhaustive_edit_search() {
        let strings = all_strings(4);
        for a in &strings {
            for b in &strings {
                assert_eq!(levenshtein(a, b), bfs_distance(a, b), "{a:?} vs {b:?}");
            }
        }
    }

    #[test]
    fn levenshtein_is_a_metric() {
        let strings = all_strings(3);
        for a in &strings {
            for b in &strings {
                let dab = levenshtein(a, b);
                assert_eq!(dab, levenshtein(b, a));
                assert_eq!(dab == 0, a == b);
                for c in &strings {
                    assert!(dab <= levenshtein(a, c) + levenshtein(c, b));
                }
            }
        }
    }
}
