//! Separable Gaussian filtering on linear-light images.

use crate::raster::LinearImage;

/// Discrete Gaussian kernel truncated at 3 sigma, normalized to sum 1.
pub fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    let radius = (3.0 * sigma).ceil().max(1.0) as i64;
    let mut k: Vec<f64> = (-radius..=radius)
        .map(|i| (-(i as f64).powi(2) / (2.0 * sigma * sigma)).exp())
        .collect();
    let sum: f64 = k.iter().sum();
    for w in &mut k {
        *w /= sum;
    }
    k
}

#[inline]
fn reflect_index(i: i64, n: i64) -> usize {
    // Mirror-with-repeat border: ... 2 1 0 | 0 1 2 ... n-1 | n-1 n-2 ...
    let period = 2 * n;
    let mut j = i.rem_euclid(period);
    if j >= n {
        j = period - 1 - j;
    }
    j as usize
}

/// Separable Gaussian blur with a reflective border, so the mean pixel value
/// is conserved.
pub fn gaussian_blur(img: &LinearImage, sigma: f64) -> LinearImage {
    if sigma <= 0.0 {
        return img.clone();
    }
    let kernel = gaussian_kernel(sigma);
    let radius = (kernel.len() / 2) as i64;
    let (w, h) = (img.width as i64, img.height as i64);

    let mut horiz = LinearImage::new(img.width, img.height);
    for y in 0..img.height {
        for x in 0..w {
            let mut acc = [0.0f64; 3];
            for (ki, kw) in kernel.iter().enumerate() {
                let sx = reflect_index(x + ki as i64 - radius, w);
                let p = img.get(sx, y);
                for c in 0..3 {
                    acc[c] += kw * p[c] as f64;
                }
            }
            horiz.set(x as usize, y, [acc[0] as f32, acc[1] as f32, acc[2] as f32]);
        }
    }
    let mut out = LinearImage::new(img.width, img.height);
    for y in 0..h {
        for x in 0..img.width {
            let mut acc = [0.0f64; 3];
            for (ki, kw) in kernel.iter().enumerate() {
                let sy = reflect_index(y + ki as i64 - radius, h);
                let p = horiz.get(x, sy);
                for c in 0..3 {
                    acc[c] += kw * p[c] as f64;
                }
            }
            out.set(x, y as usize, [acc[0] as f32, acc[1] as f32, acc[2] as f32]);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kernel_is_normalized_and_symmetric() {
        let k = gaussian_kernel(2.5);
        assert!((k.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        for i in 0..k.len() / 2 {
            assert!((k[i] - k[k.len() - 1 - i]).abs() < 1e-15);
        }
    }

    #[test]
    fn blur_conserves_mean() {
        let mut img = LinearImage::new(17, 11);
        for (i, p) in img.data.iter_mut().enumerate() {
            p[0] = ((i * 37) % 101) as f32 / 100.0;
        }
        let mean = |im: &LinearImage| {
            im.data.iter().map(|p| p[0] as f64).sum::<f64>() / im.data.len() as f64
        };
        let blurred = gaussian_blur(&img, 3.0);
        assert!((mean(&img) - mean(&blurred)).abs() < 1e-6);
    }

    #[test]
    fn blur_flattens_a_spike() {
        let mut img = LinearImage::new(21, 21);
        img.set(10, 10, [1.0; 3]);
        let blurred = gaussian_blur(&img, 2.0);
        assert!(blurred.get(10, 10)[0] < 0.1);
        assert!(blurred.get(10, 10)[0] > blurred.get(0, 0)[0]);
    }
}
