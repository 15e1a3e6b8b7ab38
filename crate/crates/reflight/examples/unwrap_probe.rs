//! Runs the glyph detector over a PNG (e.g. an unwrap preview) and prints
//! every region it finds.

use reflight::detect::detect_glyphs;
use reflight::raster::SrgbImage;

fn main() {
    let path = std::env::args().nth(1).expect("usage: unwrap_probe <png>");
    let img = image::open(&path).expect("png").to_rgb8();
    let (w, h) = (img.width() as usize, img.height() as usize);
    let mut srgb = SrgbImage::new(w, h);
    for y in 0..h {
        for x in 0..w {
            let p = img.get_pixel(x as u32, y as u32);
            srgb.set(x, y, [p[0], p[1], p[2]]);
        }
    }
    let regions = detect_glyphs(&srgb.to_linear());
    println!("{} regions", regions.len());
    for r in &regions {
        println!(
            "  bbox {:?} class {:?} conf {:.2} payload {:?}",
            r.bbox, r.class, r.confidence, r.decoded_payload
        );
    }
}
