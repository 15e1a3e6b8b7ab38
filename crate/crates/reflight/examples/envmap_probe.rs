//! Measures how faithfully the splatted environment map resolves each plaque
//! glyph: samples the cubemap at directions corresponding to glyph cell
//! centers (and a 3x3 subgrid per cell) and reports the cell error rate
//! against the encoded bitmap.

use reflight::cloud::{fuse, FusionParams};
use reflight::envmap::{fill_far_field, splat_near_field, FarField, SplatParams};
use reflight::geom::Vec3;
use reflight::glyph::{encode_plaque, GLYPH_CELLS};
use reflight::scene::{capture, make_default_suite, CaptureConfig};

fn main() {
    let cfg = CaptureConfig::desk(7);
    let resolution: usize = std::env::var("CUBE_R")
        .ok()
        .and_then(|v| v.parse().ok())
        .unwrap_or(1024);
    let mut splat = SplatParams::default();
    if let Ok(f) = std::env::var("FOOTPRINT") {
        splat.footprint = f.parse().unwrap();
    }
    for s in make_default_suite() {
        let out = capture(&s.scene, &s.trajectory, &cfg).unwrap();
        let fusion = fuse(&out.frames, s.anchor, &FusionParams::default()).unwrap();
        let mut env = splat_near_field(&fusion.cloud, s.anchor, resolution, &splat);
        fill_far_field(&mut env, &FarField::Procedural).unwrap();
        println!(
            "scene {}: {} points, set fraction {:.3}",
            s.id,
            fusion.cloud.len(),
            env.set_fraction()
        );
        for p in &s.scene.plaques {
            let bitmap = encode_plaque(&p.payload, p.kind).unwrap();
            let n = GLYPH_CELLS;
            let (w, h) = p.size;
            let mut errors = 0;
            let mut total = 0;
            for row in 0..n {
                for col in 0..n {
                    // Majority over a 3x3 subgrid inside the cell.
                    let mut dark_votes = 0;
                    for sy in 0..3 {
                        for sx in 0..3 {
                            let lx = ((col as f64 + (sx as f64 + 1.0) / 4.0) / n as f64 - 0.5) * w;
                            let ly = ((row as f64 + (sy as f64 + 1.0) / 4.0) / n as f64 - 0.5) * h;
                            let world = p.placement.apply(Vec3::new(lx, ly, 0.0));
                            let dir = (world - s.anchor).normalize();
                            let c = env.cubemap.sample_nearest(dir);
                            let lum = 0.2126 * c[0] + 0.7152 * c[1] + 0.0722 * c[2];
                            if lum < 0.35 {
                                dark_votes += 1;
                            }
                        }
                    }
                    let dark = dark_votes >= 5;
                    if dark != bitmap.get(row, col) {
                        errors += 1;
                    }
                    total += 1;
                }
            }
            println!(
                "  {:16} {:?}: {errors}/{total} cells wrong",
                p.payload, p.kind
            );
        }
    }
}
