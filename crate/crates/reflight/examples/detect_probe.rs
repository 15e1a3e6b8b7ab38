//! Prints per-frame built-in detection results for every default suite scene.
//! Development aid for checking that each wall-facing capture pose resolves
//! every visible plaque.

use reflight::detect::detect_glyphs;
use reflight::scene::{capture, make_default_suite, plaque_in_frustum, NO_PLAQUE};

fn main() {
    let cfg = reflight::scene::CaptureConfig::desk(7);
    for s in make_default_suite() {
        let out = capture(&s.scene, &s.trajectory, &cfg).unwrap();
        println!("scene {}:", s.id);
        for (f, frame) in out.frames.iter().enumerate() {
            let visible: Vec<usize> = (0..s.scene.plaques.len())
                .filter(|&i| {
                    plaque_in_frustum(&frame.pose, &frame.intrinsics_rgb, &s.scene.plaques[i])
                })
                .collect();
            let masked: usize = out.plaque_masks[f]
                .iter()
                .filter(|&&m| m != NO_PLAQUE)
                .count();
            let regions = detect_glyphs(&frame.rgb.to_linear());
            let decoded = regions
                .iter()
                .filter(|r| r.decoded_payload.is_some())
                .count();
            let min_conf = regions
                .iter()
                .map(|r| r.confidence)
                .fold(f64::INFINITY, f64::min);
            println!(
                "  frame {f:2}: visible {:?} mask_px {masked:6} regions {} decoded {decoded} min_conf {min_conf:.2}",
                visible,
                regions.len()
            );
        }
    }
}
