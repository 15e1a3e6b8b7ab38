//! Prints per-frame registration corrections for the default suite, to check
//! how far ICP wanders when the reported poses are already exact.

use reflight::cloud::{fuse, FusionParams};
use reflight::scene::{capture, make_default_suite, CaptureConfig};

fn main() {
    let cfg = CaptureConfig::desk(7);
    for s in make_default_suite() {
        let out = capture(&s.scene, &s.trajectory, &cfg).unwrap();
        let mut params = FusionParams::default();
        if let Ok(mc) = std::env::var("MAX_CORR") {
            params.icp.max_corr = mc.parse().unwrap();
        }
        let fusion = fuse(&out.frames, s.anchor, &params).unwrap();
        println!("scene {}: {} points", s.id, fusion.cloud.len());
        for (i, c) in fusion.corrections.iter().enumerate() {
            match c {
                None => println!("  frame {i:2}: skipped"),
                Some(t) => {
                    let ang = t.rotation_angle().to_degrees();
                    let trans = t.translation.norm() * 1000.0;
                    println!("  frame {i:2}: rot {ang:.4} deg, trans {trans:.2} mm");
                }
            }
        }
    }
}
