//! On-disk formats: capture session directories, the cubemap container, and
//! the float image container.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use reflight::envmap::{Cubemap, FACE_COUNT};
use reflight::error::Error;
use reflight::geom::Vec3;
use reflight::raster::LinearImage;
use reflight::scene::{capture, make_default_suite, CaptureConfig};
use reflight::session::{
    read_cubemap, read_float_image, read_session, write_cubemap, write_float_image, write_session,
};

#[test]
fn session_round_trip_is_bit_exact() {
    let suite = make_default_suite();
    let scene = &suite[1];
    let frames = capture(&scene.scene, &scene.trajectory, &CaptureConfig::desk(11))
        .unwrap()
        .frames;
    let dir = tempfile::tempdir().unwrap();
    write_session(&frames, "roundtrip", scene.anchor, dir.path()).unwrap();
    let (manifest, reread) = read_session(dir.path()).unwrap();
    assert_eq!(manifest.anchor_vec(), scene.anchor);
    assert_eq!(reread.len(), frames.len());
    for (a, b) in frames.iter().zip(&reread) {
        assert_eq!(a, b, "frame {} not bit-identical", a.frame_id);
    }
}

#[test]
fn session_read_from_empty_dir_reports_missing_artifact() {
    let dir = tempfile::tempdir().unwrap();
    match read_session(dir.path()) {
        Err(Error::MissingArtifact(path)) => {
            assert!(path.starts_with(dir.path()), "{}", path.display())
        }
        other => panic!("expected missing-artifact error, got {other:?}"),
    }
}

#[test]
fn cubemap_round_trip_is_bit_exact() {
    let mut rng = ChaCha8Rng::seed_from_u64(88);
    let mut cm = Cubemap::new(16);
    for f in 0..FACE_COUNT {
        for v in 0..16 {
            for u in 0..16 {
                // Exercise negative, subnormal-adjacent, and large values.
                cm.set(f, u, v, [rng.gen_range(-2.0..2.0), rng.gen(), 1e-30]);
            }
        }
    }
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("map.rgcm");
    write_cubemap(&cm, &path).unwrap();
    assert_eq!(read_cubemap(&path).unwrap(), cm);
}

#[test]
fn truncated_cubemap_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("map.rgcm");
    write_cubemap(&Cubemap::new(8), &path).unwrap();
    let bytes = std::fs::read(&path).unwrap();
    std::fs::write(&path, &bytes[..bytes.len() / 2]).unwrap();
    assert!(read_cubemap(&path).is_err());
}

#[test]
fn float_image_round_trip_is_bit_exact() {
    let mut img = LinearImage::new(7, 5); // deliberately non-square, odd sizes
    for y in 0..5 {
        for x in 0..7 {
            img.set(x, y, [x as f32 * 0.1, -(y as f32), 3.5e8]);
        }
    }
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("img.rgim");
    write_float_image(&img, &path).unwrap();
    assert_eq!(read_float_image(&path).unwrap(), img);
}

#[test]
fn anchor_survives_manifest_round_trip() {
    let suite = make_default_suite();
    let scene = &suite[0];
    let frames = capture(&scene.scene, &scene.trajectory, &CaptureConfig::desk(3))
        .unwrap()
        .frames;
    let dir = tempfile::tempdir().unwrap();
    let anchor = Vec3::new(1.25, -0.5, 3.0);
    write_session(&frames[..1], "anchor-check", anchor, dir.path()).unwrap();
    let (manifest, _) = read_session(dir.path()).unwrap();
    assert_eq!(manifest.anchor_vec(), anchor);
}
