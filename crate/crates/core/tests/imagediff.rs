use mn_delta::imagediff::{detect_changes, neighbor_edges, tile_windows, window_features, DetectConfig, Image, WindowGrid};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::sync::Arc;

fn textured(seed: u64, w: usize, h: usize, lo: u8, hi: u8) -> Image {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    let data = (0..w * h).flat_map(|_| {
        let g = r.random_range(lo..=hi);
        [g, g, g]
    });
    Image::new(w, h, data.collect()).unwrap()
}

fn recolor(img: &Image, x0: usize, y0: usize, size: usize, rgb: [u8; 3]) -> Image {
    let mut out = img.clone();
    for y in y0..y0 + size {
        for x in x0..x0 + size {
            out.set_pixel(x, y, rgb);
        }
    }
    out
}

fn shift(img: &Image, by: u8) -> Image {
    Image::new(img.width(), img.height(), img.bytes().iter().map(|b| b + by).collect()).unwrap()
}

#[test]
fn ppm_round_trip() {
    let img = textured(1, 13, 7, 0, 255);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("x.ppm");
    img.write_ppm(&path).unwrap();
    assert_eq!(Image::read_ppm(&path).unwrap(), img);
    std::fs::write(&path, b"P6\n4 4\n255\n\x00").unwrap();
    assert!(matches!(Image::read_ppm(&path), Err(mn_delta::Error::Format { .. })));
}

#[test]
fn tiling_layout() {
    let img = textured(2, 200, 150, 0, 255);
    let grid = WindowGrid::for_image(&img, 16, 5).unwrap();
    let ds = tile_windows(&img, &grid).unwrap();
    assert_eq!((ds.m, ds.n), (999, 256));
    // window 38 is row 1, column 1: origin (5, 5); offset 17 is (1, 1)
    assert_eq!(grid.origin(38), (5, 5));
    assert_eq!(ds.sample(17, 38), img.pixel(6, 6));
}

#[test]
fn brightness_shift_leaves_features_identical() {
    let p = textured(3, 60, 45, 20, 200);
    let q = recolor(&p, 20, 15, 15, [180, 30, 30]);
    let grid = WindowGrid::for_image(&p, 16, 5).unwrap();
    let edges = Arc::new(neighbor_edges(&grid).unwrap());
    for img in [&p, &q] {
        let a = window_features(&tile_windows(img, &grid).unwrap(), edges.clone(), 0.5).unwrap();
        let b = window_features(&tile_windows(&shift(img, 40), &grid).unwrap(), edges.clone(), 0.5).unwrap();
        assert_eq!(a.values(), b.values());
    }
    let cfg = DetectConfig { target: 5, ..Default::default() };
    let base = detect_changes(&p, &q, &cfg).unwrap();
    let shifted = detect_changes(&shift(&p, 40), &shift(&q, 40), &cfg).unwrap();
    assert_eq!(base.changed, shifted.changed);
    assert_eq!(base.report, shifted.report);
}

#[test]
fn swapped_images_terminate_and_are_deterministic() {
    let p = textured(4, 60, 45, 40, 120);
    let q = recolor(&p, 25, 10, 18, [30, 200, 60]);
    let cfg = DetectConfig { target: 4, ..Default::default() };
    let fwd = detect_changes(&p, &q, &cfg).unwrap();
    let back = detect_changes(&q, &p, &cfg).unwrap();
    assert_eq!(back.report.direction, "image_p / image_q");
    assert!(fwd.report.active > 4 || fwd.report.warning.is_some());
    assert!(back.report.active > 4 || back.report.warning.is_some());
    assert_eq!(detect_changes(&p, &q, &cfg).unwrap(), fwd);
}

#[test]
fn mismatched_sizes_rejected() {
    let a = Image::filled(20, 20, [0, 0, 0]).unwrap();
    let b = Image::filled(21, 20, [0, 0, 0]).unwrap();
    assert!(detect_changes(&a, &b, &DetectConfig::default()).is_err());
}

#[test]
fn image_pipeline_is_independent_of_gaussian_code() {
    // the image path must not reach the Gaussian-only modules
    let src = include_str!("../src/imagediff.rs");
    for forbidden in ["synth", "cpmatch"] {
        assert!(!src.contains(&format!("crate::{forbidden}")), "imagediff uses {forbidden}");
    }
    let cmd = include_str!("../src/harness/commands.rs");
    let body = cmd.split("pub fn image_diff").nth(1).unwrap().split("\npub fn ").next().unwrap();
    for forbidden in ["change_pair", "sample_gaussian", "solve_cp", "sample_covariance"] {
        assert!(!body.contains(forbidden), "image_diff calls {forbidden}");
    }
}
