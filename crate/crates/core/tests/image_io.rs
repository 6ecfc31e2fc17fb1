use std::fs;

use meterread::image::{load_image, quantize, save_image, ImageBuffer, ImageError, ScoreMap};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_image(seed: u64, channels: usize) -> ImageBuffer {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    let (w, h) = (r.random_range(1..24), r.random_range(1..24));
    let data = (0..w * h * channels)
        .map(|_| r.random_range(0.0..=1.0))
        .collect();
    ImageBuffer::new(w, h, channels, data).unwrap()
}

#[test]
fn grayscale_fixture_scales_linearly() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("fixture.pgm");
    fs::write(&path, "P2\n2 2\n255\n0 255\n128 64\n").unwrap();
    let img = load_image(&path).unwrap();
    assert_eq!((img.width(), img.height(), img.channels()), (2, 2, 1));
    assert_eq!(img.data(), &[0.0, 1.0, 128.0 / 255.0, 64.0 / 255.0]);

    let raw = dir.path().join("fixture_raw.pgm");
    let mut bytes = b"P5\n2 2\n255\n".to_vec();
    bytes.extend([0u8, 255, 128, 64]);
    fs::write(&raw, bytes).unwrap();
    assert_eq!(load_image(&raw).unwrap().data(), img.data());
}

#[test]
fn white_color_pixel_has_three_channels() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("white.ppm");
    fs::write(&path, "P3\n1 1\n255\n255 255 255\n").unwrap();
    let img = load_image(&path).unwrap();
    assert_eq!(img.channels(), 3);
    assert_eq!(img.data(), &[1.0, 1.0, 1.0]);
}

#[test]
fn missing_file_is_reported_as_such() {
    let dir = tempfile::tempdir().unwrap();
    assert!(matches!(
        load_image(dir.path().join("nope.png")),
        Err(ImageError::MissingFile { .. })
    ));
}

#[test]
fn garbage_is_not_an_image() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("junk.png");
    fs::write(&path, b"\x89PNG\r\n\x1a\n truncated").unwrap();
    let err = load_image(&path).unwrap_err();
    assert!(
        matches!(
            err,
            ImageError::Corrupt { .. } | ImageError::Unsupported { .. }
        ),
        "{err:?}"
    );
    let txt = dir.path().join("notes.txt");
    fs::write(&txt, "hello").unwrap();
    assert!(load_image(&txt).is_err());
}

#[test]
fn round_trips_stay_within_one_quantization_step() {
    let dir = tempfile::tempdir().unwrap();
    for seed in 0..20 {
        for channels in [1, 3] {
            let img = random_image(seed, channels);
            for ext in ["png", "pgm", "ppm"] {
                if (ext == "pgm" && channels == 3) || (ext == "ppm" && channels == 1) {
                    continue;
                }
                let path = dir.path().join(format!("img_{seed}_{channels}.{ext}"));
                save_image(&img, &path).unwrap();
                let back = load_image(&path).unwrap();
                assert_eq!(
                    (back.width(), back.height(), back.channels()),
                    (img.width(), img.height(), img.channels())
                );
                let worst = img
                    .data()
                    .iter()
                    .zip(back.data())
                    .map(|(a, b)| (a - b).abs())
                    .fold(0.0, f64::max);
                assert!(worst <= 1.0 / 255.0, "{ext}: {worst}");
            }
        }
    }
}

#[test]
fn half_rounds_to_even_byte() {
    assert_eq!(quantize(0.5), 128);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("half.pgm");
    save_image(&ImageBuffer::new(1, 1, 1, vec![0.5]).unwrap(), &path).unwrap();
    let text = fs::read_to_string(&path).unwrap();
    assert_eq!(text.split_whitespace().last(), Some("128"));
}

#[test]
fn unwritable_destination_is_an_error() {
    let dir = tempfile::tempdir().unwrap();
    let img = ImageBuffer::zeros(2, 2, 1).unwrap();
    let missing_parent = dir.path().join("no/such/dir/out.png");
    assert!(matches!(
        save_image(&img, &missing_parent),
        Err(ImageError::Unwritable { .. })
    ));
}

#[test]
fn score_maps_need_one_channel() {
    assert!(ScoreMap::try_from(ImageBuffer::zeros(2, 2, 3).unwrap()).is_err());
    assert!(ScoreMap::try_from(ImageBuffer::zeros(2, 2, 1).unwrap()).is_ok());
}

#[test]
fn buffers_reject_bad_values() {
    assert!(ImageBuffer::new(2, 1, 1, vec![0.0, 1.5]).is_err());
    assert!(ImageBuffer::new(2, 1, 1, vec![0.0, f64::NAN]).is_err());
    assert!(ImageBuffer::new(2, 1, 2, vec![0.0; 4]).is_err());
    assert!(ImageBuffer::new(0, 1, 1, vec![]).is_err());
    assert!(ImageBuffer::new(2, 2, 1, vec![0.0; 3]).is_err());
}
