#![allow(dead_code)]

pub mod oracle;

use std::path::PathBuf;

use pulsemag::frame_io::{Frame, Plane};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const NATURAL: [&str; 5] = ["camera", "astronaut", "coins", "moon", "brick"];

pub fn data_path(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/data").join(name)
}

/// 180×180 grayscale test image scaled to [0, 1].
pub fn natural(name: &str) -> Plane {
    let img = image::open(data_path(&format!("{name}.png"))).expect("test image").to_luma8();
    let (w, h) = img.dimensions();
    let data = img.into_raw().into_iter().map(|v| v as f32 / 255.0).collect();
    Plane::from_vec(w as usize, h as usize, data).unwrap()
}

pub fn uniform_noise(width: usize, height: usize, seed: u64) -> Plane {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Plane::from_fn(width, height, |_, _| rng.random::<f32>())
}

pub fn psnr(a: &Plane, b: &Plane) -> f64 {
    assert!(a.same_shape(b));
    let mse = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(x, y)| (*x as f64 - *y as f64).powi(2))
        .sum::<f64>()
        / a.data().len() as f64;
    if mse == 0.0 {
        f64::INFINITY
    } else {
        10.0 * (1.0 / mse).log10()
    }
}

pub fn frame(plane: Plane, index: usize) -> Frame {
    Frame::new(plane, index)
}
