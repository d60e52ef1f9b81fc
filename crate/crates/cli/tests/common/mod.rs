#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use diml_core::{write_feature_bank, FeatureMap, Gallery, GalleryItem};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// f32-exact nonnegative map, like exported post-ReLU activations.
pub fn relu_map(r: &mut ChaCha8Rng, g: usize, d: usize) -> FeatureMap {
    FeatureMap::new(g, g, d, (0..g * g * d).map(|_| r.random::<f32>() as f64).collect()).unwrap()
}

/// Items of a class share a prototype; each item adds its own noise.
pub fn clustered_bank(seed: u64, n: usize, classes: u32, g: usize, d: usize) -> Gallery {
    let mut r = rng(seed);
    let protos: Vec<FeatureMap> = (0..classes).map(|_| relu_map(&mut r, g, d)).collect();
    let items = (0..n)
        .map(|k| {
            let label = k as u32 % classes;
            let data = protos[label as usize]
                .data()
                .iter()
                .map(|v| (v + 0.8 * r.random::<f64>()) as f32 as f64)
                .collect();
            GalleryItem::new(format!("img{k:05}"), label, FeatureMap::new(g, g, d, data).unwrap())
        })
        .collect();
    Gallery::new(items).unwrap()
}

pub fn save(dir: &Path, name: &str, g: &Gallery) -> PathBuf {
    let p = dir.join(name);
    write_feature_bank(g, &p).unwrap();
    p
}

pub fn diml(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_diml"))
        .args(args)
        .env_remove("DIML_THREADS")
        .output()
        .expect("spawn diml")
}

pub fn ok(args: &[&str]) -> Output {
    let out = diml(args);
    assert!(
        out.status.success(),
        "diml {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

pub fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}
