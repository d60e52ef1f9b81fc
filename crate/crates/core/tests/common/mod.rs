#![allow(dead_code)]

use diml_core::{FeatureMap, Gallery, GalleryItem};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Uniform draw on the simplex (normalized exponentials).
pub fn simplex(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    let v: Vec<f64> = (0..n).map(|_| -(1.0 - rng.random::<f64>()).ln()).collect();
    let s: f64 = v.iter().sum();
    v.into_iter().map(|x| x / s).collect()
}

pub fn cost_rows(rng: &mut ChaCha8Rng, m: usize, n: usize) -> Vec<Vec<f64>> {
    (0..m).map(|_| (0..n).map(|_| rng.random::<f64>()).collect()).collect()
}

/// Gaussian-ish map with entries in [-1, 1].
pub fn fmap(rng: &mut ChaCha8Rng, g: usize, dim: usize) -> FeatureMap {
    let data = (0..g * g * dim).map(|_| rng.random_range(-1.0..1.0)).collect();
    FeatureMap::new(g, g, dim, data).unwrap()
}

/// Nonnegative entries, like post-ReLU backbone activations.
pub fn relu_fmap(rng: &mut ChaCha8Rng, g: usize, dim: usize) -> FeatureMap {
    let data = (0..g * g * dim).map(|_| rng.random::<f64>()).collect();
    FeatureMap::new(g, g, dim, data).unwrap()
}

pub fn gallery(maps: Vec<(u32, FeatureMap)>) -> Gallery {
    Gallery::new(
        maps.into_iter()
            .enumerate()
            .map(|(k, (label, m))| GalleryItem::new(format!("item{k:04}"), label, m))
            .collect(),
    )
    .unwrap()
}

pub fn permute_cells(m: &FeatureMap, perm: &[usize]) -> FeatureMap {
    let cells: Vec<Vec<f64>> = perm.iter().map(|&k| m.cell(k).to_vec()).collect();
    FeatureMap::from_cells(m.grid_h(), m.grid_w(), &cells).unwrap()
}
