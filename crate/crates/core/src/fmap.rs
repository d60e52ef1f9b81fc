//! Feature maps and the two pooling operators the pipeline needs.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

/// A `grid_h x grid_w` grid of `dim`-dimensional part embeddings.
///
/// Storage is row-major and cell-major: cell `(r, c)` occupies
/// `data[(r * grid_w + c) * dim..][..dim]`. Cells are also addressed by a
/// single flat index `r * grid_w + c`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureMap {
    grid_h: usize,
    grid_w: usize,
    dim: usize,
    data: Vec<f64>,
}

impl FeatureMap {
    pub fn new(grid_h: usize, grid_w: usize, dim: usize, data: Vec<f64>) -> Result<Self> {
        if grid_h == 0 || grid_w == 0 || dim == 0 {
            return Err(invalid(format!(
                "feature map extents must be positive, got {grid_h}x{grid_w}x{dim}"
            )));
        }
        let expected = grid_h * grid_w * dim;
        if data.len() != expected {
            return Err(Error::ShapeMismatch(format!(
                "feature map {grid_h}x{grid_w}x{dim} needs {expected} values, got {}",
                data.len()
            )));
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(invalid(format!("non-finite value at offset {pos}")));
        }
        Ok(Self {
            grid_h,
            grid_w,
            dim,
            data,
        })
    }

    /// Builds a map from one vector per cell, in flat cell order.
    pub fn from_cells(grid_h: usize, grid_w: usize, cells: &[Vec<f64>]) -> Result<Self> {
        let dim = cells.first().map_or(0, Vec::len);
        if cells.iter().any(|c| c.len() != dim) {
            return Err(Error::ShapeMismatch("cells have differing widths".into()));
        }
        Self::new(grid_h, grid_w, dim, cells.concat())
    }

    pub fn grid_h(&self) -> usize {
        self.grid_h
    }

    pub fn grid_w(&self) -> usize {
        self.grid_w
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn n_cells(&self) -> usize {
        self.grid_h * self.grid_w
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        (self.grid_h, self.grid_w, self.dim)
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn cell(&self, index: usize) -> &[f64] {
        &self.data[index * self.dim..(index + 1) * self.dim]
    }

    pub fn cells(&self) -> impl ExactSizeIterator<Item = &[f64]> + '_ {
        self.data.chunks_exact(self.dim)
    }

    pub fn is_square(&self) -> bool {
        self.grid_h == self.grid_w
    }

    /// Returns a copy with every value multiplied by `factor`.
    pub fn scaled(&self, factor: f64) -> Result<Self> {
        Self::new(
            self.grid_h,
            self.grid_w,
            self.dim,
            self.data.iter().map(|v| v * factor).collect(),
        )
    }
}

/// Mean of a feature map over its cells.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GlobalEmbedding {
    data: Vec<f64>,
}

impl GlobalEmbedding {
    pub fn dim(&self) -> usize {
        self.data.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }
}

/// Global average pooling.
pub fn gap(fmap: &FeatureMap) -> GlobalEmbedding {
    let mut acc = vec![0.0; fmap.dim];
    for cell in fmap.cells() {
        for (a, v) in acc.iter_mut().zip(cell) {
            *a += v;
        }
    }
    let n = fmap.n_cells() as f64;
    acc.iter_mut().for_each(|a| *a /= n);
    GlobalEmbedding { data: acc }
}

/// How [`pool_grid_with`] distributes input cells over output bins.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PoolMethod {
    /// Full-extent ROI Align: bilinear samples on a regular sub-grid of each
    /// bin, `ceil(bin size)` samples per axis, averaged.
    #[default]
    RoiAlign,
    /// Exact area-weighted box averaging. Preserves the global mean for any
    /// target size.
    Area,
}

/// Pools a feature map to `target_g x target_g` with full-extent ROI Align.
pub fn pool_grid(raw: &FeatureMap, target_g: usize) -> Result<FeatureMap> {
    pool_grid_with(raw, target_g, PoolMethod::RoiAlign)
}

pub fn pool_grid_with(raw: &FeatureMap, target_g: usize, method: PoolMethod) -> Result<FeatureMap> {
    if target_g == 0 {
        return Err(invalid("target grid must be at least 1"));
    }
    if target_g > raw.grid_h.min(raw.grid_w) {
        return Err(invalid(format!(
            "target grid {target_g} exceeds input grid {}x{}",
            raw.grid_h, raw.grid_w
        )));
    }
    let rows = axis_weights(raw.grid_h, target_g, method);
    let cols = axis_weights(raw.grid_w, target_g, method);
    let dim = raw.dim;

    let mut out = vec![0.0; target_g * target_g * dim];
    for (by, row_w) in rows.iter().enumerate() {
        for (bx, col_w) in cols.iter().enumerate() {
            let dst = &mut out[(by * target_g + bx) * dim..][..dim];
            for &(y, wy) in row_w {
                for &(x, wx) in col_w {
                    let w = wy * wx;
                    let src = raw.cell(y * raw.grid_w + x);
                    for (d, s) in dst.iter_mut().zip(src) {
                        *d += w * s;
                    }
                }
            }
        }
    }
    FeatureMap::new(target_g, target_g, dim, out)
}

/// Sparse per-bin weights along one axis; each bin's weights sum to 1.
fn axis_weights(len: usize, bins: usize, method: PoolMethod) -> Vec<Vec<(usize, f64)>> {
    let bin = len as f64 / bins as f64;
    (0..bins)
        .map(|b| {
            let start = b as f64 * bin;
            let mut weights: Vec<(usize, f64)> = Vec::new();
            let mut add = |idx: usize, w: f64| {
                if w == 0.0 {
                    return;
                }
                match weights.iter_mut().find(|(i, _)| *i == idx) {
                    Some((_, acc)) => *acc += w,
                    None => weights.push((idx, w)),
                }
            };
            match method {
                PoolMethod::RoiAlign => {
                    let samples = bin.ceil() as usize;
                    let step = bin / samples as f64;
                    let share = 1.0 / samples as f64;
                    for k in 0..samples {
                        // Cell centres sit at integer + 0.5.
                        let p = (start + (k as f64 + 0.5) * step - 0.5).clamp(0.0, (len - 1) as f64);
                        let lo = p.floor() as usize;
                        let hi = (lo + 1).min(len - 1);
                        let frac = p - lo as f64;
                        add(lo, share * (1.0 - frac));
                        add(hi, share * frac);
                    }
                }
                PoolMethod::Area => {
                    let end = start + bin;
                    let first = start.floor() as usize;
                    let last = (end.ceil() as usize).min(len);
                    for c in first..last {
                        let overlap = (end.min((c + 1) as f64) - start.max(c as f64)).max(0.0);
                        add(c, overlap / bin);
                    }
                }
            }
            weights
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ramp(h: usize, w: usize, dim: usize) -> FeatureMap {
        let data = (1..=h * w * dim).map(|v| v as f64).collect();
        FeatureMap::new(h, w, dim, data).unwrap()
    }

    fn mean(m: &FeatureMap) -> Vec<f64> {
        gap(m).into_vec()
    }

    #[test]
    fn rejects_bad_shapes_and_values() {
        assert!(FeatureMap::new(0, 1, 1, vec![]).is_err());
        assert!(FeatureMap::new(2, 2, 1, vec![1.0; 3]).is_err());
        assert!(FeatureMap::new(1, 1, 2, vec![1.0, f64::NAN]).is_err());
        assert!(FeatureMap::new(1, 1, 1, vec![f64::INFINITY]).is_err());
    }

    #[test]
    fn pool_to_same_grid_is_identity() {
        let m = ramp(7, 7, 3);
        for method in [PoolMethod::RoiAlign, PoolMethod::Area] {
            assert_eq!(pool_grid_with(&m, 7, method).unwrap(), m);
        }
    }

    #[test]
    fn pool_constant_field() {
        let m = FeatureMap::new(4, 4, 1, vec![2.5; 16]).unwrap();
        let p = pool_grid(&m, 2).unwrap();
        assert_eq!(p.data(), &[2.5; 4]);
    }

    #[test]
    fn pool_block_average() {
        // Oracle: plain average of each 2x2 block of 1..16.
        let m = ramp(4, 4, 1);
        let mut expected = vec![];
        for by in 0..2 {
            for bx in 0..2 {
                let mut s = 0.0;
                for y in 0..2 {
                    for x in 0..2 {
                        s += m.data()[(by * 2 + y) * 4 + bx * 2 + x];
                    }
                }
                expected.push(s / 4.0);
            }
        }
        assert_eq!(expected, vec![3.5, 5.5, 11.5, 13.5]);
        assert_eq!(pool_grid(&m, 2).unwrap().data(), expected.as_slice());
        assert_eq!(
            pool_grid_with(&m, 2, PoolMethod::Area).unwrap().data(),
            expected.as_slice()
        );
    }

    #[test]
    fn pool_odd_divisor_is_block_average() {
        let m = ramp(6, 6, 2);
        let p = pool_grid(&m, 2).unwrap();
        let a = pool_grid_with(&m, 2, PoolMethod::Area).unwrap();
        for (x, y) in p.data().iter().zip(a.data()) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn pool_rejects_bad_target() {
        let m = ramp(4, 5, 1);
        assert!(matches!(pool_grid(&m, 0), Err(Error::InvalidArgument(_))));
        assert!(matches!(pool_grid(&m, 5), Err(Error::InvalidArgument(_))));
        assert_eq!(pool_grid(&m, 4).unwrap().shape(), (4, 4, 1));
    }

    #[test]
    fn seven_to_four_weights_are_normalized() {
        for method in [PoolMethod::RoiAlign, PoolMethod::Area] {
            for bin in axis_weights(7, 4, method) {
                let s: f64 = bin.iter().map(|(_, w)| w).sum();
                assert!((s - 1.0).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn area_pool_preserves_mean_when_not_divisible() {
        let m = ramp(7, 7, 2);
        let p = pool_grid_with(&m, 4, PoolMethod::Area).unwrap();
        for (x, y) in mean(&m).iter().zip(mean(&p)) {
            assert!(((x - y) / x).abs() < 1e-12);
        }
    }

    #[test]
    fn gap_examples() {
        let single = FeatureMap::new(1, 1, 3, vec![1.0, -2.0, 0.5]).unwrap();
        assert_eq!(gap(&single).as_slice(), &[1.0, -2.0, 0.5]);
        let m = FeatureMap::new(2, 2, 1, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(gap(&m).as_slice(), &[2.5]);
    }
}
