//! Binary feature maps over environment states.
//!
//! A [`BinaryFeatureVector`] stores only its active indices. State features
//! feed the visit-density; [`action_block`] lifts them to state-action
//! features for the linear Q-function by placing each action in its own block
//! of width `M`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A vector in `{0,1}^M`, stored as the sorted, duplicate-free set of indices
/// that are 1.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct BinaryFeatureVector {
    dimension: usize,
    active: Vec<usize>,
}

impl BinaryFeatureVector {
    /// Builds a vector from arbitrary active indices; they are sorted and
    /// deduplicated.
    pub fn new(dimension: usize, mut active: Vec<usize>) -> Result<Self> {
        if dimension == 0 {
            return Err(Error::InvalidInput("feature dimension must be positive".into()));
        }
        active.sort_unstable();
        active.dedup();
        if let Some(&last) = active.last() {
            if last >= dimension {
                return Err(Error::InvalidInput(format!("active index {last} out of range for dimension {dimension}")));
            }
        }
        Ok(Self { dimension, active })
    }

    pub fn from_dense(bits: &[u8]) -> Result<Self> {
        let mut active = Vec::new();
        for (i, &b) in bits.iter().enumerate() {
            match b {
                0 => {}
                1 => active.push(i),
                other => {
                    return Err(Error::InvalidInput(format!("dense feature value {other} at index {i} is not binary")))
                }
            }
        }
        Self::new(bits.len(), active)
    }

    pub fn zeros(dimension: usize) -> Result<Self> {
        Self::new(dimension, Vec::new())
    }

    pub fn dimension(&self) -> usize {
        self.dimension
    }

    pub fn active(&self) -> &[usize] {
        &self.active
    }

    pub fn num_active(&self) -> usize {
        self.active.len()
    }

    pub fn is_active(&self, index: usize) -> bool {
        self.active.binary_search(&index).is_ok()
    }

    pub fn to_dense(&self) -> Vec<u8> {
        let mut dense = vec![0u8; self.dimension];
        for &i in &self.active {
            dense[i] = 1;
        }
        dense
    }

    /// Flips every coordinate.
    pub fn complement(&self) -> Self {
        let active = (0..self.dimension).filter(|i| !self.is_active(*i)).collect();
        Self { dimension: self.dimension, active }
    }

    /// Number of coordinates where `self` and `other` differ (the l1 distance).
    pub fn hamming_distance(&self, other: &Self) -> Result<usize> {
        check_dimension(self.dimension, other.dimension)?;
        let (a, b) = (&self.active, &other.active);
        let (mut i, mut j, mut common) = (0, 0, 0);
        while i < a.len() && j < b.len() {
            match a[i].cmp(&b[j]) {
                std::cmp::Ordering::Less => i += 1,
                std::cmp::Ordering::Greater => j += 1,
                std::cmp::Ordering::Equal => {
                    common += 1;
                    i += 1;
                    j += 1;
                }
            }
        }
        Ok(a.len() + b.len() - 2 * common)
    }
}

pub(crate) fn check_dimension(expected: usize, actual: usize) -> Result<()> {
    if expected == actual {
        Ok(())
    } else {
        Err(Error::DimensionMismatch { expected, actual })
    }
}

/// Tabular feature map: a single active index.
pub fn one_hot(state_index: usize, num_states: usize) -> Result<BinaryFeatureVector> {
    if state_index >= num_states {
        return Err(Error::InvalidInput(format!("state index {state_index} out of range for {num_states} states")));
    }
    BinaryFeatureVector::new(num_states, vec![state_index])
}

/// Places `phi_s` in the block belonging to `action`, giving a vector of
/// dimension `M * num_actions`.
pub fn action_block(phi_s: &BinaryFeatureVector, action: usize, num_actions: usize) -> Result<BinaryFeatureVector> {
    if action >= num_actions {
        return Err(Error::InvalidInput(format!("action {action} out of range for {num_actions} actions")));
    }
    let m = phi_s.dimension;
    Ok(BinaryFeatureVector {
        dimension: m * num_actions,
        active: phi_s.active.iter().map(|i| i + action * m).collect(),
    })
}

/// Uniform grid tile coder with several offset tilings.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TileCodingConfig {
    bounds: Vec<(f64, f64)>,
    tiles_per_dim: usize,
    num_tilings: usize,
    /// One displacement per tiling and input dimension, as a fraction of the
    /// tile width.
    offsets: Vec<Vec<f64>>,
}

impl TileCodingConfig {
    pub fn new(
        bounds: Vec<(f64, f64)>,
        tiles_per_dim: usize,
        num_tilings: usize,
        offsets: Vec<Vec<f64>>,
    ) -> Result<Self> {
        if bounds.is_empty() {
            return Err(Error::InvalidInput("tile coder needs at least one input dimension".into()));
        }
        for (d, &(lo, hi)) in bounds.iter().enumerate() {
            if !(lo.is_finite() && hi.is_finite() && lo < hi) {
                return Err(Error::InvalidInput(format!(
                    "bounds for dimension {d} must satisfy low < high, got ({lo}, {hi})"
                )));
            }
        }
        if tiles_per_dim == 0 || num_tilings == 0 {
            return Err(Error::InvalidInput("tiles_per_dim and num_tilings must be positive".into()));
        }
        if offsets.len() != num_tilings || offsets.iter().any(|o| o.len() != bounds.len()) {
            return Err(Error::InvalidInput(format!(
                "expected {num_tilings} offset vectors of length {}",
                bounds.len()
            )));
        }
        if offsets.iter().flatten().any(|o| !o.is_finite()) {
            return Err(Error::InvalidInput("tiling offsets must be finite".into()));
        }
        Ok(Self { bounds, tiles_per_dim, num_tilings, offsets })
    }

    /// Tilings displaced by `k / num_tilings` of a tile width in every
    /// dimension, the usual evenly spaced layout.
    pub fn uniform(bounds: Vec<(f64, f64)>, tiles_per_dim: usize, num_tilings: usize) -> Result<Self> {
        let d = bounds.len();
        let offsets = (0..num_tilings).map(|k| vec![k as f64 / num_tilings.max(1) as f64; d]).collect();
        Self::new(bounds, tiles_per_dim, num_tilings, offsets)
    }

    pub fn input_dims(&self) -> usize {
        self.bounds.len()
    }

    pub fn tiles_per_tiling(&self) -> usize {
        self.tiles_per_dim.pow(self.bounds.len() as u32)
    }

    /// `num_tilings * tiles_per_dim^d`.
    pub fn output_dimension(&self) -> usize {
        self.num_tilings * self.tiles_per_tiling()
    }
}

/// Maps a real vector to one active tile per tiling. Inputs outside the
/// configured bounds are clipped to the boundary cell.
pub fn tile_code(x: &[f64], cfg: &TileCodingConfig) -> Result<BinaryFeatureVector> {
    check_dimension(cfg.input_dims(), x.len())?;
    if x.iter().any(|v| v.is_nan()) {
        return Err(Error::InvalidInput("tile coder input contains NaN".into()));
    }
    let n = cfg.tiles_per_dim;
    let per_tiling = cfg.tiles_per_tiling();
    let mut active = Vec::with_capacity(cfg.num_tilings);
    for (k, offset) in cfg.offsets.iter().enumerate() {
        let mut flat = 0usize;
        for (d, &(lo, hi)) in cfg.bounds.iter().enumerate() {
            let width = (hi - lo) / n as f64;
            let pos = (x[d] - lo) / width - offset[d];
            let cell = if pos <= 0.0 { 0 } else { (pos.floor() as usize).min(n - 1) };
            flat = flat * n + cell;
        }
        active.push(k * per_tiling + flat);
    }
    // Tilings occupy disjoint index ranges, so indices are already sorted.
    Ok(BinaryFeatureVector { dimension: cfg.output_dimension(), active })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn one_hot_examples() {
        let v = one_hot(2, 4).unwrap();
        assert_eq!(v.active(), &[2]);
        assert_eq!(v.dimension(), 4);
        let v = one_hot(0, 1).unwrap();
        assert_eq!(v.active(), &[0]);
        assert!(one_hot(5, 5).is_err());
    }

    #[test]
    fn new_sorts_and_dedups() {
        let v = BinaryFeatureVector::new(5, vec![3, 1, 3]).unwrap();
        assert_eq!(v.active(), &[1, 3]);
        assert_eq!(v.to_dense(), vec![0, 1, 0, 1, 0]);
        assert!(BinaryFeatureVector::new(3, vec![3]).is_err());
        assert!(BinaryFeatureVector::new(0, vec![]).is_err());
        assert!(BinaryFeatureVector::from_dense(&[0, 2]).is_err());
    }

    #[test]
    fn action_block_examples() {
        let phi = BinaryFeatureVector::new(4, vec![1]).unwrap();
        let b = action_block(&phi, 0, 3).unwrap();
        assert_eq!((b.active(), b.dimension()), (&[1usize][..], 12));

        let phi = BinaryFeatureVector::new(4, vec![1, 3]).unwrap();
        let b = action_block(&phi, 2, 3).unwrap();
        assert_eq!((b.active(), b.dimension()), (&[9usize, 11][..], 12));

        assert!(action_block(&phi, 3, 3).is_err());
    }

    #[test]
    fn action_blocks_are_disjoint() {
        let phi = BinaryFeatureVector::new(4, vec![0, 2, 3]).unwrap();
        let blocks: Vec<_> = (0..3).map(|a| action_block(&phi, a, 3).unwrap()).collect();
        for a in 0..3 {
            for b in (a + 1)..3 {
                assert!(blocks[a].active().iter().all(|i| !blocks[b].is_active(*i)));
            }
        }
    }

    #[test]
    fn tile_code_midpoint() {
        let cfg = TileCodingConfig::uniform(vec![(0.0, 1.0)], 4, 1).unwrap();
        let v = tile_code(&[0.5], &cfg).unwrap();
        assert_eq!(v.active(), &[2]);
        assert_eq!(v.dimension(), 4);
    }

    #[test]
    fn tile_code_clips_and_rejects_mismatch() {
        let cfg = TileCodingConfig::uniform(vec![(0.0, 1.0)], 4, 1).unwrap();
        assert_eq!(tile_code(&[-3.0], &cfg).unwrap().active(), &[0]);
        assert_eq!(tile_code(&[7.0], &cfg).unwrap().active(), &[3]);
        assert_eq!(tile_code(&[1.0], &cfg).unwrap().active(), &[3]);
        assert!(tile_code(&[0.1, 0.2], &cfg).is_err());
        assert!(TileCodingConfig::uniform(vec![(1.0, 1.0)], 4, 1).is_err());
    }

    #[test]
    fn tile_code_equality_classes_match_cell_enumeration() {
        // Oracle: with one tiling and no offset, the cell of x in [0,1) is
        // floor(4x). Enumerate a fine grid, group by that cell, and check the
        // coder maps each group to one vector and distinct groups apart.
        let cfg = TileCodingConfig::uniform(vec![(0.0, 1.0)], 4, 1).unwrap();
        let xs: Vec<f64> = (0..400).map(|k| k as f64 / 400.0).collect();
        for &a in &xs {
            for &b in &xs {
                let same_cell = (a * 4.0).floor() == (b * 4.0).floor();
                let same_code = tile_code(&[a], &cfg).unwrap() == tile_code(&[b], &cfg).unwrap();
                assert_eq!(same_cell, same_code, "a={a} b={b}");
            }
        }
    }

    #[test]
    fn tile_code_dimension_formula() {
        let cfg = TileCodingConfig::uniform(vec![(0.0, 1.0), (-1.0, 1.0)], 5, 3).unwrap();
        assert_eq!(cfg.output_dimension(), 3 * 25);
    }

    proptest! {
        #[test]
        fn tile_code_one_active_per_tiling(
            x in prop::collection::vec(-2.0f64..3.0, 2),
            tilings in 1usize..6,
            tiles in 1usize..8,
        ) {
            let cfg = TileCodingConfig::uniform(vec![(0.0, 1.0), (0.0, 2.0)], tiles, tilings).unwrap();
            let v = tile_code(&x, &cfg).unwrap();
            prop_assert_eq!(v.num_active(), tilings);
            prop_assert!(v.active().iter().all(|&i| i < cfg.output_dimension()));
            prop_assert_eq!(v, tile_code(&x, &cfg).unwrap());
        }

        #[test]
        fn action_block_preserves_active_count(
            idx in prop::collection::vec(0usize..20, 0..10),
            a in 0usize..4,
        ) {
            let phi = BinaryFeatureVector::new(20, idx).unwrap();
            let b = action_block(&phi, a, 4).unwrap();
            prop_assert_eq!(b.num_active(), phi.num_active());
        }
    }
}
