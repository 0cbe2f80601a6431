//! Rectangular tensor grids.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    pub lower: Vec<f64>,
    pub spacing: Vec<f64>,
    pub nodes: Vec<usize>,
}

impl Grid {
    /// Symmetric box `[-w_k, w_k]` with spacing close to `h`; an odd number
    /// of nodes per axis puts the origin on the grid.
    pub fn centered(half_width: &[f64], h: f64) -> Self {
        let mut lower = Vec::new();
        let mut spacing = Vec::new();
        let mut nodes = Vec::new();
        for &w in half_width {
            let cells = (w / h).round().max(1.0) as usize;
            lower.push(-(cells as f64) * h);
            spacing.push(h);
            nodes.push(2 * cells + 1);
        }
        Grid { lower, spacing, nodes }
    }

    pub fn dim(&self) -> usize {
        self.nodes.len()
    }

    pub fn len(&self) -> usize {
        self.nodes.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Linear stride of each axis; axis 0 varies fastest.
    pub fn strides(&self) -> Vec<usize> {
        let mut s = Vec::with_capacity(self.dim());
        let mut acc = 1;
        for &n in &self.nodes {
            s.push(acc);
            acc *= n;
        }
        s
    }

    pub fn multi_index(&self, mut idx: usize) -> Vec<usize> {
        self.nodes
            .iter()
            .map(|&n| {
                let k = idx % n;
                idx /= n;
                k
            })
            .collect()
    }

    pub fn linear_index(&self, multi: &[usize]) -> usize {
        multi.iter().zip(self.strides()).map(|(k, s)| k * s).sum()
    }

    pub fn coord(&self, axis: usize, k: usize) -> f64 {
        self.lower[axis] + k as f64 * self.spacing[axis]
    }

    pub fn point(&self, idx: usize) -> Vec<f64> {
        self.multi_index(idx).iter().enumerate().map(|(a, &k)| self.coord(a, k)).collect()
    }

    pub fn upper(&self, axis: usize) -> f64 {
        self.coord(axis, self.nodes[axis] - 1)
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        x.iter().enumerate().all(|(a, &v)| v >= self.lower[a] && v <= self.upper(a))
    }

    /// Nearest node, clamped to the box.
    pub fn nearest(&self, x: &[f64]) -> usize {
        let mut idx = 0;
        let mut stride = 1;
        for a in 0..self.dim() {
            let k = ((x[a] - self.lower[a]) / self.spacing[a]).round();
            let k = k.clamp(0.0, (self.nodes[a] - 1) as f64) as usize;
            idx += k * stride;
            stride *= self.nodes[a];
        }
        idx
    }

    /// Multilinear interpolation, clamped to the box.
    pub fn interpolate(&self, values: &[f64], x: &[f64]) -> f64 {
        let d = self.dim();
        let strides = self.strides();
        let mut base = 0;
        let mut frac = vec![0.0; d];
        for a in 0..d {
            let t = ((x[a] - self.lower[a]) / self.spacing[a]).clamp(0.0, (self.nodes[a] - 1) as f64);
            let k = (t.floor() as usize).min(self.nodes[a].saturating_sub(2));
            frac[a] = t - k as f64;
            base += k * strides[a];
        }
        let mut acc = 0.0;
        for corner in 0..(1usize << d) {
            let mut w = 1.0;
            let mut idx = base;
            for a in 0..d {
                if corner >> a & 1 == 1 {
                    if self.nodes[a] == 1 {
                        w = 0.0;
                        break;
                    }
                    w *= frac[a];
                    idx += strides[a];
                } else {
                    w *= 1.0 - frac[a];
                }
            }
            if w != 0.0 {
                acc += w * values[idx];
            }
        }
        acc
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn centered_grid_contains_origin() {
        let g = Grid::centered(&[1.0, 2.0], 0.25);
        assert_eq!(g.nodes, vec![9, 17]);
        let o = g.nearest(&[0.0, 0.0]);
        assert_eq!(g.point(o), vec![0.0, 0.0]);
    }

    #[test]
    fn index_roundtrip() {
        let g = Grid::centered(&[1.0, 1.0, 0.5], 0.5);
        for idx in 0..g.len() {
            assert_eq!(g.linear_index(&g.multi_index(idx)), idx);
        }
    }

    #[test]
    fn interpolation_exact_on_multilinear() {
        let g = Grid::centered(&[2.0, 2.0], 0.5);
        let f = |x: &[f64]| 1.0 + 2.0 * x[0] - x[1] + 0.5 * x[0] * x[1];
        let vals: Vec<f64> = (0..g.len()).map(|i| f(&g.point(i))).collect();
        for x in [[0.1, -0.3], [1.9, 1.2], [-2.0, 2.0]] {
            assert!((g.interpolate(&vals, &x) - f(&x)).abs() < 1e-12);
        }
    }
}
