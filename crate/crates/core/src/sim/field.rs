use serde::{Deserialize, Serialize};

use super::SimConfig;
use crate::error::{Error, Result};
use crate::Vec2;

/// An `n x n` grid of force vectors covering the arena.
///
/// Node `(col, row)` sits at the cell center
/// `((col + 0.5) * width / n, (row + 0.5) * height / n)`; `vectors` is stored
/// row-major, so node `(col, row)` lives at index `row * n + col`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VectorField {
    n: usize,
    vectors: Vec<Vec2>,
}

impl VectorField {
    pub fn new(n: usize, vectors: Vec<Vec2>) -> Result<Self> {
        if n < 2 {
            return Err(Error::Input(format!("field resolution must be >= 2, got {n}")));
        }
        if vectors.len() != n * n {
            return Err(Error::Input(format!(
                "field of resolution {n} needs {} vectors, got {}",
                n * n,
                vectors.len()
            )));
        }
        if let Some(k) = vectors.iter().position(|v| !v.is_finite()) {
            return Err(Error::Input(format!("field vector {k} is not finite")));
        }
        Ok(VectorField { n, vectors })
    }

    pub fn constant(n: usize, v: Vec2) -> Result<Self> {
        Self::new(n, vec![v; n * n])
    }

    pub fn zeros(n: usize) -> Result<Self> {
        Self::constant(n, Vec2::ZERO)
    }

    /// Build a field by evaluating `f` at every node center.
    pub fn from_fn(n: usize, config: &SimConfig, mut f: impl FnMut(Vec2) -> Vec2) -> Result<Self> {
        let mut vectors = Vec::with_capacity(n * n);
        for row in 0..n {
            for col in 0..n {
                vectors.push(f(node_center(n, col, row, config)));
            }
        }
        Self::new(n, vectors)
    }

    /// Interpret a flat `2 n^2` buffer as row-major node pairs, x first.
    pub fn from_flat(n: usize, flat: &[f64]) -> Result<Self> {
        if flat.len() != 2 * n * n {
            return Err(Error::Input(format!(
                "flat field of resolution {n} needs {} values, got {}",
                2 * n * n,
                flat.len()
            )));
        }
        let vectors = flat.chunks_exact(2).map(|c| Vec2::new(c[0], c[1])).collect();
        Self::new(n, vectors)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn vectors(&self) -> &[Vec2] {
        &self.vectors
    }

    pub fn get(&self, col: usize, row: usize) -> Vec2 {
        self.vectors[row * self.n + col]
    }
}

pub fn node_center(n: usize, col: usize, row: usize, config: &SimConfig) -> Vec2 {
    Vec2::new(
        (col as f64 + 0.5) * config.width / n as f64,
        (row as f64 + 0.5) * config.height / n as f64,
    )
}

/// Continuous grid coordinate along one axis, clamped to the node hull,
/// split into the lower node index and the interpolation weight.
fn axis_coordinate(p: f64, extent: f64, n: usize) -> (usize, f64) {
    let g = (p * n as f64 / extent - 0.5).clamp(0.0, (n - 1) as f64);
    let lo = (g.floor() as usize).min(n - 2);
    (lo, g - lo as f64)
}

/// Bilinear interpolation of `field` at `pos`.
pub fn sample_field(field: &VectorField, pos: Vec2, config: &SimConfig) -> Result<Vec2> {
    let inside = (0.0..=config.width).contains(&pos.x) && (0.0..=config.height).contains(&pos.y);
    if !inside {
        return Err(Error::Domain(format!(
            "position ({}, {}) lies outside the {}x{} arena",
            pos.x, pos.y, config.width, config.height
        )));
    }
    let n = field.n;
    let (c0, tx) = axis_coordinate(pos.x, config.width, n);
    let (r0, ty) = axis_coordinate(pos.y, config.height, n);
    let lerp = |a: Vec2, b: Vec2, t: f64| a * (1.0 - t) + b * t;
    let bottom = lerp(field.get(c0, r0), field.get(c0 + 1, r0), tx);
    let top = lerp(field.get(c0, r0 + 1), field.get(c0 + 1, r0 + 1), tx);
    Ok(lerp(bottom, top, ty))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn cfg() -> SimConfig {
        SimConfig::default()
    }

    #[test]
    fn constant_field_is_constant() {
        let f = VectorField::constant(3, Vec2::new(1.0, 0.0)).unwrap();
        for pos in [Vec2::new(0.0, 0.0), Vec2::new(250.0, 17.3), Vec2::new(500.0, 500.0)] {
            assert_eq!(sample_field(&f, pos, &cfg()).unwrap(), Vec2::new(1.0, 0.0));
        }
    }

    #[test]
    fn center_of_two_by_two_is_mean_of_nodes() {
        let vs = vec![
            Vec2::new(1.0, 2.0),
            Vec2::new(-3.0, 0.5),
            Vec2::new(4.0, -1.0),
            Vec2::new(0.0, 6.5),
        ];
        let f = VectorField::new(2, vs.clone()).unwrap();
        let got = sample_field(&f, Vec2::new(250.0, 250.0), &cfg()).unwrap();
        // (1 - 3 + 4 + 0) / 4, (2 + 0.5 - 1 + 6.5) / 4
        assert!((got.x - 0.5).abs() < 1e-15);
        assert!((got.y - 2.0).abs() < 1e-15);
    }

    #[test]
    fn node_centers_are_exact() {
        let c = cfg();
        for n in [2, 3, 5, 10] {
            let f = VectorField::from_fn(n, &c, |p| Vec2::new(p.x.sin() * 3.0, p.y * 0.01 - 1.0)).unwrap();
            for row in 0..n {
                for col in 0..n {
                    let want = f.get(col, row);
                    let got = sample_field(&f, node_center(n, col, row, &c), &c).unwrap();
                    assert!((got.x - want.x).abs() <= 1e-12 * want.x.abs().max(1e-300));
                    assert!((got.y - want.y).abs() <= 1e-12 * want.y.abs().max(1e-300));
                }
            }
        }
    }

    #[test]
    fn outside_hull_clamps_to_edge() {
        let c = cfg();
        let f = VectorField::new(
            2,
            vec![
                Vec2::new(1.0, 0.0),
                Vec2::new(2.0, 0.0),
                Vec2::new(3.0, 0.0),
                Vec2::new(4.0, 0.0),
            ],
        )
        .unwrap();
        assert_eq!(sample_field(&f, Vec2::new(0.0, 0.0), &c).unwrap(), Vec2::new(1.0, 0.0));
        assert_eq!(
            sample_field(&f, Vec2::new(500.0, 500.0), &c).unwrap(),
            Vec2::new(4.0, 0.0)
        );
        assert_eq!(
            sample_field(&f, Vec2::new(10.0, 125.0), &c).unwrap(),
            Vec2::new(1.0, 0.0)
        );
    }

    #[test]
    fn outside_arena_is_domain_error() {
        let f = VectorField::zeros(2).unwrap();
        let err = sample_field(&f, Vec2::new(-0.1, 3.0), &cfg()).unwrap_err();
        assert!(matches!(err, Error::Domain(_)));
        assert!(sample_field(&f, Vec2::new(3.0, 500.5), &cfg()).is_err());
    }

    #[test]
    fn rejects_bad_shapes() {
        assert!(VectorField::new(2, vec![Vec2::ZERO; 3]).is_err());
        assert!(VectorField::new(1, vec![Vec2::ZERO]).is_err());
        assert!(VectorField::new(2, vec![Vec2::new(f64::NAN, 0.0); 4]).is_err());
        assert!(VectorField::from_flat(2, &[0.0; 7]).is_err());
    }

    proptest! {
        #[test]
        fn interpolation_stays_in_node_hull(
            n in 2usize..7,
            seed_vals in proptest::collection::vec(-10.0f64..10.0, 98),
            x in 0.0f64..=500.0,
            y in 0.0f64..=500.0,
        ) {
            let c = cfg();
            let f = VectorField::from_flat(n, &seed_vals[..2 * n * n]).unwrap();
            let got = sample_field(&f, Vec2::new(x, y), &c).unwrap();
            let (c0, _) = axis_coordinate(x, c.width, n);
            let (r0, _) = axis_coordinate(y, c.height, n);
            let corners = [f.get(c0, r0), f.get(c0 + 1, r0), f.get(c0, r0 + 1), f.get(c0 + 1, r0 + 1)];
            let (lo_x, hi_x) = corners.iter().fold((f64::MAX, f64::MIN), |(l, h), v| (l.min(v.x), h.max(v.x)));
            let (lo_y, hi_y) = corners.iter().fold((f64::MAX, f64::MIN), |(l, h), v| (l.min(v.y), h.max(v.y)));
            prop_assert!(got.x >= lo_x - 1e-12 && got.x <= hi_x + 1e-12);
            prop_assert!(got.y >= lo_y - 1e-12 && got.y <= hi_y + 1e-12);
        }
    }
}
