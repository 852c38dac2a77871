//! Deterministic simulation of a 2D cell collective steered by a vector field.
//!
//! Each step applies, per cell: field force, pairwise soft repulsion, a speed
//! cap, an Euler position update and reflection at the walls. Walls sit at
//! an offset of one cell radius so cell discs never leave the arena.

mod field;
mod trajectory;

use std::f64::consts::TAU;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::Vec2;

pub use field::{node_center, sample_field, VectorField};
pub use trajectory::Trajectory;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimConfig {
    pub width: f64,
    pub height: f64,
    pub n_cells: usize,
    pub radius: f64,
    pub steps: usize,
    pub dt: f64,
    pub max_speed: f64,
    pub field_gain: f64,
    pub repulsion_strength: f64,
    /// Replace the velocity by the field vector instead of accelerating it.
    pub velocity_override: bool,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            width: 500.0,
            height: 500.0,
            n_cells: 100,
            radius: 5.0,
            steps: 500,
            dt: 1.0,
            max_speed: 5.0,
            field_gain: 1.0,
            repulsion_strength: 1.0,
            velocity_override: false,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        let finite = [
            self.width,
            self.height,
            self.radius,
            self.dt,
            self.max_speed,
            self.field_gain,
            self.repulsion_strength,
        ]
        .iter()
        .all(|v| v.is_finite());
        let fail = |msg: String| Err(Error::Config(msg));
        if !finite {
            return fail("simulation parameters must be finite".into());
        }
        if self.width <= 0.0 || self.height <= 0.0 {
            return fail(format!(
                "arena must have positive size, got {}x{}",
                self.width, self.height
            ));
        }
        if self.radius <= 0.0 || 2.0 * self.radius >= self.width.min(self.height) {
            return fail(format!("radius {} does not fit the arena", self.radius));
        }
        if self.n_cells < 2 {
            return fail(format!("need at least 2 cells, got {}", self.n_cells));
        }
        if self.dt <= 0.0 {
            return fail(format!("dt must be positive, got {}", self.dt));
        }
        if self.max_speed <= 0.0 {
            return fail(format!("max_speed must be positive, got {}", self.max_speed));
        }
        Ok(())
    }

    pub fn x_bounds(&self) -> (f64, f64) {
        (self.radius, self.width - self.radius)
    }

    pub fn y_bounds(&self) -> (f64, f64) {
        (self.radius, self.height - self.radius)
    }

    pub fn contains(&self, p: Vec2) -> bool {
        let (x0, x1) = self.x_bounds();
        let (y0, y1) = self.y_bounds();
        (x0..=x1).contains(&p.x) && (y0..=y1).contains(&p.y)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorldState {
    pub positions: Vec<Vec2>,
    pub velocities: Vec<Vec2>,
    pub time_step: usize,
}

impl WorldState {
    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }
}

/// Random initial world: positions uniform in the interior margin, velocity
/// directions uniform, speeds uniform in `[0, max_speed]`.
pub fn init_world(seed: u64, config: &SimConfig) -> Result<WorldState> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (x0, x1) = config.x_bounds();
    let (y0, y1) = config.y_bounds();
    let mut positions = Vec::with_capacity(config.n_cells);
    let mut velocities = Vec::with_capacity(config.n_cells);
    for _ in 0..config.n_cells {
        positions.push(Vec2::new(rng.random_range(x0..=x1), rng.random_range(y0..=y1)));
        let theta = rng.random_range(0.0..TAU);
        let speed = rng.random_range(0.0..=config.max_speed);
        velocities.push(Vec2::from_angle(theta) * speed);
    }
    Ok(WorldState {
        positions,
        velocities,
        time_step: 0,
    })
}

fn reflect_axis(p: f64, v: f64, lo: f64, hi: f64) -> (f64, f64) {
    if p > hi {
        ((2.0 * hi - p).max(lo), -v)
    } else if p < lo {
        ((2.0 * lo - p).min(hi), -v)
    } else {
        (p, v)
    }
}

/// Mirror a position that crossed a wall back inside and flip the velocity
/// component normal to that wall. Positions already inside are unchanged.
/// Overshoots larger than the free interval are clamped to the far wall.
pub fn apply_reflective_boundary(pos: Vec2, vel: Vec2, config: &SimConfig) -> (Vec2, Vec2) {
    let (x0, x1) = config.x_bounds();
    let (y0, y1) = config.y_bounds();
    let (px, vx) = reflect_axis(pos.x, vel.x, x0, x1);
    let (py, vy) = reflect_axis(pos.y, vel.y, y0, y1);
    (Vec2::new(px, py), Vec2::new(vx, vy))
}

/// Soft repulsion: every overlapping pair pushes apart with equal and
/// opposite velocity increments of magnitude
/// `strength * (2r - d) / (2r)`.
pub fn resolve_repulsion(world: &WorldState, config: &SimConfig) -> Vec<Vec2> {
    let n = world.len();
    let contact = 2.0 * config.radius;
    let contact_sq = contact * contact;
    let mut out = vec![Vec2::ZERO; n];
    if config.repulsion_strength == 0.0 {
        return out;
    }
    for i in 0..n {
        let pi = world.positions[i];
        for j in (i + 1)..n {
            let delta = pi - world.positions[j];
            let d_sq = delta.norm_sq();
            if d_sq >= contact_sq {
                continue;
            }
            let d = d_sq.sqrt();
            let dir = if d > 0.0 {
                delta * (1.0 / d)
            } else {
                Vec2::from_angle(TAU * i as f64 / n as f64)
            };
            let push = dir * (config.repulsion_strength * (contact - d) / contact);
            out[i] += push;
            out[j] += -push;
        }
    }
    out
}

fn cap_speed(v: Vec2, max_speed: f64) -> Vec2 {
    let speed = v.norm();
    if speed > max_speed {
        v * (max_speed / speed)
    } else {
        v
    }
}

/// Advance the world by one step in place.
pub fn step_world_in_place(world: &mut WorldState, field: &VectorField, config: &SimConfig) -> Result<()> {
    let repulsion = resolve_repulsion(world, config);
    for (i, push) in repulsion.into_iter().enumerate() {
        let pos = world.positions[i];
        let force = sample_field(field, pos, config)? * config.field_gain;
        let mut vel = if config.velocity_override {
            force
        } else {
            world.velocities[i] + force * config.dt
        };
        vel += push;
        vel = cap_speed(vel, config.max_speed);
        let (pos, vel) = apply_reflective_boundary(pos + vel * config.dt, vel, config);
        world.positions[i] = pos;
        world.velocities[i] = vel;
    }
    world.time_step += 1;
    Ok(())
}

pub fn step_world(world: &WorldState, field: &VectorField, config: &SimConfig) -> Result<WorldState> {
    let mut next = world.clone();
    step_world_in_place(&mut next, field, config)?;
    Ok(next)
}

/// Average pairwise distance with the `1 / (N (N - 1))` normalizer over
/// unordered pairs, i.e. half the conventional mean pairwise distance.
pub fn avg_pairwise_distance(positions: &[Vec2]) -> Result<f64> {
    let n = positions.len();
    if n < 2 {
        return Err(Error::Domain(format!("need at least 2 positions, got {n}")));
    }
    let xs: Vec<f64> = positions.iter().map(|p| p.x).collect();
    let ys: Vec<f64> = positions.iter().map(|p| p.y).collect();
    // Four independent lanes so the inner loop vectorizes; the summation
    // order is fixed, keeping results deterministic.
    let mut lanes = [0.0f64; 4];
    for i in 0..n {
        let (px, py) = (xs[i], ys[i]);
        let (qx, qy) = (&xs[i + 1..], &ys[i + 1..]);
        let mut cx = qx.chunks_exact(4);
        let mut cy = qy.chunks_exact(4);
        for (bx, by) in (&mut cx).zip(&mut cy) {
            for k in 0..4 {
                let dx = px - bx[k];
                let dy = py - by[k];
                lanes[k] += (dx * dx + dy * dy).sqrt();
            }
        }
        for (x, y) in cx.remainder().iter().zip(cy.remainder()) {
            let dx = px - x;
            let dy = py - y;
            lanes[0] += (dx * dx + dy * dy).sqrt();
        }
    }
    let total = (lanes[0] + lanes[1]) + (lanes[2] + lanes[3]);
    Ok(total / (n * (n - 1)) as f64)
}

/// Run one episode, calling `observe` on the world after initialization and
/// after every step.
pub fn run_episode_observed(
    seed: u64,
    field: &VectorField,
    config: &SimConfig,
    mut observe: impl FnMut(&WorldState),
) -> Result<Trajectory> {
    let mut world = init_world(seed, config)?;
    let mut d_avg_series = Vec::with_capacity(config.steps + 1);
    d_avg_series.push(avg_pairwise_distance(&world.positions)?);
    observe(&world);
    for _ in 0..config.steps {
        step_world_in_place(&mut world, field, config)?;
        d_avg_series.push(avg_pairwise_distance(&world.positions)?);
        observe(&world);
    }
    Ok(Trajectory {
        d_avg_series,
        final_positions: world.positions,
        seed,
    })
}

pub fn run_episode(seed: u64, field: &VectorField, config: &SimConfig) -> Result<Trajectory> {
    run_episode_observed(seed, field, config, |_| {})
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::rngs::StdRng;

    fn cfg() -> SimConfig {
        SimConfig::default()
    }

    fn world(positions: Vec<Vec2>, velocities: Vec<Vec2>) -> WorldState {
        WorldState {
            positions,
            velocities,
            time_step: 0,
        }
    }

    #[test]
    fn init_is_inside_and_deterministic() {
        let c = cfg();
        let a = init_world(42, &c).unwrap();
        assert_eq!(a.len(), 100);
        assert!(a.positions.iter().all(|&p| c.contains(p)));
        assert!(a.velocities.iter().all(|v| v.norm() <= c.max_speed + 1e-12));
        let b = init_world(42, &c).unwrap();
        assert_eq!(a, b);
        let other = init_world(43, &c).unwrap();
        assert!(a.positions.iter().zip(&other.positions).any(|(p, q)| p != q));
    }

    #[test]
    fn init_rejects_bad_config() {
        for bad in [
            SimConfig { n_cells: 1, ..cfg() },
            SimConfig { radius: 0.0, ..cfg() },
            SimConfig { dt: 0.0, ..cfg() },
            SimConfig {
                max_speed: -1.0,
                ..cfg()
            },
            SimConfig { width: 0.0, ..cfg() },
            SimConfig {
                height: f64::NAN,
                ..cfg()
            },
        ] {
            assert!(matches!(init_world(1, &bad), Err(Error::Config(_))), "{bad:?}");
        }
    }

    #[test]
    fn reflection_cases() {
        let c = cfg();
        let inside = (Vec2::new(100.0, 200.0), Vec2::new(3.0, -1.0));
        assert_eq!(apply_reflective_boundary(inside.0, inside.1, &c), inside);
        let (p, v) = apply_reflective_boundary(Vec2::new(498.0, 250.0), Vec2::new(2.0, 0.0), &c);
        assert_eq!((p, v), (Vec2::new(492.0, 250.0), Vec2::new(-2.0, 0.0)));
        let (p, v) = apply_reflective_boundary(Vec2::new(-3.0, 250.0), Vec2::new(-1.0, 0.0), &c);
        assert_eq!((p, v), (Vec2::new(13.0, 250.0), Vec2::new(1.0, 0.0)));
        let (p, v) = apply_reflective_boundary(Vec2::new(250.0, 501.0), Vec2::new(0.5, 4.0), &c);
        assert_eq!((p, v), (Vec2::new(250.0, 489.0), Vec2::new(0.5, -4.0)));
        // Huge overshoot still lands inside.
        let (p, _) = apply_reflective_boundary(Vec2::new(2000.0, -900.0), Vec2::ZERO, &c);
        assert!(c.contains(p));
    }

    #[test]
    fn repulsion_cases() {
        let c = cfg();
        let sparse = world(
            vec![Vec2::new(10.0, 10.0), Vec2::new(20.0, 10.0), Vec2::new(40.0, 40.0)],
            vec![Vec2::ZERO; 3],
        );
        assert!(resolve_repulsion(&sparse, &c).iter().all(|&v| v == Vec2::ZERO));

        let half = world(
            vec![Vec2::new(100.0, 100.0), Vec2::new(105.0, 100.0)],
            vec![Vec2::ZERO; 2],
        );
        let r = resolve_repulsion(&half, &c);
        assert_eq!(r[0], Vec2::new(-0.5, 0.0));
        assert_eq!(r[1], Vec2::new(0.5, 0.0));

        let line = world(
            vec![
                Vec2::new(100.0, 100.0),
                Vec2::new(106.0, 100.0),
                Vec2::new(112.0, 100.0),
            ],
            vec![Vec2::ZERO; 3],
        );
        let r = resolve_repulsion(&line, &c);
        assert!(r[1].norm() < 1e-15);
        assert!(r[0].x < 0.0 && r[2].x > 0.0);
    }

    #[test]
    fn coincident_centers_use_index_direction() {
        let c = cfg();
        let w = world(vec![Vec2::new(50.0, 50.0); 4], vec![Vec2::ZERO; 4]);
        let r = resolve_repulsion(&w, &c);
        let sum = r.iter().fold(Vec2::ZERO, |a, &b| a + b);
        assert!(sum.norm() < 1e-12);
        // Pair (0, 1): full-strength push along angle 0 for cell 0.
        let w2 = world(vec![Vec2::new(50.0, 50.0); 2], vec![Vec2::ZERO; 2]);
        let r2 = resolve_repulsion(&w2, &c);
        assert_eq!(r2[0], Vec2::new(1.0, 0.0));
        assert_eq!(r2[1], Vec2::new(-1.0, 0.0));
        assert_eq!(resolve_repulsion(&w2, &c), r2);
    }

    #[test]
    fn static_world_stays_put() {
        let c = cfg();
        let w = world(
            vec![Vec2::new(100.0, 100.0), Vec2::new(300.0, 300.0)],
            vec![Vec2::ZERO; 2],
        );
        let next = step_world(&w, &VectorField::zeros(3).unwrap(), &c).unwrap();
        assert_eq!(next.positions, w.positions);
        assert_eq!(next.time_step, 1);
    }

    #[test]
    fn single_euler_step() {
        let c = cfg();
        let field = VectorField::constant(2, Vec2::new(1.0, 0.0)).unwrap();
        let w = world(vec![Vec2::new(250.0, 250.0)], vec![Vec2::ZERO]);
        let next = step_world(&w, &field, &c).unwrap();
        assert_eq!(next.positions[0], Vec2::new(251.0, 250.0));
        // Already at the cap: the step is bounded by max_speed.
        let fast = world(vec![Vec2::new(250.0, 250.0)], vec![Vec2::new(5.0, 0.0)]);
        let next = step_world(&fast, &field, &c).unwrap();
        assert_eq!(next.positions[0], Vec2::new(255.0, 250.0));
    }

    #[test]
    fn velocity_override_replaces_velocity() {
        let c = SimConfig {
            velocity_override: true,
            ..cfg()
        };
        let field = VectorField::constant(2, Vec2::new(0.0, 2.0)).unwrap();
        let w = world(vec![Vec2::new(250.0, 250.0)], vec![Vec2::new(-4.0, 0.0)]);
        let next = step_world(&w, &field, &c).unwrap();
        assert_eq!(next.velocities[0], Vec2::new(0.0, 2.0));
        assert_eq!(next.positions[0], Vec2::new(250.0, 252.0));
    }

    #[test]
    fn wall_bounce_flips_velocity() {
        let c = cfg();
        let field = VectorField::zeros(2).unwrap();
        let w = world(vec![Vec2::new(493.0, 250.0)], vec![Vec2::new(4.0, 0.0)]);
        let next = step_world(&w, &field, &c).unwrap();
        assert!(next.positions[0].x <= 495.0);
        assert_eq!(next.velocities[0].x, -4.0);
    }

    #[test]
    fn pairwise_distance_values() {
        let two = [Vec2::new(0.0, 0.0), Vec2::new(10.0, 0.0)];
        assert_eq!(avg_pairwise_distance(&two).unwrap(), 5.0);
        assert_eq!(avg_pairwise_distance(&[Vec2::new(3.0, 3.0); 5]).unwrap(), 0.0);
        let tri = [Vec2::new(0.0, 0.0), Vec2::new(3.0, 0.0), Vec2::new(0.0, 4.0)];
        assert!((avg_pairwise_distance(&tri).unwrap() - 2.0).abs() < 1e-15);
        assert!(matches!(avg_pairwise_distance(&two[..1]), Err(Error::Domain(_))));
    }

    #[test]
    fn pairwise_distance_matches_double_loop() {
        let mut rng = StdRng::seed_from_u64(9);
        for _ in 0..100 {
            let n = rng.random_range(2..=8);
            let pts: Vec<Vec2> = (0..n)
                .map(|_| Vec2::new(rng.random_range(-100.0..100.0), rng.random_range(-100.0..100.0)))
                .collect();
            let mut sum = 0.0;
            for i in 0..n {
                for j in 0..n {
                    if j > i {
                        let dx = pts[i].x - pts[j].x;
                        let dy = pts[i].y - pts[j].y;
                        sum += (dx * dx + dy * dy).sqrt();
                    }
                }
            }
            let want = sum / (n * (n - 1)) as f64;
            let got = avg_pairwise_distance(&pts).unwrap();
            assert!((got - want).abs() <= 1e-12 * want.abs());
        }
    }

    #[test]
    fn degenerate_and_static_episodes() {
        let c = SimConfig { steps: 0, ..cfg() };
        let field = VectorField::zeros(2).unwrap();
        let t = run_episode(5, &field, &c).unwrap();
        assert_eq!(t.d_avg_series.len(), 1);
        assert_eq!(t.final_positions, init_world(5, &c).unwrap().positions);

        // Zero speeds: a world with max_speed tiny behaves as static but init
        // draws speeds, so drive the stepper directly from a zero-velocity start.
        let c = SimConfig {
            repulsion_strength: 0.0,
            steps: 20,
            ..cfg()
        };
        let mut w = init_world(5, &c).unwrap();
        w.velocities.iter_mut().for_each(|v| *v = Vec2::ZERO);
        let d0 = avg_pairwise_distance(&w.positions).unwrap();
        for _ in 0..c.steps {
            step_world_in_place(&mut w, &field, &c).unwrap();
            assert_eq!(avg_pairwise_distance(&w.positions).unwrap(), d0);
        }
    }

    #[test]
    fn converging_field_shrinks_distances() {
        let c = cfg();
        let center = Vec2::new(250.0, 250.0);
        let field = VectorField::from_fn(5, &c, |p| {
            let to_c = center - p;
            let d = to_c.norm();
            if d > 0.0 {
                to_c * (2.0 / d)
            } else {
                Vec2::ZERO
            }
        })
        .unwrap();
        let t = run_episode(3, &field, &c).unwrap();
        assert_eq!(t.d_avg_series.len(), 501);
        assert!(t.d_avg_series[500] < t.d_avg_series[0]);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn containment_speed_cap_and_momentum(seed in any::<u64>(), flat in proptest::collection::vec(-3.0f64..3.0, 18)) {
            let c = SimConfig { steps: 60, ..cfg() };
            let field = VectorField::from_flat(3, &flat).unwrap();
            let mut w = init_world(seed, &c).unwrap();
            for _ in 0..c.steps {
                let rep = resolve_repulsion(&w, &c);
                let sum = rep.iter().fold(Vec2::ZERO, |a, &b| a + b);
                prop_assert!(sum.norm() < 1e-9);
                step_world_in_place(&mut w, &field, &c).unwrap();
                for (p, v) in w.positions.iter().zip(&w.velocities) {
                    prop_assert!(c.contains(*p), "{p:?}");
                    prop_assert!(v.norm() <= c.max_speed + 1e-9);
                }
            }
        }
    }
}
