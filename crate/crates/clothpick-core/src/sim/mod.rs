//! Mass-spring cloth simulator.
//!
//! A rows×cols particle lattice with structural/shear/bend springs,
//! semi-implicit Euler integration, a ground plane at z = 0, and a
//! single-particle pin realizing the pick-and-place motion primitive
//! (grasp → lift → translate → release → settle). Everything is
//! deterministic: identical inputs give bit-identical outputs.

pub mod raster;

use rand::Rng;

use crate::error::{Error, Result};
use crate::rng::rng_from_seed;

/// Coverage raster resolution used for all metrics, independent of the
/// observation resolution.
pub const METRIC_RESOLUTION: usize = 64;

/// Half-width of the square workspace [-1,1]².
pub const WORKSPACE_HALF: f64 = 1.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SpringKind {
    Structural,
    Shear,
    Bend,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Spring {
    pub a: usize,
    pub b: usize,
    pub rest_length: f64,
    pub kind: SpringKind,
}

/// Rigid 2D placement of the lattice in the workspace.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pose2 {
    pub tx: f64,
    pub ty: f64,
    pub angle: f64,
}

impl Pose2 {
    pub fn identity() -> Self {
        Pose2 {
            tx: 0.0,
            ty: 0.0,
            angle: 0.0,
        }
    }

    pub fn apply(&self, x: f64, y: f64) -> (f64, f64) {
        let (s, c) = self.angle.sin_cos();
        (c * x - s * y + self.tx, s * x + c * y + self.ty)
    }
}

/// Full particle-level state of the fabric.
#[derive(Debug, Clone, PartialEq)]
pub struct ClothState {
    pub positions: Vec<[f64; 3]>,
    pub velocities: Vec<[f64; 3]>,
    pub grid_dims: (usize, usize),
    pub rest_spacing: f64,
    pub springs: Vec<Spring>,
    /// Particle currently held by the gripper, if any.
    pub pinned: Option<usize>,
}

impl ClothState {
    pub fn particle_count(&self) -> usize {
        self.positions.len()
    }

    /// Indices of the four lattice corners.
    pub fn corner_indices(&self) -> [usize; 4] {
        let (rows, cols) = self.grid_dims;
        [
            0,
            cols - 1,
            (rows - 1) * cols,
            rows * cols - 1,
        ]
    }

    /// Mean x/y of all particles.
    pub fn centroid_xy(&self) -> [f64; 2] {
        let n = self.positions.len() as f64;
        let (sx, sy) = self
            .positions
            .iter()
            .fold((0.0, 0.0), |(ax, ay), p| (ax + p[0], ay + p[1]));
        [sx / n, sy / n]
    }

    pub fn max_speed(&self) -> f64 {
        self.velocities
            .iter()
            .map(|v| (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt())
            .fold(0.0, f64::max)
    }

    pub fn kinetic_energy(&self) -> f64 {
        0.5 * self
            .velocities
            .iter()
            .map(|v| v[0] * v[0] + v[1] * v[1] + v[2] * v[2])
            .sum::<f64>()
    }

    /// Rotate the whole state by k·90° counter-clockwise about the origin.
    /// Exact in floating point (swap and negate only).
    pub fn rotated90(&self, k: u8) -> ClothState {
        let mut out = self.clone();
        for _ in 0..(k % 4) {
            for p in &mut out.positions {
                let (x, y) = (p[0], p[1]);
                p[0] = -y;
                p[1] = x;
            }
            for v in &mut out.velocities {
                let (x, y) = (v[0], v[1]);
                v[0] = -y;
                v[1] = x;
            }
        }
        out
    }

    /// Mirror the state across the x axis (y ↦ -y). Exact in floating point.
    pub fn flipped_y(&self) -> ClothState {
        let mut out = self.clone();
        for p in &mut out.positions {
            p[1] = -p[1];
        }
        for v in &mut out.velocities {
            v[1] = -v[1];
        }
        out
    }
}

/// Integrator and gripper parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct SimParams {
    pub dt: f64,
    pub gravity: f64,
    pub stiffness_structural: f64,
    pub stiffness_shear: f64,
    pub stiffness_bend: f64,
    /// Linear velocity damping coefficient (force = -damping · v).
    pub damping: f64,
    /// Dashpot coefficient along each spring (damps relative motion).
    pub spring_damping: f64,
    /// Tangential velocity fraction removed per step while in ground contact.
    pub ground_friction: f64,
    /// Maximum structural/shear spring extension ratio before position
    /// projection kicks in (mass-spring cloth is super-elastic without it).
    pub strain_limit: f64,
    /// Projection sweeps per step enforcing the strain limit.
    pub strain_iterations: usize,
    pub settle_steps: usize,
    pub settle_velocity_eps: f64,
    pub grasp_radius: f64,
    pub lift_height: f64,
    pub lift_substeps: usize,
    pub move_substeps: usize,
}

impl Default for SimParams {
    fn default() -> Self {
        SimParams {
            dt: 1.0 / 200.0,
            gravity: 9.8,
            stiffness_structural: 6000.0,
            stiffness_shear: 3000.0,
            stiffness_bend: 1500.0,
            damping: 2.0,
            spring_damping: 6.0,
            ground_friction: 0.4,
            strain_limit: 1.08,
            strain_iterations: 3,
            settle_steps: 500,
            settle_velocity_eps: 0.015,
            grasp_radius: 0.075,
            lift_height: 0.2,
            lift_substeps: 50,
            move_substeps: 100,
        }
    }
}

impl SimParams {
    pub fn from_config(cfg: &crate::config::Config) -> Result<SimParams> {
        let p = SimParams {
            dt: cfg.get_f64("sim.dt")?,
            gravity: cfg.get_f64("sim.gravity")?,
            stiffness_structural: cfg.get_f64("sim.stiffness_structural")?,
            stiffness_shear: cfg.get_f64("sim.stiffness_shear")?,
            stiffness_bend: cfg.get_f64("sim.stiffness_bend")?,
            damping: cfg.get_f64("sim.damping")?,
            spring_damping: cfg.get_f64("sim.spring_damping")?,
            ground_friction: cfg.get_f64("sim.ground_friction")?,
            strain_limit: cfg.get_f64("sim.strain_limit")?,
            strain_iterations: cfg.get_usize("sim.strain_iterations")?,
            settle_steps: cfg.get_usize("sim.settle_steps")?,
            settle_velocity_eps: cfg.get_f64("sim.settle_velocity_eps")?,
            grasp_radius: cfg.get_f64("sim.grasp_radius")?,
            lift_height: cfg.get_f64("sim.lift_height")?,
            lift_substeps: cfg.get_usize("sim.lift_substeps")?,
            move_substeps: cfg.get_usize("sim.move_substeps")?,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if self.dt <= 0.0 {
            return Err(Error::Config("sim.dt must be > 0".into()));
        }
        if self.grasp_radius <= 0.0 {
            return Err(Error::Config("sim.grasp_radius must be > 0".into()));
        }
        if self.settle_steps < 1 {
            return Err(Error::Config("sim.settle_steps must be >= 1".into()));
        }
        Ok(())
    }
}

/// Result of attempting a pick.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PickOutcome {
    pub grasped: bool,
    pub grasped_particle: Option<usize>,
    pub pick_point: [f64; 2],
    pub place_point: [f64; 2],
}

/// Build a flat lattice at z = 0 under `pose`, with zero velocities.
///
/// Structural springs join lattice neighbours, shear springs the quad
/// diagonals, bend springs skip one particle along rows/columns.
pub fn init_cloth(rows: usize, cols: usize, spacing: f64, pose: Pose2) -> Result<ClothState> {
    if rows < 2 || cols < 2 {
        return Err(Error::Config("cloth lattice needs rows, cols >= 2".into()));
    }
    if spacing <= 0.0 {
        return Err(Error::Config("cloth spacing must be > 0".into()));
    }

    let cx = (cols - 1) as f64 * spacing / 2.0;
    let cy = (rows - 1) as f64 * spacing / 2.0;
    let mut positions = Vec::with_capacity(rows * cols);
    for r in 0..rows {
        for c in 0..cols {
            let (x, y) = pose.apply(c as f64 * spacing - cx, r as f64 * spacing - cy);
            if x.abs() > WORKSPACE_HALF || y.abs() > WORKSPACE_HALF {
                return Err(Error::Config(format!(
                    "cloth footprint leaves the workspace at ({x:.3}, {y:.3})"
                )));
            }
            positions.push([x, y, 0.0]);
        }
    }

    let idx = |r: usize, c: usize| r * cols + c;
    // Rest lengths are measured from the constructed flat positions, so the
    // flat pose is an exact equilibrium of the discretization.
    let measured = |a: usize, b: usize| {
        let (pa, pb) = (positions[a], positions[b]);
        let d = [pb[0] - pa[0], pb[1] - pa[1], pb[2] - pa[2]];
        (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt()
    };
    let mut springs = Vec::new();
    let push = |a: usize, b: usize, kind: SpringKind, springs: &mut Vec<Spring>| {
        springs.push(Spring {
            a,
            b,
            rest_length: measured(a, b),
            kind,
        });
    };
    for r in 0..rows {
        for c in 0..cols {
            if c + 1 < cols {
                push(idx(r, c), idx(r, c + 1), SpringKind::Structural, &mut springs);
            }
            if r + 1 < rows {
                push(idx(r, c), idx(r + 1, c), SpringKind::Structural, &mut springs);
            }
            if r + 1 < rows && c + 1 < cols {
                push(idx(r, c), idx(r + 1, c + 1), SpringKind::Shear, &mut springs);
                push(idx(r, c + 1), idx(r + 1, c), SpringKind::Shear, &mut springs);
            }
            if c + 2 < cols {
                push(idx(r, c), idx(r, c + 2), SpringKind::Bend, &mut springs);
            }
            if r + 2 < rows {
                push(idx(r, c), idx(r + 2, c), SpringKind::Bend, &mut springs);
            }
        }
    }

    Ok(ClothState {
        velocities: vec![[0.0; 3]; positions.len()],
        positions,
        grid_dims: (rows, cols),
        rest_spacing: spacing,
        springs,
        pinned: None,
    })
}

/// One semi-implicit Euler step: spring + gravity + damping forces, ground
/// projection with tangential friction. The pinned particle (if any) is left
/// untouched by integration.
pub fn step_physics(state: &ClothState, params: &SimParams) -> Result<ClothState> {
    let mut next = state.clone();
    step_physics_in_place(&mut next, params)?;
    Ok(next)
}

pub(crate) fn step_physics_in_place(state: &mut ClothState, params: &SimParams) -> Result<()> {
    let n = state.positions.len();
    let mut forces = vec![[0.0f64; 3]; n];

    for s in &state.springs {
        let pa = state.positions[s.a];
        let pb = state.positions[s.b];
        let d = [pb[0] - pa[0], pb[1] - pa[1], pb[2] - pa[2]];
        let len = (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt();
        if len < 1e-12 {
            continue;
        }
        let k = match s.kind {
            SpringKind::Structural => params.stiffness_structural,
            SpringKind::Shear => params.stiffness_shear,
            SpringKind::Bend => params.stiffness_bend,
        };
        // Bend springs are tension-only: they hold the sheet together along
        // geodesics but must not explode a folded crease back open.
        if s.kind == SpringKind::Bend && len < s.rest_length {
            continue;
        }
        let va = state.velocities[s.a];
        let vb = state.velocities[s.b];
        let rel = ((vb[0] - va[0]) * d[0] + (vb[1] - va[1]) * d[1] + (vb[2] - va[2]) * d[2]) / len;
        let f = (k * (len - s.rest_length) + params.spring_damping * rel) / len;
        let fx = f * d[0];
        let fy = f * d[1];
        let fz = f * d[2];
        forces[s.a][0] += fx;
        forces[s.a][1] += fy;
        forces[s.a][2] += fz;
        forces[s.b][0] -= fx;
        forces[s.b][1] -= fy;
        forces[s.b][2] -= fz;
    }

    let dt = params.dt;
    for i in 0..n {
        if state.pinned == Some(i) {
            continue;
        }
        let v = &mut state.velocities[i];
        // unit particle mass
        v[0] += (forces[i][0] - params.damping * v[0]) * dt;
        v[1] += (forces[i][1] - params.damping * v[1]) * dt;
        v[2] += (forces[i][2] - params.gravity - params.damping * v[2]) * dt;

        let p = &mut state.positions[i];
        p[0] += v[0] * dt;
        p[1] += v[1] * dt;
        p[2] += v[2] * dt;

        if p[2] < 0.0 {
            p[2] = 0.0;
            if v[2] < 0.0 {
                v[2] = 0.0;
            }
            let keep = 1.0 - params.ground_friction;
            v[0] *= keep;
            v[1] *= keep;
        }

        if !(p[0].is_finite() && p[1].is_finite() && p[2].is_finite()) {
            return Err(Error::SimDiverged(format!(
                "non-finite position at particle {i}"
            )));
        }
    }

    // Strain limiting on structural/shear springs keeps the fabric
    // quasi-inextensible under dragging. Each projected spring also loses its
    // separating relative velocity (inelastic impulse), otherwise the
    // projection pumps energy against the stale velocities.
    if params.strain_limit > 0.0 {
        for _ in 0..params.strain_iterations {
            for s in &state.springs {
                if s.kind == SpringKind::Bend {
                    continue;
                }
                let max_len = s.rest_length * params.strain_limit;
                let pa = state.positions[s.a];
                let pb = state.positions[s.b];
                let d = [pb[0] - pa[0], pb[1] - pa[1], pb[2] - pa[2]];
                let len = (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt();
                if len <= max_len || len < 1e-12 {
                    continue;
                }
                let a_pinned = state.pinned == Some(s.a);
                let b_pinned = state.pinned == Some(s.b);
                let (wa, wb) = match (a_pinned, b_pinned) {
                    (false, false) => (0.5, 0.5),
                    (true, false) => (0.0, 1.0),
                    (false, true) => (1.0, 0.0),
                    (true, true) => (0.0, 0.0),
                };
                let excess = (len - max_len) / len;
                let dir = [d[0] / len, d[1] / len, d[2] / len];
                for axis in 0..3 {
                    let shift = d[axis] * excess;
                    state.positions[s.a][axis] += shift * wa;
                    state.positions[s.b][axis] -= shift * wb;
                }
                state.positions[s.a][2] = state.positions[s.a][2].max(0.0);
                state.positions[s.b][2] = state.positions[s.b][2].max(0.0);

                let va = state.velocities[s.a];
                let vb = state.velocities[s.b];
                let separating = (vb[0] - va[0]) * dir[0]
                    + (vb[1] - va[1]) * dir[1]
                    + (vb[2] - va[2]) * dir[2];
                if separating > 0.0 {
                    for axis in 0..3 {
                        state.velocities[s.a][axis] += dir[axis] * separating * wa;
                        state.velocities[s.b][axis] -= dir[axis] * separating * wb;
                    }
                }
            }
        }
    }
    Ok(())
}

/// Step until the maximum particle speed drops below the settle threshold or
/// the step budget is exhausted. Returns (steps used, converged).
pub fn settle(state: &mut ClothState, params: &SimParams) -> Result<(usize, bool)> {
    for step in 0..params.settle_steps {
        step_physics_in_place(state, params)?;
        if state.max_speed() < params.settle_velocity_eps {
            return Ok((step + 1, true));
        }
    }
    Ok((params.settle_steps, false))
}

/// Nearest particle (top-down distance) within the grasp radius, ties broken
/// by lowest index.
pub fn find_grasp_candidate(state: &ClothState, pick: [f64; 2], grasp_radius: f64) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (i, p) in state.positions.iter().enumerate() {
        let dx = p[0] - pick[0];
        let dy = p[1] - pick[1];
        let d = (dx * dx + dy * dy).sqrt();
        if d <= grasp_radius {
            match best {
                Some((_, bd)) if bd <= d => {}
                _ => best = Some((i, d)),
            }
        }
    }
    best.map(|(i, _)| i)
}

/// Execute the pick-and-place primitive.
///
/// The pick point grasps the nearest particle within `grasp_radius`; a miss
/// leaves the cloth to settle (mispick). A grasped particle is pinned, lifted
/// to `lift_height`, translated linearly above the place point, released and
/// the cloth settles.
pub fn execute_pick_place(
    state: &ClothState,
    action: [f64; 4],
    params: &SimParams,
) -> Result<(ClothState, PickOutcome)> {
    for a in action {
        if !(-1.0..=1.0).contains(&a) {
            return Err(Error::Contract(format!(
                "action component {a} outside [-1, 1]"
            )));
        }
    }
    let pick = [action[0], action[1]];
    let place = [action[2], action[3]];
    let mut next = state.clone();

    let Some(grasped) = find_grasp_candidate(&next, pick, params.grasp_radius) else {
        settle(&mut next, params)?;
        return Ok((
            next,
            PickOutcome {
                grasped: false,
                grasped_particle: None,
                pick_point: pick,
                place_point: place,
            },
        ));
    };

    next.pinned = Some(grasped);
    let start = next.positions[grasped];
    let lift_target = [start[0], start[1], params.lift_height.max(start[2])];

    for s in 1..=params.lift_substeps {
        let t = s as f64 / params.lift_substeps as f64;
        let p = &mut next.positions[grasped];
        p[0] = start[0] + (lift_target[0] - start[0]) * t;
        p[1] = start[1] + (lift_target[1] - start[1]) * t;
        p[2] = start[2] + (lift_target[2] - start[2]) * t;
        next.velocities[grasped] = [0.0; 3];
        step_physics_in_place(&mut next, params)?;
    }

    let move_target = [place[0], place[1], lift_target[2]];
    for s in 1..=params.move_substeps {
        let t = s as f64 / params.move_substeps as f64;
        let p = &mut next.positions[grasped];
        p[0] = lift_target[0] + (move_target[0] - lift_target[0]) * t;
        p[1] = lift_target[1] + (move_target[1] - lift_target[1]) * t;
        p[2] = lift_target[2];
        next.velocities[grasped] = [0.0; 3];
        step_physics_in_place(&mut next, params)?;
    }

    next.pinned = None;
    settle(&mut next, params)?;

    Ok((
        next,
        PickOutcome {
            grasped: true,
            grasped_particle: Some(grasped),
            pick_point: pick,
            place_point: place,
        },
    ))
}

/// Count of occupied cells in the top-down rasterization.
pub fn coverage(state: &ClothState, raster_resolution: usize) -> usize {
    raster::rasterize(&state.positions, state.grid_dims, raster_resolution).occupied_cells()
}

/// Coverage at the fixed metric resolution.
pub fn metric_coverage(state: &ClothState) -> usize {
    coverage(state, METRIC_RESOLUTION)
}

/// Crumple the cloth with `num_random_folds` random on-cloth pick-and-place
/// actions. Picks land on particles (guaranteed grasp), places are drawn
/// nearby with a bias toward the cloth centroid so repeated folds compact
/// the footprint. Deterministic for a given seed.
pub fn crumple(
    state: &ClothState,
    rng_seed: u64,
    num_random_folds: usize,
    params: &SimParams,
) -> Result<ClothState> {
    let mut rng = rng_from_seed(rng_seed);
    let mut current = state.clone();
    let (rows, cols) = state.grid_dims;
    let perimeter: Vec<usize> = (0..rows * cols)
        .filter(|i| {
            let (r, c) = (i / cols, i % cols);
            r == 0 || c == 0 || r == rows - 1 || c == cols - 1
        })
        .collect();
    for _ in 0..num_random_folds {
        // Perimeter picks make real folds; interior picks mostly rumple.
        let pi = if rng.gen_bool(0.8) {
            perimeter[rng.gen_range(0..perimeter.len())]
        } else {
            rng.gen_range(0..current.positions.len())
        };
        let p = current.positions[pi];
        // jitter strictly inside the grasp radius so the pick always lands
        let jr = rng.gen_range(0.0..params.grasp_radius * 0.5);
        let ja = rng.gen_range(0.0..std::f64::consts::TAU);
        let pick = [
            (p[0] + jr * ja.cos()).clamp(-1.0, 1.0),
            (p[1] + jr * ja.sin()).clamp(-1.0, 1.0),
        ];

        // Fold over the centroid: carry the picked point to the far side so
        // the flap lands on top of the remaining cloth instead of sliding
        // back open. λ ≈ 0.5 creases at the centroid, λ ≈ 1 mirrors through it.
        let centroid = current.centroid_xy();
        let lambda = rng.gen_range(0.4..1.0);
        let jx = rng.gen_range(-0.1..0.1);
        let jy = rng.gen_range(-0.1..0.1);
        let place = [
            (pick[0] + 2.0 * lambda * (centroid[0] - pick[0]) + jx).clamp(-0.95, 0.95),
            (pick[1] + 2.0 * lambda * (centroid[1] - pick[1]) + jy).clamp(-0.95, 0.95),
        ];

        let action = [pick[0], pick[1], place[0], place[1]];
        let (next, _) = execute_pick_place(&current, action, params)?;
        current = next;
    }
    Ok(current)
}

#[cfg(test)]
mod tests;
