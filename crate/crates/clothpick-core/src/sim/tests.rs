use super::*;

fn default_cloth() -> ClothState {
    init_cloth(8, 8, 0.1, Pose2::identity()).unwrap()
}

fn nc_of(state: &ClothState, c_flat: usize) -> f64 {
    metric_coverage(state) as f64 / c_flat as f64
}

#[test]
fn minimal_lattice_has_expected_springs() {
    let cloth = init_cloth(2, 2, 0.1, Pose2::identity()).unwrap();
    assert_eq!(cloth.positions.len(), 4);
    assert_eq!(cloth.velocities.len(), 4);
    assert!(cloth.velocities.iter().all(|v| *v == [0.0; 3]));
    let structural = cloth
        .springs
        .iter()
        .filter(|s| s.kind == SpringKind::Structural)
        .count();
    let shear = cloth
        .springs
        .iter()
        .filter(|s| s.kind == SpringKind::Shear)
        .count();
    let bend = cloth
        .springs
        .iter()
        .filter(|s| s.kind == SpringKind::Bend)
        .count();
    assert_eq!((structural, shear, bend), (4, 2, 0));
    for s in &cloth.springs {
        assert!(s.a != s.b && s.a < 4 && s.b < 4);
        assert!(s.rest_length > 0.0);
    }
}

#[test]
fn flat_state_is_its_own_coverage_maximum() {
    let cloth = default_cloth();
    let c_flat = metric_coverage(&cloth);
    assert!(c_flat > 0);
    assert_eq!(metric_coverage(&cloth), c_flat);
    assert!(cloth.positions.iter().all(|p| p[2] == 0.0));
}

#[test]
fn footprint_outside_workspace_is_rejected() {
    // 8x8 at spacing 0.2 spans 1.4: fits centered, fails shifted past x = 1.
    assert!(init_cloth(8, 8, 0.2, Pose2::identity()).is_ok());
    let shifted = Pose2 {
        tx: 0.4,
        ty: 0.0,
        angle: 0.0,
    };
    let err = init_cloth(8, 8, 0.2, shifted).unwrap_err();
    assert!(matches!(err, Error::Config(_)));
}

#[test]
fn free_fall_matches_integrator_and_respects_ground() {
    let mut state = ClothState {
        positions: vec![[0.0, 0.0, 0.5]],
        velocities: vec![[0.0; 3]],
        grid_dims: (1, 1),
        rest_spacing: 0.1,
        springs: vec![],
        pinned: None,
    };
    let mut params = SimParams::default();
    params.damping = 0.0;

    let one = step_physics(&state, &params).unwrap();
    let dz = state.positions[0][2] - one.positions[0][2];
    assert!((dz - params.gravity * params.dt * params.dt).abs() < 1e-15);

    // n-step drop approaches ½gt² from above: ½gt²(1 + 1/n)
    let n = 40;
    for _ in 0..n {
        step_physics_in_place(&mut state, &params).unwrap();
    }
    let t = n as f64 * params.dt;
    let drop = 0.5 - state.positions[0][2];
    let expected = 0.5 * params.gravity * t * t;
    assert!((drop - expected).abs() / expected < 0.03, "drop {drop}");

    // never below ground, no matter how long we run
    for _ in 0..2000 {
        step_physics_in_place(&mut state, &params).unwrap();
        assert!(state.positions[0][2] >= 0.0);
    }
}

#[test]
fn resting_flat_cloth_is_an_equilibrium() {
    let cloth = default_cloth();
    let params = SimParams::default();
    let next = step_physics(&cloth, &params).unwrap();
    assert_eq!(next.positions, cloth.positions);
    assert_eq!(next.velocities, cloth.velocities);
}

#[test]
fn stretched_spring_pulls_symmetrically() {
    // Two particles, one structural spring stretched to 2x rest length,
    // airborne so the ground does not interfere. One Euler step moves each
    // endpoint toward the other by k · (len - rest) · dt² = 0.002.
    let state = ClothState {
        positions: vec![[0.0, 0.0, 0.5], [0.2, 0.0, 0.5]],
        velocities: vec![[0.0; 3]; 2],
        grid_dims: (1, 2),
        rest_spacing: 0.1,
        springs: vec![Spring {
            a: 0,
            b: 1,
            rest_length: 0.1,
            kind: SpringKind::Structural,
        }],
        pinned: None,
    };
    let mut params = SimParams::default();
    params.strain_limit = 0.0; // isolate pure force integration
    let next = step_physics(&state, &params).unwrap();
    let da = next.positions[0][0] - 0.0;
    let db = next.positions[1][0] - 0.2;
    let expected = params.stiffness_structural * 0.1 * params.dt * params.dt;
    assert!((da - expected).abs() < 1e-12, "da {da}");
    assert!((db + expected).abs() < 1e-12, "db {db}");
}

#[test]
fn mispick_far_from_cloth_is_a_near_noop() {
    let cloth = default_cloth();
    let c_flat = metric_coverage(&cloth);
    let params = SimParams::default();
    let (next, outcome) =
        execute_pick_place(&cloth, [0.9, 0.9, 0.0, 0.0], &params).unwrap();
    assert!(!outcome.grasped);
    assert_eq!(outcome.grasped_particle, None);
    let delta = (nc_of(&next, c_flat) - 1.0).abs();
    assert!(delta < 0.02, "coverage moved by {delta}");
}

#[test]
fn lift_and_replace_keeps_coverage() {
    let cloth = default_cloth();
    let c_flat = metric_coverage(&cloth);
    let params = SimParams::default();
    let corner = cloth.positions[0];
    let action = [corner[0], corner[1], corner[0], corner[1]];
    let (next, outcome) = execute_pick_place(&cloth, action, &params).unwrap();
    assert!(outcome.grasped);
    assert_eq!(outcome.grasped_particle, Some(0));
    let delta = (nc_of(&next, c_flat) - 1.0).abs();
    assert!(delta < 0.06, "coverage moved by {delta}");
}

#[test]
fn unfolding_a_fold_increases_coverage() {
    let cloth = default_cloth();
    let params = SimParams::default();
    let flat_target = cloth.positions[0];
    let far_corner = cloth.positions[cloth.corner_indices()[3]];

    // scripted fold: corner 0 onto the far corner
    let fold = [flat_target[0], flat_target[1], far_corner[0], far_corner[1]];
    let (folded, outcome) = execute_pick_place(&cloth, fold, &params).unwrap();
    assert!(outcome.grasped);
    let cov_folded = metric_coverage(&folded);
    assert!(cov_folded < metric_coverage(&cloth));

    // unfold: the same particle back to its flat position
    let now = folded.positions[0];
    let unfold = [now[0], now[1], flat_target[0], flat_target[1]];
    let (unfolded, outcome) = execute_pick_place(&folded, unfold, &params).unwrap();
    assert!(outcome.grasped, "pick on folded corner should grasp");
    assert!(
        metric_coverage(&unfolded) > cov_folded,
        "coverage {} -> {}",
        cov_folded,
        metric_coverage(&unfolded)
    );
}

#[test]
fn coverage_of_half_fold_is_half() {
    // Geometric fold across the center particle column of a 9-wide lattice:
    // the mirrored columns land exactly on their counterparts, the crease
    // column stays put, and the footprint halves.
    let cloth = init_cloth(9, 9, 0.1, Pose2::identity()).unwrap();
    let c_flat = metric_coverage(&cloth);
    let mut folded = cloth.clone();
    for p in &mut folded.positions {
        if p[0] > 1e-9 {
            p[0] = -p[0];
            p[2] = 0.01;
        }
    }
    let cov = metric_coverage(&folded);
    let ratio = cov as f64 / c_flat as f64;
    assert!((ratio - 0.5).abs() < 0.05, "ratio {ratio}");
}

#[test]
fn coverage_is_deterministic() {
    let cloth = crumple(&default_cloth(), 3, 2, &SimParams::default()).unwrap();
    assert_eq!(metric_coverage(&cloth), metric_coverage(&cloth));
}

#[test]
fn crumple_zero_folds_returns_flat_state() {
    let cloth = default_cloth();
    let out = crumple(&cloth, 11, 0, &SimParams::default()).unwrap();
    assert_eq!(out, cloth);
}

#[test]
fn crumple_is_bitwise_deterministic() {
    let cloth = default_cloth();
    let params = SimParams::default();
    let a = crumple(&cloth, 7, 3, &params).unwrap();
    let b = crumple(&cloth, 7, 3, &params).unwrap();
    assert_eq!(a, b);
}

#[test]
fn crumple_six_folds_drops_coverage_below_tier_one() {
    let cloth = default_cloth();
    let c_flat = metric_coverage(&cloth);
    let params = SimParams::default();
    let crumpled = crumple(&cloth, 7, 6, &params).unwrap();
    let nc = nc_of(&crumpled, c_flat);
    assert!(nc < 0.7, "nc after 6 folds = {nc}");
}

#[test]
fn ground_constraint_holds_after_settling() {
    let params = SimParams::default();
    for seed in 0..4 {
        let state = crumple(&default_cloth(), seed, 3, &params).unwrap();
        assert!(state.positions.iter().all(|p| p[2] >= 0.0));
    }
}

#[test]
fn settled_cloth_kinetic_energy_is_bounded() {
    let params = SimParams::default();
    let mut state = crumple(&default_cloth(), 5, 2, &params).unwrap();
    let (_, converged) = settle(&mut state, &params).unwrap();
    assert!(converged);
    let n = state.positions.len() as f64;
    let bound = 0.5 * n * params.settle_velocity_eps * params.settle_velocity_eps;
    assert!(state.kinetic_energy() <= bound);
}

#[test]
fn mispick_boundary_is_a_sharp_discontinuity() {
    let cloth = default_cloth();
    let c_flat = metric_coverage(&cloth);
    let params = SimParams::default();
    let corner = cloth.positions[0];
    // just outside the grasp radius of every particle: offset diagonally away
    let delta = 0.002;
    let r = params.grasp_radius + delta;
    let off = [corner[0] - r / 2f64.sqrt(), corner[1] - r / 2f64.sqrt()];
    // place on the far corner: a grasped pick folds, a missed pick is a no-op
    let far = cloth.positions[cloth.corner_indices()[3]];
    let place = [far[0], far[1]];

    let (missed, o1) = execute_pick_place(&cloth, [off[0], off[1], place[0], place[1]], &params).unwrap();
    assert!(!o1.grasped);
    let miss_change = (nc_of(&missed, c_flat) - 1.0).abs();
    assert!(miss_change < 0.02);

    let (dragged, o2) =
        execute_pick_place(&cloth, [corner[0], corner[1], place[0], place[1]], &params).unwrap();
    assert!(o2.grasped);
    let drag_change = (nc_of(&dragged, c_flat) - 1.0).abs();
    assert!(
        drag_change > miss_change + 0.05,
        "drag {drag_change} vs miss {miss_change}"
    );
}

#[test]
fn pick_place_determinism_is_bit_exact() {
    let cloth = crumple(&default_cloth(), 9, 2, &SimParams::default()).unwrap();
    let action = [0.1, 0.05, -0.3, 0.2];
    let (a, oa) = execute_pick_place(&cloth, action, &SimParams::default()).unwrap();
    let (b, ob) = execute_pick_place(&cloth, action, &SimParams::default()).unwrap();
    assert_eq!(a, b);
    assert_eq!(oa, ob);
}

#[test]
fn rotation_helpers_are_exact_inverses() {
    let state = crumple(&default_cloth(), 2, 2, &SimParams::default()).unwrap();
    let back = state.rotated90(1).rotated90(3);
    assert_eq!(state, back);
    let flipped = state.flipped_y().flipped_y();
    assert_eq!(state, flipped);
}
