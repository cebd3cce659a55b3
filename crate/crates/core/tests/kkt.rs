use goop_core::expr::{evaluate, Assignment};
use goop_core::harness::{fixtures, gen_instance, Family, GeneratorConfig};
use goop_core::kkt::{
    assemble_complete, assemble_perturbed, assemble_reduced, count_complete, count_reduced, lift_duals_between,
    problem_counts, Role, RowKind,
};
use goop_core::linalg::pinv_solve;
use goop_core::model::PRIMAL;
use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn cfg(seed: u64, players: usize, n: usize, m_eq: usize, m_ineq: usize, levels: usize) -> GeneratorConfig {
    GeneratorConfig { seed, players, n, m_eq, m_ineq, levels, family: Family::QuadraticRank2, perturbation: 0.5 }
}

fn random_point(dim: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect()
}

/// Solve a system whose rows are affine in the iterate.
fn affine_solve(sys: &goop_core::kkt::KktSystem) -> Vec<f64> {
    let y0 = vec![0.0; sys.dim()];
    let r = DVector::from_vec(sys.residual(&y0));
    let j = sys.jacobian(&y0);
    let dy = pinv_solve(&j, &(-r), None).unwrap();
    dy.as_slice().to_vec()
}

#[test]
fn t1_layout_dimension() {
    let p = fixtures::t1();
    let sys = assemble_reduced(&p).unwrap();
    assert_eq!(sys.dim(), 18);
    assert_eq!(sys.n_rows(), 2 * 2 + 1 + 2 * 4);
    assert_eq!(sys.n_ineq(), 3 * 4);
    let pert = assemble_perturbed(&p, 1.0).unwrap();
    assert_eq!(pert.n_rows(), 21);
    assert_eq!(pert.dim(), 26);
}

#[test]
fn t1_perturbed_rows_vanish_on_central_point() {
    let p = fixtures::t1();
    let rho = 0.3;
    let sys = assemble_perturbed(&p, rho).unwrap();
    let mut y = vec![0.0; sys.dim()];
    y[0] = 1.0;
    y[1] = 1.0;
    let g = [4.0, 6.0, 4.0, 6.0];
    for sp in &sys.slack_pairs {
        let a = evaluate(&sp.a, &Assignment { space: &sys.space, values: &y }).unwrap();
        assert!(g.contains(&a));
        y[sp.slack] = a;
        y[sp.mult] = rho / a;
    }
    let r = sys.residual(&y);
    for sp in &sys.slack_pairs {
        assert!(r[sp.def_row].abs() < 1e-15);
        assert!(r[sp.comp_row].abs() < 1e-15);
    }
}

#[test]
fn rho_must_be_positive() {
    assert!(assemble_perturbed(&fixtures::t1(), 0.0).is_err());
    assert!(assemble_perturbed(&fixtures::t1(), -1.0).is_err());
}

#[test]
fn assembled_sizes_match_counters() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for t in 0..12u64 {
        let players = rng.random_range(1..=2);
        let n = rng.random_range(1..=3);
        let m_eq = rng.random_range(0..=n.min(2));
        let m_ineq = rng.random_range(0..=2);
        let levels = rng.random_range(1..=3);
        let inst = gen_instance(&cfg(t, players, n, m_eq, m_ineq, levels), t).unwrap();
        let red = assemble_reduced(&inst.problem).unwrap();
        let com = assemble_complete(&inst.problem).unwrap();
        let (rv, rf, rg) = count_reduced(n as u64, m_eq as u64, m_ineq as u64, levels as u64);
        let (cv, cf, cg) = count_complete(n as u64, m_eq as u64, m_ineq as u64, levels as u64);
        let np = players as u64;
        assert_eq!((red.dim() as u64, red.n_rows() as u64, red.n_ineq() as u64), (np * rv, np * rf, np * rg));
        assert_eq!((com.dim() as u64, com.n_rows() as u64, com.n_ineq() as u64), (np * cv, np * cf, np * cg));
        assert_eq!(problem_counts(&inst.problem, false).0, red.dim() as u64);
    }
}

#[test]
fn zero_duals_leave_objective_gradients() {
    let inst = gen_instance(&cfg(3, 2, 3, 1, 2, 3), 0).unwrap();
    let q = inst.quadratic.as_ref().unwrap();
    let sys = assemble_reduced(&inst.problem).unwrap();
    let mut y = vec![0.0; sys.dim()];
    y[..inst.z_feasible.len()].copy_from_slice(&inst.z_feasible);
    let r = sys.residual(&y);
    let z = DVector::from_vec(inst.z_feasible.clone());
    for b in sys.row_blocks.iter().filter(|b| b.kind == RowKind::Stationarity) {
        let pl = &q.players[b.player];
        let qs = (&pl.quad[b.level - 1] + pl.quad[b.level - 1].transpose()) * 0.5;
        let grad = qs * &z + &pl.lin[b.level - 1];
        let own = q.player_range(b.player);
        for (t, row) in b.rows.clone().enumerate() {
            assert!((r[row] - grad[own.start + t]).abs() < 1e-12);
        }
    }
}

#[test]
fn jacobians_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for (t, family) in [Family::QuadraticRank2, Family::NonquadraticExp, Family::NonquadraticQuarticTop].into_iter().enumerate() {
        let c = GeneratorConfig { family, levels: 3, players: 2, n: 2, ..cfg(t as u64, 2, 2, 1, 1, 3) };
        let inst = gen_instance(&c, 0).unwrap();
        for sys in [assemble_perturbed(&inst.problem, 0.1).unwrap(), assemble_complete(&inst.problem).unwrap()] {
            let y: Vec<f64> = random_point(sys.dim(), &mut rng).iter().map(|v| v * 0.5).collect();
            let dev = sys.jacobian_fd_check(&y, 1e-6);
            assert!(dev <= 1e-5, "{family:?}: deviation {dev}");
        }
    }
}

#[test]
fn linear_constraint_rows_have_constant_jacobian() {
    let inst = gen_instance(&cfg(5, 1, 3, 2, 0, 2), 0).unwrap();
    let sys = assemble_reduced(&inst.problem).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let j1 = sys.jacobian(&random_point(sys.dim(), &mut rng));
    let j2 = sys.jacobian(&random_point(sys.dim(), &mut rng));
    for b in sys.row_blocks.iter().filter(|b| b.kind == RowKind::Equality) {
        for r in b.rows.clone() {
            assert_eq!(j1.row(r), j2.row(r));
        }
    }
}

#[test]
fn single_level_systems_coincide() {
    let inst = gen_instance(&cfg(9, 2, 3, 1, 2, 1), 0).unwrap();
    let red = assemble_reduced(&inst.problem).unwrap();
    let com = assemble_complete(&inst.problem).unwrap();
    assert_eq!(red.dim(), com.dim());
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let y = random_point(red.dim(), &mut rng);
    assert_eq!(red.residual(&y), com.residual(&y));
    assert_eq!(red.inequality(&y), com.inequality(&y));
}

#[test]
fn innermost_rows_agree_between_systems() {
    let inst = gen_instance(&cfg(4, 2, 2, 1, 2, 3), 0).unwrap();
    let red = assemble_reduced(&inst.problem).unwrap();
    let com = assemble_complete(&inst.problem).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let yc = random_point(com.dim(), &mut rng);
    let mut yr = vec![0.0; red.dim()];
    for seg in &red.layout.segments {
        if seg.role == Role::Z || seg.role == Role::Lambda || seg.role == Role::Gamma {
            let src = if seg.role == Role::Z {
                com.layout.segments.iter().find(|s| s.role == Role::Z && s.player == seg.player).unwrap()
            } else {
                com.layout.find(seg.player, seg.level, seg.role, None, false).unwrap()
            };
            yr[seg.range()].copy_from_slice(&yc[src.range()]);
        }
    }
    let rr = red.residual(&yr);
    let rc = com.residual(&yc);
    for pl in 0..2 {
        let br = red.blocks_of(pl).find(|b| b.kind == RowKind::Stationarity && b.level == 3).unwrap();
        let bc = com.blocks_of(pl).find(|b| b.kind == RowKind::Stationarity && b.level == 3).unwrap();
        for (a, b) in br.rows.clone().zip(bc.rows.clone()) {
            assert_eq!(rr[a], rc[b]);
        }
    }
}

#[test]
fn lifted_complete_solution_solves_reduced_system() {
    for seed in 0..5 {
        let inst = gen_instance(&cfg(seed, 2, 3, 1, 0, 2), 0).unwrap();
        let red = assemble_reduced(&inst.problem).unwrap();
        let com = assemble_complete(&inst.problem).unwrap();
        let y = affine_solve(&com);
        let lifted = lift_duals_between(&red, &com, &y, 1e-8).unwrap();
        let res = red.residual(&lifted).iter().fold(0.0f64, |m, x| m.max(x.abs()));
        assert!(res <= 1e-8, "seed {seed}: {res}");
        assert_eq!(&lifted[..6], &y[..6]);
    }
}

#[test]
fn lift_rejects_non_solutions_and_maps_zero_to_zero() {
    let inst = gen_instance(&cfg(1, 1, 2, 1, 1, 2), 0).unwrap();
    let red = assemble_reduced(&inst.problem).unwrap();
    let com = assemble_complete(&inst.problem).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    assert!(lift_duals_between(&red, &com, &random_point(com.dim(), &mut rng), 1e-8).is_err());
    let zero = vec![0.0; com.dim()];
    let out = lift_duals_between(&red, &com, &zero, f64::INFINITY).unwrap();
    assert!(out.iter().all(|x| *x == 0.0));
}

#[test]
fn layout_json_lists_segments() {
    let sys = assemble_reduced(&fixtures::t1()).unwrap();
    let v: serde_json::Value = serde_json::from_str(&sys.layout.to_json()).unwrap();
    assert_eq!(v["dim"], 18);
    let segs = v["segments"].as_array().unwrap();
    assert_eq!(segs[0]["role"], "z");
    assert!(segs.iter().any(|s| s["role"] == "psi" && s["length"] == 2));
    let total: u64 = segs.iter().map(|s| s["length"].as_u64().unwrap()).sum();
    assert_eq!(total, 18);
    assert_eq!(sys.space.block(PRIMAL).unwrap(), 0..2);
}
