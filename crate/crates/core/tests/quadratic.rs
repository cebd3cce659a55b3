use goop_core::harness::{gen_instance, gen_strict_complementary, Family, GeneratorConfig};
use goop_core::kkt::{assemble_reduced, count_complete, count_reduced, RowKind};
use goop_core::linalg::null_space_basis;
use goop_core::model::{QuadraticGoop, QuadraticPlayer};
use goop_core::pdip::{solve, SolverOptions, Status};
use goop_core::quadratic::*;
use goop_core::Error;
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn eq_only(seed: u64, players: usize, n: usize, m_eq: usize, levels: usize) -> QuadraticGoop {
    let cfg = GeneratorConfig {
        seed,
        players,
        n,
        m_eq,
        m_ineq: 0,
        levels,
        family: Family::QuadraticRank2,
        perturbation: 0.5,
    };
    gen_instance(&cfg, 0).unwrap().quadratic.unwrap()
}

fn dist(a: &DVector<f64>, b: &DVector<f64>) -> f64 {
    (a - b).norm()
}

#[test]
fn dimensions_match_counters() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for t in 0..20 {
        let players = rng.random_range(1..=3);
        let n = rng.random_range(1..=4);
        let m_eq = rng.random_range(0..=n.min(2));
        let levels = rng.random_range(1..=4);
        let rec = build_recursion(&eq_only(t, players, n, m_eq, levels)).unwrap();
        let (rv, rf, _) = count_reduced(n as u64, m_eq as u64, 0, levels as u64);
        let (cv, cf, _) = count_complete(n as u64, m_eq as u64, 0, levels as u64);
        let np = players as u64;
        let top = rec.level(1);
        assert_eq!(top.m_compact().shape(), ((np * rf) as usize, (np * rv) as usize));
        assert_eq!(top.m_bar.shape(), ((np * cf) as usize, (np * cv) as usize));
    }
}

#[test]
fn coupling_block_is_own_part_of_transposed_complete_matrix() {
    let rec = build_recursion(&eq_only(2, 2, 2, 1, 3)).unwrap();
    for k in 2..=3 {
        let lv = rec.level(k);
        for (a, ra) in lv.rows.iter().enumerate() {
            for (b, cb) in lv.cols.iter().enumerate() {
                let same = rec.owner_of_row(ra) == rec.owner_of_col(cb);
                let want = if same { lv.m_bar[(a, b)] } else { 0.0 };
                assert_eq!(lv.r_bar[(b, a)], want, "level {k} entry ({b},{a})");
            }
        }
    }
}

#[test]
fn compact_rows_match_reduced_kkt_residual() {
    let q = eq_only(3, 2, 3, 1, 3);
    let rec = build_recursion(&q).unwrap();
    let sys = assemble_reduced(&q.lift().unwrap()).unwrap();
    let top = rec.level(1);
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let v = DVector::from_fn(top.reduced_cols().len(), |_, _| rng.random_range(-1.0..1.0));
    let lhs = top.m_compact() * &v - top.p_compact();
    let y = rec.to_reduced_kkt(&sys, &v).unwrap();
    let r = sys.residual(&y);
    let offsets = rec.game.offsets();
    for (t, &row) in top.reduced_rows().iter().enumerate() {
        let kkt_row = match &top.rows[row] {
            RowTag::Stat { level, wrt: ColTag::Z(j) } => {
                let pl = rec.owner_of_var(*j);
                let b = sys.blocks_of(pl).find(|b| b.kind == RowKind::Stationarity && b.level == *level).unwrap();
                b.rows.start + j - offsets[pl]
            }
            RowTag::Eq(e) => {
                let mut acc = 0;
                let pl = q.players.iter().position(|p| {
                    acc += p.m_eq();
                    *e < acc
                });
                let pl = pl.unwrap();
                let before: usize = q.players[..pl].iter().map(|p| p.m_eq()).sum();
                let b = sys.blocks_of(pl).find(|b| b.kind == RowKind::Equality).unwrap();
                b.rows.start + e - before
            }
            other => panic!("unexpected compact row {other:?}"),
        };
        assert!((lhs[t] - r[kkt_row]).abs() < 1e-12, "row {t}: {} vs {}", lhs[t], r[kkt_row]);
    }
}

#[test]
fn reduced_and_complete_primals_agree() {
    let mut worst: f64 = 0.0;
    for t in 0..30u64 {
        let levels = 2 + (t % 3) as usize;
        let rec = build_recursion(&eq_only(100 + t, 2, 3, 1, levels)).unwrap();
        let a = solve_linear(&rec, SystemChoice::Reduced).unwrap();
        let b = solve_linear(&rec, SystemChoice::Complete).unwrap();
        worst = worst.max(dist(&a.z, &b.z) / (1.0 + b.z.norm()));
        let (mr, mc) = (primal_membership(&rec, SystemChoice::Reduced, &b.z).unwrap(), primal_membership(&rec, SystemChoice::Complete, &a.z).unwrap());
        assert!(mr < 1e-6 && mc < 1e-6, "{t}: {mr:e} {mc:e}");
    }
    assert!(worst <= 1e-6, "{worst}");
}

#[test]
fn direct_reduced_solution_solves_kkt_system() {
    let q = eq_only(5, 2, 3, 1, 3);
    let rec = build_recursion(&q).unwrap();
    let sol = solve_linear(&rec, SystemChoice::Reduced).unwrap();
    let sys = assemble_reduced(&q.lift().unwrap()).unwrap();
    let y = rec.to_reduced_kkt(&sys, &sol.v).unwrap();
    assert!(sys.residual(&y).iter().all(|x| x.abs() < 1e-9));
}

#[test]
fn zero_objectives_give_min_norm_feasible_point() {
    let mut q = eq_only(6, 1, 3, 1, 2);
    for pl in &mut q.players {
        pl.quad.iter_mut().for_each(|m| m.fill(0.0));
        pl.lin.iter_mut().for_each(|v| v.fill(0.0));
    }
    let rec = build_recursion(&q).unwrap();
    let a = solve_linear(&rec, SystemChoice::Reduced).unwrap();
    let b = solve_linear(&rec, SystemChoice::Complete).unwrap();
    assert!(dist(&a.z, &b.z) < 1e-9);
    // minimum-norm solution of H z = h
    let h = &q.players[0].eq_mat;
    let want = h.transpose() * (h * h.transpose()).try_inverse().unwrap() * &q.players[0].eq_rhs;
    assert!(dist(&a.z, &want) < 1e-9);
}

#[test]
fn inconsistent_system_is_reported() {
    let q = QuadraticGoop {
        players: vec![QuadraticPlayer {
            n: 1,
            quad: vec![DMatrix::zeros(1, 1)],
            lin: vec![DVector::from_vec(vec![1.0])],
            eq_mat: DMatrix::zeros(0, 1),
            eq_rhs: DVector::zeros(0),
            ineq_mat: DMatrix::zeros(0, 1),
            ineq_rhs: DVector::zeros(0),
        }],
    };
    let rec = build_recursion(&q).unwrap();
    assert!(matches!(solve_linear(&rec, SystemChoice::Reduced), Err(Error::NoKktPoint(_))));
}

#[test]
fn inequalities_need_reduction_first() {
    let cfg = GeneratorConfig::default();
    let q = gen_instance(&cfg, 0).unwrap().quadratic.unwrap();
    assert!(matches!(build_recursion(&q), Err(Error::Precondition(_))));
}

#[test]
fn inclusions_hold_and_negative_control_fails() {
    for t in 0..10u64 {
        let rec = build_recursion(&eq_only(200 + t, 2, 4, 1, 2 + (t % 3) as usize)).unwrap();
        let rep = verify_col_inclusions(&rec).unwrap();
        assert!(rep.holds(1e-8), "{:?}", rep);
    }
    let rec = build_recursion(&eq_only(7, 1, 6, 1, 2)).unwrap();
    let r_bar = &rec.level(2).r_bar;
    let left_null = null_space_basis(&r_bar.transpose(), None).unwrap();
    assert!(left_null.ncols() > 0);
    let mut corrupted = rec.level(2).r.clone().insert_column(0, 0.0);
    corrupted.set_column(0, &left_null.column(0));
    assert!(goop_core::linalg::col_space_residual(r_bar, &corrupted).unwrap() > 0.1);
}

fn box_game() -> QuadraticGoop {
    // one level, J = ½‖z − (3, 1)‖², z₁ ≤ 1, z₂ ≥ −5
    QuadraticGoop {
        players: vec![QuadraticPlayer {
            n: 2,
            quad: vec![DMatrix::identity(2, 2)],
            lin: vec![DVector::from_vec(vec![-3.0, -1.0])],
            eq_mat: DMatrix::zeros(0, 2),
            eq_rhs: DVector::zeros(0),
            ineq_mat: DMatrix::from_row_slice(2, 2, &[-1.0, 0.0, 0.0, 1.0]),
            ineq_rhs: DVector::from_vec(vec![-1.0, -5.0]),
        }],
    }
}

#[test]
fn active_set_examples() {
    let red = active_set_reduce(&box_game(), &[1.0, 1.0], DEFAULT_ACT_TOL).unwrap();
    assert_eq!(red.active, vec![vec![0]]);
    assert!(red.regular);
    assert_eq!(red.problem.players[0].m_eq(), 1);
    assert_eq!(red.problem.players[0].m_ineq(), 0);

    let slack = active_set_reduce(&box_game(), &[0.0, 0.0], DEFAULT_ACT_TOL).unwrap();
    assert_eq!(slack.active, vec![Vec::<usize>::new()]);
    assert_eq!(slack.problem.players[0].m_eq(), 0);

    assert!(matches!(active_set_reduce(&box_game(), &[2.0, 0.0], DEFAULT_ACT_TOL), Err(Error::Precondition(_))));
}

#[test]
fn box_game_multiplier_reconstruction() {
    let game = box_game();
    let red = active_set_reduce(&game, &[1.0, 1.0], DEFAULT_ACT_TOL).unwrap();
    let rec = build_recursion(&red.problem).unwrap();
    let sol = solve_linear(&rec, SystemChoice::Reduced).unwrap();
    assert!(dist(&sol.z, &DVector::from_vec(vec![1.0, 1.0])) < 1e-12);
    let eq = assemble_reduced(&red.problem.lift().unwrap()).unwrap();
    let ineq = assemble_reduced(&game.lift().unwrap()).unwrap();
    let y_eq = rec.to_reduced_kkt(&eq, &sol.v).unwrap();
    let y = reconstruct_inequality_multipliers(&ineq, &eq, &y_eq, &red.active, DEFAULT_STRICT_TOL).unwrap();
    assert!(ineq.residual(&y).iter().all(|x| x.abs() < 1e-12));
    // the active row's multiplier is the pull 3 − 1 = 2
    assert!(ineq.inequality(&y).iter().all(|g| *g >= 0.0));
    assert!(ineq.inequality(&y).iter().any(|g| (g - 2.0).abs() < 1e-12));
}

/// Two levels. The inner cost pushes against `z ≤ 1` with multiplier 4;
/// the outer cost pulls the other way, so its minimum-norm multiplier is
/// negative and has to be carried by φ toward the inner level.
#[test]
fn negative_outer_multiplier_moves_to_phi() {
    let game = QuadraticGoop {
        players: vec![QuadraticPlayer {
            n: 1,
            quad: vec![DMatrix::identity(1, 1), DMatrix::identity(1, 1)],
            lin: vec![DVector::from_vec(vec![1.0]), DVector::from_vec(vec![-5.0])],
            eq_mat: DMatrix::zeros(0, 1),
            eq_rhs: DVector::zeros(0),
            ineq_mat: DMatrix::from_row_slice(1, 1, &[-1.0]),
            ineq_rhs: DVector::from_vec(vec![-1.0]),
        }],
    };
    let red = active_set_reduce(&game, &[1.0], DEFAULT_ACT_TOL).unwrap();
    let rec = build_recursion(&red.problem).unwrap();
    let sol = solve_linear(&rec, SystemChoice::Reduced).unwrap();
    let eq = assemble_reduced(&red.problem.lift().unwrap()).unwrap();
    let ineq = assemble_reduced(&game.lift().unwrap()).unwrap();
    let y_eq = rec.to_reduced_kkt(&eq, &sol.v).unwrap();
    let y = reconstruct_inequality_multipliers(&ineq, &eq, &y_eq, &red.active, DEFAULT_STRICT_TOL).unwrap();
    use goop_core::kkt::Role;
    let seg = |lvl, role, target| ineq.layout.find(0, lvl, role, target, false).unwrap().range();
    let outer = y_eq[eq.layout.find(0, 1, Role::Lambda, None, false).unwrap().range()][0];
    assert!(outer < 0.0);
    assert!((y[seg(2, Role::Gamma, None)][0] - 4.0).abs() < 1e-9);
    assert_eq!(y[seg(1, Role::Gamma, None)][0], 0.0);
    assert!((y[seg(1, Role::Phi, Some(2))][0] - outer / 4.0).abs() < 1e-12);
    assert!(ineq.residual(&y).iter().all(|x| x.abs() < 1e-9));
}

#[test]
fn degenerate_multiplier_is_rejected() {
    // inner optimum sits exactly on the bound: multiplier 0
    let game = QuadraticGoop {
        players: vec![QuadraticPlayer {
            n: 1,
            quad: vec![DMatrix::identity(1, 1)],
            lin: vec![DVector::from_vec(vec![-1.0])],
            eq_mat: DMatrix::zeros(0, 1),
            eq_rhs: DVector::zeros(0),
            ineq_mat: DMatrix::from_row_slice(1, 1, &[-1.0]),
            ineq_rhs: DVector::from_vec(vec![-1.0]),
        }],
    };
    let red = active_set_reduce(&game, &[1.0], DEFAULT_ACT_TOL).unwrap();
    let rec = build_recursion(&red.problem).unwrap();
    let sol = solve_linear(&rec, SystemChoice::Reduced).unwrap();
    let eq = assemble_reduced(&red.problem.lift().unwrap()).unwrap();
    let ineq = assemble_reduced(&game.lift().unwrap()).unwrap();
    let y_eq = rec.to_reduced_kkt(&eq, &sol.v).unwrap();
    let out = reconstruct_inequality_multipliers(&ineq, &eq, &y_eq, &red.active, DEFAULT_STRICT_TOL);
    assert!(matches!(out, Err(Error::Degenerate(_))));
}

#[test]
fn strict_instances_round_trip() {
    let cfg = GeneratorConfig { seed: 9, players: 2, n: 4, m_eq: 1, m_ineq: 2, levels: 3, ..Default::default() };
    let opts = SolverOptions { eps: 1e-10, ..Default::default() };
    for i in 0..5 {
        let si = gen_strict_complementary(&cfg, i).unwrap();
        assert!(si.min_multiplier >= goop_core::harness::STRICT_MARGIN);
        let rep = solve(&si.instance.problem, &si.instance.z0, &opts).unwrap();
        assert_eq!(rep.status, Status::Converged);
        let red = active_set_reduce(&si.game, rep.z(), DEFAULT_ACT_TOL).unwrap();
        assert_eq!(red.active, si.active);
        let rec = build_recursion(&red.problem).unwrap();
        let com = solve_linear(&rec, SystemChoice::Complete).unwrap();
        assert!(dist(&com.z, &DVector::from_column_slice(rep.z())) <= 1e-5);
        let sol = solve_linear(&rec, SystemChoice::Reduced).unwrap();
        let eq = assemble_reduced(&red.problem.lift().unwrap()).unwrap();
        let ineq = assemble_reduced(&si.instance.problem).unwrap();
        let y_eq = rec.to_reduced_kkt(&eq, &sol.v).unwrap();
        let y = reconstruct_inequality_multipliers(&ineq, &eq, &y_eq, &red.active, DEFAULT_STRICT_TOL).unwrap();
        assert!(ineq.residual(&y).iter().all(|x| x.abs() <= 1e-8));
        assert!(ineq.inequality(&y).iter().all(|g| *g >= -1e-12));
    }
}

#[test]
fn matrix_dump_has_one_line_per_row() {
    let rec = build_recursion(&eq_only(8, 1, 2, 1, 2)).unwrap();
    let mut buf = Vec::new();
    write_matrix_csv(&rec.level(1).m_bar, &mut buf).unwrap();
    let text = String::from_utf8(buf).unwrap();
    assert_eq!(text.lines().count(), 6);
    assert!(text.lines().all(|l| l.split(',').count() == 6));
    let dir = std::env::temp_dir().join(format!("goop-dump-{}", std::process::id()));
    write_recursion_csv(&rec, &dir).unwrap();
    assert!(dir.join("Mbar_1.csv").exists() && dir.join("M_2.csv").exists());
    std::fs::remove_dir_all(dir).unwrap();
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn recursion_invariants(seed in 0u64..10_000, players in 1usize..3, n in 1usize..4, levels in 1usize..4) {
        let m_eq = (seed % 2) as usize;
        let rec = build_recursion(&eq_only(seed, players, n, m_eq.min(n), levels)).unwrap();
        let nt = rec.n;
        for lv in &rec.levels {
            prop_assert_eq!(&lv.r_bar, &lv.r_bar.transpose());
            prop_assert_eq!(lv.m_bar.columns(0, nt), lv.m.columns(0, nt));
            prop_assert_eq!(lv.r.rows(0, nt), lv.r_bar.rows(0, nt));
            prop_assert!(lv.r.rows(nt, lv.r.nrows() - nt).iter().all(|x| *x == 0.0));
        }
        let a = solve_linear(&rec, SystemChoice::Reduced).unwrap();
        let b = solve_linear(&rec, SystemChoice::Complete).unwrap();
        prop_assert!(dist(&a.z, &b.z) <= 1e-6 * (1.0 + b.z.norm()));
    }
}
