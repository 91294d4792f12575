use drg_core::geometry::Polytope;
use drg_core::model::ClosedLoopCascade;
use drg_core::numerics::Weighting;
use drg_core::rhop::{
    build_rhop, compute_terminal_weights, delta_alpha_shift, predict_trajectories, shifted_candidate, solve_qp,
    OutletInput, PreviousData, Qp, QpError, RhopContext, RhopInput, RowKind, SigmaInput, Tightening,
};
use drg_core::sets::{self, SetSuite, SynthesisOptions};
use drg_core::sim::{cstr_case_study, simulate, GovernorChoice, Scenario};
use nalgebra::{dmatrix, dvector, DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn case_study() -> (ClosedLoopCascade<f64>, SetSuite<f64>) {
    let cascade = cstr_case_study::<f64>().close_loops().unwrap();
    let suite = sets::synthesize(&cascade, &SynthesisOptions::from_design(&cascade.design)).unwrap();
    (cascade, suite)
}

/// Scalar loop `z⁺ = 0.5 z + r`, loose box constraints.
fn scalar_context(horizon: usize) -> RhopContext<f64> {
    let phi = dmatrix![0.5];
    let gamma = dmatrix![1.0];
    RhopContext {
        index: 0,
        horizon,
        weights: Weighting::terminal(&phi, &gamma, dmatrix![1.0], dmatrix![1.0]).unwrap(),
        phi,
        gamma,
        h: dmatrix![1.0],
        inlets: vec![],
        stage: vec![Polytope::symmetric_box(&dvector![10.0]).unwrap(); horizon + 1],
        o_eps: Polytope::symmetric_box(&dvector![10.0, 10.0]).unwrap(),
        outlets: vec![],
        sigma_input: SigmaInput::Increment,
    }
}

fn zeros(n: usize, len: usize) -> Vec<DVector<f64>> {
    vec![DVector::zeros(n); len]
}

/// Input for subsystem `ctx.index` with every external signal at zero.
fn zero_input(ctx: &RhopContext<f64>, with_prev: bool) -> RhopInput<f64> {
    let (nz, ny, n) = (ctx.nz(), ctx.ny(), ctx.horizon);
    let prev = with_prev.then(|| PreviousData {
        delta: zeros(ny, n),
        own_pred: zeros(nz, n + 1),
        outlets: ctx
            .outlets
            .iter()
            .map(|oc| OutletInput {
                index: oc.index,
                prev_pred: zeros(oc.phi.nrows(), n + 1),
                others: oc
                    .inlets
                    .iter()
                    .filter(|(j, _)| *j != ctx.index)
                    .map(|(j, phi)| (*j, zeros(phi.ncols(), n + 1), zeros(phi.ncols(), n + 1)))
                    .collect(),
            })
            .collect(),
    });
    RhopInput {
        z: DVector::zeros(nz),
        eps_d: DVector::zeros(nz),
        alpha_prev: DVector::zeros(ny),
        y_r: DVector::zeros(ny),
        y_r_prev: DVector::zeros(ny),
        inlet_pred: ctx.inlets.iter().map(|(j, p)| (*j, zeros(p.ncols(), n + 1))).collect(),
        inlet_sigma: ctx.inlets.iter().map(|(j, p)| (*j, zeros(p.ncols(), n + 1))).collect(),
        prev,
    }
}

#[test]
fn scalar_terminal_weights() {
    let w = compute_terminal_weights::<f64>(&dmatrix![0.5], &dmatrix![1.0], dmatrix![1.0], dmatrix![1.0]).unwrap();
    assert!((w.p[(0, 0)] - 4.0 / 3.0).abs() < 1e-12);
    assert!((w.p_alpha[(0, 0)] - 14.0 / 3.0).abs() < 1e-12);
    assert!(w.lyapunov_residual(&dmatrix![0.5]) < 1e-12);
    assert!(w.alpha_margin(&dmatrix![1.0]).unwrap() > 0.0);
}

#[test]
fn indefinite_stage_weight_is_rejected() {
    assert!(compute_terminal_weights(&dmatrix![0.5], &dmatrix![1.0], dmatrix![-1.0], dmatrix![1.0]).is_err());
}

#[test]
fn increment_of_a_shifted_sequence() {
    let prev = vec![dvector![0.3], dvector![-0.2], dvector![0.1]];
    let cur = shifted_candidate(&prev);
    let r = dvector![1.0];
    let same = delta_alpha_shift(&cur, Some(&prev), &r, &r);
    assert!(same.iter().all(|d| d.amax() == 0.0));

    let stepped = delta_alpha_shift::<f64>(&cur, Some(&prev), &dvector![1.5], &r);
    assert!(stepped.iter().all(|d| (d[0] - 0.5).abs() < 1e-15));

    // past the previous horizon the old entry counts as zero
    let cur = vec![dvector![0.0], dvector![0.0], dvector![0.7]];
    let tail = delta_alpha_shift(&cur, Some(&prev), &r, &r);
    for (got, want) in tail.iter().zip([0.2, -0.1, 0.7]) {
        assert!((got[0] - want).abs() < 1e-15);
    }

    let first = delta_alpha_shift(&cur, None, &r, &r);
    assert_eq!(first, cur);
}

#[test]
fn shifted_candidate_drops_the_head() {
    let prev = vec![dvector![1.0], dvector![2.0], dvector![3.0]];
    assert_eq!(
        shifted_candidate(&prev),
        vec![dvector![2.0], dvector![3.0], dvector![0.0]]
    );
    assert_eq!(shifted_candidate(&zeros(2, 3)), zeros(2, 3));
    assert!(shifted_candidate::<f64>(&[]).is_empty());
}

#[test]
fn impulse_response_of_the_controlled_error() {
    let (cascade, suite) = case_study();
    let n = 5;
    let ctx = RhopContext::new(0, &cascade, &suite, Tightening::Dynamic, n).unwrap();
    let input = zero_input(&ctx, false);
    let mut delta = zeros(ctx.ny(), n);
    delta[0][0] = 1.0;
    let t = predict_trajectories(&ctx, &input, &delta).unwrap();
    assert_eq!(t.eps_d.len(), n + 1);
    assert_eq!(t.eps_d[0].amax(), 0.0);
    let mut expect = ctx.gamma.column(0).into_owned();
    for l in 1..=n {
        assert!((&t.eps_d[l] - &expect).amax() < 1e-14, "l = {l}");
        expect = &ctx.phi * expect;
    }
    assert!(t.alpha.iter().all(|a| (a[0] - 1.0).abs() < 1e-15));
}

#[test]
fn zero_increments_keep_the_error_at_rest() {
    let (cascade, suite) = case_study();
    let n = 4;
    for i in 0..cascade.len() {
        let ctx = RhopContext::new(i, &cascade, &suite, Tightening::Dynamic, n).unwrap();
        let mut input = zero_input(&ctx, true);
        input.alpha_prev = DVector::from_element(ctx.ny(), -0.25);
        let t = predict_trajectories(&ctx, &input, &zeros(ctx.ny(), n)).unwrap();
        assert!(t.sigma.iter().all(|s| s.amax() == 0.0));
        assert!(t.eps_d.iter().all(|e| e.amax() == 0.0));
        assert!(t.alpha.iter().all(|a| a.iter().all(|&v| v == -0.25)));
        for (_, s) in &t.outlet_sigma {
            assert!(s.iter().all(|v| v.amax() == 0.0));
        }
    }
}

#[test]
fn trajectory_and_increment_forms_agree_on_the_shifted_sequence() {
    let (cascade, suite) = case_study();
    let n = 3;
    let mut ctx = RhopContext::new(0, &cascade, &suite, Tightening::Dynamic, n).unwrap();
    let mut input = zero_input(&ctx, true);
    input.alpha_prev = dvector![0.2];
    input.y_r = dvector![1.0];
    input.y_r_prev = dvector![0.5];
    let prev = input.prev.as_mut().unwrap();
    prev.delta = vec![dvector![0.1], dvector![-0.3], dvector![0.05]];
    let delta = shifted_candidate(&prev.delta);
    let a = predict_trajectories(&ctx, &input, &delta).unwrap();
    assert!(a.delta_alpha.iter().all(|d| (d[0] - 0.5).abs() < 1e-15));
    ctx.sigma_input = SigmaInput::Trajectory;
    let b = predict_trajectories(&ctx, &input, &delta).unwrap();
    for (x, y) in a.sigma.iter().zip(&b.sigma) {
        assert!((x - y).amax() < 1e-14);
    }
    // away from it the trajectory form accumulates the increments
    let other = vec![dvector![0.4], dvector![0.0], dvector![-0.1]];
    let t = predict_trajectories(&ctx, &input, &other).unwrap();
    ctx.sigma_input = SigmaInput::Increment;
    let i = predict_trajectories(&ctx, &input, &other).unwrap();
    let mut acc = 0.0;
    for l in 0..n {
        acc += i.delta_alpha[l][0] - 0.5;
        assert!((t.delta_alpha[l][0] - (acc + 0.5)).abs() < 1e-14);
    }
}

#[test]
fn horizon_one_has_only_terminal_rows() {
    let (cascade, suite) = case_study();
    let ctx = RhopContext::new(0, &cascade, &suite, Tightening::Dynamic, 1).unwrap();
    let rhop = build_rhop(&ctx, &zero_input(&ctx, false)).unwrap();
    assert!(rhop.row_kinds.iter().all(|k| *k == RowKind::Terminal));
    let sol = rhop.solve().unwrap();
    assert_eq!(sol.delta.len(), 1);
    assert_eq!(sol.trajectories.alpha.len(), 1);
    assert_eq!(sol.trajectories.z_c.len(), 2);
    assert!(sol.delta[0].amax() < 1e-12);
}

#[test]
fn zero_horizon_is_rejected() {
    let (cascade, suite) = case_study();
    assert!(RhopContext::new(0, &cascade, &suite, Tightening::Dynamic, 0).is_err());
}

#[test]
fn steady_state_is_a_fixed_point() {
    let (cascade, suite) = case_study();
    let n = 3;
    let ctx = RhopContext::new(0, &cascade, &suite, Tightening::Dynamic, n).unwrap();
    let mut input = zero_input(&ctx, false);
    input.y_r = dvector![0.5];
    input.y_r_prev = dvector![0.5];
    input.z = cascade.subsystems[0].steady_gain().unwrap() * &input.y_r;
    let sol = build_rhop(&ctx, &input).unwrap().solve().unwrap();
    assert!(sol.delta.iter().all(|d| d.amax() < 1e-9), "{:?}", sol.delta);
    assert!(sol.cost.abs() < 1e-12);
    // the predicted state stays put
    for z in &sol.trajectories.z_c {
        assert!((z - &input.z).amax() < 1e-9);
    }
}

#[test]
fn scalar_problem_moves_toward_the_origin() {
    let ctx = scalar_context(3);
    let mut input = zero_input(&ctx, false);
    input.alpha_prev = dvector![1.0];
    let sol = build_rhop(&ctx, &input).unwrap().solve().unwrap();
    assert!(sol.delta[0][0] < 0.0);
    assert!(sol.kkt.max() < 1e-10);
    let unconstrained = build_rhop(&ctx, &input).unwrap();
    assert!(sol.cost <= unconstrained.cost(&zeros(1, 3)) + 1e-12);
}

#[test]
fn mid_run_solves_respect_their_rows() {
    let (cascade, suite) = case_study();
    let scenario = Scenario::nominal(vec![vec![3.0], vec![1.0], vec![-1.0]], 40, GovernorChoice::Dct);
    let out = simulate(&cascade, &suite, &scenario, None).unwrap();
    let mid: Vec<_> = out
        .events
        .iter()
        .filter(|e| e.subsystem == 2 && (10..=30).contains(&e.k))
        .collect();
    assert_eq!(mid.len(), 21);
    for e in mid {
        assert!(e.feasible && !e.fallback, "step {}", e.k);
        assert!(e.margin >= -1e-7, "step {}: margin {}", e.k, e.margin);
        assert!(e.kkt <= 1e-7, "step {}: kkt {}", e.k, e.kkt);
    }
}

fn random_qp(rng: &mut ChaCha8Rng) -> Qp<f64> {
    let l = DMatrix::from_fn(3, 3, |_, _| rng.random_range(-1.0..1.0));
    let h = &l * l.transpose() + DMatrix::identity(3, 3) * 0.1;
    let f = DVector::from_fn(3, |_, _| rng.random_range(-5.0..5.0));
    let extra = 4;
    let mut a = DMatrix::zeros(6 + extra, 3);
    let mut b = DVector::zeros(6 + extra);
    for d in 0..3 {
        a[(2 * d, d)] = 1.0;
        a[(2 * d + 1, d)] = -1.0;
        b[2 * d] = 1.0;
        b[2 * d + 1] = 1.0;
    }
    for r in 6..6 + extra {
        for c in 0..3 {
            a[(r, c)] = rng.random_range(-1.0..1.0);
        }
        b[r] = rng.random_range(0.05..1.0);
    }
    Qp { h, f, a, b }
}

#[test]
fn random_box_qps_beat_sampled_feasible_points() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for _ in 0..50 {
        let qp = random_qp(&mut rng);
        let sol = solve_qp(&qp).unwrap();
        assert!(sol.kkt.max() < 1e-9, "{:?}", sol.kkt);
        assert!(qp.max_violation(&sol.x) <= 1e-9);
        let best = qp.objective(&sol.x);
        let mut checked = 0;
        for _ in 0..400 {
            let x = DVector::from_fn(3, |_, _| rng.random_range(-1.0..1.0));
            if qp.max_violation(&x) <= 0.0 {
                checked += 1;
                assert!(qp.objective(&x) >= best - 1e-10);
            }
        }
        assert!(checked > 0);
    }
}

#[test]
fn contradictory_rows_are_reported_infeasible() {
    let qp = Qp {
        h: DMatrix::identity(3, 3),
        f: DVector::zeros(3),
        a: dmatrix![1.0, 0.0, 0.0; -1.0, 0.0, 0.0],
        b: dvector![-1.0, -1.0],
    };
    match solve_qp(&qp) {
        Err(QpError::Infeasible { residual }) => assert!(residual > 1.0),
        other => panic!("{other:?}"),
    }
}
