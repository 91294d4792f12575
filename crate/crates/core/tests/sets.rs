use drg_core::geometry::{Polytope, SetExpr, SupportFn};
use drg_core::model::{ClosedLoopCascade, ClosedLoopSubsystem};
use drg_core::sets::{
    self, export_suite, load_suite, load_suite_lenient, moas, moas_decentralized, mrpi_outer, MoasOptions, SetSuite,
    SetsError, SynthesisOptions,
};
use drg_core::sim::cstr_case_study;
use drg_core::verify;
use nalgebra::{dmatrix, dvector, DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn case_study() -> (ClosedLoopCascade<f64>, SetSuite<f64>) {
    let cascade = cstr_case_study::<f64>().close_loops().unwrap();
    let suite = sets::synthesize(&cascade, &SynthesisOptions::from_design(&cascade.design)).unwrap();
    (cascade, suite)
}

fn unit(d: usize, rng: &mut ChaCha8Rng) -> DVector<f64> {
    DVector::from_fn(d, |_, _| rng.random_range(-1.0..1.0)).normalize()
}

fn box_w() -> Polytope<f64> {
    Polytope::symmetric_box(&dvector![0.05, 0.5]).unwrap()
}

/// Scalar closed loop `z⁺ = φ z + γ r` with `|z| ≤ bound`.
fn scalar_loop(phi: f64, gamma: f64, bound: f64) -> ClosedLoopSubsystem<f64> {
    ClosedLoopSubsystem {
        phi: dmatrix![phi],
        gamma: dmatrix![gamma],
        phi_in: vec![],
        omega: dmatrix![1.0],
        upsilon: dmatrix![1.0],
        h: dmatrix![1.0],
        k: DMatrix::zeros(0, 1),
        xu: Polytope::symmetric_box(&dvector![bound]).unwrap(),
        w_set: Polytope::point(&dvector![0.0]),
        nx: 1,
        nu: 0,
        ny: 1,
    }
}

#[test]
fn zero_disturbance_keeps_original_constraints() {
    let mut model = cstr_case_study::<f64>();
    for s in &mut model.subsystems {
        s.w_set = Polytope::point(&DVector::zeros(2));
    }
    let cascade = model.close_loops().unwrap();
    let suite = sets::synthesize(&cascade, &SynthesisOptions::from_design(&cascade.design)).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for (cl, s) in cascade.subsystems.iter().zip(&suite.subsystems) {
        for _ in 0..20 {
            let d = unit(cl.nz(), &mut rng);
            assert!(s.we.support(&d).unwrap().abs() < 1e-12);
            assert!(s.f_inf.set.support(&d).unwrap().abs() < 1e-12);
        }
        for xu in s.xu.iter().chain([&s.xu_inf]) {
            assert!((xu.offsets() - cl.xu.offsets()).amax() < 1e-12);
        }
    }
}

#[test]
fn first_error_bound_is_the_local_disturbance() {
    let (cascade, suite) = case_study();
    let cl = &cascade.subsystems[0];
    let w = SetExpr::image(cl.omega.clone(), SetExpr::poly(box_w())).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for _ in 0..64 {
        let d = unit(cl.nz(), &mut rng);
        assert!((suite.subsystems[0].we.support(&d).unwrap() - w.support(&d).unwrap()).abs() < 1e-12);
    }
}

#[test]
fn downstream_error_bound_adds_the_inlet_image() {
    let (cascade, suite) = case_study();
    let cl = &cascade.subsystems[1];
    let phi_21 = cl.phi_from(0).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..64 {
        let d = unit(cl.nz(), &mut rng);
        let expected = suite.subsystems[0].we.support(&(phi_21.transpose() * &d)).unwrap()
            + box_w().support(&(cl.omega.transpose() * &d)).unwrap();
        assert!((suite.subsystems[1].we.support(&d).unwrap() - expected).abs() < 1e-10);
    }
}

#[test]
fn first_tightening_step_shrinks_by_one_support() {
    let (cascade, suite) = case_study();
    let cl = &cascade.subsystems[0];
    let s = &suite.subsystems[0];
    for r in 0..cl.xu.n_halfspaces() {
        let n = cl.xu.normals().row(r).transpose();
        let shrink = s.we.support(&(cl.h.transpose() * &n)).unwrap();
        assert!((s.xu[1].offsets()[r] - (cl.xu.offsets()[r] - shrink)).abs() < 1e-10);
    }
    // the temperature row starts at 5
    let row = (0..cl.xu.n_halfspaces())
        .find(|&r| (cl.xu.normals().row(r).transpose() - dvector![0.0, 1.0, 0.0]).amax() < 1e-12)
        .unwrap();
    assert_eq!(cl.xu.offsets()[row], 5.0);
    assert!(s.xu[1].offsets()[row] < 5.0);
}

#[test]
fn transient_sets_are_nested_and_approach_the_limit() {
    let (_, suite) = case_study();
    for (i, s) in suite.subsystems.iter().enumerate() {
        for k in 0..s.xu.len() - 1 {
            assert!(s.xu[k + 1].is_subset_of(&s.xu[k], 1e-9).unwrap());
        }
        assert!(s.xu_inf.is_subset_of(s.xu.last().unwrap(), 1e-7).unwrap());
        let gap = |xu: &Polytope<f64>| (xu.offsets() - s.xu_inf.offsets()).amax();
        let gaps: Vec<f64> = s.xu.iter().map(gap).collect();
        assert!(gaps.windows(2).all(|w| w[1] <= w[0] + 1e-12));
        // downstream schedules carry only the one-step inlet error, so only
        // the head of the chain closes the gap to the mRPI limit
        if i == 0 {
            assert!(gaps.last().unwrap() < &(0.02 * gaps[0]));
        }
        assert!(s.xu_inf.contains(&DVector::zeros(3), 0.0));
    }
}

#[test]
fn scalar_mrpi_is_the_geometric_series() {
    let w = SetExpr::poly(Polytope::symmetric_box(&dvector![1.0]).unwrap());
    let eps = 1e-2;
    let m = mrpi_outer(0, &dmatrix![0.5], &w, eps, &[]).unwrap();
    for d in [dvector![1.0], dvector![-1.0]] {
        let h = m.set.support(&d).unwrap();
        assert!(h >= 2.0 - 1e-12, "{h}");
        assert!(h <= 2.0 * (1.0 + eps), "{h}");
    }
}

#[test]
fn zero_disturbance_mrpi_is_the_origin() {
    let w = SetExpr::poly(Polytope::point(&dvector![0.0, 0.0]));
    let m = mrpi_outer(0, &dmatrix![0.5, 0.1; 0.0, 0.3], &w, 1e-2, &[]).unwrap();
    let h: f64 = m.set.support(&dvector![1.0, 1.0]).unwrap();
    assert!(h.abs() < 1e-12);
}

#[test]
fn scalar_moas_matches_simulated_grid() {
    let cl = scalar_loop(0.5, 0.5, 1.0);
    let opts = MoasOptions::default();
    let m = moas(0, &cl, &cl.xu, &Polytope::point(&dvector![0.0]), &opts).unwrap();
    let admissible = |z0: f64, r: f64| {
        if r.abs() > 1.0 - opts.eps {
            return false;
        }
        let mut z = z0;
        for _ in 0..200 {
            if z.abs() > 1.0 {
                return false;
            }
            z = 0.5 * z + 0.5 * r;
        }
        true
    };
    let mut checked = 0;
    let step = 0.0137;
    let mut z = -2.0;
    while z <= 2.0 {
        let mut r = -2.0;
        while r <= 2.0 {
            let xi = dvector![z, r];
            // skip points too close to the boundary for a grid to decide
            if m.o_eps.max_violation(&xi).abs() > 1e-3 {
                assert_eq!(m.o_eps.contains(&xi, 0.0), admissible(z, r), "z={z} r={r}");
                checked += 1;
            }
            r += step;
        }
        z += step;
    }
    assert!(checked > 80_000);
}

#[test]
fn loose_constraints_stop_after_the_first_rows() {
    let cl = scalar_loop(0.5, 0.5, 100.0);
    let m = moas(
        0,
        &cl,
        &cl.xu,
        &Polytope::point(&dvector![0.0]),
        &MoasOptions::default(),
    )
    .unwrap();
    assert_eq!(m.o_eps.n_halfspaces(), 4);
    assert!(m.determined_at <= 1);
}

#[test]
fn single_subsystem_has_no_interaction_set() {
    let mut model = cstr_case_study::<f64>();
    model.subsystems.truncate(1);
    model.couplings.clear();
    let cascade = model.close_loops().unwrap();
    let suite = sets::synthesize(&cascade, &SynthesisOptions::from_design(&cascade.design)).unwrap();
    let w_z = suite.subsystems[0].w_z();
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    for _ in 0..20 {
        assert!(w_z.support(&unit(3, &mut rng)).unwrap().abs() < 1e-12);
    }
    let plain = moas(
        0,
        &cascade.subsystems[0],
        &suite.subsystems[0].xu_inf,
        w_z,
        &suite.options.moas,
    )
    .unwrap();
    assert_eq!(plain.o_eps, *suite.subsystems[0].o_eps());
}

#[test]
fn interaction_set_is_the_image_of_the_upstream_projection() {
    let (cascade, suite) = case_study();
    let chain = moas_decentralized(
        &cascade,
        &suite.subsystems.iter().map(|s| s.xu_inf.clone()).collect::<Vec<_>>(),
        &suite.options.moas,
    )
    .unwrap();
    let phi_21 = cascade.subsystems[1].phi_from(0).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for _ in 0..64 {
        let d = unit(3, &mut rng);
        let expected = chain[0].o_z.support(&(phi_21.transpose() * &d)).unwrap();
        assert!((chain[1].w_z.support(&d).unwrap() - expected).abs() < 1e-9);
    }
    assert!(suite.subsystems.iter().all(|s| !s.o_eps().is_empty()));
}

#[test]
fn over_tight_constraints_name_the_failing_stage() {
    let mut model = cstr_case_study::<f64>();
    model.subsystems[1].x_set = Polytope::symmetric_box(&dvector![0.01, 0.05]).unwrap();
    let cascade = model.close_loops().unwrap();
    let err = sets::synthesize(&cascade, &SynthesisOptions::from_design(&cascade.design)).unwrap_err();
    assert_eq!(err.subsystem(), Some(2), "{err}");
    assert!(matches!(
        err,
        SetsError::EmptyTightened { .. } | SetsError::EmptySteady { .. } | SetsError::EmptyMoas { .. }
    ));
}

#[test]
fn export_round_trip_and_corruption() {
    let (cascade, suite) = case_study();
    let dir = tempfile::tempdir().unwrap();
    let manifest = export_suite(&suite, dir.path()).unwrap();
    assert_eq!(manifest.diagnostics.len(), 3);
    let files = load_suite::<f64>(dir.path()).unwrap();
    assert_eq!(files.get(2, "o_eps").unwrap(), suite.subsystems[1].o_eps());
    assert_eq!(files.get(1, "xu_inf").unwrap(), &suite.subsystems[0].xu_inf);
    let report = verify::verify(&cascade, &suite, &files);
    assert!(report.passed, "{}", report.to_json());

    // nudge one offset of subsystem 3's admissible set
    let path = dir.path().join("subsystem_3.sets");
    let text = std::fs::read_to_string(&path).unwrap();
    let mut lines: Vec<String> = text.lines().map(String::from).collect();
    // header, dim and count lines precede the first row
    let row = lines.iter().position(|l| l == "polytope o_eps").unwrap() + 3;
    let mut fields: Vec<String> = lines[row].split(' ').map(String::from).collect();
    let last = fields.len() - 1;
    fields[last] = format!("{:e}", fields[last].parse::<f64>().unwrap() * 1.5);
    lines[row] = fields.join(" ");
    let corrupted = lines.join("\n") + "\n";
    std::fs::write(&path, corrupted).unwrap();

    let err = load_suite::<f64>(dir.path()).unwrap_err();
    assert!(err.to_string().contains("o_eps"), "{err}");
    let files = load_suite_lenient::<f64>(dir.path()).unwrap();
    let report = verify::verify(&cascade, &suite, &files);
    assert!(!report.passed);
    let failed: Vec<&str> = report.failures().map(|c| c.name.as_str()).collect();
    assert!(failed.contains(&"checksum/3"), "{failed:?}");
    assert!(failed.contains(&"moas_invariance/3"), "{failed:?}");
}
