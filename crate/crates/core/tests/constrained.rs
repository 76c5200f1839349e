//! Trajectory-level checks of the constrained formulations on the pendulum
//! and the five-bar mechanism.

use approx::assert_relative_eq;
use hybrid_sens_core::formulations::{dae_index1_solve, Formulation, PenaltyConfig};
use hybrid_sens_core::integrator::{propagate_hybrid, IntegratorConfig};
use hybrid_sens_core::model::{unpack_canonical, Model, Regime, ValidationOptions};
use hybrid_sens_core::models::{FiveBar, FiveBarConfig, FiveBarCost, Pendulum};
use hybrid_sens_core::oracle;
use hybrid_sens_core::partition;
use hybrid_sens_core::tlm;
use nalgebra::{DMatrix, DVector};
use rand::prelude::*;

fn cfg(dt: f64) -> IntegratorConfig {
    IntegratorConfig {
        rtol: 1e-10,
        atol: 1e-12,
        dense_sample_dt: dt,
        ..Default::default()
    }
}

fn penalty() -> Formulation {
    Formulation::Penalty(PenaltyConfig::default())
}

#[test]
fn five_bar_penalty_run_keeps_constraint_residuals_small() {
    let model = FiveBar::new(FiveBarConfig::default()).unwrap();
    let rho = model.nominal_parameters();
    let arch = propagate_hybrid(&model, &penalty(), &cfg(0.01), &rho, 0.0, 5.0).unwrap();

    assert!(
        !arch.events.is_empty(),
        "the mechanism must hit the ground within 5 s"
    );
    assert_eq!(arch.segments.len(), arch.events.len() + 1);

    let mut worst_pos: f64 = 0.0;
    let mut worst_vel: f64 = 0.0;
    for (t, regime, y) in arch.all_samples() {
        let (state, _) = unpack_canonical(y, arch.layout, t, regime);
        let ce = model.constraints(t, &state.q, &rho, regime);
        worst_pos = worst_pos.max(ce.phi.amax());
        worst_vel = worst_vel.max((&ce.phi_q * &state.v + &ce.phi_t).amax());
    }
    assert!(worst_pos <= 1e-6, "position residual {worst_pos:.3e}");
    assert!(worst_vel <= 1e-5, "velocity residual {worst_vel:.3e}");
}

#[test]
fn five_bar_energy_is_conserved_between_events() {
    let model = FiveBar::new(FiveBarConfig::default()).unwrap();
    let rho = model.nominal_parameters();
    let arch =
        propagate_hybrid(&model, &Formulation::DaeIndex1, &cfg(0.01), &rho, 0.0, 3.0).unwrap();
    assert!(!arch.events.is_empty());
    for seg in &arch.segments {
        let first = unpack_canonical(&seg.samples[0], arch.layout, seg.times[0], seg.regime).0;
        let e0 = model.total_energy(&first.q, &first.v, &rho);
        let scale = e0.abs().max(1.0);
        for (i, y) in seg.samples.iter().enumerate() {
            let s = unpack_canonical(y, arch.layout, seg.times[i], seg.regime).0;
            let e = model.total_energy(&s.q, &s.v, &rho);
            assert!(
                (e - e0).abs() <= 1e-6 * scale,
                "energy drift {:.3e} within a segment",
                (e - e0).abs() / scale
            );
        }
    }
    // the elastic bounce preserves the kinetic energy of the jump coordinate
    for ev in &arch.events {
        assert_relative_eq!(
            ev.state_post.v[3].abs(),
            ev.state_pre.v[3].abs(),
            max_relative = 1e-10
        );
    }
}

#[test]
fn five_bar_fd_sensitivities_agree_outside_event_windows() {
    let model = FiveBar::new(FiveBarConfig {
        cost: FiveBarCost::VerticalVelocityP2,
        ..Default::default()
    })
    .unwrap();
    let rho = model.nominal_parameters();
    let run_cfg = cfg(0.01);
    // span covering the first bounce
    let t_f = 2.0;
    let arch = propagate_hybrid(&model, &penalty(), &run_cfg, &rho, 0.0, t_f).unwrap();
    assert!(!arch.events.is_empty());

    for param in 0..2 {
        let eps = 1e-5 * (1.0 + rho[param].abs());
        let fd = oracle::central_fd_sensitivity(
            &model, &penalty(), &run_cfg, &rho, eps, param, 0.0, t_f,
        )
        .unwrap();
        let windows = oracle::event_exclusion_windows(&arch, eps, param, 5.0);
        let report = oracle::compare_report(&arch, &fd, &windows, 1e-3);
        assert!(report.pass(), "parameter {param}: {report}");
    }
}

#[test]
fn five_bar_complex_step_matches_analytic_before_first_event() {
    let model = FiveBar::new(FiveBarConfig::default()).unwrap();
    let rho = model.nominal_parameters();
    // the mechanism falls from rest and first hits the ground after ~0.4 s
    let t_f = 0.25;
    // index-1 path at tight tolerances reaches the 1e-10 agreement level;
    // the stiff penalty assembly (alpha = 1e7) carries a ~1e-9 cancellation
    // floor in f64, so it is held to the smooth-span invariant level instead
    for (formulation, rtol, threshold) in [
        (Formulation::DaeIndex1, 1e-12, 1e-10),
        (penalty(), 1e-10, 1e-8),
    ] {
        let tight = IntegratorConfig {
            rtol,
            atol: rtol * 1e-2,
            dense_sample_dt: 0.01,
            ..Default::default()
        };
        let arch = propagate_hybrid(&model, &formulation, &tight, &rho, 0.0, t_f).unwrap();
        assert!(arch.events.is_empty(), "span must stay smooth");
        for param in 0..2 {
            let cs = oracle::complex_step_sensitivity(
                &model,
                &formulation,
                &tight,
                &rho,
                1e-20,
                param,
                0.0,
                t_f,
            )
            .unwrap();
            let report = oracle::compare_report(&arch, &cs, &[], threshold);
            assert!(
                report.pass(),
                "{} param {param}: {report}",
                formulation.name()
            );
        }
    }
}

#[test]
fn complex_step_is_insensitive_to_the_step_size() {
    let model = FiveBar::new(FiveBarConfig::default()).unwrap();
    let rho = model.nominal_parameters();
    let tight = IntegratorConfig {
        rtol: 1e-12,
        atol: 1e-14,
        dense_sample_dt: 0.05,
        ..Default::default()
    };
    let a = oracle::complex_step_sensitivity(
        &model, &Formulation::DaeIndex1, &tight, &rho, 1e-12, 0, 0.0, 0.2,
    )
    .unwrap();
    let b = oracle::complex_step_sensitivity(
        &model, &Formulation::DaeIndex1, &tight, &rho, 1e-20, 0, 0.0, 0.2,
    )
    .unwrap();
    for k in 0..a.times.len() {
        let scale = 1.0 + a.dq[k].amax() + a.dv[k].amax();
        assert!((&a.dq[k] - &b.dq[k]).amax() <= 1e-12 * scale);
        assert!((&a.dv[k] - &b.dv[k]).amax() <= 1e-12 * scale);
    }
}

#[test]
fn dae_and_penalty_agree_on_the_first_smooth_segment() {
    let model = FiveBar::new(FiveBarConfig::default()).unwrap();
    let rho = model.nominal_parameters();
    let run_cfg = cfg(0.01);
    let t_f = 0.25; // inside the first smooth segment
    let a = propagate_hybrid(&model, &Formulation::DaeIndex1, &run_cfg, &rho, 0.0, t_f).unwrap();
    let b = propagate_hybrid(&model, &penalty(), &run_cfg, &rho, 0.0, t_f).unwrap();
    assert!(a.events.is_empty() && b.events.is_empty());

    let sa = a.grid_samples();
    let sb = b.grid_samples();
    assert_eq!(sa.len(), sb.len());
    let layout = a.layout;
    let mut worst: f64 = 0.0;
    for ((ta, _, ya), (tb, _, yb)) in sa.iter().zip(sb.iter()) {
        assert_eq!(ta, tb);
        let (st_a, se_a) = unpack_canonical(ya, layout, *ta, Regime(0));
        let (st_b, se_b) = unpack_canonical(yb, layout, *tb, Regime(0));
        let q_scale = 1.0 + st_a.q.amax();
        let v_scale = 1.0 + st_a.v.amax();
        let qs_scale = 1.0 + se_a.dq_drho.amax();
        let vs_scale = 1.0 + se_a.dv_drho.amax();
        worst = worst
            .max((&st_a.q - &st_b.q).amax() / q_scale)
            .max((&st_a.v - &st_b.v).amax() / v_scale)
            .max((&se_a.dq_drho - &se_b.dq_drho).amax() / qs_scale)
            .max((&se_a.dv_drho - &se_b.dv_drho).amax() / vs_scale);
    }
    assert!(
        worst <= 1e-3,
        "index-1 and penalty paths disagree by {worst:.3e}"
    );
}

#[test]
fn pendulum_multiplier_sens_matches_fd_of_multiplier_trajectory() {
    let p = Pendulum::new(2.0, 9.81, 1.3, 0.9, 0.0);
    let rho = p.nominal_parameters();
    let run_cfg = cfg(0.02);
    let t_f = 1.5;
    let arch = propagate_hybrid(&p, &Formulation::DaeIndex1, &run_cfg, &rho, 0.0, t_f).unwrap();

    let eps = 1e-6 * (1.0 + rho[0]);
    let mut rho_p = rho.clone();
    rho_p[0] += eps;
    let mut rho_m = rho.clone();
    rho_m[0] -= eps;
    let plus = propagate_hybrid(&p, &Formulation::DaeIndex1, &run_cfg, &rho_p, 0.0, t_f).unwrap();
    let minus = propagate_hybrid(&p, &Formulation::DaeIndex1, &run_cfg, &rho_m, 0.0, t_f).unwrap();

    let lambda_of = |arch: &hybrid_sens_core::integrator::TrajectoryArchive,
                     rho: &DVector<f64>| {
        arch.grid_samples()
            .into_iter()
            .map(|(t, regime, y)| {
                let (state, _) = unpack_canonical(y, arch.layout, t, regime);
                dae_index1_solve(&p, t, &state.q, &state.v, rho, regime)
                    .unwrap()
                    .lambda[0]
            })
            .collect::<Vec<_>>()
    };
    let lam_p = lambda_of(&plus, &rho_p);
    let lam_m = lambda_of(&minus, &rho_m);

    let mut scale: f64 = 1.0;
    let mut worst: f64 = 0.0;
    for (k, (t, regime, y)) in arch.grid_samples().into_iter().enumerate() {
        let (state, sens) = unpack_canonical(y, arch.layout, t, regime);
        let rhs = tlm::tlm_rhs_dae_index1(&p, t, &state.q, &state.v, &rho, regime, &sens).unwrap();
        let analytic = rhs.multiplier_sens.unwrap()[(0, 0)];
        let fd = (lam_p[k] - lam_m[k]) / (2.0 * eps);
        scale = scale.max(analytic.abs());
        worst = worst.max((analytic - fd).abs());
    }
    assert!(
        worst <= 1e-5 * scale,
        "multiplier sensitivity disagrees with trajectory FD by {worst:.3e} (scale {scale:.3e})"
    );
}

#[test]
fn pendulum_estimated_multiplier_sens_matches_fd_under_penalty() {
    let p = Pendulum::new(2.0, 9.81, 1.3, 0.9, 0.0);
    let rho = p.nominal_parameters();
    let run_cfg = cfg(0.02);
    let t_f = 1.2;
    let formulation = penalty();
    let arch = propagate_hybrid(&p, &formulation, &run_cfg, &rho, 0.0, t_f).unwrap();

    // large enough that the FD quotient is not dominated by the integration
    // error amplified by 1/(2 eps)
    let eps = 1e-4 * (1.0 + rho[0]);
    let mut rho_p = rho.clone();
    rho_p[0] += eps;
    let mut rho_m = rho.clone();
    rho_m[0] -= eps;
    let plus = propagate_hybrid(&p, &formulation, &run_cfg, &rho_p, 0.0, t_f).unwrap();
    let minus = propagate_hybrid(&p, &formulation, &run_cfg, &rho_m, 0.0, t_f).unwrap();

    let pcfg = PenaltyConfig::default();
    let lambda_of = |arch: &hybrid_sens_core::integrator::TrajectoryArchive,
                     rho: &DVector<f64>| {
        arch.grid_samples()
            .into_iter()
            .map(|(t, regime, y)| {
                let (state, _) = unpack_canonical(y, arch.layout, t, regime);
                let vdot = hybrid_sens_core::formulations::penalty_accel(
                    &p, &pcfg, t, &state.q, &state.v, rho, regime,
                )
                .unwrap();
                hybrid_sens_core::formulations::estimate_multipliers(
                    &p, &pcfg, t, &state.q, &state.v, &vdot, rho, regime,
                )[0]
            })
            .collect::<Vec<_>>()
    };
    let lam_p = lambda_of(&plus, &rho_p);
    let lam_m = lambda_of(&minus, &rho_m);

    let mut scale: f64 = 1.0;
    let mut worst: f64 = 0.0;
    for (k, (t, regime, y)) in arch.grid_samples().into_iter().enumerate() {
        let (state, sens) = unpack_canonical(y, arch.layout, t, regime);
        let analytic = tlm::multiplier_estimate_sens(
            &p, &pcfg, t, &state.q, &state.v, &rho, regime, &sens,
        )
        .unwrap()[(0, 0)];
        let fd = (lam_p[k] - lam_m[k]) / (2.0 * eps);
        scale = scale.max(analytic.abs());
        worst = worst.max((analytic - fd).abs());
    }
    assert!(
        worst <= 1e-4 * scale,
        "estimated multiplier sensitivity disagrees with FD by {worst:.3e} (scale {scale:.3e})"
    );
}

#[test]
fn velocity_constraint_sens_residual_stays_small_along_trajectories() {
    let p = Pendulum::new(2.0, 9.81, 1.3, 0.9, 0.0);
    let rho = p.nominal_parameters();
    let arch =
        propagate_hybrid(&p, &Formulation::DaeIndex1, &cfg(0.02), &rho, 0.0, 2.0).unwrap();
    for (t, regime, y) in arch.grid_samples() {
        let (state, sens) = unpack_canonical(y, arch.layout, t, regime);
        let res = tlm::velocity_constraint_sens_residual(
            &p, t, &state.q, &state.v, &rho, regime, &sens,
        );
        assert!(res.amax() <= 1e-6, "residual {:.3e} at t = {t}", res.amax());
    }
}

/// Build a feasible five-bar state by perturbing the dof coordinates and
/// re-solving the dependent ones.
fn random_feasible_five_bar_state(
    model: &FiveBar,
    rho: &DVector<f64>,
    rng: &mut impl Rng,
) -> (DVector<f64>, DVector<f64>) {
    let mut guess = DVector::from_row_slice(&model.config().initial_q);
    guess[2] += rng.random_range(-0.2..0.2);
    guess[3] += rng.random_range(-0.2..0.2);
    let q = partition::project_to_manifold(model, 0.0, &guess, rho, Regime(0), 1e-8).unwrap();
    let ce = model.constraints(0.0, &q, rho, Regime(0));
    let part = partition::partition_coordinates(
        &ce.phi_q,
        1e-8,
        model.preferred_dof(Regime(0)).as_deref(),
    )
    .unwrap();
    let v_dof = DVector::from_fn(2, |_, _| rng.random_range(-1.0..1.0));
    let v = part.assemble_velocity(&v_dof, &ce.phi_t);
    (q, v)
}

#[test]
fn five_bar_partition_honors_the_point2_hint() {
    let model = FiveBar::new(FiveBarConfig::default()).unwrap();
    let rho = model.nominal_parameters();
    let (q, _) = model.initial_state(&rho);
    let ce = model.constraints(0.0, &q, &rho, Regime(0));
    let part = partition::partition_coordinates(
        &ce.phi_q,
        1e-8,
        model.preferred_dof(Regime(0)).as_deref(),
    )
    .unwrap();
    assert!(part.hint_honored);
    assert_eq!(part.perm_dof, vec![2, 3]);
    assert_eq!(part.pivots.len(), 4);
    assert!(part.pivots[3] >= 1e-8 * part.pivots[0]);
}

#[test]
fn validate_model_passes_on_built_ins_at_random_feasible_states() {
    let opts = ValidationOptions::default();
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(2024);

    let model = FiveBar::new(FiveBarConfig {
        cost: FiveBarCost::VerticalVelocityP2,
        ..Default::default()
    })
    .unwrap();
    let rho = model.nominal_parameters();
    for _ in 0..10 {
        let (q, v) = random_feasible_five_bar_state(&model, &rho, &mut rng);
        let probe = hybrid_sens_core::model::HybridState {
            t: rng.random_range(0.0..2.0),
            q,
            v,
            z: 0.0,
            regime: Regime(0),
        };
        let report =
            hybrid_sens_core::model::validate_model(&model, &probe, &rho, &opts).unwrap();
        assert!(
            report.pass(),
            "five-bar validation failed:\n{report}"
        );
    }

    let ball = hybrid_sens_core::models::BouncingBall::new(1.0, 9.81, 0.7);
    let rho = ball.nominal_parameters();
    for _ in 0..10 {
        let probe = hybrid_sens_core::model::HybridState {
            t: rng.random_range(0.0..2.0),
            q: DVector::from_vec(vec![rng.random_range(0.1..3.0)]),
            v: DVector::from_vec(vec![rng.random_range(-3.0..3.0)]),
            z: 0.0,
            regime: Regime(0),
        };
        let report = hybrid_sens_core::model::validate_model(&ball, &probe, &rho, &opts).unwrap();
        assert!(report.pass(), "ball validation failed:\n{report}");
        // constant mass and state-free force: those checks are exactly zero
        for c in &report.checks {
            if c.name.starts_with("mass_dq_mul") || c.name == "force.f_q" {
                assert_eq!(c.max_abs_err, 0.0);
            }
        }
    }
}

#[test]
fn validation_catches_a_broken_force_jacobian() {
    struct BrokenForce(FiveBar);
    impl Model for BrokenForce {
        fn dims(&self) -> hybrid_sens_core::model::Dimensions {
            self.0.dims()
        }
        fn preferred_dof(&self, regime: Regime) -> Option<Vec<usize>> {
            self.0.preferred_dof(regime)
        }
        fn mass(&self, t: f64, q: &DVector<f64>, rho: &DVector<f64>, regime: Regime) -> DMatrix<f64> {
            self.0.mass(t, q, rho, regime)
        }
        fn force(
            &self,
            t: f64,
            q: &DVector<f64>,
            v: &DVector<f64>,
            rho: &DVector<f64>,
            regime: Regime,
        ) -> hybrid_sens_core::model::ForceEval {
            let mut fe = self.0.force(t, q, v, rho, regime);
            fe.f_q = DMatrix::zeros(6, 6); // deliberately wrong
            fe
        }
        fn constraints(
            &self,
            t: f64,
            q: &DVector<f64>,
            rho: &DVector<f64>,
            regime: Regime,
        ) -> hybrid_sens_core::model::ConstraintEval {
            self.0.constraints(t, q, rho, regime)
        }
        fn phi_qq_mul(
            &self,
            t: f64,
            q: &DVector<f64>,
            rho: &DVector<f64>,
            regime: Regime,
            u: &DVector<f64>,
        ) -> DMatrix<f64> {
            self.0.phi_qq_mul(t, q, rho, regime, u)
        }
        fn phi_qq_tr_mul(
            &self,
            t: f64,
            q: &DVector<f64>,
            rho: &DVector<f64>,
            regime: Regime,
            w: &DVector<f64>,
        ) -> DMatrix<f64> {
            self.0.phi_qq_tr_mul(t, q, rho, regime, w)
        }
        fn num_events(&self) -> usize {
            self.0.num_events()
        }
        fn event(&self, index: usize, q: &DVector<f64>) -> hybrid_sens_core::model::EventEval {
            self.0.event(index, q)
        }
        fn event_spec(&self, index: usize) -> hybrid_sens_core::model::EventSpec {
            self.0.event_spec(index)
        }
        fn jump(
            &self,
            index: usize,
            t: f64,
            q: &DVector<f64>,
            v_dof_minus: &DVector<f64>,
            rho: &DVector<f64>,
        ) -> hybrid_sens_core::model::JumpEval {
            self.0.jump(index, t, q, v_dof_minus, rho)
        }
        fn initial_state(&self, rho: &DVector<f64>) -> (DVector<f64>, DVector<f64>) {
            self.0.initial_state(rho)
        }
    }

    let model = BrokenForce(FiveBar::new(FiveBarConfig::default()).unwrap());
    let rho = model.0.nominal_parameters();
    let (q, v) = model.0.initial_state(&rho);
    let probe = hybrid_sens_core::model::HybridState {
        t: 0.0,
        q,
        v,
        z: 0.0,
        regime: Regime(0),
    };
    let report =
        hybrid_sens_core::model::validate_model(&model, &probe, &rho, &ValidationOptions::default())
            .unwrap();
    assert!(!report.pass());
    let failures = report.failures();
    assert!(
        failures.iter().any(|c| c.name == "force.f_q" && c.rel_err > 1e-2),
        "expected force.f_q to be flagged:\n{report}"
    );
}

#[test]
fn event_tol_controls_event_time_accuracy() {
    let model = FiveBar::new(FiveBarConfig::default()).unwrap();
    let rho = model.nominal_parameters();
    let mut times = Vec::new();
    for event_tol in [1e-6, 1e-7, 1e-8, 1e-10] {
        let mut c = cfg(0.5);
        c.event_tol = event_tol;
        let arch = propagate_hybrid(&model, &penalty(), &c, &rho, 0.0, 2.0).unwrap();
        times.push(arch.events[0].t_eve);
    }
    // |t(tol) - t(tol/10)| <= 10 tol
    assert!((times[0] - times[1]).abs() <= 10.0 * 1e-6);
    assert!((times[1] - times[2]).abs() <= 10.0 * 1e-7);
    assert!((times[2] - times[3]).abs() <= 10.0 * 1e-8);
}

#[test]
fn tolerance_halving_shows_self_convergence() {
    let model = FiveBar::new(FiveBarConfig::default()).unwrap();
    let rho = model.nominal_parameters();
    let run = |rtol: f64| {
        let c = IntegratorConfig {
            rtol,
            atol: rtol * 1e-2,
            dense_sample_dt: 1.0,
            ..Default::default()
        };
        propagate_hybrid(&model, &Formulation::DaeIndex1, &c, &rho, 0.0, 2.0).unwrap()
    };
    let coarse = run(1e-8);
    let fine = run(1e-10);
    let finest = run(1e-12);
    let d_coarse = (&coarse.final_state.q - &fine.final_state.q).amax()
        + (&coarse.final_state.v - &fine.final_state.v).amax();
    let d_fine = (&fine.final_state.q - &finest.final_state.q).amax()
        + (&fine.final_state.v - &finest.final_state.v).amax();
    assert!(
        d_fine < d_coarse,
        "halving tolerances must tighten the result: {d_coarse:.3e} -> {d_fine:.3e}"
    );
}

#[test]
fn five_bar_accel_quadrature_sens_matches_fd_across_a_bounce() {
    // z integrates the vertical acceleration of point 2; its sensitivity
    // jumps at each impact and must still track the finite differences
    let model = FiveBar::new(FiveBarConfig {
        cost: FiveBarCost::VerticalAccelP2,
        ..Default::default()
    })
    .unwrap();
    let rho = model.nominal_parameters();
    let run_cfg = cfg(0.01);
    let t_f = 2.0;
    let arch = propagate_hybrid(&model, &penalty(), &run_cfg, &rho, 0.0, t_f).unwrap();
    assert!(!arch.events.is_empty());

    for param in 0..2 {
        let eps = 1e-5 * (1.0 + rho[param].abs());
        let fd = oracle::central_fd_sensitivity(
            &model, &penalty(), &run_cfg, &rho, eps, param, 0.0, t_f,
        )
        .unwrap();
        let windows = oracle::event_exclusion_windows(&arch, eps, param, 5.0);
        let analytic = oracle::analytic_series(&arch, param);
        let fd_z = fd.dz.as_ref().unwrap();
        let an_z = analytic.dz.as_ref().unwrap();
        let scale = an_z.iter().fold(0.0f64, |a, &b| a.max(b.abs()));
        let mut worst: f64 = 0.0;
        for (k, t) in fd.times.iter().enumerate() {
            if windows.iter().any(|&(a, b)| *t >= a && *t <= b) {
                continue;
            }
            worst = worst.max((fd_z[k] - an_z[k]).abs());
        }
        assert!(
            worst <= 1e-3 * scale,
            "param {param}: quadrature sensitivity off by {worst:.3e} (scale {scale:.3e})"
        );
    }
}

#[test]
fn unconstrained_five_bar_tlm_matches_complex_step() {
    let model = FiveBar::unconstrained(FiveBarConfig::default()).unwrap();
    let rho = model.nominal_parameters();
    let tight = IntegratorConfig {
        rtol: 1e-12,
        atol: 1e-14,
        dense_sample_dt: 0.02,
        ..Default::default()
    };
    let arch = propagate_hybrid(&model, &Formulation::Ode, &tight, &rho, 0.0, 0.3).unwrap();
    for param in 0..2 {
        let cs = oracle::complex_step_sensitivity(
            &model,
            &Formulation::Ode,
            &tight,
            &rho,
            1e-20,
            param,
            0.0,
            0.3,
        )
        .unwrap();
        let report = oracle::compare_report(&arch, &cs, &[], 1e-10);
        assert!(report.pass(), "param {param}: {report}");
    }
}

#[test]
fn constraint_sens_identities_hold_across_bounces_under_dae() {
    let model = FiveBar::new(FiveBarConfig::default()).unwrap();
    let rho = model.nominal_parameters();
    let arch =
        propagate_hybrid(&model, &Formulation::DaeIndex1, &cfg(0.01), &rho, 0.0, 2.0).unwrap();
    assert!(!arch.events.is_empty());
    for (t, regime, y) in arch.all_samples() {
        let (state, sens) = unpack_canonical(y, arch.layout, t, regime);
        let ce = model.constraints(t, &state.q, &rho, regime);
        // position-level: Phi_q Q + Phi_rho = 0
        let pos = (&ce.phi_q * &sens.dq_drho + &ce.phi_rho).amax();
        assert!(pos <= 1e-8, "position-sens residual {pos:.3e} at t = {t}");
        // velocity-level: the differentiated velocity constraint
        let vel = tlm::velocity_constraint_sens_residual(
            &model, t, &state.q, &state.v, &rho, regime, &sens,
        )
        .amax();
        assert!(vel <= 1e-6, "velocity-sens residual {vel:.3e} at t = {t}");
    }
    // right after each event, the re-solved sensitivities are consistent to
    // localization accuracy
    for ev in &arch.events {
        let ce = model.constraints(ev.t_eve, &ev.state_post.q, &rho, ev.state_post.regime);
        let pos = (&ce.phi_q * &ev.sens_post.dq_drho + &ce.phi_rho).amax();
        let vel = tlm::velocity_constraint_sens_residual(
            &model,
            ev.t_eve,
            &ev.state_post.q,
            &ev.state_post.v,
            &rho,
            ev.state_post.regime,
            &ev.sens_post,
        )
        .amax();
        assert!(pos <= 1e-8 && vel <= 1e-8, "post-event residuals {pos:.2e} / {vel:.2e}");
    }
}
