use fewha::config::{LoopMode, PreconditionerMode, PreconditionerParams};
use fewha::linalg::{norm, rel_diff};
use fewha::operators::{approximate_diagonal, exact_diagonal};
use fewha::oracle::{DenseOracle, DEFAULT_ORACLE_CAP};
use fewha::sim::{generate_atmosphere, synthesize_measurements};
use fewha::*;

fn mini_with(edit: impl FnOnce(&mut fewha::config::ConfigFile)) -> SystemGeometry {
    presets::mini().with_config(edit).unwrap()
}

fn truth_slopes(rec: &Reconstructor, seed: u64) -> MeasurementSet {
    let g = rec.geometry();
    let truth = generate_atmosphere(g, seed).unwrap();
    synthesize_measurements(rec.ops(), g, &truth.layers, None, None).unwrap()
}

fn scaled(s: &MeasurementSet, k: f64) -> MeasurementSet {
    let v = s.data().iter().map(|x| k * x).collect();
    MeasurementSet::from_vec(s.layout(), v).unwrap()
}

#[test]
fn zero_gain_keeps_the_previous_command() {
    for mode in [LoopMode::Closed, LoopMode::Open] {
        let g = mini_with(|c| {
            c.loop_.gain = 0.0;
            c.loop_.mode = mode;
        });
        let mut rec = Reconstructor::new(&g, Some(1)).unwrap();
        let s = truth_slopes(&rec, 1);
        let mut state = rec.new_state();
        state
            .a_prev
            .data_mut()
            .iter_mut()
            .enumerate()
            .for_each(|(i, v)| *v = (i as f64).sin());
        let before = state.a_prev.clone();
        let out = rec.reconstruct_step(&mut state, &s).unwrap();
        assert_eq!(out.mirrors, before);
    }
}

#[test]
fn open_loop_unit_gain_applies_the_fit() {
    let g = mini_with(|c| {
        c.loop_.gain = 1.0;
        c.loop_.mode = LoopMode::Open;
    });
    let mut rec = Reconstructor::new(&g, Some(1)).unwrap();
    let s = truth_slopes(&rec, 2);
    let mut state = rec.new_state();
    let out = rec.reconstruct_step(&mut state, &s).unwrap();
    let fitted = rec.fit_coefficients(&state.c_prev).unwrap();
    assert_eq!(out.mirrors, fitted);
}

#[test]
fn pseudo_open_loop_restores_full_measurements() {
    let g = presets::mini();
    let mut rec = Reconstructor::new(&g, Some(1)).unwrap();
    let truth = generate_atmosphere(&g, 3).unwrap();
    let ops = rec.ops().clone();
    let mut state = rec.new_state();
    state
        .a_prev2
        .data_mut()
        .iter_mut()
        .enumerate()
        .for_each(|(i, v)| *v = 0.3 * (0.7 * i as f64).cos());
    let full = synthesize_measurements(&ops, &g, &truth.layers, None, None).unwrap();
    let residual = synthesize_measurements(&ops, &g, &truth.layers, Some(&state.a_prev2), None).unwrap();
    let (_, r_closed) = rec.prepare_step(&state, &residual).unwrap();

    let open = mini_with(|c| c.loop_.mode = LoopMode::Open);
    let mut rec_open = Reconstructor::new(&open, Some(1)).unwrap();
    let (_, r_open) = rec_open.prepare_step(&state, &full).unwrap();
    assert!(rel_diff(r_closed.data(), r_open.data()) < 1e-12);
}

#[test]
fn reset_then_step_equals_a_fresh_step() {
    let g = presets::mini();
    let mut rec = Reconstructor::new(&g, Some(1)).unwrap();
    let s = truth_slopes(&rec, 4);
    let mut state = rec.new_state();
    for _ in 0..3 {
        rec.reconstruct_step(&mut state, &s).unwrap();
    }
    warm_restart_reset(&mut state);
    assert!(state.is_finite());
    let after_reset = rec.reconstruct_step(&mut state, &s).unwrap().mirrors;
    let mut fresh = rec.new_state();
    let cold = rec.reconstruct_step(&mut fresh, &s).unwrap().mirrors;
    assert_eq!(after_reset, cold);
    assert_eq!(state, fresh);
}

#[test]
fn warm_restart_does_not_increase_the_initial_residual() {
    let g = mini_with(|c| c.loop_.mode = LoopMode::Open);
    let mut rec = Reconstructor::new(&g, Some(1)).unwrap();
    let s = truth_slopes(&rec, 5);
    let mut state = rec.new_state();
    let first = rec.reconstruct_step(&mut state, &s).unwrap().telemetry;
    let second = rec.reconstruct_step(&mut state, &s).unwrap().telemetry;
    assert!(second.initial_residual_norm <= first.initial_residual_norm);
}

#[test]
fn static_open_loop_converges_across_steps() {
    // warm restart continues the same solve, so the residual keeps shrinking
    let g = mini_with(|c| c.loop_.mode = LoopMode::Open);
    let mut rec = Reconstructor::new(&g, Some(1)).unwrap();
    let s = truth_slopes(&rec, 6);
    let mut state = rec.new_state();
    let mut last = f64::INFINITY;
    for _ in 0..10 {
        let t = rec.reconstruct_step(&mut state, &s).unwrap().telemetry;
        last = t.final_residual_norm / t.rhs_norm;
    }
    assert!(last < 1e-8, "{last:e}");
}

#[test]
fn incremental_residual_matches_direct_residual() {
    let g = presets::mini();
    let mut rec = Reconstructor::new(&g, Some(1)).unwrap();
    let truth = generate_atmosphere(&g, 7).unwrap();
    let ops = rec.ops().clone();
    let mut state = rec.new_state();
    let n = ops.coefficient_dim();
    let mut mc = vec![0.0; n];
    for _ in 0..20 {
        let s = synthesize_measurements(&ops, &g, &truth.layers, Some(&state.a_prev2), None).unwrap();
        let (b, r_bar) = rec.prepare_step(&state, &s).unwrap();
        rec.apply_m(state.c_prev.data(), &mut mc).unwrap();
        let direct: Vec<f64> = b.data().iter().zip(&mc).map(|(b, m)| b - m).collect();
        let diff: Vec<f64> = r_bar.data().iter().zip(&direct).map(|(a, b)| a - b).collect();
        assert!(norm(&diff) <= 1e-10 * b.norm());
        rec.reconstruct_step(&mut state, &s).unwrap();
    }
}

#[test]
fn reset_mid_run_stays_finite() {
    let g = presets::mini();
    let mut rec = Reconstructor::new(&g, Some(1)).unwrap();
    let s = truth_slopes(&rec, 8);
    let mut state = rec.new_state();
    rec.reconstruct_step(&mut state, &s).unwrap();
    rec.reconstruct_step(&mut state, &s).unwrap();
    warm_restart_reset(&mut state);
    let out = rec.reconstruct_step(&mut state, &s).unwrap();
    assert!(state.is_finite());
    assert!(out.mirrors.data().iter().all(|v| v.is_finite()));
}

#[test]
fn rhs_is_linear_in_measurements() {
    let g = presets::mini();
    let mut rec = Reconstructor::new(&g, Some(1)).unwrap();
    let s = truth_slopes(&rec, 9);
    let zero = MeasurementSet::zeros(s.layout());
    assert!(rec.build_rhs(&zero).unwrap().data().iter().all(|&v| v == 0.0));
    let b = rec.build_rhs(&s).unwrap();
    let b2 = rec.build_rhs(&scaled(&s, 2.0)).unwrap();
    let doubled: Vec<f64> = b.data().iter().map(|v| 2.0 * v).collect();
    assert!(rel_diff(b2.data(), &doubled) < 1e-14);
}

#[test]
fn m_of_zero_is_zero() {
    let mut rec = Reconstructor::new(&presets::mini(), Some(1)).unwrap();
    let n = rec.ops().coefficient_dim();
    let mut y = vec![1.0; n];
    rec.apply_m(&vec![0.0; n], &mut y).unwrap();
    assert!(y.iter().all(|&v| v == 0.0));
}

#[test]
fn exact_preconditioner_is_the_dense_diagonal() {
    let g = presets::mini();
    assert_eq!(g.preconditioner.mode, PreconditionerMode::Exact);
    let rec = Reconstructor::new(&g, Some(1)).unwrap();
    let o = DenseOracle::assemble(&g, DEFAULT_ORACLE_CAP).unwrap();
    let dense: Vec<f64> = (0..o.dim()).map(|i| o.m[(i, i)]).collect();
    assert!(rel_diff(rec.preconditioner(), &dense) < 1e-10);
}

#[test]
fn preconditioner_without_data_term_is_the_regularizer() {
    let g = presets::mini();
    let ops = TomoOperators::new(&g).unwrap();
    let orders: Vec<u32> = g.layers.iter().map(|l| l.grid_order).collect();
    let alpha = g.regularization_alpha;
    let expected: Vec<f64> = ops.regularizer.diagonal().iter().map(|d| alpha * d).collect();
    let approx = approximate_diagonal(
        &ops.layer_layout,
        &orders,
        &ops.regularizer,
        alpha,
        &g.preconditioner,
        |_, y| {
            y.fill(0.0);
            Ok(())
        },
    )
    .unwrap();
    assert_eq!(approx, expected);
}

#[test]
fn approximate_equals_exact_for_translation_invariant_data_term() {
    let g = presets::mini();
    let ops = TomoOperators::new(&g).unwrap();
    let orders: Vec<u32> = g.layers.iter().map(|l| l.grid_order).collect();
    let alpha = g.regularization_alpha;
    let reg = ops.regularizer.clone();
    let n = ops.coefficient_dim();
    // data term 3 I plus the regularizer: constant diagonal on every sub-band
    let apply = |x: &[f64], y: &mut [f64]| {
        for i in 0..n {
            y[i] = 3.0 * x[i];
        }
        Ok(())
    };
    let full = |x: &[f64], y: &mut [f64]| {
        for i in 0..n {
            y[i] = 3.0 * x[i] + alpha * reg.diagonal()[i] * x[i];
        }
        Ok(())
    };
    let unit = PreconditionerParams {
        mode: PreconditionerMode::Approximate,
        coarse_weight: 1.0,
        detail_weight: 1.0,
    };
    let approx = approximate_diagonal(&ops.layer_layout, &orders, &reg, alpha, &unit, apply).unwrap();
    let exact = exact_diagonal(n, full).unwrap();
    assert!(rel_diff(&approx, &exact) < 1e-14);
}

#[test]
fn more_iterations_bring_pcg_closer_to_the_dense_solution() {
    let g = presets::mini();
    let mut rec = Reconstructor::new(&g, Some(1)).unwrap();
    let o = DenseOracle::assemble(&g, DEFAULT_ORACLE_CAP).unwrap();
    let s = truth_slopes(&rec, 10);
    let exact = o.solve(&o.rhs(s.data())).unwrap();
    let b = rec.build_rhs(&s).unwrap();
    let precond = rec.preconditioner().to_vec();
    let errors: Vec<f64> = [4, 8, 16]
        .iter()
        .map(|&k| {
            let mut c = vec![0.0; b.len()];
            let mut r = b.data().to_vec();
            pcg_solve(&mut rec, &precond, &mut c, &mut r, PcgOptions::fixed(k)).unwrap();
            rel_diff(&c, &exact)
        })
        .collect();
    assert!(errors[0] > errors[1] && errors[1] > errors[2], "{errors:?}");
}

#[test]
fn layer_piston_is_invisible_to_the_sensors() {
    let g = presets::mini();
    let ops = TomoOperators::new(&g).unwrap();
    let truth = generate_atmosphere(&g, 11).unwrap();
    let base = ops.forward(&truth.layers).unwrap();
    let mut shifted = truth.layers.clone();
    for (l, offset) in [(0, 3.5), (1, -1.25)] {
        shifted.block_mut(l).iter_mut().for_each(|v| *v += offset);
    }
    let moved = ops.forward(&shifted).unwrap();
    let scale = norm(base.data());
    for (a, b) in base.data().iter().zip(moved.data()) {
        assert!((a - b).abs() <= 1e-12 * scale);
    }
}

#[test]
fn mini_steps_are_identical_across_thread_counts() {
    let g = presets::mini();
    let truth = generate_atmosphere(&g, 12).unwrap();
    let run = |threads: usize| {
        let mut rec = Reconstructor::new(&g, Some(threads)).unwrap();
        let ops = rec.ops().clone();
        let mut state = rec.new_state();
        (0..5)
            .map(|_| {
                let s = synthesize_measurements(&ops, &g, &truth.layers, Some(&state.a_prev2), None).unwrap();
                rec.reconstruct_step(&mut state, &s).unwrap().mirrors
            })
            .collect::<Vec<_>>()
    };
    let one = run(1);
    assert_eq!(one, run(2));
    assert_eq!(one, run(4));
}
