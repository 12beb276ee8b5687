mod common;

use common::*;
use pmflow::multi::{gradient_from_trace, simulate_controlled, SaturationField, StepControl};
use pmflow::physics::PhysicsKind;
use pmflow::single;

#[test]
fn single_phase_adjoint_matches_fd() {
    let m = model(24, PhysicsKind::Single, 1.0);
    let q_inj = m.wells.injection_rate;
    for (i, k) in fields(&m, 50, 100).iter().enumerate() {
        let q = q_inj * (0.05 + 0.9 * ((i as f64 * 0.618_033_988_75) % 1.0));
        let (_, g) = m.critical_pressure_and_slope(k, q).unwrap();
        let fd = m.fd_slope(k, q).unwrap();
        assert!(rel(g, fd) <= 1e-6, "case {i}: adjoint {g} fd {fd}");
    }
}

#[test]
fn single_phase_slope_is_negative_and_rate_independent() {
    let m = model(12, PhysicsKind::Single, 1.0);
    for k in fields(&m, 20, 200) {
        let p = m.problem(&k).unwrap();
        let a = single::gradient_steady(&p, 0.001, 1.0).unwrap();
        let b = single::gradient_steady(&p, 0.02, 1.0).unwrap();
        assert!(a < 0.0);
        assert!(rel(a, b) <= 1e-9);
        // affine in q
        let p0 = single::critical_pressure(&p, 0.0).unwrap();
        let p1 = single::critical_pressure(&p, 0.01).unwrap();
        assert!(rel(p1, p0 + 0.01 * a) <= 1e-8);
    }
}

/// Ten CFL steps on 12×12, adjoint against a central difference that replays
/// the same steps.
#[test]
fn multiphase_adjoint_matches_frozen_schedule_fd() {
    let m = model(12, PhysicsKind::Multi, 1e6);
    let s0 = SaturationField::uniform(144, 0.0).unwrap();
    for (i, k) in fields(&m, 20, 300).iter().enumerate() {
        let p = m.problem(k).unwrap();
        let q = m.wells.injection_rate * (0.05 + 0.9 * ((i as f64 * 0.618_033_988_75) % 1.0));
        let (_, trace) = simulate_controlled(&p, &m.impes, q, StepControl::CflSteps(10), &s0).unwrap();
        assert_eq!(trace.steps.len(), 10);
        let g = gradient_from_trace(&p, &m.impes, q, &trace).unwrap();
        let sched: Vec<f64> = trace.steps.iter().map(|r| r.dt).collect();
        let h = (1e-6 * q).max(1e-9);
        let run = |q| simulate_controlled(&p, &m.impes, q, StepControl::Schedule(&sched), &s0).unwrap().0;
        let fd = (run(q + h) - run(q - h)) / (2.0 * h);
        assert!(g < 0.0);
        assert!(rel(g, fd) <= 1e-4, "case {i}: adjoint {g} fd {fd}");
    }
}

#[test]
fn multiphase_horizon_gradient_matches_fd() {
    let m = model(12, PhysicsKind::Multi, 1e6);
    for k in fields(&m, 3, 400) {
        let q = 0.3 * m.wells.injection_rate;
        let (_, g) = m.critical_pressure_and_slope(&k, q).unwrap();
        let fd = m.fd_slope(&k, q).unwrap();
        assert!(rel(g, fd) <= 1e-4, "adjoint {g} fd {fd}");
    }
}
