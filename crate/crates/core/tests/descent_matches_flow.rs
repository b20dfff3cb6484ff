use snn_core::activation::ActivationFn;
use snn_core::descent::{train, GradientMode, ModelKind, Monitor, TrainConfig};
use snn_core::flow::{integrate, lift, FlowContext, Scheme};
use snn_core::measurements::{gen_commuting_ensemble, gen_ground_truth, measure, PhiPsiSource};
use snn_core::model::spectral_init;

#[test]
fn fd_descent_tracks_euler_flow_at_matched_steps() {
    let (d, seed, lr) = (4, 3, 1e-3);
    let target = gen_ground_truth(d, d, d, seed).unwrap();
    let (mut e, truth) = gen_commuting_ensemble(d, d, 9, seed, &target, PhiPsiSource::SvdOfTarget).unwrap();
    measure(&mut e, &truth.x_star, 0.0, seed).unwrap();
    let act = ActivationFn::tanh();
    let ctx = FlowContext::from_ensemble(&e, act).unwrap();
    let (phi, psi) = (e.phi.clone().unwrap(), e.psi.clone().unwrap());
    let init = spectral_init(&phi, &psi, &ctx.sigma_star, 2, d, seed, &act).unwrap();

    let mut cfg = TrainConfig::new(lr, 50);
    cfg.gradient_mode = GradientMode::FiniteDifference;
    let mut model = ModelKind::SnnDepth1(init.params.clone());
    let mut state = init.state.clone();
    for _ in 0..4 {
        model = train(&model, &e, &cfg, Monitor::default()).unwrap().model;
        state = integrate(&state, &ctx, lr, 50, Scheme::Euler, 50).unwrap().0;
        let (_, x_flow) = lift(&state, &phi, &psi, &init.g, &act).unwrap();
        let gap = model.matrix().unwrap().sub(&x_flow).frobenius_norm();
        assert!(gap <= 1e-6, "{gap:e}");
    }
}

#[test]
fn analytic_descent_tracks_euler_flow() {
    let (d, seed, lr) = (5, 8, 1e-3);
    let target = gen_ground_truth(d, d, d, seed).unwrap();
    let (mut e, truth) = gen_commuting_ensemble(d, d, 12, seed, &target, PhiPsiSource::SvdOfTarget).unwrap();
    measure(&mut e, &truth.x_star, 0.0, seed).unwrap();
    let act = ActivationFn::sigmoid();
    let ctx = FlowContext::from_ensemble(&e, act).unwrap();
    let (phi, psi) = (e.phi.clone().unwrap(), e.psi.clone().unwrap());
    let init = spectral_init(&phi, &psi, &ctx.sigma_star, 3, d + 2, seed, &act).unwrap();

    let run = train(&ModelKind::SnnDepth1(init.params.clone()), &e, &TrainConfig::new(lr, 500), Monitor::default()).unwrap();
    let (state, _) = integrate(&init.state, &ctx, lr, 500, Scheme::Euler, 500).unwrap();
    let (_, x_flow) = lift(&state, &phi, &psi, &init.g, &act).unwrap();
    assert_eq!(run.fd_fallbacks, 0);
    assert!(run.model.matrix().unwrap().sub(&x_flow).frobenius_norm() <= 1e-8);
}
