use std::sync::Arc;

use p3l_core::activations::{Activation, GaussQuadrature};
use p3l_core::analysis::{snapshot_finite, snapshot_mf};
use p3l_core::datasets::{self, Dataset};
use p3l_core::finite_model::{self, InitSpec, NetShape, TrainingState};
use p3l_core::kernel::{FeatureMapContext, KernelModel, DEFAULT_RANK_TOL};
use p3l_core::linalg;
use p3l_core::mf_model::{mf_init, MfShape, MfState, Regime};

fn context(ds: &Dataset) -> Arc<FeatureMapContext> {
    Arc::new(
        FeatureMapContext::new(
            KernelModel::analytic(2),
            ds.train_x.clone(),
            DEFAULT_RANK_TOL,
        )
        .unwrap(),
    )
}

fn mf_state(ds: &Dataset, m: usize, regime: Regime, seed: u64, dt: f64) -> MfState {
    let shape = MfShape {
        m,
        regime,
        beta_a: 0.0,
        beta_b: 0.5,
        sigma2: Activation::Tanh,
    };
    let ens = mf_init(context(ds), shape, seed, InitSpec { a_scale: 2.0 }).unwrap();
    MfState::new(ens, &ds.train_y, dt).unwrap()
}

fn finite_state(ds: &Dataset, m1: usize, m2: usize, seed: u64, dt: f64) -> TrainingState {
    let shape = NetShape {
        m1,
        m2,
        d: 2,
        alpha: 0.5,
        beta_a: 0.0,
        beta_b: 0.5,
        sigma1: Activation::Relu,
        sigma2: Activation::Tanh,
    };
    let net = finite_model::init(shape, seed, InitSpec { a_scale: 2.0 }).unwrap();
    TrainingState::new(net, ds.train_x.clone(), &ds.train_y, dt).unwrap()
}

#[test]
fn task_grams_are_positive_definite() {
    for ds in [
        datasets::task1(0.0, 0).unwrap(),
        datasets::task2(0.0, 0).unwrap(),
    ] {
        let g = KernelModel::analytic(2).gram(&ds.train_x);
        let lmin = linalg::lambda_min(&g);
        assert!(lmin > 1e-10, "{}: lambda_min(G) = {lmin:e}", ds.name);
        assert!(ds.aligned_pairs().is_empty());
    }
}

#[test]
fn same_seed_same_dataset() {
    for task in [1, 2] {
        let a = datasets::by_task(task, 0.3, 17).unwrap();
        let b = datasets::by_task(task, 0.3, 17).unwrap();
        let bits = |d: &Dataset| d.train_y.iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&a), bits(&b));
        assert_eq!(a.train_x, b.train_x);
        assert_ne!(bits(&a), bits(&datasets::by_task(task, 0.3, 18).unwrap()));
    }
}

/// Runs `attempt(dt)` at dt = 0.05 and halves dt up to three times until no
/// logged loss increases by more than 1e-8 relative.
fn monotone_with_halving(mut attempt: impl FnMut(f64) -> Vec<f64>) -> f64 {
    let mut dt = 0.05;
    for _ in 0..4 {
        let losses = attempt(dt);
        if losses.windows(2).all(|w| w[1] <= w[0] * (1.0 + 1e-8)) {
            return dt;
        }
        dt /= 2.0;
    }
    panic!("loss increased even at dt = {}", dt * 2.0);
}

#[test]
fn finite_loss_non_increasing() {
    let ds = datasets::task1(0.0, 0).unwrap();
    monotone_with_halving(|dt| {
        let mut st = finite_state(&ds, 128, 128, 3, dt);
        finite_model::train(&mut st, 20.0, 1).unwrap().losses
    });
}

#[test]
fn mf_loss_non_increasing() {
    let ds = datasets::task1(0.0, 0).unwrap();
    monotone_with_halving(|dt| {
        let mut st = mf_state(&ds, 300, Regime::Half, 4, dt);
        let mut losses = vec![st.loss];
        p3l_core::mf_model::train_with(&mut st, 20.0, 1, |s| {
            losses.push(s.loss);
            Ok(())
        })
        .unwrap();
        losses
    });
}

#[test]
fn permuting_particles_is_bit_identical() {
    let ds = datasets::task1(0.0, 0).unwrap();
    let st = mf_state(&ds, 64, Regime::Half, 9, 0.05);
    let perm: Vec<usize> = (0..64).map(|i| (i * 37 + 11) % 64).collect();
    let mut a = st.clone();
    let mut b = MfState::new(st.ensemble.permuted(&perm), &ds.train_y, 0.05).unwrap();
    let quad = GaussQuadrature::new(32).unwrap();
    let probe = vec![0.3, -0.7];
    for _ in 0..30 {
        a.mf_euler_step().unwrap();
        b.mf_euler_step().unwrap();
        assert_eq!(a.loss.to_bits(), b.loss.to_bits());
        assert_eq!(a.g, b.g);
        assert_eq!(a.displacement_norms(), b.displacement_norms());
    }
    let (sa, sb) = (snapshot_mf(&a), snapshot_mf(&b));
    assert_eq!(sa.k, sb.k);
    assert_eq!(sa.lambda_min_kw.to_bits(), sb.lambda_min_kw.to_bits());
    assert_eq!(
        a.mf_output(&probe, &quad).unwrap().to_bits(),
        b.mf_output(&probe, &quad).unwrap().to_bits()
    );
}

#[test]
fn particles_move_only_inside_the_range_of_g() {
    // Three antipodal pairs in the plane: relu(z.x) - relu(-z.x) = z.x makes
    // the Gram matrix singular.
    let xs = vec![
        vec![1.0, 0.0],
        vec![-1.0, 0.0],
        vec![0.0, 1.0],
        vec![0.0, -1.0],
        vec![0.6, 0.8],
        vec![-0.6, -0.8],
    ];
    let ys = vec![0.5, -0.2, 0.1, 0.3, -0.4, 0.2];
    let ds = Dataset::from_parts("antipodal", (xs, ys), (Vec::new(), Vec::new())).unwrap();
    let ctx = context(&ds);
    let rank = ctx.spectral.effective_rank;
    assert!(rank < ds.n(), "expected a singular Gram matrix");
    let mut st = mf_state(&ds, 50, Regime::Half, 2, 0.05);
    for _ in 0..40 {
        st.mf_euler_step().unwrap();
    }
    let basis = &st.ensemble.ctx.spectral.eigenvectors;
    let null = basis.columns(rank, ds.n() - rank);
    let delta = &st.ensemble.lambda - &st.ensemble.lambda0;
    assert!(delta.amax() > 1e-3, "particles did not move");
    let leak = (&delta * null).amax();
    assert!(leak < 1e-12, "displacement outside Ran(G): {leak:e}");
}

#[test]
fn gt_half_two_particles_match_a_large_balanced_ensemble() {
    let ds = datasets::task1(0.0, 0).unwrap();
    let mut two = mf_state(&ds, 2, Regime::GreaterThanHalf, 0, 0.05);
    let mut many = mf_state(&ds, 200, Regime::GreaterThanHalf, 0, 0.05);
    let l0 = two.loss;
    for _ in 0..100 {
        two.mf_euler_step().unwrap();
        many.mf_euler_step().unwrap();
    }
    assert!((&two.g - &many.g).amax() < 1e-12);
    assert!(two.loss < 0.9 * l0);
}

#[test]
fn per_step_output_change_is_width_stable() {
    let ds = datasets::task1(0.0, 0).unwrap();
    let change = |m1: usize, seed: u64| {
        let mut st = finite_state(&ds, m1, 256, seed, 0.05);
        let before = st.outputs()[0];
        st.euler_step().unwrap();
        (st.outputs()[0] - before).abs()
    };
    let small: Vec<f64> = (0..5).map(|s| change(256, s)).collect();
    let large: Vec<f64> = (0..5).map(|s| change(512, s)).collect();
    let ratio = p3l_core::experiment::median(&large) / p3l_core::experiment::median(&small);
    assert!((0.5..=2.0).contains(&ratio), "ratio {ratio}");
}

#[test]
fn kw_stays_psd_along_training() {
    let ds = datasets::task1(0.0, 0).unwrap();
    let mut st = finite_state(&ds, 96, 96, 1, 0.05);
    for step in 0..200 {
        if step % 20 == 0 {
            assert!(snapshot_finite(&st).lambda_min_kw >= -1e-8);
        }
        st.euler_step().unwrap();
    }
}

#[test]
fn training_points_agree_on_task2() {
    let ds = datasets::task2(0.0, 1).unwrap();
    let mut st = mf_state(&ds, 200, Regime::Half, 5, 0.05);
    let quad = GaussQuadrature::new(32).unwrap();
    for step in 0..60 {
        if step % 20 == 0 {
            for (k, x) in ds.train_x.iter().enumerate() {
                let gap = (st.mf_output(x, &quad).unwrap() - st.g[k]).abs();
                assert!(gap <= 1e-10, "point {k} at step {step}: {gap:e}");
            }
        }
        st.mf_euler_step().unwrap();
    }
}
