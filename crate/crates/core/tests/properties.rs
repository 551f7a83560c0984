//! Cross-module properties of the numeric core, channel surrogate and task mapping.

use csi_core::channel::{
    gen_slot, make_taps, read_container, write_container, ChannelType, CsiGrid, ScenarioConfig, Snr, SNR_SET_DB,
};
use csi_core::numkit::{AdamConfig, AdamState, GradTape, Mat};
use csi_core::rng::rng;
use csi_core::ssm::ssm_init;
use csi_core::task::{draw_snr, grid_to_sequence, sequence_to_grid};
use csi_core::trainer::mse;
use num_complex::Complex64;
use proptest::prelude::*;
use rand::Rng;

fn scenario(speed: f64, seed: u64) -> ScenarioConfig {
    ScenarioConfig {
        n_subcarriers: 4,
        ..ScenarioConfig::siso(ChannelType::Uma, speed, Snr::NOISELESS, 28e9)
    }
    .with_seed(seed)
}

#[test]
fn slots_tile_one_continuous_process() {
    let c = scenario(30.0, 12);
    let taps = make_taps(&c).unwrap();
    let t_sym = c.symbol_duration();
    for slot in 0..4 {
        let g = gen_slot(&taps, &c, slot).unwrap();
        for s in 0..c.n_symbols {
            let t = (slot * c.n_symbols + s) as f64 * t_sym;
            let dc: Complex64 = (0..taps.num_taps()).map(|l| taps.tap_gain(0, l, t)).sum();
            assert!((g.get(s, 0, 0, 0) - dc).norm() < 1e-12, "slot {slot} symbol {s}");
        }
    }
}

#[test]
fn adjacent_symbols_across_a_slot_boundary_look_like_any_other_pair() {
    let c = scenario(30.0, 0);
    let (mut inside, mut across) = (0.0, 0.0);
    for seed in 0..300 {
        let c = c.with_seed(seed);
        let taps = make_taps(&c).unwrap();
        let a = gen_slot(&taps, &c, 3).unwrap();
        let b = gen_slot(&taps, &c, 4).unwrap();
        inside += (a.get(13, 0, 0, 0) - a.get(12, 0, 0, 0)).norm_sqr();
        across += (b.get(0, 0, 0, 0) - a.get(13, 0, 0, 0)).norm_sqr();
    }
    let ratio = across / inside;
    assert!((0.7..1.4).contains(&ratio), "{ratio}");
}

#[test]
fn all_snr_draws_pass_a_chi_square_test() {
    let n = 10_000;
    let mut counts = [0f64; 5];
    for seed in 0..n {
        let v = draw_snr(Snr::All, seed);
        counts[SNR_SET_DB.iter().position(|&s| s == v).unwrap()] += 1.0;
    }
    let expected = n as f64 / 5.0;
    let chi2: f64 = counts.iter().map(|c| (c - expected).powi(2) / expected).sum();
    // 99th percentile of chi-square with 4 degrees of freedom
    assert!(chi2 < 13.277, "chi2 = {chi2}, counts {counts:?}");
}

#[test]
fn gradients_have_parameter_shapes() {
    let mut tape = GradTape::new();
    let w = tape.param(Mat::filled(3, 2, 0.5));
    let b = tape.param(Mat::filled(1, 2, 0.1));
    let _unused = tape.param(Mat::filled(4, 4, 1.0));
    let x = tape.constant(Mat::filled(5, 3, 1.0));
    let h = tape.matmul(x, w).unwrap();
    let h = tape.add_row(h, b).unwrap();
    let h = tape.tanh(h);
    let loss = tape.mean(h);
    let g = tape.backward(loss).unwrap();
    assert_eq!(g.get(0).shape(), (3, 2));
    assert_eq!(g.get(1).shape(), (1, 2));
    assert_eq!(g.get(2), &Mat::zeros(4, 4));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn grids_are_a_pure_function_of_config_seed_and_slot(seed in any::<u64>(), slot in 0usize..40, v in 0.0f64..40.0) {
        let c = scenario(v, seed);
        let a = gen_slot(&make_taps(&c).unwrap(), &c, slot).unwrap();
        let b = gen_slot(&make_taps(&c).unwrap(), &c, slot).unwrap();
        prop_assert_eq!(a.data(), b.data());
        prop_assert!(a.is_finite());
    }

    #[test]
    fn sequence_mapping_round_trips_bitwise(ns in 1usize..5, nf in 1usize..5, nu in 1usize..3, nt in 1usize..4, seed in any::<u64>()) {
        let shape = [ns, nf, nu, nt];
        let mut r = rng(seed);
        let data = (0..ns * nf * nu * nt)
            .map(|_| Complex64::new(r.random_range(-1e6..1e6), r.random_range(-1e-6..1e-6)))
            .collect();
        let g = CsiGrid::from_data(shape, data).unwrap();
        let m = grid_to_sequence(&g);
        prop_assert_eq!(m.shape(), (ns, 2 * nf * nu * nt));
        let back = sequence_to_grid(&m, shape).unwrap();
        prop_assert_eq!(back.data(), g.data());

        let mut buf = Vec::new();
        write_container(&mut buf, std::slice::from_ref(&g)).unwrap();
        let read = read_container(&buf[..]).unwrap();
        prop_assert_eq!(read[0].data(), g.data());
    }

    #[test]
    fn adam_keeps_moments_consistent(seed in any::<u64>(), steps in 1usize..20) {
        let mut r = rng(seed);
        let mut params = vec![Mat::uniform(3, 4, 1.0, &mut r), Mat::uniform(1, 2, 1.0, &mut r)];
        let mut adam = AdamState::new(&params, AdamConfig::default());
        for k in 0..steps {
            let grads: Vec<Mat> = params.iter().map(|p| Mat::uniform(p.rows(), p.cols(), 5.0, &mut r)).collect();
            adam.step(&mut params, &grads).unwrap();
            prop_assert_eq!(adam.step, k as u64 + 1);
            for (m, p) in adam.m.iter().zip(&params) {
                prop_assert_eq!(m.shape(), p.shape());
            }
            prop_assert!(adam.v.iter().all(|v| v.data().iter().all(|&x| x >= 0.0)));
        }
    }

    #[test]
    fn mse_is_symmetric_and_non_negative(seed in any::<u64>(), rows in 1usize..6, cols in 1usize..6) {
        let mut r = rng(seed);
        let a = Mat::uniform(rows, cols, 2.0, &mut r);
        let b = Mat::uniform(rows, cols, 2.0, &mut r);
        let ab = mse(&a, &b).unwrap();
        prop_assert_eq!(ab, mse(&b, &a).unwrap());
        prop_assert!(ab >= 0.0);
        prop_assert_eq!(mse(&a, &a).unwrap(), 0.0);
    }

    #[test]
    fn default_ssm_init_is_stable(f in 1usize..80, e in 1usize..40, seed in any::<u64>()) {
        prop_assert!(ssm_init(f, e, true, seed).unwrap().is_stable());
    }
}
