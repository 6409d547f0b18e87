mod common;

use common::*;
use evdepth::archive::TensorArchive;
use evdepth::bench::random_stream;
use evdepth::fusion::{
    convlstm_step, fuse, resize_bilinear, run_sequence, upsample2x, ConvLstmParams,
    FeatureExtractor, FeatureMap, FeaturePyramid, FusionParams, LstmState, Projection,
    RecurrentFusionParams, RecurrentRunner, ToyExtractor,
};
use evdepth::{EventStack, Layout};
use rand::Rng;

fn map(c: usize, h: usize, w: usize, v: &[f64]) -> FeatureMap {
    FeatureMap::new(c, h, w, v.to_vec()).unwrap()
}

fn unit_projection(k: f64, b: f64) -> Projection {
    Projection {
        in_channels: 1,
        out_channels: 1,
        weight: vec![k],
        bias: vec![b],
    }
}

#[test]
fn bilinear_upsample_hand_case() {
    let up = upsample2x(&map(1, 2, 2, &[0.0, 4.0, 8.0, 12.0]));
    #[rustfmt::skip]
    let expect = [
        0.0, 1.0, 3.0, 4.0,
        2.0, 3.0, 5.0, 6.0,
        6.0, 7.0, 9.0, 10.0,
        8.0, 9.0, 11.0, 12.0,
    ];
    assert_eq!(up.values(), expect);
}

#[test]
fn two_scale_fusion_hand_case() {
    let fine = map(1, 4, 4, &[1.0; 16]);
    let coarse = map(1, 2, 2, &[0.0, 4.0, 8.0, 12.0]);
    let pyramid = FeaturePyramid {
        levels: vec![(4, fine), (8, coarse)],
    };
    let params = FusionParams {
        projections: vec![unit_projection(0.5, -1.0)],
        head: unit_projection(1.0, 0.0),
    };
    let out = fuse(&pyramid, &params).unwrap();
    let up = [0.0, 1.0, 3.0, 4.0, 2.0, 3.0, 5.0, 6.0, 6.0, 7.0, 9.0, 10.0, 8.0, 9.0, 11.0, 12.0];
    let expect: Vec<f64> = up.iter().map(|v| 0.5 * v - 1.0 + 1.0).collect();
    assert_eq!(out.values(), expect.as_slice());
}

#[test]
fn fusion_rejects_broken_pyramids() {
    let params = FusionParams {
        projections: vec![unit_projection(1.0, 0.0)],
        head: unit_projection(1.0, 0.0),
    };
    let skewed = FeaturePyramid {
        levels: vec![(4, map(1, 4, 4, &[0.0; 16])), (16, map(1, 1, 1, &[0.0]))],
    };
    assert!(fuse(&skewed, &params).is_err());
    let wide = FeaturePyramid {
        levels: vec![(4, map(2, 4, 4, &[0.0; 32])), (8, map(1, 2, 2, &[0.0; 4]))],
    };
    assert!(fuse(&wide, &params).is_err());
}

#[test]
fn resize_to_identity_is_exact() {
    let mut r = rng(80);
    let v: Vec<f64> = (0..3 * 5 * 7).map(|_| r.gen_range(-1.0..1.0)).collect();
    let m = map(3, 5, 7, &v);
    assert_eq!(resize_bilinear(&m, 5, 7), m);
}

#[test]
fn zero_weight_cell_is_closed_form() {
    // all-zero parameters: every gate is sigma(0), the candidate tanh(0)
    let p = ConvLstmParams::zeros(2, 3);
    let input = map(2, 3, 3, &[1.0; 18]);
    let state = LstmState {
        hidden: map(3, 3, 3, &[0.0; 27]),
        cell: map(3, 3, 3, &[0.8; 27]),
    };
    let (out, next) = convlstm_step(&input, &state, &p).unwrap();
    for &c in next.cell.values() {
        assert!((c - 0.4).abs() < 1e-15);
    }
    for &h in out.values() {
        assert!((h - 0.5 * 0.4f64.tanh()).abs() < 1e-15);
    }
}

#[test]
fn convlstm_center_tap_and_padding() {
    // a 3x3 all-ones kernel on the candidate gate of a 1x3 row sees
    // zero padding at the ends
    let mut p = ConvLstmParams::zeros(1, 1);
    for tap in 0..9 {
        p.weights[(3 * 2) * 9 + tap] = 1.0;
    }
    p.bias[0] = 50.0; // input gate open
    p.bias[2] = 50.0; // output gate open
    let input = map(1, 1, 3, &[1.0, 2.0, 3.0]);
    let state = LstmState {
        hidden: map(1, 1, 3, &[0.0; 3]),
        cell: map(1, 1, 3, &[0.0; 3]),
    };
    let (_, next) = convlstm_step(&input, &state, &p).unwrap();
    let expect = [3.0f64.tanh(), 6.0f64.tanh(), 5.0f64.tanh()];
    for (c, e) in next.cell.values().iter().zip(expect) {
        assert!((c - e).abs() < 1e-12);
    }
}

#[test]
fn scalar_cell_matches_closed_form() {
    let mut r = rng(81);
    for _ in 0..200 {
        let mut d = || -> [f64; 4] { std::array::from_fn(|_| r.gen_range(-3.0..3.0)) };
        let (wx, wh, b) = (d(), d(), d());
        let mut p = ConvLstmParams::zeros(1, 1);
        for g in 0..4 {
            p.weights[(g * 2) * 9 + 4] = wx[g];
            p.weights[(g * 2 + 1) * 9 + 4] = wh[g];
            p.bias[g] = b[g];
        }
        let (x, h, c) = (r.gen_range(-2.0..2.0), r.gen_range(-1.0..1.0), r.gen_range(-3.0..3.0));
        let state = LstmState { hidden: map(1, 1, 1, &[h]), cell: map(1, 1, 1, &[c]) };
        let (out, next) = convlstm_step(&map(1, 1, 1, &[x]), &state, &p).unwrap();
        let (eh, ec) = scalar_lstm(x, h, c, wx, wh, b);
        assert!((out.values()[0] - eh).abs() < 1e-12);
        assert!((next.cell.values()[0] - ec).abs() < 1e-12);
    }
}

fn stacks(w: u16, h: u16, n: usize, layout: Layout, seed: u64) -> Vec<EventStack> {
    let s = random_stream(w, h, 20_000 * n, 10_000 * n as u64, seed);
    (1..=n as u64)
        .map(|i| layout.encode(&s.slice_sbt(i * 10_000, 10_000).unwrap()).unwrap())
        .collect()
}

#[test]
fn sequence_is_independent_of_unroll_window() {
    let params = RecurrentFusionParams::random(&[4, 8], &[6, 10], 1);
    let ex = ToyExtractor::with_levels(3, &[4, 8], &[6, 10], 2);
    let seq = stacks(32, 16, 7, Layout::Tencode, 3);
    let one = run_sequence(&seq, &ex, &params, 1).unwrap();
    let all = run_sequence(&seq, &ex, &params, 20).unwrap();
    assert_eq!(one, all);
    assert!(run_sequence(&seq, &ex, &params, 0).is_err());
}

#[test]
fn runner_rejects_shape_drift() {
    let params = RecurrentFusionParams::random(&[4, 8], &[6, 10], 1);
    let ex = ToyExtractor::with_levels(3, &[4, 8], &[6, 10], 2);
    let mut runner = RecurrentRunner::new(&ex, &params);
    runner.step(&stacks(32, 16, 1, Layout::Tencode, 4)[0]).unwrap();
    assert!(runner.step(&stacks(16, 16, 1, Layout::Tencode, 5)[0]).is_err());
    runner.reset();
    assert!(runner.state().is_none());
    let bad = ToyExtractor::with_levels(3, &[4, 8], &[6, 10], 2);
    assert!(bad.extract(&stacks(20, 16, 1, Layout::Tencode, 6)[0]).is_err());
}

#[test]
fn parameters_survive_archive_round_trip() {
    let params = RecurrentFusionParams::random(&[4, 8, 16], &[16, 32, 64], 7);
    let dir = tempfile::tempdir().unwrap();
    let (bin, json) = (dir.path().join("w.bin"), dir.path().join("w.json"));
    params.to_archive().save(&bin, &json).unwrap();
    let back = RecurrentFusionParams::from_archive(&TensorArchive::load(&bin, &json).unwrap()).unwrap();
    assert_eq!(back, params);
    let mut truncated = std::fs::read(&bin).unwrap();
    truncated.pop();
    std::fs::write(&bin, truncated).unwrap();
    assert!(TensorArchive::load(&bin, &json).is_err());
}

#[test]
fn hidden_state_stays_bounded() {
    let params = RecurrentFusionParams::random(&[4, 8], &[6, 10], 9);
    let ex = ToyExtractor::with_levels(5, &[4, 8], &[6, 10], 10);
    let mut runner = RecurrentRunner::new(&ex, &params);
    for s in stacks(16, 16, 100, Layout::Voxel { bins: 5 }, 11) {
        runner.step(&s).unwrap();
        assert!(runner.state().unwrap().max_abs_hidden() < 1.0);
    }
    assert_eq!(runner.steps(), 100);
}
