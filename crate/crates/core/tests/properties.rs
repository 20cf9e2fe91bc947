use adascan::model::entropy_reg;
use adascan::numcore::{finite_diff_check, NodeId, Tape, Tensor};
use adascan::pooling::{
    adascan_pool, max_of_frames, mean_of_frames, mean_pool, weighted_mean_closed_form, ConstantImportance,
    FeatureSequence, ReplayImportance,
};
use adascan::train::clip_gradients;
use proptest::collection::vec;
use proptest::prelude::*;

fn config(cases: u32) -> ProptestConfig {
    ProptestConfig {
        cases,
        failure_persistence: None,
        ..ProptestConfig::default()
    }
}

fn inf_norm(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// Frames as a `T × D` tensor plus importances in `(0, 1]` with `γ₁ = 1`.
fn frames_and_gammas(max_t: usize, max_d: usize) -> impl Strategy<Value = (Tensor<f64>, Vec<f64>)> {
    (1..=max_t, 1..=max_d).prop_flat_map(|(t, d)| {
        (vec(-2.0..2.0f64, t * d), vec(0.01..=1.0f64, t - 1)).prop_map(move |(x, g)| {
            let mut gammas = vec![1.0];
            gammas.extend(g);
            (Tensor::matrix(t, d, x).unwrap(), gammas)
        })
    })
}

fn record(tape: &mut Tape<f64>, frames: &Tensor<f64>) -> Vec<NodeId> {
    frames
        .to_rows()
        .into_iter()
        .map(|r| tape.constant(Tensor::vector(r)).unwrap())
        .collect()
}

/// `Σ w ⊙ op(x)` with fixed random weights, checked against central differences.
fn check_unary(x: Vec<f64>, w: Vec<f64>, op: impl Fn(&mut Tape<f64>, NodeId) -> adascan::Result<NodeId>) -> f64 {
    let report = finite_diff_check(
        |tape, p| {
            let y = op(tape, p[0])?;
            let n = tape.value(y).len();
            let wn = tape.constant(Tensor::vector(w[..n].to_vec()))?;
            tape.dot(wn, y)
        },
        &[Tensor::vector(x)],
        1e-5,
    )
    .unwrap();
    report.max_rel_error()
}

/// Loss weights bounded away from zero so that no gradient sinks into
/// finite-difference roundoff.
fn weights(n: usize) -> impl Strategy<Value = Vec<f64>> {
    vec(prop_oneof![-2.0..-0.5f64, 0.5..2.0f64], n)
}

fn pair() -> impl Strategy<Value = (Vec<f64>, Vec<f64>)> {
    (1usize..8).prop_flat_map(|n| (vec(-2.0..2.0f64, n), weights(16)))
}

fn positive_pair() -> impl Strategy<Value = (Vec<f64>, Vec<f64>)> {
    (1usize..8).prop_flat_map(|n| (vec(0.1..2.0f64, n), weights(16)))
}

const PRIMITIVE_TOL: f64 = 1e-6;

proptest! {
    #![proptest_config(config(100))]

    #[test]
    fn tanh_gradient((x, w) in pair()) {
        let e = check_unary(x, w, |t, a| t.tanh(a));
        prop_assert!(e < PRIMITIVE_TOL, "relative error {e}");
    }

    #[test]
    fn sigmoid_gradient((x, w) in pair()) {
        let e = check_unary(x, w, |t, a| t.sigmoid(a));
        prop_assert!(e < PRIMITIVE_TOL, "relative error {e}");
    }

    #[test]
    fn softmax_gradient((x, w) in pair()) {
        let e = check_unary(x, w, |t, a| t.softmax(a));
        prop_assert!(e < PRIMITIVE_TOL, "relative error {e}");
    }

    #[test]
    fn log_gradient((x, w) in positive_pair()) {
        let e = check_unary(x, w, |t, a| t.log(a));
        prop_assert!(e < PRIMITIVE_TOL, "relative error {e}");
    }

    #[test]
    fn neg_entropy_gradient((x, w) in positive_pair()) {
        let e = check_unary(x, w, |t, a| t.neg_entropy(a));
        prop_assert!(e < PRIMITIVE_TOL, "relative error {e}");
    }

    #[test]
    fn l2_normalize_gradient((x, w) in pair()) {
        prop_assume!(x.iter().map(|v| v * v).sum::<f64>() > 0.01);
        let e = check_unary(x, w, |t, a| t.l2_normalize(a, 1e-12));
        prop_assert!(e < PRIMITIVE_TOL, "relative error {e}");
    }

    #[test]
    fn abs_gradient((x, w) in pair()) {
        prop_assume!(x.iter().all(|v| v.abs() > 1e-3));
        let e = check_unary(x, w, |t, a| t.abs(a));
        prop_assert!(e < PRIMITIVE_TOL, "relative error {e}");
    }

    #[test]
    fn arithmetic_gradients((x, w) in pair(), c in -2.0..2.0f64) {
        let e = check_unary(x.clone(), w.clone(), |t, a| {
            let sq = t.scale_const(a, c)?;
            let s = t.add(sq, a)?;
            t.sub(s, a)
        });
        prop_assert!(e < PRIMITIVE_TOL, "relative error {e}");
        let e = check_unary(x, w, |t, a| {
            let s = t.sum(a)?;
            let y = t.scale(a, s)?;
            let first = t.pick(a, 0)?;
            let sq = t.scale(first, first)?;
            let three = t.constant(Tensor::scalar(3.0))?;
            let den = t.add(three, sq)?;
            t.div_scalar(y, den)
        });
        prop_assert!(e < PRIMITIVE_TOL, "relative error {e}");
    }

    #[test]
    fn mask_and_stack_gradients((x, w) in pair(), keep in vec(0.0..2.0f64, 8)) {
        let e = check_unary(x.clone(), w.clone(), |t, a| {
            let n = t.value(a).len();
            let m = t.mask(a, keep[..n].to_vec())?;
            let parts = (0..n).map(|i| t.pick(m, i)).collect::<adascan::Result<Vec<_>>>()?;
            let d = t.dot(a, a)?;
            let mut all = parts;
            all.push(d);
            let st = t.stack(&all)?;
            t.tanh(st)
        });
        prop_assert!(e < PRIMITIVE_TOL, "relative error {e}");
    }

    #[test]
    fn matvec_and_affine_gradients(
        (rows, cols) in (1usize..5, 1usize..5),
        entries in vec(-2.0..2.0f64, 16 + 4 + 4),
        w in weights(4),
    ) {
        let m = Tensor::matrix(rows, cols, entries[..rows * cols].to_vec()).unwrap();
        let v = Tensor::vector(entries[16..16 + cols].to_vec());
        let b = Tensor::vector(entries[20..20 + rows].to_vec());
        let wv = Tensor::vector(w[..rows].to_vec());
        let check = |affine: bool| {
            finite_diff_check(
                |tape, p| {
                    let y = if affine { tape.affine(p[0], p[1], p[2])? } else { tape.matvec(p[0], p[1])? };
                    let wn = tape.constant(wv.clone())?;
                    tape.dot(wn, y)
                },
                &[m.clone(), v.clone(), b.clone()],
                1e-5,
            )
            .unwrap()
        };
        for affine in [false, true] {
            let report = check(affine);
            prop_assert!(report.max_rel_error() < PRIMITIVE_TOL, "{report:?}");
        }
    }

    #[test]
    fn coordinate_max_gradient(frames in vec(vec(-2.0..2.0f64, 3), 1..6), w in weights(3)) {
        for j in 0..3 {
            let mut col: Vec<f64> = frames.iter().map(|f| f[j]).collect();
            col.sort_by(f64::total_cmp);
            prop_assume!(col.windows(2).all(|p| p[1] - p[0] > 1e-3));
        }
        let params: Vec<Tensor<f64>> = frames.iter().map(|f| Tensor::vector(f.clone())).collect();
        let report = finite_diff_check(
            |tape, p| {
                let m = tape.coordinate_max(p)?;
                let wn = tape.constant(Tensor::vector(w.clone()))?;
                tape.dot(wn, m)
            },
            &params,
            1e-5,
        )
        .unwrap();
        prop_assert!(report.max_rel_error() < PRIMITIVE_TOL, "{report:?}");
    }

    #[test]
    fn softmax_sums_to_one_and_ignores_shifts(x in vec(-50.0..50.0f64, 1..30), c in -100.0..100.0f64) {
        let mut tape = Tape::new();
        let a = tape.constant(Tensor::vector(x.clone())).unwrap();
        let p = tape.softmax(a).unwrap();
        let shifted = tape.constant(Tensor::vector(x.iter().map(|v| v + c).collect())).unwrap();
        let q = tape.softmax(shifted).unwrap();
        let p = tape.value(p).data();
        prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        prop_assert!(p.iter().all(|&v| v >= 0.0));
        prop_assert!(inf_norm(p, tape.value(q).data()) < 1e-12);
    }

    #[test]
    fn l2_normalize_has_unit_norm(x in vec(-10.0..10.0f64, 1..40)) {
        prop_assume!(x.iter().any(|v| v.abs() > 1e-6));
        let mut tape = Tape::new();
        let a = tape.constant(Tensor::vector(x)).unwrap();
        let u = tape.l2_normalize(a, 1e-12).unwrap();
        prop_assert!((tape.value(u).norm_l2() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn recursion_matches_closed_form((frames, gammas) in frames_and_gammas(50, 64)) {
        let mut tape = Tape::new();
        let ids = record(&mut tape, &frames);
        let out = adascan_pool(&mut tape, &ids, &ReplayImportance(gammas.clone())).unwrap();
        let closed = weighted_mean_closed_form(&frames, &gammas).unwrap();
        prop_assert!(inf_norm(tape.value(out.psi).data(), &closed) < 1e-10);
        prop_assert_eq!(out.state.trace(), &gammas[..]);
        prop_assert!((out.state.gamma_hat() - gammas.iter().sum::<f64>()).abs() < 1e-12);
    }

    #[test]
    fn pooled_vector_stays_in_frame_hull((frames, gammas) in frames_and_gammas(30, 16)) {
        let mut tape = Tape::new();
        let ids = record(&mut tape, &frames);
        let out = adascan_pool(&mut tape, &ids, &ReplayImportance(gammas)).unwrap();
        let psi = tape.value(out.psi).data();
        for j in 0..frames.cols() {
            let col = (0..frames.rows()).map(|t| frames.row(t)[j]);
            let (lo, hi) = col.fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), v| (l.min(v), h.max(v)));
            prop_assert!(psi[j] >= lo - 1e-12 && psi[j] <= hi + 1e-12);
        }
    }

    #[test]
    fn closed_form_ignores_order((frames, gammas) in frames_and_gammas(20, 8), rot in 0usize..20) {
        let t = frames.rows();
        let perm: Vec<usize> = (0..t).map(|i| (i * 7 + rot) % t).collect();
        prop_assume!({
            let mut p = perm.clone();
            p.sort_unstable();
            p.dedup();
            p.len() == t
        });
        let rows = frames.to_rows();
        let shuffled = Tensor::from_rows(&perm.iter().map(|&i| rows[i].clone()).collect::<Vec<_>>()).unwrap();
        let g: Vec<f64> = perm.iter().map(|&i| gammas[i]).collect();
        let a = weighted_mean_closed_form(&frames, &gammas).unwrap();
        let b = weighted_mean_closed_form(&shuffled, &g).unwrap();
        prop_assert!(inf_norm(&a, &b) < 1e-12);
    }

    #[test]
    fn unit_importance_is_mean_pooling((frames, _) in frames_and_gammas(50, 64)) {
        let mut tape = Tape::new();
        let ids = record(&mut tape, &frames);
        let out = adascan_pool(&mut tape, &ids, &ConstantImportance(1.0)).unwrap();
        let mean = mean_pool(&mut tape, &ids).unwrap();
        prop_assert!(inf_norm(tape.value(out.psi).data(), tape.value(mean).data()) < 1e-12);
        let seq = FeatureSequence::new("p", 0, frames, None).unwrap();
        prop_assert!(inf_norm(tape.value(mean).data(), &mean_of_frames(&seq)) < 1e-12);
    }

    #[test]
    fn max_pooling_is_exact((frames, _) in frames_and_gammas(30, 16)) {
        let mut tape = Tape::new();
        let ids = record(&mut tape, &frames);
        let m = adascan::pooling::max_pool(&mut tape, &ids).unwrap();
        let seq = FeatureSequence::new("p", 0, frames.clone(), None).unwrap();
        let oracle: Vec<f64> = (0..frames.cols())
            .map(|j| (0..frames.rows()).map(|t| frames.row(t)[j]).fold(f64::NEG_INFINITY, f64::max))
            .collect();
        prop_assert_eq!(tape.value(m).data(), &oracle[..]);
        prop_assert_eq!(max_of_frames(&seq), oracle);
    }

    #[test]
    fn entropy_within_bounds(g in vec(1e-6..=1.0f64, 1..60)) {
        let t = g.len();
        let mut tape = Tape::new();
        let n = tape.constant(Tensor::vector(g)).unwrap();
        let h = entropy_reg(&mut tape, n).unwrap();
        let h = tape.scalar(h).unwrap();
        prop_assert!(h >= -1e-15 && h <= (t as f64).ln() + 1e-12, "H = {h}, T = {t}");
    }

    #[test]
    fn clipping_never_increases_norm(blocks in vec(vec(-10.0..10.0f64, 1..6), 1..5), clip in 0.01..20.0f64) {
        let mut grads: Vec<Tensor<f64>> = blocks.into_iter().map(Tensor::vector).collect();
        let norm = |g: &[Tensor<f64>]| g.iter().flat_map(|b| b.data()).map(|v| v * v).sum::<f64>().sqrt();
        let before = norm(&grads);
        let reported = clip_gradients(&mut grads, clip).unwrap();
        let after = norm(&grads);
        prop_assert!((reported - before).abs() < 1e-12 * before.max(1.0));
        prop_assert!(after <= before + 1e-12);
        prop_assert!((after - before.min(clip)).abs() < 1e-12 * before.max(1.0));
    }
}
