use proptest::prelude::*;
use rand::Rng;
use smoo_core::acq::{
    diversity_target, train_acquisition, window_stats, AcqNet, FeatureVector, HistoryBuffer, HistoryRecord,
};
use smoo_core::rng::stream;

fn record(values: Vec<f64>, dhv: f64, ddiv: f64, i: usize) -> HistoryRecord {
    HistoryRecord {
        feat: FeatureVector { values, m: 2, k: 5 },
        delta_hv: dhv,
        delta_div_norm: ddiv,
        eval_index: i,
    }
}

fn linear_buffer(n: usize, seed: u64) -> HistoryBuffer {
    let mut rng = stream(seed, 1);
    let coef: Vec<f64> = (0..13).map(|_| rng.gen::<f64>()).collect();
    let mut b = HistoryBuffer::new(1000);
    for i in 0..n {
        let x: Vec<f64> = (0..13).map(|_| rng.gen::<f64>()).collect();
        let y: f64 = 0.1 * x.iter().zip(&coef).map(|(a, c)| a * c).sum::<f64>();
        let ddiv = x[0] - x[1];
        b.push(record(x, y, ddiv, i)).unwrap();
    }
    b
}

#[test]
fn learns_linear_hv_target() {
    let b = linear_buffer(300, 4);
    let mut net = AcqNet::new(13, 64, 5e-3, &mut stream(4, 2)).unwrap();
    train_acquisition(&mut net, &b, 0.5, 1e-4, 500, 64, &mut stream(4, 3)).unwrap().unwrap();
    let ys: Vec<f64> = b.records().map(|r| r.delta_hv).collect();
    let preds: Vec<f64> = b.records().map(|r| net.score(&r.feat).unwrap().0).collect();
    let mean = ys.iter().sum::<f64>() / ys.len() as f64;
    let ss_tot: f64 = ys.iter().map(|y| (y - mean).powi(2)).sum();
    let ss_res: f64 = ys.iter().zip(&preds).map(|(y, p)| (y - p).powi(2)).sum();
    let r2 = 1.0 - ss_res / ss_tot;
    assert!(r2 >= 0.9, "R² = {r2}");
}

#[test]
fn constant_buffer_regresses_to_constants() {
    let mut b = HistoryBuffer::new(1000);
    for i in 0..50 {
        b.push(record(vec![0.3; 13], 0.8, -0.4, i)).unwrap();
    }
    let mut net = AcqNet::new(13, 64, 5e-3, &mut stream(5, 2)).unwrap();
    train_acquisition(&mut net, &b, 0.5, 1e-4, 500, 64, &mut stream(5, 3)).unwrap();
    let (h, d) = net.score(&b.records().next().unwrap().feat).unwrap();
    assert!((h - 0.8).abs() <= 0.05 * 0.8, "{h}");
    assert!((d + 0.4).abs() <= 0.05 * 0.4, "{d}");
}

#[test]
fn loss_descends_on_fixed_buffer() {
    let b = linear_buffer(200, 6);
    let mut net = AcqNet::new(13, 64, 5e-3, &mut stream(6, 2)).unwrap();
    let t = train_acquisition(&mut net, &b, 0.5, 1e-4, 300, 64, &mut stream(6, 3)).unwrap().unwrap();
    let head: f64 = t.losses[..20].iter().sum::<f64>() / 20.0;
    let tail: f64 = t.losses[t.losses.len() - 20..].iter().sum::<f64>() / 20.0;
    assert!(tail < head);
}

#[test]
fn zero_lambda_div_removes_diversity_gradient() {
    let b = linear_buffer(20, 7);
    let net = AcqNet::new(13, 16, 5e-3, &mut stream(7, 2)).unwrap();
    let recs: Vec<&HistoryRecord> = b.records().collect();
    let (_, g) = net.loss_and_grad(&recs, 0.0, 0.0).unwrap();
    // output layer: weights row-major (2 × 16) then biases (2)
    let (w_off, b_off) = net.mlp().layer_offsets(1);
    for j in 0..16 {
        assert_eq!(g[w_off + 16 + j], 0.0);
    }
    assert_eq!(g[b_off + 1], 0.0);
}

#[test]
fn empty_buffer_is_skipped() {
    let b = HistoryBuffer::new(10);
    let mut net = AcqNet::new(13, 8, 5e-3, &mut stream(8, 2)).unwrap();
    assert!(train_acquisition(&mut net, &b, 0.5, 1e-4, 10, 64, &mut stream(8, 3)).unwrap().is_none());
}

#[test]
fn scaled_diversity_stream_stays_bounded() {
    let mut rng = stream(9, 0);
    let mut b = HistoryBuffer::new(10);
    for i in 0..200 {
        let d = 1000.0 * (rng.gen::<f64>() - 0.5);
        let v = diversity_target(0.0, d, &mut b);
        if i >= 20 {
            assert!((-10.0..=10.0).contains(&v), "{v}");
        }
    }
}

proptest! {
    #[test]
    fn buffer_capacity_and_window(cap in 1usize..30, n in 0usize..80, w in 1usize..40) {
        let mut b = HistoryBuffer::new(cap);
        let vals: Vec<f64> = (0..n).map(|i| (i * 7 % 11) as f64).collect();
        for (i, v) in vals.iter().enumerate() {
            b.push(record(vec![0.0; 13], *v, 0.0, i)).unwrap();
            prop_assert!(b.len() <= cap);
        }
        let idx: Vec<usize> = b.records().map(|r| r.eval_index).collect();
        let start = n.saturating_sub(cap);
        prop_assert_eq!(idx, (start..n).collect::<Vec<_>>());
        let take = b.len().min(w);
        let tail = &vals[n - take..];
        let (mu, sd) = window_stats(&b, w);
        if take == 0 {
            prop_assert_eq!((mu, sd), (0.0, 0.0));
        } else {
            let m = tail.iter().sum::<f64>() / take as f64;
            let s = (tail.iter().map(|v| (v - m).powi(2)).sum::<f64>() / take as f64).sqrt();
            prop_assert!((mu - m).abs() < 1e-12 && (sd - s).abs() < 1e-12);
        }
    }

    #[test]
    fn diversity_sign_matches_raw_gain(before in -5.0f64..5.0, gain in -5.0f64..5.0) {
        let mut b = HistoryBuffer::new(5);
        let v = diversity_target(before, before + gain, &mut b);
        prop_assert_eq!(v.signum() == gain.signum() || gain == 0.0, true);
    }
}
