//! Sparse attention masks and the cross-attention fusion block.

mod common;

use common::*;
use proptest::prelude::*;
use sfnet::attention::{sparsity_levels, stb_forward, StbParams, DEFAULT_ALPHAS};
use sfnet::autograd::Graph;
use sfnet::fusion::{cafb_forward, CafbParams};
use sfnet::params::ParamStore;
use sfnet::Tensor;

/// `softmax(topk(S, k))` rows for a random score matrix.
fn masked_rows(scores: &Tensor<f64>, k: usize) -> Vec<f64> {
    let g = Graph::new();
    g.constant(scores.clone()).topk_mask(k).unwrap().row_softmax().unwrap().value().to_vec()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn mask_rows_keep_k_and_nest(seed in 0u64..10_000, n in 2usize..17) {
        let mut r = rng(seed);
        let scores = random_tensor(&mut r, &[n, n]);
        let levels = sparsity_levels(n, &DEFAULT_ALPHAS).unwrap();
        let mut previous: Option<Vec<f64>> = None;
        for &k in &levels {
            let m = masked_rows(&scores, k);
            for row in m.chunks(n) {
                prop_assert_eq!(row.iter().filter(|&&v| v != 0.0).count(), k);
                prop_assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            }
            if let Some(prev) = &previous {
                for (a, b) in prev.iter().zip(&m) {
                    prop_assert!(*a == 0.0 || *b != 0.0, "support shrank");
                }
            }
            previous = Some(m);
        }
    }

    #[test]
    fn kept_entries_are_the_largest(seed in 0u64..10_000, n in 2usize..12, k_frac in 0.05f64..1.0) {
        let mut r = rng(seed);
        let scores = random_tensor(&mut r, &[n, n]);
        let k = ((k_frac * n as f64).ceil() as usize).clamp(1, n);
        let m = masked_rows(&scores, k);
        for (row, srow) in m.chunks(n).zip(scores.data().chunks(n)) {
            let min_kept = (0..n).filter(|&j| row[j] != 0.0).map(|j| srow[j]).fold(f64::INFINITY, f64::min);
            let max_dropped = (0..n).filter(|&j| row[j] == 0.0).map(|j| srow[j]).fold(f64::NEG_INFINITY, f64::max);
            prop_assert!(min_kept > max_dropped);
        }
    }

    #[test]
    fn cafb_shape_and_mode_split(seed in 0u64..10_000, n in 1usize..8, d in 1usize..6) {
        let mut r = rng(seed);
        let mut store = ParamStore::<f64>::new();
        let block = CafbParams::new(&mut store, &mut r, "f", d, 2 * d, 1e-5);
        let th = random_tensor(&mut r, &[n, d]);
        let tx = random_tensor(&mut r, &[n, d]);
        let run = |b: &CafbParams, a: &Tensor<f64>, c: &Tensor<f64>| {
            let g = Graph::new();
            let p = store.bind(&g, false);
            cafb_forward(&p, b, g.constant(a.clone()), g.constant(c.clone())).unwrap().value()
        };
        let sym = run(&block, &th, &tx);
        prop_assert_eq!(sym.shape(), &[n, 2 * d]);
        let mut lit_block = block.clone();
        lit_block.shared_hsi_residual = true;
        let lit = run(&lit_block, &th, &tx);
        for i in 0..n {
            let (a, b) = (&sym.data()[i * 2 * d..(i + 1) * 2 * d], &lit.data()[i * 2 * d..(i + 1) * 2 * d]);
            prop_assert_eq!(&a[..d], &b[..d]);
        }
        // exchanging streams and parameter groups swaps the halves
        let swapped = run(&block.swapped(), &tx, &th);
        for i in 0..n {
            let row = &sym.data()[i * 2 * d..(i + 1) * 2 * d];
            let srow = &swapped.data()[i * 2 * d..(i + 1) * 2 * d];
            prop_assert_eq!(&row[..d], &srow[d..]);
            prop_assert_eq!(&row[d..], &srow[..d]);
        }
    }
}

#[test]
fn shared_residual_changes_the_aux_half() {
    let mut r = rng(11);
    let mut store = ParamStore::<f64>::new();
    let block = CafbParams::new(&mut store, &mut r, "f", 4, 8, 1e-5);
    let mut lit = block.clone();
    lit.shared_hsi_residual = true;
    let th = random_tensor(&mut r, &[5, 4]);
    let tx = random_tensor(&mut r, &[5, 4]);
    let g = Graph::new();
    let p = store.bind(&g, false);
    let a = cafb_forward(&p, &block, g.constant(th.clone()), g.constant(tx.clone())).unwrap().value();
    let b = cafb_forward(&p, &lit, g.constant(th), g.constant(tx)).unwrap().value();
    let differs = (0..5).any(|i| (4..8).any(|j| a.at(&[i, j]) != b.at(&[i, j])));
    assert!(differs);
}

#[test]
fn zeroed_cafb_is_concatenation() {
    let mut r = rng(12);
    let mut store = ParamStore::<f64>::new();
    let block = CafbParams::new(&mut store, &mut r, "f", 3, 6, 1e-5);
    block.zero_residual_terminals(&mut store);
    let th = random_tensor(&mut r, &[4, 3]);
    let tx = random_tensor(&mut r, &[4, 3]);
    let g = Graph::new();
    let p = store.bind(&g, false);
    let out = cafb_forward(&p, &block, g.constant(th.clone()), g.constant(tx.clone())).unwrap().value();
    for i in 0..4 {
        for j in 0..3 {
            assert_eq!(out.at(&[i, j]).to_bits(), th.at(&[i, j]).to_bits());
            assert_eq!(out.at(&[i, j + 3]).to_bits(), tx.at(&[i, j]).to_bits());
        }
    }
}

#[test]
fn cafb_rejects_mismatched_streams() {
    let mut r = rng(13);
    let mut store = ParamStore::<f64>::new();
    let block = CafbParams::new(&mut store, &mut r, "f", 3, 6, 1e-5);
    let g = Graph::new();
    let p = store.bind(&g, false);
    let a = g.constant(random_tensor(&mut r, &[4, 3]));
    let b = g.constant(random_tensor(&mut r, &[5, 3]));
    let err = cafb_forward(&p, &block, a, b).unwrap_err();
    assert!(err.to_string().contains("[4, 3]") && err.to_string().contains("[5, 3]"), "{err}");
}

#[test]
fn stb_preserves_shape_and_is_finite() {
    let mut r = rng(14);
    let mut store = ParamStore::<f32>::new();
    let block = StbParams::new(&mut store, &mut r, "s", 8, 16, &DEFAULT_ALPHAS, 1e-5).unwrap();
    let x: Tensor<f32> = random_tensor(&mut r, &[9, 8]).cast();
    let g = Graph::new();
    let p = store.bind(&g, false);
    let y = stb_forward(&p, &block, g.constant(x)).unwrap().value();
    assert_eq!(y.shape(), &[9, 8]);
    assert!(y.is_finite());
}

#[test]
fn top_k_ties_keep_lowest_index() {
    let g = Graph::<f64>::new();
    let s = g.constant(Tensor::from_f64([1, 4], &[1.0, 2.0, 2.0, 2.0]).unwrap());
    let m = s.topk_mask(2).unwrap().value();
    assert_eq!(m.data()[1], 2.0);
    assert_eq!(m.data()[2], 2.0);
    assert_eq!(m.data()[3], f64::MIN);
    assert_eq!(m.data()[0], f64::MIN);
}
