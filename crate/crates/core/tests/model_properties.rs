use std::sync::Arc;

use csdp_core::dpmamba::{ssm_forward, ssm_reverse, ssm_states, SsmConfig, SsmParams};
use csdp_core::kangin::{classify, gin_layer_rows, kan_apply, ClassifierHead, GinLayerParams, KanBank, KanGin, KanGinVars, forward_on_tape};
use csdp_core::numerics::{SparseRows, Tape, Tensor};
use csdp_core::simgraph::{batch_subgraph, build_graph, DistanceMatrix, GraphOrder, SENTINEL};
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_seq(rng: &mut ChaCha8Rng, t: usize, d: usize) -> Tensor {
    Tensor::new((0..t * d).map(|_| rng.random_range(-2.0..2.0)).collect(), vec![t, d]).unwrap()
}

fn random_rows(rng: &mut ChaCha8Rng, n: usize) -> SparseRows {
    let mut rows = vec![Vec::new(); n];
    for (i, row) in rows.iter_mut().enumerate() {
        for j in 0..n {
            if j != i && rng.random_bool(0.4) {
                row.push((j, rng.random_range(0.05..1.0)));
            }
        }
    }
    Arc::new(rows)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn reverse_path_is_conjugated_forward(seed in any::<u64>(), t in 1usize..12, d in 1usize..5, s in 1usize..5) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let p = SsmParams::init(&SsmConfig::new(d, s), &mut rng).unwrap();
        let x = random_seq(&mut rng, t, d);
        let mut flipped = Vec::new();
        for r in (0..t).rev() {
            flipped.extend_from_slice(x.row(r));
        }
        let y = ssm_forward(&p, &Tensor::new(flipped, vec![t, d]).unwrap()).unwrap();
        let yr = ssm_reverse(&p, &x).unwrap();
        for r in 0..t {
            prop_assert_eq!(yr.row(r), y.row(t - 1 - r));
        }
    }

    #[test]
    fn forward_path_is_linear(seed in any::<u64>(), t in 1usize..10, a in -3.0f64..3.0, b in -3.0f64..3.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let p = SsmParams::init(&SsmConfig::new(3, 4), &mut rng).unwrap();
        let x = random_seq(&mut rng, t, 3);
        let z = random_seq(&mut rng, t, 3);
        let mix = Tensor::new(x.data().iter().zip(z.data()).map(|(u, v)| a * u + b * v).collect(), vec![t, 3]).unwrap();
        let (fx, fz, fm) = (ssm_forward(&p, &x).unwrap(), ssm_forward(&p, &z).unwrap(), ssm_forward(&p, &mix).unwrap());
        for ((m, u), v) in fm.data().iter().zip(fx.data()).zip(fz.data()) {
            prop_assert!((m - (a * u + b * v)).abs() <= 1e-9);
        }
    }

    #[test]
    fn diagonal_states_stay_bounded(seed in any::<u64>(), t in 1usize..40) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let p = SsmParams::init(&SsmConfig::new(3, 4), &mut rng).unwrap();
        let x = random_seq(&mut rng, t, 3);
        let h = ssm_states(&p, &x).unwrap();
        let a_max = p.forward.transition().data().iter().copied().fold(0.0, f64::max);
        let b_norm = p.forward.b.data().iter().map(|v| v * v).sum::<f64>().sqrt();
        let x_max = (0..t).map(|r| x.row(r).iter().map(|v| v * v).sum::<f64>().sqrt()).fold(0.0, f64::max);
        let bound = b_norm * x_max / (1.0 - a_max);
        for r in 0..t {
            let norm = h.row(r).iter().map(|v| v * v).sum::<f64>().sqrt();
            prop_assert!(norm <= bound * (1.0 + 1e-12), "{} > {}", norm, bound);
        }
    }

    #[test]
    fn gin_layer_is_permutation_equivariant(seed in any::<u64>(), n in 1usize..8) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut p = GinLayerParams::init(3, &mut rng);
        p.epsilon = Tensor::vector(vec![rng.random_range(-0.5..0.5)]);
        let h = random_seq(&mut rng, n, 3);
        let rows = random_rows(&mut rng, n);
        let mut perm: Vec<usize> = (0..n).collect();
        perm.shuffle(&mut rng);
        let mut inv = vec![0; n];
        for (k, &i) in perm.iter().enumerate() {
            inv[i] = k;
        }
        let ph = Tensor::from_rows(&perm.iter().map(|&i| h.row(i).to_vec()).collect::<Vec<_>>()).unwrap();
        let prows: SparseRows = Arc::new(perm.iter().map(|&i| rows[i].iter().map(|&(j, w)| (inv[j], w)).collect()).collect());
        let out = gin_layer_rows(&p, &h, &rows).unwrap();
        let pout = gin_layer_rows(&p, &ph, &prows).unwrap();
        for (k, &i) in perm.iter().enumerate() {
            prop_assert_eq!(pout.row(k), out.row(i));
        }
    }

    #[test]
    fn head_rows_are_distributions(seed in any::<u64>(), n in 1usize..6) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let head = ClassifierHead::init(4, 3, &mut rng);
        let h = random_seq(&mut rng, n, 4);
        let lp = classify(&head, &h).unwrap();
        for r in 0..n {
            let lse = lp.row(r).iter().map(|v| v.exp()).sum::<f64>().ln();
            prop_assert!(lse.abs() <= 1e-9);
        }
    }

    #[test]
    fn graph_rows_are_normalized_and_sparse(seed in any::<u64>(), n in 2usize..20, k in 1usize..6, clusters in 1usize..4) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let ids: Vec<usize> = (0..n).map(|_| rng.random_range(0..clusters)).collect();
        let mut data = vec![0.0; n * n];
        for i in 0..n {
            for j in i + 1..n {
                let v = if ids[i] == ids[j] { rng.random_range(0.0..5.0) } else { SENTINEL };
                data[i * n + j] = v;
                data[j * n + i] = v;
            }
        }
        let g = build_graph(&DistanceMatrix::new(n, data).unwrap(), 1.0, k, GraphOrder::Masked).unwrap();
        let check = |rows: &SparseRows| -> Result<(), TestCaseError> {
            for row in rows.iter() {
                prop_assert!(row.len() <= k);
                if !row.is_empty() {
                    prop_assert!((row.iter().map(|&(_, w)| w).sum::<f64>() - 1.0).abs() <= 1e-9);
                }
            }
            Ok(())
        };
        check(&g.normalized)?;
        for (i, row) in g.raw.rows.iter().enumerate() {
            prop_assert!(row.iter().all(|&(j, _)| ids[j] == ids[i] && j != i));
        }
        let mut pick: Vec<usize> = (0..n).filter(|_| rng.random_bool(0.6)).collect();
        pick.shuffle(&mut rng);
        check(&batch_subgraph(&g, &pick).unwrap().normalized)?;
    }
}

#[test]
fn kan_is_continuous_across_knots_and_clamp() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let bank = KanBank::init(1, 3, &mut rng);
    let step = 1e-7;
    let mut x = -4.0;
    let mut worst: f64 = 0.0;
    while x < 4.0 {
        let a = kan_apply(&bank, &[x]).unwrap();
        let b = kan_apply(&bank, &[x + step]).unwrap();
        for (u, v) in a.iter().zip(&b) {
            worst = worst.max((u - v).abs());
        }
        x += 1.0 / 64.0 - step;
    }
    // Knots sit at multiples of 0.75 and the clamp at ±3; every one is crossed above.
    for knot in [-3.0, -2.25, -0.75, 0.0, 1.5, 3.0] {
        let a = kan_apply(&bank, &[knot - step]).unwrap();
        let b = kan_apply(&bank, &[knot + step]).unwrap();
        for (u, v) in a.iter().zip(&b) {
            worst = worst.max((u - v).abs());
        }
    }
    assert!(worst < 1e-5, "jump of {worst}");
}

#[test]
fn graph_free_stack_acts_per_node() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let model = KanGin::init(3, 2, 2, &mut rng).unwrap();
    let h = random_seq(&mut rng, 4, 3);
    let run = |h: &Tensor, n: usize| {
        let mut tape = Tape::new();
        let vars = KanGinVars::constants(&mut tape, &model);
        let hv = tape.constant(h.clone());
        let rows: SparseRows = Arc::new(vec![Vec::new(); n]);
        let out = forward_on_tape(&mut tape, &vars, hv, &rows).unwrap();
        tape.value(out).clone()
    };
    let all = run(&h, 4);
    for i in 0..4 {
        let one = run(&Tensor::matrix(1, 3, h.row(i).to_vec()).unwrap(), 1);
        assert_eq!(one.row(0), all.row(i));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn relabeled_graph_matches_rebuilt_graph(seed in any::<u64>(), n in 2usize..15, k in 1usize..5) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut data = vec![0.0; n * n];
        for i in 0..n {
            for j in i + 1..n {
                let v = if rng.random_bool(0.2) { SENTINEL } else { rng.random_range(0.0..5.0) };
                data[i * n + j] = v;
                data[j * n + i] = v;
            }
        }
        let d = DistanceMatrix::new(n, data).unwrap();
        let mut perm: Vec<usize> = (0..n).collect();
        perm.shuffle(&mut rng);
        let g = build_graph(&d, 1.0, k, GraphOrder::Masked).unwrap();
        let rebuilt = build_graph(&d.permuted(&perm), 1.0, k, GraphOrder::Masked).unwrap();
        prop_assert_eq!(g.permuted(&perm).unwrap(), rebuilt);
    }
}
