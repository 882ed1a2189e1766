use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use hvmax::hypervolume::{exact_hypervolume, hv_gradient, mc_hypervolume, Point, PointSet};
use hvmax::objective::{
    ham_grad, ham_value, minibatch_loglik, normalize, weighted_loglik, Batch, ObjectiveConfig,
};
use hvmax::optim::{train_ham, TrainConfig};
use hvmax::pareto::{dominates, front_dominates, pareto_front, RewardVector};
use hvmax::policy::{feature, gen_dataset, DatasetConfig, MultiHeadPolicy, PolicyShape};

fn point_rows(max_k: usize, j: usize) -> impl Strategy<Value = Vec<Vec<f64>>> {
    prop::collection::vec(prop::collection::vec(0.0..=1.0f64, j), 1..=max_k)
}

fn rows_and_point() -> impl Strategy<Value = (Vec<Vec<f64>>, Vec<f64>, Vec<f64>)> {
    (1usize..=4).prop_flat_map(|j| {
        (
            point_rows(5, j),
            prop::collection::vec(0.0..=1.0f64, j),
            prop::collection::vec(0.0..=1.0f64, j),
        )
    })
}

fn vol(rows: &[Vec<f64>]) -> f64 {
    exact_hypervolume(&PointSet::from_rows(rows).unwrap()).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig {
        cases: 256,
        failure_persistence: None,
        ..ProptestConfig::default()
    })]

    #[test]
    fn adding_a_point_never_shrinks_volume((rows, p, _) in rows_and_point()) {
        let mut more = rows.clone();
        more.push(p);
        prop_assert!(vol(&more) >= vol(&rows) - 1e-12);
    }

    #[test]
    fn marginal_gains_shrink((rows, p, q) in rows_and_point()) {
        let with = |extra: &[&Vec<f64>]| {
            let mut r = rows.clone();
            r.extend(extra.iter().map(|v| (*v).clone()));
            vol(&r)
        };
        let small = with(&[&p]) - with(&[]);
        let large = with(&[&q, &p]) - with(&[&q]);
        prop_assert!(small >= large - 1e-12);
    }

    #[test]
    fn dominated_point_adds_nothing((rows, _, shrink) in rows_and_point(), pick in any::<prop::sample::Index>()) {
        let host = &rows[pick.index(rows.len())];
        let p: Vec<f64> = host.iter().zip(&shrink).map(|(h, s)| h * s).collect();
        let mut more = rows.clone();
        more.push(p);
        prop_assert_eq!(vol(&more), vol(&rows));
    }

    #[test]
    fn volume_ignores_point_and_axis_order(
        (rows, _, _) in rows_and_point(),
        seed in any::<u64>(),
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let j = rows[0].len();
        let mut order: Vec<usize> = (0..rows.len()).collect();
        let mut axes: Vec<usize> = (0..j).collect();
        for i in (1..order.len()).rev() {
            order.swap(i, rng.random_range(0..=i));
        }
        for i in (1..j).rev() {
            axes.swap(i, rng.random_range(0..=i));
        }
        let shuffled: Vec<Vec<f64>> = order.iter().map(|&k| axes.iter().map(|&a| rows[k][a]).collect()).collect();
        prop_assert!((vol(&shuffled) - vol(&rows)).abs() < 1e-12);
    }

    #[test]
    fn gradient_matches_differences(rows in (2usize..=4).prop_flat_map(|j| point_rows(5, j))) {
        // keep coordinates away from ties and the box boundary
        let mut rows = rows;
        let mut seen: Vec<f64> = Vec::new();
        for (k, r) in rows.iter_mut().enumerate() {
            for (j, x) in r.iter_mut().enumerate() {
                *x = 0.05 + 0.9 * *x + 1e-4 * (k * 7 + j) as f64 / 64.0;
                prop_assume!(seen.iter().all(|s| (s - *x).abs() > 1e-4));
                seen.push(*x);
            }
        }
        let g = hv_gradient(&PointSet::from_rows(&rows).unwrap()).unwrap();
        let h = 1e-7;
        for k in 0..rows.len() {
            for j in 0..rows[0].len() {
                let mut up = rows.clone();
                let mut dn = rows.clone();
                up[k][j] += h;
                dn[k][j] -= h;
                let fd = (vol(&up) - vol(&dn)) / (2.0 * h);
                let a = g.get(k, j);
                let err = (a - fd).abs() / a.abs().max(fd.abs()).max(1e-8);
                prop_assert!(err < 1e-4, "entry ({k},{j}): analytic {a}, fd {fd}");
            }
        }
    }

    #[test]
    fn volume_error_bounded_by_entrywise_error(
        (v, noise) in (1usize..=4, 1usize..=4).prop_flat_map(|(k, j)| (
            prop::collection::vec(prop::collection::vec(0.0..=1.0f64, j), k),
            prop::collection::vec(prop::collection::vec(-0.3..=0.3f64, j), k),
        ))
    ) {
        let v_hat: Vec<Vec<f64>> = v
            .iter()
            .zip(&noise)
            .map(|(r, n)| r.iter().zip(n).map(|(a, b)| (a + b).clamp(0.0, 1.0)).collect())
            .collect();
        let l1: f64 = v.iter().flatten().zip(v_hat.iter().flatten()).map(|(a, b)| (a - b).abs()).sum();
        prop_assert!((vol(&v) - vol(&v_hat)).abs() <= l1 + 1e-12);
    }

    #[test]
    fn normalize_is_lipschitz(z in 0.5..50.0f64, a in 0.0..=1.0f64, b in 0.0..=1.0f64) {
        let (a, b) = (-2.0 * z * a, -2.0 * z * b);
        let d = (normalize(a, z).unwrap() - normalize(b, z).unwrap()).abs();
        prop_assert!(d <= (a - b).abs() / z + 1e-12);
    }

    #[test]
    fn front_matches_all_pairs_filter(
        pts in (1usize..=4).prop_flat_map(|j| prop::collection::vec(prop::collection::vec(0u8..5, j), 1..60))
    ) {
        let pts: Vec<Vec<f64>> = pts.iter().map(|p| p.iter().map(|&x| x as f64 / 4.0).collect()).collect();
        let rvs: Vec<RewardVector> = pts.iter().enumerate().map(|(i, p)| RewardVector::new(p.clone(), 0, i).unwrap()).collect();
        let front = pareto_front(&rvs, "m").unwrap();
        let mut expected: Vec<Vec<f64>> = Vec::new();
        for p in &pts {
            let beaten = pts.iter().any(|q| q.iter().zip(p).all(|(a, b)| a >= b) && q != p);
            if !beaten && !expected.contains(p) {
                expected.push(p.clone());
            }
        }
        let got: Vec<Vec<f64>> = front.points.iter().map(|r| r.values.clone()).collect();
        prop_assert_eq!(got, expected);
    }

    #[test]
    fn dominance_is_a_strict_partial_order(
        (a, b, c) in (1usize..=3).prop_flat_map(|j| (
            prop::collection::vec(0u8..3, j),
            prop::collection::vec(0u8..3, j),
            prop::collection::vec(0u8..3, j),
        ))
    ) {
        let f = |v: &Vec<u8>| v.iter().map(|&x| x as f64).collect::<Vec<f64>>();
        let (a, b, c) = (f(&a), f(&b), f(&c));
        let d = |x: &[f64], y: &[f64]| dominates(x, y).unwrap();
        prop_assert!(!d(&a, &a));
        prop_assert!(!(d(&a, &b) && d(&b, &a)));
        prop_assert!(!(d(&a, &b) && d(&b, &c)) || d(&a, &c));
    }

    #[test]
    fn fronts_never_dominate_each_other_both_ways(
        (a, b) in (1usize..=3).prop_flat_map(|j| (
            prop::collection::vec(prop::collection::vec(0u8..4, j), 1..12),
            prop::collection::vec(prop::collection::vec(0u8..4, j), 1..12),
        ))
    ) {
        let to = |pts: &Vec<Vec<u8>>| {
            let rvs: Vec<RewardVector> = pts
                .iter()
                .enumerate()
                .map(|(i, p)| RewardVector::new(p.iter().map(|&x| x as f64 / 3.0).collect(), 0, i).unwrap())
                .collect();
            pareto_front(&rvs, "m").unwrap()
        };
        let (fa, fb) = (to(&a), to(&b));
        prop_assert!(!(front_dominates(&fa, &fb).unwrap() && front_dominates(&fb, &fa).unwrap()));
    }
}

#[test]
fn exact_agrees_with_monte_carlo() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for trial in 0..30u64 {
        let k = rng.random_range(1..=6);
        let j = rng.random_range(2..=4);
        let rows: Vec<Vec<f64>> = (0..k).map(|_| (0..j).map(|_| rng.random()).collect()).collect();
        let ps = PointSet::from_rows(&rows).unwrap();
        let (est, se) = mc_hypervolume(&ps, 200_000, trial).unwrap();
        assert!((est - exact_hypervolume(&ps).unwrap()).abs() <= 4.0 * se, "trial {trial}");
    }
}

#[test]
fn raising_a_coordinate_never_shrinks_volume() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    for _ in 0..500 {
        let k = rng.random_range(1..=5);
        let j = rng.random_range(1..=4);
        let mut rows: Vec<Vec<f64>> = (0..k).map(|_| (0..j).map(|_| rng.random()).collect()).collect();
        let before = vol(&rows);
        let (a, b) = (rng.random_range(0..k), rng.random_range(0..j));
        rows[a][b] = rows[a][b].max(rng.random());
        assert!(vol(&rows) >= before - 1e-12);
    }
    // a single point always works as a set
    assert!(PointSet::new(vec![Point::new(vec![0.5]).unwrap()]).is_ok());
}

fn small_dataset(seed: u64) -> hvmax::policy::Dataset {
    gen_dataset(&DatasetConfig {
        n: 64,
        vocab_size: 5,
        seq_len: 3,
        prompt_types: 2,
        num_objectives: 2,
        seed,
    })
    .unwrap()
}

fn shape(vocab_size: usize, seq_len: usize, num_heads: usize) -> PolicyShape {
    PolicyShape {
        vocab_size,
        seq_len,
        prompt_types: 2,
        embed_dim: 3,
        num_heads,
    }
}

fn spread(p: &mut MultiHeadPolicy, factor: f64) {
    let flat: Vec<f64> = p.to_flat().iter().map(|x| x * factor).collect();
    p.load_flat(&flat).unwrap();
}

#[test]
fn identical_heads_match_single_head_value() {
    let ds = small_dataset(3);
    let mut p = MultiHeadPolicy::init(shape(5, 3, 1), 9).unwrap();
    spread(&mut p, 5.0);
    let one = p.single_head(0);
    let mut three = MultiHeadPolicy::zeros(shape(5, 3, 3)).unwrap();
    *three.backbone_mut() = one.backbone().clone();
    for k in 0..3 {
        *three.head_mut(k) = one.head(0).clone();
    }
    let batch = Batch::full(ds.len());
    let v1 = ham_value(&one, &ds, &batch, &ObjectiveConfig::for_dataset(&ds, 1)).unwrap().0;
    let v3 = ham_value(&three, &ds, &batch, &ObjectiveConfig::for_dataset(&ds, 3)).unwrap().0;
    assert_eq!(v1, v3);
}

#[test]
fn dominated_head_receives_no_gradient() {
    let ds = small_dataset(4);
    // phi = e0 for every input; head 0 uniform, head 1 piles mass on the
    // neutral token 4 so every rewarded response is less likely under it
    let mut p = MultiHeadPolicy::zeros(shape(5, 3, 2)).unwrap();
    p.backbone_mut()[[0, 0]] = 1.0;
    p.backbone_mut()[[0, 1]] = 1.0;
    p.head_mut(1)[[4, 0]] = 5.0;
    let cfg = ObjectiveConfig::for_dataset(&ds, 2);
    let step = ham_grad(&p, &ds, &Batch::full(ds.len()), &cfg).unwrap();
    let row0 = step.matrix.row(0);
    let row1 = step.matrix.row(1);
    assert!(row1.iter().zip(row0).all(|(a, b)| a <= b), "{row0:?} vs {row1:?}");
    assert!(step.grad.heads[1].iter().all(|&g| g == 0.0));
    assert!(step.grad.heads[0].iter().any(|&g| g != 0.0));
}

#[test]
fn minibatch_estimate_is_unbiased() {
    let ds = small_dataset(5);
    let mut p = MultiHeadPolicy::init(shape(5, 3, 1), 2).unwrap();
    spread(&mut p, 5.0);
    let cfg = ObjectiveConfig::for_dataset(&ds, 1);
    let full = weighted_loglik(&p, 0, &ds, 0, &cfg).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let draws: Vec<f64> = (0..2000)
        .map(|_| {
            let b = Batch::with_replacement(ds.len(), 8, &mut rng).unwrap();
            minibatch_loglik(&p, 0, &ds, 0, &b, &cfg).unwrap()
        })
        .collect();
    let m = draws.iter().sum::<f64>() / draws.len() as f64;
    let var = draws.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (draws.len() - 1) as f64;
    let se = (var / draws.len() as f64).sqrt();
    assert!((m - full).abs() <= 3.0 * se, "mean {m} full {full} se {se}");
}

fn reference_log_prob(p: &MultiHeadPolicy, head: usize, g: usize, tokens: &[usize]) -> f64 {
    let s = *p.shape();
    let (b, h) = (p.backbone(), p.head(head));
    let mut total = 0.0;
    for t in 0..tokens.len() {
        let mut psi = vec![0.0; s.prompt_types + s.vocab_size + 1];
        psi[g] = 1.0;
        if t > 0 {
            psi[s.prompt_types + tokens[t - 1]] = 1.0;
        }
        psi[s.prompt_types + s.vocab_size] = t as f64 / s.seq_len as f64;
        let phi: Vec<f64> = (0..s.embed_dim).map(|d| (0..psi.len()).map(|f| b[[d, f]] * psi[f]).sum()).collect();
        let logits: Vec<f64> = (0..s.vocab_size).map(|v| (0..s.embed_dim).map(|d| h[[v, d]] * phi[d]).sum()).collect();
        let z: f64 = logits.iter().map(|l| l.exp()).sum();
        total += (logits[tokens[t]].exp() / z).ln();
    }
    total
}

#[test]
fn log_prob_matches_direct_computation() {
    let mut p = MultiHeadPolicy::init(shape(6, 4, 2), 21).unwrap();
    spread(&mut p, 4.0);
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    for _ in 0..200 {
        let tokens: Vec<usize> = (0..4).map(|_| rng.random_range(0..6)).collect();
        let (k, g) = (rng.random_range(0..2), rng.random_range(0..2));
        let got = p.log_prob(k, g, &tokens).unwrap();
        assert!((got - reference_log_prob(&p, k, g, &tokens)).abs() < 1e-10);
    }
    assert_eq!(feature(p.shape(), 1, &[2, 3, 0, 0], 0).len(), 2 + 6 + 1);
}

#[test]
fn log_prob_is_shift_invariant() {
    let mut p = MultiHeadPolicy::init(shape(5, 3, 1), 8).unwrap();
    spread(&mut p, 5.0);
    let tokens = [1, 4, 2];
    let before: Vec<f64> = (0..2).map(|g| p.log_prob(0, g, &tokens).unwrap()).collect();
    // the same offset on every vocab row shifts all logits equally
    let offset = [0.7, -1.3, 2.1];
    for mut row in p.head_mut(0).rows_mut() {
        for (x, o) in row.iter_mut().zip(offset) {
            *x += o;
        }
    }
    for (g, b) in before.iter().enumerate() {
        assert!((p.log_prob(0, g, &tokens).unwrap() - b).abs() < 1e-10);
    }
}

#[test]
fn log_prob_gradient_matches_differences() {
    let mut p = MultiHeadPolicy::init(shape(5, 3, 2), 13).unwrap();
    spread(&mut p, 5.0);
    let tokens = [3, 0, 4];
    let grad = p.log_prob_grad(1, 1, &tokens).unwrap().to_flat();
    let base = p.to_flat();
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let h = 1e-6;
    for _ in 0..20 {
        let i = rng.random_range(0..base.len());
        let mut q = p.clone();
        let mut up = base.clone();
        up[i] += h;
        q.load_flat(&up).unwrap();
        let f_up = q.log_prob(1, 1, &tokens).unwrap();
        let mut dn = base.clone();
        dn[i] -= h;
        q.load_flat(&dn).unwrap();
        let f_dn = q.log_prob(1, 1, &tokens).unwrap();
        let fd = (f_up - f_dn) / (2.0 * h);
        let err = (grad[i] - fd).abs() / grad[i].abs().max(fd.abs()).max(1e-8);
        assert!(err < 1e-4, "param {i}: {} vs {fd}", grad[i]);
    }
}

#[test]
fn uniform_policy_samples_uniformly() {
    let p = MultiHeadPolicy::zeros(PolicyShape {
        vocab_size: 4,
        seq_len: 1,
        prompt_types: 1,
        embed_dim: 2,
        num_heads: 1,
    })
    .unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    let mut counts = [0usize; 4];
    let draws = 10_000;
    for _ in 0..draws {
        counts[p.sample_with(0, 0, 1.0, &mut rng).unwrap()[0]] += 1;
    }
    for c in counts {
        assert!((c as f64 / draws as f64 - 0.25).abs() <= 0.02, "{counts:?}");
    }
}

#[test]
fn ham_heads_move_apart() {
    let ds = gen_dataset(&DatasetConfig {
        n: 2000,
        vocab_size: 8,
        seq_len: 6,
        prompt_types: 2,
        num_objectives: 2,
        seed: 7,
    })
    .unwrap();
    let cfg = ObjectiveConfig::for_dataset(&ds, 2);
    let train = TrainConfig::default();
    let start = MultiHeadPolicy::init(
        PolicyShape {
            vocab_size: 8,
            seq_len: 6,
            prompt_types: 2,
            embed_dim: train.embed_dim,
            num_heads: 2,
        },
        train.seed,
    )
    .unwrap();
    let (end, _) = train_ham(&ds, &cfg, &train).unwrap();
    assert!(end.head_distance(0, 1) > start.head_distance(0, 1));
}
