use std::collections::BTreeSet;

use backtrack::cv::fold_assignment;
use backtrack::engine::{self, generate_interactions, EngineConfig};
use backtrack::lasso::{self, kkt_check, LambdaGrid, SolverConfig, StopRule};
use backtrack::{CandidateSet, CoefficientVector, RawDesign, ResponseVector, VariableId, WorkingDesign};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

fn gaussian_instance(n: usize, p: usize, seed: u64) -> (RawDesign, ResponseVector) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cols: Vec<Vec<f64>> = (0..p)
        .map(|_| (0..n).map(|_| rng.sample(StandardNormal)).collect())
        .collect();
    let y = (0..n)
        .map(|i| 1.5 * cols[0][i] - cols[1 % p][i] + rng.sample::<f64, _>(StandardNormal))
        .collect();
    (RawDesign::from_columns(cols).unwrap(), ResponseVector::new(y).unwrap())
}

/// Every `v` with `2 ≤ |v| ≤ max_order`, not in `active`, all of whose
/// nonempty proper subsets are in `active`, by enumerating subsets of 1..=p.
fn brute_force_interactions(active: &BTreeSet<VariableId>, p: usize, max_order: usize) -> Vec<VariableId> {
    let mut out = BTreeSet::new();
    for mask in 1u32..(1 << p) {
        let members: Vec<usize> = (0..p).filter(|b| mask >> b & 1 == 1).map(|b| b + 1).collect();
        if members.len() < 2 || members.len() > max_order {
            continue;
        }
        let v = VariableId::new(members.clone()).unwrap();
        if active.contains(&v) {
            continue;
        }
        let all_in = (1u32..(1 << members.len()) - 1).all(|sub| {
            let s: Vec<usize> = (0..members.len())
                .filter(|b| sub >> b & 1 == 1)
                .map(|b| members[b])
                .collect();
            active.contains(&VariableId::new(s).unwrap())
        });
        if all_in {
            out.insert(v);
        }
    }
    out.into_iter().collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn solutions_pass_kkt(seed in 0u64..10_000, n in 12usize..40, p in 2usize..10, frac in 0.01f64..1.0) {
        let (raw, y) = gaussian_instance(n, p, seed);
        let d = WorkingDesign::assemble(&raw, &CandidateSet::mains(p)).unwrap();
        let lambda = frac * lasso::lambda_max(&d, y.values());
        let cfg = SolverConfig::default();
        let state = lasso::solve(&d, y.values(), lambda, None, &CoefficientVector::zeros(), &cfg).unwrap();
        let all: Vec<usize> = (0..p).collect();
        let report = kkt_check(&d, &state.beta, &state.residual, lambda, &all, 1e-7);
        prop_assert!(report.passed, "violation {}", report.max_violation);
    }

    #[test]
    fn generated_interactions_match_subset_enumeration(
        mains in proptest::collection::btree_set(1usize..=6, 0..6),
        pair_picks in proptest::collection::vec(any::<bool>(), 15),
        max_order in 1usize..=4,
    ) {
        let mains: Vec<usize> = mains.into_iter().collect();
        let mut active: BTreeSet<VariableId> = mains.iter().map(|&j| VariableId::main(j)).collect();
        let pairs: Vec<VariableId> = mains
            .iter()
            .enumerate()
            .flat_map(|(a, &i)| mains[a + 1..].iter().map(move |&j| VariableId::pair(i, j)))
            .collect();
        for (v, keep) in pairs.into_iter().zip(pair_picks) {
            if keep && max_order >= 2 {
                active.insert(v);
            }
        }
        let got = generate_interactions(active.iter(), max_order);
        let mut want = brute_force_interactions(&active, 6, max_order);
        want.sort_by(|a, b| (a.order(), a.members()).cmp(&(b.order(), b.members())));
        prop_assert_eq!(got, want);
    }

    #[test]
    fn folds_partition_every_row_once(seed in any::<u64>(), n in 10usize..200, folds in 2usize..10) {
        let a = fold_assignment(seed, 0, n, folds);
        prop_assert_eq!(&a, &fold_assignment(seed, 0, n, folds));
        let mut counts = vec![0usize; folds];
        for &f in &a {
            counts[f] += 1;
        }
        prop_assert!(counts.iter().max().unwrap() - counts.iter().min().unwrap() <= 1);
    }
}

#[test]
fn rescaling_a_raw_column_leaves_the_tree_unchanged() {
    let (raw, y) = gaussian_instance(60, 5, 3);
    let mut cols: Vec<Vec<f64>> = (0..5).map(|j| raw.column(j).to_vec()).collect();
    cols[2].iter_mut().for_each(|v| *v = 7.0 * *v - 3.0);
    let scaled = RawDesign::from_columns(cols).unwrap();
    let cfg = EngineConfig {
        grid_len: 30,
        ..EngineConfig::default()
    };
    let a = engine::run(&raw, &y, &cfg).unwrap();
    let b = engine::run(&scaled, &y, &cfg).unwrap();
    assert_eq!(a.len(), b.len());
    for k in 1..=a.len() {
        for (pa, pb) in a.path(k).points.iter().zip(&b.path(k).points) {
            assert!(pa.max_abs_diff(pb) < 1e-9);
        }
    }
}

#[test]
fn warm_and_cold_paths_agree() {
    let (raw, y) = gaussian_instance(40, 6, 11);
    let d = WorkingDesign::assemble(&raw, &CandidateSet::mains(6)).unwrap();
    let grid = LambdaGrid::log_spaced(lasso::lambda_max(&d, y.values()), 1e-2, 25).unwrap();
    let cfg = SolverConfig::default();
    let warm = lasso::path(&d, &y, &grid, &StopRule { max_active: None }, &cfg).unwrap();
    for (l, point) in warm.points.iter().enumerate() {
        let cold = lasso::fit_at(&d, &y, grid.get(l), &CoefficientVector::zeros(), &cfg).unwrap();
        assert!(point.coefficients.max_abs_diff(&cold) < 1e-7, "l = {l}");
    }
}
