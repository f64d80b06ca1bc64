use std::collections::BTreeMap;
use std::path::Path;

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use driftivf::dedrift::{dedrift_hybrid, dedrift_lazy, dedrift_split, plan_split, VectorSource};
use driftivf::distance::l2_sq;
use driftivf::driftlab::{brute_force_knn, entropy_of_counts, recall_at_k};
use driftivf::index::{Encoding, IndexConfig, IvfIndex, SearchBudget};
use driftivf::quantizers::CoarseSpec;
use driftivf::vecstore::MapStore;

const DIM: usize = 4;

fn points(n: usize, seed: u64) -> Vec<f32> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n * DIM)
        .map(|i| rng.random_range(-1.0f32..1.0) + if i % DIM == 0 { (seed % 5) as f32 } else { 0.0 })
        .collect()
}

#[derive(Debug, Clone)]
enum Op {
    Add { n: usize, seed: u64 },
    Remove { percent: u32, seed: u64 },
    Lazy { iters: usize },
    Split { k: usize },
    Hybrid { k: usize },
}

fn op() -> impl Strategy<Value = Op> {
    prop_oneof![
        3 => (0usize..60, any::<u64>()).prop_map(|(n, seed)| Op::Add { n, seed }),
        2 => (0u32..=100, any::<u64>()).prop_map(|(percent, seed)| Op::Remove { percent, seed }),
        2 => (1usize..3).prop_map(|iters| Op::Lazy { iters }),
        1 => (1usize..4).prop_map(|k| Op::Split { k }),
        1 => (1usize..4).prop_map(|k| Op::Hybrid { k }),
    ]
}

fn fresh_index(encoding: Encoding, max_versions: usize) -> IvfIndex {
    let mut cfg = IndexConfig::new(CoarseSpec::Flat { k: 8 });
    cfg.encoding = encoding;
    cfg.max_versions = max_versions;
    cfg.seed = 1;
    IvfIndex::build(&points(200, 99), DIM, cfg).unwrap()
}

fn encoding() -> impl Strategy<Value = Encoding> {
    prop_oneof![Just(Encoding::Direct), Just(Encoding::Residual)]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn index_stays_consistent_under_random_maintenance(
        ops in proptest::collection::vec(op(), 1..25),
        enc in encoding(),
        max_versions in 1usize..4,
    ) {
        let mut index = fresh_index(enc, max_versions);
        let mut model: BTreeMap<u64, Vec<f32>> = BTreeMap::new();
        let mut store = MapStore::new(DIM);
        let mut next_id = 0u64;

        for op in ops {
            let before = index.to_bytes().unwrap();
            let result = match op {
                Op::Add { n, seed } => {
                    let v = points(n, seed);
                    let ids: Vec<u64> = (next_id..next_id + n as u64).collect();
                    next_id += n as u64;
                    for (id, x) in ids.iter().zip(v.chunks_exact(DIM)) {
                        model.insert(*id, x.to_vec());
                        store.insert(*id, x.to_vec());
                    }
                    index.add(&ids, &v).map(|_| ())
                }
                Op::Remove { percent, seed } => {
                    let mut rng = ChaCha8Rng::seed_from_u64(seed);
                    let gone: Vec<u64> = model.keys().copied().filter(|_| rng.random_range(0..100) < percent).collect();
                    gone.iter().for_each(|id| { model.remove(id); });
                    prop_assert_eq!(index.remove(&gone), gone.len());
                    Ok(())
                }
                Op::Lazy { iters } => dedrift_lazy(&mut index, iters, VectorSource::Original, Some(&store)).map(|_| ()),
                Op::Split { k } => dedrift_split(&mut index, k, VectorSource::Original, Some(&store)).map(|_| ()),
                Op::Hybrid { k } => dedrift_hybrid(&mut index, k, 1, VectorSource::Original, Some(&store)).map(|_| ()),
            };
            if result.is_err() {
                // failed updates leave the index untouched
                prop_assert_eq!(&index.to_bytes().unwrap(), &before);
            }

            prop_assert_eq!(index.audit(), Ok(()));
            prop_assert_eq!(index.n_lists(), 8);
            prop_assert_eq!(index.live_ids(), model.keys().copied().collect::<Vec<_>>());
            for list in index.lists() {
                prop_assert!(list.n_versions() >= 1 && list.n_versions() <= max_versions);
                for &v in list.versions() {
                    prop_assert!(list.centroid(v).is_some());
                }
            }
            for (id, x) in &model {
                let r = index.reconstruct(*id).unwrap();
                prop_assert!(l2_sq(&r, x) < 1e-8, "id {} drifted by {}", id, l2_sq(&r, x));
            }
        }
        let restored = IvfIndex::from_bytes(&index.to_bytes().unwrap(), Path::new("mem")).unwrap();
        prop_assert_eq!(restored.to_bytes().unwrap(), index.to_bytes().unwrap());
    }

    #[test]
    fn budget_accounting_and_monotone_recall(
        n in 1usize..400,
        seed in any::<u64>(),
        budgets in proptest::collection::vec(0usize..500, 1..6),
        k in 1usize..15,
    ) {
        let mut index = fresh_index(Encoding::Residual, 3);
        let v = points(n, seed);
        let ids: Vec<u64> = (0..n as u64).map(|i| i * 3 + 1).collect();
        index.add(&ids, &v).unwrap();
        let q = points(1, seed ^ 0x55);
        let exact: Vec<u64> = brute_force_knn(&q, &v, &ids, DIM, k).unwrap()[0].iter().map(|x| x.id).collect();

        let mut sorted = budgets.clone();
        sorted.sort_unstable();
        let mut last = 0.0;
        for &b in &sorted {
            let out = index.search_with_stats(&q, SearchBudget::new(b, k)).unwrap();
            prop_assert_eq!(out.distance_computations, b.min(n));
            prop_assert!(out.neighbors.len() <= k.min(b));
            prop_assert!(out.neighbors.windows(2).all(|w| w[0] <= w[1]));
            let got: Vec<u64> = out.neighbors.iter().map(|x| x.id).collect();
            prop_assert!(got.iter().all(|id| index.contains(*id)));
            let r = recall_at_k(&[got], std::slice::from_ref(&exact), k);
            prop_assert!(r >= last);
            last = r;
        }
        let checkpoints = index.search_checkpoints(&q, k, &sorted).unwrap();
        for (cp, &b) in checkpoints.iter().zip(&sorted) {
            prop_assert_eq!(cp, &index.search_with_stats(&q, SearchBudget::new(b, k)).unwrap());
        }
    }

    #[test]
    fn duplicate_lands_next_to_original(n in 2usize..200, pick in any::<prop::sample::Index>(), seed in any::<u64>()) {
        let mut db = points(n, seed);
        let mut ids: Vec<u64> = (0..n as u64).collect();
        let i = pick.index(n);
        let copy = db[i * DIM..(i + 1) * DIM].to_vec();
        db.extend_from_slice(&copy);
        ids.push(10_000);
        let q = points(1, seed.wrapping_add(1));
        let ranked = brute_force_knn(&q, &db, &ids, DIM, n + 1).unwrap().remove(0);
        let pos = ranked.iter().position(|x| x.id == i as u64).unwrap();
        // ties go to the lower id, so the copy follows every equal-distance entry
        let after = ranked[pos + 1..].iter().position(|x| x.id == 10_000).unwrap();
        prop_assert!(ranked[pos + 1..pos + 1 + after].iter().all(|x| x.distance == ranked[pos].distance));
    }

    #[test]
    fn recall_bounds(a in proptest::collection::btree_set(0u64..40, 10), b in proptest::collection::btree_set(0u64..40, 10)) {
        let a: Vec<u64> = a.into_iter().collect();
        let b: Vec<u64> = b.into_iter().collect();
        let r = recall_at_k(&[a.clone()], &[b.clone()], 10);
        prop_assert!((0.0..=1.0).contains(&r));
        prop_assert_eq!(r == 1.0, a == b);
    }

    #[test]
    fn entropy_bounds(counts in proptest::collection::vec(0usize..1000, 1..64)) {
        let h = entropy_of_counts(&counts);
        prop_assert!(h >= 0.0);
        prop_assert!(h <= (counts.len() as f64).log2() + 1e-9);
    }

    #[test]
    fn split_plan_is_well_formed(sizes in proptest::collection::vec(0usize..500, 2..40), k in 1usize..10) {
        let k = k.min(sizes.len() - 1);
        let plan = plan_split(&sizes, k).unwrap();
        prop_assert_eq!(plan.largest.len(), k);
        prop_assert!(plan.k2 >= k && plan.k2 <= sizes.len());
        let cells = plan.cells();
        prop_assert_eq!(cells.len(), plan.k2);
        let mut dedup = cells.clone();
        dedup.sort_unstable();
        dedup.dedup();
        prop_assert_eq!(dedup.len(), cells.len());
        let min_big = plan.largest.iter().map(|&c| sizes[c]).min().unwrap();
        prop_assert!(sizes.iter().enumerate().all(|(c, &s)| plan.largest.contains(&c) || s <= min_big));
    }
}
