mod common;

use pao_reid::calibration::{calibrate_attribute, ThresholdGrid, ThresholdTable};
use pao_reid::dataset::{load_dataset, region_range, write_dataset};
use pao_reid::metrics::evaluate_retrieval;
use pao_reid::pipeline::prepare;
use pao_reid::retrieval::{run_queries, FilterSpec, RankOrder};
use pao_reid::{
    average_precision, cmc_at_k, f1, load_ontology, mcc, read_dataset, ConfusionCounts, Dataset,
    Execution, Ontology, Region, Split,
};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn labelled_probs(max: usize) -> impl Strategy<Value = (Vec<f64>, Vec<u8>)> {
    prop::collection::vec(
        (
            prop_oneof![(0u32..=100).prop_map(|k| k as f64 / 100.0), 0.0f64..=1.0],
            0u8..=1,
        ),
        1..max,
    )
    .prop_map(|pairs| pairs.into_iter().unzip())
}

/// Small retrieval instance: `(dataset, mask)`.
fn instance() -> impl Strategy<Value = (Dataset, bool)> {
    (
        any::<u64>(),
        1usize..=8,
        1usize..=4,
        1u32..=4,
        1u32..=3,
        any::<bool>(),
    )
        .prop_map(|(seed, gallery, queries, persons, cameras, mask)| {
            use rand::Rng;
            let ontology = Ontology::market1501();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut descs = Vec::new();
            for (split, count, prefix) in
                [(Split::Gallery, gallery, "g"), (Split::Query, queries, "q")]
            {
                for i in 0..count {
                    let (p, c) = (rng.random_range(0..persons), rng.random_range(0..cameras));
                    descs.push(common::random_descriptor(
                        &mut rng,
                        &ontology,
                        format!("{prefix}{i}"),
                        p,
                        c,
                        split,
                        8,
                    ));
                }
            }
            (Dataset::new(descs, &ontology).unwrap(), mask)
        })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn mcc_bounded_and_label_swap_symmetric(tp in 0u64..500, tn in 0u64..500, fp in 0u64..500, fn_ in 0u64..500) {
        let m = mcc(&ConfusionCounts::new(tp, tn, fp, fn_));
        prop_assert!((-1.0..=1.0).contains(&m));
        // Relabelling positives as negatives swaps tp<->tn and fp<->fn.
        prop_assert_eq!(m, mcc(&ConfusionCounts::new(tn, tp, fn_, fp)));
        // Inverting every prediction negates the score.
        prop_assert_eq!(-m + 0.0, mcc(&ConfusionCounts::new(fn_, fp, tn, tp)) + 0.0);
    }

    #[test]
    fn calibration_matches_brute_force((probs, labels) in labelled_probs(120)) {
        let grid = ThresholdGrid::default();
        let got = calibrate_attribute(&probs, &labels, &grid).unwrap();
        prop_assert_eq!(got, common::calibrate_reference(&probs, &labels, &grid.values));
    }

    #[test]
    fn calibration_on_custom_grid((probs, labels) in labelled_probs(60), raw in prop::collection::vec(1u32..1000, 1..12)) {
        let grid = ThresholdGrid::new(raw.iter().map(|&k| k as f64 / 1000.0).collect()).unwrap();
        let got = calibrate_attribute(&probs, &labels, &grid).unwrap();
        prop_assert_eq!(got, common::calibrate_reference(&probs, &labels, &grid.values));
    }

    #[test]
    fn f1_permutation_invariant(pairs in prop::collection::vec((0u8..=1, 0u8..=1), 0..60), seed in any::<u64>()) {
        use rand::seq::SliceRandom;
        let (p, l): (Vec<u8>, Vec<u8>) = pairs.iter().copied().unzip();
        let mut shuffled = pairs.clone();
        shuffled.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        let (sp, sl): (Vec<u8>, Vec<u8>) = shuffled.into_iter().unzip();
        let a = f1(&p, &l).unwrap();
        prop_assert_eq!(a, f1(&sp, &sl).unwrap());
        prop_assert!((0.0..=1.0).contains(&a));
    }

    #[test]
    fn cmc_monotone_in_k(rankings in prop::collection::vec(prop::collection::vec(any::<bool>(), 0..15), 1..10)) {
        let mut prev = 0.0;
        for k in 1..=16 {
            let c = cmc_at_k(&rankings, k).unwrap();
            prop_assert!(c >= prev && c <= 1.0);
            prev = c;
        }
    }

    #[test]
    fn ap_bounded(rel in prop::collection::vec(any::<bool>(), 1..30), extra in 0usize..5) {
        let hits = rel.iter().filter(|&&r| r).count();
        prop_assume!(hits + extra > 0);
        let ap = average_precision(&rel, hits + extra).unwrap();
        prop_assert!((0.0..=1.0).contains(&ap));
        if extra == 0 && rel.iter().take(hits).all(|&r| r) {
            prop_assert_eq!(ap, 1.0);
        }
    }

    #[test]
    fn retrieval_matches_brute_force((ds, mask) in instance()) {
        let ontology = Ontology::market1501();
        let t = ThresholdTable::uniform(&ontology, 0.5).unwrap();
        let exec = Execution::Sequential;
        let q = prepare(&ds.view(Split::Query), None, &t, exec).unwrap();
        let g = prepare(&ds.view(Split::Gallery), None, &t, exec).unwrap();
        let filter = FilterSpec::none().resolve(&ontology).unwrap();
        let results = run_queries(&q, &g, &filter, RankOrder::FilterFirst, mask, exec).unwrap();
        let got = evaluate_retrieval(&results, &ds, mask, &[1, 5, 10], exec).unwrap();
        let want = common::retrieval_reference(&ds.view(Split::Query), &ds.view(Split::Gallery), mask);
        prop_assert_eq!(got.map_score, want.map_score);
        prop_assert_eq!(got.cmc[&1], want.cmc[0]);
        prop_assert_eq!(got.cmc[&5], want.cmc[4]);
        prop_assert_eq!(got.skipped_queries.len(), want.skipped);
    }

    #[test]
    fn filter_first_equals_rank_first((ds, mask) in instance(), attrs in prop::collection::btree_set(0usize..25, 1..4), threshold in 1u32..100) {
        let ontology = Ontology::market1501();
        let t = ThresholdTable::uniform(&ontology, threshold as f64 / 100.0).unwrap();
        let names: Vec<&str> = ontology.attribute_names().collect();
        let spec = FilterSpec::set(attrs.iter().map(|&j| names[j]));
        let filter = spec.resolve(&ontology).unwrap();
        let q = prepare(&ds.view(Split::Query), None, &t, Execution::Sequential).unwrap();
        let g = prepare(&ds.view(Split::Gallery), None, &t, Execution::Sequential).unwrap();
        let a = run_queries(&q, &g, &filter, RankOrder::FilterFirst, mask, Execution::Sequential).unwrap();
        let b = run_queries(&q, &g, &filter, RankOrder::RankFirst, mask, Execution::default()).unwrap();
        prop_assert_eq!(a, b);
    }

    #[test]
    fn region_slices_partition(quarter in 1usize..64) {
        let dim = 4 * quarter;
        let r = |region| region_range(dim, region).unwrap();
        prop_assert_eq!(r(Region::Head).start, 0);
        prop_assert_eq!(r(Region::Head).end, r(Region::Upper).start);
        prop_assert_eq!(r(Region::Upper).end, r(Region::Lower).start);
        prop_assert_eq!(r(Region::Lower).end, r(Region::Foot).start);
        prop_assert_eq!(r(Region::Foot).end, dim);
        prop_assert_eq!(r(Region::Body), r(Region::Upper).start..r(Region::Lower).end);
        for region in [Region::Head, Region::Upper, Region::Lower, Region::Foot] {
            prop_assert_eq!(r(region).len(), quarter);
        }
        prop_assert!(region_range(dim + 2, Region::Head).is_err());
    }

    #[test]
    fn dataset_record_round_trip((ds, _mask) in instance()) {
        let ontology = Ontology::market1501();
        let back = read_dataset(&ds.to_records(), &ontology).unwrap();
        prop_assert_eq!(&back, &ds);
        prop_assert_eq!(back.to_records(), ds.to_records());
    }
}

#[test]
fn ontology_round_trip_and_partition() {
    let o = Ontology::market1501();
    let json = o.to_json();
    let back = load_ontology(&json).unwrap();
    assert_eq!(back, o);
    assert_eq!(back.checksum(), o.checksum());
    let mut seen = vec![false; o.len()];
    for region in [
        Region::Head,
        Region::Body,
        Region::Upper,
        Region::Lower,
        Region::Foot,
    ] {
        for j in o.indices_of_region(region) {
            assert!(!seen[j], "attribute {j} in two regions");
            seen[j] = true;
        }
    }
    assert!(seen.into_iter().all(|s| s));
}

#[test]
fn dataset_directory_round_trip() {
    let ontology = Ontology::market1501();
    let cfg = pao_reid::SynthConfig {
        num_identities: 8,
        images_per_identity: 3,
        ..Default::default()
    };
    let ds = pao_reid::generate(&cfg, &ontology).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let manifest = write_dataset(dir.path(), &ontology, &ds, None).unwrap();
    let loaded = load_dataset(&manifest).unwrap();
    assert_eq!(loaded.dataset, ds);
    assert_eq!(loaded.ontology, ontology);
}

#[test]
fn tampered_ontology_is_rejected() {
    let ontology = Ontology::market1501();
    let cfg = pao_reid::SynthConfig {
        num_identities: 4,
        images_per_identity: 2,
        ..Default::default()
    };
    let ds = pao_reid::generate(&cfg, &ontology).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let manifest = write_dataset(dir.path(), &ontology, &ds, None).unwrap();
    let path = dir.path().join("ontology.json");
    let text = std::fs::read_to_string(&path)
        .unwrap()
        .replace("wearing hat", "wearing cap");
    std::fs::write(&path, text).unwrap();
    let err = load_dataset(&manifest).unwrap_err();
    assert!(!err.is_io(), "{err}");
}
