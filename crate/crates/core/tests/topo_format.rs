use aad_core::model::validate;
use aad_core::testkit::GraphGen;
use aad_core::topo_format::{deserialize, serialize};
use proptest::prelude::*;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn serialize_deserialize_round_trip(seed in any::<u64>(), target in 2usize..=50) {
        let g = GraphGen::any(seed, target).generate("rt");
        prop_assume!(g.nodes().len() <= 50);
        prop_assert!(validate(&g).ok);
        let text = serialize(&g).unwrap();
        let back = deserialize(&text).unwrap();
        prop_assert_eq!(&back, &g);
        prop_assert_eq!(serialize(&back).unwrap(), text);
    }
}

#[test]
fn generated_sizes_cover_the_range() {
    let sizes: Vec<usize> = (0..200u64)
        .map(|s| GraphGen::any(s, 2 + (s as usize % 49)).generate("s").nodes().len())
        .collect();
    assert!(sizes.iter().any(|&n| n <= 3));
    assert!(sizes.iter().any(|&n| n >= 30));
    assert!(sizes.iter().all(|&n| n <= 50));
}

