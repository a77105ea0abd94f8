use std::collections::{BTreeMap, BTreeSet};

use mmgt::io;
use mmgt::types::{validate_manifest, CohortManifest, PatientEntry, Split};
use ndarray::{ArrayD, IxDyn};
use proptest::prelude::*;

fn shape_and_values() -> impl Strategy<Value = (Vec<usize>, Vec<f32>)> {
    prop::collection::vec(1usize..=16, 1..=4).prop_flat_map(|shape| {
        let n: usize = shape.iter().product();
        (Just(shape), prop::collection::vec(-1e6f32..1e6, n))
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn tensors_round_trip_bit_exactly((shape, values) in shape_and_values()) {
        let a = ArrayD::from_shape_vec(IxDyn(&shape), values).unwrap();
        let back: ArrayD<f32> = io::decode(&io::encode(&a).unwrap()).unwrap();
        prop_assert_eq!(back.shape(), a.shape());
        prop_assert!(back.iter().zip(a.iter()).all(|(x, y)| x.to_bits() == y.to_bits()));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn masks_round_trip((shape, bits) in prop::collection::vec(1usize..=8, 1..=4)
        .prop_flat_map(|s| { let n: usize = s.iter().product(); (Just(s), prop::collection::vec(0u8..=1, n)) }))
    {
        let a = ArrayD::from_shape_vec(IxDyn(&shape), bits).unwrap();
        let back: ArrayD<u8> = io::decode(&io::encode(&a).unwrap()).unwrap();
        prop_assert_eq!(back, a);
    }

    #[test]
    fn valid_manifests_partition_their_patients(splits in prop::collection::vec(0usize..4, 4..40)) {
        let patients: Vec<PatientEntry> = splits
            .iter()
            .enumerate()
            .map(|(i, &s)| PatientEntry {
                id: format!("p{i:03}"),
                label: (s != 0).then_some((i % 2) as u8),
                split: Split::ALL[s],
                files: BTreeMap::new(),
            })
            .collect();
        let m = CohortManifest { patients, atlas: "atlas.json".into(), config: "config.json".into() };
        let valid = validate_manifest(&m).is_empty();
        prop_assert_eq!(valid, (0..4).all(|s| splits.contains(&s)));
        if valid {
            let mut seen = BTreeSet::new();
            for split in Split::ALL {
                for p in m.patients_in(split) {
                    prop_assert!(seen.insert(p.id.clone()), "{} in two splits", p.id);
                }
            }
            prop_assert_eq!(seen.len(), m.patients.len());
        }
    }
}

#[test]
fn save_and_load_through_files() {
    let dir = tempfile::tempdir().unwrap();
    let a = ArrayD::from_shape_fn(IxDyn(&[3, 4, 5]), |i| (i[0] * 20 + i[1] * 5 + i[2]) as f32 * 0.5);
    io::save_tensor(dir.path().join("a.mmgt"), &a).unwrap();
    assert_eq!(io::load_tensor::<f32>(dir.path().join("a.mmgt")).unwrap(), a);
    let scalar = ArrayD::from_elem(IxDyn(&[]), 7.0f32);
    io::save_tensor(dir.path().join("s.mmgt"), &scalar).unwrap();
    assert_eq!(io::load_tensor::<f32>(dir.path().join("s.mmgt")).unwrap()[IxDyn(&[])], 7.0);
}

#[test]
fn wrong_dtype_is_rejected() {
    let a = ArrayD::from_elem(IxDyn(&[2]), 1u8);
    let bytes = io::encode(&a).unwrap();
    assert!(io::decode::<f32>(&bytes).is_err());
}
