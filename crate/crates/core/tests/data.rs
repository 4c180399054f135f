use std::collections::BTreeSet;

use genbound::data::{load_mnist_idx, synth_gaussian_mixture, write_mnist_idx, BatchSampler, Dataset, SamplingMode};
use genbound::ndnet::Tensor2;
use genbound::rng::philox4x32_10;
use genbound::Error;
use proptest::prelude::*;

/// Philox4x32-10 written out from its published round function, independent of the crate.
fn philox_ref(ctr: [u32; 4], key: [u32; 2]) -> [u32; 4] {
    let (mut c, mut k) = (ctr, key);
    for r in 0..10 {
        if r > 0 {
            k = [k[0].wrapping_add(0x9E3779B9), k[1].wrapping_add(0xBB67AE85)];
        }
        let p0 = 0xD2511F53u64 * c[0] as u64;
        let p1 = 0xCD9E8D57u64 * c[2] as u64;
        c = [
            ((p1 >> 32) as u32) ^ c[1] ^ k[0],
            p1 as u32,
            ((p0 >> 32) as u32) ^ c[3] ^ k[1],
            p0 as u32,
        ];
    }
    c
}

fn splitmix_ref(x: u64) -> u64 {
    let mut z = x.wrapping_add(0x9E3779B97F4A7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58476D1CE4E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D049BB133111EB);
    z ^ (z >> 31)
}

/// Batch `draw` of the with-replacement sampler, regenerated from the documented
/// recipe: substream of the sampler stream, two words per Philox block, and
/// multiply-shift index reduction.
fn reference_batch(seed: u64, draw: u64, n: usize, b: usize) -> Vec<usize> {
    const SAMPLER_STREAM: u64 = 2;
    let stream = splitmix_ref(SAMPLER_STREAM ^ splitmix_ref(draw.wrapping_add(0x6A09E667F3BCC908)));
    let key = [seed as u32, (seed >> 32) as u32];
    let mut words = Vec::new();
    let mut counter = 0u64;
    while words.len() < b {
        let blk = philox_ref([counter as u32, (counter >> 32) as u32, stream as u32, (stream >> 32) as u32], key);
        words.push(blk[0] as u64 | (blk[1] as u64) << 32);
        words.push(blk[2] as u64 | (blk[3] as u64) << 32);
        counter += 1;
    }
    words[..b].iter().map(|&w| ((w as u128 * n as u128) >> 64) as usize).collect()
}

#[test]
fn philox_known_answer_vectors() {
    assert_eq!(philox4x32_10([0; 4], [0; 2]), [0x6627e8d5, 0xe169c58d, 0xbc57ac4c, 0x9b00dbd8]);
    assert_eq!(
        philox4x32_10([u32::MAX; 4], [u32::MAX; 2]),
        [0x408f276d, 0x41c83b0e, 0xa20bc7c6, 0x6d5451fd]
    );
    let ctr = [0x243f6a88, 0x85a308d3, 0x13198a2e, 0x03707344];
    let key = [0xa4093822, 0x299f31d0];
    assert_eq!(philox4x32_10(ctr, key), [0xd16cfe09, 0x94fdcceb, 0x5001e420, 0x24126ea1]);
    assert_eq!(philox_ref(ctr, key), philox4x32_10(ctr, key));
}

#[test]
fn with_replacement_matches_reference_trace() {
    let (n, b) = (2, 4);
    for seed in [0u64, 1, 42, u64::MAX] {
        let mut s = BatchSampler::new(seed, b, SamplingMode::WithReplacement);
        for draw in 0..50 {
            assert_eq!(s.next_indices(n).unwrap(), reference_batch(seed, draw, n, b));
        }
    }
}

#[test]
fn batch_larger_than_dataset_is_rejected() {
    let mut s = BatchSampler::new(0, 8, SamplingMode::Epoch);
    assert!(matches!(s.next_indices(5), Err(Error::BatchTooLarge { batch: 8, n: 5 })));
}

#[test]
fn idx_rejects_bad_magic_and_truncation() {
    let dir = tempfile::tempdir().unwrap();
    let data = synth_unit(6, 4, 3, 1);
    let (img, lab) = (dir.path().join("img"), dir.path().join("lab"));
    write_mnist_idx(&data, 2, 2, &img, &lab).unwrap();
    // swapped files: label magic where image magic is expected
    assert!(matches!(load_mnist_idx(&lab, &img), Err(Error::WrongMagic { .. })));
    let bytes = std::fs::read(&img).unwrap();
    std::fs::write(&img, &bytes[..bytes.len() - 3]).unwrap();
    assert!(matches!(load_mnist_idx(&img, &lab), Err(Error::Truncated { .. })));
}

/// Features on the 1/255 grid, as produced by the IDX loader.
fn synth_unit(n: usize, dims: usize, classes: usize, seed: u64) -> Dataset {
    let base = synth_gaussian_mixture(n, dims, classes, seed).unwrap();
    let data = base
        .features()
        .data()
        .iter()
        .map(|v| ((v.tanh() + 1.0) * 127.5).round() / 255.0)
        .collect();
    Dataset::new(Tensor2::from_vec(n, dims, data).unwrap(), base.labels().to_vec(), classes).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn epoch_mode_visits_every_sample_once(seed in any::<u64>(), n in 1usize..200, b in 1usize..32) {
        prop_assume!(b <= n);
        let mut s = BatchSampler::new(seed, b, SamplingMode::Epoch);
        for _epoch in 0..3 {
            let mut seen = BTreeSet::new();
            for _ in 0..s.steps_per_epoch(n) {
                for i in s.next_indices(n).unwrap() {
                    prop_assert!(i < n);
                    prop_assert!(seen.insert(i), "index {} repeated within an epoch", i);
                }
            }
            prop_assert_eq!(seen.len(), (n / b) * b);
        }
    }

    #[test]
    fn sampler_is_a_function_of_its_seed(seed in any::<u64>(), with_replacement in any::<bool>()) {
        let mode = if with_replacement { SamplingMode::WithReplacement } else { SamplingMode::Epoch };
        let mut a = BatchSampler::new(seed, 5, mode);
        let mut b = BatchSampler::new(seed, 5, mode);
        for _ in 0..20 {
            prop_assert_eq!(a.next_indices(17).unwrap(), b.next_indices(17).unwrap());
        }
    }

    #[test]
    fn idx_round_trip(seed in any::<u64>(), n in 1usize..20, h in 1usize..6, w in 1usize..6) {
        let data = synth_unit(n.max(3), h * w, 3, seed);
        let dir = tempfile::tempdir().unwrap();
        let (img, lab) = (dir.path().join("img"), dir.path().join("lab"));
        write_mnist_idx(&data, h, w, &img, &lab).unwrap();
        let back = load_mnist_idx(&img, &lab).unwrap();
        prop_assert_eq!(back.features().data(), data.features().data());
        prop_assert_eq!(back.labels(), data.labels());
    }

    #[test]
    fn subsets_are_nested_prefixes(seed in proptest::option::of(any::<u64>()), m1 in 0usize..40, m2 in 0usize..40) {
        let data = synth_gaussian_mixture(40, 3, 4, 9).unwrap();
        let (small, large) = (m1.min(m2), m1.max(m2));
        let a = data.subset(small, seed).unwrap();
        let b = data.subset(large, seed).unwrap();
        prop_assert_eq!(a.labels(), &b.labels()[..small]);
        prop_assert_eq!(a.features().data(), &b.features().data()[..small * 3]);
    }
}
