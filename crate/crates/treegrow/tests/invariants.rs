//! Cross-module invariants: exchangeability of sampled chains, the
//! radix-tree correspondence for boundary chains, and randomized encoding
//! properties.

use std::collections::HashMap;

use proptest::prelude::*;
use rand::Rng;

use treegrow::dendritic::DendriticSystem;
use treegrow::growth;
use treegrow::ip_tree::{preset, IpTree, TreePoint};
use treegrow::plane_tree::PlaneTree;
use treegrow::rng::derive_rng;
use treegrow::sampler;

fn ip(name: &str) -> IpTree {
    IpTree::validated(&preset(name).unwrap()).unwrap()
}

/// Exchangeability: the labelled chain law is invariant under relabelling.
/// Compare the empirical law of the 3-tree dendritic system against the law
/// of its permuted version.
#[test]
fn labelled_law_is_exchangeable() {
    for name in ["interval", "ell-ary", "atom-line"] {
        let tree = ip(name);
        let sigma = vec![3u32, 1, 2];
        let runs = 20_000usize;
        let mut law: HashMap<String, f64> = HashMap::new();
        let mut law_sigma: HashMap<String, f64> = HashMap::new();
        for rep in 0..runs {
            let (_, lt) = sampler::sample_tree(&tree, 3, 0xE8C ^ rep as u64).unwrap();
            let d = DendriticSystem::from_labelled_tree(&lt).unwrap();
            let key = d.to_labelled_tree().unwrap().encode();
            *law.entry(key).or_insert(0.0) += 1.0 / runs as f64;
            let key_sigma = d
                .permute(&sigma)
                .unwrap()
                .to_labelled_tree()
                .unwrap()
                .encode();
            *law_sigma.entry(key_sigma).or_insert(0.0) += 1.0 / runs as f64;
        }
        let mut keys: Vec<&String> = law.keys().chain(law_sigma.keys()).collect();
        keys.sort();
        keys.dedup();
        let tv: f64 = 0.5
            * keys
                .iter()
                .map(|k| {
                    (law.get(*k).unwrap_or(&0.0) - law_sigma.get(*k).unwrap_or(&0.0)).abs()
                })
                .sum::<f64>();
        assert!(tv < 0.03, "{name}: exchangeability TV {tv}");
    }
}

/// The boundary-block chain is the radix sort tree of its sampled words,
/// label for label, on the same draws.
#[test]
fn block_chain_matches_radix_tree_on_same_words() {
    let tree = ip("ell-ary");
    for seed in 0..10u64 {
        let chain = sampler::grow_chain(&tree, 12, seed).unwrap();
        let words: Vec<Vec<u8>> = chain
            .state
            .points
            .iter()
            .map(|p| match p {
                TreePoint::Boundary { word, .. } => word.clone(),
                other => panic!("unexpected point {other:?}"),
            })
            .collect();
        for k in 1..=12usize {
            let radix =
                growth::radix_tree_labelled(&words[..k], 2, words[0].len()).unwrap();
            assert_eq!(
                radix, chain.labelled[k - 1],
                "seed {seed} step {k}: chain and radix tree disagree"
            );
        }
    }
}

/// Backward step equals deleting the last sample: the unlabelled law of the
/// chain one step back matches removing the top label.
#[test]
fn backward_step_is_sample_deletion() {
    let tree = ip("atom-line");
    let mut mismatches = 0usize;
    for rep in 0..2000u64 {
        let chain = sampler::grow_chain(&tree, 4, 0x9A ^ rep).unwrap();
        let t3_direct = chain.labelled[2].unlabelled();
        let t3_deleted = chain.labelled[3]
            .remove_labelled_leaf(4)
            .unwrap()
            .unlabelled();
        if t3_direct != t3_deleted {
            mismatches += 1;
        }
    }
    assert_eq!(mismatches, 0);
}

/// Marchal chains keep uniform backward dynamics in distribution also at
/// n = 4 -> 3 (the exact enumeration check lives in the growth module).
#[test]
fn marchal_empirical_backward_small() {
    let runs = 30_000usize;
    let mut samples = Vec::with_capacity(runs);
    for rep in 0..runs {
        let chain = growth::marchal_chain(4, 1.5, 0x33 ^ rep as u64).unwrap();
        let mut rng = derive_rng(0x44 ^ rep as u64, &[1]);
        samples.push(chain[3].uniform_backward_step(&mut rng).unwrap());
    }
    let tv = growth::tv_distance(
        &growth::empirical_law(&samples),
        &growth::marchal_law(3, 1.5).unwrap(),
    );
    assert!(tv < 0.02, "tv {tv}");
}

/// A composite tree: a branching skeleton, an interior atom with two
/// subtrees, a Markov boundary block on one branch and diffuse mass with a
/// gap on the other. Exercises every orientation case at once.
fn composite() -> IpTree {
    let cfg: treegrow::IpTreeConfig = serde_json::from_str(
        r#"{
        "vertices": 4,
        "segments": [
          {"parent": 0, "child": 1,
           "profile": [[0.0, 0.0], [0.3, 0.3]],
           "lambda": [[0.3, 0.6]]},
          {"parent": 1, "child": 2,
           "profile": [[0.0, 0.0], [0.35, 0.0]]},
          {"parent": 1, "child": 3,
           "profile": [[0.0, 0.0], [0.45, 0.0], [0.7, 0.25]],
           "lambda": [[0.25, 0.4]]}
        ],
        "atoms": [{"vertex": 1, "mass": 0.1, "beta": [0.3, 0.8]}],
        "blocks": [{"vertex": 2, "mass": 0.35,
                    "measure": {"type": "markov",
                                "init": [0.5, 0.3, 0.2],
                                "trans": [[0.6, 0.3, 0.1],
                                          [0.2, 0.5, 0.3],
                                          [0.3, 0.3, 0.4]]}}]
        }"#,
    )
    .unwrap();
    IpTree::validated(&cfg).unwrap()
}

#[test]
fn composite_tree_fringe_and_sampling() {
    let t = composite();
    assert!((t.total_mass() - 1.0).abs() < 1e-12);
    assert!((t.vertex_fringe(1) - 0.7).abs() < 1e-12);
    // Markov cylinder masses.
    let p0 = TreePoint::Boundary { vertex: 2, word: vec![0] };
    let p01 = TreePoint::Boundary { vertex: 2, word: vec![0, 1] };
    assert!((t.fringe_mass(&p0).unwrap() - 0.35 * 0.5).abs() < 1e-12);
    assert!((t.fringe_mass(&p01).unwrap() - 0.35 * 0.5 * 0.3).abs() < 1e-12);
    // First symbols follow the initial distribution.
    let mut rng = derive_rng(47, &[]);
    let n = 60_000;
    let mut first = [0usize; 3];
    let mut block = 0usize;
    for _ in 0..n {
        if let TreePoint::Boundary { word, .. } = t.sample_point(&mut rng) {
            first[word[0] as usize] += 1;
            block += 1;
        }
    }
    assert!((block as f64 / n as f64 - 0.35).abs() < 0.01);
    for (k, expect) in [(0usize, 0.5), (1, 0.3), (2, 0.2)] {
        let freq = first[k] as f64 / block as f64;
        assert!((freq - expect).abs() < 0.02, "symbol {k}: {freq}");
    }
}

#[test]
fn composite_tree_chains_axioms_and_correspondence() {
    let t = composite();
    for seed in 0..8u64 {
        let chain = sampler::grow_chain(&t, 25, seed).unwrap();
        chain.check_consistency().unwrap();
        let last = chain.labelled.last().unwrap();
        assert!(last.tree.validate_membership(25).is_empty());
        let d = DendriticSystem::from_labelled_tree(last).unwrap();
        assert!(d.check_axioms().is_empty(), "seed {seed}");
        let (state, lt) = sampler::sample_tree(&t, 40, seed ^ 0xC0).unwrap();
        assert!(treegrow::metric::check_trim_correspondence(
            &lt.unlabelled(),
            &t,
            &state.points
        )
        .unwrap());
        let disc = treegrow::metric::fringe_discrepancy(&t, &state.points).unwrap();
        let dist = treegrow::metric::span_distortion_sup(&t, &state.points).unwrap();
        assert!(dist <= 4.0 * disc + 1e-9);
    }
}

#[test]
fn composite_tree_partition_properties() {
    let t = composite();
    for eps in [0.4, 0.15, 0.06] {
        let part = t.epsilon_partition(eps).unwrap();
        let total: f64 = part.cells.iter().map(|c| c.mass).sum::<f64>()
            + part.atoms.iter().map(|&(_, m)| m).sum::<f64>();
        assert!((total - 1.0).abs() < 1e-9);
        for cell in &part.cells {
            assert!(cell.mass <= eps + 1e-9);
            assert!(cell.diam <= eps + 1e-9);
        }
        // Fringe approximation at sampled points.
        let mut rng = derive_rng(48, &[eps.to_bits()]);
        for _ in 0..60 {
            let p = t.sample_point(&mut rng);
            let lk = t.cell_lookup(&part, &p).unwrap();
            let mut approx = 0.0;
            for &i in &lk.inside {
                approx += part.cells[i].mass;
            }
            for &j in &lk.atoms_inside {
                approx += part.atoms[j].1;
            }
            let err = (t.fringe_mass(&p).unwrap() - approx).abs();
            assert!(err <= part.cells[lk.cell_of_point].mass + 1e-9);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    /// Text round-trip on random Marchal trees.
    #[test]
    fn encode_decode_roundtrip(seed in 0u64..1000, n in 1usize..24) {
        let chain = growth::marchal_chain(n, 1.6, seed).unwrap();
        let tree = chain.last().unwrap();
        let decoded = PlaneTree::decode(&tree.encode()).unwrap();
        prop_assert_eq!(&decoded, tree);
    }

    /// Backward steps stay inside the planted no-degree-2 space and
    /// commute with leaf counting.
    #[test]
    fn backward_stays_in_space(seed in 0u64..1000, n in 2usize..20) {
        let chain = growth::marchal_chain(n, 1.4, seed).unwrap();
        let tree = chain.last().unwrap();
        let mut rng = derive_rng(seed, &[n as u64]);
        let idx = rng.gen_range(0..n);
        let prev = tree.backward_step(idx).unwrap();
        prop_assert!(prev.validate_membership(n - 1).is_empty());
    }

    /// Sampled chains are consistent regardless of preset and length.
    #[test]
    fn sampled_chain_consistency(seed in 0u64..200, n in 1usize..14, which in 0usize..3) {
        let name = ["interval", "ell-ary", "atom-line"][which];
        let chain = sampler::grow_chain(&ip(name), n, seed).unwrap();
        prop_assert!(chain.check_consistency().is_ok());
    }
}
