use std::collections::BTreeMap;

use adamms_core::mapping::{resolve_mapping, MappingRule, RuleKind};
use adamms_core::merge::{
    dare_transform, merge_linear, merge_task_arithmetic, metagpt_coefficients, ties_merge,
    trim_keep_count,
};
use adamms_core::responses::{Response, ResponseSet};
use adamms_core::search::{adjacent_difference, build_grid, diff_exact, sample_subset, select_alpha};
use adamms_core::store::{write_checkpoint, Checkpoint, Dtype, TensorEntry};
use proptest::prelude::*;

fn dtype() -> impl Strategy<Value = Dtype> {
    prop_oneof![Just(Dtype::F32), Just(Dtype::F16), Just(Dtype::BF16)]
}

fn entry_strategy() -> impl Strategy<Value = (Dtype, Vec<usize>)> {
    (dtype(), prop::collection::vec(1usize..5, 0..=4))
}

fn f32_entry(name: &str, values: &[f32]) -> TensorEntry {
    TensorEntry::from_f32(name, Dtype::F32, vec![values.len()], values).unwrap()
}

fn set(outputs: &[String]) -> ResponseSet {
    ResponseSet::new(
        0.0,
        outputs
            .iter()
            .enumerate()
            .map(|(i, o)| Response::new(format!("q{i}"), o.clone()))
            .collect(),
    )
}

/// Outputs drawn from a tiny alphabet so collisions and whitespace variants are common.
fn outputs(n: usize) -> impl Strategy<Value = Vec<String>> {
    prop::collection::vec(prop::sample::select(vec!["a", " a", "a ", "b", "c", ""]), n)
        .prop_map(|v| v.into_iter().map(String::from).collect())
}

fn ulps(a: f32, b: f32) -> u64 {
    let key = |x: f32| {
        let bits = i64::from(x.to_bits());
        if bits & 0x8000_0000 != 0 {
            0x8000_0000 - bits
        } else {
            bits
        }
    };
    (key(a) - key(b)).unsigned_abs()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn checkpoint_round_trip_and_write_determinism(
        specs in prop::collection::vec(entry_strategy(), 1..6),
        seed in any::<u64>(),
    ) {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let entries: Vec<TensorEntry> = specs
            .into_iter()
            .enumerate()
            .map(|(i, (dtype, shape))| {
                let mut data = vec![0u8; shape.iter().product::<usize>() * dtype.width()];
                rng.fill(&mut data[..]);
                TensorEntry::new(format!("w{i}"), dtype, shape, data).unwrap()
            })
            .collect();
        let dir = tempfile::tempdir().unwrap();
        let (a, b) = (dir.path().join("a.safetensors"), dir.path().join("b.safetensors"));
        write_checkpoint(entries.clone(), &a).unwrap();
        let mut reversed = entries.clone();
        reversed.reverse();
        write_checkpoint(reversed, &b).unwrap();
        prop_assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
        let ckpt = Checkpoint::open(&a).unwrap();
        for e in &entries {
            prop_assert_eq!(&ckpt.read_tensor(&e.name).unwrap(), e);
        }
    }

    #[test]
    fn diff_exact_is_a_metric(a in outputs(12), b in outputs(12), c in outputs(12)) {
        let (ga, gb, gc) = (set(&a), set(&b), set(&c));
        let ab = diff_exact(&ga, &gb).unwrap();
        prop_assert_eq!(ab, diff_exact(&gb, &ga).unwrap());
        let normalized_equal = a.iter().zip(&b).all(|(x, y)| x.trim() == y.trim());
        prop_assert_eq!(ab == 0, normalized_equal);
        let ac = diff_exact(&ga, &gc).unwrap();
        let cb = diff_exact(&gc, &gb).unwrap();
        prop_assert!(ab <= ac + cb);
    }

    #[test]
    fn correctness_changes_only_where_responses_differ(
        a in outputs(20),
        b in outputs(20),
        truth in prop::collection::vec(prop::sample::select(vec!["a", "b", "c"]), 20),
    ) {
        let correct = |o: &[String]| o.iter().zip(&truth).filter(|(x, t)| x.trim() == **t).count();
        let d = diff_exact(&set(&a), &set(&b)).unwrap();
        prop_assert!(correct(&a).abs_diff(correct(&b)) <= d);
    }

    #[test]
    fn adjacent_difference_sums_neighbouring_pairs(sets in prop::collection::vec(outputs(6), 3..9)) {
        let sets: Vec<ResponseSet> = sets.iter().map(|o| set(o)).collect();
        let d = adjacent_difference(&sets, |a, b| diff_exact(a, b).map(|x| x as f64)).unwrap();
        prop_assert_eq!(d.d.len(), sets.len() - 2);
        for (&i, &v) in &d.d {
            let left = diff_exact(&sets[i - 2], &sets[i - 1]).unwrap();
            let right = diff_exact(&sets[i - 1], &sets[i]).unwrap();
            prop_assert_eq!(v, (left + right) as f64);
        }
    }

    #[test]
    fn selection_is_interior_and_minimal(scores in prop::collection::vec(0u8..6, 5)) {
        let grid = build_grid(0.0, 0.6, 0.1).unwrap();
        let d: BTreeMap<usize, f64> = scores.iter().enumerate().map(|(i, &s)| (i + 2, f64::from(s))).collect();
        let (alpha, index) = select_alpha(&d, &grid).unwrap();
        prop_assert!((2..=6).contains(&index));
        prop_assert!(alpha != 0.0 && alpha != 0.6);
        let min = d.values().copied().fold(f64::INFINITY, f64::min);
        prop_assert_eq!(d[&index], min);
        prop_assert!(d.range(..index).all(|(_, &v)| v > min));
    }

    #[test]
    fn grid_gaps_match_step(lo_steps in 0u32..5, count in 2u32..20, step_idx in 0usize..3) {
        let step = [0.1, 0.05, 0.02][step_idx];
        let lo = f64::from(lo_steps) * step;
        let hi = lo + f64::from(count) * step;
        prop_assume!(hi <= 1.0 + 1e-12);
        let grid = build_grid(lo, hi.min(1.0), step).unwrap();
        prop_assert_eq!(grid.len(), count as usize + 1);
        prop_assert!(grid.alphas.windows(2).all(|w| ((w[1] - w[0]) - step).abs() <= 1e-12));
        prop_assert!((grid.alphas[grid.len() - 1] - hi.min(1.0)).abs() <= 1e-12);
    }

    #[test]
    fn linear_equals_task_arithmetic_with_zero_pivot(
        pairs in prop::collection::vec((-100.0f32..100.0, -100.0f32..100.0), 1..32),
        step in 0u32..=10,
    ) {
        let alpha = f64::from(step) / 10.0;
        let (b, d): (Vec<f32>, Vec<f32>) = pairs.into_iter().unzip();
        let (base, donor) = (f32_entry("w", &b), f32_entry("w", &d));
        let pivot = f32_entry("w", &vec![0.0; b.len()]);
        let lin = merge_linear(&base, Some(&donor), alpha).unwrap().to_f32();
        let ta = merge_task_arithmetic(&pivot, &[base, donor], &[1.0 - alpha, alpha]).unwrap().to_f32();
        for (x, y) in lin.iter().zip(&ta) {
            prop_assert!(ulps(*x, *y) <= 1, "{} vs {}", x, y);
        }
    }

    #[test]
    fn ties_output_respects_sign_and_hull(
        taus in (1usize..10).prop_flat_map(|n| prop::collection::vec(prop::collection::vec(-4.0f32..4.0, n), 2..4)),
        density in 0.05f64..=1.0,
    ) {
        let n = taus[0].len();
        let entries: Vec<TensorEntry> = taus.iter().map(|t| f32_entry("t", t)).collect();
        let out = ties_merge(&entries, density).unwrap().to_f32();
        let k = trim_keep_count(n, density);
        let kept: Vec<Vec<f32>> = taus
            .iter()
            .map(|t| {
                let mut order: Vec<usize> = (0..n).collect();
                order.sort_by(|&a, &b| t[b].abs().total_cmp(&t[a].abs()).then(a.cmp(&b)));
                let mut v = vec![0.0f32; n];
                for &i in order.iter().take(k) {
                    v[i] = t[i];
                }
                v
            })
            .collect();
        for j in 0..n {
            let column: Vec<f32> = kept.iter().map(|t| t[j]).collect();
            let elected = column.iter().map(|&v| f64::from(v)).sum::<f64>() >= 0.0;
            if out[j] == 0.0 {
                continue;
            }
            prop_assert_eq!(out[j] > 0.0, elected);
            let agreeing: Vec<f32> = column.into_iter().filter(|&v| v != 0.0 && (v > 0.0) == elected).collect();
            let lo = agreeing.iter().copied().fold(f32::INFINITY, f32::min);
            let hi = agreeing.iter().copied().fold(f32::NEG_INFINITY, f32::max);
            prop_assert!(lo <= out[j] && out[j] <= hi, "{} outside [{}, {}]", out[j], lo, hi);
        }
    }

    #[test]
    fn metagpt_permutes_with_inputs(norms in prop::collection::vec(0.01f32..10.0, 2..6)) {
        let tvs: Vec<Vec<TensorEntry>> = norms.iter().map(|&s| vec![f32_entry("t", &[s, -s / 2.0])]).collect();
        let forward = metagpt_coefficients(&tvs).unwrap();
        let mut rev = tvs.clone();
        rev.reverse();
        let mut backward = metagpt_coefficients(&rev).unwrap();
        backward.reverse();
        for (a, b) in forward.iter().zip(&backward) {
            prop_assert!((a - b).abs() <= 1e-12);
            prop_assert!(*a >= 0.0);
        }
        prop_assert!((forward.iter().sum::<f64>() - 1.0).abs() <= 1e-9);
    }

    #[test]
    fn dare_mask_is_keyed_by_seed_and_name(
        values in prop::collection::vec(0.5f32..2.0, 1..64),
        seed in any::<u64>(),
        p in 0.05f64..0.95,
    ) {
        let tau = f32_entry("w", &values);
        let a = dare_transform(&tau, p, seed, "layer.w").unwrap().to_f32();
        prop_assert_eq!(&a, &dare_transform(&tau, p, seed, "layer.w").unwrap().to_f32());
        for (out, x) in a.iter().zip(&values) {
            prop_assert!(*out == 0.0 || ulps(*out, (f64::from(*x) / (1.0 - p)) as f32) <= 1);
        }
    }

    #[test]
    fn disjoint_equal_priority_rules_commute(swap in any::<bool>(), layers in 1usize..4) {
        let mut base = Vec::new();
        let mut donor = Vec::new();
        for i in 0..layers {
            base.push(f32_entry(&format!("l{i}.attn_a"), &[1.0, 2.0]));
            base.push(f32_entry(&format!("l{i}.mlp_a"), &[1.0]));
            donor.push(f32_entry(&format!("l{i}.attn"), &[0.0, 0.0]));
            donor.push(f32_entry(&format!("l{i}.mlp"), &[0.0]));
        }
        let dir = tempfile::tempdir().unwrap();
        let (bp, dp) = (dir.path().join("b.safetensors"), dir.path().join("d.safetensors"));
        let bm = write_checkpoint(base, &bp).unwrap();
        let dm = write_checkpoint(donor, &dp).unwrap();
        let mut rules = vec![
            MappingRule::new("l*.attn_a", RuleKind::Rename, Some("l{1}.attn"), 0),
            MappingRule::new("l*.mlp_a", RuleKind::Rename, Some("l{1}.mlp"), 0),
        ];
        let first = resolve_mapping(&bm, &dm, &rules).unwrap();
        if swap {
            rules.reverse();
        }
        let second = resolve_mapping(&bm, &dm, &rules).unwrap();
        prop_assert_eq!(&first.stats, &second.stats);
        let targets = |m: &adamms_core::ResolvedMapping| {
            m.pairs.iter().map(|(k, v)| (k.clone(), v.donor.clone())).collect::<Vec<_>>()
        };
        prop_assert_eq!(targets(&first), targets(&second));
        prop_assert_eq!(second.pairs.len(), bm.len());
    }
}

#[test]
fn subset_overlap_matches_hypergeometric_mean() {
    // Two independent 100-of-1000 samples share 100 * 100 / 1000 = 10 ids on
    // average; the per-pair variance is about 8.1.
    let ids: Vec<String> = (0..1000).map(|i| format!("i{i:04}")).collect();
    let pairs = 500u64;
    let total: usize = (0..pairs)
        .map(|k| {
            let a = sample_subset(&ids, 100, 2 * k).unwrap();
            let b = sample_subset(&ids, 100, 2 * k + 1).unwrap();
            let b: std::collections::HashSet<_> = b.into_iter().collect();
            a.iter().filter(|x| b.contains(*x)).count()
        })
        .sum();
    let mean = total as f64 / pairs as f64;
    let se = (8.1f64 / pairs as f64).sqrt();
    assert!((mean - 10.0).abs() < 4.0 * se, "mean overlap {mean}");
}
