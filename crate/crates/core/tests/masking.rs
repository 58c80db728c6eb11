mod support;

use ccsrp_core::pruning::{count_flops, materialize, FilterMask, Segment};
use ccsrp_core::snn::{forward, init_network, Architecture, LayerSpec, LifConfig, Mode, NetView};
use ccsrp_core::Tensor;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use support::{random_images, random_mask, random_network};

fn batch(rng: &mut ChaCha8Rng, n: usize, shape: [usize; 3]) -> Tensor {
    let xs = random_images(rng, n, shape);
    let [c, h, w] = shape;
    Tensor::new(vec![n, c, h, w], xs.iter().flatten().map(|&v| v as f32).collect()).unwrap()
}

#[test]
fn masked_forward_equals_materialized_network() {
    let mut worst = 0.0f32;
    for seed in 0..20 {
        let net = random_network(seed, 1000, 4);
        let mut rng = ChaCha8Rng::seed_from_u64(100 + seed);
        let mask = random_mask(&net, &mut rng, 0.6);
        let small = materialize(&net, &mask).unwrap();
        let x = batch(&mut rng, 8, net.input_shape());
        for mode in [Mode::Spiking, Mode::Soft] {
            let (a, _) = forward(&NetView::masked(&net, &mask).unwrap(), &x, mode, false).unwrap();
            let (b, _) = forward(&small.view(), &x, mode, false).unwrap();
            worst = worst.max(a.max_abs_diff(&b));
        }
        assert_eq!(
            count_flops(&NetView::masked(&net, &mask).unwrap()).total_flops,
            count_flops(&small.view()).total_flops
        );
    }
    assert!(worst <= 1e-5, "max logit difference {worst}");
}

#[test]
fn repeated_materialization_composes() {
    let net = random_network(3, 1000, 4);
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let m1 = random_mask(&net, &mut rng, 0.8);
    let once = materialize(&net, &m1).unwrap();
    let m2 = random_mask(&once, &mut rng, 0.8);
    let twice = materialize(&once, &m2).unwrap();
    // The same filters expressed as a single mask over the original network.
    let segs = m1
        .segments()
        .iter()
        .zip(m2.segments())
        .map(|(a, b)| {
            let kept = a.kept_indices();
            let mut bits = vec![false; a.len()];
            for (j, &orig) in kept.iter().enumerate() {
                bits[orig] = b.bits()[j];
            }
            Segment::new(bits).unwrap()
        })
        .collect();
    let combined = FilterMask::from_segments(&net, segs).unwrap();
    assert_eq!(materialize(&net, &combined).unwrap(), twice);
}

#[test]
fn flops_fixtures() {
    let lif = LifConfig::default();
    // 1 -> 2 conv, 3x3 kernel, 4x4 output: 2·1·9·16 = 288 MACs.
    let arch = Architecture::new([1, 4, 4], vec![LayerSpec::conv(1, 2, 3, 1, 1), LayerSpec::dense(32, 3, false)]);
    let net = init_network(arch, lif, 0).unwrap();
    let r = count_flops(&net.view());
    assert_eq!(r.per_layer, vec![288, 96]);
    assert_eq!(r.total_flops, 576 + 192);

    // 2 -> 4 -> 3 convs on 6x6, stride 2 in the second: 4·2·9·36 + 3·4·9·9 MACs.
    let arch = Architecture::new(
        [2, 6, 6],
        vec![LayerSpec::conv(2, 4, 3, 1, 1), LayerSpec::conv(4, 3, 3, 2, 1), LayerSpec::dense(27, 2, false)],
    );
    let net = init_network(arch, lif, 0).unwrap();
    assert_eq!(count_flops(&net.view()).per_layer, vec![2592, 972, 54]);
    // Keep 1 of 4 and 2 of 3 filters: 1·2·9·36, 2·1·9·9, 18·2.
    let mask = FilterMask::from_bits(&net, vec![vec![false, true, false, false], vec![true, false, true]]).unwrap();
    let r = count_flops(&NetView::masked(&net, &mask).unwrap()).relative_to(&count_flops(&net.view()));
    assert_eq!(r.per_layer, vec![648, 162, 36]);
    assert_eq!(r.total_flops, 2 * (648 + 162 + 36));
    let expected = 100.0 * (1.0 - 846.0 / 3618.0);
    assert!((r.reduction_pct().unwrap() - expected).abs() < 1e-9);

    // Desk network at 8x8: conv 1->8 and 8->16 (stride 2), dense 256->4.
    let net = init_network(Architecture::desk(8, 4), lif, 0).unwrap();
    assert_eq!(count_flops(&net.view()).per_layer, vec![8 * 9 * 64, 16 * 8 * 9 * 16, 256 * 4]);
}

fn prune_further(mask: &FilterMask, rng: &mut ChaCha8Rng) -> FilterMask {
    let mut out = mask.clone();
    for (i, s) in mask.segments().iter().enumerate() {
        let bits: Vec<bool> = s.bits().iter().map(|&b| b && !rng.random_bool(0.3)).collect();
        if let Some(seg) = Segment::new(bits) {
            out = out.with_segment(i, seg).unwrap();
        }
    }
    out
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn flops_never_increase_under_more_pruning(net_seed in 0u64..40, mask_seed: u64, keep in 0.2f64..1.0) {
        let net = random_network(net_seed, 1000, 1);
        let mut rng = ChaCha8Rng::seed_from_u64(mask_seed);
        let mask = random_mask(&net, &mut rng, keep);
        let more = prune_further(&mask, &mut rng);
        let full = count_flops(&net.view()).total_flops;
        let a = count_flops(&NetView::masked(&net, &mask).unwrap()).total_flops;
        let b = count_flops(&NetView::masked(&net, &more).unwrap()).total_flops;
        prop_assert!(a <= full);
        prop_assert!(b <= a);
    }
}
