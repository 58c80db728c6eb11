use rand::Rng as _;

use crate::pruning::Segment;
use crate::rng::Rng;

/// Most filters a single mutation may prune from a segment of `len` bits: `⌈r·len⌉`.
pub fn prune_cap(r: f64, len: usize) -> usize {
    ((r * len as f64) - 1e-9).ceil().max(1.0) as usize
}

/// Bitwise mutation with a ratio bound, restores enabled.
pub fn bounded_bitwise_mutation(seg: &Segment, p: f64, r: f64, rng: &mut Rng) -> Segment {
    bounded_bitwise_mutation_with(seg, p, r, true, rng)
}

/// Each bit is scheduled to flip with probability `p`. If more than
/// `⌈r·len⌉` of the scheduled flips are 1→0, a uniformly random subset of
/// that size is kept. Scheduled 0→1 flips are applied when `allow_restore`
/// is set. An all-zero result gets one uniformly random bit restored.
pub fn bounded_bitwise_mutation_with(seg: &Segment, p: f64, r: f64, allow_restore: bool, rng: &mut Rng) -> Segment {
    let len = seg.len();
    let mut bits = seg.bits().to_vec();
    let p = p.clamp(0.0, 1.0);
    let mut prune = Vec::new();
    let mut restore = Vec::new();
    for (i, &b) in bits.iter().enumerate() {
        if rng.random_bool(p) {
            if b {
                prune.push(i);
            } else {
                restore.push(i);
            }
        }
    }
    let cap = prune_cap(r, len);
    if prune.len() > cap {
        let mut keep: Vec<usize> = rand::seq::index::sample(rng, prune.len(), cap)
            .into_iter()
            .map(|j| prune[j])
            .collect();
        keep.sort_unstable();
        prune = keep;
    }
    for i in prune {
        bits[i] = false;
    }
    if allow_restore {
        for i in restore {
            bits[i] = true;
        }
    }
    if !bits.iter().any(|&b| b) {
        let j = rng.random_range(0..len);
        bits[j] = true;
    }
    Segment::new(bits).expect("at least one bit set")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_from;

    #[test]
    fn zero_rate_is_identity() {
        let seg = Segment::new(vec![true, false, true, true]).unwrap();
        let mut rng = rng_from(3);
        for _ in 0..100 {
            assert_eq!(bounded_bitwise_mutation(&seg, 0.0, 0.1, &mut rng), seg);
        }
    }

    #[test]
    fn cap_arithmetic() {
        assert_eq!(prune_cap(0.1, 10), 1);
        assert_eq!(prune_cap(0.1, 20), 2);
        assert_eq!(prune_cap(0.1, 8), 1);
        assert_eq!(prune_cap(0.1, 16), 2);
        assert_eq!(prune_cap(0.1, 1), 1);
        assert_eq!(prune_cap(1.0, 7), 7);
    }

    #[test]
    fn single_bit_never_emptied() {
        let seg = Segment::ones(1);
        let mut rng = rng_from(0);
        for _ in 0..1000 {
            assert_eq!(bounded_bitwise_mutation(&seg, 1.0, 1.0, &mut rng), seg);
        }
    }

    #[test]
    fn restores_respect_flag() {
        let seg = Segment::new(vec![true, false, false, false]).unwrap();
        let mut rng = rng_from(1);
        let out = bounded_bitwise_mutation_with(&seg, 1.0, 0.25, false, &mut rng);
        // the only set bit is scheduled to flip, cap 1 allows it, so the
        // never-empty rule restores some bit
        assert_eq!(out.count_ones(), 1);
        let out = bounded_bitwise_mutation_with(&seg, 1.0, 0.25, true, &mut rng);
        assert_eq!(out.bits(), &[false, true, true, true]);
    }
}
