use num_bigint::BigInt;
use num_traits::{One, Zero};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use statrs::distribution::{ChiSquared, ContinuousCDF};
use tplmarket_core::sharing::{
    local_dot, local_sum, reconstruct, share, Fe, Fp, Share, SharingError, SharingParams, MERSENNE61,
};

/// Lagrange interpolation at 0 in big-integer arithmetic, then centered
/// decoding. Shares nothing with the field implementation under test.
fn oracle_reconstruct(points: &[(u64, u64)], p: u64) -> i128 {
    let p = BigInt::from(p);
    let modp = |v: BigInt| ((v % &p) + &p) % &p;
    let mut acc = BigInt::zero();
    for (i, &(xi, yi)) in points.iter().enumerate() {
        let mut num = BigInt::one();
        let mut den = BigInt::one();
        for (j, &(xj, _)) in points.iter().enumerate() {
            if i != j {
                num = modp(num * BigInt::from(xj));
                den = modp(den * (BigInt::from(xj) - BigInt::from(xi)));
            }
        }
        let inv = den.modpow(&(&p - 2u32), &p);
        acc = modp(acc + BigInt::from(yi) * num * inv);
    }
    let half = &p / 2u32;
    let v = if acc > half { acc - &p } else { acc };
    i128::try_from(v).unwrap()
}

fn points(shares: &[Share]) -> Vec<(u64, u64)> {
    shares.iter().map(|s| (s.x as u64, s.y.value())).collect()
}

fn rng(seed: u64) -> ChaCha20Rng {
    ChaCha20Rng::seed_from_u64(seed)
}

#[test]
fn worked_examples_match_the_oracle() {
    let params = SharingParams::new(3).unwrap();
    let mut r = rng(1);
    for secret in [0i128, 42, -7] {
        let shares = share::<MERSENNE61, _>(secret, params, &mut r).unwrap();
        assert_eq!(shares.iter().map(|s| s.x).collect::<Vec<_>>(), [1, 2, 3]);
        assert_eq!(oracle_reconstruct(&points(&shares), MERSENNE61), secret);
        assert_eq!(reconstruct(&shares, params).unwrap(), secret);
    }
    let two = SharingParams::new(2).unwrap();
    let shares = share::<MERSENNE61, _>(123, two, &mut r).unwrap();
    assert_eq!(reconstruct(&shares, two).unwrap(), 123);
}

#[test]
fn perturbed_share_reconstructs_garbage() {
    let params = SharingParams::new(3).unwrap();
    let mut shares = share::<MERSENNE61, _>(42, params, &mut rng(2)).unwrap();
    shares[1].y += Fe::new(1);
    let got = reconstruct(&shares, params).unwrap();
    assert_ne!(got, 42);
    assert_eq!(got, oracle_reconstruct(&points(&shares), MERSENNE61));
}

#[test]
fn ten_thousand_round_trips() {
    let mut r = rng(3);
    let half = (MERSENNE61 / 2) as i128;
    for _ in 0..10_000 {
        let n = r.gen_range(2..=5);
        let params = SharingParams::new(n).unwrap();
        let secret = r.gen_range(-half..=half);
        let shares = share::<MERSENNE61, _>(secret, params, &mut r).unwrap();
        assert_eq!(reconstruct(&shares, params).unwrap(), secret);
    }
}

#[test]
fn every_missing_share_blocks_reconstruction() {
    let mut r = rng(4);
    for n in 2..=5 {
        let params = SharingParams::new(n).unwrap();
        let shares = share::<MERSENNE61, _>(99, params, &mut r).unwrap();
        for skip in 0..n {
            let partial: Vec<_> = shares.iter().enumerate().filter(|(i, _)| *i != skip).map(|(_, s)| *s).collect();
            assert_eq!(
                reconstruct(&partial, params),
                Err(SharingError::InsufficientShares { needed: n, got: n - 1 })
            );
        }
    }
}

#[test]
fn malformed_share_sets() {
    let params = SharingParams::new(3).unwrap();
    let shares = share::<MERSENNE61, _>(5, params, &mut rng(5)).unwrap();
    let dup = [shares[0], shares[0], shares[2]];
    assert_eq!(reconstruct(&dup, params), Err(SharingError::DuplicateEvaluationPoint(1)));
    let mut bad = shares.clone();
    bad[2].x = 9;
    assert!(matches!(reconstruct(&bad, params), Err(SharingError::InvalidEvaluationPoint { x: 9, .. })));
    assert_eq!(SharingParams::new(1), Err(SharingError::TooFewNodes(1)));
    let half = (MERSENNE61 / 2) as i128;
    assert!(share::<MERSENNE61, _>(half, params, &mut rng(6)).is_ok());
    assert_eq!(
        share::<MERSENNE61, _>(half + 1, params, &mut rng(6)),
        Err(SharingError::SecretOutOfRange(half + 1))
    );
}

/// Per-node share vectors for `records`.
fn share_records(records: &[i64], n: usize, r: &mut ChaCha20Rng) -> Vec<Vec<Fe>> {
    let params = SharingParams::new(n).unwrap();
    let mut per_node = vec![Vec::new(); n];
    for &v in records {
        for s in share::<MERSENNE61, _>(v as i128, params, r).unwrap() {
            per_node[s.x as usize - 1].push(s.y);
        }
    }
    per_node
}

fn combine(outputs: Vec<Fe>) -> i128 {
    let n = outputs.len();
    let shares: Vec<Share> = outputs.into_iter().enumerate().map(|(i, y)| Share { x: i as u32 + 1, y }).collect();
    reconstruct(&shares, SharingParams::new(n).unwrap()).unwrap()
}

#[test]
fn linear_examples() {
    let mut r = rng(7);
    let per_node = share_records(&[3, 5, 7], 3, &mut r);
    assert_eq!(combine(per_node.iter().map(|ys| local_sum(ys)).collect()), 15);
    let dot = |w: &[i64]| combine(per_node.iter().map(|ys| local_dot(ys, w, 7).unwrap()).collect());
    assert_eq!(dot(&[2, 0, 1]), 13);
    assert_eq!(dot(&[0, 0, 0]), 0);
    assert_eq!(dot(&[1, 1, 1]), 15);
    assert_eq!(
        local_dot(&per_node[0], &[1, 2], 7),
        Err(SharingError::LengthMismatch { records: 3, weights: 2 })
    );
    assert_eq!(
        local_dot(&per_node[0], &[i64::MAX, i64::MAX, 1], 1 << 40),
        Err(SharingError::ResultOutOfRange)
    );
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn sums_and_dots_are_exact(
        records in prop::collection::vec(-1_000_000_000i64..1_000_000_000, 0..40),
        seed in any::<u64>(),
        n in 2usize..6,
    ) {
        let mut r = rng(seed);
        let weights: Vec<i64> = records.iter().map(|_| r.gen_range(-1000..1000)).collect();
        let bound = records.iter().map(|v| v.unsigned_abs()).max().unwrap_or(0);
        let per_node = share_records(&records, n, &mut r);
        let sum: i128 = records.iter().map(|&v| v as i128).sum();
        let dot: i128 = records.iter().zip(&weights).map(|(&v, &w)| v as i128 * w as i128).sum();
        prop_assert_eq!(combine(per_node.iter().map(|ys| local_sum(ys)).collect()), sum);
        prop_assert_eq!(combine(per_node.iter().map(|ys| local_dot(ys, &weights, bound).unwrap()).collect()), dot);
        let ones = vec![1; records.len()];
        prop_assert_eq!(
            per_node.iter().map(|ys| local_dot(ys, &ones, bound).unwrap()).collect::<Vec<_>>(),
            per_node.iter().map(|ys| local_sum(ys)).collect::<Vec<_>>()
        );
    }

    #[test]
    fn shares_add_to_shares_of_the_sum(a in -1_000_000i64..1_000_000, b in -1_000_000i64..1_000_000, seed in any::<u64>()) {
        let params = SharingParams::new(4).unwrap();
        let mut r = rng(seed);
        let sa = share::<MERSENNE61, _>(a as i128, params, &mut r).unwrap();
        let sb = share::<MERSENNE61, _>(b as i128, params, &mut r).unwrap();
        let sum: Vec<Share> = sa.iter().zip(&sb).map(|(x, y)| Share { x: x.x, y: x.y + y.y }).collect();
        prop_assert_eq!(reconstruct(&sum, params).unwrap(), (a + b) as i128);
        prop_assert_eq!(oracle_reconstruct(&points(&sum), MERSENNE61), (a + b) as i128);
    }
}

/// Chi-square statistic of `counts` against the uniform distribution.
fn chi_square(counts: &[u64]) -> f64 {
    let total: u64 = counts.iter().sum();
    let expected = total as f64 / counts.len() as f64;
    counts.iter().map(|&c| (c as f64 - expected).powi(2) / expected).sum()
}

#[test]
fn single_shares_look_uniform_in_a_small_field() {
    const P: u64 = 101;
    const SAMPLES: usize = 100_000;
    let critical = ChiSquared::new((P - 1) as f64).unwrap().inverse_cdf(0.99);
    assert!((critical - 135.807).abs() < 1e-3, "critical value {critical}");
    let params = SharingParams::new(3).unwrap();
    let mut r = rng(8);
    for secret in [0i128, 42, -7] {
        for x in 1..=3usize {
            let mut counts = vec![0u64; P as usize];
            for _ in 0..SAMPLES {
                let shares = share::<P, _>(secret, params, &mut r).unwrap();
                counts[shares[x - 1].y.value() as usize] += 1;
            }
            let stat = chi_square(&counts);
            assert!(stat < critical, "secret {secret}, node {x}: chi-square {stat} >= {critical}");
        }
    }
    // The test has power: a constant polynomial (degree 0) is rejected.
    let mut counts = vec![0u64; P as usize];
    for _ in 0..SAMPLES {
        counts[Fp::<P>::encode(42).unwrap().value() as usize] += 1;
    }
    assert!(chi_square(&counts) > critical);
}
