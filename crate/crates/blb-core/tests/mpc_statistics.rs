use blb_core::mpc::{reconstruct_int, share_int, Modulus, Mpc};
use blb_core::rng::SeedTree;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use statrs::distribution::{ChiSquared, ContinuousCDF};

#[test]
fn first_share_is_uniform() {
    let mut rng = ChaCha20Rng::seed_from_u64(17);
    let buckets = 64usize;
    let trials = 100_000;
    let mut counts = vec![0u64; buckets];
    for _ in 0..trials {
        let (a, _) = share_int(&[12_345], Modulus::Ring(43), 13, &mut rng).unwrap();
        counts[(a.values[0] >> 37) as usize] += 1;
    }
    let expect = trials as f64 / buckets as f64;
    let stat: f64 = counts.iter().map(|&c| (c as f64 - expect).powi(2) / expect).sum();
    let p = 1.0 - ChiSquared::new((buckets - 1) as f64).unwrap().cdf(stat);
    assert!(p > 0.01, "chi-square {stat}, p = {p}");
}

#[test]
fn ring_to_field_never_wraps_with_forty_bits_of_headroom() {
    let q: u128 = 1_152_921_504_606_830_593;
    let mut mpc = Mpc::new(&SeedTree::new(23));
    let mut rng = ChaCha20Rng::seed_from_u64(23);
    let mut failures = 0;
    for _ in 0..10 {
        let v: Vec<i128> = (0..100_000).map(|_| rng.random_range(-(1i128 << 42)..(1i128 << 42))).collect();
        let x = share_int(&v, Modulus::Ring(43), 13, &mut rng).unwrap();
        let f = mpc.ring_to_field(&x, q).unwrap();
        failures += reconstruct_int(&f.0, &f.1).unwrap().iter().zip(&v).filter(|(a, b)| a != b).count();
    }
    assert_eq!(failures, 0);
}

#[test]
fn truncation_carry_matches_the_low_bits() {
    let s = 13u32;
    let trials = 20_000usize;
    let mut mpc = Mpc::new(&SeedTree::new(29));
    let mut rng = ChaCha20Rng::seed_from_u64(29);
    for hi in [-3i128, 0, 7] {
        for lo in [0i128, 1, 1024, 4096, 6000, 8191] {
            let m = (hi << s) + lo;
            let x = share_int(&vec![m; trials], Modulus::Ring(43), 2 * s, &mut rng).unwrap();
            let y = mpc.trunc_pr(&x, s).unwrap();
            let out = reconstruct_int(&y.0, &y.1).unwrap();
            let mut ones = 0;
            for r in out {
                let u = r - (m >> s);
                assert!(u == 0 || u == 1, "m = {m}: got {r}");
                ones += u as usize;
            }
            let p = lo as f64 / (1u64 << s) as f64;
            let sigma = (p * (1.0 - p) / trials as f64).sqrt();
            let rate = ones as f64 / trials as f64;
            assert!((rate - p).abs() <= 3.0 * sigma + 1e-12, "m = {m}: rate {rate} vs {p}");
        }
    }
}

#[test]
fn half_carry_averages_one_half() {
    let s = 13u32;
    let mut mpc = Mpc::new(&SeedTree::new(31));
    let mut rng = ChaCha20Rng::seed_from_u64(31);
    let m = (5i128 << s) + (1 << (s - 1));
    let x = share_int(&vec![m; 100_000], Modulus::Ring(43), 2 * s, &mut rng).unwrap();
    let y = mpc.trunc_pr(&x, s).unwrap();
    let mean = reconstruct_int(&y.0, &y.1).unwrap().iter().map(|&r| (r - 5) as f64).sum::<f64>() / 100_000.0;
    assert!((mean - 0.5).abs() <= 0.01, "{mean}");
}
