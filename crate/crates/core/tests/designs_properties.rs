use exset::designs::{grid, grid_linear_index, grid_multi_index, maximin_lhs, random_lhs, sobol, Design};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn golden(name: &str) -> Vec<Vec<f64>> {
    let path = format!("{}/tests/data/{name}", env!("CARGO_MANIFEST_DIR"));
    std::fs::read_to_string(path)
        .unwrap()
        .lines()
        .map(|l| l.split(',').map(|v| v.parse().unwrap()).collect())
        .collect()
}

#[test]
fn sobol_matches_reference_sequence() {
    for d in [2, 6, 13] {
        let want = golden(&format!("sobol_d{d}.csv"));
        let all = sobol(d, want.len(), 0).unwrap();
        for (i, row) in want.iter().enumerate() {
            assert_eq!(all.point(i), row.as_slice(), "dim {d} index {i}");
        }
        // starting mid-sequence gives the same points
        let tail = sobol(d, 100, 57).unwrap();
        for i in 0..100 {
            assert_eq!(tail.point(i), want[57 + i].as_slice());
        }
    }
}

#[test]
fn sobol_prefixes_are_balanced() {
    // every dyadic box of volume 2^-k along one axis holds exactly one point
    let s = sobol(5, 256, 0).unwrap();
    for j in 0..5 {
        let mut seen = [false; 256];
        for x in s.rows() {
            let cell = (x[j] * 256.0) as usize;
            assert!(!seen[cell]);
            seen[cell] = true;
        }
    }
}

#[test]
fn grid_points_round_trip() {
    let g = grid(3, 7).unwrap();
    assert_eq!(g.len(), 343);
    for k in 0..g.len() {
        let idx = grid_multi_index(k, 3, 7);
        assert_eq!(grid_linear_index(&idx, 7), k);
        for (c, i) in g.point(k).iter().zip(&idx) {
            assert_eq!(*c, (*i as f64 + 0.5) / 7.0);
        }
    }
}

fn is_latin(d: &Design) -> bool {
    let n = d.len();
    (0..d.dim()).all(|j| {
        let mut seen = vec![false; n];
        d.rows().all(|x| {
            let s = (x[j] * n as f64).floor() as usize;
            s < n && !std::mem::replace(&mut seen[s], true)
        })
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(40))]

    #[test]
    fn lhs_is_latin(seed in any::<u64>(), dim in 1usize..7, n in 2usize..40) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let pts = random_lhs(dim, n, &mut rng);
        prop_assert!(is_latin(&Design::explicit(dim, pts).unwrap()));
        let m = maximin_lhs(dim, n, seed, 2).unwrap();
        prop_assert!(is_latin(&m));
        prop_assert!(m.rows().all(|x| x.iter().all(|v| (0.0..1.0).contains(v))));
    }

    #[test]
    fn maximin_spreads_points(seed in any::<u64>(), dim in 2usize..5, n in 5usize..25) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
        let mut random: Vec<f64> = (0..15)
            .map(|_| Design::explicit(dim, random_lhs(dim, n, &mut rng)).unwrap().min_pairwise_distance())
            .collect();
        random.sort_by(f64::total_cmp);
        let m = maximin_lhs(dim, n, seed, 3).unwrap();
        prop_assert!(m.min_pairwise_distance() >= random[random.len() / 2]);
    }

    #[test]
    fn maximin_is_deterministic(seed in any::<u64>()) {
        prop_assert_eq!(maximin_lhs(3, 12, seed, 2).unwrap(), maximin_lhs(3, 12, seed, 2).unwrap());
    }

    #[test]
    fn prefix_and_concat_agree(count in 2usize..100, k in 1usize..100) {
        let s = sobol(3, count, 1).unwrap();
        let k = k.min(count);
        let head = s.prefix(k);
        let rest = Design::explicit(3, s.as_slice()[k * 3..].to_vec());
        match rest {
            Ok(rest) => {
                let joined = head.concat(&rest).unwrap();
                prop_assert_eq!(joined.as_slice(), s.as_slice());
            }
            Err(_) => prop_assert_eq!(k, count),
        }
    }
}
