//! Shared helpers for the integration suites.

use ppsyn::domain::{Clique, Dataset, DomainSpec, Workload};
use ppsyn::rng::substream;
use rand::Rng;

/// 20k-record style generator: two strongly correlated attribute pairs over
/// cardinalities (8, 8, 16, 32).
pub fn correlated_dataset(n: usize, seed: u64) -> Dataset {
    let domain = DomainSpec::from_cardinalities(&[8, 8, 16, 32]);
    let mut rng = substream(seed, 0, "ablation-data");
    let mut rows = Vec::with_capacity(n);
    for _ in 0..n {
        let a: u32 = {
            let u: f64 = rng.gen();
            let mut acc = 0.0;
            let mut v = 7u32;
            for k in 0..8 {
                acc += 0.75f64.powi(k) * 0.2507;
                if u < acc {
                    v = k as u32;
                    break;
                }
            }
            v
        };
        let b = {
            let u: f64 = rng.gen();
            let delta: i32 = if u < 0.1 {
                -1
            } else if u < 0.9 {
                0
            } else {
                1
            };
            (a as i32 + delta).clamp(0, 7) as u32
        };
        let c: u32 = rng.gen_range(0..16);
        let d = {
            let noise: u32 = rng.gen_range(0..2);
            (2 * c + noise).min(31)
        };
        rows.push(vec![a, b, c, d]);
    }
    Dataset::new(domain, rows).unwrap()
}

pub fn all_two_way(d: usize) -> Workload {
    let mut cliques = Vec::new();
    for i in 0..d {
        for j in i + 1..d {
            cliques.push(Clique::new(vec![i, j]).unwrap());
        }
    }
    Workload::from_cliques(cliques).unwrap()
}
