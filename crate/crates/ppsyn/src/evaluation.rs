//! Error metrics, range-query workload construction, and the no-partition
//! ablation baseline.
//!
//! Metric 1 sums per-clique L1 gaps between count marginals, normalized by
//! the true record count and the workload size ("normalized L1 workload
//! error"). Metric 2 is the mean squared error of range-query answers, with
//! answers normalized to fractions of each dataset's record count so
//! differently sized synthetic outputs stay comparable.

use rand::Rng;
use rand_distr::{Distribution, Exp1};
use serde::Serialize;

use crate::domain::{compute_marginal, Dataset, DomainSpec, Workload};
use crate::error::{Error, Result};
use crate::rng::substream;
use crate::selection::PartitionMode;
use crate::synthesizer::{synthesize, SynthesisConfig, SynthesisOutput};

/// Conjunction of closed per-attribute index ranges; attributes without a
/// range are unconstrained.
#[derive(Debug, Clone, Serialize)]
pub struct RangeQuery {
    pub ranges: Vec<Option<(u32, u32)>>,
}

impl RangeQuery {
    pub fn new(domain: &DomainSpec, ranges: Vec<Option<(u32, u32)>>) -> Result<Self> {
        if ranges.len() != domain.len() {
            return Err(Error::InvalidParam(
                "range query rank does not match the domain".into(),
            ));
        }
        for (a, r) in ranges.iter().enumerate() {
            if let Some((lo, hi)) = r {
                if lo > hi || *hi as usize >= domain.cardinality(a) {
                    return Err(Error::InvalidParam(format!(
                        "range [{lo},{hi}] invalid for attribute {a}"
                    )));
                }
            }
        }
        Ok(RangeQuery { ranges })
    }

    pub fn matches(&self, row: &[u32]) -> bool {
        self.ranges.iter().zip(row).all(|(r, &v)| match r {
            Some((lo, hi)) => *lo <= v && v <= *hi,
            None => true,
        })
    }
}

fn check_same_domain(a: &Dataset, b: &Dataset) -> Result<()> {
    let da = &a.domain;
    let db = &b.domain;
    let same = da.len() == db.len()
        && da
            .attributes
            .iter()
            .zip(&db.attributes)
            .all(|(x, y)| x.name == y.name && x.cardinality() == y.cardinality());
    if !same {
        return Err(Error::Schema("datasets have different domains".into()));
    }
    Ok(())
}

/// Normalized L1 workload error:
/// (1 / (N |W|)) * sum_w ||M_w(true) - M_w(synth)||_1 with N the true record
/// count. Synthetic marginals are scaled to mass N first, which is a no-op
/// for the default equal-size outputs.
pub fn workload_error(true_data: &Dataset, synth: &Dataset, w: &Workload) -> Result<f64> {
    check_same_domain(true_data, synth)?;
    if w.is_empty() {
        return Err(Error::InvalidParam("workload is empty".into()));
    }
    let n = true_data.n() as f64;
    if n == 0.0 {
        return Err(Error::InvalidParam("true dataset is empty".into()));
    }
    if synth.n() == 0 {
        return Err(Error::InvalidParam("synthetic dataset is empty".into()));
    }
    let scale = n / synth.n() as f64;
    let mut total = 0.0;
    for e in &w.entries {
        let mt = compute_marginal(true_data, &e.clique)?;
        let mut ms = compute_marginal(synth, &e.clique)?;
        ms.counts.iter_mut().for_each(|c| *c *= scale);
        total += crate::domain::marginal_l1(&mt, &ms)?;
    }
    Ok(total / (n * w.len() as f64))
}

fn fraction_matching(data: &Dataset, q: &RangeQuery) -> f64 {
    if data.n() == 0 {
        return 0.0;
    }
    let hits = data.rows().filter(|row| q.matches(row)).count();
    hits as f64 / data.n() as f64
}

/// Mean squared error of range-query answers, as fractions of each dataset's
/// record count.
pub fn range_query_error(
    true_data: &Dataset,
    synth: &Dataset,
    queries: &[RangeQuery],
) -> Result<f64> {
    check_same_domain(true_data, synth)?;
    if queries.is_empty() {
        return Err(Error::InvalidParam("query list is empty".into()));
    }
    let total: f64 = queries
        .iter()
        .map(|q| {
            let d = fraction_matching(true_data, q) - fraction_matching(synth, q);
            d * d
        })
        .sum();
    Ok(total / queries.len() as f64)
}

/// Draws per-attribute weights w_a = z_a^2 with z_a standard exponential.
pub fn squared_exponential_weights(domain: &DomainSpec, seed: u64) -> Vec<f64> {
    let mut rng = substream(seed, 0, "rq-weights");
    (0..domain.len())
        .map(|_| {
            let z: f64 = Exp1.sample(&mut rng);
            z * z
        })
        .collect()
}

/// Samples `n_cliques` distinct `dims`-way cliques with probability
/// proportional to the product of the member attributes' weights, then draws
/// `queries_per_clique` uniform sub-ranges per clique.
pub fn generate_range_queries_with_weights(
    domain: &DomainSpec,
    weights: &[f64],
    dims: usize,
    n_cliques: usize,
    queries_per_clique: usize,
    seed: u64,
) -> Result<Vec<RangeQuery>> {
    if dims == 0 || dims > domain.len() {
        return Err(Error::InvalidParam(format!(
            "query dims {dims} invalid for {}-attribute domain",
            domain.len()
        )));
    }
    if weights.len() != domain.len() {
        return Err(Error::InvalidParam("one weight per attribute required".into()));
    }
    // enumerate all combinations with their product weights
    let mut combos: Vec<(Vec<usize>, f64)> = Vec::new();
    let mut combo: Vec<usize> = (0..dims).collect();
    loop {
        let w: f64 = combo.iter().map(|&a| weights[a]).product();
        combos.push((combo.clone(), w));
        let d = domain.len();
        let mut advanced = false;
        for i in (0..dims).rev() {
            if combo[i] < d - dims + i {
                combo[i] += 1;
                for j in i + 1..dims {
                    combo[j] = combo[j - 1] + 1;
                }
                advanced = true;
                break;
            }
        }
        if !advanced {
            break;
        }
    }
    // weighted sampling without replacement: order by u^(1/w) descending
    let mut rng = substream(seed, 1, "rq-cliques");
    let mut keyed: Vec<(f64, usize)> = combos
        .iter()
        .enumerate()
        .map(|(i, (_, w))| {
            let u: f64 = rng.gen::<f64>().max(f64::MIN_POSITIVE);
            (u.powf(1.0 / w.max(1e-300)), i)
        })
        .collect();
    keyed.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap().then(a.1.cmp(&b.1)));
    let chosen: Vec<&Vec<usize>> = keyed
        .iter()
        .take(n_cliques)
        .map(|&(_, i)| &combos[i].0)
        .collect();

    let mut queries = Vec::with_capacity(chosen.len() * queries_per_clique);
    for (ci, attrs) in chosen.iter().enumerate() {
        let mut qrng = substream(seed, 2 + ci as u64, "rq-ranges");
        for _ in 0..queries_per_clique {
            let mut ranges: Vec<Option<(u32, u32)>> = vec![None; domain.len()];
            for &a in attrs.iter() {
                let card = domain.cardinality(a) as u32;
                let x = qrng.gen_range(0..card);
                let y = qrng.gen_range(0..card);
                ranges[a] = Some((x.min(y), x.max(y)));
            }
            queries.push(RangeQuery::new(domain, ranges)?);
        }
    }
    Ok(queries)
}

/// Range-query generation with weights drawn from the squared-exponential
/// distribution; deterministic per seed.
pub fn generate_range_queries(
    domain: &DomainSpec,
    dims: usize,
    n_cliques: usize,
    queries_per_clique: usize,
    seed: u64,
) -> Result<Vec<RangeQuery>> {
    let weights = squared_exponential_weights(domain, seed);
    generate_range_queries_with_weights(domain, &weights, dims, n_cliques, queries_per_clique, seed)
}

/// The ablation baseline: the identical pipeline with partitioning disabled,
/// so every candidate is measured per cell at |P| = cell count and RE = 0.
pub fn baseline_no_partition(
    data: &Dataset,
    workload: &Workload,
    config: &SynthesisConfig,
) -> Result<SynthesisOutput> {
    let mut cfg = config.clone();
    cfg.partition_mode = PartitionMode::Identity;
    synthesize(data, workload, &cfg)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::{marginal_l1, Clique};
    use crate::estimator::model_marginal;
    use crate::partition::{partition_1d, required_rho};
    use crate::synthesizer::BudgetSpec;

    fn two_cell_dataset(zeros: usize, ones: usize) -> Dataset {
        let domain = DomainSpec::from_cardinalities(&[2]);
        let mut rows = vec![vec![0u32]; zeros];
        rows.extend(vec![vec![1u32]; ones]);
        Dataset::new(domain, rows).unwrap()
    }

    #[test]
    fn workload_error_examples() {
        let truth = two_cell_dataset(2, 2);
        let synth = two_cell_dataset(1, 3);
        let w = Workload::from_cliques(vec![Clique::new(vec![0]).unwrap()]).unwrap();
        assert_eq!(workload_error(&truth, &truth, &w).unwrap(), 0.0);
        assert_eq!(workload_error(&truth, &synth, &w).unwrap(), 0.5);
    }

    #[test]
    fn workload_error_row_order_invariant() {
        let domain = DomainSpec::from_cardinalities(&[2, 2]);
        let rows = vec![vec![0, 0], vec![1, 1], vec![0, 1], vec![1, 0u32]];
        let a = Dataset::new(domain.clone(), rows.clone()).unwrap();
        let mut rev = rows.clone();
        rev.reverse();
        let b = Dataset::new(domain.clone(), rev).unwrap();
        let synth = Dataset::new(domain, vec![vec![0, 0]; 4]).unwrap();
        let w = Workload::from_cliques(vec![Clique::new(vec![0, 1]).unwrap()]).unwrap();
        assert_eq!(
            workload_error(&a, &synth, &w).unwrap(),
            workload_error(&b, &synth, &w).unwrap()
        );
    }

    #[test]
    fn range_query_error_examples() {
        let truth = two_cell_dataset(2, 2);
        let q_all = RangeQuery::new(&truth.domain, vec![Some((0, 1))]).unwrap();
        // identical datasets and full-domain queries give zero error
        assert_eq!(
            range_query_error(&truth, &truth, std::slice::from_ref(&q_all)).unwrap(),
            0.0
        );
        let synth = two_cell_dataset(1, 3);
        assert_eq!(range_query_error(&truth, &synth, &[q_all]).unwrap(), 0.0);

        // true 1/2 vs synth 1/4 -> 0.0625
        let q0 = RangeQuery::new(&truth.domain, vec![Some((0, 0))]).unwrap();
        let e = range_query_error(&truth, &synth, &[q0]).unwrap();
        assert!((e - 0.0625).abs() < 1e-12);

        assert!(range_query_error(&truth, &synth, &[]).is_err());
    }

    #[test]
    fn range_query_validation() {
        let domain = DomainSpec::from_cardinalities(&[3]);
        assert!(RangeQuery::new(&domain, vec![Some((1, 0))]).is_err());
        assert!(RangeQuery::new(&domain, vec![Some((0, 3))]).is_err());
        assert!(RangeQuery::new(&domain, vec![]).is_err());
        let q = RangeQuery::new(&domain, vec![None]).unwrap();
        assert!(q.matches(&[2]));
    }

    #[test]
    fn generated_queries_deterministic_and_distinct_cliques() {
        let domain = DomainSpec::from_cardinalities(&[3; 14]);
        let a = generate_range_queries(&domain, 3, 210, 2, 5).unwrap();
        let b = generate_range_queries(&domain, 3, 210, 2, 5).unwrap();
        assert_eq!(a.len(), 210 * 2);
        assert_eq!(
            serde_json::to_string(&a).unwrap(),
            serde_json::to_string(&b).unwrap()
        );
        let mut cliques = std::collections::HashSet::new();
        for q in a.chunks(2) {
            let attrs: Vec<usize> = q[0]
                .ranges
                .iter()
                .enumerate()
                .filter_map(|(i, r)| r.map(|_| i))
                .collect();
            assert_eq!(attrs.len(), 3);
            cliques.insert(attrs);
        }
        assert_eq!(cliques.len(), 210);
    }

    #[test]
    fn clique_inclusion_tracks_weights() {
        let domain = DomainSpec::from_cardinalities(&[2, 2, 2, 2]);
        let weights = [4.0, 2.0, 1.0, 0.5];
        let draws = 10_000usize;
        let mut counts = vec![0usize; 4];
        for s in 0..draws as u64 {
            let qs =
                generate_range_queries_with_weights(&domain, &weights, 1, 1, 1, s).unwrap();
            let attr = qs[0]
                .ranges
                .iter()
                .position(|r| r.is_some())
                .unwrap();
            counts[attr] += 1;
        }
        let z: f64 = weights.iter().sum();
        let chi2: f64 = counts
            .iter()
            .zip(&weights)
            .map(|(&c, &w)| {
                let expect = draws as f64 * w / z;
                let d = c as f64 - expect;
                d * d / expect
            })
            .sum();
        // chi-square 0.999 quantile, 3 degrees of freedom
        assert!(chi2 < 16.267, "chi2 = {chi2}, counts {counts:?}");
    }

    #[test]
    fn baseline_requires_more_budget_on_flat_marginals() {
        // near-equal cells: partitioning collapses them at RE ~ 0
        let counts = vec![10.0, 10.2, 9.9, 10.1, 10.0, 9.8, 10.05, 10.0];
        let m = crate::domain::Marginal {
            clique: Clique::new(vec![0]).unwrap(),
            counts: counts.clone(),
        };
        let contr = 20.0;
        let eta = 0.7;
        let adaptive = partition_1d(&m, contr, eta).unwrap();
        let identity_rho = required_rho(counts.len(), contr, eta, 0.0);
        assert!(adaptive.rho < identity_rho);
        assert!(adaptive.partition.size() < counts.len());
    }

    #[test]
    fn metrics_nonnegative_and_zero_iff_equal() {
        use crate::rng::substream;
        use rand::Rng;
        let domain = DomainSpec::from_cardinalities(&[3, 4]);
        let w = Workload::from_cliques(vec![
            Clique::new(vec![0]).unwrap(),
            Clique::new(vec![0, 1]).unwrap(),
        ])
        .unwrap();
        let mut rng = substream(51, 0, "test-metric-props");
        for _ in 0..30 {
            let n = rng.gen_range(1..40);
            let rows_a: Vec<Vec<u32>> = (0..n)
                .map(|_| vec![rng.gen_range(0..3), rng.gen_range(0..4)])
                .collect();
            let rows_b: Vec<Vec<u32>> = (0..n)
                .map(|_| vec![rng.gen_range(0..3), rng.gen_range(0..4)])
                .collect();
            let a = Dataset::new(domain.clone(), rows_a.clone()).unwrap();
            let b = Dataset::new(domain.clone(), rows_b).unwrap();
            let we = workload_error(&a, &b, &w).unwrap();
            assert!(we >= 0.0);
            assert_eq!(workload_error(&a, &a, &w).unwrap(), 0.0);
            // zero iff the workload marginals coincide
            let coincide = w.entries.iter().all(|e| {
                let ma = compute_marginal(&a, &e.clique).unwrap();
                let mb = compute_marginal(&b, &e.clique).unwrap();
                ma.counts == mb.counts
            });
            assert_eq!(we == 0.0, coincide);

            let queries = generate_range_queries(&domain, 2, 3, 4, 99).unwrap();
            let rqe = range_query_error(&a, &b, &queries).unwrap();
            assert!(rqe >= 0.0);
            assert_eq!(range_query_error(&a, &a, &queries).unwrap(), 0.0);
        }
    }

    #[test]
    fn noiseless_baseline_and_adaptive_converge_together() {
        let domain = DomainSpec::from_cardinalities(&[3, 3]);
        let rows: Vec<Vec<u32>> = (0..300)
            .map(|i| vec![(i % 3) as u32, ((i / 3) % 3) as u32])
            .collect();
        let data = Dataset::new(domain, rows).unwrap();
        let workload = Workload::from_cliques(vec![
            Clique::new(vec![0]).unwrap(),
            Clique::new(vec![0, 1]).unwrap(),
        ])
        .unwrap();
        let mut config = SynthesisConfig::new(BudgetSpec::Rho { rho: 50.0 }, 11);
        config.noiseless = true;
        config.rounds = 2;
        let adaptive = synthesize(&data, &workload, &config).unwrap();
        let baseline = baseline_no_partition(&data, &workload, &config).unwrap();
        // with noise off both pipelines measure until nothing contributes,
        // so both models agree with the data on every workload clique
        for e in &workload.entries {
            let t = compute_marginal(&data, &e.clique).unwrap();
            let ma = model_marginal(&adaptive.model, &e.clique).unwrap();
            let mb = model_marginal(&baseline.model, &e.clique).unwrap();
            let n = data.n() as f64;
            assert!(marginal_l1(&t, &ma).unwrap() < 2e-3 * n);
            assert!(marginal_l1(&t, &mb).unwrap() < 2e-3 * n);
        }
    }
}
