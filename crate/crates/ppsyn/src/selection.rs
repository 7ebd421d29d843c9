//! Marginal selection by privatized contribution-per-unit-budget.
//!
//! Each round scores every workload clique as Contr_w / rho_w, where Contr_w
//! is the L1 gap between the true marginal and the current model's marginal
//! and rho_w is the budget its partition requires, then draws one clique via
//! the exponential mechanism. Candidates whose required budget does not fit
//! in the remaining ledger are discarded; when nothing survives the caller
//! receives `Exhausted` and stops.
//!
//! Partition trajectories depend only on the true counts, so the selector
//! caches one per workload clique and reuses it across rounds.

use rand::Rng;
use rayon::prelude::*;

use crate::domain::{compute_marginal, marginal_l1, Dataset, Marginal, Workload};
use crate::error::{Error, Result};
use crate::estimator::{model_marginal, DistributionModel};
use crate::partition::{
    partition_1d_from, partition_md_from, precompute_merge_sequence, precompute_split_sequence,
    required_rho, MergeTrajectory, Partition, PartitionResult, SplitTrajectory,
};
use crate::privacy::{em_epsilon_for_rho, exponential_select};

/// L1 gap between the true marginal and the model's marginal: the error the
/// model could shed by measuring this clique.
pub fn potential_contribution(true_m: &Marginal, model_m: &Marginal) -> Result<f64> {
    marginal_l1(true_m, model_m)
}

/// Whether candidates are partitioned adaptively or measured per cell.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize)]
#[serde(rename_all = "snake_case")]
pub enum PartitionMode {
    Adaptive,
    /// Identity partition: |P| = cell count, RE = 0. The no-partition
    /// ablation baseline.
    Identity,
}

enum Trajectory {
    One(MergeTrajectory),
    Multi(SplitTrajectory),
}

/// Per-candidate detail for the --trace output.
#[derive(Debug, Clone, serde::Serialize)]
pub struct CandidateTrace {
    pub clique: Vec<String>,
    pub contr: f64,
    /// None when the candidate never reached a finite required budget.
    pub rho_w: Option<f64>,
    pub partition_size: usize,
    pub re: f64,
    pub score: f64,
    pub feasible: bool,
}

#[derive(Debug)]
pub enum SelectionOutcome {
    Selected {
        entry_idx: usize,
        result: PartitionResult,
        contr: f64,
        score: f64,
    },
    Exhausted,
}

pub struct Selector {
    workload: Workload,
    true_marginals: Vec<Marginal>,
    dims: Vec<Vec<usize>>,
    trajectories: Vec<Option<Trajectory>>,
}

impl Selector {
    pub fn new(data: &Dataset, workload: Workload) -> Result<Self> {
        if workload.is_empty() {
            return Err(Error::InvalidParam("workload is empty".into()));
        }
        let true_marginals: Vec<Marginal> = workload
            .entries
            .iter()
            .map(|e| compute_marginal(data, &e.clique))
            .collect::<Result<_>>()?;
        let dims = workload
            .entries
            .iter()
            .map(|e| e.clique.dims(&data.domain))
            .collect();
        let trajectories = workload.entries.iter().map(|_| None).collect();
        Ok(Selector {
            workload,
            true_marginals,
            dims,
            trajectories,
        })
    }

    pub fn workload(&self) -> &Workload {
        &self.workload
    }

    pub fn true_marginal(&self, entry_idx: usize) -> &Marginal {
        &self.true_marginals[entry_idx]
    }

    fn ensure_trajectories(&mut self, needed: &[usize]) {
        let missing: Vec<usize> = needed
            .iter()
            .copied()
            .filter(|&i| self.trajectories[i].is_none())
            .collect();
        let built: Vec<(usize, Trajectory)> = missing
            .into_par_iter()
            .map(|i| {
                let m = &self.true_marginals[i];
                let traj = if self.dims[i].len() == 1 {
                    Trajectory::One(precompute_merge_sequence(m))
                } else {
                    Trajectory::Multi(precompute_split_sequence(m, &self.dims[i]))
                };
                (i, traj)
            })
            .collect();
        for (i, traj) in built {
            self.trajectories[i] = Some(traj);
        }
    }

    /// One selection round. `remaining_rho` is the ledger headroom before the
    /// round's exponential-mechanism charge; the caller charges `rho_exp` and
    /// the selected candidate's rho itself.
    #[allow(clippy::too_many_arguments)]
    pub fn select<R: Rng>(
        &mut self,
        model: &DistributionModel,
        remaining_rho: f64,
        rho_exp: f64,
        eta: f64,
        delta_sens: f64,
        mode: PartitionMode,
        rng: &mut R,
        noiseless: bool,
    ) -> Result<(SelectionOutcome, Vec<CandidateTrace>)> {
        if rho_exp > remaining_rho + 1e-12 {
            return Err(Error::InvalidParam(
                "selection budget exceeds remaining budget".into(),
            ));
        }
        let contrs: Vec<f64> = self
            .workload
            .entries
            .par_iter()
            .zip(&self.true_marginals)
            .map(|(e, true_m)| {
                let model_m = model_marginal(model, &e.clique)?;
                potential_contribution(true_m, &model_m)
            })
            .collect::<Result<_>>()?;

        if mode == PartitionMode::Adaptive {
            let needed: Vec<usize> = (0..contrs.len()).filter(|&i| contrs[i] > 0.0).collect();
            self.ensure_trajectories(&needed);
        }

        let budget_cap = remaining_rho - rho_exp;
        let mut traces = Vec::with_capacity(contrs.len());
        let mut survivors: Vec<(usize, f64, PartitionResult)> = Vec::new();
        for (i, &contr) in contrs.iter().enumerate() {
            let clique = &self.workload.entries[i].clique;
            let names = clique.names(&model.domain);
            if contr <= 0.0 {
                traces.push(CandidateTrace {
                    clique: names,
                    contr,
                    rho_w: None,
                    partition_size: 0,
                    re: 0.0,
                    score: 0.0,
                    feasible: false,
                });
                continue;
            }
            let result = match mode {
                PartitionMode::Adaptive => {
                    match self.trajectories[i].as_ref().expect("built above") {
                        Trajectory::One(traj) => partition_1d_from(traj, contr, eta)?,
                        Trajectory::Multi(traj) => partition_md_from(traj, contr, eta)?,
                    }
                }
                PartitionMode::Identity => {
                    let cells = self.true_marginals[i].counts.len();
                    let rho = required_rho(cells, contr, eta, 0.0);
                    PartitionResult {
                        partition: Partition::identity(clique.clone(), cells),
                        rho,
                        re: 0.0,
                    }
                }
            };
            let feasible = result.rho.is_finite() && result.rho <= budget_cap + 1e-12;
            let score = if result.rho.is_finite() {
                contr / result.rho
            } else {
                0.0
            };
            traces.push(CandidateTrace {
                clique: names,
                contr,
                rho_w: result.rho.is_finite().then_some(result.rho),
                partition_size: result.partition.size(),
                re: result.re,
                score,
                feasible,
            });
            if feasible {
                survivors.push((i, score, result));
            }
        }

        if survivors.is_empty() {
            return Ok((SelectionOutcome::Exhausted, traces));
        }
        let epsilon = em_epsilon_for_rho(rho_exp)?;
        let scores: Vec<f64> = survivors.iter().map(|s| s.1).collect();
        let pick = exponential_select(&scores, epsilon, delta_sens, rng, noiseless)?;
        let (entry_idx, score, result) = survivors.swap_remove(pick);
        Ok((
            SelectionOutcome::Selected {
                entry_idx,
                result,
                contr: contrs[entry_idx],
                score,
            },
            traces,
        ))
    }
}

/// One-shot partition-based marginal selection over a fresh selector.
#[allow(clippy::too_many_arguments)]
pub fn part_sele<R: Rng>(
    workload: &Workload,
    model: &DistributionModel,
    data: &Dataset,
    remaining_rho: f64,
    rho_exp: f64,
    eta: f64,
    delta_sens: f64,
    rng: &mut R,
    noiseless: bool,
) -> Result<SelectionOutcome> {
    let mut selector = Selector::new(data, workload.clone())?;
    let (outcome, _) = selector.select(
        model,
        remaining_rho,
        rho_exp,
        eta,
        delta_sens,
        PartitionMode::Adaptive,
        rng,
        noiseless,
    )?;
    Ok(outcome)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::{Clique, DomainSpec};
    use crate::estimator::DEFAULT_DOMAIN_CAP;
    use crate::rng::substream;
    use std::f64::consts::PI;

    fn uniform_model(domain: &DomainSpec, n: f64) -> DistributionModel {
        DistributionModel::uniform(domain.clone(), n, DEFAULT_DOMAIN_CAP).unwrap()
    }

    fn skewed_dataset() -> Dataset {
        // attr 0 concentrated on value 0; attr 1 uniform-ish
        let domain = DomainSpec::from_cardinalities(&[4, 2]);
        let mut rows = Vec::new();
        for i in 0..40 {
            rows.push(vec![0, (i % 2) as u32]);
        }
        for i in 0..8 {
            rows.push(vec![(i % 4) as u32, 0]);
        }
        Dataset::new(domain, rows).unwrap()
    }

    #[test]
    fn contribution_examples() {
        let clique = Clique::new(vec![0]).unwrap();
        let t = Marginal {
            clique: clique.clone(),
            counts: vec![4.0, 0.0],
        };
        let m_same = t.clone();
        assert_eq!(potential_contribution(&t, &m_same).unwrap(), 0.0);
        let m = Marginal {
            clique,
            counts: vec![2.0, 2.0],
        };
        assert_eq!(potential_contribution(&t, &m).unwrap(), 4.0);
    }

    #[test]
    fn contribution_bounded_by_twice_mass() {
        let mut rng = substream(41, 0, "test-contr");
        use rand::Rng;
        let clique = Clique::new(vec![0]).unwrap();
        for _ in 0..50 {
            let len = rng.gen_range(1..20);
            let n = 100.0;
            let mut a: Vec<f64> = (0..len).map(|_| rng.gen::<f64>()).collect();
            let sa: f64 = a.iter().sum();
            a.iter_mut().for_each(|x| *x *= n / sa);
            let mut b: Vec<f64> = (0..len).map(|_| rng.gen::<f64>()).collect();
            let sb: f64 = b.iter().sum();
            b.iter_mut().for_each(|x| *x *= n / sb);
            let ma = Marginal {
                clique: clique.clone(),
                counts: a,
            };
            let mb = Marginal {
                clique: clique.clone(),
                counts: b,
            };
            assert!(potential_contribution(&ma, &mb).unwrap() <= 2.0 * n + 1e-9);
        }
    }

    #[test]
    fn single_feasible_candidate_always_selected() {
        let data = skewed_dataset();
        let n = data.n() as f64;
        let workload =
            Workload::from_cliques(vec![Clique::new(vec![0]).unwrap()]).unwrap();
        let model = uniform_model(&data.domain, n);
        let mut selector = Selector::new(&data, workload).unwrap();
        for round in 0..20u64 {
            let mut rng = substream(5, round, "select");
            let (outcome, _) = selector
                .select(
                    &model,
                    10.0,
                    0.01,
                    0.7,
                    1.0,
                    PartitionMode::Adaptive,
                    &mut rng,
                    false,
                )
                .unwrap();
            match outcome {
                SelectionOutcome::Selected { entry_idx, .. } => assert_eq!(entry_idx, 0),
                SelectionOutcome::Exhausted => panic!("should select the only candidate"),
            }
        }
    }

    #[test]
    fn noiseless_selects_max_score() {
        let data = skewed_dataset();
        let n = data.n() as f64;
        let workload = Workload::from_cliques(vec![
            Clique::new(vec![0]).unwrap(),
            Clique::new(vec![1]).unwrap(),
            Clique::new(vec![0, 1]).unwrap(),
        ])
        .unwrap();
        let model = uniform_model(&data.domain, n);
        let mut selector = Selector::new(&data, workload).unwrap();
        let mut rng = substream(6, 0, "select");
        let (outcome, traces) = selector
            .select(
                &model,
                100.0,
                0.01,
                0.7,
                1.0,
                PartitionMode::Adaptive,
                &mut rng,
                true,
            )
            .unwrap();
        let best_by_trace = traces
            .iter()
            .enumerate()
            .filter(|(_, t)| t.feasible)
            .max_by(|a, b| a.1.score.partial_cmp(&b.1.score).unwrap())
            .unwrap()
            .0;
        match outcome {
            SelectionOutcome::Selected {
                entry_idx, result, ..
            } => {
                assert_eq!(entry_idx, best_by_trace);
                // budget feasibility of the returned candidate
                assert!(result.rho <= 100.0 - 0.01 + 1e-12);
            }
            SelectionOutcome::Exhausted => panic!("candidates exist"),
        }
    }

    #[test]
    fn identity_mode_uses_per_cell_formula() {
        let data = skewed_dataset();
        let n = data.n() as f64;
        let workload =
            Workload::from_cliques(vec![Clique::new(vec![0]).unwrap()]).unwrap();
        let model = uniform_model(&data.domain, n);
        let mut selector = Selector::new(&data, workload).unwrap();
        let mut rng = substream(7, 0, "select");
        let eta = 0.7;
        let (outcome, traces) = selector
            .select(
                &model,
                1e9,
                0.01,
                eta,
                1.0,
                PartitionMode::Identity,
                &mut rng,
                true,
            )
            .unwrap();
        let contr = traces[0].contr;
        let cells = 4.0f64;
        let expect_rho = cells * cells / (PI * (eta * contr) * (eta * contr));
        match outcome {
            SelectionOutcome::Selected { result, .. } => {
                assert_eq!(result.partition.size(), 4);
                assert_eq!(result.re, 0.0);
                assert!((result.rho - expect_rho).abs() < 1e-9 * expect_rho);
            }
            SelectionOutcome::Exhausted => panic!(),
        }
    }

    #[test]
    fn exhausted_when_budget_too_small() {
        let data = skewed_dataset();
        let n = data.n() as f64;
        let workload =
            Workload::from_cliques(vec![Clique::new(vec![0, 1]).unwrap()]).unwrap();
        let model = uniform_model(&data.domain, n);
        let mut selector = Selector::new(&data, workload).unwrap();
        let mut rng = substream(8, 0, "select");
        // remaining budget barely covers the exponential mechanism
        let (outcome, _) = selector
            .select(
                &model,
                1e-9,
                1e-9,
                0.7,
                1.0,
                PartitionMode::Adaptive,
                &mut rng,
                false,
            )
            .unwrap();
        assert!(matches!(outcome, SelectionOutcome::Exhausted));
    }

    #[test]
    fn exhausted_when_model_matches_data() {
        // model equals the data distribution: all contributions are 0
        let domain = DomainSpec::from_cardinalities(&[2]);
        let rows = vec![vec![0u32], vec![0], vec![1], vec![1]];
        let data = Dataset::new(domain.clone(), rows).unwrap();
        let model = DistributionModel {
            domain,
            p_hat: vec![2.0, 2.0],
        };
        let workload =
            Workload::from_cliques(vec![Clique::new(vec![0]).unwrap()]).unwrap();
        let mut rng = substream(9, 0, "select");
        let outcome = part_sele(
            &workload, &model, &data, 1.0, 0.001, 0.7, 1.0, &mut rng, false,
        )
        .unwrap();
        assert!(matches!(outcome, SelectionOutcome::Exhausted));
    }

    #[test]
    fn selection_frequencies_match_softmax() {
        let data = skewed_dataset();
        let n = data.n() as f64;
        let workload = Workload::from_cliques(vec![
            Clique::new(vec![0]).unwrap(),
            Clique::new(vec![1]).unwrap(),
            Clique::new(vec![0, 1]).unwrap(),
        ])
        .unwrap();
        let model = uniform_model(&data.domain, n);
        let mut selector = Selector::new(&data, workload).unwrap();
        let rho_exp = 0.005;
        // dry run to read the scores, then pick a sensitivity that spreads
        // the softmax over all three candidates
        let mut dry_rng = substream(10, u64::MAX, "select");
        let (_, dry) = selector
            .select(
                &model,
                1e9,
                rho_exp,
                0.7,
                1.0,
                PartitionMode::Adaptive,
                &mut dry_rng,
                true,
            )
            .unwrap();
        let scores: Vec<f64> = dry.iter().map(|t| t.score).collect();
        let max = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let min = scores.iter().cloned().fold(f64::INFINITY, f64::min);
        let delta_sens = (max - min).max(1e-9);

        let draws = 20_000usize;
        let mut counts = vec![0usize; 3];
        for round in 0..draws as u64 {
            let mut rng = substream(10, round, "select");
            let (outcome, _) = selector
                .select(
                    &model,
                    1e9,
                    rho_exp,
                    0.7,
                    delta_sens,
                    PartitionMode::Adaptive,
                    &mut rng,
                    false,
                )
                .unwrap();
            match outcome {
                SelectionOutcome::Selected { entry_idx, .. } => counts[entry_idx] += 1,
                SelectionOutcome::Exhausted => panic!(),
            }
        }
        let eps = em_epsilon_for_rho(rho_exp).unwrap();
        let w: Vec<f64> = scores
            .iter()
            .map(|s| (eps * (s - max) / (2.0 * delta_sens)).exp())
            .collect();
        let z: f64 = w.iter().sum();
        let chi2: f64 = counts
            .iter()
            .zip(&w)
            .map(|(&c, &wi)| {
                let expect = draws as f64 * wi / z;
                let d = c as f64 - expect;
                d * d / expect
            })
            .sum();
        // chi-square 0.999 quantile, 2 degrees of freedom
        assert!(chi2 < 13.816, "chi2 = {chi2}, counts {counts:?}");
    }
}
