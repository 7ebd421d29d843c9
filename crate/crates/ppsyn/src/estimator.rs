//! Full-domain distribution fitting from noisy marginal measurements.
//!
//! Minimizes sum_i w_i * ||M_{w_i}(p) - v_i||_2^2 over {p >= 0, sum p = n} by
//! entropic mirror descent: p <- p * exp(-alpha * g), rescaled to mass n, with
//! alpha found by backtracking halving from 1.0 under an Armijo acceptance
//! test. Weights default to 1/sigma_i; an option switches to 1/sigma_i^2.
//!
//! The domain is represented densely, so the total cell count is capped
//! (default 2^20). Multiplicative updates keep the iterate strictly positive
//! and the rescale keeps its mass at n, so the feasible-set invariants hold by
//! construction.

use std::collections::BTreeMap;

use rand::Rng;

use crate::domain::{CellIndexer, Clique, Dataset, DomainSpec, Marginal};
use crate::error::{Error, Result};

/// Default dense-domain cap.
pub const DEFAULT_DOMAIN_CAP: usize = 1 << 20;

/// Per-cell estimates of one measured marginal, with the noise scale that
/// produced them and the size of the interval each cell was expanded from.
#[derive(Debug, Clone)]
pub struct NoisyMeasurement {
    pub clique: Clique,
    pub values: Vec<f64>,
    pub sigma: f64,
    /// |I(i)| per cell; all 1 when the marginal was measured per-cell.
    pub interval_sizes: Vec<f64>,
}

impl NoisyMeasurement {
    pub fn new(clique: Clique, values: Vec<f64>, sigma: f64, interval_sizes: Vec<f64>) -> Result<Self> {
        if !(sigma > 0.0) {
            return Err(Error::InvalidParam("measurement sigma must be positive".into()));
        }
        if interval_sizes.len() != values.len() {
            return Err(Error::InvalidParam(
                "interval_sizes length must match values".into(),
            ));
        }
        Ok(NoisyMeasurement {
            clique,
            values,
            sigma,
            interval_sizes,
        })
    }

    /// Unpartitioned measurement: every cell its own interval.
    pub fn per_cell(clique: Clique, values: Vec<f64>, sigma: f64) -> Result<Self> {
        let sizes = vec![1.0; values.len()];
        NoisyMeasurement::new(clique, values, sigma, sizes)
    }
}

/// Objective weighting of each measurement.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize)]
#[serde(rename_all = "snake_case")]
pub enum WeightMode {
    /// 1/sigma_i, the objective as printed.
    InverseSigma,
    /// 1/sigma_i^2, the usual inverse-variance alternative.
    InverseSigmaSq,
}

impl WeightMode {
    fn weight(self, sigma: f64) -> f64 {
        match self {
            WeightMode::InverseSigma => 1.0 / sigma,
            WeightMode::InverseSigmaSq => 1.0 / (sigma * sigma),
        }
    }
}

#[derive(Debug, Clone)]
pub struct FitOptions {
    pub domain_cap: usize,
    pub weight_mode: WeightMode,
    pub max_iters: usize,
    pub rel_tol: f64,
}

impl Default for FitOptions {
    fn default() -> Self {
        FitOptions {
            domain_cap: DEFAULT_DOMAIN_CAP,
            weight_mode: WeightMode::InverseSigma,
            max_iters: 2500,
            rel_tol: 1e-8,
        }
    }
}

/// A fitted non-negative distribution over the full domain with total mass n.
#[derive(Debug, Clone)]
pub struct DistributionModel {
    pub domain: DomainSpec,
    pub p_hat: Vec<f64>,
}

impl DistributionModel {
    pub fn mass(&self) -> f64 {
        self.p_hat.iter().sum()
    }

    pub fn uniform(domain: DomainSpec, mass: f64, cap: usize) -> Result<Self> {
        let cells = checked_cells(&domain, cap)?;
        Ok(DistributionModel {
            domain,
            p_hat: vec![mass / cells as f64; cells],
        })
    }
}

fn checked_cells(domain: &DomainSpec, cap: usize) -> Result<usize> {
    let cells = domain
        .total_cells()
        .ok_or(Error::DomainCapExceeded { cells: usize::MAX, cap })?;
    if cells > cap {
        return Err(Error::DomainCapExceeded { cells, cap });
    }
    Ok(cells)
}

/// One measured value vector and its objective weight.
type WeightedValues = (Vec<f64>, f64);

/// Measurements grouped by clique so each model marginal is computed once per
/// evaluation regardless of how many times the clique was measured.
struct MeasGroups {
    /// (projector: domain cell -> marginal cell, marginal size, entries)
    groups: Vec<(Vec<u32>, usize, Vec<WeightedValues>)>,
}

impl MeasGroups {
    fn build(
        domain: &DomainSpec,
        measurements: &[NoisyMeasurement],
        mode: WeightMode,
    ) -> Result<Self> {
        let mut by_clique: BTreeMap<Clique, Vec<usize>> = BTreeMap::new();
        for (i, m) in measurements.iter().enumerate() {
            m.clique.validate(domain)?;
            if m.values.len() != m.clique.cell_count(domain) {
                return Err(Error::InvalidParam(format!(
                    "measurement on {:?} has {} values, clique has {} cells",
                    m.clique.attrs(),
                    m.values.len(),
                    m.clique.cell_count(domain)
                )));
            }
            by_clique.entry(m.clique.clone()).or_default().push(i);
        }
        let mut groups = Vec::with_capacity(by_clique.len());
        for (clique, idxs) in by_clique {
            let indexer = CellIndexer::new(domain, &clique);
            let proj = indexer.projection_table(domain);
            let entries = idxs
                .into_iter()
                .map(|i| {
                    (
                        measurements[i].values.clone(),
                        mode.weight(measurements[i].sigma),
                    )
                })
                .collect();
            groups.push((proj, indexer.cells(), entries));
        }
        Ok(MeasGroups { groups })
    }

    fn objective(&self, p: &[f64]) -> f64 {
        let mut total = 0.0;
        let mut marg = Vec::new();
        for (proj, size, entries) in &self.groups {
            marg.clear();
            marg.resize(*size, 0.0);
            for (x, &px) in p.iter().enumerate() {
                marg[proj[x] as usize] += px;
            }
            for (values, weight) in entries {
                let ss: f64 = marg
                    .iter()
                    .zip(values)
                    .map(|(m, v)| (m - v) * (m - v))
                    .sum();
                total += weight * ss;
            }
        }
        total
    }

    fn gradient(&self, p: &[f64], g: &mut [f64]) {
        g.iter_mut().for_each(|x| *x = 0.0);
        let mut marg = Vec::new();
        let mut resid = Vec::new();
        for (proj, size, entries) in &self.groups {
            marg.clear();
            marg.resize(*size, 0.0);
            for (x, &px) in p.iter().enumerate() {
                marg[proj[x] as usize] += px;
            }
            resid.clear();
            resid.resize(*size, 0.0);
            for (values, weight) in entries {
                for ((r, m), v) in resid.iter_mut().zip(&marg).zip(values) {
                    *r += 2.0 * weight * (m - v);
                }
            }
            for (x, gx) in g.iter_mut().enumerate() {
                *gx += resid[proj[x] as usize];
            }
        }
    }
}

/// Objective value of the fit problem at an arbitrary point `p`.
pub fn objective_at(
    domain: &DomainSpec,
    measurements: &[NoisyMeasurement],
    mode: WeightMode,
    p: &[f64],
) -> Result<f64> {
    Ok(MeasGroups::build(domain, measurements, mode)?.objective(p))
}

/// Analytic gradient of the fit objective at `p`.
pub fn gradient_at(
    domain: &DomainSpec,
    measurements: &[NoisyMeasurement],
    mode: WeightMode,
    p: &[f64],
) -> Result<Vec<f64>> {
    let groups = MeasGroups::build(domain, measurements, mode)?;
    let mut g = vec![0.0; p.len()];
    groups.gradient(p, &mut g);
    Ok(g)
}

#[derive(Debug)]
pub struct FitOutcome {
    pub model: DistributionModel,
    pub iterations: usize,
    pub objective: f64,
}

/// Fits the distribution to the measurements, warm-starting from `prev` when
/// present and from uniform otherwise.
pub fn fit(
    domain: &DomainSpec,
    measurements: &[NoisyMeasurement],
    n: f64,
    prev: Option<&DistributionModel>,
    opts: &FitOptions,
) -> Result<FitOutcome> {
    if !(n > 0.0) {
        return Err(Error::InvalidParam("record count must be positive".into()));
    }
    let cells = checked_cells(domain, opts.domain_cap)?;
    let groups = MeasGroups::build(domain, measurements, opts.weight_mode)?;

    let mut p: Vec<f64> = match prev {
        Some(model) => {
            if model.p_hat.len() != cells {
                return Err(Error::InvalidParam(
                    "warm-start model does not match the domain".into(),
                ));
            }
            model.p_hat.iter().map(|&x| x.max(1e-300)).collect()
        }
        None => vec![n / cells as f64; cells],
    };
    rescale(&mut p, n);

    let mut objective = groups.objective(&p);
    let mut g = vec![0.0f64; cells];
    let mut q = vec![0.0f64; cells];
    let mut iterations = 0usize;

    for _ in 0..opts.max_iters {
        groups.gradient(&p, &mut g);
        let mut alpha = 1.0f64;
        let mut accepted = None;
        for _ in 0..60 {
            for (qx, (&px, &gx)) in q.iter_mut().zip(p.iter().zip(&g)) {
                let e = (-alpha * gx).clamp(-700.0, 700.0);
                *qx = (px * e.exp()).max(1e-300);
            }
            rescale(&mut q, n);
            let cand = groups.objective(&q);
            if cand.is_finite() {
                let dot: f64 = g.iter().zip(q.iter().zip(&p)).map(|(gx, (qx, px))| gx * (qx - px)).sum();
                if cand <= objective + 1e-4 * alpha * dot.min(0.0) {
                    accepted = Some(cand);
                    break;
                }
            }
            alpha *= 0.5;
        }
        let Some(cand) = accepted else { break };
        assert!(cand <= objective, "objective increased on an accepted step");
        let improvement = objective - cand;
        let rel = improvement / objective.abs().max(1e-300);
        std::mem::swap(&mut p, &mut q);
        objective = cand;
        iterations += 1;
        if rel < opts.rel_tol {
            break;
        }
    }

    let mass: f64 = p.iter().sum();
    assert!(
        (mass - n).abs() <= 1e-6 * n,
        "fitted mass {mass} drifted from {n}"
    );
    assert!(p.iter().all(|&x| x >= 0.0));
    Ok(FitOutcome {
        model: DistributionModel {
            domain: domain.clone(),
            p_hat: p,
        },
        iterations,
        objective,
    })
}

fn rescale(p: &mut [f64], n: f64) {
    let mass: f64 = p.iter().sum();
    if mass > 0.0 {
        let scale = n / mass;
        p.iter_mut().for_each(|x| *x *= scale);
    }
}

/// Marginal of the fitted distribution on `clique`.
pub fn model_marginal(model: &DistributionModel, clique: &Clique) -> Result<Marginal> {
    clique.validate(&model.domain)?;
    let indexer = CellIndexer::new(&model.domain, clique);
    let proj = indexer.projection_table(&model.domain);
    let mut counts = vec![0.0f64; indexer.cells()];
    for (x, &px) in model.p_hat.iter().enumerate() {
        counts[proj[x] as usize] += px;
    }
    Ok(Marginal {
        clique: clique.clone(),
        counts,
    })
}

/// Draws `count` i.i.d. records from p_hat / mass.
pub fn sample<R: Rng>(model: &DistributionModel, count: usize, rng: &mut R) -> Result<Dataset> {
    let mass = model.mass();
    if !(mass > 0.0) {
        return Err(Error::InvalidParam("cannot sample from zero mass".into()));
    }
    let mut cdf = Vec::with_capacity(model.p_hat.len());
    let mut acc = 0.0f64;
    for &x in &model.p_hat {
        acc += x;
        cdf.push(acc);
    }
    let full = CellIndexer::new(&model.domain, &model.domain.full_clique());
    let d = model.domain.len();
    let mut values: Vec<u32> = Vec::with_capacity(count * d);
    for _ in 0..count {
        let u: f64 = rng.gen::<f64>() * acc;
        // first cell whose cdf exceeds u; zero-mass cells are never first
        let cell = cdf.partition_point(|&c| c <= u).min(cdf.len() - 1);
        for coord in full.coords_of_index(cell) {
            values.push(coord as u32);
        }
    }
    Ok(Dataset::from_flat(model.domain.clone(), values, count))
}
