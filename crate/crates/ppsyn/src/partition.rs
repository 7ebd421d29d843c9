//! Marginal partitioning: grouping cells into intervals so noise is added per
//! interval instead of per cell.
//!
//! A partition trades reconstruction error (RE, the L1 gap to the piecewise
//! uniform approximation) against noise error (NE = |P|/sqrt(pi rho)). Given a
//! contribution budget `contr` and an error cap `eta`, the required privacy
//! budget |P|^2 / (pi (eta contr - RE)^2) makes NE exactly fill the remaining
//! allowance, so RE + NE = eta contr for every returned partition.
//!
//! One-dimensional marginals merge count-sorted cells greedily; multi-
//! dimensional marginals split axis-aligned boxes greedily. Both trajectories
//! depend only on the true counts, so they are precomputed once per marginal
//! and reused across selection rounds; only the stopping index depends on
//! `contr` and `eta`.

use crate::domain::{Clique, Marginal};
use crate::error::{Error, Result};

/// Axis-aligned box: one half-open index range per clique dimension.
pub type AxisBox = Vec<(usize, usize)>;

#[derive(Debug, Clone)]
pub enum PartitionDetail {
    /// Contiguous runs over a count-sorted permutation of the cells.
    /// `bounds` holds `size+1` offsets into `perm`, starting at 0.
    OneDim { perm: Vec<usize>, bounds: Vec<usize> },
    /// Axis-aligned boxes tiling the clique's cell grid.
    MultiDim { boxes: Vec<AxisBox> },
}

#[derive(Debug, Clone)]
pub struct Partition {
    pub clique: Clique,
    /// Per-dimension cardinalities of the clique.
    pub dims: Vec<usize>,
    pub detail: PartitionDetail,
}

impl Partition {
    pub fn new_one_dim(clique: Clique, perm: Vec<usize>, bounds: Vec<usize>) -> Result<Self> {
        if bounds.len() < 2 || bounds[0] != 0 || *bounds.last().unwrap() != perm.len() {
            return Err(Error::InvalidParam(
                "interval bounds must start at 0 and end at the cell count".into(),
            ));
        }
        if !bounds.windows(2).all(|w| w[0] < w[1]) {
            return Err(Error::InvalidParam("interval bounds must increase".into()));
        }
        let dims = vec![perm.len()];
        Ok(Partition {
            clique,
            dims,
            detail: PartitionDetail::OneDim { perm, bounds },
        })
    }

    pub fn new_multi_dim(clique: Clique, dims: Vec<usize>, boxes: Vec<AxisBox>) -> Result<Self> {
        for b in &boxes {
            if b.len() != dims.len() {
                return Err(Error::InvalidParam("box rank does not match clique".into()));
            }
            for (k, &(lo, hi)) in b.iter().enumerate() {
                if lo >= hi || hi > dims[k] {
                    return Err(Error::InvalidParam(format!(
                        "box range [{lo},{hi}) invalid for dimension of size {}",
                        dims[k]
                    )));
                }
            }
        }
        Ok(Partition {
            clique,
            dims,
            detail: PartitionDetail::MultiDim { boxes },
        })
    }

    /// All-singleton partition over `cells` cells; the no-partition baseline.
    pub fn identity(clique: Clique, cells: usize) -> Self {
        Partition {
            clique,
            dims: vec![cells],
            detail: PartitionDetail::OneDim {
                perm: (0..cells).collect(),
                bounds: (0..=cells).collect(),
            },
        }
    }

    /// Number of intervals |P|.
    pub fn size(&self) -> usize {
        match &self.detail {
            PartitionDetail::OneDim { bounds, .. } => bounds.len() - 1,
            PartitionDetail::MultiDim { boxes } => boxes.len(),
        }
    }

    /// Number of cells covered (assuming a valid tiling).
    pub fn num_cells(&self) -> usize {
        match &self.detail {
            PartitionDetail::OneDim { perm, .. } => perm.len(),
            PartitionDetail::MultiDim { boxes } => boxes
                .iter()
                .map(|b| b.iter().map(|&(lo, hi)| hi - lo).product::<usize>())
                .sum(),
        }
    }

    /// Original cell indices of interval `i`.
    pub fn interval_cells(&self, i: usize) -> Vec<usize> {
        match &self.detail {
            PartitionDetail::OneDim { perm, bounds } => {
                perm[bounds[i]..bounds[i + 1]].to_vec()
            }
            PartitionDetail::MultiDim { boxes } => {
                let strides = row_major_strides(&self.dims);
                let mut cells = Vec::new();
                for_each_box_cell(&boxes[i], &strides, |c| cells.push(c));
                cells
            }
        }
    }

    /// Checks that the intervals tile exactly the cells of a length-`n`
    /// marginal.
    pub fn check_coverage(&self, n: usize) -> Result<()> {
        let mut seen = vec![false; n];
        let mut visited = 0usize;
        for i in 0..self.size() {
            for c in self.interval_cells(i) {
                if c >= n || seen[c] {
                    return Err(Error::InvalidParam(format!(
                        "partition does not tile the marginal: cell {c}"
                    )));
                }
                seen[c] = true;
                visited += 1;
            }
        }
        if visited != n {
            return Err(Error::InvalidParam(format!(
                "partition covers {visited} of {n} cells"
            )));
        }
        Ok(())
    }
}

/// A partition with its required budget and reconstruction error.
#[derive(Debug, Clone)]
pub struct PartitionResult {
    pub partition: Partition,
    pub rho: f64,
    pub re: f64,
}

impl PartitionResult {
    fn new(partition: Partition, rho: f64, re: f64, eta_contr: f64) -> Self {
        // error-cap contract: RE + |P|/sqrt(pi rho) <= eta * Contr
        let ne = partition.size() as f64 / (std::f64::consts::PI * rho).sqrt();
        assert!(
            re + ne <= eta_contr + 1e-9,
            "partition contract violated: re {re} + ne {ne} > {eta_contr}"
        );
        PartitionResult { partition, rho, re }
    }
}

fn row_major_strides(dims: &[usize]) -> Vec<usize> {
    let mut strides = vec![1usize; dims.len()];
    for i in (0..dims.len().saturating_sub(1)).rev() {
        strides[i] = strides[i + 1] * dims[i + 1];
    }
    strides
}

fn for_each_box_cell(b: &AxisBox, strides: &[usize], mut f: impl FnMut(usize)) {
    let rank = b.len();
    let mut coords: Vec<usize> = b.iter().map(|&(lo, _)| lo).collect();
    loop {
        let idx: usize = coords.iter().zip(strides).map(|(&c, &s)| c * s).sum();
        f(idx);
        let mut k = rank;
        loop {
            if k == 0 {
                return;
            }
            k -= 1;
            coords[k] += 1;
            if coords[k] < b[k].1 {
                break;
            }
            coords[k] = b[k].0;
        }
    }
}

/// L1 deviation of a cell-value slice from its own mean.
fn l1_about_mean(values: &[f64]) -> f64 {
    if values.len() <= 1 {
        return 0.0;
    }
    let mean = values.iter().sum::<f64>() / values.len() as f64;
    values.iter().map(|v| (v - mean).abs()).sum()
}

/// Reconstruction error of `m` under `p`: sum over intervals of the L1 gap
/// between cell counts and the interval mean.
pub fn reconstruction_error(m: &Marginal, p: &Partition) -> Result<f64> {
    p.check_coverage(m.counts.len())?;
    let mut re = 0.0;
    for i in 0..p.size() {
        let cells = p.interval_cells(i);
        let vals: Vec<f64> = cells.iter().map(|&c| m.counts[c]).collect();
        re += l1_about_mean(&vals);
    }
    Ok(re)
}

/// True per-interval sums of `m` under `p`.
pub fn interval_sums(m: &Marginal, p: &Partition) -> Result<Vec<f64>> {
    p.check_coverage(m.counts.len())?;
    Ok((0..p.size())
        .map(|i| p.interval_cells(i).iter().map(|&c| m.counts[c]).sum())
        .collect())
}

/// Uniform expansion of per-interval sums back to per-cell values in original
/// cell order. Negative sums pass through unclamped.
pub fn expand_uniform(noisy_interval_sums: &[f64], p: &Partition) -> Result<Marginal> {
    if noisy_interval_sums.len() != p.size() {
        return Err(Error::InvalidParam(format!(
            "{} interval values for a partition of size {}",
            noisy_interval_sums.len(),
            p.size()
        )));
    }
    let n = p.num_cells();
    let mut counts = vec![0.0f64; n];
    for (i, &sum) in noisy_interval_sums.iter().enumerate() {
        let cells = p.interval_cells(i);
        let per_cell = sum / cells.len() as f64;
        for c in cells {
            counts[c] = per_cell;
        }
    }
    Ok(Marginal {
        clique: p.clique.clone(),
        counts,
    })
}

/// Per-cell interval sizes |I(i)| under `p`, in original cell order.
pub fn interval_sizes_per_cell(p: &Partition) -> Vec<f64> {
    let n = p.num_cells();
    let mut sizes = vec![0.0f64; n];
    for i in 0..p.size() {
        let cells = p.interval_cells(i);
        let len = cells.len() as f64;
        for c in cells {
            sizes[c] = len;
        }
    }
    sizes
}

/// Required budget |P|^2 / (pi (eta contr - re)^2); +inf when the cap is
/// already consumed by reconstruction error.
pub fn required_rho(p_size: usize, contr: f64, eta: f64, re: f64) -> f64 {
    let allowance = eta * contr - re;
    if allowance <= 0.0 {
        return f64::INFINITY;
    }
    let p = p_size as f64;
    p * p / (std::f64::consts::PI * allowance * allowance)
}

/// Increase in reconstruction error if adjacent intervals `u` and `u+1` (in
/// perm order) were merged. Plain per-cell arithmetic; the trajectory builder
/// has its own prefix-sum path, so this doubles as its oracle.
pub fn merge_error(m: &Marginal, p: &Partition, u: usize) -> Result<f64> {
    let (perm, bounds) = match &p.detail {
        PartitionDetail::OneDim { perm, bounds } => (perm, bounds),
        PartitionDetail::MultiDim { .. } => {
            return Err(Error::InvalidParam(
                "merge_error applies to one-dimensional partitions".into(),
            ))
        }
    };
    if u + 2 >= bounds.len() {
        return Err(Error::InvalidParam(format!(
            "no adjacent pair at index {u} in a partition of size {}",
            bounds.len() - 1
        )));
    }
    let gather = |l: usize, r: usize| -> Vec<f64> {
        perm[l..r].iter().map(|&c| m.counts[c]).collect()
    };
    let left = gather(bounds[u], bounds[u + 1]);
    let right = gather(bounds[u + 1], bounds[u + 2]);
    let merged = gather(bounds[u], bounds[u + 2]);
    Ok(l1_about_mean(&merged) - l1_about_mean(&left) - l1_about_mean(&right))
}

/// One greedy merge: the pair position taken, the sorted-order boundary it
/// removed, and the total RE afterwards.
#[derive(Debug, Clone)]
pub struct MergeStep {
    pub pair: usize,
    pub removed_bound: usize,
    pub re_after: f64,
}

/// Full 1-D merge trajectory of a marginal, from all-singletons down to one
/// interval. Independent of `contr` and `eta`.
#[derive(Debug, Clone)]
pub struct MergeTrajectory {
    clique: Clique,
    perm: Vec<usize>,
    sorted: Vec<f64>,
    prefix: Vec<f64>,
    pub merges: Vec<MergeStep>,
}

impl MergeTrajectory {
    fn d_range(&self, l: usize, r: usize) -> f64 {
        let cnt = r - l;
        if cnt <= 1 {
            return 0.0;
        }
        let sum = self.prefix[r] - self.prefix[l];
        let mean = sum / cnt as f64;
        let k = self.sorted[l..r].partition_point(|&v| v <= mean) + l;
        (mean * (k - l) as f64 - (self.prefix[k] - self.prefix[l]))
            + ((self.prefix[r] - self.prefix[k]) - mean * (r - k) as f64)
    }

    pub fn num_cells(&self) -> usize {
        self.perm.len()
    }

    /// RE after `t` merges (t = 0 is the all-singleton state).
    pub fn re_at(&self, t: usize) -> f64 {
        if t == 0 {
            0.0
        } else {
            self.merges[t - 1].re_after
        }
    }

    /// Partition after `t` merges.
    pub fn partition_at(&self, t: usize) -> Partition {
        let n = self.perm.len();
        let mut removed = vec![false; n + 1];
        for step in &self.merges[..t] {
            removed[step.removed_bound] = true;
        }
        let bounds: Vec<usize> = (0..=n).filter(|&b| !removed[b]).collect();
        Partition::new_one_dim(self.clique.clone(), self.perm.clone(), bounds)
            .expect("trajectory bounds are well-formed")
    }
}

/// Precomputes the greedy merge sequence for a one-dimensional marginal:
/// cells sorted ascending by count, then repeated merging of the adjacent
/// pair with minimum merge error (ties to the lowest index).
pub fn precompute_merge_sequence(m: &Marginal) -> MergeTrajectory {
    let n = m.counts.len();
    let mut perm: Vec<usize> = (0..n).collect();
    perm.sort_by(|&a, &b| {
        m.counts[a]
            .partial_cmp(&m.counts[b])
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.cmp(&b))
    });
    let sorted: Vec<f64> = perm.iter().map(|&c| m.counts[c]).collect();
    let mut prefix = vec![0.0f64; n + 1];
    for i in 0..n {
        prefix[i + 1] = prefix[i] + sorted[i];
    }
    let mut traj = MergeTrajectory {
        clique: m.clique.clone(),
        perm,
        sorted,
        prefix,
        merges: Vec::with_capacity(n.saturating_sub(1)),
    };

    let mut bounds: Vec<usize> = (0..=n).collect();
    while bounds.len() > 2 {
        let mut best = 0usize;
        let mut best_delta = f64::INFINITY;
        for u in 0..bounds.len() - 2 {
            let delta = traj.d_range(bounds[u], bounds[u + 2])
                - traj.d_range(bounds[u], bounds[u + 1])
                - traj.d_range(bounds[u + 1], bounds[u + 2]);
            if delta < best_delta {
                best_delta = delta;
                best = u;
            }
        }
        let removed_bound = bounds[best + 1];
        bounds.remove(best + 1);
        let re_after: f64 = bounds
            .windows(2)
            .map(|w| traj.d_range(w[0], w[1]))
            .sum();
        traj.merges.push(MergeStep {
            pair: best,
            removed_bound,
            re_after,
        });
    }
    traj
}

/// Walks a trajectory's (|P|, RE) states and applies the stopping rule:
/// return the last state whose required budget was finite once the budget
/// first increases. With `infinite_stops`, the +inf sentinel itself counts as
/// an increase (the 1-D rule); otherwise sentinel states are skipped and only
/// finite budgets are compared (the multi-dim rule).
fn scan_states(
    states: impl Iterator<Item = (usize, f64)>,
    contr: f64,
    eta: f64,
    infinite_stops: bool,
) -> Option<(usize, f64, f64)> {
    let mut last: Option<(usize, f64, f64)> = None;
    for (idx, (p_size, re)) in states.enumerate() {
        let rho = required_rho(p_size, contr, eta, re);
        if let Some((_, rho_prev, _)) = last {
            if rho > rho_prev && (infinite_stops || rho.is_finite()) {
                return last;
            }
        }
        if rho.is_finite() {
            last = Some((idx, rho, re));
        }
    }
    last
}

fn check_partition_args(contr: f64, eta: f64) -> Result<()> {
    if !(contr > 0.0) {
        return Err(Error::InvalidParam(format!(
            "contribution must be positive, got {contr}"
        )));
    }
    if !(eta > 0.0 && eta < 1.0) {
        return Err(Error::InvalidParam(format!(
            "eta must be in (0,1), got {eta}"
        )));
    }
    Ok(())
}

/// One-dimensional partition search over a precomputed trajectory.
pub fn partition_1d_from(
    traj: &MergeTrajectory,
    contr: f64,
    eta: f64,
) -> Result<PartitionResult> {
    check_partition_args(contr, eta)?;
    let n = traj.num_cells();
    let states = (0..n).map(|t| (n - t, traj.re_at(t)));
    let (t, rho, re) =
        scan_states(states, contr, eta, true).expect("state 0 has RE 0, so a finite budget");
    Ok(PartitionResult::new(
        traj.partition_at(t),
        rho,
        re,
        eta * contr,
    ))
}

/// Greedy one-dimensional partition minimizing the required budget subject to
/// RE + NE <= eta * Contr.
pub fn partition_1d(m: &Marginal, contr: f64, eta: f64) -> Result<PartitionResult> {
    check_partition_args(contr, eta)?;
    if m.counts.is_empty() {
        return Err(Error::InvalidParam("marginal has no cells".into()));
    }
    let traj = precompute_merge_sequence(m);
    partition_1d_from(&traj, contr, eta)
}

/// One greedy split: which box was cut, along which dimension, at which
/// absolute coordinate, and the total RE afterwards.
#[derive(Debug, Clone)]
pub struct SplitStep {
    pub box_idx: usize,
    pub dim: usize,
    pub cut: usize,
    pub re_after: f64,
}

/// Full multi-dim split trajectory, from the whole domain as one box down to
/// singleton cells. Independent of `contr` and `eta`.
#[derive(Debug, Clone)]
pub struct SplitTrajectory {
    clique: Clique,
    dims: Vec<usize>,
    pub initial_re: f64,
    pub steps: Vec<SplitStep>,
}

impl SplitTrajectory {
    pub fn re_at(&self, t: usize) -> f64 {
        if t == 0 {
            self.initial_re
        } else {
            self.steps[t - 1].re_after
        }
    }

    pub fn partition_at(&self, t: usize) -> Partition {
        let whole: AxisBox = self.dims.iter().map(|&d| (0usize, d)).collect();
        let mut boxes = vec![whole];
        for step in &self.steps[..t] {
            let b = boxes[step.box_idx].clone();
            let (mut left, mut right) = (b.clone(), b);
            left[step.dim].1 = step.cut;
            right[step.dim].0 = step.cut;
            boxes[step.box_idx] = left;
            boxes.push(right);
        }
        Partition::new_multi_dim(self.clique.clone(), self.dims.clone(), boxes)
            .expect("trajectory boxes are well-formed")
    }
}

fn box_l1_about_mean(counts: &[f64], b: &AxisBox, strides: &[usize]) -> f64 {
    let mut sum = 0.0;
    let mut cnt = 0usize;
    for_each_box_cell(b, strides, |c| {
        sum += counts[c];
        cnt += 1;
    });
    if cnt <= 1 {
        return 0.0;
    }
    let mean = sum / cnt as f64;
    let mut d = 0.0;
    for_each_box_cell(b, strides, |c| d += (counts[c] - mean).abs());
    d
}

/// Precomputes the greedy split sequence for a multi-dimensional marginal:
/// round-robin over dimensions, always cutting the largest-RE box that is
/// splittable in the current dimension, at the cut maximizing RE reduction.
pub fn precompute_split_sequence(m: &Marginal, dims: &[usize]) -> SplitTrajectory {
    let strides = row_major_strides(dims);
    let d = dims.len();
    let whole: AxisBox = dims.iter().map(|&c| (0usize, c)).collect();
    let initial_re = box_l1_about_mean(&m.counts, &whole, &strides);

    let mut boxes = vec![whole];
    let mut box_re = vec![initial_re];
    let mut steps = Vec::new();
    let mut t = 0usize;
    loop {
        // round-robin dimension, advancing past dimensions with no splittable box
        let mut chosen: Option<(usize, usize)> = None;
        for offset in 0..d {
            let dim = (t + offset) % d;
            let mut best: Option<usize> = None;
            for (idx, b) in boxes.iter().enumerate() {
                if b[dim].1 - b[dim].0 > 1 {
                    match best {
                        Some(prev) if box_re[idx] <= box_re[prev] => {}
                        _ => best = Some(idx),
                    }
                }
            }
            if let Some(idx) = best {
                chosen = Some((idx, dim));
                break;
            }
        }
        let Some((box_idx, dim)) = chosen else { break };

        let b = boxes[box_idx].clone();
        let (lo, hi) = b[dim];
        let mut best_cut = lo + 1;
        let mut best_reduction = f64::NEG_INFINITY;
        for cut in lo + 1..hi {
            let (mut left, mut right) = (b.clone(), b.clone());
            left[dim].1 = cut;
            right[dim].0 = cut;
            let reduction = box_re[box_idx]
                - box_l1_about_mean(&m.counts, &left, &strides)
                - box_l1_about_mean(&m.counts, &right, &strides);
            if reduction > best_reduction {
                best_reduction = reduction;
                best_cut = cut;
            }
        }
        let (mut left, mut right) = (b.clone(), b);
        left[dim].1 = best_cut;
        right[dim].0 = best_cut;
        let d_left = box_l1_about_mean(&m.counts, &left, &strides);
        let d_right = box_l1_about_mean(&m.counts, &right, &strides);
        boxes[box_idx] = left;
        box_re[box_idx] = d_left;
        boxes.push(right);
        box_re.push(d_right);
        let re_after: f64 = box_re.iter().sum();
        steps.push(SplitStep {
            box_idx,
            dim,
            cut: best_cut,
            re_after,
        });
        t += 1;
    }
    SplitTrajectory {
        clique: m.clique.clone(),
        dims: dims.to_vec(),
        initial_re,
        steps,
    }
}

/// Multi-dimensional partition search over a precomputed trajectory.
pub fn partition_md_from(
    traj: &SplitTrajectory,
    contr: f64,
    eta: f64,
) -> Result<PartitionResult> {
    check_partition_args(contr, eta)?;
    let states = (0..=traj.steps.len()).map(|t| (t + 1, traj.re_at(t)));
    let (t, rho, re) = scan_states(states, contr, eta, false).ok_or_else(|| {
        Error::InvalidParam("no state reaches a finite required budget".into())
    })?;
    Ok(PartitionResult::new(
        traj.partition_at(t),
        rho,
        re,
        eta * contr,
    ))
}

/// Greedy multi-dimensional partition minimizing the required budget subject
/// to RE + NE <= eta * Contr.
pub fn partition_md(m: &Marginal, dims: &[usize], contr: f64, eta: f64) -> Result<PartitionResult> {
    check_partition_args(contr, eta)?;
    if dims.len() < 2 {
        return Err(Error::InvalidParam(
            "multi-dim partition needs at least two dimensions".into(),
        ));
    }
    if dims.iter().product::<usize>() != m.counts.len() {
        return Err(Error::InvalidParam(
            "dims do not match the marginal's cell count".into(),
        ));
    }
    let traj = precompute_split_sequence(m, dims);
    partition_md_from(&traj, contr, eta)
}
