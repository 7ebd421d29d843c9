//! Attribute schema, integer-encoded datasets, marginals, and workloads.
//!
//! Cell indexing is row-major over a clique's ascending attribute order: the
//! first (lowest-index) attribute is the most significant digit. That ordering
//! is part of the wire contract for measurements and partitions.

use std::collections::HashMap;
use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::substream;

/// One attribute: a name, its ordered value labels, and an ordinal flag.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Attribute {
    pub name: String,
    pub values: Vec<String>,
    #[serde(default)]
    pub ordinal: bool,
}

impl Attribute {
    pub fn cardinality(&self) -> usize {
        self.values.len()
    }
}

/// Ordered attribute schema. Immutable after construction.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DomainSpec {
    pub attributes: Vec<Attribute>,
}

impl DomainSpec {
    pub fn new(attributes: Vec<Attribute>) -> Result<Self> {
        if attributes.is_empty() {
            return Err(Error::Schema("schema has no attributes".into()));
        }
        let mut seen = HashMap::new();
        for (i, a) in attributes.iter().enumerate() {
            if a.values.is_empty() {
                return Err(Error::Schema(format!(
                    "attribute \"{}\" has cardinality 0",
                    a.name
                )));
            }
            if let Some(prev) = seen.insert(a.name.clone(), i) {
                return Err(Error::Schema(format!(
                    "duplicate attribute name \"{}\" (positions {} and {})",
                    a.name, prev, i
                )));
            }
        }
        Ok(DomainSpec { attributes })
    }

    /// Convenience constructor for tests and generators: unnamed ordinal
    /// attributes with the given cardinalities.
    pub fn from_cardinalities(cards: &[usize]) -> Self {
        let attributes = cards
            .iter()
            .enumerate()
            .map(|(i, &c)| Attribute {
                name: format!("a{i}"),
                values: (0..c).map(|v| v.to_string()).collect(),
                ordinal: true,
            })
            .collect();
        DomainSpec { attributes }
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let spec: DomainSpec = serde_json::from_str(&text)?;
        DomainSpec::new(spec.attributes)
    }

    pub fn len(&self) -> usize {
        self.attributes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.attributes.is_empty()
    }

    pub fn cardinality(&self, attr: usize) -> usize {
        self.attributes[attr].cardinality()
    }

    pub fn attr_index(&self, name: &str) -> Option<usize> {
        self.attributes.iter().position(|a| a.name == name)
    }

    /// Product of all cardinalities; `None` on overflow.
    pub fn total_cells(&self) -> Option<usize> {
        self.attributes
            .iter()
            .try_fold(1usize, |acc, a| acc.checked_mul(a.cardinality()))
    }

    /// All cliques of `self` restricted to `attrs`, as one clique.
    pub fn full_clique(&self) -> Clique {
        Clique::new((0..self.len()).collect()).expect("non-empty domain")
    }
}

/// A subset of attribute indices, kept strictly increasing.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Clique {
    attrs: Vec<usize>,
}

impl Clique {
    pub fn new(attrs: Vec<usize>) -> Result<Self> {
        if attrs.is_empty() {
            return Err(Error::InvalidParam("clique must be non-empty".into()));
        }
        if !attrs.windows(2).all(|w| w[0] < w[1]) {
            return Err(Error::InvalidParam(
                "clique attributes must be strictly increasing".into(),
            ));
        }
        Ok(Clique { attrs })
    }

    /// Builds from arbitrary order, sorting and rejecting duplicates.
    pub fn from_unsorted(mut attrs: Vec<usize>) -> Result<Self> {
        attrs.sort_unstable();
        if attrs.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::InvalidParam("clique has duplicate attributes".into()));
        }
        Clique::new(attrs)
    }

    pub fn attrs(&self) -> &[usize] {
        &self.attrs
    }

    pub fn len(&self) -> usize {
        self.attrs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.attrs.is_empty()
    }

    pub fn validate(&self, domain: &DomainSpec) -> Result<()> {
        match self.attrs.iter().max() {
            Some(&m) if m >= domain.len() => Err(Error::InvalidParam(format!(
                "clique attribute index {m} out of range for {}-attribute domain",
                domain.len()
            ))),
            _ => Ok(()),
        }
    }

    /// Per-attribute cardinalities of the clique under `domain`.
    pub fn dims(&self, domain: &DomainSpec) -> Vec<usize> {
        self.attrs.iter().map(|&a| domain.cardinality(a)).collect()
    }

    /// Number of cells in this clique's marginal.
    pub fn cell_count(&self, domain: &DomainSpec) -> usize {
        self.attrs
            .iter()
            .map(|&a| domain.cardinality(a))
            .product()
    }

    /// Human-readable attribute names for reports.
    pub fn names(&self, domain: &DomainSpec) -> Vec<String> {
        self.attrs
            .iter()
            .map(|&a| domain.attributes[a].name.clone())
            .collect()
    }
}

/// Integer-encoded records over a domain. Rows are stored flat, `d` values
/// per record.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub domain: DomainSpec,
    values: Vec<u32>,
    n: usize,
}

impl Dataset {
    pub fn new(domain: DomainSpec, rows: Vec<Vec<u32>>) -> Result<Self> {
        let d = domain.len();
        let mut values = Vec::with_capacity(rows.len() * d);
        for (i, row) in rows.iter().enumerate() {
            if row.len() != d {
                return Err(Error::Data(format!(
                    "row {i} has {} entries, expected {d}",
                    row.len()
                )));
            }
            for (j, &v) in row.iter().enumerate() {
                if v as usize >= domain.cardinality(j) {
                    return Err(Error::Data(format!(
                        "row {i}, attribute {j}: value index {v} exceeds cardinality {}",
                        domain.cardinality(j)
                    )));
                }
            }
            values.extend_from_slice(row);
        }
        let n = rows.len();
        Ok(Dataset { domain, values, n })
    }

    pub(crate) fn from_flat(domain: DomainSpec, values: Vec<u32>, n: usize) -> Self {
        debug_assert_eq!(values.len(), n * domain.len());
        Dataset { domain, values, n }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn row(&self, i: usize) -> &[u32] {
        let d = self.domain.len();
        &self.values[i * d..(i + 1) * d]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[u32]> {
        self.values.chunks_exact(self.domain.len())
    }
}

/// A count table over a clique. Counts are reals so the same type carries
/// exact, noisy, and model marginals.
#[derive(Debug, Clone)]
pub struct Marginal {
    pub clique: Clique,
    pub counts: Vec<f64>,
}

impl Marginal {
    pub fn total(&self) -> f64 {
        self.counts.iter().sum()
    }
}

/// Row-major cell indexing for a clique over a domain.
#[derive(Debug, Clone)]
pub struct CellIndexer {
    attrs: Vec<usize>,
    dims: Vec<usize>,
    strides: Vec<usize>,
    cells: usize,
}

impl CellIndexer {
    pub fn new(domain: &DomainSpec, clique: &Clique) -> Self {
        let attrs = clique.attrs().to_vec();
        let dims: Vec<usize> = attrs.iter().map(|&a| domain.cardinality(a)).collect();
        let mut strides = vec![1usize; dims.len()];
        for i in (0..dims.len().saturating_sub(1)).rev() {
            strides[i] = strides[i + 1] * dims[i + 1];
        }
        let cells = dims.iter().product();
        CellIndexer {
            attrs,
            dims,
            strides,
            cells,
        }
    }

    pub fn cells(&self) -> usize {
        self.cells
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    /// Cell index of a full record.
    pub fn index_of_row(&self, row: &[u32]) -> usize {
        self.attrs
            .iter()
            .zip(&self.strides)
            .map(|(&a, &s)| row[a] as usize * s)
            .sum()
    }

    /// Cell index from clique-local coordinates.
    pub fn index_of_coords(&self, coords: &[usize]) -> usize {
        coords
            .iter()
            .zip(&self.strides)
            .map(|(&c, &s)| c * s)
            .sum()
    }

    /// Clique-local coordinates of a cell index.
    pub fn coords_of_index(&self, mut idx: usize) -> Vec<usize> {
        let mut coords = vec![0usize; self.dims.len()];
        for i in (0..self.dims.len()).rev() {
            coords[i] = idx % self.dims[i];
            idx /= self.dims[i];
        }
        coords
    }

    /// Maps every cell of `domain` (row-major order) to its cell in this
    /// clique's marginal.
    pub fn projection_table(&self, domain: &DomainSpec) -> Vec<u32> {
        let d = domain.len();
        let cells = domain.total_cells().expect("domain fits in usize");
        let mut coords = vec![0usize; d];
        let mut table = Vec::with_capacity(cells);
        loop {
            let idx: usize = self
                .attrs
                .iter()
                .zip(&self.strides)
                .map(|(&a, &s)| coords[a] * s)
                .sum();
            table.push(idx as u32);
            let mut k = d;
            loop {
                if k == 0 {
                    return table;
                }
                k -= 1;
                coords[k] += 1;
                if coords[k] < domain.cardinality(k) {
                    break;
                }
                coords[k] = 0;
            }
        }
    }
}

/// Exact marginal of `data` on `clique`: counts[t] = #rows projecting to t.
pub fn compute_marginal(data: &Dataset, clique: &Clique) -> Result<Marginal> {
    clique.validate(&data.domain)?;
    let indexer = CellIndexer::new(&data.domain, clique);
    let mut counts = vec![0.0f64; indexer.cells()];
    for row in data.rows() {
        counts[indexer.index_of_row(row)] += 1.0;
    }
    Ok(Marginal {
        clique: clique.clone(),
        counts,
    })
}

/// L1 distance between two marginals on the same clique.
pub fn marginal_l1(a: &Marginal, b: &Marginal) -> Result<f64> {
    if a.clique != b.clique || a.counts.len() != b.counts.len() {
        return Err(Error::CliqueMismatch(format!(
            "{:?} vs {:?}",
            a.clique.attrs(),
            b.clique.attrs()
        )));
    }
    Ok(a.counts
        .iter()
        .zip(&b.counts)
        .map(|(x, y)| (x - y).abs())
        .sum())
}

/// One workload entry: a clique and a weight (weights default to 1 and are
/// only consumed by the range-query generator).
#[derive(Debug, Clone)]
pub struct WorkloadEntry {
    pub clique: Clique,
    pub weight: f64,
}

#[derive(Debug, Clone)]
pub struct Workload {
    pub entries: Vec<WorkloadEntry>,
}

impl Workload {
    pub fn new(entries: Vec<WorkloadEntry>) -> Result<Self> {
        let mut seen = std::collections::HashSet::new();
        for e in &entries {
            if e.weight <= 0.0 {
                return Err(Error::InvalidParam("workload weight must be > 0".into()));
            }
            if !seen.insert(e.clique.clone()) {
                return Err(Error::InvalidParam(format!(
                    "duplicate workload clique {:?}",
                    e.clique.attrs()
                )));
            }
        }
        Ok(Workload { entries })
    }

    pub fn from_cliques(cliques: Vec<Clique>) -> Result<Self> {
        Workload::new(
            cliques
                .into_iter()
                .map(|clique| WorkloadEntry {
                    clique,
                    weight: 1.0,
                })
                .collect(),
        )
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

#[derive(Debug, Deserialize)]
struct WorkloadFile {
    cliques: Vec<Vec<String>>,
}

/// Reads `{"cliques":[["age","sex"],...]}`, resolving names against the schema.
pub fn load_workload(path: &Path, domain: &DomainSpec) -> Result<Workload> {
    let text = std::fs::read_to_string(path)?;
    let file: WorkloadFile = serde_json::from_str(&text)?;
    let mut cliques = Vec::with_capacity(file.cliques.len());
    for names in &file.cliques {
        let mut attrs = Vec::with_capacity(names.len());
        for name in names {
            let idx = domain
                .attr_index(name)
                .ok_or_else(|| Error::Schema(format!("workload names unknown attribute \"{name}\"")))?;
            attrs.push(idx);
        }
        cliques.push(Clique::from_unsorted(attrs)?);
    }
    Workload::from_cliques(cliques)
}

/// Loads a CSV with a mandatory header against a schema. Values map to their
/// 0-based position in the schema's per-attribute dictionary; row order is
/// preserved.
pub fn load_dataset(csv_path: &Path, schema_path: &Path) -> Result<Dataset> {
    let domain = DomainSpec::load(schema_path)?;
    load_dataset_with_domain(csv_path, domain)
}

pub fn load_dataset_with_domain(csv_path: &Path, domain: DomainSpec) -> Result<Dataset> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(false)
        .from_path(csv_path)?;

    let headers = reader.headers()?.clone();
    let d = domain.len();
    // column position of each schema attribute
    let mut col_of_attr = vec![usize::MAX; d];
    for (col, name) in headers.iter().enumerate() {
        match domain.attr_index(name) {
            Some(a) => col_of_attr[a] = col,
            None => {
                return Err(Error::Schema(format!(
                    "csv column \"{name}\" is not in the schema"
                )))
            }
        }
    }
    for (a, &col) in col_of_attr.iter().enumerate() {
        if col == usize::MAX {
            return Err(Error::Schema(format!(
                "schema attribute \"{}\" is missing from the csv header",
                domain.attributes[a].name
            )));
        }
    }

    let dicts: Vec<HashMap<&str, u32>> = domain
        .attributes
        .iter()
        .map(|a| {
            a.values
                .iter()
                .enumerate()
                .map(|(i, v)| (v.as_str(), i as u32))
                .collect()
        })
        .collect();

    let mut values: Vec<u32> = Vec::new();
    let mut n = 0usize;
    for (row_idx, record) in reader.records().enumerate() {
        let record = record.map_err(|e| {
            Error::Data(format!("row {}: {e}", row_idx + 1))
        })?;
        if record.len() != d {
            return Err(Error::Data(format!(
                "row {}: has {} fields, expected {d}",
                row_idx + 1,
                record.len()
            )));
        }
        for (a, &col) in col_of_attr.iter().enumerate() {
            let raw = record.get(col).unwrap_or("");
            match dicts[a].get(raw) {
                Some(&v) => values.push(v),
                None => {
                    return Err(Error::UnknownValue {
                        row: row_idx + 1,
                        column: domain.attributes[a].name.clone(),
                        value: raw.to_string(),
                    })
                }
            }
        }
        n += 1;
    }
    Ok(Dataset::from_flat(domain, values, n))
}

/// Writes a dataset back to CSV with the schema's attribute order as header
/// and dictionary labels as values.
pub fn write_dataset_csv(data: &Dataset, path: &Path) -> Result<()> {
    let mut writer = csv::Writer::from_path(path)?;
    let names: Vec<&str> = data
        .domain
        .attributes
        .iter()
        .map(|a| a.name.as_str())
        .collect();
    writer.write_record(&names)?;
    for row in data.rows() {
        let rec: Vec<&str> = row
            .iter()
            .enumerate()
            .map(|(a, &v)| data.domain.attributes[a].values[v as usize].as_str())
            .collect();
        writer.write_record(&rec)?;
    }
    writer.flush()?;
    Ok(())
}

/// Samples up to `count` distinct `dims`-way cliques uniformly at random,
/// discarding any whose cell count exceeds `max_cells`. Deterministic for a
/// fixed seed.
pub fn generate_workload(
    domain: &DomainSpec,
    dims: usize,
    count: usize,
    max_cells: usize,
    seed: u64,
) -> Result<Workload> {
    if dims == 0 || dims > domain.len() {
        return Err(Error::InvalidParam(format!(
            "workload dims {dims} invalid for {}-attribute domain",
            domain.len()
        )));
    }
    fn next_combination(combo: &mut [usize], d: usize) -> bool {
        let k = combo.len();
        for i in (0..k).rev() {
            if combo[i] < d - k + i {
                combo[i] += 1;
                for j in i + 1..k {
                    combo[j] = combo[j - 1] + 1;
                }
                return true;
            }
        }
        false
    }

    let mut valid: Vec<Clique> = Vec::new();
    let mut combo: Vec<usize> = (0..dims).collect();
    loop {
        let clique = Clique::new(combo.clone()).expect("combination is sorted");
        if clique.cell_count(domain) <= max_cells {
            valid.push(clique);
        }
        if !next_combination(&mut combo, domain.len()) {
            break;
        }
    }
    if valid.is_empty() {
        return Err(Error::WorkloadInfeasible { max_cells });
    }
    let mut rng = substream(seed, 0, "workload");
    valid.shuffle(&mut rng);
    valid.truncate(count);
    valid.sort();
    Workload::from_cliques(valid)
}
