use std::borrow::Cow;
use std::io::{Read, Write};

use rand::{Rng, SeedableRng};
use serde::{Deserialize, Serialize};

use crate::cmg::SimRng;
use crate::error::{Error, Result};

/// Tables with at most this many entries are materialized in memory.
pub const DENSE_LIMIT: usize = 4_000_000;

/// How feature tables are drawn.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FeatureSpec {
    pub seed: u64,
    pub critic_dim: usize,
    pub policy_dim: usize,
    pub range: [f64; 2],
}

impl Default for FeatureSpec {
    fn default() -> Self {
        Self {
            seed: 0,
            critic_dim: 20,
            policy_dim: 10,
            range: [0.0, 1.0],
        }
    }
}

impl FeatureSpec {
    pub fn validate(&self) -> Result<()> {
        if self.critic_dim == 0 || self.policy_dim == 0 {
            return Err(Error::config("feature dimensions must be positive"));
        }
        let [lo, hi] = self.range;
        if !(lo.is_finite() && hi.is_finite() && lo <= hi) {
            return Err(Error::config(format!("invalid feature range [{lo}, {hi}]")));
        }
        Ok(())
    }

    /// Shared critic features `phi(s, a)`, one row per state / joint-action pair.
    pub fn critic_table(&self, num_pairs: usize) -> FeatureTable {
        FeatureTable::generate(self.seed, 0, num_pairs, self.critic_dim, self.range)
    }

    /// Features `f_n(s, a_n)` private to `agent`, one row per state /
    /// own-action pair (row index `s * |A_n| + a_n`).
    pub fn policy_table(&self, agent: usize, num_states: usize, num_actions: usize) -> FeatureTable {
        FeatureTable::generate(
            self.seed,
            agent as u64 + 1,
            num_states * num_actions,
            self.policy_dim,
            self.range,
        )
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Storage {
    Dense(Vec<f64>),
    /// Rows drawn on demand from a per-row counter stream.
    Procedural { key: u64, low: f64, width: f64 },
}

/// Feature matrix `[rows x dim]`.
///
/// Generated tables draw row `i` from ChaCha8 seeded with a key derived
/// from `(seed, table id)` on stream `i`, so dense and procedural storage
/// hold identical values and any row can be regenerated independently.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureTable {
    rows: usize,
    dim: usize,
    storage: Storage,
}

fn table_key(seed: u64, table: u64) -> u64 {
    seed ^ table.wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

fn fill_row(key: u64, low: f64, width: f64, row: usize, out: &mut [f64]) {
    let mut rng = SimRng::seed_from_u64(key);
    rng.set_stream(row as u64);
    for v in out {
        *v = low + width * rng.gen::<f64>();
    }
}

impl FeatureTable {
    pub fn generate(seed: u64, table: u64, rows: usize, dim: usize, range: [f64; 2]) -> Self {
        let key = table_key(seed, table);
        let (low, width) = (range[0], range[1] - range[0]);
        let storage = if rows.saturating_mul(dim) <= DENSE_LIMIT {
            let mut data = vec![0.0; rows * dim];
            for (i, chunk) in data.chunks_mut(dim.max(1)).enumerate() {
                fill_row(key, low, width, i, chunk);
            }
            Storage::Dense(data)
        } else {
            Storage::Procedural { key, low, width }
        };
        Self { rows, dim, storage }
    }

    pub fn from_dense(rows: usize, dim: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * dim {
            return Err(Error::shape("feature table", rows * dim, data.len()));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::config("feature table contains non-finite entries"));
        }
        Ok(Self {
            rows,
            dim,
            storage: Storage::Dense(data),
        })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn is_dense(&self) -> bool {
        matches!(self.storage, Storage::Dense(_))
    }

    /// Row `i`. Panics if `i >= rows`.
    pub fn row(&self, i: usize) -> Cow<'_, [f64]> {
        assert!(i < self.rows, "feature row {i} out of range ({})", self.rows);
        match &self.storage {
            Storage::Dense(data) => Cow::Borrowed(&data[i * self.dim..(i + 1) * self.dim]),
            Storage::Procedural { key, low, width } => {
                let mut out = vec![0.0; self.dim];
                fill_row(*key, *low, *width, i, &mut out);
                Cow::Owned(out)
            }
        }
    }

    /// `row(i) . w`
    pub fn dot(&self, i: usize, w: &[f64]) -> f64 {
        dot(&self.row(i), w)
    }

    /// CSV with header `pair_index,f0,...,f{dim-1}`; floats in shortest
    /// round-trip form so imports are bit-exact.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(out);
        let mut header = vec!["pair_index".to_string()];
        header.extend((0..self.dim).map(|j| format!("f{j}")));
        wtr.write_record(&header)?;
        for i in 0..self.rows {
            let row = self.row(i);
            let mut rec = vec![i.to_string()];
            rec.extend(row.iter().map(|v| format!("{v:?}")));
            wtr.write_record(&rec)?;
        }
        wtr.flush().map_err(|e| Error::io("<feature csv>", e))?;
        Ok(())
    }

    pub fn read_csv<R: Read>(input: R) -> Result<Self> {
        let mut rdr = csv::Reader::from_reader(input);
        let header = rdr.headers()?.clone();
        if header.get(0) != Some("pair_index") {
            return Err(Error::config("feature CSV must start with a 'pair_index' column"));
        }
        let dim = header.len() - 1;
        let mut data = Vec::new();
        let mut rows = 0;
        for rec in rdr.records() {
            let rec = rec?;
            let idx: usize = rec[0]
                .parse()
                .map_err(|_| Error::config(format!("bad pair_index '{}'", &rec[0])))?;
            if idx != rows {
                return Err(Error::config(format!("expected pair_index {rows}, found {idx}")));
            }
            for field in rec.iter().skip(1) {
                data.push(
                    field
                        .parse::<f64>()
                        .map_err(|_| Error::config(format!("bad feature value '{field}'")))?,
                );
            }
            rows += 1;
        }
        Self::from_dense(rows, dim, data)
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}
