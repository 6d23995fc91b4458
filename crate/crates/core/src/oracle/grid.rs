use crate::error::{Error, Result};
use crate::oracle::values::PolicyTable;

/// All points of the probability simplex over `k` outcomes whose entries are
/// multiples of `1 / resolution`.
pub fn simplex_grid(k: usize, resolution: usize) -> Vec<Vec<f64>> {
    fn rec(k: usize, left: usize, r: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<f64>>) {
        if cur.len() + 1 == k {
            cur.push(left);
            out.push(cur.iter().map(|c| *c as f64 / r as f64).collect());
            cur.pop();
            return;
        }
        for c in 0..=left {
            cur.push(c);
            rec(k, left - c, r, cur, out);
            cur.pop();
        }
    }
    let mut out = Vec::new();
    if k == 0 || resolution == 0 {
        return out;
    }
    rec(k, resolution, resolution, &mut Vec::new(), &mut out);
    out
}

/// Every product policy whose per-state conditionals lie on a simplex grid.
#[derive(Debug, Clone)]
pub struct PolicyGrid {
    num_states: usize,
    radices: Vec<usize>,
    choices: Vec<Vec<Vec<f64>>>,
    len: u128,
}

impl PolicyGrid {
    pub fn new(num_states: usize, radices: &[usize], resolution: usize) -> Result<Self> {
        if resolution == 0 {
            return Err(Error::config("policy grid resolution must be positive"));
        }
        let choices: Vec<Vec<Vec<f64>>> = radices.iter().map(|&k| simplex_grid(k, resolution)).collect();
        let mut len: u128 = 1;
        for c in &choices {
            for _ in 0..num_states {
                len = len.saturating_mul(c.len() as u128);
            }
        }
        Ok(Self {
            num_states,
            radices: radices.to_vec(),
            choices,
            len,
        })
    }

    pub fn len(&self) -> u128 {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    /// The `index`-th grid policy (agent-major, then state).
    pub fn policy(&self, mut index: u128) -> PolicyTable {
        let mut rows = Vec::with_capacity(self.radices.len());
        for c in &self.choices {
            let mut row = Vec::new();
            for _ in 0..self.num_states {
                let m = c.len() as u128;
                row.extend_from_slice(&c[(index % m) as usize]);
                index /= m;
            }
            rows.push(row);
        }
        PolicyTable::new(self.num_states, self.radices.clone(), rows).expect("grid rows are distributions")
    }

    pub fn iter(&self) -> impl Iterator<Item = PolicyTable> + '_ {
        (0..self.len).map(|i| self.policy(i))
    }
}
