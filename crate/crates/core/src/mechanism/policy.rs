use rand::Rng;

use super::MechanismError;
use crate::rng;

/// Queue-assignment design: row `i` is the distribution of unit `i`'s queue.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyMatrix {
    k: usize,
    data: Vec<f64>,
}

const ROW_TOL: f64 = 1e-9;

impl PolicyMatrix {
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self, MechanismError> {
        let k = rows.first().map_or(0, Vec::len);
        if k == 0 {
            return Err(MechanismError::Invalid("policy needs at least one row and one queue".into()));
        }
        let mut data = Vec::with_capacity(rows.len() * k);
        for (i, r) in rows.iter().enumerate() {
            if r.len() != k {
                return Err(MechanismError::Invalid(format!("row {i} has {} entries, expected {k}", r.len())));
            }
            data.extend_from_slice(r);
        }
        Self::from_flat(k, data)
    }

    /// Row-major `n x k` data. Entries within `-1e-12` of zero are clipped.
    pub fn from_flat(k: usize, mut data: Vec<f64>) -> Result<Self, MechanismError> {
        if k == 0 || data.len() % k != 0 {
            return Err(MechanismError::Invalid("flat policy length must be a multiple of k".into()));
        }
        for (i, row) in data.chunks_mut(k).enumerate() {
            for x in row.iter_mut() {
                if !x.is_finite() || *x < -1e-12 {
                    return Err(MechanismError::Invalid(format!("row {i} has a negative or non-finite entry")));
                }
                *x = x.max(0.0);
            }
            let s: f64 = row.iter().sum();
            if (s - 1.0).abs() > ROW_TOL {
                return Err(MechanismError::Invalid(format!("row {i} sums to {s}")));
            }
        }
        Ok(PolicyMatrix { k, data })
    }

    /// Every row equal to `p` (a randomized controlled trial over queues).
    pub fn uniform(n: usize, p: &[f64]) -> Result<Self, MechanismError> {
        super::spec::validate_simplex(p)?;
        Self::from_flat(p.len(), p.iter().copied().cycle().take(n * p.len()).collect())
    }

    pub fn n(&self) -> usize {
        self.data.len() / self.k
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.k..(i + 1) * self.k]
    }

    pub fn rows(&self) -> impl ExactSizeIterator<Item = &[f64]> {
        self.data.chunks(self.k)
    }

    pub fn column_means(&self) -> Vec<f64> {
        let mut m = vec![0.0; self.k];
        for r in self.rows() {
            for (acc, x) in m.iter_mut().zip(r) {
                *acc += x;
            }
        }
        let n = self.n() as f64;
        m.iter_mut().for_each(|x| *x /= n);
        m
    }

    /// Total variation distance, averaged over rows.
    pub fn mean_tv_distance(&self, other: &PolicyMatrix) -> f64 {
        assert_eq!((self.n(), self.k), (other.n(), other.k));
        self.rows()
            .zip(other.rows())
            .map(|(a, b)| 0.5 * a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum::<f64>())
            .sum::<f64>()
            / self.n() as f64
    }

    /// Largest entrywise deviation from another policy.
    pub fn max_abs_deviation(&self, other: &PolicyMatrix) -> f64 {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    pub fn as_flat(&self) -> &[f64] {
        &self.data
    }
}

/// Draws one queue per unit from its row.
pub fn sample_queues(policy: &PolicyMatrix, seed: u64) -> Vec<usize> {
    let mut rng = rng::stream(rng::derive_seed(seed, 0x0A5E), 0);
    sample_queues_with(policy, &mut rng)
}

pub fn sample_queues_with<R: Rng + ?Sized>(policy: &PolicyMatrix, rng: &mut R) -> Vec<usize> {
    policy.rows().map(|row| draw_row(row, rng.random::<f64>())).collect()
}

fn draw_row(row: &[f64], u: f64) -> usize {
    let mut cum = 0.0;
    for (k, &w) in row.iter().enumerate() {
        cum += w;
        if w > 0.0 && u < cum {
            return k;
        }
    }
    row.iter().rposition(|&w| w > 0.0).unwrap_or(row.len() - 1)
}
