use crate::error::{Error, Result};

/// Sum drift beyond which construction fails instead of renormalizing.
pub const PMF_DRIFT_LIMIT: f64 = 1e-9;
/// Sum tolerance guaranteed after construction.
pub const PMF_SUM_TOL: f64 = 1e-12;
/// Negative entries above this magnitude are round-off and clamp to zero;
/// anything more negative is an error.
pub const PMF_NEG_CLAMP: f64 = -1e-15;

/// A probability mass function over an indexed finite set.
///
/// This is the universal currency of the solver: state marginals, action
/// distributions, service-duration distributions and label conditionals are
/// all `Pmf`s. Entries are non-negative and sum to one within `PMF_SUM_TOL`;
/// construction renormalizes drift up to `PMF_DRIFT_LIMIT` and rejects
/// anything worse.
#[derive(Debug, Clone, PartialEq)]
pub struct Pmf {
    weights: Vec<f64>,
}

impl Pmf {
    pub fn new(mut weights: Vec<f64>) -> Result<Self> {
        if weights.is_empty() {
            return Err(Error::InvalidPmf("empty support".into()));
        }
        let mut sum = 0.0;
        for w in weights.iter_mut() {
            if !w.is_finite() {
                return Err(Error::InvalidPmf(format!("non-finite entry {w}")));
            }
            if *w < 0.0 {
                if *w < PMF_NEG_CLAMP {
                    return Err(Error::InvalidPmf(format!("negative entry {w}")));
                }
                *w = 0.0;
            }
            sum += *w;
        }
        if (sum - 1.0).abs() > PMF_DRIFT_LIMIT {
            return Err(Error::InvalidPmf(format!(
                "entries sum to {sum}, beyond drift limit"
            )));
        }
        if sum != 1.0 {
            for w in weights.iter_mut() {
                *w /= sum;
            }
        }
        Ok(Pmf { weights })
    }

    /// Point mass at `index` over a support of size `len`.
    pub fn point(len: usize, index: usize) -> Self {
        assert!(index < len);
        let mut weights = vec![0.0; len];
        weights[index] = 1.0;
        Pmf { weights }
    }

    pub fn uniform(len: usize) -> Self {
        assert!(len > 0);
        Pmf {
            weights: vec![1.0 / len as f64; len],
        }
    }

    /// Normalizes arbitrary non-negative weights (sum need not be near one).
    pub fn normalized(weights: Vec<f64>) -> Result<Self> {
        let sum: f64 = weights.iter().sum();
        if !sum.is_finite() || sum <= 0.0 {
            return Err(Error::InvalidPmf(format!("weights sum to {sum}")));
        }
        Pmf::new(weights.iter().map(|w| w / sum).collect())
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.weights.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    #[inline]
    pub fn get(&self, i: usize) -> f64 {
        self.weights[i]
    }

    #[inline]
    pub fn as_slice(&self) -> &[f64] {
        &self.weights
    }

    pub fn iter(&self) -> std::slice::Iter<'_, f64> {
        self.weights.iter()
    }

    /// True when every entry is strictly positive (relative interior of the simplex).
    pub fn is_interior(&self) -> bool {
        self.weights.iter().all(|&w| w > 0.0)
    }

    /// Index of the largest entry, ties broken toward the lowest index.
    pub fn mode(&self) -> usize {
        let mut best = 0;
        for (i, &w) in self.weights.iter().enumerate().skip(1) {
            if w > self.weights[best] {
                best = i;
            }
        }
        best
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.weights
    }
}

impl std::ops::Index<usize> for Pmf {
    type Output = f64;
    fn index(&self, i: usize) -> &f64 {
        &self.weights[i]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn renormalizes_small_drift() {
        let p = Pmf::new(vec![0.5, 0.5 + 3e-10]).unwrap();
        assert!((p.as_slice().iter().sum::<f64>() - 1.0).abs() < PMF_SUM_TOL);
    }

    #[test]
    fn rejects_large_drift() {
        assert!(Pmf::new(vec![0.5, 0.6]).is_err());
    }

    #[test]
    fn clamps_roundoff_negatives() {
        let p = Pmf::new(vec![1.0, -5e-16]).unwrap();
        assert_eq!(p.get(1), 0.0);
        assert!(Pmf::new(vec![1.0, -1e-12]).is_err());
    }

    #[test]
    fn mode_ties_break_low() {
        assert_eq!(Pmf::new(vec![0.5, 0.5]).unwrap().mode(), 0);
        assert_eq!(Pmf::new(vec![0.2, 0.5, 0.3]).unwrap().mode(), 1);
    }
}
