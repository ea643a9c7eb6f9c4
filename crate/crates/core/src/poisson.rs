//! Poisson point masses, survival probabilities, and truncated expectations.
//!
//! Point masses use a log-space recurrence. Survival probabilities are
//! assembled from the side of the mode that avoids cancellation: below the
//! mode as one minus a small head sum, above it as a directly accumulated
//! tail. Terms below 1e-300 are treated as zero.

/// Precomputed Poisson quantities for one rate, up to a maximum argument.
#[derive(Debug, Clone)]
pub struct PoissonTable {
    pub lambda: f64,
    /// `pmf[y] = P[Y = y]` for `y < len`.
    pub pmf: Vec<f64>,
    /// `survival[j] = P[Y >= j]` for `j < len`.
    pub survival: Vec<f64>,
    /// `emin[m] = E[min(Y, m)] = Σ_{j=1..m} P[Y >= j]` for `m < len`.
    pub emin: Vec<f64>,
}

const TERM_CUTOFF: f64 = 1e-300;

impl PoissonTable {
    pub fn new(lambda: f64, len: usize) -> Self {
        assert!(lambda >= 0.0 && lambda.is_finite());
        assert!(len > 0);
        let mut pmf = vec![0.0; len];
        let mut survival = vec![0.0; len];
        if lambda == 0.0 {
            pmf[0] = 1.0;
            survival[0] = 1.0;
        } else {
            let ln_lambda = lambda.ln();
            let mut ln_p = -lambda;
            pmf[0] = ln_p.exp();
            for y in 1..len {
                ln_p += ln_lambda - (y as f64).ln();
                pmf[y] = ln_p.exp();
            }
            let mode = lambda.floor() as usize;
            // Head side: survival[j] = 1 - Σ_{y<j} pmf[y].
            let mut head = 0.0;
            for j in 0..len.min(mode + 2) {
                survival[j] = 1.0 - head;
                head += pmf[j];
            }
            // Tail side: accumulate pmf downward from the far end.
            if len > mode + 2 {
                let top = len - 1;
                // P[Y >= top] summed directly past the table end.
                let mut tail = 0.0;
                let mut ln_q = ln_p;
                let mut y = top;
                loop {
                    let term = ln_q.exp();
                    tail += term;
                    if term < TERM_CUTOFF || term < 1e-22 * tail {
                        break;
                    }
                    y += 1;
                    ln_q += ln_lambda - (y as f64).ln();
                }
                survival[top] = tail;
                for j in (mode + 2..top).rev() {
                    survival[j] = survival[j + 1] + pmf[j];
                }
            }
        }
        let mut emin = vec![0.0; len];
        for m in 1..len {
            emin[m] = emin[m - 1] + survival[m];
        }
        PoissonTable {
            lambda,
            pmf,
            survival,
            emin,
        }
    }

    #[inline]
    pub fn pmf_at(&self, y: i64) -> f64 {
        if y < 0 {
            0.0
        } else {
            self.pmf[y as usize]
        }
    }

    #[inline]
    pub fn survival_at(&self, j: i64) -> f64 {
        if j <= 0 {
            1.0
        } else {
            self.survival[j as usize]
        }
    }
}
