//! Diagonal autoregression of O-D deviations, pooled over a whole day.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::simulator::Series;

/// `f^p` for `p = 1..=q'` (diagonals only) and the diagonal process noise.
#[derive(Debug, Clone, PartialEq)]
pub struct TransitionModel {
    /// `f_blocks[p - 1][r]` is pair `r`'s coefficient on its own deviation `p` intervals back.
    pub f_blocks: Vec<DVector<f64>>,
    pub q_diag: DVector<f64>,
    /// Pairs whose regression was underdetermined (`f = 0`, `Q` = sample variance).
    pub fallback_pairs: Vec<usize>,
}

impl TransitionModel {
    pub fn q_prime(&self) -> usize {
        self.f_blocks.len()
    }

    pub fn n_od(&self) -> usize {
        self.q_diag.len()
    }
}

/// Per-pair OLS (no intercept) of `dx[h]` on `dx[h-1..=h-q']` over `days`,
/// where `dx = od - hist_od`. Only intervals with a full lag window inside
/// the day are used. Coefficients are clipped to `[-1, 1]`; `Q` is the
/// residual variance.
pub fn estimate_transition(od: &Series, hist_od: &Series, days: &[usize], q_prime: usize) -> Result<TransitionModel> {
    if q_prime == 0 {
        return Err(Error::InvalidArgument("q' must be at least 1".into()));
    }
    let t = od.intervals();
    if t < 2 * q_prime {
        return Err(Error::InsufficientData(format!(
            "{t} intervals per day; transition estimation with q'={q_prime} needs at least {}",
            2 * q_prime
        )));
    }
    let n_od = od.width();
    let mut f_blocks = vec![DVector::zeros(n_od); q_prime];
    let mut q_diag = DVector::zeros(n_od);
    let mut fallback_pairs = Vec::new();

    for r in 0..n_od {
        let mut gram = DMatrix::<f64>::zeros(q_prime, q_prime);
        let mut rhs = DVector::<f64>::zeros(q_prime);
        let mut targets = Vec::new();
        let mut samples = Vec::new();
        for &day in days {
            let dev = |h: usize| od.at(day, h)[r] - hist_od.at(day, h)[r];
            for h in q_prime..t {
                let x = DVector::from_iterator(q_prime, (1..=q_prime).map(|p| dev(h - p)));
                let y = dev(h);
                gram += &x * x.transpose();
                rhs += &x * y;
                targets.push(y);
                samples.push(x);
            }
        }
        let n = targets.len();
        let eig = gram.clone().symmetric_eigen().eigenvalues;
        let max_eig = eig.max();
        let solvable = n > q_prime && max_eig > 0.0 && eig.min() > 1e-12 * max_eig;
        let coef = if solvable { gram.cholesky().map(|c| c.solve(&rhs)) } else { None };
        match coef {
            Some(coef) => {
                let coef = coef.map(|c| c.clamp(-1.0, 1.0));
                let sse: f64 = samples.iter().zip(&targets).map(|(x, y)| (y - coef.dot(x)).powi(2)).sum();
                q_diag[r] = sse / (n - q_prime) as f64;
                for p in 0..q_prime {
                    f_blocks[p][r] = coef[p];
                }
            }
            None => {
                q_diag[r] = sample_variance(&targets);
                fallback_pairs.push(r);
            }
        }
    }
    Ok(TransitionModel { f_blocks, q_diag, fallback_pairs })
}

fn sample_variance(v: &[f64]) -> f64 {
    if v.len() < 2 {
        return 0.0;
    }
    let mean = v.iter().sum::<f64>() / v.len() as f64;
    v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (v.len() - 1) as f64
}
