use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::{Corpus, CorpusError};

/// Least-squares fit `arousal ≈ c2·v² + c1·v + c0`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuadraticFit {
    pub c2: f64,
    pub c1: f64,
    pub c0: f64,
    pub residual_norm: f64,
    /// Residual norm of the best straight-line fit, for comparison.
    pub linear_residual_norm: f64,
}

fn lstsq(columns: &[Vec<f64>], target: &[f64]) -> (Vec<f64>, f64) {
    let n = target.len();
    let x = DMatrix::from_fn(n, columns.len(), |r, c| columns[c][r]);
    let y = DVector::from_column_slice(target);
    let svd = x.clone().svd(true, true);
    let beta = svd.solve(&y, 1e-12).expect("SVD computed with both U and V");
    let residual = (&x * &beta - &y).norm();
    (beta.iter().copied().collect(), residual)
}

pub fn quadratic_va_fit(corpus: &Corpus) -> Result<QuadraticFit, CorpusError> {
    let v: Vec<f64> = corpus.iter().map(|i| i.valence).collect();
    let a: Vec<f64> = corpus.iter().map(|i| i.arousal).collect();
    fit_points(&v, &a)
}

pub(crate) fn fit_points(v: &[f64], a: &[f64]) -> Result<QuadraticFit, CorpusError> {
    let mut distinct = v.to_vec();
    distinct.sort_by(f64::total_cmp);
    distinct.dedup();
    if distinct.len() < 3 {
        return Err(CorpusError::RankDeficient(distinct.len()));
    }
    let ones = vec![1.0; v.len()];
    let sq: Vec<f64> = v.iter().map(|x| x * x).collect();
    let (quad, residual_norm) = lstsq(&[sq, v.to_vec(), ones.clone()], a);
    let (_, linear_residual_norm) = lstsq(&[v.to_vec(), ones], a);
    Ok(QuadraticFit {
        c2: quad[0],
        c1: quad[1],
        c0: quad[2],
        residual_norm,
        linear_residual_norm,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exact_parabola() {
        let v: Vec<f64> = (0..11).map(|i| i as f64 / 10.0).collect();
        let a: Vec<f64> = v.iter().map(|x| (x - 0.5) * (x - 0.5)).collect();
        let f = fit_points(&v, &a).unwrap();
        assert!((f.c2 - 1.0).abs() < 1e-9);
        assert!((f.c1 + 1.0).abs() < 1e-9);
        assert!((f.c0 - 0.25).abs() < 1e-9);
        assert!(f.residual_norm <= f.linear_residual_norm);
    }

    #[test]
    fn constant_arousal() {
        let v = [0.1, 0.4, 0.5, 0.9];
        let f = fit_points(&v, &[0.3; 4]).unwrap();
        assert!(f.c2.abs() < 1e-9 && f.c1.abs() < 1e-9);
        assert!((f.c0 - 0.3).abs() < 1e-9);
    }

    #[test]
    fn needs_three_distinct_valences() {
        let err = fit_points(&[0.1, 0.1, 0.9, 0.9], &[0.2, 0.3, 0.4, 0.5]).unwrap_err();
        assert!(matches!(err, CorpusError::RankDeficient(2)));
    }
}
