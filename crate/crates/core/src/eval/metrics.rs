use crate::data::InteractionRecord;
use crate::error::{Error, Result};

/// Root mean squared error and mean absolute error.
pub fn metrics(pred: &[f64], actual: &[f64]) -> Result<(f64, f64)> {
    if pred.len() != actual.len() {
        return Err(Error::Argument(format!(
            "{} predictions for {} observations",
            pred.len(),
            actual.len()
        )));
    }
    if pred.is_empty() {
        return Err(Error::Argument("no predictions to score".into()));
    }
    let n = pred.len() as f64;
    let (sq, abs) = pred
        .iter()
        .zip(actual)
        .fold((0.0, 0.0), |(sq, abs), (p, a)| {
            let d = p - a;
            (sq + d * d, abs + d.abs())
        });
    Ok(((sq / n).sqrt(), abs / n))
}

/// Population mean and variance.
pub fn mean_variance(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    (mean, var)
}

/// Predicts the mean graded training score for every query.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AvgBaseline {
    pub mean: f64,
}

impl AvgBaseline {
    pub fn predict(&self) -> f64 {
        self.mean
    }
}

/// Fits the constant baseline on the records of `graded_view`.
pub fn avg_baseline(train: &[InteractionRecord], graded_view: usize) -> Result<AvgBaseline> {
    let (sum, n) = train
        .iter()
        .filter(|r| r.view == graded_view)
        .fold((0.0, 0usize), |(s, n), r| (s + r.value, n + 1));
    if n == 0 {
        return Err(Error::Argument("no graded training records for the average baseline".into()));
    }
    Ok(AvgBaseline { mean: sum / n as f64 })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn perfect_prediction() {
        assert_eq!(metrics(&[0.1, 0.5], &[0.1, 0.5]).unwrap(), (0.0, 0.0));
    }

    #[test]
    fn hand_computed() {
        let (rmse, mae) = metrics(&[1.0, 0.0], &[0.0, 0.0]).unwrap();
        assert!((rmse - 0.5f64.sqrt()).abs() < 1e-15);
        assert!((mae - 0.5).abs() < 1e-15);
    }

    #[test]
    fn against_two_pass_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..20 {
            let n = rng.gen_range(1..50);
            let p: Vec<f64> = (0..n).map(|_| rng.gen()).collect();
            let a: Vec<f64> = (0..n).map(|_| rng.gen()).collect();
            let diffs: Vec<f64> = p.iter().zip(&a).map(|(x, y)| x - y).collect();
            let mse = diffs.iter().map(|d| d * d).sum::<f64>() / n as f64;
            let mae = diffs.iter().map(|d| d.abs()).sum::<f64>() / n as f64;
            let (r, m) = metrics(&p, &a).unwrap();
            assert!((r - mse.sqrt()).abs() < 1e-12);
            assert!((m - mae).abs() < 1e-12);
            assert!(r >= m);
        }
    }

    #[test]
    fn errors() {
        assert!(metrics(&[], &[]).is_err());
        assert!(metrics(&[1.0], &[]).is_err());
    }

    #[test]
    fn baseline_mean() {
        let rec = |v: f64, view: usize| InteractionRecord { student: 0, attempt: 0, view, material: 0, value: v };
        let b = avg_baseline(&[rec(0.5, 0), rec(1.0, 0), rec(1.0, 1)], 0).unwrap();
        assert_eq!(b.predict(), 0.75);
        assert!(avg_baseline(&[rec(1.0, 1)], 0).is_err());
    }

    #[test]
    fn population_variance() {
        let (m, v) = mean_variance(&[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(m, 2.5);
        assert_eq!(v, 1.25);
    }
}
