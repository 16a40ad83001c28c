use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::online::{evaluate_split, EvalConfig, Method};
use crate::data::{split_indices, Dataset};
use crate::error::{Error, Result};
use crate::model::HyperParams;
use crate::train::Ablation;

/// Candidate values per hyperparameter. An empty list keeps the base value.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Grid {
    pub k: Vec<usize>,
    pub c: Vec<usize>,
    pub omega: Vec<f64>,
    pub m: Vec<usize>,
    pub gamma: Vec<Vec<f64>>,
    pub eta: Vec<f64>,
    pub lambda_t: Vec<f64>,
    pub lambda_s: Vec<f64>,
}

impl Grid {
    /// Cartesian product over the listed values, in lexicographic order of
    /// (k, c, omega, m, gamma, eta, lambda_t, lambda_s).
    pub fn points(&self, base: &HyperParams) -> Vec<HyperParams> {
        fn or_base<T: Clone>(list: &[T], base: T) -> Vec<T> {
            if list.is_empty() {
                vec![base]
            } else {
                list.to_vec()
            }
        }
        let mut out = Vec::new();
        for k in or_base(&self.k, base.k) {
            for c in or_base(&self.c, base.c) {
                for omega in or_base(&self.omega, base.omega) {
                    for m in or_base(&self.m, base.m) {
                        for gamma in or_base(&self.gamma, base.gamma.clone()) {
                            for eta in or_base(&self.eta, base.eta) {
                                for lambda_t in or_base(&self.lambda_t, base.lambda_t) {
                                    for lambda_s in or_base(&self.lambda_s, base.lambda_s) {
                                        out.push(HyperParams {
                                            k,
                                            c,
                                            omega,
                                            m,
                                            gamma: gamma.clone(),
                                            eta,
                                            lambda_t,
                                            lambda_s,
                                            ..base.clone()
                                        });
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }
        out
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridPoint {
    pub hyperparams: HyperParams,
    pub rmse: f64,
    pub mae: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridResult {
    pub best: HyperParams,
    pub best_rmse: f64,
    pub table: Vec<GridPoint>,
    /// Student indices used for fitting and for validation.
    pub fit_students: Vec<usize>,
    pub validation_students: Vec<usize>,
}

/// Share of the tuning pool held out for validation.
pub const VALIDATION_FOLDS: usize = 5;

/// Exhaustive search scored by online RMSE on validation students.
///
/// The first outer fold's test students (from a `cfg.folds`-way split) are left out
/// entirely; the remaining pool is split again so that one fifth of it validates
/// every grid point while the rest is used for fitting. Ties keep the earlier point.
pub fn grid_search(ds: &Dataset, base: &HyperParams, grid: &Grid, cfg: &EvalConfig) -> Result<GridResult> {
    let points = grid.points(base);
    if points.is_empty() {
        return Err(Error::Argument("empty grid".into()));
    }
    let outer = split_indices(ds.num_students(), cfg.folds, cfg.seed)?;
    let pool = &outer[0].train;
    let inner = split_indices(pool.len(), VALIDATION_FOLDS, cfg.seed)?;
    let fit_students: Vec<usize> = inner[0].train.iter().map(|&i| pool[i]).collect();
    let validation_students: Vec<usize> = inner[0].test.iter().map(|&i| pool[i]).collect();

    let score = |hp: &HyperParams| -> Result<GridPoint> {
        let out = evaluate_split(ds, &fit_students, &validation_students, hp, Method::Model(Ablation::Full), cfg)?;
        let (rmse, mae) = out.metrics()?;
        Ok(GridPoint { hyperparams: hp.clone(), rmse, mae })
    };
    let table: Vec<GridPoint> = if cfg.jobs > 1 {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(cfg.jobs)
            .build()
            .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
        pool.install(|| points.par_iter().map(score).collect::<Result<_>>())?
    } else {
        points.iter().map(score).collect::<Result<_>>()?
    };
    let best = table
        .iter()
        .fold(None::<&GridPoint>, |acc, p| match acc {
            Some(b) if b.rmse <= p.rmse => Some(b),
            _ => Some(p),
        })
        .expect("non-empty table");
    Ok(GridResult {
        best: best.hyperparams.clone(),
        best_rmse: best.rmse,
        table: table.clone(),
        fit_students,
        validation_students,
    })
}
