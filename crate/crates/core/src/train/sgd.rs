use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::gradient::{apply_step, batch_gradients, Scope};
use super::objective::{objective_records, ObjectiveBreakdown};
use crate::data::{Dataset, InteractionRecord};
use crate::error::{Error, Result};
use crate::model::{init_params, HyperParams, ModelParams};

/// Model variant being trained.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Ablation {
    /// All views with the learning-gain penalty.
    Full,
    /// Target graded view only, penalty kept.
    Base,
    /// All views, `omega = 0`.
    NoPenalty,
}

impl Ablation {
    pub fn label(self) -> &'static str {
        match self {
            Ablation::Full => "MVKM",
            Ablation::Base => "MVKM-Base",
            Ablation::NoPenalty => "MVKM-W/O-P",
        }
    }

    /// Hyperparameters actually used for this variant.
    pub fn effective(self, hp: &HyperParams) -> HyperParams {
        match self {
            Ablation::NoPenalty => HyperParams { omega: 0.0, ..hp.clone() },
            _ => hp.clone(),
        }
    }

    pub fn uses_penalty(self) -> bool {
        self != Ablation::NoPenalty
    }

    /// Whether records of view `view` are used when `target` is the graded target.
    pub fn uses_view(self, view: usize, target: usize) -> bool {
        self != Ablation::Base || view == target
    }
}

impl fmt::Display for Ablation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Ablation::Full => "full",
            Ablation::Base => "base",
            Ablation::NoPenalty => "no-penalty",
        })
    }
}

impl FromStr for Ablation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "full" => Ok(Ablation::Full),
            "base" => Ok(Ablation::Base),
            "no-penalty" | "no_penalty" => Ok(Ablation::NoPenalty),
            other => Err(Error::Argument(format!("unknown ablation {other:?}"))),
        }
    }
}

#[derive(Clone, Debug)]
pub struct FitResult {
    pub params: ModelParams,
    /// Objective at initialization followed by one entry per completed epoch.
    pub history: Vec<ObjectiveBreakdown>,
    pub epochs_run: usize,
    /// Learning-gain terms evaluated by gradient steps and objective evaluations.
    pub penalty_terms: u64,
}

/// Trains with the first graded view as the `Base` target.
pub fn fit(ds: &Dataset, hp: &HyperParams, ablation: Ablation) -> Result<FitResult> {
    fit_target(ds, hp, ablation, None)
}

pub fn fit_target(
    ds: &Dataset,
    hp: &HyperParams,
    ablation: Ablation,
    target_view: Option<usize>,
) -> Result<FitResult> {
    hp.validate(ds.num_views())?;
    let hp = ablation.effective(hp);
    let target = match target_view.or_else(|| ds.primary_graded_view()) {
        Some(t) if t < ds.num_views() => t,
        Some(t) => return Err(Error::Argument(format!("target view {t} out of range"))),
        None if ablation == Ablation::Base => {
            return Err(Error::Argument("base ablation needs a graded view".into()))
        }
        None => 0,
    };
    let records: Vec<InteractionRecord> = ds
        .records()
        .iter()
        .filter(|r| ablation.uses_view(r.view, target))
        .copied()
        .collect();
    if records.is_empty() {
        return Err(Error::Argument("no training records".into()));
    }
    let params = init_params(&hp, ds);
    train_records(params, &records, &hp, ablation.uses_penalty())
}

/// Projected SGD over `records` starting from `params`.
pub(crate) fn train_records(
    mut params: ModelParams,
    records: &[InteractionRecord],
    hp: &HyperParams,
    penalty: bool,
) -> Result<FitResult> {
    let mut rng = ChaCha8Rng::seed_from_u64(hp.seed);
    rng.set_stream(1);
    let mut penalty_terms = 0u64;
    let evaluate = |params: &ModelParams, terms: &mut u64| {
        if penalty {
            *terms += records.iter().map(|r| r.attempt.min(hp.m) as u64).sum::<u64>();
        }
        objective_records(params, records, hp, penalty)
    };
    let mut history = vec![evaluate(&params, &mut penalty_terms)];
    if !history[0].is_finite() {
        return Err(Error::Divergence { epoch: 0 });
    }

    let mut order: Vec<usize> = (0..records.len()).collect();
    let mut batch = Vec::with_capacity(hp.batch_size);
    let mut epochs_run = 0;
    for epoch in 1..=hp.epochs {
        order.shuffle(&mut rng);
        for chunk in order.chunks(hp.batch_size) {
            batch.clear();
            batch.extend(chunk.iter().map(|&i| records[i]));
            let g = batch_gradients(&params, &batch, hp, Scope::All);
            penalty_terms += g.penalty_terms;
            apply_step(&mut params, &g, hp.eta, hp.constrain_s);
        }
        let obj = evaluate(&params, &mut penalty_terms);
        if !obj.is_finite() {
            return Err(Error::Divergence { epoch });
        }
        params.validate(hp.constrain_s)?;
        history.push(obj);
        epochs_run = epoch;
        if converged(&history, hp) {
            break;
        }
    }
    Ok(FitResult { params, history, epochs_run, penalty_terms })
}

fn converged(history: &[ObjectiveBreakdown], hp: &HyperParams) -> bool {
    let w = hp.early_stop_window;
    if hp.early_stop_tol == 0.0 || w == 0 || history.len() <= w {
        return false;
    }
    let prev = history[history.len() - 1 - w].total;
    let cur = history[history.len() - 1].total;
    (prev - cur) / prev.abs().max(f64::MIN_POSITIVE) < hp.early_stop_tol
}
