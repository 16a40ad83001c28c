use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::metrics::{avg_baseline, mean_variance, metrics};
use crate::data::{split_prefix_suffix, split_student_stratified, Dataset, InteractionRecord};
use crate::error::{Error, Result};
use crate::model::HyperParams;
use crate::train::{fit_target, fold_in, student_step, Ablation};

/// A model variant or the constant-mean baseline.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Method {
    Model(Ablation),
    Avg,
}

impl Method {
    pub fn label(self) -> &'static str {
        match self {
            Method::Model(a) => a.label(),
            Method::Avg => "AVG",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Method::Model(a) => a.fmt(f),
            Method::Avg => f.write_str("avg"),
        }
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "avg" => Ok(Method::Avg),
            other => other.parse().map(Method::Model),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalConfig {
    pub folds: usize,
    pub seed: u64,
    /// Graded view whose suffix is predicted; defaults to the first graded view.
    pub target_view: Option<usize>,
    /// Share of each test student's graded attempts revealed up front.
    pub prefix_fraction: f64,
    /// Worker threads for independent folds.
    pub jobs: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self { folds: 5, seed: 0, target_view: None, prefix_fraction: 0.5, jobs: 1 }
    }
}

impl EvalConfig {
    pub(crate) fn target(&self, ds: &Dataset) -> Result<usize> {
        let t = self
            .target_view
            .or_else(|| ds.primary_graded_view())
            .ok_or_else(|| Error::Argument("dataset has no graded view".into()))?;
        if t >= ds.num_views() || !ds.view(t).graded {
            return Err(Error::Argument(format!("target view {t} is not a graded view")));
        }
        Ok(t)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum AccessKind {
    Predicted,
    Revealed,
}

/// One access to a held-out suffix record, keyed by the dataset's student index.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AccessEvent {
    pub student: usize,
    pub attempt: usize,
    pub kind: AccessKind,
    /// Whether the record is a prediction target.
    pub target: bool,
}

/// Checks that every target record was predicted before it was revealed, and that
/// each student's suffix was consumed in attempt order.
pub fn audit_access_log(log: &[AccessEvent]) -> Result<()> {
    use std::collections::{HashMap, HashSet};
    let mut predicted = HashSet::new();
    let mut last_revealed: HashMap<usize, usize> = HashMap::new();
    for ev in log {
        match ev.kind {
            AccessKind::Predicted => {
                predicted.insert((ev.student, ev.attempt));
            }
            AccessKind::Revealed => {
                if ev.target && !predicted.contains(&(ev.student, ev.attempt)) {
                    return Err(Error::Integrity(format!(
                        "student {} attempt {} revealed before its prediction",
                        ev.student, ev.attempt
                    )));
                }
                if let Some(prev) = last_revealed.insert(ev.student, ev.attempt) {
                    if prev >= ev.attempt {
                        return Err(Error::Integrity(format!(
                            "student {} suffix read out of order ({prev} then {})",
                            ev.student, ev.attempt
                        )));
                    }
                }
            }
        }
    }
    Ok(())
}

/// Position of the next held-out record, without its value.
#[derive(Clone, Copy, Debug)]
pub struct Query {
    pub attempt: usize,
    pub view: usize,
    pub material: usize,
    pub is_target: bool,
}

/// Sequential reader over a student's suffix. A target's value is only available
/// through [`SuffixCursor::reveal`] after [`SuffixCursor::record_prediction`].
pub struct SuffixCursor<'a> {
    student: usize,
    target_view: usize,
    records: &'a [InteractionRecord],
    pos: usize,
    predicted: Option<f64>,
    log: &'a mut Vec<AccessEvent>,
}

impl<'a> SuffixCursor<'a> {
    pub fn new(
        student: usize,
        target_view: usize,
        records: &'a [InteractionRecord],
        log: &'a mut Vec<AccessEvent>,
    ) -> Self {
        Self { student, target_view, records, pos: 0, predicted: None, log }
    }

    pub fn peek(&self) -> Option<Query> {
        self.records.get(self.pos).map(|r| Query {
            attempt: r.attempt,
            view: r.view,
            material: r.material,
            is_target: r.view == self.target_view,
        })
    }

    pub fn record_prediction(&mut self, value: f64) -> Result<()> {
        let q = self.peek().ok_or_else(|| Error::Argument("suffix exhausted".into()))?;
        if !q.is_target {
            return Err(Error::Argument("only target records are predicted".into()));
        }
        self.predicted = Some(value);
        self.log.push(AccessEvent {
            student: self.student,
            attempt: q.attempt,
            kind: AccessKind::Predicted,
            target: true,
        });
        Ok(())
    }

    /// Returns the current record together with the logged prediction (targets only)
    /// and advances.
    pub fn reveal(&mut self) -> Result<(InteractionRecord, Option<f64>)> {
        let q = self.peek().ok_or_else(|| Error::Argument("suffix exhausted".into()))?;
        let prediction = self.predicted.take();
        if q.is_target && prediction.is_none() {
            return Err(Error::Integrity(format!(
                "attempt {} revealed before a prediction was recorded",
                q.attempt
            )));
        }
        self.log.push(AccessEvent {
            student: self.student,
            attempt: q.attempt,
            kind: AccessKind::Revealed,
            target: q.is_target,
        });
        let rec = self.records[self.pos];
        self.pos += 1;
        Ok((rec, prediction))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub student: usize,
    pub attempt: usize,
    pub predicted: f64,
    pub actual: f64,
}

#[derive(Clone, Debug, Default)]
pub struct SplitOutcome {
    pub predictions: Vec<Prediction>,
    /// Test students without any target-view record.
    pub skipped_students: usize,
    pub access_log: Vec<AccessEvent>,
}

impl SplitOutcome {
    pub fn metrics(&self) -> Result<(f64, f64)> {
        let p: Vec<f64> = self.predictions.iter().map(|x| x.predicted).collect();
        let a: Vec<f64> = self.predictions.iter().map(|x| x.actual).collect();
        metrics(&p, &a)
    }
}

/// Trains on `train` students, folds in each `test` student's prefix, then predicts
/// their target-view suffix attempt by attempt, revealing each record after it is
/// scored.
pub fn evaluate_split(
    ds: &Dataset,
    train: &[usize],
    test: &[usize],
    hp: &HyperParams,
    method: Method,
    cfg: &EvalConfig,
) -> Result<SplitOutcome> {
    let target = cfg.target(ds)?;
    let train_ds = ds.restrict_students(train)?;

    let mut splits = Vec::with_capacity(test.len());
    let mut skipped = 0;
    for &s in test {
        match split_prefix_suffix(ds, s, target, cfg.prefix_fraction) {
            Ok(ps) => splits.push((s, ps)),
            Err(Error::EmptySequence { .. }) => skipped += 1,
            Err(e) => return Err(e),
        }
    }
    let mut out = SplitOutcome { skipped_students: skipped, ..Default::default() };

    match method {
        Method::Avg => {
            let baseline = avg_baseline(train_ds.records(), target)?;
            for (s, ps) in &splits {
                let mut cursor = SuffixCursor::new(*s, target, &ps.suffix, &mut out.access_log);
                while let Some(q) = cursor.peek() {
                    if q.is_target {
                        cursor.record_prediction(baseline.predict())?;
                    }
                    let (rec, pred) = cursor.reveal()?;
                    if let Some(p) = pred {
                        out.predictions.push(Prediction { student: *s, attempt: rec.attempt, predicted: p, actual: rec.value });
                    }
                }
            }
        }
        Method::Model(ablation) => {
            let hp_eff = ablation.effective(hp);
            let fitted = fit_target(&train_ds, hp, ablation, Some(target))?;
            let prefixes: Vec<Vec<InteractionRecord>> = splits
                .iter()
                .map(|(_, ps)| {
                    ps.prefix.iter().filter(|r| ablation.uses_view(r.view, target)).copied().collect()
                })
                .collect();
            let folded = fold_in(&fitted.params, &prefixes, &hp_eff)?;
            let mut params = folded.params;
            for ((s, ps), &row) in splits.iter().zip(&folded.rows) {
                let mut cursor = SuffixCursor::new(*s, target, &ps.suffix, &mut out.access_log);
                while let Some(q) = cursor.peek() {
                    if q.is_target {
                        let p = params.predict_graded_clipped(row, q.attempt, q.material, q.view)?;
                        cursor.record_prediction(p)?;
                    }
                    let (rec, pred) = cursor.reveal()?;
                    if let Some(p) = pred {
                        out.predictions.push(Prediction { student: *s, attempt: rec.attempt, predicted: p, actual: rec.value });
                    }
                    if ablation.uses_view(rec.view, target) {
                        student_step(&mut params, &InteractionRecord { student: row, ..rec }, &hp_eff);
                    }
                }
            }
        }
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FoldMetrics {
    pub fold: usize,
    pub rmse: f64,
    pub mae: f64,
    pub predictions: usize,
    pub skipped_students: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttemptError {
    pub attempt: usize,
    pub rmse: f64,
    pub mae: f64,
    pub count: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub method: String,
    pub label: String,
    pub hyperparams: Option<HyperParams>,
    pub folds: Vec<FoldMetrics>,
    pub rmse_mean: f64,
    /// Population variance over folds.
    pub rmse_var: f64,
    pub mae_mean: f64,
    pub mae_var: f64,
    /// Errors pooled over folds, by attempt index.
    pub per_attempt: Vec<AttemptError>,
    #[serde(skip)]
    pub access_log: Vec<AccessEvent>,
}

/// Student-stratified cross-validation with online next-attempt prediction.
pub fn evaluate_online(ds: &Dataset, hp: &HyperParams, method: Method, cfg: &EvalConfig) -> Result<EvalReport> {
    let splits = split_student_stratified(ds, cfg.folds, cfg.seed)?;
    let run = |split: &crate::data::FoldSplit| evaluate_split(ds, &split.train, &split.test, hp, method, cfg);
    let outcomes: Vec<Result<SplitOutcome>> = if cfg.jobs > 1 {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(cfg.jobs)
            .build()
            .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
        pool.install(|| splits.par_iter().map(run).collect())
    } else {
        splits.iter().map(run).collect()
    };

    let mut folds = Vec::with_capacity(outcomes.len());
    let mut per_attempt: Vec<(f64, f64, usize)> = Vec::new();
    let mut access_log = Vec::new();
    for (i, outcome) in outcomes.into_iter().enumerate() {
        let outcome = outcome?;
        let (rmse, mae) = outcome.metrics()?;
        for p in &outcome.predictions {
            if per_attempt.len() <= p.attempt {
                per_attempt.resize(p.attempt + 1, (0.0, 0.0, 0));
            }
            let d = p.predicted - p.actual;
            let slot = &mut per_attempt[p.attempt];
            slot.0 += d * d;
            slot.1 += d.abs();
            slot.2 += 1;
        }
        folds.push(FoldMetrics {
            fold: i,
            rmse,
            mae,
            predictions: outcome.predictions.len(),
            skipped_students: outcome.skipped_students,
        });
        access_log.extend(outcome.access_log);
    }
    let (rmse_mean, rmse_var) = mean_variance(&folds.iter().map(|f| f.rmse).collect::<Vec<_>>());
    let (mae_mean, mae_var) = mean_variance(&folds.iter().map(|f| f.mae).collect::<Vec<_>>());
    Ok(EvalReport {
        method: method.to_string(),
        label: method.label().to_string(),
        hyperparams: matches!(method, Method::Model(_)).then(|| hp.clone()),
        folds,
        rmse_mean,
        rmse_var,
        mae_mean,
        mae_var,
        per_attempt: per_attempt
            .into_iter()
            .enumerate()
            .filter(|(_, (_, _, n))| *n > 0)
            .map(|(attempt, (sq, abs, n))| AttemptError {
                attempt,
                rmse: (sq / n as f64).sqrt(),
                mae: abs / n as f64,
                count: n,
            })
            .collect(),
        access_log,
    })
}
