use serde::{Deserialize, Serialize};

use crate::data::{Dataset, InteractionRecord};
use crate::model::{log_sigmoid, HyperParams, ModelParams};

/// Value of the training objective split into its parts.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ObjectiveBreakdown {
    /// Weighted squared reconstruction error plus the `T` and `S` regularizers.
    pub l1: f64,
    /// Sum of `log sigmoid` learning-gain terms (to be maximized).
    pub l2: f64,
    /// `l1 - omega * l2`.
    pub total: f64,
}

impl ObjectiveBreakdown {
    pub fn is_finite(&self) -> bool {
        self.l1.is_finite() && self.l2.is_finite() && self.total.is_finite()
    }
}

/// Full objective over every record of `ds`.
pub fn objective(params: &ModelParams, ds: &Dataset, hp: &HyperParams) -> ObjectiveBreakdown {
    objective_records(params, ds.records(), hp, true)
}

/// Objective over `records`, with the regularizers taken over every attempt slice of
/// `T` and every row of `S`. When `penalty` is false the learning-gain sum is skipped
/// and reported as zero.
pub fn objective_records(
    params: &ModelParams,
    records: &[InteractionRecord],
    hp: &HyperParams,
    penalty: bool,
) -> ObjectiveBreakdown {
    let mut residual = 0.0;
    let mut l2 = 0.0;
    for rec in records {
        let diff = params.predict_record(rec) - rec.value;
        residual += hp.gamma[rec.view] * diff * diff;
        if penalty {
            l2 += penalty_sum(params, rec, hp.m);
        }
    }
    let reg_t: f64 = params.t.iter().map(|x| x * x).sum();
    let reg_s: f64 = params.s.iter().map(|x| x * x).sum();
    let l1 = residual + hp.lambda_t * reg_t + hp.lambda_s * reg_s;
    ObjectiveBreakdown { l1, l2, total: l1 - hp.omega * l2 }
}

/// `sum_j log sigmoid(s T_a q - s T_j q)` over the `m` attempts preceding the record.
pub(crate) fn penalty_sum(params: &ModelParams, rec: &InteractionRecord, m: usize) -> f64 {
    let q = params.q_column(rec.view, rec.material);
    let row = params.student_row(rec.student);
    let score = |a: usize| -> f64 {
        row.iter().zip(params.t_times_q(a, &q)).map(|(x, y)| x * y).sum()
    };
    let current = score(rec.attempt);
    window(rec.attempt, m).map(|j| log_sigmoid(current - score(j))).sum()
}

/// Attempts `j` in `[a - m, a)` clipped at zero.
#[inline]
pub(crate) fn window(a: usize, m: usize) -> std::ops::Range<usize> {
    a.saturating_sub(m)..a
}
