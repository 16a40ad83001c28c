use std::collections::{BTreeMap, BTreeSet};

use crate::data::InteractionRecord;
use crate::model::{sigmoid, HyperParams, ModelParams};

use super::objective::window;
use super::simplex::project_simplex_in_place;

/// Sparse, parameter-shaped gradient. Only blocks touched by the batch are present;
/// maps are ordered so updates apply in a deterministic order.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Gradients {
    /// Student -> gradient of its `S` row (length K).
    pub s: BTreeMap<usize, Vec<f64>>,
    /// Attempt -> gradient of the `T_a` slice, row-major `K x C`.
    pub t: BTreeMap<usize, Vec<f64>>,
    /// (view, material) -> gradient of the `Q` column (length C).
    pub q: BTreeMap<(usize, usize), Vec<f64>>,
    pub b_s: BTreeMap<usize, f64>,
    pub b_p: BTreeMap<(usize, usize), f64>,
    /// (attempt-bias view, attempt) -> gradient.
    pub b_a: BTreeMap<(usize, usize), f64>,
    pub mu: f64,
    /// Number of learning-gain terms evaluated.
    pub penalty_terms: u64,
}

/// Which parameter blocks receive gradients.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) enum Scope {
    All,
    /// Only the student's latent row and bias; used for fold-in.
    Student,
}

/// Analytic gradient of the batch objective
///
/// ```text
/// sum_{rec in batch} [ gamma_r (xhat - x)^2 - omega * sum_j log sigmoid(d_j) ]
///   + lambda_t * sum_{a in batch attempts} |T_a|^2 + lambda_s * sum_{s in batch students} |s_s|^2
/// ```
///
/// where `d_j = s_s T_a q_p - s_s T_j q_p` for the `m` attempts `j` before `a`.
/// Regularizers are counted once per distinct attempt or student in the batch, so a
/// batch covering every record, student and attempt reproduces the full objective.
pub fn gradients(params: &ModelParams, batch: &[InteractionRecord], hp: &HyperParams) -> Gradients {
    batch_gradients(params, batch, hp, Scope::All)
}

pub(crate) fn batch_gradients(
    params: &ModelParams,
    batch: &[InteractionRecord],
    hp: &HyperParams,
    scope: Scope,
) -> Gradients {
    let mut g = Gradients::default();
    let (kd, cd) = (params.k, params.c);
    let mut students = BTreeSet::new();
    let mut attempts = BTreeSet::new();

    for rec in batch {
        let (s, a, p, r) = (rec.student, rec.attempt, rec.material, rec.view);
        students.insert(s);
        attempts.insert(a);
        let q = params.q_column(r, p);
        let row = params.student_row(s).to_vec();
        let tq_a = params.t_times_q(a, &q);
        let z = dot(&row, &tq_a) + params.b_s[s] + params.b_p[r][p] + params.b_a[params.attempt_bias_view(r)][a];
        let gamma = hp.gamma[r];
        let e = if params.graded[r] {
            2.0 * gamma * (z - rec.value)
        } else {
            let y = sigmoid(z + params.mu);
            2.0 * gamma * (y - rec.value) * y * (1.0 - y)
        };

        axpy(g.s.entry(s).or_insert_with(|| vec![0.0; kd]), e, &tq_a);
        *g.b_s.entry(s).or_insert(0.0) += e;
        if scope == Scope::All {
            let ta = g.t.entry(a).or_insert_with(|| vec![0.0; kd * cd]);
            outer_add(ta, e, &row, &q);
            let st_a = s_times_t(params, &row, a);
            axpy(g.q.entry((r, p)).or_insert_with(|| vec![0.0; cd]), e, &st_a);
            *g.b_p.entry((r, p)).or_insert(0.0) += e;
            *g.b_a.entry((params.attempt_bias_view(r), a)).or_insert(0.0) += e;
            if !params.graded[r] {
                g.mu += e;
            }
        }

        if hp.omega == 0.0 {
            continue;
        }
        let st_a = (scope == Scope::All).then(|| s_times_t(params, &row, a));
        for j in window(a, hp.m) {
            g.penalty_terms += 1;
            let tq_j = params.t_times_q(j, &q);
            let delta: Vec<f64> = tq_a.iter().zip(&tq_j).map(|(x, y)| x - y).collect();
            let d = dot(&row, &delta);
            // d/dd of -omega * log sigmoid(d)
            let w = -hp.omega * sigmoid(-d);
            axpy(g.s.entry(s).or_insert_with(|| vec![0.0; kd]), w, &delta);
            if scope == Scope::All {
                outer_add(g.t.entry(a).or_insert_with(|| vec![0.0; kd * cd]), w, &row, &q);
                outer_add(g.t.entry(j).or_insert_with(|| vec![0.0; kd * cd]), -w, &row, &q);
                let st_j = s_times_t(params, &row, j);
                let st_a = st_a.as_ref().expect("computed for full scope");
                let gq = g.q.entry((r, p)).or_insert_with(|| vec![0.0; cd]);
                for c in 0..cd {
                    gq[c] += w * (st_a[c] - st_j[c]);
                }
            }
        }
    }

    if scope == Scope::All && hp.lambda_t != 0.0 {
        for &a in &attempts {
            let ta = g.t.entry(a).or_insert_with(|| vec![0.0; kd * cd]);
            for k in 0..kd {
                for c in 0..cd {
                    ta[k * cd + c] += 2.0 * hp.lambda_t * params.t[params.t_idx(k, c, a)];
                }
            }
        }
    }
    if hp.lambda_s != 0.0 {
        for &s in &students {
            axpy(g.s.entry(s).or_insert_with(|| vec![0.0; kd]), 2.0 * hp.lambda_s, params.student_row(s));
        }
    }
    g
}

impl Gradients {
    /// Dense gradient with the same shape as `like`; untouched blocks are zero.
    pub fn to_dense(&self, like: &ModelParams) -> ModelParams {
        let mut d = ModelParams::zeros(
            like.num_students,
            like.k,
            like.c,
            like.num_attempts,
            like.num_materials.clone(),
            like.graded.clone(),
            like.shared_attempt_bias,
        );
        for (&s, row) in &self.s {
            d.s[s * like.k..(s + 1) * like.k].copy_from_slice(row);
        }
        for (&a, slice) in &self.t {
            for k in 0..like.k {
                for c in 0..like.c {
                    let i = d.t_idx(k, c, a);
                    d.t[i] = slice[k * like.c + c];
                }
            }
        }
        for (&(r, p), col) in &self.q {
            d.set_q_column(r, p, col);
        }
        for (&s, &v) in &self.b_s {
            d.b_s[s] = v;
        }
        for (&(r, p), &v) in &self.b_p {
            d.b_p[r][p] = v;
        }
        for (&(r, a), &v) in &self.b_a {
            d.b_a[r][a] = v;
        }
        d.mu = self.mu;
        d
    }
}

/// `params -= eta * g`, then projects every touched `S` row (when `constrain_s`)
/// and `Q` column back onto the simplex.
pub(crate) fn apply_step(params: &mut ModelParams, g: &Gradients, eta: f64, constrain_s: bool) {
    let (kd, cd) = (params.k, params.c);
    for (&s, grad) in &g.s {
        let row = &mut params.s[s * kd..(s + 1) * kd];
        for (x, d) in row.iter_mut().zip(grad) {
            *x -= eta * d;
        }
        if constrain_s {
            project_simplex_in_place(row);
        }
    }
    for (&a, grad) in &g.t {
        for k in 0..kd {
            for c in 0..cd {
                let i = params.t_idx(k, c, a);
                params.t[i] -= eta * grad[k * cd + c];
            }
        }
    }
    for (&(r, p), grad) in &g.q {
        let mut col = params.q_column(r, p);
        for (x, d) in col.iter_mut().zip(grad) {
            *x -= eta * d;
        }
        project_simplex_in_place(&mut col);
        params.set_q_column(r, p, &col);
    }
    for (&s, &d) in &g.b_s {
        params.b_s[s] -= eta * d;
    }
    for (&(r, p), &d) in &g.b_p {
        params.b_p[r][p] -= eta * d;
    }
    for (&(r, a), &d) in &g.b_a {
        params.b_a[r][a] -= eta * d;
    }
    params.mu -= eta * g.mu;
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
fn axpy(y: &mut [f64], alpha: f64, x: &[f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

/// `dst[k, c] += alpha * u[k] * v[c]`.
#[inline]
fn outer_add(dst: &mut [f64], alpha: f64, u: &[f64], v: &[f64]) {
    let cd = v.len();
    for (k, uk) in u.iter().enumerate() {
        for (c, vc) in v.iter().enumerate() {
            dst[k * cd + c] += alpha * uk * vc;
        }
    }
}

/// `s T_a`: length-C vector.
fn s_times_t(params: &ModelParams, row: &[f64], a: usize) -> Vec<f64> {
    (0..params.c)
        .map(|c| (0..params.k).map(|k| row[k] * params.t[params.t_idx(k, c, a)]).sum())
        .collect()
}
