//! Model parameters, forward predictions and the derived knowledge tensor.
//!
//! Shapes: `S` is `M x K`, `T` is `K x C x A`, and view `r` owns a `C x P[r]`
//! concept map `Q[r]`. Every array is stored flat in row-major order, which is
//! also the checkpoint layout.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, InteractionRecord};
use crate::error::{Error, Result};

/// Tolerance used when checking simplex constraints.
pub const SIMPLEX_TOL: f64 = 1e-6;

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HyperParams {
    /// Student latent dimension.
    pub k: usize,
    /// Concept dimension.
    pub c: usize,
    /// Weight of the rank-based learning penalty.
    pub omega: f64,
    /// Per-view weight of reconstruction residuals.
    pub gamma: Vec<f64>,
    /// Learning rate.
    pub eta: f64,
    /// Number of preceding attempts compared by the learning penalty.
    pub m: usize,
    pub lambda_t: f64,
    pub lambda_s: f64,
    pub epochs: usize,
    pub seed: u64,
    pub batch_size: usize,
    /// Keep rows of `S` on the probability simplex.
    pub constrain_s: bool,
    /// Tie the attempt bias across views.
    pub shared_attempt_bias: bool,
    /// Stop once the relative objective improvement over `early_stop_window`
    /// epochs drops below this value. Zero disables early stopping.
    pub early_stop_tol: f64,
    pub early_stop_window: usize,
    /// Passes over a new student's prefix during fold-in.
    pub fold_in_epochs: usize,
    /// Upper bound of the uniform initialization of `T`.
    pub init_t_scale: f64,
}

impl Default for HyperParams {
    fn default() -> Self {
        Self {
            k: 3,
            c: 3,
            omega: 0.2,
            gamma: vec![1.0, 0.1],
            eta: 0.1,
            m: 1,
            lambda_t: 0.01,
            lambda_s: 0.001,
            epochs: 100,
            seed: 0,
            batch_size: 1,
            constrain_s: true,
            shared_attempt_bias: false,
            early_stop_tol: 1e-5,
            early_stop_window: 5,
            fold_in_epochs: 50,
            init_t_scale: 0.1,
        }
    }
}

impl HyperParams {
    pub fn validate(&self, num_views: usize) -> Result<()> {
        let nonneg = [
            ("omega", self.omega),
            ("eta", self.eta),
            ("lambda_t", self.lambda_t),
            ("lambda_s", self.lambda_s),
            ("early_stop_tol", self.early_stop_tol),
            ("init_t_scale", self.init_t_scale),
        ];
        for (name, v) in nonneg {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::Config(format!("{name} must be finite and >= 0, got {v}")));
            }
        }
        for (name, v) in [("k", self.k), ("c", self.c), ("m", self.m), ("epochs", self.epochs), ("batch_size", self.batch_size)] {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be >= 1")));
            }
        }
        if self.gamma.len() < num_views {
            return Err(Error::Config(format!(
                "gamma has {} entries for {num_views} views",
                self.gamma.len()
            )));
        }
        if self.gamma.iter().any(|g| !(g.is_finite() && *g >= 0.0)) {
            return Err(Error::Config("gamma entries must be finite and >= 0".into()));
        }
        Ok(())
    }
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `ln(sigmoid(x))` without overflow for large `|x|`.
#[inline]
pub fn log_sigmoid(x: f64) -> f64 {
    -(x.max(0.0) - x + (-x.abs()).exp().ln_1p())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub num_students: usize,
    pub k: usize,
    pub c: usize,
    pub num_attempts: usize,
    pub num_materials: Vec<usize>,
    /// Per view: true for graded (identity link), false for sigmoid link.
    pub graded: Vec<bool>,
    pub shared_attempt_bias: bool,
    pub s: Vec<f64>,
    pub t: Vec<f64>,
    pub q: Vec<Vec<f64>>,
    pub b_s: Vec<f64>,
    pub b_p: Vec<Vec<f64>>,
    /// One vector per view, or a single shared vector.
    pub b_a: Vec<Vec<f64>>,
    pub mu: f64,
}

impl ModelParams {
    /// All-zero parameters of the given shape.
    pub fn zeros(
        num_students: usize,
        k: usize,
        c: usize,
        num_attempts: usize,
        num_materials: Vec<usize>,
        graded: Vec<bool>,
        shared_attempt_bias: bool,
    ) -> Self {
        let bias_views = if shared_attempt_bias { 1 } else { num_materials.len() };
        Self {
            num_students,
            k,
            c,
            num_attempts,
            s: vec![0.0; num_students * k],
            t: vec![0.0; k * c * num_attempts],
            q: num_materials.iter().map(|&p| vec![0.0; c * p]).collect(),
            b_s: vec![0.0; num_students],
            b_p: num_materials.iter().map(|&p| vec![0.0; p]).collect(),
            b_a: vec![vec![0.0; num_attempts]; bias_views],
            mu: 0.0,
            num_materials,
            graded,
            shared_attempt_bias,
        }
    }

    pub fn num_views(&self) -> usize {
        self.num_materials.len()
    }

    #[inline]
    pub fn s_idx(&self, s: usize, k: usize) -> usize {
        s * self.k + k
    }

    #[inline]
    pub fn t_idx(&self, k: usize, c: usize, a: usize) -> usize {
        (k * self.c + c) * self.num_attempts + a
    }

    #[inline]
    pub fn q_idx(&self, r: usize, c: usize, p: usize) -> usize {
        c * self.num_materials[r] + p
    }

    #[inline]
    pub fn attempt_bias_view(&self, r: usize) -> usize {
        if self.shared_attempt_bias {
            0
        } else {
            r
        }
    }

    pub fn student_row(&self, s: usize) -> &[f64] {
        &self.s[s * self.k..(s + 1) * self.k]
    }

    pub fn q_column(&self, r: usize, p: usize) -> Vec<f64> {
        (0..self.c).map(|c| self.q[r][self.q_idx(r, c, p)]).collect()
    }

    pub fn set_q_column(&mut self, r: usize, p: usize, col: &[f64]) {
        for (c, &v) in col.iter().enumerate() {
            let i = self.q_idx(r, c, p);
            self.q[r][i] = v;
        }
    }

    /// `T_a q_p`: length-K vector.
    pub(crate) fn t_times_q(&self, a: usize, q: &[f64]) -> Vec<f64> {
        (0..self.k)
            .map(|k| (0..self.c).map(|c| self.t[self.t_idx(k, c, a)] * q[c]).sum())
            .collect()
    }

    /// Trilinear form `s_s . T_a . q_p` (no biases).
    pub fn trilinear(&self, s: usize, a: usize, p: usize, r: usize) -> f64 {
        let q = self.q_column(r, p);
        self.student_row(s)
            .iter()
            .zip(self.t_times_q(a, &q))
            .map(|(x, y)| x * y)
            .sum()
    }

    /// Trilinear form plus student, material and attempt biases.
    pub fn affine(&self, s: usize, a: usize, p: usize, r: usize) -> f64 {
        self.trilinear(s, a, p, r)
            + self.b_s[s]
            + self.b_p[r][p]
            + self.b_a[self.attempt_bias_view(r)][a]
    }

    fn check_indices(&self, s: usize, a: usize, p: usize, r: usize) -> Result<()> {
        if r >= self.num_views() {
            return Err(Error::Argument(format!("view {r} out of range")));
        }
        if s >= self.num_students || a >= self.num_attempts || p >= self.num_materials[r] {
            return Err(Error::Argument(format!(
                "index (s={s}, a={a}, p={p}) out of range for view {r}"
            )));
        }
        Ok(())
    }

    /// Raw (unclipped) score prediction for a graded view.
    pub fn predict_graded(&self, s: usize, a: usize, p: usize, r: usize) -> Result<f64> {
        self.check_indices(s, a, p, r)?;
        if !self.graded[r] {
            return Err(Error::Argument(format!("view {r} is not graded")));
        }
        Ok(self.affine(s, a, p, r))
    }

    /// Graded prediction clipped to `[0, 1]` for reporting.
    pub fn predict_graded_clipped(&self, s: usize, a: usize, p: usize, r: usize) -> Result<f64> {
        self.predict_graded(s, a, p, r).map(|x| x.clamp(0.0, 1.0))
    }

    /// Sigmoid-link prediction; valid for non-graded views and binary graded views.
    pub fn predict_nongraded(&self, s: usize, a: usize, p: usize, r: usize) -> Result<f64> {
        self.check_indices(s, a, p, r)?;
        Ok(sigmoid(self.affine(s, a, p, r) + self.mu))
    }

    /// Prediction with the link matching the view kind. Indices are trusted.
    pub fn predict_record(&self, rec: &InteractionRecord) -> f64 {
        let z = self.affine(rec.student, rec.attempt, rec.material, rec.view);
        if self.graded[rec.view] {
            z
        } else {
            sigmoid(z + self.mu)
        }
    }

    /// `K = S T`, the per-student per-concept knowledge at every attempt.
    pub fn knowledge(&self) -> KnowledgeTensor {
        let (m, c_dim, a_dim) = (self.num_students, self.c, self.num_attempts);
        let mut data = vec![0.0; m * c_dim * a_dim];
        for s in 0..m {
            for k in 0..self.k {
                let w = self.s[self.s_idx(s, k)];
                if w == 0.0 {
                    continue;
                }
                for c in 0..c_dim {
                    let base = (s * c_dim + c) * a_dim;
                    for a in 0..a_dim {
                        data[base + a] += w * self.t[self.t_idx(k, c, a)];
                    }
                }
            }
        }
        KnowledgeTensor { num_students: m, num_concepts: c_dim, num_attempts: a_dim, data }
    }

    /// Checks shapes, finiteness and the simplex constraints on `Q` columns (and on
    /// `S` rows when `constrain_s`).
    pub fn validate(&self, constrain_s: bool) -> Result<()> {
        let r_dim = self.num_views();
        let shape_ok = self.s.len() == self.num_students * self.k
            && self.t.len() == self.k * self.c * self.num_attempts
            && self.b_s.len() == self.num_students
            && self.graded.len() == r_dim
            && self.q.len() == r_dim
            && self.b_p.len() == r_dim
            && self.b_a.len() == if self.shared_attempt_bias { 1 } else { r_dim }
            && self.b_a.iter().all(|b| b.len() == self.num_attempts)
            && (0..r_dim).all(|r| {
                self.q[r].len() == self.c * self.num_materials[r]
                    && self.b_p[r].len() == self.num_materials[r]
            });
        if !shape_ok {
            return Err(Error::InvalidParams("array shapes do not match dimensions".into()));
        }
        let all_finite = self.mu.is_finite()
            && [&self.s, &self.t, &self.b_s].iter().all(|v| v.iter().all(|x| x.is_finite()))
            && self.q.iter().chain(&self.b_p).chain(&self.b_a).all(|v| v.iter().all(|x| x.is_finite()));
        if !all_finite {
            return Err(Error::InvalidParams("non-finite entry".into()));
        }
        for r in 0..r_dim {
            for p in 0..self.num_materials[r] {
                check_simplex(&self.q_column(r, p))
                    .map_err(|e| Error::InvalidParams(format!("Q[{r}] column {p}: {e}")))?;
            }
        }
        if constrain_s {
            for s in 0..self.num_students {
                check_simplex(self.student_row(s))
                    .map_err(|e| Error::InvalidParams(format!("S row {s}: {e}")))?;
            }
        }
        Ok(())
    }

    pub fn save(&self, hp: &HyperParams, path: &Path) -> Result<()> {
        let ckpt = Checkpoint { format_version: CHECKPOINT_VERSION, hyperparams: hp.clone(), params: self.clone() };
        crate::data::write_json_file(path, &ckpt)
    }

    pub fn load(path: &Path) -> Result<(ModelParams, HyperParams)> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let ckpt: Checkpoint = serde_json::from_str(&text)?;
        if ckpt.format_version != CHECKPOINT_VERSION {
            return Err(Error::Config(format!(
                "unsupported checkpoint version {}",
                ckpt.format_version
            )));
        }
        ckpt.params.validate(false)?;
        Ok((ckpt.params, ckpt.hyperparams))
    }
}

#[derive(Serialize, Deserialize)]
struct Checkpoint {
    format_version: u32,
    hyperparams: HyperParams,
    params: ModelParams,
}

fn check_simplex(v: &[f64]) -> std::result::Result<(), String> {
    if let Some(x) = v.iter().find(|x| **x < 0.0) {
        return Err(format!("negative entry {x}"));
    }
    let sum: f64 = v.iter().sum();
    if (sum - 1.0).abs() > SIMPLEX_TOL {
        return Err(format!("sums to {sum}"));
    }
    Ok(())
}

/// Knowledge levels `K[s, c, a]`, stored row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct KnowledgeTensor {
    pub num_students: usize,
    pub num_concepts: usize,
    pub num_attempts: usize,
    pub data: Vec<f64>,
}

impl KnowledgeTensor {
    pub fn get(&self, s: usize, c: usize, a: usize) -> f64 {
        self.data[(s * self.num_concepts + c) * self.num_attempts + a]
    }

    /// Knowledge of student `s` in concept `c` across all attempts.
    pub fn curve(&self, s: usize, c: usize) -> &[f64] {
        let base = (s * self.num_concepts + c) * self.num_attempts;
        &self.data[base..base + self.num_attempts]
    }
}

/// Uniform point on the simplex via normalized positive uniforms.
pub(crate) fn random_simplex<R: Rng>(rng: &mut R, n: usize) -> Vec<f64> {
    let raw: Vec<f64> = (0..n).map(|_| rng.gen_range(f64::EPSILON..1.0)).collect();
    let sum: f64 = raw.iter().sum();
    raw.into_iter().map(|x| x / sum).collect()
}

/// Random initialization: simplex rows of `S` and columns of `Q`, `T` uniform on
/// `[0, init_t_scale]`, zero biases.
pub fn init_params(hp: &HyperParams, ds: &Dataset) -> ModelParams {
    init_params_with_shape(
        hp,
        ds.num_students(),
        ds.max_attempts(),
        ds.num_materials(),
        ds.views().iter().map(|v| v.graded).collect(),
    )
}

pub(crate) fn init_params_with_shape(
    hp: &HyperParams,
    num_students: usize,
    num_attempts: usize,
    num_materials: Vec<usize>,
    graded: Vec<bool>,
) -> ModelParams {
    let mut rng = ChaCha8Rng::seed_from_u64(hp.seed);
    let mut params = ModelParams::zeros(
        num_students,
        hp.k,
        hp.c,
        num_attempts,
        num_materials,
        graded,
        hp.shared_attempt_bias,
    );
    for s in 0..num_students {
        let row = random_simplex(&mut rng, hp.k);
        params.s[s * hp.k..(s + 1) * hp.k].copy_from_slice(&row);
    }
    for x in params.t.iter_mut() {
        *x = rng.gen::<f64>() * hp.init_t_scale;
    }
    for r in 0..params.num_views() {
        for p in 0..params.num_materials[r] {
            let col = random_simplex(&mut rng, hp.c);
            params.set_q_column(r, p, &col);
        }
    }
    params
}
