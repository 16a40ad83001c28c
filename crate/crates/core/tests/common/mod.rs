//! Shared builders and brute-force oracles for the integration tests.
#![allow(dead_code)]

use mvkm::data::{Dataset, InteractionRecord, ViewSpec};
use mvkm::model::{HyperParams, ModelParams};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// A random tiny problem: dataset, parameters (not necessarily feasible) and
/// hyperparameters with every objective term switched on.
pub struct Tiny {
    pub ds: Dataset,
    pub params: ModelParams,
    pub hp: HyperParams,
}

/// Builds an instance with `M, A <= 5` and `K, C <= 3`.
///
/// Every student has attempts `0..len` with `len >= 1`, and student 0 reaches the
/// last attempt, so each attempt slice of `T` and each row of `S` is touched by
/// some record.
pub fn tiny(seed: u64, graded: &[bool], shared_attempt_bias: bool) -> Tiny {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let m = rng.gen_range(1..=5);
    let a_dim = rng.gen_range(1..=5);
    let k = rng.gen_range(1..=3);
    let c = rng.gen_range(1..=3);
    let views: Vec<ViewSpec> = graded
        .iter()
        .enumerate()
        .map(|(r, &g)| ViewSpec {
            view_id: r,
            name: format!("v{r}"),
            graded: g,
            num_materials: rng.gen_range(1..=3),
        })
        .collect();
    let mut records = Vec::new();
    for s in 0..m {
        let len = if s == 0 { a_dim } else { rng.gen_range(1..=a_dim) };
        for a in 0..len {
            let r = rng.gen_range(0..views.len());
            let p = rng.gen_range(0..views[r].num_materials);
            let value = if views[r].graded {
                rng.gen::<f64>()
            } else {
                1.0
            };
            records.push(InteractionRecord { student: s, attempt: a, view: r, material: p, value });
        }
    }
    let ds = Dataset::with_generated_ids(views, records, m).expect("valid tiny dataset");

    let mut params = ModelParams::zeros(
        m,
        k,
        c,
        a_dim,
        ds.num_materials(),
        graded.to_vec(),
        shared_attempt_bias,
    );
    let mut fill = |xs: &mut [f64], lo: f64, hi: f64| xs.iter_mut().for_each(|x| *x = rng.gen_range(lo..hi));
    fill(&mut params.s, 0.0, 1.0);
    fill(&mut params.t, -0.5, 1.0);
    params.q.iter_mut().for_each(|q| fill(q, 0.0, 1.0));
    fill(&mut params.b_s, -0.3, 0.3);
    params.b_p.iter_mut().for_each(|b| fill(b, -0.3, 0.3));
    params.b_a.iter_mut().for_each(|b| fill(b, -0.3, 0.3));
    let mut mu = [0.0];
    fill(&mut mu, -0.5, 0.5);
    params.mu = mu[0];

    let hp = HyperParams {
        k,
        c,
        omega: rng.gen_range(0.05..0.5),
        gamma: (0..graded.len()).map(|_| rng.gen_range(0.1..1.0)).collect(),
        m: rng.gen_range(1..=3),
        lambda_t: rng.gen_range(0.001..0.1),
        lambda_s: rng.gen_range(0.001..0.1),
        ..HyperParams::default()
    };
    Tiny { ds, params, hp }
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// `s_s . T_a . q_p` as an explicit double sum.
pub fn brute_trilinear(p: &ModelParams, s: usize, a: usize, mat: usize, r: usize) -> f64 {
    let mut acc = 0.0;
    for k in 0..p.k {
        for c in 0..p.c {
            let s_sk = p.s[s * p.k + k];
            let t_kca = p.t[(k * p.c + c) * p.num_attempts + a];
            let q_cp = p.q[r][c * p.num_materials[r] + mat];
            acc += s_sk * t_kca * q_cp;
        }
    }
    acc
}

pub fn brute_predict(p: &ModelParams, rec: &InteractionRecord) -> f64 {
    let bias_view = if p.shared_attempt_bias { 0 } else { rec.view };
    let z = brute_trilinear(p, rec.student, rec.attempt, rec.material, rec.view)
        + p.b_s[rec.student]
        + p.b_p[rec.view][rec.material]
        + p.b_a[bias_view][rec.attempt];
    if p.graded[rec.view] {
        z
    } else {
        sigmoid(z + p.mu)
    }
}

/// `(l1, l2)` where the regularizers cover the attempts and students listed.
pub fn brute_terms(
    p: &ModelParams,
    records: &[InteractionRecord],
    hp: &HyperParams,
    reg_attempts: &[usize],
    reg_students: &[usize],
) -> (f64, f64) {
    let mut l1 = 0.0;
    let mut l2 = 0.0;
    for rec in records {
        let d = brute_predict(p, rec) - rec.value;
        l1 += hp.gamma[rec.view] * d * d;
        let now = brute_trilinear(p, rec.student, rec.attempt, rec.material, rec.view);
        let first = rec.attempt.saturating_sub(hp.m);
        for j in first..rec.attempt {
            let before = brute_trilinear(p, rec.student, j, rec.material, rec.view);
            l2 += sigmoid(now - before).ln();
        }
    }
    for &a in reg_attempts {
        for k in 0..p.k {
            for c in 0..p.c {
                let x = p.t[(k * p.c + c) * p.num_attempts + a];
                l1 += hp.lambda_t * x * x;
            }
        }
    }
    for &s in reg_students {
        for k in 0..p.k {
            let x = p.s[s * p.k + k];
            l1 += hp.lambda_s * x * x;
        }
    }
    (l1, l2)
}

/// Brute-force full objective `l1 - omega * l2`.
pub fn brute_objective(p: &ModelParams, records: &[InteractionRecord], hp: &HyperParams) -> (f64, f64, f64) {
    let attempts: Vec<usize> = (0..p.num_attempts).collect();
    let students: Vec<usize> = (0..p.num_students).collect();
    let (l1, l2) = brute_terms(p, records, hp, &attempts, &students);
    (l1, l2, l1 - hp.omega * l2)
}

/// Mutable views of every scalar parameter, block by block.
pub fn coords_mut(p: &mut ModelParams) -> Vec<&mut f64> {
    let mut out: Vec<&mut f64> = Vec::new();
    out.extend(p.s.iter_mut());
    out.extend(p.t.iter_mut());
    for q in p.q.iter_mut() {
        out.extend(q.iter_mut());
    }
    out.extend(p.b_s.iter_mut());
    for b in p.b_p.iter_mut() {
        out.extend(b.iter_mut());
    }
    for b in p.b_a.iter_mut() {
        out.extend(b.iter_mut());
    }
    out.push(&mut p.mu);
    out
}

pub fn flatten(p: &ModelParams) -> Vec<f64> {
    let mut c = p.clone();
    coords_mut(&mut c).into_iter().map(|x| *x).collect()
}

/// Graded-view RMSE of the raw predictions on `records`.
pub fn graded_rmse(p: &ModelParams, records: &[InteractionRecord]) -> f64 {
    let graded: Vec<&InteractionRecord> = records.iter().filter(|r| p.graded[r.view]).collect();
    let sse: f64 = graded.iter().map(|r| (p.predict_record(r) - r.value).powi(2)).sum();
    (sse / graded.len() as f64).sqrt()
}

/// Largest departure from the probability simplex over the rows of `S` (when
/// `check_s`) and the columns of every `Q`.
pub fn simplex_violation(p: &ModelParams, check_s: bool) -> f64 {
    let mut worst: f64 = 0.0;
    let mut check = |xs: &[f64]| {
        let min = xs.iter().cloned().fold(f64::INFINITY, f64::min);
        let sum: f64 = xs.iter().sum();
        worst = worst.max((-min).max(0.0)).max((sum - 1.0).abs());
    };
    if check_s {
        for s in 0..p.num_students {
            check(&p.s[s * p.k..(s + 1) * p.k]);
        }
    }
    for r in 0..p.num_views() {
        for mat in 0..p.num_materials[r] {
            let col: Vec<f64> = (0..p.c).map(|c| p.q[r][c * p.num_materials[r] + mat]).collect();
            check(&col);
        }
    }
    worst
}
