//! Synthetic two-view datasets drawn from a knowledge-gain/forgetting process.
//!
//! Each student follows a random sequence of materials over both views. Knowledge
//! starts at a random level per concept; at every later attempt the student either
//! gains `beta * q` of the attempted material or, with probability `theta`, forgets a
//! random amount of every concept. The observed value is `k . q` of the attempted
//! material, optionally clipped at 1, and `1.0` for a non-graded second view.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{padded_ids, Dataset, InteractionRecord, ViewSpec};
use crate::error::{Error, Result};
use crate::model::{random_simplex, KnowledgeTensor, ModelParams};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub num_students: usize,
    pub materials_per_view: [usize; 2],
    pub view_names: [String; 2],
    pub num_concepts: usize,
    /// Number of attempts on every student's timeline.
    pub seq_len: usize,
    /// Probability of forgetting at each attempt after the first.
    pub forget_threshold: f64,
    /// Uniform bounds of the per-attempt gain `beta`.
    pub gain_scale: (f64, f64),
    /// Forgetting removes `U(0, forget_magnitude)` from every concept.
    pub forget_magnitude: f64,
    /// Uniform bounds of the initial knowledge in each concept.
    pub init_knowledge: (f64, f64),
    /// Clip graded values above 1 down to 1.
    pub clip_scores: bool,
    /// Without clipping, divide graded values (and the true knowledge) by the largest
    /// graded value when it exceeds 1.
    pub rescale_unclipped: bool,
    pub view2_graded: bool,
    pub seed: u64,
    /// Planted student archetypes, each with its own gain bounds. Students are
    /// assigned uniformly at random; empty means a single population using
    /// `gain_scale`.
    pub archetype_gain_scales: Vec<(f64, f64)>,
    /// When set, material `p` puts this weight on concept `p % C` and spreads the
    /// rest randomly, so materials sharing `p % C` across views are concept twins.
    pub dominant_concept_weight: Option<f64>,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self::synthetic_ng()
    }
}

impl SynthConfig {
    /// Non-graded second view, skewed (clipped) scores.
    pub fn synthetic_ng() -> Self {
        Self {
            num_students: 1000,
            materials_per_view: [10, 15],
            view_names: ["quiz".into(), "discussion".into()],
            num_concepts: 3,
            seq_len: 20,
            forget_threshold: 0.1,
            gain_scale: (0.05, 0.3),
            forget_magnitude: 0.2,
            init_knowledge: (0.0, 0.4),
            clip_scores: true,
            rescale_unclipped: true,
            view2_graded: false,
            seed: 0,
            archetype_gain_scales: Vec::new(),
            dominant_concept_weight: None,
        }
    }

    /// Non-graded second view, unclipped scores rescaled into `[0, 1]`.
    pub fn synthetic_ng2() -> Self {
        Self { clip_scores: false, ..Self::synthetic_ng() }
    }

    /// Both views graded, clipped scores.
    pub fn synthetic_g() -> Self {
        Self {
            view_names: ["quiz".into(), "assignment".into()],
            view2_graded: true,
            ..Self::synthetic_ng()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let err = |m: String| Err(Error::Config(m));
        if self.num_students == 0 || self.num_concepts == 0 || self.seq_len == 0 {
            return err("num_students, num_concepts and seq_len must be >= 1".into());
        }
        if self.materials_per_view.contains(&0) {
            return err("every view needs at least one material".into());
        }
        if self.view_names[0] == self.view_names[1] {
            return err("view names must differ".into());
        }
        if !(0.0..=1.0).contains(&self.forget_threshold) {
            return err(format!("forget_threshold {} not in [0, 1]", self.forget_threshold));
        }
        if !(self.forget_magnitude > 0.0 && self.forget_magnitude.is_finite()) {
            return err("forget_magnitude must be > 0".into());
        }
        let bounds = std::iter::once(("gain_scale", self.gain_scale))
            .chain(std::iter::once(("init_knowledge", self.init_knowledge)))
            .chain(self.archetype_gain_scales.iter().map(|b| ("archetype_gain_scales", *b)));
        for (name, (lo, hi)) in bounds {
            if !(lo.is_finite() && hi.is_finite() && 0.0 <= lo && lo <= hi) {
                return err(format!("{name} bounds ({lo}, {hi}) must satisfy 0 <= low <= high"));
            }
        }
        if let Some(w) = self.dominant_concept_weight {
            if !(0.0..=1.0).contains(&w) {
                return err(format!("dominant_concept_weight {w} not in [0, 1]"));
            }
        }
        Ok(())
    }
}

/// Generating factors, for oracle checks against learned parameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    /// Per view, row-major `C x P` concept maps with columns on the simplex.
    pub q: Vec<Vec<f64>>,
    pub num_concepts: usize,
    pub num_attempts: usize,
    /// Row-major `M x C x A` knowledge levels (after any rescaling).
    pub knowledge: Vec<f64>,
    /// Factor applied to graded values and knowledge (1 unless rescaled).
    pub value_scale: f64,
    /// Planted archetype of each student (empty without archetypes).
    pub archetypes: Vec<usize>,
    /// Per view, dominant concept of each material (empty without planting).
    pub dominant_concepts: Vec<Vec<usize>>,
}

impl GroundTruth {
    pub fn knowledge_tensor(&self) -> KnowledgeTensor {
        KnowledgeTensor {
            num_students: self.knowledge.len() / (self.num_concepts * self.num_attempts).max(1),
            num_concepts: self.num_concepts,
            num_attempts: self.num_attempts,
            data: self.knowledge.clone(),
        }
    }

    /// Exact factorization of the generating process: `S` is the identity (one latent
    /// dimension per student), `T` is the knowledge tensor, `Q` the true concept maps
    /// and every bias is zero.
    pub fn to_params(&self, graded: Vec<bool>) -> ModelParams {
        let kt = self.knowledge_tensor();
        let m = kt.num_students;
        let num_materials = self.q.iter().map(|q| q.len() / self.num_concepts).collect();
        let mut p = ModelParams::zeros(m, m, self.num_concepts, self.num_attempts, num_materials, graded, false);
        for s in 0..m {
            p.s[s * m + s] = 1.0;
        }
        p.t.copy_from_slice(&self.knowledge);
        p.q = self.q.clone();
        p
    }
}

struct StudentTrace {
    archetype: usize,
    /// `(view, material, value)` per attempt.
    steps: Vec<(usize, usize, f64)>,
    /// Row-major `C x A`.
    knowledge: Vec<f64>,
}

pub fn generate(cfg: &SynthConfig) -> Result<(Dataset, GroundTruth)> {
    cfg.validate()?;
    let c_dim = cfg.num_concepts;
    let [p1, p2] = cfg.materials_per_view;

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut dominant: Vec<Vec<usize>> = Vec::new();
    let q: Vec<Vec<f64>> = [p1, p2]
        .iter()
        .map(|&p_dim| {
            let mut q = vec![0.0; c_dim * p_dim];
            let mut dom = Vec::new();
            for p in 0..p_dim {
                let col = match cfg.dominant_concept_weight {
                    Some(w) => {
                        let d = p % c_dim;
                        dom.push(d);
                        planted_column(&mut rng, c_dim, d, w)
                    }
                    None => random_simplex(&mut rng, c_dim),
                };
                for (c, v) in col.into_iter().enumerate() {
                    q[c * p_dim + p] = v;
                }
            }
            if cfg.dominant_concept_weight.is_some() {
                dominant.push(dom);
            }
            q
        })
        .collect();

    let traces: Vec<StudentTrace> = (0..cfg.num_students)
        .into_par_iter()
        .map(|s| simulate_student(cfg, &q, s))
        .collect();

    let graded = [true, cfg.view2_graded];
    let mut value_scale = 1.0;
    if !cfg.clip_scores && cfg.rescale_unclipped {
        let max = traces
            .iter()
            .flat_map(|t| t.steps.iter())
            .filter(|(r, _, _)| graded[*r])
            .map(|(_, _, v)| *v)
            .fold(0.0, f64::max);
        if max > 1.0 {
            value_scale = 1.0 / max;
        }
    }

    let a_dim = cfg.seq_len;
    let mut records = Vec::with_capacity(cfg.num_students * a_dim);
    let mut knowledge = Vec::with_capacity(cfg.num_students * c_dim * a_dim);
    for (s, trace) in traces.iter().enumerate() {
        for (a, &(view, material, raw)) in trace.steps.iter().enumerate() {
            let value = if !graded[view] {
                1.0
            } else if cfg.clip_scores {
                raw.min(1.0)
            } else {
                raw * value_scale
            };
            records.push(InteractionRecord { student: s, attempt: a, view, material, value });
        }
        knowledge.extend(trace.knowledge.iter().map(|k| k * value_scale));
    }

    let views = (0..2)
        .map(|r| ViewSpec {
            view_id: r,
            name: cfg.view_names[r].clone(),
            graded: graded[r],
            num_materials: cfg.materials_per_view[r],
        })
        .collect();
    let material_ids = (0..2)
        .map(|r| padded_ids(&cfg.view_names[r], cfg.materials_per_view[r]))
        .collect();
    let ds = Dataset::new(views, records, padded_ids("s", cfg.num_students), material_ids)?;
    let truth = GroundTruth {
        q,
        num_concepts: c_dim,
        num_attempts: a_dim,
        knowledge,
        value_scale,
        archetypes: if cfg.archetype_gain_scales.is_empty() {
            Vec::new()
        } else {
            traces.iter().map(|t| t.archetype).collect()
        },
        dominant_concepts: dominant,
    };
    Ok((ds, truth))
}

fn planted_column<R: Rng>(rng: &mut R, c_dim: usize, dominant: usize, weight: f64) -> Vec<f64> {
    if c_dim == 1 {
        return vec![1.0];
    }
    let rest = random_simplex(rng, c_dim - 1);
    let mut col = Vec::with_capacity(c_dim);
    let mut it = rest.into_iter();
    for c in 0..c_dim {
        col.push(if c == dominant { weight } else { (1.0 - weight) * it.next().unwrap_or(0.0) });
    }
    col
}

fn uniform<R: Rng>(rng: &mut R, (lo, hi): (f64, f64)) -> f64 {
    lo + (hi - lo) * rng.gen::<f64>()
}

fn simulate_student(cfg: &SynthConfig, q: &[Vec<f64>], s: usize) -> StudentTrace {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(s as u64 + 1);
    let c_dim = cfg.num_concepts;
    let [p1, p2] = cfg.materials_per_view;
    let (archetype, gain) = if cfg.archetype_gain_scales.is_empty() {
        (0, cfg.gain_scale)
    } else {
        let i = rng.gen_range(0..cfg.archetype_gain_scales.len());
        (i, cfg.archetype_gain_scales[i])
    };

    let column = |r: usize, p: usize| -> Vec<f64> {
        let p_dim = cfg.materials_per_view[r];
        (0..c_dim).map(|c| q[r][c * p_dim + p]).collect()
    };

    let mut k: Vec<f64> = (0..c_dim).map(|_| uniform(&mut rng, cfg.init_knowledge)).collect();
    let mut steps = Vec::with_capacity(cfg.seq_len);
    let mut knowledge = vec![0.0; c_dim * cfg.seq_len];
    for a in 0..cfg.seq_len {
        let pick = rng.gen_range(0..p1 + p2);
        let (view, material) = if pick < p1 { (0, pick) } else { (1, pick - p1) };
        let col = column(view, material);
        if a > 0 {
            let alpha: f64 = rng.gen();
            if alpha >= cfg.forget_threshold {
                let beta = uniform(&mut rng, gain);
                for (kc, qc) in k.iter_mut().zip(&col) {
                    *kc += beta * qc;
                }
            } else {
                for kc in k.iter_mut() {
                    *kc = (*kc - uniform(&mut rng, (0.0, cfg.forget_magnitude))).max(0.0);
                }
            }
        }
        for c in 0..c_dim {
            knowledge[c * cfg.seq_len + a] = k[c];
        }
        let value: f64 = k.iter().zip(&col).map(|(x, y)| x * y).sum();
        steps.push((view, material, value));
    }
    StudentTrace { archetype, steps, knowledge }
}
