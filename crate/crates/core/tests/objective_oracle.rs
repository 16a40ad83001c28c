//! The library objective against an all-loops oracle.

mod common;

use common::{brute_objective, tiny};
use mvkm::model::HyperParams;
use mvkm::synth::{generate, SynthConfig};
use mvkm::train::{objective, objective_records};

const TOL: f64 = 1e-8;

fn close(a: f64, b: f64) -> bool {
    (a - b).abs() <= TOL * a.abs().max(b.abs()).max(1.0)
}

#[test]
fn twenty_random_tiny_instances() {
    for seed in 0..20 {
        let graded: &[bool] = match seed % 3 {
            0 => &[true, false],
            1 => &[true, true],
            _ => &[false, true, false],
        };
        let t = tiny(seed, graded, seed % 2 == 0);
        let got = objective(&t.params, &t.ds, &t.hp);
        let (l1, l2, total) = brute_objective(&t.params, t.ds.records(), &t.hp);
        assert!(close(got.l1, l1), "seed {seed}: l1 {} vs {l1}", got.l1);
        assert!(close(got.l2, l2), "seed {seed}: l2 {} vs {l2}", got.l2);
        assert!(close(got.total, total), "seed {seed}: total {} vs {total}", got.total);
    }
}

#[test]
fn penalty_switch_drops_l2_only() {
    let t = tiny(3, &[true, false], false);
    let on = objective_records(&t.params, t.ds.records(), &t.hp, true);
    let off = objective_records(&t.params, t.ds.records(), &t.hp, false);
    assert_eq!(off.l2, 0.0);
    assert_eq!(off.l1, on.l1);
    assert_eq!(off.total, off.l1);
}

#[test]
fn flat_knowledge_gives_log_half_penalty() {
    // Identical attempt slices make every learning-gain difference zero.
    let mut t = tiny(11, &[true, false], false);
    let a_dim = t.params.num_attempts;
    for i in 0..t.params.t.len() {
        let base = i - i % a_dim;
        t.params.t[i] = t.params.t[base];
    }
    let pairs: usize = t.ds.records().iter().map(|r| r.attempt.min(t.hp.m)).sum();
    let got = objective(&t.params, &t.ds, &t.hp);
    let expected = pairs as f64 * 0.5f64.ln();
    assert!((got.l2 - expected).abs() < 1e-12, "{} vs {expected}", got.l2);
}

#[test]
fn generating_factors_reconstruct_noise_free_data() {
    let cfg = SynthConfig {
        num_students: 30,
        clip_scores: false,
        rescale_unclipped: true,
        view2_graded: true,
        ..SynthConfig::synthetic_g()
    };
    let (ds, truth) = generate(&cfg).unwrap();
    let params = truth.to_params(vec![true, true]);
    let hp = HyperParams { omega: 0.0, lambda_t: 0.0, lambda_s: 0.0, gamma: vec![1.0, 1.0], ..HyperParams::default() };
    let got = objective(&params, &ds, &hp);
    assert!(got.l1 < 1e-20, "residual {}", got.l1);
}
