//! Knowledge curves, spectral clustering of students and materials, and the
//! correlation between learned material bias and observed difficulty.

mod cluster;

use std::fs::File;
use std::io::BufWriter;
use std::path::Path;

use serde::{Deserialize, Serialize};

pub use cluster::{
    best_match_agreement, material_clusters, spectral_cluster, student_clusters, ClusterAssignment, EIGEN_TOL,
    KMEANS_MAX_ITER, KMEANS_RESTARTS,
};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::model::ModelParams;

/// Mean knowledge per selected concept and attempt.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CurveTable {
    pub concepts: Vec<usize>,
    pub num_students: usize,
    /// `values[i][a]` is the mean knowledge in `concepts[i]` at attempt `a`.
    pub values: Vec<Vec<f64>>,
}

impl CurveTable {
    /// Share of consecutive attempt pairs where the curve of `concepts[i]` does not
    /// decrease.
    pub fn nondecreasing_fraction(&self, i: usize) -> f64 {
        let v = &self.values[i];
        if v.len() < 2 {
            return 1.0;
        }
        let ok = v.windows(2).filter(|w| w[1] >= w[0]).count();
        ok as f64 / (v.len() - 1) as f64
    }

    /// Long format: `concept,attempt,knowledge`.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut rows = Vec::new();
        for (i, &c) in self.concepts.iter().enumerate() {
            for (a, v) in self.values[i].iter().enumerate() {
                rows.push(vec![c.to_string(), a.to_string(), v.to_string()]);
            }
        }
        write_csv(path, &["concept", "attempt", "knowledge"], rows)
    }
}

/// Averages `K[s, c, :]` over `students` for every concept in `concepts`.
pub fn knowledge_curves(params: &ModelParams, concepts: &[usize], students: &[usize]) -> Result<CurveTable> {
    if concepts.is_empty() || students.is_empty() {
        return Err(Error::Argument("empty concept or student selection".into()));
    }
    if let Some(c) = concepts.iter().find(|&&c| c >= params.c) {
        return Err(Error::Argument(format!("concept {c} out of range")));
    }
    if let Some(s) = students.iter().find(|&&s| s >= params.num_students) {
        return Err(Error::Argument(format!("student {s} out of range")));
    }
    // Averaging the student rows first gives the same curve as averaging K, since
    // K is linear in S.
    let n = students.len() as f64;
    let mut mean_row = vec![0.0; params.k];
    for &s in students {
        for (m, w) in mean_row.iter_mut().zip(params.student_row(s)) {
            *m += w / n;
        }
    }
    let values = concepts
        .iter()
        .map(|&c| {
            (0..params.num_attempts)
                .map(|a| (0..params.k).map(|k| mean_row[k] * params.t[params.t_idx(k, c, a)]).sum())
                .collect()
        })
        .collect();
    Ok(CurveTable { concepts: concepts.to_vec(), num_students: students.len(), values })
}

fn average_ranks(xs: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..xs.len()).collect();
    order.sort_by(|&a, &b| xs[a].total_cmp(&xs[b]));
    let mut ranks = vec![0.0; xs.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && xs[order[j + 1]] == xs[order[i]] {
            j += 1;
        }
        let rank = (i + j) as f64 / 2.0 + 1.0;
        for &o in &order[i..=j] {
            ranks[o] = rank;
        }
        i = j + 1;
    }
    ranks
}

/// Spearman rank correlation with average ranks for ties.
pub fn spearman(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() {
        return Err(Error::Argument(format!("length mismatch: {} vs {}", x.len(), y.len())));
    }
    if x.len() < 3 {
        return Err(Error::Argument(format!("need at least 3 pairs, got {}", x.len())));
    }
    if x.iter().chain(y).any(|v| v.is_nan()) {
        return Err(Error::Argument("NaN in rank correlation input".into()));
    }
    let (rx, ry) = (average_ranks(x), average_ranks(y));
    let n = x.len() as f64;
    let mx = rx.iter().sum::<f64>() / n;
    let my = ry.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in rx.iter().zip(&ry) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::Degenerate("rank correlation of a constant sequence".into()));
    }
    Ok((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
}

/// Mean observed value of each material in `view`, `None` when unobserved.
pub fn material_mean_scores(ds: &Dataset, view: usize) -> Result<Vec<Option<f64>>> {
    if view >= ds.num_views() {
        return Err(Error::Argument(format!("view {view} out of range")));
    }
    let p_dim = ds.view(view).num_materials;
    let mut acc = vec![(0.0, 0usize); p_dim];
    for r in ds.records().iter().filter(|r| r.view == view) {
        acc[r.material].0 += r.value;
        acc[r.material].1 += 1;
    }
    Ok(acc.into_iter().map(|(s, n)| (n > 0).then(|| s / n as f64)).collect())
}

/// Spearman correlation between the learned bias `b_p` of the graded `view` and each
/// observed material's mean score.
pub fn bias_score_correlation(params: &ModelParams, ds: &Dataset, view: usize) -> Result<f64> {
    if view >= ds.num_views() || !ds.view(view).graded {
        return Err(Error::Argument(format!("view {view} is not a graded view")));
    }
    if params.num_materials.get(view) != Some(&ds.view(view).num_materials) {
        return Err(Error::Argument("model and dataset disagree on material count".into()));
    }
    let (bias, mean): (Vec<f64>, Vec<f64>) = material_mean_scores(ds, view)?
        .into_iter()
        .enumerate()
        .filter_map(|(p, m)| m.map(|m| (params.b_p[view][p], m)))
        .unzip();
    if bias.len() < 3 {
        return Err(Error::Argument(format!("only {} observed materials in view {view}", bias.len())));
    }
    spearman(&bias, &mean)
}

/// Size and mean score of one cluster.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClusterScore {
    pub cluster: usize,
    pub size: usize,
    pub observations: usize,
    pub mean_score: Option<f64>,
}

/// Mean graded score of the students in each cluster, for judging how many clusters
/// are worth keeping. `assignment` must label the dataset's students in order.
pub fn student_cluster_scores(assignment: &ClusterAssignment, ds: &Dataset, view: usize) -> Result<Vec<ClusterScore>> {
    if assignment.labels.len() != ds.num_students() {
        return Err(Error::Argument("assignment does not cover the dataset's students".into()));
    }
    let mut acc = vec![(0usize, 0.0, 0usize); assignment.num_clusters];
    for (s, &l) in assignment.labels.iter().enumerate() {
        acc[l].0 += 1;
        for r in ds.student_records(s).iter().filter(|r| r.view == view) {
            acc[l].1 += r.value;
            acc[l].2 += 1;
        }
    }
    Ok(score_rows(acc))
}

/// Mean score of the materials in each cluster, pooled over their observations.
/// Items must be named `view:material` as produced by [`material_clusters`].
pub fn material_cluster_scores(assignment: &ClusterAssignment, ds: &Dataset) -> Result<Vec<ClusterScore>> {
    let mut acc = vec![(0usize, 0.0, 0usize); assignment.num_clusters];
    let mut lookup = std::collections::HashMap::new();
    for (item, &l) in assignment.items.iter().zip(&assignment.labels) {
        let (r, p) = item
            .split_once(':')
            .and_then(|(r, p)| Some((r.parse::<usize>().ok()?, p.parse::<usize>().ok()?)))
            .ok_or_else(|| Error::Argument(format!("item {item:?} is not view:material")))?;
        acc[l].0 += 1;
        lookup.insert((r, p), l);
    }
    for rec in ds.records() {
        if !ds.view(rec.view).graded {
            continue;
        }
        if let Some(&l) = lookup.get(&(rec.view, rec.material)) {
            acc[l].1 += rec.value;
            acc[l].2 += 1;
        }
    }
    Ok(score_rows(acc))
}

fn score_rows(acc: Vec<(usize, f64, usize)>) -> Vec<ClusterScore> {
    acc.into_iter()
        .enumerate()
        .map(|(cluster, (size, sum, n))| ClusterScore {
            cluster,
            size,
            observations: n,
            mean_score: (n > 0).then(|| sum / n as f64),
        })
        .collect()
}

pub fn write_cluster_csv(assignment: &ClusterAssignment, path: &Path) -> Result<()> {
    let rows = assignment
        .items
        .iter()
        .zip(&assignment.labels)
        .map(|(i, l)| vec![i.clone(), l.to_string()])
        .collect();
    write_csv(path, &["item", "cluster"], rows)
}

pub fn write_cluster_scores_csv(scores: &[ClusterScore], path: &Path) -> Result<()> {
    let rows = scores
        .iter()
        .map(|s| {
            vec![
                s.cluster.to_string(),
                s.size.to_string(),
                s.observations.to_string(),
                s.mean_score.map_or_else(String::new, |m| m.to_string()),
            ]
        })
        .collect();
    write_csv(path, &["cluster", "size", "observations", "mean_score"], rows)
}

pub(crate) fn write_csv(path: &Path, header: &[&str], rows: Vec<Vec<String>>) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = csv::Writer::from_writer(BufWriter::new(file));
    let io_err = |e: csv::Error| Error::io(path, std::io::Error::other(e));
    w.write_record(header).map_err(io_err)?;
    for row in rows {
        w.write_record(&row).map_err(io_err)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{init_params, HyperParams};
    use crate::synth::{generate, SynthConfig};
    use proptest::prelude::*;

    fn trained_like() -> ModelParams {
        let cfg = SynthConfig { num_students: 6, seq_len: 5, ..SynthConfig::synthetic_ng() };
        let (ds, _) = generate(&cfg).unwrap();
        init_params(&HyperParams { k: 2, c: 3, ..Default::default() }, &ds)
    }

    #[test]
    fn single_student_curve_is_verbatim() {
        let p = trained_like();
        let kt = p.knowledge();
        let t = knowledge_curves(&p, &[1], &[4]).unwrap();
        for (a, v) in t.values[0].iter().enumerate() {
            assert!((v - kt.get(4, 1, a)).abs() < 1e-15);
        }
    }

    #[test]
    fn mean_curve_matches_average_of_student_curves() {
        let p = trained_like();
        let kt = p.knowledge();
        let students = [0, 2, 3, 5];
        let t = knowledge_curves(&p, &[0, 1, 2], &students).unwrap();
        for (i, c) in [0, 1, 2].into_iter().enumerate() {
            for a in 0..p.num_attempts {
                let brute = students.iter().map(|&s| kt.get(s, c, a)).sum::<f64>() / students.len() as f64;
                assert!((t.values[i][a] - brute).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn curve_selection_errors() {
        let p = trained_like();
        assert!(knowledge_curves(&p, &[], &[0]).is_err());
        assert!(knowledge_curves(&p, &[0], &[]).is_err());
        assert!(knowledge_curves(&p, &[3], &[0]).is_err());
        assert!(knowledge_curves(&p, &[0], &[6]).is_err());
    }

    #[test]
    fn nondecreasing_fraction_counts_steps() {
        let t = CurveTable { concepts: vec![0], num_students: 1, values: vec![vec![0.0, 1.0, 0.5, 0.5, 2.0]] };
        assert_eq!(t.nondecreasing_fraction(0), 0.75);
    }

    #[test]
    fn spearman_extremes() {
        let x = [0.1, 0.4, 0.2, 0.9];
        let y = [1.0, 3.0, 2.0, 7.0];
        assert!((spearman(&x, &y).unwrap() - 1.0).abs() < 1e-12);
        let neg: Vec<f64> = y.iter().map(|v| -v).collect();
        assert!((spearman(&x, &neg).unwrap() + 1.0).abs() < 1e-12);
        assert!(spearman(&x[..2], &y[..2]).is_err());
        assert!(matches!(spearman(&[1.0; 4], &y), Err(Error::Degenerate(_))));
    }

    #[test]
    fn spearman_ties_use_average_ranks() {
        assert_eq!(average_ranks(&[3.0, 1.0, 3.0, 2.0]), vec![3.5, 1.0, 3.5, 2.0]);
        // Pearson on average ranks (1, 2.5, 2.5, 4) vs (1, 2, 3, 4).
        let rho = spearman(&[1.0, 2.0, 2.0, 3.0], &[1.0, 2.0, 3.0, 4.0]).unwrap();
        let rx = [1.0, 2.5, 2.5, 4.0];
        let ry = [1.0, 2.0, 3.0, 4.0];
        let (mx, my) = (2.5, 2.5);
        let sxy: f64 = rx.iter().zip(&ry).map(|(a, b)| (a - mx) * (b - my)).sum();
        let sxx: f64 = rx.iter().map(|a| (a - mx) * (a - mx)).sum();
        let syy: f64 = ry.iter().map(|b| (b - my) * (b - my)).sum();
        assert!((rho - sxy / (sxx * syy).sqrt()).abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn spearman_bounded_and_rank_invariant(
            pairs in prop::collection::vec((-5.0..5.0f64, -5.0..5.0f64), 3..30),
        ) {
            let (x, y): (Vec<f64>, Vec<f64>) = pairs.into_iter().unzip();
            if let Ok(rho) = spearman(&x, &y) {
                prop_assert!((-1.0..=1.0).contains(&rho));
                let tx: Vec<f64> = x.iter().map(|v| v.exp()).collect();
                let ty: Vec<f64> = y.iter().map(|v| v * v * v + 2.0 * v).collect();
                prop_assert!((spearman(&tx, &ty).unwrap() - rho).abs() < 1e-12);
            }
        }
    }
}
