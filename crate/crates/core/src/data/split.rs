use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{Dataset, InteractionRecord};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FoldSplit {
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

/// Partitions students into `folds` test sets of near-equal size (±1).
///
/// Students are shuffled under `seed` and dealt round-robin; both sides of each
/// split are returned in ascending order.
pub fn split_student_stratified(ds: &Dataset, folds: usize, seed: u64) -> Result<Vec<FoldSplit>> {
    split_indices(ds.num_students(), folds, seed)
}

pub(crate) fn split_indices(n: usize, folds: usize, seed: u64) -> Result<Vec<FoldSplit>> {
    if folds < 2 {
        return Err(Error::Argument(format!("need at least 2 folds, got {folds}")));
    }
    if folds > n {
        return Err(Error::Argument(format!("{folds} folds requested for {n} students")));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut tests = vec![Vec::with_capacity(n / folds + 1); folds];
    for (i, s) in order.into_iter().enumerate() {
        tests[i % folds].push(s);
    }
    Ok(tests
        .into_iter()
        .map(|mut test| {
            test.sort_unstable();
            let mut in_test = vec![false; n];
            test.iter().for_each(|&s| in_test[s] = true);
            let train = (0..n).filter(|&s| !in_test[s]).collect();
            FoldSplit { train, test }
        })
        .collect())
}

#[derive(Clone, Debug, PartialEq)]
pub struct PrefixSuffix {
    pub prefix: Vec<InteractionRecord>,
    pub suffix: Vec<InteractionRecord>,
    /// Attempt index of the last graded record kept in the prefix.
    pub split_attempt: usize,
}

/// Splits one student's timeline after the first `ceil(fraction * n)` graded
/// records of `graded_view`. Records of every view land on the side of the
/// timeline they occupy relative to that split attempt.
pub fn split_prefix_suffix(
    ds: &Dataset,
    student: usize,
    graded_view: usize,
    fraction: f64,
) -> Result<PrefixSuffix> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(Error::Argument(format!("fraction {fraction} not in (0, 1)")));
    }
    if student >= ds.num_students() {
        return Err(Error::Argument(format!("student index {student} out of range")));
    }
    let records = ds.student_records(student);
    let graded: Vec<usize> = records
        .iter()
        .filter(|r| r.view == graded_view)
        .map(|r| r.attempt)
        .collect();
    if graded.is_empty() {
        return Err(Error::EmptySequence { student, view: graded_view });
    }
    let keep = prefix_len(graded.len(), fraction);
    let split_attempt = graded[keep - 1];
    let (prefix, suffix) = records.iter().partition(|r| r.attempt <= split_attempt);
    Ok(PrefixSuffix { prefix, suffix, split_attempt })
}

/// `ceil(fraction * n)`, clamped to `[1, n]`. A small slack absorbs products such
/// as `0.3 * 10` landing just above an integer.
pub(crate) fn prefix_len(n: usize, fraction: f64) -> usize {
    let raw = (fraction * n as f64 - 1e-9).ceil();
    (raw.max(1.0) as usize).min(n)
}
