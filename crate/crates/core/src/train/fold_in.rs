use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::gradient::{apply_step, batch_gradients, Scope};
use crate::data::InteractionRecord;
use crate::error::{Error, Result};
use crate::model::{HyperParams, ModelParams};

#[derive(Clone, Debug)]
pub struct FoldIn {
    /// Input parameters with one appended `S` row and `b_s` entry per new student.
    pub params: ModelParams,
    /// Row index assigned to each new student, in input order.
    pub rows: Vec<usize>,
}

/// Appends a student with the uniform simplex row and zero bias.
pub fn append_cold_start(params: &mut ModelParams) -> usize {
    let row = params.num_students;
    params.s.extend(std::iter::repeat_n(1.0 / params.k as f64, params.k));
    params.b_s.push(0.0);
    params.num_students += 1;
    row
}

/// Estimates latent rows and biases for unseen students from their prefix records
/// while every shared factor (`T`, `Q`, material/attempt biases, `mu`) stays frozen.
///
/// Each student starts from the cold-start row and runs `hp.fold_in_epochs` SGD
/// passes over its own records; the `student` field of the records is ignored.
pub fn fold_in(params: &ModelParams, prefixes: &[Vec<InteractionRecord>], hp: &HyperParams) -> Result<FoldIn> {
    hp.validate(params.num_views())?;
    if let Some(i) = prefixes.iter().position(|p| p.is_empty()) {
        return Err(Error::ColdStart(i));
    }
    for rec in prefixes.iter().flatten() {
        check_record(params, rec)?;
    }
    let mut out = params.clone();
    let mut rows = Vec::with_capacity(prefixes.len());
    for prefix in prefixes {
        let row = append_cold_start(&mut out);
        let records: Vec<InteractionRecord> =
            prefix.iter().map(|r| InteractionRecord { student: row, ..*r }).collect();
        fit_student(&mut out, &records, hp);
        rows.push(row);
    }
    Ok(FoldIn { params: out, rows })
}

fn fit_student(params: &mut ModelParams, records: &[InteractionRecord], hp: &HyperParams) {
    let mut rng = ChaCha8Rng::seed_from_u64(hp.seed);
    rng.set_stream(2);
    let mut order: Vec<usize> = (0..records.len()).collect();
    for _ in 0..hp.fold_in_epochs {
        order.shuffle(&mut rng);
        for &i in &order {
            student_step(params, &records[i], hp);
        }
    }
}

/// One SGD step on the record's student row and bias only.
pub fn student_step(params: &mut ModelParams, rec: &InteractionRecord, hp: &HyperParams) {
    let g = batch_gradients(params, std::slice::from_ref(rec), hp, Scope::Student);
    apply_step(params, &g, hp.eta, hp.constrain_s);
}

fn check_record(params: &ModelParams, rec: &InteractionRecord) -> Result<()> {
    if rec.view >= params.num_views()
        || rec.material >= params.num_materials[rec.view]
        || rec.attempt >= params.num_attempts
    {
        return Err(Error::Argument(format!(
            "record (attempt {}, view {}, material {}) outside the trained model",
            rec.attempt, rec.view, rec.material
        )));
    }
    Ok(())
}
