//! Multi-view interaction data.
//!
//! Every student has a single attempt timeline shared by all views: at most one
//! interaction occupies a given `(student, attempt)` slot. Graded views carry
//! scores normalized to `[0, 1]`; non-graded views carry the presence value `1.0`.

mod io;
mod split;

pub use io::{load_dataset, save_dataset, DatasetSchema, Format, LoadOptions, ViewSchema};
pub(crate) use io::write_json as write_json_file;
pub(crate) use split::split_indices;
pub use split::{split_prefix_suffix, split_student_stratified, FoldSplit, PrefixSuffix};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ViewSpec {
    pub view_id: usize,
    pub name: String,
    pub graded: bool,
    pub num_materials: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct InteractionRecord {
    pub student: usize,
    pub attempt: usize,
    pub view: usize,
    pub material: usize,
    pub value: f64,
}

/// Indexed, validated collection of interaction records.
///
/// Records are kept sorted by `(student, attempt)`; `student_records` slices into
/// them without copying.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    views: Vec<ViewSpec>,
    records: Vec<InteractionRecord>,
    num_students: usize,
    max_attempts: usize,
    student_ids: Vec<String>,
    material_ids: Vec<Vec<String>>,
    offsets: Vec<usize>,
}

impl Dataset {
    /// Builds a dataset from dense records and id registries.
    ///
    /// `views[r].view_id` must equal `r` and `material_ids[r]` must list exactly
    /// `views[r].num_materials` unique ids.
    pub fn new(
        views: Vec<ViewSpec>,
        mut records: Vec<InteractionRecord>,
        student_ids: Vec<String>,
        material_ids: Vec<Vec<String>>,
    ) -> Result<Self> {
        validate_registry(&views, &student_ids, &material_ids)?;
        let num_students = student_ids.len();
        for rec in &records {
            validate_record(rec, &views, num_students)?;
        }
        records.sort_by_key(|r| (r.student, r.attempt));
        if let Some(w) = records
            .windows(2)
            .find(|w| w[0].student == w[1].student && w[0].attempt == w[1].attempt)
        {
            return Err(Error::Integrity(format!(
                "duplicate interaction for student {:?} at attempt {}",
                student_ids[w[0].student], w[0].attempt
            )));
        }
        let max_attempts = records.iter().map(|r| r.attempt + 1).max().unwrap_or(0);
        let offsets = student_offsets(&records, num_students);
        Ok(Self {
            views,
            records,
            num_students,
            max_attempts,
            student_ids,
            material_ids,
            offsets,
        })
    }

    /// Convenience constructor that synthesizes zero-padded ids (`s000`, `quiz00`, ...)
    /// so that lexical order matches index order.
    pub fn with_generated_ids(
        views: Vec<ViewSpec>,
        records: Vec<InteractionRecord>,
        num_students: usize,
    ) -> Result<Self> {
        let student_ids = padded_ids("s", num_students);
        let material_ids = views
            .iter()
            .map(|v| padded_ids(&v.name, v.num_materials))
            .collect();
        Self::new(views, records, student_ids, material_ids)
    }

    pub fn views(&self) -> &[ViewSpec] {
        &self.views
    }

    pub fn view(&self, r: usize) -> &ViewSpec {
        &self.views[r]
    }

    pub fn num_views(&self) -> usize {
        self.views.len()
    }

    pub fn records(&self) -> &[InteractionRecord] {
        &self.records
    }

    pub fn num_students(&self) -> usize {
        self.num_students
    }

    /// Length of the shared attempt axis.
    ///
    /// Equal to one past the largest attempt index for loaded data; datasets produced
    /// by [`Dataset::restrict_students`] keep the parent's axis length.
    pub fn max_attempts(&self) -> usize {
        self.max_attempts
    }

    pub fn num_materials(&self) -> Vec<usize> {
        self.views.iter().map(|v| v.num_materials).collect()
    }

    pub fn student_ids(&self) -> &[String] {
        &self.student_ids
    }

    pub fn material_ids(&self, r: usize) -> &[String] {
        &self.material_ids[r]
    }

    pub fn student_records(&self, s: usize) -> &[InteractionRecord] {
        &self.records[self.offsets[s]..self.offsets[s + 1]]
    }

    /// First graded view, the default prediction target.
    pub fn primary_graded_view(&self) -> Option<usize> {
        self.views.iter().position(|v| v.graded)
    }

    /// Sub-dataset over `students` (re-indexed in the given order), keeping the view
    /// and material registries and the parent's attempt axis.
    pub fn restrict_students(&self, students: &[usize]) -> Result<Self> {
        let mut records = Vec::new();
        let mut ids = Vec::with_capacity(students.len());
        for (new_s, &s) in students.iter().enumerate() {
            if s >= self.num_students {
                return Err(Error::Argument(format!("student index {s} out of range")));
            }
            ids.push(self.student_ids[s].clone());
            records.extend(self.student_records(s).iter().map(|r| InteractionRecord {
                student: new_s,
                ..*r
            }));
        }
        let mut sub = Self::new(self.views.clone(), records, ids, self.material_ids.clone())?;
        sub.max_attempts = self.max_attempts;
        Ok(sub)
    }

    /// Mean value of graded records in view `r`.
    pub fn mean_value(&self, r: usize) -> Option<f64> {
        let (sum, n) = self
            .records
            .iter()
            .filter(|rec| rec.view == r)
            .fold((0.0, 0usize), |(s, n), rec| (s + rec.value, n + 1));
        (n > 0).then(|| sum / n as f64)
    }
}

pub(crate) fn padded_ids(prefix: &str, n: usize) -> Vec<String> {
    let width = n.saturating_sub(1).to_string().len();
    (0..n).map(|i| format!("{prefix}{i:0width$}")).collect()
}

fn student_offsets(records: &[InteractionRecord], num_students: usize) -> Vec<usize> {
    let mut offsets = vec![0; num_students + 1];
    for rec in records {
        offsets[rec.student + 1] += 1;
    }
    for s in 0..num_students {
        offsets[s + 1] += offsets[s];
    }
    offsets
}

fn validate_registry(
    views: &[ViewSpec],
    student_ids: &[String],
    material_ids: &[Vec<String>],
) -> Result<()> {
    if material_ids.len() != views.len() {
        return Err(Error::Integrity(format!(
            "{} views but {} material registries",
            views.len(),
            material_ids.len()
        )));
    }
    for (r, view) in views.iter().enumerate() {
        if view.view_id != r {
            return Err(Error::Integrity(format!(
                "view {:?} has id {} at position {r}",
                view.name, view.view_id
            )));
        }
        if view.num_materials == 0 {
            return Err(Error::Integrity(format!("view {:?} has no materials", view.name)));
        }
        if material_ids[r].len() != view.num_materials {
            return Err(Error::Integrity(format!(
                "view {:?} declares {} materials but registry has {}",
                view.name,
                view.num_materials,
                material_ids[r].len()
            )));
        }
        ensure_unique(&material_ids[r], "material")?;
    }
    let mut names: Vec<&String> = views.iter().map(|v| &v.name).collect();
    names.sort();
    if names.windows(2).any(|w| w[0] == w[1]) {
        return Err(Error::Integrity("duplicate view name".into()));
    }
    ensure_unique(student_ids, "student")
}

fn ensure_unique(ids: &[String], what: &str) -> Result<()> {
    let mut sorted: Vec<&String> = ids.iter().collect();
    sorted.sort();
    match sorted.windows(2).find(|w| w[0] == w[1]) {
        Some(w) => Err(Error::Integrity(format!("duplicate {what} id {:?}", w[0]))),
        None => Ok(()),
    }
}

fn validate_record(rec: &InteractionRecord, views: &[ViewSpec], num_students: usize) -> Result<()> {
    if rec.student >= num_students {
        return Err(Error::Integrity(format!("student index {} out of range", rec.student)));
    }
    let view = views
        .get(rec.view)
        .ok_or_else(|| Error::Integrity(format!("view index {} out of range", rec.view)))?;
    if rec.material >= view.num_materials {
        return Err(Error::Integrity(format!(
            "material index {} out of range for view {:?}",
            rec.material, view.name
        )));
    }
    if view.graded {
        if !(rec.value.is_finite() && (0.0..=1.0).contains(&rec.value)) {
            return Err(Error::Range(format!(
                "graded value {} in view {:?} outside [0, 1]",
                rec.value, view.name
            )));
        }
    } else if rec.value != 1.0 {
        return Err(Error::Range(format!(
            "non-graded value {} in view {:?} must be 1",
            rec.value, view.name
        )));
    }
    Ok(())
}
