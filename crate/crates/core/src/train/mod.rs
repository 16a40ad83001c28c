//! Objective, analytic gradients, projected SGD and fold-in of unseen students.

mod fold_in;
mod gradient;
mod objective;
mod sgd;
mod simplex;

pub use fold_in::{append_cold_start, fold_in, student_step, FoldIn};
pub use gradient::{gradients, Gradients};
pub use objective::{objective, objective_records, ObjectiveBreakdown};
pub use sgd::{fit, fit_target, Ablation, FitResult};
pub use simplex::{project_simplex, project_simplex_in_place};
