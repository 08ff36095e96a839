//! The training criterion (lower bound, information regularizer and
//! classifier cross-entropy) and the optimization loop.

mod check;
pub mod discrete;
mod objective;
pub mod probe;
mod run;
mod terms;

pub use check::{objective_grad_check, toy_grad_check};
pub use objective::{
    evaluate, objective, reconstruction_error, train_step, Adam, Batch, Evaluation, LossBreakdown,
    Noise, ObjectiveVars, TrainConfig,
};
pub use run::{
    loss_csv_row, train_loop, write_loss_csv, StepObserver, TrainingSet, LOSS_CSV_HEADER,
};
pub use terms::{gaussian_loglik, gaussian_loglik_graph, kl_gaussian_std, kl_gaussian_std_graph};
