//! Numerical checks of the theory and the measurement protocols:
//! finite differences, proximal traces, the implicit-SGD oracle and Newton
//! comparison, the gradient proportionality check, error traces, update
//! magnitudes and product counts.

pub mod fd;
pub mod implicit;
pub mod lemma;
pub mod ops;
pub mod prox;
pub mod trace;

pub use fd::{
    finite_diff_grad, finite_diff_hessian, max_rel_err, rel_err, symmetric_jacobian, GRAD_STEP, HESSIAN_STEP,
};
pub use implicit::{damped_newton_step, implicit_sgd_oracle, newton_update, param_step};
pub use lemma::{lemma1_check, param_distance, theorem1_il_update, Lemma1Report};
pub use ops::{matmul_count, measure_matmuls, OpCount};
pub use prox::{prox_objective, prox_trace_during_inference, ProxTrace};
pub use trace::{error_trace, spread_ratio, update_magnitude_stats, ErrorTrace, UpdateLog};
