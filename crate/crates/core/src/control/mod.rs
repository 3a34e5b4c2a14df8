//! Set-point based regulation of a TCL population.

pub mod closed_loop;
pub mod kalman;
pub mod regulate;
pub mod switched;

pub use closed_loop::{closed_loop_run, ClosedLoopRow, ClosedLoopScenario, Controller};
pub use kalman::{kf_step, FilterState};
pub use regulate::{
    energy_cost, energy_cost_plan, one_step_regulate, psi_explicit, psi_recursive, smpc_cost, smpc_plan,
    SmpcPlan, SmpcProblem, MAX_SCHEDULES,
};
pub use switched::{build_switched_family, build_switched_family_averaged, rate_limit_steps, SwitchedControlModel};
