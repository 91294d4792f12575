pub mod cstr;
pub mod disturbance;
pub mod run;
pub mod scenario;
pub mod trace;

pub use cstr::{cstr_case_study, cstr_subsystem, CstrParameters, CSTR_PARAMETERS};
pub use disturbance::{disturbance_schedule, DisturbanceKind, DEFAULT_SEED};
pub use run::{simulate, simulate_with, RunOutput, SimError, BLOW_UP};
pub use scenario::{GovernorChoice, ReferenceSchedule, Scenario, Segment};
pub use trace::{metrics, SubsystemMetrics, Trace, TraceError, TraceRow};
