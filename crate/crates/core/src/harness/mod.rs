//! Scenario loading, closed-loop runs, the reference optimum, and export.

mod export;
mod kkt;
mod oracle;
mod run;
mod scenario;

pub use export::{
    csv_header, export, metadata, read_csv, rows, write_csv, write_json, CsvTable, Format,
    InverterRow, Metadata, SlotRow, TrajectoryFile,
};
pub use kkt::{kkt_report, KktReport};
pub use oracle::{
    dual_gradient_iterates, oracle_schedule, oracle_solve, DualGradientIterate, MatrixParts,
    OracleOptions, OracleSolution,
};
pub use run::{
    certify_epsilon, draw_probes, is_certified_slot, run_closed_loop, run_with, CertificateSummary,
    RunOptions, Trajectory, DENSE_CERTIFICATION_LIMIT,
};
pub use scenario::{
    load_scenario, parse_scenario, InitialState, InitialVoltage, Sampling, ScenarioConfig,
};
