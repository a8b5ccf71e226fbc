//! Modeling and simulation toolkit for environmentally sustainable data centers.
//!
//! The crate is organized around four concerns:
//!
//! * **Storage**: [`frac`] implements a fractional multi-level flash cell
//!   codec with capacity/endurance/error-rate models, and [`ftlsim`] drives a
//!   page-mapped flash translation layer over a simulated recycled chip to
//!   measure lifetime extension under graceful capacity degradation.
//! * **Compute**: [`pimfunc`] provides functional (bit-accurate, device-free)
//!   models of crossbar compute primitives: permutation-based shifts,
//!   search-based addition, shift-add multiplication, crossbar logic, a
//!   tunable-precision ADC, a debiased random bit generator, and a negacyclic
//!   NTT reference kernel.
//! * **Power**: [`powersim`] simulates forward progress of accelerators with
//!   different volatility classes under fluctuating renewable supply, with
//!   battery dispatch, rollback accounting, and Pareto sweeps.
//! * **Estimation**: [`traces`] ingests power time series, [`forecast`]
//!   trains a recurrent quantile forecaster for renewable generation and net
//!   demand, [`carbon`] accounts operational/embodied energy and billing, and
//!   [`estimator`] partitions task graphs across heterogeneous devices and
//!   composes everything into an end-to-end quote.

pub mod carbon;
pub mod estimator;
pub mod forecast;
pub mod frac;
pub mod ftlsim;
pub mod pimfunc;
pub mod powersim;
pub mod traces;
