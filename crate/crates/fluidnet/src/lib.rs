//! Robust control of fluid processing networks.
//!
//! A fluid processing network moves continuous material through buffers that
//! are drained by flows running on shared servers. This crate builds finite
//! linear programs whose solutions are open-loop controls that stay feasible
//! and bound the holding cost for *every* realization of the uncertain
//! processing rates (and arrival rates) inside a chosen uncertainty set, and
//! it evaluates those controls on simulated rate trajectories.
//!
//! The pieces, bottom-up:
//!
//! * [`lp`] — a small dense-LU primal simplex solver plus a text format for
//!   inspecting the generated programs.
//! * [`uncertainty`] — box, budgeted, one-sided budgeted, and general
//!   polyhedral uncertainty sets with exact worst-case oracles.
//! * [`network`] — the network description (topology, rates, arrivals,
//!   costs) and generators for the examples used throughout.
//! * [`discretization`] — time grids and piecewise-constant controls.
//! * [`robustize`] — assembles the robust counterpart LPs for the
//!   processing-rates model (controls are rates `u`) and the server-effort
//!   model (controls are effort fractions `eta`).
//! * [`simulate`] — smooth random processing-time trajectories, exact
//!   integration of the buffer dynamics, and realized holding costs.
//! * [`experiment`] — the Monte-Carlo comparison of the two models across
//!   uncertainty magnitudes.
//! * [`cli`] — the `fluidnet` command-line interface over all of the above.

pub mod cli;
pub mod discretization;
pub mod experiment;
pub mod lp;
pub mod network;
pub mod robustize;
pub mod simulate;
pub mod uncertainty;
