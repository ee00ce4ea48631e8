//! Fluid processing networks: servers, flows, buffers, routing, and the
//! nominal/deviation data for arrivals and service.
//!
//! A network has `I` servers, `J` flows and `K` buffers. Flow `j` runs on
//! server `s(j)` and drains buffer `k(j)`; a unit of fluid processed by flow
//! `j` leaves buffer `k(j)` and a fraction `p_{j,k}` of it enters buffer
//! `k`. The routing matrix `G` (K×J) captures both: `G[k(j)][j] = 1` and
//! `G[k][j] = -p_{j,k}` elsewhere, so buffer levels evolve as
//! `x(t) = α + λ t - G U(t)` with `U` the cumulative processed amounts.
//!
//! Service is parameterized twice, consistently: processing *times* `τ`
//! (time per unit, used by the rates model and the simulator) and
//! processing *rates* `μ = 1/τ` (units per time, used by the effort model).
//! Deviations are symmetric-box half-widths; the two boxes describe the
//! same interval of physical rates via [`tau_box_to_mu_box`], and each
//! instance records which side was given (`authoritative`), the other being
//! derived.

use crate::uncertainty::{tau_box_to_mu_box, UncertaintyError};
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum NetworkError {
    #[error("invalid network:\n  {}", .0.join("\n  "))]
    Invalid(Vec<String>),
    #[error(transparent)]
    Conversion(#[from] UncertaintyError),
}

/// Which service parameterization the instance was built from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Parameterization {
    #[default]
    Tau,
    Mu,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FluidNetwork {
    #[serde(rename = "servers")]
    pub num_servers: usize,
    #[serde(rename = "flows")]
    pub num_flows: usize,
    #[serde(rename = "buffers")]
    pub num_buffers: usize,
    /// `s(j)`: the server running flow `j` (0-indexed).
    pub server_of_flow: Vec<usize>,
    /// `k(j)`: the buffer drained by flow `j` (0-indexed).
    pub buffer_of_flow: Vec<usize>,
    /// Routing matrix `G`, `num_buffers` rows by `num_flows` columns.
    #[serde(rename = "G")]
    pub routing: Vec<Vec<f64>>,
    /// Nominal arrival rates per buffer.
    pub lambda_nom: Vec<f64>,
    /// Arrival-rate deviations per buffer (half-widths, ≥ 0).
    pub lambda_dev: Vec<f64>,
    /// Nominal processing times per flow.
    pub tau_nom: Vec<f64>,
    /// Processing-time deviations per flow.
    pub tau_dev: Vec<f64>,
    /// Nominal processing rates per flow.
    pub mu_nom: Vec<f64>,
    /// Processing-rate deviations per flow.
    pub mu_dev: Vec<f64>,
    /// Initial buffer levels.
    pub alpha: Vec<f64>,
    /// Holding cost per unit of fluid per unit of time, per buffer.
    pub cost: Vec<f64>,
    /// Planning horizon `T`.
    pub horizon: f64,
    /// Not part of the wire format; parsed networks default to `Tau`.
    #[serde(skip, default)]
    authoritative: Parameterization,
}

impl PartialEq for FluidNetwork {
    /// Equality over the serialized data; which side was authoritative is
    /// provenance, not state, and round-trips through JSON don't keep it.
    fn eq(&self, other: &Self) -> bool {
        self.num_servers == other.num_servers
            && self.num_flows == other.num_flows
            && self.num_buffers == other.num_buffers
            && self.server_of_flow == other.server_of_flow
            && self.buffer_of_flow == other.buffer_of_flow
            && self.routing == other.routing
            && self.lambda_nom == other.lambda_nom
            && self.lambda_dev == other.lambda_dev
            && self.tau_nom == other.tau_nom
            && self.tau_dev == other.tau_dev
            && self.mu_nom == other.mu_nom
            && self.mu_dev == other.mu_dev
            && self.alpha == other.alpha
            && self.cost == other.cost
            && self.horizon == other.horizon
    }
}

/// Everything but the service parameterization, shared by both constructors.
pub struct NetworkData {
    pub num_servers: usize,
    pub server_of_flow: Vec<usize>,
    pub buffer_of_flow: Vec<usize>,
    pub routing: Vec<Vec<f64>>,
    pub lambda_nom: Vec<f64>,
    pub lambda_dev: Vec<f64>,
    pub alpha: Vec<f64>,
    pub cost: Vec<f64>,
    pub horizon: f64,
}

impl FluidNetwork {
    /// Build from processing times; rates are derived.
    pub fn from_service_times(
        data: NetworkData,
        tau_nom: Vec<f64>,
        tau_dev: Vec<f64>,
    ) -> Result<Self, NetworkError> {
        let (mu_nom, mu_dev) = tau_box_to_mu_box(&tau_nom, &tau_dev)?;
        Self::assemble(data, tau_nom, tau_dev, mu_nom, mu_dev, Parameterization::Tau)
    }

    /// Build from processing rates; times are derived. The τ↔μ box map is
    /// an involution, so the same conversion runs in both directions.
    pub fn from_service_rates(
        data: NetworkData,
        mu_nom: Vec<f64>,
        mu_dev: Vec<f64>,
    ) -> Result<Self, NetworkError> {
        let (tau_nom, tau_dev) = tau_box_to_mu_box(&mu_nom, &mu_dev)?;
        Self::assemble(data, tau_nom, tau_dev, mu_nom, mu_dev, Parameterization::Mu)
    }

    fn assemble(
        data: NetworkData,
        tau_nom: Vec<f64>,
        tau_dev: Vec<f64>,
        mu_nom: Vec<f64>,
        mu_dev: Vec<f64>,
        authoritative: Parameterization,
    ) -> Result<Self, NetworkError> {
        let net = FluidNetwork {
            num_servers: data.num_servers,
            num_flows: data.server_of_flow.len(),
            num_buffers: data.alpha.len(),
            server_of_flow: data.server_of_flow,
            buffer_of_flow: data.buffer_of_flow,
            routing: data.routing,
            lambda_nom: data.lambda_nom,
            lambda_dev: data.lambda_dev,
            tau_nom,
            tau_dev,
            mu_nom,
            mu_dev,
            alpha: data.alpha,
            cost: data.cost,
            horizon: data.horizon,
            authoritative,
        };
        let diagnostics = validate_network(&net);
        if diagnostics.is_empty() {
            Ok(net)
        } else {
            Err(NetworkError::Invalid(diagnostics))
        }
    }

    pub fn authoritative(&self) -> Parameterization {
        self.authoritative
    }

    /// The flows assigned to each server, in flow order.
    pub fn flows_of_server(&self, server: usize) -> Vec<usize> {
        (0..self.num_flows)
            .filter(|&j| self.server_of_flow[j] == server)
            .collect()
    }

    /// One member list per server — the budget groups for service
    /// uncertainty. Servers without flows yield empty lists.
    pub fn service_groups(&self) -> Vec<Vec<usize>> {
        (0..self.num_servers)
            .map(|i| self.flows_of_server(i))
            .collect()
    }

    /// Per-flow relative deviation `ε_j = τ̂_j / τ̄_j`.
    pub fn epsilon(&self) -> Vec<f64> {
        self.tau_nom
            .iter()
            .zip(&self.tau_dev)
            .map(|(&nom, &dev)| dev / nom)
            .collect()
    }
}

/// Check every structural invariant and return one human-readable
/// diagnostic per violation; an empty list means the network is valid.
pub fn validate_network(net: &FluidNetwork) -> Vec<String> {
    let mut out = Vec::new();
    let (i_count, j_count, k_count) = (net.num_servers, net.num_flows, net.num_buffers);
    if i_count == 0 {
        out.push("the network needs at least one server".to_string());
    }
    if j_count == 0 {
        out.push("the network needs at least one flow".to_string());
    }
    if k_count == 0 {
        out.push("the network needs at least one buffer".to_string());
    }

    let mut len_ok = true;
    let mut check_len = |name: &str, len: usize, want: usize| {
        if len != want {
            out.push(format!("{name} has length {len}, expected {want}"));
            len_ok = false;
        }
    };
    check_len("server_of_flow", net.server_of_flow.len(), j_count);
    check_len("buffer_of_flow", net.buffer_of_flow.len(), j_count);
    check_len("lambda_nom", net.lambda_nom.len(), k_count);
    check_len("lambda_dev", net.lambda_dev.len(), k_count);
    check_len("tau_nom", net.tau_nom.len(), j_count);
    check_len("tau_dev", net.tau_dev.len(), j_count);
    check_len("mu_nom", net.mu_nom.len(), j_count);
    check_len("mu_dev", net.mu_dev.len(), j_count);
    check_len("alpha", net.alpha.len(), k_count);
    check_len("cost", net.cost.len(), k_count);
    check_len("G (rows)", net.routing.len(), k_count);
    for (k, row) in net.routing.iter().enumerate() {
        if row.len() != j_count {
            out.push(format!(
                "G row {k} has length {}, expected {j_count}",
                row.len()
            ));
            len_ok = false;
        }
    }
    if !len_ok {
        // Index-based checks below would be misleading (or panic).
        return out;
    }

    for (j, &s) in net.server_of_flow.iter().enumerate() {
        if s >= i_count {
            out.push(format!("flow {j} is assigned to server {s}, but there are {i_count}"));
        }
    }
    for (j, &k) in net.buffer_of_flow.iter().enumerate() {
        if k >= k_count {
            out.push(format!("flow {j} drains buffer {k}, but there are {k_count}"));
        }
    }
    if !out.is_empty() {
        return out;
    }

    let tol = 1e-9;
    for j in 0..j_count {
        let own = net.buffer_of_flow[j];
        if (net.routing[own][j] - 1.0).abs() > tol {
            out.push(format!(
                "G[{own}][{j}] = {} but flow {j} drains buffer {own}, so it must be 1",
                net.routing[own][j]
            ));
        }
        let mut routed = 0.0;
        for k in 0..k_count {
            if k == own {
                continue;
            }
            let entry = net.routing[k][j];
            if !(-1.0 - tol..=tol).contains(&entry) {
                out.push(format!(
                    "G[{k}][{j}] = {entry} is outside [-1, 0] (routing fractions are negated)"
                ));
            }
            routed += -entry;
        }
        if routed > 1.0 + tol {
            out.push(format!(
                "column {j} of G routes {routed} of each processed unit; at most 1 is possible"
            ));
        }
    }

    for j in 0..j_count {
        let (tn, td) = (net.tau_nom[j], net.tau_dev[j]);
        let (mn, md) = (net.mu_nom[j], net.mu_dev[j]);
        if !(tn.is_finite() && tn > 0.0 && td.is_finite() && td >= 0.0) {
            out.push(format!(
                "flow {j} needs tau_nom > 0 and tau_dev >= 0, got {tn} and {td}"
            ));
        } else if td >= tn {
            out.push(format!(
                "flow {j} has tau_dev {td} >= tau_nom {tn}: rate may vanish under perturbation"
            ));
        }
        if !(mn.is_finite() && mn > 0.0 && md.is_finite() && md >= 0.0) {
            out.push(format!(
                "flow {j} needs mu_nom > 0 and mu_dev >= 0, got {mn} and {md}"
            ));
        } else if md >= mn {
            out.push(format!(
                "flow {j} has mu_dev {md} >= mu_nom {mn}: rate may vanish under perturbation"
            ));
        }
    }

    // The two service boxes must describe the same physical rate interval.
    if let Ok((mu_nom, mu_dev)) = tau_box_to_mu_box(&net.tau_nom, &net.tau_dev) {
        for j in 0..j_count {
            let scale = 1.0 + mu_nom[j].abs();
            if (mu_nom[j] - net.mu_nom[j]).abs() > 1e-9 * scale
                || (mu_dev[j] - net.mu_dev[j]).abs() > 1e-9 * scale
            {
                out.push(format!(
                    "flow {j}: mu box ({}, {}) disagrees with the tau box (expected {}, {})",
                    net.mu_nom[j], net.mu_dev[j], mu_nom[j], mu_dev[j]
                ));
            }
        }
    }

    for (k, (&nom, &dev)) in net.lambda_nom.iter().zip(&net.lambda_dev).enumerate() {
        if !(nom.is_finite() && dev.is_finite() && dev >= 0.0 && nom >= dev) {
            out.push(format!(
                "buffer {k} needs lambda_nom >= lambda_dev >= 0, got {nom} and {dev}"
            ));
        }
    }
    for (k, &a) in net.alpha.iter().enumerate() {
        if !(a.is_finite() && a >= 0.0) {
            out.push(format!("buffer {k} has initial level {a}, which must be >= 0"));
        }
    }
    for (k, &c) in net.cost.iter().enumerate() {
        if !(c.is_finite() && c >= 0.0) {
            out.push(format!("buffer {k} has holding cost {c}, which must be >= 0"));
        }
    }
    if !(net.horizon.is_finite() && net.horizon > 0.0) {
        out.push(format!("horizon {} must be positive", net.horizon));
    }
    out
}

/// The two-server, three-flow network used as the running example: flows 1
/// and 2 share server 1 and drain buffers 1 and 2; everything flow 1
/// processes is routed into buffer 3, which flow 3 drains on server 2.
/// Deviations are zero; arrivals enter buffers 1 and 2 only.
pub fn build_criss_cross(
    lambda1: f64,
    lambda2: f64,
    mu1: f64,
    mu2: f64,
    mu3: f64,
    alpha: [f64; 3],
    cost: [f64; 3],
    horizon: f64,
) -> Result<FluidNetwork, NetworkError> {
    let data = NetworkData {
        num_servers: 2,
        server_of_flow: vec![0, 0, 1],
        buffer_of_flow: vec![0, 1, 2],
        routing: vec![
            vec![1.0, 0.0, 0.0],
            vec![0.0, 1.0, 0.0],
            vec![-1.0, 0.0, 1.0],
        ],
        lambda_nom: vec![lambda1, lambda2, 0.0],
        lambda_dev: vec![0.0; 3],
        alpha: alpha.to_vec(),
        cost: cost.to_vec(),
        horizon,
    };
    FluidNetwork::from_service_rates(data, vec![mu1, mu2, mu3], vec![0.0; 3])
}

/// A random identity-routing network: `num_servers × flows_per_server`
/// flows, each draining its own buffer with no internal inflows. Nominal
/// rates μ̄ ~ U[5,25], arrivals λ̄ ~ U[2,5], initial levels α ~ U[10,20] and
/// costs c ~ U[1,2]; the horizon is 3, long enough for drain-rate
/// differences to outweigh the fixed cost of the initial buffer contents
/// in realized holding costs. The raw draws depend only on `seed`
/// (ChaCha8, fixed draw order), so the same seed with different `epsilon`
/// yields the same nominal data with rescaled deviation boxes: τ̂ = ε·τ̄
/// with τ̄ adjusted so that the derived rate box keeps μ̄ at the raw draw.
pub fn random_network(
    num_servers: usize,
    flows_per_server: usize,
    epsilon: f64,
    seed: u64,
) -> Result<FluidNetwork, NetworkError> {
    if num_servers == 0 || flows_per_server == 0 {
        return Err(NetworkError::Invalid(vec![
            "num_servers and flows_per_server must be at least 1".to_string(),
        ]));
    }
    if !(0.0..1.0).contains(&epsilon) {
        return Err(NetworkError::Invalid(vec![format!(
            "epsilon {epsilon} must lie in [0, 1)"
        )]));
    }
    let flows = num_servers * flows_per_server;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mu_raw: Vec<f64> = (0..flows).map(|_| rng.gen_range(5.0..25.0)).collect();
    let lambda_nom: Vec<f64> = (0..flows).map(|_| rng.gen_range(2.0..5.0)).collect();
    let alpha: Vec<f64> = (0..flows).map(|_| rng.gen_range(10.0..20.0)).collect();
    let cost: Vec<f64> = (0..flows).map(|_| rng.gen_range(1.0..2.0)).collect();

    // Center the time box so its induced rate box is centered on the raw
    // rate draw: μ̄ = 1/(τ̄(1−ε²)) inverts to τ̄ = 1/(μ̄(1−ε²)).
    let tau_nom: Vec<f64> = mu_raw
        .iter()
        .map(|&mu| 1.0 / (mu * (1.0 - epsilon * epsilon)))
        .collect();
    let tau_dev: Vec<f64> = tau_nom.iter().map(|&t| epsilon * t).collect();

    let mut routing = vec![vec![0.0; flows]; flows];
    for (j, row) in routing.iter_mut().enumerate() {
        row[j] = 1.0;
    }
    let data = NetworkData {
        num_servers,
        server_of_flow: (0..flows).map(|j| j / flows_per_server).collect(),
        buffer_of_flow: (0..flows).collect(),
        routing,
        lambda_nom,
        lambda_dev: vec![0.0; flows],
        alpha,
        cost,
        horizon: 3.0,
    };
    FluidNetwork::from_service_times(data, tau_nom, tau_dev)
}
