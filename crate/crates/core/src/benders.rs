//! Fixed-demand network design by Benders decomposition.
//!
//! The master chooses bus arcs; each trip's routing cost `g(z)` is bounded
//! from below by optimality cuts built from shortest-distance potentials on
//! the hop-expanded graph of the generating design:
//!
//! ```text
//! pi(v, h)  = cheapest cost from v to the destination with at most K - h arcs
//!             over arcs open in the generating design, capped at pi(o, 0)
//! sigma_a   = max over h of max(0, pi(tail, h) - gamma_a - pi(head, h + 1)),
//!             for bus arcs closed in the generating design
//! g(z)     >= pi(o, 0) - sum_a sigma_a z_a
//! ```
//!
//! Telescoping along any simple path that is feasible under `z` shows the cut
//! is valid; it is tight at the generating design.

use std::collections::BTreeMap;
use std::path::Path;
use std::time::{Duration, Instant};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::master::{BranchAndBound, MasterCut, MasterProblem, MasterSolver};
use crate::model::{arc_fixed_cost, shuttle_cost_term, CostParameters, LocationKind, TransitNetwork, Trip};
use crate::router::{arc_weights, effective_hop_limit, lexicographic_path, DesignVector, RoutedPath};

/// Absolute slack used when checking cut satisfaction.
pub const CUT_EPS: f64 = 1e-9;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BendersCut {
    pub trip: String,
    pub constant: f64,
    /// Non-zero savings coefficients, keyed by bus arc id.
    pub coefficients: BTreeMap<String, f64>,
}

impl BendersCut {
    /// Lower bound this cut places on the trip's routing cost under `design`.
    pub fn evaluate(&self, network: &TransitNetwork, design: &DesignVector) -> f64 {
        let saving: f64 = self
            .coefficients
            .iter()
            .filter(|(id, _)| {
                network
                    .arc_index(id)
                    .and_then(|a| network.bus_slot(a))
                    .is_some_and(|s| design.is_open_slot(s))
            })
            .map(|(_, c)| c)
            .sum();
        self.constant - saving
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CutMode {
    /// One cut and one routing estimate per trip.
    #[default]
    Disaggregated,
    /// A single summed cut per iteration.
    Aggregated,
}

#[derive(Clone, Debug)]
pub struct BendersOptions {
    /// Relative gap `(UB - LB) / max(1, |UB|)` at which the loop stops.
    pub tolerance: f64,
    pub max_iterations: usize,
    pub time_limit: Option<Duration>,
    pub cut_mode: CutMode,
    pub master_node_limit: usize,
}

impl Default for BendersOptions {
    fn default() -> Self {
        BendersOptions {
            tolerance: 1e-6,
            max_iterations: 500,
            time_limit: None,
            cut_mode: CutMode::Disaggregated,
            master_node_limit: 200_000,
        }
    }
}

/// Cut pool, bounds and incumbent. Serializes as the checkpoint file.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct BendersState {
    pub cuts: Vec<BendersCut>,
    pub lower_bound: f64,
    pub upper_bound: f64,
    /// Open state of every bus arc, keyed by id.
    pub incumbent: Option<BTreeMap<String, bool>>,
    pub iteration: usize,
}

impl BendersState {
    pub fn new() -> Self {
        BendersState {
            lower_bound: f64::NEG_INFINITY,
            upper_bound: f64::INFINITY,
            ..Default::default()
        }
    }

    pub fn gap(&self) -> f64 {
        relative_gap(self.upper_bound, self.lower_bound)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(&CheckpointDoc::from(self)).expect("state serializes");
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let doc: CheckpointDoc = serde_json::from_str(&text).map_err(|source| Error::Json {
            path: path.into(),
            source,
        })?;
        Ok(doc.into())
    }
}

// JSON has no infinities; unset bounds are stored as null.
#[derive(Serialize, Deserialize)]
struct CheckpointDoc {
    cuts: Vec<BendersCut>,
    lower_bound: Option<f64>,
    upper_bound: Option<f64>,
    incumbent: Option<BTreeMap<String, bool>>,
    iteration: usize,
}

impl From<&BendersState> for CheckpointDoc {
    fn from(s: &BendersState) -> Self {
        CheckpointDoc {
            cuts: s.cuts.clone(),
            lower_bound: s.lower_bound.is_finite().then_some(s.lower_bound),
            upper_bound: s.upper_bound.is_finite().then_some(s.upper_bound),
            incumbent: s.incumbent.clone(),
            iteration: s.iteration,
        }
    }
}

impl From<CheckpointDoc> for BendersState {
    fn from(d: CheckpointDoc) -> Self {
        BendersState {
            cuts: d.cuts,
            lower_bound: d.lower_bound.unwrap_or(f64::NEG_INFINITY),
            upper_bound: d.upper_bound.unwrap_or(f64::INFINITY),
            incumbent: d.incumbent,
            iteration: d.iteration,
        }
    }
}

pub fn relative_gap(upper: f64, lower: f64) -> f64 {
    if !upper.is_finite() || !lower.is_finite() {
        return f64::INFINITY;
    }
    ((upper - lower) / upper.abs().max(1.0)).max(0.0)
}

/// The design problem for a frozen rider set. Every trip must be served.
#[derive(Clone, Debug)]
pub struct FixedDemandInstance<'a> {
    pub network: &'a TransitNetwork,
    pub trips: Vec<&'a Trip>,
    pub params: &'a CostParameters,
    /// Bus slots that must stay open.
    pub forced_open: Vec<bool>,
}

impl<'a> FixedDemandInstance<'a> {
    pub fn new(network: &'a TransitNetwork, trips: Vec<&'a Trip>, params: &'a CostParameters) -> Self {
        FixedDemandInstance {
            network,
            trips,
            params,
            forced_open: vec![false; network.bus_arcs().len()],
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ObjectiveSplit {
    pub bus_fixed_cost: f64,
    pub shuttle_cost: f64,
    pub inconvenience: f64,
    pub total: f64,
}

#[derive(Clone, Debug)]
pub struct DesignSolution {
    pub design: DesignVector,
    /// Route per trip, in instance order.
    pub routes: Vec<RoutedPath>,
    pub objective: ObjectiveSplit,
    pub lower_bound: f64,
    pub upper_bound: f64,
    pub iterations: usize,
    pub converged: bool,
    pub state: BendersState,
}

impl DesignSolution {
    pub fn gap(&self) -> f64 {
        relative_gap(self.upper_bound, self.lower_bound)
    }
}

pub fn design_fixed_cost(network: &TransitNetwork, design: &DesignVector, params: &CostParameters) -> f64 {
    design
        .open_arcs(network)
        .map(|a| arc_fixed_cost(network.arc(a), params).expect("bus arc"))
        .sum()
}

/// Splits a design's objective into bus fixed cost, shuttle operating cost
/// and rider inconvenience.
pub fn objective_split(
    network: &TransitNetwork,
    design: &DesignVector,
    trips: &[&Trip],
    routes: &[RoutedPath],
    params: &CostParameters,
) -> ObjectiveSplit {
    let bus_fixed_cost = design_fixed_cost(network, design, params);
    let mut shuttle_cost = 0.0;
    let mut routing = 0.0;
    for (trip, route) in trips.iter().zip(routes) {
        routing += route.primary_value;
        shuttle_cost += route
            .arcs
            .iter()
            .map(|&a| shuttle_cost_term(network.arc(a), trip, params))
            .sum::<f64>();
    }
    ObjectiveSplit {
        bus_fixed_cost,
        shuttle_cost,
        inconvenience: routing - shuttle_cost,
        total: bus_fixed_cost + routing,
    }
}

/// Builds the optimality cut of `trip` at `design` and returns it with the
/// trip's optimal route under that design.
pub fn generate_cut(
    trip: &Trip,
    network: &TransitNetwork,
    design: &DesignVector,
    params: &CostParameters,
) -> Result<(BendersCut, RoutedPath)> {
    let origin = network
        .location_index(&trip.origin)
        .ok_or_else(|| Error::InvalidArgument(format!("trip `{}`: unknown origin", trip.id)))?;
    let dest = network
        .location_index(&trip.destination)
        .ok_or_else(|| Error::InvalidArgument(format!("trip `{}`: unknown destination", trip.id)))?;
    let hop_limit = effective_hop_limit(network, params);
    let open = arc_weights(network, trip, params, |a| design.allows(network, a));
    let path = lexicographic_path(network, &open, origin, dest, hop_limit)
        .ok_or_else(|| Error::Infeasible(trip.id.clone()))?;

    let costs: Vec<f64> = arc_weights(network, trip, params, |_| true)
        .into_iter()
        .map(|w| w.expect("all arcs allowed").0)
        .collect();

    // layers[r][v]: cheapest v -> dest using at most r open arcs.
    let n = network.num_locations();
    let budget = hop_limit.unwrap_or(n.saturating_sub(1));
    let mut base = vec![f64::INFINITY; n];
    base[dest] = 0.0;
    let mut layers = vec![base];
    for r in 1..=budget {
        let prev = &layers[r - 1];
        let mut cur = prev.clone();
        for (a, w) in open.iter().enumerate() {
            if w.is_some() {
                let cand = costs[a] + prev[network.head(a)];
                let t = network.tail(a);
                if cand < cur[t] {
                    cur[t] = cand;
                }
            }
        }
        let stable = hop_limit.is_none() && cur == *prev;
        layers.push(cur);
        if stable {
            break;
        }
    }
    let last = layers.len() - 1;
    let constant = layers[last][origin];
    // Potentials are capped at the origin value, which keeps them finite and
    // preserves the triangle inequality on open arcs.
    let potential = |v: usize, used: usize| -> f64 {
        let r = if hop_limit.is_some() { last - used } else { last };
        layers[r][v].min(constant)
    };

    let mut coefficients = BTreeMap::new();
    for (slot, &a) in network.bus_arcs().iter().enumerate() {
        if design.is_open_slot(slot) {
            continue;
        }
        let (t, h) = (network.tail(a), network.head(a));
        let sigma = match hop_limit {
            Some(k) => (0..k)
                .map(|used| potential(t, used) - costs[a] - potential(h, used + 1))
                .fold(0.0, f64::max),
            None => (potential(t, 0) - costs[a] - potential(h, 0)).max(0.0),
        };
        if sigma > 0.0 {
            coefficients.insert(network.arc(a).id.clone(), sigma);
        }
    }
    Ok((
        BendersCut {
            trip: trip.id.clone(),
            constant,
            coefficients,
        },
        path,
    ))
}

struct Prepared {
    master: MasterProblem,
    trip_group: BTreeMap<String, usize>,
}

fn prepare_master(instance: &FixedDemandInstance<'_>, floors: &[f64], mode: CutMode) -> Result<Prepared> {
    let network = instance.network;
    let bus = network.bus_arcs();
    let fixed_costs = bus
        .iter()
        .map(|&a| arc_fixed_cost(network.arc(a), instance.params))
        .collect::<Result<Vec<_>>>()?;
    let mut balance = Vec::new();
    for (v, loc) in network.locations().iter().enumerate() {
        if loc.kind != LocationKind::Hub {
            continue;
        }
        let row: Vec<(usize, i64)> = bus
            .iter()
            .enumerate()
            .filter_map(|(slot, &a)| {
                let f = network.arc(a).frequency.unwrap_or(0) as i64;
                if network.tail(a) == v {
                    Some((slot, f))
                } else if network.head(a) == v {
                    Some((slot, -f))
                } else {
                    None
                }
            })
            .collect();
        if !row.is_empty() {
            balance.push(row);
        }
    }
    let exclusive_groups = network.parallel_bus_groups().into_iter().filter(|g| g.len() > 1).collect();
    let (theta_floors, trip_group) = match mode {
        CutMode::Disaggregated => (
            floors.to_vec(),
            instance.trips.iter().enumerate().map(|(i, t)| (t.id.clone(), i)).collect(),
        ),
        CutMode::Aggregated => (
            vec![floors.iter().sum()],
            instance.trips.iter().map(|t| (t.id.clone(), 0)).collect(),
        ),
    };
    Ok(Prepared {
        master: MasterProblem {
            fixed_costs,
            balance,
            exclusive_groups,
            theta_floors,
            cuts: Vec::new(),
            forced_open: instance.forced_open.clone(),
        },
        trip_group,
    })
}

fn to_master_cut(network: &TransitNetwork, cut: &BendersCut, group: usize) -> Result<MasterCut> {
    let coefficients = cut
        .coefficients
        .iter()
        .map(|(id, &c)| {
            network
                .arc_index(id)
                .and_then(|a| network.bus_slot(a))
                .map(|s| (s, c))
                .ok_or_else(|| Error::InvalidArgument(format!("cut references unknown bus arc `{id}`")))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(MasterCut {
        group,
        constant: cut.constant,
        coefficients,
    })
}

fn aggregate(cuts: &[BendersCut]) -> BendersCut {
    let mut coefficients: BTreeMap<String, f64> = BTreeMap::new();
    for cut in cuts {
        for (id, c) in &cut.coefficients {
            *coefficients.entry(id.clone()).or_default() += c;
        }
    }
    BendersCut {
        trip: "*".into(),
        constant: cuts.iter().map(|c| c.constant).sum(),
        coefficients,
    }
}

/// Routes every trip under `design`; `Err` if some trip has no feasible path.
pub fn route_all(
    network: &TransitNetwork,
    trips: &[&Trip],
    design: &DesignVector,
    params: &CostParameters,
) -> Result<Vec<RoutedPath>> {
    trips
        .par_iter()
        .map(|t| {
            crate::router::solve_follower(t, network, design, params)?.ok_or_else(|| Error::Infeasible(t.id.clone()))
        })
        .collect()
}

pub fn solve_fixed_demand(instance: &FixedDemandInstance<'_>, options: &BendersOptions) -> Result<DesignSolution> {
    resume_fixed_demand(instance, BendersState::new(), options)
}

/// Continues the decomposition from a checkpointed state.
pub fn resume_fixed_demand(
    instance: &FixedDemandInstance<'_>,
    mut state: BendersState,
    options: &BendersOptions,
) -> Result<DesignSolution> {
    if !(options.tolerance > 0.0) {
        return Err(Error::InvalidArgument("tolerance must be positive".into()));
    }
    let network = instance.network;
    let params = instance.params;
    let started = Instant::now();
    let deadline = options.time_limit.map(|d| started + d);

    // Opening arcs never makes a route worse: the all-open routes floor each
    // trip's estimate, and the forced-only design must be routable.
    let weakest = DesignVector::from_slots(instance.forced_open.clone());
    route_all(network, &instance.trips, &weakest, params)?;
    let floors: Vec<f64> = route_all(network, &instance.trips, &DesignVector::all_open(network), params)?
        .iter()
        .map(|p| p.primary_value)
        .collect();

    let Prepared {
        mut master,
        trip_group,
    } = prepare_master(instance, &floors, options.cut_mode)?;
    for cut in &state.cuts {
        let group = if options.cut_mode == CutMode::Aggregated {
            0
        } else {
            match trip_group.get(&cut.trip) {
                Some(&g) => g,
                None => continue,
            }
        };
        master.cuts.push(to_master_cut(network, cut, group)?);
    }

    let mut best: Option<(DesignVector, Vec<RoutedPath>)> = None;
    if let Some(map) = &state.incumbent {
        let design = DesignVector::from_map(network, map)?;
        if master.is_feasible(design.slots()) {
            let routes = route_all(network, &instance.trips, &design, params)?;
            let value = design_fixed_cost(network, &design, params) + routes.iter().map(|r| r.primary_value).sum::<f64>();
            state.upper_bound = value;
            best = Some((design, routes));
        }
    }

    let solver = BranchAndBound {
        node_limit: options.master_node_limit,
        deadline,
    };
    let mut converged = false;
    let mut iterations = 0;
    loop {
        if iterations >= options.max_iterations || deadline.is_some_and(|d| Instant::now() > d) {
            break;
        }
        iterations += 1;
        state.iteration += 1;

        let solution = match solver.solve(&master) {
            Ok(s) => s,
            Err(Error::LimitExceeded(msg)) => {
                log::warn!("stopping Benders loop: {msg}");
                break;
            }
            Err(e) => return Err(e),
        };
        state.lower_bound = state.lower_bound.max(solution.objective);
        let design = DesignVector::from_slots(solution.design);

        let generated: Vec<(BendersCut, RoutedPath)> = instance
            .trips
            .par_iter()
            .map(|t| generate_cut(t, network, &design, params))
            .collect::<Result<_>>()?;
        let value = design_fixed_cost(network, &design, params)
            + generated.iter().map(|(_, p)| p.primary_value).sum::<f64>();
        if value < state.upper_bound || best.is_none() {
            state.upper_bound = value.min(state.upper_bound);
            state.incumbent = Some(design.to_map(network));
            best = Some((design.clone(), generated.iter().map(|(_, p)| p.clone()).collect()));
        }

        let (cuts, _): (Vec<BendersCut>, Vec<RoutedPath>) = generated.into_iter().unzip();
        match options.cut_mode {
            CutMode::Disaggregated => {
                for cut in cuts {
                    master.cuts.push(to_master_cut(network, &cut, trip_group[&cut.trip])?);
                    state.cuts.push(cut);
                }
            }
            CutMode::Aggregated => {
                if !cuts.is_empty() {
                    let cut = aggregate(&cuts);
                    master.cuts.push(to_master_cut(network, &cut, 0)?);
                    state.cuts.push(cut);
                }
            }
        }

        log::debug!(
            "benders iteration {}: lb {:.6} ub {:.6}",
            state.iteration,
            state.lower_bound,
            state.upper_bound
        );
        if state.gap() <= options.tolerance {
            converged = true;
            break;
        }
    }

    let (design, routes) = match best {
        Some(b) => b,
        None => {
            // No master solve completed: fall back to the forced design.
            let design = weakest;
            let routes = route_all(network, &instance.trips, &design, params)?;
            state.upper_bound = design_fixed_cost(network, &design, params)
                + routes.iter().map(|r| r.primary_value).sum::<f64>();
            state.incumbent = Some(design.to_map(network));
            (design, routes)
        }
    };
    let objective = objective_split(network, &design, &instance.trips, &routes, params);
    Ok(DesignSolution {
        design,
        routes,
        objective,
        lower_bound: state.lower_bound,
        upper_bound: state.upper_bound,
        iterations,
        converged,
        state,
    })
}
