//! Iterative bilevel approximation: alternate fixed-demand design and the
//! adoption choice of potential riders until the adopter set repeats.
//!
//! Each round routes potential riders on the current design (with bus/rail
//! waits added), evaluates their choice, permanently opens the bus arcs that
//! carry adopted riders, and redesigns for existing riders plus adopters.
//! The best visited design under the full leader objective is returned.

use std::collections::hash_map::DefaultHasher;
use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::hash::{Hash, Hasher};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::benders::{design_fixed_cost, solve_fixed_demand, BendersOptions, FixedDemandInstance};
use crate::error::{Error, Result};
use crate::model::{ticket_benefit, CostParameters, TransitNetwork, Trip};
use crate::router::{apply_wait_postprocessing, evaluate_choice, solve_follower, AdoptionDecision, DesignVector, RoutedPath};

#[derive(Clone, Debug)]
pub struct BilevelOptions {
    pub benders: BendersOptions,
    pub max_rounds: usize,
}

impl Default for BilevelOptions {
    fn default() -> Self {
        BilevelOptions {
            benders: BendersOptions::default(),
            max_rounds: 20,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RoundRecord {
    pub round: usize,
    /// Hex digest of the sorted adopter ids.
    pub adopter_hash: String,
    pub adopters: usize,
    pub objective: f64,
}

#[derive(Clone, Debug)]
pub struct AdoptionState {
    pub round: usize,
    /// Trip indices of existing riders and current adopters.
    pub active_riders: BTreeSet<usize>,
    /// Bus slots frozen open.
    pub fixed_open: BTreeSet<usize>,
    pub design: DesignVector,
    pub history: Vec<RoundRecord>,
}

/// Outcome for one trip under a design.
#[derive(Clone, Debug, PartialEq)]
pub struct TripOutcome {
    pub trip: usize,
    /// Lexicographically optimal route; `trip_length` excludes waits.
    pub route: RoutedPath,
    /// Trip length with bus/rail waits added.
    pub travel_time: f64,
    /// Present for potential riders.
    pub decision: Option<AdoptionDecision>,
}

impl TripOutcome {
    /// Existing riders always ride; potential riders when they adopt.
    pub fn is_active(&self) -> bool {
        self.decision.map_or(true, |d| d.adopted)
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LeaderBreakdown {
    pub bus_fixed_cost: f64,
    pub existing_routing: f64,
    pub adopter_routing: f64,
    pub ticket_benefit: f64,
}

impl LeaderBreakdown {
    pub fn total(&self) -> f64 {
        self.bus_fixed_cost + self.existing_routing + self.adopter_routing - self.ticket_benefit
    }
}

#[derive(Clone, Debug)]
pub struct BilevelSolution {
    pub design: DesignVector,
    /// One entry per input trip, in input order.
    pub outcomes: Vec<TripOutcome>,
    pub objective: f64,
    pub breakdown: LeaderBreakdown,
    pub fixed_open: BTreeSet<usize>,
    pub rounds: usize,
    pub converged: bool,
    pub history: Vec<RoundRecord>,
}

impl BilevelSolution {
    pub fn adopters(&self) -> impl Iterator<Item = &TripOutcome> {
        self.outcomes.iter().filter(|o| o.decision.is_some_and(|d| d.adopted))
    }
}

/// Routes every trip on `design` and evaluates the choice of potential riders.
pub fn evaluate_design(
    network: &TransitNetwork,
    trips: &[Trip],
    design: &DesignVector,
    params: &CostParameters,
) -> Result<Vec<TripOutcome>> {
    trips
        .par_iter()
        .enumerate()
        .map(|(i, trip)| {
            let route = solve_follower(trip, network, design, params)?.ok_or_else(|| Error::Infeasible(trip.id.clone()))?;
            let waited = apply_wait_postprocessing(&route, network, params);
            let decision = trip.is_potential().then(|| evaluate_choice(&waited, trip, params));
            Ok(TripOutcome {
                trip: i,
                travel_time: waited.trip_length,
                route,
                decision,
            })
        })
        .collect()
}

/// Leader objective: bus fixed cost, routing cost of existing riders, and
/// routing cost net of ticket benefit for adopters. Every active rider must
/// have a route.
pub fn leader_objective(
    network: &TransitNetwork,
    design: &DesignVector,
    trips: &[Trip],
    routes: &BTreeMap<usize, RoutedPath>,
    adopted: &BTreeSet<usize>,
    params: &CostParameters,
) -> Result<LeaderBreakdown> {
    let mut out = LeaderBreakdown {
        bus_fixed_cost: design_fixed_cost(network, design, params),
        ..Default::default()
    };
    for (i, trip) in trips.iter().enumerate() {
        let active = !trip.is_potential() || adopted.contains(&i);
        if !active {
            continue;
        }
        let route = routes
            .get(&i)
            .ok_or_else(|| Error::Consistency(format!("no route for active rider `{}`", trip.id)))?;
        if trip.is_potential() {
            out.adopter_routing += route.primary_value;
            out.ticket_benefit += ticket_benefit(trip, params)?;
        } else {
            out.existing_routing += route.primary_value;
        }
    }
    Ok(out)
}

fn breakdown_of(
    network: &TransitNetwork,
    trips: &[Trip],
    design: &DesignVector,
    outcomes: &[TripOutcome],
    params: &CostParameters,
) -> Result<LeaderBreakdown> {
    let routes = outcomes.iter().map(|o| (o.trip, o.route.clone())).collect();
    let adopted = outcomes
        .iter()
        .filter(|o| o.decision.is_some_and(|d| d.adopted))
        .map(|o| o.trip)
        .collect();
    leader_objective(network, design, trips, &routes, &adopted, params)
}

fn adopter_hash(trips: &[Trip], adopters: &BTreeSet<usize>) -> String {
    let mut hasher = DefaultHasher::new();
    for &i in adopters {
        trips[i].id.hash(&mut hasher);
    }
    format!("{:016x}", hasher.finish())
}

pub fn solve_bilevel(
    network: &TransitNetwork,
    trips: &[Trip],
    params: &CostParameters,
    options: &BilevelOptions,
) -> Result<BilevelSolution> {
    let existing: BTreeSet<usize> = (0..trips.len()).filter(|&i| !trips[i].is_potential()).collect();
    let has_potential = existing.len() < trips.len();

    let design_for = |active: &BTreeSet<usize>, fixed: &BTreeSet<usize>| -> Result<DesignVector> {
        let mut instance = FixedDemandInstance::new(network, active.iter().map(|&i| &trips[i]).collect(), params);
        for &slot in fixed {
            instance.forced_open[slot] = true;
        }
        let solution = solve_fixed_demand(&instance, &options.benders)?;
        if !solution.converged {
            log::warn!("fixed-demand design stopped at relative gap {:.3e}", solution.gap());
        }
        Ok(solution.design)
    };

    let mut state = AdoptionState {
        round: 0,
        active_riders: existing.clone(),
        fixed_open: BTreeSet::new(),
        design: design_for(&existing, &BTreeSet::new())?,
        history: Vec::new(),
    };

    let mut best: Option<(DesignVector, Vec<TripOutcome>, LeaderBreakdown)> = None;
    let mut seen: HashSet<BTreeSet<usize>> = HashSet::new();
    let mut converged = !has_potential;
    loop {
        let outcomes = evaluate_design(network, trips, &state.design, params)?;
        let breakdown = breakdown_of(network, trips, &state.design, &outcomes, params)?;
        let objective = breakdown.total();
        let adopters: BTreeSet<usize> = outcomes
            .iter()
            .filter(|o| o.decision.is_some_and(|d| d.adopted))
            .map(|o| o.trip)
            .collect();
        state.history.push(RoundRecord {
            round: state.round,
            adopter_hash: adopter_hash(trips, &adopters),
            adopters: adopters.len(),
            objective,
        });
        if best.as_ref().map_or(true, |(_, _, b)| objective < b.total()) {
            best = Some((state.design.clone(), outcomes.clone(), breakdown));
        }
        if !has_potential {
            break;
        }
        if !seen.insert(adopters.clone()) {
            converged = true;
            break;
        }
        if state.round >= options.max_rounds {
            break;
        }

        for o in &outcomes {
            if adopters.contains(&o.trip) {
                state
                    .fixed_open
                    .extend(o.route.arcs.iter().filter_map(|&a| network.bus_slot(a)));
            }
        }
        state.active_riders = existing.union(&adopters).copied().collect();
        state.design = design_for(&state.active_riders, &state.fixed_open)?;
        state.round += 1;
        debug_assert!(state.fixed_open.iter().all(|&s| state.design.is_open_slot(s)));
    }

    let (design, outcomes, breakdown) = best.expect("at least one round evaluated");
    Ok(BilevelSolution {
        design,
        outcomes,
        objective: breakdown.total(),
        breakdown,
        fixed_open: state.fixed_open,
        rounds: state.round,
        converged,
        history: state.history,
    })
}

/// Solves the bilevel problem once per adoption factor.
pub fn sweep_adoption_factor(
    network: &TransitNetwork,
    trips: &[Trip],
    params: &CostParameters,
    rho_values: &[f64],
    options: &BilevelOptions,
) -> Result<Vec<(f64, BilevelSolution)>> {
    rho_values
        .iter()
        .map(|&rho| {
            if !(rho.is_finite() && rho >= 0.0) {
                return Err(Error::InvalidArgument(format!("adoption factor {rho} must be non-negative")));
            }
            let p = CostParameters {
                adoption_factor: rho,
                ..params.clone()
            };
            Ok((rho, solve_bilevel(network, trips, &p, options)?))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::benders::{solve_fixed_demand, FixedDemandInstance};
    use crate::model::{Arc, Location, LocationKind, Locality, Mode, RiderClass};

    fn hub(id: &str) -> Location {
        Location {
            id: id.into(),
            lat: 0.0,
            lon: 0.0,
            kind: LocationKind::Hub,
        }
    }

    fn arc(id: &str, tail: &str, head: &str, mode: Mode, minutes: f64, miles: f64) -> Arc {
        Arc {
            id: id.into(),
            tail: tail.into(),
            head: head.into(),
            mode,
            frequency: (mode != Mode::Shuttle).then_some(4),
            travel_time: minutes,
            distance: miles,
            wait_time: 0.0,
            shuttle_cost_scale: 1.0,
        }
    }

    fn trip(id: &str, class: RiderClass, riders: u32, car_time: f64) -> Trip {
        Trip {
            id: id.into(),
            origin: "A".into(),
            destination: "B".into(),
            riders,
            rider_class: class,
            locality: Locality::Local,
            car_time,
            ticket_price: None,
        }
    }

    fn network() -> TransitNetwork {
        TransitNetwork::new(
            vec![hub("A"), hub("B")],
            vec![
                arc("s_ab", "A", "B", Mode::Shuttle, 30.0, 20.0),
                arc("s_ba", "B", "A", Mode::Shuttle, 30.0, 20.0),
                arc("ab", "A", "B", Mode::Bus, 30.0, 20.0),
                arc("ba", "B", "A", Mode::Bus, 30.0, 20.0),
            ],
        )
        .unwrap()
    }

    fn params() -> CostParameters {
        CostParameters {
            alpha: 0.5,
            ..CostParameters::default()
        }
    }

    fn path(primary_value: f64) -> RoutedPath {
        RoutedPath {
            arcs: vec![0],
            primary_value,
            trip_length: 30.0,
            hop_count: 1,
        }
    }

    #[test]
    fn no_potential_riders_is_one_fixed_demand_solve() {
        let net = network();
        let p = params();
        let trips = vec![trip("e", RiderClass::Existing, 20, 30.0)];
        let bilevel = solve_bilevel(&net, &trips, &p, &BilevelOptions::default()).unwrap();
        let fixed = solve_fixed_demand(&FixedDemandInstance::new(&net, trips.iter().collect(), &p), &BendersOptions::default()).unwrap();
        assert!(bilevel.converged);
        assert_eq!(bilevel.rounds, 0);
        assert_eq!(bilevel.design, fixed.design);
        assert!((bilevel.objective - fixed.objective.total).abs() < 1e-9);
    }

    #[test]
    fn huge_car_time_adopts_everyone_then_repeats() {
        let net = network();
        let p = params();
        let trips = vec![
            trip("e", RiderClass::Existing, 5, 30.0),
            trip("p1", RiderClass::Potential, 5, 1e12),
            trip("p2", RiderClass::Potential, 7, 1e12),
        ];
        let solution = solve_bilevel(&net, &trips, &p, &BilevelOptions::default()).unwrap();
        assert!(solution.converged);
        assert_eq!(solution.history.len(), 2);
        assert!(solution.history.iter().all(|r| r.adopters == 2));
        assert_eq!(solution.history[0].adopter_hash, solution.history[1].adopter_hash);
        assert_eq!(solution.adopters().count(), 2);
    }

    #[test]
    fn objective_recomputes_from_parts() {
        let net = network();
        let p = params();
        let trips = vec![
            trip("e", RiderClass::Existing, 12, 30.0),
            trip("p1", RiderClass::Potential, 10, 40.0),
            trip("p2", RiderClass::Potential, 3, 20.0),
        ];
        let solution = solve_bilevel(&net, &trips, &p, &BilevelOptions::default()).unwrap();
        let b = &solution.breakdown;
        assert!((solution.objective - (b.bus_fixed_cost + b.existing_routing + b.adopter_routing - b.ticket_benefit)).abs() < 1e-6);
        for &slot in &solution.fixed_open {
            assert!(solution.design.is_open_slot(slot));
        }
        assert!(solution.design.is_feasible(&net));
    }

    #[test]
    fn leader_objective_examples() {
        let net = network();
        let p = CostParameters::default();
        let closed = DesignVector::all_closed(&net);
        let trips = vec![trip("e", RiderClass::Existing, 1, 30.0), trip("p", RiderClass::Potential, 1, 30.0)];
        let mut routes = BTreeMap::from([(0, path(4.0))]);

        let none = leader_objective(&net, &closed, &trips, &routes, &BTreeSet::new(), &p).unwrap();
        assert_eq!(none.total(), 4.0);

        routes.insert(1, path(10.0));
        let one = leader_objective(&net, &closed, &trips, &routes, &BTreeSet::from([1]), &p).unwrap();
        assert!((one.total() - 4.0 - 6.8773).abs() < 1e-9);

        routes.remove(&1);
        assert!(matches!(
            leader_objective(&net, &closed, &trips, &routes, &BTreeSet::from([1]), &p),
            Err(Error::Consistency(_))
        ));
    }

    #[test]
    fn zero_adoption_factor_adopts_nobody() {
        let net = network();
        let trips = vec![
            trip("e", RiderClass::Existing, 20, 30.0),
            trip("p", RiderClass::Potential, 20, 1e9),
        ];
        let sweep = sweep_adoption_factor(&net, &trips, &params(), &[0.0, 1.5], &BilevelOptions::default()).unwrap();
        assert_eq!(sweep[0].1.adopters().count(), 0);
        assert_eq!(sweep[1].1.adopters().count(), 1);
        assert!(sweep_adoption_factor(&net, &trips, &params(), &[-1.0], &BilevelOptions::default()).is_err());
    }
}
