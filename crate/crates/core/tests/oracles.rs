mod common;

use common::*;
use odmts::{
    solve_bilevel, solve_fixed_demand, BendersOptions, BilevelOptions, CostParameters, FixedDemandInstance, LocationKind, Mode, RiderClass,
    TransitNetwork, Trip,
};

/// Four hubs on a line, shuttles between every pair, three bus pairs
/// (6 bus arcs) between neighbours and across the ends.
fn four_hubs() -> TransitNetwork {
    let names = ["h0", "h1", "h2", "h3"];
    let locations = names
        .iter()
        .enumerate()
        .map(|(i, id)| location(id, LocationKind::Hub, 0.0, i as f64 / 10.0))
        .collect();
    let mut arcs = Vec::new();
    for (i, a) in names.iter().enumerate() {
        for (j, b) in names.iter().enumerate() {
            if i != j {
                let miles = 3.0 * (i as f64 - j as f64).abs() + 1.0;
                arcs.push(arc(format!("s{i}{j}"), a, b, Mode::Shuttle, None, 2.0 * miles + 2.0, miles, 0.0));
            }
        }
    }
    for (i, j, minutes) in [(0, 1, 6.0), (1, 2, 6.0), (0, 3, 12.0)] {
        arcs.push(arc(format!("b{i}{j}"), names[i], names[j], Mode::Bus, Some(2), minutes, minutes / 2.0, 1.0));
        arcs.push(arc(format!("b{j}{i}"), names[j], names[i], Mode::Bus, Some(2), minutes, minutes / 2.0, 1.0));
    }
    TransitNetwork::new(locations, arcs).unwrap()
}

fn params() -> CostParameters {
    CostParameters {
        alpha: 0.25,
        ..CostParameters::default()
    }
}

fn fixed_demand_trips() -> Vec<Trip> {
    vec![
        trip("a", "h0", "h3", 12, RiderClass::Existing, 20.0),
        trip("b", "h3", "h0", 9, RiderClass::Existing, 20.0),
        trip("c", "h0", "h2", 15, RiderClass::Existing, 20.0),
        trip("d", "h2", "h1", 4, RiderClass::Existing, 20.0),
        trip("e", "h1", "h0", 20, RiderClass::Existing, 20.0),
    ]
}

#[test]
fn fixed_demand_matches_design_enumeration() {
    let net = four_hubs();
    assert_eq!(net.bus_arcs().len(), 6);
    let trips = fixed_demand_trips();
    let p = params();
    let solution = solve_fixed_demand(&FixedDemandInstance::new(&net, trips.iter().collect(), &p), &BendersOptions::default()).unwrap();
    let (oracle, design) = design_oracle(&net, &trips, &p).unwrap();
    assert!(solution.converged);
    assert!((solution.objective.total - oracle).abs() <= 1e-6 * oracle.abs().max(1.0));
    assert_eq!(solution.design, design);
}

#[test]
fn doubling_bus_cost_closes_at_least_as_much_frequency() {
    let net = four_hubs();
    let trips = fixed_demand_trips();
    let closed = |p: &CostParameters| -> u32 {
        let (_, design) = design_oracle(&net, &trips, p).unwrap();
        let solved = solve_fixed_demand(&FixedDemandInstance::new(&net, trips.iter().collect(), p), &BendersOptions::default()).unwrap();
        assert_eq!(solved.design, design);
        net.bus_arcs()
            .iter()
            .enumerate()
            .filter(|(s, _)| !design.slots()[*s])
            .map(|(_, &a)| net.arc(a).frequency.unwrap())
            .sum()
    };
    let base = params();
    let doubled = CostParameters {
        bus_cost_per_hour: 2.0 * base.bus_cost_per_hour,
        ..base.clone()
    };
    assert!(closed(&doubled) >= closed(&base));
}

fn bilevel_trips() -> Vec<Trip> {
    vec![
        trip("e1", "h0", "h3", 10, RiderClass::Existing, 20.0),
        trip("e2", "h1", "h0", 14, RiderClass::Existing, 12.0),
        trip("p1", "h0", "h2", 12, RiderClass::Potential, 14.0),
        trip("p2", "h3", "h0", 8, RiderClass::Potential, 13.0),
        trip("p3", "h2", "h0", 6, RiderClass::Potential, 16.0),
    ]
}

#[test]
fn bilevel_matches_enumeration_across_adoption_factors() {
    let net = four_hubs();
    let trips = bilevel_trips();
    for rho in [1.4, 1.5, 1.6] {
        let p = CostParameters {
            adoption_factor: rho,
            ..params()
        };
        let solution = solve_bilevel(&net, &trips, &p, &BilevelOptions::default()).unwrap();
        let (oracle, _) = bilevel_oracle(&net, &trips, &p).unwrap();
        assert!(solution.converged);
        assert!((solution.objective - oracle).abs() <= 1e-6 * oracle.abs().max(1.0), "rho {rho}: {} vs {oracle}", solution.objective);
        let induced = induced_leader_value(&net, &trips, &solution.design, &p).unwrap();
        assert!((induced - solution.objective).abs() <= 1e-9 * oracle.abs().max(1.0));
    }
}

#[test]
fn existing_riders_always_ride() {
    let net = four_hubs();
    let trips = bilevel_trips();
    let solution = solve_bilevel(&net, &trips, &params(), &BilevelOptions::default()).unwrap();
    let existing = solution.outcomes.iter().filter(|o| o.decision.is_none() && o.is_active()).count();
    assert_eq!(existing, 2);
    assert!(solution.history.len() <= BilevelOptions::default().max_rounds + 1);
}
