//! Random fixtures and brute-force oracles shared by the integration tests.
//!
//! Fixture numbers are dyadic (alpha in sixteenths, integer minutes and
//! miles, small integer rider counts) so path sums are exact in binary and
//! oracle comparisons can demand bit equality.

#![allow(dead_code)]

use std::collections::BTreeMap;

use odmts::{arc_fixed_cost, arc_trip_contribution, Arc, CostParameters, DesignVector, Location, LocationKind, Locality, Mode, RiderClass, TransitNetwork, Trip};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn location(id: &str, kind: LocationKind, lat: f64, lon: f64) -> Location {
    Location {
        id: id.into(),
        lat,
        lon,
        kind,
    }
}

pub fn arc(id: String, tail: &str, head: &str, mode: Mode, frequency: Option<u32>, minutes: f64, miles: f64, wait: f64) -> Arc {
    Arc {
        id,
        tail: tail.into(),
        head: head.into(),
        mode,
        frequency,
        travel_time: minutes,
        distance: miles,
        wait_time: wait,
        shuttle_cost_scale: 1.0,
    }
}

pub fn trip(id: &str, origin: &str, dest: &str, riders: u32, class: RiderClass, car_time: f64) -> Trip {
    Trip {
        id: id.into(),
        origin: origin.into(),
        destination: dest.into(),
        riders,
        rider_class: class,
        locality: Locality::NonLocal,
        car_time,
        ticket_price: None,
    }
}

fn dyadic_alpha(rng: &mut ChaCha8Rng) -> f64 {
    rng.gen_range(1..16) as f64 / 16.0
}

/// Random multigraph with at most 8 locations, 20 arcs and 6 bus arcs.
pub struct FollowerFixture {
    pub network: TransitNetwork,
    pub trip: Trip,
    pub params: CostParameters,
}

pub fn follower_fixture(seed: u64, transfer_limit: Option<u32>) -> FollowerFixture {
    let mut rng = rng(seed);
    let n = rng.gen_range(3..=8);
    let hubs = rng.gen_range(2..=n);
    let names: Vec<String> = (0..n).map(|i| format!("v{i}")).collect();
    let locations = names
        .iter()
        .enumerate()
        .map(|(i, id)| {
            let kind = if i < hubs { LocationKind::Hub } else { LocationKind::VirtualStop };
            location(id, kind, 0.0, i as f64 / 100.0)
        })
        .collect();

    let total = rng.gen_range(n..=20);
    let bus_count = rng.gen_range(0..=6usize).min(total);
    let rail_count = rng.gen_range(0..=2usize).min(total - bus_count);
    let mut arcs = Vec::new();
    let mut bus_shapes: BTreeMap<(usize, usize), (f64, f64, f64, Vec<u32>)> = BTreeMap::new();
    for k in 0..bus_count {
        let t = rng.gen_range(0..hubs);
        let h = (t + rng.gen_range(1..hubs)) % hubs;
        let shape = bus_shapes
            .entry((t, h))
            .or_insert_with(|| (rng.gen_range(0..20) as f64, rng.gen_range(0..15) as f64, rng.gen_range(0..4) as f64, Vec::new()));
        let frequency = (1..).find(|f| !shape.3.contains(f)).unwrap();
        shape.3.push(frequency);
        let (minutes, miles, wait) = (shape.0, shape.1, shape.2);
        arcs.push(arc(format!("b{k}"), &names[t], &names[h], Mode::Bus, Some(frequency), minutes, miles, wait));
    }
    for k in 0..rail_count {
        let t = rng.gen_range(0..hubs);
        let h = (t + rng.gen_range(1..hubs)) % hubs;
        let (minutes, miles, wait) = (rng.gen_range(0..20) as f64, rng.gen_range(0..15) as f64, rng.gen_range(0..4) as f64);
        arcs.push(arc(format!("r{k}"), &names[t], &names[h], Mode::Rail, Some(2), minutes, miles, wait));
    }
    for k in 0..total - bus_count - rail_count {
        let t = rng.gen_range(0..n);
        let h = (t + rng.gen_range(1..n)) % n;
        let (minutes, miles) = (rng.gen_range(0..30) as f64, rng.gen_range(0..12) as f64);
        let mut a = arc(format!("s{k}"), &names[t], &names[h], Mode::Shuttle, None, minutes, miles, 0.0);
        if rng.gen_bool(0.25) {
            a.shuttle_cost_scale = 1.5;
        }
        arcs.push(a);
    }
    arcs.shuffle(&mut rng);
    let network = TransitNetwork::new(locations, arcs).expect("fixture is valid");
    let o = rng.gen_range(0..n);
    let d = (o + rng.gen_range(1..n)) % n;
    let trip = trip("t", &names[o], &names[d], rng.gen_range(1..=4), RiderClass::Potential, 30.0);
    let params = CostParameters {
        alpha: dyadic_alpha(&mut rng),
        transfer_limit,
        ..CostParameters::default()
    };
    FollowerFixture { network, trip, params }
}

/// Every design over the network's bus arcs, in mask order.
pub fn all_designs(network: &TransitNetwork) -> Vec<DesignVector> {
    let b = network.bus_arcs().len();
    (0..1u64 << b)
        .map(|mask| DesignVector::from_slots((0..b).map(|s| mask >> s & 1 == 1).collect()))
        .collect()
}

/// Cost and length of the best simple path, by exhaustive enumeration.
pub fn brute_force_route(
    network: &TransitNetwork,
    trip: &Trip,
    design: &DesignVector,
    params: &CostParameters,
) -> Option<OraclePath> {
    let origin = network.location_index(&trip.origin).unwrap();
    let dest = network.location_index(&trip.destination).unwrap();
    let max_hops = params.transfer_limit.map_or(usize::MAX, |k| k as usize);
    let open: Vec<bool> = (0..network.arcs().len())
        .map(|a| match network.bus_slot(a) {
            Some(slot) => design.slots()[slot],
            None => true,
        })
        .collect();
    let mut best: Option<OraclePath> = None;
    let mut visited = vec![false; network.num_locations()];
    let mut stack = Vec::new();
    visited[origin] = true;
    enumerate(network, trip, params, &open, origin, dest, max_hops, &mut visited, &mut stack, 0.0, 0.0, &mut best);
    best
}

#[derive(Clone, Debug, PartialEq)]
pub struct OraclePath {
    pub cost: f64,
    pub length: f64,
    pub arcs: Vec<usize>,
}

#[allow(clippy::too_many_arguments)]
fn enumerate(
    network: &TransitNetwork,
    trip: &Trip,
    params: &CostParameters,
    open: &[bool],
    at: usize,
    dest: usize,
    max_hops: usize,
    visited: &mut [bool],
    stack: &mut Vec<usize>,
    cost: f64,
    length: f64,
    best: &mut Option<OraclePath>,
) {
    if at == dest {
        let better = best
            .as_ref()
            .map_or(true, |b| (cost, length) < (b.cost, b.length));
        if better {
            *best = Some(OraclePath {
                cost,
                length,
                arcs: stack.clone(),
            });
        }
        return;
    }
    if stack.len() == max_hops {
        return;
    }
    for (a, arc) in network.arcs().iter().enumerate() {
        if !open[a] || network.tail(a) != at {
            continue;
        }
        let next = network.head(a);
        if visited[next] {
            continue;
        }
        visited[next] = true;
        stack.push(a);
        let c = cost + arc_trip_contribution(arc, trip, params);
        let l = length + arc.travel_time + arc.wait_time;
        enumerate(network, trip, params, open, next, dest, max_hops, visited, stack, c, l, best);
        stack.pop();
        visited[next] = false;
    }
}

/// Frequency balance and one-frequency-per-pair, checked with integers.
pub fn design_is_feasible(network: &TransitNetwork, design: &DesignVector) -> bool {
    let mut balance = vec![0i64; network.num_locations()];
    let mut pairs: BTreeMap<(usize, usize), usize> = BTreeMap::new();
    for (slot, &a) in network.bus_arcs().iter().enumerate() {
        if !design.slots()[slot] {
            continue;
        }
        let f = network.arc(a).frequency.unwrap() as i64;
        balance[network.tail(a)] += f;
        balance[network.head(a)] -= f;
        *pairs.entry((network.tail(a), network.head(a))).or_default() += 1;
    }
    balance.iter().all(|&b| b == 0) && pairs.values().all(|&c| c <= 1)
}

pub fn fixed_cost(network: &TransitNetwork, design: &DesignVector, params: &CostParameters) -> f64 {
    network
        .bus_arcs()
        .iter()
        .enumerate()
        .filter(|(slot, _)| design.slots()[*slot])
        .map(|(_, &a)| arc_fixed_cost(network.arc(a), params).unwrap())
        .sum()
}

/// Fixed-demand optimum over all feasible designs that route every trip.
pub fn design_oracle(network: &TransitNetwork, trips: &[Trip], params: &CostParameters) -> Option<(f64, DesignVector)> {
    let mut best: Option<(f64, DesignVector)> = None;
    for design in all_designs(network) {
        if !design_is_feasible(network, &design) {
            continue;
        }
        let mut value = fixed_cost(network, &design, params);
        let mut routable = true;
        for t in trips {
            match brute_force_route(network, t, &design, params) {
                Some(p) => value += p.cost,
                None => {
                    routable = false;
                    break;
                }
            }
        }
        if routable && best.as_ref().map_or(true, |(b, _)| value < *b) {
            best = Some((value, design));
        }
    }
    best
}

/// Boardings that incur a wait: one per maximal run of bus or rail arcs.
pub fn waits(network: &TransitNetwork, arcs: &[usize]) -> usize {
    let modes: Vec<Mode> = arcs.iter().map(|&a| network.arc(a).mode).collect();
    (0..modes.len())
        .filter(|&i| modes[i] != Mode::Shuttle && (i == 0 || modes[i - 1] != modes[i]))
        .count()
}

/// Leader objective of a design with the adoption it induces, or `None` if
/// some trip cannot be routed.
pub fn induced_leader_value(network: &TransitNetwork, trips: &[Trip], design: &DesignVector, params: &CostParameters) -> Option<f64> {
    let mut value = fixed_cost(network, design, params);
    for t in trips {
        let path = brute_force_route(network, t, design, params)?;
        match t.rider_class {
            RiderClass::Existing => value += path.cost,
            RiderClass::Potential => {
                let wait = if params.synchronized { 0.0 } else { params.wait_minutes_bus_rail };
                let length = path.length + wait * waits(network, &path.arcs) as f64;
                if length <= params.adoption_factor * t.car_time {
                    let ticket = t.ticket_price.unwrap_or(match t.locality {
                        Locality::Local => params.ticket_local,
                        Locality::NonLocal => params.ticket_non_local,
                    });
                    value += path.cost - (1.0 - params.alpha) * t.riders as f64 * ticket;
                }
            }
        }
    }
    Some(value)
}

/// Exact bilevel optimum: every feasible design with its induced adoption.
pub fn bilevel_oracle(network: &TransitNetwork, trips: &[Trip], params: &CostParameters) -> Option<(f64, DesignVector)> {
    all_designs(network)
        .into_iter()
        .filter(|d| design_is_feasible(network, d))
        .filter_map(|d| induced_leader_value(network, trips, &d, params).map(|v| (v, d)))
        .min_by(|a, b| a.0.total_cmp(&b.0))
}

/// A design instance: 2 to 4 hubs, up to 2 virtual stops, shuttles between
/// every pair of locations, bus arcs in balanced pairs (at most 8), optional
/// rail, and up to 6 trips.
pub struct DesignFixture {
    pub network: TransitNetwork,
    pub trips: Vec<Trip>,
    pub params: CostParameters,
}

pub fn design_fixture(seed: u64, max_bus: usize, trips: usize, potential: usize) -> DesignFixture {
    let mut rng = rng(seed);
    let hubs = rng.gen_range(2..=4);
    let stops = rng.gen_range(0..=2);
    let names: Vec<String> = (0..hubs + stops).map(|i| format!("v{i}")).collect();
    let locations = names
        .iter()
        .enumerate()
        .map(|(i, id)| {
            let kind = if i < hubs { LocationKind::Hub } else { LocationKind::VirtualStop };
            location(id, kind, 0.0, i as f64 / 100.0)
        })
        .collect();
    let mut arcs = Vec::new();
    for (i, a) in names.iter().enumerate() {
        for (j, b) in names.iter().enumerate() {
            if i != j {
                let miles = rng.gen_range(2..16) as f64;
                let minutes = miles * 2.0 + rng.gen_range(0..6) as f64;
                arcs.push(arc(format!("s{i}_{j}"), a, b, Mode::Shuttle, None, minutes, miles, 0.0));
            }
        }
    }
    let mut pairs: Vec<(usize, usize)> = (0..hubs).flat_map(|i| (i + 1..hubs).map(move |j| (i, j))).collect();
    pairs.shuffle(&mut rng);
    let mut bus = 0;
    for (i, j) in pairs {
        if bus + 2 > max_bus {
            break;
        }
        let minutes = rng.gen_range(4..20) as f64;
        let miles = minutes / 2.0;
        let wait = rng.gen_range(0..3) as f64;
        let mut frequencies = vec![rng.gen_range(1..=3)];
        if bus + 4 <= max_bus && rng.gen_bool(0.3) {
            frequencies.push(frequencies[0] + 1);
        }
        for f in frequencies {
            for (t, h) in [(i, j), (j, i)] {
                arcs.push(arc(format!("b{t}_{h}_f{f}"), &names[t], &names[h], Mode::Bus, Some(f), minutes, miles, wait));
                bus += 1;
            }
        }
    }
    if hubs >= 3 && bus + 3 <= max_bus && rng.gen_bool(0.3) {
        // A one-way loop, balanced only when all three arcs open.
        for (t, h) in [(0, 1), (1, 2), (2, 0)] {
            let minutes = rng.gen_range(4..20) as f64;
            arcs.push(arc(format!("loop{t}_{h}"), &names[t], &names[h], Mode::Bus, Some(5), minutes, minutes / 2.0, 0.0));
        }
    }
    if rng.gen_bool(0.4) {
        let minutes = rng.gen_range(5..25) as f64;
        arcs.push(arc("rail".into(), &names[0], &names[hubs - 1], Mode::Rail, Some(6), minutes, minutes / 2.0, 2.0));
    }
    arcs.shuffle(&mut rng);
    let network = TransitNetwork::new(locations, arcs).expect("fixture is valid");
    let n = names.len();
    let trip_list = (0..trips)
        .map(|k| {
            let o = rng.gen_range(0..n);
            let d = (o + rng.gen_range(1..n)) % n;
            let class = if k < potential { RiderClass::Potential } else { RiderClass::Existing };
            let mut t = trip(&format!("t{k}"), &names[o], &names[d], rng.gen_range(1..=40), class, rng.gen_range(8..40) as f64);
            if rng.gen_bool(0.5) {
                t.locality = Locality::Local;
            }
            t
        })
        .collect();
    let params = CostParameters {
        alpha: dyadic_alpha(&mut rng),
        transfer_limit: [None, Some(2), Some(3)][rng.gen_range(0..3)],
        ..CostParameters::default()
    };
    DesignFixture {
        network,
        trips: trip_list,
        params,
    }
}
