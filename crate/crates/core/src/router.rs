//! Follower routing: lexicographic (cost, length) shortest paths under a
//! bus design and a hop limit, and the adoption choice.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BinaryHeap};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{arc_trip_contribution, CostParameters, Mode, TransitNetwork, Trip};

/// Open/closed state of every bus arc, indexed by design slot
/// (see [`TransitNetwork::bus_arcs`]). Shuttle and rail arcs are always open.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct DesignVector {
    open: Vec<bool>,
}

impl DesignVector {
    pub fn all_closed(network: &TransitNetwork) -> Self {
        DesignVector {
            open: vec![false; network.bus_arcs().len()],
        }
    }

    pub fn all_open(network: &TransitNetwork) -> Self {
        DesignVector {
            open: vec![true; network.bus_arcs().len()],
        }
    }

    pub fn from_slots(open: Vec<bool>) -> Self {
        DesignVector { open }
    }

    pub fn from_open_ids<'a>(network: &TransitNetwork, ids: impl IntoIterator<Item = &'a str>) -> Result<Self> {
        let mut design = DesignVector::all_closed(network);
        for id in ids {
            let slot = network
                .arc_index(id)
                .and_then(|a| network.bus_slot(a))
                .ok_or_else(|| Error::InvalidArgument(format!("`{id}` is not a bus arc")))?;
            design.open[slot] = true;
        }
        Ok(design)
    }

    /// Parses a map keyed by every bus arc id.
    pub fn from_map(network: &TransitNetwork, map: &BTreeMap<String, bool>) -> Result<Self> {
        if map.len() != network.bus_arcs().len() {
            return Err(Error::InvalidArgument(format!(
                "design has {} entries, network has {} bus arcs",
                map.len(),
                network.bus_arcs().len()
            )));
        }
        let open_ids = map.iter().filter(|(_, &open)| open).map(|(id, _)| id.as_str());
        let design = DesignVector::from_open_ids(network, open_ids)?;
        for id in map.keys() {
            if network.arc_index(id).and_then(|a| network.bus_slot(a)).is_none() {
                return Err(Error::InvalidArgument(format!("`{id}` is not a bus arc")));
            }
        }
        Ok(design)
    }

    pub fn to_map(&self, network: &TransitNetwork) -> BTreeMap<String, bool> {
        network
            .bus_arcs()
            .iter()
            .zip(&self.open)
            .map(|(&a, &open)| (network.arc(a).id.clone(), open))
            .collect()
    }

    pub fn len(&self) -> usize {
        self.open.len()
    }

    pub fn is_empty(&self) -> bool {
        self.open.is_empty()
    }

    pub fn slots(&self) -> &[bool] {
        &self.open
    }

    pub fn is_open_slot(&self, slot: usize) -> bool {
        self.open[slot]
    }

    pub fn set_slot(&mut self, slot: usize, open: bool) {
        self.open[slot] = open;
    }

    pub fn open_slots(&self) -> impl Iterator<Item = usize> + '_ {
        self.open.iter().enumerate().filter(|(_, &o)| o).map(|(s, _)| s)
    }

    /// Arc indices of open bus arcs.
    pub fn open_arcs<'n>(&'n self, network: &'n TransitNetwork) -> impl Iterator<Item = usize> + 'n {
        self.open_slots().map(move |s| network.bus_arcs()[s])
    }

    pub fn open_ids(&self, network: &TransitNetwork) -> Vec<String> {
        self.open_arcs(network).map(|a| network.arc(a).id.clone()).collect()
    }

    /// Whether a route may use the arc with the given index.
    pub fn allows(&self, network: &TransitNetwork, arc: usize) -> bool {
        network.bus_slot(arc).map_or(true, |slot| self.open[slot])
    }

    /// Total frequency out minus in at every location, over open bus arcs.
    pub fn frequency_imbalance(&self, network: &TransitNetwork) -> Vec<i64> {
        let mut net = vec![0i64; network.num_locations()];
        for a in self.open_arcs(network) {
            let f = network.arc(a).frequency.unwrap_or(0) as i64;
            net[network.tail(a)] += f;
            net[network.head(a)] -= f;
        }
        net
    }

    /// Frequency balance at every hub and at most one open arc per hub pair.
    pub fn is_feasible(&self, network: &TransitNetwork) -> bool {
        self.frequency_imbalance(network).iter().all(|&d| d == 0)
            && network
                .parallel_bus_groups()
                .iter()
                .all(|g| g.iter().filter(|&&s| self.open[s]).count() <= 1)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RoutedPath {
    /// Arc indices from origin to destination.
    pub arcs: Vec<usize>,
    pub primary_value: f64,
    pub trip_length: f64,
    pub hop_count: usize,
}

impl RoutedPath {
    pub fn arc_ids(&self, network: &TransitNetwork) -> Vec<String> {
        self.arcs.iter().map(|&a| network.arc(a).id.clone()).collect()
    }

    pub fn modes<'n>(&'n self, network: &'n TransitNetwork) -> impl Iterator<Item = Mode> + 'n {
        self.arcs.iter().map(move |&a| network.arc(a).mode)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdoptionDecision {
    pub adopted: bool,
    pub ratio: f64,
}

/// Hop limit that can actually bind: no optimal path needs more than
/// `|V| - 1` arcs, so larger limits behave as unbounded.
pub fn effective_hop_limit(network: &TransitNetwork, params: &CostParameters) -> Option<usize> {
    let useful = network.num_locations().saturating_sub(1);
    match params.transfer_limit {
        Some(k) if (k as usize) < useful => Some(k as usize),
        _ => None,
    }
}

#[derive(Clone, Debug)]
struct Label {
    cost: f64,
    length: f64,
    arcs: Vec<usize>,
}

impl Label {
    fn extend(&self, arc: usize, cost: f64, length: f64) -> Label {
        let mut arcs = Vec::with_capacity(self.arcs.len() + 1);
        arcs.extend_from_slice(&self.arcs);
        arcs.push(arc);
        Label {
            cost: self.cost + cost,
            length: self.length + length,
            arcs,
        }
    }

    // Cost, then length, then fewer arcs, then smallest arc sequence.
    fn order(&self, other: &Label) -> Ordering {
        self.cost
            .total_cmp(&other.cost)
            .then(self.length.total_cmp(&other.length))
            .then(self.arcs.len().cmp(&other.arcs.len()))
            .then_with(|| self.arcs.cmp(&other.arcs))
    }

    fn into_path(self) -> RoutedPath {
        RoutedPath {
            hop_count: self.arcs.len(),
            arcs: self.arcs,
            primary_value: self.cost,
            trip_length: self.length,
        }
    }
}

struct HeapEntry(Label, usize);

impl PartialEq for HeapEntry {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}
impl Eq for HeapEntry {}
impl PartialOrd for HeapEntry {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for HeapEntry {
    fn cmp(&self, other: &Self) -> Ordering {
        // Reversed for a min-heap.
        other.0.order(&self.0).then(other.1.cmp(&self.1))
    }
}

/// Per-arc primary cost and length of a trip. Closed arcs are reported as `None`.
pub(crate) fn arc_weights(
    network: &TransitNetwork,
    trip: &Trip,
    params: &CostParameters,
    allowed: impl Fn(usize) -> bool,
) -> Vec<Option<(f64, f64)>> {
    network
        .arcs()
        .iter()
        .enumerate()
        .map(|(i, arc)| {
            allowed(i).then(|| {
                (
                    arc_trip_contribution(arc, trip, params),
                    arc.travel_time + arc.wait_time,
                )
            })
        })
        .collect()
}

/// Lexicographically best path from `origin` to `dest` using at most
/// `hop_limit` arcs (`None` = unbounded).
pub(crate) fn lexicographic_path(
    network: &TransitNetwork,
    weights: &[Option<(f64, f64)>],
    origin: usize,
    dest: usize,
    hop_limit: Option<usize>,
) -> Option<RoutedPath> {
    let start = Label {
        cost: 0.0,
        length: 0.0,
        arcs: Vec::new(),
    };
    match hop_limit {
        None => {
            let n = network.num_locations();
            let mut best: Vec<Option<Label>> = vec![None; n];
            let mut settled = vec![false; n];
            let mut heap = BinaryHeap::new();
            best[origin] = Some(start.clone());
            heap.push(HeapEntry(start, origin));
            while let Some(HeapEntry(label, v)) = heap.pop() {
                if settled[v] {
                    continue;
                }
                settled[v] = true;
                if v == dest {
                    return Some(label.into_path());
                }
                for &a in network.out_arcs(v) {
                    let Some((cost, length)) = weights[a] else { continue };
                    let w = network.head(a);
                    if settled[w] {
                        continue;
                    }
                    let cand = label.extend(a, cost, length);
                    if best[w].as_ref().map_or(true, |b| cand.order(b) == Ordering::Less) {
                        best[w] = Some(cand.clone());
                        heap.push(HeapEntry(cand, w));
                    }
                }
            }
            None
        }
        Some(limit) => {
            // Layered labels: layer h holds the best label reaching each node with exactly h arcs.
            let n = network.num_locations();
            let mut layer: Vec<Option<Label>> = vec![None; n];
            layer[origin] = Some(start);
            let mut result: Option<Label> = None;
            for _ in 0..limit {
                let mut next: Vec<Option<Label>> = vec![None; n];
                for (v, label) in layer.iter().enumerate() {
                    let Some(label) = label else { continue };
                    for &a in network.out_arcs(v) {
                        let Some((cost, length)) = weights[a] else { continue };
                        let w = network.head(a);
                        let cand = label.extend(a, cost, length);
                        if next[w].as_ref().map_or(true, |b| cand.order(b) == Ordering::Less) {
                            next[w] = Some(cand);
                        }
                    }
                }
                if let Some(at_dest) = &next[dest] {
                    if result.as_ref().map_or(true, |r| at_dest.order(r) == Ordering::Less) {
                        result = Some(at_dest.clone());
                    }
                }
                layer = next;
            }
            result.map(Label::into_path)
        }
    }
}

fn endpoints(network: &TransitNetwork, trip: &Trip) -> Result<(usize, usize)> {
    let find = |id: &str| {
        network
            .location_index(id)
            .ok_or_else(|| Error::InvalidArgument(format!("trip `{}`: unknown location `{id}`", trip.id)))
    };
    Ok((find(&trip.origin)?, find(&trip.destination)?))
}

/// Best path for a trip under a fixed design: minimum cost-plus-inconvenience,
/// ties broken by trip length. `Ok(None)` when the hop limit admits no path.
pub fn solve_follower(
    trip: &Trip,
    network: &TransitNetwork,
    design: &DesignVector,
    params: &CostParameters,
) -> Result<Option<RoutedPath>> {
    if design.len() != network.bus_arcs().len() {
        return Err(Error::InvalidArgument(format!(
            "design covers {} bus arcs, network has {}",
            design.len(),
            network.bus_arcs().len()
        )));
    }
    let (origin, dest) = endpoints(network, trip)?;
    let weights = arc_weights(network, trip, params, |a| design.allows(network, a));
    Ok(lexicographic_path(
        network,
        &weights,
        origin,
        dest,
        effective_hop_limit(network, params),
    ))
}

/// Adopt when the offered trip length is at most `rho` times the car time.
pub fn evaluate_choice(path: &RoutedPath, trip: &Trip, params: &CostParameters) -> AdoptionDecision {
    AdoptionDecision {
        adopted: path.trip_length <= params.adoption_factor * trip.car_time,
        ratio: path.trip_length / trip.car_time,
    }
}

/// Number of boardings that incur a wait: each maximal run of bus arcs and
/// each maximal run of rail arcs counts once.
pub fn boarding_events(path: &RoutedPath, network: &TransitNetwork) -> usize {
    let mut events = 0;
    let mut previous = None;
    for mode in path.modes(network) {
        if mode.is_fixed_route() && previous != Some(mode) {
            events += 1;
        }
        previous = Some(mode);
    }
    events
}

/// Adds the bus/rail wait per boarding to the trip length.
pub fn apply_wait_postprocessing(path: &RoutedPath, network: &TransitNetwork, params: &CostParameters) -> RoutedPath {
    let mut out = path.clone();
    if !params.synchronized {
        out.trip_length += params.wait_minutes_bus_rail * boarding_events(path, network) as f64;
    }
    out
}
