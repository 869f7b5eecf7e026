//! Network, trips and cost parameters, plus the per-arc cost coefficients
//! used by the design and routing layers.
//!
//! Units: travel and wait times are minutes, distances are miles. The
//! inconvenience weight `alpha` multiplies minutes directly; the bus cost is
//! given per hour and converted internally.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Shuttle,
    Bus,
    Rail,
}

impl Mode {
    pub fn is_fixed_route(self) -> bool {
        matches!(self, Mode::Bus | Mode::Rail)
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Mode::Shuttle => "shuttle",
            Mode::Bus => "bus",
            Mode::Rail => "rail",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LocationKind {
    Hub,
    VirtualStop,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Location {
    pub id: String,
    pub lat: f64,
    pub lon: f64,
    pub kind: LocationKind,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Arc {
    pub id: String,
    pub tail: String,
    pub head: String,
    pub mode: Mode,
    /// Vehicles over the planning horizon; bus and rail only.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub frequency: Option<u32>,
    pub travel_time: f64,
    pub distance: f64,
    #[serde(default)]
    pub wait_time: f64,
    /// Multiplier on the shuttle cost per mile. Set by congestion scaling.
    #[serde(default = "one")]
    pub shuttle_cost_scale: f64,
}

fn one() -> f64 {
    1.0
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RiderClass {
    Existing,
    Potential,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Locality {
    Local,
    NonLocal,
}

impl fmt::Display for Locality {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Locality::Local => "local",
            Locality::NonLocal => "non_local",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Trip {
    pub id: String,
    pub origin: String,
    pub destination: String,
    pub riders: u32,
    pub rider_class: RiderClass,
    pub locality: Locality,
    pub car_time: f64,
    /// Fare per rider. Falls back to the locality default in the parameters.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ticket_price: Option<f64>,
}

impl Trip {
    pub fn is_potential(&self) -> bool {
        self.rider_class == RiderClass::Potential
    }

    pub fn ticket_price(&self, params: &CostParameters) -> f64 {
        self.ticket_price.unwrap_or(match self.locality {
            Locality::Local => params.ticket_local,
            Locality::NonLocal => params.ticket_non_local,
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CostParameters {
    pub alpha: f64,
    pub bus_cost_per_hour: f64,
    pub shuttle_cost_per_mile: f64,
    /// Maximum arcs per path; `None` is unbounded.
    pub transfer_limit: Option<u32>,
    pub adoption_factor: f64,
    pub wait_minutes_bus_rail: f64,
    /// Fully synchronized transfers: no wait is added after routing.
    pub synchronized: bool,
    pub ticket_local: f64,
    pub ticket_non_local: f64,
}

impl Default for CostParameters {
    fn default() -> Self {
        CostParameters {
            alpha: 0.1078,
            bus_cost_per_hour: 72.15,
            shuttle_cost_per_mile: 1.0,
            transfer_limit: None,
            adoption_factor: 1.5,
            wait_minutes_bus_rail: 5.0,
            synchronized: false,
            ticket_local: 3.5,
            ticket_non_local: 5.0,
        }
    }
}

impl CostParameters {
    pub fn validate(&self) -> Result<()> {
        let bad = |reason: &str| Err(Error::validation("parameters", "parameters", reason));
        if !(0.0..=1.0).contains(&self.alpha) {
            return bad("alpha must lie in [0, 1]");
        }
        let costs = [
            self.bus_cost_per_hour,
            self.shuttle_cost_per_mile,
            self.wait_minutes_bus_rail,
            self.ticket_local,
            self.ticket_non_local,
        ];
        if costs.iter().any(|c| !c.is_finite() || *c < 0.0) {
            return bad("costs, fares and wait times must be finite and non-negative");
        }
        if !(self.adoption_factor.is_finite() && self.adoption_factor > 0.0) {
            return bad("adoption factor must be positive");
        }
        if self.transfer_limit == Some(0) {
            return bad("transfer limit must be at least 1");
        }
        Ok(())
    }
}

/// Fixed cost of opening a bus arc: `(1 - alpha) * hours * frequency * bus cost`.
pub fn arc_fixed_cost(arc: &Arc, params: &CostParameters) -> Result<f64> {
    if arc.mode != Mode::Bus {
        return Err(Error::InvalidArgument(format!(
            "fixed cost requested for {} arc `{}`",
            arc.mode, arc.id
        )));
    }
    let frequency = arc.frequency.unwrap_or(0) as f64;
    Ok((1.0 - params.alpha) * (arc.travel_time / 60.0) * frequency * params.bus_cost_per_hour)
}

/// Cost-plus-inconvenience of sending `trip` over `arc`.
pub fn arc_trip_contribution(arc: &Arc, trip: &Trip, params: &CostParameters) -> f64 {
    let riders = trip.riders as f64;
    let alpha = params.alpha;
    match arc.mode {
        Mode::Shuttle => {
            let per_mile = params.shuttle_cost_per_mile * arc.shuttle_cost_scale;
            riders * ((1.0 - alpha) * arc.distance * per_mile + alpha * arc.travel_time)
        }
        Mode::Bus | Mode::Rail => riders * alpha * (arc.travel_time + arc.wait_time),
    }
}

/// Operating cost part of a shuttle leg, weighted by `1 - alpha`.
pub(crate) fn shuttle_cost_term(arc: &Arc, trip: &Trip, params: &CostParameters) -> f64 {
    if arc.mode != Mode::Shuttle {
        return 0.0;
    }
    let per_mile = params.shuttle_cost_per_mile * arc.shuttle_cost_scale;
    trip.riders as f64 * (1.0 - params.alpha) * arc.distance * per_mile
}

/// Ticket revenue credited to the design when a potential rider adopts.
pub fn ticket_benefit(trip: &Trip, params: &CostParameters) -> Result<f64> {
    if !trip.is_potential() {
        return Err(Error::InvalidArgument(format!(
            "ticket benefit is only defined for potential riders, `{}` is existing",
            trip.id
        )));
    }
    Ok((1.0 - params.alpha) * trip.riders as f64 * trip.ticket_price(params))
}

/// Directed multigraph of locations and mode-tagged arcs, indexed for routing.
#[derive(Clone, Debug)]
pub struct TransitNetwork {
    locations: Vec<Location>,
    arcs: Vec<Arc>,
    location_index: HashMap<String, usize>,
    arc_index: HashMap<String, usize>,
    tails: Vec<usize>,
    heads: Vec<usize>,
    out_arcs: Vec<Vec<usize>>,
    bus_arcs: Vec<usize>,
    bus_slot: Vec<Option<usize>>,
}

impl TransitNetwork {
    pub fn new(locations: Vec<Location>, arcs: Vec<Arc>) -> Result<Self> {
        let mut location_index = HashMap::with_capacity(locations.len());
        for (i, loc) in locations.iter().enumerate() {
            if !(loc.lat.is_finite() && loc.lon.is_finite()) {
                return Err(Error::validation("location", &loc.id, "coordinates must be finite"));
            }
            if location_index.insert(loc.id.clone(), i).is_some() {
                return Err(Error::validation("location", &loc.id, "duplicate id"));
            }
        }

        let mut arc_index = HashMap::with_capacity(arcs.len());
        let mut tails = Vec::with_capacity(arcs.len());
        let mut heads = Vec::with_capacity(arcs.len());
        let mut out_arcs = vec![Vec::new(); locations.len()];
        let mut bus_arcs = Vec::new();
        let mut bus_slot = vec![None; arcs.len()];
        for (i, arc) in arcs.iter().enumerate() {
            let fail = |reason: String| Err(Error::validation("arc", &arc.id, reason));
            if arc_index.insert(arc.id.clone(), i).is_some() {
                return fail("duplicate id".into());
            }
            let Some(&tail) = location_index.get(&arc.tail) else {
                return fail(format!("unknown tail location `{}`", arc.tail));
            };
            let Some(&head) = location_index.get(&arc.head) else {
                return fail(format!("unknown head location `{}`", arc.head));
            };
            if tail == head {
                return fail("tail and head coincide".into());
            }
            for (name, value) in [
                ("travel_time", arc.travel_time),
                ("distance", arc.distance),
                ("wait_time", arc.wait_time),
            ] {
                if !value.is_finite() || value < 0.0 {
                    return fail(format!("{name} must be finite and non-negative"));
                }
            }
            if !(arc.shuttle_cost_scale.is_finite() && arc.shuttle_cost_scale > 0.0) {
                return fail("shuttle_cost_scale must be positive".into());
            }
            match arc.mode {
                Mode::Shuttle => {
                    if arc.frequency.is_some() {
                        return fail("shuttle arcs carry no frequency".into());
                    }
                    if arc.wait_time != 0.0 {
                        return fail("shuttle arcs have no wait time".into());
                    }
                }
                Mode::Bus | Mode::Rail => {
                    if !matches!(arc.frequency, Some(f) if f > 0) {
                        return fail(format!("{} arcs need a positive frequency", arc.mode));
                    }
                    for (end, idx) in [(&arc.tail, tail), (&arc.head, head)] {
                        if locations[idx].kind != LocationKind::Hub {
                            return fail(format!("endpoint `{end}` is not a hub"));
                        }
                    }
                }
            }
            if arc.mode == Mode::Bus {
                bus_slot[i] = Some(bus_arcs.len());
                bus_arcs.push(i);
            }
            tails.push(tail);
            heads.push(head);
            out_arcs[tail].push(i);
        }

        // Parallel bus arcs model frequency options of one connection.
        let mut by_pair: BTreeMap<(usize, usize), Vec<usize>> = BTreeMap::new();
        for &a in &bus_arcs {
            by_pair.entry((tails[a], heads[a])).or_default().push(a);
        }
        for group in by_pair.values() {
            let first = &arcs[group[0]];
            for &a in &group[1..] {
                let arc = &arcs[a];
                if arc.travel_time != first.travel_time
                    || arc.distance != first.distance
                    || arc.wait_time != first.wait_time
                {
                    return Err(Error::validation(
                        "arc",
                        &arc.id,
                        format!("parallel bus arc differs from `{}` in more than frequency", first.id),
                    ));
                }
                if group.iter().any(|&b| b != a && arcs[b].frequency == arc.frequency) {
                    return Err(Error::validation(
                        "arc",
                        &arc.id,
                        "parallel bus arcs must have distinct frequencies",
                    ));
                }
            }
        }

        Ok(TransitNetwork {
            locations,
            arcs,
            location_index,
            arc_index,
            tails,
            heads,
            out_arcs,
            bus_arcs,
            bus_slot,
        })
    }

    pub fn locations(&self) -> &[Location] {
        &self.locations
    }

    pub fn arcs(&self) -> &[Arc] {
        &self.arcs
    }

    pub fn arc(&self, index: usize) -> &Arc {
        &self.arcs[index]
    }

    pub fn location(&self, index: usize) -> &Location {
        &self.locations[index]
    }

    pub fn location_index(&self, id: &str) -> Option<usize> {
        self.location_index.get(id).copied()
    }

    pub fn arc_index(&self, id: &str) -> Option<usize> {
        self.arc_index.get(id).copied()
    }

    pub fn tail(&self, arc: usize) -> usize {
        self.tails[arc]
    }

    pub fn head(&self, arc: usize) -> usize {
        self.heads[arc]
    }

    pub fn out_arcs(&self, location: usize) -> &[usize] {
        &self.out_arcs[location]
    }

    /// Arc indices of all bus arcs, in file order. A bus arc's position in
    /// this list is its design slot.
    pub fn bus_arcs(&self) -> &[usize] {
        &self.bus_arcs
    }

    pub fn bus_slot(&self, arc: usize) -> Option<usize> {
        self.bus_slot[arc]
    }

    pub fn num_locations(&self) -> usize {
        self.locations.len()
    }

    /// Groups of bus slots sharing the same (tail, head) hub pair.
    pub fn parallel_bus_groups(&self) -> Vec<Vec<usize>> {
        let mut by_pair: BTreeMap<(usize, usize), Vec<usize>> = BTreeMap::new();
        for (slot, &a) in self.bus_arcs.iter().enumerate() {
            by_pair.entry((self.tails[a], self.heads[a])).or_default().push(slot);
        }
        by_pair.into_values().collect()
    }

    /// Rebuilds the network with modified arc attributes (same ids and topology).
    pub fn with_arcs(&self, arcs: Vec<Arc>) -> Result<Self> {
        TransitNetwork::new(self.locations.clone(), arcs)
    }
}

/// A complete problem instance as stored on disk.
#[derive(Clone, Debug)]
pub struct Instance {
    pub network: TransitNetwork,
    pub trips: Vec<Trip>,
    pub params: CostParameters,
}

#[derive(Serialize)]
struct InstanceDoc<'a> {
    locations: &'a [Location],
    arcs: &'a [Arc],
    trips: &'a [Trip],
    parameters: &'a CostParameters,
}

impl Instance {
    pub fn new(network: TransitNetwork, trips: Vec<Trip>, params: CostParameters) -> Result<Self> {
        params.validate()?;
        let mut seen = HashMap::new();
        for trip in &trips {
            let fail = |reason: String| Err(Error::validation("trip", &trip.id, reason));
            if seen.insert(trip.id.as_str(), ()).is_some() {
                return fail("duplicate id".into());
            }
            for end in [&trip.origin, &trip.destination] {
                if network.location_index(end).is_none() {
                    return fail(format!("unknown location `{end}`"));
                }
            }
            if trip.origin == trip.destination {
                return fail("origin equals destination".into());
            }
            if trip.riders == 0 {
                return fail("rider count must be positive".into());
            }
            if !(trip.car_time.is_finite() && trip.car_time > 0.0) {
                return fail("car_time must be finite and positive".into());
            }
            if let Some(price) = trip.ticket_price {
                if !price.is_finite() || price < 0.0 {
                    return fail("ticket_price must be finite and non-negative".into());
                }
            }
        }
        Ok(Instance {
            network,
            trips,
            params,
        })
    }

    pub fn from_json_str(text: &str) -> Result<Self> {
        let doc: Value = serde_json::from_str(text)
            .map_err(|e| Error::validation("document", "instance", e.to_string()))?;
        let locations = parse_records::<Location>(&doc, "locations", "location")?;
        let arcs = parse_records::<Arc>(&doc, "arcs", "arc")?;
        let trips = parse_records::<Trip>(&doc, "trips", "trip")?;
        let params = match doc.get("parameters") {
            Some(v) => serde_json::from_value(v.clone())
                .map_err(|e| Error::validation("parameters", "parameters", e.to_string()))?,
            None => CostParameters::default(),
        };
        let network = TransitNetwork::new(locations, arcs)?;
        Instance::new(network, trips, params)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Instance::from_json_str(&text)
    }

    pub fn to_json(&self) -> String {
        let doc = InstanceDoc {
            locations: self.network.locations(),
            arcs: self.network.arcs(),
            trips: &self.trips,
            parameters: &self.params,
        };
        serde_json::to_string_pretty(&doc).expect("instance serializes")
    }

    pub fn trip(&self, id: &str) -> Option<&Trip> {
        self.trips.iter().find(|t| t.id == id)
    }
}

fn parse_records<T: DeserializeOwned>(doc: &Value, key: &str, kind: &'static str) -> Result<Vec<T>> {
    let Some(items) = doc.get(key) else {
        return Ok(Vec::new());
    };
    let items = items
        .as_array()
        .ok_or_else(|| Error::validation("document", key, "expected an array"))?;
    items
        .iter()
        .enumerate()
        .map(|(i, item)| {
            serde_json::from_value(item.clone()).map_err(|e| {
                let id = item
                    .get("id")
                    .and_then(Value::as_str)
                    .map(str::to_owned)
                    .unwrap_or_else(|| format!("#{i}"));
                Error::validation(kind, id, e.to_string())
            })
        })
        .collect()
}
