//! Solution documents and the tables derived from them.
//!
//! Every table here is a pure view of a [`SolutionDoc`] (plus the network
//! for geometry and arc costs), so reports can be regenerated from the JSON
//! written by a run.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::adoption::{BilevelSolution, LeaderBreakdown, RoundRecord};
use crate::error::{Error, Result};
use crate::model::{CostParameters, Locality, Mode, RiderClass, TransitNetwork, Trip};
use crate::router::{DesignVector, RoutedPath};

/// Combination of modes used by a route.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum ModeMix {
    #[serde(rename = "Bus")]
    Bus,
    #[serde(rename = "Rail")]
    Rail,
    #[serde(rename = "Bus and Rail")]
    BusRail,
    #[serde(rename = "Shuttle only")]
    ShuttleOnly,
    #[serde(rename = "Shuttle and Bus")]
    ShuttleBus,
    #[serde(rename = "Shuttle and Rail")]
    ShuttleRail,
    #[serde(rename = "Shuttle, Bus, and Rail")]
    ShuttleBusRail,
}

impl ModeMix {
    pub const ALL: [ModeMix; 7] = [
        ModeMix::Bus,
        ModeMix::BusRail,
        ModeMix::ShuttleBus,
        ModeMix::ShuttleBusRail,
        ModeMix::ShuttleOnly,
        ModeMix::ShuttleRail,
        ModeMix::Rail,
    ];

    pub fn label(self) -> &'static str {
        match self {
            ModeMix::Bus => "Bus",
            ModeMix::Rail => "Rail",
            ModeMix::BusRail => "Bus and Rail",
            ModeMix::ShuttleOnly => "Shuttle only",
            ModeMix::ShuttleBus => "Shuttle and Bus",
            ModeMix::ShuttleRail => "Shuttle and Rail",
            ModeMix::ShuttleBusRail => "Shuttle, Bus, and Rail",
        }
    }

    pub fn from_modes(modes: impl IntoIterator<Item = Mode>) -> Option<ModeMix> {
        let set: BTreeSet<Mode> = modes.into_iter().collect();
        let has = |m| set.contains(&m);
        Some(match (has(Mode::Shuttle), has(Mode::Bus), has(Mode::Rail)) {
            (false, true, false) => ModeMix::Bus,
            (false, false, true) => ModeMix::Rail,
            (false, true, true) => ModeMix::BusRail,
            (true, false, false) => ModeMix::ShuttleOnly,
            (true, true, false) => ModeMix::ShuttleBus,
            (true, false, true) => ModeMix::ShuttleRail,
            (true, true, true) => ModeMix::ShuttleBusRail,
            (false, false, false) => return None,
        })
    }
}

impl fmt::Display for ModeMix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

/// Mode combination of a route. Empty routes are reported as shuttle-only.
pub fn classify_mode(path: &RoutedPath, network: &TransitNetwork) -> ModeMix {
    ModeMix::from_modes(path.modes(network)).unwrap_or(ModeMix::ShuttleOnly)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TripRecord {
    pub id: String,
    pub rider_class: RiderClass,
    pub locality: Locality,
    pub riders: u32,
    pub car_time: f64,
    pub ticket_price: f64,
    pub route: Vec<String>,
    pub mode: ModeMix,
    pub primary_value: f64,
    /// Routed length without waits.
    pub trip_length: f64,
    /// Length with bus/rail waits.
    pub travel_time: f64,
    pub hop_count: usize,
    /// Potential riders only.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub adopted: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ratio: Option<f64>,
}

impl TripRecord {
    pub fn is_active(&self) -> bool {
        self.adopted.unwrap_or(true)
    }

    pub fn is_adopter(&self) -> bool {
        self.adopted == Some(true)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ObjectiveRecord {
    pub bus_fixed_cost: f64,
    pub existing_routing: f64,
    pub adopter_routing: f64,
    pub ticket_benefit: f64,
    pub total: f64,
}

impl From<&LeaderBreakdown> for ObjectiveRecord {
    fn from(b: &LeaderBreakdown) -> Self {
        ObjectiveRecord {
            bus_fixed_cost: b.bus_fixed_cost,
            existing_routing: b.existing_routing,
            adopter_routing: b.adopter_routing,
            ticket_benefit: b.ticket_benefit,
            total: b.total(),
        }
    }
}

/// Serialized form of a solved run. Field order is fixed for diffable output.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolutionDoc {
    pub scenario: String,
    pub dbl: bool,
    pub parameters: CostParameters,
    pub converged: bool,
    pub rounds: usize,
    pub objective: ObjectiveRecord,
    pub design: BTreeMap<String, bool>,
    pub fixed_open_arcs: Vec<String>,
    pub trips: Vec<TripRecord>,
    pub history: Vec<RoundRecord>,
}

impl SolutionDoc {
    pub fn new(
        network: &TransitNetwork,
        trips: &[Trip],
        params: &CostParameters,
        solution: &BilevelSolution,
        scenario: &str,
        dbl: bool,
    ) -> Self {
        let records = solution
            .outcomes
            .iter()
            .map(|o| {
                let trip = &trips[o.trip];
                TripRecord {
                    id: trip.id.clone(),
                    rider_class: trip.rider_class,
                    locality: trip.locality,
                    riders: trip.riders,
                    car_time: trip.car_time,
                    ticket_price: trip.ticket_price(params),
                    route: o.route.arc_ids(network),
                    mode: classify_mode(&o.route, network),
                    primary_value: o.route.primary_value,
                    trip_length: o.route.trip_length,
                    travel_time: o.travel_time,
                    hop_count: o.route.hop_count,
                    adopted: o.decision.map(|d| d.adopted),
                    ratio: o.decision.map(|d| d.ratio),
                }
            })
            .collect();
        let mut fixed_open_arcs: Vec<String> = solution
            .fixed_open
            .iter()
            .map(|&s| network.arc(network.bus_arcs()[s]).id.clone())
            .collect();
        fixed_open_arcs.sort();
        SolutionDoc {
            scenario: scenario.to_owned(),
            dbl,
            parameters: params.clone(),
            converged: solution.converged,
            rounds: solution.rounds,
            objective: ObjectiveRecord::from(&solution.breakdown),
            design: solution.design.to_map(network),
            fixed_open_arcs,
            trips: records,
            history: solution.history.clone(),
        }
    }

    pub fn to_json(&self) -> String {
        let mut text = serde_json::to_string_pretty(self).expect("solution serializes");
        text.push('\n');
        text
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::validation("document", "solution", e.to_string()))
    }

    pub fn design_vector(&self, network: &TransitNetwork) -> Result<DesignVector> {
        DesignVector::from_map(network, &self.design)
    }
}

/// Cost and revenue in currency, without the objective weights.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CostReport {
    pub scenario: String,
    pub dbl: bool,
    pub ridership: u64,
    pub total_cost: f64,
    pub bus_cost: f64,
    pub shuttle_cost: f64,
    pub revenue: f64,
    pub net_profit_per_rider: f64,
}

pub fn cost_report(network: &TransitNetwork, doc: &SolutionDoc) -> Result<CostReport> {
    let params = &doc.parameters;
    let mut bus_cost = 0.0;
    for (id, &open) in &doc.design {
        if open {
            let arc = network.arc(arc_by_id(network, id)?);
            bus_cost += arc.travel_time / 60.0 * arc.frequency.unwrap_or(0) as f64 * params.bus_cost_per_hour;
        }
    }
    let mut shuttle_cost = 0.0;
    let mut revenue = 0.0;
    let mut ridership = 0u64;
    for trip in doc.trips.iter().filter(|t| t.is_active()) {
        ridership += trip.riders as u64;
        revenue += trip.riders as f64 * trip.ticket_price;
        for id in &trip.route {
            let arc = network.arc(arc_by_id(network, id)?);
            if arc.mode == Mode::Shuttle {
                shuttle_cost +=
                    trip.riders as f64 * arc.distance * params.shuttle_cost_per_mile * arc.shuttle_cost_scale;
            }
        }
    }
    let total_cost = bus_cost + shuttle_cost;
    Ok(CostReport {
        scenario: doc.scenario.clone(),
        dbl: doc.dbl,
        ridership,
        total_cost,
        bus_cost,
        shuttle_cost,
        revenue,
        net_profit_per_rider: if ridership > 0 {
            (revenue - total_cost) / ridership as f64
        } else {
            0.0
        },
    })
}

fn arc_by_id(network: &TransitNetwork, id: &str) -> Result<usize> {
    network
        .arc_index(id)
        .ok_or_else(|| Error::Consistency(format!("solution references unknown arc `{id}`")))
}

/// One row of the adoption and travel-time table. Counts are riders.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdoptionRow {
    pub scenario: String,
    pub dbl: String,
    pub locality: String,
    pub existing_count: u64,
    pub potential_count: u64,
    pub adoption_count: u64,
    pub adoption_rate: f64,
    pub pre_dbl: Option<u64>,
    pub post_dbl: Option<u64>,
    pub car_existing: Option<f64>,
    pub odmts_existing: Option<f64>,
    pub odmts_adopters: Option<f64>,
    pub odmts_pre_dbl: Option<f64>,
    pub odmts_post_dbl: Option<f64>,
}

fn weighted_mean<'a>(items: impl Iterator<Item = (&'a TripRecord, f64)>) -> Option<f64> {
    let (mut sum, mut weight) = (0.0, 0.0);
    for (t, v) in items {
        sum += t.riders as f64 * v;
        weight += t.riders as f64;
    }
    (weight > 0.0).then(|| sum / weight)
}

fn riders<'a>(items: impl Iterator<Item = &'a TripRecord>) -> u64 {
    items.map(|t| t.riders as u64).sum()
}

const LOCALITY_GROUPS: [(&str, Option<Locality>); 3] = [
    ("non_local", Some(Locality::NonLocal)),
    ("local", Some(Locality::Local)),
    ("all", None),
];

/// Adoption table for one run. With `pre_dbl_set` (ids of potential riders
/// that adopted without dedicated lanes), adopters are split into those
/// already adopting without lanes and those gained by them.
pub fn adoption_rows(doc: &SolutionDoc, pre_dbl_set: Option<&BTreeSet<String>>) -> Vec<AdoptionRow> {
    LOCALITY_GROUPS
        .iter()
        .map(|&(name, locality)| {
            let group: Vec<&TripRecord> = doc
                .trips
                .iter()
                .filter(|t| locality.map_or(true, |l| t.locality == l))
                .collect();
            let existing = || group.iter().copied().filter(|t| t.rider_class == RiderClass::Existing);
            let potential = || group.iter().copied().filter(|t| t.rider_class == RiderClass::Potential);
            let adopters = || potential().filter(|t| t.is_adopter());
            let potential_count = riders(potential());
            let adoption_count = riders(adopters());
            let in_pre = |t: &TripRecord| pre_dbl_set.is_some_and(|s| s.contains(&t.id));

            let (pre_dbl, post_dbl, odmts_pre_dbl, odmts_post_dbl) = match pre_dbl_set {
                None => (None, None, None, None),
                Some(_) => {
                    let pre_members = || potential().filter(|t| in_pre(t));
                    // Riders gained by the lanes: adopters (in the lane run) outside the pre set.
                    let post_members = || potential().filter(|t| t.is_adopter() && !in_pre(t));
                    let counts = if doc.dbl {
                        (
                            Some(riders(adopters().filter(|t| in_pre(t)))),
                            Some(riders(post_members())),
                        )
                    } else {
                        (None, None)
                    };
                    (
                        counts.0,
                        counts.1,
                        weighted_mean(pre_members().map(|t| (t, t.travel_time))),
                        weighted_mean(post_members().map(|t| (t, t.travel_time))),
                    )
                }
            };
            AdoptionRow {
                scenario: doc.scenario.clone(),
                dbl: if doc.dbl { "Yes" } else { "No" }.to_owned(),
                locality: name.to_owned(),
                existing_count: riders(existing()),
                potential_count,
                adoption_count,
                adoption_rate: if potential_count > 0 {
                    adoption_count as f64 / potential_count as f64
                } else {
                    0.0
                },
                pre_dbl,
                post_dbl,
                car_existing: weighted_mean(existing().map(|t| (t, t.car_time))),
                odmts_existing: weighted_mean(existing().map(|t| (t, t.travel_time))),
                odmts_adopters: weighted_mean(adopters().map(|t| (t, t.travel_time))),
                odmts_pre_dbl,
                odmts_post_dbl,
            }
        })
        .collect()
}

/// Paired comparison of a run without and with dedicated lanes. In the
/// no-lane row the post-lane travel times are those offered (but declined)
/// to the riders the lanes later attract.
pub fn paired_adoption_rows(without: &SolutionDoc, with: &SolutionDoc) -> Result<Vec<AdoptionRow>> {
    let ids = |d: &SolutionDoc| d.trips.iter().map(|t| t.id.clone()).collect::<Vec<_>>();
    if ids(without) != ids(with) {
        return Err(Error::InvalidArgument("paired runs must share the same trips".into()));
    }
    let pre: BTreeSet<String> = without.trips.iter().filter(|t| t.is_adopter()).map(|t| t.id.clone()).collect();
    let post: BTreeSet<String> = with
        .trips
        .iter()
        .filter(|t| t.is_adopter() && !pre.contains(&t.id))
        .map(|t| t.id.clone())
        .collect();
    let mut rows = adoption_rows(without, Some(&pre));
    // Travel times the lane adopters faced without lanes.
    for (row, &(_, locality)) in rows.iter_mut().zip(LOCALITY_GROUPS.iter()) {
        row.odmts_post_dbl = weighted_mean(
            without
                .trips
                .iter()
                .filter(|t| locality.map_or(true, |l| t.locality == l) && post.contains(&t.id))
                .map(|t| (t, t.travel_time)),
        );
    }
    rows.extend(adoption_rows(with, Some(&pre)));
    Ok(rows)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModeRow {
    pub scenario: String,
    pub dbl: String,
    pub mode: String,
    pub local: u64,
    pub non_local: u64,
    pub total: u64,
}

/// Mode distribution of adopted potential riders.
pub fn mode_rows(doc: &SolutionDoc) -> Vec<ModeRow> {
    ModeMix::ALL
        .iter()
        .map(|&mix| {
            let count = |l: Locality| {
                riders(
                    doc.trips
                        .iter()
                        .filter(|t| t.is_adopter() && t.locality == l && t.mode == mix),
                )
            };
            let (local, non_local) = (count(Locality::Local), count(Locality::NonLocal));
            ModeRow {
                scenario: doc.scenario.clone(),
                dbl: if doc.dbl { "Yes" } else { "No" }.to_owned(),
                mode: mix.label().to_owned(),
                local,
                non_local,
                total: local + non_local,
            }
        })
        .collect()
}

/// GeoJSON line features for open bus arcs, rail arcs and shuttle arcs used
/// by at least one active rider, with rider usage as `riders`.
pub fn geojson(network: &TransitNetwork, doc: &SolutionDoc) -> Result<Value> {
    let mut usage = vec![0u64; network.arcs().len()];
    for trip in doc.trips.iter().filter(|t| t.is_active()) {
        for id in &trip.route {
            usage[arc_by_id(network, id)?] += trip.riders as u64;
        }
    }
    let mut features = Vec::new();
    for (a, arc) in network.arcs().iter().enumerate() {
        let include = match arc.mode {
            Mode::Bus => doc.design.get(&arc.id).copied().unwrap_or(false),
            Mode::Rail => true,
            Mode::Shuttle => usage[a] > 0,
        };
        if !include {
            continue;
        }
        let tail = network.location(network.tail(a));
        let head = network.location(network.head(a));
        features.push(json!({
            "type": "Feature",
            "geometry": {
                "type": "LineString",
                "coordinates": [[tail.lon, tail.lat], [head.lon, head.lat]],
            },
            "properties": {
                "id": arc.id,
                "mode": arc.mode.to_string(),
                "frequency": arc.frequency,
                "travel_time": arc.travel_time,
                "riders": usage[a],
            },
        }));
    }
    Ok(json!({ "type": "FeatureCollection", "features": features }))
}

/// Serializes rows as CSV with a header line.
pub fn to_csv<T: Serialize>(rows: &[T]) -> String {
    let mut writer = csv::Writer::from_writer(Vec::new());
    for row in rows {
        writer.serialize(row).expect("rows serialize");
    }
    String::from_utf8(writer.into_inner().expect("in-memory writer")).expect("csv is utf-8")
}
