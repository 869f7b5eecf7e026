//! Congestion scenarios: region-pair scaling factors anchored at query
//! reference locations (QRLs), and the dedicated-bus-lane overlay.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Mode, TransitNetwork, Trip};

const EARTH_RADIUS_MILES: f64 = 3958.8;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Qrl {
    pub id: String,
    pub lat: f64,
    pub lon: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct QrlSet {
    points: Vec<Qrl>,
}

/// Great-circle distance in miles.
pub fn haversine_miles(a: (f64, f64), b: (f64, f64)) -> f64 {
    let (lat1, lon1) = (a.0.to_radians(), a.1.to_radians());
    let (lat2, lon2) = (b.0.to_radians(), b.1.to_radians());
    let h = ((lat2 - lat1) / 2.0).sin().powi(2) + lat1.cos() * lat2.cos() * ((lon2 - lon1) / 2.0).sin().powi(2);
    2.0 * EARTH_RADIUS_MILES * h.sqrt().min(1.0).asin()
}

impl QrlSet {
    pub fn new(mut points: Vec<Qrl>) -> Result<Self> {
        if points.len() < 2 {
            return Err(Error::Config(format!(
                "at least two query reference locations required, got {}",
                points.len()
            )));
        }
        // Sorting by id makes "first minimum" the lowest-id tie-break.
        points.sort_by(|a, b| a.id.cmp(&b.id));
        for pair in points.windows(2) {
            if pair[0].id == pair[1].id {
                return Err(Error::validation("qrl", &pair[0].id, "duplicate id"));
            }
        }
        if let Some(p) = points.iter().find(|p| !(p.lat.is_finite() && p.lon.is_finite())) {
            return Err(Error::validation("qrl", &p.id, "coordinates must be finite"));
        }
        Ok(QrlSet { points })
    }

    /// Reads a CSV with header `id,lat,lon`.
    pub fn from_csv(path: &Path) -> Result<Self> {
        let mut reader = csv::Reader::from_path(path).map_err(|source| Error::Csv {
            path: path.into(),
            source,
        })?;
        let points = reader
            .deserialize()
            .collect::<std::result::Result<Vec<Qrl>, _>>()
            .map_err(|source| Error::Csv {
                path: path.into(),
                source,
            })?;
        QrlSet::new(points)
    }

    pub fn points(&self) -> &[Qrl] {
        &self.points
    }

    fn closest(&self, at: (f64, f64), skip: Option<usize>) -> usize {
        let mut best: Option<(usize, f64)> = None;
        for (i, q) in self.points.iter().enumerate() {
            if Some(i) == skip {
                continue;
            }
            let d = haversine_miles(at, (q.lat, q.lon));
            if best.map_or(true, |(_, bd)| d < bd) {
                best = Some((i, d));
            }
        }
        best.expect("at least two points").0
    }

    /// Closest QRL to a coordinate; ties go to the lowest id.
    pub fn nearest(&self, at: (f64, f64)) -> &Qrl {
        &self.points[self.closest(at, None)]
    }

    /// Closest QRL to `id` other than itself; ties go to the lowest id.
    pub fn nearest_other(&self, id: &str) -> Option<&Qrl> {
        let i = self.points.iter().position(|q| q.id == id)?;
        let q = &self.points[i];
        Some(&self.points[self.closest((q.lat, q.lon), Some(i))])
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum ScenarioTag {
    #[serde(rename = "baseline")]
    Baseline,
    #[serde(rename = "expected")]
    Expected,
    #[serde(rename = "50-50")]
    FiftyFifty,
    #[serde(rename = "pessimistic")]
    Pessimistic,
    #[serde(rename = "custom")]
    Custom,
}

impl ScenarioTag {
    pub const QUERIED: [ScenarioTag; 4] = [
        ScenarioTag::Baseline,
        ScenarioTag::Expected,
        ScenarioTag::FiftyFifty,
        ScenarioTag::Pessimistic,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ScenarioTag::Baseline => "baseline",
            ScenarioTag::Expected => "expected",
            ScenarioTag::FiftyFifty => "50-50",
            ScenarioTag::Pessimistic => "pessimistic",
            ScenarioTag::Custom => "custom",
        }
    }
}

impl fmt::Display for ScenarioTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ScenarioTag {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "baseline" => ScenarioTag::Baseline,
            "expected" => ScenarioTag::Expected,
            "50-50" | "fifty_fifty" | "fifty-fifty" => ScenarioTag::FiftyFifty,
            "pessimistic" => ScenarioTag::Pessimistic,
            "custom" => ScenarioTag::Custom,
            other => return Err(Error::Config(format!("unknown scenario `{other}`"))),
        })
    }
}

/// One row of a travel-time query dump between two QRLs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TravelTimeQuery {
    pub from_id: String,
    pub to_id: String,
    pub baseline_min: f64,
    pub expected_min: f64,
    pub pessimistic_min: f64,
}

impl TravelTimeQuery {
    fn id(&self) -> String {
        format!("{}->{}", self.from_id, self.to_id)
    }

    /// Reads a CSV with header `from_id,to_id,baseline_min,expected_min,pessimistic_min`.
    pub fn read_csv(path: &Path) -> Result<Vec<TravelTimeQuery>> {
        let mut reader = csv::Reader::from_path(path).map_err(|source| Error::Csv {
            path: path.into(),
            source,
        })?;
        reader
            .deserialize()
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|source| Error::Csv {
                path: path.into(),
                source,
            })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScalingMatrix {
    pub scenario: ScenarioTag,
    /// `factors[from][to]`.
    pub factors: BTreeMap<String, BTreeMap<String, f64>>,
}

impl ScalingMatrix {
    pub fn new(scenario: ScenarioTag, factors: BTreeMap<String, BTreeMap<String, f64>>) -> Result<Self> {
        for (from, row) in &factors {
            for (to, &f) in row {
                if !(f.is_finite() && f > 0.0) {
                    return Err(Error::validation(
                        "scaling factor",
                        format!("{from}->{to}"),
                        "factors must be positive and finite",
                    ));
                }
                if scenario == ScenarioTag::Baseline && f != 1.0 {
                    return Err(Error::validation(
                        "scaling factor",
                        format!("{from}->{to}"),
                        "baseline factors must equal 1",
                    ));
                }
            }
        }
        Ok(ScalingMatrix { scenario, factors })
    }

    pub fn factor(&self, from: &str, to: &str) -> Result<f64> {
        self.factors
            .get(from)
            .and_then(|row| row.get(to))
            .copied()
            .ok_or_else(|| Error::MissingPair(from.into(), to.into()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let raw: ScalingMatrix = serde_json::from_str(&text).map_err(|source| Error::Json {
            path: path.into(),
            source,
        })?;
        ScalingMatrix::new(raw.scenario, raw.factors)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("matrix serializes")
    }
}

/// Scaling factors for a queried scenario. The 50-50 scenario uses the mean
/// of the expected and pessimistic query times.
pub fn build_scaling_matrix(queries: &[TravelTimeQuery], scenario: ScenarioTag) -> Result<ScalingMatrix> {
    let mut factors: BTreeMap<String, BTreeMap<String, f64>> = BTreeMap::new();
    for q in queries {
        let times = [q.baseline_min, q.expected_min, q.pessimistic_min];
        if times.iter().any(|t| !(t.is_finite() && *t > 0.0)) {
            return Err(Error::validation("query", q.id(), "travel times must be positive and finite"));
        }
        let factor = match scenario {
            ScenarioTag::Baseline => 1.0,
            ScenarioTag::Expected => q.expected_min / q.baseline_min,
            ScenarioTag::FiftyFifty => (q.expected_min + q.pessimistic_min) / (2.0 * q.baseline_min),
            ScenarioTag::Pessimistic => q.pessimistic_min / q.baseline_min,
            ScenarioTag::Custom => {
                return Err(Error::InvalidArgument(
                    "custom scenarios are loaded from matrix files, not built from queries".into(),
                ))
            }
        };
        factors.entry(q.from_id.clone()).or_default().insert(q.to_id.clone(), factor);
    }
    ScalingMatrix::new(scenario, factors)
}

/// Region-pair factor for a trip between two coordinates. When both ends map
/// to the same QRL, the pair with that QRL's nearest other QRL is used.
pub fn od_scaling_factor(origin: (f64, f64), destination: (f64, f64), qrls: &QrlSet, matrix: &ScalingMatrix) -> Result<f64> {
    let from = qrls.nearest(origin);
    let mut to = qrls.nearest(destination);
    if from.id == to.id {
        to = qrls.nearest_other(&from.id).expect("from is in the set");
    }
    matrix.factor(&from.id, &to.id)
}

pub fn scale_od_time(
    origin: (f64, f64),
    destination: (f64, f64),
    basis_minutes: f64,
    qrls: &QrlSet,
    matrix: &ScalingMatrix,
) -> Result<f64> {
    if !(basis_minutes.is_finite() && basis_minutes >= 0.0) {
        return Err(Error::InvalidArgument(format!("basis time {basis_minutes} must be non-negative")));
    }
    Ok(basis_minutes * od_scaling_factor(origin, destination, qrls, matrix)?)
}

/// Bus arcs that run on dedicated lanes, with their free-flow times.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct DblOverlay {
    /// Free-flow minutes keyed by bus arc id.
    pub arcs: BTreeMap<String, f64>,
}

impl DblOverlay {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|source| Error::Json {
            path: path.into(),
            source,
        })
    }

    pub fn ids(&self) -> BTreeSet<&str> {
        self.arcs.keys().map(String::as_str).collect()
    }
}

#[derive(Clone, Debug)]
pub struct ScenarioOutcome {
    pub network: TransitNetwork,
    pub warnings: Vec<String>,
}

fn coords(network: &TransitNetwork, location: usize) -> (f64, f64) {
    let loc = network.location(location);
    (loc.lat, loc.lon)
}

/// Applies the dedicated-lane free-flow times. Parallel frequency variants of
/// a listed arc share its lane and receive the same time.
pub fn apply_overlay(network: &TransitNetwork, overlay: &DblOverlay) -> Result<ScenarioOutcome> {
    let mut arcs = network.arcs().to_vec();
    let mut warnings = Vec::new();
    for (id, &freeflow) in &overlay.arcs {
        let a = network
            .arc_index(id)
            .ok_or_else(|| Error::Config(format!("dedicated-lane overlay references unknown arc `{id}`")))?;
        if network.arc(a).mode != Mode::Bus {
            return Err(Error::Config(format!("dedicated-lane arc `{id}` is not a bus arc")));
        }
        if !(freeflow.is_finite() && freeflow >= 0.0) {
            return Err(Error::Config(format!("free-flow time for `{id}` must be non-negative")));
        }
        let current = network.arc(a).travel_time;
        if freeflow > current {
            let msg = format!("free-flow time {freeflow} for `{id}` exceeds its congested time {current}");
            log::warn!("{msg}");
            warnings.push(msg);
        }
        for &b in network.bus_arcs() {
            if network.tail(b) == network.tail(a) && network.head(b) == network.head(a) {
                arcs[b].travel_time = freeflow;
            }
        }
    }
    Ok(ScenarioOutcome {
        network: network.with_arcs(arcs)?,
        warnings,
    })
}

/// Scales road travel times (shuttle and bus arcs) and shuttle per-mile costs
/// by each arc's region-pair factor, then applies the optional overlay.
/// Rail runs on its own right of way and keeps its times.
pub fn apply_congestion(
    network: &TransitNetwork,
    qrls: &QrlSet,
    matrix: &ScalingMatrix,
    overlay: Option<&DblOverlay>,
) -> Result<ScenarioOutcome> {
    let mut arcs = network.arcs().to_vec();
    for (a, arc) in arcs.iter_mut().enumerate() {
        if arc.mode == Mode::Rail {
            continue;
        }
        let factor = od_scaling_factor(coords(network, network.tail(a)), coords(network, network.head(a)), qrls, matrix)?;
        arc.travel_time *= factor;
        if arc.mode == Mode::Shuttle {
            arc.shuttle_cost_scale *= factor;
        }
    }
    let scaled = network.with_arcs(arcs)?;
    match overlay {
        Some(overlay) => apply_overlay(&scaled, overlay),
        None => Ok(ScenarioOutcome {
            network: scaled,
            warnings: Vec::new(),
        }),
    }
}

/// Scales each trip's car time by the factor of its origin and destination,
/// since driving is slowed by the same congestion as road transit.
pub fn scale_car_times(network: &TransitNetwork, trips: &[Trip], qrls: &QrlSet, matrix: &ScalingMatrix) -> Result<Vec<Trip>> {
    trips
        .iter()
        .map(|t| {
            let end = |id: &str| {
                network
                    .location_index(id)
                    .map(|v| coords(network, v))
                    .ok_or_else(|| Error::validation("trip", t.id.clone(), format!("unknown location `{id}`")))
            };
            let car_time = scale_od_time(end(&t.origin)?, end(&t.destination)?, t.car_time, qrls, matrix)?;
            Ok(Trip { car_time, ..t.clone() })
        })
        .collect()
}
