//! End-to-end runs: load inputs, apply the scenario, solve, and write the
//! solution document and tables to an output directory.

use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::adoption::{solve_bilevel, sweep_adoption_factor, BilevelOptions};
use crate::benders::{solve_fixed_demand, BendersOptions, FixedDemandInstance};
use crate::error::{Error, Result};
use crate::model::{CostParameters, Instance};
use crate::report::{adoption_rows, cost_report, geojson, mode_rows, paired_adoption_rows, to_csv, SolutionDoc};
use crate::router::{apply_wait_postprocessing, evaluate_choice, solve_follower};
use crate::scenario::{apply_congestion, apply_overlay, scale_car_times, build_scaling_matrix, DblOverlay, QrlSet, ScalingMatrix, ScenarioTag, TravelTimeQuery};

#[derive(Clone, Debug)]
pub struct ExperimentConfig {
    pub instance: PathBuf,
    pub qrls: Option<PathBuf>,
    pub queries: Option<PathBuf>,
    pub matrix: Option<PathBuf>,
    pub scenario: ScenarioTag,
    pub dbl: Option<PathBuf>,
    pub rho: Vec<f64>,
    pub sync: bool,
    pub tolerance: f64,
    pub max_rounds: usize,
    pub max_iterations: usize,
    pub out: PathBuf,
}

impl ExperimentConfig {
    pub fn new(instance: impl Into<PathBuf>, out: impl Into<PathBuf>) -> Self {
        ExperimentConfig {
            instance: instance.into(),
            qrls: None,
            queries: None,
            matrix: None,
            scenario: ScenarioTag::Baseline,
            dbl: None,
            rho: Vec::new(),
            sync: false,
            tolerance: 1e-6,
            max_rounds: 20,
            max_iterations: 500,
            out: out.into(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        for path in [Some(&self.instance), self.qrls.as_ref(), self.queries.as_ref(), self.matrix.as_ref(), self.dbl.as_ref()]
            .into_iter()
            .flatten()
        {
            if !path.exists() {
                return Err(Error::io(path, std::io::Error::new(std::io::ErrorKind::NotFound, "file not found")));
            }
        }
        if !(self.tolerance > 0.0) {
            return Err(Error::Config("tolerance must be positive".into()));
        }
        if self.rho.iter().any(|r| !(r.is_finite() && *r >= 0.0)) {
            return Err(Error::Config("adoption factors must be non-negative".into()));
        }
        Ok(())
    }

    pub fn options(&self) -> BilevelOptions {
        BilevelOptions {
            benders: BendersOptions {
                tolerance: self.tolerance,
                max_iterations: self.max_iterations,
                ..BendersOptions::default()
            },
            max_rounds: self.max_rounds,
        }
    }

    fn matrix(&self) -> Result<Option<ScalingMatrix>> {
        if let Some(path) = &self.matrix {
            let m = ScalingMatrix::load(path)?;
            if self.scenario != ScenarioTag::Custom && m.scenario != self.scenario {
                return Err(Error::Config(format!(
                    "matrix file is for scenario `{}`, run requested `{}`",
                    m.scenario, self.scenario
                )));
            }
            return Ok(Some(m));
        }
        match (&self.queries, self.scenario) {
            (Some(path), tag) if tag != ScenarioTag::Custom => {
                Ok(Some(build_scaling_matrix(&TravelTimeQuery::read_csv(path)?, tag)?))
            }
            (_, ScenarioTag::Baseline) => Ok(None),
            _ => Err(Error::Config(format!(
                "scenario `{}` needs a scaling matrix or a query dump",
                self.scenario
            ))),
        }
    }

    /// Loads the instance with the scenario (and optionally the lane overlay) applied.
    pub fn load_instance(&self, with_dbl: bool) -> Result<Instance> {
        let mut instance = Instance::load(&self.instance)?;
        let overlay = match (&self.dbl, with_dbl) {
            (Some(path), true) => Some(DblOverlay::load(path)?),
            _ => None,
        };
        let network = match self.matrix()? {
            Some(matrix) => {
                let qrls = self
                    .qrls
                    .as_ref()
                    .ok_or_else(|| Error::Config("congestion scaling needs a QRL file".into()))?;
                let qrls = QrlSet::from_csv(qrls)?;
                instance.trips = scale_car_times(&instance.network, &instance.trips, &qrls, &matrix)?;
                apply_congestion(&instance.network, &qrls, &matrix, overlay.as_ref())?.network
            }
            None => match &overlay {
                Some(o) => apply_overlay(&instance.network, o)?.network,
                None => instance.network.clone(),
            },
        };
        instance.network = network;
        if let Some(&rho) = self.rho.first() {
            instance.params.adoption_factor = rho;
        }
        instance.params.synchronized |= self.sync;
        Ok(instance)
    }
}

/// Output directory that only receives files once every artifact is written.
struct Staging {
    dir: PathBuf,
    target: PathBuf,
    files: Vec<String>,
    committed: bool,
}

impl Staging {
    fn new(target: &Path) -> Result<Self> {
        fs::create_dir_all(target).map_err(|e| Error::io(target, e))?;
        let dir = target.join(format!(".staging-{}", std::process::id()));
        fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        Ok(Staging {
            dir,
            target: target.to_owned(),
            files: Vec::new(),
            committed: false,
        })
    }

    fn write(&mut self, name: &str, contents: &str) -> Result<()> {
        let path = self.dir.join(name);
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
        fs::write(&path, contents).map_err(|e| Error::io(&path, e))?;
        self.files.push(name.to_owned());
        Ok(())
    }

    fn commit(mut self) -> Result<Vec<PathBuf>> {
        let mut written = Vec::new();
        for name in &self.files {
            let dest = self.target.join(name);
            if let Some(parent) = dest.parent() {
                fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
            }
            fs::rename(self.dir.join(name), &dest).map_err(|e| Error::io(&dest, e))?;
            written.push(dest);
        }
        self.committed = true;
        let _ = fs::remove_dir_all(&self.dir);
        Ok(written)
    }
}

impl Drop for Staging {
    fn drop(&mut self) {
        if !self.committed {
            let _ = fs::remove_dir_all(&self.dir);
        }
    }
}

fn pretty<T: Serialize>(value: &T) -> String {
    let mut text = serde_json::to_string_pretty(value).expect("serializes");
    text.push('\n');
    text
}

#[derive(Clone, Debug)]
pub struct RunSummary {
    pub converged: bool,
    pub files: Vec<PathBuf>,
    pub docs: Vec<SolutionDoc>,
}

/// Solves one configuration and returns its solution document.
pub fn solve_config(config: &ExperimentConfig, with_dbl: bool) -> Result<SolutionDoc> {
    let instance = config.load_instance(with_dbl)?;
    let solution = solve_bilevel(&instance.network, &instance.trips, &instance.params, &config.options())?;
    Ok(SolutionDoc::new(
        &instance.network,
        &instance.trips,
        &instance.params,
        &solution,
        config.scenario.as_str(),
        with_dbl && config.dbl.is_some(),
    ))
}

fn write_solution_artifacts(staging: &mut Staging, prefix: &str, config: &ExperimentConfig, doc: &SolutionDoc, with_dbl: bool) -> Result<()> {
    let instance = config.load_instance(with_dbl)?;
    staging.write(&format!("{prefix}solution.json"), &doc.to_json())?;
    staging.write(&format!("{prefix}adoption.csv"), &to_csv(&adoption_rows(doc, None)))?;
    staging.write(&format!("{prefix}modes.csv"), &to_csv(&mode_rows(doc)))?;
    staging.write(&format!("{prefix}cost.csv"), &to_csv(&[cost_report(&instance.network, doc)?]))?;
    staging.write(&format!("{prefix}network.geojson"), &pretty(&geojson(&instance.network, doc)?))?;
    Ok(())
}

/// `solve`: bilevel design for one scenario, lanes per `config.dbl`.
pub fn run_experiment(config: &ExperimentConfig) -> Result<RunSummary> {
    config.validate()?;
    let with_dbl = config.dbl.is_some();
    let doc = solve_config(config, with_dbl)?;
    let mut staging = Staging::new(&config.out)?;
    write_solution_artifacts(&mut staging, "", config, &doc, with_dbl)?;
    Ok(RunSummary {
        converged: doc.converged,
        files: staging.commit()?,
        docs: vec![doc],
    })
}

/// `report`: paired runs without and with the lane overlay.
pub fn run_paired_report(config: &ExperimentConfig) -> Result<RunSummary> {
    config.validate()?;
    if config.dbl.is_none() {
        return Err(Error::Config("paired report needs a dedicated-lane overlay".into()));
    }
    let without = solve_config(config, false)?;
    let with = solve_config(config, true)?;
    let mut staging = Staging::new(&config.out)?;
    write_solution_artifacts(&mut staging, "no-dbl/", config, &without, false)?;
    write_solution_artifacts(&mut staging, "dbl/", config, &with, true)?;
    staging.write("adoption.csv", &to_csv(&paired_adoption_rows(&without, &with)?))?;
    let mut modes = mode_rows(&without);
    modes.extend(mode_rows(&with));
    staging.write("modes.csv", &to_csv(&modes))?;
    let costs = [
        cost_report(&config.load_instance(false)?.network, &without)?,
        cost_report(&config.load_instance(true)?.network, &with)?,
    ];
    staging.write("cost.csv", &to_csv(&costs))?;
    Ok(RunSummary {
        converged: without.converged && with.converged,
        files: staging.commit()?,
        docs: vec![without, with],
    })
}

#[derive(Serialize)]
struct SweepRow {
    rho: f64,
    potential_count: u64,
    adoption_count: u64,
    adoption_rate: f64,
    objective: f64,
    converged: bool,
}

#[derive(Serialize)]
struct RatioRow<'a> {
    rho: f64,
    trip: &'a str,
    locality: String,
    riders: u32,
    ratio: f64,
    adopted: bool,
}

/// `sweep`: one bilevel solve per adoption factor, plus the distribution of
/// transit-to-car travel time ratios for potential riders.
pub fn run_sweep(config: &ExperimentConfig) -> Result<RunSummary> {
    config.validate()?;
    if config.rho.is_empty() {
        return Err(Error::Config("sweep needs at least one adoption factor".into()));
    }
    let with_dbl = config.dbl.is_some();
    let instance = config.load_instance(with_dbl)?;
    let results = sweep_adoption_factor(&instance.network, &instance.trips, &instance.params, &config.rho, &config.options())?;
    let mut staging = Staging::new(&config.out)?;
    let mut rows = Vec::new();
    let mut ratios = Vec::new();
    let mut docs = Vec::new();
    for (rho, solution) in &results {
        let params = CostParameters {
            adoption_factor: *rho,
            ..instance.params.clone()
        };
        let doc = SolutionDoc::new(&instance.network, &instance.trips, &params, solution, config.scenario.as_str(), with_dbl);
        let all = adoption_rows(&doc, None).pop().expect("all-riders row");
        rows.push(SweepRow {
            rho: *rho,
            potential_count: all.potential_count,
            adoption_count: all.adoption_count,
            adoption_rate: all.adoption_rate,
            objective: doc.objective.total,
            converged: doc.converged,
        });
        staging.write(&format!("rho-{rho}/solution.json"), &doc.to_json())?;
        docs.push(doc);
    }
    for doc in &docs {
        for t in doc.trips.iter().filter(|t| t.ratio.is_some()) {
            ratios.push(RatioRow {
                rho: doc.parameters.adoption_factor,
                trip: &t.id,
                locality: t.locality.to_string(),
                riders: t.riders,
                ratio: t.ratio.unwrap_or_default(),
                adopted: t.is_adopter(),
            });
        }
    }
    staging.write("sweep.csv", &to_csv(&rows))?;
    staging.write("ratios.csv", &to_csv(&ratios))?;
    Ok(RunSummary {
        converged: docs.iter().all(|d| d.converged),
        files: staging.commit()?,
        docs,
    })
}

/// `design`: fixed-demand design for all existing riders (and, with
/// `include_potential`, every potential rider as must-serve).
pub fn run_design(config: &ExperimentConfig, include_potential: bool) -> Result<RunSummary> {
    config.validate()?;
    let with_dbl = config.dbl.is_some();
    let instance = config.load_instance(with_dbl)?;
    let trips: Vec<_> = instance
        .trips
        .iter()
        .filter(|t| include_potential || !t.is_potential())
        .collect();
    let fixed = FixedDemandInstance::new(&instance.network, trips.clone(), &instance.params);
    let solution = solve_fixed_demand(&fixed, &config.options().benders)?;

    #[derive(Serialize)]
    struct DesignRoute {
        trip: String,
        route: Vec<String>,
        primary_value: f64,
        trip_length: f64,
        travel_time: f64,
    }
    #[derive(Serialize)]
    struct DesignDoc {
        scenario: String,
        dbl: bool,
        converged: bool,
        iterations: usize,
        lower_bound: f64,
        upper_bound: f64,
        objective: crate::benders::ObjectiveSplit,
        design: std::collections::BTreeMap<String, bool>,
        routes: Vec<DesignRoute>,
    }
    let routes = trips
        .iter()
        .zip(&solution.routes)
        .map(|(t, r)| DesignRoute {
            trip: t.id.clone(),
            route: r.arc_ids(&instance.network),
            primary_value: r.primary_value,
            trip_length: r.trip_length,
            travel_time: apply_wait_postprocessing(r, &instance.network, &instance.params).trip_length,
        })
        .collect();
    let doc = DesignDoc {
        scenario: config.scenario.as_str().to_owned(),
        dbl: with_dbl,
        converged: solution.converged,
        iterations: solution.iterations,
        lower_bound: solution.lower_bound,
        upper_bound: solution.upper_bound,
        objective: solution.objective.clone(),
        design: solution.design.to_map(&instance.network),
        routes,
    };
    let mut staging = Staging::new(&config.out)?;
    staging.write("design.json", &pretty(&doc))?;
    staging.write("checkpoint.json", &{
        let tmp = staging.dir.join("checkpoint.tmp");
        solution.state.save(&tmp)?;
        let text = fs::read_to_string(&tmp).map_err(|e| Error::io(&tmp, e))?;
        let _ = fs::remove_file(&tmp);
        text
    })?;
    Ok(RunSummary {
        converged: solution.converged,
        files: staging.commit()?,
        docs: Vec::new(),
    })
}

/// Re-evaluates the adoption choice of every potential rider on a fixed
/// design for several adoption factors. Returns `(rho, adopted trip ids)`.
pub fn adoption_on_fixed_design(instance: &Instance, doc: &SolutionDoc, rhos: &[f64]) -> Result<Vec<(f64, BTreeSet<String>)>> {
    let design = doc.design_vector(&instance.network)?;
    let mut waited = Vec::new();
    for trip in instance.trips.iter().filter(|t| t.is_potential()) {
        let route = solve_follower(trip, &instance.network, &design, &instance.params)?
            .ok_or_else(|| Error::Infeasible(trip.id.clone()))?;
        waited.push((trip, apply_wait_postprocessing(&route, &instance.network, &instance.params)));
    }
    Ok(rhos
        .iter()
        .map(|&rho| {
            let params = CostParameters {
                adoption_factor: rho,
                ..instance.params.clone()
            };
            let adopted = waited
                .iter()
                .filter(|(trip, path)| evaluate_choice(path, trip, &params).adopted)
                .map(|(trip, _)| trip.id.clone())
                .collect();
            (rho, adopted)
        })
        .collect())
}

/// `ingest-queries`: converts a query dump into one matrix file per scenario.
pub fn ingest_queries(queries: &Path, out: &Path) -> Result<Vec<PathBuf>> {
    let rows = TravelTimeQuery::read_csv(queries)?;
    let mut staging = Staging::new(out)?;
    for tag in ScenarioTag::QUERIED {
        let matrix = build_scaling_matrix(&rows, tag)?;
        staging.write(&format!("matrix-{}.json", tag.as_str()), &(matrix.to_json() + "\n"))?;
    }
    staging.commit()
}
