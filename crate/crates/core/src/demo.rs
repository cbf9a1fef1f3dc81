//! A deterministic demo world and a scripted model that drives the loop
//! without network access.
//!
//! The world has eight cities, 45 training queries, 180 validation queries
//! and ten candidate example plans. Every query is generated from a plan
//! that satisfies all of its constraints, so a correct answer always exists.
//!
//! [`DemoResponder`] answers planner prompts by passing the first
//! `BASE_PASSES + sum(gains of the examples in the prompt)` validation
//! queries and returning a flawed plan for the rest. Discriminator prompts
//! get a score that grows with the candidate's gain; summarizer prompts get
//! the catalog description of the check they show.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::constraints::{total_cost, ConstraintId};
use crate::discriminators::{CandidateRecord, RankTarget};
use crate::model::{ModelClient, ModelRequest, ModelRole, Transport, TransportError};
use crate::optimize::{
    default_skeleton, prepare_run, resume, run_loop, LoopContext, OptimizeError, PreparedRun, RunConfig, RunDir,
    RunInputs, SelectionMode, Splits,
};
use crate::par::Execution;
use crate::plan::{
    serialize_plan, CurrentCity, DayEntry, Destinations, Place, Plan, Query, RoomRuleRequest, TransportLeg,
    TransportMode, TransportRequest,
};
use crate::sandbox::{
    export_csv_tables, AccommodationRecord, Activity, AttractionRecord, FlightRecord, GroundRouteRecord, HouseRule,
    RestaurantRecord, RoomType, Sandbox, SandboxTables,
};

pub const CITIES: [&str; 8] = [
    "Ashford",
    "Brookvale",
    "Cedar Falls",
    "Dunmore",
    "Elmstead",
    "Fairhaven",
    "Glenwood",
    "Harrow Bay",
];

const CUISINES: [&str; 10] = [
    "American", "BBQ", "Cafe", "Chinese", "French", "Indian", "Italian", "Mexican", "Seafood", "Thai",
];

const RESTAURANTS: [&str; 8] = [
    "Copper Kettle",
    "Blue Door",
    "Olive Branch",
    "Red Lantern",
    "Saffron House",
    "Salt and Pine",
    "Corner Table",
    "Little Harbor",
];

const ATTRACTIONS: [&str; 5] = ["Old Town Square", "City Museum", "Botanical Garden", "Harbor Walk", "Art Gallery"];

const HOTELS: [(&str, RoomType, f64, u32, u32); 4] = [
    ("Grand Hotel", RoomType::EntireRoom, 150.0, 1, 4),
    ("Garden Rooms", RoomType::PrivateRoom, 90.0, 2, 2),
    ("Backpackers Loft", RoomType::SharedRoom, 45.0, 1, 6),
    ("Riverside Lodge", RoomType::EntireRoom, 120.0, 2, 3),
];

pub const SEED: u64 = 7;
pub const TRAINING_SIZE: usize = 45;
pub const VALIDATION_SIZE: usize = 180;
pub const BASE_PASSES: u32 = 10;
/// Extra passing validation queries each candidate unlocks when present as
/// an example, by candidate position.
pub const GAINS: [u32; 10] = [4, 3, 2, 2, 1, 1, 1, 0, 0, 0];

pub fn demo_sandbox() -> Sandbox {
    let mut t = SandboxTables::default();
    for (i, from) in CITIES.iter().enumerate() {
        for (j, to) in CITIES.iter().enumerate() {
            if i == j {
                continue;
            }
            t.flights.push(FlightRecord {
                flight_number: format!("PF{i}{j}"),
                origin_city: from.to_string(),
                destination_city: to.to_string(),
                departure_time: format!("{:02}:15", 6 + (i + j) % 12),
                arrival_time: format!("{:02}:45", 8 + (i + j) % 12),
                date: "2024-05-01".into(),
                price: 80.0 + ((i * 7 + j * 13) % 9) as f64 * 15.0,
            });
            let km = 120.0 + ((i + j) * 37 % 300) as f64;
            t.distances.push(GroundRouteRecord {
                origin_city: from.to_string(),
                destination_city: to.to_string(),
                distance_km: km,
                self_driving_cost: (km * 0.2).round(),
                taxi_cost: (km * 0.6).round(),
                duration_minutes: (km * 0.9).round(),
            });
        }
        for (k, (name, room_type, price, min_nights, occupancy)) in HOTELS.iter().enumerate() {
            let rules = match (i + k) % 4 {
                0 => vec![Activity::Smoking],
                1 => vec![Activity::Pets, Activity::Parties],
                2 => vec![Activity::Smoking, Activity::Visitors],
                _ => vec![],
            };
            t.accommodations.push(AccommodationRecord {
                name: name.to_string(),
                city: from.to_string(),
                price_per_night: price + 5.0 * i as f64,
                room_type: *room_type,
                house_rules: rules.into_iter().map(HouseRule).collect(),
                minimum_nights: *min_nights,
                maximum_occupancy: *occupancy,
            });
        }
        for (k, name) in RESTAURANTS.iter().enumerate() {
            t.restaurants.push(RestaurantRecord {
                name: name.to_string(),
                city: from.to_string(),
                cuisines: [CUISINES[(i + k) % 10], CUISINES[(i + 3 * k + 1) % 10]]
                    .into_iter()
                    .map(String::from)
                    .collect(),
                average_cost: 12.0 + ((i + k) * 5 % 25) as f64,
            });
        }
        for name in ATTRACTIONS {
            t.attractions.push(AttractionRecord {
                name: name.to_string(),
                city: from.to_string(),
            });
        }
    }
    Sandbox::new(t).expect("demo sandbox is valid")
}

/// How hard a generated query should be.
#[derive(Debug, Clone, Copy)]
struct Shape {
    days: u32,
    people: u32,
    all_requests: bool,
}

fn people_text(n: u32) -> String {
    match n {
        1 => "one person".into(),
        n => format!("{n} people"),
    }
}

/// Builds a plan that satisfies every check, then a query it answers.
fn generate(rng: &mut ChaCha8Rng, sandbox: &Sandbox, id: &str, shape: Shape) -> (Query, Plan) {
    let city_count = (shape.days - 1) / 2;
    let mut cities: Vec<&str> = CITIES.to_vec();
    cities.shuffle(rng);
    let origin = cities[0];
    let dests: Vec<&str> = cities[1..=city_count as usize].to_vec();
    let mut route = vec![origin];
    route.extend(&dests);
    route.push(origin);

    let request = |p: f64, rng: &mut ChaCha8Rng| shape.all_requests || rng.random_bool(p);
    let room_type = request(0.3, rng).then(|| *RoomType::ALL.choose(rng).unwrap());
    let transport = if shape.all_requests {
        Some(TransportRequest::NoFlights)
    } else {
        match rng.random_range(0..10) {
            0 | 1 => Some(TransportRequest::NoFlights),
            2 | 3 => Some(TransportRequest::NoSelfDriving),
            _ => None,
        }
    };

    let hotels: Vec<&AccommodationRecord> = dests
        .iter()
        .map(|c| {
            let options: Vec<_> = sandbox
                .accommodations()
                .iter()
                .filter(|h| h.city == *c && room_type.is_none_or(|t| h.room_type == t))
                .collect();
            *options.choose(rng).unwrap()
        })
        .collect();
    let allowed: Vec<Activity> = Activity::ALL
        .into_iter()
        .filter(|a| hotels.iter().all(|h| h.allows(*a)))
        .collect();
    let rule_count = if request(0.3, rng) { rng.random_range(1..=2).min(allowed.len()) } else { 0 };
    let room_rules: BTreeSet<RoomRuleRequest> = allowed.choose_multiple(rng, rule_count).map(|a| RoomRuleRequest(*a)).collect();

    let mut menus: BTreeMap<&str, Vec<&str>> = BTreeMap::new();
    let mut sights: BTreeMap<&str, Vec<&str>> = BTreeMap::new();
    for c in &route {
        let mut r = RESTAURANTS.to_vec();
        r.shuffle(rng);
        menus.insert(c, r);
        let mut a = ATTRACTIONS.to_vec();
        a.shuffle(rng);
        sights.insert(c, a);
    }
    let mut meal = |city: &str| Some(Place::new(menus.get_mut(city).unwrap().pop().unwrap(), city));

    let mode = if transport == Some(TransportRequest::NoFlights) { TransportMode::Taxi } else { TransportMode::Flight };
    let mut days = Vec::new();
    for i in 0..shape.days {
        let n = i + 1;
        let day = if i % 2 == 0 {
            let (from, to) = (route[(i / 2) as usize], route[(i / 2) as usize + 1]);
            let mut d = DayEntry::new(n, CurrentCity::Transit { from: from.into(), to: to.into() });
            d.transportation = Some(TransportLeg {
                mode,
                origin: from.into(),
                destination: to.into(),
                reference: (mode == TransportMode::Flight).then(|| sandbox.flight_number(from, to)),
            });
            if i > 0 {
                d.breakfast = meal(from);
            }
            if n == shape.days {
                d.lunch = meal(from);
            } else {
                d.dinner = meal(to);
            }
            d
        } else {
            let city = route[(i as usize).div_ceil(2)];
            let mut d = DayEntry::new(n, CurrentCity::Stay(city.into()));
            d.breakfast = meal(city);
            d.lunch = meal(city);
            d.dinner = meal(city);
            let s = sights.get_mut(city).unwrap();
            d.attractions = vec![Place::new(s.pop().unwrap(), city), Place::new(s.pop().unwrap(), city)];
            d
        };
        days.push(day);
    }
    for (i, d) in days.iter_mut().enumerate() {
        if i + 1 < shape.days as usize {
            let city = d.current_city.end_city().to_string();
            let h = hotels[dests.iter().position(|c| *c == city).unwrap()];
            d.accommodation = Some(Place::new(&h.name, city));
        }
    }
    let plan = Plan { query_id: id.into(), days };

    let served: BTreeSet<&str> = plan
        .days
        .iter()
        .flat_map(|d| d.meals())
        .flat_map(|m| sandbox.restaurant(&m.name, &m.city).unwrap().cuisines.iter().map(String::as_str))
        .collect();
    let served: Vec<&str> = served.into_iter().collect();
    let cuisine_count = if shape.all_requests { 3 } else if rng.random_bool(0.35) { rng.random_range(1..=3) } else { 0 };
    let cuisines: BTreeSet<String> = served.choose_multiple(rng, cuisine_count).map(|c| c.to_string()).collect();

    let mut query = Query {
        id: id.into(),
        origin_city: origin.into(),
        destinations: Destinations::Cities(dests.iter().map(|c| c.to_string()).collect()),
        duration_days: shape.days,
        people: shape.people,
        budget: 0.0,
        room_rules,
        room_type,
        cuisines,
        transportation_request: transport,
        raw_text: String::new(),
    };
    let cost = total_cost(&plan, &query, sandbox).expect("generated plan is priced");
    query.budget = ((cost * 1.2) / 100.0).ceil() * 100.0;
    query.raw_text = describe(&query);
    (query, plan)
}

fn describe(q: &Query) -> String {
    let Destinations::Cities(dests) = &q.destinations else { unreachable!() };
    let mut s = format!(
        "Plan a {}-day trip for {} from {} to {} with a budget of ${}.",
        q.duration_days,
        people_text(q.people),
        q.origin_city,
        dests.join(", then "),
        q.budget
    );
    if let Some(t) = q.room_type {
        s += &format!(" We want a {t}.");
    }
    if !q.room_rules.is_empty() {
        let r: Vec<String> = q.room_rules.iter().map(|r| r.to_string()).collect();
        s += &format!(" The accommodation must allow {}.", r.join(" and "));
    }
    if !q.cuisines.is_empty() {
        let c: Vec<&str> = q.cuisines.iter().map(String::as_str).collect();
        s += &format!(" We would like to try {} food.", c.join(", "));
    }
    match q.transportation_request {
        Some(TransportRequest::NoFlights) => s += " Please avoid flying.",
        Some(TransportRequest::NoSelfDriving) => s += " We will not drive ourselves.",
        None => {}
    }
    s
}

trait FlightNumber {
    fn flight_number(&self, from: &str, to: &str) -> String;
}

impl FlightNumber for Sandbox {
    fn flight_number(&self, from: &str, to: &str) -> String {
        self.flights()
            .iter()
            .find(|f| f.origin_city == from && f.destination_city == to)
            .map(|f| f.flight_number.clone())
            .expect("every city pair has a flight")
    }
}

/// A plan that fails at least one commonsense check. `kind` picks the flaw.
pub fn flawed(plan: &Plan, origin: &str, kind: usize) -> Plan {
    let mut p = plan.clone();
    let day = &mut p.days[1];
    match kind % 4 {
        0 => day.attractions[1] = day.attractions[0].clone(),
        1 => day.lunch = day.breakfast.clone(),
        2 => {
            day.breakfast = None;
            day.lunch = None;
            day.dinner = None;
        }
        _ => {
            let name = day.dinner.as_ref().unwrap().name.clone();
            day.dinner = Some(Place::new(name, origin));
        }
    }
    p
}

#[derive(Debug, Clone)]
pub struct DemoWorld {
    pub sandbox: Sandbox,
    pub training: Vec<Query>,
    pub validation: Vec<Query>,
    pub candidates: Vec<CandidateRecord>,
    pub gold: BTreeMap<String, Plan>,
}

pub fn demo_world() -> DemoWorld {
    let sandbox = demo_sandbox();
    let mut rng = ChaCha8Rng::seed_from_u64(SEED);
    let mut gold = BTreeMap::new();
    let shape = |rng: &mut ChaCha8Rng| Shape {
        days: *[3, 5, 7].choose(rng).unwrap(),
        people: rng.random_range(1..=5),
        all_requests: false,
    };
    let mut training = Vec::new();
    for i in 0..TRAINING_SIZE {
        let s = if i == 0 {
            Shape {
                days: 7,
                people: 5,
                all_requests: true,
            }
        } else {
            shape(&mut rng)
        };
        let (q, p) = generate(&mut rng, &sandbox, &format!("train-{i:03}"), s);
        gold.insert(q.id.clone(), p);
        training.push(q);
    }
    let mut validation = Vec::new();
    for i in 0..VALIDATION_SIZE {
        let s = shape(&mut rng);
        let (q, p) = generate(&mut rng, &sandbox, &format!("val-{i:03}"), s);
        gold.insert(q.id.clone(), p);
        validation.push(q);
    }
    let candidates = training[..GAINS.len()]
        .iter()
        .enumerate()
        .map(|(i, q)| CandidateRecord {
            plan_id: format!("cand-{i:02}"),
            query: q.clone(),
            plan_text: serialize_plan(&gold[&q.id]),
        })
        .collect();
    DemoWorld {
        sandbox,
        training,
        validation,
        candidates,
        gold,
    }
}

impl DemoWorld {
    pub fn config(&self) -> RunConfig {
        RunConfig {
            threshold: 50.0,
            max_iterations: 2,
            selection_mode: SelectionMode::Hybrid,
            runs_per_candidate: 3,
            llm_repeats: 10,
            rank_target: RankTarget::HardestFirst,
            splits: Splits {
                training: self.training.iter().map(|q| q.id.clone()).collect(),
                validation: self.validation.iter().map(|q| q.id.clone()).collect(),
                discriminator: self.candidates.iter().map(|c| c.plan_id.clone()).collect(),
            },
            seed: SEED,
            inputs: RunInputs {
                sandbox: "sandbox".into(),
                queries: "queries.ndjson".into(),
                candidates: "candidates.ndjson".into(),
                skeleton: None,
            },
        }
    }

    pub fn prepared_run(&self) -> PreparedRun {
        PreparedRun {
            config: self.config(),
            sandbox: self.sandbox.clone(),
            validation: self.validation.clone(),
            candidates: self.candidates.clone(),
            skeleton: default_skeleton(&self.sandbox),
        }
    }

    pub fn gain(&self, plan_id: &str) -> u32 {
        self.candidates
            .iter()
            .position(|c| c.plan_id == plan_id)
            .map_or(0, |i| GAINS[i])
    }

    /// Writes sandbox CSVs, queries, candidates and config into `dir`.
    pub fn write_inputs(&self, dir: &Path) -> Result<(), OptimizeError> {
        let io = |path: &Path| {
            let path = path.to_path_buf();
            move |source| OptimizeError::Io { path, source }
        };
        fs::create_dir_all(dir).map_err(io(dir))?;
        export_csv_tables(&self.sandbox, &dir.join("sandbox"))?;
        let lines = |items: Vec<String>| items.into_iter().map(|l| l + "\n").collect::<String>();
        let queries = lines(
            self.training
                .iter()
                .chain(&self.validation)
                .map(|q| serde_json::to_string(q).unwrap())
                .collect(),
        );
        let candidates = lines(self.candidates.iter().map(|c| serde_json::to_string(c).unwrap()).collect());
        for (name, text) in [
            ("queries.ndjson", queries),
            ("candidates.ndjson", candidates),
            ("config.json", self.config().to_json()),
        ] {
            let path = dir.join(name);
            fs::write(&path, text).map_err(io(&path))?;
        }
        Ok(())
    }
}

/// File name of the recorded transcript inside the fixture directory.
pub const TRANSCRIPT_FILE: &str = "transcript.ndjson";

/// Writes the demo inputs into `dir`, runs the bundled config once against
/// [`DemoResponder`] and saves every model call as the transcript.
pub fn write_fixtures(dir: &Path) -> Result<PathBuf, OptimizeError> {
    let world = demo_world();
    world.write_inputs(dir)?;
    let config_path = dir.join("config.json");
    let inputs = prepare_run(RunConfig::load(&config_path)?, dir)?;
    let scratch = dir.join(".record");
    let _ = fs::remove_dir_all(&scratch);
    let run = RunDir::create(scratch.join("demo"), &inputs)?;
    let model = ModelClient::record(Arc::new(DemoResponder::new(world)));
    run_loop(&LoopContext {
        run: &run,
        inputs: &inputs,
        model: &model,
        selection: None,
        exec: Execution::default(),
    })?;
    debug_assert!(resume(&run)?.state.stopped);
    fs::remove_dir_all(&scratch).map_err(|source| OptimizeError::Io {
        path: scratch.clone(),
        source,
    })?;
    let path = dir.join(TRANSCRIPT_FILE);
    model.recorded().expect("recording client").save(&path)?;
    Ok(path)
}

/// The scripted model behind the demo.
#[derive(Debug, Clone)]
pub struct DemoResponder {
    world: Arc<DemoWorld>,
    validation_index: BTreeMap<String, usize>,
}

impl DemoResponder {
    pub fn new(world: DemoWorld) -> Self {
        let validation_index = world.validation.iter().enumerate().map(|(i, q)| (q.id.clone(), i)).collect();
        DemoResponder {
            world: Arc::new(world),
            validation_index,
        }
    }

    /// Number of validation queries the planner passes for this prompt.
    pub fn pass_quota(&self, prompt: &str) -> u32 {
        BASE_PASSES
            + self
                .world
                .candidates
                .iter()
                .filter(|c| prompt.contains(&format!("Query: {}\n", c.query.raw_text)))
                .map(|c| self.world.gain(&c.plan_id))
                .sum::<u32>()
    }

    fn plan(&self, prompt: &str) -> Result<String, TransportError> {
        let start = prompt
            .rfind("\nQuery ")
            .ok_or_else(|| TransportError::fatal(Some(400), "planner prompt names no query"))?;
        let rest = &prompt[start + "\nQuery ".len()..];
        let id = &rest[..rest.find(":\n").unwrap_or(rest.len())];
        let gold = self
            .world
            .gold
            .get(id)
            .ok_or_else(|| TransportError::fatal(Some(400), format!("unknown query `{id}`")))?;
        let Some(&index) = self.validation_index.get(id) else {
            return Ok(serialize_plan(gold));
        };
        if (index as u32) < self.pass_quota(prompt) {
            return Ok(serialize_plan(gold));
        }
        let origin = &self.world.validation[index].origin_city;
        Ok(serialize_plan(&flawed(gold, origin, index)))
    }

    fn score(&self, req: &ModelRequest) -> Result<String, TransportError> {
        let c = self
            .world
            .candidates
            .iter()
            .find(|c| req.prompt_text.ends_with(&format!("Plan:\n{}", c.plan_text)))
            .ok_or_else(|| TransportError::fatal(Some(400), "discriminator prompt holds no known plan"))?;
        let jitter = (req.call_index / 3 % 3) as u32;
        Ok(format!("Score: {}", 40 + 10 * self.world.gain(&c.plan_id) + jitter))
    }

    fn summarize(&self, prompt: &str) -> String {
        let described = ConstraintId::ALL
            .into_iter()
            .find(|id| prompt.contains(&format!("fn {}(", check_fn(*id))))
            .map(|id| id.descriptor().description);
        described.unwrap_or_else(|| "The plan must satisfy the rule this code checks.".into())
    }
}

fn check_fn(id: ConstraintId) -> &'static str {
    match id {
        ConstraintId::DiverseRestaurants | ConstraintId::DiverseAttractions => "first_repeat",
        other => match other.as_str() {
            "within-sandbox" => "within_sandbox",
            "complete-information" => "complete_information",
            "within-current-city" => "within_current_city",
            "reasonable-city-route" => "reasonable_city_route",
            "non-conflicting-transportation" => "non_conflicting_transportation",
            "minimum-nights" => "minimum_nights",
            "budget" => "budget",
            "room-rules" => "room_rules",
            "room-type" => "room_type",
            "cuisines" => "cuisines",
            _ => "transportation_request",
        },
    }
}

impl Transport for DemoResponder {
    fn send(&self, req: &ModelRequest) -> Result<String, TransportError> {
        match req.role {
            ModelRole::Planner => self.plan(&req.prompt_text),
            ModelRole::Discriminator => self.score(req),
            ModelRole::Summarizer => Ok(self.summarize(&req.prompt_text)),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::constraints::evaluate;
    use crate::discriminators::score_query;
    use crate::plan::parse_plan;

    #[test]
    fn every_gold_plan_passes_its_query() {
        let world = demo_world();
        assert_eq!(world.validation.len(), VALIDATION_SIZE);
        assert_eq!(world.training.len(), TRAINING_SIZE);
        for q in world.training.iter().chain(&world.validation) {
            q.validate().unwrap();
            let plan = &world.gold[&q.id];
            let report = evaluate(plan, q, &world.sandbox);
            assert!(report.fully_passed(), "{}: {:?}", q.id, report.failures().collect::<Vec<_>>());
            assert_eq!(parse_plan(&serialize_plan(plan)).unwrap().days, plan.days);
        }
    }

    #[test]
    fn flawed_plans_fail_a_commonsense_check() {
        let world = demo_world();
        for (i, q) in world.validation.iter().enumerate().take(40) {
            let report = evaluate(&flawed(&world.gold[&q.id], &q.origin_city, i), q, &world.sandbox);
            assert!(report.delivered);
            assert!(!report.all_passed(crate::constraints::ConstraintKind::Commonsense), "{}", q.id);
        }
    }

    #[test]
    fn the_highest_gain_candidate_is_the_hardest() {
        let world = demo_world();
        let first = score_query(&world.candidates[0].query).unwrap().total;
        for c in &world.candidates[1..] {
            assert!(score_query(&c.query).unwrap().total < first);
        }
    }

    #[test]
    fn world_is_deterministic() {
        let (a, b) = (demo_world(), demo_world());
        assert_eq!(a.validation, b.validation);
        assert_eq!(a.candidates, b.candidates);
    }

    #[test]
    fn responder_scores_follow_gains() {
        let world = demo_world();
        let r = DemoResponder::new(world.clone());
        let code = crate::concept::evaluation_code();
        let prompt = crate::discriminators::discriminator_prompt(&world.candidates[0].plan_text, &code);
        let text = r.send(&ModelRequest::new(ModelRole::Discriminator, prompt, 0)).unwrap();
        assert_eq!(text, "Score: 80");
        let summary = r
            .send(&ModelRequest::new(ModelRole::Summarizer, crate::concept::unit_source(ConstraintId::Budget), 0))
            .unwrap();
        assert_eq!(summary, ConstraintId::Budget.descriptor().description);
    }
}
