//! Plan evaluation against a query and a sandbox.
//!
//! The catalog is data: every check is a [`ConstraintId`] with exactly one
//! [`ConstraintDescriptor`]. [`evaluate`] runs the whole catalog and
//! returns one outcome per check, split into commonsense and hard sections.
//! Failures are outcomes, never errors.

mod oracle;

use std::collections::{BTreeSet, HashSet};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::par::Execution;
use crate::plan::{CurrentCity, Destinations, Place, Plan, Query, TransportMode};
use crate::sandbox::Sandbox;

pub use oracle::{
    candidate_count, candidate_plans, enumerate_feasible, enumerate_feasible_with, recheck, OracleError, DEFAULT_CAP,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ConstraintKind {
    Commonsense,
    Hard,
}

/// Every registered check, in catalog order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ConstraintId {
    WithinSandbox,
    CompleteInformation,
    WithinCurrentCity,
    ReasonableCityRoute,
    DiverseRestaurants,
    DiverseAttractions,
    NonConflictingTransportation,
    MinimumNights,
    Budget,
    RoomRules,
    RoomType,
    Cuisines,
    TransportationRequest,
}

impl ConstraintId {
    pub const ALL: [ConstraintId; 13] = [
        ConstraintId::WithinSandbox,
        ConstraintId::CompleteInformation,
        ConstraintId::WithinCurrentCity,
        ConstraintId::ReasonableCityRoute,
        ConstraintId::DiverseRestaurants,
        ConstraintId::DiverseAttractions,
        ConstraintId::NonConflictingTransportation,
        ConstraintId::MinimumNights,
        ConstraintId::Budget,
        ConstraintId::RoomRules,
        ConstraintId::RoomType,
        ConstraintId::Cuisines,
        ConstraintId::TransportationRequest,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ConstraintId::WithinSandbox => "within-sandbox",
            ConstraintId::CompleteInformation => "complete-information",
            ConstraintId::WithinCurrentCity => "within-current-city",
            ConstraintId::ReasonableCityRoute => "reasonable-city-route",
            ConstraintId::DiverseRestaurants => "diverse-restaurants",
            ConstraintId::DiverseAttractions => "diverse-attractions",
            ConstraintId::NonConflictingTransportation => "non-conflicting-transportation",
            ConstraintId::MinimumNights => "minimum-nights",
            ConstraintId::Budget => "budget",
            ConstraintId::RoomRules => "room-rules",
            ConstraintId::RoomType => "room-type",
            ConstraintId::Cuisines => "cuisines",
            ConstraintId::TransportationRequest => "transportation-request",
        }
    }

    pub fn kind(self) -> ConstraintKind {
        match self {
            ConstraintId::Budget
            | ConstraintId::RoomRules
            | ConstraintId::RoomType
            | ConstraintId::Cuisines
            | ConstraintId::TransportationRequest => ConstraintKind::Hard,
            _ => ConstraintKind::Commonsense,
        }
    }

    pub fn from_id(s: &str) -> Option<ConstraintId> {
        ConstraintId::ALL.into_iter().find(|c| c.as_str() == s)
    }

    pub fn descriptor(self) -> ConstraintDescriptor {
        let (title, description, applicability) = match self {
            ConstraintId::WithinSandbox => (
                "Within sandbox",
                "Every flight, route, restaurant, attraction and accommodation in the plan exists in the reference data.",
                "always",
            ),
            ConstraintId::CompleteInformation => (
                "Complete information",
                "Every day has at least one meal, every day except the last has an accommodation, every travel day has transportation and every non-travel day has at least one attraction.",
                "always",
            ),
            ConstraintId::WithinCurrentCity => (
                "Within current city",
                "Meals and attractions are in the day's city (either city on a travel day), the accommodation is in the city the day ends in, and transportation only appears on travel days and matches the day's route.",
                "always",
            ),
            ConstraintId::ReasonableCityRoute => (
                "Reasonable city route",
                "The trip starts by leaving the origin city, visits the requested destinations in order with contiguous transitions, and ends by returning to the origin city.",
                "always",
            ),
            ConstraintId::DiverseRestaurants => (
                "Diverse restaurants",
                "No restaurant is visited more than once during the trip.",
                "always",
            ),
            ConstraintId::DiverseAttractions => (
                "Diverse attractions",
                "No attraction is visited more than once during the trip.",
                "always",
            ),
            ConstraintId::NonConflictingTransportation => (
                "Non-conflicting transportation",
                "Flights and self-driving are never both used in one plan.",
                "always",
            ),
            ConstraintId::MinimumNights => (
                "Minimum nights",
                "Each consecutive stay at an accommodation lasts at least that accommodation's minimum number of nights.",
                "plan books at least one accommodation",
            ),
            ConstraintId::Budget => (
                "Budget",
                "The total cost of transportation, accommodation and meals for all travelers does not exceed the query budget.",
                "always",
            ),
            ConstraintId::RoomRules => (
                "Room rules",
                "Every booked accommodation allows every activity the query requires (parties, pets, smoking, children, visitors).",
                "query requests at least one room rule",
            ),
            ConstraintId::RoomType => (
                "Room type",
                "Every booked accommodation has the room type the query requests.",
                "query requests a room type",
            ),
            ConstraintId::Cuisines => (
                "Cuisines",
                "Every requested cuisine is served by at least one restaurant in the plan.",
                "query requests at least one cuisine",
            ),
            ConstraintId::TransportationRequest => (
                "Transportation request",
                "A transportation mode the query forbids (no flights, no self-driving) is never used.",
                "query carries a transportation request",
            ),
        };
        ConstraintDescriptor {
            id: self.as_str().to_string(),
            kind: self.kind(),
            title: title.to_string(),
            description: description.to_string(),
            applicability: applicability.to_string(),
        }
    }

    /// Whether the check applies to this query/plan pair.
    pub fn applies(self, plan: &Plan, query: &Query) -> bool {
        match self {
            ConstraintId::MinimumNights => plan.days.iter().any(|d| d.accommodation.is_some()),
            ConstraintId::RoomRules => !query.room_rules.is_empty(),
            ConstraintId::RoomType => query.room_type.is_some(),
            ConstraintId::Cuisines => !query.cuisines.is_empty(),
            ConstraintId::TransportationRequest => query.transportation_request.is_some(),
            _ => true,
        }
    }

    /// Runs this single check. Used by [`evaluate`] and by trace capture.
    pub fn check(self, plan: &Plan, query: &Query, sandbox: &Sandbox, cost: &CostModel) -> ConstraintOutcome {
        if !self.applies(plan, query) {
            return ConstraintOutcome::not_applicable(self);
        }
        let verdict = match self {
            ConstraintId::WithinSandbox => within_sandbox(plan, sandbox),
            ConstraintId::CompleteInformation => complete_information(plan),
            ConstraintId::WithinCurrentCity => within_current_city(plan),
            ConstraintId::ReasonableCityRoute => reasonable_city_route(plan, query),
            ConstraintId::DiverseRestaurants => first_repeat(plan.days.iter().flat_map(|d| d.meals()), "restaurant"),
            ConstraintId::DiverseAttractions => {
                first_repeat(plan.days.iter().flat_map(|d| d.attractions.iter()), "attraction")
            }
            ConstraintId::NonConflictingTransportation => non_conflicting_transportation(plan),
            ConstraintId::MinimumNights => minimum_nights(plan, sandbox),
            ConstraintId::Budget => budget(plan, query, sandbox, cost),
            ConstraintId::RoomRules => room_rules(plan, query, sandbox),
            ConstraintId::RoomType => room_type(plan, query, sandbox),
            ConstraintId::Cuisines => cuisines(plan, query, sandbox),
            ConstraintId::TransportationRequest => transportation_request(plan, query),
        };
        match verdict {
            Ok(()) => ConstraintOutcome::pass(self),
            Err(message) => ConstraintOutcome::fail(self, message),
        }
    }
}

impl fmt::Display for ConstraintId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConstraintDescriptor {
    pub id: String,
    pub kind: ConstraintKind,
    pub title: String,
    pub description: String,
    pub applicability: String,
}

/// The full registered catalog, commonsense checks first.
pub fn catalog() -> Vec<ConstraintDescriptor> {
    ConstraintId::ALL.iter().map(|c| c.descriptor()).collect()
}

/// The catalog as a pretty JSON document.
pub fn catalog_json() -> String {
    serde_json::to_string_pretty(&catalog()).expect("descriptors serialize")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OutcomeStatus {
    Pass,
    Fail,
    NotApplicable,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConstraintOutcome {
    pub constraint_id: ConstraintId,
    pub status: OutcomeStatus,
    pub message: String,
}

impl ConstraintOutcome {
    pub fn pass(id: ConstraintId) -> Self {
        ConstraintOutcome {
            constraint_id: id,
            status: OutcomeStatus::Pass,
            message: "satisfied".into(),
        }
    }

    pub fn fail(id: ConstraintId, message: impl Into<String>) -> Self {
        let mut message = message.into();
        if message.is_empty() {
            message = format!("{id} violated");
        }
        ConstraintOutcome {
            constraint_id: id,
            status: OutcomeStatus::Fail,
            message,
        }
    }

    pub fn not_applicable(id: ConstraintId) -> Self {
        ConstraintOutcome {
            constraint_id: id,
            status: OutcomeStatus::NotApplicable,
            message: "not applicable".into(),
        }
    }

    pub fn is_applicable(&self) -> bool {
        self.status != OutcomeStatus::NotApplicable
    }

    pub fn passed(&self) -> bool {
        self.status == OutcomeStatus::Pass
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub query_id: String,
    pub delivered: bool,
    pub commonsense: Vec<ConstraintOutcome>,
    pub hard: Vec<ConstraintOutcome>,
    /// `None` when the plan references entities that cannot be priced.
    pub total_cost: Option<f64>,
}

impl EvaluationReport {
    pub fn undelivered(query_id: impl Into<String>) -> Self {
        EvaluationReport {
            query_id: query_id.into(),
            delivered: false,
            commonsense: Vec::new(),
            hard: Vec::new(),
            total_cost: None,
        }
    }

    pub fn outcomes(&self, kind: ConstraintKind) -> &[ConstraintOutcome] {
        match kind {
            ConstraintKind::Commonsense => &self.commonsense,
            ConstraintKind::Hard => &self.hard,
        }
    }

    /// (passed, applicable) counts for one section.
    pub fn counts(&self, kind: ConstraintKind) -> (usize, usize) {
        let outcomes = self.outcomes(kind);
        let applicable = outcomes.iter().filter(|o| o.is_applicable()).count();
        let passed = outcomes.iter().filter(|o| o.passed()).count();
        (passed, applicable)
    }

    /// Delivered and no applicable check of `kind` failed.
    pub fn all_passed(&self, kind: ConstraintKind) -> bool {
        self.delivered && self.outcomes(kind).iter().all(|o| o.status != OutcomeStatus::Fail)
    }

    /// Delivered with zero failures in either section.
    pub fn fully_passed(&self) -> bool {
        self.all_passed(ConstraintKind::Commonsense) && self.all_passed(ConstraintKind::Hard)
    }

    pub fn failures(&self) -> impl Iterator<Item = &ConstraintOutcome> {
        self.commonsense.iter().chain(&self.hard).filter(|o| o.status == OutcomeStatus::Fail)
    }

    pub fn outcome(&self, id: ConstraintId) -> Option<&ConstraintOutcome> {
        self.commonsense.iter().chain(&self.hard).find(|o| o.constraint_id == id)
    }
}

/// Group sizes used to turn per-vehicle and per-room prices into trip costs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CostModel {
    pub taxi_capacity: u32,
    pub car_capacity: u32,
}

impl Default for CostModel {
    fn default() -> Self {
        CostModel {
            taxi_capacity: 4,
            car_capacity: 5,
        }
    }
}

fn groups(people: u32, capacity: u32) -> f64 {
    people.div_ceil(capacity.max(1)) as f64
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum CostError {
    #[error("unknown entity `{0}`")]
    UnknownEntity(String),
}

/// Total trip cost for all travelers. Flights are priced per person, taxis
/// per `ceil(people/4)` vehicles, self-driving per `ceil(people/5)` cars,
/// hotels per night per `ceil(people/maximum_occupancy)` rooms and meals
/// per person.
pub fn total_cost(plan: &Plan, query: &Query, sandbox: &Sandbox) -> Result<f64, CostError> {
    total_cost_with(plan, query, sandbox, &CostModel::default())
}

pub fn total_cost_with(plan: &Plan, query: &Query, sandbox: &Sandbox, model: &CostModel) -> Result<f64, CostError> {
    let people = query.people;
    let unknown = |what: &str, name: &str, city: &str| CostError::UnknownEntity(format!("{what} {name} ({city})"));
    let mut total = 0.0;
    for day in &plan.days {
        if let Some(leg) = &day.transportation {
            total += match leg.mode {
                TransportMode::Flight => {
                    let number = leg.reference.as_deref().unwrap_or_default();
                    let f = sandbox
                        .flight(number, &leg.origin, &leg.destination)
                        .ok_or_else(|| unknown("flight", number, &leg.origin))?;
                    f.price * people as f64
                }
                TransportMode::Taxi | TransportMode::SelfDriving => {
                    let r = sandbox
                        .route(&leg.origin, &leg.destination)
                        .ok_or_else(|| unknown("route", &leg.origin, &leg.destination))?;
                    if leg.mode == TransportMode::Taxi {
                        r.taxi_cost * groups(people, model.taxi_capacity)
                    } else {
                        r.self_driving_cost * groups(people, model.car_capacity)
                    }
                }
            };
        }
        for meal in day.meals() {
            let r = sandbox
                .restaurant(&meal.name, &meal.city)
                .ok_or_else(|| unknown("restaurant", &meal.name, &meal.city))?;
            total += r.average_cost * people as f64;
        }
        if let Some(stay) = &day.accommodation {
            let h = sandbox
                .accommodation(&stay.name, &stay.city)
                .ok_or_else(|| unknown("accommodation", &stay.name, &stay.city))?;
            total += h.price_per_night * groups(people, h.maximum_occupancy);
        }
    }
    Ok(total)
}

/// Options for [`evaluate_with`].
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct EvalOptions {
    pub cost: CostModel,
}

/// Runs the full catalog. A plan whose day count differs from the query's
/// duration (or whose days are not numbered 1..n) is undelivered.
pub fn evaluate(plan: &Plan, query: &Query, sandbox: &Sandbox) -> EvaluationReport {
    evaluate_with(plan, query, sandbox, &EvalOptions::default())
}

pub fn evaluate_with(plan: &Plan, query: &Query, sandbox: &Sandbox, options: &EvalOptions) -> EvaluationReport {
    let numbered = plan.days.iter().enumerate().all(|(i, d)| d.day_index as usize == i + 1);
    if plan.days.len() != query.duration_days as usize || !numbered {
        return EvaluationReport::undelivered(&query.id);
    }
    let mut report = EvaluationReport {
        query_id: query.id.clone(),
        delivered: true,
        commonsense: Vec::new(),
        hard: Vec::new(),
        total_cost: total_cost_with(plan, query, sandbox, &options.cost).ok(),
    };
    for id in ConstraintId::ALL {
        let outcome = id.check(plan, query, sandbox, &options.cost);
        match id.kind() {
            ConstraintKind::Commonsense => report.commonsense.push(outcome),
            ConstraintKind::Hard => report.hard.push(outcome),
        }
    }
    report
}

/// Evaluates a parsed-or-failed plan; parse failures become undelivered
/// reports.
pub fn evaluate_parsed<E>(plan: Result<&Plan, E>, query: &Query, sandbox: &Sandbox) -> EvaluationReport {
    match plan {
        Ok(p) => evaluate(p, query, sandbox),
        Err(_) => EvaluationReport::undelivered(&query.id),
    }
}

/// Evaluates many (plan, query) pairs against one sandbox, in input order.
pub fn evaluate_batch(exec: Execution, items: &[(Plan, Query)], sandbox: &Sandbox) -> Vec<EvaluationReport> {
    exec.map(items, |(p, q)| evaluate(p, q, sandbox))
}

// ---------------------------------------------------------------------------
// Individual checks. Each returns Err(message) on the first violation.

type Verdict = Result<(), String>;

fn within_sandbox(plan: &Plan, sandbox: &Sandbox) -> Verdict {
    for day in &plan.days {
        let n = day.day_index;
        if let Some(leg) = &day.transportation {
            let known = match leg.mode {
                TransportMode::Flight => leg
                    .reference
                    .as_deref()
                    .is_some_and(|f| sandbox.flight(f, &leg.origin, &leg.destination).is_some()),
                TransportMode::Taxi | TransportMode::SelfDriving => sandbox.route(&leg.origin, &leg.destination).is_some(),
            };
            if !known {
                return Err(format!(
                    "day {n}: no {:?} from {} to {} in the reference data",
                    leg.mode, leg.origin, leg.destination
                ));
            }
        }
        for meal in day.meals() {
            if sandbox.restaurant(&meal.name, &meal.city).is_none() {
                return Err(format!("day {n}: unknown restaurant {} in {}", meal.name, meal.city));
            }
        }
        for a in &day.attractions {
            if sandbox.attraction(&a.name, &a.city).is_none() {
                return Err(format!("day {n}: unknown attraction {} in {}", a.name, a.city));
            }
        }
        if let Some(h) = &day.accommodation {
            if sandbox.accommodation(&h.name, &h.city).is_none() {
                return Err(format!("day {n}: unknown accommodation {} in {}", h.name, h.city));
            }
        }
    }
    Ok(())
}

fn complete_information(plan: &Plan) -> Verdict {
    let last = plan.days.len();
    for (i, day) in plan.days.iter().enumerate() {
        let n = day.day_index;
        if day.current_city.is_transit() && day.transportation.is_none() {
            return Err(format!("day {n}: travel day without transportation"));
        }
        if i + 1 < last && day.accommodation.is_none() {
            return Err(format!("day {n}: no accommodation"));
        }
        if day.meals().next().is_none() {
            return Err(format!("day {n}: no meals"));
        }
        if !day.current_city.is_transit() && day.attractions.is_empty() {
            return Err(format!("day {n}: no attractions"));
        }
    }
    Ok(())
}

fn within_current_city(plan: &Plan) -> Verdict {
    for day in &plan.days {
        let n = day.day_index;
        let allowed = day.current_city.cities();
        for meal in day.meals() {
            if !allowed.contains(&meal.city.as_str()) {
                return Err(format!("day {n}: restaurant {} is in {}, not {}", meal.name, meal.city, allowed.join("/")));
            }
        }
        for a in &day.attractions {
            if !allowed.contains(&a.city.as_str()) {
                return Err(format!("day {n}: attraction {} is in {}, not {}", a.name, a.city, allowed.join("/")));
            }
        }
        if let Some(h) = &day.accommodation {
            if h.city != day.current_city.end_city() {
                return Err(format!(
                    "day {n}: accommodation {} is in {}, not {}",
                    h.name,
                    h.city,
                    day.current_city.end_city()
                ));
            }
        }
        if let Some(leg) = &day.transportation {
            match &day.current_city {
                CurrentCity::Transit { from, to } if leg.origin == *from && leg.destination == *to => {}
                CurrentCity::Transit { from, to } => {
                    return Err(format!(
                        "day {n}: transportation {} -> {} does not match the day's route {from} -> {to}",
                        leg.origin, leg.destination
                    ))
                }
                CurrentCity::Stay(c) => return Err(format!("day {n}: transportation on a day spent in {c}")),
            }
        }
    }
    Ok(())
}

fn reasonable_city_route(plan: &Plan, query: &Query) -> Verdict {
    let origin = query.origin_city.as_str();
    let (Some(first), Some(last)) = (plan.days.first(), plan.days.last()) else {
        return Err("plan has no days".into());
    };
    if !first.current_city.is_transit() || first.current_city.start_city() != origin {
        return Err(format!("day 1 does not depart from {origin}"));
    }
    if !last.current_city.is_transit() || last.current_city.end_city() != origin {
        return Err(format!("the last day does not return to {origin}"));
    }
    for pair in plan.days.windows(2) {
        let (prev, next) = (&pair[0], &pair[1]);
        if next.current_city.start_city() != prev.current_city.end_city() {
            return Err(format!(
                "day {} starts in {} but day {} ended in {}",
                next.day_index,
                next.current_city.start_city(),
                prev.day_index,
                prev.current_city.end_city()
            ));
        }
    }
    let mut arrivals = Vec::new();
    for day in &plan.days {
        if let CurrentCity::Transit { from, to } = &day.current_city {
            if from == to {
                return Err(format!("day {}: transit from {from} to itself", day.day_index));
            }
            arrivals.push(to.as_str());
        }
    }
    arrivals.pop();
    match &query.destinations {
        Destinations::Cities(wanted) => {
            if arrivals.iter().copied().ne(wanted.iter().map(String::as_str)) {
                return Err(format!(
                    "visited [{}] but the query asks for [{}]",
                    arrivals.join(", "),
                    wanted.join(", ")
                ));
            }
        }
        Destinations::Region {
            required_city_count, ..
        } => {
            let distinct: BTreeSet<&str> = arrivals.iter().copied().collect();
            if arrivals.contains(&origin)
                || distinct.len() != arrivals.len()
                || arrivals.len() != *required_city_count as usize
            {
                return Err(format!(
                    "visited [{}] but the query asks for {required_city_count} distinct cities",
                    arrivals.join(", ")
                ));
            }
        }
    }
    Ok(())
}

fn first_repeat<'a>(places: impl Iterator<Item = &'a Place>, what: &str) -> Verdict {
    let mut seen = HashSet::new();
    for p in places {
        if !seen.insert(p) {
            return Err(format!("{what} {} in {} is visited more than once", p.name, p.city));
        }
    }
    Ok(())
}

fn non_conflicting_transportation(plan: &Plan) -> Verdict {
    let flies = plan.legs().any(|l| l.mode == TransportMode::Flight);
    let drives = plan.legs().any(|l| l.mode == TransportMode::SelfDriving);
    if flies && drives {
        return Err("plan mixes flights and self-driving".into());
    }
    Ok(())
}

fn minimum_nights(plan: &Plan, sandbox: &Sandbox) -> Verdict {
    let mut i = 0;
    while i < plan.days.len() {
        let Some(stay) = &plan.days[i].accommodation else {
            i += 1;
            continue;
        };
        let start = i;
        while i < plan.days.len() && plan.days[i].accommodation.as_ref() == Some(stay) {
            i += 1;
        }
        let nights = (i - start) as u32;
        if let Some(h) = sandbox.accommodation(&stay.name, &stay.city) {
            if nights < h.minimum_nights {
                return Err(format!(
                    "{} requires {} nights but is booked for {nights}",
                    h.name, h.minimum_nights
                ));
            }
        }
    }
    Ok(())
}

fn budget(plan: &Plan, query: &Query, sandbox: &Sandbox, cost: &CostModel) -> Verdict {
    match total_cost_with(plan, query, sandbox, cost) {
        Ok(c) if c <= query.budget => Ok(()),
        Ok(c) => Err(format!("total cost {c} exceeds budget {}", query.budget)),
        Err(e) => Err(format!("cost cannot be computed: {e}")),
    }
}

fn booked_hotels<'a>(plan: &'a Plan, sandbox: &'a Sandbox) -> impl Iterator<Item = &'a crate::sandbox::AccommodationRecord> {
    plan.days
        .iter()
        .filter_map(|d| d.accommodation.as_ref())
        .filter_map(|p| sandbox.accommodation(&p.name, &p.city))
}

fn room_rules(plan: &Plan, query: &Query, sandbox: &Sandbox) -> Verdict {
    for h in booked_hotels(plan, sandbox) {
        for rule in &query.room_rules {
            if !h.allows(rule.0) {
                return Err(format!("{} does not allow {}", h.name, rule.0.as_str()));
            }
        }
    }
    Ok(())
}

fn room_type(plan: &Plan, query: &Query, sandbox: &Sandbox) -> Verdict {
    let Some(wanted) = query.room_type else {
        return Ok(());
    };
    for h in booked_hotels(plan, sandbox) {
        if h.room_type != wanted {
            return Err(format!("{} is a {}, not a {wanted}", h.name, h.room_type));
        }
    }
    Ok(())
}

fn cuisines(plan: &Plan, query: &Query, sandbox: &Sandbox) -> Verdict {
    let served: BTreeSet<&str> = plan
        .days
        .iter()
        .flat_map(|d| d.meals())
        .filter_map(|m| sandbox.restaurant(&m.name, &m.city))
        .flat_map(|r| r.cuisines.iter().map(String::as_str))
        .collect();
    let missing: Vec<&str> = query
        .cuisines
        .iter()
        .map(String::as_str)
        .filter(|c| !served.contains(c))
        .collect();
    if missing.is_empty() {
        Ok(())
    } else {
        Err(format!("no restaurant serves {}", missing.join(", ")))
    }
}

fn transportation_request(plan: &Plan, query: &Query) -> Verdict {
    let Some(req) = query.transportation_request else {
        return Ok(());
    };
    match plan.legs().find(|l| req.forbids(l.mode)) {
        Some(l) => Err(format!("{:?} from {} to {} is forbidden", l.mode, l.origin, l.destination)),
        None => Ok(()),
    }
}
