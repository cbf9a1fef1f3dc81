//! Queries, day-by-day plans and the plan text grammar.
//!
//! A plan travels through prompts as text. Each day is one block:
//!
//! ```text
//! Day 1:
//! Current City: from Ashford to Brookvale
//! Transportation: Flight Number: F0001, from Ashford to Brookvale
//! Breakfast: -
//! Attraction: City Museum, Brookvale; River Park, Brookvale
//! Lunch: -
//! Dinner: Harbor Grill, Brookvale
//! Accommodation: Quiet Inn, Brookvale
//! ```
//!
//! Blocks are separated by one blank line and absent values are `-`.

use std::collections::BTreeSet;
use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::sandbox::{Activity, RoomType};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("plan parse error at line {line}: {reason}")]
pub struct ParseError {
    pub line: usize,
    pub reason: String,
}

#[derive(Debug, Error)]
pub enum QueryError {
    #[error("invalid query `{id}`: {reason}")]
    Invalid { id: String, reason: String },
    #[error("query file {path}: {reason}")]
    File { path: String, reason: String },
}

/// A room-rule request such as `must-allow-pets`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct RoomRuleRequest(pub Activity);

impl fmt::Display for RoomRuleRequest {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "must-allow-{}", self.0.as_str())
    }
}

impl FromStr for RoomRuleRequest {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        s.strip_prefix("must-allow-")
            .and_then(Activity::parse_suffix)
            .map(RoomRuleRequest)
            .ok_or_else(|| format!("unknown room rule request `{s}`"))
    }
}

impl TryFrom<String> for RoomRuleRequest {
    type Error = String;
    fn try_from(s: String) -> Result<Self, String> {
        s.parse()
    }
}

impl From<RoomRuleRequest> for String {
    fn from(r: RoomRuleRequest) -> String {
        r.to_string()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TransportRequest {
    NoSelfDriving,
    NoFlights,
}

impl TransportRequest {
    pub fn forbids(self, mode: TransportMode) -> bool {
        matches!(
            (self, mode),
            (TransportRequest::NoFlights, TransportMode::Flight) | (TransportRequest::NoSelfDriving, TransportMode::SelfDriving)
        )
    }
}

/// Where a query wants to go: an explicit ordered city list, or a region
/// with a required number of cities.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Destinations {
    Cities(Vec<String>),
    Region { region: String, required_city_count: u32 },
}

impl Destinations {
    pub fn city_count(&self) -> u32 {
        match self {
            Destinations::Cities(c) => c.len() as u32,
            Destinations::Region { required_city_count, .. } => *required_city_count,
        }
    }
}

/// A structured travel request.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Query {
    pub id: String,
    pub origin_city: String,
    pub destinations: Destinations,
    pub duration_days: u32,
    pub people: u32,
    pub budget: f64,
    #[serde(default)]
    pub room_rules: BTreeSet<RoomRuleRequest>,
    #[serde(default)]
    pub room_type: Option<RoomType>,
    #[serde(default)]
    pub cuisines: BTreeSet<String>,
    #[serde(default)]
    pub transportation_request: Option<TransportRequest>,
    #[serde(default)]
    pub raw_text: String,
}

impl Query {
    pub fn validate(&self) -> Result<(), QueryError> {
        let bad = |reason: &str| {
            Err(QueryError::Invalid {
                id: self.id.clone(),
                reason: reason.to_string(),
            })
        };
        if self.id.is_empty() {
            return bad("id is empty");
        }
        if self.origin_city.is_empty() {
            return bad("origin_city is empty");
        }
        if ![3, 5, 7].contains(&self.duration_days) {
            return bad("duration_days must be 3, 5 or 7");
        }
        if self.people < 1 {
            return bad("people must be at least 1");
        }
        if !self.budget.is_finite() || self.budget < 0.0 {
            return bad("budget must be a non-negative amount");
        }
        match &self.destinations {
            Destinations::Cities(c) if c.is_empty() => return bad("destinations list is empty"),
            Destinations::Cities(c) if c.iter().any(|x| x.is_empty() || *x == self.origin_city) => {
                return bad("destinations must be non-empty cities other than the origin")
            }
            Destinations::Region {
                required_city_count: 0, ..
            } => return bad("required_city_count must be at least 1"),
            _ => {}
        }
        Ok(())
    }
}

/// Reads queries from a file holding one JSON object, a JSON array, or
/// newline-delimited objects. Every query is validated.
pub fn load_queries(path: &Path) -> Result<Vec<Query>, QueryError> {
    let file_err = |reason: String| QueryError::File {
        path: path.display().to_string(),
        reason,
    };
    let text = fs::read_to_string(path).map_err(|e| file_err(e.to_string()))?;
    parse_queries(&text).map_err(|e| match e {
        QueryError::File { reason, .. } => file_err(reason),
        other => other,
    })
}

pub fn parse_queries(text: &str) -> Result<Vec<Query>, QueryError> {
    let mut out = Vec::new();
    for value in serde_json::Deserializer::from_str(text).into_iter::<serde_json::Value>() {
        let value = value.map_err(|e| QueryError::File {
            path: String::new(),
            reason: e.to_string(),
        })?;
        let items = match value {
            serde_json::Value::Array(items) => items,
            v => vec![v],
        };
        for item in items {
            let q: Query = serde_json::from_value(item).map_err(|e| QueryError::File {
                path: String::new(),
                reason: e.to_string(),
            })?;
            q.validate()?;
            out.push(q);
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TransportMode {
    Flight,
    SelfDriving,
    Taxi,
}

/// One transportation leg. `reference` is the flight number for flights.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TransportLeg {
    pub mode: TransportMode,
    pub origin: String,
    pub destination: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reference: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CurrentCity {
    Stay(String),
    Transit { from: String, to: String },
}

impl CurrentCity {
    /// Cities a day's meals and attractions may be in.
    pub fn cities(&self) -> Vec<&str> {
        match self {
            CurrentCity::Stay(c) => vec![c.as_str()],
            CurrentCity::Transit { from, to } => vec![from.as_str(), to.as_str()],
        }
    }

    /// The city the traveler sleeps in at the end of the day.
    pub fn end_city(&self) -> &str {
        match self {
            CurrentCity::Stay(c) => c,
            CurrentCity::Transit { to, .. } => to,
        }
    }

    pub fn start_city(&self) -> &str {
        match self {
            CurrentCity::Stay(c) => c,
            CurrentCity::Transit { from, .. } => from,
        }
    }

    pub fn is_transit(&self) -> bool {
        matches!(self, CurrentCity::Transit { .. })
    }
}

/// A named entity in a city: restaurant, attraction or accommodation.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Place {
    pub name: String,
    pub city: String,
}

impl Place {
    pub fn new(name: impl Into<String>, city: impl Into<String>) -> Self {
        Place {
            name: name.into(),
            city: city.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DayEntry {
    pub day_index: u32,
    pub current_city: CurrentCity,
    pub transportation: Option<TransportLeg>,
    pub breakfast: Option<Place>,
    pub lunch: Option<Place>,
    pub dinner: Option<Place>,
    pub attractions: Vec<Place>,
    pub accommodation: Option<Place>,
}

impl DayEntry {
    pub fn new(day_index: u32, current_city: CurrentCity) -> Self {
        DayEntry {
            day_index,
            current_city,
            transportation: None,
            breakfast: None,
            lunch: None,
            dinner: None,
            attractions: Vec::new(),
            accommodation: None,
        }
    }

    pub fn meals(&self) -> impl Iterator<Item = &Place> {
        [&self.breakfast, &self.lunch, &self.dinner].into_iter().flatten()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Plan {
    pub query_id: String,
    pub days: Vec<DayEntry>,
}

impl Plan {
    pub fn with_query_id(mut self, id: impl Into<String>) -> Self {
        self.query_id = id.into();
        self
    }

    pub fn legs(&self) -> impl Iterator<Item = &TransportLeg> {
        self.days.iter().filter_map(|d| d.transportation.as_ref())
    }
}

/// Counts the difficulty rubric scores.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct QueryFeatures {
    pub days: u32,
    pub cities: u32,
    pub people: u32,
    pub room_rule_count: u32,
    pub cuisine_count: u32,
    pub transport_request_count: u32,
}

impl QueryFeatures {
    pub fn new(days: u32, cities: u32, people: u32, room_rules: u32, cuisines: u32, transport: u32) -> Self {
        QueryFeatures {
            days,
            cities,
            people,
            room_rule_count: room_rules,
            cuisine_count: cuisines,
            transport_request_count: transport,
        }
    }
}

pub fn extract_features(query: &Query) -> QueryFeatures {
    QueryFeatures {
        days: query.duration_days,
        cities: query.destinations.city_count(),
        people: query.people,
        room_rule_count: query.room_rules.len() as u32,
        cuisine_count: query.cuisines.len() as u32,
        transport_request_count: u32::from(query.transportation_request.is_some()),
    }
}

// ---------------------------------------------------------------------------
// Text grammar

const ABSENT: &str = "-";
const LABELS: [&str; 7] = [
    "Current City",
    "Transportation",
    "Breakfast",
    "Attraction",
    "Lunch",
    "Dinner",
    "Accommodation",
];

fn place_text(p: &Option<Place>) -> String {
    match p {
        Some(p) => format!("{}, {}", p.name, p.city),
        None => ABSENT.to_string(),
    }
}

fn leg_text(leg: &TransportLeg) -> String {
    let route = format!("from {} to {}", leg.origin, leg.destination);
    match leg.mode {
        TransportMode::Flight => format!(
            "Flight Number: {}, {route}",
            leg.reference.as_deref().unwrap_or(ABSENT)
        ),
        TransportMode::SelfDriving => format!("Self-driving, {route}"),
        TransportMode::Taxi => format!("Taxi, {route}"),
    }
}

/// Canonical text for a plan: one block per day, absent values as `-`.
pub fn serialize_plan(plan: &Plan) -> String {
    plan.days
        .iter()
        .map(|d| {
            let city = match &d.current_city {
                CurrentCity::Stay(c) => c.clone(),
                CurrentCity::Transit { from, to } => format!("from {from} to {to}"),
            };
            let transport = d.transportation.as_ref().map(leg_text).unwrap_or_else(|| ABSENT.into());
            let attractions = if d.attractions.is_empty() {
                ABSENT.to_string()
            } else {
                d.attractions
                    .iter()
                    .map(|a| format!("{}, {}", a.name, a.city))
                    .collect::<Vec<_>>()
                    .join("; ")
            };
            format!(
                "Day {}:\nCurrent City: {city}\nTransportation: {transport}\nBreakfast: {}\nAttraction: {attractions}\nLunch: {}\nDinner: {}\nAccommodation: {}\n",
                d.day_index,
                place_text(&d.breakfast),
                place_text(&d.lunch),
                place_text(&d.dinner),
                place_text(&d.accommodation),
            )
        })
        .collect::<Vec<_>>()
        .join("\n")
}

fn parse_route(s: &str) -> Option<(String, String)> {
    let rest = s.strip_prefix("from ")?;
    let (from, to) = rest.split_once(" to ")?;
    let (from, to) = (from.trim(), to.trim());
    (!from.is_empty() && !to.is_empty()).then(|| (from.to_string(), to.to_string()))
}

fn parse_place(s: &str) -> Result<Option<Place>, String> {
    if s == ABSENT {
        return Ok(None);
    }
    let (name, city) = s
        .rsplit_once(',')
        .ok_or_else(|| format!("expected `<name>, <city>`, got `{s}`"))?;
    let (name, city) = (name.trim(), city.trim());
    if name.is_empty() || city.is_empty() {
        return Err(format!("expected `<name>, <city>`, got `{s}`"));
    }
    Ok(Some(Place::new(name, city)))
}

fn parse_leg(s: &str) -> Result<Option<TransportLeg>, String> {
    if s == ABSENT {
        return Ok(None);
    }
    let (head, route) = s
        .split_once(", from ")
        .ok_or_else(|| format!("expected `<mode>, from <A> to <B>`, got `{s}`"))?;
    let (origin, destination) =
        parse_route(&format!("from {route}")).ok_or_else(|| format!("bad route in `{s}`"))?;
    let head = head.trim();
    let (mode, reference) = if let Some(num) = head.strip_prefix("Flight Number:") {
        let num = num.trim();
        if num.is_empty() || num == ABSENT {
            return Err("flight leg without a flight number".into());
        }
        (TransportMode::Flight, Some(num.to_string()))
    } else if head.eq_ignore_ascii_case("self-driving") {
        (TransportMode::SelfDriving, None)
    } else if head.eq_ignore_ascii_case("taxi") {
        (TransportMode::Taxi, None)
    } else {
        return Err(format!("unknown transportation mode `{head}`"));
    };
    Ok(Some(TransportLeg {
        mode,
        origin,
        destination,
        reference,
    }))
}

fn parse_day_header(line: &str) -> Option<u32> {
    line.strip_prefix("Day ")?.strip_suffix(':')?.trim().parse().ok()
}

/// Parses plan text. Lines before the first `Day` header are ignored; after
/// that, every non-blank line must be a day header or a labeled line, days
/// must be numbered 1, 2, 3, ... and every label must appear once per day.
pub fn parse_plan(text: &str) -> Result<Plan, ParseError> {
    let lines: Vec<(usize, &str)> = text
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .skip_while(|(_, l)| parse_day_header(l).is_none())
        .filter(|(_, l)| !l.is_empty())
        .collect();
    if lines.is_empty() {
        return Err(ParseError {
            line: 0,
            reason: "no `Day 1:` block found".into(),
        });
    }

    let mut days: Vec<DayEntry> = Vec::new();
    let mut i = 0;
    while i < lines.len() {
        let (header_line, header) = lines[i];
        let expected = days.len() as u32 + 1;
        match parse_day_header(header) {
            Some(n) if n == expected => {}
            Some(n) => {
                return Err(ParseError {
                    line: header_line,
                    reason: format!("expected `Day {expected}:`, found day {n}"),
                })
            }
            None => {
                return Err(ParseError {
                    line: header_line,
                    reason: format!("expected `Day {expected}:`, found `{header}`"),
                })
            }
        }
        i += 1;
        let mut values: [Option<&str>; 7] = [None; 7];
        while i < lines.len() && parse_day_header(lines[i].1).is_none() {
            let (n, line) = lines[i];
            let err = |reason: String| ParseError { line: n, reason };
            let (label, value) = line
                .split_once(':')
                .ok_or_else(|| err(format!("expected `<label>: <value>`, got `{line}`")))?;
            let slot = LABELS
                .iter()
                .position(|l| l.eq_ignore_ascii_case(label.trim()))
                .ok_or_else(|| err(format!("unknown label `{}`", label.trim())))?;
            if values[slot].is_some() {
                return Err(err(format!("duplicate `{}` line", LABELS[slot])));
            }
            let value = value.trim();
            values[slot] = Some(if value.is_empty() { ABSENT } else { value });
            i += 1;
        }
        if let Some(missing) = values.iter().position(Option::is_none) {
            return Err(ParseError {
                line: header_line,
                reason: format!("day {expected} lacks a `{}` line", LABELS[missing]),
            });
        }
        let v = values.map(Option::unwrap);
        let err = |reason: String| ParseError {
            line: header_line,
            reason: format!("day {expected}: {reason}"),
        };
        let current_city = if let Some((from, to)) = parse_route(v[0]) {
            CurrentCity::Transit { from, to }
        } else if v[0] == ABSENT {
            return Err(err("current city is absent".into()));
        } else {
            CurrentCity::Stay(v[0].to_string())
        };
        let attractions = if v[3] == ABSENT {
            Vec::new()
        } else {
            v[3].split(';')
                .map(|a| parse_place(a.trim()).and_then(|p| p.ok_or_else(|| "empty attraction".to_string())))
                .collect::<Result<_, _>>()
                .map_err(err)?
        };
        days.push(DayEntry {
            day_index: expected,
            current_city,
            transportation: parse_leg(v[1]).map_err(err)?,
            breakfast: parse_place(v[2]).map_err(err)?,
            attractions,
            lunch: parse_place(v[4]).map_err(err)?,
            dinner: parse_place(v[5]).map_err(err)?,
            accommodation: parse_place(v[6]).map_err(err)?,
        });
    }
    Ok(Plan {
        query_id: String::new(),
        days,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) const THREE_DAY: &str = "\
Day 1:
Current City: from Ashford to Brookvale
Transportation: Flight Number: F0001, from Ashford to Brookvale
Breakfast: -
Attraction: City Museum, Brookvale
Lunch: -
Dinner: Harbor Grill, Brookvale
Accommodation: Quiet Inn, Brookvale

Day 2:
Current City: Brookvale
Transportation: -
Breakfast: Sunny Cafe, Brookvale
Attraction: River Park, Brookvale; Old Mill, Brookvale
Lunch: Maple Diner, Brookvale
Dinner: Golden Bistro, Brookvale
Accommodation: Quiet Inn, Brookvale

Day 3:
Current City: from Brookvale to Ashford
Transportation: Taxi, from Brookvale to Ashford
Breakfast: Sunny Cafe, Brookvale
Attraction: -
Lunch: Harbor Grill, Brookvale
Dinner: -
Accommodation: -
";

    #[test]
    fn parses_three_day_fixture() {
        let plan = parse_plan(THREE_DAY).unwrap();
        assert_eq!(plan.days.len(), 3);
        assert!(plan.days[2].dinner.is_none());
        assert_eq!(
            plan.days[0].current_city,
            CurrentCity::Transit {
                from: "Ashford".into(),
                to: "Brookvale".into()
            }
        );
        let leg = plan.days[0].transportation.as_ref().unwrap();
        assert_eq!(leg.mode, TransportMode::Flight);
        assert_eq!(leg.reference.as_deref(), Some("F0001"));
        assert_eq!(plan.days[1].attractions.len(), 2);
        assert_eq!(plan.days[2].transportation.as_ref().unwrap().mode, TransportMode::Taxi);
        assert_eq!(serialize_plan(&plan), THREE_DAY);
    }

    #[test]
    fn missing_day_header_is_an_error() {
        let text = THREE_DAY.replace("Day 2:", "");
        let err = parse_plan(&text).unwrap_err();
        assert!(err.reason.contains("duplicate"), "{err}");
        let skipped = THREE_DAY.replace("Day 2:", "Day 4:");
        assert!(parse_plan(&skipped).unwrap_err().reason.contains("expected `Day 2:`"));
    }

    #[test]
    fn missing_label_and_garbage_are_errors() {
        let text = THREE_DAY.replacen("Lunch: -\n", "", 1);
        assert!(parse_plan(&text).unwrap_err().reason.contains("Lunch"));
        assert!(parse_plan("").is_err());
        assert!(parse_plan("I could not produce a plan.").is_err());
        let garbage = format!("{THREE_DAY}\nHope you enjoy the trip!\n");
        assert!(parse_plan(&garbage).is_err());
    }

    #[test]
    fn tolerates_preamble_and_crlf() {
        let text = format!("Here is your plan:\r\n\r\n{}", THREE_DAY.replace('\n', "\r\n"));
        assert_eq!(parse_plan(&text).unwrap(), parse_plan(THREE_DAY).unwrap());
    }

    #[test]
    fn empty_fields_render_as_dashes() {
        let plan = Plan {
            query_id: "q".into(),
            days: vec![DayEntry::new(1, CurrentCity::Stay("Brookvale".into()))],
        };
        assert_eq!(
            serialize_plan(&plan),
            "Day 1:\nCurrent City: Brookvale\nTransportation: -\nBreakfast: -\nAttraction: -\nLunch: -\nDinner: -\nAccommodation: -\n"
        );
    }

    fn query(json: &str) -> Query {
        let q: Query = serde_json::from_str(json).unwrap();
        q.validate().unwrap();
        q
    }

    #[test]
    fn features_of_constructed_queries() {
        let minimal = query(
            r#"{"id":"q1","origin_city":"A","destinations":["B"],"duration_days":3,"people":1,"budget":500}"#,
        );
        assert_eq!(extract_features(&minimal), QueryFeatures::new(3, 1, 1, 0, 0, 0));

        let rules = query(
            r#"{"id":"q2","origin_city":"A","destinations":["B"],"duration_days":3,"people":2,"budget":900,
                "room_rules":["must-allow-parties","must-allow-pets"],"transportation_request":"no-flights"}"#,
        );
        let f = extract_features(&rules);
        assert_eq!((f.room_rule_count, f.transport_request_count), (2, 1));

        let big = query(
            r#"{"id":"q3","origin_city":"A","destinations":{"region":"North","required_city_count":3},
                "duration_days":7,"people":5,"budget":9000,"cuisines":["Thai","Indian"]}"#,
        );
        let f = extract_features(&big);
        assert_eq!((f.days, f.cities, f.people), (7, 3, 5));
        assert_eq!(f.cuisine_count, 2);
    }

    #[test]
    fn query_validation() {
        let bad: Query = serde_json::from_str(
            r#"{"id":"q","origin_city":"A","destinations":["B"],"duration_days":4,"people":1,"budget":1}"#,
        )
        .unwrap();
        assert!(bad.validate().is_err());
        assert!(serde_json::from_str::<Query>(
            r#"{"id":"q","origin_city":"A","destinations":["B"],"duration_days":3,"people":1,"budget":1,
                "room_rules":["quiet please"]}"#
        )
        .is_err());
        let many = parse_queries(
            "{\"id\":\"a\",\"origin_city\":\"A\",\"destinations\":[\"B\"],\"duration_days\":3,\"people\":1,\"budget\":1}\n\
             {\"id\":\"b\",\"origin_city\":\"A\",\"destinations\":[\"B\"],\"duration_days\":5,\"people\":1,\"budget\":1}\n",
        )
        .unwrap();
        assert_eq!(many.len(), 2);
    }

    proptest::proptest! {
        #[test]
        fn normalized_plans_round_trip(seed in proptest::prelude::any::<u64>()) {
            use rand::SeedableRng;
            let plan = crate::fixtures::random_plan(&mut rand_chacha::ChaCha8Rng::seed_from_u64(seed));
            let text = serialize_plan(&plan);
            proptest::prop_assert_eq!(parse_plan(&text).unwrap(), plan);
        }
    }
}
