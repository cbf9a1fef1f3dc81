//! Closed reference data for planning: flights, accommodations, restaurants,
//! attractions and ground routes.
//!
//! A [`Sandbox`] is immutable after construction. It can be built from a JSON
//! archive (one document keyed by category), from the five fixed-name CSV
//! files, or synthesized deterministically from a seed.

use std::collections::{BTreeSet, HashMap};
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum SandboxError {
    #[error("archive not found: {}", .0.display())]
    ArchiveNotFound(PathBuf),
    #[error("archive is not a category-keyed document: {0}")]
    MalformedArchive(String),
    #[error("malformed {category} record at row {row}: {reason}")]
    MalformedRecord {
        category: Category,
        row: usize,
        reason: String,
    },
    #[error("unknown category `{0}`")]
    UnknownCategory(String),
    #[error("unknown field `{field}` for category {category}")]
    UnknownField { category: Category, field: String },
    #[error("i/o error on {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> SandboxError + '_ {
    move |source| SandboxError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// The five reference-data categories, in canonical order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Category {
    Flights,
    Accommodations,
    Restaurants,
    Attractions,
    Distances,
}

impl Category {
    pub const ALL: [Category; 5] = [
        Category::Flights,
        Category::Accommodations,
        Category::Restaurants,
        Category::Attractions,
        Category::Distances,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Category::Flights => "flights",
            Category::Accommodations => "accommodations",
            Category::Restaurants => "restaurants",
            Category::Attractions => "attractions",
            Category::Distances => "distances",
        }
    }

    pub fn file_name(self) -> &'static str {
        match self {
            Category::Flights => "flights.csv",
            Category::Accommodations => "accommodations.csv",
            Category::Restaurants => "restaurants.csv",
            Category::Attractions => "attractions.csv",
            Category::Distances => "distances.csv",
        }
    }

    fn header(self) -> &'static [&'static str] {
        match self {
            Category::Flights => &[
                "flight_number",
                "origin_city",
                "destination_city",
                "departure_time",
                "arrival_time",
                "date",
                "price",
            ],
            Category::Accommodations => &[
                "name",
                "city",
                "price_per_night",
                "room_type",
                "house_rules",
                "minimum_nights",
                "maximum_occupancy",
            ],
            Category::Restaurants => &["name", "city", "cuisines", "average_cost"],
            Category::Attractions => &["name", "city"],
            Category::Distances => &[
                "origin_city",
                "destination_city",
                "distance_km",
                "self_driving_cost",
                "taxi_cost",
                "duration_minutes",
            ],
        }
    }
}

impl fmt::Display for Category {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Category {
    type Err = SandboxError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Category::ALL
            .into_iter()
            .find(|c| c.as_str() == s)
            .ok_or_else(|| SandboxError::UnknownCategory(s.to_string()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum RoomType {
    EntireRoom,
    PrivateRoom,
    SharedRoom,
}

impl RoomType {
    pub const ALL: [RoomType; 3] = [RoomType::EntireRoom, RoomType::PrivateRoom, RoomType::SharedRoom];

    pub fn as_str(self) -> &'static str {
        match self {
            RoomType::EntireRoom => "entire-room",
            RoomType::PrivateRoom => "private-room",
            RoomType::SharedRoom => "shared-room",
        }
    }
}

impl fmt::Display for RoomType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for RoomType {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        RoomType::ALL
            .into_iter()
            .find(|t| t.as_str() == s)
            .ok_or_else(|| format!("unknown room type `{s}`"))
    }
}

impl TryFrom<String> for RoomType {
    type Error = String;
    fn try_from(s: String) -> Result<Self, Self::Error> {
        s.parse()
    }
}

impl From<RoomType> for String {
    fn from(t: RoomType) -> String {
        t.as_str().to_string()
    }
}

/// Activities a house rule can forbid and a query can require.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Activity {
    Smoking,
    Parties,
    Pets,
    Children,
    Visitors,
}

impl Activity {
    pub const ALL: [Activity; 5] = [
        Activity::Smoking,
        Activity::Parties,
        Activity::Pets,
        Activity::Children,
        Activity::Visitors,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Activity::Smoking => "smoking",
            Activity::Parties => "parties",
            Activity::Pets => "pets",
            Activity::Children => "children",
            Activity::Visitors => "visitors",
        }
    }

    pub(crate) fn parse_suffix(s: &str) -> Option<Activity> {
        Activity::ALL.into_iter().find(|a| a.as_str() == s)
    }
}

/// A house rule tag such as `no-parties`. Only the closed vocabulary
/// `no-{smoking,parties,pets,children,visitors}` is accepted.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct HouseRule(pub Activity);

impl fmt::Display for HouseRule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "no-{}", self.0.as_str())
    }
}

impl FromStr for HouseRule {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        s.strip_prefix("no-")
            .and_then(Activity::parse_suffix)
            .map(HouseRule)
            .ok_or_else(|| format!("unknown house rule `{s}`"))
    }
}

impl TryFrom<String> for HouseRule {
    type Error = String;
    fn try_from(s: String) -> Result<Self, Self::Error> {
        s.parse()
    }
}

impl From<HouseRule> for String {
    fn from(r: HouseRule) -> String {
        r.to_string()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FlightRecord {
    pub flight_number: String,
    pub origin_city: String,
    pub destination_city: String,
    pub departure_time: String,
    pub arrival_time: String,
    pub date: String,
    pub price: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AccommodationRecord {
    pub name: String,
    pub city: String,
    pub price_per_night: f64,
    pub room_type: RoomType,
    #[serde(default)]
    pub house_rules: BTreeSet<HouseRule>,
    pub minimum_nights: u32,
    pub maximum_occupancy: u32,
}

impl AccommodationRecord {
    pub fn allows(&self, activity: Activity) -> bool {
        !self.house_rules.contains(&HouseRule(activity))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RestaurantRecord {
    pub name: String,
    pub city: String,
    pub cuisines: BTreeSet<String>,
    pub average_cost: f64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AttractionRecord {
    pub name: String,
    pub city: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GroundRouteRecord {
    pub origin_city: String,
    pub destination_city: String,
    pub distance_km: f64,
    pub self_driving_cost: f64,
    pub taxi_cost: f64,
    pub duration_minutes: f64,
}

fn check_name(what: &str, s: &str) -> Result<(), String> {
    if s.is_empty() {
        return Err(format!("{what} is empty"));
    }
    if s.trim() != s {
        return Err(format!("{what} `{s}` has surrounding whitespace"));
    }
    if s == "-" || s.contains(';') || s.chars().any(char::is_control) {
        return Err(format!("{what} `{s}` contains a reserved character"));
    }
    Ok(())
}

fn check_city(what: &str, s: &str) -> Result<(), String> {
    check_name(what, s)?;
    if s.contains(',') {
        return Err(format!("{what} `{s}` contains a comma"));
    }
    Ok(())
}

fn check_amount(what: &str, v: f64) -> Result<(), String> {
    if !v.is_finite() || v < 0.0 {
        return Err(format!("{what} must be a finite non-negative amount, got {v}"));
    }
    Ok(())
}

fn check_time(what: &str, s: &str) -> Result<(), String> {
    chrono::NaiveTime::parse_from_str(s, "%H:%M")
        .map(|_| ())
        .map_err(|_| format!("{what} `{s}` is not HH:MM"))
}

impl FlightRecord {
    fn validate(&self) -> Result<(), String> {
        check_name("flight_number", &self.flight_number)?;
        check_city("origin_city", &self.origin_city)?;
        check_city("destination_city", &self.destination_city)?;
        if self.origin_city == self.destination_city {
            return Err("origin_city equals destination_city".into());
        }
        check_time("departure_time", &self.departure_time)?;
        check_time("arrival_time", &self.arrival_time)?;
        chrono::NaiveDate::parse_from_str(&self.date, "%Y-%m-%d")
            .map_err(|_| format!("date `{}` is not YYYY-MM-DD", self.date))?;
        check_amount("price", self.price)
    }
}

impl AccommodationRecord {
    fn validate(&self) -> Result<(), String> {
        check_name("name", &self.name)?;
        check_city("city", &self.city)?;
        check_amount("price_per_night", self.price_per_night)?;
        if self.minimum_nights < 1 {
            return Err("minimum_nights must be at least 1".into());
        }
        if self.maximum_occupancy < 1 {
            return Err("maximum_occupancy must be at least 1".into());
        }
        Ok(())
    }
}

impl RestaurantRecord {
    fn validate(&self) -> Result<(), String> {
        check_name("name", &self.name)?;
        check_city("city", &self.city)?;
        if self.cuisines.is_empty() {
            return Err("cuisines must not be empty".into());
        }
        for c in &self.cuisines {
            check_name("cuisine", c)?;
        }
        check_amount("average_cost", self.average_cost)
    }
}

impl AttractionRecord {
    fn validate(&self) -> Result<(), String> {
        check_name("name", &self.name)?;
        check_city("city", &self.city)
    }
}

impl GroundRouteRecord {
    fn validate(&self) -> Result<(), String> {
        check_city("origin_city", &self.origin_city)?;
        check_city("destination_city", &self.destination_city)?;
        if self.origin_city == self.destination_city {
            return Err("origin_city equals destination_city".into());
        }
        if !self.distance_km.is_finite() || self.distance_km <= 0.0 {
            return Err(format!("distance_km must be positive, got {}", self.distance_km));
        }
        check_amount("self_driving_cost", self.self_driving_cost)?;
        check_amount("taxi_cost", self.taxi_cost)?;
        check_amount("duration_minutes", self.duration_minutes)
    }
}

/// Raw, unvalidated tables. Turn into a [`Sandbox`] with [`Sandbox::new`].
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SandboxTables {
    #[serde(default)]
    pub flights: Vec<FlightRecord>,
    #[serde(default)]
    pub accommodations: Vec<AccommodationRecord>,
    #[serde(default)]
    pub restaurants: Vec<RestaurantRecord>,
    #[serde(default)]
    pub attractions: Vec<AttractionRecord>,
    #[serde(default)]
    pub distances: Vec<GroundRouteRecord>,
}

#[derive(Debug, Clone, Default)]
struct Index {
    flights: HashMap<(String, String, String), usize>,
    accommodations: HashMap<(String, String), usize>,
    restaurants: HashMap<(String, String), usize>,
    attractions: HashMap<(String, String), usize>,
    distances: HashMap<(String, String), usize>,
}

fn index_table<T, K>(
    category: Category,
    rows: &[T],
    validate: impl Fn(&T) -> Result<(), String>,
    key: impl Fn(&T) -> K,
) -> Result<HashMap<K, usize>, SandboxError>
where
    K: std::hash::Hash + Eq + fmt::Debug,
{
    let mut map = HashMap::with_capacity(rows.len());
    for (i, row) in rows.iter().enumerate() {
        let malformed = |reason: String| SandboxError::MalformedRecord {
            category,
            row: i + 1,
            reason,
        };
        validate(row).map_err(malformed)?;
        let k = key(row);
        if map.contains_key(&k) {
            return Err(malformed(format!("duplicate key {k:?}")));
        }
        map.insert(k, i);
    }
    Ok(map)
}

/// Validated, indexed reference data.
#[derive(Debug, Clone, Default)]
pub struct Sandbox {
    tables: SandboxTables,
    index: Index,
}

impl PartialEq for Sandbox {
    fn eq(&self, other: &Self) -> bool {
        self.tables == other.tables
    }
}

/// Borrowed view of one record, as returned by [`Sandbox::lookup`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum RecordRef<'a> {
    Flight(&'a FlightRecord),
    Accommodation(&'a AccommodationRecord),
    Restaurant(&'a RestaurantRecord),
    Attraction(&'a AttractionRecord),
    Distance(&'a GroundRouteRecord),
}

#[derive(Debug, Clone, PartialEq)]
pub enum FieldValue {
    Text(String),
    Number(f64),
    Set(Vec<String>),
}

/// One predicate of a lookup filter. Every predicate must hold for a record
/// to be returned.
#[derive(Debug, Clone, PartialEq)]
pub enum FieldPredicate {
    /// Text equality, or numeric equality when the field is numeric.
    Eq(String, String),
    /// Set membership for set-valued fields (cuisines, house_rules).
    Contains(String, String),
    AtMost(String, f64),
    AtLeast(String, f64),
}

impl FieldPredicate {
    pub fn eq(field: &str, value: impl Into<String>) -> Self {
        FieldPredicate::Eq(field.to_string(), value.into())
    }

    pub fn contains(field: &str, value: impl Into<String>) -> Self {
        FieldPredicate::Contains(field.to_string(), value.into())
    }

    fn field(&self) -> &str {
        match self {
            FieldPredicate::Eq(f, _)
            | FieldPredicate::Contains(f, _)
            | FieldPredicate::AtMost(f, _)
            | FieldPredicate::AtLeast(f, _) => f,
        }
    }

    fn holds(&self, value: &FieldValue) -> bool {
        match (self, value) {
            (FieldPredicate::Eq(_, want), FieldValue::Text(t)) => t == want,
            (FieldPredicate::Eq(_, want), FieldValue::Number(n)) => want.parse::<f64>() == Ok(*n),
            (FieldPredicate::Eq(_, _), FieldValue::Set(_)) => false,
            (FieldPredicate::Contains(_, want), FieldValue::Set(s)) => s.iter().any(|x| x == want),
            (FieldPredicate::Contains(_, want), FieldValue::Text(t)) => t.contains(want.as_str()),
            (FieldPredicate::Contains(_, _), FieldValue::Number(_)) => false,
            (FieldPredicate::AtMost(_, bound), FieldValue::Number(n)) => n <= bound,
            (FieldPredicate::AtLeast(_, bound), FieldValue::Number(n)) => n >= bound,
            (FieldPredicate::AtMost(..) | FieldPredicate::AtLeast(..), _) => false,
        }
    }
}

impl RecordRef<'_> {
    pub fn category(&self) -> Category {
        match self {
            RecordRef::Flight(_) => Category::Flights,
            RecordRef::Accommodation(_) => Category::Accommodations,
            RecordRef::Restaurant(_) => Category::Restaurants,
            RecordRef::Attraction(_) => Category::Attractions,
            RecordRef::Distance(_) => Category::Distances,
        }
    }

    /// Value of a named column; `None` when the category has no such column.
    pub fn field(&self, name: &str) -> Option<FieldValue> {
        use FieldValue::*;
        let text = |s: &str| Some(Text(s.to_string()));
        match self {
            RecordRef::Flight(r) => match name {
                "flight_number" => text(&r.flight_number),
                "origin_city" => text(&r.origin_city),
                "destination_city" => text(&r.destination_city),
                "departure_time" => text(&r.departure_time),
                "arrival_time" => text(&r.arrival_time),
                "date" => text(&r.date),
                "price" => Some(Number(r.price)),
                _ => None,
            },
            RecordRef::Accommodation(r) => match name {
                "name" => text(&r.name),
                "city" => text(&r.city),
                "price_per_night" => Some(Number(r.price_per_night)),
                "room_type" => text(r.room_type.as_str()),
                "house_rules" => Some(Set(r.house_rules.iter().map(|h| h.to_string()).collect())),
                "minimum_nights" => Some(Number(r.minimum_nights.into())),
                "maximum_occupancy" => Some(Number(r.maximum_occupancy.into())),
                _ => None,
            },
            RecordRef::Restaurant(r) => match name {
                "name" => text(&r.name),
                "city" => text(&r.city),
                "cuisines" => Some(Set(r.cuisines.iter().cloned().collect())),
                "average_cost" => Some(Number(r.average_cost)),
                _ => None,
            },
            RecordRef::Attraction(r) => match name {
                "name" => text(&r.name),
                "city" => text(&r.city),
                _ => None,
            },
            RecordRef::Distance(r) => match name {
                "origin_city" => text(&r.origin_city),
                "destination_city" => text(&r.destination_city),
                "distance_km" => Some(Number(r.distance_km)),
                "self_driving_cost" => Some(Number(r.self_driving_cost)),
                "taxi_cost" => Some(Number(r.taxi_cost)),
                "duration_minutes" => Some(Number(r.duration_minutes)),
                _ => None,
            },
        }
    }
}

impl Sandbox {
    /// Validates every record against its type invariants and builds the
    /// lookup indexes.
    pub fn new(tables: SandboxTables) -> Result<Sandbox, SandboxError> {
        let index = Index {
            flights: index_table(Category::Flights, &tables.flights, FlightRecord::validate, |r| {
                (r.flight_number.clone(), r.origin_city.clone(), r.destination_city.clone())
            })?,
            accommodations: index_table(
                Category::Accommodations,
                &tables.accommodations,
                AccommodationRecord::validate,
                |r| (r.name.clone(), r.city.clone()),
            )?,
            restaurants: index_table(
                Category::Restaurants,
                &tables.restaurants,
                RestaurantRecord::validate,
                |r| (r.name.clone(), r.city.clone()),
            )?,
            attractions: index_table(
                Category::Attractions,
                &tables.attractions,
                AttractionRecord::validate,
                |r| (r.name.clone(), r.city.clone()),
            )?,
            distances: index_table(Category::Distances, &tables.distances, GroundRouteRecord::validate, |r| {
                (r.origin_city.clone(), r.destination_city.clone())
            })?,
        };
        Ok(Sandbox { tables, index })
    }

    pub fn tables(&self) -> &SandboxTables {
        &self.tables
    }

    pub fn into_tables(self) -> SandboxTables {
        self.tables
    }

    pub fn flights(&self) -> &[FlightRecord] {
        &self.tables.flights
    }

    pub fn accommodations(&self) -> &[AccommodationRecord] {
        &self.tables.accommodations
    }

    pub fn restaurants(&self) -> &[RestaurantRecord] {
        &self.tables.restaurants
    }

    pub fn attractions(&self) -> &[AttractionRecord] {
        &self.tables.attractions
    }

    pub fn distances(&self) -> &[GroundRouteRecord] {
        &self.tables.distances
    }

    /// Table sizes in canonical category order.
    pub fn sizes(&self) -> [usize; 5] {
        [
            self.tables.flights.len(),
            self.tables.accommodations.len(),
            self.tables.restaurants.len(),
            self.tables.attractions.len(),
            self.tables.distances.len(),
        ]
    }

    pub fn len(&self, category: Category) -> usize {
        self.sizes()[category as usize]
    }

    pub fn is_empty(&self) -> bool {
        self.sizes().iter().all(|&n| n == 0)
    }

    pub fn flight(&self, number: &str, origin: &str, destination: &str) -> Option<&FlightRecord> {
        self.index
            .flights
            .get(&(number.to_string(), origin.to_string(), destination.to_string()))
            .map(|&i| &self.tables.flights[i])
    }

    pub fn accommodation(&self, name: &str, city: &str) -> Option<&AccommodationRecord> {
        self.index
            .accommodations
            .get(&(name.to_string(), city.to_string()))
            .map(|&i| &self.tables.accommodations[i])
    }

    pub fn restaurant(&self, name: &str, city: &str) -> Option<&RestaurantRecord> {
        self.index
            .restaurants
            .get(&(name.to_string(), city.to_string()))
            .map(|&i| &self.tables.restaurants[i])
    }

    pub fn attraction(&self, name: &str, city: &str) -> Option<&AttractionRecord> {
        self.index
            .attractions
            .get(&(name.to_string(), city.to_string()))
            .map(|&i| &self.tables.attractions[i])
    }

    pub fn route(&self, origin: &str, destination: &str) -> Option<&GroundRouteRecord> {
        self.index
            .distances
            .get(&(origin.to_string(), destination.to_string()))
            .map(|&i| &self.tables.distances[i])
    }

    /// Every city mentioned by any record, sorted.
    pub fn cities(&self) -> BTreeSet<String> {
        let t = &self.tables;
        t.flights
            .iter()
            .flat_map(|f| [&f.origin_city, &f.destination_city])
            .chain(t.accommodations.iter().map(|r| &r.city))
            .chain(t.restaurants.iter().map(|r| &r.city))
            .chain(t.attractions.iter().map(|r| &r.city))
            .chain(t.distances.iter().flat_map(|d| [&d.origin_city, &d.destination_city]))
            .cloned()
            .collect()
    }

    /// All and only the records of `category` matching every predicate,
    /// in table order.
    pub fn lookup(&self, category: Category, filter: &[FieldPredicate]) -> Result<Vec<RecordRef<'_>>, SandboxError> {
        let rows: Vec<RecordRef<'_>> = match category {
            Category::Flights => self.tables.flights.iter().map(RecordRef::Flight).collect(),
            Category::Accommodations => self.tables.accommodations.iter().map(RecordRef::Accommodation).collect(),
            Category::Restaurants => self.tables.restaurants.iter().map(RecordRef::Restaurant).collect(),
            Category::Attractions => self.tables.attractions.iter().map(RecordRef::Attraction).collect(),
            Category::Distances => self.tables.distances.iter().map(RecordRef::Distance).collect(),
        };
        for p in filter {
            if !category.header().contains(&p.field()) {
                return Err(SandboxError::UnknownField {
                    category,
                    field: p.field().to_string(),
                });
            }
        }
        Ok(rows
            .into_iter()
            .filter(|r| filter.iter().all(|p| r.field(p.field()).is_some_and(|v| p.holds(&v))))
            .collect())
    }

    /// Same as [`Sandbox::lookup`] with the category given by name.
    pub fn lookup_named(&self, category: &str, filter: &[FieldPredicate]) -> Result<Vec<RecordRef<'_>>, SandboxError> {
        self.lookup(category.parse()?, filter)
    }

    /// Sub-sandbox restricted to records touching only the given cities.
    pub fn restrict_to_cities<S: AsRef<str>>(&self, cities: &[S]) -> Sandbox {
        let keep: BTreeSet<&str> = cities.iter().map(|c| c.as_ref()).collect();
        let t = &self.tables;
        let tables = SandboxTables {
            flights: t
                .flights
                .iter()
                .filter(|f| keep.contains(f.origin_city.as_str()) && keep.contains(f.destination_city.as_str()))
                .cloned()
                .collect(),
            accommodations: t.accommodations.iter().filter(|r| keep.contains(r.city.as_str())).cloned().collect(),
            restaurants: t.restaurants.iter().filter(|r| keep.contains(r.city.as_str())).cloned().collect(),
            attractions: t.attractions.iter().filter(|r| keep.contains(r.city.as_str())).cloned().collect(),
            distances: t
                .distances
                .iter()
                .filter(|d| keep.contains(d.origin_city.as_str()) && keep.contains(d.destination_city.as_str()))
                .cloned()
                .collect(),
        };
        Sandbox::new(tables).expect("a subset of a valid sandbox is valid")
    }
}

// ---------------------------------------------------------------------------
// Archive ingestion

/// Reads a category-keyed JSON archive. Missing categories are empty; unknown
/// categories and schema violations are errors.
pub fn ingest_reference_archive(path: &Path) -> Result<Sandbox, SandboxError> {
    if !path.is_file() {
        return Err(SandboxError::ArchiveNotFound(path.to_path_buf()));
    }
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    parse_reference_archive(&text)
}

/// Parses archive text; see [`ingest_reference_archive`].
pub fn parse_reference_archive(text: &str) -> Result<Sandbox, SandboxError> {
    let doc: serde_json::Value =
        serde_json::from_str(text).map_err(|e| SandboxError::MalformedArchive(e.to_string()))?;
    let serde_json::Value::Object(map) = doc else {
        return Err(SandboxError::MalformedArchive("top level must be an object".into()));
    };
    let mut tables = SandboxTables::default();
    for (key, value) in map {
        let category: Category = key.parse()?;
        let serde_json::Value::Array(rows) = value else {
            return Err(SandboxError::MalformedArchive(format!("category `{key}` must hold a list")));
        };
        match category {
            Category::Flights => tables.flights = decode_rows(category, rows)?,
            Category::Accommodations => tables.accommodations = decode_rows(category, rows)?,
            Category::Restaurants => tables.restaurants = decode_rows(category, rows)?,
            Category::Attractions => tables.attractions = decode_rows(category, rows)?,
            Category::Distances => tables.distances = decode_rows(category, rows)?,
        }
    }
    Sandbox::new(tables)
}

fn decode_rows<T: serde::de::DeserializeOwned>(
    category: Category,
    rows: Vec<serde_json::Value>,
) -> Result<Vec<T>, SandboxError> {
    rows.into_iter()
        .enumerate()
        .map(|(i, v)| {
            serde_json::from_value(v).map_err(|e| SandboxError::MalformedRecord {
                category,
                row: i + 1,
                reason: e.to_string(),
            })
        })
        .collect()
}

/// Writes the sandbox as an archive document (pretty-printed JSON).
pub fn write_reference_archive(sandbox: &Sandbox, path: &Path) -> Result<(), SandboxError> {
    let text = serde_json::to_string_pretty(sandbox.tables()).expect("tables serialize");
    fs::write(path, text + "\n").map_err(io_err(path))
}

// ---------------------------------------------------------------------------
// CSV tables

#[derive(Serialize, Deserialize)]
struct AccommodationRow {
    name: String,
    city: String,
    price_per_night: f64,
    room_type: String,
    house_rules: String,
    minimum_nights: u32,
    maximum_occupancy: u32,
}

#[derive(Serialize, Deserialize)]
struct RestaurantRow {
    name: String,
    city: String,
    cuisines: String,
    average_cost: f64,
}

fn join_tags<I: IntoIterator<Item = String>>(tags: I) -> String {
    tags.into_iter().collect::<Vec<_>>().join(";")
}

fn split_tags(s: &str) -> impl Iterator<Item = &str> {
    s.split(';').filter(|t| !t.is_empty())
}

impl From<&AccommodationRecord> for AccommodationRow {
    fn from(r: &AccommodationRecord) -> Self {
        AccommodationRow {
            name: r.name.clone(),
            city: r.city.clone(),
            price_per_night: r.price_per_night,
            room_type: r.room_type.to_string(),
            house_rules: join_tags(r.house_rules.iter().map(|h| h.to_string())),
            minimum_nights: r.minimum_nights,
            maximum_occupancy: r.maximum_occupancy,
        }
    }
}

impl TryFrom<AccommodationRow> for AccommodationRecord {
    type Error = String;
    fn try_from(r: AccommodationRow) -> Result<Self, String> {
        Ok(AccommodationRecord {
            name: r.name,
            city: r.city,
            price_per_night: r.price_per_night,
            room_type: r.room_type.parse()?,
            house_rules: split_tags(&r.house_rules).map(str::parse).collect::<Result<_, _>>()?,
            minimum_nights: r.minimum_nights,
            maximum_occupancy: r.maximum_occupancy,
        })
    }
}

impl From<&RestaurantRecord> for RestaurantRow {
    fn from(r: &RestaurantRecord) -> Self {
        RestaurantRow {
            name: r.name.clone(),
            city: r.city.clone(),
            cuisines: join_tags(r.cuisines.iter().cloned()),
            average_cost: r.average_cost,
        }
    }
}

impl From<RestaurantRow> for RestaurantRecord {
    fn from(r: RestaurantRow) -> Self {
        RestaurantRecord {
            name: r.name,
            city: r.city,
            cuisines: split_tags(&r.cuisines).map(str::to_string).collect(),
            average_cost: r.average_cost,
        }
    }
}

fn csv_writer() -> csv::WriterBuilder {
    let mut b = csv::WriterBuilder::new();
    b.has_headers(false).terminator(csv::Terminator::Any(b'\n'));
    b
}

fn write_table<T: Serialize>(category: Category, rows: impl Iterator<Item = T>) -> Vec<u8> {
    let mut w = csv_writer().from_writer(Vec::new());
    w.write_record(category.header()).expect("in-memory write");
    for row in rows {
        w.serialize(row).expect("in-memory write");
    }
    w.into_inner().expect("in-memory flush")
}

/// Renders one category as CSV text (header row first).
pub fn render_csv(sandbox: &Sandbox, category: Category) -> String {
    let t = sandbox.tables();
    let bytes = match category {
        Category::Flights => write_table(category, t.flights.iter()),
        Category::Accommodations => write_table(category, t.accommodations.iter().map(AccommodationRow::from)),
        Category::Restaurants => write_table(category, t.restaurants.iter().map(RestaurantRow::from)),
        Category::Attractions => write_table(category, t.attractions.iter()),
        Category::Distances => write_table(category, t.distances.iter()),
    };
    String::from_utf8(bytes).expect("csv output is utf-8")
}

/// Writes the five fixed-name CSV files into `dir` (created if needed) and
/// returns their paths in canonical category order.
pub fn export_csv_tables(sandbox: &Sandbox, dir: &Path) -> Result<Vec<PathBuf>, SandboxError> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    Category::ALL
        .into_iter()
        .map(|c| {
            let path = dir.join(c.file_name());
            fs::write(&path, render_csv(sandbox, c)).map_err(io_err(&path))?;
            Ok(path)
        })
        .collect()
}

fn read_table<R: serde::de::DeserializeOwned>(category: Category, text: &str) -> Result<Vec<R>, SandboxError> {
    let malformed = |row: usize, reason: String| SandboxError::MalformedRecord { category, row, reason };
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(false)
        .from_reader(text.as_bytes());
    let header = reader.headers().map_err(|e| malformed(0, e.to_string()))?.clone();
    if header.iter().ne(category.header().iter().copied()) {
        return Err(malformed(
            0,
            format!("header {:?} does not match {:?}", header.iter().collect::<Vec<_>>(), category.header()),
        ));
    }
    reader
        .deserialize()
        .enumerate()
        .map(|(i, row)| row.map_err(|e| malformed(i + 1, e.to_string())))
        .collect()
}

/// Parses CSV text for one category into raw rows appended to `tables`.
fn load_csv(tables: &mut SandboxTables, category: Category, text: &str) -> Result<(), SandboxError> {
    let convert_err = |row: usize, reason: String| SandboxError::MalformedRecord { category, row, reason };
    match category {
        Category::Flights => tables.flights = read_table(category, text)?,
        Category::Accommodations => {
            tables.accommodations = read_table::<AccommodationRow>(category, text)?
                .into_iter()
                .enumerate()
                .map(|(i, r)| AccommodationRecord::try_from(r).map_err(|e| convert_err(i + 1, e)))
                .collect::<Result<_, _>>()?;
        }
        Category::Restaurants => {
            tables.restaurants = read_table::<RestaurantRow>(category, text)?
                .into_iter()
                .map(RestaurantRecord::from)
                .collect();
        }
        Category::Attractions => tables.attractions = read_table(category, text)?,
        Category::Distances => tables.distances = read_table(category, text)?,
    }
    Ok(())
}

/// Reads the fixed-name CSV files from `dir`. A missing file yields an
/// empty table.
pub fn ingest_csv_tables(dir: &Path) -> Result<Sandbox, SandboxError> {
    if !dir.is_dir() {
        return Err(SandboxError::ArchiveNotFound(dir.to_path_buf()));
    }
    let mut tables = SandboxTables::default();
    for category in Category::ALL {
        let path = dir.join(category.file_name());
        if !path.exists() {
            continue;
        }
        let text = fs::read_to_string(&path).map_err(io_err(&path))?;
        load_csv(&mut tables, category, &text)?;
    }
    Sandbox::new(tables)
}

/// Loads a sandbox from either a CSV directory or an archive file.
pub fn load_sandbox(path: &Path) -> Result<Sandbox, SandboxError> {
    if path.is_dir() {
        ingest_csv_tables(path)
    } else {
        ingest_reference_archive(path)
    }
}

// ---------------------------------------------------------------------------
// Synthesis

/// Per-category record counts for [`synthesize_sandbox`].
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SizeProfile {
    pub flights: usize,
    pub accommodations: usize,
    pub restaurants: usize,
    pub attractions: usize,
    pub distances: usize,
}

impl SizeProfile {
    pub fn uniform(n: usize) -> Self {
        SizeProfile {
            flights: n,
            accommodations: n,
            restaurants: n,
            attractions: n,
            distances: n,
        }
    }
}

const CITY_NAMES: [&str; 8] = [
    "Ashford", "Brookvale", "Cedar Falls", "Dunmore", "Elmstead", "Fairhaven", "Glenrock", "Harlow",
];
const ADJECTIVES: [&str; 8] = ["Quiet", "Golden", "Harbor", "Maple", "Sunny", "Old Town", "Riverside", "Hilltop"];
const LODGING: [&str; 5] = ["Inn", "Lodge", "Suites", "Loft", "Guesthouse"];
const EATERY: [&str; 5] = ["Kitchen", "Bistro", "Grill", "Cafe", "Diner"];
const SIGHTS: [&str; 6] = ["Museum", "Park", "Gallery", "Aquarium", "Garden", "Observatory"];
pub(crate) const CUISINES: [&str; 8] = [
    "American", "Chinese", "French", "Indian", "Italian", "Mediterranean", "Mexican", "Thai",
];

/// Generates a sandbox that is a pure function of `(seed, profile)` and
/// satisfies every record invariant.
pub fn synthesize_sandbox(seed: u64, profile: SizeProfile) -> Sandbox {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    // Enough cities that `distances` distinct ordered pairs exist.
    let mut city_count = CITY_NAMES.len();
    while city_count * (city_count - 1) < profile.distances {
        city_count += 1;
    }
    let cities: Vec<String> = (0..city_count)
        .map(|i| match CITY_NAMES.get(i) {
            Some(n) => n.to_string(),
            None => format!("Township {}", i + 1),
        })
        .collect();
    let pick_city = |rng: &mut ChaCha8Rng| cities[rng.random_range(0..cities.len())].clone();
    let pick_pair = |rng: &mut ChaCha8Rng| {
        let a = rng.random_range(0..cities.len());
        let mut b = rng.random_range(0..cities.len() - 1);
        if b >= a {
            b += 1;
        }
        (cities[a].clone(), cities[b].clone())
    };
    let hhmm = |m: u32| format!("{:02}:{:02}", m / 60, m % 60);

    let flights = (0..profile.flights)
        .map(|i| {
            let (origin_city, destination_city) = pick_pair(&mut rng);
            let dep = rng.random_range(5 * 60..20 * 60);
            let arr = dep + rng.random_range(45..240);
            FlightRecord {
                flight_number: format!("F{:04}", i + 1),
                origin_city,
                destination_city,
                departure_time: hhmm(dep),
                arrival_time: hhmm(arr.min(23 * 60 + 59)),
                date: format!("2024-05-{:02}", rng.random_range(1..=28)),
                price: rng.random_range(50..=600) as f64,
            }
        })
        .collect();

    let accommodations = (0..profile.accommodations)
        .map(|i| {
            let name = format!(
                "{} {} {}",
                ADJECTIVES[rng.random_range(0..ADJECTIVES.len())],
                LODGING[rng.random_range(0..LODGING.len())],
                i + 1
            );
            let mut house_rules = BTreeSet::new();
            for _ in 0..rng.random_range(0..=2) {
                house_rules.insert(HouseRule(Activity::ALL[rng.random_range(0..Activity::ALL.len())]));
            }
            AccommodationRecord {
                name,
                city: pick_city(&mut rng),
                price_per_night: rng.random_range(40..=400) as f64,
                room_type: RoomType::ALL[rng.random_range(0..RoomType::ALL.len())],
                house_rules,
                minimum_nights: rng.random_range(1..=3),
                maximum_occupancy: rng.random_range(1..=6),
            }
        })
        .collect();

    let restaurants = (0..profile.restaurants)
        .map(|i| {
            let name = format!(
                "{} {} {}",
                ADJECTIVES[rng.random_range(0..ADJECTIVES.len())],
                EATERY[rng.random_range(0..EATERY.len())],
                i + 1
            );
            let mut cuisines = BTreeSet::new();
            for _ in 0..rng.random_range(1..=3) {
                cuisines.insert(CUISINES[rng.random_range(0..CUISINES.len())].to_string());
            }
            RestaurantRecord {
                name,
                city: pick_city(&mut rng),
                cuisines,
                average_cost: rng.random_range(8..=80) as f64,
            }
        })
        .collect();

    let attractions = (0..profile.attractions)
        .map(|i| AttractionRecord {
            name: format!("{} {}", SIGHTS[rng.random_range(0..SIGHTS.len())], i + 1),
            city: pick_city(&mut rng),
        })
        .collect();

    let mut pairs: Vec<(usize, usize)> = (0..cities.len())
        .flat_map(|a| (0..cities.len()).filter(move |&b| b != a).map(move |b| (a, b)))
        .collect();
    pairs.shuffle(&mut rng);
    let distances = pairs
        .into_iter()
        .take(profile.distances)
        .map(|(a, b)| {
            let km = rng.random_range(20..=1500) as f64;
            GroundRouteRecord {
                origin_city: cities[a].clone(),
                destination_city: cities[b].clone(),
                distance_km: km,
                self_driving_cost: (km * 0.05).round(),
                taxi_cost: km,
                duration_minutes: (km * 0.75).round(),
            }
        })
        .collect();

    Sandbox::new(SandboxTables {
        flights,
        accommodations,
        restaurants,
        attractions,
        distances,
    })
    .expect("synthesized records satisfy invariants")
}
