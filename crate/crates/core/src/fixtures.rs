//! Small hand-built sandboxes and queries shared by tests, benches and the
//! acceptance suite.

use std::collections::BTreeSet;

use rand::seq::IndexedRandom;
use rand::Rng;

use crate::metrics::MetricRow;
use crate::plan::{CurrentCity, DayEntry, Destinations, Place, Plan, Query, TransportLeg, TransportMode};
use crate::sandbox::{
    AccommodationRecord, Activity, AttractionRecord, FlightRecord, HouseRule, RestaurantRecord, RoomType, Sandbox,
    SandboxTables,
};

pub const HOME: &str = "Ashford";
pub const AWAY: &str = "Brookvale";

fn flight(number: &str, from: &str, to: &str, price: f64) -> FlightRecord {
    FlightRecord {
        flight_number: number.into(),
        origin_city: from.into(),
        destination_city: to.into(),
        departure_time: "08:00".into(),
        arrival_time: "10:30".into(),
        date: "2024-03-01".into(),
        price,
    }
}

fn restaurant(name: &str, cuisines: &[&str], cost: f64) -> RestaurantRecord {
    RestaurantRecord {
        name: name.into(),
        city: AWAY.into(),
        cuisines: cuisines.iter().map(|c| c.to_string()).collect(),
        average_cost: cost,
    }
}

/// One destination, two hotels, three restaurants, two attractions and one
/// round-trip flight pair. "Harbor Suites" needs three nights, so it is never
/// feasible on a three-day trip.
pub fn oracle_sandbox() -> Sandbox {
    Sandbox::new(SandboxTables {
        flights: vec![flight("F100", HOME, AWAY, 100.0), flight("F200", AWAY, HOME, 120.0)],
        accommodations: vec![
            AccommodationRecord {
                name: "Quiet Inn".into(),
                city: AWAY.into(),
                price_per_night: 80.0,
                room_type: RoomType::EntireRoom,
                house_rules: BTreeSet::from([HouseRule(Activity::Smoking)]),
                minimum_nights: 1,
                maximum_occupancy: 2,
            },
            AccommodationRecord {
                name: "Harbor Suites".into(),
                city: AWAY.into(),
                price_per_night: 60.0,
                room_type: RoomType::PrivateRoom,
                house_rules: BTreeSet::from([HouseRule(Activity::Pets), HouseRule(Activity::Parties)]),
                minimum_nights: 3,
                maximum_occupancy: 4,
            },
        ],
        restaurants: vec![
            restaurant("Sunny Cafe", &["Bakery", "Cafe"], 10.0),
            restaurant("Harbor Grill", &["American", "Seafood"], 15.0),
            restaurant("Golden Bistro", &["French"], 20.0),
        ],
        attractions: vec![
            AttractionRecord {
                name: "City Museum".into(),
                city: AWAY.into(),
            },
            AttractionRecord {
                name: "River Park".into(),
                city: AWAY.into(),
            },
        ],
        distances: Vec::new(),
    })
    .expect("fixture sandbox is valid")
}

/// The cheapest feasible plan on [`oracle_sandbox`] for one person costs
/// 100 + 120 (flights) + 2 x 80 (Quiet Inn) + 10 + 15 + 20 (one dinner at
/// each restaurant) = 425.
pub const ORACLE_CHEAPEST_ONE_PERSON: f64 = 425.0;

/// Three days, one city, one person, no hard requests.
pub fn oracle_query(budget: f64) -> Query {
    Query {
        id: "oracle-q".into(),
        origin_city: HOME.into(),
        destinations: Destinations::Cities(vec![AWAY.into()]),
        duration_days: 3,
        people: 1,
        budget,
        room_rules: BTreeSet::new(),
        room_type: None,
        cuisines: BTreeSet::new(),
        transportation_request: None,
        raw_text: format!("A 3-day trip from {HOME} to {AWAY} for one person with a budget of {budget}."),
    }
}

/// A plan on [`oracle_sandbox`] that satisfies every rule for
/// `oracle_query(425.0)`.
pub fn oracle_feasible_plan() -> Plan {
    let inn = Place::new("Quiet Inn", AWAY);
    let mut d1 = DayEntry::new(
        1,
        CurrentCity::Transit {
            from: HOME.into(),
            to: AWAY.into(),
        },
    );
    d1.transportation = Some(TransportLeg {
        mode: TransportMode::Flight,
        origin: HOME.into(),
        destination: AWAY.into(),
        reference: Some("F100".into()),
    });
    d1.dinner = Some(Place::new("Sunny Cafe", AWAY));
    d1.accommodation = Some(inn.clone());

    let mut d2 = DayEntry::new(2, CurrentCity::Stay(AWAY.into()));
    d2.dinner = Some(Place::new("Harbor Grill", AWAY));
    d2.attractions = vec![Place::new("City Museum", AWAY)];
    d2.accommodation = Some(inn);

    let mut d3 = DayEntry::new(
        3,
        CurrentCity::Transit {
            from: AWAY.into(),
            to: HOME.into(),
        },
    );
    d3.transportation = Some(TransportLeg {
        mode: TransportMode::Flight,
        origin: AWAY.into(),
        destination: HOME.into(),
        reference: Some("F200".into()),
    });
    d3.dinner = Some(Place::new("Golden Bistro", AWAY));
    d3.attractions = vec![Place::new("River Park", AWAY)];

    Plan {
        query_id: "oracle-q".into(),
        days: vec![d1, d2, d3],
    }
}

const PLACE_WORDS: [&str; 8] = ["Maple", "Harbor", "Golden", "Quiet", "River", "Sunny", "Old", "Stone"];
const PLACE_KINDS: [&str; 6] = ["Cafe", "Grill", "Inn", "Museum", "Park", "Gallery"];
const PLAN_CITIES: [&str; 5] = ["Ashford", "Brookvale", "Cedar Falls", "Dunmore", "New Elm"];

fn random_place<R: Rng + ?Sized>(rng: &mut R) -> Place {
    Place::new(
        format!("{} {}", PLACE_WORDS.choose(rng).unwrap(), PLACE_KINDS.choose(rng).unwrap()),
        *PLAN_CITIES.choose(rng).unwrap(),
    )
}

/// A plan in normal form: days numbered from 1, an empty query id and names
/// drawn from fixed vocabularies. Fields are independent, so the plan need
/// not be sensible.
pub fn random_plan<R: Rng>(rng: &mut R) -> Plan {
    fn maybe<R: Rng>(rng: &mut R) -> Option<Place> {
        rng.random_bool(0.6).then(|| random_place(rng))
    }
    let days = (1..=rng.random_range(1..=7u32))
        .map(|n| {
            let city = *PLAN_CITIES.choose(rng).unwrap();
            let current = if rng.random_bool(0.4) {
                let to = *PLAN_CITIES.iter().filter(|c| **c != city).collect::<Vec<_>>().choose(rng).unwrap();
                CurrentCity::Transit {
                    from: city.into(),
                    to: to.to_string(),
                }
            } else {
                CurrentCity::Stay(city.into())
            };
            let mut d = DayEntry::new(n, current);
            if rng.random_bool(0.5) {
                let mode = *[TransportMode::Flight, TransportMode::SelfDriving, TransportMode::Taxi].choose(rng).unwrap();
                d.transportation = Some(TransportLeg {
                    mode,
                    origin: city.into(),
                    destination: PLAN_CITIES.choose(rng).unwrap().to_string(),
                    reference: (mode == TransportMode::Flight).then(|| format!("F{:04}", rng.random_range(0..10_000))),
                });
            }
            d.breakfast = maybe(rng);
            d.lunch = maybe(rng);
            d.dinner = maybe(rng);
            d.accommodation = maybe(rng);
            d.attractions = (0..rng.random_range(0..=3)).map(|_| random_place(rng)).collect();
            d
        })
        .collect();
    Plan {
        query_id: String::new(),
        days,
    }
}

/// The five published result rows (delivery rate is 100 in every row):
/// commonsense micro/macro, hard micro/macro and final pass rate.
pub const PUBLISHED_ROWS: [(&str, [f64; 5]); 5] = [
    ("baseline", [80.07, 17.78, 50.23, 28.33, 5.55]),
    ("hand-edited prompt", [84.93, 27.22, 61.19, 42.78, 12.78]),
    ("initial generated prompt", [81.39, 15.56, 37.14, 22.22, 2.78]),
    ("after llm discriminator", [67.92, 16.67, 14.29, 13.33, 6.11]),
    ("after human discriminator", [70.69, 11.11, 24.05, 13.11, 7.78]),
];

pub fn published_rows() -> Vec<MetricRow> {
    PUBLISHED_ROWS
        .iter()
        .map(|(label, [a, b, c, d, e])| MetricRow {
            label: label.to_string(),
            delivery_rate: 100.0,
            commonsense_micro: *a,
            commonsense_macro: *b,
            hard_micro: *c,
            hard_macro: *d,
            final_pass_rate: *e,
        })
        .collect()
}
