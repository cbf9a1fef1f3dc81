//! Brute-force feasibility oracle for small sandboxes.
//!
//! The candidate space for a query is every plan of the following shape:
//! the route is fixed by the query (region queries try every ordered choice
//! of sandbox cities), travel days sit at evenly spaced positions, each
//! travel leg is any matching flight, self-driving or taxi route, each city
//! stay uses one accommodation from that city, and every day gets at most one
//! dinner and at most one attraction from the day's cities. Breakfast and
//! lunch are left empty.
//!
//! [`recheck`] re-derives every rule directly from the sandbox tables. It
//! shares no code with the evaluator, so agreement between the two on the
//! whole candidate space is a meaningful test of both.

use std::collections::{HashMap, HashSet};

use thiserror::Error;

use super::CostModel;
use crate::par::Execution;
use crate::plan::{CurrentCity, DayEntry, Destinations, Place, Plan, Query, TransportLeg, TransportMode};
use crate::sandbox::Sandbox;

/// Default cap on the number of candidates the oracle will enumerate.
pub const DEFAULT_CAP: u128 = 20_000;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum OracleError {
    #[error("search space of {0} candidates exceeds the cap")]
    SearchSpaceTooLarge(u128),
}

/// One fully expanded route: the city sequence and the day layout.
struct Skeleton {
    days: Vec<CurrentCity>,
    legs: Vec<Vec<TransportLeg>>,
    // (first night day index, last night day index) and hotel options per stay
    stays: Vec<(usize, usize, Vec<Place>)>,
    dinners: Vec<Vec<Option<Place>>>,
    attractions: Vec<Vec<Option<Place>>>,
}

impl Skeleton {
    fn radices(&self) -> Vec<usize> {
        self.legs
            .iter()
            .map(Vec::len)
            .chain(self.stays.iter().map(|s| s.2.len()))
            .chain(self.dinners.iter().map(Vec::len))
            .chain(self.attractions.iter().map(Vec::len))
            .collect()
    }

    fn size(&self) -> u128 {
        self.radices().iter().map(|&r| r as u128).product()
    }

    fn decode(&self, query_id: &str, mut index: u128) -> Plan {
        let mut digits = Vec::new();
        for r in self.radices() {
            let r = r as u128;
            digits.push((index % r) as usize);
            index /= r;
        }
        let mut digits = digits.into_iter();
        let mut days: Vec<DayEntry> = self
            .days
            .iter()
            .enumerate()
            .map(|(i, c)| DayEntry::new(i as u32 + 1, c.clone()))
            .collect();
        let transit_days: Vec<usize> = (0..days.len()).filter(|&i| days[i].current_city.is_transit()).collect();
        for (k, options) in self.legs.iter().enumerate() {
            days[transit_days[k]].transportation = Some(options[digits.next().unwrap()].clone());
        }
        for (first, last, options) in &self.stays {
            let hotel = &options[digits.next().unwrap()];
            for day in &mut days[*first..=*last] {
                day.accommodation = Some(hotel.clone());
            }
        }
        for (i, options) in self.dinners.iter().enumerate() {
            days[i].dinner = options[digits.next().unwrap()].clone();
        }
        for (i, options) in self.attractions.iter().enumerate() {
            days[i].attractions = options[digits.next().unwrap()].iter().cloned().collect();
        }
        Plan {
            query_id: query_id.to_string(),
            days,
        }
    }
}

fn routes_for(query: &Query, sandbox: &Sandbox) -> Vec<Vec<String>> {
    match &query.destinations {
        Destinations::Cities(c) => vec![c.clone()],
        Destinations::Region {
            required_city_count, ..
        } => {
            let pool: Vec<String> = sandbox.cities().into_iter().filter(|c| *c != query.origin_city).collect();
            let mut out = Vec::new();
            let mut current = Vec::new();
            permutations(&pool, *required_city_count as usize, &mut current, &mut out);
            out
        }
    }
}

fn permutations(pool: &[String], k: usize, current: &mut Vec<String>, out: &mut Vec<Vec<String>>) {
    if current.len() == k {
        out.push(current.clone());
        return;
    }
    for c in pool {
        if !current.contains(c) {
            current.push(c.clone());
            permutations(pool, k, current, out);
            current.pop();
        }
    }
}

fn skeleton(query: &Query, sandbox: &Sandbox, route: &[String]) -> Option<Skeleton> {
    let n = query.duration_days as usize;
    let k = route.len();
    if k == 0 || n < k + 1 {
        return None;
    }
    // Travel days (0-based) at evenly spaced positions; first and last are fixed.
    let transit: Vec<usize> = (0..=k).map(|j| (j * (n - 1) + k / 2) / k).collect();
    let mut stops = vec![query.origin_city.clone()];
    stops.extend(route.iter().cloned());
    stops.push(query.origin_city.clone());

    let mut days = Vec::with_capacity(n);
    let mut segment = 0;
    for d in 0..n {
        if transit.get(segment) == Some(&d) {
            days.push(CurrentCity::Transit {
                from: stops[segment].clone(),
                to: stops[segment + 1].clone(),
            });
            segment += 1;
        } else {
            days.push(CurrentCity::Stay(stops[segment].clone()));
        }
    }

    let legs = (0..=k)
        .map(|j| {
            let (from, to) = (&stops[j], &stops[j + 1]);
            let mut options: Vec<TransportLeg> = sandbox
                .flights()
                .iter()
                .filter(|f| f.origin_city == *from && f.destination_city == *to)
                .map(|f| TransportLeg {
                    mode: TransportMode::Flight,
                    origin: from.clone(),
                    destination: to.clone(),
                    reference: Some(f.flight_number.clone()),
                })
                .collect();
            if sandbox.route(from, to).is_some() {
                for mode in [TransportMode::SelfDriving, TransportMode::Taxi] {
                    options.push(TransportLeg {
                        mode,
                        origin: from.clone(),
                        destination: to.clone(),
                        reference: None,
                    });
                }
            }
            options
        })
        .collect();

    let stays = (1..=k)
        .map(|j| {
            let options = sandbox
                .accommodations()
                .iter()
                .filter(|h| h.city == stops[j])
                .map(|h| Place::new(&h.name, &h.city))
                .collect();
            (transit[j - 1], transit[j] - 1, options)
        })
        .collect();

    let in_day = |d: &CurrentCity, city: &str| d.cities().contains(&city);
    let dinners = days
        .iter()
        .map(|d| {
            std::iter::once(None)
                .chain(
                    sandbox
                        .restaurants()
                        .iter()
                        .filter(|r| in_day(d, &r.city))
                        .map(|r| Some(Place::new(&r.name, &r.city))),
                )
                .collect()
        })
        .collect();
    let attractions = days
        .iter()
        .map(|d| {
            std::iter::once(None)
                .chain(
                    sandbox
                        .attractions()
                        .iter()
                        .filter(|a| in_day(d, &a.city))
                        .map(|a| Some(Place::new(&a.name, &a.city))),
                )
                .collect()
        })
        .collect();

    Some(Skeleton {
        days,
        legs,
        stays,
        dinners,
        attractions,
    })
}

fn skeletons(query: &Query, sandbox: &Sandbox) -> Vec<Skeleton> {
    routes_for(query, sandbox)
        .iter()
        .filter_map(|r| skeleton(query, sandbox, r))
        .collect()
}

/// Size of the oracle's candidate space for `query`.
pub fn candidate_count(query: &Query, sandbox: &Sandbox) -> u128 {
    skeletons(query, sandbox).iter().map(Skeleton::size).sum()
}

fn locate(skeletons: &[Skeleton], mut index: u128) -> (&Skeleton, u128) {
    for s in skeletons {
        let size = s.size();
        if index < size {
            return (s, index);
        }
        index -= size;
    }
    unreachable!("index within candidate_count")
}

/// Every candidate plan, in enumeration order. Errors when the space
/// exceeds `cap`.
pub fn candidate_plans(query: &Query, sandbox: &Sandbox, cap: u128) -> Result<Vec<Plan>, OracleError> {
    let sk = skeletons(query, sandbox);
    let total: u128 = sk.iter().map(Skeleton::size).sum();
    if total > cap {
        return Err(OracleError::SearchSpaceTooLarge(total));
    }
    Ok((0..total)
        .map(|i| {
            let (s, local) = locate(&sk, i);
            s.decode(&query.id, local)
        })
        .collect())
}

/// Feasible plans (those [`recheck`] accepts), at most `limit`, in
/// enumeration order.
pub fn enumerate_feasible(query: &Query, sandbox: &Sandbox, limit: usize) -> Result<Vec<Plan>, OracleError> {
    enumerate_feasible_with(Execution::default(), query, sandbox, limit, DEFAULT_CAP)
}

pub fn enumerate_feasible_with(
    exec: Execution,
    query: &Query,
    sandbox: &Sandbox,
    limit: usize,
    cap: u128,
) -> Result<Vec<Plan>, OracleError> {
    let sk = skeletons(query, sandbox);
    let total: u128 = sk.iter().map(Skeleton::size).sum();
    if total > cap {
        return Err(OracleError::SearchSpaceTooLarge(total));
    }
    let cost = CostModel::default();
    let decode = |i: usize| {
        let (s, local) = locate(&sk, i as u128);
        s.decode(&query.id, local)
    };
    let feasible = exec.filter_range(total as usize, |i| recheck(&decode(i), query, sandbox, &cost).is_ok());
    Ok(feasible.into_iter().take(limit).map(decode).collect())
}

/// Independent straightforward re-check of every catalog rule. Returns the
/// first violated rule's name.
pub fn recheck(plan: &Plan, query: &Query, sandbox: &Sandbox, cost: &CostModel) -> Result<(), &'static str> {
    let n = plan.days.len();
    if n != query.duration_days as usize || plan.days.iter().enumerate().any(|(i, d)| d.day_index as usize != i + 1) {
        return Err("undelivered");
    }

    // Entity tables, rebuilt from the raw records.
    let hotels: HashMap<(&str, &str), &crate::sandbox::AccommodationRecord> = sandbox
        .accommodations()
        .iter()
        .map(|h| ((h.name.as_str(), h.city.as_str()), h))
        .collect();
    let restaurants: HashMap<(&str, &str), &crate::sandbox::RestaurantRecord> = sandbox
        .restaurants()
        .iter()
        .map(|r| ((r.name.as_str(), r.city.as_str()), r))
        .collect();
    let attractions: HashSet<(&str, &str)> = sandbox
        .attractions()
        .iter()
        .map(|a| (a.name.as_str(), a.city.as_str()))
        .collect();
    let flight_price = |leg: &TransportLeg| {
        sandbox
            .flights()
            .iter()
            .find(|f| {
                Some(f.flight_number.as_str()) == leg.reference.as_deref()
                    && f.origin_city == leg.origin
                    && f.destination_city == leg.destination
            })
            .map(|f| f.price)
    };
    let route = |leg: &TransportLeg| {
        sandbox
            .distances()
            .iter()
            .find(|d| d.origin_city == leg.origin && d.destination_city == leg.destination)
    };

    let mut meals: Vec<&Place> = Vec::new();
    let mut sights: Vec<&Place> = Vec::new();
    let mut legs: Vec<&TransportLeg> = Vec::new();
    for d in &plan.days {
        meals.extend([&d.breakfast, &d.lunch, &d.dinner].into_iter().flatten());
        sights.extend(d.attractions.iter());
        legs.extend(d.transportation.iter());
    }

    // within-sandbox
    for leg in &legs {
        let ok = match leg.mode {
            TransportMode::Flight => flight_price(leg).is_some(),
            _ => route(leg).is_some(),
        };
        if !ok {
            return Err("within-sandbox");
        }
    }
    if meals.iter().any(|m| !restaurants.contains_key(&(m.name.as_str(), m.city.as_str())))
        || sights.iter().any(|a| !attractions.contains(&(a.name.as_str(), a.city.as_str())))
        || plan
            .days
            .iter()
            .filter_map(|d| d.accommodation.as_ref())
            .any(|h| !hotels.contains_key(&(h.name.as_str(), h.city.as_str())))
    {
        return Err("within-sandbox");
    }

    // complete-information
    for (i, d) in plan.days.iter().enumerate() {
        let travel = matches!(d.current_city, CurrentCity::Transit { .. });
        let meal_count = [&d.breakfast, &d.lunch, &d.dinner].iter().filter(|m| m.is_some()).count();
        if (travel && d.transportation.is_none())
            || (i < n - 1 && d.accommodation.is_none())
            || meal_count == 0
            || (!travel && d.attractions.is_empty())
        {
            return Err("complete-information");
        }
    }

    // within-current-city
    for d in &plan.days {
        let (start, end) = match &d.current_city {
            CurrentCity::Stay(c) => (c.as_str(), c.as_str()),
            CurrentCity::Transit { from, to } => (from.as_str(), to.as_str()),
        };
        let here = |city: &str| city == start || city == end;
        let day_meals = [&d.breakfast, &d.lunch, &d.dinner];
        if day_meals.iter().flat_map(|m| m.iter()).any(|m| !here(&m.city))
            || d.attractions.iter().any(|a| !here(&a.city))
            || d.accommodation.as_ref().is_some_and(|h| h.city != end)
        {
            return Err("within-current-city");
        }
        match (&d.current_city, &d.transportation) {
            (CurrentCity::Stay(_), Some(_)) => return Err("within-current-city"),
            (CurrentCity::Transit { from, to }, Some(leg)) if leg.origin != *from || leg.destination != *to => {
                return Err("within-current-city")
            }
            _ => {}
        }
    }

    // reasonable-city-route
    let mut position = query.origin_city.as_str();
    let mut visited: Vec<&str> = Vec::new();
    for (i, d) in plan.days.iter().enumerate() {
        match &d.current_city {
            CurrentCity::Stay(c) => {
                if i == 0 || i == n - 1 || c != position {
                    return Err("reasonable-city-route");
                }
            }
            CurrentCity::Transit { from, to } => {
                if from != position || from == to {
                    return Err("reasonable-city-route");
                }
                position = to;
                if i != n - 1 {
                    visited.push(to);
                }
            }
        }
    }
    if position != query.origin_city {
        return Err("reasonable-city-route");
    }
    let route_ok = match &query.destinations {
        Destinations::Cities(c) => visited.len() == c.len() && visited.iter().zip(c).all(|(v, w)| *v == w),
        Destinations::Region {
            required_city_count, ..
        } => {
            let unique: HashSet<&&str> = visited.iter().collect();
            visited.len() == *required_city_count as usize
                && unique.len() == visited.len()
                && !visited.contains(&query.origin_city.as_str())
        }
    };
    if !route_ok {
        return Err("reasonable-city-route");
    }

    // diversity
    if meals.iter().collect::<HashSet<_>>().len() != meals.len() {
        return Err("diverse-restaurants");
    }
    if sights.iter().collect::<HashSet<_>>().len() != sights.len() {
        return Err("diverse-attractions");
    }

    // non-conflicting-transportation
    if legs.iter().any(|l| l.mode == TransportMode::Flight) && legs.iter().any(|l| l.mode == TransportMode::SelfDriving) {
        return Err("non-conflicting-transportation");
    }

    // minimum-nights: length of each run of identical consecutive bookings
    let mut run_start = 0;
    for i in 1..=n {
        let boundary = i == n || plan.days[i].accommodation != plan.days[run_start].accommodation;
        if boundary {
            if let Some(h) = &plan.days[run_start].accommodation {
                let rec = hotels[&(h.name.as_str(), h.city.as_str())];
                if ((i - run_start) as u32) < rec.minimum_nights {
                    return Err("minimum-nights");
                }
            }
            run_start = i;
        }
    }

    // budget, priced category by category
    let people = query.people as f64;
    let vehicles = |cap: u32| (query.people as f64 / cap as f64).ceil();
    let transport: f64 = legs
        .iter()
        .map(|l| match l.mode {
            TransportMode::Flight => flight_price(l).unwrap() * people,
            TransportMode::Taxi => route(l).unwrap().taxi_cost * vehicles(cost.taxi_capacity),
            TransportMode::SelfDriving => route(l).unwrap().self_driving_cost * vehicles(cost.car_capacity),
        })
        .sum();
    let food: f64 = meals
        .iter()
        .map(|m| restaurants[&(m.name.as_str(), m.city.as_str())].average_cost * people)
        .sum();
    let lodging: f64 = plan
        .days
        .iter()
        .filter_map(|d| d.accommodation.as_ref())
        .map(|h| {
            let rec = hotels[&(h.name.as_str(), h.city.as_str())];
            rec.price_per_night * vehicles(rec.maximum_occupancy)
        })
        .sum();
    if transport + food + lodging > query.budget {
        return Err("budget");
    }

    let booked: Vec<&crate::sandbox::AccommodationRecord> = plan
        .days
        .iter()
        .filter_map(|d| d.accommodation.as_ref())
        .map(|h| hotels[&(h.name.as_str(), h.city.as_str())])
        .collect();
    if booked.iter().any(|h| query.room_rules.iter().any(|r| !h.allows(r.0))) {
        return Err("room-rules");
    }
    if let Some(t) = query.room_type {
        if booked.iter().any(|h| h.room_type != t) {
            return Err("room-type");
        }
    }
    for wanted in &query.cuisines {
        let served = meals
            .iter()
            .any(|m| restaurants[&(m.name.as_str(), m.city.as_str())].cuisines.contains(wanted));
        if !served {
            return Err("cuisines");
        }
    }
    if let Some(req) = query.transportation_request {
        if legs.iter().any(|l| req.forbids(l.mode)) {
            return Err("transportation-request");
        }
    }
    Ok(())
}
