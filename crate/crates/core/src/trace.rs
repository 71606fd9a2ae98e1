//! Users, locations, time slots and traces.
//!
//! External identifiers (user names, location names) are strings; internally
//! everything is a dense 0-based index. Instants are non-negative integers
//! in `[0, |T|)`.

use std::collections::HashMap;
use std::io::{BufRead, Write};

use crate::error::{parse_err, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LocationKind {
    /// Grid cells with integer column/row coordinates.
    Grid,
    /// Points of interest with longitude/latitude coordinates.
    Poi,
}

/// The finite set of discretized locations.
#[derive(Debug, Clone, PartialEq)]
pub struct LocationTable {
    names: Vec<String>,
    coords: Vec<(f64, f64)>,
    kind: LocationKind,
    categories: Option<Vec<String>>,
    index: HashMap<String, usize>,
}

impl LocationTable {
    pub fn new(
        names: Vec<String>,
        coords: Vec<(f64, f64)>,
        kind: LocationKind,
        categories: Option<Vec<String>>,
    ) -> Result<Self> {
        if names.is_empty() {
            return Err(Error::Config("location table must not be empty".into()));
        }
        if names.len() != coords.len() {
            return Err(Error::Config("names and coords differ in length".into()));
        }
        if let Some(c) = &categories {
            if c.len() != names.len() {
                return Err(Error::Config("categories and names differ in length".into()));
            }
        }
        if kind == LocationKind::Grid {
            for (i, &(x, y)) in coords.iter().enumerate() {
                if x < 0.0 || y < 0.0 || x.fract() != 0.0 || y.fract() != 0.0 {
                    return Err(Error::Config(format!(
                        "grid location {} has non-integer coordinates ({x}, {y})",
                        names[i]
                    )));
                }
            }
        }
        let mut index = HashMap::with_capacity(names.len());
        for (i, n) in names.iter().enumerate() {
            if index.insert(n.clone(), i).is_some() {
                return Err(Error::Config(format!("duplicate location name {n}")));
            }
        }
        Ok(Self {
            names,
            coords,
            kind,
            categories,
            index,
        })
    }

    /// A `width × height` grid, location `i` at column `i % width`, row `i / width`.
    pub fn grid(width: usize, height: usize) -> Self {
        let n = width * height;
        let names = (0..n).map(|i| format!("x{i}")).collect();
        let coords = (0..n)
            .map(|i| ((i % width) as f64, (i / width) as f64))
            .collect();
        Self::new(names, coords, LocationKind::Grid, None).expect("grid table is valid")
    }

    /// Parses `location,x,y[,category]` lines. A header line is skipped when
    /// its `x` field is not numeric. The kind is `grid` when every coordinate
    /// is a non-negative integer, `poi` otherwise.
    pub fn parse<R: BufRead>(reader: R) -> Result<Self> {
        let mut names = Vec::new();
        let mut coords = Vec::new();
        let mut cats: Vec<String> = Vec::new();
        let mut any_category = false;
        for (lineno, line) in reader.lines().enumerate() {
            let line = line?;
            let line = line.trim();
            let lineno = lineno + 1;
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let fields: Vec<&str> = line.split(',').map(str::trim).collect();
            if fields.len() < 3 || fields.len() > 4 {
                return Err(parse_err(lineno, "expected location,x,y[,category]"));
            }
            let x = fields[1].parse::<f64>();
            if names.is_empty() && x.is_err() {
                continue;
            }
            let x = x.map_err(|_| parse_err(lineno, "x is not a number"))?;
            let y = fields[2]
                .parse::<f64>()
                .map_err(|_| parse_err(lineno, "y is not a number"))?;
            if !x.is_finite() || !y.is_finite() {
                return Err(parse_err(lineno, "coordinates must be finite"));
            }
            names.push(fields[0].to_string());
            coords.push((x, y));
            if fields.len() == 4 {
                any_category = true;
                cats.push(fields[3].to_string());
            } else {
                cats.push(String::new());
            }
        }
        let kind = if coords
            .iter()
            .all(|&(x, y)| x >= 0.0 && y >= 0.0 && x.fract() == 0.0 && y.fract() == 0.0)
        {
            LocationKind::Grid
        } else {
            LocationKind::Poi
        };
        Self::new(names, coords, kind, any_category.then_some(cats))
    }

    pub fn write<W: Write>(&self, mut w: W) -> Result<()> {
        match &self.categories {
            Some(_) => writeln!(w, "location,x,y,category")?,
            None => writeln!(w, "location,x,y")?,
        }
        for i in 0..self.len() {
            let (x, y) = self.coords[i];
            match &self.categories {
                Some(c) => writeln!(w, "{},{},{},{}", self.names[i], x, y, c[i])?,
                None => writeln!(w, "{},{},{}", self.names[i], x, y)?,
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn kind(&self) -> LocationKind {
        self.kind
    }

    pub fn name(&self, i: usize) -> &str {
        &self.names[i]
    }

    pub fn lookup(&self, name: &str) -> Option<usize> {
        self.index.get(name).copied()
    }

    pub fn coords(&self, i: usize) -> (f64, f64) {
        self.coords[i]
    }

    pub fn category(&self, i: usize) -> Option<&str> {
        self.categories.as_ref().map(|c| c[i].as_str())
    }

    /// Integer (x, y) bins used by the one-dimensional EMD metrics.
    ///
    /// Grid tables use their coordinates directly. POI tables bin longitude
    /// and latitude into `poi_bins` equal-width bins over the bounding box.
    pub fn emd_bins(&self, poi_bins: usize) -> (Vec<usize>, Vec<usize>) {
        match self.kind {
            LocationKind::Grid => self
                .coords
                .iter()
                .map(|&(x, y)| (x as usize, y as usize))
                .unzip(),
            LocationKind::Poi => {
                let bins = poi_bins.max(1);
                let bin = |vals: Vec<f64>| -> Vec<usize> {
                    let lo = vals.iter().copied().fold(f64::INFINITY, f64::min);
                    let hi = vals.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                    let width = (hi - lo) / bins as f64;
                    vals.iter()
                        .map(|&v| {
                            if width <= 0.0 {
                                0
                            } else {
                                (((v - lo) / width) as usize).min(bins - 1)
                            }
                        })
                        .collect()
                };
                (
                    bin(self.coords.iter().map(|c| c.0).collect()),
                    bin(self.coords.iter().map(|c| c.1).collect()),
                )
            }
        }
    }
}

/// Total map from time instants to time slots.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TimeSlotMap {
    slot_of: Vec<usize>,
    slot_count: usize,
}

impl TimeSlotMap {
    /// Builds the map from an explicit instant → slot table. Slot indices must
    /// cover `[0, max]` with no empty slot.
    pub fn from_table(slot_of: Vec<usize>) -> Result<Self> {
        if slot_of.is_empty() {
            return Err(Error::Config("time-slot map needs at least one instant".into()));
        }
        let slot_count = slot_of.iter().max().map_or(0, |m| m + 1);
        let mut seen = vec![false; slot_count];
        for &s in &slot_of {
            seen[s] = true;
        }
        if let Some(empty) = seen.iter().position(|s| !s) {
            return Err(Error::Config(format!("time slot {empty} has no instants")));
        }
        Ok(Self {
            slot_of,
            slot_count,
        })
    }

    /// One instant per slot.
    pub fn identity(instants: usize) -> Result<Self> {
        Self::from_table((0..instants).collect())
    }

    /// Consecutive blocks of `per_slot` instants.
    pub fn contiguous(instants: usize, per_slot: usize) -> Result<Self> {
        if per_slot == 0 {
            return Err(Error::Config("instants per slot must be positive".into()));
        }
        Self::from_table((0..instants).map(|t| t / per_slot).collect())
    }

    /// Hourly instants folded onto a 24-hour day, `hours_per_slot` hours per slot.
    pub fn cyclic(instants: usize, hours_per_slot: usize) -> Result<Self> {
        if hours_per_slot == 0 || hours_per_slot > 24 {
            return Err(Error::Config("hours per slot must be in 1..=24".into()));
        }
        Self::from_table((0..instants).map(|t| (t % 24) / hours_per_slot).collect())
    }

    /// Parses a declarative rule `cycle:<h>` / `contiguous:<n>` / `identity`.
    pub fn from_rule(rule: &str, instants: usize) -> Result<Self> {
        let rule = rule.trim();
        if rule == "identity" {
            return Self::identity(instants);
        }
        let (name, arg) = rule
            .split_once(':')
            .ok_or_else(|| Error::Config(format!("unknown time-slot rule {rule:?}")))?;
        let arg: usize = arg
            .trim()
            .parse()
            .map_err(|_| Error::Config(format!("bad time-slot rule argument in {rule:?}")))?;
        match name.trim() {
            "cycle" => Self::cyclic(instants, arg),
            "contiguous" => Self::contiguous(instants, arg),
            _ => Err(Error::Config(format!("unknown time-slot rule {rule:?}"))),
        }
    }

    /// Parses `instant,slot` pairs. Every instant in `[0, |T|)` must appear once.
    pub fn parse<R: BufRead>(reader: R) -> Result<Self> {
        let mut pairs: Vec<(usize, usize, usize)> = Vec::new();
        for (lineno, line) in reader.lines().enumerate() {
            let line = line?;
            let line = line.trim();
            let lineno = lineno + 1;
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (a, b) = line
                .split_once(',')
                .ok_or_else(|| parse_err(lineno, "expected instant,slot"))?;
            let t = a.trim().parse::<usize>();
            if pairs.is_empty() && t.is_err() {
                continue;
            }
            let t = t.map_err(|_| parse_err(lineno, "instant is not an integer"))?;
            let s = b
                .trim()
                .parse::<usize>()
                .map_err(|_| parse_err(lineno, "slot is not an integer"))?;
            pairs.push((t, s, lineno));
        }
        let n = pairs.len();
        let mut table = vec![usize::MAX; n];
        for (t, s, lineno) in pairs {
            if t >= n {
                return Err(parse_err(lineno, format!("instant {t} leaves a hole in [0, {n})")));
            }
            if table[t] != usize::MAX {
                return Err(parse_err(lineno, format!("instant {t} listed twice")));
            }
            table[t] = s;
        }
        Self::from_table(table)
    }

    pub fn write<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "instant,slot")?;
        for (t, s) in self.slot_of.iter().enumerate() {
            writeln!(w, "{t},{s}")?;
        }
        Ok(())
    }

    pub fn instant_count(&self) -> usize {
        self.slot_of.len()
    }

    pub fn slot_count(&self) -> usize {
        self.slot_count
    }

    /// The slot index of instant `t`.
    pub fn slot_of(&self, t: usize) -> Result<usize> {
        self.slot_of
            .get(t)
            .copied()
            .ok_or(Error::InstantOutOfRange {
                instant: t,
                count: self.slot_of.len(),
            })
    }

    /// Unchecked variant for hot loops over validated traces.
    #[inline]
    pub(crate) fn slot(&self, t: usize) -> usize {
        self.slot_of[t]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Event {
    pub instant: usize,
    pub location: usize,
}

/// One user's events, ordered by strictly increasing instant.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Trace {
    pub user: usize,
    pub events: Vec<Event>,
}

impl Trace {
    pub fn new(user: usize, events: Vec<Event>) -> Self {
        Self { user, events }
    }

    /// A gap-free trace starting at `start`.
    pub fn from_locations(user: usize, start: usize, locations: &[usize]) -> Self {
        let events = locations
            .iter()
            .enumerate()
            .map(|(k, &location)| Event {
                instant: start + k,
                location,
            })
            .collect();
        Self { user, events }
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    /// The location at instant `t` (the function σ), if present.
    pub fn location_at(&self, t: usize) -> Option<usize> {
        self.events
            .binary_search_by_key(&t, |e| e.instant)
            .ok()
            .map(|k| self.events[k].location)
    }

    /// True when consecutive events sit on adjacent instants.
    pub fn is_gap_free(&self) -> bool {
        self.events
            .windows(2)
            .all(|w| w[1].instant == w[0].instant + 1)
    }

    /// Transitions between events on adjacent instants, as
    /// `(from, to, instant_of_to)`. A missing instant breaks the chain.
    pub fn transitions(&self) -> impl Iterator<Item = (usize, usize, usize)> + '_ {
        self.events.windows(2).filter_map(|w| {
            (w[1].instant == w[0].instant + 1).then_some((w[0].location, w[1].location, w[1].instant))
        })
    }

    pub fn validate(&self, instant_count: usize, location_count: usize) -> Result<()> {
        let mut prev: Option<usize> = None;
        for e in &self.events {
            if e.instant >= instant_count {
                return Err(Error::InvalidTrace(format!(
                    "user {} has instant {} >= |T| = {instant_count}",
                    self.user, e.instant
                )));
            }
            if e.location >= location_count {
                return Err(Error::InvalidTrace(format!(
                    "user {} has location {} >= |X| = {location_count}",
                    self.user, e.location
                )));
            }
            if let Some(p) = prev {
                if e.instant <= p {
                    return Err(Error::InvalidTrace(format!(
                        "user {} has non-increasing instants {p} then {}",
                        self.user, e.instant
                    )));
                }
            }
            prev = Some(e.instant);
        }
        Ok(())
    }
}

/// One trace per user over a shared location table and time-slot map.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceDataset {
    user_names: Vec<String>,
    locations: LocationTable,
    time: TimeSlotMap,
    traces: Vec<Trace>,
}

impl TraceDataset {
    pub fn new(
        user_names: Vec<String>,
        locations: LocationTable,
        time: TimeSlotMap,
        traces: Vec<Trace>,
    ) -> Result<Self> {
        if user_names.len() != traces.len() {
            return Err(Error::InvalidTrace("one trace per user required".into()));
        }
        for (n, tr) in traces.iter().enumerate() {
            if tr.user != n {
                return Err(Error::InvalidTrace(format!(
                    "trace at position {n} belongs to user {}",
                    tr.user
                )));
            }
            tr.validate(time.instant_count(), locations.len())?;
        }
        Ok(Self {
            user_names,
            locations,
            time,
            traces,
        })
    }

    /// A dataset with generated user names `u0, u1, ...`.
    pub fn from_traces(
        locations: LocationTable,
        time: TimeSlotMap,
        traces: Vec<Trace>,
    ) -> Result<Self> {
        let names = (0..traces.len()).map(|n| format!("u{n}")).collect();
        Self::new(names, locations, time, traces)
    }

    pub fn user_count(&self) -> usize {
        self.traces.len()
    }

    pub fn location_count(&self) -> usize {
        self.locations.len()
    }

    pub fn slot_count(&self) -> usize {
        self.time.slot_count()
    }

    pub fn locations(&self) -> &LocationTable {
        &self.locations
    }

    pub fn time(&self) -> &TimeSlotMap {
        &self.time
    }

    pub fn traces(&self) -> &[Trace] {
        &self.traces
    }

    pub fn trace(&self, n: usize) -> &Trace {
        &self.traces[n]
    }

    pub fn user_name(&self, n: usize) -> &str {
        &self.user_names[n]
    }

    pub fn user_names(&self) -> &[String] {
        &self.user_names
    }

    /// Writes `user,instant,location` lines with external names.
    pub fn write_events<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "user,instant,location")?;
        for tr in &self.traces {
            for e in &tr.events {
                writeln!(
                    w,
                    "{},{},{}",
                    self.user_names[tr.user],
                    e.instant,
                    self.locations.name(e.location)
                )?;
            }
        }
        Ok(())
    }

    /// Writes the index → external name sidecar (`kind,index,name`).
    pub fn write_dictionary<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "kind,index,name")?;
        for (n, name) in self.user_names.iter().enumerate() {
            writeln!(w, "user,{n},{name}")?;
        }
        for i in 0..self.locations.len() {
            writeln!(w, "location,{i},{}", self.locations.name(i))?;
        }
        Ok(())
    }
}

/// Parses an event file against an explicit location table and time map.
///
/// Events of one user may be spread over the file (several temporally
/// separated fragments); they are concatenated into a single trace and the
/// instants in between are missing. Each user's events must appear in
/// strictly increasing instant order.
pub fn parse_events<R: BufRead>(
    reader: R,
    locations: LocationTable,
    time: TimeSlotMap,
) -> Result<TraceDataset> {
    let mut user_index: HashMap<String, usize> = HashMap::new();
    let mut names: Vec<String> = Vec::new();
    let mut traces: Vec<Trace> = Vec::new();
    let mut first = true;
    for (lineno, line) in reader.lines().enumerate() {
        let line = line?;
        let line = line.trim();
        let lineno = lineno + 1;
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if fields.len() != 3 {
            return Err(parse_err(lineno, "expected user,instant,location"));
        }
        let instant = fields[1].parse::<usize>();
        if first {
            first = false;
            if instant.is_err() {
                continue;
            }
        }
        let instant = instant.map_err(|_| parse_err(lineno, "instant is not an integer"))?;
        if instant >= time.instant_count() {
            return Err(parse_err(
                lineno,
                format!("instant {instant} out of range (|T| = {})", time.instant_count()),
            ));
        }
        let location = locations
            .lookup(fields[2])
            .ok_or_else(|| parse_err(lineno, format!("unknown location {:?}", fields[2])))?;
        let user = *user_index.entry(fields[0].to_string()).or_insert_with(|| {
            names.push(fields[0].to_string());
            traces.push(Trace::new(names.len() - 1, Vec::new()));
            names.len() - 1
        });
        let tr = &mut traces[user];
        if let Some(last) = tr.events.last() {
            if instant == last.instant {
                return Err(parse_err(
                    lineno,
                    format!("duplicate event for user {} at instant {instant}", fields[0]),
                ));
            }
            if instant < last.instant {
                return Err(parse_err(
                    lineno,
                    format!(
                        "non-monotone instants for user {}: {instant} after {}",
                        fields[0], last.instant
                    ),
                ));
            }
        }
        tr.events.push(Event { instant, location });
    }
    TraceDataset::new(names, locations, time, traces)
}

/// Parses both the event file and the location file.
pub fn parse_traces<E: BufRead, L: BufRead>(
    events: E,
    locations: L,
    time: TimeSlotMap,
) -> Result<TraceDataset> {
    let table = LocationTable::parse(locations)?;
    parse_events(events, table, time)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn fig1_locations() -> LocationTable {
        let names = (1..=5).map(|i| format!("x{i}")).collect();
        let coords = (0..5).map(|i| (i as f64, 0.0)).collect();
        LocationTable::new(names, coords, LocationKind::Grid, None).unwrap()
    }

    #[test]
    fn parses_fig1_trace_with_gaps() {
        // instants are 0-based: the figure's instant t is stored as t - 1
        let text = "user,instant,location\n\
                    u1,0,x2\nu1,1,x3\nu1,2,x4\nu1,4,x3\nu1,5,x4\nu1,6,x5\nu1,8,x5\n";
        let time = TimeSlotMap::contiguous(9, 3).unwrap();
        let ds = parse_events(text.as_bytes(), fig1_locations(), time).unwrap();
        assert_eq!(ds.user_count(), 1);
        let tr = ds.trace(0);
        assert_eq!(tr.len(), 7);
        assert_eq!(tr.location_at(3), None);
        assert_eq!(tr.location_at(7), None);
        assert_eq!(tr.location_at(8), Some(4));
    }

    #[test]
    fn empty_event_file_is_valid() {
        let time = TimeSlotMap::identity(4).unwrap();
        let ds = parse_events("".as_bytes(), fig1_locations(), time).unwrap();
        assert_eq!(ds.user_count(), 0);
    }

    #[test]
    fn fragments_are_concatenated() {
        let text = "a,1,x1\na,2,x2\nb,0,x3\na,5,x1\na,6,x4\n";
        let time = TimeSlotMap::identity(8).unwrap();
        let ds = parse_events(text.as_bytes(), fig1_locations(), time).unwrap();
        assert_eq!(ds.user_count(), 2);
        assert_eq!(ds.trace(0).len(), 4);
        assert!(!ds.trace(0).is_gap_free());
    }

    #[test]
    fn parse_errors_name_the_line() {
        let time = TimeSlotMap::identity(4).unwrap();
        let cases = [
            ("a,1,x1\na,1,x2\n", 2),
            ("a,1,x1\na,9,x2\n", 2),
            ("a,2,x1\nb,0,x1\na,1,x2\n", 3),
            ("a,0,x1\na,1,nowhere\n", 2),
        ];
        for (text, line) in cases {
            match parse_events(text.as_bytes(), fig1_locations(), time.clone()) {
                Err(Error::Parse { line: l, .. }) => assert_eq!(l, line, "{text:?}"),
                other => panic!("expected parse error for {text:?}, got {other:?}"),
            }
        }
    }

    #[test]
    fn slot_rules() {
        let fig1 = TimeSlotMap::contiguous(9, 3).unwrap();
        assert_eq!(fig1.slot_of(4).unwrap(), 1); // figure instant 5 is in l2
        let id = TimeSlotMap::identity(10).unwrap();
        assert_eq!(id.slot_of(3).unwrap(), 3);
        let fs = TimeSlotMap::cyclic(48, 2).unwrap();
        assert_eq!(fs.slot_count(), 12);
        assert_eq!(fs.slot_of(25).unwrap(), 0);
        assert!(fs.slot_of(48).is_err());
        assert_eq!(TimeSlotMap::from_rule("cycle:2", 48).unwrap(), fs);
    }

    #[test]
    fn separated_instant_slots() {
        // l1 = {1,2,25,26}, ... with hourly instants over two days
        let map = TimeSlotMap::cyclic(48, 2).unwrap();
        for t in [0, 1, 24, 25] {
            assert_eq!(map.slot_of(t).unwrap(), 0);
        }
        assert_eq!(map.slot_of(47).unwrap(), 11);
    }

    #[test]
    fn table_rejects_empty_slot() {
        assert!(TimeSlotMap::from_table(vec![0, 2, 2]).is_err());
        let parsed = TimeSlotMap::parse("instant,slot\n1,0\n0,1\n".as_bytes()).unwrap();
        assert_eq!(parsed.slot_of(0).unwrap(), 1);
        assert!(TimeSlotMap::parse("0,0\n2,0\n".as_bytes()).is_err());
    }

    #[test]
    fn location_file_with_header_and_categories() {
        let text = "location,x,y,category\nbar,139.7,35.6,food\nuni,139.8,35.7,school\n";
        let t = LocationTable::parse(text.as_bytes()).unwrap();
        assert_eq!(t.len(), 2);
        assert_eq!(t.kind(), LocationKind::Poi);
        assert_eq!(t.category(1), Some("school"));
        let (xb, yb) = t.emd_bins(4);
        assert_eq!(xb, vec![0, 3]);
        assert_eq!(yb, vec![0, 3]);
    }

    #[test]
    fn validation_rejects_out_of_range() {
        let tr = Trace::new(0, vec![Event { instant: 5, location: 0 }]);
        assert!(tr.validate(5, 3).is_err());
        let tr = Trace::new(0, vec![Event { instant: 1, location: 3 }]);
        assert!(tr.validate(5, 3).is_err());
    }

    proptest! {
        #[test]
        fn serialize_parse_round_trip(
            raw in proptest::collection::vec(
                (0usize..4, proptest::collection::btree_map(0usize..12, 0usize..5, 0..8)),
                0..5,
            )
        ) {
            let time = TimeSlotMap::contiguous(12, 4).unwrap();
            let mut text = String::from("user,instant,location\n");
            let mut expected = Vec::new();
            let mut seen = std::collections::HashSet::new();
            for (u, evs) in &raw {
                if !seen.insert(*u) { continue; }
                for (t, l) in evs {
                    text.push_str(&format!("user{u},{t},x{}\n", l + 1));
                    expected.push(format!("user{u},{t},x{}", l + 1));
                }
            }
            let ds = parse_events(text.as_bytes(), fig1_locations(), time.clone()).unwrap();
            let mut out = Vec::new();
            ds.write_events(&mut out).unwrap();
            let out = String::from_utf8(out).unwrap();
            let mut got: Vec<String> = out.lines().skip(1).map(String::from).collect();
            got.sort();
            expected.sort();
            prop_assert_eq!(got, expected);
        }

        #[test]
        fn slot_preimages_partition_instants(instants in 1usize..60, per in 1usize..7) {
            let map = TimeSlotMap::contiguous(instants, per).unwrap();
            let mut counts = vec![0usize; map.slot_count()];
            for t in 0..instants {
                counts[map.slot_of(t).unwrap()] += 1;
            }
            prop_assert!(counts.iter().all(|&c| c > 0));
            prop_assert_eq!(counts.iter().sum::<usize>(), instants);
        }
    }
}
