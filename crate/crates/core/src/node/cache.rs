use std::collections::{BTreeMap, HashMap, VecDeque};
use std::hash::{DefaultHasher, Hash, Hasher};

use crate::lbs::{within_radius, Poi};
use crate::types::{PoiType, Point, SimTime};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Origin {
    Lbs,
    Peer,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PoiRecord {
    pub poi: Poi,
    pub fetched_at: SimTime,
    pub origin: Origin,
}

/// Identity used for deduplication: location, type and payload digest.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct RecordKey {
    x: u32,
    y: u32,
    poi_type: PoiType,
    digest: u64,
}

impl RecordKey {
    pub fn of(p: &Poi) -> Self {
        let mut h = DefaultHasher::new();
        p.payload.hash(&mut h);
        RecordKey {
            x: (p.location.x as f32).to_bits(),
            y: (p.location.y as f32).to_bits(),
            poi_type: p.poi_type,
            digest: h.finish(),
        }
    }
}

/// Union of `incoming` into `acc`, skipping records already present.
pub fn combine(acc: &mut Vec<Poi>, incoming: &[Poi]) {
    for p in incoming {
        let k = RecordKey::of(p);
        if !acc.iter().any(|q| RecordKey::of(q) == k) {
            acc.push(p.clone());
        }
    }
}

/// At least `min_results` records of `poi_type` within `radius_m` of `center`.
pub fn is_satisfactory(
    records: &[Poi],
    poi_type: PoiType,
    center: &Point,
    radius_m: f64,
    min_results: usize,
) -> bool {
    records
        .iter()
        .filter(|p| p.poi_type == poi_type && within_radius(center, &p.location, radius_m))
        .count()
        >= min_results
}

/// Share of each POI type among the last `window` observed queries.
#[derive(Clone, Debug)]
pub struct PopularityTracker {
    window: usize,
    threshold: f64,
    recent: VecDeque<PoiType>,
    counts: BTreeMap<PoiType, usize>,
}

impl PopularityTracker {
    pub fn new(window: usize, threshold: f64) -> Self {
        PopularityTracker {
            window: window.max(1),
            threshold,
            recent: VecDeque::new(),
            counts: BTreeMap::new(),
        }
    }

    pub fn observe(&mut self, t: PoiType) {
        self.recent.push_back(t);
        *self.counts.entry(t).or_default() += 1;
        if self.recent.len() > self.window {
            let old = self.recent.pop_front().expect("non-empty");
            let c = self.counts.get_mut(&old).expect("counted");
            *c -= 1;
            if *c == 0 {
                self.counts.remove(&old);
            }
        }
    }

    pub fn count(&self, t: PoiType) -> usize {
        self.counts.get(&t).copied().unwrap_or(0)
    }

    pub fn observed(&self) -> usize {
        self.recent.len()
    }

    pub fn is_popular(&self, t: PoiType) -> bool {
        !self.recent.is_empty() && self.count(t) as f64 / self.recent.len() as f64 > self.threshold
    }
}

struct Entry {
    record: PoiRecord,
    key: RecordKey,
    cell: (PoiType, i64, i64),
    last_used: u64,
}

/// Bounded POI cache indexed by `(type, cell)`. Eviction removes the least
/// recently used record, with records of popular types treated as if used
/// `capacity` ticks later.
pub struct NodeCache {
    capacity: usize,
    cell_m: f64,
    tick: u64,
    next_slot: u64,
    entries: BTreeMap<u64, Entry>,
    by_key: HashMap<RecordKey, u64>,
    index: BTreeMap<(PoiType, i64, i64), Vec<u64>>,
}

impl NodeCache {
    pub fn new(capacity: usize, cell_m: f64) -> Self {
        NodeCache {
            capacity,
            cell_m: if cell_m > 0.0 { cell_m } else { 250.0 },
            tick: 0,
            next_slot: 0,
            entries: BTreeMap::new(),
            by_key: HashMap::new(),
            index: BTreeMap::new(),
        }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn records(&self) -> impl Iterator<Item = &PoiRecord> {
        self.entries.values().map(|e| &e.record)
    }

    fn cell_of(&self, t: PoiType, p: &Point) -> (PoiType, i64, i64) {
        (
            t,
            (p.x / self.cell_m).floor() as i64,
            (p.y / self.cell_m).floor() as i64,
        )
    }

    /// Inserts or refreshes a record. Returns the number of evictions.
    pub fn insert(&mut self, record: PoiRecord, popular: &dyn Fn(PoiType) -> bool) -> usize {
        if self.capacity == 0 || record.poi.payload.is_empty() {
            return 0;
        }
        self.tick += 1;
        let key = RecordKey::of(&record.poi);
        if let Some(slot) = self.by_key.get(&key) {
            let e = self.entries.get_mut(slot).expect("indexed entry");
            e.last_used = self.tick;
            e.record.fetched_at = e.record.fetched_at.max(record.fetched_at);
            if record.origin == Origin::Lbs {
                e.record.origin = Origin::Lbs;
            }
            return 0;
        }
        let mut evicted = 0;
        while self.entries.len() >= self.capacity {
            self.evict_one(popular);
            evicted += 1;
        }
        let slot = self.next_slot;
        self.next_slot += 1;
        let cell = self.cell_of(record.poi.poi_type, &record.poi.location);
        self.index.entry(cell).or_default().push(slot);
        self.by_key.insert(key, slot);
        self.entries.insert(
            slot,
            Entry {
                record,
                key,
                cell,
                last_used: self.tick,
            },
        );
        evicted
    }

    fn evict_one(&mut self, popular: &dyn Fn(PoiType) -> bool) {
        let boost = self.capacity as u64;
        let victim = self
            .entries
            .iter()
            .min_by_key(|(slot, e)| {
                let bonus = if popular(e.record.poi.poi_type) {
                    boost
                } else {
                    0
                };
                (e.last_used + bonus, **slot)
            })
            .map(|(slot, _)| *slot);
        if let Some(slot) = victim {
            let e = self.entries.remove(&slot).expect("present");
            self.by_key.remove(&e.key);
            if let Some(v) = self.index.get_mut(&e.cell) {
                v.retain(|s| *s != slot);
                if v.is_empty() {
                    self.index.remove(&e.cell);
                }
            }
        }
    }

    /// Records of `poi_type` within `radius_m` of `center`, ordered by POI id
    /// then insertion. Matching entries count as used.
    pub fn search(
        &mut self,
        poi_type: PoiType,
        center: &Point,
        radius_m: f64,
        include_peer: bool,
    ) -> Vec<Poi> {
        if self.entries.is_empty() {
            return Vec::new();
        }
        let (_, x0, y0) = self.cell_of(
            poi_type,
            &Point::new(center.x - radius_m, center.y - radius_m),
        );
        let (_, x1, y1) = self.cell_of(
            poi_type,
            &Point::new(center.x + radius_m, center.y + radius_m),
        );
        let mut slots: Vec<u64> = self
            .index
            .range((poi_type, x0, i64::MIN)..=(poi_type, x1, i64::MAX))
            .filter(|((_, _, y), _)| (y0..=y1).contains(y))
            .flat_map(|(_, v)| v.iter().copied())
            .filter(|s| {
                let r = &self.entries[s].record;
                (include_peer || r.origin == Origin::Lbs)
                    && within_radius(center, &r.poi.location, radius_m)
            })
            .collect();
        slots.sort_by_key(|s| (self.entries[s].record.poi.id, *s));
        self.tick += 1;
        let tick = self.tick;
        slots
            .into_iter()
            .map(|s| {
                let e = self.entries.get_mut(&s).expect("indexed");
                e.last_used = tick;
                e.record.poi.clone()
            })
            .collect()
    }
}
