//! Ground-truth POI database.
//!
//! File format (`# p2plbs poi-db v1`): one POI per line, tab-separated
//! `x<TAB>y<TAB>type<TAB>payload`, coordinates in meters. The POI id is the
//! zero-based record index. Payloads are UTF-8 without tabs or newlines.
//! Lines starting with `#` are comments.

use std::collections::BTreeMap;
use std::sync::Arc;

use rand::Rng;
use thiserror::Error;

use crate::netsim::Area;
use crate::types::{PoiType, Point};

pub const POI_DB_HEADER: &str = "# p2plbs poi-db v1";

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PoiDbError {
    #[error("missing header `{POI_DB_HEADER}`")]
    Header,
    #[error("line {line}: {msg}")]
    Line { line: usize, msg: String },
}

/// A located, typed fact. Identity is `id`; the location is kept at `f32`
/// precision so it survives the wire encoding unchanged.
#[derive(Clone, Debug, PartialEq)]
pub struct Poi {
    pub id: u32,
    pub location: Point,
    pub poi_type: PoiType,
    pub payload: Arc<[u8]>,
}

/// Distance test shared by every radius search, so that a peer cache and
/// the LBS agree exactly on which records a query covers.
pub fn within_radius(center: &Point, p: &Point, radius_m: f64) -> bool {
    center.distance(p) <= radius_m
}

#[derive(Clone, Debug, Default)]
pub struct PoiDatabase {
    pois: Vec<Poi>,
    cell_m: f64,
    index: BTreeMap<(PoiType, i64, i64), Vec<usize>>,
}

impl PoiDatabase {
    pub fn new(pois: Vec<Poi>) -> Self {
        let mut db = PoiDatabase {
            pois,
            cell_m: 250.0,
            index: BTreeMap::new(),
        };
        for (i, p) in db.pois.iter().enumerate() {
            let key = (
                p.poi_type,
                (p.location.x / db.cell_m).floor() as i64,
                (p.location.y / db.cell_m).floor() as i64,
            );
            db.index.entry(key).or_default().push(i);
        }
        db
    }

    /// Uniformly scattered POIs, `per_type` of each listed type.
    pub fn generate<R: Rng>(area: Area, types: &[PoiType], per_type: usize, rng: &mut R) -> Self {
        let mut pois = Vec::new();
        for t in types {
            for _ in 0..per_type {
                let id = pois.len() as u32;
                let location = Point::new(
                    rng.gen::<f64>() * area.width_m,
                    rng.gen::<f64>() * area.height_m,
                )
                .quantized();
                pois.push(Poi {
                    id,
                    location,
                    poi_type: *t,
                    payload: format!("poi-{id}-type-{t}").into_bytes().into(),
                });
            }
        }
        Self::new(pois)
    }

    pub fn len(&self) -> usize {
        self.pois.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pois.is_empty()
    }

    pub fn get(&self, id: u32) -> Option<&Poi> {
        self.pois.get(id as usize)
    }

    pub fn iter(&self) -> impl Iterator<Item = &Poi> {
        self.pois.iter()
    }

    /// All POIs of `poi_type` within `radius_m` of `center`, ordered by id.
    pub fn within(&self, poi_type: PoiType, center: &Point, radius_m: f64) -> Vec<&Poi> {
        let c = self.cell_m;
        let (x0, x1) = (
            ((center.x - radius_m) / c).floor() as i64,
            ((center.x + radius_m) / c).floor() as i64,
        );
        let (y0, y1) = (
            ((center.y - radius_m) / c).floor() as i64,
            ((center.y + radius_m) / c).floor() as i64,
        );
        let mut hits: Vec<&Poi> = self
            .index
            .range((poi_type, x0, i64::MIN)..=(poi_type, x1, i64::MAX))
            .filter(|((_, _, y), _)| (y0..=y1).contains(y))
            .flat_map(|(_, ids)| ids.iter().map(|i| &self.pois[*i]))
            .filter(|p| within_radius(center, &p.location, radius_m))
            .collect();
        hits.sort_by_key(|p| p.id);
        hits
    }

    pub fn to_text(&self) -> String {
        let mut out = format!("{POI_DB_HEADER}\n");
        for p in &self.pois {
            out.push_str(&format!(
                "{}\t{}\t{}\t{}\n",
                p.location.x,
                p.location.y,
                p.poi_type,
                String::from_utf8_lossy(&p.payload)
            ));
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self, PoiDbError> {
        let mut lines = text.lines().enumerate();
        if lines.next().map(|(_, l)| l.trim_end()) != Some(POI_DB_HEADER) {
            return Err(PoiDbError::Header);
        }
        let mut pois = Vec::new();
        for (n, line) in lines {
            if line.starts_with('#') || line.trim().is_empty() {
                continue;
            }
            let err = |msg: &str| PoiDbError::Line {
                line: n + 1,
                msg: msg.to_string(),
            };
            let f: Vec<&str> = line.splitn(4, '\t').collect();
            if f.len() != 4 {
                return Err(err("expected 4 tab-separated fields"));
            }
            let x: f64 = f[0].parse().map_err(|_| err("bad x"))?;
            let y: f64 = f[1].parse().map_err(|_| err("bad y"))?;
            let t: u16 = f[2].parse().map_err(|_| err("bad type"))?;
            if f[3].is_empty() {
                return Err(err("empty payload"));
            }
            pois.push(Poi {
                id: pois.len() as u32,
                location: Point::new(x, y).quantized(),
                poi_type: PoiType(t),
                payload: f[3].as_bytes().into(),
            });
        }
        Ok(Self::new(pois))
    }
}

/// Appends the canonical record encoding: count `u16`, then per record
/// `id u32, x f32, y f32, type u16, len u16, payload`.
pub fn encode_pois(pois: &[Poi], buf: &mut Vec<u8>) {
    buf.extend_from_slice(&(pois.len() as u16).to_be_bytes());
    for p in pois {
        buf.extend_from_slice(&p.id.to_be_bytes());
        buf.extend_from_slice(&(p.location.x as f32).to_be_bytes());
        buf.extend_from_slice(&(p.location.y as f32).to_be_bytes());
        buf.extend_from_slice(&p.poi_type.0.to_be_bytes());
        buf.extend_from_slice(&(p.payload.len() as u16).to_be_bytes());
        buf.extend_from_slice(&p.payload);
    }
}

/// Inverse of [`encode_pois`]; returns the records and the unread tail.
pub fn decode_pois(mut buf: &[u8]) -> Option<(Vec<Poi>, &[u8])> {
    fn take<'a>(buf: &mut &'a [u8], n: usize) -> Option<&'a [u8]> {
        if buf.len() < n {
            return None;
        }
        let (head, tail) = buf.split_at(n);
        *buf = tail;
        Some(head)
    }
    let count = u16::from_be_bytes(take(&mut buf, 2)?.try_into().ok()?);
    let mut out = Vec::with_capacity(count as usize);
    for _ in 0..count {
        let id = u32::from_be_bytes(take(&mut buf, 4)?.try_into().ok()?);
        let x = f32::from_be_bytes(take(&mut buf, 4)?.try_into().ok()?);
        let y = f32::from_be_bytes(take(&mut buf, 4)?.try_into().ok()?);
        let t = u16::from_be_bytes(take(&mut buf, 2)?.try_into().ok()?);
        let len = u16::from_be_bytes(take(&mut buf, 2)?.try_into().ok()?);
        let payload = take(&mut buf, len as usize)?;
        out.push(Poi {
            id,
            location: Point::new(x as f64, y as f64),
            poi_type: PoiType(t),
            payload: payload.into(),
        });
    }
    Some((out, buf))
}
