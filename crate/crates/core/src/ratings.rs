//! Rating data model: the score scale, facet identifiers and the
//! person × item × rater score tensor, with CSV and JSON ingestion.

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// The three facets of a rating design.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Facet {
    Person,
    Item,
    Rater,
}

impl Facet {
    pub const ALL: [Facet; 3] = [Facet::Person, Facet::Item, Facet::Rater];
}

impl fmt::Display for Facet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Facet::Person => "person",
            Facet::Item => "item",
            Facet::Rater => "rater",
        })
    }
}

impl std::str::FromStr for Facet {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "person" | "persons" => Ok(Facet::Person),
            "item" | "items" => Ok(Facet::Item),
            "rater" | "raters" => Ok(Facet::Rater),
            other => Err(Error::InvalidConfig(format!("unknown facet `{other}`"))),
        }
    }
}

/// Ordered score categories `min_score..=max_score`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "ScaleRepr")]
pub struct ScaleSpec {
    min_score: i32,
    max_score: i32,
}

#[derive(Deserialize)]
struct ScaleRepr {
    min_score: i32,
    max_score: i32,
}

impl TryFrom<ScaleRepr> for ScaleSpec {
    type Error = Error;

    fn try_from(r: ScaleRepr) -> Result<Self> {
        ScaleSpec::new(r.min_score, r.max_score)
    }
}

impl ScaleSpec {
    /// Largest supported number of categories.
    pub const MAX_CATEGORIES: usize = 256;

    pub fn new(min_score: i32, max_score: i32) -> Result<Self> {
        let span = max_score as i64 - min_score as i64;
        if span < 1 || span as usize >= Self::MAX_CATEGORIES {
            return Err(Error::InvalidScale {
                min: min_score,
                max: max_score,
            });
        }
        Ok(Self {
            min_score,
            max_score,
        })
    }

    pub fn min_score(&self) -> i32 {
        self.min_score
    }

    pub fn max_score(&self) -> i32 {
        self.max_score
    }

    pub fn num_categories(&self) -> usize {
        (self.max_score - self.min_score) as usize + 1
    }

    /// Highest 0-based category index, `K`.
    pub fn max_category(&self) -> usize {
        (self.max_score - self.min_score) as usize
    }

    pub fn contains(&self, score: i32) -> bool {
        (self.min_score..=self.max_score).contains(&score)
    }

    /// 0-based category index of an in-range score.
    pub fn category(&self, score: i32) -> usize {
        debug_assert!(self.contains(score));
        (score - self.min_score) as usize
    }

    pub fn score(&self, category: usize) -> i32 {
        self.min_score + category as i32
    }
}

/// Identifier lists for each facet, in first-appearance order.
#[derive(Debug, Clone, Default)]
pub struct FacetIds {
    persons: Vec<String>,
    items: Vec<String>,
    raters: Vec<String>,
    index: [HashMap<String, usize>; 3],
}

impl PartialEq for FacetIds {
    fn eq(&self, other: &Self) -> bool {
        self.persons == other.persons && self.items == other.items && self.raters == other.raters
    }
}

impl Eq for FacetIds {}

fn slot(facet: Facet) -> usize {
    match facet {
        Facet::Person => 0,
        Facet::Item => 1,
        Facet::Rater => 2,
    }
}

impl FacetIds {
    pub fn new(persons: Vec<String>, items: Vec<String>, raters: Vec<String>) -> Result<Self> {
        let mut ids = FacetIds::default();
        for (facet, list) in [
            (Facet::Person, persons),
            (Facet::Item, items),
            (Facet::Rater, raters),
        ] {
            if list.is_empty() {
                return Err(Error::EmptyFacet(facet));
            }
            for id in list {
                ids.insert(facet, id)?;
            }
        }
        Ok(ids)
    }

    fn insert(&mut self, facet: Facet, id: String) -> Result<usize> {
        let map = &mut self.index[slot(facet)];
        if map.contains_key(&id) {
            return Err(Error::DuplicateId { facet, id });
        }
        let list = match facet {
            Facet::Person => &mut self.persons,
            Facet::Item => &mut self.items,
            Facet::Rater => &mut self.raters,
        };
        let n = list.len();
        map.insert(id.clone(), n);
        list.push(id);
        Ok(n)
    }

    fn get_or_insert(&mut self, facet: Facet, id: &str) -> usize {
        match self.index[slot(facet)].get(id) {
            Some(&i) => i,
            None => self
                .insert(facet, id.to_string())
                .expect("id checked absent"),
        }
    }

    pub fn persons(&self) -> &[String] {
        &self.persons
    }

    pub fn items(&self) -> &[String] {
        &self.items
    }

    pub fn raters(&self) -> &[String] {
        &self.raters
    }

    pub fn of(&self, facet: Facet) -> &[String] {
        match facet {
            Facet::Person => &self.persons,
            Facet::Item => &self.items,
            Facet::Rater => &self.raters,
        }
    }

    pub fn len(&self, facet: Facet) -> usize {
        self.of(facet).len()
    }

    pub fn position(&self, facet: Facet, id: &str) -> Option<usize> {
        self.index[slot(facet)].get(id).copied()
    }

    /// Position of `id`, or `UnknownId`.
    pub fn require(&self, facet: Facet, id: &str) -> Result<usize> {
        self.position(facet, id).ok_or_else(|| Error::UnknownId {
            facet,
            id: id.to_string(),
        })
    }

    /// Resolve a list of ids to positions, sorted in facet order and deduplicated.
    pub fn resolve<S: AsRef<str>>(&self, facet: Facet, ids: &[S]) -> Result<Vec<usize>> {
        let mut out = ids
            .iter()
            .map(|s| self.require(facet, s.as_ref()))
            .collect::<Result<Vec<_>>>()?;
        out.sort_unstable();
        out.dedup();
        Ok(out)
    }
}

impl Serialize for FacetIds {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        FacetIdsRepr {
            persons: self.persons.clone(),
            items: self.items.clone(),
            raters: self.raters.clone(),
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for FacetIds {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let r = FacetIdsRepr::deserialize(d)?;
        FacetIds::new(r.persons, r.items, r.raters).map_err(serde::de::Error::custom)
    }
}

#[derive(Serialize, Deserialize)]
struct FacetIdsRepr {
    persons: Vec<String>,
    items: Vec<String>,
    raters: Vec<String>,
}

/// State of one (person, item, rater) cell.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Cell {
    /// Triple never listed.
    Empty,
    /// Triple listed with a blank score.
    Missing,
    Score(i32),
}

/// One present observation, by facet position and 0-based category.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Observation {
    pub person: usize,
    pub item: usize,
    pub rater: usize,
    pub category: usize,
}

/// Immutable person × item × rater score tensor.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RatingsTensor {
    scale: ScaleSpec,
    ids: FacetIds,
    cells: Vec<Cell>,
    connected: bool,
}

impl RatingsTensor {
    fn from_parts(scale: ScaleSpec, ids: FacetIds, cells: Vec<Cell>) -> Self {
        let mut t = Self {
            scale,
            ids,
            cells,
            connected: false,
        };
        t.connected = t.compute_connectivity();
        t
    }

    /// Build from facet ids and `(person, item, rater, score)` position tuples.
    pub fn from_cells<I>(scale: ScaleSpec, ids: FacetIds, entries: I) -> Result<Self>
    where
        I: IntoIterator<Item = (usize, usize, usize, Option<i32>)>,
    {
        let (np, ni, nr) = (
            ids.len(Facet::Person),
            ids.len(Facet::Item),
            ids.len(Facet::Rater),
        );
        let mut cells = vec![Cell::Empty; dense_len(np, ni, nr)?];
        for (n, (p, i, r, score)) in entries.into_iter().enumerate() {
            let line = n as u64 + 1;
            if p >= np || i >= ni || r >= nr {
                return Err(Error::DimensionMismatch(format!(
                    "cell ({p}, {i}, {r}) outside {np}×{ni}×{nr}"
                )));
            }
            let idx = (p * ni + i) * nr + r;
            if cells[idx] != Cell::Empty {
                return Err(Error::DuplicateObservation {
                    line,
                    person: ids.persons[p].clone(),
                    item: ids.items[i].clone(),
                    rater: ids.raters[r].clone(),
                });
            }
            cells[idx] = match score {
                None => Cell::Missing,
                Some(s) if scale.contains(s) => Cell::Score(s),
                Some(s) => {
                    return Err(Error::ScoreOutOfRange {
                        line,
                        score: s,
                        min: scale.min_score,
                        max: scale.max_score,
                    })
                }
            };
        }
        Ok(Self::from_parts(scale, ids, cells))
    }

    pub fn scale(&self) -> ScaleSpec {
        self.scale
    }

    pub fn ids(&self) -> &FacetIds {
        &self.ids
    }

    pub fn is_connected(&self) -> bool {
        self.connected
    }

    pub fn dims(&self) -> (usize, usize, usize) {
        (
            self.ids.persons.len(),
            self.ids.items.len(),
            self.ids.raters.len(),
        )
    }

    fn offset(&self, person: usize, item: usize, rater: usize) -> usize {
        let (_, ni, nr) = self.dims();
        (person * ni + item) * nr + rater
    }

    pub fn cell(&self, person: usize, item: usize, rater: usize) -> Cell {
        self.cells[self.offset(person, item, rater)]
    }

    pub fn score(&self, person: usize, item: usize, rater: usize) -> Option<i32> {
        match self.cell(person, item, rater) {
            Cell::Score(s) => Some(s),
            _ => None,
        }
    }

    /// Number of present scores.
    pub fn len(&self) -> usize {
        self.cells
            .iter()
            .filter(|c| matches!(c, Cell::Score(_)))
            .count()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Number of triples explicitly listed as missing.
    pub fn missing_count(&self) -> usize {
        self.cells.iter().filter(|c| **c == Cell::Missing).count()
    }

    /// Every listed cell (present or missing) in person-major order.
    pub fn entries(&self) -> impl Iterator<Item = (usize, usize, usize, Cell)> + '_ {
        let (_, ni, nr) = self.dims();
        self.cells
            .iter()
            .enumerate()
            .filter(|(_, c)| **c != Cell::Empty)
            .map(move |(idx, c)| (idx / (ni * nr), (idx / nr) % ni, idx % nr, *c))
    }

    /// Present observations in person-major order.
    pub fn observations(&self) -> impl Iterator<Item = Observation> + '_ {
        let scale = self.scale;
        self.entries().filter_map(move |(p, i, r, c)| match c {
            Cell::Score(s) => Some(Observation {
                person: p,
                item: i,
                rater: r,
                category: scale.category(s),
            }),
            _ => None,
        })
    }

    /// Count of present scores per element of `facet`.
    pub fn counts(&self, facet: Facet) -> Vec<usize> {
        let mut out = vec![0; self.ids.len(facet)];
        for o in self.observations() {
            out[match facet {
                Facet::Person => o.person,
                Facet::Item => o.item,
                Facet::Rater => o.rater,
            }] += 1;
        }
        out
    }

    fn compute_connectivity(&self) -> bool {
        let (np, ni, nr) = self.dims();
        let mut dsu = DisjointSet::new(np + ni + nr);
        for o in self.observations() {
            dsu.union(o.person, np + o.item);
            dsu.union(o.person, np + ni + o.rater);
        }
        let root = dsu.find(0);
        (1..np + ni + nr).all(|n| dsu.find(n) == root)
    }

    /// Sub-tensor restricted to the given ids (`None` keeps the whole facet).
    /// Facet order of the original tensor is preserved.
    pub fn slice<S: AsRef<str>>(
        &self,
        persons: Option<&[S]>,
        items: Option<&[S]>,
        raters: Option<&[S]>,
    ) -> Result<Self> {
        let pick = |facet: Facet, subset: Option<&[S]>| -> Result<Vec<usize>> {
            match subset {
                None => Ok((0..self.ids.len(facet)).collect()),
                Some([]) => Err(Error::EmptyFacet(facet)),
                Some(s) => self.ids.resolve(facet, s),
            }
        };
        let ps = pick(Facet::Person, persons)?;
        let is = pick(Facet::Item, items)?;
        let rs = pick(Facet::Rater, raters)?;
        let names = |facet: Facet, sel: &[usize]| {
            sel.iter()
                .map(|&k| self.ids.of(facet)[k].clone())
                .collect::<Vec<_>>()
        };
        let ids = FacetIds::new(
            names(Facet::Person, &ps),
            names(Facet::Item, &is),
            names(Facet::Rater, &rs),
        )?;
        let mut cells = Vec::with_capacity(ps.len() * is.len() * rs.len());
        for &p in &ps {
            for &i in &is {
                for &r in &rs {
                    cells.push(self.cell(p, i, r));
                }
            }
        }
        Ok(Self::from_parts(self.scale, ids, cells))
    }

    /// Copy of this tensor with one more rater whose scores are given per (person, item).
    pub fn with_rater(&self, name: &str, scores: &[Option<i32>]) -> Result<Self> {
        let (np, ni, nr) = self.dims();
        if scores.len() != np * ni {
            return Err(Error::DimensionMismatch(format!(
                "expected {} person×item scores, got {}",
                np * ni,
                scores.len()
            )));
        }
        if self.ids.position(Facet::Rater, name).is_some() {
            return Err(Error::RaterExists(name.to_string()));
        }
        let mut raters = self.ids.raters.clone();
        raters.push(name.to_string());
        let ids = FacetIds::new(self.ids.persons.clone(), self.ids.items.clone(), raters)?;
        let mut cells = Vec::with_capacity(np * ni * (nr + 1));
        for pi in 0..np * ni {
            cells.extend_from_slice(&self.cells[pi * nr..(pi + 1) * nr]);
            cells.push(match scores[pi] {
                Some(s) if self.scale.contains(s) => Cell::Score(s),
                Some(s) => {
                    return Err(Error::ScoreOutOfRange {
                        line: 0,
                        score: s,
                        min: self.scale.min_score,
                        max: self.scale.max_score,
                    })
                }
                None => Cell::Empty,
            });
        }
        Ok(Self::from_parts(self.scale, ids, cells))
    }

    /// Write the long-format CSV form (`person_id,item_id,rater_id,score`).
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(CSV_HEADER)?;
        for (p, i, r, c) in self.entries() {
            let score = match c {
                Cell::Score(s) => s.to_string(),
                _ => String::new(),
            };
            w.write_record([
                self.ids.persons[p].as_str(),
                self.ids.items[i].as_str(),
                self.ids.raters[r].as_str(),
                score.as_str(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn to_csv_string(&self) -> String {
        let mut buf = Vec::new();
        self.write_csv(&mut buf).expect("writing to memory");
        String::from_utf8(buf).expect("ids are utf-8")
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }
}

/// Largest person × item × rater grid a tensor may span.
pub const MAX_GRID_CELLS: usize = 1 << 26;

fn dense_len(np: usize, ni: usize, nr: usize) -> Result<usize> {
    np.checked_mul(ni)
        .and_then(|v| v.checked_mul(nr))
        .filter(|&n| n <= MAX_GRID_CELLS)
        .ok_or_else(|| {
            Error::DimensionMismatch(format!(
                "{np}×{ni}×{nr} grid exceeds {MAX_GRID_CELLS} cells"
            ))
        })
}

struct DisjointSet {
    parent: Vec<usize>,
}

impl DisjointSet {
    fn new(n: usize) -> Self {
        Self {
            parent: (0..n).collect(),
        }
    }

    fn find(&mut self, mut x: usize) -> usize {
        while self.parent[x] != x {
            self.parent[x] = self.parent[self.parent[x]];
            x = self.parent[x];
        }
        x
    }

    fn union(&mut self, a: usize, b: usize) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra != rb {
            self.parent[ra.max(rb)] = ra.min(rb);
        }
    }
}

pub const CSV_HEADER: [&str; 4] = ["person_id", "item_id", "rater_id", "score"];

/// Options for CSV ingestion.
#[derive(Debug, Clone, Copy, Default)]
pub struct IngestOptions {
    pub scale_min: Option<i32>,
    pub scale_max: Option<i32>,
}

struct Row {
    line: u64,
    person: usize,
    item: usize,
    rater: usize,
    score: Option<i32>,
}

/// Read a long-format ratings CSV from disk.
pub fn ingest_csv<P: AsRef<Path>>(path: P, options: IngestOptions) -> Result<RatingsTensor> {
    let file = std::fs::File::open(path)?;
    ingest_reader(file, options)
}

/// Read a long-format ratings CSV from any reader.
pub fn ingest_reader<R: Read>(reader: R, options: IngestOptions) -> Result<RatingsTensor> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let mut records = rdr.records();

    let header = match records.next() {
        None => return Err(Error::EmptyInput),
        Some(h) => h?,
    };
    let mismatch = header
        .iter()
        .zip(CSV_HEADER)
        .enumerate()
        .any(|(k, (a, b))| {
            (if k == 0 {
                a.trim_start_matches('\u{feff}')
            } else {
                a
            }) != b
        });
    if header.len() != 4 || mismatch {
        return Err(Error::MalformedHeader {
            found: header.iter().collect::<Vec<_>>().join(","),
        });
    }

    let mut ids = FacetIds::default();
    let mut rows = Vec::new();
    let mut seen = HashSet::new();
    for rec in records {
        let rec = rec?;
        let line = rec.position().map_or(0, |p| p.line());
        if rec.len() == 1 && rec[0].is_empty() {
            continue;
        }
        if rec.len() != 4 {
            return Err(Error::MalformedRow {
                line,
                reason: format!("expected 4 fields, found {}", rec.len()),
            });
        }
        for (k, name) in CSV_HEADER[..3].iter().enumerate() {
            if rec[k].is_empty() {
                return Err(Error::MalformedRow {
                    line,
                    reason: format!("empty {name}"),
                });
            }
        }
        let score = match &rec[3] {
            "" => None,
            s => Some(s.parse::<i32>().map_err(|_| Error::MalformedRow {
                line,
                reason: format!("score `{s}` is not an integer"),
            })?),
        };
        let person = ids.get_or_insert(Facet::Person, &rec[0]);
        let item = ids.get_or_insert(Facet::Item, &rec[1]);
        let rater = ids.get_or_insert(Facet::Rater, &rec[2]);
        if !seen.insert((person, item, rater)) {
            return Err(Error::DuplicateObservation {
                line,
                person: rec[0].to_string(),
                item: rec[1].to_string(),
                rater: rec[2].to_string(),
            });
        }
        rows.push(Row {
            line,
            person,
            item,
            rater,
            score,
        });
    }
    if rows.is_empty() {
        return Err(Error::EmptyInput);
    }

    let observed = rows.iter().filter_map(|r| r.score);
    let (lo, hi) = observed.fold((None::<i32>, None::<i32>), |(lo, hi), s| {
        (
            Some(lo.map_or(s, |v| v.min(s))),
            Some(hi.map_or(s, |v| v.max(s))),
        )
    });
    let min = options.scale_min.or(lo).ok_or(Error::EmptyInput)?;
    let max = options.scale_max.or(hi).ok_or(Error::EmptyInput)?;
    if options.scale_min.is_none() || options.scale_max.is_none() {
        log::warn!("score scale inferred from observed data as {min}..={max}");
    }
    let scale = ScaleSpec::new(min, max)?;
    if let (Some(lo), Some(hi)) = (lo, hi) {
        if scale.contains(lo) && scale.contains(hi) && (lo > min || hi < max) {
            log::warn!("observed scores span {lo}..={hi}, narrower than the scale {min}..={max}");
        }
    }

    let (ni, nr) = (ids.items.len(), ids.raters.len());
    let mut cells = vec![Cell::Empty; dense_len(ids.persons.len(), ni, nr)?];
    for row in rows {
        cells[(row.person * ni + row.item) * nr + row.rater] = match row.score {
            None => Cell::Missing,
            Some(s) if scale.contains(s) => Cell::Score(s),
            Some(s) => {
                return Err(Error::ScoreOutOfRange {
                    line: row.line,
                    score: s,
                    min,
                    max,
                })
            }
        };
    }
    Ok(RatingsTensor::from_parts(scale, ids, cells))
}

/// Canonical JSON form of a tensor.
#[derive(Serialize, Deserialize)]
struct TensorDoc {
    scale: ScaleSpec,
    facets: FacetIds,
    /// `[person, item, rater, score|null]` by facet position.
    cells: Vec<(usize, usize, usize, Option<i32>)>,
    #[serde(default, skip_deserializing)]
    connected: bool,
}

impl Serialize for RatingsTensor {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        TensorDoc {
            scale: self.scale,
            facets: self.ids.clone(),
            cells: self
                .entries()
                .map(|(p, i, r, c)| {
                    let score = match c {
                        Cell::Score(v) => Some(v),
                        _ => None,
                    };
                    (p, i, r, score)
                })
                .collect(),
            connected: self.connected,
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for RatingsTensor {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let doc = TensorDoc::deserialize(d)?;
        RatingsTensor::from_cells(doc.scale, doc.facets, doc.cells)
            .map_err(serde::de::Error::custom)
    }
}
