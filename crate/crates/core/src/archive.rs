//! Island-structured program archive.
//!
//! Every evaluated program lives in exactly one island. Inserts enforce a
//! global capacity with an elite set that is never evicted, migration moves
//! non-best members around a ring of islands, and [`Archive::sample_context`]
//! builds the parent-plus-inspirations bundle for the next mutation.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::seq::index;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::sampling::{self, SamplingError, SelectionStrategy};

pub const ARCHIVE_SCHEMA: &str = "shinka-archive/1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PatchType {
    Diff,
    Full,
    Cross,
    Init,
}

impl PatchType {
    pub fn as_str(self) -> &'static str {
        match self {
            PatchType::Diff => "diff",
            PatchType::Full => "full",
            PatchType::Cross => "cross",
            PatchType::Init => "init",
        }
    }
}

impl fmt::Display for PatchType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// One evaluated program.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProgramRecord {
    pub id: String,
    pub parent_id: Option<String>,
    pub crossover_partner_id: Option<String>,
    pub island_id: usize,
    pub generation: u64,
    pub code: String,
    pub mutable_code: String,
    pub fitness: f64,
    pub public_metrics: BTreeMap<String, f64>,
    pub text_feedback: String,
    pub offspring_count: u64,
    pub embedding: Option<Vec<f64>>,
    pub model_name: String,
    pub patch_type: PatchType,
    /// Logical timestamp from the run clock.
    pub created_at: u64,
}

/// Better-first ordering: higher fitness, then earlier `created_at`, then id.
pub fn compare_rank(a: &ProgramRecord, b: &ProgramRecord) -> Ordering {
    b.fitness
        .total_cmp(&a.fitness)
        .then(a.created_at.cmp(&b.created_at))
        .then_with(|| a.id.cmp(&b.id))
}

#[derive(Debug, Error)]
pub enum ArchiveError {
    #[error("program id '{0}' is already archived")]
    DuplicateId(String),
    #[error("program '{id}' has non-finite fitness {fitness}")]
    NonFiniteFitness { id: String, fitness: f64 },
    #[error("island {island} out of range (archive has {num_islands} islands)")]
    InvalidIsland { island: usize, num_islands: usize },
    #[error("archive is empty; seed it with the initial program before sampling")]
    Empty,
    #[error("invalid archive parameters: {0}")]
    InvalidParams(String),
    #[error(transparent)]
    Sampling(#[from] SamplingError),
    #[error("snapshot I/O: {0}")]
    Io(#[from] std::io::Error),
    #[error("snapshot header invalid: {0}")]
    BadHeader(String),
    #[error("snapshot record {index} unparsable: {message}")]
    BadRecord { index: usize, message: String },
    #[error("snapshot truncated: header declares {expected} records, file holds {found}; last valid record {last_valid}")]
    Truncated {
        expected: usize,
        found: usize,
        last_valid: String,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArchiveParams {
    pub capacity: usize,
    pub elite_ratio: f64,
    pub num_islands: usize,
    pub island_elitism: bool,
}

impl ArchiveParams {
    pub fn validate(&self) -> Result<(), ArchiveError> {
        if self.capacity == 0 {
            return Err(ArchiveError::InvalidParams("capacity must be >= 1".into()));
        }
        if self.num_islands == 0 {
            return Err(ArchiveError::InvalidParams("num_islands must be >= 1".into()));
        }
        if !(0.0..=1.0).contains(&self.elite_ratio) {
            return Err(ArchiveError::InvalidParams(format!(
                "elite_ratio must lie in [0, 1], got {}",
                self.elite_ratio
            )));
        }
        Ok(())
    }

    pub fn elite_count(&self) -> usize {
        (self.elite_ratio * self.capacity as f64).ceil() as usize
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IslandView {
    pub island_id: usize,
    pub members: Vec<String>,
    pub best_id: String,
    /// The island's copy of the initial program, or any archived one.
    pub seed_id: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MutationContext {
    pub island_id: usize,
    pub parent: ProgramRecord,
    pub top_k_inspirations: Vec<ProgramRecord>,
    pub random_inspirations: Vec<ProgramRecord>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InspirationCounts {
    pub top_k: usize,
    pub random: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct InsertOutcome {
    pub evicted: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Migration {
    pub id: String,
    pub from: usize,
    pub to: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Archive {
    params: ArchiveParams,
    records: BTreeMap<String, ProgramRecord>,
    islands: Vec<Vec<String>>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SnapshotHeader {
    schema: String,
    params: ArchiveParams,
    islands: Vec<Vec<String>>,
    count: usize,
}

impl Archive {
    pub fn new(params: ArchiveParams) -> Result<Self, ArchiveError> {
        params.validate()?;
        Ok(Self {
            params,
            records: BTreeMap::new(),
            islands: vec![Vec::new(); params.num_islands],
        })
    }

    pub fn params(&self) -> &ArchiveParams {
        &self.params
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<&ProgramRecord> {
        self.records.get(id)
    }

    pub fn get_mut(&mut self, id: &str) -> Option<&mut ProgramRecord> {
        self.records.get_mut(id)
    }

    /// All records ordered by id.
    pub fn records(&self) -> impl Iterator<Item = &ProgramRecord> {
        self.records.values()
    }

    pub fn num_islands(&self) -> usize {
        self.islands.len()
    }

    pub fn island_members(&self, island: usize) -> Vec<&ProgramRecord> {
        self.islands
            .get(island)
            .map(|ids| ids.iter().map(|id| &self.records[id]).collect())
            .unwrap_or_default()
    }

    pub fn best(&self) -> Option<&ProgramRecord> {
        self.records.values().min_by(|a, b| compare_rank(a, b))
    }

    pub fn island_best(&self, island: usize) -> Option<&ProgramRecord> {
        self.island_members(island)
            .into_iter()
            .min_by(|a, b| compare_rank(a, b))
    }

    pub fn island_view(&self, island: usize) -> Option<IslandView> {
        let best = self.island_best(island)?;
        let members = self.islands[island].clone();
        let seed_id = members
            .iter()
            .find(|id| self.records[*id].patch_type == PatchType::Init)
            .or_else(|| {
                self.records
                    .values()
                    .find(|r| r.patch_type == PatchType::Init)
                    .map(|r| &r.id)
            })
            .cloned();
        Some(IslandView {
            island_id: island,
            best_id: best.id.clone(),
            members,
            seed_id,
        })
    }

    pub fn insert(&mut self, record: ProgramRecord) -> Result<InsertOutcome, ArchiveError> {
        if self.records.contains_key(&record.id) {
            return Err(ArchiveError::DuplicateId(record.id));
        }
        if !record.fitness.is_finite() {
            return Err(ArchiveError::NonFiniteFitness {
                id: record.id,
                fitness: record.fitness,
            });
        }
        if record.island_id >= self.islands.len() {
            return Err(ArchiveError::InvalidIsland {
                island: record.island_id,
                num_islands: self.islands.len(),
            });
        }
        for lineage in [&record.parent_id, &record.crossover_partner_id]
            .into_iter()
            .flatten()
        {
            if let Some(ancestor) = self.records.get_mut(lineage) {
                ancestor.offspring_count += 1;
            }
        }
        self.islands[record.island_id].push(record.id.clone());
        self.records.insert(record.id.clone(), record);

        let mut outcome = InsertOutcome::default();
        if self.records.len() > self.params.capacity {
            if let Some(victim) = self.eviction_candidate() {
                self.remove(&victim);
                outcome.evicted = Some(victim);
            }
        }
        Ok(outcome)
    }

    fn protected_ids(&self) -> BTreeSet<String> {
        let mut ranked: Vec<&ProgramRecord> = self.records.values().collect();
        ranked.sort_by(|a, b| compare_rank(a, b));
        let mut protected: BTreeSet<String> = ranked
            .iter()
            .take(self.params.elite_count().max(1))
            .map(|r| r.id.clone())
            .collect();
        if self.params.island_elitism {
            for island in 0..self.islands.len() {
                if let Some(best) = self.island_best(island) {
                    protected.insert(best.id.clone());
                }
            }
        }
        // seed copies anchor best_of_n sampling
        protected.extend(
            self.records
                .values()
                .filter(|r| r.patch_type == PatchType::Init)
                .map(|r| r.id.clone()),
        );
        protected
    }

    /// Worst-ranked member outside the protected set.
    pub fn eviction_candidate(&self) -> Option<String> {
        let protected = self.protected_ids();
        self.records
            .values()
            .filter(|r| !protected.contains(&r.id))
            .max_by(|a, b| compare_rank(a, b))
            .map(|r| r.id.clone())
    }

    fn remove(&mut self, id: &str) {
        if let Some(record) = self.records.remove(id) {
            self.islands[record.island_id].retain(|m| m != id);
        }
    }

    /// Picks an island uniformly among non-empty ones, a parent inside it by
    /// `strategy`, the island's top-K other members, and archive-wide random
    /// inspirations excluding everything already chosen.
    pub fn sample_context<R: Rng + ?Sized>(
        &self,
        strategy: &SelectionStrategy,
        counts: InspirationCounts,
        rng: &mut R,
    ) -> Result<MutationContext, ArchiveError> {
        let occupied: Vec<usize> = (0..self.islands.len())
            .filter(|&i| !self.islands[i].is_empty())
            .collect();
        if occupied.is_empty() {
            return Err(ArchiveError::Empty);
        }
        let island = occupied[rng.random_range(0..occupied.len())];
        let view = self.island_view(island).ok_or(ArchiveError::Empty)?;
        let members = self.island_members(island);
        let parent_id =
            sampling::select_parent(&members, view.seed_id.as_deref(), strategy, rng)?;
        let parent = self.records[&parent_id].clone();

        let mut ranked: Vec<&ProgramRecord> =
            members.into_iter().filter(|m| m.id != parent_id).collect();
        ranked.sort_by(|a, b| compare_rank(a, b));
        let top_k: Vec<ProgramRecord> =
            ranked.into_iter().take(counts.top_k).cloned().collect();

        let taken: BTreeSet<&str> = top_k
            .iter()
            .map(|r| r.id.as_str())
            .chain(std::iter::once(parent_id.as_str()))
            .collect();
        let pool: Vec<&ProgramRecord> = self
            .records
            .values()
            .filter(|r| !taken.contains(r.id.as_str()))
            .collect();
        let amount = counts.random.min(pool.len());
        let random = index::sample(rng, pool.len(), amount)
            .into_iter()
            .map(|i| pool[i].clone())
            .collect();

        Ok(MutationContext {
            island_id: island,
            parent,
            top_k_inspirations: top_k,
            random_inspirations: random,
        })
    }

    /// Ring migration. On generations that are a positive multiple of
    /// `interval`, every island sends `floor(rate * size)` uniformly chosen
    /// members to its successor; island bests stay put while elitism is on.
    pub fn migrate<R: Rng + ?Sized>(
        &mut self,
        generation: u64,
        interval: u64,
        rate: f64,
        rng: &mut R,
    ) -> Vec<Migration> {
        let n = self.islands.len();
        if generation == 0 || interval == 0 || !generation.is_multiple_of(interval) || n < 2 || rate <= 0.0
        {
            return Vec::new();
        }
        let mut moves = Vec::new();
        for island in 0..n {
            let size = self.islands[island].len();
            let best = self.island_best(island).map(|b| b.id.clone());
            let eligible: Vec<&String> = self.islands[island]
                .iter()
                .filter(|id| !(self.params.island_elitism && Some(*id) == best.as_ref()))
                .collect();
            let amount = ((rate * size as f64).floor() as usize).min(eligible.len());
            let mut picks: Vec<usize> = index::sample(rng, eligible.len(), amount).into_vec();
            picks.sort_unstable();
            moves.extend(picks.into_iter().map(|i| Migration {
                id: eligible[i].clone(),
                from: island,
                to: (island + 1) % n,
            }));
        }
        for m in &moves {
            self.islands[m.from].retain(|id| id != &m.id);
            self.islands[m.to].push(m.id.clone());
            if let Some(record) = self.records.get_mut(&m.id) {
                record.island_id = m.to;
            }
        }
        moves
    }

    pub fn snapshot(&self, path: &Path) -> Result<(), ArchiveError> {
        let mut out = BufWriter::new(fs::File::create(path)?);
        self.write_snapshot(&mut out)?;
        out.flush()?;
        Ok(())
    }

    pub fn write_snapshot<W: Write>(&self, out: &mut W) -> Result<(), ArchiveError> {
        let header = SnapshotHeader {
            schema: ARCHIVE_SCHEMA.to_string(),
            params: self.params,
            islands: self.islands.clone(),
            count: self.records.len(),
        };
        writeln!(out, "{}", serde_json::to_string(&header).expect("header serializes"))?;
        for record in self.records.values() {
            writeln!(out, "{}", serde_json::to_string(record).expect("record serializes"))?;
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, ArchiveError> {
        Self::read_snapshot(BufReader::new(fs::File::open(path)?))
    }

    pub fn read_snapshot<R: BufRead>(reader: R) -> Result<Self, ArchiveError> {
        let mut lines = reader.lines();
        let header_line = lines
            .next()
            .ok_or_else(|| ArchiveError::BadHeader("file is empty".into()))??;
        let header: SnapshotHeader = serde_json::from_str(&header_line)
            .map_err(|e| ArchiveError::BadHeader(e.to_string()))?;
        if header.schema != ARCHIVE_SCHEMA {
            return Err(ArchiveError::BadHeader(format!(
                "unsupported schema '{}'",
                header.schema
            )));
        }
        header
            .params
            .validate()
            .map_err(|e| ArchiveError::BadHeader(e.to_string()))?;
        if header.islands.len() != header.params.num_islands {
            return Err(ArchiveError::BadHeader(
                "island list length does not match num_islands".into(),
            ));
        }

        let mut records = BTreeMap::new();
        let mut last_valid = "<none>".to_string();
        for (index, line) in lines.enumerate() {
            let line = line?;
            if line.is_empty() {
                continue;
            }
            let record: ProgramRecord = match serde_json::from_str(&line) {
                Ok(r) => r,
                Err(e) => {
                    return Err(ArchiveError::BadRecord {
                        index,
                        message: format!("{e} (last valid record: {last_valid})"),
                    })
                }
            };
            last_valid = format!("#{index} '{}'", record.id);
            records.insert(record.id.clone(), record);
        }
        if records.len() != header.count {
            return Err(ArchiveError::Truncated {
                expected: header.count,
                found: records.len(),
                last_valid,
            });
        }
        for (island, ids) in header.islands.iter().enumerate() {
            for id in ids {
                match records.get(id) {
                    Some(r) if r.island_id == island => {}
                    _ => {
                        return Err(ArchiveError::BadHeader(format!(
                            "island {island} lists '{id}' which is missing or placed elsewhere"
                        )))
                    }
                }
            }
        }
        if header.islands.iter().map(Vec::len).sum::<usize>() != records.len() {
            return Err(ArchiveError::BadHeader(
                "island membership does not cover every record".into(),
            ));
        }
        Ok(Self {
            params: header.params,
            records,
            islands: header.islands,
        })
    }
}

#[cfg(test)]
pub(crate) fn test_record(id: &str, island: usize, fitness: f64) -> ProgramRecord {
    ProgramRecord {
        id: id.to_string(),
        parent_id: None,
        crossover_partner_id: None,
        island_id: island,
        generation: 0,
        code: format!("# {id}\n"),
        mutable_code: String::new(),
        fitness,
        public_metrics: BTreeMap::new(),
        text_feedback: String::new(),
        offspring_count: 0,
        embedding: None,
        model_name: "test".into(),
        patch_type: PatchType::Diff,
        created_at: 0,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sampling::SelectionKind;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn params(capacity: usize, islands: usize) -> ArchiveParams {
        ArchiveParams {
            capacity,
            elite_ratio: 0.3,
            num_islands: islands,
            island_elitism: true,
        }
    }

    fn child(id: &str, parent: &str, island: usize, fitness: f64, t: u64) -> ProgramRecord {
        let mut r = test_record(id, island, fitness);
        r.parent_id = Some(parent.to_string());
        r.created_at = t;
        r
    }

    fn uniform() -> SelectionStrategy {
        SelectionStrategy::new(SelectionKind::Uniform, 1.0, 10.0).unwrap()
    }

    #[test]
    fn first_insert() {
        let mut a = Archive::new(params(40, 2)).unwrap();
        a.insert(test_record("p", 0, 1.0)).unwrap();
        assert_eq!(a.len(), 1);
        assert_eq!(a.get("p").unwrap().offspring_count, 0);
    }

    #[test]
    fn child_increments_parent_counter() {
        let mut a = Archive::new(params(40, 2)).unwrap();
        a.insert(test_record("p", 0, 1.0)).unwrap();
        a.insert(child("c", "p", 0, 2.0, 1)).unwrap();
        assert_eq!(a.get("p").unwrap().offspring_count, 1);
        let mut x = child("x", "c", 0, 2.0, 2);
        x.crossover_partner_id = Some("p".into());
        a.insert(x).unwrap();
        assert_eq!(a.get("p").unwrap().offspring_count, 2);
        assert_eq!(a.get("c").unwrap().offspring_count, 1);
    }

    #[test]
    fn insert_errors() {
        let mut a = Archive::new(params(40, 2)).unwrap();
        a.insert(test_record("p", 0, 1.0)).unwrap();
        assert!(matches!(
            a.insert(test_record("p", 1, 2.0)),
            Err(ArchiveError::DuplicateId(_))
        ));
        assert!(matches!(
            a.insert(test_record("q", 2, 2.0)),
            Err(ArchiveError::InvalidIsland { .. })
        ));
        assert!(matches!(
            a.insert(test_record("r", 0, f64::INFINITY)),
            Err(ArchiveError::NonFiniteFitness { .. })
        ));
    }

    /// Independent replay of the eviction rule over a plain list.
    fn brute_force_victim(pool: &[ProgramRecord], elite: usize, islands: usize) -> Option<String> {
        let mut sorted: Vec<&ProgramRecord> = pool.iter().collect();
        sorted.sort_by(|a, b| {
            b.fitness
                .partial_cmp(&a.fitness)
                .unwrap()
                .then(a.created_at.cmp(&b.created_at))
                .then(a.id.cmp(&b.id))
        });
        let mut protected: Vec<&str> = sorted.iter().take(elite).map(|r| r.id.as_str()).collect();
        for i in 0..islands {
            if let Some(best) = sorted.iter().find(|r| r.island_id == i) {
                protected.push(&best.id);
            }
        }
        sorted
            .iter()
            .rev()
            .find(|r| !protected.contains(&r.id.as_str()) && r.patch_type != PatchType::Init)
            .map(|r| r.id.clone())
    }

    #[test]
    fn eviction_matches_brute_force_policy() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut archive = Archive::new(params(40, 2)).unwrap();
        let mut shadow: Vec<ProgramRecord> = Vec::new();
        for t in 0..120u64 {
            let fitness = (rng.random_range(0..50) as f64) / 10.0;
            let r = test_record(&format!("r{t:03}"), (t % 2) as usize, fitness);
            let r = ProgramRecord { created_at: t, ..r };
            shadow.push(r.clone());
            let expected = if shadow.len() > 40 {
                brute_force_victim(&shadow, 12, 2)
            } else {
                None
            };
            let outcome = archive.insert(r).unwrap();
            assert_eq!(outcome.evicted, expected, "at insert {t}");
            if let Some(v) = expected {
                shadow.retain(|r| r.id != v);
            }
            assert!(archive.len() <= 40);
        }
    }

    #[test]
    fn eviction_spares_bests_and_seeds() {
        let mut a = Archive::new(ArchiveParams {
            capacity: 3,
            elite_ratio: 0.0,
            num_islands: 2,
            island_elitism: true,
        })
        .unwrap();
        let mut seed = test_record("init-0", 0, -5.0);
        seed.patch_type = PatchType::Init;
        a.insert(seed).unwrap();
        a.insert(test_record("b1", 1, -9.0)).unwrap();
        a.insert(test_record("a1", 0, -1.0)).unwrap();
        // b1 is island 1's best, init-0 is a seed, a1 is the global best
        let out = a.insert(test_record("a2", 0, -2.0)).unwrap();
        assert_eq!(out.evicted.as_deref(), Some("a2"));
        assert!(a.get("b1").is_some());
    }

    #[test]
    fn single_member_island_context() {
        let mut a = Archive::new(params(40, 1)).unwrap();
        a.insert(test_record("only", 0, 1.0)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let ctx = a
            .sample_context(&uniform(), InspirationCounts { top_k: 2, random: 4 }, &mut rng)
            .unwrap();
        assert_eq!(ctx.parent.id, "only");
        assert!(ctx.top_k_inspirations.is_empty());
        assert!(ctx.random_inspirations.is_empty());
    }

    #[test]
    fn top_k_are_the_non_parent_members() {
        let mut a = Archive::new(params(40, 1)).unwrap();
        a.insert(test_record("best", 0, 3.0)).unwrap();
        a.insert(test_record("mid", 0, 2.0)).unwrap();
        a.insert(test_record("low", 0, 1.0)).unwrap();
        let hc = SelectionStrategy::new(SelectionKind::HillClimb, 1.0, 10.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let ctx = a
            .sample_context(&hc, InspirationCounts { top_k: 2, random: 4 }, &mut rng)
            .unwrap();
        assert_eq!(ctx.parent.id, "best");
        let ids: Vec<&str> = ctx.top_k_inspirations.iter().map(|r| r.id.as_str()).collect();
        assert_eq!(ids, ["mid", "low"]);
        assert!(ctx.random_inspirations.is_empty());
    }

    #[test]
    fn random_inspirations_are_archive_wide_and_deduplicated() {
        let mut a = Archive::new(params(40, 2)).unwrap();
        for i in 0..6 {
            a.insert(test_record(&format!("a{i}"), 0, i as f64)).unwrap();
            a.insert(test_record(&format!("b{i}"), 1, i as f64)).unwrap();
        }
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..200 {
            let ctx = a
                .sample_context(&uniform(), InspirationCounts { top_k: 2, random: 4 }, &mut rng)
                .unwrap();
            let mut ids: Vec<&str> = ctx
                .top_k_inspirations
                .iter()
                .chain(&ctx.random_inspirations)
                .map(|r| r.id.as_str())
                .collect();
            assert!(!ids.contains(&ctx.parent.id.as_str()));
            assert!(ctx
                .top_k_inspirations
                .iter()
                .all(|r| r.island_id == ctx.island_id && r.island_id == ctx.parent.island_id));
            assert_eq!(ids.len(), 6);
            ids.sort();
            ids.dedup();
            assert_eq!(ids.len(), 6);
        }
    }

    #[test]
    fn empty_archive_sampling_fails() {
        let a = Archive::new(params(40, 2)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let err = a
            .sample_context(&uniform(), InspirationCounts { top_k: 2, random: 4 }, &mut rng)
            .unwrap_err();
        assert!(err.to_string().contains("seed it with the initial program"));
    }

    #[test]
    fn island_choice_is_uniform() {
        let mut a = Archive::new(params(40, 2)).unwrap();
        // unequal sizes: island choice must still be 50/50
        a.insert(test_record("a", 0, 1.0)).unwrap();
        for i in 0..5 {
            a.insert(test_record(&format!("b{i}"), 1, 1.0)).unwrap();
        }
        let mut rng = ChaCha8Rng::seed_from_u64(1234);
        let draws = 10_000;
        let mut zero = 0;
        for _ in 0..draws {
            let ctx = a
                .sample_context(&uniform(), InspirationCounts { top_k: 0, random: 0 }, &mut rng)
                .unwrap();
            if ctx.island_id == 0 {
                zero += 1;
            }
        }
        let f = zero as f64 / draws as f64;
        assert!((f - 0.5).abs() < 0.02, "{f}");
        // chi-square with 1 dof; p > 0.01 means statistic < 6.635
        let expected = draws as f64 / 2.0;
        let chi = ((zero as f64 - expected).powi(2) + ((draws - zero) as f64 - expected).powi(2))
            / expected;
        assert!(chi < 6.635, "chi-square {chi}");
    }

    #[test]
    fn migration_rate_zero_is_identity() {
        let mut a = Archive::new(params(40, 2)).unwrap();
        for i in 0..10 {
            a.insert(test_record(&format!("r{i}"), i % 2, i as f64)).unwrap();
        }
        let before = a.clone();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(a.migrate(10, 10, 0.0, &mut rng).is_empty());
        assert_eq!(a, before);
        assert!(a.migrate(7, 10, 0.5, &mut rng).is_empty());
        assert_eq!(a, before);
    }

    #[test]
    fn migration_keeps_island_best() {
        let mut a = Archive::new(params(40, 2)).unwrap();
        a.insert(test_record("A", 0, 2.0)).unwrap();
        a.insert(test_record("B", 0, 1.0)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let moves = a.migrate(10, 10, 0.5, &mut rng);
        assert_eq!(moves, vec![Migration { id: "B".into(), from: 0, to: 1 }]);
        assert_eq!(a.get("B").unwrap().island_id, 1);
    }

    #[test]
    fn migration_moves_exact_count() {
        let mut a = Archive::new(params(100, 2)).unwrap();
        for i in 0..40 {
            a.insert(test_record(&format!("r{i:02}"), i % 2, i as f64)).unwrap();
        }
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        for event in 1..=5u64 {
            let bests: Vec<String> = (0..2).map(|i| a.island_best(i).unwrap().id.clone()).collect();
            let sizes: Vec<usize> = (0..2).map(|i| a.island_members(i).len()).collect();
            let moves = a.migrate(event * 10, 10, 0.1, &mut rng);
            let expected: usize = sizes.iter().map(|s| s / 10).sum();
            assert_eq!(moves.len(), expected);
            for m in &moves {
                assert_ne!(m.id, bests[m.from]);
                assert_eq!(m.to, (m.from + 1) % 2);
            }
            assert_eq!(a.island_members(0).len() + a.island_members(1).len(), 40);
        }
    }

    #[test]
    fn empty_snapshot_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("archive.jsonl");
        let a = Archive::new(params(40, 2)).unwrap();
        a.snapshot(&path).unwrap();
        let text = fs::read_to_string(&path).unwrap();
        assert_eq!(text.lines().count(), 1);
        assert!(text.contains(ARCHIVE_SCHEMA));
        assert_eq!(Archive::load(&path).unwrap(), a);
    }

    fn random_record<R: Rng>(rng: &mut R, i: usize) -> ProgramRecord {
        let mut r = test_record(&format!("id-{i}"), i % 3, rng.random::<f64>() * 1e6 - 5e5);
        r.generation = rng.random_range(0..1000);
        r.code = format!("line \"{i}\"\n\tunicode é ✓ {}\n", rng.random::<u64>());
        r.mutable_code = "x = 1\n".into();
        r.public_metrics.insert("m".into(), rng.random::<f64>() / 3.0);
        r.embedding = Some((0..8).map(|_| rng.random::<f64>() * 2.0 - 1.0).collect());
        r.created_at = i as u64;
        if i > 0 {
            r.parent_id = Some(format!("id-{}", i - 1));
        }
        r
    }

    #[test]
    fn hundred_record_roundtrip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("archive.jsonl");
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let mut a = Archive::new(params(1000, 3)).unwrap();
        for i in 0..100 {
            a.insert(random_record(&mut rng, i)).unwrap();
        }
        a.snapshot(&path).unwrap();
        let b = Archive::load(&path).unwrap();
        for (x, y) in a.records().zip(b.records()) {
            assert_eq!(x, y);
            assert_eq!(x.fitness.to_bits(), y.fitness.to_bits());
        }
        assert_eq!(a, b);
    }

    #[test]
    fn truncated_snapshot_names_last_record() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut a = Archive::new(params(100, 3)).unwrap();
        for i in 0..5 {
            a.insert(random_record(&mut rng, i)).unwrap();
        }
        let mut buf = Vec::new();
        a.write_snapshot(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        // drop the last record and cut the one before it in half
        let cut = &lines[4][..lines[4].len() / 2];
        let damaged = format!("{}\n{}\n{}\n{}\n{}\n", lines[0], lines[1], lines[2], lines[3], cut);
        let err = Archive::read_snapshot(damaged.as_bytes()).unwrap_err();
        match err {
            ArchiveError::BadRecord { index, message } => {
                assert_eq!(index, 3);
                assert!(message.contains("'id-2'"), "{message}");
            }
            other => panic!("unexpected {other}"),
        }
        let short = format!("{}\n{}\n{}\n", lines[0], lines[1], lines[2]);
        match Archive::read_snapshot(short.as_bytes()).unwrap_err() {
            ArchiveError::Truncated { expected, found, last_valid } => {
                assert_eq!((expected, found), (5, 2));
                assert!(last_valid.contains("id-1"));
            }
            other => panic!("unexpected {other}"),
        }
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        #[derive(Debug, Clone)]
        enum Op {
            Insert { fitness: i32, island: usize, parent: Option<usize>, partner: Option<usize> },
            Migrate { rate: f64 },
        }

        fn op() -> impl Strategy<Value = Op> {
            prop_oneof![
                4 => (-20i32..20, 0usize..3, proptest::option::of(0usize..64), proptest::option::of(0usize..64))
                    .prop_map(|(fitness, island, parent, partner)| Op::Insert { fitness, island, parent, partner }),
                1 => (0.0f64..1.0).prop_map(|rate| Op::Migrate { rate }),
            ]
        }

        proptest! {
            #[test]
            fn structural_invariants(ops in prop::collection::vec(op(), 1..80), seed in 0u64..1000) {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let mut a = Archive::new(ArchiveParams { capacity: 12, elite_ratio: 0.3, num_islands: 3, island_elitism: true }).unwrap();
                let mut inserted: Vec<ProgramRecord> = Vec::new();
                let mut gen = 0u64;
                for (t, op) in ops.into_iter().enumerate() {
                    match op {
                        Op::Insert { fitness, island, parent, partner } => {
                            let live: Vec<String> = a.records().map(|r| r.id.clone()).collect();
                            let mut r = test_record(&format!("n{t}"), island, fitness as f64);
                            r.created_at = t as u64;
                            if !live.is_empty() {
                                r.parent_id = parent.map(|p| live[p % live.len()].clone());
                                let partner = partner.map(|p| live[p % live.len()].clone());
                                if partner != r.parent_id {
                                    r.crossover_partner_id = partner;
                                }
                            }
                            // bests of the pre-eviction population, new record included
                            let best_of = |pool: Vec<&ProgramRecord>| pool.into_iter().min_by(|x, y| compare_rank(x, y)).map(|b| b.id.clone());
                            let mut everyone: Vec<&ProgramRecord> = a.records().collect();
                            everyone.push(&r);
                            let global_best = best_of(everyone.clone());
                            let island_bests: Vec<Option<String>> = (0..3)
                                .map(|i| best_of(everyone.iter().copied().filter(|x| x.island_id == i).collect()))
                                .collect();
                            let out = a.insert(r.clone()).unwrap();
                            inserted.push(r);
                            if let Some(v) = out.evicted {
                                prop_assert!(Some(&v) != global_best.as_ref());
                                prop_assert!(!island_bests.contains(&Some(v.clone())));
                            }
                        }
                        Op::Migrate { rate } => {
                            gen += 10;
                            let bests: Vec<Option<String>> = (0..3).map(|i| a.island_best(i).map(|b| b.id.clone())).collect();
                            for m in a.migrate(gen, 10, rate, &mut rng) {
                                prop_assert!(Some(&m.id) != bests[m.from].as_ref());
                            }
                        }
                    }
                    // every id in exactly one island, counts add up
                    let total: usize = (0..3).map(|i| a.island_members(i).len()).sum();
                    prop_assert_eq!(total, a.len());
                    for r in a.records() {
                        let owners = (0..3).filter(|&i| a.island_members(i).iter().any(|m| m.id == r.id)).count();
                        prop_assert_eq!(owners, 1);
                        prop_assert!(a.island_members(r.island_id).iter().any(|m| m.id == r.id));
                        // counters equal lineage edges among records inserted while r was archived
                        let born = inserted.iter().position(|x| x.id == r.id).unwrap();
                        let edges = inserted[born + 1..].iter().filter(|x| {
                            x.parent_id.as_deref() == Some(&r.id) || x.crossover_partner_id.as_deref() == Some(&r.id)
                        }).count() as u64;
                        prop_assert_eq!(r.offspring_count, edges);
                    }
                }
            }
        }
    }
}
