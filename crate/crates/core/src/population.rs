//! Per-island populations: the elite archive over the behavior grid, the
//! append-only history, parent sampling, reference selection, and ring
//! migration.
//!
//! The archive keeps at most one champion per grid cell and replaces it
//! only on strict reward improvement (an empty cell counts as reward
//! negative infinity), so per-cell champions are monotone over time.

use std::collections::BTreeMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::ir::{BehaviorDescriptor, ValidatedWorkflow};

/// Provenance of a candidate: the parent it was synthesized from and the
/// iteration that produced it. The seed has no parent and iteration 0.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Lineage {
    pub parent_fingerprint: Option<String>,
    pub iteration: u64,
}

/// Mean per-query measurements backing a candidate's reward.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsSummary {
    pub mean_score: f64,
    pub mean_cost: f64,
    pub mean_latency: f64,
}

/// An evaluated candidate as stored in histories and archives.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CandidateRecord {
    pub graph: ValidatedWorkflow,
    pub fingerprint: String,
    pub reward: f64,
    pub metrics: MetricsSummary,
    /// Bounded log excerpt, failures first; feeds the reflection prompt.
    pub log_excerpt: String,
    pub descriptor: BehaviorDescriptor,
    pub lineage: Lineage,
}

impl CandidateRecord {
    pub fn new(
        graph: ValidatedWorkflow,
        reward: f64,
        metrics: MetricsSummary,
        log_excerpt: String,
        lineage: Lineage,
    ) -> Self {
        assert!(reward.is_finite(), "candidate rewards must be finite");
        let fingerprint = graph.fingerprint();
        let descriptor = graph.descriptor();
        CandidateRecord {
            graph,
            fingerprint,
            reward,
            metrics,
            log_excerpt,
            descriptor,
            lineage,
        }
    }
}

/// Discretization of the behavior space.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridConfig {
    /// Ascending lower bounds of the node-count buckets; the default
    /// `[1, 2, 3, 4, 6, 9]` yields buckets {1, 2, 3, 4-5, 6-8, 9+}.
    pub node_count_edges: Vec<usize>,
    /// Number of equal-width bins over llm_proportion in [0, 1].
    pub llm_proportion_bins: usize,
}

impl Default for GridConfig {
    fn default() -> Self {
        GridConfig {
            node_count_edges: vec![1, 2, 3, 4, 6, 9],
            llm_proportion_bins: 5,
        }
    }
}

impl GridConfig {
    pub fn validate(&self) -> Result<(), String> {
        if self.node_count_edges.is_empty() || self.llm_proportion_bins == 0 {
            return Err("grid needs at least one bin per axis".into());
        }
        if !self.node_count_edges.windows(2).all(|w| w[0] < w[1]) {
            return Err("node_count_edges must be strictly increasing".into());
        }
        Ok(())
    }

    /// Map a descriptor to its grid cell.
    pub fn cell_of(&self, d: &BehaviorDescriptor) -> GridCell {
        let count_bin = self
            .node_count_edges
            .iter()
            .rposition(|edge| *edge <= d.node_count)
            .unwrap_or(0);
        let p = d.llm_proportion.clamp(0.0, 1.0);
        let prop_bin =
            ((p * self.llm_proportion_bins as f64) as usize).min(self.llm_proportion_bins - 1);
        GridCell {
            count_bin,
            prop_bin,
        }
    }
}

/// Coordinates of one archive cell.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct GridCell {
    pub count_bin: usize,
    pub prop_bin: usize,
}

/// An archived champion together with its insertion sequence number (the
/// tie-break for "earliest" when rewards are equal).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ArchiveEntry {
    pub record: CandidateRecord,
    pub seq: u64,
}

/// One island: its elite archive and its full history of valid candidates.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IslandState {
    pub id: usize,
    /// Serialized as a cell-sorted pair list (JSON maps need string keys).
    #[serde(with = "archive_serde")]
    archive: BTreeMap<GridCell, ArchiveEntry>,
    history: Vec<CandidateRecord>,
    next_seq: u64,
}

mod archive_serde {
    use super::{ArchiveEntry, GridCell};
    use serde::{Deserialize, Deserializer, Serialize, Serializer};
    use std::collections::BTreeMap;

    pub fn serialize<S: Serializer>(
        map: &BTreeMap<GridCell, ArchiveEntry>,
        s: S,
    ) -> Result<S::Ok, S::Error> {
        map.iter().collect::<Vec<_>>().serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(
        d: D,
    ) -> Result<BTreeMap<GridCell, ArchiveEntry>, D::Error> {
        let pairs = Vec::<(GridCell, ArchiveEntry)>::deserialize(d)?;
        Ok(pairs.into_iter().collect())
    }
}

/// What `archive_update` did with a record.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UpdateOutcome {
    Inserted,
    Replaced,
    Rejected,
}

impl IslandState {
    pub fn new(id: usize) -> Self {
        IslandState {
            id,
            archive: BTreeMap::new(),
            history: Vec::new(),
            next_seq: 0,
        }
    }

    pub fn archive(&self) -> &BTreeMap<GridCell, ArchiveEntry> {
        &self.archive
    }

    pub fn history(&self) -> &[CandidateRecord] {
        &self.history
    }

    /// Map the record to its cell and install it iff the cell is empty or
    /// the record strictly beats the incumbent (ties keep the incumbent).
    /// The history is appended regardless of the archive outcome.
    pub fn archive_update(&mut self, record: CandidateRecord, grid: &GridConfig) -> UpdateOutcome {
        let cell = grid.cell_of(&record.descriptor);
        let seq = self.next_seq;
        self.next_seq += 1;
        self.history.push(record.clone());

        match self.archive.get(&cell) {
            None => {
                self.archive.insert(cell, ArchiveEntry { record, seq });
                UpdateOutcome::Inserted
            }
            Some(incumbent) if record.reward > incumbent.record.reward => {
                self.archive.insert(cell, ArchiveEntry { record, seq });
                UpdateOutcome::Replaced
            }
            Some(_) => UpdateOutcome::Rejected,
        }
    }

    /// Archive champion with maximum reward; equal rewards resolve to the
    /// earliest-inserted entry.
    pub fn top_entry(&self) -> Option<&ArchiveEntry> {
        self.archive.values().min_by(|a, b| {
            b.record
                .reward
                .partial_cmp(&a.record.reward)
                .expect("rewards are finite")
                .then(a.seq.cmp(&b.seq))
        })
    }

    /// Top `n` archive entries by (reward desc, seq asc).
    pub fn top_entries(&self, n: usize) -> Vec<&ArchiveEntry> {
        let mut entries: Vec<&ArchiveEntry> = self.archive.values().collect();
        entries.sort_by(|a, b| {
            b.record
                .reward
                .partial_cmp(&a.record.reward)
                .expect("rewards are finite")
                .then(a.seq.cmp(&b.seq))
        });
        entries.truncate(n);
        entries
    }
}

/// Exploration/exploitation split for parent sampling.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SamplerConfig {
    pub rho_explore: f64,
    pub rho_exploit: f64,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        SamplerConfig {
            rho_explore: 0.3,
            rho_exploit: 0.5,
        }
    }
}

impl SamplerConfig {
    pub fn validate(&self) -> Result<(), String> {
        if self.rho_explore < 0.0 || self.rho_exploit < 0.0 {
            return Err("sampling ratios must be non-negative".into());
        }
        if self.rho_explore + self.rho_exploit > 1.0 {
            return Err("rho_explore + rho_exploit must not exceed 1".into());
        }
        Ok(())
    }
}

/// Which pool a parent was drawn from; exposed for distribution tests.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ParentPool {
    LocalHistory,
    LocalArchive,
    GlobalHistory,
}

/// Draw a parent: with probability rho_explore uniformly from the island's
/// history, with probability rho_exploit uniformly from its archive, and
/// otherwise uniformly from the global history. All pools are seeded at
/// initialization, so they are never empty.
pub fn sample_parent<'a>(
    island: &'a IslandState,
    global_history: &'a [CandidateRecord],
    sampler: &SamplerConfig,
    rng: &mut impl Rng,
) -> (&'a CandidateRecord, ParentPool) {
    let r: f64 = rng.gen();
    if r < sampler.rho_explore {
        let i = rng.gen_range(0..island.history.len());
        (&island.history[i], ParentPool::LocalHistory)
    } else if r < sampler.rho_explore + sampler.rho_exploit {
        let entries: Vec<&ArchiveEntry> = island.archive.values().collect();
        let i = rng.gen_range(0..entries.len());
        (&entries[i].record, ParentPool::LocalArchive)
    } else {
        let i = rng.gen_range(0..global_history.len());
        (&global_history[i], ParentPool::GlobalHistory)
    }
}

/// Pick the reference pair for the evolutionary prompt: the archive's
/// top-ranked champion and a uniform draw over champions from other
/// occupied cells. With a single occupied cell the diverse reference
/// degenerates to the top one, keeping the prompt shape stable.
pub fn select_references<'a>(
    island: &'a IslandState,
    rng: &mut impl Rng,
) -> (&'a CandidateRecord, &'a CandidateRecord) {
    let top = island
        .top_entry()
        .expect("archive is seeded before sampling");
    let top_cell = *island
        .archive
        .iter()
        .find(|(_, e)| e.seq == top.seq)
        .expect("top entry is in the archive")
        .0;
    let others: Vec<&ArchiveEntry> = island
        .archive
        .iter()
        .filter(|(cell, _)| **cell != top_cell)
        .map(|(_, e)| e)
        .collect();
    if others.is_empty() {
        return (&top.record, &top.record);
    }
    let i = rng.gen_range(0..others.len());
    (&top.record, &others[i].record)
}

/// One attempted elite transfer during migration.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MigrationMove {
    pub from_island: usize,
    pub to_island: usize,
    pub fingerprint: String,
    pub reward: f64,
    pub outcome: UpdateOutcome,
}

/// Copy each island's top `elite_count` archive elites to its ring
/// neighbor, inserting through the normal archive update (and appending to
/// the destination history). Sources are snapshotted first, so migration
/// order cannot feed a migrant back into a later source. Copies, not
/// moves: source archives are untouched.
pub fn ring_migrate(
    islands: &mut [IslandState],
    elite_count: usize,
    grid: &GridConfig,
) -> Vec<MigrationMove> {
    if islands.len() < 2 {
        return Vec::new();
    }
    let snapshots: Vec<Vec<CandidateRecord>> = islands
        .iter()
        .map(|island| {
            island
                .top_entries(elite_count)
                .into_iter()
                .map(|e| e.record.clone())
                .collect()
        })
        .collect();

    let k = islands.len();
    let mut moves = Vec::new();
    for (src, elites) in snapshots.into_iter().enumerate() {
        let dst = (src + 1) % k;
        for record in elites {
            let outcome = islands[dst].archive_update(record.clone(), grid);
            moves.push(MigrationMove {
                from_island: islands[src].id,
                to_island: islands[dst].id,
                fingerprint: record.fingerprint,
                reward: record.reward,
                outcome,
            });
        }
    }
    moves
}

/// The maximum-reward record ever pooled, ties resolved to the earliest.
/// Everything valid enters the global history, so scanning it suffices.
pub fn best_overall(global_history: &[CandidateRecord]) -> Option<&CandidateRecord> {
    let mut best: Option<&CandidateRecord> = None;
    for record in global_history {
        match best {
            None => best = Some(record),
            Some(b) if record.reward > b.reward => best = Some(record),
            _ => {}
        }
    }
    best
}
