use std::collections::{BTreeSet, HashMap};

use serde::{Deserialize, Serialize};

use super::{AccessStats, BlockId, StorageError};

/// Cached data unit.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Block {
    pub block_id: BlockId,
    /// Data bytes.
    pub size: u64,
    pub access_count: u64,
    pub last_access: u64,
}

impl Block {
    fn key(&self) -> (u64, u64, BlockId) {
        (self.access_count, self.last_access, self.block_id)
    }
}

/// What to do with a missed block when the tier is full.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AdmissionPolicy {
    /// Evict whatever LFU picks and admit.
    Always,
    /// Admit only if the first LFU victim has been accessed no more often
    /// than the incoming block was missed before.
    #[default]
    GhostFrequency,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TierConfig {
    pub max_capacity: u64,
    /// Typical block size; sizes the ghost table.
    pub block_size: u64,
    /// Resident footprint per data byte (>1 for deserialized caches).
    pub inflation: f64,
    pub admission: AdmissionPolicy,
    /// Ghost table holds this many entries per block the tier can hold.
    pub ghost_factor: usize,
}

impl TierConfig {
    pub fn new(max_capacity: u64, block_size: u64) -> Self {
        Self { max_capacity, block_size, inflation: 1.0, admission: AdmissionPolicy::GhostFrequency, ghost_factor: 4 }
    }

    fn ghost_limit(&self) -> usize {
        let blocks = self.max_capacity / self.footprint(self.block_size.max(1)).max(1);
        self.ghost_factor * (blocks as usize).max(1)
    }

    /// Bytes a block of `size` data bytes occupies once resident.
    pub fn footprint(&self, size: u64) -> u64 {
        if self.inflation == 1.0 {
            size
        } else {
            (size as f64 * self.inflation).ceil() as u64
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct Ghost {
    misses: u64,
    last_seen: u64,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvictionSummary {
    pub evicted: Vec<BlockId>,
    pub bytes: u64,
}

/// Capacity-bounded block cache with LFU eviction.
///
/// Eviction order is ascending `(access_count, last_access, block_id)`.
/// Evicted blocks forget their frequency.
#[derive(Debug, Clone)]
pub struct StorageTier {
    config: TierConfig,
    capacity: u64,
    used: u64,
    resident: HashMap<BlockId, Block>,
    order: BTreeSet<(u64, u64, BlockId)>,
    ghosts: HashMap<BlockId, Ghost>,
    stats: AccessStats,
    evicted_bytes: u64,
}

impl StorageTier {
    /// Starts empty at full capacity.
    pub fn new(config: TierConfig) -> Self {
        Self {
            capacity: config.max_capacity,
            config,
            used: 0,
            resident: HashMap::new(),
            order: BTreeSet::new(),
            ghosts: HashMap::new(),
            stats: AccessStats::default(),
            evicted_bytes: 0,
        }
    }

    pub fn config(&self) -> &TierConfig {
        &self.config
    }

    pub fn capacity(&self) -> u64 {
        self.capacity
    }

    pub fn used(&self) -> u64 {
        self.used
    }

    pub fn len(&self) -> usize {
        self.resident.len()
    }

    pub fn is_empty(&self) -> bool {
        self.resident.is_empty()
    }

    pub fn stats(&self) -> &AccessStats {
        &self.stats
    }

    pub(crate) fn stats_mut(&mut self) -> &mut AccessStats {
        &mut self.stats
    }

    /// Footprint bytes evicted over the tier's lifetime.
    pub fn evicted_bytes(&self) -> u64 {
        self.evicted_bytes
    }

    pub fn contains(&self, id: BlockId) -> bool {
        self.resident.contains_key(&id)
    }

    pub fn block(&self, id: BlockId) -> Option<&Block> {
        self.resident.get(&id)
    }

    /// Resident blocks in eviction order.
    pub fn blocks(&self) -> impl Iterator<Item = &Block> + '_ {
        self.order.iter().map(move |(_, _, id)| &self.resident[id])
    }

    /// Records a hit on a resident block. Returns false if not resident.
    pub fn touch(&mut self, id: BlockId, now: u64) -> bool {
        let Some(b) = self.resident.get_mut(&id) else {
            return false;
        };
        self.order.remove(&b.key());
        b.access_count += 1;
        b.last_access = now;
        self.order.insert(b.key());
        true
    }

    /// Inserts a block without consulting the admission policy. Used to
    /// build fixtures; the block must fit.
    pub fn insert(&mut self, block: Block) -> Result<(), StorageError> {
        let fp = self.config.footprint(block.size);
        if self.contains(block.block_id) || self.used + fp > self.capacity || block.size == 0 {
            return Err(StorageError::Config(format!("cannot insert {}", block.block_id)));
        }
        self.used += fp;
        self.order.insert(block.key());
        self.ghosts.remove(&block.block_id);
        self.resident.insert(block.block_id, block);
        Ok(())
    }

    /// Considers a missed block for admission. Returns the evicted blocks if
    /// it was admitted, `None` if it was turned away.
    pub fn admit(&mut self, id: BlockId, size: u64, now: u64) -> Option<Vec<BlockId>> {
        let fp = self.config.footprint(size);
        if fp > self.capacity || self.contains(id) {
            self.note_miss(id, now);
            return None;
        }
        let mut evicted = Vec::new();
        let seen = self.ghost_count(id);
        if self.used + fp > self.capacity {
            let needed = self.used + fp - self.capacity;
            let first_victim = self.order.first().map(|k| k.0).unwrap_or(0);
            let allowed = match self.config.admission {
                AdmissionPolicy::Always => true,
                AdmissionPolicy::GhostFrequency => first_victim <= seen,
            };
            if !allowed {
                self.note_miss(id, now);
                return None;
            }
            evicted = self.evict_lfu(needed).expect("needed <= used");
        }
        // Misses recorded while it was turned away count towards its frequency.
        self.insert(Block { block_id: id, size, access_count: seen + 1, last_access: now }).expect("space was made");
        Some(evicted)
    }

    fn note_miss(&mut self, id: BlockId, now: u64) {
        if let Some(g) = self.ghosts.get_mut(&id) {
            g.misses += 1;
            g.last_seen = now;
            return;
        }
        let limit = self.config.ghost_limit();
        if self.ghosts.len() >= limit {
            // Forget the least-missed, oldest entry.
            let victim = self.ghosts.iter().min_by_key(|(bid, g)| (g.misses, g.last_seen, **bid)).map(|(bid, _)| *bid);
            if let Some(v) = victim {
                self.ghosts.remove(&v);
            }
        }
        self.ghosts.insert(id, Ghost { misses: 1, last_seen: now });
    }

    /// Misses recorded for a non-resident block since it was last dropped.
    pub fn ghost_count(&self, id: BlockId) -> u64 {
        self.ghosts.get(&id).map_or(0, |g| g.misses)
    }

    /// Evicts least-frequently-used blocks until at least `bytes_needed`
    /// footprint bytes are free. Returns the victims in eviction order.
    pub fn evict_lfu(&mut self, bytes_needed: u64) -> Result<Vec<BlockId>, StorageError> {
        if bytes_needed > self.used {
            return Err(StorageError::InsufficientContents { needed: bytes_needed, used: self.used });
        }
        let mut freed = 0;
        let mut out = Vec::new();
        while freed < bytes_needed {
            let (_, _, id) = self.order.pop_first().expect("used > 0 implies residents");
            let b = self.resident.remove(&id).expect("order and resident agree");
            let fp = self.config.footprint(b.size);
            self.used -= fp;
            freed += fp;
            out.push(id);
        }
        self.evicted_bytes += freed;
        Ok(out)
    }

    /// Sets the capacity (capped at the configured maximum) and evicts down
    /// to it.
    pub fn set_capacity(&mut self, target: u64) -> EvictionSummary {
        self.capacity = target.min(self.config.max_capacity);
        if self.used <= self.capacity {
            return EvictionSummary::default();
        }
        let before = self.used;
        let evicted = self.evict_lfu(self.used - self.capacity).expect("used > capacity");
        EvictionSummary { evicted, bytes: before - self.used }
    }

    /// Halves every resident access count, keeping counts at least 1.
    pub fn age(&mut self) {
        let mut blocks: Vec<_> = self.resident.values_mut().collect();
        self.order.clear();
        for b in blocks.iter_mut() {
            b.access_count = (b.access_count / 2).max(1);
            self.order.insert(b.key());
        }
    }

    /// Checks internal bookkeeping; used by tests and the fuzz harness.
    pub fn check_invariants(&self) -> Result<(), String> {
        let sum: u64 = self.resident.values().map(|b| self.config.footprint(b.size)).sum();
        if sum != self.used {
            return Err(format!("used {} != resident sum {sum}", self.used));
        }
        if self.used > self.capacity {
            return Err(format!("used {} > capacity {}", self.used, self.capacity));
        }
        if self.capacity > self.config.max_capacity {
            return Err("capacity above maximum".into());
        }
        if self.order.len() != self.resident.len() {
            return Err("order index out of sync".into());
        }
        if self.resident.values().any(|b| b.access_count == 0) {
            return Err("resident block with zero accesses".into());
        }
        Ok(())
    }
}
