//! Two-level storage: a per-node in-memory block tier with LFU eviction over
//! a shared backing store whose data nodes keep an LRU buffer cache in front
//! of disk.

mod backing;
mod tier;

pub use backing::{BackingStore, Catalog, DataNodeSpec};
pub use tier::{AdmissionPolicy, Block, EvictionSummary, StorageTier, TierConfig};

use serde::{Deserialize, Serialize};
use std::fmt;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct BlockId(pub u64);

impl fmt::Display for BlockId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "blk{}", self.0)
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum StorageError {
    #[error("block {0} is not in the dataset catalog")]
    UnknownBlock(BlockId),
    #[error("cannot free {needed} bytes from a tier holding {used}")]
    InsufficientContents { needed: u64, used: u64 },
    #[error("hit ratio is undefined with zero accesses")]
    NoAccesses,
    #[error("invalid storage configuration: {0}")]
    Config(String),
}

/// Where an access was served from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TierHit {
    Local,
    RemoteCache,
    RemoteDisk,
}

/// Per-block service time for each tier, in milliseconds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TierLatencies {
    pub local_mem_ms: f64,
    pub remote_cache_ms: f64,
    pub remote_disk_ms: f64,
}

impl Default for TierLatencies {
    fn default() -> Self {
        Self { local_mem_ms: 1.0, remote_cache_ms: 10.0, remote_disk_ms: 100.0 }
    }
}

impl TierLatencies {
    pub fn validate(&self) -> Result<(), StorageError> {
        let ordered = self.local_mem_ms >= 0.0
            && self.local_mem_ms < self.remote_cache_ms
            && self.remote_cache_ms < self.remote_disk_ms
            && self.remote_disk_ms.is_finite();
        if ordered {
            Ok(())
        } else {
            Err(StorageError::Config("latencies must satisfy 0 <= local_mem < remote_cache < remote_disk".into()))
        }
    }

    pub fn of(&self, hit: TierHit) -> f64 {
        match hit {
            TierHit::Local => self.local_mem_ms,
            TierHit::RemoteCache => self.remote_cache_ms,
            TierHit::RemoteDisk => self.remote_disk_ms,
        }
    }

    pub fn scaled(&self, k: f64) -> Self {
        Self {
            local_mem_ms: self.local_mem_ms * k,
            remote_cache_ms: self.remote_cache_ms * k,
            remote_disk_ms: self.remote_disk_ms * k,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct AccessStats {
    pub hits_local: u64,
    pub hits_remote_cache: u64,
    pub hits_remote_disk: u64,
    pub bytes_local: u64,
    pub bytes_remote_cache: u64,
    pub bytes_remote_disk: u64,
}

impl AccessStats {
    pub fn total(&self) -> u64 {
        self.hits_local + self.hits_remote_cache + self.hits_remote_disk
    }

    pub fn total_bytes(&self) -> u64 {
        self.bytes_local + self.bytes_remote_cache + self.bytes_remote_disk
    }

    pub fn record(&mut self, hit: TierHit, bytes: u64) {
        match hit {
            TierHit::Local => {
                self.hits_local += 1;
                self.bytes_local += bytes;
            }
            TierHit::RemoteCache => {
                self.hits_remote_cache += 1;
                self.bytes_remote_cache += bytes;
            }
            TierHit::RemoteDisk => {
                self.hits_remote_disk += 1;
                self.bytes_remote_disk += bytes;
            }
        }
    }

    pub fn merge(&mut self, other: &AccessStats) {
        self.hits_local += other.hits_local;
        self.hits_remote_cache += other.hits_remote_cache;
        self.hits_remote_disk += other.hits_remote_disk;
        self.bytes_local += other.bytes_local;
        self.bytes_remote_cache += other.bytes_remote_cache;
        self.bytes_remote_disk += other.bytes_remote_disk;
    }

    pub fn since(&self, earlier: &AccessStats) -> AccessStats {
        AccessStats {
            hits_local: self.hits_local - earlier.hits_local,
            hits_remote_cache: self.hits_remote_cache - earlier.hits_remote_cache,
            hits_remote_disk: self.hits_remote_disk - earlier.hits_remote_disk,
            bytes_local: self.bytes_local - earlier.bytes_local,
            bytes_remote_cache: self.bytes_remote_cache - earlier.bytes_remote_cache,
            bytes_remote_disk: self.bytes_remote_disk - earlier.bytes_remote_disk,
        }
    }
}

/// Fraction of accesses served from the local tier.
pub fn hit_ratio(stats: &AccessStats) -> Result<f64, StorageError> {
    match stats.total() {
        0 => Err(StorageError::NoAccesses),
        n => Ok(stats.hits_local as f64 / n as f64),
    }
}

/// Fraction of accessed bytes served from the local tier.
pub fn byte_hit_ratio(stats: &AccessStats) -> Result<f64, StorageError> {
    match stats.total_bytes() {
        0 => Err(StorageError::NoAccesses),
        n => Ok(stats.bytes_local as f64 / n as f64),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AccessResult {
    pub tier_hit: TierHit,
    pub latency_ms: f64,
    pub admitted: bool,
    pub evicted: Vec<BlockId>,
}

/// Reads one block through the local tier, falling back to the backing
/// store on a miss. Updates tier statistics exactly once.
pub fn access(
    tier: &mut StorageTier,
    backing: &mut BackingStore,
    block_id: BlockId,
    now: u64,
) -> Result<AccessResult, StorageError> {
    let size = backing.catalog().size_of(block_id)?;
    if tier.touch(block_id, now) {
        tier.stats_mut().record(TierHit::Local, size);
        return Ok(AccessResult {
            tier_hit: TierHit::Local,
            latency_ms: backing.latencies().local_mem_ms,
            admitted: false,
            evicted: Vec::new(),
        });
    }
    let hit = backing.read(block_id)?;
    tier.stats_mut().record(hit, size);
    let evicted = tier.admit(block_id, size, now);
    Ok(AccessResult {
        tier_hit: hit,
        latency_ms: backing.latencies().of(hit),
        admitted: evicted.is_some(),
        evicted: evicted.unwrap_or_default(),
    })
}
