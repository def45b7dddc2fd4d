use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use super::{BlockId, StorageError, TierHit, TierLatencies};
use crate::units::serde_size;

/// Block sizes of the input dataset. Block ids are dense indices.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Catalog {
    sizes: Vec<u64>,
}

impl Catalog {
    /// Splits `dataset_bytes` into `block_size` blocks; the last may be short.
    pub fn uniform(dataset_bytes: u64, block_size: u64) -> Self {
        assert!(block_size > 0, "block size must be positive");
        let full = dataset_bytes / block_size;
        let mut sizes = vec![block_size; full as usize];
        if !dataset_bytes.is_multiple_of(block_size) {
            sizes.push(dataset_bytes % block_size);
        }
        Self { sizes }
    }

    pub fn from_sizes(sizes: Vec<u64>) -> Self {
        Self { sizes }
    }

    pub fn len(&self) -> usize {
        self.sizes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sizes.is_empty()
    }

    pub fn size_of(&self, id: BlockId) -> Result<u64, StorageError> {
        self.sizes.get(id.0 as usize).copied().ok_or(StorageError::UnknownBlock(id))
    }

    pub fn total_bytes(&self) -> u64 {
        self.sizes.iter().sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DataNodeSpec {
    #[serde(with = "serde_size")]
    pub buffer_cache: u64,
}

/// One data node's OS buffer cache: byte-bounded LRU.
#[derive(Debug, Clone)]
struct DataNode {
    capacity: u64,
    used: u64,
    by_stamp: BTreeMap<u64, BlockId>,
    resident: HashMap<BlockId, (u64, u64)>,
}

impl DataNode {
    fn new(capacity: u64) -> Self {
        Self { capacity, used: 0, by_stamp: BTreeMap::new(), resident: HashMap::new() }
    }

    fn read(&mut self, id: BlockId, size: u64, stamp: u64) -> TierHit {
        if let Some((old, _)) = self.resident.get_mut(&id) {
            self.by_stamp.remove(old);
            *old = stamp;
            self.by_stamp.insert(stamp, id);
            return TierHit::RemoteCache;
        }
        if size > self.capacity {
            return TierHit::RemoteDisk;
        }
        while self.used + size > self.capacity {
            let (_, victim) = self.by_stamp.pop_first().expect("used > 0");
            let (_, vsize) = self.resident.remove(&victim).expect("indexed");
            self.used -= vsize;
        }
        self.by_stamp.insert(stamp, id);
        self.resident.insert(id, (stamp, size));
        self.used += size;
        TierHit::RemoteDisk
    }
}

/// Shared parallel-file-system analog: catalog, block placement and the
/// data nodes' buffer caches.
#[derive(Debug, Clone)]
pub struct BackingStore {
    catalog: Catalog,
    latencies: TierLatencies,
    nodes: Vec<DataNode>,
    stamp: u64,
}

impl BackingStore {
    pub fn new(data_nodes: Vec<DataNodeSpec>, latencies: TierLatencies, catalog: Catalog) -> Self {
        assert!(!data_nodes.is_empty(), "at least one data node");
        let nodes = data_nodes.iter().map(|d| DataNode::new(d.buffer_cache)).collect();
        Self { catalog, latencies, nodes, stamp: 0 }
    }

    pub fn catalog(&self) -> &Catalog {
        &self.catalog
    }

    pub fn latencies(&self) -> &TierLatencies {
        &self.latencies
    }

    /// Data node holding `id`: round-robin by block index.
    pub fn placement(&self, id: BlockId) -> usize {
        (id.0 % self.nodes.len() as u64) as usize
    }

    /// Serves a block from its data node, updating that node's LRU.
    pub fn read(&mut self, id: BlockId) -> Result<TierHit, StorageError> {
        let size = self.catalog.size_of(id)?;
        self.stamp += 1;
        let node = self.placement(id);
        Ok(self.nodes[node].read(id, size, self.stamp))
    }

    pub fn is_buffered(&self, id: BlockId) -> bool {
        self.nodes[self.placement(id)].resident.contains_key(&id)
    }

    /// Buffered bytes per data node.
    pub fn buffered_bytes(&self) -> Vec<u64> {
        self.nodes.iter().map(|n| n.used).collect()
    }

    pub fn check_invariants(&self) -> Result<(), String> {
        for (i, n) in self.nodes.iter().enumerate() {
            let sum: u64 = n.resident.values().map(|(_, size)| size).sum();
            if sum != n.used || n.used > n.capacity || n.by_stamp.len() != n.resident.len() {
                return Err(format!("data node {i}: used {} sum {sum} cap {}", n.used, n.capacity));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::units::GIB;

    fn store(cache_blocks: u64) -> BackingStore {
        BackingStore::new(
            vec![DataNodeSpec { buffer_cache: cache_blocks * GIB }, DataNodeSpec { buffer_cache: cache_blocks * GIB }],
            TierLatencies::default(),
            Catalog::uniform(20 * GIB, GIB),
        )
    }

    #[test]
    fn catalog_tail_block() {
        let c = Catalog::uniform(5 * GIB / 2, GIB);
        assert_eq!(c.len(), 3);
        assert_eq!(c.size_of(BlockId(2)).unwrap(), GIB / 2);
        assert_eq!(c.total_bytes(), 5 * GIB / 2);
        assert!(c.size_of(BlockId(3)).is_err());
    }

    #[test]
    fn lru_hit_after_first_read() {
        let mut s = store(2);
        assert_eq!(s.read(BlockId(0)).unwrap(), TierHit::RemoteDisk);
        assert_eq!(s.read(BlockId(0)).unwrap(), TierHit::RemoteCache);
    }

    #[test]
    fn cyclic_scan_larger_than_cache_always_misses() {
        let mut s = store(2);
        // Even blocks all land on data node 0, which holds two of them.
        for _ in 0..3 {
            for id in [0, 2, 4] {
                assert_eq!(s.read(BlockId(id)).unwrap(), TierHit::RemoteDisk);
            }
        }
        s.check_invariants().unwrap();
    }

    #[test]
    fn lru_keeps_recently_used() {
        let mut s = store(2);
        s.read(BlockId(0)).unwrap();
        s.read(BlockId(2)).unwrap();
        s.read(BlockId(0)).unwrap();
        s.read(BlockId(4)).unwrap(); // evicts 2
        assert!(s.is_buffered(BlockId(0)));
        assert!(!s.is_buffered(BlockId(2)));
        assert_eq!(s.buffered_bytes(), vec![2 * GIB, 0]);
    }
}
