use serde::{Deserialize, Serialize};

use super::SimError;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NodeSpec {
    pub node_id: String,
    pub total_m: u64,
    /// OS and headroom memory, always counted as used.
    pub reserved: u64,
    /// RAMdisk size; upper bound for the storage tier.
    pub ramdisk_max: u64,
    pub cores: u32,
}

impl NodeSpec {
    pub fn validate(&self) -> Result<(), SimError> {
        let bad = |m: &str| Err(SimError::Config(format!("node {}: {m}", self.node_id)));
        if self.total_m == 0 || self.ramdisk_max == 0 || self.cores == 0 {
            return bad("total_m, ramdisk_max and cores must be positive");
        }
        if self.reserved + self.ramdisk_max > self.total_m {
            return bad("reserved + ramdisk_max exceeds total_m");
        }
        Ok(())
    }
}

/// Memory ledger of one compute node.
///
/// `exec_used` is the full execution demand; whatever does not fit in
/// physical memory shows up as `swap_used`, so
/// `exec_used + storage_used + reserved + free == total_m + swap_used`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeState {
    pub exec_used: u64,
    pub storage_capacity: u64,
    pub storage_used: u64,
    pub free: u64,
    pub swap_used: u64,
    pub slowdown: f64,
    pub failed: bool,
}

impl NodeState {
    pub fn empty(spec: &NodeSpec, storage_capacity: u64) -> Self {
        let mut s = Self {
            exec_used: 0,
            storage_capacity,
            storage_used: 0,
            free: 0,
            swap_used: 0,
            slowdown: 1.0,
            failed: false,
        };
        s.rebalance(spec);
        s
    }

    /// Recomputes `free` and `swap_used` from the demand fields.
    pub fn rebalance(&mut self, spec: &NodeSpec) {
        let demand = self.exec_used + self.storage_used + spec.reserved;
        if demand <= spec.total_m {
            self.free = spec.total_m - demand;
            self.swap_used = 0;
        } else {
            self.free = 0;
            self.swap_used = demand - spec.total_m;
        }
    }

    /// Resident memory, never above `total_m`.
    pub fn mem_used(&self, spec: &NodeSpec) -> u64 {
        spec.total_m - self.free
    }

    pub fn check(&self, spec: &NodeSpec) -> Result<(), String> {
        let lhs = self.exec_used as u128 + self.storage_used as u128 + spec.reserved as u128 + self.free as u128;
        let rhs = spec.total_m as u128 + self.swap_used as u128;
        if lhs != rhs {
            return Err(format!("{}: ledger {lhs} != {rhs}", spec.node_id));
        }
        if self.swap_used > 0 && self.free > 0 {
            return Err(format!("{}: swap with free memory", spec.node_id));
        }
        if self.storage_used > self.storage_capacity || self.storage_capacity > spec.ramdisk_max {
            return Err(format!(
                "{}: storage used {} capacity {} max {}",
                spec.node_id, self.storage_used, self.storage_capacity, spec.ramdisk_max
            ));
        }
        if !(self.slowdown >= 1.0) {
            return Err(format!("{}: slowdown {}", spec.node_id, self.slowdown));
        }
        Ok(())
    }
}

/// Total memory in use over physical memory. Swapped-out execution memory
/// counts, so values above 1 signal pressure.
pub fn utilization(state: &NodeState, spec: &NodeSpec) -> f64 {
    (state.exec_used + state.storage_used + spec.reserved) as f64 / spec.total_m as f64
}
