use serde::{Deserialize, Serialize};

use super::block::Payload;

/// Linear cost model: a flat base, a per-byte charge on the payload and a
/// charge per storage slot the payload occupies.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GasModel {
    pub base_cost: u64,
    pub per_byte_cost: u64,
    pub per_storage_slot_cost: u64,
    pub slot_size: u64,
    pub block_gas_limit: u64,
}

impl Default for GasModel {
    /// Calibrated so a nominal registration lands near 3.3% and a vote
    /// near 0.2% of the block limit.
    fn default() -> Self {
        GasModel { base_cost: 21_000, per_byte_cost: 16, per_storage_slot_cost: 36_763, slot_size: 32, block_gas_limit: 30_000_000 }
    }
}

impl GasModel {
    /// Name of the first non-positive field, if any.
    pub fn invalid_field(&self) -> Option<&'static str> {
        [
            ("base_cost", self.base_cost),
            ("per_byte_cost", self.per_byte_cost),
            ("per_storage_slot_cost", self.per_storage_slot_cost),
            ("slot_size", self.slot_size),
            ("block_gas_limit", self.block_gas_limit),
        ]
        .into_iter()
        .find(|&(_, v)| v == 0)
        .map(|(name, _)| name)
    }

    pub fn compute(&self, payload_len: usize, persistent_bytes: usize) -> u64 {
        let slots = (persistent_bytes as u64).div_ceil(self.slot_size);
        self.base_cost + self.per_byte_cost * payload_len as u64 + self.per_storage_slot_cost * slots
    }

    pub fn for_payload(&self, payload: &Payload) -> u64 {
        let len = payload.to_bytes().len();
        self.compute(len, payload.persistent_bytes(len))
    }

    pub fn fraction(&self, gas: u64) -> f64 {
        gas as f64 / self.block_gas_limit as f64
    }
}
