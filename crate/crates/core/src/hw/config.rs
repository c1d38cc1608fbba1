use serde::Serialize;

use super::HwError;

/// Modeled resource topology: host CPU cores behind an off-chip link, and a
/// 3D-stacked memory split into vaults, each with its own bandwidth and
/// logic-layer cores. Bandwidths are bytes/s, rates ops/s, energies pJ.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HardwareConfig {
    pub n_cpu_cores: usize,
    pub n_vaults: usize,
    pub pim_cores_per_vault: usize,
    pub vault_bw: f64,
    pub internal_link_bw: f64,
    pub offchip_bw: f64,
    pub cpu_rate: f64,
    pub pim_rate: f64,
    pub energy_offchip: f64,
    pub energy_internal: f64,
    pub energy_cpu_op: f64,
    pub energy_pim_op: f64,
    pub txn_cache_hit_rate: f64,
    /// Reporting epoch of the simulator, seconds.
    pub epoch: f64,
}

impl Default for HardwareConfig {
    fn default() -> Self {
        HardwareConfig {
            n_cpu_cores: 8,
            n_vaults: 16,
            pim_cores_per_vault: 1,
            vault_bw: 8e9,
            internal_link_bw: 64e9,
            offchip_bw: 32e9,
            cpu_rate: 1e9,
            pim_rate: 2.5e8,
            energy_offchip: 20.0,
            energy_internal: 4.0,
            energy_cpu_op: 100.0,
            energy_pim_op: 50.0,
            txn_cache_hit_rate: 0.9,
            epoch: 100e-6,
        }
    }
}

impl HardwareConfig {
    pub fn validate(&self) -> Result<(), HwError> {
        let counts = [
            ("n_cpu_cores", self.n_cpu_cores),
            ("n_vaults", self.n_vaults),
            ("pim_cores_per_vault", self.pim_cores_per_vault),
        ];
        for (name, v) in counts {
            if v == 0 {
                return Err(HwError::InvalidConfig(format!("{name} must be positive")));
            }
        }
        let reals = [
            ("vault_bw", self.vault_bw),
            ("internal_link_bw", self.internal_link_bw),
            ("offchip_bw", self.offchip_bw),
            ("cpu_rate", self.cpu_rate),
            ("pim_rate", self.pim_rate),
            ("energy_offchip", self.energy_offchip),
            ("energy_internal", self.energy_internal),
            ("energy_cpu_op", self.energy_cpu_op),
            ("energy_pim_op", self.energy_pim_op),
            ("epoch", self.epoch),
        ];
        for (name, v) in reals {
            if !(v.is_finite() && v > 0.0) {
                return Err(HwError::InvalidConfig(format!("{name} must be positive and finite, got {v}")));
            }
        }
        if !(0.0..=1.0).contains(&self.txn_cache_hit_rate) {
            return Err(HwError::InvalidConfig(format!(
                "txn_cache_hit_rate must be in [0,1], got {}",
                self.txn_cache_hit_rate
            )));
        }
        if self.pim_rate > self.cpu_rate {
            return Err(HwError::InvalidConfig(format!(
                "pim_rate ({}) must not exceed cpu_rate ({})",
                self.pim_rate, self.cpu_rate
            )));
        }
        Ok(())
    }

    pub fn n_pim_cores(&self) -> usize {
        self.n_vaults * self.pim_cores_per_vault
    }

    pub fn aggregate_internal_bw(&self) -> f64 {
        self.vault_bw * self.n_vaults as f64
    }
}
