use serde::Serialize;

use super::HardwareConfig;

/// Serviced amounts and their energy, per category. Energy is booked when
/// a demand leg fully drains, as `amount × unit cost`.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct EnergyLedger {
    pub offchip_bytes: f64,
    /// Vault-local plus interconnect bytes.
    pub internal_bytes: f64,
    pub link_bytes: f64,
    pub cpu_ops: f64,
    pub pim_ops: f64,
    pub offchip_pj: f64,
    pub internal_pj: f64,
    pub cpu_compute_pj: f64,
    pub pim_compute_pj: f64,
}

impl EnergyLedger {
    pub fn total_pj(&self) -> f64 {
        self.offchip_pj + self.internal_pj + self.cpu_compute_pj + self.pim_compute_pj
    }

    pub(crate) fn book_offchip(&mut self, bytes: f64, cfg: &HardwareConfig) {
        self.offchip_bytes += bytes;
        self.offchip_pj += bytes * cfg.energy_offchip;
    }

    pub(crate) fn book_vault(&mut self, bytes: f64, cfg: &HardwareConfig) {
        self.internal_bytes += bytes;
        self.internal_pj += bytes * cfg.energy_internal;
    }

    pub(crate) fn book_link(&mut self, bytes: f64, cfg: &HardwareConfig) {
        self.link_bytes += bytes;
        self.book_vault(bytes, cfg);
    }

    pub(crate) fn book_cpu(&mut self, ops: f64, cfg: &HardwareConfig) {
        self.cpu_ops += ops;
        self.cpu_compute_pj += ops * cfg.energy_cpu_op;
    }

    pub(crate) fn book_pim(&mut self, ops: f64, cfg: &HardwareConfig) {
        self.pim_ops += ops;
        self.pim_compute_pj += ops * cfg.energy_pim_op;
    }
}
