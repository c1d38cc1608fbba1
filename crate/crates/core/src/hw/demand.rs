use std::collections::BTreeMap;
use std::fmt;

use serde::Serialize;

use super::HwError;

/// The resource bill of one unit of work. Amounts drain concurrently once
/// the work is submitted to the simulator.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct TaskDemand {
    pub compute_ops: f64,
    /// Bytes moved through each vault's local bandwidth.
    pub internal_bytes: BTreeMap<usize, f64>,
    /// Bytes crossing the shared vault-to-vault interconnect.
    pub link_bytes: f64,
    pub offchip_bytes: f64,
}

impl TaskDemand {
    pub fn compute(ops: f64) -> Self {
        TaskDemand { compute_ops: ops, ..Default::default() }
    }

    pub fn offchip(ops: f64, bytes: f64) -> Self {
        TaskDemand { compute_ops: ops, offchip_bytes: bytes, ..Default::default() }
    }

    pub fn vault(ops: f64, vault: usize, bytes: f64) -> Self {
        let mut d = TaskDemand::compute(ops);
        if bytes != 0.0 {
            d.internal_bytes.insert(vault, bytes);
        }
        d
    }

    pub fn is_zero(&self) -> bool {
        self.compute_ops == 0.0
            && self.link_bytes == 0.0
            && self.offchip_bytes == 0.0
            && self.internal_bytes.values().all(|b| *b == 0.0)
    }

    pub fn total_internal_bytes(&self) -> f64 {
        self.internal_bytes.values().fold(0.0, |a, b| a + b)
    }

    pub fn add(&mut self, other: &TaskDemand) {
        self.compute_ops += other.compute_ops;
        self.link_bytes += other.link_bytes;
        self.offchip_bytes += other.offchip_bytes;
        for (v, b) in &other.internal_bytes {
            *self.internal_bytes.entry(*v).or_default() += b;
        }
    }

    pub fn validate(&self) -> Result<(), HwError> {
        let check = |what: &str, v: f64| {
            if v.is_finite() && v >= 0.0 {
                Ok(())
            } else {
                Err(HwError::InvalidDemand(format!("{what} = {v}")))
            }
        };
        check("compute_ops", self.compute_ops)?;
        check("link_bytes", self.link_bytes)?;
        check("offchip_bytes", self.offchip_bytes)?;
        for (vault, b) in &self.internal_bytes {
            check(&format!("internal_bytes[{vault}]"), *b)?;
        }
        Ok(())
    }
}

/// Where a task's compute demand executes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
pub enum CoreId {
    Cpu(usize),
    Pim { vault: usize, slot: usize },
}

impl CoreId {
    pub fn is_pim(self) -> bool {
        matches!(self, CoreId::Pim { .. })
    }

    pub fn vault(self) -> Option<usize> {
        match self {
            CoreId::Pim { vault, .. } => Some(vault),
            CoreId::Cpu(_) => None,
        }
    }
}

impl fmt::Display for CoreId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CoreId::Cpu(i) => write!(f, "cpu{i}"),
            CoreId::Pim { vault, slot } => write!(f, "pim{vault}.{slot}"),
        }
    }
}

/// A demand bound to the core that executes its compute.
#[derive(Debug, Clone, PartialEq)]
pub struct SimTask {
    pub demand: TaskDemand,
    pub core: CoreId,
}

impl SimTask {
    pub fn new(demand: TaskDemand, core: CoreId) -> Self {
        SimTask { demand, core }
    }
}
