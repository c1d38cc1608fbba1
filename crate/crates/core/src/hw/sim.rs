use std::collections::BTreeMap;

use serde::Serialize;

use super::{CoreId, EnergyLedger, HardwareConfig, HwError, SimTask};

pub type TaskId = u64;

/// A schedulable capacity in the modeled machine.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
pub enum Resource {
    Core(CoreId),
    Vault(usize),
    Link,
    Offchip,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Completion {
    pub id: TaskId,
    pub submit_time: f64,
    pub finish_time: f64,
}

#[derive(Debug, Clone)]
struct Leg {
    res: usize,
    remaining: f64,
    total: f64,
}

#[derive(Debug, Clone)]
struct ActiveTask {
    submit: f64,
    legs: Vec<Leg>,
}

/// Aggregate serviced work per resource class.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct ServiceTotals {
    pub cpu_ops: f64,
    pub pim_ops: f64,
    pub vault_bytes: f64,
    pub link_bytes: f64,
    pub offchip_bytes: f64,
}

// Legs within this relative distance of the next event finish with it.
const FINISH_TOLERANCE: f64 = 1e-9;

/// Fluid max-min fair-sharing simulator. Every resource is split equally
/// among the task legs that still have demand on it; legs of one task drain
/// concurrently and independently, and a task completes when its last leg
/// drains. Between epoch boundaries the simulator advances event by event,
/// so completion times are exact rather than rounded to the epoch.
#[derive(Debug, Clone)]
pub struct Simulator {
    config: HardwareConfig,
    capacity: Vec<f64>,
    users: Vec<usize>,
    serviced: Vec<f64>,
    epoch_serviced: Vec<f64>,
    now: f64,
    next_id: TaskId,
    active: BTreeMap<TaskId, ActiveTask>,
    ready: Vec<Completion>,
    ledger: EnergyLedger,
}

impl Simulator {
    pub fn new(config: HardwareConfig) -> Result<Self, HwError> {
        config.validate()?;
        let n_pim = config.n_pim_cores();
        let mut capacity = Vec::new();
        capacity.extend(std::iter::repeat_n(config.cpu_rate, config.n_cpu_cores));
        capacity.extend(std::iter::repeat_n(config.pim_rate, n_pim));
        capacity.extend(std::iter::repeat_n(config.vault_bw, config.n_vaults));
        capacity.push(config.internal_link_bw);
        capacity.push(config.offchip_bw);
        let n = capacity.len();
        Ok(Simulator {
            config,
            capacity,
            users: vec![0; n],
            serviced: vec![0.0; n],
            epoch_serviced: vec![0.0; n],
            now: 0.0,
            next_id: 0,
            active: BTreeMap::new(),
            ready: Vec::new(),
            ledger: EnergyLedger::default(),
        })
    }

    pub fn config(&self) -> &HardwareConfig {
        &self.config
    }

    pub fn now(&self) -> f64 {
        self.now
    }

    pub fn active_count(&self) -> usize {
        self.active.len() + self.ready.len()
    }

    pub fn is_idle(&self) -> bool {
        self.active_count() == 0
    }

    fn index(&self, r: Resource) -> Option<usize> {
        let c = &self.config;
        let n_pim = c.n_pim_cores();
        match r {
            Resource::Core(CoreId::Cpu(i)) if i < c.n_cpu_cores => Some(i),
            Resource::Core(CoreId::Pim { vault, slot }) if vault < c.n_vaults && slot < c.pim_cores_per_vault => {
                Some(c.n_cpu_cores + vault * c.pim_cores_per_vault + slot)
            }
            Resource::Vault(v) if v < c.n_vaults => Some(c.n_cpu_cores + n_pim + v),
            Resource::Link => Some(c.n_cpu_cores + n_pim + c.n_vaults),
            Resource::Offchip => Some(c.n_cpu_cores + n_pim + c.n_vaults + 1),
            _ => None,
        }
    }

    fn resource(&self, idx: usize) -> Resource {
        let c = &self.config;
        let n_pim = c.n_pim_cores();
        if idx < c.n_cpu_cores {
            Resource::Core(CoreId::Cpu(idx))
        } else if idx < c.n_cpu_cores + n_pim {
            let p = idx - c.n_cpu_cores;
            Resource::Core(CoreId::Pim { vault: p / c.pim_cores_per_vault, slot: p % c.pim_cores_per_vault })
        } else if idx < c.n_cpu_cores + n_pim + c.n_vaults {
            Resource::Vault(idx - c.n_cpu_cores - n_pim)
        } else if idx == c.n_cpu_cores + n_pim + c.n_vaults {
            Resource::Link
        } else {
            Resource::Offchip
        }
    }

    pub fn resources(&self) -> impl Iterator<Item = Resource> + '_ {
        (0..self.capacity.len()).map(|i| self.resource(i))
    }

    pub fn capacity(&self, r: Resource) -> Option<f64> {
        self.index(r).map(|i| self.capacity[i])
    }

    /// Overrides one resource's capacity (what-if experiments, fault
    /// injection). Zero is allowed and stalls dependent work.
    pub fn throttle(&mut self, r: Resource, capacity: f64) -> Result<(), HwError> {
        if !(capacity.is_finite() && capacity >= 0.0) {
            return Err(HwError::InvalidConfig(format!("capacity {capacity}")));
        }
        let i = self.index(r).ok_or_else(|| HwError::UnknownResource(format!("{r:?}")))?;
        self.capacity[i] = capacity;
        Ok(())
    }

    /// Cumulative serviced amount on one resource.
    pub fn serviced(&self, r: Resource) -> f64 {
        self.index(r).map_or(0.0, |i| self.serviced[i])
    }

    /// Amount serviced on one resource during the most recent epoch.
    pub fn epoch_serviced(&self, r: Resource) -> f64 {
        self.index(r).map_or(0.0, |i| self.epoch_serviced[i])
    }

    pub fn service_totals(&self) -> ServiceTotals {
        let mut t = ServiceTotals::default();
        for (i, amount) in self.serviced.iter().enumerate() {
            match self.resource(i) {
                Resource::Core(CoreId::Cpu(_)) => t.cpu_ops += amount,
                Resource::Core(CoreId::Pim { .. }) => t.pim_ops += amount,
                Resource::Vault(_) => t.vault_bytes += amount,
                Resource::Link => t.link_bytes += amount,
                Resource::Offchip => t.offchip_bytes += amount,
            }
        }
        t
    }

    pub fn energy_report(&self) -> EnergyLedger {
        self.ledger.clone()
    }

    /// Remaining demand of an active task on `r`, if any.
    pub fn remaining(&self, id: TaskId, r: Resource) -> Option<f64> {
        let idx = self.index(r)?;
        let task = self.active.get(&id)?;
        Some(task.legs.iter().filter(|l| l.res == idx).map(|l| l.remaining).sum())
    }

    pub fn submit(&mut self, task: SimTask) -> Result<TaskId, HwError> {
        task.demand.validate()?;
        let core = self
            .index(Resource::Core(task.core))
            .ok_or_else(|| HwError::UnknownResource(task.core.to_string()))?;
        let mut legs = Vec::new();
        let mut push = |res: usize, amount: f64| {
            if amount > 0.0 {
                legs.push(Leg { res, remaining: amount, total: amount });
            }
        };
        push(core, task.demand.compute_ops);
        for (&vault, &bytes) in &task.demand.internal_bytes {
            let idx = self
                .index(Resource::Vault(vault))
                .ok_or_else(|| HwError::InvalidDemand(format!("vault {vault} does not exist")))?;
            push(idx, bytes);
        }
        push(self.index(Resource::Link).unwrap(), task.demand.link_bytes);
        push(self.index(Resource::Offchip).unwrap(), task.demand.offchip_bytes);

        let id = self.next_id;
        self.next_id += 1;
        if legs.is_empty() {
            self.ready.push(Completion { id, submit_time: self.now, finish_time: self.now });
        } else {
            for leg in &legs {
                self.users[leg.res] += 1;
            }
            self.active.insert(id, ActiveTask { submit: self.now, legs });
        }
        Ok(id)
    }

    /// Advances the clock by exactly `dt`, returning tasks that completed
    /// within the epoch (in completion order, ties by id).
    pub fn step_epoch(&mut self, dt: f64) -> Result<Vec<Completion>, HwError> {
        if !(dt.is_finite() && dt > 0.0) {
            return Err(HwError::InvalidEpoch(dt));
        }
        self.epoch_serviced.iter_mut().for_each(|s| *s = 0.0);
        let limit = self.now + dt;
        let (done, _) = self.advance(limit, false);
        Ok(done)
    }

    /// Advances to the next instant at which any task completes, but not past
    /// `limit`. Returns an empty list when `limit` is reached first.
    pub fn advance_to_next_completion(&mut self, limit: f64) -> Result<Vec<Completion>, HwError> {
        let (done, progressed) = self.advance(limit, true);
        if done.is_empty() && !progressed && !self.active.is_empty() {
            return Err(HwError::StalledSimulation { time: self.now });
        }
        Ok(done)
    }

    /// Steps epochs until no task is active and returns the final clock.
    pub fn run_until_idle(&mut self, dt: f64) -> Result<f64, HwError> {
        self.run_until_idle_collect(dt).map(|(t, _)| t)
    }

    /// As [`Self::run_until_idle`], also returning every completion.
    pub fn run_until_idle_collect(&mut self, dt: f64) -> Result<(f64, Vec<Completion>), HwError> {
        let mut all = Vec::new();
        while !self.is_idle() {
            let before: f64 = self.serviced.iter().sum();
            let done = self.step_epoch(dt)?;
            let progressed = self.serviced.iter().sum::<f64>() > before || !done.is_empty();
            all.extend(done);
            if !progressed {
                return Err(HwError::StalledSimulation { time: self.now });
            }
        }
        Ok((self.now, all))
    }

    fn advance(&mut self, limit: f64, stop_on_completion: bool) -> (Vec<Completion>, bool) {
        let mut done = std::mem::take(&mut self.ready);
        let mut progressed = false;
        if stop_on_completion && !done.is_empty() {
            return (done, true);
        }
        while self.now < limit {
            if self.active.is_empty() {
                self.now = limit;
                break;
            }
            let rates: Vec<f64> = self
                .capacity
                .iter()
                .zip(&self.users)
                .map(|(&cap, &n)| if n == 0 { 0.0 } else { cap / n as f64 })
                .collect();
            let dt_min = self
                .active
                .values()
                .flat_map(|t| &t.legs)
                .filter(|l| rates[l.res] > 0.0)
                .map(|l| l.remaining / rates[l.res])
                .fold(f64::INFINITY, f64::min);
            if dt_min.is_infinite() {
                // no demanded resource has capacity
                if stop_on_completion {
                    break;
                }
                self.now = limit;
                break;
            }
            let event = self.now + dt_min <= limit;
            let step = if event { dt_min } else { limit - self.now };
            let cutoff = step * (1.0 + FINISH_TOLERANCE);
            let mut finished = Vec::new();
            let mut completed = Vec::new();
            for (&id, task) in self.active.iter_mut() {
                task.legs.retain_mut(|leg| {
                    let rate = rates[leg.res];
                    if rate == 0.0 {
                        return true;
                    }
                    let t_leg = leg.remaining / rate;
                    let served = if event && t_leg <= cutoff { leg.remaining } else { (rate * step).min(leg.remaining) };
                    self.serviced[leg.res] += served;
                    self.epoch_serviced[leg.res] += served;
                    leg.remaining -= served;
                    if served > 0.0 {
                        progressed = true;
                    }
                    if leg.remaining <= 0.0 {
                        finished.push((leg.res, leg.total));
                        false
                    } else {
                        true
                    }
                });
                if task.legs.is_empty() {
                    completed.push((id, task.submit));
                }
            }
            self.now = if event { self.now + dt_min } else { limit };
            for (res, total) in finished {
                self.users[res] -= 1;
                self.book(res, total);
            }
            for (id, submit_time) in completed {
                self.active.remove(&id);
                done.push(Completion { id, submit_time, finish_time: self.now });
            }
            if stop_on_completion && !done.is_empty() {
                break;
            }
        }
        (done, progressed)
    }

    fn book(&mut self, res: usize, amount: f64) {
        let cfg = &self.config;
        match self.resource(res) {
            Resource::Core(CoreId::Cpu(_)) => self.ledger.book_cpu(amount, cfg),
            Resource::Core(CoreId::Pim { .. }) => self.ledger.book_pim(amount, cfg),
            Resource::Vault(_) => self.ledger.book_vault(amount, cfg),
            Resource::Link => self.ledger.book_link(amount, cfg),
            Resource::Offchip => self.ledger.book_offchip(amount, cfg),
        }
    }
}
