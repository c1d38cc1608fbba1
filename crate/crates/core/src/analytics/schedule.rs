use std::collections::{BTreeMap, HashMap, VecDeque};

use serde::Serialize;

use super::ChunkTask;
use crate::hw::{CoreId, HardwareConfig, HwError, SimTask, Simulator, TaskDemand};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum SchedulerMode {
    /// Home vault's PIM cores first; idle cores steal from the longest queue.
    LocalityFirst,
    NoSteal,
    /// Round-robin over CPU cores.
    Cpu,
}

impl std::str::FromStr for SchedulerMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "locality_first" => Ok(SchedulerMode::LocalityFirst),
            "no_steal" => Ok(SchedulerMode::NoSteal),
            "cpu" => Ok(SchedulerMode::Cpu),
            other => Err(format!("unknown scheduler mode {other:?}")),
        }
    }
}

pub fn pim_cores(hw: &HardwareConfig) -> Vec<CoreId> {
    (0..hw.n_vaults)
        .flat_map(|vault| (0..hw.pim_cores_per_vault).map(move |slot| CoreId::Pim { vault, slot }))
        .collect()
}

pub fn cpu_cores(hw: &HardwareConfig) -> Vec<CoreId> {
    (0..hw.n_cpu_cores).map(CoreId::Cpu).collect()
}

/// Standalone time of `demand` on `core`: the slowest of its legs.
pub fn solo_time(demand: &TaskDemand, core: CoreId, hw: &HardwareConfig) -> f64 {
    let rate = if core.is_pim() { hw.pim_rate } else { hw.cpu_rate };
    let mut t = demand.compute_ops / rate;
    for bytes in demand.internal_bytes.values() {
        t = t.max(bytes / hw.vault_bw);
    }
    t.max(demand.link_bytes / hw.internal_link_bw).max(demand.offchip_bytes / hw.offchip_bw)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Schedule {
    /// Core per task, indexed like the input.
    pub assignment: Vec<CoreId>,
    /// Execution order of task indices on each core.
    pub order: BTreeMap<CoreId, Vec<usize>>,
    pub steals: usize,
    /// Makespan if every task ran at its solo speed.
    pub estimated_makespan: f64,
}

/// Assigns chunk tasks to `cores`. Deterministic for a given input order.
/// Panics if `cores` is empty.
pub fn schedule(tasks: &[ChunkTask], cores: &[CoreId], mode: SchedulerMode, hw: &HardwareConfig) -> Schedule {
    assert!(!cores.is_empty(), "schedule needs at least one core");
    let mut queues: Vec<VecDeque<usize>> = vec![VecDeque::new(); cores.len()];
    match mode {
        SchedulerMode::Cpu => {
            for i in 0..tasks.len() {
                queues[i % cores.len()].push_back(i);
            }
        }
        SchedulerMode::LocalityFirst | SchedulerMode::NoSteal => {
            let mut by_vault: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
            for (pos, core) in cores.iter().enumerate() {
                if let Some(v) = core.vault() {
                    by_vault.entry(v).or_default().push(pos);
                }
            }
            let mut next: HashMap<usize, usize> = HashMap::new();
            for (i, t) in tasks.iter().enumerate() {
                let pos = match by_vault.get(&t.vault_id) {
                    Some(slots) => {
                        let n = next.entry(t.vault_id).or_insert(0);
                        *n += 1;
                        slots[(*n - 1) % slots.len()]
                    }
                    None => t.chunk_id % cores.len(),
                };
                queues[pos].push_back(i);
            }
        }
    }

    let mut assignment = vec![cores[0]; tasks.len()];
    let mut order: BTreeMap<CoreId, Vec<usize>> = BTreeMap::new();
    let mut free_at = vec![0.0f64; cores.len()];
    let mut retired = vec![false; cores.len()];
    let mut steals = 0;
    let mut makespan = 0.0f64;
    loop {
        let Some(pos) = (0..cores.len())
            .filter(|&p| !retired[p])
            .min_by(|&a, &b| free_at[a].total_cmp(&free_at[b]).then(a.cmp(&b)))
        else {
            break;
        };
        let task = match queues[pos].pop_front() {
            Some(t) => Some(t),
            None if mode == SchedulerMode::LocalityFirst => {
                let victim = (0..cores.len())
                    .filter(|&p| !queues[p].is_empty())
                    .max_by(|&a, &b| queues[a].len().cmp(&queues[b].len()).then(b.cmp(&a)));
                victim.and_then(|v| {
                    steals += 1;
                    queues[v].pop_back()
                })
            }
            None => None,
        };
        match task {
            Some(t) => {
                let core = cores[pos];
                assignment[t] = core;
                order.entry(core).or_default().push(t);
                free_at[pos] += solo_time(&tasks[t].demand_on(core), core, hw);
                makespan = makespan.max(free_at[pos]);
            }
            None => retired[pos] = true,
        }
    }
    Schedule { assignment, order, steals, estimated_makespan: makespan }
}

/// Runs a schedule on a fresh simulator, each core executing its tasks one
/// after another. Returns the modeled makespan.
pub fn simulate_schedule(sched: &Schedule, tasks: &[ChunkTask], hw: &HardwareConfig) -> Result<f64, HwError> {
    let mut sim = Simulator::new(hw.clone())?;
    let mut pending: BTreeMap<CoreId, VecDeque<usize>> =
        sched.order.iter().map(|(c, ts)| (*c, ts.iter().copied().collect())).collect();
    let mut running = HashMap::new();
    for (core, queue) in pending.iter_mut() {
        if let Some(t) = queue.pop_front() {
            running.insert(sim.submit(SimTask::new(tasks[t].demand_on(*core), *core))?, *core);
        }
    }
    while !running.is_empty() {
        for done in sim.advance_to_next_completion(f64::INFINITY)? {
            let Some(core) = running.remove(&done.id) else { continue };
            if let Some(t) = pending.get_mut(&core).and_then(VecDeque::pop_front) {
                running.insert(sim.submit(SimTask::new(tasks[t].demand_on(core), core))?, core);
            }
        }
    }
    Ok(sim.now())
}
