//! Bounded depth-first exploration of external-event sequences.
//!
//! Each edge of the search is one external event run to quiescence (or to
//! the first violated property), for every combination of failure choices.
//! States are deduplicated at cascade boundaries.

mod interleave;
mod store;
mod trace;

use std::collections::{BTreeMap, BTreeSet};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::devmodel::{Model, SystemState};
use crate::engine::{Engine, Ext, FailureConfig, Finding, PrefixChooser, Recorder, TraceStep, EVENT_LOOP};
use crate::error::Error;
use crate::properties::CompiledProperty;

pub use interleave::interleaved_violations;
pub use store::{StateStore, StoreKind, DEFAULT_BITS, DEFAULT_HASHES};
pub use trace::{ExternalStep, Trace};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExplorationConfig {
    /// Maximum external events per run.
    pub max_events: usize,
    pub failures: FailureConfig,
    pub store: StoreKind,
    /// Handler executions allowed in one cascade before it is reported as
    /// an event loop.
    pub max_steps: usize,
    /// Parallel workers over the first external event.
    pub workers: usize,
}

impl Default for ExplorationConfig {
    fn default() -> Self {
        ExplorationConfig {
            max_events: 1,
            failures: FailureConfig {
                offline: false,
                comm: false,
                max_failures: 1,
            },
            store: StoreKind::Exact,
            max_steps: 64,
            workers: 1,
        }
    }
}

/// A property breach with the run that produced it.
#[derive(Debug, Clone, Serialize)]
pub struct Violation {
    pub property: String,
    pub description: String,
    pub trace: Trace,
    /// Apps that acted (commands, messages, requests, raised events,
    /// unsubscribes) in the cascade where the property failed.
    pub apps: BTreeSet<String>,
    /// State in which the property failed.
    #[serde(skip)]
    pub state: SystemState,
}

#[derive(Debug, Clone, Default, Serialize)]
pub struct ExplorationResult {
    /// One violation per property and set of apps involved, sorted.
    pub violations: Vec<Violation>,
    /// Distinct states recorded by the store.
    pub states: u64,
    /// Cascades executed.
    pub transitions: u64,
    /// Terminal nodes of the search tree.
    pub leaves: u64,
}

/// Position of a branch in depth-first order.
type Path = Vec<u32>;

struct Candidate {
    key: (usize, Path),
    finding: Finding,
    apps: BTreeSet<String>,
    steps: Vec<ExternalStep>,
    stop_after: Option<usize>,
    state: SystemState,
}

#[derive(Default)]
struct Local {
    best: BTreeMap<(String, BTreeSet<String>), Candidate>,
    transitions: u64,
    leaves: u64,
}

impl Local {
    fn offer(&mut self, c: Candidate) {
        let id = (c.finding.property.clone(), c.apps.clone());
        match self.best.get(&id) {
            Some(old) if old.key <= c.key => {}
            _ => {
                self.best.insert(id, c);
            }
        }
    }

    fn merge(mut self, other: Local) -> Local {
        self.transitions += other.transitions;
        self.leaves += other.leaves;
        for c in other.best.into_values() {
            self.offer(c);
        }
        self
    }
}

/// The current path of the search.
#[derive(Default)]
struct Walk {
    steps: Vec<ExternalStep>,
    path: Path,
}

struct Search<'a> {
    engine: Engine<'a>,
    sensors: Vec<usize>,
    store: StateStore,
    max_events: usize,
}

impl Search<'_> {
    fn dfs(&self, state: &SystemState, walk: &mut Walk, local: &mut Local) {
        if walk.steps.len() == self.max_events {
            local.leaves += 1;
            return;
        }
        let events = self.engine.external_events(state, &self.sensors);
        if events.is_empty() {
            local.leaves += 1;
            return;
        }
        for (ei, &ev) in events.iter().enumerate() {
            self.branch(state, ev, ei, walk, local);
        }
    }

    /// Explores one external event from `state` under every failure choice.
    fn branch(&self, state: &SystemState, ev: Ext, ei: usize, walk: &mut Walk, local: &mut Local) {
        let mut prefix = Vec::new();
        let mut ci = 0u32;
        loop {
            let mut next = state.clone();
            let mut chooser = PrefixChooser::new(prefix);
            let r = self.engine.run(&mut next, ev, &mut chooser, None, None);
            local.transitions += 1;
            walk.steps.push(ExternalStep {
                event: self.engine.name(ev),
                choices: chooser.taken.clone(),
            });
            walk.path.push(ei as u32);
            walk.path.push(ci);
            if !r.findings.is_empty() {
                local.leaves += 1;
                let stop_after = (!r.quiescent && r.findings[0].property != EVENT_LOOP).then_some(r.handlers);
                let apps: BTreeSet<String> = r
                    .apps
                    .iter()
                    .map(|&a| self.engine.model.apps[a].id.clone())
                    .collect();
                for finding in r.findings {
                    local.offer(Candidate {
                        key: (walk.steps.len(), walk.path.clone()),
                        finding,
                        apps: apps.clone(),
                        steps: walk.steps.clone(),
                        stop_after,
                        state: next.clone(),
                    });
                }
            } else if !self
                .store
                .insert_at(&next.canonical_bytes(self.engine.model), walk.steps.len() as u32)
            {
                self.dfs(&next, walk, local);
            }
            walk.path.truncate(walk.path.len() - 2);
            walk.steps.pop();
            match chooser.next_prefix() {
                Some(p) => prefix = p,
                None => break,
            }
            ci += 1;
        }
    }
}

/// Explores every sequence of up to `ec.max_events` external events from
/// the model's initial state. Violations are distinguished by property and
/// by the apps that acted in the failing cascade; each keeps its shortest
/// trace, ties going to the first in depth-first order.
pub fn explore(model: &Model, props: &[CompiledProperty], ec: &ExplorationConfig) -> ExplorationResult {
    let mut engine = Engine::new(model, props, ec.failures);
    engine.max_steps = ec.max_steps;
    let search = Search {
        sensors: engine.driven_devices(),
        engine,
        store: StateStore::new(ec.store),
        max_events: ec.max_events,
    };
    let init = model.initial_state();
    let mut local = Local::default();
    let initial_findings = search.engine.check_initial(&init);
    if !initial_findings.is_empty() {
        local.leaves = 1;
        for finding in initial_findings {
            local.offer(Candidate {
                key: (0, Vec::new()),
                finding,
                apps: BTreeSet::new(),
                steps: Vec::new(),
                stop_after: None,
                state: init.clone(),
            });
        }
    } else {
        search.store.insert_at(&init.canonical_bytes(model), 0);
        if ec.workers <= 1 || ec.max_events == 0 {
            search.dfs(&init, &mut Walk::default(), &mut local);
        } else {
            let events = search.engine.external_events(&init, &search.sensors);
            if events.is_empty() {
                local.leaves = 1;
            }
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(ec.workers)
                .build()
                .expect("thread pool");
            local = pool.install(|| {
                events
                    .par_iter()
                    .enumerate()
                    .map(|(ei, &ev)| {
                        let mut l = Local::default();
                        search.branch(&init, ev, ei, &mut Walk::default(), &mut l);
                        l
                    })
                    .reduce(Local::default, Local::merge)
                    .merge(local)
            });
        }
    }

    let violations = local
        .best
        .into_values()
        .map(|c| {
            let mut trace = Trace {
                steps: c.steps,
                stop_after: c.stop_after,
                lines: Vec::new(),
                property: Some(c.finding.property.clone()),
                description: Some(c.finding.description.clone()),
                group: model.apps.iter().map(|a| a.id.clone()).collect(),
            };
            let replayed = replay(&search.engine, &trace).expect("explored traces replay");
            trace.lines = replayed.lines;
            debug_assert_eq!(replayed.apps, c.apps);
            Violation {
                property: c.finding.property,
                description: c.finding.description,
                trace,
                apps: c.apps,
                state: c.state,
            }
        })
        .collect();
    ExplorationResult {
        violations,
        states: search.store.len(),
        transitions: local.transitions,
        leaves: local.leaves,
    }
}

/// Outcome of re-executing a trace.
#[derive(Debug, Clone)]
pub struct Replayed {
    pub state: SystemState,
    /// Properties violated where the trace ends.
    pub findings: Vec<Finding>,
    pub lines: Vec<TraceStep>,
    /// Apps that acted in the last cascade.
    pub apps: BTreeSet<String>,
}

/// Re-executes a trace. Fails with [`Error::Divergence`] if an event does
/// not resolve, the failure choices do not line up, the regenerated step
/// lines differ from the recorded ones, or the recorded property is not
/// violated at the end.
pub fn replay(engine: &Engine, trace: &Trace) -> Result<Replayed, Error> {
    let mut state = engine.model.initial_state();
    let mut rec = Recorder::default();
    let mut findings = engine.check_initial(&state);
    let mut apps = BTreeSet::new();
    let divergence = |step: usize, reason: String| Error::Divergence { step, reason };
    for (i, step) in trace.steps.iter().enumerate() {
        if !findings.is_empty() {
            return Err(divergence(i + 1, "run already violated a property".into()));
        }
        let ev = engine
            .resolve(&step.event)
            .ok_or_else(|| divergence(i + 1, format!("event `{}` does not exist", step.event)))?;
        if !engine
            .external_events(&state, &engine.driven_devices())
            .contains(&ev)
        {
            return Err(divergence(i + 1, format!("event `{}` is not enabled", step.event)));
        }
        let mut chooser = PrefixChooser::new(step.choices.clone());
        let last = i + 1 == trace.steps.len();
        let r = engine.run(
            &mut state,
            ev,
            &mut chooser,
            Some(&mut rec),
            if last { trace.stop_after } else { None },
        );
        if chooser.taken != step.choices {
            return Err(divergence(
                i + 1,
                format!("failure choices {:?} do not match {:?}", chooser.taken, step.choices),
            ));
        }
        findings = r.findings;
        apps = r.apps.iter().map(|&a| engine.model.apps[a].id.clone()).collect();
    }
    if !trace.lines.is_empty() {
        if let Some((a, b)) = rec.steps.iter().zip(&trace.lines).find(|(a, b)| a != b) {
            return Err(divergence(b.step, format!("expected `{b}`, got `{a}`")));
        }
        if rec.steps.len() != trace.lines.len() {
            return Err(divergence(
                rec.steps.len().min(trace.lines.len()) + 1,
                format!("{} step lines recorded, {} regenerated", trace.lines.len(), rec.steps.len()),
            ));
        }
    }
    if let Some(p) = &trace.property {
        if !findings.iter().any(|f| &f.property == p) {
            return Err(divergence(
                trace.steps.len(),
                format!("property {p} is not violated at the end of the trace"),
            ));
        }
    }
    Ok(Replayed {
        state,
        findings,
        lines: rec.steps,
        apps,
    })
}
