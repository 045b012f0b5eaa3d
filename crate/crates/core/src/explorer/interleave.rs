//! Brute-force search over every interleaving of external events and
//! pending handler invocations, without failures. Meant as a cross-check
//! of the sequential explorer on small systems.

use std::collections::BTreeSet;

use crate::devmodel::{CascadeLog, Event, Model, SystemState};
use crate::engine::{Engine, Ext, NoFailures};
use crate::properties::{CompiledProperty, Phase};

/// A handler invocation waiting to run, tagged with the external event
/// whose cascade it belongs to.
type Pending = (usize, Option<Event>, usize);

struct Interleaver<'a> {
    engine: Engine<'a>,
    sensors: Vec<usize>,
    max_events: usize,
    found: BTreeSet<String>,
    visited: BTreeSet<String>,
}

impl Interleaver<'_> {
    /// Moves queued events into the pending invocations of cascade `origin`.
    fn dispatch(&self, state: &mut SystemState, pending: &mut Vec<Pending>, origin: usize) {
        while let Some(ev) = state.queue.pop_front() {
            for n in self.engine.model.notifications(state, ev) {
                pending.push((n.handler, Some(n.event), origin));
            }
        }
    }

    /// `logs[i]` holds what the cascade of the i-th external event did.
    fn search(&mut self, state: SystemState, pending: Vec<Pending>, logs: Vec<CascadeLog>) {
        let mut sorted = pending.clone();
        sorted.sort_by_key(|(h, e, o)| (*h, e.map(|e| (e.device, e.slot, e.value)), *o));
        let key = format!("{:?}|{sorted:?}|{logs:?}", state.canonical_bytes(self.engine.model));
        if !self.visited.insert(key) {
            return;
        }
        if pending.is_empty() {
            let mut violated = false;
            for log in &logs {
                for f in self.engine.check(Phase::Quiescent, &state, log) {
                    self.found.insert(f.property);
                    violated = true;
                }
            }
            if violated {
                return;
            }
        }
        if logs.len() < self.max_events {
            for ev in self.engine.external_events(&state, &self.sensors) {
                if matches!(ev, Ext::Tick) {
                    continue;
                }
                let origin = logs.len();
                let mut next = state.clone();
                let mut ls = logs.clone();
                let mut log = CascadeLog::default();
                let direct = self.engine.apply_external(&mut next, ev, &mut NoFailures, &mut log);
                ls.push(log);
                let mut p = pending.clone();
                p.extend(direct.into_iter().map(|h| (h, None, origin)));
                self.dispatch(&mut next, &mut p, origin);
                self.search(next, p, ls);
            }
        }
        for i in 0..pending.len() {
            let mut p = pending.clone();
            let (h, trig, origin) = p.remove(i);
            let mut next = state.clone();
            let mut ls = logs.clone();
            if !next.disabled[h] {
                self.engine.execute(&mut next, h, trig, &mut NoFailures, &mut ls[origin]);
                let findings = self.engine.check(Phase::Handler, &next, &ls[origin]);
                if !findings.is_empty() {
                    self.found.extend(findings.into_iter().map(|f| f.property));
                    continue;
                }
            }
            self.dispatch(&mut next, &mut p, origin);
            self.search(next, p, ls);
        }
    }
}

/// Property ids violated in some interleaving of at most `max_events`
/// external events (timer ticks excluded).
pub fn interleaved_violations(model: &Model, props: &[CompiledProperty], max_events: usize) -> BTreeSet<String> {
    let engine = Engine::new(model, props, Default::default());
    let mut search = Interleaver {
        sensors: engine.driven_devices(),
        engine,
        max_events,
        found: BTreeSet::new(),
        visited: BTreeSet::new(),
    };
    let init = model.initial_state();
    let initial = search.engine.check_initial(&init);
    if initial.is_empty() {
        search.search(init, Vec::new(), Vec::new());
    } else {
        search.found.extend(initial.into_iter().map(|f| f.property));
    }
    search.found
}
