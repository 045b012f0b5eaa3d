//! End-to-end check of a system: related sets, one exploration per app
//! group, and aggregation of the violations.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write;
use std::time::{Duration, Instant};

use rayon::prelude::*;
use serde::Serialize;

use crate::depgraph::{analyze, handlers_of, RelatedSetAnalysis};
use crate::devmodel::{Model, SystemConfig};
use crate::engine::Engine;
use crate::error::Error;
use crate::explorer::{explore, replay, ExplorationConfig, Replayed, Trace, Violation};
use crate::properties::{compile, instantiate_properties, PropertyCatalog, Selection};

#[derive(Debug, Clone, Serialize)]
pub struct CheckOptions {
    pub exploration: ExplorationConfig,
    pub selection: Selection,
    /// App groups explored in parallel.
    pub jobs: usize,
    /// Check all apps as one group instead of per related set.
    pub monolithic: bool,
}

impl Default for CheckOptions {
    fn default() -> Self {
        CheckOptions {
            exploration: ExplorationConfig::default(),
            selection: Selection::All,
            jobs: 1,
            monolithic: false,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct GroupReport {
    pub apps: BTreeSet<String>,
    pub handlers: usize,
    pub states: u64,
    pub transitions: u64,
    pub violations: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct Report {
    pub notices: Vec<String>,
    /// Properties checked.
    pub properties: Vec<String>,
    pub groups: Vec<GroupReport>,
    /// Distinct by property and the set of apps involved, sorted.
    pub violations: Vec<Violation>,
    #[serde(skip)]
    pub elapsed: Duration,
}

impl Report {
    pub fn has_violations(&self) -> bool {
        !self.violations.is_empty()
    }

    pub fn states(&self) -> u64 {
        self.groups.iter().map(|g| g.states).sum()
    }

    pub fn render_text(&self) -> String {
        let mut out = String::new();
        for (i, g) in self.groups.iter().enumerate() {
            let apps: Vec<&str> = g.apps.iter().map(String::as_str).collect();
            let _ = writeln!(
                out,
                "group {i} [{}]: {} handler(s), {} state(s), {} transition(s), {} violation(s)",
                apps.join(", "),
                g.handlers,
                g.states,
                g.transitions,
                g.violations
            );
        }
        for v in &self.violations {
            let apps: Vec<&str> = v.apps.iter().map(String::as_str).collect();
            let apps = if apps.is_empty() { "none".to_string() } else { apps.join(", ") };
            let _ = writeln!(out, "\n{} (apps: {apps})", v.property);
            let _ = write!(out, "{}", v.trace);
        }
        let _ = writeln!(
            out,
            "\n{} violation(s) in {} group(s), {} state(s), {:.2?}",
            self.violations.len(),
            self.groups.len(),
            self.states(),
            self.elapsed
        );
        out
    }
}

/// App groups to explore: the related sets in terms of app instances, or
/// one group of every app with handlers.
pub fn app_groups(cfg: &SystemConfig, monolithic: bool) -> (RelatedSetAnalysis, Vec<BTreeSet<String>>) {
    let analysis = analyze(&handlers_of(cfg.apps.iter().map(|a| (a.id.as_str(), &*a.spec))));
    let groups = if monolithic {
        let all: BTreeSet<String> = analysis
            .graph
            .vertices
            .iter()
            .flat_map(|v| v.members.iter().map(|m| m.app.clone()))
            .collect();
        if all.is_empty() {
            Vec::new()
        } else {
            vec![all]
        }
    } else {
        analysis.app_groups.clone()
    };
    (analysis, groups)
}

/// Checks a configured system.
pub fn check_system(cfg: &SystemConfig, opts: &CheckOptions) -> Result<Report, Error> {
    check_with_catalog(cfg, PropertyCatalog::builtin(), opts)
}

pub fn check_with_catalog(
    cfg: &SystemConfig,
    catalog: &PropertyCatalog,
    opts: &CheckOptions,
) -> Result<Report, Error> {
    let start = Instant::now();
    let inst = instantiate_properties(catalog, cfg, &opts.selection)?;
    let (_, groups) = app_groups(cfg, opts.monolithic);

    let run_group = |group: &BTreeSet<String>| {
        let model = Model::new(cfg, Some(group));
        let props = compile(&inst.properties, &model);
        let result = explore(&model, &props, &opts.exploration);
        let report = GroupReport {
            apps: group.clone(),
            handlers: model.handlers.len(),
            states: result.states,
            transitions: result.transitions,
            violations: result.violations.len(),
        };
        (report, result.violations)
    };
    let results: Vec<(GroupReport, Vec<Violation>)> = if opts.jobs > 1 {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(opts.jobs)
            .build()
            .map_err(|e| Error::Attribution(e.to_string()))?;
        pool.install(|| groups.par_iter().map(run_group).collect())
    } else {
        groups.iter().map(run_group).collect()
    };

    let mut best: BTreeMap<(String, BTreeSet<String>), Violation> = BTreeMap::new();
    let mut reports = Vec::new();
    for (report, violations) in results {
        reports.push(report);
        for v in violations {
            let key = (v.property.clone(), v.apps.clone());
            match best.get(&key) {
                Some(old) if old.trace.steps.len() <= v.trace.steps.len() => {}
                _ => {
                    best.insert(key, v);
                }
            }
        }
    }
    Ok(Report {
        notices: inst.notices,
        properties: inst.properties.iter().map(|p| p.id.clone()).collect(),
        groups: reports,
        violations: best.into_values().collect(),
        elapsed: start.elapsed(),
    })
}

/// Replays a trace against the group of apps that produced it.
pub fn replay_trace(
    cfg: &SystemConfig,
    group: &BTreeSet<String>,
    opts: &CheckOptions,
    trace: &Trace,
) -> Result<Replayed, Error> {
    let inst = instantiate_properties(PropertyCatalog::builtin(), cfg, &opts.selection)?;
    let model = Model::new(cfg, Some(group));
    let props = compile(&inst.properties, &model);
    let mut engine = Engine::new(&model, &props, opts.exploration.failures);
    engine.max_steps = opts.exploration.max_steps;
    replay(&engine, trace)
}
