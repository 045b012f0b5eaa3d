//! Two-phase attribution of violations to a newly installed app.
//!
//! Phase 1 checks the app alone under every enumerated configuration; a
//! violation ratio at or above the threshold marks it malicious. Phase 2
//! checks it together with the apps already installed; a high ratio marks
//! a bad app, a partial one a misconfiguration with the safe
//! configurations listed.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::appdsl::{AppSpec, Multiplicity, ParamKind};
use crate::devmodel::SystemConfig;
use crate::error::Error;
use crate::pipeline::{check_system, CheckOptions};
use crate::properties::Selection;

/// Bounds on configuration enumeration.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct EnumerationLimits {
    /// Configurations kept when the full product is larger.
    pub cap: usize,
    /// Values sampled from each numeric parameter domain, evenly spaced
    /// and always including the minimum and maximum.
    pub numeric_samples: usize,
    pub seed: u64,
}

impl Default for EnumerationLimits {
    fn default() -> Self {
        EnumerationLimits {
            cap: 512,
            numeric_samples: 3,
            seed: 0,
        }
    }
}

/// Bindings and parameter values for one installation of an app.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize)]
pub struct ConfigDelta {
    pub bindings: BTreeMap<String, Vec<String>>,
    pub params: BTreeMap<String, String>,
}

impl fmt::Display for ConfigDelta {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut parts: Vec<String> = self
            .bindings
            .iter()
            .map(|(s, ds)| format!("{s}={}", ds.join("+")))
            .collect();
        parts.extend(self.params.iter().map(|(p, v)| format!("{p}={v}")));
        if parts.is_empty() {
            f.write_str("(empty)")
        } else {
            f.write_str(&parts.join(" "))
        }
    }
}

/// Choices along one dimension of the configuration space.
enum Dimension {
    Device { slot: String, devices: Vec<String> },
    Subset { slot: String, devices: Vec<String> },
    Param { name: String, values: Vec<String> },
}

impl Dimension {
    fn radix(&self) -> u128 {
        match self {
            Dimension::Device { devices, .. } => devices.len() as u128,
            Dimension::Subset { devices, .. } => (1u128 << devices.len()) - 1,
            Dimension::Param { values, .. } => values.len() as u128,
        }
    }

    fn apply(&self, i: u128, delta: &mut ConfigDelta) {
        match self {
            Dimension::Device { slot, devices } => {
                delta.bindings.insert(slot.clone(), vec![devices[i as usize].clone()]);
            }
            Dimension::Subset { slot, devices } => {
                let mask = i + 1;
                let chosen = devices
                    .iter()
                    .enumerate()
                    .filter(|(b, _)| mask >> b & 1 == 1)
                    .map(|(_, d)| d.clone())
                    .collect();
                delta.bindings.insert(slot.clone(), chosen);
            }
            Dimension::Param { name, values } => {
                delta.params.insert(name.clone(), values[i as usize].clone());
            }
        }
    }
}

fn sample_evenly<T: Clone>(values: &[T], n: usize) -> Vec<T> {
    if values.len() <= n || n < 2 {
        return if n < 2 && !values.is_empty() {
            vec![values[0].clone()]
        } else {
            values.to_vec()
        };
    }
    let last = values.len() - 1;
    let mut idx: Vec<usize> = (0..n).map(|i| (i * last + (n - 1) / 2) / (n - 1)).collect();
    idx.dedup();
    idx.into_iter().map(|i| values[i].clone()).collect()
}

/// Every configuration of `app` over the devices of `inventory`: one
/// compatible device per `one` slot, every nonempty subset of compatible
/// devices per `many` slot, sampled numeric parameters and full enum
/// domains. Beyond `limits.cap` configurations a seeded sample is taken in
/// which every choice of every dimension appears when the cap allows it.
pub fn enumerate_configs(
    app: &AppSpec,
    inventory: &SystemConfig,
    limits: &EnumerationLimits,
) -> Result<Vec<ConfigDelta>, Error> {
    let mut dims = Vec::new();
    for slot in &app.slots {
        let devices: Vec<String> = inventory
            .devices
            .iter()
            .filter(|d| d.capability == slot.capability)
            .map(|d| d.id.clone())
            .collect();
        if devices.is_empty() {
            return Err(Error::Attribution(format!(
                "slot `{}` of {} needs a {} device and the inventory has none",
                slot.name, app.name, slot.capability
            )));
        }
        dims.push(match slot.multiplicity {
            Multiplicity::One => Dimension::Device {
                slot: slot.name.clone(),
                devices,
            },
            Multiplicity::Many if devices.len() > 64 => {
                return Err(Error::Attribution(format!(
                    "slot `{}` has {} compatible devices; at most 64 are supported",
                    slot.name,
                    devices.len()
                )))
            }
            Multiplicity::Many => Dimension::Subset {
                slot: slot.name.clone(),
                devices,
            },
        });
    }
    for p in &app.params {
        let values = match &p.kind {
            ParamKind::Number(ns) => {
                let mut sorted = ns.clone();
                sorted.sort();
                sorted.dedup();
                sample_evenly(&sorted, limits.numeric_samples)
                    .into_iter()
                    .map(|n| n.to_string())
                    .collect()
            }
            ParamKind::Enum(vs) => vs.clone(),
        };
        dims.push(Dimension::Param {
            name: p.name.clone(),
            values,
        });
    }

    let radices: Vec<u128> = dims.iter().map(Dimension::radix).collect();
    let total = radices
        .iter()
        .try_fold(1u128, |acc, &r| acc.checked_mul(r))
        .unwrap_or(u128::MAX);
    let indices: Vec<Vec<u128>> = if total <= limits.cap as u128 {
        (0..total).map(|n| decode(n, &radices)).collect()
    } else {
        stratified(&radices, limits.cap, limits.seed)
    };
    Ok(indices
        .into_iter()
        .map(|idx| {
            let mut delta = ConfigDelta {
                bindings: BTreeMap::new(),
                params: BTreeMap::new(),
            };
            for (d, i) in dims.iter().zip(idx) {
                d.apply(i, &mut delta);
            }
            delta
        })
        .collect())
}

/// Mixed-radix digits of `n`, first dimension most significant.
fn decode(mut n: u128, radices: &[u128]) -> Vec<u128> {
    let mut out = vec![0; radices.len()];
    for (i, &r) in radices.iter().enumerate().rev() {
        out[i] = n % r;
        n /= r;
    }
    out
}

/// `cap` distinct index tuples. Each dimension cycles through its values
/// in a shuffled column, so every value of a dimension with at most `cap`
/// values is used; duplicates are replaced by random tuples.
fn stratified(radices: &[u128], cap: usize, seed: u64) -> Vec<Vec<u128>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let columns: Vec<Vec<u128>> = radices
        .iter()
        .map(|&r| {
            let mut col: Vec<u128> = if r <= cap as u128 {
                (0..cap as u128).map(|j| j % r).collect()
            } else {
                (0..cap).map(|_| rng.gen_range(0..r)).collect()
            };
            col.shuffle(&mut rng);
            col
        })
        .collect();
    let mut seen = BTreeSet::new();
    let mut out = Vec::with_capacity(cap);
    for j in 0..cap {
        let mut tuple: Vec<u128> = columns.iter().map(|c| c[j]).collect();
        let mut attempts = 0;
        while !seen.insert(tuple.clone()) && attempts < 64 {
            tuple = radices.iter().map(|&r| rng.gen_range(0..r)).collect();
            attempts += 1;
        }
        if attempts < 64 {
            out.push(tuple);
        }
    }
    out.sort();
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize)]
pub enum Verdict {
    Malicious,
    BadApp,
    Misconfiguration,
    Clean,
}

impl fmt::Display for Verdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Verdict::Malicious => "malicious",
            Verdict::BadApp => "bad-app",
            Verdict::Misconfiguration => "misconfiguration",
            Verdict::Clean => "clean",
        })
    }
}

/// Violating configurations over conclusive ones.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
pub struct Ratio {
    pub violating: usize,
    pub total: usize,
}

impl Ratio {
    pub fn value(&self) -> f64 {
        if self.total == 0 {
            0.0
        } else {
            self.violating as f64 / self.total as f64
        }
    }

    /// `self >= threshold`, computed without rounding.
    pub fn at_least(&self, threshold: f64) -> bool {
        self.total > 0 && self.violating as f64 >= threshold * self.total as f64
    }
}

impl fmt::Display for Ratio {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:.2}", self.value())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(tag = "outcome", rename_all = "lowercase")]
pub enum Outcome {
    Safe,
    Violating { properties: Vec<String> },
    Inconclusive { reason: String },
}

#[derive(Debug, Clone, Serialize)]
pub struct ConfigOutcome {
    pub config: ConfigDelta,
    pub outcome: Outcome,
}

#[derive(Debug, Clone, Serialize)]
pub struct AttributionVerdict {
    pub app: String,
    pub verdict: Verdict,
    pub phase1: Ratio,
    /// Absent when phase 1 decided.
    pub phase2: Option<Ratio>,
    pub phase1_outcomes: Vec<ConfigOutcome>,
    pub phase2_outcomes: Vec<ConfigOutcome>,
    /// Phase-2 safe configurations, for a misconfiguration.
    pub safe_configs: Vec<ConfigDelta>,
    pub seed: u64,
}

impl AttributionVerdict {
    pub fn verdict_line(&self) -> String {
        format!(
            "VERDICT {} {} phase1={} phase2={}",
            self.app,
            self.verdict,
            self.phase1,
            self.phase2.map_or("-".to_string(), |r| r.to_string())
        )
    }

    pub fn render_text(&self) -> String {
        let mut out = String::new();
        let table = |out: &mut String, name: &str, rows: &[ConfigOutcome]| {
            out.push_str(&format!("{name}:\n"));
            for r in rows {
                let o = match &r.outcome {
                    Outcome::Safe => "safe".to_string(),
                    Outcome::Violating { properties } => format!("violating {}", properties.join(",")),
                    Outcome::Inconclusive { reason } => format!("inconclusive ({reason})"),
                };
                out.push_str(&format!("  {}  {o}\n", r.config));
            }
        };
        table(&mut out, "phase 1", &self.phase1_outcomes);
        if !self.phase2_outcomes.is_empty() {
            table(&mut out, "phase 2", &self.phase2_outcomes);
        }
        if !self.safe_configs.is_empty() {
            out.push_str("safe configurations:\n");
            for c in &self.safe_configs {
                out.push_str(&format!("  {c}\n"));
            }
        }
        out.push_str(&self.verdict_line());
        out.push('\n');
        out
    }
}

#[derive(Debug, Clone)]
pub struct AttributionOptions {
    pub threshold: f64,
    pub limits: EnumerationLimits,
    /// Exploration settings and the properties checked in phase 2.
    pub check: CheckOptions,
    /// Properties checked in phase 1.
    pub phase1_selection: Selection,
}

impl Default for AttributionOptions {
    fn default() -> Self {
        AttributionOptions {
            threshold: 0.9,
            limits: EnumerationLimits::default(),
            check: CheckOptions::default(),
            phase1_selection: Selection::All,
        }
    }
}

/// Checks `app` installed as `id` with `delta` on top of `base`. A
/// configuration violates when some violation involves the app.
fn verify(
    base: &SystemConfig,
    app: &Arc<AppSpec>,
    id: &str,
    delta: &ConfigDelta,
    opts: &CheckOptions,
) -> Outcome {
    let mut cfg = base.clone();
    if let Err(e) = cfg.install(id, app.clone(), delta.bindings.clone(), delta.params.clone()) {
        return Outcome::Inconclusive { reason: e.to_string() };
    }
    match check_system(&cfg, opts) {
        Err(e) => Outcome::Inconclusive { reason: e.to_string() },
        Ok(report) => {
            let props: BTreeSet<String> = report
                .violations
                .iter()
                .filter(|v| v.apps.contains(id))
                .map(|v| v.property.clone())
                .collect();
            if props.is_empty() {
                Outcome::Safe
            } else {
                Outcome::Violating {
                    properties: props.into_iter().collect(),
                }
            }
        }
    }
}

fn ratio(outcomes: &[ConfigOutcome]) -> Ratio {
    let mut r = Ratio::default();
    for o in outcomes {
        match o.outcome {
            Outcome::Safe => r.total += 1,
            Outcome::Violating { .. } => {
                r.total += 1;
                r.violating += 1;
            }
            Outcome::Inconclusive { .. } => {}
        }
    }
    r
}

/// Verdict from the two ratios.
pub fn decide(phase1: Ratio, phase2: Option<Ratio>, threshold: f64) -> Verdict {
    if phase1.at_least(threshold) {
        return Verdict::Malicious;
    }
    match phase2 {
        Some(r) if r.at_least(threshold) => Verdict::BadApp,
        Some(r) if r.violating > 0 => Verdict::Misconfiguration,
        None if phase1.violating > 0 => Verdict::Misconfiguration,
        _ => Verdict::Clean,
    }
}

/// Attributes violations to `app`, a new app for the system `installed`
/// (its device inventory and previously installed apps).
pub fn attribute(
    app: &AppSpec,
    installed: &SystemConfig,
    opts: &AttributionOptions,
) -> Result<AttributionVerdict, Error> {
    let configs = enumerate_configs(app, installed, &opts.limits)?;
    let spec = Arc::new(app.clone());
    let mut id = app.name.clone();
    while installed.app(&id).is_some() {
        id.push('_');
    }
    let mut inventory = installed.clone();
    inventory.apps.clear();

    let phase1_opts = CheckOptions {
        selection: opts.phase1_selection.clone(),
        ..opts.check.clone()
    };
    let run = |base: &SystemConfig, o: &CheckOptions| -> Vec<ConfigOutcome> {
        configs
            .par_iter()
            .map(|c| ConfigOutcome {
                config: c.clone(),
                outcome: verify(base, &spec, &id, c, o),
            })
            .collect()
    };
    let phase1_outcomes = run(&inventory, &phase1_opts);
    let phase1 = ratio(&phase1_outcomes);
    let mut verdict = AttributionVerdict {
        app: app.name.clone(),
        verdict: Verdict::Clean,
        phase1,
        phase2: None,
        phase1_outcomes,
        phase2_outcomes: Vec::new(),
        safe_configs: Vec::new(),
        seed: opts.limits.seed,
    };
    if phase1.at_least(opts.threshold) {
        verdict.verdict = Verdict::Malicious;
        return Ok(verdict);
    }
    let joint = run(installed, &opts.check);
    let phase2_outcomes: Vec<ConfigOutcome> = joint
        .into_iter()
        .zip(&verdict.phase1_outcomes)
        .map(|(j, p1)| match (&j.outcome, &p1.outcome) {
            (Outcome::Safe, Outcome::Violating { .. }) => ConfigOutcome {
                config: j.config,
                outcome: p1.outcome.clone(),
            },
            (Outcome::Violating { properties }, Outcome::Violating { properties: alone }) => {
                let all: BTreeSet<String> = properties.iter().chain(alone).cloned().collect();
                ConfigOutcome {
                    config: j.config,
                    outcome: Outcome::Violating {
                        properties: all.into_iter().collect(),
                    },
                }
            }
            _ => j,
        })
        .collect();
    let phase2 = ratio(&phase2_outcomes);
    verdict.verdict = decide(phase1, Some(phase2), opts.threshold);
    if verdict.verdict == Verdict::Misconfiguration {
        verdict.safe_configs = phase2_outcomes
            .iter()
            .filter(|o| o.outcome == Outcome::Safe)
            .map(|o| o.config.clone())
            .collect();
    }
    verdict.phase2 = Some(phase2);
    verdict.phase2_outcomes = phase2_outcomes;
    Ok(verdict)
}
