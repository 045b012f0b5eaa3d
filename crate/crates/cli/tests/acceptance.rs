//! Acceptance checks. Prints one PASS/FAIL line per check and fails if any
//! check fails.

use std::collections::BTreeSet;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::time::{Duration, Instant};

use homecheck::appdsl::parse_apps_with;
use homecheck::attribution::{attribute, AttributionOptions, Verdict};
use homecheck::depgraph::handlers_of;
use homecheck::devmodel::Model;
use homecheck::engine::Engine;
use homecheck::explorer::{explore, interleaved_violations, replay, ExplorationConfig, StateStore, StoreKind};
use homecheck::properties::{compile, Selection};
use homecheck::{
    analyze, check_system, instantiate_properties, load_config, AppSpec, CapabilityCatalog, CheckOptions,
    PropertyCatalog, RelatedSet, Report, SystemConfig,
};
use homecheck_cli::ifttt;
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn core_fixtures() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../core/fixtures")
}

fn library() -> Vec<AppSpec> {
    let mut paths: Vec<PathBuf> = std::fs::read_dir(core_fixtures().join("apps"))
        .unwrap()
        .map(|e| e.unwrap().path())
        .collect();
    paths.sort();
    paths
        .iter()
        .flat_map(|p| parse_apps_with(&std::fs::read_to_string(p).unwrap(), CapabilityCatalog::builtin()).unwrap())
        .collect()
}

fn config(name: &str) -> SystemConfig {
    let src = std::fs::read_to_string(core_fixtures().join(format!("configs/{name}.cfg"))).unwrap();
    load_config(&src, &library()).unwrap()
}

fn check(cfg: &SystemConfig, k: usize, failures: bool) -> Report {
    let mut opts = CheckOptions::default();
    opts.exploration.max_events = k;
    opts.exploration.failures.offline = failures;
    opts.exploration.failures.comm = failures;
    check_system(cfg, &opts).unwrap()
}

fn ids(r: &Report) -> BTreeSet<String> {
    r.violations.iter().map(|v| v.property.clone()).collect()
}

fn sets(v: &[RelatedSet]) -> BTreeSet<BTreeSet<usize>> {
    v.iter().map(|s| s.members.clone()).collect()
}

fn expect(v: &[&[usize]]) -> BTreeSet<BTreeSet<usize>> {
    v.iter().map(|s| s.iter().copied().collect()).collect()
}

fn dependency_sets() {
    let cfg = config("fiveapps");
    let start = Instant::now();
    let a = analyze(&handlers_of(cfg.apps.iter().map(|a| (a.id.as_str(), &*a.spec))));
    let took = start.elapsed();
    assert_eq!(a.graph.len(), 7);
    assert_eq!(sets(&a.initial), expect(&[&[0], &[1], &[3], &[5], &[2, 4], &[2, 6]]));
    assert_eq!(sets(&a.conflicts), expect(&[&[0, 1], &[1, 5], &[1, 2, 6]]));
    assert_eq!(sets(&a.final_sets), expect(&[&[3], &[2, 4], &[0, 1], &[1, 5], &[1, 2, 6]]));
    assert!(took < Duration::from_secs(1), "{took:?}");
}

fn alice_scenario() {
    let cfg = config("alice");
    let r = check(&cfg, 1, false);
    assert_eq!(r.violations.len(), 1);
    let v = &r.violations[0];
    assert_eq!(v.property, "door-locked-away");
    let at = |entity: &str, action: &str| {
        v.trace
            .lines
            .iter()
            .position(|l| l.entity == entity && l.action == action)
            .unwrap_or_else(|| panic!("missing [{entity}] {action}"))
    };
    let order = [
        at("alicePresence", "external presence=not_present"),
        at("location", "mode=Away"),
        at("unlock", "command frontDoor.lock=unlocked"),
        at("frontDoor", "lock=unlocked"),
    ];
    assert!(order.windows(2).all(|w| w[0] < w[1]));

    let inst = instantiate_properties(PropertyCatalog::builtin(), &cfg, &Selection::All).unwrap();
    let model = Model::new(&cfg, None);
    let props = compile(&inst.properties, &model);
    let engine = Engine::new(&model, &props, Default::default());
    let replayed = replay(&engine, &v.trace).unwrap();
    assert_eq!(replayed.state.canonical_bytes(&model), v.state.canonical_bytes(&model));
    assert_eq!(replayed.state, v.state);
}

fn conflicting_and_repeated_commands() {
    let conflict = check(&config("conflict"), 1, false);
    assert!(ids(&conflict).contains("conflict-free"));
    let v = conflict.violations.iter().find(|v| v.property == "conflict-free").unwrap();
    assert_eq!(v.trace.steps[0].event.to_string(), "frontContact.contact=open");
    let repeat = check(&config("repeat"), 1, false);
    assert!(ids(&repeat).contains("repeat-free"));
}

fn failure_injection() {
    let cfg = config("makeitso");
    let clean = check(&cfg, 1, false);
    assert!(!ids(&clean).contains("door-locked-away"));
    let mut opts = CheckOptions::default();
    opts.exploration.failures.offline = true;
    let offline = check_system(&cfg, &opts).unwrap();
    assert!(offline.violations.iter().any(|v| v.property == "door-locked-away"
        && v.trace.lines.iter().any(|l| l.entity == "bobPresence" && l.action == "goes offline")));
    assert!(ids(&offline).contains("robustness"));
}

fn interleaving_oracle() {
    let mut equal = 0;
    for name in ["alice", "repeat", "makeitso", "conflict"] {
        let cfg = config(name);
        assert!(cfg.apps.len() <= 2);
        let inst = instantiate_properties(PropertyCatalog::builtin(), &cfg, &Selection::All).unwrap();
        let model = Model::new(&cfg, None);
        let props = compile(&inst.properties, &model);
        let mut same = true;
        for k in 1..=3 {
            let ec = ExplorationConfig {
                max_events: k,
                ..Default::default()
            };
            let seq: BTreeSet<String> = explore(&model, &props, &ec)
                .violations
                .into_iter()
                .map(|v| v.property)
                .collect();
            let all = interleaved_violations(&model, &props, k);
            if seq != all {
                same = false;
                println!("      note: {name} K={k}: sequential {seq:?}, interleaved {all:?}");
            }
        }
        equal += usize::from(same);
    }
    assert!(equal >= 3, "only {equal} micro systems agree");
}

fn attribution_verdicts() {
    let inventory = config("inventory");
    let lib = library();
    let app = |n: &str| lib.iter().find(|a| a.name == n).unwrap().clone();
    for name in ["ModeUnlocker", "SmokeTester", "DoorLogger", "DoorNotifier"] {
        let v = attribute(&app(name), &inventory, &AttributionOptions::default()).unwrap();
        assert_eq!(v.phase1.violating, v.phase1.total, "{name}");
        assert_eq!(v.verdict, Verdict::Malicious, "{name}");
    }
    let v = attribute(&app("VirtualThermostat"), &config("thermostat"), &AttributionOptions::default()).unwrap();
    assert_eq!(v.verdict, Verdict::Misconfiguration);
    assert!(v.safe_configs.iter().any(|c| {
        let o = &c.bindings["outlets"];
        o.iter().all(|d| d.starts_with("heater")) || o.iter().all(|d| d.starts_with("ac"))
    }));
}

fn ifttt_rules() {
    let dir = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("fixtures/ifttt");
    let rules = std::fs::read_to_string(dir.join("rules.txt")).unwrap();
    let home = std::fs::read_to_string(dir.join("home.cfg")).unwrap();
    let imported = ifttt::import(&rules, &home, &[]).unwrap();
    assert_eq!(imported.rules.len(), 10);
    let opts = CheckOptions {
        selection: Selection::parse("siren-on-intrusion,siren-off-no-threat,door-locked-away,call-on-intrusion"),
        ..Default::default()
    };
    let r = check_system(&imported.config, &opts).unwrap();
    let classes = ids(&r);
    assert_eq!(classes.len(), 4, "{classes:?}");
    assert_eq!(r.violations.len(), 7);
}

fn bitstate_store() {
    let exact = StateStore::new(StoreKind::Exact);
    let bits = StateStore::new(StoreKind::Bitstate {
        bits: 1 << 20,
        hashes: 3,
    });
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let (mut n, mut false_seen) = (0u32, 0u32);
    while n < 10_000 {
        let mut s = [0u8; 32];
        rng.fill_bytes(&mut s);
        if exact.insert(&s) {
            continue;
        }
        n += 1;
        false_seen += u32::from(bits.insert(&s));
    }
    assert!(f64::from(false_seen) / f64::from(n) < 0.01);

    for name in ["alice", "makeitso", "household", "conflict"] {
        let cfg = config(name);
        let inst = instantiate_properties(PropertyCatalog::builtin(), &cfg, &Selection::All).unwrap();
        let model = Model::new(&cfg, None);
        let props = compile(&inst.properties, &model);
        let mut ec = ExplorationConfig {
            max_events: 3,
            ..Default::default()
        };
        ec.failures.offline = true;
        ec.failures.comm = true;
        let exact: BTreeSet<_> = explore(&model, &props, &ec)
            .violations
            .into_iter()
            .map(|v| (v.property, v.apps))
            .collect();
        ec.store = StoreKind::bitstate();
        let engine = Engine::new(&model, &props, ec.failures);
        for v in explore(&model, &props, &ec).violations {
            assert!(exact.contains(&(v.property.clone(), v.apps.clone())));
            assert_eq!(replay(&engine, &v.trace).unwrap().state, v.state);
        }
    }
}

fn performance() {
    let good = config("goodgroup");
    assert_eq!((good.apps.len(), good.devices.len()), (2, 7));
    for (k, limit) in [(5, 10), (7, 120)] {
        let start = Instant::now();
        check(&good, k, true);
        let took = start.elapsed();
        println!("      goodgroup K={k}: {took:.2?}");
        assert!(took < Duration::from_secs(limit));
    }
    let house = config("household");
    assert_eq!((house.apps.len(), house.devices.len()), (5, 10));
    let start = Instant::now();
    check(&house, 6, true);
    let took = start.elapsed();
    println!("      household K=6: {took:.2?}");
    assert!(took < Duration::from_secs(600));
}

fn decomposition_reduction() {
    for name in ["alice", "conflict", "repeat", "makeitso", "fiveapps", "goodgroup", "household"] {
        let cfg = config(name);
        let a = analyze(&handlers_of(cfg.apps.iter().map(|a| (a.id.as_str(), &*a.spec))));
        assert!(a.max_set_handlers() <= a.total_handlers(), "{name}");
    }
    let cfg = config("fiveapps");
    let a = analyze(&handlers_of(cfg.apps.iter().map(|a| (a.id.as_str(), &*a.spec))));
    assert_eq!((a.max_set_handlers(), a.total_handlers()), (3, 7));
}

fn main() {
    let checks: [(&str, fn()); 10] = [
        ("dependency sets of the five-app example", dependency_sets),
        ("door unlocked after leaving home", alice_scenario),
        ("conflicting and repeated commands", conflicting_and_repeated_commands),
        ("failure injection", failure_injection),
        ("sequential vs interleaving oracle", interleaving_oracle),
        ("attribution verdicts", attribution_verdicts),
        ("trigger-action rule import", ifttt_rules),
        ("bitstate store", bitstate_store),
        ("desk-scale performance", performance),
        ("decomposition reduction", decomposition_reduction),
    ];
    std::panic::set_hook(Box::new(|_| {}));
    let mut failed = 0;
    for (name, f) in checks {
        match catch_unwind(AssertUnwindSafe(f)) {
            Ok(()) => println!("PASS {name}"),
            Err(e) => {
                failed += 1;
                let msg = e
                    .downcast_ref::<String>()
                    .cloned()
                    .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                    .unwrap_or_default();
                println!("FAIL {name}: {msg}");
            }
        }
    }
    println!("{} of {} acceptance checks passed", checks.len() - failed, checks.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
