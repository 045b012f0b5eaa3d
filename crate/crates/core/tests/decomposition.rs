mod common;

use std::collections::BTreeSet;
use std::time::{Duration, Instant};

use homecheck::depgraph::handlers_of;
use homecheck::{analyze, check_system, CheckOptions, RelatedSet};

fn sets(v: &[RelatedSet]) -> BTreeSet<BTreeSet<usize>> {
    v.iter().map(|s| s.members.iter().copied().collect()).collect()
}

fn expect(v: &[&[usize]]) -> BTreeSet<BTreeSet<usize>> {
    v.iter().map(|s| s.iter().copied().collect()).collect()
}

#[test]
fn five_app_example_sets() {
    let start = Instant::now();
    let cfg = common::config("fiveapps");
    let a = analyze(&handlers_of(cfg.apps.iter().map(|a| (a.id.as_str(), &*a.spec))));
    assert!(start.elapsed() < Duration::from_secs(1));
    assert_eq!(a.graph.len(), 7);
    assert_eq!(sets(&a.initial), expect(&[&[0], &[1], &[3], &[5], &[2, 4], &[2, 6]]));
    assert_eq!(sets(&a.conflicts), expect(&[&[0, 1], &[1, 5], &[1, 2, 6]]));
    assert_eq!(sets(&a.final_sets), expect(&[&[3], &[2, 4], &[0, 1], &[1, 5], &[1, 2, 6]]));
    assert_eq!(a.total_handlers(), 7);
    assert_eq!(a.max_set_handlers(), 3);
}

#[test]
fn related_sets_never_exceed_the_system() {
    for name in common::config_names() {
        let cfg = common::config(&name);
        if cfg.apps.len() < 2 {
            continue;
        }
        let a = analyze(&handlers_of(cfg.apps.iter().map(|a| (a.id.as_str(), &*a.spec))));
        assert!(a.max_set_handlers() <= a.total_handlers(), "{name}");
        for s in a.final_sets.iter().chain(&a.repeats) {
            assert!(!s.members.is_empty());
        }
    }
}

/// Checking per related set finds the same violated properties as checking
/// every app together.
#[test]
fn decomposition_preserves_violated_properties() {
    for name in common::config_names() {
        let cfg = common::config(&name);
        if cfg.apps.len() < 2 {
            continue;
        }
        for k in 1..=2 {
            for failures in [false, true] {
                let mut opts = CheckOptions::default();
                opts.exploration.max_events = k;
                opts.exploration.failures.offline = failures;
                opts.exploration.failures.comm = failures;
                let split = check_system(&cfg, &opts).unwrap();
                opts.monolithic = true;
                let whole = check_system(&cfg, &opts).unwrap();
                let ids = |r: &homecheck::Report| -> BTreeSet<String> {
                    r.violations.iter().map(|v| v.property.clone()).collect()
                };
                assert_eq!(ids(&split), ids(&whole), "{name} K={k} failures={failures}");
            }
        }
    }
}
