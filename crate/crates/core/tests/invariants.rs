mod common;

use homecheck::appdsl::{parse_app_with, Stmt};
use homecheck::depgraph::{conflicting_pairs, handlers_of, prune_subsets};
use homecheck::{analyze, extract_io_events, render_app, AppSpec, CapabilityCatalog, CapabilityKind};
use proptest::prelude::*;

#[test]
fn rendered_apps_parse_back() {
    for app in common::library() {
        let text = render_app(&app);
        let back = parse_app_with(&text, CapabilityCatalog::builtin()).unwrap();
        assert_eq!(back, app, "{}", app.name);
        assert_eq!(render_app(&back), text);
    }
}

#[test]
fn output_and_input_attributes_belong_to_fitting_capabilities() {
    let catalog = CapabilityCatalog::builtin();
    for app in common::library() {
        for io in extract_io_events(&app) {
            for p in &io.outputs {
                let caps: Vec<_> = catalog.iter().filter(|c| c.attribute(&p.attribute).is_some()).collect();
                assert!(
                    caps.iter()
                        .any(|c| matches!(c.kind, CapabilityKind::Actuator | CapabilityKind::Both | CapabilityKind::Sink)
                            || c.kind.is_external()),
                    "{}.{}: {p:?}",
                    app.name,
                    io.handler
                );
            }
            for p in &io.inputs {
                let readable = catalog
                    .iter()
                    .any(|c| c.attribute(&p.attribute).is_some() && c.kind.is_subscribable());
                assert!(readable || p.attribute == "time" || p.attribute == "app", "{p:?}");
            }
        }
    }
}

#[test]
fn related_sets_cover_every_edge_and_conflict() {
    for name in common::config_names() {
        let cfg = common::config(&name);
        let a = analyze(&handlers_of(cfg.apps.iter().map(|a| (a.id.as_str(), &*a.spec))));
        let covered = |u: usize, v: usize| {
            a.final_sets
                .iter()
                .any(|s| s.members.contains(&u) && s.members.contains(&v))
        };
        for &(u, v) in &a.graph.edges {
            assert!(covered(u, v), "{name}: edge {u}->{v}");
        }
        for (u, v) in conflicting_pairs(&a.graph) {
            assert!(covered(u, v), "{name}: conflict {u},{v}");
        }
        assert_eq!(prune_subsets(&a.final_sets), a.final_sets, "{name}");
    }
}

fn shuffle_bodies(app: &AppSpec, seed: &[usize]) -> AppSpec {
    fn permute(stmts: &mut [Stmt], seed: &[usize], at: &mut usize) {
        let n = stmts.len();
        for i in (1..n).rev() {
            let j = seed.get(*at).copied().unwrap_or(0) % (i + 1);
            *at += 1;
            stmts.swap(i, j);
        }
        for s in stmts.iter_mut() {
            if let Stmt::Block(inner) = s {
                permute(inner, seed, at);
            }
        }
    }
    let mut out = app.clone();
    let mut at = 0;
    for h in &mut out.handlers {
        permute(&mut h.body, seed, &mut at);
    }
    out
}

proptest! {
    #[test]
    fn io_events_ignore_statement_order(seed in proptest::collection::vec(0usize..16, 0..32)) {
        for app in common::library() {
            let shuffled = shuffle_bodies(&app, &seed);
            prop_assert_eq!(extract_io_events(&app), extract_io_events(&shuffled));
        }
    }

    #[test]
    fn analysis_ignores_app_statement_order(seed in proptest::collection::vec(0usize..16, 0..32)) {
        let cfg = common::config("household");
        let plain = analyze(&handlers_of(cfg.apps.iter().map(|a| (a.id.as_str(), &*a.spec))));
        let shuffled: Vec<(String, AppSpec)> =
            cfg.apps.iter().map(|a| (a.id.clone(), shuffle_bodies(&a.spec, &seed))).collect();
        let other = analyze(&handlers_of(shuffled.iter().map(|(id, s)| (id.as_str(), s))));
        prop_assert_eq!(plain.final_sets, other.final_sets);
        prop_assert_eq!(plain.app_groups, other.app_groups);
    }
}
