mod common;

use common::policies;
use proptest::prelude::*;
use ztflow::policy::{attach_time_constraint, compile_from_workflow, evaluate, Method, PolicyDocument, TimeWindow};

proptest! {
    #![proptest_config(ProptestConfig { cases: 1000, failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn evaluation_matches_rule_oracle((p, (u, rc)) in (policies::policy(), policies::request())) {
        let d = evaluate(&p, &rc);
        prop_assert_eq!(d.is_allow(), policies::decide(&p, &u, &rc));
        prop_assert_eq!(d.rules_evaluated, p.allow_rules.len());
        if let Some(i) = d.matched_rule_index {
            prop_assert_eq!(p.allow_rules[i].user.as_str(), u.as_str());
        }
    }

    #[test]
    fn unmatched_identity_is_denied((mut p, (u, rc)) in (policies::policy(), policies::request())) {
        p.allow_rules.retain(|r| r.user.as_str() != u);
        prop_assert!(!evaluate(&p, &rc).is_allow());
    }

    #[test]
    fn time_constraints_only_restrict(
        (p, (_, rc), pick, lo, hi) in (policies::policy(), policies::request(), any::<prop::sample::Index>(), 0u8..24, 0u8..24)
    ) {
        prop_assume!(!p.allow_rules.is_empty());
        let user = p.allow_rules[pick.index(p.allow_rules.len())].user.clone();
        let narrowed = attach_time_constraint(&p, &user, TimeWindow::new(lo, hi, "UTC").unwrap()).unwrap();
        if evaluate(&narrowed, &rc).is_allow() {
            prop_assert!(evaluate(&p, &rc).is_allow());
        }
    }

    #[test]
    fn evaluation_is_deterministic((p, (_, rc)) in (policies::policy(), policies::request())) {
        prop_assert_eq!(evaluate(&p, &rc), evaluate(&p.clone(), &rc.clone()));
    }

    #[test]
    fn json_round_trip_keeps_decisions((p, (_, rc)) in (policies::policy(), policies::request())) {
        let back = PolicyDocument::from_json(&p.to_json()).unwrap();
        prop_assert_eq!(&back, &p);
        prop_assert_eq!(evaluate(&back, &rc), evaluate(&p, &rc));
    }

    #[test]
    fn compilation_is_sound_and_complete(g in common::dag(1, 6), hour in 0u8..24) {
        let p = compile_from_workflow(&g, Method::Post, common::TEMPLATE).unwrap();
        let names = g.agent_names();
        for s in &names {
            for d in &names {
                for m in Method::ALL {
                    prop_assert_eq!(common::allowed(&p, s, d, m, hour), common::edge_oracle(&g, s, d, m));
                }
            }
        }
    }
}
