use proptest::prelude::*;
use verimap_core::plan::{InputRef, VerificationSpec};
use verimap_core::{parse_plan, topological_order, validate_plan, Plan, PlanNode};

fn dag() -> impl Strategy<Value = Plan> {
    (1usize..=10).prop_flat_map(|n| {
        (
            Just(n),
            prop::collection::vec((0..n, 0..n), 0..=3 * n),
            prop::collection::vec(any::<bool>(), n),
            prop::collection::vec("[a-z ]{0,12}", n),
        )
            .prop_map(|(n, pairs, judge, text)| {
                let mut edges: Vec<(String, String)> = pairs
                    .into_iter()
                    .filter(|(a, b)| a != b)
                    .map(|(a, b)| (a.min(b), a.max(b)))
                    .map(|(a, b)| (format!("s{a}"), format!("s{b}")))
                    .collect();
                edges.dedup();
                let nodes = (0..n)
                    .map(|i| {
                        let vf = if judge[i] {
                            VerificationSpec::judge("j", format!("criterion {}", text[i]))
                        } else {
                            VerificationSpec::executable("e", format!("assert outputs['o{i}'] is not None"))
                        };
                        PlanNode::new(format!("s{i}"), format!("step {i}: {}", text[i]))
                            .with_inputs([InputRef::UserTask])
                            .with_outputs([format!("o{i}")])
                            .with_verification([vf])
                    })
                    .collect();
                Plan::new(nodes, edges)
            })
    })
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 300, failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn serialize_parse_round_trip(plan in dag()) {
        let text = plan.to_json_string();
        let back = parse_plan(&text).unwrap();
        prop_assert_eq!(&back, &plan);
        let fenced = format!("```json\n{text}\n```");
        prop_assert_eq!(parse_plan(&fenced).unwrap(), plan);
    }

    #[test]
    fn topological_order_respects_edges(plan in dag()) {
        let order = topological_order(&plan).unwrap();
        prop_assert_eq!(order.len(), plan.nodes.len());
        let pos = |id: &str| order.iter().position(|o| o == id).unwrap();
        for (a, b) in &plan.edges {
            prop_assert!(pos(a) < pos(b), "{} before {}", a, b);
        }
        prop_assert_eq!(topological_order(&plan).unwrap(), order);
    }

    #[test]
    fn reversed_edge_closes_a_cycle(plan in dag()) {
        prop_assume!(!plan.edges.is_empty());
        let mut edges = plan.edges.clone();
        let (a, b) = edges[0].clone();
        edges.push((b, a));
        let cyclic = Plan::new(plan.nodes.clone(), edges);
        prop_assert!(topological_order(&cyclic).is_err());
        prop_assert!(!validate_plan(&cyclic).ok);
    }
}
