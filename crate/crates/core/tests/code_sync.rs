use aad_core::code_sync::{
    generate, generate_unchecked, parse, parse_script, sync, sync_with_ancestor, ChangeItem, ChangeOrigin, SyncError,
};
use aad_core::model::{Edge, GraphEdit, Node, NodeKind, PortRef, TopologyGraph};
use aad_core::testkit::GraphGen;
use aad_core::Value;
use proptest::prelude::*;
use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn writer() -> TopologyGraph {
    TopologyGraph::new("writer")
        .with_node(Node::new("start", NodeKind::Start).at(0.0, 0.0))
        .with_node(Node::new("draft", NodeKind::LlmCall).with_config("prompt", "Write about {payload}"))
        .with_node(Node::new("polish", NodeKind::Prompt).with_config("template", "Draft:\n{payload}"))
        .with_node(Node::new("end", NodeKind::End).at(400.0, 0.0))
        .with_edge(("start", "out"), ("draft", "in"))
        .with_edge(("draft", "out"), ("polish", "in"))
        .with_edge(("polish", "out"), ("end", "in"))
}

#[test]
fn generation_is_deterministic_and_ordered() {
    let a = generate(&writer()).unwrap();
    let b = generate(&writer()).unwrap();
    assert_eq!(a, b);
    let order: Vec<&str> = a
        .lines()
        .filter_map(|l| l.strip_prefix("#aad node "))
        .map(|l| l.split(' ').next().unwrap())
        .collect();
    assert_eq!(order, ["start", "draft", "polish", "end"]);
    assert!(a.contains("  template: <<EOT\nDraft:\n{payload}\nEOT\n"));
}

#[test]
fn invalid_graphs_are_not_generated() {
    let g = TopologyGraph::new("broken").with_node(Node::new("start", NodeKind::Start));
    assert_eq!(generate(&g).unwrap_err().code(), "InvalidGraph");
}

#[test]
fn wire_to_undeclared_node_reports_its_line() {
    let text = generate(&writer()).unwrap();
    let broken = text.replace("#aad wire polish.out -> end.in", "#aad wire polish.out -> nowhere.in");
    let line = broken.lines().position(|l| l.contains("nowhere")).unwrap() + 1;
    assert_eq!(
        parse(&broken).unwrap_err(),
        SyncError::SchemaError {
            line,
            message: "wire references undeclared node `nowhere`".into()
        }
    );
}

#[test]
fn bad_values_are_rejected() {
    let text = generate(&writer()).unwrap();
    let bad_json = text.replace("  prompt: \"Write about {payload}\"", "  prompt: Write about");
    assert_eq!(parse(&bad_json).unwrap_err().code(), "ParseError");
    let bad_type = text.replace("  prompt: \"Write about {payload}\"", "  prompt: 12");
    assert_eq!(parse(&bad_type).unwrap_err().code(), "SchemaError");
    assert_eq!(parse("no header here\n").unwrap_err().code(), "ParseError");
}

#[test]
fn removing_a_block_and_its_wires_removes_the_node() {
    let text = generate(&writer()).unwrap();
    let mut edited = String::new();
    let mut skipping = false;
    for line in text.split_inclusive('\n') {
        if line.starts_with("#aad node polish ") {
            skipping = true;
        }
        let drop = skipping || line.contains("polish.");
        if skipping && line == "#aad end\n" {
            skipping = false;
        }
        if !drop {
            edited.push_str(line);
        }
    }
    edited.push_str("#aad wire draft.out -> end.in\n");
    let result = sync(&writer(), &edited).unwrap();
    assert_eq!(
        result.text_edits(),
        vec![
            &GraphEdit::RemoveNode { id: "polish".into() },
            &GraphEdit::Connect {
                edge: Edge::new(("draft", "out"), ("end", "in"))
            },
        ]
    );
    assert!(result.conflicts.is_empty());
}

#[test]
fn graph_move_and_text_template_both_land() {
    let original = writer();
    let mv = GraphEdit::MoveNode {
        id: "draft".into(),
        x: 120.0,
        y: -40.5,
    };
    let set = GraphEdit::SetConfig {
        id: "polish".into(),
        key: "template".into(),
        value: Value::from("Final: {payload}"),
    };
    let moved = original.apply_edit(&mv).unwrap();
    let text = generate(&original.apply_edit(&set).unwrap()).unwrap();
    let result = sync(&moved, &text).unwrap();
    let expected = original.apply_edit(&mv).unwrap().apply_edit(&set).unwrap();
    assert_eq!(result.graph, expected);
    assert_eq!(result.text_edits(), vec![&set]);
    assert!(result.script.contains("#aad node draft kind=LlmCall at=(120,-40.5)\n"));
    assert!(result.changes.iter().any(|c| c.origin == ChangeOrigin::FromGraph
        && matches!(&c.item, ChangeItem::TextRegion { anchor, .. } if anchor == "node draft")));
}

#[test]
fn renaming_in_text_renames_the_graph() {
    let text = generate(&writer()).unwrap().replace("\"writer\"", "\"author\"");
    assert_eq!(sync(&writer(), &text).unwrap().graph.name(), "author");
}

#[test]
fn orphaned_margin_moves_to_the_next_directive() {
    let text = generate(&writer())
        .unwrap()
        .replace("#aad node polish", "// about polish\n#aad node polish");
    let base = parse(&text).unwrap();
    let script = parse_script(&text).unwrap();
    assert_eq!(script.margin_text(), vec!["// about polish\n"]);
    let without = base.apply_edit(&GraphEdit::RemoveNode { id: "polish".into() }).unwrap();
    let three_way = sync_with_ancestor(&base, &without, &text).unwrap();
    assert!(three_way.graph.node("polish").is_none());
    assert!(three_way.script.contains("// about polish\n#aad node end"));
}

#[test]
fn both_sides_rewiring_one_port_keeps_the_text_wire() {
    let base = writer().with_node(Node::new("alt", NodeKind::End));
    let graph_side = base
        .apply_edit(&GraphEdit::Disconnect {
            edge: Edge::new(("polish", "out"), ("end", "in")),
        })
        .unwrap()
        .apply_edit(&GraphEdit::Connect {
            edge: Edge::new(("polish", "out"), ("alt", "in")),
        })
        .unwrap();
    let text = generate_unchecked(&base).replace("polish.out -> end.in", "polish.out -> draft.in");
    let result = sync_with_ancestor(&base, &graph_side, &text).unwrap();
    assert_eq!(result.conflicts.len(), 1);
    assert_eq!(result.conflicts[0].key, "wire:out");
    assert_eq!(
        result.graph.edge_from(&PortRef::new("polish", "out")).unwrap().to,
        PortRef::new("draft", "in")
    );
}

fn graph_for(seed: u64, target: usize) -> TopologyGraph {
    GraphGen::any(seed, target).generate(&format!("g{seed}"))
}

/// One random edit that applies cleanly to `g`.
fn random_edit(g: &TopologyGraph, seed: u64) -> GraphEdit {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let ids: Vec<&str> = g.nodes().iter().map(|n| n.id.as_str()).collect();
    loop {
        let id = ids.choose(&mut rng).unwrap().to_string();
        let node = g.node(&id).unwrap();
        let edit = match rng.random_range(0..7) {
            0 => GraphEdit::SetConfig {
                id,
                key: "assign".into(),
                value: Value::from(["y", "total", "x"].choose(&mut rng).unwrap().to_string()),
            },
            1 => match node.config.keys().collect::<Vec<_>>().choose(&mut rng) {
                Some(key) => GraphEdit::UnsetConfig {
                    id: id.clone(),
                    key: (*key).clone(),
                },
                None => continue,
            },
            2 if node.kind != NodeKind::Start => GraphEdit::RemoveNode { id },
            3 => {
                let mut fresh = Node::new("added", NodeKind::Prompt).with_config("template", "multi\nline {payload}");
                if rng.random_bool(0.5) {
                    fresh = fresh.at(rng.random_range(-10..10) as f64 * 1.5, 7.0);
                }
                GraphEdit::AddNode { node: fresh }
            }
            4 => match g.edges().choose(&mut rng) {
                Some(e) => GraphEdit::Disconnect { edge: e.clone() },
                None => continue,
            },
            5 => {
                let free: Vec<&String> = node
                    .out_ports
                    .iter()
                    .filter(|p| g.edge_from(&PortRef::new(node.id.as_str(), p.as_str())).is_none())
                    .collect();
                let Some(port) = free.choose(&mut rng) else { continue };
                let target = ids.choose(&mut rng).unwrap();
                GraphEdit::Connect {
                    edge: Edge::new((&id, port), (target, "in")),
                }
            }
            6 => GraphEdit::SetConfig {
                id,
                key: "note".into(),
                value: Value::from(vec![Value::from("a\nb"), Value::Number(2.5)]),
            },
            _ => continue,
        };
        if g.apply_edit(&edit).is_ok_and(|after| after != *g) {
            return edit;
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(300))]

    #[test]
    fn graph_text_graph_round_trip(seed in any::<u64>(), target in 2usize..=50) {
        let g = graph_for(seed, target);
        let text = generate(&g).unwrap();
        prop_assert_eq!(parse(&text).unwrap(), g.clone());
        prop_assert_eq!(generate(&parse(&text).unwrap()).unwrap(), text);
    }

    #[test]
    fn margin_text_is_preserved(seed in any::<u64>(), target in 2usize..=30, picks in prop::collection::vec((any::<prop::sample::Index>(), 0usize..5), 1..6)) {
        const MARGINS: [&str; 5] = [
            "// helper notes\n",
            "fn shout(s) { upper(s) }\n\n",
            "   indented, with trailing space \n",
            "# not a directive: #aad inside\n",
            "ünïcode ✓\n",
        ];
        let g = graph_for(seed, target);
        let text = generate(&g).unwrap();
        let lines: Vec<&str> = text.split_inclusive('\n').collect();
        let slots: Vec<usize> = (0..=lines.len())
            .filter(|&i| i == lines.len() || lines[i].starts_with("#aad node ") || lines[i].starts_with("#aad wire ") || i == 0)
            .collect();
        let mut inserts: Vec<(usize, &str)> = picks.iter().map(|(ix, m)| (slots[ix.index(slots.len())], MARGINS[*m])).collect();
        inserts.sort_by_key(|(slot, _)| *slot);
        let mut edited = String::new();
        for (i, line) in lines.iter().chain(std::iter::once(&"")).enumerate() {
            for (_, m) in inserts.iter().filter(|(slot, _)| *slot == i) {
                edited.push_str(m);
            }
            edited.push_str(line);
        }
        let result = sync(&parse(&edited).unwrap(), &edited).unwrap();
        for (_, m) in &inserts {
            prop_assert!(result.script.contains(m));
        }
        prop_assert_eq!(&result.script, &edited);
        prop_assert!(result.changes.is_empty());
    }

    #[test]
    fn single_edit_converges(seed in any::<u64>(), target in 2usize..=50, edit_seed in any::<u64>()) {
        let g = graph_for(seed, target);
        let edit = random_edit(&g, edit_seed);
        let edited = g.apply_edit(&edit).unwrap();
        let result = sync(&g, &generate_unchecked(&edited)).unwrap();
        prop_assert!(result.conflicts.is_empty());
        match &edit {
            GraphEdit::MoveNode { .. } => prop_assert!(result.text_edits().is_empty()),
            _ => {
                prop_assert_eq!(result.text_edits(), vec![&edit]);
                prop_assert_eq!(&result.graph, &edited);
                prop_assert!(result.changes.iter().all(|c| c.origin == ChangeOrigin::FromText));
            }
        }
    }
}

#[test]
fn moved_layout_in_text_is_normalized_away() {
    let g = writer();
    let text = generate(&g).unwrap().replace("at=(400,0)", "at=(1,1)");
    let result = sync(&g, &text).unwrap();
    assert!(result.text_edits().is_empty());
    assert_eq!(result.graph, g);
    assert!(result.script.contains("at=(400,0)"));
}
