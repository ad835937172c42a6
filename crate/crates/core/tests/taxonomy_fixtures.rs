mod common;

use std::collections::BTreeMap;

use proptest::prelude::*;
use serde::Deserialize;
use tutee_core::conversation::Role;
use tutee_core::dialogue_taxonomy::{kb_density, phase_report, read_annotated, MessageType, ReportSlice};
use tutee_core::teaching_helper::{detect, Antipattern, ClassifiedMessage};

use common::data_dir;

fn reference_totals() -> Vec<(MessageType, usize)> {
    let text = std::fs::read_to_string(data_dir().join("fixtures/reference_totals.json")).unwrap();
    let raw: BTreeMap<String, usize> = serde_json::from_str(&text).unwrap();
    raw.into_iter()
        .map(|(label, n)| (MessageType::parse_label(&label).unwrap(), n))
        .collect()
}

#[test]
fn density_of_the_published_totals() {
    let totals = reference_totals();
    assert_eq!(totals.len(), 14);
    let stream = totals.iter().flat_map(|(t, n)| std::iter::repeat_n(*t, *n));
    let d = kb_density(stream).unwrap();
    assert_eq!((d.count, d.total), (15, 546));
    assert!((d.ratio() - 15.0 / 546.0).abs() < 1e-12);
}

#[derive(Deserialize)]
struct SliceCounts {
    total: usize,
    knowledge_building: usize,
    knowledge_telling: usize,
    types: BTreeMap<String, usize>,
}

#[test]
fn annotated_fixture_matches_hand_counts() {
    let messages = read_annotated(data_dir().join("fixtures/annotated_40.jsonl")).unwrap();
    assert_eq!(messages.len(), 40);
    let text = std::fs::read_to_string(data_dir().join("fixtures/annotated_40.counts.json")).unwrap();
    let hand: BTreeMap<String, serde_json::Value> = serde_json::from_str(&text).unwrap();

    let d = kb_density(messages.iter().map(|m| m.message_type)).unwrap();
    assert_eq!(d.total, 40);
    assert_eq!(d.count, hand["all"]["knowledge_building"].as_u64().unwrap() as usize);

    let report = phase_report(&messages).unwrap();
    for (key, slice) in [("problem_solving", ReportSlice::ProblemSolving), ("discussion", ReportSlice::Discussion)] {
        let expected: SliceCounts = serde_json::from_value(hand[key].clone()).unwrap();
        let got = report.slice(slice);
        assert_eq!(got.total, expected.total, "{key}");
        assert_eq!(got.knowledge_building(), expected.knowledge_building, "{key}");
        assert_eq!(got.knowledge_telling(), expected.knowledge_telling, "{key}");
        for t in MessageType::ALL {
            assert_eq!(got.count(t), expected.types.get(t.label()).copied().unwrap_or(0), "{key} {}", t.label());
        }
        let ratio = expected.knowledge_building as f64 / expected.total as f64;
        assert!((got.kb_density().unwrap() - ratio).abs() < 1e-12);
    }
}

#[derive(Deserialize)]
struct Line {
    role: Role,
    #[serde(rename = "type")]
    message_type: MessageType,
}

#[test]
fn antipattern_transcripts_are_detected() {
    let text = std::fs::read_to_string(data_dir().join("fixtures/antipatterns.json")).unwrap();
    let cases: BTreeMap<String, Vec<Line>> = serde_json::from_str(&text).unwrap();
    let expected = [
        ("commanding", Antipattern::Commanding),
        ("spoon_feeding", Antipattern::SpoonFeeding),
        ("under_teaching", Antipattern::UnderTeaching),
        ("healthy", Antipattern::NoneDetected),
    ];
    for (name, pattern) in expected {
        let window: Vec<ClassifiedMessage> = cases[name]
            .iter()
            .map(|l| ClassifiedMessage::new(l.role, l.message_type))
            .collect();
        assert_eq!(detect(&window), pattern, "{name}");
    }
}

proptest! {
    /// Density depends only on the multiset of labels.
    #[test]
    fn density_ignores_order(types in proptest::collection::vec(proptest::sample::select(MessageType::ALL.to_vec()), 1..80),
                             seed in any::<u64>()) {
        let mut shuffled = types.clone();
        let n = shuffled.len();
        let mut x = seed;
        for i in (1..n).rev() {
            x = x.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            shuffled.swap(i, (x >> 33) as usize % (i + 1));
        }
        let a = kb_density(types.iter().copied()).unwrap();
        let b = kb_density(shuffled).unwrap();
        prop_assert_eq!((a.count, a.total), (b.count, b.total));
        let doubled = kb_density(types.iter().chain(types.iter()).copied()).unwrap();
        prop_assert!((doubled.ratio() - a.ratio()).abs() < 1e-12);
    }
}
