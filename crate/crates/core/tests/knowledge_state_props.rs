mod common;

use proptest::prelude::*;
use tutee_core::knowledge_state::{diff, diff_with_threshold, KnowledgeState};

use common::{data_dir, seed, SEEDS, TOPICS};

#[test]
fn seeds_match_the_frozen_canonical_form() {
    for topic in TOPICS {
        let frozen = std::fs::read_to_string(data_dir().join("fixtures").join(format!("canonical_{topic}.txt"))).unwrap();
        let frozen: Vec<&str> = frozen.lines().collect();
        assert_eq!(frozen.len(), SEEDS.len());
        for (name, expected) in SEEDS.iter().zip(frozen) {
            let (_, state) = seed(topic, name);
            let text = state.serialize();
            assert_eq!(text, expected, "{topic}/{name}");
            let again = KnowledgeState::parse(&text).unwrap();
            assert_eq!(again, state);
            assert_eq!(again.serialize(), text);
        }
    }
}

#[test]
fn round_trip_is_fast() {
    let start = std::time::Instant::now();
    for _ in 0..100 {
        for topic in TOPICS {
            for name in SEEDS {
                let (text, state) = seed(topic, name);
                assert_eq!(KnowledgeState::parse(&text).unwrap(), state);
            }
        }
    }
    assert!(start.elapsed().as_secs_f64() < 1.0);
}

fn entry() -> impl Strategy<Value = String> {
    prop_oneof![
        "[a-z]{1,8}( [a-z]{1,8}){0,6}",
        "[ -~]{1,40}",
        "\\PC{1,20}",
        Just("if arr[mid] < target:\n    low = mid + 1".to_string()),
    ]
    .prop_filter("non-blank", |s| !s.trim().is_empty())
}

fn entries() -> impl Strategy<Value = Vec<String>> {
    proptest::collection::btree_set(entry(), 0..6).prop_map(|s| s.into_iter().collect())
}

fn state() -> impl Strategy<Value = KnowledgeState> {
    (entries(), entries()).prop_map(|(f, c)| KnowledgeState::new(f, c).unwrap())
}

/// Edits a state by dropping, rewording and appending entries.
fn neighbour(base: KnowledgeState) -> impl Strategy<Value = KnowledgeState> {
    let n = base.facts().len();
    (
        proptest::collection::vec(any::<bool>(), n),
        proptest::collection::vec(any::<bool>(), n),
        entries(),
        entries(),
    )
        .prop_map(move |(keep, reword, extra_facts, code)| {
            let mut facts: Vec<String> = base
                .facts()
                .iter()
                .zip(keep.iter().zip(&reword))
                .filter(|(_, (k, _))| **k)
                .map(|(f, (_, r))| if *r { format!("{f} indeed") } else { f.clone() })
                .collect();
            for f in extra_facts {
                if !facts.contains(&f) {
                    facts.push(f);
                }
            }
            KnowledgeState::new_dedup(facts, code).unwrap()
        })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(512))]

    #[test]
    fn serialize_parse_round_trip(s in state()) {
        let text = s.serialize();
        let back = KnowledgeState::parse(&text).unwrap();
        prop_assert_eq!(&back, &s);
        prop_assert_eq!(back.serialize(), text);
        prop_assert_eq!(serde_json::from_str::<serde_json::Value>(&s.serialize()).unwrap(),
            serde_json::json!({"facts": s.facts(), "code_implementation": s.code_implementation()}));
    }

    #[test]
    fn lenient_parse_accepts_wrapped_output(s in state(), prose in "[a-zA-Z ]{0,30}") {
        let wrapped = format!("{prose}\n```json\n{}\n```\n{prose}", s.serialize());
        prop_assert_eq!(KnowledgeState::parse_lenient(&wrapped).unwrap(), s);
    }

    #[test]
    fn diff_applies_back_to_new_state((old, new) in state().prop_flat_map(|s| (Just(s.clone()), neighbour(s))),
                                      threshold in 0.0f64..=1.0) {
        let changes = diff_with_threshold(&old, &new, threshold);
        prop_assert_eq!(changes.apply(&old).unwrap(), new.clone());
        prop_assert_eq!(diff(&old, &new).is_empty(), old == new);
    }

    #[test]
    fn diff_of_equal_states_is_empty(s in state()) {
        prop_assert!(diff(&s, &s).is_empty());
    }
}
