use std::path::Path;

use proptest::prelude::*;
use sessrec::dataset::*;
use sessrec::Error;

fn write(dir: &Path, name: &str, text: &str) -> std::path::PathBuf {
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p
}

#[test]
fn three_tsv_lines_three_events() {
    let dir = tempfile::tempdir().unwrap();
    let p = write(dir.path(), "a.tsv", "s1\ta\t1\ns1\tb\t2\ns2\tc\t5\n");
    let r = load_sessions(&p, RawFormat::Tsv, 0.0).unwrap();
    assert_eq!(r.events.len(), 3);
    assert_eq!(r.events[2], RawEvent { session_id: "s2".into(), item_id: "c".into(), order_key: 5 });
    assert_eq!(r.malformed, 0);
}

#[test]
fn header_and_jsonl_are_accepted() {
    let dir = tempfile::tempdir().unwrap();
    let p = write(dir.path(), "h.tsv", "session_id\titem_id\torder_key\ns1\ta\t1\n");
    assert_eq!(load_sessions(&p, RawFormat::Tsv, 0.0).unwrap().events.len(), 1);
    let j = write(
        dir.path(),
        "e.jsonl",
        "{\"session_id\":\"s1\",\"item_id\":\"a\",\"order_key\":3}\n{\"session_id\":7,\"item_id\":8,\"order_key\":4}\n",
    );
    let r = load_sessions(&j, RawFormat::Jsonl, 0.0).unwrap();
    assert_eq!(r.events[1].session_id, "7");
}

#[test]
fn empty_file_gives_no_events() {
    let dir = tempfile::tempdir().unwrap();
    let p = write(dir.path(), "e.tsv", "");
    assert!(load_sessions(&p, RawFormat::Tsv, 0.0).unwrap().events.is_empty());
}

#[test]
fn malformed_lines_within_tolerance() {
    let dir = tempfile::tempdir().unwrap();
    let mut text: String = (0..99).map(|i| format!("s{}\ti{}\t{i}\n", i / 5, i % 7)).collect();
    text.insert_str(0, "broken line without tabs\n");
    let p = write(dir.path(), "m.tsv", &text);
    let r = load_sessions(&p, RawFormat::Tsv, 0.05).unwrap();
    assert_eq!((r.events.len(), r.malformed, r.records), (99, 1, 100));
    assert!(matches!(load_sessions(&p, RawFormat::Tsv, 0.005), Err(Error::Malformed { malformed: 1, total: 100, .. })));
}

#[test]
fn missing_file_is_an_io_error() {
    let err = load_sessions(Path::new("/nonexistent/clicks.tsv"), RawFormat::Tsv, 0.0).unwrap_err();
    assert!(err.to_string().contains("clicks.tsv"));
}

#[test]
fn cascade_filter_example() {
    let corpus = SessionCorpus::from_raw_sessions(&[
        vec!["a", "b"],
        vec!["a", "c"],
        vec!["a", "d"],
        vec!["a", "e"],
        vec!["a", "f"],
    ]);
    assert!(filter_corpus(&corpus, 2, 5).is_err());
    let kept = filter_corpus(&corpus, 2, 1).unwrap();
    assert_eq!(kept.sessions.len(), 5);
}

#[test]
fn augmentation_counts() {
    assert_eq!(augment_split(&[0, 1, 2, 3, 4, 5, 6]).len(), 6);
    assert_eq!(augment_split(&[4, 2]), vec![LabeledInstance { prefix: vec![4], label: 2 }]);
    assert!(augment_split(&[4]).is_empty());
}

fn hundred_sessions() -> SessionCorpus {
    let raw: Vec<Vec<String>> = (0..100).map(|s| (0..4).map(|i| format!("i{}", (s + i) % 9)).collect()).collect();
    SessionCorpus::from_raw_sessions(&raw)
}

#[test]
fn bundle_round_trip() {
    let corpus = hundred_sessions();
    let splits = make_splits(&corpus, SplitPolicy::TailFraction(0.2), 0.1, 3).unwrap();
    assert_eq!((splits.train_sessions.len(), splits.test_sessions.len()), (80, 20));
    assert_eq!(splits.valid.len() + splits.train.len(), 240);
    assert_eq!(splits.valid.len(), 24);
    assert_eq!(splits, make_splits(&corpus, SplitPolicy::TailFraction(0.2), 0.1, 3).unwrap());

    let bundle = Bundle::from_splits(&corpus, splits, None);
    let dir = tempfile::tempdir().unwrap();
    bundle.write(dir.path()).unwrap();
    let back = Bundle::load(dir.path()).unwrap();
    assert_eq!(back, bundle);
    for f in Bundle::files() {
        assert!(dir.path().join(f).exists(), "{f}");
    }
}

#[test]
fn bundle_with_out_of_range_item_is_rejected() {
    let corpus = hundred_sessions();
    let bundle = Bundle::from_splits(&corpus, make_splits(&corpus, SplitPolicy::TailFraction(0.2), 0.1, 3).unwrap(), None);
    let dir = tempfile::tempdir().unwrap();
    bundle.write(dir.path()).unwrap();
    std::fs::write(dir.path().join("test.jsonl"), "{\"prefix\":[0],\"label\":99}\n").unwrap();
    assert!(Bundle::load(dir.path()).is_err());
}

proptest! {
    #[test]
    fn events_to_corpus_to_instances(events in prop::collection::vec((0u8..6, 0u8..8, 0i64..50), 1..80)) {
        let raw: Vec<RawEvent> = events
            .iter()
            .map(|&(s, i, t)| RawEvent { session_id: format!("s{s}"), item_id: format!("i{i}"), order_key: t })
            .collect();
        let corpus = build_corpus(&raw, &CorpusOptions::default());
        prop_assert!(corpus.validate().is_ok());
        prop_assert_eq!(corpus.num_events(), raw.len());
        let again = build_corpus(&raw, &CorpusOptions::default());
        prop_assert_eq!(&corpus, &again);
        for s in &corpus.sessions {
            let aug = augment_split(&s.items);
            prop_assert_eq!(aug.len(), s.len().saturating_sub(1));
            for inst in aug {
                prop_assert_eq!(inst.label, s.items[inst.prefix.len()]);
            }
        }
        if let Ok(f) = filter_corpus(&corpus, 2, 2) {
            prop_assert!(f.sessions.iter().all(|s| s.len() >= 2));
            let refiltered = filter_corpus(&f, 2, 2).unwrap();
            prop_assert_eq!(refiltered.sessions.len(), f.sessions.len());
        }
    }
}
