//! Raw session logs, filtering, sequence augmentation and the preprocessed
//! bundle written to disk.

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type ItemIdx = usize;

/// Default cap on session length; longer sessions keep their most recent items.
pub const DEFAULT_MAX_SESSION_LEN: usize = 50;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RawEvent {
    pub session_id: String,
    pub item_id: String,
    pub order_key: i64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RawFormat {
    Tsv,
    Jsonl,
}

impl std::str::FromStr for RawFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "tsv" => Ok(RawFormat::Tsv),
            "jsonl" | "json" => Ok(RawFormat::Jsonl),
            other => Err(Error::Config(format!("unknown input format {other:?} (expected tsv or jsonl)"))),
        }
    }
}

#[derive(Clone, Debug, Default)]
pub struct LoadReport {
    pub events: Vec<RawEvent>,
    /// Non-blank records seen, including malformed ones.
    pub records: usize,
    pub malformed: usize,
}

fn parse_tsv_line(line: &str) -> Option<RawEvent> {
    let mut fields = line.split('\t');
    let session_id = fields.next()?.trim();
    let item_id = fields.next()?.trim();
    let order_key = fields.next()?.trim().parse().ok()?;
    if fields.next().is_some() || session_id.is_empty() || item_id.is_empty() {
        return None;
    }
    Some(RawEvent {
        session_id: session_id.to_string(),
        item_id: item_id.to_string(),
        order_key,
    })
}

fn parse_json_line(line: &str) -> Option<RawEvent> {
    let value: serde_json::Value = serde_json::from_str(line).ok()?;
    let field = |name: &str| -> Option<String> {
        match value.get(name)? {
            serde_json::Value::String(s) if !s.is_empty() => Some(s.clone()),
            serde_json::Value::Number(n) => Some(n.to_string()),
            _ => None,
        }
    };
    Some(RawEvent {
        session_id: field("session_id")?,
        item_id: field("item_id")?,
        order_key: value.get("order_key")?.as_i64()?,
    })
}

/// Reads raw click records. Malformed records are skipped and counted; when
/// their share exceeds `tolerance` the whole load fails.
pub fn load_sessions(path: &Path, format: RawFormat, tolerance: f64) -> Result<LoadReport> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut report = LoadReport::default();
    for (lineno, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        let trimmed = line.trim_end_matches(['\r', '\n']);
        if trimmed.trim().is_empty() {
            continue;
        }
        if lineno == 0 && format == RawFormat::Tsv && trimmed.starts_with("session_id\t") {
            continue;
        }
        report.records += 1;
        let parsed = match format {
            RawFormat::Tsv => parse_tsv_line(trimmed),
            RawFormat::Jsonl => parse_json_line(trimmed),
        };
        match parsed {
            Some(ev) => report.events.push(ev),
            None => {
                log::debug!("{}:{}: malformed record", path.display(), lineno + 1);
                report.malformed += 1;
            }
        }
    }
    if report.records == 0 {
        log::warn!("{} contains no records", path.display());
    } else if report.malformed as f64 > tolerance * report.records as f64 {
        return Err(Error::Malformed {
            malformed: report.malformed,
            total: report.records,
            tolerance,
        });
    } else if report.malformed > 0 {
        log::warn!("{}: skipped {} malformed of {} records", path.display(), report.malformed, report.records);
    }
    Ok(report)
}

/// Bidirectional map between raw item ids and dense indices `0..N`.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct ItemVocab {
    forward: HashMap<String, ItemIdx>,
    reverse: Vec<String>,
}

impl ItemVocab {
    pub fn from_ids(ids: Vec<String>) -> Result<Self> {
        let mut forward = HashMap::with_capacity(ids.len());
        for (i, id) in ids.iter().enumerate() {
            if forward.insert(id.clone(), i).is_some() {
                return Err(Error::Data(format!("duplicate item id {id:?} in vocabulary")));
            }
        }
        Ok(Self { forward, reverse: ids })
    }

    pub fn intern(&mut self, raw: &str) -> ItemIdx {
        if let Some(&i) = self.forward.get(raw) {
            return i;
        }
        let i = self.reverse.len();
        self.forward.insert(raw.to_string(), i);
        self.reverse.push(raw.to_string());
        i
    }

    pub fn index_of(&self, raw: &str) -> Option<ItemIdx> {
        self.forward.get(raw).copied()
    }

    pub fn raw_id(&self, idx: ItemIdx) -> Option<&str> {
        self.reverse.get(idx).map(String::as_str)
    }

    pub fn ids(&self) -> &[String] {
        &self.reverse
    }

    pub fn len(&self) -> usize {
        self.reverse.len()
    }

    pub fn is_empty(&self) -> bool {
        self.reverse.is_empty()
    }
}

/// One anonymous session: item indices in click order. `end_key` is the
/// order key of its last click and drives the chronological split.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Session {
    pub items: Vec<ItemIdx>,
    #[serde(default)]
    pub end_key: i64,
}

impl Session {
    pub fn new(items: Vec<ItemIdx>) -> Self {
        Self { items, end_key: 0 }
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SessionCorpus {
    pub sessions: Vec<Session>,
    pub vocab: ItemVocab,
}

impl SessionCorpus {
    /// Builds a corpus from sessions of raw ids, interning items in order of
    /// first appearance.
    pub fn from_raw_sessions<S: AsRef<str>>(sessions: &[Vec<S>]) -> Self {
        let mut vocab = ItemVocab::default();
        let sessions = sessions
            .iter()
            .enumerate()
            .map(|(t, s)| Session {
                items: s.iter().map(|id| vocab.intern(id.as_ref())).collect(),
                end_key: t as i64,
            })
            .collect();
        Self { sessions, vocab }
    }

    pub fn num_items(&self) -> usize {
        self.vocab.len()
    }

    pub fn num_events(&self) -> usize {
        self.sessions.iter().map(Session::len).sum()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.vocab.len();
        for (i, s) in self.sessions.iter().enumerate() {
            if s.is_empty() {
                return Err(Error::Data(format!("session {i} is empty")));
            }
            if let Some(&bad) = s.items.iter().find(|&&x| x >= n) {
                return Err(Error::Data(format!("session {i} references item {bad} outside vocabulary of {n}")));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct CorpusOptions {
    /// Start a new session when consecutive clicks are further apart than this.
    pub split_gap: Option<i64>,
    pub max_len: usize,
}

impl Default for CorpusOptions {
    fn default() -> Self {
        Self {
            split_gap: None,
            max_len: DEFAULT_MAX_SESSION_LEN,
        }
    }
}

/// Groups events into sessions ordered by time. Within a session clicks are
/// sorted by `order_key`; sessions are ordered by their last click.
pub fn build_corpus(events: &[RawEvent], opts: &CorpusOptions) -> SessionCorpus {
    let mut grouped: BTreeMap<&str, Vec<(i64, usize, &str)>> = BTreeMap::new();
    for (pos, ev) in events.iter().enumerate() {
        grouped
            .entry(ev.session_id.as_str())
            .or_default()
            .push((ev.order_key, pos, ev.item_id.as_str()));
    }

    let mut raw_sessions: Vec<(i64, i64, Vec<&str>)> = Vec::new();
    for (_, mut clicks) in grouped {
        clicks.sort();
        let mut current: Vec<&str> = Vec::new();
        let mut start = clicks[0].0;
        let mut last = clicks[0].0;
        for (key, _, item) in clicks {
            if let Some(gap) = opts.split_gap {
                if !current.is_empty() && key - last > gap {
                    raw_sessions.push((last, start, std::mem::take(&mut current)));
                    start = key;
                }
            }
            current.push(item);
            last = key;
        }
        raw_sessions.push((last, start, current));
    }
    // stable: ties keep session-id order
    raw_sessions.sort_by_key(|(end, start, _)| (*end, *start));

    let mut vocab = ItemVocab::default();
    let cap = opts.max_len.max(1);
    let sessions = raw_sessions
        .into_iter()
        .map(|(end, _, items)| {
            let skip = items.len().saturating_sub(cap);
            Session {
                items: items[skip..].iter().map(|id| vocab.intern(id)).collect(),
                end_key: end,
            }
        })
        .collect();
    SessionCorpus { sessions, vocab }
}

/// Removes rare items (fewer than `min_item_count` clicks) and short
/// sessions (fewer than `min_len` clicks), repeating until neither rule
/// removes anything, then re-indexes the vocabulary densely.
pub fn filter_corpus(corpus: &SessionCorpus, min_len: usize, min_item_count: usize) -> Result<SessionCorpus> {
    let n = corpus.vocab.len();
    let mut sessions: Vec<Session> = corpus.sessions.clone();
    loop {
        let mut counts = vec![0usize; n];
        for s in &sessions {
            for &i in &s.items {
                counts[i] += 1;
            }
        }
        let mut changed = false;
        for s in sessions.iter_mut() {
            let before = s.items.len();
            s.items.retain(|&i| counts[i] >= min_item_count);
            changed |= s.items.len() != before;
        }
        let before = sessions.len();
        sessions.retain(|s| s.len() >= min_len && !s.is_empty());
        changed |= sessions.len() != before;
        if !changed {
            break;
        }
    }

    if sessions.is_empty() {
        return Err(Error::EmptyCorpus {
            sessions_before: corpus.sessions.len(),
            items_before: n,
            min_len,
            min_item_count,
        });
    }

    let mut remap = vec![usize::MAX; n];
    let mut seen = vec![false; n];
    for s in &sessions {
        for &i in &s.items {
            seen[i] = true;
        }
    }
    let mut ids = Vec::new();
    for old in 0..n {
        if seen[old] {
            remap[old] = ids.len();
            ids.push(corpus.vocab.reverse[old].clone());
        }
    }
    for s in sessions.iter_mut() {
        s.items.iter_mut().for_each(|i| *i = remap[*i]);
    }
    Ok(SessionCorpus {
        sessions,
        vocab: ItemVocab::from_ids(ids)?,
    })
}

/// A session prefix and the item that followed it.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabeledInstance {
    pub prefix: Vec<ItemIdx>,
    pub label: ItemIdx,
}

/// `[v1..vn]` becomes `([v1],v2), ([v1,v2],v3), ..., ([v1..v_{n-1}],vn)`.
pub fn augment_split(session: &[ItemIdx]) -> Vec<LabeledInstance> {
    (1..session.len())
        .map(|end| LabeledInstance {
            prefix: session[..end].to_vec(),
            label: session[end],
        })
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "policy", content = "param", rename_all = "snake_case")]
pub enum SplitPolicy {
    /// The most recent `fraction` of sessions become test sessions.
    TailFraction(f64),
    /// Sessions ending within the final `window` order-key units become test
    /// sessions (e.g. the last 100 seconds, or the last two months).
    LastKPeriods(i64),
}

impl SplitPolicy {
    pub fn parse(name: &str, param: f64) -> Result<Self> {
        match name {
            "tail_fraction" | "tail-fraction" => {
                if !(param > 0.0 && param < 1.0) {
                    return Err(Error::Config(format!("tail fraction must be in (0,1), got {param}")));
                }
                Ok(SplitPolicy::TailFraction(param))
            }
            "last_k_periods" | "last-k-periods" => {
                if param <= 0.0 {
                    return Err(Error::Config(format!("period window must be positive, got {param}")));
                }
                Ok(SplitPolicy::LastKPeriods(param as i64))
            }
            other => Err(Error::Config(format!("unknown split policy {other:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Splits {
    pub train_sessions: Vec<Session>,
    pub test_sessions: Vec<Session>,
    pub train: Vec<LabeledInstance>,
    pub valid: Vec<LabeledInstance>,
    pub test: Vec<LabeledInstance>,
}

/// Chronological train/test split followed by a seeded uniform sample of
/// `valid_fraction` of the training instances for validation.
pub fn make_splits(corpus: &SessionCorpus, policy: SplitPolicy, valid_fraction: f64, seed: u64) -> Result<Splits> {
    let mut order: Vec<usize> = (0..corpus.sessions.len()).collect();
    order.sort_by_key(|&i| corpus.sessions[i].end_key);
    let n = order.len();
    let n_test = match policy {
        SplitPolicy::TailFraction(f) => ((n as f64) * f).round() as usize,
        SplitPolicy::LastKPeriods(window) => {
            let last = order.last().map_or(0, |&i| corpus.sessions[i].end_key);
            order.iter().filter(|&&i| corpus.sessions[i].end_key > last - window).count()
        }
    };
    let n_train = n - n_test.min(n);
    let train_sessions: Vec<Session> = order[..n_train].iter().map(|&i| corpus.sessions[i].clone()).collect();
    let test_sessions: Vec<Session> = order[n_train..].iter().map(|&i| corpus.sessions[i].clone()).collect();

    let all_train: Vec<LabeledInstance> = train_sessions.iter().flat_map(|s| augment_split(&s.items)).collect();
    let test: Vec<LabeledInstance> = test_sessions.iter().flat_map(|s| augment_split(&s.items)).collect();

    let n_valid = ((all_train.len() as f64) * valid_fraction).round() as usize;
    let mut idx: Vec<usize> = (0..all_train.len()).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut is_valid = vec![false; all_train.len()];
    idx[..n_valid].iter().for_each(|&i| is_valid[i] = true);
    let (mut train, mut valid) = (Vec::new(), Vec::new());
    for (inst, v) in all_train.into_iter().zip(is_valid) {
        if v {
            valid.push(inst);
        } else {
            train.push(inst);
        }
    }

    for (name, len) in [("train", train.len()), ("validation", valid.len()), ("test", test.len())] {
        if len == 0 {
            return Err(Error::Data(format!(
                "{name} split is empty ({} train sessions, {} test sessions)",
                train_sessions.len(),
                test_sessions.len()
            )));
        }
    }
    Ok(Splits {
        train_sessions,
        test_sessions,
        train,
        valid,
        test,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetStats {
    pub num_train_sessions: usize,
    pub num_test_sessions: usize,
    pub num_items: usize,
    pub avg_length: f64,
    pub num_train_instances: usize,
    pub num_valid_instances: usize,
    pub num_test_instances: usize,
    pub raw_records: usize,
    pub malformed_records: usize,
}

impl DatasetStats {
    pub fn from_splits(corpus: &SessionCorpus, splits: &Splits, load: Option<&LoadReport>) -> Self {
        let total_len: usize = corpus.sessions.iter().map(Session::len).sum();
        Self {
            num_train_sessions: splits.train_sessions.len(),
            num_test_sessions: splits.test_sessions.len(),
            num_items: corpus.num_items(),
            avg_length: total_len as f64 / corpus.sessions.len().max(1) as f64,
            num_train_instances: splits.train.len(),
            num_valid_instances: splits.valid.len(),
            num_test_instances: splits.test.len(),
            raw_records: load.map_or(0, |l| l.records),
            malformed_records: load.map_or(0, |l| l.malformed),
        }
    }
}

pub const VOCAB_FILE: &str = "vocab.tsv";
pub const TRAIN_FILE: &str = "train.jsonl";
pub const VALID_FILE: &str = "valid.jsonl";
pub const TEST_FILE: &str = "test.jsonl";
pub const TRAIN_SESSIONS_FILE: &str = "train_sessions.jsonl";
pub const STATS_FILE: &str = "stats.json";

/// The preprocessed dataset as stored on disk.
#[derive(Clone, Debug, PartialEq)]
pub struct Bundle {
    pub vocab: ItemVocab,
    pub train_sessions: Vec<Session>,
    pub train: Vec<LabeledInstance>,
    pub valid: Vec<LabeledInstance>,
    pub test: Vec<LabeledInstance>,
    pub stats: DatasetStats,
}

fn write_jsonl<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for row in rows {
        serde_json::to_writer(&mut w, row)?;
        w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn read_jsonl<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (n, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(
            serde_json::from_str(&line)
                .map_err(|e| Error::Data(format!("{}:{}: {e}", path.display(), n + 1)))?,
        );
    }
    Ok(out)
}

impl Bundle {
    pub fn from_splits(corpus: &SessionCorpus, splits: Splits, load: Option<&LoadReport>) -> Self {
        let stats = DatasetStats::from_splits(corpus, &splits, load);
        Self {
            vocab: corpus.vocab.clone(),
            train_sessions: splits.train_sessions,
            train: splits.train,
            valid: splits.valid,
            test: splits.test,
            stats,
        }
    }

    pub fn num_items(&self) -> usize {
        self.vocab.len()
    }

    /// The training sessions as a corpus, used to build the global graph.
    pub fn train_corpus(&self) -> SessionCorpus {
        SessionCorpus {
            sessions: self.train_sessions.clone(),
            vocab: self.vocab.clone(),
        }
    }

    /// Written file names in a stable order.
    pub fn files() -> [&'static str; 6] {
        [VOCAB_FILE, TRAIN_FILE, VALID_FILE, TEST_FILE, TRAIN_SESSIONS_FILE, STATS_FILE]
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let mut vocab = String::new();
        for (i, id) in self.vocab.ids().iter().enumerate() {
            vocab.push_str(&format!("{i}\t{id}\n"));
        }
        let vpath = dir.join(VOCAB_FILE);
        fs::write(&vpath, vocab).map_err(|e| Error::io(&vpath, e))?;
        write_jsonl(&dir.join(TRAIN_FILE), &self.train)?;
        write_jsonl(&dir.join(VALID_FILE), &self.valid)?;
        write_jsonl(&dir.join(TEST_FILE), &self.test)?;
        write_jsonl(&dir.join(TRAIN_SESSIONS_FILE), &self.train_sessions)?;
        let spath = dir.join(STATS_FILE);
        let stats = serde_json::to_string_pretty(&self.stats)?;
        fs::write(&spath, stats + "\n").map_err(|e| Error::io(&spath, e))
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let vpath = dir.join(VOCAB_FILE);
        let text = fs::read_to_string(&vpath).map_err(|e| Error::io(&vpath, e))?;
        let mut ids = Vec::new();
        for (n, line) in text.lines().enumerate() {
            let (idx, id) = line
                .split_once('\t')
                .ok_or_else(|| Error::Data(format!("{}:{}: expected index<TAB>id", vpath.display(), n + 1)))?;
            if idx.parse::<usize>().ok() != Some(ids.len()) {
                return Err(Error::Data(format!("{}:{}: indices must be contiguous", vpath.display(), n + 1)));
            }
            ids.push(id.to_string());
        }
        let vocab = ItemVocab::from_ids(ids)?;
        let spath = dir.join(STATS_FILE);
        let stats: DatasetStats =
            serde_json::from_str(&fs::read_to_string(&spath).map_err(|e| Error::io(&spath, e))?)?;
        let bundle = Self {
            vocab,
            train_sessions: read_jsonl(&dir.join(TRAIN_SESSIONS_FILE))?,
            train: read_jsonl(&dir.join(TRAIN_FILE))?,
            valid: read_jsonl(&dir.join(VALID_FILE))?,
            test: read_jsonl(&dir.join(TEST_FILE))?,
            stats,
        };
        let n = bundle.vocab.len();
        let bad = bundle
            .train
            .iter()
            .chain(&bundle.valid)
            .chain(&bundle.test)
            .any(|inst| inst.label >= n || inst.prefix.is_empty() || inst.prefix.iter().any(|&i| i >= n));
        if bad {
            return Err(Error::Data(format!("{}: instance references an item outside the vocabulary", dir.display())));
        }
        Ok(bundle)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn corpus(sessions: &[&[&str]]) -> SessionCorpus {
        let owned: Vec<Vec<&str>> = sessions.iter().map(|s| s.to_vec()).collect();
        SessionCorpus::from_raw_sessions(&owned)
    }

    #[test]
    fn augment_three() {
        let out = augment_split(&[0, 1, 2]);
        assert_eq!(
            out,
            vec![
                LabeledInstance { prefix: vec![0], label: 1 },
                LabeledInstance { prefix: vec![0, 1], label: 2 },
            ]
        );
        assert_eq!(augment_split(&[4, 5]).len(), 1);
        assert_eq!(augment_split(&[1, 2, 3, 4, 5, 6, 7]).len(), 6);
        assert!(augment_split(&[3]).is_empty());
    }

    #[test]
    fn filter_cascade_empties_corpus() {
        let c = corpus(&[&["a", "b"], &["a", "c"], &["a", "d"], &["a", "e"], &["a", "f"]]);
        let err = filter_corpus(&c, 2, 5).unwrap_err();
        assert!(matches!(err, Error::EmptyCorpus { sessions_before: 5, items_before: 6, .. }), "{err}");
    }

    #[test]
    fn filter_noop_threshold_drops_only_singletons() {
        let c = corpus(&[&["a", "b"], &["x"], &["b", "c", "a"]]);
        let f = filter_corpus(&c, 2, 1).unwrap();
        assert_eq!(f.sessions.len(), 2);
        let raw: Vec<Vec<&str>> = f
            .sessions
            .iter()
            .map(|s| s.items.iter().map(|&i| f.vocab.raw_id(i).unwrap()).collect())
            .collect();
        assert_eq!(raw, vec![vec!["a", "b"], vec!["b", "c", "a"]]);
        assert_eq!(f.vocab.len(), 3);
    }

    #[test]
    fn filter_reaches_fixed_point() {
        // dropping "z" shortens the second session below min_len, which in
        // turn drops "y" below the count threshold
        let c = corpus(&[
            &["x", "y"],
            &["y", "z"],
            &["x", "x"],
            &["x", "w", "w"],
            &["w", "x"],
        ]);
        let f = filter_corpus(&c, 2, 2).unwrap();
        for s in &f.sessions {
            assert!(s.len() >= 2);
        }
        let mut counts = vec![0; f.vocab.len()];
        f.sessions.iter().flat_map(|s| &s.items).for_each(|&i| counts[i] += 1);
        assert!(counts.iter().all(|&c| c >= 2), "{counts:?}");
        assert!(f.vocab.index_of("z").is_none());
        assert!(f.vocab.index_of("y").is_none());
    }

    #[test]
    fn vocab_round_trips() {
        let c = corpus(&[&["a", "b", "c"], &["c", "d"]]);
        for id in ["a", "b", "c", "d"] {
            assert_eq!(c.vocab.raw_id(c.vocab.index_of(id).unwrap()), Some(id));
        }
    }

    #[test]
    fn corpus_orders_sessions_by_time_and_caps_length() {
        let ev = |s: &str, i: &str, k: i64| RawEvent {
            session_id: s.into(),
            item_id: i.into(),
            order_key: k,
        };
        let events = vec![
            ev("late", "a", 10),
            ev("early", "b", 2),
            ev("early", "a", 1),
            ev("late", "c", 11),
            ev("late", "d", 12),
        ];
        let c = build_corpus(&events, &CorpusOptions { split_gap: None, max_len: 2 });
        let raw: Vec<Vec<&str>> = c
            .sessions
            .iter()
            .map(|s| s.items.iter().map(|&i| c.vocab.raw_id(i).unwrap()).collect())
            .collect();
        assert_eq!(raw, vec![vec!["a", "b"], vec!["c", "d"]]);
    }

    #[test]
    fn gap_splitting() {
        let ev = |i: &str, k: i64| RawEvent {
            session_id: "u".into(),
            item_id: i.into(),
            order_key: k,
        };
        let events = vec![ev("a", 0), ev("b", 5), ev("c", 100), ev("d", 101)];
        let c = build_corpus(&events, &CorpusOptions { split_gap: Some(10), max_len: 50 });
        assert_eq!(c.sessions.len(), 2);
        assert_eq!(c.sessions[0].end_key, 5);
    }

    #[test]
    fn splits_tail_fraction_counts_and_determinism() {
        let sessions: Vec<Vec<String>> = (0..100).map(|i| vec![format!("a{}", i % 7), format!("b{}", i % 5)]).collect();
        let c = SessionCorpus::from_raw_sessions(&sessions);
        let s1 = make_splits(&c, SplitPolicy::TailFraction(0.2), 0.1, 3).unwrap();
        assert_eq!(s1.train_sessions.len(), 80);
        assert_eq!(s1.test_sessions.len(), 20);
        assert_eq!(s1.valid.len(), 8);
        assert_eq!(s1.train.len(), 72);
        let s2 = make_splits(&c, SplitPolicy::TailFraction(0.2), 0.1, 3).unwrap();
        assert_eq!(s1, s2);
    }

    #[test]
    fn validation_is_ten_percent_of_instances() {
        // 300 sessions of length 4 -> 900 training instances when nothing is held out
        let sessions: Vec<Vec<String>> = (0..400).map(|i| (0..4).map(|j| format!("i{}", (i + j) % 9)).collect()).collect();
        let c = SessionCorpus::from_raw_sessions(&sessions);
        let s = make_splits(&c, SplitPolicy::TailFraction(0.25), 0.1, 11).unwrap();
        assert_eq!(s.train.len() + s.valid.len(), 900);
        assert_eq!(s.valid.len(), 90);
    }

    #[test]
    fn last_period_policy() {
        let sessions: Vec<Vec<String>> = (0..10).map(|i| vec![format!("a{i}"), "b".into()]).collect();
        let c = SessionCorpus::from_raw_sessions(&sessions);
        // end keys 0..9; window 3 -> sessions ending at 7,8,9
        let s = make_splits(&c, SplitPolicy::LastKPeriods(3), 0.2, 0).unwrap();
        assert_eq!(s.test_sessions.len(), 3);
    }

    #[test]
    fn empty_split_is_an_error() {
        let c = corpus(&[&["a", "b"]]);
        assert!(make_splits(&c, SplitPolicy::TailFraction(0.5), 0.1, 0).is_err());
    }
}
