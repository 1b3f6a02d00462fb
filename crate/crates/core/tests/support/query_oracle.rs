//! Randomized repositories and criteria, plus full-scan reference
//! implementations of run search and IS parameter search.

use obk_core::model::{
    Attribute, ClosedStatus, DetectorMask, IsInfo, MrsMessage, RunHeader, RunStatus, Scalar,
    ScalarList, SearchCriteria, Severity, SortDir, SortKey, Timestamp, TriggerType,
};
use obk_core::query::{IsMatch, IsQuery, Predicate, PredicateOp};
use obk_core::storage::Backend;
use rand::seq::SliceRandom;
use rand::Rng;

const PARTITIONS: [&str; 3] = ["TB", "LAr", "Tile"];
const BEAMS: [&str; 5] = ["Muons", "muons", "MUONS", "Electrons", "Pions"];
const CLASSES: [&str; 3] = ["RunParams", "DFStats", "HLT"];
const PARAMS: [&str; 3] = ["energy", "rate", "label"];
const WORDS: [&str; 5] = ["alpha", "beta", "Alpha", "gamma ray", "ß-decay"];
const BASE_MS: i64 = 1_029_000_000_000;

/// Ground truth of a generated repository, kept independently of any store.
#[derive(Debug, Clone)]
pub struct TruthRun {
    pub header: RunHeader,
    /// `(record_id, info)` in insertion order.
    pub is: Vec<(u64, IsInfo)>,
}

fn time(rng: &mut impl Rng) -> Timestamp {
    // Coarse grid so equal timestamps and exact range bounds occur.
    Timestamp::from_millis(BASE_MS + rng.gen_range(0..40) * 60_000).unwrap()
}

fn trigger(rng: &mut impl Rng) -> TriggerType {
    match rng.gen_range(0..4) {
        0 => TriggerType::Cosmic,
        1 => TriggerType::Calibration,
        2 => TriggerType::Physics,
        _ => TriggerType::Other("Random".into()),
    }
}

fn scalar(rng: &mut impl Rng) -> Scalar {
    match rng.gen_range(0..8) {
        0 | 1 => Scalar::Int(rng.gen_range(-3..4)),
        2 | 3 => Scalar::Float(f64::from(rng.gen_range(-6..7)) / 2.0),
        4 => Scalar::Str(WORDS.choose(rng).unwrap().to_string()),
        5 => Scalar::Bool(rng.gen()),
        6 => Scalar::Time(time(rng)),
        _ => Scalar::List(ScalarList::Int((0..rng.gen_range(0..3)).map(|_| rng.gen_range(0..2)).collect())),
    }
}

/// Writes a random repository into `store` and returns its ground truth.
pub fn populate(store: &dyn Backend, rng: &mut impl Rng) -> Vec<TruthRun> {
    let mut truth = Vec::new();
    let count = rng.gen_range(1..=3);
    let partitions: Vec<&str> = PARTITIONS.choose_multiple(rng, count).copied().collect();
    for partition in partitions {
        let runs = rng.gen_range(0..7);
        let mut number = 0;
        for i in 0..runs {
            number += rng.gen_range(1..4);
            let mut header = RunHeader::open(
                partition,
                number,
                time(rng),
                rng.gen_range(0..5) * 250,
                trigger(rng),
                *BEAMS.choose(rng).unwrap(),
                DetectorMask(rng.gen()),
            );
            store.begin_run(&header).unwrap();
            let mut next_id = 1;
            let mut is = Vec::new();
            for _ in 0..rng.gen_range(0..6) {
                if rng.gen_bool(0.3) {
                    let m = MrsMessage {
                        message_name: "m".into(),
                        severity: Severity::Warning,
                        application: "app".into(),
                        text: "t".into(),
                        timestamp: time(rng),
                        qualifiers: vec![],
                    };
                    assert_eq!(store.append_mrs(partition, number, &m).unwrap(), next_id);
                    next_id += 1;
                }
                let mut names: Vec<&str> = PARAMS.to_vec();
                names.shuffle(rng);
                names.truncate(rng.gen_range(0..=3));
                let info = IsInfo {
                    server: "DF".into(),
                    object_name: format!("obj{}", rng.gen_range(0..3)),
                    class_name: CLASSES.choose(rng).unwrap().to_string(),
                    attributes: names.into_iter().map(|n| Attribute::new(n, scalar(rng))).collect(),
                    timestamp: time(rng),
                };
                assert_eq!(store.append_is(partition, number, &info).unwrap(), next_id);
                is.push((next_id, info));
                next_id += 1;
            }
            // The last run of a partition is sometimes left open.
            if i + 1 < runs || rng.gen_bool(0.7) {
                let status = if rng.gen() { ClosedStatus::Good } else { ClosedStatus::Bad };
                let events = rng.gen_range(0..4) * 100;
                let end = Timestamp::from_millis(header.start_time.as_millis() + 3_600_000).unwrap();
                header = store.end_run(partition, number, status, events, end).unwrap();
            }
            truth.push(TruthRun { header, is });
        }
    }
    truth
}

pub fn random_criteria(rng: &mut impl Rng) -> (SearchCriteria, bool) {
    let c = SearchCriteria {
        status: match rng.gen_range(0..3) {
            0 => Some(ClosedStatus::Good),
            1 => Some(ClosedStatus::Bad),
            _ => None,
        },
        max_events_at_most: rng.gen_bool(0.3).then(|| rng.gen_range(0..5) * 250),
        start_from: rng.gen_bool(0.3).then(|| time(rng)),
        start_to: rng.gen_bool(0.3).then(|| time(rng)),
        beam_type: rng.gen_bool(0.3).then(|| ["muons", "ELECTRONS", "Pions", "Kaons", "muon"].choose(rng).unwrap().to_string()),
        trigger_type: rng.gen_bool(0.3).then(|| trigger(rng)),
        sort_key: *[SortKey::RunNumber, SortKey::StartTime, SortKey::NumEvents].choose(rng).unwrap(),
        sort_dir: if rng.gen() { SortDir::Asc } else { SortDir::Desc },
    };
    (c, rng.gen_bool(0.3))
}

pub fn random_is_query(rng: &mut impl Rng) -> IsQuery {
    let mut q = IsQuery::new(*CLASSES.choose(rng).unwrap(), *PARAMS.choose(rng).unwrap());
    if rng.gen_bool(0.3) {
        q.partition = Some(PARTITIONS.choose(rng).unwrap().to_string());
    }
    if rng.gen_bool(0.7) {
        let op = *[PredicateOp::Eq, PredicateOp::Lt, PredicateOp::Gt, PredicateOp::Contains].choose(rng).unwrap();
        let value = if op == PredicateOp::Contains && rng.gen_bool(0.7) {
            Scalar::Str(["a", "alpha", "Alpha", "ray", "", "ß"].choose(rng).unwrap().to_string())
        } else {
            scalar(rng)
        };
        // Deliberately unchecked: some combinations are type mismatches.
        q.predicate = Some(Predicate { op, value });
    }
    q
}

fn lower(s: &str) -> String {
    s.chars().flat_map(char::to_lowercase).collect()
}

/// `None` where the criteria are invalid.
pub fn naive_find_runs(truth: &[TruthRun], c: &SearchCriteria, include_open: bool) -> Option<Vec<RunHeader>> {
    if let (Some(a), Some(b)) = (c.start_from, c.start_to) {
        if a > b {
            return None;
        }
    }
    let mut out = Vec::new();
    for run in truth {
        let h = &run.header;
        let ok = (include_open || h.status != RunStatus::Open)
            && match c.status {
                None => true,
                Some(ClosedStatus::Good) => h.status == RunStatus::Good,
                Some(ClosedStatus::Bad) => h.status == RunStatus::Bad,
            }
            && c.max_events_at_most.is_none_or(|m| h.max_events <= m)
            && c.start_from.is_none_or(|t| t <= h.start_time)
            && c.start_to.is_none_or(|t| h.start_time <= t)
            && c.beam_type.as_ref().is_none_or(|b| lower(b) == lower(&h.beam_type))
            && c.trigger_type.as_ref().is_none_or(|t| t == &h.trigger_type);
        if ok {
            out.push(h.clone());
        }
    }
    let key = |h: &RunHeader| -> i128 {
        match c.sort_key {
            SortKey::RunNumber => h.run_number as i128,
            SortKey::StartTime => h.start_time.as_millis() as i128,
            SortKey::NumEvents => h.num_events as i128,
        }
    };
    // Insertion sort keeps the reference obviously correct.
    let before = |a: &RunHeader, b: &RunHeader| -> bool {
        let (ka, kb) = (key(a), key(b));
        if ka != kb {
            return if c.sort_dir == SortDir::Asc { ka < kb } else { ka > kb };
        }
        (a.partition.as_str(), a.run_number) < (b.partition.as_str(), b.run_number)
    };
    for i in 1..out.len() {
        let mut j = i;
        while j > 0 && before(&out[j], &out[j - 1]) {
            out.swap(j, j - 1);
            j -= 1;
        }
    }
    Some(out)
}

fn num(s: &Scalar) -> Option<f64> {
    match s {
        Scalar::Int(i) => Some(*i as f64),
        Scalar::Float(f) => Some(*f),
        Scalar::Time(t) => Some(t.as_millis() as f64),
        _ => None,
    }
}

fn same_type(a: &Scalar, b: &Scalar) -> bool {
    match (a, b) {
        (Scalar::List(x), Scalar::List(y)) => std::mem::discriminant(x) == std::mem::discriminant(y),
        _ => std::mem::discriminant(a) == std::mem::discriminant(b),
    }
}

/// `None` where the operator does not apply to the predicate value.
pub fn naive_find_is(truth: &[TruthRun], q: &IsQuery) -> Option<Vec<IsMatch>> {
    if let Some(p) = &q.predicate {
        let ok = match p.op {
            PredicateOp::Eq => true,
            PredicateOp::Lt | PredicateOp::Gt => num(&p.value).is_some(),
            PredicateOp::Contains => matches!(p.value, Scalar::Str(_)),
        };
        if !ok {
            return None;
        }
    }
    let mut out = Vec::new();
    for run in truth {
        if q.partition.as_ref().is_some_and(|p| p != &run.header.partition) {
            continue;
        }
        for (id, info) in &run.is {
            if info.class_name != q.class_name {
                continue;
            }
            for a in &info.attributes {
                if a.name != q.parameter_name {
                    continue;
                }
                let hit = match &q.predicate {
                    None => true,
                    Some(p) if !same_type(&a.value, &p.value) => false,
                    Some(p) => match p.op {
                        PredicateOp::Eq => a.value == p.value,
                        PredicateOp::Lt => num(&a.value).unwrap() < num(&p.value).unwrap(),
                        PredicateOp::Gt => num(&a.value).unwrap() > num(&p.value).unwrap(),
                        PredicateOp::Contains => match (&a.value, &p.value) {
                            (Scalar::Str(h), Scalar::Str(n)) => h.contains(n.as_str()),
                            _ => false,
                        },
                    },
                };
                if hit {
                    out.push(IsMatch {
                        partition: run.header.partition.clone(),
                        run_number: run.header.run_number,
                        object_name: info.object_name.clone(),
                        timestamp: info.timestamp,
                        value: a.clone(),
                        record_id: *id,
                    });
                }
            }
        }
    }
    out.sort_by(|a, b| {
        a.partition
            .cmp(&b.partition)
            .then(a.run_number.cmp(&b.run_number))
            .then(a.timestamp.cmp(&b.timestamp))
            .then(a.record_id.cmp(&b.record_id))
    });
    Some(out)
}

#[derive(Debug, Default)]
pub struct OracleRun {
    pub pairs: u64,
    pub nonempty: u64,
    pub mismatches: Vec<String>,
}

/// Runs `criteria_per_repo` run searches and as many IS searches against
/// the store, comparing each with the references.
pub fn check_store(store: &dyn Backend, truth: &[TruthRun], criteria_per_repo: usize, rng: &mut impl Rng, out: &mut OracleRun) {
    for _ in 0..criteria_per_repo {
        let (c, include_open) = random_criteria(rng);
        let want = naive_find_runs(truth, &c, include_open);
        let got = store.find_runs(&c, include_open).ok();
        out.pairs += 1;
        out.nonempty += u64::from(want.as_ref().is_some_and(|w| !w.is_empty()));
        if got != want && out.mismatches.len() < 10 {
            out.mismatches.push(format!("find_runs {c:?} open={include_open}: got {got:?}, want {want:?}"));
        }
        let q = random_is_query(rng);
        let want = naive_find_is(truth, &q);
        let got = store.find_is_instances(&q).ok();
        out.pairs += 1;
        out.nonempty += u64::from(want.as_ref().is_some_and(|w| !w.is_empty()));
        if got != want && out.mismatches.len() < 10 {
            out.mismatches.push(format!("find_is {q:?}: got {got:?}, want {want:?}"));
        }
    }
}
