use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::model::{
    Attachment, Attribute, ClosedStatus, CommentOrigin, CommentPayload, DetectorMask, EorPayload,
    IsInfo, MessageEnvelope, MrsMessage, NewComment, Payload, Scalar, ScalarList, Severity,
    SorPayload, Timestamp, TriggerType,
};

/// Shape of a synthetic acquisition workload.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WorkloadSpec {
    pub num_runs: u64,
    pub mrs_per_run: u64,
    pub is_per_run: u64,
    pub comments_per_run: u64,
    pub is_attrs_per_object: u64,
    /// Each publisher drives its own partition, `BENCH-<k>`.
    pub publishers: u64,
    pub seed: u64,
}

impl Default for WorkloadSpec {
    fn default() -> Self {
        WorkloadSpec {
            num_runs: 500,
            mrs_per_run: 10,
            is_per_run: 20,
            comments_per_run: 1,
            is_attrs_per_object: 6,
            publishers: 1,
            seed: 1,
        }
    }
}

impl WorkloadSpec {
    pub fn validate(&self) -> Result<(), String> {
        if self.publishers == 0 {
            return Err("publishers must be at least 1".into());
        }
        Ok(())
    }

    /// Envelopes per publisher.
    pub fn envelopes_per_publisher(&self) -> u64 {
        self.num_runs * (2 + self.mrs_per_run + self.is_per_run + self.comments_per_run)
    }

    pub fn partition(publisher: u64) -> String {
        format!("BENCH-{publisher}")
    }
}

/// Generated envelopes, one sequence per publisher.
#[derive(Debug, Clone, PartialEq)]
pub struct Stream {
    pub publishers: Vec<Vec<MessageEnvelope>>,
}

impl Stream {
    pub fn len(&self) -> usize {
        self.publishers.iter().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// All envelopes in publisher order.
    pub fn iter(&self) -> impl Iterator<Item = &MessageEnvelope> {
        self.publishers.iter().flatten()
    }

    /// Wire bytes of the whole stream, publisher by publisher.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        for env in self.iter() {
            out.extend_from_slice(env.to_line().as_bytes());
            out.push(b'\n');
        }
        out
    }
}

const BEAMS: [&str; 4] = ["Muons", "Electrons", "Pions", "muons"];
const APPS: [&str; 4] = ["RunControl", "DFM", "EventBuilder", "SFI-3"];
const SERVERS: [&str; 3] = ["RunParams", "DF", "Histogramming"];
const CLASSES: [&str; 3] = ["RunParams", "DFStats", "HLTRates"];
const TEXTS: [&str; 6] = [
    "transition done",
    "buffer <full> & retrying",
    "quotes \" and ' apostrophes",
    "multi\nline\r\ntext\twith tabs",
    "unicode: Ωμέγα – 測試 🚀",
    "control \u{1} \u{7f} chars",
];
const MEDIA: [(&str, &str); 4] = [
    ("log.txt", "text/plain"),
    ("plot.png", "image/png"),
    ("dump.bin", "application/octet-stream"),
    ("report.pdf", "application/pdf"),
];

struct Gen {
    rng: ChaCha8Rng,
    now: i64,
}

impl Gen {
    fn tick(&mut self) -> Timestamp {
        self.now += self.rng.gen_range(1..50);
        Timestamp::from_millis(self.now).expect("bench clock stays in range")
    }

    fn text(&mut self) -> String {
        let base = TEXTS.choose(&mut self.rng).expect("non-empty");
        format!("{base} #{}", self.rng.gen_range(0..10_000))
    }

    fn scalar(&mut self, i: u64) -> Scalar {
        let time = |g: &mut Gen| Timestamp::from_millis(g.now - g.rng.gen_range(0..100_000)).expect("in range");
        match i % 8 {
            0 => Scalar::Int(self.rng.gen_range(0..300)),
            1 => Scalar::Float(f64::from(self.rng.gen_range(-1000..1000)) / 8.0),
            2 => Scalar::Str(self.text()),
            3 => Scalar::Bool(self.rng.gen()),
            4 => Scalar::Time(time(self)),
            5 => Scalar::List(ScalarList::Int((0..self.rng.gen_range(0..4)).map(|_| self.rng.gen()).collect())),
            6 => Scalar::List(ScalarList::Float(
                (0..self.rng.gen_range(0..4)).map(|_| self.rng.gen_range(0.0..1.0)).collect(),
            )),
            _ => Scalar::List(ScalarList::Str(vec![self.text(), String::new()])),
        }
    }

    fn attr_name(class: &str, i: u64) -> String {
        match (class, i) {
            ("RunParams", 0) => "beam_energy".into(),
            ("DFStats", 0) => "rate".into(),
            _ => format!("p{i}"),
        }
    }

    fn is(&mut self, attrs: u64) -> IsInfo {
        let class = *CLASSES.choose(&mut self.rng).expect("non-empty");
        let attributes = (0..attrs)
            .map(|i| Attribute::new(Self::attr_name(class, i), self.scalar(i)))
            .collect();
        IsInfo {
            server: SERVERS.choose(&mut self.rng).expect("non-empty").to_string(),
            object_name: format!("{class}.obj{}", self.rng.gen_range(0..5)),
            class_name: class.into(),
            attributes,
            timestamp: self.tick(),
        }
    }

    fn mrs(&mut self) -> MrsMessage {
        let severity = [Severity::Information, Severity::Warning, Severity::Error, Severity::Fatal]
            [self.rng.gen_range(0..4)];
        MrsMessage {
            message_name: format!("MSG::{}", self.rng.gen_range(0..20)),
            severity,
            application: APPS.choose(&mut self.rng).expect("non-empty").to_string(),
            text: self.text(),
            timestamp: self.tick(),
            qualifiers: (0..self.rng.gen_range(0..3)).map(|q| format!("q{q}")).collect(),
        }
    }

    fn comment(&mut self) -> CommentPayload {
        let mut attachments = Vec::new();
        let mut blobs = Vec::new();
        if self.rng.gen_bool(0.3) {
            let (name, media) = MEDIA.choose(&mut self.rng).expect("non-empty");
            let len = self.rng.gen_range(0..256);
            let data: Vec<u8> = (0..len).map(|_| self.rng.gen()).collect();
            attachments.push(Attachment::describe(*name, *media, &data));
            blobs.push(data);
        }
        let text = if attachments.is_empty() || self.rng.gen() { self.text() } else { String::new() };
        let comment = NewComment {
            author: format!("shifter{}", self.rng.gen_range(0..3)),
            created_at: self.tick(),
            text,
            origin: CommentOrigin::Online,
            attachments,
        };
        CommentPayload::from_parts(&comment, &blobs)
    }
}

/// Deterministic envelope stream for `spec`: per publisher, `num_runs`
/// runs each made of a SOR, the run's MRS/IS/COMMENT envelopes in shuffled
/// order and an EOR. Identical specs yield identical streams.
pub fn generate_stream(spec: &WorkloadSpec) -> Stream {
    let publishers = (0..spec.publishers)
        .map(|p| {
            let mut g = Gen {
                rng: ChaCha8Rng::seed_from_u64(spec.seed ^ p.wrapping_mul(0x9e37_79b9_7f4a_7c15)),
                // 2002-08-14T00:00:00Z
                now: 1_029_283_200_000,
            };
            let partition = WorkloadSpec::partition(p);
            let mut out = Vec::with_capacity(spec.envelopes_per_publisher() as usize);
            let mut seq = 0;
            let mut push = |g: &mut Gen, payload: Payload| {
                seq += 1;
                out.push(MessageEnvelope {
                    partition: partition.clone(),
                    seq,
                    timestamp: g.tick(),
                    payload,
                });
            };
            for run in 1..=spec.num_runs {
                let max_events = g.rng.gen_range(100..100_000);
                let trigger = match g.rng.gen_range(0..4) {
                    0 => TriggerType::Cosmic,
                    1 => TriggerType::Calibration,
                    2 => TriggerType::Physics,
                    _ => TriggerType::Other("Random".into()),
                };
                let sor = Payload::Sor(SorPayload {
                    run_number: run,
                    max_events,
                    trigger_type: trigger,
                    beam_type: BEAMS.choose(&mut g.rng).expect("non-empty").to_string(),
                    detector_mask: DetectorMask(g.rng.gen()),
                });
                push(&mut g, sor);
                let mut kinds: Vec<u8> = std::iter::repeat_n(0, spec.mrs_per_run as usize)
                    .chain(std::iter::repeat_n(1, spec.is_per_run as usize))
                    .chain(std::iter::repeat_n(2, spec.comments_per_run as usize))
                    .collect();
                kinds.shuffle(&mut g.rng);
                for k in kinds {
                    let payload = match k {
                        0 => Payload::Mrs(g.mrs()),
                        1 => Payload::Is(g.is(spec.is_attrs_per_object)),
                        _ => Payload::Comment(g.comment()),
                    };
                    push(&mut g, payload);
                }
                let status = if g.rng.gen_bool(0.8) { ClosedStatus::Good } else { ClosedStatus::Bad };
                let num_events = g.rng.gen_range(0..=max_events + 1000);
                push(&mut g, Payload::Eor(EorPayload { status, num_events }));
            }
            out
        })
        .collect();
    Stream { publishers }
}
