//! Reference implementations the library is checked against. Written from
//! the contracts alone; none of them call the code under test.

use std::cmp::Ordering;

use interlearn::gateway::Embedding;
use interlearn::store::{EventId, EventStore, InteractionEvent, RetrievalConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{at, draft, random_unit};

/// Plain scalar cosine in double precision.
pub fn scalar_cos(a: &[f32], b: &[f32]) -> f64 {
    let mut dot = 0.0;
    let mut na = 0.0;
    let mut nb = 0.0;
    for i in 0..a.len() {
        let (x, y) = (a[i] as f64, b[i] as f64);
        dot += x * y;
        na += x * x;
        nb += y * y;
    }
    (dot / (na * nb).sqrt()).clamp(-1.0, 1.0)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Hit {
    pub id: EventId,
    pub sim_img: f64,
    pub sim_text: f64,
}

/// Linear scan applying the retrieval rule: both thresholds, then the
/// largest similarity sum, then the latest timestamp, then the larger id.
pub fn brute_force(events: &[InteractionEvent], q_img: &Embedding, q_text: &Embedding, tau_img: f64, tau_text: f64) -> Option<Hit> {
    let mut best: Option<(&InteractionEvent, f64, f64)> = None;
    for e in events {
        let si = scalar_cos(q_img.values(), e.e_img.values());
        let st = scalar_cos(q_text.values(), e.e_text.values());
        if si < tau_img || st < tau_text {
            continue;
        }
        let better = match best {
            None => true,
            Some((b, bi, bt)) => {
                let (mine, theirs) = (si + st, bi + bt);
                if mine != theirs {
                    mine > theirs
                } else if e.created_at != b.created_at {
                    e.created_at > b.created_at
                } else {
                    e.event_id.to_string() > b.event_id.to_string()
                }
            }
        };
        if better {
            best = Some((e, si, st));
        }
    }
    best.map(|(e, sim_img, sim_text)| Hit { id: e.event_id, sim_img, sim_text })
}

/// Every qualifying event id, unordered.
pub fn qualifying(events: &[InteractionEvent], q_img: &Embedding, q_text: &Embedding, tau_img: f64, tau_text: f64) -> Vec<EventId> {
    events
        .iter()
        .filter(|e| {
            scalar_cos(q_img.values(), e.e_img.values()) >= tau_img
                && scalar_cos(q_text.values(), e.e_text.values()) >= tau_text
        })
        .map(|e| e.event_id)
        .collect()
}

/// A randomized in-memory store plus queries near and far from its events.
/// Low dimension spreads similarities over the whole [0, 1] threshold range;
/// duplicated embeddings and shared timestamps exercise the tie-breaks.
pub struct Corpus {
    pub store: EventStore,
    pub events: Vec<InteractionEvent>,
    pub queries: Vec<(Embedding, Embedding)>,
}

pub fn corpus(seed: u64, n: usize) -> Corpus {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dim = rng.random_range(2..=6);
    let store = EventStore::in_memory();
    let mut pairs: Vec<(Embedding, Embedding)> = Vec::with_capacity(n);
    for i in 0..n {
        let (a, b) = if !pairs.is_empty() && rng.random_bool(0.2) {
            pairs[rng.random_range(0..pairs.len())].clone()
        } else {
            (random_unit(&mut rng, dim), random_unit(&mut rng, dim))
        };
        pairs.push((a.clone(), b.clone()));
        let t = rng.random_range(0..(n as i64 / 3 + 1));
        store.insert_event(draft(a, b, &format!("s{i}"), at(t))).unwrap();
    }
    let mut queries = Vec::new();
    for _ in 0..6 {
        if rng.random_bool(0.5) {
            let (a, b) = &pairs[rng.random_range(0..pairs.len())];
            queries.push((jitter(&mut rng, a), jitter(&mut rng, b)));
        } else {
            queries.push((random_unit(&mut rng, dim), random_unit(&mut rng, dim)));
        }
    }
    let events = store.list_events(0, usize::MAX);
    Corpus { store, events, queries }
}

fn jitter(rng: &mut impl Rng, e: &Embedding) -> Embedding {
    let scale = [0.0, 0.05, 0.3][rng.random_range(0..3)];
    let v: Vec<f32> = e.values().iter().map(|&x| x + scale * (rng.random::<f32>() - 0.5)).collect();
    Embedding::normalized(v, e.provider_tag()).unwrap_or_else(|_| e.clone())
}

fn cfg(tau_img: f64, tau_text: f64) -> RetrievalConfig {
    RetrievalConfig::new(tau_img, tau_text).unwrap()
}

/// retrieve() against the brute-force scan for every query of one corpus.
pub fn oracle_trial(seed: u64, n: usize, tau_img: f64, tau_text: f64) -> Result<(), String> {
    let c = corpus(seed, n);
    for (qi, qt) in &c.queries {
        let got = c.store.retrieve(qi, qt, &cfg(tau_img, tau_text)).map_err(|e| e.to_string())?;
        let want = brute_force(&c.events, qi, qt, tau_img, tau_text);
        let got = got.map(|m| Hit { id: m.event.event_id, sim_img: m.sim_img, sim_text: m.sim_text });
        if got != want {
            return Err(format!("seed {seed} n {n} tau ({tau_img}, {tau_text}): got {got:?}, oracle {want:?}"));
        }
    }
    Ok(())
}

/// Soundness, completeness and threshold monotonicity on one corpus.
pub fn property_trial(seed: u64, n: usize, tau_img: f64, tau_text: f64, raise_img: f64, raise_text: f64) -> Result<(), String> {
    let c = corpus(seed, n);
    let (hi_img, hi_text) = ((tau_img + raise_img).min(1.0), (tau_text + raise_text).min(1.0));
    for (qi, qt) in &c.queries {
        let got = c.store.retrieve(qi, qt, &cfg(tau_img, tau_text)).map_err(|e| e.to_string())?;
        if let Some(m) = &got {
            if m.sim_img < tau_img || m.sim_text < tau_text {
                return Err(format!("unsound match {} ({}, {}) for ({tau_img}, {tau_text})", m.event.event_id, m.sim_img, m.sim_text));
            }
        }
        let any = !qualifying(&c.events, qi, qt, tau_img, tau_text).is_empty();
        if any != got.is_some() {
            return Err(format!("completeness: qualifying events exist = {any}, retrieve returned {}", got.is_some()));
        }
        let raised = c.store.retrieve(qi, qt, &cfg(hi_img, hi_text)).map_err(|e| e.to_string())?;
        if got.is_none() && raised.is_some() {
            return Err(format!("raising ({tau_img}, {tau_text}) to ({hi_img}, {hi_text}) produced a match"));
        }
        let all = RetrievalConfig { max_candidates: usize::MAX, ..cfg(tau_img, tau_text) };
        let wide: Vec<EventId> = c.store.search(qi, qt, &all).map_err(|e| e.to_string())?.iter().map(|m| m.event.event_id).collect();
        let all_hi = RetrievalConfig { max_candidates: usize::MAX, ..cfg(hi_img, hi_text) };
        let narrow = c.store.search(qi, qt, &all_hi).map_err(|e| e.to_string())?;
        if let Some(m) = narrow.iter().find(|m| !wide.contains(&m.event.event_id)) {
            return Err(format!("{} qualifies at the raised thresholds only", m.event.event_id));
        }
    }
    Ok(())
}

/// Order of two matches under the tie-break rule, used to check sorted output.
pub fn rank(a: (f64, &InteractionEvent), b: (f64, &InteractionEvent)) -> Ordering {
    b.0.partial_cmp(&a.0)
        .unwrap()
        .then(b.1.created_at.cmp(&a.1.created_at))
        .then(b.1.event_id.to_string().cmp(&a.1.event_id.to_string()))
}
