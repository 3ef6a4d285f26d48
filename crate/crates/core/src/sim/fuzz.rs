//! Seeded privacy fuzzer.
//!
//! Each generated scenario is run in process and checked against a shadow
//! model that tracks who is where and in which channel using nothing but the
//! script itself. Every SPEAK is compared with the oracle, every step's room
//! state with the shadow, and the full transcript goes through the leak
//! scanner and the noninterference replay.

use std::collections::BTreeMap;

use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use serde_json::Value;

use crate::channel::RoomConfig;
use crate::relay::{FaultInjection, BAD_MESSAGE_FLOOD};

use super::leak::{leak_scan, noninterference_violations};
use super::oracle::{oracle_recipients, OracleState, OracleUser, ORACLE_MAX_USERS};
use super::runner::run_in_process_observed;
use super::scenario::{Scenario, ScriptOp};
use super::transcript::Transcript;

/// Coordinates the generator draws from. Pairs of them land inside, outside
/// and exactly on the default hearing radius (for example (15, 20)).
const COORDS: &[f64] = &[0.0, 5.0, 15.0, 20.0, 25.0, 40.0, 1000.0];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct FuzzBounds {
    pub max_users: usize,
    pub max_channels: u32,
    pub max_actions: usize,
}

impl Default for FuzzBounds {
    fn default() -> Self {
        FuzzBounds {
            max_users: ORACLE_MAX_USERS,
            max_channels: 4,
            max_actions: 40,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FuzzFailure {
    pub seed: u64,
    pub problems: Vec<String>,
    /// The failing scenario after shrinking.
    pub minimal: Scenario,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct FuzzSummary {
    pub scenarios: usize,
    pub actions: usize,
    pub speaks_checked: usize,
    pub records_scanned: usize,
    pub failure: Option<FuzzFailure>,
}

pub fn generate_scenario(seed: u64, bounds: FuzzBounds) -> Scenario {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = rng.random_range(2..=bounds.max_users.clamp(2, ORACLE_MAX_USERS));
    let num_channels = rng.random_range(1..=bounds.max_channels.max(1));
    let max_users = if rng.random_bool(0.2) {
        rng.random_range(2..=n)
    } else {
        RoomConfig::DEFAULT_MAX_USERS.max(n)
    };
    let config = RoomConfig {
        num_channels,
        max_users,
        ..RoomConfig::default()
    };
    let names: Vec<String> = (0..n).map(|i| ((b'A' + i as u8) as char).to_string()).collect();
    let mut scenario = Scenario::new(config);
    scenario.seed = seed;

    let mut connected = vec![false; n];
    let mut t = 0u64;
    let initial = rng.random_range(2..=n);
    for (i, name) in names.iter().enumerate().take(initial) {
        scenario = scenario.at(t, name, ScriptOp::JoinRoom);
        connected[i] = true;
    }

    let steps = rng.random_range(1..=bounds.max_actions.max(1));
    for step in 0..steps {
        t += rng.random_range(0..=60);
        let i = rng.random_range(0..n);
        let op = if !connected[i] {
            if rng.random_bool(0.7) {
                connected[i] = true;
                ScriptOp::JoinRoom
            } else {
                ScriptOp::Wait
            }
        } else {
            match rng.random_range(0..100) {
                0..30 => ScriptOp::Speak { text: format!("s{step}") },
                30..50 => ScriptOp::Move {
                    x: COORDS[rng.random_range(0..COORDS.len())],
                    y: COORDS[rng.random_range(0..COORDS.len())],
                },
                50..75 => {
                    let channel = if rng.random_bool(0.85) {
                        rng.random_range(1..=num_channels as i64)
                    } else {
                        [0, -1, num_channels as i64 + 1][rng.random_range(0..3)]
                    };
                    ScriptOp::Enter { channel }
                }
                75..88 => ScriptOp::Exit,
                88..95 => {
                    connected[i] = false;
                    ScriptOp::Disconnect
                }
                _ => ScriptOp::Wait,
            }
        };
        scenario = scenario.at(t, &names[i], op);
    }
    scenario
}

#[derive(Debug, Clone)]
struct ShadowUser {
    in_room: bool,
    /// Consecutive rejected frames while outside the room.
    bad_streak: u32,
    closed: bool,
    x: f64,
    y: f64,
    channel: Option<i64>,
}

type Snapshot = BTreeMap<String, (f64, f64, Option<u32>)>;

fn parse(detail: &str) -> Value {
    serde_json::from_str(detail).unwrap_or(Value::Null)
}

/// Everything wrong with one run of `scenario`; empty when it passes.
pub fn check_scenario(scenario: &Scenario, faults: FaultInjection) -> Vec<String> {
    let mut snapshots: Vec<Result<Snapshot, String>> = Vec::new();
    let run = run_in_process_observed(scenario, faults, |view| {
        let Some(room) = view.relay.room(&scenario.room) else {
            snapshots.push(Err("room vanished".into()));
            return;
        };
        if let Err(e) = room.state().check_invariants() {
            snapshots.push(Err(e));
            return;
        }
        let snap = view
            .identities
            .iter()
            .filter_map(|(name, id)| {
                room.state().user(id).map(|u| {
                    let p = u.position();
                    (name.clone(), (p.x, p.y, u.voice_state().channel().map(|c| c.get())))
                })
            })
            .collect();
        if room.state().len() != view.identities.iter().filter(|(_, id)| room.state().user(id).is_some()).count() {
            snapshots.push(Err("room holds users no actor owns".into()));
            return;
        }
        snapshots.push(Ok(snap));
    });
    let output = match run {
        Ok(o) => o,
        Err(e) => return vec![e.to_string()],
    };
    let tr = &output.transcript;
    let mut problems = Vec::new();

    let cfg = &scenario.config;
    let mut shadow: BTreeMap<&str, ShadowUser> = BTreeMap::new();
    for (step, action) in scenario.actions.iter().enumerate() {
        let actor = action.actor.as_str();
        let mut fail = |what: String| problems.push(format!("step {step} ({actor} {}): {what}", action.op.name()));
        let to_actor: Vec<Value> = tr
            .at_step(step)
            .filter(|r| r.to == actor)
            .map(|r| parse(&r.detail))
            .collect();
        let kinds: Vec<&str> = to_actor.iter().map(|v| v["type"].as_str().unwrap_or("?")).collect();
        let error_code = to_actor.first().and_then(|v| v["code"].as_str()).unwrap_or("");
        let in_room = shadow.get(actor).is_some_and(|u| u.in_room);

        match &action.op {
            ScriptOp::JoinRoom => {
                let occupied = shadow.values().filter(|u| u.in_room).count();
                if occupied < cfg.max_users {
                    shadow.insert(
                        actor,
                        ShadowUser { in_room: true, bad_streak: 0, closed: false, x: cfg.spawn.x, y: cfg.spawn.y, channel: None },
                    );
                    if kinds != ["WELCOME", "WELCOME", "ROOM_STATE"] {
                        fail(format!("expected WELCOME, WELCOME, ROOM_STATE, got {kinds:?}"));
                    }
                } else {
                    shadow.insert(actor, ShadowUser { in_room: false, bad_streak: 0, closed: false, x: 0.0, y: 0.0, channel: None });
                    let code = to_actor.get(1).and_then(|v| v["code"].as_str());
                    if kinds != ["WELCOME", "ERROR"] || code != Some("ROOM_FULL") {
                        fail(format!("expected WELCOME then ROOM_FULL, got {kinds:?}"));
                    }
                }
            }
            ScriptOp::Disconnect => {
                shadow.remove(actor);
                if !to_actor.is_empty() {
                    fail(format!("departed actor received {kinds:?}"));
                }
            }
            ScriptOp::Wait => {
                if tr.at_step(step).next().is_some() {
                    fail("a pause produced traffic".into());
                }
            }
            _ if shadow.get(actor).is_some_and(|u| u.closed) => {
                if tr.at_step(step).next().is_some() {
                    fail("a closed session produced traffic".into());
                }
            }
            _ if !in_room => {
                let u = shadow.get_mut(actor).expect("connected");
                u.bad_streak += 1;
                u.closed = u.bad_streak >= BAD_MESSAGE_FLOOD;
                if kinds != ["ERROR"] || error_code != "BAD_MESSAGE" {
                    fail(format!("expected BAD_MESSAGE outside the room, got {kinds:?}"));
                }
            }
            ScriptOp::Move { x, y } => {
                let u = shadow.get_mut(actor).expect("in room");
                u.x = *x;
                u.y = *y;
                if kinds != ["USER_MOVED"] {
                    fail(format!("expected USER_MOVED echo, got {kinds:?}"));
                }
            }
            ScriptOp::Enter { channel } => {
                let u = shadow.get_mut(actor).expect("in room");
                if (1..=cfg.num_channels as i64).contains(channel) {
                    let effect = match u.channel {
                        Some(c) if c != *channel => "switch",
                        _ => "join",
                    };
                    u.channel = Some(*channel);
                    let ack = to_actor.first();
                    let ok = kinds == ["CHANNEL_ACK"]
                        && ack.and_then(|v| v["channel"].as_i64()) == Some(*channel)
                        && ack.and_then(|v| v["effect"].as_str()) == Some(effect);
                    if !ok {
                        fail(format!("expected CHANNEL_ACK {channel}/{effect}, got {to_actor:?}"));
                    }
                } else if kinds != ["ERROR"] || error_code != "INVALID_CHANNEL" {
                    fail(format!("expected INVALID_CHANNEL, got {kinds:?}"));
                }
            }
            ScriptOp::Exit => {
                let u = shadow.get_mut(actor).expect("in room");
                if u.channel.take().is_some() {
                    let ack = to_actor.first();
                    let ok = kinds == ["CHANNEL_ACK"]
                        && ack.is_some_and(|v| v["channel"].is_null())
                        && ack.and_then(|v| v["effect"].as_str()) == Some("leave");
                    if !ok {
                        fail(format!("expected CHANNEL_ACK leave, got {to_actor:?}"));
                    }
                } else if kinds != ["ERROR"] || error_code != "NOT_IN_CHANNEL" {
                    fail(format!("expected NOT_IN_CHANNEL, got {kinds:?}"));
                }
            }
            ScriptOp::Speak { .. } => {
                let state = OracleState {
                    hearing_radius: cfg.hearing_radius,
                    users: shadow
                        .iter()
                        .filter(|(_, u)| u.in_room)
                        .map(|(name, u)| OracleUser {
                            name: name.to_string(),
                            x: u.x,
                            y: u.y,
                            channel: u.channel.map(|c| c as u32),
                        })
                        .collect(),
                };
                match oracle_recipients(&state, actor) {
                    Ok(expected) => {
                        let mut got = Vec::new();
                        for r in tr.at_step(step) {
                            if r.kind != "AUDIO" {
                                fail(format!("speech produced {} for {}", r.kind, r.to));
                            } else {
                                got.push(r.to.clone());
                            }
                        }
                        let unique: std::collections::BTreeSet<String> = got.iter().cloned().collect();
                        if unique.len() != got.len() {
                            fail(format!("duplicate AUDIO deliveries {got:?}"));
                        }
                        if unique != expected {
                            fail(format!("AUDIO reached {unique:?}, oracle says {expected:?}"));
                        }
                    }
                    Err(e) => fail(format!("oracle: {e}")),
                }
            }
        }

        match snapshots.get(step) {
            Some(Ok(snap)) => {
                let expected: Snapshot = shadow
                    .iter()
                    .filter(|(_, u)| u.in_room)
                    .map(|(name, u)| (name.to_string(), (u.x, u.y, u.channel.map(|c| c as u32))))
                    .collect();
                if *snap != expected {
                    fail(format!("room state {snap:?} but shadow {expected:?}"));
                }
            }
            Some(Err(e)) => fail(format!("invariant: {e}")),
            None => fail("no snapshot".into()),
        }
    }

    let report = leak_scan(tr, &output.history);
    for v in report.violations {
        problems.push(format!("leak at record {} to {}: {:?} {}", v.offset, v.recipient, v.rule, v.detail));
    }
    match noninterference_violations(scenario, faults) {
        Ok(vs) => {
            for v in vs {
                problems.push(format!("interference for {}: {}", v.recipient, v.detail));
            }
        }
        Err(e) => problems.push(e.to_string()),
    }
    problems.extend(self_delivery(tr));
    problems
}

fn self_delivery(tr: &Transcript) -> Vec<String> {
    tr.records
        .iter()
        .filter(|r| r.kind == "AUDIO" && r.from == r.to)
        .map(|r| format!("{} heard its own speech", r.to))
        .collect()
}

/// Greedily drops actions while the scenario keeps failing.
pub fn shrink(scenario: &Scenario, faults: FaultInjection) -> Scenario {
    let mut best = scenario.clone();
    loop {
        let mut progressed = false;
        let mut i = best.actions.len();
        while i > 0 {
            i -= 1;
            let mut candidate = best.clone();
            candidate.actions.remove(i);
            if candidate.validate().is_ok() && !check_scenario(&candidate, faults).is_empty() {
                best = candidate;
                progressed = true;
            }
        }
        if !progressed {
            return best;
        }
    }
}

/// Runs `count` scenarios with seeds `seed, seed + 1, ...`, stopping at the
/// first failure, which is shrunk before being reported.
pub fn fuzz(seed: u64, count: usize, bounds: FuzzBounds, faults: FaultInjection) -> FuzzSummary {
    let mut summary = FuzzSummary::default();
    for i in 0..count as u64 {
        let s = generate_scenario(seed.wrapping_add(i), bounds);
        summary.scenarios += 1;
        summary.actions += s.actions.len();
        summary.speaks_checked += s
            .actions
            .iter()
            .filter(|a| matches!(a.op, ScriptOp::Speak { .. }))
            .count();
        let problems = check_scenario(&s, faults);
        if let Ok(out) = super::runner::run_in_process(&s, faults) {
            summary.records_scanned += out.transcript.records.len();
        }
        if !problems.is_empty() {
            let minimal = shrink(&s, faults);
            summary.failure = Some(FuzzFailure {
                seed: s.seed,
                problems: check_scenario(&minimal, faults),
                minimal,
            });
            break;
        }
    }
    summary
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn generation_is_deterministic_and_valid() {
        let b = FuzzBounds::default();
        for seed in 0..50 {
            let s = generate_scenario(seed, b);
            assert_eq!(s, generate_scenario(seed, b));
            s.validate().unwrap();
            assert!(s.actors().len() <= b.max_users);
            assert!(s.config.num_channels <= b.max_channels);
        }
    }

    #[test]
    fn correct_relay_passes_a_batch() {
        let summary = fuzz(7, 50, FuzzBounds::default(), FaultInjection::default());
        assert_eq!(summary.scenarios, 50);
        assert!(summary.failure.is_none(), "{:?}", summary.failure);
    }

    #[test]
    fn faults_are_found_and_shrunk() {
        let faults = FaultInjection { channel_field_in_room_state: true, ..Default::default() };
        let summary = fuzz(1, 200, FuzzBounds::default(), faults);
        let failure = summary.failure.expect("fault detected");
        assert!(failure.minimal.actions.len() <= 4, "{:?}", failure.minimal.actions);
    }
}
