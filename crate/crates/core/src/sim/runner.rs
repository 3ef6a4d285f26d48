use std::collections::BTreeMap;
use std::time::Duration;

use crate::channel::UserId;
use crate::protocol::{decode_server, encode, ClientMessage, ServerMessage, PROTO_VERSION};
use crate::relay::{FaultInjection, Outbound, Relay, SessionId, MOVE_BROADCAST_INTERVAL_MS};
use crate::net::WsClient;

use super::scenario::{Scenario, ScriptAction, ScriptOp};
use super::transcript::{
    frame_kind, ChannelEvent, ChannelHistory, ChannelOp, DeliveryRecord, RunOutput, Transcript,
};
use super::SimError;

const SERVER: &str = "server";
const LIVE_TIMEOUT: Duration = Duration::from_secs(5);
const BARRIER_NONCE_BASE: u64 = 1 << 40;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Mode {
    InProcess,
    /// Drive a running server at `host:port` over WebSocket.
    Live(String),
}

/// Runs a scenario. In-process runs are deterministic: the same scenario
/// always yields the same transcript, byte for byte.
pub fn run_scenario(scenario: &Scenario, mode: &Mode) -> Result<RunOutput, SimError> {
    match mode {
        Mode::InProcess => run_in_process(scenario, FaultInjection::default()),
        Mode::Live(addr) => {
            let rt = tokio::runtime::Builder::new_current_thread()
                .enable_all()
                .build()
                .map_err(|e| SimError::ConnectionFailed(e.to_string()))?;
            rt.block_on(run_live(scenario, addr))
        }
    }
}

/// Passed to the per-step observer of [`run_in_process_observed`].
pub struct StepView<'a> {
    pub step: usize,
    pub action: &'a ScriptAction,
    pub relay: &'a Relay,
    /// Current user id of every actor with an open session.
    pub identities: &'a BTreeMap<String, UserId>,
}

pub fn run_in_process(scenario: &Scenario, faults: FaultInjection) -> Result<RunOutput, SimError> {
    run_in_process_observed(scenario, faults, |_| {})
}

/// In-process run with virtual time; `observe` sees the relay after every
/// scripted step.
pub fn run_in_process_observed(
    scenario: &Scenario,
    faults: FaultInjection,
    mut observe: impl FnMut(StepView<'_>),
) -> Result<RunOutput, SimError> {
    scenario.validate()?;
    let mut relay = Relay::new([(scenario.room.clone(), scenario.config.clone())], faults)
        .map_err(|e| SimError::ScenarioInvalid(e.to_string()))?;

    let mut sessions: BTreeMap<String, SessionId> = BTreeMap::new();
    let mut names: BTreeMap<SessionId, String> = BTreeMap::new();
    let mut seqs: BTreeMap<String, u64> = BTreeMap::new();
    let mut current_ids: BTreeMap<String, UserId> = BTreeMap::new();
    let mut transcript = Transcript::default();
    let mut history = ChannelHistory::new();

    let record = |transcript: &mut Transcript,
                  names: &BTreeMap<SessionId, String>,
                  step: Option<usize>,
                  t: u64,
                  from: &str,
                  out: Vec<Outbound>| {
        for o in out {
            transcript.records.push(DeliveryRecord {
                step,
                t,
                kind: frame_kind(&o.frame),
                from: from.to_owned(),
                to: names.get(&o.to).cloned().unwrap_or_else(|| "?".to_owned()),
                detail: o.frame,
            });
        }
    };

    let mut last_t = 0;
    for (step, action) in scenario.actions.iter().enumerate() {
        let t = action.t;
        last_t = t;
        let flushed = relay.tick(t);
        record(&mut transcript, &names, None, t, SERVER, flushed);

        let actor = action.actor.as_str();
        let send = |relay: &mut Relay, session: SessionId, msg: ClientMessage| {
            relay.handle_frame(session, encode(&msg).as_bytes(), t).out
        };
        let out = match &action.op {
            ScriptOp::JoinRoom => {
                let session = relay.connect(t);
                sessions.insert(actor.to_owned(), session);
                names.insert(session, actor.to_owned());
                seqs.insert(actor.to_owned(), 0);
                let mut out = send(
                    &mut relay,
                    session,
                    ClientMessage::Hello {
                        proto_version: PROTO_VERSION,
                        display_name: actor.to_owned(),
                    },
                );
                if let Some(id) = relay.session(session).and_then(|s| s.user()) {
                    current_ids.insert(actor.to_owned(), id.clone());
                    transcript
                        .identities
                        .entry(actor.to_owned())
                        .or_default()
                        .push(id.to_string());
                }
                out.extend(send(
                    &mut relay,
                    session,
                    ClientMessage::JoinRoom {
                        room_id: scenario.room.clone(),
                    },
                ));
                out
            }
            ScriptOp::Wait => Vec::new(),
            ScriptOp::Disconnect => {
                let session = sessions.remove(actor).expect("validated: connected");
                current_ids.remove(actor);
                relay.on_disconnect(session, t)
            }
            op => {
                let session = sessions[actor];
                let msg = match op {
                    ScriptOp::Move { x, y } => ClientMessage::Move { x: *x, y: *y },
                    ScriptOp::Speak { text } => {
                        let seq = seqs.entry(actor.to_owned()).or_default();
                        *seq += 1;
                        ClientMessage::Speak {
                            seq: *seq,
                            payload: text.as_bytes().to_vec(),
                        }
                    }
                    ScriptOp::Enter { channel } => ClientMessage::EnterChannel { channel: *channel },
                    ScriptOp::Exit => ClientMessage::ExitChannel {},
                    ScriptOp::JoinRoom | ScriptOp::Disconnect | ScriptOp::Wait => unreachable!(),
                };
                let dispatch = relay.handle_frame(session, encode(&msg).as_bytes(), t);
                if dispatch.closed {
                    current_ids.remove(actor);
                }
                dispatch.out
            }
        };
        record(&mut transcript, &names, Some(step), t, actor, out);

        let channel_op = match action.op {
            ScriptOp::Enter { .. } => Some(ChannelOp::Enter),
            ScriptOp::Exit => Some(ChannelOp::Exit),
            _ => None,
        };
        if let Some(op) = channel_op {
            let channel_after = current_ids.get(actor).and_then(|id| {
                relay
                    .room(&scenario.room)
                    .and_then(|r| r.state().user(id))
                    .and_then(|u| u.voice_state().channel())
                    .map(|c| c.get())
            });
            history.push(ChannelEvent {
                step,
                t,
                actor: actor.to_owned(),
                op,
                channel_after,
            });
        }

        observe(StepView {
            step,
            action,
            relay: &relay,
            identities: &current_ids,
        });
    }
    let end = last_t + MOVE_BROADCAST_INTERVAL_MS;
    let flushed = relay.tick(end);
    record(&mut transcript, &names, None, end, SERVER, flushed);

    Ok(RunOutput {
        transcript,
        history,
    })
}

struct LiveActor {
    client: WsClient,
    seq: u64,
    channel: Option<u32>,
}

/// Drives a real server over WebSocket. After every action each connected
/// actor sends a PING and reads until its PONG, so every frame is attributed
/// to the step that caused it. Barrier PONGs are not recorded.
pub async fn run_live(scenario: &Scenario, addr: &str) -> Result<RunOutput, SimError> {
    scenario.validate()?;
    let failed = |e: crate::net::ClientError| SimError::ConnectionFailed(e.to_string());
    let mut actors: BTreeMap<String, LiveActor> = BTreeMap::new();
    let mut transcript = Transcript::default();
    let mut history = ChannelHistory::new();
    let mut nonce = BARRIER_NONCE_BASE;

    for (step, action) in scenario.actions.iter().enumerate() {
        let t = action.t;
        let name = action.actor.clone();
        let push = |transcript: &mut Transcript, to: &str, frame: String| {
            transcript.records.push(DeliveryRecord {
                step: Some(step),
                t,
                kind: frame_kind(&frame),
                from: name.clone(),
                to: to.to_owned(),
                detail: frame,
            });
        };

        match &action.op {
            ScriptOp::JoinRoom => {
                let mut client = WsClient::connect(addr).await.map_err(failed)?;
                client
                    .send(&ClientMessage::Hello {
                        proto_version: PROTO_VERSION,
                        display_name: name.clone(),
                    })
                    .await
                    .map_err(failed)?;
                client
                    .send(&ClientMessage::JoinRoom {
                        room_id: scenario.room.clone(),
                    })
                    .await
                    .map_err(failed)?;
                actors.insert(
                    name.clone(),
                    LiveActor {
                        client,
                        seq: 0,
                        channel: None,
                    },
                );
            }
            ScriptOp::Wait => {}
            ScriptOp::Disconnect => {
                if let Some(actor) = actors.remove(&name) {
                    for frame in actor.client.close(LIVE_TIMEOUT).await.map_err(failed)? {
                        push(&mut transcript, &name, frame);
                    }
                }
            }
            op => {
                if let Some(actor) = actors.get_mut(&name) {
                    let msg = match op {
                        ScriptOp::Move { x, y } => ClientMessage::Move { x: *x, y: *y },
                        ScriptOp::Speak { text } => {
                            actor.seq += 1;
                            ClientMessage::Speak {
                                seq: actor.seq,
                                payload: text.as_bytes().to_vec(),
                            }
                        }
                        ScriptOp::Enter { channel } => ClientMessage::EnterChannel { channel: *channel },
                        ScriptOp::Exit => ClientMessage::ExitChannel {},
                        ScriptOp::JoinRoom | ScriptOp::Disconnect | ScriptOp::Wait => unreachable!(),
                    };
                    actor.client.send(&msg).await.map_err(failed)?;
                }
            }
        }

        // Barrier: the actor first, so its command is applied before anyone
        // else's PING reaches the room.
        let mut order: Vec<String> = Vec::new();
        if actors.contains_key(&name) {
            order.push(name.clone());
        }
        order.extend(actors.keys().filter(|k| **k != name).cloned());
        let mut closed = Vec::new();
        for who in order {
            nonce += 1;
            let actor = actors.get_mut(&who).expect("listed above");
            actor
                .client
                .send(&ClientMessage::Ping { nonce })
                .await
                .map_err(failed)?;
            loop {
                let Some(frame) = actor.client.recv_timeout(LIVE_TIMEOUT).await.map_err(failed)? else {
                    closed.push(who.clone());
                    break;
                };
                match decode_server(frame.as_bytes()) {
                    Ok(ServerMessage::Pong { nonce: n }) if n == nonce => break,
                    Ok(ServerMessage::Welcome { user_id, .. }) if who == name => {
                        let ids = transcript.identities.entry(who.clone()).or_default();
                        if ids.last() != Some(&user_id.to_string()) {
                            ids.push(user_id.to_string());
                        }
                    }
                    Ok(ServerMessage::ChannelAck { channel, .. }) if who == name => {
                        actor.channel = channel;
                    }
                    _ => {}
                }
                push(&mut transcript, &who, frame);
            }
        }
        for who in closed {
            actors.remove(&who);
        }

        let channel_op = match action.op {
            ScriptOp::Enter { .. } => Some(ChannelOp::Enter),
            ScriptOp::Exit => Some(ChannelOp::Exit),
            _ => None,
        };
        if let Some(op) = channel_op {
            history.push(ChannelEvent {
                step,
                t,
                actor: name.clone(),
                op,
                channel_after: actors.get(&name).and_then(|a| a.channel),
            });
        }
    }
    for (_, actor) in actors {
        let _ = actor.client.close(LIVE_TIMEOUT).await;
    }
    Ok(RunOutput {
        transcript,
        history,
    })
}
