use std::collections::HashMap;
use std::io;
use std::net::SocketAddr;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;
use std::time::{Duration, Instant};

use futures_util::{SinkExt, StreamExt};
use tokio::net::{TcpListener, TcpStream};
use tokio::sync::{mpsc, oneshot};
use tokio::task::JoinHandle;
use tokio_tungstenite::tungstenite::Message;

use crate::channel::UserId;
use crate::config::{RoomSettings, ServerConfig};
use crate::protocol::{encode, ClientMessage, ErrorCode, ServerMessage};
use crate::relay::{
    FaultInjection, LogEvent, Outbound, RoomRelay, RoutingStats, Session, SessionAction, SessionId,
    MOVE_BROADCAST_INTERVAL_MS,
};

#[derive(Debug, Clone, Default)]
pub struct ServerOptions {
    pub faults: FaultInjection,
    /// Receives every event-log line, in room order.
    pub events: Option<mpsc::UnboundedSender<LogEvent>>,
}

enum RoomCommand {
    Join {
        session: SessionId,
        user: UserId,
        name: String,
        tx: mpsc::UnboundedSender<Message>,
        reply: oneshot::Sender<bool>,
    },
    Command {
        session: SessionId,
        msg: ClientMessage,
    },
    Leave {
        session: SessionId,
        done: oneshot::Sender<()>,
    },
    Stats(oneshot::Sender<RoutingStats>),
}

#[derive(Clone, Copy)]
struct Clock(Instant);

impl Clock {
    fn now_ms(&self) -> u64 {
        self.0.elapsed().as_millis() as u64
    }
}

struct Shared {
    rooms: HashMap<String, mpsc::UnboundedSender<RoomCommand>>,
    next_session: AtomicU64,
    next_user: AtomicU64,
    clock: Clock,
}

impl Shared {
    fn assign_user(&self) -> UserId {
        let n = self.next_user.fetch_add(1, Ordering::Relaxed);
        UserId::new(format!("u{n}")).expect("generated ids are short")
    }
}

/// A running relay. Dropping the handle leaves the server running; call
/// [`ServerHandle::shutdown`] to stop accepting connections.
pub struct ServerHandle {
    addr: SocketAddr,
    shared: Arc<Shared>,
    accept: JoinHandle<()>,
}

impl ServerHandle {
    pub fn local_addr(&self) -> SocketAddr {
        self.addr
    }

    /// Routing-decision timings merged across rooms.
    pub async fn routing_stats(&self) -> RoutingStats {
        let mut merged = RoutingStats::default();
        for tx in self.shared.rooms.values() {
            let (reply, rx) = oneshot::channel();
            if tx.send(RoomCommand::Stats(reply)).is_ok() {
                if let Ok(stats) = rx.await {
                    merged.merge(&stats);
                }
            }
        }
        merged
    }

    pub fn shutdown(self) {
        self.accept.abort();
    }

    /// Runs until the accept loop ends.
    pub async fn wait(self) {
        let _ = self.accept.await;
    }
}

/// Binds `config.listen` and serves every configured room.
pub async fn serve(config: &ServerConfig, options: ServerOptions) -> io::Result<ServerHandle> {
    let addr = config
        .listen_addr()
        .map_err(|e| io::Error::new(io::ErrorKind::InvalidInput, e.to_string()))?;
    let listener = TcpListener::bind(addr).await?;
    serve_on(listener, &config.rooms, options)
}

pub fn serve_on(
    listener: TcpListener,
    rooms: &[RoomSettings],
    options: ServerOptions,
) -> io::Result<ServerHandle> {
    let addr = listener.local_addr()?;
    let clock = Clock(Instant::now());
    let mut senders = HashMap::new();
    for room in rooms {
        let relay = RoomRelay::new(room.room_id.clone(), room.room_config(), options.faults)
            .map_err(|e| io::Error::new(io::ErrorKind::InvalidInput, e.to_string()))?;
        let (tx, rx) = mpsc::unbounded_channel();
        tokio::spawn(run_room(relay, rx, clock, options.events.clone()));
        senders.insert(room.room_id.clone(), tx);
    }
    let shared = Arc::new(Shared {
        rooms: senders,
        next_session: AtomicU64::new(1),
        next_user: AtomicU64::new(1),
        clock,
    });
    let accept_shared = Arc::clone(&shared);
    let accept = tokio::spawn(async move {
        loop {
            match listener.accept().await {
                Ok((stream, peer)) => {
                    let _ = stream.set_nodelay(true);
                    let id = SessionId(accept_shared.next_session.fetch_add(1, Ordering::Relaxed));
                    log::debug!("session {} connected from {peer}", id.0);
                    tokio::spawn(run_connection(stream, id, Arc::clone(&accept_shared)));
                }
                Err(e) => log::warn!("accept failed: {e}"),
            }
        }
    });
    Ok(ServerHandle {
        addr,
        shared,
        accept,
    })
}

async fn run_room(
    mut relay: RoomRelay,
    mut commands: mpsc::UnboundedReceiver<RoomCommand>,
    clock: Clock,
    events: Option<mpsc::UnboundedSender<LogEvent>>,
) {
    let mut peers: HashMap<SessionId, mpsc::UnboundedSender<Message>> = HashMap::new();
    let mut ticker = tokio::time::interval(Duration::from_millis(MOVE_BROADCAST_INTERVAL_MS));
    ticker.set_missed_tick_behavior(tokio::time::MissedTickBehavior::Skip);

    let deliver = |peers: &HashMap<SessionId, mpsc::UnboundedSender<Message>>, out: Vec<Outbound>| {
        for o in out {
            if let Some(tx) = peers.get(&o.to) {
                let _ = tx.send(Message::text(o.frame));
            }
        }
    };

    loop {
        tokio::select! {
            cmd = commands.recv() => {
                let Some(cmd) = cmd else { break };
                let now = clock.now_ms();
                match cmd {
                    RoomCommand::Join { session, user, name, tx, reply } => {
                        match relay.join(session, user, &name, now) {
                            Ok(out) => {
                                peers.insert(session, tx);
                                deliver(&peers, out);
                                let _ = reply.send(true);
                            }
                            Err(err) => {
                                let _ = tx.send(Message::text(err.frame));
                                let _ = reply.send(false);
                            }
                        }
                    }
                    RoomCommand::Command { session, msg } => {
                        let out = relay.command(session, msg, now);
                        deliver(&peers, out);
                    }
                    RoomCommand::Leave { session, done } => {
                        peers.remove(&session);
                        let out = relay.leave(session, now);
                        deliver(&peers, out);
                        let _ = done.send(());
                    }
                    RoomCommand::Stats(reply) => {
                        let _ = reply.send(relay.routing_stats().clone());
                    }
                }
            }
            _ = ticker.tick() => {
                let out = relay.tick(clock.now_ms());
                deliver(&peers, out);
            }
        }
        for event in relay.drain_events() {
            if let Some(sink) = &events {
                let _ = sink.send(event);
            }
        }
    }
}

async fn run_connection(stream: TcpStream, id: SessionId, shared: Arc<Shared>) {
    let ws = match tokio_tungstenite::accept_async(stream).await {
        Ok(ws) => ws,
        Err(e) => {
            log::debug!("session {}: handshake failed: {e}", id.0);
            return;
        }
    };
    let (mut sink, mut incoming) = ws.split();
    let (tx, mut outgoing) = mpsc::unbounded_channel::<Message>();
    let writer = tokio::spawn(async move {
        while let Some(msg) = outgoing.recv().await {
            let closing = matches!(msg, Message::Close(_));
            if sink.send(msg).await.is_err() || closing {
                break;
            }
        }
        let _ = sink.close().await;
    });

    let reply = |msg: &ServerMessage| {
        let _ = tx.send(Message::text(encode(msg)));
    };
    let mut session = Session::new(id, shared.clock.now_ms());
    let mut room: Option<&mpsc::UnboundedSender<RoomCommand>> = None;

    while let Some(next) = incoming.next().await {
        let frame = match next {
            Ok(Message::Text(text)) => text.as_bytes().to_vec(),
            // Binary frames are not part of the protocol; let the decoder
            // reject them like any other malformed frame.
            Ok(Message::Binary(bytes)) => bytes.to_vec(),
            Ok(Message::Close(_)) | Err(_) => break,
            Ok(_) => continue,
        };
        let now = shared.clock.now_ms();
        match session.on_frame(&frame, now, || shared.assign_user()) {
            SessionAction::Reply(msg) => reply(&msg),
            SessionAction::Close(msg) => {
                reply(&msg);
                let _ = tx.send(Message::Close(None));
                break;
            }
            SessionAction::Join { room_id } => {
                let Some(room_tx) = shared.rooms.get(&room_id) else {
                    reply(&ServerMessage::error(
                        ErrorCode::UnknownRoom,
                        format!("no room named {room_id:?}"),
                    ));
                    continue;
                };
                let (done, joined) = oneshot::channel();
                let cmd = RoomCommand::Join {
                    session: id,
                    user: session.user().cloned().expect("HELLO precedes JOIN_ROOM"),
                    name: session.display_name().to_owned(),
                    tx: tx.clone(),
                    reply: done,
                };
                if room_tx.send(cmd).is_ok() && joined.await == Ok(true) {
                    session.joined(&room_id);
                    room = Some(room_tx);
                }
            }
            SessionAction::Room(msg) => {
                if let Some(room_tx) = room {
                    let _ = room_tx.send(RoomCommand::Command { session: id, msg });
                }
            }
        }
    }

    if let Some(room_tx) = room {
        let (done, left) = oneshot::channel();
        if room_tx.send(RoomCommand::Leave { session: id, done }).is_ok() {
            let _ = left.await;
        }
    }
    log::debug!("session {} closed", id.0);
    drop(tx);
    let _ = writer.await;
}
