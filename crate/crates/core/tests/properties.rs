use std::collections::BTreeSet;

use hushhub::protocol::{decode_client, decode_server, encode, AckEffect, RosterEntry};
use hushhub::sim::{
    check_scenario, generate_scenario, oracle_recipients, run_in_process, FuzzBounds, OracleState, OracleUser,
};
use hushhub::{ChannelId, ClientMessage, ErrorCode, FaultInjection, Position, RoomConfig, RoomState, ServerMessage, UserId};
use proptest::prelude::*;

#[derive(Debug, Clone)]
enum Op {
    Move(usize, f64, f64),
    Enter(usize, i64),
    Exit(usize),
}

fn coord() -> impl Strategy<Value = f64> {
    prop_oneof![
        Just(0.0),
        Just(15.0),
        Just(20.0),
        Just(25.0),
        Just(1000.0),
        -60.0..60.0f64,
    ]
}

fn op(n: usize, channels: u32) -> impl Strategy<Value = Op> {
    prop_oneof![
        (0..n, coord(), coord()).prop_map(|(u, x, y)| Op::Move(u, x, y)),
        (0..n, -1..=channels as i64 + 1).prop_map(|(u, c)| Op::Enter(u, c)),
        (0..n).prop_map(Op::Exit),
    ]
}

fn room_history() -> impl Strategy<Value = (usize, u32, Vec<Op>)> {
    (1usize..=8, 1u32..=4).prop_flat_map(|(n, c)| (Just(n), Just(c), prop::collection::vec(op(n, c), 0..40)))
}

fn build(n: usize, channels: u32, ops: &[Op]) -> (RoomState, Vec<UserId>) {
    let config = RoomConfig { num_channels: channels, ..RoomConfig::default() };
    let mut room = RoomState::new(config).unwrap();
    let ids: Vec<UserId> = (0..n).map(|i| room.add_user(&format!("n{i}")).unwrap()).collect();
    for op in ops {
        let _ = match *op {
            Op::Move(u, x, y) => room.move_user(&ids[u], Position::new(x, y).unwrap()).map(|_| ()),
            Op::Enter(u, c) => match ChannelId::new(c) {
                Some(c) => room.enter_channel(&ids[u], c).map(|_| ()),
                None => Ok(()),
            },
            Op::Exit(u) => room.exit_channel(&ids[u]).map(|_| ()),
        };
        room.check_invariants().unwrap();
    }
    (room, ids)
}

fn oracle_state(room: &RoomState) -> OracleState {
    OracleState {
        hearing_radius: room.config().hearing_radius,
        users: room
            .users()
            .map(|u| OracleUser {
                name: u.id().to_string(),
                x: u.position().x,
                y: u.position().y,
                channel: u.voice_state().channel().map(ChannelId::get),
            })
            .collect(),
    }
}

proptest! {
    #[test]
    fn recipients_match_oracle((n, c, ops) in room_history()) {
        let (room, ids) = build(n, c, &ops);
        let state = oracle_state(&room);
        for id in &ids {
            let got: BTreeSet<String> = room.compute_recipients(id).unwrap().iter().map(|u| u.to_string()).collect();
            prop_assert!(!got.contains(id.as_str()));
            prop_assert_eq!(got, oracle_recipients(&state, id.as_str()).unwrap());
        }
    }

    #[test]
    fn public_speech_ignores_listener_channel((n, c, ops) in room_history()) {
        let (room, ids) = build(n, c, &ops);
        for speaker in &ids {
            let s = room.user(speaker).unwrap();
            if s.voice_state().channel().is_some() {
                continue;
            }
            let heard = room.compute_recipients(speaker).unwrap();
            for listener in &ids {
                let l = room.user(listener).unwrap();
                let in_range = l.position().distance_to(&s.position()) <= room.config().hearing_radius;
                prop_assert_eq!(heard.contains(listener), listener != speaker && in_range);
            }
        }
    }

    #[test]
    fn recipient_computation_is_pure((n, c, ops) in room_history()) {
        let (room, ids) = build(n, c, &ops);
        let before = room.clone();
        for id in &ids {
            let a = room.compute_recipients(id).unwrap();
            let b = room.compute_recipients(id).unwrap();
            prop_assert_eq!(a, b);
        }
        prop_assert_eq!(room, before);
    }

    #[test]
    fn views_do_not_depend_on_others_channels((n, c, ops) in room_history()) {
        let (room, ids) = build(n, c, &ops);
        for observer in &ids {
            // Same history with everyone else's channel operations removed.
            let o = ids.iter().position(|x| x == observer).unwrap();
            let kept: Vec<Op> = ops
                .iter()
                .filter(|op| match op {
                    Op::Enter(u, _) | Op::Exit(u) => *u == o,
                    Op::Move(..) => true,
                })
                .cloned()
                .collect();
            let (alt, _) = build(n, c, &kept);
            prop_assert_eq!(room.observable_view(observer).unwrap(), alt.observable_view(observer).unwrap());
        }
    }

    #[test]
    fn channel_ops_only_change_the_actor((n, c, ops) in room_history(), actor in 0usize..8, target in -1i64..6) {
        let (mut room, ids) = build(n, c, &ops);
        let actor = &ids[actor % n];
        let before = room.clone();
        let _ = match ChannelId::new(target) {
            Some(ch) => room.enter_channel(actor, ch),
            None => room.exit_channel(actor),
        };
        for id in &ids {
            if id != actor {
                prop_assert_eq!(room.user(id), before.user(id));
            }
        }
    }

    #[test]
    fn client_messages_round_trip(msg in client_message()) {
        prop_assert_eq!(decode_client(encode(&msg).as_bytes()).unwrap(), msg);
    }

    #[test]
    fn server_messages_round_trip(msg in server_message()) {
        prop_assert_eq!(decode_server(encode(&msg).as_bytes()).unwrap(), msg);
    }

    #[test]
    fn decoding_arbitrary_bytes_never_panics(bytes in prop::collection::vec(any::<u8>(), 0..256)) {
        let _ = decode_client(&bytes);
        let _ = decode_server(&bytes);
    }

    #[test]
    fn decoding_mangled_messages_never_panics(msg in client_message(), cut in 0usize..200, junk in "[{}\":,a-z0-9 ]{0,8}") {
        let text = encode(&msg).into_bytes();
        let cut = cut.min(text.len());
        let mut mangled = text[..cut].to_vec();
        mangled.extend_from_slice(junk.as_bytes());
        mangled.extend_from_slice(&text[cut..]);
        let _ = decode_client(&mangled);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn generated_scenarios_pass_every_check(seed in any::<u64>()) {
        let s = generate_scenario(seed, FuzzBounds::default());
        let problems = check_scenario(&s, FaultInjection::default());
        prop_assert!(problems.is_empty(), "{:?}", problems);
    }

    #[test]
    fn in_process_runs_are_deterministic(seed in any::<u64>()) {
        let s = generate_scenario(seed, FuzzBounds::default());
        let a = run_in_process(&s, FaultInjection::default()).unwrap();
        let b = run_in_process(&s, FaultInjection::default()).unwrap();
        prop_assert_eq!(a.transcript.to_json(), b.transcript.to_json());
        prop_assert_eq!(a.history, b.history);
    }
}

fn user_id() -> impl Strategy<Value = UserId> {
    "[a-z0-9]{1,12}".prop_map(|s| UserId::new(s).unwrap())
}

fn finite() -> impl Strategy<Value = f64> {
    prop_oneof![-1e6..1e6f64, Just(0.0), Just(-0.0), Just(25.0)]
}

fn client_message() -> impl Strategy<Value = ClientMessage> {
    prop_oneof![
        (any::<u32>(), "\\PC{1,16}").prop_map(|(v, n)| ClientMessage::Hello { proto_version: v, display_name: n }),
        "[a-z]{1,8}".prop_map(|r| ClientMessage::JoinRoom { room_id: r }),
        (finite(), finite()).prop_map(|(x, y)| ClientMessage::Move { x, y }),
        (any::<u64>(), prop::collection::vec(any::<u8>(), 0..64)).prop_map(|(seq, payload)| ClientMessage::Speak { seq, payload }),
        any::<i64>().prop_map(|c| ClientMessage::EnterChannel { channel: c }),
        Just(ClientMessage::ExitChannel {}),
        any::<u64>().prop_map(|n| ClientMessage::Ping { nonce: n }),
    ]
}

fn server_message() -> impl Strategy<Value = ServerMessage> {
    let effect = prop_oneof![Just(AckEffect::Join), Just(AckEffect::Leave), Just(AckEffect::Switch)];
    prop_oneof![
        (user_id(), any::<bool>()).prop_map(|(id, cfg)| ServerMessage::Welcome {
            user_id: id,
            room_config: cfg.then(|| (&RoomConfig::default()).into()),
        }),
        prop::collection::vec((user_id(), "[A-Za-z ]{1,8}", finite(), finite()), 0..4).prop_map(|users| {
            ServerMessage::RoomState {
                users: users
                    .into_iter()
                    .map(|(user_id, display_name, x, y)| RosterEntry { user_id, display_name, x, y })
                    .collect(),
            }
        }),
        (user_id(), "[A-Za-z]{1,8}", finite(), finite())
            .prop_map(|(user_id, display_name, x, y)| ServerMessage::UserJoined { user_id, display_name, x, y }),
        user_id().prop_map(|user_id| ServerMessage::UserLeft { user_id }),
        (user_id(), finite(), finite()).prop_map(|(user_id, x, y)| ServerMessage::UserMoved { user_id, x, y }),
        (user_id(), any::<u64>(), prop::collection::vec(any::<u8>(), 0..64))
            .prop_map(|(speaker_id, seq, payload)| ServerMessage::Audio { speaker_id, seq, payload }),
        (prop::option::of(1u32..=7), effect).prop_map(|(channel, effect)| ServerMessage::ChannelAck { channel, effect }),
        (prop::sample::select(ErrorCode::ALL.to_vec()), "[a-z ]{0,16}")
            .prop_map(|(code, message)| ServerMessage::Error { code, message }),
        any::<u64>().prop_map(|nonce| ServerMessage::Pong { nonce }),
    ]
}
