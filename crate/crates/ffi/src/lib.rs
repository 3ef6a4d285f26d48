//! C ABI over the hushhub room model and wire codec.
//!
//! Rooms are opaque `HushRoom` handles. Every fallible call returns a
//! `HushStatus`; results come back through out-pointers. Strings handed out
//! by this library are NUL-terminated UTF-8 and must be released with
//! `hush_string_free`. Panics never cross the boundary: they surface as
//! `HUSH_STATUS_INTERNAL`.

use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};

use hushhub::protocol::decode_client;
use hushhub::{ChannelId, EffectKind, Position, RoomConfig, RoomError, RoomState, UserId};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HushStatus {
    Ok = 0,
    NullArgument = 1,
    InvalidUtf8 = 2,
    BadConfig = 3,
    RoomFull = 4,
    UnknownUser = 5,
    DuplicateUser = 6,
    InvalidChannel = 7,
    NotInChannel = 8,
    NonFiniteCoordinate = 9,
    BadMessage = 10,
    Internal = 99,
}

/// What an enter or exit did for the acting user.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HushEffect {
    Join = 0,
    Leave = 1,
    Switch = 2,
}

/// A room: users, positions and private channel membership.
pub struct HushRoom {
    state: RoomState,
}

impl From<&RoomError> for HushStatus {
    fn from(e: &RoomError) -> Self {
        match e {
            RoomError::RoomFull { .. } => HushStatus::RoomFull,
            RoomError::UnknownUser(_) => HushStatus::UnknownUser,
            RoomError::DuplicateUser(_) => HushStatus::DuplicateUser,
            RoomError::InvalidChannel { .. } => HushStatus::InvalidChannel,
            RoomError::NotInChannel(_) => HushStatus::NotInChannel,
            RoomError::NonFiniteCoordinate => HushStatus::NonFiniteCoordinate,
        }
    }
}

fn guard(f: impl FnOnce() -> Result<(), HushStatus>) -> HushStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => HushStatus::Ok,
        Ok(Err(status)) => status,
        Err(_) => HushStatus::Internal,
    }
}

unsafe fn text<'a>(p: *const c_char) -> Result<&'a str, HushStatus> {
    if p.is_null() {
        return Err(HushStatus::NullArgument);
    }
    CStr::from_ptr(p).to_str().map_err(|_| HushStatus::InvalidUtf8)
}

unsafe fn user(p: *const c_char) -> Result<UserId, HushStatus> {
    UserId::new(text(p)?).map_err(|_| HushStatus::UnknownUser)
}

unsafe fn room<'a>(p: *mut HushRoom) -> Result<&'a mut HushRoom, HushStatus> {
    p.as_mut().ok_or(HushStatus::NullArgument)
}

unsafe fn give_string(out: *mut *mut c_char, s: String) -> Result<(), HushStatus> {
    if out.is_null() {
        return Err(HushStatus::NullArgument);
    }
    let c = CString::new(s).map_err(|_| HushStatus::Internal)?;
    *out = c.into_raw();
    Ok(())
}

/// Creates a room. On success `*out` owns a handle for `hush_room_free`.
///
/// # Safety
/// `out` must be a valid pointer to writable storage.
#[no_mangle]
pub unsafe extern "C" fn hush_room_new(
    num_channels: u32,
    max_users: usize,
    hearing_radius: f64,
    out: *mut *mut HushRoom,
) -> HushStatus {
    guard(|| {
        if out.is_null() {
            return Err(HushStatus::NullArgument);
        }
        let config = RoomConfig {
            num_channels,
            max_users,
            hearing_radius,
            spawn: Position::ORIGIN,
        };
        let state = RoomState::new(config).map_err(|_| HushStatus::BadConfig)?;
        *out = Box::into_raw(Box::new(HushRoom { state }));
        Ok(())
    })
}

/// Creates a room with 7 channels, 10 users and a 25 m hearing radius.
///
/// # Safety
/// As for `hush_room_new`.
#[no_mangle]
pub unsafe extern "C" fn hush_room_new_default(out: *mut *mut HushRoom) -> HushStatus {
    let d = RoomConfig::default();
    hush_room_new(d.num_channels, d.max_users, d.hearing_radius, out)
}

/// Releases a room. Null is ignored.
///
/// # Safety
/// `room` must come from `hush_room_new` and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn hush_room_free(room: *mut HushRoom) {
    if !room.is_null() {
        drop(Box::from_raw(room));
    }
}

/// Adds a user at the spawn point. `*out_id` receives the new user id.
///
/// # Safety
/// `room` must be a live handle, `display_name` a NUL-terminated string and
/// `out_id` writable.
#[no_mangle]
pub unsafe extern "C" fn hush_room_add_user(
    room: *mut HushRoom,
    display_name: *const c_char,
    out_id: *mut *mut c_char,
) -> HushStatus {
    guard(|| {
        let r = self::room(room)?;
        let name = text(display_name)?;
        if out_id.is_null() {
            return Err(HushStatus::NullArgument);
        }
        let id = r.state.add_user(name).map_err(|e| HushStatus::from(&e))?;
        give_string(out_id, id.to_string())
    })
}

/// # Safety
/// `room` must be a live handle and `user_id` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn hush_room_remove_user(room: *mut HushRoom, user_id: *const c_char) -> HushStatus {
    guard(|| {
        let r = self::room(room)?;
        r.state.remove_user(&user(user_id)?).map(drop).map_err(|e| HushStatus::from(&e))
    })
}

/// Moves a user. Coordinates must be finite.
///
/// # Safety
/// `room` must be a live handle and `user_id` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn hush_room_move(room: *mut HushRoom, user_id: *const c_char, x: f64, y: f64) -> HushStatus {
    guard(|| {
        let r = self::room(room)?;
        r.state
            .move_user(&user(user_id)?, Position { x, y })
            .map_err(|e| HushStatus::from(&e))
    })
}

/// Puts a user in private channel `channel` (1-based). `out_effect` may be
/// null.
///
/// # Safety
/// `room` must be a live handle, `user_id` a NUL-terminated string and
/// `out_effect` null or writable.
#[no_mangle]
pub unsafe extern "C" fn hush_room_enter_channel(
    room: *mut HushRoom,
    user_id: *const c_char,
    channel: i64,
    out_effect: *mut HushEffect,
) -> HushStatus {
    guard(|| {
        let r = self::room(room)?;
        let id = user(user_id)?;
        let Some(c) = ChannelId::new(channel) else {
            return Err(HushStatus::InvalidChannel);
        };
        let effect = r.state.enter_channel(&id, c).map_err(|e| HushStatus::from(&e))?;
        if !out_effect.is_null() {
            *out_effect = match effect.kind {
                EffectKind::Join => HushEffect::Join,
                EffectKind::Leave => HushEffect::Leave,
                EffectKind::Switch => HushEffect::Switch,
            };
        }
        Ok(())
    })
}

/// # Safety
/// `room` must be a live handle and `user_id` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn hush_room_exit_channel(room: *mut HushRoom, user_id: *const c_char) -> HushStatus {
    guard(|| {
        let r = self::room(room)?;
        r.state.exit_channel(&user(user_id)?).map(drop).map_err(|e| HushStatus::from(&e))
    })
}

/// `*out_channel` receives the user's channel, or 0 when public.
///
/// # Safety
/// `room` must be a live handle, `user_id` a NUL-terminated string and
/// `out_channel` writable.
#[no_mangle]
pub unsafe extern "C" fn hush_room_channel_of(
    room: *mut HushRoom,
    user_id: *const c_char,
    out_channel: *mut u32,
) -> HushStatus {
    guard(|| {
        let r = self::room(room)?;
        if out_channel.is_null() {
            return Err(HushStatus::NullArgument);
        }
        let id = user(user_id)?;
        let record = r.state.user(&id).ok_or(HushStatus::UnknownUser)?;
        *out_channel = record.voice_state().channel().map_or(0, ChannelId::get);
        Ok(())
    })
}

/// `*out_json` receives a JSON array of the user ids that hear `speaker`.
///
/// # Safety
/// `room` must be a live handle, `speaker` a NUL-terminated string and
/// `out_json` writable.
#[no_mangle]
pub unsafe extern "C" fn hush_room_recipients_json(
    room: *mut HushRoom,
    speaker: *const c_char,
    out_json: *mut *mut c_char,
) -> HushStatus {
    guard(|| {
        let r = self::room(room)?;
        let heard = r
            .state
            .compute_recipients(&user(speaker)?)
            .map_err(|e| HushStatus::from(&e))?;
        give_string(out_json, serde_json::to_string(&heard).map_err(|_| HushStatus::Internal)?)
    })
}

/// `*out_json` receives what `observer` may see of the room, as JSON.
///
/// # Safety
/// `room` must be a live handle, `observer` a NUL-terminated string and
/// `out_json` writable.
#[no_mangle]
pub unsafe extern "C" fn hush_room_view_json(
    room: *mut HushRoom,
    observer: *const c_char,
    out_json: *mut *mut c_char,
) -> HushStatus {
    guard(|| {
        let r = self::room(room)?;
        let view = r
            .state
            .observable_view(&user(observer)?)
            .map_err(|e| HushStatus::from(&e))?;
        give_string(out_json, serde_json::to_string(&view).map_err(|_| HushStatus::Internal)?)
    })
}

/// Checks one client frame against the wire schema. On success `*out_type`
/// (if not null) receives the message type, e.g. `"SPEAK"`.
///
/// # Safety
/// `frame` must be a NUL-terminated string and `out_type` null or writable.
#[no_mangle]
pub unsafe extern "C" fn hush_validate_client_frame(frame: *const c_char, out_type: *mut *mut c_char) -> HushStatus {
    guard(|| {
        if frame.is_null() {
            return Err(HushStatus::NullArgument);
        }
        let msg = decode_client(CStr::from_ptr(frame).to_bytes()).map_err(|_| HushStatus::BadMessage)?;
        if !out_type.is_null() {
            give_string(out_type, msg.kind().to_owned())?;
        }
        Ok(())
    })
}

/// Releases a string returned by this library. Null is ignored.
///
/// # Safety
/// `s` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn hush_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Static, NUL-terminated name of a status code.
#[no_mangle]
pub extern "C" fn hush_status_str(status: HushStatus) -> *const c_char {
    let s: &'static CStr = match status {
        HushStatus::Ok => c"ok",
        HushStatus::NullArgument => c"null argument",
        HushStatus::InvalidUtf8 => c"string is not UTF-8",
        HushStatus::BadConfig => c"invalid room configuration",
        HushStatus::RoomFull => c"room is full",
        HushStatus::UnknownUser => c"unknown user",
        HushStatus::DuplicateUser => c"user already present",
        HushStatus::InvalidChannel => c"channel out of range",
        HushStatus::NotInChannel => c"user is not in a private channel",
        HushStatus::NonFiniteCoordinate => c"coordinates must be finite",
        HushStatus::BadMessage => c"frame does not match the wire schema",
        HushStatus::Internal => c"internal error",
    };
    s.as_ptr()
}
