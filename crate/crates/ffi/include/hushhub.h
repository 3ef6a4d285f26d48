#ifndef HUSHHUB_H
#define HUSHHUB_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum HushStatus {
  HUSH_STATUS_OK = 0,
  HUSH_STATUS_NULL_ARGUMENT = 1,
  HUSH_STATUS_INVALID_UTF8 = 2,
  HUSH_STATUS_BAD_CONFIG = 3,
  HUSH_STATUS_ROOM_FULL = 4,
  HUSH_STATUS_UNKNOWN_USER = 5,
  HUSH_STATUS_DUPLICATE_USER = 6,
  HUSH_STATUS_INVALID_CHANNEL = 7,
  HUSH_STATUS_NOT_IN_CHANNEL = 8,
  HUSH_STATUS_NON_FINITE_COORDINATE = 9,
  HUSH_STATUS_BAD_MESSAGE = 10,
  HUSH_STATUS_INTERNAL = 99,
} HushStatus;

/**
 * What an enter or exit did for the acting user.
 */
typedef enum HushEffect {
  HUSH_EFFECT_JOIN = 0,
  HUSH_EFFECT_LEAVE = 1,
  HUSH_EFFECT_SWITCH = 2,
} HushEffect;

/**
 * A room: users, positions and private channel membership.
 */
typedef struct HushRoom HushRoom;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Creates a room. On success `*out` owns a handle for `hush_room_free`.
 *
 * # Safety
 * `out` must be a valid pointer to writable storage.
 */
enum HushStatus hush_room_new(uint32_t num_channels,
                              size_t max_users,
                              double hearing_radius,
                              struct HushRoom **out);

/**
 * Creates a room with 7 channels, 10 users and a 25 m hearing radius.
 *
 * # Safety
 * As for `hush_room_new`.
 */
enum HushStatus hush_room_new_default(struct HushRoom **out);

/**
 * Releases a room. Null is ignored.
 *
 * # Safety
 * `room` must come from `hush_room_new` and not be used afterwards.
 */
void hush_room_free(struct HushRoom *room);

/**
 * Adds a user at the spawn point. `*out_id` receives the new user id.
 *
 * # Safety
 * `room` must be a live handle, `display_name` a NUL-terminated string and
 * `out_id` writable.
 */
enum HushStatus hush_room_add_user(struct HushRoom *room, const char *display_name, char **out_id);

/**
 * # Safety
 * `room` must be a live handle and `user_id` a NUL-terminated string.
 */
enum HushStatus hush_room_remove_user(struct HushRoom *room, const char *user_id);

/**
 * Moves a user. Coordinates must be finite.
 *
 * # Safety
 * `room` must be a live handle and `user_id` a NUL-terminated string.
 */
enum HushStatus hush_room_move(struct HushRoom *room, const char *user_id, double x, double y);

/**
 * Puts a user in private channel `channel` (1-based). `out_effect` may be
 * null.
 *
 * # Safety
 * `room` must be a live handle, `user_id` a NUL-terminated string and
 * `out_effect` null or writable.
 */
enum HushStatus hush_room_enter_channel(struct HushRoom *room,
                                        const char *user_id,
                                        int64_t channel,
                                        enum HushEffect *out_effect);

/**
 * # Safety
 * `room` must be a live handle and `user_id` a NUL-terminated string.
 */
enum HushStatus hush_room_exit_channel(struct HushRoom *room, const char *user_id);

/**
 * `*out_channel` receives the user's channel, or 0 when public.
 *
 * # Safety
 * `room` must be a live handle, `user_id` a NUL-terminated string and
 * `out_channel` writable.
 */
enum HushStatus hush_room_channel_of(struct HushRoom *room,
                                     const char *user_id,
                                     uint32_t *out_channel);

/**
 * `*out_json` receives a JSON array of the user ids that hear `speaker`.
 *
 * # Safety
 * `room` must be a live handle, `speaker` a NUL-terminated string and
 * `out_json` writable.
 */
enum HushStatus hush_room_recipients_json(struct HushRoom *room,
                                          const char *speaker,
                                          char **out_json);

/**
 * `*out_json` receives what `observer` may see of the room, as JSON.
 *
 * # Safety
 * `room` must be a live handle, `observer` a NUL-terminated string and
 * `out_json` writable.
 */
enum HushStatus hush_room_view_json(struct HushRoom *room, const char *observer, char **out_json);

/**
 * Checks one client frame against the wire schema. On success `*out_type`
 * (if not null) receives the message type, e.g. `"SPEAK"`.
 *
 * # Safety
 * `frame` must be a NUL-terminated string and `out_type` null or writable.
 */
enum HushStatus hush_validate_client_frame(const char *frame, char **out_type);

/**
 * Releases a string returned by this library. Null is ignored.
 *
 * # Safety
 * `s` must come from this library and not be used afterwards.
 */
void hush_string_free(char *s);

/**
 * Static, NUL-terminated name of a status code.
 */
const char *hush_status_str(enum HushStatus status);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* HUSHHUB_H */
