#ifndef THPN_H
#define THPN_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stddef.h>
#include <stdint.h>

// Result codes.
typedef enum ThpnStatus {
  THPN_STATUS_OK = 0,
  THPN_STATUS_NULL_ARGUMENT = 1,
  THPN_STATUS_INVALID_UTF8 = 2,
  THPN_STATUS_USAGE = 3,
  THPN_STATUS_DATA = 4,
  THPN_STATUS_INCOMPATIBLE = 5,
  THPN_STATUS_INTERNAL = 6,
} ThpnStatus;

// Opaque chat session.
typedef struct ThpnSession ThpnSession;

// Corpus-level scores of a hypothesis set.
typedef struct ThpnCorpusMetrics {
  double bleu;
  double per_response_accuracy;
} ThpnCorpusMetrics;

// Message of the last failed call on this thread; empty after a success.
// Valid until the next library call on the same thread.
const char *thpn_last_error(void);

// Library version, statically allocated.
const char *thpn_version(void);

// Opens a session from a checkpoint. `train_path` (JSON lines or bAbI
// text) supplies the guidance repository and entity lexicon; pass null to
// chat without guidance.
//
// # Safety
// String arguments must be null or NUL-terminated; `out` must be writable.
enum ThpnStatus thpn_session_open(const char *checkpoint_path,
                                  const char *train_path,
                                  struct ThpnSession **out);

// Releases a session. Null is ignored.
//
// # Safety
// `s` must be null or a pointer from [`thpn_session_open`] not yet freed.
void thpn_session_free(struct ThpnSession *s);

// Answers one user utterance. `*out_json` receives
// `{"text", "retrieved", "generated"}`; free it with [`thpn_string_free`].
//
// # Safety
// `s` must be a live session; `utterance` NUL-terminated; `out_json`
// writable.
enum ThpnStatus thpn_session_respond(struct ThpnSession *s, const char *utterance, char **out_json);

// Adds a `(subject, relation, object)` triple to the session KB.
//
// # Safety
// `s` must be a live session; strings NUL-terminated.
enum ThpnStatus thpn_session_add_kb(struct ThpnSession *s,
                                    const char *subject,
                                    const char *relation,
                                    const char *object);

// Clears the dialogue history; the KB is kept.
//
// # Safety
// `s` must be a live session.
enum ThpnStatus thpn_session_reset(struct ThpnSession *s);

// Number of utterances (both speakers) in the session history.
//
// # Safety
// `s` must be a live session; `out` writable.
enum ThpnStatus thpn_session_history_len(struct ThpnSession *s, size_t *out);

// Corpus BLEU and per-response accuracy of `n` whitespace-tokenised
// hypotheses against their references.
//
// # Safety
// `references` and `hypotheses` must each point to `n` NUL-terminated
// strings; `out` must be writable.
enum ThpnStatus thpn_corpus_metrics(const char *const *references,
                                    const char *const *hypotheses,
                                    size_t n,
                                    struct ThpnCorpusMetrics *out);

// Frees a string returned by this library. Null is ignored.
//
// # Safety
// `s` must be null or a string from this library not yet freed.
void thpn_string_free(char *s);

#endif  /* THPN_H */
