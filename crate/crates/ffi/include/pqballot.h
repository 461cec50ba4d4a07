#ifndef PQBALLOT_H
#define PQBALLOT_H

#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>

// Parameter set selector.
#define PQB_PROFILE_F512 512

#define PQB_PROFILE_F1024 1024

// Result code of every exported function.
typedef enum {
  PQB_STATUS_OK = 0,
  PQB_STATUS_NULL_ARGUMENT = 1,
  PQB_STATUS_INVALID_ARGUMENT = 2,
  // The output buffer is shorter than the value; the required length
  // was written to the length out-pointer.
  PQB_STATUS_BUFFER_TOO_SMALL = 3,
  PQB_STATUS_MALFORMED_ENCODING = 4,
  PQB_STATUS_KEY_FILE = 5,
  PQB_STATUS_IO = 6,
  PQB_STATUS_CRYPTO_FAILURE = 7,
  PQB_STATUS_PANIC = 8,
} PqbStatus;

// Opaque authority or voter keypair.
typedef struct PqbKeyPair PqbKeyPair;

// Outcome of a full ledger verification.
typedef struct {
  bool valid;
  uint64_t length;
  // Index of the first failing block, or -1 when the chain is valid.
  int64_t first_bad_index;
} PqbChainReport;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Static description of a status code. Never null.
const char *pqb_status_str(PqbStatus status);

// Copies the calling thread's last failure message, NUL-terminated and
// truncated to fit, into `buf`. Returns the untruncated length.
//
// # Safety
// `buf` must be null or point to `capacity` writable bytes.
size_t pqb_last_error(char *buf, size_t capacity);

// Public key length in bytes for `profile`, or 0 if unknown.
size_t pqb_public_key_len(uint32_t profile_code);

// Encoded signature length in bytes for `profile`, or 0 if unknown.
size_t pqb_signature_len(uint32_t profile_code);

// Generates a keypair. With a non-null `seed` (32 bytes) the result is
// deterministic. Free with [`pqb_keypair_free`].
//
// # Safety
// `seed` must be null or point to 32 readable bytes; `out` must be
// writable.
PqbStatus pqb_keypair_generate(uint32_t profile_code, const uint8_t *seed, PqbKeyPair **out);

// Opens a passphrase-protected key file. Free with [`pqb_keypair_free`].
//
// # Safety
// `path` and `passphrase` must be NUL-terminated strings; `out` must be
// writable.
PqbStatus pqb_keypair_load(const char *path, const char *passphrase, PqbKeyPair **out);

// Releases a keypair; the secret is zeroized. Null is a no-op.
//
// # Safety
// `keys` must be null or a handle from this library not yet freed.
void pqb_keypair_free(PqbKeyPair *keys);

// Profile code of a keypair, or 0 for null.
//
// # Safety
// `keys` must be null or a live handle.
uint32_t pqb_keypair_profile(const PqbKeyPair *keys);

// Writes the encoded public key.
//
// # Safety
// `keys` must be a live handle; `out` must hold `capacity` bytes;
// `out_len` must be writable.
PqbStatus pqb_keypair_public_key(const PqbKeyPair *keys,
                                 uint8_t *out,
                                 size_t capacity,
                                 size_t *out_len);

// Signs `message` and writes the fixed-length encoded signature.
//
// # Safety
// `keys` must be a live handle; `message` must hold `message_len`
// bytes; `out` must hold `capacity` bytes; `out_len` must be writable.
PqbStatus pqb_sign(const PqbKeyPair *keys,
                   const uint8_t *message,
                   size_t message_len,
                   uint8_t *out,
                   size_t capacity,
                   size_t *out_len);

// Sets `*valid` to whether `signature` verifies over `message`. A
// well-formed but wrong signature is `Ok` with `*valid = false`.
//
// # Safety
// Each pointer must hold its stated length; `valid` must be writable.
PqbStatus pqb_verify(uint32_t profile_code,
                     const uint8_t *public_key_bytes,
                     size_t public_key_len,
                     const uint8_t *message,
                     size_t message_len,
                     const uint8_t *signature,
                     size_t signature_len,
                     bool *valid);

// Normalizes a raw embedding and writes its 32-byte digest.
//
// # Safety
// `raw` must hold `len` doubles; `digest` must hold 32 writable bytes.
PqbStatus pqb_embedding_digest(const double *raw, size_t len, uint8_t *digest);

// Cosine similarity of two raw embeddings after normalization.
//
// # Safety
// `a` and `b` must each hold `len` doubles; `similarity` must be
// writable.
PqbStatus pqb_cosine_similarity(const double *a, const double *b, size_t len, double *similarity);

// Verifies a ledger file under the authority public key and the default
// gas model. The file is only read; a torn tail is ignored, not repaired.
//
// # Safety
// `path` must be a NUL-terminated string; `public_key_bytes` must hold
// `public_key_len` bytes; `report` must be writable.
PqbStatus pqb_verify_chain_file(const char *path,
                                uint32_t profile_code,
                                const uint8_t *public_key_bytes,
                                size_t public_key_len,
                                PqbChainReport *report);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* PQBALLOT_H */
