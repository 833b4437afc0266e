// Copyright mptee contributors.
// Licensed under the Apache License, Version 2.0, see LICENSE for details.
// SPDX-License-Identifier: Apache-2.0
#pragma once

// Deterministic cryptographic primitives used by every other module.
// No protocol logic lives here. Concrete algorithm choices are pinned in
// constants.hpp.

#include <optional>
#include <stdexcept>
#include <string>

#include "mptee/bytes.hpp"
#include "mptee/constants.hpp"
#include "mptee/rng.hpp"

namespace mptee::crypto {

/// 256-bit secret with a purpose label. The label is bookkeeping only; it is
/// never serialized and never participates in key material.
class SymmetricKey {
 public:
  SymmetricKey() : bytes_{} {}
  SymmetricKey(std::array<uint8_t, kSymmetricKeyBytes> bytes, std::string purpose)
      : bytes_(bytes), purpose_(std::move(purpose)) {}

  static SymmetricKey random(SimRng& rng, std::string purpose) {
    return SymmetricKey(rng.array<kSymmetricKeyBytes>(), std::move(purpose));
  }

  const std::array<uint8_t, kSymmetricKeyBytes>& bytes() const { return bytes_; }
  const std::string& purpose_label() const { return purpose_; }

  bool operator==(const SymmetricKey& o) const { return array_eq(bytes_, o.bytes_); }
  bool operator!=(const SymmetricKey& o) const { return !(*this == o); }

 private:
  std::array<uint8_t, kSymmetricKeyBytes> bytes_;
  std::string purpose_;
};

using VerifyKey = std::array<uint8_t, kSigPublicBytes>;
using Signature = std::array<uint8_t, kSignatureBytes>;

struct SigningKeyPair {
  std::array<uint8_t, kSigSecretBytes> secret;
  VerifyKey public_key;
};

using DhPublic = std::array<uint8_t, kDhPublicBytes>;
using DhSecret = std::array<uint8_t, kDhSecretBytes>;

struct EphemeralKeyPair {
  DhSecret secret;
  DhPublic public_key;
};

/// AEAD envelope. open succeeds iff key, nonce, ciphertext, tag and the
/// associated data are all unmodified.
struct SealedBox {
  std::array<uint8_t, kSealNonceBytes> nonce{};
  Bytes ciphertext;
  std::array<uint8_t, kSealTagBytes> tag{};
  Digest aad_digest{};

  Bytes serialize() const;
  static std::optional<SealedBox> deserialize(ByteView data);
};

/// Thrown when the debug nonce registry observes a (key, nonce) pair twice.
struct NonceReuse : std::logic_error {
  NonceReuse() : std::logic_error("AEAD nonce reused under one key") {}
};

/// Thrown on an identity/low-order peer DH input.
struct DegenerateKeyExchange : std::runtime_error {
  DegenerateKeyExchange() : std::runtime_error("degenerate Diffie-Hellman peer value") {}
};

Digest sha256(ByteView data);
Digest sha256_concat(std::initializer_list<ByteView> parts);

/// HMAC-SHA-256(root, label || 0x00 || context). Pure, deterministic,
/// distinct outputs for distinct (label, context) pairs. label non-empty.
SymmetricKey kdf(const SymmetricKey& root, const std::string& label, ByteView context);

/// Deterministic Ed25519 key pair from a 32-byte seed.
SigningKeyPair keypair_from_seed(const SymmetricKey& seed);

Signature sign(const SigningKeyPair& key, ByteView message);
/// Never aborts: malformed signature bytes just verify false.
bool verify(const VerifyKey& public_key, ByteView message, const Signature& sig);

EphemeralKeyPair dh_keygen(SimRng& rng);
/// X25519. Rejects identity / all-zero shared results with
/// DegenerateKeyExchange.
SymmetricKey dh_derive(const DhSecret& secret, const DhPublic& peer_public);
/// Validation helper used by protocol code before signing a transcript.
bool dh_public_is_degenerate(const DhPublic& peer_public);

/// Nonce uniqueness is a caller contract; the registry asserts it in debug
/// builds (and wherever tests enable it explicitly).
void set_nonce_registry_enabled(bool enabled);
void reset_nonce_registry();

SealedBox aead_seal(const SymmetricKey& key, const std::array<uint8_t, kSealNonceBytes>& nonce,
                    ByteView aad, ByteView plaintext);
/// nullopt == authentication failure.
std::optional<Bytes> aead_open(const SymmetricKey& key, const SealedBox& box, ByteView aad);

// Counter-mode channel (encrypt-then-MAC): ChaCha20 keystream under enc_key
// with an 8-byte nonce, HMAC-SHA-256 under mac_key truncated to 16 bytes.
// The MAC covers aad || nonce || body. Used by the UPI crypto engine and the
// inter-package session channel.
using ChannelNonce = std::array<uint8_t, kChannelNonceBytes>;
using ChannelTag = std::array<uint8_t, kChannelTagBytes>;

ChannelNonce channel_nonce(uint8_t direction, uint64_t counter);
Bytes ctr_encrypt(const SymmetricKey& enc_key, const ChannelNonce& nonce, ByteView plaintext);
ChannelTag ctr_tag(const SymmetricKey& mac_key, ByteView aad, const ChannelNonce& nonce, ByteView body);
bool ctr_tag_ok(const SymmetricKey& mac_key, ByteView aad, const ChannelNonce& nonce, ByteView body,
                const ChannelTag& tag);

}  // namespace mptee::crypto
