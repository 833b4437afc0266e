// Copyright mptee contributors.
// Licensed under the Apache License, Version 2.0, see LICENSE for details.
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <cstddef>
#include <cstdint>

// Every concrete cryptographic algorithm choice lives here so it can be
// swapped in one place. All primitives are provided by libsodium.
//
//   signatures   : Ed25519
//   key exchange : X25519
//   sealing AEAD : ChaCha20-Poly1305 (IETF, 96-bit nonce, detached tag)
//   channel      : ChaCha20 counter mode + HMAC-SHA-256 tag truncated to 16 B
//   KDF          : HMAC-SHA-256(root, label || 0x00 || context)
//   digest       : SHA-256

namespace mptee {

inline constexpr size_t kSymmetricKeyBytes = 32;
inline constexpr size_t kSigPublicBytes = 32;   // Ed25519 public key
inline constexpr size_t kSigSecretBytes = 64;   // Ed25519 expanded secret
inline constexpr size_t kSignatureBytes = 64;
inline constexpr size_t kDhPublicBytes = 32;    // X25519
inline constexpr size_t kDhSecretBytes = 32;
inline constexpr size_t kSealNonceBytes = 12;   // ChaCha20-Poly1305 IETF
inline constexpr size_t kSealTagBytes = 16;
inline constexpr size_t kChannelNonceBytes = 8;  // ChaCha20 64-bit nonce
inline constexpr size_t kChannelTagBytes = 16;
inline constexpr size_t kDigestBytes = 32;

/// Memory is modeled at cache-line granularity.
inline constexpr size_t kLineBytes = 64;

/// Table-2 "Fixed Value": the all-zeros line.
inline constexpr std::array<uint8_t, kLineBytes> kFixedValueLine{};

/// Integrity-tree capacity model: one added level multiplies coverage by this.
inline constexpr uint64_t kTreeArity = 8;

namespace label {
// KDF purpose labels. kAll enumerates every label the codebase derives with;
// the crypto tests brute-force over this list.
inline constexpr const char* kSigIdentity = "sig-id";
inline constexpr const char* kPck = "pck";
inline constexpr const char* kMasterComms = "mck";
inline constexpr const char* kSessionEnc = "sess-enc";
inline constexpr const char* kSessionMac = "sess-mac";
inline constexpr const char* kLinkEnc = "link-enc";
inline constexpr const char* kLinkMac = "link-mac";
inline constexpr const char* kBlobSeal = "blob";
inline constexpr const char* kEscrow = "escrow";
inline constexpr const char* kKeySeal = "key-seal";
inline constexpr const char* kKeyProv = "key-prov";
inline constexpr const char* kKeyAttestSeed = "key-aseed";
inline constexpr const char* kPatternScan = "alias-scan";

inline constexpr const char* kAll[] = {
    kSigIdentity, kPck,      kMasterComms, kSessionEnc, kSessionMac,    kLinkEnc,
    kLinkMac,     kBlobSeal, kEscrow,      kKeySeal,    kKeyProv,       kKeyAttestSeed,
    kPatternScan,
};
}  // namespace label

namespace wire {
// Link-layer wire framing (bit-exact; see link_layer docs in README).
inline constexpr uint8_t kFlagInsecure = 0x00;
inline constexpr uint8_t kFlagSecure = 0x01;
inline constexpr size_t kHeaderBytes = 1 + 8 + 2;  // flag, counter, body_len
}  // namespace wire

}  // namespace mptee
