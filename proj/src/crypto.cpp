// Copyright mptee contributors.
// Licensed under the Apache License, Version 2.0, see LICENSE for details.
// SPDX-License-Identifier: Apache-2.0
#include "mptee/crypto.hpp"

#include <sodium.h>

#include <cstring>
#include <mutex>
#include <set>
#include <utility>

#include "mptee/serial.hpp"

namespace mptee::crypto {

namespace {

void ensure_sodium() {
  if (sodium_init() < 0) throw std::runtime_error("libsodium init failed");
}

// Per-key nonce registry. Keys are tracked by digest so secret bytes never
// sit in a long-lived container.
struct NonceRegistry {
  std::mutex mu;
  std::set<std::pair<Digest, std::array<uint8_t, kSealNonceBytes>>> seen;
#ifdef NDEBUG
  bool enabled = false;
#else
  bool enabled = true;
#endif
};

NonceRegistry& registry() {
  static NonceRegistry r;
  return r;
}

}  // namespace

void set_nonce_registry_enabled(bool enabled) {
  std::lock_guard lock(registry().mu);
  registry().enabled = enabled;
}

void reset_nonce_registry() {
  std::lock_guard lock(registry().mu);
  registry().seen.clear();
}

Digest sha256(ByteView data) {
  ensure_sodium();
  Digest out;
  crypto_hash_sha256(out.data(), data.data(), data.size());
  return out;
}

Digest sha256_concat(std::initializer_list<ByteView> parts) {
  ensure_sodium();
  crypto_hash_sha256_state st;
  crypto_hash_sha256_init(&st);
  for (const auto& p : parts) crypto_hash_sha256_update(&st, p.data(), p.size());
  Digest out;
  crypto_hash_sha256_final(&st, out.data());
  return out;
}

SymmetricKey kdf(const SymmetricKey& root, const std::string& label, ByteView context) {
  if (label.empty()) throw std::invalid_argument("kdf label must be non-empty");
  ensure_sodium();
  crypto_auth_hmacsha256_state st;
  crypto_auth_hmacsha256_init(&st, root.bytes().data(), root.bytes().size());
  crypto_auth_hmacsha256_update(&st, reinterpret_cast<const uint8_t*>(label.data()), label.size());
  uint8_t sep = 0;
  crypto_auth_hmacsha256_update(&st, &sep, 1);
  crypto_auth_hmacsha256_update(&st, context.data(), context.size());
  std::array<uint8_t, kSymmetricKeyBytes> out;
  crypto_auth_hmacsha256_final(&st, out.data());
  return SymmetricKey(out, label);
}

SigningKeyPair keypair_from_seed(const SymmetricKey& seed) {
  ensure_sodium();
  SigningKeyPair kp;
  crypto_sign_seed_keypair(kp.public_key.data(), kp.secret.data(), seed.bytes().data());
  return kp;
}

Signature sign(const SigningKeyPair& key, ByteView message) {
  ensure_sodium();
  Signature sig;
  crypto_sign_detached(sig.data(), nullptr, message.data(), message.size(), key.secret.data());
  return sig;
}

bool verify(const VerifyKey& public_key, ByteView message, const Signature& sig) {
  ensure_sodium();
  return crypto_sign_verify_detached(sig.data(), message.data(), message.size(), public_key.data()) == 0;
}

EphemeralKeyPair dh_keygen(SimRng& rng) {
  ensure_sodium();
  EphemeralKeyPair kp;
  rng.fill(kp.secret.data(), kp.secret.size());
  crypto_scalarmult_base(kp.public_key.data(), kp.secret.data());
  return kp;
}

bool dh_public_is_degenerate(const DhPublic& peer_public) {
  // The representative degenerate input is the identity element; libsodium
  // additionally rejects every small-order point inside crypto_scalarmult by
  // checking for an all-zero shared secret.
  static const DhPublic zero{};
  return array_eq(peer_public, zero);
}

SymmetricKey dh_derive(const DhSecret& secret, const DhPublic& peer_public) {
  ensure_sodium();
  if (dh_public_is_degenerate(peer_public)) throw DegenerateKeyExchange();
  std::array<uint8_t, kSymmetricKeyBytes> shared;
  if (crypto_scalarmult(shared.data(), secret.data(), peer_public.data()) != 0) {
    throw DegenerateKeyExchange();
  }
  return SymmetricKey(shared, "dh-shared");
}

Bytes SealedBox::serialize() const {
  ByteWriter w;
  w.fixed(nonce);
  w.bytes(ciphertext);
  w.fixed(tag);
  w.fixed(aad_digest);
  return w.take();
}

std::optional<SealedBox> SealedBox::deserialize(ByteView data) {
  ByteReader r(data);
  SealedBox box;
  box.nonce = r.fixed<kSealNonceBytes>();
  box.ciphertext = r.bytes();
  box.tag = r.fixed<kSealTagBytes>();
  box.aad_digest = r.fixed<kDigestBytes>();
  if (!r.done()) return std::nullopt;
  return box;
}

SealedBox aead_seal(const SymmetricKey& key, const std::array<uint8_t, kSealNonceBytes>& nonce,
                    ByteView aad, ByteView plaintext) {
  ensure_sodium();
  {
    auto& reg = registry();
    std::lock_guard lock(reg.mu);
    if (reg.enabled) {
      if (!reg.seen.emplace(sha256(key.bytes()), nonce).second) throw NonceReuse();
    }
  }
  SealedBox box;
  box.nonce = nonce;
  box.ciphertext.resize(plaintext.size());
  unsigned long long maclen = 0;
  crypto_aead_chacha20poly1305_ietf_encrypt_detached(
      box.ciphertext.data(), box.tag.data(), &maclen, plaintext.data(), plaintext.size(),
      aad.data(), aad.size(), nullptr, nonce.data(), key.bytes().data());
  box.aad_digest = sha256(aad);
  return box;
}

std::optional<Bytes> aead_open(const SymmetricKey& key, const SealedBox& box, ByteView aad) {
  ensure_sodium();
  if (!array_eq(box.aad_digest, sha256(aad))) return std::nullopt;
  Bytes plaintext(box.ciphertext.size());
  int rc = crypto_aead_chacha20poly1305_ietf_decrypt_detached(
      plaintext.data(), nullptr, box.ciphertext.data(), box.ciphertext.size(), box.tag.data(),
      aad.data(), aad.size(), box.nonce.data(), key.bytes().data());
  if (rc != 0) return std::nullopt;
  return plaintext;
}

ChannelNonce channel_nonce(uint8_t direction, uint64_t counter) {
  // direction lives in the top byte so the two directions of one link can
  // never collide on a nonce.
  ChannelNonce n{};
  for (int i = 0; i < 7; ++i) n[i] = static_cast<uint8_t>(counter >> (8 * i));
  n[7] = direction;
  return n;
}

Bytes ctr_encrypt(const SymmetricKey& enc_key, const ChannelNonce& nonce, ByteView plaintext) {
  ensure_sodium();
  Bytes out(plaintext.begin(), plaintext.end());
  if (!out.empty()) {
    crypto_stream_chacha20_xor(out.data(), out.data(), out.size(), nonce.data(),
                               enc_key.bytes().data());
  }
  return out;
}

ChannelTag ctr_tag(const SymmetricKey& mac_key, ByteView aad, const ChannelNonce& nonce,
                   ByteView body) {
  ensure_sodium();
  crypto_auth_hmacsha256_state st;
  crypto_auth_hmacsha256_init(&st, mac_key.bytes().data(), mac_key.bytes().size());
  crypto_auth_hmacsha256_update(&st, aad.data(), aad.size());
  crypto_auth_hmacsha256_update(&st, nonce.data(), nonce.size());
  crypto_auth_hmacsha256_update(&st, body.data(), body.size());
  std::array<uint8_t, 32> full;
  crypto_auth_hmacsha256_final(&st, full.data());
  ChannelTag tag;
  std::memcpy(tag.data(), full.data(), tag.size());
  return tag;
}

bool ctr_tag_ok(const SymmetricKey& mac_key, ByteView aad, const ChannelNonce& nonce, ByteView body,
                const ChannelTag& tag) {
  ChannelTag expect = ctr_tag(mac_key, aad, nonce, body);
  return sodium_memcmp(expect.data(), tag.data(), tag.size()) == 0;
}

}  // namespace mptee::crypto
