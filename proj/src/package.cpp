// Copyright mptee contributors.
// Licensed under the Apache License, Version 2.0, see LICENSE for details.
// SPDX-License-Identifier: Apache-2.0
#include "mptee/package.hpp"

#include <cassert>

#include "mptee/serial.hpp"

namespace mptee::pkg {

PackageIdentity make_package(PackageId id, SimRng& rng, uint32_t fw_version) {
  PackageIdentity p;
  p.package_id = id;
  p.prov_root_key = crypto::SymmetricKey::random(rng, "prov-root");
  p.seal_root_key = crypto::SymmetricKey::random(rng, "seal-root");
  assert(p.prov_root_key != p.seal_root_key);
  p.signing_identity = crypto::keypair_from_seed(crypto::kdf(p.prov_root_key, label::kSigIdentity, {}));
  p.fw_version = fw_version;
  return p;
}

Bytes PlatformKeys::serialize() const {
  ByteWriter w;
  w.fixed(platform_prov_root.bytes());
  w.fixed(platform_seal_root.bytes());
  w.fixed(platform_instance_id);
  return w.take();
}

std::optional<PlatformKeys> PlatformKeys::deserialize(ByteView data) {
  ByteReader r(data);
  PlatformKeys k;
  k.platform_prov_root = crypto::SymmetricKey(r.fixed<kSymmetricKeyBytes>(), "platform-prov-root");
  k.platform_seal_root = crypto::SymmetricKey(r.fixed<kSymmetricKeyBytes>(), "platform-seal-root");
  k.platform_instance_id = r.fixed<16>();
  if (!r.done()) return std::nullopt;
  return k;
}

bool PlatformKeys::operator==(const PlatformKeys& o) const {
  return platform_prov_root == o.platform_prov_root && platform_seal_root == o.platform_seal_root &&
         array_eq(platform_instance_id, o.platform_instance_id);
}

Bytes ServiceBinding::serialize() const {
  ByteWriter w;
  w.u32(service_id);
  w.fixed(certificate_key);
  w.fixed(escrow_key);
  return w.take();
}

std::optional<ServiceBinding> ServiceBinding::deserialize(ByteView data) {
  ByteReader r(data);
  ServiceBinding b;
  b.service_id = r.u32();
  b.certificate_key = r.fixed<kSigPublicBytes>();
  b.escrow_key = r.fixed<kDhPublicBytes>();
  if (!r.done()) return std::nullopt;
  return b;
}

Bytes BlobContents::serialize() const {
  ByteWriter w;
  w.bytes(platform.serialize());
  w.u32(static_cast<uint32_t>(master_comms.size()));
  for (const auto& [peer, key] : master_comms) {
    w.u32(peer);
    w.fixed(key.bytes());
  }
  w.fixed(locked_config_digest);
  w.bytes(service.serialize());
  return w.take();
}

std::optional<BlobContents> BlobContents::deserialize(ByteView data) {
  ByteReader r(data);
  BlobContents c;
  auto platform = PlatformKeys::deserialize(r.bytes());
  uint32_t n = r.u32();
  for (uint32_t i = 0; i < n && r.ok(); ++i) {
    PackageId peer = r.u32();
    c.master_comms.emplace(peer, crypto::SymmetricKey(r.fixed<kSymmetricKeyBytes>(), label::kMasterComms));
  }
  c.locked_config_digest = r.fixed<kDigestBytes>();
  auto service = ServiceBinding::deserialize(r.bytes());
  if (!r.done() || !platform || !service) return std::nullopt;
  c.platform = *platform;
  c.service = *service;
  return c;
}

Bytes KeyBlob::serialize() const {
  ByteWriter w;
  w.u32(owner_package_id);
  w.u32(fw_version_tag);
  w.bytes(sealed.serialize());
  return w.take();
}

std::optional<KeyBlob> KeyBlob::deserialize(ByteView data) {
  ByteReader r(data);
  KeyBlob b;
  b.owner_package_id = r.u32();
  b.fw_version_tag = r.u32();
  auto sealed = crypto::SealedBox::deserialize(r.bytes());
  if (!r.done() || !sealed) return std::nullopt;
  b.sealed = *sealed;
  return b;
}

crypto::SigningKeyPair derive_pck(const crypto::SymmetricKey& prov_root, uint32_t tcb_level) {
  ByteWriter ctx;
  ctx.u32(tcb_level);
  return crypto::keypair_from_seed(crypto::kdf(prov_root, label::kPck, ctx.data()));
}

namespace {
crypto::SymmetricKey blob_seal_key(const PackageIdentity& pkg) {
  ByteWriter ctx;
  ctx.u32(pkg.fw_version);
  return crypto::kdf(pkg.seal_root_key, label::kBlobSeal, ctx.data());
}

Bytes blob_aad(PackageId owner, uint32_t fw_version) {
  ByteWriter w;
  w.u32(owner);
  w.u32(fw_version);
  return w.take();
}
}  // namespace

KeyBlob seal_key_blob(const PackageIdentity& pkg, const BlobContents& contents, SimRng& rng) {
  KeyBlob blob;
  blob.owner_package_id = pkg.package_id;
  blob.fw_version_tag = pkg.fw_version;
  auto nonce = rng.array<kSealNonceBytes>();
  blob.sealed = crypto::aead_seal(blob_seal_key(pkg), nonce,
                                  blob_aad(pkg.package_id, pkg.fw_version), contents.serialize());
  return blob;
}

std::optional<BlobContents> open_key_blob(const PackageIdentity& pkg, const KeyBlob& blob) {
  // The seal key is derived from the package's *current* firmware version;
  // a bumped firmware cannot reproduce the key, which is what forces the
  // re-establishment fallback.
  auto plain = crypto::aead_open(blob_seal_key(pkg), blob.sealed,
                                 blob_aad(blob.owner_package_id, blob.fw_version_tag));
  if (!plain) return std::nullopt;
  if (blob.owner_package_id != pkg.package_id) return std::nullopt;
  return BlobContents::deserialize(*plain);
}

Result<crypto::SymmetricKey, KeyError> get_key(const PackageIdentity&,
                                               const std::optional<PlatformKeys>& platform,
                                               const KeyRequest& req) {
  using R = Result<crypto::SymmetricKey, KeyError>;
  if (!platform) return R::err(KeyError::SgxNotEnabled);
  ByteWriter ctx;
  ctx.u8(static_cast<uint8_t>(req.key_class));
  ctx.u32(req.tcb_level);
  switch (req.key_class) {
    case KeyClass::Seal:
      // Only seal-class keys bind the requesting enclave's measurement.
      ctx.fixed(req.requester_measurement);
      return R::ok(crypto::kdf(platform->platform_seal_root, label::kKeySeal, ctx.data()));
    case KeyClass::Provisioning:
      return R::ok(crypto::kdf(platform->platform_prov_root, label::kKeyProv, ctx.data()));
    case KeyClass::AttestationSeed:
      return R::ok(crypto::kdf(platform->platform_prov_root, label::kKeyAttestSeed, ctx.data()));
  }
  return R::err(KeyError::SgxNotEnabled);
}

}  // namespace mptee::pkg
