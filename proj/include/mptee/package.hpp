// Copyright mptee contributors.
// Licensed under the Apache License, Version 2.0, see LICENSE for details.
// SPDX-License-Identifier: Apache-2.0
#pragma once

// One simulated CPU package: per-part hardware root keys, the derived
// signing identity, sealed key blobs, and the key-request facility that
// software on the platform sees.

#include <map>
#include <optional>

#include "mptee/crypto.hpp"
#include "mptee/result.hpp"

namespace mptee::pkg {

/// Per-part hardware state. Immutable after construction except fw_version,
/// which a scenario bumps to model a microcode update.
struct PackageIdentity {
  PackageId package_id = 0;
  crypto::SymmetricKey prov_root_key;   // fuse Provisioning Root Key
  crypto::SymmetricKey seal_root_key;   // fuse Sealing Root Key
  crypto::SigningKeyPair signing_identity;  // derived from prov_root_key
  uint32_t fw_version = 1;
};

/// Root keys are drawn fresh from the harness rng; the signing identity is
/// the PRK-derived key pair the package uses for signed Diffie-Hellman.
PackageIdentity make_package(PackageId id, SimRng& rng, uint32_t fw_version = 1);

/// Platform-wide shared roots, generated at Platform Establishment. Every
/// member package holds a bitwise-identical copy.
struct PlatformKeys {
  crypto::SymmetricKey platform_prov_root;
  crypto::SymmetricKey platform_seal_root;
  InstanceId platform_instance_id{};

  Bytes serialize() const;
  static std::optional<PlatformKeys> deserialize(ByteView data);
  bool operator==(const PlatformKeys& o) const;
};

/// Which Registration Service this platform is bound to. Sealed into every
/// key blob: the binding is configuration that is not permitted to change.
struct ServiceBinding {
  uint32_t service_id = 0;
  crypto::VerifyKey certificate_key{};  // verifies PCK / membership certificates
  crypto::DhPublic escrow_key{};        // target of the manifest escrow

  Bytes serialize() const;
  static std::optional<ServiceBinding> deserialize(ByteView data);
};

/// What a package persists to flash, sealed under its hardware keys.
struct BlobContents {
  PlatformKeys platform;
  std::map<PackageId, crypto::SymmetricKey> master_comms;  // peer id -> key
  Digest locked_config_digest{};
  ServiceBinding service;

  Bytes serialize() const;
  static std::optional<BlobContents> deserialize(ByteView data);
};

struct KeyBlob {
  PackageId owner_package_id = 0;
  uint32_t fw_version_tag = 0;
  crypto::SealedBox sealed;

  Bytes serialize() const;
  static std::optional<KeyBlob> deserialize(ByteView data);
};

enum class KeyClass : uint8_t { Seal = 0, Provisioning = 1, AttestationSeed = 2 };

struct KeyRequest {
  KeyClass key_class = KeyClass::Seal;
  Digest requester_measurement{};
  uint32_t tcb_level = 0;
};

enum class KeyError { SgxNotEnabled };

/// TCB-bound Provisioning Certification Key. Derived identically by the
/// package (from its loaded platform keys) and by the Registration Service
/// (from the escrowed copy).
crypto::SigningKeyPair derive_pck(const crypto::SymmetricKey& prov_root, uint32_t tcb_level);

/// Seal key = kdf(seal_root, "blob", fw_version): a blob opens only on the
/// owning package while the same firmware is loaded.
KeyBlob seal_key_blob(const PackageIdentity& pkg, const BlobContents& contents, SimRng& rng);

/// nullopt == authentication failure (wrong package, tampered blob, or
/// firmware mismatch); the caller falls back to Establish New Platform.
std::optional<BlobContents> open_key_blob(const PackageIdentity& pkg, const KeyBlob& blob);

/// The package-local key request software sees. Constant across all member
/// packages of one platform because only platform roots enter the derivation.
Result<crypto::SymmetricKey, KeyError> get_key(const PackageIdentity& pkg,
                                               const std::optional<PlatformKeys>& platform,
                                               const KeyRequest& req);

}  // namespace mptee::pkg
