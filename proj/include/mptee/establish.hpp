// Copyright mptee contributors.
// Licensed under the Apache License, Version 2.0, see LICENSE for details.
// SPDX-License-Identifier: Apache-2.0
#pragma once

// Firmware lifecycle engine: Establish New Platform, Reboot Old Platform,
// Add Package to Platform, plus the signed-DH pairing protocol. Packages
// exchange every protocol message through an adversary-visible Mailbox; the
// fault-injection harness intercepts each transfer.

#include <functional>
#include <map>
#include <optional>
#include <vector>

#include "mptee/certs.hpp"
#include "mptee/package.hpp"
#include "mptee/result.hpp"

namespace mptee::establishment {

enum class Phase : uint8_t { Unestablished, Established, BootedSgxReady, SgxDisabled };
const char* phase_name(Phase p);

// ---------------------------------------------------------------------------
// Platform Info
// ---------------------------------------------------------------------------

struct MemoryConfig {
  PackageId package_id = 0;
  uint64_t epc_base = 0;  // line units
  uint64_t epc_size = 0;
  Digest address_map_digest{};
};

using Link = std::pair<PackageId, PackageId>;  // normalized a < b

/// What each package reports over its authenticated session during the
/// consistency check. Must be bitwise identical across packages and locked
/// before SGX can be enabled.
struct PlatformInfo {
  uint32_t package_count = 0;
  std::vector<std::pair<PackageId, crypto::VerifyKey>> package_public_keys;  // sorted by id
  std::vector<MemoryConfig> memory_config;                                   // sorted by id
  std::vector<Link> link_topology;                                           // normalized, sorted
  bool lock_state = false;

  Bytes serialize() const;
  static std::optional<PlatformInfo> deserialize(ByteView data);
  Digest digest() const;
};

enum class ConfigField : uint8_t {
  PackageCount,
  PackagePublicKeys,
  MemoryConfig,
  LinkTopology,
  LockState,
  SealedConfigDigest,  // reboot-time drift against the digest sealed in blobs
};
const char* config_field_name(ConfigField f);

struct Inconsistency {
  ConfigField field;
  PackageId offender;  // first package whose report differs (or is unlocked)
};

/// ok (nullopt) iff every report is identical and lock_state is true
/// everywhere. Reports carry the first differing field.
std::optional<Inconsistency> verify_config_consistency(
    const std::vector<std::pair<PackageId, PlatformInfo>>& infos);

// ---------------------------------------------------------------------------
// Mailbox
// ---------------------------------------------------------------------------

struct MailMessage {
  PackageId sender = 0;
  Bytes payload;
};

/// Unprotected shared memory. No confidentiality, no integrity: the
/// interceptor sees every message and may deliver anything or nothing.
class Mailbox {
 public:
  /// Return std::nullopt to drop the message; otherwise the returned bytes
  /// are what the receiver sees.
  using Interceptor = std::function<std::optional<Bytes>(size_t index, const MailMessage&)>;

  void set_interceptor(Interceptor f) { interceptor_ = std::move(f); }

  /// Posts a message and returns what actually comes out the other side.
  std::optional<Bytes> transfer(PackageId sender, Bytes payload);

  /// Every byte that crossed the medium (as delivered), for adversary scans.
  const std::vector<MailMessage>& log() const { return log_; }
  size_t message_count() const { return next_index_; }
  void clear();

 private:
  Interceptor interceptor_;
  std::vector<MailMessage> log_;
  size_t next_index_ = 0;
};

// ---------------------------------------------------------------------------
// Pairings and sessions
// ---------------------------------------------------------------------------

/// Long-lived pairwise key from one signed-DH negotiation. The key itself
/// never appears in any wire form; the transcript digest does (manifest).
struct PairingRecord {
  PackageId pkg_a = 0;
  PackageId pkg_b = 0;
  crypto::SymmetricKey master_comms_key;
  Digest transcript_digest{};
};

struct SessionKeys {
  crypto::SymmetricKey enc;
  crypto::SymmetricKey mac;
};

/// Per-boot encryption/MAC keys from a Master Comms Key. Deterministic per
/// (key, epoch); a new reset epoch invalidates all recorded traffic.
SessionKeys derive_session_keys(const PairingRecord& rec, uint32_t reset_epoch);

/// Directional link protection keys programmed into the UPI crypto engines
/// at the end of establishment / reboot.
struct LinkKeys {
  SessionKeys a_to_b;
  SessionKeys b_to_a;
};
LinkKeys derive_link_keys(const PairingRecord& rec, uint32_t reset_epoch);

enum class PairingError : uint8_t {
  SignatureMismatch,
  DegenerateKeyExchange,
  MissingMessage,
  MalformedMessage,
};
const char* pairing_error_name(PairingError e);

/// package id -> signing public key, as configured by BIOS for this boot.
using Roster = std::map<PackageId, crypto::VerifyKey>;

// ---------------------------------------------------------------------------
// Package agent
// ---------------------------------------------------------------------------

/// The volatile, per-package view of the platform. Holds everything a real
/// package would keep in on-die registers after firmware runs. Wiped
/// whenever establishment aborts.
class PackageAgent {
 public:
  explicit PackageAgent(pkg::PackageIdentity identity) : identity_(std::move(identity)) {}

  const pkg::PackageIdentity& identity() const { return identity_; }
  PackageId id() const { return identity_.package_id; }
  void bump_fw_version() { identity_.fw_version += 1; }

  std::optional<pkg::PlatformKeys> platform;
  std::map<PackageId, crypto::SymmetricKey> master_comms;
  std::optional<Digest> locked_config_digest;
  std::optional<pkg::ServiceBinding> service;

  void wipe_platform_state();

 private:
  pkg::PackageIdentity identity_;
};

/// Three-message signed Diffie-Hellman over the mailbox. Both sides sign the
/// full transcript (protocol tag, both ids, both ephemerals) with their
/// PRK-derived identities; on success both agents store the Master Comms Key.
Result<PairingRecord, PairingError> negotiate_pairing(PackageAgent& a, PackageAgent& b,
                                                      const Roster& roster, Mailbox& mbox,
                                                      SimRng& rng);

// ---------------------------------------------------------------------------
// Manifest
// ---------------------------------------------------------------------------

struct PairingDigestEntry {
  PackageId pkg_a = 0;
  PackageId pkg_b = 0;
  Digest transcript_digest{};
};

/// Signed establishment record consumed by the Registration Service. The
/// escrow carries the platform provisioning root encrypted to the service's
/// long-term DH key (ephemeral-static).
struct PlatformManifest {
  InstanceId platform_instance_id{};
  std::vector<std::pair<PackageId, crypto::VerifyKey>> packages;  // sorted by id
  std::vector<PairingDigestEntry> pairings;
  Digest platform_info_digest{};
  crypto::DhPublic escrow_ephemeral{};
  crypto::SealedBox escrow_box;
  PackageId master_package_id = 0;
  crypto::Signature signature{};

  Bytes signed_body() const;
  Bytes serialize() const;
  static std::optional<PlatformManifest> deserialize(ByteView data);
  std::string to_text() const;
};

// ---------------------------------------------------------------------------
// Platform state machine
// ---------------------------------------------------------------------------

struct PlatformState {
  Phase phase = Phase::Unestablished;
  InstanceId platform_instance_id{};
  std::vector<PackageId> members;
  PackageId master = 0;
  uint32_t reset_epoch = 0;
  PlatformInfo info;
  pkg::ServiceBinding service;
  std::map<Link, SessionKeys> session_keys;  // master pairings, current epoch
  std::map<Link, LinkKeys> link_keys;        // physical links, current epoch
  std::optional<std::string> disable_reason;
};

struct BiosConfig {
  /// Per-package view of the platform configuration. Normally identical;
  /// scenarios inject drift to exercise the consistency check.
  std::map<PackageId, PlatformInfo> views;
  std::optional<PackageId> master_override;
};

enum class EstablishFailure : uint8_t {
  NoPackages,
  PairingFailed,
  ConfigInconsistent,
  SessionFailure,  // a protected message was dropped or failed authentication
};

struct EstablishError {
  EstablishFailure kind;
  std::optional<PairingError> pairing;
  std::optional<Inconsistency> inconsistency;
};
const char* establish_failure_name(EstablishFailure f);

struct EstablishResult {
  PlatformManifest manifest;
  std::map<PackageId, pkg::KeyBlob> blobs;
  PlatformState state;
};

/// Establish New Platform: pairings (adjacent packages + master), config
/// consistency, platform key generation on the master, distribution over
/// session keys, link key programming, blob sealing, manifest signing.
/// On any failure no platform key material survives anywhere and the phase
/// stays Unestablished.
Result<EstablishResult, EstablishError> establish_platform(std::vector<PackageAgent*> packages,
                                                           const BiosConfig& bios,
                                                           const pkg::ServiceBinding& service,
                                                           Mailbox& mbox, SimRng& rng);

enum class RebootFailure : uint8_t {
  NeedsEstablishment,  // missing blob, failed open, or firmware mismatch
  Inconsistent,        // config drift since establishment
};

struct RebootError {
  RebootFailure kind;
  std::optional<PackageId> package;
  std::optional<Inconsistency> inconsistency;
};

/// Reboot Old Platform: decrypt blobs, re-establish sessions at the new
/// reset epoch, re-verify configuration (including against the sealed
/// locked-config digest), program link keys. Ends BootedSgxReady.
Result<PlatformState, RebootError> reboot_platform(std::vector<PackageAgent*> packages,
                                                   const std::map<PackageId, pkg::KeyBlob>& blobs,
                                                   const BiosConfig& bios, uint32_t reset_epoch,
                                                   Mailbox& mbox, SimRng& rng);

enum class AddError : uint8_t {
  AlreadyMember,
  WrongPhase,
  CertWrongPlatform,
  CertWrongPackageKey,
  CertBadSignature,  // includes wrong-issuer certificates
  PairingFailed,
  SessionFailure,
};
const char* add_error_name(AddError e);

/// BIOS builds the Add Request; the Master Package signs it.
Result<certs::AddRequest, AddError> build_add_request(const PlatformState& state,
                                                      const PackageAgent& master,
                                                      const crypto::VerifyKey& new_package_public);

struct AddResult {
  PlatformState state;
  /// Every member re-seals its blob (config digest changed); the new
  /// package seals its first one.
  std::map<PackageId, pkg::KeyBlob> blobs;
};

/// Fig-6 flow: an existing member verifies the Platform Membership
/// Certificate against the registration service pinned at establishment,
/// pairs with the new package, and only then shares the platform keys.
Result<AddResult, AddError> add_package(const PlatformState& state,
                                        std::vector<PackageAgent*> members, PackageAgent& new_pkg,
                                        const certs::MembershipCertificate& cert, Mailbox& mbox,
                                        SimRng& rng);

}  // namespace mptee::establishment
