// Copyright mptee contributors.
// Licensed under the Apache License, Version 2.0, see LICENSE for details.
// SPDX-License-Identifier: Apache-2.0
#include "mptee/establish.hpp"

#include <algorithm>
#include <cassert>
#include <set>
#include <sstream>

#include "mptee/serial.hpp"

namespace mptee::establishment {

namespace {

constexpr uint8_t kMsgPairInit = 1;
constexpr uint8_t kMsgPairResp = 2;
constexpr uint8_t kMsgPairFin = 3;
constexpr uint8_t kMsgSession = 4;

constexpr uint8_t kInnerConfigReport = 1;
constexpr uint8_t kInnerPlatformKeys = 2;

const char kPairingTag[] = "mptee-pairing-v1";

Digest pairing_transcript_digest(PackageId a, PackageId b, const crypto::DhPublic& eph_a,
                                 const crypto::DhPublic& eph_b) {
  ByteWriter w;
  w.raw(ByteView(reinterpret_cast<const uint8_t*>(kPairingTag), sizeof(kPairingTag) - 1));
  w.u32(a);
  w.u32(b);
  w.fixed(eph_a);
  w.fixed(eph_b);
  return crypto::sha256(w.data());
}

Link make_link(PackageId a, PackageId b) { return {std::min(a, b), std::max(a, b)}; }

}  // namespace

const char* phase_name(Phase p) {
  switch (p) {
    case Phase::Unestablished: return "Unestablished";
    case Phase::Established: return "Established";
    case Phase::BootedSgxReady: return "BootedSgxReady";
    case Phase::SgxDisabled: return "SgxDisabled";
  }
  return "?";
}

const char* config_field_name(ConfigField f) {
  switch (f) {
    case ConfigField::PackageCount: return "package_count";
    case ConfigField::PackagePublicKeys: return "package_public_keys";
    case ConfigField::MemoryConfig: return "memory_config";
    case ConfigField::LinkTopology: return "link_topology";
    case ConfigField::LockState: return "lock_state";
    case ConfigField::SealedConfigDigest: return "sealed_config_digest";
  }
  return "?";
}

const char* pairing_error_name(PairingError e) {
  switch (e) {
    case PairingError::SignatureMismatch: return "SignatureMismatch";
    case PairingError::DegenerateKeyExchange: return "DegenerateKeyExchange";
    case PairingError::MissingMessage: return "MissingMessage";
    case PairingError::MalformedMessage: return "MalformedMessage";
  }
  return "?";
}

const char* establish_failure_name(EstablishFailure f) {
  switch (f) {
    case EstablishFailure::NoPackages: return "NoPackages";
    case EstablishFailure::PairingFailed: return "PairingFailed";
    case EstablishFailure::ConfigInconsistent: return "ConfigInconsistent";
    case EstablishFailure::SessionFailure: return "SessionFailure";
  }
  return "?";
}

const char* add_error_name(AddError e) {
  switch (e) {
    case AddError::AlreadyMember: return "AlreadyMember";
    case AddError::WrongPhase: return "WrongPhase";
    case AddError::CertWrongPlatform: return "CertWrongPlatform";
    case AddError::CertWrongPackageKey: return "CertWrongPackageKey";
    case AddError::CertBadSignature: return "CertBadSignature";
    case AddError::PairingFailed: return "PairingFailed";
    case AddError::SessionFailure: return "SessionFailure";
  }
  return "?";
}

// ---------------------------------------------------------------------------
// PlatformInfo
// ---------------------------------------------------------------------------

Bytes PlatformInfo::serialize() const {
  ByteWriter w;
  w.u32(package_count);
  w.u32(static_cast<uint32_t>(package_public_keys.size()));
  for (const auto& [id, key] : package_public_keys) {
    w.u32(id);
    w.fixed(key);
  }
  w.u32(static_cast<uint32_t>(memory_config.size()));
  for (const auto& m : memory_config) {
    w.u32(m.package_id);
    w.u64(m.epc_base);
    w.u64(m.epc_size);
    w.fixed(m.address_map_digest);
  }
  w.u32(static_cast<uint32_t>(link_topology.size()));
  for (const auto& [a, b] : link_topology) {
    w.u32(a);
    w.u32(b);
  }
  w.u8(lock_state ? 1 : 0);
  return w.take();
}

std::optional<PlatformInfo> PlatformInfo::deserialize(ByteView data) {
  ByteReader r(data);
  PlatformInfo info;
  info.package_count = r.u32();
  uint32_t nk = r.u32();
  for (uint32_t i = 0; i < nk && r.ok(); ++i) {
    PackageId id = r.u32();
    info.package_public_keys.emplace_back(id, r.fixed<kSigPublicBytes>());
  }
  uint32_t nm = r.u32();
  for (uint32_t i = 0; i < nm && r.ok(); ++i) {
    MemoryConfig m;
    m.package_id = r.u32();
    m.epc_base = r.u64();
    m.epc_size = r.u64();
    m.address_map_digest = r.fixed<kDigestBytes>();
    info.memory_config.push_back(m);
  }
  uint32_t nl = r.u32();
  for (uint32_t i = 0; i < nl && r.ok(); ++i) {
    PackageId a = r.u32();
    PackageId b = r.u32();
    info.link_topology.emplace_back(a, b);
  }
  info.lock_state = r.u8() != 0;
  if (!r.done()) return std::nullopt;
  return info;
}

Digest PlatformInfo::digest() const { return crypto::sha256(serialize()); }

std::optional<Inconsistency> verify_config_consistency(
    const std::vector<std::pair<PackageId, PlatformInfo>>& infos) {
  if (infos.empty()) return std::nullopt;
  const PlatformInfo& ref = infos.front().second;
  for (const auto& [id, info] : infos) {
    if (!info.lock_state) return Inconsistency{ConfigField::LockState, id};
  }
  for (const auto& [id, info] : infos) {
    if (info.package_count != ref.package_count) return Inconsistency{ConfigField::PackageCount, id};
    if (info.package_public_keys != ref.package_public_keys)
      return Inconsistency{ConfigField::PackagePublicKeys, id};
    auto mem_eq = [](const MemoryConfig& x, const MemoryConfig& y) {
      return x.package_id == y.package_id && x.epc_base == y.epc_base && x.epc_size == y.epc_size &&
             array_eq(x.address_map_digest, y.address_map_digest);
    };
    if (info.memory_config.size() != ref.memory_config.size() ||
        !std::equal(info.memory_config.begin(), info.memory_config.end(),
                    ref.memory_config.begin(), mem_eq))
      return Inconsistency{ConfigField::MemoryConfig, id};
    if (info.link_topology != ref.link_topology) return Inconsistency{ConfigField::LinkTopology, id};
  }
  return std::nullopt;
}

// ---------------------------------------------------------------------------
// Mailbox
// ---------------------------------------------------------------------------

std::optional<Bytes> Mailbox::transfer(PackageId sender, Bytes payload) {
  size_t index = next_index_++;
  std::optional<Bytes> delivered = std::move(payload);
  if (interceptor_) {
    MailMessage posted{sender, *delivered};
    delivered = interceptor_(index, posted);
  }
  if (delivered) log_.push_back(MailMessage{sender, *delivered});
  return delivered;
}

void Mailbox::clear() {
  log_.clear();
  next_index_ = 0;
}

// ---------------------------------------------------------------------------
// Sessions
// ---------------------------------------------------------------------------

SessionKeys derive_session_keys(const PairingRecord& rec, uint32_t reset_epoch) {
  ByteWriter ctx;
  ctx.u32(reset_epoch);
  return SessionKeys{crypto::kdf(rec.master_comms_key, label::kSessionEnc, ctx.data()),
                     crypto::kdf(rec.master_comms_key, label::kSessionMac, ctx.data())};
}

LinkKeys derive_link_keys(const PairingRecord& rec, uint32_t reset_epoch) {
  auto derive = [&](const char* enc_label, const char* mac_label, uint8_t dir) {
    ByteWriter ctx;
    ctx.u32(reset_epoch);
    ctx.u8(dir);
    return SessionKeys{crypto::kdf(rec.master_comms_key, enc_label, ctx.data()),
                       crypto::kdf(rec.master_comms_key, mac_label, ctx.data())};
  };
  return LinkKeys{derive(label::kLinkEnc, label::kLinkMac, 0),
                  derive(label::kLinkEnc, label::kLinkMac, 1)};
}

void PackageAgent::wipe_platform_state() {
  platform.reset();
  master_comms.clear();
  locked_config_digest.reset();
  service.reset();
}

namespace {

// One direction of an established session. Counters are per flow; the aad
// binds sender, receiver, epoch and sequence so nothing replays across
// sessions or epochs.
struct SecureSession {
  PackageId self;
  PackageId peer;
  uint32_t epoch;
  SessionKeys keys;
  uint64_t send_seq = 0;
  std::optional<uint64_t> recv_last;

  Bytes session_aad(PackageId from, PackageId to, uint64_t seq) const {
    ByteWriter w;
    w.u8(kMsgSession);
    w.u32(from);
    w.u32(to);
    w.u32(epoch);
    w.u64(seq);
    return w.take();
  }

  Bytes protect(uint8_t inner_type, ByteView payload) {
    uint64_t seq = send_seq++;
    ByteWriter inner;
    inner.u8(inner_type);
    inner.bytes(payload);
    uint8_t dir = self < peer ? 0 : 1;
    auto nonce = crypto::channel_nonce(dir, seq);
    Bytes aad = session_aad(self, peer, seq);
    Bytes body = crypto::ctr_encrypt(keys.enc, nonce, inner.data());
    auto tag = crypto::ctr_tag(keys.mac, aad, nonce, body);
    ByteWriter frame;
    frame.u8(kMsgSession);
    frame.u32(self);
    frame.u32(peer);
    frame.u32(epoch);
    frame.u64(seq);
    frame.bytes(body);
    frame.fixed(tag);
    return frame.take();
  }

  std::optional<std::pair<uint8_t, Bytes>> unprotect(ByteView frame) {
    ByteReader r(frame);
    if (r.u8() != kMsgSession) return std::nullopt;
    PackageId from = r.u32();
    PackageId to = r.u32();
    uint32_t ep = r.u32();
    uint64_t seq = r.u64();
    Bytes body = r.bytes();
    auto tag = r.fixed<kChannelTagBytes>();
    if (!r.done() || from != peer || to != self || ep != epoch) return std::nullopt;
    if (recv_last && seq <= *recv_last) return std::nullopt;
    uint8_t dir = peer < self ? 0 : 1;
    auto nonce = crypto::channel_nonce(dir, seq);
    Bytes aad = session_aad(from, to, seq);
    if (!crypto::ctr_tag_ok(keys.mac, aad, nonce, body, tag)) return std::nullopt;
    recv_last = seq;
    Bytes plain = crypto::ctr_encrypt(keys.enc, nonce, body);
    ByteReader pr(plain);
    uint8_t inner_type = pr.u8();
    Bytes payload = pr.bytes();
    if (!pr.done()) return std::nullopt;
    return std::make_pair(inner_type, std::move(payload));
  }
};

}  // namespace

// ---------------------------------------------------------------------------
// Pairing protocol
// ---------------------------------------------------------------------------

Result<PairingRecord, PairingError> negotiate_pairing(PackageAgent& a, PackageAgent& b,
                                                      const Roster& roster, Mailbox& mbox,
                                                      SimRng& rng) {
  using R = Result<PairingRecord, PairingError>;
  auto key_a = roster.find(a.id());
  auto key_b = roster.find(b.id());
  if (key_a == roster.end() || key_b == roster.end()) return R::err(PairingError::MalformedMessage);

  // a -> b : pairing init with a's ephemeral
  auto eph_a = crypto::dh_keygen(rng);
  ByteWriter m1;
  m1.u8(kMsgPairInit);
  m1.u32(a.id());
  m1.u32(b.id());
  m1.fixed(eph_a.public_key);
  auto d1 = mbox.transfer(a.id(), m1.take());
  if (!d1) return R::err(PairingError::MissingMessage);

  // b receives init
  ByteReader r1(*d1);
  uint8_t t1 = r1.u8();
  PackageId from1 = r1.u32();
  PackageId to1 = r1.u32();
  auto eph_a_rx = r1.fixed<kDhPublicBytes>();
  if (!r1.done() || t1 != kMsgPairInit || from1 != a.id() || to1 != b.id())
    return R::err(PairingError::MalformedMessage);
  if (crypto::dh_public_is_degenerate(eph_a_rx)) return R::err(PairingError::DegenerateKeyExchange);

  // b -> a : b's ephemeral plus b's signature over the transcript
  auto eph_b = crypto::dh_keygen(rng);
  Digest transcript_b = pairing_transcript_digest(a.id(), b.id(), eph_a_rx, eph_b.public_key);
  auto sig_b = crypto::sign(b.identity().signing_identity, transcript_b);
  ByteWriter m2;
  m2.u8(kMsgPairResp);
  m2.u32(b.id());
  m2.u32(a.id());
  m2.fixed(eph_b.public_key);
  m2.fixed(sig_b);
  auto d2 = mbox.transfer(b.id(), m2.take());
  if (!d2) return R::err(PairingError::MissingMessage);

  // a receives response, checks b's signature over a's own view of the
  // transcript: any substitution of either ephemeral breaks this.
  ByteReader r2(*d2);
  uint8_t t2 = r2.u8();
  PackageId from2 = r2.u32();
  PackageId to2 = r2.u32();
  auto eph_b_rx = r2.fixed<kDhPublicBytes>();
  auto sig_b_rx = r2.fixed<kSignatureBytes>();
  if (!r2.done() || t2 != kMsgPairResp || from2 != b.id() || to2 != a.id())
    return R::err(PairingError::MalformedMessage);
  if (crypto::dh_public_is_degenerate(eph_b_rx)) return R::err(PairingError::DegenerateKeyExchange);
  Digest transcript_a = pairing_transcript_digest(a.id(), b.id(), eph_a.public_key, eph_b_rx);
  if (!crypto::verify(key_b->second, transcript_a, sig_b_rx))
    return R::err(PairingError::SignatureMismatch);

  // a -> b : a's signature over the transcript
  auto sig_a = crypto::sign(a.identity().signing_identity, transcript_a);
  ByteWriter m3;
  m3.u8(kMsgPairFin);
  m3.u32(a.id());
  m3.u32(b.id());
  m3.fixed(sig_a);
  auto d3 = mbox.transfer(a.id(), m3.take());
  if (!d3) return R::err(PairingError::MissingMessage);

  ByteReader r3(*d3);
  uint8_t t3 = r3.u8();
  PackageId from3 = r3.u32();
  PackageId to3 = r3.u32();
  auto sig_a_rx = r3.fixed<kSignatureBytes>();
  if (!r3.done() || t3 != kMsgPairFin || from3 != a.id() || to3 != b.id())
    return R::err(PairingError::MalformedMessage);
  if (!crypto::verify(key_a->second, transcript_b, sig_a_rx))
    return R::err(PairingError::SignatureMismatch);

  // Both signatures verified, so both transcript views are identical and the
  // derived keys agree.
  crypto::SymmetricKey shared_a = crypto::dh_derive(eph_a.secret, eph_b_rx);
  crypto::SymmetricKey shared_b = crypto::dh_derive(eph_b.secret, eph_a_rx);
  crypto::SymmetricKey mck_a = crypto::kdf(shared_a, label::kMasterComms, transcript_a);
  crypto::SymmetricKey mck_b = crypto::kdf(shared_b, label::kMasterComms, transcript_b);
  a.master_comms.insert_or_assign(b.id(), mck_a);
  b.master_comms.insert_or_assign(a.id(), mck_b);

  PairingRecord rec;
  rec.pkg_a = a.id();
  rec.pkg_b = b.id();
  rec.master_comms_key = mck_a;
  rec.transcript_digest = transcript_a;
  return R::ok(rec);
}

// ---------------------------------------------------------------------------
// Manifest
// ---------------------------------------------------------------------------

Bytes PlatformManifest::signed_body() const {
  ByteWriter w;
  w.fixed(platform_instance_id);
  w.u32(static_cast<uint32_t>(packages.size()));
  for (const auto& [id, key] : packages) {
    w.u32(id);
    w.fixed(key);
  }
  w.u32(static_cast<uint32_t>(pairings.size()));
  for (const auto& p : pairings) {
    w.u32(p.pkg_a);
    w.u32(p.pkg_b);
    w.fixed(p.transcript_digest);
  }
  w.fixed(platform_info_digest);
  w.fixed(escrow_ephemeral);
  w.bytes(escrow_box.serialize());
  w.u32(master_package_id);
  return w.take();
}

Bytes PlatformManifest::serialize() const {
  ByteWriter w;
  w.bytes(signed_body());
  w.fixed(signature);
  return w.take();
}

std::optional<PlatformManifest> PlatformManifest::deserialize(ByteView data) {
  ByteReader outer(data);
  Bytes body = outer.bytes();
  auto signature = outer.fixed<kSignatureBytes>();
  if (!outer.done()) return std::nullopt;

  ByteReader r(body);
  PlatformManifest m;
  m.platform_instance_id = r.fixed<16>();
  uint32_t np = r.u32();
  for (uint32_t i = 0; i < np && r.ok(); ++i) {
    PackageId id = r.u32();
    m.packages.emplace_back(id, r.fixed<kSigPublicBytes>());
  }
  uint32_t npair = r.u32();
  for (uint32_t i = 0; i < npair && r.ok(); ++i) {
    PairingDigestEntry e;
    e.pkg_a = r.u32();
    e.pkg_b = r.u32();
    e.transcript_digest = r.fixed<kDigestBytes>();
    m.pairings.push_back(e);
  }
  m.platform_info_digest = r.fixed<kDigestBytes>();
  m.escrow_ephemeral = r.fixed<kDhPublicBytes>();
  auto box = crypto::SealedBox::deserialize(r.bytes());
  m.master_package_id = r.u32();
  if (!r.done() || !box) return std::nullopt;
  m.escrow_box = *box;
  m.signature = signature;
  return m;
}

std::string PlatformManifest::to_text() const {
  std::ostringstream os;
  os << "platform-manifest\n"
     << "  instance: " << hex_encode(platform_instance_id) << "\n"
     << "  master: " << master_package_id << "\n"
     << "  packages:\n";
  for (const auto& [id, key] : packages)
    os << "    - id " << id << " key " << hex_encode(key) << "\n";
  os << "  pairings:\n";
  for (const auto& p : pairings)
    os << "    - (" << p.pkg_a << "," << p.pkg_b << ") transcript "
       << hex_encode(p.transcript_digest) << "\n";
  os << "  platform-info-digest: " << hex_encode(platform_info_digest) << "\n"
     << "  escrow-ephemeral: " << hex_encode(escrow_ephemeral) << "\n"
     << "  signature: " << hex_encode(signature) << "\n";
  return os.str();
}

// ---------------------------------------------------------------------------
// Establish New Platform
// ---------------------------------------------------------------------------

namespace {

struct AbortGuard {
  std::vector<PackageAgent*>& agents;
  bool armed = true;
  ~AbortGuard() {
    if (armed)
      for (auto* a : agents) a->wipe_platform_state();
  }
};

Roster roster_from_agents(const std::vector<PackageAgent*>& agents) {
  Roster roster;
  for (const auto* a : agents) roster[a->id()] = a->identity().signing_identity.public_key;
  return roster;
}

}  // namespace

Result<EstablishResult, EstablishError> establish_platform(std::vector<PackageAgent*> packages,
                                                           const BiosConfig& bios,
                                                           const pkg::ServiceBinding& service,
                                                           Mailbox& mbox, SimRng& rng) {
  using R = Result<EstablishResult, EstablishError>;
  if (packages.empty()) return R::err({EstablishFailure::NoPackages, {}, {}});

  std::sort(packages.begin(), packages.end(),
            [](const PackageAgent* x, const PackageAgent* y) { return x->id() < y->id(); });
  for (auto* a : packages) a->wipe_platform_state();
  AbortGuard guard{packages};

  std::map<PackageId, PackageAgent*> by_id;
  for (auto* a : packages) by_id[a->id()] = a;
  PackageId master = bios.master_override.value_or(packages.front()->id());
  if (!by_id.count(master)) return R::err({EstablishFailure::NoPackages, {}, {}});

  Roster roster = roster_from_agents(packages);

  // Pair set: every package with the master, plus every physical link.
  std::set<Link> pair_set;
  for (auto* a : packages)
    if (a->id() != master) pair_set.insert(make_link(a->id(), master));
  auto view_it = bios.views.find(master);
  if (view_it != bios.views.end())
    for (const auto& [la, lb] : view_it->second.link_topology) pair_set.insert(make_link(la, lb));

  std::map<Link, PairingRecord> pairings;
  for (const Link& link : pair_set) {
    auto ita = by_id.find(link.first);
    auto itb = by_id.find(link.second);
    if (ita == by_id.end() || itb == by_id.end())
      return R::err({EstablishFailure::PairingFailed, PairingError::MalformedMessage, {}});
    auto res = negotiate_pairing(*ita->second, *itb->second, roster, mbox, rng);
    if (!res) return R::err({EstablishFailure::PairingFailed, res.error(), {}});
    pairings.emplace(link, res.value());
  }

  // Authenticated sessions between every package and the master, epoch 0.
  const uint32_t epoch = 0;
  std::map<PackageId, SecureSession> member_side;
  std::map<PackageId, SecureSession> master_side;
  for (auto* a : packages) {
    if (a->id() == master) continue;
    const PairingRecord& rec = pairings.at(make_link(a->id(), master));
    SessionKeys keys = derive_session_keys(rec, epoch);
    member_side.emplace(a->id(), SecureSession{a->id(), master, epoch, keys});
    master_side.emplace(a->id(), SecureSession{master, a->id(), epoch, keys});
  }

  // Config consistency across authenticated sessions.
  std::vector<std::pair<PackageId, PlatformInfo>> infos;
  {
    auto own = bios.views.find(master);
    if (own == bios.views.end())
      return R::err({EstablishFailure::ConfigInconsistent,
                     {},
                     Inconsistency{ConfigField::PackageCount, master}});
    infos.emplace_back(master, own->second);
  }
  for (auto* a : packages) {
    if (a->id() == master) continue;
    auto view = bios.views.find(a->id());
    if (view == bios.views.end())
      return R::err({EstablishFailure::ConfigInconsistent,
                     {},
                     Inconsistency{ConfigField::PackageCount, a->id()}});
    Bytes frame = member_side.at(a->id()).protect(kInnerConfigReport, view->second.serialize());
    auto delivered = mbox.transfer(a->id(), std::move(frame));
    if (!delivered) return R::err({EstablishFailure::SessionFailure, {}, {}});
    auto opened = master_side.at(a->id()).unprotect(*delivered);
    if (!opened || opened->first != kInnerConfigReport)
      return R::err({EstablishFailure::SessionFailure, {}, {}});
    auto info = PlatformInfo::deserialize(opened->second);
    if (!info) return R::err({EstablishFailure::SessionFailure, {}, {}});
    infos.emplace_back(a->id(), *info);
  }
  if (auto bad = verify_config_consistency(infos))
    return R::err({EstablishFailure::ConfigInconsistent, {}, bad});
  const PlatformInfo agreed_info = infos.front().second;
  const Digest config_digest = agreed_info.digest();

  // The master generates the platform keys and distributes them over the
  // per-package sessions. Platform roots cross the mailbox only inside the
  // protected channel.
  pkg::PlatformKeys platform;
  platform.platform_prov_root = crypto::SymmetricKey::random(rng, "platform-prov-root");
  platform.platform_seal_root = crypto::SymmetricKey::random(rng, "platform-seal-root");
  platform.platform_instance_id = rng.array<16>();

  for (auto* a : packages) {
    if (a->id() == master) continue;
    Bytes frame = master_side.at(a->id()).protect(kInnerPlatformKeys, platform.serialize());
    auto delivered = mbox.transfer(master, std::move(frame));
    if (!delivered) return R::err({EstablishFailure::SessionFailure, {}, {}});
    auto opened = member_side.at(a->id()).unprotect(*delivered);
    if (!opened || opened->first != kInnerPlatformKeys)
      return R::err({EstablishFailure::SessionFailure, {}, {}});
    auto received = pkg::PlatformKeys::deserialize(opened->second);
    if (!received) return R::err({EstablishFailure::SessionFailure, {}, {}});
    a->platform = *received;
  }
  by_id.at(master)->platform = platform;

  // Link encryption keys for every physical link.
  std::map<Link, LinkKeys> link_keys;
  for (const auto& [la, lb] : agreed_info.link_topology) {
    Link link = make_link(la, lb);
    auto rec = pairings.find(link);
    if (rec == pairings.end())
      return R::err({EstablishFailure::PairingFailed, PairingError::MalformedMessage, {}});
    link_keys.emplace(link, derive_link_keys(rec->second, epoch));
  }

  // Blob sealing on every package.
  std::map<PackageId, pkg::KeyBlob> blobs;
  for (auto* a : packages) {
    a->locked_config_digest = config_digest;
    a->service = service;
    pkg::BlobContents contents;
    contents.platform = *a->platform;
    contents.master_comms = a->master_comms;
    contents.locked_config_digest = config_digest;
    contents.service = service;
    blobs.emplace(a->id(), pkg::seal_key_blob(a->identity(), contents, rng));
  }

  // Manifest, signed by the master package; the escrow carries the platform
  // provisioning root encrypted to the registration service.
  PlatformManifest manifest;
  manifest.platform_instance_id = platform.platform_instance_id;
  for (auto* a : packages)
    manifest.packages.emplace_back(a->id(), a->identity().signing_identity.public_key);
  for (const auto& [link, rec] : pairings)
    manifest.pairings.push_back({link.first, link.second, rec.transcript_digest});
  manifest.platform_info_digest = config_digest;
  auto escrow_eph = crypto::dh_keygen(rng);
  manifest.escrow_ephemeral = escrow_eph.public_key;
  {
    crypto::SymmetricKey shared = crypto::dh_derive(escrow_eph.secret, service.escrow_key);
    crypto::SymmetricKey escrow_key =
        crypto::kdf(shared, label::kEscrow, platform.platform_instance_id);
    manifest.escrow_box = crypto::aead_seal(escrow_key, rng.array<kSealNonceBytes>(),
                                            platform.platform_instance_id,
                                            platform.platform_prov_root.bytes());
  }
  manifest.master_package_id = master;
  manifest.signature =
      crypto::sign(by_id.at(master)->identity().signing_identity, manifest.signed_body());

  PlatformState state;
  state.phase = Phase::Established;
  state.platform_instance_id = platform.platform_instance_id;
  for (auto* a : packages) state.members.push_back(a->id());
  state.master = master;
  state.reset_epoch = epoch;
  state.info = agreed_info;
  state.service = service;
  for (auto* a : packages) {
    if (a->id() == master) continue;
    Link link = make_link(a->id(), master);
    state.session_keys.emplace(link, derive_session_keys(pairings.at(link), epoch));
  }
  state.link_keys = std::move(link_keys);

  guard.armed = false;
  return R::ok(EstablishResult{std::move(manifest), std::move(blobs), std::move(state)});
}

// ---------------------------------------------------------------------------
// Reboot Old Platform
// ---------------------------------------------------------------------------

Result<PlatformState, RebootError> reboot_platform(std::vector<PackageAgent*> packages,
                                                   const std::map<PackageId, pkg::KeyBlob>& blobs,
                                                   const BiosConfig& bios, uint32_t reset_epoch,
                                                   Mailbox& mbox, SimRng& rng) {
  (void)rng;
  using R = Result<PlatformState, RebootError>;
  std::sort(packages.begin(), packages.end(),
            [](const PackageAgent* x, const PackageAgent* y) { return x->id() < y->id(); });
  // Power cycle: volatile state is gone before anything else happens.
  for (auto* a : packages) a->wipe_platform_state();

  // BIOS pre-check: every package needs a key structure for the currently
  // loaded firmware, otherwise fall back to Establish New Platform.
  for (auto* a : packages) {
    auto it = blobs.find(a->id());
    if (it == blobs.end())
      return R::err({RebootFailure::NeedsEstablishment, a->id(), {}});
    if (it->second.fw_version_tag != a->identity().fw_version)
      return R::err({RebootFailure::NeedsEstablishment, a->id(), {}});
  }

  // Standard SGX boot: decrypt and load the previously created keys.
  std::map<PackageId, pkg::BlobContents> loaded;
  for (auto* a : packages) {
    auto contents = pkg::open_key_blob(a->identity(), blobs.at(a->id()));
    if (!contents) return R::err({RebootFailure::NeedsEstablishment, a->id(), {}});
    loaded.emplace(a->id(), std::move(*contents));
  }

  // All members must hold keys for the same platform instance.
  const pkg::BlobContents& first = loaded.begin()->second;
  for (const auto& [id, contents] : loaded) {
    if (!(contents.platform == first.platform))
      return R::err({RebootFailure::NeedsEstablishment, id, {}});
  }

  PackageId master = bios.master_override.value_or(packages.front()->id());
  std::map<PackageId, PackageAgent*> by_id;
  for (auto* a : packages) by_id[a->id()] = a;
  if (!by_id.count(master)) return R::err({RebootFailure::NeedsEstablishment, master, {}});

  // Sessions are re-established from the Master Comms Keys at the new epoch;
  // configuration reports flow through them.
  std::map<PackageId, SecureSession> member_side;
  std::map<PackageId, SecureSession> master_side;
  for (auto* a : packages) {
    if (a->id() == master) continue;
    auto mck_member = loaded.at(a->id()).master_comms.find(master);
    auto mck_master = loaded.at(master).master_comms.find(a->id());
    if (mck_member == loaded.at(a->id()).master_comms.end() ||
        mck_master == loaded.at(master).master_comms.end())
      return R::err({RebootFailure::NeedsEstablishment, a->id(), {}});
    PairingRecord rec;
    rec.pkg_a = std::min(a->id(), master);
    rec.pkg_b = std::max(a->id(), master);
    rec.master_comms_key = mck_member->second;
    SessionKeys member_keys = derive_session_keys(rec, reset_epoch);
    rec.master_comms_key = mck_master->second;
    SessionKeys master_keys = derive_session_keys(rec, reset_epoch);
    member_side.emplace(a->id(), SecureSession{a->id(), master, reset_epoch, member_keys});
    master_side.emplace(a->id(), SecureSession{master, a->id(), reset_epoch, master_keys});
  }

  std::vector<std::pair<PackageId, PlatformInfo>> infos;
  {
    auto own = bios.views.find(master);
    if (own == bios.views.end())
      return R::err({RebootFailure::Inconsistent, master, {}});
    infos.emplace_back(master, own->second);
  }
  for (auto* a : packages) {
    if (a->id() == master) continue;
    auto view = bios.views.find(a->id());
    if (view == bios.views.end()) return R::err({RebootFailure::Inconsistent, a->id(), {}});
    Bytes frame = member_side.at(a->id()).protect(kInnerConfigReport, view->second.serialize());
    auto delivered = mbox.transfer(a->id(), std::move(frame));
    if (!delivered) return R::err({RebootFailure::Inconsistent, a->id(), {}});
    auto opened = master_side.at(a->id()).unprotect(*delivered);
    if (!opened || opened->first != kInnerConfigReport)
      return R::err({RebootFailure::Inconsistent, a->id(), {}});
    auto info = PlatformInfo::deserialize(opened->second);
    if (!info) return R::err({RebootFailure::Inconsistent, a->id(), {}});
    infos.emplace_back(a->id(), *info);
  }
  if (auto bad = verify_config_consistency(infos))
    return R::err({RebootFailure::Inconsistent, bad->offender, bad});

  // Locked configuration must match what was sealed at establishment.
  const PlatformInfo current = infos.front().second;
  const Digest current_digest = current.digest();
  for (const auto& [id, contents] : loaded) {
    if (!array_eq(contents.locked_config_digest, current_digest))
      return R::err({RebootFailure::Inconsistent, id,
                     Inconsistency{ConfigField::SealedConfigDigest, id}});
  }

  // Load agents and program link keys for the new epoch.
  for (auto* a : packages) {
    const auto& contents = loaded.at(a->id());
    a->platform = contents.platform;
    a->master_comms = contents.master_comms;
    a->locked_config_digest = contents.locked_config_digest;
    a->service = contents.service;
  }

  PlatformState state;
  state.phase = Phase::BootedSgxReady;
  state.platform_instance_id = first.platform.platform_instance_id;
  for (auto* a : packages) state.members.push_back(a->id());
  state.master = master;
  state.reset_epoch = reset_epoch;
  state.info = current;
  state.service = first.service;
  for (auto* a : packages) {
    if (a->id() == master) continue;
    Link link = make_link(a->id(), master);
    PairingRecord rec;
    rec.pkg_a = link.first;
    rec.pkg_b = link.second;
    rec.master_comms_key = loaded.at(a->id()).master_comms.at(master);
    state.session_keys.emplace(link, derive_session_keys(rec, reset_epoch));
  }
  for (const auto& [la, lb] : current.link_topology) {
    Link link = make_link(la, lb);
    auto mck = loaded.at(link.first).master_comms.find(link.second);
    if (mck == loaded.at(link.first).master_comms.end())
      return R::err({RebootFailure::NeedsEstablishment, link.first, {}});
    PairingRecord rec;
    rec.pkg_a = link.first;
    rec.pkg_b = link.second;
    rec.master_comms_key = mck->second;
    state.link_keys.emplace(link, derive_link_keys(rec, reset_epoch));
  }
  return R::ok(std::move(state));
}

// ---------------------------------------------------------------------------
// Add Package to Platform
// ---------------------------------------------------------------------------

Result<certs::AddRequest, AddError> build_add_request(const PlatformState& state,
                                                      const PackageAgent& master,
                                                      const crypto::VerifyKey& new_package_public) {
  using R = Result<certs::AddRequest, AddError>;
  if (state.phase != Phase::Established && state.phase != Phase::BootedSgxReady)
    return R::err(AddError::WrongPhase);
  for (const auto& [id, key] : state.info.package_public_keys)
    if (array_eq(key, new_package_public)) return R::err(AddError::AlreadyMember);
  certs::AddRequest req;
  req.platform_instance_id = state.platform_instance_id;
  req.new_package_public_key = new_package_public;
  req.master_package_id = master.id();
  req.signature = crypto::sign(master.identity().signing_identity, req.signed_body());
  return R::ok(req);
}

Result<AddResult, AddError> add_package(const PlatformState& state,
                                        std::vector<PackageAgent*> members, PackageAgent& new_pkg,
                                        const certs::MembershipCertificate& cert, Mailbox& mbox,
                                        SimRng& rng, const std::vector<Link>& new_links,
                                        const std::optional<MemoryConfig>& new_memory) {
  using R = Result<AddResult, AddError>;
  if (state.phase != Phase::Established && state.phase != Phase::BootedSgxReady)
    return R::err(AddError::WrongPhase);
  for (PackageId id : state.members)
    if (id == new_pkg.id()) return R::err(AddError::AlreadyMember);

  // Certificate checks run before any key flows: unverified devices must not
  // have access to this instance's keys.
  if (!array_eq(cert.platform_instance_id, state.platform_instance_id))
    return R::err(AddError::CertWrongPlatform);
  if (!array_eq(cert.new_package_public_key, new_pkg.identity().signing_identity.public_key))
    return R::err(AddError::CertWrongPackageKey);
  if (!crypto::verify(state.service.certificate_key, cert.signed_body(), cert.signature))
    return R::err(AddError::CertBadSignature);

  std::map<PackageId, PackageAgent*> by_id;
  for (auto* m : members) by_id[m->id()] = m;
  auto master_it = by_id.find(state.master);
  if (master_it == by_id.end()) return R::err(AddError::WrongPhase);
  PackageAgent& master = *master_it->second;

  new_pkg.wipe_platform_state();

  // The certificate is the authority for the new package's signing key.
  Roster roster;
  roster[master.id()] = master.identity().signing_identity.public_key;
  roster[new_pkg.id()] = cert.new_package_public_key;
  for (const auto& [a, b] : new_links) {
    PackageId peer = a == new_pkg.id() ? b : a;
    auto it = by_id.find(peer);
    if (it != by_id.end())
      roster[peer] = it->second->identity().signing_identity.public_key;
  }

  // Pair with the master plus every adjacent package on a new link.
  std::set<Link> pair_set{make_link(master.id(), new_pkg.id())};
  for (const auto& [a, b] : new_links) pair_set.insert(make_link(a, b));
  std::map<Link, PairingRecord> new_pairings;
  for (const Link& link : pair_set) {
    PackageAgent* pa = link.first == new_pkg.id() ? &new_pkg : by_id.count(link.first) ? by_id.at(link.first) : nullptr;
    PackageAgent* pb = link.second == new_pkg.id() ? &new_pkg : by_id.count(link.second) ? by_id.at(link.second) : nullptr;
    if (!pa || !pb) return R::err(AddError::PairingFailed);
    auto res = negotiate_pairing(*pa, *pb, roster, mbox, rng);
    if (!res) {
      new_pkg.wipe_platform_state();
      return R::err(AddError::PairingFailed);
    }
    new_pairings.emplace(link, res.value());
  }

  // Share the previously established platform keys over the new session.
  const PairingRecord& master_rec = new_pairings.at(make_link(master.id(), new_pkg.id()));
  SessionKeys keys = derive_session_keys(master_rec, state.reset_epoch);
  SecureSession master_side{master.id(), new_pkg.id(), state.reset_epoch, keys};
  SecureSession new_side{new_pkg.id(), master.id(), state.reset_epoch, keys};
  Bytes frame = master_side.protect(kInnerPlatformKeys, master.platform->serialize());
  auto delivered = mbox.transfer(master.id(), std::move(frame));
  std::optional<std::pair<uint8_t, Bytes>> opened;
  if (delivered) opened = new_side.unprotect(*delivered);
  if (!opened || opened->first != kInnerPlatformKeys) {
    new_pkg.wipe_platform_state();
    return R::err(AddError::SessionFailure);
  }
  auto received = pkg::PlatformKeys::deserialize(opened->second);
  if (!received) {
    new_pkg.wipe_platform_state();
    return R::err(AddError::SessionFailure);
  }
  new_pkg.platform = *received;

  // Updated platform info: one more package, its memory view, new links.
  PlatformInfo info = state.info;
  info.package_count += 1;
  info.package_public_keys.emplace_back(new_pkg.id(), cert.new_package_public_key);
  std::sort(info.package_public_keys.begin(), info.package_public_keys.end(),
            [](const auto& x, const auto& y) { return x.first < y.first; });
  if (new_memory) {
    info.memory_config.push_back(*new_memory);
    std::sort(info.memory_config.begin(), info.memory_config.end(),
              [](const auto& x, const auto& y) { return x.package_id < y.package_id; });
  }
  for (const auto& [a, b] : new_links) info.link_topology.push_back(make_link(a, b));
  std::sort(info.link_topology.begin(), info.link_topology.end());
  info.link_topology.erase(std::unique(info.link_topology.begin(), info.link_topology.end()),
                           info.link_topology.end());
  const Digest config_digest = info.digest();

  // Every member re-seals: the locked configuration changed and the packages
  // that paired gained comms keys.
  AddResult out;
  out.state = state;
  out.state.members.push_back(new_pkg.id());
  std::sort(out.state.members.begin(), out.state.members.end());
  out.state.info = info;
  new_pkg.locked_config_digest = config_digest;
  new_pkg.service = state.service;
  for (auto* m : members) {
    m->locked_config_digest = config_digest;
    pkg::BlobContents contents;
    contents.platform = *m->platform;
    contents.master_comms = m->master_comms;
    contents.locked_config_digest = config_digest;
    contents.service = *m->service;
    out.blobs.emplace(m->id(), pkg::seal_key_blob(m->identity(), contents, rng));
  }
  {
    pkg::BlobContents contents;
    contents.platform = *new_pkg.platform;
    contents.master_comms = new_pkg.master_comms;
    contents.locked_config_digest = config_digest;
    contents.service = state.service;
    out.blobs.emplace(new_pkg.id(), pkg::seal_key_blob(new_pkg.identity(), contents, rng));
  }

  Link master_link = make_link(master.id(), new_pkg.id());
  out.state.session_keys.emplace(master_link,
                                 derive_session_keys(master_rec, state.reset_epoch));
  for (const auto& [link, rec] : new_pairings) {
    bool physical = std::find(info.link_topology.begin(), info.link_topology.end(), link) !=
                    info.link_topology.end();
    if (physical) out.state.link_keys.emplace(link, derive_link_keys(rec, state.reset_epoch));
  }
  return R::ok(std::move(out));
}

}  // namespace mptee::establishment
