// Copyright mptee contributors.
// Licensed under the Apache License, Version 2.0, see LICENSE for details.
// SPDX-License-Identifier: Apache-2.0
#include "mptee/certs.hpp"

#include <sstream>

#include "mptee/serial.hpp"

namespace mptee::certs {

Bytes PCKCertificate::signed_body() const {
  ByteWriter w;
  w.fixed(platform_instance_id);
  w.u32(tcb_level);
  w.fixed(pck_public);
  w.u32(issuer);
  return w.take();
}

Bytes PCKCertificate::serialize() const {
  ByteWriter w;
  w.raw(signed_body());
  w.fixed(signature);
  return w.take();
}

std::optional<PCKCertificate> PCKCertificate::deserialize(ByteView data) {
  ByteReader r(data);
  PCKCertificate c;
  c.platform_instance_id = r.fixed<16>();
  c.tcb_level = r.u32();
  c.pck_public = r.fixed<kSigPublicBytes>();
  c.issuer = r.u32();
  c.signature = r.fixed<kSignatureBytes>();
  if (!r.done()) return std::nullopt;
  return c;
}

bool PCKCertificate::operator==(const PCKCertificate& o) const {
  return serialize() == o.serialize();
}

Bytes MembershipCertificate::signed_body() const {
  ByteWriter w;
  w.fixed(platform_instance_id);
  w.fixed(new_package_public_key);
  w.u32(issuer);
  return w.take();
}

Bytes MembershipCertificate::serialize() const {
  ByteWriter w;
  w.raw(signed_body());
  w.fixed(signature);
  return w.take();
}

std::optional<MembershipCertificate> MembershipCertificate::deserialize(ByteView data) {
  ByteReader r(data);
  MembershipCertificate c;
  c.platform_instance_id = r.fixed<16>();
  c.new_package_public_key = r.fixed<kSigPublicBytes>();
  c.issuer = r.u32();
  c.signature = r.fixed<kSignatureBytes>();
  if (!r.done()) return std::nullopt;
  return c;
}

Bytes AddRequest::signed_body() const {
  ByteWriter w;
  w.fixed(platform_instance_id);
  w.fixed(new_package_public_key);
  w.u32(master_package_id);
  return w.take();
}

Bytes AddRequest::serialize() const {
  ByteWriter w;
  w.raw(signed_body());
  w.fixed(signature);
  return w.take();
}

std::optional<AddRequest> AddRequest::deserialize(ByteView data) {
  ByteReader r(data);
  AddRequest a;
  a.platform_instance_id = r.fixed<16>();
  a.new_package_public_key = r.fixed<kSigPublicBytes>();
  a.master_package_id = r.u32();
  a.signature = r.fixed<kSignatureBytes>();
  if (!r.done()) return std::nullopt;
  return a;
}

std::string AddRequest::to_text() const {
  std::ostringstream os;
  os << "add-request\n"
     << "  platform: " << hex_encode(platform_instance_id) << "\n"
     << "  new-package-key: " << hex_encode(new_package_public_key) << "\n"
     << "  master: " << master_package_id << "\n"
     << "  signature: " << hex_encode(signature) << "\n";
  return os.str();
}

}  // namespace mptee::certs
