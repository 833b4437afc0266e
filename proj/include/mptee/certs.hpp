// Copyright mptee contributors.
// Licensed under the Apache License, Version 2.0, see LICENSE for details.
// SPDX-License-Identifier: Apache-2.0
#pragma once

// Flat single-signature certificate structures. Chain semantics are modeled
// by explicit issuer links, not X.509.

#include <optional>

#include "mptee/crypto.hpp"

namespace mptee::certs {

struct PCKCertificate {
  InstanceId platform_instance_id{};
  uint32_t tcb_level = 0;
  crypto::VerifyKey pck_public{};
  uint32_t issuer = 0;  // service_id
  crypto::Signature signature{};

  Bytes signed_body() const;
  Bytes serialize() const;
  static std::optional<PCKCertificate> deserialize(ByteView data);
  bool operator==(const PCKCertificate& o) const;
};

struct MembershipCertificate {
  InstanceId platform_instance_id{};
  crypto::VerifyKey new_package_public_key{};
  uint32_t issuer = 0;
  crypto::Signature signature{};

  Bytes signed_body() const;
  Bytes serialize() const;
  static std::optional<MembershipCertificate> deserialize(ByteView data);
};

/// Created by BIOS via the Master Package; carries no secrets and travels
/// in plaintext through untrusted system software.
struct AddRequest {
  InstanceId platform_instance_id{};
  crypto::VerifyKey new_package_public_key{};
  PackageId master_package_id = 0;
  crypto::Signature signature{};

  Bytes signed_body() const;
  Bytes serialize() const;
  static std::optional<AddRequest> deserialize(ByteView data);
  std::string to_text() const;
};

}  // namespace mptee::certs
