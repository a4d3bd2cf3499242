#pragma once

// Trusted storage sealed to a simulated device-unique key.
//
// On-disk record, one file per object at <root>/<hex(uuid)>/<hex(sha256(id))>:
//
//   version u8 (=1) | ta_uuid[16] | id_len u8 | id_digest[32] | nonce[12] |
//   length u32le | ciphertext[length] | tag[16]
//
// AES-256-GCM under HKDF-SHA-256(huk, salt="teeod-storage", info=ta_uuid);
// every header byte before the ciphertext is authenticated as AAD.

#include <array>
#include <cstdint>
#include <filesystem>
#include <mutex>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "teeod/crypto.hpp"
#include "teeod/protocol.hpp"

namespace teeod::tee {

inline constexpr std::size_t kMaxObjectIdSize = 64;
inline constexpr uint8_t kSealedObjectVersion = 1;
inline constexpr std::size_t kSealedHeaderSize = 1 + 16 + 1 + 32 + 12 + 4;
inline constexpr std::size_t kSealTagSize = 16;

class DeviceKey {
 public:
  static DeviceKey from_bytes(std::span<const uint8_t> huk);
  static DeviceKey from_seed(std::string_view seed);

  DeviceKey(const DeviceKey&) = default;
  DeviceKey& operator=(const DeviceKey&) = default;
  ~DeviceKey();

  // The only way key material leaves this object.
  std::array<uint8_t, 32> derive(const Uuid& ta_uuid, std::string_view label) const;

 private:
  DeviceKey() = default;
  std::array<uint8_t, 32> huk_{};
};

class StorageError : public std::runtime_error {
 public:
  StorageError(ReturnCode code, const std::string& what) : std::runtime_error(what), code_(code) {}
  // kErrorItemNotFound, kErrorCorruptObject (tampered), kErrorBadParameters,
  // or kErrorGeneric for I/O failures.
  ReturnCode code() const noexcept { return code_; }

 private:
  ReturnCode code_;
};

// Pure sealing primitives, exposed for the format tests.
Bytes seal_object(const DeviceKey& key, const Uuid& ta_uuid, std::string_view object_id,
                  std::span<const uint8_t> payload, std::span<const uint8_t, 12> nonce);
Bytes unseal_object(const DeviceKey& key, const Uuid& ta_uuid, std::string_view object_id,
                    std::span<const uint8_t> record);

class SecureStorage {
 public:
  SecureStorage(std::filesystem::path root, DeviceKey key, Rng& rng);

  void put(const Uuid& ta_uuid, std::string_view object_id, std::span<const uint8_t> payload);
  Bytes get(const Uuid& ta_uuid, std::string_view object_id) const;
  void remove(const Uuid& ta_uuid, std::string_view object_id);
  bool exists(const Uuid& ta_uuid, std::string_view object_id) const;
  // hex(sha256(object_id)) of every object stored under the TA.
  std::vector<std::string> list(const Uuid& ta_uuid) const;

  std::filesystem::path path_for(const Uuid& ta_uuid, std::string_view object_id) const;
  const std::filesystem::path& root() const { return root_; }

 private:
  std::mutex& lock_for(const std::filesystem::path& p) const;

  std::filesystem::path root_;
  DeviceKey key_;
  Rng& rng_;
  mutable std::array<std::mutex, 32> stripes_;
};

}  // namespace teeod::tee
