#include "teeod/storage.hpp"

#include <openssl/evp.h>

#include <algorithm>
#include <cstring>
#include <fstream>
#include <iterator>
#include <memory>

#include "teeod/bytes.hpp"

namespace teeod::tee {

namespace fs = std::filesystem;

namespace {

constexpr std::string_view kStorageSalt = "teeod-storage";

struct CipherCtxDeleter {
  void operator()(EVP_CIPHER_CTX* c) const { EVP_CIPHER_CTX_free(c); }
};
using CipherCtx = std::unique_ptr<EVP_CIPHER_CTX, CipherCtxDeleter>;

std::span<const uint8_t> as_bytes(std::string_view s) {
  return {reinterpret_cast<const uint8_t*>(s.data()), s.size()};
}

void check_object_id(std::string_view object_id) {
  if (object_id.size() > kMaxObjectIdSize)
    throw StorageError(ReturnCode::kErrorBadParameters, "object id longer than 64 bytes");
}

Bytes make_header(const Uuid& ta_uuid, std::string_view object_id,
                  std::span<const uint8_t, 12> nonce, uint32_t length) {
  Bytes h(kSealedHeaderSize);
  uint8_t* p = h.data();
  *p++ = kSealedObjectVersion;
  std::memcpy(p, ta_uuid.bytes().data(), 16);
  p += 16;
  *p++ = static_cast<uint8_t>(object_id.size());
  Bytes id_digest = sha256(as_bytes(object_id));
  std::memcpy(p, id_digest.data(), 32);
  p += 32;
  std::memcpy(p, nonce.data(), 12);
  p += 12;
  store_le32(p, length);
  return h;
}

}  // namespace

// ---------------------------------------------------------------------------

DeviceKey DeviceKey::from_bytes(std::span<const uint8_t> huk) {
  if (huk.size() != 32) throw CryptoError(CryptoErrc::kInvalidKey, "device key must be 32 bytes");
  DeviceKey k;
  std::memcpy(k.huk_.data(), huk.data(), 32);
  return k;
}

DeviceKey DeviceKey::from_seed(std::string_view seed) {
  Bytes material(as_bytes("teeod-huk:").begin(), as_bytes("teeod-huk:").end());
  material.insert(material.end(), seed.begin(), seed.end());
  Bytes h = sha256(material);
  DeviceKey k = from_bytes(h);
  secure_zero(h);
  return k;
}

DeviceKey::~DeviceKey() { secure_zero(huk_); }

std::array<uint8_t, 32> DeviceKey::derive(const Uuid& ta_uuid, std::string_view label) const {
  Bytes info(ta_uuid.bytes().begin(), ta_uuid.bytes().end());
  Bytes okm = hkdf_sha256(huk_, as_bytes(label), info, 32);
  std::array<uint8_t, 32> out{};
  std::memcpy(out.data(), okm.data(), 32);
  secure_zero(okm);
  return out;
}

// ---------------------------------------------------------------------------

Bytes seal_object(const DeviceKey& key, const Uuid& ta_uuid, std::string_view object_id,
                  std::span<const uint8_t> payload, std::span<const uint8_t, 12> nonce) {
  check_object_id(object_id);
  Bytes record = make_header(ta_uuid, object_id, nonce, static_cast<uint32_t>(payload.size()));
  std::array<uint8_t, 32> k = key.derive(ta_uuid, kStorageSalt);

  CipherCtx ctx(EVP_CIPHER_CTX_new());
  int len = 0;
  const std::size_t ct_offset = record.size();
  record.resize(ct_offset + payload.size() + kSealTagSize);
  bool ok = ctx && EVP_EncryptInit_ex(ctx.get(), EVP_aes_256_gcm(), nullptr, nullptr, nullptr) &&
            EVP_CIPHER_CTX_ctrl(ctx.get(), EVP_CTRL_GCM_SET_IVLEN, 12, nullptr) &&
            EVP_EncryptInit_ex(ctx.get(), nullptr, nullptr, k.data(), nonce.data()) &&
            EVP_EncryptUpdate(ctx.get(), nullptr, &len, record.data(),
                              static_cast<int>(kSealedHeaderSize));
  if (ok && !payload.empty()) {
    ok = EVP_EncryptUpdate(ctx.get(), record.data() + ct_offset, &len, payload.data(),
                           static_cast<int>(payload.size()));
  }
  ok = ok && EVP_EncryptFinal_ex(ctx.get(), record.data() + ct_offset + payload.size(), &len) &&
       EVP_CIPHER_CTX_ctrl(ctx.get(), EVP_CTRL_GCM_GET_TAG, kSealTagSize,
                           record.data() + ct_offset + payload.size());
  secure_zero(k);
  if (!ok) throw StorageError(ReturnCode::kErrorGeneric, "seal failed");
  return record;
}

Bytes unseal_object(const DeviceKey& key, const Uuid& ta_uuid, std::string_view object_id,
                    std::span<const uint8_t> record) {
  check_object_id(object_id);
  auto tampered = [] { return StorageError(ReturnCode::kErrorCorruptObject, "sealed object tampered"); };
  if (record.size() < kSealedHeaderSize + kSealTagSize) throw tampered();
  const uint32_t length = load_le32(record.data() + kSealedHeaderSize - 4);
  if (record.size() != kSealedHeaderSize + static_cast<std::size_t>(length) + kSealTagSize)
    throw tampered();

  std::array<uint8_t, 12> nonce{};
  std::memcpy(nonce.data(), record.data() + kSealedHeaderSize - 16, 12);
  // The stored header must be exactly the one this (uuid, id) would produce.
  Bytes expected = make_header(ta_uuid, object_id, nonce, length);
  if (!std::equal(expected.begin(), expected.end(), record.begin())) throw tampered();

  std::array<uint8_t, 32> k = key.derive(ta_uuid, kStorageSalt);
  Bytes plain(length);
  Bytes tag(record.end() - kSealTagSize, record.end());
  CipherCtx ctx(EVP_CIPHER_CTX_new());
  int len = 0;
  bool ok = ctx && EVP_DecryptInit_ex(ctx.get(), EVP_aes_256_gcm(), nullptr, nullptr, nullptr) &&
            EVP_CIPHER_CTX_ctrl(ctx.get(), EVP_CTRL_GCM_SET_IVLEN, 12, nullptr) &&
            EVP_DecryptInit_ex(ctx.get(), nullptr, nullptr, k.data(), nonce.data()) &&
            EVP_DecryptUpdate(ctx.get(), nullptr, &len, record.data(),
                              static_cast<int>(kSealedHeaderSize));
  if (ok && length > 0) {
    ok = EVP_DecryptUpdate(ctx.get(), plain.data(), &len, record.data() + kSealedHeaderSize,
                           static_cast<int>(length));
  }
  ok = ok && EVP_CIPHER_CTX_ctrl(ctx.get(), EVP_CTRL_GCM_SET_TAG, kSealTagSize, tag.data());
  uint8_t scratch[16];
  ok = ok && EVP_DecryptFinal_ex(ctx.get(), scratch, &len) > 0;
  secure_zero(k);
  if (!ok) {
    secure_zero(plain);
    throw tampered();
  }
  return plain;
}

// ---------------------------------------------------------------------------

SecureStorage::SecureStorage(fs::path root, DeviceKey key, Rng& rng)
    : root_(std::move(root)), key_(std::move(key)), rng_(rng) {
  fs::create_directories(root_);
}

fs::path SecureStorage::path_for(const Uuid& ta_uuid, std::string_view object_id) const {
  check_object_id(object_id);
  return root_ / to_hex(ta_uuid.bytes()) / to_hex(sha256(as_bytes(object_id)));
}

std::mutex& SecureStorage::lock_for(const fs::path& p) const {
  return stripes_[std::hash<std::string>{}(p.string()) % stripes_.size()];
}

void SecureStorage::put(const Uuid& ta_uuid, std::string_view object_id,
                        std::span<const uint8_t> payload) {
  const fs::path path = path_for(ta_uuid, object_id);
  std::array<uint8_t, 12> nonce{};
  rng_.fill(nonce);
  Bytes record = seal_object(key_, ta_uuid, object_id, payload, nonce);

  std::lock_guard lock(lock_for(path));
  std::error_code ec;
  fs::create_directories(path.parent_path(), ec);
  fs::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    out.write(reinterpret_cast<const char*>(record.data()), static_cast<std::streamsize>(record.size()));
    if (!out) throw StorageError(ReturnCode::kErrorGeneric, "cannot write " + tmp.string());
  }
  fs::rename(tmp, path, ec);
  if (ec) throw StorageError(ReturnCode::kErrorGeneric, "cannot commit " + path.string());
}

Bytes SecureStorage::get(const Uuid& ta_uuid, std::string_view object_id) const {
  const fs::path path = path_for(ta_uuid, object_id);
  Bytes record;
  {
    std::lock_guard lock(lock_for(path));
    std::ifstream in(path, std::ios::binary);
    if (!in) throw StorageError(ReturnCode::kErrorItemNotFound, "no such object");
    record.assign(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
  }
  return unseal_object(key_, ta_uuid, object_id, record);
}

bool SecureStorage::exists(const Uuid& ta_uuid, std::string_view object_id) const {
  const fs::path path = path_for(ta_uuid, object_id);
  std::lock_guard lock(lock_for(path));
  return fs::is_regular_file(path);
}

void SecureStorage::remove(const Uuid& ta_uuid, std::string_view object_id) {
  const fs::path path = path_for(ta_uuid, object_id);
  std::lock_guard lock(lock_for(path));
  std::error_code ec;
  if (!fs::remove(path, ec)) throw StorageError(ReturnCode::kErrorItemNotFound, "no such object");
}

std::vector<std::string> SecureStorage::list(const Uuid& ta_uuid) const {
  std::vector<std::string> out;
  const fs::path dir = root_ / to_hex(ta_uuid.bytes());
  std::error_code ec;
  if (!fs::is_directory(dir, ec)) return out;
  for (const auto& entry : fs::directory_iterator(dir, ec)) {
    const std::string name = entry.path().filename().string();
    if (entry.is_regular_file() && name.size() == 64) out.push_back(name);
  }
  std::sort(out.begin(), out.end());
  return out;
}

}  // namespace teeod::tee
