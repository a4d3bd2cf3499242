#pragma once

// TA-facing cryptographic operations: digests, MACs, key derivation, a
// seedable DRBG and secp256k1 ECDSA. Hash and cipher primitives are backed by
// OpenSSL libcrypto; the ECDSA signing and verification arithmetic is done
// here on top of its bignum/point layer.

#include <array>
#include <cstdint>
#include <memory>
#include <mutex>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace teeod::tee {

using Bytes = std::vector<uint8_t>;

enum class CryptoErrc {
  kUnsupportedAlg,
  kInvalidKey,
  kInvalidSignature,
  kBackend,
};

class CryptoError : public std::runtime_error {
 public:
  CryptoError(CryptoErrc code, const std::string& what)
      : std::runtime_error(what), code_(code) {}
  CryptoErrc code() const noexcept { return code_; }

 private:
  CryptoErrc code_;
};

enum class DigestAlg { kSha256, kSha512 };

// Throws CryptoError(kUnsupportedAlg) for anything but "SHA-256"/"SHA-512".
DigestAlg parse_digest_alg(std::string_view name);
std::size_t digest_size(DigestAlg alg);

// Incremental digest.
class Digest {
 public:
  explicit Digest(DigestAlg alg);
  ~Digest();
  Digest(const Digest&) = delete;
  Digest& operator=(const Digest&) = delete;

  void update(std::span<const uint8_t> data);
  Bytes finish();

 private:
  struct Impl;
  Impl* impl_;
};

Bytes digest(DigestAlg alg, std::span<const uint8_t> msg);
Bytes hmac(DigestAlg alg, std::span<const uint8_t> key, std::span<const uint8_t> msg);

Bytes sha256(std::span<const uint8_t> msg);
Bytes sha256d(std::span<const uint8_t> msg);
Bytes ripemd160(std::span<const uint8_t> msg);
Bytes hash160(std::span<const uint8_t> msg);

Bytes pbkdf2_hmac_sha512(std::string_view password, std::span<const uint8_t> salt,
                         uint32_t iterations, std::size_t out_len);
// RFC 5869 extract-and-expand over HMAC-SHA-256.
Bytes hkdf_sha256(std::span<const uint8_t> ikm, std::span<const uint8_t> salt,
                  std::span<const uint8_t> info, std::size_t out_len);

// HMAC_DRBG (SHA-256). Identical seeds give identical streams; thread-safe.
class Rng {
 public:
  explicit Rng(uint64_t seed);
  explicit Rng(std::span<const uint8_t> seed_material);
  static std::unique_ptr<Rng> from_entropy();

  void fill(std::span<uint8_t> out);
  Bytes random_bytes(std::size_t n);

 private:
  void update(std::span<const uint8_t> provided);

  std::mutex mu_;
  std::array<uint8_t, 32> key_{};
  std::array<uint8_t, 32> v_{};
};

class MonotonicCounter {
 public:
  uint64_t next() {
    std::lock_guard lock(mu_);
    return ++value_;
  }

 private:
  std::mutex mu_;
  uint64_t value_ = 0;
};

namespace secp256k1 {

using Scalar = std::array<uint8_t, 32>;

struct Signature {
  Scalar r{};
  Scalar s{};

  std::array<uint8_t, 64> compact() const;
  static Signature from_compact(std::span<const uint8_t> bytes);
  Bytes der() const;

  friend bool operator==(const Signature&, const Signature&) = default;
};

bool is_valid_private_key(std::span<const uint8_t> key);
// 33-byte SEC1 compressed or 65-byte uncompressed point.
Bytes public_key(const Scalar& private_key, bool compressed = true);
// (a + b) mod n; throws CryptoError(kInvalidKey) when the sum is zero.
Scalar add_mod_n(const Scalar& a, const Scalar& b);
// true iff the 32-byte big-endian value is below the group order.
bool less_than_order(std::span<const uint8_t> value);

// RFC 6979 nonce (HMAC-SHA-256) for the given key and 32-byte digest.
Scalar deterministic_nonce(const Scalar& private_key, std::span<const uint8_t> hash);
// Deterministic nonce, s normalized to the lower half of the order.
Signature sign(const Scalar& private_key, std::span<const uint8_t> hash);
bool verify(std::span<const uint8_t> public_key, std::span<const uint8_t> hash,
            const Signature& sig);

}  // namespace secp256k1

}  // namespace teeod::tee
