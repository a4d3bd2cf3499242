#define OPENSSL_SUPPRESS_DEPRECATED  // RIPEMD160(): not in the 3.0 default provider

#include "teeod/crypto.hpp"

#include <openssl/bn.h>
#include <openssl/ec.h>
#include <openssl/evp.h>
#include <openssl/hmac.h>
#include <openssl/obj_mac.h>
#include <openssl/rand.h>
#include <openssl/ripemd.h>

#include <cstring>
#include <memory>

#include "teeod/bytes.hpp"

namespace teeod::tee {

namespace {

const EVP_MD* evp_md(DigestAlg alg) {
  switch (alg) {
    case DigestAlg::kSha256: return EVP_sha256();
    case DigestAlg::kSha512: return EVP_sha512();
  }
  throw CryptoError(CryptoErrc::kUnsupportedAlg, "unsupported digest");
}

[[noreturn]] void backend_failure(const char* what) {
  throw CryptoError(CryptoErrc::kBackend, what);
}

}  // namespace

DigestAlg parse_digest_alg(std::string_view name) {
  if (name == "SHA-256" || name == "SHA256" || name == "sha256") return DigestAlg::kSha256;
  if (name == "SHA-512" || name == "SHA512" || name == "sha512") return DigestAlg::kSha512;
  throw CryptoError(CryptoErrc::kUnsupportedAlg, "unsupported digest: " + std::string(name));
}

std::size_t digest_size(DigestAlg alg) { return alg == DigestAlg::kSha256 ? 32 : 64; }

struct Digest::Impl {
  EVP_MD_CTX* ctx = nullptr;
  DigestAlg alg;
};

Digest::Digest(DigestAlg alg) : impl_(new Impl{EVP_MD_CTX_new(), alg}) {
  if (!impl_->ctx || EVP_DigestInit_ex(impl_->ctx, evp_md(alg), nullptr) != 1) {
    EVP_MD_CTX_free(impl_->ctx);
    delete impl_;
    backend_failure("EVP_DigestInit_ex");
  }
}

Digest::~Digest() {
  EVP_MD_CTX_free(impl_->ctx);
  delete impl_;
}

void Digest::update(std::span<const uint8_t> data) {
  if (EVP_DigestUpdate(impl_->ctx, data.data(), data.size()) != 1)
    backend_failure("EVP_DigestUpdate");
}

Bytes Digest::finish() {
  Bytes out(digest_size(impl_->alg));
  unsigned int len = 0;
  if (EVP_DigestFinal_ex(impl_->ctx, out.data(), &len) != 1) backend_failure("EVP_DigestFinal_ex");
  return out;
}

Bytes digest(DigestAlg alg, std::span<const uint8_t> msg) {
  Digest d(alg);
  d.update(msg);
  return d.finish();
}

Bytes hmac(DigestAlg alg, std::span<const uint8_t> key, std::span<const uint8_t> msg) {
  Bytes out(digest_size(alg));
  unsigned int len = 0;
  static const uint8_t kEmpty = 0;
  if (!HMAC(evp_md(alg), key.empty() ? &kEmpty : key.data(), static_cast<int>(key.size()),
            msg.empty() ? &kEmpty : msg.data(), msg.size(), out.data(), &len)) {
    backend_failure("HMAC");
  }
  return out;
}

Bytes sha256(std::span<const uint8_t> msg) { return digest(DigestAlg::kSha256, msg); }

Bytes sha256d(std::span<const uint8_t> msg) { return sha256(sha256(msg)); }

Bytes ripemd160(std::span<const uint8_t> msg) {
  Bytes out(RIPEMD160_DIGEST_LENGTH);
  RIPEMD160(msg.data(), msg.size(), out.data());
  return out;
}

Bytes hash160(std::span<const uint8_t> msg) { return ripemd160(sha256(msg)); }

Bytes pbkdf2_hmac_sha512(std::string_view password, std::span<const uint8_t> salt,
                         uint32_t iterations, std::size_t out_len) {
  Bytes out(out_len);
  if (PKCS5_PBKDF2_HMAC(password.data(), static_cast<int>(password.size()), salt.data(),
                        static_cast<int>(salt.size()), static_cast<int>(iterations),
                        EVP_sha512(), static_cast<int>(out_len), out.data()) != 1) {
    backend_failure("PKCS5_PBKDF2_HMAC");
  }
  return out;
}

Bytes hkdf_sha256(std::span<const uint8_t> ikm, std::span<const uint8_t> salt,
                  std::span<const uint8_t> info, std::size_t out_len) {
  if (out_len > 255 * 32) throw CryptoError(CryptoErrc::kInvalidKey, "hkdf output too long");
  Bytes zero_salt(32, 0);
  Bytes prk = hmac(DigestAlg::kSha256, salt.empty() ? std::span<const uint8_t>(zero_salt) : salt,
                   ikm);
  Bytes out;
  Bytes t;
  for (uint8_t counter = 1; out.size() < out_len; ++counter) {
    Bytes block(t);
    block.insert(block.end(), info.begin(), info.end());
    block.push_back(counter);
    t = hmac(DigestAlg::kSha256, prk, block);
    out.insert(out.end(), t.begin(), t.end());
  }
  out.resize(out_len);
  secure_zero(prk);
  return out;
}

// ---------------------------------------------------------------------------
// HMAC_DRBG

Rng::Rng(uint64_t seed) {
  uint8_t material[17] = {'t', 'e', 'e', 'o', 'd', '-', 'r', 'n', 'g'};
  for (int i = 0; i < 8; ++i) material[9 + i] = static_cast<uint8_t>(seed >> (8 * i));
  v_.fill(0x01);
  update(material);
}

Rng::Rng(std::span<const uint8_t> seed_material) {
  v_.fill(0x01);
  update(seed_material);
}

std::unique_ptr<Rng> Rng::from_entropy() {
  std::array<uint8_t, 48> seed{};
  if (RAND_bytes(seed.data(), static_cast<int>(seed.size())) != 1) backend_failure("RAND_bytes");
  auto rng = std::make_unique<Rng>(std::span<const uint8_t>(seed));
  secure_zero(seed);
  return rng;
}

void Rng::update(std::span<const uint8_t> provided) {
  for (uint8_t round = 0; round < (provided.empty() ? 1 : 2); ++round) {
    Bytes msg(v_.begin(), v_.end());
    msg.push_back(round);
    msg.insert(msg.end(), provided.begin(), provided.end());
    Bytes k = hmac(DigestAlg::kSha256, key_, msg);
    std::memcpy(key_.data(), k.data(), 32);
    Bytes v = hmac(DigestAlg::kSha256, key_, v_);
    std::memcpy(v_.data(), v.data(), 32);
  }
}

void Rng::fill(std::span<uint8_t> out) {
  std::lock_guard lock(mu_);
  std::size_t done = 0;
  while (done < out.size()) {
    Bytes v = hmac(DigestAlg::kSha256, key_, v_);
    std::memcpy(v_.data(), v.data(), 32);
    const std::size_t n = std::min<std::size_t>(32, out.size() - done);
    std::memcpy(out.data() + done, v_.data(), n);
    done += n;
  }
  update({});
}

Bytes Rng::random_bytes(std::size_t n) {
  Bytes out(n);
  fill(out);
  return out;
}

// ---------------------------------------------------------------------------
// secp256k1

namespace secp256k1 {

namespace {

struct BnDeleter {
  void operator()(BIGNUM* p) const { BN_clear_free(p); }
};
struct CtxDeleter {
  void operator()(BN_CTX* p) const { BN_CTX_free(p); }
};
struct PointDeleter {
  void operator()(EC_POINT* p) const { EC_POINT_clear_free(p); }
};
using Bn = std::unique_ptr<BIGNUM, BnDeleter>;
using BnCtx = std::unique_ptr<BN_CTX, CtxDeleter>;
using Point = std::unique_ptr<EC_POINT, PointDeleter>;

struct Curve {
  EC_GROUP* group = nullptr;
  BIGNUM* order = nullptr;
  BIGNUM* half_order = nullptr;

  Curve() {
    group = EC_GROUP_new_by_curve_name(NID_secp256k1);
    order = BN_new();
    half_order = BN_new();
    if (!group || !order || !half_order || !EC_GROUP_get_order(group, order, nullptr) ||
        !BN_rshift1(half_order, order)) {
      backend_failure("secp256k1 group setup");
    }
  }
};

const Curve& curve() {
  static const Curve c;
  return c;
}

Bn make_bn() {
  Bn b(BN_new());
  if (!b) backend_failure("BN_new");
  return b;
}

Bn bn_from(std::span<const uint8_t> bytes) {
  Bn b(BN_bin2bn(bytes.data(), static_cast<int>(bytes.size()), nullptr));
  if (!b) backend_failure("BN_bin2bn");
  return b;
}

Scalar to_scalar(const BIGNUM* b) {
  Scalar out{};
  if (BN_bn2binpad(b, out.data(), 32) != 32) backend_failure("BN_bn2binpad");
  return out;
}

BnCtx make_ctx() {
  BnCtx ctx(BN_CTX_new());
  if (!ctx) backend_failure("BN_CTX_new");
  return ctx;
}

bool in_range(const BIGNUM* v) {
  return !BN_is_zero(v) && !BN_is_negative(v) && BN_cmp(v, curve().order) < 0;
}

void check_hash(std::span<const uint8_t> hash) {
  if (hash.size() != 32) throw CryptoError(CryptoErrc::kInvalidSignature, "hash must be 32 bytes");
}

Bytes concat(std::initializer_list<std::span<const uint8_t>> parts) {
  Bytes out;
  for (auto p : parts) out.insert(out.end(), p.begin(), p.end());
  return out;
}

}  // namespace

std::array<uint8_t, 64> Signature::compact() const {
  std::array<uint8_t, 64> out{};
  std::memcpy(out.data(), r.data(), 32);
  std::memcpy(out.data() + 32, s.data(), 32);
  return out;
}

Signature Signature::from_compact(std::span<const uint8_t> bytes) {
  if (bytes.size() != 64) throw CryptoError(CryptoErrc::kInvalidSignature, "compact sig is 64 bytes");
  Signature sig;
  std::memcpy(sig.r.data(), bytes.data(), 32);
  std::memcpy(sig.s.data(), bytes.data() + 32, 32);
  return sig;
}

Bytes Signature::der() const {
  auto encode_int = [](const Scalar& v) {
    std::size_t start = 0;
    while (start < 31 && v[start] == 0) ++start;
    Bytes out;
    if (v[start] & 0x80) out.push_back(0);
    out.insert(out.end(), v.begin() + static_cast<std::ptrdiff_t>(start), v.end());
    return out;
  };
  Bytes rb = encode_int(r);
  Bytes sb = encode_int(s);
  Bytes out = {0x30, static_cast<uint8_t>(4 + rb.size() + sb.size()), 0x02,
               static_cast<uint8_t>(rb.size())};
  out.insert(out.end(), rb.begin(), rb.end());
  out.push_back(0x02);
  out.push_back(static_cast<uint8_t>(sb.size()));
  out.insert(out.end(), sb.begin(), sb.end());
  return out;
}

bool less_than_order(std::span<const uint8_t> value) {
  Bn v = bn_from(value);
  return BN_cmp(v.get(), curve().order) < 0;
}

bool is_valid_private_key(std::span<const uint8_t> key) {
  if (key.size() != 32) return false;
  Bn v = bn_from(key);
  return in_range(v.get());
}

Bytes public_key(const Scalar& private_key, bool compressed) {
  if (!is_valid_private_key(private_key))
    throw CryptoError(CryptoErrc::kInvalidKey, "private key out of range");
  const Curve& c = curve();
  BnCtx ctx = make_ctx();
  Bn d = bn_from(private_key);
  Point q(EC_POINT_new(c.group));
  if (!q || !EC_POINT_mul(c.group, q.get(), d.get(), nullptr, nullptr, ctx.get()))
    backend_failure("EC_POINT_mul");
  Bytes out(compressed ? 33 : 65);
  auto form = compressed ? POINT_CONVERSION_COMPRESSED : POINT_CONVERSION_UNCOMPRESSED;
  if (EC_POINT_point2oct(c.group, q.get(), form, out.data(), out.size(), ctx.get()) != out.size())
    backend_failure("EC_POINT_point2oct");
  return out;
}

Scalar add_mod_n(const Scalar& a, const Scalar& b) {
  BnCtx ctx = make_ctx();
  Bn x = bn_from(a);
  Bn y = bn_from(b);
  Bn sum = make_bn();
  if (!BN_mod_add(sum.get(), x.get(), y.get(), curve().order, ctx.get())) backend_failure("BN_mod_add");
  if (BN_is_zero(sum.get())) throw CryptoError(CryptoErrc::kInvalidKey, "scalar sum is zero");
  return to_scalar(sum.get());
}

Scalar deterministic_nonce(const Scalar& private_key, std::span<const uint8_t> hash) {
  check_hash(hash);
  const Curve& c = curve();
  BnCtx ctx = make_ctx();
  // bits2octets(h): qlen == hlen == 256, so only the mod-n reduction applies.
  Bn h = bn_from(hash);
  if (BN_cmp(h.get(), c.order) >= 0 && !BN_sub(h.get(), h.get(), c.order)) backend_failure("BN_sub");
  Scalar h1 = to_scalar(h.get());

  Bytes v(32, 0x01);
  Bytes k(32, 0x00);
  const uint8_t zero = 0x00;
  const uint8_t one = 0x01;
  k = hmac(DigestAlg::kSha256, k, concat({v, {&zero, 1}, private_key, h1}));
  v = hmac(DigestAlg::kSha256, k, v);
  k = hmac(DigestAlg::kSha256, k, concat({v, {&one, 1}, private_key, h1}));
  v = hmac(DigestAlg::kSha256, k, v);
  for (;;) {
    v = hmac(DigestAlg::kSha256, k, v);
    Bn candidate = bn_from(v);
    if (in_range(candidate.get())) return to_scalar(candidate.get());
    k = hmac(DigestAlg::kSha256, k, concat({v, {&zero, 1}}));
    v = hmac(DigestAlg::kSha256, k, v);
  }
}

Signature sign(const Scalar& private_key, std::span<const uint8_t> hash) {
  check_hash(hash);
  if (!is_valid_private_key(private_key))
    throw CryptoError(CryptoErrc::kInvalidKey, "private key out of range");
  const Curve& c = curve();
  BnCtx ctx = make_ctx();
  Bn d = bn_from(private_key);
  Bn e = bn_from(hash);
  if (!BN_nnmod(e.get(), e.get(), c.order, ctx.get())) backend_failure("BN_nnmod");

  Scalar nonce = deterministic_nonce(private_key, hash);
  Bn k = bn_from(nonce);
  Point kg(EC_POINT_new(c.group));
  Bn x = make_bn();
  if (!kg || !EC_POINT_mul(c.group, kg.get(), k.get(), nullptr, nullptr, ctx.get()) ||
      !EC_POINT_get_affine_coordinates(c.group, kg.get(), x.get(), nullptr, ctx.get())) {
    backend_failure("nonce point");
  }
  Bn r = make_bn();
  Bn s = make_bn();
  Bn kinv(BN_mod_inverse(nullptr, k.get(), c.order, ctx.get()));
  if (!kinv || !BN_nnmod(r.get(), x.get(), c.order, ctx.get()) ||
      !BN_mod_mul(s.get(), r.get(), d.get(), c.order, ctx.get()) ||
      !BN_mod_add(s.get(), s.get(), e.get(), c.order, ctx.get()) ||
      !BN_mod_mul(s.get(), s.get(), kinv.get(), c.order, ctx.get())) {
    backend_failure("ecdsa arithmetic");
  }
  if (BN_is_zero(r.get()) || BN_is_zero(s.get()))
    throw CryptoError(CryptoErrc::kInvalidSignature, "degenerate nonce");
  if (BN_cmp(s.get(), c.half_order) > 0 && !BN_sub(s.get(), c.order, s.get()))
    backend_failure("BN_sub");

  Signature sig;
  sig.r = to_scalar(r.get());
  sig.s = to_scalar(s.get());
  return sig;
}

bool verify(std::span<const uint8_t> public_key, std::span<const uint8_t> hash,
            const Signature& sig) {
  if (hash.size() != 32) return false;
  const Curve& c = curve();
  BnCtx ctx = make_ctx();
  Point q(EC_POINT_new(c.group));
  if (!q) backend_failure("EC_POINT_new");
  if (public_key.empty() ||
      !EC_POINT_oct2point(c.group, q.get(), public_key.data(), public_key.size(), ctx.get()) ||
      EC_POINT_is_at_infinity(c.group, q.get()) ||
      EC_POINT_is_on_curve(c.group, q.get(), ctx.get()) != 1) {
    return false;
  }
  Bn r = bn_from(sig.r);
  Bn s = bn_from(sig.s);
  if (!in_range(r.get()) || !in_range(s.get())) return false;

  Bn e = bn_from(hash);
  Bn w(BN_mod_inverse(nullptr, s.get(), c.order, ctx.get()));
  Bn u1 = make_bn();
  Bn u2 = make_bn();
  if (!w || !BN_nnmod(e.get(), e.get(), c.order, ctx.get()) ||
      !BN_mod_mul(u1.get(), e.get(), w.get(), c.order, ctx.get()) ||
      !BN_mod_mul(u2.get(), r.get(), w.get(), c.order, ctx.get())) {
    backend_failure("ecdsa verify arithmetic");
  }
  Point x(EC_POINT_new(c.group));
  if (!x || !EC_POINT_mul(c.group, x.get(), u1.get(), q.get(), u2.get(), ctx.get()))
    backend_failure("EC_POINT_mul");
  if (EC_POINT_is_at_infinity(c.group, x.get())) return false;
  Bn xr = make_bn();
  if (!EC_POINT_get_affine_coordinates(c.group, x.get(), xr.get(), nullptr, ctx.get()) ||
      !BN_nnmod(xr.get(), xr.get(), c.order, ctx.get())) {
    backend_failure("affine coordinates");
  }
  return BN_cmp(xr.get(), r.get()) == 0;
}

}  // namespace secp256k1

}  // namespace teeod::tee
