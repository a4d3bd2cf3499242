#include <algorithm>
#include <sstream>

#include "teeod/bytes.hpp"
#include "teeod/wallet.hpp"

namespace teeod::wallet {

namespace {

constexpr std::array<std::string_view, 2048> kWordlist = {
#include "bip39_wordlist.inc"
};

constexpr std::string_view kBase58Alphabet =
    "123456789ABCDEFGHJKLMNPQRSTUVWXYZabcdefghijkmnopqrstuvwxyz";

std::vector<std::string_view> split_words(std::string_view text) {
  std::vector<std::string_view> words;
  std::size_t i = 0;
  while (i < text.size()) {
    while (i < text.size() && text[i] == ' ') ++i;
    std::size_t j = i;
    while (j < text.size() && text[j] != ' ') ++j;
    if (j > i) words.push_back(text.substr(i, j - i));
    i = j;
  }
  return words;
}

std::span<const uint8_t> as_bytes(std::string_view s) {
  return {reinterpret_cast<const uint8_t*>(s.data()), s.size()};
}

ExtendedKey split(const Bytes& i64) {
  ExtendedKey k;
  std::copy_n(i64.begin(), 32, k.key.begin());
  std::copy_n(i64.begin() + 32, 32, k.chain_code.begin());
  return k;
}

}  // namespace

const std::array<std::string_view, 2048>& wordlist() { return kWordlist; }

std::string entropy_to_mnemonic(std::span<const uint8_t> entropy) {
  if (entropy.size() != kEntropySize) throw std::invalid_argument("mnemonic entropy must be 16 bytes");
  const Bytes hash = tee::sha256(entropy);
  // 128 entropy bits followed by the top 4 bits of the hash: 132 bits.
  Bytes bits(entropy.begin(), entropy.end());
  bits.push_back(hash[0]);
  std::string out;
  for (std::size_t w = 0; w < kMnemonicWords; ++w) {
    uint32_t index = 0;
    for (std::size_t b = 0; b < 11; ++b) {
      const std::size_t bit = w * 11 + b;
      index = (index << 1) | ((bits[bit / 8] >> (7 - bit % 8)) & 1);
    }
    if (w) out += ' ';
    out += kWordlist[index];
  }
  return out;
}

std::optional<Bytes> mnemonic_to_entropy(std::string_view mnemonic) {
  const auto words = split_words(mnemonic);
  if (words.size() != kMnemonicWords) return std::nullopt;
  Bytes bits(17, 0);
  for (std::size_t w = 0; w < words.size(); ++w) {
    const auto it = std::lower_bound(kWordlist.begin(), kWordlist.end(), words[w]);
    if (it == kWordlist.end() || *it != words[w]) return std::nullopt;
    const auto index = static_cast<uint32_t>(it - kWordlist.begin());
    for (std::size_t b = 0; b < 11; ++b) {
      const std::size_t bit = w * 11 + b;
      if ((index >> (10 - b)) & 1) bits[bit / 8] |= static_cast<uint8_t>(0x80 >> (bit % 8));
    }
  }
  Bytes entropy(bits.begin(), bits.begin() + kEntropySize);
  const Bytes hash = tee::sha256(entropy);
  if ((hash[0] & 0xF0) != (bits[16] & 0xF0)) return std::nullopt;
  return entropy;
}

bool is_valid_mnemonic(std::string_view mnemonic) { return mnemonic_to_entropy(mnemonic).has_value(); }

Bytes mnemonic_to_seed(std::string_view mnemonic, std::string_view passphrase) {
  const std::string salt = "mnemonic" + std::string(passphrase);
  return tee::pbkdf2_hmac_sha512(mnemonic, as_bytes(salt), 2048, 64);
}

ExtendedKey master_key_from_seed(std::span<const uint8_t> seed) {
  constexpr std::string_view kKey = "Bitcoin seed";
  Bytes i = tee::hmac(tee::DigestAlg::kSha512, as_bytes(kKey), seed);
  ExtendedKey k = split(i);
  secure_zero(i);
  if (!tee::secp256k1::is_valid_private_key(k.key)) {
    throw tee::CryptoError(tee::CryptoErrc::kInvalidKey, "seed yields an invalid master key");
  }
  return k;
}

ExtendedKey derive_hardened(const ExtendedKey& parent, uint32_t index) {
  if (index >= kHardenedOffset) throw std::invalid_argument("child index must be below 2^31");
  Bytes data(37, 0);
  std::copy(parent.key.begin(), parent.key.end(), data.begin() + 1);
  store_be32(data.data() + 33, index + kHardenedOffset);
  Bytes i = tee::hmac(tee::DigestAlg::kSha512, parent.chain_code, data);
  secure_zero(data);
  ExtendedKey child = split(i);
  secure_zero(i);
  if (!tee::secp256k1::less_than_order(child.key)) {
    throw tee::CryptoError(tee::CryptoErrc::kInvalidKey, "derived tweak is not below the order");
  }
  child.key = tee::secp256k1::add_mod_n(child.key, parent.key);
  return child;
}

std::string base58_encode(std::span<const uint8_t> data) {
  std::size_t zeros = 0;
  while (zeros < data.size() && data[zeros] == 0) ++zeros;
  // Little-endian base-58 digits of the big-endian input.
  std::vector<uint8_t> digits;
  for (std::size_t i = zeros; i < data.size(); ++i) {
    uint32_t carry = data[i];
    for (auto& d : digits) {
      carry += static_cast<uint32_t>(d) << 8;
      d = static_cast<uint8_t>(carry % 58);
      carry /= 58;
    }
    while (carry) {
      digits.push_back(static_cast<uint8_t>(carry % 58));
      carry /= 58;
    }
  }
  std::string out(zeros, '1');
  for (auto it = digits.rbegin(); it != digits.rend(); ++it) out += kBase58Alphabet[*it];
  return out;
}

std::optional<Bytes> base58_decode(std::string_view text) {
  std::size_t ones = 0;
  while (ones < text.size() && text[ones] == '1') ++ones;
  std::vector<uint8_t> bytes;  // little-endian
  for (std::size_t i = ones; i < text.size(); ++i) {
    const auto pos = kBase58Alphabet.find(text[i]);
    if (pos == std::string_view::npos) return std::nullopt;
    uint32_t carry = static_cast<uint32_t>(pos);
    for (auto& b : bytes) {
      carry += static_cast<uint32_t>(b) * 58;
      b = static_cast<uint8_t>(carry & 0xFF);
      carry >>= 8;
    }
    while (carry) {
      bytes.push_back(static_cast<uint8_t>(carry & 0xFF));
      carry >>= 8;
    }
  }
  Bytes out(ones, 0);
  out.insert(out.end(), bytes.rbegin(), bytes.rend());
  return out;
}

std::string base58check_encode(std::span<const uint8_t> payload) {
  Bytes data(payload.begin(), payload.end());
  const Bytes check = tee::sha256d(payload);
  data.insert(data.end(), check.begin(), check.begin() + 4);
  return base58_encode(data);
}

std::optional<Bytes> base58check_decode(std::string_view text) {
  auto data = base58_decode(text);
  if (!data || data->size() < 4) return std::nullopt;
  const std::span<const uint8_t> payload(data->data(), data->size() - 4);
  const Bytes check = tee::sha256d(payload);
  if (!std::equal(check.begin(), check.begin() + 4, data->end() - 4)) return std::nullopt;
  return Bytes(payload.begin(), payload.end());
}

std::string p2pkh_address(std::span<const uint8_t> compressed_public_key) {
  Bytes payload{0x00};
  const Bytes h = tee::hash160(compressed_public_key);
  payload.insert(payload.end(), h.begin(), h.end());
  return base58check_encode(payload);
}

std::string sign_transaction_hex(const tee::secp256k1::Scalar& key, std::span<const uint8_t> raw_tx) {
  const Bytes digest = tee::sha256d(raw_tx);
  const auto compact = tee::secp256k1::sign(key, digest).compact();
  Bytes out(compact.begin(), compact.end());
  out.push_back(0x01);  // SIGHASH_ALL
  return to_hex(out);
}

}  // namespace teeod::wallet
