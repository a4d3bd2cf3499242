#pragma once

// Bitcoin wallet: a six-command TA holding one HD master key in trusted
// storage, the mnemonic/derivation/address helpers it is built from, and the
// command-line client that drives it through the client API.

#include <array>
#include <cstdint>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "teeod/client_api.hpp"
#include "teeod/crypto.hpp"
#include "teeod/enclave.hpp"
#include "teeod/protocol.hpp"

namespace teeod::wallet {

// ---- mnemonic (BIP39, English, 12 words) ------------------------------------

inline constexpr std::size_t kEntropySize = 16;
inline constexpr std::size_t kMnemonicWords = 12;
inline constexpr std::size_t kMaxMnemonicLength = 12 * 8 + 11;

const std::array<std::string_view, 2048>& wordlist();
std::string entropy_to_mnemonic(std::span<const uint8_t> entropy);
// nullopt on wrong word count, unknown word or bad checksum.
std::optional<Bytes> mnemonic_to_entropy(std::string_view mnemonic);
bool is_valid_mnemonic(std::string_view mnemonic);
// PBKDF2-HMAC-SHA512, 2048 rounds, salt "mnemonic" + passphrase.
Bytes mnemonic_to_seed(std::string_view mnemonic, std::string_view passphrase = "");

// ---- HD keys (BIP32, hardened only) -----------------------------------------

inline constexpr uint32_t kHardenedOffset = 0x80000000;

struct ExtendedKey {
  tee::secp256k1::Scalar key{};
  std::array<uint8_t, 32> chain_code{};

  friend bool operator==(const ExtendedKey&, const ExtendedKey&) = default;
};

ExtendedKey master_key_from_seed(std::span<const uint8_t> seed);
// Child at index + 2^31. index must be below 2^31.
ExtendedKey derive_hardened(const ExtendedKey& parent, uint32_t index);

// ---- encodings ----------------------------------------------------------------

std::string base58_encode(std::span<const uint8_t> data);
std::optional<Bytes> base58_decode(std::string_view text);
std::string base58check_encode(std::span<const uint8_t> payload);
std::optional<Bytes> base58check_decode(std::string_view text);

// base58check(0x00 || hash160(compressed public key)).
std::string p2pkh_address(std::span<const uint8_t> compressed_public_key);
// hex(compact r||s || 0x01) over sha256d(raw_tx).
std::string sign_transaction_hex(const tee::secp256k1::Scalar& key, std::span<const uint8_t> raw_tx);
inline constexpr std::size_t kSignedTxHexLength = 130;

// ---- the TA -----------------------------------------------------------------

extern const Uuid kWalletTaUuid;

namespace cmd {
inline constexpr uint32_t kCheckExists = 1;
inline constexpr uint32_t kGenerate = 2;
inline constexpr uint32_t kDeriveFromMnemonic = 3;
inline constexpr uint32_t kDelete = 4;
inline constexpr uint32_t kSignTransaction = 5;
inline constexpr uint32_t kGetAddress = 6;
}  // namespace cmd

// Wallet-specific results, in the fabric's private code range.
inline constexpr ReturnCode kWrongPin = static_cast<ReturnCode>(0xFFFF3101);
inline constexpr ReturnCode kNoKey = static_cast<ReturnCode>(0xFFFF3102);
inline constexpr ReturnCode kAlreadyExists = static_cast<ReturnCode>(0xFFFF3103);
inline constexpr ReturnCode kInvalidMnemonic = static_cast<ReturnCode>(0xFFFF3104);

std::string describe(ReturnCode rc);

// Four ASCII digits packed little-endian into one value word.
std::optional<uint32_t> pack_pin(std::string_view pin);

inline constexpr std::string_view kMasterObjectId = "master";

void register_ta(TaRegistry& registry);
Bytes ta_image();

// ---- the client -------------------------------------------------------------

// Unsigned legacy transaction used by command 5 when no raw tx is given.
extern const std::string_view kDemoRawTxHex;

// `<command_id> <pin> [-a <args...>]`. One open/invoke/close cycle per call;
// argument errors are reported before touching the fabric. Returns 0 on
// success, 1 on a TA or transport error, 2 on a usage error.
int run_client(const std::vector<std::string>& args, client::Context& context, std::ostream& out,
               std::ostream& err);
std::string usage();

}  // namespace teeod::wallet
