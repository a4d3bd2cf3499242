#include <cstdio>

#include "teeod/bytes.hpp"
#include "teeod/wallet.hpp"

namespace teeod::wallet {

const Uuid kWalletTaUuid = Uuid::parse("7e0a7a10-0010-4c1e-9d0f-7465656f6410");

std::string describe(ReturnCode rc) {
  if (rc == kWrongPin) return "WRONG_PIN";
  if (rc == kNoKey) return "NO_KEY";
  if (rc == kAlreadyExists) return "ALREADY_EXISTS";
  if (rc == kInvalidMnemonic) return "INVALID_MNEMONIC";
  return to_string(rc);
}

std::optional<uint32_t> pack_pin(std::string_view pin) {
  if (pin.size() != 4) return std::nullopt;
  uint8_t raw[4];
  for (std::size_t i = 0; i < 4; ++i) {
    if (pin[i] < '0' || pin[i] > '9') return std::nullopt;
    raw[i] = static_cast<uint8_t>(pin[i]);
  }
  return load_le32(raw);
}

namespace {

constexpr std::size_t kSaltSize = 16;
constexpr std::size_t kRecordSize = 32 + 32 + kSaltSize + 32;

// Sealed under object "master": master_sk | chain_code | salt | sha256(pin | salt).
struct MasterRecord {
  ExtendedKey master;
  std::array<uint8_t, kSaltSize> salt{};
  std::array<uint8_t, 32> pin_digest{};

  Bytes serialize() const {
    Bytes out;
    out.reserve(kRecordSize);
    out.insert(out.end(), master.key.begin(), master.key.end());
    out.insert(out.end(), master.chain_code.begin(), master.chain_code.end());
    out.insert(out.end(), salt.begin(), salt.end());
    out.insert(out.end(), pin_digest.begin(), pin_digest.end());
    return out;
  }

  static std::optional<MasterRecord> parse(std::span<const uint8_t> in) {
    if (in.size() != kRecordSize) return std::nullopt;
    MasterRecord r;
    auto at = in.begin();
    std::copy_n(at, 32, r.master.key.begin());
    std::copy_n(at + 32, 32, r.master.chain_code.begin());
    std::copy_n(at + 64, kSaltSize, r.salt.begin());
    std::copy_n(at + 64 + kSaltSize, 32, r.pin_digest.begin());
    return r;
  }

  void wipe() {
    secure_zero(master.key);
    secure_zero(master.chain_code);
  }
};

std::array<uint8_t, 32> pin_digest(uint32_t pin_word, std::span<const uint8_t> salt) {
  Bytes data(4, 0);
  store_le32(data.data(), pin_word);
  data.insert(data.end(), salt.begin(), salt.end());
  const Bytes d = tee::sha256(data);
  std::array<uint8_t, 32> out{};
  std::copy(d.begin(), d.end(), out.begin());
  return out;
}

bool equal_ct(std::span<const uint8_t> a, std::span<const uint8_t> b) {
  if (a.size() != b.size()) return false;
  uint8_t diff = 0;
  for (std::size_t i = 0; i < a.size(); ++i) diff |= static_cast<uint8_t>(a[i] ^ b[i]);
  return diff == 0;
}

std::string hex32(std::span<const uint8_t> b) { return to_hex(b); }

class WalletTa final : public TrustedApp {
 public:
  ReturnCode open_session(TaEnv&, uint32_t) override {
    if (open_) return ReturnCode::kErrorBusy;
    open_ = true;
    return ReturnCode::kSuccess;
  }

  ReturnCode invoke_command(TaEnv& env, uint32_t, uint32_t cmd_id) override {
    env.print("Choice from MW: " + std::to_string(cmd_id));
    if (env.kind(0) != ParamKind::kValueIn || !valid_pin(env.param(0).a)) {
      return ReturnCode::kErrorBadParameters;
    }
    const uint32_t pin = env.param(0).a;
    switch (cmd_id) {
      case cmd::kCheckExists: return check_exists(env, pin);
      case cmd::kGenerate: return generate(env, pin);
      case cmd::kDeriveFromMnemonic: return derive_from_mnemonic(env, pin);
      case cmd::kDelete: return erase(env, pin);
      case cmd::kSignTransaction: return sign(env, pin);
      case cmd::kGetAddress: return address(env, pin);
      default: return ReturnCode::kErrorNotSupported;
    }
  }

  void close_session(TaEnv& env, uint32_t) override {
    open_ = false;
    env.print("Goodbye!");
  }

  void destroy(TaEnv& env) override { env.print("TA_DestroyEntryPoint has been called"); }

 private:
  static bool valid_pin(uint32_t word) {
    for (int i = 0; i < 4; ++i) {
      const auto c = static_cast<uint8_t>(word >> (8 * i));
      if (c < '0' || c > '9') return false;
    }
    return true;
  }

  static std::optional<MasterRecord> load(TaEnv& env) {
    if (!env.storage_exists(kMasterObjectId)) return std::nullopt;
    Bytes raw = env.storage_get(kMasterObjectId);
    auto record = MasterRecord::parse(raw);
    secure_zero(raw);
    if (!record) throw tee::StorageError(ReturnCode::kErrorCorruptObject, "bad master record");
    return record;
  }

  static bool pin_ok(const MasterRecord& r, uint32_t pin) {
    return equal_ct(pin_digest(pin, r.salt), r.pin_digest);
  }

  static ReturnCode store(TaEnv& env, const ExtendedKey& master, uint32_t pin) {
    MasterRecord r;
    r.master = master;
    const Bytes salt = env.random_bytes(kSaltSize);
    std::copy(salt.begin(), salt.end(), r.salt.begin());
    r.pin_digest = pin_digest(pin, r.salt);
    Bytes raw = r.serialize();
    env.storage_put(kMasterObjectId, raw);
    secure_zero(raw);
    r.wipe();
    return ReturnCode::kSuccess;
  }

  static ExtendedKey master_from_mnemonic(const std::string& mnemonic) {
    Bytes seed = mnemonic_to_seed(mnemonic);
    ExtendedKey k = master_key_from_seed(seed);
    secure_zero(seed);
    return k;
  }

  // Loads the record and checks the pin; `rc` is set when the command must stop.
  static std::optional<MasterRecord> unlock(TaEnv& env, uint32_t pin, ReturnCode missing,
                                            ReturnCode& rc) {
    auto r = load(env);
    if (!r) {
      rc = missing;
      return std::nullopt;
    }
    if (!pin_ok(*r, pin)) {
      r->wipe();
      rc = kWrongPin;
      return std::nullopt;
    }
    rc = ReturnCode::kSuccess;
    return r;
  }

  ReturnCode check_exists(TaEnv& env, uint32_t pin) {
    if (!is_value_output(env.kind(1))) return ReturnCode::kErrorBadParameters;
    auto r = load(env);
    if (r && !pin_ok(*r, pin)) {
      r->wipe();
      return kWrongPin;
    }
    env.param(1).a = r ? 1 : 0;
    env.param(1).b = 0;
    env.print(r ? "Master Key exists" : "No master key");
    if (r) r->wipe();
    return ReturnCode::kSuccess;
  }

  ReturnCode generate(TaEnv& env, uint32_t pin) {
    if (env.kind(1) != ParamKind::kMemref) return ReturnCode::kErrorBadParameters;
    if (env.memref_size(1) < kMaxMnemonicLength) {
      env.param(1).b = static_cast<uint32_t>(kMaxMnemonicLength);
      return ReturnCode::kErrorShortBuffer;
    }
    if (auto r = load(env)) {
      r->wipe();
      return kAlreadyExists;
    }
    Bytes entropy = env.random_bytes(kEntropySize);
    const std::string mnemonic = entropy_to_mnemonic(entropy);
    secure_zero(entropy);
    ExtendedKey master = master_from_mnemonic(mnemonic);
    store(env, master, pin);
    secure_zero(master.key);
    secure_zero(master.chain_code);
    const std::span<const uint8_t> text(reinterpret_cast<const uint8_t*>(mnemonic.data()), mnemonic.size());
    env.write_memref(1, text);
    env.param(1).b = static_cast<uint32_t>(mnemonic.size());
    env.print("Master key generated");
    return ReturnCode::kSuccess;
  }

  ReturnCode derive_from_mnemonic(TaEnv& env, uint32_t pin) {
    if (env.kind(1) != ParamKind::kMemref) return ReturnCode::kErrorBadParameters;
    const Bytes raw = env.read_memref(1);
    const std::string mnemonic(raw.begin(), raw.end());
    if (!is_valid_mnemonic(mnemonic)) return kInvalidMnemonic;
    if (auto r = load(env)) {
      const bool ok = pin_ok(*r, pin);
      r->wipe();
      if (!ok) return kWrongPin;
    }
    ExtendedKey master = master_from_mnemonic(mnemonic);
    store(env, master, pin);
    secure_zero(master.key);
    secure_zero(master.chain_code);
    env.print("Master key derived from mnemonic");
    return ReturnCode::kSuccess;
  }

  ReturnCode erase(TaEnv& env, uint32_t pin) {
    ReturnCode rc;
    auto r = unlock(env, pin, ReturnCode::kErrorItemNotFound, rc);
    if (!r) return rc;
    r->wipe();
    env.storage_delete(kMasterObjectId);
    env.print("Master Key exists");
    return ReturnCode::kSuccess;
  }

  ReturnCode sign(TaEnv& env, uint32_t pin) {
    if (env.kind(1) != ParamKind::kValueIn || env.kind(2) != ParamKind::kMemref ||
        env.kind(3) != ParamKind::kMemref) {
      return ReturnCode::kErrorBadParameters;
    }
    const uint32_t index = env.param(1).a;
    if (index >= kHardenedOffset) return ReturnCode::kErrorBadParameters;
    const Bytes raw_tx = env.read_memref(2);
    if (raw_tx.empty()) return ReturnCode::kErrorBadParameters;
    if (env.memref_size(3) < kSignedTxHexLength) {
      env.param(3).b = static_cast<uint32_t>(kSignedTxHexLength);
      return ReturnCode::kErrorShortBuffer;
    }
    ReturnCode rc;
    auto r = unlock(env, pin, kNoKey, rc);
    if (!r) return rc;
    env.print("before sign raw tx");
    ExtendedKey child = derive_hardened(r->master, index);
    r->wipe();
    print_public(env, child);
    const std::string hex = sign_transaction_hex(child.key, raw_tx);
    secure_zero(child.key);
    secure_zero(child.chain_code);
    env.print("after sign raw tx");
    env.write_memref(3, std::span<const uint8_t>(reinterpret_cast<const uint8_t*>(hex.data()), hex.size()));
    env.param(3).b = static_cast<uint32_t>(hex.size());
    env.print("Transaction has been successfully signed.");
    return ReturnCode::kSuccess;
  }

  ReturnCode address(TaEnv& env, uint32_t pin) {
    if (env.kind(1) != ParamKind::kValueIn || env.kind(2) != ParamKind::kMemref) {
      return ReturnCode::kErrorBadParameters;
    }
    const uint32_t index = env.param(1).a;
    if (index >= kHardenedOffset) return ReturnCode::kErrorBadParameters;
    ReturnCode rc;
    auto r = unlock(env, pin, kNoKey, rc);
    if (!r) return rc;
    ExtendedKey child = derive_hardened(r->master, index);
    r->wipe();
    print_public(env, child);
    const std::string addr = p2pkh_address(tee::secp256k1::public_key(child.key));
    secure_zero(child.key);
    secure_zero(child.chain_code);
    env.print("get_bitcoin_address");
    if (env.memref_size(2) < addr.size()) {
      env.param(2).b = static_cast<uint32_t>(addr.size());
      return ReturnCode::kErrorShortBuffer;
    }
    env.write_memref(2, std::span<const uint8_t>(reinterpret_cast<const uint8_t*>(addr.data()), addr.size()));
    env.param(2).b = static_cast<uint32_t>(addr.size());
    env.print(addr);
    return ReturnCode::kSuccess;
  }

  // Only public material goes to the UART.
  static void print_public(TaEnv& env, const ExtendedKey& child) {
    const Bytes pub = tee::secp256k1::public_key(child.key, false);
    env.print("Chld_pk_x:" + hex32(std::span(pub).subspan(1, 32)));
    env.print("Chld_pk_y:" + hex32(std::span(pub).subspan(33, 32)));
  }

  bool open_ = false;
};

}  // namespace

void register_ta(TaRegistry& registry) {
  registry.add(ta_kind::kWallet, [](const TaImage&) { return std::make_unique<WalletTa>(); });
}

Bytes ta_image() {
  constexpr std::string_view kPayload = "bitcoin-wallet";
  return encode_image(kWalletTaUuid, ta_kind::kWallet,
                      std::span<const uint8_t>(reinterpret_cast<const uint8_t*>(kPayload.data()),
                                               kPayload.size()));
}

}  // namespace teeod::wallet
