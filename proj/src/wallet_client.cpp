#include <charconv>
#include <cstdio>
#include <ostream>

#include "teeod/bytes.hpp"
#include "teeod/wallet.hpp"

namespace teeod::wallet {

const std::string_view kDemoRawTxHex =
    "0100000001"
    "7b1eabe0209b1fe794124575ef807057c77ada2138ae4fa8d6c4de0398a14f3f"
    "00000000"
    "1976a9144bfbaf6afb76cc5771bc6404810d1cc041a6933988ac"
    "ffffffff"
    "01"
    "b8f1010000000000"
    "1976a914c8e90996c7c6080ee06284600c684ed904d14c5c88ac"
    "00000000"
    "01000000";

std::string usage() {
  return "usage: wallet <command_id> <pin> [-a <args...>]\n"
         "  1 <pin>                      check whether a master key exists\n"
         "  2 <pin>                      generate a master key and print its mnemonic\n"
         "  3 <pin> -a <w1> ... <w12>    derive the master key from a mnemonic\n"
         "  4 <pin>                      erase the master key\n"
         "  5 <pin> -a <index> [raw_tx]  sign a raw transaction (hex) with child <index>\n"
         "  6 <pin> -a <index>           print the P2PKH address of child <index>\n"
         "  <pin> is exactly four decimal digits; <index> defaults to 1\n";
}

namespace {

struct Request {
  uint32_t command = 0;
  uint32_t pin = 0;
  std::vector<std::string> extra;
  uint32_t index = 1;
  Bytes raw_tx;
};

std::string text_of(const Bytes& b, uint32_t len) {
  const std::size_t n = std::min<std::size_t>(len, b.size());
  return std::string(b.begin(), b.begin() + static_cast<std::ptrdiff_t>(n));
}

std::optional<uint32_t> parse_index(const std::string& s) {
  uint32_t v = 0;
  const auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || p != s.data() + s.size() || v >= kHardenedOffset) return std::nullopt;
  return v;
}

// Returns an error message, empty on success.
std::string parse(const std::vector<std::string>& args, Request& req) {
  if (args.size() < 2) return "missing command id or pin";
  const auto cmd = parse_index(args[0]);
  if (!cmd || *cmd < cmd::kCheckExists || *cmd > cmd::kGetAddress) return "unknown command '" + args[0] + "'";
  req.command = *cmd;
  const auto pin = pack_pin(args[1]);
  if (!pin) return "pin must be exactly 4 digits";
  req.pin = *pin;
  if (args.size() > 2) {
    if (args[2] != "-a") return "unexpected argument '" + args[2] + "'";
    req.extra.assign(args.begin() + 3, args.end());
    if (req.extra.empty()) return "-a needs at least one argument";
  }
  switch (req.command) {
    case cmd::kCheckExists:
    case cmd::kGenerate:
    case cmd::kDelete:
      if (!req.extra.empty()) return "command " + args[0] + " takes no -a arguments";
      break;
    case cmd::kDeriveFromMnemonic:
      if (req.extra.empty()) return "command 3 needs the mnemonic words after -a";
      break;
    case cmd::kSignTransaction:
    case cmd::kGetAddress: {
      const std::size_t max = req.command == cmd::kSignTransaction ? 2 : 1;
      if (req.extra.size() > max) return "too many -a arguments";
      if (!req.extra.empty()) {
        const auto index = parse_index(req.extra[0]);
        if (!index) return "child index must be a number below 2^31";
        req.index = *index;
      }
      if (req.command == cmd::kSignTransaction) {
        const std::string hex = req.extra.size() == 2 ? req.extra[1] : std::string(kDemoRawTxHex);
        auto tx = from_hex(hex);
        if (!tx || tx->empty()) return "raw transaction must be non-empty hex";
        req.raw_tx = std::move(*tx);
      }
      break;
    }
  }
  return {};
}

void report(std::ostream& err, const std::string& what, ReturnCode rc) {
  char code[16];
  std::snprintf(code, sizeof(code), "0x%08x", static_cast<unsigned>(rc));
  err << what << ": " << describe(rc) << " (" << code << ")\n";
}

}  // namespace

int run_client(const std::vector<std::string>& args, client::Context& context, std::ostream& out,
               std::ostream& err) {
  Request req;
  if (const std::string problem = parse(args, req); !problem.empty()) {
    err << "wallet: " << problem << "\n" << usage();
    return 2;
  }

  using client::Direction;
  using client::MemRef;
  using client::Value;

  client::Session session;
  const Bytes image = ta_image();
  if (ReturnCode rc = context.open_session(session, kWalletTaUuid, image); rc != ReturnCode::kSuccess) {
    report(err, "failed to open a session with the wallet TA", rc);
    return 1;
  }

  client::Operation op;
  op.params[0] = Value{req.pin, 0, Direction::kIn};
  client::SharedMemory in_buf;
  client::SharedMemory out_buf;
  ReturnCode rc = ReturnCode::kSuccess;
  auto alloc = [&](client::SharedMemory& shm, uint32_t size, Direction dir) {
    if (rc == ReturnCode::kSuccess) rc = context.allocate_shared_memory(session, size, dir, shm);
  };

  switch (req.command) {
    case cmd::kCheckExists:
    case cmd::kDelete:
      out << "Check if there's a existing master key...\n";
      if (req.command == cmd::kCheckExists) op.params[1] = Value{0, 0, Direction::kOut};
      break;
    case cmd::kGenerate:
      out << "Generating new master key...\n";
      alloc(out_buf, 256, Direction::kOut);
      op.params[1] = MemRef{&out_buf};
      break;
    case cmd::kDeriveFromMnemonic: {
      out << "Deriving master key from your mnemonic...\n";
      std::string words;
      for (const auto& w : req.extra) words += (words.empty() ? "" : " ") + w;
      alloc(in_buf, static_cast<uint32_t>(words.size()), Direction::kIn);
      if (rc == ReturnCode::kSuccess) in_buf.buffer.assign(words.begin(), words.end());
      op.params[1] = MemRef{&in_buf};
      break;
    }
    case cmd::kSignTransaction:
      out << "Sending transaction for signing.\n";
      out << "Attempt to issue transactions from " << req.index << " child account...\n";
      op.params[1] = Value{req.index, 0, Direction::kIn};
      if (req.raw_tx.size() > kShmSize / 2) rc = ReturnCode::kErrorExcessData;
      alloc(in_buf, static_cast<uint32_t>(req.raw_tx.size()), Direction::kIn);
      if (rc == ReturnCode::kSuccess) in_buf.buffer = req.raw_tx;
      alloc(out_buf, 256, Direction::kOut);
      op.params[2] = MemRef{&in_buf};
      op.params[3] = MemRef{&out_buf};
      break;
    case cmd::kGetAddress:
      out << "Getting bitcoin address...\n";
      op.params[1] = Value{req.index, 0, Direction::kIn};
      alloc(out_buf, 64, Direction::kOut);
      op.params[2] = MemRef{&out_buf};
      break;
  }

  if (rc == ReturnCode::kSuccess) rc = context.invoke_command(session, req.command, op);
  context.close_session(session);

  if (rc != ReturnCode::kSuccess) {
    if (req.command == cmd::kDelete && rc == ReturnCode::kErrorItemNotFound) {
      out << "None master key exists\n";
    }
    report(err, "wallet command " + std::to_string(req.command) + " failed", rc);
    return 1;
  }

  switch (req.command) {
    case cmd::kCheckExists:
      out << (std::get<Value>(op.params[1]).a ? "Master key exists\n" : "None master key exists\n");
      break;
    case cmd::kGenerate:
      out << "Here's your wallet mnemonic!\n"
          << text_of(out_buf.buffer, std::get<MemRef>(op.params[1]).returned_size) << "\n";
      break;
    case cmd::kDeriveFromMnemonic:
      out << "Success!\n";
      break;
    case cmd::kDelete:
      out << "Master key exists, erase success\n";
      break;
    case cmd::kSignTransaction:
      out << "Retrieved signed transaction\n"
          << text_of(out_buf.buffer, std::get<MemRef>(op.params[3]).returned_size) << "\n";
      break;
    case cmd::kGetAddress:
      out << text_of(out_buf.buffer, std::get<MemRef>(op.params[2]).returned_size) << "\n";
      break;
  }
  return 0;
}

}  // namespace teeod::wallet
