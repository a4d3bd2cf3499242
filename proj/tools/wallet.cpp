// wallet <command_id> <pin> [-a <args...>]
//
// Boots the simulator with the defaults (or the key=value file named by
// TEEOD_CONFIG) and runs one wallet command.

#include <cstdlib>
#include <iostream>
#include <string>
#include <vector>

#include "teeod/sim.hpp"
#include "teeod/wallet.hpp"

int main(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  if (args.empty() || args[0] == "-h" || args[0] == "--help") {
    std::cout << teeod::wallet::usage();
    return args.empty() ? 2 : 0;
  }
  try {
    const char* path = std::getenv("TEEOD_CONFIG");
    const teeod::SimConfig config = path ? teeod::SimConfig::load(path) : teeod::SimConfig{};
    teeod::Simulator sim(config);
    return teeod::wallet::run_client(args, sim.context(), std::cout, std::cerr);
  } catch (const std::exception& e) {
    std::cerr << "wallet: " << e.what() << "\n";
    return 1;
  }
}
