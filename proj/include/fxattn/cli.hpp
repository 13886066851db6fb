#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

namespace fxattn::cli {

// Exit codes: 0 success, 1 runtime/IO/parse failure, 2 bad flags.
inline constexpr int kExitOk = 0;
inline constexpr int kExitFailure = 1;
inline constexpr int kExitUsage = 2;

// args excludes the program name.
int dispatch(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);
int dispatch(int argc, char** argv);

// "0-4,8,10" -> {0,1,2,3,4,8,10}.  Throws std::invalid_argument.
std::vector<std::int64_t> parse_int_list(const std::string& text);

}  // namespace fxattn::cli
