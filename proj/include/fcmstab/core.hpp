#pragma once

// Shared error machinery and small utilities used across the library.

#include <stdexcept>
#include <string>

namespace fcmstab {

enum class Errc {
  degenerate_cut,
  singular_pencil,
  version_mismatch,
  corrupt_file,
  bad_input,
  diverged,
  not_a_cutcell,
  no_convergence,
};

inline const char* errc_name(Errc c) {
  switch (c) {
    case Errc::degenerate_cut: return "DEGENERATE_CUT";
    case Errc::singular_pencil: return "SINGULAR_PENCIL";
    case Errc::version_mismatch: return "VERSION_MISMATCH";
    case Errc::corrupt_file: return "CORRUPT_FILE";
    case Errc::bad_input: return "BAD_INPUT";
    case Errc::diverged: return "DIVERGED";
    case Errc::not_a_cutcell: return "NOT_A_CUTCELL";
    case Errc::no_convergence: return "NO_CONVERGENCE";
  }
  return "UNKNOWN";
}

class Error : public std::runtime_error {
 public:
  Error(Errc code, const std::string& detail)
      : std::runtime_error(std::string(errc_name(code)) + ": " + detail), code_(code) {}
  Errc code() const { return code_; }

 private:
  Errc code_;
};

[[noreturn]] inline void fail(Errc code, const std::string& detail) { throw Error(code, detail); }

inline void require(bool ok, Errc code, const std::string& detail) {
  if (!ok) fail(code, detail);
}

constexpr int kModelFormatVersion = 1;

}  // namespace fcmstab
