#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace pgcu {

enum class Errc {
  kShape,
  kBadMagic,
  kTruncated,
  kDimMismatch,
  kIo,
  kConfig,
  kNumeric,
  kDomain,
  kDegenerateReference,
};

std::string_view errc_name(Errc code);

// Single exception type for the library; callers branch on code().
class Error : public std::runtime_error {
 public:
  Error(Errc code, const std::string& what)
      : std::runtime_error(what), code_(code) {}

  Errc code() const noexcept { return code_; }

 private:
  Errc code_;
};

[[noreturn]] inline void fail(Errc code, const std::string& what) {
  throw Error(code, what);
}

inline void require(bool cond, Errc code, const std::string& what) {
  if (!cond) fail(code, what);
}

}  // namespace pgcu
