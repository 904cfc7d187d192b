#include "pgcu/errors.hpp"

namespace pgcu {

std::string_view errc_name(Errc code) {
  switch (code) {
    case Errc::kShape: return "Shape";
    case Errc::kBadMagic: return "BadMagic";
    case Errc::kTruncated: return "Truncated";
    case Errc::kDimMismatch: return "DimMismatch";
    case Errc::kIo: return "Io";
    case Errc::kConfig: return "Config";
    case Errc::kNumeric: return "Numeric";
    case Errc::kDomain: return "Domain";
    case Errc::kDegenerateReference: return "DegenerateReference";
  }
  return "Unknown";
}

}  // namespace pgcu
