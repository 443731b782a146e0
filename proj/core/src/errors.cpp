#include "amrlab/errors.hpp"

namespace amrlab {

ExitCode exit_code_for(const std::exception& e) noexcept {
  if (dynamic_cast<const ConfigError*>(&e)) return ExitCode::kConfig;
  if (dynamic_cast<const UsageError*>(&e)) return ExitCode::kUsage;
  if (dynamic_cast<const FormatError*>(&e) || dynamic_cast<const DataError*>(&e) ||
      dynamic_cast<const IoError*>(&e) || dynamic_cast<const InputError*>(&e) ||
      dynamic_cast<const DimensionError*>(&e)) {
    return ExitCode::kData;
  }
  // Numeric blow-ups and anything unexpected during training.
  return ExitCode::kNumeric;
}

}  // namespace amrlab
