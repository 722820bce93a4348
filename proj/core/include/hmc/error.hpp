#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace hmc {

// Every failure the library reports carries one of these codes. The CLI maps
// the category of a code onto its process exit status.
enum class Errc {
  // configuration / usage
  ConfigError,
  UnknownPreset,
  InvalidTarget,
  // data
  FormatError,
  IoError,
  MissingTimepoint,
  TrajectoryTooShort,
  TrajectoryGap,
  TimebaseMismatch,
  GeometryMismatch,
  ShapeMismatch,
  EmptyRoi,
  ZeroMass,
  ZeroGoldMean,
  InsufficientTimepoints,
  EmptySeries,
  // numerical
  GimbalLock,
  NotRigid,
  NonScalarLoss,
  Divergence,
};

enum class ErrorCategory { Config, Data, Numerical };

std::string_view errc_name(Errc code) noexcept;
ErrorCategory errc_category(Errc code) noexcept;

class Error : public std::runtime_error {
 public:
  Error(Errc code, const std::string& what) : std::runtime_error(what), code_(code) {}

  Errc code() const noexcept { return code_; }
  ErrorCategory category() const noexcept { return errc_category(code_); }

 private:
  Errc code_;
};

[[noreturn]] void fail(Errc code, const std::string& what);

}  // namespace hmc
