#include "hmc/error.hpp"

namespace hmc {

std::string_view errc_name(Errc code) noexcept {
  switch (code) {
    case Errc::ConfigError: return "ConfigError";
    case Errc::UnknownPreset: return "UnknownPreset";
    case Errc::InvalidTarget: return "InvalidTarget";
    case Errc::FormatError: return "FormatError";
    case Errc::IoError: return "IoError";
    case Errc::MissingTimepoint: return "MissingTimepoint";
    case Errc::TrajectoryTooShort: return "TrajectoryTooShort";
    case Errc::TrajectoryGap: return "TrajectoryGap";
    case Errc::TimebaseMismatch: return "TimebaseMismatch";
    case Errc::GeometryMismatch: return "GeometryMismatch";
    case Errc::ShapeMismatch: return "ShapeMismatch";
    case Errc::EmptyRoi: return "EmptyRoi";
    case Errc::ZeroMass: return "ZeroMass";
    case Errc::ZeroGoldMean: return "ZeroGoldMean";
    case Errc::InsufficientTimepoints: return "InsufficientTimepoints";
    case Errc::EmptySeries: return "EmptySeries";
    case Errc::GimbalLock: return "GimbalLock";
    case Errc::NotRigid: return "NotRigid";
    case Errc::NonScalarLoss: return "NonScalarLoss";
    case Errc::Divergence: return "Divergence";
  }
  return "Unknown";
}

ErrorCategory errc_category(Errc code) noexcept {
  switch (code) {
    case Errc::ConfigError:
    case Errc::UnknownPreset:
    case Errc::InvalidTarget:
      return ErrorCategory::Config;
    case Errc::GimbalLock:
    case Errc::NotRigid:
    case Errc::NonScalarLoss:
    case Errc::Divergence:
      return ErrorCategory::Numerical;
    default:
      return ErrorCategory::Data;
  }
}

void fail(Errc code, const std::string& what) { throw Error(code, what); }

}  // namespace hmc
