#pragma once

#include <stdexcept>
#include <string>

namespace rodspring {

/// Base class for all engine errors.
class Error : public std::runtime_error {
 public:
  explicit Error(const std::string& what) : std::runtime_error(what) {}
};

/// A topology reference (spring endpoint, anchor id) does not resolve.
class TopologyError : public Error {
 public:
  explicit TopologyError(const std::string& what) : Error(what) {}
};

/// Invalid configuration value (timestep, masses, CLI arguments, ...).
class ConfigError : public Error {
 public:
  explicit ConfigError(const std::string& what) : Error(what) {}
};

/// Spring endpoints coincide; the spring direction is undefined.
class DegenerateSpringError : public Error {
 public:
  DegenerateSpringError(int spring_id, double length)
      : Error("spring " + std::to_string(spring_id) +
              " is degenerate (endpoint distance " + std::to_string(length) + ")"),
        spring_id(spring_id) {}
  int spring_id;
};

/// A state component exceeded the blow-up guard during integration.
class SimulationBlowupError : public Error {
 public:
  SimulationBlowupError(long step, double value)
      : Error("simulation blow-up at step " + std::to_string(step) +
              " (state component " + std::to_string(value) + " exceeds guard)"),
        step(step),
        value(value) {}
  long step;
  double value;
};

/// Least-squares design matrix is rank deficient; carries a description of
/// the unidentifiable parameter directions.
class RankDeficientError : public Error {
 public:
  RankDeficientError(const std::string& what, long rank, long cols)
      : Error(what), rank(rank), cols(cols) {}
  long rank;
  long cols;
};

/// Fewer regression rows than unknowns.
class InsufficientDataError : public Error {
 public:
  InsufficientDataError(long rows, long cols)
      : Error("insufficient data: " + std::to_string(rows) + " rows for " +
              std::to_string(cols) + " unknowns"),
        rows(rows),
        cols(cols) {}
  long rows;
  long cols;
};

/// Training loss became non-finite.
class NonFiniteLossError : public Error {
 public:
  explicit NonFiniteLossError(int epoch)
      : Error("non-finite loss at epoch " + std::to_string(epoch)), epoch(epoch) {}
  int epoch;
};

/// Control-scalar tuning was asked for on a dataset with no applied forces.
class NoControlDataError : public Error {
 public:
  NoControlDataError() : Error("dataset contains no nonzero control forces") {}
};

/// Fitted physical parameters came out non-positive.
class NonPhysicalParamsError : public Error {
 public:
  explicit NonPhysicalParamsError(const std::string& what) : Error(what) {}
};

/// Two trajectories passed to a comparison have different horizons.
class HorizonMismatchError : public Error {
 public:
  HorizonMismatchError(long lhs, long rhs)
      : Error("trajectory horizons differ: " + std::to_string(lhs) + " vs " +
              std::to_string(rhs)) {}
};

/// Filesystem failure, annotated with the offending path.
class IoError : public Error {
 public:
  IoError(const std::string& what, const std::string& path)
      : Error(what + ": " + path), path(path) {}
  std::string path;
};

}  // namespace rodspring
