#pragma once

#include <cstddef>
#include <optional>
#include <stdexcept>
#include <string>

namespace ctrsq {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Precondition violated by a caller-supplied argument.
class InvalidArgument : public Error {
 public:
  using Error::Error;
};

/// A numeric result left its domain: non-finite drift/diffusion output,
/// a utility evaluated outside its domain, a singular closed form.
class NumericDomainError : public Error {
 public:
  explicit NumericDomainError(const std::string& what,
                              std::optional<std::size_t> step = std::nullopt)
      : Error(step ? what + " (step " + std::to_string(*step) + ")" : what), step_(step) {}

  std::optional<std::size_t> step() const noexcept { return step_; }

 private:
  std::optional<std::size_t> step_;
};

/// A Gibbs density exp{q / (tau b1)} that cannot be normalized.
class NotNormalizable : public Error {
 public:
  using Error::Error;
};

/// Requested operation has no implementation for the given kind.
class UnsupportedKind : public Error {
 public:
  using Error::Error;
};

/// Bracket expansion ran past its configured range.
class UnboundedObjective : public Error {
 public:
  using Error::Error;
};

/// Training or evaluation left the admissible region; carries the episode.
class DivergenceError : public Error {
 public:
  DivergenceError(const std::string& what, std::size_t episode)
      : Error(what + " (episode " + std::to_string(episode) + ")"), episode_(episode) {}

  std::size_t episode() const noexcept { return episode_; }

 private:
  std::size_t episode_;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

}  // namespace ctrsq
