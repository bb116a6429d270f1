#pragma once

#include <stdexcept>
#include <string>
#include <vector>

namespace icl {

class InvalidArgument : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class ShapeError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

// A KL divergence with q(x) = 0 where p(x) > 0.
class InfiniteDivergence : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

class TrainingDiverged : public std::runtime_error {
 public:
  explicit TrainingDiverged(int step)
      : std::runtime_error("training diverged at step " + std::to_string(step)),
        step_(step) {}
  int step() const noexcept { return step_; }

 private:
  int step_;
};

// Experiment configuration rejected; lists every offending field.
class ConfigError : public std::invalid_argument {
 public:
  explicit ConfigError(std::vector<std::string> problems)
      : std::invalid_argument(join(problems)), problems_(std::move(problems)) {}
  const std::vector<std::string>& problems() const noexcept { return problems_; }

 private:
  static std::string join(const std::vector<std::string>& items) {
    std::string out = "invalid configuration:";
    for (const auto& i : items) out += "\n  " + i;
    return out;
  }
  std::vector<std::string> problems_;
};

}  // namespace icl
