#pragma once

#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "icl/corpus.hpp"

namespace icl {

/// Row layout of the two-hot encoding, T+K+2 rows:
///   0            topic-block mask indicator
///   1..T         topic one-hot
///   T+1          class-block mask indicator
///   T+2..T+K+1   class one-hot
struct RowLayout {
  int topics;
  int classes;

  int rows() const noexcept { return topics + classes + 2; }
  static constexpr int topic_mask() noexcept { return 0; }
  int topic(int t) const noexcept { return t; }
  int class_mask() const noexcept { return topics + 1; }
  int cls(int k) const noexcept { return topics + 1 + k; }
};

/// Binary matrix with one column per token. Stacked prompts keep the length
/// of each segment so they can be split again.
struct EncodedMatrix {
  Eigen::MatrixXd values;
  int topics = 0;
  int classes = 0;
  std::vector<int> segment_lengths;

  RowLayout layout() const noexcept { return {topics, classes}; }
  int rows() const noexcept { return static_cast<int>(values.rows()); }
  int cols() const noexcept { return static_cast<int>(values.cols()); }
};

EncodedMatrix encode(const Vocabulary& vocab, const TokenSeq& seq);
EncodedMatrix encode_masked(const Vocabulary& vocab, const MaskedSeq& seq);

/// Column concatenation; all parts must share (T, K).
EncodedMatrix concat_columns(std::span<const EncodedMatrix> parts);

/// Dense 0/1 CSV, one matrix row per line.
std::string to_csv(const EncodedMatrix& m);

}  // namespace icl
