#include "icl/encoding.hpp"

#include "icl/error.hpp"

namespace icl {

EncodedMatrix encode(const Vocabulary& vocab, const TokenSeq& seq) {
  validate(vocab, seq);
  const RowLayout layout{vocab.topics, vocab.classes};
  EncodedMatrix out;
  out.topics = vocab.topics;
  out.classes = vocab.classes;
  out.values = Eigen::MatrixXd::Zero(layout.rows(), static_cast<Eigen::Index>(seq.size()));
  for (std::size_t j = 0; j < seq.size(); ++j) {
    const auto col = static_cast<Eigen::Index>(j);
    out.values(layout.topic(seq[j].topic), col) = 1.0;
    out.values(layout.cls(seq[j].cls), col) = 1.0;
  }
  out.segment_lengths = {static_cast<int>(seq.size())};
  return out;
}

EncodedMatrix encode_masked(const Vocabulary& vocab, const MaskedSeq& seq) {
  validate(vocab, seq);
  EncodedMatrix out = encode(vocab, seq.base);
  const RowLayout layout = out.layout();
  for (int p : seq.mask_positions) {
    auto col = out.values.col(p);
    col.setZero();
    col(RowLayout::topic_mask()) = 1.0;
    col(layout.class_mask()) = 1.0;
  }
  return out;
}

EncodedMatrix concat_columns(std::span<const EncodedMatrix> parts) {
  if (parts.empty()) throw ShapeError("nothing to concatenate");
  EncodedMatrix out;
  out.topics = parts.front().topics;
  out.classes = parts.front().classes;
  Eigen::Index total = 0;
  for (const auto& p : parts) {
    if (p.topics != out.topics || p.classes != out.classes || p.rows() != parts.front().rows())
      throw ShapeError("encoded segments disagree on (T, K)");
    total += p.values.cols();
  }
  out.values.resize(parts.front().rows(), total);
  Eigen::Index offset = 0;
  for (const auto& p : parts) {
    out.values.middleCols(offset, p.values.cols()) = p.values;
    offset += p.values.cols();
    out.segment_lengths.insert(out.segment_lengths.end(), p.segment_lengths.begin(),
                               p.segment_lengths.end());
  }
  return out;
}

std::string to_csv(const EncodedMatrix& m) {
  std::string out;
  out.reserve(static_cast<std::size_t>(m.rows() * (2 * m.cols() + 1)));
  for (Eigen::Index r = 0; r < m.values.rows(); ++r) {
    for (Eigen::Index c = 0; c < m.values.cols(); ++c) {
      if (c) out += ',';
      out += m.values(r, c) != 0.0 ? '1' : '0';
    }
    out += '\n';
  }
  return out;
}

}  // namespace icl
