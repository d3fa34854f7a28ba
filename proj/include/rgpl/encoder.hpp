#pragma once

#include "rgpl/common.hpp"
#include "rgpl/data.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <span>
#include <string>
#include <vector>

namespace rgpl {

/// Bi-encoder parameters shared by queries and documents:
///   hidden state of token w  = embedding.row(w)
///   pooled                   = mean of hidden states over non-special tokens
///   output                   = projection * pooled + bias
/// `projection` is stored out_dim x hidden_dim so the forward map reads as
/// a plain matrix-vector product.
template <typename Scalar>
struct EncoderParamsT {
  RowMatrix<Scalar> embedding;   // vocab_size x hidden_dim
  RowMatrix<Scalar> projection;  // out_dim x hidden_dim
  Vector<Scalar> bias;           // out_dim
  std::vector<TokenId> special_ids;  // sorted; never pooled
  std::uint64_t seed = 0;
  std::int64_t step = 0;

  Index vocab_size() const { return embedding.rows(); }
  Index hidden_dim() const { return embedding.cols(); }
  Index out_dim() const { return projection.rows(); }

  bool is_special(TokenId id) const {
    return std::binary_search(special_ids.begin(), special_ids.end(), id);
  }

  void validate() const {
    if (embedding.rows() < 1 || embedding.cols() < 1 || projection.rows() < 1) {
      throw Error("encoder dimensions must be positive");
    }
    if (projection.cols() != embedding.cols() || bias.size() != projection.rows()) {
      throw Error("encoder parameter shapes are inconsistent");
    }
    if (!embedding.allFinite() || !projection.allFinite() || !bias.allFinite()) {
      throw Error("encoder parameters contain non-finite values");
    }
  }

  bool operator==(const EncoderParamsT& o) const {
    return embedding == o.embedding && projection == o.projection && bias == o.bias &&
           special_ids == o.special_ids && seed == o.seed && step == o.step;
  }
};

using EncoderParams = EncoderParamsT<double>;

/// Entries are N(0, 1/hidden_dim); the bias starts at zero.
template <typename Scalar = double>
EncoderParamsT<Scalar> init_params(Index vocab_size, Index hidden_dim, Index out_dim, std::uint64_t seed,
                                   std::vector<TokenId> special_ids = {}) {
  if (vocab_size < 1 || hidden_dim < 1 || out_dim < 1) {
    throw Error("init_params: dimensions must be >= 1 (got vocab " + std::to_string(vocab_size) + ", hidden " +
                std::to_string(hidden_dim) + ", out " + std::to_string(out_dim) + ")");
  }
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0 / std::sqrt(static_cast<double>(hidden_dim)));
  EncoderParamsT<Scalar> p;
  p.embedding.resize(vocab_size, hidden_dim);
  p.projection.resize(out_dim, hidden_dim);
  for (Index i = 0; i < p.embedding.size(); ++i) p.embedding.data()[i] = static_cast<Scalar>(normal(rng));
  for (Index i = 0; i < p.projection.size(); ++i) p.projection.data()[i] = static_cast<Scalar>(normal(rng));
  p.bias = Vector<Scalar>::Zero(out_dim);
  std::sort(special_ids.begin(), special_ids.end());
  special_ids.erase(std::unique(special_ids.begin(), special_ids.end()), special_ids.end());
  p.special_ids = std::move(special_ids);
  p.seed = seed;
  return p;
}

/// Pooled hidden state plus the token positions that contributed to it.
template <typename Scalar>
struct PooledSeq {
  Vector<Scalar> pooled;
  std::vector<TokenId> tokens;  // pooled tokens, with repeats
};

template <typename Scalar>
PooledSeq<Scalar> pool(const EncoderParamsT<Scalar>& params, const TokenSeq& seq) {
  PooledSeq<Scalar> out;
  out.pooled = Vector<Scalar>::Zero(params.hidden_dim());
  const std::size_t n = seq.ids.size();
  for (std::size_t i = 0; i < n; ++i) {
    const TokenId id = seq.ids[i];
    if (id < 0 || id >= params.vocab_size()) {
      throw Error("token id " + std::to_string(id) + " out of range for vocabulary of " +
                  std::to_string(params.vocab_size()));
    }
    if ((i == 0 && seq.has_cls) || (i + 1 == n && seq.has_sep) || params.is_special(id)) continue;
    out.pooled += params.embedding.row(id).transpose();
    out.tokens.push_back(id);
  }
  if (!out.tokens.empty()) out.pooled /= static_cast<Scalar>(out.tokens.size());
  return out;
}

template <typename Scalar>
Vector<Scalar> encode(const EncoderParamsT<Scalar>& params, const TokenSeq& seq) {
  return params.projection * pool(params, seq).pooled + params.bias;
}

/// Dot-product relevance.
template <typename DerivedA, typename DerivedB>
typename DerivedA::Scalar score(const Eigen::MatrixBase<DerivedA>& a, const Eigen::MatrixBase<DerivedB>& b) {
  if (a.size() != b.size()) {
    throw Error("score: dimension mismatch (" + std::to_string(a.size()) + " vs " + std::to_string(b.size()) + ")");
  }
  return a.dot(b);
}

/// Gradient of a scalar loss with respect to every parameter tensor. The
/// embedding gradient is row-sparse: `rows` is sorted and unique and
/// `embedding_values.row(i)` belongs to vocabulary row `rows[i]`.
template <typename Scalar>
struct GradientsT {
  std::vector<TokenId> rows;
  RowMatrix<Scalar> embedding_values;
  RowMatrix<Scalar> projection;
  Vector<Scalar> bias;

  RowMatrix<Scalar> dense_embedding(Index vocab_size) const {
    RowMatrix<Scalar> dense = RowMatrix<Scalar>::Zero(vocab_size, embedding_values.cols());
    for (std::size_t i = 0; i < rows.size(); ++i) dense.row(rows[i]) = embedding_values.row(static_cast<Index>(i));
    return dense;
  }

  bool is_zero() const {
    return (embedding_values.size() == 0 || embedding_values.isZero(0)) && projection.isZero(0) && bias.isZero(0);
  }
};

using Gradients = GradientsT<double>;

/// Receives gradient contributions. The trainer accumulates straight into
/// its batch buffers through the same interface grad_triplet uses.
template <typename Scalar>
struct GradientSink {
  virtual ~GradientSink() = default;
  virtual void add_embedding_row(TokenId row, const Vector<Scalar>& g) = 0;
  /// Adds the rank-one term u * v^T to the projection gradient.
  virtual void add_projection_outer(const Vector<Scalar>& u, const Vector<Scalar>& v) = 0;
  virtual void add_bias(const Vector<Scalar>& g) = 0;
};

/// Forward and backward pass of one (query, positive, negative) triplet under
///   loss = (s(q,d+) - s(q,d-) - teacher_margin)^2
/// All contributions are multiplied by `weight` before reaching the sink.
template <typename Scalar>
struct TripletPass {
  Scalar loss = 0;
  Scalar student_margin = 0;
};

namespace detail {

template <typename Scalar>
void backprop_sequence(const EncoderParamsT<Scalar>& params, const PooledSeq<Scalar>& seq,
                       const Vector<Scalar>& upstream, GradientSink<Scalar>& sink) {
  // d out / d projection = upstream * pooled^T ; d out / d bias = upstream
  sink.add_projection_outer(upstream, seq.pooled);
  sink.add_bias(upstream);
  if (seq.tokens.empty()) return;
  const Vector<Scalar> row_grad =
      (params.projection.transpose() * upstream) / static_cast<Scalar>(seq.tokens.size());
  for (TokenId t : seq.tokens) sink.add_embedding_row(t, row_grad);
}

}  // namespace detail

template <typename Scalar>
TripletPass<Scalar> backprop_triplet(const EncoderParamsT<Scalar>& params, const TokenSeq& query,
                                     const TokenSeq& positive, const TokenSeq& negative, Scalar teacher_margin,
                                     Scalar weight, GradientSink<Scalar>& sink) {
  const auto pq = pool(params, query);
  const auto pp = pool(params, positive);
  const auto pn = pool(params, negative);
  const Vector<Scalar> eq = params.projection * pq.pooled + params.bias;
  const Vector<Scalar> ep = params.projection * pp.pooled + params.bias;
  const Vector<Scalar> en = params.projection * pn.pooled + params.bias;
  TripletPass<Scalar> pass;
  pass.student_margin = eq.dot(ep) - eq.dot(en);
  const Scalar diff = pass.student_margin - teacher_margin;
  pass.loss = diff * diff;
  const Scalar g = Scalar(2) * diff * weight;
  if (g == Scalar(0)) return pass;
  detail::backprop_sequence(params, pq, Vector<Scalar>(g * (ep - en)), sink);
  detail::backprop_sequence(params, pp, Vector<Scalar>(g * eq), sink);
  detail::backprop_sequence(params, pn, Vector<Scalar>(-g * eq), sink);
  return pass;
}

namespace detail {

template <typename Scalar>
class CollectingSink final : public GradientSink<Scalar> {
 public:
  explicit CollectingSink(const EncoderParamsT<Scalar>& params)
      : projection_(RowMatrix<Scalar>::Zero(params.out_dim(), params.hidden_dim())),
        bias_(Vector<Scalar>::Zero(params.out_dim())),
        hidden_(params.hidden_dim()) {}

  void add_embedding_row(TokenId row, const Vector<Scalar>& g) override {
    auto it = std::lower_bound(rows_.begin(), rows_.end(), row);
    const auto pos = static_cast<std::size_t>(it - rows_.begin());
    if (it == rows_.end() || *it != row) {
      rows_.insert(it, row);
      values_.insert(values_.begin() + static_cast<std::ptrdiff_t>(pos), Vector<Scalar>::Zero(hidden_));
    }
    values_[pos] += g;
  }
  void add_projection_outer(const Vector<Scalar>& u, const Vector<Scalar>& v) override {
    projection_.noalias() += u * v.transpose();
  }
  void add_bias(const Vector<Scalar>& g) override { bias_ += g; }

  GradientsT<Scalar> finish() && {
    GradientsT<Scalar> out;
    out.rows = std::move(rows_);
    out.embedding_values.resize(static_cast<Index>(values_.size()), hidden_);
    for (std::size_t i = 0; i < values_.size(); ++i) out.embedding_values.row(static_cast<Index>(i)) = values_[i];
    out.projection = std::move(projection_);
    out.bias = std::move(bias_);
    return out;
  }

 private:
  std::vector<TokenId> rows_;
  std::vector<Vector<Scalar>> values_;
  RowMatrix<Scalar> projection_;
  Vector<Scalar> bias_;
  Index hidden_;
};

}  // namespace detail

template <typename Scalar>
struct TripletGradient {
  Scalar loss = 0;
  Scalar student_margin = 0;
  GradientsT<Scalar> gradients;
};

/// MarginMSE loss of a single triplet and its gradient. `params` is not touched.
template <typename Scalar>
TripletGradient<Scalar> grad_triplet(const EncoderParamsT<Scalar>& params, const TokenSeq& query,
                                     const TokenSeq& positive, const TokenSeq& negative, Scalar teacher_margin) {
  detail::CollectingSink<Scalar> sink(params);
  const auto pass = backprop_triplet(params, query, positive, negative, teacher_margin, Scalar(1), sink);
  return {pass.loss, pass.student_margin, std::move(sink).finish()};
}

/// Content hash of the parameter tensors (dims, specials and values).
std::string params_hash(const EncoderParams& params);

// Checkpoint layout (little endian):
//   "RGPLCKPT" | u32 version=1 | i64 vocab | i64 hidden | i64 out | u64 seed
//   | i64 step | u32 num_specials | i32[num_specials]
//   | f64[vocab*hidden] embedding (row-major) | f64[out*hidden] projection
//   | f64[out] bias
// A JSON manifest next to it (<path>.json) records dims, seed, step and hash.
void save_checkpoint(const EncoderParams& params, const std::string& path);
EncoderParams load_checkpoint(const std::string& path);

}  // namespace rgpl
