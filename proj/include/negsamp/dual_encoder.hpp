#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "negsamp/embedding.hpp"
#include "negsamp/encoder.hpp"
#include "negsamp/error.hpp"
#include "negsamp/rng.hpp"
#include "negsamp/sampling.hpp"

namespace negsamp {

struct ModelConfig {
  EncoderKind encoder = EncoderKind::Gru;
  std::size_t hidden = kDefaultHiddenSize;  // ignored by the attention encoder
  bool tie_encoders = true;
  std::size_t max_sequence_length = kDefaultMaxSequenceLength;
  std::uint64_t seed = 0;
};

/// Two sequence encoders and a bilinear matrix M; the pairwise probability is
/// σ(cᵀ M r) with c, r the context and response encodings.
class DualEncoderModel {
 public:
  DualEncoderModel() = default;

  DualEncoderModel(EmbeddingTable embeddings, Encoder context, std::optional<Encoder> response,
                   Eigen::MatrixXd bilinear,
                   std::size_t max_sequence_length = kDefaultMaxSequenceLength)
      : embeddings_(std::move(embeddings)),
        context_(std::move(context)),
        response_(std::move(response)),
        bilinear_(std::move(bilinear)),
        max_length_(max_sequence_length) {
    const auto d = static_cast<Eigen::Index>(context_.output_dim());
    if (bilinear_.rows() != d || bilinear_.cols() != d)
      throw Error(ErrorKind::Data, "bilinear matrix must be square with the encoder output size");
    if (response_ && (response_->kind() != context_.kind() ||
                      response_->output_dim() != context_.output_dim()))
      throw Error(ErrorKind::Data, "context and response encoders must have the same shape");
    if (context_.input_dim() != embeddings_.dim())
      throw Error(ErrorKind::Data, "encoder input size does not match embedding dimension");
  }

  /// Fresh model: encoders as in Encoder::random, M uniform in ±1/√d.
  static DualEncoderModel initialize(EmbeddingTable embeddings, const ModelConfig& cfg) {
    Rng rng(cfg.seed);
    const std::size_t dim = embeddings.dim();
    const std::size_t out = cfg.encoder == EncoderKind::Gru ? cfg.hidden : dim;
    if (out == 0) throw Error(ErrorKind::Config, "hidden size must be positive");
    Encoder context = Encoder::random(cfg.encoder, dim, cfg.hidden, rng);
    std::optional<Encoder> response;
    if (!cfg.tie_encoders) response = Encoder::random(cfg.encoder, dim, cfg.hidden, rng);
    Eigen::MatrixXd m(static_cast<Eigen::Index>(out), static_cast<Eigen::Index>(out));
    const double bound = 1.0 / std::sqrt(static_cast<double>(out));
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = rng.uniform(-bound, bound);
    return DualEncoderModel(std::move(embeddings), std::move(context), std::move(response),
                            std::move(m), cfg.max_sequence_length);
  }

  const EmbeddingTable& embeddings() const { return embeddings_; }
  EmbeddingTable& embeddings() { return embeddings_; }
  const Encoder& context_encoder() const { return context_; }
  const Encoder& response_encoder() const { return response_ ? *response_ : context_; }
  bool tied() const { return !response_.has_value(); }
  const Eigen::MatrixXd& bilinear() const { return bilinear_; }
  Eigen::MatrixXd& bilinear() { return bilinear_; }
  std::size_t max_sequence_length() const { return max_length_; }
  std::size_t output_dim() const { return context_.output_dim(); }

  Eigen::VectorXd encode_context(const std::vector<std::string>& tokens) const {
    return context_.encode(embeddings_, tokens, max_length_);
  }
  Eigen::VectorXd encode_response(const std::vector<std::string>& tokens) const {
    return response_encoder().encode(embeddings_, tokens, max_length_);
  }

  double score_encoded(const Eigen::VectorXd& c, const Eigen::VectorXd& r) const {
    return sigmoid(c.dot(bilinear_ * r));
  }

  /// σ(encode(context)ᵀ M encode(response)).
  double score_pair(const std::vector<std::string>& context_tokens,
                    const std::vector<std::string>& response_tokens) const {
    return score_encoded(encode_context(context_tokens), encode_response(response_tokens));
  }

  /// Calls f(name, tensor) for every trainable tensor except the embedding
  /// rows, in a fixed order.
  template <typename F>
  void visit_tensors(F&& f) {
    visit_impl(*this, f);
  }
  template <typename F>
  void visit_tensors(F&& f) const {
    visit_impl(*this, f);
  }

  /// A model-shaped container of zeros, used to hold gradients.
  DualEncoderModel zeros_like() const {
    DualEncoderModel z;
    z.context_ = context_.zeros_like();
    if (response_) z.response_ = response_->zeros_like();
    z.bilinear_ = Eigen::MatrixXd::Zero(bilinear_.rows(), bilinear_.cols());
    z.max_length_ = max_length_;
    return z;
  }

  Encoder& mutable_context_encoder() { return context_; }
  Encoder& mutable_response_encoder() { return response_ ? *response_ : context_; }

 private:
  template <typename Self, typename F>
  static void visit_impl(Self& self, F& f) {
    self.context_.visit_tensors([&](std::string_view name, auto& t) {
      f((self.response_ ? "context." : "encoder.") + std::string(name), t);
    });
    if (self.response_)
      self.response_->visit_tensors(
          [&](std::string_view name, auto& t) { f("response." + std::string(name), t); });
    f(std::string("bilinear"), self.bilinear_);
  }

  EmbeddingTable embeddings_;
  Encoder context_;
  std::optional<Encoder> response_;
  Eigen::MatrixXd bilinear_;
  std::size_t max_length_ = kDefaultMaxSequenceLength;
};

inline double score_pair(const DualEncoderModel& model, const std::vector<std::string>& context,
                         const std::vector<std::string>& response) {
  return model.score_pair(context, response);
}

inline constexpr double kLogClamp = 1e-12;

/// Gradient of the mean batch loss. `params` mirrors the model's tensors
/// (see DualEncoderModel::zeros_like); `embeddings` is empty unless
/// embedding gradients were requested.
struct Gradients {
  DualEncoderModel params;
  RowMatrix embeddings;
};

struct LossAndGradients {
  double loss = 0.0;
  Gradients gradients;
};

/// Throws if any model tensor holds a non-finite value, naming the tensor.
inline void check_finite(const DualEncoderModel& model) {
  model.visit_tensors([](const std::string& name, const auto& t) {
    if (!t.allFinite()) throw Error(ErrorKind::Numeric, "non-finite value in tensor '" + name + "'");
  });
  if (!model.embeddings().matrix().allFinite())
    throw Error(ErrorKind::Numeric, "non-finite value in tensor 'embeddings'");
}

/// Mean binary cross-entropy of σ(cᵀMr) against the labels, with full
/// backpropagation through M, both encoders (BPTT for the GRU) and,
/// optionally, the embedding rows. Log terms use p clamped to [ε, 1-ε].
inline LossAndGradients loss_and_gradients(const DualEncoderModel& model,
                                           const std::vector<TrainingExample>& batch,
                                           bool embedding_gradients = false) {
  if (batch.empty()) throw Error(ErrorKind::Data, "loss_and_gradients: empty batch");
  check_finite(model);
  LossAndGradients out;
  out.gradients.params = model.zeros_like();
  if (embedding_gradients)
    out.gradients.embeddings = RowMatrix::Zero(model.embeddings().matrix().rows(),
                                               model.embeddings().matrix().cols());
  RowMatrix* emb_grad = embedding_gradients ? &out.gradients.embeddings : nullptr;
  const double scale = 1.0 / static_cast<double>(batch.size());
  const auto& emb = model.embeddings();
  const std::size_t max_len = model.max_sequence_length();

  for (const auto& ex : batch) {
    const auto ctx = model.context_encoder().forward(emb, ex.context_tokens, max_len);
    const auto rsp = model.response_encoder().forward(emb, ex.response_tokens, max_len);
    const Eigen::VectorXd m_r = model.bilinear() * rsp.output;
    const double p = sigmoid(ctx.output.dot(m_r));
    const double pc = std::clamp(p, kLogClamp, 1.0 - kLogClamp);
    const double y = ex.label;
    out.loss -= scale * (y * std::log(pc) + (1.0 - y) * std::log(1.0 - pc));

    // d(loss)/d(logit) = p - y inside the clamp, 0 where the clamp is active.
    const double d_logit = (p == pc) ? scale * (p - y) : 0.0;
    if (d_logit == 0.0) continue;
    auto& g = out.gradients.params;
    g.bilinear().noalias() += d_logit * ctx.output * rsp.output.transpose();
    const Eigen::VectorXd d_ctx = d_logit * m_r;
    const Eigen::VectorXd d_rsp = d_logit * (model.bilinear().transpose() * ctx.output);
    model.context_encoder().backward(ctx, d_ctx, g.mutable_context_encoder(), emb_grad);
    model.response_encoder().backward(rsp, d_rsp, g.mutable_response_encoder(), emb_grad);
  }
  return out;
}

}  // namespace negsamp
