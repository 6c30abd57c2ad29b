#pragma once

#include <cmath>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include <Eigen/Dense>

#include "negsamp/embedding.hpp"
#include "negsamp/error.hpp"
#include "negsamp/rng.hpp"

namespace negsamp {

inline constexpr std::size_t kDefaultHiddenSize = 128;
inline constexpr std::size_t kDefaultMaxSequenceLength = 160;

inline double sigmoid(double x) {
  // Both branches avoid exp overflow; sigmoid(x) + sigmoid(-x) == 1 up to
  // one rounding.
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

/// Single-layer GRU.
///   z_t = σ(W_z x_t + U_z h_{t-1} + b_z)
///   r_t = σ(W_r x_t + U_r h_{t-1} + b_r)
///   g_t = tanh(W_h x_t + U_h (r_t ⊙ h_{t-1}) + b_h)
///   h_t = (1 - z_t) ⊙ h_{t-1} + z_t ⊙ g_t,     h_0 = 0
struct GruParams {
  Eigen::MatrixXd w_update, u_update;
  Eigen::VectorXd b_update;
  Eigen::MatrixXd w_reset, u_reset;
  Eigen::VectorXd b_reset;
  Eigen::MatrixXd w_candidate, u_candidate;
  Eigen::VectorXd b_candidate;

  static GruParams zeros(std::size_t input_dim, std::size_t hidden) {
    const auto d = static_cast<Eigen::Index>(input_dim);
    const auto h = static_cast<Eigen::Index>(hidden);
    GruParams p;
    p.w_update = p.w_reset = p.w_candidate = Eigen::MatrixXd::Zero(h, d);
    p.u_update = p.u_reset = p.u_candidate = Eigen::MatrixXd::Zero(h, h);
    p.b_update = p.b_reset = p.b_candidate = Eigen::VectorXd::Zero(h);
    return p;
  }

  std::size_t input_dim() const { return static_cast<std::size_t>(w_update.cols()); }
  std::size_t hidden() const { return static_cast<std::size_t>(w_update.rows()); }

  template <typename Self, typename F>
  static void visit(Self& self, F&& f) {
    f("w_update", self.w_update);
    f("u_update", self.u_update);
    f("b_update", self.b_update);
    f("w_reset", self.w_reset);
    f("u_reset", self.u_reset);
    f("b_reset", self.b_reset);
    f("w_candidate", self.w_candidate);
    f("u_candidate", self.u_candidate);
    f("b_candidate", self.b_candidate);
  }
};

/// Additive attention pooling without recurrence:
///   s_t = vᵀ tanh(W e_t),  α = softmax(s),  output = Σ_t α_t e_t
struct AttentionParams {
  Eigen::MatrixXd projection;  // dim x dim
  Eigen::VectorXd score;       // dim

  static AttentionParams zeros(std::size_t dim) {
    const auto d = static_cast<Eigen::Index>(dim);
    return {Eigen::MatrixXd::Zero(d, d), Eigen::VectorXd::Zero(d)};
  }

  std::size_t input_dim() const { return static_cast<std::size_t>(projection.cols()); }

  template <typename Self, typename F>
  static void visit(Self& self, F&& f) {
    f("projection", self.projection);
    f("score", self.score);
  }
};

enum class EncoderKind { Gru, Attention };

inline const char* to_string(EncoderKind k) { return k == EncoderKind::Gru ? "gru" : "attention"; }

inline EncoderKind parse_encoder_kind(std::string_view s) {
  if (s == "gru") return EncoderKind::Gru;
  if (s == "attention") return EncoderKind::Attention;
  throw Error(ErrorKind::Config, "unknown encoder variant '" + std::string(s) + "' (gru|attention)");
}

/// Intermediate values of one forward pass, kept for backpropagation.
struct EncoderTrace {
  std::vector<std::optional<std::size_t>> rows;  // embedding row per input, nullopt = OOV
  std::vector<Eigen::VectorXd> inputs;
  // GRU
  std::vector<Eigen::VectorXd> states;  // h_0 .. h_T
  std::vector<Eigen::VectorXd> update, reset, candidate;
  // Attention
  std::vector<Eigen::VectorXd> activations;  // tanh(W e_t)
  Eigen::VectorXd weights;                   // α
  Eigen::VectorXd output;
};

class Encoder {
 public:
  Encoder() = default;
  explicit Encoder(GruParams p) : params_(std::move(p)) {}
  explicit Encoder(AttentionParams p) : params_(std::move(p)) {}

  /// Random initialization: GRU weights uniform in ±1/√hidden with zero
  /// biases; attention weights uniform in ±1/√dim.
  static Encoder random(EncoderKind kind, std::size_t input_dim, std::size_t hidden, Rng& rng) {
    auto fill = [&rng](auto& t, double bound) {
      for (Eigen::Index i = 0; i < t.size(); ++i) t.data()[i] = rng.uniform(-bound, bound);
    };
    if (kind == EncoderKind::Gru) {
      auto p = GruParams::zeros(input_dim, hidden);
      const double bound = 1.0 / std::sqrt(static_cast<double>(hidden));
      GruParams::visit(p, [&](std::string_view name, auto& t) {
        if (name[0] != 'b') fill(t, bound);
      });
      return Encoder(std::move(p));
    }
    auto p = AttentionParams::zeros(input_dim);
    const double bound = 1.0 / std::sqrt(static_cast<double>(input_dim));
    fill(p.projection, bound);
    fill(p.score, bound);
    return Encoder(std::move(p));
  }

  static Encoder zeros(EncoderKind kind, std::size_t input_dim, std::size_t hidden) {
    if (kind == EncoderKind::Gru) return Encoder(GruParams::zeros(input_dim, hidden));
    return Encoder(AttentionParams::zeros(input_dim));
  }

  /// Same shapes, all zeros.
  Encoder zeros_like() const {
    if (auto* g = gru()) return Encoder(GruParams::zeros(g->input_dim(), g->hidden()));
    return Encoder(AttentionParams::zeros(attention()->input_dim()));
  }

  EncoderKind kind() const { return params_.index() == 0 ? EncoderKind::Gru : EncoderKind::Attention; }
  const GruParams* gru() const { return std::get_if<GruParams>(&params_); }
  const AttentionParams* attention() const { return std::get_if<AttentionParams>(&params_); }

  std::size_t input_dim() const {
    return gru() ? gru()->input_dim() : attention()->input_dim();
  }
  std::size_t output_dim() const { return gru() ? gru()->hidden() : attention()->input_dim(); }

  /// Calls f(name, tensor) for every trainable tensor in a fixed order.
  template <typename F>
  void visit_tensors(F&& f) {
    std::visit([&](auto& p) { std::decay_t<decltype(p)>::visit(p, f); }, params_);
  }
  template <typename F>
  void visit_tensors(F&& f) const {
    std::visit([&](const auto& p) { std::decay_t<decltype(p)>::visit(p, f); }, params_);
  }

  /// Runs the encoder over the last `max_length` tokens.
  EncoderTrace forward(const EmbeddingTable& emb, const std::vector<std::string>& tokens,
                       std::size_t max_length = kDefaultMaxSequenceLength) const {
    if (tokens.empty()) throw Error(ErrorKind::Data, "cannot encode an empty token sequence");
    if (emb.dim() != input_dim())
      throw Error(ErrorKind::Data, "embedding dimension does not match encoder input");
    EncoderTrace tr;
    const std::size_t begin = tokens.size() > max_length ? tokens.size() - max_length : 0;
    for (std::size_t i = begin; i < tokens.size(); ++i) {
      auto row = emb.index_of(tokens[i]);
      tr.rows.push_back(row);
      tr.inputs.push_back(row ? Eigen::VectorXd(emb.matrix().row(static_cast<Eigen::Index>(*row)).transpose())
                              : emb.oov_vector());
    }
    if (auto* g = gru()) {
      forward_gru(*g, tr);
    } else {
      forward_attention(*attention(), tr);
    }
    return tr;
  }

  Eigen::VectorXd encode(const EmbeddingTable& emb, const std::vector<std::string>& tokens,
                         std::size_t max_length = kDefaultMaxSequenceLength) const {
    return forward(emb, tokens, max_length).output;
  }

  /// Accumulates dL/dθ into `grad` (same shapes as *this) given dL/d(output).
  /// When `emb_grad` is non-null, input gradients are added to the rows of
  /// in-vocabulary tokens.
  void backward(const EncoderTrace& tr, const Eigen::VectorXd& d_output, Encoder& grad,
                RowMatrix* emb_grad) const {
    std::vector<Eigen::VectorXd> d_inputs;
    if (auto* g = gru()) {
      d_inputs = backward_gru(*g, tr, d_output, std::get<GruParams>(grad.params_));
    } else {
      d_inputs = backward_attention(*attention(), tr, d_output,
                                    std::get<AttentionParams>(grad.params_));
    }
    if (emb_grad == nullptr) return;
    for (std::size_t t = 0; t < d_inputs.size(); ++t) {
      if (tr.rows[t]) emb_grad->row(static_cast<Eigen::Index>(*tr.rows[t])) += d_inputs[t].transpose();
    }
  }

 private:
  static Eigen::VectorXd logistic(const Eigen::VectorXd& a) {
    return a.unaryExpr([](double x) { return sigmoid(x); });
  }

  static void forward_gru(const GruParams& p, EncoderTrace& tr) {
    Eigen::VectorXd h = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(p.hidden()));
    tr.states.push_back(h);
    for (const auto& x : tr.inputs) {
      Eigen::VectorXd z = logistic(p.w_update * x + p.u_update * h + p.b_update);
      Eigen::VectorXd r = logistic(p.w_reset * x + p.u_reset * h + p.b_reset);
      Eigen::VectorXd g =
          (p.w_candidate * x + p.u_candidate * r.cwiseProduct(h) + p.b_candidate).array().tanh().matrix();
      h = (1.0 - z.array()).matrix().cwiseProduct(h) + z.cwiseProduct(g);
      tr.update.push_back(std::move(z));
      tr.reset.push_back(std::move(r));
      tr.candidate.push_back(std::move(g));
      tr.states.push_back(h);
    }
    tr.output = h;
  }

  static std::vector<Eigen::VectorXd> backward_gru(const GruParams& p, const EncoderTrace& tr,
                                                   const Eigen::VectorXd& d_output, GruParams& g) {
    const std::size_t steps = tr.inputs.size();
    std::vector<Eigen::VectorXd> d_inputs(steps);
    Eigen::VectorXd dh = d_output;
    for (std::size_t t = steps; t-- > 0;) {
      const auto& x = tr.inputs[t];
      const auto& h_prev = tr.states[t];
      const auto& z = tr.update[t];
      const auto& r = tr.reset[t];
      const auto& cand = tr.candidate[t];

      const Eigen::VectorXd dz = dh.cwiseProduct(cand - h_prev);
      const Eigen::VectorXd d_cand = dh.cwiseProduct(z);
      Eigen::VectorXd dh_prev = dh.cwiseProduct((1.0 - z.array()).matrix());

      const Eigen::VectorXd da_cand = d_cand.cwiseProduct((1.0 - cand.array().square()).matrix());
      const Eigen::VectorXd rh = r.cwiseProduct(h_prev);
      g.w_candidate.noalias() += da_cand * x.transpose();
      g.u_candidate.noalias() += da_cand * rh.transpose();
      g.b_candidate += da_cand;
      const Eigen::VectorXd d_rh = p.u_candidate.transpose() * da_cand;
      const Eigen::VectorXd dr = d_rh.cwiseProduct(h_prev);
      dh_prev += d_rh.cwiseProduct(r);

      const Eigen::VectorXd da_reset = dr.cwiseProduct(r.cwiseProduct((1.0 - r.array()).matrix()));
      g.w_reset.noalias() += da_reset * x.transpose();
      g.u_reset.noalias() += da_reset * h_prev.transpose();
      g.b_reset += da_reset;
      dh_prev.noalias() += p.u_reset.transpose() * da_reset;

      const Eigen::VectorXd da_update = dz.cwiseProduct(z.cwiseProduct((1.0 - z.array()).matrix()));
      g.w_update.noalias() += da_update * x.transpose();
      g.u_update.noalias() += da_update * h_prev.transpose();
      g.b_update += da_update;
      dh_prev.noalias() += p.u_update.transpose() * da_update;

      d_inputs[t] = p.w_candidate.transpose() * da_cand + p.w_reset.transpose() * da_reset +
                    p.w_update.transpose() * da_update;
      dh = std::move(dh_prev);
    }
    return d_inputs;
  }

  static void forward_attention(const AttentionParams& p, EncoderTrace& tr) {
    const std::size_t steps = tr.inputs.size();
    Eigen::VectorXd scores(static_cast<Eigen::Index>(steps));
    for (std::size_t t = 0; t < steps; ++t) {
      tr.activations.push_back((p.projection * tr.inputs[t]).array().tanh().matrix());
      scores(static_cast<Eigen::Index>(t)) = p.score.dot(tr.activations.back());
    }
    const double mx = scores.maxCoeff();
    tr.weights = (scores.array() - mx).exp().matrix();
    tr.weights /= tr.weights.sum();
    tr.output = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(p.input_dim()));
    for (std::size_t t = 0; t < steps; ++t)
      tr.output += tr.weights(static_cast<Eigen::Index>(t)) * tr.inputs[t];
  }

  static std::vector<Eigen::VectorXd> backward_attention(const AttentionParams& p,
                                                         const EncoderTrace& tr,
                                                         const Eigen::VectorXd& d_output,
                                                         AttentionParams& g) {
    const std::size_t steps = tr.inputs.size();
    Eigen::VectorXd d_weights(static_cast<Eigen::Index>(steps));
    for (std::size_t t = 0; t < steps; ++t)
      d_weights(static_cast<Eigen::Index>(t)) = d_output.dot(tr.inputs[t]);
    const double mean = tr.weights.dot(d_weights);

    std::vector<Eigen::VectorXd> d_inputs(steps);
    for (std::size_t t = 0; t < steps; ++t) {
      const auto ti = static_cast<Eigen::Index>(t);
      const double d_score = tr.weights(ti) * (d_weights(ti) - mean);
      const auto& u = tr.activations[t];
      g.score += d_score * u;
      const Eigen::VectorXd da = (d_score * p.score).cwiseProduct((1.0 - u.array().square()).matrix());
      g.projection.noalias() += da * tr.inputs[t].transpose();
      d_inputs[t] = tr.weights(ti) * d_output + p.projection.transpose() * da;
    }
    return d_inputs;
  }

  std::variant<GruParams, AttentionParams> params_;
};

}  // namespace negsamp
