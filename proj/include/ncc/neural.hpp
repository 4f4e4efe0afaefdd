#pragma once

// Quantile-predictor network: GRU encoders over the conformal signals and
// sequence views, a feed-forward encoder for static features, multi-head
// attention fusion and a cumulative ReLU head that is monotone by construction.
//
// Blocks only remember parameter names; the weights live in an ad::ParamStore
// so one store can be cloned, checkpointed or trained independently.

#include <cmath>
#include <random>
#include <string>
#include <vector>

#include "ncc/autodiff.hpp"
#include "ncc/error.hpp"

namespace ncc::nn {

using ad::ParamStore;
using ad::Shape;
using ad::Tensor;

inline std::vector<double> xavier(std::size_t in, std::size_t out, std::mt19937_64& rng) {
  const double a = std::sqrt(6.0 / static_cast<double>(in + out));
  std::uniform_real_distribution<double> dist(-a, a);
  std::vector<double> w(in * out);
  for (auto& x : w) x = dist(rng);
  return w;
}

class Linear {
 public:
  Linear() = default;
  Linear(ParamStore& params, std::string name, std::size_t in, std::size_t out, std::mt19937_64& rng,
         double bias_init = 0.0)
      : name_(std::move(name)), in_(in), out_(out) {
    params.add(name_ + ".W", {in, out}, xavier(in, out, rng));
    params.add(name_ + ".b", {1, out}, std::vector<double>(out, bias_init));
  }

  Tensor forward(const ParamStore& params, const Tensor& x) const {
    if (x.cols() != in_) fail(ErrorKind::Shape, name_ + ": expected " + std::to_string(in_) + " inputs, got " + x.shape().str());
    return ad::matmul(x, params.get(name_ + ".W")) + params.get(name_ + ".b");
  }

  const std::string& name() const { return name_; }
  std::size_t in() const { return in_; }
  std::size_t out() const { return out_; }

 private:
  std::string name_;
  std::size_t in_ = 0;
  std::size_t out_ = 0;
};

/// Standard GRU cell:
///   z = sigmoid(x Wz + h Uz + bz),  r = sigmoid(x Wr + h Ur + br)
///   c = tanh(x Wh + (r * h) Uh + bh),  h' = (1 - z) * h + z * c
class Gru {
 public:
  Gru() = default;
  Gru(ParamStore& params, std::string name, std::size_t in, std::size_t hidden, std::mt19937_64& rng)
      : name_(std::move(name)), in_(in), hidden_(hidden) {
    for (const char* g : {"z", "r", "h"}) {
      params.add(name_ + ".W" + g, {in, hidden}, xavier(in, hidden, rng));
      params.add(name_ + ".U" + g, {hidden, hidden}, xavier(hidden, hidden, rng));
      params.add(name_ + ".b" + g, {1, hidden}, std::vector<double>(hidden, 0.0));
    }
  }

  Tensor step(const ParamStore& p, const Tensor& x, const Tensor& h) const {
    if (x.cols() != in_) {
      fail(ErrorKind::Shape, name_ + ": expected input width " + std::to_string(in_) + ", got " + x.shape().str());
    }
    auto gate = [&](const char* g) {
      return ad::matmul(x, p.get(name_ + ".W" + g)) + p.get(name_ + ".b" + g);
    };
    const Tensor z = ad::sigmoid(gate("z") + ad::matmul(h, p.get(name_ + ".Uz")));
    const Tensor r = ad::sigmoid(gate("r") + ad::matmul(h, p.get(name_ + ".Ur")));
    const Tensor c = ad::tanh(gate("h") + ad::matmul(r * h, p.get(name_ + ".Uh")));
    return h + z * (c - h);
  }

  /// Runs the sequence (each element [batch x in]) from a zero state; returns the final hidden state.
  Tensor encode(const ParamStore& p, const std::vector<Tensor>& seq) const {
    if (seq.empty()) fail(ErrorKind::Shape, name_ + ": empty sequence");
    Tensor h = Tensor::zeros({seq.front().rows(), hidden_});
    for (const auto& x : seq) h = step(p, x, h);
    return h;
  }

  std::size_t hidden() const { return hidden_; }
  std::size_t in() const { return in_; }

 private:
  std::string name_;
  std::size_t in_ = 0;
  std::size_t hidden_ = 0;
};

/// Scaled dot-product multi-head attention of one query row against an unordered set of
/// key/value rows, heads concatenated and passed through an output projection.
class MultiHeadAttention {
 public:
  MultiHeadAttention() = default;
  MultiHeadAttention(ParamStore& params, std::string name, std::size_t dim, std::size_t heads, std::mt19937_64& rng)
      : name_(std::move(name)), dim_(dim), heads_(heads) {
    if (heads == 0 || dim % heads != 0) {
      fail(ErrorKind::InvalidParameter,
           name_ + ": hidden size " + std::to_string(dim) + " not divisible by " + std::to_string(heads) + " heads");
    }
    for (const char* m : {"Wq", "Wk", "Wv", "Wo"}) params.add(name_ + "." + m, {dim, dim}, xavier(dim, dim, rng));
  }

  Tensor fuse(const ParamStore& p, const Tensor& query, const std::vector<Tensor>& items) const {
    if (items.empty()) fail(ErrorKind::Shape, name_ + ": nothing to attend over");
    const Tensor q = ad::matmul(query, p.get(name_ + ".Wq"));
    std::vector<Tensor> keys, values;
    for (const auto& it : items) {
      keys.push_back(ad::matmul(it, p.get(name_ + ".Wk")));
      values.push_back(ad::matmul(it, p.get(name_ + ".Wv")));
    }
    const std::size_t dh = dim_ / heads_;
    const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dh));
    std::vector<Tensor> head_out;
    for (std::size_t h = 0; h < heads_; ++h) {
      const Tensor qh = ad::slice(q, 1, h * dh, (h + 1) * dh);
      std::vector<Tensor> scores;
      for (const auto& k : keys) scores.push_back(ad::sum(qh * ad::slice(k, 1, h * dh, (h + 1) * dh), 1) * inv_sqrt);
      const Tensor w = ad::softmax(ad::concat(scores, 1));
      Tensor acc;
      for (std::size_t j = 0; j < values.size(); ++j) {
        Tensor term = ad::slice(w, 1, j, j + 1) * ad::slice(values[j], 1, h * dh, (h + 1) * dh);
        acc = acc.defined() ? acc + term : term;
      }
      head_out.push_back(acc);
    }
    return ad::matmul(ad::concat(head_out, 1), p.get(name_ + ".Wo"));
  }

  std::size_t dim() const { return dim_; }
  std::size_t heads() const { return heads_; }

 private:
  std::string name_;
  std::size_t dim_ = 0;
  std::size_t heads_ = 0;
};

/// q_raw = cumsum(relu(pre)): entry 0 is the base quantile, the rest are non-negative increments.
inline Tensor monotone_ladder(const Tensor& pre_relu) { return ad::cumsum(ad::relu(pre_relu)); }

/// Two-layer MLP whose final ReLU feeds the cumulative ladder.
class MonotoneHead {
 public:
  MonotoneHead() = default;
  MonotoneHead(ParamStore& params, const std::string& name, std::size_t in, std::size_t hidden, std::size_t levels,
               std::mt19937_64& rng, double base_init, double step_init)
      : hidden_layer_(params, name + ".l1", in, hidden, rng), out_layer_(params, name + ".l2", hidden, levels, rng) {
    auto b = params.get(name + ".l2.b").mutable_values();
    for (std::size_t i = 0; i < b.size(); ++i) b[i] = i == 0 ? base_init : step_init;
  }

  Tensor pre_relu(const ParamStore& p, const Tensor& z) const {
    return out_layer_.forward(p, ad::relu(hidden_layer_.forward(p, z)));
  }

  Tensor forward(const ParamStore& p, const Tensor& z) const { return monotone_ladder(pre_relu(p, z)); }

 private:
  Linear hidden_layer_;
  Linear out_layer_;
};

enum class ViewKind { Sequence, Static };

struct ViewSpec {
  std::string name;
  ViewKind kind = ViewKind::Sequence;
  std::size_t dim = 1;
};

struct EncoderConfig {
  std::size_t hidden = 32;
  std::size_t heads = 4;
  std::size_t window = 32;  // L, the context length fed to the GRUs
  std::size_t levels = 1;   // ladder size n
  std::size_t head_hidden = 64;
  std::size_t static_dim = 2;  // horizon plus region code(s)
  std::vector<ViewSpec> views;  // extra sequence views beyond the static one
  double head_base_init = 0.5;
  double head_step_init = 0.2;

  void validate() const {
    if (heads == 0 || hidden % heads != 0) {
      fail(ErrorKind::InvalidParameter, "encoder: hidden size must be divisible by the number of heads");
    }
    if (window == 0) fail(ErrorKind::InvalidParameter, "encoder: window must be >= 1");
    if (levels == 0) fail(ErrorKind::InvalidParameter, "encoder: ladder must have >= 1 level");
    if (static_dim == 0) fail(ErrorKind::InvalidParameter, "encoder: static features must be non-empty");
  }
};

/// Batched network input. Every sequence has `window` elements of shape [batch x channels].
struct PredictorInput {
  std::vector<Tensor> errs;   // channels = levels
  std::vector<Tensor> quantiles;  // channels = levels, normalised
  std::vector<Tensor> scores;     // channels = 1, normalised
  Tensor static_features;         // [batch x static_dim]
  std::vector<std::vector<Tensor>> views;  // one sequence per configured view

  std::size_t batch() const { return static_features.rows(); }
};

struct CombinedEmbedding {
  Tensor combined;
  Tensor data;
  Tensor err;
  Tensor q;
  Tensor s;
};

struct PredictorOutput {
  Tensor pre_relu;  // [batch x levels]
  Tensor q_raw;     // [batch x levels], non-negative, non-decreasing along columns
  CombinedEmbedding embedding;
};

class QuantilePredictor {
 public:
  QuantilePredictor() = default;

  QuantilePredictor(EncoderConfig cfg, ParamStore& params, std::mt19937_64& rng) : cfg_(std::move(cfg)) {
    cfg_.validate();
    const std::size_t h = cfg_.hidden;
    err_gru_ = Gru(params, "enc.err", cfg_.levels, h, rng);
    q_gru_ = Gru(params, "enc.q", cfg_.levels, h, rng);
    s_gru_ = Gru(params, "enc.s", 1, h, rng);
    static_enc_ = Linear(params, "view.static", cfg_.static_dim, h, rng);
    for (std::size_t v = 0; v < cfg_.views.size(); ++v) {
      const auto& spec = cfg_.views[v];
      if (spec.kind == ViewKind::Sequence) {
        view_grus_.emplace_back(params, "view." + std::to_string(v), spec.dim, h, rng);
      } else {
        view_linears_.emplace_back(params, "view." + std::to_string(v), spec.dim, h, rng);
      }
    }
    data_attn_ = MultiHeadAttention(params, "fuse.data", h, cfg_.heads, rng);
    comb_attn_ = MultiHeadAttention(params, "fuse.comb", h, cfg_.heads, rng);
    head_ = MonotoneHead(params, "head", h, cfg_.head_hidden, cfg_.levels, rng, cfg_.head_base_init,
                         cfg_.head_step_init);
  }

  PredictorOutput forward(const ParamStore& p, const PredictorInput& in) const {
    check(in);
    CombinedEmbedding emb;
    emb.err = err_gru_.encode(p, in.errs);
    emb.q = q_gru_.encode(p, in.quantiles);
    emb.s = s_gru_.encode(p, in.scores);

    std::vector<Tensor> views{ad::tanh(static_enc_.forward(p, in.static_features))};
    std::size_t seq_i = 0, static_i = 0;
    for (std::size_t v = 0; v < cfg_.views.size(); ++v) {
      if (cfg_.views[v].kind == ViewKind::Sequence) {
        views.push_back(view_grus_[seq_i++].encode(p, in.views[v]));
      } else {
        views.push_back(ad::tanh(view_linears_[static_i++].forward(p, in.views[v].front())));
      }
    }
    Tensor view_mean = views.front();
    for (std::size_t v = 1; v < views.size(); ++v) view_mean = view_mean + views[v];
    view_mean = view_mean * (1.0 / static_cast<double>(views.size()));
    emb.data = data_attn_.fuse(p, view_mean, views);
    emb.combined = comb_attn_.fuse(p, emb.data, {emb.err, emb.q, emb.s, emb.data});

    PredictorOutput out;
    out.pre_relu = head_.pre_relu(p, emb.combined);
    out.q_raw = monotone_ladder(out.pre_relu);
    out.embedding = std::move(emb);
    return out;
  }

  const EncoderConfig& config() const { return cfg_; }

 private:
  void check(const PredictorInput& in) const {
    auto seq = [&](const std::vector<Tensor>& s, std::size_t channels, const char* what) {
      if (s.size() != cfg_.window) {
        fail(ErrorKind::Shape, std::string("predictor: ") + what + " sequence has " + std::to_string(s.size()) +
                                   " steps, window is " + std::to_string(cfg_.window));
      }
      for (const auto& x : s) {
        if (x.cols() != channels || x.rows() != in.batch()) {
          fail(ErrorKind::Shape, std::string("predictor: ") + what + " element " + x.shape().str() + ", expected [" +
                                     std::to_string(in.batch()) + "x" + std::to_string(channels) + "]");
        }
      }
    };
    if (!in.static_features.defined() || in.static_features.cols() != cfg_.static_dim) {
      fail(ErrorKind::Shape, "predictor: static features must have " + std::to_string(cfg_.static_dim) + " columns");
    }
    seq(in.errs, cfg_.levels, "err");
    seq(in.quantiles, cfg_.levels, "quantile");
    seq(in.scores, 1, "score");
    if (in.views.size() != cfg_.views.size()) fail(ErrorKind::Shape, "predictor: view count mismatch");
    for (std::size_t v = 0; v < cfg_.views.size(); ++v) {
      if (cfg_.views[v].kind == ViewKind::Sequence) {
        seq(in.views[v], cfg_.views[v].dim, "view");
      } else if (in.views[v].size() != 1 || in.views[v][0].cols() != cfg_.views[v].dim) {
        fail(ErrorKind::Shape, "predictor: static view '" + cfg_.views[v].name + "' has wrong shape");
      }
    }
  }

  EncoderConfig cfg_;
  Gru err_gru_, q_gru_, s_gru_;
  Linear static_enc_;
  std::vector<Gru> view_grus_;
  std::vector<Linear> view_linears_;
  MultiHeadAttention data_attn_, comb_attn_;
  MonotoneHead head_;
};

}  // namespace ncc::nn
