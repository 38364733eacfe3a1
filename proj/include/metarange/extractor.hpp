#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "metarange/errors.hpp"
#include "metarange/matrix.hpp"
#include "metarange/prng.hpp"
#include "metarange/textio.hpp"

// The shared feature extractor: a fully connected network with rectifier
// hidden units and an identity output layer, hand-written reverse-mode
// gradients, and SGD with Nesterov momentum.

namespace metarange {

struct ExtractorArch {
  std::vector<int> layer_widths;  // input dim, hidden widths..., embedding dim

  int num_layers() const { return static_cast<int>(layer_widths.size()) - 1; }
  int input_dim() const { return layer_widths.front(); }
  int embedding_dim() const { return layer_widths.back(); }

  void validate() const {
    if (layer_widths.size() < 2) throw ArgumentError("arch: need at least one layer");
    for (int w : layer_widths)
      if (w < 1) throw ArgumentError("arch: layer widths must be positive");
    if (embedding_dim() < 2) throw ArgumentError("arch: embedding dim must be >= 2");
  }

  std::string to_string() const {
    std::string s;
    for (std::size_t i = 0; i < layer_widths.size(); ++i) {
      if (i) s += ",";
      s += std::to_string(layer_widths[i]);
    }
    return s;
  }

  static ExtractorArch from_string(const std::string& s) {
    ExtractorArch arch;
    for (const auto& tok : split(s, ','))
      arch.layer_widths.push_back(static_cast<int>(parse_int(strip(tok))));
    arch.validate();
    return arch;
  }
};

/// Weights are out x in; gradients reuse this type (same shapes).
struct ExtractorParams {
  ExtractorArch arch;
  std::vector<Mat> weights;
  std::vector<Vec> biases;
};

using ExtractorGrads = ExtractorParams;

/// Weights uniform in [-1/sqrt(fan_in), +1/sqrt(fan_in)], biases zero.
inline ExtractorParams init_params(const ExtractorArch& arch, std::uint64_t seed) {
  arch.validate();
  ExtractorParams p;
  p.arch = arch;
  for (int l = 0; l < arch.num_layers(); ++l) {
    const int fan_in = arch.layer_widths[static_cast<std::size_t>(l)];
    const int fan_out = arch.layer_widths[static_cast<std::size_t>(l + 1)];
    const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
    Prng rng(derive_seed(seed, static_cast<std::uint64_t>(l)));
    Mat w(static_cast<std::size_t>(fan_out), static_cast<std::size_t>(fan_in));
    for (auto& x : w.a) x = rng.uniform(-bound, bound);
    p.weights.push_back(std::move(w));
    p.biases.emplace_back(static_cast<std::size_t>(fan_out), 0.0);
  }
  return p;
}

inline ExtractorGrads zero_grads_like(const ExtractorParams& p) {
  ExtractorGrads g;
  g.arch = p.arch;
  for (std::size_t l = 0; l < p.weights.size(); ++l) {
    g.weights.emplace_back(p.weights[l].rows, p.weights[l].cols);
    g.biases.emplace_back(p.biases[l].size(), 0.0);
  }
  return g;
}

/// Activations kept for the backward pass. activations[0] is the input
/// batch, activations[l+1] the output of layer l after its nonlinearity.
struct ForwardCache {
  std::vector<Mat> activations;
  std::vector<Mat> pre;  // pre-activation values per layer
};

/// Forward pass; fills `cache` when non-null. Rectifier on hidden layers,
/// identity on the output layer.
inline Mat forward(const ExtractorParams& params, const Mat& batch,
                   ForwardCache* cache = nullptr) {
  params.arch.validate();
  if (static_cast<int>(batch.cols) != params.arch.input_dim())
    throw ArgumentError("forward: batch column count does not match input dim");
  const int layers = params.arch.num_layers();
  Mat x = batch;
  if (cache) {
    cache->activations.clear();
    cache->pre.clear();
    cache->activations.push_back(x);
  }
  for (int l = 0; l < layers; ++l) {
    const Mat& w = params.weights[static_cast<std::size_t>(l)];
    const Vec& b = params.biases[static_cast<std::size_t>(l)];
    Mat z(x.rows, w.rows);
    for (std::size_t i = 0; i < x.rows; ++i)
      for (std::size_t j = 0; j < w.rows; ++j)
        z(i, j) = dot(x.row(i), w.row(j), x.cols) + b[j];
    if (cache) cache->pre.push_back(z);
    if (l + 1 < layers)
      for (auto& v : z.a) v = v > 0.0 ? v : 0.0;  // inactive exactly at z <= 0
    x = std::move(z);
    if (cache) cache->activations.push_back(x);
  }
  return x;
}

/// Exact reverse-mode gradient given the upstream gradient with respect to
/// the embeddings. The cache must come from a forward() call with the same
/// params and batch.
inline ExtractorGrads backward(const ExtractorParams& params, const ForwardCache& cache,
                               const Mat& embedding_grad) {
  const int layers = params.arch.num_layers();
  if (static_cast<int>(cache.pre.size()) != layers ||
      static_cast<int>(cache.activations.size()) != layers + 1)
    throw ArgumentError("backward: cache does not match params");
  if (embedding_grad.rows != cache.activations.back().rows ||
      static_cast<int>(embedding_grad.cols) != params.arch.embedding_dim())
    throw ArgumentError("backward: upstream gradient shape mismatch");

  ExtractorGrads grads = zero_grads_like(params);
  Mat delta = embedding_grad;  // gradient wrt the current layer's output
  for (int l = layers - 1; l >= 0; --l) {
    const Mat& z = cache.pre[static_cast<std::size_t>(l)];
    if (l + 1 < layers)  // undo the rectifier of this hidden layer
      for (std::size_t i = 0; i < delta.a.size(); ++i)
        if (!(z.a[i] > 0.0)) delta.a[i] = 0.0;

    const Mat& input = cache.activations[static_cast<std::size_t>(l)];
    Mat& gw = grads.weights[static_cast<std::size_t>(l)];
    Vec& gb = grads.biases[static_cast<std::size_t>(l)];
    for (std::size_t i = 0; i < delta.rows; ++i) {
      const double* drow = delta.row(i);
      const double* xrow = input.row(i);
      for (std::size_t j = 0; j < delta.cols; ++j) {
        const double dv = drow[j];
        if (dv == 0.0) continue;
        gb[j] += dv;
        double* gwrow = gw.row(j);
        for (std::size_t kk = 0; kk < input.cols; ++kk) gwrow[kk] += dv * xrow[kk];
      }
    }
    if (l > 0) {
      const Mat& w = params.weights[static_cast<std::size_t>(l)];
      Mat next(delta.rows, w.cols);
      for (std::size_t i = 0; i < delta.rows; ++i)
        for (std::size_t j = 0; j < delta.cols; ++j) {
          const double dv = delta(i, j);
          if (dv == 0.0) continue;
          const double* wrow = w.row(j);
          double* nrow = next.row(i);
          for (std::size_t kk = 0; kk < w.cols; ++kk) nrow[kk] += dv * wrow[kk];
        }
      delta = std::move(next);
    }
  }
  return grads;
}

struct OptimizerState {
  double learning_rate = 0.1;
  double momentum = 0.9;
  double weight_decay = 0.0;
  std::vector<Vec> velocity;  // one buffer per weight matrix / bias vector
};

namespace detail {
struct ParamView {
  double* data;
  std::size_t size;
};
inline std::vector<ParamView> views_of(ExtractorParams& p) {
  std::vector<ParamView> v;
  for (std::size_t l = 0; l < p.weights.size(); ++l) {
    v.push_back({p.weights[l].a.data(), p.weights[l].a.size()});
    v.push_back({p.biases[l].data(), p.biases[l].size()});
  }
  return v;
}
}  // namespace detail

inline OptimizerState make_optimizer_state(const ExtractorParams& params, double lr,
                                           double momentum, double weight_decay) {
  if (!(momentum >= 0.0 && momentum < 1.0))
    throw ArgumentError("optimizer: momentum must be in [0, 1)");
  if (weight_decay < 0.0) throw ArgumentError("optimizer: weight_decay must be >= 0");
  OptimizerState s;
  s.learning_rate = lr;
  s.momentum = momentum;
  s.weight_decay = weight_decay;
  auto views = detail::views_of(const_cast<ExtractorParams&>(params));
  for (const auto& view : views) s.velocity.emplace_back(view.size, 0.0);
  return s;
}

struct SgdResult {
  ExtractorParams params;
  OptimizerState state;
};

/// One optimizer step:
///   p <- p - lr * wd * p          (decoupled weight decay, before the step)
///   v <- mu * v + g
///   p <- p - lr * (g + mu * v)    (Nesterov momentum)
/// With momentum 0 and weight decay 0 this is plain p <- p - lr * g.
inline SgdResult sgd_step(ExtractorParams params, const ExtractorGrads& grads,
                          OptimizerState state) {
  auto pviews = detail::views_of(params);
  auto gviews = detail::views_of(const_cast<ExtractorGrads&>(grads));
  if (pviews.size() != gviews.size() || pviews.size() != state.velocity.size())
    throw ArgumentError("sgd_step: parameter/gradient/state shapes differ");
  for (std::size_t t = 0; t < pviews.size(); ++t) {
    if (pviews[t].size != gviews[t].size || pviews[t].size != state.velocity[t].size())
      throw ArgumentError("sgd_step: tensor size mismatch");
    double* p = pviews[t].data;
    const double* g = gviews[t].data;
    double* v = state.velocity[t].data();
    for (std::size_t i = 0; i < pviews[t].size; ++i) {
      if (!std::isfinite(g[i])) throw TrainingError("sgd_step: non-finite gradient");
      if (state.weight_decay != 0.0) p[i] -= state.learning_rate * state.weight_decay * p[i];
      v[i] = state.momentum * v[i] + g[i];
      p[i] -= state.learning_rate * (g[i] + state.momentum * v[i]);
    }
  }
  return {std::move(params), std::move(state)};
}

/// Checkpoint format: key=value header lines (at least arch= and seed=),
/// one blank line, then every parameter one value per line with 17
/// significant digits, layer by layer (weights row-major, then biases).
inline void save_checkpoint(const ExtractorParams& params, const KeyValueFile& metadata,
                            const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out << "arch=" << params.arch.to_string() << "\n";
  for (const auto& kv : metadata.entries())
    if (kv.first != "arch") out << kv.first << "=" << kv.second << "\n";
  out << "\n";
  for (std::size_t l = 0; l < params.weights.size(); ++l) {
    for (double v : params.weights[l].a) out << format_sig(v, 17) << "\n";
    for (double v : params.biases[l]) out << format_sig(v, 17) << "\n";
  }
  if (!out) throw IoError("write failed: " + path.string());
}

struct Checkpoint {
  ExtractorParams params;
  KeyValueFile metadata;
};

inline Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read " + path.string());
  Checkpoint ck;
  std::string line;
  long lineno = 0;
  bool in_header = true;
  while (in_header && std::getline(in, line)) {
    ++lineno;
    const std::string t = strip(line);
    if (t.empty()) {
      in_header = false;
      break;
    }
    const auto eq = t.find('=');
    if (eq == std::string::npos) throw ParseError("checkpoint: expected key=value", lineno);
    ck.metadata.set(t.substr(0, eq), t.substr(eq + 1));
  }
  if (!ck.metadata.has("arch")) throw ParseError("checkpoint: missing arch", lineno);
  const ExtractorArch arch = ExtractorArch::from_string(ck.metadata.get("arch"));
  ck.params.arch = arch;
  auto next_value = [&]() {
    while (std::getline(in, line)) {
      ++lineno;
      const std::string t = strip(line);
      if (t.empty()) continue;
      return parse_double(t, lineno);
    }
    throw ParseError("checkpoint: unexpected end of file", lineno);
  };
  for (int l = 0; l < arch.num_layers(); ++l) {
    const std::size_t fan_in = static_cast<std::size_t>(arch.layer_widths[static_cast<std::size_t>(l)]);
    const std::size_t fan_out = static_cast<std::size_t>(arch.layer_widths[static_cast<std::size_t>(l + 1)]);
    Mat w(fan_out, fan_in);
    for (auto& v : w.a) v = next_value();
    Vec b(fan_out);
    for (auto& v : b) v = next_value();
    ck.params.weights.push_back(std::move(w));
    ck.params.biases.push_back(std::move(b));
  }
  return ck;
}

}  // namespace metarange
