// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "quantemu/common.hpp"

#include <cstdio>
#include <fstream>
#include <sstream>
#include <string>

namespace quantemu {

enum class Activation { relu, sigmoid, linear };

inline const char* activation_name(Activation a) {
  switch (a) {
    case Activation::relu: return "relu";
    case Activation::sigmoid: return "sigmoid";
    case Activation::linear: return "linear";
  }
  return "linear";
}

inline Activation activation_from_name(const std::string& name) {
  if (name == "relu") return Activation::relu;
  if (name == "sigmoid") return Activation::sigmoid;
  if (name == "linear") return Activation::linear;
  throw std::invalid_argument("unknown activation: " + name);
}

struct Layer {
  Matrix W;  // out x in
  Vector b;  // out
  Activation act = Activation::linear;
};

/// Dense feed-forward network.  Parameters carry a revision counter so that a
/// forward cache taken before an optimizer step is rejected by backward().
class Mlp {
 public:
  Mlp() = default;

  /// dims = [in, hidden..., out]; one activation per weight layer.
  Mlp(const std::vector<int>& dims, const std::vector<Activation>& acts, std::uint64_t seed)
      : seed_(seed) {
    require(dims.size() >= 2, "Mlp: need at least one layer");
    require(acts.size() == dims.size() - 1, "Mlp: one activation per layer required");
    for (int d : dims) require(d >= 1, "Mlp: layer dimensions must be positive");

    Rng rng(seed);
    layers_.reserve(acts.size());
    for (std::size_t l = 0; l + 1 < dims.size(); ++l) {
      const int fan_in = dims[l];
      const int fan_out = dims[l + 1];
      const double bound = std::sqrt(6.0 / double(fan_in + fan_out));
      std::uniform_real_distribution<double> uni(-bound, bound);
      Layer layer;
      layer.W = Matrix::NullaryExpr(fan_out, fan_in, [&]() { return uni(rng); });
      layer.b = Vector::Zero(fan_out);
      layer.act = acts[l];
      layers_.push_back(std::move(layer));
    }
  }

  const std::vector<Layer>& layers() const { return layers_; }
  std::size_t layer_count() const { return layers_.size(); }
  Eigen::Index input_dim() const { return layers_.front().W.cols(); }
  Eigen::Index output_dim() const { return layers_.back().W.rows(); }
  std::uint64_t seed() const { return seed_; }
  std::uint64_t revision() const { return revision_; }

  /// Direct access for parameter surgery (weight absorption, tests); bumps
  /// the revision so stale caches are caught.
  std::vector<Layer>& mutable_layers() {
    ++revision_;
    return layers_;
  }

  Vector operator()(const Vector& x) const;

  friend void sgd_step(Mlp& net, const struct Gradients& grads, double lr);
  friend void adam_step(Mlp& net, const struct Gradients& grads, struct AdamState& state,
                        const struct AdamHyper& hyper);
  friend Mlp load_model_text(std::istream& in);

 private:
  std::vector<Layer> layers_;
  std::uint64_t seed_ = 0;
  std::uint64_t revision_ = 0;
};

namespace detail {

inline double sigmoid_scalar(double z) {
  if (z >= 0.0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

inline Matrix apply_activation(const Matrix& z, Activation act) {
  switch (act) {
    case Activation::relu: return z.cwiseMax(0.0);
    case Activation::sigmoid: return z.unaryExpr([](double v) { return sigmoid_scalar(v); });
    case Activation::linear: return z;
  }
  return z;
}

// Derivative through the activation, expressed with the cached pre/post values.
inline Matrix activation_grad(const Matrix& z, const Matrix& a, Activation act) {
  switch (act) {
    case Activation::relu:
      return z.unaryExpr([](double v) { return v > 0.0 ? 1.0 : 0.0; });
    case Activation::sigmoid:
      return a.array() * (1.0 - a.array());
    case Activation::linear:
      return Matrix::Ones(z.rows(), z.cols());
  }
  return Matrix::Ones(z.rows(), z.cols());
}

}  // namespace detail

/// Activations recorded by a forward pass, consumed by backward().
struct ForwardCache {
  Matrix input;             // in x batch
  std::vector<Matrix> pre;  // per layer, out x batch
  std::vector<Matrix> post;
  std::uint64_t revision = 0;
};

struct Gradients {
  std::vector<Matrix> dW;
  std::vector<Vector> db;

  static Gradients zeros_like(const Mlp& net) {
    Gradients g;
    for (const Layer& l : net.layers()) {
      g.dW.push_back(Matrix::Zero(l.W.rows(), l.W.cols()));
      g.db.push_back(Vector::Zero(l.b.size()));
    }
    return g;
  }

  void add_scaled(const Gradients& other, double scale) {
    for (std::size_t l = 0; l < dW.size(); ++l) {
      dW[l] += scale * other.dW[l];
      db[l] += scale * other.db[l];
    }
  }

  bool finite() const {
    for (const Matrix& m : dW)
      if (!m.allFinite()) return false;
    for (const Vector& v : db)
      if (!v.allFinite()) return false;
    return true;
  }
};

/// Batched forward pass; columns are independent samples.
inline Matrix forward_batch(const Mlp& net, const Matrix& x, ForwardCache* cache = nullptr) {
  require(x.rows() == net.input_dim(), "forward: input dimension mismatch");
  require(x.allFinite(), "forward: non-finite input");
  if (cache != nullptr) {
    cache->input = x;
    cache->pre.clear();
    cache->post.clear();
    cache->revision = net.revision();
  }
  Matrix a = x;
  for (const Layer& layer : net.layers()) {
    Matrix z = (layer.W * a).colwise() + layer.b;
    a = detail::apply_activation(z, layer.act);
    if (cache != nullptr) {
      cache->pre.push_back(z);
      cache->post.push_back(a);
    }
  }
  return a;
}

inline Vector forward(const Mlp& net, const Vector& x, ForwardCache* cache = nullptr) {
  return forward_batch(net, x, cache).col(0);
}

inline Vector Mlp::operator()(const Vector& x) const { return forward(*this, x); }

/// Reverse-mode gradients for all parameters given d(loss)/d(output), one
/// column per sample; sample contributions are summed.
inline Gradients backward(const Mlp& net, const ForwardCache& cache, const Matrix& output_grad) {
  if (cache.revision != net.revision())
    throw std::runtime_error("backward: stale forward cache (parameters changed)");
  require(cache.pre.size() == net.layer_count(), "backward: cache does not match network");
  require(output_grad.rows() == net.output_dim() && output_grad.cols() == cache.input.cols(),
          "backward: output gradient shape mismatch");

  Gradients grads;
  grads.dW.resize(net.layer_count());
  grads.db.resize(net.layer_count());

  Matrix g = output_grad;
  for (std::size_t l = net.layer_count(); l-- > 0;) {
    const Layer& layer = net.layers()[l];
    const Matrix dz =
        g.cwiseProduct(detail::activation_grad(cache.pre[l], cache.post[l], layer.act));
    const Matrix& a_prev = l == 0 ? cache.input : cache.post[l - 1];
    grads.dW[l] = dz * a_prev.transpose();
    grads.db[l] = dz.rowwise().sum();
    if (l > 0) g = layer.W.transpose() * dz;
  }
  return grads;
}

inline void sgd_step(Mlp& net, const Gradients& grads, double lr) {
  require(grads.dW.size() == net.layer_count(), "sgd_step: gradient shape mismatch");
  if (!grads.finite()) throw std::runtime_error("sgd_step: non-finite gradients");
  for (std::size_t l = 0; l < net.layer_count(); ++l) {
    net.layers_[l].W -= lr * grads.dW[l];
    net.layers_[l].b -= lr * grads.db[l];
  }
  ++net.revision_;
}

struct AdamHyper {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct AdamState {
  std::vector<Matrix> mW, vW;
  std::vector<Vector> mb, vb;
  long t = 0;

  static AdamState zeros_like(const Mlp& net) {
    AdamState s;
    for (const Layer& l : net.layers()) {
      s.mW.push_back(Matrix::Zero(l.W.rows(), l.W.cols()));
      s.vW.push_back(Matrix::Zero(l.W.rows(), l.W.cols()));
      s.mb.push_back(Vector::Zero(l.b.size()));
      s.vb.push_back(Vector::Zero(l.b.size()));
    }
    return s;
  }
};

inline void adam_step(Mlp& net, const Gradients& grads, AdamState& state, const AdamHyper& hyper) {
  require(grads.dW.size() == net.layer_count(), "adam_step: gradient shape mismatch");
  require(state.mW.size() == net.layer_count(), "adam_step: state shape mismatch");
  if (!grads.finite()) throw std::runtime_error("adam_step: non-finite gradients");

  ++state.t;
  const double c1 = 1.0 - std::pow(hyper.beta1, double(state.t));
  const double c2 = 1.0 - std::pow(hyper.beta2, double(state.t));
  for (std::size_t l = 0; l < net.layer_count(); ++l) {
    state.mW[l] = hyper.beta1 * state.mW[l] + (1.0 - hyper.beta1) * grads.dW[l];
    state.vW[l] = hyper.beta2 * state.vW[l] + (1.0 - hyper.beta2) * grads.dW[l].cwiseAbs2();
    state.mb[l] = hyper.beta1 * state.mb[l] + (1.0 - hyper.beta1) * grads.db[l];
    state.vb[l] = hyper.beta2 * state.vb[l] + (1.0 - hyper.beta2) * grads.db[l].cwiseAbs2();

    net.layers_[l].W.array() -=
        hyper.lr * (state.mW[l] / c1).array() / ((state.vW[l] / c2).cwiseSqrt().array() + hyper.eps);
    net.layers_[l].b.array() -=
        hyper.lr * (state.mb[l] / c1).array() / ((state.vb[l] / c2).cwiseSqrt().array() + hyper.eps);
  }
  ++net.revision_;
}

struct LossResult {
  double value = 0.0;
  Vector grad;  // with respect to the network output
};

/// Softmax cross-entropy with max-subtraction stabilization.
inline LossResult loss_cross_entropy(const Vector& logits, int target_class) {
  require(target_class >= 0 && target_class < logits.size(),
          "loss_cross_entropy: class index out of range");
  const double m = logits.maxCoeff();
  const Vector shifted = logits.array() - m;
  const Vector expv = shifted.array().exp();
  const double z = expv.sum();
  LossResult out;
  out.value = std::log(z) - shifted[target_class];
  out.grad = expv / z;
  out.grad[target_class] -= 1.0;
  return out;
}

/// Plain residual square summed over coordinates.
inline LossResult loss_squared(const Vector& pred, const Vector& target) {
  require(pred.size() == target.size(), "loss_squared: dimension mismatch");
  LossResult out;
  const Vector r = pred - target;
  out.value = r.squaredNorm();
  out.grad = 2.0 * r;
  return out;
}

/// Bit-identical parameter copy (used for the target-network sync).
inline Mlp clone_weights(const Mlp& src) { return src; }

// --- model container -------------------------------------------------------
//
// Text format, one line per item, weights row-major with 17 significant
// digits so the decimal round-trip is exact.

inline void save_model_text(const Mlp& net, std::ostream& out) {
  char buf[64];
  out << "quantemu-mlp 1\n";
  out << "seed " << net.seed() << "\n";
  out << "layers " << net.layer_count() << "\n";
  for (const Layer& l : net.layers()) {
    out << "layer " << l.W.cols() << " " << l.W.rows() << " " << activation_name(l.act) << "\n";
    for (Eigen::Index i = 0; i < l.W.rows(); ++i)
      for (Eigen::Index j = 0; j < l.W.cols(); ++j) {
        std::snprintf(buf, sizeof buf, "%.17g", l.W(i, j));
        out << buf << (j + 1 == l.W.cols() ? "\n" : " ");
      }
    for (Eigen::Index i = 0; i < l.b.size(); ++i) {
      std::snprintf(buf, sizeof buf, "%.17g", l.b[i]);
      out << buf << (i + 1 == l.b.size() ? "\n" : " ");
    }
  }
}

inline Mlp load_model_text(std::istream& in) {
  std::string magic;
  int version = 0;
  in >> magic >> version;
  if (magic != "quantemu-mlp" || version != 1)
    throw std::runtime_error("load_model: not a quantemu model container");

  Mlp net;
  std::string key;
  std::size_t layer_count = 0;
  in >> key >> net.seed_;
  require(key == "seed", "load_model: malformed container (seed)");
  in >> key >> layer_count;
  require(key == "layers", "load_model: malformed container (layers)");

  for (std::size_t l = 0; l < layer_count; ++l) {
    Eigen::Index in_dim = 0, out_dim = 0;
    std::string act;
    in >> key >> in_dim >> out_dim >> act;
    require(key == "layer" && in_dim > 0 && out_dim > 0, "load_model: malformed layer header");
    Layer layer;
    layer.act = activation_from_name(act);
    layer.W.resize(out_dim, in_dim);
    layer.b.resize(out_dim);
    for (Eigen::Index i = 0; i < out_dim; ++i)
      for (Eigen::Index j = 0; j < in_dim; ++j) in >> layer.W(i, j);
    for (Eigen::Index i = 0; i < out_dim; ++i) in >> layer.b[i];
    net.layers_.push_back(std::move(layer));
  }
  if (!in) throw std::runtime_error("load_model: truncated container");
  return net;
}

inline void save_model(const Mlp& net, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("save_model: cannot open " + path);
  save_model_text(net, out);
}

inline Mlp load_model(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("load_model: cannot open " + path);
  return load_model_text(in);
}

}  // namespace quantemu
