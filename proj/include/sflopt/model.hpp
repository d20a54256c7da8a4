#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

namespace sflopt {

using Vec = std::vector<double>;
using Blocks = std::vector<Vec>;  // one parameter block per layer

/// Row-major samples x features plus integer labels.
struct Dataset {
  int dim = 0;
  Vec x;
  std::vector<int> y;

  int size() const { return static_cast<int>(y.size()); }
  const double* row(int r) const { return x.data() + static_cast<std::size_t>(r) * dim; }

  Dataset subset(const std::vector<int>& rows) const {
    Dataset out;
    out.dim = dim;
    out.x.reserve(rows.size() * dim);
    for (int r : rows) {
      out.x.insert(out.x.end(), row(r), row(r) + dim);
      out.y.push_back(y[r]);
    }
    return out;
  }

  void append(const Dataset& other) {
    if (dim == 0) dim = other.dim;
    x.insert(x.end(), other.x.begin(), other.x.end());
    y.insert(y.end(), other.y.begin(), other.y.end());
  }
};

inline double squared_norm(const Vec& v) {
  double s = 0.0;
  for (double e : v) s += e * e;
  return s;
}

inline double squared_norm(const Blocks& b) {
  double s = 0.0;
  for (const Vec& v : b) s += squared_norm(v);
  return s;
}

inline double squared_distance(const Vec& a, const Vec& b) {
  double s = 0.0;
  for (std::size_t k = 0; k < a.size(); ++k) s += (a[k] - b[k]) * (a[k] - b[k]);
  return s;
}

/// Fully connected network: layer l maps dims[l-1] -> dims[l], tanh after
/// every layer but the last, softmax cross-entropy on the logits. Block l
/// stores W (row-major, dims[l] x dims[l-1]) followed by the bias.
class Mlp {
 public:
  explicit Mlp(std::vector<int> dims) : dims_(std::move(dims)) {
    if (dims_.size() < 2) throw std::invalid_argument("mlp: need at least one layer");
    for (int d : dims_) {
      if (d < 1) throw std::invalid_argument("mlp: layer widths must be positive");
    }
  }

  int num_layers() const { return static_cast<int>(dims_.size()) - 1; }
  const std::vector<int>& dims() const { return dims_; }
  int block_size(int layer) const { return dims_[layer] * (dims_[layer - 1] + 1); }

  /// Scaled-uniform (Glorot) initialization, deterministic in the seed.
  Blocks init(std::uint64_t seed) const {
    std::mt19937_64 rng(seed);
    Blocks w(num_layers());
    for (int l = 1; l <= num_layers(); ++l) {
      const double r = std::sqrt(6.0 / (dims_[l - 1] + dims_[l]));
      std::uniform_real_distribution<double> u(-r, r);
      Vec& b = w[l - 1];
      b.assign(block_size(l), 0.0);
      for (int k = 0; k < dims_[l] * dims_[l - 1]; ++k) b[k] = u(rng);
    }
    return w;
  }

  /// Activations kept for the backward pass over a range of layers.
  struct Cache {
    int first = 1;
    std::vector<Vec> inputs;   // input to each layer of the range
    std::vector<Vec> outputs;  // output (post-nonlinearity) of each layer
  };

  /// Applies layers first..last to a batch (rows x dims[first-1]).
  Vec forward(const Blocks& w, int first, int last, Vec x, int rows, Cache* cache) const {
    if (cache) {
      cache->first = first;
      cache->inputs.clear();
      cache->outputs.clear();
    }
    for (int l = first; l <= last; ++l) {
      const int in = dims_[l - 1], out = dims_[l];
      const Vec& b = w[l - 1];
      const double* bias = b.data() + static_cast<std::size_t>(out) * in;
      Vec y(static_cast<std::size_t>(rows) * out);
      for (int r = 0; r < rows; ++r) {
        const double* xr = x.data() + static_cast<std::size_t>(r) * in;
        for (int o = 0; o < out; ++o) {
          const double* wo = b.data() + static_cast<std::size_t>(o) * in;
          double s = bias[o];
          for (int k = 0; k < in; ++k) s += wo[k] * xr[k];
          y[static_cast<std::size_t>(r) * out + o] = l == num_layers() ? s : std::tanh(s);
        }
      }
      if (cache) {
        cache->inputs.push_back(std::move(x));
        cache->outputs.push_back(y);
      }
      x = std::move(y);
    }
    return x;
  }

  /// Gradient of the layers in `cache`'s range given dL/d(output of last),
  /// written into grads[first-1..last-1]. Returns dL/d(input of first).
  Vec backward(const Blocks& w, const Cache& cache, Vec grad_out, int rows,
               Blocks& grads) const {
    const int first = cache.first;
    const int last = first + static_cast<int>(cache.inputs.size()) - 1;
    for (int l = last; l >= first; --l) {
      const int in = dims_[l - 1], out = dims_[l];
      const Vec& x = cache.inputs[l - first];
      const Vec& y = cache.outputs[l - first];
      if (l != num_layers()) {
        for (std::size_t k = 0; k < grad_out.size(); ++k) grad_out[k] *= 1.0 - y[k] * y[k];
      }
      Vec& g = grads[l - 1];
      g.assign(block_size(l), 0.0);
      double* gbias = g.data() + static_cast<std::size_t>(out) * in;
      Vec grad_in(static_cast<std::size_t>(rows) * in, 0.0);
      const Vec& b = w[l - 1];
      for (int r = 0; r < rows; ++r) {
        const double* xr = x.data() + static_cast<std::size_t>(r) * in;
        double* gi = grad_in.data() + static_cast<std::size_t>(r) * in;
        for (int o = 0; o < out; ++o) {
          const double d = grad_out[static_cast<std::size_t>(r) * out + o];
          if (d == 0.0) continue;
          double* go = g.data() + static_cast<std::size_t>(o) * in;
          const double* wo = b.data() + static_cast<std::size_t>(o) * in;
          for (int k = 0; k < in; ++k) {
            go[k] += d * xr[k];
            gi[k] += d * wo[k];
          }
          gbias[o] += d;
        }
      }
      grad_out = std::move(grad_in);
    }
    return grad_out;
  }

  /// Mean softmax cross-entropy and its gradient w.r.t. the logits.
  double cross_entropy(const Vec& logits, const std::vector<int>& labels, Vec* dlogits) const {
    const int rows = static_cast<int>(labels.size());
    const int c = dims_.back();
    double loss = 0.0;
    if (dlogits) dlogits->assign(logits.size(), 0.0);
    for (int r = 0; r < rows; ++r) {
      const double* z = logits.data() + static_cast<std::size_t>(r) * c;
      double mx = z[0];
      for (int k = 1; k < c; ++k) mx = std::max(mx, z[k]);
      double sum = 0.0;
      for (int k = 0; k < c; ++k) sum += std::exp(z[k] - mx);
      loss += std::log(sum) + mx - z[labels[r]];
      if (dlogits) {
        double* d = dlogits->data() + static_cast<std::size_t>(r) * c;
        for (int k = 0; k < c; ++k) d[k] = std::exp(z[k] - mx) / sum / rows;
        d[labels[r]] -= 1.0 / rows;
      }
    }
    return loss / rows;
  }

  /// One split step: the client runs layers 1..cut, the server the rest and
  /// the loss, the activation gradient goes back to the client. Fills every
  /// block of `grads`; returns the batch loss.
  double split_gradient(const Blocks& w, int cut, const Dataset& batch, Blocks& grads) const {
    const int rows = batch.size();
    grads.resize(num_layers());
    Cache client, server;
    Vec act = forward(w, 1, cut, batch.x, rows, &client);
    Vec logits = forward(w, cut + 1, num_layers(), std::move(act), rows, &server);
    Vec d;
    const double loss = cross_entropy(logits, batch.y, &d);
    Vec d_act = backward(w, server, std::move(d), rows, grads);
    backward(w, client, std::move(d_act), rows, grads);
    return loss;
  }

  double loss_and_grad(const Blocks& w, const Dataset& batch, Blocks* grads) const {
    if (grads) return split_gradient(w, num_layers(), batch, *grads);
    return loss(w, batch);
  }

  double loss(const Blocks& w, const Dataset& data) const {
    return cross_entropy(forward(w, 1, num_layers(), data.x, data.size(), nullptr), data.y,
                         nullptr);
  }

 private:
  std::vector<int> dims_;
};

/// Gaussian class clusters shared by every client.
struct ClusterTask {
  int dim = 8;
  int classes = 4;
  double separation = 2.0;  // std of the class centres
  double noise = 1.0;       // within-class std
};

/// Per-client synthetic datasets. Non-IID clients draw 70% of their samples
/// from one primary class (client i -> class i mod C) and spread the rest
/// uniformly over the other classes.
inline std::vector<Dataset> make_client_data(const ClusterTask& task,
                                             const std::vector<int>& sizes, bool iid,
                                             std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> gauss(0.0, 1.0);
  std::vector<Vec> centres(task.classes, Vec(task.dim));
  for (Vec& c : centres) {
    for (double& v : c) v = task.separation * gauss(rng);
  }
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::uniform_int_distribution<int> any_class(0, task.classes - 1);
  std::vector<Dataset> out(sizes.size());
  for (std::size_t i = 0; i < sizes.size(); ++i) {
    Dataset& d = out[i];
    d.dim = task.dim;
    const int primary = static_cast<int>(i) % task.classes;
    for (int s = 0; s < sizes[i]; ++s) {
      int label = any_class(rng);
      if (!iid && task.classes > 1) {
        if (unit(rng) < 0.7) {
          label = primary;
        } else {
          std::uniform_int_distribution<int> other(0, task.classes - 2);
          label = other(rng);
          if (label >= primary) ++label;
        }
      }
      d.y.push_back(label);
      for (int k = 0; k < task.dim; ++k) {
        d.x.push_back(centres[label][k] + task.noise * gauss(rng));
      }
    }
  }
  return out;
}

}  // namespace sflopt
