#include "eyemod/classifier.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>
#include <limits>
#include <numeric>

namespace eyemod {

namespace {

struct Shape {
  std::size_t c, h, w;
  std::size_t size() const { return c * h * w; }
};

enum class OpKind { Conv, BatchNorm, Relu, Add };

struct Op {
  OpKind kind;
  std::size_t in = 0;
  std::size_t in2 = 0;  // Add only
  std::size_t out = 0;
  std::size_t stride = 1;  // Conv
  std::size_t weight = 0;  // Conv weight, or BN gamma
  std::size_t bias = 0;    // BN beta
  std::size_t bn = 0;      // BN ordinal
  std::size_t mean_buf = 0;
  std::size_t var_buf = 0;
};

enum class Init { HeNormal, Ones, Zeros };

struct ParamSpec {
  std::string name;
  std::vector<std::size_t> shape;
  Init init;
  std::size_t fan_in = 1;
};

struct Graph {
  std::vector<Shape> shapes;  // shapes[0] is the input
  std::vector<Op> ops;
  std::vector<ParamSpec> params;
  std::vector<std::pair<std::string, std::size_t>> buffers;  // name, channels
  std::size_t features = 0;  // tensor feeding global average pooling
  std::size_t head_weight = 0;
  std::size_t head_bias = 0;
  std::size_t n_bn = 0;
};

std::size_t conv_out(std::size_t n, std::size_t stride) { return (n - 1) / stride + 1; }

Graph build_graph(const ModelConfig& cfg) {
  Graph g;
  g.shapes.push_back({cfg.channels, cfg.height, cfg.width});

  auto add_param = [&](std::string name, std::vector<std::size_t> shape, Init init, std::size_t fan_in = 1) {
    g.params.push_back({std::move(name), std::move(shape), init, fan_in});
    return g.params.size() - 1;
  };
  auto conv = [&](const std::string& name, std::size_t in, std::size_t cout, std::size_t stride) {
    const Shape s = g.shapes[in];
    Op op{OpKind::Conv};
    op.in = in;
    op.stride = stride;
    op.weight = add_param(name + ".weight", {cout, s.c, 3, 3}, Init::HeNormal, s.c * 9);
    g.shapes.push_back({cout, conv_out(s.h, stride), conv_out(s.w, stride)});
    op.out = g.shapes.size() - 1;
    g.ops.push_back(op);
    return op.out;
  };
  auto batchnorm = [&](const std::string& name, std::size_t in) {
    const Shape s = g.shapes[in];
    Op op{OpKind::BatchNorm};
    op.in = in;
    op.weight = add_param(name + ".weight", {s.c}, Init::Ones);
    op.bias = add_param(name + ".bias", {s.c}, Init::Zeros);
    op.bn = g.n_bn++;
    g.buffers.emplace_back(name + ".running_mean", s.c);
    op.mean_buf = g.buffers.size() - 1;
    g.buffers.emplace_back(name + ".running_var", s.c);
    op.var_buf = g.buffers.size() - 1;
    g.shapes.push_back(s);
    op.out = g.shapes.size() - 1;
    g.ops.push_back(op);
    return op.out;
  };
  auto relu = [&](std::size_t in) {
    Op op{OpKind::Relu};
    op.in = in;
    g.shapes.push_back(g.shapes[in]);
    op.out = g.shapes.size() - 1;
    g.ops.push_back(op);
    return op.out;
  };
  auto add = [&](std::size_t a, std::size_t b) {
    Op op{OpKind::Add};
    op.in = a;
    op.in2 = b;
    g.shapes.push_back(g.shapes[a]);
    op.out = g.shapes.size() - 1;
    g.ops.push_back(op);
    return op.out;
  };

  std::size_t t = relu(batchnorm("stem.bn", conv("stem.conv", 0, cfg.stem_channels, 2)));
  for (std::size_t b = 0; b < cfg.block_channels.size(); ++b) {
    const std::string p = "block" + std::to_string(b);
    const std::size_t h = relu(batchnorm(p + ".bn1", conv(p + ".conv1", t, cfg.block_channels[b], 2)));
    if (cfg.residual) {
      const std::size_t r = batchnorm(p + ".bn2", conv(p + ".conv2", h, cfg.block_channels[b], 1));
      t = relu(add(r, h));
    } else {
      t = h;
    }
  }
  g.features = t;
  const std::size_t c_last = g.shapes[t].c;
  g.head_weight = add_param("head.weight", {cfg.class_count, c_last}, Init::Zeros);
  g.head_bias = add_param("head.bias", {cfg.class_count}, Init::Zeros);
  return g;
}

// Valid output-column range for kernel column kw: 0 <= ow*s + kw - 1 < w_in.
std::pair<std::size_t, std::size_t> col_range(std::size_t kw, std::size_t stride, std::size_t w_in,
                                              std::size_t w_out) {
  if (kw > w_in) return {0, 0};
  const std::size_t lo = kw == 0 ? 1 : 0;
  const std::size_t hi = std::min(w_out, (w_in - kw) / stride + 1);
  return {lo, std::max(lo, hi)};
}

template <class T>
void conv_forward(const T* in, const T* weight, T* out, std::size_t batch, const Shape& si,
                  const Shape& so, std::size_t stride) {
  std::fill(out, out + batch * so.size(), T(0));
  for (std::size_t n = 0; n < batch; ++n) {
    for (std::size_t co = 0; co < so.c; ++co) {
      T* op = out + (n * so.c + co) * so.h * so.w;
      for (std::size_t ci = 0; ci < si.c; ++ci) {
        const T* ip = in + (n * si.c + ci) * si.h * si.w;
        const T* wp = weight + (co * si.c + ci) * 9;
        for (std::size_t kh = 0; kh < 3; ++kh) {
          for (std::size_t kw = 0; kw < 3; ++kw) {
            const T w = wp[kh * 3 + kw];
            const auto [lo, hi] = col_range(kw, stride, si.w, so.w);
            for (std::size_t oh = 0; oh < so.h; ++oh) {
              const std::ptrdiff_t ih = static_cast<std::ptrdiff_t>(oh * stride + kh) - 1;
              if (ih < 0 || ih >= static_cast<std::ptrdiff_t>(si.h)) continue;
              const T* row = ip + static_cast<std::size_t>(ih) * si.w;
              T* orow = op + oh * so.w;
              for (std::size_t ow = lo; ow < hi; ++ow) orow[ow] += w * row[ow * stride + kw - 1];
            }
          }
        }
      }
    }
  }
}

template <class T>
void conv_backward(const T* in, const T* weight, const T* dout, T* din, T* dweight, std::size_t batch,
                   const Shape& si, const Shape& so, std::size_t stride) {
  for (std::size_t n = 0; n < batch; ++n) {
    for (std::size_t co = 0; co < so.c; ++co) {
      const T* dp = dout + (n * so.c + co) * so.h * so.w;
      for (std::size_t ci = 0; ci < si.c; ++ci) {
        const T* ip = in + (n * si.c + ci) * si.h * si.w;
        T* dip = din ? din + (n * si.c + ci) * si.h * si.w : nullptr;
        const T* wp = weight + (co * si.c + ci) * 9;
        T* dwp = dweight + (co * si.c + ci) * 9;
        for (std::size_t kh = 0; kh < 3; ++kh) {
          for (std::size_t kw = 0; kw < 3; ++kw) {
            const T w = wp[kh * 3 + kw];
            T acc = 0;
            const auto [lo, hi] = col_range(kw, stride, si.w, so.w);
            for (std::size_t oh = 0; oh < so.h; ++oh) {
              const std::ptrdiff_t ih = static_cast<std::ptrdiff_t>(oh * stride + kh) - 1;
              if (ih < 0 || ih >= static_cast<std::ptrdiff_t>(si.h)) continue;
              const T* row = ip + static_cast<std::size_t>(ih) * si.w;
              const T* drow = dp + oh * so.w;
              for (std::size_t ow = lo; ow < hi; ++ow) acc += drow[ow] * row[ow * stride + kw - 1];
              if (dip) {
                T* dirow = dip + static_cast<std::size_t>(ih) * si.w;
                for (std::size_t ow = lo; ow < hi; ++ow) dirow[ow * stride + kw - 1] += w * drow[ow];
              }
            }
            dwp[kh * 3 + kw] += acc;
          }
        }
      }
    }
  }
}

template <class T>
bool all_finite(const std::vector<T>& v) {
  return std::all_of(v.begin(), v.end(), [](T x) { return std::isfinite(x); });
}

template <class T>
void check_finite(const Gradients<T>& grads) {
  for (const auto& g : grads) {
    if (!all_finite(g)) throw Error(ErrorCode::Diverged, "non-finite gradient");
  }
}

template <class T>
void check_params(const BasicModelParams<T>& p, const Graph& g) {
  if (p.params.size() != g.params.size() || p.buffers.size() != g.buffers.size()) {
    throw Error(ErrorCode::ShapeError, "parameter set does not match the model configuration");
  }
  for (std::size_t i = 0; i < g.params.size(); ++i) {
    const auto n = std::accumulate(g.params[i].shape.begin(), g.params[i].shape.end(), std::size_t{1},
                                   std::multiplies<>());
    if (p.params[i].value.size() != n || p.params[i].velocity.size() != n) {
      throw Error(ErrorCode::ShapeError, "parameter " + g.params[i].name + " has the wrong size");
    }
  }
}

}  // namespace

void ModelConfig::validate() const {
  if (channels != 2) throw Error(ErrorCode::InvalidArgument, "model input must have 2 channels");
  if (class_count < 2) throw Error(ErrorCode::InvalidArgument, "class_count must be >= 2");
  if (block_channels.empty()) throw Error(ErrorCode::InvalidArgument, "block list must be nonempty");
  if (height < 1 || width < 1 || stem_channels < 1) throw Error(ErrorCode::InvalidArgument, "bad model dims");
  for (auto c : block_channels) {
    if (c < 1) throw Error(ErrorCode::InvalidArgument, "block channels must be >= 1");
  }
  if (!(init_gain > 0.0) || !std::isfinite(init_gain)) throw Error(ErrorCode::InvalidArgument, "init_gain must be positive");
}

void TrainConfig::validate() const {
  if (!(learning_rate > 0.0)) throw Error(ErrorCode::InvalidArgument, "learning_rate must be > 0");
  if (!(momentum >= 0.0 && momentum < 1.0)) throw Error(ErrorCode::InvalidArgument, "momentum must be in [0, 1)");
  if (epochs < 1) throw Error(ErrorCode::InvalidArgument, "epochs must be >= 1");
  if (batch_size < 1) throw Error(ErrorCode::InvalidArgument, "batch_size must be >= 1");
}

template <class T>
Param<T>& BasicModelParams<T>::param(std::string_view name) {
  for (auto& p : params) {
    if (p.name == name) return p;
  }
  throw Error(ErrorCode::InvalidArgument, "no parameter named " + std::string(name));
}

template <class T>
const Param<T>& BasicModelParams<T>::param(std::string_view name) const {
  return const_cast<BasicModelParams<T>*>(this)->param(name);
}

template <class T>
BasicModelParams<T> init_params(const ModelConfig& cfg) {
  cfg.validate();
  const Graph g = build_graph(cfg);
  BasicModelParams<T> p;
  p.config = cfg;
  Rng rng(cfg.init_seed);
  for (const auto& spec : g.params) {
    const auto n = std::accumulate(spec.shape.begin(), spec.shape.end(), std::size_t{1}, std::multiplies<>());
    Param<T> param{spec.name, spec.shape, std::vector<T>(n, T(0)), std::vector<T>(n, T(0))};
    if (spec.init == Init::Ones) std::fill(param.value.begin(), param.value.end(), T(1));
    if (spec.init == Init::HeNormal) {
      std::normal_distribution<double> dist(0.0, cfg.init_gain * std::sqrt(2.0 / static_cast<double>(spec.fan_in)));
      for (auto& v : param.value) v = static_cast<T>(dist(rng));
    }
    p.params.push_back(std::move(param));
  }
  for (const auto& [name, channels] : g.buffers) {
    const bool is_var = name.ends_with("running_var");
    p.buffers.push_back({name, std::vector<T>(channels, is_var ? T(1) : T(0))});
  }
  return p;
}

template <class To, class From>
BasicModelParams<To> convert_params(const BasicModelParams<From>& p) {
  BasicModelParams<To> out;
  out.config = p.config;
  out.class_names = p.class_names;
  for (const auto& q : p.params) {
    out.params.push_back({q.name, q.shape, std::vector<To>(q.value.begin(), q.value.end()),
                          std::vector<To>(q.velocity.begin(), q.velocity.end())});
  }
  for (const auto& b : p.buffers) out.buffers.push_back({b.name, std::vector<To>(b.value.begin(), b.value.end())});
  return out;
}

template <class T>
ForwardResult<T> forward(const BasicModelParams<T>& params, std::span<const T> input, std::size_t batch,
                         Mode mode) {
  const Graph g = build_graph(params.config);
  check_params(params, g);
  if (batch == 0 || input.size() != batch * g.shapes[0].size()) {
    throw Error(ErrorCode::ShapeError, "input of " + std::to_string(input.size()) + " values does not match " +
                                           std::to_string(batch) + " samples of " +
                                           std::to_string(g.shapes[0].c) + "x" + std::to_string(g.shapes[0].h) +
                                           "x" + std::to_string(g.shapes[0].w));
  }

  ForwardResult<T> r;
  r.batch = batch;
  r.classes = params.config.class_count;
  auto& tensors = r.cache.tensors;
  tensors.resize(g.shapes.size());
  tensors[0].assign(input.begin(), input.end());
  r.cache.bn_mean.resize(g.n_bn);
  r.cache.bn_var.resize(g.n_bn);
  r.cache.bn_inv_std.resize(g.n_bn);

  for (const Op& op : g.ops) {
    const Shape& si = g.shapes[op.in];
    const Shape& so = g.shapes[op.out];
    auto& out = tensors[op.out];
    out.resize(batch * so.size());
    const auto& in = tensors[op.in];
    switch (op.kind) {
      case OpKind::Conv:
        conv_forward(in.data(), params.params[op.weight].value.data(), out.data(), batch, si, so, op.stride);
        break;
      case OpKind::BatchNorm: {
        const std::size_t plane = si.h * si.w;
        const auto count = static_cast<T>(batch * plane);
        auto& mean = r.cache.bn_mean[op.bn];
        auto& var = r.cache.bn_var[op.bn];
        auto& inv = r.cache.bn_inv_std[op.bn];
        mean.assign(si.c, T(0));
        var.assign(si.c, T(0));
        inv.assign(si.c, T(0));
        for (std::size_t c = 0; c < si.c; ++c) {
          if (mode == Mode::Train) {
            T s = 0;
            for (std::size_t n = 0; n < batch; ++n) {
              const T* x = in.data() + (n * si.c + c) * plane;
              for (std::size_t k = 0; k < plane; ++k) s += x[k];
            }
            const T mu = s / count;
            T v = 0;
            for (std::size_t n = 0; n < batch; ++n) {
              const T* x = in.data() + (n * si.c + c) * plane;
              for (std::size_t k = 0; k < plane; ++k) v += (x[k] - mu) * (x[k] - mu);
            }
            mean[c] = mu;
            var[c] = v / count;
          } else {
            mean[c] = params.buffers[op.mean_buf].value[c];
            var[c] = params.buffers[op.var_buf].value[c];
          }
          inv[c] = T(1) / std::sqrt(var[c] + static_cast<T>(kBatchNormEps));
          const T gamma = params.params[op.weight].value[c];
          const T beta = params.params[op.bias].value[c];
          for (std::size_t n = 0; n < batch; ++n) {
            const T* x = in.data() + (n * si.c + c) * plane;
            T* y = out.data() + (n * si.c + c) * plane;
            for (std::size_t k = 0; k < plane; ++k) y[k] = gamma * (x[k] - mean[c]) * inv[c] + beta;
          }
        }
        break;
      }
      case OpKind::Relu:
        for (std::size_t k = 0; k < out.size(); ++k) out[k] = in[k] > T(0) ? in[k] : T(0);
        break;
      case OpKind::Add: {
        const auto& b = tensors[op.in2];
        for (std::size_t k = 0; k < out.size(); ++k) out[k] = in[k] + b[k];
        break;
      }
    }
  }

  const Shape& sf = g.shapes[g.features];
  const std::size_t plane = sf.h * sf.w;
  const auto& ft = tensors[g.features];
  auto& feat = r.cache.features;
  feat.assign(batch * sf.c, T(0));
  for (std::size_t n = 0; n < batch; ++n) {
    for (std::size_t c = 0; c < sf.c; ++c) {
      const T* x = ft.data() + (n * sf.c + c) * plane;
      T s = 0;
      for (std::size_t k = 0; k < plane; ++k) s += x[k];
      feat[n * sf.c + c] = s / static_cast<T>(plane);
    }
  }
  const auto& w = params.params[g.head_weight].value;
  const auto& bias = params.params[g.head_bias].value;
  r.logits.assign(batch * r.classes, T(0));
  for (std::size_t n = 0; n < batch; ++n) {
    for (std::size_t k = 0; k < r.classes; ++k) {
      T s = bias[k];
      for (std::size_t c = 0; c < sf.c; ++c) s += w[k * sf.c + c] * feat[n * sf.c + c];
      r.logits[n * r.classes + k] = s;
    }
  }
  return r;
}

template <class T>
std::vector<T> softmax(std::span<const T> logits, std::size_t classes) {
  std::vector<T> p(logits.size());
  for (std::size_t n = 0; n * classes < logits.size(); ++n) {
    const T* z = logits.data() + n * classes;
    const T m = *std::max_element(z, z + classes);
    T s = 0;
    for (std::size_t k = 0; k < classes; ++k) s += (p[n * classes + k] = std::exp(z[k] - m));
    for (std::size_t k = 0; k < classes; ++k) p[n * classes + k] /= s;
  }
  return p;
}

template <class T>
SoftmaxLoss<T> softmax_cross_entropy(std::span<const T> logits, std::size_t classes, std::span<const int> labels) {
  const std::size_t batch = labels.size();
  if (logits.size() != batch * classes) throw Error(ErrorCode::ShapeError, "logits/labels size mismatch");
  SoftmaxLoss<T> out{T(0), softmax(logits, classes)};
  for (std::size_t n = 0; n < batch; ++n) {
    if (labels[n] < 0 || static_cast<std::size_t>(labels[n]) >= classes) {
      throw Error(ErrorCode::BadLabel, "label " + std::to_string(labels[n]) + " out of range");
    }
    const T* z = logits.data() + n * classes;
    const T m = *std::max_element(z, z + classes);
    T s = 0;
    for (std::size_t k = 0; k < classes; ++k) s += std::exp(z[k] - m);
    out.loss += std::log(s) + m - z[labels[n]];
    out.dlogits[n * classes + static_cast<std::size_t>(labels[n])] -= T(1);
  }
  out.loss /= static_cast<T>(batch);
  for (auto& d : out.dlogits) d /= static_cast<T>(batch);
  return out;
}

template <class T>
LossAndGrad<T> loss_and_grad(const BasicModelParams<T>& params, std::span<const T> input, std::size_t batch,
                             std::span<const int> labels) {
  if (labels.size() != batch) throw Error(ErrorCode::ShapeError, "label count does not match batch");
  const Graph g = build_graph(params.config);
  LossAndGrad<T> r{T(0), {}, forward(params, input, batch, Mode::Train)};
  const auto& fw = r.forward;
  const auto sl = softmax_cross_entropy<T>(fw.logits, fw.classes, labels);
  r.loss = sl.loss;

  r.grads.resize(params.params.size());
  for (std::size_t i = 0; i < params.params.size(); ++i) r.grads[i].assign(params.params[i].value.size(), T(0));

  const auto& tensors = fw.cache.tensors;
  std::vector<std::vector<T>> dt(tensors.size());

  // Head and global average pooling.
  const Shape& sf = g.shapes[g.features];
  const std::size_t plane = sf.h * sf.w;
  const auto& w = params.params[g.head_weight].value;
  auto& dw = r.grads[g.head_weight];
  auto& db = r.grads[g.head_bias];
  auto& dft = dt[g.features];
  dft.assign(batch * sf.size(), T(0));
  for (std::size_t n = 0; n < batch; ++n) {
    for (std::size_t k = 0; k < fw.classes; ++k) {
      const T d = sl.dlogits[n * fw.classes + k];
      db[k] += d;
      for (std::size_t c = 0; c < sf.c; ++c) dw[k * sf.c + c] += d * fw.cache.features[n * sf.c + c];
    }
    for (std::size_t c = 0; c < sf.c; ++c) {
      T dfeat = 0;
      for (std::size_t k = 0; k < fw.classes; ++k) dfeat += sl.dlogits[n * fw.classes + k] * w[k * sf.c + c];
      T* d = dft.data() + (n * sf.c + c) * plane;
      std::fill(d, d + plane, dfeat / static_cast<T>(plane));
    }
  }

  auto grad_of = [&](std::size_t t) -> std::vector<T>& {
    if (dt[t].empty()) dt[t].assign(tensors[t].size(), T(0));
    return dt[t];
  };

  for (auto it = g.ops.rbegin(); it != g.ops.rend(); ++it) {
    const Op& op = *it;
    if (dt[op.out].empty()) continue;
    const auto& dout = dt[op.out];
    const Shape& si = g.shapes[op.in];
    const Shape& so = g.shapes[op.out];
    switch (op.kind) {
      case OpKind::Conv: {
        T* din = op.in == 0 ? nullptr : grad_of(op.in).data();
        conv_backward(tensors[op.in].data(), params.params[op.weight].value.data(), dout.data(), din,
                      r.grads[op.weight].data(), batch, si, so, op.stride);
        break;
      }
      case OpKind::BatchNorm: {
        const std::size_t pl = si.h * si.w;
        const auto count = static_cast<T>(batch * pl);
        auto& din = grad_of(op.in);
        const auto& x = tensors[op.in];
        for (std::size_t c = 0; c < si.c; ++c) {
          const T mu = fw.cache.bn_mean[op.bn][c];
          const T inv = fw.cache.bn_inv_std[op.bn][c];
          const T gamma = params.params[op.weight].value[c];
          T sum_dy = 0;
          T sum_dy_xhat = 0;
          for (std::size_t n = 0; n < batch; ++n) {
            const std::size_t base = (n * si.c + c) * pl;
            for (std::size_t k = 0; k < pl; ++k) {
              sum_dy += dout[base + k];
              sum_dy_xhat += dout[base + k] * (x[base + k] - mu) * inv;
            }
          }
          r.grads[op.weight][c] += sum_dy_xhat;
          r.grads[op.bias][c] += sum_dy;
          const T scale = gamma * inv / count;
          for (std::size_t n = 0; n < batch; ++n) {
            const std::size_t base = (n * si.c + c) * pl;
            for (std::size_t k = 0; k < pl; ++k) {
              const T xhat = (x[base + k] - mu) * inv;
              din[base + k] += scale * (count * dout[base + k] - sum_dy - xhat * sum_dy_xhat);
            }
          }
        }
        break;
      }
      case OpKind::Relu: {
        auto& din = grad_of(op.in);
        const auto& y = tensors[op.out];
        for (std::size_t k = 0; k < din.size(); ++k) {
          if (y[k] > T(0)) din[k] += dout[k];
        }
        break;
      }
      case OpKind::Add: {
        auto& da = grad_of(op.in);
        for (std::size_t k = 0; k < da.size(); ++k) da[k] += dout[k];
        auto& dbb = grad_of(op.in2);
        for (std::size_t k = 0; k < dbb.size(); ++k) dbb[k] += dout[k];
        break;
      }
    }
  }
  return r;
}

template <class T>
void sgdm_step(BasicModelParams<T>& params, const Gradients<T>& grads, const TrainConfig& cfg) {
  if (grads.size() != params.params.size()) throw Error(ErrorCode::ShapeError, "gradient count mismatch");
  for (std::size_t i = 0; i < grads.size(); ++i) {
    if (grads[i].size() != params.params[i].value.size()) {
      throw Error(ErrorCode::ShapeError, "gradient shape mismatch for " + params.params[i].name);
    }
  }
  check_finite(grads);
  const auto mu = static_cast<T>(cfg.momentum);
  const auto lr = static_cast<T>(cfg.learning_rate);
  for (std::size_t i = 0; i < grads.size(); ++i) {
    auto& p = params.params[i];
    for (std::size_t k = 0; k < p.value.size(); ++k) {
      p.velocity[k] = mu * p.velocity[k] + grads[i][k];
      p.value[k] -= lr * p.velocity[k];
    }
    if (!all_finite(p.value)) throw Error(ErrorCode::Diverged, "non-finite parameter after update");
  }
}

template <class T>
void update_running_stats(BasicModelParams<T>& params, const ForwardCache<T>& cache) {
  const Graph g = build_graph(params.config);
  const auto m = static_cast<T>(kRunningStatMomentum);
  const std::size_t batch = cache.tensors.empty() ? 0 : cache.tensors[0].size() / g.shapes[0].size();
  for (const Op& op : g.ops) {
    if (op.kind != OpKind::BatchNorm) continue;
    const Shape& s = g.shapes[op.in];
    const double count = static_cast<double>(batch * s.h * s.w);
    // Running variance uses the unbiased estimate.
    const T unbias = count > 1 ? static_cast<T>(count / (count - 1)) : T(1);
    auto& rm = params.buffers[op.mean_buf].value;
    auto& rv = params.buffers[op.var_buf].value;
    for (std::size_t c = 0; c < s.c; ++c) {
      rm[c] = (T(1) - m) * rm[c] + m * cache.bn_mean[op.bn][c];
      rv[c] = (T(1) - m) * rv[c] + m * cache.bn_var[op.bn][c] * unbias;
    }
  }
}

std::size_t planned_steps(std::size_t n, const TrainConfig& cfg) noexcept {
  return cfg.epochs * ((n + cfg.batch_size - 1) / cfg.batch_size);
}

namespace {

void check_compatible(const ModelConfig& cfg, const std::vector<std::string>& model_classes,
                      const DatasetContainer& data) {
  if (cfg.class_count != data.class_names.size()) {
    throw Error(ErrorCode::ShapeError, "model has " + std::to_string(cfg.class_count) + " classes but the dataset has " +
                                           std::to_string(data.class_names.size()));
  }
  if (!model_classes.empty() && model_classes != data.class_names) {
    throw Error(ErrorCode::ShapeError, "model and dataset class tables differ");
  }
  if (cfg.height != data.height || cfg.width != data.width) {
    throw Error(ErrorCode::ShapeError, "model input " + std::to_string(cfg.height) + "x" + std::to_string(cfg.width) +
                                           " does not match dataset tensors " + std::to_string(data.height) + "x" +
                                           std::to_string(data.width));
  }
}

double split_accuracy(const ModelParams& params, const DatasetContainer& data, Split split) {
  auto stream = iterate(data, split, 64, 0);
  std::size_t hits = 0;
  std::size_t total = 0;
  while (auto b = stream.next()) {
    const auto pred = predict(params, *b);
    for (std::size_t i = 0; i < b->size; ++i) hits += pred[i] == b->labels[i];
    total += b->size;
  }
  return total ? static_cast<double>(hits) / static_cast<double>(total) : 0.0;
}

}  // namespace

namespace {

/// Replaces the running statistics with their average over one pass of the
/// training split under the final weights.
void refresh_running_stats(ModelParams& params, const DatasetContainer& data, std::size_t batch_size) {
  const Graph g = build_graph(params.config);
  std::vector<std::vector<double>> mean(params.buffers.size()), var(params.buffers.size());
  std::size_t batches = 0;
  auto stream = iterate(data, Split::Train, batch_size, 0);
  while (auto b = stream.next()) {
    const auto fw = forward<float>(params, b->pixels, b->size, Mode::Train);
    for (const Op& op : g.ops) {
      if (op.kind != OpKind::BatchNorm) continue;
      const Shape& s = g.shapes[op.in];
      const double count = static_cast<double>(b->size * s.h * s.w);
      const double unbias = count > 1 ? count / (count - 1) : 1.0;
      mean[op.mean_buf].resize(s.c, 0.0);
      var[op.var_buf].resize(s.c, 0.0);
      for (std::size_t c = 0; c < s.c; ++c) {
        mean[op.mean_buf][c] += fw.cache.bn_mean[op.bn][c];
        var[op.var_buf][c] += fw.cache.bn_var[op.bn][c] * unbias;
      }
    }
    ++batches;
  }
  for (const Op& op : g.ops) {
    if (op.kind != OpKind::BatchNorm) continue;
    for (std::size_t c = 0; c < mean[op.mean_buf].size(); ++c) {
      params.buffers[op.mean_buf].value[c] = static_cast<float>(mean[op.mean_buf][c] / static_cast<double>(batches));
      params.buffers[op.var_buf].value[c] = static_cast<float>(var[op.var_buf][c] / static_cast<double>(batches));
    }
  }
}

}  // namespace

TrainResult train(const ModelConfig& model_cfg, const TrainConfig& train_cfg, const DatasetContainer& data,
                  const EpochCallback& on_epoch) {
  model_cfg.validate();
  train_cfg.validate();
  check_compatible(model_cfg, {}, data);

  TrainResult result;
  result.params = init_params<float>(model_cfg);
  result.params.class_names = data.class_names;
  const bool has_val = data.manifest && !data.manifest->val.empty();

  for (std::size_t epoch = 0; epoch < train_cfg.epochs; ++epoch) {
    auto stream = iterate(data, Split::Train, train_cfg.batch_size, derive_seed(train_cfg.shuffle_seed, epoch));
    double loss_sum = 0.0;
    std::size_t seen = 0;
    while (auto batch = stream.next()) {
      auto lg = loss_and_grad<float>(result.params, batch->pixels, batch->size, batch->labels);
      if (!std::isfinite(lg.loss)) {
        throw TrainingDiverged("non-finite loss at epoch " + std::to_string(epoch + 1), result.metrics);
      }
      try {
        sgdm_step(result.params, lg.grads, train_cfg);
      } catch (const Error& e) {
        if (e.code() != ErrorCode::Diverged) throw;
        const std::string what = e.what();
        const std::string prefix = std::string(error_code_name(ErrorCode::Diverged)) + ": ";
        const std::string detail = what.starts_with(prefix) ? what.substr(prefix.size()) : what;
        throw TrainingDiverged(detail + " at epoch " + std::to_string(epoch + 1), result.metrics);
      }
      update_running_stats(result.params, lg.forward.cache);
      loss_sum += static_cast<double>(lg.loss) * static_cast<double>(batch->size);
      seen += batch->size;
      ++result.steps;
    }
    if (epoch + 1 == train_cfg.epochs) refresh_running_stats(result.params, data, train_cfg.batch_size);
    EpochMetrics m;
    m.epoch = epoch + 1;
    m.train_loss = loss_sum / static_cast<double>(seen);
    m.val_accuracy = (train_cfg.eval_each_epoch || epoch + 1 == train_cfg.epochs) && has_val
                         ? split_accuracy(result.params, data, Split::Val)
                         : 0.0;
    result.metrics.push_back(m);
    if (on_epoch) on_epoch(m);
  }
  return result;
}

std::vector<int> predict(const ModelParams& params, const Batch& batch) {
  const auto fw = forward<float>(params, batch.pixels, batch.size, Mode::Eval);
  std::vector<int> out(batch.size);
  for (std::size_t n = 0; n < batch.size; ++n) {
    const auto* z = fw.logits.data() + n * fw.classes;
    out[n] = static_cast<int>(std::max_element(z, z + fw.classes) - z);
  }
  return out;
}

AccuracyTable Evaluation::table() const {
  AccuracyTable t;
  for (const auto& m : per_snr) {
    if (m.total() == 0) continue;
    t.rows.push_back({std::stod(m.tag()), m.accuracy(), m.total()});
  }
  return t;
}

Evaluation evaluate(const ModelParams& params, const DatasetContainer& data, Split split) {
  check_compatible(params.config, params.class_names, data);
  Evaluation ev;
  ev.pooled = ConfusionMatrix(data.class_names, "pooled");
  for (double snr : data.snr_table_db) {
    char tag[32];
    std::snprintf(tag, sizeof tag, "%g", snr);
    ev.per_snr.emplace_back(data.class_names, tag);
  }
  auto stream = iterate(data, split, 64, 0);
  while (auto b = stream.next()) {
    const auto pred = predict(params, *b);
    for (std::size_t i = 0; i < b->size; ++i) {
      const auto t = static_cast<std::size_t>(b->labels[i]);
      const auto p = static_cast<std::size_t>(pred[i]);
      ev.per_snr[b->snr_indices[i]].accumulate(t, p);
      ev.pooled.accumulate(t, p);
    }
  }
  ev.accuracy = ev.pooled.accuracy();
  return ev;
}

namespace {

constexpr char kCheckpointMagic[8] = {'E', 'Y', 'E', 'N', 'E', 'T', '1', '\n'};
constexpr std::uint32_t kCheckpointVersion = 1;

void put_u32(std::string& s, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) s.push_back(static_cast<char>(v >> (8 * i)));
}
void put_u64(std::string& s, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) s.push_back(static_cast<char>(v >> (8 * i)));
}
void put_str(std::string& s, const std::string& v) {
  put_u32(s, static_cast<std::uint32_t>(v.size()));
  s += v;
}
void put_floats(std::string& s, const std::vector<float>& v) {
  put_u32(s, static_cast<std::uint32_t>(v.size()));
  for (float f : v) put_u32(s, std::bit_cast<std::uint32_t>(f));
}

struct Cursor {
  const std::string& buf;
  std::size_t pos = 0;
  void need(std::size_t n) {
    if (buf.size() - pos < n) throw Error(ErrorCode::Corrupt, "checkpoint is truncated");
  }
  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(static_cast<unsigned char>(buf[pos++])) << (8 * i);
    return v;
  }
  std::uint64_t u64() {
    const std::uint64_t lo = u32();
    return lo | (static_cast<std::uint64_t>(u32()) << 32);
  }
  std::string str() {
    const auto n = u32();
    need(n);
    std::string s = buf.substr(pos, n);
    pos += n;
    return s;
  }
  std::vector<float> floats() {
    const auto n = u32();
    need(static_cast<std::size_t>(n) * 4);
    std::vector<float> v(n);
    for (auto& f : v) f = std::bit_cast<float>(u32());
    return v;
  }
};

}  // namespace

void save_checkpoint(const ModelParams& p, const std::filesystem::path& path) {
  std::string s(kCheckpointMagic, sizeof kCheckpointMagic);
  put_u32(s, kCheckpointVersion);
  const auto& c = p.config;
  put_u32(s, static_cast<std::uint32_t>(c.height));
  put_u32(s, static_cast<std::uint32_t>(c.width));
  put_u32(s, static_cast<std::uint32_t>(c.channels));
  put_u32(s, static_cast<std::uint32_t>(c.class_count));
  put_u32(s, static_cast<std::uint32_t>(c.stem_channels));
  put_u32(s, static_cast<std::uint32_t>(c.block_channels.size()));
  for (auto b : c.block_channels) put_u32(s, static_cast<std::uint32_t>(b));
  put_u32(s, c.residual ? 1 : 0);
  put_u64(s, c.init_seed);
  put_u64(s, std::bit_cast<std::uint64_t>(c.init_gain));
  put_u32(s, static_cast<std::uint32_t>(p.class_names.size()));
  for (const auto& n : p.class_names) put_str(s, n);
  put_u32(s, static_cast<std::uint32_t>(p.params.size()));
  for (const auto& q : p.params) {
    put_str(s, q.name);
    put_u32(s, static_cast<std::uint32_t>(q.shape.size()));
    for (auto d : q.shape) put_u32(s, static_cast<std::uint32_t>(d));
    put_floats(s, q.value);
    put_floats(s, q.velocity);
  }
  put_u32(s, static_cast<std::uint32_t>(p.buffers.size()));
  for (const auto& b : p.buffers) {
    put_str(s, b.name);
    put_floats(s, b.value);
  }
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorCode::Io, "cannot create " + path.string());
  out.write(s.data(), static_cast<std::streamsize>(s.size()));
  if (!out) throw Error(ErrorCode::Io, "write failed for " + path.string());
}

ModelParams load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::Io, "cannot open " + path.string());
  const std::string buf{std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
  if (buf.size() < sizeof kCheckpointMagic || std::memcmp(buf.data(), kCheckpointMagic, sizeof kCheckpointMagic) != 0) {
    throw Error(ErrorCode::NotADataset, path.string() + " is not a model checkpoint");
  }
  Cursor cur{buf, sizeof kCheckpointMagic};
  if (cur.u32() != kCheckpointVersion) throw Error(ErrorCode::UnsupportedVersion, "checkpoint version");
  ModelParams p;
  auto& c = p.config;
  c.height = cur.u32();
  c.width = cur.u32();
  c.channels = cur.u32();
  c.class_count = cur.u32();
  c.stem_channels = cur.u32();
  c.block_channels.resize(cur.u32());
  for (auto& b : c.block_channels) b = cur.u32();
  c.residual = cur.u32() != 0;
  c.init_seed = cur.u64();
  c.init_gain = std::bit_cast<double>(cur.u64());
  c.validate();
  p.class_names.resize(cur.u32());
  for (auto& n : p.class_names) n = cur.str();
  p.params.resize(cur.u32());
  for (auto& q : p.params) {
    q.name = cur.str();
    q.shape.resize(cur.u32());
    for (auto& d : q.shape) d = cur.u32();
    q.value = cur.floats();
    q.velocity = cur.floats();
  }
  p.buffers.resize(cur.u32());
  for (auto& b : p.buffers) {
    b.name = cur.str();
    b.value = cur.floats();
  }
  if (cur.pos != buf.size()) throw Error(ErrorCode::Corrupt, "trailing bytes in checkpoint");
  const Graph g = build_graph(p.config);
  check_params(p, g);
  for (std::size_t i = 0; i < g.params.size(); ++i) {
    if (p.params[i].name != g.params[i].name || p.params[i].shape != g.params[i].shape) {
      throw Error(ErrorCode::Corrupt, "checkpoint array " + p.params[i].name + " does not match the config");
    }
  }
  return p;
}

#define EYEMOD_INSTANTIATE(T)                                                                          \
  template struct BasicModelParams<T>;                                                                 \
  template BasicModelParams<T> init_params<T>(const ModelConfig&);                                     \
  template ForwardResult<T> forward<T>(const BasicModelParams<T>&, std::span<const T>, std::size_t, Mode); \
  template std::vector<T> softmax<T>(std::span<const T>, std::size_t);                                 \
  template SoftmaxLoss<T> softmax_cross_entropy<T>(std::span<const T>, std::size_t, std::span<const int>); \
  template LossAndGrad<T> loss_and_grad<T>(const BasicModelParams<T>&, std::span<const T>, std::size_t, \
                                           std::span<const int>);                                      \
  template void sgdm_step<T>(BasicModelParams<T>&, const Gradients<T>&, const TrainConfig&);          \
  template void update_running_stats<T>(BasicModelParams<T>&, const ForwardCache<T>&);

EYEMOD_INSTANTIATE(float)
EYEMOD_INSTANTIATE(double)
#undef EYEMOD_INSTANTIATE

template BasicModelParams<double> convert_params<double, float>(const BasicModelParams<float>&);
template BasicModelParams<float> convert_params<float, double>(const BasicModelParams<double>&);

}  // namespace eyemod
