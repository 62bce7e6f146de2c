#include <algorithm>
#include <cmath>
#include <string>

#include "rma/tape.hpp"

namespace rma {
namespace {

void require(bool ok, OpKind kind, const std::string& what) {
  if (!ok) throw ShapeError(std::string(op_name(kind)) + ": " + what);
}

void require_arity(OpKind kind, std::span<const Tensor* const> in, std::size_t n) {
  require(in.size() == n, kind,
          "expected " + std::to_string(n) + " inputs, got " + std::to_string(in.size()));
}

struct ConvDims {
  std::size_t c, h, w, o, kh, kw, oh, ow, stride;
};

ConvDims conv_dims(const Tensor& x, const Tensor& wt, const Tensor& b, std::size_t stride) {
  constexpr auto k = OpKind::kConv2d;
  require(x.rank() == 3, k, "input must be (c,h,w), got " + shape_string(x.shape()));
  require(wt.rank() == 4, k, "weight must be (o,c,kh,kw), got " + shape_string(wt.shape()));
  require(b.rank() == 1 && b.dim(0) == wt.dim(0), k,
          "bias " + shape_string(b.shape()) + " does not match weight " +
              shape_string(wt.shape()));
  require(wt.dim(1) == x.dim(0), k,
          "channel mismatch: input " + shape_string(x.shape()) + ", weight " +
              shape_string(wt.shape()));
  require(stride >= 1, k, "stride must be >= 1");
  ConvDims d{x.dim(0), x.dim(1), x.dim(2), wt.dim(0), wt.dim(2), wt.dim(3), 0, 0, stride};
  require(d.kh <= d.h && d.kw <= d.w, k, "kernel larger than input");
  d.oh = (d.h - d.kh) / stride + 1;
  d.ow = (d.w - d.kw) / stride + 1;
  return d;
}

Tensor conv2d_forward(const Tensor& x, const Tensor& wt, const Tensor& b, std::size_t stride) {
  const auto d = conv_dims(x, wt, b, stride);
  std::vector<double> out(d.o * d.oh * d.ow);
  const double* in = x.data().data();
  const double* w = wt.data().data();
  for (std::size_t o = 0; o < d.o; ++o) {
    double* out_o = out.data() + o * d.oh * d.ow;
    std::fill(out_o, out_o + d.oh * d.ow, b[o]);
    for (std::size_t c = 0; c < d.c; ++c) {
      const double* in_c = in + c * d.h * d.w;
      for (std::size_t ky = 0; ky < d.kh; ++ky) {
        for (std::size_t kx = 0; kx < d.kw; ++kx) {
          const double wv = w[((o * d.c + c) * d.kh + ky) * d.kw + kx];
          for (std::size_t oy = 0; oy < d.oh; ++oy) {
            const double* row = in_c + (oy * d.stride + ky) * d.w + kx;
            double* orow = out_o + oy * d.ow;
            if (d.stride == 1) {
              for (std::size_t ox = 0; ox < d.ow; ++ox) orow[ox] += wv * row[ox];
            } else {
              for (std::size_t ox = 0; ox < d.ow; ++ox) orow[ox] += wv * row[ox * d.stride];
            }
          }
        }
      }
    }
  }
  return Tensor({d.o, d.oh, d.ow}, std::move(out));
}

void conv2d_backward(const Tensor& x, const Tensor& wt, const Tensor& b, std::size_t stride,
                     const Tensor& g, const std::vector<bool>& need,
                     std::vector<Tensor>& grads) {
  const auto d = conv_dims(x, wt, b, stride);
  const double* in = x.data().data();
  const double* w = wt.data().data();
  const double* go = g.data().data();
  std::vector<double> dx(need[0] ? x.size() : 0, 0.0);
  std::vector<double> dw(need[1] ? wt.size() : 0, 0.0);
  for (std::size_t o = 0; o < d.o; ++o) {
    const double* g_o = go + o * d.oh * d.ow;
    for (std::size_t c = 0; c < d.c; ++c) {
      const double* in_c = in + c * d.h * d.w;
      for (std::size_t ky = 0; ky < d.kh; ++ky) {
        for (std::size_t kx = 0; kx < d.kw; ++kx) {
          const std::size_t widx = ((o * d.c + c) * d.kh + ky) * d.kw + kx;
          const double wv = w[widx];
          double acc = 0.0;
          for (std::size_t oy = 0; oy < d.oh; ++oy) {
            const std::size_t base = c * d.h * d.w + (oy * d.stride + ky) * d.w + kx;
            const double* grow = g_o + oy * d.ow;
            if (need[0]) {
              double* dxrow = dx.data() + base;
              for (std::size_t ox = 0; ox < d.ow; ++ox) dxrow[ox * d.stride] += wv * grow[ox];
            }
            if (need[1]) {
              const double* row = in_c + (oy * d.stride + ky) * d.w + kx;
              for (std::size_t ox = 0; ox < d.ow; ++ox) acc += row[ox * d.stride] * grow[ox];
            }
          }
          if (need[1]) dw[widx] = acc;
        }
      }
    }
  }
  if (need[0]) grads[0] = Tensor(x.shape(), std::move(dx));
  if (need[1]) grads[1] = Tensor(wt.shape(), std::move(dw));
  if (need[2]) {
    std::vector<double> db(d.o, 0.0);
    for (std::size_t o = 0; o < d.o; ++o) {
      double s = 0.0;
      for (std::size_t i = 0; i < d.oh * d.ow; ++i) s += go[o * d.oh * d.ow + i];
      db[o] = s;
    }
    grads[2] = Tensor(b.shape(), std::move(db));
  }
}

struct MatDims {
  std::size_t m, k, n;
  bool vector_rhs;
};

MatDims matmul_dims(const Tensor& a, const Tensor& b) {
  constexpr auto kk = OpKind::kMatMul;
  require(a.rank() == 2, kk, "lhs must be rank 2, got " + shape_string(a.shape()));
  require(b.rank() == 1 || b.rank() == 2, kk,
          "rhs must be rank 1 or 2, got " + shape_string(b.shape()));
  require(a.dim(1) == b.dim(0), kk,
          "inner dimensions differ: " + shape_string(a.shape()) + " x " +
              shape_string(b.shape()));
  return {a.dim(0), a.dim(1), b.rank() == 2 ? b.dim(1) : 1, b.rank() == 1};
}

Tensor matmul_forward(const Tensor& a, const Tensor& b) {
  const auto d = matmul_dims(a, b);
  std::vector<double> out(d.m * d.n, 0.0);
  const double* pa = a.data().data();
  const double* pb = b.data().data();
  for (std::size_t i = 0; i < d.m; ++i) {
    double* orow = out.data() + i * d.n;
    for (std::size_t p = 0; p < d.k; ++p) {
      const double av = pa[i * d.k + p];
      const double* brow = pb + p * d.n;
      for (std::size_t j = 0; j < d.n; ++j) orow[j] += av * brow[j];
    }
  }
  Shape s = d.vector_rhs ? Shape{d.m} : Shape{d.m, d.n};
  return Tensor(std::move(s), std::move(out));
}

void same_shape(OpKind kind, const Tensor& a, const Tensor& b) {
  require(a.shape() == b.shape(), kind,
          "shape mismatch " + shape_string(a.shape()) + " vs " + shape_string(b.shape()));
}

double norm2(const Tensor& x) {
  double s = 0.0;
  for (double v : x.data()) s += v * v;
  return std::sqrt(s);
}

struct PoolDims {
  std::size_t c, h, w, win, oh, ow;
};

PoolDims pool_dims(const Tensor& x, std::size_t win) {
  constexpr auto k = OpKind::kAvgPool2d;
  require(x.rank() == 3, k, "input must be (c,h,w), got " + shape_string(x.shape()));
  require(win >= 1 && win <= x.dim(1) && win <= x.dim(2), k, "bad window");
  return {x.dim(0), x.dim(1), x.dim(2), win, x.dim(1) / win, x.dim(2) / win};
}

std::vector<double> softmax(const Tensor& logits) {
  const auto v = logits.data();
  const double mx = *std::max_element(v.begin(), v.end());
  std::vector<double> p(v.size());
  double z = 0.0;
  for (std::size_t i = 0; i < v.size(); ++i) {
    p[i] = std::exp(v[i] - mx);
    z += p[i];
  }
  for (auto& e : p) e /= z;
  return p;
}

}  // namespace

const char* op_name(OpKind kind) {
  switch (kind) {
    case OpKind::kLeaf: return "leaf";
    case OpKind::kMatMul: return "matmul";
    case OpKind::kConv2d: return "conv2d";
    case OpKind::kAdd: return "add";
    case OpKind::kSub: return "sub";
    case OpKind::kRelu: return "relu";
    case OpKind::kMean: return "mean";
    case OpKind::kSum: return "sum";
    case OpKind::kMulScalar: return "mul_scalar";
    case OpKind::kFlatten: return "flatten";
    case OpKind::kReshape: return "reshape";
    case OpKind::kL2Normalize: return "l2_normalize";
    case OpKind::kSqL2Norm: return "sq_l2_norm";
    case OpKind::kL2Norm: return "l2_norm";
    case OpKind::kAvgPool2d: return "avg_pool2d";
    case OpKind::kSoftmaxXent: return "softmax_cross_entropy";
    case OpKind::kSigmoidBce: return "sigmoid_bce";
  }
  return "unknown";
}

Tensor evaluate_op(OpKind kind, std::span<const Tensor* const> in, const OpParams& p) {
  switch (kind) {
    case OpKind::kLeaf:
      throw std::logic_error("evaluate_op called on a leaf");
    case OpKind::kMatMul:
      require_arity(kind, in, 2);
      return matmul_forward(*in[0], *in[1]);
    case OpKind::kConv2d:
      require_arity(kind, in, 3);
      return conv2d_forward(*in[0], *in[1], *in[2], p.stride);
    case OpKind::kAdd:
    case OpKind::kSub: {
      require_arity(kind, in, 2);
      same_shape(kind, *in[0], *in[1]);
      std::vector<double> out(in[0]->size());
      const double sgn = kind == OpKind::kAdd ? 1.0 : -1.0;
      for (std::size_t i = 0; i < out.size(); ++i) out[i] = (*in[0])[i] + sgn * (*in[1])[i];
      return Tensor(in[0]->shape(), std::move(out));
    }
    case OpKind::kRelu: {
      require_arity(kind, in, 1);
      std::vector<double> out(in[0]->size());
      for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::max((*in[0])[i], 0.0);
      return Tensor(in[0]->shape(), std::move(out));
    }
    case OpKind::kMean:
    case OpKind::kSum: {
      require_arity(kind, in, 1);
      double s = 0.0;
      for (double v : in[0]->data()) s += v;
      if (kind == OpKind::kMean) s /= static_cast<double>(in[0]->size());
      return Tensor::scalar(s);
    }
    case OpKind::kMulScalar: {
      require_arity(kind, in, 1);
      std::vector<double> out(in[0]->size());
      for (std::size_t i = 0; i < out.size(); ++i) out[i] = (*in[0])[i] * p.scalar;
      return Tensor(in[0]->shape(), std::move(out));
    }
    case OpKind::kFlatten:
      require_arity(kind, in, 1);
      return in[0]->flattened();
    case OpKind::kReshape:
      require_arity(kind, in, 1);
      return in[0]->reshaped(p.shape);
    case OpKind::kL2Normalize: {
      require_arity(kind, in, 1);
      const double n = norm2(*in[0]);
      if (!(n > kNormalizeEpsilon)) {
        throw SingularInputError("l2_normalize: input norm " + std::to_string(n) +
                                 " is not above 1e-12");
      }
      std::vector<double> out(in[0]->size());
      for (std::size_t i = 0; i < out.size(); ++i) out[i] = (*in[0])[i] / n;
      return Tensor(in[0]->shape(), std::move(out));
    }
    case OpKind::kSqL2Norm: {
      require_arity(kind, in, 1);
      double s = 0.0;
      for (double v : in[0]->data()) s += v * v;
      return Tensor::scalar(s);
    }
    case OpKind::kL2Norm:
      require_arity(kind, in, 1);
      return Tensor::scalar(norm2(*in[0]));
    case OpKind::kAvgPool2d: {
      require_arity(kind, in, 1);
      const auto d = pool_dims(*in[0], p.window);
      std::vector<double> out(d.c * d.oh * d.ow, 0.0);
      const double inv = 1.0 / static_cast<double>(d.win * d.win);
      const double* x = in[0]->data().data();
      for (std::size_t c = 0; c < d.c; ++c)
        for (std::size_t oy = 0; oy < d.oh; ++oy)
          for (std::size_t ox = 0; ox < d.ow; ++ox) {
            double s = 0.0;
            for (std::size_t dy = 0; dy < d.win; ++dy)
              for (std::size_t dx = 0; dx < d.win; ++dx)
                s += x[(c * d.h + oy * d.win + dy) * d.w + ox * d.win + dx];
            out[(c * d.oh + oy) * d.ow + ox] = s * inv;
          }
      return Tensor({d.c, d.oh, d.ow}, std::move(out));
    }
    case OpKind::kSoftmaxXent: {
      require_arity(kind, in, 1);
      require(in[0]->rank() == 1 && p.label < in[0]->size(), kind,
              "logits must be rank 1 and label in range");
      const auto v = in[0]->data();
      const double mx = *std::max_element(v.begin(), v.end());
      double z = 0.0;
      for (double e : v) z += std::exp(e - mx);
      return Tensor::scalar(std::log(z) + mx - v[p.label]);
    }
    case OpKind::kSigmoidBce: {
      require_arity(kind, in, 1);
      require(in[0]->size() == 1, kind, "logit must be a single element");
      const double z = (*in[0])[0];
      // softplus(z) - y*z, stable for large |z|
      const double sp = std::max(z, 0.0) + std::log1p(std::exp(-std::abs(z)));
      return Tensor::scalar(sp - p.scalar * z);
    }
  }
  throw std::logic_error("unhandled op kind");
}

std::vector<Tensor> differentiate_op(OpKind kind, std::span<const Tensor* const> in,
                                     const Tensor& out, const Tensor& g,
                                     const OpParams& p, const std::vector<bool>& need) {
  std::vector<Tensor> grads(in.size());
  switch (kind) {
    case OpKind::kLeaf:
      break;
    case OpKind::kMatMul: {
      const auto d = matmul_dims(*in[0], *in[1]);
      const double* pa = in[0]->data().data();
      const double* pb = in[1]->data().data();
      const double* pg = g.data().data();
      if (need[0]) {
        std::vector<double> da(d.m * d.k, 0.0);
        for (std::size_t i = 0; i < d.m; ++i)
          for (std::size_t q = 0; q < d.k; ++q) {
            double s = 0.0;
            for (std::size_t j = 0; j < d.n; ++j) s += pg[i * d.n + j] * pb[q * d.n + j];
            da[i * d.k + q] = s;
          }
        grads[0] = Tensor(in[0]->shape(), std::move(da));
      }
      if (need[1]) {
        std::vector<double> db(d.k * d.n, 0.0);
        for (std::size_t i = 0; i < d.m; ++i)
          for (std::size_t q = 0; q < d.k; ++q) {
            const double av = pa[i * d.k + q];
            for (std::size_t j = 0; j < d.n; ++j) db[q * d.n + j] += av * pg[i * d.n + j];
          }
        grads[1] = Tensor(in[1]->shape(), std::move(db));
      }
      break;
    }
    case OpKind::kConv2d:
      conv2d_backward(*in[0], *in[1], *in[2], p.stride, g, need, grads);
      break;
    case OpKind::kAdd:
      if (need[0]) grads[0] = g;
      if (need[1]) grads[1] = g;
      break;
    case OpKind::kSub:
      if (need[0]) grads[0] = g;
      if (need[1]) {
        std::vector<double> v(g.size());
        for (std::size_t i = 0; i < v.size(); ++i) v[i] = -g[i];
        grads[1] = Tensor(g.shape(), std::move(v));
      }
      break;
    case OpKind::kRelu: {
      std::vector<double> v(g.size());
      for (std::size_t i = 0; i < v.size(); ++i) v[i] = (*in[0])[i] > 0.0 ? g[i] : 0.0;
      grads[0] = Tensor(g.shape(), std::move(v));
      break;
    }
    case OpKind::kMean:
    case OpKind::kSum: {
      double scale = g.item();
      if (kind == OpKind::kMean) scale /= static_cast<double>(in[0]->size());
      grads[0] = Tensor::filled(in[0]->shape(), scale);
      break;
    }
    case OpKind::kMulScalar: {
      std::vector<double> v(g.size());
      for (std::size_t i = 0; i < v.size(); ++i) v[i] = g[i] * p.scalar;
      grads[0] = Tensor(in[0]->shape(), std::move(v));
      break;
    }
    case OpKind::kFlatten:
    case OpKind::kReshape:
      grads[0] = g.reshaped(in[0]->shape());
      break;
    case OpKind::kL2Normalize: {
      // d/dx (x/n) applied to g: (g - y (y.g)) / n
      const double n = norm2(*in[0]);
      double yg = 0.0;
      for (std::size_t i = 0; i < g.size(); ++i) yg += out[i] * g[i];
      std::vector<double> v(g.size());
      for (std::size_t i = 0; i < v.size(); ++i) v[i] = (g[i] - out[i] * yg) / n;
      grads[0] = Tensor(in[0]->shape(), std::move(v));
      break;
    }
    case OpKind::kSqL2Norm: {
      const double s = 2.0 * g.item();
      std::vector<double> v(in[0]->size());
      for (std::size_t i = 0; i < v.size(); ++i) v[i] = s * (*in[0])[i];
      grads[0] = Tensor(in[0]->shape(), std::move(v));
      break;
    }
    case OpKind::kL2Norm: {
      const double n = out.item();
      std::vector<double> v(in[0]->size(), 0.0);
      if (n > 0.0) {
        const double s = g.item() / n;
        for (std::size_t i = 0; i < v.size(); ++i) v[i] = s * (*in[0])[i];
      }
      grads[0] = Tensor(in[0]->shape(), std::move(v));
      break;
    }
    case OpKind::kAvgPool2d: {
      const auto d = pool_dims(*in[0], p.window);
      std::vector<double> v(in[0]->size(), 0.0);
      const double inv = 1.0 / static_cast<double>(d.win * d.win);
      for (std::size_t c = 0; c < d.c; ++c)
        for (std::size_t oy = 0; oy < d.oh; ++oy)
          for (std::size_t ox = 0; ox < d.ow; ++ox) {
            const double gv = g[(c * d.oh + oy) * d.ow + ox] * inv;
            for (std::size_t dy = 0; dy < d.win; ++dy)
              for (std::size_t dx = 0; dx < d.win; ++dx)
                v[(c * d.h + oy * d.win + dy) * d.w + ox * d.win + dx] = gv;
          }
      grads[0] = Tensor(in[0]->shape(), std::move(v));
      break;
    }
    case OpKind::kSoftmaxXent: {
      auto prob = softmax(*in[0]);
      prob[p.label] -= 1.0;
      const double s = g.item();
      for (auto& e : prob) e *= s;
      grads[0] = Tensor(in[0]->shape(), std::move(prob));
      break;
    }
    case OpKind::kSigmoidBce: {
      const double z = (*in[0])[0];
      const double sig = z >= 0.0 ? 1.0 / (1.0 + std::exp(-z)) : std::exp(z) / (1.0 + std::exp(z));
      grads[0] = Tensor(in[0]->shape(), {(sig - p.scalar) * g.item()});
      break;
    }
  }
  return grads;
}

}  // namespace rma
