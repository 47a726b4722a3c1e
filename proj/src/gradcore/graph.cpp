#include "morphkit/gradcore/graph.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <numbers>

namespace morphkit {

const char* op_name(Op op) {
  switch (op) {
    case Op::Input: return "input";
    case Op::Constant: return "constant";
    case Op::Add: return "add";
    case Op::Sub: return "sub";
    case Op::Mul: return "mul";
    case Op::Scale: return "scale";
    case Op::AddScalar: return "add_scalar";
    case Op::MatMul: return "matmul";
    case Op::Conv2d: return "conv2d";
    case Op::Relu: return "relu";
    case Op::Mean: return "mean";
    case Op::Sum: return "sum";
    case Op::Exp: return "exp";
    case Op::Log: return "log";
    case Op::Sqrt: return "sqrt";
    case Op::Concat: return "concat";
    case Op::Slice: return "slice";
    case Op::Reshape: return "reshape";
    case Op::L2Norm: return "l2_norm";
    case Op::Cosine: return "cosine";
    case Op::CosineColumns: return "cosine_columns";
    case Op::SoftmaxCrossEntropy: return "softmax_cross_entropy";
    case Op::Acos: return "acos";
    case Op::Cos: return "cos";
    case Op::Clamp: return "clamp";
    case Op::LogMeanExp: return "log_mean_exp";
  }
  return "?";
}

namespace {

constexpr double kAcosGradFloor = 1e-12;

[[noreturn]] void shape_fail(const Node& n, const std::string& detail) {
  throw ShapeError(std::string(op_name(n.op)) + ": " + detail);
}

// Broadcast rule for binary elementwise ops: equal shapes, or one side has
// a single element.
Shape broadcast_shape(const Node& n, const Tensor& a, const Tensor& b) {
  if (a.shape() == b.shape()) return a.shape();
  if (b.numel() == 1) return a.shape();
  if (a.numel() == 1) return b.shape();
  shape_fail(n, "incompatible shapes " + shape_to_string(a.shape()) + " and " +
                    shape_to_string(b.shape()));
}

double dot(const double* x, const double* y, std::size_t n) {
  double s = 0.0;
  for (std::size_t i = 0; i < n; ++i) s += x[i] * y[i];
  return s;
}

double norm(const double* x, std::size_t n) { return std::sqrt(dot(x, x, n)); }

struct ConvDims {
  std::size_t c, h, w, o, k, ho, wo, stride, pad;
};

ConvDims conv_dims(const Node& n, const Tensor& x, const Tensor& w, const Tensor& bias) {
  if (x.rank() != 3) shape_fail(n, "input must be [C,H,W], got " + shape_to_string(x.shape()));
  if (w.rank() != 4 || w.dim(2) != w.dim(3))
    shape_fail(n, "weight must be [O,C,k,k], got " + shape_to_string(w.shape()));
  if (w.dim(1) != x.dim(0)) shape_fail(n, "channel mismatch");
  if (bias.numel() != w.dim(0)) shape_fail(n, "bias length must equal output channels");
  ConvDims d{};
  d.c = x.dim(0);
  d.h = x.dim(1);
  d.w = x.dim(2);
  d.o = w.dim(0);
  d.k = w.dim(2);
  d.stride = n.i0;
  d.pad = n.i1;
  if (d.stride == 0) shape_fail(n, "stride must be positive");
  if (d.h + 2 * d.pad < d.k || d.w + 2 * d.pad < d.k) shape_fail(n, "kernel larger than input");
  d.ho = (d.h + 2 * d.pad - d.k) / d.stride + 1;
  d.wo = (d.w + 2 * d.pad - d.k) / d.stride + 1;
  return d;
}

// Output index range [lo, hi) whose input coordinate o*stride + kk - pad lies in [0, extent).
void valid_range(std::size_t extent, std::size_t out, std::size_t stride, std::size_t kk,
                 std::size_t pad, std::size_t& lo, std::size_t& hi) {
  // need o*stride + kk >= pad  and  o*stride + kk - pad < extent
  lo = kk >= pad ? 0 : (pad - kk + stride - 1) / stride;
  const std::size_t limit = extent + pad;  // o*stride + kk < limit
  hi = limit > kk ? (limit - kk + stride - 1) / stride : 0;
  hi = std::min(hi, out);
  if (lo > hi) lo = hi;
}

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

// Unfolds x into a [c*k*k, ho*wo] matrix; padded taps are zero.
RowMatrix im2col(const ConvDims& d, const double* x) {
  RowMatrix cols = RowMatrix::Zero(static_cast<Eigen::Index>(d.c * d.k * d.k),
                                   static_cast<Eigen::Index>(d.ho * d.wo));
  for (std::size_t c = 0; c < d.c; ++c) {
    const double* xc = x + c * d.h * d.w;
    for (std::size_t ky = 0; ky < d.k; ++ky) {
      std::size_t oy0, oy1;
      valid_range(d.h, d.ho, d.stride, ky, d.pad, oy0, oy1);
      for (std::size_t kx = 0; kx < d.k; ++kx) {
        std::size_t ox0, ox1;
        valid_range(d.w, d.wo, d.stride, kx, d.pad, ox0, ox1);
        double* row = cols.row(static_cast<Eigen::Index>((c * d.k + ky) * d.k + kx)).data();
        for (std::size_t oy = oy0; oy < oy1; ++oy) {
          const double* xrow = xc + (oy * d.stride + ky - d.pad) * d.w;
          double* out = row + oy * d.wo;
          for (std::size_t ox = ox0; ox < ox1; ++ox) out[ox] = xrow[ox * d.stride + kx - d.pad];
        }
      }
    }
  }
  return cols;
}

void conv_forward(const ConvDims& d, const double* x, const double* w, const double* bias,
                  double* y) {
  const auto ckk = static_cast<Eigen::Index>(d.c * d.k * d.k);
  const auto plane = static_cast<Eigen::Index>(d.ho * d.wo);
  const Eigen::Map<const RowMatrix> W(w, static_cast<Eigen::Index>(d.o), ckk);
  Eigen::Map<RowMatrix> Y(y, static_cast<Eigen::Index>(d.o), plane);
  Y.noalias() = W * im2col(d, x);
  for (std::size_t o = 0; o < d.o; ++o) Y.row(static_cast<Eigen::Index>(o)).array() += bias[o];
}

void conv_backward(const ConvDims& d, const double* x, const double* w, const double* gy,
                   double* gx, double* gw, double* gb) {
  const auto ckk = static_cast<Eigen::Index>(d.c * d.k * d.k);
  const auto plane = static_cast<Eigen::Index>(d.ho * d.wo);
  const Eigen::Map<const RowMatrix> G(gy, static_cast<Eigen::Index>(d.o), plane);
  if (gb) {
    for (std::size_t o = 0; o < d.o; ++o) gb[o] += G.row(static_cast<Eigen::Index>(o)).sum();
  }
  if (gw) {
    Eigen::Map<RowMatrix> GW(gw, static_cast<Eigen::Index>(d.o), ckk);
    GW.noalias() += G * im2col(d, x).transpose();
  }
  if (!gx) return;
  const Eigen::Map<const RowMatrix> W(w, static_cast<Eigen::Index>(d.o), ckk);
  const RowMatrix gcols = W.transpose() * G;
  // Scatter the column gradients back onto the input (transpose of im2col).
  for (std::size_t c = 0; c < d.c; ++c) {
    double* gxc = gx + c * d.h * d.w;
    for (std::size_t ky = 0; ky < d.k; ++ky) {
      std::size_t oy0, oy1;
      valid_range(d.h, d.ho, d.stride, ky, d.pad, oy0, oy1);
      for (std::size_t kx = 0; kx < d.k; ++kx) {
        std::size_t ox0, ox1;
        valid_range(d.w, d.wo, d.stride, kx, d.pad, ox0, ox1);
        const double* row = gcols.row(static_cast<Eigen::Index>((c * d.k + ky) * d.k + kx)).data();
        for (std::size_t oy = oy0; oy < oy1; ++oy) {
          double* gxrow = gxc + (oy * d.stride + ky - d.pad) * d.w;
          const double* in = row + oy * d.wo;
          for (std::size_t ox = ox0; ox < ox1; ++ox) gxrow[ox * d.stride + kx - d.pad] += in[ox];
        }
      }
    }
  }
}

}  // namespace

struct Graph::Forward {
  std::vector<Tensor> owned;
  std::vector<const Tensor*> value;
  // Node i recorded branches [branch_begin[i], branch_begin[i + 1]).
  std::vector<std::size_t> branch_begin;
};

// Clean nodes are copied from `base`; the input named `name` takes `value`.
struct Graph::Reuse {
  const Forward* base = nullptr;
  const std::vector<std::uint8_t>* base_branches = nullptr;
  const std::vector<char>* dirty = nullptr;
  const std::string* name = nullptr;
  const Tensor* value = nullptr;
};

Var Graph::push(Node node) {
  for (Var in : node.inputs) {
    if (in.id >= nodes_.size()) throw GraphError("input node does not belong to this graph");
  }
  nodes_.push_back(std::move(node));
  return Var{static_cast<std::uint32_t>(nodes_.size() - 1)};
}

Var Graph::input(const std::string& name) {
  if (auto it = inputs_.find(name); it != inputs_.end()) return it->second;
  Node n;
  n.op = Op::Input;
  n.name = name;
  Var v = push(std::move(n));
  inputs_.emplace(name, v);
  return v;
}

Var Graph::constant(Tensor value) {
  Node n;
  n.op = Op::Constant;
  n.constant = constants_.size();
  constants_.push_back(std::move(value));
  return push(std::move(n));
}

#define MORPHKIT_UNARY(fn, opcode)  \
  Var Graph::fn(Var a) {            \
    Node n;                         \
    n.op = opcode;                  \
    n.inputs = {a};                 \
    return push(std::move(n));      \
  }
#define MORPHKIT_BINARY(fn, opcode) \
  Var Graph::fn(Var a, Var b) {     \
    Node n;                         \
    n.op = opcode;                  \
    n.inputs = {a, b};              \
    return push(std::move(n));      \
  }

MORPHKIT_BINARY(add, Op::Add)
MORPHKIT_BINARY(sub, Op::Sub)
MORPHKIT_BINARY(mul, Op::Mul)
MORPHKIT_BINARY(matmul, Op::MatMul)
MORPHKIT_BINARY(cosine, Op::Cosine)
MORPHKIT_BINARY(cosine_columns, Op::CosineColumns)
MORPHKIT_UNARY(relu, Op::Relu)
MORPHKIT_UNARY(mean, Op::Mean)
MORPHKIT_UNARY(sum, Op::Sum)
MORPHKIT_UNARY(exp, Op::Exp)
MORPHKIT_UNARY(log, Op::Log)
MORPHKIT_UNARY(sqrt, Op::Sqrt)
MORPHKIT_UNARY(l2_norm, Op::L2Norm)
MORPHKIT_UNARY(acos, Op::Acos)
MORPHKIT_UNARY(cos, Op::Cos)
MORPHKIT_UNARY(log_mean_exp, Op::LogMeanExp)

#undef MORPHKIT_UNARY
#undef MORPHKIT_BINARY

Var Graph::scale(Var a, double factor) {
  Node n;
  n.op = Op::Scale;
  n.inputs = {a};
  n.a = factor;
  return push(std::move(n));
}

Var Graph::add_scalar(Var a, double offset) {
  Node n;
  n.op = Op::AddScalar;
  n.inputs = {a};
  n.a = offset;
  return push(std::move(n));
}

Var Graph::conv2d(Var x, Var w, Var bias, std::size_t stride, std::size_t pad) {
  Node n;
  n.op = Op::Conv2d;
  n.inputs = {x, w, bias};
  n.i0 = stride;
  n.i1 = pad;
  return push(std::move(n));
}

Var Graph::concat(std::span<const Var> parts) {
  if (parts.empty()) throw GraphError("concat of zero tensors");
  Node n;
  n.op = Op::Concat;
  n.inputs.assign(parts.begin(), parts.end());
  return push(std::move(n));
}

Var Graph::slice(Var a, std::size_t begin, std::size_t end) {
  if (end < begin) throw GraphError("slice end precedes begin");
  Node n;
  n.op = Op::Slice;
  n.inputs = {a};
  n.i0 = begin;
  n.i1 = end;
  return push(std::move(n));
}

Var Graph::reshape(Var a, Shape shape) {
  Node n;
  n.op = Op::Reshape;
  n.inputs = {a};
  n.shape = std::move(shape);
  return push(std::move(n));
}

Var Graph::softmax_cross_entropy(Var logits, std::size_t label) {
  Node n;
  n.op = Op::SoftmaxCrossEntropy;
  n.inputs = {logits};
  n.i0 = label;
  return push(std::move(n));
}

Var Graph::clamp(Var a, double lo, double hi) {
  if (!(lo <= hi)) throw GraphError("clamp bounds out of order");
  Node n;
  n.op = Op::Clamp;
  n.inputs = {a};
  n.a = lo;
  n.b = hi;
  return push(std::move(n));
}

void Graph::set_output(Var v) {
  if (v.id >= nodes_.size()) throw GraphError("output node does not belong to this graph");
  output_ = v;
  has_output_ = true;
}

Var Graph::output() const {
  if (!has_output_) throw GraphError("graph has no output node");
  return output_;
}

std::vector<std::string> Graph::input_names() const {
  std::vector<std::string> names;
  for (const auto& n : nodes_) {
    if (n.op == Op::Input) names.push_back(n.name);
  }
  return names;
}

void Graph::forward(const Bindings& bindings, std::uint32_t last, Forward& st,
                    std::vector<std::uint8_t>* branches, const Reuse* reuse) const {
  st.owned.assign(last + 1, Tensor{});
  st.value.assign(last + 1, nullptr);
  st.branch_begin.assign(last + 2, 0);
  for (std::uint32_t i = 0; i <= last; ++i) {
    const Node& n = nodes_[i];
    if (branches) st.branch_begin[i] = branches->size();
    if (reuse && !(*reuse->dirty)[i]) {
      st.value[i] = reuse->base->value[i];
      if (branches) {
        const auto& bb = *reuse->base_branches;
        branches->insert(branches->end(), bb.begin() + static_cast<std::ptrdiff_t>(reuse->base->branch_begin[i]),
                         bb.begin() + static_cast<std::ptrdiff_t>(reuse->base->branch_begin[i + 1]));
      }
      continue;
    }
    auto in = [&](std::size_t k) -> const Tensor& { return *st.value[n.inputs[k].id]; };
    Tensor& out = st.owned[i];
    switch (n.op) {
      case Op::Input: {
        const Tensor* bound = nullptr;
        if (reuse && n.name == *reuse->name) {
          bound = reuse->value;
        } else {
          auto it = bindings.find(n.name);
          if (it == bindings.end()) throw GraphError("unbound input '" + n.name + "'");
          bound = &it->second;
        }
        if (!bound->all_finite())
          throw NonFiniteError("input '" + n.name + "' contains non-finite values");
        st.value[i] = bound;
        continue;
      }
      case Op::Constant:
        st.value[i] = &constants_[n.constant];
        continue;
      case Op::Add:
      case Op::Sub:
      case Op::Mul: {
        const Tensor& a = in(0);
        const Tensor& b = in(1);
        out = Tensor(broadcast_shape(n, a, b));
        const bool ba = a.numel() == 1 && out.numel() != 1;
        const bool bb = b.numel() == 1 && out.numel() != 1;
        for (std::size_t k = 0; k < out.numel(); ++k) {
          const double x = a[ba ? 0 : k];
          const double y = b[bb ? 0 : k];
          out[k] = n.op == Op::Add ? x + y : n.op == Op::Sub ? x - y : x * y;
        }
        break;
      }
      case Op::Scale:
      case Op::AddScalar: {
        const Tensor& a = in(0);
        out = Tensor(a.shape());
        for (std::size_t k = 0; k < a.numel(); ++k)
          out[k] = n.op == Op::Scale ? a[k] * n.a : a[k] + n.a;
        break;
      }
      case Op::MatMul: {
        const Tensor& a = in(0);
        const Tensor& b = in(1);
        if (b.rank() != 2 || (a.rank() != 1 && a.rank() != 2))
          shape_fail(n, "expects [k] or [m,k] times [k,n]");
        const std::size_t m = a.rank() == 1 ? 1 : a.dim(0);
        const std::size_t kk = a.rank() == 1 ? a.dim(0) : a.dim(1);
        if (kk != b.dim(0))
          shape_fail(n, shape_to_string(a.shape()) + " x " + shape_to_string(b.shape()));
        const std::size_t nn = b.dim(1);
        out = a.rank() == 1 ? Tensor(Shape{nn}) : Tensor(Shape{m, nn});
        for (std::size_t r = 0; r < m; ++r) {
          double* orow = out.data().data() + r * nn;
          for (std::size_t p = 0; p < kk; ++p) {
            const double av = a[r * kk + p];
            if (av == 0.0) continue;
            const double* brow = b.data().data() + p * nn;
            for (std::size_t c = 0; c < nn; ++c) orow[c] += av * brow[c];
          }
        }
        break;
      }
      case Op::Conv2d: {
        const ConvDims d = conv_dims(n, in(0), in(1), in(2));
        out = Tensor(Shape{d.o, d.ho, d.wo});
        conv_forward(d, in(0).data().data(), in(1).data().data(), in(2).data().data(),
                     out.data().data());
        break;
      }
      case Op::Relu: {
        const Tensor& a = in(0);
        out = Tensor(a.shape());
        for (std::size_t k = 0; k < a.numel(); ++k) {
          out[k] = a[k] > 0.0 ? a[k] : 0.0;
          if (branches) branches->push_back(a[k] > 0.0);
        }
        break;
      }
      case Op::Mean:
      case Op::Sum: {
        const Tensor& a = in(0);
        if (a.numel() == 0) shape_fail(n, "reduction over empty tensor");
        double s = 0.0;
        for (double v : a.data()) s += v;
        out = Tensor::scalar(n.op == Op::Mean ? s / static_cast<double>(a.numel()) : s);
        break;
      }
      case Op::Exp:
      case Op::Log:
      case Op::Sqrt:
      case Op::Cos: {
        const Tensor& a = in(0);
        out = Tensor(a.shape());
        for (std::size_t k = 0; k < a.numel(); ++k) {
          switch (n.op) {
            case Op::Exp: out[k] = std::exp(a[k]); break;
            case Op::Log: out[k] = std::log(a[k]); break;
            case Op::Sqrt: out[k] = std::sqrt(a[k]); break;
            default: out[k] = std::cos(a[k]); break;
          }
        }
        break;
      }
      case Op::Concat: {
        std::size_t rows = 0;
        Shape tail;
        for (std::size_t k = 0; k < n.inputs.size(); ++k) {
          const Tensor& t = in(k);
          Shape s = t.rank() == 0 ? Shape{1} : t.shape();
          Shape this_tail(s.begin() + 1, s.end());
          if (k == 0) tail = this_tail;
          else if (tail != this_tail) shape_fail(n, "trailing shapes differ");
          rows += s[0];
        }
        Shape s{rows};
        s.insert(s.end(), tail.begin(), tail.end());
        out = Tensor(s);
        std::size_t off = 0;
        for (std::size_t k = 0; k < n.inputs.size(); ++k) {
          const Tensor& t = in(k);
          std::copy(t.data().begin(), t.data().end(), out.data().begin() + off);
          off += t.numel();
        }
        break;
      }
      case Op::Slice: {
        const Tensor& a = in(0);
        if (a.rank() == 0 || n.i1 > a.dim(0)) shape_fail(n, "range out of bounds");
        const std::size_t row = a.numel() / a.dim(0);
        Shape s = a.shape();
        s[0] = n.i1 - n.i0;
        out = Tensor(s);
        std::copy(a.data().begin() + n.i0 * row, a.data().begin() + n.i1 * row,
                  out.data().begin());
        break;
      }
      case Op::Reshape:
        out = in(0).reshaped(n.shape);
        break;
      case Op::L2Norm: {
        const Tensor& a = in(0);
        out = Tensor::scalar(norm(a.data().data(), a.numel()));
        break;
      }
      case Op::Cosine: {
        const Tensor& a = in(0);
        const Tensor& b = in(1);
        if (a.numel() != b.numel()) shape_fail(n, "length mismatch");
        const double na = norm(a.data().data(), a.numel());
        const double nb = norm(b.data().data(), b.numel());
        if (na == 0.0 || nb == 0.0) throw std::domain_error("cosine of a zero-norm vector");
        out = Tensor::scalar(dot(a.data().data(), b.data().data(), a.numel()) / (na * nb));
        break;
      }
      case Op::CosineColumns: {
        const Tensor& z = in(0);
        const Tensor& w = in(1);
        if (w.rank() != 2 || w.dim(0) != z.numel())
          shape_fail(n, "expects z [d] and w [d,n]");
        const std::size_t d = w.dim(0), cols = w.dim(1);
        const double nz = norm(z.data().data(), d);
        if (nz == 0.0) throw std::domain_error("cosine of a zero-norm vector");
        out = Tensor(Shape{cols});
        for (std::size_t j = 0; j < cols; ++j) {
          double dp = 0.0, nw = 0.0;
          for (std::size_t r = 0; r < d; ++r) {
            const double wv = w[r * cols + j];
            dp += z[r] * wv;
            nw += wv * wv;
          }
          if (nw == 0.0) throw std::domain_error("cosine against a zero-norm weight column");
          out[j] = dp / (nz * std::sqrt(nw));
        }
        break;
      }
      case Op::SoftmaxCrossEntropy: {
        const Tensor& z = in(0);
        if (z.rank() != 1 || n.i0 >= z.numel()) shape_fail(n, "label out of range");
        const double m = *std::max_element(z.data().begin(), z.data().end());
        double s = 0.0;
        for (double v : z.data()) s += std::exp(v - m);
        out = Tensor::scalar(m + std::log(s) - z[n.i0]);
        break;
      }
      case Op::Acos: {
        const Tensor& a = in(0);
        out = Tensor(a.shape());
        for (std::size_t k = 0; k < a.numel(); ++k) {
          const double x = std::clamp(a[k], -1.0, 1.0);
          out[k] = std::acos(x);
          if (branches) branches->push_back(a[k] < -1.0 ? 0 : a[k] > 1.0 ? 2 : 1);
        }
        break;
      }
      case Op::Clamp: {
        const Tensor& a = in(0);
        out = Tensor(a.shape());
        for (std::size_t k = 0; k < a.numel(); ++k) {
          out[k] = std::clamp(a[k], n.a, n.b);
          if (branches) branches->push_back(a[k] <= n.a ? 0 : a[k] >= n.b ? 2 : 1);
        }
        break;
      }
      case Op::LogMeanExp: {
        const Tensor& a = in(0);
        if (a.numel() == 0) shape_fail(n, "empty input");
        const double m = *std::max_element(a.data().begin(), a.data().end());
        double s = 0.0;
        for (double v : a.data()) s += std::exp(v - m);
        out = Tensor::scalar(m + std::log(s / static_cast<double>(a.numel())));
        break;
      }
    }
    if (!out.all_finite()) {
      throw NonFiniteError(std::string("non-finite value produced by ") + op_name(n.op) +
                           " (node " + std::to_string(i) + ")");
    }
    st.value[i] = &st.owned[i];
  }
  if (branches) st.branch_begin[last + 1] = branches->size();
}

std::uint32_t Graph::last_output(std::span<const Var> outputs) const {
  if (nodes_.empty()) throw GraphError("empty graph");
  std::uint32_t last = 0;
  for (Var v : outputs) {
    if (v.id >= nodes_.size()) throw GraphError("output node does not belong to this graph");
    last = std::max(last, v.id);
  }
  return last;
}

Graph::Cache::Cache(const Graph& graph, const Bindings& bindings, std::span<const Var> outputs)
    : graph_(graph), bindings_(bindings), outputs_(outputs.begin(), outputs.end()),
      last_(graph.last_output(outputs)), base_(std::make_unique<Forward>()) {
  graph_.forward(bindings_, last_, *base_, &branches_);
}

Graph::Cache::~Cache() = default;

std::vector<Tensor> Graph::Cache::evaluate_traced(const std::string& input, const Tensor& value,
                                                  std::vector<std::uint8_t>& branches) {
  if (input != dirty_for_ || dirty_.empty()) {
    dirty_.assign(last_ + 1, 0);
    for (std::uint32_t i = 0; i <= last_; ++i) {
      const Node& n = graph_.nodes_[i];
      if (n.op == Op::Input) {
        dirty_[i] = n.name == input;
        continue;
      }
      for (Var v : n.inputs) dirty_[i] = dirty_[i] || dirty_[v.id];
    }
    dirty_for_ = input;
  }
  Reuse reuse{base_.get(), &branches_, &dirty_, &input, &value};
  branches.clear();
  Forward st;
  graph_.forward(bindings_, last_, st, &branches, &reuse);
  std::vector<Tensor> result;
  result.reserve(outputs_.size());
  for (Var v : outputs_) result.push_back(*st.value[v.id]);
  return result;
}

Tensor Graph::evaluate(const Bindings& bindings) const {
  const Var out = output();
  return evaluate(bindings, std::span<const Var>(&out, 1)).front();
}

std::vector<Tensor> Graph::evaluate(const Bindings& bindings, std::span<const Var> outputs) const {
  const std::uint32_t last = last_output(outputs);
  Forward st;
  forward(bindings, last, st, nullptr);
  std::vector<Tensor> result;
  result.reserve(outputs.size());
  for (Var v : outputs) result.push_back(*st.value[v.id]);
  return result;
}

Tensor Graph::evaluate_traced(const Bindings& bindings, std::vector<std::uint8_t>& branches) const {
  branches.clear();
  Forward st;
  forward(bindings, output().id, st, &branches);
  return *st.value[output().id];
}

std::vector<Tensor> Graph::evaluate_traced(const Bindings& bindings, std::span<const Var> outputs,
                                           std::vector<std::uint8_t>& branches) const {
  const std::uint32_t last = last_output(outputs);
  branches.clear();
  Forward st;
  forward(bindings, last, st, &branches);
  std::vector<Tensor> result;
  result.reserve(outputs.size());
  for (Var v : outputs) result.push_back(*st.value[v.id]);
  return result;
}

Gradients Graph::gradient(const Bindings& bindings, std::span<const std::string> wrt,
                          double* value) const {
  const std::uint32_t root = output().id;
  for (const auto& name : wrt) {
    if (!inputs_.count(name)) throw GraphError("gradient requested for unknown input '" + name + "'");
  }
  Forward st;
  forward(bindings, root, st, nullptr);
  if (st.value[root]->numel() != 1) {
    throw GraphError("gradient requires a scalar output, got " +
                     shape_to_string(st.value[root]->shape()));
  }
  if (value) *value = st.value[root]->item();

  std::vector<Tensor> grad(root + 1);
  auto acc = [&](Var v) -> Tensor& {
    Tensor& g = grad[v.id];
    if (g.numel() == 0 && st.value[v.id]->numel() != 0) g = Tensor(st.value[v.id]->shape());
    return g;
  };
  grad[root] = Tensor(st.value[root]->shape(), 1.0);

  for (std::uint32_t i = root + 1; i-- > 0;) {
    const Node& n = nodes_[i];
    if (grad[i].numel() == 0 || n.op == Op::Input || n.op == Op::Constant) continue;
    const Tensor& gy = grad[i];
    const Tensor& y = *st.value[i];
    auto in = [&](std::size_t k) -> const Tensor& { return *st.value[n.inputs[k].id]; };
    switch (n.op) {
      case Op::Input:
      case Op::Constant:
        break;
      case Op::Add:
      case Op::Sub:
      case Op::Mul: {
        const Tensor& a = in(0);
        const Tensor& b = in(1);
        const bool ba = a.numel() == 1 && y.numel() != 1;
        const bool bb = b.numel() == 1 && y.numel() != 1;
        Tensor& ga = acc(n.inputs[0]);
        Tensor& gb = acc(n.inputs[1]);
        for (std::size_t k = 0; k < y.numel(); ++k) {
          const double g = gy[k];
          double da = g, db = n.op == Op::Sub ? -g : g;
          if (n.op == Op::Mul) {
            da = g * b[bb ? 0 : k];
            db = g * a[ba ? 0 : k];
          }
          ga[ba ? 0 : k] += da;
          gb[bb ? 0 : k] += db;
        }
        break;
      }
      case Op::Scale: {
        Tensor& ga = acc(n.inputs[0]);
        for (std::size_t k = 0; k < y.numel(); ++k) ga[k] += gy[k] * n.a;
        break;
      }
      case Op::AddScalar: {
        Tensor& ga = acc(n.inputs[0]);
        for (std::size_t k = 0; k < y.numel(); ++k) ga[k] += gy[k];
        break;
      }
      case Op::MatMul: {
        const Tensor& a = in(0);
        const Tensor& b = in(1);
        const std::size_t m = a.rank() == 1 ? 1 : a.dim(0);
        const std::size_t kk = b.dim(0), nn = b.dim(1);
        Tensor& ga = acc(n.inputs[0]);
        Tensor& gb = acc(n.inputs[1]);
        for (std::size_t r = 0; r < m; ++r) {
          const double* grow = gy.data().data() + r * nn;
          for (std::size_t p = 0; p < kk; ++p) {
            const double* brow = b.data().data() + p * nn;
            double* gbrow = gb.data().data() + p * nn;
            const double av = a[r * kk + p];
            double s = 0.0;
            for (std::size_t c = 0; c < nn; ++c) {
              s += grow[c] * brow[c];
              gbrow[c] += av * grow[c];
            }
            ga[r * kk + p] += s;
          }
        }
        break;
      }
      case Op::Conv2d: {
        const ConvDims d = conv_dims(n, in(0), in(1), in(2));
        Tensor& gx = acc(n.inputs[0]);
        Tensor& gw = acc(n.inputs[1]);
        Tensor& gb = acc(n.inputs[2]);
        conv_backward(d, in(0).data().data(), in(1).data().data(), gy.data().data(),
                      gx.data().data(), gw.data().data(), gb.data().data());
        break;
      }
      case Op::Relu: {
        const Tensor& a = in(0);
        Tensor& ga = acc(n.inputs[0]);
        for (std::size_t k = 0; k < a.numel(); ++k)
          if (a[k] > 0.0) ga[k] += gy[k];
        break;
      }
      case Op::Mean:
      case Op::Sum: {
        const Tensor& a = in(0);
        Tensor& ga = acc(n.inputs[0]);
        const double g = n.op == Op::Mean ? gy[0] / static_cast<double>(a.numel()) : gy[0];
        for (std::size_t k = 0; k < a.numel(); ++k) ga[k] += g;
        break;
      }
      case Op::Exp: {
        Tensor& ga = acc(n.inputs[0]);
        for (std::size_t k = 0; k < y.numel(); ++k) ga[k] += gy[k] * y[k];
        break;
      }
      case Op::Log: {
        const Tensor& a = in(0);
        Tensor& ga = acc(n.inputs[0]);
        for (std::size_t k = 0; k < y.numel(); ++k) ga[k] += gy[k] / a[k];
        break;
      }
      case Op::Sqrt: {
        Tensor& ga = acc(n.inputs[0]);
        for (std::size_t k = 0; k < y.numel(); ++k) ga[k] += gy[k] * 0.5 / y[k];
        break;
      }
      case Op::Cos: {
        const Tensor& a = in(0);
        Tensor& ga = acc(n.inputs[0]);
        for (std::size_t k = 0; k < y.numel(); ++k) ga[k] -= gy[k] * std::sin(a[k]);
        break;
      }
      case Op::Concat: {
        std::size_t off = 0;
        for (std::size_t k = 0; k < n.inputs.size(); ++k) {
          Tensor& g = acc(n.inputs[k]);
          for (std::size_t e = 0; e < g.numel(); ++e) g[e] += gy[off + e];
          off += g.numel();
        }
        break;
      }
      case Op::Slice: {
        const Tensor& a = in(0);
        const std::size_t row = a.numel() / a.dim(0);
        Tensor& ga = acc(n.inputs[0]);
        for (std::size_t e = 0; e < y.numel(); ++e) ga[n.i0 * row + e] += gy[e];
        break;
      }
      case Op::Reshape: {
        Tensor& ga = acc(n.inputs[0]);
        for (std::size_t e = 0; e < y.numel(); ++e) ga[e] += gy[e];
        break;
      }
      case Op::L2Norm: {
        const Tensor& a = in(0);
        Tensor& ga = acc(n.inputs[0]);
        const double nv = y[0];
        for (std::size_t k = 0; k < a.numel(); ++k) ga[k] += gy[0] * a[k] / nv;
        break;
      }
      case Op::Cosine: {
        const Tensor& a = in(0);
        const Tensor& b = in(1);
        const std::size_t d = a.numel();
        const double na = norm(a.data().data(), d);
        const double nb = norm(b.data().data(), d);
        const double c = y[0];
        Tensor& ga = acc(n.inputs[0]);
        Tensor& gb = acc(n.inputs[1]);
        for (std::size_t k = 0; k < d; ++k) {
          ga[k] += gy[0] * (b[k] / (na * nb) - c * a[k] / (na * na));
          gb[k] += gy[0] * (a[k] / (na * nb) - c * b[k] / (nb * nb));
        }
        break;
      }
      case Op::CosineColumns: {
        const Tensor& z = in(0);
        const Tensor& w = in(1);
        const std::size_t d = w.dim(0), cols = w.dim(1);
        const double nz = norm(z.data().data(), d);
        Tensor& gz = acc(n.inputs[0]);
        Tensor& gw = acc(n.inputs[1]);
        for (std::size_t j = 0; j < cols; ++j) {
          if (gy[j] == 0.0) continue;
          double nw2 = 0.0;
          for (std::size_t r = 0; r < d; ++r) nw2 += w[r * cols + j] * w[r * cols + j];
          const double nw = std::sqrt(nw2);
          const double c = y[j];
          for (std::size_t r = 0; r < d; ++r) {
            const double wv = w[r * cols + j];
            gz[r] += gy[j] * (wv / (nz * nw) - c * z[r] / (nz * nz));
            gw[r * cols + j] += gy[j] * (z[r] / (nz * nw) - c * wv / nw2);
          }
        }
        break;
      }
      case Op::SoftmaxCrossEntropy: {
        const Tensor& z = in(0);
        Tensor& gz = acc(n.inputs[0]);
        const double m = *std::max_element(z.data().begin(), z.data().end());
        double s = 0.0;
        for (double v : z.data()) s += std::exp(v - m);
        for (std::size_t k = 0; k < z.numel(); ++k) {
          const double p = std::exp(z[k] - m) / s;
          gz[k] += gy[0] * (p - (k == n.i0 ? 1.0 : 0.0));
        }
        break;
      }
      case Op::Acos: {
        const Tensor& a = in(0);
        Tensor& ga = acc(n.inputs[0]);
        for (std::size_t k = 0; k < a.numel(); ++k) {
          if (a[k] < -1.0 || a[k] > 1.0) continue;
          ga[k] -= gy[k] / std::sqrt(std::max(1.0 - a[k] * a[k], kAcosGradFloor));
        }
        break;
      }
      case Op::Clamp: {
        const Tensor& a = in(0);
        Tensor& ga = acc(n.inputs[0]);
        for (std::size_t k = 0; k < a.numel(); ++k)
          if (a[k] > n.a && a[k] < n.b) ga[k] += gy[k];
        break;
      }
      case Op::LogMeanExp: {
        const Tensor& a = in(0);
        Tensor& ga = acc(n.inputs[0]);
        const double m = *std::max_element(a.data().begin(), a.data().end());
        double s = 0.0;
        for (double v : a.data()) s += std::exp(v - m);
        for (std::size_t k = 0; k < a.numel(); ++k) ga[k] += gy[0] * std::exp(a[k] - m) / s;
        break;
      }
    }
    for (Var v : n.inputs) {
      if (!grad[v.id].all_finite()) {
        throw NonFiniteError(std::string("non-finite gradient through ") + op_name(n.op) +
                             " (node " + std::to_string(i) + ")");
      }
    }
  }

  Gradients out;
  for (const auto& name : wrt) {
    if (out.count(name)) continue;
    const Var v = inputs_.at(name);
    if (v.id <= root && grad[v.id].numel() != 0) {
      out[name] = std::move(grad[v.id]);
    } else {
      auto it = bindings.find(name);
      if (it == bindings.end()) throw GraphError("unbound input '" + name + "'");
      out[name] = Tensor(it->second.shape());
    }
  }
  return out;
}

Tensor evaluate(const Graph& graph, const Bindings& bindings) { return graph.evaluate(bindings); }

Gradients gradient(const Graph& graph, const Bindings& bindings,
                   std::span<const std::string> wrt) {
  return graph.gradient(bindings, wrt);
}

}  // namespace morphkit
