#pragma once

#include <cstdint>
#include <map>
#include <memory>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "morphkit/gradcore/tensor.hpp"

namespace morphkit {

// Handle to a node inside a Graph.
struct Var {
  std::uint32_t id = 0;
  friend bool operator==(Var, Var) = default;
};

enum class Op : std::uint8_t {
  Input,
  Constant,
  Add,
  Sub,
  Mul,
  Scale,
  AddScalar,
  MatMul,
  Conv2d,
  Relu,
  Mean,
  Sum,
  Exp,
  Log,
  Sqrt,
  Concat,
  Slice,
  Reshape,
  L2Norm,
  Cosine,
  CosineColumns,
  SoftmaxCrossEntropy,
  Acos,
  Cos,
  Clamp,
  LogMeanExp,
};

const char* op_name(Op op);

struct Node {
  Op op = Op::Input;
  std::vector<Var> inputs;
  // Scalar attributes: scale factor, clamp bounds, ...
  double a = 0.0;
  double b = 0.0;
  // Integer attributes: stride/pad, slice range, label.
  std::size_t i0 = 0;
  std::size_t i1 = 0;
  Shape shape;       // Reshape target
  std::string name;  // Input nodes
  std::size_t constant = 0;
};

using Bindings = std::unordered_map<std::string, Tensor>;
using Gradients = std::map<std::string, Tensor>;

class GraphError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Append-only computation graph. Nodes are created in topological order, so
// every node's inputs precede it. Evaluation is const and thread-safe.
class Graph {
 public:
  // Named leaf, bound at evaluation time. Re-declaring a name returns the
  // existing leaf, so parameters are shared across subgraphs.
  Var input(const std::string& name);
  Var constant(Tensor value);

  Var add(Var a, Var b);
  Var sub(Var a, Var b);
  Var mul(Var a, Var b);
  Var scale(Var a, double factor);
  Var add_scalar(Var a, double offset);
  Var neg(Var a) { return scale(a, -1.0); }

  // [k]x[k,n] -> [n] or [m,k]x[k,n] -> [m,n]
  Var matmul(Var a, Var b);
  // x [C,H,W], w [O,C,k,k], bias [O] -> [O,Ho,Wo]; zero padding.
  Var conv2d(Var x, Var w, Var bias, std::size_t stride, std::size_t pad);

  Var relu(Var a);
  Var hinge(Var a) { return relu(a); }
  Var mean(Var a);
  Var sum(Var a);
  Var exp(Var a);
  Var log(Var a);
  Var sqrt(Var a);
  // Concatenate along the leading axis; scalars count as length-1 vectors.
  Var concat(std::span<const Var> parts);
  // Rows [begin, end) of the leading axis.
  Var slice(Var a, std::size_t begin, std::size_t end);
  Var reshape(Var a, Shape shape);
  Var l2_norm(Var a);
  Var cosine(Var a, Var b);
  // z [d], w [d,n] -> cosine between z and each column of w.
  Var cosine_columns(Var z, Var w);
  Var softmax_cross_entropy(Var logits, std::size_t label);
  // acos on [-1, 1]; inputs outside are clamped.
  Var acos(Var a);
  Var cos(Var a);
  Var clamp(Var a, double lo, double hi);
  // log(mean(exp(v))) computed with max subtraction.
  Var log_mean_exp(Var a);

  void set_output(Var v);
  Var output() const;
  bool has_output() const { return has_output_; }

  std::size_t size() const { return nodes_.size(); }
  const Node& node(Var v) const { return nodes_.at(v.id); }
  std::vector<std::string> input_names() const;
  bool has_input(const std::string& name) const { return inputs_.count(name) != 0; }

  Tensor evaluate(const Bindings& bindings) const;
  std::vector<Tensor> evaluate(const Bindings& bindings, std::span<const Var> outputs) const;

  // Reverse-mode gradients of the scalar output with respect to the named
  // inputs. Writes the forward value to *value when given.
  Gradients gradient(const Bindings& bindings, std::span<const std::string> wrt,
                     double* value = nullptr) const;

  // Forward value of the output plus, for every piecewise primitive
  // (relu, clamp, acos), the branch taken by each element.
  Tensor evaluate_traced(const Bindings& bindings, std::vector<std::uint8_t>& branches) const;
  // Several outputs from one forward pass; branches cover every node up to
  // the last requested output.
  std::vector<Tensor> evaluate_traced(const Bindings& bindings, std::span<const Var> outputs,
                                      std::vector<std::uint8_t>& branches) const;

  struct Forward;

  // A traced forward pass over fixed bindings, reused when one input changes
  // at a time: only nodes downstream of that input are recomputed. The graph
  // and bindings must outlive the cache.
  class Cache {
   public:
    Cache(const Graph& graph, const Bindings& bindings, std::span<const Var> outputs);
    ~Cache();
    Cache(const Cache&) = delete;
    Cache& operator=(const Cache&) = delete;

    // Same result as evaluate_traced with `input` bound to `value`.
    std::vector<Tensor> evaluate_traced(const std::string& input, const Tensor& value,
                                        std::vector<std::uint8_t>& branches);
    const std::vector<std::uint8_t>& base_branches() const { return branches_; }

   private:
    const Graph& graph_;
    const Bindings& bindings_;
    std::vector<Var> outputs_;
    std::uint32_t last_ = 0;
    std::unique_ptr<Forward> base_;
    std::vector<std::uint8_t> branches_;
    std::string dirty_for_;
    std::vector<char> dirty_;
  };

 private:
  struct Reuse;
  Var push(Node node);
  void forward(const Bindings& bindings, std::uint32_t last, Forward& state,
               std::vector<std::uint8_t>* branches, const Reuse* reuse = nullptr) const;
  std::uint32_t last_output(std::span<const Var> outputs) const;

  std::vector<Node> nodes_;
  std::vector<Tensor> constants_;
  std::unordered_map<std::string, Var> inputs_;
  Var output_{};
  bool has_output_ = false;
};

Tensor evaluate(const Graph& graph, const Bindings& bindings);
Gradients gradient(const Graph& graph, const Bindings& bindings,
                   std::span<const std::string> wrt);

}  // namespace morphkit
