#pragma once

#include <functional>
#include <unordered_map>
#include <utility>
#include <vector>

#include "faircc/tensor.hpp"

namespace faircc {

// Handle into a Graph's tape.
struct Var {
    int id = -1;
    bool valid() const { return id >= 0; }
};

// Reverse-mode tape over dense double tensors. Operations run eagerly, record
// their inputs, and check every result for NaN/Inf. The tape is acyclic by
// construction (parents always have smaller ids) and backward() visits each
// node exactly once, in descending id order, so gradient accumulation is
// deterministic.
//
// A Graph is single-owner: build, call backward() once, read gradients.
class Graph {
  public:
    Graph() = default;
    Graph(const Graph&) = delete;
    Graph& operator=(const Graph&) = delete;

    // Leaves.
    Var constant(Tensor value);
    Var param(Tensor value);  // trainable leaf
    Var scalar_const(double v) { return constant(Tensor::scalar(v)); }

    // Elementwise, same shape.
    Var add(Var a, Var b);
    Var sub(Var a, Var b);
    Var mul(Var a, Var b);
    Var scale(Var a, double c);
    Var neg(Var a) { return scale(a, -1.0); }
    Var square(Var a) { return mul(a, a); }
    Var sigmoid(Var a);
    Var gelu(Var a);
    // max(0, x) with subgradient 0 at the kink.
    Var relu(Var a);
    // sqrt with gradient defined as 0 at x == 0 (used for pairwise distances).
    Var sqrt_safe(Var a);

    // Linear algebra.
    Var matmul(Var a, Var b);                 // (m,k)x(k,n)
    Var matvec(Var m, Var v);                 // (r,c)x(c) -> (r)
    Var dot(Var a, Var b);                    // 1-D x 1-D -> scalar
    Var transpose(Var a);
    Var add_rowvec(Var m, Var v);             // broadcast (r,c)+(c)

    // Reductions / reshaping.
    Var sum(Var a);                           // scalar
    Var mean(Var a);
    Var pick(Var a, int index);               // scalar a.data[index]
    Var gather(Var a, std::vector<int> idx);  // 1-D gather -> 1-D
    Var gather_rows(Var a, std::vector<int> rows);
    Var concat(const std::vector<Var>& parts);       // 1-D concat
    Var concat_cols(const std::vector<Var>& parts);  // 2-D, equal row counts
    Var slice_cols(Var a, int c0, int c1);

    // Softmax family, over the last dimension, numerically shifted by the
    // row max. Accepts 1-D vectors or 2-D row batches.
    Var softmax(Var a);
    Var log_softmax(Var a);
    Var logsumexp(Var a);  // (r,c)->(r), (n)->scalar

    // Row-wise layer normalization with learnable gain/bias of length n.
    // The pre-affine output has zero mean and unit variance (eps-stabilized).
    Var layer_norm(Var x, Var gain, Var bias, double eps = 1e-6);

    // sum_i [softplus-stable BCE(logits_i, targets_i)]; targets is a plain
    // tensor of 0/1 values with the same shape as logits.
    Var bce_with_logits_sum(Var logits, Tensor targets);

    // Reverse pass from a scalar loss; may be called once per graph.
    void backward(Var loss);

    const Tensor& value(Var v) const;
    // Gradient of the last backward() target w.r.t. v; zeros if v was not
    // reached by the reverse sweep.
    const Tensor& grad(Var v) const;
    bool is_param(Var v) const;
    int size() const { return static_cast<int>(nodes_.size()); }

  private:
    struct Node {
        Tensor value;
        mutable Tensor grad;
        std::vector<int> parents;
        std::function<void(Graph&, int)> back;  // empty for leaves
        bool requires_grad = false;
        bool param = false;
    };

    int make(Tensor value, std::vector<int> parents, std::function<void(Graph&, int)> back,
             const char* op_name);
    Tensor& grad_buf(int id);
    bool wants_grad(int id) const { return nodes_[static_cast<std::size_t>(id)].requires_grad; }
    const Node& node(int id) const { return nodes_[static_cast<std::size_t>(id)]; }
    Node& node(int id) { return nodes_[static_cast<std::size_t>(id)]; }
    void check_var(Var v, const char* who) const;

    std::vector<Node> nodes_;
    bool ran_backward_ = false;
};

// Maps parameter tensors owned by model structs onto graph leaves, deduplicated
// by address, preserving first-bind order so optimizer sweeps are deterministic.
class Binder {
  public:
    explicit Binder(Graph& g) : g_(&g) {}

    Var param(Tensor& t);
    Var operator()(Tensor& t) { return param(t); }
    Var constant(const Tensor& t) { return g_->constant(t); }

    const std::vector<std::pair<Tensor*, Var>>& params() const { return order_; }
    Graph& graph() { return *g_; }

  private:
    Graph* g_;
    std::vector<std::pair<Tensor*, Var>> order_;
    std::unordered_map<const Tensor*, Var> bound_;
};

// SGD with momentum and decoupled-from-nothing classic weight decay
// (g <- g + wd*p; v <- mu*v + g; p <- p - lr*v). Velocity slots are keyed by
// caller-supplied stable names so parameter containers may move in memory.
struct SgdConfig {
    double lr = 1e-4;
    double momentum = 0.9;
    double weight_decay = 1e-4;
};

class Sgd {
  public:
    void update(const std::string& key, Tensor& parameter, const Tensor& gradient,
                const SgdConfig& cfg);
    void forget(const std::string& key) { velocity_.erase(key); }
    void reset() { velocity_.clear(); }

  private:
    std::unordered_map<std::string, Tensor> velocity_;
};

}  // namespace faircc
