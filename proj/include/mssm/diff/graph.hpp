#pragma once

#include <functional>
#include <map>
#include <memory>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

#include "mssm/tensor.hpp"

namespace mssm::diff {

// Thrown by primitives on inconsistent operand shapes; names the op.
class ShapeError : public std::runtime_error {
public:
    ShapeError(const std::string& op, const std::string& what)
        : std::runtime_error(op + ": " + what) {}
};

// Misuse of the graph API (reading gradients before backward, bad lengths).
class UsageError : public std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct Param;
struct Node;
using NodePtr = std::shared_ptr<Node>;

// One value in the reverse-mode computation graph.
struct Node {
    Tensor value;
    Tensor grad;
    bool grad_init = false;
    bool requires_grad = false;
    const char* op = "leaf";
    Param* bound = nullptr;
    std::vector<NodePtr> parents;
    // Pull-based: reads this node's grad and accumulates into parents.
    std::function<void(Node&)> backward_fn;

    void accumulate(const Tensor& g);
};

// Value-semantic handle onto a graph node.
class Var {
public:
    Var() = default;
    explicit Var(NodePtr n) : node_(std::move(n)) {}

    bool valid() const { return node_ != nullptr; }
    const Tensor& value() const { return node_->value; }
    const Tensor& grad() const {
        if (!node_->grad_init)
            throw UsageError("gradient read before a backward pass reached this node");
        return node_->grad;
    }
    bool has_grad() const { return node_->grad_init; }
    bool requires_grad() const { return node_->requires_grad; }
    Node* node() const { return node_.get(); }
    NodePtr ptr() const { return node_; }

    const std::vector<std::int64_t>& shape() const { return node_->value.shape(); }
    std::int64_t rows() const { return node_->value.dim(0); }
    std::int64_t cols() const { return node_->value.dim(1); }
    double scalar() const {
        if (node_->value.numel() != 1) throw UsageError("scalar() on non-scalar node");
        return node_->value[0];
    }

private:
    NodePtr node_;
};

// A named trainable tensor plus its accumulated gradient and Adam state.
struct Param {
    std::string name;
    Tensor value;
    Tensor grad;
    bool grad_init = false;
    Tensor adam_m, adam_v;
    std::int64_t adam_t = 0;

    void zero_grad() {
        grad_init = false;
        grad = Tensor();
    }
    void add_grad(const Tensor& g);
};

// Owns parameters; pointers remain stable across insertions.
class ParamStore {
public:
    Param& add(const std::string& name, Tensor init);
    Param& at(const std::string& name);
    const Param& at(const std::string& name) const;
    Param* find(const std::string& name);
    bool contains(const std::string& name) const { return params_.count(name) > 0; }
    std::vector<Param*> all();                       // name-ordered
    std::vector<Param*> with_prefix(const std::string& prefix);
    std::size_t size() const { return params_.size(); }
    void zero_all_grads();

private:
    std::map<std::string, std::unique_ptr<Param>> params_;
};

// Per-step graph context. Parameter leaves are memoized so fan-out within a
// step accumulates on one node; backward() folds leaf gradients back into the
// bound Params.
class Tape {
public:
    Var param(Param& p);
    Var input(Tensor t);     // differentiable non-parameter leaf
    Var constant(Tensor t);  // no gradient

    // Reverse-mode sweep from a scalar root. Accumulates into Param::grad for
    // every parameter leaf this tape created.
    void backward(const Var& root);

    // Drops parameter gradients accumulated through this tape (all bound
    // params), used after an update that should not leak into other groups.
    void clear_param_grads();

private:
    std::unordered_map<Param*, Var> param_leaves_;
};

// Runs the reverse sweep on an arbitrary scalar root without folding into
// Params (input() leaves still receive gradients).
void backward_nodes(const Var& root);

// Spec-facing names: forward evaluation is eager, so eval_forward just reads
// the cached value at the root.
inline const Tensor& eval_forward(const Var& root) { return root.value(); }

Var make_leaf(Tensor value, bool requires_grad);

}  // namespace mssm::diff
