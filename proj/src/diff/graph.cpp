#include "mssm/diff/graph.hpp"

#include <algorithm>
#include <unordered_set>

#include "mssm/kernels/kernels.hpp"

namespace mssm::diff {

void Node::accumulate(const Tensor& g) {
    if (!g.same_shape(value))
        throw ShapeError(op, "gradient shape " + Tensor::shape_str(g.shape()) +
                                 " does not match value shape " + Tensor::shape_str(value.shape()));
    if (!grad_init) {
        grad = g;
        grad_init = true;
    } else {
        kernels::active().add(grad.data(), g.data(), grad.data(),
                              static_cast<std::size_t>(grad.numel()));
    }
}

void Param::add_grad(const Tensor& g) {
    if (!grad_init) {
        grad = g;
        grad_init = true;
    } else {
        kernels::active().add(grad.data(), g.data(), grad.data(),
                              static_cast<std::size_t>(grad.numel()));
    }
}

Param& ParamStore::add(const std::string& name, Tensor init) {
    if (params_.count(name)) throw UsageError("duplicate parameter name: " + name);
    auto p = std::make_unique<Param>();
    p->name = name;
    p->value = std::move(init);
    Param& ref = *p;
    params_[name] = std::move(p);
    return ref;
}

Param& ParamStore::at(const std::string& name) {
    auto it = params_.find(name);
    if (it == params_.end()) throw UsageError("unknown parameter: " + name);
    return *it->second;
}

const Param& ParamStore::at(const std::string& name) const {
    auto it = params_.find(name);
    if (it == params_.end()) throw UsageError("unknown parameter: " + name);
    return *it->second;
}

Param* ParamStore::find(const std::string& name) {
    auto it = params_.find(name);
    return it == params_.end() ? nullptr : it->second.get();
}

std::vector<Param*> ParamStore::all() {
    std::vector<Param*> out;
    out.reserve(params_.size());
    for (auto& [k, v] : params_) out.push_back(v.get());
    return out;
}

std::vector<Param*> ParamStore::with_prefix(const std::string& prefix) {
    std::vector<Param*> out;
    for (auto& [k, v] : params_)
        if (k.rfind(prefix, 0) == 0) out.push_back(v.get());
    return out;
}

void ParamStore::zero_all_grads() {
    for (auto& [k, v] : params_) v->zero_grad();
}

Var make_leaf(Tensor value, bool requires_grad) {
    auto n = std::make_shared<Node>();
    n->value = std::move(value);
    n->requires_grad = requires_grad;
    return Var(std::move(n));
}

Var Tape::param(Param& p) {
    auto it = param_leaves_.find(&p);
    if (it != param_leaves_.end()) return it->second;
    Var v = make_leaf(p.value, true);
    v.node()->bound = &p;
    v.node()->op = "param";
    param_leaves_.emplace(&p, v);
    return v;
}

Var Tape::input(Tensor t) { return make_leaf(std::move(t), true); }

Var Tape::constant(Tensor t) { return make_leaf(std::move(t), false); }

namespace {

// Iterative topological order (root last); only nodes that require grad.
std::vector<Node*> topo_order(Node* root) {
    std::vector<Node*> order;
    std::unordered_set<Node*> done;
    std::vector<std::pair<Node*, std::size_t>> stack;
    stack.emplace_back(root, 0);
    while (!stack.empty()) {
        auto& [n, idx] = stack.back();
        if (idx == 0 && done.count(n)) {
            stack.pop_back();
            continue;
        }
        if (idx < n->parents.size()) {
            Node* next = n->parents[idx].get();
            ++idx;
            if (next->requires_grad && !done.count(next)) stack.emplace_back(next, 0);
        } else {
            done.insert(n);
            order.push_back(n);
            stack.pop_back();
        }
    }
    return order;
}

void run_backward(const Var& root) {
    if (root.value().numel() != 1)
        throw UsageError("backward requires a scalar root, got shape " +
                         Tensor::shape_str(root.value().shape()));
    if (!root.requires_grad()) return;
    Node* r = root.node();
    r->accumulate(Tensor::full(r->value.shape(), 1.0));
    auto order = topo_order(r);
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        Node* n = *it;
        if (n->backward_fn && n->grad_init) n->backward_fn(*n);
    }
}

}  // namespace

void backward_nodes(const Var& root) { run_backward(root); }

void Tape::backward(const Var& root) {
    run_backward(root);
    for (auto& [p, v] : param_leaves_)
        if (v.node()->grad_init) {
            p->add_grad(v.node()->grad);
            // Same tape may be swept twice; avoid double-counting.
            v.node()->grad_init = false;
            v.node()->grad = Tensor();
        }
}

void Tape::clear_param_grads() {
    for (auto& [p, v] : param_leaves_) p->zero_grad();
}

}  // namespace mssm::diff
