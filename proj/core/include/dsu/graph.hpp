#pragma once

#include <functional>
#include <unordered_map>
#include <vector>

#include "dsu/ops.hpp"
#include "dsu/tensor.hpp"

namespace dsu {

/// Reverse-mode tape. Operations append nodes in topological order; each
/// node stores its value, its input ids, and a backward rule. A Graph is
/// single-owner: build one per forward pass and call backward() at most
/// once (the tape is consumed).
class Graph {
public:
    using Id = int;

    class GradMap {
    public:
        bool contains(Id id) const { return grads_.count(id) != 0; }
        const Tensor& at(Id id) const;
        /// Gradient for `id`, or zeros shaped like `like` when the node
        /// was not reached by backpropagation.
        Tensor get_or_zero(Id id, const Tensor& like) const;
        void put(Id id, Tensor g) { grads_[id] = std::move(g); }
        Tensor* find(Id id);

    private:
        std::unordered_map<Id, Tensor> grads_;
    };

    Graph() = default;
    Graph(const Graph&) = delete;
    Graph& operator=(const Graph&) = delete;
    Graph(Graph&&) = default;
    Graph& operator=(Graph&&) = default;

    /// Inserts a constant or parameter value.
    Id leaf(Tensor value, bool requires_grad = false);

    const Tensor& value(Id id) const { return node(id).value; }
    bool requires_grad(Id id) const { return node(id).requires_grad; }
    std::size_t size() const { return nodes_.size(); }
    bool consumed() const { return consumed_; }

    Id elementwise(Ewise op, Id a, Id b);
    Id add(Id a, Id b) { return elementwise(Ewise::Add, a, b); }
    Id sub(Id a, Id b) { return elementwise(Ewise::Sub, a, b); }
    Id mul(Id a, Id b) { return elementwise(Ewise::Mul, a, b); }
    Id div(Id a, Id b) { return elementwise(Ewise::Div, a, b); }

    Id add_scalar(Id a, double s);
    Id mul_scalar(Id a, double s);

    Id reduce(Reduction op, Id x, std::vector<int> axes, Divisor divisor = Divisor::N);
    Id mean(Id x, std::vector<int> axes) { return reduce(Reduction::Mean, x, std::move(axes)); }
    Id variance(Id x, std::vector<int> axes, Divisor d = Divisor::N) {
        return reduce(Reduction::Variance, x, std::move(axes), d);
    }

    Id sqrt(Id x);
    Id relu(Id x);
    Id clamp_min(Id x, double floor);
    Id conv2d(Id x, Id w, Id bias, int stride, int pad);
    Id avg_pool(Id x, int kernel, int stride);
    Id global_avg_pool(Id x);
    Id reshape(Id x, std::vector<int> shape);
    Id linear(Id x, Id w, Id bias);
    Id gather_rows(Id x, std::vector<int> rows);
    Id softmax_cross_entropy(Id logits, std::vector<int> labels);
    Id sum(Id x);

    /// Backpropagates from a scalar loss; returns gradients for every
    /// gradient-requiring node that was reached. Consumes the tape.
    GradMap backward(Id loss);

private:
    // Receives upstream gradient, returns one gradient per input (an
    // undefined Tensor skips that input).
    using BackwardFn = std::function<std::vector<Tensor>(const Graph&, const Tensor&)>;

    struct Node {
        Tensor value;
        bool requires_grad = false;
        std::vector<Id> inputs;
        BackwardFn backward;
    };

    const Node& node(Id id) const;
    Id push(Tensor value, std::vector<Id> inputs, BackwardFn fn);
    bool any_requires_grad(const std::vector<Id>& ids) const;

    std::vector<Node> nodes_;
    bool consumed_ = false;
};

} // namespace dsu
