#include "dsu/graph.hpp"

#include <stdexcept>

namespace dsu {

namespace od = ops::detail;

const Tensor& Graph::GradMap::at(Id id) const {
    auto it = grads_.find(id);
    if (it == grads_.end())
        throw std::out_of_range("GradMap: no gradient for node " + std::to_string(id));
    return it->second;
}

Tensor Graph::GradMap::get_or_zero(Id id, const Tensor& like) const {
    auto it = grads_.find(id);
    if (it != grads_.end()) return it->second;
    return Tensor::zeros(like.shape(), like.dtype());
}

Tensor* Graph::GradMap::find(Id id) {
    auto it = grads_.find(id);
    return it == grads_.end() ? nullptr : &it->second;
}

const Graph::Node& Graph::node(Id id) const {
    if (id < 0 || static_cast<std::size_t>(id) >= nodes_.size())
        throw std::out_of_range("Graph: invalid node id " + std::to_string(id));
    return nodes_[static_cast<std::size_t>(id)];
}

Graph::Id Graph::push(Tensor value, std::vector<Id> inputs, BackwardFn fn) {
    Node n;
    n.value = std::move(value);
    n.requires_grad = any_requires_grad(inputs);
    n.inputs = std::move(inputs);
    n.backward = std::move(fn);
    nodes_.push_back(std::move(n));
    return static_cast<Id>(nodes_.size()) - 1;
}

bool Graph::any_requires_grad(const std::vector<Id>& ids) const {
    for (Id id : ids)
        if (node(id).requires_grad) return true;
    return false;
}

Graph::Id Graph::leaf(Tensor value, bool requires_grad) {
    Node n;
    n.value = std::move(value);
    n.requires_grad = requires_grad;
    nodes_.push_back(std::move(n));
    return static_cast<Id>(nodes_.size()) - 1;
}

Graph::Id Graph::elementwise(Ewise op, Id a, Id b) {
    Tensor out = ops::elementwise(op, value(a), value(b));
    const auto kind = od::broadcast_kind(value(a).shape(), value(b).shape());
    return push(std::move(out), {a, b},
                [op, a, b, kind](const Graph& g, const Tensor& gout) -> std::vector<Tensor> {
                    const Tensor& av = g.value(a);
                    const Tensor& bv = g.value(b);
                    Tensor ga, gb;
                    switch (op) {
                        case Ewise::Add:
                            ga = gout;
                            gb = od::reduce_broadcast_grad(gout, kind, bv.shape());
                            break;
                        case Ewise::Sub:
                            ga = gout;
                            gb = ops::mul_scalar(od::reduce_broadcast_grad(gout, kind, bv.shape()), -1.0);
                            break;
                        case Ewise::Mul:
                            ga = ops::elementwise(Ewise::Mul, gout, bv);
                            gb = od::reduce_broadcast_grad(ops::elementwise(Ewise::Mul, gout, av),
                                                           kind, bv.shape());
                            break;
                        case Ewise::Div: {
                            ga = ops::elementwise(Ewise::Div, gout, bv);
                            // d/db (a/b) = -a / b^2
                            Tensor t = ops::elementwise(Ewise::Div, ops::elementwise(Ewise::Mul, gout, av), bv);
                            t = ops::elementwise(Ewise::Div, t, bv);
                            gb = ops::mul_scalar(od::reduce_broadcast_grad(t, kind, bv.shape()), -1.0);
                            break;
                        }
                    }
                    return {std::move(ga), std::move(gb)};
                });
}

Graph::Id Graph::add_scalar(Id a, double s) {
    return push(ops::add_scalar(value(a), s), {a},
                [](const Graph&, const Tensor& gout) -> std::vector<Tensor> { return {gout}; });
}

Graph::Id Graph::mul_scalar(Id a, double s) {
    return push(ops::mul_scalar(value(a), s), {a},
                [s](const Graph&, const Tensor& gout) -> std::vector<Tensor> {
                    return {ops::mul_scalar(gout, s)};
                });
}

Graph::Id Graph::reduce(Reduction op, Id x, std::vector<int> axes, Divisor divisor) {
    Tensor out = ops::reduce(op, value(x), axes, divisor);
    const std::vector<int> x_shape = value(x).shape();
    std::int64_t red_n = 1;
    for (int ax : axes) red_n *= x_shape[static_cast<std::size_t>(ax)];
    if (op == Reduction::Mean) {
        return push(std::move(out), {x},
                    [x_shape, axes, red_n](const Graph&, const Tensor& gout) -> std::vector<Tensor> {
                        return {od::expand_reduce_grad(gout, x_shape, axes,
                                                       1.0 / static_cast<double>(red_n))};
                    });
    }
    // variance: d/dx_i = 2 (x_i - mean) / div  (exact for the population
    // divisor; mean's own dependence cancels)
    Tensor mean_v = ops::reduce(Reduction::Mean, value(x), axes);
    const std::int64_t div = divisor == Divisor::N ? red_n : red_n - 1;
    return push(std::move(out), {x},
                [x, x_shape, axes, div, mean_v](const Graph& g, const Tensor& gout) -> std::vector<Tensor> {
                    Tensor centered = ops::elementwise(
                        Ewise::Sub, g.value(x), od::expand_reduce_grad(mean_v, x_shape, axes, 1.0));
                    Tensor scaled = od::expand_reduce_grad(gout, x_shape, axes,
                                                           2.0 / static_cast<double>(div));
                    return {ops::elementwise(Ewise::Mul, scaled, centered)};
                });
}

Graph::Id Graph::sqrt(Id x) {
    Tensor out = ops::sqrt(value(x));
    return push(out, {x}, [out](const Graph&, const Tensor& gout) -> std::vector<Tensor> {
        Tensor g = ops::elementwise(Ewise::Div, gout, ops::mul_scalar(out, 2.0));
        return {std::move(g)};
    });
}

Graph::Id Graph::relu(Id x) {
    return push(ops::relu(value(x)), {x},
                [x](const Graph& g, const Tensor& gout) -> std::vector<Tensor> {
                    const Tensor& xv = g.value(x);
                    Tensor gx = gout;
                    for (std::int64_t i = 0; i < gx.numel(); ++i)
                        if (xv.at(i) <= 0.0) gx.set(i, 0.0);
                    return {std::move(gx)};
                });
}

Graph::Id Graph::clamp_min(Id x, double floor) {
    return push(ops::clamp_min(value(x), floor), {x},
                [x, floor](const Graph& g, const Tensor& gout) -> std::vector<Tensor> {
                    const Tensor& xv = g.value(x);
                    Tensor gx = gout;
                    for (std::int64_t i = 0; i < gx.numel(); ++i)
                        if (xv.at(i) <= floor) gx.set(i, 0.0);
                    return {std::move(gx)};
                });
}

Graph::Id Graph::conv2d(Id x, Id w, Id bias, int stride, int pad) {
    Tensor out = ops::conv2d(value(x), value(w), value(bias), stride, pad);
    return push(std::move(out), {x, w, bias},
                [x, w, stride, pad](const Graph& g, const Tensor& gout) -> std::vector<Tensor> {
                    auto grads = od::conv2d_backward(g.value(x), g.value(w), gout, stride, pad);
                    return {std::move(grads.gx), std::move(grads.gw), std::move(grads.gb)};
                });
}

Graph::Id Graph::avg_pool(Id x, int kernel, int stride) {
    Tensor out = ops::avg_pool(value(x), kernel, stride);
    const std::vector<int> x_shape = value(x).shape();
    return push(std::move(out), {x},
                [x_shape, kernel, stride](const Graph&, const Tensor& gout) -> std::vector<Tensor> {
                    return {od::avg_pool_backward(gout, x_shape, kernel, stride)};
                });
}

Graph::Id Graph::global_avg_pool(Id x) {
    Tensor out = ops::global_avg_pool(value(x));
    const std::vector<int> x_shape = value(x).shape();
    return push(std::move(out), {x},
                [x_shape](const Graph&, const Tensor& gout) -> std::vector<Tensor> {
                    return {od::global_avg_pool_backward(gout, x_shape)};
                });
}

Graph::Id Graph::reshape(Id x, std::vector<int> shape) {
    Tensor out = value(x).reshaped(shape);
    const std::vector<int> x_shape = value(x).shape();
    return push(std::move(out), {x},
                [x_shape](const Graph&, const Tensor& gout) -> std::vector<Tensor> {
                    return {gout.reshaped(x_shape)};
                });
}

Graph::Id Graph::linear(Id x, Id w, Id bias) {
    Tensor out = ops::linear(value(x), value(w), value(bias));
    return push(std::move(out), {x, w, bias},
                [x, w](const Graph& g, const Tensor& gout) -> std::vector<Tensor> {
                    auto grads = od::linear_backward(g.value(x), g.value(w), gout);
                    return {std::move(grads.gx), std::move(grads.gw), std::move(grads.gb)};
                });
}

Graph::Id Graph::gather_rows(Id x, std::vector<int> rows) {
    Tensor out = ops::gather_rows(value(x), rows);
    const int b = value(x).dim(0);
    return push(std::move(out), {x},
                [rows, b](const Graph&, const Tensor& gout) -> std::vector<Tensor> {
                    Tensor gx = od::gather_rows_backward(gout, rows);
                    if (gx.dim(0) != b) {
                        // rows never touched the tail of the batch; pad with zeros
                        std::vector<int> full = gx.shape();
                        full[0] = b;
                        Tensor padded = Tensor::zeros(full, gx.dtype());
                        for (std::int64_t i = 0; i < gx.numel(); ++i) padded.set(i, gx.at(i));
                        gx = std::move(padded);
                    }
                    return {std::move(gx)};
                });
}

Graph::Id Graph::softmax_cross_entropy(Id logits, std::vector<int> labels) {
    Tensor out = ops::softmax_cross_entropy(value(logits), labels);
    return push(std::move(out), {logits},
                [logits, labels](const Graph& g, const Tensor& gout) -> std::vector<Tensor> {
                    return {od::softmax_ce_backward(g.value(logits), labels, gout.at(0))};
                });
}

Graph::Id Graph::sum(Id x) {
    Tensor out = ops::sum(value(x));
    const std::vector<int> x_shape = value(x).shape();
    return push(std::move(out), {x},
                [x_shape](const Graph&, const Tensor& gout) -> std::vector<Tensor> {
                    return {Tensor::full(x_shape, gout.at(0), gout.dtype())};
                });
}

Graph::GradMap Graph::backward(Id loss) {
    if (consumed_) throw NumericalError("backward: graph already consumed");
    const Node& loss_node = node(loss);
    if (loss_node.value.numel() != 1)
        throw ShapeError("backward: loss must be scalar, got " +
                         shape_str(loss_node.value.shape()));
    consumed_ = true;

    GradMap grads;
    grads.put(loss, Tensor::full({1}, 1.0, loss_node.value.dtype()));

    for (Id id = loss; id >= 0; --id) {
        const Node& n = nodes_[static_cast<std::size_t>(id)];
        if (!n.requires_grad || !n.backward) continue;
        Tensor* gout = grads.find(id);
        if (!gout) continue;
        std::vector<Tensor> input_grads = n.backward(*this, *gout);
        if (input_grads.size() != n.inputs.size())
            throw std::logic_error("backward rule returned wrong arity");
        for (std::size_t i = 0; i < n.inputs.size(); ++i) {
            const Id inp = n.inputs[i];
            if (!node(inp).requires_grad || !input_grads[i].defined()) continue;
            if (Tensor* existing = grads.find(inp))
                od::accumulate(*existing, input_grads[i]);
            else
                grads.put(inp, std::move(input_grads[i]));
        }
    }
    return grads;
}

} // namespace dsu
