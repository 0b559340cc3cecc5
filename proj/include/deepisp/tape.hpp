#pragma once

#include <functional>
#include <stdexcept>
#include <utility>
#include <vector>

#include "deepisp/tensor.hpp"

namespace deepisp {

/// Handle to a node on a Tape.
struct Value {
    int id = -1;
    bool valid() const { return id >= 0; }
};

/// Context handed to an op's backward function. `upstream` is dLoss/dSelf,
/// `inputs` are the saved forward inputs, `input_grads` are accumulators
/// (zero-initialized, same shape as the inputs).
struct BackwardCtx {
    const Tensor& upstream;
    const Tensor& self;
    const std::vector<const Tensor*>& inputs;
    const std::vector<Tensor*>& input_grads;
};

using BackwardFn = std::function<void(const BackwardCtx&)>;

/// Reverse-mode tape. Records ops in execution order (which is a topological
/// order by construction) and rebuilds per forward pass; one backward sweep
/// fills gradients for every node reachable from the loss. Leaves that the
/// loss does not depend on keep zero gradients.
class Tape {
public:
    /// Registers a leaf (input or parameter).
    Value input(Tensor t) { return record(std::move(t), {}, nullptr); }

    /// Extension point: records one op. `parents` must already live on this
    /// tape. The forward output is computed by the caller.
    Value record(Tensor out, std::vector<Value> parents, BackwardFn backward) {
        Node node;
        node.value = std::move(out);
        node.parents.reserve(parents.size());
        for (Value p : parents) {
            if (!p.valid() || p.id >= static_cast<int>(nodes_.size()))
                throw std::invalid_argument("tape: parent node is not on this tape");
            node.parents.push_back(p.id);
        }
        node.backward = std::move(backward);
        nodes_.push_back(std::move(node));
        return Value{static_cast<int>(nodes_.size()) - 1};
    }

    int size() const { return static_cast<int>(nodes_.size()); }

    const Tensor& value(Value v) const { return node(v).value; }

    /// Gradient of the last backward() loss w.r.t. this node. Defined for
    /// every leaf and every node reachable from the loss.
    const Tensor& grad(Value v) const {
        const Tensor& g = grads_.at(static_cast<size_t>(check(v)));
        if (g.empty()) throw std::logic_error("tape: gradient not populated; node unreachable from loss or backward() not run");
        return g;
    }

    /// Reverse accumulation from a scalar loss.
    void backward(Value loss) {
        int root = check(loss);
        if (nodes_[static_cast<size_t>(root)].value.size() != 1)
            throw std::invalid_argument("tape: backward requires a scalar loss, got shape " +
                                        shape_str(nodes_[static_cast<size_t>(root)].value.shape()));

        std::vector<char> reachable(nodes_.size(), 0);
        reachable[static_cast<size_t>(root)] = 1;
        for (int i = root; i >= 0; --i) {
            if (!reachable[static_cast<size_t>(i)]) continue;
            for (int p : nodes_[static_cast<size_t>(i)].parents) reachable[static_cast<size_t>(p)] = 1;
        }

        grads_.assign(nodes_.size(), Tensor());
        for (size_t i = 0; i < nodes_.size(); ++i)
            if (reachable[i] || nodes_[i].parents.empty()) grads_[i] = Tensor(nodes_[i].value.shape());
        grads_[static_cast<size_t>(root)][0] = 1.0;

        std::vector<const Tensor*> in_values;
        std::vector<Tensor*> in_grads;
        for (int i = root; i >= 0; --i) {
            Node& n = nodes_[static_cast<size_t>(i)];
            if (!reachable[static_cast<size_t>(i)] || n.parents.empty()) continue;
            in_values.clear();
            in_grads.clear();
            for (int p : n.parents) {
                in_values.push_back(&nodes_[static_cast<size_t>(p)].value);
                in_grads.push_back(&grads_[static_cast<size_t>(p)]);
            }
            BackwardCtx ctx{grads_[static_cast<size_t>(i)], n.value, in_values, in_grads};
            n.backward(ctx);
        }
    }

private:
    struct Node {
        Tensor value;
        std::vector<int> parents;
        BackwardFn backward;
    };

    int check(Value v) const {
        if (!v.valid() || v.id >= static_cast<int>(nodes_.size()))
            throw std::invalid_argument("tape: invalid node handle");
        return v.id;
    }

    const Node& node(Value v) const { return nodes_[static_cast<size_t>(check(v))]; }

    std::vector<Node> nodes_;
    std::vector<Tensor> grads_;
};

}  // namespace deepisp
