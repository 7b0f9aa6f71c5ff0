#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "relnet/tensor.hpp"

namespace relnet {

using NodeId = std::uint32_t;
inline constexpr NodeId kNoNode = 0xffffffffu;

// Closed vocabulary of differentiable operations. Each kind has a hand-derived
// local gradient in Tape::backward_seed. Align and Context are fused forms of
// the additive attention score and the weighted context sum; they store only
// their (small) outputs and recompute intermediates during the backward sweep.
enum class Op : std::uint8_t {
    Leaf,          // parameter or constant; no parents
    MatMul,        // A (m x k) * B (k x n)
    Add,           // same-shape elementwise sum
    AddBias,       // A (r x c) + bias (r x 1), bias broadcast over columns
    Mul,           // same-shape elementwise product
    Tanh,
    Sigmoid,
    ModRelu,       // parents: z (r x c), bias (r x 1)
    SoftmaxCols,   // column-wise softmax
    ConcatRows,    // variadic: stack parents by rows (equal column counts)
    SliceRows,     // row range [begin, end) of the parent
    Scale,         // elementwise multiply by a compile-time-known scalar
    SumAll,        // scalar sum of all elements
    Align,         // parents: ws (n x b), uh (n x b), v (n x 1) -> (1 x b) of v^T tanh(ws + uh)
    Context,       // parents: alpha (K x b), m_1..m_K (n x b) -> sum_i alpha_i-row-weighted m_i
    CrossEntropy,  // parent: logits (C x b); aux targets; scalar sum over batch
};

struct Node {
    Op op = Op::Leaf;
    std::vector<NodeId> parents;
    Tensor value;
    // op-specific payload
    Tensor aux;                     // Align: cached tanh(ws + uh); freed by backward
    double scale = 0.0;             // Scale
    long slice_begin = 0;           // SliceRows
    long slice_end = 0;
    std::vector<int> targets;       // CrossEntropy: class index per batch column
    bool requires_grad = false;     // Leaf: parameter vs constant
};

// Append-only record of a dynamically built computation graph. Parents always
// precede children, so node ids are a topological order by construction.
// Single-threaded; independent tapes may run in parallel.
class Tape {
public:
    NodeId param(Tensor v);                  // leaf that accumulates gradient
    NodeId constant(Tensor v);               // leaf without gradient

    NodeId matmul(NodeId a, NodeId b);
    NodeId add(NodeId a, NodeId b);
    NodeId add_bias(NodeId a, NodeId bias);
    NodeId mul(NodeId a, NodeId b);
    NodeId tanh(NodeId z);
    NodeId sigmoid(NodeId z);
    NodeId modrelu(NodeId z, NodeId bias);
    NodeId softmax_cols(NodeId z);
    NodeId concat_rows(std::span<const NodeId> parts);
    NodeId slice_rows(NodeId a, long begin, long end);
    NodeId scale(NodeId a, double factor);
    NodeId sum_all(NodeId a);
    NodeId align(NodeId ws, NodeId uh, NodeId v);
    NodeId context(NodeId alpha, std::span<const NodeId> members);
    NodeId cross_entropy(NodeId logits, std::vector<int> targets);

    // Flag an interior node so its gradient survives backward(). Must be set
    // before backward runs.
    void mark_probe(NodeId id);

    // Reverse sweep from a scalar loss. Fan-out gradients accumulate by
    // addition in reverse topological order; repeated calls are bit-identical.
    void backward(NodeId loss);
    // Reverse sweep seeded with an arbitrary cotangent at `from`.
    void backward_seed(NodeId from, Tensor seed);

    // Full Jacobian d out / d in, built column-by-column with one-hot seeds.
    // Rows index flattened `out`, columns flattened `in`. If `in` is
    // unreachable from `out` the result is the zero matrix.
    Tensor jacobian(NodeId out, NodeId in);

    const Tensor& value(NodeId id) const;
    // Gradient of the last backward() target w.r.t. this node; the node must
    // be a parameter leaf or a probed node.
    const Tensor& grad(NodeId id) const;

    std::size_t size() const { return nodes_.size(); }
    const Node& node(NodeId id) const { return nodes_[id]; }

private:
    NodeId push(Node n);
    void check_parent(NodeId id) const;
    void accumulate(NodeId id, Tensor delta);
    void accumulate_ref(NodeId id, const Tensor& delta);
    Tensor& grad_buffer(NodeId id);

    std::vector<Node> nodes_;
    std::vector<std::uint8_t> probed_;
    std::vector<Tensor> grads_;
    bool backward_done_ = false;
};

}  // namespace relnet
