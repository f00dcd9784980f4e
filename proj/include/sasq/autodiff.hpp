#pragma once

#include <array>
#include <cstdint>
#include <vector>

#include "sasq/tensor.hpp"

namespace sasq::autodiff {

class Tape;

// Handle into a tape.  Cheap to copy; values live in the tape's nodes.
struct Variable {
    Tape* tape = nullptr;
    int32_t id = -1;

    const FloatTensor& value() const;
    bool requires_grad() const;
};

enum class OpKind : uint8_t {
    leaf,
    add,
    sub,
    mul,
    mul_scalar,
    add_row_broadcast,
    mul_row_broadcast,
    div_row_broadcast,
    matmul,
    transpose,
    slice_cols,
    concat_cols,
    embed_gather,
    rms_norm,
    softmax_causal_rows,
    gelu,
    ste_round,
    ste_clamp,
    cross_entropy_mean,
    mean_scalars,
    sum_all,
};

// Append-only reverse-mode tape.  Each recorded node keeps its output value
// plus the minimal extras backward needs; backward() runs once, walking the
// tape in reverse with deterministic accumulation order (gradients are only
// materialized for nodes on a requires_grad path).
class Tape {
public:
    Tape() = default;
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    Variable leaf(FloatTensor value, bool requires_grad);

    Variable add(Variable a, Variable b);
    Variable sub(Variable a, Variable b);
    Variable mul(Variable a, Variable b);
    Variable mul_scalar(Variable a, float c);

    // m is [M x N]; row is [N], or [1] to broadcast a single scalar.
    Variable add_row_broadcast(Variable m, Variable row);
    Variable mul_row_broadcast(Variable m, Variable row);
    Variable div_row_broadcast(Variable m, Variable row);

    Variable matmul(Variable a, Variable b);
    Variable transpose(Variable a);
    Variable slice_cols(Variable a, int64_t begin, int64_t end);
    Variable concat_cols(const std::vector<Variable>& parts);

    Variable embed_gather(Variable table, std::vector<int32_t> ids);
    Variable rms_norm(Variable x, Variable gain, float eps);
    Variable softmax_causal_rows(Variable scores, int64_t query_offset);
    Variable gelu(Variable x);
    Variable cross_entropy_mean(Variable logits, std::vector<int32_t> targets);

    // Straight-through estimators: forward rounds/clamps, backward passes
    // the gradient through (clamp zeroes it outside [lo, hi], boundary
    // values included).
    Variable ste_round(Variable v);
    Variable ste_clamp(Variable v, float lo, float hi);

    Variable mean_scalars(const std::vector<Variable>& xs);
    Variable sum_all(Variable a);

    // Seeds d(loss)=1 and accumulates gradients tape-backwards.  loss must
    // be scalar; a second call on the same tape throws.
    void backward(Variable loss);

    bool has_grad(Variable v) const;
    const FloatTensor& grad(Variable v) const;

    // Ids (ascending) of nodes holding a materialized gradient.
    std::vector<int32_t> grad_ids() const;

    size_t size() const { return nodes_.size(); }
    const FloatTensor& value_of(int32_t id) const { return node(id).value; }
    bool requires_grad_of(int32_t id) const { return node(id).needs; }

private:
    struct Node {
        OpKind kind = OpKind::leaf;
        std::array<int32_t, 2> in{-1, -1};
        std::vector<int32_t> in_many;  // concat_cols / mean_scalars only
        FloatTensor value;
        FloatTensor grad;
        FloatTensor aux;  // op extras: inv_rms, tanh(u), probs, ...
        std::vector<int32_t> ids;  // gather indices / CE targets
        float f0 = 0.0f, f1 = 0.0f;
        int64_t i0 = 0;
        bool needs = false;
        bool has_grad = false;
    };

    Node& node(int32_t id) { return nodes_[static_cast<size_t>(id)]; }
    const Node& node(int32_t id) const { return nodes_[static_cast<size_t>(id)]; }
    Variable push(Node n);
    Variable check(Variable v) const;  // belongs to this tape, valid id
    FloatTensor& grad_buf(int32_t id); // zero-init on first touch
    void backward_node(int32_t id);

    std::vector<Node> nodes_;
    bool backward_done_ = false;
};

inline const FloatTensor& Variable::value() const { return tape->value_of(id); }
inline bool Variable::requires_grad() const { return tape->requires_grad_of(id); }

}  // namespace sasq::autodiff
