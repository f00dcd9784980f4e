#pragma once

#include <cstdint>
#include <initializer_list>
#include <string>
#include <vector>

#include "sasq/error.hpp"

namespace sasq {

// ------------------------------------------------------------------ shape

struct Shape {
    std::vector<int64_t> dims;

    Shape() = default;
    Shape(std::initializer_list<int64_t> d) : dims(d) { validate(); }
    explicit Shape(std::vector<int64_t> d) : dims(std::move(d)) { validate(); }

    int64_t rank() const { return static_cast<int64_t>(dims.size()); }
    int64_t numel() const;
    int64_t operator[](int64_t i) const { return dims[static_cast<size_t>(i)]; }
    bool operator==(const Shape&) const = default;

    std::string str() const;  // e.g. "[2x3]"

private:
    void validate() const;  // rank >= 1, all dims > 0, product fits in int64
};

// ----------------------------------------------------------------- tensor
//
// Dense row-major tensor.  Rank is fixed at construction; the element count
// always matches the shape.  Elementwise access is by flat index or by
// (row, col) for rank-2 tensors.

template <class T>
class TensorT {
public:
    TensorT() = default;

    explicit TensorT(Shape shape)
        : shape_(std::move(shape)), data_(static_cast<size_t>(shape_.numel()), T{}) {}

    TensorT(Shape shape, std::vector<T> data) : shape_(std::move(shape)), data_(std::move(data)) {
        if (static_cast<int64_t>(data_.size()) != shape_.numel())
            throw ShapeError("tensor data size " + std::to_string(data_.size()) +
                             " does not match shape " + shape_.str());
    }

    static TensorT scalar1(T v) { return TensorT(Shape{1}, {v}); }

    const Shape& shape() const { return shape_; }
    int64_t rank() const { return shape_.rank(); }
    int64_t numel() const { return static_cast<int64_t>(data_.size()); }
    bool empty() const { return data_.empty(); }

    T* data() { return data_.data(); }
    const T* data() const { return data_.data(); }
    std::vector<T>& vec() { return data_; }
    const std::vector<T>& vec() const { return data_; }

    T& operator[](int64_t i) { return data_[static_cast<size_t>(i)]; }
    T operator[](int64_t i) const { return data_[static_cast<size_t>(i)]; }

    int64_t rows() const { require_rank2("rows"); return shape_[0]; }
    int64_t cols() const { require_rank2("cols"); return shape_[1]; }

    T& at(int64_t r, int64_t c) { require_rank2("at"); return data_[static_cast<size_t>(r * shape_[1] + c)]; }
    T at(int64_t r, int64_t c) const { require_rank2("at"); return data_[static_cast<size_t>(r * shape_[1] + c)]; }

private:
    void require_rank2(const char* what) const {
        if (shape_.rank() != 2)
            throw ShapeError(std::string(what) + " requires a rank-2 tensor, have " + shape_.str());
    }

    Shape shape_;
    std::vector<T> data_;
};

using FloatTensor = TensorT<float>;
using IntTensor = TensorT<int32_t>;

// Test/helper constructor: rank-2 tensor from nested braces.
FloatTensor tensor2(std::initializer_list<std::initializer_list<float>> rows);

// ------------------------------------------------------------ tensor ops
//
// All ops allocate fresh outputs; inputs are never modified.  Shape
// mismatches throw ShapeError naming both shapes.

enum class Axis { rows, columns };  // the axis the result is indexed by

FloatTensor matmul(const FloatTensor& a, const FloatTensor& b);

FloatTensor add(const FloatTensor& a, const FloatTensor& b);
FloatTensor sub(const FloatTensor& a, const FloatTensor& b);
FloatTensor mul(const FloatTensor& a, const FloatTensor& b);
FloatTensor div(const FloatTensor& a, const FloatTensor& b);
FloatTensor add_scalar(const FloatTensor& a, float s);
FloatTensor mul_scalar(const FloatTensor& a, float s);
FloatTensor exp(const FloatTensor& a);
FloatTensor ln(const FloatTensor& a);  // DomainError on values <= 0

// Per-row (Axis::rows) or per-column (Axis::columns) reductions of a rank-2
// tensor; the result is rank 1 with one entry per row resp. column.
FloatTensor max_abs_over_axis(const FloatTensor& m, Axis axis);
FloatTensor mean_over_axis(const FloatTensor& m, Axis axis);

FloatTensor transpose(const FloatTensor& m);
FloatTensor slice_rows(const FloatTensor& m, int64_t begin, int64_t end);
FloatTensor slice_cols(const FloatTensor& m, int64_t begin, int64_t end);
FloatTensor concat_rows(const std::vector<const FloatTensor*>& parts);

}  // namespace sasq
