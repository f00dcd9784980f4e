#include "sasq/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "sasq/kernels.hpp"

namespace sasq {

// ------------------------------------------------------------------ shape

int64_t Shape::numel() const {
    int64_t n = 1;
    for (int64_t d : dims) n *= d;
    return n;
}

std::string Shape::str() const {
    std::string s = "[";
    for (size_t i = 0; i < dims.size(); ++i) {
        if (i) s += "x";
        s += std::to_string(dims[i]);
    }
    return s + "]";
}

void Shape::validate() const {
    if (dims.empty()) throw ShapeError("shape must have rank >= 1");
    int64_t n = 1;
    for (int64_t d : dims) {
        if (d <= 0) throw ShapeError("shape " + str() + " has a non-positive dimension");
        if (d > std::numeric_limits<int64_t>::max() / n)
            throw ShapeError("shape " + str() + " overflows the index range");
        n *= d;
    }
}

FloatTensor tensor2(std::initializer_list<std::initializer_list<float>> rows) {
    const int64_t r = static_cast<int64_t>(rows.size());
    const int64_t c = static_cast<int64_t>(rows.begin()->size());
    std::vector<float> data;
    data.reserve(static_cast<size_t>(r * c));
    for (const auto& row : rows) {
        if (static_cast<int64_t>(row.size()) != c)
            throw ShapeError("tensor2: ragged rows");
        data.insert(data.end(), row.begin(), row.end());
    }
    return FloatTensor(Shape{r, c}, std::move(data));
}

// ------------------------------------------------------------ tensor ops

namespace {

void require_same_shape(const char* op, const FloatTensor& a, const FloatTensor& b) {
    if (!(a.shape() == b.shape()))
        throw ShapeError(std::string(op) + ": shape mismatch: " + a.shape().str() +
                         " vs " + b.shape().str());
}

void require_rank2(const char* op, const FloatTensor& m) {
    if (m.rank() != 2)
        throw ShapeError(std::string(op) + " requires a rank-2 tensor, have " + m.shape().str());
}

template <class Fn>
FloatTensor map2(const char* op, const FloatTensor& a, const FloatTensor& b, Fn fn) {
    require_same_shape(op, a, b);
    FloatTensor out(a.shape());
    const int64_t n = a.numel();
    for (int64_t i = 0; i < n; ++i) out[i] = fn(a[i], b[i]);
    return out;
}

}  // namespace

FloatTensor matmul(const FloatTensor& a, const FloatTensor& b) {
    require_rank2("matmul", a);
    require_rank2("matmul", b);
    if (a.cols() != b.rows())
        throw ShapeError("matmul: inner dimensions mismatch: " + a.shape().str() +
                         " vs " + b.shape().str());
    FloatTensor y(Shape{a.rows(), b.cols()});
    kernels::gemm_f32(a.data(), b.data(), y.data(), static_cast<size_t>(a.rows()),
                      static_cast<size_t>(a.cols()), static_cast<size_t>(b.cols()));
    return y;
}

FloatTensor add(const FloatTensor& a, const FloatTensor& b) {
    return map2("add", a, b, [](float x, float y) { return x + y; });
}

FloatTensor sub(const FloatTensor& a, const FloatTensor& b) {
    return map2("sub", a, b, [](float x, float y) { return x - y; });
}

FloatTensor mul(const FloatTensor& a, const FloatTensor& b) {
    return map2("mul", a, b, [](float x, float y) { return x * y; });
}

FloatTensor div(const FloatTensor& a, const FloatTensor& b) {
    return map2("div", a, b, [](float x, float y) { return x / y; });
}

FloatTensor add_scalar(const FloatTensor& a, float s) {
    FloatTensor out(a.shape());
    for (int64_t i = 0; i < a.numel(); ++i) out[i] = a[i] + s;
    return out;
}

FloatTensor mul_scalar(const FloatTensor& a, float s) {
    FloatTensor out(a.shape());
    for (int64_t i = 0; i < a.numel(); ++i) out[i] = a[i] * s;
    return out;
}

FloatTensor exp(const FloatTensor& a) {
    FloatTensor out(a.shape());
    for (int64_t i = 0; i < a.numel(); ++i) out[i] = std::exp(a[i]);
    return out;
}

FloatTensor ln(const FloatTensor& a) {
    FloatTensor out(a.shape());
    for (int64_t i = 0; i < a.numel(); ++i) {
        if (!(a[i] > 0.0f))
            throw DomainError("ln: non-positive value " + std::to_string(a[i]) +
                              " at flat index " + std::to_string(i));
        out[i] = std::log(a[i]);
    }
    return out;
}

FloatTensor max_abs_over_axis(const FloatTensor& m, Axis axis) {
    require_rank2("max_abs_over_axis", m);
    const size_t rows = static_cast<size_t>(m.rows());
    const size_t cols = static_cast<size_t>(m.cols());
    const auto& f = kernels::funcs();
    if (axis == Axis::columns) {
        FloatTensor out(Shape{m.cols()});
        f.max_abs_columns(m.data(), rows, cols, out.data());
        return out;
    }
    FloatTensor out(Shape{m.rows()});
    for (size_t r = 0; r < rows; ++r) out[static_cast<int64_t>(r)] = f.max_abs_run(m.data() + r * cols, cols);
    return out;
}

FloatTensor mean_over_axis(const FloatTensor& m, Axis axis) {
    require_rank2("mean_over_axis", m);
    const int64_t rows = m.rows();
    const int64_t cols = m.cols();
    if (axis == Axis::columns) {
        FloatTensor out(Shape{cols});
        for (int64_t c = 0; c < cols; ++c) {
            double s = 0.0;
            for (int64_t r = 0; r < rows; ++r) s += m.at(r, c);
            out[c] = static_cast<float>(s / static_cast<double>(rows));
        }
        return out;
    }
    FloatTensor out(Shape{rows});
    for (int64_t r = 0; r < rows; ++r) {
        double s = 0.0;
        for (int64_t c = 0; c < cols; ++c) s += m.at(r, c);
        out[r] = static_cast<float>(s / static_cast<double>(cols));
    }
    return out;
}

FloatTensor transpose(const FloatTensor& m) {
    require_rank2("transpose", m);
    FloatTensor out(Shape{m.cols(), m.rows()});
    for (int64_t r = 0; r < m.rows(); ++r)
        for (int64_t c = 0; c < m.cols(); ++c) out.at(c, r) = m.at(r, c);
    return out;
}

FloatTensor slice_rows(const FloatTensor& m, int64_t begin, int64_t end) {
    require_rank2("slice_rows", m);
    if (begin < 0 || end > m.rows() || begin >= end)
        throw ShapeError("slice_rows: range [" + std::to_string(begin) + ", " +
                         std::to_string(end) + ") out of bounds for " + m.shape().str());
    FloatTensor out(Shape{end - begin, m.cols()});
    std::copy(m.data() + begin * m.cols(), m.data() + end * m.cols(), out.data());
    return out;
}

FloatTensor slice_cols(const FloatTensor& m, int64_t begin, int64_t end) {
    require_rank2("slice_cols", m);
    if (begin < 0 || end > m.cols() || begin >= end)
        throw ShapeError("slice_cols: range [" + std::to_string(begin) + ", " +
                         std::to_string(end) + ") out of bounds for " + m.shape().str());
    FloatTensor out(Shape{m.rows(), end - begin});
    for (int64_t r = 0; r < m.rows(); ++r)
        for (int64_t c = begin; c < end; ++c) out.at(r, c - begin) = m.at(r, c);
    return out;
}

FloatTensor concat_rows(const std::vector<const FloatTensor*>& parts) {
    if (parts.empty()) throw ShapeError("concat_rows: no inputs");
    const int64_t cols = parts[0]->cols();
    int64_t rows = 0;
    for (const FloatTensor* p : parts) {
        require_rank2("concat_rows", *p);
        if (p->cols() != cols)
            throw ShapeError("concat_rows: column mismatch: " + parts[0]->shape().str() +
                             " vs " + p->shape().str());
        rows += p->rows();
    }
    FloatTensor out(Shape{rows, cols});
    float* dst = out.data();
    for (const FloatTensor* p : parts) {
        std::copy(p->data(), p->data() + p->numel(), dst);
        dst += p->numel();
    }
    return out;
}

}  // namespace sasq
