#ifndef WSED_TENSOR_HPP
#define WSED_TENSOR_HPP

#include <Eigen/Dense>

#include <cstdint>
#include <initializer_list>
#include <numeric>
#include <string>
#include <vector>

#include "wsed/error.hpp"

namespace wsed {

using Index = std::int64_t;

/// Row-major dense matrix; all rank-2 views of tensor data use this layout.
using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatMap = Eigen::Map<RowMatrix>;
using ConstMatMap = Eigen::Map<const RowMatrix>;
using VecMap = Eigen::Map<Eigen::VectorXd>;
using ConstVecMap = Eigen::Map<const Eigen::VectorXd>;
using ArrMap = Eigen::Map<Eigen::ArrayXd>;
using ConstArrMap = Eigen::Map<const Eigen::ArrayXd>;

/// Dense f64 tensor with row-major contiguous storage. Rank 0 holds a single
/// scalar. A default-constructed Tensor is empty and used to mean "absent"
/// (e.g. a gradient that was never accumulated).
class Tensor {
public:
    Tensor() = default;

    explicit Tensor(std::vector<Index> shape) : shape_(std::move(shape)) {
        for (Index d : shape_) {
            if (d <= 0) throw ShapeError("tensor dimension must be positive, got shape " + shape_string(shape_));
        }
        data_.assign(static_cast<std::size_t>(count(shape_)), 0.0);
    }

    static Tensor zeros(std::vector<Index> shape) { return Tensor(std::move(shape)); }

    static Tensor scalar(double v) {
        Tensor t{std::vector<Index>{}};
        t.data_[0] = v;
        return t;
    }

    static Tensor from(std::vector<Index> shape, std::initializer_list<double> values) {
        Tensor t(std::move(shape));
        if (static_cast<std::size_t>(t.size()) != values.size())
            throw ShapeError("initializer size does not match shape " + t.shape_str());
        std::copy(values.begin(), values.end(), t.data_.begin());
        return t;
    }

    bool empty() const { return data_.empty(); }
    Index rank() const { return static_cast<Index>(shape_.size()); }
    Index size() const { return static_cast<Index>(data_.size()); }
    Index dim(Index i) const { return shape_.at(static_cast<std::size_t>(i)); }
    const std::vector<Index>& shape() const { return shape_; }
    std::string shape_str() const { return shape_string(shape_); }

    bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }

    double* data() { return data_.data(); }
    const double* data() const { return data_.data(); }

    double operator[](Index i) const { return data_[static_cast<std::size_t>(i)]; }
    double& operator[](Index i) { return data_[static_cast<std::size_t>(i)]; }

    double scalar_value() const {
        if (size() != 1) throw ContractError("expected scalar tensor, got shape " + shape_str());
        return data_[0];
    }

    /// Rank-2 view. Rank-1 tensors map to a column vector.
    MatMap mat() {
        auto [r, c] = mat_dims();
        return MatMap(data(), r, c);
    }
    ConstMatMap mat() const {
        auto [r, c] = mat_dims();
        return ConstMatMap(data(), r, c);
    }

    /// Reinterpreting rank-2 view; rows*cols must equal size().
    MatMap mat(Index rows, Index cols) {
        check_view(rows, cols);
        return MatMap(data(), rows, cols);
    }
    ConstMatMap mat(Index rows, Index cols) const {
        check_view(rows, cols);
        return ConstMatMap(data(), rows, cols);
    }

    VecMap vec() { return VecMap(data(), size()); }
    ConstVecMap vec() const { return ConstVecMap(data(), size()); }
    ArrMap arr() { return ArrMap(data(), size()); }
    ConstArrMap arr() const { return ConstArrMap(data(), size()); }

    bool all_finite() const {
        for (double v : data_) {
            if (!std::isfinite(v)) return false;
        }
        return true;
    }

    static Index count(const std::vector<Index>& shape) {
        return std::accumulate(shape.begin(), shape.end(), Index{1}, std::multiplies<Index>());
    }

private:
    std::pair<Index, Index> mat_dims() const {
        if (rank() == 2) return {shape_[0], shape_[1]};
        if (rank() == 1) return {shape_[0], 1};
        if (rank() == 0) return {1, 1};
        throw ShapeError("rank-2 view of tensor with shape " + shape_str());
    }
    void check_view(Index rows, Index cols) const {
        if (rows * cols != size())
            throw ShapeError("cannot view " + shape_str() + " as [" + std::to_string(rows) + "x" +
                             std::to_string(cols) + "]");
    }

    std::vector<Index> shape_;
    std::vector<double> data_;
};

} // namespace wsed

#endif
