#pragma once

#include <cstddef>
#include <map>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "selfloc/error.hpp"

namespace selfloc {

/// Dense row-major matrix. Rows are points, columns are channels.
template <typename T>
class Matrix {
public:
    Matrix() = default;
    Matrix(std::size_t rows, std::size_t cols, T fill = T(0))
        : rows_(rows), cols_(cols), data_(rows * cols, fill) {}
    Matrix(std::size_t rows, std::size_t cols, std::vector<T> data)
        : rows_(rows), cols_(cols), data_(std::move(data)) {
        require(data_.size() == rows_ * cols_, Errc::LengthMismatch, "matrix data size");
    }

    std::size_t rows() const noexcept { return rows_; }
    std::size_t cols() const noexcept { return cols_; }
    std::size_t size() const noexcept { return data_.size(); }

    T& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
    const T& operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }

    std::span<T> row(std::size_t r) { return {data_.data() + r * cols_, cols_}; }
    std::span<const T> row(std::size_t r) const { return {data_.data() + r * cols_, cols_}; }

    std::vector<T>& data() noexcept { return data_; }
    const std::vector<T>& data() const noexcept { return data_; }

    template <typename U>
    Matrix<U> cast() const {
        return Matrix<U>(rows_, cols_, std::vector<U>(data_.begin(), data_.end()));
    }

    bool operator==(const Matrix&) const = default;

private:
    std::size_t rows_ = 0;
    std::size_t cols_ = 0;
    std::vector<T> data_;
};

/// A named, shaped block of doubles. Storage is row-major over `shape`.
struct Tensor {
    std::vector<std::size_t> shape;
    std::vector<double> values;

    Tensor() = default;
    explicit Tensor(std::vector<std::size_t> s, double fill = 0.0)
        : shape(std::move(s)), values(element_count(shape), fill) {}

    static std::size_t element_count(const std::vector<std::size_t>& s) {
        return std::accumulate(s.begin(), s.end(), std::size_t{1}, std::multiplies<>());
    }
    std::size_t size() const noexcept { return values.size(); }

    bool operator==(const Tensor&) const = default;
};

/// Name-ordered tensor store. Used for model weights, their gradients and
/// optimizer state; std::map keeps iteration order deterministic.
class TensorStore {
public:
    Tensor& add(const std::string& name, std::vector<std::size_t> shape, double fill = 0.0) {
        auto [it, inserted] = tensors_.insert_or_assign(name, Tensor(std::move(shape), fill));
        return it->second;
    }
    void set(const std::string& name, Tensor t) { tensors_.insert_or_assign(name, std::move(t)); }

    bool contains(const std::string& name) const { return tensors_.count(name) != 0; }

    const Tensor& at(const std::string& name) const {
        auto it = tensors_.find(name);
        if (it == tensors_.end()) fail(Errc::IncompleteWeights, "missing tensor '" + name + "'");
        return it->second;
    }
    Tensor& at(const std::string& name) {
        auto it = tensors_.find(name);
        if (it == tensors_.end()) fail(Errc::IncompleteWeights, "missing tensor '" + name + "'");
        return it->second;
    }

    /// Returns the tensor, creating a zero tensor of the given shape on first use.
    Tensor& accumulator(const std::string& name, const std::vector<std::size_t>& shape) {
        auto it = tensors_.find(name);
        if (it == tensors_.end()) it = tensors_.emplace(name, Tensor(shape)).first;
        return it->second;
    }

    std::size_t total_elements() const {
        std::size_t n = 0;
        for (const auto& [_, t] : tensors_) n += t.size();
        return n;
    }

    auto begin() const { return tensors_.begin(); }
    auto end() const { return tensors_.end(); }
    auto begin() { return tensors_.begin(); }
    auto end() { return tensors_.end(); }
    std::size_t size() const { return tensors_.size(); }

    bool operator==(const TensorStore&) const = default;

private:
    std::map<std::string, Tensor> tensors_;
};

}  // namespace selfloc
