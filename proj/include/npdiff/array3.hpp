#pragma once

#include <cstddef>
#include <span>
#include <vector>

namespace npdiff {

// Dense row-major 3-D array of doubles, indexed [i][j][k].
class Array3 {
public:
    Array3() = default;
    Array3(std::size_t n0, std::size_t n1, std::size_t n2, double fill = 0.0)
        : n0_(n0), n1_(n1), n2_(n2), data_(n0 * n1 * n2, fill) {}

    std::size_t dim0() const { return n0_; }
    std::size_t dim1() const { return n1_; }
    std::size_t dim2() const { return n2_; }
    std::size_t size() const { return data_.size(); }
    bool empty() const { return data_.empty(); }

    double &operator()(std::size_t i, std::size_t j, std::size_t k) {
        return data_[(i * n1_ + j) * n2_ + k];
    }
    double operator()(std::size_t i, std::size_t j, std::size_t k) const {
        return data_[(i * n1_ + j) * n2_ + k];
    }

    std::span<double> flat() { return data_; }
    std::span<const double> flat() const { return data_; }
    std::vector<double> &storage() { return data_; }
    const std::vector<double> &storage() const { return data_; }

    bool same_shape(const Array3 &other) const {
        return n0_ == other.n0_ && n1_ == other.n1_ && n2_ == other.n2_;
    }

    friend bool operator==(const Array3 &, const Array3 &) = default;

private:
    std::size_t n0_ = 0;
    std::size_t n1_ = 0;
    std::size_t n2_ = 0;
    std::vector<double> data_;
};

} // namespace npdiff
