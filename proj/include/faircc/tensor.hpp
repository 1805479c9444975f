#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

namespace faircc {

class Rng;

// Dense row-major tensor of 64-bit reals. Shapes carry positive extents and
// product(shape) always equals the element count. Values are plain doubles;
// finiteness is enforced by the ops that produce tensors, not by the container.
class Tensor {
  public:
    Tensor() = default;
    explicit Tensor(std::vector<int> shape);  // zero-filled

    static Tensor zeros(std::vector<int> shape) { return Tensor(std::move(shape)); }
    static Tensor full(std::vector<int> shape, double value);
    static Tensor from(std::vector<int> shape, std::vector<double> data);
    static Tensor scalar(double value) { return from({1}, {value}); }
    static Tensor row_vector(std::vector<double> data);
    // I.i.d. normal entries scaled by `sd`.
    static Tensor randn(std::vector<int> shape, Rng& rng, double sd = 1.0);

    const std::vector<int>& shape() const { return shape_; }
    int rank() const { return static_cast<int>(shape_.size()); }
    int dim(int i) const { return shape_[static_cast<std::size_t>(i)]; }
    std::size_t size() const { return data_.size(); }
    bool empty() const { return data_.empty(); }

    int rows() const;  // first extent of a 2-D tensor
    int cols() const;  // second extent of a 2-D tensor

    double* data() { return data_.data(); }
    const double* data() const { return data_.data(); }
    std::span<double> values() { return data_; }
    std::span<const double> values() const { return data_; }

    double& at(std::size_t i) { return data_[i]; }
    double at(std::size_t i) const { return data_[i]; }
    double& at(int r, int c) { return data_[static_cast<std::size_t>(r) * shape_[1] + c]; }
    double at(int r, int c) const { return data_[static_cast<std::size_t>(r) * shape_[1] + c]; }

    std::span<const double> row(int r) const;
    std::span<double> row(int r);

    bool same_shape(const Tensor& other) const { return shape_ == other.shape_; }
    bool all_finite() const;
    // Exact byte-level equality, used by freeze and determinism checks.
    bool bit_equal(const Tensor& other) const;

    void fill(double v);
    std::string shape_str() const;

  private:
    std::vector<int> shape_;
    std::vector<double> data_;
};

// Plain sequential kernels shared by the graph ops; deterministic
// index-ascending accumulation everywhere.
namespace dense {
Tensor mm(const Tensor& a, const Tensor& b);          // a(m,k) * b(k,n)
Tensor mm_at(const Tensor& a, const Tensor& b);       // a^T * b
Tensor mm_bt(const Tensor& a, const Tensor& b);       // a * b^T
Tensor transpose(const Tensor& a);
double dot(std::span<const double> a, std::span<const double> b);
double squared_distance(std::span<const double> a, std::span<const double> b);
double distance(std::span<const double> a, std::span<const double> b);
double cosine(std::span<const double> a, std::span<const double> b);
}  // namespace dense

}  // namespace faircc
