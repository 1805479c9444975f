#include "faircc/tensor.hpp"

#include <cmath>
#include <cstring>
#include <numeric>
#include <sstream>

#include "faircc/errors.hpp"
#include "faircc/rng.hpp"

namespace faircc {

namespace {
std::size_t checked_count(const std::vector<int>& shape) {
    if (shape.empty()) throw DimensionError("tensor shape must have at least one extent");
    std::size_t n = 1;
    for (int e : shape) {
        if (e <= 0) throw DimensionError("tensor extents must be positive");
        n *= static_cast<std::size_t>(e);
    }
    return n;
}
}  // namespace

Tensor::Tensor(std::vector<int> shape) : shape_(std::move(shape)) {
    data_.assign(checked_count(shape_), 0.0);
}

Tensor Tensor::full(std::vector<int> shape, double value) {
    Tensor t(std::move(shape));
    t.fill(value);
    return t;
}

Tensor Tensor::from(std::vector<int> shape, std::vector<double> data) {
    const std::size_t n = checked_count(shape);
    if (n != data.size()) throw DimensionError("tensor data length does not match shape");
    Tensor t;
    t.shape_ = std::move(shape);
    t.data_ = std::move(data);
    return t;
}

Tensor Tensor::row_vector(std::vector<double> data) {
    const int n = static_cast<int>(data.size());
    return from({n}, std::move(data));
}

Tensor Tensor::randn(std::vector<int> shape, Rng& rng, double sd) {
    Tensor t(std::move(shape));
    for (double& v : t.data_) v = rng.normal() * sd;
    return t;
}

int Tensor::rows() const {
    if (rank() != 2) throw DimensionError("rows(): tensor is not 2-D, shape " + shape_str());
    return shape_[0];
}

int Tensor::cols() const {
    if (rank() != 2) throw DimensionError("cols(): tensor is not 2-D, shape " + shape_str());
    return shape_[1];
}

std::span<const double> Tensor::row(int r) const {
    const int c = cols();
    return {data_.data() + static_cast<std::size_t>(r) * c, static_cast<std::size_t>(c)};
}

std::span<double> Tensor::row(int r) {
    const int c = cols();
    return {data_.data() + static_cast<std::size_t>(r) * c, static_cast<std::size_t>(c)};
}

bool Tensor::all_finite() const {
    for (double v : data_) {
        if (!std::isfinite(v)) return false;
    }
    return true;
}

bool Tensor::bit_equal(const Tensor& other) const {
    if (shape_ != other.shape_) return false;
    return std::memcmp(data_.data(), other.data_.data(), data_.size() * sizeof(double)) == 0;
}

void Tensor::fill(double v) { std::fill(data_.begin(), data_.end(), v); }

std::string Tensor::shape_str() const {
    std::ostringstream os;
    os << "(";
    for (std::size_t i = 0; i < shape_.size(); ++i) {
        if (i) os << ",";
        os << shape_[i];
    }
    os << ")";
    return os.str();
}

namespace dense {

Tensor mm(const Tensor& a, const Tensor& b) {
    const int m = a.rows(), k = a.cols(), n = b.cols();
    if (b.rows() != k)
        throw DimensionError("matmul: inner extents differ, " + a.shape_str() + " vs " +
                             b.shape_str());
    Tensor out({m, n});
    const double* pa = a.data();
    const double* pb = b.data();
    double* po = out.data();
    for (int i = 0; i < m; ++i) {
        for (int l = 0; l < k; ++l) {
            const double av = pa[static_cast<std::size_t>(i) * k + l];
            if (av == 0.0) continue;
            const double* brow = pb + static_cast<std::size_t>(l) * n;
            double* orow = po + static_cast<std::size_t>(i) * n;
            for (int j = 0; j < n; ++j) orow[j] += av * brow[j];
        }
    }
    return out;
}

Tensor mm_at(const Tensor& a, const Tensor& b) {
    const int k = a.rows(), m = a.cols(), n = b.cols();
    if (b.rows() != k) throw DimensionError("mm_at: row extents differ");
    Tensor out({m, n});
    const double* pa = a.data();
    const double* pb = b.data();
    double* po = out.data();
    for (int l = 0; l < k; ++l) {
        const double* arow = pa + static_cast<std::size_t>(l) * m;
        const double* brow = pb + static_cast<std::size_t>(l) * n;
        for (int i = 0; i < m; ++i) {
            const double av = arow[i];
            if (av == 0.0) continue;
            double* orow = po + static_cast<std::size_t>(i) * n;
            for (int j = 0; j < n; ++j) orow[j] += av * brow[j];
        }
    }
    return out;
}

Tensor mm_bt(const Tensor& a, const Tensor& b) {
    const int m = a.rows(), k = a.cols(), n = b.rows();
    if (b.cols() != k) throw DimensionError("mm_bt: column extents differ");
    Tensor out({m, n});
    for (int i = 0; i < m; ++i) {
        std::span<const double> arow = a.row(i);
        for (int j = 0; j < n; ++j) {
            out.at(i, j) = dot(arow, b.row(j));
        }
    }
    return out;
}

Tensor transpose(const Tensor& a) {
    const int m = a.rows(), n = a.cols();
    Tensor out({n, m});
    for (int i = 0; i < m; ++i)
        for (int j = 0; j < n; ++j) out.at(j, i) = a.at(i, j);
    return out;
}

double dot(std::span<const double> a, std::span<const double> b) {
    if (a.size() != b.size()) throw DimensionError("dot: length mismatch");
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
}

double squared_distance(std::span<const double> a, std::span<const double> b) {
    if (a.size() != b.size()) throw DimensionError("squared_distance: length mismatch");
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double d = a[i] - b[i];
        s += d * d;
    }
    return s;
}

double distance(std::span<const double> a, std::span<const double> b) {
    return std::sqrt(squared_distance(a, b));
}

double cosine(std::span<const double> a, std::span<const double> b) {
    const double na = std::sqrt(dot(a, a));
    const double nb = std::sqrt(dot(b, b));
    const double denom = na * nb;
    if (denom < 1e-300) return 0.0;
    return dot(a, b) / denom;
}

}  // namespace dense

}  // namespace faircc
