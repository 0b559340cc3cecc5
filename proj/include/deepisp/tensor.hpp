#pragma once

#include <cmath>
#include <cstddef>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

namespace deepisp {

using Shape = std::vector<int>;

inline std::string shape_str(const Shape& s) {
    std::string out = "[";
    for (size_t i = 0; i < s.size(); ++i) {
        if (i) out += "x";
        out += std::to_string(s[i]);
    }
    return out + "]";
}

/// Dense N-d array of doubles, row-major. Images use H x W x C layout
/// everywhere; matrices are rows x cols; vectors are rank-1.
class Tensor {
public:
    Tensor() = default;

    explicit Tensor(Shape shape) : shape_(std::move(shape)) {
        data_.assign(count(shape_), 0.0);
    }

    Tensor(Shape shape, std::vector<double> data) : shape_(std::move(shape)), data_(std::move(data)) {
        if (static_cast<size_t>(count(shape_)) != data_.size())
            throw std::invalid_argument("tensor: data size " + std::to_string(data_.size()) +
                                        " does not match shape " + shape_str(shape_));
    }

    static Tensor scalar(double v) { return Tensor({1}, {v}); }

    static Tensor full(Shape shape, double v) {
        Tensor t(std::move(shape));
        for (double& x : t.data_) x = v;
        return t;
    }

    const Shape& shape() const { return shape_; }
    int rank() const { return static_cast<int>(shape_.size()); }
    int extent(int axis) const { return shape_[static_cast<size_t>(axis)]; }
    int size() const { return static_cast<int>(data_.size()); }
    bool empty() const { return data_.empty(); }

    double* data() { return data_.data(); }
    const double* data() const { return data_.data(); }

    double& operator[](int i) { return data_[static_cast<size_t>(i)]; }
    double operator[](int i) const { return data_[static_cast<size_t>(i)]; }

    // H x W x C accessor
    double& at(int y, int x, int c) { return data_[static_cast<size_t>((y * shape_[1] + x) * shape_[2] + c)]; }
    double at(int y, int x, int c) const { return data_[static_cast<size_t>((y * shape_[1] + x) * shape_[2] + c)]; }

    // rows x cols accessor
    double& at(int r, int c) { return data_[static_cast<size_t>(r * shape_[1] + c)]; }
    double at(int r, int c) const { return data_[static_cast<size_t>(r * shape_[1] + c)]; }

    bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }

    bool all_finite() const {
        for (double v : data_)
            if (!std::isfinite(v)) return false;
        return true;
    }

    double min() const {
        double m = data_.empty() ? 0.0 : data_[0];
        for (double v : data_) m = std::min(m, v);
        return m;
    }

    double max() const {
        double m = data_.empty() ? 0.0 : data_[0];
        for (double v : data_) m = std::max(m, v);
        return m;
    }

    static int count(const Shape& shape) {
        int n = 1;
        for (int e : shape) {
            if (e <= 0) throw std::invalid_argument("tensor: nonpositive extent in shape " + shape_str(shape));
            n *= e;
        }
        return n;
    }

private:
    Shape shape_;
    std::vector<double> data_;
};

inline void require_same_shape(const Tensor& a, const Tensor& b, const char* what) {
    if (!a.same_shape(b))
        throw std::invalid_argument(std::string(what) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                                    shape_str(b.shape()));
}

inline void require_image(const Tensor& t, const char* what, int channels = -1) {
    if (t.rank() != 3)
        throw std::invalid_argument(std::string(what) + ": expected H x W x C tensor, got " + shape_str(t.shape()));
    if (channels >= 0 && t.extent(2) != channels)
        throw std::invalid_argument(std::string(what) + ": expected " + std::to_string(channels) +
                                    " channels, got " + shape_str(t.shape()));
}

}  // namespace deepisp
