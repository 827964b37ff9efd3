#pragma once

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <memory>
#include <map>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

#include "rewindlab/tensor.hpp"

namespace rewindlab {

enum class Padding { valid, same };

/// Convolution execution path. im2col is the default; the explicit-loop
/// reference path is the correctness oracle and stays selectable.
enum class ConvImpl { im2col, reference };

inline constexpr double kBatchNormEps = 1e-5;

template <typename T>
using Bindings = std::unordered_map<std::string, TensorT<T>>;

namespace detail {

template <typename T>
using MatMap = Eigen::Map<Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;
template <typename T>
using ConstMatMap =
    Eigen::Map<const Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;

struct ConvGeometry {
    int batch, in_h, in_w, in_c;
    int kh, kw, out_c;
    int stride;
    int out_h, out_w;
    int pad_top, pad_left;
};

inline ConvGeometry conv_geometry(const std::string& node, const Shape& x, const Shape& k,
                                  int stride, Padding pad) {
    if (x.size() != 4) {
        throw std::runtime_error("conv2d '" + node + "': input must be rank 4 [N,H,W,C], got " +
                                 shape_str(x));
    }
    if (k.size() != 4) {
        throw std::runtime_error("conv2d '" + node + "': kernel must be rank 4 [kh,kw,in,out], got " +
                                 shape_str(k));
    }
    if (x[3] != k[2]) {
        throw std::runtime_error("conv2d '" + node + "': input channels " + std::to_string(x[3]) +
                                 " != kernel input channels " + std::to_string(k[2]));
    }
    ConvGeometry g;
    g.batch = x[0];
    g.in_h = x[1];
    g.in_w = x[2];
    g.in_c = x[3];
    g.kh = k[0];
    g.kw = k[1];
    g.out_c = k[3];
    g.stride = stride;
    if (pad == Padding::same) {
        g.out_h = (g.in_h + stride - 1) / stride;
        g.out_w = (g.in_w + stride - 1) / stride;
        int pad_h = std::max((g.out_h - 1) * stride + g.kh - g.in_h, 0);
        int pad_w = std::max((g.out_w - 1) * stride + g.kw - g.in_w, 0);
        g.pad_top = pad_h / 2;
        g.pad_left = pad_w / 2;
    } else {
        if (g.in_h < g.kh || g.in_w < g.kw) {
            throw std::runtime_error("conv2d '" + node + "': valid padding needs input >= kernel, got " +
                                     shape_str(x) + " vs " + shape_str(k));
        }
        g.out_h = (g.in_h - g.kh) / stride + 1;
        g.out_w = (g.in_w - g.kw) / stride + 1;
        g.pad_top = 0;
        g.pad_left = 0;
    }
    return g;
}

}  // namespace detail

template <typename T>
class Graph;

template <typename T>
class Node {
   public:
    virtual ~Node() = default;

    const std::string& name() const { return name_; }
    const TensorT<T>& value() const { return value_; }
    const TensorT<T>& grad() const { return grad_; }
    bool needs_grad() const { return needs_grad_; }

   protected:
    friend class Graph<T>;

    virtual void forward(Bindings<T>& bindings, bool training) = 0;
    virtual void backward() = 0;

    TensorT<T>& grad_of(std::size_t i) { return inputs_[i]->grad_; }
    const TensorT<T>& in(std::size_t i) const { return inputs_[i]->value_; }
    bool in_needs_grad(std::size_t i) const { return inputs_[i]->needs_grad_; }

    std::string name_;
    std::vector<Node<T>*> inputs_;
    TensorT<T> value_;
    TensorT<T> grad_;
    bool needs_grad_ = false;
};

namespace nodes {

template <typename T>
class Input : public Node<T> {
   public:
    Input(Shape shape, bool requires_grad, bool dynamic_batch)
        : declared_(std::move(shape)), dynamic_batch_(dynamic_batch) {
        this->needs_grad_ = requires_grad;
        requires_grad_ = requires_grad;
    }
    bool requires_grad() const { return requires_grad_; }

   protected:
    void forward(Bindings<T>& bindings, bool) override {
        auto it = bindings.find(this->name_);
        if (it == bindings.end()) {
            throw std::runtime_error("input '" + this->name_ + "' is not bound");
        }
        const TensorT<T>& t = it->second;
        check_shape(t.shape);
        this->value_ = t;
    }
    void backward() override {}

   private:
    void check_shape(const Shape& got) const {
        bool ok = got.size() == declared_.size();
        if (ok) {
            for (std::size_t i = 0; i < got.size(); ++i) {
                if (i == 0 && dynamic_batch_) continue;
                if (got[i] != declared_[i]) ok = false;
            }
        }
        if (!ok) {
            throw std::runtime_error("input '" + this->name_ + "': expected shape " +
                                     shape_str(declared_) + (dynamic_batch_ ? " (dynamic batch)" : "") +
                                     ", got " + shape_str(got));
        }
    }

    Shape declared_;
    bool dynamic_batch_;
    bool requires_grad_;
};

template <typename T>
class Relu : public Node<T> {
   protected:
    void forward(Bindings<T>&, bool) override {
        const auto& x = this->in(0);
        this->value_.shape = x.shape;
        this->value_.data.resize(x.data.size());
        for (std::size_t i = 0; i < x.data.size(); ++i)
            this->value_.data[i] = x.data[i] > T(0) ? x.data[i] : T(0);
    }
    void backward() override {
        if (!this->in_needs_grad(0)) return;
        const auto& x = this->in(0);
        auto& dx = this->grad_of(0);
        for (std::size_t i = 0; i < x.data.size(); ++i)
            if (x.data[i] > T(0)) dx.data[i] += this->grad_.data[i];
    }
};

template <typename T>
class Conv2d : public Node<T> {
   public:
    Conv2d(int stride, Padding pad, ConvImpl impl) : stride_(stride), pad_(pad), impl_(impl) {
        if (stride < 1) throw std::invalid_argument("conv2d stride must be >= 1");
    }

   protected:
    void forward(Bindings<T>&, bool) override {
        const auto& x = this->in(0);
        const auto& k = this->in(1);
        geom_ = detail::conv_geometry(this->name_, x.shape, k.shape, stride_, pad_);
        const auto& g = geom_;
        this->value_.shape = {g.batch, g.out_h, g.out_w, g.out_c};
        this->value_.data.assign(static_cast<std::size_t>(shape_numel(this->value_.shape)), T(0));
        if (impl_ == ConvImpl::reference) {
            forward_reference(x, k);
        } else {
            forward_im2col(x, k);
        }
    }

    void backward() override {
        const auto& x = this->in(0);
        const auto& k = this->in(1);
        if (impl_ == ConvImpl::reference) {
            backward_reference(x, k);
        } else {
            backward_im2col(x, k);
        }
    }

   private:
    // Direct 7-loop convolution. Slow; serves as the oracle for the
    // im2col path.
    void forward_reference(const TensorT<T>& x, const TensorT<T>& k) {
        const auto& g = geom_;
        for (int n = 0; n < g.batch; ++n)
            for (int oy = 0; oy < g.out_h; ++oy)
                for (int ox = 0; ox < g.out_w; ++ox)
                    for (int oc = 0; oc < g.out_c; ++oc) {
                        T acc = T(0);
                        for (int ky = 0; ky < g.kh; ++ky) {
                            int iy = oy * g.stride + ky - g.pad_top;
                            if (iy < 0 || iy >= g.in_h) continue;
                            for (int kx = 0; kx < g.kw; ++kx) {
                                int ix = ox * g.stride + kx - g.pad_left;
                                if (ix < 0 || ix >= g.in_w) continue;
                                for (int c = 0; c < g.in_c; ++c) {
                                    acc += x.data[idx4(n, iy, ix, c, g.in_h, g.in_w, g.in_c)] *
                                           k.data[idx4(ky, kx, c, oc, g.kw, g.in_c, g.out_c)];
                                }
                            }
                        }
                        this->value_.data[idx4(n, oy, ox, oc, g.out_h, g.out_w, g.out_c)] = acc;
                    }
    }

    void backward_reference(const TensorT<T>& x, const TensorT<T>& k) {
        const auto& g = geom_;
        const bool want_dx = this->in_needs_grad(0);
        const bool want_dk = this->in_needs_grad(1);
        if (!want_dx && !want_dk) return;
        auto* dx = want_dx ? &this->grad_of(0) : nullptr;
        auto* dk = want_dk ? &this->grad_of(1) : nullptr;
        for (int n = 0; n < g.batch; ++n)
            for (int oy = 0; oy < g.out_h; ++oy)
                for (int ox = 0; ox < g.out_w; ++ox)
                    for (int oc = 0; oc < g.out_c; ++oc) {
                        T dy = this->grad_.data[idx4(n, oy, ox, oc, g.out_h, g.out_w, g.out_c)];
                        if (dy == T(0)) continue;
                        for (int ky = 0; ky < g.kh; ++ky) {
                            int iy = oy * g.stride + ky - g.pad_top;
                            if (iy < 0 || iy >= g.in_h) continue;
                            for (int kx = 0; kx < g.kw; ++kx) {
                                int ix = ox * g.stride + kx - g.pad_left;
                                if (ix < 0 || ix >= g.in_w) continue;
                                for (int c = 0; c < g.in_c; ++c) {
                                    std::size_t xi = idx4(n, iy, ix, c, g.in_h, g.in_w, g.in_c);
                                    std::size_t ki = idx4(ky, kx, c, oc, g.kw, g.in_c, g.out_c);
                                    if (dx) dx->data[xi] += k.data[ki] * dy;
                                    if (dk) dk->data[ki] += x.data[xi] * dy;
                                }
                            }
                        }
                    }
    }

    void fill_patches(const TensorT<T>& x) {
        const auto& g = geom_;
        const std::int64_t rows = static_cast<std::int64_t>(g.batch) * g.out_h * g.out_w;
        const std::int64_t cols = static_cast<std::int64_t>(g.kh) * g.kw * g.in_c;
        patches_.assign(static_cast<std::size_t>(rows * cols), T(0));
        std::int64_t r = 0;
        for (int n = 0; n < g.batch; ++n)
            for (int oy = 0; oy < g.out_h; ++oy)
                for (int ox = 0; ox < g.out_w; ++ox, ++r) {
                    T* row = patches_.data() + r * cols;
                    for (int ky = 0; ky < g.kh; ++ky) {
                        int iy = oy * g.stride + ky - g.pad_top;
                        if (iy < 0 || iy >= g.in_h) continue;
                        for (int kx = 0; kx < g.kw; ++kx) {
                            int ix = ox * g.stride + kx - g.pad_left;
                            if (ix < 0 || ix >= g.in_w) continue;
                            const T* src = x.data.data() + idx4(n, iy, ix, 0, g.in_h, g.in_w, g.in_c);
                            std::copy(src, src + g.in_c, row + (ky * g.kw + kx) * g.in_c);
                        }
                    }
                }
    }

    void forward_im2col(const TensorT<T>& x, const TensorT<T>& k) {
        const auto& g = geom_;
        fill_patches(x);
        const std::int64_t rows = static_cast<std::int64_t>(g.batch) * g.out_h * g.out_w;
        const std::int64_t cols = static_cast<std::int64_t>(g.kh) * g.kw * g.in_c;
        detail::ConstMatMap<T> p(patches_.data(), rows, cols);
        detail::ConstMatMap<T> km(k.data.data(), cols, g.out_c);
        detail::MatMap<T> y(this->value_.data.data(), rows, g.out_c);
        y.noalias() = p * km;
    }

    void backward_im2col(const TensorT<T>&, const TensorT<T>& k) {
        const auto& g = geom_;
        const std::int64_t rows = static_cast<std::int64_t>(g.batch) * g.out_h * g.out_w;
        const std::int64_t cols = static_cast<std::int64_t>(g.kh) * g.kw * g.in_c;
        detail::ConstMatMap<T> dy(this->grad_.data.data(), rows, g.out_c);
        if (this->in_needs_grad(1)) {
            // forward's patches are still valid for this iteration
            detail::ConstMatMap<T> p(patches_.data(), rows, cols);
            detail::MatMap<T> dk(this->grad_of(1).data.data(), cols, g.out_c);
            dk.noalias() += p.transpose() * dy;
        }
        if (this->in_needs_grad(0)) {
            dx_patches_.assign(static_cast<std::size_t>(rows * cols), T(0));
            detail::ConstMatMap<T> km(k.data.data(), cols, g.out_c);
            detail::MatMap<T> dp(dx_patches_.data(), rows, cols);
            dp.noalias() = dy * km.transpose();
            // col2im scatter-add
            auto& dx = this->grad_of(0);
            std::int64_t r = 0;
            for (int n = 0; n < g.batch; ++n)
                for (int oy = 0; oy < g.out_h; ++oy)
                    for (int ox = 0; ox < g.out_w; ++ox, ++r) {
                        const T* row = dx_patches_.data() + r * cols;
                        for (int ky = 0; ky < g.kh; ++ky) {
                            int iy = oy * g.stride + ky - g.pad_top;
                            if (iy < 0 || iy >= g.in_h) continue;
                            for (int kx = 0; kx < g.kw; ++kx) {
                                int ix = ox * g.stride + kx - g.pad_left;
                                if (ix < 0 || ix >= g.in_w) continue;
                                T* dst = dx.data.data() + idx4(n, iy, ix, 0, g.in_h, g.in_w, g.in_c);
                                const T* src = row + (ky * g.kw + kx) * g.in_c;
                                for (int c = 0; c < g.in_c; ++c) dst[c] += src[c];
                            }
                        }
                    }
        }
    }

    static std::size_t idx4(int a, int b, int c, int d, int db, int dc, int dd) {
        return static_cast<std::size_t>(((static_cast<std::int64_t>(a) * db + b) * dc + c) * dd + d);
    }

    int stride_;
    Padding pad_;
    ConvImpl impl_;
    detail::ConvGeometry geom_{};
    std::vector<T> patches_;
    std::vector<T> dx_patches_;
};

template <typename T>
class Dense : public Node<T> {
   protected:
    void forward(Bindings<T>&, bool) override {
        const auto& x = this->in(0);
        const auto& w = this->in(1);
        const auto& b = this->in(2);
        if (x.rank() != 2 || w.rank() != 2 || x.shape[1] != w.shape[0]) {
            throw std::runtime_error("dense '" + this->name_ + "': incompatible shapes x=" +
                                     shape_str(x.shape) + " w=" + shape_str(w.shape));
        }
        if (b.rank() != 1 || b.shape[0] != w.shape[1]) {
            throw std::runtime_error("dense '" + this->name_ + "': bias shape " + shape_str(b.shape) +
                                     " does not match output dim " + std::to_string(w.shape[1]));
        }
        const int n = x.shape[0], in = x.shape[1], out = w.shape[1];
        this->value_.shape = {n, out};
        this->value_.data.resize(static_cast<std::size_t>(n) * out);
        detail::ConstMatMap<T> xm(x.data.data(), n, in);
        detail::ConstMatMap<T> wm(w.data.data(), in, out);
        detail::MatMap<T> ym(this->value_.data.data(), n, out);
        ym.noalias() = xm * wm;
        for (int i = 0; i < n; ++i) {
            T* row = this->value_.data.data() + static_cast<std::size_t>(i) * out;
            for (int j = 0; j < out; ++j) row[j] += b.data[static_cast<std::size_t>(j)];
        }
    }
    void backward() override {
        const auto& x = this->in(0);
        const auto& w = this->in(1);
        const int n = x.shape[0], in = x.shape[1], out = w.shape[1];
        detail::ConstMatMap<T> dy(this->grad_.data.data(), n, out);
        if (this->in_needs_grad(0)) {
            detail::ConstMatMap<T> wm(w.data.data(), in, out);
            detail::MatMap<T> dx(this->grad_of(0).data.data(), n, in);
            dx.noalias() += dy * wm.transpose();
        }
        if (this->in_needs_grad(1)) {
            detail::ConstMatMap<T> xm(x.data.data(), n, in);
            detail::MatMap<T> dw(this->grad_of(1).data.data(), in, out);
            dw.noalias() += xm.transpose() * dy;
        }
        if (this->in_needs_grad(2)) {
            auto& db = this->grad_of(2);
            for (int i = 0; i < n; ++i)
                for (int j = 0; j < out; ++j)
                    db.data[static_cast<std::size_t>(j)] +=
                        this->grad_.data[static_cast<std::size_t>(i) * out + j];
        }
    }
};

/// Batch normalization over the channel (last) axis. Training mode uses
/// batch statistics (biased variance) and folds them into the moving
/// statistics stored in the bindings map:
///   moving <- decay * moving + (1 - decay) * batch_stat
/// Inference mode normalizes with the moving statistics.
template <typename T>
class BatchNorm : public Node<T> {
   public:
    BatchNorm(std::string mean_key, std::string var_key, double decay)
        : mean_key_(std::move(mean_key)), var_key_(std::move(var_key)), decay_(decay) {
        if (!(decay > 0.0 && decay < 1.0)) {
            throw std::invalid_argument("batchnorm decay must be in (0,1), got " + std::to_string(decay));
        }
    }

   protected:
    void forward(Bindings<T>& bindings, bool training) override {
        const auto& x = this->in(0);
        const auto& gamma = this->in(1);
        const auto& beta = this->in(2);
        if (x.rank() != 2 && x.rank() != 4) {
            throw std::runtime_error("batchnorm '" + this->name_ + "': input rank must be 2 or 4, got " +
                                     shape_str(x.shape));
        }
        const int c = x.shape.back();
        if (gamma.shape != Shape{c} || beta.shape != Shape{c}) {
            throw std::runtime_error("batchnorm '" + this->name_ + "': gamma/beta must be [" +
                                     std::to_string(c) + "], got " + shape_str(gamma.shape) + "/" +
                                     shape_str(beta.shape));
        }
        auto mit = bindings.find(mean_key_);
        auto vit = bindings.find(var_key_);
        if (mit == bindings.end() || vit == bindings.end()) {
            throw std::runtime_error("batchnorm '" + this->name_ + "': moving statistics '" + mean_key_ +
                                     "'/'" + var_key_ + "' are not bound");
        }
        channels_ = c;
        rows_ = x.numel() / c;
        training_ = training;
        this->value_.shape = x.shape;
        this->value_.data.resize(x.data.size());

        mean_.assign(static_cast<std::size_t>(c), T(0));
        istd_.assign(static_cast<std::size_t>(c), T(0));
        if (training) {
            std::vector<T> var(static_cast<std::size_t>(c), T(0));
            for (std::int64_t r = 0; r < rows_; ++r) {
                const T* row = x.data.data() + r * c;
                for (int j = 0; j < c; ++j) mean_[static_cast<std::size_t>(j)] += row[j];
            }
            const T inv_m = T(1) / static_cast<T>(rows_);
            for (int j = 0; j < c; ++j) mean_[static_cast<std::size_t>(j)] *= inv_m;
            for (std::int64_t r = 0; r < rows_; ++r) {
                const T* row = x.data.data() + r * c;
                for (int j = 0; j < c; ++j) {
                    T d = row[j] - mean_[static_cast<std::size_t>(j)];
                    var[static_cast<std::size_t>(j)] += d * d;
                }
            }
            for (int j = 0; j < c; ++j) var[static_cast<std::size_t>(j)] *= inv_m;
            for (int j = 0; j < c; ++j)
                istd_[static_cast<std::size_t>(j)] =
                    T(1) / std::sqrt(var[static_cast<std::size_t>(j)] + static_cast<T>(kBatchNormEps));
            // fold batch statistics into the moving statistics
            auto& mm = mit->second;
            auto& mv = vit->second;
            const T d = static_cast<T>(decay_);
            for (int j = 0; j < c; ++j) {
                mm.data[static_cast<std::size_t>(j)] =
                    d * mm.data[static_cast<std::size_t>(j)] + (T(1) - d) * mean_[static_cast<std::size_t>(j)];
                mv.data[static_cast<std::size_t>(j)] =
                    d * mv.data[static_cast<std::size_t>(j)] + (T(1) - d) * var[static_cast<std::size_t>(j)];
            }
        } else {
            const auto& mm = mit->second;
            const auto& mv = vit->second;
            for (int j = 0; j < c; ++j) {
                mean_[static_cast<std::size_t>(j)] = mm.data[static_cast<std::size_t>(j)];
                istd_[static_cast<std::size_t>(j)] =
                    T(1) / std::sqrt(mv.data[static_cast<std::size_t>(j)] + static_cast<T>(kBatchNormEps));
            }
        }
        xhat_.resize(x.data.size());
        for (std::int64_t r = 0; r < rows_; ++r) {
            const T* row = x.data.data() + r * c;
            T* xh = xhat_.data() + r * c;
            T* y = this->value_.data.data() + r * c;
            for (int j = 0; j < c; ++j) {
                std::size_t sj = static_cast<std::size_t>(j);
                xh[j] = (row[j] - mean_[sj]) * istd_[sj];
                y[j] = gamma.data[sj] * xh[j] + beta.data[sj];
            }
        }
    }

    void backward() override {
        const auto& gamma = this->in(1);
        const int c = channels_;
        std::vector<T> dgamma(static_cast<std::size_t>(c), T(0));
        std::vector<T> dbeta(static_cast<std::size_t>(c), T(0));
        for (std::int64_t r = 0; r < rows_; ++r) {
            const T* dy = this->grad_.data.data() + r * c;
            const T* xh = xhat_.data() + r * c;
            for (int j = 0; j < c; ++j) {
                dgamma[static_cast<std::size_t>(j)] += dy[j] * xh[j];
                dbeta[static_cast<std::size_t>(j)] += dy[j];
            }
        }
        if (this->in_needs_grad(1)) {
            auto& g = this->grad_of(1);
            for (int j = 0; j < c; ++j) g.data[static_cast<std::size_t>(j)] += dgamma[static_cast<std::size_t>(j)];
        }
        if (this->in_needs_grad(2)) {
            auto& g = this->grad_of(2);
            for (int j = 0; j < c; ++j) g.data[static_cast<std::size_t>(j)] += dbeta[static_cast<std::size_t>(j)];
        }
        if (!this->in_needs_grad(0)) return;
        auto& dx = this->grad_of(0);
        if (training_) {
            const T inv_m = T(1) / static_cast<T>(rows_);
            for (std::int64_t r = 0; r < rows_; ++r) {
                const T* dy = this->grad_.data.data() + r * c;
                const T* xh = xhat_.data() + r * c;
                T* out = dx.data.data() + r * c;
                for (int j = 0; j < c; ++j) {
                    std::size_t sj = static_cast<std::size_t>(j);
                    out[j] += gamma.data[sj] * istd_[sj] *
                              (dy[j] - dbeta[sj] * inv_m - xh[j] * dgamma[sj] * inv_m);
                }
            }
        } else {
            // moving statistics are constants in inference mode
            for (std::int64_t r = 0; r < rows_; ++r) {
                const T* dy = this->grad_.data.data() + r * c;
                T* out = dx.data.data() + r * c;
                for (int j = 0; j < c; ++j) {
                    std::size_t sj = static_cast<std::size_t>(j);
                    out[j] += dy[j] * gamma.data[sj] * istd_[sj];
                }
            }
        }
    }

   private:
    std::string mean_key_, var_key_;
    double decay_;
    int channels_ = 0;
    std::int64_t rows_ = 0;
    bool training_ = false;
    std::vector<T> mean_, istd_, xhat_;
};

template <typename T>
class Add : public Node<T> {
   protected:
    void forward(Bindings<T>&, bool) override {
        const auto& first = this->in(0);
        for (std::size_t i = 1; i < this->inputs_.size(); ++i) {
            if (!this->in(i).same_shape(first)) {
                throw std::runtime_error("add '" + this->name_ + "': shape mismatch " +
                                         shape_str(first.shape) + " vs " + shape_str(this->in(i).shape));
            }
        }
        this->value_ = first;
        this->value_.requires_grad = false;
        for (std::size_t i = 1; i < this->inputs_.size(); ++i) {
            const auto& x = this->in(i);
            for (std::size_t j = 0; j < x.data.size(); ++j) this->value_.data[j] += x.data[j];
        }
    }
    void backward() override {
        for (std::size_t i = 0; i < this->inputs_.size(); ++i) {
            if (!this->in_needs_grad(i)) continue;
            auto& dx = this->grad_of(i);
            for (std::size_t j = 0; j < dx.data.size(); ++j) dx.data[j] += this->grad_.data[j];
        }
    }
};

template <typename T>
class Mul : public Node<T> {
   protected:
    void forward(Bindings<T>&, bool) override {
        const auto& a = this->in(0);
        const auto& b = this->in(1);
        if (!a.same_shape(b)) {
            throw std::runtime_error("mul '" + this->name_ + "': shape mismatch " + shape_str(a.shape) +
                                     " vs " + shape_str(b.shape));
        }
        this->value_.shape = a.shape;
        this->value_.data.resize(a.data.size());
        for (std::size_t i = 0; i < a.data.size(); ++i) this->value_.data[i] = a.data[i] * b.data[i];
    }
    void backward() override {
        const auto& a = this->in(0);
        const auto& b = this->in(1);
        if (this->in_needs_grad(0)) {
            auto& da = this->grad_of(0);
            for (std::size_t i = 0; i < a.data.size(); ++i) da.data[i] += this->grad_.data[i] * b.data[i];
        }
        if (this->in_needs_grad(1)) {
            auto& db = this->grad_of(1);
            for (std::size_t i = 0; i < b.data.size(); ++i) db.data[i] += this->grad_.data[i] * a.data[i];
        }
    }
};

template <typename T>
class GlobalAvgPool : public Node<T> {
   protected:
    void forward(Bindings<T>&, bool) override {
        const auto& x = this->in(0);
        if (x.rank() != 4) {
            throw std::runtime_error("global_avg_pool '" + this->name_ + "': input must be rank 4, got " +
                                     shape_str(x.shape));
        }
        const int n = x.shape[0], h = x.shape[1], w = x.shape[2], c = x.shape[3];
        this->value_.shape = {n, c};
        this->value_.data.assign(static_cast<std::size_t>(n) * c, T(0));
        const T inv = T(1) / static_cast<T>(h * w);
        for (int i = 0; i < n; ++i) {
            T* out = this->value_.data.data() + static_cast<std::size_t>(i) * c;
            const T* base = x.data.data() + static_cast<std::size_t>(i) * h * w * c;
            for (int p = 0; p < h * w; ++p) {
                const T* px = base + static_cast<std::size_t>(p) * c;
                for (int j = 0; j < c; ++j) out[j] += px[j];
            }
            for (int j = 0; j < c; ++j) out[j] *= inv;
        }
    }
    void backward() override {
        if (!this->in_needs_grad(0)) return;
        const auto& x = this->in(0);
        const int n = x.shape[0], h = x.shape[1], w = x.shape[2], c = x.shape[3];
        const T inv = T(1) / static_cast<T>(h * w);
        auto& dx = this->grad_of(0);
        for (int i = 0; i < n; ++i) {
            const T* dy = this->grad_.data.data() + static_cast<std::size_t>(i) * c;
            T* base = dx.data.data() + static_cast<std::size_t>(i) * h * w * c;
            for (int p = 0; p < h * w; ++p) {
                T* px = base + static_cast<std::size_t>(p) * c;
                for (int j = 0; j < c; ++j) px[j] += dy[j] * inv;
            }
        }
    }
};

template <typename T>
class Flatten : public Node<T> {
   protected:
    void forward(Bindings<T>&, bool) override {
        const auto& x = this->in(0);
        const int n = x.shape[0];
        this->value_.shape = {n, static_cast<int>(x.numel() / n)};
        this->value_.data = x.data;
    }
    void backward() override {
        if (!this->in_needs_grad(0)) return;
        auto& dx = this->grad_of(0);
        for (std::size_t i = 0; i < dx.data.size(); ++i) dx.data[i] += this->grad_.data[i];
    }
};

template <typename T>
class Sum : public Node<T> {
   protected:
    void forward(Bindings<T>&, bool) override {
        const auto& x = this->in(0);
        T acc = T(0);
        for (T v : x.data) acc += v;
        this->value_ = TensorT<T>::scalar(acc);
    }
    void backward() override {
        if (!this->in_needs_grad(0)) return;
        auto& dx = this->grad_of(0);
        const T dy = this->grad_.data[0];
        for (std::size_t i = 0; i < dx.data.size(); ++i) dx.data[i] += dy;
    }
};

template <typename T>
class SumSquares : public Node<T> {
   protected:
    void forward(Bindings<T>&, bool) override {
        const auto& x = this->in(0);
        T acc = T(0);
        for (T v : x.data) acc += v * v;
        this->value_ = TensorT<T>::scalar(acc);
    }
    void backward() override {
        if (!this->in_needs_grad(0)) return;
        const auto& x = this->in(0);
        auto& dx = this->grad_of(0);
        const T dy = this->grad_.data[0];
        for (std::size_t i = 0; i < x.data.size(); ++i) dx.data[i] += T(2) * x.data[i] * dy;
    }
};

template <typename T>
class Scale : public Node<T> {
   public:
    explicit Scale(double factor) : factor_(factor) {}

   protected:
    void forward(Bindings<T>&, bool) override {
        const auto& x = this->in(0);
        this->value_.shape = x.shape;
        this->value_.data.resize(x.data.size());
        const T f = static_cast<T>(factor_);
        for (std::size_t i = 0; i < x.data.size(); ++i) this->value_.data[i] = f * x.data[i];
    }
    void backward() override {
        if (!this->in_needs_grad(0)) return;
        auto& dx = this->grad_of(0);
        const T f = static_cast<T>(factor_);
        for (std::size_t i = 0; i < dx.data.size(); ++i) dx.data[i] += f * this->grad_.data[i];
    }

   private:
    double factor_;
};

/// Mean softmax cross-entropy over the batch, computed from logits with a
/// log-sum-exp shift. Labels are class indices. Per-example probabilities
/// are cached and exposed for inspection.
template <typename T>
class SoftmaxXent : public Node<T> {
   public:
    const std::vector<T>& probabilities() const { return probs_; }

   protected:
    void forward(Bindings<T>&, bool) override {
        const auto& z = this->in(0);
        const auto& labels = this->in(1);
        if (z.rank() != 2) {
            throw std::runtime_error("softmax_xent '" + this->name_ + "': logits must be rank 2, got " +
                                     shape_str(z.shape));
        }
        const int n = z.shape[0], c = z.shape[1];
        if (labels.rank() != 1 || labels.shape[0] != n) {
            throw std::runtime_error("softmax_xent '" + this->name_ + "': labels must be [" +
                                     std::to_string(n) + "], got " + shape_str(labels.shape));
        }
        probs_.resize(static_cast<std::size_t>(n) * c);
        label_idx_.resize(static_cast<std::size_t>(n));
        T total = T(0);
        for (int i = 0; i < n; ++i) {
            const T* row = z.data.data() + static_cast<std::size_t>(i) * c;
            T* p = probs_.data() + static_cast<std::size_t>(i) * c;
            T m = row[0];
            for (int j = 1; j < c; ++j) m = std::max(m, row[j]);
            T sum = T(0);
            for (int j = 0; j < c; ++j) {
                p[j] = std::exp(row[j] - m);
                sum += p[j];
            }
            for (int j = 0; j < c; ++j) p[j] /= sum;
            double lf = static_cast<double>(labels.data[static_cast<std::size_t>(i)]);
            int li = static_cast<int>(lf);
            if (static_cast<double>(li) != lf || li < 0 || li >= c) {
                throw std::runtime_error("softmax_xent '" + this->name_ + "': label " + std::to_string(lf) +
                                         " at row " + std::to_string(i) + " is not a class index < " +
                                         std::to_string(c));
            }
            label_idx_[static_cast<std::size_t>(i)] = li;
            total += -(row[li] - m - std::log(sum));
        }
        this->value_ = TensorT<T>::scalar(total / static_cast<T>(n));
    }
    void backward() override {
        if (!this->in_needs_grad(0)) return;
        const auto& z = this->in(0);
        const int n = z.shape[0], c = z.shape[1];
        auto& dz = this->grad_of(0);
        const T scale = this->grad_.data[0] / static_cast<T>(n);
        for (int i = 0; i < n; ++i) {
            const T* p = probs_.data() + static_cast<std::size_t>(i) * c;
            T* d = dz.data.data() + static_cast<std::size_t>(i) * c;
            const int li = label_idx_[static_cast<std::size_t>(i)];
            for (int j = 0; j < c; ++j) d[j] += (p[j] - (j == li ? T(1) : T(0))) * scale;
        }
    }

   private:
    std::vector<T> probs_;
    std::vector<int> label_idx_;
};

}  // namespace nodes

/// A static computation graph: nodes are appended in topological order and
/// the backward pass walks them in exact reverse order. One graph is owned
/// by one training run.
template <typename T>
class Graph {
   public:
    Node<T>* input(const std::string& name, Shape shape, bool requires_grad = false,
                   bool dynamic_batch = false) {
        return add(name, std::make_unique<nodes::Input<T>>(std::move(shape), requires_grad, dynamic_batch),
                   {});
    }
    Node<T>* relu(const std::string& name, Node<T>* x) {
        return add(name, std::make_unique<nodes::Relu<T>>(), {x});
    }
    Node<T>* conv2d(const std::string& name, Node<T>* x, Node<T>* kernel, int stride, Padding pad,
                    ConvImpl impl = ConvImpl::im2col) {
        return add(name, std::make_unique<nodes::Conv2d<T>>(stride, pad, impl), {x, kernel});
    }
    Node<T>* dense(const std::string& name, Node<T>* x, Node<T>* w, Node<T>* b) {
        return add(name, std::make_unique<nodes::Dense<T>>(), {x, w, b});
    }
    Node<T>* batchnorm(const std::string& name, Node<T>* x, Node<T>* gamma, Node<T>* beta,
                       const std::string& mean_key, const std::string& var_key, double decay) {
        return add(name, std::make_unique<nodes::BatchNorm<T>>(mean_key, var_key, decay),
                   {x, gamma, beta});
    }
    Node<T>* add_n(const std::string& name, std::vector<Node<T>*> xs) {
        if (xs.empty()) throw std::invalid_argument("add '" + name + "': needs at least one input");
        return add(name, std::make_unique<nodes::Add<T>>(), std::move(xs));
    }
    Node<T>* mul(const std::string& name, Node<T>* a, Node<T>* b) {
        return add(name, std::make_unique<nodes::Mul<T>>(), {a, b});
    }
    Node<T>* global_avg_pool(const std::string& name, Node<T>* x) {
        return add(name, std::make_unique<nodes::GlobalAvgPool<T>>(), {x});
    }
    Node<T>* flatten(const std::string& name, Node<T>* x) {
        return add(name, std::make_unique<nodes::Flatten<T>>(), {x});
    }
    Node<T>* sum(const std::string& name, Node<T>* x) {
        return add(name, std::make_unique<nodes::Sum<T>>(), {x});
    }
    Node<T>* sum_squares(const std::string& name, Node<T>* x) {
        return add(name, std::make_unique<nodes::SumSquares<T>>(), {x});
    }
    Node<T>* scale(const std::string& name, Node<T>* x, double factor) {
        return add(name, std::make_unique<nodes::Scale<T>>(factor), {x});
    }
    Node<T>* softmax_xent(const std::string& name, Node<T>* logits, Node<T>* labels) {
        return add(name, std::make_unique<nodes::SoftmaxXent<T>>(), {logits, labels});
    }

    /// Run every node in order; outputs stay cached on the nodes.
    void forward(Bindings<T>& bindings, bool training) {
        for (auto& n : order_) n->forward(bindings, training);
    }

    /// Reverse-mode sweep from a scalar loss node. Gradients accumulate on
    /// the nodes; every requires_grad input ends up with a gradient (zero
    /// if it does not participate in the loss).
    void backward(const std::string& loss_name) {
        Node<T>* loss = find(loss_name);
        if (loss->value().numel() != 1) {
            throw std::runtime_error("backward: loss node '" + loss_name + "' is not scalar, has shape " +
                                     shape_str(loss->value().shape));
        }
        for (auto& n : order_) {
            n->grad_.shape = n->value_.shape;
            n->grad_.data.assign(n->value_.data.size(), T(0));
        }
        loss->grad_.data[0] = T(1);
        for (auto it = order_.rbegin(); it != order_.rend(); ++it) {
            if ((*it)->needs_grad_) (*it)->backward();
        }
    }

    /// Gradients for all requires_grad inputs, keyed by name.
    std::map<std::string, TensorT<T>> gradients() const {
        std::map<std::string, TensorT<T>> out;
        for (const auto& n : order_) {
            auto* in = dynamic_cast<const nodes::Input<T>*>(n.get());
            if (in && in->requires_grad()) out[n->name()] = n->grad();
        }
        return out;
    }

    Node<T>* find(const std::string& name) const {
        auto it = by_name_.find(name);
        if (it == by_name_.end()) throw std::runtime_error("graph: no node named '" + name + "'");
        return it->second;
    }

    const TensorT<T>& value(const std::string& name) const { return find(name)->value(); }
    const TensorT<T>& grad(const std::string& name) const { return find(name)->grad(); }
    /// Mutable gradient access (the pruning hook zeroes masked positions
    /// in place between backward() and the optimizer step).
    TensorT<T>& grad_mut(const std::string& name) { return find(name)->grad_; }
    std::size_t size() const { return order_.size(); }

   private:
    Node<T>* add(const std::string& name, std::unique_ptr<Node<T>> node, std::vector<Node<T>*> inputs) {
        if (by_name_.count(name)) throw std::invalid_argument("graph: duplicate node name '" + name + "'");
        node->name_ = name;
        node->inputs_ = std::move(inputs);
        for (Node<T>* in : node->inputs_) node->needs_grad_ = node->needs_grad_ || in->needs_grad_;
        Node<T>* raw = node.get();
        order_.push_back(std::move(node));
        by_name_[name] = raw;
        return raw;
    }

    std::vector<std::unique_ptr<Node<T>>> order_;
    std::unordered_map<std::string, Node<T>*> by_name_;
};

}  // namespace rewindlab
