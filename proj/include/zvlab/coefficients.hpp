#pragma once

#include <array>
#include <cmath>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <utility>

#include "zvlab/lattice.hpp"

namespace zvlab {

/// Coefficients at one (t, x), fixed maximum size for d <= 3.
///
/// sigma is row-major d x d. db[i*d + a] = d b_i / d x_a and
/// dsigma[(i*d + j)*d + a] = d sigma_ij / d x_a.
struct CoeffSample {
    std::array<double, kMaxDim> b{};
    std::array<double, kMaxDim * kMaxDim> sigma{};
    std::array<double, kMaxDim * kMaxDim> db{};
    std::array<double, kMaxDim * kMaxDim * kMaxDim> dsigma{};
};

/// Mollified (sigma, b) evaluator. Implementations are immutable and reentrant.
class CoefficientModel {
public:
    virtual ~CoefficientModel() = default;
    virtual int dim() const = 0;
    /// Fills out; derivatives only when want_jacobians.
    virtual void eval(double t, const double* x, CoeffSample& out, bool want_jacobians) const = 0;
    /// True when sigma does not depend on x (dsigma is identically zero).
    virtual bool additive_noise() const { return false; }
};

using ModelPtr = std::shared_ptr<const CoefficientModel>;

/// sigma = s I, b = 0.
class ConstantModel final : public CoefficientModel {
public:
    ConstantModel(int d, double s) : d_(d), s_(s) {}
    int dim() const override { return d_; }
    bool additive_noise() const override { return true; }
    void eval(double, const double*, CoeffSample& out, bool) const override {
        out = CoeffSample{};
        for (int i = 0; i < d_; ++i) out.sigma[i * d_ + i] = s_;
    }

private:
    int d_;
    double s_;
};

/// sigma = I, b = -kappa x.
class LinearDriftModel final : public CoefficientModel {
public:
    LinearDriftModel(int d, double kappa) : d_(d), kappa_(kappa) {}
    int dim() const override { return d_; }
    bool additive_noise() const override { return true; }
    void eval(double, const double* x, CoeffSample& out, bool want) const override {
        out = CoeffSample{};
        for (int i = 0; i < d_; ++i) {
            out.sigma[i * d_ + i] = 1.0;
            out.b[i] = -kappa_ * x[i];
            if (want) out.db[i * d_ + i] = -kappa_;
        }
    }

private:
    int d_;
    double kappa_;
};

/// How a gridded coefficient is continued outside [-L, L)^d.
///
/// periodic repeats the box. compact treats the gridded field as a perturbation
/// that vanishes outside the box, so b = 0 and sigma = I there.
enum class Extension { periodic, compact };

/// Coefficients interpolated from lattice samples (multilinear in space, linear in time).
/// A missing drift is zero; a missing sigma is the identity.
class GriddedModel final : public CoefficientModel {
public:
    GriddedModel(std::optional<GridFn> b, std::optional<GridFn> sigma, Extension ext = Extension::periodic)
        : ext_(ext) {
        if (!b && !sigma) throw InvalidParameter("gridded model needs a drift or a diffusion grid");
        const Grid& g = b ? b->grid() : sigma->grid();
        grid_ = g;
        if (b) {
            if (b->rank() != Rank::vector) throw InvalidParameter("gridded drift must be vector-valued");
            b_.emplace(*b);
        }
        if (sigma) {
            if (sigma->rank() != Rank::matrix) throw InvalidParameter("gridded sigma must be matrix-valued");
            if (b && !sigma->grid().same_lattice(g)) throw InvalidParameter("drift and sigma grids differ");
            sigma_.emplace(*sigma);
        }
    }

    int dim() const override { return grid_.dim; }
    bool additive_noise() const override { return !sigma_.has_value(); }
    const Grid& grid() const { return grid_; }
    const std::optional<LatticeInterpolator>& drift() const { return b_; }
    const std::optional<LatticeInterpolator>& diffusion() const { return sigma_; }

    void eval(double t, const double* x, CoeffSample& out, bool want) const override {
        out = CoeffSample{};
        const int d = grid_.dim;
        for (int i = 0; i < d; ++i) out.sigma[i * d + i] = 1.0;
        if (ext_ == Extension::compact) {
            for (int a = 0; a < d; ++a)
                if (x[a] < -grid_.half_width || x[a] >= grid_.half_width) return;
        }
        if (b_) {
            if (want)
                b_->value_and_gradient(t, x, out.b.data(), out.db.data());
            else
                b_->value(t, x, out.b.data());
        }
        if (sigma_) {
            if (want)
                sigma_->value_and_gradient(t, x, out.sigma.data(), out.dsigma.data());
            else
                sigma_->value(t, x, out.sigma.data());
        }
    }

private:
    Grid grid_;
    Extension ext_;
    std::optional<LatticeInterpolator> b_;
    std::optional<LatticeInterpolator> sigma_;
};

/// Adapter for an arbitrary evaluator.
class CallableModel final : public CoefficientModel {
public:
    using Fn = std::function<void(double, const double*, CoeffSample&, bool)>;
    CallableModel(int d, Fn fn, bool additive = false) : d_(d), fn_(std::move(fn)), additive_(additive) {}
    int dim() const override { return d_; }
    bool additive_noise() const override { return additive_; }
    void eval(double t, const double* x, CoeffSample& out, bool want) const override { fn_(t, x, out, want); }

private:
    int d_;
    Fn fn_;
    bool additive_;
};

} // namespace zvlab
