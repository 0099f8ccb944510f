#pragma once

#include <fftw3.h>

#include <array>
#include <complex>
#include <cstddef>
#include <map>
#include <mutex>
#include <span>
#include <tuple>
#include <vector>

#include "zvlab/lattice.hpp"

namespace zvlab {

using cplx = std::complex<double>;

namespace detail {

struct PlanPair {
    fftw_plan forward = nullptr;
    fftw_plan inverse = nullptr;
};

inline std::mutex& fftw_mutex() {
    static std::mutex m;
    return m;
}

// Plans are created once per (d, n) and executed through the new-array
// interface, which FFTW documents as thread safe.
inline const PlanPair& plans_for(int d, int n) {
    static std::map<std::pair<int, int>, PlanPair> cache;
    std::lock_guard lock(fftw_mutex());
    auto it = cache.find({d, n});
    if (it != cache.end()) return it->second;
    int dims[kMaxDim] = {n, n, n};
    std::size_t nreal = 1;
    for (int a = 0; a < d; ++a) nreal *= n;
    const std::size_t ncplx = nreal / n * (n / 2 + 1);
    double* r = fftw_alloc_real(nreal);
    fftw_complex* c = fftw_alloc_complex(ncplx);
    PlanPair pp;
    pp.forward = fftw_plan_dft_r2c(d, dims, r, c, FFTW_ESTIMATE | FFTW_UNALIGNED);
    pp.inverse = fftw_plan_dft_c2r(d, dims, c, r, FFTW_ESTIMATE | FFTW_UNALIGNED);
    fftw_free(r);
    fftw_free(c);
    return cache.emplace(std::make_pair(d, n), pp).first->second;
}

} // namespace detail

/// One Fourier mode of the half-spectrum layout.
struct Mode {
    std::array<double, kMaxDim> xi{0, 0, 0};
    std::array<bool, kMaxDim> nyquist{false, false, false};
    double xi2 = 0.0;
};

/// Real-to-complex transforms and Fourier multipliers on a periodic lattice.
///
/// Frequencies are the box frequencies xi = pi k / L. Odd-order derivative
/// multipliers vanish on Nyquist modes so real inputs stay real.
class Spectral {
public:
    explicit Spectral(const Grid& g) : grid_(g), plans_(&detail::plans_for(g.dim, g.nx)) {
        const int n = g.nx;
        const int d = g.dim;
        const int half = n / 2 + 1;
        ncplx_ = g.points() / n * half;
        modes_.resize(ncplx_);
        const double scale = 3.141592653589793 / g.half_width;
        for (std::size_t q = 0; q < ncplx_; ++q) {
            std::size_t rem = q;
            Mode m;
            const int last = static_cast<int>(rem % half);
            rem /= half;
            m.xi[d - 1] = scale * last;
            m.nyquist[d - 1] = (last == n / 2);
            for (int a = d - 2; a >= 0; --a) {
                const int j = static_cast<int>(rem % n);
                rem /= n;
                const int k = j <= n / 2 ? j : j - n;
                m.xi[a] = scale * k;
                m.nyquist[a] = (j == n / 2);
            }
            for (int a = 0; a < d; ++a) m.xi2 += m.xi[a] * m.xi[a];
            modes_[q] = m;
        }
    }

    const Grid& grid() const { return grid_; }
    std::size_t spectrum_size() const { return ncplx_; }
    const std::vector<Mode>& modes() const { return modes_; }

    void forward(std::span<const double> in, std::vector<cplx>& out) const {
        out.resize(ncplx_);
        fftw_execute_dft_r2c(plans_->forward, const_cast<double*>(in.data()),
                             reinterpret_cast<fftw_complex*>(out.data()));
    }

    /// Consumes `spec` and writes the normalized inverse into `out`.
    void inverse(std::vector<cplx>& spec, std::span<double> out) const {
        fftw_execute_dft_c2r(plans_->inverse, reinterpret_cast<fftw_complex*>(spec.data()), out.data());
        const double norm = 1.0 / static_cast<double>(grid_.points());
        for (double& v : out) v *= norm;
    }

    /// out = F^{-1}[ m(mode) F[in] ].
    template <class Multiplier>
    void apply(std::span<const double> in, std::span<double> out, Multiplier&& m) const {
        std::vector<cplx> spec;
        forward(in, spec);
        for (std::size_t q = 0; q < ncplx_; ++q) spec[q] *= m(modes_[q]);
        inverse(spec, out);
    }

    /// First derivative along axis a.
    void derivative(std::span<const double> in, std::span<double> out, int a) const {
        apply(in, out, [a](const Mode& m) {
            return m.nyquist[a] ? cplx(0.0) : cplx(0.0, m.xi[a]);
        });
    }

    /// Second derivative d_a d_b.
    void second_derivative(std::span<const double> in, std::span<double> out, int a, int b) const {
        apply(in, out, [a, b](const Mode& m) {
            if (a != b && (m.nyquist[a] || m.nyquist[b])) return cplx(0.0);
            return cplx(-m.xi[a] * m.xi[b]);
        });
    }

private:
    Grid grid_;
    const detail::PlanPair* plans_;
    std::size_t ncplx_ = 0;
    std::vector<Mode> modes_;
};

} // namespace zvlab
