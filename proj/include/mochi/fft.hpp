#pragma once

// Iterative radix-2 complex FFT with precomputed twiddles, plus the D-dim
// transform and convolution plumbing used by the PDE solvers and the
// particle-mesh force evaluation. Grids are cubic with a power-of-two point
// count per axis, so a single plan per grid covers every axis.
//
// Normalization: forward is the plain DFT, inverse divides by the total point
// count. With coefficients c_k = h^D * DFT(f) approximating the continuum
// Fourier transform on the torus, a continuum-multiplier convolution is
//   (K * f)(x_j) = IDFT[ DFT(f) .* K_hat(k) ](x_j),
// exact for band-limited data (Poisson summation handles the periodization).

#include <complex>
#include <cstddef>
#include <vector>

#include "mochi/common.hpp"

namespace mochi {

using cplx = std::complex<double>;

class Fft {
  public:
    explicit Fft(std::size_t n) : n_(n) {
        if (n == 0 || (n & (n - 1)) != 0)
            throw ConfigError("fft size must be a power of two, got " + std::to_string(n));
        rev_.resize(n);
        std::size_t log2n = 0;
        while ((std::size_t(1) << log2n) < n) ++log2n;
        for (std::size_t i = 0; i < n; ++i) {
            std::size_t r = 0;
            for (std::size_t b = 0; b < log2n; ++b)
                if (i & (std::size_t(1) << b)) r |= std::size_t(1) << (log2n - 1 - b);
            rev_[i] = r;
        }
        // twiddles e^{-2 pi i j / n} for j < n/2
        tw_.resize(n / 2);
        for (std::size_t j = 0; j < n / 2; ++j) {
            double ang = -2.0 * pi * double(j) / double(n);
            tw_[j] = {std::cos(ang), std::sin(ang)};
        }
    }

    std::size_t size() const { return n_; }

    void forward(cplx* a) const { run(a, false); }

    void inverse(cplx* a) const {
        run(a, true);
        double s = 1.0 / double(n_);
        for (std::size_t i = 0; i < n_; ++i) a[i] *= s;
    }

  private:
    void run(cplx* a, bool conj) const {
        for (std::size_t i = 0; i < n_; ++i)
            if (rev_[i] > i) std::swap(a[i], a[rev_[i]]);
        for (std::size_t len = 2; len <= n_; len <<= 1) {
            std::size_t stride = n_ / len;
            for (std::size_t start = 0; start < n_; start += len) {
                for (std::size_t j = 0; j < len / 2; ++j) {
                    cplx w = tw_[j * stride];
                    if (conj) w = std::conj(w);
                    cplx& lo = a[start + j];
                    cplx& hi = a[start + j + len / 2];
                    cplx t = hi * w;
                    hi = lo - t;
                    lo += t;
                }
            }
        }
    }

    std::size_t n_;
    std::vector<std::size_t> rev_;
    std::vector<cplx> tw_;
};

// Cubic periodic grid geometry. Node j sits at j*h per axis, torus [0, L)^D.
template <int D>
struct GridMeta {
    double box = 0;  // L
    int m = 0;       // nodes per axis, power of two

    double h() const { return box / m; }

    std::size_t size() const {
        std::size_t s = 1;
        for (int a = 0; a < D; ++a) s *= std::size_t(m);
        return s;
    }

    // signed integer frequency of index j along one axis
    int freq(int j) const { return j <= m / 2 ? j : j - m; }

    // angular wavenumber 2*pi*freq/L
    double k(int j) const { return 2.0 * pi * freq(j) / box; }

    bool operator==(const GridMeta&) const = default;
};

namespace detail {

// Decompose a flat row-major index into per-axis indices (last axis fastest).
template <int D>
std::array<int, D> unflatten(std::size_t idx, int m) {
    std::array<int, D> out{};
    for (int a = D - 1; a >= 0; --a) {
        out[a] = int(idx % std::size_t(m));
        idx /= std::size_t(m);
    }
    return out;
}

}  // namespace detail

// D-dimensional transforms and multiplier convolutions on one grid geometry.
// Holds one twiddle table; all methods are const and thread-safe.
template <int D>
class Convolver {
  public:
    explicit Convolver(GridMeta<D> meta) : meta_(meta), fft_(std::size_t(meta.m)) {
        if (meta.box <= 0) throw ConfigError("grid box must be positive");
    }

    const GridMeta<D>& meta() const { return meta_; }

    std::vector<cplx> forward(const std::vector<double>& f) const {
        check_size(f.size());
        std::vector<cplx> a(f.begin(), f.end());
        transform(a, false);
        return a;
    }

    std::vector<double> inverse_real(std::vector<cplx> a) const {
        check_size(a.size());
        transform(a, true);
        std::vector<double> out(a.size());
        for (std::size_t i = 0; i < a.size(); ++i) out[i] = a[i].real();
        return out;
    }

    // conv = IDFT[DFT(f) .* mult]; mult indexed like the flat grid.
    std::vector<double> convolve(const std::vector<double>& f, const std::vector<cplx>& mult) const {
        check_size(mult.size());
        std::vector<cplx> a = forward(f);
        for (std::size_t i = 0; i < a.size(); ++i) a[i] *= mult[i];
        return inverse_real(std::move(a));
    }

    // Continuum-style multiplier of a kernel given by node samples centered at
    // the origin (wrapped): K_hat(k) = h^D * DFT(samples).
    std::vector<cplx> multiplier_from_samples(const std::vector<double>& kernel) const {
        std::vector<cplx> a = forward(kernel);
        double hd = std::pow(meta_.h(), D);
        for (auto& c : a) c *= hd;
        return a;
    }

    // Build a multiplier from a callable on the wavevector.
    template <typename F>
    std::vector<cplx> multiplier(F&& f) const {
        std::vector<cplx> out(meta_.size());
        for (std::size_t i = 0; i < out.size(); ++i) {
            auto ids = detail::unflatten<D>(i, meta_.m);
            Vec<D> k;
            for (int a = 0; a < D; ++a) k[a] = meta_.k(ids[a]);
            out[i] = f(k, ids);
        }
        return out;
    }

    // Spectral derivative along one axis: i*k_a, Nyquist row zeroed (the
    // odd-derivative of the unpaired Nyquist mode has no consistent sign).
    std::vector<cplx> gradient_multiplier(int axis) const {
        return multiplier([&](const Vec<D>& k, const std::array<int, D>& ids) -> cplx {
            if (ids[axis] == meta_.m / 2) return {0.0, 0.0};
            return {0.0, k[axis]};
        });
    }

    // Exact heat propagator over dt with diffusivity sigma: e^{-sigma |k|^2 dt}.
    std::vector<cplx> heat_multiplier(double sigma, double dt) const {
        return multiplier([&](const Vec<D>& k, const std::array<int, D>&) -> cplx {
            return {std::exp(-sigma * norm2<D>(k) * dt), 0.0};
        });
    }

  private:
    void check_size(std::size_t n) const {
        if (n != meta_.size()) throw ConfigError("field size does not match grid");
    }

    // In-place transform along every axis. Lines along the last axis are
    // contiguous; other axes gather/scatter through a scratch buffer.
    void transform(std::vector<cplx>& a, bool inv) const {
        const int m = meta_.m;
        std::vector<cplx> line(static_cast<std::size_t>(m));
        std::size_t total = a.size();
        for (int axis = D - 1; axis >= 0; --axis) {
            std::size_t stride = 1;
            for (int b = D - 1; b > axis; --b) stride *= std::size_t(m);
            std::size_t lines = total / std::size_t(m);
            for (std::size_t l = 0; l < lines; ++l) {
                // base index of this line: insert axis index 0 into remaining dims
                std::size_t block = l / stride;        // slower dims
                std::size_t within = l % stride;       // faster dims
                std::size_t base = block * stride * std::size_t(m) + within;
                if (stride == 1) {
                    if (inv) fft_.inverse(&a[base]);
                    else fft_.forward(&a[base]);
                } else {
                    for (int j = 0; j < m; ++j) line[std::size_t(j)] = a[base + std::size_t(j) * stride];
                    if (inv) fft_.inverse(line.data());
                    else fft_.forward(line.data());
                    for (int j = 0; j < m; ++j) a[base + std::size_t(j) * stride] = line[std::size_t(j)];
                }
            }
        }
    }

    GridMeta<D> meta_;
    Fft fft_;
};

}  // namespace mochi
