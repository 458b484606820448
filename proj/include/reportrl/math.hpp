// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

namespace reportrl {

using Vec = std::vector<double>;

// Dense row-major kernels over flat vectors. Dimensions are the caller's
// contract; nothing here checks them.

// out = M x, M is rows x cols, x has cols entries.
inline void matvec(const double* m, int rows, int cols, const double* x, double* out) {
    for (int r = 0; r < rows; ++r) {
        double acc = 0.0;
        const double* row = m + static_cast<std::size_t>(r) * cols;
        for (int c = 0; c < cols; ++c) acc += row[c] * x[c];
        out[r] = acc;
    }
}

// out += M^T x, M is rows x cols, x has rows entries, out has cols entries.
inline void matvec_t_acc(const double* m, int rows, int cols, const double* x, double* out) {
    for (int r = 0; r < rows; ++r) {
        const double* row = m + static_cast<std::size_t>(r) * cols;
        const double xr = x[r];
        if (xr == 0.0) continue;
        for (int c = 0; c < cols; ++c) out[c] += row[c] * xr;
    }
}

// M += a b^T, M is rows x cols.
inline void outer_acc(double* m, int rows, int cols, const double* a, const double* b) {
    for (int r = 0; r < rows; ++r) {
        double* row = m + static_cast<std::size_t>(r) * cols;
        const double ar = a[r];
        if (ar == 0.0) continue;
        for (int c = 0; c < cols; ++c) row[c] += ar * b[c];
    }
}

inline void add_acc(double* y, const double* x, int n) {
    for (int i = 0; i < n; ++i) y[i] += x[i];
}

inline double logsumexp(const double* v, int n) {
    double mx = v[0];
    for (int i = 1; i < n; ++i) mx = std::max(mx, v[i]);
    double s = 0.0;
    for (int i = 0; i < n; ++i) s += std::exp(v[i] - mx);
    return mx + std::log(s);
}

inline double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

inline double mean(const Vec& v) {
    double s = 0.0;
    for (double x : v) s += x;
    return v.empty() ? 0.0 : s / static_cast<double>(v.size());
}

// Population standard deviation (divide by N).
inline double pop_std(const Vec& v) {
    if (v.empty()) return 0.0;
    double m = mean(v);
    double s = 0.0;
    for (double x : v) s += (x - m) * (x - m);
    return std::sqrt(s / static_cast<double>(v.size()));
}

// A named parameter array; models expose their parameters as an ordered
// list of these so the optimizer, checkpoints, and finite-difference
// checks can treat any model as one flat vector.
struct ParamView {
    const char* name;
    Vec* v;
};

inline std::size_t total_size(const std::vector<ParamView>& views) {
    std::size_t n = 0;
    for (const auto& p : views) n += p.v->size();
    return n;
}

inline Vec flatten(const std::vector<ParamView>& views) {
    Vec out;
    out.reserve(total_size(views));
    for (const auto& p : views) out.insert(out.end(), p.v->begin(), p.v->end());
    return out;
}

inline void unflatten(const Vec& flat, const std::vector<ParamView>& views) {
    std::size_t off = 0;
    for (const auto& p : views) {
        std::copy(flat.begin() + off, flat.begin() + off + p.v->size(), p.v->begin());
        off += p.v->size();
    }
}

// Adam over a flat parameter layout. State is sized on first step.
class Adam {
  public:
    Adam(double lr, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8)
        : lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {}

    void step(const std::vector<ParamView>& params, const std::vector<ParamView>& grads) {
        std::size_t n = total_size(params);
        if (m_.size() != n) {
            m_.assign(n, 0.0);
            v_.assign(n, 0.0);
            t_ = 0;
        }
        ++t_;
        const double bc1 = 1.0 - std::pow(beta1_, t_);
        const double bc2 = 1.0 - std::pow(beta2_, t_);
        std::size_t off = 0;
        for (std::size_t k = 0; k < params.size(); ++k) {
            Vec& p = *params[k].v;
            const Vec& g = *grads[k].v;
            for (std::size_t i = 0; i < p.size(); ++i) {
                const double gi = g[i];
                m_[off + i] = beta1_ * m_[off + i] + (1.0 - beta1_) * gi;
                v_[off + i] = beta2_ * v_[off + i] + (1.0 - beta2_) * gi * gi;
                const double mhat = m_[off + i] / bc1;
                const double vhat = v_[off + i] / bc2;
                p[i] -= lr_ * mhat / (std::sqrt(vhat) + eps_);
            }
            off += p.size();
        }
    }

    double lr() const { return lr_; }

  private:
    double lr_, beta1_, beta2_, eps_;
    long t_ = 0;
    Vec m_, v_;
};

} // namespace reportrl
