#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <stdexcept>
#include <vector>

#include <Eigen/Dense>
#include <boost/math/special_functions/gamma.hpp>

namespace popdyn::kernel {

/// Running mean and variance (Welford).
class Accumulator {
public:
    void add(double x) {
        ++n_;
        const double d = x - mean_;
        mean_ += d / static_cast<double>(n_);
        m2_ += d * (x - mean_);
    }
    void merge(const Accumulator& o) {
        if (o.n_ == 0) return;
        const double n = static_cast<double>(n_ + o.n_);
        const double d = o.mean_ - mean_;
        m2_ += o.m2_ + d * d * static_cast<double>(n_) * static_cast<double>(o.n_) / n;
        mean_ += d * static_cast<double>(o.n_) / n;
        n_ += o.n_;
    }
    std::size_t count() const { return n_; }
    double mean() const { return mean_; }
    double variance() const { return n_ > 1 ? m2_ / static_cast<double>(n_ - 1) : 0.0; }
    double stddev() const { return std::sqrt(variance()); }
    double stderr_mean() const { return n_ > 0 ? std::sqrt(variance() / static_cast<double>(n_)) : 0.0; }

private:
    std::size_t n_ = 0;
    double mean_ = 0.0;
    double m2_ = 0.0;
};

inline Accumulator summarize(const std::vector<double>& xs) {
    Accumulator a;
    for (double x : xs) a.add(x);
    return a;
}

/// Standard error of a binomial frequency estimate.
inline double binomial_stderr(double p, std::size_t n) {
    return n > 0 ? std::sqrt(std::max(p * (1.0 - p), 0.0) / static_cast<double>(n)) : 0.0;
}

/// Kolmogorov limiting survival function Q(l) = 2 sum (-1)^{k-1} exp(-2 k^2 l^2).
inline double kolmogorov_q(double l) {
    if (l <= 0.0) return 1.0;
    if (l < 0.2) return 1.0;
    double s = 0.0;
    for (int k = 1; k <= 100; ++k) {
        const double term = std::exp(-2.0 * k * k * l * l);
        s += (k % 2 ? 1.0 : -1.0) * term;
        if (term < 1e-16) break;
    }
    return std::clamp(2.0 * s, 0.0, 1.0);
}

struct KsResult {
    double statistic;
    double p_value;
};

/// Two-sample Kolmogorov-Smirnov test with the Stephens effective-size correction.
inline KsResult ks_two_sample(std::vector<double> a, std::vector<double> b) {
    if (a.empty() || b.empty()) throw std::invalid_argument("ks_two_sample: empty sample");
    std::sort(a.begin(), a.end());
    std::sort(b.begin(), b.end());
    const double na = static_cast<double>(a.size());
    const double nb = static_cast<double>(b.size());
    std::size_t i = 0, j = 0;
    double d = 0.0;
    while (i < a.size() && j < b.size()) {
        const double x = std::min(a[i], b[j]);
        while (i < a.size() && a[i] == x) ++i;
        while (j < b.size() && b[j] == x) ++j;
        d = std::max(d, std::fabs(static_cast<double>(i) / na - static_cast<double>(j) / nb));
    }
    const double ne = na * nb / (na + nb);
    const double sq = std::sqrt(ne);
    return {d, kolmogorov_q((sq + 0.12 + 0.11 / sq) * d)};
}

/// One-sample KS test against a continuous CDF.
inline KsResult ks_one_sample(std::vector<double> a, const std::function<double(double)>& cdf) {
    if (a.empty()) throw std::invalid_argument("ks_one_sample: empty sample");
    std::sort(a.begin(), a.end());
    const double n = static_cast<double>(a.size());
    double d = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double f = cdf(a[i]);
        d = std::max({d, static_cast<double>(i + 1) / n - f, f - static_cast<double>(i) / n});
    }
    const double sq = std::sqrt(n);
    return {d, kolmogorov_q((sq + 0.12 + 0.11 / sq) * d)};
}

struct ChiSquareResult {
    double statistic;
    double dof;
    double p_value;
};

/// Pearson goodness of fit. Cells with expected count below min_expected are pooled into their neighbour.
inline ChiSquareResult chi_square_gof(const std::vector<double>& observed, const std::vector<double>& expected,
                                      double min_expected = 5.0, int fitted_params = 0) {
    if (observed.size() != expected.size() || observed.empty())
        throw std::invalid_argument("chi_square_gof: size mismatch");
    std::vector<double> o, e;
    double acc_o = 0.0, acc_e = 0.0;
    for (std::size_t i = 0; i < observed.size(); ++i) {
        acc_o += observed[i];
        acc_e += expected[i];
        if (acc_e >= min_expected) {
            o.push_back(acc_o);
            e.push_back(acc_e);
            acc_o = acc_e = 0.0;
        }
    }
    if (acc_e > 0.0) {
        if (e.empty()) {
            o.push_back(acc_o);
            e.push_back(acc_e);
        } else {
            o.back() += acc_o;
            e.back() += acc_e;
        }
    }
    double stat = 0.0;
    for (std::size_t i = 0; i < o.size(); ++i) stat += (o[i] - e[i]) * (o[i] - e[i]) / e[i];
    const double dof = static_cast<double>(o.size()) - 1.0 - fitted_params;
    if (dof < 1.0) return {stat, dof, 1.0};
    return {stat, dof, boost::math::gamma_q(dof / 2.0, stat / 2.0)};
}

/// Chi-square test that two count vectors come from the same distribution.
inline ChiSquareResult chi_square_two_sample(const std::vector<double>& a, const std::vector<double>& b,
                                             double min_expected = 5.0) {
    if (a.size() != b.size() || a.empty()) throw std::invalid_argument("chi_square_two_sample: size mismatch");
    double na = 0.0, nb = 0.0;
    for (double x : a) na += x;
    for (double x : b) nb += x;
    if (!(na > 0.0) || !(nb > 0.0)) throw std::invalid_argument("chi_square_two_sample: empty sample");
    // Pool adjacent cells until the smaller expected count reaches min_expected.
    std::vector<double> pa, pb;
    double ca = 0.0, cb = 0.0;
    const double smaller = std::min(na, nb);
    for (std::size_t i = 0; i < a.size(); ++i) {
        ca += a[i];
        cb += b[i];
        if ((ca + cb) * smaller / (na + nb) >= min_expected) {
            pa.push_back(ca);
            pb.push_back(cb);
            ca = cb = 0.0;
        }
    }
    if (ca + cb > 0.0) {
        if (pa.empty()) {
            pa.push_back(ca);
            pb.push_back(cb);
        } else {
            pa.back() += ca;
            pb.back() += cb;
        }
    }
    const double k1 = std::sqrt(nb / na), k2 = std::sqrt(na / nb);
    double stat = 0.0;
    for (std::size_t i = 0; i < pa.size(); ++i) {
        const double s = pa[i] + pb[i];
        if (s > 0.0) stat += (k1 * pa[i] - k2 * pb[i]) * (k1 * pa[i] - k2 * pb[i]) / s;
    }
    const double dof = static_cast<double>(pa.size()) - 1.0;
    if (dof < 1.0) return {stat, dof, 1.0};
    return {stat, dof, boost::math::gamma_q(dof / 2.0, stat / 2.0)};
}

/// Ordinary least squares fit y = a + b x, with R^2.
struct LinearFit {
    double intercept;
    double slope;
    double r_squared;
};

inline LinearFit linear_fit(const std::vector<double>& x, const std::vector<double>& y) {
    if (x.size() != y.size() || x.size() < 2) throw std::invalid_argument("linear_fit: need two points");
    const double n = static_cast<double>(x.size());
    double sx = 0, sy = 0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        sx += x[i];
        sy += y[i];
    }
    const double mx = sx / n, my = sy / n;
    double sxx = 0, sxy = 0, syy = 0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        sxx += (x[i] - mx) * (x[i] - mx);
        sxy += (x[i] - mx) * (y[i] - my);
        syy += (y[i] - my) * (y[i] - my);
    }
    const double b = sxy / sxx;
    const double r2 = syy > 0 ? (sxy * sxy) / (sxx * syy) : 1.0;
    return {my - b * mx, b, r2};
}

/// Least squares fit through the origin y = b x; R^2 is computed about zero.
inline LinearFit origin_fit(const std::vector<double>& x, const std::vector<double>& y) {
    double sxx = 0, sxy = 0, syy = 0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        sxx += x[i] * x[i];
        sxy += x[i] * y[i];
        syy += y[i] * y[i];
    }
    const double b = sxy / sxx;
    double sse = 0;
    for (std::size_t i = 0; i < x.size(); ++i) sse += (y[i] - b * x[i]) * (y[i] - b * x[i]);
    return {0.0, b, syy > 0 ? 1.0 - sse / syy : 1.0};
}

/**
 * Wald test that two independent samples of d-dimensional vectors share the
 * same mean: T = diff' (S_a / n_a + S_b / n_b)^{-1} diff, asymptotically
 * chi-square with d degrees of freedom. Suited to binned mean measures whose
 * bins are correlated within one replicate.
 */
inline ChiSquareResult mean_vector_test(const std::vector<std::vector<double>>& a,
                                        const std::vector<std::vector<double>>& b) {
    if (a.size() < 2 || b.size() < 2) throw std::invalid_argument("mean_vector_test: need two samples per side");
    const auto d = static_cast<Eigen::Index>(a.front().size());
    auto moments = [d](const std::vector<std::vector<double>>& s, Eigen::VectorXd& mean, Eigen::MatrixXd& cov) {
        mean = Eigen::VectorXd::Zero(d);
        cov = Eigen::MatrixXd::Zero(d, d);
        for (const auto& v : s) {
            if (static_cast<Eigen::Index>(v.size()) != d) throw std::invalid_argument("mean_vector_test: ragged");
            mean += Eigen::Map<const Eigen::VectorXd>(v.data(), d);
        }
        mean /= static_cast<double>(s.size());
        for (const auto& v : s) {
            const Eigen::VectorXd c = Eigen::Map<const Eigen::VectorXd>(v.data(), d) - mean;
            cov += c * c.transpose();
        }
        cov /= static_cast<double>(s.size() - 1) * static_cast<double>(s.size());
    };
    Eigen::VectorXd ma, mb;
    Eigen::MatrixXd ca, cb;
    moments(a, ma, ca);
    moments(b, mb, cb);
    const Eigen::VectorXd diff = ma - mb;
    const Eigen::MatrixXd cov = ca + cb;
    // Drop directions without variance on either side (e.g. empty bins).
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(cov);
    const double top = es.eigenvalues().maxCoeff();
    double stat = 0.0;
    int dof = 0;
    for (Eigen::Index i = 0; i < d; ++i) {
        const double ev = es.eigenvalues()(i);
        if (!(ev > 1e-12 * top)) continue;
        const double proj = es.eigenvectors().col(i).dot(diff);
        stat += proj * proj / ev;
        ++dof;
    }
    if (dof == 0) return {0.0, 0.0, 1.0};
    return {stat, static_cast<double>(dof), boost::math::gamma_q(dof / 2.0, stat / 2.0)};
}

}  // namespace popdyn::kernel
