#pragma once

#include <cmath>
#include <cstddef>
#include <functional>
#include <numbers>
#include <string>
#include <vector>

#include "infodiff/errors.hpp"
#include "infodiff/numerics.hpp"

namespace infodiff {

struct QuadratureRule {
    std::vector<double> nodes;
    std::vector<double> weights;
};

// n-point Gauss-Legendre rule on [-1, 1]. Roots of P_n by Newton iteration from
// Chebyshev starting points.
inline QuadratureRule gauss_legendre(std::size_t n) {
    require(n >= 1 && n <= 512, ErrorCode::kArgument, "Gauss-Legendre node count out of range");
    QuadratureRule rule;
    rule.nodes.resize(n);
    rule.weights.resize(n);
    const auto un = static_cast<unsigned>(n);
    for (std::size_t k = 0; k < (n + 1) / 2; ++k) {
        double x = std::cos(std::numbers::pi * (static_cast<double>(k) + 0.75) / (static_cast<double>(n) + 0.5));
        double dp = 0.0;
        for (int iter = 0; iter < 100; ++iter) {
            const double p = std::legendre(un, x);
            const double p_prev = std::legendre(un - 1, x);
            dp = static_cast<double>(n) * (x * p - p_prev) / (x * x - 1.0);
            const double dx = p / dp;
            x -= dx;
            if (std::abs(dx) < 1e-16) break;
        }
        const double p_prev = std::legendre(un - 1, x);
        dp = static_cast<double>(n) * (x * std::legendre(un, x) - p_prev) / (x * x - 1.0);
        const double w = 2.0 / ((1.0 - x * x) * dp * dp);
        rule.nodes[k] = -x;
        rule.nodes[n - 1 - k] = x;
        rule.weights[k] = w;
        rule.weights[n - 1 - k] = w;
    }
    if (n % 2 == 1) rule.nodes[n / 2] = 0.0;
    return rule;
}

// Gauss-Legendre rule applied on each panel [b_j, b_{j+1}].
inline double integrate_composite_gl(const std::function<double(double)>& f, const std::vector<double>& breakpoints,
                                     std::size_t nodes_per_panel) {
    require(breakpoints.size() >= 2, ErrorCode::kArgument, "need at least one panel");
    const QuadratureRule rule = gauss_legendre(nodes_per_panel);
    CompensatedSum total;
    for (std::size_t p = 0; p + 1 < breakpoints.size(); ++p) {
        const double a = breakpoints[p], b = breakpoints[p + 1];
        require(b > a, ErrorCode::kArgument, "breakpoints must be increasing");
        const double half = 0.5 * (b - a), mid = 0.5 * (a + b);
        for (std::size_t k = 0; k < rule.nodes.size(); ++k) total.add(half * rule.weights[k] * f(mid + half * rule.nodes[k]));
    }
    return total.value();
}

inline double integrate_gl(const std::function<double(double)>& f, double a, double b, std::size_t nodes,
                           std::size_t panels = 1) {
    require(panels >= 1, ErrorCode::kArgument, "panels must be >= 1");
    std::vector<double> bp(panels + 1);
    for (std::size_t p = 0; p <= panels; ++p) bp[p] = a + (b - a) * static_cast<double>(p) / static_cast<double>(panels);
    bp.back() = b;
    return integrate_composite_gl(f, bp, nodes);
}

namespace detail {
inline double simpson_step(const std::function<double(double)>& f, double a, double fa, double b, double fb,
                           double m, double fm, double whole, double tol, int depth, std::size_t& evals) {
    const double lm = 0.5 * (a + m), rm = 0.5 * (m + b);
    const double flm = f(lm), frm = f(rm);
    evals += 2;
    const double left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
    const double right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
    const double delta = left + right - whole;
    if (depth <= 0 || std::abs(delta) <= 15.0 * tol) return left + right + delta / 15.0;
    return simpson_step(f, a, fa, m, fm, lm, flm, left, 0.5 * tol, depth - 1, evals) +
           simpson_step(f, m, fm, b, fb, rm, frm, right, 0.5 * tol, depth - 1, evals);
}
}  // namespace detail

struct SimpsonResult {
    double value = 0.0;
    std::size_t evaluations = 0;
};

inline SimpsonResult adaptive_simpson(const std::function<double(double)>& f, double a, double b, double tol,
                                      int max_depth = 40) {
    require(b > a, ErrorCode::kArgument, "empty integration interval");
    require(tol > 0.0, ErrorCode::kArgument, "tolerance must be > 0");
    const double m = 0.5 * (a + b);
    const double fa = f(a), fb = f(b), fm = f(m);
    SimpsonResult r;
    r.evaluations = 3;
    const double whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
    r.value = detail::simpson_step(f, a, fa, b, fb, m, fm, whole, tol, max_depth, r.evaluations);
    return r;
}

enum class QuadratureKind { kGaussLegendre, kAdaptiveSimpson };

// Integration over lambda in [epsilon, upper].
struct QuadratureSpec {
    QuadratureKind kind = QuadratureKind::kGaussLegendre;
    std::size_t nodes = 64;      // per panel
    std::size_t panels = 1;
    double tolerance = 1e-8;     // adaptive Simpson only
    double epsilon = 1e-4;
    double upper = 1.0;

    void validate() const {
        require(epsilon > 0.0 && epsilon <= 0.01, ErrorCode::kConfig, "quadrature epsilon must be in (0, 0.01]");
        require(upper > epsilon && upper <= 1.0, ErrorCode::kConfig, "quadrature upper limit must be in (eps, 1]");
        if (kind == QuadratureKind::kGaussLegendre) {
            require(nodes >= 8, ErrorCode::kConfig, "Gauss-Legendre needs at least 8 nodes");
            require(panels >= 1, ErrorCode::kConfig, "panels must be >= 1");
        } else {
            require(tolerance > 0.0, ErrorCode::kConfig, "Simpson tolerance must be > 0");
        }
    }

    std::string describe() const {
        if (kind == QuadratureKind::kGaussLegendre) {
            return "gauss-legendre(nodes=" + std::to_string(nodes) + ", panels=" + std::to_string(panels) +
                   ", eps=" + std::to_string(epsilon) + ")";
        }
        return "adaptive-simpson(tol=" + std::to_string(tolerance) + ", eps=" + std::to_string(epsilon) + ")";
    }
};

// Nodes and weights of a GL spec mapped onto [epsilon, upper].
inline QuadratureRule mapped_rule(const QuadratureSpec& spec) {
    spec.validate();
    require(spec.kind == QuadratureKind::kGaussLegendre, ErrorCode::kArgument, "mapped rule needs Gauss-Legendre");
    const QuadratureRule base = gauss_legendre(spec.nodes);
    QuadratureRule out;
    const double width = (spec.upper - spec.epsilon) / static_cast<double>(spec.panels);
    for (std::size_t p = 0; p < spec.panels; ++p) {
        const double a = spec.epsilon + width * static_cast<double>(p);
        const double half = 0.5 * width, mid = a + half;
        for (std::size_t k = 0; k < base.nodes.size(); ++k) {
            out.nodes.push_back(mid + half * base.nodes[k]);
            out.weights.push_back(half * base.weights[k]);
        }
    }
    return out;
}

inline double integrate(const std::function<double(double)>& f, const QuadratureSpec& spec) {
    spec.validate();
    if (spec.kind == QuadratureKind::kAdaptiveSimpson) return adaptive_simpson(f, spec.epsilon, spec.upper, spec.tolerance).value;
    return integrate_gl(f, spec.epsilon, spec.upper, spec.nodes, spec.panels);
}

}  // namespace infodiff
