#include "dsu/gradcheck.hpp"

#include <algorithm>
#include <cmath>

namespace dsu {

double finite_diff_check(const GradObjective& f, std::vector<Tensor> params, double h,
                         double eps) {
    std::vector<Tensor> analytic;
    f(params, &analytic);
    if (analytic.size() != params.size())
        throw std::invalid_argument("finite_diff_check: objective returned " +
                                    std::to_string(analytic.size()) + " gradients for " +
                                    std::to_string(params.size()) + " parameters");

    double max_rel = 0.0;
    for (std::size_t p = 0; p < params.size(); ++p) {
        const std::int64_t n = params[p].numel();
        for (std::int64_t i = 0; i < n; ++i) {
            const double orig = params[p].at(i);
            params[p].set(i, orig + h);
            const double fp = f(params, nullptr);
            params[p].set(i, orig - h);
            const double fm = f(params, nullptr);
            params[p].set(i, orig);
            const double numeric = (fp - fm) / (2.0 * h);
            const double a = analytic[p].at(i);
            const double denom = std::max({std::abs(a), std::abs(numeric), eps});
            max_rel = std::max(max_rel, std::abs(a - numeric) / denom);
        }
    }
    return max_rel;
}

} // namespace dsu
