// Calibrates a constant volatility to a second-moment target produced by sigma = 1.1.
#include <cstdio>

#include "thinsets/tritree.hpp"

int main() {
    using namespace thinsets;
    LatticeSpec spec;
    spec.n = 64;
    spec.alpha = 2.0;
    spec.sigma_min = 0.9;
    spec.sigma_max = 1.3;
    spec.b0 = 0.1;
    spec.s = 0.05;
    const auto square = [](double x) { return x * x; };
    const double target = expectation(build_tree(VolSurface::constant(spec.n, 1.1, spec.b0), spec), square, spec.n);
    const auto payoff = [&](double x) { return x * x / target; };

    CalibProblem pb{VolSurface::constant(spec.n, 1.0, spec.b0), {MomentConstraint{1.0, payoff, 1.0}},
                    CalibFamily{FamilyKind::constant, 1, 0.9, 1.3}};
    const CalibResult res = calibrate(pb, spec, 1e-6, {});
    std::printf("sigma* = %.6f  H = %.6e  slack = %.2e  feasible = %d\n", res.theta_star[0], res.entropy, res.slack,
                res.feasible ? 1 : 0);
}
