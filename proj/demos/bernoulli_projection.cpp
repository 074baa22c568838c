// Tilts a fair coin to mean 0.7 and watches the conditioned first coordinate
// approach the tilted law as n grows.
#include <cstdio>

#include "thinsets/gibbs.hpp"
#include "thinsets/iproj.hpp"

int main() {
    using namespace thinsets;
    const std::vector<double> support{0.0, 1.0};
    const FiniteMeasure alpha = FiniteMeasure::normalized(MetricSpace::line(support), {1.0, 1.0});
    Eigen::MatrixXd F(2, 1);
    F << 0.0, 1.0;
    Eigen::VectorXd x0(1);
    x0 << 0.7;
    const MomentProblem pb{alpha, F, PointTarget{x0}};
    const TiltedSolution sol = solve_dual(pb);
    std::printf("lambda* = %.10f  H = %.8f  alpha*(1) = %.6f\n", sol.lambda_star(0), sol.entropy, sol.alpha_star[1]);

    for (int n : {8, 16, 32, 64, 128}) {
        const double eps = enlargement_sqrt(sol, 1.0, n);
        const ConditionalEstimate ce = exact_conditional(alpha, n, MomentBand{F, x0, eps, BandNorm::sup}, 1);
        std::printf("n=%4d  eps=%.4f  P=%.3e  tv=%.5f\n", n, eps, ce.acceptance_rate, tv_distance(ce.law, sol.alpha_star));
    }
}
