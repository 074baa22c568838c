// Gaussian-reference bridge on a 50-point grid between a left bump and a right bump.
#include <cmath>
#include <cstdio>

#include "thinsets/bridge.hpp"

int main() {
    using namespace thinsets;
    std::vector<double> grid, w0, w1, a;
    for (int i = 0; i < 50; ++i) {
        const double x = -2.0 + 4.0 * i / 49.0;
        grid.push_back(x);
        a.push_back(std::exp(-x * x));
        w0.push_back(std::exp(-2.0 * (x + 1.0) * (x + 1.0)));
        w1.push_back(std::exp(-2.0 * (x - 1.0) * (x - 1.0)));
    }
    const SpacePtr sp = MetricSpace::line(grid);
    BridgeProblem pb = gaussian_reference(grid, 0.5, FiniteMeasure::normalized(sp, a));
    pb.nu0 = FiniteMeasure::normalized(sp, w0);
    pb.nu1 = FiniteMeasure::normalized(sp, w1);
    const BridgePotentials pot = sinkhorn(pb, 1e-12, 500);
    const BridgeEntropy h = bridge_entropy(pb, pot);
    std::printf("iterations %d  residual %.3e  H %.10f (potentials %.10f)\n", pot.iterations, pot.residual, h.direct,
                h.potentials);
}
