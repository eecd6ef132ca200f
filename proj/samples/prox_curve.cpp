// Prints the Cauchy proximal map and its derivative in z as CSV, for plotting
// the shrinkage curve at a few step sizes.

#include <cstdio>

#include "luslines/cauchy.hpp"

int main() {
    const double gamma = 1.0;
    std::printf("z,mu,u,du_dz\n");
    for (double mu : {0.1, 1.0, 4.0}) {
        for (int k = -40; k <= 40; ++k) {
            const double z = 0.25 * k;
            const double u = luslines::solve_prox_cubic(z, gamma, mu);
            const auto g = luslines::cauchy_prox_grads_safe(z, u, gamma, mu);
            std::printf("%g,%g,%.6f,%.6f\n", z, mu, u, g.du_dz);
        }
    }
}
