// Generates one phantom, runs both solvers through the detection pipeline and
// prints what each one finds.

#include <cstdio>

#include "luslines/luslines.hpp"

using namespace luslines;

int main() {
    PhantomSpec spec;
    spec.pleural_depth = 38;
    spec.bline_columns = {45, 100};
    spec.noise_sigma = 0.05;
    spec.seed = 4;
    const Phantom ph = generate_phantom(spec);
    const Geometry geo = Geometry::for_image(spec.height, spec.width, 180, 1.0);

    for (SolverKind kind : {SolverKind::cps, SolverKind::ducps}) {
        RestoreConfig rc;
        rc.solver = kind;
        const DetectionResult res = detect_pipeline(ph.image, geo, rc);
        std::printf("%s: pleural %s", to_string(kind), res.pleural_found ? "found" : "missing");
        if (res.pleural) std::printf(" at depth %.1f", res.pleural->spatial_depth);
        std::printf(", %zu A-line(s), B-lines at", res.alines.size());
        std::vector<double> xs;
        for (const auto& b : res.blines) {
            std::printf(" %.0f", b.spatial_x);
            xs.push_back(b.spatial_x);
        }
        const ScoreReport r = match_detections(xs, ph.truth);
        std::printf("; TP %d FP %d FN %d\n", r.tp, r.fp, r.fn);
    }
}
