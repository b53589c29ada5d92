// Simulates one Case-1 panel and runs the main tests on it.

#include <cstdio>

#include "cepa/cepa.hpp"

int main() {
    auto cfg = cepa::sim::design("power-case1", 0.25);
    cfg.n = 40;
    cfg.t = 100;
    const auto panel = cepa::sim::simulate_panel(cfg, 2024);
    const auto z = cepa::sim::moments(cfg, panel);

    const auto oepa = cepa::oepa_test(z);
    const auto sel = cepa::cepa_selective(z, cepa::KChoice::ic(), cepa::kDefaultMergeOrder, std::nullopt, 7);
    const auto split = cepa::split_sample_test(z, 0.2, cepa::KChoice::ic(), std::nullopt, 7);

    std::printf("O-EPA          W = %8.3f  p = %.4g\n", oepa.statistic, oepa.p);
    std::printf("split sample   W = %8.3f  p = %.4g  (K = %d)\n", split.statistic, split.p, *split.k);
    std::printf("selective C-EPA      p = %.4g  (K = %d)\n", sel.p, *sel.k);
    for (const auto& pr : sel.pairs) {
        std::printf("  pair (%d,%d)  stat = %7.3f  p = %.4g\n", pr.k + 1, pr.g + 1, pr.d, pr.p);
    }
    return 0;
}
