#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "simlens/model.hpp"

namespace fixtures {

// Table-1 shaped data: 3 repetitions x 2 DGMs x 2 methods, estimate only.
inline simlens::RawTable table1() {
    simlens::RawTable t;
    t.header = {"Repetition", "DGM", "Method", "Estimate"};
    int k = 0;
    for (int method = 1; method <= 2; ++method)
        for (int dgm = 1; dgm <= 2; ++dgm)
            for (int rep = 1; rep <= 3; ++rep)
                t.rows.push_back({std::to_string(rep), std::to_string(dgm), std::to_string(method),
                                  std::to_string(0.1 * ++k)});
    return t;
}

// Seeded stand-in with the case-study layout: `dgms` DGMs x 3 methods x
// `reps` repetitions, columns idrep/dgm/method/theta/se. Normal draws via
// Box-Muller on mt19937_64 so the bytes are identical on every platform.
class Gaussian {
public:
    explicit Gaussian(std::uint64_t seed) : gen_(seed) {}
    double operator()() {
        if (has_spare_) {
            has_spare_ = false;
            return spare_;
        }
        double u1 = 0.0;
        do {
            u1 = uniform();
        } while (u1 <= 0.0);
        const double u2 = uniform();
        const double r = std::sqrt(-2.0 * std::log(u1));
        spare_ = r * std::sin(2.0 * M_PI * u2);
        has_spare_ = true;
        return r * std::cos(2.0 * M_PI * u2);
    }
    double uniform() { return static_cast<double>(gen_() >> 11) * 0x1.0p-53; }

private:
    std::mt19937_64 gen_;
    bool has_spare_ = false;
    double spare_ = 0.0;
};

inline simlens::RawTable case_study_standin(std::uint64_t seed = 20200301, int reps = 1600, int dgms = 2) {
    Gaussian g(seed);
    simlens::RawTable t;
    t.header = {"idrep", "dgm", "method", "theta", "se"};
    const double theta = -0.5;
    // Per (dgm, method) bias and spread loosely shaped like survival-model estimates.
    const double shift[2][3] = {{0.0, 0.0, 0.0}, {0.05, 0.005, 0.006}};
    const double spread[2][3] = {{0.14, 0.14, 0.145}, {0.138, 0.152, 0.151}};
    const double model_se[2][3] = {{0.14, 0.141, 0.142}, {0.154, 0.154, 0.154}};
    char buf[64];
    for (int d = 0; d < dgms; ++d)
        for (int rep = 1; rep <= reps; ++rep) {
            const double common = g();
            for (int m = 0; m < 3; ++m) {
                const double noise = 0.9 * common + std::sqrt(1 - 0.81) * g();
                const double est = theta + shift[d % 2][m] + spread[d % 2][m] * noise;
                const double se = model_se[d % 2][m] * (1.0 + 0.02 * g());
                std::vector<std::string> row{std::to_string(rep), std::to_string(d + 1), std::to_string(m + 1)};
                std::snprintf(buf, sizeof buf, "%.17g", est);
                row.emplace_back(buf);
                std::snprintf(buf, sizeof buf, "%.17g", se);
                row.emplace_back(buf);
                t.rows.push_back(std::move(row));
            }
        }
    return t;
}

// Blank out each cell of `column` independently with probability p (MCAR).
inline simlens::RawTable inject_mcar(simlens::RawTable t, std::size_t column, double p, std::uint64_t seed) {
    Gaussian g(seed);
    for (auto& row : t.rows)
        if (g.uniform() < p) row[column] = "NA";
    return t;
}

}  // namespace fixtures
