#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace sibre::gradcheck {

struct Row {
    std::string name;
    double error = 0.0;
    double threshold = 0.0;
    bool pass = false;
};

struct Report {
    std::vector<Row> rows;
    bool all_pass = true;

    void add(std::string name, double error, double threshold);
    void merge(const Report& other);
};

// Finite-difference checks for every tensor primitive plus the reparameterized
// samplers, at threshold 1e-4.
Report check_primitives(std::uint64_t seed = 7);

// Full-loss checks (sib, sl0, sl0c, semi, learnable-pi) against every model
// parameter with frozen noise, at threshold 1e-3.
Report check_losses(std::uint64_t seed = 7);

Report run_all(std::uint64_t seed = 7);

} // namespace sibre::gradcheck
