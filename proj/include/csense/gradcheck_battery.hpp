#pragma once

#include <ostream>
#include <string>
#include <vector>

namespace csense::nn {

struct OpCheck {
    std::string name;
    double max_rel_error = 0.0;
    bool pass = false;
};

// Gradient-checks every differentiable op (3 seeds x 2 shapes each, double
// precision, central differences at h=1e-3) against the 1e-4 bound.
std::vector<OpCheck> run_gradcheck_battery();

// Prints one line per op; returns true when all pass.
bool report_gradcheck_battery(std::ostream& os, const std::vector<OpCheck>& checks);

}  // namespace csense::nn
