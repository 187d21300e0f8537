#pragma once

#include <functional>
#include <string>
#include <vector>

#include "tape.hpp"
#include "tensor.hpp"

namespace umurl {

// Central finite-difference verification of reverse-mode gradients, always
// in 64-bit. The builder must produce a scalar from the given leaves and is
// re-evaluated 2 * numel times per input, so keep the inputs small.

using LossBuilder =
    std::function<Var<double>(Tape<double>&, const std::vector<Var<double>>&)>;

struct GradCheckReport {
    struct PerInput {
        std::string name;
        double max_rel_err = 0.0;
    };
    std::vector<PerInput> inputs;

    double worst() const {
        double w = 0.0;
        for (const PerInput& p : inputs) {
            w = std::max(w, p.max_rel_err);
        }
        return w;
    }
};

GradCheckReport grad_check(const LossBuilder& build, std::vector<TensorData<double>> inputs,
                           double step = 1e-4, std::vector<std::string> names = {});

// The full verification battery behind the `gradcheck` command: one entry
// per loss term plus the tiny end-to-end model objective.
struct GradCheckBatteryEntry {
    std::string name;
    double max_rel_err;
};
std::vector<GradCheckBatteryEntry> gradcheck_battery(std::uint64_t seed, double step);

}  // namespace umurl
