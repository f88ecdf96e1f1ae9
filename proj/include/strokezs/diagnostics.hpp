#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace strokezs {

struct GradCheckRow {
  std::string name;
  double error = 0.0;  // max relative error, or relative magnitude for zero rows
  double tolerance = 0.0;
  bool passed() const { return error < tolerance; }
};

// Primitive ops, attention, and the full encoder -> decoder -> loss graph
// (w.r.t. the image and every parameter tensor) against central differences.
// Key-bias tensors get a separate row asserting their gradient vanishes.
std::vector<GradCheckRow> run_grad_checks(std::uint64_t seed);

}  // namespace strokezs
