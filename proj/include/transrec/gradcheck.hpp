#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "transrec/tensor.hpp"

namespace transrec {

// Worst-coordinate discrepancy between reverse-mode gradients and central
// finite differences of a scalar-valued forward pass. `forward` must rebuild
// its graph from the current leaf values on every call. Discrepancy is
// |ad - fd| / max(|ad|, |fd|, 1).
double gradcheck_max_err(const std::vector<Tensor>& leaves,
                         const std::function<Tensor()>& forward, double step = 1e-5);

struct GradCheckCase {
  std::string name;
  double err = 0.0;
  double tol = 0.0;
  bool pass = false;
};

// Finite-difference checks over every differentiable op, all six losses and a
// tiny end-to-end encoder. Backs `analyze gradcheck`.
std::vector<GradCheckCase> gradcheck_suite(std::uint64_t seed);

}  // namespace transrec
