// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <vector>

namespace est_tools {

struct HessianRequest {
  std::filesystem::path checkpoint;
  std::filesystem::path data;
  std::size_t probes = 64;
  double fd_epsilon = 1e-3;
  std::uint64_t seed = 0x5eed;
  std::size_t batches = 8;
  bool stability_check = false;  // repeat at fd_epsilon / 10 with the same probes
};

struct HessianOutcome {
  double value = 0;
  std::size_t n_probes = 0;
  double std_error = 0;
  double fd_epsilon = 0;
  std::vector<double> probes;
  std::optional<double> check_value;  // estimate at fd_epsilon / 10
  double eval_loss = 0;               // mean loss over the probe batches
};

HessianOutcome run_hessian_fp32(const HessianRequest& request);
HessianOutcome run_hessian_fp64(const HessianRequest& request);

}  // namespace est_tools
