#pragma once

#include <vector>

#include <Eigen/Dense>

#include "fedbpt/subspace.hpp"

namespace fedbpt {

/// Server -> clients at the start of round t.
struct Broadcast {
  Eigen::VectorXd mean;
  double step = 1.0;
  Eigen::MatrixXd cov;
  int round = 0;
  ProjectionSpec projection;
};

/// Client -> server at the end of a round.
struct ClientResult {
  int client_id = 0;
  Eigen::VectorXd final_mean;
  std::vector<double> step_lengths;  // [sigma_t, sigma after each local update]
  double local_loss = 0.0;           // clean loss at final_mean
  int sample_count = 0;
};

/// Final local search state; only the direct-averaging baseline uploads it.
struct LocalState {
  Eigen::VectorXd mean;
  double step = 1.0;
  Eigen::MatrixXd cov;
  int sample_count = 0;
};

}  // namespace fedbpt
