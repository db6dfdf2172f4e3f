#pragma once

#include <random>
#include <sstream>
#include <string>

#include <Eigen/Dense>

#include "byzgrid/byzgrid.hpp"

namespace testsupport {

inline std::string case_path(const std::string& name) { return std::string(BYZGRID_SOURCE_DIR) + "/cases/" + name; }

inline byzgrid::NetworkCase parse(const std::string& text) {
  std::istringstream is(text);
  return byzgrid::parse_case(is);
}

/// Root buyer and one seller child trading with each other.
inline byzgrid::NetworkCase two_bus() {
  return parse(R"([bus]
0 0.81 1.21 0 60 -50 50 20
1 0.81 1.21 -60 0 -50 50 -20
[line]
0 1 0.01 0.02 -500 500 -500 500
[trade]
0 1
)");
}

/// Passive root feeding a buyer and a seller on separate laterals.
inline byzgrid::NetworkCase three_bus() {
  return parse(R"([bus]
0 1 1 -500 500 -500 500 0
1 0.81 1.21 0 60 -50 50 30
2 0.81 1.21 -60 0 -50 50 -25
[line]
0 1 0.01 0.02 -500 500 -500 500
0 2 0.02 0.01 -500 500 -500 500
[trade]
1 2
)");
}

inline Eigen::VectorXd random_vector(std::mt19937_64& rng, Eigen::Index n, double scale = 1.0) {
  std::normal_distribution<double> N(0.0, scale);
  Eigen::VectorXd v(n);
  for (Eigen::Index i = 0; i < n; ++i) v(i) = N(rng);
  return v;
}

inline Eigen::MatrixXd random_matrix(std::mt19937_64& rng, Eigen::Index r, Eigen::Index c) {
  std::normal_distribution<double> N(0.0, 1.0);
  Eigen::MatrixXd m(r, c);
  for (Eigen::Index i = 0; i < r; ++i)
    for (Eigen::Index j = 0; j < c; ++j) m(i, j) = N(rng);
  return m;
}

inline Eigen::MatrixXd random_orthonormal(std::mt19937_64& rng, Eigen::Index r, Eigen::Index c) {
  Eigen::HouseholderQR<Eigen::MatrixXd> qr(random_matrix(rng, r, c));
  return qr.householderQ() * Eigen::MatrixXd::Identity(r, c);
}

}  // namespace testsupport
