#pragma once

#include <stdexcept>
#include <string>

#include <Eigen/Dense>

namespace byzgrid {

/// Root of every exception thrown by the library.
struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct ParseError : Error { using Error::Error; };
struct TopologyError : Error { using Error::Error; };
struct BoundsError : Error { using Error::Error; };
struct RoleError : Error { using Error::Error; };
struct LayoutError : Error { using Error::Error; };
struct RankError : Error { using Error::Error; };
struct ConfigError : Error { using Error::Error; };
struct FieldError : Error { using Error::Error; };

// tensor algebra
struct ModeError : Error { using Error::Error; };
struct DimError : Error { using Error::Error; };
struct LengthError : Error { using Error::Error; };
struct ShapeError : Error { using Error::Error; };
struct ConvergenceError : Error { using Error::Error; };

// detector
struct NumericalError : Error { using Error::Error; };
struct InsufficientHistory : Error { using Error::Error; };
struct SingularMoments : Error { using Error::Error; };

/// An iterative method hit its iteration cap. Carries the best iterate seen.
struct NonConvergence : Error {
  NonConvergence(const std::string& what, Eigen::VectorXd best_iterate, double final_residual,
                 int iters)
      : Error(what), best(std::move(best_iterate)), residual(final_residual), iterations(iters) {}
  Eigen::VectorXd best;
  double residual;
  int iterations;
};

}  // namespace byzgrid
