#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

namespace lamelab {

/// Base class of every numerical failure raised by the library.
/// Argument validation uses std::invalid_argument instead.
class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
  virtual const char* name() const noexcept { return "NumericalError"; }
};

/// Conjugate-gradient inner solve did not reach its tolerance.
class SolverDivergence : public NumericalError {
 public:
  SolverDivergence(double residual, int iterations)
      : NumericalError("inner CG solve did not converge: relative residual " +
                       std::to_string(residual) + " after " + std::to_string(iterations) +
                       " iterations"),
        residual_(residual),
        iterations_(iterations) {}
  const char* name() const noexcept override { return "SolverDivergence"; }
  double residual() const { return residual_; }
  int iterations() const { return iterations_; }

 private:
  double residual_;
  int iterations_;
};

/// The flow map stopped being orientation preserving (det DX <= 0).
class DiffeomorphismLoss : public NumericalError {
 public:
  DiffeomorphismLoss(std::size_t node, double time, double jacobian)
      : NumericalError("flow map lost invertibility: J = " + std::to_string(jacobian) +
                       " at node " + std::to_string(node) + ", t = " + std::to_string(time)),
        node_(node),
        time_(time),
        jacobian_(jacobian) {}
  const char* name() const noexcept override { return "DiffeomorphismLoss"; }
  std::size_t node() const { return node_; }
  double time() const { return time_; }
  double jacobian() const { return jacobian_; }

 private:
  std::size_t node_;
  double time_;
  double jacobian_;
};

/// Picard iteration exhausted its budget; carries the contraction factors seen.
class PicardDivergence : public NumericalError {
 public:
  explicit PicardDivergence(std::vector<double> factors)
      : NumericalError("Picard iteration did not converge after " +
                       std::to_string(factors.size()) + " updates"),
        factors_(std::move(factors)) {}
  const char* name() const noexcept override { return "PicardDivergence"; }
  const std::vector<double>& factors() const { return factors_; }

 private:
  std::vector<double> factors_;
};

/// Fixed-point inversion of the flow map failed at some node.
class InversionFailure : public NumericalError {
 public:
  InversionFailure(std::size_t node, double defect)
      : NumericalError("flow-map inversion did not converge at node " + std::to_string(node) +
                       " (defect " + std::to_string(defect) + ")"),
        node_(node),
        defect_(defect) {}
  const char* name() const noexcept override { return "InversionFailure"; }
  std::size_t node() const { return node_; }
  double defect() const { return defect_; }

 private:
  std::size_t node_;
  double defect_;
};

}  // namespace lamelab
