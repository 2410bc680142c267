#pragma once

#include "selfcal/diffmath/tape.hpp"

#include <Eigen/Dense>

#include <string>
#include <vector>

namespace selfcal::diff {

// Ordered list of named float64 arrays. All network weights live in one of
// these; the order is the flattening order used by optimizers and
// checkpoints.
class ParamSet {
 public:
  void add(std::string name, Matrix value);

  std::size_t size() const { return arrays_.size(); }
  bool empty() const { return arrays_.empty(); }
  const std::string& name(std::size_t i) const { return names_[i]; }
  Matrix& operator[](std::size_t i) { return arrays_[i]; }
  const Matrix& operator[](std::size_t i) const { return arrays_[i]; }
  // Index of the array called `name`, or size() when absent.
  std::size_t find(const std::string& name) const;

  Index num_scalars() const;
  Eigen::VectorXd flatten() const;
  void assign_flat(const Eigen::VectorXd& flat);
  // Same names and shapes, all zeros.
  ParamSet zeros_like() const;

  bool all_finite() const;
  bool same_layout(const ParamSet& other) const;

  friend bool operator==(const ParamSet& a, const ParamSet& b) {
    return a.names_ == b.names_ && a.arrays_ == b.arrays_;
  }

 private:
  std::vector<std::string> names_;
  std::vector<Matrix> arrays_;
};

// Places every array of `params` on the tape, as differentiable leaves when
// `trainable` is set and as constants otherwise.
std::vector<Var> bind(Tape& tape, const ParamSet& params, bool trainable);

}  // namespace selfcal::diff
