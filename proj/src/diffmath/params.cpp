#include "selfcal/diffmath/params.hpp"

#include "selfcal/error.hpp"

namespace selfcal::diff {

void ParamSet::add(std::string name, Matrix value) {
  if (find(name) != size()) throw Error(ErrorCode::InvalidArgument, "duplicate parameter name " + name);
  names_.push_back(std::move(name));
  arrays_.push_back(std::move(value));
}

std::size_t ParamSet::find(const std::string& name) const {
  for (std::size_t i = 0; i < names_.size(); ++i) {
    if (names_[i] == name) return i;
  }
  return names_.size();
}

Index ParamSet::num_scalars() const {
  Index n = 0;
  for (const Matrix& m : arrays_) n += m.size();
  return n;
}

Eigen::VectorXd ParamSet::flatten() const {
  Eigen::VectorXd flat(num_scalars());
  Index offset = 0;
  for (const Matrix& m : arrays_) {
    flat.segment(offset, m.size()) = m.reshaped();
    offset += m.size();
  }
  return flat;
}

void ParamSet::assign_flat(const Eigen::VectorXd& flat) {
  if (flat.size() != num_scalars()) throw Error(ErrorCode::InvalidArgument, "assign_flat: size mismatch");
  Index offset = 0;
  for (Matrix& m : arrays_) {
    m.reshaped() = flat.segment(offset, m.size());
    offset += m.size();
  }
}

ParamSet ParamSet::zeros_like() const {
  ParamSet out;
  for (std::size_t i = 0; i < size(); ++i) {
    out.add(names_[i], Matrix::Zero(arrays_[i].rows(), arrays_[i].cols()));
  }
  return out;
}

bool ParamSet::all_finite() const {
  for (const Matrix& m : arrays_) {
    if (!m.allFinite()) return false;
  }
  return true;
}

bool ParamSet::same_layout(const ParamSet& other) const {
  if (names_ != other.names_) return false;
  for (std::size_t i = 0; i < size(); ++i) {
    if (arrays_[i].rows() != other.arrays_[i].rows() || arrays_[i].cols() != other.arrays_[i].cols()) {
      return false;
    }
  }
  return true;
}

std::vector<Var> bind(Tape& tape, const ParamSet& params, bool trainable) {
  std::vector<Var> vars;
  vars.reserve(params.size());
  for (std::size_t i = 0; i < params.size(); ++i) {
    vars.push_back(trainable ? tape.variable(params[i]) : tape.constant(params[i]));
  }
  return vars;
}

}  // namespace selfcal::diff
