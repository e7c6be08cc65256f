#pragma once

// Batch vector fields u(x, t) consumed by the simulators and the likelihood
// code. A network head and a closed-form function look the same here.

#include <functional>
#include <memory>

#include "bms/drift_model.hpp"
#include "bms/types.hpp"

namespace bms {

class ControlField {
 public:
  virtual ~ControlField() = default;
  virtual std::size_t dim() const = 0;
  /// out(r, :) = u(x(r, :), t)
  virtual void eval(const Matrix& x, double t, Matrix& out) const = 0;
  /// Divergence of u per row. Default: central differences with step h.
  virtual void divergence(const Matrix& x, double t, Vec& out) const;
  double fd_step = 1e-4;
};

/// Central-difference divergence of any field (used by the default and for cross-checks).
void fd_divergence(const ControlField& f, const Matrix& x, double t, double h, Vec& out);

/// One head of a (possibly multi-head) network; divergence by reverse mode.
class NetworkField : public ControlField {
 public:
  NetworkField(std::shared_ptr<const DriftField> net, std::size_t head = 0);
  std::size_t dim() const override;
  void eval(const Matrix& x, double t, Matrix& out) const override;
  void divergence(const Matrix& x, double t, Vec& out) const override;
  const DriftField& net() const { return *net_; }

 private:
  std::shared_ptr<const DriftField> net_;
  std::size_t head_;
};

/// Closed-form field; the divergence is FD unless a closed form is supplied.
class FunctionField : public ControlField {
 public:
  using Fn = std::function<void(const Matrix& x, double t, Matrix& out)>;
  using DivFn = std::function<void(const Matrix& x, double t, Vec& out)>;
  FunctionField(std::size_t dim, Fn fn, DivFn div = {});
  std::size_t dim() const override { return dim_; }
  void eval(const Matrix& x, double t, Matrix& out) const override;
  void divergence(const Matrix& x, double t, Vec& out) const override;

 private:
  std::size_t dim_;
  Fn fn_;
  DivFn div_;
};

/// u = 0
FunctionField zero_field(std::size_t dim);

}  // namespace bms
