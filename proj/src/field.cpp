#include "bms/field.hpp"

#include "bms/errors.hpp"

namespace bms {

void fd_divergence(const ControlField& f, const Matrix& x, double t, double h, Vec& out) {
  const std::size_t n = x.rows, d = x.cols;
  out.assign(n, 0.0);
  Matrix xp = x, fp, fm;
  for (std::size_t j = 0; j < d; ++j) {
    for (std::size_t r = 0; r < n; ++r) xp(r, j) = x(r, j) + h;
    f.eval(xp, t, fp);
    for (std::size_t r = 0; r < n; ++r) xp(r, j) = x(r, j) - h;
    f.eval(xp, t, fm);
    for (std::size_t r = 0; r < n; ++r) {
      xp(r, j) = x(r, j);
      out[r] += (fp(r, j) - fm(r, j)) / (2.0 * h);
    }
  }
}

void ControlField::divergence(const Matrix& x, double t, Vec& out) const { fd_divergence(*this, x, t, fd_step, out); }

NetworkField::NetworkField(std::shared_ptr<const DriftField> net, std::size_t head) : net_(std::move(net)), head_(head) {
  if (!net_) throw Error("network field: null network");
  const auto& a = net_->architecture();
  if (head_ >= a.heads) throw ShapeError("network field: head index out of range");
  if (a.head_dim != 0 && a.head_dim != a.state_dim) throw ShapeError("network field: head size must equal the state size");
}

std::size_t NetworkField::dim() const { return net_->architecture().state_dim; }

void NetworkField::eval(const Matrix& x, double t, Matrix& out) const {
  const std::size_t d = dim();
  std::vector<double> ts(x.rows, t);
  Matrix all;
  net_->evaluate(x, ts, all);
  out.resize(x.rows, d);
  for (std::size_t r = 0; r < x.rows; ++r)
    for (std::size_t j = 0; j < d; ++j) out(r, j) = all(r, head_ * d + j);
}

void NetworkField::divergence(const Matrix& x, double t, Vec& out) const {
  const std::size_t d = dim(), n = x.rows, O = net_->architecture().output_dim();
  std::vector<double> ts(n, t);
  DriftField::Workspace ws;
  Matrix raw, gout(n, O), gx;
  net_->forward(x, ts, raw, ws);
  Vec scratch;
  out.assign(n, 0.0);
  for (std::size_t j = 0; j < d; ++j) {
    std::fill(gout.data.begin(), gout.data.end(), 0.0);
    for (std::size_t r = 0; r < n; ++r) gout(r, head_ * d + j) = 1.0;
    scratch.clear();
    net_->backward(gout, ws, scratch, &gx);
    for (std::size_t r = 0; r < n; ++r) out[r] += gx(r, j);
  }
  if (const auto& sc = net_->scaling()) {
    const double f = sc->factor(t);
    for (double& v : out) v *= f;
  }
}

FunctionField::FunctionField(std::size_t dim, Fn fn, DivFn div) : dim_(dim), fn_(std::move(fn)), div_(std::move(div)) {
  if (!fn_) throw Error("function field: empty callable");
}

void FunctionField::eval(const Matrix& x, double t, Matrix& out) const {
  if (x.cols != dim_) throw ShapeError("function field: state dimension mismatch");
  out.resize(x.rows, dim_);
  fn_(x, t, out);
}

void FunctionField::divergence(const Matrix& x, double t, Vec& out) const {
  if (!div_) return ControlField::divergence(x, t, out);
  out.assign(x.rows, 0.0);
  div_(x, t, out);
}

FunctionField zero_field(std::size_t dim) {
  return FunctionField(
      dim, [](const Matrix& x, double, Matrix& out) { std::fill(out.data.begin(), out.data.end(), 0.0); (void)x; },
      [](const Matrix&, double, Vec& out) { std::fill(out.begin(), out.end(), 0.0); });
}

}  // namespace bms
