#include "ovrcine/autodiff.hpp"

#include "ovrcine/encoding.hpp"
#include "ovrcine/error.hpp"
#include "ovrcine/fft.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

namespace ovrcine::ad {

namespace {

using MatRM = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

std::string shape_str(std::vector<int> const &s)
{
  std::string out = "[";
  for (size_t i = 0; i < s.size(); ++i) { out += (i ? "," : "") + std::to_string(s[i]); }
  return out + "]";
}

void require_same_shape(Var const &a, Var const &b, char const *op)
{
  if (a.shape() != b.shape()) {
    throw ConfigError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  }
}

void require_scalar(Var const &a, char const *op)
{
  if (a.value().size() != 1) { throw ConfigError(std::string(op) + ": expected a scalar, got " + shape_str(a.shape())); }
}

void require_image_stack(Var const &a, char const *op, bool complex_pairs)
{
  auto const &s = a.shape();
  if (s.size() != 3 || (complex_pairs && s[0] % 2 != 0)) {
    throw ConfigError(std::string(op) + ": expected a [" + (complex_pairs ? "2k" : "C") + ",H,W] tensor, got " +
                      shape_str(s));
  }
}

void same_tape(Var const &a, Var const &b)
{
  if (&a.tape() != &b.tape()) { throw ConfigError("autodiff: operands live on different tapes"); }
}

void accumulate(Tensor &dst, Tensor const &src, double s = 1.0)
{
  for (size_t i = 0; i < dst.size(); ++i) { dst.data[i] += s * src.data[i]; }
}

double dot_raw(Tensor const &a, Tensor const &b)
{
  double s = 0.0;
  for (size_t i = 0; i < a.size(); ++i) { s += a.data[i] * b.data[i]; }
  return s;
}

// Complex channel j of a [2k, H, W] tensor.
ComplexImage channel_pair(Tensor const &t, int j)
{
  int const H = t.shape[1], W = t.shape[2];
  ComplexImage x(H, W);
  double const *re = t.plane(2 * j);
  double const *im = t.plane(2 * j + 1);
  for (int i = 0; i < H * W; ++i) { x.data()[i] = cplx(re[i], im[i]); }
  return x;
}

void store_pair(Tensor &t, int j, ComplexImage const &x, double s = 1.0, bool add = false)
{
  int const n = t.shape[1] * t.shape[2];
  double *re = t.plane(2 * j);
  double *im = t.plane(2 * j + 1);
  for (int i = 0; i < n; ++i) {
    if (add) {
      re[i] += s * x.data()[i].real();
      im[i] += s * x.data()[i].imag();
    } else {
      re[i] = s * x.data()[i].real();
      im[i] = s * x.data()[i].imag();
    }
  }
}

Tensor fft_channels(Tensor const &x, bool forward)
{
  Tensor out(x.shape);
  ComplexImage k;
  for (int j = 0; j < x.shape[0] / 2; ++j) {
    ComplexImage const img = channel_pair(x, j);
    if (forward) {
      fft2c_into(img, k);
    } else {
      ifft2c_into(img, k);
    }
    store_pair(out, j, k);
  }
  return out;
}

// Columns of the im2col matrix: (Cin*9) x (H*W).
void im2col(Tensor const &x, Buffer &col)
{
  int const Cin = x.shape[0], H = x.shape[1], W = x.shape[2];
  col.assign(static_cast<size_t>(Cin) * 9 * H * W, 0.0);
  for (int i = 0; i < Cin; ++i) {
    double const *src = x.plane(i);
    for (int ky = 0; ky < 3; ++ky) {
      for (int kx = 0; kx < 3; ++kx) {
        double *dst = col.data() + (static_cast<size_t>(i) * 9 + ky * 3 + kx) * H * W;
        int const dy = ky - 1, dx = kx - 1;
        int const x0 = std::max(0, -dx), x1 = std::min(W, W - dx);
        for (int y = std::max(0, -dy); y < std::min(H, H - dy); ++y) {
          double const *s = src + (y + dy) * W + dx;
          double *d = dst + y * W;
          for (int xx = x0; xx < x1; ++xx) { d[xx] = s[xx]; }
        }
      }
    }
  }
}

void col2im_add(Buffer const &col, Tensor &gx)
{
  int const Cin = gx.shape[0], H = gx.shape[1], W = gx.shape[2];
  for (int i = 0; i < Cin; ++i) {
    double *dst = gx.plane(i);
    for (int ky = 0; ky < 3; ++ky) {
      for (int kx = 0; kx < 3; ++kx) {
        double const *src = col.data() + (static_cast<size_t>(i) * 9 + ky * 3 + kx) * H * W;
        int const dy = ky - 1, dx = kx - 1;
        int const x0 = std::max(0, -dx), x1 = std::min(W, W - dx);
        for (int y = std::max(0, -dy); y < std::min(H, H - dy); ++y) {
          double *d = dst + (y + dy) * W + dx;
          double const *s = src + y * W;
          for (int xx = x0; xx < x1; ++xx) { d[xx] += s[xx]; }
        }
      }
    }
  }
}

} // namespace

Tensor::Tensor(std::vector<int> s, double fill)
  : shape(std::move(s))
  , data(element_count(shape), fill)
{
}

std::size_t element_count(std::vector<int> const &shape)
{
  std::size_t n = 1;
  for (int d : shape) {
    if (d < 0) { throw ConfigError("autodiff: negative dimension"); }
    n *= static_cast<std::size_t>(d);
  }
  return n;
}

Tensor to_tensor(ComplexImage const &x)
{
  Tensor t({2, static_cast<int>(x.rows()), static_cast<int>(x.cols())});
  store_pair(t, 0, x);
  return t;
}

Tensor to_tensor(std::vector<ComplexImage> const &xs)
{
  if (xs.empty()) { throw ConfigError("to_tensor: empty stack"); }
  Tensor t({2 * static_cast<int>(xs.size()), static_cast<int>(xs[0].rows()), static_cast<int>(xs[0].cols())});
  for (size_t j = 0; j < xs.size(); ++j) { store_pair(t, static_cast<int>(j), xs[j]); }
  return t;
}

ComplexImage to_complex(Tensor const &t, int complex_channel)
{
  if (t.shape.size() != 3 || 2 * complex_channel + 1 >= t.shape[0]) { throw ConfigError("to_complex: bad channel"); }
  return channel_pair(t, complex_channel);
}

// ---------------------------------------------------------------------------
// Tape

Tensor const &Var::value() const { return tape_->value(id_); }
Tensor const &Var::grad() const { return tape_->grad(id_); }
bool Var::requires_grad() const { return tape_->needs_grad(id_); }

Var Tape::variable(Tensor value)
{
  nodes_.push_back(Node{std::move(value), {}, {}, {}, true});
  return Var(this, static_cast<int>(nodes_.size()) - 1);
}

Var Tape::constant(Tensor value)
{
  nodes_.push_back(Node{std::move(value), {}, {}, {}, false});
  return Var(this, static_cast<int>(nodes_.size()) - 1);
}

Var Tape::record(Tensor value, std::vector<int> parents, Backward backward)
{
  bool req = false;
  for (int p : parents) { req = req || needs_grad(p); }
  Node n{std::move(value), {}, {}, {}, req};
  if (req) {
    n.parents = std::move(parents);
    n.backward = std::move(backward);
  }
  nodes_.push_back(std::move(n));
  return Var(this, static_cast<int>(nodes_.size()) - 1);
}

Tensor const &Tape::grad(int id) const
{
  auto &n = const_cast<Node &>(nodes_[static_cast<size_t>(id)]);
  if (n.grad.data.empty()) { n.grad = Tensor(n.value.shape); }
  return n.grad;
}

Tensor &Tape::grad_accumulator(int id)
{
  auto &n = nodes_[static_cast<size_t>(id)];
  if (n.grad.data.empty()) { n.grad = Tensor(n.value.shape); }
  return n.grad;
}

void Tape::backward(Var const &loss, double seed)
{
  if (&loss.tape() != this) { throw ConfigError("backward: variable belongs to another tape"); }
  if (value(loss.id()).size() != 1) { throw ConfigError("backward: loss must be a scalar"); }
  if (!needs_grad(loss.id())) { return; }
  grad_accumulator(loss.id()).data[0] += seed;
  for (int i = loss.id(); i >= 0; --i) {
    auto &n = nodes_[static_cast<size_t>(i)];
    if (n.backward && !n.grad.data.empty()) { n.backward(*this, i); }
  }
}

// ---------------------------------------------------------------------------
// Elementwise

Var add(Var const &a, Var const &b)
{
  same_tape(a, b);
  require_same_shape(a, b, "add");
  Tensor v = a.value();
  accumulate(v, b.value());
  int const ia = a.id(), ib = b.id();
  return a.tape().record(std::move(v), {ia, ib}, [ia, ib](Tape &t, int self) {
    if (t.needs_grad(ia)) { accumulate(t.grad_accumulator(ia), t.grad(self)); }
    if (t.needs_grad(ib)) { accumulate(t.grad_accumulator(ib), t.grad(self)); }
  });
}

Var sub(Var const &a, Var const &b)
{
  same_tape(a, b);
  require_same_shape(a, b, "sub");
  Tensor v = a.value();
  accumulate(v, b.value(), -1.0);
  int const ia = a.id(), ib = b.id();
  return a.tape().record(std::move(v), {ia, ib}, [ia, ib](Tape &t, int self) {
    if (t.needs_grad(ia)) { accumulate(t.grad_accumulator(ia), t.grad(self)); }
    if (t.needs_grad(ib)) { accumulate(t.grad_accumulator(ib), t.grad(self), -1.0); }
  });
}

Var scale(Var const &a, double s)
{
  Tensor v = a.value();
  for (auto &e : v.data) { e *= s; }
  int const ia = a.id();
  return a.tape().record(std::move(v), {ia}, [ia, s](Tape &t, int self) {
    accumulate(t.grad_accumulator(ia), t.grad(self), s);
  });
}

Var mul(Var const &a, Var const &s)
{
  same_tape(a, s);
  require_scalar(s, "mul");
  double const sv = s.value().item();
  Tensor v = a.value();
  for (auto &e : v.data) { e *= sv; }
  int const ia = a.id(), is = s.id();
  return a.tape().record(std::move(v), {ia, is}, [ia, is](Tape &t, int self) {
    Tensor const &g = t.grad(self);
    if (t.needs_grad(ia)) { accumulate(t.grad_accumulator(ia), g, t.value(is).item()); }
    if (t.needs_grad(is)) { t.grad_accumulator(is).data[0] += dot_raw(t.value(ia), g); }
  });
}

Var axpy(Var const &x, Var const &s, Var const &y)
{
  same_tape(x, y);
  same_tape(x, s);
  require_same_shape(x, y, "axpy");
  require_scalar(s, "axpy");
  Tensor v = x.value();
  accumulate(v, y.value(), s.value().item());
  int const ix = x.id(), is = s.id(), iy = y.id();
  return x.tape().record(std::move(v), {ix, is, iy}, [ix, is, iy](Tape &t, int self) {
    Tensor const &g = t.grad(self);
    if (t.needs_grad(ix)) { accumulate(t.grad_accumulator(ix), g); }
    if (t.needs_grad(iy)) { accumulate(t.grad_accumulator(iy), g, t.value(is).item()); }
    if (t.needs_grad(is)) { t.grad_accumulator(is).data[0] += dot_raw(t.value(iy), g); }
  });
}

Var dot(Var const &a, Var const &b)
{
  same_tape(a, b);
  require_same_shape(a, b, "dot");
  int const ia = a.id(), ib = b.id();
  return a.tape().record(Tensor::scalar(dot_raw(a.value(), b.value())), {ia, ib}, [ia, ib](Tape &t, int self) {
    double const g = t.grad(self).item();
    if (t.needs_grad(ia)) { accumulate(t.grad_accumulator(ia), t.value(ib), g); }
    if (t.needs_grad(ib)) { accumulate(t.grad_accumulator(ib), t.value(ia), g); }
  });
}

Var div(Var const &a, Var const &b)
{
  same_tape(a, b);
  require_scalar(a, "div");
  require_scalar(b, "div");
  double const bv = b.value().item();
  if (bv == 0.0) { throw NumericalError("div: division by zero"); }
  int const ia = a.id(), ib = b.id();
  return a.tape().record(Tensor::scalar(a.value().item() / bv), {ia, ib}, [ia, ib](Tape &t, int self) {
    double const g = t.grad(self).item();
    double const av = t.value(ia).item(), bv2 = t.value(ib).item();
    if (t.needs_grad(ia)) { t.grad_accumulator(ia).data[0] += g / bv2; }
    if (t.needs_grad(ib)) { t.grad_accumulator(ib).data[0] -= g * av / (bv2 * bv2); }
  });
}

Var exp(Var const &a)
{
  Tensor v = a.value();
  for (auto &e : v.data) { e = std::exp(e); }
  int const ia = a.id();
  return a.tape().record(std::move(v), {ia}, [ia](Tape &t, int self) {
    Tensor const &g = t.grad(self);
    Tensor const &y = t.value(self);
    Tensor &ga = t.grad_accumulator(ia);
    for (size_t i = 0; i < ga.size(); ++i) { ga.data[i] += g.data[i] * y.data[i]; }
  });
}

Var relu(Var const &x)
{
  Tensor v = x.value();
  for (auto &e : v.data) { e = e > 0.0 ? e : 0.0; }
  int const ix = x.id();
  return x.tape().record(std::move(v), {ix}, [ix](Tape &t, int self) {
    Tensor const &g = t.grad(self);
    Tensor const &in = t.value(ix);
    Tensor &gx = t.grad_accumulator(ix);
    for (size_t i = 0; i < gx.size(); ++i) {
      if (in.data[i] > 0.0) { gx.data[i] += g.data[i]; }
    }
  });
}

Var sum(Var const &x)
{
  double const s = std::accumulate(x.value().data.begin(), x.value().data.end(), 0.0);
  int const ix = x.id();
  return x.tape().record(Tensor::scalar(s), {ix}, [ix](Tape &t, int self) {
    double const g = t.grad(self).item();
    for (auto &e : t.grad_accumulator(ix).data) { e += g; }
  });
}

Var l2norm(Var const &x)
{
  double const n = std::sqrt(dot_raw(x.value(), x.value()));
  int const ix = x.id();
  return x.tape().record(Tensor::scalar(n), {ix}, [ix](Tape &t, int self) {
    double const nv = t.value(self).item();
    if (nv == 0.0) { return; }
    accumulate(t.grad_accumulator(ix), t.value(ix), t.grad(self).item() / nv);
  });
}

Var l1norm(Var const &x)
{
  double s = 0.0;
  for (double e : x.value().data) { s += std::abs(e); }
  int const ix = x.id();
  return x.tape().record(Tensor::scalar(s), {ix}, [ix](Tape &t, int self) {
    double const g = t.grad(self).item();
    Tensor const &in = t.value(ix);
    Tensor &gx = t.grad_accumulator(ix);
    for (size_t i = 0; i < gx.size(); ++i) {
      double const e = in.data[i];
      gx.data[i] += e > 0.0 ? g : (e < 0.0 ? -g : 0.0);
    }
  });
}

Var mask_mul(Var const &x, RealImage const &mask)
{
  require_image_stack(x, "mask_mul", false);
  auto const &s = x.shape();
  if (mask.rows() != s[1] || mask.cols() != s[2]) { throw ConfigError("mask_mul: mask dims differ from tensor"); }
  auto m = std::make_shared<std::vector<double>>(mask.data(), mask.data() + mask.size());
  Tensor v = x.value();
  size_t const plane = static_cast<size_t>(s[1]) * s[2];
  for (size_t i = 0; i < v.size(); ++i) { v.data[i] *= (*m)[i % plane]; }
  int const ix = x.id();
  return x.tape().record(std::move(v), {ix}, [ix, m, plane](Tape &t, int self) {
    Tensor const &g = t.grad(self);
    Tensor &gx = t.grad_accumulator(ix);
    for (size_t i = 0; i < gx.size(); ++i) { gx.data[i] += g.data[i] * (*m)[i % plane]; }
  });
}

Var slice_channels(Var const &x, int begin, int count)
{
  require_image_stack(x, "slice_channels", false);
  auto const &s = x.shape();
  if (begin < 0 || count < 1 || begin + count > s[0]) { throw ConfigError("slice_channels: range out of bounds"); }
  size_t const plane = static_cast<size_t>(s[1]) * s[2];
  Tensor v({count, s[1], s[2]});
  std::copy_n(x.value().data.begin() + static_cast<std::ptrdiff_t>(begin * plane), count * plane, v.data.begin());
  int const ix = x.id();
  return x.tape().record(std::move(v), {ix}, [ix, begin, plane](Tape &t, int self) {
    Tensor const &g = t.grad(self);
    Tensor &gx = t.grad_accumulator(ix);
    for (size_t i = 0; i < g.size(); ++i) { gx.data[begin * plane + i] += g.data[i]; }
  });
}

Var concat_channels(std::vector<Var> const &xs)
{
  if (xs.empty()) { throw ConfigError("concat_channels: nothing to concatenate"); }
  auto const &s0 = xs[0].shape();
  int channels = 0;
  std::vector<int> ids;
  for (auto const &x : xs) {
    same_tape(xs[0], x);
    require_image_stack(x, "concat_channels", false);
    if (x.shape()[1] != s0[1] || x.shape()[2] != s0[2]) { throw ConfigError("concat_channels: spatial dims differ"); }
    channels += x.shape()[0];
    ids.push_back(x.id());
  }
  Tensor v({channels, s0[1], s0[2]});
  size_t pos = 0;
  for (auto const &x : xs) {
    std::copy(x.value().data.begin(), x.value().data.end(), v.data.begin() + static_cast<std::ptrdiff_t>(pos));
    pos += x.value().size();
  }
  return xs[0].tape().record(std::move(v), ids, [ids](Tape &t, int self) {
    Tensor const &g = t.grad(self);
    size_t off = 0;
    for (int id : ids) {
      size_t const n = t.value(id).size();
      if (t.needs_grad(id)) {
        Tensor &gx = t.grad_accumulator(id);
        for (size_t i = 0; i < n; ++i) { gx.data[i] += g.data[off + i]; }
      }
      off += n;
    }
  });
}

Var complex_join(Var const &re, Var const &im)
{
  same_tape(re, im);
  require_same_shape(re, im, "complex_join");
  require_image_stack(re, "complex_join", false);
  auto const &s = re.shape();
  size_t const plane = static_cast<size_t>(s[1]) * s[2];
  Tensor v({2 * s[0], s[1], s[2]});
  for (int j = 0; j < s[0]; ++j) {
    std::copy_n(re.value().plane(j), plane, v.plane(2 * j));
    std::copy_n(im.value().plane(j), plane, v.plane(2 * j + 1));
  }
  int const ir = re.id(), ii = im.id();
  return re.tape().record(std::move(v), {ir, ii}, [ir, ii, plane](Tape &t, int self) {
    Tensor const &g = t.grad(self);
    int const k = g.shape[0] / 2;
    for (int j = 0; j < k; ++j) {
      if (t.needs_grad(ir)) {
        double *d = t.grad_accumulator(ir).plane(j);
        for (size_t i = 0; i < plane; ++i) { d[i] += g.plane(2 * j)[i]; }
      }
      if (t.needs_grad(ii)) {
        double *d = t.grad_accumulator(ii).plane(j);
        for (size_t i = 0; i < plane; ++i) { d[i] += g.plane(2 * j + 1)[i]; }
      }
    }
  });
}

std::pair<Var, Var> complex_split(Var const &x)
{
  require_image_stack(x, "complex_split", true);
  std::vector<int> const s = x.shape(); // copy: recording the first half may reallocate the tape
  int const k = s[0] / 2;
  size_t const plane = static_cast<size_t>(s[1]) * s[2];
  auto part = [&](int which) {
    Tensor v({k, s[1], s[2]});
    for (int j = 0; j < k; ++j) { std::copy_n(x.value().plane(2 * j + which), plane, v.plane(j)); }
    int const ix = x.id();
    return x.tape().record(std::move(v), {ix}, [ix, which, plane](Tape &t, int self) {
      Tensor const &g = t.grad(self);
      Tensor &gx = t.grad_accumulator(ix);
      for (int j = 0; j < g.shape[0]; ++j) {
        double *d = gx.plane(2 * j + which);
        for (size_t i = 0; i < plane; ++i) { d[i] += g.plane(j)[i]; }
      }
    });
  };
  Var re = part(0);
  Var im = part(1);
  return {re, im};
}

// ---------------------------------------------------------------------------
// Convolution

Var conv2d_3x3(Var const &x, Var const &w, Var const &b)
{
  same_tape(x, w);
  same_tape(x, b);
  require_image_stack(x, "conv2d_3x3", false);
  auto const &xs = x.shape();
  auto const &ws = w.shape();
  if (ws.size() != 4 || ws[2] != 3 || ws[3] != 3 || ws[1] != xs[0]) {
    throw ConfigError("conv2d_3x3: weight shape " + shape_str(ws) + " incompatible with input " + shape_str(xs));
  }
  if (b.shape() != std::vector<int>{ws[0]}) { throw ConfigError("conv2d_3x3: bias shape mismatch"); }
  int const Cout = ws[0], Cin = xs[0], H = xs[1], W = xs[2];
  int const HW = H * W;

  Buffer col;
  im2col(x.value(), col);
  Tensor v({Cout, H, W});
  Eigen::Map<MatRM const> Wm(w.value().data.data(), Cout, Cin * 9);
  Eigen::Map<MatRM const> Cm(col.data(), Cin * 9, HW);
  Eigen::Map<MatRM> Om(v.data.data(), Cout, HW);
  Om.noalias() = Wm * Cm;
  for (int o = 0; o < Cout; ++o) { Om.row(o).array() += b.value().data[static_cast<size_t>(o)]; }

  int const ix = x.id(), iw = w.id(), ib = b.id();
  return x.tape().record(std::move(v), {ix, iw, ib}, [ix, iw, ib, Cout, Cin, HW](Tape &t, int self) {
    Tensor const &g = t.grad(self);
    Eigen::Map<MatRM const> Gm(g.data.data(), Cout, HW);
    if (t.needs_grad(ib)) {
      Tensor &gb = t.grad_accumulator(ib);
      for (int o = 0; o < Cout; ++o) { gb.data[static_cast<size_t>(o)] += Gm.row(o).sum(); }
    }
    if (t.needs_grad(iw)) {
      Buffer col;
      im2col(t.value(ix), col);
      Eigen::Map<MatRM const> Cm(col.data(), Cin * 9, HW);
      Eigen::Map<MatRM> Gw(t.grad_accumulator(iw).data.data(), Cout, Cin * 9);
      Gw.noalias() += Gm * Cm.transpose();
    }
    if (t.needs_grad(ix)) {
      Eigen::Map<MatRM const> Wm(t.value(iw).data.data(), Cout, Cin * 9);
      Buffer gcol(static_cast<size_t>(Cin) * 9 * HW);
      Eigen::Map<MatRM> Gc(gcol.data(), Cin * 9, HW);
      Gc.noalias() = Wm.transpose() * Gm;
      col2im_add(gcol, t.grad_accumulator(ix));
    }
  });
}

// ---------------------------------------------------------------------------
// Complex-linear operators

Var fft2c(Var const &x)
{
  require_image_stack(x, "fft2c", true);
  int const ix = x.id();
  return x.tape().record(fft_channels(x.value(), true), {ix}, [ix](Tape &t, int self) {
    accumulate(t.grad_accumulator(ix), fft_channels(t.grad(self), false));
  });
}

Var ifft2c(Var const &x)
{
  require_image_stack(x, "ifft2c", true);
  int const ix = x.id();
  return x.tape().record(fft_channels(x.value(), false), {ix}, [ix](Tape &t, int self) {
    accumulate(t.grad_accumulator(ix), fft_channels(t.grad(self), true));
  });
}

Var restrict_rows(Var const &x, std::vector<int> const &lines)
{
  require_image_stack(x, "restrict_rows", true);
  auto const &s = x.shape();
  for (int l : lines) {
    if (l < 0 || l >= s[1]) { throw ConfigError("restrict_rows: line index out of range"); }
  }
  int const L = static_cast<int>(lines.size());
  int const W = s[2];
  Tensor v({s[0], L, W});
  for (int ch = 0; ch < s[0]; ++ch) {
    for (int j = 0; j < L; ++j) {
      std::copy_n(x.value().plane(ch) + static_cast<size_t>(lines[static_cast<size_t>(j)]) * W, W,
                  v.plane(ch) + static_cast<size_t>(j) * W);
    }
  }
  int const ix = x.id();
  return x.tape().record(std::move(v), {ix}, [ix, lines, W](Tape &t, int self) {
    Tensor const &g = t.grad(self);
    Tensor &gx = t.grad_accumulator(ix);
    for (int ch = 0; ch < g.shape[0]; ++ch) {
      for (size_t j = 0; j < lines.size(); ++j) {
        double *d = gx.plane(ch) + static_cast<size_t>(lines[j]) * W;
        double const *src = g.plane(ch) + j * W;
        for (int i = 0; i < W; ++i) { d[i] += src[i]; }
      }
    }
  });
}

EncodingContext::EncodingContext(CoilSensitivities s, std::vector<int> l)
  : sens(std::move(s))
  , lines(std::move(l))
{
  std::sort(lines.begin(), lines.end());
  keep.assign(static_cast<size_t>(n_pe()), 0);
  for (int k : lines) {
    if (k < 0 || k >= n_pe()) { throw ConfigError("EncodingContext: line index out of range"); }
    keep[static_cast<size_t>(k)] = 1;
  }
  int const n = n_pe();
  double const two_pi = 2.0 * std::acos(-1.0);
  pe_rows.resize(static_cast<Eigen::Index>(lines.size()), n);
  for (size_t j = 0; j < lines.size(); ++j) {
    // Centered indices; for odd n the shift is floor(n/2) on both sides.
    long const kc = lines[j] - n / 2;
    for (int r = 0; r < n; ++r) {
      long const rc = r - n / 2;
      double const ang = -two_pi * static_cast<double>((kc * rc) % n) / n;
      pe_rows(static_cast<Eigen::Index>(j), r) = std::polar(1.0 / std::sqrt(static_cast<double>(n)), ang);
    }
  }
}

Tensor encode_tensor(Tensor const &x, EncodingContext const &ctx)
{
  ComplexImage const img = channel_pair(x, 0);
  int const C = ctx.sens.coils();
  int const L = static_cast<int>(ctx.lines.size());
  int const W = ctx.n_fe();
  Tensor out({2 * C, L, W});
  ComplexImage k;
  for (int c = 0; c < C; ++c) {
    fft2c_into(ctx.sens[c] * img, k);
    for (int j = 0; j < L; ++j) {
      double *re = out.plane(2 * c) + static_cast<size_t>(j) * W;
      double *im = out.plane(2 * c + 1) + static_cast<size_t>(j) * W;
      for (int i = 0; i < W; ++i) {
        cplx const v = k(ctx.lines[static_cast<size_t>(j)], i);
        re[i] = v.real();
        im[i] = v.imag();
      }
    }
  }
  return out;
}

Tensor encode_adjoint_tensor(Tensor const &y, EncodingContext const &ctx)
{
  int const C = ctx.sens.coils();
  int const W = ctx.n_fe();
  ComplexImage acc = ComplexImage::Zero(ctx.n_pe(), W);
  ComplexImage k = ComplexImage::Zero(ctx.n_pe(), W);
  ComplexImage img;
  for (int c = 0; c < C; ++c) {
    k.setZero();
    for (size_t j = 0; j < ctx.lines.size(); ++j) {
      double const *re = y.plane(2 * c) + j * W;
      double const *im = y.plane(2 * c + 1) + j * W;
      for (int i = 0; i < W; ++i) { k(ctx.lines[j], i) = cplx(re[i], im[i]); }
    }
    ifft2c_into(k, img);
    acc += ctx.sens[c].conjugate() * img;
  }
  return to_tensor(acc);
}

Tensor gram_tensor(Tensor const &x, double mu, EncodingContext const &ctx)
{
  ComplexImage const img = channel_pair(x, 0);
  ComplexImage acc = mu * img;
  Eigen::MatrixXcd coil, rows;
  for (int c = 0; c < ctx.sens.coils(); ++c) {
    coil = (ctx.sens[c] * img).matrix();
    rows.noalias() = ctx.pe_rows * coil;
    coil.noalias() = ctx.pe_rows.adjoint() * rows;
    acc += ctx.sens[c].conjugate() * coil.array();
  }
  return to_tensor(acc);
}

Var encode(Var const &x, EncodingPtr const &ctx)
{
  auto const &s = x.shape();
  if (s != std::vector<int>{2, ctx->n_pe(), ctx->n_fe()}) { throw ConfigError("encode: expected a [2,H,W] image"); }
  int const ix = x.id();
  return x.tape().record(encode_tensor(x.value(), *ctx), {ix}, [ix, ctx](Tape &t, int self) {
    accumulate(t.grad_accumulator(ix), encode_adjoint_tensor(t.grad(self), *ctx));
  });
}

Var gram(Var const &x, Var const &mu, EncodingPtr const &ctx)
{
  same_tape(x, mu);
  require_scalar(mu, "gram");
  auto const &s = x.shape();
  if (s != std::vector<int>{2, ctx->n_pe(), ctx->n_fe()}) { throw ConfigError("gram: expected a [2,H,W] image"); }
  int const ix = x.id(), im = mu.id();
  return x.tape().record(gram_tensor(x.value(), mu.value().item(), *ctx), {ix, im}, [ix, im, ctx](Tape &t, int self) {
    Tensor const &g = t.grad(self);
    if (t.needs_grad(ix)) { accumulate(t.grad_accumulator(ix), gram_tensor(g, t.value(im).item(), *ctx)); }
    if (t.needs_grad(im)) { t.grad_accumulator(im).data[0] += dot_raw(t.value(ix), g); }
  });
}

} // namespace ovrcine::ad
