#pragma once

#include "ovrcine/image.hpp"

#include <Eigen/Core>

#include <functional>
#include <memory>
#include <utility>
#include <vector>

// Minimal reverse-mode automatic differentiation over real n-D arrays.
//
// Complex images enter the tape as real tensors of shape [2k, H, W] where
// channels (2j, 2j + 1) hold the real and imaginary parts of complex channel j.
// All complex-linear operators (FFT, coil expansion, row restriction) act on
// that layout; their real-representation adjoint is the complex adjoint, so the
// backward pass of each is its Hermitian transpose.
namespace ovrcine::ad {

// Aligned storage keeps Eigen's vectorized reductions on a fixed summation
// order; with plain heap alignment the peeled head varies and results drift in
// the last bits from run to run.
using Buffer = std::vector<double, Eigen::aligned_allocator<double>>;

struct Tensor
{
  std::vector<int> shape;
  Buffer data;

  Tensor() = default;
  explicit Tensor(std::vector<int> s, double fill = 0.0);

  static Tensor scalar(double v) { return Tensor({1}, v); }
  std::size_t size() const { return data.size(); }
  int dim(std::size_t i) const { return shape[i]; }
  double item() const { return data.at(0); }
  double *plane(int ch) { return data.data() + static_cast<std::size_t>(ch) * shape[1] * shape[2]; }
  double const *plane(int ch) const { return data.data() + static_cast<std::size_t>(ch) * shape[1] * shape[2]; }
};

std::size_t element_count(std::vector<int> const &shape);

// Complex image <-> [2, H, W] and multi-image stacks <-> [2N, H, W].
Tensor to_tensor(ComplexImage const &x);
Tensor to_tensor(std::vector<ComplexImage> const &xs);
ComplexImage to_complex(Tensor const &t, int complex_channel = 0);

class Tape;

class Var
{
public:
  Var() = default;
  Tensor const &value() const;
  Tensor const &grad() const;
  std::vector<int> const &shape() const { return value().shape; }
  bool requires_grad() const;
  Tape &tape() const { return *tape_; }
  int id() const { return id_; }
  explicit operator bool() const { return tape_ != nullptr; }

private:
  friend class Tape;
  Var(Tape *t, int id)
    : tape_(t)
    , id_(id)
  {
  }
  Tape *tape_ = nullptr;
  int id_ = -1;
};

class Tape
{
public:
  using Backward = std::function<void(Tape &, int self)>;

  Var variable(Tensor value);
  Var constant(Tensor value);

  // Reverse pass from a scalar; d(loss)/d(loss) = seed.
  void backward(Var const &loss, double seed = 1.0);

  // Interface for operator implementations.
  Var record(Tensor value, std::vector<int> parents, Backward backward);
  Tensor const &value(int id) const { return nodes_[static_cast<std::size_t>(id)].value; }
  Tensor const &grad(int id) const;
  Tensor &grad_accumulator(int id);
  bool needs_grad(int id) const { return nodes_[static_cast<std::size_t>(id)].requires_grad; }
  std::size_t size() const { return nodes_.size(); }

private:
  struct Node
  {
    Tensor value;
    Tensor grad;
    std::vector<int> parents;
    Backward backward;
    bool requires_grad = false;
  };
  std::vector<Node> nodes_;
};

// Elementwise and shape operators.
Var add(Var const &a, Var const &b);
Var sub(Var const &a, Var const &b);
Var scale(Var const &a, double s);
Var mul(Var const &a, Var const &s);               // tensor times scalar variable
Var axpy(Var const &x, Var const &s, Var const &y); // x + s * y, s scalar
Var dot(Var const &a, Var const &b);               // scalar sum a * b
Var div(Var const &a, Var const &b);               // scalars
Var exp(Var const &a);                             // elementwise
Var relu(Var const &x);                            // subgradient 0 at 0
Var sum(Var const &x);
Var l2norm(Var const &x);
Var l1norm(Var const &x); // subgradient 0 at 0
Var mask_mul(Var const &x, RealImage const &mask); // per-pixel weights broadcast over channels
Var slice_channels(Var const &x, int begin, int count);
Var concat_channels(std::vector<Var> const &xs);
Var complex_join(Var const &re, Var const &im);    // [k,H,W] x 2 -> [2k,H,W]
std::pair<Var, Var> complex_split(Var const &x);   // [2k,H,W] -> [k,H,W] x 2

// 3x3 convolution with zero "same" padding: x [Cin,H,W], w [Cout,Cin,3,3], b [Cout].
Var conv2d_3x3(Var const &x, Var const &w, Var const &b);

// Complex-linear operators on [2k, H, W].
Var fft2c(Var const &x);
Var ifft2c(Var const &x);
Var restrict_rows(Var const &x, std::vector<int> const &lines); // -> [2k, L, W]

// Multi-coil encoding for one line set. The context must outlive every tape that uses it.
struct EncodingContext
{
  CoilSensitivities sens;
  std::vector<int> lines;
  std::vector<char> keep; // per PE row
  // Rows `lines` of the centered orthonormal PE DFT. The FE transform cancels in
  // E^H E, so the normal operator needs only this L x n_pe block per coil.
  Eigen::MatrixXcd pe_rows;

  EncodingContext(CoilSensitivities s, std::vector<int> l);
  int n_pe() const { return sens.dims().n_pe; }
  int n_fe() const { return sens.dims().n_fe; }
};
using EncodingPtr = std::shared_ptr<EncodingContext const>;

// E x: [2, H, W] -> [2C, L, W].
Var encode(Var const &x, EncodingPtr const &ctx);
// (E^H E + mu) x with mu a scalar variable.
Var gram(Var const &x, Var const &mu, EncodingPtr const &ctx);

// Plain (non-tape) helpers shared with inference code.
Tensor encode_tensor(Tensor const &x, EncodingContext const &ctx);
Tensor encode_adjoint_tensor(Tensor const &y, EncodingContext const &ctx);
Tensor gram_tensor(Tensor const &x, double mu, EncodingContext const &ctx);

} // namespace ovrcine::ad
