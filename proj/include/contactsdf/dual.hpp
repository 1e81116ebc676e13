#pragma once

// Minimal forward-mode scalar for differentiating the prediction pipeline
// w.r.t. the learnable parameters. An empty gradient means "constant"; every
// operation treats it as a zero vector, so doubles and constants mix freely
// inside Eigen expressions.

#include <cmath>

#include <Eigen/Dense>

namespace contactsdf {

struct Dual {
  static constexpr int kMaxDim = 32;
  using Grad = Eigen::Matrix<double, Eigen::Dynamic, 1, 0, kMaxDim, 1>;

  double value = 0.0;
  Grad grad;  // size 0 encodes an all-zero gradient

  Dual() = default;
  Dual(double v) : value(v) {}  // NOLINT: implicit by design
  Dual(double v, Grad g) : value(v), grad(std::move(g)) {}

  static Dual seed(double v, Eigen::Index dim, Eigen::Index index) {
    Dual d(v);
    d.grad = Grad::Zero(dim);
    d.grad[index] = 1.0;
    return d;
  }

  Dual& operator+=(const Dual& o) {
    value += o.value;
    add_grad(o.grad, 1.0);
    return *this;
  }
  Dual& operator-=(const Dual& o) {
    value -= o.value;
    add_grad(o.grad, -1.0);
    return *this;
  }
  Dual& operator*=(const Dual& o) {
    grad *= o.value;
    add_grad(o.grad, value);
    value *= o.value;
    return *this;
  }
  Dual& operator/=(const Dual& o) {
    grad /= o.value;
    add_grad(o.grad, -value / (o.value * o.value));
    value /= o.value;
    return *this;
  }
  Dual operator-() const {
    Dual r(-value);
    if (grad.size()) r.grad = -grad;
    return r;
  }

 private:
  void add_grad(const Grad& g, double scale) {
    if (g.size() == 0) return;
    if (grad.size() == 0) {
      grad = scale * g;
    } else {
      grad += scale * g;
    }
  }
};

inline Dual operator+(Dual a, const Dual& b) { return a += b; }
inline Dual operator-(Dual a, const Dual& b) { return a -= b; }
inline Dual operator*(Dual a, const Dual& b) { return a *= b; }
inline Dual operator/(Dual a, const Dual& b) { return a /= b; }

inline bool operator<(const Dual& a, const Dual& b) { return a.value < b.value; }
inline bool operator>(const Dual& a, const Dual& b) { return a.value > b.value; }
inline bool operator<=(const Dual& a, const Dual& b) { return a.value <= b.value; }
inline bool operator>=(const Dual& a, const Dual& b) { return a.value >= b.value; }
inline bool operator==(const Dual& a, const Dual& b) { return a.value == b.value; }
inline bool operator!=(const Dual& a, const Dual& b) { return a.value != b.value; }

inline Dual exp(const Dual& x) {
  const double e = std::exp(x.value);
  Dual r(e);
  if (x.grad.size()) r.grad = e * x.grad;
  return r;
}

inline Dual log(const Dual& x) {
  Dual r(std::log(x.value));
  if (x.grad.size()) r.grad = x.grad / x.value;
  return r;
}

inline Dual sqrt(const Dual& x) {
  const double s = std::sqrt(x.value);
  Dual r(s);
  if (x.grad.size()) r.grad = x.grad / (2.0 * s);
  return r;
}

inline Dual sin(const Dual& x) {
  Dual r(std::sin(x.value));
  if (x.grad.size()) r.grad = std::cos(x.value) * x.grad;
  return r;
}

inline Dual cos(const Dual& x) {
  Dual r(std::cos(x.value));
  if (x.grad.size()) r.grad = -std::sin(x.value) * x.grad;
  return r;
}

inline Dual abs(const Dual& x) { return x.value < 0 ? -x : x; }
inline Dual abs2(const Dual& x) { return x * x; }

inline double scalar_value(const Dual& x) { return x.value; }

}  // namespace contactsdf

namespace Eigen {

template <>
struct NumTraits<contactsdf::Dual> : NumTraits<double> {
  using Real = contactsdf::Dual;
  using NonInteger = contactsdf::Dual;
  using Nested = contactsdf::Dual;
  using Literal = double;
  enum {
    IsComplex = 0,
    IsInteger = 0,
    IsSigned = 1,
    RequireInitialization = 1,
    ReadCost = 1,
    AddCost = 8,
    MulCost = 16,
  };
};

template <typename BinOp>
struct ScalarBinaryOpTraits<contactsdf::Dual, double, BinOp> {
  using ReturnType = contactsdf::Dual;
};
template <typename BinOp>
struct ScalarBinaryOpTraits<double, contactsdf::Dual, BinOp> {
  using ReturnType = contactsdf::Dual;
};

}  // namespace Eigen
