#include "cellflow/nn/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "cellflow/error.hpp"

namespace cellflow::nn {

const Tensor& Var::value() const {
  if (!tape_) throw StateError("value() on an unbound Var");
  return tape_->value(*this);
}

Var Tape::constant(Tensor value) {
  nodes_.push_back(Node{std::move(value), {}, false, false, {}});
  return Var(this, nodes_.size() - 1);
}

Var Tape::variable(Tensor value) {
  nodes_.push_back(Node{std::move(value), {}, true, false, {}});
  return Var(this, nodes_.size() - 1);
}

Tensor Tape::grad(const Var& v) const {
  const Node& n = nodes_[v.id()];
  if (n.has_grad) return n.grad;
  return Tensor(n.value.rows(), n.value.cols());
}

Var Tape::record(Tensor value, std::initializer_list<Var> inputs, Backward backward) {
  return record(std::move(value), std::span<const Var>(inputs.begin(), inputs.size()),
                std::move(backward));
}

Var Tape::record(Tensor value, std::span<const Var> inputs, Backward backward) {
  bool needs = false;
  for (const Var& in : inputs) {
    if (in.tape() != this) throw InvalidInput("operands recorded on different tapes");
    needs = needs || nodes_[in.id()].requires_grad;
  }
  if (!value.all_finite()) throw InvalidInput("non-finite value produced in forward pass");
  nodes_.push_back(Node{std::move(value), {}, needs, false, needs ? std::move(backward) : Backward{}});
  return Var(this, nodes_.size() - 1);
}

Tensor& Tape::grad_buffer(const Var& target) {
  Node& n = nodes_[target.id()];
  if (!n.has_grad) {
    n.grad = Tensor(n.value.rows(), n.value.cols());
    n.has_grad = true;
  }
  return n.grad;
}

void Tape::accumulate(const Var& target, const Tensor& g) {
  Node& n = nodes_[target.id()];
  if (!n.requires_grad) return;
  if (!g.same_shape(n.value)) throw StateError("gradient shape mismatch in backward pass");
  if (!n.has_grad) {
    n.grad = g;
    n.has_grad = true;
    return;
  }
  auto dst = n.grad.values();
  auto src = g.values();
  for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
}

void Tape::backward(const Var& loss) {
  if (loss.tape() != this) throw InvalidInput("loss belongs to another tape");
  if (nodes_[loss.id()].value.size() != 1) throw InvalidInput("backward requires a scalar loss");
  for (Node& n : nodes_) {
    n.has_grad = false;
    n.grad = Tensor();
  }
  if (!nodes_[loss.id()].requires_grad) return;
  grad_buffer(loss)[0] = 1.0;
  for (std::size_t i = loss.id() + 1; i-- > 0;) {
    Node& n = nodes_[i];
    if (!n.has_grad || !n.backward) continue;
    n.backward(*this, n.grad);
  }
}

namespace {

std::size_t bdim(std::size_t x, std::size_t y, const char* op) {
  if (x == y) return x;
  if (x == 1) return y;
  if (y == 1) return x;
  throw InvalidInput(std::string(op) + ": incompatible shapes for broadcasting (" +
                     std::to_string(x) + " vs " + std::to_string(y) + ")");
}

inline double bget(const Tensor& t, std::size_t r, std::size_t c) {
  return t(t.rows() == 1 ? 0 : r, t.cols() == 1 ? 0 : c);
}

template <class F>
Tensor zip(const Tensor& a, const Tensor& b, const char* op, F f) {
  if (a.same_shape(b)) {
    Tensor out(a.rows(), a.cols());
    for (std::size_t i = 0; i < a.size(); ++i) out[i] = f(a[i], b[i]);
    return out;
  }
  const std::size_t rows = bdim(a.rows(), b.rows(), op);
  const std::size_t cols = bdim(a.cols(), b.cols(), op);
  Tensor out(rows, cols);
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < cols; ++c) out(r, c) = f(bget(a, r, c), bget(b, r, c));
  return out;
}

// Sum a broadcast gradient back down to the operand's shape.
Tensor reduce_to(const Tensor& g, std::size_t rows, std::size_t cols) {
  if (g.rows() == rows && g.cols() == cols) return g;
  Tensor out(rows, cols);
  for (std::size_t r = 0; r < g.rows(); ++r)
    for (std::size_t c = 0; c < g.cols(); ++c)
      out(rows == 1 ? 0 : r, cols == 1 ? 0 : c) += g(r, c);
  return out;
}

template <class F>
Tensor map(const Tensor& a, F f) {
  Tensor out(a.rows(), a.cols());
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = f(a[i]);
  return out;
}

// Unary elementwise op whose derivative is a function of (input, output).
template <class F, class D>
Var unary(const Var& a, F f, D dfdx) {
  Tape& tape = *a.tape();
  Tensor out = map(a.value(), f);
  return tape.record(std::move(out), {a}, [a, dfdx](Tape& t, const Tensor& g) {
    const Tensor& x = t.value(a);
    Tensor ga(x.rows(), x.cols());
    for (std::size_t i = 0; i < x.size(); ++i) ga[i] = g[i] * dfdx(x[i]);
    t.accumulate(a, ga);
  });
}

double sigmoid_scalar(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

}  // namespace

Var add(const Var& a, const Var& b) {
  Tape& tape = *a.tape();
  Tensor out = zip(a.value(), b.value(), "add", [](double x, double y) { return x + y; });
  return tape.record(std::move(out), {a, b}, [a, b](Tape& t, const Tensor& g) {
    t.accumulate(a, reduce_to(g, a.rows(), a.cols()));
    t.accumulate(b, reduce_to(g, b.rows(), b.cols()));
  });
}

Var sub(const Var& a, const Var& b) {
  Tape& tape = *a.tape();
  Tensor out = zip(a.value(), b.value(), "sub", [](double x, double y) { return x - y; });
  return tape.record(std::move(out), {a, b}, [a, b](Tape& t, const Tensor& g) {
    t.accumulate(a, reduce_to(g, a.rows(), a.cols()));
    Tensor gb = reduce_to(g, b.rows(), b.cols());
    for (auto& v : gb.values()) v = -v;
    t.accumulate(b, gb);
  });
}

Var mul(const Var& a, const Var& b) {
  Tape& tape = *a.tape();
  Tensor out = zip(a.value(), b.value(), "mul", [](double x, double y) { return x * y; });
  return tape.record(std::move(out), {a, b}, [a, b](Tape& t, const Tensor& g) {
    const Tensor& av = t.value(a);
    const Tensor& bv = t.value(b);
    if (t.requires_grad(a)) {
      Tensor ga = zip(g, bv, "mul", [](double x, double y) { return x * y; });
      t.accumulate(a, reduce_to(ga, av.rows(), av.cols()));
    }
    if (t.requires_grad(b)) {
      Tensor gb = zip(g, av, "mul", [](double x, double y) { return x * y; });
      t.accumulate(b, reduce_to(gb, bv.rows(), bv.cols()));
    }
  });
}

Var div(const Var& a, const Var& b) {
  Tape& tape = *a.tape();
  Tensor out = zip(a.value(), b.value(), "div", [](double x, double y) { return x / y; });
  return tape.record(std::move(out), {a, b}, [a, b](Tape& t, const Tensor& g) {
    const Tensor& av = t.value(a);
    const Tensor& bv = t.value(b);
    if (t.requires_grad(a)) {
      Tensor ga = zip(g, bv, "div", [](double x, double y) { return x / y; });
      t.accumulate(a, reduce_to(ga, av.rows(), av.cols()));
    }
    if (t.requires_grad(b)) {
      // d(a/b)/db = -a / b^2
      Tensor ab = zip(av, bv, "div", [](double x, double y) { return -x / (y * y); });
      Tensor gb = zip(g, ab, "div", [](double x, double y) { return x * y; });
      t.accumulate(b, reduce_to(gb, bv.rows(), bv.cols()));
    }
  });
}

Var scale(const Var& a, double c) {
  return unary(a, [c](double x) { return c * x; }, [c](double) { return c; });
}

Var add_scalar(const Var& a, double c) {
  return unary(a, [c](double x) { return x + c; }, [](double) { return 1.0; });
}

Var negate(const Var& a) { return scale(a, -1.0); }

Var matmul(const Var& a, const Var& b) {
  Tape& tape = *a.tape();
  Tensor out = nn::matmul(a.value(), b.value());
  return tape.record(std::move(out), {a, b}, [a, b](Tape& t, const Tensor& g) {
    const Tensor& av = t.value(a);
    const Tensor& bv = t.value(b);
    if (t.requires_grad(a)) {
      Tensor bt(bv.cols(), bv.rows());
      for (std::size_t r = 0; r < bv.rows(); ++r)
        for (std::size_t c = 0; c < bv.cols(); ++c) bt(c, r) = bv(r, c);
      t.accumulate(a, nn::matmul(g, bt));
    }
    if (t.requires_grad(b)) {
      Tensor at(av.cols(), av.rows());
      for (std::size_t r = 0; r < av.rows(); ++r)
        for (std::size_t c = 0; c < av.cols(); ++c) at(c, r) = av(r, c);
      t.accumulate(b, nn::matmul(at, g));
    }
  });
}

Var transpose(const Var& a) {
  Tape& tape = *a.tape();
  const Tensor& x = a.value();
  Tensor out(x.cols(), x.rows());
  for (std::size_t r = 0; r < x.rows(); ++r)
    for (std::size_t c = 0; c < x.cols(); ++c) out(c, r) = x(r, c);
  return tape.record(std::move(out), {a}, [a](Tape& t, const Tensor& g) {
    Tensor ga(g.cols(), g.rows());
    for (std::size_t r = 0; r < g.rows(); ++r)
      for (std::size_t c = 0; c < g.cols(); ++c) ga(c, r) = g(r, c);
    t.accumulate(a, ga);
  });
}

Var silu(const Var& a) {
  return unary(
      a, [](double x) { return x * sigmoid_scalar(x); },
      [](double x) {
        const double s = sigmoid_scalar(x);
        return s * (1.0 + x * (1.0 - s));
      });
}

Var sigmoid(const Var& a) {
  return unary(a, sigmoid_scalar, [](double x) {
    const double s = sigmoid_scalar(x);
    return s * (1.0 - s);
  });
}

Var relu(const Var& a) {
  return unary(
      a, [](double x) { return x > 0.0 ? x : 0.0; }, [](double x) { return x > 0.0 ? 1.0 : 0.0; });
}

Var clamp(const Var& a, double lo, double hi) {
  if (!(lo <= hi)) throw InvalidInput("clamp: lo must not exceed hi");
  return unary(
      a, [lo, hi](double x) { return std::clamp(x, lo, hi); },
      [lo, hi](double x) { return (x > lo && x < hi) ? 1.0 : 0.0; });
}

Var square(const Var& a) {
  return unary(a, [](double x) { return x * x; }, [](double x) { return 2.0 * x; });
}

Var sqrt(const Var& a) {
  return unary(
      a, [](double x) { return std::sqrt(x); }, [](double x) { return 0.5 / std::sqrt(x); });
}

Var exp(const Var& a) {
  return unary(a, [](double x) { return std::exp(x); }, [](double x) { return std::exp(x); });
}

Var log(const Var& a) {
  return unary(a, [](double x) { return std::log(x); }, [](double x) { return 1.0 / x; });
}

Var sum(const Var& a) {
  Tape& tape = *a.tape();
  double total = 0.0;
  for (double v : a.value().values()) total += v;
  return tape.record(Tensor::scalar(total), {a}, [a](Tape& t, const Tensor& g) {
    const Tensor& x = t.value(a);
    t.accumulate(a, Tensor(x.rows(), x.cols(), g[0]));
  });
}

Var mean(const Var& a) {
  const double n = static_cast<double>(a.value().size());
  return scale(sum(a), 1.0 / n);
}

Var sum_rows(const Var& a) {
  Tape& tape = *a.tape();
  const Tensor& x = a.value();
  Tensor out(x.rows(), 1);
  for (std::size_t r = 0; r < x.rows(); ++r) {
    double s = 0.0;
    for (std::size_t c = 0; c < x.cols(); ++c) s += x(r, c);
    out(r, 0) = s;
  }
  return tape.record(std::move(out), {a}, [a](Tape& t, const Tensor& g) {
    const Tensor& x = t.value(a);
    Tensor ga(x.rows(), x.cols());
    for (std::size_t r = 0; r < x.rows(); ++r)
      for (std::size_t c = 0; c < x.cols(); ++c) ga(r, c) = g(r, 0);
    t.accumulate(a, ga);
  });
}

Var mean_rows(const Var& a) { return scale(sum_rows(a), 1.0 / static_cast<double>(a.cols())); }

Var sum_cols(const Var& a) {
  Tape& tape = *a.tape();
  const Tensor& x = a.value();
  Tensor out(1, x.cols());
  for (std::size_t r = 0; r < x.rows(); ++r)
    for (std::size_t c = 0; c < x.cols(); ++c) out(0, c) += x(r, c);
  return tape.record(std::move(out), {a}, [a](Tape& t, const Tensor& g) {
    const Tensor& x = t.value(a);
    Tensor ga(x.rows(), x.cols());
    for (std::size_t r = 0; r < x.rows(); ++r)
      for (std::size_t c = 0; c < x.cols(); ++c) ga(r, c) = g(0, c);
    t.accumulate(a, ga);
  });
}

Var mean_cols(const Var& a) { return scale(sum_cols(a), 1.0 / static_cast<double>(a.rows())); }

Var softmax_rows(const Var& a) {
  Tape& tape = *a.tape();
  Tensor out = softmax(a.value(), 1);
  Tensor saved = out;
  return tape.record(std::move(out), {a}, [a, saved](Tape& t, const Tensor& g) {
    Tensor ga(saved.rows(), saved.cols());
    for (std::size_t r = 0; r < saved.rows(); ++r) {
      double dot = 0.0;
      for (std::size_t c = 0; c < saved.cols(); ++c) dot += g(r, c) * saved(r, c);
      for (std::size_t c = 0; c < saved.cols(); ++c) ga(r, c) = saved(r, c) * (g(r, c) - dot);
    }
    t.accumulate(a, ga);
  });
}

Var log_softmax_rows(const Var& a) {
  Tape& tape = *a.tape();
  const Tensor& x = a.value();
  Tensor out(x.rows(), x.cols());
  for (std::size_t r = 0; r < x.rows(); ++r) {
    double mx = -INFINITY;
    for (std::size_t c = 0; c < x.cols(); ++c) mx = std::max(mx, x(r, c));
    double s = 0.0;
    for (std::size_t c = 0; c < x.cols(); ++c) s += std::exp(x(r, c) - mx);
    const double lse = mx + std::log(s);
    for (std::size_t c = 0; c < x.cols(); ++c) out(r, c) = x(r, c) - lse;
  }
  Tensor probs = softmax(x, 1);
  return tape.record(std::move(out), {a}, [a, probs](Tape& t, const Tensor& g) {
    Tensor ga(probs.rows(), probs.cols());
    for (std::size_t r = 0; r < probs.rows(); ++r) {
      double gs = 0.0;
      for (std::size_t c = 0; c < probs.cols(); ++c) gs += g(r, c);
      for (std::size_t c = 0; c < probs.cols(); ++c) ga(r, c) = g(r, c) - probs(r, c) * gs;
    }
    t.accumulate(a, ga);
  });
}

Var concat_cols(std::span<const Var> parts) {
  if (parts.empty()) throw InvalidInput("concat_cols: no operands");
  Tape& tape = *parts[0].tape();
  const std::size_t rows = parts[0].rows();
  std::size_t cols = 0;
  for (const Var& p : parts) {
    if (p.rows() != rows) throw InvalidInput("concat_cols: row counts differ");
    cols += p.cols();
  }
  Tensor out(rows, cols);
  std::size_t off = 0;
  for (const Var& p : parts) {
    const Tensor& v = p.value();
    for (std::size_t r = 0; r < rows; ++r)
      std::copy_n(&v.values()[r * v.cols()], v.cols(), &out.values()[r * cols + off]);
    off += v.cols();
  }
  std::vector<Var> ins(parts.begin(), parts.end());
  return tape.record(std::move(out), parts, [ins, rows, cols](Tape& t, const Tensor& g) {
    std::size_t off = 0;
    for (const Var& p : ins) {
      const std::size_t pc = t.value(p).cols();
      if (t.requires_grad(p)) {
        Tensor gp(rows, pc);
        for (std::size_t r = 0; r < rows; ++r)
          std::copy_n(&g.values()[r * cols + off], pc, &gp.values()[r * pc]);
        t.accumulate(p, gp);
      }
      off += pc;
    }
  });
}

Var concat_rows(std::span<const Var> parts) {
  if (parts.empty()) throw InvalidInput("concat_rows: no operands");
  Tape& tape = *parts[0].tape();
  const std::size_t cols = parts[0].cols();
  std::size_t rows = 0;
  for (const Var& p : parts) {
    if (p.cols() != cols) throw InvalidInput("concat_rows: column counts differ");
    rows += p.rows();
  }
  std::vector<double> data;
  data.reserve(rows * cols);
  for (const Var& p : parts) {
    auto v = p.value().values();
    data.insert(data.end(), v.begin(), v.end());
  }
  std::vector<Var> ins(parts.begin(), parts.end());
  return tape.record(Tensor(rows, cols, std::move(data)), parts, [ins, cols](Tape& t, const Tensor& g) {
    std::size_t off = 0;
    for (const Var& p : ins) {
      const std::size_t n = t.value(p).size();
      if (t.requires_grad(p)) {
        std::vector<double> gp(g.values().begin() + off, g.values().begin() + off + n);
        t.accumulate(p, Tensor(n / cols, cols, std::move(gp)));
      }
      off += n;
    }
  });
}

Var slice_cols(const Var& a, std::size_t start, std::size_t count) {
  const Tensor& x = a.value();
  if (start + count > x.cols()) throw InvalidInput("slice_cols out of range");
  Tensor out(x.rows(), count);
  for (std::size_t r = 0; r < x.rows(); ++r)
    for (std::size_t c = 0; c < count; ++c) out(r, c) = x(r, start + c);
  return a.tape()->record(std::move(out), {a}, [a, start, count](Tape& t, const Tensor& g) {
    Tensor& buf = t.grad_buffer(a);
    for (std::size_t r = 0; r < g.rows(); ++r)
      for (std::size_t c = 0; c < count; ++c) buf(r, start + c) += g(r, c);
  });
}

Var slice_rows(const Var& a, std::size_t start, std::size_t count) {
  const Tensor& x = a.value();
  if (start + count > x.rows()) throw InvalidInput("slice_rows out of range");
  std::vector<double> data(x.values().begin() + start * x.cols(),
                           x.values().begin() + (start + count) * x.cols());
  return a.tape()->record(Tensor(count, x.cols(), std::move(data)), {a},
                          [a, start](Tape& t, const Tensor& g) {
                            Tensor& buf = t.grad_buffer(a);
                            auto dst = buf.values().subspan(start * g.cols(), g.size());
                            for (std::size_t i = 0; i < g.size(); ++i) dst[i] += g[i];
                          });
}

Var tile_cols(const Var& a, std::size_t reps) {
  const Tensor& x = a.value();
  const std::size_t n = x.cols();
  Tensor out(x.rows(), n * reps);
  for (std::size_t r = 0; r < x.rows(); ++r)
    for (std::size_t k = 0; k < reps; ++k)
      for (std::size_t c = 0; c < n; ++c) out(r, k * n + c) = x(r, c);
  return a.tape()->record(std::move(out), {a}, [a, reps, n](Tape& t, const Tensor& g) {
    Tensor ga(g.rows(), n);
    for (std::size_t r = 0; r < g.rows(); ++r)
      for (std::size_t k = 0; k < reps; ++k)
        for (std::size_t c = 0; c < n; ++c) ga(r, c) += g(r, k * n + c);
    t.accumulate(a, ga);
  });
}

Var l2_normalize_rows(const Var& a, double eps) {
  Var norm = sqrt(add_scalar(sum_rows(square(a)), eps));
  return div(a, norm);
}

}  // namespace cellflow::nn
