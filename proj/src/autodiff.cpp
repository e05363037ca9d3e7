#include "esnet/autodiff.hpp"

#include <cmath>
#include <limits>
#include <stdexcept>

namespace esnet::ad {

namespace {

void require(bool ok, const char* what) {
  if (!ok) throw std::invalid_argument(what);
}

void accumulate(Tape& t, Var v, const Matrix& g) {
  if (t.needs_grad(v)) t.grad(v) += g;
}

double sigmoid(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

}  // namespace

Var Tape::constant(Matrix value) { return record(std::move(value), false, nullptr); }

Var Tape::parameter(const Matrix& value, int index) {
  const Var v = record(value, true, nullptr);
  parameters_.emplace_back(v.id, index);
  return v;
}

Matrix& Tape::grad(Var v) {
  auto& n = nodes_[v.id];
  if (!n.has_grad) {
    n.grad = Matrix::Zero(n.value.rows(), n.value.cols());
    n.has_grad = true;
  }
  return n.grad;
}

Var Tape::record(Matrix value, bool needs_grad, Backward backward) {
  nodes_.push_back(Node{std::move(value), Matrix(), needs_grad, false, std::move(backward)});
  return Var{static_cast<int>(nodes_.size()) - 1};
}

void Tape::backward(Var out, double seed) {
  require(nodes_[out.id].value.size() == 1, "backward needs a scalar output");
  grad(out)(0, 0) += seed;
  for (int id = out.id; id >= 0; --id) {
    auto& n = nodes_[id];
    if (!n.has_grad || !n.backward) continue;
    const Matrix upstream = n.grad;
    n.backward(*this, upstream);
  }
}

std::vector<Matrix> Tape::gradients(std::size_t num_parameters) const {
  std::vector<Matrix> out(num_parameters);
  for (const auto& [node, index] : parameters_) {
    const auto& n = nodes_[node];
    if (!n.has_grad) continue;
    auto& g = out.at(static_cast<std::size_t>(index));
    if (g.size() == 0) {
      g = n.grad;
    } else {
      g += n.grad;
    }
  }
  return out;
}

Var matmul(Tape& t, Var a, Var b) {
  require(t.value(a).cols() == t.value(b).rows(), "matmul shape mismatch");
  Matrix out = t.value(a) * t.value(b);
  return t.record(std::move(out), t.needs_grad(a) || t.needs_grad(b),
                  [a, b](Tape& t, const Matrix& g) {
                    if (t.needs_grad(a)) t.grad(a).noalias() += g * t.value(b).transpose();
                    if (t.needs_grad(b)) t.grad(b).noalias() += t.value(a).transpose() * g;
                  });
}

Var add(Tape& t, Var a, Var b) {
  require(t.value(a).rows() == t.value(b).rows() && t.value(a).cols() == t.value(b).cols(),
          "add shape mismatch");
  Matrix out = t.value(a) + t.value(b);
  return t.record(std::move(out), t.needs_grad(a) || t.needs_grad(b),
                  [a, b](Tape& t, const Matrix& g) {
                    accumulate(t, a, g);
                    accumulate(t, b, g);
                  });
}

Var add_row(Tape& t, Var a, Var row) {
  require(t.value(row).rows() == 1 && t.value(row).cols() == t.value(a).cols(),
          "add_row shape mismatch");
  Matrix out = t.value(a).rowwise() + t.value(row).row(0);
  return t.record(std::move(out), t.needs_grad(a) || t.needs_grad(row),
                  [a, row](Tape& t, const Matrix& g) {
                    accumulate(t, a, g);
                    if (t.needs_grad(row)) t.grad(row) += g.colwise().sum();
                  });
}

Var mul_row(Tape& t, Var a, Var row) {
  require(t.value(row).rows() == 1 && t.value(row).cols() == t.value(a).cols(),
          "mul_row shape mismatch");
  Matrix out = t.value(a).array().rowwise() * t.value(row).row(0).array();
  return t.record(std::move(out), t.needs_grad(a) || t.needs_grad(row),
                  [a, row](Tape& t, const Matrix& g) {
                    if (t.needs_grad(a)) {
                      t.grad(a).array() += g.array().rowwise() * t.value(row).row(0).array();
                    }
                    if (t.needs_grad(row)) {
                      t.grad(row) += (g.array() * t.value(a).array()).matrix().colwise().sum();
                    }
                  });
}

Var scale(Tape& t, Var a, double s) {
  Matrix out = t.value(a) * s;
  return t.record(std::move(out), t.needs_grad(a),
                  [a, s](Tape& t, const Matrix& g) { accumulate(t, a, g * s); });
}

Var hadamard(Tape& t, Var a, Var b) {
  require(t.value(a).rows() == t.value(b).rows() && t.value(a).cols() == t.value(b).cols(),
          "hadamard shape mismatch");
  Matrix out = t.value(a).cwiseProduct(t.value(b));
  return t.record(std::move(out), t.needs_grad(a) || t.needs_grad(b),
                  [a, b](Tape& t, const Matrix& g) {
                    if (t.needs_grad(a)) t.grad(a) += g.cwiseProduct(t.value(b));
                    if (t.needs_grad(b)) t.grad(b) += g.cwiseProduct(t.value(a));
                  });
}

Var silu(Tape& t, Var a) {
  const Matrix& x = t.value(a);
  Matrix out = x.unaryExpr([](double v) { return v * sigmoid(v); });
  return t.record(std::move(out), t.needs_grad(a), [a](Tape& t, const Matrix& g) {
    if (!t.needs_grad(a)) return;
    const Matrix d = t.value(a).unaryExpr([](double v) {
      const double s = sigmoid(v);
      return s * (1.0 + v * (1.0 - s));
    });
    t.grad(a) += g.cwiseProduct(d);
  });
}

Var layer_norm(Tape& t, Var a, double eps) {
  const Matrix& x = t.value(a);
  const auto cols = static_cast<double>(x.cols());
  Matrix out(x.rows(), x.cols());
  Eigen::VectorXd inv_std(x.rows());
  for (Eigen::Index r = 0; r < x.rows(); ++r) {
    const double mean = x.row(r).mean();
    const double var = (x.row(r).array() - mean).square().sum() / cols;
    inv_std[r] = 1.0 / std::sqrt(var + eps);
    out.row(r) = (x.row(r).array() - mean) * inv_std[r];
  }
  if (!t.needs_grad(a)) return t.record(std::move(out), false, nullptr);
  const Matrix xhat = out;
  return t.record(std::move(out), true,
                  [a, xhat, inv_std, cols](Tape& t, const Matrix& g) {
                    Matrix& ga = t.grad(a);
                    for (Eigen::Index r = 0; r < g.rows(); ++r) {
                      const double mg = g.row(r).mean();
                      const double mgx = g.row(r).dot(xhat.row(r)) / cols;
                      ga.row(r).array() +=
                          inv_std[r] * (g.row(r).array() - mg - xhat.row(r).array() * mgx);
                    }
                  });
}

Var gather_rows(Tape& t, Var a, const std::vector<int>& index) {
  const Matrix& x = t.value(a);
  Matrix out(static_cast<Eigen::Index>(index.size()), x.cols());
  for (std::size_t r = 0; r < index.size(); ++r) {
    out.row(static_cast<Eigen::Index>(r)) = x.row(index[r]);
  }
  return t.record(std::move(out), t.needs_grad(a), [a, index](Tape& t, const Matrix& g) {
    if (!t.needs_grad(a)) return;
    Matrix& ga = t.grad(a);
    for (std::size_t r = 0; r < index.size(); ++r) {
      ga.row(index[r]) += g.row(static_cast<Eigen::Index>(r));
    }
  });
}

Var scatter_add_rows(Tape& t, Var a, const std::vector<int>& index, int rows) {
  const Matrix& x = t.value(a);
  require(static_cast<Eigen::Index>(index.size()) == x.rows(), "scatter index size mismatch");
  Matrix out = Matrix::Zero(rows, x.cols());
  for (std::size_t r = 0; r < index.size(); ++r) {
    out.row(index[r]) += x.row(static_cast<Eigen::Index>(r));
  }
  return t.record(std::move(out), t.needs_grad(a), [a, index](Tape& t, const Matrix& g) {
    if (!t.needs_grad(a)) return;
    Matrix& ga = t.grad(a);
    for (std::size_t r = 0; r < index.size(); ++r) {
      ga.row(static_cast<Eigen::Index>(r)) += g.row(index[r]);
    }
  });
}

Var concat_cols(Tape& t, const std::vector<Var>& parts) {
  require(!parts.empty(), "concat of nothing");
  const auto rows = t.value(parts[0]).rows();
  Eigen::Index cols = 0;
  bool needs = false;
  for (const auto p : parts) {
    require(t.value(p).rows() == rows, "concat_cols row mismatch");
    cols += t.value(p).cols();
    needs = needs || t.needs_grad(p);
  }
  Matrix out(rows, cols);
  Eigen::Index at = 0;
  for (const auto p : parts) {
    out.middleCols(at, t.value(p).cols()) = t.value(p);
    at += t.value(p).cols();
  }
  return t.record(std::move(out), needs, [parts](Tape& t, const Matrix& g) {
    Eigen::Index at = 0;
    for (const auto p : parts) {
      const auto c = t.value(p).cols();
      if (t.needs_grad(p)) t.grad(p) += g.middleCols(at, c);
      at += c;
    }
  });
}

Var concat_rows(Tape& t, const std::vector<Var>& parts) {
  require(!parts.empty(), "concat of nothing");
  const auto cols = t.value(parts[0]).cols();
  Eigen::Index rows = 0;
  bool needs = false;
  for (const auto p : parts) {
    require(t.value(p).cols() == cols, "concat_rows column mismatch");
    rows += t.value(p).rows();
    needs = needs || t.needs_grad(p);
  }
  Matrix out(rows, cols);
  Eigen::Index at = 0;
  for (const auto p : parts) {
    out.middleRows(at, t.value(p).rows()) = t.value(p);
    at += t.value(p).rows();
  }
  return t.record(std::move(out), needs, [parts](Tape& t, const Matrix& g) {
    Eigen::Index at = 0;
    for (const auto p : parts) {
      const auto r = t.value(p).rows();
      if (t.needs_grad(p)) t.grad(p) += g.middleRows(at, r);
      at += r;
    }
  });
}

Var slice_rows(Tape& t, Var a, int start, int count) {
  require(start >= 0 && start + count <= t.value(a).rows(), "slice out of range");
  Matrix out = t.value(a).middleRows(start, count);
  return t.record(std::move(out), t.needs_grad(a), [a, start, count](Tape& t, const Matrix& g) {
    if (t.needs_grad(a)) t.grad(a).middleRows(start, count) += g;
  });
}

Var broadcast_rows(Tape& t, Var row, int rows) {
  require(t.value(row).rows() == 1, "broadcast_rows needs a row vector");
  Matrix out = t.value(row).replicate(rows, 1);
  return t.record(std::move(out), t.needs_grad(row), [row](Tape& t, const Matrix& g) {
    if (t.needs_grad(row)) t.grad(row) += g.colwise().sum();
  });
}

Var mean_rows(Tape& t, Var a) {
  const auto rows = t.value(a).rows();
  require(rows > 0, "mean of no rows");
  Matrix out = t.value(a).colwise().mean();
  return t.record(std::move(out), t.needs_grad(a), [a, rows](Tape& t, const Matrix& g) {
    if (t.needs_grad(a)) t.grad(a).rowwise() += g.row(0) / static_cast<double>(rows);
  });
}

Var head_dot(Tape& t, Var q, Var k, int heads, double s) {
  const Matrix& qv = t.value(q);
  const Matrix& kv = t.value(k);
  require(qv.rows() == kv.rows() && qv.cols() == kv.cols(), "head_dot shape mismatch");
  require(heads > 0 && qv.cols() % heads == 0, "heads must divide width");
  const auto width = qv.cols() / heads;
  Matrix out(qv.rows(), heads);
  for (int h = 0; h < heads; ++h) {
    out.col(h) = s * (qv.middleCols(h * width, width).cwiseProduct(kv.middleCols(h * width, width)))
                         .rowwise()
                         .sum();
  }
  return t.record(std::move(out), t.needs_grad(q) || t.needs_grad(k),
                  [q, k, heads, width, s](Tape& t, const Matrix& g) {
                    for (int h = 0; h < heads; ++h) {
                      const auto gh = (s * g.col(h)).eval();
                      if (t.needs_grad(q)) {
                        t.grad(q).middleCols(h * width, width) +=
                            (t.value(k).middleCols(h * width, width).array().colwise() * gh.array())
                                .matrix();
                      }
                      if (t.needs_grad(k)) {
                        t.grad(k).middleCols(h * width, width) +=
                            (t.value(q).middleCols(h * width, width).array().colwise() * gh.array())
                                .matrix();
                      }
                    }
                  });
}

Var head_expand(Tape& t, Var a, int width) {
  const Matrix& x = t.value(a);
  const auto heads = x.cols();
  Matrix out(x.rows(), heads * width);
  for (Eigen::Index h = 0; h < heads; ++h) out.middleCols(h * width, width) = x.col(h).replicate(1, width);
  return t.record(std::move(out), t.needs_grad(a), [a, width, heads](Tape& t, const Matrix& g) {
    if (!t.needs_grad(a)) return;
    for (Eigen::Index h = 0; h < heads; ++h) {
      t.grad(a).col(h) += g.middleCols(h * width, width).rowwise().sum();
    }
  });
}

Var segment_softmax(Tape& t, Var scores, const std::vector<int>& segment, int segments) {
  const Matrix& s = t.value(scores);
  require(static_cast<Eigen::Index>(segment.size()) == s.rows(), "segment size mismatch");
  Matrix seg_max = Matrix::Constant(segments, s.cols(), -std::numeric_limits<double>::infinity());
  for (std::size_t r = 0; r < segment.size(); ++r) {
    seg_max.row(segment[r]) = seg_max.row(segment[r]).cwiseMax(s.row(static_cast<Eigen::Index>(r)));
  }
  Matrix out(s.rows(), s.cols());
  Matrix seg_sum = Matrix::Zero(segments, s.cols());
  for (std::size_t r = 0; r < segment.size(); ++r) {
    const auto i = static_cast<Eigen::Index>(r);
    out.row(i) = (s.row(i) - seg_max.row(segment[r])).array().exp();
    seg_sum.row(segment[r]) += out.row(i);
  }
  for (std::size_t r = 0; r < segment.size(); ++r) {
    const auto i = static_cast<Eigen::Index>(r);
    out.row(i).array() /= seg_sum.row(segment[r]).array();
  }
  const Matrix y = out;
  return t.record(std::move(out), t.needs_grad(scores),
                  [scores, segment, segments, y](Tape& t, const Matrix& g) {
                    if (!t.needs_grad(scores)) return;
                    Matrix dot = Matrix::Zero(segments, y.cols());
                    for (std::size_t r = 0; r < segment.size(); ++r) {
                      const auto i = static_cast<Eigen::Index>(r);
                      dot.row(segment[r]) += g.row(i).cwiseProduct(y.row(i));
                    }
                    Matrix& gs = t.grad(scores);
                    for (std::size_t r = 0; r < segment.size(); ++r) {
                      const auto i = static_cast<Eigen::Index>(r);
                      gs.row(i).array() +=
                          y.row(i).array() * (g.row(i).array() - dot.row(segment[r]).array());
                    }
                  });
}

}  // namespace esnet::ad
