#pragma once

#include <Eigen/Dense>
#include <deque>
#include <functional>
#include <vector>

// Minimal reverse-mode differentiation over dense double matrices. A Tape
// records ops in execution order; backward() walks them in reverse.
namespace esnet::ad {

using Matrix = Eigen::MatrixXd;

struct Var {
  int id = -1;
};

class Tape {
 public:
  Var constant(Matrix value);
  // Leaf whose gradient is reported back under `index` by gradients().
  Var parameter(const Matrix& value, int index);

  const Matrix& value(Var v) const { return nodes_[v.id].value; }
  bool needs_grad(Var v) const { return nodes_[v.id].needs_grad; }
  // Upstream gradient of v (zero-filled on first access).
  Matrix& grad(Var v);

  // Seeds d(out)/d(out) = seed for a 1x1 output and propagates.
  void backward(Var out, double seed = 1.0);
  // Accumulated gradient per parameter index; unused indices stay empty.
  std::vector<Matrix> gradients(std::size_t num_parameters) const;

  using Backward = std::function<void(Tape&, const Matrix& upstream)>;
  Var record(Matrix value, bool needs_grad, Backward backward);

  std::size_t size() const noexcept { return nodes_.size(); }

 private:
  struct Node {
    Matrix value;
    Matrix grad;
    bool needs_grad = false;
    bool has_grad = false;
    Backward backward;
  };
  std::deque<Node> nodes_;
  std::vector<std::pair<int, int>> parameters_;  // (node id, parameter index)
};

Var matmul(Tape& t, Var a, Var b);
Var add(Tape& t, Var a, Var b);
Var add_row(Tape& t, Var a, Var row);  // row is 1 x cols, broadcast down
Var mul_row(Tape& t, Var a, Var row);
Var scale(Tape& t, Var a, double s);
Var hadamard(Tape& t, Var a, Var b);
Var silu(Tape& t, Var a);
Var layer_norm(Tape& t, Var a, double eps = 1e-5);  // per row, no affine
Var gather_rows(Tape& t, Var a, const std::vector<int>& index);
Var scatter_add_rows(Tape& t, Var a, const std::vector<int>& index, int rows);
Var concat_cols(Tape& t, const std::vector<Var>& parts);
Var concat_rows(Tape& t, const std::vector<Var>& parts);
Var slice_rows(Tape& t, Var a, int start, int count);
Var broadcast_rows(Tape& t, Var row, int rows);
Var mean_rows(Tape& t, Var a);
// Per row and head h: sum over the head's column block of q * k, times s.
Var head_dot(Tape& t, Var q, Var k, int heads, double s);
// Repeats each of the h columns `width` times: m x h -> m x (h * width).
Var head_expand(Tape& t, Var a, int width);
// Softmax over rows sharing a segment id, independently per column.
Var segment_softmax(Tape& t, Var scores, const std::vector<int>& segment, int segments);

}  // namespace esnet::ad
