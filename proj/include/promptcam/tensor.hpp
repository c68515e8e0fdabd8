#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <vector>

namespace pcam {

struct Tensor;
using TensorPtr = std::shared_ptr<Tensor>;

// Dense f64 tensor, row-major. Either a leaf (parameter or constant) or the
// output of a GradTape primitive. Immutable after forward construction; the
// optimizer mutates leaf data between tapes, never during one.
//
// Shape convention: token matrices are stored transposed relative to the
// usual column-stacked math notation. A set of T tokens of width D is a
// (T x D) tensor whose row t is token t. This is the single place that
// mapping is documented; everything downstream uses the stored convention.
struct Tensor {
  std::vector<std::size_t> shape;
  std::vector<double> data;
  bool requires_grad = false;  // leaf whose gradient should be retained
  bool needs_grad = false;     // participates in backward
  std::vector<double> grad;    // filled by GradTape::backward; empty otherwise
  int node_id = -1;            // tape position once recorded

  std::size_t size() const { return data.size(); }
  std::size_t rows() const { return shape.empty() ? 0 : shape[0]; }
  std::size_t cols() const { return shape.size() < 2 ? 1 : shape[1]; }
  double& at(std::size_t r, std::size_t c) { return data[r * cols() + c]; }
  double at(std::size_t r, std::size_t c) const { return data[r * cols() + c]; }
  bool has_grad() const { return !grad.empty(); }
};

std::size_t shape_size(const std::vector<std::size_t>& shape);
std::string shape_str(const std::vector<std::size_t>& shape);

TensorPtr make_tensor(std::vector<std::size_t> shape, bool requires_grad = false);
TensorPtr make_tensor(std::vector<std::size_t> shape, std::vector<double> data,
                      bool requires_grad = false);
TensorPtr make_scalar(double value, bool requires_grad = false);

// Ordered record of primitive applications. Inputs are registered before the
// ops that consume them, so node ids are already in topological order and
// backward() is a single reverse scan visiting each node exactly once.
class GradTape {
 public:
  struct Node {
    const char* op;
    std::vector<int> input_ids;
    int output_id;
    TensorPtr output;
    std::function<void()> backward;  // no-op for leaves
  };

  // Assigns a node id to a leaf on first use.
  void register_leaf(const TensorPtr& t);

  void record(const char* op, const std::vector<TensorPtr>& inputs,
              const TensorPtr& output, std::function<void()> backward);

  // Seeds d(loss)/d(loss) = 1 and applies the chain rule in reverse
  // topological order. Gradients accumulate into every tensor on the path;
  // leaves with requires_grad keep theirs for the optimizer. Single use.
  void backward(const TensorPtr& loss);

  std::size_t node_count() const { return nodes_.size(); }
  const Node& node(std::size_t i) const { return nodes_[i]; }

 private:
  std::vector<Node> nodes_;
  bool consumed_ = false;
};

// ---- Primitives -----------------------------------------------------------
// Each checks shapes (errors name both operands), computes the value, and
// records its gradient rule when any input needs grad.

TensorPtr matmul(GradTape& t, const TensorPtr& a, const TensorPtr& b);
TensorPtr add(GradTape& t, const TensorPtr& a, const TensorPtr& b);
// Adds a length-n vector to every row of an (m x n) matrix.
TensorPtr add_rowvec(GradTape& t, const TensorPtr& a, const TensorPtr& v);
TensorPtr scale(GradTape& t, const TensorPtr& a, double s);
// Softmax along `axis` (negative counts from the end); shift-invariant.
TensorPtr softmax(GradTape& t, const TensorPtr& a, int axis = -1);
// Row-wise softmax over an (m x n) matrix with a keep mask (m*n entries,
// nonzero = key visible). Masked positions get exactly zero output.
TensorPtr masked_softmax_rows(GradTape& t, const TensorPtr& logits,
                              const std::vector<std::uint8_t>& keep);
// Normalizes the last axis to zero mean / unit variance, then gamma*xhat+beta.
TensorPtr layer_norm(GradTape& t, const TensorPtr& x, const TensorPtr& gamma,
                     const TensorPtr& beta, double eps);
// tanh-approximated GELU; the same approximation is differentiated exactly,
// so forward and backward describe one function.
TensorPtr gelu(GradTape& t, const TensorPtr& a);
// Elementwise natural log; domain x > 0.
TensorPtr log_elem(GradTape& t, const TensorPtr& a);
// Extracts one element as a scalar tensor.
TensorPtr pick(GradTape& t, const TensorPtr& a, std::size_t flat_index);
TensorPtr slice_rows(GradTape& t, const TensorPtr& a, std::size_t r0, std::size_t r1);
TensorPtr slice_cols(GradTape& t, const TensorPtr& a, std::size_t c0, std::size_t c1);
TensorPtr concat_rows(GradTape& t, const std::vector<TensorPtr>& parts);
TensorPtr concat_cols(GradTape& t, const std::vector<TensorPtr>& parts);
TensorPtr transpose(GradTape& t, const TensorPtr& a);
// Mean of scalar tensors (batch loss aggregation).
TensorPtr average_scalars(GradTape& t, const std::vector<TensorPtr>& xs);
// Numerically stable -log softmax(logits)[label]; logits may be any shape of
// size C. The saved softmax makes the backward the textbook p - onehot.
TensorPtr cross_entropy_with_logits(GradTape& t, const TensorPtr& logits, int label);

// ---- Independent gradient oracle ------------------------------------------
// Central differences (f(x+h e_i) - f(x-h e_i)) / 2h per coordinate. Shares
// nothing with the tape; used to cross-check reverse mode.
std::vector<double> finite_difference_gradient(
    const std::function<double(const std::vector<double>&)>& f,
    std::vector<double> x, double h);

}  // namespace pcam
