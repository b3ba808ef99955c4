#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace voxdet::nn {

using Shape = std::vector<std::int64_t>;

class AutodiffError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

std::int64_t shape_numel(const Shape& shape);
std::string shape_string(const Shape& shape);

struct Node;

// Handle to a node of the differentiation tape. Copies share the node, so a
// Tensor behaves like a reference to its storage; use clone() for a deep copy.
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, float value, bool requires_grad = false);
  static Tensor from(Shape shape, std::vector<float> values, bool requires_grad = false);
  static Tensor scalar(float value, bool requires_grad = false);

  bool defined() const { return static_cast<bool>(node_); }
  const Shape& shape() const;
  std::int64_t dim(std::size_t i) const { return shape().at(i); }
  std::int64_t numel() const;

  std::span<float> data();
  std::span<const float> data() const;
  float item() const;

  bool requires_grad() const;
  // Marks a leaf as a trainable parameter.
  void set_requires_grad(bool on);
  bool is_leaf() const;

  bool has_grad() const;
  // Gradient buffer; allocated (zero) on first access.
  std::span<float> grad();
  std::span<const float> grad() const;
  void zero_grad();

  // Leaf copy of the values, detached from the tape.
  Tensor clone() const;
  std::uint64_t id() const;

  Node* node() const { return node_.get(); }
  const std::shared_ptr<Node>& node_ptr() const { return node_; }
  explicit Tensor(std::shared_ptr<Node> node) : node_(std::move(node)) {}

 private:
  std::shared_ptr<Node> node_;
};

struct Node {
  Shape shape;
  std::vector<float> data;
  std::vector<float> grad;
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> inputs;
  // Reads this node's grad and accumulates into the inputs' grads.
  std::function<void(Node&)> backward_fn;
  std::uint64_t id = 0;

  std::vector<float>& ensure_grad() {
    if (grad.size() != data.size()) grad.assign(data.size(), 0.0f);
    return grad;
  }
};

bool grad_enabled();

// Disables tape recording on this thread for its lifetime.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

// Builds an op result. The node is recorded on the tape only when grad mode
// is on and some input requires grad; otherwise backward is dropped.
Tensor make_result(Shape shape, std::vector<float> data, std::vector<Tensor> inputs,
                   std::function<void(Node&)> backward_fn);

// Reverse sweep from a scalar loss. Leaf grads accumulate across calls;
// intermediate grads are reset at the start of every sweep.
// Throws AutodiffError("NotOnTape") if the loss does not require grad.
void backward(const Tensor& loss);

}  // namespace voxdet::nn
