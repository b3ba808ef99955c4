#include "voxdet/tensor.hpp"

#include <algorithm>
#include <atomic>
#include <sstream>
#include <unordered_set>

namespace voxdet::nn {

namespace {

std::atomic<std::uint64_t> g_next_id{1};
thread_local bool g_grad_enabled = true;

std::shared_ptr<Node> new_node(Shape shape, std::vector<float> data) {
  if (static_cast<std::int64_t>(data.size()) != shape_numel(shape)) {
    throw AutodiffError("tensor data size " + std::to_string(data.size()) + " does not match shape " +
                        shape_string(shape));
  }
  auto node = std::make_shared<Node>();
  node->shape = std::move(shape);
  node->data = std::move(data);
  node->id = g_next_id.fetch_add(1, std::memory_order_relaxed);
  return node;
}

const Node& checked(const std::shared_ptr<Node>& n) {
  if (!n) throw AutodiffError("use of an undefined tensor");
  return *n;
}

}  // namespace

std::int64_t shape_numel(const Shape& shape) {
  std::int64_t n = 1;
  for (auto d : shape) {
    if (d <= 0) throw AutodiffError("tensor dims must be positive, got " + shape_string(shape));
    n *= d;
  }
  return n;
}

std::string shape_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << ']';
  return os.str();
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) { return full(std::move(shape), 0.0f, requires_grad); }

Tensor Tensor::full(Shape shape, float value, bool requires_grad) {
  const auto n = shape_numel(shape);
  return from(std::move(shape), std::vector<float>(static_cast<std::size_t>(n), value), requires_grad);
}

Tensor Tensor::from(Shape shape, std::vector<float> values, bool requires_grad) {
  Tensor t(new_node(std::move(shape), std::move(values)));
  t.node_->requires_grad = requires_grad;
  return t;
}

Tensor Tensor::scalar(float value, bool requires_grad) { return from({}, {value}, requires_grad); }

const Shape& Tensor::shape() const { return checked(node_).shape; }
std::int64_t Tensor::numel() const { return static_cast<std::int64_t>(checked(node_).data.size()); }

std::span<float> Tensor::data() {
  checked(node_);
  return node_->data;
}
std::span<const float> Tensor::data() const { return checked(node_).data; }

float Tensor::item() const {
  const auto& n = checked(node_);
  if (n.data.size() != 1) throw AutodiffError("item() on a tensor with " + std::to_string(n.data.size()) + " elements");
  return n.data[0];
}

bool Tensor::requires_grad() const { return checked(node_).requires_grad; }

void Tensor::set_requires_grad(bool on) {
  checked(node_);
  if (node_->backward_fn) throw AutodiffError("set_requires_grad on a non-leaf tensor");
  node_->requires_grad = on;
}

bool Tensor::is_leaf() const { return !checked(node_).backward_fn; }

bool Tensor::has_grad() const {
  const auto& n = checked(node_);
  return !n.grad.empty() && n.grad.size() == n.data.size();
}

std::span<float> Tensor::grad() {
  checked(node_);
  return node_->ensure_grad();
}

std::span<const float> Tensor::grad() const {
  checked(node_);
  return node_->ensure_grad();
}

void Tensor::zero_grad() {
  checked(node_);
  std::fill(node_->grad.begin(), node_->grad.end(), 0.0f);
}

Tensor Tensor::clone() const {
  const auto& n = checked(node_);
  return from(n.shape, n.data, false);
}

std::uint64_t Tensor::id() const { return checked(node_).id; }

bool grad_enabled() { return g_grad_enabled; }

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

Tensor make_result(Shape shape, std::vector<float> data, std::vector<Tensor> inputs,
                   std::function<void(Node&)> backward_fn) {
  Tensor out(new_node(std::move(shape), std::move(data)));
  if (!g_grad_enabled) return out;
  const bool any = std::any_of(inputs.begin(), inputs.end(),
                               [](const Tensor& t) { return t.defined() && t.requires_grad(); });
  if (!any) return out;
  Node& node = *out.node();
  node.requires_grad = true;
  for (auto& t : inputs) node.inputs.push_back(t.node_ptr());
  node.backward_fn = std::move(backward_fn);
  return out;
}

void backward(const Tensor& loss) {
  if (!loss.defined() || !loss.requires_grad()) throw AutodiffError("NotOnTape");
  if (loss.numel() != 1) throw AutodiffError("backward() needs a scalar loss, got " + shape_string(loss.shape()));

  // Iterative post-order DFS gives a topological order (inputs first).
  std::vector<Node*> order;
  std::unordered_set<Node*> visited;
  std::vector<std::pair<Node*, std::size_t>> stack;
  stack.emplace_back(loss.node(), 0);
  visited.insert(loss.node());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->inputs.size()) {
      Node* child = node->inputs[next++].get();
      if (child && child->requires_grad && visited.insert(child).second) stack.emplace_back(child, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  for (Node* n : order) {
    if (n->backward_fn) {
      n->grad.assign(n->data.size(), 0.0f);
    } else {
      n->ensure_grad();
    }
  }
  loss.node()->grad[0] += 1.0f;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* n = *it;
    if (n->backward_fn) {
      for (auto& in : n->inputs) {
        if (in && in->requires_grad) in->ensure_grad();
      }
      n->backward_fn(*n);
    }
  }
}

}  // namespace voxdet::nn
