#include "nres/autodiff/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <unordered_set>

#include "nres/error.hpp"

namespace nres::ad {

namespace {

thread_local bool g_grad_enabled = true;

Node& checked(const std::shared_ptr<Node>& node) {
  if (!node) throw ContractError("use of an undefined tensor");
  return *node;
}

#ifndef NDEBUG
bool all_finite(std::span<const double> values) {
  return std::all_of(values.begin(), values.end(), [](double v) { return std::isfinite(v); });
}
#endif

}  // namespace

std::size_t numel(const Shape& shape) noexcept {
  std::size_t n = 1;
  for (auto e : shape) n *= e;
  return n;
}

std::string to_string(const Shape& shape) {
  std::ostringstream out;
  out << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) out << (i ? "," : "") << shape[i];
  out << ']';
  return out.str();
}

void Node::accumulate(std::span<const double> g) {
  auto& slot = grad_slot();
  for (std::size_t i = 0; i < slot.size(); ++i) slot[i] += g[i];
}

std::vector<double>& Node::grad_slot() {
  if (grad.empty()) grad.assign(data.size(), 0.0);
  return grad;
}

NoGradGuard::NoGradGuard() noexcept : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }
bool grad_enabled() noexcept { return g_grad_enabled; }

Tensor Tensor::zeros(Shape shape, bool requires_grad) { return full(std::move(shape), 0.0, requires_grad); }

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
  const auto n = ad::numel(shape);
  return from(std::move(shape), std::vector<double>(n, value), requires_grad);
}

Tensor Tensor::from(Shape shape, std::vector<double> values, bool requires_grad) {
  if (ad::numel(shape) != values.size()) {
    throw ShapeError("tensor shape " + to_string(shape) + " holds " + std::to_string(ad::numel(shape)) +
                     " elements but " + std::to_string(values.size()) + " values were given");
  }
  auto node = std::make_shared<Node>();
  node->shape = std::move(shape);
  node->data = std::move(values);
  node->requires_grad = requires_grad;
  return Tensor(std::move(node));
}

Tensor Tensor::scalar(double value, bool requires_grad) { return from({}, {value}, requires_grad); }

const Shape& Tensor::shape() const { return checked(node_).shape; }

std::size_t Tensor::dim(std::size_t axis) const {
  const auto& s = shape();
  if (axis >= s.size()) throw ShapeError("axis " + std::to_string(axis) + " out of range for shape " + to_string(s));
  return s[axis];
}

std::size_t Tensor::numel() const { return checked(node_).data.size(); }

std::span<const double> Tensor::data() const { return checked(node_).data; }

std::span<double> Tensor::mutable_data() {
  auto& node = checked(node_);
  if (!node.leaf) throw ContractError("in-place modification of a non-leaf tensor");
  return node.data;
}

double Tensor::item() const {
  const auto& node = checked(node_);
  if (node.data.size() != 1) throw ShapeError("item() on tensor of shape " + to_string(node.shape));
  return node.data[0];
}

bool Tensor::requires_grad() const { return checked(node_).requires_grad; }

Tensor& Tensor::set_requires_grad(bool flag) {
  auto& node = checked(node_);
  if (!node.leaf) throw ContractError("requires_grad can only be changed on leaves");
  node.requires_grad = flag;
  return *this;
}

bool Tensor::is_leaf() const { return checked(node_).leaf; }

bool Tensor::has_grad() const { return !checked(node_).grad.empty(); }

std::span<const double> Tensor::grad() const {
  const auto& node = checked(node_);
  if (node.grad.empty()) throw ContractError("tensor has no gradient");
  return node.grad;
}

std::span<double> Tensor::mutable_grad() { return checked(node_).grad_slot(); }

void Tensor::zero_grad() {
  auto& node = checked(node_);
  std::fill(node.grad.begin(), node.grad.end(), 0.0);
}

Tensor Tensor::detach() const { return from(shape(), checked(node_).data, false); }

Tensor Tensor::clone() const { return from(shape(), checked(node_).data, requires_grad()); }

Tensor Tensor::make_result(Shape shape, std::vector<double> values, std::vector<Tensor> parents,
                           std::function<void(Node&)> backward_fn) {
#ifndef NDEBUG
  bool inputs_finite = true;
  for (const auto& p : parents) inputs_finite = inputs_finite && all_finite(p.data());
  if (inputs_finite && !all_finite(values)) throw NumericalError("operation produced non-finite values");
#endif
  Tensor out = from(std::move(shape), std::move(values), false);
  const bool record = g_grad_enabled &&
                      std::any_of(parents.begin(), parents.end(), [](const Tensor& p) { return p.requires_grad(); });
  if (record) {
    auto& node = *out.node_;
    node.leaf = false;
    node.requires_grad = true;
    node.backward_fn = std::move(backward_fn);
    node.parents.reserve(parents.size());
    for (auto& p : parents) node.parents.push_back(p.node_);
  }
  return out;
}

void Tensor::backward() const {
  auto& root = checked(node_);
  if (root.data.size() != 1) throw ShapeError("backward() requires a scalar loss, got shape " + to_string(root.shape));
  if (!root.requires_grad) throw ContractError("backward() on a tensor that does not require grad");
  if (!root.leaf && root.consumed) throw ContractError("backward() through an already consumed graph");

  // Iterative post-order DFS; reversed it is a valid reverse-topological order.
  std::vector<Node*> order;
  std::unordered_set<Node*> visited;
  std::vector<std::pair<Node*, std::size_t>> stack{{&root, 0}};
  visited.insert(&root);
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      Node* parent = node->parents[next++].get();
      if (!parent->requires_grad || visited.contains(parent)) continue;
      if (!parent->leaf && parent->consumed) throw ContractError("backward() through an already consumed graph");
      visited.insert(parent);
      stack.emplace_back(parent, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  root.grad_slot()[0] += 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* node = *it;
    if (node->leaf) continue;
    if (node->backward_fn && !node->grad.empty()) node->backward_fn(*node);
    node->consumed = true;
    node->backward_fn = nullptr;
  }
  for (Node* node : order) {
    if (!node->leaf) node->parents.clear();
  }
}

}  // namespace nres::ad
