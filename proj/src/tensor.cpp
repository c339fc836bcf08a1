#include "oneshot/tensor.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <sstream>

#include "oneshot/errors.hpp"

namespace oneshot {

std::size_t shape_size(const Shape& shape) {
  std::size_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

std::string to_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ", ";
    os << shape[i];
  }
  os << ']';
  return os.str();
}

std::span<double> detail::Node::grad_buffer() {
  if (grad.empty()) grad.assign(value.size(), 0.0);
  return grad;
}

Tensor::Tensor() : node_(std::make_shared<detail::Node>()) { node_->value.assign(1, 0.0); }

Tensor::Tensor(Shape shape, double fill) : node_(std::make_shared<detail::Node>()) {
  node_->value.assign(shape_size(shape), fill);
  node_->shape = std::move(shape);
}

Tensor::Tensor(Shape shape, std::vector<double> values) : node_(std::make_shared<detail::Node>()) {
  if (shape_size(shape) != values.size()) {
    throw ShapeError("tensor of shape " + to_string(shape) + " cannot hold " +
                     std::to_string(values.size()) + " values");
  }
  node_->shape = std::move(shape);
  node_->value.assign(values.begin(), values.end());
}

Tensor Tensor::scalar(double value) { return Tensor(Shape{}, std::vector<double>{value}); }

Tensor Tensor::vector(std::initializer_list<double> values) {
  return Tensor(Shape{values.size()}, std::vector<double>(values));
}

Tensor Tensor::matrix(std::initializer_list<std::initializer_list<double>> rows) {
  const std::size_t r = rows.size();
  const std::size_t c = r ? rows.begin()->size() : 0;
  std::vector<double> v;
  v.reserve(r * c);
  for (const auto& row : rows) {
    if (row.size() != c) throw ShapeError("ragged matrix literal");
    v.insert(v.end(), row.begin(), row.end());
  }
  return Tensor(Shape{r, c}, std::move(v));
}

std::size_t Tensor::dim(std::size_t axis) const {
  if (axis >= rank()) {
    throw ShapeError("axis " + std::to_string(axis) + " out of range for shape " + to_string(shape()));
  }
  return node_->shape[axis];
}

double Tensor::item() const {
  if (size() != 1) throw ShapeError("item() on tensor of shape " + to_string(shape()));
  return node_->value[0];
}

Tensor& Tensor::set_requires_grad(bool on) {
  if (!is_leaf()) throw TapeError("requires_grad can only be changed on leaf tensors");
  node_->requires_grad = on;
  return *this;
}

void Tensor::zero_grad() { std::fill(node_->grad.begin(), node_->grad.end(), 0.0); }

Tensor Tensor::detach() const {
  auto node = std::make_shared<detail::Node>();
  node->shape = node_->shape;
  node->value = node_->value;
  return Tensor(std::move(node));
}

Tensor Tensor::clone() const {
  Tensor t = detach();
  t.node_->requires_grad = node_->requires_grad && is_leaf();
  return t;
}

namespace {
std::atomic<std::uint64_t> next_tape_id{1};
}

Tape::Tape() : id_(next_tape_id.fetch_add(1)) {}

Tape Tape::inference() {
  Tape t;
  t.recording_ = false;
  return t;
}

bool Tape::should_record(std::initializer_list<const Tensor*> inputs) const {
  if (!recording_) return false;
  return std::any_of(inputs.begin(), inputs.end(), [](const Tensor* t) { return t->requires_grad(); });
}

void Tape::record(std::string_view op, std::vector<Tensor> inputs, Tensor& output, BackwardFn backward) {
  if (!recording_) throw TapeError("record() on an inference tape");
  Entry e;
  e.op = op;
  e.inputs.reserve(inputs.size());
  for (auto& t : inputs) e.inputs.push_back(t.node_);
  output.node_->requires_grad = true;
  output.node_->tape_id = id_;
  output.node_->entry_index = entries_.size();
  e.output = output.node_;
  e.backward = std::move(backward);
  entries_.push_back(std::move(e));
}

void Tape::backward(const Tensor& loss) {
  if (loss.size() != 1) {
    throw ShapeError("backward() needs a scalar loss, got shape " + to_string(loss.shape()));
  }
  const auto& ln = *loss.node_;
  if (ln.tape_id != id_ || ln.entry_index >= entries_.size() || entries_[ln.entry_index].output != loss.node_) {
    throw TapeError("loss was not produced on this tape");
  }
  for (auto& e : entries_) {
    if (!e.output->grad.empty()) std::fill(e.output->grad.begin(), e.output->grad.end(), 0.0);
  }
  loss.node_->grad_buffer()[0] = 1.0;
  last_visits_ = 0;
  for (std::size_t k = ln.entry_index + 1; k-- > 0;) {
    auto& e = entries_[k];
    if (e.output->grad.empty()) continue;
    e.backward(e.output->grad);
    ++last_visits_;
  }
}

bool Tape::topologically_ordered() const {
  for (std::size_t k = 0; k < entries_.size(); ++k) {
    for (const auto& in : entries_[k].inputs) {
      if (in->tape_id == 0) continue;
      if (in->tape_id != id_ || in->entry_index >= k) return false;
    }
  }
  return true;
}

std::span<double> grad_target(const Tensor& t) {
  if (!t.requires_grad()) return {};
  return t.handle()->grad_buffer();
}

void require_finite(std::string_view op, std::span<const double> values) {
  for (double v : values) {
    if (!std::isfinite(v)) throw NumericError("non-finite value produced by " + std::string(op));
  }
}

}  // namespace oneshot
