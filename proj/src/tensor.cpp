#include "boxseg/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <functional>
#include <numeric>
#include <sstream>

#include "boxseg/error.hpp"

namespace boxseg {

const char* to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::kShape: return "shape_error";
    case ErrorKind::kInvalidArgument: return "invalid_argument";
    case ErrorKind::kIo: return "io_error";
    case ErrorKind::kFormat: return "format_error";
    case ErrorKind::kState: return "state_error";
  }
  return "error";
}

Error::Error(ErrorKind kind, std::string message, std::string axis)
    : std::runtime_error(std::string(to_string(kind)) + ": " + message),
      kind_(kind),
      axis_(std::move(axis)),
      detail_(std::move(message)) {}

void throw_shape(const std::string& op, const std::string& axis,
                 std::size_t expected, std::size_t actual) {
  std::ostringstream os;
  os << op << ": mismatch on axis '" << axis << "' (expected " << expected
     << ", got " << actual << ")";
  throw Error(ErrorKind::kShape, os.str(), axis);
}

void throw_invalid(const std::string& message) {
  throw Error(ErrorKind::kInvalidArgument, message);
}

std::size_t shape_numel(const Shape& dims) {
  return std::accumulate(dims.begin(), dims.end(), std::size_t{1},
                         std::multiplies<>());
}

std::string shape_string(const Shape& dims) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < dims.size(); ++i) {
    if (i) os << 'x';
    os << dims[i];
  }
  os << ']';
  return os.str();
}

Tensor::Tensor(Shape dims, double fill)
    : dims_(std::move(dims)), data_(shape_numel(dims_), fill) {}

Tensor::Tensor(Shape dims, std::vector<double> data)
    : dims_(std::move(dims)), data_(data.begin(), data.end()) {
  if (data_.size() != shape_numel(dims_)) {
    throw_shape("Tensor", "numel", shape_numel(dims_), data_.size());
  }
}

Tensor Tensor::from(std::initializer_list<double> values) {
  return Tensor({values.size()}, std::vector<double>(values));
}

double& Tensor::at(std::size_t c, std::size_t y, std::size_t x) {
  return data_[(c * dims_[1] + y) * dims_[2] + x];
}

double Tensor::at(std::size_t c, std::size_t y, std::size_t x) const {
  return data_[(c * dims_[1] + y) * dims_[2] + x];
}

Tensor Tensor::reshaped(Shape dims) const {
  if (shape_numel(dims) != numel()) {
    throw_shape("reshape", "numel", numel(), shape_numel(dims));
  }
  Tensor out;
  out.dims_ = std::move(dims);
  out.data_ = data_;
  return out;
}

void Tensor::fill(double v) { std::fill(data_.begin(), data_.end(), v); }

bool Tensor::identical(const Tensor& other) const {
  return dims_ == other.dims_ &&
         (data_.empty() ||
          std::memcmp(data_.data(), other.data_.data(),
                      data_.size() * sizeof(double)) == 0);
}

bool Tensor::all_finite() const {
  return std::all_of(data_.begin(), data_.end(),
                     [](double v) { return std::isfinite(v); });
}

Nchw as_nchw(const Shape& dims, const char* op) {
  if (dims.size() == 3) return {1, dims[0], dims[1], dims[2]};
  if (dims.size() == 4) return {dims[0], dims[1], dims[2], dims[3]};
  throw Error(ErrorKind::kShape,
              std::string(op) + ": expected rank 3 or 4, got " +
                  shape_string(dims),
              "rank");
}

Tensor stack(const std::vector<const Tensor*>& items) {
  if (items.empty()) throw_invalid("stack: no items");
  const Shape& inner = items.front()->dims();
  Shape dims{items.size()};
  dims.insert(dims.end(), inner.begin(), inner.end());
  Tensor out(dims);
  const std::size_t stride = items.front()->numel();
  for (std::size_t i = 0; i < items.size(); ++i) {
    if (items[i]->dims() != inner) {
      throw Error(ErrorKind::kShape,
                  "stack: item " + std::to_string(i) + " has dims " +
                      shape_string(items[i]->dims()) + ", expected " +
                      shape_string(inner),
                  "item");
    }
    std::copy_n(items[i]->ptr(), stride, out.ptr() + i * stride);
  }
  return out;
}

Tensor batch_item(const Tensor& batch, std::size_t index) {
  if (batch.rank() < 2) throw_invalid("batch_item: rank < 2");
  if (index >= batch.dim(0)) throw_shape("batch_item", "batch", batch.dim(0), index);
  Shape inner(batch.dims().begin() + 1, batch.dims().end());
  const std::size_t stride = shape_numel(inner);
  std::vector<double> data(batch.ptr() + index * stride,
                           batch.ptr() + (index + 1) * stride);
  return Tensor(std::move(inner), std::move(data));
}

}  // namespace boxseg
