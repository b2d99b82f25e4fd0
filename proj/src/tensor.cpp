#include "lupi/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <sstream>

namespace lupi {

namespace {

constexpr std::size_t kParallelThreshold = 1 << 14;

}  // namespace

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ',';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

static void check_extents(const Shape& shape) {
  if (shape.empty()) throw ShapeError("tensor shape must have at least one axis");
  for (auto d : shape)
    if (d == 0) throw ShapeError("tensor extents must be positive, got " + shape_str(shape));
}

Tensor::Tensor(Shape shape, double fill) : shape_(std::move(shape)) {
  check_extents(shape_);
  data_.assign(shape_numel(shape_), fill);
}

Tensor::Tensor(Shape shape, std::vector<double> data)
    : shape_(std::move(shape)), data_(std::move(data)) {
  check_extents(shape_);
  if (data_.size() != shape_numel(shape_))
    throw ShapeError("buffer of length " + std::to_string(data_.size()) +
                     " does not match shape " + shape_str(shape_));
}

Tensor Tensor::from_rows(std::initializer_list<std::initializer_list<double>> rows) {
  const std::size_t h = rows.size();
  const std::size_t w = h ? rows.begin()->size() : 0;
  std::vector<double> data;
  data.reserve(h * w);
  for (const auto& r : rows) {
    if (r.size() != w) throw ShapeError("ragged rows in Tensor::from_rows");
    data.insert(data.end(), r.begin(), r.end());
  }
  return Tensor({h, w}, std::move(data));
}

Tensor Tensor::reshaped(Shape shape) const {
  if (shape_numel(shape) != data_.size())
    throw ShapeError("cannot reshape " + shape_str(shape_) + " to " + shape_str(shape));
  return Tensor(std::move(shape), data_);
}

Tensor Tensor::channels(std::size_t begin, std::size_t end) const {
  if (rank() != 3 || begin >= end || end > shape_[0])
    throw ShapeError("invalid channel slice [" + std::to_string(begin) + "," +
                     std::to_string(end) + ") of " + shape_str(shape_));
  const std::size_t plane = shape_[1] * shape_[2];
  return Tensor({end - begin, shape_[1], shape_[2]},
                std::vector<double>(data_.begin() + begin * plane, data_.begin() + end * plane));
}

Tensor& Tensor::operator+=(const Tensor& other) {
  require_same_shape(*this, other, "operator+=");
  for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += other.data_[i];
  return *this;
}

Tensor& Tensor::operator*=(double s) {
  for (auto& v : data_) v *= s;
  return *this;
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* what) {
  if (a.shape() != b.shape())
    throw ShapeError(std::string(what) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                     shape_str(b.shape()));
}

Tensor elementwise(ElementwiseOp op, const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "elementwise");
  Tensor out = Tensor::zeros_like(a);
  const auto pa = a.data();
  const auto pb = b.data();
  auto po = out.data();
  const auto n = static_cast<std::ptrdiff_t>(a.size());
  switch (op) {
    case ElementwiseOp::add:
#pragma omp parallel for if (n > static_cast<std::ptrdiff_t>(kParallelThreshold))
      for (std::ptrdiff_t i = 0; i < n; ++i) po[i] = pa[i] + pb[i];
      break;
    case ElementwiseOp::sub:
#pragma omp parallel for if (n > static_cast<std::ptrdiff_t>(kParallelThreshold))
      for (std::ptrdiff_t i = 0; i < n; ++i) po[i] = pa[i] - pb[i];
      break;
    case ElementwiseOp::mul:
#pragma omp parallel for if (n > static_cast<std::ptrdiff_t>(kParallelThreshold))
      for (std::ptrdiff_t i = 0; i < n; ++i) po[i] = pa[i] * pb[i];
      break;
  }
  return out;
}

Tensor add(const Tensor& a, const Tensor& b) { return elementwise(ElementwiseOp::add, a, b); }
Tensor sub(const Tensor& a, const Tensor& b) { return elementwise(ElementwiseOp::sub, a, b); }
Tensor mul(const Tensor& a, const Tensor& b) { return elementwise(ElementwiseOp::mul, a, b); }

Tensor scale(const Tensor& a, double s) {
  Tensor out = a;
  out *= s;
  return out;
}

Tensor abs(const Tensor& a) {
  Tensor out = a;
  for (auto& v : out.data()) v = std::fabs(v);
  return out;
}

namespace {

double reduce_identity(ReduceOp op) {
  switch (op) {
    case ReduceOp::min: return std::numeric_limits<double>::infinity();
    case ReduceOp::max: return -std::numeric_limits<double>::infinity();
    default: return 0.0;
  }
}

double reduce_combine(ReduceOp op, double acc, double v) {
  switch (op) {
    case ReduceOp::min: return std::min(acc, v);
    case ReduceOp::max: return std::max(acc, v);
    default: return acc + v;
  }
}

}  // namespace

// Reductions run serially in flat index order so results never depend on
// the thread count.
Tensor reduce(ReduceOp op, const Tensor& a, const std::optional<std::vector<std::size_t>>& axes) {
  const Shape& shape = a.shape();
  std::vector<bool> reduced(shape.size(), !axes.has_value());
  if (axes) {
    for (auto ax : *axes) {
      if (ax >= shape.size())
        throw ShapeError("reduce: axis " + std::to_string(ax) + " out of range for shape " +
                         shape_str(shape));
      if (reduced[ax]) throw ShapeError("reduce: duplicate axis " + std::to_string(ax));
      reduced[ax] = true;
    }
  }

  Shape out_shape;
  std::size_t count = 1;
  for (std::size_t d = 0; d < shape.size(); ++d) {
    if (reduced[d])
      count *= shape[d];
    else
      out_shape.push_back(shape[d]);
  }
  if (out_shape.empty()) out_shape = {1};

  Tensor out(out_shape, reduce_identity(op));
  // Strides of the output indexed by the kept axes.
  std::vector<std::size_t> out_stride(shape.size(), 0);
  {
    std::size_t s = 1;
    for (std::size_t d = shape.size(); d-- > 0;) {
      if (!reduced[d]) {
        out_stride[d] = s;
        s *= shape[d];
      }
    }
  }

  std::vector<std::size_t> idx(shape.size(), 0);
  const auto src = a.data();
  auto dst = out.data();
  for (std::size_t flat = 0; flat < a.size(); ++flat) {
    std::size_t o = 0;
    for (std::size_t d = 0; d < shape.size(); ++d) o += idx[d] * out_stride[d];
    dst[o] = reduce_combine(op, dst[o], src[flat]);
    for (std::size_t d = shape.size(); d-- > 0;) {
      if (++idx[d] < shape[d]) break;
      idx[d] = 0;
    }
  }
  if (op == ReduceOp::mean)
    for (auto& v : dst) v /= static_cast<double>(count);
  return out;
}

double sum(const Tensor& a) {
  double s = 0.0;
  for (double v : a.data()) s += v;
  return s;
}

double dot(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "dot");
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

bool all_finite(const Tensor& a) {
  return std::all_of(a.data().begin(), a.data().end(), [](double v) { return std::isfinite(v); });
}

Tensor concat_channels(const Tensor& a, const Tensor& b) {
  if (a.rank() != 3 || b.rank() != 3 || a.dim(1) != b.dim(1) || a.dim(2) != b.dim(2))
    throw ShapeError("concat_channels: incompatible shapes " + shape_str(a.shape()) + " and " +
                     shape_str(b.shape()));
  std::vector<double> data(a.data().begin(), a.data().end());
  data.insert(data.end(), b.data().begin(), b.data().end());
  return Tensor({a.dim(0) + b.dim(0), a.dim(1), a.dim(2)}, std::move(data));
}

Tensor transpose2d(const Tensor& a) {
  if (a.rank() != 2) throw ShapeError("transpose2d expects rank 2, got " + shape_str(a.shape()));
  const std::size_t r = a.dim(0), c = a.dim(1);
  Tensor out({c, r});
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) out[j * r + i] = a[i * c + j];
  return out;
}

}  // namespace lupi
