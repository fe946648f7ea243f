#include "advlat/tensor.hpp"

#include <cmath>
#include <fstream>
#include <iomanip>
#include <istream>
#include <ostream>
#include <sstream>

namespace advlat {

std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (auto e : shape) n *= e;
  return n;
}

std::string shape_string(const Shape& shape) {
  std::string s = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) s += "x";
    s += std::to_string(shape[i]);
  }
  return s + "]";
}

namespace {

void check_extents(const Shape& shape) {
  for (auto e : shape) {
    if (e == 0) throw DimensionError("tensor extents must be positive, got " + shape_string(shape));
  }
}

}  // namespace

Tensor::Tensor(Shape shape, double fill) : shape_(std::move(shape)) {
  check_extents(shape_);
  data_.assign(shape_numel(shape_), fill);
}

Tensor::Tensor(Shape shape, std::vector<double> data) : shape_(std::move(shape)), data_(std::move(data)) {
  check_extents(shape_);
  if (data_.size() != shape_numel(shape_)) {
    throw DimensionError("tensor data length " + std::to_string(data_.size()) +
                         " does not match shape " + shape_string(shape_));
  }
}

Tensor Tensor::vector(std::vector<double> values) {
  Shape s{values.size()};
  return Tensor(std::move(s), std::move(values));
}

Tensor Tensor::matrix(std::size_t rows, std::size_t cols, std::vector<double> values) {
  return Tensor(Shape{rows, cols}, std::move(values));
}

Tensor Tensor::matrix(std::initializer_list<std::initializer_list<double>> rows) {
  std::vector<double> v;
  std::size_t cols = rows.size() ? rows.begin()->size() : 0;
  for (const auto& r : rows) {
    if (r.size() != cols) throw DimensionError("ragged matrix literal");
    v.insert(v.end(), r.begin(), r.end());
  }
  return Tensor(Shape{rows.size(), cols}, std::move(v));
}

std::size_t Tensor::extent(std::size_t axis) const {
  if (axis >= shape_.size()) {
    throw DimensionError("axis " + std::to_string(axis) + " out of range for shape " + shape_string(shape_));
  }
  return shape_[axis];
}

double Tensor::item() const {
  if (data_.size() != 1) throw DimensionError("item() on non-scalar tensor " + shape_string(shape_));
  return data_[0];
}

Tensor Tensor::reshaped(Shape shape) const {
  if (shape_numel(shape) != data_.size()) {
    throw DimensionError("cannot reshape " + shape_string(shape_) + " to " + shape_string(shape));
  }
  return Tensor(std::move(shape), data_);
}

bool Tensor::all_finite() const {
  for (double v : data_) {
    if (!std::isfinite(v)) return false;
  }
  return true;
}

void write_tns(std::ostream& out, const Tensor& t) {
  out << "TNS v1 " << t.rank();
  for (auto e : t.shape()) out << ' ' << e;
  out << '\n';
  out << std::setprecision(17);
  const auto cols = t.rank() ? t.shape().back() : 1;
  for (std::size_t i = 0; i < t.numel(); ++i) {
    out << t[i] << ((i + 1) % cols == 0 ? '\n' : ' ');
  }
}

Tensor read_tns(std::istream& in) {
  std::string header;
  if (!std::getline(in, header)) throw FormatError("TNS: missing header line");
  std::istringstream hs(header);
  std::string magic, version;
  std::size_t rank = 0;
  if (!(hs >> magic >> version >> rank) || magic != "TNS") {
    throw FormatError("TNS: malformed header '" + header + "'");
  }
  if (version != "v1") throw FormatError("TNS: unsupported version " + version + " (expected v1)");
  Shape shape(rank);
  for (auto& e : shape) {
    if (!(hs >> e)) throw FormatError("TNS: header declares rank " + std::to_string(rank) + " but lists fewer extents");
  }
  std::string trailing;
  if (hs >> trailing) throw FormatError("TNS: trailing header token '" + trailing + "'");
  std::vector<double> values(shape_numel(shape));
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (!(in >> values[i])) {
      throw FormatError("TNS: expected " + std::to_string(values.size()) + " values, read " + std::to_string(i));
    }
  }
  double extra = 0.0;
  if (in >> extra) throw FormatError("TNS: more values than shape " + shape_string(shape) + " holds");
  return Tensor(std::move(shape), std::move(values));
}

void save_tns(const std::string& path, const Tensor& t) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot open " + path + " for writing");
  write_tns(out, t);
  if (!out) throw IoError("write failed: " + path);
}

Tensor load_tns(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path);
  return read_tns(in);
}

}  // namespace advlat
