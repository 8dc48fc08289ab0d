#include "cecil/serialize.hpp"

#include <fstream>
#include <iomanip>
#include <istream>
#include <limits>
#include <ostream>

#include "cecil/errors.hpp"

namespace cecil::ad {

void save_tensors(std::ostream& out, std::span<const NamedTensor> tensors) {
  out << kTensorMagic << ' ' << kTensorFormatVersion << '\n';
  out << "count " << tensors.size() << '\n';
  out << std::setprecision(std::numeric_limits<double>::max_digits10);
  for (const NamedTensor& t : tensors) {
    const Matrix& m = *t.value;
    out << "tensor " << t.name << ' ' << m.rows() << ' ' << m.cols() << '\n';
    for (Eigen::Index r = 0; r < m.rows(); ++r) {
      for (Eigen::Index c = 0; c < m.cols(); ++c) out << (c ? " " : "") << m(r, c);
      out << '\n';
    }
  }
  if (!out) throw ConfigError("save_tensors: write failed");
}

void load_tensors(std::istream& in, std::span<const NamedTensor> tensors) {
  std::string magic;
  int version = 0;
  in >> magic >> version;
  if (magic != kTensorMagic) throw ConfigError("load_tensors: bad magic header '" + magic + "'");
  if (version != kTensorFormatVersion) {
    throw ConfigError("load_tensors: unsupported format version " + std::to_string(version));
  }
  std::string word;
  std::size_t count = 0;
  in >> word >> count;
  if (word != "count" || count != tensors.size()) {
    throw ConfigError("load_tensors: file holds " + std::to_string(count) + " tensors, model expects " +
                      std::to_string(tensors.size()));
  }
  for (const NamedTensor& t : tensors) {
    std::string name;
    Eigen::Index rows = 0;
    Eigen::Index cols = 0;
    in >> word >> name >> rows >> cols;
    if (word != "tensor" || name != t.name) {
      throw ConfigError("load_tensors: expected tensor '" + t.name + "', found '" + name + "'");
    }
    if (rows != t.value->rows() || cols != t.value->cols()) {
      throw ConfigError("load_tensors: shape mismatch for " + name);
    }
    Matrix& m = *t.value;
    for (Eigen::Index r = 0; r < rows; ++r) {
      for (Eigen::Index c = 0; c < cols; ++c) in >> m(r, c);
    }
    if (!in) throw ConfigError("load_tensors: truncated data in " + name);
  }
}

void save_tensors(const std::string& path, std::span<const NamedTensor> tensors) {
  std::ofstream out(path);
  if (!out) throw ConfigError("cannot open " + path + " for writing");
  save_tensors(out, tensors);
}

void load_tensors(const std::string& path, std::span<const NamedTensor> tensors) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open " + path);
  load_tensors(in, tensors);
}

}  // namespace cecil::ad
