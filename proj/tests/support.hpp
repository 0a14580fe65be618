#pragma once

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <functional>
#include <string>

#include "cbmir/cbmir.hpp"

namespace testing_support {

using namespace cbmir;

inline Tensor random_tensor(const Shape& shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
  Tensor t(shape);
  for (auto& v : t.values()) v = rng.uniform(lo, hi);
  return t;
}

inline double dot(const Tensor& a, const Tensor& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

inline double rel_error(double a, double b) {
  const double scale = std::max({std::abs(a), std::abs(b), 1e-7});
  return std::abs(a - b) / scale;
}

// Central difference of `f` with respect to `x`, step h.
inline double central_difference(const std::function<double()>& f, double& x, double h = 1e-3) {
  const double saved = x;
  x = saved + h;
  const double up = f();
  x = saved - h;
  const double down = f();
  x = saved;
  return (up - down) / (2 * h);
}

// Fresh empty directory under the system temp dir.
inline std::string scratch_dir(const std::string& name) {
  namespace fs = std::filesystem;
  const fs::path p = fs::temp_directory_path() / ("cbmir_test_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p.string();
}

// Small network: conv-relu-pool-conv-relu-fc-relu-fc-relu-fc-relu-fc-logsoftmax.
inline NetworkSpec tiny_spec(std::size_t classes = 3, double keep = 1.0) {
  NetworkSpec s;
  s.input_shape = {1, 9, 9};
  s.num_classes = classes;
  s.layers = {Conv{3, 3, 3, 1, 1}, ReLU{},         MaxPool{3, 2},     Conv{4, 3, 3, 1, 0}, ReLU{},
              FullyConnected{6},   ReLU{},         Dropout{keep},     FullyConnected{5},   ReLU{},
              Dropout{keep},       FullyConnected{5}, ReLU{},         FullyConnected{classes},
              LogSoftmax{classes}};
  s.validate();
  return s;
}

}  // namespace testing_support
