#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "ndfsr/forest.hpp"

namespace ndfsr {

struct DesignMatrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> v;  // row-major

  double at(std::size_t i, std::size_t j) const { return v[i * cols + j]; }
  const double* row(std::size_t i) const { return &v[i * cols]; }
};

enum class SimFunction : std::uint8_t {
  MarsAdd,         // 5-dim, exponential + logistic + linear tail
  PowerAdd,        // 10-dim, additive as printed
  PowerAddCurved,  // 10-dim experimental variant, x_j raised to the power j
};

SimFunction parse_sim_function(const std::string& s);
const char* sim_function_name(SimFunction f);
std::size_t sim_function_dim(SimFunction f);

double marsadd(const double* x);         // x in [0,1]^5
double poweradd(const double* x);        // x in [0,1]^10
double poweradd_curved(const double* x); // x in [0,1]^10

struct SimulatedTask {
  SimFunction fn = SimFunction::MarsAdd;
  DesignMatrix design;  // fixed across replications
  double sigma2 = 1.0;

  static SimulatedTask make(SimFunction fn, std::size_t num_points, double sigma2,
                            std::uint64_t seed);
  double truth(std::size_t i) const;
};

class Regressor {
 public:
  virtual ~Regressor() = default;
  virtual std::vector<double> predict(const DesignMatrix& x) const = 0;
};

// fits a fresh model on (X, y); seed provides any internal randomness
using ModelFactory =
    std::function<std::unique_ptr<Regressor>(const DesignMatrix& x,
                                             const std::vector<double>& y,
                                             std::uint64_t seed)>;

struct DofEstimate {
  double dof = 0.0;
  std::size_t replications = 0;
  std::vector<double> per_point_cov;
};

// DoF = (1/sigma^2) * sum_i Cov(yhat_i, y_i): fixed design, resampled noise,
// unbiased (R-1) sample covariance over replications. Deterministic per seed.
DofEstimate estimate_dof(const SimulatedTask& task, const ModelFactory& factory,
                         std::size_t replications, std::uint64_t seed);

ModelFactory mean_model_factory();   // predicts the global mean of y
ModelFactory zero_model_factory();   // constant 0
ModelFactory least_squares_factory();  // all features + intercept

struct NdfRegressorOptions {
  ForestConfig forest;
  std::size_t epochs = 150;
  double learning_rate = 0.05;
};

// NDF adapted to scalar regression: leaf matrix with a single column, no
// row softmax, squared-error loss, trained full-batch by the usual optimizer.
ModelFactory ndf_regressor_factory(const NdfRegressorOptions& opts);

}  // namespace ndfsr
