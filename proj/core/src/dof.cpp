#include "ndfsr/dof.hpp"

#include <cmath>
#include <stdexcept>

#include "ndfsr/pipeline.hpp"

namespace ndfsr {

SimFunction parse_sim_function(const std::string& s) {
  if (s == "marsadd") return SimFunction::MarsAdd;
  if (s == "poweradd") return SimFunction::PowerAdd;
  if (s == "poweradd-curved") return SimFunction::PowerAddCurved;
  throw std::invalid_argument("unknown simulated function '" + s +
                              "' (want marsadd|poweradd|poweradd-curved)");
}

const char* sim_function_name(SimFunction f) {
  switch (f) {
    case SimFunction::MarsAdd: return "marsadd";
    case SimFunction::PowerAdd: return "poweradd";
    case SimFunction::PowerAddCurved: return "poweradd-curved";
  }
  return "?";
}

std::size_t sim_function_dim(SimFunction f) {
  return f == SimFunction::MarsAdd ? 5 : 10;
}

double marsadd(const double* x) {
  return 0.1 * std::exp(4.0 * x[0]) + 4.0 / (1.0 + std::exp(-20.0 * (x[1] - 0.5))) +
         3.0 * x[2] + 2.0 * x[3] + x[4];
}

double poweradd(const double* x) {
  double s = 0.0;
  for (int j = 0; j < 10; ++j) s += x[j];
  return s;
}

double poweradd_curved(const double* x) {
  double s = 0.0;
  for (int j = 0; j < 10; ++j) s += std::pow(x[j], static_cast<double>(j + 1));
  return s;
}

SimulatedTask SimulatedTask::make(SimFunction fn, std::size_t num_points, double sigma2,
                                  std::uint64_t seed) {
  SimulatedTask t;
  t.fn = fn;
  t.sigma2 = sigma2;
  t.design.rows = num_points;
  t.design.cols = sim_function_dim(fn);
  t.design.v.resize(num_points * t.design.cols);
  Rng rng(derive_seed(seed, "dof-design"));
  for (auto& x : t.design.v) x = rng.uniform01();
  return t;
}

double SimulatedTask::truth(std::size_t i) const {
  const double* x = design.row(i);
  switch (fn) {
    case SimFunction::MarsAdd: return marsadd(x);
    case SimFunction::PowerAdd: return poweradd(x);
    case SimFunction::PowerAddCurved: return poweradd_curved(x);
  }
  return 0.0;
}

DofEstimate estimate_dof(const SimulatedTask& task, const ModelFactory& factory,
                         std::size_t replications, std::uint64_t seed) {
  if (replications < 2) throw std::invalid_argument("estimate-dof: need R >= 2");
  std::size_t m = task.design.rows;
  std::vector<double> truth(m);
  for (std::size_t i = 0; i < m; ++i) truth[i] = task.truth(i);

  std::vector<std::vector<double>> ys, yhats;
  ys.reserve(replications);
  yhats.reserve(replications);
  double sd = std::sqrt(task.sigma2);
  for (std::size_t r = 0; r < replications; ++r) {
    Rng rng(derive_seed(derive_seed(seed, "dof-noise"), r));
    std::vector<double> y(m);
    for (std::size_t i = 0; i < m; ++i) y[i] = truth[i] + rng.normal(0.0, sd);
    std::unique_ptr<Regressor> model;
    try {
      model = factory(task.design, y, derive_seed(seed, r));
    } catch (const std::exception& e) {
      throw std::runtime_error("estimate-dof: model fit failed in replication " +
                               std::to_string(r) + ": " + e.what());
    }
    yhats.push_back(model->predict(task.design));
    ys.push_back(std::move(y));
  }

  DofEstimate est;
  est.replications = replications;
  est.per_point_cov.resize(m);
  double total = 0.0;
  double rinv = 1.0 / static_cast<double>(replications);
  for (std::size_t i = 0; i < m; ++i) {
    double my = 0.0, myh = 0.0;
    for (std::size_t r = 0; r < replications; ++r) {
      my += ys[r][i];
      myh += yhats[r][i];
    }
    my *= rinv;
    myh *= rinv;
    double cov = 0.0;
    for (std::size_t r = 0; r < replications; ++r)
      cov += (ys[r][i] - my) * (yhats[r][i] - myh);
    cov /= static_cast<double>(replications - 1);
    est.per_point_cov[i] = cov;
    total += cov;
  }
  est.dof = total / task.sigma2;
  return est;
}

namespace {

class ConstantRegressor : public Regressor {
 public:
  explicit ConstantRegressor(double c) : c_(c) {}
  std::vector<double> predict(const DesignMatrix& x) const override {
    return std::vector<double>(x.rows, c_);
  }

 private:
  double c_;
};

class LinearRegressor : public Regressor {
 public:
  explicit LinearRegressor(std::vector<double> beta) : beta_(std::move(beta)) {}
  std::vector<double> predict(const DesignMatrix& x) const override {
    std::vector<double> out(x.rows);
    for (std::size_t i = 0; i < x.rows; ++i) {
      double s = beta_.back();  // intercept last
      for (std::size_t j = 0; j < x.cols; ++j) s += beta_[j] * x.at(i, j);
      out[i] = s;
    }
    return out;
  }

 private:
  std::vector<double> beta_;
};

// solve A b = rhs in place, partial pivoting; A is p x p row-major
std::vector<double> solve_linear(std::vector<double> a, std::vector<double> rhs,
                                 std::size_t p) {
  for (std::size_t col = 0; col < p; ++col) {
    std::size_t piv = col;
    for (std::size_t r = col + 1; r < p; ++r)
      if (std::abs(a[r * p + col]) > std::abs(a[piv * p + col])) piv = r;
    if (a[piv * p + col] == 0.0) throw std::runtime_error("least-squares: singular system");
    if (piv != col) {
      for (std::size_t j = 0; j < p; ++j) std::swap(a[piv * p + j], a[col * p + j]);
      std::swap(rhs[piv], rhs[col]);
    }
    double d = a[col * p + col];
    for (std::size_t r = col + 1; r < p; ++r) {
      double f = a[r * p + col] / d;
      if (f == 0.0) continue;
      for (std::size_t j = col; j < p; ++j) a[r * p + j] -= f * a[col * p + j];
      rhs[r] -= f * rhs[col];
    }
  }
  std::vector<double> out(p);
  for (std::size_t ri = p; ri-- > 0;) {
    double s = rhs[ri];
    for (std::size_t j = ri + 1; j < p; ++j) s -= a[ri * p + j] * out[j];
    out[ri] = s / a[ri * p + ri];
  }
  return out;
}

class NdfRegressor : public Regressor {
 public:
  NdfRegressor(const NdfRegressorOptions& opts, const DesignMatrix& x,
               const std::vector<double>& y, std::uint64_t seed) {
    ForestConfig fc = opts.forest;
    fc.seed = seed;
    Rng init_rng(derive_seed(seed, "dof-forest-init"));
    forest_ = std::make_unique<Forest>(fc, x.cols, 1, /*softmax_leaves=*/false, init_rng);

    Tensor design = Tensor::leaf({x.rows, x.cols}, x.v);
    Tensor target = Tensor::leaf({x.rows}, y);
    auto params = forest_->parameters();
    Adam opt(opts.learning_rate);
    Rng prune_rng(derive_seed(seed, "dof-prune"));
    for (std::size_t e = 0; e < opts.epochs; ++e) {
      Graph g;
      Tensor pred = g.reshape(forest_->predict(g, design, /*training=*/true, &prune_rng),
                              {x.rows});
      Tensor diff = g.add(pred, g.scalar_mul(target, -1.0));
      Tensor loss = g.mean_axis(g.mul(diff, diff), 0);
      if (!std::isfinite(loss.value()))
        throw std::runtime_error("ndf-regressor: non-finite loss at epoch " +
                                 std::to_string(e));
      Optimizer::zero_grads(params);
      g.backward(loss);
      opt.step(params);
    }
  }

  std::vector<double> predict(const DesignMatrix& x) const override {
    Graph g;
    Tensor design = Tensor::leaf({x.rows, x.cols}, x.v);
    Tensor pred = forest_->predict(g, design, /*training=*/false, nullptr);
    return pred.values();
  }

 private:
  std::unique_ptr<Forest> forest_;
};

}  // namespace

ModelFactory mean_model_factory() {
  return [](const DesignMatrix&, const std::vector<double>& y, std::uint64_t) {
    double s = 0.0;
    for (double v : y) s += v;
    return std::make_unique<ConstantRegressor>(y.empty() ? 0.0 : s / y.size());
  };
}

ModelFactory zero_model_factory() {
  return [](const DesignMatrix&, const std::vector<double>&, std::uint64_t) {
    return std::make_unique<ConstantRegressor>(0.0);
  };
}

ModelFactory least_squares_factory() {
  return [](const DesignMatrix& x, const std::vector<double>& y, std::uint64_t) {
    std::size_t p = x.cols + 1;  // features + intercept
    std::vector<double> xtx(p * p, 0.0), xty(p, 0.0);
    for (std::size_t i = 0; i < x.rows; ++i) {
      // augmented row (x_i, 1)
      for (std::size_t a = 0; a < p; ++a) {
        double xa = a < x.cols ? x.at(i, a) : 1.0;
        xty[a] += xa * y[i];
        for (std::size_t b = 0; b < p; ++b) {
          double xb = b < x.cols ? x.at(i, b) : 1.0;
          xtx[a * p + b] += xa * xb;
        }
      }
    }
    return std::make_unique<LinearRegressor>(solve_linear(std::move(xtx), std::move(xty), p));
  };
}

ModelFactory ndf_regressor_factory(const NdfRegressorOptions& opts) {
  opts.forest.validate();
  return [opts](const DesignMatrix& x, const std::vector<double>& y, std::uint64_t seed) {
    return std::make_unique<NdfRegressor>(opts, x, y, seed);
  };
}

}  // namespace ndfsr
