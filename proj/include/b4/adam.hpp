#pragma once

#include <cmath>
#include <cstdint>
#include <deque>
#include <map>
#include <random>
#include <string>
#include <vector>

#include "b4/autodiff.hpp"

namespace b4 {

/// Named, ordered collection of trainable parameters. Addresses are stable
/// (deque storage) so tapes may hold Parameter pointers across insertions.
class ParamStore {
 public:
  Parameter& add(const std::string& name, Tensor init) {
    if (index_.count(name)) throw InternalError("duplicate parameter name " + name);
    params_.emplace_back(name, std::move(init));
    index_[name] = params_.size() - 1;
    return params_.back();
  }

  Parameter& get(const std::string& name) {
    auto it = index_.find(name);
    if (it == index_.end()) throw InternalError("unknown parameter " + name);
    return params_[it->second];
  }
  const Parameter& get(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw InternalError("unknown parameter " + name);
    return params_[it->second];
  }
  bool contains(const std::string& name) const { return index_.count(name) != 0; }

  std::deque<Parameter>& all() noexcept { return params_; }
  const std::deque<Parameter>& all() const noexcept { return params_; }

  void zero_grad() {
    for (Parameter& p : params_) p.zero_grad();
  }

  std::size_t scalar_count() const {
    std::size_t n = 0;
    for (const Parameter& p : params_) n += p.value.size();
    return n;
  }

 private:
  std::deque<Parameter> params_;
  std::map<std::string, std::size_t> index_;
};

struct AdamConfig {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

/// Adam with bias-corrected moments. Moments are keyed by position in the
/// ParamStore, so the store must not change between steps.
class Adam {
 public:
  explicit Adam(AdamConfig cfg = {}) : cfg_(cfg) { validate(cfg_); }

  static void validate(const AdamConfig& cfg) {
    if (!(cfg.learning_rate > 0.0)) throw ConfigError("training.learning_rate must be > 0");
    if (!(cfg.beta1 >= 0.0 && cfg.beta1 < 1.0)) throw ConfigError("adam beta1 must be in [0,1)");
    if (!(cfg.beta2 >= 0.0 && cfg.beta2 < 1.0)) throw ConfigError("adam beta2 must be in [0,1)");
    if (!(cfg.epsilon > 0.0)) throw ConfigError("adam epsilon must be > 0");
  }

  const AdamConfig& config() const noexcept { return cfg_; }
  std::uint64_t step_count() const noexcept { return step_; }

  void step(ParamStore& store) {
    auto& params = store.all();
    if (first_.empty()) {
      for (const Parameter& p : params) {
        first_.emplace_back(p.value.shape());
        second_.emplace_back(p.value.shape());
      }
    }
    if (first_.size() != params.size()) throw InternalError("adam: parameter set changed between steps");
    ++step_;
    const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(step_));
    const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(step_));
    for (std::size_t k = 0; k < params.size(); ++k) {
      auto theta = params[k].value.data();
      auto g = params[k].grad.data();
      auto m = first_[k].data();
      auto v = second_[k].data();
      for (std::size_t i = 0; i < theta.size(); ++i) {
        m[i] = cfg_.beta1 * m[i] + (1.0 - cfg_.beta1) * g[i];
        v[i] = cfg_.beta2 * v[i] + (1.0 - cfg_.beta2) * g[i] * g[i];
        const double mhat = m[i] / bc1;
        const double vhat = v[i] / bc2;
        theta[i] -= cfg_.learning_rate * mhat / (std::sqrt(vhat) + cfg_.epsilon);
      }
    }
  }

  const std::vector<Tensor>& first_moments() const noexcept { return first_; }
  const std::vector<Tensor>& second_moments() const noexcept { return second_; }

 private:
  AdamConfig cfg_;
  std::uint64_t step_ = 0;
  std::vector<Tensor> first_;
  std::vector<Tensor> second_;
};

/// Draws every entry from N(0, stddev²) using the given engine.
inline Tensor normal_tensor(Shape shape, double stddev, std::mt19937_64& rng) {
  Tensor t(std::move(shape));
  std::normal_distribution<double> dist(0.0, stddev);
  for (double& v : t.data()) v = dist(rng);
  return t;
}

}  // namespace b4
