#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include "vmtune/core.hpp"
#include "vmtune/sensing.hpp"

namespace vmtune {

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Ridge state of one arm: A = lambda*I + sum x x^T, b = sum r x.
struct ArmModel {
  Eigen::MatrixXd A;
  Eigen::VectorXd b;
  Eigen::MatrixXd A_inv;
  std::uint64_t n_updates = 0;

  Eigen::VectorXd theta() const { return A_inv * b; }
};

struct ArmScore {
  double estimate = 0.0;
  double width = 0.0;
  double score = 0.0;
};

using ArmScores = std::array<ArmScore, Action::kCount>;

// Disjoint LinUCB over the nine allocation actions.
class LinUcbModel {
 public:
  static constexpr int kRefreshInterval = 256;

  LinUcbModel(int d, double alpha, double lambda, int layout_version = kLayoutVersion)
      : d_(d), alpha_(alpha), lambda_(lambda), layout_version_(layout_version) {
    if (d < 1) throw std::invalid_argument("LinUCB: dimension must be >= 1");
    if (!(lambda > 0.0)) throw std::invalid_argument("LinUCB: lambda must be > 0");
    if (!(alpha >= 0.0)) throw std::invalid_argument("LinUCB: alpha must be >= 0");
    for (auto& arm : arms_) {
      arm.A = lambda * Eigen::MatrixXd::Identity(d, d);
      arm.b = Eigen::VectorXd::Zero(d);
      arm.A_inv = (1.0 / lambda) * Eigen::MatrixXd::Identity(d, d);
    }
  }

  int dim() const { return d_; }
  double alpha() const { return alpha_; }
  double lambda() const { return lambda_; }
  int layout_version() const { return layout_version_; }
  std::uint64_t rounds() const { return rounds_; }
  void count_round() { ++rounds_; }

  const ArmModel& arm(Action a) const { return arms_[a.index()]; }
  const ArmModel& arm(int index) const { return arms_.at(index); }

  ArmScores predict(const ContextVector& x) const {
    check_dim(x);
    ArmScores out{};
    for (int i = 0; i < Action::kCount; ++i) {
      const auto& arm = arms_[i];
      const Eigen::VectorXd ainv_x = arm.A_inv * x;
      out[i].estimate = arm.b.dot(ainv_x);
      out[i].width = alpha_ * std::sqrt(std::max(0.0, x.dot(ainv_x)));
      out[i].score = out[i].estimate + out[i].width;
    }
    return out;
  }

  void learn(const ContextVector& x, Action a, double reward) {
    check_dim(x);
    if (!(reward >= 0.0 && reward <= 1.0))
      throw std::invalid_argument("LinUCB: reward must lie in [0, 1]");
    auto& arm = arms_[a.index()];
    arm.A.noalias() += x * x.transpose();
    arm.b.noalias() += reward * x;
    ++arm.n_updates;
    if (arm.n_updates % kRefreshInterval == 0) {
      arm.A_inv = arm.A.llt().solve(Eigen::MatrixXd::Identity(d_, d_));
    } else {
      // Sherman-Morrison rank-one update.
      const Eigen::VectorXd u = arm.A_inv * x;
      arm.A_inv.noalias() -= (u * u.transpose()) / (1.0 + x.dot(u));
    }
  }

  nlohmann::json to_json() const {
    nlohmann::json j;
    j["format"] = "vmtune.linucb";
    j["format_version"] = 1;
    j["layout_version"] = layout_version_;
    j["d"] = d_;
    j["alpha"] = alpha_;
    j["lambda"] = lambda_;
    j["rounds"] = rounds_;
    auto& arms = j["arms"] = nlohmann::json::array();
    for (int i = 0; i < Action::kCount; ++i) {
      const auto& arm = arms_[i];
      nlohmann::json ja;
      ja["action"] = Action::from_index(i).name();
      ja["n_updates"] = arm.n_updates;
      ja["A"] = row_major(arm.A);
      ja["A_inv"] = row_major(arm.A_inv);
      ja["b"] = std::vector<double>(arm.b.data(), arm.b.data() + arm.b.size());
      arms.push_back(std::move(ja));
    }
    return j;
  }

  // Rebuilds a model, refusing documents whose layout or dimension differ
  // from what the caller runs with.
  static LinUcbModel from_json(const nlohmann::json& j, int expected_d = kContextDim,
                               int expected_layout = kLayoutVersion) {
    try {
      if (j.at("format").get<std::string>() != "vmtune.linucb")
        throw CheckpointError("checkpoint: unrecognised format");
      if (j.at("format_version").get<int>() != 1)
        throw CheckpointError("checkpoint: unsupported format_version");
      const int layout = j.at("layout_version").get<int>();
      const int d = j.at("d").get<int>();
      if (layout != expected_layout)
        throw CheckpointError("checkpoint: layout_version " + std::to_string(layout) +
                              " does not match " + std::to_string(expected_layout));
      if (d != expected_d)
        throw CheckpointError("checkpoint: dimension " + std::to_string(d) + " does not match " +
                              std::to_string(expected_d));
      LinUcbModel m(d, j.at("alpha").get<double>(), j.at("lambda").get<double>(), layout);
      m.rounds_ = j.at("rounds").get<std::uint64_t>();
      const auto& arms = j.at("arms");
      if (!arms.is_array() || arms.size() != Action::kCount)
        throw CheckpointError("checkpoint: expected 9 arms");
      for (int i = 0; i < Action::kCount; ++i) {
        const auto& ja = arms[i];
        if (ja.at("action").get<std::string>() != Action::from_index(i).name())
          throw CheckpointError("checkpoint: arm " + std::to_string(i) + " out of order");
        auto& arm = m.arms_[i];
        arm.n_updates = ja.at("n_updates").get<std::uint64_t>();
        arm.A = matrix_from(ja.at("A"), d);
        arm.A_inv = matrix_from(ja.at("A_inv"), d);
        const auto b = ja.at("b").get<std::vector<double>>();
        if (static_cast<int>(b.size()) != d) throw CheckpointError("checkpoint: bad b length");
        arm.b = Eigen::Map<const Eigen::VectorXd>(b.data(), d);
      }
      return m;
    } catch (const nlohmann::json::exception& e) {
      throw CheckpointError(std::string("checkpoint: malformed document: ") + e.what());
    } catch (const std::invalid_argument& e) {
      throw CheckpointError(std::string("checkpoint: ") + e.what());
    }
  }

 private:
  void check_dim(const ContextVector& x) const {
    if (x.size() != d_)
      throw std::invalid_argument("LinUCB: context has dimension " + std::to_string(x.size()) +
                                  ", model expects " + std::to_string(d_));
  }

  static std::vector<double> row_major(const Eigen::MatrixXd& m) {
    std::vector<double> v;
    v.reserve(static_cast<std::size_t>(m.size()));
    for (Eigen::Index r = 0; r < m.rows(); ++r)
      for (Eigen::Index c = 0; c < m.cols(); ++c) v.push_back(m(r, c));
    return v;
  }

  static Eigen::MatrixXd matrix_from(const nlohmann::json& j, int d) {
    const auto v = j.get<std::vector<double>>();
    if (static_cast<int>(v.size()) != d * d) throw CheckpointError("checkpoint: bad matrix size");
    Eigen::MatrixXd m(d, d);
    for (int r = 0; r < d; ++r)
      for (int c = 0; c < d; ++c) m(r, c) = v[static_cast<std::size_t>(r * d + c)];
    return m;
  }

  int d_;
  double alpha_;
  double lambda_;
  int layout_version_;
  std::uint64_t rounds_ = 0;
  std::array<ArmModel, Action::kCount> arms_;
};

inline int argmax_score(const ArmScores& scores) {
  int best = 0;
  for (int i = 1; i < Action::kCount; ++i)
    if (scores[i].score > scores[best].score) best = i;
  return best;
}

inline void save_checkpoint(const LinUcbModel& m, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw CheckpointError("cannot write checkpoint '" + path + "'");
  out << m.to_json().dump(1) << '\n';
  if (!out) throw CheckpointError("failed writing checkpoint '" + path + "'");
}

inline LinUcbModel load_checkpoint(const std::string& path, int expected_d = kContextDim,
                                   int expected_layout = kLayoutVersion) {
  std::ifstream in(path);
  if (!in) throw CheckpointError("cannot read checkpoint '" + path + "'");
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw CheckpointError("checkpoint '" + path + "' is not valid JSON: " + e.what());
  }
  return LinUcbModel::from_json(j, expected_d, expected_layout);
}

}  // namespace vmtune
