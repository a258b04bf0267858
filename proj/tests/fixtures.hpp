#pragma once

// Synthetic constructions shared by the unit tests and the acceptance gate.

#include <string>
#include <vector>

#include <Eigen/Dense>

#include "loopdyn/rng.hpp"

namespace fixtures {

struct ProbeData {
  std::vector<Eigen::MatrixXd> x_per_step;
  std::vector<int> steps;
  std::vector<int> y;
  std::vector<std::string> families;
};

/// Families sit at random offsets in a 10-d space and each favors a home
/// class; the class itself carries only a weak shared direction. A probe can
/// score well by recognizing the family, which held-out families defeat.
inline ProbeData family_offset_probe(std::uint64_t seed, int families = 6, int per_family = 30, int n_steps = 12,
                                     double home_rate = 0.8, int classes = 3) {
  loopdyn::Rng rng(seed);
  const int dim = 10;
  ProbeData d;
  std::vector<Eigen::VectorXd> offset(static_cast<std::size_t>(families));
  for (auto& o : offset) {
    o.resize(dim);
    for (int j = 0; j < dim; ++j) o[j] = 3.0 * loopdyn::standard_normal(rng);
  }
  std::vector<Eigen::VectorXd> class_dir(static_cast<std::size_t>(classes), Eigen::VectorXd::Zero(dim));
  for (int c = 0; c < classes; ++c) class_dir[static_cast<std::size_t>(c)][c] = 0.3;
  for (int f = 0; f < families; ++f)
    for (int i = 0; i < per_family; ++i) {
      const int home = f % classes;
      int label = home;
      if (loopdyn::uniform01(rng) >= home_rate)
        label = (home + 1 + static_cast<int>(loopdyn::uniform_index(rng, static_cast<std::size_t>(classes - 1)))) % classes;
      d.y.push_back(label);
      d.families.push_back("family" + std::to_string(f));
    }
  const auto n = static_cast<Eigen::Index>(d.y.size());
  for (int s = 0; s < n_steps; ++s) {
    Eigen::MatrixXd x(n, dim);
    for (Eigen::Index r = 0; r < n; ++r) {
      const int f = static_cast<int>(r) / per_family;
      for (int j = 0; j < dim; ++j) x(r, j) = offset[static_cast<std::size_t>(f)][j] + 0.5 * loopdyn::standard_normal(rng);
      x.row(r) += class_dir[static_cast<std::size_t>(d.y[static_cast<std::size_t>(r)])].transpose();
    }
    d.x_per_step.push_back(x);
    d.steps.push_back(s);
  }
  return d;
}

}  // namespace fixtures

#include "loopdyn/loop.hpp"
#include "loopdyn/partition.hpp"

namespace fixtures {

/// A/B/Z units whose cluster labels are given directly.
struct LabeledBatch {
  std::vector<loopdyn::PairedUnit> units;
  loopdyn::BasinPartition partition;
  int steps = 30;

  loopdyn::Trajectory blank(const std::string& id, const std::string& arm) const {
    loopdyn::Trajectory t;
    t.id = id;
    t.arm = arm;
    t.config.steps = steps;
    for (int s = 0; s < steps; ++s) {
      loopdyn::StepRecord r;
      r.step = s;
      t.steps.push_back(r);
    }
    return t;
  }

  void add(const std::string& condition, std::optional<int> dose, std::vector<int> a, std::vector<int> b,
           std::vector<int> z, const std::string& family = "fam", int inj_step = 15) {
    const auto idx = std::to_string(units.size());
    loopdyn::PairedUnit u;
    u.family = family;
    u.ic = "ic" + idx;
    u.condition = condition;
    u.dose = dose;
    u.a = blank(family + "/" + idx + "/A", "A");
    u.b = blank(family + "/" + idx + "/B", "B");
    u.z = blank(family + "/" + idx + "/Z/" + condition, "Z");
    if (condition != "control") u.injection = loopdyn::InjectionSpec{inj_step, loopdyn::InjectionMode::Overwrite, "text"};
    partition.labels[u.a->id] = std::move(a);
    partition.labels[u.b->id] = std::move(b);
    partition.labels[u.z->id] = std::move(z);
    units.push_back(std::move(u));
  }
};

/// Treatment path: `pre` through t_inj-1, `post` from t_inj on, `term` at the last step.
inline std::vector<int> path(int steps, int t_inj, int pre, int post, int term) {
  std::vector<int> v(static_cast<std::size_t>(steps), pre);
  for (int t = t_inj; t < steps; ++t) v[static_cast<std::size_t>(t)] = post;
  v.back() = term;
  return v;
}

/// The reference dose-400 decomposition: 200 units, 69 jumped, of which 32
/// stayed in the post-injection cluster, 13 returned and 24 ended elsewhere.
inline LabeledBatch dose400_decomposition() {
  LabeledBatch b;
  const int T = 30, t_inj = 15;
  auto control = [&](int terminal) { return path(T, t_inj, 1, 1, terminal); };
  int i = 0;
  auto add = [&](int n, int post, int term) {
    for (int k = 0; k < n; ++k, ++i) b.add("adversarial", 400, control(1), control(i % 3 == 0 ? 4 : 1), path(T, t_inj, 1, post, term));
  };
  add(32, 2, 2);   // persisted
  add(13, 2, 1);   // returned
  add(24, 2, 3);   // elsewhere
  add(131, 1, 1);  // never jumped
  return b;
}

}  // namespace fixtures
