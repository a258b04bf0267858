#include "loopdyn/predictability.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <numeric>
#include <set>

#include "loopdyn/error.hpp"
#include "loopdyn/rng.hpp"

namespace loopdyn {

namespace {

// Row-wise softmax of logits, stabilized by the row max.
Eigen::MatrixXd softmax_rows(Eigen::MatrixXd logits) {
  for (Eigen::Index i = 0; i < logits.rows(); ++i) {
    logits.row(i).array() -= logits.row(i).maxCoeff();
    logits.row(i) = logits.row(i).array().exp().matrix();
    logits.row(i) /= logits.row(i).sum();
  }
  return logits;
}

struct Unpacked {
  Eigen::MatrixXd w;
  Eigen::VectorXd b;
};

Unpacked unpack(const Eigen::VectorXd& params, Eigen::Index classes, Eigen::Index k) {
  Unpacked u{Eigen::MatrixXd(classes, k), Eigen::VectorXd(classes)};
  for (Eigen::Index c = 0; c < classes; ++c) {
    u.w.row(c) = params.segment(c * (k + 1), k).transpose();
    u.b[c] = params[c * (k + 1) + k];
  }
  return u;
}

std::vector<int> rows_of(const std::vector<int>& idx, const std::vector<int>& fold, int f, bool in) {
  std::vector<int> out;
  for (std::size_t i = 0; i < idx.size(); ++i)
    if ((fold[i] == f) == in) out.push_back(idx[i]);
  return out;
}

Eigen::MatrixXd take_rows(const Eigen::MatrixXd& x, const std::vector<int>& rows) {
  Eigen::MatrixXd out(static_cast<Eigen::Index>(rows.size()), x.cols());
  for (std::size_t i = 0; i < rows.size(); ++i) out.row(static_cast<Eigen::Index>(i)) = x.row(rows[i]);
  return out;
}

// Classes with at least two members; records what was dropped.
FoldPlan drop_singletons(const std::vector<int>& y) {
  std::map<int, int> counts;
  for (int v : y) ++counts[v];
  FoldPlan plan;
  for (const auto& [label, n] : counts)
    if (n < 2) {
      ++plan.dropped_singletons;
      plan.dropped_trajectories += n;
    }
  for (std::size_t i = 0; i < y.size(); ++i)
    if (counts[y[i]] >= 2) plan.kept_rows.push_back(static_cast<int>(i));
  if (plan.kept_rows.empty() && !y.empty())
    fail(ErrorCode::AllSingleton, "every class is a singleton; nothing can be split");
  plan.missing = counts.size() - static_cast<std::size_t>(plan.dropped_singletons) < 2;
  return plan;
}

}  // namespace

Eigen::MatrixXd LogisticModel::probabilities(const Eigen::MatrixXd& x) const {
  if (classes.size() == 1) return Eigen::MatrixXd::Ones(x.rows(), 1);
  return softmax_rows((x * weights.transpose()).rowwise() + bias.transpose());
}

std::vector<int> LogisticModel::predict(const Eigen::MatrixXd& x) const {
  const Eigen::MatrixXd p = probabilities(x);
  std::vector<int> out(static_cast<std::size_t>(x.rows()));
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    Eigen::Index best = 0;
    p.row(i).maxCoeff(&best);
    out[static_cast<std::size_t>(i)] = classes[static_cast<std::size_t>(best)];
  }
  return out;
}

double logreg_objective(const Eigen::VectorXd& params, const Eigen::MatrixXd& x, const Eigen::MatrixXd& onehot,
                        double l2, Eigen::VectorXd* gradient) {
  const Eigen::Index n = x.rows(), k = x.cols(), classes = onehot.cols();
  const auto [w, b] = unpack(params, classes, k);
  Eigen::MatrixXd logits = (x * w.transpose()).rowwise() + b.transpose();
  double loss = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) {
    const double m = logits.row(i).maxCoeff();
    const double lse = m + std::log((logits.row(i).array() - m).exp().sum());
    loss += lse - logits.row(i).dot(onehot.row(i));
  }
  const double nn = static_cast<double>(n);
  const double value = loss / nn + 0.5 * l2 * w.squaredNorm();
  if (gradient) {
    const Eigen::MatrixXd resid = (softmax_rows(logits) - onehot) / nn;  // N x C
    const Eigen::MatrixXd gw = resid.transpose() * x + l2 * w;
    const Eigen::VectorXd gb = resid.colwise().sum().transpose();
    gradient->resize(params.size());
    for (Eigen::Index c = 0; c < classes; ++c) {
      gradient->segment(c * (k + 1), k) = gw.row(c).transpose();
      (*gradient)[c * (k + 1) + k] = gb[c];
    }
  }
  return value;
}

LogisticModel multinomial_logreg_fit(const Eigen::MatrixXd& x, const std::vector<int>& y, const LogregOptions& opt) {
  require(static_cast<std::size_t>(x.rows()) == y.size(), ErrorCode::RowMismatch, "X rows and labels differ");
  LogisticModel model;
  const std::set<int> distinct(y.begin(), y.end());
  model.classes.assign(distinct.begin(), distinct.end());
  require(model.classes.size() >= 2, ErrorCode::SingleClass, "logistic regression needs at least 2 classes");
  const Eigen::Index n = x.rows(), k = x.cols(), classes = static_cast<Eigen::Index>(model.classes.size());
  const Eigen::Index dim = classes * (k + 1);
  model.l2 = opt.l2.value_or(1.0 / static_cast<double>(n));

  Eigen::MatrixXd onehot = Eigen::MatrixXd::Zero(n, classes);
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto it = std::lower_bound(model.classes.begin(), model.classes.end(), y[static_cast<std::size_t>(i)]);
    onehot(i, it - model.classes.begin()) = 1.0;
  }
  Eigen::MatrixXd xa(n, k + 1);
  xa << x, Eigen::VectorXd::Ones(n);

  Eigen::VectorXd params = Eigen::VectorXd::Zero(dim);
  Eigen::VectorXd grad;
  double value = logreg_objective(params, x, onehot, model.l2, &grad);
  for (model.iterations = 0; model.iterations < opt.max_iter; ++model.iterations) {
    if (grad.norm() < opt.grad_tol) {
      model.converged = true;
      break;
    }
    const auto [w, b] = unpack(params, classes, k);
    const Eigen::MatrixXd p = softmax_rows((x * w.transpose()).rowwise() + b.transpose());
    Eigen::MatrixXd hess = Eigen::MatrixXd::Zero(dim, dim);
    for (Eigen::Index i = 0; i < n; ++i) {
      const Eigen::MatrixXd outer = xa.row(i).transpose() * xa.row(i);
      for (Eigen::Index c = 0; c < classes; ++c)
        for (Eigen::Index d = c; d < classes; ++d) {
          const double s = (c == d ? p(i, c) : 0.0) - p(i, c) * p(i, d);
          if (s == 0.0) continue;
          hess.block(c * (k + 1), d * (k + 1), k + 1, k + 1) += s * outer;
        }
    }
    for (Eigen::Index c = 0; c < classes; ++c)
      for (Eigen::Index d = c + 1; d < classes; ++d)
        hess.block(d * (k + 1), c * (k + 1), k + 1, k + 1) = hess.block(c * (k + 1), d * (k + 1), k + 1, k + 1);
    hess /= static_cast<double>(n);
    for (Eigen::Index c = 0; c < classes; ++c)
      for (Eigen::Index j = 0; j < k; ++j) hess(c * (k + 1) + j, c * (k + 1) + j) += model.l2;
    hess.diagonal().array() += 1e-8;  // the bias direction shared by all classes is flat

    Eigen::VectorXd step = -hess.ldlt().solve(grad);
    if (!step.allFinite() || step.dot(grad) >= 0.0) step = -grad;
    double t = 1.0;
    Eigen::VectorXd next_grad;
    double next = 0.0;
    for (int ls = 0; ls < 50; ++ls) {
      next = logreg_objective(params + t * step, x, onehot, model.l2, &next_grad);
      if (next <= value + 1e-4 * t * step.dot(grad)) break;
      t *= 0.5;
    }
    if (next > value) break;  // no descent possible at machine precision
    params += t * step;
    value = next;
    grad = next_grad;
  }
  model.grad_norm = grad.norm();
  model.converged = model.converged || model.grad_norm < opt.grad_tol;
  const auto [w, b] = unpack(params, classes, k);
  model.weights = w;
  model.bias = b;
  return model;
}

double accuracy(const std::vector<int>& predicted, const std::vector<int>& truth) {
  require(predicted.size() == truth.size() && !truth.empty(), ErrorCode::RowMismatch, "accuracy size mismatch");
  std::size_t hits = 0;
  for (std::size_t i = 0; i < truth.size(); ++i) hits += predicted[i] == truth[i];
  return static_cast<double>(hits) / static_cast<double>(truth.size());
}

std::string_view to_string(CvScheme scheme) noexcept {
  return scheme == CvScheme::Stratified ? "stratified" : "group_by_family";
}

FoldPlan stratified_folds(const std::vector<int>& y, std::uint64_t seed, int max_folds) {
  FoldPlan plan = drop_singletons(y);
  plan.fold.assign(plan.kept_rows.size(), 0);
  if (plan.missing) return plan;
  std::map<int, std::vector<int>> by_class;  // positions within kept_rows
  for (std::size_t i = 0; i < plan.kept_rows.size(); ++i)
    by_class[y[static_cast<std::size_t>(plan.kept_rows[i])]].push_back(static_cast<int>(i));
  int smallest = std::numeric_limits<int>::max();
  for (const auto& [label, members] : by_class) smallest = std::min(smallest, static_cast<int>(members.size()));
  plan.folds = std::min(max_folds, smallest);

  Rng rng(combine_seed(seed, "stratified_folds"));
  int next = 0;
  for (auto& [label, members] : by_class) {
    for (std::size_t i = members.size(); i > 1; --i) std::swap(members[i - 1], members[uniform_index(rng, i)]);
    for (int pos : members) {
      plan.fold[static_cast<std::size_t>(pos)] = next;
      next = (next + 1) % plan.folds;
    }
  }
  return plan;
}

FoldPlan group_folds(const std::vector<int>& y, const std::vector<std::string>& families, int max_folds) {
  require(y.size() == families.size(), ErrorCode::RowMismatch, "labels and family ids differ in length");
  FoldPlan plan = drop_singletons(y);
  std::map<std::string, std::vector<int>> by_family;
  for (std::size_t i = 0; i < plan.kept_rows.size(); ++i)
    by_family[families[static_cast<std::size_t>(plan.kept_rows[i])]].push_back(static_cast<int>(i));
  require(by_family.size() >= 2, ErrorCode::TooFewFamilies,
          "group folds need at least 2 families, got " + std::to_string(by_family.size()));
  plan.fold.assign(plan.kept_rows.size(), 0);
  if (plan.missing) return plan;
  plan.folds = std::min(max_folds, static_cast<int>(by_family.size()));

  std::vector<std::pair<std::string, std::vector<int>>> order(by_family.begin(), by_family.end());
  std::stable_sort(order.begin(), order.end(),
                   [](const auto& a, const auto& b) { return a.second.size() > b.second.size(); });
  std::vector<std::size_t> load(static_cast<std::size_t>(plan.folds), 0);
  for (const auto& [name, members] : order) {
    const auto f = static_cast<int>(std::min_element(load.begin(), load.end()) - load.begin());
    for (int pos : members) plan.fold[static_cast<std::size_t>(pos)] = f;
    load[static_cast<std::size_t>(f)] += members.size();
  }
  return plan;
}

std::optional<double> PredictabilityCurve::at(int step) const {
  const auto it = std::find(steps.begin(), steps.end(), step);
  if (it == steps.end()) return std::nullopt;
  return accuracy[static_cast<std::size_t>(it - steps.begin())];
}

std::optional<double> cv_accuracy(const Eigen::MatrixXd& x, const std::vector<int>& y, const FoldPlan& plan,
                                  const LogregOptions& opt) {
  if (plan.missing || plan.folds < 2) return std::nullopt;
  double total = 0.0;
  for (int f = 0; f < plan.folds; ++f) {
    const auto train = rows_of(plan.kept_rows, plan.fold, f, false);
    const auto test = rows_of(plan.kept_rows, plan.fold, f, true);
    std::vector<int> y_train, y_test;
    for (int r : train) y_train.push_back(y[static_cast<std::size_t>(r)]);
    for (int r : test) y_test.push_back(y[static_cast<std::size_t>(r)]);
    std::vector<int> predicted;
    if (std::set<int>(y_train.begin(), y_train.end()).size() == 1) {
      predicted.assign(y_test.size(), y_train.front());
    } else {
      predicted = multinomial_logreg_fit(take_rows(x, train), y_train, opt).predict(take_rows(x, test));
    }
    total += accuracy(predicted, y_test);
  }
  return total / plan.folds;
}

namespace {

PredictabilityCurve run_curve(CvScheme scheme, const FoldPlan& plan, const std::vector<Eigen::MatrixXd>& x_per_step,
                              const std::vector<int>& steps, const std::vector<int>& y, const LogregOptions& opt) {
  require(x_per_step.size() == steps.size(), ErrorCode::RowMismatch, "one matrix per step expected");
  PredictabilityCurve c;
  c.scheme = scheme;
  c.steps = steps;
  c.folds_used = plan.folds;
  c.dropped_singletons = plan.dropped_singletons;
  c.dropped_trajectories = plan.dropped_trajectories;
  for (const auto& x : x_per_step) {
    require(static_cast<std::size_t>(x.rows()) == y.size(), ErrorCode::RowMismatch, "step matrix rows != labels");
    c.accuracy.push_back(cv_accuracy(x, y, plan, opt));
  }
  return c;
}

}  // namespace

PredictabilityCurve stratified_cv_accuracy(const std::vector<Eigen::MatrixXd>& x_per_step,
                                           const std::vector<int>& steps, const std::vector<int>& y,
                                           std::uint64_t seed, const LogregOptions& opt) {
  return run_curve(CvScheme::Stratified, stratified_folds(y, seed), x_per_step, steps, y, opt);
}

PredictabilityCurve group_kfold_accuracy(const std::vector<Eigen::MatrixXd>& x_per_step, const std::vector<int>& steps,
                                         const std::vector<int>& y, const std::vector<std::string>& families,
                                         const LogregOptions& opt) {
  return run_curve(CvScheme::GroupByFamily, group_folds(y, families), x_per_step, steps, y, opt);
}

double leakage_delta(double stratified, double group) {
  require(stratified >= 0.0 && stratified <= 1.0 && group >= 0.0 && group <= 1.0, ErrorCode::BadParams,
          "accuracies must lie in [0, 1]");
  return stratified - group;
}

PredictabilityVerdict predictability_claim(const PredictabilityCurve& stratified, const PredictabilityCurve& group,
                                           int step) {
  PredictabilityVerdict v;
  v.step = step;
  v.acc_stratified = stratified.at(step);
  v.acc_group = group.at(step);
  if (v.acc_group) v.cross_family = *v.acc_group >= 0.70;
  if (v.acc_group && v.acc_stratified) {
    v.delta = leakage_delta(*v.acc_stratified, *v.acc_group);
    v.leakage_free = *v.delta < 0.10;
  }
  v.pass = v.cross_family && v.leakage_free;
  return v;
}

void write_curve_csv(std::ostream& out, const std::vector<PredictabilityCurve>& curves, bool header) {
  if (header) out << "step,scheme,accuracy,folds,dropped_singletons,missing\n";
  for (const auto& c : curves)
    for (std::size_t i = 0; i < c.steps.size(); ++i) {
      out << c.steps[i] << ',' << to_string(c.scheme) << ',';
      if (c.accuracy[i]) {
        out << *c.accuracy[i];
      } else {
        out << "null";
      }
      out << ',' << c.folds_used << ',' << c.dropped_singletons << ',' << (c.accuracy[i] ? 0 : 1) << '\n';
    }
}

}  // namespace loopdyn
