#pragma once

// Linear probe from early projected state to the late-window basin, under
// stratified and family-held-out cross-validation.

#include <cstdint>
#include <optional>
#include <ostream>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>

namespace loopdyn {

struct LogregOptions {
  int max_iter = 1000;
  double grad_tol = 1e-6;
  std::optional<double> l2;  // default 1/N
};

/// Softmax model with per-class weights and biases. Classes are the sorted
/// distinct training labels.
struct LogisticModel {
  std::vector<int> classes;
  Eigen::MatrixXd weights;  // C x k
  Eigen::VectorXd bias;     // C
  double l2 = 0.0;
  int iterations = 0;
  bool converged = false;
  double grad_norm = 0.0;

  Eigen::MatrixXd probabilities(const Eigen::MatrixXd& x) const;
  std::vector<int> predict(const Eigen::MatrixXd& x) const;
};

/// Mean cross-entropy plus (l2/2)|W|^2 and its gradient. Parameters are laid
/// out class-major, each class holding k weights then its bias. `onehot` is N x C.
double logreg_objective(const Eigen::VectorXd& params, const Eigen::MatrixXd& x, const Eigen::MatrixXd& onehot,
                        double l2, Eigen::VectorXd* gradient = nullptr);

/// Damped Newton with backtracking. Throws SingleClass for fewer than 2 classes.
LogisticModel multinomial_logreg_fit(const Eigen::MatrixXd& x, const std::vector<int>& y,
                                     const LogregOptions& opt = {});

double accuracy(const std::vector<int>& predicted, const std::vector<int>& truth);

enum class CvScheme { Stratified, GroupByFamily };
std::string_view to_string(CvScheme scheme) noexcept;

struct FoldPlan {
  std::vector<int> kept_rows;  // indices into the original rows
  std::vector<int> fold;       // fold id per kept row
  int folds = 0;
  int dropped_singletons = 0;    // classes
  int dropped_trajectories = 0;  // rows
  bool missing = false;          // fewer than 2 classes after the drop
};

/// Drops singleton classes, then deals each class round-robin over
/// min(5, smallest class size) folds after a seeded shuffle.
FoldPlan stratified_folds(const std::vector<int>& y, std::uint64_t seed, int max_folds = 5);

/// min(max_folds, #families) folds; largest family first onto the lightest fold.
/// Singleton classes are dropped as in the stratified plan so both schemes score the same rows.
FoldPlan group_folds(const std::vector<int>& y, const std::vector<std::string>& families, int max_folds = 5);

struct PredictabilityCurve {
  CvScheme scheme = CvScheme::Stratified;
  std::vector<int> steps;
  std::vector<std::optional<double>> accuracy;
  int folds_used = 0;
  int dropped_singletons = 0;
  int dropped_trajectories = 0;

  std::optional<double> at(int step) const;
};

/// Fold-mean accuracy of a probe trained on the rows of `x` (one row per trajectory).
std::optional<double> cv_accuracy(const Eigen::MatrixXd& x, const std::vector<int>& y, const FoldPlan& plan,
                                  const LogregOptions& opt = {});

/// x_per_step[i] holds one row per trajectory at steps[i].
PredictabilityCurve stratified_cv_accuracy(const std::vector<Eigen::MatrixXd>& x_per_step,
                                           const std::vector<int>& steps, const std::vector<int>& y,
                                           std::uint64_t seed, const LogregOptions& opt = {});

PredictabilityCurve group_kfold_accuracy(const std::vector<Eigen::MatrixXd>& x_per_step, const std::vector<int>& steps,
                                         const std::vector<int>& y, const std::vector<std::string>& families,
                                         const LogregOptions& opt = {});

double leakage_delta(double stratified, double group);

struct PredictabilityVerdict {
  int step = 10;
  std::optional<double> acc_stratified;
  std::optional<double> acc_group;
  std::optional<double> delta;
  bool cross_family = false;  // acc_group >= 0.70
  bool leakage_free = false;  // delta < 0.10
  bool pass = false;          // both
};

PredictabilityVerdict predictability_claim(const PredictabilityCurve& stratified, const PredictabilityCurve& group,
                                           int step = 10);

/// Columns: step,scheme,accuracy,folds,dropped_singletons,missing. Missing cells write "null".
void write_curve_csv(std::ostream& out, const std::vector<PredictabilityCurve>& curves, bool header = true);

}  // namespace loopdyn
