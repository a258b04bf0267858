#pragma once

// Two-dimensional density grids, effective potentials, basin centers,
// geodesic barriers and binned flow fields.

#include <Eigen/Dense>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <ostream>
#include <string>
#include <utility>
#include <vector>

namespace loopdyn {

/// Cell (ix, iy) covers [x_min + ix*dx, x_min + (ix+1)*dx) and likewise in y.
struct GridSpec {
  double x_min = 0.0, x_max = 1.0, y_min = 0.0, y_max = 1.0;
  int nx = 100, ny = 100;

  double dx() const noexcept { return (x_max - x_min) / nx; }
  double dy() const noexcept { return (y_max - y_min) / ny; }
  /// Cell containing (x, y), or nothing when outside the bounds.
  std::optional<std::pair<int, int>> cell_of(double x, double y) const;
  Eigen::Vector2d center(int ix, int iy) const;
};

/// Bounds of the points padded by `pad` of the range on each side. A zero
/// range is widened to one unit so a single point still gets a grid.
GridSpec grid_for(const Eigen::MatrixXd& points, int nx, int ny, double pad = 0.05);
GridSpec grid_for(const std::vector<Eigen::MatrixXd>& point_sets, int nx, int ny, double pad = 0.05);

/// Histogram of mass fractions (sums to 1 over in-bound points) smoothed by a
/// separable Gaussian of `sigma` bins truncated at 4 sigma. Mass that would
/// leave the grid is dropped.
Eigen::MatrixXd density_grid(const Eigen::MatrixXd& points, const GridSpec& grid, double sigma);

struct PotentialGrid {
  GridSpec grid;
  Eigen::MatrixXd density;
  Eigen::MatrixXd potential;
  double epsilon = 0.0;
  double v_cap = 8.0;
  double smoothing_sigma = 0.0;
};

/// V = -log(rho + eps), eps = 0.1 * smallest positive rho, shifted to min 0 and capped.
Eigen::MatrixXd potential_from_density(const Eigen::MatrixXd& density, double v_cap = 8.0,
                                       double* epsilon_out = nullptr);

PotentialGrid build_potential(const Eigen::MatrixXd& points, const GridSpec& grid, double sigma, double v_cap = 8.0);

using Cell = std::pair<int, int>;

/// Strict minima over 8-neighbourhoods. A flat connected group of equal cells
/// counts when every cell bordering it is higher, and is represented by its
/// lowest (row, col). Sorted by depth, then (row, col); at most top_n kept.
std::vector<Cell> local_minima(const Eigen::MatrixXd& potential, int top_n);

struct Barrier {
  double v_star = 0.0;
  double path_cost = 0.0;
  std::vector<Cell> path;  // from .. to inclusive
};

/// Dijkstra on the 8-connected grid with step cost = V of the cell entered.
/// V* is the largest V on the returned path. Masked-out cells (mask false)
/// are impassable; Unreachable when no path exists.
Barrier geodesic_barrier(const Eigen::MatrixXd& potential, Cell from, Cell to,
                         const std::optional<Eigen::Matrix<bool, Eigen::Dynamic, Eigen::Dynamic>>& mask = {});

/// Mean V* over all pairs of the given centers; nothing with fewer than 2.
std::optional<double> mean_pairwise_barrier(const Eigen::MatrixXd& potential, const std::vector<Cell>& centers);

struct FlowField {
  GridSpec grid;
  Eigen::MatrixXd u;  // mean x displacement; 0 where empty
  Eigen::MatrixXd w;  // mean y displacement; 0 where empty
  Eigen::MatrixXi count;
  int outside = 0;  // steps whose start fell off the grid

  std::optional<Eigen::Vector2d> vector(int ix, int iy) const;
};

/// Each adjacent pair of rows in a trajectory (T x 2) adds its displacement
/// to the bin of its start point.
FlowField flow_field_bin(const std::vector<Eigen::MatrixXd>& trajectories, const GridSpec& grid);

/// Central-difference du/dx + dw/dy on occupied interior bins whose four axis
/// neighbours are occupied; nothing elsewhere. Indexed [ix * ny + iy].
std::vector<std::optional<double>> divergence_field(const FlowField& flow);

struct OrdinalSetting {
  double sigma = 2.0;
  int resolution = 100;
  int basins = 4;
};

/// 3 smoothing widths x 3 resolutions x 5 basin counts.
std::vector<OrdinalSetting> default_ordinal_grid();

struct OrdinalHarness {
  std::vector<std::string> conditions;
  std::vector<OrdinalSetting> settings;
  std::vector<std::vector<std::optional<double>>> v_star;  // [setting][condition]
  std::vector<bool> matches_expected;
  double fraction_matching = 0.0;
  std::vector<double> coefficient_of_variation;  // per condition, over settings with a value
};

/// Recomputes per-condition mean pairwise V* at every setting and checks the
/// strict descending order given by `expected_order` (highest first).
OrdinalHarness ordinal_stability(const std::vector<std::pair<std::string, Eigen::MatrixXd>>& conditions,
                                 const std::vector<std::string>& expected_order,
                                 const std::vector<OrdinalSetting>& settings = default_ordinal_grid(),
                                 double v_cap = 8.0);

/// Raw little-endian doubles (column-major) plus a JSON sidecar with the grid.
void save_potential(const PotentialGrid& grid, const std::filesystem::path& stem);
PotentialGrid load_potential(const std::filesystem::path& stem);

/// Deterministic SVG heat map of the potential with optional center markers.
void write_potential_svg(std::ostream& out, const PotentialGrid& grid, const std::vector<Cell>& centers = {},
                         int cell_px = 4);

}  // namespace loopdyn
