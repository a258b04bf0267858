#include "loopdyn/landscape.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <limits>
#include <nlohmann/json.hpp>
#include <queue>

#include "loopdyn/error.hpp"

namespace loopdyn {

namespace {

constexpr int kDx[8] = {-1, -1, -1, 0, 0, 1, 1, 1};
constexpr int kDy[8] = {-1, 0, 1, -1, 1, -1, 0, 1};

std::vector<double> gaussian_kernel(double sigma) {
  if (sigma <= 0.0) return {1.0};
  const int radius = static_cast<int>(std::ceil(4.0 * sigma));
  std::vector<double> k(static_cast<std::size_t>(2 * radius + 1));
  double total = 0.0;
  for (int i = -radius; i <= radius; ++i) total += k[static_cast<std::size_t>(i + radius)] = std::exp(-0.5 * i * i / (sigma * sigma));
  for (auto& v : k) v /= total;
  return k;
}

Eigen::MatrixXd convolve_rows(const Eigen::MatrixXd& m, const std::vector<double>& k) {
  const int radius = static_cast<int>(k.size() / 2);
  Eigen::MatrixXd out = Eigen::MatrixXd::Zero(m.rows(), m.cols());
  for (Eigen::Index i = 0; i < m.rows(); ++i)
    for (Eigen::Index j = 0; j < m.cols(); ++j) {
      if (m(i, j) == 0.0) continue;
      for (int o = -radius; o <= radius; ++o) {
        const Eigen::Index t = i + o;
        if (t >= 0 && t < m.rows()) out(t, j) += m(i, j) * k[static_cast<std::size_t>(o + radius)];
      }
    }
  return out;
}

}  // namespace

std::optional<std::pair<int, int>> GridSpec::cell_of(double x, double y) const {
  if (!(x >= x_min && x <= x_max && y >= y_min && y <= y_max)) return std::nullopt;
  const int ix = std::min(nx - 1, static_cast<int>(std::floor((x - x_min) / dx())));
  const int iy = std::min(ny - 1, static_cast<int>(std::floor((y - y_min) / dy())));
  return std::pair{ix, iy};
}

Eigen::Vector2d GridSpec::center(int ix, int iy) const {
  return {x_min + (ix + 0.5) * dx(), y_min + (iy + 0.5) * dy()};
}

GridSpec grid_for(const std::vector<Eigen::MatrixXd>& point_sets, int nx, int ny, double pad) {
  require(nx >= 1 && ny >= 1, ErrorCode::BadParams, "grid resolution must be positive");
  double lo[2] = {std::numeric_limits<double>::infinity(), std::numeric_limits<double>::infinity()};
  double hi[2] = {-lo[0], -lo[1]};
  bool any = false;
  for (const auto& p : point_sets) {
    require(p.cols() == 2, ErrorCode::DimMismatch, "landscape points must be N x 2");
    for (Eigen::Index i = 0; i < p.rows(); ++i)
      for (int c = 0; c < 2; ++c) {
        lo[c] = std::min(lo[c], p(i, c));
        hi[c] = std::max(hi[c], p(i, c));
        any = true;
      }
  }
  require(any, ErrorCode::TooFewPoints, "landscape needs at least one point");
  GridSpec g;
  g.nx = nx;
  g.ny = ny;
  double* mins[2] = {&g.x_min, &g.y_min};
  double* maxs[2] = {&g.x_max, &g.y_max};
  for (int c = 0; c < 2; ++c) {
    double range = hi[c] - lo[c];
    double mid = 0.5 * (hi[c] + lo[c]);
    if (range <= 0.0) range = 1.0;
    *mins[c] = mid - range * (0.5 + pad);
    *maxs[c] = mid + range * (0.5 + pad);
  }
  return g;
}

GridSpec grid_for(const Eigen::MatrixXd& points, int nx, int ny, double pad) {
  return grid_for(std::vector<Eigen::MatrixXd>{points}, nx, ny, pad);
}

Eigen::MatrixXd density_grid(const Eigen::MatrixXd& points, const GridSpec& grid, double sigma) {
  require(points.rows() >= 1, ErrorCode::TooFewPoints, "density needs at least one point");
  require(points.cols() == 2, ErrorCode::DimMismatch, "landscape points must be N x 2");
  Eigen::MatrixXd h = Eigen::MatrixXd::Zero(grid.nx, grid.ny);
  int inside = 0;
  for (Eigen::Index i = 0; i < points.rows(); ++i)
    if (auto c = grid.cell_of(points(i, 0), points(i, 1))) {
      h(c->first, c->second) += 1.0;
      ++inside;
    }
  require(inside > 0, ErrorCode::TooFewPoints, "no point falls on the grid");
  h /= inside;
  const auto k = gaussian_kernel(sigma);
  return convolve_rows(convolve_rows(h, k).transpose(), k).transpose();
}

Eigen::MatrixXd potential_from_density(const Eigen::MatrixXd& density, double v_cap, double* epsilon_out) {
  require(v_cap > 0.0, ErrorCode::BadParams, "v_cap must be positive");
  require((density.array() >= 0.0).all(), ErrorCode::BadParams, "density must be non-negative");
  double min_pos = std::numeric_limits<double>::infinity();
  for (Eigen::Index i = 0; i < density.size(); ++i)
    if (density(i) > 0.0) min_pos = std::min(min_pos, density(i));
  require(std::isfinite(min_pos), ErrorCode::AllZero, "density has no positive entry");
  const double eps = 0.1 * min_pos;
  if (epsilon_out) *epsilon_out = eps;
  Eigen::MatrixXd v = -(density.array() + eps).log();
  v.array() -= v.minCoeff();
  return v.cwiseMin(v_cap);
}

PotentialGrid build_potential(const Eigen::MatrixXd& points, const GridSpec& grid, double sigma, double v_cap) {
  PotentialGrid out;
  out.grid = grid;
  out.density = density_grid(points, grid, sigma);
  out.potential = potential_from_density(out.density, v_cap, &out.epsilon);
  out.v_cap = v_cap;
  out.smoothing_sigma = sigma;
  return out;
}

std::vector<Cell> local_minima(const Eigen::MatrixXd& v, int top_n) {
  const int nx = static_cast<int>(v.rows()), ny = static_cast<int>(v.cols());
  require(nx >= 3 && ny >= 3, ErrorCode::BadParams, "minimum search needs a grid of at least 3 x 3");
  // flood each flat group of equal cells; it is a minimum when every cell
  // bordering it is strictly higher. Scanning in (row, col) order makes the
  // first cell reached the group's representative.
  Eigen::Matrix<bool, Eigen::Dynamic, Eigen::Dynamic> seen =
      Eigen::Matrix<bool, Eigen::Dynamic, Eigen::Dynamic>::Constant(nx, ny, false);
  std::vector<Cell> centers;
  std::vector<Cell> stack;
  for (int i = 0; i < nx; ++i)
    for (int j = 0; j < ny; ++j) {
      if (seen(i, j)) continue;
      const double level = v(i, j);
      bool minimum = true;
      stack.assign(1, {i, j});
      seen(i, j) = true;
      while (!stack.empty()) {
        const auto [a, b] = stack.back();
        stack.pop_back();
        for (int d = 0; d < 8; ++d) {
          const int p = a + kDx[d], q = b + kDy[d];
          if (p < 0 || p >= nx || q < 0 || q >= ny) continue;
          if (v(p, q) < level) minimum = false;
          if (v(p, q) == level && !seen(p, q)) {
            seen(p, q) = true;
            stack.emplace_back(p, q);
          }
        }
      }
      if (minimum) centers.emplace_back(i, j);
    }
  std::stable_sort(centers.begin(), centers.end(),
                   [&](const Cell& a, const Cell& b) { return v(a.first, a.second) < v(b.first, b.second); });
  if (top_n >= 0 && static_cast<int>(centers.size()) > top_n) centers.resize(static_cast<std::size_t>(top_n));
  return centers;
}

Barrier geodesic_barrier(const Eigen::MatrixXd& v, Cell from, Cell to,
                         const std::optional<Eigen::Matrix<bool, Eigen::Dynamic, Eigen::Dynamic>>& mask) {
  const int nx = static_cast<int>(v.rows()), ny = static_cast<int>(v.cols());
  auto on_grid = [&](Cell c) { return c.first >= 0 && c.first < nx && c.second >= 0 && c.second < ny; };
  require(on_grid(from) && on_grid(to), ErrorCode::BadParams, "barrier endpoints must lie on the grid");
  if (mask) require(mask->rows() == nx && mask->cols() == ny, ErrorCode::DimMismatch, "mask shape differs from grid");
  auto open = [&](int a, int b) { return !mask || (*mask)(a, b); };
  require(open(from.first, from.second) && open(to.first, to.second), ErrorCode::Unreachable,
          "barrier endpoint is masked out");

  const int n = nx * ny;
  std::vector<double> dist(static_cast<std::size_t>(n), std::numeric_limits<double>::infinity());
  std::vector<int> prev(static_cast<std::size_t>(n), -1);
  using Item = std::pair<double, int>;
  std::priority_queue<Item, std::vector<Item>, std::greater<>> heap;
  const int src = from.first * ny + from.second, dst = to.first * ny + to.second;
  dist[static_cast<std::size_t>(src)] = 0.0;
  heap.emplace(0.0, src);
  while (!heap.empty()) {
    const auto [d, node] = heap.top();
    heap.pop();
    if (d > dist[static_cast<std::size_t>(node)]) continue;
    if (node == dst) break;
    const int a = node / ny, b = node % ny;
    for (int k = 0; k < 8; ++k) {
      const int p = a + kDx[k], q = b + kDy[k];
      if (p < 0 || p >= nx || q < 0 || q >= ny || !open(p, q)) continue;
      const int next = p * ny + q;
      const double nd = d + v(p, q);
      if (nd < dist[static_cast<std::size_t>(next)]) {
        dist[static_cast<std::size_t>(next)] = nd;
        prev[static_cast<std::size_t>(next)] = node;
        heap.emplace(nd, next);
      }
    }
  }
  require(std::isfinite(dist[static_cast<std::size_t>(dst)]), ErrorCode::Unreachable, "no open path between cells");
  Barrier out;
  out.path_cost = dist[static_cast<std::size_t>(dst)];
  for (int node = dst; node != -1; node = prev[static_cast<std::size_t>(node)]) {
    out.path.emplace_back(node / ny, node % ny);
    if (node == src) break;
  }
  std::reverse(out.path.begin(), out.path.end());
  for (const auto& [a, b] : out.path) out.v_star = std::max(out.v_star, v(a, b));
  return out;
}

std::optional<double> mean_pairwise_barrier(const Eigen::MatrixXd& potential, const std::vector<Cell>& centers) {
  if (centers.size() < 2) return std::nullopt;
  double total = 0.0;
  int pairs = 0;
  for (std::size_t i = 0; i < centers.size(); ++i)
    for (std::size_t j = i + 1; j < centers.size(); ++j) {
      total += geodesic_barrier(potential, centers[i], centers[j]).v_star;
      ++pairs;
    }
  return total / pairs;
}

std::optional<Eigen::Vector2d> FlowField::vector(int ix, int iy) const {
  if (count(ix, iy) == 0) return std::nullopt;
  return Eigen::Vector2d(u(ix, iy), w(ix, iy));
}

FlowField flow_field_bin(const std::vector<Eigen::MatrixXd>& trajectories, const GridSpec& grid) {
  FlowField f;
  f.grid = grid;
  f.u = Eigen::MatrixXd::Zero(grid.nx, grid.ny);
  f.w = Eigen::MatrixXd::Zero(grid.nx, grid.ny);
  f.count = Eigen::MatrixXi::Zero(grid.nx, grid.ny);
  for (const auto& t : trajectories) {
    require(t.cols() == 2, ErrorCode::DimMismatch, "flow trajectories must be T x 2");
    for (Eigen::Index s = 0; s + 1 < t.rows(); ++s) {
      const auto c = grid.cell_of(t(s, 0), t(s, 1));
      if (!c) {
        ++f.outside;
        continue;
      }
      f.u(c->first, c->second) += t(s + 1, 0) - t(s, 0);
      f.w(c->first, c->second) += t(s + 1, 1) - t(s, 1);
      f.count(c->first, c->second) += 1;
    }
  }
  for (int i = 0; i < grid.nx; ++i)
    for (int j = 0; j < grid.ny; ++j)
      if (f.count(i, j) > 0) {
        f.u(i, j) /= f.count(i, j);
        f.w(i, j) /= f.count(i, j);
      }
  return f;
}

std::vector<std::optional<double>> divergence_field(const FlowField& flow) {
  const int nx = flow.grid.nx, ny = flow.grid.ny;
  std::vector<std::optional<double>> out(static_cast<std::size_t>(nx * ny));
  for (int i = 1; i + 1 < nx; ++i)
    for (int j = 1; j + 1 < ny; ++j) {
      if (flow.count(i, j) == 0 || flow.count(i - 1, j) == 0 || flow.count(i + 1, j) == 0 ||
          flow.count(i, j - 1) == 0 || flow.count(i, j + 1) == 0)
        continue;
      out[static_cast<std::size_t>(i * ny + j)] = (flow.u(i + 1, j) - flow.u(i - 1, j)) / (2.0 * flow.grid.dx()) +
                                                  (flow.w(i, j + 1) - flow.w(i, j - 1)) / (2.0 * flow.grid.dy());
    }
  return out;
}

std::vector<OrdinalSetting> default_ordinal_grid() {
  std::vector<OrdinalSetting> out;
  for (double sigma : {1.0, 2.0, 3.0})
    for (int res : {40, 60, 80})
      for (int basins : {2, 3, 4, 5, 6}) out.push_back({sigma, res, basins});
  return out;
}

OrdinalHarness ordinal_stability(const std::vector<std::pair<std::string, Eigen::MatrixXd>>& conditions,
                                 const std::vector<std::string>& expected_order,
                                 const std::vector<OrdinalSetting>& settings, double v_cap) {
  require(conditions.size() >= 2, ErrorCode::BadParams, "ordinal harness needs at least 2 conditions");
  OrdinalHarness h;
  std::vector<Eigen::MatrixXd> all;
  for (const auto& [name, pts] : conditions) {
    h.conditions.push_back(name);
    all.push_back(pts);
  }
  std::vector<std::size_t> rank;
  for (const auto& name : expected_order) {
    const auto it = std::find(h.conditions.begin(), h.conditions.end(), name);
    require(it != h.conditions.end(), ErrorCode::BadParams, "expected order names unknown condition " + name);
    rank.push_back(static_cast<std::size_t>(it - h.conditions.begin()));
  }
  h.settings = settings;
  int matching = 0;
  for (const auto& s : settings) {
    const auto grid = grid_for(all, s.resolution, s.resolution);
    std::vector<std::optional<double>> row;
    for (const auto& [name, pts] : conditions) {
      const auto pot = build_potential(pts, grid, s.sigma, v_cap);
      row.push_back(mean_pairwise_barrier(pot.potential, local_minima(pot.potential, s.basins)));
    }
    bool ok = true;
    for (std::size_t k = 0; k + 1 < rank.size() && ok; ++k) {
      const auto& hi = row[rank[k]];
      const auto& lo = row[rank[k + 1]];
      ok = hi && lo && *hi > *lo;
    }
    h.v_star.push_back(row);
    h.matches_expected.push_back(ok);
    matching += ok;
  }
  h.fraction_matching = settings.empty() ? 0.0 : static_cast<double>(matching) / static_cast<double>(settings.size());
  for (std::size_t c = 0; c < conditions.size(); ++c) {
    std::vector<double> vals;
    for (const auto& row : h.v_star)
      if (row[c]) vals.push_back(*row[c]);
    double cv = std::numeric_limits<double>::quiet_NaN();
    if (vals.size() >= 2) {
      double mean = 0.0;
      for (double x : vals) mean += x;
      mean /= static_cast<double>(vals.size());
      double ss = 0.0;
      for (double x : vals) ss += (x - mean) * (x - mean);
      if (mean != 0.0) cv = std::sqrt(ss / static_cast<double>(vals.size() - 1)) / mean;
    }
    h.coefficient_of_variation.push_back(cv);
  }
  return h;
}

void save_potential(const PotentialGrid& grid, const std::filesystem::path& stem) {
  auto write_matrix = [](const std::filesystem::path& p, const Eigen::MatrixXd& m) {
    std::ofstream out(p, std::ios::binary);
    require(static_cast<bool>(out), ErrorCode::Io, "cannot write " + p.string());
    out.write(reinterpret_cast<const char*>(m.data()), static_cast<std::streamsize>(m.size() * sizeof(double)));
  };
  write_matrix(stem.string() + ".density.bin", grid.density);
  write_matrix(stem.string() + ".potential.bin", grid.potential);
  const auto& g = grid.grid;
  nlohmann::json j{{"x_min", g.x_min}, {"x_max", g.x_max}, {"y_min", g.y_min}, {"y_max", g.y_max},
                   {"nx", g.nx},       {"ny", g.ny},       {"epsilon", grid.epsilon},
                   {"v_cap", grid.v_cap}, {"smoothing_sigma", grid.smoothing_sigma},
                   {"layout", "float64 little-endian, column-major, nx rows by ny columns"}};
  std::ofstream out(stem.string() + ".json");
  require(static_cast<bool>(out), ErrorCode::Io, "cannot write grid sidecar");
  out << j.dump(2) << '\n';
}

PotentialGrid load_potential(const std::filesystem::path& stem) {
  std::ifstream in(stem.string() + ".json");
  require(static_cast<bool>(in), ErrorCode::Io, "cannot read grid sidecar " + stem.string());
  const auto j = nlohmann::json::parse(in);
  PotentialGrid p;
  p.grid = {j.at("x_min"), j.at("x_max"), j.at("y_min"), j.at("y_max"), j.at("nx"), j.at("ny")};
  p.epsilon = j.at("epsilon");
  p.v_cap = j.at("v_cap");
  p.smoothing_sigma = j.at("smoothing_sigma");
  auto read_matrix = [&](const std::filesystem::path& path) {
    Eigen::MatrixXd m(p.grid.nx, p.grid.ny);
    std::ifstream f(path, std::ios::binary);
    f.read(reinterpret_cast<char*>(m.data()), static_cast<std::streamsize>(m.size() * sizeof(double)));
    require(f.gcount() == static_cast<std::streamsize>(m.size() * sizeof(double)), ErrorCode::Io,
            "short grid file " + path.string());
    return m;
  };
  p.density = read_matrix(stem.string() + ".density.bin");
  p.potential = read_matrix(stem.string() + ".potential.bin");
  return p;
}

void write_potential_svg(std::ostream& out, const PotentialGrid& grid, const std::vector<Cell>& centers,
                         int cell_px) {
  const int nx = grid.grid.nx, ny = grid.grid.ny;
  const int w = nx * cell_px, h = ny * cell_px;
  out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << w << "\" height=\"" << h << "\" viewBox=\"0 0 " << w
      << ' ' << h << "\">\n";
  for (int i = 0; i < nx; ++i)
    for (int j = 0; j < ny; ++j) {
      const double t = grid.v_cap > 0 ? std::clamp(grid.potential(i, j) / grid.v_cap, 0.0, 1.0) : 0.0;
      const int shade = static_cast<int>(std::lround(255.0 * t));
      // low potential dark, high potential light; y grows upward
      out << "<rect x=\"" << i * cell_px << "\" y=\"" << (ny - 1 - j) * cell_px << "\" width=\"" << cell_px
          << "\" height=\"" << cell_px << "\" fill=\"rgb(" << shade << ',' << shade << ',' << std::min(255, shade + 40)
          << ")\"/>\n";
    }
  for (const auto& [i, j] : centers)
    out << "<circle cx=\"" << (i + 0.5) * cell_px << "\" cy=\"" << (ny - 1 - j + 0.5) * cell_px << "\" r=\""
        << cell_px << "\" fill=\"red\"/>\n";
  out << "</svg>\n";
}

}  // namespace loopdyn
