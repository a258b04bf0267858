#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <limits>
#include <sstream>

#include "loopdyn/error.hpp"
#include "loopdyn/landscape.hpp"
#include "loopdyn/rng.hpp"

using namespace loopdyn;

namespace {

Eigen::MatrixXd blob(Rng& rng, int n, double cx, double cy, double sd) {
  Eigen::MatrixXd p(n, 2);
  for (int i = 0; i < n; ++i) {
    p(i, 0) = cx + sd * standard_normal(rng);
    p(i, 1) = cy + sd * standard_normal(rng);
  }
  return p;
}

Eigen::MatrixXd stack(const std::vector<Eigen::MatrixXd>& parts) {
  Eigen::Index rows = 0;
  for (const auto& p : parts) rows += p.rows();
  Eigen::MatrixXd out(rows, 2);
  Eigen::Index r = 0;
  for (const auto& p : parts) {
    out.middleRows(r, p.rows()) = p;
    r += p.rows();
  }
  return out;
}

// Same graph, same step cost; relax every edge until nothing changes.
struct OracleResult {
  double cost;
  double v_star;
};
OracleResult bellman_ford(const Eigen::MatrixXd& v, Cell from, Cell to) {
  const int nx = static_cast<int>(v.rows()), ny = static_cast<int>(v.cols()), n = nx * ny;
  std::vector<double> dist(n, std::numeric_limits<double>::infinity());
  std::vector<int> prev(n, -1);
  dist[from.first * ny + from.second] = 0.0;
  for (bool changed = true; changed;) {
    changed = false;
    for (int a = 0; a < nx; ++a)
      for (int b = 0; b < ny; ++b) {
        const int u = a * ny + b;
        if (!std::isfinite(dist[u])) continue;
        for (int da = -1; da <= 1; ++da)
          for (int db = -1; db <= 1; ++db) {
            const int p = a + da, q = b + db;
            if ((da == 0 && db == 0) || p < 0 || p >= nx || q < 0 || q >= ny) continue;
            const double nd = dist[u] + v(p, q);
            if (nd < dist[p * ny + q]) {
              dist[p * ny + q] = nd;
              prev[p * ny + q] = u;
              changed = true;
            }
          }
      }
  }
  const int src = from.first * ny + from.second;
  double vs = v(from.first, from.second);
  for (int node = to.first * ny + to.second; node != src; node = prev[node]) vs = std::max(vs, v(node / ny, node % ny));
  return {dist[to.first * ny + to.second], vs};
}

// Exhaustive simple-path search for tiny grids.
void enumerate(const Eigen::MatrixXd& v, Cell at, Cell to, std::vector<std::vector<bool>>& used, double cost,
               double vmax, double& best_cost, double& best_v) {
  if (at == to) {
    if (cost < best_cost) {
      best_cost = cost;
      best_v = vmax;
    }
    return;
  }
  for (int da = -1; da <= 1; ++da)
    for (int db = -1; db <= 1; ++db) {
      const int p = at.first + da, q = at.second + db;
      if ((da == 0 && db == 0) || p < 0 || p >= v.rows() || q < 0 || q >= v.cols() || used[p][q]) continue;
      used[p][q] = true;
      enumerate(v, {p, q}, to, used, cost + v(p, q), std::max(vmax, v(p, q)), best_cost, best_v);
      used[p][q] = false;
    }
}

}  // namespace

TEST_CASE("grid bounds and cells") {
  Eigen::MatrixXd p(2, 2);
  p << 0, 0, 10, 20;
  const auto g = grid_for(p, 10, 10);
  CHECK(g.x_min == doctest::Approx(-0.5));
  CHECK(g.x_max == doctest::Approx(10.5));
  CHECK(g.y_min == doctest::Approx(-1.0));
  CHECK(g.cell_of(0, 0) == std::pair{0, 0});
  CHECK(g.cell_of(10.5, 21.0) == std::pair{9, 9});
  CHECK_FALSE(g.cell_of(11, 0));
  Eigen::MatrixXd one(1, 2);
  one << 3, 3;
  const auto g1 = grid_for(one, 5, 5);
  CHECK(g1.x_max - g1.x_min == doctest::Approx(1.1));
}

TEST_CASE("density smoothing") {
  Eigen::MatrixXd one(1, 2);
  one << 0.0, 0.0;
  GridSpec g{-1, 1, -1, 1, 21, 21};
  const auto d = density_grid(one, g, 2.0);
  Eigen::Index r, c;
  d.maxCoeff(&r, &c);
  CHECK(r == 10);
  CHECK(c == 10);
  CHECK(d.sum() == doctest::Approx(1.0).epsilon(1e-6));
  CHECK(d(10, 10) > d(10, 12));
  CHECK(d(10, 12) > d(10, 14));

  // point near the edge loses at most the kernel tail outside the grid
  Eigen::MatrixXd edge(1, 2);
  edge << -0.99, 0.0;
  const double kept = density_grid(edge, g, 2.0).sum();
  CHECK(kept < 1.0);
  CHECK(kept > 0.5);

  // one point per cell with no smoothing is exactly uniform
  GridSpec u{0, 10, 0, 10, 10, 10};
  Eigen::MatrixXd lattice(100, 2);
  for (int i = 0; i < 10; ++i)
    for (int j = 0; j < 10; ++j) lattice.row(i * 10 + j) << i + 0.5, j + 0.5;
  const auto flat = density_grid(lattice, u, 0.0);
  CHECK(flat.maxCoeff() / flat.minCoeff() < 1.2);
  const auto smoothed = density_grid(lattice, u, 0.5);
  CHECK(smoothed.block(3, 3, 4, 4).maxCoeff() / smoothed.block(3, 3, 4, 4).minCoeff() < 1.2);
}

TEST_CASE("potential from density") {
  CHECK(potential_from_density(Eigen::MatrixXd::Constant(4, 4, 0.2)).isZero());
  Eigen::MatrixXd two(1, 2);
  two << 1.0, 2.0;
  const auto v = potential_from_density(two);
  CHECK(v(0, 1) == 0.0);
  CHECK(v(0, 0) == doctest::Approx(std::log(2.1 / 1.1)));

  Eigen::MatrixXd peaked = Eigen::MatrixXd::Zero(3, 3);
  peaked(1, 1) = 1.0;
  peaked(0, 0) = 1e-6;
  double eps = 0;
  const auto vp = potential_from_density(peaked, 8.0, &eps);
  CHECK(eps == doctest::Approx(1e-7));
  CHECK(vp(2, 2) == 8.0);
  CHECK(vp.minCoeff() == 0.0);
  CHECK(vp.maxCoeff() <= 8.0);
  CHECK_THROWS_AS(potential_from_density(Eigen::MatrixXd::Zero(3, 3)), Error);
}

TEST_CASE("local minima") {
  Rng rng(1);
  const auto one = blob(rng, 4000, 0, 0, 1);
  auto pot = build_potential(one, grid_for(one, 30, 30), 2.0);
  auto centers = local_minima(pot.potential, 5);
  REQUIRE(!centers.empty());
  const auto mode = pot.grid.cell_of(0, 0);
  CHECK(std::abs(centers[0].first - mode->first) <= 1);
  CHECK(std::abs(centers[0].second - mode->second) <= 1);

  const auto two = stack({blob(rng, 3000, -4, 0, 0.7), blob(rng, 3000, 4, 0, 0.7)});
  pot = build_potential(two, grid_for(two, 40, 40), 2.0);
  centers = local_minima(pot.potential, 2);
  REQUIRE(centers.size() == 2);
  std::vector<double> xs{pot.grid.center(centers[0].first, centers[0].second).x(),
                         pot.grid.center(centers[1].first, centers[1].second).x()};
  std::sort(xs.begin(), xs.end());
  CHECK(xs[0] == doctest::Approx(-4).epsilon(0.1));
  CHECK(xs[1] == doctest::Approx(4).epsilon(0.1));

  // crafted grid: two strict minima and a flat pair
  Eigen::MatrixXd c(5, 5);
  c << 5, 5, 5, 5, 5,
       5, 1, 5, 5, 5,
       5, 5, 5, 3, 3,
       5, 5, 5, 5, 5,
       0, 5, 5, 5, 5;
  const auto m = local_minima(c, 10);
  CHECK(m == std::vector<Cell>{{4, 0}, {1, 1}, {2, 3}});
  CHECK(local_minima(c, 1) == std::vector<Cell>{{4, 0}});
  CHECK(local_minima(Eigen::MatrixXd::Zero(4, 4), 3) == std::vector<Cell>{{0, 0}});
  CHECK_THROWS_AS(local_minima(Eigen::MatrixXd::Zero(2, 5), 1), Error);
}

TEST_CASE("barrier on simple grids") {
  const Eigen::MatrixXd flat = Eigen::MatrixXd::Zero(12, 12);
  const auto b = geodesic_barrier(flat, {0, 0}, {11, 11});
  CHECK(b.v_star == 0.0);
  CHECK(b.path.front() == Cell{0, 0});
  CHECK(b.path.back() == Cell{11, 11});

  Eigen::MatrixXd corridor = Eigen::MatrixXd::Zero(1, 9);
  corridor(0, 4) = 5.0;
  CHECK(geodesic_barrier(corridor, {0, 0}, {0, 8}).v_star == 5.0);

  Rng rng(2);
  for (int rep = 0; rep < 20; ++rep) {
    Eigen::MatrixXd v(3, 4);
    for (Eigen::Index i = 0; i < v.size(); ++i) v(i) = 8.0 * uniform01(rng);
    std::vector<std::vector<bool>> used(3, std::vector<bool>(4, false));
    used[0][0] = true;
    double best = std::numeric_limits<double>::infinity(), best_v = 0;
    enumerate(v, {0, 0}, {2, 3}, used, 0.0, v(0, 0), best, best_v);
    const auto g = geodesic_barrier(v, {0, 0}, {2, 3});
    CHECK(g.path_cost == doctest::Approx(best));
    CHECK(g.v_star == best_v);
  }

  Eigen::Matrix<bool, Eigen::Dynamic, Eigen::Dynamic> mask =
      Eigen::Matrix<bool, Eigen::Dynamic, Eigen::Dynamic>::Constant(5, 5, true);
  mask.col(2).setConstant(false);
  CHECK_THROWS_AS(geodesic_barrier(Eigen::MatrixXd::Zero(5, 5), {0, 0}, {0, 4}, mask), Error);
}

TEST_CASE("barrier matches shortest-path oracle on random grids") {
  Rng rng(3);
  for (int g = 0; g < 50; ++g) {
    Eigen::MatrixXd v(12, 12);
    for (Eigen::Index i = 0; i < v.size(); ++i) v(i) = 8.0 * uniform01(rng);
    const Cell a{static_cast<int>(uniform_index(rng, 12)), static_cast<int>(uniform_index(rng, 12))};
    const Cell b{static_cast<int>(uniform_index(rng, 12)), static_cast<int>(uniform_index(rng, 12))};
    const auto d = geodesic_barrier(v, a, b);
    const auto o = bellman_ford(v, a, b);
    CHECK(d.path_cost == doctest::Approx(o.cost).epsilon(1e-12));
    CHECK(d.v_star == o.v_star);
    CHECK(geodesic_barrier(v, b, a).v_star == d.v_star);
  }
}

TEST_CASE("flow field binning") {
  GridSpec g{0, 10, 0, 10, 10, 10};
  Eigen::MatrixXd line(10, 2);
  for (int t = 0; t < 10; ++t) line.row(t) << 0.5 + t, 5.5;
  auto f = flow_field_bin({line}, g);
  int occupied = 0;
  for (int i = 0; i < 10; ++i)
    for (int j = 0; j < 10; ++j)
      if (auto vec = f.vector(i, j)) {
        ++occupied;
        CHECK(vec->x() == doctest::Approx(1.0));
        CHECK(vec->y() == doctest::Approx(0.0));
      }
  CHECK(occupied == 9);

  Eigen::MatrixXd right(2, 2), left(2, 2);
  right << 5.2, 5.5, 6.2, 5.5;
  left << 5.8, 5.5, 4.8, 5.5;
  f = flow_field_bin({right, left}, g);
  CHECK(f.count(5, 5) == 2);
  CHECK(f.vector(5, 5)->norm() == doctest::Approx(0.0));
  CHECK_FALSE(f.vector(0, 0));

  // contraction towards the origin
  Rng rng(4);
  std::vector<Eigen::MatrixXd> runs;
  for (int r = 0; r < 300; ++r) {
    Eigen::MatrixXd t(20, 2);
    t.row(0) << 8 * (uniform01(rng) - 0.5), 8 * (uniform01(rng) - 0.5);
    for (int s = 1; s < 20; ++s) t.row(s) = 0.8 * t.row(s - 1) + Eigen::RowVector2d(0.01 * standard_normal(rng), 0.01 * standard_normal(rng));
    runs.push_back(t);
  }
  GridSpec cg{-4, 4, -4, 4, 16, 16};
  f = flow_field_bin(runs, cg);
  int inward = 0, total = 0;
  for (int i = 0; i < 16; ++i)
    for (int j = 0; j < 16; ++j)
      if (auto vec = f.vector(i, j)) {
        ++total;
        inward += vec->dot(cg.center(i, j)) < 0;
      }
  CHECK(inward >= 0.95 * total);
}

TEST_CASE("divergence of analytic fields") {
  GridSpec g{-5, 5, -5, 5, 10, 10};
  auto field = [&](double sx, double sy, double cx, double cy) {
    std::vector<Eigen::MatrixXd> steps;
    for (int i = 0; i < 10; ++i)
      for (int j = 0; j < 10; ++j) {
        const auto c = g.center(i, j);
        Eigen::MatrixXd s(2, 2);
        s << c.x(), c.y(), c.x() + sx * c.x() + cx, c.y() + sy * c.y() + cy;
        steps.push_back(s);
      }
    return divergence_field(flow_field_bin(steps, g));
  };
  int interior = 0;
  for (const auto& d : field(1, 1, 0, 0))
    if (d) {
      ++interior;
      CHECK(*d == doctest::Approx(2.0).epsilon(0.05));
    }
  CHECK(interior == 64);
  for (const auto& d : field(-1, -1, 0, 0))
    if (d) CHECK(*d == doctest::Approx(-2.0).epsilon(0.05));
  for (const auto& d : field(0, 0, 0.3, -0.2))
    if (d) CHECK(std::abs(*d) < 1e-12);
}

TEST_CASE("potential persistence and svg") {
  Rng rng(5);
  const auto pts = blob(rng, 500, 0, 0, 1);
  const auto pot = build_potential(pts, grid_for(pts, 12, 9), 1.0);
  const auto stem = std::filesystem::temp_directory_path() / "loopdyn_landscape_test";
  save_potential(pot, stem);
  const auto back = load_potential(stem);
  CHECK(back.potential == pot.potential);
  CHECK(back.density == pot.density);
  CHECK(back.grid.ny == 9);
  CHECK(back.epsilon == pot.epsilon);
  std::ostringstream a, b;
  write_potential_svg(a, pot, local_minima(pot.potential, 2));
  write_potential_svg(b, back, local_minima(back.potential, 2));
  CHECK(a.str() == b.str());
  CHECK(a.str().rfind("<svg", 0) == 0);
}

TEST_CASE("ordinal harness on a designed landscape") {
  // four wells; more mass on the bridges lowers the barrier
  Rng rng(6);
  auto landscape = [&](double bridge) {
    const int n = 6000;
    const int in_bridge = static_cast<int>(bridge * n);
    std::vector<Eigen::MatrixXd> parts;
    const double cx[4] = {-3, 3, -3, 3}, cy[4] = {-3, -3, 3, 3};
    for (int w = 0; w < 4; ++w) parts.push_back(blob(rng, (n - in_bridge) / 4, cx[w], cy[w], 0.6));
    Eigen::MatrixXd br(in_bridge, 2);
    for (int i = 0; i < in_bridge; ++i) {
      const double t = uniform01(rng);
      const int w = static_cast<int>(uniform_index(rng, 4));
      const int to = (w + 1 + static_cast<int>(uniform_index(rng, 3))) % 4;
      br.row(i) << cx[w] + t * (cx[to] - cx[w]) + 0.3 * standard_normal(rng),
          cy[w] + t * (cy[to] - cy[w]) + 0.3 * standard_normal(rng);
    }
    parts.push_back(br);
    return stack(parts);
  };
  const std::vector<std::pair<std::string, Eigen::MatrixXd>> conds{
      {"control", landscape(0.02)}, {"neutral", landscape(0.10)}, {"lorem", landscape(0.25)},
      {"adversarial", landscape(0.50)}};
  const auto h = ordinal_stability(conds, {"control", "neutral", "lorem", "adversarial"});
  CHECK(h.settings.size() == 45);
  MESSAGE("ordering preserved in " << h.fraction_matching * 100 << "% of settings");
  for (std::size_t c = 0; c < 4; ++c) MESSAGE(h.conditions[c] << " CV " << h.coefficient_of_variation[c]);
  CHECK(h.fraction_matching >= 0.85);
}
