#include "vbsim/geometry.hpp"

#include <algorithm>
#include <numbers>

namespace vbsim {

namespace {

// 16-point Gauss-Legendre nodes/weights on [-1, 1] (positive half).
constexpr std::array<double, 8> kGlNodes = {
    0.0950125098376374, 0.2816035507792589, 0.4580167776572274, 0.6178762444026438,
    0.7554044083550030, 0.8656312023878318, 0.9445750230732326, 0.9894009349916499};
constexpr std::array<double, 8> kGlWeights = {
    0.1894506104550685, 0.1826034150449236, 0.1691565193950025, 0.1495959888165767,
    0.1246289712555339, 0.0951585116824928, 0.0622535239386479, 0.0271524594117541};

template <class F>
double gauss_legendre(F&& f, double a, double b) {
  const double mid = 0.5 * (a + b);
  const double half = 0.5 * (b - a);
  double s = 0.0;
  for (std::size_t i = 0; i < kGlNodes.size(); ++i) {
    s += kGlWeights[i] * (f(mid + half * kGlNodes[i]) + f(mid - half * kGlNodes[i]));
  }
  return s * half;
}

}  // namespace

double disk_box_overlap(const Point2& c, double r, double x0, double x1, double y0,
                        double y1) {
  const double xa = std::max(x0, c.x - r);
  const double xb = std::min(x1, c.x + r);
  if (!(xa < xb) || !(y0 < y1)) return 0.0;

  auto to_theta = [&](double x) { return std::asin(std::clamp((x - c.x) / r, -1.0, 1.0)); };
  std::vector<double> cuts = {to_theta(xa), to_theta(xb)};
  for (double yk : {y0, y1}) {
    const double dy = yk - c.y;
    if (std::abs(dy) < r) {
      const double h = std::sqrt(r * r - dy * dy);
      for (double x : {c.x - h, c.x + h}) {
        if (x > xa && x < xb) cuts.push_back(to_theta(x));
      }
    }
  }
  std::sort(cuts.begin(), cuts.end());

  auto integrand = [&](double theta) {
    const double s = r * std::cos(theta);
    const double len = std::min(y1, c.y + s) - std::max(y0, c.y - s);
    return len > 0.0 ? len * r * std::cos(theta) : 0.0;
  };
  double area = 0.0;
  for (std::size_t i = 0; i + 1 < cuts.size(); ++i) {
    if (cuts[i + 1] > cuts[i]) area += gauss_legendre(integrand, cuts[i], cuts[i + 1]);
  }
  return area;
}

std::size_t max_disk_depth(std::span<const Point2> sites, double radius) {
  if (sites.empty()) return 0;
  const double tol = 1e-9 * radius;
  auto depth_at = [&](const Point2& p) {
    std::size_t n = 0;
    for (const auto& s : sites) {
      if (distance(s, p) <= radius + tol) ++n;
    }
    return n;
  };
  std::size_t best = 0;
  for (const auto& s : sites) best = std::max(best, depth_at(s));
  // The deepest cell of a disk arrangement has a vertex that is an
  // intersection of two boundary circles (or is a whole disk, covered above).
  for (std::size_t i = 0; i < sites.size(); ++i) {
    for (std::size_t j = i + 1; j < sites.size(); ++j) {
      const double d = distance(sites[i], sites[j]);
      if (d == 0.0 || d > 2.0 * radius) continue;
      const Point2 mid{0.5 * (sites[i].x + sites[j].x), 0.5 * (sites[i].y + sites[j].y)};
      const double h = std::sqrt(std::max(0.0, radius * radius - 0.25 * d * d));
      const double ux = (sites[j].x - sites[i].x) / d;
      const double uy = (sites[j].y - sites[i].y) / d;
      best = std::max(best, depth_at({mid.x - h * uy, mid.y + h * ux}));
      best = std::max(best, depth_at({mid.x + h * uy, mid.y - h * ux}));
    }
  }
  return best;
}

SiteIndex::SiteIndex(const Rect& rect, std::span<const Point2> sites, double radius)
    : radius_(radius), sites_(sites.begin(), sites.end()) {
  nx_ = std::max<std::size_t>(1, static_cast<std::size_t>(rect.width / radius));
  ny_ = std::max<std::size_t>(1, static_cast<std::size_t>(rect.height / radius));
  // Keep the bucket table small when the radius is tiny relative to the box.
  nx_ = std::min<std::size_t>(nx_, 256);
  ny_ = std::min<std::size_t>(ny_, 256);
  cell_x_ = rect.width / static_cast<double>(nx_);
  cell_y_ = rect.height / static_cast<double>(ny_);
  buckets_.resize(nx_ * ny_);
  for (std::size_t i = 0; i < sites_.size(); ++i) {
    const auto bx = bucket_of(sites_[i].x, cell_x_, nx_);
    const auto by = bucket_of(sites_[i].y, cell_y_, ny_);
    buckets_[by * nx_ + bx].push_back(i);
  }
}

std::size_t SiteIndex::bucket_of(double v, double cell, std::size_t n) const {
  const double b = std::floor(v / cell);
  if (b <= 0.0) return 0;
  return std::min(n - 1, static_cast<std::size_t>(b));
}

template <class Visit>
void SiteIndex::visit(const Point2& y, Visit&& fn) const {
  if (buckets_.empty()) return;
  const auto bx = bucket_of(y.x, cell_x_, nx_);
  const auto by = bucket_of(y.y, cell_y_, ny_);
  // Buckets are at least radius wide unless the bucket count was capped;
  // the reach covers both cases.
  const auto reach_x = static_cast<std::size_t>(std::ceil(radius_ / cell_x_));
  const auto reach_y = static_cast<std::size_t>(std::ceil(radius_ / cell_y_));
  const std::size_t xlo = bx > reach_x ? bx - reach_x : 0;
  const std::size_t ylo = by > reach_y ? by - reach_y : 0;
  const std::size_t xhi = std::min(nx_ - 1, bx + reach_x);
  const std::size_t yhi = std::min(ny_ - 1, by + reach_y);
  for (std::size_t j = ylo; j <= yhi; ++j) {
    for (std::size_t i = xlo; i <= xhi; ++i) {
      for (std::size_t s : buckets_[j * nx_ + i]) {
        if (distance(sites_[s], y) <= radius_) fn(s);
      }
    }
  }
}

void SiteIndex::query(const Point2& y, std::vector<std::size_t>& out) const {
  visit(y, [&](std::size_t s) { out.push_back(s); });
}

std::size_t SiteIndex::count(const Point2& y) const {
  std::size_t n = 0;
  visit(y, [&](std::size_t) { ++n; });
  return n;
}

}  // namespace vbsim
