#pragma once

#include <array>
#include <cmath>
#include <cstddef>
#include <span>
#include <vector>

namespace vbsim {

/// Position in the spatial domain (always two-dimensional).
struct Point2 {
  double x = 0.0;
  double y = 0.0;

  friend bool operator==(const Point2&, const Point2&) = default;
};

inline double distance(const Point2& a, const Point2& b) {
  return std::hypot(a.x - b.x, a.y - b.y);
}

/// Axis-aligned rectangle [0, width] x [0, height].
struct Rect {
  double width = 1.0;
  double height = 1.0;

  double area() const { return width * height; }
  bool contains_closed(const Point2& p) const {
    return p.x >= 0.0 && p.x <= width && p.y >= 0.0 && p.y <= height;
  }
  bool contains_open(const Point2& p) const {
    return p.x > 0.0 && p.x < width && p.y > 0.0 && p.y < height;
  }
};

/// Viral phenotype. Trait spaces are one- or two-dimensional; in the
/// one-dimensional case the second coordinate is unused and kept at zero.
using Trait = std::array<double, 2>;

struct TraitBox {
  int dim = 1;
  Trait lo{0.0, 0.0};
  Trait hi{1.0, 0.0};

  double volume() const {
    double v = hi[0] - lo[0];
    if (dim == 2) v *= hi[1] - lo[1];
    return v;
  }
  bool contains(const Trait& z) const {
    for (int k = 0; k < dim; ++k) {
      if (!(z[k] >= lo[k] && z[k] <= hi[k])) return false;
    }
    return true;
  }
  /// Squared Euclidean distance over the active coordinates.
  double dist2(const Trait& a, const Trait& b) const {
    double s = 0.0;
    for (int k = 0; k < dim; ++k) s += (a[k] - b[k]) * (a[k] - b[k]);
    return s;
  }
};

/// Mirror-fold a coordinate into [0, length]. Equivalent to reflecting
/// repeatedly at both walls until the point lands inside.
inline double fold_into(double v, double length) {
  const double period = 2.0 * length;
  double u = std::fmod(v, period);
  if (u < 0.0) u += period;
  if (u > length) u = period - u;
  return u;
}

inline Point2 fold_into(const Point2& p, const Rect& rect) {
  return {fold_into(p.x, rect.width), fold_into(p.y, rect.height)};
}

/// Exact area of {y : |y - center| <= radius} intersected with the box
/// [x0,x1] x [y0,y1]. Integrates the chord overlap in angle variables
/// with Gauss-Legendre on each smooth piece.
double disk_box_overlap(const Point2& center, double radius, double x0, double x1,
                        double y0, double y1);

/// Largest number of points of `sites` simultaneously within `radius` of a
/// single location in the plane (depth of the disk arrangement).
std::size_t max_disk_depth(std::span<const Point2> sites, double radius);

/// Uniform bucket grid over the rectangle for "which sites lie within r of y"
/// queries. Buckets have side >= r, so a 3x3 neighbourhood suffices.
class SiteIndex {
 public:
  SiteIndex() = default;
  SiteIndex(const Rect& rect, std::span<const Point2> sites, double radius);

  /// Appends to `out` the indices of sites with |site - y| <= radius.
  void query(const Point2& y, std::vector<std::size_t>& out) const;
  std::size_t count(const Point2& y) const;
  double radius() const { return radius_; }

 private:
  std::size_t bucket_of(double v, double cell, std::size_t n) const;
  template <class Visit>
  void visit(const Point2& y, Visit&& fn) const;

  double radius_ = 0.0;
  double cell_x_ = 1.0;
  double cell_y_ = 1.0;
  std::size_t nx_ = 0;
  std::size_t ny_ = 0;
  std::vector<Point2> sites_;
  std::vector<std::vector<std::size_t>> buckets_;
};

}  // namespace vbsim
