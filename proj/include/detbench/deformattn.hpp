#pragma once

// Multi-scale deformable attention, single head, single query:
//
//   out = sum_m sum_n A(m,n) * W(m,n) * f_m(p_m + d(m,n))
//
// where f_m bilinearly samples feature level m, p_m is the level's reference
// point, d(m,n) a sampling offset, A a softmax over all M*N logits and W(m,n)
// a per-point C_out x C projection. Everything here is a reference and
// verification kernel: double precision is the intended scalar.

#include <cmath>
#include <cstdint>
#include <sstream>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "detbench/counter_rng.hpp"
#include "detbench/errors.hpp"

namespace detbench::deformattn {

using Eigen::Index;

template <typename Scalar>
using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;
template <typename Scalar>
using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
template <typename Scalar>
using RowMatrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename Scalar>
using Point = Eigen::Matrix<Scalar, 2, 1>;  // (x, y)
template <typename Scalar>
using PointList = Eigen::Matrix<Scalar, Eigen::Dynamic, 2>;

// One pyramid level. Row (y * width + x) of `values` holds the C channels of
// cell (x, y); cell centres sit at integer coordinates.
template <typename Scalar>
struct FeatureLevel {
  Index height = 0;
  Index width = 0;
  RowMatrix<Scalar> values;

  FeatureLevel() = default;
  FeatureLevel(Index h, Index w, Index channels)
      : height(h), width(w), values(RowMatrix<Scalar>::Zero(h * w, channels)) {}

  Index channels() const { return values.cols(); }
  Index cell(Index x, Index y) const { return y * width + x; }
  bool contains(Index x, Index y) const { return x >= 0 && y >= 0 && x < width && y < height; }
};

template <typename Scalar>
struct AttentionWeights {
  Matrix<Scalar> logits;   // M x N
  Matrix<Scalar> weights;  // M x N, non-negative, sums to 1
};

template <typename Scalar>
struct DeformableAttentionInstance {
  Vector<Scalar> query;
  std::vector<FeatureLevel<Scalar>> levels;  // M levels
  PointList<Scalar> reference_points;        // M x 2, level-local coordinates
  PointList<Scalar> offsets;                 // (M*N) x 2, row m*N + n
  Matrix<Scalar> logits;                     // M x N
  std::vector<Matrix<Scalar>> projections;   // M*N maps, each C_out x C

  Index num_levels() const { return static_cast<Index>(levels.size()); }
  Index num_points() const { return logits.cols(); }
  Index channels() const { return levels.empty() ? 0 : levels.front().channels(); }
  Index out_channels() const { return projections.empty() ? 0 : projections.front().rows(); }

  Index slot(Index m, Index n) const { return m * num_points() + n; }
  Point<Scalar> location(Index m, Index n) const {
    return reference_points.row(m).transpose() + offsets.row(slot(m, n)).transpose();
  }
  const Matrix<Scalar>& projection(Index m, Index n) const { return projections[slot(m, n)]; }
};

// Maps a normalized [0,1]^2 reference onto level-local coordinates, the usual
// convention for sharing one reference point across levels.
template <typename Scalar>
Point<Scalar> level_reference(const Point<Scalar>& normalized, const FeatureLevel<Scalar>& level) {
  return {normalized.x() * static_cast<Scalar>(level.width) - Scalar(0.5),
          normalized.y() * static_cast<Scalar>(level.height) - Scalar(0.5)};
}

// Throws DomainError on any inconsistency among M, N, C and C_out.
template <typename Scalar>
void check_shapes(const DeformableAttentionInstance<Scalar>& inst) {
  const Index M = inst.num_levels();
  const Index N = inst.num_points();
  if (M < 1 || N < 1) throw DomainError("instance needs at least one level and one point");
  if (inst.logits.rows() != M) throw DomainError("logits must have one row per level");
  if (inst.reference_points.rows() != M) {
    throw DomainError("reference_points must have one row per level");
  }
  if (inst.offsets.rows() != M * N) throw DomainError("offsets must have M*N rows");
  if (static_cast<Index>(inst.projections.size()) != M * N) {
    throw DomainError("projections must hold M*N matrices");
  }
  const Index C = inst.channels();
  const Index C_out = inst.out_channels();
  if (C < 1 || C_out < 1) throw DomainError("channel counts must be positive");
  for (const auto& level : inst.levels) {
    if (level.height < 1 || level.width < 1) throw DomainError("levels must be non-empty");
    if (level.values.rows() != level.height * level.width) {
      throw DomainError("level values must have height*width rows");
    }
    if (level.channels() != C) throw DomainError("levels disagree on channel count");
  }
  for (const auto& W : inst.projections) {
    if (W.rows() != C_out || W.cols() != C) {
      throw DomainError("projection shapes must all be C_out x C");
    }
  }
}

// Bilinear interpolation with zero padding outside the grid.
template <typename Scalar>
Vector<Scalar> bilinear_sample(const FeatureLevel<Scalar>& level, const Point<Scalar>& loc) {
  using std::floor;
  using std::isfinite;
  if (!isfinite(loc.x()) || !isfinite(loc.y())) {
    throw DomainError("sampling location must be finite");
  }
  const Scalar fx0 = floor(loc.x());
  const Scalar fy0 = floor(loc.y());
  const Scalar ax = loc.x() - fx0;
  const Scalar ay = loc.y() - fy0;
  const auto x0 = static_cast<Index>(fx0);
  const auto y0 = static_cast<Index>(fy0);
  Vector<Scalar> out = Vector<Scalar>::Zero(level.channels());
  const Scalar wts[4] = {(1 - ax) * (1 - ay), ax * (1 - ay), (1 - ax) * ay, ax * ay};
  const Index xs[4] = {x0, x0 + 1, x0, x0 + 1};
  const Index ys[4] = {y0, y0, y0 + 1, y0 + 1};
  for (int k = 0; k < 4; ++k) {
    if (level.contains(xs[k], ys[k])) {
      out.noalias() += wts[k] * level.values.row(level.cell(xs[k], ys[k])).transpose();
    }
  }
  return out;
}

// Softmax over all M*N logits jointly, max-subtracted.
template <typename Scalar>
AttentionWeights<Scalar> normalize_weights(const Matrix<Scalar>& logits) {
  if (!logits.allFinite()) throw DomainError("logits must be finite");
  AttentionWeights<Scalar> w;
  w.logits = logits;
  w.weights = (logits.array() - logits.maxCoeff()).exp().matrix();
  w.weights /= w.weights.sum();
  return w;
}

// Gathers the N samples of level m into a C x N matrix.
template <typename Scalar>
Matrix<Scalar> sample_level(const DeformableAttentionInstance<Scalar>& inst, Index m) {
  Matrix<Scalar> samples(inst.channels(), inst.num_points());
  for (Index n = 0; n < inst.num_points(); ++n) {
    samples.col(n) = bilinear_sample(inst.levels[m], inst.location(m, n));
  }
  return samples;
}

template <typename Scalar>
Vector<Scalar> deformable_attention(const DeformableAttentionInstance<Scalar>& inst) {
  check_shapes(inst);
  const Matrix<Scalar> A = normalize_weights(inst.logits).weights;
  Vector<Scalar> out = Vector<Scalar>::Zero(inst.out_channels());
  for (Index m = 0; m < inst.num_levels(); ++m) {
    const Matrix<Scalar> samples = sample_level(inst, m);
    for (Index n = 0; n < inst.num_points(); ++n) {
      out.noalias() += A(m, n) * (inst.projection(m, n) * samples.col(n));
    }
  }
  return out;
}

// Same contract as deformable_attention, written as plain scalar loops with
// its own softmax and interpolation so the two paths share no code.
template <typename Scalar>
Vector<Scalar> naive_oracle(const DeformableAttentionInstance<Scalar>& inst) {
  check_shapes(inst);
  const Index M = inst.num_levels(), N = inst.num_points();
  const Index C = inst.channels(), C_out = inst.out_channels();

  Scalar top = inst.logits(0, 0);
  for (Index m = 0; m < M; ++m)
    for (Index n = 0; n < N; ++n) top = inst.logits(m, n) > top ? inst.logits(m, n) : top;
  std::vector<Scalar> weight(static_cast<std::size_t>(M * N));
  Scalar total = 0;
  for (Index m = 0; m < M; ++m) {
    for (Index n = 0; n < N; ++n) {
      weight[m * N + n] = std::exp(inst.logits(m, n) - top);
      total += weight[m * N + n];
    }
  }
  for (auto& w : weight) w /= total;

  std::vector<Scalar> out(static_cast<std::size_t>(C_out), Scalar(0));
  std::vector<Scalar> f(static_cast<std::size_t>(C));
  for (Index m = 0; m < M; ++m) {
    const auto& level = inst.levels[m];
    for (Index n = 0; n < N; ++n) {
      const Scalar x = inst.reference_points(m, 0) + inst.offsets(m * N + n, 0);
      const Scalar y = inst.reference_points(m, 1) + inst.offsets(m * N + n, 1);
      if (!std::isfinite(x) || !std::isfinite(y)) {
        throw DomainError("sampling location must be finite");
      }
      const Index x0 = static_cast<Index>(std::floor(x));
      const Index y0 = static_cast<Index>(std::floor(y));
      const Scalar ax = x - static_cast<Scalar>(x0);
      const Scalar ay = y - static_cast<Scalar>(y0);
      for (Index c = 0; c < C; ++c) {
        Scalar v = 0;
        for (Index dy = 0; dy <= 1; ++dy) {
          for (Index dx = 0; dx <= 1; ++dx) {
            const Index xx = x0 + dx, yy = y0 + dy;
            if (xx < 0 || yy < 0 || xx >= level.width || yy >= level.height) continue;
            const Scalar wx = dx ? ax : 1 - ax;
            const Scalar wy = dy ? ay : 1 - ay;
            v += wx * wy * level.values(yy * level.width + xx, c);
          }
        }
        f[c] = v;
      }
      const auto& W = inst.projections[m * N + n];
      for (Index o = 0; o < C_out; ++o) {
        Scalar proj = 0;
        for (Index c = 0; c < C; ++c) proj += W(o, c) * f[c];
        out[o] += weight[m * N + n] * proj;
      }
    }
  }
  Vector<Scalar> result(C_out);
  for (Index o = 0; o < C_out; ++o) result(o) = out[o];
  return result;
}

// Analytic gradients of L = ||deformable_attention(inst)||^2.
template <typename Scalar>
struct Gradients {
  Matrix<Scalar> logits;                     // M x N
  PointList<Scalar> offsets;                 // (M*N) x 2
  std::vector<RowMatrix<Scalar>> features;   // per level, like FeatureLevel::values
  std::vector<Matrix<Scalar>> projections;   // M*N, C_out x C
};

template <typename Scalar>
Scalar squared_norm_loss(const DeformableAttentionInstance<Scalar>& inst) {
  return deformable_attention(inst).squaredNorm();
}

template <typename Scalar>
Gradients<Scalar> loss_gradients(const DeformableAttentionInstance<Scalar>& inst) {
  check_shapes(inst);
  const Index M = inst.num_levels(), N = inst.num_points();
  const Matrix<Scalar> A = normalize_weights(inst.logits).weights;
  const Vector<Scalar> out = deformable_attention(inst);
  const Vector<Scalar> g = 2 * out;  // dL/dout

  Gradients<Scalar> grad;
  grad.offsets = PointList<Scalar>::Zero(M * N, 2);
  grad.projections.resize(static_cast<std::size_t>(M * N));
  for (const auto& level : inst.levels) {
    grad.features.push_back(RowMatrix<Scalar>::Zero(level.values.rows(), level.values.cols()));
  }
  Matrix<Scalar> dA(M, N);

  for (Index m = 0; m < M; ++m) {
    const auto& level = inst.levels[m];
    for (Index n = 0; n < N; ++n) {
      const Point<Scalar> loc = inst.location(m, n);
      const Vector<Scalar> s = bilinear_sample(level, loc);
      const Matrix<Scalar>& W = inst.projection(m, n);
      dA(m, n) = g.dot(W * s);
      grad.projections[inst.slot(m, n)] = A(m, n) * g * s.transpose();
      const Vector<Scalar> ds = A(m, n) * (W.transpose() * g);  // dL/dsample

      const Scalar fx0 = std::floor(loc.x()), fy0 = std::floor(loc.y());
      const Scalar ax = loc.x() - fx0, ay = loc.y() - fy0;
      const auto x0 = static_cast<Index>(fx0);
      const auto y0 = static_cast<Index>(fy0);
      Vector<Scalar> corner[4];
      const Index xs[4] = {x0, x0 + 1, x0, x0 + 1};
      const Index ys[4] = {y0, y0, y0 + 1, y0 + 1};
      const Scalar wts[4] = {(1 - ax) * (1 - ay), ax * (1 - ay), (1 - ax) * ay, ax * ay};
      for (int k = 0; k < 4; ++k) {
        if (level.contains(xs[k], ys[k])) {
          const Index cell = level.cell(xs[k], ys[k]);
          corner[k] = level.values.row(cell).transpose();
          grad.features[m].row(cell) += wts[k] * ds.transpose();
        } else {
          corner[k] = Vector<Scalar>::Zero(level.channels());
        }
      }
      const Vector<Scalar> dsdx = (1 - ay) * (corner[1] - corner[0]) + ay * (corner[3] - corner[2]);
      const Vector<Scalar> dsdy = (1 - ax) * (corner[2] - corner[0]) + ax * (corner[3] - corner[1]);
      grad.offsets(inst.slot(m, n), 0) = ds.dot(dsdx);
      grad.offsets(inst.slot(m, n), 1) = ds.dot(dsdy);
    }
  }
  // Softmax backward: dz = A .* (dA - <A, dA>).
  const Scalar mean = (A.array() * dA.array()).sum();
  grad.logits = (A.array() * (dA.array() - mean)).matrix();
  return grad;
}

enum class GradTarget { Logits, Offsets, Features, Projections };

inline const char* to_string(GradTarget t) {
  switch (t) {
    case GradTarget::Logits: return "logits";
    case GradTarget::Offsets: return "offsets";
    case GradTarget::Features: return "features";
    case GradTarget::Projections: return "projections";
  }
  return "?";
}

// Minimum distance of a sampling coordinate from a cell boundary before
// offset gradients are checked; the interpolant has kinks on integer lines.
inline constexpr double kCellBoundaryMargin = 1e-3;
// Denominator floor for relative error, so that vanishing gradients are
// compared on an absolute scale.
inline constexpr double kRelativeErrorFloor = 1e-6;

template <typename Scalar>
struct GradCheckResult {
  Scalar max_relative_error = 0;
  Scalar max_absolute_error = 0;
  Index coordinates = 0;
  std::string worst;  // coordinate with the largest relative error
};

// Throws PreconditionError naming the first sampling coordinate closer than
// kCellBoundaryMargin to a cell boundary.
template <typename Scalar>
void check_interior_offsets(const DeformableAttentionInstance<Scalar>& inst) {
  for (Index m = 0; m < inst.num_levels(); ++m) {
    for (Index n = 0; n < inst.num_points(); ++n) {
      const Point<Scalar> loc = inst.location(m, n);
      for (int axis = 0; axis < 2; ++axis) {
        const Scalar v = loc(axis);
        const Scalar dist = std::abs(v - std::round(v));
        if (dist < static_cast<Scalar>(kCellBoundaryMargin)) {
          std::ostringstream os;
          os << "offset (level " << m << ", point " << n << ", " << (axis ? 'y' : 'x')
             << ") puts the sample " << dist << " from a cell boundary";
          throw PreconditionError(os.str());
        }
      }
    }
  }
}

// Compares loss_gradients against central differences (L(x+h)-L(x-h))/2h on
// every coordinate of the chosen input.
template <typename Scalar>
GradCheckResult<Scalar> gradcheck(const DeformableAttentionInstance<Scalar>& inst,
                                  GradTarget wrt, Scalar h) {
  check_shapes(inst);
  if (!(h > 0)) throw DomainError("finite-difference step must be positive");
  if (wrt == GradTarget::Offsets) check_interior_offsets(inst);

  const Gradients<Scalar> grad = loss_gradients(inst);
  DeformableAttentionInstance<Scalar> probe = inst;
  GradCheckResult<Scalar> result;

  auto check = [&](Scalar& coord, Scalar analytic, const std::string& name) {
    const Scalar saved = coord;
    coord = saved + h;
    const Scalar up = squared_norm_loss(probe);
    coord = saved - h;
    const Scalar down = squared_norm_loss(probe);
    coord = saved;
    const Scalar numeric = (up - down) / (2 * h);
    const Scalar abs_err = std::abs(analytic - numeric);
    const Scalar denom = std::max({std::abs(analytic), std::abs(numeric),
                                   static_cast<Scalar>(kRelativeErrorFloor)});
    const Scalar rel = abs_err / denom;
    ++result.coordinates;
    result.max_absolute_error = std::max(result.max_absolute_error, abs_err);
    if (rel > result.max_relative_error || result.worst.empty()) {
      result.max_relative_error = std::max(result.max_relative_error, rel);
      result.worst = name;
    }
  };

  const Index M = inst.num_levels(), N = inst.num_points();
  switch (wrt) {
    case GradTarget::Logits:
      for (Index m = 0; m < M; ++m)
        for (Index n = 0; n < N; ++n)
          check(probe.logits(m, n), grad.logits(m, n),
                "logits(" + std::to_string(m) + "," + std::to_string(n) + ")");
      break;
    case GradTarget::Offsets:
      for (Index s = 0; s < M * N; ++s)
        for (Index a = 0; a < 2; ++a)
          check(probe.offsets(s, a), grad.offsets(s, a),
                "offsets(" + std::to_string(s) + "," + (a ? "y" : "x") + ")");
      break;
    case GradTarget::Features:
      for (Index m = 0; m < M; ++m) {
        auto& values = probe.levels[m].values;
        for (Index r = 0; r < values.rows(); ++r)
          for (Index c = 0; c < values.cols(); ++c)
            check(values(r, c), grad.features[m](r, c),
                  "features[" + std::to_string(m) + "](" + std::to_string(r) + "," +
                      std::to_string(c) + ")");
      }
      break;
    case GradTarget::Projections:
      for (std::size_t s = 0; s < probe.projections.size(); ++s) {
        auto& W = probe.projections[s];
        for (Index o = 0; o < W.rows(); ++o)
          for (Index c = 0; c < W.cols(); ++c)
            check(W(o, c), grad.projections[s](o, c),
                  "projections[" + std::to_string(s) + "](" + std::to_string(o) + "," +
                      std::to_string(c) + ")");
      }
      break;
  }
  return result;
}

struct InstanceShape {
  Index levels = 2;
  Index points = 4;
  Index channels = 8;
  Index out_channels = 8;
  std::vector<std::pair<Index, Index>> level_sizes{{5, 7}, {3, 4}};  // (height, width)
};

// Seeded instance with values in [-1, 1]. Sampling locations keep their
// fractional parts in [0.05, 0.95] and may fall up to one cell outside the
// grid, so offset gradients are well defined and zero padding is exercised.
template <typename Scalar>
DeformableAttentionInstance<Scalar> random_instance(std::uint64_t seed,
                                                    const InstanceShape& shape) {
  if (static_cast<Index>(shape.level_sizes.size()) != shape.levels) {
    throw DomainError("level_sizes must list one (height, width) per level");
  }
  SplitMix64 rng(seed);
  auto uni = [&](double lo, double hi) { return static_cast<Scalar>(rng.uniform(lo, hi)); };
  const Index M = shape.levels, N = shape.points, C = shape.channels;

  DeformableAttentionInstance<Scalar> inst;
  inst.query = Vector<Scalar>(C);
  for (Index c = 0; c < C; ++c) inst.query(c) = uni(-1, 1);
  inst.reference_points.resize(M, 2);
  inst.offsets.resize(M * N, 2);
  inst.logits.resize(M, N);
  for (Index m = 0; m < M; ++m) {
    const auto [h, w] = shape.level_sizes[static_cast<std::size_t>(m)];
    FeatureLevel<Scalar> level(h, w, C);
    for (Index r = 0; r < level.values.rows(); ++r)
      for (Index c = 0; c < C; ++c) level.values(r, c) = uni(-1, 1);
    inst.levels.push_back(std::move(level));
    inst.reference_points(m, 0) = uni(0, static_cast<double>(w - 1));
    inst.reference_points(m, 1) = uni(0, static_cast<double>(h - 1));
    for (Index n = 0; n < N; ++n) {
      const Scalar lx = static_cast<Scalar>(rng.range(-1, w - 1)) + uni(0.05, 0.95);
      const Scalar ly = static_cast<Scalar>(rng.range(-1, h - 1)) + uni(0.05, 0.95);
      inst.offsets(m * N + n, 0) = lx - inst.reference_points(m, 0);
      inst.offsets(m * N + n, 1) = ly - inst.reference_points(m, 1);
      inst.logits(m, n) = uni(-2, 2);
    }
  }
  for (Index s = 0; s < M * N; ++s) {
    Matrix<Scalar> W(shape.out_channels, C);
    for (Index o = 0; o < W.rows(); ++o)
      for (Index c = 0; c < C; ++c) W(o, c) = uni(-1, 1);
    inst.projections.push_back(std::move(W));
  }
  return inst;
}

// Random shape with M <= max_levels, N <= max_points, C, C_out <= max_channels
// and level sides in [1, 9].
inline InstanceShape random_shape(std::uint64_t seed, Index max_levels = 3, Index max_points = 8,
                                  Index max_channels = 16) {
  SplitMix64 rng(seed ^ 0x5eed5eed5eed5eedULL);
  InstanceShape s;
  s.levels = rng.range(1, max_levels);
  s.points = rng.range(1, max_points);
  s.channels = rng.range(1, max_channels);
  s.out_channels = rng.range(1, max_channels);
  s.level_sizes.clear();
  for (Index m = 0; m < s.levels; ++m) s.level_sizes.emplace_back(rng.range(1, 9), rng.range(1, 9));
  return s;
}

}  // namespace detbench::deformattn
