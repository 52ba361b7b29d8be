#include <doctest.h>

#include "detbench/deformattn.hpp"
#include "detbench/deformattn_io.hpp"

using namespace detbench;
using namespace detbench::deformattn;

namespace {

Instance single_lookup(const FeatureLevel<double>& level, Point<double> at) {
  Instance inst;
  const Index C = level.channels();
  inst.query = Vector<double>::Zero(C);
  inst.levels = {level};
  inst.reference_points = PointList<double>(1, 2);
  inst.reference_points.row(0) = at.transpose();
  inst.offsets = PointList<double>::Zero(1, 2);
  inst.logits = Matrix<double>::Zero(1, 1);
  inst.projections = {Matrix<double>::Identity(C, C)};
  return inst;
}

FeatureLevel<double> ramp_level(Index h, Index w, Index c) {
  FeatureLevel<double> level(h, w, c);
  for (Index r = 0; r < h * w; ++r)
    for (Index ch = 0; ch < c; ++ch) level.values(r, ch) = 0.5 * r - 1.25 * ch + 0.1 * r * ch;
  return level;
}

}  // namespace

TEST_CASE("bilinear sampling") {
  const FeatureLevel<double> level = ramp_level(3, 4, 2);
  SUBCASE("grid points are exact") {
    for (Index y = 0; y < 3; ++y)
      for (Index x = 0; x < 4; ++x) {
        const Vector<double> v = bilinear_sample(level, Point<double>(x, y));
        CHECK(v == level.values.row(level.cell(x, y)).transpose());
      }
  }
  SUBCASE("midpoint of a 1x2 level") {
    FeatureLevel<double> two(1, 2, 1);
    two.values << 3.0, 8.0;
    CHECK(bilinear_sample(two, Point<double>(0.5, 0))(0) == 5.5);
  }
  SUBCASE("fully outside is zero") {
    CHECK(bilinear_sample(level, Point<double>(-1, -1)).isZero(0));
    CHECK(bilinear_sample(level, Point<double>(4, 1)).isZero(0));
  }
  SUBCASE("half outside blends with zero padding") {
    const Vector<double> v = bilinear_sample(level, Point<double>(-0.5, 0));
    CHECK(v.isApprox(0.5 * level.values.row(0).transpose()));
  }
}

TEST_CASE("softmax over all levels and points") {
  SUBCASE("equal logits") {
    const auto w = normalize_weights<double>(Matrix<double>::Constant(3, 4, 0.7)).weights;
    CHECK(w.isApproxToConstant(1.0 / 12.0, 1e-15));
  }
  SUBCASE("saturation") {
    Matrix<double> logits = Matrix<double>::Zero(2, 3);
    logits(1, 2) = 1000;
    const auto w = normalize_weights(logits).weights;
    CHECK(std::abs(w(1, 2) - 1.0) <= 1e-12);
  }
  SUBCASE("shift invariance") {
    Matrix<double> logits(2, 2);
    logits << 0.1, -0.4, 2.0, 0.3;
    const auto a = normalize_weights(logits).weights;
    const auto b = normalize_weights<double>((logits.array() + 17.0).matrix()).weights;
    CHECK((a - b).cwiseAbs().maxCoeff() <= 1e-15);
    CHECK(a.sum() == doctest::Approx(1.0).epsilon(1e-15));
  }
  SUBCASE("non-finite logits") {
    Matrix<double> logits = Matrix<double>::Zero(1, 2);
    logits(0, 1) = std::numeric_limits<double>::infinity();
    CHECK_THROWS_AS(normalize_weights(logits), DomainError);
  }
}

TEST_CASE("forward pass") {
  SUBCASE("single lookup returns the cell") {
    const FeatureLevel<double> level = ramp_level(3, 4, 3);
    const Instance inst = single_lookup(level, Point<double>(2, 1));
    CHECK(deformable_attention(inst) == level.values.row(level.cell(2, 1)).transpose());
    CHECK(naive_oracle(inst) == level.values.row(level.cell(2, 1)).transpose());
  }
  SUBCASE("zero features give zero output") {
    Instance inst = random_instance<double>(3, InstanceShape{});
    for (auto& l : inst.levels) l.values.setZero();
    CHECK(deformable_attention(inst).isZero(0));
    CHECK(naive_oracle(inst).isZero(0));
  }
  SUBCASE("single level single point is weight times projected sample") {
    InstanceShape shape;
    shape.levels = 1;
    shape.points = 1;
    shape.level_sizes = {{4, 5}};
    const Instance inst = random_instance<double>(8, shape);
    const Vector<double> expect =
        inst.projection(0, 0) * bilinear_sample(inst.levels[0], inst.location(0, 0));
    CHECK((naive_oracle(inst) - expect).cwiseAbs().maxCoeff() <= 1e-15);
  }
  SUBCASE("seeded default instance matches the oracle") {
    const Instance inst = random_instance<double>(42, InstanceShape{});
    CHECK(inst.num_levels() == 2);
    CHECK(inst.num_points() == 4);
    CHECK(inst.channels() == 8);
    CHECK((deformable_attention(inst) - naive_oracle(inst)).cwiseAbs().maxCoeff() <= 1e-12);
  }
  SUBCASE("random shapes match the oracle") {
    for (std::uint64_t s = 0; s < 100; ++s) {
      const InstanceShape shape = random_shape(s);
      CHECK(shape.levels <= 3);
      CHECK(shape.points <= 8);
      CHECK(shape.channels <= 16);
      const Instance inst = random_instance<double>(s, shape);
      CHECK((deformable_attention(inst) - naive_oracle(inst)).cwiseAbs().maxCoeff() <= 1e-12);
    }
  }
  SUBCASE("single precision instantiation") {
    const auto inst = random_instance<float>(5, InstanceShape{});
    CHECK((deformable_attention(inst) - naive_oracle(inst)).cwiseAbs().maxCoeff() <= 1e-5f);
  }
  SUBCASE("shape errors") {
    Instance inst = random_instance<double>(1, InstanceShape{});
    inst.offsets.conservativeResize(3, 2);
    CHECK_THROWS_AS(deformable_attention(inst), DomainError);
  }
}

TEST_CASE("gradients") {
  const Instance inst = random_instance<double>(42, InstanceShape{});
  for (GradTarget t : {GradTarget::Logits, GradTarget::Offsets, GradTarget::Features,
                       GradTarget::Projections}) {
    INFO(to_string(t));
    const auto r = gradcheck(inst, t, 1e-5);
    CHECK(r.max_relative_error < 1e-4);
    CHECK(r.coordinates > 0);
  }
  SUBCASE("flat features give zero offset gradient") {
    Instance flat = inst;
    for (auto& l : flat.levels) l.values.setConstant(0.25);
    // Keep every sample fully inside so that zero padding does not create slopes.
    for (Index m = 0; m < flat.num_levels(); ++m)
      for (Index n = 0; n < flat.num_points(); ++n) {
        const Index s = flat.slot(m, n);
        flat.offsets(s, 0) = 0.3 - flat.reference_points(m, 0) + 1.0;
        flat.offsets(s, 1) = 0.6 - flat.reference_points(m, 1) + 1.0;
      }
    CHECK(loss_gradients(flat).offsets.cwiseAbs().maxCoeff() == 0.0);
    CHECK(gradcheck(flat, GradTarget::Offsets, 1e-5).max_absolute_error <= 1e-9);
  }
  SUBCASE("offsets on a cell boundary are rejected") {
    Instance edge = inst;
    edge.offsets(0, 0) = std::round(edge.location(0, 0).x()) - edge.reference_points(0, 0);
    CHECK_THROWS_AS(gradcheck(edge, GradTarget::Offsets, 1e-5), PreconditionError);
    CHECK_NOTHROW(gradcheck(edge, GradTarget::Logits, 1e-5));
  }
  SUBCASE("non-positive step") {
    CHECK_THROWS_AS(gradcheck(inst, GradTarget::Logits, 0.0), DomainError);
  }
}

TEST_CASE("further seeded instances pass every gradient check") {
  for (std::uint64_t s = 43; s <= 62; ++s) {
    const Instance inst = random_instance<double>(s, InstanceShape{});
    for (GradTarget t : {GradTarget::Logits, GradTarget::Offsets, GradTarget::Features,
                         GradTarget::Projections}) {
      INFO("seed " << s << " " << to_string(t));
      CHECK(gradcheck(inst, t, 1e-5).max_relative_error < 1e-4);
    }
  }
}

TEST_CASE("level reference mapping") {
  FeatureLevel<double> level(4, 8, 1);
  const Point<double> p = level_reference(Point<double>(0.5, 0.5), level);
  CHECK(p.x() == 3.5);
  CHECK(p.y() == 1.5);
}

TEST_CASE("instance documents round-trip") {
  const Instance inst = random_instance<double>(9, random_shape(9));
  const Instance back = parse_instance_text(serialize_instance(inst));
  CHECK(serialize_instance(back) == serialize_instance(inst));
  CHECK(deformable_attention(back) == deformable_attention(inst));
  CHECK_THROWS_AS(parse_instance_text("{\"levels\": []}"), Error);
  CHECK_THROWS_AS(parse_instance_text("{\"levels\": [{\"height\": \"x\"}]}"), SchemaError);
  CHECK_THROWS_AS(parse_instance_text("[1,"), ParseError);
}

TEST_CASE("kernel check report") {
  const KernelCheckReport r = kernel_check(42, 10, 1e-5);
  CHECK(r.trials == 10);
  CHECK(r.gradient_instances == 3);
  CHECK(r.passed());
}
