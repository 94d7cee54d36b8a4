#include <raycal/fit.hpp>
#include <raycal/ray_camera.hpp>

#include <Eigen/Geometry>
#include <gtest/gtest.h>

#include "test_util.hpp"

using namespace raycal;

namespace {

double quaternion_angle_deg(const Mat3& a, const Mat3& b) {
  return rad2deg(Eigen::Quaterniond(a).angularDistance(Eigen::Quaterniond(b)));
}

Mat3 rot_z(double deg) { return Eigen::AngleAxisd(deg2rad(deg), Vec3::UnitZ()).toRotationMatrix(); }

}  // namespace

TEST(LiftPixel, PrincipalRay) {
  const Vec3 d = lift_pixel(testutil::intrinsics(1, 0, 0), Vec2(0, 0));
  EXPECT_NEAR((d - Vec3(0, 0, 1)).norm(), 0.0, 1e-15);
}

TEST(LiftPixel, UnitOffsetIsNormalized) {
  const Vec3 d = lift_pixel(testutil::intrinsics(1, 0, 0), Vec2(1, 0));
  EXPECT_NEAR((d - Vec3(1, 0, 1) / std::sqrt(2.0)).norm(), 0.0, 1e-15);
}

TEST(LiftPixel, RadialProfileMatchesScalarEvaluation) {
  // k1 = -0.1 about the principal point, normalization radius 50 px.
  const auto profile = ParametricProfile::radial(-0.1, 0.0, 50.0);
  const Vec3 d = lift_pixel(testutil::intrinsics(100, 0, 0), Vec2(10, 0), profile);
  const double r = 10.0 / 50.0;
  const double u = 10.0 * (1.0 - 0.1 * r * r);  // 9.96
  const double x = u / 100.0;
  const Vec3 expected = Vec3(x, 0, 1) / std::sqrt(x * x + 1.0);
  EXPECT_NEAR((d - expected).norm(), 0.0, 1e-15);
}

TEST(LiftPixel, NonInvertibleIntrinsicsThrow) {
  Intrinsics k = testutil::intrinsics(0, 0, 0);
  EXPECT_THROW(lift_pixel(k, Vec2(1, 1)), ParameterError);
  k.fx = 1;
  k.fy = -1;
  EXPECT_THROW(lift_pixel(k, Vec2(1, 1)), ParameterError);
}

TEST(BundleFromCamera, TwoByTwoThroughPixelCenters) {
  const RayBundle b = bundle_from_camera(testutil::intrinsics(1, 1, 1), Pose{}, std::nullopt, 2, 2, 2, 2);
  ASSERT_EQ(b.size(), 4u);
  const Vec2 centers[] = {{0.5, 0.5}, {1.5, 0.5}, {0.5, 1.5}, {1.5, 1.5}};
  for (std::size_t k = 0; k < 4; ++k) {
    EXPECT_EQ(b.origins[k], Vec3::Zero());
    const Vec3 expected = Vec3(centers[k].x() - 1, centers[k].y() - 1, 1).normalized();
    EXPECT_NEAR((b.directions[k] - expected).norm(), 0.0, 1e-15);
  }
}

TEST(BundleFromCamera, InputResolutionGridCornerSigns) {
  const RayBundle b = bundle_from_camera(testutil::intrinsics(400, 224, 224), Pose{}, std::nullopt, 16, 16, 448, 448);
  EXPECT_EQ(b.rows, 16);
  EXPECT_EQ(b.cols, 16);
  EXPECT_LT(b.directions[b.index(0, 0)].x(), 0.0);
  EXPECT_GT(b.directions[b.index(0, 15)].x(), 0.0);
  EXPECT_LT(b.directions[b.index(15, 0)].x(), 0.0);
  EXPECT_GT(b.directions[b.index(15, 15)].x(), 0.0);
}

TEST(BundleFromCamera, AllRaysLeaveTheCameraCenter) {
  CounterRng rng(11);
  for (int trial = 0; trial < 10; ++trial) {
    const Intrinsics k = testutil::intrinsics(rng.uniform(100, 900), rng.uniform(40, 80), rng.uniform(40, 80));
    const Pose pose = testutil::random_pose(rng);
    const RayBundle b = bundle_from_camera(k, pose, std::nullopt, 8, 8, 128, 128);
    for (std::size_t i = 0; i < b.size(); ++i) {
      EXPECT_NEAR((b.origins[i] - pose.translation).norm(), 0.0, 1e-12);
      // a point along the ray projects back onto its patch center
      const Vec3 x = pose.rotation * (b.origins[i] + 3.0 * b.directions[i] - pose.translation);
      EXPECT_NEAR((k.project(x) - b.patch_pixel(i)).norm(), 0.0, 1e-9);
    }
    EXPECT_NEAR((intersect_rays(b) - pose.translation).norm(), 0.0, 1e-9);
  }
}

TEST(BundleFromCamera, RejectsTinyGrid) {
  EXPECT_THROW(bundle_from_camera(testutil::intrinsics(1, 0, 0), Pose{}, std::nullopt, 1, 4, 4, 4), ParameterError);
  EXPECT_THROW(bundle_from_camera(testutil::intrinsics(1, 0, 0), Pose{}, std::nullopt, 2, 2, 0, 4), ParameterError);
}

TEST(ToWorld, IdentityPoseLeavesBundle) {
  CounterRng rng(3);
  RayBundle b(3, 3);
  for (std::size_t k = 0; k < b.size(); ++k) {
    b.origins[k] = Vec3(rng.normal(), rng.normal(), rng.normal());
    b.directions[k] = testutil::random_unit(rng);
  }
  const RayBundle w = to_world(b, Pose{});
  EXPECT_EQ(w.origins, b.origins);
  EXPECT_EQ(w.directions, b.directions);
}

TEST(ToWorld, PureTranslationShiftsOrigins) {
  RayBundle b(1, 2);
  b.directions[1] = Vec3(1, 0, 0);
  Pose p;
  p.translation = Vec3(1, 2, 3);
  const RayBundle w = to_world(b, p);
  for (std::size_t k = 0; k < 2; ++k) {
    EXPECT_EQ(w.origins[k], Vec3(1, 2, 3));
    EXPECT_EQ(w.directions[k], b.directions[k]);
  }
}

TEST(ToWorld, QuarterTurnAboutZ) {
  RayBundle b(1, 1);
  b.directions[0] = Vec3(1, 0, 0);
  Pose p;
  p.rotation = rot_z(90);
  EXPECT_NEAR((to_world(b, p).directions[0] - Vec3(0, -1, 0)).norm(), 0.0, 1e-15);
}

TEST(ToWorld, PreservesUnitNorm) {
  CounterRng rng(5);
  RayBundle b(10, 10);
  for (auto& d : b.directions) d = testutil::random_unit(rng);
  for (int n = 0; n < 20; ++n) {
    const RayBundle w = to_world(b, testutil::random_pose(rng));
    for (const auto& d : w.directions) EXPECT_NEAR(d.norm(), 1.0, 1e-12);
  }
}

TEST(Plucker, OriginThroughZeroHasZeroMoment) {
  CounterRng rng(1);
  EXPECT_EQ(to_plucker(Vec3::Zero(), testutil::random_unit(rng)).moment, Vec3::Zero());
}

TEST(Plucker, MomentIsCrossProduct) {
  const PluckerRay r = to_plucker(Vec3(1, 0, 0), Vec3(0, 1, 0));
  EXPECT_EQ(r.moment, Vec3(0, 0, 1));
}

TEST(Plucker, RoundTripStaysOnTheLine) {
  CounterRng rng(2);
  for (int n = 0; n < 200; ++n) {
    const Vec3 o(rng.uniform(-10, 10), rng.uniform(-10, 10), rng.uniform(-10, 10));
    const Vec3 d = testutil::random_unit(rng);
    const PluckerRay r = to_plucker(o, d);
    EXPECT_NEAR(r.direction.dot(r.moment), 0.0, 1e-9);
    EXPECT_NEAR(r.direction.norm(), 1.0, 1e-12);
    const auto [point, dir] = from_plucker(r);
    // point-to-line distance |(p - o) x d|
    EXPECT_LT((point - o).cross(d).norm(), 1e-9);
    EXPECT_NEAR((dir - d).norm(), 0.0, 1e-12);
    // closest point to the world origin is perpendicular to the direction
    EXPECT_NEAR(point.dot(d), 0.0, 1e-9);
  }
}

TEST(Plucker, ZeroDirectionThrows) {
  EXPECT_THROW(to_plucker(Vec3(1, 2, 3), Vec3::Zero()), ParameterError);
  EXPECT_THROW(from_plucker(PluckerRay{Vec3::Zero(), Vec3(1, 0, 0)}), ParameterError);
}

TEST(NormalizeScene, SingleCanonicalCameraUnchanged) {
  Pose p;
  p.translation = Vec3(0, 0.6, 0.8);
  const auto out = normalize_scene({p});
  EXPECT_NEAR((out[0].rotation - Mat3::Identity()).norm(), 0.0, 1e-15);
  EXPECT_NEAR((out[0].translation - p.translation).norm(), 0.0, 1e-15);
}

TEST(NormalizeScene, TwoCamerasFirstScaledByFive) {
  CounterRng rng(8);
  Pose a = testutil::random_pose(rng), b = testutil::random_pose(rng);
  a.translation = a.translation.normalized() * 5.0;
  const auto out = normalize_scene({a, b});
  EXPECT_NEAR(out[0].translation.norm(), 1.0, 1e-12);
  EXPECT_NEAR((out[0].rotation - Mat3::Identity()).norm(), 0.0, 1e-15);
  EXPECT_NEAR(quaternion_angle_deg(a.rotation * b.rotation.transpose(), out[0].rotation * out[1].rotation.transpose()),
              0.0, 1e-6);
  // distances shrink by the same factor
  EXPECT_NEAR((out[1].translation - out[0].translation).norm(), (b.translation - a.translation).norm() / 5.0, 1e-12);
}

TEST(NormalizeScene, PairwiseRotationDistancesPreserved) {
  CounterRng rng(9);
  std::vector<Pose> poses;
  for (int n = 0; n < 8; ++n) poses.push_back(testutil::random_pose(rng));
  const auto out = normalize_scene(poses);
  for (std::size_t i = 0; i < poses.size(); ++i)
    for (std::size_t j = i + 1; j < poses.size(); ++j) {
      const double before = quaternion_angle_deg(poses[i].rotation, poses[j].rotation);
      const double after = quaternion_angle_deg(out[i].rotation, out[j].rotation);
      EXPECT_NEAR(before, after, 1e-9);
    }
}

TEST(NormalizeScene, Idempotent) {
  CounterRng rng(10);
  std::vector<Pose> poses;
  for (int n = 0; n < 6; ++n) poses.push_back(testutil::random_pose(rng));
  const auto once = normalize_scene(poses);
  const auto twice = normalize_scene(once);
  for (std::size_t i = 0; i < once.size(); ++i) {
    EXPECT_LT((once[i].rotation - twice[i].rotation).cwiseAbs().maxCoeff(), 1e-9);
    EXPECT_LT((once[i].translation - twice[i].translation).cwiseAbs().maxCoeff(), 1e-9);
  }
}

TEST(NormalizeScene, DegenerateScaleIsFlagged) {
  CounterRng rng(12);
  Pose a = testutil::random_pose(rng);
  a.translation = Vec3(1e-13, 0, 0);
  const Pose b = testutil::random_pose(rng);
  EXPECT_THROW(normalize_scene({a, b}), DegenerateError);
  const NormalizedScene s = normalize_scene_checked({a, b});
  EXPECT_TRUE(s.degenerate_scale);
  EXPECT_EQ(s.scale, 1.0);
  EXPECT_NEAR((s.poses[1].translation - a.rotation * b.translation).norm(), 0.0, 1e-12);
  EXPECT_THROW(normalize_scene({}), ParameterError);
}

TEST(RayBundle, ValidateRejectsNonUnitDirection) {
  RayBundle b(2, 2);
  EXPECT_NO_THROW(b.validate());
  b.directions[3] = Vec3(0, 0, 1.001);
  EXPECT_THROW(b.validate(), ParameterError);
  b.directions[3] = Vec3(0, 0, 1);
  b.origins[0] = Vec3(std::nan(""), 0, 0);
  EXPECT_THROW(b.validate(), ParameterError);
}

TEST(RayBundle, PatchCentersTileTheImage) {
  const RayBundle b(4, 8, 64, 32);
  EXPECT_EQ(b.patch_pixel(0, 0), Vec2(4, 4));
  EXPECT_EQ(b.patch_pixel(3, 7), Vec2(60, 28));
  EXPECT_EQ(b.patch_pixel(b.index(2, 5)), Vec2(44, 20));
}
