#include <raycal/raycal.hpp>

#include <gtest/gtest.h>

#include <cmath>
#include <map>
#include <sstream>

using namespace raycal;

namespace {

const std::string kFixture = std::string(RAYCAL_DATA_DIR) + "/lens_fixture.jsonl";

LensRecord make_record(const std::string& name, LensCategory cat, ParametricProfile profile = {}) {
  LensRecord r;
  r.name = name;
  r.fov_deg = 60.0;
  r.f_number = 2.8;
  r.numerical_aperture = 1.0 / 5.6;
  r.category = cat;
  r.profile = profile;
  return r;
}

std::string line_of(const LensRecord& r) { return record_to_json(r).dump() + "\n"; }

LensDatabase parse(const std::string& text) {
  std::istringstream in(text);
  return parse_database(in, "test");
}

std::string load_error(const std::string& text) {
  try {
    parse(text);
  } catch (const LoadError& e) {
    return e.what();
  }
  return "";
}

/// Sub-pixel row where column x of the image crosses `level`, searched in [y0, y1).
double crossing_row(const Image& img, int x, int y0, int y1, double level) {
  for (int y = y0; y + 1 < y1; ++y) {
    const double a = img.at(x, y) - level;
    const double b = img.at(x, y + 1) - level;
    if (a == 0.0) return y + 0.5;
    if ((a < 0) != (b < 0)) return y + 0.5 + a / (a - b);
  }
  return std::nan("");
}

/// RMS distance of points from their least-squares line y = m x + c.
double line_fit_residual(const std::vector<Vec2>& pts) {
  Eigen::MatrixXd a(pts.size(), 2);
  Eigen::VectorXd b(pts.size());
  for (std::size_t n = 0; n < pts.size(); ++n) {
    a(n, 0) = pts[n].x();
    a(n, 1) = 1.0;
    b(n) = pts[n].y();
  }
  const Eigen::Vector2d mc = a.colPivHouseholderQr().solve(b);
  return std::sqrt((a * mc - b).squaredNorm() / pts.size()) / std::sqrt(1.0 + mc(0) * mc(0));
}

}  // namespace

TEST(LoadDatabase, EmptyListFails) {
  const std::string msg = load_error("");
  EXPECT_NE(msg.find("empty database"), std::string::npos) << msg;
  EXPECT_NE(load_error("\n  \n").find("empty database"), std::string::npos);
}

TEST(LoadDatabase, FixtureHasTwoRecordsPerCategory) {
  const LensDatabase db = load_database(kFixture);
  ASSERT_EQ(db.records.size(), 12u);
  std::map<LensCategory, int> counts;
  for (const auto& r : db.records) ++counts[r.category];
  for (LensCategory c : kAllCategories) EXPECT_EQ(counts[c], 2) << to_string(c);
}

TEST(LoadDatabase, FixtureMatchesGenerator) {
  const LensDatabase db = load_database(kFixture);
  const LensDatabase gen = generate_fixture_database(20240611);
  ASSERT_EQ(db.records.size(), gen.records.size());
  for (std::size_t k = 0; k < db.records.size(); ++k)
    EXPECT_EQ(record_to_json(db.records[k]), record_to_json(gen.records[k]));
}

TEST(LoadDatabase, DuplicateNameIsNamed) {
  const auto r = make_record("twin", LensCategory::barrel, ParametricProfile::radial(-0.05, 0, 300));
  const std::string msg = load_error(line_of(r) + line_of(r));
  EXPECT_NE(msg.find("duplicate name 'twin'"), std::string::npos) << msg;
}

TEST(LoadDatabase, EveryBadRecordIsListed) {
  auto good = make_record("good", LensCategory::barrel);
  auto wide = make_record("too-wide", LensCategory::barrel);
  wide.fov_deg = 190.0;
  auto dark = make_record("bad-na", LensCategory::shear);
  dark.numerical_aperture = 1.5;
  const std::string msg = load_error(line_of(good) + line_of(wide) + "{not json\n" + line_of(dark));
  EXPECT_NE(msg.find("3 invalid record(s)"), std::string::npos) << msg;
  EXPECT_NE(msg.find("'too-wide'"), std::string::npos);
  EXPECT_NE(msg.find("'bad-na'"), std::string::npos);
  EXPECT_NE(msg.find("line 3"), std::string::npos);
  EXPECT_EQ(msg.find("'good'"), std::string::npos);
}

TEST(LoadDatabase, MissingFileIsLoadError) { EXPECT_THROW(load_database("/nonexistent/lens.jsonl"), LoadError); }

TEST(ValidateRecord, FieldOfViewLimitsDependOnCategory) {
  auto r = make_record("r", LensCategory::barrel);
  r.fov_deg = 179.9;
  EXPECT_NO_THROW(validate_record(r));
  r.fov_deg = 180.0;
  EXPECT_THROW(validate_record(r), ParameterError);
  r.category = LensCategory::fisheye;
  r.fov_deg = 220.0;
  EXPECT_NO_THROW(validate_record(r));
  r.fov_deg = 220.5;
  EXPECT_THROW(validate_record(r), ParameterError);
  r.fov_deg = 0.0;
  EXPECT_THROW(validate_record(r), ParameterError);
}

TEST(ValidateRecord, ApertureAndFNumber) {
  auto r = make_record("r", LensCategory::pincushion);
  r.f_number = 0.0;
  EXPECT_THROW(validate_record(r), ParameterError);
  r = make_record("r", LensCategory::pincushion);
  r.numerical_aperture = 1.0;
  EXPECT_THROW(validate_record(r), ParameterError);
  r.numerical_aperture = 0.0;
  EXPECT_THROW(validate_record(r), ParameterError);
}

TEST(ValidateRecord, RejectsDistortionBeyondHalf) {
  auto r = make_record("r", LensCategory::barrel, ParametricProfile::radial(-0.6, 0.0, half_diagonal(448, 448)));
  EXPECT_THROW(validate_record(r), ParameterError);
}

TEST(ValidateRecord, FixtureRecordsStayInvertible) {
  for (const auto& r : load_database(kFixture).records) {
    EXPECT_LE(record_distortion_percent(r), 50.0) << r.name;
    const DistortionField f = field_for(r, 448, 448);
    const DistortionField g = invert_field(f, 1e-3);
    double worst = 0.0;
    for (int i = 0; i < 33; ++i)
      for (int j = 0; j < 33; ++j) worst = std::max(worst, inversion_residual(f, g, Vec2(j / 32.0, i / 32.0)));
    EXPECT_LT(worst, 1e-3) << r.name;
  }
}

TEST(SampleProfile, SingleRecordAlwaysReturned) {
  LensDatabase db;
  db.records.push_back(make_record("only", LensCategory::shear));
  for (std::uint64_t seed = 0; seed < 50; ++seed) EXPECT_EQ(sample_profile(db, seed).name, "only");
}

TEST(SampleProfile, SameSeedSameRecord) {
  const LensDatabase db = load_database(kFixture);
  for (std::uint64_t seed : {0ull, 1ull, 99ull, 123456789ull}) {
    EXPECT_EQ(sample_profile(db, seed).name, sample_profile(db, seed).name);
    EXPECT_EQ(sample_profile(db, seed, LensCategory::fisheye).name, sample_profile(db, seed, LensCategory::fisheye).name);
  }
}

TEST(SampleProfile, PinnedDraws) {
  const LensDatabase db = load_database(kFixture);
  EXPECT_EQ(sample_profile(db, 7).name, "fisheye-01");
  EXPECT_EQ(sample_profile(db, 123, LensCategory::barrel).name, "barrel-00");
}

TEST(SampleProfile, CategoryFilterHonored) {
  const LensDatabase db = load_database(kFixture);
  for (std::uint64_t seed = 0; seed < 200; ++seed)
    EXPECT_EQ(sample_profile(db, seed, LensCategory::asymmetric).category, LensCategory::asymmetric);
}

TEST(SampleProfile, EmptyCategoryIsParameterError) {
  LensDatabase db;
  db.records.push_back(make_record("b", LensCategory::barrel));
  EXPECT_THROW(sample_profile(db, 1, LensCategory::fisheye), ParameterError);
}

TEST(SampleProfile, FourCategoriesAreUniform) {
  LensDatabase db;
  const LensCategory cats[] = {LensCategory::barrel, LensCategory::pincushion, LensCategory::fisheye,
                               LensCategory::shear};
  for (LensCategory c : cats)
    for (int n = 0; n < 3; ++n) db.records.push_back(make_record(std::string(to_string(c)) + std::to_string(n), c));
  constexpr int kDraws = 10000;
  std::map<LensCategory, int> counts;
  for (int s = 0; s < kDraws; ++s) ++counts[sample_profile(db, static_cast<std::uint64_t>(s)).category];
  const double sigma = std::sqrt(kDraws * 0.25 * 0.75);
  for (LensCategory c : cats) EXPECT_LT(std::abs(counts[c] - kDraws * 0.25), 4.0 * sigma) << to_string(c);
}

TEST(AugmentSequence, IdentityProfileKeepsImagesBitIdentical) {
  const Image img = checkerboard(64, 48, 8);
  const auto aug = augment_sequence({img, img}, make_record("id", LensCategory::barrel));
  ASSERT_EQ(aug.images.size(), 2u);
  for (const auto& out : aug.images) EXPECT_EQ(out.data, img.data);
}

TEST(AugmentSequence, OneFieldForAllFrames) {
  const LensDatabase db = load_database(kFixture);
  const LensRecord& barrel = sample_profile(db, 3, LensCategory::barrel);
  const Image a = checkerboard(64, 64, 8);
  Image b = checkerboard(64, 64, 5);
  const auto aug = augment_sequence({a, b, a}, barrel);
  const FlowMap flow = flow_from_field(aug.field, 64, 64);
  EXPECT_EQ(aug.images[0].data, remap_image(a, flow).data);
  EXPECT_EQ(aug.images[1].data, remap_image(b, flow).data);
  EXPECT_EQ(aug.images[0].data, aug.images[2].data);
  EXPECT_EQ(field_to_json(aug.field), field_to_json(field_for(barrel, 64, 64)));
}

TEST(AugmentSequence, MixedDimensionsRejected) {
  EXPECT_THROW(augment_sequence({Image(8, 8), Image(8, 9)}, make_record("x", LensCategory::barrel)), ParameterError);
  EXPECT_THROW(augment_sequence({}, make_record("x", LensCategory::barrel)), ParameterError);
}

TEST(AugmentSequence, FisheyeBendsStraightEdges) {
  const LensDatabase db = load_database(kFixture);
  const LensRecord& fisheye = sample_profile(db, 1, LensCategory::fisheye);
  const int size = 256;
  const double square = 32.0;
  const Image board = checkerboard(size, size, square, 1.0);
  const Image bent = augment_sequence({board}, fisheye).images.front();
  const double mid = 0.5 * (32.0 + 224.0);
  // trace the first horizontal edge below the top row of squares
  auto trace = [&](const Image& img) {
    std::vector<Vec2> pts;
    for (int x = 40; x < size - 40; ++x) {
      const double y = crossing_row(img, x, 16, 56, mid);
      if (std::isfinite(y)) pts.emplace_back(x + 0.5, y);
    }
    return pts;
  };
  const auto straight = trace(board);
  const auto curved = trace(bent);
  ASSERT_GT(straight.size(), 150u);
  ASSERT_GT(curved.size(), 150u);
  const double before = line_fit_residual(straight);
  const double after = line_fit_residual(curved);
  EXPECT_LT(before, 0.05);
  EXPECT_GT(after, 10.0 * before + 0.5);
}
