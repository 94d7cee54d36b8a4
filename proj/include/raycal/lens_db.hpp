#pragma once

// Lens-profile database: JSON-lines records, validation, seeded sampling,
// and sequence augmentation.

#include <raycal/aberration.hpp>
#include <raycal/distortion.hpp>
#include <raycal/image.hpp>
#include <raycal/io.hpp>
#include <raycal/rng.hpp>

#include <fstream>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <variant>
#include <vector>

namespace raycal {

enum class LensCategory { barrel, pincushion, fisheye, shear, symmetric, asymmetric };

inline constexpr LensCategory kAllCategories[] = {LensCategory::barrel,    LensCategory::pincushion,
                                                  LensCategory::fisheye,   LensCategory::shear,
                                                  LensCategory::symmetric, LensCategory::asymmetric};

inline std::string_view to_string(LensCategory c) {
  switch (c) {
    case LensCategory::barrel: return "barrel";
    case LensCategory::pincushion: return "pincushion";
    case LensCategory::fisheye: return "fisheye";
    case LensCategory::shear: return "shear";
    case LensCategory::symmetric: return "symmetric";
    case LensCategory::asymmetric: return "asymmetric";
  }
  return "unknown";
}

inline LensCategory lens_category_from_string(std::string_view name) {
  for (auto c : kAllCategories)
    if (to_string(c) == name) return c;
  throw ParameterError("unknown lens category '" + std::string(name) + "'");
}

/// One lens. The profile is authored for an image of reference size and is
/// rescaled to whatever image it is applied to.
struct LensRecord {
  std::string name;
  double fov_deg = 0.0;
  double f_number = 0.0;
  double numerical_aperture = 0.0;
  LensCategory category = LensCategory::barrel;
  double reference_width = 448.0;
  double reference_height = 448.0;
  std::variant<ParametricProfile, DistortionField> profile;

  bool is_parametric() const { return std::holds_alternative<ParametricProfile>(profile); }
};

/// D(p) of a record for an image of size w x h, centered on the image.
inline PixelMap aberration_for(const LensRecord& record, double image_w, double image_h) {
  if (const auto* p = std::get_if<ParametricProfile>(&record.profile)) {
    ParametricProfile scaled = *p;
    scaled.normalization_radius *=
        half_diagonal(image_w, image_h) / half_diagonal(record.reference_width, record.reference_height);
    return profile_map(scaled, Vec2(0.5 * image_w, 0.5 * image_h));
  }
  return field_map(rescaled(std::get<DistortionField>(record.profile), image_w, image_h));
}

/// Displacement field of a record for an image of size w x h.
inline DistortionField field_for(const LensRecord& record, double image_w, double image_h, int grid = 33) {
  if (const auto* p = std::get_if<ParametricProfile>(&record.profile)) {
    ParametricProfile scaled = *p;
    scaled.normalization_radius *=
        half_diagonal(image_w, image_h) / half_diagonal(record.reference_width, record.reference_height);
    return field_from_profile(scaled, grid, grid, image_w, image_h);
  }
  return rescaled(std::get<DistortionField>(record.profile), image_w, image_h);
}

/// Worst |distortion percent| of a record at its reference size.
inline double record_distortion_percent(const LensRecord& record) {
  return max_abs_distortion_percent(aberration_for(record, record.reference_width, record.reference_height),
                                    record.reference_width, record.reference_height);
}

inline void validate_record(const LensRecord& r) {
  if (r.name.empty()) throw ParameterError("record has an empty name");
  const double fov_limit = r.category == LensCategory::fisheye ? 220.0 : 180.0;
  const bool fov_ok = r.category == LensCategory::fisheye ? (r.fov_deg > 0.0 && r.fov_deg <= fov_limit)
                                                          : (r.fov_deg > 0.0 && r.fov_deg < fov_limit);
  if (!fov_ok) throw ParameterError("fov_deg " + std::to_string(r.fov_deg) + " out of range");
  if (!(r.f_number > 0.0)) throw ParameterError("f_number must be positive");
  if (!(r.numerical_aperture > 0.0 && r.numerical_aperture < 1.0))
    throw ParameterError("numerical_aperture must lie in (0, 1)");
  if (!(r.reference_width > 0.0) || !(r.reference_height > 0.0))
    throw ParameterError("reference image size must be positive");
  std::visit([](const auto& p) { p.validate(); }, r.profile);
  const double d = record_distortion_percent(r);
  if (!(d <= 50.0)) throw ParameterError("distortion of " + std::to_string(d) + "% exceeds the invertible 50% bound");
  const DistortionField field = field_for(r, r.reference_width, r.reference_height);
  invert_field(field, 1e-3, 500);
}

inline json record_to_json(const LensRecord& r) {
  json j = {{"name", r.name},
            {"fov_deg", r.fov_deg},
            {"f_number", r.f_number},
            {"numerical_aperture", r.numerical_aperture},
            {"category", std::string(to_string(r.category))},
            {"reference_width", r.reference_width},
            {"reference_height", r.reference_height}};
  if (const auto* p = std::get_if<ParametricProfile>(&r.profile)) j["profile"] = profile_to_json(*p);
  else j["field"] = field_to_json(std::get<DistortionField>(r.profile));
  return j;
}

inline LensRecord record_from_json(const json& j) {
  LensRecord r;
  r.name = detail::require<std::string>(j, "name", "record");
  const std::string where = "record '" + r.name + "'";
  r.fov_deg = detail::require<double>(j, "fov_deg", where);
  r.f_number = detail::require<double>(j, "f_number", where);
  r.numerical_aperture = detail::require<double>(j, "numerical_aperture", where);
  try {
    r.category = lens_category_from_string(detail::require<std::string>(j, "category", where));
  } catch (const ParameterError& e) {
    throw LoadError(where + ": " + e.what());
  }
  if (j.contains("reference_width")) r.reference_width = detail::require<double>(j, "reference_width", where);
  if (j.contains("reference_height")) r.reference_height = detail::require<double>(j, "reference_height", where);
  const bool has_profile = j.contains("profile");
  const bool has_field = j.contains("field");
  if (has_profile == has_field) throw LoadError(where + ": exactly one of 'profile' or 'field' is required");
  if (has_profile) r.profile = profile_from_json(j.at("profile"));
  else r.profile = field_from_json(j.at("field"));
  return r;
}

struct LensDatabase {
  std::vector<LensRecord> records;
};

/// Parses and validates a JSON-lines database. Every bad record is reported;
/// if any record fails the whole load fails with all diagnostics.
inline LensDatabase parse_database(std::istream& in, const std::string& source = "<stream>") {
  LensDatabase db;
  std::vector<std::string> problems;
  std::set<std::string> names;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    std::string label = "line " + std::to_string(line_no);
    try {
      const json j = json::parse(line);
      if (j.is_object() && j.contains("name") && j.at("name").is_string())
        label = "'" + j.at("name").get<std::string>() + "' (line " + std::to_string(line_no) + ")";
      LensRecord r = record_from_json(j);
      validate_record(r);
      if (!names.insert(r.name).second) {
        problems.push_back(label + ": duplicate name '" + r.name + "'");
        continue;
      }
      db.records.push_back(std::move(r));
    } catch (const json::exception& e) {
      problems.push_back(label + ": invalid JSON (" + e.what() + ")");
    } catch (const Error& e) {
      problems.push_back(label + ": " + e.what());
    }
  }
  if (!problems.empty()) {
    std::ostringstream msg;
    msg << source << ": " << problems.size() << " invalid record(s)";
    for (const auto& p : problems) msg << "\n  " << p;
    throw LoadError(msg.str());
  }
  if (db.records.empty()) throw LoadError(source + ": empty database");
  return db;
}

inline LensDatabase load_database(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw LoadError("cannot open lens database '" + path + "'");
  return parse_database(in, path);
}

inline void write_database(const std::string& path, const LensDatabase& db) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write '" + path + "'");
  for (const auto& r : db.records) out << record_to_json(r).dump() << "\n";
}

/// Uniform draw over the eligible records; a pure function of (db, seed, category).
inline const LensRecord& sample_profile(const LensDatabase& db, std::uint64_t seed,
                                        std::optional<LensCategory> category = std::nullopt) {
  std::vector<std::size_t> eligible;
  for (std::size_t k = 0; k < db.records.size(); ++k)
    if (!category || db.records[k].category == *category) eligible.push_back(k);
  if (eligible.empty())
    throw ParameterError(category ? "no lens record in category '" + std::string(to_string(*category)) + "'"
                                  : std::string("lens database is empty"));
  CounterRng rng(seed, /*stream=*/0x1E45);
  return db.records[eligible[rng.uniform_index(eligible.size())]];
}

struct AugmentedSequence {
  std::vector<Image> images;
  DistortionField field;
};

/// Applies one record's forward field to every frame.
inline AugmentedSequence augment_sequence(const std::vector<Image>& images, const LensRecord& record) {
  if (images.empty()) throw ParameterError("augment_sequence: empty image list");
  for (const auto& img : images)
    if (img.width != images.front().width || img.height != images.front().height)
      throw ParameterError("augment_sequence: frames have mixed dimensions");
  const int w = images.front().width;
  const int h = images.front().height;
  AugmentedSequence out{{}, field_for(record, w, h)};
  const FlowMap flow = flow_from_field(out.field, w, h);
  out.images.reserve(images.size());
  for (const auto& img : images) out.images.push_back(remap_image(img, flow));
  return out;
}

// ---------------------------------------------------------------------------
// Synthetic fixture
// ---------------------------------------------------------------------------

/// Procedural stand-in for a proprietary lens catalogue: `per_category`
/// records in each of the six categories, all authored at 448 x 448.
/// Parametric categories draw their coefficients uniformly from fixed
/// ranges; asymmetric records are decentered radial plus tangential fields
/// sampled on a 33 x 33 grid.
inline LensDatabase generate_fixture_database(std::uint64_t seed, int per_category = 2) {
  constexpr double kRef = 448.0;
  const double radius = half_diagonal(kRef, kRef);
  LensDatabase db;
  std::uint64_t stream = 0;
  for (LensCategory cat : kAllCategories)
    for (int n = 0; n < per_category; ++n) {
      CounterRng rng(seed, ++stream);
      LensRecord r;
      r.name = std::string(to_string(cat)) + "-" + (n < 10 ? "0" : "") + std::to_string(n);
      r.category = cat;
      r.f_number = std::round(rng.uniform(1.4, 16.0) * 10.0) / 10.0;
      r.numerical_aperture = 1.0 / (2.0 * r.f_number);
      switch (cat) {
        case LensCategory::barrel:
          r.fov_deg = rng.uniform(50.0, 95.0);
          r.profile = ParametricProfile::radial(rng.uniform(-0.15, -0.05), rng.uniform(-0.02, 0.02), radius);
          break;
        case LensCategory::pincushion:
          r.fov_deg = rng.uniform(15.0, 45.0);
          r.profile = ParametricProfile::radial(rng.uniform(0.05, 0.15), rng.uniform(-0.02, 0.02), radius);
          break;
        case LensCategory::fisheye:
          r.fov_deg = rng.uniform(150.0, 200.0);
          r.profile = ParametricProfile::kannala_brandt(rng.uniform(-0.25, -0.12), rng.uniform(-0.03, 0.03),
                                                        rng.uniform(-0.01, 0.01), rng.uniform(-0.005, 0.005), radius);
          break;
        case LensCategory::shear:
          r.fov_deg = rng.uniform(40.0, 80.0);
          r.profile = ParametricProfile::shear(rng.uniform(0.02, 0.06), radius);
          break;
        case LensCategory::symmetric:
          r.fov_deg = rng.uniform(40.0, 90.0);
          r.profile = ParametricProfile::radial(rng.uniform(-0.12, -0.06), rng.uniform(0.04, 0.10), radius);
          break;
        case LensCategory::asymmetric: {
          r.fov_deg = rng.uniform(40.0, 90.0);
          const Vec2 center(kRef * (0.5 + rng.uniform(-0.08, 0.08)), kRef * (0.5 + rng.uniform(-0.08, 0.08)));
          const double k1 = rng.uniform(-0.10, 0.10);
          const double p1 = rng.uniform(-0.01, 0.01);
          const double p2 = rng.uniform(-0.01, 0.01);
          DistortionField field(33, 33, kRef, kRef);
          for (int i = 0; i < 33; ++i)
            for (int j = 0; j < 33; ++j) {
              const Vec2 d = (field.node_pixel(i, j) - center) / radius;
              const double r2 = d.squaredNorm();
              const Vec2 tangential(2.0 * p1 * d.x() * d.y() + p2 * (r2 + 2.0 * d.x() * d.x()),
                                    p1 * (r2 + 2.0 * d.y() * d.y()) + 2.0 * p2 * d.x() * d.y());
              field.at(i, j) = (d * (k1 * r2) + tangential) * radius;
            }
          r.profile = std::move(field);
          break;
        }
      }
      r.fov_deg = std::round(r.fov_deg * 100.0) / 100.0;
      db.records.push_back(std::move(r));
    }
  return db;
}

}  // namespace raycal
