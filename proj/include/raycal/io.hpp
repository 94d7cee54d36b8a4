#pragma once

// File formats: JSON documents for bundles, fields, poses, fit results and
// evaluation reports; the RCFL binary flow format.

#include <raycal/distortion.hpp>
#include <raycal/fit.hpp>
#include <raycal/metrics.hpp>
#include <raycal/ray_camera.hpp>

#include <json.hpp>

#include <bit>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

namespace raycal {

using json = nlohmann::json;

namespace detail {

template <typename T>
T require(const json& j, const char* key, const std::string& where) {
  if (!j.is_object() || !j.contains(key)) throw LoadError(where + ": missing key '" + key + "'");
  try {
    return j.at(key).get<T>();
  } catch (const json::exception& e) {
    throw LoadError(where + ": key '" + key + "' has the wrong type (" + e.what() + ")");
  }
}

inline json vec_json(const Vec3& v) { return json::array({v.x(), v.y(), v.z()}); }

inline Vec3 vec3_from(const json& j, const std::string& where) {
  if (!j.is_array() || j.size() != 3) throw LoadError(where + ": expected a 3-vector");
  Vec3 v;
  for (int i = 0; i < 3; ++i) {
    if (!j[i].is_number()) throw LoadError(where + ": expected numbers");
    v(i) = j[i].get<double>();
  }
  return v;
}

inline Vec2 vec2_from(const json& j, const std::string& where) {
  if (!j.is_array() || j.size() != 2 || !j[0].is_number() || !j[1].is_number())
    throw LoadError(where + ": expected a 2-vector");
  return {j[0].get<double>(), j[1].get<double>()};
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Ray bundles
// ---------------------------------------------------------------------------

inline json bundle_to_json(const RayBundle& b) {
  json origins = json::array(), directions = json::array();
  for (std::size_t k = 0; k < b.size(); ++k) {
    origins.push_back(detail::vec_json(b.origins[k]));
    directions.push_back(detail::vec_json(b.directions[k]));
  }
  return {{"rows", b.rows},
          {"cols", b.cols},
          {"image_width", b.image_width},
          {"image_height", b.image_height},
          {"origins", std::move(origins)},
          {"directions", std::move(directions)}};
}

inline RayBundle bundle_from_json(const json& j) {
  const int rows = detail::require<int>(j, "rows", "bundle");
  const int cols = detail::require<int>(j, "cols", "bundle");
  if (rows < 1 || cols < 1) throw LoadError("bundle: rows and cols must be positive");
  const double w = j.contains("image_width") ? detail::require<double>(j, "image_width", "bundle") : 0.0;
  const double h = j.contains("image_height") ? detail::require<double>(j, "image_height", "bundle") : 0.0;
  RayBundle b(rows, cols, w, h);
  if (!j.contains("origins") || !j.contains("directions")) throw LoadError("bundle: missing origins/directions");
  const auto& origins = j.at("origins");
  const auto& directions = j.at("directions");
  if (!origins.is_array() || !directions.is_array() || origins.size() != b.size() || directions.size() != b.size())
    throw LoadError("bundle: origins/directions must hold rows*cols entries");
  for (std::size_t k = 0; k < b.size(); ++k) {
    b.origins[k] = detail::vec3_from(origins[k], "bundle origin");
    b.directions[k] = detail::vec3_from(directions[k], "bundle direction");
  }
  try {
    b.validate();
  } catch (const ParameterError& e) {
    throw LoadError(std::string("bundle: ") + e.what());
  }
  return b;
}

// ---------------------------------------------------------------------------
// Profiles and fields
// ---------------------------------------------------------------------------

inline json profile_to_json(const ParametricProfile& p) {
  return {{"kind", std::string(to_string(p.kind))},
          {"coefficients", p.coefficients},
          {"normalization_radius", p.normalization_radius}};
}

inline ParametricProfile profile_from_json(const json& j) {
  ParametricProfile p;
  try {
    p.kind = profile_kind_from_string(detail::require<std::string>(j, "kind", "profile"));
    p.coefficients = detail::require<std::vector<double>>(j, "coefficients", "profile");
    p.normalization_radius = detail::require<double>(j, "normalization_radius", "profile");
    p.validate();
  } catch (const ParameterError& e) {
    throw LoadError(std::string("profile: ") + e.what());
  }
  return p;
}

inline json field_to_json(const DistortionField& f) {
  json disp = json::array();
  for (const auto& d : f.displacements) disp.push_back(json::array({d.x(), d.y()}));
  return {{"grid_rows", f.grid_rows},
          {"grid_cols", f.grid_cols},
          {"units", "px"},
          {"image_width", f.image_width},
          {"image_height", f.image_height},
          {"displacements", std::move(disp)}};
}

inline DistortionField field_from_json(const json& j) {
  DistortionField f;
  f.grid_rows = detail::require<int>(j, "grid_rows", "field");
  f.grid_cols = detail::require<int>(j, "grid_cols", "field");
  if (j.contains("units") && j.at("units") != "px") throw LoadError("field: units must be \"px\"");
  f.image_width = detail::require<double>(j, "image_width", "field");
  f.image_height = detail::require<double>(j, "image_height", "field");
  if (!j.contains("displacements")) throw LoadError("field: missing key 'displacements'");
  const auto& disp = j.at("displacements");
  if (!disp.is_array()) throw LoadError("field: displacements must be an array");
  for (const auto& d : disp) f.displacements.push_back(detail::vec2_from(d, "field displacement"));
  try {
    f.validate();
  } catch (const ParameterError& e) {
    throw LoadError(std::string("field: ") + e.what());
  }
  return f;
}

// ---------------------------------------------------------------------------
// Poses, intrinsics, camera sets
// ---------------------------------------------------------------------------

inline json pose_to_json(const Pose& p) {
  json r = json::array();
  for (int i = 0; i < 3; ++i) r.push_back(json::array({p.rotation(i, 0), p.rotation(i, 1), p.rotation(i, 2)}));
  return {{"rotation", std::move(r)}, {"translation", detail::vec_json(p.translation)}};
}

inline Pose pose_from_json(const json& j) {
  Pose p;
  if (!j.is_object() || !j.contains("rotation") || !j.at("rotation").is_array() || j.at("rotation").size() != 3)
    throw LoadError("pose: rotation must be a 3x3 array");
  for (int i = 0; i < 3; ++i) p.rotation.row(i) = detail::vec3_from(j.at("rotation")[i], "pose rotation").transpose();
  if (!j.contains("translation")) throw LoadError("pose: missing key 'translation'");
  p.translation = detail::vec3_from(j.at("translation"), "pose translation");
  try {
    p.validate();
  } catch (const ParameterError& e) {
    throw LoadError(std::string("pose: ") + e.what());
  }
  return p;
}

inline json intrinsics_to_json(const Intrinsics& k) {
  return {{"fx", k.fx}, {"fy", k.fy}, {"cx", k.cx}, {"cy", k.cy}, {"skew", k.skew}};
}

inline Intrinsics intrinsics_from_json(const json& j) {
  Intrinsics k;
  k.fx = detail::require<double>(j, "fx", "intrinsics");
  k.fy = detail::require<double>(j, "fy", "intrinsics");
  k.cx = detail::require<double>(j, "cx", "intrinsics");
  k.cy = detail::require<double>(j, "cy", "intrinsics");
  k.skew = j.contains("skew") ? detail::require<double>(j, "skew", "intrinsics") : 0.0;
  try {
    k.validate();
  } catch (const ParameterError& e) {
    throw LoadError(std::string("intrinsics: ") + e.what());
  }
  return k;
}

/// Poses plus optional per-camera bundles: {"poses": [...], "bundles": [...]}.
struct CameraSet {
  std::vector<Pose> poses;
  std::vector<RayBundle> bundles;
  std::vector<Intrinsics> intrinsics;
};

inline json camera_set_to_json(const CameraSet& set) {
  json poses = json::array(), bundles = json::array(), intr = json::array();
  for (const auto& p : set.poses) poses.push_back(pose_to_json(p));
  for (const auto& b : set.bundles) bundles.push_back(bundle_to_json(b));
  for (const auto& k : set.intrinsics) intr.push_back(intrinsics_to_json(k));
  json out = {{"poses", std::move(poses)}, {"bundles", std::move(bundles)}};
  if (!set.intrinsics.empty()) out["intrinsics"] = std::move(intr);
  return out;
}

inline CameraSet camera_set_from_json(const json& j) {
  if (!j.is_object() || !j.contains("poses") || !j.at("poses").is_array())
    throw LoadError("camera set: missing 'poses' array");
  CameraSet set;
  for (const auto& p : j.at("poses")) set.poses.push_back(pose_from_json(p));
  if (j.contains("bundles")) {
    if (!j.at("bundles").is_array()) throw LoadError("camera set: 'bundles' must be an array");
    for (const auto& b : j.at("bundles")) set.bundles.push_back(bundle_from_json(b));
    if (!set.bundles.empty() && set.bundles.size() != set.poses.size())
      throw LoadError("camera set: bundle count differs from pose count");
  }
  if (j.contains("intrinsics"))
    for (const auto& k : j.at("intrinsics")) set.intrinsics.push_back(intrinsics_from_json(k));
  return set;
}

// ---------------------------------------------------------------------------
// Results
// ---------------------------------------------------------------------------

inline json fit_result_to_json(const FitResult& r) {
  return {{"intrinsics", intrinsics_to_json(r.intrinsics)},
          {"pose", pose_to_json(r.pose)},
          {"rms_angular_residual", r.rms_angular_residual},
          {"iterations", r.iterations},
          {"converged", r.converged},
          {"per_ray_residual_deg", r.per_ray_residual_deg}};
}

inline json eval_report_to_json(const EvalReport& r) {
  return {{"mean_angular_deg", r.mean_angular_deg},
          {"rotation_acc_at_15", r.rotation_acc_at_15},
          {"center_acc_at_0_1", r.center_acc_at_0_1},
          {"per_pair_rotation_err", r.per_pair_rotation_err},
          {"per_camera_center_dist", r.per_camera_center_dist}};
}

// ---------------------------------------------------------------------------
// Files
// ---------------------------------------------------------------------------

inline json read_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw LoadError("cannot open '" + path + "'");
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    throw LoadError(path + ": invalid JSON (" + e.what() + ")");
  }
}

inline void write_json_file(const std::string& path, const json& j) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write '" + path + "'");
  out << j.dump(2) << "\n";
}

/// 64-bit FNV-1a of a file's bytes, as 16 hex digits.
inline std::string file_digest(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw LoadError("cannot open '" + path + "'");
  std::uint64_t h = 0xcbf29ce484222325ull;
  char buf[65536];
  while (in.read(buf, sizeof buf) || in.gcount() > 0) {
    for (std::streamsize i = 0; i < in.gcount(); ++i) {
      h ^= static_cast<unsigned char>(buf[i]);
      h *= 0x100000001b3ull;
    }
  }
  char hex[17];
  std::snprintf(hex, sizeof hex, "%016llx", static_cast<unsigned long long>(h));
  return hex;
}

/// Provenance block embedded in every output document.
inline json provenance(std::uint64_t seed, const std::vector<std::string>& inputs) {
  json digests = json::object();
  for (const auto& path : inputs) digests[path] = file_digest(path);
  return {{"tool_version", kToolVersion}, {"seed", seed}, {"input_digests", std::move(digests)}};
}

// RCFL: "RCFL", u32 width, u32 height, then width*height (dx, dy) f32 pairs,
// row-major, all little-endian.

namespace detail {

inline void put_u32(std::ostream& out, std::uint32_t v) {
  const unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                              static_cast<unsigned char>(v >> 16), static_cast<unsigned char>(v >> 24)};
  out.write(reinterpret_cast<const char*>(b), 4);
}

inline std::uint32_t get_u32(std::istream& in) {
  unsigned char b[4];
  if (!in.read(reinterpret_cast<char*>(b), 4)) throw LoadError("flow file truncated");
  return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
         (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

}  // namespace detail

inline void write_flow(std::ostream& out, const FlowMap& flow) {
  out.write("RCFL", 4);
  detail::put_u32(out, static_cast<std::uint32_t>(flow.width));
  detail::put_u32(out, static_cast<std::uint32_t>(flow.height));
  for (const auto& f : flow.flow) {
    detail::put_u32(out, std::bit_cast<std::uint32_t>(static_cast<float>(f.x())));
    detail::put_u32(out, std::bit_cast<std::uint32_t>(static_cast<float>(f.y())));
  }
}

inline FlowMap read_flow(std::istream& in) {
  char magic[4];
  if (!in.read(magic, 4) || std::string(magic, 4) != "RCFL") throw LoadError("flow file: bad magic (expected RCFL)");
  const std::uint32_t w = detail::get_u32(in);
  const std::uint32_t h = detail::get_u32(in);
  if (w == 0 || h == 0 || w > (1u << 16) || h > (1u << 16)) throw LoadError("flow file: implausible dimensions");
  FlowMap flow(static_cast<int>(w), static_cast<int>(h));
  for (auto& f : flow.flow) {
    const float dx = std::bit_cast<float>(detail::get_u32(in));
    const float dy = std::bit_cast<float>(detail::get_u32(in));
    f = Vec2(dx, dy);
  }
  return flow;
}

inline void write_flow_file(const std::string& path, const FlowMap& flow) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write '" + path + "'");
  write_flow(out, flow);
}

inline FlowMap read_flow_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw LoadError("cannot open '" + path + "'");
  return read_flow(in);
}

}  // namespace raycal
