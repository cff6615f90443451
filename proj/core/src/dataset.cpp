#include "tdvio/dataset.hpp"

#include <charconv>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>
#include <sstream>
#include <string_view>

#include "json.hpp"
#include "tdvio/errors.hpp"

namespace tdvio {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

json vec_json(const Eigen::Ref<const Eigen::VectorXd>& v) {
  json a = json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) a.push_back(v[i]);
  return a;
}

Vec3 vec3_from(const json& j, const char* key) {
  if (!j.is_array() || j.size() != 3) {
    throw DataError(std::string("scenario field '") + key + "' must be an array of 3 numbers");
  }
  return {j[0].get<double>(), j[1].get<double>(), j[2].get<double>()};
}

template <typename T>
void read_opt(const json& j, const char* key, T& out) {
  if (j.contains(key)) out = j.at(key).get<T>();
}

void read_vec3(const json& j, const char* key, Vec3& out) {
  if (j.contains(key)) out = vec3_from(j.at(key), key);
}

/// Splits one CSV line into fields and parses them with from_chars.
class CsvRow {
 public:
  CsvRow(std::string_view line, const std::string& path, std::size_t line_no)
      : path_(path), line_no_(line_no) {
    std::size_t start = 0;
    while (true) {
      const std::size_t comma = line.find(',', start);
      std::string_view f = line.substr(start, comma == std::string_view::npos ? comma : comma - start);
      while (!f.empty() && (f.front() == ' ' || f.front() == '\t')) f.remove_prefix(1);
      while (!f.empty() && (f.back() == ' ' || f.back() == '\t' || f.back() == '\r')) f.remove_suffix(1);
      fields_.push_back(f);
      if (comma == std::string_view::npos) break;
      start = comma + 1;
    }
  }

  std::size_t size() const { return fields_.size(); }

  void expect(std::size_t n) const {
    if (fields_.size() != n) {
      fail("expected " + std::to_string(n) + " fields, found " + std::to_string(fields_.size()));
    }
  }

  std::int64_t integer(std::size_t i) const {
    std::int64_t v = 0;
    const auto f = fields_[i];
    const auto res = std::from_chars(f.data(), f.data() + f.size(), v);
    if (res.ec != std::errc() || res.ptr != f.data() + f.size()) {
      fail("field " + std::to_string(i + 1) + " is not an integer: '" + std::string(f) + "'");
    }
    return v;
  }

  double real(std::size_t i) const {
    double v = 0.0;
    const auto f = fields_[i];
    const auto res = std::from_chars(f.data(), f.data() + f.size(), v);
    if (res.ec != std::errc() || res.ptr != f.data() + f.size() || !std::isfinite(v)) {
      fail("field " + std::to_string(i + 1) + " is not a finite number: '" + std::string(f) + "'");
    }
    return v;
  }

  [[noreturn]] void fail(const std::string& what) const {
    throw DataError(path_ + ":" + std::to_string(line_no_) + ": " + what);
  }

 private:
  std::vector<std::string_view> fields_;
  const std::string& path_;
  std::size_t line_no_;
};

/// Calls fn(row) for every data line: the first line is the header and
/// lines starting with '#' or empty lines are skipped.
template <typename Fn>
void for_each_row(const std::string& path, Fn fn) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path);
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line_no == 1) continue;
    if (line.empty() || line == "\r" || line[0] == '#') continue;
    fn(CsvRow(line, path, line_no));
  }
}

void append(std::string& out, double x) {
  out += format_double(x);
}

}  // namespace

std::string format_double(double x) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof(buf), x);
  return std::string(buf, res.ptr);
}

std::string scenario_to_json(const SimScenario& s) {
  json j;
  j["schema_version"] = kScenarioSchemaVersion;
  const TrajectorySpec& t = s.trajectory;
  json tj;
  tj["kind"] = to_string(t.kind);
  tj["amplitude"] = vec_json(t.amplitude);
  tj["rate"] = vec_json(t.rate);
  tj["phase"] = vec_json(t.phase);
  tj["radius"] = t.radius;
  tj["circle_rate"] = t.circle_rate;
  tj["height"] = t.height;
  tj["att_amplitude"] = vec_json(t.att_amplitude);
  tj["att_rate"] = vec_json(t.att_rate);
  tj["duration"] = t.duration;
  tj["seed"] = t.seed;
  json wp = json::array();
  for (const Waypoint& w : t.waypoints) wp.push_back({w.t, w.p.x(), w.p.y(), w.p.z()});
  tj["waypoints"] = wp;
  j["trajectory"] = tj;

  j["feature_count"] = s.feature_count;
  j["room_half_extent"] = vec_json(s.room_half_extent);
  j["min_visible_features"] = s.min_visible_features;
  j["intrinsics"] = {{"fx", s.intrinsics.fx}, {"fy", s.intrinsics.fy},
                     {"cx", s.intrinsics.cx}, {"cy", s.intrinsics.cy}};
  j["image_width"] = s.image_width;
  j["image_height"] = s.image_height;
  json R = json::array();
  for (int r = 0; r < 3; ++r) R.push_back(vec_json(s.extrinsics.R_ic.row(r).transpose()));
  j["extrinsics"] = {{"R_ic", R}, {"p_ic", vec_json(s.extrinsics.p_ic)}};
  j["imu_rate"] = s.imu_rate;
  j["cam_rate"] = s.cam_rate;
  j["true_td"] = s.true_td;
  const NoiseSpec& n = s.noise;
  j["noise"] = {{"accel_noise_density", n.accel_noise_density},
                {"gyro_noise_density", n.gyro_noise_density},
                {"accel_random_walk", n.accel_random_walk},
                {"gyro_random_walk", n.gyro_random_walk},
                {"pixel_sigma", n.pixel_sigma},
                {"seed", n.seed}};
  return j.dump(2) + "\n";
}

SimScenario scenario_from_json(const std::string& text) {
  SimScenario s;
  try {
    const json j = json::parse(text);
    if (!j.is_object()) throw DataError("scenario document must be a JSON object");
    if (!j.contains("schema_version")) throw DataError("scenario.json lacks schema_version");
    const int version = j.at("schema_version").get<int>();
    if (version != kScenarioSchemaVersion) {
      throw DataError("unsupported scenario schema_version " + std::to_string(version));
    }
    if (j.contains("trajectory")) {
      const json& tj = j.at("trajectory");
      TrajectorySpec& t = s.trajectory;
      if (tj.contains("kind")) t.kind = parse_trajectory_kind(tj.at("kind").get<std::string>());
      read_vec3(tj, "amplitude", t.amplitude);
      read_vec3(tj, "rate", t.rate);
      read_vec3(tj, "phase", t.phase);
      read_opt(tj, "radius", t.radius);
      read_opt(tj, "circle_rate", t.circle_rate);
      read_opt(tj, "height", t.height);
      read_vec3(tj, "att_amplitude", t.att_amplitude);
      read_vec3(tj, "att_rate", t.att_rate);
      read_opt(tj, "duration", t.duration);
      read_opt(tj, "seed", t.seed);
      if (tj.contains("waypoints")) {
        for (const json& w : tj.at("waypoints")) {
          if (!w.is_array() || w.size() != 4) throw DataError("waypoints must be [t, x, y, z]");
          t.waypoints.push_back(
              {w[0].get<double>(), Vec3(w[1].get<double>(), w[2].get<double>(), w[3].get<double>())});
        }
      }
    }
    read_opt(j, "feature_count", s.feature_count);
    read_vec3(j, "room_half_extent", s.room_half_extent);
    read_opt(j, "min_visible_features", s.min_visible_features);
    if (j.contains("intrinsics")) {
      const json& k = j.at("intrinsics");
      read_opt(k, "fx", s.intrinsics.fx);
      read_opt(k, "fy", s.intrinsics.fy);
      read_opt(k, "cx", s.intrinsics.cx);
      read_opt(k, "cy", s.intrinsics.cy);
    }
    read_opt(j, "image_width", s.image_width);
    read_opt(j, "image_height", s.image_height);
    if (j.contains("extrinsics")) {
      const json& e = j.at("extrinsics");
      if (e.contains("R_ic")) {
        const json& R = e.at("R_ic");
        if (!R.is_array() || R.size() != 3) throw DataError("R_ic must be a 3x3 array");
        for (int r = 0; r < 3; ++r) s.extrinsics.R_ic.row(r) = vec3_from(R[r], "R_ic").transpose();
      }
      read_vec3(e, "p_ic", s.extrinsics.p_ic);
    }
    read_opt(j, "imu_rate", s.imu_rate);
    read_opt(j, "cam_rate", s.cam_rate);
    read_opt(j, "true_td", s.true_td);
    if (j.contains("noise")) {
      const json& n = j.at("noise");
      read_opt(n, "accel_noise_density", s.noise.accel_noise_density);
      read_opt(n, "gyro_noise_density", s.noise.gyro_noise_density);
      read_opt(n, "accel_random_walk", s.noise.accel_random_walk);
      read_opt(n, "gyro_random_walk", s.noise.gyro_random_walk);
      read_opt(n, "pixel_sigma", s.noise.pixel_sigma);
      read_opt(n, "seed", s.noise.seed);
    }
  } catch (const json::exception& e) {
    throw DataError(std::string("malformed scenario JSON: ") + e.what());
  }
  try {
    s.validate();
  } catch (const InvalidArgument& e) {
    throw DataError(std::string("invalid scenario: ") + e.what());
  }
  return s;
}

void write_file_atomic(const std::string& path, const std::string& content) {
  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write " + tmp);
    out << content;
    if (!out) throw IoError("write failed for " + tmp);
  }
  std::error_code ec;
  fs::rename(tmp, path, ec);
  if (ec) throw IoError("cannot rename " + tmp + " to " + path + ": " + ec.message());
}

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_imu_csv(const std::vector<ImuRecord>& imu, const std::string& path) {
  std::string out = "t_ns,wx,wy,wz,ax,ay,az\n";
  out.reserve(imu.size() * 128);
  for (const ImuRecord& r : imu) {
    out += std::to_string(r.t_ns);
    for (int i = 0; i < 3; ++i) { out += ','; append(out, r.gyro[i]); }
    for (int i = 0; i < 3; ++i) { out += ','; append(out, r.accel[i]); }
    out += '\n';
  }
  write_file_atomic(path, out);
}

void write_frames_csv(const std::vector<FrameRecord>& frames, const std::string& path) {
  std::string out = "t_ns,feature_id,u_px,v_px\n";
  for (const FrameRecord& f : frames) {
    for (const FeatureTrack& tr : f.tracks) {
      out += std::to_string(f.t_ns);
      out += ',';
      out += std::to_string(tr.feature_id);
      out += ',';
      append(out, tr.px.x());
      out += ',';
      append(out, tr.px.y());
      out += '\n';
    }
  }
  write_file_atomic(path, out);
}

void write_groundtruth_csv(const std::vector<GroundTruthRecord>& gt, const std::string& path) {
  std::string out = "t_ns,px,py,pz,qw,qx,qy,qz,vx,vy,vz\n";
  out.reserve(gt.size() * 200);
  for (const GroundTruthRecord& r : gt) {
    out += std::to_string(r.t_ns);
    for (int i = 0; i < 3; ++i) { out += ','; append(out, r.p[i]); }
    for (double c : {r.q.w(), r.q.x(), r.q.y(), r.q.z()}) { out += ','; append(out, c); }
    for (int i = 0; i < 3; ++i) { out += ','; append(out, r.v[i]); }
    out += '\n';
  }
  write_file_atomic(path, out);
}

void write_dataset(const SimData& data, const SimScenario& scn, const std::string& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create directory " + dir + ": " + ec.message());
  const fs::path d(dir);
  write_imu_csv(data.imu, (d / "imu.csv").string());
  write_frames_csv(data.frames, (d / "frames.csv").string());
  write_groundtruth_csv(data.groundtruth, (d / "groundtruth.csv").string());
  write_file_atomic((d / "scenario.json").string(), scenario_to_json(scn));
}

std::vector<ImuRecord> read_imu_csv(const std::string& path) {
  std::vector<ImuRecord> out;
  for_each_row(path, [&](const CsvRow& row) {
    row.expect(7);
    ImuRecord r;
    r.t_ns = row.integer(0);
    r.gyro = Vec3(row.real(1), row.real(2), row.real(3));
    r.accel = Vec3(row.real(4), row.real(5), row.real(6));
    if (!out.empty() && r.t_ns <= out.back().t_ns) row.fail("timestamps must strictly increase");
    out.push_back(r);
  });
  return out;
}

std::vector<FrameRecord> read_frames_csv(const std::string& path) {
  std::vector<FrameRecord> out;
  for_each_row(path, [&](const CsvRow& row) {
    row.expect(4);
    const std::int64_t t = row.integer(0);
    const std::int64_t id = row.integer(1);
    if (id < 0 || id > std::numeric_limits<int>::max()) row.fail("feature_id out of range");
    if (out.empty() || out.back().t_ns != t) {
      if (!out.empty() && t < out.back().t_ns) row.fail("frame timestamps must not decrease");
      out.push_back({t, {}});
    }
    FeatureTrack tr;
    tr.feature_id = static_cast<int>(id);
    tr.px = Vec2(row.real(2), row.real(3));
    for (const FeatureTrack& other : out.back().tracks) {
      if (other.feature_id == tr.feature_id) row.fail("duplicate feature_id within one frame");
    }
    out.back().tracks.push_back(tr);
  });
  return out;
}

std::vector<GroundTruthRecord> read_groundtruth_csv(const std::string& path) {
  std::vector<GroundTruthRecord> out;
  for_each_row(path, [&](const CsvRow& row) {
    row.expect(11);
    GroundTruthRecord r;
    r.t_ns = row.integer(0);
    r.p = Vec3(row.real(1), row.real(2), row.real(3));
    r.q = Quat(row.real(4), row.real(5), row.real(6), row.real(7));
    const double n = r.q.norm();
    if (std::abs(n - 1.0) > 1e-6) row.fail("quaternion is not unit norm");
    r.v = Vec3(row.real(8), row.real(9), row.real(10));
    if (!out.empty() && r.t_ns <= out.back().t_ns) row.fail("timestamps must strictly increase");
    out.push_back(r);
  });
  return out;
}

LoadedDataset read_dataset(const std::string& dir) {
  const fs::path d(dir);
  if (!fs::is_directory(d)) throw IoError("dataset directory " + dir + " does not exist");
  LoadedDataset ds;
  ds.data.imu = read_imu_csv((d / "imu.csv").string());
  ds.data.frames = read_frames_csv((d / "frames.csv").string());
  if (fs::exists(d / "groundtruth.csv")) {
    ds.data.groundtruth = read_groundtruth_csv((d / "groundtruth.csv").string());
  }
  if (fs::exists(d / "scenario.json")) {
    ds.scenario = scenario_from_json(read_file((d / "scenario.json").string()));
    ds.has_scenario = true;
  }
  if (ds.data.imu.size() < 2) throw DataError(dir + "/imu.csv: fewer than two IMU samples");
  if (ds.data.frames.empty()) throw DataError(dir + "/frames.csv: no frames");
  return ds;
}

}  // namespace tdvio
