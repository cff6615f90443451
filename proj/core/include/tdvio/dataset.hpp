#pragma once

#include <string>
#include <vector>

#include "tdvio/simulator.hpp"

namespace tdvio {

inline constexpr int kScenarioSchemaVersion = 1;

/// Shortest decimal text that parses back to exactly the same double.
std::string format_double(double x);

std::string scenario_to_json(const SimScenario& scn);
/// Throws DataError on malformed or incompatible documents.
SimScenario scenario_from_json(const std::string& text);

/// Writes imu.csv, frames.csv, groundtruth.csv and scenario.json. Each file is
/// written to a temporary name and renamed into place. Throws IoError.
void write_dataset(const SimData& data, const SimScenario& scn, const std::string& dir);

struct LoadedDataset {
  SimData data;
  SimScenario scenario;
  bool has_scenario = false;  // scenario.json was present
};

/// Reads a dataset directory. groundtruth.csv and scenario.json are optional.
/// Throws DataError with file and line context, IoError for missing files.
LoadedDataset read_dataset(const std::string& dir);

std::vector<ImuRecord> read_imu_csv(const std::string& path);
std::vector<FrameRecord> read_frames_csv(const std::string& path);
/// Also reads est_trajectory.csv, which shares the column layout.
std::vector<GroundTruthRecord> read_groundtruth_csv(const std::string& path);

void write_imu_csv(const std::vector<ImuRecord>& imu, const std::string& path);
void write_frames_csv(const std::vector<FrameRecord>& frames, const std::string& path);
void write_groundtruth_csv(const std::vector<GroundTruthRecord>& gt, const std::string& path);

/// Writes `content` to path via a temporary file and rename. Throws IoError.
void write_file_atomic(const std::string& path, const std::string& content);
/// Throws IoError.
std::string read_file(const std::string& path);

}  // namespace tdvio
