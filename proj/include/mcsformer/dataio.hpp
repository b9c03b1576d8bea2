#pragma once

// PRONOSTIA ingestion, a synthetic run-to-failure generator, and the
// versioned binary containers for records, datasets and checkpoints.
// Container layouts are documented in docs/formats.md.

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "json.hpp"

#include "mcsformer/features.hpp"
#include "mcsformer/model.hpp"
#include "mcsformer/traineval.hpp"

namespace mcsformer::io {

namespace fs = std::filesystem;
using json = nlohmann::json;

/// Column positions in PRONOSTIA acc_*.csv rows. The public distribution has
/// hour, minute, second, microsecond, horizontal, vertical.
struct PronostiaLayout {
  std::size_t horizontal_column = 4;
  std::size_t vertical_column = 5;
  double sample_rate_hz = 25600.0;
  double snapshot_period_s = 10.0;
};

/// Reads acc_NNNNN.csv files in numeric order (temperature files are
/// ignored). Errors: MissingDirectory, MissingFile (no files or a gap in the
/// numbering), MalformedRow naming file:line, InconsistentSnapshotLength.
features::BearingRecord load_pronostia_bearing(const fs::path& dir,
                                               const PronostiaLayout& layout = {});

struct SyntheticConfig {
  std::size_t n_snapshots = 100;
  std::size_t samples_per_snapshot = 2560;
  double sample_rate_hz = 25600.0;
  double healthy_kurtosis_level = 3.0;  // >= 3; above 3 uses a Gaussian scale mixture
  std::size_t fault_onset_index = 50;
  double fault_growth_rate = 3.0;       // impulse amplitude per snapshot past onset, in noise units
  double noise_std = 1.0;
  std::uint64_t seed = 0;
  std::string bearing_id = "Synthetic_1";
  int condition_id = 1;

  void validate() const;
};

/// Healthy snapshots are seeded Gaussian noise; from the onset on, a periodic
/// train of decaying resonance bursts with amplitude
/// noise_std * growth * (i - onset + 1) is superimposed. Both channels share
/// the fault schedule and have independent noise. Pure function of cfg.
features::BearingRecord gen_synthetic(const SyntheticConfig& cfg);

json to_json(const model::ModelConfig& cfg);
model::ModelConfig model_config_from_json(const json& j);
json to_json(const features::FeatureConfig& cfg);
features::FeatureConfig feature_config_from_json(const json& j);
json to_json(const train::TrainConfig& cfg);
json to_json(const SyntheticConfig& cfg);

void save_record(const fs::path& path, const features::BearingRecord& record);
features::BearingRecord load_record(const fs::path& path);

struct DatasetFile {
  std::vector<features::LabeledSample> samples;
  json sidecar;  // bearing ids, fpt, featurization config
};

/// Writes `path` (binary) and `path` + ".json" (sidecar). `meta` is merged
/// into the sidecar.
void save_dataset(const fs::path& path, const std::vector<features::LabeledSample>& samples,
                  const json& meta = json::object());
DatasetFile load_dataset(const fs::path& path);

struct Checkpoint {
  model::ModelConfig config;
  model::ModelParams params;
  json extra;
};

void save_checkpoint(const fs::path& path, const model::ModelConfig& cfg,
                     const model::ModelParams& params, const json& extra = json::object());
Checkpoint load_checkpoint(const fs::path& path);

/// Sidecar path for a dataset container.
fs::path sidecar_path(const fs::path& dataset);

}  // namespace mcsformer::io
