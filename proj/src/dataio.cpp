#include "mcsformer/dataio.hpp"

#include <algorithm>
#include <bit>
#include <charconv>
#include <cmath>
#include <cstring>
#include <fstream>
#include <future>
#include <map>
#include <numbers>
#include <regex>
#include <sstream>
#include <thread>

#include "mcsformer/error.hpp"
#include "mcsformer/random.hpp"

namespace mcsformer::io {

namespace {

constexpr std::uint32_t kFormatVersion = 1;
constexpr char kRecordMagic[8] = {'M', 'C', 'S', 'R', 'E', 'C', 'D', '1'};
constexpr char kDatasetMagic[8] = {'M', 'C', 'S', 'D', 'S', 'E', 'T', '1'};
constexpr char kCheckpointMagic[8] = {'M', 'C', 'S', 'C', 'K', 'P', 'T', '1'};

template <typename T>
T to_little(T v) {
  if constexpr (std::endian::native == std::endian::big) {
    auto bytes = std::bit_cast<std::array<unsigned char, sizeof(T)>>(v);
    std::reverse(bytes.begin(), bytes.end());
    return std::bit_cast<T>(bytes);
  }
  return v;
}

class ByteWriter {
 public:
  void raw(const void* p, std::size_t n) {
    const auto* b = static_cast<const char*>(p);
    buf_.insert(buf_.end(), b, b + n);
  }
  template <typename T>
  void put(T v) {
    const T le = to_little(v);
    raw(&le, sizeof(T));
  }
  void f64s(std::span<const double> v) {
    for (double x : v) put(x);
  }
  void f32s(std::span<const float> v) {
    for (float x : v) put(x);
  }

  void write_to(const fs::path& path) const {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw Error(ErrorCode::IoError, "cannot open " + path.string() + " for writing");
    out.write(buf_.data(), static_cast<std::streamsize>(buf_.size()));
    if (!out) throw Error(ErrorCode::IoError, "write failed for " + path.string());
  }

 private:
  std::vector<char> buf_;
};

class ByteReader {
 public:
  ByteReader(const fs::path& path) : path_(path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error(ErrorCode::MissingFile, "cannot open " + path.string());
    buf_.assign(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
  }

  void expect_magic(const char (&magic)[8]) {
    if (buf_.size() < 8 || std::memcmp(buf_.data(), magic, 8) != 0)
      throw Error(ErrorCode::CorruptContainer, path_.string() + ": bad magic");
    pos_ = 8;
    const auto version = get<std::uint32_t>();
    if (version != kFormatVersion)
      throw Error(ErrorCode::VersionMismatch, path_.string() + ": version " +
                                                  std::to_string(version) + ", expected " +
                                                  std::to_string(kFormatVersion));
  }

  void raw(void* p, std::size_t n) {
    if (n > buf_.size() - pos_)
      throw Error(ErrorCode::CorruptContainer, path_.string() + ": truncated at byte " +
                                                   std::to_string(pos_));
    std::memcpy(p, buf_.data() + pos_, n);
    pos_ += n;
  }
  template <typename T>
  T get() {
    T v;
    raw(&v, sizeof(T));
    return to_little(v);
  }
  std::vector<double> f64s(std::size_t n) {
    require(n, sizeof(double));
    std::vector<double> v(n);
    for (double& x : v) x = get<double>();
    return v;
  }
  std::vector<float> f32s(std::size_t n) {
    require(n, sizeof(float));
    std::vector<float> v(n);
    for (float& x : v) x = get<float>();
    return v;
  }
  void require(std::size_t count, std::size_t width) {
    if (width != 0 && count > (buf_.size() - pos_) / width)
      throw Error(ErrorCode::CorruptContainer, path_.string() + ": declared size exceeds file");
  }
  void expect_end() const {
    if (pos_ != buf_.size())
      throw Error(ErrorCode::CorruptContainer, path_.string() + ": " +
                                                   std::to_string(buf_.size() - pos_) +
                                                   " trailing bytes");
  }

 private:
  fs::path path_;
  std::vector<char> buf_;
  std::size_t pos_ = 0;
};

std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r'))
    s.remove_suffix(1);
  return s;
}

bool parse_double(std::string_view s, double& out) {
  s = trim(s);
  if (!s.empty() && s.front() == '+') s.remove_prefix(1);
  if (s.empty()) return false;
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), out);
  return ec == std::errc() && ptr == s.data() + s.size() && std::isfinite(out);
}

struct ParsedSnapshot {
  std::vector<double> hor;
  std::vector<double> ver;
};

ParsedSnapshot parse_acc_csv(const fs::path& file, const PronostiaLayout& layout) {
  std::ifstream in(file);
  if (!in) throw Error(ErrorCode::MissingFile, "cannot open " + file.string());
  ParsedSnapshot snap;
  std::string line;
  std::size_t line_no = 0;
  const std::size_t needed = std::max(layout.horizontal_column, layout.vertical_column) + 1;
  std::vector<std::string_view> fields;
  while (std::getline(in, line)) {
    ++line_no;
    const std::string_view row = trim(line);
    if (row.empty()) continue;
    const char delim = row.find(';') != std::string_view::npos ? ';' : ',';
    fields.clear();
    std::size_t start = 0;
    for (;;) {
      const std::size_t end = row.find(delim, start);
      fields.push_back(row.substr(start, end == std::string_view::npos ? row.npos : end - start));
      if (end == std::string_view::npos) break;
      start = end + 1;
    }
    auto fail = [&](const std::string& why) {
      throw Error(ErrorCode::MalformedRow,
                  file.string() + ":" + std::to_string(line_no) + ": " + why);
    };
    if (fields.size() < needed)
      fail(std::to_string(fields.size()) + " fields, need " + std::to_string(needed));
    double h = 0.0, v = 0.0;
    if (!parse_double(fields[layout.horizontal_column], h))
      fail("non-numeric horizontal field '" + std::string(fields[layout.horizontal_column]) + "'");
    if (!parse_double(fields[layout.vertical_column], v))
      fail("non-numeric vertical field '" + std::string(fields[layout.vertical_column]) + "'");
    snap.hor.push_back(h);
    snap.ver.push_back(v);
  }
  if (snap.hor.empty())
    throw Error(ErrorCode::MalformedRow, file.string() + ": no data rows");
  return snap;
}

json array_json(const std::array<int, model::kStages>& a) { return json(std::vector<int>(a.begin(), a.end())); }

}  // namespace

features::BearingRecord load_pronostia_bearing(const fs::path& dir, const PronostiaLayout& layout) {
  if (!fs::is_directory(dir))
    throw Error(ErrorCode::MissingDirectory, dir.string() + " is not a directory");

  static const std::regex acc_name(R"(acc_(\d+)\.csv)", std::regex::icase);
  std::map<long long, fs::path> files;
  for (const auto& entry : fs::directory_iterator(dir)) {
    if (!entry.is_regular_file()) continue;
    std::smatch m;
    const std::string name = entry.path().filename().string();
    if (std::regex_match(name, m, acc_name)) files[std::stoll(m[1].str())] = entry.path();
  }
  if (files.empty())
    throw Error(ErrorCode::MissingFile, dir.string() + ": no acc_*.csv snapshots");
  long long expect = files.begin()->first;
  for (const auto& [index, path] : files) {
    if (index != expect)
      throw Error(ErrorCode::MissingFile, dir.string() + ": snapshot acc_" +
                                              std::to_string(expect) + " missing before " +
                                              path.filename().string());
    ++expect;
  }

  std::vector<fs::path> ordered;
  for (const auto& [_, path] : files) ordered.push_back(path);
  std::vector<ParsedSnapshot> parsed(ordered.size());
  std::vector<std::exception_ptr> failures(ordered.size());
  const std::size_t workers =
      std::clamp<std::size_t>(std::thread::hardware_concurrency(), 1, ordered.size());
  std::vector<std::future<void>> jobs;
  for (std::size_t t = 0; t < workers; ++t)
    jobs.push_back(std::async(std::launch::async, [&, t] {
      for (std::size_t i = t; i < ordered.size(); i += workers) {
        try {
          parsed[i] = parse_acc_csv(ordered[i], layout);
        } catch (...) {
          failures[i] = std::current_exception();
        }
      }
    }));
  for (auto& j : jobs) j.get();
  // Report the earliest file's failure regardless of scheduling.
  for (const auto& f : failures)
    if (f) std::rethrow_exception(f);

  features::BearingRecord record;
  record.bearing_id = dir.filename().string();
  if (record.bearing_id.empty()) record.bearing_id = dir.parent_path().filename().string();
  record.snapshot_period_s = layout.snapshot_period_s;
  static const std::regex bearing_name(R"(Bearing(\d+)_(\d+))", std::regex::icase);
  std::smatch bm;
  if (std::regex_search(record.bearing_id, bm, bearing_name)) record.condition_id = std::stoi(bm[1].str());

  const std::size_t len = parsed.front().hor.size();
  for (std::size_t i = 0; i < parsed.size(); ++i) {
    if (parsed[i].hor.size() != len)
      throw Error(ErrorCode::InconsistentSnapshotLength,
                  ordered[i].string() + " has " + std::to_string(parsed[i].hor.size()) +
                      " rows, expected " + std::to_string(len));
    record.snapshots.push_back(
        {signal::SignalVector{std::move(parsed[i].hor), layout.sample_rate_hz},
         signal::SignalVector{std::move(parsed[i].ver), layout.sample_rate_hz}});
  }
  return record;
}

void SyntheticConfig::validate() const {
  auto fail = [](const std::string& why) { throw Error(ErrorCode::InvalidConfig, why); };
  if (n_snapshots < 2) fail("need at least 2 snapshots");
  if (fault_onset_index == 0 || fault_onset_index >= n_snapshots)
    fail("fault onset must lie in (0, n_snapshots)");
  if (samples_per_snapshot < 64) fail("snapshots need at least 64 samples");
  if (!(sample_rate_hz > 0.0)) fail("sample rate must be positive");
  if (!(noise_std >= 0.0)) fail("noise_std must be >= 0");
  if (!(fault_growth_rate >= 0.0)) fail("fault_growth_rate must be >= 0");
  if (!(healthy_kurtosis_level >= 3.0 && healthy_kurtosis_level < 30.0))
    fail("healthy_kurtosis_level must lie in [3, 30)");
}

features::BearingRecord gen_synthetic(const SyntheticConfig& cfg) {
  cfg.validate();
  const std::size_t n = cfg.samples_per_snapshot;

  // Two-component Gaussian scale mixture (10% of samples with variance
  // ratio r) hitting the requested kurtosis, rescaled to unit variance.
  const double k = cfg.healthy_kurtosis_level / 3.0;
  const double qa = 0.1 - 0.01 * k, qb = -0.18 * k, qc = 0.9 - 0.81 * k;
  const double ratio = std::max(1.0, (-qb + std::sqrt(std::max(0.0, qb * qb - 4 * qa * qc))) / (2 * qa));
  const double mix_norm = 1.0 / std::sqrt(0.9 + 0.1 * ratio);
  const double wide = std::sqrt(ratio);

  // Impacts repeat every n/8 samples. Early on they excite a structural
  // resonance at 0.2 cycles/sample (5.12 kHz at 25.6 kHz) and ring for about
  // 6 samples. As the defect spreads the ringing moves down to 0.05
  // cycles/sample and its decay lengthens until it fills the impact period,
  // so the fault changes the spectrum and waveform shape, not only the
  // amplitude.
  const std::size_t period = std::max<std::size_t>(16, n / 8);
  const double span = static_cast<double>(
      std::max<std::size_t>(1, cfg.n_snapshots - std::min(cfg.n_snapshots, cfg.fault_onset_index)));
  const auto make_burst = [&](double severity) {
    const double decay = 6.0 + 300.0 * severity;  // samples
    const double resonance = 0.2 - 0.15 * severity;    // cycles per sample
    const auto len = std::min(period, static_cast<std::size_t>(std::ceil(8.0 * decay)));
    std::vector<double> burst(len);
    for (std::size_t t = 0; t < len; ++t)
      burst[t] = std::exp(-static_cast<double>(t) / decay) *
                 std::sin(2.0 * std::numbers::pi * resonance * static_cast<double>(t));
    return burst;
  };

  features::BearingRecord record;
  record.bearing_id = cfg.bearing_id;
  record.condition_id = cfg.condition_id;
  record.snapshot_period_s = 10.0;
  record.snapshots.resize(cfg.n_snapshots);
  for (std::size_t i = 0; i < cfg.n_snapshots; ++i) {
    double amplitude = 0.0;
    std::size_t offset = 0;
    std::vector<double> burst;
    if (i >= cfg.fault_onset_index) {
      const double severity = static_cast<double>(i - cfg.fault_onset_index + 1) / span;
      burst = make_burst(std::min(1.0, severity));
      amplitude = cfg.noise_std * cfg.fault_growth_rate *
                  static_cast<double>(i - cfg.fault_onset_index + 1);
      SeededRng sched(ad::mix64(cfg.seed ^ ad::mix64(0xFA17ULL + i)));
      offset = sched.below(period);
    }
    for (int c = 0; c < 2; ++c) {
      SeededRng rng(ad::mix64(cfg.seed ^ ad::mix64(2 * i + static_cast<std::size_t>(c) + 1)));
      std::vector<double> x(n);
      for (double& v : x) {
        const double scale = (ratio > 1.0 && rng.uniform() < 0.1) ? wide : 1.0;
        v = cfg.noise_std * mix_norm * scale * rng.normal();
      }
      if (amplitude > 0.0) {
        const double a = c == 0 ? amplitude : 0.8 * amplitude;
        for (std::size_t start = offset; start < n; start += period)
          for (std::size_t t = 0; t < burst.size() && start + t < n; ++t) x[start + t] += a * burst[t];
      }
      auto& dst = c == 0 ? record.snapshots[i].horizontal : record.snapshots[i].vertical;
      dst = signal::SignalVector{std::move(x), cfg.sample_rate_hz};
    }
  }
  return record;
}

json to_json(const model::ModelConfig& cfg) {
  return json{{"preset", model::to_string(cfg.preset)},
              {"image_side", cfg.image_side},
              {"conv_channels", cfg.conv_channels},
              {"embed_dim_base", cfg.embed_dim_base},
              {"depths", array_json(cfg.depths)},
              {"heads", array_json(cfg.heads)},
              {"window_size", cfg.window_size},
              {"mlp_ratio", cfg.mlp_ratio},
              {"dropout_p", cfg.dropout_p},
              {"head_hidden", std::vector<int>{cfg.head_hidden[0], cfg.head_hidden[1]}}};
}

model::ModelConfig model_config_from_json(const json& j) {
  try {
    model::ModelConfig cfg;
    cfg.preset = model::preset_from_string(j.at("preset").get<std::string>());
    cfg.image_side = j.at("image_side").get<int>();
    cfg.conv_channels = j.at("conv_channels").get<int>();
    cfg.embed_dim_base = j.at("embed_dim_base").get<int>();
    const auto depths = j.at("depths").get<std::vector<int>>();
    const auto heads = j.at("heads").get<std::vector<int>>();
    const auto hidden = j.at("head_hidden").get<std::vector<int>>();
    if (depths.size() != model::kStages || heads.size() != model::kStages || hidden.size() != 2)
      throw Error(ErrorCode::ConfigMismatch, "depths/heads need 4 entries, head_hidden 2");
    std::copy(depths.begin(), depths.end(), cfg.depths.begin());
    std::copy(heads.begin(), heads.end(), cfg.heads.begin());
    cfg.head_hidden = {hidden[0], hidden[1]};
    cfg.window_size = j.at("window_size").get<int>();
    cfg.mlp_ratio = j.at("mlp_ratio").get<double>();
    cfg.dropout_p = j.at("dropout_p").get<double>();
    cfg.validate();
    return cfg;
  } catch (const json::exception& e) {
    throw Error(ErrorCode::ConfigMismatch, std::string("model config: ") + e.what());
  }
}

json to_json(const features::FeatureConfig& cfg) {
  return json{{"window", cfg.window},           {"stride", cfg.stride},
              {"wpd_level", cfg.wpd_level},     {"image_side", cfg.image_side},
              {"denoise", cfg.denoise},         {"denoise_levels", cfg.denoise_levels},
              {"savgol_window", cfg.savgol_window}, {"savgol_order", cfg.savgol_order}};
}

features::FeatureConfig feature_config_from_json(const json& j) {
  try {
    features::FeatureConfig cfg;
    cfg.window = j.at("window").get<std::size_t>();
    cfg.stride = j.at("stride").get<std::size_t>();
    cfg.wpd_level = j.at("wpd_level").get<int>();
    cfg.image_side = j.at("image_side").get<int>();
    cfg.denoise = j.at("denoise").get<bool>();
    cfg.denoise_levels = j.at("denoise_levels").get<int>();
    cfg.savgol_window = j.at("savgol_window").get<int>();
    cfg.savgol_order = j.at("savgol_order").get<int>();
    return cfg;
  } catch (const json::exception& e) {
    throw Error(ErrorCode::InvalidConfig, std::string("feature config: ") + e.what());
  }
}

json to_json(const train::TrainConfig& cfg) {
  return json{{"learning_rate", cfg.learning_rate}, {"batch_size", cfg.batch_size},
              {"epochs", cfg.epochs},               {"beta1", cfg.beta1},
              {"beta2", cfg.beta2},                 {"eps", cfg.eps},
              {"seed", cfg.seed},                   {"shuffle", cfg.shuffle}};
}

json to_json(const SyntheticConfig& cfg) {
  return json{{"n_snapshots", cfg.n_snapshots},
              {"samples_per_snapshot", cfg.samples_per_snapshot},
              {"sample_rate_hz", cfg.sample_rate_hz},
              {"healthy_kurtosis_level", cfg.healthy_kurtosis_level},
              {"fault_onset_index", cfg.fault_onset_index},
              {"fault_growth_rate", cfg.fault_growth_rate},
              {"noise_std", cfg.noise_std},
              {"seed", cfg.seed},
              {"bearing_id", cfg.bearing_id},
              {"condition_id", cfg.condition_id}};
}

void save_record(const fs::path& path, const features::BearingRecord& record) {
  features::validate(record);
  ByteWriter w;
  w.raw(kRecordMagic, 8);
  w.put(kFormatVersion);
  w.put<std::uint64_t>(record.size());
  w.put<std::uint64_t>(record.samples_per_snapshot());
  w.put(record.sample_rate_hz());
  w.put(record.snapshot_period_s);
  w.put<std::int32_t>(record.condition_id);
  w.put<std::uint32_t>(static_cast<std::uint32_t>(record.bearing_id.size()));
  w.raw(record.bearing_id.data(), record.bearing_id.size());
  for (const auto& s : record.snapshots) {
    w.f64s(s.horizontal.samples);
    w.f64s(s.vertical.samples);
  }
  w.write_to(path);
}

features::BearingRecord load_record(const fs::path& path) {
  ByteReader r(path);
  r.expect_magic(kRecordMagic);
  const auto count = r.get<std::uint64_t>();
  const auto len = r.get<std::uint64_t>();
  const double rate = r.get<double>();
  features::BearingRecord record;
  record.snapshot_period_s = r.get<double>();
  record.condition_id = r.get<std::int32_t>();
  const auto id_len = r.get<std::uint32_t>();
  r.require(id_len, 1);
  record.bearing_id.resize(id_len);
  r.raw(record.bearing_id.data(), id_len);
  r.require(count, 2 * len * sizeof(double));
  for (std::uint64_t i = 0; i < count; ++i) {
    features::Snapshot s;
    s.horizontal = signal::SignalVector{r.f64s(len), rate};
    s.vertical = signal::SignalVector{r.f64s(len), rate};
    record.snapshots.push_back(std::move(s));
  }
  r.expect_end();
  return record;
}

fs::path sidecar_path(const fs::path& dataset) {
  fs::path p = dataset;
  p += ".json";
  return p;
}

void save_dataset(const fs::path& path, const std::vector<features::LabeledSample>& samples,
                  const json& meta) {
  if (samples.empty()) throw Error(ErrorCode::EmptyDataset, "refusing to save an empty dataset");
  const int side = samples.front().hor.side;
  const std::size_t px = static_cast<std::size_t>(side) * side;
  ByteWriter w;
  w.raw(kDatasetMagic, 8);
  w.put(kFormatVersion);
  w.put<std::uint64_t>(samples.size());
  w.put<std::uint32_t>(static_cast<std::uint32_t>(side));
  w.put<std::uint32_t>(static_cast<std::uint32_t>(side));
  json ids = json::array(), windows = json::array();
  for (const auto& s : samples) {
    if (s.hor.pixels.size() != px || s.ver.pixels.size() != px)
      throw Error(ErrorCode::ShapeMismatch, "samples disagree on image size");
    w.put(s.label);
    w.f32s(s.hor.pixels);
    w.f32s(s.ver.pixels);
    ids.push_back(s.bearing_id);
    windows.push_back({s.hor.source_window.start_snapshot, s.hor.source_window.size});
  }
  json sidecar = meta.is_object() ? meta : json::object();
  sidecar["format"] = "mcsformer-dataset";
  sidecar["version"] = kFormatVersion;
  sidecar["sample_count"] = samples.size();
  sidecar["image_side"] = side;
  sidecar["sample_bearing_ids"] = ids;
  sidecar["sample_windows"] = windows;
  w.write_to(path);
  std::ofstream out(sidecar_path(path), std::ios::trunc);
  if (!out) throw Error(ErrorCode::IoError, "cannot write " + sidecar_path(path).string());
  out << sidecar.dump(2) << "\n";
}

DatasetFile load_dataset(const fs::path& path) {
  ByteReader r(path);
  r.expect_magic(kDatasetMagic);
  const auto count = r.get<std::uint64_t>();
  const auto h = r.get<std::uint32_t>();
  const auto wd = r.get<std::uint32_t>();
  if (h != wd || h == 0) throw Error(ErrorCode::CorruptContainer, path.string() + ": bad image dims");
  const std::size_t px = static_cast<std::size_t>(h) * wd;
  r.require(count, (2 * px + 1) * sizeof(float));

  DatasetFile out;
  const fs::path side_path = sidecar_path(path);
  std::ifstream side(side_path);
  if (!side) throw Error(ErrorCode::MissingFile, "missing sidecar " + side_path.string());
  try {
    out.sidecar = json::parse(side);
  } catch (const json::exception& e) {
    throw Error(ErrorCode::CorruptContainer, side_path.string() + ": " + e.what());
  }
  const json& ids = out.sidecar.value("sample_bearing_ids", json::array());
  const json& windows = out.sidecar.value("sample_windows", json::array());
  if (out.sidecar.value("sample_count", std::uint64_t{0}) != count || ids.size() != count ||
      windows.size() != count)
    throw Error(ErrorCode::CorruptContainer, side_path.string() + " disagrees with " + path.string());

  try {
    for (std::uint64_t i = 0; i < count; ++i) {
      features::LabeledSample s;
      s.label = r.get<float>();
      const features::Window win{windows[i].at(0).get<std::size_t>(),
                                 windows[i].at(1).get<std::size_t>()};
      s.hor = features::WpdImage{static_cast<int>(h), r.f32s(px), features::Channel::Horizontal, win};
      s.ver = features::WpdImage{static_cast<int>(h), r.f32s(px), features::Channel::Vertical, win};
      s.bearing_id = ids[i].get<std::string>();
      out.samples.push_back(std::move(s));
    }
  } catch (const json::exception& e) {
    throw Error(ErrorCode::CorruptContainer, side_path.string() + ": " + e.what());
  }
  r.expect_end();
  return out;
}

void save_checkpoint(const fs::path& path, const model::ModelConfig& cfg,
                     const model::ModelParams& params, const json& extra) {
  model::check_params(params, cfg);
  json manifest = json::array();
  std::uint64_t offset = 0;
  for (std::size_t i = 0; i < params.names().size(); ++i) {
    const auto& t = params.tensors()[i];
    manifest.push_back({{"name", params.names()[i]},
                        {"shape", t.shape()},
                        {"offset", offset},
                        {"count", t.numel()}});
    offset += t.numel();
  }
  const json header{{"config", to_json(cfg)},
                    {"seed", params.init_seed},
                    {"params", manifest},
                    {"extra", extra}};
  const std::string text = header.dump();
  ByteWriter w;
  w.raw(kCheckpointMagic, 8);
  w.put(kFormatVersion);
  w.put<std::uint64_t>(text.size());
  w.raw(text.data(), text.size());
  for (const auto& t : params.tensors()) w.f64s(t.data());
  w.write_to(path);
}

Checkpoint load_checkpoint(const fs::path& path) {
  ByteReader r(path);
  r.expect_magic(kCheckpointMagic);
  const auto header_len = r.get<std::uint64_t>();
  r.require(header_len, 1);
  std::string text(header_len, '\0');
  r.raw(text.data(), header_len);
  json header;
  try {
    header = json::parse(text);
  } catch (const json::exception& e) {
    throw Error(ErrorCode::CorruptContainer, path.string() + ": header: " + e.what());
  }
  Checkpoint ck;
  try {
    ck.config = model_config_from_json(header.at("config"));
    ck.params.init_seed = header.value("seed", std::uint64_t{0});
    ck.extra = header.value("extra", json::object());
    for (const auto& entry : header.at("params")) {
      const auto shape = entry.at("shape").get<ad::Shape>();
      const auto count = entry.at("count").get<std::size_t>();
      if (ad::numel(shape) != count)
        throw Error(ErrorCode::CorruptContainer, path.string() + ": manifest shape/count mismatch");
      ck.params.add(entry.at("name").get<std::string>(),
                    ad::Tensor::from(shape, r.f64s(count), true));
    }
  } catch (const json::exception& e) {
    throw Error(ErrorCode::CorruptContainer, path.string() + ": header: " + e.what());
  }
  r.expect_end();
  model::check_params(ck.params, ck.config);
  return ck;
}

}  // namespace mcsformer::io
