#include "cfdbench/datakit.hpp"

#include <algorithm>
#include <cmath>
#include <bit>
#include <cstring>
#include <limits>
#include <fstream>
#include <random>

#include <json.hpp>

namespace fs = std::filesystem;
using nlohmann::json;

namespace cfdbench::datakit {

void CaseRecord::validate() const {
  if (meta.channels.empty()) throw ContractError("CaseRecord has no channels");
  const std::size_t h = meta.resolution[0], w = meta.resolution[1];
  if (h == 0 || w == 0) throw ContractError("CaseRecord has empty resolution");
  if (mask.size() != h * w)
    throw ContractError("mask size " + std::to_string(mask.size()) + " != H*W");
  const std::size_t fs_ = frame_size();
  if (fs_ == 0 || frames.size() % fs_ != 0)
    throw ContractError("frames length is not a multiple of one frame");
  if (n_frames() < 2) throw ContractError("CaseRecord needs at least 2 frames");
  for (float f : frames)
    if (!std::isfinite(f)) throw ContractError("CaseRecord frames contain non-finite values");
  for (auto m : mask)
    if (m > 1) throw ContractError("mask values must be 0 or 1");
}

// ---------------------------------------------------------------------------
// Interpolation and fill
// ---------------------------------------------------------------------------

Grid interpolate_to_grid(const std::vector<ScatterPoint>& points, double extent_x,
                         double extent_y, std::size_t h, std::size_t w) {
  if (points.empty()) throw EmptyInputError("interpolate_to_grid: no points");
  if (!(extent_x > 0) || !(extent_y > 0) || h == 0 || w == 0)
    throw ConfigError("interpolate_to_grid: invalid extents/resolution");
  Grid g(h, w);
  std::vector<std::size_t> counts(h * w, 0);
  for (const auto& pt : points) {
    if (pt.x < 0 || pt.x > extent_x || pt.y < 0 || pt.y > extent_y)
      throw ContractError("interpolate_to_grid: point outside extents");
    std::size_t i = std::min<std::size_t>(std::size_t(pt.x / extent_x * double(w)), w - 1);
    std::size_t j = std::min<std::size_t>(std::size_t(pt.y / extent_y * double(h)), h - 1);
    g.v[j * w + i] += pt.value;
    ++counts[j * w + i];
  }
  for (std::size_t c = 0; c < h * w; ++c) {
    if (counts[c]) {
      g.v[c] /= double(counts[c]);
      g.filled[c] = 1;
    }
  }
  return g;
}

void fill_empty_cells(Grid& grid) {
  const std::size_t h = grid.h, w = grid.w;
  bool any = false;
  for (auto f : grid.filled) any = any || f;
  if (!any) throw EmptyInputError("fill_empty_cells: all cells empty");
  // layer-by-layer: each pass fills cells with >=1 valued 4-neighbor using
  // the mean of neighbors valued before this pass
  while (true) {
    std::vector<std::pair<std::size_t, double>> updates;
    for (std::size_t j = 0; j < h; ++j)
      for (std::size_t i = 0; i < w; ++i) {
        const std::size_t c = j * w + i;
        if (grid.filled[c]) continue;
        double sum = 0;
        int n = 0;
        if (i > 0 && grid.filled[c - 1]) sum += grid.v[c - 1], ++n;
        if (i + 1 < w && grid.filled[c + 1]) sum += grid.v[c + 1], ++n;
        if (j > 0 && grid.filled[c - w]) sum += grid.v[c - w], ++n;
        if (j + 1 < h && grid.filled[c + w]) sum += grid.v[c + w], ++n;
        if (n) updates.emplace_back(c, sum / n);
      }
    if (updates.empty()) break;
    for (const auto& [c, val] : updates) {
      grid.v[c] = val;
      grid.filled[c] = 1;
    }
  }
}

// ---------------------------------------------------------------------------
// Padding
// ---------------------------------------------------------------------------

CaseRecord pad_constant_bc(const CaseRecord& rec) {
  const std::string& prob = rec.meta.problem;
  if (prob != "tube" && prob != "cavity") return rec;

  const std::size_t h = rec.meta.resolution[0], w = rec.meta.resolution[1];
  const std::size_t t = rec.n_frames(), nc = rec.n_channels();
  const bool pad_cols = prob == "cavity";  // cavity pads all four walls
  const std::size_t h2 = h + 2, w2 = pad_cols ? w + 2 : w;
  const std::size_t coff = pad_cols ? 1 : 0;

  const double u_b = rec.meta.params.count("u_b") ? rec.meta.params.at("u_b") : 0.0;

  CaseRecord out;
  out.meta = rec.meta;
  out.meta.resolution = {h2, w2};
  out.meta.flags["padded"] = true;
  out.frames.assign(t * nc * h2 * w2, 0.0f);
  for (std::size_t f = 0; f < t; ++f)
    for (std::size_t c = 0; c < nc; ++c) {
      float* dst = out.frames.data() + (f * nc + c) * h2 * w2;
      const float* src = rec.frames.data() + (f * nc + c) * h * w;
      for (std::size_t j = 0; j < h; ++j)
        std::copy_n(src + j * w, w, dst + (j + 1) * w2 + coff);
      // the moving lid is the top row (row index h2-1, since row 0 = bottom)
      if (prob == "cavity" && rec.meta.channels[c] == "u")
        for (std::size_t i = 0; i < w2; ++i) dst[(h2 - 1) * w2 + i] = float(u_b);
    }
  out.mask.assign(h2 * w2, 1);
  for (std::size_t j = 0; j < h; ++j)
    for (std::size_t i = 0; i < w; ++i)
      out.mask[(j + 1) * w2 + i + coff] = rec.mask[j * w + i];
  return out;
}

// ---------------------------------------------------------------------------
// Normalization and splits
// ---------------------------------------------------------------------------

NormalizationStats compute_normalization(const std::vector<const CaseMeta*>& train_metas) {
  if (train_metas.empty()) throw EmptyInputError("compute_normalization: no training cases");
  NormalizationStats stats;
  for (const auto* m : train_metas)
    for (const auto& [k, v] : m->params)
      if (std::find(stats.names.begin(), stats.names.end(), k) == stats.names.end())
        stats.names.push_back(k);
  std::sort(stats.names.begin(), stats.names.end());
  stats.min_v.assign(stats.names.size(), std::numeric_limits<double>::infinity());
  stats.max_v.assign(stats.names.size(), -std::numeric_limits<double>::infinity());
  for (const auto* m : train_metas)
    for (std::size_t k = 0; k < stats.names.size(); ++k) {
      const auto it = m->params.find(stats.names[k]);
      const double v = it == m->params.end() ? 0.0 : it->second;
      stats.min_v[k] = std::min(stats.min_v[k], v);
      stats.max_v[k] = std::max(stats.max_v[k], v);
    }
  return stats;
}

std::vector<double> normalize_params(const std::map<std::string, double>& params,
                                     const NormalizationStats& stats) {
  std::vector<double> out(stats.names.size(), 0.0);
  for (std::size_t k = 0; k < stats.names.size(); ++k) {
    const auto it = params.find(stats.names[k]);
    const double v = it == params.end() ? 0.0 : it->second;
    const double range = stats.max_v[k] - stats.min_v[k];
    out[k] = range > 0 ? (v - stats.min_v[k]) / range : 0.0;
  }
  return out;
}

DatasetSplit split_cases(std::vector<std::string> case_ids, std::uint64_t seed) {
  if (case_ids.empty()) throw EmptyInputError("split_cases: empty case list");
  DatasetSplit split;
  split.seed = seed;
  std::sort(case_ids.begin(), case_ids.end());  // seed-only determinism
  std::mt19937_64 rng(seed);
  std::shuffle(case_ids.begin(), case_ids.end(), rng);
  const std::size_t n = case_ids.size();
  const std::size_t n_val = n / 10, n_test = n / 10;
  const std::size_t n_train = n - n_val - n_test;  // remainder goes to train
  split.train.assign(case_ids.begin(), case_ids.begin() + n_train);
  split.val.assign(case_ids.begin() + n_train, case_ids.begin() + n_train + n_val);
  split.test.assign(case_ids.begin() + n_train + n_val, case_ids.end());
  return split;
}

// ---------------------------------------------------------------------------
// Container I/O
// ---------------------------------------------------------------------------

namespace {

json meta_to_json(const CaseMeta& m) {
  json j;
  j["schema_version"] = m.schema_version;
  j["problem"] = m.problem;
  j["subset"] = m.subset;
  j["case_id"] = m.case_id;
  j["params"] = m.params;
  j["dt"] = m.dt;
  j["extents_m"] = m.extents_m;
  j["resolution"] = m.resolution;
  j["channels"] = m.channels;
  j["flags"] = m.flags;
  return j;
}

CaseMeta meta_from_json(const json& j) {
  CaseMeta m;
  m.schema_version = j.at("schema_version").get<int>();
  if (m.schema_version != kSchemaVersion)
    throw LoadError("unsupported schema_version " + std::to_string(m.schema_version));
  m.problem = j.at("problem").get<std::string>();
  m.subset = j.at("subset").get<std::string>();
  m.case_id = j.at("case_id").get<std::string>();
  m.params = j.at("params").get<std::map<std::string, double>>();
  m.dt = j.at("dt").get<double>();
  m.extents_m = j.at("extents_m").get<std::array<double, 2>>();
  m.resolution = j.at("resolution").get<std::array<std::size_t, 2>>();
  m.channels = j.at("channels").get<std::vector<std::string>>();
  if (j.contains("flags")) m.flags = j.at("flags").get<std::map<std::string, bool>>();
  return m;
}

void write_binary(const fs::path& path, const void* data, std::size_t bytes) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw LoadError("cannot open for write: " + path.string());
  f.write(static_cast<const char*>(data), std::streamsize(bytes));
  if (!f) throw LoadError("write failed: " + path.string());
}

std::vector<char> read_binary(const fs::path& path) {
  std::ifstream f(path, std::ios::binary | std::ios::ate);
  if (!f) throw LoadError("missing file: " + path.string());
  const std::streamsize n = f.tellg();
  f.seekg(0);
  std::vector<char> buf(static_cast<std::size_t>(n), '\0');
  f.read(buf.data(), n);
  if (!f) throw LoadError("read failed: " + path.string());
  return buf;
}

// floats are serialized little-endian; byte-swap on big-endian hosts
constexpr bool kLittle = std::endian::native == std::endian::little;

template <class T>
void to_le(std::vector<T>& v) {
  if constexpr (!kLittle) {
    for (auto& x : v) {
      auto* b = reinterpret_cast<unsigned char*>(&x);
      std::reverse(b, b + sizeof(T));
    }
  } else {
    (void)v;
  }
}

}  // namespace

void write_container(const CaseRecord& rec, const fs::path& dir) {
  rec.validate();
  const fs::path tmp = dir.string() + ".tmp";
  fs::remove_all(tmp);
  fs::create_directories(tmp);

  const std::string meta = meta_to_json(rec.meta).dump(2);
  write_binary(tmp / "meta.json", meta.data(), meta.size());

  std::vector<float> fr = rec.frames;
  to_le(fr);
  write_binary(tmp / "frames.bin", fr.data(), fr.size() * sizeof(float));
  write_binary(tmp / "mask.bin", rec.mask.data(), rec.mask.size());

  fs::remove_all(dir);
  fs::create_directories(dir.parent_path().empty() ? fs::path(".") : dir.parent_path());
  fs::rename(tmp, dir);
}

CaseRecord read_container(const fs::path& dir) {
  CaseRecord rec;
  const auto meta_bytes = read_binary(dir / "meta.json");
  json j;
  try {
    j = json::parse(meta_bytes.begin(), meta_bytes.end());
  } catch (const json::exception& e) {
    throw LoadError("meta.json parse error: " + std::string(e.what()));
  }
  try {
    rec.meta = meta_from_json(j);
  } catch (const json::exception& e) {
    throw LoadError("meta.json schema error: " + std::string(e.what()));
  }

  const auto frame_bytes = read_binary(dir / "frames.bin");
  if (frame_bytes.size() % sizeof(float))
    throw LoadError("frames.bin length is not a multiple of 4");
  rec.frames.resize(frame_bytes.size() / sizeof(float));
  std::memcpy(rec.frames.data(), frame_bytes.data(), frame_bytes.size());
  to_le(rec.frames);  // identical inverse transform

  const auto mask_bytes = read_binary(dir / "mask.bin");
  rec.mask.assign(mask_bytes.begin(), mask_bytes.end());

  const std::size_t hw = rec.meta.resolution[0] * rec.meta.resolution[1];
  if (rec.mask.size() != hw) throw LoadError("mask.bin size disagrees with meta resolution");
  const std::size_t fs_ = rec.meta.channels.size() * hw;
  if (fs_ == 0 || rec.frames.size() % fs_ != 0)
    throw LoadError("frames.bin size disagrees with meta shape");
  rec.validate();
  return rec;
}

}  // namespace cfdbench::datakit
