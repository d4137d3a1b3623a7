#pragma once

// Gridded dataset container and the preprocessing steps that produce it:
// point-cloud binning, empty-cell fill, boundary padding, parameter
// normalization, case-level splits, and bit-exact persistence.

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "cfdbench/errors.hpp"

namespace cfdbench::datakit {

inline constexpr int kSchemaVersion = 1;

struct CaseMeta {
  int schema_version = kSchemaVersion;
  std::string problem;  // cavity | tube | dam | cylinder
  std::string subset;   // bc | prop | geo
  std::string case_id;  // stable unique id, e.g. "cavity_prop_0042"
  std::map<std::string, double> params;  // named operating parameters
  double dt = 0.0;
  std::array<double, 2> extents_m{0.0, 0.0};     // physical [H_m, W_m]
  std::array<std::size_t, 2> resolution{0, 0};   // grid [H, W]
  std::vector<std::string> channels;             // ["u","v"] (+ optional "p")
  std::map<std::string, bool> flags;             // e.g. velocity_rescaled
};

struct CaseRecord {
  CaseMeta meta;
  std::vector<float> frames;        // [T][C][H][W] row-major
  std::vector<std::uint8_t> mask;   // [H][W], 1 = fluid, 0 = obstacle

  std::size_t n_channels() const { return meta.channels.size(); }
  std::size_t frame_size() const {
    return n_channels() * meta.resolution[0] * meta.resolution[1];
  }
  std::size_t n_frames() const {
    const std::size_t fs = frame_size();
    return fs ? frames.size() / fs : 0;
  }
  // Throws ContractError when any CaseRecord invariant is violated.
  void validate() const;
};

// A value grid whose cells may still be empty after binning. Row index 0 is
// the domain bottom (y = 0).
struct Grid {
  std::size_t h = 0, w = 0;
  std::vector<double> v;               // [H][W]
  std::vector<std::uint8_t> filled;    // [H][W], 1 = has a value

  Grid() = default;
  Grid(std::size_t h_, std::size_t w_) : h(h_), w(w_), v(h_ * w_, 0.0), filled(h_ * w_, 0) {}
};

struct ScatterPoint {
  double x, y, value;
};

// Bins scattered samples onto an h x w grid over [0,extent_x] x [0,extent_y];
// each cell is the arithmetic mean of the points that fall into it.
Grid interpolate_to_grid(const std::vector<ScatterPoint>& points, double extent_x,
                         double extent_y, std::size_t h, std::size_t w);

// Fills empty cells layer by layer from the boundary of the empty region
// inward; each filled cell is the mean of its already-valued 4-neighbors.
void fill_empty_cells(Grid& grid);

// Adds the constant-value boundary lines: tube gains zero rows top and
// bottom (64x64 -> 66x64); cavity gains the lid row carrying (u_b, 0) and
// zero lines on the three fixed walls (-> 66x66); other problems unchanged.
CaseRecord pad_constant_bc(const CaseRecord& rec);

struct NormalizationStats {
  std::vector<std::string> names;
  std::vector<double> min_v, max_v;
};

// Per-parameter min/max over the given (training) records, in sorted
// parameter-name order. Parameters absent from a record default to 0.
NormalizationStats compute_normalization(const std::vector<const CaseMeta*>& train_metas);

// Min-max maps each named parameter to [0,1] on the training range; a
// constant parameter maps to 0; out-of-range values are not clipped.
std::vector<double> normalize_params(const std::map<std::string, double>& params,
                                     const NormalizationStats& stats);

struct DatasetSplit {
  std::vector<std::string> train, val, test;
  std::uint64_t seed = 0;
};

// Case-level 8:1:1 split: floor allocation for val/test, remainder to train,
// deterministic shuffle by seed.
DatasetSplit split_cases(std::vector<std::string> case_ids, std::uint64_t seed);

// Atomic write of meta.json + frames.bin (LE float32 [T][C][H][W]) +
// mask.bin (uint8 [H][W]) into `dir`; read validates shape agreement.
void write_container(const CaseRecord& rec, const std::filesystem::path& dir);
CaseRecord read_container(const std::filesystem::path& dir);

}  // namespace cfdbench::datakit
