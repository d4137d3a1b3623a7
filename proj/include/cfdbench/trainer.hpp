#pragma once

// Training loop: NMSE loss, mask-aware query sampling, the stepped learning
// rate schedule, Adam updates, best-validation selection and early stopping.

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "cfdbench/adam.hpp"
#include "cfdbench/datakit.hpp"
#include "cfdbench/operators.hpp"

namespace cfdbench::trainer {

using operators::D;

struct TrainConfig {
  double base_lr = 1e-3;
  std::size_t epochs = 100;
  std::size_t batch = 32;          // examples per optimizer step
  double decay = 0.9;              // lr multiplier applied every decay_period
  std::size_t decay_period = 20;   // epochs
  std::size_t k = 1000;            // sampled query points per frame
  std::uint64_t seed = 0;
  std::size_t early_stop = 30;     // epochs without val improvement

  void validate() const;  // ConfigError on violated invariants
};

// base * decay^floor(epoch / period)
double lr_at_epoch(double base, std::size_t epoch, double decay = 0.9, std::size_t period = 20);

struct EpochStats {
  std::size_t epoch = 0;
  double train_nmse = 0.0, val_nmse = 0.0, lr = 0.0;
};

struct TrainState {
  std::vector<EpochStats> history;  // one entry per completed epoch
  std::size_t best_epoch = 0;       // epoch of the restored weights
  double best_val = 0.0;
};

// In-memory dataset: loaded cases plus the case-level split and the
// Omega normalization statistics computed over the training cases.
struct Dataset {
  std::vector<datakit::CaseRecord> cases;
  datakit::DatasetSplit split;
  datakit::NormalizationStats norm;

  const datakit::CaseRecord& find(const std::string& case_id) const;  // ContractError
};

Dataset make_dataset(std::vector<datakit::CaseRecord> cases, std::uint64_t seed);
// Reads every direct subdirectory of `root` as a case container.
Dataset load_dataset(const std::filesystem::path& root, std::uint64_t seed);

// ---------------------------------------------------------------------------
// Example assembly (shared with bench)
// ---------------------------------------------------------------------------

// Normalized Omega of a case under the dataset's training statistics.
std::vector<D> omega_of(const Dataset& data, const datakit::CaseMeta& meta);

// [2 + 1 + |omega|, H, W]: u,v at `frame`, the fluid mask, and one constant
// channel per Omega entry.
TensorPtr<D> image_input(const datakit::CaseRecord& rec, std::size_t frame,
                         const std::vector<D>& omega);
// [2, H, W] velocity label at `frame`.
TensorPtr<D> frame_label(const datakit::CaseRecord& rec, std::size_t frame);
// [2, H, W] with the fluid mask replicated over both channels (constant).
TensorPtr<D> mask_weights(const datakit::CaseRecord& rec);
// [1, 2*32*32] u,v on the fixed 32x32 sub-lattice of the frame.
TensorPtr<D> u_sample_of(const datakit::CaseRecord& rec, std::size_t frame);

struct QueryPoint {
  std::size_t row = 0, col = 0;
  double x = 0.0, y = 0.0;  // cell-center coordinates normalized to [0,1]
};

// k cells drawn uniformly without replacement from the fluid cells of the
// mask; deterministic per seed. ContractError when k exceeds the fluid count.
std::vector<QueryPoint> sample_queries(const std::vector<std::uint8_t>& mask, std::size_t h,
                                       std::size_t w, std::size_t k, std::uint64_t seed);

// Masked per-frame NMSE loss (label cells outside the mask contribute zero
// to numerator and denominator).
TensorPtr<D> nmse_loss(Tape<D>* tape, const TensorPtr<D>& pred, const TensorPtr<D>& label,
                       const TensorPtr<D>& mask_w = nullptr);

// ---------------------------------------------------------------------------
// Training
// ---------------------------------------------------------------------------

// Runs the full regime on the dataset's train split, validating on the val
// split each epoch; restores the best-validation weights before returning.
// ContractError with epoch/batch/lr diagnostics when the loss goes NaN.
// When run_dir is non-empty: writes config.json, history.csv and the final
// checkpoint there.
TrainState train(operators::Model& model, const Dataset& data, const TrainConfig& cfg,
                 const std::filesystem::path& run_dir = {});

}  // namespace cfdbench::trainer
