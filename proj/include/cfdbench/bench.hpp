#pragma once

// Evaluation harness: fluid-cell metrics, the identity baseline, single-step
// evaluation, autoregressive rollout curves, cost profiling, and report
// emission (CSV + SVG).

#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "cfdbench/trainer.hpp"

namespace cfdbench::bench {

using operators::D;

struct Metrics {
  double mse = 0.0, nmse = 0.0, mae = 0.0;
  std::size_t frames = 0;  // frames aggregated into the averages
};

// Definitional metrics over the fluid cells of one frame; `mask` has h*w
// entries and is applied to every channel. All-zero labels hit the 1e-12
// NMSE guard.
Metrics compute_metrics(const std::vector<D>& label, const std::vector<D>& pred,
                        const std::vector<std::uint8_t>& mask, std::size_t channels);

// Per-frame metrics averaged with frame counts carried through.
Metrics average_metrics(const std::vector<Metrics>& per_frame);
// Pooled-over-all-cells alternative aggregation (single pass, no averaging
// of ratios).
Metrics pooled_metrics(const std::vector<D>& label, const std::vector<D>& pred,
                       const std::vector<std::uint8_t>& mask, std::size_t channels);

// u(t) := u(t-dt) over all consecutive pairs of the listed cases,
// per-frame-then-averaged; frames = sum(T_case - 1).
Metrics eval_identity(const trainer::Dataset& data, const std::vector<std::string>& case_ids);

// Trained-model single-step evaluation over all consecutive pairs.
Metrics eval_single_step(operators::Model& model, const trainer::Dataset& data,
                         const std::vector<std::string>& case_ids, std::size_t k = 1000,
                         std::uint64_t seed = 0);

struct RolloutCurve {
  std::string model, case_id;
  std::vector<Metrics> steps;  // step i entry = prediction at frame i+1
};

// Autoregressive field predictor abstraction: maps the previous [2,H,W]
// velocity field to the next one; `step` is the 1-based target frame.
using FieldPredictor = std::function<TensorPtr<D>(const TensorPtr<D>& prev, std::size_t step)>;

// Feeds the predictor its own (mask-clamped) output from frame 0 and scores
// each step against the labeled frames; steps beyond the labels truncate.
RolloutCurve rollout_fields(const FieldPredictor& predict, const datakit::CaseRecord& rec,
                            std::size_t steps, const std::string& model_name);

// Model-backed rollout: autoregressive kinds feed back their predictions;
// non-autoregressive kinds are queried on the full grid at each step's time.
RolloutCurve rollout(operators::Model& model, const trainer::Dataset& data,
                     const datakit::CaseRecord& rec, std::size_t steps);

struct CostProfile {
  std::size_t parameters = 0;
  double train_step_ms = 0.0;   // median wall-clock of one batch-32 step
  double inference_ms = 0.0;    // median wall-clock, batch 1
  std::size_t peak_rss_bytes = 0;
};

// Medians over >= 20 timed iterations after warmup; weights bit-unchanged.
CostProfile profile(operators::Model& model, const trainer::Dataset& data,
                    std::size_t iterations = 20);

struct ResultRow {
  std::string model, problem, subset, split, metric;
  std::size_t step = 0;  // 0 = single-step summary rows
  double value = 0.0;
};

std::vector<ResultRow> rows_from_curve(const RolloutCurve& curve, const std::string& problem,
                                       const std::string& subset, const std::string& split);

// results.csv (model,problem,subset,split,metric,step,value) plus one
// log-scale SVG rollout plot per (problem, metric) group.
void emit_report(const std::vector<ResultRow>& rows, const std::filesystem::path& dir);

}  // namespace cfdbench::bench
