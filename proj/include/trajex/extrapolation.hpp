#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "trajex/checkpoint.hpp"
#include "trajex/linalg.hpp"
#include "trajex/matrix.hpp"
#include "trajex/predictor.hpp"

namespace trajex {

struct PredictedDelta {
    Matrix delta;  // sigma * u * v^T
    double sigma = 0.0;
};

// Runs the u, v and sigma predictors on aligned (G, L) factors of an m x n
// parameter. u and v are normalized, sigma is clamped at zero.
PredictedDelta predict_target(const PredictorBundle& bundle, const Rank1Factor& g, const Rank1Factor& l,
                              std::size_t m, std::size_t n);
Matrix predict_target_delta(const PredictorBundle& bundle, const Rank1Factor& g, const Rank1Factor& l,
                            std::size_t m, std::size_t n);

// W + alpha * delta. alpha == 0 returns W untouched.
Matrix predict_extend(const Matrix& w, const Matrix& delta_hat, double alpha);

struct ExtrapolationRecord {
    std::string param_name;
    double predicted_sigma = 0.0;
    double alpha = 0.0;
    double delta_frobenius = 0.0;  // norm of the unscaled predicted delta
    bool skipped = false;
    std::string reason;
};

struct ExtrapolationReport {
    std::size_t k = 0;
    double alpha = 0.0;
    std::string bundle_id;
    std::int64_t source_step = 0;
    std::int64_t output_step = 0;
    std::vector<std::string> warnings;
    std::vector<ExtrapolationRecord> records;  // lexicographic by name
};

// Predicted deltas for the last checkpoint, independent of alpha so a sweep
// pays for inference once.
struct PredictionSet {
    struct Item {
        std::string param_name;
        std::optional<PredictedDelta> prediction;  // empty when skipped
        std::string reason;
    };
    std::size_t k = 0;
    std::string bundle_id;
    std::int64_t source_step = 0;
    std::int64_t output_step = 0;
    std::vector<std::string> warnings;
    std::vector<Item> items;
};

PredictionSet predict_deltas(const Trajectory& traj, const PredictorBundle& bundle, std::size_t k);
std::pair<Checkpoint, ExtrapolationReport> apply_predictions(const Trajectory& traj, const PredictionSet& set,
                                                             double alpha);

std::pair<Checkpoint, ExtrapolationReport> extrapolate_checkpoint(const Trajectory& traj,
                                                                  const PredictorBundle& bundle, double alpha,
                                                                  std::size_t k);
std::pair<Checkpoint, ExtrapolationReport> extrapolate_checkpoint(const TrajectoryManifest& manifest,
                                                                  const PredictorBundle& bundle, double alpha,
                                                                  std::size_t k);

// step_c + k * median stride. The stride is the lower median of the gaps
// between saved checkpoints, or step_1 - step_0 with a single checkpoint.
std::int64_t extrapolated_step(const Trajectory& traj, std::size_t k);

enum class LinearVariant { full, rank1 };
enum class LinearSlope { last_interval, global };

std::string to_string(LinearVariant v);
LinearVariant parse_linear_variant(const std::string& text);

// last_interval: W_c + alpha * k * (W_c - W_{c-1}); global: W_c + alpha * (W_c - W_0).
// rank1 applies the best rank-1 approximation of that difference instead.
Checkpoint linear_extrapolate(const Trajectory& traj, double alpha, std::size_t k, LinearVariant variant,
                              LinearSlope slope = LinearSlope::last_interval);

// Per-parameter Frobenius error against a reference checkpoint.
std::map<std::string, double> frobenius_errors(const Checkpoint& predicted, const Checkpoint& truth);

struct ComparisonRow {
    std::string method;
    double alpha = 0.0;
    std::string param;
    double frobenius_error = 0.0;
};

// First line is metadata, then one record per parameter.
std::string report_jsonl(const ExtrapolationReport& report);
void write_report(const ExtrapolationReport& report, const std::filesystem::path& path);
std::string comparison_csv(const std::vector<ComparisonRow>& rows);

}  // namespace trajex
