#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "json.hpp"

#include "trajex/checkpoint.hpp"

namespace trajex {

// Synthetic stand-ins for real training runs: closed-form planted dynamics
// with a known continuation, and a small tanh network trained by gradient
// descent in full or LoRA mode.

struct LayerShape {
    std::size_t rows = 0;
    std::size_t cols = 0;

    friend bool operator==(const LayerShape&, const LayerShape&) = default;
};

// "64x48,32x32" -> {{64,48},{32,32}}
std::vector<LayerShape> parse_shapes(const std::string& text);

enum class DynamicsKind { linear, saturating, logistic };

std::string to_string(DynamicsKind kind);
DynamicsKind parse_dynamics_kind(const std::string& text);

struct DynamicsSpec {
    DynamicsKind kind = DynamicsKind::saturating;
    double amplitude = 1.0;
    double timescale = 5.0;
    double noise_std = 0.0;
    std::uint64_t seed = 17;
};

// f(t) with horizon T:
//   linear      amplitude * t / T
//   saturating  amplitude * (1 - exp(-t / timescale))
//   logistic    amplitude / (1 + exp(-(t - T/2) / timescale))
double dynamics_value(const DynamicsSpec& spec, double t, double horizon);

std::string lab_param_name(std::size_t index);

// Everything needed to regenerate an analytic trajectory and its truth.
struct AnalyticLab {
    DynamicsSpec dynamics;
    std::vector<LayerShape> shapes;
    std::size_t n_checkpoints = 15;
    std::int64_t step_interval = 10;
};

// W_t = W_init + f(t) * sigma * u v^T (+ noise for t >= 1). t = 0 is the
// backbone; t > n_checkpoints gives the noiseless ground-truth continuation.
Checkpoint analytic_checkpoint(const AnalyticLab& lab, std::size_t t, bool with_noise = true);
Trajectory analytic_trajectory(const AnalyticLab& lab);

// Writes base, checkpoints, manifest.json and lab.json into out_dir.
TrajectoryManifest gen_analytic_trajectory(const AnalyticLab& lab, const std::filesystem::path& out_dir);

void to_json(nlohmann::json& j, const AnalyticLab& lab);
void from_json(const nlohmann::json& j, AnalyticLab& lab);
AnalyticLab load_analytic_lab(const std::filesystem::path& path);

enum class TrainMode { full, lora };

struct ToyTrainSpec {
    // Consecutive layers chain: shapes[i].cols == shapes[i-1].rows.
    std::vector<LayerShape> layer_shapes{{16, 8}, {16, 16}, {4, 16}};
    std::uint64_t task_seed = 17;
    std::size_t steps = 150;
    std::size_t save_interval = 10;
    double learning_rate = 0.05;
    TrainMode mode = TrainMode::full;
    std::size_t lora_rank = 4;
    std::size_t samples = 64;
    // LoRA mode only: also write adapters and reference them from the manifest.
    bool save_adapters = false;
};

void validate(const ToyTrainSpec& spec);

struct ToyRun {
    Trajectory trajectory;
    std::vector<LoraAdapter> adapters;  // one per saved checkpoint in LoRA mode
    std::vector<double> losses;         // loss before each step, plus the final loss
};

// Full-batch gradient descent on y = sin(P x) with tanh hidden layers and
// squared-error loss. Throws DivergedTraining on a non-finite loss.
ToyRun run_toy_training(const ToyTrainSpec& spec);
TrajectoryManifest gen_toy_training_trajectory(const ToyTrainSpec& spec, const std::filesystem::path& out_dir);

void to_json(nlohmann::json& j, const ToyTrainSpec& spec);
void from_json(const nlohmann::json& j, ToyTrainSpec& spec);

}  // namespace trajex
