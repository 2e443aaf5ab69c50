#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "trajex/matrix.hpp"

namespace trajex {

// Non-matrix arrays (biases, norms). Stored and copied, never decomposed.
struct PassthroughArray {
    std::vector<std::uint64_t> shape;
    Vector data;

    friend bool operator==(const PassthroughArray&, const PassthroughArray&) = default;
};

// Named-tensor snapshot at one optimizer step. std::map keeps names in
// lexicographic order, which every report and dataset relies on.
struct Checkpoint {
    std::int64_t step = 0;
    std::map<std::string, Matrix> tensors;
    std::map<std::string, PassthroughArray> passthrough;

    friend bool operator==(const Checkpoint&, const Checkpoint&) = default;
};

// Stored as binary32; the step goes into the container metadata.
void save_checkpoint(const Checkpoint& c, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

struct LoraEntry {
    std::string target;
    Matrix a;  // rank x n
    Matrix b;  // m x rank
    std::size_t rank = 0;
    double scale = 1.0;
};

struct LoraAdapter {
    std::vector<LoraEntry> entries;
    std::optional<std::int64_t> step;
};

// Adapter file: container with "<target>.lora_A" / "<target>.lora_B" plus a
// sidecar {"rank": int, "alpha": real[, "step": int]}; scale = alpha / rank.
LoraAdapter load_lora_adapter(const std::filesystem::path& path);
void save_lora_adapter(const LoraAdapter& adapter, const std::filesystem::path& path);

// W = W0 + scale * B * A for each target; everything else is copied.
Checkpoint merge_lora(const Checkpoint& base, const LoraAdapter& adapter);

struct ManifestEntry {
    std::int64_t step = 0;
    std::string path;
};

// Paths are kept as written; relative ones resolve against `root`.
struct TrajectoryManifest {
    std::optional<std::string> base_path;
    std::vector<ManifestEntry> entries;
    std::optional<std::vector<std::string>> lora_paths;
    std::filesystem::path root;
};

TrajectoryManifest load_manifest(const std::filesystem::path& path);
void save_manifest(const TrajectoryManifest& manifest, const std::filesystem::path& path);

// Backbone W0 plus saved checkpoints M1..Mc in step order.
struct Trajectory {
    Checkpoint base;
    std::vector<Checkpoint> checkpoints;

    std::size_t count() const noexcept { return checkpoints.size(); }
    // W_i with W_0 = base, 0 <= i <= c.
    const Checkpoint& at(std::size_t i) const { return i == 0 ? base : checkpoints.at(i - 1); }
};

// Loads every referenced file. Without a base the first entry is taken as
// the backbone. Throws SchemaMismatch on name or shape drift.
Trajectory read_trajectory(const TrajectoryManifest& manifest);
Trajectory read_trajectory(const std::filesystem::path& manifest_path);

void check_same_schema(const Checkpoint& reference, const Checkpoint& other);
void validate_trajectory(const Trajectory& traj);

}  // namespace trajex
