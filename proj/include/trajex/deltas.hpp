#pragma once

#include <cstddef>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "trajex/checkpoint.hpp"
#include "trajex/linalg.hpp"

namespace trajex {

// Global, local and target deltas of one parameter at checkpoint i:
//   G = W_i - W_0,  L = W_i - W_{i-1},  T = W_{i+k} - W_i (absent past the end).
struct DeltaSet {
    Matrix global;
    Matrix local;
    std::optional<Matrix> target;
};

// Requires 1 <= i <= c and k >= 1.
std::map<std::string, DeltaSet> compute_deltas(const Trajectory& traj, std::size_t i, std::size_t k);

// Flips (u, v) together when <curr.u, ref.u> < 0; a zero dot product keeps curr.
Rank1Factor align_sign(const Rank1Factor& curr, const Rank1Factor& ref);

// Rank-1 factors of a delta sequence, each sign-aligned to the latest
// non-degenerate predecessor. The first uses the canonical sign convention.
std::vector<Rank1Factor> temporal_factors(const std::vector<Matrix>& deltas);

struct ParameterFactors {
    std::vector<Rank1Factor> global;  // i = 1..size
    std::vector<Rank1Factor> local;
    std::vector<Rank1Factor> target;
};

// Aligned factor chains of one parameter: global/local for i = 1..upto,
// target for i = 1..c-k (empty when k == 0).
ParameterFactors parameter_factors(const Trajectory& traj, const std::string& name,
                                   std::size_t upto, std::size_t k);

enum class Field { u, v, sigma };

std::string to_string(Field f);
Field parse_field(const std::string& text);

enum class SigmaTransform { none, log1p };

std::string to_string(SigmaTransform t);
SigmaTransform parse_sigma_transform(const std::string& text);

struct TrainingExample {
    std::string param_name;
    std::size_t checkpoint_index = 0;
    Field field = Field::u;
    Vector s_global;
    Vector s_local;
    Vector s_target;

    friend bool operator==(const TrainingExample&, const TrainingExample&) = default;
};

struct DatasetGroup {
    Field field = Field::u;
    std::size_t dimension = 0;
    std::vector<TrainingExample> examples;

    friend bool operator==(const DatasetGroup&, const DatasetGroup&) = default;
};

struct Dataset {
    std::size_t k = 0;
    std::size_t c = 0;
    SigmaTransform sigma_transform = SigmaTransform::none;
    std::size_t skipped = 0;  // (parameter, i) pairs dropped for degenerate deltas
    std::vector<DatasetGroup> groups;  // ordered by (field, dimension)

    std::size_t example_count() const;

    friend bool operator==(const Dataset&, const Dataset&) = default;
};

// Emits u, v and sigma examples for every parameter and every i in [1, c-k].
// Throws InsufficientCheckpoints unless c >= k + 2.
Dataset extract_dataset(const Trajectory& traj, std::size_t k,
                        SigmaTransform sigma_transform = SigmaTransform::none);

// Keys "<param>/<i>/<field>/<G|L|T>" as 1 x d F64 rows, metadata in the sidecar.
void save_dataset(const Dataset& ds, const std::filesystem::path& path);
Dataset load_dataset(const std::filesystem::path& path);

}  // namespace trajex
