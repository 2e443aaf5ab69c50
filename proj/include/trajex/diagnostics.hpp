#pragma once

#include <cstddef>
#include <limits>
#include <ostream>
#include <string>
#include <utility>
#include <vector>

#include "trajex/checkpoint.hpp"

namespace trajex {

struct EnergyPoint {
    std::size_t checkpoint_index = 0;
    double energy_ratio = 0.0;
};

struct EnergySeries {
    std::string param_name;
    std::vector<EnergyPoint> points;  // zero deltas are left out as gaps
};

// E1 of the global delta at every checkpoint i >= 1, per parameter.
std::vector<EnergySeries> energy_ratio_series(const Trajectory& traj);

// Rows "param,checkpoint,energy_ratio".
void write_energy_csv(const std::vector<EnergySeries>& series, std::ostream& out);

struct R2Report {
    std::vector<std::pair<std::string, double>> r2;  // lexicographic by parameter
    std::vector<double> bucket_edges;                 // bucket b holds edges[b-1] <= r2 < edges[b]
    std::vector<std::size_t> histogram;               // bucket_edges.size() + 1 counts
    std::size_t fit_window = 0;
    std::size_t predict_window = 0;
    std::string regressed_quantity = "rank1_reconstruction_entries";
};

inline const std::vector<double> kDefaultR2Edges{-0.5, 0.0, 0.5};

// R^2 of per-entry affine least-squares fits over samples[0..fit) (x = 1..fit)
// evaluated on the remaining samples. SS_tot uses each entry's mean over the
// predicted window; sums run jointly over entries. With SS_tot = 0 the result
// is 1 for an exact prediction and -inf otherwise.
double affine_window_r2(const std::vector<Vector>& samples, std::size_t fit_window);

// Fits the vectorized rank-1 reconstruction of the global delta over
// i = 1..fit and scores i = fit+1..fit+predict.
R2Report linear_r2(const Trajectory& traj, std::size_t fit_window = 10, std::size_t predict_window = 5,
                   const std::vector<double>& bucket_edges = kDefaultR2Edges);

std::size_t r2_bucket(double r2, const std::vector<double>& edges);

// Rows "param,r2" followed by one "buckets" summary row.
void write_r2_csv(const R2Report& report, std::ostream& out);

// steps / (new_avg - baseline_avg), averages in percentage points.
double icer(long long steps, double baseline_avg, double new_avg);

std::string format_double(double x);

}  // namespace trajex
