#include "trajex/diagnostics.hpp"

#include <cmath>
#include <cstdio>
#include <limits>

#include "trajex/error.hpp"
#include "trajex/linalg.hpp"
#include "trajex/parallel.hpp"

namespace trajex {

namespace {

std::string edge_label(double x) {
    if (std::isinf(x)) {
        return x < 0 ? "-inf" : "inf";
    }
    char buf[32];
    std::snprintf(buf, sizeof buf, "%g", x);
    return buf;
}

std::vector<std::string> param_names(const Trajectory& traj) {
    std::vector<std::string> names;
    for (const auto& [name, m] : traj.base.tensors) {
        names.push_back(name);
    }
    return names;
}

}  // namespace

std::string format_double(double x) {
    if (std::isinf(x)) {
        return x < 0 ? "-inf" : "inf";
    }
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", x);
    return buf;
}

std::vector<EnergySeries> energy_ratio_series(const Trajectory& traj) {
    if (traj.count() < 1) {
        fail(ErrorKind::InsufficientCheckpoints, "energy series needs a base and at least one checkpoint");
    }
    validate_trajectory(traj);
    const auto names = param_names(traj);
    std::vector<EnergySeries> out(names.size());
    parallel_for(names.size(), [&](std::size_t p) {
        out[p].param_name = names[p];
        const Matrix& w0 = traj.base.tensors.at(names[p]);
        for (std::size_t i = 1; i <= traj.count(); ++i) {
            const Matrix delta = traj.at(i).tensors.at(names[p]) - w0;
            if (frobenius_norm(delta) == 0.0) {
                continue;
            }
            out[p].points.push_back({i, energy_ratio(delta)});
        }
    });
    return out;
}

void write_energy_csv(const std::vector<EnergySeries>& series, std::ostream& out) {
    out << "param,checkpoint,energy_ratio\n";
    for (const auto& s : series) {
        for (const auto& p : s.points) {
            out << s.param_name << ',' << p.checkpoint_index << ',' << format_double(p.energy_ratio) << '\n';
        }
    }
}

double affine_window_r2(const std::vector<Vector>& samples, std::size_t fit_window) {
    if (fit_window < 2 || samples.size() <= fit_window) {
        fail(ErrorKind::InsufficientCheckpoints, "R^2 needs at least 2 fit samples and 1 predicted sample");
    }
    const std::size_t dim = samples.front().size();
    for (const auto& s : samples) {
        if (s.size() != dim) {
            fail(ErrorKind::DimensionMismatch, "R^2 samples differ in length");
        }
    }
    const std::size_t total = samples.size();
    const double x_mean = (static_cast<double>(fit_window) + 1.0) / 2.0;
    double sxx = 0.0;
    for (std::size_t i = 1; i <= fit_window; ++i) {
        const double dx = static_cast<double>(i) - x_mean;
        sxx += dx * dx;
    }

    double ss_res = 0.0;
    double ss_tot = 0.0;
    for (std::size_t e = 0; e < dim; ++e) {
        double y_mean = 0.0;
        for (std::size_t i = 0; i < fit_window; ++i) {
            y_mean += samples[i][e];
        }
        y_mean /= static_cast<double>(fit_window);
        double sxy = 0.0;
        for (std::size_t i = 0; i < fit_window; ++i) {
            sxy += (static_cast<double>(i + 1) - x_mean) * (samples[i][e] - y_mean);
        }
        const double slope = sxy / sxx;
        const double intercept = y_mean - slope * x_mean;

        double truth_mean = 0.0;
        for (std::size_t i = fit_window; i < total; ++i) {
            truth_mean += samples[i][e];
        }
        truth_mean /= static_cast<double>(total - fit_window);
        for (std::size_t i = fit_window; i < total; ++i) {
            const double y = samples[i][e];
            const double pred = intercept + slope * static_cast<double>(i + 1);
            ss_res += (y - pred) * (y - pred);
            ss_tot += (y - truth_mean) * (y - truth_mean);
        }
    }
    if (ss_tot == 0.0) {
        return ss_res == 0.0 ? 1.0 : -std::numeric_limits<double>::infinity();
    }
    return 1.0 - ss_res / ss_tot;
}

std::size_t r2_bucket(double r2, const std::vector<double>& edges) {
    std::size_t b = 0;
    while (b < edges.size() && r2 >= edges[b]) {
        ++b;
    }
    return b;
}

R2Report linear_r2(const Trajectory& traj, std::size_t fit_window, std::size_t predict_window,
                   const std::vector<double>& bucket_edges) {
    if (fit_window < 2 || predict_window < 1 || traj.count() < fit_window + predict_window) {
        fail(ErrorKind::InsufficientCheckpoints,
             std::to_string(traj.count()) + " checkpoints cannot cover fit window " +
                 std::to_string(fit_window) + " + predict window " + std::to_string(predict_window));
    }
    validate_trajectory(traj);
    const auto names = param_names(traj);
    const std::size_t total = fit_window + predict_window;

    R2Report report;
    report.fit_window = fit_window;
    report.predict_window = predict_window;
    report.bucket_edges = bucket_edges;
    report.histogram.assign(bucket_edges.size() + 1, 0);
    report.r2.resize(names.size());

    parallel_for(names.size(), [&](std::size_t p) {
        const Matrix& w0 = traj.base.tensors.at(names[p]);
        std::vector<Vector> samples;
        samples.reserve(total);
        for (std::size_t i = 1; i <= total; ++i) {
            const Matrix rec = rank1_reconstruct(top_singular_triplet(traj.at(i).tensors.at(names[p]) - w0));
            samples.emplace_back(rec.data().begin(), rec.data().end());
        }
        report.r2[p] = {names[p], affine_window_r2(samples, fit_window)};
    });
    for (const auto& [name, r2] : report.r2) {
        ++report.histogram[r2_bucket(r2, bucket_edges)];
    }
    return report;
}

void write_r2_csv(const R2Report& report, std::ostream& out) {
    out << "param,r2\n";
    for (const auto& [name, r2] : report.r2) {
        out << name << ',' << format_double(r2) << '\n';
    }
    out << "buckets,";
    const auto& edges = report.bucket_edges;
    for (std::size_t b = 0; b < report.histogram.size(); ++b) {
        const double lo = b == 0 ? -std::numeric_limits<double>::infinity() : edges[b - 1];
        const double hi = b == edges.size() ? 1.0 : edges[b];
        const char close = b == edges.size() ? ']' : ')';
        out << (b == 0 ? "" : ";") << (b == 0 ? "(" : "[") << edge_label(lo) << ' ' << edge_label(hi)
            << close << '=' << report.histogram[b];
    }
    out << '\n';
}

double icer(long long steps, double baseline_avg, double new_avg) {
    if (steps <= 0) {
        fail(ErrorKind::InvalidArgument, "step count must be positive");
    }
    if (!(new_avg > baseline_avg)) {
        fail(ErrorKind::NonPositiveImprovement, "new average does not improve on the baseline");
    }
    return static_cast<double>(steps) / (new_avg - baseline_avg);
}

}  // namespace trajex
