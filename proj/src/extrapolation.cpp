#include "trajex/extrapolation.hpp"

#include <algorithm>
#include <cmath>

#include "json.hpp"
#include "trajex/container.hpp"
#include "trajex/deltas.hpp"
#include "trajex/diagnostics.hpp"
#include "trajex/error.hpp"
#include "trajex/parallel.hpp"

namespace trajex {

namespace {

using json = nlohmann::json;

constexpr double kMinPredictionNorm = 1e-12;

const PredictorEntry& require_predictor(const PredictorBundle& bundle, Field field, std::size_t d) {
    const PredictorEntry* e = bundle.find(field, d);
    if (!e) {
        fail(ErrorKind::MissingPredictor, "bundle has no " + to_string(field) + " predictor for dimension " +
                                              std::to_string(d));
    }
    return *e;
}

Vector unit_prediction(const PredictorBundle& bundle, Field field, const Vector& g, const Vector& l) {
    const PredictorEntry& e = require_predictor(bundle, field, g.size());
    Vector out = forward(e.params, g, l);
    const double n = norm2(out);
    if (!(n >= kMinPredictionNorm)) {
        fail(ErrorKind::ZeroNormPrediction, to_string(field) + " predictor output has norm " + format_double(n));
    }
    for (double& x : out) x /= n;
    return out;
}

double sigma_in(double s, SigmaTransform t) {
    return t == SigmaTransform::log1p ? std::log1p(s) : s;
}

double sigma_out(double s, SigmaTransform t) {
    return t == SigmaTransform::log1p ? std::expm1(s) : s;
}

}  // namespace

PredictedDelta predict_target(const PredictorBundle& bundle, const Rank1Factor& g, const Rank1Factor& l,
                              std::size_t m, std::size_t n) {
    if (g.u.size() != m || l.u.size() != m || g.v.size() != n || l.v.size() != n) {
        fail(ErrorKind::DimensionMismatch, "factor lengths do not match the " + std::to_string(m) + "x" +
                                               std::to_string(n) + " parameter");
    }
    const SigmaTransform t = bundle.meta.sigma_transform;
    const PredictorEntry& sp = require_predictor(bundle, Field::sigma, 1);
    const Vector u = unit_prediction(bundle, Field::u, g.u, l.u);
    const Vector v = unit_prediction(bundle, Field::v, g.v, l.v);
    const Vector raw = forward(sp.params, Vector{sigma_in(g.sigma, t)}, Vector{sigma_in(l.sigma, t)});
    const double sigma = std::max(sigma_out(raw[0], t), 0.0);
    if (!std::isfinite(sigma)) {
        fail(ErrorKind::NonFinite, "sigma predictor returned a non-finite value");
    }
    return {outer(sigma, u, v), sigma};
}

Matrix predict_target_delta(const PredictorBundle& bundle, const Rank1Factor& g, const Rank1Factor& l,
                            std::size_t m, std::size_t n) {
    return predict_target(bundle, g, l, m, n).delta;
}

Matrix predict_extend(const Matrix& w, const Matrix& delta_hat, double alpha) {
    require_same_shape(w, delta_hat, "predict_extend");
    if (alpha == 0.0) {
        return w;
    }
    Matrix out = w;
    for (std::size_t i = 0; i < out.size(); ++i) {
        out.data()[i] += alpha * delta_hat.data()[i];
    }
    return out;
}

std::int64_t extrapolated_step(const Trajectory& traj, std::size_t k) {
    const std::size_t c = traj.count();
    if (c == 0) {
        fail(ErrorKind::EmptyTrajectory, "trajectory has no checkpoints");
    }
    std::int64_t stride = 0;
    if (c == 1) {
        stride = traj.at(1).step - traj.at(0).step;
    } else {
        std::vector<std::int64_t> gaps;
        for (std::size_t i = 2; i <= c; ++i) gaps.push_back(traj.at(i).step - traj.at(i - 1).step);
        std::sort(gaps.begin(), gaps.end());
        stride = gaps[(gaps.size() - 1) / 2];
    }
    return traj.at(c).step + static_cast<std::int64_t>(k) * stride;
}

PredictionSet predict_deltas(const Trajectory& traj, const PredictorBundle& bundle, std::size_t k) {
    const std::size_t c = traj.count();
    if (c == 0) {
        fail(ErrorKind::EmptyTrajectory, "trajectory has no checkpoints");
    }
    if (k == 0) {
        fail(ErrorKind::InvalidArgument, "k must be at least 1");
    }
    PredictionSet set;
    set.k = k;
    set.bundle_id = bundle_id(bundle);
    set.source_step = traj.at(c).step;
    set.output_step = extrapolated_step(traj, k);
    if (auto w = check_bundle_k(bundle, k)) {
        set.warnings.push_back(*w);
    }

    const Checkpoint& last = traj.at(c);
    std::vector<std::string> names;
    for (const auto& [name, _] : last.tensors) names.push_back(name);
    set.items.resize(names.size());
    parallel_for(names.size(), [&](std::size_t p) {
        auto& item = set.items[p];
        item.param_name = names[p];
        const Matrix& w = last.tensors.at(names[p]);
        // Alignment follows the full chain so inference sees the same sign
        // convention as the training examples.
        const ParameterFactors f = parameter_factors(traj, names[p], c, 0);
        const Rank1Factor& g = f.global.back();
        const Rank1Factor& l = f.local.back();
        if (g.degenerate || l.degenerate) {
            item.reason = "degenerate delta";
            return;
        }
        try {
            item.prediction = predict_target(bundle, g, l, w.rows(), w.cols());
        } catch (const Error& e) {
            if (e.kind() != ErrorKind::MissingPredictor && e.kind() != ErrorKind::ZeroNormPrediction) {
                throw;
            }
            item.reason = std::string(to_string(e.kind())) + ": " + e.what();
        }
    });
    return set;
}

std::pair<Checkpoint, ExtrapolationReport> apply_predictions(const Trajectory& traj, const PredictionSet& set,
                                                             double alpha) {
    if (!std::isfinite(alpha)) {
        fail(ErrorKind::NonFinite, "alpha must be finite");
    }
    const Checkpoint& last = traj.at(traj.count());
    Checkpoint out = last;
    ExtrapolationReport report;
    report.k = set.k;
    report.alpha = alpha;
    report.bundle_id = set.bundle_id;
    report.source_step = set.source_step;
    report.output_step = alpha == 0.0 ? last.step : set.output_step;
    report.warnings = set.warnings;
    out.step = report.output_step;
    for (const auto& item : set.items) {
        ExtrapolationRecord rec;
        rec.param_name = item.param_name;
        rec.alpha = alpha;
        if (!item.prediction) {
            rec.skipped = true;
            rec.reason = item.reason;
        } else {
            rec.predicted_sigma = item.prediction->sigma;
            rec.delta_frobenius = frobenius_norm(item.prediction->delta);
            Matrix& w = out.tensors.at(item.param_name);
            w = predict_extend(w, item.prediction->delta, alpha);
        }
        report.records.push_back(std::move(rec));
    }
    return {std::move(out), std::move(report)};
}

std::pair<Checkpoint, ExtrapolationReport> extrapolate_checkpoint(const Trajectory& traj,
                                                                  const PredictorBundle& bundle, double alpha,
                                                                  std::size_t k) {
    return apply_predictions(traj, predict_deltas(traj, bundle, k), alpha);
}

std::pair<Checkpoint, ExtrapolationReport> extrapolate_checkpoint(const TrajectoryManifest& manifest,
                                                                  const PredictorBundle& bundle, double alpha,
                                                                  std::size_t k) {
    if (manifest.entries.empty()) {
        fail(ErrorKind::EmptyTrajectory, "manifest lists no checkpoints");
    }
    return extrapolate_checkpoint(read_trajectory(manifest), bundle, alpha, k);
}

std::string to_string(LinearVariant v) {
    return v == LinearVariant::full ? "full" : "rank1";
}

LinearVariant parse_linear_variant(const std::string& text) {
    if (text == "full") return LinearVariant::full;
    if (text == "rank1") return LinearVariant::rank1;
    fail(ErrorKind::InvalidArgument, "unknown linear variant '" + text + "'");
}

Checkpoint linear_extrapolate(const Trajectory& traj, double alpha, std::size_t k, LinearVariant variant,
                              LinearSlope slope) {
    const std::size_t c = traj.count();
    if (c == 0) {
        fail(ErrorKind::InsufficientCheckpoints, "linear extrapolation needs at least two checkpoints");
    }
    if (!std::isfinite(alpha)) {
        fail(ErrorKind::NonFinite, "alpha must be finite");
    }
    const Checkpoint& last = traj.at(c);
    const Checkpoint& ref = slope == LinearSlope::global ? traj.at(0) : traj.at(c - 1);
    const double scale = slope == LinearSlope::global ? alpha : alpha * static_cast<double>(k);
    Checkpoint out = last;
    out.step = alpha == 0.0 ? last.step : extrapolated_step(traj, k);

    std::vector<std::string> names;
    for (const auto& [name, _] : last.tensors) names.push_back(name);
    std::vector<Matrix> results(names.size());
    parallel_for(names.size(), [&](std::size_t p) {
        const Matrix& w = last.tensors.at(names[p]);
        Matrix diff = w - ref.tensors.at(names[p]);
        if (variant == LinearVariant::rank1) {
            diff = rank1_reconstruct(top_singular_triplet(diff));
        }
        results[p] = predict_extend(w, diff, scale);
    });
    for (std::size_t p = 0; p < names.size(); ++p) {
        out.tensors.at(names[p]) = std::move(results[p]);
    }
    return out;
}

std::map<std::string, double> frobenius_errors(const Checkpoint& predicted, const Checkpoint& truth) {
    std::map<std::string, double> errors;
    for (const auto& [name, w] : predicted.tensors) {
        auto it = truth.tensors.find(name);
        if (it == truth.tensors.end()) {
            fail(ErrorKind::SchemaMismatch, "reference checkpoint lacks '" + name + "'");
        }
        errors[name] = frobenius_norm(w - it->second);
    }
    return errors;
}

std::string report_jsonl(const ExtrapolationReport& report) {
    std::string out = json{{"record", "metadata"},
                           {"k", report.k},
                           {"alpha", report.alpha},
                           {"bundle_id", report.bundle_id},
                           {"source_step", report.source_step},
                           {"output_step", report.output_step},
                           {"warnings", report.warnings}}
                          .dump() +
                      "\n";
    for (const auto& r : report.records) {
        json line = {{"record", "parameter"},
                     {"param_name", r.param_name},
                     {"predicted_sigma", r.predicted_sigma},
                     {"alpha", r.alpha},
                     {"delta_frobenius", r.delta_frobenius},
                     {"skipped", r.skipped}};
        if (r.skipped) line["reason"] = r.reason;
        out += line.dump() + "\n";
    }
    return out;
}

void write_report(const ExtrapolationReport& report, const std::filesystem::path& path) {
    write_file_bytes(path, report_jsonl(report));
}

std::string comparison_csv(const std::vector<ComparisonRow>& rows) {
    std::string out = "method,alpha,param,frobenius_error\n";
    for (const auto& r : rows) {
        out += r.method + "," + format_double(r.alpha) + "," + r.param + "," + format_double(r.frobenius_error) + "\n";
    }
    return out;
}

}  // namespace trajex
