#include "trajex/deltas.hpp"

#include <algorithm>
#include <cmath>
#include <iostream>
#include <tuple>

#include "json.hpp"
#include "trajex/container.hpp"
#include "trajex/error.hpp"
#include "trajex/parallel.hpp"

namespace trajex {

namespace {

using json = nlohmann::json;

Vector sigma_feature(double sigma, SigmaTransform t) {
    return {t == SigmaTransform::log1p ? std::log1p(sigma) : sigma};
}

struct ParamExamples {
    std::vector<TrainingExample> examples;
    std::size_t skipped = 0;
};

std::size_t parse_index(const std::string& text, const std::string& key) {
    try {
        std::size_t used = 0;
        const unsigned long v = std::stoul(text, &used);
        if (used == text.size()) {
            return v;
        }
    } catch (const std::exception&) {
    }
    fail(ErrorKind::FormatError, "dataset key '" + key + "' has a bad checkpoint index");
}

}  // namespace

std::map<std::string, DeltaSet> compute_deltas(const Trajectory& traj, std::size_t i, std::size_t k) {
    const std::size_t c = traj.count();
    if (i < 1 || i > c) {
        fail(ErrorKind::IndexOutOfRange, "checkpoint index " + std::to_string(i) + " outside [1, " +
                                             std::to_string(c) + "]");
    }
    if (k < 1) {
        fail(ErrorKind::IndexOutOfRange, "k must be at least 1");
    }
    const Checkpoint& w0 = traj.base;
    const Checkpoint& wi = traj.at(i);
    const Checkpoint& prev = traj.at(i - 1);
    check_same_schema(w0, wi);
    check_same_schema(w0, prev);
    const Checkpoint* ahead = i + k <= c ? &traj.at(i + k) : nullptr;
    if (ahead) {
        check_same_schema(w0, *ahead);
    }

    std::map<std::string, DeltaSet> out;
    for (const auto& [name, base] : w0.tensors) {
        const Matrix& cur = wi.tensors.at(name);
        DeltaSet d{cur - base, cur - prev.tensors.at(name), std::nullopt};
        if (ahead) {
            d.target = ahead->tensors.at(name) - cur;
        }
        out.emplace(name, std::move(d));
    }
    return out;
}

Rank1Factor align_sign(const Rank1Factor& curr, const Rank1Factor& ref) {
    Rank1Factor out = curr;
    if (dot(curr.u, ref.u) < 0.0) {
        for (double& e : out.u) e = -e;
        for (double& e : out.v) e = -e;
    }
    return out;
}

std::vector<Rank1Factor> temporal_factors(const std::vector<Matrix>& deltas) {
    std::vector<Rank1Factor> out;
    out.reserve(deltas.size());
    const Rank1Factor* ref = nullptr;
    for (const Matrix& d : deltas) {
        Rank1Factor f = top_singular_triplet(d);
        if (!f.degenerate && ref != nullptr) {
            f = align_sign(f, *ref);
        }
        out.push_back(std::move(f));
        if (!out.back().degenerate) {
            ref = &out.back();
        }
    }
    return out;
}

ParameterFactors parameter_factors(const Trajectory& traj, const std::string& name,
                                   std::size_t upto, std::size_t k) {
    const std::size_t c = traj.count();
    if (upto > c) {
        fail(ErrorKind::IndexOutOfRange, "factor chain beyond the last checkpoint");
    }
    auto weight = [&](std::size_t i) -> const Matrix& {
        const auto& tensors = traj.at(i).tensors;
        auto it = tensors.find(name);
        if (it == tensors.end()) {
            fail(ErrorKind::SchemaMismatch, "parameter '" + name + "' missing at checkpoint " +
                                                std::to_string(i));
        }
        return it->second;
    };
    std::vector<Matrix> g;
    std::vector<Matrix> l;
    std::vector<Matrix> t;
    for (std::size_t i = 1; i <= upto; ++i) {
        g.push_back(weight(i) - weight(0));
        l.push_back(weight(i) - weight(i - 1));
    }
    if (k > 0) {
        for (std::size_t i = 1; i + k <= c; ++i) {
            t.push_back(weight(i + k) - weight(i));
        }
    }
    return {temporal_factors(g), temporal_factors(l), temporal_factors(t)};
}

std::string to_string(Field f) {
    switch (f) {
        case Field::u: return "u";
        case Field::v: return "v";
        case Field::sigma: return "sigma";
    }
    return "?";
}

Field parse_field(const std::string& text) {
    if (text == "u") return Field::u;
    if (text == "v") return Field::v;
    if (text == "sigma") return Field::sigma;
    fail(ErrorKind::FormatError, "unknown field '" + text + "'");
}

std::string to_string(SigmaTransform t) {
    return t == SigmaTransform::none ? "none" : "log1p";
}

SigmaTransform parse_sigma_transform(const std::string& text) {
    if (text == "none") return SigmaTransform::none;
    if (text == "log1p") return SigmaTransform::log1p;
    fail(ErrorKind::FormatError, "unknown sigma transform '" + text + "'");
}

std::size_t Dataset::example_count() const {
    std::size_t n = 0;
    for (const auto& g : groups) {
        n += g.examples.size();
    }
    return n;
}

Dataset extract_dataset(const Trajectory& traj, std::size_t k, SigmaTransform sigma_transform) {
    const std::size_t c = traj.count();
    if (k < 1 || c < k + 2) {
        fail(ErrorKind::InsufficientCheckpoints,
             std::to_string(c) + " checkpoints cannot provide targets " + std::to_string(k) +
                 " ahead (need at least k + 2)");
    }
    validate_trajectory(traj);
    std::vector<std::string> names;
    for (const auto& [name, m] : traj.base.tensors) {
        names.push_back(name);
    }
    const std::size_t windows = c - k;

    std::vector<ParamExamples> per_param(names.size());
    parallel_for(names.size(), [&](std::size_t p) {
        const ParameterFactors f = parameter_factors(traj, names[p], windows, k);
        ParamExamples& out = per_param[p];
        for (std::size_t i = 1; i <= windows; ++i) {
            const Rank1Factor& g = f.global[i - 1];
            const Rank1Factor& l = f.local[i - 1];
            const Rank1Factor& t = f.target[i - 1];
            if (g.degenerate || l.degenerate || t.degenerate) {
                ++out.skipped;
                continue;
            }
            out.examples.push_back({names[p], i, Field::u, g.u, l.u, t.u});
            out.examples.push_back({names[p], i, Field::v, g.v, l.v, t.v});
            out.examples.push_back({names[p], i, Field::sigma, sigma_feature(g.sigma, sigma_transform),
                                    sigma_feature(l.sigma, sigma_transform),
                                    sigma_feature(t.sigma, sigma_transform)});
        }
    });

    Dataset ds;
    ds.k = k;
    ds.c = c;
    ds.sigma_transform = sigma_transform;
    std::map<std::pair<Field, std::size_t>, DatasetGroup> groups;
    for (auto& pe : per_param) {
        ds.skipped += pe.skipped;
        for (auto& ex : pe.examples) {
            const std::size_t d = ex.s_target.size();
            DatasetGroup& grp = groups[{ex.field, d}];
            grp.field = ex.field;
            grp.dimension = d;
            grp.examples.push_back(std::move(ex));
        }
    }
    if (ds.skipped > 0) {
        std::clog << "extract_dataset: skipped " << ds.skipped
                  << " (parameter, checkpoint) pairs with degenerate deltas\n";
    }
    for (auto& [key, grp] : groups) {
        ds.groups.push_back(std::move(grp));
    }
    return ds;
}

void save_dataset(const Dataset& ds, const std::filesystem::path& path) {
    TensorFile file;
    auto row = [](const Vector& x) { return StoredArray{DType::F64, {1, x.size()}, x}; };
    for (const auto& grp : ds.groups) {
        for (const auto& ex : grp.examples) {
            const std::string prefix = ex.param_name + "/" + std::to_string(ex.checkpoint_index) + "/" +
                                       to_string(ex.field) + "/";
            file.arrays.emplace(prefix + "G", row(ex.s_global));
            file.arrays.emplace(prefix + "L", row(ex.s_local));
            file.arrays.emplace(prefix + "T", row(ex.s_target));
        }
    }
    write_tensor_file(path, file);
    const json meta = {{"k", ds.k},
                       {"c", ds.c},
                       {"fields", {"u", "v", "sigma"}},
                       {"sign_alignment", "temporal"},
                       {"sigma_transform", to_string(ds.sigma_transform)},
                       {"skipped", ds.skipped}};
    write_file_bytes(sidecar_path(path), meta.dump(2) + "\n");
}

Dataset load_dataset(const std::filesystem::path& path) {
    const TensorFile file = read_tensor_file(path);
    Dataset ds;
    try {
        const json meta = json::parse(read_file_bytes(sidecar_path(path)));
        ds.k = meta.at("k").get<std::size_t>();
        ds.c = meta.at("c").get<std::size_t>();
        ds.sigma_transform = parse_sigma_transform(meta.at("sigma_transform").get<std::string>());
        ds.skipped = meta.value("skipped", std::size_t{0});
    } catch (const json::exception& e) {
        fail(ErrorKind::FormatError, sidecar_path(path).string() + ": " + e.what());
    }

    // (param, i, field) -> example; keys are split from the right so parameter
    // names may themselves contain '/'.
    std::map<std::tuple<std::string, std::size_t, Field>, TrainingExample> examples;
    for (const auto& [key, arr] : file.arrays) {
        const auto p3 = key.rfind('/');
        const auto p2 = p3 == std::string::npos || p3 == 0 ? std::string::npos : key.rfind('/', p3 - 1);
        const auto p1 = p2 == std::string::npos || p2 == 0 ? std::string::npos : key.rfind('/', p2 - 1);
        if (p1 == std::string::npos || arr.shape.size() != 2 || arr.shape[0] != 1) {
            fail(ErrorKind::FormatError, "malformed dataset entry '" + key + "'");
        }
        const std::string name = key.substr(0, p1);
        const std::size_t index = parse_index(key.substr(p1 + 1, p2 - p1 - 1), key);
        const Field field = parse_field(key.substr(p2 + 1, p3 - p2 - 1));
        const std::string kind = key.substr(p3 + 1);
        TrainingExample& ex = examples[{name, index, field}];
        ex.param_name = name;
        ex.checkpoint_index = index;
        ex.field = field;
        if (kind == "G") {
            ex.s_global = arr.data;
        } else if (kind == "L") {
            ex.s_local = arr.data;
        } else if (kind == "T") {
            ex.s_target = arr.data;
        } else {
            fail(ErrorKind::FormatError, "dataset entry '" + key + "' has unknown delta kind");
        }
    }

    std::map<std::pair<Field, std::size_t>, DatasetGroup> groups;
    for (auto& [key, ex] : examples) {
        const std::size_t d = ex.s_target.size();
        if (d == 0 || ex.s_global.size() != d || ex.s_local.size() != d) {
            fail(ErrorKind::FormatError, "dataset example '" + ex.param_name + "/" +
                                             std::to_string(ex.checkpoint_index) +
                                             "' is incomplete or has mismatched lengths");
        }
        DatasetGroup& grp = groups[{ex.field, d}];
        grp.field = ex.field;
        grp.dimension = d;
        grp.examples.push_back(std::move(ex));
    }
    for (auto& [key, grp] : groups) {
        ds.groups.push_back(std::move(grp));
    }
    return ds;
}

}  // namespace trajex
