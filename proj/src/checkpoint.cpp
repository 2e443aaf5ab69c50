#include "trajex/checkpoint.hpp"

#include "json.hpp"

#include "trajex/container.hpp"
#include "trajex/error.hpp"

namespace trajex {

namespace {

using json = nlohmann::json;
namespace fs = std::filesystem;

const std::string kLoraA = ".lora_A";
const std::string kLoraB = ".lora_B";

bool ends_with(const std::string& s, const std::string& suffix) {
    return s.size() >= suffix.size() && s.compare(s.size() - suffix.size(), suffix.size(), suffix) == 0;
}

json read_json(const fs::path& path) {
    const std::string text = read_file_bytes(path);
    try {
        return json::parse(text);
    } catch (const json::exception& e) {
        fail(ErrorKind::FormatError, path.string() + ": " + e.what());
    }
}

Matrix to_matrix(const std::string& name, const StoredArray& arr) {
    if (arr.shape.size() != 2) {
        fail(ErrorKind::FormatError, "tensor '" + name + "' is not 2-D");
    }
    return Matrix(arr.shape[0], arr.shape[1], arr.data);
}

StoredArray from_matrix(const Matrix& m, DType dtype) {
    return {dtype, {m.rows(), m.cols()}, {m.data().begin(), m.data().end()}};
}

fs::path resolve(const fs::path& root, const std::string& p) {
    const fs::path path(p);
    return path.is_absolute() || root.empty() ? path : root / path;
}

std::int64_t parse_step(const std::string& text, const std::string& origin) {
    try {
        std::size_t used = 0;
        const long long v = std::stoll(text, &used);
        if (used != text.size()) {
            throw std::invalid_argument("trailing characters");
        }
        return v;
    } catch (const std::exception&) {
        fail(ErrorKind::FormatError, origin + ": bad step metadata '" + text + "'");
    }
}

}  // namespace

void save_checkpoint(const Checkpoint& c, const fs::path& path) {
    TensorFile file;
    for (const auto& [name, m] : c.tensors) {
        file.arrays.emplace(name, from_matrix(m, DType::F32));
    }
    for (const auto& [name, p] : c.passthrough) {
        if (c.tensors.contains(name)) {
            fail(ErrorKind::InvalidArgument, "name '" + name + "' is both tensor and passthrough");
        }
        file.arrays.emplace(name, StoredArray{DType::F32, p.shape, p.data});
    }
    file.metadata["step"] = std::to_string(c.step);
    write_tensor_file(path, file);
}

Checkpoint load_checkpoint(const fs::path& path) {
    TensorFile file = read_tensor_file(path);
    Checkpoint c;
    if (auto it = file.metadata.find("step"); it != file.metadata.end()) {
        c.step = parse_step(it->second, path.string());
    }
    for (auto& [name, arr] : file.arrays) {
        if (arr.shape.size() == 2) {
            c.tensors.emplace(name, to_matrix(name, arr));
        } else {
            c.passthrough.emplace(name, PassthroughArray{arr.shape, std::move(arr.data)});
        }
    }
    return c;
}

LoraAdapter load_lora_adapter(const fs::path& path) {
    const TensorFile file = read_tensor_file(path);
    const json meta = read_json(sidecar_path(path));
    if (!meta.is_object() || !meta.contains("rank") || !meta.contains("alpha") ||
        !meta["rank"].is_number_integer() || !meta["alpha"].is_number()) {
        fail(ErrorKind::FormatError, sidecar_path(path).string() + ": needs integer rank and numeric alpha");
    }
    const std::int64_t rank = meta["rank"].get<std::int64_t>();
    const double alpha = meta["alpha"].get<double>();
    if (rank <= 0 || !(alpha > 0.0)) {
        fail(ErrorKind::FormatError, sidecar_path(path).string() + ": rank and alpha must be positive");
    }

    LoraAdapter adapter;
    if (meta.contains("step")) {
        if (!meta["step"].is_number_integer()) {
            fail(ErrorKind::FormatError, sidecar_path(path).string() + ": step must be an integer");
        }
        adapter.step = meta["step"].get<std::int64_t>();
    }
    for (const auto& [name, arr] : file.arrays) {
        if (ends_with(name, kLoraA)) {
            const std::string target = name.substr(0, name.size() - kLoraA.size());
            auto b = file.arrays.find(target + kLoraB);
            if (b == file.arrays.end()) {
                fail(ErrorKind::FormatError, path.string() + ": '" + name + "' has no matching lora_B");
            }
            adapter.entries.push_back({target, to_matrix(name, arr), to_matrix(b->first, b->second),
                                       static_cast<std::size_t>(rank),
                                       alpha / static_cast<double>(rank)});
        } else if (ends_with(name, kLoraB)) {
            const std::string target = name.substr(0, name.size() - kLoraB.size());
            if (!file.arrays.contains(target + kLoraA)) {
                fail(ErrorKind::FormatError, path.string() + ": '" + name + "' has no matching lora_A");
            }
        } else {
            fail(ErrorKind::FormatError, path.string() + ": unexpected adapter tensor '" + name + "'");
        }
    }
    return adapter;
}

void save_lora_adapter(const LoraAdapter& adapter, const fs::path& path) {
    if (adapter.entries.empty()) {
        fail(ErrorKind::InvalidArgument, "adapter has no entries");
    }
    const std::size_t rank = adapter.entries.front().rank;
    const double scale = adapter.entries.front().scale;
    TensorFile file;
    for (const auto& e : adapter.entries) {
        if (e.rank != rank || e.scale != scale) {
            fail(ErrorKind::InvalidArgument, "adapter file requires a uniform rank and scale");
        }
        file.arrays.emplace(e.target + kLoraA, from_matrix(e.a, DType::F32));
        file.arrays.emplace(e.target + kLoraB, from_matrix(e.b, DType::F32));
    }
    json meta = {{"rank", rank}, {"alpha", scale * static_cast<double>(rank)}};
    if (adapter.step) {
        meta["step"] = *adapter.step;
    }
    write_tensor_file(path, file);
    write_file_bytes(sidecar_path(path), meta.dump(2) + "\n");
}

Checkpoint merge_lora(const Checkpoint& base, const LoraAdapter& adapter) {
    Checkpoint out = base;
    for (const auto& e : adapter.entries) {
        auto it = out.tensors.find(e.target);
        if (it == out.tensors.end()) {
            fail(ErrorKind::MissingTarget, "adapter target '" + e.target + "' not in base checkpoint");
        }
        Matrix& w = it->second;
        if (e.a.rows() != e.rank || e.b.cols() != e.rank || e.b.rows() != w.rows() ||
            e.a.cols() != w.cols()) {
            fail(ErrorKind::ShapeMismatch, "adapter for '" + e.target + "' does not conform to " +
                                               std::to_string(w.rows()) + "x" +
                                               std::to_string(w.cols()) + " at rank " +
                                               std::to_string(e.rank));
        }
        w += e.scale * matmul(e.b, e.a);
    }
    if (adapter.step) {
        out.step = *adapter.step;
    }
    return out;
}

TrajectoryManifest load_manifest(const fs::path& path) {
    const json doc = read_json(path);
    const std::string origin = path.string();
    if (!doc.is_object() || !doc.contains("checkpoints") || !doc["checkpoints"].is_array()) {
        fail(ErrorKind::FormatError, origin + ": manifest needs a \"checkpoints\" array");
    }
    TrajectoryManifest man;
    man.root = path.parent_path();
    if (doc.contains("base") && !doc["base"].is_null()) {
        if (!doc["base"].is_string()) {
            fail(ErrorKind::FormatError, origin + ": \"base\" must be a string or null");
        }
        man.base_path = doc["base"].get<std::string>();
    }
    if (doc.contains("lora") && !doc["lora"].is_null()) {
        if (!doc["lora"].is_array()) {
            fail(ErrorKind::FormatError, origin + ": \"lora\" must be an array or null");
        }
        std::vector<std::string> lora;
        for (const json& p : doc["lora"]) {
            if (!p.is_string()) {
                fail(ErrorKind::FormatError, origin + ": lora paths must be strings");
            }
            lora.push_back(p.get<std::string>());
        }
        man.lora_paths = std::move(lora);
    }
    const bool has_lora = man.lora_paths.has_value();
    for (const json& e : doc["checkpoints"]) {
        if (!e.is_object() || !e.contains("step") || !e["step"].is_number_integer()) {
            fail(ErrorKind::FormatError, origin + ": each checkpoint needs an integer step");
        }
        ManifestEntry entry{e["step"].get<std::int64_t>(), {}};
        if (e.contains("path") && e["path"].is_string()) {
            entry.path = e["path"].get<std::string>();
        } else if (!has_lora) {
            fail(ErrorKind::FormatError, origin + ": checkpoint entry needs a path");
        }
        man.entries.push_back(std::move(entry));
    }
    if (man.entries.empty()) {
        fail(ErrorKind::FormatError, origin + ": checkpoint list is empty");
    }
    for (std::size_t i = 1; i < man.entries.size(); ++i) {
        if (man.entries[i].step <= man.entries[i - 1].step) {
            fail(ErrorKind::NonMonotonicSteps,
                 origin + ": step " + std::to_string(man.entries[i].step) + " follows " +
                     std::to_string(man.entries[i - 1].step));
        }
    }
    if (has_lora) {
        if (man.lora_paths->size() != man.entries.size()) {
            fail(ErrorKind::FormatError, origin + ": lora list length differs from checkpoints");
        }
        if (!man.base_path) {
            fail(ErrorKind::FormatError, origin + ": lora adapters require a base checkpoint");
        }
    }
    return man;
}

void save_manifest(const TrajectoryManifest& man, const fs::path& path) {
    json doc;
    doc["base"] = man.base_path ? json(*man.base_path) : json(nullptr);
    json entries = json::array();
    for (const auto& e : man.entries) {
        entries.push_back({{"path", e.path}, {"step", e.step}});
    }
    doc["checkpoints"] = std::move(entries);
    doc["lora"] = man.lora_paths ? json(*man.lora_paths) : json(nullptr);
    write_file_bytes(path, doc.dump(2) + "\n");
}

void check_same_schema(const Checkpoint& ref, const Checkpoint& other) {
    auto mismatch = [&](const std::string& what) {
        fail(ErrorKind::SchemaMismatch, "step " + std::to_string(other.step) + ": " + what);
    };
    if (ref.tensors.size() != other.tensors.size() ||
        ref.passthrough.size() != other.passthrough.size()) {
        mismatch("tensor count differs from base");
    }
    for (const auto& [name, m] : ref.tensors) {
        auto it = other.tensors.find(name);
        if (it == other.tensors.end()) {
            mismatch("missing tensor '" + name + "'");
        }
        if (!it->second.same_shape(m)) {
            mismatch("tensor '" + name + "' changed shape");
        }
    }
    for (const auto& [name, p] : ref.passthrough) {
        auto it = other.passthrough.find(name);
        if (it == other.passthrough.end()) {
            mismatch("missing array '" + name + "'");
        }
        if (it->second.shape != p.shape) {
            mismatch("array '" + name + "' changed shape");
        }
    }
}

void validate_trajectory(const Trajectory& traj) {
    for (const auto& c : traj.checkpoints) {
        check_same_schema(traj.base, c);
    }
    for (std::size_t i = 1; i < traj.checkpoints.size(); ++i) {
        if (traj.checkpoints[i].step <= traj.checkpoints[i - 1].step) {
            fail(ErrorKind::NonMonotonicSteps, "trajectory steps are not strictly increasing");
        }
    }
}

Trajectory read_trajectory(const TrajectoryManifest& man) {
    if (man.entries.empty()) {
        fail(ErrorKind::EmptyTrajectory, "manifest lists no checkpoints");
    }
    Trajectory traj;
    std::size_t first = 0;
    if (man.base_path) {
        traj.base = load_checkpoint(resolve(man.root, *man.base_path));
    } else {
        traj.base = load_checkpoint(resolve(man.root, man.entries.front().path));
        traj.base.step = man.entries.front().step;
        first = 1;
    }
    for (std::size_t i = first; i < man.entries.size(); ++i) {
        Checkpoint c = man.lora_paths
                           ? merge_lora(traj.base, load_lora_adapter(resolve(man.root, (*man.lora_paths)[i])))
                           : load_checkpoint(resolve(man.root, man.entries[i].path));
        c.step = man.entries[i].step;
        traj.checkpoints.push_back(std::move(c));
    }
    for (const auto& c : traj.checkpoints) {
        check_same_schema(traj.base, c);
    }
    return traj;
}

Trajectory read_trajectory(const fs::path& manifest_path) {
    return read_trajectory(load_manifest(manifest_path));
}

}  // namespace trajex
