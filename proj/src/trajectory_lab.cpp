#include "trajex/trajectory_lab.hpp"

#include <cmath>
#include <cstdio>
#include <sstream>

#include "trajex/container.hpp"
#include "trajex/error.hpp"
#include "trajex/rng.hpp"

namespace trajex {

namespace {

namespace fs = std::filesystem;
using json = nlohmann::json;

// Stream tags for CounterRng so independent draws never share counters.
enum : std::uint64_t {
    kTagInit = 1,
    kTagSigma = 2,
    kTagU = 3,
    kTagV = 4,
    kTagNoise = 5,
    kTagToyInput = 10,
    kTagToyProjection = 11,
    kTagToyWeight = 12,
    kTagToyLoraA = 13,
};

Vector unit_gaussian(const CounterRng& rng, std::size_t n) {
    Vector x(n);
    for (std::size_t i = 0; i < n; ++i) {
        x[i] = rng.normal(i);
    }
    const double norm = norm2(x);
    for (double& e : x) {
        e /= norm;
    }
    return x;
}

struct Planted {
    Matrix init;
    double sigma = 0.0;
    Vector u;
    Vector v;
};

Planted planted_parameter(const AnalyticLab& lab, std::size_t index) {
    const LayerShape shape = lab.shapes.at(index);
    const std::uint64_t seed = lab.dynamics.seed;
    Planted p;
    p.init = Matrix(shape.rows, shape.cols);
    const CounterRng init_rng(seed, {kTagInit, index});
    const double init_scale = 1.0 / std::sqrt(static_cast<double>(shape.cols));
    for (std::size_t i = 0; i < p.init.size(); ++i) {
        p.init.data()[i] = init_scale * init_rng.normal(i);
    }
    p.sigma = CounterRng(seed, {kTagSigma, index}).uniform(0, 1.0, 3.0);
    p.u = unit_gaussian(CounterRng(seed, {kTagU, index}), shape.rows);
    p.v = unit_gaussian(CounterRng(seed, {kTagV, index}), shape.cols);
    return p;
}

std::string format_step_file(std::int64_t step) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "ckpt_%06lld.safetensors", static_cast<long long>(step));
    return buf;
}

std::string mode_string(const ToyTrainSpec& spec) {
    return spec.mode == TrainMode::full ? "full" : "lora";
}

}  // namespace

std::vector<LayerShape> parse_shapes(const std::string& text) {
    std::vector<LayerShape> shapes;
    std::stringstream ss(text);
    std::string item;
    while (std::getline(ss, item, ',')) {
        const auto x = item.find('x');
        try {
            if (x == std::string::npos || item.find_first_not_of("0123456789x") != std::string::npos) {
                throw std::invalid_argument(item);
            }
            std::size_t used_r = 0;
            std::size_t used_c = 0;
            const std::string rs = item.substr(0, x);
            const std::string cs = item.substr(x + 1);
            const unsigned long r = std::stoul(rs, &used_r);
            const unsigned long c = std::stoul(cs, &used_c);
            if (used_r != rs.size() || used_c != cs.size() || r == 0 || c == 0) {
                throw std::invalid_argument(item);
            }
            shapes.push_back({r, c});
        } catch (const std::exception&) {
            fail(ErrorKind::InvalidArgument, "bad shape '" + item + "' (expected MxN)");
        }
    }
    if (shapes.empty()) {
        fail(ErrorKind::InvalidArgument, "empty shape list");
    }
    return shapes;
}

std::string to_string(DynamicsKind kind) {
    switch (kind) {
        case DynamicsKind::linear: return "linear";
        case DynamicsKind::saturating: return "saturating";
        case DynamicsKind::logistic: return "logistic";
    }
    return "?";
}

DynamicsKind parse_dynamics_kind(const std::string& text) {
    if (text == "linear") return DynamicsKind::linear;
    if (text == "saturating") return DynamicsKind::saturating;
    if (text == "logistic") return DynamicsKind::logistic;
    fail(ErrorKind::InvalidArgument, "unknown dynamics kind '" + text + "'");
}

double dynamics_value(const DynamicsSpec& spec, double t, double horizon) {
    switch (spec.kind) {
        case DynamicsKind::linear:
            return spec.amplitude * t / horizon;
        case DynamicsKind::saturating:
            return spec.amplitude * (1.0 - std::exp(-t / spec.timescale));
        case DynamicsKind::logistic:
            return spec.amplitude / (1.0 + std::exp(-(t - horizon / 2.0) / spec.timescale));
    }
    return 0.0;
}

std::string lab_param_name(std::size_t index) {
    char buf[48];
    std::snprintf(buf, sizeof buf, "layers.%03zu.weight", index);
    return buf;
}

Checkpoint analytic_checkpoint(const AnalyticLab& lab, std::size_t t, bool with_noise) {
    if (lab.n_checkpoints < 3) {
        fail(ErrorKind::InvalidArgument, "analytic trajectory needs at least 3 checkpoints");
    }
    if (!(lab.dynamics.timescale > 0.0) || lab.dynamics.noise_std < 0.0) {
        fail(ErrorKind::InvalidArgument, "timescale must be positive and noise_std nonnegative");
    }
    const double horizon = static_cast<double>(lab.n_checkpoints);
    const double f = dynamics_value(lab.dynamics, static_cast<double>(t), horizon);
    Checkpoint c;
    c.step = static_cast<std::int64_t>(t) * lab.step_interval;
    for (std::size_t p = 0; p < lab.shapes.size(); ++p) {
        const Planted planted = planted_parameter(lab, p);
        Matrix w = planted.init;
        w += outer(f * planted.sigma, planted.u, planted.v);
        if (with_noise && t > 0 && lab.dynamics.noise_std > 0.0) {
            const CounterRng noise(lab.dynamics.seed, {kTagNoise, p, t});
            for (std::size_t i = 0; i < w.size(); ++i) {
                w.data()[i] += lab.dynamics.noise_std * noise.normal(i);
            }
        }
        c.tensors.emplace(lab_param_name(p), std::move(w));
    }
    return c;
}

Trajectory analytic_trajectory(const AnalyticLab& lab) {
    Trajectory traj;
    traj.base = analytic_checkpoint(lab, 0);
    for (std::size_t t = 1; t <= lab.n_checkpoints; ++t) {
        traj.checkpoints.push_back(analytic_checkpoint(lab, t));
    }
    return traj;
}

TrajectoryManifest gen_analytic_trajectory(const AnalyticLab& lab, const fs::path& out_dir) {
    std::error_code ec;
    fs::create_directories(out_dir, ec);
    if (ec) {
        fail(ErrorKind::IoError, "cannot create '" + out_dir.string() + "': " + ec.message());
    }
    const Trajectory traj = analytic_trajectory(lab);
    TrajectoryManifest man;
    man.root = out_dir;
    man.base_path = "base.safetensors";
    save_checkpoint(traj.base, out_dir / *man.base_path);
    for (const auto& c : traj.checkpoints) {
        const std::string name = format_step_file(c.step);
        save_checkpoint(c, out_dir / name);
        man.entries.push_back({c.step, name});
    }
    save_manifest(man, out_dir / "manifest.json");
    json j = lab;
    j["note"] = "synthetic stand-in dynamics with a closed form, not measured training behaviour";
    write_file_bytes(out_dir / "lab.json", j.dump(2) + "\n");
    return man;
}

void to_json(json& j, const AnalyticLab& lab) {
    json shapes = json::array();
    for (const auto& s : lab.shapes) {
        shapes.push_back({s.rows, s.cols});
    }
    j = {{"kind", to_string(lab.dynamics.kind)},
         {"amplitude", lab.dynamics.amplitude},
         {"timescale", lab.dynamics.timescale},
         {"noise_std", lab.dynamics.noise_std},
         {"seed", lab.dynamics.seed},
         {"shapes", shapes},
         {"n_checkpoints", lab.n_checkpoints},
         {"step_interval", lab.step_interval}};
}

void from_json(const json& j, AnalyticLab& lab) {
    lab.dynamics.kind = parse_dynamics_kind(j.at("kind").get<std::string>());
    lab.dynamics.amplitude = j.at("amplitude").get<double>();
    lab.dynamics.timescale = j.at("timescale").get<double>();
    lab.dynamics.noise_std = j.at("noise_std").get<double>();
    lab.dynamics.seed = j.at("seed").get<std::uint64_t>();
    lab.shapes.clear();
    for (const auto& s : j.at("shapes")) {
        lab.shapes.push_back({s.at(0).get<std::size_t>(), s.at(1).get<std::size_t>()});
    }
    lab.n_checkpoints = j.at("n_checkpoints").get<std::size_t>();
    lab.step_interval = j.at("step_interval").get<std::int64_t>();
}

AnalyticLab load_analytic_lab(const fs::path& path) {
    try {
        return json::parse(read_file_bytes(path)).get<AnalyticLab>();
    } catch (const json::exception& e) {
        fail(ErrorKind::FormatError, path.string() + ": " + e.what());
    }
}

// ---------------------------------------------------------------------------
// Toy network

void validate(const ToyTrainSpec& spec) {
    const auto& shapes = spec.layer_shapes;
    if (shapes.size() < 2) {
        fail(ErrorKind::InvalidArgument, "toy network needs at least two layers");
    }
    for (std::size_t l = 0; l < shapes.size(); ++l) {
        if (shapes[l].rows == 0 || shapes[l].cols == 0) {
            fail(ErrorKind::InvalidArgument, "layer dimensions must be positive");
        }
        if (l > 0 && shapes[l].cols != shapes[l - 1].rows) {
            fail(ErrorKind::ShapeMismatch, "layer " + std::to_string(l) + " input width " +
                                               std::to_string(shapes[l].cols) +
                                               " does not match previous output " +
                                               std::to_string(shapes[l - 1].rows));
        }
        if (spec.mode == TrainMode::lora &&
            (spec.lora_rank == 0 || spec.lora_rank > std::min(shapes[l].rows, shapes[l].cols))) {
            fail(ErrorKind::InvalidArgument, "LoRA rank must be in [1, min(m, n)] for every layer");
        }
    }
    if (spec.save_interval == 0 || spec.steps == 0 || spec.steps % spec.save_interval != 0) {
        fail(ErrorKind::InvalidArgument, "steps must be a positive multiple of save_interval");
    }
    if (!(spec.learning_rate > 0.0) || spec.samples == 0) {
        fail(ErrorKind::InvalidArgument, "learning rate and sample count must be positive");
    }
}

namespace {

std::string toy_weight_name(std::size_t l) {
    return "layers." + std::to_string(l) + ".weight";
}

std::string toy_bias_name(std::size_t l) {
    return "layers." + std::to_string(l) + ".bias";
}

struct ToyState {
    std::vector<Matrix> w;  // effective (merged) weights
    std::vector<Vector> b;
    std::vector<Matrix> w0;
    std::vector<Matrix> lora_a;
    std::vector<Matrix> lora_b;
};

// Forward pass over all samples; returns per-layer activations (index 0 is the input).
std::vector<Matrix> toy_forward(const ToyState& s, const Matrix& x) {
    std::vector<Matrix> acts{x};
    const std::size_t layers = s.w.size();
    for (std::size_t l = 0; l < layers; ++l) {
        Matrix z = matmul(acts.back(), transpose(s.w[l]));
        for (std::size_t r = 0; r < z.rows(); ++r) {
            auto row = z.row(r);
            for (std::size_t c = 0; c < row.size(); ++c) {
                row[c] += s.b[l][c];
                if (l + 1 < layers) {
                    row[c] = std::tanh(row[c]);
                }
            }
        }
        acts.push_back(std::move(z));
    }
    return acts;
}

Checkpoint snapshot(const ToyState& s, std::int64_t step) {
    Checkpoint c;
    c.step = step;
    for (std::size_t l = 0; l < s.w.size(); ++l) {
        c.tensors.emplace(toy_weight_name(l), s.w[l]);
        c.passthrough.emplace(toy_bias_name(l), PassthroughArray{{s.b[l].size()}, s.b[l]});
    }
    return c;
}

}  // namespace

ToyRun run_toy_training(const ToyTrainSpec& spec) {
    validate(spec);
    const auto& shapes = spec.layer_shapes;
    const std::size_t layers = shapes.size();
    const std::size_t d_in = shapes.front().cols;
    const std::size_t d_out = shapes.back().rows;
    const std::size_t n = spec.samples;
    const bool lora = spec.mode == TrainMode::lora;

    Matrix x(n, d_in);
    const CounterRng input_rng(spec.task_seed, {kTagToyInput});
    for (std::size_t i = 0; i < x.size(); ++i) {
        x.data()[i] = input_rng.normal(i);
    }
    Matrix proj(d_out, d_in);
    const CounterRng proj_rng(spec.task_seed, {kTagToyProjection});
    for (std::size_t i = 0; i < proj.size(); ++i) {
        proj.data()[i] = proj_rng.normal(i) / std::sqrt(static_cast<double>(d_in));
    }
    Matrix y = matmul(x, transpose(proj));
    for (double& e : y.data()) {
        e = std::sin(e);
    }

    ToyState s;
    for (std::size_t l = 0; l < layers; ++l) {
        const double bound = 1.0 / std::sqrt(static_cast<double>(shapes[l].cols));
        Matrix w(shapes[l].rows, shapes[l].cols);
        const CounterRng wr(spec.task_seed, {kTagToyWeight, l});
        for (std::size_t i = 0; i < w.size(); ++i) {
            w.data()[i] = wr.uniform(i, -bound, bound);
        }
        s.w.push_back(w);
        s.w0.push_back(std::move(w));
        s.b.emplace_back(shapes[l].rows, 0.0);
        if (lora) {
            Matrix a(spec.lora_rank, shapes[l].cols);
            const CounterRng ar(spec.task_seed, {kTagToyLoraA, l});
            for (std::size_t i = 0; i < a.size(); ++i) {
                a.data()[i] = ar.uniform(i, -bound, bound);
            }
            s.lora_a.push_back(std::move(a));
            s.lora_b.emplace_back(shapes[l].rows, spec.lora_rank);
        }
    }

    ToyRun run;
    run.trajectory.base = snapshot(s, 0);
    auto record_adapter = [&](std::int64_t step) {
        LoraAdapter ad;
        ad.step = step;
        for (std::size_t l = 0; l < layers; ++l) {
            ad.entries.push_back({toy_weight_name(l), s.lora_a[l], s.lora_b[l], spec.lora_rank, 1.0});
        }
        run.adapters.push_back(std::move(ad));
    };

    const double lr = spec.learning_rate;
    for (std::size_t step = 0; step <= spec.steps; ++step) {
        const std::vector<Matrix> acts = toy_forward(s, x);
        Matrix grad = acts.back() - y;  // dLoss/dOutput * n
        double loss = 0.0;
        for (double e : grad.data()) {
            loss += e * e;
        }
        loss /= 2.0 * static_cast<double>(n);
        if (!std::isfinite(loss)) {
            fail(ErrorKind::DivergedTraining, "toy loss became non-finite at step " + std::to_string(step));
        }
        run.losses.push_back(loss);
        if (step == spec.steps) {
            break;
        }
        grad *= 1.0 / static_cast<double>(n);

        std::vector<Matrix> dw(layers);
        std::vector<Vector> db(layers);
        for (std::size_t l = layers; l-- > 0;) {
            dw[l] = matmul(transpose(grad), acts[l]);
            db[l].assign(grad.cols(), 0.0);
            for (std::size_t r = 0; r < grad.rows(); ++r) {
                for (std::size_t c = 0; c < grad.cols(); ++c) {
                    db[l][c] += grad(r, c);
                }
            }
            if (l > 0) {
                Matrix back = matmul(grad, s.w[l]);
                const Matrix& h = acts[l];
                for (std::size_t i = 0; i < back.size(); ++i) {
                    const double hv = h.data()[i];
                    back.data()[i] *= 1.0 - hv * hv;
                }
                grad = std::move(back);
            }
        }

        for (std::size_t l = 0; l < layers; ++l) {
            if (lora) {
                // W = W0 + B A: dB = dW A^T, dA = B^T dW. Biases stay frozen.
                const Matrix db_lora = matmul(dw[l], transpose(s.lora_a[l]));
                const Matrix da_lora = matmul(transpose(s.lora_b[l]), dw[l]);
                s.lora_b[l] -= lr * db_lora;
                s.lora_a[l] -= lr * da_lora;
                s.w[l] = s.w0[l] + matmul(s.lora_b[l], s.lora_a[l]);
            } else {
                s.w[l] -= lr * dw[l];
                for (std::size_t c = 0; c < s.b[l].size(); ++c) {
                    s.b[l][c] -= lr * db[l][c];
                }
            }
        }

        const std::size_t done = step + 1;
        if (done % spec.save_interval == 0) {
            run.trajectory.checkpoints.push_back(snapshot(s, static_cast<std::int64_t>(done)));
            if (lora) {
                record_adapter(static_cast<std::int64_t>(done));
            }
        }
    }
    return run;
}

TrajectoryManifest gen_toy_training_trajectory(const ToyTrainSpec& spec, const fs::path& out_dir) {
    const ToyRun run = run_toy_training(spec);
    std::error_code ec;
    fs::create_directories(out_dir, ec);
    if (ec) {
        fail(ErrorKind::IoError, "cannot create '" + out_dir.string() + "': " + ec.message());
    }
    TrajectoryManifest man;
    man.root = out_dir;
    man.base_path = "base.safetensors";
    save_checkpoint(run.trajectory.base, out_dir / *man.base_path);
    std::vector<std::string> lora_paths;
    for (std::size_t i = 0; i < run.trajectory.checkpoints.size(); ++i) {
        const Checkpoint& c = run.trajectory.checkpoints[i];
        const std::string name = format_step_file(c.step);
        save_checkpoint(c, out_dir / name);
        man.entries.push_back({c.step, name});
        if (spec.mode == TrainMode::lora && spec.save_adapters) {
            const std::string adapter = "adapter_" + name;
            save_lora_adapter(run.adapters[i], out_dir / adapter);
            lora_paths.push_back(adapter);
        }
    }
    if (!lora_paths.empty()) {
        man.lora_paths = std::move(lora_paths);
    }
    save_manifest(man, out_dir / "manifest.json");
    json j = spec;
    write_file_bytes(out_dir / "toy.json", j.dump(2) + "\n");
    return man;
}

void to_json(json& j, const ToyTrainSpec& spec) {
    json shapes = json::array();
    for (const auto& s : spec.layer_shapes) {
        shapes.push_back({s.rows, s.cols});
    }
    j = {{"layer_shapes", shapes},
         {"task_seed", spec.task_seed},
         {"steps", spec.steps},
         {"save_interval", spec.save_interval},
         {"learning_rate", spec.learning_rate},
         {"mode", mode_string(spec)},
         {"lora_rank", spec.lora_rank},
         {"samples", spec.samples},
         {"save_adapters", spec.save_adapters}};
}

void from_json(const json& j, ToyTrainSpec& spec) {
    spec.layer_shapes.clear();
    for (const auto& s : j.at("layer_shapes")) {
        spec.layer_shapes.push_back({s.at(0).get<std::size_t>(), s.at(1).get<std::size_t>()});
    }
    spec.task_seed = j.at("task_seed").get<std::uint64_t>();
    spec.steps = j.at("steps").get<std::size_t>();
    spec.save_interval = j.at("save_interval").get<std::size_t>();
    spec.learning_rate = j.at("learning_rate").get<double>();
    const std::string mode = j.at("mode").get<std::string>();
    if (mode != "full" && mode != "lora") {
        fail(ErrorKind::InvalidArgument, "unknown training mode '" + mode + "'");
    }
    spec.mode = mode == "full" ? TrainMode::full : TrainMode::lora;
    spec.lora_rank = j.value("lora_rank", std::size_t{4});
    spec.samples = j.value("samples", std::size_t{64});
    spec.save_adapters = j.value("save_adapters", false);
}

}  // namespace trajex
