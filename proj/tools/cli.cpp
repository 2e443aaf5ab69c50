#include "cli.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <ctime>
#include <filesystem>
#include <ostream>
#include <sstream>

#include "CLI11.hpp"
#include "json.hpp"
#include "trajex/checkpoint.hpp"
#include "trajex/container.hpp"
#include "trajex/deltas.hpp"
#include "trajex/diagnostics.hpp"
#include "trajex/error.hpp"
#include "trajex/extrapolation.hpp"
#include "trajex/linalg.hpp"
#include "trajex/predictor.hpp"
#include "trajex/trajectory_lab.hpp"

namespace trajex::cli {

namespace {

namespace fs = std::filesystem;
using json = nlohmann::json;

struct Options {
    std::uint64_t seed = 17;
    std::string out = "out";

    // synth
    std::string kind = "saturating";
    std::string shapes;  // empty: kind-specific default
    std::size_t params = 0;
    std::size_t checkpoints = 15;
    std::int64_t interval = 10;
    double noise = 0.0;
    double amplitude = 1.0;
    double timescale = 5.0;
    std::string mode = "full";
    std::size_t lora_rank = 4;
    double toy_lr = 0.05;
    bool save_adapters = false;

    // shared inputs
    std::string input;
    std::string traj;
    std::string dataset;
    std::string bundle;
    std::size_t k = 5;

    // diagnose
    std::size_t fit = 10;
    std::size_t predict = 5;

    // dataset
    std::string sigma_transform = "none";

    // train
    std::size_t hidden = 256;
    std::size_t encoder_layers = 2;
    std::size_t decoder_layers = 2;
    std::size_t epochs = 200;
    double lr = 1e-3;
    std::size_t batch = 64;
    double holdout = 0.1;

    // extrapolate / sweep / compare
    double alpha = 1.5;
    std::vector<double> alphas{0.5, 1.0, 1.5, 2.0, 2.5, 3.0, 3.5, 4.0};
    std::string truth = "auto";

    // icer
    long long icer_steps = 0;
    double icer_base = 0.0;
    double icer_new = 0.0;
};

class UsageError : public std::runtime_error {
    using std::runtime_error::runtime_error;
};

std::string utc_timestamp() {
    const std::time_t now = std::time(nullptr);
    std::tm tm{};
    gmtime_r(&now, &tm);
    char buf[32];
    std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
}

std::string one_line(std::string s) {
    std::replace(s.begin(), s.end(), '\n', ' ');
    return s;
}

void collect_options(const CLI::App* app, json& into) {
    for (const CLI::Option* opt : app->get_options()) {
        if (opt->get_lnames().empty() || opt->get_lnames().front() == "help") continue;
        const std::string name = opt->get_lnames().front();
        std::string value;
        if (opt->count() > 0) {
            const auto& res = opt->results();
            for (std::size_t i = 0; i < res.size(); ++i) value += (i ? "," : "") + res[i];
            if (value.empty()) value = "true";
        } else {
            value = opt->get_default_str();
            if (value.empty() && opt->get_expected_min() == 0) value = "false";
        }
        into[name] = value;
    }
}

void write_config_echo(const CLI::App& app, const std::vector<const CLI::App*>& chain, const json& resolved,
                       const fs::path& out_dir) {
    json options = json::object();
    collect_options(&app, options);
    std::string name;
    for (const CLI::App* sub : chain) {
        collect_options(sub, options);
        name += (name.empty() ? "" : "_") + sub->get_name();
    }
    json echo = {{"subcommand", name}, {"options", options}, {"resolved", resolved}, {"created_at", utc_timestamp()}};
    write_file_bytes(out_dir / ("config_" + name + ".json"), echo.dump(2) + "\n");
}

fs::path manifest_path(const std::string& p) {
    if (p.empty()) throw UsageError("--traj is required");
    fs::path path(p);
    return fs::is_directory(path) ? path / "manifest.json" : path;
}

std::string shape_text(const std::vector<std::uint64_t>& shape) {
    std::string s;
    for (std::size_t i = 0; i < shape.size(); ++i) s += (i ? "x" : "") + std::to_string(shape[i]);
    return s.empty() ? "scalar" : s;
}

void write_text(const fs::path& path, const std::string& text) {
    write_file_bytes(path, text);
}

json cmd_synth(const Options& o, const fs::path& out_dir, std::ostream& out) {
    json resolved;
    if (o.kind == "toy") {
        ToyTrainSpec spec;
        if (!o.shapes.empty()) spec.layer_shapes = parse_shapes(o.shapes);
        spec.task_seed = o.seed;
        spec.save_interval = static_cast<std::size_t>(o.interval);
        spec.steps = o.checkpoints * spec.save_interval;
        spec.learning_rate = o.toy_lr;
        spec.mode = o.mode == "lora" ? TrainMode::lora : TrainMode::full;
        spec.lora_rank = o.lora_rank;
        spec.save_adapters = o.save_adapters;
        const TrajectoryManifest man = gen_toy_training_trajectory(spec, out_dir);
        to_json(resolved, spec);
        out << "wrote toy " << o.mode << " trajectory with " << man.entries.size() << " checkpoints to "
            << out_dir.string() << "\n";
        return resolved;
    }
    AnalyticLab lab;
    lab.dynamics.kind = parse_dynamics_kind(o.kind);
    lab.dynamics.amplitude = o.amplitude;
    lab.dynamics.timescale = o.timescale;
    lab.dynamics.noise_std = o.noise;
    lab.dynamics.seed = o.seed;
    const std::vector<LayerShape> listed = parse_shapes(o.shapes.empty() ? "32x32,64x32,32x64" : o.shapes);
    const std::size_t n = o.params == 0 ? listed.size() : o.params;
    for (std::size_t i = 0; i < n; ++i) lab.shapes.push_back(listed[i % listed.size()]);
    lab.n_checkpoints = o.checkpoints;
    lab.step_interval = o.interval;
    const TrajectoryManifest man = gen_analytic_trajectory(lab, out_dir);
    to_json(resolved, lab);
    out << "wrote " << o.kind << " trajectory with " << lab.shapes.size() << " parameters and "
        << man.entries.size() << " checkpoints to " << out_dir.string() << "\n";
    return resolved;
}

json cmd_inspect(const Options& o, const fs::path& out_dir, std::ostream& out) {
    if (o.input.empty()) throw UsageError("--input is required");
    std::vector<std::pair<std::string, Checkpoint>> ckpts;
    const fs::path in(o.input);
    if (fs::is_directory(in) || in.extension() == ".json") {
        const Trajectory traj = read_trajectory(manifest_path(o.input));
        for (std::size_t i = 0; i <= traj.count(); ++i) ckpts.emplace_back(std::to_string(i), traj.at(i));
    } else {
        ckpts.emplace_back("0", load_checkpoint(in));
    }
    std::string csv = "checkpoint,step,name,kind,shape,frobenius_norm\n";
    for (const auto& [idx, c] : ckpts) {
        out << "checkpoint " << idx << " step " << c.step << ": " << c.tensors.size() << " matrices, "
            << c.passthrough.size() << " passthrough arrays\n";
        for (const auto& [name, m] : c.tensors) {
            const std::string shape = std::to_string(m.rows()) + "x" + std::to_string(m.cols());
            const double norm = frobenius_norm(m);
            out << "  " << name << " " << shape << " " << format_double(norm) << "\n";
            csv += idx + "," + std::to_string(c.step) + "," + name + ",matrix," + shape + "," + format_double(norm) + "\n";
        }
        for (const auto& [name, a] : c.passthrough) {
            const double norm = norm2(a.data);
            out << "  " << name << " " << shape_text(a.shape) << " " << format_double(norm) << " (passthrough)\n";
            csv += idx + "," + std::to_string(c.step) + "," + name + ",passthrough," + shape_text(a.shape) + "," +
                   format_double(norm) + "\n";
        }
    }
    write_text(out_dir / "inspect.csv", csv);
    return json::object();
}

json cmd_energy(const Options& o, const fs::path& out_dir, std::ostream& out) {
    const Trajectory traj = read_trajectory(manifest_path(o.traj));
    const auto series = energy_ratio_series(traj);
    std::ostringstream csv;
    write_energy_csv(series, csv);
    write_text(out_dir / "energy.csv", csv.str());
    double sum = 0.0;
    std::size_t n = 0;
    for (const auto& s : series) {
        for (const auto& p : s.points) {
            sum += p.energy_ratio;
            ++n;
        }
    }
    out << "energy ratios for " << series.size() << " parameters, mean "
        << (n ? format_double(sum / static_cast<double>(n)) : std::string("n/a")) << "\n";
    return json::object();
}

json cmd_r2(const Options& o, const fs::path& out_dir, std::ostream& out) {
    const Trajectory traj = read_trajectory(manifest_path(o.traj));
    const R2Report rep = linear_r2(traj, o.fit, o.predict);
    std::ostringstream csv;
    write_r2_csv(rep, csv);
    write_text(out_dir / "r2.csv", csv.str());
    out << "R^2 over " << rep.r2.size() << " parameters, histogram";
    for (std::size_t c : rep.histogram) out << " " << c;
    out << "\n";
    return json{{"regressed_quantity", rep.regressed_quantity}, {"bucket_edges", rep.bucket_edges}};
}

json cmd_dataset(const Options& o, const fs::path& out_dir, std::ostream& out) {
    const Trajectory traj = read_trajectory(manifest_path(o.traj));
    const Dataset ds = extract_dataset(traj, o.k, parse_sigma_transform(o.sigma_transform));
    save_dataset(ds, out_dir / "dataset.safetensors");
    out << "dataset: " << ds.example_count() << " examples in " << ds.groups.size() << " groups, " << ds.skipped
        << " skipped\n";
    return json{{"c", ds.c}, {"examples", ds.example_count()}, {"skipped", ds.skipped}};
}

json cmd_train(const Options& o, const fs::path& out_dir, std::ostream& out) {
    if (o.dataset.empty()) throw UsageError("--dataset is required");
    const Dataset ds = load_dataset(o.dataset);
    TrainOptions opts;
    opts.hidden_dim = o.hidden;
    opts.encoder_layers = o.encoder_layers;
    opts.decoder_layers = o.decoder_layers;
    opts.seed = o.seed;
    opts.epochs = o.epochs;
    opts.learning_rate = o.lr;
    opts.batch_size = o.batch;
    opts.holdout_fraction = o.holdout;
    const PredictorBundle bundle = train(ds, opts);
    save_bundle(bundle, out_dir / "bundle.safetensors");
    std::string csv = "field,dimension,epoch,train_loss,holdout_loss\n";
    for (const auto& [key, e] : bundle.entries) {
        for (std::size_t ep = 0; ep < e.log.train_loss.size(); ++ep) {
            csv += to_string(key.first) + "," + std::to_string(key.second) + "," + std::to_string(ep) + "," +
                   format_double(e.log.train_loss[ep]) + "," +
                   (ep < e.log.holdout_loss.size() ? format_double(e.log.holdout_loss[ep]) : std::string()) + "\n";
        }
        out << to_string(key.first) << "/" << key.second << ": train loss " << format_double(e.log.train_loss.front())
            << " -> " << format_double(e.log.train_loss.back()) << " (" << e.log.train_examples << " train, "
            << e.log.holdout_examples << " held out)\n";
    }
    write_text(out_dir / "train_loss.csv", csv);
    return json{{"bundle_id", bundle_id(bundle)}, {"k", bundle.meta.k}};
}

void emit_warnings(const std::vector<std::string>& warnings, std::ostream& err) {
    for (const auto& w : warnings) err << "trajex: warning: " << one_line(w) << "\n";
}

json cmd_extrapolate(const Options& o, const fs::path& out_dir, std::ostream& out, std::ostream& err) {
    if (o.bundle.empty()) throw UsageError("--bundle is required");
    const Trajectory traj = read_trajectory(manifest_path(o.traj));
    const PredictorBundle bundle = load_bundle(o.bundle);
    const auto [ckpt, report] = extrapolate_checkpoint(traj, bundle, o.alpha, o.k);
    emit_warnings(report.warnings, err);
    save_checkpoint(ckpt, out_dir / "extrapolated.safetensors");
    write_report(report, out_dir / "report.jsonl");
    const auto skipped = std::count_if(report.records.begin(), report.records.end(),
                                       [](const ExtrapolationRecord& r) { return r.skipped; });
    out << "extrapolated step " << report.source_step << " -> " << report.output_step << " with alpha "
        << format_double(o.alpha) << ", " << skipped << " of " << report.records.size() << " parameters skipped\n";
    return json{{"bundle_id", report.bundle_id}, {"output_step", report.output_step}};
}

// Ground truth for the checkpoint k strides past the end of `traj`.
struct TruthSetup {
    Trajectory traj;
    Checkpoint truth;
    std::string source;
};

std::optional<TruthSetup> resolve_truth(const std::string& traj_arg, const std::string& mode, std::size_t k) {
    const fs::path man = manifest_path(traj_arg);
    Trajectory traj = read_trajectory(man);
    const fs::path lab_path = man.parent_path() / "lab.json";
    const bool have_lab = fs::exists(lab_path);
    if (mode == "analytic" || (mode == "auto" && have_lab)) {
        if (!have_lab) fail(ErrorKind::IoError, lab_path.string() + " not found; analytic truth is unavailable");
        const AnalyticLab lab = load_analytic_lab(lab_path);
        if (lab.n_checkpoints != traj.count()) {
            fail(ErrorKind::SchemaMismatch, "lab.json describes " + std::to_string(lab.n_checkpoints) +
                                                " checkpoints but the manifest lists " + std::to_string(traj.count()));
        }
        Checkpoint truth = analytic_checkpoint(lab, traj.count() + k, false);
        return TruthSetup{std::move(traj), std::move(truth), "analytic"};
    }
    if (mode == "tail") {
        if (traj.count() <= k) {
            fail(ErrorKind::InsufficientCheckpoints, "held-out tail of " + std::to_string(k) +
                                                         " leaves no checkpoints to extrapolate from");
        }
        Checkpoint truth = traj.checkpoints.back();
        traj.checkpoints.resize(traj.count() - k);
        return TruthSetup{std::move(traj), std::move(truth), "tail"};
    }
    if (mode == "none" || mode == "auto") return std::nullopt;
    throw UsageError("unknown --truth '" + mode + "'");
}

void append_rows(std::vector<ComparisonRow>& rows, const std::string& method, double alpha, const Checkpoint& pred,
                 const Checkpoint& truth) {
    for (const auto& [name, e] : frobenius_errors(pred, truth)) rows.push_back({method, alpha, name, e});
}

json cmd_sweep(const Options& o, const fs::path& out_dir, std::ostream& out, std::ostream& err) {
    if (o.bundle.empty()) throw UsageError("--bundle is required");
    if (o.alphas.empty()) throw UsageError("--alphas must list at least one value");
    for (std::size_t i = 0; i < o.alphas.size(); ++i) {
        if (!std::isfinite(o.alphas[i]) || (i > 0 && !(o.alphas[i] > o.alphas[i - 1]))) {
            throw UsageError("--alphas must be finite and strictly increasing");
        }
    }
    const std::string mode = o.truth == "auto" ? "auto" : o.truth;
    std::optional<TruthSetup> setup = resolve_truth(o.traj, mode, o.k);
    const Trajectory traj = setup ? setup->traj : read_trajectory(manifest_path(o.traj));
    const PredictorBundle bundle = load_bundle(o.bundle);
    const PredictionSet set = predict_deltas(traj, bundle, o.k);
    emit_warnings(set.warnings, err);
    std::string index = "index,alpha,checkpoint,report\n";
    std::vector<ComparisonRow> rows;
    for (std::size_t i = 0; i < o.alphas.size(); ++i) {
        char tag[16];
        std::snprintf(tag, sizeof tag, "%02zu", i);
        const std::string ckpt_name = std::string("extrapolated_") + tag + ".safetensors";
        const std::string report_name = std::string("report_") + tag + ".jsonl";
        const auto [ckpt, report] = apply_predictions(traj, set, o.alphas[i]);
        save_checkpoint(ckpt, out_dir / ckpt_name);
        write_report(report, out_dir / report_name);
        index += std::string(tag) + "," + format_double(o.alphas[i]) + "," + ckpt_name + "," + report_name + "\n";
        if (setup) {
            append_rows(rows, "next", o.alphas[i], ckpt, setup->truth);
            append_rows(rows, "linear-full", o.alphas[i],
                        linear_extrapolate(traj, o.alphas[i], o.k, LinearVariant::full), setup->truth);
            append_rows(rows, "linear-rank1", o.alphas[i],
                        linear_extrapolate(traj, o.alphas[i], o.k, LinearVariant::rank1), setup->truth);
        }
    }
    write_text(out_dir / "sweep.csv", index);
    if (setup) write_text(out_dir / "sweep_errors.csv", comparison_csv(rows));
    out << "swept " << o.alphas.size() << " alphas" << (setup ? " with " + setup->source + " truth" : std::string())
        << "\n";
    return json{{"truth", setup ? setup->source : "none"}, {"bundle_id", set.bundle_id}};
}

json cmd_compare(const Options& o, const fs::path& out_dir, std::ostream& out, std::ostream& err) {
    if (o.bundle.empty()) throw UsageError("--bundle is required");
    if (o.truth == "none") throw UsageError("compare needs ground truth: --truth auto, analytic or tail");
    std::optional<TruthSetup> setup = resolve_truth(o.traj, o.truth == "auto" ? "auto" : o.truth, o.k);
    if (!setup) setup = resolve_truth(o.traj, "tail", o.k);
    const PredictorBundle bundle = load_bundle(o.bundle);
    const auto [next_ckpt, report] = extrapolate_checkpoint(setup->traj, bundle, o.alpha, o.k);
    emit_warnings(report.warnings, err);
    const auto next_err = frobenius_errors(next_ckpt, setup->truth);
    const auto full_err =
        frobenius_errors(linear_extrapolate(setup->traj, o.alpha, o.k, LinearVariant::full), setup->truth);
    const auto rank1_err =
        frobenius_errors(linear_extrapolate(setup->traj, o.alpha, o.k, LinearVariant::rank1), setup->truth);
    std::vector<ComparisonRow> rows;
    for (const auto& [name, e] : next_err) rows.push_back({"next", o.alpha, name, e});
    for (const auto& [name, e] : full_err) rows.push_back({"linear-full", o.alpha, name, e});
    for (const auto& [name, e] : rank1_err) rows.push_back({"linear-rank1", o.alpha, name, e});
    write_text(out_dir / "compare.csv", comparison_csv(rows));

    std::size_t wins = 0;
    double next_sum = 0.0;
    double full_sum = 0.0;
    double rank1_sum = 0.0;
    for (const auto& [name, e] : next_err) {
        wins += e < full_err.at(name) ? 1 : 0;
        next_sum += e;
        full_sum += full_err.at(name);
        rank1_sum += rank1_err.at(name);
    }
    const double n = static_cast<double>(std::max<std::size_t>(1, next_err.size()));
    json summary = {{"truth", setup->source},
                    {"alpha", o.alpha},
                    {"k", o.k},
                    {"parameters", next_err.size()},
                    {"next_wins_vs_linear_full", wins},
                    {"baselines", "linear-full and linear-rank1 are approximations of published linear extrapolation "
                                  "schemes, not reimplementations"},
                    {"mean_error", {{"next", next_sum / n}, {"linear-full", full_sum / n}, {"linear-rank1", rank1_sum / n}}}};
    write_text(out_dir / "compare_summary.json", summary.dump(2) + "\n");
    out << "next beats linear-full on " << wins << " of " << next_err.size() << " parameters; mean error next "
        << format_double(next_sum / n) << ", linear-full " << format_double(full_sum / n) << ", linear-rank1 "
        << format_double(rank1_sum / n) << " (" << setup->source << " truth)\n";
    return summary;
}

json cmd_icer(const Options& o, const fs::path& out_dir, std::ostream& out) {
    const double value = icer(o.icer_steps, o.icer_base, o.icer_new);
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.1f", value);
    out << "ICER " << buf << "\n";
    const json result = {{"steps", o.icer_steps}, {"baseline", o.icer_base}, {"new", o.icer_new}, {"icer", value}};
    write_text(out_dir / "icer.json", result.dump(2) + "\n");
    return result;
}

int exit_code_for(ErrorKind kind) {
    return kind == ErrorKind::InvalidArgument ? 1 : 2;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    Options o;
    CLI::App app{"Checkpoint trajectory analysis and rank-1 extrapolation", "trajex"};
    app.option_defaults()->always_capture_default();
    app.require_subcommand(1);
    app.add_option("--seed", o.seed, "Seed for every random stream");
    app.add_option("--out", o.out, "Output directory");

    auto* synth = app.add_subcommand("synth", "Generate a synthetic trajectory");
    synth->add_option("--kind", o.kind, "Dynamics: linear, saturating, logistic, or toy")
        ->check(CLI::IsMember({"linear", "saturating", "logistic", "toy"}));
    synth->add_option("--shapes", o.shapes, "Comma-separated RxC parameter shapes (default 32x32,64x32,32x64, or the toy network)");
    synth->add_option("--params", o.params, "Parameter count, cycling through --shapes (0 = one per shape)");
    synth->add_option("--checkpoints", o.checkpoints, "Saved checkpoints after the base")->check(CLI::PositiveNumber);
    synth->add_option("--interval", o.interval, "Optimizer steps between checkpoints")->check(CLI::PositiveNumber);
    synth->add_option("--noise", o.noise, "Gaussian noise std added to each checkpoint")->check(CLI::NonNegativeNumber);
    synth->add_option("--amplitude", o.amplitude, "Planted dynamics amplitude");
    synth->add_option("--timescale", o.timescale, "Planted dynamics timescale")->check(CLI::PositiveNumber);
    synth->add_option("--mode", o.mode, "Toy training mode")->check(CLI::IsMember({"full", "lora"}));
    synth->add_option("--lora-rank", o.lora_rank, "LoRA rank for toy training")->check(CLI::PositiveNumber);
    synth->add_option("--toy-lr", o.toy_lr, "Toy training learning rate")->check(CLI::PositiveNumber);
    synth->add_flag("--save-adapters", o.save_adapters, "Write LoRA adapters and a LoRA manifest");

    auto* inspect = app.add_subcommand("inspect", "Summarize a checkpoint or trajectory");
    inspect->add_option("--input", o.input, "Checkpoint file, manifest, or trajectory directory");

    auto* diagnose = app.add_subcommand("diagnose", "Rank-1 diagnostics");
    diagnose->require_subcommand(1);
    auto* energy = diagnose->add_subcommand("energy", "Energy ratio of every global delta");
    energy->add_option("--traj", o.traj, "Manifest or trajectory directory");
    auto* r2 = diagnose->add_subcommand("r2", "Linear-fit R^2 of rank-1 reconstructions");
    r2->add_option("--traj", o.traj, "Manifest or trajectory directory");
    r2->add_option("--fit", o.fit, "Checkpoints in the fit window")->check(CLI::PositiveNumber);
    r2->add_option("--predict", o.predict, "Checkpoints in the predicted window")->check(CLI::PositiveNumber);

    auto* dataset = app.add_subcommand("dataset", "Extract predictor training examples");
    dataset->add_option("--traj", o.traj, "Manifest or trajectory directory");
    dataset->add_option("--k", o.k, "Extrapolation distance in checkpoints")->check(CLI::PositiveNumber);
    dataset->add_option("--sigma-transform", o.sigma_transform, "Sigma feature transform")
        ->check(CLI::IsMember({"none", "log1p"}));

    auto* train_cmd = app.add_subcommand("train", "Train the rank-1 predictors");
    train_cmd->add_option("--dataset", o.dataset, "Dataset file");
    train_cmd->add_option("--hidden", o.hidden, "Hidden width")->check(CLI::PositiveNumber);
    train_cmd->add_option("--encoder-layers", o.encoder_layers, "Layers per encoder")->check(CLI::PositiveNumber);
    train_cmd->add_option("--decoder-layers", o.decoder_layers, "Decoder layers")->check(CLI::PositiveNumber);
    train_cmd->add_option("--epochs", o.epochs, "Training epochs");
    train_cmd->add_option("--lr", o.lr, "Adam learning rate")->check(CLI::PositiveNumber);
    train_cmd->add_option("--batch", o.batch, "Mini-batch size")->check(CLI::PositiveNumber);
    train_cmd->add_option("--holdout", o.holdout, "Fraction of parameter names held out")->check(CLI::Range(0.0, 0.99));

    auto* extrapolate = app.add_subcommand("extrapolate", "Extrapolate the last checkpoint");
    extrapolate->add_option("--traj", o.traj, "Manifest or trajectory directory");
    extrapolate->add_option("--bundle", o.bundle, "Predictor bundle file");
    extrapolate->add_option("--alpha", o.alpha, "Extension coefficient");
    extrapolate->add_option("--k", o.k, "Extrapolation distance in checkpoints")->check(CLI::PositiveNumber);

    auto* sweep = app.add_subcommand("sweep", "Extrapolate at several coefficients");
    sweep->add_option("--traj", o.traj, "Manifest or trajectory directory");
    sweep->add_option("--bundle", o.bundle, "Predictor bundle file");
    sweep->add_option("--alphas", o.alphas, "Comma-separated coefficients")->delimiter(',');
    sweep->add_option("--k", o.k, "Extrapolation distance in checkpoints")->check(CLI::PositiveNumber);
    sweep->add_option("--truth", o.truth, "Error reference: auto, analytic, tail, none")
        ->check(CLI::IsMember({"auto", "analytic", "tail", "none"}));

    auto* compare = app.add_subcommand("compare", "Compare against linear baselines");
    compare->add_option("--traj", o.traj, "Manifest or trajectory directory");
    compare->add_option("--bundle", o.bundle, "Predictor bundle file");
    compare->add_option("--alpha", o.alpha, "Extension coefficient");
    compare->add_option("--k", o.k, "Extrapolation distance in checkpoints")->check(CLI::PositiveNumber);
    compare->add_option("--truth", o.truth, "Ground truth: auto (analytic if lab.json exists, else tail), analytic, tail")
        ->check(CLI::IsMember({"auto", "analytic", "tail"}));

    auto* icer_cmd = app.add_subcommand("icer", "Improvement-to-compute efficiency ratio");
    icer_cmd->add_option("--steps", o.icer_steps, "Extra training steps")->required();
    icer_cmd->add_option("--base", o.icer_base, "Baseline average accuracy")->required();
    icer_cmd->add_option("--new", o.icer_new, "New average accuracy")->required();

    try {
        std::vector<std::string> reversed(args.rbegin(), args.rend());
        app.parse(reversed);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e, out, err);
        return code == 0 ? 0 : 1;
    }

    try {
        const fs::path out_dir(o.out);
        fs::create_directories(out_dir);
        std::vector<const CLI::App*> chain;
        json resolved;
        if (synth->parsed()) {
            chain = {synth};
            resolved = cmd_synth(o, out_dir, out);
        } else if (inspect->parsed()) {
            chain = {inspect};
            resolved = cmd_inspect(o, out_dir, out);
        } else if (energy->parsed()) {
            chain = {diagnose, energy};
            resolved = cmd_energy(o, out_dir, out);
        } else if (r2->parsed()) {
            chain = {diagnose, r2};
            resolved = cmd_r2(o, out_dir, out);
        } else if (dataset->parsed()) {
            chain = {dataset};
            resolved = cmd_dataset(o, out_dir, out);
        } else if (train_cmd->parsed()) {
            chain = {train_cmd};
            resolved = cmd_train(o, out_dir, out);
        } else if (extrapolate->parsed()) {
            chain = {extrapolate};
            resolved = cmd_extrapolate(o, out_dir, out, err);
        } else if (sweep->parsed()) {
            chain = {sweep};
            resolved = cmd_sweep(o, out_dir, out, err);
        } else if (compare->parsed()) {
            chain = {compare};
            resolved = cmd_compare(o, out_dir, out, err);
        } else {
            chain = {icer_cmd};
            resolved = cmd_icer(o, out_dir, out);
        }
        write_config_echo(app, chain, resolved, out_dir);
        return 0;
    } catch (const UsageError& e) {
        err << "trajex: usage: " << one_line(e.what()) << "\n";
        return 1;
    } catch (const Error& e) {
        err << "trajex: " << to_string(e.kind()) << ": " << one_line(e.what()) << "\n";
        return exit_code_for(e.kind());
    } catch (const json::exception& e) {
        err << "trajex: FormatError: " << one_line(e.what()) << "\n";
        return 2;
    } catch (const fs::filesystem_error& e) {
        err << "trajex: IoError: " << one_line(e.what()) << "\n";
        return 2;
    } catch (const std::exception& e) {
        err << "trajex: error: " << one_line(e.what()) << "\n";
        return 2;
    }
}

}  // namespace trajex::cli
