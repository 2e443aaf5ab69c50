#include "trajex/predictor.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <functional>
#include <set>

#include "json.hpp"
#include "trajex/container.hpp"
#include "trajex/error.hpp"
#include "trajex/parallel.hpp"
#include "trajex/rng.hpp"

namespace trajex {

namespace {

using json = nlohmann::json;

constexpr double kBeta1 = 0.9;
constexpr double kBeta2 = 0.999;
constexpr double kAdamEps = 1e-8;
constexpr const char* kBundleFormat = "trajex-predictor-bundle/1";
constexpr const char* kLossReduction = "mean_over_examples_sum_over_components";

enum : std::uint64_t { kTagInit = 21, kTagShuffle = 22, kTagHoldout = 23 };

// out = in * W^T + b, rows of `in` are examples.
Matrix affine(const Matrix& in, const DenseLayer& layer) {
    const std::size_t batch = in.rows();
    const std::size_t outs = layer.weight.rows();
    Matrix out(batch, outs);
    for (std::size_t r = 0; r < batch; ++r) {
        const double* x = in.row(r).data();
        double* y = out.row(r).data();
        for (std::size_t o = 0; o < outs; ++o) {
            const double* w = layer.weight.row(o).data();
            double s = layer.bias[o];
            for (std::size_t i = 0; i < in.cols(); ++i) {
                s += w[i] * x[i];
            }
            y[o] = s;
        }
    }
    return out;
}

void relu_inplace(Matrix& m) {
    for (double& x : m.data()) {
        x = x > 0.0 ? x : 0.0;
    }
}

// Accumulates dW += G^T A and db += colsum(G); returns G * W when requested.
Matrix layer_backward(const DenseLayer& layer, const Matrix& input, const Matrix& grad_out,
                      DenseLayer& grad, bool want_input_grad) {
    const std::size_t batch = grad_out.rows();
    const std::size_t outs = layer.weight.rows();
    const std::size_t ins = layer.weight.cols();
    for (std::size_t r = 0; r < batch; ++r) {
        const double* g = grad_out.row(r).data();
        const double* a = input.row(r).data();
        for (std::size_t o = 0; o < outs; ++o) {
            const double go = g[o];
            if (go == 0.0) {
                continue;
            }
            grad.bias[o] += go;
            double* dw = grad.weight.row(o).data();
            for (std::size_t i = 0; i < ins; ++i) {
                dw[i] += go * a[i];
            }
        }
    }
    if (!want_input_grad) {
        return {};
    }
    Matrix grad_in(batch, ins);
    for (std::size_t r = 0; r < batch; ++r) {
        const double* g = grad_out.row(r).data();
        double* gi = grad_in.row(r).data();
        for (std::size_t o = 0; o < outs; ++o) {
            const double go = g[o];
            if (go == 0.0) {
                continue;
            }
            const double* w = layer.weight.row(o).data();
            for (std::size_t i = 0; i < ins; ++i) {
                gi[i] += go * w[i];
            }
        }
    }
    return grad_in;
}

// Rectifier derivative from the post-activation value: zero at the kink.
void mask_by_active(Matrix& grad, const Matrix& activation) {
    for (std::size_t i = 0; i < grad.size(); ++i) {
        if (!(activation.data()[i] > 0.0)) {
            grad.data()[i] = 0.0;
        }
    }
}

struct ForwardCache {
    std::vector<Matrix> g_acts;  // [0] = input, [j+1] = output of encoder layer j
    std::vector<Matrix> l_acts;
    std::vector<Matrix> d_acts;  // [0] = concatenated code, [j+1] = output of decoder layer j
};

Matrix run_encoder(const std::vector<DenseLayer>& enc, const Matrix& input, std::vector<Matrix>* acts) {
    Matrix h = input;
    if (acts) acts->push_back(h);
    for (const auto& layer : enc) {
        h = affine(h, layer);
        relu_inplace(h);
        if (acts) acts->push_back(h);
    }
    return h;
}

Matrix concat_columns(const Matrix& a, const Matrix& b) {
    Matrix out(a.rows(), a.cols() + b.cols());
    for (std::size_t r = 0; r < a.rows(); ++r) {
        auto dst = out.row(r);
        std::copy(a.row(r).begin(), a.row(r).end(), dst.begin());
        std::copy(b.row(r).begin(), b.row(r).end(), dst.begin() + static_cast<std::ptrdiff_t>(a.cols()));
    }
    return out;
}

Matrix run_forward(const PredictorParams& p, const Matrix& sg, const Matrix& sl, ForwardCache* cache) {
    if (sg.cols() != p.enc_g.front().weight.cols() || sl.cols() != p.enc_l.front().weight.cols() ||
        sg.rows() != sl.rows()) {
        fail(ErrorKind::DimensionMismatch, "predictor input width does not match its configuration");
    }
    Matrix hg = run_encoder(p.enc_g, sg, cache ? &cache->g_acts : nullptr);
    Matrix hl = run_encoder(p.enc_l, sl, cache ? &cache->l_acts : nullptr);
    Matrix h = concat_columns(hg, hl);
    if (cache) cache->d_acts.push_back(h);
    for (std::size_t j = 0; j < p.dec.size(); ++j) {
        h = affine(h, p.dec[j]);
        if (j + 1 < p.dec.size()) {
            relu_inplace(h);
        }
        if (cache) cache->d_acts.push_back(h);
    }
    return h;
}

PredictorParams zeros_of(const PredictorParams& p) {
    PredictorParams z;
    auto copy = [](const std::vector<DenseLayer>& src, std::vector<DenseLayer>& dst) {
        for (const auto& l : src) {
            dst.push_back({Matrix(l.weight.rows(), l.weight.cols()), Vector(l.bias.size(), 0.0)});
        }
    };
    copy(p.enc_g, z.enc_g);
    copy(p.enc_l, z.enc_l);
    copy(p.dec, z.dec);
    return z;
}

void backprop_encoder(const std::vector<DenseLayer>& enc, const std::vector<Matrix>& acts, Matrix grad,
                      std::vector<DenseLayer>& grads) {
    for (std::size_t j = enc.size(); j-- > 0;) {
        mask_by_active(grad, acts[j + 1]);
        grad = layer_backward(enc[j], acts[j], grad, grads[j], j > 0);
    }
}

PredictorParams run_backward(const PredictorParams& p, const ForwardCache& cache, Matrix grad) {
    PredictorParams g = zeros_of(p);
    for (std::size_t j = p.dec.size(); j-- > 0;) {
        if (j + 1 < p.dec.size()) {
            mask_by_active(grad, cache.d_acts[j + 1]);
        }
        grad = layer_backward(p.dec[j], cache.d_acts[j], grad, g.dec[j], true);
    }
    const std::size_t h = p.enc_g.back().weight.rows();
    Matrix gg(grad.rows(), h);
    Matrix gl(grad.rows(), grad.cols() - h);
    for (std::size_t r = 0; r < grad.rows(); ++r) {
        auto src = grad.row(r);
        std::copy(src.begin(), src.begin() + static_cast<std::ptrdiff_t>(h), gg.row(r).begin());
        std::copy(src.begin() + static_cast<std::ptrdiff_t>(h), src.end(), gl.row(r).begin());
    }
    backprop_encoder(p.enc_g, cache.g_acts, std::move(gg), g.enc_g);
    backprop_encoder(p.enc_l, cache.l_acts, std::move(gl), g.enc_l);
    return g;
}

double sign_of(double x) {
    return x > 0.0 ? 1.0 : (x < 0.0 ? -1.0 : 0.0);
}

Matrix row_matrix(std::span<const double> x) {
    return Matrix(1, x.size(), Vector(x.begin(), x.end()));
}

void for_each_tensor(PredictorParams& a, PredictorParams& b,
                     const std::function<void(std::span<double>, std::span<double>)>& fn) {
    auto walk = [&](std::vector<DenseLayer>& la, std::vector<DenseLayer>& lb) {
        for (std::size_t j = 0; j < la.size(); ++j) {
            fn(la[j].weight.data(), lb[j].weight.data());
            fn(la[j].bias, lb[j].bias);
        }
    };
    walk(a.enc_g, b.enc_g);
    walk(a.enc_l, b.enc_l);
    walk(a.dec, b.dec);
}

struct Adam {
    PredictorParams m;
    PredictorParams v;
    std::size_t t = 0;

    explicit Adam(const PredictorParams& p) : m(zeros_of(p)), v(zeros_of(p)) {}

    void step(PredictorParams& params, PredictorParams& grad, double lr) {
        ++t;
        const double c1 = 1.0 - std::pow(kBeta1, static_cast<double>(t));
        const double c2 = 1.0 - std::pow(kBeta2, static_cast<double>(t));
        std::vector<std::span<double>> ms;
        std::vector<std::span<double>> vs;
        for_each_tensor(m, v, [&](std::span<double> a, std::span<double> b) {
            ms.push_back(a);
            vs.push_back(b);
        });
        std::size_t idx = 0;
        for_each_tensor(params, grad, [&](std::span<double> w, std::span<double> g) {
            auto mt = ms[idx];
            auto vt = vs[idx];
            ++idx;
            for (std::size_t i = 0; i < w.size(); ++i) {
                mt[i] = kBeta1 * mt[i] + (1.0 - kBeta1) * g[i];
                vt[i] = kBeta2 * vt[i] + (1.0 - kBeta2) * g[i] * g[i];
                const double mhat = mt[i] / c1;
                const double vhat = vt[i] / c2;
                w[i] -= lr * mhat / (std::sqrt(vhat) + kAdamEps);
            }
        });
    }
};

struct Stacked {
    Matrix sg;
    Matrix sl;
    Matrix st;
};

Stacked stack(const std::vector<const TrainingExample*>& rows, std::size_t d) {
    Stacked s{Matrix(rows.size(), d), Matrix(rows.size(), d), Matrix(rows.size(), d)};
    for (std::size_t r = 0; r < rows.size(); ++r) {
        std::copy(rows[r]->s_global.begin(), rows[r]->s_global.end(), s.sg.row(r).begin());
        std::copy(rows[r]->s_local.begin(), rows[r]->s_local.end(), s.sl.row(r).begin());
        std::copy(rows[r]->s_target.begin(), rows[r]->s_target.end(), s.st.row(r).begin());
    }
    return s;
}

std::uint64_t group_stream(Field f, std::size_t d) {
    return (static_cast<std::uint64_t>(f) << 48) ^ d;
}

PredictorEntry train_group(const DatasetGroup& group, const TrainOptions& opts) {
    const std::size_t d = group.dimension;
    if (group.examples.empty()) {
        fail(ErrorKind::EmptyGroup, "dataset group " + to_string(group.field) + "/" + std::to_string(d) +
                                        " has no examples");
    }
    for (const auto& ex : group.examples) {
        if (ex.s_global.size() != d || ex.s_local.size() != d || ex.s_target.size() != d) {
            fail(ErrorKind::DimensionMismatch, "example '" + ex.param_name + "' does not match group width " +
                                                   std::to_string(d));
        }
    }
    PredictorEntry entry;
    entry.config = {d, opts.hidden_dim, opts.encoder_layers, opts.decoder_layers, group.field};
    validate(entry.config);
    const std::uint64_t stream = group_stream(group.field, d);

    // Held-out parameters are chosen by name with a seeded Fisher-Yates shuffle.
    std::vector<std::string> names;
    {
        std::set<std::string> unique;
        for (const auto& ex : group.examples) unique.insert(ex.param_name);
        names.assign(unique.begin(), unique.end());
    }
    RngStream holdout_rng(CounterRng(opts.seed, {kTagHoldout, stream}));
    for (std::size_t i = names.size(); i > 1; --i) {
        std::swap(names[i - 1], names[holdout_rng.below(i)]);
    }
    std::size_t n_hold = 0;
    if (names.size() >= 2 && opts.holdout_fraction > 0.0) {
        n_hold = static_cast<std::size_t>(std::llround(opts.holdout_fraction * static_cast<double>(names.size())));
        n_hold = std::clamp<std::size_t>(n_hold, 1, names.size() - 1);
    }
    const std::set<std::string> held(names.begin(), names.begin() + static_cast<std::ptrdiff_t>(n_hold));
    entry.log.holdout_params.assign(held.begin(), held.end());

    std::vector<const TrainingExample*> train_rows;
    std::vector<const TrainingExample*> hold_rows;
    for (const auto& ex : group.examples) {
        (held.contains(ex.param_name) ? hold_rows : train_rows).push_back(&ex);
    }
    entry.log.train_examples = train_rows.size();
    entry.log.holdout_examples = hold_rows.size();
    const Stacked train_set = stack(train_rows, d);
    const Stacked hold_set = stack(hold_rows, d);

    entry.params = init_uniform(entry.config, mix64(opts.seed ^ mix64(stream)));
    Adam adam(entry.params);

    auto record = [&](std::size_t epoch) {
        const double tl = batch_loss(entry.params, train_set.sg, train_set.sl, train_set.st);
        if (!std::isfinite(tl)) {
            fail(ErrorKind::DivergedTraining, "predictor " + to_string(group.field) + "/" + std::to_string(d) +
                                                  " loss became non-finite at epoch " + std::to_string(epoch));
        }
        entry.log.train_loss.push_back(tl);
        if (!hold_rows.empty()) {
            entry.log.holdout_loss.push_back(batch_loss(entry.params, hold_set.sg, hold_set.sl, hold_set.st));
        }
    };
    record(0);

    const std::size_t n = train_rows.size();
    const std::size_t batch = std::max<std::size_t>(1, std::min(opts.batch_size, n));
    std::vector<std::size_t> order(n);
    for (std::size_t epoch = 1; epoch <= opts.epochs; ++epoch) {
        for (std::size_t i = 0; i < n; ++i) order[i] = i;
        RngStream shuffle(CounterRng(opts.seed, {kTagShuffle, stream, epoch}));
        for (std::size_t i = n; i > 1; --i) {
            std::swap(order[i - 1], order[shuffle.below(i)]);
        }
        for (std::size_t start = 0; start < n; start += batch) {
            const std::size_t end = std::min(n, start + batch);
            std::vector<const TrainingExample*> rows;
            rows.reserve(end - start);
            for (std::size_t i = start; i < end; ++i) rows.push_back(train_rows[order[i]]);
            const Stacked mb = stack(rows, d);
            PredictorParams grad = batch_gradient(entry.params, mb.sg, mb.sl, mb.st);
            adam.step(entry.params, grad, opts.learning_rate);
        }
        record(epoch);
    }
    return entry;
}

std::string key_prefix(const PredictorKey& key) {
    return to_string(key.first) + "/" + std::to_string(key.second) + "/";
}

void layers_to_file(const std::string& prefix, const std::vector<DenseLayer>& layers, TensorFile& file) {
    for (std::size_t j = 0; j < layers.size(); ++j) {
        const auto& l = layers[j];
        const std::string base = prefix + "." + std::to_string(j);
        file.arrays.emplace(base + ".w", StoredArray{DType::F64, {l.weight.rows(), l.weight.cols()},
                                                     {l.weight.data().begin(), l.weight.data().end()}});
        file.arrays.emplace(base + ".b", StoredArray{DType::F64, {l.bias.size()}, l.bias});
    }
}

std::pair<TensorFile, json> bundle_to_files(const PredictorBundle& b) {
    TensorFile file;
    json entries = json::array();
    for (const auto& [key, e] : b.entries) {
        const std::string prefix = key_prefix(key);
        layers_to_file(prefix + "enc_g", e.params.enc_g, file);
        layers_to_file(prefix + "enc_l", e.params.enc_l, file);
        layers_to_file(prefix + "dec", e.params.dec, file);
        entries.push_back({{"field", to_string(key.first)},
                           {"dimension", key.second},
                           {"hidden_dim", e.config.hidden_dim},
                           {"encoder_layers", e.config.encoder_layers},
                           {"decoder_layers", e.config.decoder_layers},
                           {"activation", "relu"},
                           {"train_examples", e.log.train_examples},
                           {"holdout_examples", e.log.holdout_examples},
                           {"holdout_params", e.log.holdout_params},
                           {"train_loss", e.log.train_loss},
                           {"holdout_loss", e.log.holdout_loss}});
    }
    json meta = {{"format", kBundleFormat},
                 {"k", b.meta.k},
                 {"seed", b.meta.seed},
                 {"epochs", b.meta.epochs},
                 {"learning_rate", b.meta.learning_rate},
                 {"batch_size", b.meta.batch_size},
                 {"holdout_fraction", b.meta.holdout_fraction},
                 {"sigma_transform", to_string(b.meta.sigma_transform)},
                 {"loss_reduction", kLossReduction},
                 {"optimizer", {{"name", "adam"}, {"beta1", kBeta1}, {"beta2", kBeta2}, {"eps", kAdamEps}}},
                 {"init", "uniform_fan_in"},
                 {"entries", entries}};
    return {std::move(file), std::move(meta)};
}

std::vector<DenseLayer> layers_from_file(const TensorFile& file, const std::string& prefix,
                                         const std::vector<std::pair<std::size_t, std::size_t>>& shapes,
                                         std::size_t& consumed) {
    std::vector<DenseLayer> layers;
    for (std::size_t j = 0; j < shapes.size(); ++j) {
        const std::string base = prefix + "." + std::to_string(j);
        auto w = file.arrays.find(base + ".w");
        auto bias = file.arrays.find(base + ".b");
        if (w == file.arrays.end() || bias == file.arrays.end()) {
            fail(ErrorKind::FormatError, "bundle is missing layer '" + base + "'");
        }
        const auto [out, in] = shapes[j];
        if (w->second.shape != std::vector<std::uint64_t>{out, in} ||
            bias->second.shape != std::vector<std::uint64_t>{out}) {
            fail(ErrorKind::FormatError, "bundle layer '" + base + "' has the wrong shape");
        }
        layers.push_back({Matrix(out, in, w->second.data), bias->second.data});
        consumed += 2;
    }
    return layers;
}

}  // namespace

void validate(const PredictorConfig& cfg) {
    if (cfg.input_dim == 0 || cfg.hidden_dim == 0 || cfg.encoder_layers == 0 || cfg.decoder_layers == 0) {
        fail(ErrorKind::InvalidArgument, "predictor dimensions and layer counts must be positive");
    }
}

LayerPlan layer_plan(const PredictorConfig& cfg) {
    validate(cfg);
    LayerPlan plan;
    const std::size_t d = cfg.input_dim;
    const std::size_t h = cfg.hidden_dim;
    for (std::size_t j = 0; j < cfg.encoder_layers; ++j) {
        plan.encoder.emplace_back(h, j == 0 ? d : h);
    }
    for (std::size_t j = 0; j < cfg.decoder_layers; ++j) {
        const std::size_t in = j == 0 ? 2 * h : h;
        const std::size_t out = j + 1 == cfg.decoder_layers ? d : h;
        plan.decoder.emplace_back(out, in);
    }
    return plan;
}

PredictorParams zeros_like(const PredictorConfig& cfg) {
    const LayerPlan plan = layer_plan(cfg);
    PredictorParams p;
    for (const auto& [out, in] : plan.encoder) {
        p.enc_g.push_back({Matrix(out, in), Vector(out, 0.0)});
        p.enc_l.push_back({Matrix(out, in), Vector(out, 0.0)});
    }
    for (const auto& [out, in] : plan.decoder) {
        p.dec.push_back({Matrix(out, in), Vector(out, 0.0)});
    }
    return p;
}

PredictorParams init_uniform(const PredictorConfig& cfg, std::uint64_t seed) {
    PredictorParams p = zeros_like(cfg);
    auto fill = [&](std::vector<DenseLayer>& layers, std::uint64_t part) {
        for (std::size_t j = 0; j < layers.size(); ++j) {
            Matrix& w = layers[j].weight;
            const double bound = 1.0 / std::sqrt(static_cast<double>(w.cols()));
            const CounterRng rng(seed, {kTagInit, part, j});
            for (std::size_t i = 0; i < w.size(); ++i) {
                w.data()[i] = rng.uniform(i, -bound, bound);
            }
        }
    };
    fill(p.enc_g, 0);
    fill(p.enc_l, 1);
    fill(p.dec, 2);
    return p;
}

Vector forward(const PredictorParams& p, std::span<const double> s_global, std::span<const double> s_local) {
    if (s_global.size() != s_local.size()) {
        fail(ErrorKind::DimensionMismatch, "s_G and s_L lengths differ");
    }
    const Matrix out = run_forward(p, row_matrix(s_global), row_matrix(s_local), nullptr);
    return {out.data().begin(), out.data().end()};
}

double l1_loss(std::span<const double> pred, std::span<const double> target) {
    if (pred.size() != target.size()) {
        fail(ErrorKind::DimensionMismatch, "prediction and target lengths differ");
    }
    double s = 0.0;
    for (std::size_t i = 0; i < pred.size(); ++i) {
        s += std::abs(pred[i] - target[i]);
    }
    return s;
}

PredictorParams backward(const PredictorParams& p, std::span<const double> s_global,
                         std::span<const double> s_local, std::span<const double> target) {
    if (s_global.size() != s_local.size() || target.size() != s_global.size()) {
        fail(ErrorKind::DimensionMismatch, "backward inputs differ in length");
    }
    return batch_gradient(p, row_matrix(s_global), row_matrix(s_local), row_matrix(target));
}

Matrix forward_batch(const PredictorParams& p, const Matrix& s_global, const Matrix& s_local) {
    return run_forward(p, s_global, s_local, nullptr);
}

double batch_loss(const PredictorParams& p, const Matrix& s_global, const Matrix& s_local, const Matrix& target) {
    if (s_global.rows() == 0) {
        return 0.0;
    }
    const Matrix pred = run_forward(p, s_global, s_local, nullptr);
    require_same_shape(pred, target, "batch_loss");
    double s = 0.0;
    for (std::size_t r = 0; r < pred.rows(); ++r) {
        s += l1_loss(pred.row(r), target.row(r));
    }
    return s / static_cast<double>(pred.rows());
}

PredictorParams batch_gradient(const PredictorParams& p, const Matrix& s_global, const Matrix& s_local,
                               const Matrix& target, double* loss) {
    ForwardCache cache;
    const Matrix pred = run_forward(p, s_global, s_local, &cache);
    if (!pred.same_shape(target)) {
        fail(ErrorKind::DimensionMismatch, "target width does not match predictor output");
    }
    const double inv_batch = 1.0 / static_cast<double>(pred.rows());
    Matrix grad(pred.rows(), pred.cols());
    double total = 0.0;
    for (std::size_t i = 0; i < pred.size(); ++i) {
        const double r = pred.data()[i] - target.data()[i];
        total += std::abs(r);
        grad.data()[i] = sign_of(r) * inv_batch;
    }
    if (loss) {
        *loss = total * inv_batch;
    }
    return run_backward(p, cache, std::move(grad));
}

PredictorBundle train(const std::vector<DatasetGroup>& groups, const TrainOptions& opts) {
    if (groups.empty()) {
        fail(ErrorKind::EmptyGroup, "no dataset groups to train on");
    }
    if (!(opts.learning_rate > 0.0) || opts.holdout_fraction < 0.0 || opts.holdout_fraction >= 1.0) {
        fail(ErrorKind::InvalidArgument, "learning rate must be positive and holdout fraction in [0, 1)");
    }
    std::vector<PredictorEntry> trained(groups.size());
    parallel_for(groups.size(), [&](std::size_t g) { trained[g] = train_group(groups[g], opts); });

    PredictorBundle bundle;
    bundle.meta.seed = opts.seed;
    bundle.meta.epochs = opts.epochs;
    bundle.meta.learning_rate = opts.learning_rate;
    bundle.meta.batch_size = opts.batch_size;
    bundle.meta.holdout_fraction = opts.holdout_fraction;
    for (std::size_t g = 0; g < groups.size(); ++g) {
        const PredictorKey key{groups[g].field, groups[g].dimension};
        if (!bundle.entries.emplace(key, std::move(trained[g])).second) {
            fail(ErrorKind::InvalidArgument, "duplicate dataset group " + key_prefix(key));
        }
    }
    return bundle;
}

PredictorBundle train(const Dataset& ds, const TrainOptions& opts) {
    PredictorBundle b = train(ds.groups, opts);
    b.meta.k = ds.k;
    b.meta.sigma_transform = ds.sigma_transform;
    return b;
}

const PredictorEntry* PredictorBundle::find(Field field, std::size_t dimension) const {
    auto it = entries.find({field, dimension});
    return it == entries.end() ? nullptr : &it->second;
}

void save_bundle(const PredictorBundle& b, const std::filesystem::path& path) {
    const auto [file, meta] = bundle_to_files(b);
    write_tensor_file(path, file);
    write_file_bytes(sidecar_path(path), meta.dump(2) + "\n");
}

PredictorBundle load_bundle(const std::filesystem::path& path) {
    const TensorFile file = read_tensor_file(path);
    PredictorBundle b;
    try {
        const json meta = json::parse(read_file_bytes(sidecar_path(path)));
        if (meta.at("format").get<std::string>() != kBundleFormat) {
            fail(ErrorKind::FormatError, sidecar_path(path).string() + ": unsupported bundle format");
        }
        b.meta.k = meta.at("k").get<std::size_t>();
        b.meta.seed = meta.at("seed").get<std::uint64_t>();
        b.meta.epochs = meta.at("epochs").get<std::size_t>();
        b.meta.learning_rate = meta.at("learning_rate").get<double>();
        b.meta.batch_size = meta.at("batch_size").get<std::size_t>();
        b.meta.holdout_fraction = meta.at("holdout_fraction").get<double>();
        b.meta.sigma_transform = parse_sigma_transform(meta.at("sigma_transform").get<std::string>());
        std::size_t consumed = 0;
        for (const auto& e : meta.at("entries")) {
            PredictorEntry entry;
            entry.config.field = parse_field(e.at("field").get<std::string>());
            entry.config.input_dim = e.at("dimension").get<std::size_t>();
            entry.config.hidden_dim = e.at("hidden_dim").get<std::size_t>();
            entry.config.encoder_layers = e.at("encoder_layers").get<std::size_t>();
            entry.config.decoder_layers = e.at("decoder_layers").get<std::size_t>();
            entry.log.train_examples = e.at("train_examples").get<std::size_t>();
            entry.log.holdout_examples = e.at("holdout_examples").get<std::size_t>();
            entry.log.holdout_params = e.at("holdout_params").get<std::vector<std::string>>();
            entry.log.train_loss = e.at("train_loss").get<std::vector<double>>();
            entry.log.holdout_loss = e.at("holdout_loss").get<std::vector<double>>();
            const PredictorKey key{entry.config.field, entry.config.input_dim};
            const std::string prefix = key_prefix(key);
            const LayerPlan plan = layer_plan(entry.config);
            entry.params.enc_g = layers_from_file(file, prefix + "enc_g", plan.encoder, consumed);
            entry.params.enc_l = layers_from_file(file, prefix + "enc_l", plan.encoder, consumed);
            entry.params.dec = layers_from_file(file, prefix + "dec", plan.decoder, consumed);
            if (!b.entries.emplace(key, std::move(entry)).second) {
                fail(ErrorKind::FormatError, "bundle lists predictor " + prefix + " twice");
            }
        }
        if (consumed != file.arrays.size()) {
            fail(ErrorKind::FormatError, path.string() + ": bundle holds tensors not described by its metadata");
        }
    } catch (const json::exception& e) {
        fail(ErrorKind::FormatError, sidecar_path(path).string() + ": " + e.what());
    } catch (const Error& e) {
        if (e.kind() == ErrorKind::InvalidArgument) {
            fail(ErrorKind::FormatError, path.string() + ": " + e.what());
        }
        throw;
    }
    return b;
}

std::optional<std::string> check_bundle_k(const PredictorBundle& b, std::size_t k) {
    if (b.meta.k == k) {
        return std::nullopt;
    }
    return "predictor bundle was trained with k=" + std::to_string(b.meta.k) + " but extrapolation uses k=" +
           std::to_string(k);
}

std::string bundle_id(const PredictorBundle& b) {
    const auto [file, meta] = bundle_to_files(b);
    const std::string bytes = encode_tensor_file(file) + meta.dump();
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char ch : bytes) {
        h ^= ch;
        h *= 0x100000001b3ULL;
    }
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

}  // namespace trajex
