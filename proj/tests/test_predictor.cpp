#include <gtest/gtest.h>

#include <cmath>

#include "support/expect.hpp"
#include "support/oracles.hpp"
#include "trajex/container.hpp"
#include "trajex/predictor.hpp"
#include "trajex/trajectory_lab.hpp"

using namespace trajex;

namespace {

PredictorConfig cfg(std::size_t d, std::size_t h, std::size_t enc = 2, std::size_t dec = 2) {
    return {d, h, enc, dec, Field::u};
}

Vector random_vec(oracle::Gen& g, std::size_t n) {
    Vector v(n);
    for (double& x : v) x = g.normal();
    return v;
}

// Walks every scalar parameter of p together with the matching gradient entry.
template <class F>
void each_param(PredictorParams& p, const PredictorParams& grad, F f) {
    auto walk = [&](std::vector<DenseLayer>& a, const std::vector<DenseLayer>& b) {
        for (std::size_t j = 0; j < a.size(); ++j) {
            for (std::size_t i = 0; i < a[j].weight.size(); ++i) f(a[j].weight.data()[i], b[j].weight.data()[i]);
            for (std::size_t i = 0; i < a[j].bias.size(); ++i) f(a[j].bias[i], b[j].bias[i]);
        }
    };
    walk(p.enc_g, grad.enc_g);
    walk(p.enc_l, grad.enc_l);
    walk(p.dec, grad.dec);
}

DatasetGroup make_group(Field field, std::size_t d, std::size_t names, std::size_t per_name, std::uint64_t seed,
                        bool constant_target) {
    oracle::Gen g(seed);
    DatasetGroup group{field, d, {}};
    const Vector fixed = random_vec(g, d);
    for (std::size_t n = 0; n < names; ++n) {
        for (std::size_t i = 1; i <= per_name; ++i) {
            TrainingExample ex{"p" + std::to_string(n), i, field, random_vec(g, d), random_vec(g, d), {}};
            if (constant_target) {
                ex.s_target = fixed;
            } else {
                ex.s_target = ex.s_global;
                for (std::size_t j = 0; j < d; ++j) ex.s_target[j] = 0.5 * ex.s_global[j] - 0.25 * ex.s_local[j];
            }
            group.examples.push_back(ex);
        }
    }
    return group;
}

}  // namespace

TEST(Predictor, LayerPlanShapes) {
    const LayerPlan p = layer_plan(cfg(5, 8, 2, 3));
    using P = std::pair<std::size_t, std::size_t>;
    EXPECT_EQ(p.encoder, (std::vector<P>{{8, 5}, {8, 8}}));
    EXPECT_EQ(p.decoder, (std::vector<P>{{8, 16}, {8, 8}, {5, 8}}));
    EXPECT_EQ(layer_plan(cfg(5, 8, 1, 1)).decoder, (std::vector<P>{{5, 16}}));
    EXPECT_TRAJEX_ERROR(layer_plan(cfg(0, 8)), ErrorKind::InvalidArgument);
    EXPECT_TRAJEX_ERROR(layer_plan(cfg(3, 8, 0, 1)), ErrorKind::InvalidArgument);
}

TEST(Predictor, InitUniformBoundsAndDeterminism) {
    const PredictorParams a = init_uniform(cfg(4, 16), 7);
    EXPECT_EQ(a, init_uniform(cfg(4, 16), 7));
    EXPECT_NE(a, init_uniform(cfg(4, 16), 8));
    for (double w : a.enc_g[0].weight.data()) EXPECT_LE(std::abs(w), 0.5);
    for (const auto* layers : {&a.enc_g, &a.enc_l, &a.dec}) {
        for (const auto& l : *layers) {
            const double bound = 1.0 / std::sqrt(static_cast<double>(l.weight.cols()));
            for (double w : l.weight.data()) EXPECT_LE(std::abs(w), bound);
            for (double b : l.bias) EXPECT_EQ(b, 0.0);
        }
    }
    EXPECT_NE(a.enc_g[0].weight, a.enc_l[0].weight);
}

TEST(Predictor, ZeroParamsGiveZeroOutput) {
    const PredictorParams z = zeros_like(cfg(3, 4));
    EXPECT_EQ(forward(z, Vector{1, 2, 3}, Vector{-1, 5, 0}), (Vector{0, 0, 0}));
}

TEST(Predictor, HandWiredSum) {
    PredictorParams p = zeros_like(cfg(2, 2));
    for (auto* layers : {&p.enc_g, &p.enc_l}) {
        for (auto& l : *layers) l.weight = Matrix::identity(2);
    }
    p.dec[0].weight = Matrix::from_rows({{1, 0, 1, 0}, {0, 1, 0, 1}});
    p.dec[1].weight = Matrix::identity(2);
    EXPECT_EQ(forward(p, Vector{1, 0}, Vector{0, 1}), (Vector{1, 1}));
}

TEST(Predictor, ForwardMatchesNaiveOracle) {
    oracle::Gen g(404);
    for (std::size_t trial = 0; trial < 10; ++trial) {
        const std::size_t d = g.integer(1, 9);
        const PredictorConfig c = cfg(d, g.integer(1, 20), g.integer(1, 3), g.integer(1, 3));
        const PredictorParams p = init_uniform(c, trial);
        const Vector sg = random_vec(g, d), sl = random_vec(g, d);
        const Vector out = forward(p, sg, sl);
        const Vector ref = oracle::naive_forward(p, sg, sl);
        ASSERT_EQ(out.size(), ref.size());
        for (std::size_t i = 0; i < d; ++i) EXPECT_NEAR(out[i], ref[i], 1e-12);
    }
    EXPECT_TRAJEX_ERROR(forward(init_uniform(cfg(2, 3), 1), Vector{1, 2}, Vector{1}), ErrorKind::DimensionMismatch);
    EXPECT_TRAJEX_ERROR(forward(init_uniform(cfg(2, 3), 1), Vector{1, 2, 3}, Vector{1, 2, 3}),
                        ErrorKind::DimensionMismatch);
}

TEST(Predictor, L1Loss) {
    EXPECT_EQ(l1_loss(Vector{1, 2}, Vector{1, 2}), 0.0);
    EXPECT_EQ(l1_loss(Vector{1, 2}, Vector{0, 0}), 3.0);
    EXPECT_EQ(l1_loss(Vector{0.5}, Vector{-0.5}), 1.0);
    EXPECT_TRAJEX_ERROR(l1_loss(Vector{1}, Vector{1, 2}), ErrorKind::DimensionMismatch);
}

TEST(Predictor, ZeroResidualGivesZeroGradient) {
    oracle::Gen g(5);
    const PredictorParams p = init_uniform(cfg(3, 6), 2);
    const Vector sg = random_vec(g, 3), sl = random_vec(g, 3);
    const PredictorParams grad = backward(p, sg, sl, forward(p, sg, sl));
    EXPECT_EQ(grad, zeros_like(cfg(3, 6)));
}

TEST(Predictor, NegatedTargetFlipsOutputBiasGradient) {
    oracle::Gen g(6);
    const PredictorParams p = init_uniform(cfg(4, 5), 3);
    const Vector sg = random_vec(g, 4), sl = random_vec(g, 4);
    Vector target{100, -100, 100, -100};
    Vector neg = target;
    for (double& x : neg) x = -x;
    const Vector a = backward(p, sg, sl, target).dec.back().bias;
    const Vector b = backward(p, sg, sl, neg).dec.back().bias;
    for (std::size_t i = 0; i < 4; ++i) {
        EXPECT_EQ(a[i], -b[i]);
        EXPECT_EQ(std::abs(a[i]), 1.0);
    }
}

TEST(Predictor, GradientMatchesFiniteDifferences) {
    oracle::Gen g(77);
    const PredictorConfig c = cfg(3, 5, 2, 2);
    PredictorParams p = init_uniform(c, 11);
    Vector sg, sl, target;
    for (;;) {
        sg = random_vec(g, 3);
        sl = random_vec(g, 3);
        target = random_vec(g, 3);
        std::vector<double> pre;
        const Vector out = oracle::naive_forward(p, sg, sl, &pre);
        bool ok = true;
        for (double z : pre) ok = ok && std::abs(z) > 1e-3;
        for (std::size_t i = 0; i < 3; ++i) ok = ok && std::abs(out[i] - target[i]) > 1e-3;
        if (ok) break;
    }
    const PredictorParams grad = backward(p, sg, sl, target);
    const double h = 1e-5;
    double worst = 0.0;
    each_param(p, grad, [&](double& w, double gw) {
        const double keep = w;
        w = keep + h;
        const double up = l1_loss(oracle::naive_forward(p, sg, sl), target);
        w = keep - h;
        const double down = l1_loss(oracle::naive_forward(p, sg, sl), target);
        w = keep;
        const double fd = (up - down) / (2 * h);
        worst = std::max(worst, std::abs(fd - gw) / std::max({std::abs(fd), std::abs(gw), 1e-8}));
    });
    EXPECT_LT(worst, 1e-4);
}

TEST(Predictor, BatchEquivalence) {
    oracle::Gen g(8);
    const PredictorParams p = init_uniform(cfg(4, 7), 1);
    const std::size_t n = 9;
    Matrix G(n, 4), L(n, 4), T(n, 4);
    for (auto* m : {&G, &L, &T}) for (double& x : m->data()) x = g.normal();
    double mean = 0.0;
    PredictorParams sum = zeros_like(cfg(4, 7));
    for (std::size_t r = 0; r < n; ++r) {
        const Vector sg(G.row(r).begin(), G.row(r).end()), sl(L.row(r).begin(), L.row(r).end()),
            t(T.row(r).begin(), T.row(r).end());
        mean += l1_loss(forward(p, sg, sl), t) / static_cast<double>(n);
        const PredictorParams one = backward(p, sg, sl, t);
        each_param(sum, one, [&](double& s, double o) { s += o / static_cast<double>(n); });
    }
    double loss = 0.0;
    const PredictorParams batch = batch_gradient(p, G, L, T, &loss);
    EXPECT_NEAR(batch_loss(p, G, L, T), mean, 1e-12);
    EXPECT_NEAR(loss, mean, 1e-12);
    PredictorParams diff = batch;
    each_param(diff, sum, [&](double& b, double s) { EXPECT_NEAR(b, s, 1e-12); });
    const Matrix out = forward_batch(p, G, L);
    for (std::size_t r = 0; r < n; ++r) {
        const Vector one = forward(p, Vector(G.row(r).begin(), G.row(r).end()), Vector(L.row(r).begin(), L.row(r).end()));
        for (std::size_t j = 0; j < 4; ++j) EXPECT_EQ(out(r, j), one[j]);
    }
}

TEST(Train, ConstantTargetIsLearned) {
    Dataset ds;
    ds.k = 5;
    ds.groups.push_back(make_group(Field::u, 3, 20, 10, 1, true));
    TrainOptions opts;
    opts.hidden_dim = 64;
    const PredictorBundle b = train(ds, opts);
    const PredictorEntry& e = b.entries.begin()->second;
    ASSERT_EQ(e.log.train_loss.size(), 201u);
    ASSERT_FALSE(e.log.holdout_loss.empty());
    // L1 under Adam settles at roughly the step size, not at zero
    EXPECT_LT(e.log.holdout_loss.back(), 0.05 * e.log.holdout_loss.front());
    EXPECT_LT(e.log.train_loss.back(), 0.05 * e.log.train_loss.front());
    EXPECT_EQ(e.log.holdout_params.size(), 2u);
    EXPECT_EQ(e.log.holdout_examples, 20u);
}

TEST(Train, HoldoutIsByNameAndDeterministic) {
    std::vector<DatasetGroup> groups{make_group(Field::u, 2, 10, 4, 2, false),
                                     make_group(Field::sigma, 1, 10, 4, 3, false)};
    TrainOptions opts;
    opts.hidden_dim = 8;
    opts.epochs = 5;
    setenv("NEXT_THREADS", "1", 1);
    const PredictorBundle a = train(groups, opts);
    setenv("NEXT_THREADS", "3", 1);
    const PredictorBundle b = train(groups, opts);
    unsetenv("NEXT_THREADS");
    EXPECT_EQ(a, b);
    EXPECT_EQ(bundle_id(a), bundle_id(b));
    for (const auto& [key, e] : a.entries) {
        EXPECT_EQ(e.log.train_examples + e.log.holdout_examples, 40u);
        EXPECT_EQ(e.log.holdout_examples, 4u * e.log.holdout_params.size());
    }
    opts.seed = 18;
    EXPECT_NE(train(groups, opts), a);
}

TEST(Train, Errors) {
    TrainOptions opts;
    EXPECT_TRAJEX_ERROR(train(std::vector<DatasetGroup>{}, opts), ErrorKind::EmptyGroup);
    EXPECT_TRAJEX_ERROR(train(std::vector<DatasetGroup>{{Field::u, 3, {}}}, opts), ErrorKind::EmptyGroup);
    std::vector<DatasetGroup> groups{make_group(Field::u, 2, 3, 2, 4, false)};
    opts.hidden_dim = 4;
    opts.epochs = 50;
    opts.learning_rate = 1e308;
    EXPECT_TRAJEX_ERROR(train(groups, opts), ErrorKind::DivergedTraining);
}

TEST(Bundle, RoundTripAndCorruption) {
    const auto dir = oracle::scratch_dir("bundle");
    Dataset ds;
    ds.k = 5;
    ds.sigma_transform = SigmaTransform::log1p;
    ds.groups = {make_group(Field::u, 3, 6, 3, 5, false), make_group(Field::sigma, 1, 6, 3, 6, false)};
    TrainOptions opts;
    opts.hidden_dim = 6;
    opts.epochs = 3;
    const PredictorBundle b = train(ds, opts);
    save_bundle(b, dir / "a.safetensors");
    const PredictorBundle back = load_bundle(dir / "a.safetensors");
    EXPECT_EQ(back, b);
    save_bundle(back, dir / "b.safetensors");
    EXPECT_EQ(read_file_bytes(dir / "a.safetensors"), read_file_bytes(dir / "b.safetensors"));
    EXPECT_EQ(read_file_bytes(dir / "a.safetensors.json"), read_file_bytes(dir / "b.safetensors.json"));
    EXPECT_EQ(bundle_id(back), bundle_id(b));

    EXPECT_FALSE(check_bundle_k(b, 5));
    ASSERT_TRUE(check_bundle_k(b, 3));
    EXPECT_NE(check_bundle_k(b, 3)->find("k=5"), std::string::npos);

    std::string bytes = read_file_bytes(dir / "a.safetensors");
    bytes[8] = '[';
    write_file_bytes(dir / "a.safetensors", bytes);
    EXPECT_TRAJEX_ERROR(load_bundle(dir / "a.safetensors"), ErrorKind::FormatError);
    write_file_bytes(dir / "b.safetensors.json", "{\"format\": 3}");
    EXPECT_TRAJEX_ERROR(load_bundle(dir / "b.safetensors"), ErrorKind::FormatError);
    std::filesystem::remove(dir / "b.safetensors.json");
    EXPECT_TRAJEX_ERROR(load_bundle(dir / "b.safetensors"), ErrorKind::IoError);
}
