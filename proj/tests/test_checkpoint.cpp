#include <gtest/gtest.h>

#include <cstring>

#include "json.hpp"
#include "support/expect.hpp"
#include "support/oracles.hpp"
#include "trajex/checkpoint.hpp"
#include "trajex/container.hpp"

using namespace trajex;
namespace fs = std::filesystem;

namespace {

Checkpoint sample_checkpoint(std::int64_t step = 10) {
    Checkpoint c;
    c.step = step;
    c.tensors.emplace("b.weight", Matrix::from_rows({{1.5, -2}, {0.25, 4}, {8, 16}}));
    c.tensors.emplace("a.weight", Matrix(1, 1, 42.0));
    c.passthrough.emplace("a.bias", PassthroughArray{{3}, {0.5, 1, -1}});
    return c;
}

std::string header_of(const std::string& json_text) {
    std::string out(8, '\0');
    const std::uint64_t n = json_text.size();
    std::memcpy(out.data(), &n, 8);
    return out + json_text;
}

}  // namespace

TEST(Container, EncodeLayout) {
    TensorFile f;
    f.arrays.emplace("x", StoredArray{DType::F32, {1, 2}, {1.0, 2.0}});
    f.metadata["step"] = "5";
    const std::string bytes = encode_tensor_file(f);
    std::uint64_t n = 0;
    std::memcpy(&n, bytes.data(), 8);
    EXPECT_EQ(n % 8, 0u);
    EXPECT_EQ(bytes.size(), 8 + n + 8);
    const auto header = nlohmann::json::parse(bytes.substr(8, n));
    EXPECT_EQ(header["x"]["dtype"], "F32");
    EXPECT_EQ(header["x"]["data_offsets"], nlohmann::json::array({0, 8}));
    EXPECT_EQ(header["__metadata__"]["step"], "5");
    float v = 0;
    std::memcpy(&v, bytes.data() + 8 + n + 4, 4);
    EXPECT_EQ(v, 2.0f);
    EXPECT_EQ(decode_tensor_file(bytes).arrays.at("x").data, (Vector{1.0, 2.0}));
}

TEST(Container, RejectsNonFiniteAndF32Overflow) {
    TensorFile f;
    f.arrays.emplace("x", StoredArray{DType::F32, {1}, {NAN}});
    EXPECT_TRAJEX_ERROR(encode_tensor_file(f), ErrorKind::NonFinite);
    f.arrays.at("x").data = {1e300};
    EXPECT_TRAJEX_ERROR(encode_tensor_file(f), ErrorKind::NonFinite);
    f.arrays.at("x").dtype = DType::F64;
    EXPECT_NO_THROW(encode_tensor_file(f));
}

TEST(Container, MalformedHeaders) {
    const std::string good = encode_tensor_file(TensorFile{{{"x", StoredArray{DType::F32, {2}, {1, 2}}}}, {}});
    EXPECT_TRAJEX_ERROR(decode_tensor_file(""), ErrorKind::FormatError);
    EXPECT_TRAJEX_ERROR(decode_tensor_file(good.substr(0, 5)), ErrorKind::FormatError);
    for (std::size_t cut = 0; cut < good.size(); ++cut) {
        EXPECT_TRAJEX_ERROR(decode_tensor_file(good.substr(0, cut)), ErrorKind::FormatError);
    }
    const char* bad_headers[] = {
        "not json",
        "[1,2]",
        R"({"x":{"dtype":"F16","shape":[1],"data_offsets":[0,2]}})",
        R"({"x":{"dtype":"F32","shape":[2],"data_offsets":[0,4]}})",
        R"({"x":{"dtype":"F32","shape":[1],"data_offsets":[0,400]}})",
        R"({"x":{"dtype":"F32","shape":[1],"data_offsets":[4,0]}})",
        R"({"x":{"dtype":"F32","shape":[1]}})",
        R"({"x":{"dtype":"F32","shape":[-1],"data_offsets":[0,4]}})",
        R"({"x":{"dtype":"F32","shape":[1],"data_offsets":[0,4]},"y":{"dtype":"F32","shape":[1],"data_offsets":[0,4]}})",
        R"({"__metadata__":{"step":3},"x":{"dtype":"F32","shape":[1],"data_offsets":[0,4]}})",
        R"({"x":{"dtype":"F32","shape":[4294967296,4294967296],"data_offsets":[0,0]}})",
        R"({"x":"oops"})",
    };
    for (const char* h : bad_headers) {
        EXPECT_TRAJEX_ERROR(decode_tensor_file(header_of(h) + std::string(8, '\0')), ErrorKind::FormatError);
    }
    std::string huge(16, '\0');
    huge[7] = 0x7f;
    EXPECT_TRAJEX_ERROR(decode_tensor_file(huge), ErrorKind::FormatError);
}

TEST(Checkpoint, RoundTripBitExact) {
    const auto dir = oracle::scratch_dir("ckpt-roundtrip");
    const Checkpoint c = sample_checkpoint();
    save_checkpoint(c, dir / "a.safetensors");
    const Checkpoint back = load_checkpoint(dir / "a.safetensors");
    EXPECT_EQ(back, c);
    EXPECT_EQ(back.tensors.at("a.weight")(0, 0), 42.0);
    save_checkpoint(back, dir / "b.safetensors");
    EXPECT_EQ(read_file_bytes(dir / "a.safetensors"), read_file_bytes(dir / "b.safetensors"));
    // Names come back in lexicographic order.
    EXPECT_EQ(back.tensors.begin()->first, "a.weight");
}

TEST(Checkpoint, EmptyCheckpointIsValid) {
    const auto dir = oracle::scratch_dir("ckpt-empty");
    save_checkpoint(Checkpoint{}, dir / "e.safetensors");
    const Checkpoint back = load_checkpoint(dir / "e.safetensors");
    EXPECT_TRUE(back.tensors.empty());
    EXPECT_EQ(back.step, 0);
}

TEST(Checkpoint, Float32Rounding) {
    const auto dir = oracle::scratch_dir("ckpt-f32");
    Checkpoint c;
    c.tensors.emplace("w", Matrix(1, 1, 0.1));
    save_checkpoint(c, dir / "w.safetensors");
    EXPECT_EQ(load_checkpoint(dir / "w.safetensors").tensors.at("w")(0, 0), static_cast<double>(0.1f));
}

TEST(Checkpoint, MissingFileIsIoError) {
    EXPECT_TRAJEX_ERROR(load_checkpoint("/nonexistent/x.safetensors"), ErrorKind::IoError);
}

TEST(Lora, MergeExamples) {
    Checkpoint base;
    base.tensors.emplace("w", Matrix(2, 2));
    base.tensors.emplace("other", Matrix(1, 3, 7.0));
    base.step = 3;
    LoraAdapter ad;
    ad.entries.push_back({"w", Matrix::from_rows({{0, 1}}), Matrix::from_rows({{1}, {0}}), 1, 1.0});
    Checkpoint merged = merge_lora(base, ad);
    EXPECT_EQ(merged.tensors.at("w"), Matrix::from_rows({{0, 1}, {0, 0}}));
    EXPECT_EQ(merged.tensors.at("other"), base.tensors.at("other"));
    EXPECT_EQ(merged.step, 3);

    ad.step = 40;
    ad.entries[0].scale = 0.5;  // alpha 32 / rank 64
    merged = merge_lora(base, ad);
    EXPECT_EQ(merged.tensors.at("w"), Matrix::from_rows({{0, 0.5}, {0, 0}}));
    EXPECT_EQ(merged.step, 40);

    ad.entries[0].a = Matrix(1, 2);
    ad.entries[0].b = Matrix(2, 1);
    EXPECT_EQ(merge_lora(base, ad).tensors, base.tensors);
}

TEST(Lora, MergeErrors) {
    Checkpoint base;
    base.tensors.emplace("w", Matrix(2, 2));
    LoraAdapter ad;
    ad.entries.push_back({"missing", Matrix(1, 2), Matrix(2, 1), 1, 1.0});
    EXPECT_TRAJEX_ERROR(merge_lora(base, ad), ErrorKind::MissingTarget);
    ad.entries[0] = {"w", Matrix(1, 3), Matrix(2, 1), 1, 1.0};
    EXPECT_TRAJEX_ERROR(merge_lora(base, ad), ErrorKind::ShapeMismatch);
}

TEST(Lora, AdapterFileRoundTripAndRankBound) {
    const auto dir = oracle::scratch_dir("lora-file");
    oracle::Gen g(4);
    LoraAdapter ad;
    ad.step = 20;
    ad.entries.push_back({"w", g.matrix(3, 12), g.matrix(10, 3), 3, 2.0});
    save_lora_adapter(ad, dir / "ad.safetensors");
    const LoraAdapter back = load_lora_adapter(dir / "ad.safetensors");
    ASSERT_EQ(back.entries.size(), 1u);
    EXPECT_EQ(back.entries[0].rank, 3u);
    EXPECT_EQ(back.entries[0].scale, 2.0);
    EXPECT_EQ(back.step, 20);

    Checkpoint base;
    base.tensors.emplace("w", g.matrix(10, 12));
    const Matrix delta = merge_lora(base, back).tensors.at("w") - base.tensors.at("w");
    const auto s = oracle::gram_singular_values(delta);
    for (std::size_t i = 3; i < s.size(); ++i) EXPECT_LE(s[i], 1e-6 * s[0]);
}

TEST(Manifest, StepsAndErrors) {
    const auto dir = oracle::scratch_dir("manifest");
    auto write = [&](const std::string& text) {
        write_file_bytes(dir / "m.json", text);
        return dir / "m.json";
    };
    const auto ok = load_manifest(write(R"({"base":null,"checkpoints":[{"step":10,"path":"a"},{"step":20,"path":"b"},{"step":30,"path":"c"}],"lora":null})"));
    ASSERT_EQ(ok.entries.size(), 3u);
    EXPECT_EQ(ok.entries[2].step, 30);
    EXPECT_FALSE(ok.base_path);
    EXPECT_TRAJEX_ERROR(load_manifest(write(R"({"base":null,"checkpoints":[{"step":10,"path":"a"},{"step":10,"path":"b"}]})")),
                        ErrorKind::NonMonotonicSteps);
    EXPECT_TRAJEX_ERROR(load_manifest(write(R"({"checkpoints":[]})")), ErrorKind::FormatError);
    EXPECT_TRAJEX_ERROR(load_manifest(write("{")), ErrorKind::FormatError);
    EXPECT_TRAJEX_ERROR(load_manifest(write(R"({"base":"b","checkpoints":[{"step":1,"path":"a"}],"lora":["x","y"]})")),
                        ErrorKind::FormatError);
    // Missing files only fail when the trajectory is read.
    const auto m = load_manifest(write(R"({"base":null,"checkpoints":[{"step":1,"path":"nope.safetensors"}]})"));
    EXPECT_TRAJEX_ERROR(read_trajectory(m), ErrorKind::IoError);
}

TEST(Trajectory, ReadsInStepOrderAndChecksSchema) {
    const auto dir = oracle::scratch_dir("trajectory");
    TrajectoryManifest man;
    man.root = dir;
    man.base_path = "base.safetensors";
    save_checkpoint(sample_checkpoint(0), dir / "base.safetensors");
    for (int i = 1; i <= 15; ++i) {
        Checkpoint c = sample_checkpoint(i * 10);
        c.tensors.at("a.weight")(0, 0) = i;
        const std::string name = "c" + std::to_string(i) + ".safetensors";
        save_checkpoint(c, dir / name);
        man.entries.push_back({i * 10, name});
    }
    save_manifest(man, dir / "manifest.json");
    const Trajectory t = read_trajectory(dir / "manifest.json");
    ASSERT_EQ(t.count(), 15u);
    for (std::size_t i = 1; i <= 15; ++i) {
        EXPECT_EQ(t.at(i).step, static_cast<std::int64_t>(i * 10));
        EXPECT_EQ(t.at(i).tensors.at("a.weight")(0, 0), static_cast<double>(i));
    }

    Checkpoint drift = sample_checkpoint(160);
    drift.tensors.erase("b.weight");
    drift.tensors.emplace("c.weight", Matrix(1, 1));
    save_checkpoint(drift, dir / "drift.safetensors");
    man.entries.push_back({160, "drift.safetensors"});
    EXPECT_TRAJEX_ERROR(read_trajectory(man), ErrorKind::SchemaMismatch);
}

TEST(Trajectory, LoraManifestMergesAdapters) {
    const auto dir = oracle::scratch_dir("lora-manifest");
    oracle::Gen g(12);
    Checkpoint base;
    base.tensors.emplace("w", g.matrix(4, 5));
    save_checkpoint(base, dir / "base.safetensors");
    TrajectoryManifest man;
    man.root = dir;
    man.base_path = "base.safetensors";
    man.lora_paths.emplace();
    std::vector<LoraAdapter> ads;
    for (int i = 1; i <= 3; ++i) {
        LoraAdapter ad;
        ad.entries.push_back({"w", g.matrix(2, 5), g.matrix(4, 2), 2, 1.0});
        const std::string name = "ad" + std::to_string(i) + ".safetensors";
        save_lora_adapter(ad, dir / name);
        ads.push_back(load_lora_adapter(dir / name));
        man.entries.push_back({i * 10, ""});
        man.lora_paths->push_back(name);
    }
    save_manifest(man, dir / "manifest.json");
    const Trajectory t = read_trajectory(dir / "manifest.json");
    const Checkpoint b = load_checkpoint(dir / "base.safetensors");
    for (std::size_t i = 0; i < 3; ++i) {
        Checkpoint expect = merge_lora(b, ads[i]);
        EXPECT_EQ(t.at(i + 1).tensors, expect.tensors);
        EXPECT_EQ(t.at(i + 1).step, static_cast<std::int64_t>((i + 1) * 10));
    }
}
