// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <unistd.h>

#include "moct/checkpoint.hpp"
#include "moct/model.hpp"
#include "test_util.hpp"

using namespace moct;

namespace {

std::string slurp(const std::filesystem::path& p) {
    std::ifstream in(p, std::ios::binary);
    return std::string((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
}

struct TempDir {
    std::filesystem::path path;
    TempDir() {
        path = std::filesystem::temp_directory_path() / ("moct_test_" + std::to_string(::getpid()) + "_" +
                                                          std::to_string(counter()++));
        std::filesystem::create_directories(path);
    }
    ~TempDir() { std::filesystem::remove_all(path); }
    static int& counter() {
        static int c = 0;
        return c;
    }
};

}  // namespace

TEST_CASE("checkpoint save/load/save is byte-identical") {
    TempDir dir;
    ModelConfig cfg;
    cfg.n_layers = 1;
    cfg.hidden = 8;
    cfg.n_heads = 2;
    cfg.vocab = 16;
    cfg.seq_len = 8;
    ParamStore p = init_dense<float>(cfg, 5);
    p.set_frozen("pos_embed", true);

    const auto f1 = dir.path / "a.moct";
    save_checkpoint(f1, p, cfg);
    Checkpoint ck = load_checkpoint(f1);
    CHECK(ck.config.hidden == cfg.hidden);
    CHECK(ck.params.store_hash() == p.store_hash());
    CHECK(ck.params.entry("pos_embed").frozen);

    const auto f2 = dir.path / "b.moct";
    save_checkpoint(f2, ck.params, ck.config);
    CHECK(slurp(f1) == slurp(f2));
}

TEST_CASE("checkpoint round-trips a MoE store with fusion logits") {
    TempDir dir;
    ModelConfig dense_cfg;
    dense_cfg.n_layers = 1;
    dense_cfg.hidden = 8;
    dense_cfg.n_heads = 2;
    dense_cfg.vocab = 16;
    dense_cfg.seq_len = 8;
    ParamStore dense = init_dense<float>(dense_cfg, 6);
    ModelConfig moe_cfg = dense_cfg;
    moe_cfg.n_experts = 2;
    moe_cfg.fusion_mode = FusionMode::kLearnable;
    ParamStore moe = upcycle(dense, moe_cfg, 7);

    const auto f = dir.path / "moe.moct";
    save_checkpoint(f, moe, moe_cfg);
    Checkpoint ck = load_checkpoint(f);
    CHECK(ck.config.n_experts == 2);
    CHECK(ck.config.fusion_mode == FusionMode::kLearnable);
    CHECK(ck.params.store_hash() == moe.store_hash());
    CHECK(store_is_moe(ck.params));
}

TEST_CASE("checkpoint loader rejects bad magic and truncation") {
    TempDir dir;
    const auto f = dir.path / "bad.moct";
    {
        std::ofstream out(f, std::ios::binary);
        out << "NOPE then some garbage bytes";
    }
    CHECK_THROWS_WITH_AS(load_checkpoint(f), doctest::Contains("magic"), CheckpointError);

    ModelConfig cfg;
    cfg.n_layers = 1;
    cfg.hidden = 8;
    cfg.n_heads = 2;
    cfg.vocab = 16;
    cfg.seq_len = 8;
    ParamStore p = init_dense<float>(cfg, 5);
    const auto good = dir.path / "good.moct";
    save_checkpoint(good, p, cfg);
    const std::string full = slurp(good);
    const auto cut = dir.path / "cut.moct";
    {
        std::ofstream out(cut, std::ios::binary);
        out.write(full.data(), static_cast<std::streamsize>(full.size() - 7));
    }
    CHECK_THROWS_AS(load_checkpoint(cut), CheckpointError);

    CHECK_THROWS_AS(load_checkpoint(dir.path / "missing.moct"), CheckpointError);
}

TEST_CASE("file_content_hash is stable and content-sensitive") {
    TempDir dir;
    const auto f = dir.path / "x";
    {
        std::ofstream out(f, std::ios::binary);
        out << "hello";
    }
    const std::string h1 = file_content_hash(f);
    CHECK(h1 == file_content_hash(f));
    CHECK(h1.size() == 16);
    {
        std::ofstream out(f, std::ios::binary);
        out << "hellp";
    }
    CHECK(h1 != file_content_hash(f));
}
