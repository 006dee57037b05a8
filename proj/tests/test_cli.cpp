// SPDX-License-Identifier: Apache-2.0
//
// Drives the installed binary end to end. MOCT_BIN is injected by CMake.
#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <string>
#include <sys/wait.h>
#include <unistd.h>

#ifndef MOCT_BIN
#error "MOCT_BIN must point to the moct executable"
#endif

namespace fs = std::filesystem;

namespace {

struct CliDir {
    fs::path path;
    CliDir() {
        path = fs::temp_directory_path() / ("moct_cli_" + std::to_string(::getpid()) + "_" + std::to_string(next()));
        fs::create_directories(path);
    }
    ~CliDir() { fs::remove_all(path); }
    static int next() {
        static int c = 0;
        return c++;
    }
};

int run(const std::string& args) {
    const std::string cmd = std::string(MOCT_BIN) + " " + args + " >/dev/null 2>&1";
    const int rc = std::system(cmd.c_str());
    return WEXITSTATUS(rc);
}

std::string run_capture(const std::string& args, const fs::path& tmp) {
    const fs::path out = tmp / "stdout.txt";
    const std::string cmd = std::string(MOCT_BIN) + " " + args + " > " + out.string() + " 2>&1";
    std::system(cmd.c_str());
    std::ifstream in(out);
    return std::string((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
}

void write_file(const fs::path& p, const std::string& body) {
    std::ofstream f(p);
    f << body;
}

const char* kTinyConfig = R"({
  "model": {"n_layers": 1, "hidden": 16, "n_heads": 2, "vocab": 64, "seq_len": 32, "ffn_mult": 2},
  "train": {"steps": 5, "batch": 2, "seq": 32, "lr": 0.001, "warmup_frac": 0.0, "seed": 0}
})";

// Shared tiny pretrained checkpoint for the downstream command tests.
const fs::path& base_run() {
    static CliDir dir;
    static bool built = false;
    if (!built) {
        write_file(dir.path / "cfg.json", kTinyConfig);
        REQUIRE(run("pretrain --config " + (dir.path / "cfg.json").string() + " --out-dir " +
                    (dir.path / "pre").string()) == 0);
        built = true;
    }
    return dir.path;
}

}  // namespace

TEST_CASE("cli: missing config file exits 2") {
    CHECK(run("pretrain --config /nonexistent/cfg.json --out-dir /tmp/moct_nope") == 2);
}

TEST_CASE("cli: bad flags exit 2") {
    CHECK(run("pretrain --nope") == 2);
    CHECK(run("frobnicate") == 2);
}

TEST_CASE("cli: pretrain writes checkpoint, log and manifest") {
    const fs::path& dir = base_run();
    CHECK(fs::exists(dir / "pre" / "checkpoint.moct"));
    CHECK(fs::exists(dir / "pre" / "train_log.csv"));
    CHECK(fs::exists(dir / "pre" / "manifest.json"));
}

TEST_CASE("cli: steps=0 checkpoint equals initialization determinism") {
    CliDir dir;
    write_file(dir.path / "cfg.json", kTinyConfig);
    REQUIRE(run("pretrain --config " + (dir.path / "cfg.json").string() + " --steps 0 --out-dir " +
                (dir.path / "a").string()) == 0);
    REQUIRE(run("pretrain --config " + (dir.path / "cfg.json").string() + " --steps 0 --out-dir " +
                (dir.path / "b").string()) == 0);
    std::ifstream fa(dir.path / "a" / "checkpoint.moct", std::ios::binary);
    std::ifstream fb(dir.path / "b" / "checkpoint.moct", std::ios::binary);
    const std::string ba((std::istreambuf_iterator<char>(fa)), std::istreambuf_iterator<char>());
    const std::string bb((std::istreambuf_iterator<char>(fb)), std::istreambuf_iterator<char>());
    CHECK(ba == bb);
}

TEST_CASE("cli: upcycle validates expert counts and kind") {
    const fs::path& dir = base_run();
    const std::string in = (dir / "pre" / "checkpoint.moct").string();
    const std::string out = (dir / "moe.moct").string();
    CHECK(run("upcycle --in " + in + " --experts 2 --top-k 3 --out " + out) == 2);  // top_k > experts
    CHECK(run("upcycle --in " + in + " --experts 2 --top-k 1 --out " + out) == 0);
    // already MoE -> kind mismatch
    CHECK(run("upcycle --in " + out + " --experts 2 --top-k 1 --out " + (dir / "x.moct").string()) == 4);
}

TEST_CASE("cli: upcycle prints the parameter table") {
    const fs::path& dir = base_run();
    CliDir tmp;
    const std::string text = run_capture(
        "upcycle --in " + (dir / "pre" / "checkpoint.moct").string() + " --experts 2 --top-k 1 --out " +
            (dir / "moe_table.moct").string(),
        tmp.path);
    CHECK(text.find("total-params") != std::string::npos);
    CHECK(text.find("act-params") != std::string::npos);
    CHECK(text.find("moe") != std::string::npos);
}

TEST_CASE("cli: eval twice produces identical CSV bytes") {
    const fs::path& dir = base_run();
    CliDir tmp;
    const std::string in = (dir / "pre" / "checkpoint.moct").string();
    REQUIRE(run("eval --in " + in + " --tokens 640 --out " + (tmp.path / "a.csv").string()) == 0);
    REQUIRE(run("eval --in " + in + " --tokens 640 --out " + (tmp.path / "b.csv").string()) == 0);
    std::ifstream fa(tmp.path / "a.csv"), fb(tmp.path / "b.csv");
    const std::string a((std::istreambuf_iterator<char>(fa)), std::istreambuf_iterator<char>());
    const std::string b((std::istreambuf_iterator<char>(fb)), std::istreambuf_iterator<char>());
    CHECK(a == b);
    CHECK(a.find("language,group,floor_ppl,ppl") == 0);
}

TEST_CASE("cli: ct rejects expert strategies on dense checkpoints with exit 4") {
    const fs::path& dir = base_run();
    CliDir tmp;
    write_file(tmp.path / "ct.json", R"({"train": {"steps": 2, "batch": 2, "seq": 32, "lr": 0.001, "seed": 0,
        "eval_tokens": 640}, "data_ratio": "1:10"})");
    const std::string in = (dir / "pre" / "checkpoint.moct").string();
    CHECK(run("ct --in " + in + " --config " + (tmp.path / "ct.json").string() + " --strategy experts --out-dir " +
              (tmp.path / "ct_out").string()) == 4);
}

TEST_CASE("cli: ct rejects unknown strategies with exit 2 listing valid names") {
    const fs::path& dir = base_run();
    CliDir tmp;
    write_file(tmp.path / "ct.json", R"({"train": {"steps": 2, "batch": 2, "seq": 32, "lr": 0.001, "seed": 0,
        "eval_tokens": 640}, "data_ratio": "1:10"})");
    const fs::path errfile = tmp.path / "err.txt";
    const std::string cmd = std::string(MOCT_BIN) + " ct --in " + (dir / "pre" / "checkpoint.moct").string() +
                            " --config " + (tmp.path / "ct.json").string() + " --strategy bogus --out-dir " +
                            (tmp.path / "o").string() + " 2> " + errfile.string() + " >/dev/null";
    const int rc = WEXITSTATUS(std::system(cmd.c_str()));
    CHECK(rc == 2);
    std::ifstream err(errfile);
    const std::string text((std::istreambuf_iterator<char>(err)), std::istreambuf_iterator<char>());
    CHECK(text.find("embedding_and_experts") != std::string::npos);
}

TEST_CASE("cli: ct on a MoE checkpoint prints an equal frozen-hash audit and exits 0") {
    const fs::path& dir = base_run();
    CliDir tmp;
    const std::string moe = (dir / "moe_ct.moct").string();
    REQUIRE(run("upcycle --in " + (dir / "pre" / "checkpoint.moct").string() + " --experts 2 --top-k 1 --out " +
                moe) == 0);
    write_file(tmp.path / "ct.json", R"({"train": {"steps": 3, "batch": 2, "seq": 32, "lr": 0.001, "seed": 0,
        "eval_tokens": 640}, "data_ratio": "1:10"})");
    const std::string text = run_capture(
        "ct --in " + moe + " --config " + (tmp.path / "ct.json").string() + " --out-dir " +
            (tmp.path / "ct_out").string(),
        tmp.path);
    CHECK(text.find("frozen-hash audit") != std::string::npos);
    CHECK(text.find("(equal)") != std::string::npos);
    CHECK(fs::exists(tmp.path / "ct_out" / "eval_before.csv"));
    CHECK(fs::exists(tmp.path / "ct_out" / "eval_after.csv"));
    CHECK(fs::exists(tmp.path / "ct_out" / "manifest.json"));
}

TEST_CASE("cli: inspect prints header and census") {
    const fs::path& dir = base_run();
    CliDir tmp;
    const std::string text = run_capture("inspect --in " + (dir / "pre" / "checkpoint.moct").string(), tmp.path);
    CHECK(text.find("kind: dense") != std::string::npos);
    CHECK(text.find("tok_embed") != std::string::npos);
    CHECK(text.find("total params") != std::string::npos);
    CHECK(text.find("\"n_layers\":1") != std::string::npos);
}

TEST_CASE("cli: MOCT_SEED overrides the configured seed") {
    CliDir dir;
    write_file(dir.path / "cfg.json", kTinyConfig);
    const std::string base_cmd = "MOCT_SEED=7 " + std::string(MOCT_BIN) + " pretrain --config " +
                                 (dir.path / "cfg.json").string() + " --steps 0 --out-dir ";
    REQUIRE(WEXITSTATUS(std::system((base_cmd + (dir.path / "s7").string() + " >/dev/null 2>&1").c_str())) == 0);
    REQUIRE(run("pretrain --config " + (dir.path / "cfg.json").string() + " --steps 0 --out-dir " +
                (dir.path / "s0").string()) == 0);
    std::ifstream fa(dir.path / "s7" / "checkpoint.moct", std::ios::binary);
    std::ifstream fb(dir.path / "s0" / "checkpoint.moct", std::ios::binary);
    const std::string a((std::istreambuf_iterator<char>(fa)), std::istreambuf_iterator<char>());
    const std::string b((std::istreambuf_iterator<char>(fb)), std::istreambuf_iterator<char>());
    CHECK(a != b);  // different init seed
}

TEST_CASE("cli: ablate + plot round trip on a tiny grid") {
    const fs::path& dir = base_run();
    CliDir tmp;
    write_file(tmp.path / "grid.json", R"({
      "axes": {"data_ratio": ["0:1", "1:1"]},
      "seeds": [0],
      "defaults": {"n_experts": 0},
      "train": {"steps": 2, "batch": 2, "seq": 32, "lr": 0.001},
      "eval_tokens": 640
    })");
    REQUIRE(run("ablate --base " + (dir / "pre" / "checkpoint.moct").string() + " --grid " +
                (tmp.path / "grid.json").string() + " --out-dir " + (tmp.path / "ab").string() + " --jobs 2") == 0);
    CHECK(fs::exists(tmp.path / "ab" / "results.csv"));
    CHECK(fs::exists(tmp.path / "ab" / "summary.txt"));
    REQUIRE(run("plot --results " + (tmp.path / "ab" / "results.csv").string() + " --out " +
                (tmp.path / "fig.svg").string()) == 0);
    std::ifstream svg(tmp.path / "fig.svg");
    const std::string s((std::istreambuf_iterator<char>(svg)), std::istreambuf_iterator<char>());
    CHECK(s.find("<svg") == 0);
}

TEST_CASE("cli: unreadable checkpoint exits 2") {
    CHECK(run("inspect --in /nonexistent.moct") == 2);
    CHECK(run("eval --in /nonexistent.moct --tokens 640") == 2);
}
