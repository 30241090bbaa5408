#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <string>
#include <sys/wait.h>

namespace fs = std::filesystem;

namespace {

int run_cli(const std::string& args) {
    const std::string cmd = std::string(PFSSL_CLI) + " " + args + " > /dev/null 2>&1";
    const int status = std::system(cmd.c_str());
    return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

fs::path fresh_dir(const std::string& name) {
    const auto dir = fs::temp_directory_path() / "pfssl_cli_test" / name;
    fs::remove_all(dir);
    fs::create_directories(dir.parent_path());
    return dir;
}

fs::path write_config(const std::string& name, const std::string& text) {
    const auto path = fs::temp_directory_path() / "pfssl_cli_test" / name;
    fs::create_directories(path.parent_path());
    std::ofstream(path) << text;
    return path;
}

const char* kTiny = R"({
  "seed": 2,
  "dataset": {"kind": "synthetic", "classes": 3, "per_class": 30},
  "partition": {"clients": 4, "alpha": 1.0},
  "model": {"hidden": [6]},
  "training": {"learning_rate": 0.05, "batch_size": 8, "local_epochs": 1, "warmup_epochs": 1},
  "protocol": {"sample_rate": 0.5, "helpers": 2, "replacements": 1, "search_rounds": 2, "update_period": 2,
               "rounds": 3, "mc_samples": 2}
})";

}  // namespace

TEST_SUITE("cli") {

TEST_CASE("an invalid config exits 1 and writes nothing") {
    const auto out = fresh_dir("invalid");
    const auto cfg = write_config("invalid.json", R"({"protocol": {"helpers": 2, "replacements": 2}})");
    CHECK(run_cli("run --config " + cfg.string() + " --out " + out.string()) == 1);
    CHECK_FALSE(fs::exists(out));
    CHECK(run_cli("run --config " + cfg.string() + " --out " + out.string() + " --method nope") == 1);
    CHECK(run_cli("run --out " + out.string() + " --ablation nope") == 1);
    CHECK_FALSE(fs::exists(out));
}

TEST_CASE("run writes the report set") {
    const auto out = fresh_dir("run");
    const auto cfg = write_config("tiny.json", kTiny);
    REQUIRE(run_cli("run --config " + cfg.string() + " --out " + out.string()) == 0);
    for (const char* f : {"config.json", "metrics.csv", "clients.csv", "costs.csv", "partition.csv", "events.csv",
                          "summary.csv", "invariants.txt", "repeat_summary.csv", "mean_curve.csv"}) {
        CHECK_MESSAGE(fs::exists(out / f), f);
    }
    CHECK(run_cli("report --out " + out.string()) == 0);
    CHECK(run_cli("report --out " + (out / "nothing").string()) == 3);
}

TEST_CASE("repeats get their own directories") {
    const auto out = fresh_dir("repeats");
    const auto cfg = write_config("tiny.json", kTiny);
    REQUIRE(run_cli("run --config " + cfg.string() + " --repeats 2 --method local_only --out " + out.string()) == 0);
    CHECK(fs::exists(out / "repeat_0" / "metrics.csv"));
    CHECK(fs::exists(out / "repeat_1" / "metrics.csv"));
    CHECK(fs::exists(out / "repeat_summary.csv"));
}

TEST_CASE("partition and sweep subcommands") {
    const auto cfg = write_config("tiny.json", kTiny);
    const auto part = fresh_dir("partition");
    CHECK(run_cli("partition --config " + cfg.string() + " --out " + part.string()) == 0);
    CHECK(fs::exists(part / "partition.csv"));
    const auto sweep = fresh_dir("sweep");
    CHECK(run_cli("sweep --config " + cfg.string() + " --axis nu --values 1,2 --out " + sweep.string()) == 0);
    CHECK(fs::exists(sweep / "sweep.csv"));
    CHECK(fs::exists(sweep / "nu_2" / "repeat_0" / "metrics.csv"));
    const auto bad = fresh_dir("badsweep");
    CHECK(run_cli("sweep --config " + cfg.string() + " --axis nu --values 0 --out " + bad.string()) == 1);
    CHECK_FALSE(fs::exists(bad));
    CHECK(run_cli("sweep --config " + cfg.string() + " --axis gamma --values 1 --out " + bad.string()) != 0);
    CHECK(run_cli("dance") != 0);
}

}
