#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <string>

#include "pfssl/config.hpp"
#include "pfssl/errors.hpp"

using namespace pfssl;

namespace {

std::string field_of(const std::string& text) {
    try {
        parse_config_text(text);
    } catch (const ConfigError& e) {
        return e.field();
    }
    return "";
}

}  // namespace

TEST_SUITE("config") {

TEST_CASE("an empty document yields the defaults") {
    const auto cfg = parse_config_text("{}");
    ExperimentConfig def;
    def.sync();
    CHECK(cfg == def);
    CHECK(cfg.method == "um_pfssl");
    CHECK(cfg.protocol.clients == 100);
    CHECK(cfg.protocol.sample_rate == Rational(1, 10));
    CHECK(cfg.protocol.helpers == 5);
    CHECK(cfg.protocol.replacements == 2);
    CHECK(cfg.protocol.search_rounds == 30);
    CHECK(cfg.protocol.update_period == 10);
    CHECK(cfg.protocol.rounds == 200);
    CHECK(cfg.protocol.mc_samples == 10);
    CHECK(cfg.training.local_epochs == 5);
    CHECK(cfg.training.warmup_epochs == 5);
    CHECK(cfg.training.learning_rate == 1e-4);
    CHECK(cfg.training.momentum == 0.9);
    CHECK(cfg.training.batch_size == 64);
    CHECK(cfg.partition.alpha == 0.5);
}

TEST_CASE("invalid documents name the offending field") {
    CHECK(field_of(R"({"method": ""})") == "method");
    CHECK(field_of(R"({"method": "fedprox"})") == "method");
    CHECK(field_of(R"({"protocol": {"helpers": 3, "replacements": 3}})") == "protocol.replacements");
    CHECK(field_of(R"({"protocol": {"sample_rate": 0}})") == "protocol.sample_rate");
    CHECK(field_of(R"({"protocol": {"sample_rate": 1.5}})") == "protocol.sample_rate");
    CHECK(field_of(R"({"protocol": {"gossip": 1}})") == "protocol.gossip");
    CHECK(field_of(R"({"colour": "blue"})") == "colour");
    CHECK(field_of(R"({"partition": {"alpha": -1}})") == "partition.alpha");
    CHECK(field_of(R"({"partition": {"clients": 1}})") == "partition.clients");
    CHECK(field_of(R"({"model": {"dropout": 1.0}})") == "model.dropout");
    CHECK(field_of(R"({"model": {"activation": "gelu"}})") == "model.activation");
    CHECK(field_of(R"({"training": {"batch_size": 0}})") == "training.batch_size");
    CHECK(field_of(R"({"training": {"objective": "mixed"}})") == "training.objective");
    CHECK(field_of(R"({"dataset": {"kind": "idx"}})") == "dataset.images");
    CHECK(field_of(R"({"dataset": {"kind": "csv"}})") == "dataset.kind");
    CHECK(field_of(R"({"seed": -3})") == "seed");
    CHECK(field_of(R"({"repeats": "two"})") == "repeats");
    CHECK(field_of(R"({"threads": 0})") == "threads");
    CHECK(field_of("{not json") == "<root>");
    CHECK(field_of(R"({"method": "en_only", "ablation": "ta"})") == "ablation");
}

TEST_CASE("method aliases select the Corr ablation") {
    CHECK(parse_config_text(R"({"method": "en_only"})").corr_mode() == CorrMode::entropy_only);
    CHECK(parse_config_text(R"({"method": "ta_only"})").method_kind() == Method::um_pfssl);
    CHECK(parse_config_text(R"({"ablation": "random"})").corr_mode() == CorrMode::random);
    CHECK(parse_config_text(R"({"method": "local_only"})").method_kind() == Method::local_only);
}

TEST_CASE("shared fields are mirrored into the protocol") {
    const auto cfg = parse_config_text(
        R"({"seed": 9, "threads": 3, "partition": {"clients": 12}, "training": {"local_epochs": 2}})");
    CHECK(cfg.protocol.clients == 12);
    CHECK(cfg.protocol.seed == 9);
    CHECK(cfg.protocol.threads == 3);
    CHECK(cfg.protocol.local_epochs == 2);
}

TEST_CASE("serialization round trips") {
    const auto cfg = parse_config_text(R"({
        "method": "fedavg_semi", "seed": 4, "repeats": 3, "output_dir": "x",
        "dataset": {"kind": "synthetic", "classes": 5, "per_class": 20, "spread": 0.2, "feature_dim": 3},
        "partition": {"clients": 6, "alpha": 1.5, "label_split_alpha": 2},
        "model": {"hidden": [7, 5], "dropout": 0.25, "activation": "tanh"},
        "training": {"learning_rate": 0.01, "momentum": 0.5, "batch_size": 8, "local_epochs": 1,
                     "warmup_epochs": 0, "objective": "weighted"},
        "protocol": {"sample_rate": 0.25, "helpers": 4, "replacements": 1, "search_rounds": 3,
                     "update_period": 2, "rounds": 7, "mc_samples": 4, "restrict_to_sampled": true,
                     "uncertainty_cap": 9}})");
    CHECK(parse_config_text(serialize_config(cfg)) == cfg);
    CHECK(cfg.protocol.sample_rate == Rational(1, 4));
    CHECK(cfg.net_spec(3, 5)->layer_widths == std::vector<std::size_t>{3, 7, 5, 5});
}

TEST_CASE("idx paths resolve against the config file") {
    const auto dir = std::filesystem::temp_directory_path() / "pfssl_config_test";
    std::filesystem::create_directories(dir);
    const auto path = dir / "c.json";
    std::ofstream(path) << R"({"dataset": {"kind": "idx", "images": "a.idx", "labels": "/abs/b.idx"}})";
    const auto cfg = load_config(path);
    CHECK(cfg.dataset.images == (dir / "a.idx").string());
    CHECK(cfg.dataset.labels == "/abs/b.idx");
    CHECK_THROWS_AS(load_config(dir / "missing.json"), ConfigError);
}

}
