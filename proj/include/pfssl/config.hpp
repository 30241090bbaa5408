#pragma once

// Experiment configuration: one JSON document, every key validated, unknown
// keys rejected. Errors are ConfigError naming the dotted field path.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "pfssl/data.hpp"
#include "pfssl/federation.hpp"
#include "pfssl/nn.hpp"
#include "pfssl/protocol.hpp"
#include "pfssl/uncertainty.hpp"

namespace pfssl {

struct DatasetConfig {
    std::string kind = "synthetic";  // synthetic | idx
    // synthetic
    std::size_t classes = 4;
    std::size_t per_class = 250;
    double spread = 0.35;
    std::size_t feature_dim = 2;
    // idx
    std::string images;
    std::string labels;
    std::optional<std::size_t> class_count;
    std::optional<std::size_t> limit;  // keep the first `limit` rows

    friend bool operator==(const DatasetConfig&, const DatasetConfig&) = default;
};

struct ModelConfig {
    std::vector<std::size_t> hidden{32};
    double dropout = 0.5;
    Activation activation = Activation::relu;

    friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

struct ExperimentConfig {
    std::string method = "um_pfssl";  // um_pfssl | fedavg_semi | local_only | en_only | ta_only
    CorrMode ablation = CorrMode::combined;
    std::uint64_t seed = 0;
    std::size_t repeats = 1;
    std::string output_dir = "out";
    std::size_t threads = 1;

    DatasetConfig dataset;
    PartitionSpec partition;  // seed is derived per repeat, not configured
    ModelConfig model;
    TrainingConfig training;
    RoundConfig protocol;  // clients, seed, threads and local_epochs mirror the fields above

    void validate() const;

    Method method_kind() const;
    CorrMode corr_mode() const;

    // Mirrors the shared fields into `protocol` and `partition`.
    void sync();

    std::shared_ptr<const NetSpec> net_spec(std::size_t input_dim, std::size_t class_count) const;

    friend bool operator==(const ExperimentConfig&, const ExperimentConfig&) = default;
};

ExperimentConfig parse_config_text(std::string_view text);
ExperimentConfig load_config(const std::filesystem::path& path);
std::string serialize_config(const ExperimentConfig& cfg);

}  // namespace pfssl
