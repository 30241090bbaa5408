#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <span>
#include <vector>

#include "pfssl/matrix.hpp"

namespace pfssl {

struct Dataset {
    Matrix features;
    std::vector<std::size_t> labels;
    std::size_t class_count = 0;

    std::size_t size() const noexcept { return labels.size(); }
    bool empty() const noexcept { return labels.empty(); }

    // Throws unless every label is below class_count and every row is finite.
    void validate() const;

    Dataset subset(std::span<const std::size_t> rows) const;

    friend bool operator==(const Dataset&, const Dataset&) = default;
};

struct PartitionSpec {
    std::size_t client_count = 100;
    double alpha = 0.5;
    double label_split_alpha = 0.5;
    std::uint64_t seed = 0;

    void validate() const;

    friend bool operator==(const PartitionSpec&, const PartitionSpec&) = default;
};

// Only the metrics module can mint this key, so training code has no way to
// reach the ground truth of unlabeled samples.
class HiddenTruthKey {
    HiddenTruthKey() = default;
    friend class TruthReader;
};

class ClientDataset {
public:
    struct SourceRows {
        std::vector<std::size_t> labeled;
        std::vector<std::size_t> unlabeled;
        std::vector<std::size_t> validation;
        std::vector<std::size_t> test;
    };

    ClientDataset(std::size_t id, Dataset labeled, Matrix unlabeled, std::vector<std::size_t> hidden_labels,
                  Dataset validation, Dataset test, SourceRows rows = {});

    std::size_t id() const noexcept { return id_; }
    std::size_t class_count() const noexcept { return labeled_.class_count; }
    const Dataset& labeled() const noexcept { return labeled_; }
    const Matrix& unlabeled() const noexcept { return unlabeled_; }
    const Dataset& validation() const noexcept { return validation_; }
    const Dataset& test() const noexcept { return test_; }
    std::size_t labeled_count() const noexcept { return labeled_.size(); }
    std::size_t unlabeled_count() const noexcept { return unlabeled_.rows; }
    std::size_t train_count() const noexcept { return labeled_count() + unlabeled_count(); }

    // |labeled| / (|labeled| + |unlabeled|); zero for an empty training set.
    double labeled_ratio() const noexcept { return labeled_ratio_; }

    // Row indices into the source dataset, for partition audits.
    const SourceRows& source_rows() const noexcept { return rows_; }

    std::span<const std::size_t> hidden_labels(HiddenTruthKey) const noexcept { return hidden_; }

private:
    std::size_t id_;
    Dataset labeled_;
    Matrix unlabeled_;
    std::vector<std::size_t> hidden_;
    Dataset validation_;
    Dataset test_;
    SourceRows rows_;
    double labeled_ratio_;
};

// A client's share of the source dataset before the labeled/unlabeled split.
struct ClientShard {
    std::size_t id = 0;
    std::vector<std::size_t> train;
    std::vector<std::size_t> validation;
    std::vector<std::size_t> test;
    bool topped_up = false;
};

// Isotropic Gaussian blobs, one mean per class on the integer lattice
// {0..b-1}^d (b the smallest base with b^d >= class_count).
Dataset generate_synthetic(std::size_t class_count, std::size_t per_class, double cluster_spread, std::uint64_t seed,
                           std::size_t feature_dim = 2);

// Integer counts proportional to `weights` summing to `total`; leftovers go to
// the largest fractional remainders, ties to the lowest index.
std::vector<std::size_t> largest_remainder(std::size_t total, std::span<const double> weights);

// 70/10/20 train/validation/test counts for n rows (largest remainder).
std::array<std::size_t, 3> split_train_val_test(std::size_t n);

// Allocates each class c by the given proportions (one length-K row per class).
// No degenerate-client handling; every row index is assigned exactly once.
std::vector<ClientShard> allocate_by_proportions(const Dataset& data,
                                                 const std::vector<std::vector<double>>& class_proportions,
                                                 std::uint64_t shuffle_seed);

std::vector<ClientShard> dirichlet_partition(const Dataset& data, const PartitionSpec& spec);

ClientDataset split_labeled_with(const Dataset& data, const ClientShard& shard, std::array<double, 2> proportions,
                                 std::uint64_t seed);
ClientDataset split_labeled(const Dataset& data, const ClientShard& shard, double label_split_alpha,
                            std::uint64_t seed);

// dirichlet_partition followed by split_labeled on every shard.
std::vector<ClientDataset> build_clients(const Dataset& data, const PartitionSpec& spec);

// IDX ubyte files: images 0x00000803 (count, rows, cols), labels 0x00000801.
Dataset load_idx(const std::filesystem::path& images, const std::filesystem::path& labels,
                 std::optional<std::size_t> class_count = std::nullopt);

// Features are quantized as round(255 * x) after clamping to [0, 1].
void write_idx(const Dataset& data, std::size_t rows, std::size_t cols, const std::filesystem::path& images,
               const std::filesystem::path& labels);

// client,class_0..class_{C-1},labeled,unlabeled,validation,test,labeled_ratio
// Class counts cover the client's whole training share, read from `source`.
void write_partition_csv(std::ostream& out, const Dataset& source, std::span<const ClientDataset> clients);

}  // namespace pfssl
