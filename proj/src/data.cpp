#include "pfssl/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <ostream>
#include <string>

#include "pfssl/errors.hpp"
#include "pfssl/rng.hpp"

namespace pfssl {

void Dataset::validate() const {
    if (labels.empty()) throw DomainError("dataset is empty");
    if (features.rows != labels.size()) throw ConsistencyError("feature rows and label count differ");
    if (class_count < 2) throw DomainError("dataset needs at least two classes");
    for (std::size_t y : labels) {
        if (y >= class_count) throw DomainError("label " + std::to_string(y) + " exceeds class count");
    }
    for (double v : features.values) {
        if (!std::isfinite(v)) throw NumericError("dataset contains non-finite features");
    }
}

Dataset Dataset::subset(std::span<const std::size_t> rows) const {
    Dataset out;
    out.class_count = class_count;
    out.features.cols = features.cols;
    out.features.values.reserve(rows.size() * features.cols);
    out.labels.reserve(rows.size());
    for (std::size_t r : rows) {
        out.features.append_row(features.row(r));
        out.labels.push_back(labels[r]);
    }
    return out;
}

void PartitionSpec::validate() const {
    if (client_count < 2) throw DomainError("partition needs at least two clients");
    if (!(alpha > 0.0) || !std::isfinite(alpha)) throw DomainError("Dirichlet alpha must be positive");
    if (!(label_split_alpha > 0.0) || !std::isfinite(label_split_alpha)) {
        throw DomainError("label split alpha must be positive");
    }
}

ClientDataset::ClientDataset(std::size_t id, Dataset labeled, Matrix unlabeled, std::vector<std::size_t> hidden_labels,
                             Dataset validation, Dataset test, SourceRows rows)
    : id_(id),
      labeled_(std::move(labeled)),
      unlabeled_(std::move(unlabeled)),
      hidden_(std::move(hidden_labels)),
      validation_(std::move(validation)),
      test_(std::move(test)),
      rows_(std::move(rows)) {
    if (hidden_.size() != unlabeled_.rows) throw ConsistencyError("hidden labels must cover every unlabeled row");
    if (labeled_.features.rows != labeled_.labels.size()) throw ConsistencyError("labeled rows and labels differ");
    const std::size_t total = labeled_.size() + unlabeled_.rows;
    labeled_ratio_ = total == 0 ? 0.0 : static_cast<double>(labeled_.size()) / static_cast<double>(total);
}

Dataset generate_synthetic(std::size_t class_count, std::size_t per_class, double cluster_spread, std::uint64_t seed,
                           std::size_t feature_dim) {
    if (class_count < 2) throw DomainError("synthetic data needs at least two classes");
    if (per_class < 1) throw DomainError("synthetic data needs at least one sample per class");
    if (feature_dim < 1) throw DomainError("synthetic data needs at least one feature");
    if (!(cluster_spread >= 0.0)) throw DomainError("cluster spread must be non-negative");

    std::size_t base = 1;
    auto capacity = [&](std::size_t b) {
        std::size_t cap = 1;
        for (std::size_t j = 0; j < feature_dim && cap < class_count; ++j) cap *= b;
        return cap;
    };
    while (capacity(base) < class_count) ++base;

    Dataset out;
    out.class_count = class_count;
    out.features = Matrix(class_count * per_class, feature_dim);
    out.labels.reserve(class_count * per_class);
    Rng rng(seed);
    std::vector<double> mean(feature_dim);
    std::size_t row = 0;
    for (std::size_t c = 0; c < class_count; ++c) {
        std::size_t digits = c;
        for (std::size_t j = 0; j < feature_dim; ++j) {
            mean[j] = static_cast<double>(digits % base);
            digits /= base;
        }
        for (std::size_t i = 0; i < per_class; ++i, ++row) {
            auto x = out.features.row(row);
            for (std::size_t j = 0; j < feature_dim; ++j) x[j] = mean[j] + cluster_spread * rng.normal();
            out.labels.push_back(c);
        }
    }
    return out;
}

std::vector<std::size_t> largest_remainder(std::size_t total, std::span<const double> weights) {
    std::vector<std::size_t> counts(weights.size(), 0);
    if (weights.empty()) return counts;
    double sum = 0.0;
    for (double w : weights) {
        if (!(w >= 0.0)) throw DomainError("allocation weights must be non-negative");
        sum += w;
    }
    if (!(sum > 0.0)) throw DomainError("allocation weights sum to zero");
    std::vector<double> remainder(weights.size());
    std::size_t assigned = 0;
    for (std::size_t i = 0; i < weights.size(); ++i) {
        const double exact = static_cast<double>(total) * (weights[i] / sum);
        const double whole = std::floor(exact);
        counts[i] = static_cast<std::size_t>(whole);
        remainder[i] = exact - whole;
        assigned += counts[i];
    }
    // floating error can push the floors past the total; trim from the smallest remainders
    while (assigned > total) {
        std::size_t worst = weights.size();
        for (std::size_t i = 0; i < weights.size(); ++i) {
            if (counts[i] > 0 && (worst == weights.size() || remainder[i] < remainder[worst])) worst = i;
        }
        --counts[worst];
        remainder[worst] += 1.0;
        --assigned;
    }
    std::vector<std::size_t> order(weights.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return remainder[a] > remainder[b]; });
    for (std::size_t i = 0; assigned < total; i = (i + 1) % order.size()) {
        ++counts[order[i]];
        ++assigned;
    }
    return counts;
}

std::array<std::size_t, 3> split_train_val_test(std::size_t n) {
    // 7/10, 1/10, 2/10 in exact integer arithmetic before the remainder pass
    std::array<std::size_t, 3> counts{n * 7 / 10, n * 1 / 10, n * 2 / 10};
    const std::array<std::size_t, 3> rem{n * 7 % 10, n * 1 % 10, n * 2 % 10};
    std::size_t left = n - counts[0] - counts[1] - counts[2];
    std::array<std::size_t, 3> order{0, 1, 2};
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return rem[a] > rem[b]; });
    for (std::size_t i = 0; left > 0; ++i, --left) ++counts[order[i % 3]];
    return counts;
}

namespace {

std::vector<std::vector<std::size_t>> rows_by_class(const Dataset& data) {
    std::vector<std::vector<std::size_t>> by_class(data.class_count);
    for (std::size_t i = 0; i < data.size(); ++i) by_class[data.labels[i]].push_back(i);
    for (std::size_t c = 0; c < by_class.size(); ++c) {
        if (by_class[c].empty()) throw PartitionError("class " + std::to_string(c) + " has no samples");
    }
    return by_class;
}

bool degenerate(const ClientShard& s) { return s.train.empty() || s.validation.empty() || s.test.empty(); }

// For each empty split of a degenerate client, the client holding the most
// samples of each class in that split donates one of them.
void top_up(const Dataset& data, std::vector<ClientShard>& shards) {
    const std::array<std::vector<std::size_t> ClientShard::*, 3> splits{&ClientShard::train, &ClientShard::validation,
                                                                         &ClientShard::test};
    for (auto& needy : shards) {
        for (auto member : splits) {
            if (!(needy.*member).empty()) continue;
            for (std::size_t c = 0; c < data.class_count; ++c) {
                std::size_t donor = shards.size();
                std::size_t donor_count = 0;
                for (std::size_t k = 0; k < shards.size(); ++k) {
                    const auto& rows = shards[k].*member;
                    const auto count = static_cast<std::size_t>(
                        std::count_if(rows.begin(), rows.end(), [&](std::size_t r) { return data.labels[r] == c; }));
                    if (count > donor_count) {
                        donor = k;
                        donor_count = count;
                    }
                }
                if (donor == shards.size() || donor == needy.id || donor_count < 2) continue;
                auto& from = shards[donor].*member;
                auto it = std::find_if(from.rbegin(), from.rend(), [&](std::size_t r) { return data.labels[r] == c; });
                (needy.*member).push_back(*it);
                from.erase(std::next(it).base());
                needy.topped_up = true;
            }
            if ((needy.*member).empty()) {
                throw PartitionError("client " + std::to_string(needy.id) + " could not be topped up");
            }
        }
    }
}

}  // namespace

std::vector<ClientShard> allocate_by_proportions(const Dataset& data,
                                                 const std::vector<std::vector<double>>& class_proportions,
                                                 std::uint64_t shuffle_seed) {
    if (class_proportions.size() != data.class_count) throw DomainError("need one proportion row per class");
    const std::size_t clients = class_proportions.front().size();
    for (const auto& row : class_proportions) {
        if (row.size() != clients) throw DomainError("proportion rows must share the client count");
    }
    auto by_class = rows_by_class(data);
    std::vector<ClientShard> shards(clients);
    for (std::size_t k = 0; k < clients; ++k) shards[k].id = k;

    for (std::size_t c = 0; c < data.class_count; ++c) {
        auto& rows = by_class[c];
        Rng(derive_seed(shuffle_seed, {c})).shuffle(rows);
        const auto split = split_train_val_test(rows.size());
        std::size_t cursor = 0;
        const std::array<std::vector<std::size_t> ClientShard::*, 3> members{
            &ClientShard::train, &ClientShard::validation, &ClientShard::test};
        for (std::size_t s = 0; s < 3; ++s) {
            const auto counts = largest_remainder(split[s], class_proportions[c]);
            for (std::size_t k = 0; k < clients; ++k) {
                auto& dst = shards[k].*members[s];
                dst.insert(dst.end(), rows.begin() + static_cast<std::ptrdiff_t>(cursor),
                           rows.begin() + static_cast<std::ptrdiff_t>(cursor + counts[k]));
                cursor += counts[k];
            }
        }
    }
    return shards;
}

std::vector<ClientShard> dirichlet_partition(const Dataset& data, const PartitionSpec& spec) {
    spec.validate();
    data.validate();
    constexpr std::size_t kRerolls = 10;
    std::vector<ClientShard> shards;
    for (std::size_t attempt = 0; attempt <= kRerolls; ++attempt) {
        Rng rng(derive_seed(spec.seed, {attempt, 0}));
        std::vector<std::vector<double>> proportions(data.class_count);
        for (auto& p : proportions) p = rng.dirichlet(spec.client_count, spec.alpha);
        shards = allocate_by_proportions(data, proportions, derive_seed(spec.seed, {attempt, 1}));
        if (std::none_of(shards.begin(), shards.end(), degenerate)) return shards;
    }
    top_up(data, shards);
    return shards;
}

ClientDataset split_labeled_with(const Dataset& data, const ClientShard& shard, std::array<double, 2> proportions,
                                 std::uint64_t seed) {
    std::vector<std::size_t> rows = shard.train;
    Rng(derive_seed(seed, {1})).shuffle(rows);
    const auto counts = largest_remainder(rows.size(), proportions);
    ClientDataset::SourceRows src;
    src.labeled.assign(rows.begin(), rows.begin() + static_cast<std::ptrdiff_t>(counts[0]));
    src.unlabeled.assign(rows.begin() + static_cast<std::ptrdiff_t>(counts[0]), rows.end());
    src.validation = shard.validation;
    src.test = shard.test;

    Dataset labeled = data.subset(src.labeled);
    Dataset unlabeled = data.subset(src.unlabeled);
    Dataset validation = data.subset(src.validation);
    Dataset test = data.subset(src.test);
    return ClientDataset(shard.id, std::move(labeled), std::move(unlabeled.features), std::move(unlabeled.labels),
                         std::move(validation), std::move(test), std::move(src));
}

ClientDataset split_labeled(const Dataset& data, const ClientShard& shard, double label_split_alpha,
                            std::uint64_t seed) {
    const auto p = Rng(derive_seed(seed, {0})).dirichlet(2, label_split_alpha);
    return split_labeled_with(data, shard, {p[0], p[1]}, seed);
}

std::vector<ClientDataset> build_clients(const Dataset& data, const PartitionSpec& spec) {
    const auto shards = dirichlet_partition(data, spec);
    std::vector<ClientDataset> clients;
    clients.reserve(shards.size());
    const std::uint64_t base = stream_seed(spec.seed, Stream::label_split);
    for (const auto& shard : shards) {
        clients.push_back(split_labeled(data, shard, spec.label_split_alpha, derive_seed(base, {shard.id})));
    }
    return clients;
}

namespace {

std::uint32_t read_be32(std::istream& in, const std::string& what) {
    unsigned char b[4];
    if (!in.read(reinterpret_cast<char*>(b), 4)) throw FormatError("truncated IDX header in " + what);
    return (std::uint32_t{b[0]} << 24) | (std::uint32_t{b[1]} << 16) | (std::uint32_t{b[2]} << 8) | std::uint32_t{b[3]};
}

void write_be32(std::ostream& out, std::uint32_t v) {
    const unsigned char b[4] = {static_cast<unsigned char>(v >> 24), static_cast<unsigned char>(v >> 16),
                                static_cast<unsigned char>(v >> 8), static_cast<unsigned char>(v)};
    out.write(reinterpret_cast<const char*>(b), 4);
}

std::ifstream open_binary(const std::filesystem::path& p) {
    std::ifstream in(p, std::ios::binary);
    if (!in) throw FormatError("cannot open " + p.string());
    return in;
}

}  // namespace

Dataset load_idx(const std::filesystem::path& images, const std::filesystem::path& labels,
                 std::optional<std::size_t> class_count) {
    auto img = open_binary(images);
    const std::string img_name = images.string();
    if (read_be32(img, img_name) != 0x00000803u) throw FormatError("bad IDX image magic in " + img_name);
    const std::uint32_t count = read_be32(img, img_name);
    const std::uint32_t rows = read_be32(img, img_name);
    const std::uint32_t cols = read_be32(img, img_name);

    auto lab = open_binary(labels);
    const std::string lab_name = labels.string();
    if (read_be32(lab, lab_name) != 0x00000801u) throw FormatError("bad IDX label magic in " + lab_name);
    const std::uint32_t label_count = read_be32(lab, lab_name);
    if (label_count != count) {
        throw ConsistencyError(img_name + " holds " + std::to_string(count) + " images but " + lab_name + " holds " +
                               std::to_string(label_count) + " labels");
    }

    const std::size_t pixels = std::size_t{rows} * cols;
    std::vector<unsigned char> raw(std::size_t{count} * pixels);
    if (!img.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size()))) {
        throw FormatError("truncated IDX image payload in " + img_name);
    }
    std::vector<unsigned char> raw_labels(count);
    if (!lab.read(reinterpret_cast<char*>(raw_labels.data()), static_cast<std::streamsize>(raw_labels.size()))) {
        throw FormatError("truncated IDX label payload in " + lab_name);
    }

    Dataset out;
    out.features = Matrix(count, pixels);
    for (std::size_t i = 0; i < raw.size(); ++i) out.features.values[i] = static_cast<double>(raw[i]) / 255.0;
    out.labels.assign(raw_labels.begin(), raw_labels.end());
    const std::size_t max_label = out.labels.empty() ? 0 : *std::max_element(out.labels.begin(), out.labels.end());
    out.class_count = class_count.value_or(std::max<std::size_t>(2, max_label + 1));
    if (max_label >= out.class_count) throw ConsistencyError("label exceeds the configured class count");
    return out;
}

void write_idx(const Dataset& data, std::size_t rows, std::size_t cols, const std::filesystem::path& images,
               const std::filesystem::path& labels) {
    if (rows * cols != data.features.cols) throw ShapeError("image shape does not match feature width");
    std::ofstream img(images, std::ios::binary);
    std::ofstream lab(labels, std::ios::binary);
    if (!img || !lab) throw FormatError("cannot open IDX output files");
    write_be32(img, 0x00000803u);
    write_be32(img, static_cast<std::uint32_t>(data.size()));
    write_be32(img, static_cast<std::uint32_t>(rows));
    write_be32(img, static_cast<std::uint32_t>(cols));
    for (double v : data.features.values) {
        const double q = std::round(std::clamp(v, 0.0, 1.0) * 255.0);
        img.put(static_cast<char>(static_cast<unsigned char>(q)));
    }
    write_be32(lab, 0x00000801u);
    write_be32(lab, static_cast<std::uint32_t>(data.size()));
    for (std::size_t y : data.labels) lab.put(static_cast<char>(static_cast<unsigned char>(y)));
    if (!img || !lab) throw FormatError("failed writing IDX output files");
}

void write_partition_csv(std::ostream& out, const Dataset& source, std::span<const ClientDataset> clients) {
    out << "client";
    for (std::size_t c = 0; c < source.class_count; ++c) out << ",class_" << c;
    out << ",labeled,unlabeled,validation,test,labeled_ratio\n";
    for (const auto& client : clients) {
        std::vector<std::size_t> counts(source.class_count, 0);
        const auto& rows = client.source_rows();
        for (std::size_t r : rows.labeled) ++counts[source.labels[r]];
        for (std::size_t r : rows.unlabeled) ++counts[source.labels[r]];
        out << client.id();
        for (std::size_t n : counts) out << ',' << n;
        char ratio[32];
        std::snprintf(ratio, sizeof ratio, "%.6f", client.labeled_ratio());
        out << ',' << client.labeled_count() << ',' << client.unlabeled_count() << ',' << client.validation().size()
            << ',' << client.test().size() << ',' << ratio << '\n';
    }
}

}  // namespace pfssl
