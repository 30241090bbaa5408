#include "pfssl/config.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

#include <json.hpp>

#include "pfssl/errors.hpp"

namespace pfssl {

namespace {

using nlohmann::json;

constexpr std::string_view kMethods[] = {"um_pfssl", "fedavg_semi", "local_only", "en_only", "ta_only"};

// Typed reads from one JSON object; every key must be consumed by finish().
class Section {
public:
    Section(const json& j, std::string path) : j_(j), path_(std::move(path)) {
        if (!j_.is_object()) throw ConfigError(path_.empty() ? "<root>" : path_, "must be an object");
    }

    std::string field(std::string_view key) const {
        return path_.empty() ? std::string(key) : path_ + "." + std::string(key);
    }

    const json* find(std::string_view key) {
        const std::string k(key);
        seen_.insert(k);
        const auto it = j_.find(k);
        return it == j_.end() ? nullptr : &*it;
    }

    void read(std::string_view key, std::size_t& out) {
        if (const json* v = find(key)) out = as_size(*v, field(key));
    }

    void read_seed(std::string_view key, std::uint64_t& out) {
        if (const json* v = find(key)) out = as_u64(*v, field(key));
    }

    void read(std::string_view key, double& out) {
        if (const json* v = find(key)) {
            if (!v->is_number()) throw ConfigError(field(key), "expected a number");
            out = v->get<double>();
        }
    }

    void read(std::string_view key, bool& out) {
        if (const json* v = find(key)) {
            if (!v->is_boolean()) throw ConfigError(field(key), "expected true or false");
            out = v->get<bool>();
        }
    }

    void read(std::string_view key, std::string& out) {
        if (const json* v = find(key)) {
            if (!v->is_string()) throw ConfigError(field(key), "expected a string");
            out = v->get<std::string>();
        }
    }

    void read(std::string_view key, std::optional<std::size_t>& out) {
        if (const json* v = find(key)) out = v->is_null() ? std::nullopt : std::optional(as_size(*v, field(key)));
    }

    void read(std::string_view key, std::vector<std::size_t>& out) {
        if (const json* v = find(key)) {
            if (!v->is_array()) throw ConfigError(field(key), "expected an array of non-negative integers");
            out.clear();
            for (const auto& e : *v) out.push_back(as_size(e, field(key)));
        }
    }

    template <typename Parse>
    void read_enum(std::string_view key, Parse parse) {
        std::string name;
        if (const json* v = find(key)) {
            if (!v->is_string()) throw ConfigError(field(key), "expected a string");
            name = v->get<std::string>();
            try {
                parse(name);
            } catch (const DomainError& e) {
                throw ConfigError(field(key), e.what());
            }
        }
    }

    void finish() const {
        for (const auto& [key, value] : j_.items()) {
            if (!seen_.contains(key)) throw ConfigError(field(key), "unknown key");
        }
    }

private:
    static std::uint64_t as_u64(const json& v, const std::string& field) {
        if (!v.is_number_unsigned()) {
            if (v.is_number_integer() && v.get<std::int64_t>() >= 0) return v.get<std::uint64_t>();
            throw ConfigError(field, "expected a non-negative integer");
        }
        return v.get<std::uint64_t>();
    }
    static std::size_t as_size(const json& v, const std::string& field) {
        return static_cast<std::size_t>(as_u64(v, field));
    }

    const json& j_;
    std::string path_;
    std::set<std::string> seen_;
};

void positive(std::size_t v, const char* field) {
    if (v == 0) throw ConfigError(field, "must be at least 1");
}

}  // namespace

Method ExperimentConfig::method_kind() const {
    if (method == "en_only" || method == "ta_only") return Method::um_pfssl;
    return method_from_string(method);
}

CorrMode ExperimentConfig::corr_mode() const {
    if (method == "en_only") return CorrMode::entropy_only;
    if (method == "ta_only") return CorrMode::accuracy_only;
    return ablation;
}

void ExperimentConfig::sync() {
    protocol.clients = partition.client_count;
    protocol.seed = seed;
    protocol.threads = threads;
    protocol.local_epochs = training.local_epochs;
}

void ExperimentConfig::validate() const {
    if (method.empty()) throw ConfigError("method", "must not be empty");
    if (std::find(std::begin(kMethods), std::end(kMethods), method) == std::end(kMethods)) {
        throw ConfigError("method", "unknown method '" + method +
                                        "' (expected um_pfssl, fedavg_semi, local_only, en_only or ta_only)");
    }
    if ((method == "en_only" && ablation != CorrMode::combined && ablation != CorrMode::entropy_only) ||
        (method == "ta_only" && ablation != CorrMode::combined && ablation != CorrMode::accuracy_only)) {
        throw ConfigError("ablation", "conflicts with method '" + method + "'");
    }
    positive(repeats, "repeats");
    positive(threads, "threads");
    if (output_dir.empty()) throw ConfigError("output_dir", "must not be empty");

    if (dataset.kind == "synthetic") {
        if (dataset.classes < 2) throw ConfigError("dataset.classes", "must be at least 2");
        positive(dataset.per_class, "dataset.per_class");
        positive(dataset.feature_dim, "dataset.feature_dim");
        if (!(std::isfinite(dataset.spread) && dataset.spread > 0.0)) {
            throw ConfigError("dataset.spread", "must be finite and positive");
        }
    } else if (dataset.kind == "idx") {
        if (dataset.images.empty()) throw ConfigError("dataset.images", "required for idx datasets");
        if (dataset.labels.empty()) throw ConfigError("dataset.labels", "required for idx datasets");
        if (dataset.class_count && *dataset.class_count < 2) {
            throw ConfigError("dataset.class_count", "must be at least 2");
        }
        if (dataset.limit) positive(*dataset.limit, "dataset.limit");
    } else {
        throw ConfigError("dataset.kind", "expected 'synthetic' or 'idx'");
    }

    if (partition.client_count < 2) throw ConfigError("partition.clients", "must be at least 2");
    if (!(std::isfinite(partition.alpha) && partition.alpha > 0.0)) {
        throw ConfigError("partition.alpha", "must be finite and positive");
    }
    if (!(std::isfinite(partition.label_split_alpha) && partition.label_split_alpha > 0.0)) {
        throw ConfigError("partition.label_split_alpha", "must be finite and positive");
    }

    for (std::size_t w : model.hidden) positive(w, "model.hidden");
    if (!(model.dropout >= 0.0 && model.dropout < 1.0)) throw ConfigError("model.dropout", "must lie in [0, 1)");

    training.validate();
    protocol.validate();
    if (protocol.clients != partition.client_count || protocol.seed != seed || protocol.threads != threads ||
        protocol.local_epochs != training.local_epochs) {
        throw ConfigError("protocol", "shared fields out of sync");
    }
}

std::shared_ptr<const NetSpec> ExperimentConfig::net_spec(std::size_t input_dim, std::size_t class_count) const {
    auto spec = std::make_shared<NetSpec>();
    spec->layer_widths.push_back(input_dim);
    spec->layer_widths.insert(spec->layer_widths.end(), model.hidden.begin(), model.hidden.end());
    spec->layer_widths.push_back(class_count);
    spec->dropout_rate = model.dropout;
    spec->activation = model.activation;
    spec->validate();
    return spec;
}

ExperimentConfig parse_config_text(std::string_view text) {
    json root;
    try {
        root = json::parse(text);
    } catch (const json::parse_error& e) {
        throw ConfigError("<root>", std::string("not valid JSON: ") + e.what());
    }
    ExperimentConfig cfg;
    Section top(root, "");
    top.read("method", cfg.method);
    top.read_enum("ablation", [&](const std::string& s) { cfg.ablation = corr_mode_from_string(s); });
    top.read_seed("seed", cfg.seed);
    top.read("repeats", cfg.repeats);
    top.read("output_dir", cfg.output_dir);
    top.read("threads", cfg.threads);

    if (const json* d = top.find("dataset")) {
        Section s(*d, "dataset");
        s.read("kind", cfg.dataset.kind);
        s.read("classes", cfg.dataset.classes);
        s.read("per_class", cfg.dataset.per_class);
        s.read("spread", cfg.dataset.spread);
        s.read("feature_dim", cfg.dataset.feature_dim);
        s.read("images", cfg.dataset.images);
        s.read("labels", cfg.dataset.labels);
        s.read("class_count", cfg.dataset.class_count);
        s.read("limit", cfg.dataset.limit);
        s.finish();
    }
    if (const json* p = top.find("partition")) {
        Section s(*p, "partition");
        s.read("clients", cfg.partition.client_count);
        s.read("alpha", cfg.partition.alpha);
        s.read("label_split_alpha", cfg.partition.label_split_alpha);
        s.finish();
    }
    if (const json* m = top.find("model")) {
        Section s(*m, "model");
        s.read("hidden", cfg.model.hidden);
        s.read("dropout", cfg.model.dropout);
        s.read_enum("activation", [&](const std::string& a) { cfg.model.activation = activation_from_string(a); });
        s.finish();
    }
    if (const json* t = top.find("training")) {
        Section s(*t, "training");
        s.read("learning_rate", cfg.training.learning_rate);
        s.read("momentum", cfg.training.momentum);
        s.read("batch_size", cfg.training.batch_size);
        s.read("local_epochs", cfg.training.local_epochs);
        s.read("warmup_epochs", cfg.training.warmup_epochs);
        s.read_enum("objective", [&](const std::string& o) { cfg.training.objective = objective_from_string(o); });
        s.finish();
    }
    if (const json* p = top.find("protocol")) {
        Section s(*p, "protocol");
        if (const json* tau = s.find("sample_rate")) {
            if (!tau->is_number()) throw ConfigError("protocol.sample_rate", "expected a number");
            const double v = tau->get<double>();
            if (!(std::isfinite(v) && v > 0.0 && v <= 1.0)) throw ConfigError("protocol.sample_rate", "must lie in (0, 1]");
            cfg.protocol.sample_rate = Rational::from_double(v);
        }
        s.read("helpers", cfg.protocol.helpers);
        s.read("replacements", cfg.protocol.replacements);
        s.read("search_rounds", cfg.protocol.search_rounds);
        s.read("update_period", cfg.protocol.update_period);
        s.read("rounds", cfg.protocol.rounds);
        s.read("mc_samples", cfg.protocol.mc_samples);
        s.read("restrict_to_sampled", cfg.protocol.restrict_to_sampled);
        s.read("uncertainty_cap", cfg.protocol.uncertainty_cap);
        s.finish();
    }
    top.finish();
    cfg.sync();
    cfg.validate();
    return cfg;
}

ExperimentConfig load_config(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("<file>", "cannot open config file " + path.string());
    std::stringstream buf;
    buf << in.rdbuf();
    ExperimentConfig cfg = parse_config_text(buf.str());
    // dataset paths are relative to the config file
    const auto base = path.parent_path();
    for (std::string* p : {&cfg.dataset.images, &cfg.dataset.labels}) {
        if (!p->empty() && std::filesystem::path(*p).is_relative()) *p = (base / *p).lexically_normal().string();
    }
    return cfg;
}

std::string serialize_config(const ExperimentConfig& cfg) {
    json d = {{"kind", cfg.dataset.kind},       {"classes", cfg.dataset.classes}, {"per_class", cfg.dataset.per_class},
              {"spread", cfg.dataset.spread},   {"feature_dim", cfg.dataset.feature_dim},
              {"images", cfg.dataset.images},   {"labels", cfg.dataset.labels}};
    d["class_count"] = cfg.dataset.class_count ? json(*cfg.dataset.class_count) : json(nullptr);
    d["limit"] = cfg.dataset.limit ? json(*cfg.dataset.limit) : json(nullptr);

    json root;
    root["method"] = cfg.method;
    root["ablation"] = std::string(to_string(cfg.ablation));
    root["seed"] = cfg.seed;
    root["repeats"] = cfg.repeats;
    root["output_dir"] = cfg.output_dir;
    root["threads"] = cfg.threads;
    root["dataset"] = d;
    root["partition"] = {{"clients", cfg.partition.client_count},
                         {"alpha", cfg.partition.alpha},
                         {"label_split_alpha", cfg.partition.label_split_alpha}};
    root["model"] = {{"hidden", cfg.model.hidden},
                     {"dropout", cfg.model.dropout},
                     {"activation", std::string(to_string(cfg.model.activation))}};
    root["training"] = {{"learning_rate", cfg.training.learning_rate},
                        {"momentum", cfg.training.momentum},
                        {"batch_size", cfg.training.batch_size},
                        {"local_epochs", cfg.training.local_epochs},
                        {"warmup_epochs", cfg.training.warmup_epochs},
                        {"objective", std::string(to_string(cfg.training.objective))}};
    root["protocol"] = {{"sample_rate", cfg.protocol.sample_rate.to_double()},
                        {"helpers", cfg.protocol.helpers},
                        {"replacements", cfg.protocol.replacements},
                        {"search_rounds", cfg.protocol.search_rounds},
                        {"update_period", cfg.protocol.update_period},
                        {"rounds", cfg.protocol.rounds},
                        {"mc_samples", cfg.protocol.mc_samples},
                        {"restrict_to_sampled", cfg.protocol.restrict_to_sampled},
                        {"uncertainty_cap", cfg.protocol.uncertainty_cap}};
    return root.dump(2) + "\n";
}

}  // namespace pfssl
