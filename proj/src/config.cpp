#include "cvpe/config.hpp"

#include <fstream>
#include <set>
#include <sstream>

#include <json.hpp>

#include "cvpe/errors.hpp"

namespace cvpe::config {

using nlohmann::json;

std::string to_string(data::SplitProtocol p) {
    switch (p) {
        case data::SplitProtocol::ett_hourly: return "ett_hourly";
        case data::SplitProtocol::ett_minute: return "ett_minute";
        case data::SplitProtocol::ratio_70_10_20: return "ratio_70_10_20";
    }
    return "?";
}

namespace {

std::optional<data::SplitProtocol> parse_protocol(const std::string& s) {
    if (s == "ett_hourly") return data::SplitProtocol::ett_hourly;
    if (s == "ett_minute") return data::SplitProtocol::ett_minute;
    if (s == "ratio_70_10_20") return data::SplitProtocol::ratio_70_10_20;
    return std::nullopt;
}

// Reads typed fields out of a JSON object, recording every problem instead of
// stopping at the first one.
class Reader {
public:
    explicit Reader(std::vector<std::string>& problems) : problems_(problems) {}

    bool object(const json& j, const std::string& path, std::initializer_list<const char*> keys) {
        if (!j.is_object()) {
            problems_.push_back(path + " must be an object");
            return false;
        }
        std::set<std::string> known(keys.begin(), keys.end());
        for (const auto& [k, _] : j.items()) {
            if (!known.count(k)) problems_.push_back(join(path, k) + " is not a recognised key");
        }
        return true;
    }

    template <class T>
    void get(const json& j, const std::string& path, const char* key, T& out) {
        if (!j.is_object() || !j.contains(key)) return;
        const json& v = j.at(key);
        const std::string where = join(path, key);
        if constexpr (std::is_same_v<T, bool>) {
            if (!v.is_boolean()) return bad(where, "a boolean");
            out = v.get<bool>();
        } else if constexpr (std::is_same_v<T, double>) {
            if (!v.is_number()) return bad(where, "a number");
            out = v.get<double>();
        } else if constexpr (std::is_integral_v<T>) {
            if (!v.is_number_integer() || (v.is_number_integer() && !v.is_number_unsigned() && v.get<long long>() < 0)) {
                return bad(where, "a non-negative integer");
            }
            out = v.get<T>();
        } else {
            if (!v.is_string()) return bad(where, "a string");
            out = v.get<std::string>();
        }
    }

    template <class T>
    void get_list(const json& j, const std::string& path, const char* key, std::vector<T>& out) {
        if (!j.is_object() || !j.contains(key)) return;
        const json& v = j.at(key);
        const std::string where = join(path, key);
        if (!v.is_array()) return bad(where, "an array");
        std::vector<T> values;
        for (std::size_t i = 0; i < v.size(); ++i) {
            if (!v[i].is_number_unsigned()) return bad(where + "[" + std::to_string(i) + "]", "a non-negative integer");
            values.push_back(v[i].get<T>());
        }
        out = std::move(values);
    }

    static std::string join(const std::string& path, const std::string& key) {
        return path.empty() ? key : path + "." + key;
    }

private:
    void bad(const std::string& where, const char* expected) { problems_.push_back(where + " must be " + expected); }
    std::vector<std::string>& problems_;
};

template <class T>
bool has_duplicates(const std::vector<T>& v) {
    return std::set<T>(v.begin(), v.end()).size() != v.size();
}

}  // namespace

std::vector<std::string> RunConfig::problems() const {
    std::vector<std::string> out;
    if (dataset.name.empty()) out.emplace_back("dataset.name must not be empty");
    if (dataset.source == DatasetSource::csv && dataset.path.empty()) {
        out.emplace_back("dataset.path is required when dataset.source is csv");
    }
    if (dataset.source == DatasetSource::synthetic) {
        const auto& s = dataset.synthetic;
        if (s.n_channels < 2) out.emplace_back("dataset.synthetic.n_channels must be at least 2");
        if (s.coupling < 0.0 || s.coupling > 1.0) out.emplace_back("dataset.synthetic.coupling must lie in [0, 1]");
        if (s.noise_std < 0.0) out.emplace_back("dataset.synthetic.noise_std must be non-negative");
        if (s.length == 0) out.emplace_back("dataset.synthetic.length must be positive");
    }
    if (!split.protocol) {
        const auto& b = split.boundaries;
        if (b.size() != 3 || !(b[0] < b[1] && b[1] < b[2])) {
            out.emplace_back("split.boundaries must be three strictly increasing indices");
        } else if (dataset.source == DatasetSource::synthetic && b[2] > dataset.synthetic.length) {
            out.emplace_back("split.boundaries end (" + std::to_string(b[2]) + ") exceeds dataset.synthetic.length (" +
                             std::to_string(dataset.synthetic.length) + ")");
        }
    }
    if (select_k && *select_k == 0) out.emplace_back("select_k must be positive");

    for (auto& p : cell_model(model.variant, horizons.empty() ? 1 : horizons.front()).problems()) out.push_back(p);
    if (variants.empty()) out.emplace_back("variants must name at least one variant");
    if (has_duplicates(variants)) out.emplace_back("variants must not repeat");
    if (horizons.empty()) out.emplace_back("horizons must list at least one horizon");
    for (std::size_t h : horizons) {
        if (h == 0) out.emplace_back("horizons entries must be positive");
    }
    if (has_duplicates(horizons)) out.emplace_back("horizons must not repeat");
    if (seeds.empty()) out.emplace_back("seeds must list at least one seed");
    if (has_duplicates(seeds)) out.emplace_back("seeds must not repeat");

    if (!(train.lr >= 0.0)) out.emplace_back("train.lr must be non-negative");
    if (train.batch_size == 0) out.emplace_back("train.batch_size must be positive");
    if (train.epochs == 0) out.emplace_back("train.epochs must be positive");
    if (train.patience == 0) out.emplace_back("train.patience must be positive");
    if (jobs == 0) out.emplace_back("jobs must be positive");
    if (output_dir.empty()) out.emplace_back("output_dir must not be empty");

    // Every segment must yield at least one window for every horizon.
    std::optional<std::size_t> length;
    if (dataset.source == DatasetSource::synthetic) length = dataset.synthetic.length;
    if (length && model.patch.context > 0 && !horizons.empty()) {
        try {
            auto b = data::resolve_boundaries(split, *length);
            const std::size_t h = *std::max_element(horizons.begin(), horizons.end());
            const char* names[] = {"train", "val", "test"};
            for (std::size_t i = 0; i < 3; ++i) {
                const std::size_t seg_begin = i == 0 ? 0 : b[i - 1];
                if (train::window_count(seg_begin, b[i], model.patch.context, h) == 0) {
                    out.push_back(std::string("split leaves no ") + names[i] + " windows for patch.context " +
                                  std::to_string(model.patch.context) + " and horizon " + std::to_string(h));
                }
            }
        } catch (const Error& e) {
            out.emplace_back(e.what());
        }
    }
    return out;
}

void RunConfig::validate() const {
    auto issues = problems();
    if (issues.empty()) return;
    std::string msg = "invalid config:";
    for (const auto& s : issues) msg += "\n  - " + s;
    throw ConfigError(msg);
}

model::ModelConfig RunConfig::cell_model(model::EmbeddingVariant variant, std::size_t horizon) const {
    model::ModelConfig m = model;
    m.variant = variant;
    m.horizon = horizon;
    return m;
}

RunConfig parse(const std::string& text) {
    json j;
    try {
        j = json::parse(text);
    } catch (const json::parse_error& e) {
        throw ConfigError(std::string("invalid config:\n  - not valid JSON: ") + e.what());
    }
    std::vector<std::string> problems;
    Reader r(problems);
    RunConfig c;
    if (!r.object(j, "", {"dataset", "split", "scale", "select_k", "patch", "attention", "reprogram", "backbone",
                          "variants", "train", "horizons", "seeds", "output_dir", "jobs"})) {
        throw ConfigError("invalid config:\n  - top level must be an object");
    }

    if (j.contains("dataset") && r.object(j["dataset"], "dataset",
                                          {"name", "source", "path", "date_column", "target", "synthetic"})) {
        const json& d = j["dataset"];
        r.get(d, "dataset", "name", c.dataset.name);
        std::string source = "synthetic", path;
        r.get(d, "dataset", "source", source);
        if (source == "csv") {
            c.dataset.source = DatasetSource::csv;
        } else if (source != "synthetic") {
            problems.push_back("dataset.source must be synthetic or csv, got '" + source + "'");
        }
        r.get(d, "dataset", "path", path);
        c.dataset.path = path;
        r.get(d, "dataset", "date_column", c.dataset.date_column);
        r.get(d, "dataset", "target", c.dataset.target);
        if (d.contains("synthetic") &&
            r.object(d["synthetic"], "dataset.synthetic", {"n_channels", "length", "coupling", "lag", "noise_std", "seed"})) {
            const json& s = d["synthetic"];
            auto& spec = c.dataset.synthetic;
            r.get(s, "dataset.synthetic", "n_channels", spec.n_channels);
            r.get(s, "dataset.synthetic", "length", spec.length);
            r.get(s, "dataset.synthetic", "coupling", spec.coupling);
            r.get(s, "dataset.synthetic", "lag", spec.lag);
            r.get(s, "dataset.synthetic", "noise_std", spec.noise_std);
            r.get(s, "dataset.synthetic", "seed", spec.seed);
        }
    }

    if (j.contains("split") && r.object(j["split"], "split", {"protocol", "boundaries"})) {
        const json& s = j["split"];
        if (s.contains("protocol") && s.contains("boundaries")) {
            problems.emplace_back("split.protocol and split.boundaries are mutually exclusive");
        }
        if (s.contains("protocol")) {
            std::string name;
            r.get(s, "split", "protocol", name);
            if (auto p = parse_protocol(name)) {
                c.split = data::SplitSpec::named(*p);
            } else {
                problems.push_back("split.protocol must be ett_hourly, ett_minute or ratio_70_10_20, got '" + name + "'");
            }
        } else if (s.contains("boundaries")) {
            std::vector<std::size_t> b;
            r.get_list(s, "split", "boundaries", b);
            c.split = data::SplitSpec{std::nullopt, b};
        }
    }

    r.get(j, "", "scale", c.scale);
    if (j.contains("select_k") && !j["select_k"].is_null()) {
        std::size_t k = 0;
        r.get(j, "", "select_k", k);
        c.select_k = k;
    }

    if (j.contains("patch") && r.object(j["patch"], "patch", {"context", "patch_len", "stride", "embed_dim"})) {
        const json& p = j["patch"];
        r.get(p, "patch", "context", c.model.patch.context);
        r.get(p, "patch", "patch_len", c.model.patch.patch_len);
        r.get(p, "patch", "stride", c.model.patch.stride);
        r.get(p, "patch", "embed_dim", c.model.patch.embed_dim);
    }
    if (j.contains("attention") && r.object(j["attention"], "attention", {"heads", "routers", "ff_dim"})) {
        const json& a = j["attention"];
        r.get(a, "attention", "heads", c.model.attention.heads);
        r.get(a, "attention", "routers", c.model.routers);
        r.get(a, "attention", "ff_dim", c.model.cvpe_ff_dim);
    }
    if (j.contains("reprogram") && r.object(j["reprogram"], "reprogram", {"prototypes"})) {
        r.get(j["reprogram"], "reprogram", "prototypes", c.model.prototypes);
    }
    if (j.contains("backbone") && r.object(j["backbone"], "backbone", {"layers", "d_llm", "heads", "d_ff"})) {
        const json& b = j["backbone"];
        r.get(b, "backbone", "layers", c.model.backbone.layers);
        r.get(b, "backbone", "d_llm", c.model.backbone.d_llm);
        r.get(b, "backbone", "heads", c.model.backbone.heads);
        r.get(b, "backbone", "d_ff", c.model.backbone.d_ff);
    }

    if (j.contains("variants")) {
        if (!j["variants"].is_array()) {
            problems.emplace_back("variants must be an array");
        } else {
            c.variants.clear();
            for (const auto& v : j["variants"]) {
                if (!v.is_string()) {
                    problems.emplace_back("variants entries must be strings");
                    continue;
                }
                try {
                    c.variants.push_back(model::parse_variant(v.get<std::string>()));
                } catch (const ConfigError& e) {
                    problems.push_back(std::string("variants: ") + e.what());
                }
            }
        }
    }

    if (j.contains("train") && r.object(j["train"], "train", {"lr", "batch_size", "epochs", "patience"})) {
        const json& t = j["train"];
        r.get(t, "train", "lr", c.train.lr);
        r.get(t, "train", "batch_size", c.train.batch_size);
        r.get(t, "train", "epochs", c.train.epochs);
        r.get(t, "train", "patience", c.train.patience);
    }
    r.get_list(j, "", "horizons", c.horizons);
    r.get_list(j, "", "seeds", c.seeds);
    std::string out_dir = c.output_dir.string();
    r.get(j, "", "output_dir", out_dir);
    c.output_dir = out_dir;
    r.get(j, "", "jobs", c.jobs);

    for (auto& p : c.problems()) problems.push_back(std::move(p));
    if (!problems.empty()) {
        std::string msg = "invalid config:";
        for (const auto& s : problems) msg += "\n  - " + s;
        throw ConfigError(msg);
    }
    return c;
}

RunConfig load(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config file " + path.string());
    std::stringstream ss;
    ss << in.rdbuf();
    return parse(ss.str());
}

std::string to_json(const RunConfig& c) {
    json dataset = {{"name", c.dataset.name},
                    {"source", c.dataset.source == DatasetSource::csv ? "csv" : "synthetic"},
                    {"target", c.dataset.target}};
    if (c.dataset.source == DatasetSource::csv) {
        dataset["path"] = c.dataset.path.string();
        dataset["date_column"] = c.dataset.date_column;
    } else {
        const auto& s = c.dataset.synthetic;
        dataset["synthetic"] = {{"n_channels", s.n_channels}, {"length", s.length},       {"coupling", s.coupling},
                                {"lag", s.lag},               {"noise_std", s.noise_std}, {"seed", s.seed}};
    }
    json split;
    if (c.split.protocol) {
        split["protocol"] = to_string(*c.split.protocol);
    } else {
        split["boundaries"] = c.split.boundaries;
    }
    json variants = json::array();
    for (auto v : c.variants) variants.push_back(model::to_string(v));
    const auto& m = c.model;
    json j = {
        {"dataset", dataset},
        {"split", split},
        {"scale", c.scale},
        {"select_k", c.select_k ? json(*c.select_k) : json(nullptr)},
        {"patch", {{"context", m.patch.context}, {"patch_len", m.patch.patch_len}, {"stride", m.patch.stride},
                   {"embed_dim", m.patch.embed_dim}}},
        {"attention", {{"heads", m.attention.heads}, {"routers", m.routers}, {"ff_dim", m.cvpe_ff_dim}}},
        {"reprogram", {{"prototypes", m.prototypes}}},
        {"backbone", {{"layers", m.backbone.layers}, {"d_llm", m.backbone.d_llm}, {"heads", m.backbone.heads},
                      {"d_ff", m.backbone.d_ff}}},
        {"variants", variants},
        {"train", {{"lr", c.train.lr}, {"batch_size", c.train.batch_size}, {"epochs", c.train.epochs},
                   {"patience", c.train.patience}}},
        {"horizons", c.horizons},
        {"seeds", c.seeds},
        {"output_dir", c.output_dir.string()},
        {"jobs", c.jobs},
    };
    return j.dump(2) + "\n";
}

model::ModelConfig gradcheck_model_config() {
    model::ModelConfig m;
    m.patch = {4, 4, 24, 8};  // P = floor((24 - 4) / 4) = 5
    m.attention.heads = 2;
    m.routers = 2;
    m.cvpe_ff_dim = 16;
    m.prototypes = 10;
    m.backbone = {1, 8, 2, 16};
    m.horizon = 4;
    m.variant = model::EmbeddingVariant::cvpe;
    return m;
}

}  // namespace cvpe::config
