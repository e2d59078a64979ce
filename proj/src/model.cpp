#include "cvpe/model.hpp"

#include <cstring>
#include <fstream>

#include <json.hpp>

#include "cvpe/errors.hpp"
#include "cvpe/init.hpp"

namespace cvpe::model {

using nlohmann::json;

std::string to_string(EmbeddingVariant v) { return v == EmbeddingVariant::vanilla ? "vanilla" : "cvpe"; }

EmbeddingVariant parse_variant(const std::string& name) {
    if (name == "vanilla") return EmbeddingVariant::vanilla;
    if (name == "cvpe") return EmbeddingVariant::cvpe;
    throw ConfigError("unknown embedding variant '" + name + "' (expected vanilla or cvpe)");
}

std::vector<std::string> ModelConfig::problems() const {
    std::vector<std::string> out;
    try {
        patch.validate();
    } catch (const ConfigError& e) {
        out.emplace_back(e.what());
    }
    if (attention.heads == 0) {
        out.emplace_back("attention.heads must be positive");
    } else if (patch.embed_dim % attention.heads != 0) {
        out.push_back("attention.heads (" + std::to_string(attention.heads) + ") must divide patch.embed_dim (" +
                      std::to_string(patch.embed_dim) + ")");
    }
    if (routers == 0) out.emplace_back("attention.routers must be positive");
    if (prototypes == 0) out.emplace_back("reprogram.prototypes must be positive");
    if (backbone.d_llm == 0) out.emplace_back("backbone.d_llm must be positive");
    if (backbone.d_ff == 0) out.emplace_back("backbone.d_ff must be positive");
    if (backbone.heads == 0) {
        out.emplace_back("backbone.heads must be positive");
    } else if (backbone.d_llm % backbone.heads != 0) {
        out.push_back("backbone.heads (" + std::to_string(backbone.heads) + ") must divide backbone.d_llm (" +
                      std::to_string(backbone.d_llm) + ")");
    }
    if (horizon == 0) out.emplace_back("horizon must be positive");
    return out;
}

void ModelConfig::validate() const {
    auto issues = problems();
    if (issues.empty()) return;
    std::string msg = "invalid model config:";
    for (const auto& s : issues) msg += "\n  - " + s;
    throw ConfigError(msg);
}

namespace {

Linear make_linear(const std::string& name, std::size_t in, std::size_t out, std::mt19937_64& rng) {
    return Linear{ad::Parameter(name + ".w", init::fan_in_uniform({in, out}, in, rng)),
                  ad::Parameter(name + ".b", init::fan_in_uniform({out}, in, rng))};
}

void append(std::vector<ad::Parameter*>& out, Linear& l) {
    out.push_back(&l.w);
    out.push_back(&l.b);
}

}  // namespace

std::vector<ad::Parameter*> ModelParams::list() {
    std::vector<ad::Parameter*> out;
    append(out, patch_proj);
    if (cvpe) {
        auto c = cvpe->list();
        out.insert(out.end(), c.begin(), c.end());
    }
    out.push_back(&reprogram.bank.prototypes);
    append(out, reprogram.query);
    out.push_back(&reprogram.key);
    append(out, reprogram.value);
    append(out, reprogram.out);
    for (auto& layer : backbone) {
        out.push_back(&layer.ln1_gain);
        out.push_back(&layer.ln1_bias);
        append(out, layer.q);
        out.push_back(&layer.k);
        append(out, layer.v);
        append(out, layer.o);
        out.push_back(&layer.ln2_gain);
        out.push_back(&layer.ln2_bias);
        append(out, layer.ff1);
        append(out, layer.ff2);
    }
    append(out, head);
    return out;
}

std::vector<const ad::Parameter*> ModelParams::list() const {
    auto m = const_cast<ModelParams*>(this)->list();
    return {m.begin(), m.end()};
}

std::size_t ModelParams::scalar_count() const {
    std::size_t n = 0;
    for (const auto* p : list()) n += p->value.size();
    return n;
}

void ModelParams::zero_grad() {
    for (auto* p : list()) p->zero_grad();
}

namespace {

ad::Var linear(const ad::Var& x, const ad::Var& w, const ad::Var& b) { return ad::add_bias(ad::matmul(x, w), b); }

template <typename Bind>
ReprogramVars bind_reprogram(ReprogramParams& p, Bind&& b) {
    return ReprogramVars{b(p.bank.prototypes), b(p.query.w), b(p.query.b), b(p.key),
                         b(p.value.w),         b(p.value.b), b(p.out.w),   b(p.out.b)};
}

template <typename Bind>
BackboneLayerVars bind_layer(BackboneLayer& l, Bind&& b) {
    return BackboneLayerVars{b(l.ln1_gain), b(l.ln1_bias), b(l.q.w),      b(l.q.b),      b(l.k),
                             b(l.v.w),      b(l.v.b),      b(l.o.w),      b(l.o.b),      b(l.ln2_gain),
                             b(l.ln2_bias), b(l.ff1.w),    b(l.ff1.b),    b(l.ff2.w),    b(l.ff2.b)};
}

ad::Var checked(ad::Var v, const char* stage) {
    if (!v.value().all_finite()) throw NumericError(stage, "non-finite intermediate");
    return v;
}

}  // namespace

ad::Var reprogram(const ad::Var& x, const ReprogramVars& p, const block::AttentionConfig& cfg) {
    const Shape s = x.shape();
    if (s.size() != 3) throw ShapeError("reprogram expects [G, P, d_m], got " + cvpe::to_string(s));
    cfg.validate(s[2]);
    if (!x.value().all_finite()) throw NumericError("reprogram", "non-finite input");
    const std::size_t v_count = p.prototypes.shape()[0];
    auto q = linear(x, p.q_w, p.q_b);
    auto k = ad::reshape(ad::matmul(p.prototypes, p.k_w), {1, v_count, s[2]});
    auto v = ad::reshape(linear(p.prototypes, p.v_w, p.v_b), {1, v_count, s[2]});
    return checked(linear(ad::attention(q, k, v, cfg.heads), p.o_w, p.o_b), "reprogram");
}

ad::Var backbone_forward(const ad::Var& x, std::span<const BackboneLayerVars> layers, std::size_t heads) {
    ad::Var h = x;
    for (const auto& l : layers) {
        auto n1 = ad::layer_norm(h, l.ln1_gain, l.ln1_bias, block::kLayerNormEps);
        auto att = ad::attention(linear(n1, l.q_w, l.q_b), ad::matmul(n1, l.k_w), linear(n1, l.v_w, l.v_b), heads);
        h = ad::add(h, linear(att, l.o_w, l.o_b));
        auto n2 = ad::layer_norm(h, l.ln2_gain, l.ln2_bias, block::kLayerNormEps);
        h = ad::add(h, linear(ad::gelu(linear(n2, l.ff1_w, l.ff1_b)), l.ff2_w, l.ff2_b));
        h = checked(h, "backbone");
    }
    return h;
}

Tensor reprogram(const Tensor& x, const ReprogramParams& params, const block::AttentionConfig& cfg) {
    if (x.rank() != 3) throw ShapeError("reprogram expects [N, P, d_m]");
    ad::Graph g;
    auto vars = bind_reprogram(const_cast<ReprogramParams&>(params), [&](ad::Parameter& p) { return g.constant(p.value); });
    return reprogram(g.constant(x), vars, cfg).value();
}

Tensor backbone_forward(const Tensor& x, const std::vector<BackboneLayer>& layers, std::size_t heads) {
    if (x.rank() != 3) throw ShapeError("backbone_forward expects [N, P, d_llm]");
    ad::Graph g;
    std::vector<BackboneLayerVars> vars;
    for (const auto& l : layers) {
        vars.push_back(bind_layer(const_cast<BackboneLayer&>(l), [&](ad::Parameter& p) { return g.constant(p.value); }));
    }
    return backbone_forward(g.constant(x), vars, heads).value();
}

Model Model::create(const ModelConfig& config, std::uint64_t seed) {
    config.validate();
    std::seed_seq shared_seq{seed, std::uint64_t{0x5A4E}};
    std::seed_seq cvpe_seq{seed, std::uint64_t{0xC7E0}};
    std::mt19937_64 shared(shared_seq);
    std::mt19937_64 cvpe_rng(cvpe_seq);

    const std::size_t d_m = config.patch.embed_dim, d_llm = config.backbone.d_llm, np = config.patches();
    ModelParams p;
    p.patch_proj = make_linear("patch_proj", config.patch.patch_len, d_m, shared);
    p.reprogram.bank.prototypes = ad::Parameter("reprogram.prototypes", init::normal({config.prototypes, d_llm}, 1.0, shared));
    p.reprogram.query = make_linear("reprogram.query", d_m, d_m, shared);
    p.reprogram.key = ad::Parameter("reprogram.key.w", init::fan_in_uniform({d_llm, d_m}, d_llm, shared));
    p.reprogram.value = make_linear("reprogram.value", d_llm, d_m, shared);
    p.reprogram.out = make_linear("reprogram.out", d_m, d_llm, shared);
    for (std::size_t i = 0; i < config.backbone.layers; ++i) {
        const std::string pre = "backbone." + std::to_string(i) + ".";
        BackboneLayer l;
        l.ln1_gain = ad::Parameter(pre + "ln1.gain", Tensor({d_llm}, 1.0));
        l.ln1_bias = ad::Parameter(pre + "ln1.bias", Tensor({d_llm}, 0.0));
        l.q = make_linear(pre + "q", d_llm, d_llm, shared);
        l.k = ad::Parameter(pre + "k.w", init::fan_in_uniform({d_llm, d_llm}, d_llm, shared));
        l.v = make_linear(pre + "v", d_llm, d_llm, shared);
        l.o = make_linear(pre + "o", d_llm, d_llm, shared);
        l.ln2_gain = ad::Parameter(pre + "ln2.gain", Tensor({d_llm}, 1.0));
        l.ln2_bias = ad::Parameter(pre + "ln2.bias", Tensor({d_llm}, 0.0));
        l.ff1 = make_linear(pre + "ff1", d_llm, config.backbone.d_ff, shared);
        l.ff2 = make_linear(pre + "ff2", config.backbone.d_ff, d_llm, shared);
        p.backbone.push_back(std::move(l));
    }
    p.head = make_linear("head", np * d_llm, config.horizon, shared);
    auto cvpe = block::CvpeParams::init({np, d_m, config.routers, config.cvpe_hidden()}, cvpe_rng);
    if (config.variant == EmbeddingVariant::cvpe) p.cvpe = std::move(cvpe);
    return Model(config, std::move(p));
}

Model::Model(ModelConfig config, ModelParams params) : config_(std::move(config)), params_(std::move(params)) {
    config_.validate();
    if ((config_.variant == EmbeddingVariant::cvpe) != params_.cvpe.has_value()) {
        throw ConfigError("model parameters do not match the configured embedding variant");
    }
}

ad::Var Model::forward(ad::Graph& g, std::span<const Tensor* const> windows, bool trainable,
                       ad::ScoreCounter* counter) {
    if (windows.empty()) throw ShapeError("forward needs at least one window");
    const std::size_t b = windows.size(), n = windows[0]->dim(0);
    const auto& pc = config_.patch;
    const std::size_t np = config_.patches(), d_llm = config_.backbone.d_llm;
    std::vector<double> patches, row_scale, row_shift;
    patches.reserve(b * n * np * pc.patch_len);
    for (const Tensor* w : windows) {
        if (w->rank() != 2 || w->dim(0) != n || w->dim(1) != pc.context) {
            throw ShapeError("window " + cvpe::to_string(w->shape()) + " does not match [" + std::to_string(n) + ", " +
                             std::to_string(pc.context) + "]");
        }
        auto norm = preprocess::revin_normalize(*w);
        Tensor pw = preprocess::patch_window(norm.normalized, pc);
        patches.insert(patches.end(), pw.data().begin(), pw.data().end());
        row_scale.insert(row_scale.end(), norm.state.std.begin(), norm.state.std.end());
        row_shift.insert(row_shift.end(), norm.state.mean.begin(), norm.state.mean.end());
    }
    auto bind = [&](ad::Parameter& p) { return trainable ? g.parameter(p) : g.constant(p.value); };

    auto x = g.constant(Tensor({b, n, np, pc.patch_len}, std::move(patches)));
    auto emb = linear(x, bind(params_.patch_proj.w), bind(params_.patch_proj.b));
    if (params_.cvpe) {
        auto vars = trainable ? block::bind(g, *params_.cvpe) : block::bind_constant(g, *params_.cvpe);
        emb = block::cvpe_forward(emb, vars, config_.attention, counter);
    }
    auto per_channel = ad::reshape(emb, {b * n, np, pc.embed_dim});
    auto rep = reprogram(per_channel, bind_reprogram(params_.reprogram, bind), config_.attention);
    std::vector<BackboneLayerVars> layers;
    for (auto& l : params_.backbone) layers.push_back(bind_layer(l, bind));
    auto hidden = backbone_forward(rep, layers, config_.backbone.heads);
    auto flat = ad::reshape(hidden, {b * n, np * d_llm});
    auto out = linear(flat, bind(params_.head.w), bind(params_.head.b));
    auto denorm = checked(ad::affine_rows(out, row_scale, row_shift), "forecast");
    return ad::reshape(denorm, {b, n, config_.horizon});
}

std::vector<Tensor> Model::forecast_batch(std::span<const Tensor* const> windows) const {
    ad::Graph g;
    auto out = const_cast<Model*>(this)->forward(g, windows, false, nullptr);
    const std::size_t n = windows[0]->dim(0), h = config_.horizon;
    std::vector<Tensor> result;
    const auto& v = out.value();
    for (std::size_t i = 0; i < windows.size(); ++i) {
        result.emplace_back(Shape{n, h}, std::vector<double>(v.data().begin() + static_cast<std::ptrdiff_t>(i * n * h),
                                                             v.data().begin() + static_cast<std::ptrdiff_t>((i + 1) * n * h)));
    }
    return result;
}

Tensor Model::forecast(const Tensor& window) const {
    const Tensor* one[] = {&window};
    return std::move(forecast_batch(one)[0]);
}

// Checkpoint layout (host byte order):
//   "CVPECKPT" | u32 version | u64 len | config json | u64 count |
//   count x (u32 name_len | name | u32 rank | rank x u64 dim | doubles)
namespace {

constexpr char kMagic[8] = {'C', 'V', 'P', 'E', 'C', 'K', 'P', 'T'};
constexpr std::uint32_t kVersion = 1;

template <typename T>
void put(std::ostream& out, T v) {
    out.write(reinterpret_cast<const char*>(&v), sizeof v);
}

template <typename T>
T get(std::istream& in) {
    T v{};
    in.read(reinterpret_cast<char*>(&v), sizeof v);
    if (!in) throw ParseError(ParseError::Kind::bad_header, "truncated checkpoint");
    return v;
}

}  // namespace

void Model::save(const std::filesystem::path& path) const {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw Error("cannot write checkpoint '" + path.string() + "'");
    out.write(kMagic, sizeof kMagic);
    put<std::uint32_t>(out, kVersion);
    const std::string cfg = model_config_to_json(config_);
    put<std::uint64_t>(out, cfg.size());
    out.write(cfg.data(), static_cast<std::streamsize>(cfg.size()));
    const auto params = params_.list();
    put<std::uint64_t>(out, params.size());
    for (const auto* p : params) {
        put<std::uint32_t>(out, static_cast<std::uint32_t>(p->name.size()));
        out.write(p->name.data(), static_cast<std::streamsize>(p->name.size()));
        put<std::uint32_t>(out, static_cast<std::uint32_t>(p->value.rank()));
        for (std::size_t d : p->value.shape()) put<std::uint64_t>(out, d);
        out.write(reinterpret_cast<const char*>(p->value.data().data()),
                  static_cast<std::streamsize>(p->value.size() * sizeof(double)));
    }
    if (!out) throw Error("failed writing checkpoint '" + path.string() + "'");
}

Model Model::load(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ParseError(ParseError::Kind::missing_file, "cannot open checkpoint '" + path.string() + "'");
    char magic[8];
    in.read(magic, sizeof magic);
    if (!in || std::memcmp(magic, kMagic, sizeof magic) != 0) {
        throw ParseError(ParseError::Kind::bad_header, "'" + path.string() + "' is not a checkpoint");
    }
    if (get<std::uint32_t>(in) != kVersion) throw ParseError(ParseError::Kind::bad_header, "unsupported checkpoint version");
    std::string cfg(get<std::uint64_t>(in), '\0');
    in.read(cfg.data(), static_cast<std::streamsize>(cfg.size()));
    ModelConfig config = model_config_from_json(cfg);
    Model model = create(config, 0);
    auto params = model.params_.list();
    const auto count = get<std::uint64_t>(in);
    if (count != params.size()) throw ParseError(ParseError::Kind::bad_header, "checkpoint parameter count mismatch");
    for (auto* p : params) {
        std::string name(get<std::uint32_t>(in), '\0');
        in.read(name.data(), static_cast<std::streamsize>(name.size()));
        if (name != p->name) throw ParseError(ParseError::Kind::bad_header, "checkpoint has '" + name + "', expected '" + p->name + "'");
        Shape shape(get<std::uint32_t>(in));
        for (auto& d : shape) d = get<std::uint64_t>(in);
        if (shape != p->value.shape()) throw ParseError(ParseError::Kind::bad_header, "shape mismatch for '" + name + "'");
        in.read(reinterpret_cast<char*>(p->value.data().data()), static_cast<std::streamsize>(p->value.size() * sizeof(double)));
        if (!in) throw ParseError(ParseError::Kind::bad_header, "truncated checkpoint");
        p->zero_grad();
    }
    return model;
}

std::string model_config_to_json(const ModelConfig& c) {
    json j = {
        {"patch", {{"context", c.patch.context}, {"patch_len", c.patch.patch_len}, {"stride", c.patch.stride},
                   {"embed_dim", c.patch.embed_dim}}},
        {"attention", {{"heads", c.attention.heads}, {"routers", c.routers}, {"ff_dim", c.cvpe_ff_dim}}},
        {"reprogram", {{"prototypes", c.prototypes}}},
        {"backbone", {{"layers", c.backbone.layers}, {"d_llm", c.backbone.d_llm}, {"heads", c.backbone.heads},
                      {"d_ff", c.backbone.d_ff}}},
        {"horizon", c.horizon},
        {"variant", to_string(c.variant)},
    };
    return j.dump(2);
}

ModelConfig model_config_from_json(const std::string& text) {
    json j = json::parse(text);
    ModelConfig c;
    c.patch.context = j.at("patch").at("context");
    c.patch.patch_len = j.at("patch").at("patch_len");
    c.patch.stride = j.at("patch").at("stride");
    c.patch.embed_dim = j.at("patch").at("embed_dim");
    c.attention.heads = j.at("attention").at("heads");
    c.routers = j.at("attention").at("routers");
    c.cvpe_ff_dim = j.at("attention").at("ff_dim");
    c.prototypes = j.at("reprogram").at("prototypes");
    c.backbone.layers = j.at("backbone").at("layers");
    c.backbone.d_llm = j.at("backbone").at("d_llm");
    c.backbone.heads = j.at("backbone").at("heads");
    c.backbone.d_ff = j.at("backbone").at("d_ff");
    c.horizon = j.at("horizon");
    c.variant = parse_variant(j.at("variant"));
    return c;
}

}  // namespace cvpe::model
