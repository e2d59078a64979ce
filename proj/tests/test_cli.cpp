#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "cvpe/cli.hpp"
#include "cvpe/errors.hpp"

using namespace cvpe;
namespace fs = std::filesystem;

namespace {

fs::path write_temp(const std::string& name, const std::string& text) {
    auto p = fs::temp_directory_path() / name;
    std::ofstream(p) << text;
    return p;
}

std::string problems_of(const std::string& json) {
    try {
        config::parse(json);
    } catch (const ConfigError& e) {
        return e.what();
    }
    return {};
}

// Hourly ETT-shaped file: 7 numeric channels with OT last.
fs::path write_ett_like(std::size_t rows) {
    auto p = fs::temp_directory_path() / "cvpe_test_etth.csv";
    std::ofstream f(p);
    f << "date,HUFL,HULL,MUFL,MULL,LUFL,LULL,OT\n";
    for (std::size_t r = 0; r < rows; ++r) {
        const std::size_t day = r / 24, hour = r % 24;
        f << "2016-07-" << (1 + day % 28) << ' ' << hour << ":00:00";
        for (int c = 0; c < 7; ++c) f << ',' << std::sin(0.01 * static_cast<double>(r * (c + 1))) + 0.1 * c;
        f << '\n';
    }
    return p;
}

}  // namespace

TEST_CASE("config json round trip is a fixed point") {
    config::RunConfig c;
    c.select_k = 4;
    c.dataset.synthetic.length = 3000;
    c.split = data::SplitSpec::explicit_bounds(2000, 2500, 3000);
    c.variants = {model::EmbeddingVariant::cvpe};
    c.dataset.synthetic.coupling = 0.25;
    c.train.lr = 3e-4;
    const auto text = config::to_json(c);
    CHECK(config::to_json(config::parse(text)) == text);
    const auto defaults = config::to_json(config::RunConfig{});
    CHECK(config::to_json(config::parse(defaults)) == defaults);
}

TEST_CASE("config parsing reports every problem") {
    auto msg = problems_of(R"({"patch": {"embed_dim": 30}, "attention": {"heads": 4}})");
    CHECK(msg.find("attention.heads") != std::string::npos);
    CHECK(msg.find("patch.embed_dim") != std::string::npos);

    msg = problems_of(R"({"patch": {"embed_dim": 30}, "horizons": [], "colour": 1, "train": {"lr": "fast"}})");
    CHECK(msg.find("colour") != std::string::npos);
    CHECK(msg.find("train.lr") != std::string::npos);
    CHECK(msg.find("horizons") != std::string::npos);
    CHECK(msg.find("patch.embed_dim") != std::string::npos);

    CHECK(problems_of("{not json").find("json") != std::string::npos);
    CHECK_THROWS_AS(config::parse(R"({"dataset": {"source": "parquet"}})"), ConfigError);
    CHECK(problems_of("{}").empty());
}

TEST_CASE("gradcheck command passes and flags an injected fault") {
    for (std::uint64_t seed : {0u, 3u}) {
        cli::GradCheckRequest req;
        req.seed = seed;
        std::ostringstream out, err;
        const int code = cli::cmd_gradcheck(req, out, err);
        const bool passed = cli::run_gradcheck(req).passed;
        CHECK(code == (passed ? cli::kOk : cli::kCheckFailed));
        CHECK(out.str().find(passed ? "PASS" : "FAIL") != std::string::npos);
        CHECK(out.str().find("cvpe.routers") != std::string::npos);
    }

    cli::GradCheckRequest bad;
    bad.inject_fault = "cvpe.routers";
    std::ostringstream out2, err2;
    CHECK(cli::cmd_gradcheck(bad, out2, err2) == cli::kCheckFailed);
    CHECK(out2.str().find("FAIL") != std::string::npos);

    auto report = cli::run_gradcheck(bad);
    for (const auto& e : report.entries) {
        if (e.name == "cvpe.routers") CHECK(e.max_rel_error == doctest::Approx(1.0).epsilon(1e-3));
    }
}

TEST_CASE("prepare reports synthetic coupling diagnostics") {
    auto path = write_temp("cvpe_test_prepare.json", R"({"dataset": {"synthetic": {"length": 1000}}, "horizons": [8]})");
    std::ostringstream out, err;
    CHECK(cli::cmd_prepare(path.string(), out, err) == cli::kOk);
    CHECK(out.str().find("channels: 8") != std::string::npos);
    CHECK(out.str().find("split lengths (train, val, test): 700, 100, 200") != std::string::npos);
    CHECK(out.str().find("mean |r(target, driver)|") != std::string::npos);

    std::ostringstream out2, err2;
    CHECK(cli::cmd_prepare("/nonexistent/cvpe.json", out2, err2) == cli::kValidation);
    CHECK_FALSE(err2.str().empty());
}

TEST_CASE("prepare on an hourly ETT-shaped file uses the 12/4/4 month split") {
    auto csv = write_ett_like(17420);
    auto cfg = write_temp("cvpe_test_ett.json", R"({"dataset": {"name": "ETTh1", "source": "csv", "path": ")" +
                                                   csv.generic_string() +
                                                   R"("}, "split": {"protocol": "ett_hourly"},
                                                   "patch": {"context": 256, "patch_len": 16, "stride": 8, "embed_dim": 16},
                                                   "horizons": [96]})");
    std::ostringstream out, err;
    REQUIRE(cli::cmd_prepare(cfg.string(), out, err) == cli::kOk);
    CHECK(out.str().find("channels: 7") != std::string::npos);
    CHECK(out.str().find("split lengths (train, val, test): 8640, 2880, 2880") != std::string::npos);
}

TEST_CASE("output directory override from the environment") {
    auto path = write_temp("cvpe_test_env.json", R"({"output_dir": "somewhere"})");
    ::setenv(cli::kOutputDirEnv, "/tmp/cvpe_env_dir", 1);
    CHECK(cli::load_config(path.string()).output_dir == fs::path("/tmp/cvpe_env_dir"));
    ::unsetenv(cli::kOutputDirEnv);
    CHECK(cli::load_config(path.string()).output_dir == fs::path("somewhere"));
}

TEST_CASE("command line dispatch and exit codes") {
    auto call = [](std::vector<std::string> args, std::string* text = nullptr) {
        args.insert(args.begin(), "cvpe");
        std::vector<char*> argv;
        for (auto& a : args) argv.push_back(a.data());
        std::ostringstream out, err;
        int code = cli::run(static_cast<int>(argv.size()), argv.data(), out, err);
        if (text) *text = out.str() + err.str();
        return code;
    };
    CHECK(call({"frobnicate"}) == cli::kValidation);
    CHECK(call({"gradcheck", "--inject-fault"}) == cli::kCheckFailed);
    auto bad = write_temp("cvpe_test_bad.json", R"({"attention": {"heads": 3}})");
    std::string text;
    CHECK(call({"prepare", bad.string()}, &text) == cli::kValidation);
    CHECK(text.find("attention.heads") != std::string::npos);

    auto dir = fs::temp_directory_path() / "cvpe_test_cli_exp";
    fs::remove_all(dir);
    auto cfg = write_temp("cvpe_test_exp.json", R"({
        "dataset": {"synthetic": {"n_channels": 3, "length": 300}},
        "patch": {"context": 16, "patch_len": 4, "stride": 2, "embed_dim": 8},
        "attention": {"heads": 2, "routers": 2}, "reprogram": {"prototypes": 8},
        "backbone": {"layers": 1, "d_llm": 8, "heads": 2, "d_ff": 16},
        "train": {"epochs": 1, "batch_size": 32}, "horizons": [4], "seeds": [0],
        "output_dir": ")" + dir.generic_string() + R"("})");
    CHECK(call({"experiment", cfg.string()}) == cli::kOk);
    CHECK(fs::exists(dir / "report.csv"));
    CHECK(call({"experiment", cfg.string()}) == cli::kValidation);  // refuses to overwrite
    CHECK(call({"experiment", cfg.string(), "--overwrite"}) == cli::kOk);

    auto ckpt = (dir / "m.ckpt").string();
    CHECK(call({"train", cfg.string(), "--variant", "cvpe", "--checkpoint", ckpt}) == cli::kOk);
    CHECK(call({"evaluate", cfg.string(), "--checkpoint", ckpt}, &text) == cli::kOk);
    CHECK(text.find("mse") != std::string::npos);
    CHECK(call({"evaluate", cfg.string(), "--checkpoint", (dir / "missing.ckpt").string()}) != cli::kOk);
}
