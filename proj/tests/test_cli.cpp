#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <filesystem>
#include <sstream>

#include "json.hpp"

#include "bdlab/io.hpp"
#include "bdlab/pipeline.hpp"

using namespace bdlab;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

json tiny_config() {
    return json::parse(R"({
      "name": "tiny",
      "seed": 3,
      "metric_seed": 4,
      "schedule": {"kind": "linear", "T": 100},
      "data": {"kind": "mixture2d", "modes": 2, "center_mode": false, "mode_sd": 0.1,
               "subject_sd": 0.05, "subject_angle": 0.3},
      "model": {"width": 16, "time_dim": 8},
      "pretrain": {"iterations": 60, "batch": 16, "log_every": 20},
      "finetune": {"pretrained": "pre/pretrained.bdl", "iterations": 50, "cadence": 10},
      "eval": {"samples": 8, "sampler_steps": 10, "loss_grid": 3},
      "probe": {"steps": 10, "draws": 4, "t_start": 100, "t": 20}
    })");
}

struct Workspace {
    fs::path root;
    explicit Workspace(const std::string& name) : root(fs::temp_directory_path() / name) {
        fs::remove_all(root);
        fs::create_directories(root);
    }
    ~Workspace() { fs::remove_all(root); }

    fs::path write_config(const json& j, const std::string& file = "config.json") const {
        atomic_write_file(root / file, j.dump(2));
        return root / file;
    }
};

CommandOptions opts(const fs::path& config, const fs::path& out) {
    CommandOptions o;
    o.config = config;
    o.out = out;
    return o;
}

int run(int (*cmd)(const CommandOptions&, std::ostream&, std::ostream&), const CommandOptions& o,
        std::string* text = nullptr) {
    std::ostringstream out, err;
    const int code = cmd(o, out, err);
    if (text) *text = out.str() + err.str();
    return code;
}

}  // namespace

TEST_CASE("configuration problems exit with code 2") {
    Workspace w("bdlab_cli_cfg");
    std::string text;
    CHECK(run(cmd_pretrain, opts(w.root / "missing.json", w.root / "o"), &text) == kExitConfig);
    CHECK(text.find("missing.json") != std::string::npos);

    json bad = tiny_config();
    bad["finetune"]["lambda"] = -0.5;
    CHECK(run(cmd_finetune, opts(w.write_config(bad), w.root / "o"), &text) == kExitConfig);
    CHECK(text.find("finetune.lambda") != std::string::npos);

    // Pretrained checkpoint has not been produced yet.
    CHECK(run(cmd_finetune, opts(w.write_config(tiny_config()), w.root / "o"), &text) == kExitConfig);
    CHECK(text.find("finetune.pretrained") != std::string::npos);

    CommandOptions p = opts(w.write_config(tiny_config()), w.root / "o");
    p.probe_kind = "sideways";
    CHECK(run(cmd_probe, p, &text) == kExitConfig);
    CHECK(text.find("sideways") != std::string::npos);

    atomic_write_file(w.root / "bad.csv", "iteration,score\n1,2\n");
    CommandOptions r;
    r.csvs = {w.root / "bad.csv"};
    r.out = w.root / "rep";
    CHECK(run(cmd_report, r, &text) == kExitConfig);
}

TEST_CASE("pipeline end to end with reproducible artifacts") {
    Workspace w("bdlab_cli_e2e");
    const fs::path cfg = w.write_config(tiny_config());
    REQUIRE(run(cmd_pretrain, opts(cfg, w.root / "pre")) == kExitOk);
    CHECK(fs::exists(w.root / "pre" / "pretrain_loss.csv"));

    CommandOptions off = opts(cfg, w.root / "off");
    off.overrides.bnn = false;
    std::string text;
    INFO(text);
    REQUIRE(run(cmd_finetune, off, &text) == kExitOk);
    CHECK(text.find("checkpoints") != std::string::npos);
    const json m = json::parse(read_file(w.root / "off" / "manifest.json"));
    CHECK(m["finetune"]["variational_parameters"] == 0);
    CHECK(m["stages"]["finetune"]["status"] == "done");
    CHECK(m["config_hash"].is_string());

    CommandOptions on = opts(cfg, w.root / "on");
    on.overrides.bnn = true;
    on.overrides.lambda = 0.01;
    REQUIRE(run(cmd_finetune, on) == kExitOk);
    const json mo = json::parse(read_file(w.root / "on" / "manifest.json"));
    CHECK(mo["finetune"]["variational_parameters"].get<int>() > 0);
    CHECK(mo["finetune"]["lambda"] == 0.01);
    CHECK(mo["config_hash"] != m["config_hash"]);

    // A second run into a fresh directory reproduces every byte.
    REQUIRE(run(cmd_finetune, opts(cfg, w.root / "again")) == kExitOk);
    REQUIRE(run(cmd_finetune, opts(cfg, w.root / "again2")) == kExitOk);
    for (const auto& entry : fs::directory_iterator(w.root / "again")) {
        const fs::path twin = w.root / "again2" / entry.path().filename();
        REQUIRE(fs::exists(twin));
        CHECK(read_file(entry.path()) == read_file(twin));
    }

    CommandOptions probe = opts(cfg, w.root / "probe");
    probe.checkpoint = w.root / "off" / "ckpt_000050.bdl";
    probe.probe_kind = "scale";
    REQUIRE(run(cmd_probe, probe, &text) == kExitOk);
    const std::string lines = read_file(w.root / "probe" / "probe_scale.jsonl");
    CHECK(std::count(lines.begin(), lines.end(), '\n') == 4);
    for (const char* kind : {"zero", "delta"}) {
        probe.probe_kind = kind;
        CHECK(run(cmd_probe, probe) == kExitOk);
    }
    probe.checkpoint = w.root / "off" / "nope.bdl";
    CHECK(run(cmd_probe, probe) == kExitConfig);

    CommandOptions r;
    r.csvs = {w.root / "off" / "metrics.csv", w.root / "on" / "metrics.csv"};
    r.out = w.root / "rep";
    REQUIRE(run(cmd_report, r, &text) == kExitOk);
    CHECK(text.find("bnn-off") != std::string::npos);
    CHECK(text.find("bnn-on") != std::string::npos);
    CHECK(fs::exists(w.root / "rep" / "report_table.csv"));
    CHECK(fs::exists(w.root / "rep" / "report_long.csv"));
}

TEST_CASE("report on a monotone series finds nothing") {
    Workspace w("bdlab_cli_rep");
    std::vector<MetricsRow> rows(6);
    for (std::size_t i = 0; i < rows.size(); ++i) {
        rows[i].iteration = static_cast<std::int64_t>(100 * i);
        rows[i].fidelity = 0.1 * static_cast<double>(i);
        rows[i].quality = 1.0;
    }
    atomic_write_file(w.root / "metrics.csv", metrics_csv(rows));
    CommandOptions r;
    r.csvs = {w.root / "metrics.csv"};
    r.out = w.root;
    std::string text;
    REQUIRE(run(cmd_report, r, &text) == kExitOk);
    CHECK(text.find("no corruption detected") != std::string::npos);

    rows.resize(3);
    atomic_write_file(w.root / "short.csv", metrics_csv(rows));
    r.csvs = {w.root / "short.csv"};
    CHECK(run(cmd_report, r) == kExitConfig);
}

TEST_CASE("summaries use the sample standard deviation") {
    std::vector<SeriesSummary> s(2);
    s[0].arm = s[1].arm = "x";
    s[0].dip_depth = 1.0;
    s[1].dip_depth = 3.0;
    s[0].detected = true;
    const auto arms = summarize_arms(s);
    REQUIRE(arms.size() == 1);
    CHECK(arms[0].runs == 2);
    CHECK(arms[0].detected == 1);
    CHECK(arms[0].dip_mean == doctest::Approx(2.0));
    CHECK(arms[0].dip_std == doctest::Approx(std::sqrt(2.0)));
}
