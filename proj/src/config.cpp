#include "bdlab/config.hpp"

#include <cmath>
#include <limits>
#include <set>

#include "bdlab/errors.hpp"
#include "bdlab/io.hpp"

namespace bdlab {

using nlohmann::json;

namespace {

class Section {
public:
    Section(const json& j, std::string path) : j_(j), path_(std::move(path)) {
        if (!j_.is_object()) fail(path_.empty() ? "<root>" : path_, "expected an object");
    }

    bool has(const std::string& key) {
        known_.insert(key);
        return j_.contains(key);
    }

    double number(const std::string& key, double def) {
        if (!has(key)) return def;
        const json& v = j_.at(key);
        if (!v.is_number()) fail(field(key), "expected a number");
        return v.get<double>();
    }

    double positive(const std::string& key, double def) {
        const double v = number(key, def);
        if (!(v > 0.0) || !std::isfinite(v)) fail(field(key), "must be a positive finite number");
        return v;
    }

    double non_negative(const std::string& key, double def) {
        const double v = number(key, def);
        if (!(v >= 0.0) || !std::isfinite(v)) fail(field(key), "must be a non-negative finite number");
        return v;
    }

    long long integer(const std::string& key, long long def, long long lo,
                      long long hi = std::numeric_limits<int>::max()) {
        if (!has(key)) return def;
        const json& v = j_.at(key);
        if (!v.is_number_integer()) fail(field(key), "expected an integer");
        const long long x = v.get<long long>();
        if (x < lo || x > hi) {
            fail(field(key), "must lie in [" + std::to_string(lo) + ", " + std::to_string(hi) + "], got " +
                                 std::to_string(x));
        }
        return x;
    }

    std::uint64_t seed(const std::string& key) {
        if (!has(key)) fail(field(key), "missing; seeds must be given explicitly");
        return seed_value(key);
    }

    std::uint64_t seed_or(const std::string& key, std::uint64_t def) { return has(key) ? seed_value(key) : def; }

    bool boolean(const std::string& key, bool def) {
        if (!has(key)) return def;
        const json& v = j_.at(key);
        if (!v.is_boolean()) fail(field(key), "expected true or false");
        return v.get<bool>();
    }

    std::string string(const std::string& key, const std::string& def) {
        if (!has(key)) return def;
        const json& v = j_.at(key);
        if (!v.is_string()) fail(field(key), "expected a string");
        return v.get<std::string>();
    }

    template <class F>
    auto parsed(const std::string& key, const std::string& def, F&& parse) {
        const std::string s = string(key, def);
        try {
            return parse(s);
        } catch (const ConfigError& e) {
            fail(field(key), e.what());
        }
    }

    std::vector<double> numbers(const std::string& key, std::vector<double> def) {
        if (!has(key)) return def;
        const json& v = j_.at(key);
        if (!v.is_array() || v.empty()) fail(field(key), "expected a non-empty array of numbers");
        std::vector<double> out;
        for (const auto& e : v) {
            if (!e.is_number()) fail(field(key), "expected a non-empty array of numbers");
            out.push_back(e.get<double>());
        }
        return out;
    }

    std::vector<std::size_t> indices(const std::string& key, std::vector<std::size_t> def) {
        if (!has(key)) return def;
        const json& v = j_.at(key);
        if (!v.is_array() || v.empty()) fail(field(key), "expected a non-empty array of indices");
        std::vector<std::size_t> out;
        for (const auto& e : v) {
            if (!e.is_number_unsigned()) fail(field(key), "expected non-negative integer indices");
            out.push_back(e.get<std::size_t>());
        }
        return out;
    }

    Section child(const std::string& key) {
        known_.insert(key);
        static const json empty = json::object();
        return Section(j_.contains(key) ? j_.at(key) : empty, field(key));
    }

    void finish() const {
        for (const auto& [k, v] : j_.items()) {
            if (!known_.count(k)) fail(field(k), "unknown field");
        }
    }

    std::string field(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }

    [[noreturn]] static void fail(const std::string& field, const std::string& msg) {
        throw ConfigError("config field '" + field + "': " + msg);
    }

private:
    std::uint64_t seed_value(const std::string& key) {
        const json& v = j_.at(key);
        if (!v.is_number_unsigned()) fail(field(key), "expected a non-negative integer seed");
        return v.get<std::uint64_t>();
    }

    const json& j_;
    std::string path_;
    std::set<std::string> known_;
};

DataSpec parse_data(Section s) {
    DataSpec d;
    d.kind = s.parsed("kind", "mixture2d", data_kind_from_string);
    d.modes = static_cast<int>(s.integer("modes", d.modes, 1, 64));
    d.radius = s.positive("radius", d.radius);
    d.mode_sd = s.positive("mode_sd", d.mode_sd);
    d.center_mode = s.boolean("center_mode", d.center_mode);
    d.side = static_cast<int>(s.integer("side", d.side, 2, 64));
    d.raster_classes = static_cast<int>(s.integer("raster_classes", d.raster_classes, 1, 64));
    d.amp_base = s.positive("amp_base", d.amp_base);
    d.amp_jitter = s.non_negative("amp_jitter", d.amp_jitter);
    d.width_base = s.positive("width_base", d.width_base);
    d.width_jitter = s.non_negative("width_jitter", d.width_jitter);
    d.centre_jitter = s.non_negative("centre_jitter", d.centre_jitter);
    d.subject_label = static_cast<int>(s.integer("subject_label", d.subject_label, 0, d.num_classes() - 1));
    d.subject_angle = s.number("subject_angle", d.subject_angle);
    d.subject_sd = s.non_negative("subject_sd", d.subject_sd);
    d.pool_seed = s.seed_or("pool_seed", d.pool_seed);
    d.pool_size = static_cast<std::size_t>(s.integer("pool_size", static_cast<long long>(d.pool_size), 1, 4096));
    d.few_shot_indices = s.indices("few_shot_indices", d.few_shot_indices);
    if (d.few_shot_indices.size() > 16) Section::fail(s.field("few_shot_indices"), "at most 16 few-shot samples");
    for (std::size_t i : d.few_shot_indices) {
        if (i >= d.pool_size) {
            Section::fail(s.field("few_shot_indices"),
                          "index " + std::to_string(i) + " exceeds pool_size " + std::to_string(d.pool_size));
        }
    }
    s.finish();
    return d;
}

AdapterSpec parse_adapter(Section s) {
    AdapterSpec a;
    const std::string variant = s.string("variant", "full");
    if (variant == "full") {
        a.variant = FullVariant{};
    } else if (variant == "lora") {
        a.variant = LoRAVariant{static_cast<int>(s.integer("rank", 4, 1, 4096))};
    } else if (variant == "oft") {
        a.variant = OFTVariant{static_cast<int>(s.integer("block", 0, 0, 4096))};
    } else {
        Section::fail(s.field("variant"), "expected full, lora or oft, got '" + variant + "'");
    }
    s.has("rank");
    s.has("block");
    a.bayesian = s.boolean("bayesian", a.bayesian);
    a.placement = s.parsed("placement", to_string(a.placement), placement_from_string);
    a.sigma_init = s.positive("sigma_init", a.sigma_init);
    a.prior_sigma = s.positive("prior_sigma", a.prior_sigma);
    s.finish();
    return a;
}

}  // namespace

std::vector<std::string> probe_kinds() { return {"zero", "delta", "scale"}; }

std::string ExperimentConfig::hash() const { return content_hash(effective.dump()); }

ExperimentConfig parse_experiment_config(const json& j, const std::filesystem::path& base_dir) {
    ExperimentConfig c;
    Section root(j, "");
    c.name = root.string("name", "experiment");
    if (c.name.empty()) Section::fail("name", "must not be empty");
    c.seed = root.seed("seed");
    c.metric_seed = root.seed("metric_seed");
    c.output_dir = root.string("output_dir", "");

    {
        Section s = root.child("schedule");
        c.schedule_kind = s.parsed("kind", "linear", schedule_kind_from_string);
        c.T = static_cast<int>(s.integer("T", 1000, 2, 100000));
        s.finish();
    }
    c.data = parse_data(root.child("data"));
    {
        Section s = root.child("model");
        c.arch.width = static_cast<std::size_t>(s.integer("width", 128, 1, 4096));
        c.arch.time_dim = static_cast<std::size_t>(s.integer("time_dim", 32, 2, 4096));
        if (c.arch.time_dim % 2 != 0) Section::fail("model.time_dim", "must be even");
        s.finish();
        c.arch.dim = c.data.dim();
        c.arch.num_labels = static_cast<std::size_t>(c.data.num_labels());
    }
    {
        Section s = root.child("pretrain");
        PretrainConfig& p = c.pretrain;
        p.seed = s.seed_or("seed", c.seed);
        p.lr = s.positive("lr", p.lr);
        p.iterations = static_cast<int>(s.integer("iterations", p.iterations, 1));
        p.batch = static_cast<std::size_t>(s.integer("batch", static_cast<long long>(p.batch), 1, 1 << 20));
        p.label_dropout = s.non_negative("label_dropout", p.label_dropout);
        if (p.label_dropout > 1.0) Section::fail("pretrain.label_dropout", "must lie in [0, 1]");
        p.log_every = static_cast<int>(s.integer("log_every", p.log_every, 1));
        s.finish();
    }
    {
        Section s = root.child("finetune");
        TrainConfig& t = c.train;
        t.seed = c.seed;
        const std::string pre = s.string("pretrained", "");
        if (!pre.empty()) {
            const std::filesystem::path p(pre);
            c.pretrained = p.is_absolute() ? p : base_dir / p;
        }
        t.lr = s.non_negative("lr", 0.0);
        t.iterations = static_cast<int>(s.integer("iterations", 0, 0));
        t.batch = static_cast<std::size_t>(s.integer("batch", 1, 1, 1 << 20));
        t.lambda = s.non_negative("lambda", 0.0);
        t.cadence = static_cast<int>(s.integer("cadence", 0, 0));
        t.cosine_decay = s.boolean("cosine_decay", false);
        t.stop_below = s.non_negative("stop_below", 0.0);
        t.prior.enabled = s.boolean("prior_enabled", false);
        t.prior.weight = s.non_negative("prior_weight", 1.0);
        t.prior.count = static_cast<std::size_t>(s.integer("prior_count", 0, 0, 1 << 20));
        if (t.prior.enabled && t.prior.count == 0) {
            Section::fail("finetune.prior_count", "must be positive when prior_enabled is true");
        }
        s.finish();
    }
    c.train.adapter = parse_adapter(root.child("adapter"));
    {
        Section s = root.child("eval");
        EvalConfig& e = c.eval;
        e.metric_seed = c.metric_seed;
        e.enabled = s.boolean("enabled", true);
        e.samples = static_cast<std::size_t>(s.integer("samples", static_cast<long long>(e.samples), 2, 1 << 20));
        e.sampler_steps = static_cast<int>(s.integer("sampler_steps", std::min(e.sampler_steps, c.T), 1, c.T));
        e.sigma1_t = static_cast<int>(s.integer("sigma1_t", std::min(e.sigma1_t, c.T / 2 > 0 ? c.T / 2 : 1), 1, c.T));
        e.sigma1_samples =
            static_cast<std::size_t>(s.integer("sigma1_samples", static_cast<long long>(e.sigma1_samples), 1, 1 << 20));
        e.loss_grid = static_cast<std::size_t>(s.integer("loss_grid", static_cast<long long>(e.loss_grid), 1, c.T));
        e.raster_side = c.data.raster_side();
        s.finish();
    }
    {
        Section s = root.child("probe");
        ProbeSpec& p = c.probe;
        p.kind = s.string("kind", p.kind);
        p.t_start = static_cast<int>(s.integer("t_start", std::min(p.t_start, c.T), 1, c.T));
        p.steps = static_cast<int>(s.integer("steps", std::min(p.steps, c.T), 1, c.T));
        p.t = static_cast<int>(s.integer("t", std::min(p.t, c.T), 1, c.T));
        p.ks = s.numbers("ks", p.ks);
        p.region_fraction = s.number("region_fraction", p.region_fraction);
        if (!(p.region_fraction > 0.0 && p.region_fraction <= 1.0)) {
            Section::fail("probe.region_fraction", "must lie in (0, 1]");
        }
        p.magnitude = s.non_negative("magnitude", p.magnitude);
        p.draws = static_cast<std::size_t>(s.integer("draws", static_cast<long long>(p.draws), 1, 1 << 20));
        s.finish();
    }
    root.finish();
    c.effective = j;
    return c;
}

ExperimentConfig load_experiment_config(const std::filesystem::path& path) {
    if (!std::filesystem::is_regular_file(path)) throw ConfigError("config file not found: " + path.string());
    json j;
    try {
        j = json::parse(read_file(path));
    } catch (const json::exception& e) {
        throw ConfigError("config " + path.string() + " is not valid JSON: " + e.what());
    }
    return parse_experiment_config(j, path.parent_path());
}

json apply_overrides(json j, const Overrides& o) {
    if (!j.is_object()) throw ConfigError("config field '<root>': expected an object");
    if (o.seed) j["seed"] = *o.seed;
    if (o.lambda) {
        if (!(*o.lambda >= 0.0) || !std::isfinite(*o.lambda)) throw ConfigError("override --lambda must be >= 0");
        if (!j.contains("finetune")) j["finetune"] = json::object();
        if (!j["finetune"].is_object()) throw ConfigError("config field 'finetune': expected an object");
        j["finetune"]["lambda"] = *o.lambda;
    }
    if (o.bnn) {
        if (!j.contains("adapter")) j["adapter"] = json::object();
        if (!j["adapter"].is_object()) throw ConfigError("config field 'adapter': expected an object");
        j["adapter"]["bayesian"] = *o.bnn;
    }
    return j;
}

}  // namespace bdlab
