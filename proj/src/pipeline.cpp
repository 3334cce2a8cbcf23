#include "bdlab/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>
#include <sstream>

#include "bdlab/analytic.hpp"
#include "bdlab/checkpoint.hpp"
#include "bdlab/errors.hpp"
#include "bdlab/io.hpp"
#include "bdlab/metrics.hpp"

namespace bdlab {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

template <class F>
int guarded(std::ostream& err, F&& body) {
    try {
        return body();
    } catch (const ConfigError& e) {
        err << "configuration error: " << e.what() << '\n';
        return kExitConfig;
    } catch (const json::exception& e) {
        err << "configuration error: " << e.what() << '\n';
        return kExitConfig;
    } catch (const TrainingDiverged& e) {
        err << "training failure: " << e.what() << '\n';
        return kExitNumeric;
    } catch (const NumericError& e) {
        err << "numeric failure: " << e.what() << '\n';
        return kExitNumeric;
    } catch (const SingularityError& e) {
        err << "numeric failure: " << e.what() << '\n';
        return kExitNumeric;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << '\n';
        return kExitFailure;
    }
}

ExperimentConfig load_config(const CommandOptions& o) {
    if (o.config.empty()) throw ConfigError("--config is required");
    if (!fs::is_regular_file(o.config)) throw ConfigError("config file not found: " + o.config.string());
    json raw;
    try {
        raw = json::parse(read_file(o.config));
    } catch (const json::exception& e) {
        throw ConfigError("config " + o.config.string() + " is not valid JSON: " + e.what());
    }
    return parse_experiment_config(apply_overrides(std::move(raw), o.overrides), o.config.parent_path());
}

fs::path output_dir(const CommandOptions& o, const ExperimentConfig& c) {
    fs::path dir;
    if (o.out) {
        dir = *o.out;
    } else if (!c.output_dir.empty()) {
        dir = c.output_dir;
    } else {
        throw ConfigError("no output directory: pass --out or set output_dir");
    }
    fs::create_directories(dir);
    return dir;
}

// Stage-by-stage manifest; rewritten atomically at every boundary.
class Manifest {
public:
    Manifest(fs::path dir, const ExperimentConfig& c) : path_(std::move(dir) / "manifest.json") {
        if (fs::is_regular_file(path_)) {
            try {
                j_ = json::parse(read_file(path_));
            } catch (const json::exception&) {
                j_ = json::object();
            }
        }
        if (!j_.is_object()) j_ = json::object();
        j_["name"] = c.name;
        j_["config_hash"] = c.hash();
        j_["config"] = c.effective;
        j_["versions"] = {{"bdlab", kVersion}, {"checkpoint_format", 1}, {"manifest", 1}};
        j_["seeds"] = {{"seed", c.seed},
                       {"metric_seed", c.metric_seed},
                       {"pretrain_seed", c.pretrain.seed},
                       {"pool_seed", c.data.pool_seed}};
        if (!j_.contains("stages")) j_["stages"] = json::object();
        if (!j_.contains("outputs")) j_["outputs"] = json::object();
    }

    void stage(const std::string& name, const std::string& status, const std::string& message = "") {
        json s = {{"status", status}};
        if (!message.empty()) s["message"] = message;
        j_["stages"][name] = s;
        write();
    }

    void output(const std::string& file, const std::string& bytes) { j_["outputs"][file] = content_hash(bytes); }

    json& at(const std::string& key) { return j_[key]; }

    void write() const { atomic_write_file(path_, j_.dump(2) + "\n"); }

private:
    fs::path path_;
    json j_ = json::object();
};

template <class F>
auto run_stage(Manifest& m, const std::string& name, F&& body) {
    m.stage(name, "running");
    try {
        return body();
    } catch (const std::exception& e) {
        m.stage(name, "failed", e.what());
        throw;
    }
}

int subject_label(const ExperimentConfig& c) { return c.data.subject_label; }

double mean_of(const std::vector<double>& v) {
    double s = 0.0;
    for (double x : v) s += x;
    return v.empty() ? 0.0 : s / static_cast<double>(v.size());
}

double std_of(const std::vector<double>& v) {
    if (v.size() < 2) return 0.0;
    const double m = mean_of(v);
    double s = 0.0;
    for (double x : v) s += (x - m) * (x - m);
    return std::sqrt(s / static_cast<double>(v.size() - 1));
}

}  // namespace

int cmd_pretrain(const CommandOptions& o, std::ostream& out, std::ostream& err) {
    return guarded(err, [&] {
        const ExperimentConfig c = load_config(o);
        const fs::path dir = output_dir(o, c);
        Manifest m(dir, c);
        std::vector<MetricsRow> log;
        const DenoiserModel model =
            run_stage(m, "pretrain", [&] { return pretrain(c.data, c.arch, c.schedule(), c.pretrain, &log); });

        const std::string ckpt = serialize_checkpoint(model, {{"stage", "pretrain"}, {"config_hash", c.hash()}});
        atomic_write_file(dir / "pretrained.bdl", ckpt);
        const std::string csv = metrics_csv(log);
        atomic_write_file(dir / "pretrain_loss.csv", csv);
        m.output("pretrained.bdl", ckpt);
        m.output("pretrain_loss.csv", csv);
        m.stage("pretrain", "done");
        out << "pretrain: " << c.pretrain.iterations << " iterations, final loss "
            << (log.empty() ? std::string("n/a") : format_double(log.back().l_dm)) << ", checkpoint "
            << (dir / "pretrained.bdl").string() << '\n';
        return static_cast<int>(kExitOk);
    });
}

int cmd_finetune(const CommandOptions& o, std::ostream& out, std::ostream& err) {
    return guarded(err, [&] {
        const ExperimentConfig c = load_config(o);
        if (c.pretrained.empty()) throw ConfigError("config field 'finetune.pretrained': missing");
        if (!fs::is_regular_file(c.pretrained)) {
            throw ConfigError("config field 'finetune.pretrained': file not found: " + c.pretrained.string());
        }
        const DenoiserModel pre = load_checkpoint(c.pretrained);
        if (pre.dim() != c.arch.dim) throw ConfigError("pretrained checkpoint dimension does not match data.kind");
        const NumArray D = few_shot_set(c.data);
        const fs::path dir = output_dir(o, c);
        Manifest m(dir, c);

        TrainConfig tc = c.train;
        if (tc.lr <= 0.0) tc.lr = default_learning_rate(tc.adapter);
        if (tc.iterations <= 0) tc.iterations = default_iterations(D.rows());
        json& f = m.at("finetune");
        f = {{"seed", tc.seed},
             {"bnn", tc.adapter.bayesian},
             {"lambda", tc.lambda},
             {"variant", tc.adapter.variant_name()},
             {"placement", to_string(tc.adapter.placement)},
             {"lr", tc.lr},
             {"iterations", tc.iterations},
             {"few_shot", D.rows()}};

        const FinetuneResult res =
            run_stage(m, "finetune", [&] { return finetune(pre, D, subject_label(c), tc, c.eval, dir); });

        std::vector<MetricsRow> rows;
        for (const auto& e : res.series) {
            rows.push_back(e.row);
            const fs::path p(e.path);
            m.output(p.filename().string(), read_file(p));
        }
        const std::string csv = metrics_csv(rows);
        atomic_write_file(dir / "metrics.csv", csv);
        m.output("metrics.csv", csv);
        f["variational_parameters"] = res.model.variational_tensor_count();
        f["stochastic_fraction"] = res.placement.stochastic_fraction;
        f["wrapped"] = res.placement.wrapped;
        m.stage("finetune", "done");

        std::string verdict = "too few checkpoints for corruption detection";
        if (rows.size() >= 5) {
            const CorruptionReport rep = detect_corruption(rows);
            verdict = rep.detected ? "dip depth " + format_double(rep.dip_depth) : "no corruption detected";
        }
        out << "finetune: " << tc.iterations << " iterations, " << res.series.size() << " checkpoints, final fidelity "
            << format_double(rows.back().fidelity) << ", " << verdict << '\n';
        return static_cast<int>(kExitOk);
    });
}

int cmd_probe(const CommandOptions& o, std::ostream& out, std::ostream& err) {
    return guarded(err, [&] {
        const ExperimentConfig c = load_config(o);
        const std::string kind = o.probe_kind.value_or(c.probe.kind);
        const auto kinds = probe_kinds();
        if (std::find(kinds.begin(), kinds.end(), kind) == kinds.end()) {
            throw ConfigError("unknown probe kind '" + kind + "' (expected zero, delta or scale)");
        }
        if (!o.checkpoint) throw ConfigError("--checkpoint is required");
        if (!fs::is_regular_file(*o.checkpoint)) throw ConfigError("checkpoint not found: " + o.checkpoint->string());
        const DenoiserModel model = load_checkpoint(*o.checkpoint);
        if (model.dim() != c.arch.dim) throw ConfigError("checkpoint dimension does not match data.kind");
        const NoiseSchedule& s = model.schedule();
        const NumArray D = few_shot_set(c.data);
        const NumArray anchor = D.row_slice(0);
        const int label = subject_label(c);
        const fs::path dir = o.out ? *o.out : o.checkpoint->parent_path();
        fs::create_directories(dir);

        std::vector<ProbeRecord> records;
        std::ostringstream summary;
        if (kind == "zero") {
            GaussianWorldModel wm;
            for (std::size_t r = 0; r < D.rows(); ++r) wm.anchors.push_back(D.row_slice(r));
            wm.sigma1 = estimate_sigma1(model, s, anchor, c.eval.sigma1_t, c.eval.sigma1_samples, label,
                                        derive_seed(c.metric_seed, {0x5161}));
            wm.schedule = s;
            const ZeroProbeResult r =
                zero_probe(model, s, std::min(c.probe.t_start, s.T), label, D, c.metric_seed, wm, c.probe.steps);
            records.push_back(r.record);
            summary << "zero probe: dist_zero " << format_double(r.dist_zero) << ", dist_anchor "
                    << format_double(r.dist_anchor) << ", fidelity " << format_double(r.fidelity);
        } else if (kind == "delta") {
            DeltaProbeConfig dc;
            dc.t = c.probe.t;
            dc.region_fraction = c.probe.region_fraction;
            dc.magnitude = c.probe.magnitude;
            dc.side = c.data.raster_side();
            dc.draws = c.probe.draws;
            dc.seed = c.metric_seed;
            const DeltaProbeResult r = delta_injection_probe(model, s, anchor, label, dc);
            records.push_back(r.record);
            summary << "delta probe: ratio " << format_double(r.ratio) << ", analytic k2 "
                    << format_double(r.analytic_k2);
        } else {
            const double sigma1 = estimate_sigma1(model, s, anchor, c.probe.t, c.eval.sigma1_samples, label,
                                                  derive_seed(c.metric_seed, {0x5161}));
            const auto entries = scale_probe(model, s, c.probe.ks, c.probe.t, anchor, label, sigma1, &records);
            double worst = 1.0;
            for (const auto& e : entries) worst = std::min(worst, e.cosine);
            summary << "scale probe: " << entries.size() << " records, min cosine " << format_double(worst);
        }
        std::string lines;
        for (const auto& r : records) lines += to_json(r).dump() + "\n";
        atomic_write_file(dir / ("probe_" + kind + ".jsonl"), lines);
        out << summary.str() << '\n';
        return static_cast<int>(kExitOk);
    });
}

SeriesSummary summarize_series(const std::vector<MetricsRow>& rows, std::string source, std::string arm,
                               std::uint64_t seed) {
    SeriesSummary s;
    s.source = std::move(source);
    s.arm = std::move(arm);
    s.seed = seed;
    const CorruptionReport rep = detect_corruption(rows);
    std::vector<double> fid;
    for (const auto& r : rows) fid.push_back(r.fidelity);
    const std::vector<double> sm = moving_average3(fid);
    s.detected = rep.detected;
    s.dip_depth = rep.detected ? rep.dip_depth : 0.0;
    if (rep.detected) {
        s.trough_fidelity = sm[rep.trough];
        s.trough_iteration = rep.trough_iteration;
    } else {
        const auto it = std::min_element(sm.begin(), sm.end());
        s.trough_fidelity = *it;
        s.trough_iteration = rows[static_cast<std::size_t>(it - sm.begin())].iteration;
    }
    s.final_quality = rows.back().quality;
    return s;
}

std::vector<ArmSummary> summarize_arms(const std::vector<SeriesSummary>& series) {
    std::map<std::string, std::vector<const SeriesSummary*>> by_arm;
    for (const auto& s : series) by_arm[s.arm].push_back(&s);
    std::vector<ArmSummary> out;
    for (const auto& [arm, list] : by_arm) {
        ArmSummary a;
        a.arm = arm;
        a.runs = list.size();
        std::vector<double> dip, trough, q;
        for (const auto* s : list) {
            a.detected += s->detected ? 1 : 0;
            dip.push_back(s->dip_depth);
            trough.push_back(s->trough_fidelity);
            q.push_back(s->final_quality);
        }
        a.dip_mean = mean_of(dip);
        a.dip_std = std_of(dip);
        a.trough_mean = mean_of(trough);
        a.trough_std = std_of(trough);
        a.quality_mean = mean_of(q);
        a.quality_std = std_of(q);
        out.push_back(a);
    }
    return out;
}

int cmd_report(const CommandOptions& o, std::ostream& out, std::ostream& err) {
    return guarded(err, [&] {
        if (o.csvs.empty()) throw ConfigError("report needs at least one metrics CSV");
        const fs::path dir = o.out ? *o.out : fs::path(".");
        std::vector<SeriesSummary> series;
        std::ostringstream longf;
        longf << "arm,seed,source,iteration,metric,value\n";
        for (std::size_t i = 0; i < o.csvs.size(); ++i) {
            const fs::path& p = o.csvs[i];
            if (!fs::is_regular_file(p)) throw ConfigError("metrics CSV not found: " + p.string());
            std::vector<MetricsRow> rows;
            try {
                rows = parse_metrics_csv(read_file(p));
            } catch (const ConfigError& e) {
                throw ConfigError(p.string() + ": " + e.what());
            }
            if (rows.size() < 5) throw ConfigError(p.string() + ": at least 5 metric rows are needed");
            std::string arm = "all";
            std::uint64_t seed = i;
            const fs::path mpath = p.parent_path() / "manifest.json";
            if (fs::is_regular_file(mpath)) {
                const json mj = json::parse(read_file(mpath), nullptr, false);
                if (mj.is_object() && mj.contains("finetune") && mj["finetune"].is_object()) {
                    const json& f = mj["finetune"];
                    if (f.contains("bnn") && f["bnn"].is_boolean()) arm = f["bnn"].get<bool>() ? "bnn-on" : "bnn-off";
                    if (f.contains("seed") && f["seed"].is_number_unsigned()) seed = f["seed"].get<std::uint64_t>();
                }
            }
            // Sources are stored relative to the report directory so reruns elsewhere match.
            const std::string source = fs::absolute(p).lexically_relative(fs::absolute(dir)).generic_string();
            series.push_back(summarize_series(rows, source, arm, seed));
            const SeriesSummary& s = series.back();
            out << p.string() << " [" << arm << ", seed " << seed << "]: "
                << (s.detected ? "corruption detected, dip depth " + format_double(s.dip_depth) + " at iteration " +
                                     std::to_string(s.trough_iteration)
                               : std::string("no corruption detected"))
                << '\n';
            for (const auto& r : rows) {
                const std::pair<const char*, double> metrics[] = {{"fidelity", r.fidelity}, {"diversity", r.diversity},
                                                                  {"quality", r.quality},   {"sigma1", r.sigma1},
                                                                  {"l_dm", r.l_dm},         {"l_r", r.l_r}};
                for (const auto& [name, v] : metrics) {
                    longf << arm << ',' << seed << ',' << source << ',' << r.iteration << ',' << name << ','
                          << format_double(v) << '\n';
                }
            }
        }

        fs::create_directories(dir);
        std::ostringstream table;
        table << "arm,runs,detected,dip_depth_mean,dip_depth_std,trough_fidelity_mean,trough_fidelity_std,"
                 "final_quality_mean,final_quality_std\n";
        out << "arm        runs  detected  dip depth          trough fidelity    final quality\n";
        for (const auto& a : summarize_arms(series)) {
            table << a.arm << ',' << a.runs << ',' << a.detected << ',' << format_double(a.dip_mean) << ','
                  << format_double(a.dip_std) << ',' << format_double(a.trough_mean) << ','
                  << format_double(a.trough_std) << ',' << format_double(a.quality_mean) << ','
                  << format_double(a.quality_std) << '\n';
            char line[200];
            std::snprintf(line, sizeof line, "%-10s %4zu  %8zu  %.4f +- %.4f  %.4f +- %.4f  %.4f +- %.4f\n",
                          a.arm.c_str(), a.runs, a.detected, a.dip_mean, a.dip_std, a.trough_mean, a.trough_std,
                          a.quality_mean, a.quality_std);
            out << line;
        }
        atomic_write_file(dir / "report_long.csv", longf.str());
        atomic_write_file(dir / "report_table.csv", table.str());
        return static_cast<int>(kExitOk);
    });
}

}  // namespace bdlab
