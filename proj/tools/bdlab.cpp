#include <iostream>

#include "CLI11.hpp"

#include "bdlab/pipeline.hpp"

int main(int argc, char** argv) {
    CLI::App app{"bdlab: few-shot diffusion fine-tuning experiments"};
    app.require_subcommand(1);
    bdlab::CommandOptions o;
    std::string bnn;
    double lambda = 0.0;
    std::uint64_t seed = 0;
    std::string out, checkpoint, kind;
    std::vector<std::string> csvs;

    auto add_common = [&](CLI::App* sub) {
        sub->add_option("--config", o.config, "experiment config (JSON)")->required();
        sub->add_option("--out", out, "output directory");
    };
    auto* pre = app.add_subcommand("pretrain", "train the base denoiser");
    add_common(pre);
    pre->add_option("--seed", seed, "override the experiment seed");

    auto* ft = app.add_subcommand("finetune", "few-shot fine-tune a pretrained checkpoint");
    add_common(ft);
    ft->add_option("--bnn", bnn, "on/off: toggle the Bayesian adapter")->check(CLI::IsMember({"on", "off"}));
    ft->add_option("--lambda", lambda, "weight of the KL regularizer");
    ft->add_option("--seed", seed, "override the experiment seed");

    auto* probe = app.add_subcommand("probe", "run a probe on a checkpoint");
    add_common(probe);
    probe->add_option("--checkpoint", checkpoint, "checkpoint file")->required();
    probe->add_option("--kind", kind, "zero, delta or scale");

    auto* report = app.add_subcommand("report", "summarize metrics CSVs");
    report->add_option("--out", out, "output directory");
    report->add_option("csvs", csvs, "metrics CSV files")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : bdlab::kExitConfig;
    }

    if (!out.empty()) o.out = out;
    for (auto* sub : {pre, ft}) {
        if (sub->count("--seed")) o.overrides.seed = seed;
    }
    if (ft->count("--bnn")) o.overrides.bnn = (bnn == "on");
    if (ft->count("--lambda")) o.overrides.lambda = lambda;
    if (!checkpoint.empty()) o.checkpoint = checkpoint;
    if (!kind.empty()) o.probe_kind = kind;
    for (const auto& c : csvs) o.csvs.emplace_back(c);

    if (*pre) return bdlab::cmd_pretrain(o, std::cout, std::cerr);
    if (*ft) return bdlab::cmd_finetune(o, std::cout, std::cerr);
    if (*probe) return bdlab::cmd_probe(o, std::cout, std::cerr);
    return bdlab::cmd_report(o, std::cout, std::cerr);
}
