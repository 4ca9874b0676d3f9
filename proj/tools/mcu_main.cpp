#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "mcu/cli.hpp"

int main(int argc, char** argv) {
    CLI::App app{"MatrixConv blind unmixing toolkit"};
    app.require_subcommand(1);

    std::string config_path, out_dir = "out", data_dir, mode = "nba", axis = "snr";
    std::string est_dir, gt_dir, report_path = "report.csv";
    std::vector<double> values;
    std::vector<std::uint64_t> seeds;

    auto* synth = app.add_subcommand("synth", "Generate a synthetic cube with ground truth");
    synth->add_option("--config", config_path, "experiment config file")->required();
    synth->add_option("--out", out_dir, "output directory");

    auto* run = app.add_subcommand("run", "Run an unmixing pipeline on a data directory");
    run->add_option("--config", config_path, "experiment config file")->required();
    run->add_option("--mode", mode, "nba | nbared | admm-ref | baseline")
        ->check(CLI::IsMember({"nba", "nbared", "admm-ref", "baseline"}));
    run->add_option("--data", data_dir, "directory holding Y.hcub (+ optional ground truth)")
        ->required();
    run->add_option("--out", out_dir, "output directory");

    auto* sweep = app.add_subcommand("sweep", "Run a parameter sweep with aggregation");
    sweep->add_option("--config", config_path, "experiment config file")->required();
    sweep->add_option("--mode", mode, "pipeline to sweep")
        ->check(CLI::IsMember({"nba", "nbared", "admm-ref", "baseline"}));
    sweep->add_option("--axis", axis, "snr | alpha")
        ->check(CLI::IsMember({"snr", "alpha"}));
    sweep->add_option("--values", values, "axis values")->required()->delimiter(',');
    sweep->add_option("--seeds", seeds, "seeds (default: config seed)")->delimiter(',');
    sweep->add_option("--out", out_dir, "output directory");

    auto* eval = app.add_subcommand("eval", "Align and score an estimate against ground truth");
    eval->add_option("--est", est_dir, "directory with E_hat.hmat / A_hat.hmat")->required();
    eval->add_option("--gt", gt_dir, "directory with E_gt.hmat / A_gt.hmat")->required();
    eval->add_option("--out", report_path, "report CSV path");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 2;
    }

    try {
        if (*synth) {
            auto cfg = mcu::ExperimentConfig::parse_file(config_path);
            mcu::cmd_synth(cfg, out_dir);
            std::cout << "wrote " << out_dir << "\n";
        } else if (*run) {
            auto cfg = mcu::ExperimentConfig::parse_file(config_path);
            auto out = mcu::cmd_run(cfg, mode, data_dir, out_dir);
            if (out.report)
                std::cout << mode << ": rmse=" << mcu::fmt_g17(out.report->rmse_val)
                          << " aad=" << mcu::fmt_g17(out.report->aad_deg)
                          << " sad=" << mcu::fmt_g17(out.report->sad_res.mean_deg) << "\n";
            else
                std::cout << mode << ": done (no ground truth, metrics skipped)\n";
        } else if (*sweep) {
            auto cfg = mcu::ExperimentConfig::parse_file(config_path);
            if (seeds.empty()) seeds.push_back(cfg.seed);
            auto cells = mcu::cmd_sweep(cfg, mode, axis, values, seeds, out_dir);
            std::size_t ok = 0;
            for (const auto& c : cells) ok += c.ok ? 1 : 0;
            std::cout << "sweep: " << ok << "/" << cells.size() << " cells ok, results in "
                      << out_dir << "\n";
        } else if (*eval) {
            auto rep = mcu::cmd_eval(est_dir, gt_dir, report_path);
            std::cout << "rmse=" << mcu::fmt_g17(rep.rmse_val)
                      << " aad=" << mcu::fmt_g17(rep.aad_deg)
                      << " sad=" << mcu::fmt_g17(rep.sad_res.mean_deg) << "\n";
        }
        return 0;
    } catch (const mcu::ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
}
