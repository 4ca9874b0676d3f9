#pragma once

#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "mcu/admm.hpp"
#include "mcu/baselines.hpp"
#include "mcu/config.hpp"
#include "mcu/red.hpp"
#include "mcu/synth.hpp"
#include "mcu/train.hpp"

namespace mcu {

inline bool verbose() {
    static const bool on = [] {
        const char* e = std::getenv("MCU_VERBOSE");
        return e != nullptr && *e != '\0' && std::string(e) != "0";
    }();
    return on;
}

inline void vlog(const std::string& msg) {
    if (verbose()) std::cerr << "[mcu] " << msg << std::endl;
}

// ---------------------------------------------------------------------------
// synth command
// ---------------------------------------------------------------------------

inline double measured_snr_db(const HsiCube& clean, const HsiCube& noisy) {
    double sig = 0.0, noise = 0.0;
    for (std::size_t i = 0; i < clean.data.numel(); ++i) {
        sig += clean.data[i] * clean.data[i];
        double d = noisy.data[i] - clean.data[i];
        noise += d * d;
    }
    if (noise == 0.0) return std::numeric_limits<double>::infinity();
    return 10.0 * std::log10(sig / noise);
}

inline void cmd_synth(const ExperimentConfig& cfg, const std::string& out_dir) {
    namespace fs = std::filesystem;
    SynthConfig scfg = make_synth_config(cfg);
    scfg.validate();
    vlog("synth: generating " + std::to_string(scfg.rows()) + "x" +
         std::to_string(scfg.cols()) + " cube, P=" + std::to_string(scfg.P) +
         ", R=" + std::to_string(scfg.R));
    SynthResult res = synth_generate(scfg);

    fs::create_directories(out_dir);
    write_cube(out_dir + "/Y.hcub", res.Y);
    write_cube(out_dir + "/Y_clean.hcub", res.Y_clean);
    write_matrix(out_dir + "/E_gt.hmat", res.E_gt.E);
    write_matrix(out_dir + "/A_gt.hmat", res.A_gt.A);

    std::ofstream mf(out_dir + "/manifest.txt");
    if (!mf) throw ConfigError("cannot write " + out_dir + "/manifest.txt");
    mf << "seed = " << cfg.seed << "\n";
    mf << "config_hash = " << cfg.hash() << "\n";
    mf << "P = " << scfg.P << "\n";
    mf << "N1 = " << scfg.rows() << "\n";
    mf << "N2 = " << scfg.cols() << "\n";
    mf << "R = " << scfg.R << "\n";
    mf << "snr_db = " << fmt_g17(scfg.snr_db) << "\n";
    mf << "noise_var = " << fmt_g17(res.noise_var) << "\n";
    mf << "measured_snr_db = " << fmt_g17(measured_snr_db(res.Y_clean, res.Y)) << "\n";
    mf.flush();

    std::ofstream cf(out_dir + "/config.ini");
    cf << cfg.serialize();
    vlog("synth: wrote " + out_dir);
}

// ---------------------------------------------------------------------------
// run command
// ---------------------------------------------------------------------------

struct Dataset {
    HsiCube Y;
    std::optional<GroundTruth> gt;
};

inline Dataset load_dataset(const ExperimentConfig& cfg, const std::string& data_dir) {
    namespace fs = std::filesystem;
    Dataset ds;
    if (cfg.data.source == "file" && data_dir.empty()) {
        ds.Y = read_cube(cfg.data.cube_path);
        return ds;
    }
    std::string cube = data_dir + "/Y.hcub";
    if (!fs::exists(cube)) throw ConfigError("no cube at " + cube + "; run synth first");
    ds.Y = read_cube(cube);
    if (fs::exists(data_dir + "/E_gt.hmat") && fs::exists(data_dir + "/A_gt.hmat")) {
        GroundTruth gt;
        gt.E = EndmemberMatrix(read_matrix(data_dir + "/E_gt.hmat"));
        gt.A = AbundanceMatrix(read_matrix(data_dir + "/A_gt.hmat"), ds.Y.N1, ds.Y.N2);
        ds.gt = std::move(gt);
    }
    return ds;
}

/// Guidance is a pure function of the cube, so it is cached beside the data.
inline Guidance cached_guidance(const std::string& data_dir, const HsiCube& Y,
                                std::size_t R) {
    namespace fs = std::filesystem;
    std::string pe = data_dir + "/guidance_E.hmat", pa = data_dir + "/guidance_A.hmat";
    if (!data_dir.empty() && fs::exists(pe) && fs::exists(pa)) {
        vlog("guidance: cache hit");
        Guidance g;
        g.endmembers = EndmemberMatrix(read_matrix(pe));
        g.abundances = AbundanceMatrix(read_matrix(pa), Y.N1, Y.N2);
        return g;
    }
    vlog("guidance: computing (R=" + std::to_string(R) + ")");
    Guidance g = make_guidance(Y, R);
    if (!data_dir.empty()) {
        write_matrix(pe, g.endmembers.E);
        write_matrix(pa, g.abundances.A);
    }
    return g;
}

inline void write_metric_csv(const std::string& path,
                             const std::vector<std::pair<std::string, MetricReport>>& rows,
                             std::uint64_t seed, double snr_db, std::size_t R) {
    std::vector<std::string> header = {"method", "seed", "snr_db", "rmse", "aad_deg"};
    for (std::size_t r = 0; r < R; ++r) header.push_back("sad_" + std::to_string(r + 1));
    header.push_back("sad_mean");
    CsvWriter csv(path, header);
    for (const auto& [method, rep] : rows) {
        std::vector<std::string> cells = {method, std::to_string(seed), fmt_g17(snr_db),
                                          fmt_g17(rep.rmse_val), fmt_g17(rep.aad_deg)};
        for (std::size_t r = 0; r < R; ++r) cells.push_back(fmt_g17(rep.sad_res.per_endmember[r]));
        cells.push_back(fmt_g17(rep.sad_res.mean_deg));
        csv.row(cells);
    }
    csv.flush();
}

inline void write_loss_trace(const std::string& path, const std::vector<EpochRecord>& trace) {
    CsvWriter csv(path, {"epoch", "L_E", "L_A", "L_BU", "total", "rmse", "aad_deg", "sad_deg"});
    for (const auto& r : trace) {
        std::vector<std::string> cells = {std::to_string(r.epoch), fmt_g17(r.L_E),
                                          fmt_g17(r.L_A), fmt_g17(r.L_BU), fmt_g17(r.total)};
        if (r.has_metrics) {
            cells.push_back(fmt_g17(r.rmse));
            cells.push_back(fmt_g17(r.aad));
            cells.push_back(fmt_g17(r.sad));
        } else {
            cells.insert(cells.end(), {"", "", ""});
        }
        csv.row(cells);
    }
    csv.flush();
}

inline void write_outer_trace(const std::string& path, const std::vector<OuterRecord>& trace) {
    CsvWriter csv(path, {"t", "gap_E", "gap_A", "red_E", "red_A"});
    for (const auto& r : trace)
        csv.row({std::to_string(r.t), fmt_g17(r.gap_E), fmt_g17(r.gap_A), fmt_g17(r.red_E),
                 fmt_g17(r.red_A)});
    csv.flush();
}

struct RunOutcome {
    NbaOutputs outputs;
    std::optional<MetricReport> report;
    std::optional<MetricReport> guidance_report;
};

inline RunOutcome cmd_run(const ExperimentConfig& cfg, const std::string& mode,
                          const std::string& data_dir, const std::string& out_dir) {
    namespace fs = std::filesystem;
    if (mode != "nba" && mode != "nbared" && mode != "admm-ref" && mode != "baseline")
        throw ConfigError("run: unknown mode " + mode);
    cfg.data.synth.validate();

    Dataset ds = load_dataset(cfg, data_dir);
    const HsiCube& Y = ds.Y;
    std::size_t R = cfg.data.synth.R;
    Guidance guid = cached_guidance(data_dir, Y, R);
    const GroundTruth* gt = ds.gt ? &*ds.gt : nullptr;
    fs::create_directories(out_dir);
    vlog("run: mode=" + mode + ", seed=" + std::to_string(cfg.seed));

    LossWeights w;
    w.a1 = cfg.loss.a1;
    w.a2 = cfg.loss.a2;
    w.a3 = cfg.loss.a3;
    w.a4 = cfg.loss.a4;
    w.a5 = cfg.loss.a5;
    w.validate();

    NetConfig nc;
    nc.J_E = cfg.network.J_E;
    nc.J_A = cfg.network.J_A;
    nc.m_E = cfg.network.m_E;
    nc.m_A = cfg.network.m_A;
    nc.k_E = cfg.network.k_E;
    nc.k_A = cfg.network.k_A;

    RunOutcome out;
    if (mode == "baseline") {
        out.outputs.E_hat = guid.endmembers;
        out.outputs.A_hat = guid.abundances;
        out.outputs.Y_hat = lmm_forward(guid.endmembers, guid.abundances, Y.N1, Y.N2);
    } else if (mode == "admm-ref") {
        Rng rng(cfg.seed, "init");
        std::size_t m = cfg.admm.m, k = cfg.admm.k;
        ConvDictionary1D De(rng.normal_array({m, k}, 0.0, 1.0 / std::sqrt((double)(m * k))));
        ConvDictionary2D Da(
            rng.normal_array({m, k, k}, 0.0, 1.0 / std::sqrt((double)(m * k * k))));
        auto ee = admm_ee(Y, guid.abundances, De, cfg.admm.lambda, cfg.admm.rho, cfg.admm.L,
                          cfg.admm.iterations);
        vlog("admm-ref: EE done, L=" + fmt_g17(ee.L));
        auto ae = admm_ae(Y, ee.E_hat, Da, cfg.admm.lambda, cfg.admm.rho, cfg.admm.L,
                          cfg.admm.iterations);
        vlog("admm-ref: AE done, L=" + fmt_g17(ae.L));
        out.outputs.E_hat = ee.E_hat;
        out.outputs.A_hat = ae.A_hat;
        out.outputs.A_hat.N1 = Y.N1;
        out.outputs.A_hat.N2 = Y.N2;
        out.outputs.Y_hat = lmm_forward(out.outputs.E_hat, out.outputs.A_hat, Y.N1, Y.N2);
        CsvWriter csv(out_dir + "/admm_trace.csv", {"iteration", "residual_E", "residual_A"});
        for (std::size_t i = 0; i < cfg.admm.iterations; ++i)
            csv.row({std::to_string(i + 1), fmt_g17(ee.primal_residual[i]),
                     fmt_g17(ae.primal_residual[i])});
        csv.flush();
    } else {
        NbaModel model(R, Y.P, Y.N1, Y.N2, nc, cfg.seed);
        AdamState adam;
        adam.lr = cfg.training.lr;
        adam.beta1 = cfg.training.beta1;
        adam.beta2 = cfg.training.beta2;
        adam.init(model.store);

        std::vector<EpochRecord> trace;
        if (mode == "nba") {
            auto tr = train_inner(Y, guid, model, adam, w, cfg.training.epochs, nullptr, gt);
            trace = std::move(tr.trace);
            out.outputs = nba_forward(Y, model.uedip, model.uadip);
        } else {
            RedConfig rc;
            rc.enabled = cfg.red.enabled;
            rc.mu_E = cfg.red.mu_E;
            rc.mu_A = cfg.red.mu_A;
            rc.T = cfg.red.T;
            rc.n_inner = cfg.red.n_inner;
            rc.tol = cfg.red.tol;
            rc.nlm = make_nlm_config(cfg.red);
            auto nr = nbared_run(Y, guid, model, adam, w, rc, gt);
            trace = std::move(nr.inner_trace);
            out.outputs = nr.outputs;
            write_outer_trace(out_dir + "/outer_trace.csv", nr.outer_trace);
            vlog("nbared: " + std::to_string(nr.outer_iters) + " outer iterations, " +
                 std::string(nr.converged ? "converged" : "budget reached"));
        }
        write_loss_trace(out_dir + "/loss_trace.csv", trace);
        write_checkpoint(out_dir + "/checkpoint.mckp", model.store.snapshot());
        std::ofstream pc(out_dir + "/param_count.txt");
        pc << model.store.scalar_count() << "\n";
    }

    write_matrix(out_dir + "/E_hat.hmat", out.outputs.E_hat.E);
    write_matrix(out_dir + "/A_hat.hmat", out.outputs.A_hat.A);
    write_cube(out_dir + "/Y_hat.hcub", out.outputs.Y_hat);

    if (gt) {
        out.report = evaluate_aligned(gt->E, gt->A, out.outputs.E_hat, out.outputs.A_hat);
        std::vector<std::pair<std::string, MetricReport>> rows{{mode, *out.report}};
        if (mode != "baseline") {
            out.guidance_report =
                evaluate_aligned(gt->E, gt->A, guid.endmembers, guid.abundances);
            rows.emplace_back("guidance", *out.guidance_report);
        }
        write_metric_csv(out_dir + "/metrics.csv", rows, cfg.seed, cfg.data.synth.snr_db, R);
        vlog("run: rmse=" + fmt_g17(out.report->rmse_val) +
             ", sad_mean=" + fmt_g17(out.report->sad_res.mean_deg));
    }
    return out;
}

// ---------------------------------------------------------------------------
// sweep command
// ---------------------------------------------------------------------------

struct SweepCell {
    std::string label;
    std::uint64_t seed = 0;
    bool ok = false;
    std::string error;
    MetricReport report;
};

namespace detail {

inline double mean_of(const std::vector<double>& v) {
    double s = 0.0;
    for (double x : v) s += x;
    return v.empty() ? 0.0 : s / (double)v.size();
}

inline double std_of(const std::vector<double>& v) {
    if (v.size() < 2) return 0.0;
    double m = mean_of(v);
    double s = 0.0;
    for (double x : v) s += (x - m) * (x - m);
    return std::sqrt(s / (double)(v.size() - 1));
}

} // namespace detail

/// Runs cmd_run once per (value, seed) cell. axis=snr varies the noise level;
/// axis=alpha varies (a1, a2) over the full values x values grid. Failed cells
/// are recorded and the sweep continues.
inline std::vector<SweepCell> cmd_sweep(const ExperimentConfig& base, const std::string& mode,
                                        const std::string& axis,
                                        const std::vector<double>& values,
                                        const std::vector<std::uint64_t>& seeds,
                                        const std::string& out_dir) {
    namespace fs = std::filesystem;
    if (values.empty()) throw ConfigError("sweep: values must be nonempty");
    if (seeds.empty()) throw ConfigError("sweep: seeds must be nonempty");
    if (axis != "snr" && axis != "alpha") throw ConfigError("sweep: unknown axis " + axis);
    fs::create_directories(out_dir);

    struct CellCfg {
        std::string label;
        ExperimentConfig cfg;
    };
    std::vector<CellCfg> cells;
    if (axis == "snr") {
        for (double v : values) {
            ExperimentConfig c = base;
            c.data.synth.snr_db = v;
            cells.push_back({"snr=" + fmt_g17(v), c});
        }
    } else {
        for (double v1 : values)
            for (double v2 : values) {
                ExperimentConfig c = base;
                c.loss.a1 = v1;
                c.loss.a2 = v2;
                cells.push_back({"a1=" + fmt_g17(v1) + ",a2=" + fmt_g17(v2), c});
            }
    }

    std::vector<SweepCell> results;
    std::size_t idx = 0;
    for (const auto& cell : cells) {
        for (std::uint64_t seed : seeds) {
            SweepCell r;
            r.label = cell.label;
            r.seed = seed;
            std::string cell_dir = out_dir + "/cell_" + std::to_string(idx++);
            try {
                ExperimentConfig c = cell.cfg;
                c.seed = seed;
                cmd_synth(c, cell_dir + "/data");
                auto run = cmd_run(c, mode, cell_dir + "/data", cell_dir + "/run");
                if (!run.report) throw NumericError("sweep cell has no ground truth");
                r.report = *run.report;
                r.ok = true;
            } catch (const std::exception& e) {
                r.error = e.what();
                vlog("sweep: cell " + r.label + " seed " + std::to_string(seed) +
                     " failed: " + r.error);
            }
            results.push_back(std::move(r));
        }
    }

    {
        CsvWriter csv(out_dir + "/sweep.csv",
                      {"cell", "seed", "status", "rmse", "aad_deg", "sad_mean"});
        for (const auto& r : results) {
            if (r.ok)
                csv.row({r.label, std::to_string(r.seed), "ok", fmt_g17(r.report.rmse_val),
                         fmt_g17(r.report.aad_deg), fmt_g17(r.report.sad_res.mean_deg)});
            else
                csv.row({r.label, std::to_string(r.seed), "error: " + r.error, "", "", ""});
        }
        csv.flush();
    }
    {
        CsvWriter csv(out_dir + "/sweep_summary.csv",
                      {"cell", "n_ok", "rmse_mean", "rmse_std", "aad_mean", "aad_std",
                       "sad_mean", "sad_std"});
        for (const auto& cell : cells) {
            std::vector<double> rm, ad, sd;
            for (const auto& r : results)
                if (r.ok && r.label == cell.label) {
                    rm.push_back(r.report.rmse_val);
                    ad.push_back(r.report.aad_deg);
                    sd.push_back(r.report.sad_res.mean_deg);
                }
            csv.row({cell.label, std::to_string(rm.size()), fmt_g17(detail::mean_of(rm)),
                     fmt_g17(detail::std_of(rm)), fmt_g17(detail::mean_of(ad)),
                     fmt_g17(detail::std_of(ad)), fmt_g17(detail::mean_of(sd)),
                     fmt_g17(detail::std_of(sd))});
        }
        csv.flush();
    }
    return results;
}

// ---------------------------------------------------------------------------
// eval command
// ---------------------------------------------------------------------------

inline MetricReport cmd_eval(const std::string& est_dir, const std::string& gt_dir,
                             const std::string& out_csv) {
    namespace fs = std::filesystem;
    auto pick = [](const std::string& dir, const char* hat, const char* gt) {
        if (fs::exists(dir + "/" + hat)) return dir + "/" + hat;
        if (fs::exists(dir + "/" + gt)) return dir + "/" + gt;
        throw ConfigError("eval: neither " + dir + "/" + hat + " nor " + dir + "/" + gt);
    };
    EndmemberMatrix E_hat(read_matrix(pick(est_dir, "E_hat.hmat", "E_gt.hmat")));
    AbundanceMatrix A_hat(read_matrix(pick(est_dir, "A_hat.hmat", "A_gt.hmat")));
    EndmemberMatrix E_gt(read_matrix(gt_dir + "/E_gt.hmat"));
    AbundanceMatrix A_gt(read_matrix(gt_dir + "/A_gt.hmat"));

    MetricReport rep = evaluate_aligned(E_gt, A_gt, E_hat, A_hat);
    if (!out_csv.empty()) {
        std::vector<std::pair<std::string, MetricReport>> rows{{"eval", rep}};
        write_metric_csv(out_csv, rows, 0, std::numeric_limits<double>::quiet_NaN(),
                         E_gt.count());
    }
    return rep;
}

} // namespace mcu
