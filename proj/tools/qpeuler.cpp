#include <CLI11.hpp>
#include <cstdio>
#include <exception>
#include <string>

#include "qpe/errors.hpp"
#include "qpe/flowfield.hpp"

// exit codes: 0 success, 2 usage/config error, 3 numerical stage failure
int main(int argc, char** argv) {
    CLI::App app{"quasi-periodic Euler channel pipeline"};
    app.require_subcommand(1);

    std::string config_path;
    std::string out_dir;
    double eps = -1.0;
    double eta = -1.0;
    int m = 0;
    int kappa0 = 0;
    app.add_option("-c,--config", config_path, "JSON config file");
    app.add_option("-o,--out", out_dir, "output directory");
    app.add_option("--eps", eps, "override eps");
    app.add_option("--eta", eta, "override blend width eta");
    app.add_option("--m", m, "override shear steepness m");
    app.add_option("--kappa0", kappa0, "override number of tangential modes");

    const char* stages[] = {"equilibrium", "spectrum", "secular", "nonlinearity",
                            "diophantine", "measure",  "solve",   "flow",
                            "all"};
    for (const char* s : stages) app.add_subcommand(s)->fallthrough();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? 0 : 2;
    }

    try {
        qpe::flowfield::PipelineConfig cfg;
        if (!config_path.empty()) cfg = qpe::flowfield::load_config(config_path);
        if (!out_dir.empty()) cfg.out_dir = out_dir;
        if (eps >= 0.0) cfg.eps = eps;
        if (eta > 0.0) cfg.eta = eta;
        if (m > 0) cfg.m = m;
        if (kappa0 > 0) {
            cfg.kappa0 = kappa0;
            if (int(cfg.xi.size()) != kappa0) cfg.xi.assign(std::size_t(kappa0), 1.0);
        }
        const std::string stage = app.get_subcommands().front()->get_name();
        qpe::flowfield::run_pipeline(cfg, stage);
        std::printf("stage %s complete, artifacts in %s\n", stage.c_str(),
                    cfg.out_dir.c_str());
        return 0;
    } catch (const qpe::UsageError& e) {
        std::fprintf(stderr, "%s\n", e.what());
        return 2;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "%s\n", e.what());
        return 3;
    }
}
