// SPDX-License-Identifier: Apache-2.0
//
// Command-line front end. Talks to the library exclusively through the
// extern-C interface in roam.h.

#include <cstdio>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "roam.h"

namespace {

int status_to_exit(roam_status st) {
    switch (st) {
        case ROAM_OK: return 0;
        case ROAM_ERR_CONFIG: return 1;
        case ROAM_ERR_DATA: return 2;
        case ROAM_ERR_TRAINING: return 3;
        default: return 1;
    }
}

struct CommonOpts {
    std::string config;
    std::string out;
    long long seed = -1;
    bool json_output = false;
};

std::string overrides_for(const CommonOpts& opts) {
    if (opts.seed < 0) return "";
    return "{\"seed\": " + std::to_string(opts.seed) + "}";
}

int run_stage_command(const std::string& stage, const CommonOpts& opts) {
    char* report = nullptr;
    std::string overrides = overrides_for(opts);
    roam_status st = roam_stage_run(stage.c_str(), opts.config.empty() ? nullptr : opts.config.c_str(),
                                    opts.out.c_str(), overrides.empty() ? nullptr : overrides.c_str(),
                                    &report);
    if (st != ROAM_OK) {
        std::cerr << "error: " << roam_last_error() << "\n";
        return status_to_exit(st);
    }
    if (report) {
        if (opts.json_output)
            std::cout << report << "\n";
        else
            std::cout << stage << " done; report written under " << opts.out << "\n" << report << "\n";
        roam_free(report);
    }
    return 0;
}

int run_serve(const CommonOpts& opts) {
    roam_engine* engine = nullptr;
    roam_status st = roam_engine_open_config(opts.config.empty() ? nullptr : opts.config.c_str(),
                                             &engine);
    if (st != ROAM_OK) {
        std::cerr << "error: " << roam_last_error() << "\n";
        return status_to_exit(st);
    }
    std::cerr << "serving on stdin/stdout; one JSON request per line, Ctrl-D to stop\n";
    std::string line;
    while (std::getline(std::cin, line)) {
        if (line.empty()) continue;
        char* response = nullptr;
        st = roam_engine_predict(engine, line.c_str(), &response);
        if (st != ROAM_OK) {
            std::cout << "{\"error\":\"" << roam_last_error() << "\"}" << std::endl;
            continue;
        }
        std::cout << response << std::endl;
        roam_free(response);
    }
    roam_engine_close(engine);
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"roam: next-POI prediction pipeline"};
    app.require_subcommand(1);

    const std::vector<std::string> stages = {"synth",   "ingest", "build-sids", "build-corpus",
                                             "pretrain", "sft",    "dpo",        "eval",
                                             "ablate",  "bench-latency", "gradcheck"};

    std::map<std::string, CommonOpts> opts;
    for (const auto& stage : stages) {
        auto* sub = app.add_subcommand(stage, "Run the " + stage + " stage");
        CommonOpts& o = opts[stage];
        sub->add_option("--config", o.config, "Run configuration JSON file");
        sub->add_option("--out", o.out, "Output artifact directory")->required();
        sub->add_option("--seed", o.seed, "Override the config seed");
        sub->add_flag("--json", o.json_output, "Print the report as JSON only");
    }
    auto* serve = app.add_subcommand("serve", "Serve predictions over stdin/stdout");
    CommonOpts& serve_opts = opts["serve"];
    serve->add_option("--config", serve_opts.config, "Run configuration JSON file");
    serve->add_flag("--json", serve_opts.json_output, "(accepted for symmetry; output is JSON)");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        int code = app.exit(e);
        return code == 0 ? 0 : 1;
    }

    for (const auto& stage : stages) {
        if (app.get_subcommand(stage)->parsed()) return run_stage_command(stage, opts[stage]);
    }
    if (serve->parsed()) return run_serve(opts["serve"]);
    return 1;
}
