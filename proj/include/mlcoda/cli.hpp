#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

namespace mlcoda::cli {

/// Process exit codes.
enum ExitCode : int {
    kOk = 0,
    kFailure = 1,
    kUsage = 2,
    kData = 3,
    kSampling = 4,
    kDiagnostics = 5,
};

struct RunConfig {
    std::string subcommand;

    std::string data;
    std::string id;
    std::string outcome;
    std::vector<std::string> parts;
    std::vector<std::string> covariates;
    double total = 0.0;
    std::string sbp;
    std::uint64_t seed = 1;
    std::string out;
    int workers = 1;

    int chains = 4;
    int warmup = 500;
    int iterations = 2500;
    double adapt_delta = 0.8;
    int max_depth = 10;
    std::string parameterization = "noncentered";

    std::string fit_dir;
    std::string level = "both";
    double t_min = 1.0;
    double t_max = 30.0;
    std::string ref = "mean";
    std::string ref_file;
    std::string within_mode = "absolute";

    std::string study;
    bool seed_set = false;
    bool workers_set = false;
};

/// Thrown by `parse` for --help; carries the text to print.
struct HelpRequested {
    std::string text;
};

/// Flags override values from --config. Throws UsageError for unknown,
/// missing, invalid or conflicting flags and HelpRequested for --help.
RunConfig parse(const std::vector<std::string>& args);

/// Canonical JSON of every field, and its 64-bit FNV-1a hash in hex.
std::string config_json(const RunConfig& cfg);
std::string config_hash(const RunConfig& cfg);

/// Run a parsed configuration, writing artifacts under cfg.out.
int execute(const RunConfig& cfg, std::ostream& out, std::ostream& err);

/// parse + execute with errors mapped to exit codes.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace mlcoda::cli
